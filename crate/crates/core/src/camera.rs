//! Calibrated pinhole projection, reprojection residual, and the analytic
//! left-trivialized 2x6 residual Jacobian.
//!
//! Coordinates are normalized (intrinsics-free); pixel intrinsics can be
//! absorbed into the noise covariance. Points must satisfy a strict positive
//! depth floor: the projection formula is defined for any nonzero depth, but
//! negative depth has no physical meaning for this camera model.

use nalgebra::{Matrix2, SMatrix, Vector2, Vector3};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{GoiError, Result};
use crate::lie::{act_inverse, hat, Pose, Twist};

/// Minimum admissible camera-frame depth.
pub const DEPTH_MIN: f64 = 1e-6;

pub type Jacobian = SMatrix<f64, 2, 6>;

/// World point observed by the camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Landmark {
    pub position: Vector3<f64>,
}

impl Landmark {
    pub fn new(position: Vector3<f64>) -> Result<Self> {
        if !position.iter().all(|c| c.is_finite()) {
            return Err(GoiError::InvalidConfig(
                "landmark has non-finite components".into(),
            ));
        }
        Ok(Self { position })
    }
}

/// Image measurement in normalized coordinates, tied to a landmark index.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub z: Vector2<f64>,
    pub landmark_id: usize,
}

impl Observation {
    pub fn new(z: Vector2<f64>, landmark_id: usize) -> Result<Self> {
        if !z.iter().all(|c| c.is_finite()) {
            return Err(GoiError::InvalidConfig(
                "observation has non-finite components".into(),
            ));
        }
        Ok(Self { z, landmark_id })
    }
}

/// Measurement noise: covariance `sigma` and its inverse weight `w`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    sigma: Matrix2<f64>,
    w: Matrix2<f64>,
    chol_l: Matrix2<f64>,
}

impl NoiseModel {
    /// Validates symmetry and positive-definiteness, then inverts.
    pub fn new(sigma: Matrix2<f64>) -> Result<Self> {
        if (sigma - sigma.transpose()).norm() > 1e-12 * sigma.norm().max(1.0) {
            return Err(GoiError::NotSpd {
                context: "noise covariance",
            });
        }
        let chol = nalgebra::Cholesky::new(sigma).ok_or(GoiError::NotSpd {
            context: "noise covariance",
        })?;
        let w = chol.inverse();
        let residual = (w * sigma - Matrix2::identity()).norm();
        if residual > 1e-10 {
            return Err(GoiError::InvalidConfig(format!(
                "weight inversion residual {residual} exceeds 1e-10"
            )));
        }
        Ok(Self {
            sigma,
            w,
            chol_l: chol.l(),
        })
    }

    /// Isotropic model with standard deviation `sd` per axis.
    pub fn isotropic(sd: f64) -> Result<Self> {
        if !sd.is_finite() || sd <= 0.0 {
            return Err(GoiError::InvalidConfig(format!(
                "noise standard deviation must be positive and finite, got {sd}"
            )));
        }
        Self::new(Matrix2::identity() * sd * sd)
    }

    /// Unit-covariance model (used for unweighted least squares).
    pub fn unit() -> Self {
        Self::new(Matrix2::identity()).expect("identity is SPD")
    }

    pub fn sigma(&self) -> &Matrix2<f64> {
        &self.sigma
    }

    pub fn weight(&self) -> &Matrix2<f64> {
        &self.w
    }

    /// One draw of the measurement noise.
    pub fn sample(&self, rng: &mut impl Rng) -> Vector2<f64> {
        let n1: f64 = StandardNormal.sample(rng);
        let n2: f64 = StandardNormal.sample(rng);
        self.chol_l * Vector2::new(n1, n2)
    }
}

/// Perspective projection `(x1/x3, x2/x3)`.
pub fn project(x: &Vector3<f64>) -> Result<Vector2<f64>> {
    if x.z <= DEPTH_MIN {
        return Err(GoiError::DepthDomain {
            depth: x.z,
            min: DEPTH_MIN,
        });
    }
    Ok(Vector2::new(x.x / x.z, x.y / x.z))
}

/// Differential of [`project`] at `x`.
pub fn dproject(x: &Vector3<f64>) -> Result<SMatrix<f64, 2, 3>> {
    if x.z <= DEPTH_MIN {
        return Err(GoiError::DepthDomain {
            depth: x.z,
            min: DEPTH_MIN,
        });
    }
    let inv_z = 1.0 / x.z;
    let inv_z2 = inv_z * inv_z;
    Ok(SMatrix::<f64, 2, 3>::new(
        inv_z,
        0.0,
        -x.x * inv_z2,
        0.0,
        inv_z,
        -x.y * inv_z2,
    ))
}

/// Reprojection residual `z - pi(g^{-1} X)`.
pub fn residual(z: &Observation, g: &Pose, x: &Landmark) -> Result<Vector2<f64>> {
    let y = act_inverse(g, &x.position);
    Ok(z.z - project(&y)?)
}

/// Analytic Jacobian of the residual with respect to a left perturbation
/// `xi` of the pose, evaluated at `xi = 0`. Block layout `[J_t  J_r]`
/// matching the twist ordering; independent of the measurement.
///
/// Derivation: with `y(xi) = g^{-1} exp(-xi) X`, first order gives
/// `y = y0 - R^T (nu + omega x X)`, hence
/// `J = dproject(y0) * [R^T | -R^T hat(X)]`.
pub fn jacobian(g: &Pose, x: &Landmark) -> Result<Jacobian> {
    let y0 = act_inverse(g, &x.position);
    let dp = dproject(&y0)?;
    let rt = g.rotation().transpose();
    let jt = dp * rt;
    let jr = dp * (-(rt * hat(&x.position)));
    let mut j = Jacobian::zeros();
    j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jt);
    j.fixed_view_mut::<2, 3>(0, 3).copy_from(&jr);
    Ok(j)
}

/// Synthesize a measurement of `x` from pose `g_star` with additive noise.
pub fn sample_observation(
    g_star: &Pose,
    x: &Landmark,
    noise: &NoiseModel,
    landmark_id: usize,
    rng: &mut impl Rng,
) -> Result<Observation> {
    let mean = project(&act_inverse(g_star, &x.position))?;
    Observation::new(mean + noise.sample(rng), landmark_id)
}

/// Central finite-difference Jacobian of the residual in the left
/// perturbation, the reference oracle for [`jacobian`].
pub fn jacobian_finite_difference(
    z: &Observation,
    g: &Pose,
    x: &Landmark,
    step: f64,
) -> Result<Jacobian> {
    let mut j = Jacobian::zeros();
    for k in 0..6 {
        let mut dv = nalgebra::Vector6::zeros();
        dv[k] = step;
        let plus = residual(z, &crate::lie::left_update(g, &Twist::from_vector(&dv)), x)?;
        dv[k] = -step;
        let minus = residual(z, &crate::lie::left_update(g, &Twist::from_vector(&dv)), x)?;
        let col = (plus - minus) / (2.0 * step);
        j[(0, k)] = col.x;
        j[(1, k)] = col.y;
    }
    Ok(j)
}
