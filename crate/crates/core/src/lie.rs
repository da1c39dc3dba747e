//! SE(3)/se(3) calculus with left-multiplicative perturbations.
//!
//! Poses are stored as a rotation matrix plus translation vector. Tangent
//! vectors (twists) use a fixed layout: components 1-3 translational,
//! components 4-6 rotational, so stacked Jacobians read `[J_t  J_r]`.
//! Perturbations are always applied on the left, `g(xi) = exp(xi) * g`,
//! and all inner products go through a runtime metric `G` on se(3).

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{GoiError, Result};

/// Below this rotation angle the Rodrigues coefficients switch to their
/// Taylor series to avoid 0/0.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Margin kept away from pi in `log_se3`.
pub const LOG_ANGLE_MARGIN: f64 = 1e-6;

const ROTATION_TOL: f64 = 1e-9;

/// Rigid transform on SE(3): rotation `r` and translation `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    r: Matrix3<f64>,
    t: Vector3<f64>,
}

impl Pose {
    /// Validating constructor: `r` must be orthonormal with determinant one.
    pub fn new(r: Matrix3<f64>, t: Vector3<f64>) -> Result<Self> {
        let ortho = (r.transpose() * r - Matrix3::identity()).norm();
        let det = (r.determinant() - 1.0).abs();
        if ortho > ROTATION_TOL || det > ROTATION_TOL {
            return Err(GoiError::InvalidRotation { ortho, det });
        }
        Ok(Self { r, t })
    }

    /// Constructor for rotations produced by trusted internal paths.
    pub(crate) fn from_parts_unchecked(r: Matrix3<f64>, t: Vector3<f64>) -> Self {
        Self { r, t }
    }

    pub fn identity() -> Self {
        Self {
            r: Matrix3::identity(),
            t: Vector3::zeros(),
        }
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.r
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.t
    }

    /// Homogeneous 4x4 representation.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.r);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.t);
        m
    }

    /// Orthonormality residual, used by drift checks.
    pub fn rotation_residual(&self) -> f64 {
        (self.r.transpose() * self.r - Matrix3::identity()).norm()
    }
}

/// Element of se(3): translational part `nu`, rotational part `omega`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Twist {
    pub nu: Vector3<f64>,
    pub omega: Vector3<f64>,
}

impl Twist {
    pub fn new(nu: Vector3<f64>, omega: Vector3<f64>) -> Self {
        Self { nu, omega }
    }

    pub fn zero() -> Self {
        Self {
            nu: Vector3::zeros(),
            omega: Vector3::zeros(),
        }
    }

    /// Stacked 6-vector, translation first.
    pub fn as_vector(&self) -> Vector6<f64> {
        Vector6::new(
            self.nu.x,
            self.nu.y,
            self.nu.z,
            self.omega.x,
            self.omega.y,
            self.omega.z,
        )
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self {
            nu: Vector3::new(v[0], v[1], v[2]),
            omega: Vector3::new(v[3], v[4], v[5]),
        }
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            nu: self.nu * s,
            omega: self.omega * s,
        }
    }

    pub fn add(&self, other: &Twist) -> Self {
        Self {
            nu: self.nu + other.nu,
            omega: self.omega + other.omega,
        }
    }

    pub fn neg(&self) -> Self {
        self.scaled(-1.0)
    }
}

/// Symmetric positive-definite metric on se(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metric {
    g: Matrix6<f64>,
}

impl Metric {
    /// Validates symmetry (1e-12) and positive-definiteness.
    pub fn new(g: Matrix6<f64>) -> Result<Self> {
        if (g - g.transpose()).norm() > 1e-12 {
            return Err(GoiError::NotSpd { context: "metric" });
        }
        if nalgebra::Cholesky::new(g).is_none() {
            return Err(GoiError::NotSpd { context: "metric" });
        }
        Ok(Self { g })
    }

    pub fn identity() -> Self {
        Self {
            g: Matrix6::identity(),
        }
    }

    pub fn matrix(&self) -> &Matrix6<f64> {
        &self.g
    }

    pub fn cholesky(&self) -> nalgebra::Cholesky<f64, nalgebra::U6> {
        // Guaranteed by the constructor.
        nalgebra::Cholesky::new(self.g).expect("metric validated SPD at construction")
    }
}

/// so(3) hat map: `hat(w) * x == w x x` (cross product).
pub fn hat(omega: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -omega.z, omega.y, //
        omega.z, 0.0, -omega.x, //
        -omega.y, omega.x, 0.0,
    )
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Rodrigues coefficients (sin t / t, (1-cos t)/t^2, (t-sin t)/t^3)
/// via the closed form. Inaccurate for small angles.
pub(crate) fn rodrigues_closed(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    let a = theta.sin() / theta;
    let b = (1.0 - theta.cos()) / t2;
    let c = (1.0 - a) / t2;
    (a, b, c)
}

/// Rodrigues coefficients via their Taylor series in theta^2.
pub(crate) fn rodrigues_series(theta: f64) -> (f64, f64, f64) {
    let t2 = theta * theta;
    let t4 = t2 * t2;
    let a = 1.0 - t2 / 6.0 + t4 / 120.0;
    let b = 0.5 - t2 / 24.0 + t4 / 720.0;
    let c = 1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0;
    (a, b, c)
}

fn rodrigues(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        rodrigues_series(theta)
    } else {
        rodrigues_closed(theta)
    }
}

pub(crate) fn exp_se3_with_coeffs(xi: &Twist, coeffs: (f64, f64, f64)) -> Pose {
    let (a, b, c) = coeffs;
    let k = hat(&xi.omega);
    let k2 = k * k;
    let r = Matrix3::identity() + k * a + k2 * b;
    let v = Matrix3::identity() + k * b + k2 * c;
    Pose::from_parts_unchecked(r, v * xi.nu)
}

/// SE(3) exponential: Rodrigues rotation plus left-Jacobian translation coupling.
pub fn exp_se3(xi: &Twist) -> Pose {
    let theta = xi.omega.norm();
    exp_se3_with_coeffs(xi, rodrigues(theta))
}

/// SE(3) logarithm. Errors when the rotation angle is within
/// [`LOG_ANGLE_MARGIN`] of pi, where the axis is not recoverable.
pub fn log_se3(g: &Pose) -> Result<Twist> {
    let r = g.rotation();
    let anti = vee(&(r - r.transpose())) * 0.5;
    let sin_theta = anti.norm();
    let cos_theta = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta > std::f64::consts::PI - LOG_ANGLE_MARGIN {
        return Err(GoiError::LogDomain {
            angle: theta,
            margin: LOG_ANGLE_MARGIN,
        });
    }
    let (a, b, _) = rodrigues(theta);
    let omega = anti / a;
    // V^{-1} = I - K/2 + e K^2 with e = (1 - a/(2b)) / theta^2.
    let e = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        1.0 / 12.0 + t2 / 720.0 + t2 * t2 / 30240.0
    } else {
        (1.0 - a / (2.0 * b)) / (theta * theta)
    };
    let k = hat(&omega);
    let v_inv = Matrix3::identity() - k * 0.5 + k * k * e;
    Ok(Twist::new(v_inv * g.translation(), omega))
}

/// Group composition `a * b`.
pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose::from_parts_unchecked(a.r * b.r, a.r * b.t + a.t)
}

/// Group inverse.
pub fn inverse(g: &Pose) -> Pose {
    let rt = g.r.transpose();
    Pose::from_parts_unchecked(rt, -(rt * g.t))
}

/// Action of the inverse on a point: `g^{-1} X = R^T (X - t)`.
pub fn act_inverse(g: &Pose, x: &Vector3<f64>) -> Vector3<f64> {
    g.r.transpose() * (x - g.t)
}

/// Left-multiplicative update `exp(xi) * g`.
pub fn left_update(g: &Pose, xi: &Twist) -> Pose {
    compose(&exp_se3(xi), g)
}

/// G-inner product `u^T G v`.
pub fn g_inner(u: &Twist, v: &Twist, metric: &Metric) -> f64 {
    (u.as_vector().transpose() * metric.matrix() * v.as_vector())[(0, 0)]
}

/// G-norm `sqrt(u^T G u)`.
pub fn g_norm(u: &Twist, metric: &Metric) -> f64 {
    g_inner(u, u, metric).max(0.0).sqrt()
}
