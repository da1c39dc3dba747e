//! Shared builders and independent oracles for the integration suites.
//!
//! The brute-force paths here deliberately avoid the library's spectral
//! bookkeeping: sensitivities come from a dense LU solve and alignment from a
//! direct eigendecomposition of the raw curvature, so they can arbitrate the
//! production pipeline.

use goi_kit::camera::{jacobian, residual, Landmark, NoiseModel, Observation};
use goi_kit::curvature::ObservationSet;
use goi_kit::lie::{exp_se3, Metric, Pose, Twist};
use nalgebra::{Matrix2, Matrix6, Vector2, Vector3, Vector6};
use rand::RngExt;

pub fn random_metric(rng: &mut impl RngExt) -> Metric {
    let mut a = Matrix6::zeros();
    for i in 0..6 {
        for j in 0..6 {
            a[(i, j)] = rng.random_range(-0.4..0.4);
        }
    }
    Metric::new(a.transpose() * a + Matrix6::identity()).unwrap()
}

pub fn random_pose(rng: &mut impl RngExt, trans: f64, omega_max: f64) -> Pose {
    let nu = Vector3::new(
        rng.random_range(-trans..trans),
        rng.random_range(-trans..trans),
        rng.random_range(-trans..trans),
    );
    let mut omega = Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    );
    let n = omega.norm();
    if n > 0.0 {
        omega *= rng.random_range(0.0..omega_max) / n;
    }
    exp_se3(&Twist::new(nu, omega))
}

/// Landmark visible from pose `g` at a depth in `[lo, hi]`.
pub fn landmark_in_view(rng: &mut impl RngExt, g: &Pose, lo: f64, hi: f64) -> Landmark {
    let depth = rng.random_range(lo..hi);
    let cam = Vector3::new(
        rng.random_range(-0.5..0.5) * depth,
        rng.random_range(-0.5..0.5) * depth,
        depth,
    );
    Landmark {
        position: g.rotation() * cam + g.translation(),
    }
}

/// Noiseless observation set of fresh landmarks around pose `g`.
pub fn noiseless_set(
    rng: &mut impl RngExt,
    g: &Pose,
    n: usize,
    depth: (f64, f64),
) -> ObservationSet {
    let landmarks: Vec<Landmark> = (0..n)
        .map(|_| landmark_in_view(rng, g, depth.0, depth.1))
        .collect();
    let observations: Vec<Observation> = landmarks
        .iter()
        .enumerate()
        .map(|(i, x)| {
            let mean = goi_kit::camera::project(&goi_kit::lie::act_inverse(g, &x.position))
                .expect("landmark in view");
            Observation::new(mean, i).unwrap()
        })
        .collect();
    ObservationSet::new(observations, landmarks, NoiseModel::unit(), None).unwrap()
}

/// Independent straight-line reimplementation of the dynamic-feature
/// pipeline for identity metric: curvature by explicit summation,
/// sensitivity via dense LU solve, alignment via a direct symmetric
/// eigendecomposition of the raw curvature matrix.
pub struct BruteForceFeature {
    pub goi: f64,
    pub rho1: f64,
}

pub fn brute_force_pipeline(set: &ObservationSet, g: &Pose) -> Vec<BruteForceFeature> {
    let w: Matrix2<f64> = *set.noise.weight();
    let n = set.observations.len() as f64;

    let mut h = Matrix6::<f64>::zeros();
    for obs in &set.observations {
        let j = jacobian(g, &set.landmarks[obs.landmark_id]).unwrap();
        h += j.transpose() * w * j;
    }
    h /= n;

    // Weakest direction and per-direction spectrum straight from H.
    let eig = nalgebra::SymmetricEigen::new(h);
    let mut order: Vec<usize> = (0..6).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let v_sorted: Vec<Vector6<f64>> = order
        .iter()
        .map(|&i| eig.eigenvectors.column(i).into_owned())
        .collect();

    let lu = h.lu();
    set.observations
        .iter()
        .map(|obs| {
            let x = &set.landmarks[obs.landmark_id];
            let j = jacobian(g, x).unwrap();
            let r = residual(obs, g, x).unwrap();
            let psi: Vector6<f64> = j.transpose() * w * r;
            let influence = lu.solve(&psi).expect("full-rank curvature");
            let goi = influence.norm();
            let coeffs: Vec<f64> = v_sorted.iter().map(|v| v.dot(&psi)).collect();
            let total: f64 = coeffs.iter().map(|c| c * c).sum();
            let rho1 = if total > 0.0 {
                coeffs[0].abs() / total.sqrt()
            } else {
                0.0
            };
            BruteForceFeature { goi, rho1 }
        })
        .collect()
}

/// Perfect measurement of a landmark plus an explicit residual offset.
pub fn offset_observation(
    g: &Pose,
    x: &Landmark,
    offset: Vector2<f64>,
    id: usize,
) -> Observation {
    let mean = goi_kit::camera::project(&goi_kit::lie::act_inverse(g, &x.position)).unwrap();
    Observation::new(mean + offset, id).unwrap()
}
