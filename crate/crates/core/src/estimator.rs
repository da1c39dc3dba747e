//! Gauss-Newton pose solver restricted to the observable subspace, plus the
//! epsilon-contamination variant used as the finite-difference oracle for the
//! influence function.
//!
//! Each iteration re-evaluates score and curvature at the current pose,
//! projects the score onto the observable subspace of the current curvature,
//! and applies the restricted inverse. Updates therefore never move the
//! estimate along unobservable directions; those components stay at their
//! initialization. There is no damping or line search: the solver targets the
//! local quadratic basin and a step larger than the `r0` guard aborts.

use crate::camera::{Landmark, Observation};
use crate::curvature::{
    empirical_curvature, score, CurvatureSpectrum, ObservationSet, RANK_THRESHOLD_DEFAULT,
};
use crate::error::{GoiError, Result};
use crate::lie::{compose, g_norm, inverse, left_update, log_se3, Metric, Pose, Twist};

/// Termination and trust parameters.
#[derive(Debug, Clone, Copy)]
pub struct SolverConfig {
    pub max_iters: usize,
    /// Declare convergence when the G-norm of the update drops below this.
    pub step_tol: f64,
    /// Quality level for the final projected score norm; recorded, not used
    /// for termination.
    pub residual_tol: f64,
    /// Basin radius guard: any single step larger than this aborts.
    pub r0: f64,
}

impl SolverConfig {
    pub fn new(max_iters: usize, step_tol: f64, residual_tol: f64, r0: f64) -> Result<Self> {
        if max_iters == 0 {
            return Err(GoiError::InvalidConfig("max_iters must be >= 1".into()));
        }
        if [step_tol, residual_tol, r0].iter().any(|t| t.is_nan() || *t <= 0.0) {
            return Err(GoiError::InvalidConfig(
                "solver tolerances must be positive".into(),
            ));
        }
        Ok(Self {
            max_iters,
            step_tol,
            residual_tol,
            r0,
        })
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iters: 50,
            step_tol: 1e-12,
            residual_tol: 1e-10,
            r0: 0.5,
        }
    }
}

/// Solver output.
#[derive(Debug, Clone)]
pub struct SolveResult {
    pub g_hat: Pose,
    pub iterations: usize,
    pub converged: bool,
    /// `|| P_O U_n(g_hat) ||_G` at the returned pose.
    pub final_score_norm: f64,
    /// Observable estimator error, filled by callers that know the true pose.
    pub xi_error_o: Option<Twist>,
}

impl SolveResult {
    /// Attach the observable error against a known true pose.
    pub fn with_error_against(
        mut self,
        g_star: &Pose,
        spec: &CurvatureSpectrum,
    ) -> Result<Self> {
        self.xi_error_o = Some(error_twist(&self.g_hat, g_star, spec)?);
        Ok(self)
    }
}

/// Plain Gauss-Newton on the observable subspace.
pub fn gauss_newton(
    set: &ObservationSet,
    g0: &Pose,
    metric: &Metric,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    solve_weighted(set, None, g0, metric, cfg)
}

/// Gauss-Newton on the epsilon-contaminated estimating equation
/// `U_eps = (1 - eps) U_n + eps psi(z_extra, .)`. With `eps = 0` this takes
/// exactly the [`gauss_newton`] code path.
pub fn contaminated_solve(
    set: &ObservationSet,
    z_extra: (&Observation, &Landmark),
    epsilon: f64,
    g0: &Pose,
    metric: &Metric,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    if !(0.0..=0.5).contains(&epsilon) {
        return Err(GoiError::InvalidConfig(format!(
            "contamination weight must lie in [0, 0.5], got {epsilon}"
        )));
    }
    if epsilon == 0.0 {
        return gauss_newton(set, g0, metric, cfg);
    }
    solve_weighted(set, Some((z_extra.0, z_extra.1, epsilon)), g0, metric, cfg)
}

/// Observable part of the estimator error: `P_O log(g_hat * g_star^{-1})`.
pub fn error_twist(g_hat: &Pose, g_star: &Pose, spec: &CurvatureSpectrum) -> Result<Twist> {
    let xi = log_se3(&compose(g_hat, &inverse(g_star)))?;
    Ok(spec.project_observable(&xi))
}

fn solve_weighted(
    set: &ObservationSet,
    extra: Option<(&Observation, &Landmark, f64)>,
    g0: &Pose,
    metric: &Metric,
    cfg: &SolverConfig,
) -> Result<SolveResult> {
    let mut g = *g0;
    let mut converged = false;
    let mut iterations = 0;

    for _ in 0..cfg.max_iters {
        let (u, spec) = weighted_score_and_spectrum(set, extra, &g, metric)?;
        let xi = spec.apply_restricted_inverse(&spec.project_observable(&u))?.neg();
        let step = g_norm(&xi, metric);
        if step > cfg.r0 {
            return Err(GoiError::BasinEscape {
                step,
                r0: cfg.r0,
            });
        }
        g = left_update(&g, &xi);
        iterations += 1;
        if step < cfg.step_tol {
            converged = true;
            break;
        }
    }

    let (u, spec) = weighted_score_and_spectrum(set, extra, &g, metric)?;
    let final_score_norm = g_norm(&spec.project_observable(&u), metric);
    Ok(SolveResult {
        g_hat: g,
        iterations,
        converged,
        final_score_norm,
        xi_error_o: None,
    })
}

fn weighted_score_and_spectrum(
    set: &ObservationSet,
    extra: Option<(&Observation, &Landmark, f64)>,
    g: &Pose,
    metric: &Metric,
) -> Result<(Twist, CurvatureSpectrum)> {
    let w = set.noise.weight();
    let mut u = nalgebra::Vector6::zeros();
    for obs in &set.observations {
        u += score(obs, g, set.landmark_of(obs), w)?.as_vector();
    }
    u /= set.len() as f64;
    let mut h = empirical_curvature(set, g)?;

    if let Some((z_e, x_e, eps)) = extra {
        let psi_e = score(z_e, g, x_e, w)?.as_vector();
        u = u * (1.0 - eps) + psi_e * eps;
        let j_e = crate::camera::jacobian(g, x_e)?;
        h = h * (1.0 - eps) + j_e.transpose() * w * j_e * eps;
    }

    let spec = CurvatureSpectrum::eigendecompose(&h, metric, RANK_THRESHOLD_DEFAULT)?;
    if spec.observable().is_empty() {
        return Err(GoiError::TotallyUnobservable);
    }
    Ok((Twist::from_vector(&u), spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project, sample_observation, NoiseModel};
    use crate::curvature::population_curvature;
    use crate::lie::{act_inverse, exp_se3, g_inner};
    use nalgebra::{Vector3, Vector6};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn scene(
        rng: &mut impl RngExt,
        n: usize,
        sigma: f64,
    ) -> (ObservationSet, Pose) {
        let g_star = exp_se3(&Twist::new(
            Vector3::new(0.2, -0.1, 0.15),
            Vector3::new(0.05, 0.1, -0.08),
        ));
        let landmarks: Vec<Landmark> = (0..n)
            .map(|_| {
                let d = rng.random_range(3.0..9.0);
                let cam = Vector3::new(
                    rng.random_range(-0.5..0.5) * d,
                    rng.random_range(-0.5..0.5) * d,
                    d,
                );
                Landmark::new(g_star.rotation() * cam + g_star.translation()).unwrap()
            })
            .collect();
        let noise = if sigma > 0.0 {
            NoiseModel::isotropic(sigma).unwrap()
        } else {
            NoiseModel::unit()
        };
        let observations: Vec<Observation> = landmarks
            .iter()
            .enumerate()
            .map(|(i, x)| {
                if sigma > 0.0 {
                    sample_observation(&g_star, x, &noise, i, rng).unwrap()
                } else {
                    Observation::new(
                        project(&act_inverse(&g_star, &x.position)).unwrap(),
                        i,
                    )
                    .unwrap()
                }
            })
            .collect();
        let set = ObservationSet::new(observations, landmarks, noise, None).unwrap();
        (set, g_star)
    }

    fn pose_distance(a: &Pose, b: &Pose, metric: &Metric) -> f64 {
        let xi = log_se3(&compose(a, &inverse(b))).unwrap();
        g_norm(&xi, metric)
    }

    #[test]
    fn noiseless_from_truth_converges_immediately() {
        let mut rng = ChaCha12Rng::seed_from_u64(70);
        let (set, g_star) = scene(&mut rng, 30, 0.0);
        let metric = Metric::identity();
        let result = gauss_newton(&set, &g_star, &metric, &SolverConfig::default()).unwrap();
        assert!(result.converged);
        assert_eq!(result.iterations, 1);
        assert!(result.final_score_norm < 1e-14);
        assert!(pose_distance(&result.g_hat, &g_star, &metric) < 1e-14);
    }

    #[test]
    fn noiseless_recovery_from_perturbed_start() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let metric = Metric::identity();
        for _ in 0..100 {
            let (set, g_star) = scene(&mut rng, 30, 0.0);
            let mut offset = Vector6::zeros();
            for k in 0..6 {
                offset[k] = rng.random_range(-1.0..1.0);
            }
            let offset = Twist::from_vector(&(offset.normalize() * 0.05));
            let g0 = left_update(&g_star, &offset);
            let result = gauss_newton(&set, &g0, &metric, &SolverConfig::default()).unwrap();
            assert!(result.converged, "solver failed to converge");
            let err = pose_distance(&result.g_hat, &g_star, &metric);
            assert!(err < 1e-8, "recovery error {err}");
        }
    }

    #[test]
    fn monotone_score_decrease_on_noiseless_problem() {
        // Track the projected score norm across iterations by re-running with
        // increasing iteration caps; inside the basin it must decrease
        // strictly until convergence.
        let mut rng = ChaCha12Rng::seed_from_u64(72);
        let (set, g_star) = scene(&mut rng, 30, 0.0);
        let metric = Metric::identity();
        let offset = Twist::from_vector(&(Vector6::repeat(1.0).normalize() * 0.08));
        let g0 = left_update(&g_star, &offset);
        let mut norms = Vec::new();
        for cap in 1..6 {
            let cfg = SolverConfig::new(cap, 1e-15, 1e-12, 0.5).unwrap();
            match gauss_newton(&set, &g0, &metric, &cfg) {
                Ok(r) => norms.push(r.final_score_norm),
                Err(e) => panic!("solver error at cap {cap}: {e}"),
            }
        }
        for w in norms.windows(2) {
            assert!(
                w[1] < w[0] || w[0] < 1e-14,
                "score norm failed to decrease: {:?}",
                norms
            );
        }
    }

    #[test]
    fn noisy_error_within_stability_envelope() {
        // Observable error should sit within 10x of the concentration
        // envelope sigma_score / lambda_min * sqrt(log(2/delta) / n), with
        // the score sub-Gaussian parameter taken as sqrt(lambda_max(H)).
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        let (set, g_star) = scene(&mut rng, 10_000, 1e-3);
        let metric = Metric::identity();
        let h = population_curvature(&set.landmarks, &g_star, set.noise.weight()).unwrap();
        let spec = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT).unwrap();
        let result = gauss_newton(&set, &g_star, &metric, &SolverConfig::default())
            .unwrap()
            .with_error_against(&g_star, &spec)
            .unwrap();
        assert!(result.converged);
        let err = g_norm(result.xi_error_o.as_ref().unwrap(), &metric);
        let delta: f64 = 0.01;
        let sigma_score = spec.observable_lambda_max().unwrap().sqrt();
        let envelope = sigma_score / spec.observable_lambda_min().unwrap()
            * ((2.0 / delta).ln() / set.len() as f64).sqrt();
        assert!(
            err <= 10.0 * envelope,
            "error {err} exceeds 10x envelope {envelope}"
        );
        assert!(err > 0.0);
    }

    #[test]
    fn basin_guard_aborts_on_large_step() {
        let mut rng = ChaCha12Rng::seed_from_u64(74);
        let (set, g_star) = scene(&mut rng, 30, 0.0);
        let metric = Metric::identity();
        let offset = Twist::from_vector(&(Vector6::repeat(1.0).normalize() * 0.3));
        let g0 = left_update(&g_star, &offset);
        let cfg = SolverConfig::new(20, 1e-12, 1e-10, 0.05).unwrap();
        assert!(matches!(
            gauss_newton(&set, &g0, &metric, &cfg),
            Err(GoiError::BasinEscape { .. })
        ));
    }

    #[test]
    fn contaminated_solve_epsilon_zero_is_bitwise_gauss_newton() {
        let mut rng = ChaCha12Rng::seed_from_u64(75);
        let (set, g_star) = scene(&mut rng, 25, 1e-3);
        let metric = Metric::identity();
        let cfg = SolverConfig::default();
        let plain = gauss_newton(&set, &g_star, &metric, &cfg).unwrap();
        let extra_lm = set.landmarks[0];
        let extra_obs = set.observations[0];
        let tainted =
            contaminated_solve(&set, (&extra_obs, &extra_lm), 0.0, &g_star, &metric, &cfg)
                .unwrap();
        assert_eq!(
            plain.g_hat.translation(),
            tainted.g_hat.translation(),
        );
        assert_eq!(plain.g_hat.rotation(), tainted.g_hat.rotation());
        assert_eq!(
            plain.final_score_norm.to_bits(),
            tainted.final_score_norm.to_bits()
        );
    }

    #[test]
    fn contaminated_solve_rejects_bad_epsilon() {
        let mut rng = ChaCha12Rng::seed_from_u64(76);
        let (set, g_star) = scene(&mut rng, 10, 1e-3);
        let metric = Metric::identity();
        let cfg = SolverConfig::default();
        let lm = set.landmarks[0];
        let obs = set.observations[0];
        assert!(contaminated_solve(&set, (&obs, &lm), -0.1, &g_star, &metric, &cfg).is_err());
        assert!(contaminated_solve(&set, (&obs, &lm), 0.6, &g_star, &metric, &cfg).is_err());
    }

    #[test]
    fn contamination_quotient_matches_influence_function() {
        // Noiseless base data: the solver shift under eps-contamination,
        // divided by eps, reproduces -H_OO^{-1} psi_O to first order.
        let mut rng = ChaCha12Rng::seed_from_u64(77);
        let (set, g_star) = scene(&mut rng, 60, 0.0);
        let metric = Metric::identity();
        let h = population_curvature(&set.landmarks, &g_star, set.noise.weight()).unwrap();
        let spec = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT).unwrap();

        // Contaminating feature: an off-landmark measurement.
        let x_extra = set.landmarks[5];
        let mean = project(&act_inverse(&g_star, &x_extra.position)).unwrap();
        let z_extra =
            Observation::new(mean + nalgebra::Vector2::new(0.05, -0.03), 5).unwrap();

        let psi = score(&z_extra, &g_star, &x_extra, set.noise.weight()).unwrap();
        let expected = spec
            .apply_restricted_inverse(&spec.project_observable(&psi))
            .unwrap()
            .neg();

        let cfg = SolverConfig::new(100, 1e-14, 1e-12, 0.5).unwrap();
        let eps = 1e-4;
        let solved =
            contaminated_solve(&set, (&z_extra, &x_extra), eps, &g_star, &metric, &cfg).unwrap();
        let shift = error_twist(&solved.g_hat, &g_star, &spec).unwrap();
        let quotient = shift.scaled(1.0 / eps);

        let err_vec = Twist::from_vector(&(quotient.as_vector() - expected.as_vector()));
        let rel = g_norm(&err_vec, &metric) / g_norm(&expected, &metric);
        assert!(rel < 1e-2, "relative influence error {rel}");

        // Halving eps roughly halves the first-order error.
        let solved_half = contaminated_solve(
            &set,
            (&z_extra, &x_extra),
            eps / 2.0,
            &g_star,
            &metric,
            &cfg,
        )
        .unwrap();
        let quotient_half =
            error_twist(&solved_half.g_hat, &g_star, &spec).unwrap().scaled(2.0 / eps);
        let err_half = g_norm(
            &Twist::from_vector(&(quotient_half.as_vector() - expected.as_vector())),
            &metric,
        );
        let err_full = g_norm(&err_vec, &metric);
        let ratio = err_full / err_half.max(1e-300);
        assert!(
            (1.3..3.0).contains(&ratio),
            "error ratio {ratio} not consistent with first-order convergence"
        );
    }

    #[test]
    fn error_twist_definition_and_projection() {
        let mut rng = ChaCha12Rng::seed_from_u64(78);
        let (set, g_star) = scene(&mut rng, 30, 0.0);
        let metric = Metric::identity();
        let h = population_curvature(&set.landmarks, &g_star, set.noise.weight()).unwrap();
        let spec = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT).unwrap();

        // g_hat = g_star: zero error.
        let e = error_twist(&g_star, &g_star, &spec).unwrap();
        assert!(e.as_vector().norm() < 1e-15);

        // Full-rank scene: an observable offset comes back unchanged.
        assert_eq!(spec.observable().len(), 6);
        let xi = Twist::from_vector(&Vector6::new(0.01, -0.02, 0.005, 0.01, 0.0, -0.01));
        let g_hat = left_update(&g_star, &xi);
        let e = error_twist(&g_hat, &g_star, &spec).unwrap();
        assert!((e.as_vector() - xi.as_vector()).norm() < 1e-10);
    }

    #[test]
    fn error_twist_strips_unobservable_component() {
        // Rank-deficient spectrum: the component outside O is removed.
        let mut h = nalgebra::Matrix6::<f64>::zeros();
        h[(0, 0)] = 1.0;
        h[(1, 1)] = 2.0;
        h[(2, 2)] = 3.0;
        let metric = Metric::identity();
        let spec = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT).unwrap();
        let g_star = Pose::identity();
        let xi = Twist::from_vector(&Vector6::new(0.01, 0.02, -0.01, 0.004, -0.003, 0.002));
        let g_hat = left_update(&g_star, &xi);
        let e = error_twist(&g_hat, &g_star, &spec).unwrap();
        // Projection onto O keeps only the translational block here.
        for &i in spec.observable() {
            let ip = g_inner(&e, spec.vector(i), &metric);
            let want = g_inner(&xi, spec.vector(i), &metric);
            assert!((ip - want).abs() < 1e-12);
        }
        assert!(e.omega.norm() < 1e-12);
    }
}
