//! Training-free diagnostics on the curvature spectrum: dynamic-feature
//! flagging and pure-rotation / low-parallax degeneracy detection.
//!
//! Both detectors build the empirical curvature at the supplied pose (in
//! practice the current estimate; the theory evaluates at the true pose and
//! the gap is first order in the estimate error), decompose it against the
//! metric, and threshold spectral quantities. Full influence reports are
//! returned, not just flags, so consumers can re-threshold without
//! recomputation.

use nalgebra::Matrix6;

use crate::curvature::{empirical_curvature, CurvatureSpectrum, ObservationSet};
use crate::error::{GoiError, Result};
use crate::goi::{influence, InfluenceReport};
use crate::lie::{Metric, Pose};

/// Thresholds for both detectors.
#[derive(Debug, Clone, Copy)]
pub struct DetectorConfig {
    /// Flag features whose sensitivity index exceeds this.
    pub tau_goi: f64,
    /// Flag features whose weak-direction alignment exceeds this, in (0, 1).
    pub tau_rho: f64,
    /// Declare near-degenerate when the smallest observable eigenvalue of the
    /// empirical curvature falls below this.
    pub tau_lambda: f64,
    /// Numerical-rank cutoff handed to the eigendecomposition.
    pub rank_threshold: f64,
}

impl DetectorConfig {
    pub fn new(tau_goi: f64, tau_rho: f64, tau_lambda: f64, rank_threshold: f64) -> Result<Self> {
        if tau_goi.is_nan() || tau_goi <= 0.0 {
            return Err(GoiError::InvalidConfig(format!(
                "tau_goi must be positive, got {tau_goi}"
            )));
        }
        if !(tau_rho > 0.0 && tau_rho < 1.0) {
            return Err(GoiError::InvalidConfig(format!(
                "tau_rho must lie in (0, 1), got {tau_rho}"
            )));
        }
        if tau_lambda.is_nan() || tau_lambda <= 0.0 {
            return Err(GoiError::InvalidConfig(format!(
                "tau_lambda must be positive, got {tau_lambda}"
            )));
        }
        if rank_threshold.is_nan() || rank_threshold <= 0.0 {
            return Err(GoiError::InvalidConfig(format!(
                "rank_threshold must be positive, got {rank_threshold}"
            )));
        }
        Ok(Self {
            tau_goi,
            tau_rho,
            tau_lambda,
            rank_threshold,
        })
    }

    /// Default weak-direction alignment threshold.
    pub const DEFAULT_TAU_RHO: f64 = 0.6;

    /// Scale-free default for `tau_goi`: a percentile of the sensitivity
    /// indices over the current feature set times a factor. The standard rule
    /// uses the 0.95 percentile with factor 1.
    pub fn tau_goi_from_percentile(gois: &[f64], percentile: f64, factor: f64) -> Result<f64> {
        if gois.is_empty() {
            return Err(GoiError::InvalidConfig(
                "percentile rule needs at least one feature".into(),
            ));
        }
        if !(0.0..=1.0).contains(&percentile) {
            return Err(GoiError::InvalidConfig(format!(
                "percentile must lie in [0, 1], got {percentile}"
            )));
        }
        Ok(crate::sim::stats::quantile(gois, percentile) * factor)
    }

    /// Scale-free default for `tau_lambda`: a fraction of the largest
    /// observable eigenvalue of a calibration spectrum. The standard rule
    /// uses factor 1e-6.
    pub fn tau_lambda_from_spectrum(spec: &CurvatureSpectrum, factor: f64) -> Result<f64> {
        let lambda_max = spec
            .observable_lambda_max()
            .ok_or(GoiError::TotallyUnobservable)?;
        Ok(lambda_max * factor)
    }
}

/// Flag rule of the dynamic-feature detector.
pub fn is_flagged(report: &InfluenceReport, cfg: &DetectorConfig) -> bool {
    report.goi > cfg.tau_goi && report.rho1 > cfg.tau_rho
}

/// Output of [`detect_dynamic`].
#[derive(Debug, Clone)]
pub struct DynamicScan {
    /// One report per observation, ordered by feature id.
    pub reports: Vec<InfluenceReport>,
    /// `flags[j] = goi_j > tau_goi && rho1_j > tau_rho`.
    pub flags: Vec<bool>,
    /// Set when fewer than 6 features back the empirical curvature.
    pub rank_warning: bool,
    /// The spectrum all reports were computed against.
    pub spectrum: CurvatureSpectrum,
}

impl DynamicScan {
    pub fn any_flagged(&self) -> bool {
        self.flags.iter().any(|&f| f)
    }
}

/// Dynamic-feature detector: build the empirical curvature, restrict to its
/// observable subspace, score every feature, and flag on the conjunction of
/// the sensitivity and alignment thresholds.
pub fn detect_dynamic(
    set: &ObservationSet,
    g: &Pose,
    metric: &Metric,
    cfg: &DetectorConfig,
) -> Result<DynamicScan> {
    let h_n = empirical_curvature(set, g)?;
    let spectrum = CurvatureSpectrum::eigendecompose(&h_n, metric, cfg.rank_threshold)?;
    if spectrum.observable().is_empty() {
        return Err(GoiError::TotallyUnobservable);
    }
    let w = *set.noise.weight();
    let mut reports = Vec::with_capacity(set.len());
    for (feature_id, obs) in set.observations.iter().enumerate() {
        reports.push(influence(
            feature_id,
            obs,
            g,
            set.landmark_of(obs),
            &spectrum,
            &w,
        )?);
    }
    let flags = reports.iter().map(|r| is_flagged(r, cfg)).collect();
    Ok(DynamicScan {
        reports,
        flags,
        rank_warning: set.len() < 6,
        spectrum,
    })
}

/// Health verdict of the degeneracy detector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Healthy,
    NearDegenerate,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Healthy => write!(f, "healthy"),
            Verdict::NearDegenerate => write!(f, "near-degenerate"),
        }
    }
}

/// Output of [`detect_degeneracy`].
#[derive(Debug, Clone)]
pub struct DegeneracyVerdict {
    /// Smallest observable eigenvalue of the empirical curvature; zero when
    /// nothing is observable.
    pub lambda_min_n: f64,
    pub verdict: Verdict,
    pub spectrum: CurvatureSpectrum,
}

/// Observability-collapse detector: near-degenerate iff the smallest
/// observable eigenvalue of the restricted empirical curvature falls below
/// `tau_lambda`. An empty observable set is reported as near-degenerate with
/// eigenvalue zero rather than as an error.
pub fn detect_degeneracy(
    set: &ObservationSet,
    g: &Pose,
    metric: &Metric,
    cfg: &DetectorConfig,
) -> Result<DegeneracyVerdict> {
    let h_n = empirical_curvature(set, g)?;
    let spectrum = CurvatureSpectrum::eigendecompose(&h_n, metric, cfg.rank_threshold)?;
    let lambda_min_n = spectrum.observable_lambda_min().unwrap_or(0.0);
    let verdict = if lambda_min_n < cfg.tau_lambda {
        Verdict::NearDegenerate
    } else {
        Verdict::Healthy
    };
    Ok(DegeneracyVerdict {
        lambda_min_n,
        verdict,
        spectrum,
    })
}

/// Record of one admissibility-checked perturbation trial.
#[derive(Debug, Clone)]
pub struct CollapseCheck {
    pub lambda_min_true: f64,
    pub lambda_min_n: f64,
    /// Operator norm of the perturbation restricted to the observable
    /// subspace.
    pub perturbation_norm: f64,
    /// `Some(pass)` when `lambda_min < (2/3) tau_lambda` applies: the
    /// perturbed spectrum must be flagged.
    pub low_branch: Option<bool>,
    /// `Some(pass)` when `lambda_min > 2 tau_lambda` applies: the perturbed
    /// spectrum must not be flagged.
    pub high_branch: Option<bool>,
    /// Whether `lambda_min_n` landed in `[lambda_min/2, 3 lambda_min/2]`.
    pub weyl_sandwich: bool,
}

impl CollapseCheck {
    /// True when every applicable implication held.
    pub fn passed(&self) -> bool {
        self.low_branch.unwrap_or(true) && self.high_branch.unwrap_or(true) && self.weyl_sandwich
    }
}

/// Evaluate the collapse-test guarantees for one admissible perturbation of
/// the true restricted curvature. The perturbation's restricted operator norm
/// must not exceed half the smallest observable eigenvalue; larger
/// perturbations are rejected as misuse.
pub fn verify_collapse_test(
    spec_true: &CurvatureSpectrum,
    perturbation: &Matrix6<f64>,
    cfg: &DetectorConfig,
) -> Result<CollapseCheck> {
    let lambda_min = spec_true
        .observable_lambda_min()
        .ok_or(GoiError::TotallyUnobservable)?;
    if (perturbation - perturbation.transpose()).norm() > 1e-9 * perturbation.norm().max(1.0) {
        return Err(GoiError::InvalidConfig(
            "perturbation must be symmetric".into(),
        ));
    }
    let e_restricted = spec_true.restricted_matrix(perturbation);
    let perturbation_norm = op_norm(&e_restricted);
    if perturbation_norm > 0.5 * lambda_min * (1.0 + 1e-12) {
        return Err(GoiError::InvalidConfig(format!(
            "perturbation norm {perturbation_norm} exceeds lambda_min/2 = {}",
            0.5 * lambda_min
        )));
    }
    let perturbed = spec_true.restricted_matrix(&(spec_true.h() + perturbation));
    let lambda_min_n = min_eig(&perturbed);

    let flagged = lambda_min_n < cfg.tau_lambda;
    let low_branch = (lambda_min < 2.0 / 3.0 * cfg.tau_lambda).then_some(flagged);
    let high_branch = (lambda_min > 2.0 * cfg.tau_lambda).then_some(!flagged);
    let slack = 1e-9 * lambda_min;
    let weyl_sandwich =
        lambda_min_n >= 0.5 * lambda_min - slack && lambda_min_n <= 1.5 * lambda_min + slack;
    Ok(CollapseCheck {
        lambda_min_true: lambda_min,
        lambda_min_n,
        perturbation_norm,
        low_branch,
        high_branch,
        weyl_sandwich,
    })
}

fn min_eig(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

fn op_norm(m: &nalgebra::DMatrix<f64>) -> f64 {
    m.clone()
        .symmetric_eigen()
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{project, Landmark, NoiseModel, Observation};
    use crate::curvature::RANK_THRESHOLD_DEFAULT;
    use crate::goi::report_from_score;
    use crate::lie::act_inverse;
    use nalgebra::{Vector2, Vector3};
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn static_scene(rng: &mut impl RngExt, n: usize, sigma: f64) -> (ObservationSet, Pose) {
        let g = Pose::identity();
        let landmarks: Vec<Landmark> = (0..n)
            .map(|_| {
                let d = rng.random_range(3.0..9.0);
                Landmark::new(Vector3::new(
                    rng.random_range(-0.5..0.5) * d,
                    rng.random_range(-0.5..0.5) * d,
                    d,
                ))
                .unwrap()
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
                let mean = project(&act_inverse(&g, &x.position)).unwrap();
                let eta = if sigma > 0.0 {
                    Vector2::new(
                        rng.random_range(-sigma..sigma),
                        rng.random_range(-sigma..sigma),
                    )
                } else {
                    Vector2::zeros()
                };
                Observation::new(mean + eta, i).unwrap()
            })
            .collect();
        let set = ObservationSet::new(observations, landmarks, noise, None).unwrap();
        (set, g)
    }

    fn cfg(tau_goi: f64, tau_lambda: f64) -> DetectorConfig {
        DetectorConfig::new(tau_goi, DetectorConfig::DEFAULT_TAU_RHO, tau_lambda, 1e-10).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(0.0, 0.5, 1.0, 1e-10).is_err());
        assert!(DetectorConfig::new(1.0, 1.0, 1.0, 1e-10).is_err());
        assert!(DetectorConfig::new(1.0, 0.5, 0.0, 1e-10).is_err());
        assert!(DetectorConfig::new(1.0, 0.5, 1.0, 0.0).is_err());
        assert!(DetectorConfig::new(1.0, 0.5, 1.0, 1e-10).is_ok());
    }

    #[test]
    fn no_flags_when_all_residuals_are_zero() {
        let mut rng = ChaCha12Rng::seed_from_u64(60);
        let (set, g) = static_scene(&mut rng, 40, 0.0);
        let scan = detect_dynamic(&set, &g, &Metric::identity(), &cfg(1e-6, 1e-9)).unwrap();
        assert!(!scan.any_flagged());
        assert!(!scan.rank_warning);
        for r in &scan.reports {
            assert_eq!(r.goi, 0.0);
        }
    }

    #[test]
    fn constructed_weak_direction_feature_is_flagged() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let (set, g) = static_scene(&mut rng, 40, 0.0);
        let h = empirical_curvature(&set, &g).unwrap();
        let metric = Metric::identity();
        let spec = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT).unwrap();
        let i1 = spec.weakest_index().unwrap();
        let c = 3.0 * spec.lambda(i1); // goi = c / lambda_min = 3
        let psi = spec.vector(i1).scaled(c);
        let report = report_from_score(0, psi, &spec).unwrap();
        assert!((report.rho1 - 1.0).abs() < 1e-12);
        assert!((report.goi - 3.0).abs() < 1e-9);
        let config = cfg(1.0, 1e-9);
        assert!(is_flagged(&report, &config));
        // Raising tau_goi above goi clears the flag.
        let strict = cfg(4.0, 1e-9);
        assert!(!is_flagged(&report, &strict));
    }

    #[test]
    fn rank_warning_below_six_features() {
        let mut rng = ChaCha12Rng::seed_from_u64(62);
        let (set, g) = static_scene(&mut rng, 4, 0.001);
        let scan = detect_dynamic(&set, &g, &Metric::identity(), &cfg(1.0, 1e-9)).unwrap();
        assert!(scan.rank_warning);
        assert_eq!(scan.reports.len(), 4);
    }

    #[test]
    fn flag_monotone_in_thresholds() {
        let mut rng = ChaCha12Rng::seed_from_u64(63);
        let (set, g) = static_scene(&mut rng, 60, 0.02);
        let metric = Metric::identity();
        let loose = detect_dynamic(&set, &g, &metric, &cfg(1e-6, 1e-9)).unwrap();
        let gois: Vec<f64> = loose.reports.iter().map(|r| r.goi).collect();
        let tau_mid = DetectorConfig::tau_goi_from_percentile(&gois, 0.5, 1.0).unwrap();
        let mid = detect_dynamic(
            &set,
            &g,
            &metric,
            &DetectorConfig::new(tau_mid, 0.3, 1e-9, 1e-10).unwrap(),
        )
        .unwrap();
        let strict = detect_dynamic(
            &set,
            &g,
            &metric,
            &DetectorConfig::new(tau_mid, 0.6, 1e-9, 1e-10).unwrap(),
        )
        .unwrap();
        for j in 0..set.len() {
            // Raising tau_rho never adds flags.
            assert!(!strict.flags[j] || mid.flags[j]);
        }
    }

    #[test]
    fn detector_is_deterministic() {
        let mut rng = ChaCha12Rng::seed_from_u64(64);
        let (set, g) = static_scene(&mut rng, 30, 0.01);
        let metric = Metric::identity();
        let config = cfg(0.5, 1e-9);
        let a = detect_dynamic(&set, &g, &metric, &config).unwrap();
        let b = detect_dynamic(&set, &g, &metric, &config).unwrap();
        assert_eq!(a.flags, b.flags);
        for (ra, rb) in a.reports.iter().zip(&b.reports) {
            assert_eq!(ra.goi.to_bits(), rb.goi.to_bits());
            assert_eq!(ra.rho1.to_bits(), rb.rho1.to_bits());
        }
    }

    #[test]
    fn degeneracy_verdict_thresholds() {
        let mut rng = ChaCha12Rng::seed_from_u64(65);
        let (set, g) = static_scene(&mut rng, 40, 0.001);
        let metric = Metric::identity();
        let probe = detect_degeneracy(&set, &g, &metric, &cfg(1.0, 1e-12)).unwrap();
        let lm = probe.lambda_min_n;
        assert!(lm > 0.0);

        // tau above the observed eigenvalue: near-degenerate.
        let low = detect_degeneracy(&set, &g, &metric, &cfg(1.0, 2.0 * lm)).unwrap();
        assert_eq!(low.verdict, Verdict::NearDegenerate);
        // tau below: healthy.
        let high = detect_degeneracy(&set, &g, &metric, &cfg(1.0, 0.5 * lm)).unwrap();
        assert_eq!(high.verdict, Verdict::Healthy);
        // Raising tau_lambda never turns near-degenerate back to healthy.
        assert!(low.lambda_min_n == high.lambda_min_n);
    }

    #[test]
    fn collapse_check_zero_perturbation_branches() {
        let mut rng = ChaCha12Rng::seed_from_u64(66);
        let (set, g) = static_scene(&mut rng, 40, 0.001);
        let metric = Metric::identity();
        let h = empirical_curvature(&set, &g).unwrap();
        let spec = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT).unwrap();
        let lambda_min = spec.observable_lambda_min().unwrap();

        // lambda_min = tau/2 case: low branch applies and passes.
        let check = verify_collapse_test(
            &spec,
            &Matrix6::zeros(),
            &cfg(1.0, 2.0 * lambda_min),
        )
        .unwrap();
        assert_eq!(check.low_branch, Some(true));
        assert_eq!(check.high_branch, None);
        assert!(check.weyl_sandwich);

        // lambda_min = 3 tau case: high branch applies and passes.
        let check = verify_collapse_test(
            &spec,
            &Matrix6::zeros(),
            &cfg(1.0, lambda_min / 3.0),
        )
        .unwrap();
        assert_eq!(check.low_branch, None);
        assert_eq!(check.high_branch, Some(true));
        assert!(check.weyl_sandwich);
    }

    #[test]
    fn collapse_check_rejects_inadmissible_perturbation() {
        let mut rng = ChaCha12Rng::seed_from_u64(67);
        let (set, g) = static_scene(&mut rng, 40, 0.001);
        let metric = Metric::identity();
        let h = empirical_curvature(&set, &g).unwrap();
        let spec = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT).unwrap();
        let lambda_min = spec.observable_lambda_min().unwrap();
        let too_big = Matrix6::identity() * (2.0 * lambda_min);
        assert!(verify_collapse_test(&spec, &too_big, &cfg(1.0, lambda_min)).is_err());

        let mut asym = Matrix6::zeros();
        asym[(0, 1)] = 0.1 * lambda_min;
        assert!(verify_collapse_test(&spec, &asym, &cfg(1.0, lambda_min)).is_err());
    }

    #[test]
    fn percentile_rule_matches_sorted_order() {
        let gois = vec![1.0, 5.0, 2.0, 4.0, 3.0];
        let tau = DetectorConfig::tau_goi_from_percentile(&gois, 0.95, 1.0).unwrap();
        assert_eq!(tau, 5.0);
        let tau = DetectorConfig::tau_goi_from_percentile(&gois, 0.5, 2.0).unwrap();
        assert_eq!(tau, 6.0);
        assert!(DetectorConfig::tau_goi_from_percentile(&[], 0.95, 1.0).is_err());
    }
}
