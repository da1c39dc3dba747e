//! Monte Carlo harnesses: Fisher equivalence, curvature concentration,
//! depth-scaling eigenvalue collapse, and solver stability.
//!
//! Each trial owns a dedicated rng sub-stream keyed by its grid cell, and
//! results are collected in cell order, so thread count never changes the
//! output. Errors that the theory predicts (basin escape, observability
//! collapse) are counted as failed trials rather than hidden.

use nalgebra::{Matrix6, SMatrix};
use rand::RngExt;
use rayon::prelude::*;

use crate::camera::{jacobian, Landmark};
use crate::curvature::{population_curvature, CurvatureSpectrum, RANK_THRESHOLD_DEFAULT};
use crate::error::{GoiError, Result};
use crate::estimator::{gauss_newton, error_twist, SolverConfig};
use crate::lie::{g_norm, Metric};
use crate::sim::stats::{op_norm_sym6, quantile, TrialRecord};
use crate::sim::{draw_landmarks, generate_scene, rng_stream, SceneSpec};

const LANDMARK_STREAM: u64 = 0;
const FISHER_CHUNK_BASE: u64 = 1 << 20;
const REF_CHUNK_BASE: u64 = 1 << 30;
const CONC_TRIAL_BASE: u64 = 1 << 31;
const STAB_CELL_BASE: u64 = 1 << 32;
const SWEEP_STREAM: u64 = 1 << 33;

/// Samples behind the frozen concentration reference curvature.
pub const REFERENCE_SAMPLES: usize = 10_000_000;
const REFERENCE_CHUNK: usize = 100_000;
const FISHER_CHUNK: usize = 1 << 16;

/// Result of one Fisher-equivalence check.
#[derive(Debug, Clone, Copy)]
pub struct FisherOutcome {
    pub n_mc: usize,
    /// `|| mean(psi psi^T) - H ||_F / ||H||_F`.
    pub deviation: f64,
}

/// Monte Carlo check that the score outer-product moment equals the exact
/// population curvature of a fixed landmark set. Landmarks are resampled
/// uniformly from the population per draw; noise is fresh per draw.
pub fn fisher_check_population(
    landmarks: &[Landmark],
    pose: &crate::lie::Pose,
    noise: &crate::camera::NoiseModel,
    n_mc: usize,
    base_seed: u64,
) -> Result<FisherOutcome> {
    if landmarks.is_empty() {
        return Err(GoiError::InvalidConfig("empty landmark population".into()));
    }
    if n_mc == 0 {
        return Err(GoiError::InvalidConfig("n_mc must be >= 1".into()));
    }
    let w = *noise.weight();
    let h = population_curvature(landmarks, pose, &w)?;

    // Residual at the true pose is the raw noise, so each draw only needs
    // the per-landmark factor J^T W.
    let jw: Vec<SMatrix<f64, 6, 2>> = landmarks
        .iter()
        .map(|x| Ok(jacobian(pose, x)?.transpose() * w))
        .collect::<Result<_>>()?;

    let n_chunks = n_mc.div_ceil(FISHER_CHUNK);
    let partials: Vec<Matrix6<f64>> = (0..n_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_stream(base_seed, FISHER_CHUNK_BASE + c as u64);
            let draws = FISHER_CHUNK.min(n_mc - c * FISHER_CHUNK);
            let mut acc = Matrix6::zeros();
            for _ in 0..draws {
                let idx = rng.random_range(0..landmarks.len());
                let eta = noise.sample(&mut rng);
                let psi = jw[idx] * eta;
                acc += psi * psi.transpose();
            }
            acc
        })
        .collect();
    let total: Matrix6<f64> = partials.iter().fold(Matrix6::zeros(), |a, b| a + b);
    let moment = total / n_mc as f64;
    Ok(FisherOutcome {
        n_mc,
        deviation: (moment - h).norm() / h.norm(),
    })
}

/// [`fisher_check_population`] over landmarks freshly drawn from the spec's
/// frustum.
pub fn fisher_check(spec: &SceneSpec, n_mc: usize, base_seed: u64) -> Result<FisherOutcome> {
    spec.validate()?;
    if spec.sigma <= 0.0 {
        return Err(GoiError::InvalidConfig(
            "fisher check requires positive noise".into(),
        ));
    }
    let mut rng = rng_stream(base_seed, LANDMARK_STREAM);
    let landmarks = draw_landmarks(spec, spec.n_points, &mut rng);
    let noise = spec.noise_model()?;
    fisher_check_population(&landmarks, &spec.pose_true, &noise, n_mc, base_seed)
}

/// Records plus the frozen reference curvature.
#[derive(Debug, Clone)]
pub struct ConcentrationOutcome {
    pub records: Vec<TrialRecord>,
    pub reference: Matrix6<f64>,
}

impl ConcentrationOutcome {
    /// Per-n empirical quantile of the deviation statistic.
    pub fn quantiles(&self, q: f64) -> Vec<(usize, f64)> {
        let mut ns: Vec<usize> = self.records.iter().map(|r| r.n).collect();
        ns.sort_unstable();
        ns.dedup();
        ns.into_iter()
            .map(|n| {
                let vals: Vec<f64> = self
                    .records
                    .iter()
                    .filter(|r| r.n == n)
                    .map(|r| r.value)
                    .collect();
                (n, quantile(&vals, q))
            })
            .collect()
    }
}

/// Sample `||H_n - H||_op` over a grid of sample sizes. The population
/// curvature over the continuous frustum distribution is estimated once from
/// [`REFERENCE_SAMPLES`] draws and frozen as the reference.
pub fn concentration_experiment(
    spec: &SceneSpec,
    n_grid: &[usize],
    trials: usize,
    base_seed: u64,
) -> Result<ConcentrationOutcome> {
    spec.validate()?;
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(GoiError::InvalidConfig("n_grid must be non-empty and positive".into()));
    }
    if trials == 0 {
        return Err(GoiError::InvalidConfig("trials must be >= 1".into()));
    }
    let noise = spec.noise_model()?;
    let w = *noise.weight();

    let n_ref_chunks = REFERENCE_SAMPLES / REFERENCE_CHUNK;
    let ref_partials: Vec<Matrix6<f64>> = (0..n_ref_chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_stream(base_seed, REF_CHUNK_BASE + c as u64);
            let mut acc = Matrix6::zeros();
            for x in draw_landmarks(spec, REFERENCE_CHUNK, &mut rng) {
                let j = jacobian(&spec.pose_true, &x).expect("frustum depth is positive");
                acc += j.transpose() * w * j;
            }
            acc
        })
        .collect();
    let reference = ref_partials.iter().fold(Matrix6::zeros(), |a, b| a + b)
        / REFERENCE_SAMPLES as f64;

    let cells: Vec<(usize, usize)> = n_grid
        .iter()
        .enumerate()
        .flat_map(|(ni, _)| (0..trials).map(move |t| (ni, t)))
        .collect();
    let records: Vec<TrialRecord> = cells
        .par_iter()
        .map(|&(ni, t)| {
            let n = n_grid[ni];
            let stream = CONC_TRIAL_BASE + (ni * trials + t) as u64;
            let mut rng = rng_stream(base_seed, stream);
            let mut acc = Matrix6::zeros();
            for x in draw_landmarks(spec, n, &mut rng) {
                let j = jacobian(&spec.pose_true, &x).expect("frustum depth is positive");
                acc += j.transpose() * w * j;
            }
            let h_n = acc / n as f64;
            TrialRecord::new(
                "concentration",
                n,
                spec.depth_scale,
                t,
                "h_op_deviation",
                op_norm_sym6(&(h_n - reference)),
                base_seed,
            )
        })
        .collect();
    Ok(ConcentrationOutcome { records, reference })
}

/// Spectrum snapshot at one depth scale.
#[derive(Debug, Clone)]
pub struct DepthSample {
    pub d: f64,
    /// All eigenvalues, ascending.
    pub lambdas: Vec<f64>,
    /// Translational energy fraction of each eigenvector.
    pub trans_fraction: Vec<f64>,
    /// Mean spectral norm of the translational Jacobian block.
    pub jt_norm_mean: f64,
}

impl DepthSample {
    /// Eigenvalues of translation-dominated directions, ascending.
    pub fn translational_lambdas(&self) -> Vec<f64> {
        self.lambdas
            .iter()
            .zip(&self.trans_fraction)
            .filter(|(_, &f)| f > 0.5)
            .map(|(&l, _)| l)
            .collect()
    }

    /// Eigenvalues of rotation-dominated directions, ascending.
    pub fn rotational_lambdas(&self) -> Vec<f64> {
        self.lambdas
            .iter()
            .zip(&self.trans_fraction)
            .filter(|(_, &f)| f <= 0.5)
            .map(|(&l, _)| l)
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct DegeneracySweep {
    pub samples: Vec<DepthSample>,
    pub records: Vec<TrialRecord>,
}

/// Population spectra over a family of depth scales with a fixed angular
/// point distribution: the same frustum draw is reused at every scale, so
/// eigenvalue trends across `d` are paired. Grid values replace the spec's
/// own depth scale.
pub fn degeneracy_sweep(
    spec: &SceneSpec,
    d_grid: &[f64],
    metric: &Metric,
    base_seed: u64,
) -> Result<DegeneracySweep> {
    spec.validate()?;
    if d_grid.is_empty() || d_grid.iter().any(|&d| d.is_nan() || d <= 0.0) {
        return Err(GoiError::InvalidConfig(
            "d_grid must be non-empty and positive".into(),
        ));
    }
    if d_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GoiError::InvalidConfig("d_grid must be ascending".into()));
    }
    let noise = spec.noise_model()?;
    let w = *noise.weight();

    // Fixed angular distribution: one base draw shared across scales.
    let mut rng = rng_stream(base_seed, SWEEP_STREAM);
    let base: Vec<(f64, f64, f64)> = (0..spec.n_points)
        .map(|_| {
            (
                rng.random_range(-spec.fov_margin..spec.fov_margin),
                rng.random_range(-spec.fov_margin..spec.fov_margin),
                rng.random_range(spec.depth_range[0]..spec.depth_range[1]),
            )
        })
        .collect();

    let pose = spec.pose_true;
    let mut samples = Vec::with_capacity(d_grid.len());
    let mut records = Vec::new();
    for &d in d_grid {
        let landmarks: Vec<Landmark> = base
            .iter()
            .map(|&(u, v, depth0)| {
                let depth = d * depth0;
                let cam = nalgebra::Vector3::new(u * depth, v * depth, depth);
                Landmark {
                    position: pose.rotation() * cam + pose.translation(),
                }
            })
            .collect();
        let h = population_curvature(&landmarks, &pose, &w)?;
        let spectrum = CurvatureSpectrum::eigendecompose(&h, metric, RANK_THRESHOLD_DEFAULT)?;

        let mut jt_sum = 0.0;
        for x in &landmarks {
            let j = jacobian(&pose, x)?;
            let jt = j.fixed_view::<2, 3>(0, 0).into_owned();
            // Spectral norm of the 2x3 block via its 2x2 Gram matrix.
            let gram = jt * jt.transpose();
            jt_sum += nalgebra::SymmetricEigen::new(gram)
                .eigenvalues
                .iter()
                .cloned()
                .fold(0.0, f64::max)
                .sqrt();
        }
        let jt_norm_mean = jt_sum / landmarks.len() as f64;

        let lambdas: Vec<f64> = (0..spectrum.len()).map(|i| spectrum.lambda(i)).collect();
        let trans_fraction: Vec<f64> = (0..spectrum.len())
            .map(|i| {
                let v = spectrum.vector(i);
                let trans = v.nu.norm_squared();
                trans / (trans + v.omega.norm_squared())
            })
            .collect();

        for (i, &l) in lambdas.iter().enumerate() {
            records.push(TrialRecord::new(
                "degeneracy-sweep",
                spec.n_points,
                d,
                0,
                &format!("lambda_{}", i + 1),
                l,
                base_seed,
            ));
            records.push(TrialRecord::new(
                "degeneracy-sweep",
                spec.n_points,
                d,
                0,
                &format!("trans_fraction_{}", i + 1),
                trans_fraction[i],
                base_seed,
            ));
        }
        records.push(TrialRecord::new(
            "degeneracy-sweep",
            spec.n_points,
            d,
            0,
            "jt_norm_mean",
            jt_norm_mean,
            base_seed,
        ));
        samples.push(DepthSample {
            d,
            lambdas,
            trans_fraction,
            jt_norm_mean,
        });
    }
    Ok(DegeneracySweep { samples, records })
}

#[derive(Debug, Clone)]
pub struct StabilityOutcome {
    pub records: Vec<TrialRecord>,
    /// Trials aborted by the basin guard or an observability collapse.
    pub failures: usize,
}

/// Solve freshly generated noisy scenes over an `(n, d)` grid from the true
/// pose and record the observable error norm together with the smallest
/// observable population eigenvalue of each trial's scene.
pub fn stability_experiment(
    spec: &SceneSpec,
    n_grid: &[usize],
    d_grid: &[f64],
    trials: usize,
    metric: &Metric,
    solver_cfg: &SolverConfig,
    base_seed: u64,
) -> Result<StabilityOutcome> {
    if n_grid.is_empty() || d_grid.is_empty() || trials == 0 {
        return Err(GoiError::InvalidConfig(
            "stability experiment needs non-empty grids and trials >= 1".into(),
        ));
    }
    // Pre-validate every cell's scene spec so the parallel stage cannot hit
    // configuration errors.
    for &n in n_grid {
        for &d in d_grid {
            SceneSpec {
                n_points: n,
                depth_scale: spec.depth_scale * d,
                ..*spec
            }
            .validate()?;
        }
    }

    let cells: Vec<(usize, usize, usize)> = n_grid
        .iter()
        .enumerate()
        .flat_map(|(ni, _)| {
            d_grid
                .iter()
                .enumerate()
                .flat_map(move |(di, _)| (0..trials).map(move |t| (ni, di, t)))
                .collect::<Vec<_>>()
        })
        .collect();

    let per_cell: Vec<Vec<TrialRecord>> = cells
        .par_iter()
        .map(|&(ni, di, t)| {
            let n = n_grid[ni];
            let d = d_grid[di];
            let cell_spec = SceneSpec {
                n_points: n,
                depth_scale: spec.depth_scale * d,
                ..*spec
            };
            let cell_id = (ni * d_grid.len() + di) * trials + t;
            let mut rng = rng_stream(base_seed, STAB_CELL_BASE + cell_id as u64);
            let scene = generate_scene(&cell_spec, metric, &mut rng)
                .expect("cell spec validated above");
            let g_star = scene.truth.pose_true;
            let h_pop = population_curvature(
                &scene.set.landmarks,
                &g_star,
                scene.set.noise.weight(),
            )
            .expect("frustum depth is positive");
            let spectrum =
                CurvatureSpectrum::eigendecompose(&h_pop, metric, RANK_THRESHOLD_DEFAULT)
                    .expect("metric validated");
            let lambda_min = spectrum.observable_lambda_min().unwrap_or(0.0);

            let mut recs = Vec::with_capacity(4);
            let mut push = |stat: &str, value: f64| {
                recs.push(TrialRecord::new(
                    "stability", n, d, t, stat, value, base_seed,
                ));
            };
            match gauss_newton(&scene.set, &g_star, metric, solver_cfg) {
                Ok(result) => {
                    let err = error_twist(&result.g_hat, &g_star, &spectrum)
                        .map(|e| g_norm(&e, metric));
                    match err {
                        Ok(e) => {
                            push("error_gnorm", e);
                            push("lambda_min", lambda_min);
                            push("converged", if result.converged { 1.0 } else { 0.0 });
                        }
                        Err(_) => push("failed", 1.0),
                    }
                }
                Err(
                    GoiError::BasinEscape { .. }
                    | GoiError::TotallyUnobservable
                    | GoiError::LogDomain { .. },
                ) => push("failed", 1.0),
                Err(other) => panic!("unexpected solver error: {other}"),
            }
            recs
        })
        .collect();

    let records: Vec<TrialRecord> = per_cell.into_iter().flatten().collect();
    let failures = records.iter().filter(|r| r.statistic == "failed").count();
    Ok(StabilityOutcome { records, failures })
}
