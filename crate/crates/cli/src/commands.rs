//! Subcommand implementations.

use std::fs;
use std::path::Path;

use nalgebra::{Vector2, Vector3};
use rand::RngExt;

use goi_kit::camera::{
    jacobian, jacobian_finite_difference, Landmark, NoiseModel, Observation,
};
use goi_kit::curvature::{population_curvature, CurvatureSpectrum, RANK_THRESHOLD_DEFAULT};
use goi_kit::detectors::{
    detect_degeneracy, detect_dynamic, DetectorConfig, DynamicScan, Verdict,
};
use goi_kit::estimator::{gauss_newton, SolverConfig};
use goi_kit::io::{MetricFile, PoseJson, SceneFile, SpectrumDump};
use goi_kit::lie::{exp_se3, Metric, Pose, Twist};
use goi_kit::sim::stats::{fit_loglog_slope, median};
use goi_kit::sim::{
    concentration_experiment, degeneracy_sweep, fisher_check, fisher_check_population,
    rng_stream, stability_experiment, synthesize_observations, BiasMode, DynamicInjection,
    SceneSpec, SimScene, TrialRecord,
};

use crate::output::{emit, emit_experiment, report_csv, report_json};
use crate::{BiasModeArg, Command, Common, Format, Injection};

/// Stream id for CLI-side observation synthesis.
const OBS_STREAM: u64 = 500;
const VERIFY_STREAM: u64 = 501;

type CmdResult = Result<u8, String>;

pub fn run(command: Command) -> CmdResult {
    let threads = common_of(&command).threads;
    if threads == 0 {
        return Err("threads must be >= 1".into());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| format!("cannot build thread pool: {e}"))?;
    pool.install(|| dispatch(command))
}

fn common_of(command: &Command) -> &Common {
    match command {
        Command::VerifyJacobian { common, .. }
        | Command::FisherCheck { common, .. }
        | Command::Concentration { common, .. }
        | Command::DegeneracySweep { common, .. }
        | Command::Stability { common, .. }
        | Command::GoiReport { common, .. }
        | Command::DetectDynamic { common, .. }
        | Command::DetectDegeneracy { common, .. }
        | Command::Solve { common, .. } => common,
    }
}

fn dispatch(command: Command) -> CmdResult {
    match command {
        Command::VerifyJacobian { common, trials } => verify_jacobian(&common, trials),
        Command::FisherCheck { common, n_grid } => fisher(&common, &n_grid),
        Command::Concentration {
            common,
            n_grid,
            trials,
        } => concentration(&common, &n_grid, trials),
        Command::DegeneracySweep { common, d_grid } => sweep(&common, &d_grid),
        Command::Stability {
            common,
            n_grid,
            d_grid,
            trials,
        } => stability(&common, &n_grid, &d_grid, trials),
        Command::GoiReport {
            common,
            injection,
            tau_goi,
            tau_rho,
        } => dynamic_scan(&common, &injection, tau_goi, tau_rho, false),
        Command::DetectDynamic {
            common,
            injection,
            tau_goi,
            tau_rho,
        } => dynamic_scan(&common, &injection, tau_goi, tau_rho, true),
        Command::DetectDegeneracy { common, tau_lambda } => degeneracy(&common, tau_lambda),
        Command::Solve { common, init } => solve(&common, init.as_deref()),
    }
}

fn load_metric(common: &Common) -> Result<Metric, String> {
    match &common.g_metric {
        None => Ok(Metric::identity()),
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read metric file {}: {e}", path.display()))?;
            let file: MetricFile = serde_json::from_str(&text)
                .map_err(|e| format!("malformed metric file {}: {e}", path.display()))?;
            file.to_metric().map_err(|e| e.to_string())
        }
    }
}

fn load_scene_file(path: &Path) -> Result<(Vec<Landmark>, Pose, NoiseModel), String> {
    let text = fs::read_to_string(path)
        .map_err(|e| format!("cannot read scene file {}: {e}", path.display()))?;
    let file: SceneFile = serde_json::from_str(&text)
        .map_err(|e| format!("malformed scene file {}: {e}", path.display()))?;
    file.to_parts().map_err(|e| e.to_string())
}

fn reject_scene(common: &Common, experiment: &str) -> Result<(), String> {
    if common.scene.is_some() {
        return Err(format!(
            "{experiment} draws its own landmark population; --scene is not supported"
        ));
    }
    Ok(())
}

/// Synthesize the observation set a detector or solver consumes: landmarks,
/// pose, and noise from the scene file (or the default synthetic scene), with
/// measurements drawn from the seed's dedicated stream.
fn synthesize_scene(
    common: &Common,
    injection: &DynamicInjection,
    metric: &Metric,
) -> Result<SimScene, String> {
    let mut rng = rng_stream(common.seed, OBS_STREAM);
    match &common.scene {
        Some(path) => {
            let (landmarks, pose, noise) = load_scene_file(path)?;
            synthesize_observations(&landmarks, &pose, &noise, true, injection, metric, &mut rng)
                .map_err(|e| e.to_string())
        }
        None => {
            let spec = SceneSpec {
                dynamic_fraction: injection.fraction,
                bias_magnitude: injection.magnitude,
                bias_mode: injection.mode,
                ..SceneSpec::default()
            };
            goi_kit::sim::generate_scene(&spec, metric, &mut rng).map_err(|e| e.to_string())
        }
    }
}

impl From<BiasModeArg> for BiasMode {
    fn from(arg: BiasModeArg) -> Self {
        match arg {
            BiasModeArg::Random => BiasMode::Random,
            BiasModeArg::WeakAligned => BiasMode::WeakAligned,
        }
    }
}

fn injection_of(inj: &Injection) -> DynamicInjection {
    DynamicInjection {
        fraction: inj.dynamic_fraction,
        magnitude: inj.bias_magnitude,
        mode: inj.bias_mode.into(),
    }
}

fn verify_jacobian(common: &Common, trials: usize) -> CmdResult {
    if trials == 0 {
        return Err("trials must be >= 1".into());
    }
    let mut rng = rng_stream(common.seed, VERIFY_STREAM);
    let mut records = Vec::with_capacity(trials);
    let mut max_rel: f64 = 0.0;
    for case in 0..trials {
        let nu = Vector3::new(
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
            rng.random_range(-0.5..0.5),
        );
        let mut omega = Vector3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let norm = omega.norm();
        if norm > 0.0 {
            omega *= rng.random_range(0.0..0.5) / norm;
        }
        let g = exp_se3(&Twist::new(nu, omega));
        let depth = rng.random_range(1.0..50.0);
        let cam = Vector3::new(
            rng.random_range(-0.5..0.5) * depth,
            rng.random_range(-0.5..0.5) * depth,
            depth,
        );
        let x = Landmark {
            position: g.rotation() * cam + g.translation(),
        };
        let z = Observation::new(
            Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)),
            0,
        )
        .map_err(|e| e.to_string())?;
        let analytic = jacobian(&g, &x).map_err(|e| e.to_string())?;
        let fd = jacobian_finite_difference(&z, &g, &x, 1e-6).map_err(|e| e.to_string())?;
        let rel = (analytic - fd).norm() / analytic.norm();
        max_rel = max_rel.max(rel);
        records.push(TrialRecord::new(
            "verify-jacobian",
            trials,
            1.0,
            case,
            "rel_error",
            rel,
            common.seed,
        ));
    }
    let pass = max_rel < 1e-5;
    let summary = serde_json::json!({
        "experiment": "verify-jacobian",
        "seed": common.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "cases": trials,
        "max_rel_error": max_rel,
        "tolerance": 1e-5,
        "pass": pass,
    });
    emit_experiment(
        &common.out,
        &records,
        &summary,
        &format!("verify-jacobian cases={trials} max_rel_error={max_rel} pass={pass}"),
    )?;
    if pass {
        Ok(0)
    } else {
        Err(format!("jacobian check failed: max relative error {max_rel}"))
    }
}

fn fisher(common: &Common, n_grid: &[usize]) -> CmdResult {
    if n_grid.is_empty() {
        return Err("n_grid must be non-empty".into());
    }
    let mut records = Vec::new();
    let mut points = Vec::new();
    for &n_mc in n_grid {
        let outcome = match &common.scene {
            Some(path) => {
                let (landmarks, pose, noise) = load_scene_file(path)?;
                fisher_check_population(&landmarks, &pose, &noise, n_mc, common.seed)
            }
            None => fisher_check(
                &SceneSpec {
                    n_points: 20,
                    ..SceneSpec::default()
                },
                n_mc,
                common.seed,
            ),
        }
        .map_err(|e| e.to_string())?;
        points.push((n_mc as f64, outcome.deviation));
        records.push(TrialRecord::new(
            "fisher-check",
            n_mc,
            1.0,
            0,
            "deviation",
            outcome.deviation,
            common.seed,
        ));
    }
    let slope = (points.len() >= 2).then(|| fit_loglog_slope(&points).0);
    let final_dev = points.last().unwrap().1;
    let summary = serde_json::json!({
        "experiment": "fisher-check",
        "seed": common.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "n_grid": n_grid,
        "final_deviation": final_dev,
        "slope": slope,
        "expected_slope": -0.5,
        "slope_tolerance": 0.1,
    });
    let line = match slope {
        Some(s) => format!("fisher-check final_deviation={final_dev} slope={s}"),
        None => format!("fisher-check final_deviation={final_dev}"),
    };
    emit_experiment(&common.out, &records, &summary, &line)?;
    Ok(0)
}

fn concentration(common: &Common, n_grid: &[usize], trials: usize) -> CmdResult {
    reject_scene(common, "concentration")?;
    let spec = SceneSpec::default();
    let outcome =
        concentration_experiment(&spec, n_grid, trials, common.seed).map_err(|e| e.to_string())?;
    let q90 = outcome.quantiles(0.9);
    let points: Vec<(f64, f64)> = q90.iter().map(|&(n, q)| (n as f64, q)).collect();
    let slope = (points.len() >= 2).then(|| fit_loglog_slope(&points).0);
    let summary = serde_json::json!({
        "experiment": "concentration",
        "seed": common.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "n_grid": n_grid,
        "trials": trials,
        "quantile_0_9": q90.iter().map(|&(n, q)| serde_json::json!({"n": n, "q": q})).collect::<Vec<_>>(),
        "slope": slope,
        "expected_slope": -0.5,
        "slope_tolerance": 0.1,
    });
    let line = match slope {
        Some(s) => format!("concentration cells={} slope={s}", outcome.records.len()),
        None => format!("concentration cells={}", outcome.records.len()),
    };
    emit_experiment(&common.out, &outcome.records, &summary, &line)?;
    Ok(0)
}

fn sweep(common: &Common, d_grid: &[f64]) -> CmdResult {
    reject_scene(common, "degeneracy-sweep")?;
    let metric = load_metric(common)?;
    let spec = SceneSpec {
        n_points: 400,
        ..SceneSpec::default()
    };
    let result = degeneracy_sweep(&spec, d_grid, &metric, common.seed).map_err(|e| e.to_string())?;
    // Eigenvalues can round to zero or below once collapse reaches machine
    // precision; exclude those points from the fit.
    let trans_points: Vec<(f64, f64)> = result
        .samples
        .iter()
        .filter_map(|s| s.translational_lambdas().first().map(|&l| (s.d, l)))
        .filter(|&(_, l)| l > 0.0)
        .collect();
    let trans_slope = (trans_points.len() >= 2).then(|| fit_loglog_slope(&trans_points).0);
    let jt_points: Vec<(f64, f64)> = result.samples.iter().map(|s| (s.d, s.jt_norm_mean)).collect();
    let jt_slope = (jt_points.len() >= 2).then(|| fit_loglog_slope(&jt_points).0);
    let summary = serde_json::json!({
        "experiment": "degeneracy-sweep",
        "seed": common.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "d_grid": d_grid,
        "translational_slope": trans_slope,
        "expected_translational_slope": -2.0,
        "slope_tolerance": 0.2,
        "jt_norm_slope": jt_slope,
    });
    let line = match (trans_slope, jt_slope) {
        (Some(t), Some(j)) => {
            format!("degeneracy-sweep depths={} lambda_slope={t} jt_slope={j}", d_grid.len())
        }
        _ => format!("degeneracy-sweep depths={}", d_grid.len()),
    };
    emit_experiment(&common.out, &result.records, &summary, &line)?;
    Ok(0)
}

fn stability(common: &Common, n_grid: &[usize], d_grid: &[f64], trials: usize) -> CmdResult {
    reject_scene(common, "stability")?;
    let metric = load_metric(common)?;
    let spec = SceneSpec::default();
    let outcome = stability_experiment(
        &spec,
        n_grid,
        d_grid,
        trials,
        &metric,
        &SolverConfig::default(),
        common.seed,
    )
    .map_err(|e| e.to_string())?;

    // Median error against n at the first depth scale.
    let d0 = d_grid[0];
    let mut n_points_fit = Vec::new();
    for &n in n_grid {
        let vals: Vec<f64> = outcome
            .records
            .iter()
            .filter(|r| r.statistic == "error_gnorm" && r.n == n && r.d == d0)
            .map(|r| r.value)
            .collect();
        if !vals.is_empty() {
            n_points_fit.push((n as f64, median(&vals)));
        }
    }
    let slope_n = (n_points_fit.len() >= 2
        && n_points_fit.iter().all(|&(_, m)| m > 0.0))
    .then(|| fit_loglog_slope(&n_points_fit).0);

    // Median error against measured lambda_min at the first n.
    let n0 = n_grid[0];
    let mut l_points = Vec::new();
    for &d in d_grid {
        let errs: Vec<f64> = outcome
            .records
            .iter()
            .filter(|r| r.statistic == "error_gnorm" && r.n == n0 && r.d == d)
            .map(|r| r.value)
            .collect();
        let lams: Vec<f64> = outcome
            .records
            .iter()
            .filter(|r| r.statistic == "lambda_min" && r.n == n0 && r.d == d)
            .map(|r| r.value)
            .collect();
        if !errs.is_empty() && !lams.is_empty() {
            l_points.push((median(&lams), median(&errs)));
        }
    }
    let slope_lambda = (l_points.len() >= 2
        && l_points.iter().all(|&(l, m)| l > 0.0 && m > 0.0))
    .then(|| fit_loglog_slope(&l_points).0);

    let summary = serde_json::json!({
        "experiment": "stability",
        "seed": common.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "n_grid": n_grid,
        "d_grid": d_grid,
        "trials": trials,
        "failures": outcome.failures,
        "slope_error_vs_n": slope_n,
        "expected_slope_vs_n": -0.5,
        "slope_error_vs_lambda_min": slope_lambda,
        "expected_slope_vs_lambda_min": -1.0,
    });
    let line = format!(
        "stability cells={} failures={}",
        n_grid.len() * d_grid.len() * trials,
        outcome.failures
    );
    emit_experiment(&common.out, &outcome.records, &summary, &line)?;
    Ok(0)
}

fn scan_scene(
    common: &Common,
    injection: &Injection,
    tau_goi: Option<f64>,
    tau_rho: f64,
) -> Result<(DynamicScan, f64), String> {
    let metric = load_metric(common)?;
    let scene = synthesize_scene(common, &injection_of(injection), &metric)?;
    let g = scene.truth.pose_true;

    // First pass with a permissive threshold to obtain the sensitivity
    // values, then resolve tau_goi by the percentile rule if not given.
    let probe_cfg = DetectorConfig::new(1e300, tau_rho, 1.0, RANK_THRESHOLD_DEFAULT)
        .map_err(|e| e.to_string())?;
    let probe = detect_dynamic(&scene.set, &g, &metric, &probe_cfg).map_err(|e| e.to_string())?;
    let resolved_tau = match tau_goi {
        Some(t) => t,
        None => {
            let gois: Vec<f64> = probe.reports.iter().map(|r| r.goi).collect();
            DetectorConfig::tau_goi_from_percentile(&gois, 0.95, 1.0).map_err(|e| e.to_string())?
        }
    };
    if resolved_tau <= 0.0 {
        // All sensitivities zero (noiseless static scene): nothing can flag.
        let flags = vec![false; probe.reports.len()];
        return Ok((
            DynamicScan {
                flags,
                ..probe
            },
            resolved_tau,
        ));
    }
    let cfg = DetectorConfig::new(resolved_tau, tau_rho, 1.0, RANK_THRESHOLD_DEFAULT)
        .map_err(|e| e.to_string())?;
    let scan = detect_dynamic(&scene.set, &g, &metric, &cfg).map_err(|e| e.to_string())?;
    Ok((scan, resolved_tau))
}

fn dynamic_scan(
    common: &Common,
    injection: &Injection,
    tau_goi: Option<f64>,
    tau_rho: f64,
    exit_on_flags: bool,
) -> CmdResult {
    let (scan, resolved_tau) = scan_scene(common, injection, tau_goi, tau_rho)?;
    let n_flagged = scan.flags.iter().filter(|&&f| f).count();
    let text = match common.format {
        Format::Csv => report_csv(&scan),
        Format::Json => format!("{:#}\n", report_json(&scan, common.seed)),
    };
    emit(&common.out, &text)?;
    println!(
        "{} features={} flagged={n_flagged} tau_goi={resolved_tau} tau_rho={tau_rho}{}",
        if exit_on_flags { "detect-dynamic" } else { "goi-report" },
        scan.reports.len(),
        if scan.rank_warning {
            " rank_warning=true"
        } else {
            ""
        }
    );
    if exit_on_flags && n_flagged > 0 {
        Ok(2)
    } else {
        Ok(0)
    }
}

fn degeneracy(common: &Common, tau_lambda: Option<f64>) -> CmdResult {
    let metric = load_metric(common)?;
    let scene = synthesize_scene(common, &DynamicInjection::none(), &metric)?;
    let g = scene.truth.pose_true;

    // Resolve tau by the 1e-6 * lambda_max rule when not given.
    let probe_cfg =
        DetectorConfig::new(1.0, 0.5, f64::MIN_POSITIVE, RANK_THRESHOLD_DEFAULT).unwrap();
    let probe = detect_degeneracy(&scene.set, &g, &metric, &probe_cfg).map_err(|e| e.to_string())?;
    let resolved_tau = match tau_lambda {
        Some(t) => t,
        None => DetectorConfig::tau_lambda_from_spectrum(&probe.spectrum, 1e-6)
            .map_err(|e| e.to_string())?,
    };
    let cfg = DetectorConfig::new(1.0, 0.5, resolved_tau, RANK_THRESHOLD_DEFAULT)
        .map_err(|e| e.to_string())?;
    let verdict = detect_degeneracy(&scene.set, &g, &metric, &cfg).map_err(|e| e.to_string())?;

    let payload = serde_json::json!({
        "experiment": "detect-degeneracy",
        "seed": common.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "lambda_min_n": verdict.lambda_min_n,
        "tau_lambda": resolved_tau,
        "verdict": verdict.verdict.to_string(),
        "spectrum": SpectrumDump::from_spectrum(&verdict.spectrum),
    });
    emit(&common.out, &format!("{payload:#}\n"))?;
    println!(
        "detect-degeneracy lambda_min_n={} tau_lambda={resolved_tau} verdict={}",
        verdict.lambda_min_n, verdict.verdict
    );
    Ok(if verdict.verdict == Verdict::NearDegenerate {
        3
    } else {
        0
    })
}

fn solve(common: &Common, init: Option<&Path>) -> CmdResult {
    let metric = load_metric(common)?;
    let scene = synthesize_scene(common, &DynamicInjection::none(), &metric)?;
    let g_star = scene.truth.pose_true;
    let g0 = match init {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(|e| format!("cannot read pose file {}: {e}", path.display()))?;
            let pose: PoseJson = serde_json::from_str(&text)
                .map_err(|e| format!("malformed pose file {}: {e}", path.display()))?;
            pose.to_pose().map_err(|e| e.to_string())?
        }
        None => g_star,
    };
    let h = population_curvature(&scene.set.landmarks, &g_star, scene.set.noise.weight())
        .map_err(|e| e.to_string())?;
    let spectrum = CurvatureSpectrum::eigendecompose(&h, &metric, RANK_THRESHOLD_DEFAULT)
        .map_err(|e| e.to_string())?;
    let result = gauss_newton(&scene.set, &g0, &metric, &SolverConfig::default())
        .map_err(|e| e.to_string())?
        .with_error_against(&g_star, &spectrum)
        .map_err(|e| e.to_string())?;

    let xi = result.xi_error_o.as_ref().map(|t| {
        let v = t.as_vector();
        vec![v[0], v[1], v[2], v[3], v[4], v[5]]
    });
    let payload = serde_json::json!({
        "experiment": "solve",
        "seed": common.seed,
        "version": env!("CARGO_PKG_VERSION"),
        "converged": result.converged,
        "iterations": result.iterations,
        "final_score_norm": result.final_score_norm,
        "g_hat": PoseJson::from_pose(&result.g_hat),
        "xi_error_o": xi,
    });
    emit(&common.out, &format!("{payload:#}\n"))?;
    println!(
        "solve converged={} iterations={} final_score_norm={}",
        result.converged, result.iterations, result.final_score_norm
    );
    Ok(0)
}
