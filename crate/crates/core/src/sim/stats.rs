//! Small statistics utilities shared by the experiment harnesses.

use nalgebra::Matrix6;

/// One named statistic from one experiment trial. Records are keyed by
/// `(experiment, n, d, trial, statistic)` so aggregation never depends on
/// execution order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub experiment: String,
    pub n: usize,
    pub d: f64,
    pub trial: usize,
    pub statistic: String,
    pub value: f64,
    pub seed: u64,
}

impl TrialRecord {
    pub fn new(
        experiment: &str,
        n: usize,
        d: f64,
        trial: usize,
        statistic: &str,
        value: f64,
        seed: u64,
    ) -> Self {
        Self {
            experiment: experiment.to_string(),
            n,
            d,
            trial,
            statistic: statistic.to_string(),
            value,
            seed,
        }
    }
}

/// Nearest-rank empirical quantile: the `ceil(q n)`-th smallest value.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of empty sample");
    assert!((0.0..=1.0).contains(&q), "quantile level out of range");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let rank = (q * n as f64).ceil() as usize;
    sorted[rank.clamp(1, n) - 1]
}

pub fn median(values: &[f64]) -> f64 {
    quantile(values, 0.5)
}

/// Least-squares slope and intercept of `ln y` against `ln x`.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> (f64, f64) {
    assert!(points.len() >= 2, "slope fit needs at least two points");
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| {
            assert!(x > 0.0 && y > 0.0, "log-log fit needs positive data");
            (x.ln(), y.ln())
        })
        .collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &logs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    let slope = sxy / sxx;
    (slope, mean_y - slope * mean_x)
}

/// Spectral norm of a symmetric 6x6 matrix.
pub fn op_norm_sym6(m: &Matrix6<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    nalgebra::SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .map(|l| l.abs())
        .fold(0.0, f64::max)
}
