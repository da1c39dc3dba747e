//! Influence functions and the Geometric Observability Index (GOI).
//!
//! For a feature `z` the influence vector is `-H_OO^{-1} P_O psi(z)` and the
//! index is its G-norm. Both evaluation routes are first-class: the direct
//! restricted-inverse norm and the spectral sum
//! `sum psi_i^2 / lambda_i^2 * ||v_i||_G^2`; tests cross-check them against
//! each other rather than treating one as canonical.

use nalgebra::{Matrix2, Vector2};

use crate::camera::{jacobian, residual, Landmark, Observation};
use crate::curvature::{score, CurvatureSpectrum};
use crate::error::{GoiError, Result};
use crate::lie::{g_norm, Pose, Twist};

/// Everything the sensitivity pipeline derives for one feature.
#[derive(Debug, Clone)]
pub struct InfluenceReport {
    pub feature_id: usize,
    /// Raw score `J^T W r`.
    pub psi: Twist,
    /// Observable component `P_O psi`.
    pub psi_o: Twist,
    /// Influence vector `-H_OO^{-1} psi_O`.
    pub influence: Twist,
    /// `||influence||_G`; coincides with the spectral sum to rounding.
    pub goi: f64,
    /// Raw spectral coefficients over the observable indices.
    pub coefficients: Vec<f64>,
    /// Alignment with the weakest observable direction, in [0, 1].
    pub rho1: f64,
    /// Per-direction contributions `psi_i^2 / lambda_i^2 * ||v_i||_G^2`;
    /// they sum to `goi^2`.
    pub per_direction: Vec<f64>,
}

/// Run the full chain for one feature against a prebuilt spectrum.
pub fn influence(
    feature_id: usize,
    z: &Observation,
    g_star: &Pose,
    x: &Landmark,
    spec: &CurvatureSpectrum,
    w: &Matrix2<f64>,
) -> Result<InfluenceReport> {
    if spec.observable().is_empty() {
        return Err(GoiError::TotallyUnobservable);
    }
    let psi = score(z, g_star, x, w)?;
    report_from_score(feature_id, psi, spec)
}

/// Assemble a report from an already-computed score.
pub fn report_from_score(
    feature_id: usize,
    psi: Twist,
    spec: &CurvatureSpectrum,
) -> Result<InfluenceReport> {
    if spec.observable().is_empty() {
        return Err(GoiError::TotallyUnobservable);
    }
    let psi_o = spec.project_observable(&psi);
    let coefficients = spec.spectral_coefficients(&psi);
    let influence = spec.apply_restricted_inverse(&psi_o)?.neg();
    let goi = g_norm(&influence, spec.metric());
    let per_direction = per_direction_terms(&coefficients, spec);
    let rho1 = alignment_rho1(&coefficients, spec);
    debug_assert!({
        let spectral = per_direction.iter().sum::<f64>().sqrt();
        (spectral - goi).abs() <= 1e-6 * goi.max(1e-300)
    });
    Ok(InfluenceReport {
        feature_id,
        psi,
        psi_o,
        influence,
        goi,
        coefficients,
        rho1,
        per_direction,
    })
}

fn per_direction_terms(coefficients: &[f64], spec: &CurvatureSpectrum) -> Vec<f64> {
    coefficients
        .iter()
        .zip(spec.observable())
        .map(|(c, &i)| {
            let n = spec.vector_norm(i);
            (c / spec.lambda(i)).powi(2) * n * n
        })
        .collect()
}

/// Spectral-sum GOI from coefficients taken against the same spectrum.
pub fn goi_spectral(coefficients: &[f64], spec: &CurvatureSpectrum) -> f64 {
    per_direction_terms(coefficients, spec)
        .iter()
        .sum::<f64>()
        .sqrt()
}

/// Alignment ratio with the weakest observable direction:
/// `rho_1 = |psi_1| / sqrt(sum psi_i^2)` over G-unit-normalized coefficients
/// (`psi_i ||v_i||_G`), so the ratio is invariant under eigenvector
/// rescaling. An all-zero coefficient vector has alignment 0 by definition.
pub fn alignment_rho1(coefficients: &[f64], spec: &CurvatureSpectrum) -> f64 {
    let normalized: Vec<f64> = coefficients
        .iter()
        .zip(spec.observable())
        .map(|(c, &i)| c * spec.vector_norm(i))
        .collect();
    let total: f64 = normalized.iter().map(|c| c * c).sum();
    if total <= 0.0 {
        return 0.0;
    }
    (normalized[0].abs() / total.sqrt()).clamp(0.0, 1.0)
}

/// Geometric/bias decomposition for a feature whose residual splits as
/// `r = r_static + b_dynamic`. Returns `(goi_geom, goi_bias)`; the triangle
/// inequality `GOI(z) <= goi_geom + goi_bias` holds by construction.
pub fn dynamic_split(
    z: &Observation,
    g_star: &Pose,
    x: &Landmark,
    spec: &CurvatureSpectrum,
    w: &Matrix2<f64>,
    r_static: &Vector2<f64>,
    b_dynamic: &Vector2<f64>,
) -> Result<(f64, f64)> {
    let r = residual(z, g_star, x)?;
    let mismatch = (r - (r_static + b_dynamic)).norm();
    if mismatch > 1e-12 {
        return Err(GoiError::InconsistentSplit { mismatch });
    }
    let j = jacobian(g_star, x)?;
    let psi_s = Twist::from_vector(&(j.transpose() * w * r_static));
    let psi_b = Twist::from_vector(&(j.transpose() * w * b_dynamic));
    let geom = spec.apply_restricted_inverse(&spec.project_observable(&psi_s))?;
    let bias = spec.apply_restricted_inverse(&spec.project_observable(&psi_b))?;
    Ok((g_norm(&geom, spec.metric()), g_norm(&bias, spec.metric())))
}

/// Single-direction lower bound `|psi_{i*}| ||v_{i*}||_G / lambda_{i*}`,
/// guaranteed not to exceed the report's GOI.
pub fn sensitivity_lower_bound(
    report: &InfluenceReport,
    spec: &CurvatureSpectrum,
    i_star: usize,
) -> Result<f64> {
    let pos = spec
        .observable()
        .iter()
        .position(|&i| i == i_star)
        .ok_or(GoiError::UnobservableIndex { index: i_star })?;
    let c = report.coefficients[pos];
    Ok(c.abs() * spec.vector_norm(i_star) / spec.lambda(i_star))
}
