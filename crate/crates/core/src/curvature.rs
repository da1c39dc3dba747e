//! Score operator, empirical/population curvature, and the G-metric spectral
//! machinery: generalized eigendecomposition, observable subspace, projection
//! and restricted inversion.
//!
//! "G-eigenpairs" of a curvature matrix `H` are realized as the
//! symmetric-definite generalized eigenproblem `H v = lambda G v`, which makes
//! `H` self-adjoint in the G-inner product by construction and reduces to
//! ordinary eigenpairs when `G = I`. Eigenvectors are stored G-orthonormal,
//! but every downstream formula keeps its `||v_i||_G` factors so consumers may
//! rescale the basis without changing any derived quantity that should be
//! scale-free.

use nalgebra::{DMatrix, Matrix2, Matrix6, Vector6};

use crate::camera::{jacobian, residual, Landmark, NoiseModel, Observation};
use crate::error::{GoiError, Result};
use crate::lie::{g_inner, g_norm, Metric, Pose, Twist};

/// Default relative eigenvalue cutoff for the numerical rank of `H`.
pub const RANK_THRESHOLD_DEFAULT: f64 = 1e-10;

/// Absolute floor guarding the rank cutoff when `H` is numerically zero.
pub const RANK_EPS_ABS: f64 = 1e-14;

/// A batch of measurements with their landmarks and shared noise model.
#[derive(Debug, Clone)]
pub struct ObservationSet {
    pub observations: Vec<Observation>,
    pub landmarks: Vec<Landmark>,
    pub noise: NoiseModel,
    /// Ground-truth per-feature labels, available in simulation only.
    pub dynamic_labels: Option<Vec<bool>>,
}

impl ObservationSet {
    pub fn new(
        observations: Vec<Observation>,
        landmarks: Vec<Landmark>,
        noise: NoiseModel,
        dynamic_labels: Option<Vec<bool>>,
    ) -> Result<Self> {
        if observations.is_empty() {
            return Err(GoiError::InvalidConfig(
                "observation set must contain at least one measurement".into(),
            ));
        }
        for obs in &observations {
            if obs.landmark_id >= landmarks.len() {
                return Err(GoiError::InvalidConfig(format!(
                    "landmark_id {} out of range ({} landmarks)",
                    obs.landmark_id,
                    landmarks.len()
                )));
            }
        }
        if let Some(labels) = &dynamic_labels {
            if labels.len() != observations.len() {
                return Err(GoiError::InvalidConfig(
                    "dynamic label count does not match observation count".into(),
                ));
            }
        }
        Ok(Self {
            observations,
            landmarks,
            noise,
            dynamic_labels,
        })
    }

    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn landmark_of(&self, obs: &Observation) -> &Landmark {
        &self.landmarks[obs.landmark_id]
    }
}

/// Per-feature Gauss-Newton score `psi = J^T W r`.
pub fn score(z: &Observation, g: &Pose, x: &Landmark, w: &Matrix2<f64>) -> Result<Twist> {
    let j = jacobian(g, x)?;
    let r = residual(z, g, x)?;
    Ok(Twist::from_vector(&(j.transpose() * w * r)))
}

/// Empirical curvature `H_n = (1/n) sum J_i^T W J_i` over the set.
pub fn empirical_curvature(set: &ObservationSet, g: &Pose) -> Result<Matrix6<f64>> {
    let w = set.noise.weight();
    let mut h = Matrix6::zeros();
    for obs in &set.observations {
        let j = jacobian(g, set.landmark_of(obs))?;
        h += j.transpose() * w * j;
    }
    Ok(h / set.len() as f64)
}

/// Population curvature over a finite landmark population. The Jacobian is
/// independent of the measurement noise, so the expectation over a finite
/// population is an exact average; no sampling is involved.
pub fn population_curvature(
    landmarks: &[Landmark],
    g_star: &Pose,
    w: &Matrix2<f64>,
) -> Result<Matrix6<f64>> {
    if landmarks.is_empty() {
        return Err(GoiError::InvalidConfig(
            "population curvature needs at least one landmark".into(),
        ));
    }
    let mut h = Matrix6::zeros();
    for x in landmarks {
        let j = jacobian(g_star, x)?;
        h += j.transpose() * w * j;
    }
    Ok(h / landmarks.len() as f64)
}

/// G-eigenpairs of a curvature matrix with its observable index set.
///
/// Invariants as stored: `H v_i = lambda_i G v_i` (relative residual 1e-9),
/// `v_i^T G v_j = delta_ij`, eigenvalues ascending, and the observable set
/// is `{ i : lambda_i > rank_threshold * max(lambda_max, eps_abs) }`.
#[derive(Debug, Clone)]
pub struct CurvatureSpectrum {
    h: Matrix6<f64>,
    metric: Metric,
    lambdas: Vec<f64>,
    vectors: Vec<Twist>,
    observable: Vec<usize>,
    rank_threshold: f64,
}

impl CurvatureSpectrum {
    /// Solve the symmetric-definite generalized eigenproblem `H v = lambda G v`
    /// by Cholesky whitening of `G`.
    pub fn eigendecompose(h: &Matrix6<f64>, metric: &Metric, rank_threshold: f64) -> Result<Self> {
        if rank_threshold.is_nan() || rank_threshold <= 0.0 {
            return Err(GoiError::InvalidConfig(format!(
                "rank threshold must be positive, got {rank_threshold}"
            )));
        }
        let h_sym = (h + h.transpose()) * 0.5;
        let l = metric.cholesky().l();
        // C = L^{-1} H L^{-T}, symmetric with the same generalized spectrum.
        let a = l
            .solve_lower_triangular(&h_sym)
            .ok_or(GoiError::NotSpd { context: "metric" })?;
        let c = l
            .solve_lower_triangular(&a.transpose())
            .ok_or(GoiError::NotSpd { context: "metric" })?
            .transpose();
        let c = (c + c.transpose()) * 0.5;
        let eig = nalgebra::SymmetricEigen::new(c);

        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

        let lt = l.transpose();
        let mut lambdas = Vec::with_capacity(6);
        let mut vectors = Vec::with_capacity(6);
        for &idx in &order {
            lambdas.push(eig.eigenvalues[idx]);
            let q = eig.eigenvectors.column(idx).into_owned();
            let v = lt
                .solve_upper_triangular(&q)
                .ok_or(GoiError::NotSpd { context: "metric" })?;
            vectors.push(Twist::from_vector(&v));
        }
        let observable = observable_set(&lambdas, rank_threshold);
        Ok(Self {
            h: h_sym,
            metric: *metric,
            lambdas,
            vectors,
            observable,
            rank_threshold,
        })
    }

    /// Eigendecompose the restriction of `H` to an explicitly chosen subspace,
    /// given as a spanning set (G-orthonormalized internally). Supports the
    /// case where the subspace onto which influence is measured is supplied by
    /// the caller rather than taken as the numerical range of `H`.
    pub fn eigendecompose_in_span(
        h: &Matrix6<f64>,
        metric: &Metric,
        span: &[Twist],
        rank_threshold: f64,
    ) -> Result<Self> {
        if rank_threshold.is_nan() || rank_threshold <= 0.0 {
            return Err(GoiError::InvalidConfig(format!(
                "rank threshold must be positive, got {rank_threshold}"
            )));
        }
        let basis = g_orthonormalize(span, metric);
        if basis.is_empty() {
            return Err(GoiError::InvalidConfig(
                "spanning set is degenerate; no subspace basis survives".into(),
            ));
        }
        let h_sym = (h + h.transpose()) * 0.5;
        let k = basis.len();
        // Matrix of the restricted operator in the G-orthonormal basis.
        let hv: Vec<Vector6<f64>> = basis.iter().map(|b| h_sym * b.as_vector()).collect();
        let mut m = DMatrix::<f64>::zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                m[(i, j)] = basis[i].as_vector().dot(&hv[j]);
            }
        }
        let m = (&m + m.transpose()) * 0.5;
        let eig = m.symmetric_eigen();
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));

        let mut lambdas = Vec::with_capacity(k);
        let mut vectors = Vec::with_capacity(k);
        for &idx in &order {
            lambdas.push(eig.eigenvalues[idx]);
            let mut v = Vector6::zeros();
            for (row, b) in basis.iter().enumerate() {
                v += b.as_vector() * eig.eigenvectors[(row, idx)];
            }
            vectors.push(Twist::from_vector(&v));
        }
        let observable = observable_set(&lambdas, rank_threshold);
        Ok(Self {
            h: h_sym,
            metric: *metric,
            lambdas,
            vectors,
            observable,
            rank_threshold,
        })
    }

    pub fn h(&self) -> &Matrix6<f64> {
        &self.h
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    pub fn rank_threshold(&self) -> f64 {
        self.rank_threshold
    }

    /// Number of stored eigenpairs (6 unless restricted to a subspace).
    pub fn len(&self) -> usize {
        self.lambdas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambdas.is_empty()
    }

    pub fn lambda(&self, i: usize) -> f64 {
        self.lambdas[i]
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    pub fn vector(&self, i: usize) -> &Twist {
        &self.vectors[i]
    }

    /// Observable indices, ascending by eigenvalue.
    pub fn observable(&self) -> &[usize] {
        &self.observable
    }

    /// Smallest observable eigenvalue, if any direction is observable.
    pub fn observable_lambda_min(&self) -> Option<f64> {
        self.observable.first().map(|&i| self.lambdas[i])
    }

    /// Largest observable eigenvalue.
    pub fn observable_lambda_max(&self) -> Option<f64> {
        self.observable.last().map(|&i| self.lambdas[i])
    }

    /// Index of the weakest observable direction (`v_1` in spectral formulas).
    pub fn weakest_index(&self) -> Option<usize> {
        self.observable.first().copied()
    }

    /// G-norm of the stored eigenvector `v_i`.
    pub fn vector_norm(&self, i: usize) -> f64 {
        g_norm(&self.vectors[i], &self.metric)
    }

    /// G-orthogonal projection onto the observable subspace:
    /// `P_O psi = sum v_i <psi, v_i>_G / ||v_i||_G^2`.
    pub fn project_observable(&self, psi: &Twist) -> Twist {
        let mut out = Vector6::zeros();
        for &i in &self.observable {
            let v = &self.vectors[i];
            let c = g_inner(psi, v, &self.metric) / g_inner(v, v, &self.metric);
            out += v.as_vector() * c;
        }
        Twist::from_vector(&out)
    }

    /// Raw spectral coefficients over the observable indices:
    /// `psi_i = <P_O psi, v_i>_G / ||v_i||_G^2`, so `P_O psi = sum psi_i v_i`.
    pub fn spectral_coefficients(&self, psi: &Twist) -> Vec<f64> {
        self.observable
            .iter()
            .map(|&i| {
                let v = &self.vectors[i];
                g_inner(psi, v, &self.metric) / g_inner(v, v, &self.metric)
            })
            .collect()
    }

    /// Restricted inverse on the observable subspace:
    /// `H_OO^{-1} psi_O = sum (psi_i / lambda_i) v_i`.
    pub fn apply_restricted_inverse(&self, psi_o: &Twist) -> Result<Twist> {
        if self.observable.is_empty() {
            return Err(GoiError::TotallyUnobservable);
        }
        let mut out = Vector6::zeros();
        for &i in &self.observable {
            let v = &self.vectors[i];
            let c = g_inner(psi_o, v, &self.metric) / g_inner(v, v, &self.metric);
            out += v.as_vector() * (c / self.lambdas[i]);
        }
        Ok(Twist::from_vector(&out))
    }

    /// Matrix of another curvature operator restricted to this spectrum's
    /// observable subspace, expressed in the G-normalized eigenbasis. For the
    /// spectrum's own `H` this is `diag(lambda_i)` over the observable set.
    pub fn restricted_matrix(&self, m: &Matrix6<f64>) -> DMatrix<f64> {
        let k = self.observable.len();
        let mut out = DMatrix::zeros(k, k);
        for (a, &i) in self.observable.iter().enumerate() {
            let vi = self.vectors[i].as_vector() / self.vector_norm(i);
            for (b, &j) in self.observable.iter().enumerate() {
                let vj = self.vectors[j].as_vector() / self.vector_norm(j);
                out[(a, b)] = (vi.transpose() * m * vj)[(0, 0)];
            }
        }
        out
    }

    /// Copy of this spectrum with each eigenvector rescaled by the paired
    /// positive factor. Eigenpairs stay valid (`H v = lambda G v` is
    /// homogeneous); scale-free formulas must be unaffected by this.
    pub fn rescaled(&self, factors: &[f64]) -> Result<Self> {
        if factors.len() != self.vectors.len() {
            return Err(GoiError::InvalidConfig(
                "one scale factor per eigenvector required".into(),
            ));
        }
        if factors.iter().any(|f| f.is_nan() || *f <= 0.0) {
            return Err(GoiError::InvalidConfig(
                "eigenvector scale factors must be positive".into(),
            ));
        }
        let vectors = self
            .vectors
            .iter()
            .zip(factors)
            .map(|(v, &f)| v.scaled(f))
            .collect();
        Ok(Self {
            vectors,
            ..self.clone()
        })
    }
}

fn observable_set(lambdas: &[f64], rank_threshold: f64) -> Vec<usize> {
    let lambda_max = lambdas.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let cutoff = rank_threshold * lambda_max.max(RANK_EPS_ABS);
    (0..lambdas.len())
        .filter(|&i| lambdas[i] > cutoff)
        .collect()
}

/// Modified Gram-Schmidt in the G-inner product; near-dependent vectors are
/// dropped.
fn g_orthonormalize(span: &[Twist], metric: &Metric) -> Vec<Twist> {
    let mut basis: Vec<Twist> = Vec::new();
    for v in span {
        let mut u = v.as_vector();
        for b in &basis {
            let c = g_inner(&Twist::from_vector(&u), b, metric);
            u -= b.as_vector() * c;
        }
        let u_twist = Twist::from_vector(&u);
        let n = g_norm(&u_twist, metric);
        if n > 1e-12 * g_norm(v, metric).max(1.0) {
            basis.push(u_twist.scaled(1.0 / n));
        }
    }
    basis
}
