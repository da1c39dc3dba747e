//! File schemas shared with the command-line tools.

use nalgebra::{Matrix2, Matrix3, Matrix6, Vector3};
use serde::{Deserialize, Serialize};

use crate::camera::{Landmark, NoiseModel};
use crate::curvature::CurvatureSpectrum;
use crate::error::{GoiError, Result};
use crate::lie::{Metric, Pose};

/// Pose as row-major rotation plus translation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PoseJson {
    pub r: [[f64; 3]; 3],
    pub t: [f64; 3],
}

impl PoseJson {
    pub fn from_pose(pose: &Pose) -> Self {
        let r = pose.rotation();
        Self {
            r: [
                [r[(0, 0)], r[(0, 1)], r[(0, 2)]],
                [r[(1, 0)], r[(1, 1)], r[(1, 2)]],
                [r[(2, 0)], r[(2, 1)], r[(2, 2)]],
            ],
            t: [pose.translation().x, pose.translation().y, pose.translation().z],
        }
    }

    pub fn to_pose(&self) -> Result<Pose> {
        let r = Matrix3::from_fn(|i, j| self.r[i][j]);
        Pose::new(r, Vector3::new(self.t[0], self.t[1], self.t[2]))
    }
}

/// Scene file: landmarks, true pose, and the 2x2 noise covariance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneFile {
    pub landmarks: Vec<[f64; 3]>,
    pub pose: PoseJson,
    pub sigma: [[f64; 2]; 2],
}

impl SceneFile {
    pub fn from_parts(landmarks: &[Landmark], pose: &Pose, noise: &NoiseModel) -> Self {
        let s = noise.sigma();
        Self {
            landmarks: landmarks
                .iter()
                .map(|l| [l.position.x, l.position.y, l.position.z])
                .collect(),
            pose: PoseJson::from_pose(pose),
            sigma: [[s[(0, 0)], s[(0, 1)]], [s[(1, 0)], s[(1, 1)]]],
        }
    }

    pub fn to_parts(&self) -> Result<(Vec<Landmark>, Pose, NoiseModel)> {
        if self.landmarks.is_empty() {
            return Err(GoiError::InvalidConfig(
                "scene file contains no landmarks".into(),
            ));
        }
        let landmarks = self
            .landmarks
            .iter()
            .map(|&[x, y, z]| Landmark::new(Vector3::new(x, y, z)))
            .collect::<Result<Vec<_>>>()?;
        let pose = self.pose.to_pose()?;
        let sigma = Matrix2::new(
            self.sigma[0][0],
            self.sigma[0][1],
            self.sigma[1][0],
            self.sigma[1][1],
        );
        Ok((landmarks, pose, NoiseModel::new(sigma)?))
    }
}

/// Spectrum dump: eigenvalues ascending, eigenvectors as rows (G-orthonormal
/// as stored), observable index set, and the rank cutoff used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumDump {
    pub lambda: Vec<f64>,
    pub vectors: Vec<[f64; 6]>,
    pub observable: Vec<usize>,
    pub rank_threshold: f64,
}

impl SpectrumDump {
    pub fn from_spectrum(spec: &CurvatureSpectrum) -> Self {
        Self {
            lambda: spec.lambdas().to_vec(),
            vectors: (0..spec.len())
                .map(|i| {
                    let v = spec.vector(i).as_vector();
                    [v[0], v[1], v[2], v[3], v[4], v[5]]
                })
                .collect(),
            observable: spec.observable().to_vec(),
            rank_threshold: spec.rank_threshold(),
        }
    }
}

/// Row-major 6x6 metric file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MetricFile(pub [[f64; 6]; 6]);

impl MetricFile {
    pub fn to_metric(&self) -> Result<Metric> {
        Metric::new(Matrix6::from_fn(|i, j| self.0[i][j]))
    }

    pub fn from_metric(metric: &Metric) -> Self {
        let g = metric.matrix();
        let mut rows = [[0.0; 6]; 6];
        for (i, row) in rows.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = g[(i, j)];
            }
        }
        Self(rows)
    }
}
