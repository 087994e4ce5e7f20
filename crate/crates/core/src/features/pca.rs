//! Principal component analysis of bag-of-words vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Fitted projection. `components` holds `d` rows of length `V`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    pub components: Vec<Vec<f64>>,
    /// Eigenvalues of the sample covariance for each kept component,
    /// non-increasing.
    pub explained_variance: Vec<f64>,
    /// Trace of the sample covariance.
    pub total_variance: f64,
}

const ZERO_VARIANCE: f64 = 1e-12;

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn output_dim(&self) -> usize {
        self.components.len()
    }

    /// Share of the total variance captured by each component; all zero when
    /// the input had no variance.
    pub fn explained_variance_ratio(&self) -> Vec<f64> {
        if self.total_variance <= ZERO_VARIANCE {
            return vec![0.0; self.explained_variance.len()];
        }
        self.explained_variance
            .iter()
            .map(|v| v / self.total_variance)
            .collect()
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>, FeatureError> {
        project_pca(self, v)
    }

    /// Maps projected coordinates back to the input space.
    pub fn reconstruct(&self, coords: &[f64]) -> Vec<f64> {
        let mut out = self.mean.clone();
        for (c, row) in coords.iter().zip(&self.components) {
            for (o, r) in out.iter_mut().zip(row) {
                *o += c * r;
            }
        }
        out
    }
}

/// Top-`d` eigenvectors of the mean-centered sample covariance. Each
/// component's first non-zero entry is positive.
pub fn fit_pca(rows: &[Vec<f64>], d: usize) -> Result<PcaModel, FeatureError> {
    let n = rows.len();
    if n < 2 {
        return Err(FeatureError::Parameter(format!(
            "PCA needs at least 2 rows, got {n}"
        )));
    }
    let v = rows[0].len();
    if let Some(bad) = rows.iter().find(|r| r.len() != v) {
        return Err(FeatureError::DimensionMismatch {
            expected: v,
            found: bad.len(),
        });
    }
    let max_d = (n - 1).min(v);
    if d > max_d {
        return Err(FeatureError::Parameter(format!(
            "PCA dimension {d} exceeds min(N-1, V) = {max_d}"
        )));
    }

    let mut mean = vec![0.0; v];
    for row in rows {
        for (m, x) in mean.iter_mut().zip(row) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, v, |i, j| rows[i][j] - mean[j]);
    let covariance = (centered.transpose() * &centered) / (n as f64 - 1.0);
    let total_variance = covariance.trace();

    if total_variance <= ZERO_VARIANCE {
        return Ok(PcaModel {
            mean,
            components: vec![vec![0.0; v]; d],
            explained_variance: vec![0.0; d],
            total_variance: 0.0,
        });
    }

    let eigen = SymmetricEigen::new(covariance);
    let mut order: Vec<usize> = (0..v).collect();
    // Stable sort keeps ties in eigen-solver order, which is deterministic.
    order.sort_by(|&a, &b| eigen.eigenvalues[b].total_cmp(&eigen.eigenvalues[a]));

    let mut components = Vec::with_capacity(d);
    let mut explained_variance = Vec::with_capacity(d);
    for &idx in order.iter().take(d) {
        let mut row: Vec<f64> = eigen.eigenvectors.column(idx).iter().copied().collect();
        if let Some(first) = row.iter().find(|x| x.abs() > 1e-12) {
            if *first < 0.0 {
                row.iter_mut().for_each(|x| *x = -*x);
            }
        }
        components.push(row);
        explained_variance.push(eigen.eigenvalues[idx].max(0.0));
    }

    Ok(PcaModel {
        mean,
        components,
        explained_variance,
        total_variance,
    })
}

/// `components · (v − mean)`.
pub fn project_pca(model: &PcaModel, v: &[f64]) -> Result<Vec<f64>, FeatureError> {
    if v.len() != model.input_dim() {
        return Err(FeatureError::DimensionMismatch {
            expected: model.input_dim(),
            found: v.len(),
        });
    }
    Ok(model
        .components
        .iter()
        .map(|row| {
            row.iter()
                .zip(v.iter().zip(&model.mean))
                .map(|(c, (x, m))| c * (x - m))
                .sum()
        })
        .collect())
}
