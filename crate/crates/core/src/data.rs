//! Real-data preprocessing and evaluation grids.
//!
//! Feature vectors are reduced with PCA and each retained component is scaled
//! to unit sample variance, so the standardized training set has zero mean
//! and unit variance per coordinate. Generated vectors are mapped back with
//! [`PcaModel::inverse_transform`].

use std::collections::HashMap;
use std::io::Read;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::ClassLabel;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset has no `class` column")]
    NoClassColumn,
    #[error("row {row}: {detail}")]
    BadRow { row: usize, detail: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("cannot fit {k} components to {rows} rows of dimension {dim}")]
    TooManyComponents { k: usize, rows: usize, dim: usize },
    #[error("degenerate data: component {component} has variance {variance:e}")]
    Degenerate { component: usize, variance: f64 },
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub feature_names: Vec<String>,
    pub rows: Vec<Vec<f64>>,
    pub labels: Vec<ClassLabel>,
    /// Original label strings, indexed by class.
    pub class_names: Vec<String>,
    pub source: String,
}

impl Dataset {
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Reads a headered CSV; the `class` column holds labels, every other
    /// column is a numeric feature. Labels that are all non-negative integers
    /// are used as class indices; otherwise distinct names are numbered in
    /// order of first appearance.
    pub fn from_csv_reader<R: Read>(reader: R, source: &str) -> Result<Self, DataError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers()?.clone();
        let class_col = headers.iter().position(|h| h.trim() == "class").ok_or(DataError::NoClassColumn)?;
        let feature_names: Vec<String> =
            headers.iter().enumerate().filter(|&(i, _)| i != class_col).map(|(_, h)| h.trim().to_string()).collect();

        let mut rows = Vec::new();
        let mut raw_labels = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let mut row = Vec::with_capacity(feature_names.len());
            for (j, field) in rec.iter().enumerate() {
                if j == class_col {
                    raw_labels.push(field.trim().to_string());
                    continue;
                }
                let v: f64 = field
                    .trim()
                    .parse()
                    .map_err(|_| DataError::BadRow { row: i + 1, detail: format!("non-numeric value {field:?}") })?;
                if !v.is_finite() {
                    return Err(DataError::BadRow { row: i + 1, detail: "non-finite value".into() });
                }
                row.push(v);
            }
            rows.push(row);
        }

        let (labels, class_names) = if raw_labels.iter().all(|l| l.parse::<usize>().is_ok()) {
            let labels: Vec<ClassLabel> = raw_labels.iter().map(|l| ClassLabel(l.parse().unwrap())).collect();
            let k = labels.iter().map(|c| c.index() + 1).max().unwrap_or(0);
            (labels, (0..k).map(|i| i.to_string()).collect())
        } else {
            let mut names: Vec<String> = Vec::new();
            let mut index: HashMap<String, usize> = HashMap::new();
            let labels = raw_labels
                .iter()
                .map(|l| {
                    let next = names.len();
                    let i = *index.entry(l.clone()).or_insert_with(|| {
                        names.push(l.clone());
                        next
                    });
                    ClassLabel(i)
                })
                .collect();
            (labels, names)
        };
        Ok(Dataset { feature_names, rows, labels, class_names, source: source.to_string() })
    }

    pub fn from_csv_path(path: &Path) -> Result<Self, DataError> {
        let file = std::fs::File::open(path)?;
        Self::from_csv_reader(file, &path.display().to_string())
    }
}

/// Fitted projection onto the leading principal components, with unit-variance scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub mean: Vec<f64>,
    /// `k` orthonormal rows of length `D`.
    pub components: Vec<Vec<f64>>,
    /// Square roots of the explained variances.
    pub component_sd: Vec<f64>,
    /// Sample-covariance eigenvalues of the retained components, non-increasing.
    pub explained_variance: Vec<f64>,
}

pub fn pca_fit(rows: &[Vec<f64>], k: usize) -> Result<PcaModel, DataError> {
    let n = rows.len();
    let dim = rows.first().map_or(0, Vec::len);
    if k == 0 || n < 2 || k > dim.min(n - 1) {
        return Err(DataError::TooManyComponents { k, rows: n, dim });
    }
    if let Some(bad) = rows.iter().find(|r| r.len() != dim) {
        return Err(DataError::Dimension { expected: dim, got: bad.len() });
    }

    let mut mean = vec![0.0; dim];
    for r in rows {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let centered = DMatrix::from_fn(n, dim, |i, j| rows[i][j] - mean[j]);
    let cov = (centered.transpose() * &centered) / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));

    let scale = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let mut components = Vec::with_capacity(k);
    let mut explained_variance = Vec::with_capacity(k);
    for (j, &idx) in order.iter().take(k).enumerate() {
        let variance = eig.eigenvalues[idx];
        if variance.is_nan() || variance <= 1e-12 * scale || variance <= 0.0 {
            return Err(DataError::Degenerate { component: j, variance });
        }
        let mut v: Vec<f64> = eig.eigenvectors.column(idx).iter().copied().collect();
        let pivot = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
        if pivot < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        components.push(v);
        explained_variance.push(variance);
    }
    let component_sd = explained_variance.iter().map(|v| v.sqrt()).collect();
    Ok(PcaModel { mean, components, component_sd, explained_variance })
}

impl PcaModel {
    pub fn input_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn k(&self) -> usize {
        self.components.len()
    }

    /// `y_j = c_j · (x - mean) / sd_j`.
    pub fn transform(&self, x: &[f64]) -> Result<Vec<f64>, DataError> {
        if x.len() != self.input_dim() {
            return Err(DataError::Dimension { expected: self.input_dim(), got: x.len() });
        }
        Ok(self
            .components
            .iter()
            .zip(&self.component_sd)
            .map(|(c, sd)| c.iter().zip(x).zip(&self.mean).map(|((ci, xi), mi)| ci * (xi - mi)).sum::<f64>() / sd)
            .collect())
    }

    /// `x̃ = mean + Σ_j y_j · sd_j · c_j`.
    pub fn inverse_transform(&self, y: &[f64]) -> Result<Vec<f64>, DataError> {
        if y.len() != self.k() {
            return Err(DataError::Dimension { expected: self.k(), got: y.len() });
        }
        let mut x = self.mean.clone();
        for ((c, sd), yj) in self.components.iter().zip(&self.component_sd).zip(y) {
            for (xi, ci) in x.iter_mut().zip(c) {
                *xi += yj * sd * ci;
            }
        }
        Ok(x)
    }
}

/// A rectangular lattice including both endpoints of every axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub bounds: Vec<(f64, f64)>,
    pub resolution: Vec<usize>,
}

pub fn make_grid(bounds: Vec<(f64, f64)>, resolution: Vec<usize>) -> Result<Grid, DataError> {
    if bounds.is_empty() || bounds.len() != resolution.len() {
        return Err(DataError::InvalidGrid(format!("{} bounds for {} resolutions", bounds.len(), resolution.len())));
    }
    for (i, (&(lo, hi), &res)) in bounds.iter().zip(&resolution).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(DataError::InvalidGrid(format!("axis {i}: bounds [{lo}, {hi}]")));
        }
        if res < 2 {
            return Err(DataError::InvalidGrid(format!("axis {i}: resolution {res} < 2")));
        }
    }
    Ok(Grid { bounds, resolution })
}

impl Grid {
    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn coord(&self, axis: usize, i: usize) -> f64 {
        let (lo, hi) = self.bounds[axis];
        let last = self.resolution[axis] - 1;
        if i == last {
            hi
        } else {
            lo + (hi - lo) * i as f64 / last as f64
        }
    }

    /// Row-major enumeration: the last axis varies fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        (0..self.len())
            .map(|mut flat| {
                let mut p = vec![0.0; self.resolution.len()];
                for axis in (0..self.resolution.len()).rev() {
                    p[axis] = self.coord(axis, flat % self.resolution[axis]);
                    flat /= self.resolution[axis];
                }
                p
            })
            .collect()
    }
}
