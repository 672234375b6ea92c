//! Fixed-memory autoregressive predictor and lagged-dataset machinery.
//!
//! A model of lag `l` predicts `yh_k = sum_{i=1..l} M_i y_{k-i}` from the
//! `l` most recent observations, newest first. Lag selection follows the
//! partial autocorrelation function computed per coordinate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Autoregressive predictor: ordered coefficient matrices `M_1..M_l`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ArModelSpec", into = "ArModelSpec")]
pub struct ArModel {
    lag: usize,
    dim: usize,
    mats: Vec<DMatrix<f64>>,
}

/// Serde mirror: `{lag, dim, mats}` with each matrix as row-major nested
/// arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct ArModelSpec {
    lag: usize,
    dim: usize,
    mats: Vec<Vec<Vec<f64>>>,
}

impl TryFrom<ArModelSpec> for ArModel {
    type Error = Error;

    fn try_from(spec: ArModelSpec) -> Result<Self> {
        let mats = spec
            .mats
            .iter()
            .map(|rows| {
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                if rows.len() != spec.dim || flat.len() != spec.dim * spec.dim {
                    return Err(Error::DimensionMismatch {
                        expected: spec.dim * spec.dim,
                        got: flat.len(),
                    });
                }
                Ok(DMatrix::from_row_slice(spec.dim, spec.dim, &flat))
            })
            .collect::<Result<Vec<_>>>()?;
        if mats.len() != spec.lag {
            return Err(Error::InvalidParameter(format!(
                "expected {} matrices, got {}",
                spec.lag,
                mats.len()
            )));
        }
        ArModel::new(mats)
    }
}

impl From<ArModel> for ArModelSpec {
    fn from(model: ArModel) -> Self {
        ArModelSpec {
            lag: model.lag,
            dim: model.dim,
            mats: model
                .mats
                .iter()
                .map(|m| {
                    (0..model.dim)
                        .map(|r| m.row(r).iter().copied().collect())
                        .collect()
                })
                .collect(),
        }
    }
}

impl ArModel {
    /// Builds a model from `M_1..M_l`; all matrices must be square of equal
    /// size with finite entries.
    pub fn new(mats: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = mats
            .first()
            .ok_or_else(|| Error::InvalidParameter("model needs at least one matrix".into()))?;
        let dim = first.nrows();
        if dim == 0 {
            return Err(Error::InvalidParameter(
                "model dimension must be >= 1".into(),
            ));
        }
        for m in &mats {
            if m.nrows() != dim || m.ncols() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: m.nrows().max(m.ncols()),
                });
            }
            if m.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite("model coefficient".into()));
            }
        }
        Ok(ArModel {
            lag: mats.len(),
            dim,
            mats,
        })
    }

    /// Splits a stacked `d x (l*d)` coefficient block `[M_1 M_2 .. M_l]`
    /// (newest-first ordering) into a model.
    pub fn from_stacked(lag: usize, dim: usize, stacked: &DMatrix<f64>) -> Result<Self> {
        if stacked.nrows() != dim || stacked.ncols() != lag * dim {
            return Err(Error::DimensionMismatch {
                expected: lag * dim,
                got: stacked.ncols(),
            });
        }
        let mats = (0..lag)
            .map(|i| stacked.columns(i * dim, dim).into_owned())
            .collect();
        ArModel::new(mats)
    }

    /// Concatenates `M_1..M_l` into the stacked `d x (l*d)` block.
    pub fn to_stacked(&self) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.dim, self.lag * self.dim);
        for (i, m) in self.mats.iter().enumerate() {
            out.columns_mut(i * self.dim, self.dim).copy_from(m);
        }
        out
    }

    pub fn lag(&self) -> usize {
        self.lag
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn mats(&self) -> &[DMatrix<f64>] {
        &self.mats
    }

    /// Predicts from the `l` most recent observations, newest first:
    /// `window[0] = y_{k-1}, ..., window[l-1] = y_{k-l}`.
    pub fn predict(&self, window: &[DVector<f64>]) -> Result<DVector<f64>> {
        if window.len() != self.lag {
            return Err(Error::DimensionMismatch {
                expected: self.lag,
                got: window.len(),
            });
        }
        let mut out = DVector::zeros(self.dim);
        for (m, y) in self.mats.iter().zip(window) {
            if y.len() != self.dim {
                return Err(Error::DimensionMismatch {
                    expected: self.dim,
                    got: y.len(),
                });
            }
            out.gemv(1.0, m, y, 1.0);
        }
        Ok(out)
    }

    /// Predicts from a stacked window `z = [y_{k-1}; ...; y_{k-l}]`.
    pub fn predict_stacked(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        if z.len() != self.lag * self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.lag * self.dim,
                got: z.len(),
            });
        }
        let mut out = DVector::zeros(self.dim);
        for (i, m) in self.mats.iter().enumerate() {
            out.gemv(1.0, m, &z.rows(i * self.dim, self.dim), 1.0);
        }
        Ok(out)
    }
}

/// Supervised pairs extracted from a trajectory: window `i` stacks the `lag`
/// observations immediately preceding target `i`, newest first.
#[derive(Debug, Clone, PartialEq)]
pub struct LaggedDataset {
    pub windows: Vec<DVector<f64>>,
    pub targets: Vec<DVector<f64>>,
    /// Index of each target in the source trajectory (0-based).
    pub source_indices: Vec<usize>,
    pub lag: usize,
    pub dim: usize,
}

impl LaggedDataset {
    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }
}

/// Stacks `[y_{t-1}; y_{t-2}; ...; y_{t-lag}]` for target index `t`.
pub fn stack_window(trajectory: &[DVector<f64>], target_index: usize, lag: usize) -> DVector<f64> {
    let dim = trajectory[target_index].len();
    let mut z = DVector::zeros(lag * dim);
    for i in 0..lag {
        z.rows_mut(i * dim, dim)
            .copy_from(&trajectory[target_index - 1 - i]);
    }
    z
}

/// Builds the `n - lag` supervised pairs of a length-`n` trajectory.
pub fn build_lagged(trajectory: &[DVector<f64>], lag: usize) -> Result<LaggedDataset> {
    if lag == 0 {
        return Err(Error::InvalidParameter("lag must be >= 1".into()));
    }
    let n = trajectory.len();
    if n <= lag {
        return Err(Error::InsufficientData(format!(
            "trajectory length {n} must exceed lag {lag}"
        )));
    }
    let dim = trajectory[0].len();
    let mut windows = Vec::with_capacity(n - lag);
    let mut targets = Vec::with_capacity(n - lag);
    let mut source_indices = Vec::with_capacity(n - lag);
    for t in lag..n {
        windows.push(stack_window(trajectory, t, lag));
        targets.push(trajectory[t].clone());
        source_indices.push(t);
    }
    Ok(LaggedDataset {
        windows,
        targets,
        source_indices,
        lag,
        dim,
    })
}

/// Partial autocorrelations for lags `1..=max_lag` via the Durbin-Levinson
/// recursion.
///
/// The lag-h autocorrelation is the Pearson correlation between the series
/// and its h-shifted copy over their overlap, so an exact linear recursion
/// has lag-1 correlation 1 and the innovation variance collapses: the
/// recursion then stops with a degenerate-variance error naming the first
/// uncomputable lag. A constant series errors at lag 1.
pub fn pacf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    const VAR_TOL: f64 = 1e-10;
    let n = series.len();
    if max_lag == 0 {
        return Err(Error::InvalidParameter("max_lag must be >= 1".into()));
    }
    if n < max_lag + 2 {
        return Err(Error::InsufficientData(format!(
            "series length {n} must exceed max_lag + 1 = {}",
            max_lag + 1
        )));
    }
    if series.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("pacf series".into()));
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let variance: f64 = series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
    let abs_max = series.iter().fold(0.0f64, |a, x| a.max(x.abs()));
    if variance <= 1e-14 * abs_max * abs_max {
        return Err(Error::DegenerateVariance { lag: 1 });
    }

    let mut rho = vec![1.0; max_lag + 1];
    for h in 1..=max_lag {
        let a = &series[..n - h];
        let b = &series[h..];
        let ma = a.iter().sum::<f64>() / a.len() as f64;
        let mb = b.iter().sum::<f64>() / b.len() as f64;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b.iter()) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        let den = (saa * sbb).sqrt();
        if den == 0.0 {
            return Err(Error::DegenerateVariance { lag: h });
        }
        rho[h] = sab / den;
    }

    let mut phi_prev = vec![0.0; max_lag + 1];
    let mut out = Vec::with_capacity(max_lag);
    let mut v = 1.0;
    for k in 1..=max_lag {
        if v <= VAR_TOL {
            return Err(Error::DegenerateVariance { lag: k });
        }
        let phi_kk = if k == 1 {
            rho[1]
        } else {
            let num: f64 = rho[k] - (1..k).map(|j| phi_prev[j] * rho[k - j]).sum::<f64>();
            num / v
        };
        let mut phi = phi_prev.clone();
        phi[k] = phi_kk;
        for j in 1..k {
            phi[j] = phi_prev[j] - phi_kk * phi_prev[k - j];
        }
        v *= 1.0 - phi_kk * phi_kk;
        out.push(phi_kk);
        phi_prev = phi;
    }
    Ok(out)
}

/// Selects the model lag from a vector trajectory.
///
/// Per coordinate, the cutoff is the largest lag whose |pacf| exceeds
/// `confidence / sqrt(n)`; the result is the maximum cutoff over
/// coordinates, floored at 1.
pub fn select_lag(trajectory: &[DVector<f64>], max_lag: usize, confidence: f64) -> Result<usize> {
    let n = trajectory.len();
    if n < 10 * max_lag {
        return Err(Error::InsufficientData(format!(
            "lag selection wants length >= 10 * max_lag, got {n} < {}",
            10 * max_lag
        )));
    }
    let dim = trajectory[0].len();
    let threshold = confidence / (n as f64).sqrt();
    let mut best = 1usize;
    for c in 0..dim {
        let series: Vec<f64> = trajectory.iter().map(|y| y[c]).collect();
        let p = pacf(&series, max_lag)?;
        let cutoff = p
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > threshold)
            .map(|(i, _)| i + 1)
            .max()
            .unwrap_or(0);
        best = best.max(cutoff.max(1));
    }
    Ok(best)
}
