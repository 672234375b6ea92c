//! Theory-side computations: independent-block splitting of a dependent
//! sequence, Monte Carlo estimation of the empirical Rademacher complexity
//! over a finite model set, generalization-bound evaluation, and the
//! calibration-function / excess-risk-rate formulas.
//!
//! The effective confidence is `delta' = delta - 2*m*beta(a-l)`: dependence
//! taxes the confidence budget, and a request is infeasible once the tax
//! exceeds it.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::ops::Range;

use crate::armodel::{stack_window, ArModel};
use crate::dynsys::derive_seed;
use crate::error::{Error, Result};
use crate::exec::par_map_indices;
use crate::geometry::{diameter, xi_constant, FeasibleRegion};
use crate::losses::spo_loss;

/// Interleaved split of `0..n` into two families of `m` length-`a` blocks
/// after skipping the first `l` indices. Alternate blocks are separated by
/// a full block, so same-family blocks sit `a` indices apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockSplit {
    /// Block length `a`.
    pub block_len: usize,
    /// Blocks per subsequence `m`.
    pub blocks_per_seq: usize,
    /// Skipped prefix `l`.
    pub lag_offset: usize,
    /// Half-open 0-based index ranges, odd-numbered blocks.
    pub y0: Vec<Range<usize>>,
    /// Half-open 0-based index ranges, even-numbered blocks.
    pub y1: Vec<Range<usize>>,
}

/// Splits a length-`n` index range; requires `2*a*m + l = n` and `a > l`.
pub fn block_split(n: usize, a: usize, m: usize, l: usize) -> Result<BlockSplit> {
    if a == 0 || m == 0 {
        return Err(Error::InvalidParameter(
            "block length and count must be >= 1".into(),
        ));
    }
    let lhs = 2 * a * m + l;
    if lhs != n {
        return Err(Error::BlockArithmetic { lhs, n });
    }
    if a <= l {
        return Err(Error::BlockGap { a, l });
    }
    let mut y0 = Vec::with_capacity(m);
    let mut y1 = Vec::with_capacity(m);
    for j in 0..(2 * m) {
        let start = l + j * a;
        let range = start..start + a;
        if j % 2 == 0 {
            y0.push(range);
        } else {
            y1.push(range);
        }
    }
    Ok(BlockSplit {
        block_len: a,
        blocks_per_seq: m,
        lag_offset: l,
        y0,
        y1,
    })
}

/// Monte Carlo estimate of the empirical Rademacher complexity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    pub std_error: f64,
    pub n_draws: usize,
}

/// Estimates `E_sigma[ sup_f (1/(n-l)) sum_i sigma_i l_spo(f(window_i), y_i) ]`
/// over a finite model list by vanilla Monte Carlo on the sign draws.
///
/// The sign sequence for draw `j` comes from `derive_seed(seed, j)`, so draws
/// are identical for any model list of the same trajectory length; supersets
/// of models can therefore be compared on shared randomness.
pub fn empirical_rademacher(
    models: &[ArModel],
    trajectory: &[DVector<f64>],
    lag: usize,
    region: &FeasibleRegion,
    n_draws: usize,
    seed: u64,
) -> Result<RademacherEstimate> {
    if models.is_empty() {
        return Err(Error::InvalidParameter(
            "model list must be nonempty".into(),
        ));
    }
    if n_draws == 0 {
        return Err(Error::InvalidParameter("n_draws must be >= 1".into()));
    }
    let n = trajectory.len();
    if n <= lag {
        return Err(Error::InsufficientData(format!(
            "trajectory length {n} must exceed lag {lag}"
        )));
    }
    let count = n - lag;

    // loss table: rows = models, columns = time steps
    let loss_rows = par_map_indices(models.len(), |mi| -> Result<Vec<f64>> {
        let model = &models[mi];
        let mut row = Vec::with_capacity(count);
        for t in lag..n {
            let window = stack_window(trajectory, t, lag);
            let y_hat = model.predict_stacked(&window)?;
            row.push(spo_loss(&y_hat, &trajectory[t], region)?);
        }
        Ok(row)
    });
    let mut table = Vec::with_capacity(models.len());
    for row in loss_rows {
        table.push(row?);
    }

    let values = par_map_indices(n_draws, |j| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, j as u64));
        let signs: Vec<f64> = (0..count)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        let mut sup = f64::NEG_INFINITY;
        for row in &table {
            let s: f64 = row.iter().zip(&signs).map(|(l, s)| l * s).sum();
            sup = sup.max(s / count as f64);
        }
        sup
    });

    let mean = values.iter().sum::<f64>() / n_draws as f64;
    let std_error = if n_draws > 1 {
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_draws - 1) as f64;
        (var / n_draws as f64).sqrt()
    } else {
        0.0
    };
    Ok(RademacherEstimate {
        mean,
        std_error,
        n_draws,
    })
}

/// Inputs to the generalization bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Empirical risk of the hypothesis.
    pub empirical_risk: f64,
    /// Rademacher complexity (estimate or assumed value).
    pub rademacher: f64,
    /// Linear optimization gap bound `omega_S(Y)`.
    pub omega: f64,
    /// Blocks per subsequence.
    pub m: usize,
    /// Requested confidence budget, in (0, 1).
    pub delta: f64,
    /// Dependence coefficient `beta(a - l)` (or proxy).
    pub beta_al: f64,
}

impl BoundInputs {
    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.delta) || self.delta <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.beta_al < 0.0 || !self.beta_al.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "beta(a-l) must be a finite nonnegative value, got {}",
                self.beta_al
            )));
        }
        if self.m == 0 {
            return Err(Error::InvalidParameter("m must be >= 1".into()));
        }
        Ok(())
    }

    pub fn delta_prime(&self) -> f64 {
        self.delta - 2.0 * self.m as f64 * self.beta_al
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundVariant {
    /// Uses the expected complexity: `R + 2*Rad + omega*sqrt(log(2/d')/(2m))`.
    Expected,
    /// Uses the empirical complexity: `R + 2*Rad + 3*omega*sqrt(log(4/d')/(2m))`.
    Empirical,
}

/// Where the dependence coefficient came from; carried through reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaSource {
    UserSupplied,
    MixingProxy { c: f64, rho: f64, k: u32 },
}

/// Evaluates the generalization bound; errors when `delta' <= 0`.
pub fn generalization_bound(inputs: &BoundInputs, variant: BoundVariant) -> Result<f64> {
    inputs.validate()?;
    if !inputs.omega.is_finite() || inputs.omega < 0.0 {
        return Err(Error::InvalidParameter(format!(
            "omega must be finite and nonnegative, got {}",
            inputs.omega
        )));
    }
    let delta_prime = inputs.delta_prime();
    if delta_prime <= 0.0 {
        return Err(Error::InfeasibleConfidence { delta_prime });
    }
    let m = inputs.m as f64;
    let tail = match variant {
        BoundVariant::Expected => inputs.omega * ((2.0 / delta_prime).ln() / (2.0 * m)).sqrt(),
        BoundVariant::Empirical => {
            3.0 * inputs.omega * ((4.0 / delta_prime).ln() / (2.0 * m)).sqrt()
        }
    };
    Ok(inputs.empirical_risk + 2.0 * inputs.rademacher + tail)
}

/// A serializable bound evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub delta_prime: f64,
    pub bound: f64,
    pub variant: BoundVariant,
    pub beta_source: BetaSource,
}

pub fn bound_report(
    inputs: BoundInputs,
    variant: BoundVariant,
    beta_source: BetaSource,
) -> Result<BoundReport> {
    let bound = generalization_bound(&inputs, variant)?;
    Ok(BoundReport {
        inputs,
        delta_prime: inputs.delta_prime(),
        bound,
        variant,
        beta_source,
    })
}

/// Lower bound on the polyhedral calibration function:
/// `alpha * Xi_S / (4*sqrt(2*pi)*e^3) * min(eps^2 / D_S, eps)`.
pub fn calibration_bound_polyhedral(eps: f64, region: &FeasibleRegion, alpha: f64) -> Result<f64> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    let xi = xi_constant(region)?;
    let diam = diameter(region); // positive whenever Xi_S exists
    let denom = 4.0 * (2.0 * std::f64::consts::PI).sqrt() * std::f64::consts::E.powi(3);
    Ok(alpha * xi / denom * (eps * eps / diam).min(eps))
}

/// Lower bound on the strongly convex calibration function:
/// `alpha * mu^(9/2) / (4 * L^(9/2)) * eps` for `0 < mu <= L`.
pub fn calibration_bound_strongly_convex(
    eps: f64,
    mu: f64,
    smoothness: f64,
    alpha: f64,
) -> Result<f64> {
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    if !alpha.is_finite() || alpha <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must be positive, got {alpha}"
        )));
    }
    if !(mu > 0.0 && mu.is_finite() && smoothness.is_finite() && mu <= smoothness) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < mu <= L, got mu = {mu}, L = {smoothness}"
        )));
    }
    Ok(alpha * (mu / smoothness).powf(4.5) / 4.0 * eps)
}

/// Region family selector for the excess-risk rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionFamily {
    Polyhedral,
    StronglyConvex,
}

/// Excess-risk rate up to the existential constant `C`:
/// `C * sqrt(log(1/delta')) / m^(1/4)` (polyhedral) or `/ m^(1/2)` (strongly
/// convex), with `delta' = delta - 2*m*beta(a-l)`.
pub fn excess_risk_rate(
    m: usize,
    delta: f64,
    beta_al: f64,
    c: f64,
    family: RegionFamily,
) -> Result<f64> {
    let inputs = BoundInputs {
        empirical_risk: 0.0,
        rademacher: 0.0,
        omega: 0.0,
        m,
        delta,
        beta_al,
    };
    inputs.validate()?;
    let delta_prime = inputs.delta_prime();
    if delta_prime <= 0.0 {
        return Err(Error::InfeasibleConfidence { delta_prime });
    }
    let log_term = (1.0 / delta_prime).ln().max(0.0).sqrt();
    let m = m as f64;
    let rate = match family {
        RegionFamily::Polyhedral => c * log_term / m.powf(0.25),
        RegionFamily::StronglyConvex => c * log_term / m.sqrt(),
    };
    Ok(rate)
}
