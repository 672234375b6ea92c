//! Decision-aware and pointwise losses with (sub)gradients in the prediction.
//!
//! The decision regret loss `l_spo(yh, y) = y'w*(yh) - y'w*(y)` is
//! evaluation-only: it is non-convex and discontinuous in `yh`, so it is
//! never used as a training objective. Its convex surrogate
//! `l_spo+(yh, y) = max_{w in S} (y - 2yh)'w + 2yh'w*(y) - y'w*(y)` upper
//! bounds it and admits the subgradient `2(w*(y) - w*(2yh - y))`.
//!
//! The plain regression losses use `l2 = |yh - y|^2` (no 1/2 factor; the
//! step size absorbs constants) and `l1 = |yh - y|_1` with the minimal-norm
//! subgradient convention `sign(0) = 0`.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{solve_linear, FeasibleRegion};

/// Loss selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Decision regret; evaluation-only.
    Spo,
    /// Convex surrogate of the decision regret.
    SpoPlus,
    L1,
    L2,
}

impl LossKind {
    /// Losses that consult the feasible region.
    pub fn requires_region(self) -> bool {
        matches!(self, LossKind::Spo | LossKind::SpoPlus)
    }

    /// Losses usable as training objectives.
    pub fn trainable(self) -> bool {
        !matches!(self, LossKind::Spo)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Spo => "spo",
            LossKind::SpoPlus => "spo_plus",
            LossKind::L1 => "l1",
            LossKind::L2 => "l2",
        }
    }
}

fn check_pair(y_hat: &DVector<f64>, y: &DVector<f64>) -> Result<()> {
    if y_hat.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: y.len(),
            got: y_hat.len(),
        });
    }
    if y_hat.iter().chain(y.iter()).any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("loss input".into()));
    }
    Ok(())
}

/// Decision regret `y'w*(yh) - y'w*(y)`, clamped at zero against rounding
/// (the exact value is nonnegative since `w*(y)` minimizes `y'w`).
pub fn spo_loss(y_hat: &DVector<f64>, y: &DVector<f64>, region: &FeasibleRegion) -> Result<f64> {
    check_pair(y_hat, y)?;
    let w_hat = solve_linear(region, y_hat)?.minimizer;
    let opt = solve_linear(region, y)?;
    Ok((y.dot(&w_hat) - opt.value).max(0.0))
}

/// Convex surrogate `max_{w in S} (y - 2yh)'w + 2yh'w*(y) - y'w*(y)`,
/// clamped at zero against rounding (it upper bounds a nonnegative loss).
pub fn spo_plus_loss(
    y_hat: &DVector<f64>,
    y: &DVector<f64>,
    region: &FeasibleRegion,
) -> Result<f64> {
    check_pair(y_hat, y)?;
    // max c'w = -min (-c)'w with c = y - 2yh
    let neg_c = y_hat * 2.0 - y;
    let max_term = -solve_linear(region, &neg_c)?.value;
    let opt = solve_linear(region, y)?;
    Ok((max_term + 2.0 * y_hat.dot(&opt.minimizer) - opt.value).max(0.0))
}

/// Subgradient of the surrogate at `yh`: `2(w*(y) - w*(2yh - y))`. Where the
/// argmin at `2yh - y` is unique this is the gradient.
pub fn spo_plus_subgradient(
    y_hat: &DVector<f64>,
    y: &DVector<f64>,
    region: &FeasibleRegion,
) -> Result<DVector<f64>> {
    check_pair(y_hat, y)?;
    let w_star = solve_linear(region, y)?.minimizer;
    let w_tilde = solve_linear(region, &(y_hat * 2.0 - y))?.minimizer;
    Ok((w_star - w_tilde) * 2.0)
}

/// Dispatches a pointwise loss and its subgradient with respect to `yh`.
///
/// Returns `(loss, Some(subgradient))` for trainable losses and
/// `(loss, None)` for the evaluation-only decision regret. The region is
/// required exactly for the decision-aware kinds.
pub fn pointwise_loss_and_grad(
    kind: LossKind,
    y_hat: &DVector<f64>,
    y: &DVector<f64>,
    region: Option<&FeasibleRegion>,
) -> Result<(f64, Option<DVector<f64>>)> {
    check_pair(y_hat, y)?;
    match kind {
        LossKind::L2 => {
            let diff = y_hat - y;
            Ok((diff.norm_squared(), Some(&diff * 2.0)))
        }
        LossKind::L1 => {
            let diff = y_hat - y;
            let loss = diff.iter().map(|x| x.abs()).sum();
            let grad = diff.map(|x| {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            });
            Ok((loss, Some(grad)))
        }
        LossKind::SpoPlus => {
            let region = region.ok_or_else(|| {
                Error::InvalidParameter("spo_plus loss needs a feasible region".into())
            })?;
            let loss = spo_plus_loss(y_hat, y, region)?;
            let grad = spo_plus_subgradient(y_hat, y, region)?;
            Ok((loss, Some(grad)))
        }
        LossKind::Spo => {
            let region = region.ok_or_else(|| {
                Error::InvalidParameter("spo loss needs a feasible region".into())
            })?;
            Ok((spo_loss(y_hat, y, region)?, None))
        }
    }
}
