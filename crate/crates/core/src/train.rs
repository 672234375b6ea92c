//! Fits autoregressive predictors by batch subgradient descent (plain or
//! Adam) on the surrogate decision loss or on pointwise losses, plus an
//! ordinary-least-squares closed form for the squared loss.
//!
//! The surrogate subgradient per sample is `f * (w*(y) - w*(2yh - y)) z'`
//! with `f = 2` by default (the true subgradient factor). Setting
//! `factor_two = false` drops the 2, the halved direction some statements of
//! the update use; the difference is absorbed by the step size.
//!
//! Epoch passes accumulate per-sample terms in fixed-size chunks that are
//! combined in index order, so training is bit-reproducible for any worker
//! count.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::armodel::{ArModel, LaggedDataset};
use crate::dynsys::derive_seed;
use crate::error::{Error, Result};
use crate::exec::{par_map_indices, REDUCTION_CHUNK};
use crate::geometry::{solve_linear, FeasibleRegion};
use crate::losses::{pointwise_loss_and_grad, LossKind};

/// Step-size schedule: `alpha` or `alpha / sqrt(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    #[default]
    Constant,
    InvSqrtT,
}

impl Schedule {
    fn step(self, alpha: f64, t: usize) -> f64 {
        match self {
            Schedule::Constant => alpha,
            Schedule::InvSqrtT => alpha / (t as f64).sqrt(),
        }
    }
}

/// Parameter update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Plain (sub)gradient step `M <- M - alpha_t * G`.
    Subgradient,
    /// Adam with bias-corrected moments.
    Adam { beta1: f64, beta2: f64, eps: f64 },
    /// Normal equations; valid only for the squared loss.
    ClosedForm,
}

impl OptimizerKind {
    pub fn adam_default() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        OptimizerKind::Subgradient
    }
}

fn default_step_size() -> f64 {
    0.01
}

fn default_stop_tol() -> f64 {
    1e-6
}

fn default_max_epochs() -> usize {
    2000
}

fn default_factor_two() -> bool {
    true
}

/// Training configuration; serde defaults match [`TrainConfig::default`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss: LossKind,
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default)]
    pub schedule: Schedule,
    /// Stop once the Frobenius norm of a positive-step update falls to this.
    #[serde(default = "default_stop_tol")]
    pub stop_tol: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub optimizer: OptimizerKind,
    #[serde(default)]
    pub seed: u64,
    /// Include the factor 2 in the surrogate subgradient.
    #[serde(default = "default_factor_two")]
    pub factor_two: bool,
    /// Minibatch size; `None` runs full-batch epochs.
    #[serde(default)]
    pub minibatch: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss: LossKind::SpoPlus,
            step_size: default_step_size(),
            schedule: Schedule::Constant,
            stop_tol: default_stop_tol(),
            max_epochs: default_max_epochs(),
            optimizer: OptimizerKind::Subgradient,
            seed: 0,
            factor_two: default_factor_two(),
            minibatch: None,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if !self.step_size.is_finite() || self.step_size < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "step_size must be finite and >= 0, got {}",
                self.step_size
            )));
        }
        if !self.stop_tol.is_finite() || self.stop_tol <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "stop_tol must be positive, got {}",
                self.stop_tol
            )));
        }
        if self.max_epochs == 0 {
            return Err(Error::InvalidParameter("max_epochs must be >= 1".into()));
        }
        if self.minibatch == Some(0) {
            return Err(Error::InvalidParameter(
                "minibatch size must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// A positive step moved the coefficients by at most `stop_tol`.
    Tolerance,
    MaxEpochs,
    /// Solved by the normal equations, no descent ran.
    ClosedForm,
}

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub model: ArModel,
    pub epochs: usize,
    /// Mean empirical risk measured at the start of each executed epoch.
    pub risk_trace: Vec<f64>,
    pub stop_reason: StopReason,
}

/// First and second moment state for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(rows: usize, cols: usize, beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            m: DMatrix::zeros(rows, cols),
            v: DMatrix::zeros(rows, cols),
            beta1,
            beta2,
            eps,
        }
    }
}

/// One Adam update at step `t >= 1` (bias-corrected moments).
pub fn adam_step(
    state: &mut AdamState,
    params: &mut DMatrix<f64>,
    grad: &DMatrix<f64>,
    t: usize,
    alpha: f64,
) -> Result<()> {
    if t == 0 {
        return Err(Error::InvalidParameter(
            "adam step index starts at 1".into(),
        ));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite("adam gradient".into()));
    }
    let (b1, b2) = (state.beta1, state.beta2);
    state.m = &state.m * b1 + grad * (1.0 - b1);
    state.v = &state.v * b2 + grad.component_mul(grad) * (1.0 - b2);
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    for i in 0..params.nrows() {
        for j in 0..params.ncols() {
            let mh = state.m[(i, j)] / bc1;
            let vh = state.v[(i, j)] / bc2;
            params[(i, j)] -= alpha * mh / (vh.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Mean loss of `model` over a lagged dataset for the given loss kind.
pub fn empirical_risk(
    dataset: &LaggedDataset,
    kind: LossKind,
    region: Option<&FeasibleRegion>,
    model: &ArModel,
) -> Result<f64> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let n = dataset.len();
    let n_chunks = n.div_ceil(REDUCTION_CHUNK).max(1);
    let partials = par_map_indices(n_chunks, |c| -> Result<f64> {
        let lo = c * REDUCTION_CHUNK;
        let hi = ((c + 1) * REDUCTION_CHUNK).min(n);
        let mut sum = 0.0;
        for i in lo..hi {
            let y_hat = model.predict_stacked(&dataset.windows[i])?;
            let (loss, _) = pointwise_loss_and_grad(kind, &y_hat, &dataset.targets[i], region)?;
            sum += loss;
        }
        Ok(sum)
    });
    let mut total = 0.0;
    for p in partials {
        total += p?;
    }
    Ok(total / n as f64)
}

/// Loss-specific per-sample evaluation against the current stacked block.
enum LossEngine<'a> {
    SpoPlus {
        region: &'a FeasibleRegion,
        /// Cached `w*(y_i)` per sample.
        w_star: Vec<DVector<f64>>,
        /// Cached `z*(y_i) = y_i' w*(y_i)` per sample.
        z_star: Vec<f64>,
        factor: f64,
    },
    L1,
    L2,
}

impl LossEngine<'_> {
    /// Loss at the current prediction plus an in-place rank-1 gradient
    /// accumulation `g_acc += grad_vec * z'`.
    fn accumulate(
        &self,
        i: usize,
        y_hat: &DVector<f64>,
        z: &DVector<f64>,
        y: &DVector<f64>,
        g_acc: &mut DMatrix<f64>,
    ) -> Result<f64> {
        match self {
            LossEngine::SpoPlus {
                region,
                w_star,
                z_star,
                factor,
            } => {
                let c = y_hat * 2.0 - y;
                let tilde = solve_linear(region, &c)?;
                let loss = (-tilde.value + 2.0 * y_hat.dot(&w_star[i]) - z_star[i]).max(0.0);
                let gvec = &w_star[i] - &tilde.minimizer;
                g_acc.ger(*factor, &gvec, z, 1.0);
                Ok(loss)
            }
            LossEngine::L2 => {
                let diff = y_hat - y;
                g_acc.ger(2.0, &diff, z, 1.0);
                Ok(diff.norm_squared())
            }
            LossEngine::L1 => {
                let diff = y_hat - y;
                let sign = diff.map(|x| {
                    if x > 0.0 {
                        1.0
                    } else if x < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                });
                g_acc.ger(1.0, &sign, z, 1.0);
                Ok(diff.iter().map(|x| x.abs()).sum())
            }
        }
    }
}

/// Mean loss and mean gradient over the given sample indices at `m`.
/// Fixed-size chunks combined in index order keep the result deterministic.
fn batch_pass(
    engine: &LossEngine<'_>,
    dataset: &LaggedDataset,
    m: &DMatrix<f64>,
    indices: &[usize],
) -> Result<(f64, DMatrix<f64>)> {
    let count = indices.len();
    let (rows, cols) = (m.nrows(), m.ncols());
    let n_chunks = count.div_ceil(REDUCTION_CHUNK).max(1);
    let partials = par_map_indices(n_chunks, |c| -> Result<(f64, DMatrix<f64>)> {
        let lo = c * REDUCTION_CHUNK;
        let hi = ((c + 1) * REDUCTION_CHUNK).min(count);
        let mut loss_sum = 0.0;
        let mut g_acc = DMatrix::zeros(rows, cols);
        let mut y_hat = DVector::zeros(rows);
        for &i in &indices[lo..hi] {
            y_hat.gemv(1.0, m, &dataset.windows[i], 0.0);
            loss_sum += engine.accumulate(
                i,
                &y_hat,
                &dataset.windows[i],
                &dataset.targets[i],
                &mut g_acc,
            )?;
        }
        Ok((loss_sum, g_acc))
    });
    let mut loss_total = 0.0;
    let mut g_total = DMatrix::zeros(rows, cols);
    for p in partials {
        let (l, g) = p?;
        loss_total += l;
        g_total += g;
    }
    let scale = 1.0 / count as f64;
    Ok((loss_total * scale, g_total * scale))
}

fn build_engine<'a>(
    dataset: &LaggedDataset,
    region: Option<&'a FeasibleRegion>,
    cfg: &TrainConfig,
) -> Result<LossEngine<'a>> {
    match cfg.loss {
        LossKind::SpoPlus => {
            let region = region.ok_or_else(|| {
                Error::InvalidParameter("surrogate decision loss needs a feasible region".into())
            })?;
            if region.dim() != dataset.dim {
                return Err(Error::DimensionMismatch {
                    expected: dataset.dim,
                    got: region.dim(),
                });
            }
            let oracles =
                par_map_indices(dataset.len(), |i| solve_linear(region, &dataset.targets[i]));
            let mut w_star = Vec::with_capacity(dataset.len());
            let mut z_star = Vec::with_capacity(dataset.len());
            for o in oracles {
                let o = o?;
                w_star.push(o.minimizer);
                z_star.push(o.value);
            }
            let factor = if cfg.factor_two { 2.0 } else { 1.0 };
            Ok(LossEngine::SpoPlus {
                region,
                w_star,
                z_star,
                factor,
            })
        }
        LossKind::L1 => Ok(LossEngine::L1),
        LossKind::L2 => Ok(LossEngine::L2),
        LossKind::Spo => Err(Error::InvalidParameter(
            "the decision regret is evaluation-only and cannot be trained on".into(),
        )),
    }
}

/// Trains by iterated batch updates until the Frobenius step falls to
/// `stop_tol` or `max_epochs` epochs ran. A zero-step configuration never
/// triggers the tolerance stop (no progress is not convergence).
pub fn train(
    dataset: &LaggedDataset,
    region: Option<&FeasibleRegion>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    if cfg.optimizer == OptimizerKind::ClosedForm {
        if cfg.loss != LossKind::L2 {
            return Err(Error::InvalidParameter(
                "the closed form solves the squared loss only".into(),
            ));
        }
        let model = l2_closed_form(dataset, true)?;
        let risk = empirical_risk(dataset, LossKind::L2, None, &model)?;
        return Ok(TrainReport {
            model,
            epochs: 0,
            risk_trace: vec![risk],
            stop_reason: StopReason::ClosedForm,
        });
    }

    let engine = build_engine(dataset, region, cfg)?;
    let (d, ld) = (dataset.dim, dataset.lag * dataset.dim);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut m = DMatrix::from_fn(d, ld, |_, _| rng.random_range(-0.1..0.1));
    let mut adam = match cfg.optimizer {
        OptimizerKind::Adam { beta1, beta2, eps } => Some(AdamState::new(d, ld, beta1, beta2, eps)),
        _ => None,
    };

    let all_indices: Vec<usize> = (0..dataset.len()).collect();
    let mut risk_trace = Vec::new();
    let mut initial_risk = f64::INFINITY;
    let mut stop_reason = StopReason::MaxEpochs;
    let mut epochs = cfg.max_epochs;
    let mut updates = 0usize;

    for t in 1..=cfg.max_epochs {
        let alpha_t = cfg.schedule.step(cfg.step_size, t);
        let m_start = m.clone();
        let epoch_risk;

        match cfg.minibatch {
            None => {
                let (risk, grad) = batch_pass(&engine, dataset, &m, &all_indices)?;
                epoch_risk = risk;
                updates += 1;
                apply_update(&mut m, &grad, alpha_t, &mut adam, updates)?;
            }
            Some(batch_size) => {
                let mut order = all_indices.clone();
                shuffle(&mut order, derive_seed(cfg.seed, 0xB000_0000 + t as u64));
                let mut loss_sum = 0.0;
                let mut batches = 0usize;
                for batch in order.chunks(batch_size) {
                    let (risk, grad) = batch_pass(&engine, dataset, &m, batch)?;
                    loss_sum += risk;
                    batches += 1;
                    updates += 1;
                    apply_update(&mut m, &grad, alpha_t, &mut adam, updates)?;
                }
                epoch_risk = loss_sum / batches as f64;
            }
        }

        risk_trace.push(epoch_risk);
        if t == 1 {
            initial_risk = epoch_risk;
        }
        if !epoch_risk.is_finite() || epoch_risk > 1e6 * initial_risk {
            return Err(Error::Divergence {
                epoch: t,
                risk: epoch_risk,
            });
        }

        let delta = (&m - &m_start).norm();
        if alpha_t > 0.0 && delta <= cfg.stop_tol {
            stop_reason = StopReason::Tolerance;
            epochs = t;
            break;
        }
    }

    risk_trace.truncate(epochs);
    Ok(TrainReport {
        model: ArModel::from_stacked(dataset.lag, d, &m)?,
        epochs,
        risk_trace,
        stop_reason,
    })
}

fn apply_update(
    m: &mut DMatrix<f64>,
    grad: &DMatrix<f64>,
    alpha: f64,
    adam: &mut Option<AdamState>,
    t: usize,
) -> Result<()> {
    match adam {
        Some(state) => adam_step(state, m, grad, t, alpha),
        None => {
            if grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFinite("subgradient".into()));
            }
            *m -= grad * alpha;
            Ok(())
        }
    }
}

/// Fisher-Yates with a dedicated seed.
fn shuffle(indices: &mut [usize], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..indices.len()).rev() {
        let j = rng.random_range(0..=i);
        indices.swap(i, j);
    }
}

/// Trains with the surrogate decision loss (the loss field of `cfg` is
/// overridden).
pub fn train_spo_plus(
    dataset: &LaggedDataset,
    region: &FeasibleRegion,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    let mut cfg = cfg.clone();
    cfg.loss = LossKind::SpoPlus;
    train(dataset, Some(region), &cfg)
}

/// Trains with a pointwise loss (`l1` or `l2`).
pub fn train_pointwise(dataset: &LaggedDataset, cfg: &TrainConfig) -> Result<TrainReport> {
    if !matches!(cfg.loss, LossKind::L1 | LossKind::L2) {
        return Err(Error::InvalidParameter(format!(
            "pointwise training expects l1 or l2, got {}",
            cfg.loss.name()
        )));
    }
    train(dataset, None, cfg)
}

/// Ordinary least squares on the lagged design: minimizes
/// `sum_i |y_i - M z_i|^2` by the normal equations. Rank-deficient designs
/// fall back to a ridge term `1e-8 * I` when `allow_ridge` is set and error
/// otherwise.
pub fn l2_closed_form(dataset: &LaggedDataset, allow_ridge: bool) -> Result<ArModel> {
    if dataset.is_empty() {
        return Err(Error::InsufficientData("empty dataset".into()));
    }
    let ld = dataset.lag * dataset.dim;
    let mut s_zz = DMatrix::zeros(ld, ld);
    let mut s_yz = DMatrix::zeros(dataset.dim, ld);
    for (z, y) in dataset.windows.iter().zip(&dataset.targets) {
        s_zz.ger(1.0, z, z, 1.0);
        s_yz.ger(1.0, y, z, 1.0);
    }
    let solve = |gram: DMatrix<f64>| -> Option<DMatrix<f64>> {
        let chol = gram.cholesky()?;
        Some(chol.solve(&s_yz.transpose()).transpose())
    };
    let stacked = match solve(s_zz.clone()) {
        Some(m) => m,
        None if allow_ridge => {
            let ridged = s_zz + DMatrix::identity(ld, ld) * 1e-8;
            solve(ridged).ok_or(Error::RankDeficient)?
        }
        None => return Err(Error::RankDeficient),
    };
    ArModel::from_stacked(dataset.lag, dataset.dim, &stacked)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::armodel::build_lagged;

    fn vec2(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    /// Dataset with i.i.d. windows and targets from an explicit linear map;
    /// not tied to a trajectory, which keeps the design full rank.
    fn synthetic_dataset(m0: &DMatrix<f64>, lag: usize, n: usize, seed: u64) -> LaggedDataset {
        let dim = m0.nrows();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut windows = Vec::with_capacity(n);
        let mut targets = Vec::with_capacity(n);
        for _ in 0..n {
            let z = DVector::from_fn(lag * dim, |_, _| rng.random_range(-1.0..1.0));
            targets.push(m0 * &z);
            windows.push(z);
        }
        LaggedDataset {
            windows,
            targets,
            source_indices: (lag..lag + n).collect(),
            lag,
            dim,
        }
    }

    /// Noiseless stable recursion y_k = M0 y_{k-1} with a rotation so the
    /// design stays well conditioned.
    fn rotation_trajectory(n: usize) -> (DMatrix<f64>, Vec<DVector<f64>>) {
        let th = 0.7f64;
        let m0 = DMatrix::from_row_slice(2, 2, &[th.cos(), -th.sin(), th.sin(), th.cos()]) * 0.98;
        let mut traj = vec![vec2(1.0, 0.25)];
        for _ in 1..n {
            traj.push(&m0 * traj.last().unwrap());
        }
        (m0, traj)
    }

    fn covering() -> FeasibleRegion {
        FeasibleRegion::default_covering()
    }

    #[test]
    fn closed_form_recovers_identity() {
        // lag 1, targets equal the window: M0 = I, exact interpolation
        let ds = synthetic_dataset(&DMatrix::identity(2, 2), 1, 50, 3);
        let model = l2_closed_form(&ds, false).unwrap();
        let err = (model.to_stacked() - DMatrix::identity(2, 2)).norm();
        assert!(err < 1e-10, "identity recovery error {err}");
    }

    #[test]
    fn closed_form_recovers_random_map_from_iid_windows() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m0 = DMatrix::from_fn(2, 4, |_, _| rng.random_range(-1.0..1.0));
        let ds = synthetic_dataset(&m0, 2, 300, 4);
        let model = l2_closed_form(&ds, false).unwrap();
        let err = (model.to_stacked() - &m0).norm();
        assert!(err < 1e-8, "recovery error {err}");
    }

    #[test]
    fn closed_form_recovers_random_stable_map() {
        let (m0, traj) = rotation_trajectory(80);
        let ds = build_lagged(&traj, 1).unwrap();
        let model = l2_closed_form(&ds, false).unwrap();
        let err = (model.to_stacked() - &m0).norm();
        assert!(err < 1e-8, "recovery error {err}");
    }

    #[test]
    fn closed_form_underdetermined_uses_ridge() {
        let traj = vec![vec2(1.0, 2.0), vec2(3.0, 4.0)];
        let ds = build_lagged(&traj, 1).unwrap();
        assert_eq!(ds.len(), 1);
        assert!(matches!(
            l2_closed_form(&ds, false),
            Err(Error::RankDeficient)
        ));
        let model = l2_closed_form(&ds, true).unwrap();
        assert_eq!(model.lag(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_identity() {
        let mut state = AdamState::new(2, 2, 0.9, 0.999, 1e-8);
        let mut params = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, 0.5, 3.0]);
        let before = params.clone();
        adam_step(&mut state, &mut params, &DMatrix::zeros(2, 2), 1, 0.1).unwrap();
        assert_eq!(params, before);
    }

    #[test]
    fn adam_step_is_bounded_by_alpha() {
        let mut state = AdamState::new(1, 1, 0.9, 0.999, 1e-8);
        let mut params = DMatrix::from_element(1, 1, 0.0);
        let grad = DMatrix::from_element(1, 1, 123.4);
        let alpha = 0.05;
        for t in 1..=20 {
            let before = params[(0, 0)];
            adam_step(&mut state, &mut params, &grad, t, alpha).unwrap();
            let step = (params[(0, 0)] - before).abs();
            assert!(step <= alpha * (1.0 + 1e-6), "step {step} exceeds alpha");
        }
    }

    #[test]
    fn adam_rejects_bad_inputs() {
        let mut state = AdamState::new(1, 1, 0.9, 0.999, 1e-8);
        let mut params = DMatrix::zeros(1, 1);
        let nan = DMatrix::from_element(1, 1, f64::NAN);
        assert!(adam_step(&mut state, &mut params, &nan, 1, 0.1).is_err());
        let g = DMatrix::zeros(1, 1);
        assert!(adam_step(&mut state, &mut params, &g, 0, 0.1).is_err());
    }

    #[test]
    fn adam_minimizes_quadratic_bowl() {
        // f(M) = |M|_F^2, grad = 2M
        let mut state = AdamState::new(2, 2, 0.9, 0.999, 1e-8);
        let mut params = DMatrix::from_row_slice(2, 2, &[1.0, -0.5, 0.25, 2.0]);
        let mut steps = 0;
        for t in 1..=5000 {
            let grad = &params * 2.0;
            adam_step(&mut state, &mut params, &grad, t, 0.01).unwrap();
            steps = t;
            if params.norm_squared() <= 1e-4 {
                break;
            }
        }
        assert!(
            params.norm_squared() <= 1e-4,
            "f = {} after {steps} steps",
            params.norm_squared()
        );
    }

    #[test]
    fn zero_step_runs_to_max_epochs_unchanged() {
        let (_, traj) = rotation_trajectory(30);
        let ds = build_lagged(&traj, 1).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::SpoPlus,
            step_size: 0.0,
            max_epochs: 7,
            ..TrainConfig::default()
        };
        let report = train_spo_plus(&ds, &covering(), &cfg).unwrap();
        assert_eq!(report.stop_reason, StopReason::MaxEpochs);
        assert_eq!(report.epochs, 7);
        assert_eq!(report.risk_trace.len(), 7);
        // every epoch sees the same (unchanged) model
        for r in &report.risk_trace {
            assert_eq!(*r, report.risk_trace[0]);
        }
        // the initial model is reproduced exactly from the seed
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let init = DMatrix::from_fn(2, 2, |_, _| rng.random_range(-0.1..0.1));
        assert_eq!(report.model.to_stacked(), init);
    }

    #[test]
    fn spo_plus_training_fits_noiseless_recursion() {
        let (m0, traj) = rotation_trajectory(120);
        let ds = build_lagged(&traj, 1).unwrap();
        let region = covering();

        // the generating model achieves zero surrogate risk
        let exact = ArModel::from_stacked(1, 2, &m0).unwrap();
        let risk_at_m0 = empirical_risk(&ds, LossKind::SpoPlus, Some(&region), &exact).unwrap();
        assert!(risk_at_m0 <= 1e-12, "risk at generator = {risk_at_m0}");

        let cfg = TrainConfig {
            loss: LossKind::SpoPlus,
            step_size: 0.02,
            optimizer: OptimizerKind::adam_default(),
            max_epochs: 2000,
            stop_tol: 1e-9,
            seed: 11,
            ..TrainConfig::default()
        };
        let report = train_spo_plus(&ds, &region, &cfg).unwrap();
        let final_risk =
            empirical_risk(&ds, LossKind::SpoPlus, Some(&region), &report.model).unwrap();
        assert!(final_risk <= 1e-3, "final surrogate risk {final_risk}");
    }

    #[test]
    fn l2_gradient_mode_matches_closed_form() {
        let (_, traj) = rotation_trajectory(80);
        let ds = build_lagged(&traj, 1).unwrap();
        let closed = l2_closed_form(&ds, false).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::L2,
            step_size: 0.05,
            optimizer: OptimizerKind::adam_default(),
            max_epochs: 8000,
            stop_tol: 1e-10,
            seed: 2,
            ..TrainConfig::default()
        };
        let report = train_pointwise(&ds, &cfg).unwrap();
        let gap = (report.model.to_stacked() - closed.to_stacked()).norm();
        assert!(gap < 1e-4, "gradient vs closed form gap {gap}");
    }

    #[test]
    fn l1_risk_nonincreasing_under_inv_sqrt_schedule() {
        // symmetric noise around a linear recursion
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (_, clean) = rotation_trajectory(300);
        let noisy: Vec<DVector<f64>> = clean
            .iter()
            .map(|y| {
                vec2(
                    y[0] + 0.01 * (rng.random::<f64>() - 0.5),
                    y[1] + 0.01 * (rng.random::<f64>() - 0.5),
                )
            })
            .collect();
        let ds = build_lagged(&noisy, 1).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::L1,
            step_size: 0.01,
            schedule: Schedule::InvSqrtT,
            max_epochs: 200,
            stop_tol: 1e-12,
            seed: 3,
            ..TrainConfig::default()
        };
        let report = train_pointwise(&ds, &cfg).unwrap();
        for w in report.risk_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "risk increased: {} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn determinism_bitwise() {
        let (_, traj) = rotation_trajectory(60);
        let ds = build_lagged(&traj, 2).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::SpoPlus,
            max_epochs: 40,
            seed: 99,
            ..TrainConfig::default()
        };
        let a = train_spo_plus(&ds, &covering(), &cfg).unwrap();
        let b = train_spo_plus(&ds, &covering(), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn minibatch_mode_is_deterministic_and_trains() {
        let (_, traj) = rotation_trajectory(90);
        let ds = build_lagged(&traj, 1).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::L2,
            step_size: 0.05,
            optimizer: OptimizerKind::adam_default(),
            max_epochs: 100,
            minibatch: Some(16),
            seed: 21,
            ..TrainConfig::default()
        };
        let a = train_pointwise(&ds, &cfg).unwrap();
        let b = train_pointwise(&ds, &cfg).unwrap();
        assert_eq!(a, b);
        assert!(a.risk_trace.last().unwrap() < &a.risk_trace[0]);
    }

    #[test]
    fn stop_reason_semantics() {
        let (_, traj) = rotation_trajectory(50);
        let ds = build_lagged(&traj, 1).unwrap();
        // a generous tolerance is met by the very first (positive) step
        let loose = TrainConfig {
            loss: LossKind::L2,
            step_size: 1e-4,
            optimizer: OptimizerKind::adam_default(),
            max_epochs: 500,
            stop_tol: 10.0,
            ..TrainConfig::default()
        };
        let report = train_pointwise(&ds, &loose).unwrap();
        assert_eq!(report.stop_reason, StopReason::Tolerance);
        assert_eq!(report.epochs, 1);
        assert_eq!(report.risk_trace.len(), 1);

        // an unreachable tolerance runs out the epoch budget
        let tight = TrainConfig {
            loss: LossKind::L2,
            step_size: 1e-4,
            optimizer: OptimizerKind::adam_default(),
            max_epochs: 5,
            stop_tol: 1e-300,
            ..TrainConfig::default()
        };
        let report = train_pointwise(&ds, &tight).unwrap();
        assert_eq!(report.stop_reason, StopReason::MaxEpochs);
        assert_eq!(report.epochs, 5);
        assert_eq!(report.risk_trace.len(), 5);
    }

    #[test]
    fn divergence_guard_fires() {
        let (_, traj) = rotation_trajectory(40);
        let ds = build_lagged(&traj, 1).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::L2,
            step_size: 10.0, // wildly too large for this design
            max_epochs: 200,
            ..TrainConfig::default()
        };
        match train_pointwise(&ds, &cfg) {
            Err(Error::Divergence { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn spo_training_rejected() {
        let (_, traj) = rotation_trajectory(40);
        let ds = build_lagged(&traj, 1).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::Spo,
            ..TrainConfig::default()
        };
        assert!(train(&ds, Some(&covering()), &cfg).is_err());
    }

    #[test]
    fn closed_form_optimizer_dispatch() {
        let (m0, traj) = rotation_trajectory(80);
        let ds = build_lagged(&traj, 1).unwrap();
        let cfg = TrainConfig {
            loss: LossKind::L2,
            optimizer: OptimizerKind::ClosedForm,
            ..TrainConfig::default()
        };
        let report = train_pointwise(&ds, &cfg).unwrap();
        assert_eq!(report.stop_reason, StopReason::ClosedForm);
        assert!((report.model.to_stacked() - &m0).norm() < 1e-8);

        let bad = TrainConfig {
            loss: LossKind::L1,
            optimizer: OptimizerKind::ClosedForm,
            ..TrainConfig::default()
        };
        assert!(train_pointwise(&ds, &bad).is_err());
    }
}
