//! SOAP: stochastic optimization of the average-precision surrogate.
//!
//! Each iteration draws `B+` positives and `B` general samples, refreshes
//! the per-positive moving averages `u = (u1, u2)` of the inner value
//! `g_i(w)`, forms the biased gradient estimate
//!
//! `G = 1/B+ sum_{i in B+} sum_{j in B} (u1_i - u2_i I(y_j = 1)) / (B u2_i^2) * grad l(w; x_j, x_i)`
//!
//! and applies an SGD, Adam or AMSGrad style step.

use std::time::Instant;

use log::{info, warn};

use crate::data::{Dataset, StratifiedSampler};
use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::objective::check_assumptions;
use crate::record::{l2_norm, Evaluator, RunRecord};
use crate::surrogate::{PairLoss, SmoothPairLoss, SurrogateSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateStyle {
    Sgd,
    Adam,
    AmsGrad,
}

impl std::str::FromStr for UpdateStyle {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(UpdateStyle::Sgd),
            "adam" => Ok(UpdateStyle::Adam),
            "amsgrad" => Ok(UpdateStyle::AmsGrad),
            other => Err(Error::usage(format!("unknown update style `{other}`"))),
        }
    }
}

/// Parameter-update state.
///
/// The adaptive recursions are
///
/// ```text
/// h     <- eta1 h + (1 - eta1) G
/// v     <- eta2 v_hat + (1 - eta2) G^2
/// v_hat <- v                      (Adam)
/// v_hat <- max(v_hat, v)          (AMSGrad)
/// w     <- w - alpha h / sqrt(eps + v_hat)
/// ```
///
/// with no bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct UpdateState {
    pub style: UpdateStyle,
    pub alpha: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub epsilon: f64,
    h: Vec<f64>,
    v: Vec<f64>,
    v_hat: Vec<f64>,
}

impl UpdateState {
    pub fn sgd(alpha: f64, dim: usize) -> Result<Self> {
        Self::new(UpdateStyle::Sgd, alpha, 0.9, 0.999, 1e-8, dim)
    }

    pub fn new(
        style: UpdateStyle,
        alpha: f64,
        eta1: f64,
        eta2: f64,
        epsilon: f64,
        dim: usize,
    ) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::usage(format!("step size must be > 0, got {alpha}")));
        }
        if style != UpdateStyle::Sgd {
            if !(0.0..1.0).contains(&eta1) || !(0.0..1.0).contains(&eta2) {
                return Err(Error::usage(format!(
                    "eta1, eta2 must lie in [0, 1), got {eta1}, {eta2}"
                )));
            }
            if eta1 > eta2.sqrt() {
                return Err(Error::usage(format!(
                    "need eta1 <= sqrt(eta2), got {eta1} > {}",
                    eta2.sqrt()
                )));
            }
            if !(epsilon > 0.0) {
                return Err(Error::usage(format!("epsilon must be > 0, got {epsilon}")));
            }
        }
        Ok(UpdateState {
            style,
            alpha,
            eta1,
            eta2,
            epsilon,
            h: vec![0.0; dim],
            v: vec![0.0; dim],
            v_hat: vec![0.0; dim],
        })
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.h
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.v
    }

    pub fn second_moment_max(&self) -> &[f64] {
        &self.v_hat
    }

    /// Applies one step to `w` in place.
    pub fn step(&mut self, w: &mut [f64], grad: &[f64]) -> Result<()> {
        if w.len() != grad.len() || w.len() != self.h.len() {
            return Err(Error::usage(format!(
                "parameter dimension {} vs gradient {} vs state {}",
                w.len(),
                grad.len(),
                self.h.len()
            )));
        }
        if let Some(k) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::NumericInput(format!(
                "gradient component {k} is {}",
                grad[k]
            )));
        }
        match self.style {
            UpdateStyle::Sgd => {
                for (wk, gk) in w.iter_mut().zip(grad) {
                    *wk -= self.alpha * gk;
                }
            }
            UpdateStyle::Adam | UpdateStyle::AmsGrad => {
                for k in 0..w.len() {
                    let g = grad[k];
                    self.h[k] = self.eta1 * self.h[k] + (1.0 - self.eta1) * g;
                    self.v[k] = self.eta2 * self.v_hat[k] + (1.0 - self.eta2) * g * g;
                    self.v_hat[k] = match self.style {
                        UpdateStyle::AmsGrad => self.v_hat[k].max(self.v[k]),
                        _ => self.v[k],
                    };
                    w[k] -= self.alpha * self.h[k] / (self.epsilon + self.v_hat[k]).sqrt();
                }
            }
        }
        Ok(())
    }
}

/// Functional form of [`UpdateState::step`].
pub fn uw_step(state: &UpdateState, w: &[f64], grad: &[f64]) -> Result<(Vec<f64>, UpdateState)> {
    let mut next = state.clone();
    let mut w = w.to_vec();
    next.step(&mut w, grad)?;
    Ok((w, next))
}

/// Moving-average estimates `(u1, u2)` of every positive's inner value.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    gamma: f64,
    u0: f64,
    /// Dataset row -> estimator row, `None` for negatives.
    slot: Vec<Option<usize>>,
    u1: Vec<f64>,
    u2: Vec<f64>,
    initialized: Vec<bool>,
}

impl EstimatorState {
    pub fn new(data: &Dataset, gamma: f64, u0: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::usage(format!(
                "gamma must lie in (0, 1], got {gamma}"
            )));
        }
        if !(u0 >= 0.0 && u0.is_finite()) {
            return Err(Error::usage(format!(
                "u0 must be finite and >= 0, got {u0}"
            )));
        }
        let mut slot = vec![None; data.len()];
        for (k, &i) in data.positives().iter().enumerate() {
            slot[i] = Some(k);
        }
        let n_pos = data.n_pos();
        Ok(EstimatorState {
            gamma,
            u0,
            slot,
            u1: vec![0.0; n_pos],
            u2: vec![0.0; n_pos],
            initialized: vec![false; n_pos],
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn u0(&self) -> f64 {
        self.u0
    }

    fn slot(&self, i: usize) -> Result<usize> {
        self.slot
            .get(i)
            .copied()
            .flatten()
            .ok_or_else(|| Error::usage(format!("row {i} is not a positive example")))
    }

    /// `(u1, u2)` for positive row `i`, `None` until first touched.
    pub fn get(&self, i: usize) -> Option<(f64, f64)> {
        let k = self.slot(i).ok()?;
        self.initialized[k].then(|| (self.u1[k], self.u2[k]))
    }

    /// Overwrites the estimate for positive row `i` and marks it initialized.
    pub fn set(&mut self, i: usize, u1: f64, u2: f64) -> Result<()> {
        let k = self.slot(i)?;
        self.u1[k] = u1;
        self.u2[k] = u2;
        self.initialized[k] = true;
        Ok(())
    }

    /// Estimates of every initialized row as `(row, u1, u2)`.
    pub fn rows(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        self.slot
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|k| (i, k)))
            .filter(|&(_, k)| self.initialized[k])
            .map(|(i, k)| (i, self.u1[k], self.u2[k]))
    }

    /// Moving-average refresh for every distinct positive in `batch_pos`.
    ///
    /// A first-touched row is set to the minibatch estimate; afterwards
    /// `u1 <- (1 - gamma) u1 + gamma g1` and
    /// `u2 <- max((1 - gamma) u2 + gamma g2, u0)`. Returns the smallest `u2`
    /// among the touched rows.
    pub fn ug_update<L: PairLoss>(
        &mut self,
        model: &ScoreModel,
        loss: &L,
        data: &Dataset,
        batch_all: &[usize],
        batch_pos: &[usize],
    ) -> Result<f64> {
        let scored = ScoredBatch::new(model, data, batch_all, batch_pos)?;
        self.ug_update_scored(loss, data, &scored)
    }

    fn ug_update_scored<L: PairLoss>(
        &mut self,
        loss: &L,
        data: &Dataset,
        batch: &ScoredBatch,
    ) -> Result<f64> {
        let b = batch.all.len() as f64;
        let mut min_u2 = f64::INFINITY;
        let mut seen = Vec::with_capacity(batch.pos.len());
        for (p, &i) in batch.pos.iter().enumerate() {
            if seen.contains(&i) {
                continue;
            }
            seen.push(i);
            let k = self.slot(i)?;
            let anchor = batch.pos_scores[p];
            let (mut g1, mut g2) = (0.0, 0.0);
            for (&j, &s) in batch.all.iter().zip(&batch.all_scores) {
                let l = loss.pair_loss(anchor - s);
                g2 += l;
                if data.is_positive(j) {
                    g1 += l;
                }
            }
            let (g1, g2) = (g1 / b, g2 / b);
            if self.initialized[k] {
                self.u1[k] = (1.0 - self.gamma) * self.u1[k] + self.gamma * g1;
                self.u2[k] = ((1.0 - self.gamma) * self.u2[k] + self.gamma * g2).max(self.u0);
            } else {
                self.u1[k] = g1;
                self.u2[k] = g2.max(self.u0);
                self.initialized[k] = true;
            }
            if !(self.u2[k] >= self.u0) {
                return Err(Error::Invariant(format!(
                    "u2 = {} below clip floor {} for row {i}",
                    self.u2[k], self.u0
                )));
            }
            min_u2 = min_u2.min(self.u2[k]);
        }
        Ok(min_u2)
    }
}

/// A minibatch with its rows gathered and scored once.
struct ScoredBatch {
    pos: Vec<usize>,
    all: Vec<usize>,
    pos_scores: Vec<f64>,
    all_scores: Vec<f64>,
    rows: crate::data::Matrix,
}

impl ScoredBatch {
    fn new(model: &ScoreModel, data: &Dataset, all: &[usize], pos: &[usize]) -> Result<Self> {
        if all.is_empty() {
            return Err(Error::usage("general batch is empty"));
        }
        if let Some(&i) = all.iter().find(|&&i| i >= data.len()) {
            return Err(Error::usage(format!("batch index {i} out of range")));
        }
        if let Some(&i) = pos
            .iter()
            .find(|&&i| i >= data.len() || !data.is_positive(i))
        {
            return Err(Error::usage(format!("row {i} is not a positive example")));
        }
        let idx: Vec<usize> = pos.iter().chain(all).copied().collect();
        let rows = data.features().select_rows(&idx);
        let mut scores = model.forward(&rows)?;
        let all_scores = scores.split_off(pos.len());
        Ok(ScoredBatch {
            pos: pos.to_vec(),
            all: all.to_vec(),
            pos_scores: scores,
            all_scores,
            rows,
        })
    }
}

/// Minibatch gradient estimate from the current moving averages.
///
/// Every `i` in `batch_pos` must already have an initialized row with
/// `u2 > 0`.
pub fn gradient_estimator<L: SmoothPairLoss>(
    state: &EstimatorState,
    model: &ScoreModel,
    loss: &L,
    data: &Dataset,
    batch_all: &[usize],
    batch_pos: &[usize],
) -> Result<Vec<f64>> {
    let scored = ScoredBatch::new(model, data, batch_all, batch_pos)?;
    estimate_scored(state, model, loss, data, &scored)
}

fn estimate_scored<L: SmoothPairLoss>(
    state: &EstimatorState,
    model: &ScoreModel,
    loss: &L,
    data: &Dataset,
    batch: &ScoredBatch,
) -> Result<Vec<f64>> {
    if batch.pos.is_empty() {
        return Err(Error::usage("positive batch is empty"));
    }
    let n_pos = batch.pos.len();
    let b = batch.all.len() as f64;
    let bp = n_pos as f64;
    // Cotangents for the gathered rows: positives first, then the general batch.
    let mut d_scores = vec![0.0; n_pos + batch.all.len()];
    for (p, &i) in batch.pos.iter().enumerate() {
        let (u1, u2) = state.get(i).ok_or_else(|| {
            Error::DivisionDomain(format!("no moving-average estimate for positive {i}"))
        })?;
        if !(u2 > 0.0) {
            return Err(Error::DivisionDomain(format!(
                "u2 = {u2} for positive {i}; use u0 > 0 or a warm start"
            )));
        }
        let anchor = batch.pos_scores[p];
        let scale = 1.0 / (b * u2 * u2 * bp);
        for (q, (&j, &s)) in batch.all.iter().zip(&batch.all_scores).enumerate() {
            let lg = loss.pair_loss_grad(anchor - s);
            if lg == 0.0 {
                continue;
            }
            let weight = if data.is_positive(j) { u1 - u2 } else { u1 };
            let c = weight * scale * lg;
            d_scores[p] += c;
            d_scores[n_pos + q] -= c;
        }
    }
    model.backward(&batch.rows, &d_scores)
}

/// `alpha = 1 / (n+^(2/5) T^(3/5))`, `gamma = n+^(2/5) / T^(2/5)`.
pub fn theoretical_schedule(n_pos: usize, iters: usize) -> Result<(f64, f64)> {
    if n_pos == 0 || iters <= n_pos {
        return Err(Error::Precondition(format!(
            "theoretical schedule needs T > n+ >= 1, got T = {iters}, n+ = {n_pos}"
        )));
    }
    let (n, t) = (n_pos as f64, iters as f64);
    let alpha = 1.0 / (n.powf(0.4) * t.powf(0.6));
    let gamma = n.powf(0.4) / t.powf(0.4);
    Ok((alpha, gamma))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoapConfig {
    pub iters: usize,
    pub batch_size: usize,
    pub batch_pos: usize,
    pub alpha: f64,
    pub gamma: f64,
    pub u0: f64,
    pub update: UpdateStyle,
    pub eta1: f64,
    pub eta2: f64,
    pub epsilon: f64,
    pub eval_every: usize,
    pub seed: u64,
    /// Draw the general batch as the positives plus `batch_size - batch_pos`
    /// extra samples instead of independently.
    pub nested_batches: bool,
}

impl Default for SoapConfig {
    fn default() -> Self {
        SoapConfig {
            iters: 1000,
            batch_size: 64,
            batch_pos: 4,
            alpha: 1e-2,
            gamma: 0.9,
            u0: 0.0,
            update: UpdateStyle::Adam,
            eta1: 0.9,
            eta2: 0.999,
            epsilon: 1e-8,
            eval_every: 100,
            seed: 0,
            nested_batches: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub grad_norm: f64,
    /// Smallest `u2` among the rows refreshed this step.
    pub min_touched_u2: f64,
}

/// Owns the mutable state of one SOAP run.
pub struct SoapTrainer<'a> {
    config: SoapConfig,
    data: &'a Dataset,
    surrogate: SurrogateSpec,
    model: ScoreModel,
    estimator: EstimatorState,
    update: UpdateState,
    sampler: StratifiedSampler,
    iter: usize,
}

impl<'a> SoapTrainer<'a> {
    pub fn new(
        config: SoapConfig,
        data: &'a Dataset,
        model: ScoreModel,
        surrogate: SurrogateSpec,
    ) -> Result<Self> {
        data.require_positive("SOAP training")?;
        if config.eval_every == 0 {
            return Err(Error::usage("eval_every must be at least 1"));
        }
        let report = check_assumptions(&model, &surrogate, data.len());
        match report.min_u0 {
            None => warn!(
                "{surrogate} with unbounded scores violates the bounded-loss assumption; \
                 convergence guarantees do not apply"
            ),
            Some(min_u0) if config.u0 < min_u0 => info!(
                "u0 = {} is below C/n = {min_u0}; running without the theory-compliant clip",
                config.u0
            ),
            Some(_) => {}
        }
        let estimator = EstimatorState::new(data, config.gamma, config.u0)?;
        let update = UpdateState::new(
            config.update,
            config.alpha,
            config.eta1,
            config.eta2,
            config.epsilon,
            model.params().len(),
        )?;
        let sampler =
            StratifiedSampler::new(data, config.batch_pos, config.batch_size, config.seed)?
                .nested(config.nested_batches)?;
        Ok(SoapTrainer {
            config,
            data,
            surrogate,
            model,
            estimator,
            update,
            sampler,
            iter: 0,
        })
    }

    pub fn model(&self) -> &ScoreModel {
        &self.model
    }

    pub fn estimator(&self) -> &EstimatorState {
        &self.estimator
    }

    pub fn update_state(&self) -> &UpdateState {
        &self.update
    }

    pub fn iter(&self) -> usize {
        self.iter
    }

    /// Runs one iteration: sample, refresh `u`, estimate `G`, update `w`.
    pub fn step(&mut self) -> Result<StepStats> {
        let batch = self.sampler.next_batch();
        let scored = ScoredBatch::new(&self.model, self.data, &batch.all, &batch.positives)?;
        let min_touched_u2 =
            self.estimator
                .ug_update_scored(&self.surrogate, self.data, &scored)?;
        let grad = estimate_scored(
            &self.estimator,
            &self.model,
            &self.surrogate,
            self.data,
            &scored,
        )?;
        self.update.step(self.model.params_mut(), &grad)?;
        self.iter += 1;
        Ok(StepStats {
            grad_norm: l2_norm(&grad),
            min_touched_u2,
        })
    }

    /// Runs the configured number of iterations, handing each record to
    /// `sink` as soon as it is produced. Returns the last iterate.
    pub fn run_with<F>(
        mut self,
        val: Option<&Dataset>,
        mut sink: F,
    ) -> Result<(ScoreModel, Vec<RunRecord>)>
    where
        F: FnMut(&RunRecord) -> Result<()>,
    {
        let eval = Evaluator {
            train: self.data,
            val,
            surrogate: self.surrogate,
            start: Instant::now(),
        };
        let mut records = Vec::new();
        for t in 1..=self.config.iters {
            let stats = self.step()?;
            if t % self.config.eval_every == 0 || t == self.config.iters {
                let record = eval.record(t, &self.model, stats.grad_norm)?;
                sink(&record)?;
                records.push(record);
            }
        }
        Ok((self.model, records))
    }
}

pub fn soap_train(
    config: &SoapConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    model: ScoreModel,
    surrogate: SurrogateSpec,
) -> Result<(ScoreModel, Vec<RunRecord>)> {
    SoapTrainer::new(config.clone(), data, model, surrogate)?.run_with(val, |_| Ok(()))
}
