//! Decomposable-loss baselines: cross entropy, class-balanced cross
//! entropy and focal loss, trained on squashed scores `p = h_w(x)`.
//!
//! Class-balanced weights follow the effective-number scheme
//! `w_y = (1 - beta) / (1 - beta^{n_y})`, rescaled so the two class weights
//! average to one. The default `beta = 0.999` and focal `gamma = 2` are the
//! conventional settings for these losses.

use std::time::Instant;

use crate::data::{Dataset, StratifiedSampler};
use crate::error::{Error, Result};
use crate::metrics::Label;
use crate::model::ScoreModel;
use crate::record::{l2_norm, Evaluator, RunRecord};
use crate::soap::{SoapConfig, UpdateState};
use crate::surrogate::SurrogateSpec;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineSpec {
    Ce,
    CbCe { beta: f64 },
    Focal { gamma: f64 },
}

impl BaselineSpec {
    pub fn cb_ce_default() -> Self {
        BaselineSpec::CbCe { beta: 0.999 }
    }

    pub fn focal_default() -> Self {
        BaselineSpec::Focal { gamma: 2.0 }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaselineSpec::Ce => "ce",
            BaselineSpec::CbCe { .. } => "cb_ce",
            BaselineSpec::Focal { .. } => "focal",
        }
    }

    pub fn validated(self) -> Result<Self> {
        match self {
            BaselineSpec::CbCe { beta } if !(0.0..1.0).contains(&beta) => Err(Error::usage(
                format!("cb_ce beta must lie in [0, 1), got {beta}"),
            )),
            BaselineSpec::Focal { gamma } if !(gamma >= 0.0 && gamma.is_finite()) => Err(
                Error::usage(format!("focal gamma must be finite and >= 0, got {gamma}")),
            ),
            ok => Ok(ok),
        }
    }
}

/// A baseline with its class weights resolved against a training set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BaselineLoss {
    pub spec: BaselineSpec,
    pub weight_pos: f64,
    pub weight_neg: f64,
}

impl BaselineLoss {
    pub fn new(spec: BaselineSpec, data: &Dataset) -> Result<Self> {
        let n_pos = data.n_pos();
        Self::with_counts(spec, n_pos, data.len() - n_pos)
    }

    pub fn with_counts(spec: BaselineSpec, n_pos: usize, n_neg: usize) -> Result<Self> {
        let spec = spec.validated()?;
        let (weight_pos, weight_neg) = match spec {
            BaselineSpec::CbCe { beta } => {
                let raw = |count: usize| {
                    if count == 0 {
                        0.0
                    } else {
                        (1.0 - beta) / (1.0 - beta.powi(count as i32))
                    }
                };
                let (wp, wn) = (raw(n_pos), raw(n_neg));
                let present = usize::from(n_pos > 0) + usize::from(n_neg > 0);
                let norm = present as f64 / (wp + wn);
                (wp * norm, wn * norm)
            }
            _ => (1.0, 1.0),
        };
        Ok(BaselineLoss {
            spec,
            weight_pos,
            weight_neg,
        })
    }

    /// Loss and its derivative in the score `p`, which must lie strictly
    /// inside `(0, 1)`.
    pub fn loss_grad(&self, score: f64, label: Label) -> Result<(f64, f64)> {
        if !(score > 0.0 && score < 1.0) {
            return Err(Error::NumericInput(format!(
                "baseline losses need a score in (0, 1), got {score}"
            )));
        }
        // p_label and d p_label / d score
        let (p, dp, weight) = match label {
            1 => (score, 1.0, self.weight_pos),
            -1 => (1.0 - score, -1.0, self.weight_neg),
            other => return Err(Error::usage(format!("label {other} is not +1 or -1"))),
        };
        let log_p = p.ln();
        let (loss, d_loss_dp) = match self.spec {
            BaselineSpec::Ce | BaselineSpec::CbCe { .. } => (-log_p, -1.0 / p),
            BaselineSpec::Focal { gamma } => {
                let q = 1.0 - p;
                let modulating = q.powf(gamma);
                let d_mod = if gamma == 0.0 {
                    0.0
                } else {
                    -gamma * q.powf(gamma - 1.0)
                };
                (-modulating * log_p, -d_mod * log_p - modulating / p)
            }
        };
        Ok((weight * loss, weight * d_loss_dp * dp))
    }
}

pub fn baseline_loss_grad(loss: &BaselineLoss, score: f64, label: Label) -> Result<(f64, f64)> {
    loss.loss_grad(score, label)
}

/// Minibatch training on a decomposable loss.
///
/// Uses the batch size, step size, update style, evaluation cadence and
/// seed from `config`; the moving-average fields are ignored. Logged
/// objectives are `-P(w)` under `eval_surrogate` so curves are comparable
/// with SOAP runs.
pub fn baseline_train(
    config: &SoapConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    model: ScoreModel,
    spec: BaselineSpec,
    eval_surrogate: SurrogateSpec,
) -> Result<(ScoreModel, Vec<RunRecord>)> {
    baseline_train_with(config, data, val, model, spec, eval_surrogate, |_| Ok(()))
}

pub fn baseline_train_with<F>(
    config: &SoapConfig,
    data: &Dataset,
    val: Option<&Dataset>,
    mut model: ScoreModel,
    spec: BaselineSpec,
    eval_surrogate: SurrogateSpec,
    mut sink: F,
) -> Result<(ScoreModel, Vec<RunRecord>)>
where
    F: FnMut(&RunRecord) -> Result<()>,
{
    data.require_positive("baseline training")?;
    if !model.squash() {
        return Err(Error::usage(
            "baseline losses need a squashed (probability) model",
        ));
    }
    if config.eval_every == 0 {
        return Err(Error::usage("eval_every must be at least 1"));
    }
    let loss = BaselineLoss::new(spec, data)?;
    let mut update = UpdateState::new(
        config.update,
        config.alpha,
        config.eta1,
        config.eta2,
        config.epsilon,
        model.params().len(),
    )?;
    let mut sampler = StratifiedSampler::new(data, 1, config.batch_size, config.seed)?;
    let eval = Evaluator {
        train: data,
        val,
        surrogate: eval_surrogate,
        start: Instant::now(),
    };

    let mut records = Vec::new();
    let b = config.batch_size as f64;
    for t in 1..=config.iters {
        let idx = sampler.next_uniform();
        let rows = data.features().select_rows(&idx);
        let scores = model.forward(&rows)?;
        let mut d_scores = Vec::with_capacity(idx.len());
        for (&i, &s) in idx.iter().zip(&scores) {
            let (_, d) = loss.loss_grad(s, data.labels()[i])?;
            d_scores.push(d / b);
        }
        let grad = model.backward(&rows, &d_scores)?;
        update.step(model.params_mut(), &grad)?;
        if t % config.eval_every == 0 || t == config.iters {
            let record = eval.record(t, &model, l2_norm(&grad))?;
            sink(&record)?;
            records.push(record);
        }
    }
    Ok((model, records))
}
