//! Full-batch surrogate objective and its exact gradient.
//!
//! For each positive `x_i` the inner value is
//! `g_i = (1/n sum_j I(y_j = 1) l(h_i - h_j), 1/n sum_j l(h_i - h_j))`, the
//! self-pair `j = i` included, and the outer function is `f(s) = -s1 / s2`.
//! The objective `P(w)` averages `f(g_i)` over positives.

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ScoreModel;
use crate::surrogate::{PairLoss, SmoothPairLoss, SurrogateSpec};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InnerValue {
    pub g1: f64,
    pub g2: f64,
}

/// `f(s) = -s.g1 / s.g2` and its gradient `(-1/s.g2, s.g1/s.g2^2)`.
pub fn f_outer(s: InnerValue) -> Result<(f64, [f64; 2])> {
    if !(s.g2 > 0.0) {
        return Err(Error::DivisionDomain(format!(
            "outer function needs g2 > 0, got {}",
            s.g2
        )));
    }
    Ok((-s.g1 / s.g2, [-1.0 / s.g2, s.g1 / (s.g2 * s.g2)]))
}

/// Unnormalized `(sum_j I(y_j = 1) l, sum_j l)` for anchor `i`, in index order.
fn inner_sums<L: PairLoss>(loss: &L, scores: &[f64], data: &Dataset, i: usize) -> (f64, f64) {
    let anchor = scores[i];
    let (mut pos, mut all) = (0.0, 0.0);
    for (j, &s) in scores.iter().enumerate() {
        let l = loss.pair_loss(anchor - s);
        all += l;
        if data.is_positive(j) {
            pos += l;
        }
    }
    (pos, all)
}

fn require_anchor(data: &Dataset, i: usize) -> Result<()> {
    if i >= data.len() || !data.is_positive(i) {
        return Err(Error::usage(format!("row {i} is not a positive example")));
    }
    Ok(())
}

pub fn g_inner_exact<L: PairLoss>(
    model: &ScoreModel,
    loss: &L,
    data: &Dataset,
    i: usize,
) -> Result<InnerValue> {
    require_anchor(data, i)?;
    let scores = model.forward(data.features())?;
    let n = data.len() as f64;
    let (pos, all) = inner_sums(loss, &scores, data, i);
    Ok(InnerValue {
        g1: pos / n,
        g2: all / n,
    })
}

/// `P(w)`, the mean over positives of `f(g_i(w))`.
///
/// The per-positive ratio is taken on the unnormalized sums, which is the
/// same quantity as `f(g_i)`; with [`Indicator`](crate::surrogate::Indicator)
/// this makes `P` bit-identical to minus average precision.
pub fn objective_p<L: PairLoss>(model: &ScoreModel, loss: &L, data: &Dataset) -> Result<f64> {
    data.require_positive("objective")?;
    let scores = model.forward(data.features())?;
    objective_from_scores(loss, &scores, data)
}

pub(crate) fn objective_from_scores<L: PairLoss>(
    loss: &L,
    scores: &[f64],
    data: &Dataset,
) -> Result<f64> {
    let mut sum = 0.0;
    for &i in data.positives() {
        let (pos, all) = inner_sums(loss, scores, data, i);
        if !(all > 0.0) {
            return Err(Error::DivisionDomain(format!(
                "total surrogate mass for positive {i} is {all}"
            )));
        }
        sum += -pos / all;
    }
    let value = sum / data.n_pos() as f64;
    if !(-1.0..=0.0).contains(&value) {
        return Err(Error::Invariant(format!(
            "objective {value} outside [-1, 0]"
        )));
    }
    Ok(value)
}

/// Exact gradient of `P(w)` by the chain rule through every pair.
///
/// Each pair `(i, j)` contributes `c_ij * (grad h_i - grad h_j)`, so all
/// coefficients are folded into one score cotangent and a single backward
/// pass.
pub fn grad_p_exact<L: SmoothPairLoss>(
    model: &ScoreModel,
    loss: &L,
    data: &Dataset,
) -> Result<Vec<f64>> {
    data.require_positive("objective gradient")?;
    let scores = model.forward(data.features())?;
    let n = data.len() as f64;
    let n_pos = data.n_pos() as f64;
    let mut d_scores = vec![0.0; data.len()];
    for &i in data.positives() {
        let (pos, all) = inner_sums(loss, &scores, data, i);
        let (_, [a, b]) = f_outer(InnerValue {
            g1: pos / n,
            g2: all / n,
        })?;
        let anchor = scores[i];
        for (j, &s) in scores.iter().enumerate() {
            let lg = loss.pair_loss_grad(anchor - s);
            if lg == 0.0 {
                continue;
            }
            let outer = if data.is_positive(j) { a + b } else { b };
            let c = outer * lg / (n * n_pos);
            d_scores[i] += c;
            d_scores[j] -= c;
        }
    }
    model.backward(data.features(), &d_scores)
}

/// Outcome of comparing [`grad_p_exact`] with central finite differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    /// `|analytic - numeric| / max(|analytic|, |numeric|)` in the L2 norm;
    /// zero when both vanish.
    pub rel_error: f64,
}

pub fn gradcheck<L: SmoothPairLoss>(
    model: &ScoreModel,
    loss: &L,
    data: &Dataset,
    step: f64,
) -> Result<GradCheck> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::usage(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let analytic = grad_p_exact(model, loss, data)?;
    let mut probe = model.clone();
    let mut numeric = Vec::with_capacity(analytic.len());
    for k in 0..analytic.len() {
        let w = model.params()[k];
        probe.params_mut()[k] = w + step;
        let up = objective_p(&probe, loss, data)?;
        probe.params_mut()[k] = w - step;
        let down = objective_p(&probe, loss, data)?;
        probe.params_mut()[k] = w;
        numeric.push((up - down) / (2.0 * step));
    }
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut analytic.iter().zip(&numeric).map(|(a, b)| a - b));
    let scale = norm(&mut analytic.iter().copied()).max(norm(&mut numeric.iter().copied()));
    let rel_error = if scale == 0.0 { 0.0 } else { diff / scale };
    Ok(GradCheck {
        analytic,
        numeric,
        rel_error,
    })
}

/// Whether the bounded-loss condition (`l(x_i, x_i) >= C`, every
/// `l <= M`) holds for this surrogate and model output range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AssumptionReport {
    /// `(C, M)` when both bounds exist.
    pub bounds: Option<(f64, f64)>,
    /// Smallest clip floor `C / n` compatible with the bounds.
    pub min_u0: Option<f64>,
}

impl AssumptionReport {
    pub fn holds(&self) -> bool {
        self.bounds.is_some()
    }
}

pub fn check_assumptions(model: &ScoreModel, spec: &SurrogateSpec, n: usize) -> AssumptionReport {
    let bounds = spec.loss_bounds(model.squash());
    AssumptionReport {
        bounds,
        min_u0: bounds.map(|(c, _)| c / n.max(1) as f64),
    }
}
