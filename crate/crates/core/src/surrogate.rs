//! Smooth pairwise surrogates for the ranking indicator `I(h_s >= h_i)`.
//!
//! Every surrogate is written as a function of `diff = h(x_i) - h(x_s)`,
//! where `x_i` is the anchoring positive and `x_s` any other sample. All of
//! them are non-increasing in `diff`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// A loss over the score difference of an anchor/sample pair.
pub trait PairLoss {
    fn pair_loss(&self, diff: f64) -> f64;
}

/// A pair loss with an analytic derivative in `diff`.
pub trait SmoothPairLoss: PairLoss {
    fn pair_loss_grad(&self, diff: f64) -> f64;
}

/// The exact 0/1 indicator `I(h_s >= h_i)`, i.e. `I(diff <= 0)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Indicator;

impl PairLoss for Indicator {
    fn pair_loss(&self, diff: f64) -> f64 {
        if diff <= 0.0 {
            1.0
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SurrogateSpec {
    /// `max(m - diff, 0)^2`
    SquaredHinge { margin: f64 },
    /// `log(1 + exp(-c * diff))`
    Logistic { scale: f64 },
    /// `1 / (1 + exp(c * diff))`
    Sigmoid { scale: f64 },
}

impl Default for SurrogateSpec {
    fn default() -> Self {
        SurrogateSpec::SquaredHinge { margin: 1.0 }
    }
}

impl SurrogateSpec {
    pub fn squared_hinge(margin: f64) -> Result<Self> {
        Self::SquaredHinge { margin }.validated()
    }

    pub fn logistic(scale: f64) -> Result<Self> {
        Self::Logistic { scale }.validated()
    }

    pub fn sigmoid(scale: f64) -> Result<Self> {
        Self::Sigmoid { scale }.validated()
    }

    /// Builds a spec from its config form `{kind, margin?, scale?}`.
    pub fn from_parts(kind: &str, margin: Option<f64>, scale: Option<f64>) -> Result<Self> {
        match kind {
            "squared_hinge" => Self::squared_hinge(margin.unwrap_or(1.0)),
            "logistic" => Self::logistic(scale.unwrap_or(1.0)),
            "sigmoid" => Self::sigmoid(scale.unwrap_or(1.0)),
            other => Err(Error::usage(format!("unknown surrogate kind `{other}`"))),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            SurrogateSpec::SquaredHinge { .. } => "squared_hinge",
            SurrogateSpec::Logistic { .. } => "logistic",
            SurrogateSpec::Sigmoid { .. } => "sigmoid",
        }
    }

    pub fn validated(self) -> Result<Self> {
        let (name, value) = match self {
            SurrogateSpec::SquaredHinge { margin } => ("margin", margin),
            SurrogateSpec::Logistic { scale } | SurrogateSpec::Sigmoid { scale } => {
                ("scale", scale)
            }
        };
        if value.is_finite() && value > 0.0 {
            Ok(self)
        } else {
            Err(Error::usage(format!(
                "{} {name} must be finite and > 0, got {value}",
                self.kind()
            )))
        }
    }

    pub fn loss(&self, diff: f64) -> Result<f64> {
        check_diff(diff)?;
        Ok(self.pair_loss(diff))
    }

    /// Derivative of [`loss`](Self::loss) with respect to `diff`.
    pub fn loss_grad(&self, diff: f64) -> Result<f64> {
        check_diff(diff)?;
        Ok(self.pair_loss_grad(diff))
    }

    /// Lower bound `C` on the self-pair loss and upper bound `M` on any pair
    /// loss, when both exist for the given score range.
    ///
    /// `squashed` means scores live in `(0, 1)`, so `|diff| < 1`. Returns
    /// `None` when the loss is unbounded over the reachable differences.
    pub fn loss_bounds(&self, squashed: bool) -> Option<(f64, f64)> {
        let self_pair = self.pair_loss(0.0);
        match *self {
            SurrogateSpec::Sigmoid { .. } => Some((self_pair, 1.0)),
            _ if squashed => Some((self_pair, self.pair_loss(-1.0))),
            _ => None,
        }
    }
}

fn check_diff(diff: f64) -> Result<()> {
    if diff.is_finite() {
        Ok(())
    } else {
        Err(Error::NumericInput(format!("score difference {diff}")))
    }
}

/// `log(1 + exp(x))` without overflow.
pub(crate) fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `1 / (1 + exp(-x))` without overflow.
pub(crate) fn logistic_fn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl PairLoss for SurrogateSpec {
    fn pair_loss(&self, diff: f64) -> f64 {
        match *self {
            SurrogateSpec::SquaredHinge { margin } => {
                let gap = (margin - diff).max(0.0);
                gap * gap
            }
            SurrogateSpec::Logistic { scale } => softplus(-scale * diff),
            SurrogateSpec::Sigmoid { scale } => logistic_fn(-scale * diff),
        }
    }
}

impl SmoothPairLoss for SurrogateSpec {
    fn pair_loss_grad(&self, diff: f64) -> f64 {
        match *self {
            SurrogateSpec::SquaredHinge { margin } => -2.0 * (margin - diff).max(0.0),
            SurrogateSpec::Logistic { scale } => -scale * logistic_fn(-scale * diff),
            SurrogateSpec::Sigmoid { scale } => {
                let s = logistic_fn(-scale * diff);
                -scale * s * (1.0 - s)
            }
        }
    }
}

impl fmt::Display for SurrogateSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SurrogateSpec::SquaredHinge { margin } => write!(f, "squared_hinge(m={margin})"),
            SurrogateSpec::Logistic { scale } => write!(f, "logistic(c={scale})"),
            SurrogateSpec::Sigmoid { scale } => write!(f, "sigmoid(c={scale})"),
        }
    }
}

impl FromStr for SurrogateSpec {
    type Err = Error;

    /// Parses a bare kind name with default hyperparameters.
    fn from_str(s: &str) -> Result<Self> {
        Self::from_parts(s.trim(), None, None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn all_specs() -> Vec<SurrogateSpec> {
        vec![
            SurrogateSpec::squared_hinge(1.0).unwrap(),
            SurrogateSpec::squared_hinge(0.5).unwrap(),
            SurrogateSpec::logistic(1.0).unwrap(),
            SurrogateSpec::logistic(2.0).unwrap(),
            SurrogateSpec::sigmoid(1.0).unwrap(),
            SurrogateSpec::sigmoid(2.0).unwrap(),
        ]
    }

    #[test]
    fn loss_examples() {
        let hinge = SurrogateSpec::squared_hinge(1.0).unwrap();
        assert_eq!(hinge.loss(1.0).unwrap(), 0.0);
        assert_eq!(hinge.loss(0.0).unwrap(), 1.0);
        assert_eq!(hinge.loss(3.0).unwrap(), 0.0);
        let logistic = SurrogateSpec::logistic(1.0).unwrap();
        assert!((logistic.loss(0.0).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let sigmoid = SurrogateSpec::sigmoid(1.0).unwrap();
        assert_eq!(sigmoid.loss(0.0).unwrap(), 0.5);
    }

    #[test]
    fn grad_examples() {
        let hinge = SurrogateSpec::squared_hinge(1.0).unwrap();
        assert_eq!(hinge.loss_grad(0.0).unwrap(), -2.0);
        assert_eq!(hinge.loss_grad(2.0).unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(SurrogateSpec::squared_hinge(0.0).is_err());
        assert!(SurrogateSpec::logistic(-1.0).is_err());
        assert!(SurrogateSpec::sigmoid(f64::NAN).is_err());
        assert!(SurrogateSpec::from_parts("hinge", None, None).is_err());
        let s = SurrogateSpec::default();
        assert!(matches!(s.loss(f64::INFINITY), Err(Error::NumericInput(_))));
        assert!(matches!(s.loss_grad(f64::NAN), Err(Error::NumericInput(_))));
    }

    #[test]
    fn logistic_is_stable_for_large_negative_diff() {
        let s = SurrogateSpec::logistic(2.0).unwrap();
        let v = s.loss(-400.0).unwrap();
        assert!((v - 800.0).abs() < 1e-9);
        assert!((s.loss_grad(-400.0).unwrap() + 2.0).abs() < 1e-12);
        assert!(s.loss(400.0).unwrap() >= 0.0);
    }

    #[test]
    fn grad_matches_central_differences() {
        let h = 1e-6;
        for spec in all_specs() {
            for k in -40..=40 {
                let diff = k as f64 * 0.0737 + 0.013;
                let fd = (spec.loss(diff + h).unwrap() - spec.loss(diff - h).unwrap()) / (2.0 * h);
                let an = spec.loss_grad(diff).unwrap();
                let scale = an.abs().max(1e-3);
                assert!(
                    (fd - an).abs() / scale < 1e-6,
                    "{spec} diff={diff} fd={fd} an={an}"
                );
            }
        }
    }

    #[test]
    fn limits() {
        for spec in all_specs() {
            assert!(spec.loss(60.0).unwrap() < 1e-12, "{spec}");
            let far = spec.loss(-1e6).unwrap();
            match spec {
                SurrogateSpec::Sigmoid { .. } => assert!((far - 1.0).abs() < 1e-12),
                _ => assert!(far > 1e5),
            }
        }
    }

    #[test]
    fn bounds_depend_on_squash() {
        let hinge = SurrogateSpec::squared_hinge(1.0).unwrap();
        assert_eq!(hinge.loss_bounds(true), Some((1.0, 4.0)));
        assert_eq!(hinge.loss_bounds(false), None);
        let sig = SurrogateSpec::sigmoid(1.0).unwrap();
        assert_eq!(sig.loss_bounds(false), Some((0.5, 1.0)));
    }

    proptest::proptest! {
        #[test]
        fn monotone_and_nonnegative(a in -50.0f64..50.0, b in -50.0f64..50.0, which in 0usize..6) {
            let spec = all_specs()[which];
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let (l_lo, l_hi) = (spec.loss(lo).unwrap(), spec.loss(hi).unwrap());
            proptest::prop_assert!(l_lo >= 0.0 && l_hi >= 0.0);
            proptest::prop_assert!(l_lo >= l_hi);
            proptest::prop_assert!(spec.loss_grad(a).unwrap() <= 0.0);
        }
    }
}
