//! Stochastic optimization of average precision for binary classifiers.
//!
//! The crate provides exact ranking metrics, the pairwise surrogate
//! objective with its exact gradient, the SOAP optimizer (per-positive
//! moving averages plus SGD/Adam/AMSGrad updates), decomposable-loss
//! baselines and an experiment harness.

// `!(x > 0.0)` is used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod objective;
pub mod record;
pub mod soap;
pub mod surrogate;

pub use data::{Batch, Dataset, Matrix, StratifiedSampler};
pub use error::{Error, Result};
pub use metrics::{auprc_trapezoid, average_precision, imbalance_ratio, pr_curve, Label, PrCurve};
pub use model::{Arch, ScoreModel};
pub use objective::{f_outer, g_inner_exact, grad_p_exact, objective_p, InnerValue};
pub use record::RunRecord;
pub use soap::{
    gradient_estimator, soap_train, theoretical_schedule, uw_step, EstimatorState, SoapConfig,
    SoapTrainer, UpdateState, UpdateStyle,
};
pub use surrogate::{Indicator, SurrogateSpec};
