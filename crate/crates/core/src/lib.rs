//! Noise-tolerant preference optimization on a desk-scale synthetic world.
//!
//! The crate implements the ROPO loss next to its baselines (DPO, IPO and
//! the label-smoothed C-DPO / C-IPO), a symmetric label-flip channel with
//! exact expected risk, closed-form fixed points for single-pair population
//! risks, a full-batch trainer over categorical policies, and the sweep
//! harness and file formats behind the `ropo` CLI.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod harness;
pub mod losses;
pub mod math;
pub mod noise;
pub mod prefmodel;
pub mod theory;
pub mod trainer;

pub use error::{Error, Result};
pub use losses::{evaluate, LossEval, LossKind};
pub use noise::{expected_risk, flip_exact_fraction, flip_labels, linear_risk_residual, NoisyDataset};
pub use prefmodel::{
    implicit_reward, margin, true_preference_prob, Hyper, Label, Policy, PreferenceSample, QueryId,
    ResponseId, World,
};
pub use trainer::{minimize_scalar, numeric_gradient_check, train, RiskMode, TrainConfig, TrainTrace};
