//! A from-scratch convolutional text classifier for five-level suicide-risk
//! labels, with hard, uniform-smoothed, and Monte-Carlo-dropout smoothed
//! training targets, plus the evaluation metrics and experiment harness used
//! to compare them.

pub mod corpus;
pub mod error;
pub mod harness;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod smoothing;
pub mod textpipe;

pub use error::{Error, Result};
pub use labels::{LabelDistribution, RiskClass, CLASS_COUNT};
