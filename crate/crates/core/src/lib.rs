//! Process-supervised reinforcement learning for long-horizon text agents.
//!
//! The crate bundles a deterministic household text-world ([`env`]), a tagged
//! step-output protocol ([`tags`]), rule-based process rewards ([`reward`]),
//! grouped advantage estimation with a clipped KL-regularised objective
//! ([`objective`]), a featurised softmax policy ([`policy`]), a scripted
//! demonstrator ([`expert`]) and the training/evaluation harness
//! ([`harness`]).

pub mod env;
pub mod error;
pub mod expert;
pub mod harness;
pub mod objective;
pub mod policy;
pub mod reward;
pub mod tags;
pub mod trajectory;

pub use error::{Error, Result};
