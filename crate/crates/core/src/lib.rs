//! Learning symbolic potential functions from a handful of demonstrations,
//! and shaping rewards with them under a milestone-augmented PBRS scheme
//! that provably preserves optimal policies.
//!
//! Module map:
//!
//! - [`data`]: motion-flow frames, trajectories, demonstration datasets and
//!   the JSONL trajectory format.
//! - [`dsl`]: the staged potential-program language (parser, printer,
//!   evaluator).
//! - [`shaping`]: milestone tracking and the shaped reward.
//! - [`surrogate`]: the offline objective used to rank candidate programs.
//! - [`bayesopt`]: Gaussian-process Bayesian optimization of program parameters.
//! - [`synthesis`]: the outer program-search loop with pluggable proposers.
//! - [`mdporacle`]: tabular MDPs, value iteration, the policy-invariance check
//!   and a scripted pick-and-place demonstration generator.

// `!(x > 0.0)` guards deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayesopt;
pub mod data;
pub mod dsl;
pub mod mdporacle;
pub mod parallel;
pub mod rng;
pub mod shaping;
pub mod surrogate;
pub mod synthesis;

mod floatser;

pub use data::{DemoDataset, MotionFlowFrame, Split, Trajectory};
pub use dsl::PotentialProgram;
pub use rng::RngSeed;
pub use shaping::{MilestoneConfig, ShapedTransition, ShapingState};
pub use surrogate::{SurrogateReport, SurrogateWeights};
