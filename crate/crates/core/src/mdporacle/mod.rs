//! Ground truth at desk scale.
//!
//! [`mdp`] holds finite MDPs, value iteration and the check that shaping on
//! the milestone-augmented MDP leaves greedy policies unchanged; [`suite`]
//! runs that check over randomized instances; [`synth`] generates labeled
//! pick-and-place demonstrations with a known good potential program.

pub mod mdp;
pub mod suite;
pub mod synth;

pub use mdp::{
    augment_and_shape, check_policy_invariance, value_iteration, AugmentedMdp, Edge, InvarianceReport, MdpError,
    Solution, TabularMdp,
};
pub use suite::{run_suite, SuiteConfig, SuiteReport};
pub use synth::{generate_demos, generate_rollouts, ground_truth_program, RolloutKind, StartRegion, SyntheticTask};
