//! Candidate proposers and the state they accumulate between iterations.

use log::debug;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::mutate::{mutate, Edit};
use super::reflect::ReflectionSet;
use crate::dsl::PotentialProgram;
use crate::rng::RngSeed;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProposerError {
    #[error("proposer backend unavailable: {0}")]
    Backend(String),
    #[error("proposer config: {0}")]
    Config(String),
}

/// Feedback a proposer carries from one iteration to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PromptState {
    /// Running prompt of a language-model proposer.
    Prompt { text: String, blocks: usize },
    /// Elite archive of the mutation proposer. `generation` counts reflections.
    Archive { generation: usize, elites: Vec<Elite> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Elite {
    pub program: PotentialProgram,
    pub theta: Vec<f64>,
    #[serde(with = "crate::floatser")]
    pub score: f64,
}

/// One proposed program with its starting parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Proposal {
    pub program: PotentialProgram,
    pub theta_init: Vec<f64>,
    /// How the program was obtained, e.g. `template:staged` or a mutation.
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<Edit>,
}

impl Proposal {
    pub fn from_program(program: PotentialProgram, origin: String) -> Self {
        Proposal { theta_init: program.defaults(), program, origin, edit: None }
    }
}

/// What a proposer may look at when proposing.
#[derive(Debug, Clone)]
pub struct ProposalContext<'a> {
    pub task: &'a str,
    pub iteration: usize,
    /// RoI names present in the demonstrations.
    pub rois: &'a [String],
}

pub trait Proposer {
    /// Short name recorded in candidate provenance.
    fn tag(&self) -> &str;

    /// Whether a fixed seed reproduces the proposals exactly.
    fn reproducible(&self) -> bool;

    fn initial_state(&self, task: &str) -> PromptState;

    /// Exactly `k` parseable proposals with in-bound starting parameters.
    fn propose(&mut self, ctx: &ProposalContext<'_>, state: &PromptState, k: usize) -> Result<Vec<Proposal>, ProposerError>;

    /// Fold the iteration's reflection set into the state.
    fn reflect(&mut self, reflection: &ReflectionSet, state: PromptState) -> PromptState;
}

/// The built-in template library: deliberately rough starting structures.
pub const TEMPLATES: [(&str, &str); 5] = [
    ("reach", include_str!("../../assets/templates/reach.pot")),
    ("reach_grasp", include_str!("../../assets/templates/reach_grasp.pot")),
    ("transport", include_str!("../../assets/templates/transport.pot")),
    ("lift_height", include_str!("../../assets/templates/lift_height.pot")),
    ("staged", include_str!("../../assets/templates/staged.pot")),
];

pub fn default_templates() -> Vec<(String, PotentialProgram)> {
    TEMPLATES
        .iter()
        .map(|(n, src)| (n.to_string(), PotentialProgram::parse(src).expect("built-in template parses")))
        .collect()
}

/// A fallback proposal drawn from the template list, cycling by `slot`.
pub fn template_proposal(templates: &[(String, PotentialProgram)], slot: usize) -> Proposal {
    let (name, p) = &templates[slot % templates.len()];
    Proposal::from_program(p.clone(), format!("template:{name}"))
}

/// Grammar-mutation proposer over an elite archive.
#[derive(Debug, Clone)]
pub struct MutationProposer {
    templates: Vec<(String, PotentialProgram)>,
    seed: RngSeed,
    max_stages: usize,
}

impl MutationProposer {
    pub fn new(seed: RngSeed) -> Self {
        Self::with_templates(seed, default_templates())
    }

    pub fn with_templates(seed: RngSeed, templates: Vec<(String, PotentialProgram)>) -> Self {
        assert!(!templates.is_empty(), "need at least one template");
        MutationProposer { templates, seed, max_stages: 6 }
    }

    pub fn max_stages(mut self, n: usize) -> Self {
        self.max_stages = n.max(1);
        self
    }

    fn child_of(&self, parent: &PotentialProgram, theta: &[f64], ctx: &ProposalContext<'_>, slot: usize, origin: &str) -> Proposal {
        let mut rng = self.seed.derive(ctx.iteration as u64).derive(slot as u64).rng();
        let base = parent.with_defaults(theta);
        match mutate(&base, ctx.rois, self.max_stages, &mut rng) {
            Some((child, edit)) => Proposal {
                theta_init: child.defaults(),
                origin: format!("{origin}+{:?}", edit.kind).to_lowercase(),
                program: child,
                edit: Some(edit),
            },
            None => {
                debug!("no edit applies to {origin}; falling back to a template");
                template_proposal(&self.templates, slot)
            }
        }
    }
}

impl Proposer for MutationProposer {
    fn tag(&self) -> &str {
        "mutation"
    }

    fn reproducible(&self) -> bool {
        true
    }

    fn initial_state(&self, _task: &str) -> PromptState {
        PromptState::Archive { generation: 0, elites: Vec::new() }
    }

    fn propose(&mut self, ctx: &ProposalContext<'_>, state: &PromptState, k: usize) -> Result<Vec<Proposal>, ProposerError> {
        let elites = match state {
            PromptState::Archive { elites, .. } => elites.as_slice(),
            PromptState::Prompt { .. } => return Err(ProposerError::Config("mutation proposer needs an archive state".into())),
        };
        let n_t = self.templates.len();
        Ok((0..k)
            .map(|slot| {
                if elites.is_empty() {
                    // Cold start: each template once, then single edits of them.
                    if slot < n_t {
                        template_proposal(&self.templates, slot)
                    } else {
                        let (name, p) = &self.templates[slot % n_t];
                        self.child_of(p, &p.defaults(), ctx, slot, &format!("template:{name}"))
                    }
                } else {
                    let rank = slot % elites.len();
                    let e = &elites[rank];
                    self.child_of(&e.program, &e.theta, ctx, slot, &format!("elite{rank}"))
                }
            })
            .collect())
    }

    fn reflect(&mut self, reflection: &ReflectionSet, state: PromptState) -> PromptState {
        let generation = match state {
            PromptState::Archive { generation, .. } => generation + 1,
            PromptState::Prompt { .. } => 1,
        };
        let elites = reflection
            .entries
            .iter()
            .filter(|e| e.score_full.is_finite())
            .map(|e| Elite { program: e.program.clone(), theta: e.theta.clone(), score: e.score_full })
            .collect();
        PromptState::Archive { generation, elites }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ctx(rois: &[String]) -> ProposalContext<'_> {
        ProposalContext { task: "t", iteration: 0, rois }
    }

    #[test]
    fn cold_start_uses_templates() {
        let rois = vec!["gripper".to_string(), "object".to_string(), "target".to_string()];
        let mut p = MutationProposer::new(RngSeed(0));
        let state = p.initial_state("t");
        let out = p.propose(&ctx(&rois), &state, 4).unwrap();
        assert_eq!(out.len(), 4);
        for (i, c) in out.iter().enumerate() {
            assert_eq!(c.origin, format!("template:{}", TEMPLATES[i].0));
            assert!(c.program.theta_in_bounds(&c.theta_init));
        }
        let more = p.propose(&ctx(&rois), &state, 8).unwrap();
        assert!(more[5..].iter().all(|c| c.edit.is_some()));
    }

    #[test]
    fn templates_are_not_the_golden_program() {
        let golden = crate::mdporacle::synth::ground_truth_program();
        assert!(default_templates().iter().all(|(_, p)| p != &golden));
    }
}
