//! Program search: propose structures, tune their parameters, keep the best.
//!
//! Each iteration asks the proposer for `K` programs, tunes every program's
//! parameters with Bayesian optimization against the objective on the
//! training split, scores the tuned program on all demonstrations, hands the
//! top `m` back to the proposer as feedback, and checkpoints.

pub mod llm;
pub mod mutate;
pub mod proposer;
pub mod reflect;

use std::path::{Path, PathBuf};

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bayesopt::{optimize, BoConfig, BoError};
use crate::data::DemoDataset;
use crate::dsl::PotentialProgram;
use crate::parallel::Exec;
use crate::rng::RngSeed;
use crate::surrogate::{score_with, ComponentScores, SurrogateWeights};

pub use llm::{ChatBackend, HttpBackend, LlmProposer, LlmSettings};
pub use mutate::{Edit, EditKind};
pub use proposer::{MutationProposer, PromptState, Proposal, ProposalContext, Proposer, ProposerError};
pub use reflect::{ReflectionEntry, ReflectionSet};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthesisConfig {
    /// Outer iterations `N`.
    pub iterations: usize,
    /// Candidates per iteration `K`.
    pub batch_size: usize,
    /// Reflection set size `m`.
    pub reflection_size: usize,
    pub weights: SurrogateWeights,
    /// Discount used by the positivity component.
    pub gamma: f64,
    pub bo: BoConfig,
    pub seed: RngSeed,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig {
            iterations: 10,
            batch_size: 8,
            reflection_size: 3,
            weights: SurrogateWeights::default(),
            gamma: 0.99,
            bo: BoConfig::default(),
            seed: RngSeed(0),
        }
    }
}

impl SynthesisConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        let bad = |m: &str| Err(SynthesisError::Config(m.to_string()));
        if self.iterations < 1 {
            return bad("N ≥ 1");
        }
        if self.batch_size < 1 {
            return bad("K ≥ 1");
        }
        if self.reflection_size < 1 || self.reflection_size > self.batch_size {
            return bad("need 1 ≤ m ≤ K");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma must lie in (0, 1]");
        }
        self.weights.validate().map_err(|e| SynthesisError::Config(e.to_string()))?;
        self.bo.validate().map_err(|e| match e {
            BoError::Config(m) => SynthesisError::Config(m),
            other => SynthesisError::Config(other.to_string()),
        })
    }
}

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("config: {0}")]
    Config(String),
    #[error("dataset unlabeled")]
    Unlabeled,
    #[error("proposal step failed")]
    Proposer {
        #[source]
        source: ProposerError,
        checkpoint: Option<PathBuf>,
    },
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
}

/// A proposed program and what the loop learned about it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub iteration: usize,
    pub index: usize,
    pub proposer: String,
    pub origin: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edit: Option<Edit>,
    pub program: PotentialProgram,
    pub theta_init: Vec<f64>,
    pub theta_opt: Option<Vec<f64>>,
    #[serde(with = "crate::floatser::opt", default)]
    pub score_train: Option<f64>,
    /// Objective on all demonstrations, the selection key.
    #[serde(with = "crate::floatser::opt", default)]
    pub score_full: Option<f64>,
    pub train_components: Option<ComponentScores>,
    pub val_components: Option<ComponentScores>,
    pub evaluations: usize,
    pub failed_evaluations: usize,
    pub failure: Option<String>,
}

impl Candidate {
    fn sort_key(&self) -> (f64, usize, usize) {
        (self.score_full.unwrap_or(f64::NEG_INFINITY), self.iteration, self.index)
    }

    /// Strict total order: higher score first, then earlier iteration and index.
    pub fn better_than(&self, other: &Candidate) -> bool {
        let (a, b) = (self.sort_key(), other.sort_key());
        match a.0.total_cmp(&b.0) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => (a.1, a.2) < (b.1, b.2),
        }
    }

    pub fn theta(&self) -> &[f64] {
        self.theta_opt.as_deref().unwrap_or(&self.theta_init)
    }

    /// The program with its tuned parameters written in as defaults.
    pub fn tuned_program(&self) -> PotentialProgram {
        self.program.with_defaults(self.theta())
    }
}

/// Everything needed to continue an interrupted run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub config: SynthesisConfig,
    pub proposer: String,
    pub next_iteration: usize,
    pub state: PromptState,
    pub best: Option<Candidate>,
    /// Best score after each completed iteration.
    #[serde(with = "crate::floatser::vec")]
    pub best_history: Vec<f64>,
    pub log: Vec<Candidate>,
    /// Validation reads observed while parameters were being tuned.
    pub inner_val_reads: usize,
}

pub const CHECKPOINT_VERSION: u32 = 1;

impl Checkpoint {
    pub fn load(path: &Path) -> Result<Self, SynthesisError> {
        let err = |message: String| SynthesisError::Checkpoint { path: path.to_path_buf(), message };
        let text = std::fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let c: Checkpoint = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        if c.version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {}", c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: &Path) -> Result<(), SynthesisError> {
        let err = |message: String| SynthesisError::Checkpoint { path: path.to_path_buf(), message };
        let text = serde_json::to_string_pretty(self).map_err(|e| err(e.to_string()))?;
        // Write then rename so a crash never leaves a truncated checkpoint.
        let tmp = path.with_extension("tmp");
        std::fs::write(&tmp, text).map_err(|e| err(e.to_string()))?;
        std::fs::rename(&tmp, path).map_err(|e| err(e.to_string()))
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Written after every iteration.
    pub checkpoint: Option<PathBuf>,
    pub resume: Option<Checkpoint>,
    pub exec: Exec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOutcome {
    pub best: Candidate,
    pub log: Vec<Candidate>,
    #[serde(with = "crate::floatser::vec")]
    pub best_history: Vec<f64>,
    pub state: PromptState,
    pub inner_val_reads: usize,
}

impl SynthesisOutcome {
    /// One JSON object per candidate.
    pub fn log_jsonl(&self) -> String {
        let mut out = String::new();
        for c in &self.log {
            out.push_str(&serde_json::to_string(c).expect("candidates serialize"));
            out.push('\n');
        }
        out
    }
}

/// Tune one proposal on the training split.
fn tune(dataset: &DemoDataset, config: &SynthesisConfig, seed: RngSeed, p: &Proposal) -> (Option<Vec<f64>>, Option<f64>, usize, usize, Option<String>) {
    let train = dataset.train();
    let objective = |theta: &[f64]| match score_with(&p.program, theta, train, &config.weights, config.gamma, Exec::Sequential) {
        Ok(r) => r.j,
        Err(_) => f64::NEG_INFINITY,
    };
    let bo = BoConfig { seed, ..config.bo.clone() };
    match optimize(objective, &p.theta_init, &p.program.bounds(), &bo) {
        Ok(o) => (Some(o.best_theta), Some(o.best_value), o.history.len(), o.failed, None),
        Err(BoError::AllFailed) => (None, None, bo.budget, bo.budget, Some("every parameter setting failed to evaluate".into())),
        Err(e) => (None, None, 0, 0, Some(e.to_string())),
    }
}

fn mean_components(r: Result<crate::SurrogateReport, crate::surrogate::SurrogateError>) -> Option<ComponentScores> {
    r.ok().filter(|r| !r.is_failure()).and_then(|r| r.mean())
}

/// Run the search. Resumes from `options.resume` when given.
pub fn run_synthesis(
    dataset: &DemoDataset,
    config: &SynthesisConfig,
    task: &str,
    proposer: &mut dyn Proposer,
    options: &RunOptions,
) -> Result<SynthesisOutcome, SynthesisError> {
    config.validate()?;
    if !dataset.is_labeled() {
        return Err(SynthesisError::Unlabeled);
    }
    let rois: Vec<String> = dataset.train()[0].initial().clusters.keys().cloned().collect();
    let (mut state, mut best, mut best_history, mut log, mut inner_val_reads, start) = match &options.resume {
        Some(c) => {
            if c.proposer != proposer.tag() {
                return Err(SynthesisError::Config(format!("checkpoint was written by the {} proposer", c.proposer)));
            }
            let mut want = config.clone();
            want.iterations = c.config.iterations;
            if want != c.config {
                return Err(SynthesisError::Config("checkpoint config differs from this run (only N may change)".into()));
            }
            (c.state.clone(), c.best.clone(), c.best_history.clone(), c.log.clone(), c.inner_val_reads, c.next_iteration)
        }
        None => (proposer.initial_state(task), None, Vec::new(), Vec::new(), 0, 0),
    };

    let tag = proposer.tag().to_string();
    for iteration in start..config.iterations {
        let ctx = ProposalContext { task, iteration, rois: &rois };
        let proposals = proposer
            .propose(&ctx, &state, config.batch_size)
            .map_err(|source| SynthesisError::Proposer { source, checkpoint: options.checkpoint.clone() })?;

        // Inner loop: training split only.
        let reads_before = dataset.val_reads();
        let tuned = options.exec.map_range(proposals.len(), |i| {
            tune(dataset, config, config.seed.derive(0xB0).derive(iteration as u64).derive(i as u64), &proposals[i])
        });
        inner_val_reads += dataset.val_reads() - reads_before;

        // Outer scoring on all demonstrations, with per-split breakdowns.
        let batch: Vec<Candidate> = options.exec.map_range(proposals.len(), |i| {
            let p = &proposals[i];
            let (theta_opt, score_train, evaluations, failed, failure) = tuned[i].clone();
            let mut c = Candidate {
                iteration,
                index: i,
                proposer: tag.clone(),
                origin: p.origin.clone(),
                edit: p.edit.clone(),
                program: p.program.clone(),
                theta_init: p.theta_init.clone(),
                theta_opt,
                score_train,
                score_full: Some(f64::NEG_INFINITY),
                train_components: None,
                val_components: None,
                evaluations,
                failed_evaluations: failed,
                failure,
            };
            if let Some(theta) = c.theta_opt.clone() {
                let full = score_with(&c.program, &theta, dataset.all(), &config.weights, config.gamma, Exec::Sequential);
                if let Ok(r) = &full {
                    c.score_full = Some(r.j);
                    if let Some(f) = &r.failure {
                        c.failure = Some(f.clone());
                    }
                }
                let split = |ts| mean_components(score_with(&c.program, &theta, ts, &config.weights, config.gamma, Exec::Sequential));
                c.train_components = split(dataset.train());
                c.val_components = if dataset.n_val() > 0 { split(dataset.val()) } else { None };
            }
            c
        });

        let mut ranked: Vec<&Candidate> = batch.iter().collect();
        ranked.sort_by(|a, b| if a.better_than(b) { std::cmp::Ordering::Less } else { std::cmp::Ordering::Greater });
        if best.as_ref().is_none_or(|b: &Candidate| ranked[0].better_than(b)) {
            best = Some(ranked[0].clone());
        }
        let best_score = best.as_ref().and_then(|b| b.score_full).unwrap_or(f64::NEG_INFINITY);
        best_history.push(best_score);
        info!(
            "iteration {iteration}: batch best {:.4} ({}), overall best {best_score:.4}",
            ranked[0].score_full.unwrap_or(f64::NEG_INFINITY),
            ranked[0].origin
        );

        let reflection = ReflectionSet {
            entries: ranked.iter().take(config.reflection_size).map(|c| ReflectionEntry::new(c, dataset.all())).collect(),
        };
        state = proposer.reflect(&reflection, state);
        log.extend(batch);

        if let Some(path) = &options.checkpoint {
            Checkpoint {
                version: CHECKPOINT_VERSION,
                config: config.clone(),
                proposer: tag.clone(),
                next_iteration: iteration + 1,
                state: state.clone(),
                best: best.clone(),
                best_history: best_history.clone(),
                log: log.clone(),
                inner_val_reads,
            }
            .save(path)?;
        }
    }

    let best = best.ok_or_else(|| SynthesisError::Config("checkpoint already finished all iterations".into()))?;
    Ok(SynthesisOutcome { best, log, best_history, state, inner_val_reads })
}
