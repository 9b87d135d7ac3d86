//! The run configuration file.
//!
//! TOML with one section per component. Every key is optional and falls back
//! to the default shown by `rewardsynth synthesize --print-config`. Command
//! line flags override the file.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use rewardsynth::bayesopt::{BoConfig, GpConfig};
use rewardsynth::mdporacle::synth::TASK_DESCRIPTION;
use rewardsynth::synthesis::{LlmSettings, SynthesisConfig};
use rewardsynth::{MilestoneConfig, RngSeed, SurrogateWeights};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum ProposerKind {
    /// Grammar mutations over an elite archive. Reproducible.
    Mutation,
    /// A chat-completions endpoint. Not reproducible.
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Master seed. Every random stream in a run derives from it.
    pub seed: u64,
    /// Natural-language task description handed to the proposer.
    pub task: String,
    /// Labeled demonstrations in JSONL.
    pub dataset: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub weights: SurrogateWeights,
    pub milestones: MilestoneSection,
    pub synthesis: SynthesisSection,
    pub bo: BoSection,
    pub proposer: ProposerSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            task: TASK_DESCRIPTION.to_string(),
            dataset: None,
            output_dir: PathBuf::from("out"),
            weights: SurrogateWeights::default(),
            milestones: MilestoneSection::default(),
            synthesis: SynthesisSection::default(),
            bo: BoSection::default(),
            proposer: ProposerSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MilestoneSection {
    /// Milestone count, used when `bonuses` is empty (bonus 1/k each).
    pub k: usize,
    /// Explicit per-milestone bonuses.
    pub bonuses: Vec<f64>,
    pub gamma: f64,
}

impl Default for MilestoneSection {
    fn default() -> Self {
        MilestoneSection { k: 5, bonuses: Vec::new(), gamma: 0.99 }
    }
}

impl MilestoneSection {
    pub fn build(&self) -> Result<MilestoneConfig> {
        let m = if self.bonuses.is_empty() {
            MilestoneConfig::uniform(self.k, self.gamma)
        } else {
            MilestoneConfig::new(self.bonuses.clone(), self.gamma)
        };
        m.context("milestones")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub iterations: usize,
    pub batch_size: usize,
    pub reflection_size: usize,
    /// Discount used when scoring shaping positivity.
    pub gamma: f64,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let d = SynthesisConfig::default();
        SynthesisSection { iterations: d.iterations, batch_size: d.batch_size, reflection_size: d.reflection_size, gamma: d.gamma }
    }
}

/// Inner-loop settings. Each candidate's seed derives from the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoSection {
    pub budget: usize,
    pub init_design: usize,
    pub ucb_beta: f64,
    pub restarts: usize,
    pub refine: usize,
    pub length_scale: f64,
    pub signal_variance: f64,
    pub noise_variance: f64,
    pub learn_length_scale: bool,
}

impl Default for BoSection {
    fn default() -> Self {
        let b = BoConfig::default();
        BoSection {
            budget: b.budget,
            init_design: b.init_design,
            ucb_beta: b.ucb_beta,
            restarts: b.restarts,
            refine: b.refine,
            length_scale: b.gp.length_scale,
            signal_variance: b.gp.signal_variance,
            noise_variance: b.gp.noise_variance,
            learn_length_scale: b.gp.learn_length_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProposerSection {
    pub kind: ProposerKind,
    /// Largest program the mutation proposer may grow.
    pub max_stages: usize,
    /// Replaces the bundled initial prompt.
    pub prompt_file: Option<PathBuf>,
    /// Endpoint settings. Empty values are filled from the environment.
    pub llm: LlmSettings,
}

impl Default for ProposerSection {
    fn default() -> Self {
        ProposerSection { kind: ProposerKind::Mutation, max_stages: 6, prompt_file: None, llm: LlmSettings::default() }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn synthesis_config(&self) -> SynthesisConfig {
        let b = &self.bo;
        SynthesisConfig {
            iterations: self.synthesis.iterations,
            batch_size: self.synthesis.batch_size,
            reflection_size: self.synthesis.reflection_size,
            weights: self.weights,
            gamma: self.synthesis.gamma,
            bo: BoConfig {
                budget: b.budget,
                init_design: b.init_design,
                ucb_beta: b.ucb_beta,
                seed: RngSeed(self.seed),
                restarts: b.restarts,
                refine: b.refine,
                gp: GpConfig {
                    length_scale: b.length_scale,
                    signal_variance: b.signal_variance,
                    noise_variance: b.noise_variance,
                    learn_length_scale: b.learn_length_scale,
                    ..GpConfig::default()
                },
            },
            seed: RngSeed(self.seed),
        }
    }

    /// Checks that do not touch the file system beyond the dataset path.
    pub fn validate(&self) -> Result<()> {
        self.synthesis_config().validate()?;
        self.milestones.build()?;
        if self.proposer.max_stages == 0 {
            bail!("proposer.max_stages must be ≥ 1");
        }
        match &self.dataset {
            None => bail!("no dataset given (set `dataset` or pass --dataset)"),
            Some(p) if !p.exists() => bail!("dataset {} does not exist", p.display()),
            Some(_) => {}
        }
        if let Some(p) = &self.proposer.prompt_file {
            if !p.exists() {
                bail!("prompt file {} does not exist", p.display());
            }
        }
        Ok(())
    }
}
