//! The randomized policy-invariance suite.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mdp::{check_policy_invariance, InvarianceReport, MdpError, TabularMdp};
use crate::parallel::Exec;
use crate::rng::RngSeed;
use crate::shaping::MilestoneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SuiteConfig {
    pub count: usize,
    pub max_states: usize,
    pub max_actions: usize,
    pub max_k: usize,
    pub gamma_min: f64,
    pub gamma_max: f64,
    pub seed: RngSeed,
    /// Every n-th instance gets a single-state spike potential (0 disables).
    pub adversarial_every: usize,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        SuiteConfig {
            count: 100,
            max_states: 50,
            max_actions: 5,
            max_k: 8,
            gamma_min: 0.5,
            gamma_max: 0.99,
            seed: RngSeed(0),
            adversarial_every: 5,
        }
    }
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<(), MdpError> {
        if self.max_states < 2 || self.max_actions < 1 {
            return Err(MdpError::Shape("need max_states ≥ 2 and max_actions ≥ 1".into()));
        }
        if !(0.0 <= self.gamma_min && self.gamma_min <= self.gamma_max && self.gamma_max < 1.0) {
            return Err(MdpError::BadGamma(self.gamma_max));
        }
        Ok(())
    }
}

/// A generated instance, kept so failures can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub index: usize,
    pub adversarial: bool,
    pub mdp: TabularMdp,
    pub milestones: MilestoneConfig,
}

pub fn instance(config: &SuiteConfig, index: usize) -> Result<Instance, MdpError> {
    let mut rng = config.seed.derive(index as u64).rng();
    let n_states = rng.random_range(2..=config.max_states);
    let n_actions = rng.random_range(1..=config.max_actions);
    let k = rng.random_range(0..=config.max_k);
    let gamma = if config.gamma_max > config.gamma_min {
        rng.random_range(config.gamma_min..=config.gamma_max)
    } else {
        config.gamma_min
    };
    let mut mdp = TabularMdp::random(&mut rng, n_states, n_actions, gamma)?;
    let adversarial = config.adversarial_every > 0 && index % config.adversarial_every == config.adversarial_every - 1;
    if adversarial {
        let spike = mdp.least_rewarding_state();
        mdp = mdp.with_spike_potential(spike);
    }
    let bonuses = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    // Bonuses shape with the MDP's own discount; a zero discount is not a
    // valid shaping config, so borrow 1.0 there (the MDP's γ is used regardless).
    let milestones = MilestoneConfig::new(bonuses, if gamma > 0.0 { gamma } else { 1.0 })?;
    Ok(Instance { index, adversarial, mdp, milestones })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub config: SuiteConfig,
    pub instances: Vec<InstanceSummary>,
    pub total_checked: usize,
    pub total_skipped_ties: usize,
    pub total_violations: usize,
    pub max_offset_spread: f64,
    pub max_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub index: usize,
    pub adversarial: bool,
    #[serde(flatten)]
    pub report: InvarianceReport,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.total_violations == 0 && self.instances.iter().all(|i| i.report.passed())
    }
}

pub fn run_suite(config: &SuiteConfig, exec: Exec) -> Result<SuiteReport, MdpError> {
    config.validate()?;
    let results = exec.map_range(config.count, |i| {
        let inst = instance(config, i)?;
        let report = check_policy_invariance(&inst.mdp, &inst.milestones)?;
        Ok(InstanceSummary { index: i, adversarial: inst.adversarial, report })
    });
    let instances = results.into_iter().collect::<Result<Vec<_>, MdpError>>()?;
    let fold = |f: fn(&InvarianceReport) -> f64| instances.iter().map(|i| f(&i.report)).fold(0.0, f64::max);
    Ok(SuiteReport {
        config: config.clone(),
        total_checked: instances.iter().map(|i| i.report.checked).sum(),
        total_skipped_ties: instances.iter().map(|i| i.report.skipped_ties).sum(),
        total_violations: instances.iter().map(|i| i.report.violations.len()).sum(),
        max_offset_spread: fold(|r| r.max_offset_spread),
        max_residual: fold(|r| r.base_residual.max(r.shaped_residual)),
        instances,
    })
}
