//! Milestone-augmented potential-based reward shaping.
//!
//! The potential range `[0, 1]` is cut into `K` milestones at thresholds
//! `k / K`. An episode latches the highest milestone reached so far, and the
//! shaped reward adds two potential differences to the base reward:
//!
//! ```text
//! r' = r + (γ·φ(s') − φ(s)) + (γ·Ψ(m') − Ψ(m)),   Ψ(m) = Σ_{k ≤ m} bonus_k
//! ```
//!
//! Both terms are differences of one combined potential `φ + Ψ` over the
//! (state, milestone) product space, so optimal policies are unchanged.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Trajectory;
use crate::dsl::{EvalError, PotentialProgram};

/// Slack allowed on potentials that should lie in `[0, 1]`.
pub const PHI_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapingError {
    #[error("milestone config: {0}")]
    Config(String),
    #[error("milestone {m} out of range 0..={k}")]
    MilestoneOutOfRange { m: usize, k: usize },
    #[error("potential {0} outside [0, 1]")]
    PotentialOutOfRange(f64),
    #[error("shaping state used before begin_episode")]
    Uninitialized,
    #[error(transparent)]
    Eval(#[from] EvalError),
}

/// Milestone count, per-milestone bonuses and discount.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MilestoneConfig {
    bonuses: Vec<f64>,
    gamma: f64,
    #[serde(skip)]
    psi: Vec<f64>,
}

#[derive(Deserialize)]
struct RawMilestoneConfig {
    bonuses: Vec<f64>,
    gamma: f64,
}

impl<'de> Deserialize<'de> for MilestoneConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawMilestoneConfig::deserialize(d)?;
        MilestoneConfig::new(raw.bonuses, raw.gamma).map_err(serde::de::Error::custom)
    }
}

impl MilestoneConfig {
    /// `bonuses.len()` milestones. An empty bonus list gives plain PBRS.
    pub fn new(bonuses: Vec<f64>, gamma: f64) -> Result<Self, ShapingError> {
        if let Some(b) = bonuses.iter().find(|b| !(**b > 0.0) || !b.is_finite()) {
            return Err(ShapingError::Config(format!("milestone bonuses must be positive, got {b}")));
        }
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(ShapingError::Config(format!("gamma must lie in (0, 1], got {gamma}")));
        }
        let mut psi = Vec::with_capacity(bonuses.len() + 1);
        let mut acc = 0.0;
        psi.push(acc);
        for b in &bonuses {
            acc += b;
            psi.push(acc);
        }
        Ok(MilestoneConfig { bonuses, gamma, psi })
    }

    /// `k` milestones with equal bonuses `1 / k`, so `Ψ(k) = 1`.
    pub fn uniform(k: usize, gamma: f64) -> Result<Self, ShapingError> {
        Self::new(vec![1.0 / k.max(1) as f64; k], gamma)
    }

    pub fn k(&self) -> usize {
        self.bonuses.len()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn bonuses(&self) -> &[f64] {
        &self.bonuses
    }

    /// Threshold `κ_k = k / K` for milestone `k ≥ 1`.
    pub fn threshold(&self, k: usize) -> f64 {
        k as f64 / self.k() as f64
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self, ShapingError> {
        Self::new(self.bonuses.clone(), gamma)
    }
}

impl Default for MilestoneConfig {
    fn default() -> Self {
        MilestoneConfig::uniform(5, 0.99).expect("valid default")
    }
}

/// Cumulative milestone potential `Ψ(m)`.
pub fn psi(config: &MilestoneConfig, m: usize) -> Result<f64, ShapingError> {
    config.psi.get(m).copied().ok_or(ShapingError::MilestoneOutOfRange { m, k: config.k() })
}

fn check_phi(phi: f64) -> Result<f64, ShapingError> {
    if (-PHI_TOLERANCE..=1.0 + PHI_TOLERANCE).contains(&phi) {
        Ok(phi.clamp(0.0, 1.0))
    } else {
        Err(ShapingError::PotentialOutOfRange(phi))
    }
}

/// Highest milestone `k` with `phi ≥ k / K` (inclusive), never below `m_prev`.
pub fn update_milestone(config: &MilestoneConfig, m_prev: usize, phi: f64) -> Result<usize, ShapingError> {
    let k = config.k();
    if m_prev > k {
        return Err(ShapingError::MilestoneOutOfRange { m: m_prev, k });
    }
    let phi = check_phi(phi)?;
    if k == 0 {
        return Ok(0);
    }
    let mut reached = ((phi * k as f64).floor() as usize).min(k);
    // floor() can land one off when k/K is not representable; settle against
    // the thresholds themselves.
    while reached < k && phi >= config.threshold(reached + 1) {
        reached += 1;
    }
    while reached > 0 && phi < config.threshold(reached) {
        reached -= 1;
    }
    Ok(m_prev.max(reached))
}

/// Per-episode milestone tracker.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ShapingState {
    pub milestone: usize,
    pub prev_phi: f64,
    pub initialized: bool,
}

/// One shaped step and its decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapedTransition {
    /// Potential of the successor state.
    pub phi: f64,
    pub base_r: f64,
    /// `γ·φ(s') − φ(s)`.
    pub local: f64,
    /// `γ·Ψ(m') − Ψ(m)`.
    pub global: f64,
    /// `base_r + local + global`, summed in that order.
    pub r_prime: f64,
    pub m_next: usize,
}

pub fn begin_episode(config: &MilestoneConfig, phi_0: f64) -> Result<ShapingState, ShapingError> {
    let phi = check_phi(phi_0)?;
    Ok(ShapingState { milestone: update_milestone(config, 0, phi)?, prev_phi: phi, initialized: true })
}

pub fn shape_transition(
    config: &MilestoneConfig,
    state: &ShapingState,
    phi_next: f64,
    base_r: f64,
) -> Result<(ShapedTransition, ShapingState), ShapingError> {
    if !state.initialized {
        return Err(ShapingError::Uninitialized);
    }
    let phi_next = check_phi(phi_next)?;
    let m_next = update_milestone(config, state.milestone, phi_next)?;
    let g = config.gamma;
    let local = g * phi_next - state.prev_phi;
    let global = g * psi(config, m_next)? - psi(config, state.milestone)?;
    let r_prime = base_r + local + global;
    Ok((
        ShapedTransition { phi: phi_next, base_r, local, global, r_prime, m_next },
        ShapingState { milestone: m_next, prev_phi: phi_next, initialized: true },
    ))
}

/// Shape a precomputed potential sequence. `base` has one entry per step.
pub fn shape_potentials(
    config: &MilestoneConfig,
    phis: &[f64],
    base: &[f64],
) -> Result<(ShapingState, Vec<ShapedTransition>), ShapingError> {
    assert_eq!(base.len() + 1, phis.len(), "one base reward per transition");
    let start = begin_episode(config, phis[0])?;
    let mut state = start;
    let mut out = Vec::with_capacity(base.len());
    for (phi, r) in phis[1..].iter().zip(base) {
        let (t, next) = shape_transition(config, &state, *phi, *r)?;
        out.push(t);
        state = next;
    }
    Ok((start, out))
}

/// Evaluate `program` per frame and shape every transition of `trajectory`.
pub fn shape_trajectory(
    config: &MilestoneConfig,
    program: &PotentialProgram,
    theta: &[f64],
    trajectory: &Trajectory,
) -> Result<Vec<ShapedTransition>, ShapingError> {
    let trace = program.evaluate_trajectory(theta, trajectory)?;
    Ok(shape_potentials(config, &trace.potentials, &trajectory.base_rewards())?.1)
}

/// `Σ γ^t r'_t`.
pub fn discounted_return(transitions: &[ShapedTransition], gamma: f64) -> f64 {
    let mut acc = 0.0;
    let mut w = 1.0;
    for t in transitions {
        acc += w * t.r_prime;
        w *= gamma;
    }
    acc
}

/// `Σ r'_t`.
pub fn total_return(transitions: &[ShapedTransition]) -> f64 {
    transitions.iter().map(|t| t.r_prime).sum()
}

/// CSV with columns step, phi, m, local, global, base_r, r_prime. Row 0 is
/// the initial state (no reward).
pub fn transitions_csv(start: &ShapingState, transitions: &[ShapedTransition]) -> String {
    let mut out = String::from("step,phi,m,local,global,base_r,r_prime\n");
    out.push_str(&format!("0,{},{},,,,\n", start.prev_phi, start.milestone));
    for (i, t) in transitions.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            i + 1,
            t.phi,
            t.m_next,
            t.local,
            t.global,
            t.base_r,
            t.r_prime
        ));
    }
    out
}
