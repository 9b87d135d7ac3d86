//! Offline objective for ranking candidate potential programs.
//!
//! Per trajectory, three components are computed from the program's
//! per-frame potentials and stages:
//!
//! - stage alignment: fraction of frames whose predicted stage equals the label;
//! - progress monotonicity: Spearman correlation of potential against time;
//! - PBRS positivity: fraction of steps with `γ·φ_{t+1} − φ_t ≥ 0`.
//!
//! The objective is the λ-weighted sum over trajectories. Programs that fail
//! to evaluate score `-inf` instead of aborting the batch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Trajectory;
use crate::dsl::{PotentialProgram, Trace};
use crate::parallel::Exec;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SurrogateError {
    #[error("sequence lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {need} values, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("gamma must lie in (0, 1], got {0}")]
    BadGamma(f64),
    #[error("trajectory {0} has no stage labels")]
    Unlabeled(usize),
    #[error("weights must be non-negative and not all zero")]
    BadWeights,
}

/// λ weights of the three components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateWeights {
    pub stage: f64,
    pub progress: f64,
    pub pbrs: f64,
}

impl Default for SurrogateWeights {
    fn default() -> Self {
        SurrogateWeights { stage: 1.0, progress: 1.0, pbrs: 1.0 }
    }
}

impl SurrogateWeights {
    pub fn new(stage: f64, progress: f64, pbrs: f64) -> Result<Self, SurrogateError> {
        let w = SurrogateWeights { stage, progress, pbrs };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<(), SurrogateError> {
        let all = [self.stage, self.progress, self.pbrs];
        if all.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || all.iter().all(|w| *w == 0.0) {
            return Err(SurrogateError::BadWeights);
        }
        Ok(())
    }
}

/// Fraction of positions where `predicted` equals `labels`.
pub fn stage_alignment(predicted: &[usize], labels: &[usize]) -> Result<f64, SurrogateError> {
    if predicted.len() != labels.len() {
        return Err(SurrogateError::LengthMismatch(predicted.len(), labels.len()));
    }
    if predicted.is_empty() {
        return Err(SurrogateError::TooShort { need: 1, got: 0 });
    }
    let hits = predicted.iter().zip(labels).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        // Positions i..=j share rank mean(i+1, j+1).
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    (sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0)
}

/// Spearman rank correlation with average ranks for ties. Zero when either
/// sequence is constant.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<f64, SurrogateError> {
    if xs.len() != ys.len() {
        return Err(SurrogateError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(SurrogateError::TooShort { need: 2, got: xs.len() });
    }
    Ok(pearson(&average_ranks(xs), &average_ranks(ys)))
}

/// Times `t / (T − 1)` for `t = 0..T`, spanning `[0, 1]`.
pub fn normalized_time(len: usize) -> Vec<f64> {
    let d = (len.max(2) - 1) as f64;
    (0..len).map(|t| t as f64 / d).collect()
}

/// Spearman correlation of a potential trace against normalized time.
pub fn progress_alignment(phis: &[f64]) -> Result<f64, SurrogateError> {
    spearman(phis, &normalized_time(phis.len()))
}

/// Fraction of steps whose one-step shaping term `γ·φ_{t+1} − φ_t` is ≥ 0.
pub fn pbrs_positivity(phis: &[f64], gamma: f64) -> Result<f64, SurrogateError> {
    if phis.len() < 2 {
        return Err(SurrogateError::TooShort { need: 2, got: phis.len() });
    }
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(SurrogateError::BadGamma(gamma));
    }
    let ok = phis.windows(2).filter(|w| gamma * w[1] - w[0] >= 0.0).count();
    Ok(ok as f64 / (phis.len() - 1) as f64)
}

/// Component scores for one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComponentScores {
    pub c_stage: f64,
    pub c_prog: f64,
    pub c_pbrs: f64,
}

impl ComponentScores {
    pub fn weighted(&self, w: &SurrogateWeights) -> f64 {
        w.stage * self.c_stage + w.progress * self.c_prog + w.pbrs * self.c_pbrs
    }

    /// Component-wise mean; `None` for an empty slice.
    pub fn mean(items: &[ComponentScores]) -> Option<ComponentScores> {
        if items.is_empty() {
            return None;
        }
        let n = items.len() as f64;
        Some(ComponentScores {
            c_stage: items.iter().map(|c| c.c_stage).sum::<f64>() / n,
            c_prog: items.iter().map(|c| c.c_prog).sum::<f64>() / n,
            c_pbrs: items.iter().map(|c| c.c_pbrs).sum::<f64>() / n,
        })
    }
}

/// Scores of one program over a set of trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurrogateReport {
    pub per_trajectory: Vec<ComponentScores>,
    #[serde(with = "crate::floatser")]
    pub j: f64,
    pub trajectory_count: usize,
    /// Evaluation failure, when the program could not be evaluated.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl SurrogateReport {
    pub fn failed(trajectory_count: usize, why: String) -> Self {
        SurrogateReport { per_trajectory: Vec::new(), j: f64::NEG_INFINITY, trajectory_count, failure: Some(why) }
    }

    pub fn is_failure(&self) -> bool {
        self.failure.is_some()
    }

    pub fn mean(&self) -> Option<ComponentScores> {
        ComponentScores::mean(&self.per_trajectory)
    }
}

/// Components for one labeled trajectory given its evaluated trace.
pub fn components(trace: &Trace, labels: &[usize], gamma: f64) -> Result<ComponentScores, SurrogateError> {
    Ok(ComponentScores {
        c_stage: stage_alignment(&trace.stages, labels)?,
        c_prog: progress_alignment(&trace.potentials)?,
        c_pbrs: pbrs_positivity(&trace.potentials, gamma)?,
    })
}

/// Objective of `program` at `theta` over `trajectories`.
pub fn score(
    program: &PotentialProgram,
    theta: &[f64],
    trajectories: &[Trajectory],
    weights: &SurrogateWeights,
    gamma: f64,
) -> Result<SurrogateReport, SurrogateError> {
    score_with(program, theta, trajectories, weights, gamma, Exec::default())
}

/// [`score`] with an explicit execution mode.
pub fn score_with(
    program: &PotentialProgram,
    theta: &[f64],
    trajectories: &[Trajectory],
    weights: &SurrogateWeights,
    gamma: f64,
    exec: Exec,
) -> Result<SurrogateReport, SurrogateError> {
    weights.validate()?;
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(SurrogateError::BadGamma(gamma));
    }
    for (i, t) in trajectories.iter().enumerate() {
        if t.stage_labels.is_none() {
            return Err(SurrogateError::Unlabeled(i));
        }
    }
    let results = exec.map(trajectories, |t| {
        program
            .evaluate_trajectory(theta, t)
            .map_err(|e| e.to_string())
            .and_then(|trace| {
                components(&trace, t.stage_labels.as_deref().unwrap_or_default(), gamma).map_err(|e| e.to_string())
            })
    });
    let mut per = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(c) => per.push(c),
            Err(why) => return Ok(SurrogateReport::failed(trajectories.len(), why)),
        }
    }
    let j = per.iter().map(|c| c.weighted(weights)).sum();
    Ok(SurrogateReport { per_trajectory: per, j, trajectory_count: trajectories.len(), failure: None })
}
