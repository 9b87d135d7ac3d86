//! The reflection set and its text rendering for language-model feedback.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::Candidate;
use crate::dsl::PotentialProgram;
use crate::surrogate::ComponentScores;
use crate::Trajectory;

/// Longest potential trace kept per demonstration.
pub const TRACE_POINTS: usize = 32;

pub const NON_MONOTONE: &str = "non-monotone potential";
pub const STAGE_MISMATCH: &str = "stage predictions disagree with labels";
pub const NEGATIVE_SHAPING: &str = "potential often decreases between frames";
pub const OVERFIT: &str = "much better on training than validation demos";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionEntry {
    pub iteration: usize,
    pub index: usize,
    pub program: PotentialProgram,
    pub theta: Vec<f64>,
    #[serde(with = "crate::floatser")]
    pub score_full: f64,
    pub train: Option<ComponentScores>,
    pub val: Option<ComponentScores>,
    /// Downsampled potential per demonstration.
    pub traces: Vec<Vec<f64>>,
    pub failure: Option<String>,
    pub diagnostics: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct ReflectionSet {
    /// Sorted best first.
    pub entries: Vec<ReflectionEntry>,
}

/// Evenly spaced samples including both ends, at most `max` of them.
pub fn downsample(xs: &[f64], max: usize) -> Vec<f64> {
    if xs.len() <= max {
        return xs.to_vec();
    }
    if max < 2 {
        return xs[..max].to_vec();
    }
    (0..max).map(|i| xs[(i * (xs.len() - 1) + (max - 1) / 2) / (max - 1)]).collect()
}

/// Rule-based failure causes.
pub fn diagnose(train: Option<&ComponentScores>, val: Option<&ComponentScores>, failure: Option<&str>) -> Vec<String> {
    let mut out = Vec::new();
    if let Some(f) = failure {
        out.push(format!("evaluation failed: {f}"));
        return out;
    }
    let worst = |get: fn(&ComponentScores) -> f64| [train, val].iter().flatten().map(|c| get(c)).fold(f64::INFINITY, f64::min);
    if worst(|c| c.c_prog) < 0.0 {
        out.push(NON_MONOTONE.to_string());
    }
    if worst(|c| c.c_stage) < 0.5 {
        out.push(STAGE_MISMATCH.to_string());
    }
    if worst(|c| c.c_pbrs) < 0.5 {
        out.push(NEGATIVE_SHAPING.to_string());
    }
    if let (Some(t), Some(v)) = (train, val) {
        let sum = |c: &ComponentScores| c.c_stage + c.c_prog + c.c_pbrs;
        if sum(t) - sum(v) > 0.5 {
            out.push(OVERFIT.to_string());
        }
    }
    out
}

impl ReflectionEntry {
    pub fn new(c: &Candidate, demos: &[Trajectory]) -> Self {
        let theta = c.theta_opt.clone().unwrap_or_else(|| c.theta_init.clone());
        let traces = demos
            .iter()
            .map(|t| match c.program.evaluate_trajectory(&theta, t) {
                Ok(trace) => downsample(&trace.potentials, TRACE_POINTS),
                Err(_) => Vec::new(),
            })
            .collect();
        ReflectionEntry {
            iteration: c.iteration,
            index: c.index,
            program: c.program.clone(),
            theta,
            score_full: c.score_full.unwrap_or(f64::NEG_INFINITY),
            train: c.train_components,
            val: c.val_components,
            traces,
            failure: c.failure.clone(),
            diagnostics: diagnose(c.train_components.as_ref(), c.val_components.as_ref(), c.failure.as_deref()),
        }
    }
}

fn fmt_components(c: &Option<ComponentScores>) -> String {
    match c {
        Some(c) => format!("c_stage={:.3} c_prog={:.3} c_pbrs={:.3}", c.c_stage, c.c_prog, c.c_pbrs),
        None => "n/a".into(),
    }
}

impl ReflectionSet {
    /// One feedback block covering every entry.
    pub fn feedback_block(&self, number: usize) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "### Feedback {number}");
        for (rank, e) in self.entries.iter().enumerate() {
            let _ = writeln!(s, "\n#### Rank {} (iteration {}, candidate {})", rank + 1, e.iteration, e.index);
            let _ = writeln!(s, "score on all demos: {}", e.score_full);
            let _ = writeln!(s, "train: {}", fmt_components(&e.train));
            let _ = writeln!(s, "validation: {}", fmt_components(&e.val));
            if e.diagnostics.is_empty() {
                let _ = writeln!(s, "diagnostics: none");
            } else {
                let _ = writeln!(s, "diagnostics: {}", e.diagnostics.join("; "));
            }
            let _ = writeln!(s, "program:\n```\n{}```", e.program.with_defaults(&e.theta).to_source());
            let _ = writeln!(s, "potential traces (downsampled, one line per demo):");
            for (i, tr) in e.traces.iter().enumerate() {
                let vals: Vec<String> = tr.iter().map(|v| format!("{v:.2}")).collect();
                let _ = writeln!(s, "  demo {i}: {}", vals.join(" "));
            }
        }
        s
    }
}
