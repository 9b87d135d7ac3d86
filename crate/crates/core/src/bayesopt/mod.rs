//! Bayesian optimization of a program's continuous parameters.
//!
//! [`optimize`] evaluates the warm start, then a shifted Halton design,
//! then points chosen by maximizing the GP upper confidence bound. All work
//! happens in the unit cube; parameters are mapped to their bounds only when
//! the objective is called.

mod gp;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::RngSeed;

pub use gp::{gp_fit, ucb, GpConfig, GpError, GpModel};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoError {
    #[error("config: {0}")]
    Config(String),
    #[error("every evaluation failed")]
    AllFailed,
    #[error(transparent)]
    Gp(#[from] GpError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoConfig {
    /// Total objective evaluations, warm start included.
    pub budget: usize,
    /// Warm start plus quasi-random design points.
    pub init_design: usize,
    pub ucb_beta: f64,
    pub seed: RngSeed,
    /// Random starting points for the acquisition maximizer.
    pub restarts: usize,
    /// Best starting points refined by local search.
    pub refine: usize,
    pub gp: GpConfig,
}

impl Default for BoConfig {
    fn default() -> Self {
        BoConfig {
            budget: 40,
            init_design: 5,
            ucb_beta: 2.0,
            seed: RngSeed(0),
            restarts: 256,
            refine: 8,
            gp: GpConfig::default(),
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<(), BoError> {
        if self.init_design < 1 || self.budget < self.init_design {
            return Err(BoError::Config(format!(
                "need budget ≥ init_design ≥ 1 (budget {}, init_design {})",
                self.budget, self.init_design
            )));
        }
        if !(self.ucb_beta >= 0.0) || self.restarts == 0 {
            return Err(BoError::Config("ucb_beta must be ≥ 0 and restarts ≥ 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Warm,
    Design,
    Ucb,
    Random,
}

/// One objective evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub phase: Phase,
    pub unit: Vec<f64>,
    pub theta: Vec<f64>,
    #[serde(with = "crate::floatser")]
    pub value: f64,
    #[serde(with = "crate::floatser")]
    pub best_so_far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoOutcome {
    pub best_theta: Vec<f64>,
    #[serde(with = "crate::floatser")]
    pub best_value: f64,
    pub history: Vec<Evaluation>,
    /// Evaluations that returned -inf and were kept out of the GP.
    pub failed: usize,
}

impl BoOutcome {
    /// CSV with columns iteration, theta_0..theta_{d-1}, J, best_so_far.
    pub fn history_csv(&self) -> String {
        let d = self.best_theta.len();
        let mut out = String::from("iteration");
        for i in 0..d {
            out.push_str(&format!(",theta_{i}"));
        }
        out.push_str(",J,best_so_far\n");
        for e in &self.history {
            out.push_str(&e.iteration.to_string());
            for v in &e.theta {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{},{}\n", e.value, e.best_so_far));
        }
        out
    }
}

fn to_unit(theta: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    theta.iter().zip(bounds).map(|(v, (lo, hi))| ((v - lo) / (hi - lo)).clamp(0.0, 1.0)).collect()
}

fn from_unit(u: &[f64], bounds: &[(f64, f64)]) -> Vec<f64> {
    u.iter().zip(bounds).map(|(x, (lo, hi))| (lo + x * (hi - lo)).clamp(*lo, *hi)).collect()
}

const PRIMES: [u64; 16] = [2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53];

fn radical_inverse(mut i: u64, base: u64) -> f64 {
    let (mut f, mut r) = (1.0, 0.0);
    while i > 0 {
        f /= base as f64;
        r += f * (i % base) as f64;
        i /= base;
    }
    r
}

/// Halton point `index` with a per-dimension random shift (mod 1).
fn halton(index: u64, shift: &[f64]) -> Vec<f64> {
    shift
        .iter()
        .enumerate()
        .map(|(d, s)| {
            let base = PRIMES[d % PRIMES.len()] + 2 * (d / PRIMES.len()) as u64 * 53;
            (radical_inverse(index, base) + s).fract()
        })
        .collect()
}

/// Multi-start maximization of UCB over the unit cube: random starts, the
/// best `refine` of them polished by compass search.
fn maximize_acquisition(model: &GpModel, beta: f64, restarts: usize, refine: usize, rng: &mut impl Rng) -> Vec<f64> {
    let d = model.dim();
    let mut starts: Vec<(f64, Vec<f64>)> = (0..restarts)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
            (ucb(model, &x, beta), x)
        })
        .collect();
    starts.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut best = starts[0].clone();
    for (mut val, mut x) in starts.into_iter().take(refine.max(1)) {
        let mut step = 0.1;
        let mut evals = 0;
        while step > 1e-3 && evals < 400 {
            let mut improved = false;
            for dim in 0..d {
                for dir in [1.0, -1.0] {
                    let mut y = x.clone();
                    y[dim] = (y[dim] + dir * step).clamp(0.0, 1.0);
                    let v = ucb(model, &y, beta);
                    evals += 1;
                    if v > val {
                        val = v;
                        x = y;
                        improved = true;
                    }
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        if val > best.0 {
            best = (val, x);
        }
    }
    best.1
}

/// Maximize `objective` over the box `bounds`, starting from `warm_start`.
///
/// The objective signals failure with `-inf`; such points are recorded but
/// kept out of the GP. If the warm start fails, the remaining budget is
/// spent on uniform random exploration.
pub fn optimize<F>(objective: F, warm_start: &[f64], bounds: &[(f64, f64)], config: &BoConfig) -> Result<BoOutcome, BoError>
where
    F: Fn(&[f64]) -> f64,
{
    config.validate()?;
    if warm_start.len() != bounds.len() {
        return Err(BoError::Config(format!("warm start has {} values for {} bounds", warm_start.len(), bounds.len())));
    }
    for (i, ((lo, hi), v)) in bounds.iter().zip(warm_start).enumerate() {
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return Err(BoError::Config(format!("bounds {i} must be finite with lower < upper")));
        }
        if !(v >= lo && v <= hi) {
            return Err(BoError::Config(format!("warm start {i} = {v} outside [{lo}, {hi}]")));
        }
    }
    let d = bounds.len();
    let mut rng = config.seed.rng();
    let shift: Vec<f64> = (0..d).map(|_| rng.random::<f64>()).collect();
    let mut history: Vec<Evaluation> = Vec::with_capacity(config.budget);
    let mut best_so_far = f64::NEG_INFINITY;
    let mut best: Option<(Vec<f64>, f64)> = None;

    let mut record = |iteration: usize, phase: Phase, unit: Vec<f64>, theta: Vec<f64>, history: &mut Vec<Evaluation>| {
        let raw = objective(&theta);
        let value = if raw.is_nan() { f64::NEG_INFINITY } else { raw };
        if value > best_so_far {
            best_so_far = value;
            best = Some((theta.clone(), value));
        }
        history.push(Evaluation { iteration, phase, unit, theta, value, best_so_far });
    };

    record(0, Phase::Warm, to_unit(warm_start, bounds), warm_start.to_vec(), &mut history);
    let budget = if d == 0 { 1 } else { config.budget };
    let warm_failed = history[0].value == f64::NEG_INFINITY;

    for it in 1..budget {
        let (phase, unit) = if warm_failed {
            (Phase::Random, (0..d).map(|_| rng.random::<f64>()).collect::<Vec<_>>())
        } else if it < config.init_design {
            (Phase::Design, halton(it as u64, &shift))
        } else {
            let obs: Vec<(Vec<f64>, f64)> = history
                .iter()
                .filter(|e| e.value.is_finite())
                .map(|e| (e.unit.clone(), e.value))
                .collect();
            let model = gp_fit(&obs, &config.gp)?;
            (Phase::Ucb, maximize_acquisition(&model, config.ucb_beta, config.restarts, config.refine, &mut rng))
        };
        let theta = from_unit(&unit, bounds);
        record(it, phase, unit, theta, &mut history);
    }

    let failed = history.iter().filter(|e| e.value == f64::NEG_INFINITY).count();
    match best {
        Some((best_theta, best_value)) => Ok(BoOutcome { best_theta, best_value, history, failed }),
        None => Err(BoError::AllFailed),
    }
}
