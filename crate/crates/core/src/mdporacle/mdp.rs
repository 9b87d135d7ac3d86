//! Finite MDPs, value iteration and the milestone-augmented shaped product.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::shaping::{psi, update_milestone, MilestoneConfig, ShapingError};

/// Row sums must equal 1 within this.
pub const ROW_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MdpError {
    #[error("state {s}, action {a}: transition row sums to {sum}")]
    NotStochastic { s: usize, a: usize, sum: f64 },
    #[error("state {s}, action {a}: successor {next} out of range")]
    BadSuccessor { s: usize, a: usize, next: usize },
    #[error("{0}")]
    Shape(String),
    #[error("gamma must lie in [0, 1), got {0}")]
    BadGamma(f64),
    #[error("potential of state {0} is outside [0, 1]")]
    BadPotential(usize),
    #[error(transparent)]
    Shaping(#[from] ShapingError),
}

/// One outgoing edge of an `(s, a)` row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub next: usize,
    pub prob: f64,
    pub reward: f64,
}

/// A finite MDP stored as sparse rows, `rows[s * |A| + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub rows: Vec<Vec<Edge>>,
    pub gamma: f64,
    /// State potential on [0, 1].
    pub phi: Vec<f64>,
}

impl TabularMdp {
    pub fn new(n_states: usize, n_actions: usize, rows: Vec<Vec<Edge>>, gamma: f64, phi: Vec<f64>) -> Result<Self, MdpError> {
        let mdp = TabularMdp { n_states, n_actions, rows, gamma, phi };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        if self.n_states == 0 || self.n_actions == 0 {
            return Err(MdpError::Shape("need at least one state and one action".into()));
        }
        if self.rows.len() != self.n_states * self.n_actions || self.phi.len() != self.n_states {
            return Err(MdpError::Shape("row or potential table has the wrong size".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(MdpError::BadGamma(self.gamma));
        }
        for (s, p) in self.phi.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(MdpError::BadPotential(s));
            }
        }
        check_rows(&self.rows, self.n_states, self.n_actions)
    }

    pub fn row(&self, s: usize, a: usize) -> &[Edge] {
        &self.rows[s * self.n_actions + a]
    }

    /// `P(s' | s, a)`.
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a).iter().filter(|e| e.next == next).map(|e| e.prob).sum()
    }

    /// Random sparse MDP: each row has 1 to 3 successors, about a third of
    /// the edges carry a reward in [0, 1), and entering the last state pays 1.
    pub fn random(rng: &mut impl Rng, n_states: usize, n_actions: usize, gamma: f64) -> Result<Self, MdpError> {
        let mut rows = Vec::with_capacity(n_states * n_actions);
        let goal = n_states - 1;
        for _ in 0..n_states * n_actions {
            let fanout = rng.random_range(1..=n_states.min(3));
            let nexts = sample(rng, n_states, fanout).into_vec();
            let weights: Vec<f64> = (0..fanout).map(|_| rng.random_range(0.1..1.0)).collect();
            let total: f64 = weights.iter().sum();
            let mut row = Vec::with_capacity(fanout);
            let mut acc = 0.0;
            for (i, (&next, w)) in nexts.iter().zip(&weights).enumerate() {
                // The last edge takes the remainder so the row sums to one.
                let prob = if i + 1 == fanout { 1.0 - acc } else { w / total };
                acc += prob;
                let mut reward = if rng.random_bool(0.3) { rng.random::<f64>() } else { 0.0 };
                if next == goal {
                    reward += 1.0;
                }
                row.push(Edge { next, prob, reward });
            }
            rows.push(row);
        }
        let phi = (0..n_states).map(|_| rng.random::<f64>()).collect();
        TabularMdp::new(n_states, n_actions, rows, gamma, phi)
    }

    /// Replace the potential by one that is 1 at `spike` and 0 elsewhere.
    pub fn with_spike_potential(mut self, spike: usize) -> Self {
        self.phi = (0..self.n_states).map(|s| if s == spike { 1.0 } else { 0.0 }).collect();
        self
    }

    /// The state with the lowest total incoming reward, a natural place
    /// for a misleading potential spike.
    pub fn least_rewarding_state(&self) -> usize {
        let mut incoming = vec![0.0; self.n_states];
        for row in &self.rows {
            for e in row {
                incoming[e.next] += e.prob * e.reward;
            }
        }
        (0..self.n_states).min_by(|a, b| incoming[*a].total_cmp(&incoming[*b])).unwrap_or(0)
    }
}

fn check_rows(rows: &[Vec<Edge>], n_states: usize, n_actions: usize) -> Result<(), MdpError> {
    for (i, row) in rows.iter().enumerate() {
        let (s, a) = (i / n_actions, i % n_actions);
        let mut sum = 0.0;
        for e in row {
            if e.next >= n_states {
                return Err(MdpError::BadSuccessor { s, a, next: e.next });
            }
            if !(e.prob >= 0.0) || !e.reward.is_finite() {
                return Err(MdpError::NotStochastic { s, a, sum: f64::NAN });
            }
            sum += e.prob;
        }
        if (sum - 1.0).abs() > ROW_TOLERANCE {
            return Err(MdpError::NotStochastic { s, a, sum });
        }
    }
    Ok(())
}

/// Optimal values of a solved MDP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Solution {
    pub v: Vec<f64>,
    /// `q[s * |A| + a]`.
    pub q: Vec<f64>,
    /// Sup-norm change of `V` per sweep.
    pub residuals: Vec<f64>,
}

impl Solution {
    pub fn q_row(&self, s: usize, n_actions: usize) -> &[f64] {
        &self.q[s * n_actions..(s + 1) * n_actions]
    }

    pub fn residual(&self) -> f64 {
        self.residuals.last().copied().unwrap_or(0.0)
    }
}

/// Default stopping residual. Tighter than the 1e-10 requirement so the
/// invariance check keeps a wide margin over its 1e-8 gap tolerance.
pub const VI_TOLERANCE: f64 = 1e-12;

const MAX_SWEEPS: usize = 200_000;

fn bellman_q(rows: &[Vec<Edge>], gamma: f64, v: &[f64], q: &mut [f64]) {
    for (qi, row) in q.iter_mut().zip(rows) {
        *qi = row.iter().map(|e| e.prob * (e.reward + gamma * v[e.next])).sum();
    }
}

fn solve(rows: &[Vec<Edge>], n_states: usize, n_actions: usize, gamma: f64, tol: f64) -> Solution {
    let mut v = vec![0.0; n_states];
    let mut q = vec![0.0; n_states * n_actions];
    let mut residuals = Vec::new();
    loop {
        bellman_q(rows, gamma, &v, &mut q);
        let mut delta: f64 = 0.0;
        for s in 0..n_states {
            let best = q[s * n_actions..(s + 1) * n_actions].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - v[s]).abs());
            v[s] = best;
        }
        residuals.push(delta);
        if delta <= tol || residuals.len() >= MAX_SWEEPS {
            break;
        }
    }
    // Make Q consistent with the final V.
    bellman_q(rows, gamma, &v, &mut q);
    Solution { v, q, residuals }
}

/// Value iteration to sup-norm residual [`VI_TOLERANCE`].
pub fn value_iteration(mdp: &TabularMdp) -> Solution {
    value_iteration_to(mdp, VI_TOLERANCE)
}

pub fn value_iteration_to(mdp: &TabularMdp, tol: f64) -> Solution {
    solve(&mdp.rows, mdp.n_states, mdp.n_actions, mdp.gamma, tol)
}

/// The product MDP over `(s, m)` with the shaped reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedMdp {
    pub base_states: usize,
    pub n_actions: usize,
    /// Milestone count `K`; each base state has `K + 1` copies.
    pub k: usize,
    pub gamma: f64,
    /// `rows[(s * (K + 1) + m) * |A| + a]`, rewards already shaped.
    pub rows: Vec<Vec<Edge>>,
}

impl AugmentedMdp {
    pub fn n_states(&self) -> usize {
        self.base_states * (self.k + 1)
    }

    pub fn index(&self, s: usize, m: usize) -> usize {
        s * (self.k + 1) + m
    }

    /// Inverse of [`AugmentedMdp::index`].
    pub fn split(&self, i: usize) -> (usize, usize) {
        (i / (self.k + 1), i % (self.k + 1))
    }

    pub fn row(&self, s: usize, m: usize, a: usize) -> &[Edge] {
        &self.rows[self.index(s, m) * self.n_actions + a]
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        check_rows(&self.rows, self.n_states(), self.n_actions)
    }

    /// Augmented states reachable from `(s, update(0, φ(s)))` for every
    /// base state `s`, sorted by index.
    pub fn reachable(&self, mdp: &TabularMdp, config: &MilestoneConfig) -> Result<Vec<usize>, MdpError> {
        let mut seen = vec![false; self.n_states()];
        let mut stack = Vec::new();
        for s in 0..self.base_states {
            let i = self.index(s, update_milestone(config, 0, mdp.phi[s])?);
            if !seen[i] {
                seen[i] = true;
                stack.push(i);
            }
        }
        while let Some(i) = stack.pop() {
            for a in 0..self.n_actions {
                for e in &self.rows[i * self.n_actions + a] {
                    if e.prob > 0.0 && !seen[e.next] {
                        seen[e.next] = true;
                        stack.push(e.next);
                    }
                }
            }
        }
        Ok((0..self.n_states()).filter(|i| seen[*i]).collect())
    }

    pub fn solve(&self, tol: f64) -> Solution {
        solve(&self.rows, self.n_states(), self.n_actions, self.gamma, tol)
    }
}

/// Build the milestone-augmented MDP whose reward on `((s,m), a, (s',m'))` is
/// `R + γφ(s') − φ(s) + γΨ(m') − Ψ(m)` with `m' = update(m, φ(s'))`.
///
/// The discount comes from the MDP; the config supplies the bonuses.
pub fn augment_and_shape(mdp: &TabularMdp, config: &MilestoneConfig) -> Result<AugmentedMdp, MdpError> {
    mdp.validate()?;
    let k = config.k();
    let g = mdp.gamma;
    let psis: Vec<f64> = (0..=k).map(|m| psi(config, m)).collect::<Result<_, _>>()?;
    let mut aug = AugmentedMdp { base_states: mdp.n_states, n_actions: mdp.n_actions, k, gamma: g, rows: Vec::new() };
    let mut rows = Vec::with_capacity(aug.n_states() * mdp.n_actions);
    for s in 0..mdp.n_states {
        for m in 0..=k {
            for a in 0..mdp.n_actions {
                let row = mdp
                    .row(s, a)
                    .iter()
                    .map(|e| {
                        let m_next = update_milestone(config, m, mdp.phi[e.next])?;
                        let local = g * mdp.phi[e.next] - mdp.phi[s];
                        let global = g * psis[m_next] - psis[m];
                        Ok(Edge { next: aug.index(e.next, m_next), prob: e.prob, reward: e.reward + local + global })
                    })
                    .collect::<Result<Vec<_>, MdpError>>()?;
                rows.push(row);
            }
        }
    }
    aug.rows = rows;
    Ok(aug)
}

/// Q-gap tolerance for argmax comparison.
pub const GAP_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub state: usize,
    pub milestone: usize,
    pub base_best: usize,
    pub shaped_best: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub n_states: usize,
    pub n_actions: usize,
    pub k: usize,
    pub gamma: f64,
    pub reachable: usize,
    pub checked: usize,
    /// Reachable states skipped because the base MDP has a near-tie.
    pub skipped_ties: usize,
    pub violations: Vec<Violation>,
    /// Largest spread over actions of `Q̃(s,m,·) − Q(s,·)`; zero in exact arithmetic.
    pub max_offset_spread: f64,
    /// Largest deviation of that difference from `−φ(s) − Ψ(m)`.
    pub max_offset_error: f64,
    pub base_residual: f64,
    pub shaped_residual: f64,
}

impl InvarianceReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.max_offset_spread <= GAP_TOLERANCE
    }
}

fn argmax_set(q: &[f64], tol: f64) -> Vec<usize> {
    let best = q.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (0..q.len()).filter(|a| q[*a] >= best - tol).collect()
}

/// Solve the base and the shaped augmented MDP and compare greedy actions
/// on every reachable augmented state.
pub fn check_policy_invariance(mdp: &TabularMdp, config: &MilestoneConfig) -> Result<InvarianceReport, MdpError> {
    let aug = augment_and_shape(mdp, config)?;
    let base = value_iteration(mdp);
    let shaped = aug.solve(VI_TOLERANCE);
    let n_a = mdp.n_actions;
    let reachable = aug.reachable(mdp, config)?;
    let mut report = InvarianceReport {
        n_states: mdp.n_states,
        n_actions: n_a,
        k: config.k(),
        gamma: mdp.gamma,
        reachable: reachable.len(),
        checked: 0,
        skipped_ties: 0,
        violations: Vec::new(),
        max_offset_spread: 0.0,
        max_offset_error: 0.0,
        base_residual: base.residual(),
        shaped_residual: shaped.residual(),
    };
    for &i in &reachable {
        let (s, m) = aug.split(i);
        let q = base.q_row(s, n_a);
        let qs = shaped.q_row(i, n_a);
        let offset = -(mdp.phi[s] + psi(config, m)?);
        let diffs: Vec<f64> = qs.iter().zip(q).map(|(a, b)| a - b).collect();
        let lo = diffs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = diffs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        report.max_offset_spread = report.max_offset_spread.max(hi - lo);
        for d in &diffs {
            report.max_offset_error = report.max_offset_error.max((d - offset).abs());
        }
        let base_best = argmax_set(q, GAP_TOLERANCE);
        if base_best.len() > 1 {
            report.skipped_ties += 1;
            continue;
        }
        report.checked += 1;
        let shaped_best = argmax_set(qs, GAP_TOLERANCE);
        if shaped_best.iter().any(|a| *a != base_best[0]) {
            report.violations.push(Violation { state: s, milestone: m, base_best: base_best[0], shaped_best });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngSeed;

    fn det(next: usize, reward: f64) -> Vec<Edge> {
        vec![Edge { next, prob: 1.0, reward }]
    }

    #[test]
    fn two_state_chain() {
        // State 0 steps into absorbing state 1, earning 1 on entry.
        let mdp = TabularMdp::new(2, 1, vec![det(1, 1.0), det(1, 0.0)], 0.9, vec![0.0, 0.0]).unwrap();
        let sol = value_iteration(&mdp);
        assert!((sol.v[0] - 1.0).abs() < 1e-12);
        assert!(sol.v[1].abs() < 1e-12);
    }

    #[test]
    fn myopic_limit() {
        let mut rng = RngSeed(3).rng();
        let mut mdp = TabularMdp::random(&mut rng, 6, 3, 0.5).unwrap();
        mdp.gamma = 0.0;
        let sol = value_iteration(&mdp);
        for s in 0..6 {
            let want = (0..3)
                .map(|a| mdp.row(s, a).iter().map(|e| e.prob * e.reward).sum::<f64>())
                .fold(f64::NEG_INFINITY, f64::max);
            assert!((sol.v[s] - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_rewards_zero_values() {
        let mut rng = RngSeed(4).rng();
        let mut mdp = TabularMdp::random(&mut rng, 8, 2, 0.9).unwrap();
        for row in &mut mdp.rows {
            for e in row {
                e.reward = 0.0;
            }
        }
        assert!(value_iteration(&mdp).v.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn residuals_contract() {
        let mut rng = RngSeed(5).rng();
        let mdp = TabularMdp::random(&mut rng, 30, 4, 0.95).unwrap();
        let sol = value_iteration_to(&mdp, 1e-10);
        assert!(sol.residual() <= 1e-10);
        for w in sol.residuals.windows(2) {
            assert!(w[1] <= mdp.gamma * w[0] + 1e-13, "{} then {}", w[0], w[1]);
        }
        for s in 0..30 {
            let best = sol.q_row(s, 4).iter().copied().fold(f64::NEG_INFINITY, f64::max);
            assert!((best - sol.v[s]).abs() <= 1e-10);
        }
    }

    #[test]
    fn random_rows_are_stochastic() {
        let mut rng = RngSeed(6).rng();
        for _ in 0..20 {
            let mdp = TabularMdp::random(&mut rng, 10, 3, 0.9).unwrap();
            for row in &mdp.rows {
                assert!((row.iter().map(|e| e.prob).sum::<f64>() - 1.0).abs() <= ROW_TOLERANCE);
            }
        }
    }

    #[test]
    fn invalid_mdps_rejected() {
        assert!(TabularMdp::new(1, 1, vec![vec![Edge { next: 0, prob: 0.5, reward: 0.0 }]], 0.9, vec![0.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![det(1, 0.0)], 0.9, vec![0.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![det(0, 0.0)], 1.0, vec![0.0]).is_err());
        assert!(TabularMdp::new(1, 1, vec![det(0, 0.0)], 0.9, vec![1.5]).is_err());
    }

    #[test]
    fn k_zero_is_plain_pbrs() {
        let mut rng = RngSeed(7).rng();
        let mdp = TabularMdp::random(&mut rng, 5, 2, 0.9).unwrap();
        let cfg = MilestoneConfig::new(vec![], 0.9).unwrap();
        let aug = augment_and_shape(&mdp, &cfg).unwrap();
        assert_eq!(aug.n_states(), 5);
        for s in 0..5 {
            for a in 0..2 {
                for (e, b) in aug.row(s, 0, a).iter().zip(mdp.row(s, a)) {
                    assert_eq!(e.next, b.next);
                    assert_eq!(e.reward, b.reward + (0.9 * mdp.phi[b.next] - mdp.phi[s]) + 0.0);
                }
            }
        }
    }

    #[test]
    fn zero_potential_keeps_base_reward() {
        let mut rng = RngSeed(8).rng();
        let mut mdp = TabularMdp::random(&mut rng, 5, 2, 0.9).unwrap();
        mdp.phi = vec![0.0; 5];
        let cfg = MilestoneConfig::uniform(3, 0.9).unwrap();
        let aug = augment_and_shape(&mdp, &cfg).unwrap();
        for s in 0..5 {
            for a in 0..2 {
                for (e, b) in aug.row(s, 0, a).iter().zip(mdp.row(s, a)) {
                    assert_eq!(aug.split(e.next), (b.next, 0));
                    assert_eq!(e.reward, b.reward);
                }
            }
        }
    }

    #[test]
    fn chain_milestone_walk() {
        let rows = vec![det(1, 0.0), det(2, 0.0), det(3, 0.0), det(3, 0.0)];
        let mdp = TabularMdp::new(4, 1, rows, 0.9, vec![0.0, 0.4, 0.7, 1.0]).unwrap();
        let cfg = MilestoneConfig::uniform(2, 0.9).unwrap();
        let aug = augment_and_shape(&mdp, &cfg).unwrap();
        let mut i = aug.index(0, 0);
        let mut ms = vec![0];
        for _ in 0..3 {
            i = aug.rows[i][0].next;
            ms.push(aug.split(i).1);
        }
        assert_eq!(ms, vec![0, 0, 1, 2]);
    }

    #[test]
    fn augmented_rows_keep_probabilities() {
        let mut rng = RngSeed(9).rng();
        let mdp = TabularMdp::random(&mut rng, 12, 3, 0.8).unwrap();
        let cfg = MilestoneConfig::uniform(4, 0.8).unwrap();
        let aug = augment_and_shape(&mdp, &cfg).unwrap();
        aug.validate().unwrap();
        for s in 0..12 {
            for m in 0..=4 {
                for a in 0..3 {
                    let p: Vec<f64> = aug.row(s, m, a).iter().map(|e| e.prob).collect();
                    let q: Vec<f64> = mdp.row(s, a).iter().map(|e| e.prob).collect();
                    assert_eq!(p, q);
                    assert!(aug.row(s, m, a).iter().all(|e| aug.split(e.next).1 >= m));
                }
            }
        }
    }

    #[test]
    fn constant_potential_offset() {
        let mut rng = RngSeed(10).rng();
        let mut mdp = TabularMdp::random(&mut rng, 10, 3, 0.9).unwrap();
        mdp.phi = vec![0.3; 10];
        let cfg = MilestoneConfig::new(vec![], 0.9).unwrap();
        let r = check_policy_invariance(&mdp, &cfg).unwrap();
        assert!(r.passed());
        assert!(r.max_offset_error < 1e-9);
    }

    #[test]
    fn invariance_on_random_instances() {
        let mut rng = RngSeed(11).rng();
        for i in 0..5 {
            let mdp = TabularMdp::random(&mut rng, 20, 4, 0.9).unwrap();
            let cfg = MilestoneConfig::uniform(i + 1, 0.9).unwrap();
            let r = check_policy_invariance(&mdp, &cfg).unwrap();
            assert!(r.passed(), "{r:?}");
            assert!(r.max_offset_error < 1e-8);
        }
    }

    #[test]
    fn spiked_potential_is_harmless() {
        let mut rng = RngSeed(12).rng();
        let mdp = TabularMdp::random(&mut rng, 25, 4, 0.95).unwrap();
        let spike = mdp.least_rewarding_state();
        let mdp = mdp.with_spike_potential(spike);
        let r = check_policy_invariance(&mdp, &MilestoneConfig::uniform(5, 0.95).unwrap()).unwrap();
        assert!(r.passed());
    }
}
