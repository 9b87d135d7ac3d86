//! Properties of the milestone-augmented shaped reward.

use proptest::prelude::*;
use rewardsynth::shaping::{
    begin_episode, discounted_return, psi, shape_potentials, update_milestone,
};
use rewardsynth::MilestoneConfig;

fn config() -> impl Strategy<Value = MilestoneConfig> {
    (prop::collection::vec(0.0f64..2.0, 0..8), 0.5f64..=1.0)
        .prop_map(|(b, g)| MilestoneConfig::new(b, g).unwrap())
}

fn phis() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, 2..60)
}

proptest! {
    #[test]
    fn milestones_never_decrease((c, ps) in (config(), phis())) {
        let mut m = 0;
        for p in ps {
            let next = update_milestone(&c, m, p).unwrap();
            prop_assert!(next >= m && next <= c.k());
            m = next;
        }
    }

    #[test]
    fn decomposition_is_exact((c, ps) in (config(), phis()), seed in any::<u64>()) {
        let base: Vec<f64> = (0..ps.len() - 1).map(|i| ((seed >> (i % 60)) & 7) as f64 - 3.5).collect();
        let (_, ts) = shape_potentials(&c, &ps, &base).unwrap();
        let (_, again) = shape_potentials(&c, &ps, &base).unwrap();
        prop_assert_eq!(&ts, &again);
        for (t, r) in ts.iter().zip(&base) {
            prop_assert_eq!(t.base_r, *r);
            prop_assert_eq!(t.r_prime.to_bits(), (t.base_r + t.local + t.global).to_bits());
            prop_assert!((t.r_prime - t.base_r - t.local - t.global).abs() <= 1e-14);
        }
    }

    #[test]
    fn discounted_shaping_telescopes((c, ps) in (config(), phis())) {
        let g = c.gamma();
        let base = vec![0.0; ps.len() - 1];
        let (start, ts) = shape_potentials(&c, &ps, &base).unwrap();
        let n = ts.len() as i32;
        let last = ts.last().unwrap();
        let expect = g.powi(n) * (last.phi + psi(&c, last.m_next).unwrap())
            - (start.prev_phi + psi(&c, start.milestone).unwrap());
        prop_assert!((discounted_return(&ts, g) - expect).abs() <= 1e-10);
    }
}

#[test]
fn initial_milestone_counts_start_potential() {
    let c = MilestoneConfig::uniform(4, 0.9).unwrap();
    assert_eq!(begin_episode(&c, 0.0).unwrap().milestone, 0);
    assert_eq!(begin_episode(&c, 0.5).unwrap().milestone, 2);
    assert_eq!(begin_episode(&c, 1.0).unwrap().milestone, 4);
}

#[test]
fn latched_milestones_resist_potential_collapse() {
    // Both episodes end at zero potential. Only the first passed 3/5.
    let c = MilestoneConfig::uniform(5, 0.95).unwrap();
    let up_down = [0.0, 0.3, 0.65, 0.3, 0.0, 0.0];
    let flat = [0.0, 0.1, 0.15, 0.1, 0.0, 0.0];
    let base = [0.0; 5];
    let (_, a) = shape_potentials(&c, &up_down, &base).unwrap();
    let (_, b) = shape_potentials(&c, &flat, &base).unwrap();
    assert_eq!(a.last().unwrap().m_next, 3);
    assert_eq!(b.last().unwrap().m_next, 0);
    let (ra, rb) = (discounted_return(&a, 0.95), discounted_return(&b, 0.95));
    // Independent oracle: gamma^5 * Psi(3) with bonuses 1/5.
    let expect = 0.95f64.powi(5) * 0.6;
    assert!((ra - expect).abs() < 1e-12, "{ra} vs {expect}");
    assert!(rb.abs() < 1e-12);
    assert!(ra > rb);
}

#[test]
fn thresholds_are_inclusive() {
    let c = MilestoneConfig::uniform(4, 1.0).unwrap();
    assert_eq!(update_milestone(&c, 0, 0.25).unwrap(), 1);
    assert_eq!(update_milestone(&c, 0, 0.25 - 1e-12).unwrap(), 0);
    assert_eq!(update_milestone(&c, 3, 0.0).unwrap(), 3);
}
