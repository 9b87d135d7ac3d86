//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails. Every tolerance is pinned here.

use std::time::{Duration, Instant};

use rand::Rng;
use rewardsynth::bayesopt::{gp_fit, optimize, BoConfig, GpConfig};
use rewardsynth::mdporacle::synth::{generate_demos, generate_rollouts, RolloutKind, StartRegion, SyntheticTask, TASK_DESCRIPTION};
use rewardsynth::mdporacle::{run_suite, SuiteConfig};
use rewardsynth::parallel::Exec;
use rewardsynth::shaping::{discounted_return, psi, shape_potentials, shape_trajectory, total_return, MilestoneConfig};
use rewardsynth::surrogate::{score_with, spearman};
use rewardsynth::synthesis::{run_synthesis, Candidate, MutationProposer, RunOptions, SynthesisConfig};
use rewardsynth::{DemoDataset, RngSeed, SurrogateWeights, Trajectory};

const MASTER_SEED: u64 = 2024;

// Criterion 1
const SUITE_SIZE: usize = 100;
const SUITE_WALL_CLOCK: Duration = Duration::from_secs(60);
// Criterion 2
const TELESCOPE_TRIPLES: usize = 1000;
const TELESCOPE_TOL: f64 = 1e-10;
// Criterion 3
const SPEARMAN_CASES: usize = 1000;
const SPEARMAN_MAX_LEN: usize = 20;
const SPEARMAN_TOL: f64 = 1e-12;
// Criterion 4
const GP_INTERP_TOL: f64 = 1e-10;
const GP_GRAD_REL_TOL: f64 = 1e-5;
// Criterion 5
const BO_SEEDS: u64 = 10;
const QUAD_BUDGET: usize = 30;
const QUAD_TOL: f64 = 0.05;
const BRANIN_BUDGET: usize = 60;
// Criterion 6
const DEMOS: usize = 5;
const ITERATIONS: usize = 10;
const BATCH: usize = 8;
const BO_BUDGET: usize = 40;
const GAMMA: f64 = 0.99;
const MIN_VAL_PROG: f64 = 0.90;
const MIN_VAL_STAGE: f64 = 0.85;
const MIN_VAL_PBRS: f64 = 0.85;
const SYNTH_WALL_CLOCK: Duration = Duration::from_secs(600);
// Criterion 7
const OOD_ROLLOUTS: usize = 10;
const MIN_OOD_PROG: f64 = 0.80;
// Criterion 8
const NOISE: f64 = 0.3;
const NOISY_IN_MIX: usize = 3;
const MIN_MIX_PROG: f64 = 0.85;
const MIN_NOISE_DROP: f64 = 0.1;
// Criterion 10
const RANK_PER_KIND: usize = 10;
const MIN_RANK_RHO: f64 = 0.7;

struct Outcome {
    passed: bool,
    detail: String,
    /// Serialized outputs compared byte for byte across reruns.
    artifact: String,
}

fn outcome(passed: bool, detail: String, artifact: String) -> Outcome {
    Outcome { passed, detail, artifact }
}

fn seed(tag: u64) -> RngSeed {
    RngSeed(MASTER_SEED).derive(tag)
}

fn criterion_1() -> Outcome {
    let config = SuiteConfig { count: SUITE_SIZE, seed: seed(1), ..SuiteConfig::default() };
    let start = Instant::now();
    let report = run_suite(&config, Exec::Sequential).expect("suite config is valid");
    let elapsed = start.elapsed();
    let ok = report.passed() && report.instances.len() == SUITE_SIZE && elapsed < SUITE_WALL_CLOCK;
    outcome(
        ok,
        format!(
            "{} MDPs, {} argmax sets checked, {} near-ties skipped, {} violations, {:.1}s",
            report.instances.len(),
            report.total_checked,
            report.total_skipped_ties,
            report.total_violations,
            elapsed.as_secs_f64()
        ),
        serde_json::to_string(&report).unwrap(),
    )
}

fn random_milestones(rng: &mut impl Rng, gamma: f64) -> MilestoneConfig {
    let k = rng.random_range(0..=8);
    MilestoneConfig::new((0..k).map(|_| rng.random_range(0.05..2.0)).collect(), gamma).unwrap()
}

fn criterion_2() -> Outcome {
    let mut rng = seed(2).rng();
    let task = SyntheticTask { seed: seed(20), ..SyntheticTask::default() };
    let program = rewardsynth::mdporacle::ground_truth_program();
    let mut worst = 0.0f64;
    let mut csv = String::from("case,residual\n");
    for case in 0..TELESCOPE_TRIPLES {
        let gamma = if rng.random_bool(0.1) { 1.0 } else { rng.random_range(0.5..1.0) };
        let config = random_milestones(&mut rng, gamma);
        // Every tenth case shapes a simulated rollout, the rest arbitrary sequences.
        let (phis, base): (Vec<f64>, Vec<f64>) = if case % 10 == 0 {
            let t = generate_rollouts(&task, RolloutKind::Partial, case / 10 + 1, 0.0, 1.0).pop().unwrap();
            (program.evaluate_trajectory(&program.defaults(), &t).unwrap().potentials, t.base_rewards())
        } else {
            let n = rng.random_range(1..=60);
            ((0..=n).map(|_| rng.random_range(0.0..=1.0)).collect(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        };
        let (start, ts) = shape_potentials(&config, &phis, &base).unwrap();
        let n = ts.len();
        let end = ts.last().unwrap();
        let lhs = discounted_return(&ts, gamma);
        let base_disc: f64 = base.iter().enumerate().map(|(t, r)| gamma.powi(t as i32) * r).sum();
        let phi_psi_end = end.phi + psi(&config, end.m_next).unwrap();
        let phi_psi_start = start.prev_phi + psi(&config, start.milestone).unwrap();
        let residual = (lhs - base_disc - gamma.powi(n as i32) * phi_psi_end + phi_psi_start).abs();
        worst = worst.max(residual);
        csv.push_str(&format!("{case},{residual:e}\n"));
    }
    outcome(worst <= TELESCOPE_TOL, format!("{TELESCOPE_TRIPLES} triples, worst residual {worst:.2e} (tol {TELESCOPE_TOL:e})"), csv)
}

/// Ranks by counting, independent of any sorting.
fn oracle_spearman(xs: &[f64], ys: &[f64]) -> f64 {
    let ranks = |v: &[f64]| -> Vec<f64> {
        v.iter()
            .map(|a| {
                let less = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                less + (equal + 1.0) / 2.0
            })
            .collect()
    };
    let (rx, ry) = (ranks(xs), ranks(ys));
    let n = xs.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        0.0
    } else {
        cov / (vx * vy).sqrt()
    }
}

fn criterion_3() -> Outcome {
    let mut rng = seed(3).rng();
    let mut worst = 0.0f64;
    let mut monotone_exact = true;
    let mut csv = String::from("case,rho\n");
    for case in 0..SPEARMAN_CASES {
        let n = rng.random_range(2..=SPEARMAN_MAX_LEN);
        // Values on a coarse grid so ties are common.
        let mut draw = |levels: i32| -> Vec<f64> { (0..n).map(|_| f64::from(rng.random_range(-levels..=levels)) / 8.0).collect() };
        let levels = if case % 2 == 0 { 3 } else { 32 };
        let xs = draw(levels);
        let ys = draw(levels);
        let rho = spearman(&xs, &ys).unwrap();
        worst = worst.max((rho - oracle_spearman(&xs, &ys)).abs());
        let fx: Vec<f64> = xs.iter().map(|x| x.exp() * 3.0 + 1.0).collect();
        let gy: Vec<f64> = ys.iter().map(|y| y.powi(3) + y).collect();
        monotone_exact &= spearman(&fx, &gy).unwrap() == rho;
        csv.push_str(&format!("{case},{rho}\n"));
    }
    outcome(
        worst <= SPEARMAN_TOL && monotone_exact,
        format!("{SPEARMAN_CASES} cases, worst oracle gap {worst:.2e}, monotone invariance exact: {monotone_exact}"),
        csv,
    )
}

fn criterion_4() -> Outcome {
    let mut rng = seed(4).rng();
    let noiseless = GpConfig { noise_variance: 0.0, ..GpConfig::default() };
    let mut worst_mean = 0.0f64;
    let mut worst_var = 0.0f64;
    let mut worst_grad = 0.0f64;
    for _ in 0..20 {
        let d = rng.random_range(1..=3);
        let n = rng.random_range(1..=8);
        // Points on a jittered grid keep the kernel matrix well conditioned.
        let obs: Vec<(Vec<f64>, f64)> = (0..n)
            .map(|i| {
                let x: Vec<f64> =
                    (0..d).map(|k| if k == 0 { (i as f64 + rng.random_range(0.1..0.4)) / n as f64 } else { rng.random() }).collect();
                (x, rng.random_range(-3.0..3.0))
            })
            .collect();
        let gp = gp_fit(&obs, &noiseless).unwrap();
        for (x, y) in &obs {
            let (m, v) = gp.predict(x);
            worst_mean = worst_mean.max((m - y).abs());
            worst_var = worst_var.max(v.abs());
        }
        let q: Vec<f64> = (0..d).map(|_| rng.random()).collect();
        let g = gp.mean_gradient(&q);
        let h = 1e-6;
        for k in 0..d {
            let (mut a, mut b) = (q.clone(), q.clone());
            a[k] += h;
            b[k] -= h;
            let fd = (gp.mean(&a) - gp.mean(&b)) / (2.0 * h);
            worst_grad = worst_grad.max((fd - g[k]).abs() / g[k].abs().max(1e-3));
        }
    }
    let ok = worst_mean <= GP_INTERP_TOL && worst_var <= GP_INTERP_TOL && worst_grad <= GP_GRAD_REL_TOL;
    outcome(
        ok,
        format!("mean gap {worst_mean:.2e}, variance {worst_var:.2e}, gradient rel err {worst_grad:.2e}"),
        format!("{worst_mean:e},{worst_var:e},{worst_grad:e}"),
    )
}

fn branin(x: &[f64]) -> f64 {
    use std::f64::consts::PI;
    let (a, b, c, r, s, t) = (1.0, 5.1 / (4.0 * PI * PI), 5.0 / PI, 6.0, 10.0, 1.0 / (8.0 * PI));
    -(a * (x[1] - b * x[0] * x[0] + c * x[0] - r).powi(2) + s * (1.0 - t) * x[0].cos() + s)
}

fn criterion_5() -> Outcome {
    let mut worst_quad = 0.0f64;
    let mut art = String::from("seed,quad_theta,branin_bo,branin_random\n");
    let (mut bo_sum, mut rs_sum) = (0.0, 0.0);
    let bounds = [(-5.0, 10.0), (0.0, 15.0)];
    for s in 0..BO_SEEDS {
        let cfg = BoConfig { budget: QUAD_BUDGET, seed: seed(50).derive(s), ..BoConfig::default() };
        let warm = [seed(51).derive(s).rng().random::<f64>()];
        let quad = optimize(|t: &[f64]| -(t[0] - 0.3).powi(2), &warm, &[(0.0, 1.0)], &cfg).unwrap();
        worst_quad = worst_quad.max((quad.best_theta[0] - 0.3).abs());

        let cfg = BoConfig { budget: BRANIN_BUDGET, seed: seed(52).derive(s), ..BoConfig::default() };
        let bo = optimize(branin, &[2.5, 7.5], &bounds, &cfg).unwrap();
        let mut rng = seed(53).derive(s).rng();
        let rs = (0..BRANIN_BUDGET)
            .map(|_| branin(&[rng.random_range(-5.0..=10.0), rng.random_range(0.0..=15.0)]))
            .fold(f64::NEG_INFINITY, f64::max);
        bo_sum += bo.best_value;
        rs_sum += rs;
        art.push_str(&format!("{s},{},{},{rs}\n", quad.best_theta[0], bo.best_value));
    }
    let (bo_mean, rs_mean) = (bo_sum / BO_SEEDS as f64, rs_sum / BO_SEEDS as f64);
    outcome(
        worst_quad <= QUAD_TOL && bo_mean > rs_mean,
        format!("quadratic worst |θ*−0.3| {worst_quad:.4}; Branin mean best BO {bo_mean:.4} vs random {rs_mean:.4}"),
        art,
    )
}

fn synth_config() -> SynthesisConfig {
    SynthesisConfig {
        iterations: ITERATIONS,
        batch_size: BATCH,
        gamma: GAMMA,
        bo: BoConfig { budget: BO_BUDGET, ..BoConfig::default() },
        seed: seed(6),
        ..SynthesisConfig::default()
    }
}

fn synthesize(ds: &DemoDataset) -> (Candidate, String) {
    let out = run_synthesis(
        ds,
        &synth_config(),
        TASK_DESCRIPTION,
        &mut MutationProposer::new(seed(60)),
        &RunOptions { exec: Exec::Sequential, ..RunOptions::default() },
    )
    .expect("synthesis runs");
    let art = out.log_jsonl();
    (out.best, art)
}

fn task(tag: u64) -> SyntheticTask {
    SyntheticTask { seed: seed(tag), ..SyntheticTask::default() }
}

struct Learned {
    best: Candidate,
    log: String,
    elapsed: Duration,
}

fn learn_clean() -> Learned {
    let ds = generate_demos(&task(61), DEMOS, 0.0, 1.0).unwrap();
    let start = Instant::now();
    let (best, log) = synthesize(&ds);
    Learned { best, log, elapsed: start.elapsed() }
}

fn criterion_6(l: &Learned) -> Outcome {
    let Some(v) = l.best.val_components else {
        return outcome(false, "best program has no validation scores".into(), l.log.clone());
    };
    let ok = v.c_prog >= MIN_VAL_PROG && v.c_stage >= MIN_VAL_STAGE && v.c_pbrs >= MIN_VAL_PBRS && l.elapsed < SYNTH_WALL_CLOCK;
    outcome(
        ok,
        format!(
            "validation C_prog {:.4}, C_stage {:.4}, C_pbrs {:.4}; {} stages; {:.1}s single-threaded",
            v.c_prog,
            v.c_stage,
            v.c_pbrs,
            l.best.program.stage_count(),
            l.elapsed.as_secs_f64()
        ),
        format!("{}{}", l.log, l.best.tuned_program().to_source()),
    )
}

fn mean_prog(c: &Candidate, ts: &[Trajectory]) -> f64 {
    let r = score_with(&c.program, c.theta(), ts, &SurrogateWeights::default(), GAMMA, Exec::Sequential).unwrap();
    r.mean().map_or(f64::NEG_INFINITY, |m| m.c_prog)
}

fn criterion_7(l: &Learned) -> Outcome {
    let shifted = SyntheticTask { region: StartRegion::Shifted, ..task(70) };
    let ood = generate_rollouts(&shifted, RolloutKind::Success, OOD_ROLLOUTS, 0.0, 1.0);
    let c = mean_prog(&l.best, &ood);
    outcome(
        c >= MIN_OOD_PROG,
        format!("shifted-start C_prog {c:.4}; translation invariant: {}", l.best.program.is_translation_invariant()),
        format!("{c}"),
    )
}

fn criterion_8(l: &Learned) -> Outcome {
    let noisy = generate_rollouts(&task(80), RolloutKind::Success, DEMOS, NOISE, 1.0);
    let clean = generate_rollouts(&task(81), RolloutKind::Success, DEMOS, 0.0, 1.0);
    // Noisy first so the 60/40 split trains on noisy demos.
    let mut mixed = noisy[..NOISY_IN_MIX].to_vec();
    mixed.extend_from_slice(&clean[NOISY_IN_MIX..]);
    let (mix_best, mix_log) = synthesize(&DemoDataset::new(mixed).unwrap());
    let (noisy_best, noisy_log) = synthesize(&DemoDataset::new(noisy).unwrap());
    let val = |c: &Candidate| c.val_components.map_or(f64::NEG_INFINITY, |v| v.c_prog);
    let clean_prog = val(&l.best);
    let (mix_prog, noisy_prog) = (val(&mix_best), val(&noisy_best));
    outcome(
        mix_prog >= MIN_MIX_PROG && clean_prog - noisy_prog >= MIN_NOISE_DROP,
        format!("mixed C_prog {mix_prog:.4}; all-noisy C_prog {noisy_prog:.4} vs clean {clean_prog:.4} (drop {:.4})", clean_prog - noisy_prog),
        format!("{mix_log}{noisy_log}"),
    )
}

fn criterion_10(l: &Learned) -> Outcome {
    let milestones = MilestoneConfig::default();
    let mut csv = String::from("kind,index,gt_score,shaped_return\n");
    let mut means = Vec::new();
    let (mut gts, mut rets) = (Vec::new(), Vec::new());
    for kind in [RolloutKind::Success, RolloutKind::Partial, RolloutKind::Random] {
        let ts = generate_rollouts(&task(100), kind, RANK_PER_KIND, 0.0, 1.0);
        let mut sum = 0.0;
        for (i, t) in ts.iter().enumerate() {
            let r = total_return(&shape_trajectory(&milestones, &l.best.program, l.best.theta(), t).unwrap());
            sum += r;
            gts.push(t.gt_score.unwrap());
            rets.push(r);
            csv.push_str(&format!("{kind:?},{i},{},{r}\n", t.gt_score.unwrap()));
        }
        means.push(sum / RANK_PER_KIND as f64);
    }
    let rho = spearman(&rets, &gts).unwrap();
    outcome(
        means[0] > means[1] && means[1] > means[2] && rho >= MIN_RANK_RHO,
        format!("mean shaped return success {:.3} > partial {:.3} > random {:.3}; rank Spearman {rho:.4}", means[0], means[1], means[2]),
        csv,
    )
}

/// Criteria 1 to 8 and 10, in order, with their artifacts.
fn run_all() -> Vec<(usize, Outcome)> {
    let mut out = vec![(1, criterion_1()), (2, criterion_2()), (3, criterion_3()), (4, criterion_4()), (5, criterion_5())];
    let learned = learn_clean();
    out.push((6, criterion_6(&learned)));
    out.push((7, criterion_7(&learned)));
    out.push((8, criterion_8(&learned)));
    out.push((10, criterion_10(&learned)));
    out
}

fn main() {
    // libtest flags such as --nocapture are accepted and ignored.
    let first = run_all();
    let second = run_all();
    let mut failed = 0;
    for (n, o) in &first {
        if *n == 10 {
            let same = first.iter().zip(&second).all(|((_, a), (_, b))| a.artifact == b.artifact);
            let bytes: usize = first.iter().map(|(_, o)| o.artifact.len()).sum();
            report(9, same, &format!("rerun with seed {MASTER_SEED}: {bytes} bytes of JSON/CSV output identical: {same}"), &mut failed);
        }
        report(*n, o.passed, &o.detail, &mut failed);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn report(n: usize, passed: bool, detail: &str, failed: &mut usize) {
    if !passed {
        *failed += 1;
    }
    println!("criterion {n:>2}: {} : {detail}", if passed { "PASS" } else { "FAIL" });
}
