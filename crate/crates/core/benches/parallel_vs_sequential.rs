//! Data-parallel versus sequential execution of the two hot loops: the
//! invariance suite and surrogate scoring.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rewardsynth::mdporacle::suite::{run_suite, SuiteConfig};
use rewardsynth::mdporacle::synth::{generate_demos, ground_truth_program, SyntheticTask};
use rewardsynth::parallel::Exec;
use rewardsynth::surrogate::score_with;
use rewardsynth::SurrogateWeights;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn suite(c: &mut Criterion) {
    let config = SuiteConfig { count: 16, max_states: 30, ..SuiteConfig::default() };
    let mut g = c.benchmark_group("invariance_suite");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(run_suite(&config, exec).unwrap()))
        });
    }
    g.finish();
}

fn scoring(c: &mut Criterion) {
    let demos = generate_demos(&SyntheticTask::default(), 32, 0.1, 1.0).unwrap().into_trajectories();
    let program = ground_truth_program();
    let theta = program.defaults();
    let weights = SurrogateWeights::default();
    let mut g = c.benchmark_group("surrogate_score");
    for (name, exec) in MODES {
        g.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| black_box(score_with(&program, &theta, &demos, &weights, 0.99, exec).unwrap()))
        });
    }
    g.finish();
}

criterion_group!(benches, suite, scoring);
criterion_main!(benches);
