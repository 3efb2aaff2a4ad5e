use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use explq::closed_form::alm_solution;
use explq::market::{episode_rng, simulate_episode};
use explq::mv_alm::{evaluate_policy, MVProblem};
use explq::rl::{grad_theta, train, transitions_from_states, StepRule, ThetaVector, TrainConfig};
use explq_bench::{market, schedules};

fn episodes(c: &mut Criterion) {
    let mv = MVProblem::default();
    let mut group = c.benchmark_group("simulate_episode");
    for (name, m) in schedules() {
        let policy = alm_solution(&m.params, m.periods).unwrap().policy();
        group.throughput(Throughput::Elements(m.periods as u64));
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            let mut k = 0;
            b.iter(|| {
                k += 1;
                let mut rng = episode_rng(7, k);
                simulate_episode(&m.params, &policy, mv.initial_state(), 1.5, &mut rng).unwrap()
            })
        });
    }
    group.finish();

    let m = market(1.0 / 12.0, 1.0);
    let policy = alm_solution(&m.params, m.periods).unwrap().policy();
    let mut group = c.benchmark_group("evaluate_policy");
    group.sample_size(10);
    group.throughput(Throughput::Elements(100_000));
    group.bench_function("monthly_1y_1e5", |b| {
        b.iter(|| evaluate_policy(&m.params, &policy, &mv.with_gamma(1.5), 100_000, 7, 0.05, "bench").unwrap())
    });
    group.finish();
}

fn training(c: &mut Criterion) {
    let m = market(1.0 / 12.0, 1.0);
    let theta = ThetaVector::ground_truth(&m.params);
    let policy = alm_solution(&m.params, m.periods).unwrap().policy();
    let mut rng = episode_rng(11, 0);
    let path = simulate_episode(&m.params, &policy, MVProblem::default().initial_state(), 1.5, &mut rng).unwrap();
    let transitions = transitions_from_states(&path.shifted_states(m.rf_period()));
    c.bench_function("grad_theta/monthly_1y", |b| {
        b.iter(|| grad_theta(black_box(&theta), &transitions, 0.1, m.periods).unwrap())
    });

    let mut config = TrainConfig::for_market(&m.params, 1.4, 20240101);
    config.step = StepRule::Normalized { eta: 1e-3 };
    config.episodes = 500;
    config.batch = 10;
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.throughput(Throughput::Elements(config.episodes as u64));
    group.bench_function("monthly_1y_500_episodes", |b| b.iter(|| train(&config, &m.params, m.periods).unwrap()));
    group.finish();
}

criterion_group!(benches, episodes, training);
criterion_main!(benches);
