//! Sequential vs thread-pool execution of the batched hot paths: one
//! held-out SNR sweep and one full update cycle.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use semcast::par::Exec;
use semcast::train::{self, ExperimentConfig, Setup};
use std::hint::black_box;

fn setup() -> Setup {
    let mut c = ExperimentConfig::default();
    c.data_dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-subset").into();
    for kv in ["train_limit=512", "test_limit=512", "eval_snrs=4", "kappa=4", "inner_steps=2"] {
        c.set_override(kv).expect("bench override");
    }
    Setup::new(c).expect("bench setup")
}

fn bench(c: &mut Criterion) {
    let setup = setup();
    let state = setup.init_state();
    let execs = [("sequential", Exec::sequential()), ("threads-4", Exec::new(4))];

    let mut g = c.benchmark_group("evaluate");
    g.sample_size(10);
    for (name, exec) in &execs {
        g.bench_with_input(BenchmarkId::from_parameter(name), exec, |b, exec| {
            b.iter(|| black_box(train::evaluate(&setup, &state, exec).expect("evaluate")))
        });
    }
    g.finish();

    let mut g = c.benchmark_group("update_cycle");
    g.sample_size(10);
    for (name, exec) in &execs {
        g.bench_with_input(BenchmarkId::from_parameter(name), exec, |b, exec| {
            b.iter(|| black_box(train::run_update_cycle(&setup, &state, 1, 1, 0, exec).expect("cycle")))
        });
    }
    g.finish();
}

criterion_group!(benches, bench);
criterion_main!(benches);
