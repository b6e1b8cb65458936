use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ptcore::math::{softmax, NetConfig, ParamSet};
use ptcore::par::Execution;
use ptcore::trainer::loss_snet_with_targets;

fn batch_step(c: &mut Criterion) {
    let cfg = NetConfig::new(32, vec![128, 128], 7);
    let student = ParamSet::init_uniform(&cfg, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let n = 200;
    let inputs: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            (0..cfg.input_dim)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect()
        })
        .collect();
    let labels: Vec<usize> = (0..n / 4).map(|_| rng.random_range(0..7)).collect();
    let targets: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            softmax(
                &(0..7)
                    .map(|_| rng.random_range(-2.0..2.0))
                    .collect::<Vec<_>>(),
            )
        })
        .collect();
    let kept: Vec<usize> = (0..labels.len()).step_by(2).collect();

    let mut group = c.benchmark_group("student_loss_and_grad");
    for exec in [Execution::Sequential, Execution::Parallel] {
        group.bench_with_input(
            BenchmarkId::from_parameter(format!("{exec:?}")),
            &exec,
            |b, &exec| {
                b.iter(|| {
                    loss_snet_with_targets(
                        &student,
                        Some(&targets),
                        &kept,
                        &inputs,
                        &labels,
                        1.0,
                        &cfg,
                        exec,
                    )
                    .unwrap()
                })
            },
        );
    }
    group.finish();
}

criterion_group!(benches, batch_step);
criterion_main!(benches);
