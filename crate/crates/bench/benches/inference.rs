use criterion::{criterion_group, criterion_main, Criterion};

use nandspin::runtime::{toy_model, ToyConfig};
use nandspin::{run_model, Network, RunOptions};

fn toy(c: &mut Criterion) {
    let toy = toy_model(0, ToyConfig::default()).unwrap();
    let net = Network::compile(&toy.model).unwrap();
    let mut group = c.benchmark_group("toy_inference");
    group.sample_size(20);
    for threads in [1usize, 4] {
        let opts = RunOptions {
            threads,
            ..RunOptions::default()
        };
        group.bench_function(format!("threads_{threads}"), |b| {
            b.iter(|| run_model(&net, &toy.input, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, toy);
criterion_main!(benches);
