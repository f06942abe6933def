use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use nandspin::primitives::{bitwise_convolution, Overflow, Workspace};
use nandspin::{CostParams, FixedPointTensor, Meter, Signedness, Subarray, SubarrayGeometry};

fn columns(rng: &mut ChaCha8Rng, bits: u32) -> Vec<u64> {
    (0..128).map(|_| rng.gen_range(0..1u64 << bits)).collect()
}

fn add(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut group = c.benchmark_group("add_8bit");
    for n in [2usize, 8, 16] {
        let ops: Vec<Vec<u64>> = (0..n).map(|_| columns(&mut rng, 8)).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &ops, |b, ops| {
            b.iter(|| {
                let mut ws = Workspace::new(Subarray::new(SubarrayGeometry::default()).unwrap());
                let mut m = Meter::scratch(8);
                let vals: Vec<_> = ops.iter().map(|v| ws.write_values(v, 8, &mut m).unwrap().operand).collect();
                ws.add(vals, 12, Overflow::Error, &mut m).unwrap()
            })
        });
    }
    group.finish();
}

fn mul(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = columns(&mut rng, 8);
    c.bench_function("mul_8x8", |b| {
        b.iter(|| {
            let mut ws = Workspace::new(Subarray::new(SubarrayGeometry::default()).unwrap());
            let mut m = Meter::scratch(8);
            let v = ws.write_values(&a, 8, &mut m).unwrap();
            ws.mul(&v.operand, 0xB7, 16, Overflow::Error, &mut m).unwrap()
        })
    });
}

fn convolution(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<i64> = (0..64).map(|_| rng.gen_range(0..256)).collect();
    let k: Vec<i64> = (0..9).map(|_| rng.gen_range(-128..128)).collect();
    let input = FixedPointTensor::unsigned(vec![8, 8], 8, x).unwrap();
    let weight = FixedPointTensor::new(vec![3, 3], 8, Signedness::TwosComplement, k).unwrap();
    let params = CostParams::default();
    c.bench_function("bitwise_convolution_8x8_k3", |b| {
        b.iter(|| bitwise_convolution(&input, &weight, 1, &params).unwrap())
    });
}

criterion_group!(benches, add, mul, convolution);
criterion_main!(benches);
