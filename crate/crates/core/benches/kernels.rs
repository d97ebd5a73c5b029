//! Sequential vs. rayon-parallel throughput of the hot kernels.
//!
//! Run with `cargo bench -p spikepool-core`. Without the `parallel` feature
//! both executors take the sequential path, so the pairs should tie.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spikepool_core::kernels::{batchnorm_forward, conv2d, maxpool_forward};
use spikepool_core::lif::lif_forward;
use spikepool_core::{
    BnMode, DownsampleBlock, Exec, LifConfig, PoolSpec, RunningStats, Shape5, Tape, Tensor5,
    Variant,
};

fn random_tensor(shape: Shape5, rng: &mut ChaCha8Rng) -> Tensor5<f32> {
    let data = (0..shape.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor5::from_vec(shape, data).unwrap()
}

fn executors() -> [(&'static str, Exec); 2] {
    [("seq", Exec::Sequential), ("par", Exec::Parallel)]
}

fn bench_conv2d(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = random_tensor(Shape5::new(4, 4, 8, 32, 32), &mut rng);
    let weight = random_tensor(Shape5::new(1, 16, 8, 3, 3), &mut rng);
    let mut group = c.benchmark_group("conv2d_3x3");
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| conv2d(&input, &weight, None, 1, 1, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_maxpool(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let input = random_tensor(Shape5::new(4, 8, 16, 64, 64), &mut rng);
    let spec = PoolSpec::square(2).unwrap();
    let mut group = c.benchmark_group("maxpool_2x2");
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| maxpool_forward(&input, spec, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_batchnorm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let input = random_tensor(Shape5::new(4, 8, 16, 32, 32), &mut rng);
    let gamma = vec![1.0f32; 16];
    let beta = vec![0.0f32; 16];
    let running = RunningStats::identity(16);
    let mut group = c.benchmark_group("batchnorm_train");
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                batchnorm_forward(&input, &gamma, &beta, &running, BnMode::Train, 1e-5, exec)
                    .unwrap()
            })
        });
    }
    group.finish();
}

fn bench_lif(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let input = random_tensor(Shape5::new(8, 8, 16, 32, 32), &mut rng);
    let config = LifConfig::default();
    let mut group = c.benchmark_group("lif_multistep");
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| lif_forward(&input, &config, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_block_forward(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let input = random_tensor(Shape5::new(4, 4, 3, 32, 32), &mut rng);
    let block =
        DownsampleBlock::<f32>::init(Variant::Cml, 3, 8, 3, 2, LifConfig::default(), &mut rng)
            .unwrap();
    let mut group = c.benchmark_group("cml_block_forward");
    for (name, exec) in executors() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &exec, |b, &exec| {
            b.iter(|| {
                let mut blk = block.clone();
                let mut tape = Tape::new(exec);
                let x = tape.leaf(input.clone());
                blk.forward(&mut tape, x, BnMode::Eval).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_conv2d,
    bench_maxpool,
    bench_batchnorm,
    bench_lif,
    bench_block_forward
);
criterion_main!(benches);
