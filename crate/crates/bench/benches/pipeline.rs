use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use densal_bench::{random_candidates, random_region_stats, random_trees};
use densal_core::acquisition::{global_reduce, score};
use densal_core::coreset::{select_active, CandidatePool, DEFAULT_POOL_SIZE};
use densal_core::model::{Mlp, ModelSpec, Scratch};
use densal_core::raster::{rasterize_density, DensityKernel, GeoTransform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn acquisition(c: &mut Criterion) {
    let stats = random_region_stats(10_000, 8, 32, 1);
    c.bench_function("reduce_and_score_10k_regions", |b| {
        b.iter(|| {
            let g = global_reduce(black_box(&stats)).unwrap();
            score(&stats, &g).unwrap()
        })
    });
}

fn coreset(c: &mut Criterion) {
    let cands = random_candidates(5_000, 32, 40, 2);
    let pool = CandidatePool::top_q(cands, DEFAULT_POOL_SIZE).unwrap();
    let mut group = c.benchmark_group("coreset");
    group.sample_size(10);
    group.bench_function("weighted_kmeans_5k_points_b50", |b| b.iter(|| select_active(black_box(&pool), 50, 7).unwrap()));
    group.finish();
}

fn rasterize(c: &mut Criterion) {
    let trees = random_trees(2_000, 1_200.0, 3);
    let gt = GeoTransform::new(0.0, 0.0, 10.0).unwrap();
    c.bench_function("rasterize_2k_trees_120px", |b| {
        b.iter(|| rasterize_density(black_box(&trees), &gt, 120, 120, &DensityKernel::default()).unwrap())
    });
}

fn forward(c: &mut Criterion) {
    let spec = ModelSpec::default();
    let mlp = Mlp::new(&spec, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs: Vec<f64> = (0..10_000 * spec.input_dim()).map(|_| rng.random_range(-2.0..2.0)).collect();
    c.bench_function("mlp_forward_10k_pixels", |b| {
        b.iter_batched_ref(
            || Scratch::new(&spec),
            |scratch| {
                let mut acc = 0.0;
                for x in inputs.chunks(spec.input_dim()) {
                    acc += mlp.forward::<ChaCha8Rng>(x, scratch, None).density;
                }
                acc
            },
            BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, acquisition, coreset, rasterize, forward);
criterion_main!(benches);
