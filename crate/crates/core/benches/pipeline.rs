//! Build and product times on the full rayon pool against a single thread.
//! Built with `--no-default-features`, both arms run the sequential path.

use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use num_complex::Complex64 as c64;
use rayon::{ThreadPool, ThreadPoolBuilder};

use cbm_core::basis::Orders;
use cbm_core::geometry::tree::{DEFAULT_DEPTH_CAP, DEFAULT_LEAF_CAPACITY};
use cbm_core::harness::sampling::{sample_sphere, sphere_kappa};
use cbm_core::transform::{Pipeline, PipelineOptions};
use cbm_core::translations::{directional_order, layer_order};
use cbm_core::{KernelSpec, Layer};

const EPSILON: f64 = 1e-3;

fn pools() -> Vec<(&'static str, ThreadPool)> {
    let all = ThreadPoolBuilder::new().build().expect("rayon pool");
    let one = ThreadPoolBuilder::new().num_threads(1).build().expect("rayon pool");
    vec![("rayon", all), ("one_thread", one)]
}

fn options() -> PipelineOptions {
    let low = layer_order(EPSILON, Layer::Single);
    PipelineOptions {
        epsilon: EPSILON,
        orders: Orders { low, high: directional_order(low) },
        leaf_capacity: DEFAULT_LEAF_CAPACITY,
        depth_cap: DEFAULT_DEPTH_CAP,
    }
}

fn pipeline(c: &mut Criterion) {
    eprintln!("parallel feature: {}", cbm_core::is_parallel());
    for (label, kd) in [("2pi", 2.0 * PI), ("4pi", 4.0 * PI)] {
        let points = sample_sphere(kd, 10.0, 0).expect("sphere");
        let spec = KernelSpec::new(Layer::Single, sphere_kappa(kd)).expect("kernel");
        let sigma: Vec<c64> = points.densities().expect("densities").to_vec();
        let built = Pipeline::build(points.clone(), spec, options()).expect("pipeline");

        let mut group = c.benchmark_group(format!("single_layer_{label}"));
        group.sample_size(10);
        for (pool_name, pool) in pools() {
            group.bench_function(BenchmarkId::new("build", pool_name), |b| {
                b.iter(|| pool.install(|| Pipeline::build(black_box(points.clone()), spec, options()).unwrap()))
            });
            group.bench_function(BenchmarkId::new("matvec", pool_name), |b| {
                b.iter(|| pool.install(|| built.matvec(black_box(&sigma)).unwrap()))
            });
        }
        group.finish();
    }
}

criterion_group!(benches, pipeline);
criterion_main!(benches);
