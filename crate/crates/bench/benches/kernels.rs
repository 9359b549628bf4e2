//! Microbenchmarks for the hot kernels: curvature assembly, Gaussian
//! functionals, the entropy search, and one integration step.

use criterion::{black_box, criterion_group, criterion_main, Criterion};

use mcflab_core::ambient::AmbientSpace;
use mcflab_core::curvature::mean_curvature_vector;
use mcflab_core::flow::{step, Scheme};
use mcflab_core::functionals::{entropy, f_functional, EntropyOptions, SpacetimePoint};
use mcflab_core::mesh::icosphere;

fn bench_mean_curvature(c: &mut Criterion) {
    let mesh = icosphere(1.0, &[0.0; 3], 4);
    c.bench_function("mean_curvature_vector_sub4", |b| {
        b.iter(|| mean_curvature_vector(black_box(&mesh)).unwrap())
    });
}

fn bench_f_functional(c: &mut Criterion) {
    let mesh = icosphere(1.0, &[0.0; 3], 4);
    let p = SpacetimePoint::new(vec![0.1, -0.2, 0.3], 0.5).unwrap();
    c.bench_function("f_functional_sub4", |b| {
        b.iter(|| f_functional(black_box(&mesh), black_box(&p)).unwrap())
    });
}

fn bench_entropy(c: &mut Criterion) {
    let mesh = icosphere(1.0, &[0.0; 3], 2);
    let opt = EntropyOptions {
        n_starts: 4,
        ..EntropyOptions::default()
    };
    c.bench_function("entropy_sub2", |b| {
        b.iter(|| entropy(black_box(&mesh), black_box(&opt)).unwrap())
    });
}

fn bench_flow_step(c: &mut Criterion) {
    let mesh = icosphere(1.0, &[0.0; 3], 3);
    let euclid = AmbientSpace::euclidean(3);
    c.bench_function("semi_implicit_step_sub3", |b| {
        b.iter(|| step(black_box(&mesh), &euclid, 1e-4, Scheme::SemiImplicit).unwrap())
    });
    let s3 = AmbientSpace::round_sphere(4, 1.0).unwrap();
    let curved = mcflab_core::mesh::geodesic_sphere_s3(1.0, 1.0, 3);
    c.bench_function("forced_step_sub3", |b| {
        b.iter(|| step(black_box(&curved), &s3, 1e-4, Scheme::SemiImplicit).unwrap())
    });
}

criterion_group!(
    benches,
    bench_mean_curvature,
    bench_f_functional,
    bench_entropy,
    bench_flow_step
);
criterion_main!(benches);
