use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use nalgebra::DVector;
use transgc_bench::desk_ld;
use transgc_core::{
    blockwise_moments, compute_v_params, estimate_covariance, matrix_sqrt, ridge_adjust, sample_genotypes_from_root,
    EffectEstimate, Provenance,
};

fn kernels(c: &mut Criterion) {
    let ld = desk_ld();
    let root = matrix_sqrt(&ld).unwrap();
    let mut g = c.benchmark_group("desk");
    g.sample_size(10);

    g.bench_function("matrix_sqrt", |b| b.iter(|| matrix_sqrt(black_box(&ld)).unwrap()));
    g.bench_function("sample_genotypes_n2000", |b| {
        b.iter(|| sample_genotypes_from_root(2000, 0.05, 0.45, black_box(&root), 7).unwrap())
    });
    g.bench_function("blockwise_moments", |b| {
        b.iter(|| blockwise_moments(black_box(&ld), black_box(&ld), 0, Provenance::PopulationExact).unwrap())
    });

    let w = sample_genotypes_from_root(2000, 0.05, 0.45, &root, 11).unwrap();
    g.bench_function("estimate_covariance_n2000", |b| {
        b.iter(|| estimate_covariance(black_box(&w), Some(ld.partition())).unwrap())
    });
    let w_cov = estimate_covariance(&w, Some(ld.partition())).unwrap();
    let est = EffectEstimate::marginal(DVector::from_element(ld.dim(), 0.01), 20_000).unwrap();
    g.bench_function("ridge_adjust", |b| b.iter(|| ridge_adjust(black_box(&est), &w_cov, 0.1).unwrap()));
    g.bench_function("compute_v_params", |b| b.iter(|| compute_v_params(black_box(&w_cov), &ld, &ld, 0.1).unwrap()));
    g.finish();
}

criterion_group!(benches, kernels);
criterion_main!(benches);
