use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use dyadic_bench::{random_open_set, random_square};
use dyadic_core::content::{critical_thickness, length, ContentParams};
use dyadic_core::czd::whitney;
use dyadic_core::decompose::split_once;
use dyadic_core::dilation::{build_mollifier, mollify, DilationGroup};
use dyadic_core::harness::lambda_stack;
use dyadic_core::operators::{fourier_transform, maximal_with, Convolver};
use dyadic_core::surface::SurfaceMeasure;
use dyadic_core::DyadicCube;

fn content(c: &mut Criterion) {
    let mut group = c.benchmark_group("content");
    for res in [6, 8, 10] {
        let v = random_square(1, res, 2000);
        let p = ContentParams::new(res);
        group.bench_with_input(BenchmarkId::new("length", res), &v, |b, v| {
            b.iter(|| length(black_box(v), &p))
        });
        group.bench_with_input(BenchmarkId::new("critical_thickness", res), &v, |b, v| {
            b.iter(|| critical_thickness(black_box(v), &p))
        });
        group.bench_with_input(BenchmarkId::new("split_once", res), &v, |b, v| {
            b.iter(|| split_once(black_box(v), &DyadicCube::unit(2), &p))
        });
    }
    group.finish();
}

fn czd(c: &mut Criterion) {
    let dil = DilationGroup::new(vec![1.0, 2.0]).unwrap();
    let root = DyadicCube::new(-2, vec![0, 0]);
    let omega = random_open_set(2, 64, 6);
    c.bench_function("whitney_64x64", |b| {
        b.iter(|| whitney(black_box(&omega), &root, 4, &dil))
    });
}

fn operators(c: &mut Criterion) {
    let mu = SurfaceMeasure::parabola(2.0).unwrap();
    let dil = DilationGroup::new(vec![1.0, 2.0]).unwrap();
    let moll = build_mollifier(2).unwrap();
    c.bench_function("mollify_n4", |b| {
        b.iter(|| mollify(&mu, &moll, black_box(4), 7))
    });
    let mut conv = Convolver::new(&mu, &dil).unwrap();
    conv.step_divisor = 8.0;
    let f = lambda_stack(6, -1, 6).unwrap();
    c.bench_function("maximal_stack_res6", |b| {
        b.iter(|| maximal_with(&conv, black_box(&f), -3..=0))
    });
    c.bench_function("fourier_transform_1024", |b| {
        b.iter(|| fourier_transform(&mu, black_box([1024.0, 512.0]), 1e-8))
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = content, czd, operators
}
criterion_main!(benches);
