use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use coseg::solver::{self, project_simplex};
use coseg::{kmeans, kmedians, AnalysisOperator, SegConfig, Segmenter, SolverParams};
use coseg_bench::{disk_scene, points};

fn operator(c: &mut Criterion) {
    let op = AnalysisOperator::default_operator(9, 2.0).unwrap();
    let patch: Vec<f64> = (0..81).map(|i| (i as f64 * 0.37).sin()).collect();
    c.bench_function("analyze 9x9 patch", |b| b.iter(|| op.analyze(black_box(&patch)).unwrap()));
}

fn signatures(c: &mut Criterion) {
    let segmenter = Segmenter::new(SegConfig::supervised()).unwrap();
    let (image, _) = disk_scene(96, 96, 1);
    c.bench_function("signature field 96x96", |b| b.iter(|| segmenter.signatures(black_box(&image)).unwrap()));
}

fn data_term(c: &mut Criterion) {
    let segmenter = Segmenter::new(SegConfig::supervised()).unwrap();
    let (image, scribbles) = disk_scene(96, 96, 2);
    c.bench_function("supervised problem 96x96", |b| {
        b.iter(|| segmenter.supervised_problem(black_box(&image), black_box(&scribbles)).unwrap())
    });
}

fn solver_iterations(c: &mut Criterion) {
    let segmenter = Segmenter::new(SegConfig::supervised()).unwrap();
    let (image, scribbles) = disk_scene(96, 96, 3);
    let problem = segmenter.supervised_problem(&image, &scribbles).unwrap();
    let params = SolverParams { lambda: 2000.0, nu: 0.0, max_iters: 100, tol: 0.0 };
    c.bench_function("100 primal-dual iterations 96x96 n=2", |b| {
        b.iter(|| solver::solve(black_box(&problem.data), &problem.metric, &params).unwrap())
    });
}

fn projection(c: &mut Criterion) {
    let mut group = c.benchmark_group("simplex projection");
    for n in [2usize, 8, 16] {
        let v: Vec<f64> = (0..n).map(|i| (i as f64 * 1.3).cos()).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &v, |b, v| b.iter(|| project_simplex(black_box(v))));
    }
    group.finish();
}

fn clustering(c: &mut Criterion) {
    let colors = points(4096, 3, 4);
    let sigs = points(1024, 162, 5);
    c.bench_function("k-means 4096x3 k=4", |b| b.iter(|| kmeans(black_box(&colors), 4, 0).unwrap()));
    c.bench_function("k-medians 1024x162 k=4", |b| b.iter(|| kmedians(black_box(&sigs), 4, 0).unwrap()));
}

fn end_to_end(c: &mut Criterion) {
    let mut group = c.benchmark_group("end to end");
    group.sample_size(10);
    let segmenter = Segmenter::new(SegConfig::supervised()).unwrap();
    let (image, scribbles) = disk_scene(64, 64, 6);
    group.bench_function("supervised 64x64", |b| {
        b.iter(|| segmenter.segment_supervised(black_box(&image), black_box(&scribbles)).unwrap())
    });
    group.finish();
}

criterion_group!(benches, operator, signatures, data_term, solver_iterations, projection, clustering, end_to_end);
criterion_main!(benches);
