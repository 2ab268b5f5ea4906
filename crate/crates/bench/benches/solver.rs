use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use npr_bench::bench_graph;
use npr_core::testing::random_vector;
use npr_core::{
    appr_push, min_norm_p2_init, sweep_cut, ApprConfig, LaplacianSolver, LmOptions, NprConfig,
    NprProblem,
};

fn problem(g: &npr_core::Graph) -> NprProblem<'_> {
    let cfg = NprConfig::new(0);
    NprProblem::from_config(g, &cfg).expect("bench graph fits the dense path")
}

fn bench_jacobian(c: &mut Criterion) {
    let mut group = c.benchmark_group("jacobian");
    group.sample_size(20);
    for n in [50, 100, 200] {
        let g = bench_graph(n);
        let prob = problem(&g);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = random_vector(n, &mut rng);
        // First call fills the pseudoinverse cache; the loop measures the
        // per-iteration assembly cost.
        black_box(prob.jacobian(&x, 1.6).expect("graph fits dense path"));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| prob.jacobian(black_box(&x), 1.6).expect("graph fits dense path"))
        });
    }
    group.finish();
}

fn bench_lm_stage(c: &mut Criterion) {
    let mut group = c.benchmark_group("lm_stage_3_iters");
    group.sample_size(10);
    for n in [50, 100] {
        let g = bench_graph(n);
        let prob = problem(&g);
        let x0 = min_norm_p2_init(&g, prob.beta(), prob.rhs(), 2000).expect("init solves");
        let mut opts = LmOptions::from(&NprConfig::new(0));
        opts.max_iters = 3;
        opts.grad_tol = 0.0;
        opts.step_tol = 0.0;
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| prob.lm_solve(&opts, 1.6, black_box(&x0)).expect("stage runs"))
        });
    }
    group.finish();
}

fn bench_laplacian_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("laplacian");
    group.sample_size(30);
    let g = bench_graph(1000);
    group.bench_function("factor_1000", |b| {
        b.iter(|| LaplacianSolver::new(black_box(&g)).expect("connected graph factors"))
    });
    let solver = LaplacianSolver::new(&g).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut y = random_vector(g.n(), &mut rng);
    let mean = y.sum() / g.n() as f64;
    y.apply(|v| *v -= mean);
    group.bench_function("solve_1000", |b| b.iter(|| solver.solve_mean_zero(black_box(&y))));
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let mut group = c.benchmark_group("sweep_cut");
    for n in [1_000, 10_000] {
        let g = bench_graph(n);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_vector(n, &mut rng);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| sweep_cut(black_box(&g), black_box(&x)))
        });
    }
    group.finish();
}

fn bench_appr(c: &mut Criterion) {
    let mut group = c.benchmark_group("appr_push");
    for n in [1_000, 10_000] {
        let g = bench_graph(n);
        let cfg = ApprConfig::new(0);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| appr_push(black_box(&g), &cfg).expect("valid config"))
        });
    }
    group.finish();
}

criterion_group!(
    benches,
    bench_jacobian,
    bench_lm_stage,
    bench_laplacian_solve,
    bench_sweep,
    bench_appr
);
criterion_main!(benches);
