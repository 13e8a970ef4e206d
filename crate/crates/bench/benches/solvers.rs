use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sfl_bench::{bump, square};
use sfl_core::{DstPlan, EvolutionParams, EvolutionSolver, RhsMode, SchemeKind, SteadyParams, SteadySolver};

const SIZES: [usize; 3] = [64, 128, 256];

fn bench_dst(c: &mut Criterion) {
    let mut group = c.benchmark_group("dst_2d");
    for n in SIZES {
        let grid = square(n);
        let plan = DstPlan::for_grid(&grid).unwrap();
        let u = bump(&grid);
        group.bench_with_input(BenchmarkId::from_parameter(n), &u, |b, u| {
            b.iter(|| plan.forward(black_box(u)).unwrap())
        });
    }
    group.finish();
}

fn bench_steady(c: &mut Criterion) {
    let mut group = c.benchmark_group("steady_solve");
    for kind in [SchemeKind::Fem, SchemeKind::Cdm4] {
        for n in SIZES {
            let grid = square(n);
            let params = SteadyParams { kind, s: 0.5, gamma: 1.0, kappa: 1.0, rhs_mode: RhsMode::Nodal };
            let solver = SteadySolver::new(&grid, params).unwrap();
            let rhs = bump(&grid);
            group.bench_with_input(BenchmarkId::new(kind.name(), n), &rhs, |b, rhs| {
                b.iter(|| solver.solve(black_box(rhs)).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_evolution(c: &mut Criterion) {
    let mut group = c.benchmark_group("evolution_step");
    group.sample_size(20);
    for n in SIZES {
        let grid = square(n);
        let params = EvolutionParams {
            kind: SchemeKind::Cdm4,
            s: 0.5,
            gamma: 0.0,
            kappa: 1.0,
            alpha: 0.5,
            dt: 1e-3,
            t_final: 1e3,
            rhs_mode: RhsMode::Nodal,
        };
        let mut solver = EvolutionSolver::new(&grid, params, bump(&grid)).unwrap();
        let rhs = bump(&grid);
        group.bench_function(BenchmarkId::from_parameter(n), |b| {
            b.iter(|| {
                solver.step(black_box(&rhs)).unwrap();
            })
        });
    }
    group.finish();
}

criterion_group!(benches, bench_dst, bench_steady, bench_evolution);
criterion_main!(benches);
