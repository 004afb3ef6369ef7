//! Benchmarks for the hot paths: the over-approximation fixpoint, the
//! witness-backed under-approximation, and the exact 1-D intensity.
//!
//! Workloads are deliberately small (sub-second) so the suite stays
//! desk-scale; they exercise the same engines as the full criteria.

use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, Criterion};

use ioa_core::field::builtin;
use ioa_core::geometry::{Aabb, CellSet, GridSpec, NormSpec};
use ioa_core::intensity::intensity_1d;
use ioa_core::reach::{reach_over, reach_under, InflationMode, ReachConfig};

fn grid1(lo: f64, hi: f64, delta: f64) -> GridSpec {
    GridSpec::uniform(&Aabb::new(vec![lo], vec![hi]).unwrap(), delta).unwrap()
}

fn bench_over_1d(c: &mut Criterion) {
    let f = builtin("logistic_shift", &BTreeMap::new()).unwrap();
    let grid = grid1(-0.5, 2.5, 1e-3);
    let seed = CellSet::from_points(grid.clone(), &[vec![1.0]]);
    let n = NormSpec::max();
    let cfg = ReachConfig {
        h: Some(0.05),
        refine: 2,
        mode: InflationMode::Nominal,
        ..ReachConfig::default()
    };
    c.bench_function("over_fixpoint_1d_logistic", |b| {
        b.iter(|| reach_over(&f, &seed, 0.15, &n, &cfg).unwrap())
    });
}

fn bench_over_2d_certified(c: &mut Criterion) {
    let f = builtin("diag2d", &BTreeMap::new()).unwrap();
    let grid = GridSpec::uniform(
        &Aabb::new(vec![-1.2, -0.7], vec![1.2, 0.7]).unwrap(),
        2e-2,
    )
    .unwrap();
    let seed = CellSet::from_points(grid.clone(), &[vec![0.0, 0.0]]);
    let n = NormSpec::l2();
    let cfg = ReachConfig {
        h: Some(0.02),
        refine: 2,
        mode: InflationMode::Certified,
        ..ReachConfig::default()
    };
    c.bench_function("over_fixpoint_2d_certified", |b| {
        b.iter(|| reach_over(&f, &seed, 0.2, &n, &cfg).unwrap())
    });
}

fn bench_under_1d(c: &mut Criterion) {
    let f = builtin("logistic_shift", &BTreeMap::new()).unwrap();
    let grid = grid1(-0.5, 2.5, 1e-3);
    let seed = CellSet::from_points(grid.clone(), &[vec![1.0]]);
    let n = NormSpec::max();
    let cfg = ReachConfig {
        h: Some(0.05),
        refine: 2,
        mode: InflationMode::Nominal,
        ..ReachConfig::default()
    };
    c.bench_function("under_witness_1d_logistic", |b| {
        b.iter(|| reach_under(&f, &seed, 0.15, &n, &cfg).unwrap())
    });
}

fn bench_intensity_1d(c: &mut Criterion) {
    let f = builtin("logistic_shift", &BTreeMap::new()).unwrap();
    c.bench_function("intensity_1d_logistic", |b| {
        b.iter(|| intensity_1d(&f, 1.0, Some(0.0), None).unwrap())
    });
}

criterion_group!(
    benches,
    bench_over_1d,
    bench_over_2d_certified,
    bench_under_1d,
    bench_intensity_1d
);
criterion_main!(benches);
