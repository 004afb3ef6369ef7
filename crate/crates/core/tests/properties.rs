//! Cross-module property suites: norm axioms, inflation monotonicity,
//! Gronwall domination, random-control soundness of the over-approximation,
//! determinism across worker counts, seed independence, shrinkage toward the
//! attractor, and consistency between the 1D intensity, the bisection
//! bracket, and the discontinuity scan.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ioa_core::field::catalog::builtin;
use ioa_core::field::VectorFieldSpec;
use ioa_core::flow::{gronwall_bound, integrate, ControlSignal};
use ioa_core::geometry::{contains, inflate, Aabb, CellSet, GridSpec, NormSpec};
use ioa_core::intensity::{discontinuity_scan, intensity_1d, intensity_bisect};
use ioa_core::reach::{omega_limit, reach, reach_over, InflationMode, ReachConfig};

fn params(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries
        .iter()
        .map(|(k, v)| (k.to_string(), *v))
        .collect()
}

fn nominal(h: f64, refine: usize) -> ReachConfig {
    ReachConfig {
        h: Some(h),
        refine,
        mode: InflationMode::Nominal,
        ..ReachConfig::default()
    }
}

fn certified(h: f64, refine: usize) -> ReachConfig {
    ReachConfig {
        h: Some(h),
        refine,
        mode: InflationMode::Certified,
        ..ReachConfig::default()
    }
}

// ---------------------------------------------------------------------------
// Norm axioms
// ---------------------------------------------------------------------------

#[test]
fn norm_axioms_hold_on_random_vectors() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xa11ce);
    let orders = [1.0, 1.5, 2.0, 4.0, f64::INFINITY];
    for &p in &orders {
        let n = NormSpec::new(p).unwrap();
        for _ in 0..10_000 {
            let a: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let b: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let c: f64 = rng.gen_range(-3.0..3.0);

            let na = n.eval(&a);
            assert!(na >= 0.0);
            if a.iter().any(|&x| x != 0.0) {
                assert!(na > 0.0, "definiteness failed for p={p}");
            }

            let ca: Vec<f64> = a.iter().map(|x| c * x).collect();
            assert!(
                (n.eval(&ca) - c.abs() * na).abs() <= 1e-9 * (1.0 + na),
                "homogeneity failed for p={p}"
            );

            let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
            assert!(
                n.eval(&sum) <= na + n.eval(&b) + 1e-9,
                "triangle inequality failed for p={p}"
            );
        }
    }
}

// ---------------------------------------------------------------------------
// Inflation
// ---------------------------------------------------------------------------

#[test]
fn inflate_is_monotone_and_subadditive() {
    let window = Aabb::new(vec![-2.0, -2.0], vec![2.0, 2.0]).unwrap();
    let grid = GridSpec::uniform(&window, 0.05).unwrap();
    let seed = CellSet::from_box(
        grid,
        &Aabb::new(vec![-0.3, -0.1], vec![0.4, 0.2]).unwrap(),
    );
    let n = NormSpec::l2();
    let small = inflate(&seed, 0.2, &n).unwrap();
    let large = inflate(&seed, 0.5, &n).unwrap();
    assert!(contains(&small, &seed).unwrap(), "inflation keeps the set");
    assert!(contains(&large, &small).unwrap(), "monotone in radius");

    // Two-step inflation is sandwiched by single-step inflations whose radii
    // account for the rasterization slack of the intermediate step.
    let two_step = inflate(&small, 0.3, &n).unwrap();
    let slack = seed_cell_diameter(&seed, &n);
    let upper = inflate(&seed, 0.5 + 2.0 * slack, &n).unwrap();
    assert!(contains(&two_step, &large).unwrap());
    assert!(contains(&upper, &two_step).unwrap());
}

fn seed_cell_diameter(s: &CellSet, n: &NormSpec) -> f64 {
    s.grid().cell_diameter(n)
}

// ---------------------------------------------------------------------------
// Gronwall domination
// ---------------------------------------------------------------------------

fn random_signal(rng: &mut ChaCha8Rng, r: f64, horizon: f64, n: &NormSpec) -> ControlSignal {
    let pieces = rng.gen_range(1..=5usize);
    let mut cuts: Vec<f64> = (0..pieces - 1)
        .map(|_| rng.gen_range(0.0..horizon))
        .collect();
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    let mut breakpoints = vec![0.0];
    breakpoints.extend(cuts);
    breakpoints.push(horizon);
    breakpoints.dedup_by(|a, b| (*a - *b).abs() < 1e-12);
    let values: Vec<Vec<f64>> = (0..breakpoints.len() - 1)
        .map(|_| vec![rng.gen_range(-r..=r)])
        .collect();
    ControlSignal::piecewise(breakpoints, values, n.clone()).unwrap()
}

#[test]
fn gronwall_bound_dominates_measured_endpoint_gap() {
    let f = builtin("linear1d", &params(&[("lambda", 1.0)])).unwrap();
    let n = NormSpec::max();
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a0b);
    let horizon = 2.0;
    for _ in 0..200 {
        let g = random_signal(&mut rng, 0.4, horizon, &n);
        let gh = random_signal(&mut rng, 0.4, horizon, &n);
        let gap = g.sup_distance(&gh);
        let x0 = [rng.gen_range(-0.5..0.5)];
        let a = integrate(&f, &x0, &g, horizon, 0.005).unwrap();
        let b = integrate(&f, &x0, &gh, horizon, 0.005).unwrap();
        let measured = (a.endpoint()[0] - b.endpoint()[0]).abs();
        let bound = gronwall_bound(1.0, horizon, gap);
        assert!(
            measured <= bound + 1e-6,
            "measured {measured} exceeds bound {bound} (gap {gap})"
        );
    }
}

// ---------------------------------------------------------------------------
// Random-control soundness of the over-approximation
// ---------------------------------------------------------------------------

#[test]
fn certified_over_approximation_contains_random_control_endpoints() {
    let f = builtin("linear1d", &params(&[("lambda", 1.0)])).unwrap();
    let n = NormSpec::max();
    let window = Aabb::new(vec![-2.0], vec![2.0]).unwrap();
    let grid = GridSpec::uniform(&window, 0.02).unwrap();
    let seed = CellSet::from_points(grid, &[vec![0.0]]);
    let r = 0.3;
    let res = reach_over(&f, &seed, r, &n, &certified(0.01, 2)).unwrap();
    assert!(res.certified && !res.escaped_window);

    use rayon::prelude::*;
    let failures: usize = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(0xc0ffee ^ i);
            let horizon = rng.gen_range(1.0..6.0);
            let g = random_signal(&mut rng, r, horizon, &n);
            let traj = integrate(&f, &[0.0], &g, horizon, 0.005).unwrap();
            usize::from(!res.over.contains_point(traj.endpoint()))
        })
        .sum();
    assert_eq!(failures, 0, "{failures} of 1000 endpoints escaped the over-approximation");
}

// ---------------------------------------------------------------------------
// Determinism across worker counts
// ---------------------------------------------------------------------------

fn cubic_setup() -> (VectorFieldSpec, CellSet, NormSpec, ReachConfig) {
    let f = builtin("cubic_sva", &BTreeMap::new()).unwrap();
    let window = Aabb::new(vec![-1.0], vec![3.0]).unwrap();
    let grid = GridSpec::uniform(&window, 0.02).unwrap();
    let seed = CellSet::from_points(grid, &[vec![1.0]]);
    (f, seed, NormSpec::max(), nominal(0.03, 2))
}

#[test]
fn reach_is_identical_across_worker_counts() {
    let (f, seed, n, cfg) = cubic_setup();
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| reach(&f, &seed, 0.5, &n, &cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert_eq!(one.over.cells(), four.over.cells());
    assert_eq!(one.under.cells(), four.under.cells());
    assert_eq!(one.steps_to_fixpoint, four.steps_to_fixpoint);
    // And repeat runs in the same pool are byte-identical.
    let again = run(4);
    assert_eq!(four.over.cells(), again.over.cells());
    assert_eq!(four.under.cells(), again.under.cells());
}

// ---------------------------------------------------------------------------
// Seed independence on the cubic interval attractor
// ---------------------------------------------------------------------------

#[test]
fn cubic_reach_fixpoint_is_seed_independent_and_covers_the_interval() {
    let f = builtin("cubic_sva", &BTreeMap::new()).unwrap();
    let window = Aabb::new(vec![-1.0], vec![3.0]).unwrap();
    let grid = GridSpec::uniform(&window, 0.02).unwrap();
    let n = NormSpec::max();
    // refine 4 keeps the per-step cell-snap loss (cell radius / h) below the
    // clearance over the hump between the two wells, so every seed's front
    // crosses it.
    let cfg = nominal(0.03, 4);
    let seeds = [
        CellSet::from_points(grid.clone(), &[vec![0.1]]),
        CellSet::from_points(grid.clone(), &[vec![1.0]]),
        CellSet::from_box(grid, &Aabb::new(vec![0.0], vec![2.0]).unwrap()),
    ];
    let results: Vec<CellSet> = seeds
        .iter()
        .map(|s| reach_over(&f, s, 0.5, &n, &cfg).unwrap().over)
        .collect();
    assert_eq!(results[0].cells(), results[1].cells());
    assert_eq!(results[1].cells(), results[2].cells());

    // The block's omega limit recovers the full interval attractor [0, 2].
    let block = &results[0];
    let omega = omega_limit(&f, block, 0.5, 0.01, &n, 500).unwrap();
    let bb = omega.bounding_box().unwrap();
    assert!(bb.lo()[0] <= 0.05, "omega lo {}", bb.lo()[0]);
    assert!(bb.hi()[0] >= 1.95, "omega hi {}", bb.hi()[0]);
}

// ---------------------------------------------------------------------------
// Shrinkage toward the attractor as r halves
// ---------------------------------------------------------------------------

#[test]
fn reach_shrinks_nestedly_toward_the_attractor_as_r_halves() {
    let f = builtin("logistic_shift", &BTreeMap::new()).unwrap();
    let window = Aabb::new(vec![-0.6], vec![3.0]).unwrap();
    let grid = GridSpec::uniform(&window, 0.01).unwrap();
    let seed = CellSet::from_points(grid, &[vec![1.0]]);
    let n = NormSpec::max();
    let cfg = nominal(0.05, 2);
    let mut r = 0.2;
    let mut prev = reach_over(&f, &seed, r, &n, &cfg).unwrap().over;
    let mut prev_width = width(&prev);
    for _ in 0..4 {
        r *= 0.5;
        let cur = reach_over(&f, &seed, r, &n, &cfg).unwrap().over;
        assert!(contains(&prev, &cur).unwrap(), "not nested at r = {r}");
        let w = width(&cur);
        assert!(w <= prev_width, "width grew at r = {r}");
        prev = cur;
        prev_width = w;
    }
    // After four halvings the set is a small neighborhood of the sink.
    let bb = prev.bounding_box().unwrap();
    assert!(bb.lo()[0] > 0.9 && bb.hi()[0] < 1.1, "final set {bb:?}");
}

fn width(s: &CellSet) -> f64 {
    let bb = s.bounding_box().unwrap();
    bb.hi()[0] - bb.lo()[0]
}

// ---------------------------------------------------------------------------
// 1D intensity vs bisection bracket vs scan
// ---------------------------------------------------------------------------

#[test]
fn exact_intensity_lies_inside_bisect_bracket_at_fine_resolution() {
    let f = builtin("logistic_shift", &BTreeMap::new()).unwrap();
    let exact = intensity_1d(&f, 1.0, Some(0.0), None).unwrap().mu;

    let window = Aabb::new(vec![-0.6], vec![3.0]).unwrap();
    let grid = GridSpec::uniform(&window, 1e-3).unwrap();
    let seed = CellSet::from_points(grid.clone(), &[vec![1.0]]);
    let target = CellSet::from_box(grid, &Aabb::new(vec![0.05], vec![2.2]).unwrap());
    let n = NormSpec::max();
    let bracket = intensity_bisect(
        &f,
        &seed,
        &target,
        0.6,
        0.01,
        &n,
        &certified(0.002, 1),
        Some(&certified(0.08, 1)),
    )
    .unwrap();
    assert!(
        bracket.lo <= exact && exact <= bracket.hi,
        "bracket [{}, {}] misses exact {}",
        bracket.lo,
        bracket.hi,
        exact
    );
    assert!(bracket.lo > 0.0);
}

#[test]
fn scan_escape_radius_brackets_the_bisect_result() {
    let f = builtin("logistic_shift", &BTreeMap::new()).unwrap();
    let window = Aabb::new(vec![-0.6], vec![3.0]).unwrap();
    let grid = GridSpec::uniform(&window, 0.01).unwrap();
    let seed = CellSet::from_points(grid.clone(), &[vec![1.0]]);
    let target = CellSet::from_box(grid.clone(), &Aabb::new(vec![0.05], vec![2.2]).unwrap());
    let n = NormSpec::max();
    let bracket = intensity_bisect(
        &f,
        &seed,
        &target,
        0.6,
        0.02,
        &n,
        &certified(0.002, 1),
        Some(&certified(0.08, 1)),
    )
    .unwrap();

    let scan_seed = CellSet::from_points(grid, &[vec![1.0]]);
    let rs: Vec<f64> = (1..=12).map(|k| 0.05 * k as f64).collect();
    let points =
        discontinuity_scan(&f, &scan_seed, &rs, &n, &nominal(0.08, 4), None).unwrap();
    let first_escape = points.iter().find(|p| p.escaped).map(|p| p.r).unwrap();
    let last_safe = points
        .iter()
        .filter(|p| !p.escaped)
        .map(|p| p.r)
        .fold(0.0f64, f64::max);
    assert!(
        first_escape >= bracket.lo,
        "escape at {} below verified-feasible {}",
        first_escape,
        bracket.lo
    );
    assert!(
        last_safe <= bracket.hi,
        "no escape at {} above verified-infeasible {}",
        last_safe,
        bracket.hi
    );
}

// ---------------------------------------------------------------------------
// Positivity of the intensity across the builtin catalog
// ---------------------------------------------------------------------------

struct PositivityCase {
    name: &'static str,
    params: Vec<(&'static str, f64)>,
    window: (Vec<f64>, Vec<f64>),
    seed: Vec<f64>,
    target: (Vec<f64>, Vec<f64>),
    delta: f64,
    r_max: f64,
    h: f64,
}

#[test]
fn intensity_is_positive_for_every_catalog_attractor() {
    let cases = vec![
        PositivityCase {
            name: "linear1d",
            params: vec![("lambda", 1.0)],
            window: (vec![-2.0], vec![2.0]),
            seed: vec![0.0],
            target: (vec![-1.8], vec![1.8]),
            delta: 0.02,
            r_max: 1.2,
            h: 0.1,
        },
        PositivityCase {
            name: "logistic_shift",
            params: vec![],
            window: (vec![-0.6], vec![3.0]),
            seed: vec![1.0],
            target: (vec![0.05], vec![2.2]),
            delta: 0.01,
            r_max: 0.6,
            h: 0.08,
        },
        PositivityCase {
            name: "logistic_c",
            params: vec![("c", 2.0)],
            window: (vec![-0.6], vec![3.0]),
            seed: vec![1.0],
            target: (vec![0.05], vec![2.2]),
            delta: 0.01,
            r_max: 1.0,
            h: 0.03,
        },
        PositivityCase {
            name: "sine_piecewise",
            params: vec![],
            window: (vec![0.02], vec![2.5]),
            seed: vec![1.0],
            target: (vec![0.05], vec![2.2]),
            delta: 0.01,
            r_max: 0.8,
            h: 0.1,
        },
        PositivityCase {
            name: "cubic_sva",
            params: vec![],
            window: (vec![-1.0], vec![3.0]),
            seed: vec![1.0],
            target: (vec![-0.8], vec![2.8]),
            delta: 0.02,
            r_max: 2.0,
            h: 0.03,
        },
        PositivityCase {
            name: "quartic_ck",
            params: vec![],
            window: (vec![-3.0], vec![0.5]),
            seed: vec![-1.62],
            target: (vec![-2.8], vec![0.3]),
            delta: 0.02,
            r_max: 3.0,
            h: 0.004,
        },
        PositivityCase {
            name: "diag2d",
            params: vec![],
            window: (vec![-1.0, -1.0], vec![1.0, 1.0]),
            seed: vec![0.0, 0.0],
            target: (vec![-0.9, -0.9], vec![0.9, 0.9]),
            delta: 0.05,
            r_max: 1.0,
            h: 0.1,
        },
        PositivityCase {
            name: "uv",
            params: vec![],
            window: (vec![-0.8, -0.8], vec![0.8, 0.8]),
            seed: vec![0.0, 0.0],
            target: (vec![-0.7, -0.7], vec![0.7, 0.7]),
            delta: 0.05,
            r_max: 0.4,
            h: 0.1,
        },
        PositivityCase {
            name: "saddle_node_rot",
            params: vec![],
            window: (vec![-0.8, -0.8], vec![0.8, 0.8]),
            seed: vec![0.0, 0.0],
            target: (vec![-0.7, -0.7], vec![0.7, 0.7]),
            delta: 0.05,
            r_max: 0.4,
            h: 0.05,
        },
    ];
    let n = NormSpec::max();
    for case in cases {
        let f = builtin(case.name, &params(&case.params)).unwrap();
        let window = Aabb::new(case.window.0.clone(), case.window.1.clone()).unwrap();
        let grid = GridSpec::uniform(&window, case.delta).unwrap();
        let seed = CellSet::from_points(grid.clone(), &[case.seed.clone()]);
        let target = CellSet::from_box(
            grid,
            &Aabb::new(case.target.0.clone(), case.target.1.clone()).unwrap(),
        );
        let bracket = intensity_bisect(
            &f,
            &seed,
            &target,
            case.r_max,
            case.r_max / 8.0,
            &n,
            &nominal(case.h, 2),
            None,
        )
        .unwrap_or_else(|e| panic!("{}: {e}", case.name));
        assert!(
            bracket.lo > 0.0,
            "{}: intensity lower bound is not positive (lo = {}, hi = {})",
            case.name,
            bracket.lo,
            bracket.hi
        );
    }
}
