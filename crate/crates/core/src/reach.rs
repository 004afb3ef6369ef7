//! Reachability engine: fixed-grid set-valued Euler over-approximation,
//! witness-backed under-approximation, omega-limit estimation, attractor
//! block verification, and trajectory-classification basin estimation.
//!
//! All engines run on an internal grid refined by `ReachConfig::refine`
//! relative to the caller's output grid: the per-step rasterization slop
//! scales with the internal cell radius, so refinement buys tightness
//! without changing the reported resolution. Results are coarsened
//! (outer) back to the output grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{FieldError, VectorFieldSpec};
use crate::flow::{
    default_step, integrate, local_lipschitz, time_t_map, ControlSignal, FlowError,
    INTEGRATION_TOL,
};
use crate::geometry::{
    ball_directions, ball_stencil, contains, inflate, set_distance, Aabb, BitGrid, CellSet,
    GeometryError, GridSpec, NormSpec,
};

#[derive(Debug, Error)]
pub enum ReachError {
    #[error("seed set is empty")]
    EmptySeed,
    #[error("control bound must be nonnegative")]
    NegativeRadius,
    #[error("step violates h*L < 0.5 (h = {h}, L = {l})")]
    StepTooLarge { h: f64, l: f64 },
    #[error("omega limit did not stabilize within {0} iterations")]
    NonStabilized(usize),
    #[error("image escaped the grid box")]
    EscapedGrid,
    #[error("attractor is not forward-invariant at grid scale")]
    NotInvariant,
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// How the per-step Euler image is padded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InflationMode {
    /// Padded by `h*r + L*h*rho + C*h^2 + rho` with `C = L*(sup||f|| + r)`:
    /// an enclosure of the true reachable set, conditional on the
    /// Lipschitz estimate.
    Certified,
    /// Padded by `h*r` only (the control ball): tracks the reachable set
    /// closely but carries no enclosure certificate.
    Nominal,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReachConfig {
    /// Euler step; `None` selects `min(0.01, 0.1/L)`.
    pub h: Option<f64>,
    /// Internal grid refinement factor (1 = compute on the output grid).
    pub refine: usize,
    pub mode: InflationMode,
    /// Control directions sampled for the under-approximation.
    pub directions: usize,
    /// Cap on fixpoint / frontier rounds.
    pub max_iters: usize,
    /// Floor for the under-approximation control margin, as a fraction of
    /// `r`.
    pub margin_floor_frac: f64,
}

impl Default for ReachConfig {
    fn default() -> Self {
        Self {
            h: None,
            refine: 1,
            mode: InflationMode::Certified,
            directions: 16,
            max_iters: 200_000,
            margin_floor_frac: 0.005,
        }
    }
}

/// One step of an under-approximation witness chain: `control` applied for
/// one Euler step from the center of `pred` reaches `cell`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Witness {
    pub cell: u64,
    pub pred: u64,
    pub control: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ReachResult {
    /// Over-approximation of `closure(P_r(seed))` on the output grid
    /// (enclosure only in `Certified` mode, conditional on `l_used`).
    pub over: CellSet,
    /// Cells with an explicit reachability witness, on the output grid.
    pub under: CellSet,
    pub r: f64,
    /// The over-approximation touched the grid box boundary.
    pub escaped_window: bool,
    pub steps_to_fixpoint: usize,
    /// False when iteration stopped at `max_iters` or on window escape.
    pub converged: bool,
    pub certified: bool,
    pub l_used: f64,
    pub h_used: f64,
    /// Control magnitude sacrificed by the under-approximation: witnesses
    /// use `||u|| = r - under_margin`.
    pub under_margin: f64,
    /// Internal grid the witnesses refer to.
    pub fine_grid: GridSpec,
    /// Witness steps for non-seed under cells (fine-grid indices).
    pub witnesses: Vec<Witness>,
}

fn resolve_step(f: &VectorFieldSpec, cfg: &ReachConfig, l: f64) -> Result<f64, ReachError> {
    let h = cfg.h.unwrap_or_else(|| default_step(l));
    if h * l >= 0.5 {
        return Err(ReachError::StepTooLarge { h, l });
    }
    let _ = f;
    Ok(h)
}

struct OverOutcome {
    bits: BitGrid,
    escaped: bool,
    steps: usize,
    converged: bool,
}

/// Iterates the monotone one-step operator
/// `T(Q) = Q ∪ inflate(euler(Q), radius)` to its fixpoint on the fine
/// grid. Deterministic regardless of parallel schedule: each round's
/// additions depend only on the current set.
fn over_engine(
    f: &VectorFieldSpec,
    fine: &GridSpec,
    seed_bits: &BitGrid,
    n: &NormSpec,
    h: f64,
    radius: f64,
    max_iters: usize,
) -> Result<OverOutcome, ReachError> {
    let dim = fine.dim();
    // Candidate offsets: superset of any cell the radius ball around a
    // point in the origin cell can touch. Exact membership is decided per
    // endpoint by point-to-box distance, so the rasterization is as tight
    // as the grid permits (and degenerates to the endpoint's cell at
    // radius 0).
    let stencil = ball_stencil(fine, radius, n, true);
    let counts: Vec<i64> = fine.counts().iter().map(|&c| c as i64).collect();
    let bounds = fine.bounds();
    let mut bits = seed_bits.clone();
    let mut frontier: Vec<u64> = bits.iter_set().collect();
    let mut escaped = false;
    let mut steps = 0usize;
    let mut converged = false;
    while steps < max_iters {
        if frontier.is_empty() {
            converged = true;
            break;
        }
        steps += 1;
        let chunk: Vec<(Vec<u64>, bool)> = frontier
            .par_iter()
            .map(|&c| {
                let x = fine.center_of(c);
                // One RK4 step of the uncontrolled field: same stepper the
                // witness replays use, so the one-step image is accurate to
                // integrator tolerance rather than first order, and the
                // transported boundary of the fixpoint tracks the true flow.
                let y = crate::flow::rk4_once(f, &x, &vec![0.0; dim], h);
                let mut out = Vec::new();
                let mut esc = false;
                for a in 0..dim {
                    if y[a] - radius < bounds.lo()[a] || y[a] + radius > bounds.hi()[a] {
                        // Ball clipped at the window edge is escape
                        // evidence just like an out-of-window endpoint.
                        esc = true;
                    }
                }
                if let Some(target) = fine.locate(&y) {
                    let idx = fine.unravel(target);
                    let mut diff = vec![0.0; dim];
                    'offs: for off in &stencil {
                        let mut lin = 0u64;
                        for a in 0..dim {
                            let t = idx[a] as i64 + off[a];
                            if t < 0 || t >= counts[a] {
                                continue 'offs;
                            }
                            lin += t as u64 * stride(fine, a);
                            let clo = bounds.lo()[a] + t as f64 * fine.delta()[a];
                            let chi = clo + fine.delta()[a];
                            diff[a] = if y[a] < clo {
                                clo - y[a]
                            } else if y[a] > chi {
                                y[a] - chi
                            } else {
                                0.0
                            };
                        }
                        if n.eval(&diff) <= radius + 1e-12 {
                            out.push(lin);
                        }
                    }
                }
                (out, esc)
            })
            .collect();
        let mut next = Vec::new();
        for (targets, esc) in chunk {
            escaped |= esc;
            for t in targets {
                if bits.set(t) {
                    next.push(t);
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        frontier = next;
        if escaped {
            // The window truncates the set; the fixpoint beyond the box is
            // not representable, so stop after the completing round.
            break;
        }
    }
    if steps >= max_iters && !frontier.is_empty() {
        converged = false;
    }
    Ok(OverOutcome {
        bits,
        escaped,
        steps,
        converged,
    })
}

#[inline]
fn stride(grid: &GridSpec, axis: usize) -> u64 {
    grid.strides()[axis]
}

struct UnderOutcome {
    bits: BitGrid,
    witnesses: Vec<Witness>,
    margin: f64,
}

/// Frontier search with constant-control Euler expansions. A cell enters
/// the under-approximation only with a stored witness; the control
/// magnitude is reduced by `margin` so every witness chain satisfies
/// `||g||_inf` strictly below `r`.
fn under_engine(
    f: &VectorFieldSpec,
    fine: &GridSpec,
    seed_bits: &BitGrid,
    r: f64,
    n: &NormSpec,
    h: f64,
    l: f64,
    cfg: &ReachConfig,
) -> Result<UnderOutcome, ReachError> {
    let dim = fine.dim();
    let rho = fine.cell_radius(n);
    let raw_margin = (rho + 2.0 * INTEGRATION_TOL) / h + 2.0 * rho * l;
    let margin = raw_margin.max(cfg.margin_floor_frac * r);
    let amp = (r - margin).max(0.0);
    let dirs: Vec<Vec<f64>> = if amp > 0.0 {
        ball_directions(n, dim, cfg.directions.max(2 * dim))?
    } else {
        // Control budget exhausted by the margin: expand along the
        // uncontrolled forward orbit only.
        vec![vec![0.0; dim]]
    };
    let controls: Vec<Vec<f64>> = dirs
        .iter()
        .map(|d| d.iter().map(|x| x * amp).collect())
        .collect();
    let _ = dim;
    let mut bits = seed_bits.clone();
    let mut witnesses: Vec<Witness> = Vec::new();
    // Expansion chains from the actual entry point of each cell (seeds
    // start at their centers), with one RK4 step per expansion — the same
    // arithmetic `integrate` uses — so replaying a stored witness chain
    // reproduces the claimed cells without accumulating snap-to-center
    // error.
    let mut frontier: Vec<(u64, Vec<f64>)> = bits
        .iter_set()
        .map(|c| (c, fine.center_of(c)))
        .collect();
    let mut rounds = 0usize;
    while !frontier.is_empty() && rounds < cfg.max_iters {
        rounds += 1;
        let mut cands: Vec<(u64, u64, u32, Vec<f64>)> = frontier
            .par_iter()
            .flat_map_iter(|(c, x)| {
                let mut local = Vec::new();
                for (di, u) in controls.iter().enumerate() {
                    let y = crate::flow::rk4_once(f, x, u, h);
                    if !f.domain().contains(&y) {
                        continue;
                    }
                    if let Some(t) = fine.locate(&y) {
                        local.push((t, *c, di as u32, y));
                    }
                }
                local
            })
            .collect();
        // First-writer-wins in a fixed order keeps witnesses deterministic
        // across worker counts.
        cands.sort_unstable_by(|a, b| (a.0, a.1, a.2).cmp(&(b.0, b.1, b.2)));
        let mut next = Vec::new();
        for (t, pred, di, y) in cands {
            if bits.set(t) {
                witnesses.push(Witness {
                    cell: t,
                    pred,
                    control: controls[di as usize].clone(),
                });
                next.push((t, y));
            }
        }
        frontier = next;
    }
    Ok(UnderOutcome {
        bits,
        witnesses,
        margin,
    })
}

fn reach_impl(
    f: &VectorFieldSpec,
    seed: &CellSet,
    r: f64,
    n: &NormSpec,
    cfg: &ReachConfig,
    do_over: bool,
    do_under: bool,
) -> Result<ReachResult, ReachError> {
    if seed.is_empty() {
        return Err(ReachError::EmptySeed);
    }
    if r < 0.0 {
        return Err(ReachError::NegativeRadius);
    }
    let out_grid = seed.grid().clone();
    let fine = out_grid.refined(cfg.refine.max(1));
    let window = out_grid.bounds();
    let l = local_lipschitz(f, &window_in_domain(f, &window)?, n);
    let h = resolve_step(f, cfg, l)?;
    let seed_fine = seed.refined(cfg.refine.max(1));
    let seed_bits = seed_fine.to_bit_grid();
    let rho = fine.cell_radius(n);
    let (radius, certified) = match cfg.mode {
        InflationMode::Certified => {
            let supf = f.sup_norm_on(
                &window_in_domain(f, &window)?,
                n,
                match fine.dim() {
                    1 => 257,
                    2 => 65,
                    _ => 17,
                },
            );
            let c = l * (supf + r);
            (h * r + l * h * rho + c * h * h + rho, true)
        }
        InflationMode::Nominal => (h * r, false),
    };

    let (over_fine, escaped, steps, converged) = if do_over {
        let o = over_engine(f, &fine, &seed_bits, n, h, radius, cfg.max_iters)?;
        (o.bits, o.escaped, o.steps, o.converged)
    } else {
        (seed_bits.clone(), false, 0, true)
    };
    let (under_fine, witnesses, margin) = if do_under {
        let u = under_engine(f, &fine, &seed_bits, r, n, h, l, cfg)?;
        (u.bits, u.witnesses, u.margin)
    } else {
        (seed_bits.clone(), Vec::new(), 0.0)
    };

    let over = over_fine
        .to_cell_set()
        .coarsened(cfg.refine.max(1), &out_grid);
    let under = under_fine
        .to_cell_set()
        .coarsened(cfg.refine.max(1), &out_grid);
    Ok(ReachResult {
        escaped_window: escaped || over.touches_boundary(),
        over,
        under,
        r,
        steps_to_fixpoint: steps,
        converged,
        certified: certified && do_over && converged && !escaped,
        l_used: l,
        h_used: h,
        under_margin: margin,
        fine_grid: fine,
        witnesses,
    })
}

fn window_in_domain(f: &VectorFieldSpec, window: &Aabb) -> Result<Aabb, GeometryError> {
    let lo: Vec<f64> = window
        .lo()
        .iter()
        .zip(f.domain().lo())
        .map(|(&w, &d)| w.max(d))
        .collect();
    let hi: Vec<f64> = window
        .hi()
        .iter()
        .zip(f.domain().hi())
        .map(|(&w, &d)| w.min(d))
        .collect();
    Aabb::new(lo, hi)
}

/// Over- and under-approximation of the reachable set `P_r(seed)` on the
/// seed's grid.
pub fn reach(
    f: &VectorFieldSpec,
    seed: &CellSet,
    r: f64,
    n: &NormSpec,
    cfg: &ReachConfig,
) -> Result<ReachResult, ReachError> {
    reach_impl(f, seed, r, n, cfg, true, true)
}

/// Over-approximation only (`under` is left at the seed's rasterization).
pub fn reach_over(
    f: &VectorFieldSpec,
    seed: &CellSet,
    r: f64,
    n: &NormSpec,
    cfg: &ReachConfig,
) -> Result<ReachResult, ReachError> {
    reach_impl(f, seed, r, n, cfg, true, false)
}

/// Under-approximation only (`over` is left at the seed's rasterization).
pub fn reach_under(
    f: &VectorFieldSpec,
    seed: &CellSet,
    r: f64,
    n: &NormSpec,
    cfg: &ReachConfig,
) -> Result<ReachResult, ReachError> {
    reach_impl(f, seed, r, n, cfg, false, true)
}

/// Witness chain from a seed cell to `cell` (fine-grid indices), in
/// expansion order. `None` when the cell is a seed or was never witnessed.
pub fn witness_chain(result: &ReachResult, cell: u64) -> Option<Vec<Witness>> {
    use std::collections::HashMap;
    let by_cell: HashMap<u64, &Witness> =
        result.witnesses.iter().map(|w| (w.cell, w)).collect();
    let mut chain = Vec::new();
    let mut cur = cell;
    while let Some(w) = by_cell.get(&cur) {
        chain.push((*w).clone());
        cur = w.pred;
        if chain.len() > result.witnesses.len() {
            return None; // cycle guard; witnesses form a forest by construction
        }
    }
    if chain.is_empty() {
        return None;
    }
    chain.reverse();
    Some(chain)
}

/// Replays a witness chain through the RK4 integrator and checks the final
/// state lands in the claimed cell inflated by one cell.
pub fn replay_witness(
    f: &VectorFieldSpec,
    result: &ReachResult,
    cell: u64,
    n: &NormSpec,
) -> Result<bool, ReachError> {
    let chain = match witness_chain(result, cell) {
        Some(c) => c,
        None => return Ok(true), // seed cells hold trivially
    };
    let fine = &result.fine_grid;
    let h = result.h_used;
    let mut x = fine.center_of(chain[0].pred);
    for w in &chain {
        let g = ControlSignal::constant(w.control.clone(), h, *n);
        let traj = integrate(f, &x, &g, h, h)?;
        x = traj.endpoint().to_vec();
    }
    let claimed = CellSet::from_cells(fine.clone(), vec![cell]);
    let ok_zone = inflate(&claimed, fine.cell_diameter(n), n)?;
    Ok(ok_zone.contains_point(&x))
}

/// Omega-limit estimate: iterates the time-`t_probe` map until two
/// successive images coincide, returning the stabilized set.
pub fn omega_limit(
    f: &VectorFieldSpec,
    s: &CellSet,
    t_probe: f64,
    h: f64,
    n: &NormSpec,
    max_iters: usize,
) -> Result<CellSet, ReachError> {
    if s.is_empty() {
        return Err(ReachError::EmptySeed);
    }
    let mut current = s.clone();
    for _ in 0..max_iters {
        let mapped = time_t_map(f, &current, t_probe, h, n)?;
        if mapped.exited_domain {
            return Err(ReachError::EscapedGrid);
        }
        if mapped.set == current {
            return Ok(current);
        }
        current = mapped.set;
    }
    Err(ReachError::NonStabilized(max_iters))
}

#[derive(Debug, Clone)]
pub struct BlockReport {
    pub block: CellSet,
    pub is_block: bool,
    /// Minimum clearance between the probe image and the complement of the
    /// block (state units; certified lower bound).
    pub margin: f64,
    pub probe_time: f64,
    pub l_used: f64,
}

/// Attractor-block check: the time-`t_probe` image (and its images for two
/// further probes) must land in the interior of `b` with positive
/// clearance. A single probe time plus chain invariance stands in for
/// "all t > 0": a boundary crossing shows up at small times, and the
/// margin quantifies how robustly it is excluded.
///
/// Probes run on a 2x-refined grid: the per-step rasterization halo of the
/// time map scales with the cell radius, so refining the probe grid halves
/// the spurious outward creep of the image without touching the block
/// itself. Containment and margin are still judged against `b` at its own
/// resolution (the image is coarsened outward before the tests).
pub fn check_attractor_block(
    f: &VectorFieldSpec,
    b: &CellSet,
    t_probe: f64,
    h: f64,
    n: &NormSpec,
) -> Result<BlockReport, ReachError> {
    if b.is_empty() {
        return Err(ReachError::EmptySeed);
    }
    const PROBE_REFINE: usize = 2;
    let interior = b.interior();
    let complement = b.complement_within_box();
    let mut is_block = true;
    let mut margin = f64::INFINITY;
    let mut l_used: f64 = 0.0;
    let mut current = b.refined(PROBE_REFINE);
    for _ in 0..3 {
        let mapped = time_t_map(f, &current, t_probe, h, n)?;
        if mapped.exited_domain || mapped.set.touches_boundary() {
            return Err(ReachError::EscapedGrid);
        }
        l_used = l_used.max(mapped.l_used);
        let coarse = mapped.set.coarsened(PROBE_REFINE, b.grid());
        if interior.is_empty() || !contains(&interior, &coarse)? {
            is_block = false;
            margin = 0.0;
            break;
        }
        let m = if complement.is_empty() {
            0.0
        } else {
            set_distance(&coarse, &complement, n)?
        };
        margin = margin.min(m);
        current = mapped.set;
    }
    if !(margin > 0.0) {
        is_block = false;
    }
    Ok(BlockReport {
        block: b.clone(),
        is_block,
        margin: if margin.is_finite() { margin } else { 0.0 },
        probe_time: t_probe,
        l_used,
    })
}

/// Basin-of-attraction estimate by trajectory classification: a cell is
/// in-basin when its uncontrolled trajectory enters the `eps`-neighborhood
/// of the attractor within `t_max` without leaving the window. A
/// heuristic under-approximation — NOT certified; downstream consumers
/// treat it as a user-confirmable input.
pub fn estimate_basin(
    f: &VectorFieldSpec,
    attractor: &CellSet,
    grid: &GridSpec,
    t_max: f64,
    eps: f64,
    h: f64,
    n: &NormSpec,
) -> Result<CellSet, ReachError> {
    if attractor.is_empty() {
        return Err(ReachError::EmptySeed);
    }
    // Forward invariance of the attractor at grid scale: its short-time
    // image must stay inside the eps-neighborhood.
    let zone = inflate(attractor, eps, n)?;
    let probe = time_t_map(f, attractor, (0.5f64).min(t_max), h, n)?;
    if !contains(&zone, &probe.set)? {
        return Err(ReachError::NotInvariant);
    }
    let window = grid.bounds();
    let dim = grid.dim();
    let total = grid.total_cells();
    let flags: Vec<Option<u64>> = (0..total)
        .into_par_iter()
        .map(|lin| {
            let x0 = grid.center_of(lin);
            if !f.domain().contains(&x0) {
                return None;
            }
            let g = ControlSignal::zero(dim, t_max, *n);
            let traj = match integrate(f, &x0, &g, t_max, h) {
                Ok(t) => t,
                Err(_) => return None,
            };
            for s in &traj.states {
                if !window.contains(s) {
                    return None;
                }
                if zone.contains_point(s) {
                    return Some(lin);
                }
            }
            None
        })
        .collect();
    let cells: Vec<u64> = flags.into_iter().flatten().collect();
    Ok(CellSet::from_cells(grid.clone(), cells))
}
