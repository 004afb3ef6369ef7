//! Subcommand dispatch: builds fields, grids, and engine configurations
//! from a [`RunConfig`], runs the requested computation, and emits the
//! artifacts plus a manifest.
//!
//! Exit policy: `0` on success, `2` when a precondition is refused (bad
//! config, non-sink attractor, oversized perturbation, step-size violation,
//! ...), `3` when a computation ran but did not converge (iteration budget,
//! window escape). Refusals print a single machine-parsable line
//! `ioa: refused: <reason>`; non-convergence prints
//! `ioa: non-convergence: <reason>`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use thiserror::Error;

use ioa_core::continuation::{
    persistent_block, semicontinuity_probe, ContinuationError, ProbeSpec,
};
use ioa_core::field::{builtin, parse_field, sup_norm_distance, FieldError, VectorFieldSpec};
use ioa_core::flow::FlowError;
use ioa_core::geometry::{Aabb, CellSet, GeometryError, GridSpec, NormSpec};
use ioa_core::intensity::{
    discontinuity_scan, intensity_1d, intensity_bisect, IntensityError,
};
use ioa_core::reach::{estimate_basin, reach, InflationMode, ReachConfig, ReachError};

use crate::artifacts::{ContinueReport, Emitter, IntensityReport, ReachReport};
use crate::config::{ConfigError, RunConfig};
use crate::suite;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{0}")]
    Refused(String),
    #[error("{0}")]
    NonConvergence(String),
    #[error("suite reported {failed} failing criteria")]
    SuiteFailed { failed: usize },
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Refused(_) => 2,
            RunError::NonConvergence(_) => 3,
            RunError::SuiteFailed { .. } => 1,
        }
    }

    /// The one-line machine-parsable form printed to stderr.
    pub fn banner(&self) -> String {
        match self {
            RunError::Refused(m) => format!("ioa: refused: {}", m.replace('\n', " ")),
            RunError::NonConvergence(m) => {
                format!("ioa: non-convergence: {}", m.replace('\n', " "))
            }
            RunError::SuiteFailed { failed } => {
                format!("ioa: suite-failed: {failed} criteria failed")
            }
        }
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Refused(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Refused(format!("io error: {e}"))
    }
}

impl From<FieldError> for RunError {
    fn from(e: FieldError) -> Self {
        RunError::Refused(e.to_string())
    }
}

impl From<GeometryError> for RunError {
    fn from(e: GeometryError) -> Self {
        RunError::Refused(e.to_string())
    }
}

impl From<ReachError> for RunError {
    fn from(e: ReachError) -> Self {
        match &e {
            ReachError::NonStabilized(_) | ReachError::EscapedGrid => {
                RunError::NonConvergence(e.to_string())
            }
            ReachError::Flow(FlowError::Blowup(_)) | ReachError::Flow(FlowError::EscapedGrid) => {
                RunError::NonConvergence(e.to_string())
            }
            _ => RunError::Refused(e.to_string()),
        }
    }
}

impl From<IntensityError> for RunError {
    fn from(e: IntensityError) -> Self {
        match e {
            IntensityError::Reach(inner) => inner.into(),
            other => RunError::Refused(other.to_string()),
        }
    }
}

impl From<ContinuationError> for RunError {
    fn from(e: ContinuationError) -> Self {
        match e {
            ContinuationError::BlockEscaped { .. }
            | ContinuationError::BlockNotConverged { .. }
            | ContinuationError::NoFeasibleRadius { .. } => {
                RunError::NonConvergence(e.to_string())
            }
            ContinuationError::Reach(inner) => inner.into(),
            other => RunError::Refused(other.to_string()),
        }
    }
}

// ---------------------------------------------------------------------------
// Config -> engine inputs
// ---------------------------------------------------------------------------

/// Builds a vector field from a config section: either `name` (catalog,
/// parameters from `[params]`), or `expr` (`;`-separated components) with
/// `dim`, or `file` containing one component expression per line.
pub fn build_field(cfg: &RunConfig, section: &str) -> Result<VectorFieldSpec, RunError> {
    let params: BTreeMap<String, f64> = cfg.section_f64(&format!("{section}_params"))?;
    let mut field = if let Some(name) = cfg.get(section, "name") {
        builtin(name, &params)?
    } else if let Some(expr) = cfg.get(section, "expr") {
        let dim = cfg
            .get_usize(section, "dim")?
            .ok_or_else(|| RunError::Refused(format!("[{section}] expr requires dim")))?;
        parse_field(&expr.replace(';', "\n"), dim, params)?
    } else if let Some(path) = cfg.get(section, "file") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Refused(format!("cannot read field file {path}: {e}")))?;
        let dim = cfg
            .get_usize(section, "dim")?
            .unwrap_or_else(|| text.lines().filter(|l| !l.trim().is_empty()).count());
        parse_field(&text, dim, params)?
    } else {
        return Err(RunError::Refused(format!(
            "[{section}] needs one of name, expr, or file"
        )));
    };
    if let (Some(lo), Some(hi)) = (
        cfg.get_vec_f64(section, "domain_lo")?,
        cfg.get_vec_f64(section, "domain_hi")?,
    ) {
        field = field.with_domain(Aabb::new(lo, hi)?);
    }
    if let Some(l) = cfg.get_f64(section, "lipschitz")? {
        field = field.with_lipschitz_hint(l);
    }
    Ok(field)
}

pub fn build_grid(cfg: &RunConfig) -> Result<GridSpec, RunError> {
    let lo = cfg.require_vec_f64("grid", "lo")?;
    let hi = cfg.require_vec_f64("grid", "hi")?;
    let bounds = Aabb::new(lo, hi)?;
    let delta = cfg.require_vec_f64("grid", "delta")?;
    let grid = if delta.len() == 1 {
        GridSpec::uniform(&bounds, delta[0])?
    } else {
        GridSpec::new(&bounds, &delta)?
    };
    Ok(grid)
}

pub fn build_norm(cfg: &RunConfig) -> Result<NormSpec, RunError> {
    match cfg.get("run", "p") {
        None => Ok(NormSpec::max()),
        Some("inf") | Some("infinity") => Ok(NormSpec::max()),
        Some(v) => {
            let p: f64 = v
                .parse()
                .map_err(|e| RunError::Refused(format!("invalid norm order {v:?}: {e}")))?;
            Ok(NormSpec::new(p)?)
        }
    }
}

/// Reach configuration from a section (`run` for the main engine, e.g.
/// `under` for a separate infeasibility-side configuration).
pub fn build_reach_config(cfg: &RunConfig, section: &str) -> Result<ReachConfig, RunError> {
    let mut rc = ReachConfig::default();
    rc.h = cfg.get_f64(section, "h")?;
    if let Some(refine) = cfg.get_usize(section, "refine")? {
        rc.refine = refine;
    }
    if let Some(mode) = cfg.get(section, "mode") {
        rc.mode = match mode {
            "certified" => InflationMode::Certified,
            "nominal" => InflationMode::Nominal,
            other => {
                return Err(RunError::Refused(format!(
                    "invalid [{section}] mode {other:?}: expected certified or nominal"
                )))
            }
        };
    }
    if let Some(d) = cfg.get_usize(section, "directions")? {
        rc.directions = d;
    }
    if let Some(m) = cfg.get_usize(section, "max_iters")? {
        rc.max_iters = m;
    }
    if let Some(f) = cfg.get_f64(section, "margin_floor")? {
        rc.margin_floor_frac = f;
    }
    Ok(rc)
}

/// Seed / attractor cell set from a section: `point` (rasterize one point),
/// `box_lo`/`box_hi` (rasterize a box), or `csv` (load a cell-set file).
pub fn build_cellset(
    cfg: &RunConfig,
    section: &str,
    grid: &GridSpec,
) -> Result<CellSet, RunError> {
    if let Some(point) = cfg.get_vec_f64(section, "point")? {
        let set = CellSet::from_points(grid.clone(), &[point]);
        if set.is_empty() {
            return Err(RunError::Refused(format!(
                "[{section}] point lies outside the grid window"
            )));
        }
        return Ok(set);
    }
    if let (Some(lo), Some(hi)) = (
        cfg.get_vec_f64(section, "box_lo")?,
        cfg.get_vec_f64(section, "box_hi")?,
    ) {
        return Ok(CellSet::from_box(grid.clone(), &Aabb::new(lo, hi)?));
    }
    if let Some(path) = cfg.get(section, "csv") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RunError::Refused(format!("cannot read cell set {path}: {e}")))?;
        return Ok(CellSet::from_csv(&text)?);
    }
    Err(RunError::Refused(format!(
        "[{section}] needs one of point, box_lo/box_hi, or csv"
    )))
}

fn build_probe(cfg: &RunConfig) -> Result<ProbeSpec, RunError> {
    let mut probe = ProbeSpec::default();
    if let Some(t) = cfg.get_f64("probe", "t_probe")? {
        probe.t_probe = t;
    }
    if let Some(h) = cfg.get_f64("probe", "h")? {
        probe.h = h;
    }
    if let Some(m) = cfg.get_usize("probe", "max_iters")? {
        probe.max_iters = m;
    }
    Ok(probe)
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

pub fn run(
    subcommand: &str,
    cfg: &RunConfig,
    out_dir: &Path,
    workers: Option<usize>,
) -> Result<(), RunError> {
    let worker_count = workers.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(worker_count)
        .build()
        .map_err(|e| RunError::Refused(format!("cannot build worker pool: {e}")))?;
    pool.install(|| dispatch(subcommand, cfg, out_dir, worker_count))
}

fn dispatch(
    subcommand: &str,
    cfg: &RunConfig,
    out_dir: &Path,
    workers: usize,
) -> Result<(), RunError> {
    let mut em = Emitter::new(out_dir, subcommand, cfg, workers)?;
    let outcome = match subcommand {
        "reach" => run_reach(cfg, &mut em),
        "intensity" => run_intensity(cfg, &mut em),
        "intensity1d" => run_intensity1d(cfg, &mut em),
        "scan" => run_scan(cfg, &mut em),
        "basin" => run_basin(cfg, &mut em),
        "continue" => run_continue(cfg, &mut em),
        "paper-suite" => run_suite(cfg, &mut em),
        other => Err(RunError::Refused(format!("unknown subcommand {other:?}"))),
    };
    // The manifest is written even for failed runs so refusals are
    // reproducible; the error still decides the exit code.
    em.finish()?;
    outcome
}

fn run_reach(cfg: &RunConfig, em: &mut Emitter) -> Result<(), RunError> {
    let field = build_field(cfg, "field")?;
    let grid = build_grid(cfg)?;
    let n = build_norm(cfg)?;
    let rc = build_reach_config(cfg, "run")?;
    let seed = build_cellset(cfg, "seed", &grid)?;
    let r = cfg.require_f64("run", "r")?;
    let res = reach(&field, &seed, r, &n, &rc)?;
    em.manifest.l_estimates.push(res.l_used);
    em.manifest.certified.push(res.certified);
    em.write_cells("over.csv", &res.over)?;
    em.write_cells("under.csv", &res.under)?;
    em.write_json("report.json", &ReachReport::from_result(&res))?;
    if !res.converged {
        return Err(RunError::NonConvergence(format!(
            "reach stopped after {} rounds without a fixpoint (escaped_window = {})",
            res.steps_to_fixpoint, res.escaped_window
        )));
    }
    Ok(())
}

fn run_intensity(cfg: &RunConfig, em: &mut Emitter) -> Result<(), RunError> {
    let field = build_field(cfg, "field")?;
    let grid = build_grid(cfg)?;
    let n = build_norm(cfg)?;
    let rc = build_reach_config(cfg, "run")?;
    let under_rc = if cfg.get("under", "h").is_some()
        || cfg.get("under", "refine").is_some()
        || cfg.get("under", "mode").is_some()
    {
        Some(build_reach_config(cfg, "under")?)
    } else {
        None
    };
    let attractor = build_cellset(cfg, "seed", &grid)?;
    let target = build_cellset(cfg, "target", &grid)?;
    let r_max = cfg.require_f64("run", "r_max")?;
    let tol = cfg.require_f64("run", "tol")?;
    let bracket = intensity_bisect(
        &field,
        &attractor,
        &target,
        r_max,
        tol,
        &n,
        &rc,
        under_rc.as_ref(),
    )?;
    let mut evidence = Vec::new();
    if let Some(ev) = &bracket.feasible_evidence {
        em.manifest.l_estimates.push(ev.l_used);
        em.manifest.certified.push(ev.certified);
        em.write_cells("feasible_over.csv", &ev.over)?;
        evidence.push("feasible_over.csv".to_string());
    }
    if let Some(ev) = &bracket.infeasible_evidence {
        em.manifest.l_estimates.push(ev.l_used);
        em.manifest.certified.push(false);
        em.write_cells("infeasible_under.csv", &ev.under)?;
        evidence.push("infeasible_under.csv".to_string());
    }
    em.write_json(
        "report.json",
        &IntensityReport::from_bracket(&bracket, evidence),
    )?;
    Ok(())
}

fn run_intensity1d(cfg: &RunConfig, em: &mut Emitter) -> Result<(), RunError> {
    let field = build_field(cfg, "field")?;
    let attractor = cfg.require_f64("run", "attractor")?;
    let basin_lo = cfg.get_f64("run", "basin_lo")?.filter(|v| v.is_finite());
    let basin_hi = cfg.get_f64("run", "basin_hi")?.filter(|v| v.is_finite());
    let result = intensity_1d(&field, attractor, basin_lo, basin_hi)?;
    em.write_json("report.json", &result)?;
    Ok(())
}

fn run_scan(cfg: &RunConfig, em: &mut Emitter) -> Result<(), RunError> {
    let field = build_field(cfg, "field")?;
    let grid = build_grid(cfg)?;
    let n = build_norm(cfg)?;
    let rc = build_reach_config(cfg, "run")?;
    let attractor = build_cellset(cfg, "seed", &grid)?;
    let r_values = if let Some(list) = cfg.get_vec_f64("run", "r_values")? {
        list
    } else {
        let start = cfg.require_f64("run", "r_start")?;
        let step = cfg.require_f64("run", "r_step")?;
        let stop = cfg.require_f64("run", "r_stop")?;
        if !(step > 0.0) {
            return Err(RunError::Refused("r_step must be positive".into()));
        }
        let count = ((stop - start) / step).round() as usize + 1;
        (0..count).map(|i| start + step * i as f64).collect()
    };
    let jump_factor = cfg.get_f64("run", "jump_factor")?;
    let points = discontinuity_scan(&field, &attractor, &r_values, &n, &rc, jump_factor)?;
    em.write_scan("scan.csv", &points)?;
    em.write_json("report.json", &points)?;
    Ok(())
}

fn run_basin(cfg: &RunConfig, em: &mut Emitter) -> Result<(), RunError> {
    let field = build_field(cfg, "field")?;
    let grid = build_grid(cfg)?;
    let n = build_norm(cfg)?;
    let attractor = build_cellset(cfg, "seed", &grid)?;
    let t_max = cfg.get_f64("run", "t_max")?.unwrap_or(20.0);
    let eps = cfg.get_f64("run", "eps")?.unwrap_or_else(|| {
        4.0 * grid.cell_diameter(&n)
    });
    let h = cfg.get_f64("run", "h")?.unwrap_or(0.01);
    let basin = estimate_basin(&field, &attractor, &grid, t_max, eps, h, &n)?;
    em.write_cells("basin.csv", &basin)?;
    Ok(())
}

fn run_continue(cfg: &RunConfig, em: &mut Emitter) -> Result<(), RunError> {
    let field = build_field(cfg, "field")?;
    let field_hat = build_field(cfg, "field_hat")?;
    let grid = build_grid(cfg)?;
    let n = build_norm(cfg)?;
    let rc = build_reach_config(cfg, "run")?;
    let probe = build_probe(cfg)?;
    let seed = build_cellset(cfg, "seed", &grid)?;

    // Radius: either given directly, or derived from a verified intensity
    // lower bound (midpoint between the measured field distance and the
    // bound, refused when the distance is not below it).
    let r = match (cfg.get_f64("run", "r")?, cfg.get_f64("run", "bracket_lo")?) {
        (Some(r), _) => r,
        (None, Some(lo)) => {
            let window = grid.bounds();
            let dist = sup_norm_distance(&field, &field_hat, &window, &n, &grid)?;
            if !(dist.upper < lo) {
                return Err(ContinuationError::PerturbationTooLarge {
                    distance: dist.upper,
                    lo,
                }
                .into());
            }
            0.5 * (dist.upper + lo)
        }
        (None, None) => {
            return Err(RunError::Refused(
                "[run] needs r or bracket_lo for continue".into(),
            ))
        }
    };
    let report = persistent_block(&field, &field_hat, &seed, r, &n, &rc, &probe)?;
    em.write_cells("block.csv", &report.block)?;
    em.write_cells("ahat.csv", &report.a_hat)?;
    em.write_json("report.json", &ContinueReport::from_report(&report))?;
    if !(report.block_ok_for_f && report.block_ok_for_fhat && report.containment) {
        return Err(RunError::NonConvergence(format!(
            "block verification failed (f: {}, perturbed: {}, containment: {})",
            report.block_ok_for_f, report.block_ok_for_fhat, report.containment
        )));
    }
    Ok(())
}

fn run_suite(cfg: &RunConfig, em: &mut Emitter) -> Result<(), RunError> {
    let only: Option<Vec<usize>> = match cfg.get("run", "criteria") {
        None => None,
        Some(list) => Some(
            list.split(|c: char| c.is_whitespace() || c == ',')
                .filter(|p| !p.is_empty())
                .map(|p| {
                    p.parse::<usize>()
                        .map_err(|e| RunError::Refused(format!("bad criterion index {p:?}: {e}")))
                })
                .collect::<Result<_, _>>()?,
        ),
    };
    let outcomes = suite::run_selected(only.as_deref());
    for line in suite::render(&outcomes) {
        println!("{line}");
    }
    em.write_json("suite.json", &outcomes)?;
    let failed = outcomes.iter().filter(|o| !o.passed).count();
    if failed > 0 {
        return Err(RunError::SuiteFailed { failed });
    }
    Ok(())
}

/// Default output directory: `--out`, else `IOA_OUT_DIR`, else `./ioa-out`.
pub fn resolve_out_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("IOA_OUT_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("ioa-out"))
}

/// Checks for the public helper: 20/20 semicontinuity trials on a field is
/// exposed through the library so the CLI and the regression suite share it.
pub fn semicontinuity_pass_rate(
    f: &VectorFieldSpec,
    attractor: &CellSet,
    neighborhood: &CellSet,
    trials: usize,
    n: &NormSpec,
    rc: &ReachConfig,
    probe: &ProbeSpec,
    seed: u64,
) -> Result<(usize, usize), RunError> {
    let report = semicontinuity_probe(f, attractor, neighborhood, trials, n, rc, probe, seed)?;
    let passed = report.outcomes.iter().filter(|o| o.passed).count();
    Ok((passed, report.outcomes.len()))
}
