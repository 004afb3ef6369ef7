//! Output artifacts: plot-ready CSVs, JSON reports, and the per-run
//! reproducibility manifest.
//!
//! CSV schemas:
//! - cell sets: `# grid lo=<...> hi=<...> delta=<...>` header then
//!   `i1,..,in,x1,..,xn` per occupied cell (empty sets emit the header only);
//! - scans: `r,cell_count,diameter,escaped,jump`;
//! - trajectories: `t,x1,..,xn`.
//!
//! Timing fields in the manifest are the only artifact content allowed to
//! differ between identical runs; every set/report payload is
//! deterministic in the config.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;

use ioa_core::geometry::CellSet;
use ioa_core::intensity::{IntensityBracket, ScanPoint};
use ioa_core::ContinuationReport;
use ioa_core::ReachResult;

use crate::config::RunConfig;

/// Reproducibility record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: String,
    /// Resolved configuration after command-line overrides.
    pub config: BTreeMap<String, BTreeMap<String, String>>,
    pub workers: usize,
    pub wall_ms: u128,
    /// Lipschitz estimates used by the computations, in emission order.
    pub l_estimates: Vec<f64>,
    /// Whether each emitted approximation carries an enclosure certificate.
    pub certified: Vec<bool>,
    pub artifacts: Vec<String>,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &RunConfig, workers: usize) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: config.echo(),
            workers,
            wall_ms: 0,
            l_estimates: Vec::new(),
            certified: Vec::new(),
            artifacts: Vec::new(),
        }
    }
}

/// Collects artifacts for one run and writes them under `out_dir`.
pub struct Emitter {
    out_dir: PathBuf,
    pub manifest: RunManifest,
    started: std::time::Instant,
}

impl Emitter {
    pub fn new(out_dir: &Path, subcommand: &str, config: &RunConfig, workers: usize) -> std::io::Result<Self> {
        std::fs::create_dir_all(out_dir)?;
        Ok(Emitter {
            out_dir: out_dir.to_path_buf(),
            manifest: RunManifest::new(subcommand, config, workers),
            started: std::time::Instant::now(),
        })
    }

    fn record(&mut self, name: &str) -> PathBuf {
        self.manifest.artifacts.push(name.to_string());
        self.out_dir.join(name)
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> std::io::Result<()> {
        let path = self.record(name);
        std::fs::write(path, text)
    }

    pub fn write_cells(&mut self, name: &str, set: &CellSet) -> std::io::Result<()> {
        self.write_text(name, &set.to_csv())
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> std::io::Result<()> {
        let mut text = serde_json::to_string_pretty(value).expect("serializable report");
        text.push('\n');
        self.write_text(name, &text)
    }

    pub fn write_scan(&mut self, name: &str, points: &[ScanPoint]) -> std::io::Result<()> {
        let mut out = String::from("r,cell_count,diameter,escaped,jump\n");
        for p in points {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                p.r, p.cell_count, p.diameter, p.escaped, p.jump
            ));
        }
        self.write_text(name, &out)
    }

    /// Writes the manifest (always `manifest.json`) and finalizes timing.
    pub fn finish(mut self) -> std::io::Result<()> {
        self.manifest.wall_ms = self.started.elapsed().as_millis();
        let mut text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        text.push('\n');
        std::fs::write(self.out_dir.join("manifest.json"), text)
    }
}

/// JSON report for `reach` runs.
#[derive(Debug, Serialize)]
pub struct ReachReport {
    pub r: f64,
    pub cells_over: u64,
    pub cells_under: u64,
    pub escaped_window: bool,
    pub steps_to_fixpoint: usize,
    pub converged: bool,
    pub l_used: f64,
    pub h_used: f64,
    pub certified: bool,
    pub under_margin: f64,
}

impl ReachReport {
    pub fn from_result(res: &ReachResult) -> Self {
        ReachReport {
            r: res.r,
            cells_over: res.over.len() as u64,
            cells_under: res.under.len() as u64,
            escaped_window: res.escaped_window,
            steps_to_fixpoint: res.steps_to_fixpoint,
            converged: res.converged,
            l_used: res.l_used,
            h_used: res.h_used,
            certified: res.certified,
            under_margin: res.under_margin,
        }
    }
}

/// JSON report for `intensity` runs.
#[derive(Debug, Serialize)]
pub struct IntensityReport {
    pub lo: f64,
    pub hi: f64,
    pub certified: bool,
    pub hi_unbounded: bool,
    pub indeterminate_band: Option<(f64, f64)>,
    /// Artifact names of the evidence cell sets, when written.
    pub evidence: Vec<String>,
}

impl IntensityReport {
    pub fn from_bracket(b: &IntensityBracket, evidence: Vec<String>) -> Self {
        IntensityReport {
            lo: b.lo,
            hi: b.hi,
            certified: b.certified,
            hi_unbounded: b.hi_unbounded,
            indeterminate_band: b.indeterminate_band,
            evidence,
        }
    }
}

/// JSON report for `continue` runs.
#[derive(Debug, Serialize)]
pub struct ContinueReport {
    pub r: f64,
    pub distance_lower: f64,
    pub distance_upper: f64,
    pub block_ok_for_f: bool,
    pub block_ok_for_fhat: bool,
    pub margin_f: f64,
    pub margin_fhat: f64,
    pub containment: bool,
    pub advisory: bool,
    pub diagnostic: Option<String>,
}

impl ContinueReport {
    pub fn from_report(rep: &ContinuationReport) -> Self {
        ContinueReport {
            r: rep.r,
            distance_lower: rep.f_distance.lower,
            distance_upper: rep.f_distance.upper,
            block_ok_for_f: rep.block_ok_for_f,
            block_ok_for_fhat: rep.block_ok_for_fhat,
            margin_f: rep.margin_f,
            margin_fhat: rep.margin_fhat,
            containment: rep.containment,
            advisory: rep.advisory,
            diagnostic: rep.diagnostic.clone(),
        }
    }
}
