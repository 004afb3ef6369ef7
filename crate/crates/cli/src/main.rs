//! `ioa`: reachable sets of controlled ODEs and the intensity of attraction.
//!
//! Every subcommand reads an optional sectioned config file, applies
//! `--set section.key=value` overrides plus the dedicated flags (command
//! line wins), runs the computation, and writes its artifacts and a
//! `manifest.json` into the output directory.
//!
//! Exit codes: 0 success, 2 precondition refusal, 3 non-convergence.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ioa_cli::config::RunConfig;
use ioa_cli::runner::{self, resolve_out_dir};

#[derive(Parser)]
#[command(
    name = "ioa",
    version,
    about = "Reachable sets of controlled ODEs and the intensity of attraction"
)]
struct Cli {
    /// Sectioned key-value config file ([field], [params], [grid], [seed],
    /// [target], [run], [under], [probe]).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config entry: --set section.key=value (repeatable).
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,

    /// Output directory (default: $IOA_OUT_DIR, then ./ioa-out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Worker thread count (default: all cores). Identical configs give
    /// identical set artifacts for any worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    cmd: Command,
}

/// Flags shared by the set-valued subcommands; each maps onto a config key.
#[derive(Args, Default)]
struct CommonFlags {
    /// Catalog field name ([field] name).
    #[arg(long)]
    field: Option<String>,
    /// Field expression file ([field] file).
    #[arg(long)]
    field_file: Option<PathBuf>,
    /// Norm order p in [1, inf] ([run] p).
    #[arg(long)]
    p: Option<String>,
    /// Grid lower corner, space/comma separated ([grid] lo).
    #[arg(long, allow_hyphen_values = true)]
    lo: Option<String>,
    /// Grid upper corner ([grid] hi).
    #[arg(long, allow_hyphen_values = true)]
    hi: Option<String>,
    /// Grid cell width ([grid] delta).
    #[arg(long)]
    delta: Option<f64>,
    /// Euler step ([run] h).
    #[arg(long)]
    h: Option<f64>,
    /// Iteration cap ([run] max_iters).
    #[arg(long)]
    max_iters: Option<usize>,
    /// Seed point ([seed] point).
    #[arg(long, allow_hyphen_values = true)]
    seed_point: Option<String>,
}

impl CommonFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(v) = &self.field {
            cfg.set("field", "name", v);
        }
        if let Some(v) = &self.field_file {
            cfg.set("field", "file", &v.display().to_string());
        }
        if let Some(v) = &self.p {
            cfg.set("run", "p", v);
        }
        if let Some(v) = &self.lo {
            cfg.set("grid", "lo", v);
        }
        if let Some(v) = &self.hi {
            cfg.set("grid", "hi", v);
        }
        if let Some(v) = self.delta {
            cfg.set("grid", "delta", &v.to_string());
        }
        if let Some(v) = self.h {
            cfg.set("run", "h", &v.to_string());
        }
        if let Some(v) = self.max_iters {
            cfg.set("run", "max_iters", &v.to_string());
        }
        if let Some(v) = &self.seed_point {
            cfg.set("seed", "point", v);
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Over- and under-approximate the reachable set P_r(seed).
    Reach {
        #[command(flatten)]
        common: CommonFlags,
        /// Control bound ([run] r).
        #[arg(long)]
        r: Option<f64>,
    },
    /// Bracket the intensity of attraction by bisection against a target.
    Intensity {
        #[command(flatten)]
        common: CommonFlags,
        /// Bisection ceiling ([run] r_max).
        #[arg(long)]
        r_max: Option<f64>,
        /// Bisection tolerance ([run] tol).
        #[arg(long)]
        tol: Option<f64>,
    },
    /// Exact 1D intensity of a sink from the field's escape barriers.
    Intensity1d {
        #[command(flatten)]
        common: CommonFlags,
        /// Attractor location ([run] attractor).
        #[arg(long, allow_hyphen_values = true)]
        attractor: Option<f64>,
    },
    /// Sweep r and flag reachable-set diameter jumps.
    Scan {
        #[command(flatten)]
        common: CommonFlags,
        /// Radii as start:step:stop.
        #[arg(long)]
        radii: Option<String>,
    },
    /// Estimate the basin of attraction by trajectory classification.
    Basin {
        #[command(flatten)]
        common: CommonFlags,
    },
    /// Verify an attractor block under a base and a perturbed field.
    Continue {
        #[command(flatten)]
        common: CommonFlags,
        /// Perturbed catalog field name ([field_hat] name).
        #[arg(long)]
        field_hat: Option<String>,
        /// Block radius ([run] r).
        #[arg(long)]
        r: Option<f64>,
    },
    /// Run the nine-criterion regression suite over the example systems.
    PaperSuite {
        /// Comma-separated criterion indices (default: all).
        #[arg(long)]
        criteria: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(path) => match RunConfig::from_file(path) {
            Ok(c) => c,
            Err(e) => {
                eprintln!("ioa: refused: {e}");
                return ExitCode::from(2);
            }
        },
        None => RunConfig::default(),
    };
    if let Err(e) = cfg.apply_overrides(&cli.sets) {
        eprintln!("ioa: refused: {e}");
        return ExitCode::from(2);
    }

    let name = match &cli.cmd {
        Command::Reach { common, r } => {
            common.apply(&mut cfg);
            if let Some(r) = r {
                cfg.set("run", "r", &r.to_string());
            }
            "reach"
        }
        Command::Intensity { common, r_max, tol } => {
            common.apply(&mut cfg);
            if let Some(v) = r_max {
                cfg.set("run", "r_max", &v.to_string());
            }
            if let Some(v) = tol {
                cfg.set("run", "tol", &v.to_string());
            }
            "intensity"
        }
        Command::Intensity1d { common, attractor } => {
            common.apply(&mut cfg);
            if let Some(v) = attractor {
                cfg.set("run", "attractor", &v.to_string());
            }
            "intensity1d"
        }
        Command::Scan { common, radii } => {
            common.apply(&mut cfg);
            if let Some(spec) = radii {
                let parts: Vec<&str> = spec.split(':').collect();
                if parts.len() == 3 {
                    cfg.set("run", "r_start", parts[0]);
                    cfg.set("run", "r_step", parts[1]);
                    cfg.set("run", "r_stop", parts[2]);
                } else {
                    eprintln!("ioa: refused: --radii expects start:step:stop");
                    return ExitCode::from(2);
                }
            }
            "scan"
        }
        Command::Basin { common } => {
            common.apply(&mut cfg);
            "basin"
        }
        Command::Continue {
            common,
            field_hat,
            r,
        } => {
            common.apply(&mut cfg);
            if let Some(v) = field_hat {
                cfg.set("field_hat", "name", v);
            }
            if let Some(v) = r {
                cfg.set("run", "r", &v.to_string());
            }
            "continue"
        }
        Command::PaperSuite { criteria } => {
            if let Some(c) = criteria {
                cfg.set("run", "criteria", c);
            }
            "paper-suite"
        }
    };

    let out_dir = resolve_out_dir(cli.out.clone());
    match runner::run(name, &cfg, &out_dir, cli.workers) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.banner());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
