//! Experiment runner for `sobolev-lab`: a flat config, one subcommand per
//! module, CSV tables with `#` headers and a JSON summary per run.

pub mod config;
pub mod experiments;
pub mod output;

use std::fs;
use std::path::PathBuf;

pub use config::{ConfigError, ExperimentConfig, Widths};
pub use experiments::{Command, Context, Failure, Outcome};
use output::{Check, Summary};

pub struct RunReport {
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Validate, run, write every artifact under `cfg.out`.
pub fn run(cmd: Command, cfg: &ExperimentConfig, gnuplot: bool) -> Result<RunReport, Failure> {
    let warnings = cfg.validate()?;
    let ctx = Context::new(cfg)?;
    let mut outcome = ctx.run(cmd)?;
    outcome.warnings.splice(0..0, warnings);
    fs::create_dir_all(&cfg.out)?;
    let preamble = vec![
        format!("sobolev-lab {}", cmd.name()),
        format!(
            "n={} beta={} p={} K={} phi={} a={} widths={} seed={}",
            cfg.n,
            cfg.beta,
            cfg.p,
            cfg.k,
            cfg.phi,
            cfg.a,
            match cfg.widths {
                Widths::Seeded => "seeded",
                Widths::Tuned => "tuned",
            },
            cfg.seed
        ),
    ];
    let mut files = Vec::new();
    for t in &outcome.tables {
        files.extend(t.write(&cfg.out, &preamble, gnuplot)?);
    }
    for (name, content) in &outcome.files {
        let p = cfg.out.join(name);
        fs::write(&p, content)?;
        files.push(p);
    }
    let summary_path = cfg.out.join(format!("summary_{}.json", cmd.name()));
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap_or_default().to_string_lossy().into_owned()).collect();
    let summary = Summary {
        subcommand: cmd.name().into(),
        config: cfg.clone(),
        warnings: outcome.warnings.clone(),
        passed: outcome.checks.iter().all(|c| c.passed),
        checks: outcome.checks.clone(),
        files: names,
    };
    let json = serde_json::to_string_pretty(&summary).map_err(|e| Failure::Runtime(e.to_string()))?;
    fs::write(&summary_path, json + "\n")?;
    files.push(summary_path);
    Ok(RunReport { checks: outcome.checks, warnings: outcome.warnings, files })
}
