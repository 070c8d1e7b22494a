use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sobolev_lab_cli::{run, Command, ExperimentConfig, Failure};

#[derive(Parser)]
#[command(name = "sobolev-lab", version, about = "Cantor-set homeomorphisms, Lusin (N) failure, Neohookean energies and cavities")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// key = value configuration file; flags below override it
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    n: Option<usize>,
    #[arg(long, global = true)]
    beta: Option<u32>,
    #[arg(long, global = true)]
    p: Option<f64>,
    /// number of generations
    #[arg(long = "K", global = true)]
    k: Option<usize>,
    /// t+1/t, t^2+1/t, t, or a knot file written by `orlicz`
    #[arg(long, global = true)]
    phi: Option<String>,
    /// perimeter weight in the cavity energy
    #[arg(long, global = true)]
    a: Option<f64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// seeded or tuned tentacle widths
    #[arg(long, global = true)]
    widths: Option<String>,
    /// any other config key, as KEY=VALUE
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// write a gnuplot script next to each plottable CSV
    #[arg(long, global = true)]
    gnuplot: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Cmd {
    /// generation volumes and construction sequences
    Geometry,
    /// round trips, face continuity, frame derivatives, bi-Lipschitz bounds
    Maps,
    /// tentacle widths, constraints and squeeze energies
    Tentacles,
    /// tentacle sets against the measure of their images
    Lusin,
    /// increments of the composite between generations
    Cauchy,
    /// Neohookean energy of each stage
    Energy,
    /// Orlicz function, distortion moduli and the random-set sandwich
    Orlicz,
    /// perimeter calibration, lower semicontinuity and isoperimetry
    PerimeterDemo,
    /// cavity extraction, disjointness and the cavity energy
    CavityDemo,
    /// every subcommand in order
    All,
}

impl From<Cmd> for Command {
    fn from(c: Cmd) -> Self {
        match c {
            Cmd::Geometry => Command::Geometry,
            Cmd::Maps => Command::Maps,
            Cmd::Tentacles => Command::Tentacles,
            Cmd::Lusin => Command::Lusin,
            Cmd::Cauchy => Command::Cauchy,
            Cmd::Energy => Command::Energy,
            Cmd::Orlicz => Command::Orlicz,
            Cmd::PerimeterDemo => Command::PerimeterDemo,
            Cmd::CavityDemo => Command::CavityDemo,
            Cmd::All => Command::All,
        }
    }
}

fn config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let flags: [(&str, Option<String>); 9] = [
        ("n", cli.n.map(|v| v.to_string())),
        ("beta", cli.beta.map(|v| v.to_string())),
        ("p", cli.p.map(|v| v.to_string())),
        ("K", cli.k.map(|v| v.to_string())),
        ("phi", cli.phi.clone()),
        ("a", cli.a.map(|v| v.to_string())),
        ("out", cli.out.as_ref().map(|v| v.display().to_string())),
        ("seed", cli.seed.map(|v| v.to_string())),
        ("widths", cli.widths.clone()),
    ];
    for (k, v) in flags {
        if let Some(v) = v {
            cfg.set(k, &v)?;
        }
    }
    for kv in &cli.set {
        let (k, v) = kv.split_once('=').ok_or_else(|| Failure::Config(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cmd: Command = cli.cmd.into();
    let result = config(&cli).and_then(|cfg| run(cmd, &cfg, cli.gnuplot));
    match result {
        Ok(rep) => {
            for w in &rep.warnings {
                eprintln!("warning: {w}");
            }
            for c in &rep.checks {
                println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            let failed: Vec<&str> = rep.checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            if failed.is_empty() {
                ExitCode::SUCCESS
            } else {
                eprintln!("invariant failure: {}", failed.join(", "));
                ExitCode::from(1)
            }
        }
        Err(e @ Failure::Config(_)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
