use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use v2x_bcast_ack::config::ExperimentConfig;
use v2x_bcast_ack::experiment::{self, Axis};

/// Broadcast acknowledgement simulator for CPMs at an urban intersection.
#[derive(Debug, Parser)]
#[command(name = "v2x-bcast-ack", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run one seed batch and write per-seed metric files.
    Run(RunArgs),
    /// Run a batch per point of one or more swept parameters.
    Sweep(SweepArgs),
    /// Render figures from a sweep directory with the Python plotting tool.
    Figures(FigureArgs),
    /// Check a config file and print the effective configuration.
    Validate {
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config; defaults are used for anything it omits.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Use seeds 1..=N instead of the configured list.
    #[arg(long)]
    seeds: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write a MAC trace per run.
    #[arg(long)]
    trace: bool,
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// Parameter to sweep: `rt` or `counter-retx`. Repeat for a grid.
    #[arg(long, required = true)]
    axis: Vec<String>,
    /// Comma-separated values, one list per `--axis`.
    #[arg(long, required = true)]
    values: Vec<String>,
}

#[derive(Debug, Args)]
struct FigureArgs {
    /// Sweep output directory.
    #[arg(long = "in")]
    input: PathBuf,
    /// Figure number (4, 5 or 6); all three when omitted.
    #[arg(long)]
    fig: Option<u8>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(n) = common.seeds {
        if n == 0 {
            bail!("--seeds must be at least 1");
        }
        cfg.run.seeds = (1..=n).collect();
    }
    if let Some(out) = &common.out {
        cfg.run.output_dir = out.clone();
    }
    if common.trace {
        cfg.run.trace = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn plots_script() -> Option<PathBuf> {
    if let Some(p) = std::env::var_os("V2X_PLOTS") {
        return Some(PathBuf::from(p));
    }
    let candidates = [
        PathBuf::from("python/plots.py"),
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../python/plots.py"),
    ];
    candidates.into_iter().find(|p| p.is_file())
}

fn figures(args: &FigureArgs) -> Result<()> {
    if !args.input.is_dir() {
        bail!("input directory {} does not exist", args.input.display());
    }
    let Some(script) = plots_script() else {
        bail!(
            "plotting tool not found: expected python/plots.py or a path in V2X_PLOTS; \
             metric CSVs in {} are complete and can be plotted separately",
            args.input.display()
        );
    };
    let figs: Vec<u8> = match args.fig {
        Some(f @ 4..=6) => vec![f],
        Some(f) => bail!("--fig must be 4, 5 or 6, got {f}"),
        None => vec![4, 5, 6],
    };
    for f in figs {
        let out = match &args.out {
            Some(o) if args.fig.is_some() => o.clone(),
            Some(o) => o.join(format!("fig{f}.png")),
            None => args.input.join(format!("fig{f}.png")),
        };
        let status = Command::new("python3")
            .arg(&script)
            .arg("--in")
            .arg(&args.input)
            .arg("--fig")
            .arg(f.to_string())
            .arg("--out")
            .arg(&out)
            .status()
            .with_context(|| format!("cannot start python3 for {}", script.display()))?;
        if !status.success() {
            bail!("plotting figure {f} failed ({status})");
        }
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn real_main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Cmd::Run(args) => {
            let cfg = load(&args.common)?;
            let out = cfg.run.output_dir.clone();
            let results = experiment::run_to_dir(&cfg, &out)?;
            for r in &results {
                let crr = r.crr.percent().map(|p| format!("{p:.1}%")).unwrap_or_else(|| "NA".into());
                println!("seed {:>3}: crr {crr} ({} eligible)", r.seed, r.crr.eligible);
            }
            println!("results in {}", out.display());
        }
        Cmd::Sweep(args) => {
            if args.axis.len() != args.values.len() {
                bail!("each --axis needs exactly one --values list");
            }
            let cfg = load(&args.common)?;
            let axes = args
                .axis
                .iter()
                .zip(&args.values)
                .map(|(a, v)| Ok((a.parse::<Axis>()?, experiment::parse_values(v)?)))
                .collect::<Result<Vec<_>>>()?;
            let path = experiment::sweep_to_dir(&cfg, &axes, &cfg.run.output_dir)?;
            println!("wrote {}", path.display());
        }
        Cmd::Figures(args) => figures(&args)?,
        Cmd::Validate { config } => {
            let cfg = match config {
                Some(p) => ExperimentConfig::load(&p)?,
                None => ExperimentConfig::default(),
            };
            println!("{}", cfg.to_json());
            eprintln!("config ok (hash {})", cfg.hash());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match real_main() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
