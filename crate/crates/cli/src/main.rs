//! `dms`: batch experiment runner for the dyadic matrix-weighted space
//! toolkit.
//!
//! `dms <kind> --spec file.json --out dir/` runs one experiment and
//! writes `report.json`, `tables.csv`, and `plot.csv`; `dms validate
//! --spec file.json` prints diagnostics without running anything.
//! `DMS_THREADS` caps intra-experiment parallelism.

mod run;
mod spec;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use spec::ExperimentSpec;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "dms", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// experiment spec (JSON)
    #[arg(long)]
    spec: PathBuf,
    /// output directory for report.json / tables.csv / plot.csv
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// window override `j_min:j_max:extent_log2`
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
}

#[derive(Subcommand, Clone)]
enum Command {
    /// sequence-space norms (single sequence or ensemble)
    Norm(RunArgs),
    /// almost-diagonal boundedness experiment
    Adtest(RunArgs),
    /// weight characteristic and dimension estimates
    Dims(RunArgs),
    /// trace operator experiment
    Trace(RunArgs),
    /// extension operator experiment
    Ext(RunArgs),
    /// pseudo-differential molecule experiment
    Psido(RunArgs),
    /// Calderón–Zygmund kernel and atom-image experiment
    Czo(RunArgs),
    /// wavelet system self-checks
    #[command(name = "wavelet-check")]
    WaveletCheck(RunArgs),
    /// static spec diagnostics (no execution)
    Validate {
        #[arg(long)]
        spec: PathBuf,
    },
}

fn parse_window(text: &str) -> Result<spec::WindowSpec> {
    let parts: Vec<&str> = text.split(':').collect();
    anyhow::ensure!(
        parts.len() == 3,
        "window override must be j_min:j_max:extent_log2"
    );
    Ok(spec::WindowSpec {
        j_min: parts[0].parse().context("j_min")?,
        j_max: parts[1].parse().context("j_max")?,
        extent_log2: parts[2].parse().context("extent_log2")?,
    })
}

fn configure_threads() {
    if let Ok(v) = std::env::var("DMS_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n <= 1 {
                dms_core::exec::set_force_sequential(true);
            } else {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn run_kind(kind: &str, args: &RunArgs) -> Result<i32> {
    let mut spec = ExperimentSpec::load(&args.spec)?;
    anyhow::ensure!(
        spec.kind == kind,
        "spec kind {:?} does not match the subcommand {kind:?}",
        spec.kind
    );
    if let Some(w) = &args.window {
        spec.window = Some(parse_window(w)?);
    }
    run::run(&spec, &args.out)
}

fn main() {
    configure_threads();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Norm(a) => run_kind("norm", a),
        Command::Adtest(a) => run_kind("adtest", a),
        Command::Dims(a) => run_kind("dims", a),
        Command::Trace(a) => run_kind("trace", a),
        Command::Ext(a) => run_kind("ext", a),
        Command::Psido(a) => run_kind("psido", a),
        Command::Czo(a) => run_kind("czo", a),
        Command::WaveletCheck(a) => run_kind("wavelet-check", a),
        Command::Validate { spec } => (|| {
            let spec = ExperimentSpec::load(spec)?;
            let diags = run::validate(&spec)?;
            if diags.is_empty() {
                println!("no diagnostics");
            } else {
                for d in &diags {
                    println!("diagnostic: {d}");
                }
            }
            Ok(0)
        })(),
    };
    match outcome {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            std::process::exit(1);
        }
    }
}
