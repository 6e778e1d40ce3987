use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use podmpc::config::{load_config, ExperimentConfig};
use podmpc::export::{export_report, write_sweep_csv};
use podmpc::pipeline::{run_experiment, sweep_err_horizon, thread_count, Mode};
use podmpc::presets::{PodVariant, PRESET_NAMES};

/// Receding-horizon control of a semilinear parabolic equation with POD
/// reduced-order models.
#[derive(Parser, Debug)]
#[command(name = "podmpc", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run an experiment pipeline, write its artifacts and check the
    /// reference values (exit 0: all pass, 2: tolerance breach, 1: error).
    Run(RunArgs),
    /// Minimal stabilizing horizon as a function of the reduced-model error.
    Sweep(SweepArgs),
    /// List the built-in presets.
    Presets,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Horizon,
    Nmpc,
    PodNmpc,
    Feedback,
    All,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Horizon => Mode::Horizon,
            ModeArg::Nmpc => Mode::Nmpc,
            ModeArg::PodNmpc => Mode::PodNmpc,
            ModeArg::Feedback => Mode::Feedback,
            ModeArg::All => Mode::All,
        }
    }
}

#[derive(Args, Debug)]
struct Source {
    /// Built-in preset (run1, run2, run3, run4, run4-printed).
    #[arg(long)]
    preset: Option<String>,
    /// JSON configuration; command-line options override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Number of interior grid nodes.
    #[arg(long)]
    nx: Option<usize>,
}

impl Source {
    fn resolve(&self) -> Result<ExperimentConfig, String> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(path), None) => load_config(path).map_err(|e| e.to_string())?,
            (None, Some(name)) => ExperimentConfig::from_preset(name).map_err(|e| e.to_string())?,
            (Some(_), Some(_)) => return Err("give either --preset or --config, not both".into()),
            (None, None) => return Err("one of --preset or --config is required".into()),
        };
        if let Some(n) = self.nx {
            cfg.set_n_interior(n).map_err(|e| e.to_string())?;
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct RunArgs {
    #[command(flatten)]
    source: Source,
    #[arg(long, value_enum, default_value = "all")]
    mode: ModeArg,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// POD rank of a single reduced-order run (replaces the preset's rows).
    #[arg(long)]
    pod_rank: Option<usize>,
    /// DEIM rank for the reduced-order runs.
    #[arg(long)]
    deim_rank: Option<usize>,
    /// Relative POD energy tolerance; selects the rank automatically.
    #[arg(long, conflicts_with = "pod_rank")]
    tau_pod: Option<f64>,
    /// Amplitude of the multiplicative initial-state noise.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fixed prediction horizon instead of the minimal stabilizing one.
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[command(flatten)]
    source: Source,
    /// Comma-separated, sorted error levels.
    #[arg(long, value_delimiter = ',', default_value = "0,1e-4,1e-3,1e-2,5e-2,1e-1")]
    errs: Vec<f64>,
    /// Output CSV file.
    #[arg(long)]
    out: PathBuf,
}

fn apply_run_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(l) = args.pod_rank {
        cfg.pod_variants = vec![PodVariant {
            pod_rank: l,
            deim_rank: args.deim_rank,
        }];
    } else if let Some(m) = args.deim_rank {
        cfg.pod_variants.iter_mut().for_each(|v| v.deim_rank = Some(m));
    }
    if let Some(t) = args.tau_pod {
        cfg.pod_variants.clear();
        cfg.tau_pod = Some(t);
    }
    if let Some(n) = args.noise {
        cfg.noise_level = n;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.horizon.is_some() {
        cfg.horizon = args.horizon;
    }
}

fn run(args: RunArgs) -> Result<bool, String> {
    let mut cfg = args.source.resolve()?;
    apply_run_overrides(&mut cfg, &args);
    let report = run_experiment(&cfg, args.mode.into()).map_err(|e| e.to_string())?;
    export_report(&report, &args.out).map_err(|e| e.to_string())?;

    println!(
        "{}: N_min = {}, K = {:.4}, alpha = {:.4e} (horizon used {}, gain used {:.4})",
        report.name, report.horizon.n_min, report.horizon.gain, report.horizon.alpha, report.horizon_used, report.gain_used
    );
    if let (Some(h), Some(e)) = (&report.rom_horizon, report.rom_err_sup) {
        println!("reduced model: sup Err = {e:.3e}, N_min = {}", h.n_min);
    }
    for row in &report.rows {
        let m = &row.metrics;
        print!("{:<16} J = {:.4e}  |y(T)|_H = {:.3e}", row.label, m.closed_loop_cost, m.final_norm);
        if let Some(e) = m.err_l2 {
            print!("  err = {e:.4e}");
        }
        if let Some(s) = m.speedup {
            print!("  speedup = {s:.2}");
        }
        println!();
    }
    for g in &report.gates {
        println!("{g}");
    }
    println!("artifacts written to {}", args.out.display());
    Ok(report.passed())
}

fn sweep(args: SweepArgs) -> Result<(), String> {
    let cfg = args.source.resolve()?;
    let rows = sweep_err_horizon(
        &cfg.params,
        &cfg.grid,
        &cfg.y0(),
        &args.errs,
        cfg.max_horizon,
        thread_count(),
    )
    .map_err(|e| e.to_string())?;
    write_sweep_csv(&rows, &args.out).map_err(|e| e.to_string())?;
    for r in &rows {
        match r.n_min {
            Some(n) => println!("err = {:<8} N_min = {n}", r.err),
            None => println!("err = {:<8} no stabilizing horizon up to {}", r.err, cfg.max_horizon),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run(args) => run(args).map(|ok| if ok { 0 } else { 2 }),
        Command::Sweep(args) => sweep(args).map(|()| 0),
        Command::Presets => {
            PRESET_NAMES.iter().for_each(|n| println!("{n}"));
            Ok(0)
        }
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
