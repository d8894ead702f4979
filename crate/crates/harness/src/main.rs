use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rpu_harness::checks::{self, Check};
use rpu_harness::config::RunConfig;
use rpu_harness::experiments::{self, SweepKind};
use rpu_harness::{HarnessError, EXIT_CHECK_FAILED};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser, Debug)]
#[command(name = "rpu", version, about = "Analog RPU crossbar simulator and experiment harness")]
struct Cli {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override one config key, e.g. `--set leak.tau=1e6`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    sets: Vec<String>,
    /// Worker threads for sweeps (default: available cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Exit with status 3 when an acceptance threshold is missed.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare the cell design against the desired RPU properties.
    Characterize {
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Cycle one cell through sets of up and down pulses.
    PulseSweep,
    /// One training run.
    Train {
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Mapping case A, B or C.
        #[arg(long)]
        case: Option<String>,
        /// Retention constant in images, or `inf`.
        #[arg(long)]
        tau: Option<String>,
        #[arg(long)]
        epochs: Option<u32>,
    },
    /// Several training runs, executed in parallel.
    Sweep {
        #[arg(value_enum)]
        kind: SweepArg,
        /// Add per-cell retention variation runs (retention sweep).
        #[arg(long)]
        variation: bool,
    },
    /// Print the fully resolved configuration.
    Config,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Fp,
    Analog,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SweepArg {
    Asymmetry,
    Retention,
}

fn overrides(cli: &Cli) -> Vec<String> {
    let mut sets = Vec::new();
    if let Some(out) = &cli.out {
        sets.push(format!("out_dir={}", serde_json::Value::String(out.display().to_string())));
    }
    if let Some(seed) = cli.seed {
        sets.push(format!("seed={seed}"));
    }
    match &cli.command {
        Command::Train { mode, case, tau, epochs } => {
            if let Some(m) = mode {
                sets.push(format!("train.mode={}", if matches!(m, ModeArg::Fp) { "fp" } else { "analog" }));
            }
            if let Some(c) = case {
                sets.push(format!("case={}", c.to_uppercase()));
            }
            if let Some(t) = tau {
                sets.push(format!("leak.tau={t}"));
            }
            if let Some(e) = epochs {
                sets.push(format!("train.epochs={e}"));
            }
        }
        Command::Sweep { variation: true, .. } => sets.push("sweep.with_variation=true".into()),
        _ => {}
    }
    sets.extend(cli.sets.iter().cloned());
    sets
}

fn report(checks: &[Check], enforce: bool) -> Result<bool, HarnessError> {
    for c in checks {
        eprintln!("{c}");
    }
    Ok(!enforce || checks::all_pass(checks))
}

fn run(cli: &Cli) -> Result<bool, HarnessError> {
    let cfg = RunConfig::resolve(cli.config.as_deref(), &overrides(cli))?;
    let out = cfg.out_dir.clone();
    let io = |p: &PathBuf, e: std::io::Error| HarnessError::Io(format!("{}: {e}", p.display()));
    match &cli.command {
        Command::Config => {
            println!("{}", cfg.to_json());
            Ok(true)
        }
        Command::Characterize { json } => {
            let c = experiments::run_characterize(&cfg)?;
            let text = serde_json::to_string_pretty(&c).expect("report serializes");
            if *json {
                println!("{text}");
            } else {
                print!("{}", experiments::characterization_table(&c));
            }
            std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
            let path = out.join("characterize.json");
            std::fs::write(&path, text).map_err(|e| io(&path, e))?;
            report(&checks::characterize_checks(&c), cli.check)
        }
        Command::PulseSweep => {
            let sweep = experiments::run_pulse_sweep(&cfg)?;
            std::fs::create_dir_all(&out).map_err(|e| io(&out, e))?;
            let path = out.join("pulse-sweep.csv");
            let f = std::fs::File::create(&path).map_err(|e| io(&path, e))?;
            experiments::write_pulse_csv(std::io::BufWriter::new(f), &sweep.trace).map_err(|e| io(&path, e))?;
            let s = &sweep.stats;
            println!("trace: {} ({} points)", path.display(), sweep.trace.len());
            println!("start {:.4} V, first peak {:.4} V", s.start_v, s.first_peak_v);
            println!("end-of-cycle drift (V): {:?}", s.cycle_drift);
            println!("max |drift| {:.3e} V ({:.2} x dv_min)", s.max_abs_drift, s.max_abs_drift / s.delta_v_min);
            println!("ramp linearity residual {:.4} % of range", 100.0 * s.linearity_residual);
            report(&checks::pulse_sweep_checks(s), cli.check)
        }
        Command::Train { .. } => {
            let data = experiments::load_data(&cfg)?;
            let r = experiments::train_run(&cfg, &data, Some(&out), |line| eprintln!("{line}"))?;
            println!(
                "{}: final test error {:.2}% (best {:.2}%), outputs in {}",
                r.run_id,
                r.summary.final_test_error_pct,
                r.summary.best_test_error_pct,
                out.join(&r.run_id).display()
            );
            report(&[checks::train_check(&r, cfg.check.max_final_error_pct)], cli.check)
        }
        Command::Sweep { kind, .. } => {
            let kind = match kind {
                SweepArg::Asymmetry => SweepKind::Asymmetry,
                SweepArg::Retention => SweepKind::Retention,
            };
            let data = experiments::load_data(&cfg)?;
            let points = experiments::sweep_points(&cfg, kind);
            let jobs = cli.jobs.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let results = experiments::run_sweep(&points, &data, Some(&out), jobs, |line| eprintln!("{line}"))?;
            let path = experiments::write_sweep(&out, kind, &results)?;
            for r in &results {
                println!("{:<32} final {:6.2}%  best {:6.2}%", r.run_id, r.summary.final_test_error_pct, r.summary.best_test_error_pct);
            }
            println!("merged metrics: {}", path.display());
            let cs = match kind {
                SweepKind::Asymmetry => checks::asymmetry_checks(&results),
                SweepKind::Retention => checks::retention_checks(&results),
            };
            report(&cs, cli.check)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli).context("rpu") {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_CHECK_FAILED as u8),
        Err(e) => {
            eprintln!("{e:#}");
            let code = e.downcast_ref::<HarnessError>().map_or(1, HarnessError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
