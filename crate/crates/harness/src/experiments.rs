//! The four experiments: cell characterization, single-cell pulse sweep,
//! one training run, and sweeps of training runs.

use crate::config::RunConfig;
use crate::HarnessError;
use rayon::prelude::*;
use rpu_core::cell::{characterize, pulse_update, CellReport, ComplianceRow, Direction};
use rpu_core::checkpoint::write_checkpoint;
use rpu_core::dataset::{subset, Dataset, Provenance};
use rpu_core::network::{train, Counters, Metrics, Mode, Network, METRICS_HEADER};
use rpu_core::{CellState, MappingCase, Tau, WeightMapping};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

fn io_err(path: &Path, e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, HarnessError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    fs::File::create(path).map(BufWriter::new).map_err(|e| io_err(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).and_then(|_| w.flush()).map_err(|e| io_err(path, e))
}

#[derive(Clone, Debug, Serialize)]
pub struct Characterization {
    pub case: MappingCase,
    pub report: CellReport,
    pub rows: Vec<ComplianceRow>,
    /// Worst up/down mismatch over each case's window, same cell and curve.
    pub asymmetry_by_case: Vec<(MappingCase, f64, bool)>,
    pub elapsed_ms: f64,
}

pub fn run_characterize(cfg: &RunConfig) -> Result<Characterization, HarnessError> {
    let started = Instant::now();
    let curve = cfg.update_curve()?;
    let cell_err = |e: rpu_core::cell::CellError| HarnessError::Config(e.to_string());
    let report = characterize(&cfg.cell, &cfg.mapping(), &curve).map_err(cell_err)?;
    let mut asymmetry_by_case = Vec::new();
    for case in MappingCase::ALL {
        let r = characterize(&cfg.cell, &WeightMapping::for_case(case), &curve).map_err(cell_err)?;
        asymmetry_by_case.push((case, r.max_asymmetry, r.pass.symmetry));
    }
    Ok(Characterization {
        case: cfg.case,
        rows: report.rows(),
        report,
        asymmetry_by_case,
        elapsed_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

fn verdict(pass: Option<bool>) -> &'static str {
    match pass {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "n/a",
    }
}

pub fn characterization_table(c: &Characterization) -> String {
    let mut s = format!("Cell compliance (Case {} window)\n", c.case.label());
    s.push_str(&format!("{:<28} {:<18} {:<26} {}\n", "property", "target", "achieved", "result"));
    for r in &c.rows {
        s.push_str(&format!("{:<28} {:<18} {:<26} {}\n", r.property, r.target, r.achieved, verdict(r.pass)));
    }
    s.push_str("\nUp/down symmetry by window\n");
    for (case, a, pass) in &c.asymmetry_by_case {
        s.push_str(&format!("  Case {}: max mismatch {:.4}  {}\n", case.label(), a, verdict(Some(*pass))));
    }
    s
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulsePoint {
    pub pulse_index: u64,
    pub v_cap: f64,
    pub i_read: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PulseSweepStats {
    pub start_v: f64,
    /// `v` at the end of each up/down cycle minus `start_v`.
    pub cycle_drift: Vec<f64>,
    pub max_abs_drift: f64,
    pub delta_v_min: f64,
    /// Largest residual of a straight-line fit to the middle 80 % of the
    /// first up ramp, as a fraction of the full ramp range.
    pub linearity_residual: f64,
    /// `v` at the top of the first up ramp.
    pub first_peak_v: f64,
}

#[derive(Clone, Debug)]
pub struct PulseSweep {
    pub trace: Vec<PulsePoint>,
    pub stats: PulseSweepStats,
}

fn line_fit_max_residual(ys: &[f64]) -> f64 {
    let n = ys.len() as f64;
    let mx = (n - 1.0) / 2.0;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (k, y) in ys.iter().enumerate() {
        let dx = k as f64 - mx;
        sxy += dx * (y - my);
        sxx += dx * dx;
    }
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    ys.iter()
        .enumerate()
        .map(|(k, y)| (y - (my + slope * (k as f64 - mx))).abs())
        .fold(0.0, f64::max)
}

pub fn run_pulse_sweep(cfg: &RunConfig) -> Result<PulseSweep, HarnessError> {
    let p = &cfg.pulse_sweep;
    if p.pulses_per_phase == 0 || p.cycles == 0 {
        return Err(HarnessError::Config("pulse_sweep needs at least one cycle and one pulse".into()));
    }
    let params = cfg.cell;
    let curve = cfg.update_curve()?;
    let device = WeightMapping::for_case(MappingCase::C);
    let start_v = p.start_v.unwrap_or(device.window().0);
    let v_read = cfg.read.v_read;
    let point = |k: u64, s: CellState| PulsePoint {
        pulse_index: k,
        v_cap: s.v_cap,
        i_read: params.conductance_or_off(s.v_cap) * v_read,
    };

    let mut trace = Vec::with_capacity((2 * p.pulses_per_phase * p.cycles + 1) as usize);
    let mut s = CellState::new(start_v);
    let mut k = 0u64;
    trace.push(point(k, s));
    let mut cycle_drift = Vec::new();
    for _ in 0..p.cycles {
        for dir in [Direction::Up, Direction::Down] {
            for _ in 0..p.pulses_per_phase {
                s = pulse_update(s, &params, &curve, dir, 1);
                k += 1;
                trace.push(point(k, s));
            }
        }
        cycle_drift.push(s.v_cap - start_v);
    }

    let n = p.pulses_per_phase as usize;
    let ramp: Vec<f64> = trace[..=n].iter().map(|q| q.v_cap).collect();
    let full = (ramp[n] - ramp[0]).abs();
    let lo = n / 10;
    let hi = n - n / 10;
    let residual = line_fit_max_residual(&ramp[lo..=hi]);
    let stats = PulseSweepStats {
        start_v,
        max_abs_drift: cycle_drift.iter().map(|d| d.abs()).fold(0.0, f64::max),
        cycle_drift,
        delta_v_min: params.delta_v_min(),
        linearity_residual: if full > 0.0 { residual / full } else { 0.0 },
        first_peak_v: ramp[n],
    };
    Ok(PulseSweep { trace, stats })
}

pub fn write_pulse_csv<W: Write>(mut w: W, trace: &[PulsePoint]) -> std::io::Result<()> {
    writeln!(w, "pulse_index,v_cap,i_read")?;
    for q in trace {
        writeln!(w, "{},{},{}", q.pulse_index, q.v_cap, q.i_read)?;
    }
    w.flush()
}

/// Train and test splits after subsetting.
pub struct RunData {
    pub train: Dataset,
    pub test: Dataset,
}

impl RunData {
    pub fn provenance(&self) -> Provenance {
        let mut files = self.train.provenance.files.clone();
        files.extend(self.test.provenance.files.iter().cloned());
        Provenance { files }
    }
}

pub fn load_data(cfg: &RunConfig) -> Result<RunData, HarnessError> {
    let d = &cfg.data;
    let load = |images: &Path, labels: &Path| Dataset::load(d.resolve(images), d.resolve(labels));
    let train = load(&d.train_images, &d.train_labels)?;
    let test = load(&d.test_images, &d.test_labels)?;
    let train = match d.train_subset {
        Some(n) if n < train.len() => subset(&train, n, d.subset_seed)?,
        _ => train,
    };
    let test = match d.test_subset {
        Some(n) if n < test.len() => subset(&test, n, d.subset_seed.wrapping_add(1))?,
        _ => test,
    };
    Ok(RunData { train, test })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: String,
    pub config: RunConfig,
    pub final_test_error_pct: f64,
    pub best_test_error_pct: f64,
    pub final_train_error_pct: f64,
    pub epochs: u32,
    pub counters: Counters,
    pub checkpoint: Option<PathBuf>,
    pub dataset: Provenance,
    pub train_examples: usize,
    pub test_examples: usize,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub run_id: String,
    pub metrics: Metrics,
    pub summary: RunSummary,
    pub metrics_csv: String,
}

pub fn build_network(cfg: &RunConfig) -> Result<Network, HarnessError> {
    let spec = cfg.network.clone();
    let t = &cfg.train;
    Ok(match t.mode {
        Mode::Fp => Network::fp(spec, t.init_range, cfg.seed)?,
        Mode::Analog => Network::analog(spec, &cfg.analog()?, t.init_range, cfg.seed)?,
    })
}

/// One training run. With `out` set, writes
/// `<out>/<run-id>/{config.json, metrics.csv, summary.json, weights.rpuw}`.
pub fn train_run(
    cfg: &RunConfig,
    data: &RunData,
    out: Option<&Path>,
    mut progress: impl FnMut(&str),
) -> Result<RunResult, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let run_id = cfg.run_id();
    let mut net = build_network(cfg)?;
    let tcfg = cfg.train_config();
    let metrics = train(&mut net, &data.train, &data.test, &tcfg, |r| {
        progress(&format!(
            "{run_id} epoch {:>2} lr {:.5} train {:6.2}% test {:6.2}% loss {:.4}",
            r.epoch, r.lr, r.train_error_pct, r.test_error_pct, r.train_loss
        ))
    })?;
    let mut csv = Vec::new();
    metrics.write_csv(&mut csv, cfg.wall_clock_in_metrics).expect("in-memory write");
    let metrics_csv = String::from_utf8(csv).expect("ascii csv");

    let dir = out.map(|o| o.join(&run_id));
    let checkpoint = dir.as_ref().map(|d| d.join("weights.rpuw"));
    let last = metrics.records.last().expect("at least one epoch");
    let summary = RunSummary {
        run_id: run_id.clone(),
        config: cfg.clone(),
        final_test_error_pct: last.test_error_pct,
        best_test_error_pct: metrics.best_test_error().expect("at least one epoch"),
        final_train_error_pct: last.train_error_pct,
        epochs: tcfg.epochs,
        counters: net.counters(),
        checkpoint: checkpoint.clone(),
        dataset: data.provenance(),
        train_examples: data.train.len(),
        test_examples: data.test.len(),
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    if let (Some(dir), Some(ckpt)) = (&dir, &checkpoint) {
        write_text(&dir.join("config.json"), &cfg.to_json())?;
        write_text(&dir.join("metrics.csv"), &metrics_csv)?;
        write_text(&dir.join("summary.json"), &serde_json::to_string_pretty(&summary).expect("summary serializes"))?;
        let w = create(ckpt)?;
        write_checkpoint(w, &net.voltages()).map_err(|e| io_err(ckpt, e))?;
    }
    Ok(RunResult { run_id, metrics, summary, metrics_csv })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    Asymmetry,
    Retention,
}

impl SweepKind {
    pub fn label(self) -> &'static str {
        match self {
            SweepKind::Asymmetry => "asymmetry",
            SweepKind::Retention => "retention",
        }
    }
}

/// Sweep points derived from a base config.
pub fn sweep_points(base: &RunConfig, kind: SweepKind) -> Vec<RunConfig> {
    let mut points = Vec::new();
    match kind {
        SweepKind::Asymmetry => {
            let mut fp = base.clone();
            fp.train.mode = Mode::Fp;
            points.push(fp);
            for case in MappingCase::ALL {
                let mut c = base.clone();
                c.train.mode = Mode::Analog;
                c.case = case;
                points.push(c);
            }
        }
        SweepKind::Retention => {
            let at = |tau: Tau, var: f64| {
                let mut c = base.clone();
                c.train.mode = Mode::Analog;
                c.case = MappingCase::B;
                c.leak.tau = tau;
                c.leak.tau_variation = var;
                c
            };
            for &tau in &base.sweep.taus {
                points.push(at(tau, 0.0));
            }
            if base.sweep.with_variation {
                for &tau in &base.sweep.variation_taus {
                    points.push(at(tau, base.sweep.variation));
                }
            }
        }
    }
    points
}

pub const SWEEP_HEADER_PREFIX: &str = "run_id,";

/// Runs every point on a pool of `jobs` threads. Results come back sorted
/// by run id regardless of scheduling.
pub fn run_sweep(
    points: &[RunConfig],
    data: &RunData,
    out: Option<&Path>,
    jobs: usize,
    progress: impl Fn(&str) + Sync,
) -> Result<Vec<RunResult>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?;
    let mut results = pool.install(|| {
        points
            .par_iter()
            .map(|cfg| train_run(cfg, data, out, &progress))
            .collect::<Result<Vec<_>, _>>()
    })?;
    results.sort_by(|a, b| a.run_id.cmp(&b.run_id));
    Ok(results)
}

/// Metrics of every run, prefixed by run id.
pub fn merged_csv(results: &[RunResult]) -> String {
    let mut s = format!("{SWEEP_HEADER_PREFIX}{METRICS_HEADER}\n");
    for r in results {
        for line in r.metrics_csv.lines().skip(1) {
            s.push_str(&r.run_id);
            s.push(',');
            s.push_str(line);
            s.push('\n');
        }
    }
    s
}

pub fn write_sweep(out: &Path, kind: SweepKind, results: &[RunResult]) -> Result<PathBuf, HarnessError> {
    let path = out.join(format!("sweep-{}.csv", kind.label()));
    write_text(&path, &merged_csv(results))?;
    Ok(path)
}
