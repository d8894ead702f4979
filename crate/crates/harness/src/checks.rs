//! Pass/fail thresholds used by `--check` mode and the acceptance suite.

use crate::experiments::{Characterization, PulseSweepStats, RunResult};
use rpu_core::cell::targets;
use rpu_core::network::Metrics;
use rpu_core::MappingCase;
use std::fmt;

#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    pub fn new(name: impl Into<String>, pass: bool, detail: impl Into<String>) -> Self {
        Self { name: name.into(), pass, detail: detail.into() }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}: {}", if self.pass { "PASS" } else { "FAIL" }, self.name, self.detail)
    }
}

pub fn all_pass(checks: &[Check]) -> bool {
    checks.iter().all(|c| c.pass)
}

/// Default-cell compliance: exact level count, on/off and center
/// resistance near target, 1 ns pulses, Case B symmetric enough, Case C not.
pub fn characterize_checks(c: &Characterization) -> Vec<Check> {
    let r = &c.report;
    let asym = |case: MappingCase| c.asymmetry_by_case.iter().find(|a| a.0 == case).map(|a| (a.1, a.2));
    let mut out = vec![
        Check::new("levels", r.levels == 1000, format!("{} levels", r.levels)),
        Check::new("on/off", (r.on_off_ratio - 8.0).abs() <= 0.1, format!("{:.4}", r.on_off_ratio)),
        Check::new(
            "center resistance",
            (r.r_center / targets::R_DEVICE - 1.0).abs() <= 0.05,
            format!("{:.3} MOhm", r.r_center / 1e6),
        ),
        Check::new(
            "pulse duration",
            (r.pulse_duration - targets::PULSE_DURATION).abs() < 1e-15,
            format!("{} ns", r.pulse_duration * 1e9),
        ),
    ];
    if let Some((b, pass)) = asym(MappingCase::B) {
        out.push(Check::new("Case B symmetry", pass && b <= targets::SYMMETRY, format!("{b:.4}")));
    }
    if let Some((cc, pass)) = asym(MappingCase::C) {
        out.push(Check::new("Case C symmetry flagged", !pass && cc > targets::SYMMETRY, format!("{cc:.4}")));
    }
    out
}

pub fn pulse_sweep_checks(s: &PulseSweepStats) -> Vec<Check> {
    vec![
        Check::new(
            "return-to-start drift",
            s.max_abs_drift < 2.0 * s.delta_v_min,
            format!("max {:.3e} V over {} cycles (limit {:.3e})", s.max_abs_drift, s.cycle_drift.len(), 2.0 * s.delta_v_min),
        ),
        Check::new(
            "ramp linearity",
            s.linearity_residual < 0.01,
            format!("max residual {:.4} % of range", 100.0 * s.linearity_residual),
        ),
    ]
}

fn final_error(r: &RunResult) -> f64 {
    r.summary.final_test_error_pct
}

/// Run whose id ends with `suffix` (ids carry the seed as a prefix).
pub fn find<'a>(results: &'a [RunResult], suffix: &str) -> Option<&'a RunResult> {
    results.iter().find(|r| r.run_id.ends_with(suffix))
}

fn missing(name: &str, what: &str) -> Check {
    Check::new(name, false, format!("no {what} run"))
}

/// Orderings expected from an asymmetry sweep (fp, A, B, C).
pub fn asymmetry_checks(results: &[RunResult]) -> Vec<Check> {
    let (Some(fp), Some(a), Some(b), Some(c)) = (
        find(results, "-fp"),
        find(results, "-analog-A-tauinf"),
        find(results, "-analog-B-tauinf"),
        find(results, "-analog-C-tauinf"),
    ) else {
        return vec![missing("asymmetry sweep", "fp/A/B/C")];
    };
    let (fp, a, b, c) = (final_error(fp), final_error(a), final_error(b), final_error(c));
    vec![
        Check::new("Case B near baseline", b <= fp + 1.5, format!("B {b:.2}% vs fp {fp:.2}% (limit +1.5)")),
        Check::new("Case A near Case B", (a - b).abs() <= 0.5, format!("A {a:.2}% vs B {b:.2}% (limit 0.5)")),
        Check::new(
            "Case C deviates",
            c >= b + 2.0 && c >= a.max(b).max(fp),
            format!("C {c:.2}% vs B {b:.2}% (needs +2.0 and worst of four)"),
        ),
    ]
}

/// Orderings expected from a retention sweep.
pub fn retention_checks(results: &[RunResult]) -> Vec<Check> {
    let mut out = Vec::new();
    match find(results, "-tau1e4") {
        Some(r) => out.push(short_retention_check(&r.metrics)),
        None => out.push(missing("short retention", "tau=1e4")),
    }
    match (find(results, "-tau1e6"), find(results, "-tauinf")) {
        (Some(m), Some(inf)) => {
            let (m, inf) = (final_error(m), final_error(inf));
            out.push(Check::new("tau 1e6 near tau inf", (m - inf).abs() <= 1.5, format!("{m:.2}% vs {inf:.2}% (limit 1.5)")));
        }
        _ => out.push(missing("tau 1e6 near tau inf", "tau=1e6/inf")),
    }
    if let (Some(v), Some(u)) = (find(results, "-tau1e6-var30"), find(results, "-tau1e6")) {
        let (v, u) = (final_error(v), final_error(u));
        out.push(Check::new("tau variation insensitivity", (v - u).abs() <= 0.5, format!("{v:.2}% vs {u:.2}% (limit 0.5)")));
    }
    out
}

/// Error at epoch 30 above epoch 10, and final error above 10 %.
pub fn short_retention_check(m: &Metrics) -> Check {
    let e10 = m.test_error_at(10);
    let e30 = m.test_error_at(30);
    let fin = m.final_test_error().unwrap_or(f64::NAN);
    match (e10, e30) {
        (Some(e10), Some(e30)) => Check::new(
            "short retention degrades",
            e30 > e10 && fin > 10.0,
            format!("epoch 10 {e10:.2}%, epoch 30 {e30:.2}%, final {fin:.2}%"),
        ),
        _ => Check::new("short retention degrades", false, "fewer than 30 epochs"),
    }
}

/// Mean epoch loss non-increasing over the first five epochs, allowing one
/// exception.
pub fn loss_monotonicity_check(m: &Metrics) -> Check {
    let losses: Vec<f64> = m.records.iter().take(5).map(|r| r.train_loss).collect();
    let rises = losses.windows(2).filter(|w| w[1] > w[0]).count();
    Check::new(
        "fp loss monotone",
        losses.len() == 5 && rises <= 1,
        format!("first-5 losses {:?}, {rises} rise(s)", losses.iter().map(|l| (l * 1e4).round() / 1e4).collect::<Vec<_>>()),
    )
}

pub fn train_check(r: &RunResult, max_final_error_pct: f64) -> Check {
    let e = final_error(r);
    Check::new(
        "final test error",
        e.is_finite() && e <= max_final_error_pct,
        format!("{}: {e:.2}% (limit {max_final_error_pct}%)", r.run_id),
    )
}
