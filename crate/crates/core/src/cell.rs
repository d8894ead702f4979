//! Single-cell model of the CMOS RPU.
//!
//! The stored state is the capacitor voltage `v_cap`. It drives the gate of
//! the P-type read transistor, which in triode has a conductance affine in
//! the gate overdrive `v_dd - v_cap - v_th`. Updates charge (`Up`) or
//! discharge (`Down`) the capacitor by `i * t_pulse / c1` per pulse.
//!
//! The weight mapping is sign-inverting: a larger weight is a lower `v_cap`,
//! which is a higher read conductance.

use serde::{Deserialize, Serialize};
use std::io::Read;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CellError {
    #[error("read transistor off at v_cap = {v_cap} V (overdrive {overdrive} V <= 0)")]
    TransistorOff { v_cap: f64, overdrive: f64 },
    #[error("voltage {v} V is not strictly inside the rails ({v_ss}, {v_dd})")]
    OutsideRails { v: f64, v_ss: f64, v_dd: f64 },
    #[error("invalid cell parameters: {0}")]
    InvalidParams(String),
    #[error("invalid update-current table: {0}")]
    InvalidTable(String),
    #[error("current table csv: {0}")]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Device constants of the read transistor, storage capacitor and update
/// current sources.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CellParams {
    pub v_dd: f64,
    pub v_ss: f64,
    pub v_th: f64,
    /// Lumped `mu_p * C_ox * W / L` of the read transistor (A/V^2).
    pub k_trans: f64,
    pub c1: f64,
    pub i0: f64,
    pub t_pulse: f64,
}

impl Default for CellParams {
    fn default() -> Self {
        // v_th and k_trans solve on/off = 8 over [0.16, 0.64] V and 24 MOhm at 0.4 V.
        // i0 * t_pulse / c1 = 0.48 mV gives 1000 levels over 0.48 V.
        Self {
            v_dd: 0.8,
            v_ss: 0.0,
            v_th: 0.09143,
            k_trans: 1.350e-7,
            c1: 100e-15,
            i0: 48e-9,
            t_pulse: 1e-9,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rails {
    pub v_ss: f64,
    pub v_dd: f64,
}

impl CellParams {
    pub fn validate(&self) -> Result<(), CellError> {
        let positive = [
            ("c1", self.c1),
            ("i0", self.i0),
            ("t_pulse", self.t_pulse),
            ("k_trans", self.k_trans),
        ];
        for (name, value) in positive {
            if !(value > 0.0 && value.is_finite()) {
                return Err(CellError::InvalidParams(format!("{name} must be positive, got {value}")));
            }
        }
        if !(self.v_ss < self.v_dd) {
            return Err(CellError::InvalidParams(format!(
                "v_ss ({}) must be below v_dd ({})",
                self.v_ss, self.v_dd
            )));
        }
        Ok(())
    }

    /// Checks that the read transistor conducts over the whole mapped window.
    pub fn validate_window(&self, mapping: &WeightMapping) -> Result<(), CellError> {
        let (lo, hi) = mapping.window();
        if lo < self.v_ss || hi > self.v_dd {
            return Err(CellError::InvalidParams(format!(
                "mapped window [{lo}, {hi}] V exceeds the rails [{}, {}] V",
                self.v_ss, self.v_dd
            )));
        }
        self.conductance(hi).map(|_| ())
    }

    pub fn rails(&self) -> Rails {
        Rails { v_ss: self.v_ss, v_dd: self.v_dd }
    }

    /// Minimum voltage change per update pulse at the nominal current.
    pub fn delta_v_min(&self) -> f64 {
        self.i0 * self.t_pulse / self.c1
    }

    /// Triode conductance of the read transistor, `k (v_dd - v_cap - v_th)`.
    pub fn conductance(&self, v_cap: f64) -> Result<f64, CellError> {
        let overdrive = self.v_dd - v_cap - self.v_th;
        if overdrive <= 0.0 {
            return Err(CellError::TransistorOff { v_cap, overdrive });
        }
        Ok(self.k_trans * overdrive)
    }

    /// Conductance with the transistor treated as fully off past threshold.
    #[inline]
    pub fn conductance_or_off(&self, v_cap: f64) -> f64 {
        (self.k_trans * (self.v_dd - v_cap - self.v_th)).max(0.0)
    }

    pub fn read_current(&self, v_cap: f64, v_sd: f64) -> Result<f64, CellError> {
        Ok(self.conductance(v_cap)? * v_sd)
    }
}

/// Stored state of one cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellState {
    pub v_cap: f64,
}

impl CellState {
    pub fn new(v_cap: f64) -> Self {
        Self { v_cap }
    }

    pub fn clamped(self, rails: Rails) -> Self {
        Self { v_cap: self.v_cap.clamp(rails.v_ss, rails.v_dd) }
    }
}

/// Voltage windows that map the same weight range `|w| <= 1.2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MappingCase {
    A,
    B,
    C,
}

impl MappingCase {
    pub const ALL: [MappingCase; 3] = [MappingCase::A, MappingCase::B, MappingCase::C];

    /// Half of the mapped voltage window: 0.16, 0.24 and 0.48 V full ranges.
    pub fn half_range(self) -> f64 {
        match self {
            MappingCase::A => 0.08,
            MappingCase::B => 0.12,
            MappingCase::C => 0.24,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            MappingCase::A => "A",
            MappingCase::B => "B",
            MappingCase::C => "C",
        }
    }
}

impl std::str::FromStr for MappingCase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "A" | "a" => Ok(MappingCase::A),
            "B" | "b" => Ok(MappingCase::B),
            "C" | "c" => Ok(MappingCase::C),
            other => Err(format!("unknown mapping case {other:?} (expected A, B or C)")),
        }
    }
}

/// Linear correspondence between `|w| <= w_max` and a voltage window
/// centered at `v_center`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightMapping {
    pub v_center: f64,
    pub v_half_range: f64,
    pub w_max: f64,
}

impl Default for WeightMapping {
    fn default() -> Self {
        Self::for_case(MappingCase::B)
    }
}

impl WeightMapping {
    pub const DEFAULT_CENTER: f64 = 0.4;
    pub const DEFAULT_W_MAX: f64 = 1.2;

    pub fn for_case(case: MappingCase) -> Self {
        Self {
            v_center: Self::DEFAULT_CENTER,
            v_half_range: case.half_range(),
            w_max: Self::DEFAULT_W_MAX,
        }
    }

    /// Weight units per volt (magnitude; the mapping itself is inverting).
    pub fn slope(&self) -> f64 {
        self.w_max / self.v_half_range
    }

    pub fn window(&self) -> (f64, f64) {
        (self.v_center - self.v_half_range, self.v_center + self.v_half_range)
    }

    /// Saturating map; weights beyond `w_max` land on the window edge.
    pub fn weight_to_voltage(&self, w: f64) -> f64 {
        self.weight_to_voltage_clipped(w).0
    }

    /// Like [`weight_to_voltage`](Self::weight_to_voltage), also reporting
    /// whether the weight was clipped.
    pub fn weight_to_voltage_clipped(&self, w: f64) -> (f64, bool) {
        let clipped = w.abs() > self.w_max;
        let w = w.clamp(-self.w_max, self.w_max);
        (self.voltage_at(w), clipped)
    }

    /// Saturating inverse map; voltages outside the window read as `+-w_max`.
    pub fn voltage_to_weight(&self, v: f64) -> f64 {
        self.weight_at(v).clamp(-self.w_max, self.w_max)
    }

    /// Unclipped linear weight of a voltage. This is what an array read
    /// measures for a cell that has drifted outside the window.
    #[inline]
    pub fn weight_at(&self, v: f64) -> f64 {
        (self.v_center - v) * self.w_max / self.v_half_range
    }

    /// Unclipped linear voltage of a weight.
    #[inline]
    pub fn voltage_at(&self, w: f64) -> f64 {
        self.v_center - w / self.w_max * self.v_half_range
    }
}

/// Update polarity. `Up` charges the capacitor toward `v_dd`, which lowers
/// the weight.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Direction {
    Up,
    Down,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentSample {
    pub v_cap: f64,
    pub i_up: f64,
    pub i_down: f64,
}

/// Measured or simulated charge/discharge currents, linearly interpolated
/// and held constant beyond the first and last sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurrentTable {
    samples: Vec<CurrentSample>,
}

impl CurrentTable {
    pub fn new(samples: Vec<CurrentSample>) -> Result<Self, CellError> {
        if samples.len() < 2 {
            return Err(CellError::InvalidTable("need at least two samples".into()));
        }
        for pair in samples.windows(2) {
            if !(pair[1].v_cap > pair[0].v_cap) {
                return Err(CellError::InvalidTable(format!(
                    "v_cap must increase strictly ({} then {})",
                    pair[0].v_cap, pair[1].v_cap
                )));
            }
        }
        if let Some(s) = samples.iter().find(|s| !(s.i_up > 0.0 && s.i_down > 0.0)) {
            return Err(CellError::InvalidTable(format!("non-positive current at v_cap = {}", s.v_cap)));
        }
        Ok(Self { samples })
    }

    /// Reads a `v_cap,i_up,i_down` CSV (SI units).
    pub fn from_csv_reader<R: Read>(reader: R) -> Result<Self, CellError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["v_cap", "i_up", "i_down"];
        if headers.len() != 3 || headers.iter().zip(expected).any(|(h, e)| h != e) {
            return Err(CellError::InvalidTable(format!(
                "expected header v_cap,i_up,i_down, got {}",
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let samples = rdr.deserialize().collect::<Result<Vec<CurrentSample>, _>>()?;
        Self::new(samples)
    }

    pub fn from_csv_path(path: impl AsRef<Path>) -> Result<Self, CellError> {
        Self::from_csv_reader(std::fs::File::open(path)?)
    }

    pub fn samples(&self) -> &[CurrentSample] {
        &self.samples
    }

    fn interpolate(&self, v: f64) -> (f64, f64) {
        let s = &self.samples;
        let first = s[0];
        let last = s[s.len() - 1];
        if v <= first.v_cap {
            return (first.i_up, first.i_down);
        }
        if v >= last.v_cap {
            return (last.i_up, last.i_down);
        }
        let hi = s.partition_point(|p| p.v_cap <= v);
        let (a, b) = (s[hi - 1], s[hi]);
        let t = (v - a.v_cap) / (b.v_cap - a.v_cap);
        (a.i_up + t * (b.i_up - a.i_up), a.i_down + t * (b.i_down - a.i_down))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CurveShape {
    /// Matched currents `i0` everywhere.
    Flat,
    /// Current sources leaving saturation near the rails:
    /// `i_up = i0 (1 - exp(-(v_dd - v)/v_knee))`,
    /// `i_down = i0 (1 - exp(-(v - v_ss)/v_knee))`.
    AnalyticKnee { v_knee: f64 },
    Table(CurrentTable),
}

/// Voltage-dependent charge (`Up`) and discharge (`Down`) currents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateCurve {
    pub shape: CurveShape,
    pub i0: f64,
}

impl UpdateCurve {
    pub const DEFAULT_V_KNEE: f64 = 0.08;

    pub fn flat(i0: f64) -> Self {
        Self { shape: CurveShape::Flat, i0 }
    }

    pub fn knee(i0: f64, v_knee: f64) -> Self {
        Self { shape: CurveShape::AnalyticKnee { v_knee }, i0 }
    }

    pub fn table(table: CurrentTable) -> Self {
        let i0 = table.samples().iter().map(|s| s.i_up.max(s.i_down)).fold(0.0, f64::max);
        Self { shape: CurveShape::Table(table), i0 }
    }

    pub fn is_flat(&self) -> bool {
        matches!(self.shape, CurveShape::Flat)
    }

    #[inline]
    pub fn i_up(&self, rails: Rails, v: f64) -> f64 {
        match &self.shape {
            CurveShape::Flat => self.i0,
            CurveShape::AnalyticKnee { v_knee } => self.i0 * (1.0 - (-(rails.v_dd - v) / v_knee).exp()),
            CurveShape::Table(t) => t.interpolate(v).0,
        }
    }

    #[inline]
    pub fn i_down(&self, rails: Rails, v: f64) -> f64 {
        match &self.shape {
            CurveShape::Flat => self.i0,
            CurveShape::AnalyticKnee { v_knee } => self.i0 * (1.0 - (-(v - rails.v_ss) / v_knee).exp()),
            CurveShape::Table(t) => t.interpolate(v).1,
        }
    }

    #[inline]
    pub fn current(&self, dir: Direction, rails: Rails, v: f64) -> f64 {
        match dir {
            Direction::Up => self.i_up(rails, v),
            Direction::Down => self.i_down(rails, v),
        }
    }

    /// `i_up(v) / i_down(v)`, defined strictly between the rails.
    pub fn symmetry_ratio(&self, rails: Rails, v: f64) -> Result<f64, CellError> {
        if !(v > rails.v_ss && v < rails.v_dd) {
            return Err(CellError::OutsideRails { v, v_ss: rails.v_ss, v_dd: rails.v_dd });
        }
        Ok(self.i_up(rails, v) / self.i_down(rails, v))
    }
}

/// One explicit-Euler pulse step. Returns the new voltage and whether a rail
/// clamp was hit.
#[inline]
pub(crate) fn pulse_step(v: f64, params: &CellParams, curve: &UpdateCurve, dir: Direction) -> (f64, bool) {
    let rails = params.rails();
    let dv = curve.current(dir, rails, v) * params.t_pulse / params.c1;
    let next = match dir {
        Direction::Up => v + dv,
        Direction::Down => v - dv,
    };
    if next > rails.v_dd {
        (rails.v_dd, true)
    } else if next < rails.v_ss {
        (rails.v_ss, true)
    } else {
        (next, false)
    }
}

/// Applies `n_pulses` sequential update pulses.
pub fn pulse_update(
    state: CellState,
    params: &CellParams,
    curve: &UpdateCurve,
    direction: Direction,
    n_pulses: u32,
) -> CellState {
    let mut v = state.v_cap;
    for _ in 0..n_pulses {
        v = pulse_step(v, params, curve, direction).0;
    }
    CellState { v_cap: v }
}

/// Retention time constant in units of one training image. Infinite means
/// no decay.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Tau(#[serde(with = "crate::serde_inf")] pub f64);

impl Tau {
    pub const INFINITE: Tau = Tau(f64::INFINITY);

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// `exp(-dt / tau)`, exactly 1 for an infinite tau.
    pub fn decay_factor(self, dt_images: f64) -> f64 {
        if self.is_infinite() {
            1.0
        } else {
            (-dt_images / self.0).exp()
        }
    }

    /// Compact label used in run ids: `inf`, `1e4`, `2.5e5`.
    pub fn label(self) -> String {
        if self.is_infinite() {
            return "inf".into();
        }
        let exp = self.0.log10().floor() as i32;
        let mantissa = self.0 / 10f64.powi(exp);
        if (mantissa - mantissa.round()).abs() < 1e-9 && mantissa.round() == 1.0 {
            format!("1e{exp}")
        } else {
            format!("{}e{exp}", (mantissa * 1000.0).round() / 1000.0)
        }
    }
}

impl std::str::FromStr for Tau {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match crate::serde_inf::parse_f64_or_inf(s) {
            Some(v) if v > 0.0 => Ok(Tau(v)),
            _ => Err(format!("invalid tau {s:?}: expected a positive number or \"inf\"")),
        }
    }
}

/// Where leaked charge drives the capacitor voltage.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeakTarget {
    /// The zero-weight voltage of the mapping (weights decay to 0).
    Center,
    /// A fixed voltage, e.g. a rail reached through off-state currents.
    Voltage(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeakModel {
    pub tau_images: Tau,
    /// Duration of one training image in seconds.
    pub t_image: f64,
    pub target: LeakTarget,
}

impl Default for LeakModel {
    fn default() -> Self {
        Self { tau_images: Tau::INFINITE, t_image: 200e-9, target: LeakTarget::Center }
    }
}

impl LeakModel {
    pub fn with_tau(tau_images: Tau) -> Self {
        Self { tau_images, ..Self::default() }
    }

    /// Retention time in seconds.
    pub fn retention_seconds(&self) -> f64 {
        self.tau_images.0 * self.t_image
    }

    pub fn target_voltage(&self, mapping: &WeightMapping) -> f64 {
        match self.target {
            LeakTarget::Center => mapping.v_center,
            LeakTarget::Voltage(v) => v,
        }
    }
}

/// Exponential relaxation of the stored voltage over `dt_images`.
pub fn leak(state: CellState, mapping: &WeightMapping, dt_images: f64, model: &LeakModel) -> CellState {
    let target = model.target_voltage(mapping);
    let factor = model.tau_images.decay_factor(dt_images);
    CellState { v_cap: target + (state.v_cap - target) * factor }
}

/// Targets a cell must meet to train well.
pub mod targets {
    pub const LEVELS: f64 = 1000.0;
    pub const PULSE_DURATION: f64 = 1e-9;
    pub const R_DEVICE: f64 = 24e6;
    pub const ON_OFF: f64 = 8.0;
    pub const SYMMETRY: f64 = 1.05;
    pub const DEVICE_AREA_UM2: f64 = 0.04;

    pub const ON_OFF_TOLERANCE: f64 = 0.10;
    pub const R_DEVICE_TOLERANCE: f64 = 0.10;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplianceFlags {
    pub levels: bool,
    pub pulse_duration: bool,
    pub r_center: bool,
    pub on_off: bool,
    pub symmetry: bool,
}

impl ComplianceFlags {
    pub fn all(&self) -> bool {
        self.levels && self.pulse_duration && self.r_center && self.on_off && self.symmetry
    }
}

/// Compliance summary of one cell design against the desired RPU properties.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellReport {
    pub levels: u64,
    pub on_off_ratio: f64,
    pub r_center: f64,
    pub max_asymmetry: f64,
    /// Voltage where `max_asymmetry` occurs.
    pub worst_asymmetry_v: f64,
    pub pulse_duration: f64,
    pub delta_v_min: f64,
    /// Full device window used for levels and on/off.
    pub device_window: (f64, f64),
    /// Operating window used for symmetry.
    pub mapping_window: (f64, f64),
    pub pass: ComplianceFlags,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplianceRow {
    pub property: &'static str,
    pub target: String,
    pub achieved: String,
    /// `None` for properties that are not modeled.
    pub pass: Option<bool>,
}

impl CellReport {
    pub fn rows(&self) -> Vec<ComplianceRow> {
        vec![
            ComplianceRow {
                property: "Storage capacity",
                target: format!(">= {} levels", targets::LEVELS),
                achieved: format!("{} levels", self.levels),
                pass: Some(self.pass.levels),
            },
            ComplianceRow {
                property: "Update pulse duration",
                target: format!("{} ns", targets::PULSE_DURATION * 1e9),
                achieved: format!("{} ns", self.pulse_duration * 1e9),
                pass: Some(self.pass.pulse_duration),
            },
            ComplianceRow {
                property: "Average device resistance",
                target: format!("{} MOhm", targets::R_DEVICE / 1e6),
                achieved: format!("{:.3} MOhm", self.r_center / 1e6),
                pass: Some(self.pass.r_center),
            },
            ComplianceRow {
                property: "On/off ratio",
                target: format!("{}", targets::ON_OFF),
                achieved: format!("{:.4}", self.on_off_ratio),
                pass: Some(self.pass.on_off),
            },
            ComplianceRow {
                property: "Up/down symmetry",
                target: format!("<= {}", targets::SYMMETRY),
                achieved: format!("{:.4} (at {:.3} V)", self.max_asymmetry, self.worst_asymmetry_v),
                pass: Some(self.pass.symmetry),
            },
            ComplianceRow {
                property: "Device area",
                target: format!("{} um^2", targets::DEVICE_AREA_UM2),
                achieved: "not modeled".into(),
                pass: None,
            },
        ]
    }
}

/// Samples used to scan the mapping window for the worst asymmetry.
const ASYMMETRY_GRID: usize = 2001;

/// Evaluates a cell design against the desired RPU properties.
///
/// Storage levels and on/off ratio describe the device and are taken over
/// the full window (`v_center +- 0.24 V`); symmetry is taken over the
/// operating window of `mapping`.
pub fn characterize(
    params: &CellParams,
    mapping: &WeightMapping,
    curve: &UpdateCurve,
) -> Result<CellReport, CellError> {
    params.validate()?;
    let full_half = MappingCase::C.half_range();
    let device_window = (mapping.v_center - full_half, mapping.v_center + full_half);
    let dv = params.delta_v_min();
    let levels = ((2.0 * full_half) / dv + 1e-9).floor() as u64;

    let g_hi = params.conductance(device_window.0)?;
    let g_lo = params.conductance(device_window.1)?;
    let on_off_ratio = g_hi / g_lo;
    let r_center = 1.0 / params.conductance(mapping.v_center)?;

    let rails = params.rails();
    let (lo, hi) = mapping.window();
    let mut max_asymmetry = 1.0;
    let mut worst_asymmetry_v = mapping.v_center;
    for k in 0..ASYMMETRY_GRID {
        let v = lo + (hi - lo) * k as f64 / (ASYMMETRY_GRID - 1) as f64;
        let r = curve.symmetry_ratio(rails, v)?;
        let a = r.max(1.0 / r);
        if a > max_asymmetry {
            max_asymmetry = a;
            worst_asymmetry_v = v;
        }
    }

    let pass = ComplianceFlags {
        levels: levels as f64 >= targets::LEVELS,
        pulse_duration: params.t_pulse <= targets::PULSE_DURATION * (1.0 + 1e-9),
        r_center: (r_center / targets::R_DEVICE - 1.0).abs() <= targets::R_DEVICE_TOLERANCE,
        on_off: (on_off_ratio / targets::ON_OFF - 1.0).abs() <= targets::ON_OFF_TOLERANCE,
        symmetry: max_asymmetry <= targets::SYMMETRY,
    };
    Ok(CellReport {
        levels,
        on_off_ratio,
        r_center,
        max_asymmetry,
        worst_asymmetry_v,
        pulse_duration: params.t_pulse,
        delta_v_min: dv,
        device_window,
        mapping_window: (lo, hi),
        pass,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn conductance_at_center_and_window_edges() {
        let p = CellParams::default();
        // 1/24 MOhm = 4.1667e-8 S; the rounded defaults land within 0.03 %.
        assert!(close(p.conductance(0.4).unwrap(), 4.1667e-8, 1e-3));
        assert!(close(p.conductance(0.16).unwrap(), 7.406e-8, 1e-3));
        assert!(close(p.conductance(0.64).unwrap(), 9.257e-9, 1e-3));
        let ratio = p.conductance(0.16).unwrap() / p.conductance(0.64).unwrap();
        assert!(close(ratio, 8.0, 1e-3), "ratio {ratio}");
    }

    #[test]
    fn conductance_errors_when_transistor_is_off() {
        let p = CellParams::default();
        let edge = p.v_dd - p.v_th + 1e-12;
        assert!(matches!(p.conductance(edge), Err(CellError::TransistorOff { .. })));
        assert!(matches!(p.conductance(0.79), Err(CellError::TransistorOff { .. })));
        assert_eq!(p.conductance_or_off(edge), 0.0);
    }

    #[test]
    fn read_current_examples() {
        let p = CellParams::default();
        assert!(close(p.read_current(0.4, 0.1).unwrap(), 4.167e-9, 1e-3));
        assert!(close(p.read_current(0.16, 0.1).unwrap(), 7.406e-9, 1e-3));
        assert_eq!(p.read_current(0.4, 0.0).unwrap(), 0.0);
    }

    #[test]
    fn mapping_case_examples() {
        let b = WeightMapping::for_case(MappingCase::B);
        assert_eq!(b.weight_to_voltage(0.0), 0.4);
        assert!((b.weight_to_voltage(1.2) - 0.28).abs() < 1e-15);
        assert!((b.weight_to_voltage(-1.2) - 0.52).abs() < 1e-15);
        let c = WeightMapping::for_case(MappingCase::C);
        assert!((c.weight_to_voltage(-1.2) - 0.64).abs() < 1e-15);
        let a = WeightMapping::for_case(MappingCase::A);
        assert!((a.window().1 - a.window().0 - 0.16).abs() < 1e-15);
    }

    #[test]
    fn mapping_clips_out_of_range() {
        let b = WeightMapping::for_case(MappingCase::B);
        let (v, clipped) = b.weight_to_voltage_clipped(2.0);
        assert!(clipped);
        assert!((v - 0.28).abs() < 1e-15);
        assert_eq!(b.voltage_to_weight(0.1), 1.2);
        assert_eq!(b.voltage_to_weight(0.7), -1.2);
        assert!(!b.weight_to_voltage_clipped(1.2).1);
    }

    #[test]
    fn delta_v_min_gives_1000_levels() {
        let p = CellParams::default();
        assert!((p.delta_v_min() - 0.48e-3).abs() < 1e-15);
    }

    #[test]
    fn single_step_matches_charge_equation() {
        let p = CellParams::default();
        let curve = UpdateCurve::knee(p.i0, 0.08);
        for &(v, dir) in &[(0.3, Direction::Up), (0.55, Direction::Down), (0.62, Direction::Up)] {
            let i = match dir {
                Direction::Up => p.i0 * (1.0 - (-(p.v_dd - v) / 0.08f64).exp()),
                Direction::Down => p.i0 * (1.0 - (-(v - p.v_ss) / 0.08f64).exp()),
            };
            let oracle = i * p.t_pulse / p.c1;
            let after = pulse_update(CellState::new(v), &p, &curve, dir, 1).v_cap;
            assert!(((after - v).abs() - oracle).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_pulses_is_identity() {
        let p = CellParams::default();
        let s = CellState::new(0.37);
        assert_eq!(pulse_update(s, &p, &UpdateCurve::flat(p.i0), Direction::Up, 0), s);
    }

    #[test]
    fn thousand_flat_up_pulses_traverse_full_window() {
        let p = CellParams::default();
        let s = pulse_update(CellState::new(0.16), &p, &UpdateCurve::flat(p.i0), Direction::Up, 1000);
        assert!(close(s.v_cap, 0.64, 0.01));
    }

    #[test]
    fn pulses_clamp_at_rails() {
        let p = CellParams::default();
        let flat = UpdateCurve::flat(p.i0);
        let s = pulse_update(CellState::new(0.79), &p, &flat, Direction::Up, 100);
        assert_eq!(s.v_cap, p.v_dd);
        let s = pulse_update(CellState::new(0.01), &p, &flat, Direction::Down, 100);
        assert_eq!(s.v_cap, p.v_ss);
    }

    #[test]
    fn leak_examples() {
        let m = WeightMapping::default();
        let model = LeakModel::with_tau(Tau(1e4));
        let s = leak(CellState::new(m.voltage_at(1.0)), &m, 1e4, &model);
        assert!((m.weight_at(s.v_cap) - 0.36788).abs() < 1e-5);
        let still = LeakModel::with_tau(Tau::INFINITE);
        let s0 = CellState::new(0.31);
        assert_eq!(leak(s0, &m, 1e9, &still), s0);
        let center = CellState::new(m.v_center);
        assert_eq!(leak(center, &m, 123.0, &model), center);
    }

    #[test]
    fn leak_toward_fixed_voltage() {
        let m = WeightMapping::default();
        let model = LeakModel { target: LeakTarget::Voltage(0.0), ..LeakModel::with_tau(Tau(10.0)) };
        let s = leak(CellState::new(0.4), &m, 10.0, &model);
        assert!((s.v_cap - 0.4 * (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn retention_at_tau_one_million_is_fifth_of_a_second() {
        let model = LeakModel::with_tau(Tau(1e6));
        assert!((model.retention_seconds() - 0.2).abs() < 1e-12);
    }

    #[test]
    fn symmetry_ratio_examples() {
        let p = CellParams::default();
        let knee = UpdateCurve::knee(p.i0, 0.08);
        let r = p.rails();
        assert!((knee.symmetry_ratio(r, 0.4).unwrap() - 1.0).abs() < 1e-15);
        assert!((knee.symmetry_ratio(r, 0.52).unwrap() - 0.97126).abs() < 1e-5);
        assert!((knee.symmetry_ratio(r, 0.64).unwrap() - 0.86495).abs() < 1e-5);
        assert!(matches!(knee.symmetry_ratio(r, 0.0), Err(CellError::OutsideRails { .. })));
        assert!(matches!(knee.symmetry_ratio(r, 0.8), Err(CellError::OutsideRails { .. })));
    }

    #[test]
    fn characterize_defaults() {
        let p = CellParams::default();
        let curve = UpdateCurve::knee(p.i0, 0.08);
        let c = characterize(&p, &WeightMapping::for_case(MappingCase::C), &curve).unwrap();
        assert_eq!(c.levels, 1000);
        assert!(close(c.on_off_ratio, 8.0, 1e-3));
        assert!(close(c.r_center, 24e6, 1e-3));
        assert_eq!(c.pulse_duration, 1e-9);
        assert!((c.max_asymmetry - 1.156).abs() < 1e-3);
        assert!(!c.pass.symmetry);

        let b = characterize(&p, &WeightMapping::for_case(MappingCase::B), &curve).unwrap();
        assert!((b.max_asymmetry - 1.029).abs() < 1e-3);
        assert!(b.pass.all());
    }

    #[test]
    fn characterize_flags_slow_pulse_and_soft_knee() {
        let p = CellParams { t_pulse: 2e-9, ..CellParams::default() };
        let r = characterize(&p, &WeightMapping::default(), &UpdateCurve::knee(p.i0, 0.08)).unwrap();
        assert!(!r.pass.pulse_duration);
        let p = CellParams::default();
        let r = characterize(&p, &WeightMapping::default(), &UpdateCurve::knee(p.i0, 0.12)).unwrap();
        assert!(!r.pass.symmetry, "asymmetry {}", r.max_asymmetry);
    }

    #[test]
    fn table_curve_interpolates_and_holds_ends() {
        let csv = "v_cap,i_up,i_down\n0.0,4e-8,1e-8\n0.4,4.8e-8,4.8e-8\n0.8,1e-8,4e-8\n";
        let t = CurrentTable::from_csv_reader(csv.as_bytes()).unwrap();
        let curve = UpdateCurve::table(t);
        let r = CellParams::default().rails();
        assert!((curve.i_up(r, 0.2) - 4.4e-8).abs() < 1e-20);
        assert!((curve.i_down(r, 0.6) - 4.4e-8).abs() < 1e-20);
        assert_eq!(curve.i_up(r, -1.0), 4e-8);
        assert_eq!(curve.i_down(r, 2.0), 4e-8);
        assert_eq!(curve.i0, 4.8e-8);
    }

    #[test]
    fn table_rejects_bad_input() {
        let unsorted = "v_cap,i_up,i_down\n0.4,1,1\n0.2,1,1\n";
        assert!(matches!(CurrentTable::from_csv_reader(unsorted.as_bytes()), Err(CellError::InvalidTable(_))));
        let header = "v,i_up,i_down\n0.1,1,1\n0.2,1,1\n";
        assert!(matches!(CurrentTable::from_csv_reader(header.as_bytes()), Err(CellError::InvalidTable(_))));
        let zero = "v_cap,i_up,i_down\n0.1,0,1\n0.2,1,1\n";
        assert!(matches!(CurrentTable::from_csv_reader(zero.as_bytes()), Err(CellError::InvalidTable(_))));
    }

    #[test]
    fn tau_labels() {
        assert_eq!(Tau(1e4).label(), "1e4");
        assert_eq!(Tau(1e6).label(), "1e6");
        assert_eq!(Tau(2.5e5).label(), "2.5e5");
        assert_eq!(Tau::INFINITE.label(), "inf");
        assert_eq!("inf".parse::<Tau>().unwrap(), Tau::INFINITE);
        assert!("-3".parse::<Tau>().is_err());
    }

    #[test]
    fn conductance_is_affine_over_window() {
        let p = CellParams::default();
        let n = 101;
        let vs: Vec<f64> = (0..n).map(|k| 0.16 + 0.48 * k as f64 / (n - 1) as f64).collect();
        let gs: Vec<f64> = vs.iter().map(|&v| p.conductance(v).unwrap()).collect();
        let mv = vs.iter().sum::<f64>() / n as f64;
        let mg = gs.iter().sum::<f64>() / n as f64;
        let sxy: f64 = vs.iter().zip(&gs).map(|(v, g)| (v - mv) * (g - mg)).sum();
        let sxx: f64 = vs.iter().map(|v| (v - mv).powi(2)).sum();
        let slope = sxy / sxx;
        let icept = mg - slope * mv;
        let worst = vs.iter().zip(&gs).map(|(v, g)| (g - (icept + slope * v)).abs()).fold(0.0, f64::max);
        assert!(worst < 1e-20, "residual {worst}");
        assert!((slope + p.k_trans).abs() < 1e-18);
    }

    proptest! {
        #[test]
        fn conductance_and_weight_are_monotone(a in 0.16f64..0.64, b in 0.16f64..0.64) {
            prop_assume!(a < b);
            let p = CellParams::default();
            let m = WeightMapping::for_case(MappingCase::C);
            prop_assert!(p.conductance(a).unwrap() > p.conductance(b).unwrap());
            prop_assert!(m.voltage_to_weight(a) > m.voltage_to_weight(b));
        }

        #[test]
        fn weight_round_trip(w in -1.2f64..=1.2, case in 0usize..3) {
            let m = WeightMapping::for_case(MappingCase::ALL[case]);
            prop_assert!((m.voltage_to_weight(m.weight_to_voltage(w)) - w).abs() <= 1e-12);
        }

        #[test]
        fn flat_traverse_returns_to_start(v0 in 0.2f64..0.6, n in 0u32..400) {
            let p = CellParams::default();
            let flat = UpdateCurve::flat(p.i0);
            let up = pulse_update(CellState::new(v0), &p, &flat, Direction::Up, n);
            let back = pulse_update(up, &p, &flat, Direction::Down, n);
            prop_assert!((back.v_cap - v0).abs() <= 1e-12);
        }

        #[test]
        fn pulses_and_leak_stay_within_rails(
            v0 in 0.0f64..=0.8,
            ops in proptest::collection::vec((any::<bool>(), 0u32..3000, 0.0f64..1e5), 1..8),
        ) {
            let p = CellParams::default();
            let m = WeightMapping::default();
            let knee = UpdateCurve::knee(p.i0, 0.08);
            let model = LeakModel::with_tau(Tau(1e4));
            let mut s = CellState::new(v0);
            for (up, n, dt) in ops {
                let dir = if up { Direction::Up } else { Direction::Down };
                s = pulse_update(s, &p, &knee, dir, n);
                s = leak(s, &m, dt, &model);
                prop_assert!(s.v_cap >= p.v_ss && s.v_cap <= p.v_dd);
            }
        }

        #[test]
        fn leak_is_a_semigroup(v0 in 0.0f64..0.8, a in 0.0f64..5e4, b in 0.0f64..5e4) {
            let m = WeightMapping::default();
            let model = LeakModel::with_tau(Tau(1e4));
            let s = CellState::new(v0);
            let twice = leak(leak(s, &m, a, &model), &m, b, &model);
            let once = leak(s, &m, a + b, &model);
            prop_assert!((twice.v_cap - once.v_cap).abs() <= 1e-12);
        }

        #[test]
        fn knee_ratio_is_reciprocal_about_center(d in 0.0f64..0.39) {
            let p = CellParams::default();
            let knee = UpdateCurve::knee(p.i0, 0.08);
            let r = p.rails();
            let up = knee.symmetry_ratio(r, 0.4 + d).unwrap();
            let down = knee.symmetry_ratio(r, 0.4 - d).unwrap();
            prop_assert!((up * down - 1.0).abs() < 1e-12);
        }
    }
}
