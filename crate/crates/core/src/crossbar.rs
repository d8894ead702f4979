//! Crossbar array of RPU cells with its read and update peripherals.
//!
//! Orientation: inputs of the forward pass drive the rows, outputs are
//! integrated on the columns, so a forward read computes
//! `y_j = sum_i w_ij x_i`. The backward pass drives the columns and
//! integrates on the rows (`z_i = sum_j w_ij d_j`). Updates fire row pulse
//! trains from `x` and column pulse trains from `d`.

use crate::cell::{self, CellError, CellParams, Direction, LeakModel, Tau, UpdateCurve, WeightMapping};
use crate::matrix::Matrix;
use rand::Rng;
use rand_distr::{Distribution, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CrossbarError {
    #[error("{what}: expected length {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    #[error("invalid crossbar configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Cell(#[from] CellError),
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<(), CrossbarError> {
    if expected == got {
        Ok(())
    } else {
        Err(CrossbarError::DimensionMismatch { what, expected, got })
    }
}

/// Read peripheral settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReadConfig {
    /// Source-drain bias of the read transistor during a read pulse.
    pub v_read: f64,
    /// Full-scale PWM pulse duration (|x| = 1).
    pub t_max: f64,
    /// Duration quantization; `None` leaves durations continuous.
    pub pwm_bits: Option<u32>,
    /// Output quantization; `None` disables the ADC model.
    pub adc_bits: Option<u32>,
    /// Integrator clip in weight x input units.
    #[serde(with = "crate::serde_inf")]
    pub bound: f64,
    /// Std of additive Gaussian noise on each integrated output.
    pub noise_sigma: f64,
    pub reference_subtraction: bool,
    /// Halving retries of bound management.
    pub bm_retries: u32,
}

impl Default for ReadConfig {
    fn default() -> Self {
        Self {
            v_read: 0.1,
            t_max: 80e-9,
            pwm_bits: Some(5),
            adc_bits: Some(9),
            bound: 12.0,
            noise_sigma: 0.06,
            reference_subtraction: true,
            bm_retries: 5,
        }
    }
}

impl ReadConfig {
    /// No noise, no quantization, no bound.
    pub fn ideal() -> Self {
        Self {
            pwm_bits: None,
            adc_bits: None,
            bound: f64::INFINITY,
            noise_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn noise_free(mut self) -> Self {
        self.noise_sigma = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), CrossbarError> {
        let bad = |m: String| Err(CrossbarError::InvalidConfig(m));
        if !(self.t_max > 0.0) {
            return bad(format!("t_max must be positive, got {}", self.t_max));
        }
        if !(self.v_read > 0.0) {
            return bad(format!("v_read must be positive, got {}", self.v_read));
        }
        if !(self.bound > 0.0) {
            return bad(format!("bound must be positive, got {}", self.bound));
        }
        if !(self.noise_sigma >= 0.0) {
            return bad(format!("noise_sigma must be non-negative, got {}", self.noise_sigma));
        }
        for (name, bits) in [("pwm_bits", self.pwm_bits), ("adc_bits", self.adc_bits)] {
            if let Some(b) = bits {
                if !(1..=30).contains(&b) {
                    return bad(format!("{name} must be in 1..=30, got {b}"));
                }
            }
        }
        if self.adc_bits.is_some() && self.bound.is_infinite() {
            return bad("adc quantization needs a finite bound".into());
        }
        Ok(())
    }

    /// PWM pulse duration for an input magnitude; `|x| > 1` saturates at
    /// full scale.
    pub fn pwm_duration(&self, x: f64) -> f64 {
        let m = x.abs().min(1.0);
        let m = match self.pwm_bits {
            Some(bits) => {
                let steps = ((1u64 << bits) - 1) as f64;
                (m * steps).round() / steps
            }
            None => m,
        };
        m * self.t_max
    }

    /// Uniform mid-rise quantizer over `[-bound, bound]`.
    pub fn quantize(&self, y: f64) -> f64 {
        match self.adc_bits {
            None => y,
            Some(bits) => {
                let levels = (1u64 << bits) as f64;
                let step = 2.0 * self.bound / levels;
                let idx = ((y + self.bound) / step).floor().clamp(0.0, levels - 1.0);
                -self.bound + (idx + 0.5) * step
            }
        }
    }
}

/// Stochastic update settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateConfig {
    /// Pulse slots per update cycle (at most 64).
    pub bl: u32,
    /// Weight change of one coincidence at nominal current.
    pub dw_min: f64,
    /// Stops updates at the mapping window, i.e. at `|w| = w_max`, instead
    /// of only at the rails.
    pub bounded: bool,
}

impl UpdateConfig {
    pub const DEFAULT_BL: u32 = 10;

    pub fn new(bl: u32, params: &CellParams, mapping: &WeightMapping) -> Result<Self, CrossbarError> {
        if !(1..=64).contains(&bl) {
            return Err(CrossbarError::InvalidConfig(format!("bl must be in 1..=64, got {bl}")));
        }
        let dw_min = mapping.slope() * params.delta_v_min();
        Ok(Self { bl, dw_min, bounded: false })
    }

    /// `C = sqrt(lr / (bl * dw_min))`; row and column probabilities are
    /// `C |x_i|` and `C |d_j|`.
    pub fn prob_scale(&self, lr: f64) -> f64 {
        (lr / (self.bl as f64 * self.dw_min)).sqrt()
    }
}

/// Mean weight change of one stochastic update on a flat curve away from
/// the rails. Gradient-descent convention: `-lr x d` while probabilities
/// stay below one.
pub fn expected_update(ucfg: &UpdateConfig, lr: f64, x: f64, d: f64) -> f64 {
    let c = ucfg.prob_scale(lr);
    let p = (c * x.abs()).min(1.0);
    let q = (c * d.abs()).min(1.0);
    let sign = (x * d).signum();
    if x == 0.0 || d == 0.0 {
        return 0.0;
    }
    -(ucfg.bl as f64) * ucfg.dw_min * p * q * sign
}

/// Slot occupancy of one line during an update cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PulseTrain {
    bits: u64,
    len: u32,
}

impl PulseTrain {
    pub fn empty(len: u32) -> Self {
        Self { bits: 0, len }
    }

    /// Each of `len` slots fires independently with probability `p`.
    pub fn sample<R: Rng + ?Sized>(p: f64, len: u32, rng: &mut R) -> Self {
        debug_assert!((1..=64).contains(&len));
        let full = if len == 64 { u64::MAX } else { (1u64 << len) - 1 };
        let bits = if p <= 0.0 {
            0
        } else if p >= 1.0 {
            full
        } else {
            let mut bits = 0u64;
            for k in 0..len {
                if rng.gen::<f64>() < p {
                    bits |= 1 << k;
                }
            }
            bits
        };
        Self { bits, len }
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.bits == 0
    }

    pub fn slot(&self, k: u32) -> bool {
        k < self.len && self.bits >> k & 1 == 1
    }

    pub fn pulses(&self) -> u32 {
        self.bits.count_ones()
    }

    /// Slots where both trains fire.
    #[inline]
    pub fn coincidences(&self, other: &PulseTrain) -> u32 {
        (self.bits & other.bits).count_ones()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub row_pulses: u64,
    pub col_pulses: u64,
    pub coincidences: u64,
    /// Pulse steps that ended on a rail.
    pub rail_clamps: u64,
    /// Pulse steps stopped at the mapping window (bounded updates).
    pub window_clamps: u64,
}

impl std::ops::AddAssign for UpdateStats {
    fn add_assign(&mut self, o: Self) {
        self.row_pulses += o.row_pulses;
        self.col_pulses += o.col_pulses;
        self.coincidences += o.coincidences;
        self.rail_clamps += o.rail_clamps;
        self.window_clamps += o.window_clamps;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReadDirection {
    Forward,
    Backward,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReadOutput {
    pub y: Vec<f64>,
    /// Outputs that reached the integrator bound (before clipping).
    pub saturated: Vec<bool>,
}

impl ReadOutput {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }
}

/// How a managed read normalizes its inputs into the PWM range.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputScaling {
    /// `beta = max(1, max|x|)`: only shrinks inputs that exceed full scale.
    UnitCeiling,
    /// `beta = max|x|`: also stretches small inputs to full scale.
    MaxAbs,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManagedRead {
    pub y: Vec<f64>,
    pub saturated: Vec<bool>,
    pub retries: u32,
    /// Read attempts in which at least one output hit the bound.
    pub saturation_events: u32,
}

impl ManagedRead {
    pub fn any_saturated(&self) -> bool {
        self.saturated.iter().any(|&s| s)
    }
}

/// Retention constants for a whole array.
#[derive(Clone, Debug, PartialEq)]
pub enum LeakField {
    Uniform(LeakModel),
    /// One `tau` per cell (row-major); `model` supplies target and image time.
    PerCell { model: LeakModel, taus: Vec<f64> },
}

impl LeakField {
    /// Per-cell `tau` drawn log-normally with mean `model.tau_images` and
    /// relative standard deviation `rel_std`.
    pub fn per_cell_lognormal<R: Rng + ?Sized>(model: LeakModel, rel_std: f64, cells: usize, rng: &mut R) -> Self {
        let tau = model.tau_images;
        if tau.is_infinite() || rel_std <= 0.0 {
            return LeakField::Uniform(model);
        }
        let sigma2 = (1.0 + rel_std * rel_std).ln();
        let dist = LogNormal::new(tau.0.ln() - sigma2 / 2.0, sigma2.sqrt()).expect("finite log-normal parameters");
        let taus = (0..cells).map(|_| dist.sample(rng)).collect();
        LeakField::PerCell { model, taus }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, LeakField::Uniform(m) if m.tau_images.is_infinite())
    }

    /// Precomputes the decay over `dt_images` for a given mapping.
    pub fn kernel(&self, dt_images: f64, mapping: &WeightMapping) -> DecayKernel {
        match self {
            LeakField::Uniform(m) => DecayKernel {
                target: m.target_voltage(mapping),
                factors: DecayFactors::Uniform(m.tau_images.decay_factor(dt_images)),
            },
            LeakField::PerCell { model, taus } => DecayKernel {
                target: model.target_voltage(mapping),
                factors: DecayFactors::PerCell(taus.iter().map(|&t| Tau(t).decay_factor(dt_images)).collect()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum DecayFactors {
    Uniform(f64),
    PerCell(Vec<f64>),
}

/// Decay of a fixed time step, ready to apply repeatedly.
#[derive(Clone, Debug, PartialEq)]
pub struct DecayKernel {
    target: f64,
    factors: DecayFactors,
}

impl DecayKernel {
    pub fn is_identity(&self) -> bool {
        matches!(self.factors, DecayFactors::Uniform(f) if f == 1.0)
    }
}

/// A `rows x cols` array of capacitor voltages with shared device models.
#[derive(Clone, Debug, PartialEq)]
pub struct Crossbar {
    rows: usize,
    cols: usize,
    v_cap: Vec<f64>,
    params: CellParams,
    mapping: WeightMapping,
    curve: UpdateCurve,
}

impl Crossbar {
    /// All cells start at the zero-weight voltage.
    pub fn new(
        rows: usize,
        cols: usize,
        params: CellParams,
        mapping: WeightMapping,
        curve: UpdateCurve,
    ) -> Result<Self, CrossbarError> {
        if rows == 0 || cols == 0 {
            return Err(CrossbarError::InvalidConfig(format!("array must be at least 1x1, got {rows}x{cols}")));
        }
        params.validate()?;
        params.validate_window(&mapping)?;
        Ok(Self { rows, cols, v_cap: vec![mapping.v_center; rows * cols], params, mapping, curve })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn params(&self) -> &CellParams {
        &self.params
    }

    pub fn mapping(&self) -> &WeightMapping {
        &self.mapping
    }

    pub fn curve(&self) -> &UpdateCurve {
        &self.curve
    }

    /// Row-major capacitor voltages.
    pub fn voltages(&self) -> &[f64] {
        &self.v_cap
    }

    /// Replaces all voltages, clamping each to the rails.
    pub fn set_voltages(&mut self, v: &[f64]) -> Result<(), CrossbarError> {
        check_len("voltages", self.v_cap.len(), v.len())?;
        let rails = self.params.rails();
        for (dst, &src) in self.v_cap.iter_mut().zip(v) {
            *dst = src.clamp(rails.v_ss, rails.v_dd);
        }
        Ok(())
    }

    pub fn v_cap(&self, i: usize, j: usize) -> f64 {
        self.v_cap[i * self.cols + j]
    }

    /// Exact digital view of the weights as the reads see them (linear in
    /// `v_cap`, not clipped at `w_max`).
    pub fn get_weights(&self) -> Matrix {
        Matrix::from_vec(self.rows, self.cols, self.v_cap.iter().map(|&v| self.mapping.weight_at(v)).collect())
    }

    /// Programs the weights, clipping to `+-w_max`. Returns the number of
    /// clipped entries.
    pub fn set_weights(&mut self, w: &Matrix) -> Result<usize, CrossbarError> {
        check_len("weight rows", self.rows, w.rows())?;
        check_len("weight cols", self.cols, w.cols())?;
        let mut clipped = 0;
        for (dst, &wij) in self.v_cap.iter_mut().zip(w.as_slice()) {
            let (v, c) = self.mapping.weight_to_voltage_clipped(wij);
            *dst = v;
            clipped += c as usize;
        }
        Ok(clipped)
    }

    /// Converts integrated charge into weight x input units.
    pub fn output_scale(&self, cfg: &ReadConfig) -> f64 {
        self.mapping.w_max / (self.params.k_trans * self.mapping.v_half_range * cfg.v_read * cfg.t_max)
    }

    /// Offset per full-scale input that a read without reference subtraction
    /// adds to every output: `G(v_center)` expressed in weight units.
    pub fn reference_offset(&self) -> f64 {
        self.params.conductance_or_off(self.mapping.v_center) * self.mapping.w_max
            / (self.params.k_trans * self.mapping.v_half_range)
    }

    pub fn forward_read<R: Rng + ?Sized>(
        &self,
        cfg: &ReadConfig,
        x: &[f64],
        rng: &mut R,
    ) -> Result<ReadOutput, CrossbarError> {
        self.read(ReadDirection::Forward, cfg, x, rng)
    }

    pub fn backward_read<R: Rng + ?Sized>(
        &self,
        cfg: &ReadConfig,
        d: &[f64],
        rng: &mut R,
    ) -> Result<ReadOutput, CrossbarError> {
        self.read(ReadDirection::Backward, cfg, d, rng)
    }

    /// One analog read. Each input becomes a PWM pulse; positive and
    /// negative inputs are applied in two phases whose integrated charges
    /// are subtracted. With reference subtraction the charge of a
    /// zero-weight cell is removed per input, so unipolar conductances
    /// represent signed weights.
    pub fn read<R: Rng + ?Sized>(
        &self,
        dir: ReadDirection,
        cfg: &ReadConfig,
        input: &[f64],
        rng: &mut R,
    ) -> Result<ReadOutput, CrossbarError> {
        let (n_in, n_out) = match dir {
            ReadDirection::Forward => (self.rows, self.cols),
            ReadDirection::Backward => (self.cols, self.rows),
        };
        check_len("read input", n_in, input.len())?;

        let g_ref = if cfg.reference_subtraction {
            self.params.conductance_or_off(self.mapping.v_center)
        } else {
            0.0
        };
        let p = &self.params;
        let cell_g = |v: f64| p.conductance_or_off(v) - g_ref;

        // Pulse durations per phase; an input contributes to exactly one.
        let mut t_pos = vec![0.0; n_in];
        let mut t_neg = vec![0.0; n_in];
        for (k, &x) in input.iter().enumerate() {
            let t = cfg.pwm_duration(x);
            if x > 0.0 {
                t_pos[k] = t;
            } else if x < 0.0 {
                t_neg[k] = t;
            }
        }

        let mut q_pos = vec![0.0; n_out];
        let mut q_neg = vec![0.0; n_out];
        match dir {
            ReadDirection::Forward => {
                for i in 0..self.rows {
                    let (t, acc) = if t_pos[i] > 0.0 {
                        (t_pos[i], &mut q_pos)
                    } else if t_neg[i] > 0.0 {
                        (t_neg[i], &mut q_neg)
                    } else {
                        continue;
                    };
                    let row = &self.v_cap[i * self.cols..(i + 1) * self.cols];
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += cell_g(v) * t;
                    }
                }
            }
            ReadDirection::Backward => {
                for i in 0..self.rows {
                    let row = &self.v_cap[i * self.cols..(i + 1) * self.cols];
                    let (mut sp, mut sn) = (0.0, 0.0);
                    for ((&v, &tp), &tn) in row.iter().zip(&t_pos).zip(&t_neg) {
                        if tp == 0.0 && tn == 0.0 {
                            continue;
                        }
                        let g = cell_g(v);
                        sp += g * tp;
                        sn += g * tn;
                    }
                    q_pos[i] = sp;
                    q_neg[i] = sn;
                }
            }
        }

        let scale = self.output_scale(cfg) * cfg.v_read;
        let mut y = Vec::with_capacity(n_out);
        let mut saturated = Vec::with_capacity(n_out);
        for (qp, qn) in q_pos.into_iter().zip(q_neg) {
            let mut v = (qp - qn) * scale;
            if cfg.noise_sigma > 0.0 {
                let z: f64 = StandardNormal.sample(rng);
                v += cfg.noise_sigma * z;
            }
            let sat = v.abs() >= cfg.bound;
            saturated.push(sat);
            y.push(cfg.quantize(v.clamp(-cfg.bound, cfg.bound)));
        }
        Ok(ReadOutput { y, saturated })
    }

    /// Forward read with inputs divided by `max(1, max|x|)` and outputs
    /// scaled back.
    pub fn noise_managed_read<R: Rng + ?Sized>(
        &self,
        cfg: &ReadConfig,
        x: &[f64],
        rng: &mut R,
    ) -> Result<ReadOutput, CrossbarError> {
        let beta = input_scale(x, InputScaling::UnitCeiling);
        if beta == 1.0 {
            return self.forward_read(cfg, x, rng);
        }
        let scaled: Vec<f64> = x.iter().map(|v| v / beta).collect();
        let mut out = self.forward_read(cfg, &scaled, rng)?;
        out.y.iter_mut().for_each(|v| *v *= beta);
        Ok(out)
    }

    /// Forward noise-managed read with bound management: while an output
    /// saturates and retries remain, halve the inputs and read again.
    pub fn bound_managed_read<R: Rng + ?Sized>(
        &self,
        cfg: &ReadConfig,
        x: &[f64],
        rng: &mut R,
    ) -> Result<ManagedRead, CrossbarError> {
        self.managed_read(ReadDirection::Forward, cfg, x, InputScaling::UnitCeiling, rng)
    }

    /// Noise management with the chosen input scaling, then bound
    /// management. Never fails on saturation: an exhausted retry budget
    /// returns the clipped result with its flags set.
    pub fn managed_read<R: Rng + ?Sized>(
        &self,
        dir: ReadDirection,
        cfg: &ReadConfig,
        x: &[f64],
        scaling: InputScaling,
        rng: &mut R,
    ) -> Result<ManagedRead, CrossbarError> {
        let beta = input_scale(x, scaling);
        let mut retries = 0;
        let mut saturation_events = 0;
        loop {
            let factor = beta * f64::powi(2.0, retries as i32);
            let scaled: Vec<f64> = if factor == 1.0 { x.to_vec() } else { x.iter().map(|v| v / factor).collect() };
            let out = self.read(dir, cfg, &scaled, rng)?;
            let saturated = out.any_saturated();
            saturation_events += saturated as u32;
            if !saturated || retries >= cfg.bm_retries {
                let y = out.y.into_iter().map(|v| v * factor).collect();
                return Ok(ManagedRead { y, saturated: out.saturated, retries, saturation_events });
            }
            retries += 1;
        }
    }

    /// Stochastic coincidence update.
    ///
    /// Row `i` fires each of `bl` slots with probability `min(1, C|x_i|)`,
    /// column `j` with `min(1, C|d_j|)`. The cycle runs in four sign
    /// sub-phases: same-sign pairs `(+,+)`, `(-,-)` charge the capacitor
    /// (weight decreases), mixed pairs `(+,-)`, `(-,+)` discharge it (weight
    /// increases), giving `E[dw_ij] = -lr x_i d_j` on a flat curve. Every
    /// coincident slot is one pulse on cell `(i, j)`.
    pub fn stochastic_update<R: Rng + ?Sized>(
        &mut self,
        ucfg: &UpdateConfig,
        x: &[f64],
        d: &[f64],
        lr: f64,
        rng: &mut R,
    ) -> Result<UpdateStats, CrossbarError> {
        check_len("update rows", self.rows, x.len())?;
        check_len("update cols", self.cols, d.len())?;
        let mut stats = UpdateStats::default();
        if !(lr > 0.0) {
            return Ok(stats);
        }
        let c = ucfg.prob_scale(lr);
        let (lo, hi) = if ucfg.bounded { self.mapping.window() } else { (f64::NEG_INFINITY, f64::INFINITY) };
        let row_trains: Vec<PulseTrain> = x.iter().map(|&v| PulseTrain::sample(c * v.abs(), ucfg.bl, rng)).collect();
        let col_trains: Vec<PulseTrain> = d.iter().map(|&v| PulseTrain::sample(c * v.abs(), ucfg.bl, rng)).collect();
        stats.row_pulses = row_trains.iter().map(|t| t.pulses() as u64).sum();
        stats.col_pulses = col_trains.iter().map(|t| t.pulses() as u64).sum();

        let split = |vals: &[f64], trains: &[PulseTrain]| {
            let mut pos = Vec::new();
            let mut neg = Vec::new();
            for (k, (&v, t)) in vals.iter().zip(trains).enumerate() {
                if t.is_empty() {
                    continue;
                }
                if v > 0.0 {
                    pos.push(k);
                } else if v < 0.0 {
                    neg.push(k);
                }
            }
            (pos, neg)
        };
        let (rows_pos, rows_neg) = split(x, &row_trains);
        let (cols_pos, cols_neg) = split(d, &col_trains);

        let phases = [
            (&rows_pos, &cols_pos, Direction::Up),
            (&rows_neg, &cols_neg, Direction::Up),
            (&rows_pos, &cols_neg, Direction::Down),
            (&rows_neg, &cols_pos, Direction::Down),
        ];
        for (rows, cols, dir) in phases {
            for &i in rows.iter() {
                let rt = row_trains[i];
                let base = i * self.cols;
                for &j in cols.iter() {
                    let n = rt.coincidences(&col_trains[j]);
                    if n == 0 {
                        continue;
                    }
                    stats.coincidences += n as u64;
                    let mut v = self.v_cap[base + j];
                    for _ in 0..n {
                        let (next, clamped) = cell::pulse_step(v, &self.params, &self.curve, dir);
                        stats.rail_clamps += clamped as u64;
                        v = if next > hi {
                            stats.window_clamps += 1;
                            hi.max(v)
                        } else if next < lo {
                            stats.window_clamps += 1;
                            lo.min(v)
                        } else {
                            next
                        };
                    }
                    self.v_cap[base + j] = v;
                }
            }
        }
        Ok(stats)
    }

    /// Leak on every cell over `dt_images`.
    pub fn decay_all(&mut self, dt_images: f64, field: &LeakField) -> Result<(), CrossbarError> {
        if let LeakField::PerCell { taus, .. } = field {
            check_len("per-cell tau", self.v_cap.len(), taus.len())?;
        }
        let kernel = field.kernel(dt_images, &self.mapping);
        self.apply_decay(&kernel)
    }

    pub fn apply_decay(&mut self, kernel: &DecayKernel) -> Result<(), CrossbarError> {
        let target = kernel.target;
        match &kernel.factors {
            DecayFactors::Uniform(f) => {
                if *f != 1.0 {
                    self.v_cap.iter_mut().for_each(|v| *v = target + (*v - target) * f);
                }
            }
            DecayFactors::PerCell(fs) => {
                check_len("decay factors", self.v_cap.len(), fs.len())?;
                for (v, f) in self.v_cap.iter_mut().zip(fs) {
                    *v = target + (*v - target) * f;
                }
            }
        }
        Ok(())
    }
}

/// `beta` of noise management; 1 for an all-zero input.
pub fn input_scale(x: &[f64], scaling: InputScaling) -> f64 {
    let m = x.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    match scaling {
        InputScaling::UnitCeiling => m.max(1.0),
        InputScaling::MaxAbs => {
            if m > 0.0 {
                m
            } else {
                1.0
            }
        }
    }
}
