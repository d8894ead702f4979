//! Multilayer perceptron trained by per-image SGD, with weight layers held
//! either in plain floating point or in simulated crossbars.
//!
//! Every layer is a `(inputs + 1) x outputs` matrix; the last row holds the
//! bias and is driven by a constant 1 input. Hidden units are logistic,
//! the output is softmax with cross-entropy loss.

use crate::cell::{CellParams, LeakModel, MappingCase, UpdateCurve, WeightMapping};
use crate::checkpoint::LayerVoltages;
use crate::crossbar::{
    Crossbar, CrossbarError, DecayKernel, InputScaling, LeakField, ReadConfig, ReadDirection, UpdateConfig,
    UpdateStats,
};
use crate::dataset::Dataset;
use crate::matrix::Matrix;
use crate::rng::{self, RunRng, Stream};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::{self, Write};
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite loss at epoch {epoch}, step {step} (label {label})")]
    NonFinite { epoch: u32, step: usize, label: u8 },
    #[error("network input has {got} pixels, first layer expects {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("invalid network: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Crossbar(#[from] CrossbarError),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkSpec {
    pub layer_sizes: Vec<usize>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self { layer_sizes: vec![784, 256, 128, 10] }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.layer_sizes.len() < 2 {
            return Err(TrainError::InvalidSpec("need at least an input and an output layer".into()));
        }
        if self.layer_sizes.contains(&0) {
            return Err(TrainError::InvalidSpec("layer sizes must be positive".into()));
        }
        Ok(())
    }

    /// `(rows, cols)` of each weight layer, bias row included.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layer_sizes.windows(2).map(|w| (w[0] + 1, w[1])).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Fp,
    Analog,
}

impl Mode {
    pub fn label(self) -> &'static str {
        match self {
            Mode::Fp => "fp",
            Mode::Analog => "analog",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: u32,
    pub base_lr: f64,
    /// The rate is multiplied by `lr_drop_factor` after each listed epoch.
    pub lr_drop_epochs: Vec<u32>,
    pub lr_drop_factor: f64,
    pub mode: Mode,
    /// Initial weights are uniform in `[-init_range, init_range]`.
    pub init_range: f64,
    /// Shuffle seed; supplied by the caller rather than the config document.
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            base_lr: 0.01,
            lr_drop_epochs: vec![10, 20],
            lr_drop_factor: 0.5,
            mode: Mode::Analog,
            init_range: 0.3,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if self.epochs == 0 {
            return Err(TrainError::InvalidSpec("epochs must be at least 1".into()));
        }
        if !(self.base_lr > 0.0) {
            return Err(TrainError::InvalidSpec(format!("base_lr must be positive, got {}", self.base_lr)));
        }
        Ok(())
    }
}

/// Learning rate of a 1-based epoch.
pub fn lr_at(cfg: &TrainConfig, epoch: u32) -> f64 {
    let drops = cfg.lr_drop_epochs.iter().filter(|&&e| e < epoch).count();
    cfg.base_lr * cfg.lr_drop_factor.powi(drops as i32)
}

/// Device and peripheral settings of an analog network.
#[derive(Clone, Debug, PartialEq)]
pub struct AnalogConfig {
    pub params: CellParams,
    pub mapping: WeightMapping,
    pub curve: UpdateCurve,
    pub read: ReadConfig,
    pub bl: u32,
    /// Keeps every weight within `|w| <= w_max` during training.
    pub bounded_updates: bool,
    pub leak: LeakModel,
    /// Relative std of per-cell retention constants (0 = uniform).
    pub tau_variation: f64,
    /// Input scaling of backward reads. Deltas are much smaller than one,
    /// so they are stretched to full scale.
    pub backward_scaling: InputScaling,
}

impl AnalogConfig {
    pub fn for_case(case: MappingCase) -> Self {
        let params = CellParams::default();
        Self {
            params,
            mapping: WeightMapping::for_case(case),
            curve: UpdateCurve::knee(params.i0, UpdateCurve::DEFAULT_V_KNEE),
            read: ReadConfig::default(),
            bl: UpdateConfig::DEFAULT_BL,
            bounded_updates: false,
            leak: LeakModel::default(),
            tau_variation: 0.0,
            backward_scaling: InputScaling::MaxAbs,
        }
    }
}

struct AnalogLayer {
    xbar: Crossbar,
    decay: DecayKernel,
}

#[allow(clippy::large_enum_variant)]
enum Backend {
    Fp(Vec<Matrix>),
    Analog {
        layers: Vec<AnalogLayer>,
        read: ReadConfig,
        eval_read: ReadConfig,
        update: UpdateConfig,
        backward_scaling: InputScaling,
        noise_rng: RunRng,
        update_rng: RunRng,
    },
}

/// Diagnostic counters, cumulative since construction.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Read attempts in which some output reached the integrator bound.
    pub saturation_events: u64,
    /// Weights clipped at programming time plus pulses stopped by a rail.
    pub clip_events: u64,
    pub update: UpdateStats,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    pub correct: bool,
}

/// Activations and deltas of one example.
struct Trace {
    /// Input of each layer, bias entry included.
    inputs: Vec<Vec<f64>>,
    probs: Vec<f64>,
}

pub struct Network {
    spec: NetworkSpec,
    backend: Backend,
    counters: Counters,
    mapping: WeightMapping,
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (k, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = k;
        }
    }
    best
}

fn init_weights(spec: &NetworkSpec, range: f64, seed: u64) -> Vec<Matrix> {
    let mut rng = rng::stream(seed, Stream::Init);
    spec.layer_shapes()
        .into_iter()
        .map(|(r, c)| Matrix::from_fn(r, c, |_, _| if range > 0.0 { rng.gen_range(-range..=range) } else { 0.0 }))
        .collect()
}

impl Network {
    /// Floating-point reference network.
    pub fn fp(spec: NetworkSpec, init_range: f64, seed: u64) -> Result<Self, TrainError> {
        spec.validate()?;
        let weights = init_weights(&spec, init_range, seed);
        Ok(Self { spec, backend: Backend::Fp(weights), counters: Counters::default(), mapping: WeightMapping::default() })
    }

    /// Network whose layers live in crossbars; initial weights match
    /// [`Network::fp`] with the same seed, up to clipping.
    pub fn analog(spec: NetworkSpec, cfg: &AnalogConfig, init_range: f64, seed: u64) -> Result<Self, TrainError> {
        spec.validate()?;
        cfg.read.validate()?;
        let weights = init_weights(&spec, init_range, seed);
        let update = UpdateConfig { bounded: cfg.bounded_updates, ..UpdateConfig::new(cfg.bl, &cfg.params, &cfg.mapping)? };
        let mut tau_rng = rng::stream(seed, Stream::TauVariation);
        let mut counters = Counters::default();
        let mut layers = Vec::with_capacity(weights.len());
        for w in &weights {
            let mut xbar = Crossbar::new(w.rows(), w.cols(), cfg.params, cfg.mapping, cfg.curve.clone())?;
            counters.clip_events += xbar.set_weights(w)? as u64;
            let field = LeakField::per_cell_lognormal(cfg.leak, cfg.tau_variation, w.rows() * w.cols(), &mut tau_rng);
            let decay = field.kernel(1.0, &cfg.mapping);
            layers.push(AnalogLayer { xbar, decay });
        }
        Ok(Self {
            spec,
            backend: Backend::Analog {
                layers,
                read: cfg.read,
                eval_read: cfg.read.noise_free(),
                update,
                backward_scaling: cfg.backward_scaling,
                noise_rng: rng::stream(seed, Stream::ReadNoise),
                update_rng: rng::stream(seed, Stream::UpdatePulses),
            },
            counters,
            mapping: cfg.mapping,
        })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn mode(&self) -> Mode {
        match self.backend {
            Backend::Fp(_) => Mode::Fp,
            Backend::Analog { .. } => Mode::Analog,
        }
    }

    pub fn counters(&self) -> Counters {
        self.counters
    }

    pub fn update_config(&self) -> Option<UpdateConfig> {
        match &self.backend {
            Backend::Fp(_) => None,
            Backend::Analog { update, .. } => Some(*update),
        }
    }

    /// Digital view of every layer.
    pub fn weights(&self) -> Vec<Matrix> {
        match &self.backend {
            Backend::Fp(w) => w.clone(),
            Backend::Analog { layers, .. } => layers.iter().map(|l| l.xbar.get_weights()).collect(),
        }
    }

    /// Replaces all weights; returns the number of clipped entries (analog).
    pub fn set_weights(&mut self, weights: &[Matrix]) -> Result<usize, TrainError> {
        let shapes = self.spec.layer_shapes();
        if weights.len() != shapes.len() || weights.iter().zip(&shapes).any(|(w, s)| w.shape() != *s) {
            return Err(TrainError::InvalidSpec("weight shapes do not match the network".into()));
        }
        match &mut self.backend {
            Backend::Fp(w) => {
                w.clone_from_slice(weights);
                Ok(0)
            }
            Backend::Analog { layers, .. } => {
                let mut clipped = 0;
                for (l, w) in layers.iter_mut().zip(weights) {
                    clipped += l.xbar.set_weights(w)?;
                }
                Ok(clipped)
            }
        }
    }

    /// Capacitor voltages of every layer. A floating-point network is
    /// expressed through the linear weight mapping.
    pub fn voltages(&self) -> Vec<LayerVoltages> {
        match &self.backend {
            Backend::Fp(ws) => ws
                .iter()
                .map(|w| LayerVoltages {
                    rows: w.rows(),
                    cols: w.cols(),
                    v_cap: w.as_slice().iter().map(|&x| self.mapping.voltage_at(x)).collect(),
                })
                .collect(),
            Backend::Analog { layers, .. } => layers
                .iter()
                .map(|l| LayerVoltages { rows: l.xbar.rows(), cols: l.xbar.cols(), v_cap: l.xbar.voltages().to_vec() })
                .collect(),
        }
    }

    pub fn crossbars(&self) -> Option<Vec<&Crossbar>> {
        match &self.backend {
            Backend::Fp(_) => None,
            Backend::Analog { layers, .. } => Some(layers.iter().map(|l| &l.xbar).collect()),
        }
    }

    fn check_input(&self, x: &[f64]) -> Result<(), TrainError> {
        let expected = self.spec.layer_sizes[0];
        if x.len() != expected {
            return Err(TrainError::InputSize { expected, got: x.len() });
        }
        Ok(())
    }

    /// Forward pass. `training` selects noisy training reads over
    /// noise-free scoring reads.
    fn forward_trace(
        backend: &Backend,
        counters: &mut Counters,
        x: &[f64],
        noise_rng: Option<&mut RunRng>,
    ) -> Result<Trace, TrainError> {
        let n_layers = match backend {
            Backend::Fp(w) => w.len(),
            Backend::Analog { layers, .. } => layers.len(),
        };
        let mut scoring_rng;
        let (rng, cfg) = match (backend, noise_rng) {
            (Backend::Analog { read, .. }, Some(r)) => (Some(r), Some(*read)),
            (Backend::Analog { eval_read, .. }, None) => {
                scoring_rng = rng::stream(0, Stream::ReadNoise);
                (Some(&mut scoring_rng), Some(*eval_read))
            }
            (Backend::Fp(_), _) => (None, None),
        };
        let mut rng = rng;
        let mut inputs = Vec::with_capacity(n_layers);
        let mut a: Vec<f64> = x.iter().copied().chain(std::iter::once(1.0)).collect();
        let mut z = Vec::new();
        for l in 0..n_layers {
            z = match backend {
                Backend::Fp(w) => w[l].vec_mul(&a),
                Backend::Analog { layers, .. } => {
                    let r = layers[l].xbar.managed_read(
                        ReadDirection::Forward,
                        cfg.as_ref().expect("analog read config"),
                        &a,
                        InputScaling::UnitCeiling,
                        rng.as_deref_mut().expect("analog rng"),
                    )?;
                    counters.saturation_events += r.saturation_events as u64;
                    r.y
                }
            };
            let next: Vec<f64> = if l + 1 < n_layers {
                z.iter().map(|&v| sigmoid(v)).chain(std::iter::once(1.0)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut a, next));
        }
        Ok(Trace { inputs, probs: softmax(&z) })
    }

    /// Output-layer delta `p - onehot` propagated to every layer.
    fn backward_deltas(&mut self, trace: &Trace, label: usize) -> Result<Vec<Vec<f64>>, TrainError> {
        let n_layers = trace.inputs.len();
        let mut deltas = vec![Vec::new(); n_layers];
        let mut delta = trace.probs.clone();
        delta[label] -= 1.0;
        for l in (1..n_layers).rev() {
            let back = match &mut self.backend {
                Backend::Fp(w) => w[l].mul_vec(&delta),
                Backend::Analog { layers, read, backward_scaling, noise_rng, .. } => {
                    let r = layers[l].xbar.managed_read(ReadDirection::Backward, read, &delta, *backward_scaling, noise_rng)?;
                    self.counters.saturation_events += r.saturation_events as u64;
                    r.y
                }
            };
            let h = &trace.inputs[l];
            let prev: Vec<f64> = (0..h.len() - 1).map(|k| back[k] * h[k] * (1.0 - h[k])).collect();
            deltas[l] = std::mem::replace(&mut delta, prev);
        }
        deltas[0] = delta;
        Ok(deltas)
    }

    /// One SGD step on a single example, followed by one image of decay.
    pub fn train_step(&mut self, x: &[f64], label: u8, lr: f64) -> Result<StepOutcome, TrainError> {
        self.check_input(x)?;
        let trace = match &mut self.backend {
            Backend::Analog { noise_rng, .. } => {
                let mut r = noise_rng.clone();
                let t = Self::forward_trace(&self.backend, &mut self.counters, x, Some(&mut r))?;
                if let Backend::Analog { noise_rng, .. } = &mut self.backend {
                    *noise_rng = r;
                }
                t
            }
            Backend::Fp(_) => Self::forward_trace(&self.backend, &mut self.counters, x, None)?,
        };
        let label = label as usize;
        let loss = -trace.probs[label].max(f64::MIN_POSITIVE).ln();
        let correct = argmax(&trace.probs) == label;
        let deltas = self.backward_deltas(&trace, label)?;

        match &mut self.backend {
            Backend::Fp(ws) => {
                if lr != 0.0 {
                    for ((w, a), d) in ws.iter_mut().zip(&trace.inputs).zip(&deltas) {
                        let cols = w.cols();
                        let data = w.as_mut_slice();
                        for (i, &ai) in a.iter().enumerate() {
                            if ai == 0.0 {
                                continue;
                            }
                            let s = lr * ai;
                            for (wij, &dj) in data[i * cols..(i + 1) * cols].iter_mut().zip(d) {
                                *wij -= s * dj;
                            }
                        }
                    }
                }
            }
            Backend::Analog { layers, update, update_rng, .. } => {
                for ((layer, a), d) in layers.iter_mut().zip(&trace.inputs).zip(&deltas) {
                    let s = layer.xbar.stochastic_update(update, a, d, lr, update_rng)?;
                    self.counters.clip_events += s.rail_clamps + s.window_clamps;
                    self.counters.update += s;
                }
                for layer in layers.iter_mut() {
                    if !layer.decay.is_identity() {
                        layer.xbar.apply_decay(&layer.decay)?;
                    }
                }
            }
        }
        Ok(StepOutcome { loss, correct })
    }

    /// Class probabilities with scoring reads; never mutates the network.
    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>, TrainError> {
        self.check_input(x)?;
        let mut scratch = Counters::default();
        Ok(Self::forward_trace(&self.backend, &mut scratch, x, None)?.probs)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize, TrainError> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    /// Classification error in percent.
    pub fn evaluate(&self, data: &Dataset) -> Result<f64, TrainError> {
        if data.is_empty() {
            return Ok(0.0);
        }
        let mut x = vec![0.0; data.pixels_per_image()];
        let mut wrong = 0usize;
        for k in 0..data.len() {
            data.image_into(k, &mut x);
            if self.predict(&x)? != data.label(k) as usize {
                wrong += 1;
            }
        }
        Ok(100.0 * wrong as f64 / data.len() as f64)
    }

    /// Cross-entropy loss of one example (floating-point networks, or
    /// scoring reads for analog ones).
    pub fn loss(&self, x: &[f64], label: u8) -> Result<f64, TrainError> {
        Ok(-self.predict_proba(x)?[label as usize].ln())
    }

    /// Loss gradient with respect to every layer of a floating-point
    /// network. `None` for analog networks.
    pub fn fp_gradients(&mut self, x: &[f64], label: u8) -> Result<Option<Vec<Matrix>>, TrainError> {
        self.check_input(x)?;
        if !matches!(self.backend, Backend::Fp(_)) {
            return Ok(None);
        }
        let trace = Self::forward_trace(&self.backend, &mut self.counters, x, None)?;
        let deltas = self.backward_deltas(&trace, label as usize)?;
        Ok(Some(
            trace
                .inputs
                .iter()
                .zip(&deltas)
                .map(|(a, d)| Matrix::from_fn(a.len(), d.len(), |i, j| a[i] * d[j]))
                .collect(),
        ))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u32,
    pub lr: f64,
    pub train_error_pct: f64,
    pub test_error_pct: f64,
    pub train_loss: f64,
    pub saturation_events: u64,
    pub clip_events: u64,
    pub wall_ms: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub records: Vec<EpochRecord>,
}

pub const METRICS_HEADER: &str = "epoch,lr,train_error_pct,test_error_pct,saturation_events,clip_events,wall_ms";

impl Metrics {
    pub fn final_test_error(&self) -> Option<f64> {
        self.records.last().map(|r| r.test_error_pct)
    }

    pub fn best_test_error(&self) -> Option<f64> {
        self.records.iter().map(|r| r.test_error_pct).reduce(f64::min)
    }

    pub fn test_error_at(&self, epoch: u32) -> Option<f64> {
        self.records.iter().find(|r| r.epoch == epoch).map(|r| r.test_error_pct)
    }

    /// Writes the metrics CSV. Wall time is nondeterministic, so unless
    /// `wall_clock` is set the column is written as 0 and the file is a
    /// pure function of configuration and seed.
    pub fn write_csv<W: Write>(&self, mut w: W, wall_clock: bool) -> io::Result<()> {
        writeln!(w, "{METRICS_HEADER}")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{:.4},{:.4},{},{},{}",
                r.epoch,
                r.lr,
                r.train_error_pct,
                r.test_error_pct,
                r.saturation_events,
                r.clip_events,
                if wall_clock { r.wall_ms } else { 0 }
            )?;
        }
        Ok(())
    }
}

/// Trains for `cfg.epochs` shuffled passes, scoring the test set after each
/// epoch. `on_epoch` sees every record as it completes.
pub fn train(
    net: &mut Network,
    train_set: &Dataset,
    test_set: &Dataset,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Metrics, TrainError> {
    cfg.validate()?;
    let mut shuffle_rng = rng::stream(cfg.seed, Stream::Shuffle);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut x = vec![0.0; train_set.pixels_per_image()];
    let mut metrics = Metrics::default();
    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let before = net.counters();
        let lr = lr_at(cfg, epoch);
        order.shuffle(&mut shuffle_rng);
        let mut wrong = 0usize;
        let mut loss_sum = 0.0;
        for (step, &k) in order.iter().enumerate() {
            train_set.image_into(k, &mut x);
            let label = train_set.label(k);
            let out = net.train_step(&x, label, lr)?;
            if !out.loss.is_finite() {
                return Err(TrainError::NonFinite { epoch, step, label });
            }
            loss_sum += out.loss;
            wrong += (!out.correct) as usize;
        }
        let test_error_pct = net.evaluate(test_set)?;
        let after = net.counters();
        let n = train_set.len().max(1) as f64;
        let record = EpochRecord {
            epoch,
            lr,
            train_error_pct: 100.0 * wrong as f64 / n,
            test_error_pct,
            train_loss: loss_sum / n,
            saturation_events: after.saturation_events - before.saturation_events,
            clip_events: after.clip_events - before.clip_events,
            wall_ms: started.elapsed().as_millis() as u64,
        };
        on_epoch(&record);
        metrics.records.push(record);
    }
    Ok(metrics)
}
