//! Run configuration: one JSON document, defaults materialized, with
//! `key.path=value` overrides.

use crate::HarnessError;
use rpu_core::cell::{CurrentTable, LeakTarget};
use rpu_core::crossbar::InputScaling;
use rpu_core::network::{AnalogConfig, Mode, NetworkSpec, TrainConfig};
use rpu_core::{CellParams, LeakModel, MappingCase, ReadConfig, Tau, UpdateConfig, UpdateCurve, WeightMapping};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::{Path, PathBuf};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    Flat,
    Knee,
    Table,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CurveConfig {
    pub kind: CurveKind,
    pub v_knee: f64,
    /// CSV with header `v_cap,i_up,i_down`, used when `kind` is `table`.
    pub table: Option<PathBuf>,
}

impl Default for CurveConfig {
    fn default() -> Self {
        Self { kind: CurveKind::Knee, v_knee: UpdateCurve::DEFAULT_V_KNEE, table: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UpdateSettings {
    pub bl: u32,
    /// Stop updates at `|w| = w_max` rather than only at the rails.
    pub bounded: bool,
    pub backward_scaling: InputScaling,
}

impl Default for UpdateSettings {
    fn default() -> Self {
        Self { bl: UpdateConfig::DEFAULT_BL, bounded: false, backward_scaling: InputScaling::MaxAbs }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LeakSettings {
    pub tau: Tau,
    /// Relative std of log-normal per-cell `tau` (0 = uniform).
    pub tau_variation: f64,
    pub t_image: f64,
    pub target: LeakTarget,
}

impl Default for LeakSettings {
    fn default() -> Self {
        let m = LeakModel::default();
        Self { tau: m.tau_images, tau_variation: 0.0, t_image: m.t_image, target: m.target }
    }
}

impl LeakSettings {
    pub fn model(&self) -> LeakModel {
        LeakModel { tau_images: self.tau, t_image: self.t_image, target: self.target }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    /// Directory the file names below are resolved against.
    pub dir: PathBuf,
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Seeded subset sizes; `None` keeps the whole split.
    pub train_subset: Option<usize>,
    pub test_subset: Option<usize>,
    pub subset_seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("data/mnist"),
            train_images: "train-images-idx3-ubyte".into(),
            train_labels: "train-labels-idx1-ubyte".into(),
            test_images: "t10k-images-idx3-ubyte".into(),
            test_labels: "t10k-labels-idx1-ubyte".into(),
            train_subset: Some(10_000),
            test_subset: Some(2_000),
            subset_seed: 0,
        }
    }
}

impl DataConfig {
    pub fn resolve(&self, file: &Path) -> PathBuf {
        self.dir.join(file)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PulseSweepConfig {
    pub cycles: u32,
    pub pulses_per_phase: u32,
    /// Start voltage; `None` starts at the lower edge of the device window.
    pub start_v: Option<f64>,
}

impl Default for PulseSweepConfig {
    fn default() -> Self {
        Self { cycles: 10, pulses_per_phase: 1000, start_v: None }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub taus: Vec<Tau>,
    /// Adds per-cell variation runs at `variation_taus`.
    pub with_variation: bool,
    pub variation: f64,
    pub variation_taus: Vec<Tau>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            taus: vec![Tau(1e4), Tau(1e5), Tau(1e6), Tau::INFINITE],
            with_variation: false,
            variation: 0.3,
            variation_taus: vec![Tau(1e6)],
        }
    }
}

/// Thresholds applied in `--check` mode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CheckConfig {
    /// `train`: largest acceptable final test error.
    pub max_final_error_pct: f64,
}

impl Default for CheckConfig {
    fn default() -> Self {
        Self { max_final_error_pct: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Free-form suffix appended to the run id.
    pub tag: Option<String>,
    pub case: MappingCase,
    pub cell: CellParams,
    pub curve: CurveConfig,
    pub read: ReadConfig,
    pub update: UpdateSettings,
    pub leak: LeakSettings,
    pub network: NetworkSpec,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub pulse_sweep: PulseSweepConfig,
    pub sweep: SweepConfig,
    pub check: CheckConfig,
    /// Writes real epoch timings into the metrics CSV (breaks byte-identical
    /// reruns).
    pub wall_clock_in_metrics: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            out_dir: PathBuf::from("runs"),
            tag: None,
            case: MappingCase::B,
            cell: CellParams::default(),
            curve: CurveConfig::default(),
            read: ReadConfig::default(),
            update: UpdateSettings::default(),
            leak: LeakSettings::default(),
            network: NetworkSpec::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
            pulse_sweep: PulseSweepConfig::default(),
            sweep: SweepConfig::default(),
            check: CheckConfig::default(),
            wall_clock_in_metrics: false,
        }
    }
}

fn config_err(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

/// Parses an override value: JSON if it parses, otherwise a bare string.
fn parse_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Applies `key.path=value` to a materialized config tree. The path must
/// already exist, which rejects typos instead of silently ignoring them.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<(), HarnessError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| config_err(format!("override `{assignment}` is not KEY=VALUE")))?;
    let mut node = &mut *root;
    for part in key.split('.') {
        node = match node {
            Value::Object(map) => map.get_mut(part),
            Value::Array(items) => part.parse::<usize>().ok().and_then(|i| items.get_mut(i)),
            _ => None,
        }
        .ok_or_else(|| config_err(format!("unknown config key `{key}`")))?;
    }
    *node = parse_value(raw.trim());
    Ok(())
}

impl RunConfig {
    /// Defaults, then the optional JSON file, then overrides in order.
    pub fn resolve(file: Option<&Path>, overrides: &[String]) -> Result<Self, HarnessError> {
        let base = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| HarnessError::Io(format!("{}: {e}", p.display())))?;
                serde_json::from_str::<RunConfig>(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
            }
            None => RunConfig::default(),
        };
        base.with_overrides(overrides)
    }

    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self, HarnessError> {
        if overrides.is_empty() {
            self.validate()?;
            return Ok(self.clone());
        }
        let mut tree = serde_json::to_value(self).expect("config serializes");
        for o in overrides {
            apply_override(&mut tree, o)?;
        }
        let cfg: RunConfig = serde_json::from_value(tree).map_err(|e| config_err(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.cell.validate().map_err(|e| config_err(e.to_string()))?;
        self.read.validate().map_err(|e| config_err(e.to_string()))?;
        self.network.validate().map_err(|e| config_err(e.to_string()))?;
        self.train.validate().map_err(|e| config_err(e.to_string()))?;
        UpdateConfig::new(self.update.bl, &self.cell, &self.mapping()).map_err(|e| config_err(e.to_string()))?;
        if self.curve.kind == CurveKind::Knee && !(self.curve.v_knee > 0.0) {
            return Err(config_err("curve.v_knee must be positive"));
        }
        if self.curve.kind == CurveKind::Table && self.curve.table.is_none() {
            return Err(config_err("curve.kind = table needs curve.table"));
        }
        if !(self.leak.tau.0 > 0.0) {
            return Err(config_err("leak.tau must be positive"));
        }
        if !(0.0..10.0).contains(&self.leak.tau_variation) {
            return Err(config_err("leak.tau_variation must be in [0, 10)"));
        }
        if self.network.layer_sizes.last() != Some(&10) {
            return Err(config_err("the output layer must have 10 units"));
        }
        Ok(())
    }

    pub fn mapping(&self) -> WeightMapping {
        WeightMapping::for_case(self.case)
    }

    pub fn update_curve(&self) -> Result<UpdateCurve, HarnessError> {
        Ok(match self.curve.kind {
            CurveKind::Flat => UpdateCurve::flat(self.cell.i0),
            CurveKind::Knee => UpdateCurve::knee(self.cell.i0, self.curve.v_knee),
            CurveKind::Table => {
                let path = self.curve.table.as_ref().expect("validated");
                let table = CurrentTable::from_csv_path(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
                UpdateCurve::table(table)
            }
        })
    }

    pub fn analog(&self) -> Result<AnalogConfig, HarnessError> {
        Ok(AnalogConfig {
            params: self.cell,
            mapping: self.mapping(),
            curve: self.update_curve()?,
            read: self.read,
            bl: self.update.bl,
            bounded_updates: self.update.bounded,
            leak: self.leak.model(),
            tau_variation: self.leak.tau_variation,
            backward_scaling: self.update.backward_scaling,
        })
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig { seed: self.seed, ..self.train.clone() }
    }

    /// `s{seed}-{mode}[-{case}-tau{tau}]` plus suffixes for non-default
    /// device settings.
    pub fn run_id(&self) -> String {
        let mut id = format!("s{}-{}", self.seed, self.train.mode.label());
        if self.train.mode == Mode::Analog {
            id.push_str(&format!("-{}-tau{}", self.case.label(), self.leak.tau.label()));
            if self.leak.tau_variation > 0.0 && !self.leak.tau.is_infinite() {
                id.push_str(&format!("-var{}", (self.leak.tau_variation * 100.0).round()));
            }
            match self.curve.kind {
                CurveKind::Flat => id.push_str("-flat"),
                CurveKind::Table => id.push_str("-table"),
                CurveKind::Knee if self.curve.v_knee != UpdateCurve::DEFAULT_V_KNEE => {
                    id.push_str(&format!("-vk{}", self.curve.v_knee))
                }
                CurveKind::Knee => {}
            }
            if self.update.bounded {
                id.push_str("-bounded");
            }
            if self.read == ReadConfig::ideal() {
                id.push_str("-idealread");
            } else if self.read.noise_sigma == 0.0 {
                id.push_str("-nonoise");
            }
        }
        if let Some(tag) = &self.tag {
            id.push('-');
            id.push_str(tag);
        }
        id
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
