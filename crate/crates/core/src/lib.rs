//! Behavioral simulator of an analog CMOS resistive processing unit (RPU).
//!
//! Each weight is the voltage on a storage capacitor that sets the gate of a
//! P-type read transistor. Reads integrate pulse-width-modulated currents
//! along shared lines, updates are stochastic pulse coincidences that charge
//! or discharge the capacitor, and leakage pulls every cell back toward the
//! zero-weight voltage.
//!
//! Module map:
//! - [`cell`]: single-cell physics, weight/voltage mapping, Table-I style
//!   characterization.
//! - [`crossbar`]: array reads (PWM, integration, noise, bound, ADC),
//!   stochastic coincidence update, decay, weight checkpoints.
//! - [`network`]: multilayer perceptron trained either in floating point or
//!   on simulated crossbars.
//! - [`dataset`]: IDX (MNIST) ingestion and deterministic subsetting.

// Validation uses `!(x > 0.0)` style checks so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cell;
pub mod checkpoint;
pub mod crossbar;
pub mod dataset;
pub mod matrix;
pub mod network;
pub mod rng;
pub mod serde_inf;

pub use cell::{
    CellParams, CellReport, CellState, CurveShape, Direction, LeakModel, LeakTarget, MappingCase,
    Tau, UpdateCurve, WeightMapping,
};
pub use crossbar::{Crossbar, ReadConfig, UpdateConfig};
pub use matrix::Matrix;
