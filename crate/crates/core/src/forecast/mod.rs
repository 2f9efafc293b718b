//! One-step-ahead forecasters behind a single `TrainedModel` contract.
//!
//! Two model families ship: a ridge-regularised linear autoregression
//! (`linear_ar`) and a single-layer LSTM (`lstm`). Both standardise their
//! input with statistics computed on the training series; the statistics
//! travel inside the model so serving needs nothing else.
//!
//! # Serialized layout
//!
//! A `TrainedModel` serializes to a JSON document:
//!
//! ```text
//! { "format_version": 1,
//!   "spec": { "model_tag": "linear_ar" | "lstm", "lag_window": .., ... },
//!   "standardization": { "mean": .., "std": .. },
//!   "parameters": [ .. ],
//!   "training_fingerprint": "<sha256 hex of the training series>",
//!   "trained_at": <seconds> }
//! ```
//!
//! Parameter layouts (all in standardised space, window ordered oldest first):
//!
//! * `linear_ar`: `[w_0, .., w_{L-1}, intercept]`, prediction `Σ w_j x_j + intercept`.
//! * `lstm`: see [`lstm::LstmLayout`].

pub mod linear;
pub mod lstm;
mod score;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub use linear::{fit_linear_ar, LinearCoefficients};
pub use lstm::fit_lstm;
pub use score::r_squared;

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "linear_ar")]
    LinearAr,
    #[serde(rename = "lstm")]
    Lstm,
}

impl ModelKind {
    pub fn tag(self) -> &'static str {
        match self {
            ModelKind::LinearAr => "linear_ar",
            ModelKind::Lstm => "lstm",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear_ar" => Ok(ModelKind::LinearAr),
            "lstm" => Ok(ModelKind::Lstm),
            other => Err(Error::UnknownModel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecasterSpec {
    #[serde(rename = "model_tag")]
    pub kind: ModelKind,
    #[serde(default = "defaults::lag_window")]
    pub lag_window: usize,
    #[serde(default = "defaults::hidden_size")]
    pub hidden_size: usize,
    #[serde(default = "defaults::epochs")]
    pub epochs: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::ridge_epsilon")]
    pub ridge_epsilon: f64,
}

mod defaults {
    pub fn lag_window() -> usize {
        12
    }
    pub fn hidden_size() -> usize {
        16
    }
    pub fn epochs() -> usize {
        200
    }
    pub fn learning_rate() -> f64 {
        0.05
    }
    pub fn seed() -> u64 {
        1
    }
    pub fn ridge_epsilon() -> f64 {
        1e-8
    }
}

impl ForecasterSpec {
    pub fn linear(lag_window: usize) -> Self {
        Self { kind: ModelKind::LinearAr, lag_window, ..Self::default() }
    }

    pub fn lstm(lag_window: usize, hidden_size: usize, epochs: usize, learning_rate: f64, seed: u64) -> Self {
        Self { kind: ModelKind::Lstm, lag_window, hidden_size, epochs, learning_rate, seed, ..Self::default() }
    }

    pub fn min_series_len(&self) -> usize {
        self.lag_window + 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.lag_window == 0 {
            return Err(Error::InvalidInput("lag_window must be at least 1".into()));
        }
        if self.ridge_epsilon < 0.0 || !self.ridge_epsilon.is_finite() {
            return Err(Error::InvalidInput("ridge_epsilon must be a finite non-negative number".into()));
        }
        if self.kind == ModelKind::Lstm {
            if self.hidden_size == 0 {
                return Err(Error::InvalidInput("hidden_size must be at least 1".into()));
            }
            if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
                return Err(Error::InvalidInput("learning_rate must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn parameter_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearAr => self.lag_window + 1,
            ModelKind::Lstm => lstm::LstmLayout::new(self.hidden_size).len(),
        }
    }
}

impl Default for ForecasterSpec {
    fn default() -> Self {
        Self {
            kind: ModelKind::LinearAr,
            lag_window: defaults::lag_window(),
            hidden_size: defaults::hidden_size(),
            epochs: defaults::epochs(),
            learning_rate: defaults::learning_rate(),
            seed: defaults::seed(),
            ridge_epsilon: defaults::ridge_epsilon(),
        }
    }
}

/// z-score statistics of the training series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    pub std: f64,
}

impl Standardization {
    /// Population statistics; a (near-)constant series gets unit scale.
    pub fn fit(series: &[f64]) -> Self {
        let n = series.len() as f64;
        let mean = series.iter().sum::<f64>() / n;
        let var = series.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let std = var.sqrt();
        let std = if std > 1e-12 * mean.abs().max(1.0) { std } else { 1.0 };
        Self { mean, std }
    }

    pub fn apply(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn invert(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub format_version: u32,
    pub spec: ForecasterSpec,
    pub standardization: Standardization,
    pub parameters: Vec<f64>,
    pub training_fingerprint: String,
    pub trained_at: f64,
}

impl TrainedModel {
    pub(crate) fn new(spec: ForecasterSpec, standardization: Standardization, parameters: Vec<f64>, series: &[f64]) -> Self {
        debug_assert_eq!(parameters.len(), spec.parameter_count());
        Self {
            format_version: MODEL_FORMAT_VERSION,
            spec,
            standardization,
            parameters,
            training_fingerprint: fingerprint(series),
            trained_at: 0.0,
        }
    }

    pub fn with_trained_at(mut self, t: f64) -> Self {
        self.trained_at = t;
        self
    }

    pub fn kind(&self) -> ModelKind {
        self.spec.kind
    }

    pub fn lag_window(&self) -> usize {
        self.spec.lag_window
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: TrainedModel = serde_json::from_str(s)?;
        if model.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::Config(format!("unsupported model format version {}", model.format_version)));
        }
        model.spec.validate()?;
        if model.parameters.len() != model.spec.parameter_count() {
            return Err(Error::Config(format!(
                "parameter vector has {} entries, layout needs {}",
                model.parameters.len(),
                model.spec.parameter_count()
            )));
        }
        Ok(model)
    }
}

/// Fits the model family named in `spec`.
pub fn fit(series: &[f64], spec: &ForecasterSpec) -> Result<TrainedModel> {
    match spec.kind {
        ModelKind::LinearAr => fit_linear_ar(series, spec),
        ModelKind::Lstm => fit_lstm(series, spec),
    }
}

/// One-step-ahead forecast from the last `lag_window` values (oldest first).
pub fn predict(model: &TrainedModel, window: &[f64]) -> Result<f64> {
    if window.len() != model.lag_window() {
        return Err(Error::WindowLength { expected: model.lag_window(), got: window.len() });
    }
    if window.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("prediction window".into()));
    }
    let std = model.standardization;
    let z: Vec<f64> = window.iter().map(|&v| std.apply(v)).collect();
    let out = match model.kind() {
        ModelKind::LinearAr => linear::predict_standardized(&model.parameters, &z),
        ModelKind::Lstm => lstm::LstmLayout::new(model.spec.hidden_size).predict(&model.parameters, &z),
    };
    Ok(std.invert(out))
}

/// SHA-256 over the little-endian bytes of the series, hex encoded.
pub fn fingerprint(series: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in series {
        hasher.update(v.to_le_bytes());
    }
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

pub(crate) fn check_series(series: &[f64], spec: &ForecasterSpec) -> Result<()> {
    spec.validate()?;
    if series.len() < spec.min_series_len() {
        return Err(Error::InsufficientData { needed: spec.min_series_len(), got: series.len() });
    }
    if series.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("training series".into()));
    }
    Ok(())
}

/// Supervised pairs `(window, next value)` over a standardised series.
pub(crate) fn windows(z: &[f64], lag: usize) -> impl Iterator<Item = (&[f64], f64)> + '_ {
    (lag..z.len()).map(move |t| (&z[t - lag..t], z[t]))
}
