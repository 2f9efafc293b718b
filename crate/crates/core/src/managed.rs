//! The managed MLOps pipeline: a training subsystem that versions every
//! fitted model together with a fingerprint of its training data, and an
//! inference subsystem that serves the currently active model.
//!
//! # Registry layout on disk
//!
//! ```text
//! <root>/<tag>/v000001.json   one immutable document per ModelVersion
//! <root>/<tag>/index.json     { "active_version": n, "versions": [..] }
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::domain::{SensorReading, TargetColumn};
use crate::error::{Error, Result};
use crate::forecast::{self, ForecasterSpec, TrainedModel};
use crate::fsutil::write_atomic;
use crate::monitor::{thread_cpu_seconds, EnergyModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelVersion {
    pub version: u64,
    pub model_tag: String,
    pub trained: TrainedModel,
    /// First and last timestamps of the training readings.
    pub training_window: (i64, i64),
    pub created_at: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct InferenceState {
    pub active_model_tag: Option<String>,
    pub active_versions: BTreeMap<String, u64>,
    pub last_prediction: Option<(f64, f64)>,
}

/// How CPU time of a call is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ServiceTiming {
    /// Fixed per-model CPU costs, for bit-reproducible simulation.
    Simulated {
        serve_seconds: BTreeMap<String, f64>,
        train_seconds_per_sample: BTreeMap<String, f64>,
    },
    /// Thread CPU time actually consumed.
    Measured,
}

impl Default for ServiceTiming {
    fn default() -> Self {
        ServiceTiming::Simulated {
            serve_seconds: BTreeMap::from([("linear_ar".into(), 0.0002), ("lstm".into(), 0.002)]),
            train_seconds_per_sample: BTreeMap::from([("linear_ar".into(), 2e-5), ("lstm".into(), 2e-3)]),
        }
    }
}

impl ServiceTiming {
    fn lookup(table: &BTreeMap<String, f64>, tag: &str) -> Result<f64> {
        table.get(tag).copied().ok_or_else(|| Error::Config(format!("no simulated timing for model `{tag}`")))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManagedConfig {
    pub specs: BTreeMap<String, ForecasterSpec>,
    pub target: TargetColumn,
    pub timing: ServiceTiming,
    pub energy: EnergyModel,
    pub registry_root: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeOutcome {
    pub prediction: f64,
    pub response_time: f64,
    pub energy_uj: f64,
    pub model_tag: String,
    pub version: u64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub version: Arc<ModelVersion>,
    pub cpu_seconds: f64,
    pub energy_uj: f64,
}

/// A fitted model not yet registered.
#[derive(Debug, Clone)]
pub struct PreparedTraining {
    pub model_tag: String,
    trained: TrainedModel,
    training_window: (i64, i64),
    now: f64,
    pub cpu_seconds: f64,
    pub energy_uj: f64,
}

#[derive(Debug, Default)]
struct Registry {
    versions: BTreeMap<String, Vec<Arc<ModelVersion>>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexEntry {
    version: u64,
    fingerprint: String,
    created_at: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct RegistryIndex {
    active_version: u64,
    versions: Vec<IndexEntry>,
}

pub struct ManagedSystem {
    config: ManagedConfig,
    registry: Mutex<Registry>,
    state: RwLock<InferenceState>,
    active: RwLock<Option<Arc<ModelVersion>>>,
}

impl ManagedSystem {
    pub fn new(config: ManagedConfig) -> Result<Self> {
        for (tag, spec) in &config.specs {
            spec.validate()?;
            if spec.kind.tag() != tag {
                return Err(Error::Config(format!("model `{tag}` is configured with a `{}` spec", spec.kind)));
            }
            config.energy.coefficient(tag)?;
        }
        Ok(Self {
            config,
            registry: Mutex::new(Registry::default()),
            state: RwLock::new(InferenceState::default()),
            active: RwLock::new(None),
        })
    }

    pub fn config(&self) -> &ManagedConfig {
        &self.config
    }

    pub fn spec(&self, tag: &str) -> Result<&ForecasterSpec> {
        self.config.specs.get(tag).ok_or_else(|| Error::UnknownModel(tag.to_string()))
    }

    /// Largest minimum series length over the configured forecasters.
    pub fn min_training_len(&self) -> usize {
        self.config.specs.values().map(ForecasterSpec::min_series_len).max().unwrap_or(0)
    }

    pub fn lag_window(&self) -> Result<usize> {
        let active = self.active.read().unwrap_or_else(|e| e.into_inner());
        active.as_ref().map(|v| v.trained.lag_window()).ok_or(Error::NotReady)
    }

    /// Fits a fresh model on `data_window`, registers it as the next version
    /// of `model_tag` and promotes it to the active version for that tag.
    pub fn train_job(&self, model_tag: &str, data_window: &[SensorReading], now: f64) -> Result<TrainOutcome> {
        let prepared = self.prepare_training(model_tag, data_window, now)?;
        self.commit_training(prepared)
    }

    /// The fitting half of [`train_job`](Self::train_job); touches no state.
    pub fn prepare_training(&self, model_tag: &str, data_window: &[SensorReading], now: f64) -> Result<PreparedTraining> {
        let spec = self.spec(model_tag)?.clone();
        let series: Vec<f64> = data_window.iter().map(|r| r.value(self.config.target)).collect();
        if series.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("training window".into()));
        }

        let cpu_start = thread_cpu_seconds();
        let trained = forecast::fit(&series, &spec)?.with_trained_at(now);
        let cpu_seconds = match &self.config.timing {
            ServiceTiming::Simulated { train_seconds_per_sample, .. } => {
                ServiceTiming::lookup(train_seconds_per_sample, model_tag)? * series.len() as f64
            }
            ServiceTiming::Measured => thread_cpu_seconds() - cpu_start,
        };
        let energy_uj = self.config.energy.energy(model_tag, cpu_seconds)?;
        let training_window = (
            data_window.first().map_or(0, |r| r.timestamp),
            data_window.last().map_or(0, |r| r.timestamp),
        );
        Ok(PreparedTraining { model_tag: model_tag.to_string(), trained, training_window, now, cpu_seconds, energy_uj })
    }

    /// Registers a prepared model as the next version and promotes it.
    pub fn commit_training(&self, prepared: PreparedTraining) -> Result<TrainOutcome> {
        let PreparedTraining { model_tag, trained, training_window, now, cpu_seconds, energy_uj } = prepared;
        let version = {
            let mut registry = self.registry.lock().unwrap_or_else(|e| e.into_inner());
            let list = registry.versions.entry(model_tag.clone()).or_default();
            let version = Arc::new(ModelVersion {
                version: list.last().map_or(1, |v| v.version + 1),
                model_tag,
                trained,
                training_window,
                created_at: now,
            });
            if let Some(root) = &self.config.registry_root {
                persist_version(root, &version, list)?;
            }
            list.push(version.clone());
            version
        };
        self.promote(&version);
        Ok(TrainOutcome { version, cpu_seconds, energy_uj })
    }

    fn promote(&self, version: &Arc<ModelVersion>) {
        let mut active = self.active.write().unwrap_or_else(|e| e.into_inner());
        let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
        state.active_versions.insert(version.model_tag.clone(), version.version);
        let is_active_tag = state.active_model_tag.as_deref() == Some(version.model_tag.as_str());
        if state.active_model_tag.is_none() || is_active_tag {
            state.active_model_tag = Some(version.model_tag.clone());
            *active = Some(version.clone());
        }
    }

    /// One-step forecast from the last `lag_window` readings (oldest first).
    pub fn serve(&self, reading_window: &[SensorReading], now: f64) -> Result<ServeOutcome> {
        let model = self.active.read().unwrap_or_else(|e| e.into_inner()).clone().ok_or(Error::NotReady)?;
        let window: Vec<f64> = reading_window.iter().map(|r| r.value(self.config.target)).collect();

        let cpu_start = thread_cpu_seconds();
        let prediction = forecast::predict(&model.trained, &window)?;
        let cpu_seconds = match &self.config.timing {
            ServiceTiming::Simulated { serve_seconds, .. } => ServiceTiming::lookup(serve_seconds, &model.model_tag)?,
            ServiceTiming::Measured => thread_cpu_seconds() - cpu_start,
        };
        let energy_uj = self.config.energy.energy(&model.model_tag, cpu_seconds)?;

        self.state.write().unwrap_or_else(|e| e.into_inner()).last_prediction = Some((now, prediction));
        Ok(ServeOutcome {
            prediction,
            response_time: cpu_seconds,
            energy_uj,
            model_tag: model.model_tag.clone(),
            version: model.version,
        })
    }

    /// Makes `model_tag` the served model. Switching to the current tag is a
    /// no-op.
    pub fn switch_active(&self, model_tag: &str) -> Result<InferenceState> {
        self.spec(model_tag)?;
        let target = self.active_version_of(model_tag).ok_or_else(|| Error::NoTrainedVersion(model_tag.to_string()))?;
        let mut active = self.active.write().unwrap_or_else(|e| e.into_inner());
        let mut state = self.state.write().unwrap_or_else(|e| e.into_inner());
        if state.active_model_tag.as_deref() != Some(model_tag) {
            state.active_model_tag = Some(model_tag.to_string());
            *active = Some(target);
        }
        Ok(state.clone())
    }

    fn active_version_of(&self, tag: &str) -> Option<Arc<ModelVersion>> {
        let v = *self.state.read().unwrap_or_else(|e| e.into_inner()).active_versions.get(tag)?;
        self.version(tag, v)
    }

    pub fn state(&self) -> InferenceState {
        self.state.read().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn active_tag(&self) -> Option<String> {
        self.state().active_model_tag
    }

    pub fn version(&self, tag: &str, version: u64) -> Option<Arc<ModelVersion>> {
        let registry = self.registry.lock().unwrap_or_else(|e| e.into_inner());
        registry.versions.get(tag)?.iter().find(|v| v.version == version).cloned()
    }

    pub fn versions(&self, tag: &str) -> Vec<Arc<ModelVersion>> {
        let registry = self.registry.lock().unwrap_or_else(|e| e.into_inner());
        registry.versions.get(tag).cloned().unwrap_or_default()
    }

    /// Tags that have at least one trained version.
    pub fn trained_tags(&self) -> Vec<String> {
        let registry = self.registry.lock().unwrap_or_else(|e| e.into_inner());
        registry.versions.iter().filter(|(_, v)| !v.is_empty()).map(|(k, _)| k.clone()).collect()
    }

    pub fn stored_version_count(&self) -> usize {
        let registry = self.registry.lock().unwrap_or_else(|e| e.into_inner());
        registry.versions.values().map(Vec::len).sum()
    }

    /// Every registered `(tag, version)` pair.
    pub fn registry_pairs(&self) -> BTreeSet<(String, u64)> {
        let registry = self.registry.lock().unwrap_or_else(|e| e.into_inner());
        registry.versions.iter().flat_map(|(t, vs)| vs.iter().map(move |v| (t.clone(), v.version))).collect()
    }
}

fn persist_version(root: &Path, version: &ModelVersion, previous: &[Arc<ModelVersion>]) -> Result<()> {
    let dir = root.join(&version.model_tag);
    let file = dir.join(format!("v{:06}.json", version.version));
    write_atomic(&file, serde_json::to_string_pretty(version)?.as_bytes())?;
    let index = RegistryIndex {
        active_version: version.version,
        versions: previous
            .iter()
            .map(|v| v.as_ref())
            .chain(std::iter::once(version))
            .map(|v| IndexEntry {
                version: v.version,
                fingerprint: v.trained.training_fingerprint.clone(),
                created_at: v.created_at,
            })
            .collect(),
    };
    write_atomic(&dir.join("index.json"), serde_json::to_string_pretty(&index)?.as_bytes())?;
    Ok(())
}

/// Reads one stored version document back from a registry directory.
pub fn load_version(root: &Path, tag: &str, version: u64) -> Result<ModelVersion> {
    let path = root.join(tag).join(format!("v{version:06}.json"));
    let text = std::fs::read_to_string(&path)?;
    let v: ModelVersion = serde_json::from_str(&text)?;
    TrainedModel::from_json(&serde_json::to_string(&v.trained)?)?;
    Ok(v)
}
