//! Metric collection over sliding time windows, plus the energy and cost
//! accounting models behind the monitored metrics.

use std::collections::{BTreeMap, VecDeque};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Names of the metrics the control loop produces.
pub mod metric {
    pub const ENERGY_PER_CALL: &str = "energy_per_call";
    pub const ENERGY_AVG_10S: &str = "energy_avg_10s";
    pub const TRAINING_ENERGY: &str = "training_energy";
    pub const RESPONSE_TIME: &str = "response_time";
    pub const COST_PER_HOUR: &str = "cost_per_hour";
    pub const KL_DIVERGENCE: &str = "kl_divergence";
    pub const R2_RECENT: &str = "r2_recent";
}

/// Unit of every known metric.
pub fn known_unit(name: &str) -> Option<&'static str> {
    Some(match name {
        metric::ENERGY_PER_CALL | metric::ENERGY_AVG_10S | metric::TRAINING_ENERGY => "uJ",
        metric::RESPONSE_TIME => "s",
        metric::COST_PER_HOUR => "cost/h",
        metric::KL_DIVERGENCE => "nats",
        metric::R2_RECENT => "ratio",
        _ => return None,
    })
}

/// Window horizon (seconds) of the metrics defined as averages of another.
fn derived(name: &str) -> Option<(&'static str, f64)> {
    match name {
        metric::ENERGY_AVG_10S => Some((metric::ENERGY_PER_CALL, 10.0)),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSample {
    #[serde(rename = "metric")]
    pub metric_name: String,
    pub timestamp: f64,
    pub value: f64,
    pub unit: String,
}

impl MetricSample {
    /// Sample for a known metric, with its canonical unit.
    pub fn new(metric: &str, timestamp: f64, value: f64) -> Self {
        Self {
            metric_name: metric.to_string(),
            timestamp,
            value,
            unit: known_unit(metric).unwrap_or_default().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricWindow {
    pub metric_name: String,
    pub horizon: f64,
    pub samples: Vec<MetricSample>,
}

impl MetricWindow {
    pub fn average(&self) -> Option<f64> {
        if self.samples.is_empty() {
            return None;
        }
        Some(self.samples.iter().map(|s| s.value).sum::<f64>() / self.samples.len() as f64)
    }
}

/// Thread-safe metric store. Samples older than `retention` seconds behind
/// the newest sample of their metric are evicted.
#[derive(Debug)]
pub struct Monitor {
    retention: f64,
    series: RwLock<BTreeMap<String, VecDeque<MetricSample>>>,
    export: Option<Mutex<BufWriter<File>>>,
}

impl Monitor {
    pub fn new(retention: f64) -> Self {
        Self { retention, series: RwLock::new(BTreeMap::new()), export: None }
    }

    /// Also appends every recorded sample as a JSON line to `path`.
    pub fn with_export(mut self, path: &Path) -> Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        self.export = Some(Mutex::new(BufWriter::new(file)));
        Ok(self)
    }

    pub fn retention(&self) -> f64 {
        self.retention
    }

    pub fn record(&self, sample: MetricSample) -> Result<()> {
        if !sample.value.is_finite() || !sample.timestamp.is_finite() {
            return Err(Error::NonFinite(format!("metric `{}`", sample.metric_name)));
        }
        if let Some(unit) = known_unit(&sample.metric_name) {
            if sample.unit != unit {
                return Err(Error::InvalidInput(format!(
                    "metric `{}` is measured in `{unit}`, got `{}`",
                    sample.metric_name, sample.unit
                )));
            }
        }
        if let Some(export) = &self.export {
            let mut w = export.lock().unwrap_or_else(|e| e.into_inner());
            serde_json::to_writer(&mut *w, &sample)?;
            w.write_all(b"\n")?;
        }

        let mut series = self.series.write().unwrap_or_else(|e| e.into_inner());
        let queue = series.entry(sample.metric_name.clone()).or_default();
        let pos = queue.partition_point(|s| s.timestamp <= sample.timestamp);
        queue.insert(pos, sample);
        let newest = queue.back().map_or(f64::NEG_INFINITY, |s| s.timestamp);
        while queue.front().is_some_and(|s| s.timestamp < newest - self.retention) {
            queue.pop_front();
        }
        Ok(())
    }

    /// Samples with timestamps in `(now − horizon, now]`.
    pub fn window(&self, metric_name: &str, horizon: f64, now: f64) -> MetricWindow {
        let series = self.series.read().unwrap_or_else(|e| e.into_inner());
        let samples = series
            .get(metric_name)
            .map(|q| q.iter().filter(|s| s.timestamp > now - horizon && s.timestamp <= now).cloned().collect())
            .unwrap_or_default();
        MetricWindow { metric_name: metric_name.to_string(), horizon, samples }
    }

    pub fn windowed_average(&self, metric_name: &str, horizon: f64, now: f64) -> Option<f64> {
        if !(horizon > 0.0) {
            return None;
        }
        self.window(metric_name, horizon, now).average()
    }

    pub fn latest(&self, metric_name: &str) -> Option<MetricSample> {
        let series = self.series.read().unwrap_or_else(|e| e.into_inner());
        series.get(metric_name).and_then(|q| q.back().cloned())
    }

    /// Current value of a boundary metric: derived metrics are windowed
    /// averages of their source, others the newest retained sample at or
    /// before `now`.
    pub fn current_value(&self, metric_name: &str, now: f64) -> Option<f64> {
        if let Some((source, horizon)) = derived(metric_name) {
            return self.windowed_average(source, horizon, now);
        }
        let series = self.series.read().unwrap_or_else(|e| e.into_inner());
        series
            .get(metric_name)?
            .iter()
            .rev()
            .find(|s| s.timestamp <= now && s.timestamp > now - self.retention)
            .map(|s| s.value)
    }

    pub fn flush(&self) -> Result<()> {
        if let Some(export) = &self.export {
            export.lock().unwrap_or_else(|e| e.into_inner()).flush()?;
        }
        Ok(())
    }

    /// Converts CPU time to energy with `model` and records it as
    /// `energy_per_call`.
    pub fn account_energy(&self, model: &EnergyModel, model_tag: &str, cpu_seconds: f64, now: f64) -> Result<f64> {
        let energy = model.energy(model_tag, cpu_seconds)?;
        self.record(MetricSample::new(metric::ENERGY_PER_CALL, now, energy))?;
        Ok(energy)
    }
}

impl Drop for Monitor {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}

/// Per-model energy proxy: µJ = CPU seconds × coefficient (µJ/s).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyModel {
    pub coefficients: BTreeMap<String, f64>,
}

impl Default for EnergyModel {
    fn default() -> Self {
        Self { coefficients: BTreeMap::from([("linear_ar".to_string(), 1e6), ("lstm".to_string(), 5e6)]) }
    }
}

impl EnergyModel {
    pub fn coefficient(&self, model_tag: &str) -> Result<f64> {
        self.coefficients
            .get(model_tag)
            .copied()
            .ok_or_else(|| Error::Config(format!("no energy coefficient for model `{model_tag}`")))
    }

    pub fn energy(&self, model_tag: &str, cpu_seconds: f64) -> Result<f64> {
        if !(cpu_seconds >= 0.0) {
            return Err(Error::InvalidInput(format!("cpu_seconds must be non-negative, got {cpu_seconds}")));
        }
        Ok(cpu_seconds * self.coefficient(model_tag)?)
    }
}

/// `cost_per_hour = price_per_joule × joules_per_hour + price_per_version × stored_versions`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub price_per_joule: f64,
    pub price_per_version: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self { price_per_joule: 1e-4, price_per_version: 1e-3 }
    }
}

impl CostModel {
    pub fn cost_per_hour(&self, avg_energy_per_call_uj: f64, calls_per_second: f64, stored_versions: usize) -> f64 {
        let joules_per_hour = avg_energy_per_call_uj * 1e-6 * calls_per_second * 3600.0;
        self.price_per_joule * joules_per_hour + self.price_per_version * stored_versions as f64
    }
}

/// CPU time consumed by the calling thread, in seconds.
#[cfg(unix)]
pub fn thread_cpu_seconds() -> f64 {
    let mut ts = libc::timespec { tv_sec: 0, tv_nsec: 0 };
    // SAFETY: `ts` is a valid out-pointer for the duration of the call.
    let rc = unsafe { libc::clock_gettime(libc::CLOCK_THREAD_CPUTIME_ID, &mut ts) };
    if rc != 0 {
        return 0.0;
    }
    ts.tv_sec as f64 + ts.tv_nsec as f64 * 1e-9
}

#[cfg(not(unix))]
pub fn thread_cpu_seconds() -> f64 {
    use std::sync::OnceLock;
    use std::time::Instant;
    static START: OnceLock<Instant> = OnceLock::new();
    START.get_or_init(Instant::now).elapsed().as_secs_f64()
}
