//! Sensor stream sources: CSV replay and a seeded synthetic generator with
//! an injectable drift schedule.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::domain::SensorReading;
use crate::error::{Error, Result};

pub const CSV_HEADER: [&str; 5] = ["timestamp", "pm25", "pm10", "temperature", "humidity"];

/// From `at_sample` on, the target is `mean + mean_shift + scale_mult × deviation`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftStep {
    pub at_sample: u64,
    pub mean_shift: f64,
    pub scale_mult: f64,
}

impl std::str::FromStr for DriftStep {
    type Err = Error;

    /// Parses `at:shift:scale`, e.g. `3000:40:1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || Error::InvalidInput(format!("drift step `{s}` is not `at:shift:scale`"));
        if parts.len() != 3 {
            return Err(bad());
        }
        Ok(DriftStep {
            at_sample: parts[0].trim().parse().map_err(|_| bad())?,
            mean_shift: parts[1].trim().parse().map_err(|_| bad())?,
            scale_mult: parts[2].trim().parse().map_err(|_| bad())?,
        })
    }
}

/// AR(1) process around `mean` with stationary standard deviation `std_dev`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticParams {
    pub mean: f64,
    pub phi: f64,
    pub std_dev: f64,
    pub start_timestamp: i64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self { mean: 50.0, phi: 0.8, std_dev: 5.0, start_timestamp: 1_700_000_000 }
    }
}

pub struct SyntheticSource {
    params: SyntheticParams,
    schedule: Vec<DriftStep>,
    rng: ChaCha8Rng,
    deviation: f64,
    index: u64,
    len: Option<u64>,
}

impl SyntheticSource {
    pub fn new(seed: u64, params: SyntheticParams, schedule: Vec<DriftStep>, len: Option<u64>) -> Result<Self> {
        if !(params.phi.abs() < 1.0) || !(params.std_dev >= 0.0) {
            return Err(Error::InvalidInput("synthetic process needs |phi| < 1 and std_dev >= 0".into()));
        }
        if schedule.windows(2).any(|w| w[0].at_sample > w[1].at_sample) {
            return Err(Error::InvalidInput("drift schedule must be sorted by at_sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let deviation = params.std_dev * normal(&mut rng);
        Ok(Self { params, schedule, rng, deviation, index: 0, len })
    }

    fn active_step(&self) -> Option<&DriftStep> {
        self.schedule.iter().take_while(|s| s.at_sample <= self.index).last()
    }

    pub fn next_reading(&mut self) -> Option<SensorReading> {
        if self.len.is_some_and(|n| self.index >= n) {
            return None;
        }
        let p = &self.params;
        if self.index > 0 {
            let innovation = p.std_dev * (1.0 - p.phi * p.phi).sqrt();
            self.deviation = p.phi * self.deviation + innovation * normal(&mut self.rng);
        }
        let (shift, scale) = self.active_step().map_or((0.0, 1.0), |s| (s.mean_shift, s.scale_mult));
        let pm25 = (p.mean + shift + scale * self.deviation).max(0.0);
        let pm10 = (1.6 * pm25 + 3.0 * normal(&mut self.rng)).max(0.0);
        let day = std::f64::consts::TAU * (self.index % 86_400) as f64 / 86_400.0;
        let temperature = 27.0 + 5.0 * day.sin() + 0.5 * normal(&mut self.rng);
        let humidity = (60.0 - 0.8 * (temperature - 27.0) + 2.0 * normal(&mut self.rng)).clamp(0.0, 100.0);
        let reading = SensorReading {
            timestamp: p.start_timestamp + self.index as i64,
            pm25,
            pm10,
            temperature,
            humidity,
        };
        self.index += 1;
        Some(reading)
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Row-by-row CSV replay with forward-fill and timestamp normalisation.
pub struct ReplaySource {
    path: PathBuf,
    records: csv::StringRecordsIntoIter<File>,
    speedup: f64,
    last: Option<SensorReading>,
    skipped: usize,
    dropped_leading: usize,
}

impl ReplaySource {
    pub fn open(path: &Path, speedup: f64) -> Result<Self> {
        if !(speedup > 0.0) {
            return Err(Error::InvalidInput("speedup must be positive".into()));
        }
        let mut reader = csv::ReaderBuilder::new().flexible(true).trim(csv::Trim::All).from_path(path)?;
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(Error::Parse {
                file: path.to_path_buf(),
                line: 1,
                msg: format!("expected header `{}`", CSV_HEADER.join(",")),
            });
        }
        Ok(Self {
            path: path.to_path_buf(),
            records: reader.into_records(),
            speedup,
            last: None,
            skipped: 0,
            dropped_leading: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Malformed rows skipped so far.
    pub fn skipped(&self) -> usize {
        self.skipped
    }

    /// Leading rows dropped because a value had nothing to carry forward.
    pub fn dropped_leading(&self) -> usize {
        self.dropped_leading
    }

    /// Wall-clock spacing between readings when paced in real time.
    pub fn interval(&self) -> Duration {
        Duration::from_secs_f64(1.0 / self.speedup)
    }

    pub fn next_reading(&mut self) -> Option<SensorReading> {
        loop {
            let record = match self.records.next()? {
                Ok(r) => r,
                Err(_) => {
                    self.skipped += 1;
                    continue;
                }
            };
            match self.parse(&record) {
                Row::Reading(r) => {
                    self.last = Some(r);
                    return Some(r);
                }
                Row::Malformed => self.skipped += 1,
                Row::Leading => self.dropped_leading += 1,
            }
        }
    }

    fn parse(&self, record: &csv::StringRecord) -> Row {
        if record.len() != CSV_HEADER.len() {
            return Row::Malformed;
        }
        let Ok(mut timestamp) = record[0].parse::<i64>() else {
            return Row::Malformed;
        };
        let mut values = [0.0; 4];
        for (i, slot) in values.iter_mut().enumerate() {
            let field = &record[i + 1];
            if field.is_empty() {
                let Some(last) = self.last else {
                    return Row::Leading;
                };
                *slot = [last.pm25, last.pm10, last.temperature, last.humidity][i];
            } else {
                match field.parse::<f64>() {
                    Ok(v) if v.is_finite() => *slot = v,
                    _ => return Row::Malformed,
                }
            }
        }
        if let Some(last) = self.last {
            if timestamp <= last.timestamp {
                timestamp = last.timestamp + 1;
            }
        }
        let reading = SensorReading {
            timestamp,
            pm25: values[0],
            pm10: values[1],
            temperature: values[2],
            humidity: values[3],
        };
        if reading.is_valid() {
            Row::Reading(reading)
        } else {
            Row::Malformed
        }
    }
}

enum Row {
    Reading(SensorReading),
    Malformed,
    Leading,
}

/// How a run obtains its readings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StreamConfig {
    Replay {
        path: PathBuf,
        #[serde(default = "one")]
        speedup: f64,
    },
    Synthetic {
        seed: u64,
        len: u64,
        #[serde(default)]
        params: SyntheticParams,
        #[serde(default)]
        drift: Vec<DriftStep>,
    },
}

fn one() -> f64 {
    1.0
}

pub enum StreamSource {
    Replay(ReplaySource),
    Synthetic(SyntheticSource),
}

impl StreamSource {
    pub fn open(config: &StreamConfig) -> Result<Self> {
        Ok(match config {
            StreamConfig::Replay { path, speedup } => StreamSource::Replay(ReplaySource::open(path, *speedup)?),
            StreamConfig::Synthetic { seed, len, params, drift } => {
                StreamSource::Synthetic(SyntheticSource::new(*seed, params.clone(), drift.clone(), Some(*len))?)
            }
        })
    }

    pub fn next_reading(&mut self) -> Option<SensorReading> {
        match self {
            StreamSource::Replay(r) => r.next_reading(),
            StreamSource::Synthetic(s) => s.next_reading(),
        }
    }

    pub fn skipped(&self) -> usize {
        match self {
            StreamSource::Replay(r) => r.skipped(),
            StreamSource::Synthetic(_) => 0,
        }
    }

    /// Drains the remaining readings.
    pub fn collect_all(&mut self) -> Vec<SensorReading> {
        std::iter::from_fn(|| self.next_reading()).collect()
    }
}

/// Chronological split into a training prefix and an evaluation stream.
pub fn train_test_split(
    mut readings: Vec<SensorReading>,
    split_point: usize,
    min_train: usize,
) -> Result<(Vec<SensorReading>, Vec<SensorReading>)> {
    if split_point < min_train {
        return Err(Error::InsufficientData { needed: min_train, got: split_point });
    }
    if split_point >= readings.len() {
        return Err(Error::InvalidInput(format!(
            "split point {split_point} leaves an empty evaluation stream ({} readings)",
            readings.len()
        )));
    }
    let eval = readings.split_off(split_point);
    Ok((readings, eval))
}

pub fn write_csv(path: &Path, readings: &[SensorReading]) -> Result<()> {
    let mut out = std::io::BufWriter::new(File::create(path)?);
    writeln!(out, "{}", CSV_HEADER.join(","))?;
    for r in readings {
        writeln!(out, "{},{},{},{},{}", r.timestamp, r.pm25, r.pm10, r.temperature, r.humidity)?;
    }
    out.flush()?;
    Ok(())
}
