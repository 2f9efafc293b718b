//! Experiment runner: drives ingestion, serving and the adaptation loop for
//! one of six approaches, writes a run report, and compares reports.
//!
//! | approach | models | retraining | switching |
//! |----------|--------|------------|-----------|
//! | A1 | linear_ar | never | off |
//! | A2 | lstm | never | off |
//! | A3 | lstm | periodic | off |
//! | A4 | linear_ar | periodic | off |
//! | A5 | both | periodic | on energy |
//! | A6 | both | on drift | on energy |
//!
//! Time is simulated: one tick per ingested sample at 1 Hz, so a "10 s"
//! window is ten samples. A run writes `report.json`, `comparison.csv`,
//! `events.log`, `metrics.log` and `models/` into its output directory.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::analyzer::{self, check_boundaries, DriftConfig, DriftDetector};
use crate::control::{self, ControlCommand, ControlServer};
use crate::domain::{
    AdaptationPlan, PlanTrigger, PlannedAction, TargetColumn, UncertaintyEvent, UncertaintyKind,
};
use crate::error::{Error, Result};
use crate::executor::{ExecutionReport, Executor, Outcome};
use crate::forecast::{self, r_squared, ForecasterSpec};
use crate::fsutil::write_atomic;
use crate::ingestion::{train_test_split, DriftStep, StreamConfig, StreamSource, SyntheticParams};
use crate::knowledge::{write_default_config, EventLog, HistoricalDataRepository, KnowledgeBase, GOALS_FILE};
use crate::managed::{ManagedConfig, ManagedSystem, ServiceTiming};
use crate::monitor::{metric, CostModel, EnergyModel, MetricSample, Monitor};
use crate::planner::{Planner, PlannerPolicy, RegistryView};

pub const REPORT_FILE: &str = "report.json";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const EVENTS_FILE: &str = "events.log";
pub const METRICS_FILE: &str = "metrics.log";
pub const MODELS_DIR: &str = "models";

const LINEAR: &str = "linear_ar";
const LSTM: &str = "lstm";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Approach {
    A1,
    A2,
    A3,
    A4,
    A5,
    A6,
}

impl Approach {
    pub const ALL: [Approach; 6] = [Approach::A1, Approach::A2, Approach::A3, Approach::A4, Approach::A5, Approach::A6];
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown approach `{s}`, expected A1..A6")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RetrainPolicy {
    Never,
    Periodic { period: u64 },
    OnDrift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Switching {
    Off,
    /// Switch on energy and cost boundary violations from the goals file.
    OnEnergy,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ApproachConfig {
    pub approach: Approach,
    /// Enabled models; the first one starts active.
    pub models: Vec<String>,
    pub retrain: RetrainPolicy,
    pub switching: Switching,
}

impl ApproachConfig {
    pub fn new(approach: Approach, period: u64) -> Self {
        use Approach::*;
        let (models, retrain, switching): (&[&str], _, _) = match approach {
            A1 => (&[LINEAR], RetrainPolicy::Never, Switching::Off),
            A2 => (&[LSTM], RetrainPolicy::Never, Switching::Off),
            A3 => (&[LSTM], RetrainPolicy::Periodic { period }, Switching::Off),
            A4 => (&[LINEAR], RetrainPolicy::Periodic { period }, Switching::Off),
            A5 => (&[LSTM, LINEAR], RetrainPolicy::Periodic { period }, Switching::OnEnergy),
            A6 => (&[LSTM, LINEAR], RetrainPolicy::OnDrift, Switching::OnEnergy),
        };
        Self { approach, models: models.iter().map(|s| s.to_string()).collect(), retrain, switching }
    }

    fn reacts_to(&self, kind: UncertaintyKind) -> bool {
        match kind {
            UncertaintyKind::ModelDrift => self.retrain == RetrainPolicy::OnDrift,
            UncertaintyKind::HighEnergyConsumption | UncertaintyKind::RiseInCost => {
                self.switching == Switching::OnEnergy
            }
            UncertaintyKind::FutureGoalChange => true,
        }
    }
}

/// Everything a run needs besides the approach. Every field has a default,
/// so `{}` is a valid configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarnessConfig {
    pub stream: StreamConfig,
    pub target: TargetColumn,
    /// Readings before this index train the initial models.
    pub split: usize,
    /// Goals, decision map and tactics. Defaults to `<out>/knowledge`,
    /// seeded with the bundled files when absent.
    pub knowledge_dir: Option<PathBuf>,
    pub models: BTreeMap<String, ForecasterSpec>,
    pub timing: ServiceTiming,
    pub energy: EnergyModel,
    pub cost: CostModel,
    pub drift: DriftConfig,
    pub planner: PlannerPolicy,
    /// Most recent readings used by any retraining.
    pub retrain_window: usize,
    pub retrain_period: u64,
    /// Predictions behind the `r2_recent` metric.
    pub r2_window: usize,
    pub monitor_retention: f64,
    pub control_socket: Option<PathBuf>,
    /// Wall-clock pause per tick, to give a control client time to act.
    pub tick_delay_ms: u64,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            stream: StreamConfig::Synthetic {
                seed: 7,
                len: 5000,
                params: SyntheticParams::default(),
                drift: vec![DriftStep { at_sample: 3000, mean_shift: 40.0, scale_mult: 1.0 }],
            },
            target: TargetColumn::Pm25,
            split: 2000,
            knowledge_dir: None,
            models: BTreeMap::from([
                (LINEAR.to_string(), ForecasterSpec::linear(12)),
                (LSTM.to_string(), ForecasterSpec::lstm(12, 8, 100, 0.2, 1)),
            ]),
            timing: ServiceTiming::default(),
            energy: EnergyModel::default(),
            cost: CostModel::default(),
            drift: DriftConfig::default(),
            planner: PlannerPolicy::default(),
            retrain_window: 500,
            retrain_period: 1000,
            r2_window: 200,
            monitor_retention: 600.0,
            control_socket: None,
            tick_delay_ms: 0,
        }
    }
}

impl HarnessConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse { file: path.to_path_buf(), line: 0, msg: format!("cannot read: {e}") })?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { file: path.to_path_buf(), line: e.line(), msg: e.to_string() })
    }

    pub fn validate(&self, approach: &ApproachConfig) -> Result<()> {
        let mut errors = Vec::new();
        for tag in &approach.models {
            match self.models.get(tag) {
                None => errors.push(format!("approach {} needs model `{tag}`", approach.approach)),
                Some(spec) => {
                    if let Err(e) = spec.validate() {
                        errors.push(format!("model `{tag}`: {e}"));
                    }
                    if spec.kind.tag() != tag {
                        errors.push(format!("model `{tag}` has a `{}` spec", spec.kind));
                    }
                    if self.retrain_window < spec.min_series_len() {
                        errors.push(format!(
                            "retrain_window {} is shorter than `{tag}` needs ({})",
                            self.retrain_window,
                            spec.min_series_len()
                        ));
                    }
                }
            }
        }
        if self.retrain_period == 0 {
            errors.push("retrain_period must be positive".into());
        }
        if self.r2_window < 2 {
            errors.push("r2_window must be at least 2".into());
        }
        if !(self.monitor_retention >= 10.0) {
            errors.push("monitor_retention must cover the 10 s window".into());
        }
        if let StreamConfig::Replay { speedup, .. } = &self.stream {
            if !(*speedup > 0.0) {
                errors.push("replay speedup must be positive".into());
            }
        }
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(errors))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub approach: Approach,
    pub stream_fingerprint: String,
    pub train_samples: usize,
    pub eval_samples: usize,
    pub skipped_rows: usize,
    /// Over every evaluation prediction; absent when undefined.
    pub r2: Option<f64>,
    /// Serving plus all training, including the initial fit.
    pub total_energy_uj: f64,
    pub serving_energy_uj: f64,
    pub training_energy_uj: f64,
    /// Energy spent during evaluation per 10-sample window.
    pub avg_energy_10s_uj: f64,
    pub switches: u64,
    pub retrains: u64,
    pub retrains_per_model: BTreeMap<String, u64>,
    pub versions_per_model: BTreeMap<String, u64>,
    pub drift_events: u64,
    pub first_drift_at: Option<u64>,
    pub final_model: Option<String>,
    pub goals_revision: u64,
    pub event_count: u64,
    pub events_log: String,
    pub approach_config: ApproachConfig,
    pub config: HarnessConfig,
}

impl RunReport {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { file: path.to_path_buf(), line: e.line(), msg: e.to_string() })
    }
}

struct Counters {
    serving: f64,
    training: f64,
    eval_training: f64,
    switches: u64,
    retrains: BTreeMap<String, u64>,
    drift_events: u64,
    first_drift_at: Option<u64>,
}

impl Counters {
    fn absorb(&mut self, report: &ExecutionReport) {
        if report.outcome != Outcome::Succeeded {
            return;
        }
        match &report.plan.action {
            PlannedAction::Switch { .. } => self.switches += 1,
            PlannedAction::Retrain { .. } => {
                for (tag, _) in &report.new_versions {
                    *self.retrains.entry(tag.clone()).or_default() += 1;
                }
                self.training += report.training_energy_uj;
                self.eval_training += report.training_energy_uj;
            }
            PlannedAction::NoOp { .. } => {}
        }
    }
}

/// Runs `approach` and writes its artifacts under `out`.
pub fn run(config: &HarnessConfig, approach: Approach, out: &Path) -> Result<RunReport> {
    let ac = ApproachConfig::new(approach, config.retrain_period);
    config.validate(&ac)?;

    std::fs::create_dir_all(out)?;
    let knowledge_dir = config.knowledge_dir.clone().unwrap_or_else(|| out.join("knowledge"));
    if !knowledge_dir.join(GOALS_FILE).exists() {
        write_default_config(&knowledge_dir)?;
    }
    let kb = KnowledgeBase::load(&knowledge_dir)?;
    analyzer::validate_boundary_metrics(&kb.goals().boundary_list())?;
    let planner_template = Planner::new(config.planner.clone())?;

    let models_dir = out.join(MODELS_DIR);
    if models_dir.exists() {
        std::fs::remove_dir_all(&models_dir)?;
    }
    let metrics_path = out.join(METRICS_FILE);
    if metrics_path.exists() {
        std::fs::remove_file(&metrics_path)?;
    }
    let managed = ManagedSystem::new(ManagedConfig {
        specs: ac.models.iter().map(|t| (t.clone(), config.models[t].clone())).collect(),
        target: config.target,
        timing: config.timing.clone(),
        energy: config.energy.clone(),
        registry_root: Some(models_dir),
    })?;
    let control = config.control_socket.as_deref().map(ControlServer::bind).transpose()?;

    let mut source = StreamSource::open(&config.stream)?;
    let readings = source.collect_all();
    let skipped_rows = source.skipped();
    let target = config.target;
    let all_values: Vec<f64> = readings.iter().map(|r| r.value(target)).collect();
    let stream_fingerprint = forecast::fingerprint(&all_values);
    let min_train = managed.min_training_len().max(config.drift.window);
    let (train, eval) = train_test_split(readings, config.split, min_train)
        .map_err(|e| Error::Config(format!("cannot split stream at {}: {e}", config.split)))?;

    let log = EventLog::open(&out.join(EVENTS_FILE))?;
    let monitor = Monitor::new(config.monitor_retention).with_export(&metrics_path)?;
    log.append(config.split as f64, "RunStarted", json!({ "approach": approach, "goals_revision": kb.revision() }))?;

    let mut counters = Counters {
        serving: 0.0,
        training: 0.0,
        eval_training: 0.0,
        switches: 0,
        retrains: BTreeMap::new(),
        drift_events: 0,
        first_drift_at: None,
    };
    let start = train.len() as f64 - 1.0;
    for tag in &ac.models {
        let out = managed.train_job(tag, &train, start)?;
        counters.training += out.energy_uj;
        monitor.record(MetricSample::new(metric::TRAINING_ENERGY, start, out.energy_uj))?;
        log.append(
            start,
            "InitialTraining",
            json!({ "model": tag, "version": out.version.version, "energy_uj": out.energy_uj }),
        )?;
    }

    let train_values: Vec<f64> = train.iter().map(|r| r.value(target)).collect();
    let mut drift = DriftDetector::new(&train_values, config.drift)?;
    let mut history = HistoricalDataRepository::new(config.retrain_window.max(managed.min_training_len()) + 64);
    for r in &train {
        history.push(*r);
    }
    let mut planner = planner_template;
    let mut predictions: Vec<(f64, f64)> = Vec::with_capacity(eval.len());
    let mut pending: Vec<UncertaintyEvent> = Vec::new();
    let delay = Duration::from_millis(config.tick_delay_ms);

    for (k, reading) in eval.iter().enumerate() {
        let tick = k as u64;
        let sample = (train.len() + k) as u64;
        let now = sample as f64;

        // Serve, then learn the ground truth.
        let window = history.latest(managed.lag_window()?);
        let served = managed.serve(&window, now)?;
        counters.serving += served.energy_uj;
        monitor.record(MetricSample::new(metric::ENERGY_PER_CALL, now, served.energy_uj))?;
        monitor.record(MetricSample::new(metric::RESPONSE_TIME, now, served.response_time))?;
        let truth = reading.value(target);
        history.push(*reading);
        drift.push(truth);
        predictions.push((served.prediction, truth));
        record_derived(config, &monitor, &managed, &drift, &predictions, now)?;

        // Analyze.
        let goals = kb.goals();
        if let Some(b) = goals.boundary(metric::KL_DIVERGENCE).and_then(|b| b.max) {
            drift.set_threshold(b);
        }
        let mut events = std::mem::take(&mut pending);
        if ac.retrain == RetrainPolicy::OnDrift {
            events.extend(drift.check_drift(now));
        }
        events.extend(check_boundaries(&goals.boundary_list(), &monitor, now));
        events.retain(|e| ac.reacts_to(e.kind));
        for e in &events {
            if e.kind == UncertaintyKind::ModelDrift {
                counters.drift_events += 1;
                counters.first_drift_at.get_or_insert(sample);
            }
            if e.kind != UncertaintyKind::FutureGoalChange {
                log.append(now, &e.kind.to_string(), e)?;
            }
        }

        // Plan and execute.
        let plan = match ac.retrain {
            RetrainPolicy::Periodic { period } if sample.is_multiple_of(period) && tick > 0 => {
                Some(scheduled_plan(&kb, &managed, period, config.retrain_window, now)?)
            }
            _ => {
                let view = registry_view(&managed, config);
                planner.plan(&events, kb.tactics(), &view, config.retrain_window, tick, now)?
            }
        };
        if let Some(plan) = plan {
            let mut executor = Executor { managed: &managed, history: &history, drift: Some(&mut drift), log: &log };
            let report = executor.execute(&plan, now)?;
            if report.outcome != Outcome::NoOp {
                planner.record_execution(tick);
            }
            if report.training_energy_uj > 0.0 {
                monitor.record(MetricSample::new(metric::TRAINING_ENERGY, now, report.training_energy_uj))?;
            }
            counters.absorb(&report);
        }

        if let Some(server) = &control {
            server.poll(|cmd| match cmd {
                ControlCommand::GetStatus => control::ok(json!({
                    "active_model": managed.active_tag(),
                    "revision": kb.revision(),
                    "tick": tick,
                    "sample": sample,
                    "last_events": log.recent(5),
                })),
                ControlCommand::UpdateBoundary { metric, min, max } => {
                    match analyzer::update_boundary(&kb, &metric, min, max, now) {
                        Ok(event) => {
                            let logged = log.append(now, &event.kind.to_string(), &event);
                            pending.push(event);
                            match logged {
                                Ok(_) => control::ok(json!({ "revision": kb.revision() })),
                                Err(e) => control::rejected(e),
                            }
                        }
                        Err(e) => control::rejected(e),
                    }
                }
            })?;
        }
        if !delay.is_zero() {
            std::thread::sleep(delay);
        }
    }

    let (y_pred, y_true): (Vec<f64>, Vec<f64>) = predictions.iter().copied().unzip();
    let r2 = r_squared(&y_true, &y_pred).ok();
    let windows = (eval.len() as f64 / 10.0).max(1.0);
    log.append((train.len() + eval.len()) as f64, "RunFinished", json!({ "approach": approach }))?;
    monitor.flush()?;

    let retrains_per_model: BTreeMap<String, u64> =
        ac.models.iter().map(|t| (t.clone(), counters.retrains.get(t).copied().unwrap_or(0))).collect();
    let report = RunReport {
        approach,
        stream_fingerprint,
        train_samples: train.len(),
        eval_samples: eval.len(),
        skipped_rows,
        r2,
        total_energy_uj: counters.serving + counters.training,
        serving_energy_uj: counters.serving,
        training_energy_uj: counters.training,
        avg_energy_10s_uj: (counters.serving + counters.eval_training) / windows,
        switches: counters.switches,
        retrains: retrains_per_model.values().sum(),
        retrains_per_model,
        versions_per_model: ac.models.iter().map(|t| (t.clone(), managed.versions(t).len() as u64)).collect(),
        drift_events: counters.drift_events,
        first_drift_at: counters.first_drift_at,
        final_model: managed.active_tag(),
        goals_revision: kb.revision(),
        event_count: log.len(),
        events_log: EVENTS_FILE.to_string(),
        approach_config: ac,
        config: config.clone(),
    };
    write_atomic(&out.join(REPORT_FILE), serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_comparison_csv(&out.join(COMPARISON_FILE), &compare(std::slice::from_ref(&report))?)?;
    Ok(report)
}

fn record_derived(
    config: &HarnessConfig,
    monitor: &Monitor,
    managed: &ManagedSystem,
    drift: &DriftDetector,
    predictions: &[(f64, f64)],
    now: f64,
) -> Result<()> {
    if let Some(kl) = drift.divergence() {
        monitor.record(MetricSample::new(metric::KL_DIVERGENCE, now, kl))?;
    }
    if predictions.len() >= config.r2_window {
        let recent = &predictions[predictions.len() - config.r2_window..];
        let (p, t): (Vec<f64>, Vec<f64>) = recent.iter().copied().unzip();
        if let Ok(r2) = r_squared(&t, &p) {
            monitor.record(MetricSample::new(metric::R2_RECENT, now, r2))?;
        }
    }
    if let Some(avg) = monitor.current_value(metric::ENERGY_AVG_10S, now) {
        let cost = config.cost.cost_per_hour(avg, 1.0, managed.stored_version_count());
        monitor.record(MetricSample::new(metric::COST_PER_HOUR, now, cost))?;
    }
    Ok(())
}

fn registry_view(managed: &ManagedSystem, config: &HarnessConfig) -> RegistryView {
    RegistryView {
        active: managed.active_tag(),
        trained: managed.trained_tags(),
        energy_coefficients: config.energy.coefficients.clone(),
        r2_recent: BTreeMap::new(),
    }
}

/// Periodic retraining of every enabled model, outside the planner's rule
/// table.
fn scheduled_plan(
    kb: &KnowledgeBase,
    managed: &ManagedSystem,
    period: u64,
    window: usize,
    now: f64,
) -> Result<AdaptationPlan> {
    let (_, strategy) = kb
        .tactics()
        .lookup(UncertaintyKind::ModelDrift)
        .ok_or_else(|| Error::Config("no retraining strategy configured".into()))?;
    let mut strategy = strategy.clone();
    strategy.parameters.insert("target".into(), "all".into());
    Ok(AdaptationPlan {
        trigger: PlanTrigger::Schedule { period },
        strategy,
        created_at: now,
        action: PlannedAction::Retrain { models: managed.trained_tags(), window },
    })
}

/// Runs several approaches concurrently, each into `out/<approach>`, and
/// writes the combined comparison to `out/comparison.csv`.
pub fn run_all(config: &HarnessConfig, approaches: &[Approach], out: &Path) -> Result<Vec<RunReport>> {
    let mut config = config.clone();
    // One socket cannot serve several runs.
    config.control_socket = None;
    let results: Vec<Result<RunReport>> = std::thread::scope(|s| {
        let handles: Vec<_> = approaches
            .iter()
            .map(|&a| {
                let config = &config;
                let dir = out.join(a.to_string());
                s.spawn(move || run(config, a, &dir))
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err(Error::Domain("run panicked".into())))).collect()
    });
    let reports = results.into_iter().collect::<Result<Vec<_>>>()?;
    write_comparison_csv(&out.join(COMPARISON_FILE), &compare(&reports)?)?;
    Ok(reports)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub approach: Approach,
    pub r2: Option<f64>,
    pub log10_avg_energy_10s: f64,
    pub total_energy_uj: f64,
    pub switches: u64,
    pub retrains: u64,
}

/// One row per report, in approach order. Reports over different streams
/// are refused.
pub fn compare(reports: &[RunReport]) -> Result<Vec<ComparisonRow>> {
    let first = reports.first().ok_or_else(|| Error::InvalidInput("nothing to compare".into()))?;
    if let Some(other) = reports.iter().find(|r| r.stream_fingerprint != first.stream_fingerprint) {
        return Err(Error::StreamMismatch(first.stream_fingerprint.clone(), other.stream_fingerprint.clone()));
    }
    let mut rows: Vec<ComparisonRow> = reports
        .iter()
        .map(|r| ComparisonRow {
            approach: r.approach,
            r2: r.r2,
            log10_avg_energy_10s: r.avg_energy_10s_uj.log10(),
            total_energy_uj: r.total_energy_uj,
            switches: r.switches,
            retrains: r.retrains,
        })
        .collect();
    rows.sort_by_key(|r| r.approach);
    Ok(rows)
}

pub fn write_comparison_csv(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn render_table(rows: &[ComparisonRow]) -> String {
    let mut s = format!(
        "{:<8} {:>8} {:>14} {:>16} {:>8} {:>8}\n",
        "approach", "r2", "log10(uJ/10s)", "total_uJ", "switches", "retrains"
    );
    for r in rows {
        let r2 = r.r2.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        s.push_str(&format!(
            "{:<8} {:>8} {:>14.4} {:>16.0} {:>8} {:>8}\n",
            r.approach.to_string(),
            r2,
            r.log10_avg_energy_10s,
            r.total_energy_uj,
            r.switches,
            r.retrains
        ));
    }
    s
}
