//! Applies adaptation plans to the managed system and records the outcome in
//! the knowledge event log.

use serde::{Deserialize, Serialize};

use crate::analyzer::DriftDetector;
use crate::domain::{AdaptationPlan, PlannedAction};
use crate::error::Result;
use crate::knowledge::{EventLog, HistoricalDataRepository};
use crate::managed::ManagedSystem;

pub const ADAPTATION_EVENT: &str = "Adaptation";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Succeeded,
    Failed { reason: String },
    NoOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionReport {
    pub plan: AdaptationPlan,
    pub started_at: f64,
    pub finished_at: f64,
    pub outcome: Outcome,
    pub active_model_tag: Option<String>,
    /// `(tag, version)` for every model registered by this plan.
    pub new_versions: Vec<(String, u64)>,
    pub training_energy_uj: f64,
}

impl ExecutionReport {
    pub fn succeeded(&self) -> bool {
        self.outcome == Outcome::Succeeded
    }
}

pub struct Executor<'a> {
    pub managed: &'a ManagedSystem,
    pub history: &'a HistoricalDataRepository,
    /// Re-referenced on the retraining window after a successful retrain.
    pub drift: Option<&'a mut DriftDetector>,
    pub log: &'a EventLog,
}

impl Executor<'_> {
    /// Runs `plan`, logs the report, and returns it. A failed plan leaves the
    /// managed system as it was. Only event-log I/O produces an `Err`.
    pub fn execute(&mut self, plan: &AdaptationPlan, now: f64) -> Result<ExecutionReport> {
        let (outcome, new_versions, training_energy_uj) = match &plan.action {
            PlannedAction::NoOp { .. } => (Outcome::NoOp, Vec::new(), 0.0),
            PlannedAction::Switch { to } => match self.managed.switch_active(to) {
                Ok(_) => (Outcome::Succeeded, Vec::new(), 0.0),
                Err(e) => (Outcome::Failed { reason: e.to_string() }, Vec::new(), 0.0),
            },
            PlannedAction::Retrain { models, window } => match self.retrain(models, *window, now) {
                Ok((versions, energy)) => (Outcome::Succeeded, versions, energy),
                Err(e) => (Outcome::Failed { reason: e.to_string() }, Vec::new(), 0.0),
            },
        };
        let report = ExecutionReport {
            plan: plan.clone(),
            started_at: now,
            finished_at: now,
            outcome,
            active_model_tag: self.managed.active_tag(),
            new_versions,
            training_energy_uj,
        };
        self.log.append(now, ADAPTATION_EVENT, &report)?;
        Ok(report)
    }

    /// Fits every model before registering any, so a failure part-way
    /// through leaves the registry untouched.
    fn retrain(&mut self, models: &[String], window: usize, now: f64) -> Result<(Vec<(String, u64)>, f64)> {
        let data = self.history.latest(window);
        let prepared = models
            .iter()
            .map(|tag| self.managed.prepare_training(tag, &data, now))
            .collect::<Result<Vec<_>>>()?;
        let mut versions = Vec::with_capacity(prepared.len());
        let mut energy = 0.0;
        for p in prepared {
            let out = self.managed.commit_training(p)?;
            energy += out.energy_uj;
            versions.push((out.version.model_tag.clone(), out.version.version));
        }
        if let Some(drift) = self.drift.as_deref_mut() {
            let target = self.managed.config().target;
            let values: Vec<f64> = data.iter().map(|r| r.value(target)).collect();
            drift.refresh_reference(&values)?;
        }
        Ok((versions, energy))
    }
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::analyzer::DriftConfig;
    use crate::domain::{PlanTrigger, SensorReading, Strategy, TargetColumn};
    use crate::forecast::ForecasterSpec;
    use crate::managed::{ManagedConfig, ServiceTiming};
    use crate::monitor::EnergyModel;

    fn system() -> ManagedSystem {
        ManagedSystem::new(ManagedConfig {
            specs: BTreeMap::from([
                ("linear_ar".into(), ForecasterSpec::linear(2)),
                ("lstm".into(), ForecasterSpec::lstm(2, 2, 5, 0.05, 1)),
            ]),
            target: TargetColumn::Pm25,
            timing: ServiceTiming::default(),
            energy: EnergyModel::default(),
            registry_root: None,
        })
        .unwrap()
    }

    fn history(n: usize) -> HistoricalDataRepository {
        let mut h = HistoricalDataRepository::new(1000);
        for i in 0..n {
            let v = 50.0 + (i as f64 * 0.3).sin() * 5.0;
            h.push(SensorReading { timestamp: i as i64, pm25: v, pm10: v, temperature: 20.0, humidity: 50.0 });
        }
        h
    }

    fn plan(action: PlannedAction) -> AdaptationPlan {
        AdaptationPlan {
            trigger: PlanTrigger::Schedule { period: 10 },
            strategy: Strategy {
                name: "Test".into(),
                tactic: "Test".into(),
                parameters: Default::default(),
                executable: true,
            },
            created_at: 0.0,
            action,
        }
    }

    #[test]
    fn retrain_registers_and_logs() {
        let sys = system();
        let hist = history(100);
        sys.train_job("lstm", &hist.latest(100), 0.0).unwrap();
        let log = EventLog::in_memory();
        let mut drift = DriftDetector::new(&[0.0, 1.0], DriftConfig::default()).unwrap();
        let mut ex = Executor { managed: &sys, history: &hist, drift: Some(&mut drift), log: &log };
        let report =
            ex.execute(&plan(PlannedAction::Retrain { models: vec!["lstm".into()], window: 50 }), 5.0).unwrap();
        assert!(report.succeeded());
        assert_eq!(report.new_versions, vec![("lstm".to_string(), 2)]);
        assert!(report.training_energy_uj > 0.0);
        assert_eq!(log.len(), 1);
        assert!(drift.range().0 > 40.0, "reference refreshed from the retrain window");
    }

    #[test]
    fn failed_retrain_leaves_state_unchanged() {
        let sys = system();
        let hist = history(100);
        sys.train_job("linear_ar", &hist.latest(100), 0.0).unwrap();
        let before = (sys.state(), sys.registry_pairs());
        let log = EventLog::in_memory();
        let mut ex = Executor { managed: &sys, history: &hist, drift: None, log: &log };
        // The second model is unknown, so neither may be registered.
        let p = plan(PlannedAction::Retrain { models: vec!["linear_ar".into(), "prophet".into()], window: 50 });
        let report = ex.execute(&p, 1.0).unwrap();
        assert!(matches!(report.outcome, Outcome::Failed { .. }));
        assert_eq!((sys.state(), sys.registry_pairs()), before);
        assert_eq!(log.recent(1)[0].kind, ADAPTATION_EVENT);
    }

    #[test]
    fn switch_and_failed_switch() {
        let sys = system();
        let hist = history(100);
        sys.train_job("linear_ar", &hist.latest(100), 0.0).unwrap();
        let log = EventLog::in_memory();
        let mut ex = Executor { managed: &sys, history: &hist, drift: None, log: &log };
        let failed = ex.execute(&plan(PlannedAction::Switch { to: "lstm".into() }), 1.0).unwrap();
        assert!(matches!(failed.outcome, Outcome::Failed { .. }));
        assert_eq!(failed.active_model_tag.as_deref(), Some("linear_ar"));

        sys.train_job("lstm", &hist.latest(100), 2.0).unwrap();
        let ok = ex.execute(&plan(PlannedAction::Switch { to: "lstm".into() }), 3.0).unwrap();
        assert!(ok.succeeded());
        assert_eq!(ok.active_model_tag.as_deref(), Some("lstm"));
    }

    #[test]
    fn noop_changes_nothing() {
        let sys = system();
        let hist = history(10);
        let log = EventLog::in_memory();
        let mut ex = Executor { managed: &sys, history: &hist, drift: None, log: &log };
        let r = ex.execute(&plan(PlannedAction::NoOp { reason: "x".into() }), 0.0).unwrap();
        assert_eq!(r.outcome, Outcome::NoOp);
    }
}
