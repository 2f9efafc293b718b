//! Strategy evaluation: a deterministic rule table from uncertainty kinds to
//! tactics and strategies, with priority ordering and a post-adaptation
//! cooldown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::domain::{AdaptationPlan, PlanTrigger, PlannedAction, SwitchDirection, UncertaintyEvent, UncertaintyKind};
use crate::error::{Error, Result};
use crate::knowledge::TacticsRepository;

pub mod tactic {
    pub const MODEL_SWITCH: &str = "ModelSwitch";
    pub const RETRAIN: &str = "Retrain";
    pub const UPDATE_OBJECTIVES: &str = "UpdateObjectives";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerPolicy {
    /// Highest priority first.
    pub priority: Vec<UncertaintyKind>,
    /// Ticks after an executed plan during which nothing new is planned.
    pub cooldown: u64,
}

impl Default for PlannerPolicy {
    fn default() -> Self {
        Self {
            priority: vec![
                UncertaintyKind::ModelDrift,
                UncertaintyKind::HighEnergyConsumption,
                UncertaintyKind::RiseInCost,
                UncertaintyKind::FutureGoalChange,
            ],
            cooldown: 30,
        }
    }
}

impl PlannerPolicy {
    pub fn validate(&self) -> Result<()> {
        let mut sorted = self.priority.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != self.priority.len() || sorted.len() != UncertaintyKind::ALL.len() {
            return Err(Error::Config("planner priority must list every uncertainty kind exactly once".into()));
        }
        Ok(())
    }

    fn rank(&self, kind: UncertaintyKind) -> usize {
        self.priority.iter().position(|k| *k == kind).unwrap_or(usize::MAX)
    }
}

/// What the planner may know about the model registry.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RegistryView {
    pub active: Option<String>,
    /// Tags with at least one trained version.
    pub trained: Vec<String>,
    pub energy_coefficients: BTreeMap<String, f64>,
    pub r2_recent: BTreeMap<String, f64>,
}

/// Picks the model to switch to, or `None` when no alternative qualifies.
///
/// `LowerEnergy` takes the smallest energy coefficient among the other
/// trained tags, provided it does not exceed the active model's.
/// `BetterPerformance` takes the highest recent R² (unknown counts as lowest).
/// Ties go to the lexicographically smaller tag.
pub fn select_switch_target(direction: SwitchDirection, view: &RegistryView) -> Option<String> {
    if view.trained.len() < 2 {
        return None;
    }
    let mut candidates: Vec<&String> =
        view.trained.iter().filter(|t| Some(t.as_str()) != view.active.as_deref()).collect();
    candidates.sort();
    match direction {
        SwitchDirection::LowerEnergy => {
            let coeff = |t: &str| view.energy_coefficients.get(t).copied().unwrap_or(f64::INFINITY);
            let best = candidates.into_iter().min_by(|a, b| coeff(a).total_cmp(&coeff(b)))?;
            let active = view.active.as_deref().map_or(f64::INFINITY, coeff);
            (coeff(best) <= active).then(|| best.clone())
        }
        SwitchDirection::BetterPerformance => {
            let r2 = |t: &str| view.r2_recent.get(t).copied().unwrap_or(f64::NEG_INFINITY);
            // max_by keeps the last maximum; iterate in reverse so ties resolve to the smaller tag.
            candidates.into_iter().rev().max_by(|a, b| r2(a).total_cmp(&r2(b))).cloned()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Planner {
    policy: PlannerPolicy,
    last_executed: Option<u64>,
}

impl Planner {
    pub fn new(policy: PlannerPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self { policy, last_executed: None })
    }

    pub fn policy(&self) -> &PlannerPolicy {
        &self.policy
    }

    pub fn in_cooldown(&self, tick: u64) -> bool {
        self.last_executed.is_some_and(|last| tick <= last + self.policy.cooldown)
    }

    /// Starts the cooldown.
    pub fn record_execution(&mut self, tick: u64) {
        self.last_executed = Some(tick);
    }

    /// Chooses at most one plan for this tick. Events are considered in
    /// priority order; the first that resolves to a concrete action wins.
    pub fn plan(
        &self,
        events: &[UncertaintyEvent],
        tactics: &TacticsRepository,
        view: &RegistryView,
        retrain_window: usize,
        tick: u64,
        now: f64,
    ) -> Result<Option<AdaptationPlan>> {
        if events.is_empty() || self.in_cooldown(tick) {
            return Ok(None);
        }
        let mut ordered: Vec<&UncertaintyEvent> = events.iter().collect();
        ordered.sort_by_key(|e| self.policy.rank(e.kind));

        for event in ordered {
            let (tactic, strategy) = tactics
                .lookup(event.kind)
                .ok_or_else(|| Error::Config(format!("no tactic configured for {}", event.kind)))?;
            if !tactic.applies_to(event.kind) {
                return Err(Error::Config(format!("tactic `{}` does not handle {}", tactic.name, event.kind)));
            }
            let action = match tactic.name.as_str() {
                tactic::MODEL_SWITCH => {
                    let direction = match strategy.param("direction") {
                        Some("BetterPerformance") => SwitchDirection::BetterPerformance,
                        Some("LowerEnergy") | None => SwitchDirection::LowerEnergy,
                        Some(other) => return Err(Error::Config(format!("unknown switch direction `{other}`"))),
                    };
                    match select_switch_target(direction, view) {
                        Some(to) => PlannedAction::Switch { to },
                        None => continue,
                    }
                }
                tactic::RETRAIN => {
                    let models = match strategy.param("target").unwrap_or("active") {
                        "active" => view.active.iter().cloned().collect(),
                        "all" => view.trained.clone(),
                        list => list.split(',').map(|s| s.trim().to_string()).collect(),
                    };
                    let window = match strategy.param("window") {
                        Some(w) => w.parse().map_err(|_| Error::Config(format!("bad retrain window `{w}`")))?,
                        None => retrain_window,
                    };
                    if models.is_empty() {
                        continue;
                    }
                    PlannedAction::Retrain { models, window }
                }
                tactic::UPDATE_OBJECTIVES => {
                    PlannedAction::NoOp { reason: "boundaries were updated when the goal change was received".into() }
                }
                other => return Err(Error::Config(format!("no executor for tactic `{other}`"))),
            };
            return Ok(Some(AdaptationPlan {
                trigger: PlanTrigger::Uncertainty(event.clone()),
                strategy: strategy.clone(),
                created_at: now,
                action,
            }));
        }
        Ok(None)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::AdaptationBoundary;

    fn tactics() -> TacticsRepository {
        let dir = tempfile::tempdir().unwrap();
        crate::knowledge::write_default_config(dir.path()).unwrap();
        crate::knowledge::KnowledgeBase::load(dir.path()).unwrap().tactics().clone()
    }

    fn view(active: &str, trained: &[&str]) -> RegistryView {
        RegistryView {
            active: Some(active.into()),
            trained: trained.iter().map(|s| s.to_string()).collect(),
            energy_coefficients: BTreeMap::from([("linear_ar".into(), 1e6), ("lstm".into(), 5e6)]),
            r2_recent: BTreeMap::new(),
        }
    }

    fn event(kind: UncertaintyKind) -> UncertaintyEvent {
        let b = AdaptationBoundary::new("energy_avg_10s", None, Some(1.0), "uJ");
        UncertaintyEvent::violation(kind, 0.0, &b, 2.0, "").unwrap()
    }

    fn planner() -> Planner {
        Planner::new(PlannerPolicy::default()).unwrap()
    }

    #[test]
    fn drift_plans_complete_retraining_of_active() {
        let plan = planner()
            .plan(&[event(UncertaintyKind::ModelDrift)], &tactics(), &view("lstm", &["linear_ar", "lstm"]), 500, 0, 0.0)
            .unwrap()
            .unwrap();
        assert_eq!(plan.strategy.name, "CompleteRetraining");
        assert_eq!(plan.strategy.tactic, "Retrain");
        assert_eq!(plan.action, PlannedAction::Retrain { models: vec!["lstm".into()], window: 500 });
    }

    #[test]
    fn high_energy_switches_to_lighter_model() {
        let plan = planner()
            .plan(
                &[event(UncertaintyKind::HighEnergyConsumption)],
                &tactics(),
                &view("lstm", &["linear_ar", "lstm"]),
                500,
                0,
                0.0,
            )
            .unwrap()
            .unwrap();
        assert_eq!(plan.action, PlannedAction::Switch { to: "linear_ar".into() });
    }

    #[test]
    fn nothing_to_plan() {
        assert!(planner().plan(&[], &tactics(), &view("lstm", &["lstm"]), 500, 0, 0.0).unwrap().is_none());
    }

    #[test]
    fn priority_prefers_drift() {
        let events = [event(UncertaintyKind::HighEnergyConsumption), event(UncertaintyKind::ModelDrift)];
        let plan =
            planner().plan(&events, &tactics(), &view("lstm", &["linear_ar", "lstm"]), 500, 0, 0.0).unwrap().unwrap();
        assert_eq!(plan.triggering_event().unwrap().kind, UncertaintyKind::ModelDrift);
    }

    #[test]
    fn cooldown_suppresses_plans() {
        let mut p = planner();
        p.record_execution(10);
        let events = [event(UncertaintyKind::ModelDrift)];
        let v = view("lstm", &["linear_ar", "lstm"]);
        assert!(p.plan(&events, &tactics(), &v, 500, 40, 0.0).unwrap().is_none());
        assert!(p.plan(&events, &tactics(), &v, 500, 41, 0.0).unwrap().is_some());
    }

    #[test]
    fn goal_change_is_a_noop_plan() {
        let ev = UncertaintyEvent::goal_change(0.0, &AdaptationBoundary::new("energy_avg_10s", None, Some(8.0), "uJ"), "");
        let plan = planner().plan(&[ev], &tactics(), &view("lstm", &["lstm"]), 500, 0, 0.0).unwrap().unwrap();
        assert!(matches!(plan.action, PlannedAction::NoOp { .. }));
    }

    #[test]
    fn switch_targets() {
        assert_eq!(
            select_switch_target(SwitchDirection::LowerEnergy, &view("lstm", &["linear_ar", "lstm"])).as_deref(),
            Some("linear_ar")
        );
        assert_eq!(select_switch_target(SwitchDirection::LowerEnergy, &view("lstm", &["lstm"])), None);
        assert_eq!(select_switch_target(SwitchDirection::LowerEnergy, &view("linear_ar", &["linear_ar", "lstm"])), None);

        let mut equal = view("c", &["a", "b", "c"]);
        equal.energy_coefficients = BTreeMap::from([("a".into(), 1.0), ("b".into(), 1.0), ("c".into(), 1.0)]);
        assert_eq!(select_switch_target(SwitchDirection::LowerEnergy, &equal).as_deref(), Some("a"));
        assert_eq!(select_switch_target(SwitchDirection::BetterPerformance, &equal).as_deref(), Some("a"));
        equal.r2_recent.insert("b".into(), 0.9);
        assert_eq!(select_switch_target(SwitchDirection::BetterPerformance, &equal).as_deref(), Some("b"));
    }

    #[test]
    fn incomplete_priority_rejected() {
        let policy = PlannerPolicy { priority: vec![UncertaintyKind::ModelDrift], cooldown: 0 };
        assert!(Planner::new(policy).is_err());
    }
}
