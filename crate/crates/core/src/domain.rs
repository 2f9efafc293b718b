//! Shared domain vocabulary: sensor readings, decision maps, adaptation
//! boundaries, uncertainty events and adaptation plans.
//!
//! Everything here is a plain immutable value (`Clone + Send + Sync`).

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

/// One air-quality sample from the monitored stream.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorReading {
    /// Seconds since epoch.
    pub timestamp: i64,
    /// µg/m³
    pub pm25: f64,
    /// µg/m³
    pub pm10: f64,
    /// °C
    pub temperature: f64,
    /// % relative humidity
    pub humidity: f64,
}

impl SensorReading {
    pub fn is_valid(&self) -> bool {
        self.pm25.is_finite()
            && self.pm10.is_finite()
            && self.temperature.is_finite()
            && self.humidity.is_finite()
            && self.pm25 >= 0.0
            && self.pm10 >= 0.0
            && (0.0..=100.0).contains(&self.humidity)
    }

    pub fn value(&self, column: TargetColumn) -> f64 {
        match column {
            TargetColumn::Pm25 => self.pm25,
            TargetColumn::Pm10 => self.pm10,
            TargetColumn::Temperature => self.temperature,
            TargetColumn::Humidity => self.humidity,
        }
    }
}

/// Column the forecasters consume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetColumn {
    #[default]
    Pm25,
    Pm10,
    Temperature,
    Humidity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum SustainabilityDimension {
    Technical,
    Environmental,
    Economic,
    Social,
}

impl SustainabilityDimension {
    pub const ALL: [SustainabilityDimension; 4] = [
        SustainabilityDimension::Technical,
        SustainabilityDimension::Environmental,
        SustainabilityDimension::Economic,
        SustainabilityDimension::Social,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImpactKind {
    Immediate,
    Enabling,
    Systemic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Impact {
    pub kind: ImpactKind,
    pub description: String,
}

/// A sustainability concern identified at design time. Each concern sits in
/// exactly one dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Concern {
    pub name: String,
    pub dimension: SustainabilityDimension,
    #[serde(default)]
    pub impacts: Vec<Impact>,
    /// Metric names of the adaptation boundaries this concern motivates.
    #[serde(default)]
    pub boundaries: Vec<String>,
}

/// Textual encoding of the architect's decision map.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecisionMap {
    pub concerns: Vec<Concern>,
}

/// Acceptable interval for one monitored metric. Either side may be open.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationBoundary {
    #[serde(rename = "metric")]
    pub metric_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default)]
    pub unit: String,
}

impl AdaptationBoundary {
    pub fn new(metric: impl Into<String>, min: Option<f64>, max: Option<f64>, unit: impl Into<String>) -> Self {
        Self { metric_name: metric.into(), min, max, unit: unit.into() }
    }

    /// Returns a description of the broken invariant, if any.
    pub fn check(&self) -> Option<String> {
        match (self.min, self.max) {
            (None, None) => Some("neither min nor max is set".into()),
            (Some(lo), _) if !lo.is_finite() => Some("min is not finite".into()),
            (_, Some(hi)) if !hi.is_finite() => Some("max is not finite".into()),
            (Some(lo), Some(hi)) if lo >= hi => Some(format!("min {lo} is not below max {hi}")),
            _ => None,
        }
    }

    /// Inclusive violation predicate: `value <= min || value >= max`.
    pub fn is_violated(&self, value: f64) -> bool {
        self.min.is_some_and(|lo| value <= lo) || self.max.is_some_and(|hi| value >= hi)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum UncertaintyKind {
    ModelDrift,
    HighEnergyConsumption,
    FutureGoalChange,
    RiseInCost,
}

impl UncertaintyKind {
    pub const ALL: [UncertaintyKind; 4] = [
        UncertaintyKind::ModelDrift,
        UncertaintyKind::HighEnergyConsumption,
        UncertaintyKind::FutureGoalChange,
        UncertaintyKind::RiseInCost,
    ];
}

impl fmt::Display for UncertaintyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// A detected, typed violation together with the evidence behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyEvent {
    pub kind: UncertaintyKind,
    pub detected_at: f64,
    pub metric_name: String,
    pub observed_value: f64,
    pub violated_boundary: Option<AdaptationBoundary>,
    pub evidence: String,
}

impl UncertaintyEvent {
    /// Builds a violation event, or `None` when `value` is inside `boundary`.
    pub fn violation(
        kind: UncertaintyKind,
        detected_at: f64,
        boundary: &AdaptationBoundary,
        value: f64,
        evidence: impl Into<String>,
    ) -> Option<Self> {
        boundary.is_violated(value).then(|| Self {
            kind,
            detected_at,
            metric_name: boundary.metric_name.clone(),
            observed_value: value,
            violated_boundary: Some(boundary.clone()),
            evidence: evidence.into(),
        })
    }

    pub fn goal_change(detected_at: f64, new: &AdaptationBoundary, evidence: impl Into<String>) -> Self {
        Self {
            kind: UncertaintyKind::FutureGoalChange,
            detected_at,
            metric_name: new.metric_name.clone(),
            observed_value: new.max.or(new.min).unwrap_or(f64::NAN),
            violated_boundary: None,
            evidence: evidence.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tactic {
    pub name: String,
    pub applicable_kinds: BTreeSet<UncertaintyKind>,
}

impl Tactic {
    pub fn applies_to(&self, kind: UncertaintyKind) -> bool {
        self.applicable_kinds.contains(&kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Strategy {
    pub name: String,
    pub tactic: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, String>,
    /// Strategies listed for completeness that the executor cannot carry out.
    #[serde(default = "default_true")]
    pub executable: bool,
}

fn default_true() -> bool {
    true
}

impl Strategy {
    pub fn param(&self, key: &str) -> Option<&str> {
        self.parameters.get(key).map(String::as_str)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SwitchDirection {
    LowerEnergy,
    BetterPerformance,
}

/// What caused a plan: a detected uncertainty or a fixed retraining schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlanTrigger {
    Uncertainty(UncertaintyEvent),
    Schedule { period: u64 },
}

/// Concrete action after parameter resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PlannedAction {
    Switch { to: String },
    Retrain { models: Vec<String>, window: usize },
    NoOp { reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdaptationPlan {
    pub trigger: PlanTrigger,
    pub strategy: Strategy,
    pub created_at: f64,
    pub action: PlannedAction,
}

impl AdaptationPlan {
    pub fn triggering_event(&self) -> Option<&UncertaintyEvent> {
        match &self.trigger {
            PlanTrigger::Uncertainty(ev) => Some(ev),
            PlanTrigger::Schedule { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ValidationError {
    DuplicateConcern(String),
    UnresolvedBoundary { concern: String, boundary: String },
    DuplicateBoundary(String),
    InvalidBoundary { metric: String, reason: String },
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ValidationError::DuplicateConcern(name) => write!(f, "duplicate concern name `{name}`"),
            ValidationError::UnresolvedBoundary { concern, boundary } => {
                write!(f, "concern `{concern}` references unknown boundary `{boundary}`")
            }
            ValidationError::DuplicateBoundary(metric) => write!(f, "duplicate boundary for metric `{metric}`"),
            ValidationError::InvalidBoundary { metric, reason } => {
                write!(f, "boundary `{metric}` is invalid: {reason}")
            }
        }
    }
}

/// Checks a decision map and its goal boundaries against every structural
/// invariant; the result is empty iff the pair is consistent.
pub fn validate_decision_map(dm: &DecisionMap, goals: &[AdaptationBoundary]) -> Vec<ValidationError> {
    let mut errors = Vec::new();

    let mut metrics = HashSet::new();
    for b in goals {
        if !metrics.insert(b.metric_name.as_str()) {
            errors.push(ValidationError::DuplicateBoundary(b.metric_name.clone()));
        }
        if let Some(reason) = b.check() {
            errors.push(ValidationError::InvalidBoundary { metric: b.metric_name.clone(), reason });
        }
    }

    let mut names = HashSet::new();
    for concern in &dm.concerns {
        if !names.insert(concern.name.as_str()) {
            errors.push(ValidationError::DuplicateConcern(concern.name.clone()));
        }
        for boundary in &concern.boundaries {
            if !metrics.contains(boundary.as_str()) {
                errors.push(ValidationError::UnresolvedBoundary {
                    concern: concern.name.clone(),
                    boundary: boundary.clone(),
                });
            }
        }
    }
    errors
}

#[cfg(test)]
mod tests {
    use super::*;

    fn concern(name: &str, boundaries: &[&str]) -> Concern {
        Concern {
            name: name.into(),
            dimension: SustainabilityDimension::Technical,
            impacts: vec![],
            boundaries: boundaries.iter().map(|s| s.to_string()).collect(),
        }
    }

    fn energy() -> AdaptationBoundary {
        AdaptationBoundary::new("energy_avg_10s", None, Some(4.0), "uJ")
    }

    #[test]
    fn consistent_map_has_no_errors() {
        let dm = DecisionMap { concerns: vec![concern("Infrastructure Management", &["energy_avg_10s"])] };
        assert!(validate_decision_map(&dm, &[energy()]).is_empty());
    }

    #[test]
    fn dangling_boundary_reference() {
        let dm = DecisionMap { concerns: vec![concern("Latency", &["latency_p99"])] };
        let errs = validate_decision_map(&dm, &[energy()]);
        assert_eq!(
            errs,
            vec![ValidationError::UnresolvedBoundary { concern: "Latency".into(), boundary: "latency_p99".into() }]
        );
        assert!(errs[0].to_string().contains("latency_p99"));
    }

    #[test]
    fn duplicate_concern_names() {
        let dm = DecisionMap {
            concerns: vec![concern("Model Retraining", &["energy_avg_10s"]), concern("Model Retraining", &[])],
        };
        assert_eq!(
            validate_decision_map(&dm, &[energy()]),
            vec![ValidationError::DuplicateConcern("Model Retraining".into())]
        );
    }

    #[test]
    fn boundary_invariants() {
        assert!(AdaptationBoundary::new("x", None, None, "").check().is_some());
        assert!(AdaptationBoundary::new("x", Some(10.0), Some(3.0), "").check().is_some());
        assert!(AdaptationBoundary::new("x", Some(3.0), Some(3.0), "").check().is_some());
        assert!(AdaptationBoundary::new("x", Some(0.0), None, "").check().is_none());
    }

    #[test]
    fn violation_is_inclusive() {
        let b = AdaptationBoundary::new("energy_avg_10s", Some(0.0), Some(4.0), "uJ");
        assert!(b.is_violated(4.0));
        assert!(b.is_violated(5.0));
        assert!(b.is_violated(0.0));
        assert!(!b.is_violated(3.0));
        assert!(UncertaintyEvent::violation(UncertaintyKind::HighEnergyConsumption, 0.0, &b, 3.0, "").is_none());
    }

    #[test]
    fn readings_reject_out_of_range_values() {
        let mut r = SensorReading { timestamp: 0, pm25: 1.0, pm10: 2.0, temperature: 20.0, humidity: 50.0 };
        assert!(r.is_valid());
        r.humidity = 101.0;
        assert!(!r.is_valid());
        r.humidity = 50.0;
        r.pm25 = -0.1;
        assert!(!r.is_valid());
    }
}
