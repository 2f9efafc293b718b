//! Uncertainty detection: boundary checks over monitored metrics and a
//! histogram KL-divergence drift detector comparing live data against the
//! training distribution.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::domain::{AdaptationBoundary, UncertaintyEvent, UncertaintyKind};
use crate::error::{Error, Result};
use crate::knowledge::KnowledgeBase;
use crate::monitor::{known_unit, metric, Monitor};

/// `Σ p_i ln(p_i / q_i)` in nats, with `0 · ln(0/q) = 0`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch { left: p.len(), right: q.len() });
    }
    for (name, dist) in [("p", p), ("q", q)] {
        if dist.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
            return Err(Error::Domain(format!("{name} has a negative or non-finite entry")));
        }
        let sum: f64 = dist.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Domain(format!("{name} sums to {sum}, not 1")));
        }
    }
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi == 0.0 {
            continue;
        }
        if qi == 0.0 {
            return Err(Error::Domain("q is zero where p has mass".into()));
        }
        total += pi * (pi / qi).ln();
    }
    // Rounding can leave a tiny negative value for p ≈ q.
    Ok(total.max(0.0))
}

/// Where a goal boundary is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryRoute {
    /// Checked by `check_boundaries`, raising events of this kind.
    Metric(UncertaintyKind),
    /// Threshold of the drift detector.
    DriftThreshold,
}

pub fn route_for_metric(name: &str) -> Option<BoundaryRoute> {
    known_unit(name)?;
    Some(match name {
        metric::KL_DIVERGENCE => BoundaryRoute::DriftThreshold,
        metric::R2_RECENT => BoundaryRoute::Metric(UncertaintyKind::ModelDrift),
        metric::RESPONSE_TIME => BoundaryRoute::Metric(UncertaintyKind::HighEnergyConsumption),
        n if n.starts_with("energy_") || n == metric::TRAINING_ENERGY => {
            BoundaryRoute::Metric(UncertaintyKind::HighEnergyConsumption)
        }
        n if n.starts_with("cost_") => BoundaryRoute::Metric(UncertaintyKind::RiseInCost),
        _ => return None,
    })
}

/// Startup check that every boundary can be evaluated.
pub fn validate_boundary_metrics(goals: &[AdaptationBoundary]) -> Result<()> {
    let errors: Vec<String> = goals
        .iter()
        .filter(|b| route_for_metric(&b.metric_name).is_none())
        .map(|b| format!("boundary names unknown metric `{}`", b.metric_name))
        .collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(errors.join("; ")))
    }
}

/// Reads each boundary's current metric value and reports inclusive
/// violations. Metrics without a current value raise nothing.
pub fn check_boundaries(goals: &[AdaptationBoundary], monitor: &Monitor, now: f64) -> Vec<UncertaintyEvent> {
    goals
        .iter()
        .filter_map(|b| {
            let BoundaryRoute::Metric(kind) = route_for_metric(&b.metric_name)? else {
                return None;
            };
            let value = monitor.current_value(&b.metric_name, now)?;
            UncertaintyEvent::violation(kind, now, b, value, format!("{} = {value}", b.metric_name))
        })
        .collect()
}

/// Replaces (or adds) the boundary for `metric_name`, persists the goals and
/// returns the audit event. On rejection the old boundary stays in force.
pub fn update_boundary(
    knowledge: &KnowledgeBase,
    metric_name: &str,
    min: Option<f64>,
    max: Option<f64>,
    now: f64,
) -> Result<UncertaintyEvent> {
    let mut goals = knowledge.goals();
    let unit = goals
        .boundary(metric_name)
        .map(|b| b.unit.clone())
        .or_else(|| known_unit(metric_name).map(str::to_string))
        .ok_or_else(|| Error::Config(format!("unknown metric `{metric_name}`")))?;
    let boundary = AdaptationBoundary::new(metric_name, min, max, unit);
    if let Some(reason) = boundary.check() {
        return Err(Error::Validation(vec![format!("boundary `{metric_name}`: {reason}")]));
    }
    validate_boundary_metrics(std::slice::from_ref(&boundary))?;
    goals.boundaries.insert(metric_name.to_string(), boundary.clone());
    let revision = knowledge.persist_update(goals)?;
    Ok(UncertaintyEvent::goal_change(now, &boundary, format!("goals revision {revision}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DriftConfig {
    pub bins: usize,
    pub window: usize,
    pub epsilon: f64,
    pub threshold: f64,
}

impl Default for DriftConfig {
    fn default() -> Self {
        Self { bins: 20, window: 500, epsilon: 1e-6, threshold: 0.5 }
    }
}

/// Histogram drift detector: reference bins from training data, a ring of
/// the last `window` live values, and `KL(live ‖ reference)` against a
/// threshold.
#[derive(Debug, Clone)]
pub struct DriftDetector {
    config: DriftConfig,
    lo: f64,
    hi: f64,
    reference: Vec<f64>,
    live: VecDeque<f64>,
}

impl DriftDetector {
    pub fn new(reference: &[f64], config: DriftConfig) -> Result<Self> {
        if config.bins < 2 {
            return Err(Error::InvalidInput("drift detector needs at least 2 bins".into()));
        }
        if config.window < config.bins {
            return Err(Error::InvalidInput("drift window must be at least the bin count".into()));
        }
        if !(config.epsilon > 0.0) {
            return Err(Error::InvalidInput("smoothing epsilon must be positive".into()));
        }
        let mut detector = Self {
            config,
            lo: 0.0,
            hi: 1.0,
            reference: Vec::new(),
            live: VecDeque::with_capacity(config.window),
        };
        detector.refresh_reference(reference)?;
        Ok(detector)
    }

    pub fn config(&self) -> &DriftConfig {
        &self.config
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn set_threshold(&mut self, threshold: f64) {
        self.config.threshold = threshold;
    }

    /// Rebuilds the reference histogram (and bin edges) from `values`.
    pub fn refresh_reference(&mut self, values: &[f64]) -> Result<()> {
        if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("reference data must be non-empty and finite".into()));
        }
        let (mut lo, mut hi) = values.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        if !(lo < hi) {
            lo -= 0.5;
            hi += 0.5;
        }
        self.lo = lo;
        self.hi = hi;
        self.reference = self.histogram(values.iter().copied());
        Ok(())
    }

    pub fn push(&mut self, value: f64) {
        if self.live.len() == self.config.window {
            self.live.pop_front();
        }
        self.live.push_back(value);
    }

    pub fn live_len(&self) -> usize {
        self.live.len()
    }

    pub fn live_values(&self) -> Vec<f64> {
        self.live.iter().copied().collect()
    }

    fn bin(&self, v: f64) -> usize {
        let b = self.config.bins;
        let pos = ((v - self.lo) / (self.hi - self.lo) * b as f64).floor();
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(b - 1)
        }
    }

    /// Smoothed, normalised histogram on the reference bin edges; values
    /// outside the range land in the edge bins.
    fn histogram(&self, values: impl Iterator<Item = f64>) -> Vec<f64> {
        let mut counts = vec![self.config.epsilon; self.config.bins];
        for v in values {
            counts[self.bin(v)] += 1.0;
        }
        let total: f64 = counts.iter().sum();
        counts.iter().map(|c| c / total).collect()
    }

    /// `KL(live ‖ reference)`, or `None` while the live window is not full.
    pub fn divergence(&self) -> Option<f64> {
        if self.live.len() < self.config.window {
            return None;
        }
        let live = self.histogram(self.live.iter().copied());
        kl_divergence(&normalized(&live), &normalized(&self.reference)).ok()
    }

    pub fn check_drift(&self, now: f64) -> Option<UncertaintyEvent> {
        let kl = self.divergence()?;
        let boundary = AdaptationBoundary::new(metric::KL_DIVERGENCE, None, Some(self.config.threshold), "nats");
        UncertaintyEvent::violation(
            UncertaintyKind::ModelDrift,
            now,
            &boundary,
            kl,
            format!("KL(live || reference) = {kl:.4} over {} samples", self.live.len()),
        )
    }
}

/// Renormalises so the sum is 1 up to rounding.
fn normalized(p: &[f64]) -> Vec<f64> {
    let s: f64 = p.iter().sum();
    p.iter().map(|v| v / s).collect()
}
