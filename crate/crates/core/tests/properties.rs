use std::collections::BTreeSet;

use proptest::prelude::*;
use sustain_core::analyzer::{kl_divergence, DriftConfig, DriftDetector};
use sustain_core::domain::{
    validate_decision_map, AdaptationBoundary, Concern, DecisionMap, SustainabilityDimension, SwitchDirection,
    ValidationError,
};
use sustain_core::forecast::{fit, fit_linear_ar, predict, r_squared, ForecasterSpec, TrainedModel};
use sustain_core::ingestion::{DriftStep, SyntheticParams, SyntheticSource};
use sustain_core::monitor::{MetricSample, Monitor};
use sustain_core::planner::{select_switch_target, RegistryView};

const METRICS: [&str; 4] = ["energy_avg_10s", "cost_per_hour", "kl_divergence", "response_time"];

fn decision_map() -> impl Strategy<Value = (DecisionMap, Vec<AdaptationBoundary>)> {
    let boundaries = proptest::sample::subsequence(METRICS.to_vec(), 1..=4).prop_map(|ms| {
        ms.into_iter().map(|m| AdaptationBoundary::new(m, None, Some(1.0), "u")).collect::<Vec<_>>()
    });
    boundaries.prop_flat_map(|bs| {
        let names: Vec<String> = bs.iter().map(|b| b.metric_name.clone()).collect();
        let concern = (0usize..4, proptest::sample::subsequence(names.clone(), 0..=names.len()))
            .prop_map(|(d, refs)| (SustainabilityDimension::ALL[d], refs));
        (proptest::collection::vec(concern, 0..5), Just(bs))
    })
    .prop_map(|(concerns, bs)| {
        let concerns = concerns
            .into_iter()
            .enumerate()
            .map(|(i, (dimension, boundaries))| Concern {
                name: format!("concern-{i}"),
                dimension,
                impacts: vec![],
                boundaries,
            })
            .collect();
        (DecisionMap { concerns }, bs)
    })
}

fn distribution(len: usize) -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(0.0f64..100.0, len).prop_map(|v| {
        let smoothed: Vec<f64> = v.iter().map(|x| x + 1e-6).collect();
        let s: f64 = smoothed.iter().sum();
        smoothed.iter().map(|x| x / s).collect()
    })
}

proptest! {
    #[test]
    fn decision_map_round_trips_and_validates((dm, bs) in decision_map()) {
        prop_assert!(validate_decision_map(&dm, &bs).is_empty());
        let back: DecisionMap = serde_json::from_str(&serde_json::to_string(&dm).unwrap()).unwrap();
        prop_assert_eq!(&back, &dm);
    }

    #[test]
    fn dangling_reference_is_reported((mut dm, bs) in decision_map()) {
        dm.concerns.push(Concern {
            name: "orphan".into(),
            dimension: SustainabilityDimension::Social,
            impacts: vec![],
            boundaries: vec!["no_such_metric".into()],
        });
        let errors = validate_decision_map(&dm, &bs);
        let expected = ValidationError::UnresolvedBoundary { concern: "orphan".into(), boundary: "no_such_metric".into() };
        prop_assert!(errors.contains(&expected));
    }

    #[test]
    fn duplicate_concern_is_reported((mut dm, bs) in decision_map()) {
        prop_assume!(!dm.concerns.is_empty());
        let copy = dm.concerns[0].clone();
        dm.concerns.push(copy);
        let errors = validate_decision_map(&dm, &bs);
        prop_assert!(errors.iter().any(|e| matches!(e, ValidationError::DuplicateConcern(_))));
    }

    #[test]
    fn gibbs_inequality((p, q) in (2usize..30).prop_flat_map(|n| (distribution(n), distribution(n)))) {
        prop_assert!(kl_divergence(&p, &q).unwrap() >= 0.0);
        prop_assert_eq!(kl_divergence(&p, &p).unwrap(), 0.0);
    }

    #[test]
    fn boundary_violation_is_inclusive(lo in -100.0f64..0.0, width in 0.001f64..100.0, v in -200.0f64..200.0) {
        let b = AdaptationBoundary::new("energy_avg_10s", Some(lo), Some(lo + width), "uJ");
        prop_assert_eq!(b.is_violated(v), v <= lo || v >= lo + width);
        prop_assert!(b.is_violated(lo));
        prop_assert!(b.is_violated(lo + width));
    }

    #[test]
    fn r_squared_is_permutation_invariant(
        pairs in proptest::collection::vec((-1e3f64..1e3, -1e3f64..1e3), 2..60),
        rot in 0usize..60,
    ) {
        let (t, p): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
        prop_assume!(t.iter().any(|&x| (x - t[0]).abs() > 1e-6));
        let k = rot % pairs.len();
        let mut rotated = pairs.clone();
        rotated.rotate_left(k);
        let (t2, p2): (Vec<f64>, Vec<f64>) = rotated.into_iter().unzip();
        let a = r_squared(&t, &p).unwrap();
        let b = r_squared(&t2, &p2).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        prop_assert!(a <= 1.0);
        prop_assert_eq!(r_squared(&t, &t).unwrap(), 1.0);
    }

    #[test]
    fn linear_residuals_are_orthogonal_to_regressors(seed in any::<u64>(), lag in 1usize..5) {
        let series: Vec<f64> = SyntheticSource::new(seed, SyntheticParams::default(), vec![], Some(300))
            .unwrap()
            .collect_values();
        let model = fit_linear_ar(&series, &ForecasterSpec::linear(lag)).unwrap();
        let mut dot = vec![0.0; lag + 1];
        for t in lag..series.len() {
            let window = &series[t - lag..t];
            let r = series[t] - predict(&model, window).unwrap();
            for (j, x) in window.iter().enumerate() {
                dot[j] += r * (x - 50.0);
            }
            dot[lag] += r;
        }
        let scale = series.len() as f64 * 25.0;
        for d in dot {
            prop_assert!(d.abs() / scale < 1e-6, "{d}");
        }
    }

    #[test]
    fn lstm_training_is_deterministic(seed in 0u64..1000) {
        let series: Vec<f64> = (0..40).map(|i| (i as f64 * 0.4).sin() * 3.0 + 10.0).collect();
        let spec = ForecasterSpec::lstm(3, 3, 4, 0.05, seed);
        let a = fit(&series, &spec).unwrap();
        let b = fit(&series, &spec).unwrap();
        prop_assert_eq!(&a.parameters, &b.parameters);
        let back = TrainedModel::from_json(&a.to_json().unwrap()).unwrap();
        prop_assert_eq!(predict(&back, &series[..3]).unwrap(), predict(&a, &series[..3]).unwrap());
    }

    #[test]
    fn monitor_window_average_matches_samples(
        values in proptest::collection::vec(0.0f64..1e4, 1..80),
        horizon in 1.0f64..30.0,
    ) {
        let monitor = Monitor::new(1000.0);
        for (i, v) in values.iter().enumerate() {
            monitor.record(MetricSample::new("energy_per_call", i as f64, *v)).unwrap();
        }
        let now = (values.len() - 1) as f64;
        let inside: Vec<f64> = values
            .iter()
            .enumerate()
            .filter(|(i, _)| (*i as f64) > now - horizon)
            .map(|(_, v)| *v)
            .collect();
        let expected = inside.iter().sum::<f64>() / inside.len() as f64;
        let got = monitor.windowed_average("energy_per_call", horizon, now).unwrap();
        prop_assert!((got - expected).abs() <= 1e-9 * expected.max(1.0));
    }

    #[test]
    fn synthetic_streams_are_reproducible(seed in any::<u64>(), at in 1u64..200, shift in -50.0f64..50.0) {
        let schedule = vec![DriftStep { at_sample: at, mean_shift: shift, scale_mult: 1.0 }];
        let a = SyntheticSource::new(seed, SyntheticParams::default(), schedule.clone(), Some(200)).unwrap().collect_values();
        let b = SyntheticSource::new(seed, SyntheticParams::default(), schedule, Some(200)).unwrap().collect_values();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn detector_never_fires_on_its_own_reference(seed in any::<u64>()) {
        let values = SyntheticSource::new(seed, SyntheticParams::default(), vec![], Some(500)).unwrap().collect_values();
        let mut d = DriftDetector::new(&values, DriftConfig::default()).unwrap();
        for v in &values {
            d.push(*v);
        }
        prop_assert!(d.divergence().unwrap() < 1e-9);
        prop_assert!(d.check_drift(0.0).is_none());
    }

    #[test]
    fn switch_target_is_never_the_active_model(
        tags in proptest::collection::btree_set("[a-e]", 1..5),
        coeffs in proptest::collection::vec(1.0f64..10.0, 5),
        active_ix in 0usize..5,
    ) {
        let trained: Vec<String> = tags.iter().cloned().collect();
        let active = trained[active_ix % trained.len()].clone();
        let view = RegistryView {
            active: Some(active.clone()),
            trained: trained.clone(),
            energy_coefficients: trained.iter().cloned().zip(coeffs.iter().copied()).collect(),
            r2_recent: Default::default(),
        };
        for dir in [SwitchDirection::LowerEnergy, SwitchDirection::BetterPerformance] {
            if let Some(t) = select_switch_target(dir, &view) {
                prop_assert_ne!(&t, &active);
                prop_assert!(trained.contains(&t));
            }
        }
        let lower = select_switch_target(SwitchDirection::LowerEnergy, &view);
        if let Some(t) = lower {
            prop_assert!(view.energy_coefficients[&t] <= view.energy_coefficients[&active]);
        }
        let others: BTreeSet<&String> = trained.iter().filter(|t| **t != active).collect();
        if others.is_empty() {
            prop_assert!(select_switch_target(SwitchDirection::BetterPerformance, &view).is_none());
        }
    }
}

trait CollectValues {
    fn collect_values(self) -> Vec<f64>;
}

impl CollectValues for SyntheticSource {
    fn collect_values(mut self) -> Vec<f64> {
        std::iter::from_fn(|| self.next_reading()).map(|r| r.pm25).collect()
    }
}
