//! Closed-form identities of the tracking metrics.

use acfleet_core::metrics::{fairness_variance, nrmse, pjm_score, ScoreConfig, TrackingRecord};
use proptest::prelude::*;

fn rec(reference: Vec<f64>, achieved: Vec<f64>) -> TrackingRecord {
    TrackingRecord { period: 2.0, reference, achieved }
}

#[test]
fn ten_percent_overshoot_is_ten_percent_error() {
    let r = rec(vec![100.0; 500], vec![110.0; 500]);
    assert!((nrmse(&r).unwrap() - 0.10).abs() < 1e-12);
}

#[test]
fn alternating_error_matches_hand_value() {
    // Errors of +5 and -5 around a mean of 50: rms 5, ratio 0.1.
    let reference: Vec<f64> = (0..400).map(|k| if k % 2 == 0 { 40.0 } else { 60.0 }).collect();
    let achieved: Vec<f64> =
        reference.iter().enumerate().map(|(k, r)| r + if k % 2 == 0 { 5.0 } else { -5.0 }).collect();
    assert!((nrmse(&rec(reference, achieved)).unwrap() - 0.1).abs() < 1e-12);
}

#[test]
fn perfect_tracking_scores_one() {
    let r: Vec<f64> = (0..900).map(|k| 1000.0 + 200.0 * (k as f64 / 40.0).sin()).collect();
    let s = pjm_score(&rec(r.clone(), r), &ScoreConfig::default()).unwrap();
    assert_eq!(s.composite(), 1.0);
}

#[test]
fn pure_lag_is_found() {
    // Response copies the reference 60 s late; correlation peaks at that lag.
    let r: Vec<f64> =
        (0..900).map(|k| 1000.0 + 200.0 * (k as f64 / 17.0).sin() + 50.0 * (k as f64 / 5.3).cos()).collect();
    let lag = 30;
    let a: Vec<f64> = (0..900usize).map(|k| r[k.saturating_sub(lag)]).collect();
    let s = pjm_score(&rec(r, a), &ScoreConfig::default()).unwrap();
    assert_eq!(s.best_delay_s, 60.0);
    assert!((s.delay - 0.8).abs() < 1e-12);
}

#[test]
fn group_of_everyone_matches_fleet_error() {
    let frames: Vec<Vec<f64>> = (0..50).map(|k| vec![1.0 + (k % 3) as f64; 20]).collect();
    let reference = vec![30.0; 50];
    let all: Vec<usize> = (0..20).collect();
    let rep = fairness_variance(&frames, &reference, &all[..10], &all[10..], 10, 5, 1).unwrap();
    // Every house carries the same trace, so every group has the same variance.
    assert!(rep.remote_inside_range);
    assert!(rep.virtual_variances.iter().all(|v| (v - rep.remote_variance).abs() < 1e-12));
}

proptest! {
    #[test]
    fn nrmse_is_scale_invariant(
        pairs in prop::collection::vec((1.0f64..1000.0, -50.0f64..50.0), 1..200),
        scale in 0.001f64..1000.0,
    ) {
        let reference: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let achieved: Vec<f64> = pairs.iter().map(|p| p.0 + p.1).collect();
        let a = nrmse(&rec(reference.clone(), achieved.clone())).unwrap();
        let b = nrmse(&rec(
            reference.iter().map(|x| x * scale).collect(),
            achieved.iter().map(|x| x * scale).collect(),
        )).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
    }

    #[test]
    fn score_parts_stay_in_unit_interval(
        noise in prop::collection::vec(-300.0f64..300.0, 400),
    ) {
        let reference: Vec<f64> = (0..400).map(|k| 1000.0 + 100.0 * (k as f64 / 9.0).sin()).collect();
        let achieved: Vec<f64> = reference.iter().zip(&noise).map(|(r, n)| r + n).collect();
        let s = pjm_score(&rec(reference, achieved), &ScoreConfig::default()).unwrap();
        for v in [s.correlation, s.delay, s.precision, s.composite()] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
