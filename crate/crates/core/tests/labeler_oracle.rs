mod common;

use intentflow::labeler::{self, Thresholds};
use intentflow::rng;
use intentflow::types::{KinematicWindow, MetaAction};
use proptest::prelude::*;

#[test]
fn matches_brute_force_rules_on_10k_windows() {
    let th = Thresholds::default();
    let mut r = rng::seeded(2024, 1);
    let mut seen_lon = std::collections::HashSet::new();
    let mut seen_lat = std::collections::HashSet::new();
    for i in 0..10_000 {
        let w = common::random_window(&mut r);
        let got = labeler::label(&w, &th).unwrap();
        let (lon, lat) = common::oracle_label(&w, &th);
        assert_eq!(got, MetaAction::new(lon, lat), "window {i}: {w:?}");
        seen_lon.insert(format!("{lon:?}"));
        seen_lat.insert(format!("{lat:?}"));
    }
    // The generator reaches every branch of both ladders.
    assert_eq!(seen_lon.len(), 7, "{seen_lon:?}");
    assert_eq!(seen_lat.len(), 7, "{seen_lat:?}");
}

#[test]
fn single_frame_window_is_rejected() {
    let w = KinematicWindow { speeds: vec![1.0], headings: vec![0.0], positions: vec![[0.0, 0.0]], frame_dt: 0.25 };
    assert!(labeler::label(&w, &Thresholds::default()).is_err());
    assert!(labeler::sustained_yaw_direction(&w, &Thresholds::default()).is_err());
}

fn arb_window() -> impl Strategy<Value = KinematicWindow> {
    any::<u64>().prop_map(|s| common::random_window(&mut rng::seeded(s, 0)))
}

proptest! {
    #[test]
    fn deterministic(w in arb_window()) {
        let th = Thresholds::default();
        prop_assert_eq!(labeler::label(&w, &th).unwrap(), labeler::label(&w.clone(), &th).unwrap());
    }

    #[test]
    fn frame_dt_does_not_change_labels(w in arb_window(), f in 0.1f64..10.0) {
        let th = Thresholds::default();
        let mut scaled = w.clone();
        scaled.frame_dt *= f;
        prop_assert_eq!(labeler::label(&w, &th).unwrap(), labeler::label(&scaled, &th).unwrap());
    }

    #[test]
    fn longitudinal_is_first_matching_rule(w in arb_window()) {
        let th = Thresholds::default();
        let (lon, _) = common::oracle_label(&w, &th);
        prop_assert_eq!(labeler::classify_longitudinal(&w, &th).unwrap(), lon);
    }
}
