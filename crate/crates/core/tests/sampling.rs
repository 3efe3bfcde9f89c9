mod common;

use intentflow::fm;
use intentflow::rng;
use intentflow::sampler::euler_rollout;
use intentflow::types::IntentClass;
use intentflow::Error;
use ndarray::Array2;
use proptest::prelude::*;

#[test]
fn cfg_identities_hold_on_random_inputs() {
    let (e0, e1, e1_expr) = common::cfg_identity_errors(7);
    assert_eq!(e0, 0.0);
    assert_eq!(e1_expr, 0.0);
    assert!(e1 < 1e-12, "{e1:e}");
}

#[test]
fn euler_matches_closed_forms() {
    for n in [1, 2, 8, 64] {
        let (c, l) = common::euler_errors(n, n as u64);
        assert!(c <= 1e-9 && l <= 1e-9, "N={n}: const {c:e}, line {l:e}");
    }
}

#[test]
fn euler_rejects_non_finite_velocity() {
    let x = Array2::<f64>::zeros((1, 2));
    let r = euler_rollout(x, 4, |x, _, i| Ok(if i == 2 { x.mapv(|_| f64::NAN) } else { x.clone() }));
    assert!(matches!(r, Err(Error::NonFiniteVelocity { step: 2 })));
    assert!(euler_rollout(Array2::<f64>::zeros((1, 2)), 0, |x, _, _| Ok(x.clone())).is_err());
}

#[test]
fn warm_start_equals_guided_sampling_on_affine_net() {
    for (w, n) in [(1.5, 2), (0.0, 3), (1.0, 1), (3.0, 8)] {
        let e = common::affine_warm_start_error(w, n, 11);
        assert!(e <= 1e-6, "w={w} N={n}: {e:e}");
    }
}

#[test]
fn dropout_rate_and_time_mean() {
    let (rate, mean) = common::dropout_and_time_stats(100_000, 1_000_000, 5);
    assert!((rate - 0.15).abs() <= 0.005, "rate {rate}");
    assert!((mean - 0.6).abs() <= 0.002, "mean {mean}");
}

#[test]
fn pseudo_labels_always_drop_and_p_zero_never_drops() {
    let mut r = rng::seeded(0, 0);
    for i in 0..1000 {
        let k = IntentClass::new(i % 20).unwrap();
        assert!(fm::apply_cfg_dropout(k, true, 0.15, &mut r).is_uncond());
        assert_eq!(fm::apply_cfg_dropout(k, false, 0.0, &mut r), k);
    }
}

proptest! {
    #[test]
    fn time_stays_in_open_interval(u in 0.0f64..=1.0) {
        let t = fm::time_from_uniform(u);
        prop_assert!(t > 0.0 && t < 1.0);
    }

    #[test]
    fn interpolant_endpoints(x0 in prop::collection::vec(-5.0f64..5.0, 4), eps in prop::collection::vec(-5.0f64..5.0, 4)) {
        let at0 = fm::make_interpolant(&x0, &eps, 0.0).unwrap();
        let at1 = fm::make_interpolant(&x0, &eps, 1.0).unwrap();
        prop_assert_eq!(at0, x0.clone());
        prop_assert_eq!(at1, eps.clone());
        let u = fm::fm_target(&x0, &eps).unwrap();
        for j in 0..4 {
            prop_assert!((u[j] - (eps[j] - x0[j])).abs() < 1e-12);
        }
    }
}
