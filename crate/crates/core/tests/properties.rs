//! Property-based tests of the mollification and the subsolution blend.

use exitprob::model::{ExitDomain, ProcessModel};
use exitprob::subsolution::{mollify, MRule, SchemeKind, SchemeParams, SubsolutionSet};
use proptest::prelude::*;

fn pieces_strategy() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-50.0f64..50.0, -10.0f64..10.0), 1..=3)
}

proptest! {
    #[test]
    fn mollify_sandwich_and_simplex(vals in pieces_strategy(), delta in 0.01f64..2.0) {
        let n = vals.len() as f64;
        let (value, _grad, weights) = mollify(&vals, delta);
        let vmin = vals.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        prop_assert!(value <= vmin + 1e-10);
        prop_assert!(value >= vmin - delta * n.ln() - 1e-10);
        let sum: f64 = weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        prop_assert!(weights.iter().all(|w| *w >= 0.0 && *w <= 1.0));
    }

    #[test]
    fn mollify_gradient_is_weight_average(vals in pieces_strategy(), delta in 0.01f64..2.0) {
        let (_value, grad, weights) = mollify(&vals, delta);
        let avg: f64 = weights.iter().zip(&vals).map(|(w, v)| w * v.1).sum();
        prop_assert!((grad - avg).abs() < 1e-10);
    }

    #[test]
    fn mollify_shift_equivariance(vals in pieces_strategy(), delta in 0.01f64..2.0, shift in -100.0f64..100.0) {
        let (value, grad, _) = mollify(&vals, delta);
        let shifted: Vec<(f64, f64)> = vals.iter().map(|&(v, d)| (v + shift, d)).collect();
        let (value_s, grad_s, _) = mollify(&shifted, delta);
        prop_assert!((value_s - value - shift).abs() < 1e-9 * (1.0 + shift.abs()));
        prop_assert!((grad_s - grad).abs() < 1e-9);
    }

    #[test]
    fn mollify_sharpens_to_min_as_delta_shrinks(vals in pieces_strategy()) {
        let vmin = vals.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let (coarse, _, _) = mollify(&vals, 1.0);
        let (fine, _, _) = mollify(&vals, 1e-4);
        prop_assert!(fine >= coarse - 1e-10);
        prop_assert!((fine - vmin).abs() < 1e-2);
    }

    #[test]
    fn control_is_odd_for_symmetric_linear_scheme(
        t in 0.0f64..4.9,
        x in -0.95f64..0.95,
        eps in 0.05f64..0.3,
    ) {
        let model = ProcessModel::linear(1.0, 1.0).unwrap();
        let domain = ExitDomain::two_sided(&model, -1.0, 1.0).unwrap();
        let params = SchemeParams::new(1.0, 1.0, eps, 5.0, 1.0, MRule::Fixed(4.0), None).unwrap();
        let set = SubsolutionSet::new(SchemeKind::MollifiedLinear, model, domain, params).unwrap();
        let u_plus = set.control(t, x);
        let u_minus = set.control(t, -x);
        prop_assert!((u_plus + u_minus).abs() < 1e-9, "u({t},{x}) = {u_plus}, u({t},{}) = {u_minus}", -x);
    }

    #[test]
    fn blend_value_between_min_and_soft_min(
        t in 0.0f64..4.9,
        x in -0.95f64..0.95,
    ) {
        let model = ProcessModel::linear(1.0, 1.0).unwrap();
        let domain = ExitDomain::two_sided(&model, -1.0, 1.0).unwrap();
        let params = SchemeParams::new(1.0, 1.0, 0.1, 5.0, 1.0, MRule::Fixed(4.0), None).unwrap();
        let set = SubsolutionSet::new(SchemeKind::MollifiedLinear, model, domain, params).unwrap();
        let (pieces, n) = set.pieces(t, x);
        let vmin = pieces[..n].iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
        let e = set.eval(t, x);
        prop_assert!(e.value <= vmin + 1e-10);
        prop_assert!(e.value >= vmin - set.params().delta * (n as f64).ln() - 1e-10);
    }

    #[test]
    fn scheme_params_reject_bad_inputs(
        eps in -1.0f64..0.0,
    ) {
        prop_assert!(SchemeParams::new(1.0, 1.0, eps, 5.0, 1.0, MRule::Fixed(4.0), None).is_err());
    }
}
