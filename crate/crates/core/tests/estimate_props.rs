mod common;

use common::arb_tensor;
use facetkit_core::ensemble::{build_ensemble, ensemble_means, EnsembleSpec, Rounding};
use facetkit_core::estimate::Extreme;
use facetkit_core::fit::{classify_pair, fit_statistics, FitCuts, FitFlag};
use facetkit_core::model::moments;
use facetkit_core::simulate::{linspace, simulate, SimSpec, TauSpec};
use facetkit_core::{estimate, EstimationConfig, Facet, FacetEstimates, RatingsTensor};
use proptest::prelude::*;

fn small_design() -> impl Strategy<Value = RatingsTensor> {
    (8usize..30, 2usize..5, 2usize..5, any::<u64>()).prop_map(|(np, ni, nr, seed)| {
        let mut spec = SimSpec::essay_panel(seed);
        spec.n_persons = np;
        spec.n_items = ni;
        spec.n_raters = nr;
        spec.delta = linspace(-0.5, 0.5, ni);
        spec.tau = TauSpec::Values(linspace(-0.8, 0.8, nr));
        simulate(&spec).unwrap().0
    })
}

fn tight() -> EstimationConfig {
    EstimationConfig {
        convergence_tol: 1e-8,
        residual_tol: 1e-6,
        max_iterations: 500,
        ..EstimationConfig::default()
    }
}

fn nonextreme_sum(est: &FacetEstimates, facet: Facet) -> f64 {
    est.params
        .of(facet)
        .iter()
        .zip(est.extreme_flags.of(facet))
        .filter(|(_, f)| **f == Extreme::None)
        .map(|(v, _)| v)
        .sum()
}

fn raw_totals(t: &RatingsTensor) -> Vec<i64> {
    let mut out = vec![0; t.dims().0];
    for o in t.observations() {
        out[o.person] += o.category as i64;
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn estimates_are_centered(t in small_design()) {
        let est = estimate(&t, &EstimationConfig::default()).unwrap();
        prop_assert!(nonextreme_sum(&est, Facet::Rater).abs() < 1e-6);
        prop_assert!(nonextreme_sum(&est, Facet::Item).abs() < 1e-6);
        prop_assert!(est.params.beta.iter().sum::<f64>().abs() < 1e-6);
    }

    #[test]
    fn likelihood_trace_never_drops(t in small_design()) {
        let est = estimate(&t, &EstimationConfig::default()).unwrap();
        for w in est.log_likelihood_trace.windows(2) {
            prop_assert!(w[1] >= w[0] - 1e-9 * (1.0 + w[0].abs()), "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn estimation_is_deterministic(t in small_design()) {
        let cfg = EstimationConfig::default();
        let a = estimate(&t, &cfg).unwrap().to_json().unwrap();
        let b = estimate(&t, &cfg).unwrap().to_json().unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn person_measures_follow_raw_scores(t in small_design()) {
        let est = estimate(&t, &tight()).unwrap();
        prop_assume!(est.converged);
        let raw = raw_totals(&t);
        let theta = &est.params.theta;
        for a in 0..raw.len() {
            for b in 0..raw.len() {
                if raw[a] < raw[b] {
                    prop_assert!(theta[a] < theta[b], "raw {} {} θ {} {}", raw[a], raw[b], theta[a], theta[b]);
                } else if raw[a] == raw[b] {
                    prop_assert!((theta[a] - theta[b]).abs() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn estimates_json_round_trip(t in small_design()) {
        let est = estimate(&t, &EstimationConfig::default()).unwrap();
        let back = FacetEstimates::from_json(&est.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, est);
    }

    #[test]
    fn fit_matches_residual_oracle(t in small_design()) {
        let est = estimate(&t, &EstimationConfig::default()).unwrap();
        let p = &est.params;
        for facet in [Facet::Person, Facet::Item, Facet::Rater] {
            let report = fit_statistics(&t, &est, facet).unwrap();
            for e in &report.elements {
                let z2: Vec<f64> = t
                    .observations()
                    .filter(|o| match facet {
                        Facet::Person => o.person == e.index,
                        Facet::Item => o.item == e.index,
                        Facet::Rater => o.rater == e.index,
                    })
                    .map(|o| {
                        let m = moments(p.eta(o.person, o.item, o.rater), &p.beta);
                        (o.category as f64 - m.expected).powi(2) / m.variance.max(1e-12)
                    })
                    .collect();
                prop_assert_eq!(z2.len(), e.n_obs);
                let outfit = z2.iter().sum::<f64>() / z2.len() as f64;
                prop_assert!((outfit - e.outfit_ms).abs() < 1e-9 * (1.0 + outfit));
                let lo = z2.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = z2.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let slack = 1e-9 * (1.0 + hi);
                prop_assert!(e.infit_ms >= lo - slack && e.infit_ms <= hi + slack);
            }
        }
    }

    #[test]
    fn wider_cuts_flag_less(infit in 0.0f64..3.0, outfit in 0.0f64..3.0,
                            lo in 0.3f64..0.95, hi in 1.05f64..2.0,
                            widen_lo in 0.0f64..0.25, widen_hi in 0.0f64..1.0) {
        let narrow = FitCuts::new(lo, hi).unwrap();
        let wide = FitCuts::new(lo - widen_lo, hi + widen_hi).unwrap();
        if classify_pair(infit, outfit, narrow) == FitFlag::None {
            prop_assert_eq!(classify_pair(infit, outfit, wide), FitFlag::None);
        }
        if classify_pair(infit, outfit, wide) == FitFlag::Misfit {
            prop_assert_eq!(classify_pair(infit, outfit, narrow), FitFlag::Misfit);
        }
        if classify_pair(infit, outfit, wide) == FitFlag::CentralTendency {
            prop_assert_eq!(classify_pair(infit, outfit, narrow), FitFlag::CentralTendency);
        }
    }
}

proptest! {
    #[test]
    fn ensemble_mean_lies_between_members(t in arb_tensor(), keep in any::<u64>()) {
        let (np, ni, nr) = t.dims();
        let mut members: Vec<usize> = (0..nr).filter(|r| keep >> r & 1 == 1).collect();
        if members.is_empty() {
            members.push(0);
        }
        let means = ensemble_means(&t, &members);
        for p in 0..np {
            for i in 0..ni {
                let present: Vec<i32> = members.iter().filter_map(|&r| t.score(p, i, r)).collect();
                match means[p * ni + i] {
                    None => prop_assert!(present.is_empty()),
                    Some(m) => {
                        let lo = *present.iter().min().unwrap() as f64;
                        let hi = *present.iter().max().unwrap() as f64;
                        prop_assert!(m >= lo && m <= hi);
                    }
                }
            }
        }
        let mut reversed = members.clone();
        reversed.reverse();
        prop_assert_eq!(ensemble_means(&t, &reversed), means);
    }

    #[test]
    fn singleton_ensemble_copies_the_rater(t in arb_tensor(), pick in any::<usize>()) {
        let (np, ni, nr) = t.dims();
        let r = pick % nr;
        let name = t.ids().raters()[r].clone();
        for rounding in [Rounding::HalfAwayFromZero, Rounding::HalfToEven] {
            let spec = EnsembleSpec { rounding, ..EnsembleSpec::new("ENS", vec![name.clone()]) };
            let out = build_ensemble(&t, &spec).unwrap();
            let e = out.ids().position(Facet::Rater, "ENS").unwrap();
            prop_assert_eq!(e, nr);
            for p in 0..np {
                for i in 0..ni {
                    prop_assert_eq!(out.score(p, i, e), t.score(p, i, r));
                    prop_assert_eq!(out.score(p, i, r), t.score(p, i, r));
                }
            }
        }
    }
}

#[test]
fn rounding_modes() {
    assert_eq!(Rounding::HalfAwayFromZero.apply(2.5), 3.0);
    assert_eq!(Rounding::HalfAwayFromZero.apply(-2.5), -3.0);
    assert_eq!(Rounding::HalfToEven.apply(2.5), 2.0);
    assert_eq!(Rounding::HalfToEven.apply(3.5), 4.0);
    assert_eq!(Rounding::None.apply(2.5), 2.5);
}
