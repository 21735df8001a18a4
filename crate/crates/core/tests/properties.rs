mod common;

use chrono::{Months, NaiveDate};
use mixrisk::benchmarks::{isotonic_repair, PredictiveLaw};
use mixrisk::dist::{norm_cdf, norm_pdf};
use mixrisk::eval::{ad_test, crps_mixture, dh_test, evaluate, ks_test, ljung_box, ForecastRecord};
use mixrisk::model::{stick_weights, ForecastDensity};
use mixrisk::quadrature::GaussLegendre;
use mixrisk::risk::{balance_of_risk, deflation_risk, deflation_risk_with, excess_inflation_risk, RiskSpec};
use proptest::prelude::*;

fn mixture() -> impl Strategy<Value = ForecastDensity> {
    prop::collection::vec((0.05f64..1.0, -6.0f64..8.0, 0.1f64..3.0), 1..5).prop_map(|parts| {
        let total: f64 = parts.iter().map(|p| p.0).sum();
        ForecastDensity {
            weights: parts.iter().map(|p| p.0 / total).collect(),
            means: parts.iter().map(|p| p.1).collect(),
            precisions: parts.iter().map(|p| 1.0 / (p.2 * p.2)).collect(),
        }
    })
}

fn spec() -> impl Strategy<Value = RiskSpec> {
    (0.0f64..3.0, 0.0f64..3.0, -2.0f64..4.0, 0.0f64..2.0, 0.0f64..=1.0).prop_map(|(alpha, beta, lo, width, w)| RiskSpec {
        alpha,
        beta,
        pi_lower: lo,
        pi_upper: lo + width,
        w,
    })
}

/// `E[(a - X)_+^p]` of a normal for integer `p` in closed form.
fn normal_lower_moment(a: f64, p: u32, mean: f64, sd: f64) -> f64 {
    let d = a - mean;
    let z = d / sd;
    match p {
        0 => norm_cdf(z),
        1 => d * norm_cdf(z) + sd * norm_pdf(z),
        2 => (d * d + sd * sd) * norm_cdf(z) + d * sd * norm_pdf(z),
        _ => unreachable!(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn deflation_is_nonpositive_and_excess_nonnegative(d in mixture(), s in spec()) {
        let r = balance_of_risk(&d, &s);
        prop_assert!(r.dr <= 0.0 && r.eir >= 0.0);
        prop_assert!((r.br - (s.w * r.dr + (1.0 - s.w) * r.eir)).abs() < 1e-12);
    }

    #[test]
    fn probability_balance_lies_between_weights(d in mixture(), s in spec()) {
        let s = RiskSpec { alpha: 0.0, beta: 0.0, ..s };
        let r = balance_of_risk(&d, &s);
        prop_assert!(r.br >= -s.w - 1e-15 && r.br <= 1.0 - s.w + 1e-15);
    }

    #[test]
    fn integer_exponents_match_closed_form(d in mixture(), a in -2.0f64..5.0, p in 0u32..=2) {
        let s = RiskSpec { alpha: p as f64, beta: p as f64, pi_lower: a, pi_upper: a, w: 0.5 };
        let want: f64 = (0..d.len()).map(|c| d.weights[c] * normal_lower_moment(a, p, d.means[c], d.sd(c))).sum();
        let got = -deflation_risk(&d, &s);
        prop_assert!((got - want).abs() <= 1e-9 * want.max(1.0), "{got} vs {want}");
    }

    #[test]
    fn quadrature_converged_at_default_nodes(d in mixture(), s in spec()) {
        let fine = GaussLegendre::new(2048);
        let coarse = deflation_risk(&d, &s);
        let reference = deflation_risk_with(&fine, &d, &s);
        prop_assert!((coarse - reference).abs() <= 1e-8 * reference.abs().max(1e-3));
    }

    #[test]
    fn shifting_up_raises_excess_and_lowers_deflation(d in mixture(), s in spec(), shift in 0.0f64..3.0) {
        let mut up = d.clone();
        for m in up.means.iter_mut() {
            *m += shift;
        }
        prop_assert!(excess_inflation_risk(&up, &s) >= excess_inflation_risk(&d, &s) - 1e-12);
        prop_assert!(deflation_risk(&up, &s) >= deflation_risk(&d, &s) - 1e-12);
    }

    #[test]
    fn crps_is_nonnegative(d in mixture(), y in -10.0f64..12.0) {
        prop_assert!(crps_mixture(&d, y) >= 0.0);
    }

    #[test]
    fn quantiles_are_ordered_and_invert_the_cdf(d in mixture()) {
        let levels: Vec<f64> = (1..=19).map(|i| i as f64 / 20.0).collect();
        let q = d.quantiles(&levels);
        prop_assert!(q.windows(2).all(|w| w[1] >= w[0]));
        for (qi, p) in q.iter().zip(&levels) {
            prop_assert!((d.cdf(*qi) - p).abs() < 1e-9);
        }
    }

    #[test]
    fn stick_weights_form_a_distribution(logits in prop::collection::vec(-30.0f64..30.0, 0..8)) {
        let w = stick_weights(&logits);
        prop_assert_eq!(w.len(), logits.len() + 1);
        prop_assert!(w.iter().all(|v| *v >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn p_values_lie_in_unit_interval(pits in prop::collection::vec(0.0f64..1.0, 20..200)) {
        for p in [ks_test(&pits).unwrap(), ad_test(&pits).unwrap(), dh_test(&pits).unwrap()] {
            prop_assert!((0.0..=1.0).contains(&p), "{p}");
        }
        for moment in [1, 2] {
            let p = ljung_box(&pits, moment, 4).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
        }
    }

    #[test]
    fn isotonic_repair_is_monotone_and_mean_preserving(v in prop::collection::vec(-5.0f64..5.0, 1..30)) {
        let (fixed, _) = isotonic_repair(&v);
        prop_assert!(fixed.windows(2).all(|w| w[1] >= w[0] - 1e-12));
        let gap = fixed.iter().sum::<f64>() - v.iter().sum::<f64>();
        prop_assert!(gap.abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(20))]

    #[test]
    fn evaluation_ignores_record_order(seed in 0u64..1000, rot in 1usize..59) {
        use rand::Rng;
        let mut rng = common::rng(seed);
        let start = NaiveDate::from_ymd_opt(2000, 1, 1).unwrap();
        let mut records = Vec::new();
        for model in ["AR", "B"] {
            for h in [1usize, 2] {
                for t in 0..15u32 {
                    let origin = start + Months::new(3 * t);
                    let mean = rng.random_range(-1.0..3.0);
                    let law = PredictiveLaw::Mixture(ForecastDensity::normal(mean, 1.0));
                    let target = origin + Months::new(3 * h as u32);
                    records.push(ForecastRecord::new(model, h, origin, target, law, rng.random_range(-2.0..4.0)).unwrap());
                }
            }
        }
        let a = evaluate(&records, "AR", 4).unwrap();
        records.rotate_left(rot);
        records.reverse();
        prop_assert_eq!(a, evaluate(&records, "AR", 4).unwrap());
    }
}
