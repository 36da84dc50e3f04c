use proptest::prelude::*;

use giftrl::iwa::{iwa_scaling_closed_form, IwaContext};
use giftrl::losses::{LossFamily, ScalarLoss};
use giftrl::sparse::SparseVec;
use giftrl::surrogate::{choose_surrogate_vec, Strategy as Update};

fn family() -> impl Strategy<Value = LossFamily> {
    prop::sample::select(LossFamily::ALL.to_vec())
}

fn label(fam: LossFamily) -> BoxedStrategy<f64> {
    match fam {
        LossFamily::Squared => (-5.0f64..5.0).boxed(),
        LossFamily::Logistic | LossFamily::Exponential => prop::sample::select(vec![-1.0, 1.0]).boxed(),
        LossFamily::Logarithmic => prop::sample::select(vec![0.0, 1.0]).boxed(),
    }
}

fn prediction(fam: LossFamily) -> std::ops::Range<f64> {
    match fam {
        LossFamily::Logarithmic => 0.05..0.95,
        LossFamily::Exponential => -3.0..3.0,
        _ => -5.0..5.0,
    }
}

/// Weight `h` on one flow against `h` unit-weight flows, each restarted at
/// the prediction the previous one reached.
fn split_flow(fam: LossFamily, y: f64, h: u32, p: f64, qnorm2: f64, eta: f64) -> Option<(f64, f64)> {
    let whole = IwaContext::new(ScalarLoss::new(fam, y, f64::from(h)).ok()?, p, qnorm2, eta).ok()?;
    let whole = iwa_scaling_closed_form(&whole).ok()?;
    let unit = ScalarLoss::new(fam, y, 1.0).ok()?;
    let mut total = 0.0;
    let mut pk = p;
    for _ in 0..h {
        let ctx = IwaContext::new(unit, pk, qnorm2, eta).ok()?;
        let s = iwa_scaling_closed_form(&ctx).ok()?;
        total += s;
        pk = ctx.prediction_at(s);
    }
    Some((whole, total))
}

#[test]
fn integer_weight_equals_repeated_unit_flows_examples() {
    for (fam, y, p) in [
        (LossFamily::Squared, 0.5, 2.0),
        (LossFamily::Logistic, 1.0, -1.0),
        (LossFamily::Exponential, -1.0, 0.3),
        (LossFamily::Logarithmic, 1.0, 0.3),
        (LossFamily::Logarithmic, 0.0, 0.6),
    ] {
        for h in [2, 3, 7] {
            let (whole, split) = split_flow(fam, y, h, p, 0.8, 0.05).unwrap();
            assert!((whole - split).abs() <= 1e-6 * whole.abs().max(1.0), "{fam} h={h}: {whole} vs {split}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn integer_weight_equals_repeated_unit_flows(
        (fam, y) in family().prop_flat_map(|f| (Just(f), label(f))),
        h in 1u32..6,
        t in 0.0f64..1.0,
        qnorm2 in 0.01f64..5.0,
        eta in 0.001f64..2.0,
    ) {
        let range = prediction(fam);
        let p = range.start + t * (range.end - range.start);
        // The logarithmic flow must stay inside (0, 1) for the whole weight.
        if let Some((whole, split)) = split_flow(fam, y, h, p, qnorm2, eta) {
            prop_assert!((whole - split).abs() <= 1e-6 * whole.abs().max(1.0), "{} vs {}", whole, split);
        }
    }

    #[test]
    fn aprox_and_proximal_never_increase_h(
        (fam, y) in family().prop_flat_map(|f| (Just(f), label(f))),
        weight in 0.1f64..10.0,
        t in 0.0f64..1.0,
        q in prop::collection::vec(-2.0f64..2.0, 4),
        theta in prop::collection::vec(-5.0f64..5.0, 4),
        lambda in 0.1f64..10.0,
    ) {
        let loss = ScalarLoss::new(fam, y, weight).unwrap();
        let qv = SparseVec::from_dense(&q);
        let qq = qv.norm2();
        prop_assume!(qq > 1e-6);
        // Move θ along q so the prediction lands at a point in the loss domain.
        let range = prediction(fam);
        let p = range.start + t * (range.end - range.start);
        let shift = (lambda * p - qv.dot_dense(&theta)) / qq;
        let theta: Vec<f64> = theta.iter().zip(&q).map(|(a, b)| a + shift * b).collect();
        let x: Vec<f64> = theta.iter().map(|v| v / lambda).collect();
        for strategy in [Update::AProx, Update::Proximal] {
            let d = choose_surrogate_vec(strategy, &loss, &x, &theta, &qv, lambda).unwrap();
            prop_assert!(d.delta >= -1e-9, "{} {}: delta {}", strategy, fam, d.delta);
            prop_assert!(d.h_at_z <= d.h_at_g + 1e-9 * d.h_at_g.abs().max(1.0));
        }
    }
}
