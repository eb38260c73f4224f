mod common;

use foothill::penalty::{eval, grad, hess, ridge_gap, saddle};
use foothill::PenaltyParams;
use proptest::prelude::*;

use common::central_diff;

fn params() -> impl Strategy<Value = PenaltyParams> {
    (0.1f64..10.0, 0.1f64..10.0).prop_map(|(a, b)| PenaltyParams::new(a, b).unwrap())
}

proptest! {
    #[test]
    fn symmetric_and_nonnegative(p in params(), x in -50.0f64..50.0) {
        let v = eval(&p, x).unwrap();
        prop_assert_eq!(v, eval(&p, -x).unwrap());
        prop_assert!(v >= 0.0);
        if x != 0.0 {
            prop_assert!(v > 0.0);
        }
    }

    #[test]
    fn grad_odd_hess_even(p in params(), x in -20.0f64..20.0) {
        prop_assert_eq!(grad(&p, x).unwrap(), -grad(&p, -x).unwrap());
        prop_assert_eq!(hess(&p, x).unwrap(), hess(&p, -x).unwrap());
    }

    #[test]
    fn derivatives_match_finite_differences(p in params(), x in -10.0f64..10.0) {
        let h = 1e-5;
        let fd = central_diff(|t| eval(&p, t).unwrap(), x, h);
        prop_assert!((grad(&p, x).unwrap() - fd).abs() < 1e-6);
        let fd2 = central_diff(|t| grad(&p, t).unwrap(), x, h);
        prop_assert!((hess(&p, x).unwrap() - fd2).abs() < 1e-6);
    }

    #[test]
    fn quasiconvex_sign_pattern(p in params(), x in 1e-6f64..100.0) {
        prop_assert!(grad(&p, x).unwrap() > 0.0);
        prop_assert!(grad(&p, -x).unwrap() < 0.0);
    }

    #[test]
    fn hess_changes_sign_at_saddle(p in params()) {
        let s = saddle(&p);
        prop_assert!(hess(&p, s.x0).unwrap().abs() < 1e-9);
        prop_assert!(hess(&p, 0.9 * s.x0).unwrap() > 0.0);
        prop_assert!(hess(&p, 1.1 * s.x0).unwrap() < 0.0);
        prop_assert!(hess(&p, -0.9 * s.x0).unwrap() > 0.0);
    }

    #[test]
    fn below_square_when_ridge_like(alpha in 0.5f64..200.0, x in -30.0f64..30.0) {
        let p = PenaltyParams::ridge_like(alpha).unwrap();
        prop_assert!(eval(&p, x).unwrap() <= x * x);
    }

    #[test]
    fn linear_asymptote(p in params()) {
        for x in [50.0 / p.beta(), -50.0 / p.beta(), 80.0 / p.beta()] {
            prop_assert!((eval(&p, x).unwrap() - p.alpha() * x.abs()).abs() < 1e-8);
        }
    }
}

#[test]
fn lasso_gap_shrinks_with_beta() {
    let grid: Vec<f64> = (0..=20_000).map(|i| -10.0 + i as f64 * 1e-3).collect();
    let gaps: Vec<f64> = [1.0, 10.0, 100.0, 1000.0]
        .iter()
        .map(|&b| {
            let p = PenaltyParams::new(1.0, b).unwrap();
            grid.iter()
                .map(|&x| (eval(&p, x).unwrap() - x.abs()).abs())
                .fold(0.0, f64::max)
        })
        .collect();
    assert!(gaps.windows(2).all(|w| w[1] < w[0]), "{gaps:?}");
    assert!(gaps[3] < 2e-3);
    // gap bounded by 2/β
    for (g, b) in gaps.iter().zip([1.0, 10.0, 100.0, 1000.0]) {
        assert!(*g <= 2.0 / b);
    }
}

#[test]
fn ridge_gap_scales_like_c_to_the_ninth() {
    let p = PenaltyParams::ridge_like(16.0).unwrap();
    // mpmath: gap(2) = 9.547202047772148e-5, gap(2)/gap(1) = 508.1017
    let g2 = ridge_gap(&p, 2.0).unwrap();
    let g1 = ridge_gap(&p, 1.0).unwrap();
    assert!((g2 - 9.547_202_047_772_148e-5).abs() < 1e-11);
    assert!((g2 / g1 - 508.101_732_7).abs() < 1e-3);
    assert!((g2 / g1 / 512.0 - 1.0).abs() < 1e-2);
}
