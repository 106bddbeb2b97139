use affectva::losses::{ccc, ccc_loss, mse_loss, rho, total_loss, LossConfig, LossKind};
use proptest::prelude::*;

fn unit_pairs(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| (prop::collection::vec(0.0f64..1.0, n), prop::collection::vec(0.0f64..1.0, n)))
}

proptest! {
    #[test]
    fn ccc_loss_is_bounded_and_symmetric((p, g) in unit_pairs(2..40)) {
        let l = ccc_loss(&p, &g).unwrap();
        prop_assert!((0.0..=2.0).contains(&l));
        prop_assert!((l - ccc_loss(&g, &p).unwrap()).abs() < 1e-12);
        prop_assert!((l - (1.0 - ccc(&p, &g).unwrap())).abs() < 1e-15);
    }

    #[test]
    fn ccc_penalizes_shift(g in prop::collection::vec(0.0f64..1.0, 3..40), shift in 0.05f64..1.0) {
        prop_assume!(ccc_loss(&g, &g).is_ok());
        let shifted: Vec<f64> = g.iter().map(|x| x + shift).collect();
        prop_assert!(ccc_loss(&shifted, &g).unwrap() > 1e-6);
    }

    #[test]
    fn mse_is_symmetric_and_nonnegative((p, g) in unit_pairs(1..40)) {
        let m = mse_loss(&p, &g).unwrap();
        prop_assert!(m >= 0.0);
        prop_assert_eq!(m, mse_loss(&g, &p).unwrap());
    }

    #[test]
    fn robust_rho_is_even_and_monotone(x in 0.0f64..5.0, dx in 0.001f64..1.0, alpha in -4.0f64..4.0, c in 0.05f64..2.0) {
        prop_assert_eq!(rho(x, alpha, c), rho(-x, alpha, c));
        prop_assert!(rho(x + dx, alpha, c) >= rho(x, alpha, c));
        prop_assert!(rho(x, alpha, c) >= 0.0);
    }

    #[test]
    fn total_loss_is_symmetric_in_pred_and_gold((p, g) in unit_pairs(2..20), kind_idx in 0usize..5) {
        let cfg = LossConfig::new(LossKind::ALL[kind_idx]);
        let a = total_loss(&p, &g, &g, &p, &cfg).unwrap();
        let b = total_loss(&g, &p, &p, &g, &cfg).unwrap();
        prop_assert!((a.total - a.valence_component - a.arousal_component).abs() < 1e-12);
        prop_assert!((a.total - b.total).abs() < 1e-12);
    }
}
