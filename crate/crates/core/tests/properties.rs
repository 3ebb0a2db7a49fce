use cfattn_core::corpus::tokenize;
use cfattn_core::intervention::{self, AttentionVector, InterventionMethod, KeepMaxMode};
use cfattn_core::tensor::{argmax, softmax};
use proptest::prelude::*;

fn distribution() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..10.0, 1..12).prop_filter_map("positive mass", |raw| {
        let z: f64 = raw.iter().sum();
        (z > 1e-6).then(|| raw.iter().map(|x| x / z).collect())
    })
}

proptest! {
    #[test]
    fn tokenize_is_idempotent(s in "[ -~]{0,60}") {
        let once = tokenize(&s);
        prop_assert_eq!(tokenize(&once.join(" ")), once);
    }

    #[test]
    fn softmax_ignores_shifts(x in prop::collection::vec(-20.0f64..20.0, 1..10), shift in -50.0f64..50.0) {
        let a = softmax(&x).unwrap();
        let shifted: Vec<f64> = x.iter().map(|v| v + shift).collect();
        let b = softmax(&shifted).unwrap();
        prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        for (p, q) in a.iter().zip(&b) {
            prop_assert!((p - q).abs() < 1e-9);
        }
    }

    #[test]
    fn counterfactual_methods_move_the_argmax(alpha in distribution(), seed: u64) {
        let top = argmax(&alpha);
        for method in InterventionMethod::COUNTERFACTUAL {
            match intervention::build(method, &alpha, &alpha, seed, KeepMaxMode::default()) {
                Ok(b) => {
                    prop_assert!(b.counterfactual);
                    prop_assert_ne!(b.vector.argmax(), top);
                    prop_assert!((b.vector.sum() - 1.0).abs() < 1e-9);
                }
                Err(intervention::InterventionError::NotCounterfactualizable { .. }) => {}
                Err(e) => prop_assert!(false, "{e}"),
            }
        }
    }

    #[test]
    fn permutation_keeps_the_multiset(alpha in distribution(), seed: u64) {
        let v = AttentionVector::new(alpha.clone()).unwrap();
        if let Ok(p) = intervention::random_permute(&v, seed) {
            let mut a = alpha.clone();
            let mut b = p.weights().to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
            prop_assert_eq!(p.weights().to_vec(), intervention::random_permute(&v, seed).unwrap().weights().to_vec());
        }
    }

    #[test]
    fn keep_max_variants(alpha in distribution()) {
        let v = AttentionVector::new(alpha.clone()).unwrap();
        let m = alpha.len() as f64;
        let top = v.argmax();
        let amax = alpha[top];
        let lit = intervention::keep_max_uniform_others(&v, KeepMaxMode::Literal);
        prop_assert!((lit.sum() - (amax + (m - 1.0) * (1.0 - amax) / m)).abs() < 1e-9);
        prop_assert_eq!(lit.weights()[top], amax);
        if alpha.len() > 1 {
            let norm = intervention::keep_max_uniform_others(&v, KeepMaxMode::Normalized);
            prop_assert!((norm.sum() - 1.0).abs() < 1e-9);
        }
    }
}
