use fednmap::algorithms::{Executor, FedConfig, FedNMap, FederatedAlgorithm, LiveOracle, Zhang};
use fednmap::maps::snapshot;
use fednmap::problems::{make_composite_quadratic, NoiseModel};
use fednmap::vector::{norm, ordered_mean};
use fednmap::{ModelVector, Regularizer};
use proptest::prelude::*;

fn regularizer() -> impl Strategy<Value = Regularizer> {
    prop_oneof![
        Just(Regularizer::zero()),
        (0.0f64..2.0).prop_map(|nu| Regularizer::l1(nu).unwrap()),
        (0.0f64..2.0, 0.0f64..2.0).prop_map(|(a, b)| Regularizer::elastic_net(a, b).unwrap()),
        (-2.0f64..1.0, 0.0f64..2.0).prop_map(|(lo, w)| Regularizer::box_indicator(lo, lo + w).unwrap()),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn prox_is_nonexpansive(reg in regularizer(), gamma in 0.01f64..5.0,
                            a in prop::collection::vec(-10.0f64..10.0, 6),
                            b in prop::collection::vec(-10.0f64..10.0, 6)) {
        let (a, b) = (ModelVector::from(a), ModelVector::from(b));
        let (pa, pb) = (reg.prox(gamma, &a).unwrap(), reg.prox(gamma, &b).unwrap());
        prop_assert!(norm(&(&pa - &pb)) <= norm(&(&a - &b)) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn prox_lands_in_domain(reg in regularizer(), gamma in 0.01f64..5.0,
                          v in prop::collection::vec(-10.0f64..10.0, 4)) {
        let v = ModelVector::from(v);
        let once = reg.prox(gamma, &v).unwrap();
        prop_assert!(reg.value(&once).finite().is_some());
        if let fednmap::RegularizerKind::BoxIndicator { .. } = reg.kind() {
            prop_assert_eq!(reg.prox(gamma, &once).unwrap(), once);
        }
    }

    #[test]
    fn sandwich_on_random_quadratics(seed in 0u64..1000, nu1 in 0.0f64..1.0, nu2 in 0.0f64..0.5,
                                     scale in 0.1f64..5.0, frac in 0.05f64..1.0) {
        let prob = make_composite_quadratic(3, 6, 1.0, seed).unwrap();
        let reg = Regularizer::elastic_net(nu1, nu2).unwrap();
        let gamma = frac / prob.l_bound();
        let z = ModelVector::from_iter((0..6).map(|j| scale * ((seed as f64 + 1.3 * j as f64).sin())));
        let s = snapshot(&prob, &reg, gamma, &z).unwrap();
        prop_assert!(s.sandwich_holds(reg.rho(), 1e-10));
    }

    #[test]
    fn tracking_identity_holds_for_any_shape(n in 1usize..6, q in 1usize..6, seed in 0u64..100,
                                             sigma in 0.0f64..2.0, nu in 0.0f64..0.5) {
        let cfg = FedConfig { n, q, rounds: 5, eta_a: 0.05, eta_s: 1.0, gamma: 0.3 };
        let prob = make_composite_quadratic(n, 5, 1.0, seed).unwrap()
            .with_noise(NoiseModel::AdditiveGaussian { sigma }).unwrap();
        let reg = Regularizer::l1(nu).unwrap();
        let mut alg = FedNMap::new(reg, cfg, ModelVector::from_elem(5, 1.0)).unwrap();
        let src = LiveOracle { problem: &prob, seed };
        for _ in 0..cfg.rounds {
            let r = alg.step(&src, &Executor::sequential(), false).unwrap();
            let lhs = ordered_mean(&r.directions);
            let rhs = ordered_mean(&r.grad_means) + &((&r.z - &r.x) / cfg.gamma);
            prop_assert!(norm(&(&lhs - &rhs)) <= 1e-12 * (1.0 + norm(&lhs)));
            prop_assert!(norm(&ordered_mean(&r.corrections)) <= 1e-12 * (1.0 + norm(&lhs)));
        }
    }

    #[test]
    fn zhang_corrections_stay_centred(n in 2usize..6, q in 1usize..5, seed in 0u64..100) {
        let cfg = FedConfig { n, q, rounds: 4, eta_a: 0.05, eta_s: 1.0, gamma: 0.05 * q as f64 };
        let prob = make_composite_quadratic(n, 4, 1.5, seed).unwrap()
            .with_noise(NoiseModel::AdditiveGaussian { sigma: 0.5 }).unwrap();
        let mut alg = Zhang::new(Regularizer::l1(0.1).unwrap(), cfg, ModelVector::zeros(4)).unwrap();
        let src = LiveOracle { problem: &prob, seed };
        for _ in 0..cfg.rounds {
            alg.step(&src, &Executor::sequential(), false).unwrap();
            prop_assert!(norm(&ordered_mean(alg.corrections())) <= 1e-12);
        }
    }
}
