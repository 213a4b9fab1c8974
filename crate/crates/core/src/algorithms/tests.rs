use ndarray::array;
use proptest::prelude::*;

use super::fednmap::{ClientState, CorrectionRule, Downlink, FedNMapSnapshot, ServerState};
use super::*;
use crate::maps::reference_solve;
use crate::problems::{make_composite_quadratic, NoiseModel};
use crate::vector::{norm, ordered_mean};

fn quad(n: usize, p: usize, hetero: f64, sigma: f64, seed: u64) -> Problem {
    make_composite_quadratic(n, p, hetero, seed)
        .unwrap()
        .with_noise(NoiseModel::AdditiveGaussian { sigma })
        .unwrap()
}

fn cfg(n: usize, q: usize, eta_a: f64, eta_s: f64, gamma: f64) -> FedConfig {
    FedConfig {
        n,
        q,
        rounds: 0,
        eta_a,
        eta_s,
        gamma,
    }
}

fn start(p: usize) -> ModelVector {
    ModelVector::from_iter((0..p).map(|j| 1.5 - 0.7 * j as f64))
}

fn run(alg: &mut dyn FederatedAlgorithm, src: &dyn GradientSource, rounds: usize) -> Vec<RoundReport> {
    let exec = Executor::sequential();
    (0..rounds).map(|_| alg.step(src, &exec, true).unwrap()).collect()
}

fn max_abs_diff(a: &ModelVector, b: &ModelVector) -> f64 {
    a.iter().zip(b).fold(0.0, |m, (x, y)| m.max((x - y).abs()))
}

fn shift(reg_x: &ModelVector, z: &ModelVector, gamma: f64) -> ModelVector {
    (z - reg_x) / gamma
}

#[test]
fn correction_examples() {
    let any = array![3.0, -1.0];
    assert_eq!(correction_update(&any, &any, &any, 0).unwrap(), array![0.0, 0.0]);

    let ys = [array![1.0], array![2.0], array![3.0]];
    let y_bar = ordered_mean(&ys);
    let cs: Vec<_> = ys
        .iter()
        .map(|y| correction_update(&array![0.0], y, &y_bar, 1).unwrap())
        .collect();
    assert_eq!(cs, vec![array![1.0], array![0.0], array![-1.0]]);
    assert_eq!(ordered_mean(&cs)[0], 0.0);

    let c = array![0.25, -4.0];
    let y = array![1.5, 2.0];
    let once = correction_update(&c, &y, &y, 3).unwrap();
    let twice = correction_update(&once, &y, &y, 4).unwrap();
    assert_eq!(once, c);
    assert_eq!(twice, c);

    assert!(matches!(
        correction_update(&c, &array![1.0], &y, 1),
        Err(Error::DimensionMismatch { .. })
    ));
}

#[test]
fn server_step_examples() {
    let reg = Regularizer::zero();
    let c = cfg(2, 2, 0.1, 1.0, 0.5);
    let state = ServerState::new(&reg, c.gamma, array![0.0, 0.0]).unwrap();
    let ups = [
        UplinkMessage { y: array![1.0, 1.0] },
        UplinkMessage { y: array![3.0, 3.0] },
    ];
    let next = fednmap_server_step(&reg, &c, &state, &ups).unwrap();
    assert!(max_abs_diff(&next.z, &array![-0.4, -0.4]) < 1e-15);
    assert_eq!(next.round, 1);
    assert_eq!(next.y_bar_prev, Some(array![2.0, 2.0]));

    let reg = Regularizer::l1(0.3).unwrap();
    let state = ServerState::new(&reg, c.gamma, array![1.0, -2.0]).unwrap();
    let zeros = [
        UplinkMessage { y: array![0.0, 0.0] },
        UplinkMessage { y: array![0.0, 0.0] },
    ];
    let next = fednmap_server_step(&reg, &c, &state, &zeros).unwrap();
    assert_eq!(next.z, state.z);
    assert_eq!(next.x, state.x);
    assert_eq!(next.round, state.round + 1);

    assert!(matches!(
        fednmap_server_step(&reg, &c, &state, &zeros[..1]),
        Err(Error::MissingUplink { expected: 2, got: 1 })
    ));
}

#[test]
fn single_step_zero_reg_returns_exact_gradient() {
    let prob = quad(3, 4, 0.8, 0.0, 7);
    let reg = Regularizer::zero();
    let c = cfg(3, 1, 0.05, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 1,
    };
    let z = start(4);
    for i in 0..3 {
        let down = Downlink {
            round: 0,
            z: &z,
            y_bar_prev: None,
        };
        let out = fednmap_client_round(&reg, &c, i, down, &ClientState::new(4), &src, false).unwrap();
        let g = prob.full_gradient(i, &z).unwrap();
        // z - (z - eta g) is not always eta g in floating point
        assert!(max_abs_diff(&out.uplink.y, &g) <= 1e-14 * (1.0 + norm(&g)));
    }
}

#[test]
fn single_step_is_normal_map_plus_correction() {
    let prob = quad(3, 4, 1.0, 0.0, 11);
    let reg = Regularizer::elastic_net(0.2, 0.1).unwrap();
    let c = cfg(3, 1, 0.05, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 1,
    };
    let mut alg = FedNMap::new(reg, c, start(4)).unwrap();
    let reports = run(&mut alg, &src, 3);
    for r in &reports[1..] {
        let s = shift(&r.x, &r.z, c.gamma);
        for i in 0..3 {
            let expect = prob.full_gradient(i, &r.x).unwrap() + &s + &r.corrections[i];
            assert!(max_abs_diff(&r.directions[i], &expect) <= 1e-14 * (1.0 + norm(&expect)));
        }
    }
}

#[test]
fn uplink_is_average_direction_plus_correction() {
    let prob = quad(4, 5, 1.0, 0.5, 3);
    let reg = Regularizer::l1(0.1).unwrap();
    let c = cfg(4, 5, 0.02, 2.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 9,
    };
    let mut alg = FedNMap::new(reg, c, start(5)).unwrap();
    for r in run(&mut alg, &src, 20) {
        let s = shift(&r.x, &r.z, c.gamma);
        for i in 0..4 {
            let expect = &r.grad_means[i] + &s + &r.corrections[i];
            assert!(max_abs_diff(&r.directions[i], &expect) < 1e-12);
        }
    }
}

#[test]
fn tracking_identity_and_zero_mean_corrections() {
    let prob = quad(5, 6, 1.5, 1.0, 21);
    let reg = Regularizer::box_indicator(-0.5, 0.5).unwrap();
    let c = cfg(5, 4, 0.03, 1.0, 0.15);
    let src = LiveOracle {
        problem: &prob,
        seed: 4,
    };
    let mut alg = FedNMap::new(reg, c, start(6)).unwrap();
    for r in run(&mut alg, &src, 50) {
        let lhs = ordered_mean(&r.directions);
        let rhs = ordered_mean(&r.grad_means) + &shift(&r.x, &r.z, c.gamma);
        assert!(max_abs_diff(&lhs, &rhs) < 1e-12, "round {}", r.round);
        assert!(norm(&ordered_mean(&r.corrections)) < 1e-12);
    }
}

#[test]
fn direction_recursion() {
    let prob = quad(4, 3, 1.0, 0.7, 5);
    let reg = Regularizer::l1(0.05).unwrap();
    let c = cfg(4, 3, 0.04, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 2,
    };
    let mut alg = FedNMap::new(reg, c, start(3)).unwrap();
    let reports = run(&mut alg, &src, 30);
    for w in reports.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        let y_bar = ordered_mean(&a.directions);
        let (sa, sb) = (shift(&a.x, &a.z, c.gamma), shift(&b.x, &b.z, c.gamma));
        for i in 0..4 {
            let lhs = &b.directions[i] - &y_bar;
            let rhs = (&b.grad_means[i] + &sb) - (&a.grad_means[i] + &sa);
            assert!(max_abs_diff(&lhs, &rhs) < 1e-12);
        }
    }
}

#[test]
fn homogeneous_clients_never_drift() {
    let prob = quad(2, 4, 0.0, 0.0, 8);
    let reg = Regularizer::l1(0.1).unwrap();
    let c = cfg(2, 5, 0.05, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 0,
    };
    let mut alg = FedNMap::new(reg, c, start(4)).unwrap();
    for r in run(&mut alg, &src, 40) {
        assert!(r.corrections.iter().all(|ci| ci.iter().all(|&v| v == 0.0)));
        assert_eq!(r.directions[0], r.directions[1]);
    }
    assert!(alg.clients().iter().all(|s| s.c.iter().all(|&v| v == 0.0)));
}

#[test]
fn homogeneous_clients_many() {
    // With n not a power of two the mean of identical vectors can be off by an ulp.
    let prob = quad(5, 4, 0.0, 0.0, 8);
    let reg = Regularizer::elastic_net(0.1, 0.2).unwrap();
    let c = cfg(5, 3, 0.05, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 0,
    };
    let mut alg = FedNMap::new(reg, c, start(4)).unwrap();
    for r in run(&mut alg, &src, 40) {
        for i in 1..5 {
            assert!(max_abs_diff(&r.directions[0], &r.directions[i]) < 1e-14);
            assert!(norm(&r.corrections[i]) < 1e-14);
        }
    }
}

#[test]
fn replay_reproduces_and_unrolls() {
    let prob = quad(3, 4, 1.0, 0.8, 13);
    let reg = Regularizer::l1(0.1).unwrap();
    let c = cfg(3, 4, 0.03, 1.5, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 77,
    };
    let mut alg = FedNMap::new(reg, c, start(4)).unwrap();
    let reports = run(&mut alg, &src, 25);

    let mut table = DrawTable::new();
    for r in &reports {
        table.absorb(r).unwrap();
    }
    assert_eq!(table.len(), 25 * 3 * 4);
    let mut again = FedNMap::new(reg, c, start(4)).unwrap();
    let replayed = run(&mut again, &table, 25);
    for (a, b) in reports.iter().zip(&replayed) {
        assert_eq!(a.z, b.z);
        assert_eq!(a.directions, b.directions);
    }
    assert_eq!(alg.z(), again.z());

    // z_{t2} = z_{t1} - eta_hat * sum_t [mean_i grad_mean + (z_t - x_t) / gamma]
    let (t1, t2) = (5, 25);
    let mut unrolled = reports[t1].z.clone();
    for r in &reports[t1..t2] {
        let term = ordered_mean(&r.grad_means) + &shift(&r.x, &r.z, c.gamma);
        unrolled.scaled_add(-c.eta_hat(), &term);
    }
    assert!(max_abs_diff(&unrolled, alg.z()) < 1e-12);

    let mut short = DrawTable::new();
    short.absorb(&reports[0]).unwrap();
    let mut third = FedNMap::new(reg, c, start(4)).unwrap();
    let exec = Executor::sequential();
    third.step(&short, &exec, false).unwrap();
    assert!(matches!(
        third.step(&short, &exec, false),
        Err(Error::DrawScheduleMismatch(_))
    ));
}

#[test]
fn single_client_matches_reference_iteration() {
    let prob = quad(1, 5, 1.0, 0.0, 31);
    let reg = Regularizer::l1(0.2).unwrap();
    let gamma = 0.9 / prob.l_bound() * 0.5;
    let c = cfg(1, 1, gamma, 1.0, gamma);
    let src = LiveOracle {
        problem: &prob,
        seed: 0,
    };
    let mut alg = FedNMap::new(reg, c, start(5)).unwrap();
    let iters = 40;
    run(&mut alg, &src, iters);
    let reference = reference_solve(&prob, &reg, gamma, &start(5), 0.0, iters).unwrap();
    assert_eq!(reference.step, c.eta_hat());
    assert!(max_abs_diff(alg.z(), &reference.z) < 1e-12);
}

#[test]
fn zhang_matches_fednmap_without_regularizer() {
    let prob = quad(4, 5, 1.2, 0.6, 17);
    let reg = Regularizer::zero();
    let c = cfg(4, 3, 0.04, 1.5, 0.3);
    let src = LiveOracle {
        problem: &prob,
        seed: 5,
    };
    let mut f = FedNMap::new(reg, c, start(5)).unwrap();
    let mut z = Zhang::new(reg, c, start(5)).unwrap();
    let exec = Executor::sequential();
    for _ in 0..30 {
        f.step(&src, &exec, false).unwrap();
        z.step(&src, &exec, false).unwrap();
        assert!(max_abs_diff(f.z(), z.z()) < 1e-10);
    }
}

#[test]
fn zhang_direction_tracks_gradient_and_server_is_normal_map_step() {
    let prob = quad(4, 5, 1.2, 0.6, 17);
    let reg = Regularizer::l1(0.15).unwrap();
    let c = cfg(4, 3, 0.04, 1.5, 0.3);
    let src = LiveOracle {
        problem: &prob,
        seed: 5,
    };
    let mut alg = Zhang::new(reg, c, start(5)).unwrap();
    let reports = run(&mut alg, &src, 20);
    let eta_hat = c.eta_hat();
    for w in reports.windows(2) {
        let r = &w[0];
        let y_bar = ordered_mean(&r.directions);
        let expect = ordered_mean(&r.grad_means) + &ordered_mean(&r.corrections);
        assert!(max_abs_diff(&y_bar, &expect) < 1e-12);
        assert!(norm(&ordered_mean(&r.corrections)) < 1e-12);
        // z_{t+1} = z_t - eta_hat [y_bar + (z_t - x_t) / eta_hat], x_t = prox_{eta_hat}(z_t)
        assert!(max_abs_diff(&r.x, &reg.prox(eta_hat, &r.z).unwrap()) == 0.0);
        let nm = &y_bar + &shift(&r.x, &r.z, eta_hat);
        let z_next = &r.z - &(nm * eta_hat);
        assert!(max_abs_diff(&z_next, &w[1].z) < 1e-12);
    }
    assert_eq!(alg.map_gamma(), eta_hat);
}

#[test]
fn scaffold_single_client_single_step_is_sgd() {
    let prob = quad(1, 3, 0.0, 0.4, 2);
    let c = cfg(1, 1, 0.1, 0.7, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 3,
    };
    let mut alg = Scaffold::new(Regularizer::zero(), c, start(3)).unwrap();
    let exec = Executor::sequential();
    let mut x = start(3);
    for t in 0..20 {
        let g = src.draw(Lane::new(0, t, 0), &x).unwrap();
        x.scaled_add(-c.eta_a * c.eta_s, &g);
        alg.step(&src, &exec, false).unwrap();
        assert!(max_abs_diff(&x, alg.x()) < 1e-14);
    }
}

#[test]
fn scaffold_server_control_is_client_mean() {
    let prob = quad(5, 4, 1.0, 0.5, 6);
    let c = cfg(5, 3, 0.05, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 8,
    };
    let mut alg = Scaffold::new(Regularizer::zero(), c, start(4)).unwrap();
    let exec = Executor::sequential();
    for _ in 0..50 {
        alg.step(&src, &exec, false).unwrap();
        let mean = ordered_mean(alg.client_controls());
        assert!(max_abs_diff(alg.server_control(), &mean) < 1e-12);
    }
}

#[test]
fn scaffold_matches_fednmap_without_regularizer() {
    let prob = quad(4, 6, 1.5, 0.9, 12);
    let reg = Regularizer::zero();
    let c = cfg(4, 5, 0.03, 1.2, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 10,
    };
    let mut f = FedNMap::new(reg, c, start(6)).unwrap();
    let mut s = Scaffold::new(reg, c, start(6)).unwrap();
    let exec = Executor::sequential();
    for _ in 0..50 {
        f.step(&src, &exec, false).unwrap();
        s.step(&src, &exec, false).unwrap();
        assert!(max_abs_diff(f.x(), s.x()) < 1e-10);
    }
}

#[test]
fn scaffold_needs_zero_regularizer() {
    let c = cfg(2, 2, 0.1, 1.0, 0.2);
    assert!(Scaffold::new(Regularizer::l1(0.1).unwrap(), c, start(2)).is_err());
}

#[test]
fn uplink_accounting() {
    let p = 7;
    assert_eq!(
        UplinkMessage {
            y: ModelVector::zeros(p)
        }
        .byte_count(),
        p * 8
    );
    let s = ScaffoldUplink {
        delta_x: ModelVector::zeros(p),
        delta_c: ModelVector::zeros(p),
    };
    assert_eq!(s.byte_count(), 2 * p * 8);

    let prob = quad(3, p, 1.0, 0.1, 1);
    let c = cfg(3, 2, 0.05, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 1,
    };
    let exec = Executor::sequential();
    let mut f = FedNMap::new(Regularizer::zero(), c, start(p)).unwrap();
    let mut s = Scaffold::new(Regularizer::zero(), c, start(p)).unwrap();
    let rf = f.step(&src, &exec, false).unwrap();
    let rs = s.step(&src, &exec, false).unwrap();
    assert_eq!(rf.uplink_bytes, 3 * p * 8);
    assert_eq!(rs.uplink_bytes, 3 * 2 * p * 8);
    assert_eq!(f.uplink_bytes_per_round() * 2, s.uplink_bytes_per_round());
}

#[test]
fn parallel_execution_is_bit_identical() {
    let prob = quad(6, 5, 1.0, 1.0, 44);
    let reg = Regularizer::l1(0.1).unwrap();
    let c = cfg(6, 4, 0.03, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 12,
    };
    for kind in [AlgorithmKind::Fednmap, AlgorithmKind::Zhang] {
        let mut a = kind.build(reg, c, start(5)).unwrap();
        let mut b = kind.build(reg, c, start(5)).unwrap();
        let seq = Executor::sequential();
        let par = Executor::with_workers(4).unwrap();
        assert_eq!(par.workers(), 4);
        for _ in 0..15 {
            a.step(&src, &seq, false).unwrap();
            b.step(&src, &par, false).unwrap();
        }
        assert_eq!(a.z(), b.z());
    }
}

#[test]
fn snapshot_round_trip_resumes_identically() {
    let prob = quad(3, 4, 1.0, 0.5, 19);
    let reg = Regularizer::l1(0.1).unwrap();
    let c = cfg(3, 3, 0.04, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 6,
    };
    let mut alg = FedNMap::new(reg, c, start(4)).unwrap();
    run(&mut alg, &src, 7);
    let text = toml::to_string(&alg.snapshot()).unwrap();
    let snap: FedNMapSnapshot = toml::from_str(&text).unwrap();
    let mut resumed = FedNMap::restore(reg, c, snap).unwrap();
    run(&mut alg, &src, 5);
    run(&mut resumed, &src, 5);
    assert_eq!(alg.z(), resumed.z());
    assert_eq!(resumed.round(), 12);
}

#[test]
fn flipped_correction_breaks_tracking() {
    let prob = quad(4, 4, 1.0, 0.3, 23);
    let reg = Regularizer::l1(0.1).unwrap();
    let c = cfg(4, 3, 0.04, 1.0, 0.2);
    let src = LiveOracle {
        problem: &prob,
        seed: 1,
    };
    let mut alg = FedNMap::new(reg, c, start(4))
        .unwrap()
        .with_correction_rule(CorrectionRule::FlippedBroadcast);
    let reports = run(&mut alg, &src, 5);
    let worst = reports
        .iter()
        .map(|r| {
            let lhs = ordered_mean(&r.directions);
            let rhs = ordered_mean(&r.grad_means) + &shift(&r.x, &r.z, c.gamma);
            max_abs_diff(&lhs, &rhs)
        })
        .fold(0.0, f64::max);
    assert!(worst > 1e-3);
}

#[test]
fn config_validation() {
    let reg = Regularizer::zero();
    assert!(cfg(0, 1, 0.1, 1.0, 0.1).validate(&reg).is_err());
    assert!(cfg(1, 0, 0.1, 1.0, 0.1).validate(&reg).is_err());
    assert!(cfg(1, 1, -0.1, 1.0, 0.1).validate(&reg).is_err());
    assert!(cfg(1, 1, 0.1, 0.0, 0.1).validate(&reg).is_err());
    assert!(cfg(1, 1, 0.1, 1.0, 0.0).validate(&reg).is_err());
    let c = cfg(2, 5, 0.1, 3.0, 0.1);
    assert_eq!(c.eta_hat(), 0.1 * 3.0 * 5.0);
    assert_eq!("zhang".parse::<AlgorithmKind>().unwrap(), AlgorithmKind::Zhang);
    assert!("fedavg".parse::<AlgorithmKind>().is_err());
}

proptest! {
    #[test]
    fn corrections_stay_centred(ys in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 3), 2..8),
                                 cs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 8)) {
        let n = ys.len();
        let ys: Vec<ModelVector> = ys.into_iter().map(ModelVector::from).collect();
        let mut cs: Vec<ModelVector> = cs.into_iter().take(n).map(ModelVector::from).collect();
        // start from a centred set
        let m = ordered_mean(&cs);
        for c in cs.iter_mut() { *c -= &m; }
        let y_bar = ordered_mean(&ys);
        let next: Vec<_> = (0..n).map(|i| correction_update(&cs[i], &ys[i], &y_bar, 1).unwrap()).collect();
        prop_assert!(norm(&ordered_mean(&next)) < 1e-12);
    }

    #[test]
    fn server_step_formula(z in prop::collection::vec(-5.0f64..5.0, 3),
                           ys in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 1..6),
                           eta_a in 0.001f64..0.5, eta_s in 0.1f64..3.0, q in 1usize..6) {
        let reg = Regularizer::l1(0.2).unwrap();
        let c = cfg(ys.len(), q, eta_a, eta_s, 0.3);
        let state = ServerState::new(&reg, c.gamma, ModelVector::from(z)).unwrap();
        let ups: Vec<_> = ys.iter().map(|y| UplinkMessage { y: ModelVector::from(y.clone()) }).collect();
        let next = fednmap_server_step(&reg, &c, &state, &ups).unwrap();
        for j in 0..3 {
            let s: f64 = ys.iter().map(|y| y[j]).sum();
            let expect = state.z[j] - q as f64 * eta_s * eta_a / ys.len() as f64 * s;
            prop_assert!((next.z[j] - expect).abs() < 1e-12);
        }
        prop_assert_eq!(next.x.clone(), reg.prox(c.gamma, &next.z).unwrap());
    }
}
