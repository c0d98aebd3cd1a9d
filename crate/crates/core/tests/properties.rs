use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use ncs_core::model::NetworkModel;
use ncs_core::scenario::load_scenario;
use ncs_core::sim::{generate_timing, simulate_matrices, Disturbance, Protocol, SimInput, TimingPolicy};

fn network() -> impl Strategy<Value = NetworkModel> {
    (0.0f64..0.05, 0.0f64..1.0, 0.001f64..0.05).prop_map(|(eta, frac, gap)| {
        let tau = eta + gap + 0.001;
        let mad = eta + frac * (tau - eta) * 0.999;
        NetworkModel::new(eta, mad, tau, 2).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn random_timing_respects_bounds(net in network(), seed in 0u64..1000, horizon in 0.05f64..1.0) {
        let tm = generate_timing(&net, &TimingPolicy::UniformRandom { seed }, horizon).unwrap();
        prop_assert!(tm.validate(&net).is_ok());
        prop_assert_eq!(tm.s[0], 0.0);
        prop_assert!(*tm.t.last().unwrap() >= horizon);
        for k in 0..tm.len() - 1 {
            prop_assert!(tm.t[k + 1] > tm.t[k]);
            prop_assert!(tm.t[k + 1] - tm.t[k] + tm.eta[k] <= net.tau_m * (1.0 + 1e-12));
            prop_assert!(tm.eta[k] >= net.eta_m && tm.eta[k] <= net.mad + 1e-15);
        }
    }

    #[test]
    fn timing_is_reproducible(net in network(), seed in 0u64..1000) {
        let a = generate_timing(&net, &TimingPolicy::UniformRandom { seed }, 0.3).unwrap();
        let b = generate_timing(&net, &TimingPolicy::UniformRandom { seed }, 0.3).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn grid_sweep_respects_bounds(net in network(), levels in 1usize..5, spans in 1usize..5) {
        let tm = generate_timing(&net, &TimingPolicy::GridSweep { eta_levels: levels, span_levels: spans }, 0.5).unwrap();
        prop_assert!(tm.validate(&net).is_ok());
    }

    #[test]
    fn disturbance_is_bounded(q in 1usize..4, delta in 0.0f64..2.0, seed in 0u64..100) {
        let w = Disturbance::random(q, delta, 0.1, 1.0, seed);
        prop_assert!(w.sup_norm() <= delta * (1.0 + 1e-12));
        for j in 0..20 {
            prop_assert!(w.value(j as f64 * 0.05, q).norm() <= delta * (1.0 + 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 40, failure_persistence: None, ..ProptestConfig::default() })]

    /// Without disturbance the loop is linear in x0 and both protocols are
    /// invariant under scaling of the errors.
    #[test]
    fn trajectory_is_homogeneous(seed in 0u64..500, c in 0.01f64..100.0, rr in any::<bool>()) {
        let sc = load_scenario("batch-reactor").unwrap();
        let cl = sc.closed_loop().unwrap();
        let net = NetworkModel::new(0.0, 0.01, 0.03, 2).unwrap();
        let tm = generate_timing(&net, &TimingPolicy::UniformRandom { seed }, 0.5).unwrap();
        let proto = if rr {
            Protocol::round_robin(vec![1, 0], 2).unwrap()
        } else {
            Protocol::tod(cl.node_dims().iter().map(|&d| DMatrix::identity(d, d)).collect(), &cl.node_dims()).unwrap()
        };
        let x0 = DVector::from_fn(cl.n_cl(), |i, _| ((seed + 1) as f64 * (i as f64 + 0.7)).sin());
        let run = |x0: &DVector<f64>| {
            simulate_matrices(SimInput {
                matrices: &cl.nominal,
                c_nodes: &cl.c_nodes,
                protocol: &proto,
                timing: &tm,
                omega: &Disturbance::Zero,
                x0,
                tau_m: net.tau_m,
                horizon: 0.5,
            })
            .unwrap()
        };
        let a = run(&x0);
        let b = run(&(&x0 * c));
        for (sa, sb) in a.segments.iter().zip(&b.segments) {
            prop_assert_eq!(sa.active, sb.active);
            prop_assert!((&sa.x_start * c - &sb.x_start).norm() <= 1e-9 * c * (1.0 + sa.x_start.norm()));
        }
    }
}
