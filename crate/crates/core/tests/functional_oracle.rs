//! The functional evaluated with brute-force midpoint sums over the
//! simulated state, against the piecewise Gauss evaluation.

use nalgebra::{DMatrix, DVector};

use ncs_core::lmi::Theorem;
use ncs_core::lyapunov::{eval_functional, FunctionalSpec, Variant};
use ncs_core::model::NetworkModel;
use ncs_core::scenario::load_scenario;
use ncs_core::sdp::SolverOptions;
use ncs_core::search::probe;
use ncs_core::sim::{generate_timing, simulate_matrices, Disturbance, Protocol, SimInput, TimingPolicy, Trajectory};

fn qf(m: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (m * v).dot(v)
}

fn midpoint(a: f64, b: f64, n: usize, mut f: impl FnMut(f64) -> f64) -> f64 {
    let h = (b - a) / n as f64;
    (0..n).map(|i| f(a + (i as f64 + 0.5) * h)).sum::<f64>() * h
}

/// `[xPx, S0, S1, R0, R1, V_G, error term]` at `t` for the TOD functional.
fn riemann(spec: &FunctionalSpec, tr: &Trajectory, t: f64, n: usize) -> [f64; 7] {
    let (a, eta, tau) = (spec.alpha, spec.eta_m, spec.tau_m);
    let h = tau - eta;
    let k = tr.segment_index(t).unwrap();
    let seg = &tr.segments[k];
    let st = |s: f64| tr.evaluate_state(s).unwrap();
    let wt = |s: f64| (2.0 * a * (s - t)).exp();
    let cg: DMatrix<f64> = tr
        .c_nodes
        .iter()
        .zip(&spec.w.g)
        .map(|(c, g)| c.transpose() * g * c)
        .fold(DMatrix::zeros(tr.n(), tr.n()), |acc, m| acc + m);
    let x = st(t).0;
    [
        qf(&spec.w.p, &x),
        midpoint(t - eta, t, n, |s| wt(s) * qf(&spec.w.s0, &st(s).0)),
        midpoint(t - tau, t - eta, n, |s| wt(s) * qf(&spec.w.s1, &st(s).0)),
        eta * midpoint(t - eta, t, n, |s| wt(s) * (s - t + eta) * qf(&spec.w.r0, &st(s).1)),
        h * midpoint(t - tau, t, n, |s| wt(s) * h.min(s - t + tau) * qf(&spec.w.r1, &st(s).1)),
        h * midpoint(seg.s, t, n, |s| wt(s) * qf(&cg, &st(s).1)),
        seg.e.iter().zip(&spec.w.q).map(|(e, q)| qf(q, e)).sum(),
    ]
}

#[test]
fn gauss_evaluation_matches_midpoint_sums() {
    let sc = load_scenario("batch-reactor").unwrap();
    let cl = sc.closed_loop().unwrap();
    let (eta, tau, alpha) = (0.01, 0.02, 0.05);
    let (p, w) = probe(&cl, Theorem::Tod, eta, tau, alpha, false, &SolverOptions::default()).unwrap();
    assert!(w.is_feasible());
    let spec = FunctionalSpec::from_witness(Variant::TodN, &p, &w.x).unwrap();
    let proto = Protocol::tod(spec.w.q.clone(), &cl.node_dims()).unwrap();
    let net = NetworkModel::new(eta, 0.015, tau, 2).unwrap();
    let tm = generate_timing(&net, &TimingPolicy::UniformRandom { seed: 9 }, 0.2).unwrap();
    let x0 = DVector::from_fn(cl.n_cl(), |i, _| (1.0 + i as f64).cos());
    let tr = simulate_matrices(SimInput {
        matrices: &cl.nominal,
        c_nodes: &cl.c_nodes,
        protocol: &proto,
        timing: &tm,
        omega: &Disturbance::Zero,
        x0: &x0,
        tau_m: tau,
        horizon: 0.2,
    })
    .unwrap();
    for t in [0.0123, 0.0517, 0.0991, 0.1502] {
        let g = eval_functional(&spec, &tr, t).unwrap();
        let gauss = [g.xpx, g.s0, g.s1, g.r0, g.r1, g.vg, g.err];
        let sums = riemann(&spec, &tr, t, 200_000);
        let total: f64 = sums.iter().sum();
        assert!((g.total() - total).abs() <= 1e-7 * total, "t={t}: {} vs {total}", g.total());
        for (i, (a, b)) in gauss.iter().zip(&sums).enumerate() {
            assert!((a - b).abs() <= 1e-7 * total, "t={t} term {i}: {a} vs {b}");
        }
    }
}
