//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::HashMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ncs_core::lmi::{LmiProblem, Theorem};
use ncs_core::lyapunov::{verify_trajectory, FunctionalSpec, Variant, VerifyOptions};
use ncs_core::model::{ClosedLoopModel, LoopMatrices, NetworkModel};
use ncs_core::scenario::load_scenario;
use ncs_core::sdp::{verify_witness, CertificateWitness, SolverOptions};
use ncs_core::sdpa::{export_sdpa, import_sdpa};
use ncs_core::search::{max_alpha, probe, table_run, TableReport};
use ncs_core::sim::{
    generate_timing, rr_select, simulate_matrices, tod_select, Disturbance, Protocol, SimInput, TimingPolicy,
    TimingRealization, Trajectory,
};

const CELL_TOL: f64 = 0.002;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

/// Feasible results collected across criteria for the solver-health checks.
#[derive(Default)]
struct Certificates {
    items: Vec<(String, LmiProblem, CertificateWitness)>,
}

impl Certificates {
    fn push(&mut self, tag: String, p: &LmiProblem, w: &CertificateWitness) {
        if w.is_feasible() {
            self.items.push((tag, p.clone(), w.clone()));
        }
    }
}

fn tau_of(rep: &TableReport, th: Theorem, eta: f64) -> f64 {
    rep.results
        .iter()
        .find(|(t, _)| *t == th)
        .and_then(|(_, r)| r.rows.iter().find(|row| (row.eta_m - eta).abs() < 1e-12))
        .map(|row| row.tau_max)
        .expect("row present")
}

fn table_criterion(rep: &TableReport, seconds: f64, limit: f64) -> Outcome {
    let mut worst: f64 = 0.0;
    let mut bad = Vec::new();
    let mut lower = 0;
    for row in rep.csv_rows() {
        let Some(p) = row.published_value else { continue };
        let d = (row.tau_max - p).abs();
        worst = worst.max(d);
        if d > CELL_TOL {
            bad.push(format!(
                "{} eta={} got {:.4} want {p}",
                row.theorem, row.eta_m, row.tau_max
            ));
        }
        if row.status != "certified" {
            lower += 1;
        }
    }
    let detail = format!(
        "{} cells, worst |dev| {worst:.4}, {lower} lower-bound-only, {seconds:.0}s (limit {limit:.0}s){}",
        rep.csv_rows().len(),
        if bad.is_empty() {
            String::new()
        } else {
            format!("; {}", bad.join("; "))
        }
    );
    outcome(bad.is_empty() && seconds <= limit, detail)
}

fn non_small_delay(tables: &[&TableReport]) -> Outcome {
    let mut checks = Vec::new();
    let mut pass = true;
    for rep in tables {
        for (th, _) in &rep.def.published {
            let tau = tau_of(rep, *th, 0.04);
            let ok = 0.04 > tau / 2.0;
            pass &= ok;
            checks.push(format!("{} {}: tau_max/2={:.4}", rep.def.id, th.tag(), tau / 2.0));
        }
    }
    outcome(pass, format!("eta_m=0.04 vs {}", checks.join(", ")))
}

fn ordering(tables: &[&TableReport]) -> Outcome {
    let mut count = 0;
    let mut bad = Vec::new();
    let mut min_gap = f64::INFINITY;
    for rep in tables {
        for &eta in &rep.def.eta_grid {
            let (t1, t2) = (tau_of(rep, Theorem::Tod, eta), tau_of(rep, Theorem::RoundRobin, eta));
            count += 1;
            min_gap = min_gap.min(t2 - t1);
            if t2 < t1 {
                bad.push(format!("{} eta={eta}: t2 {t2:.4} < t1 {t1:.4}", rep.def.id));
            }
        }
    }
    outcome(
        bad.is_empty(),
        format!(
            "{count} common rows, min(t2 - t1) = {min_gap:.4}{}",
            if bad.is_empty() {
                String::new()
            } else {
                format!("; {}", bad.join("; "))
            }
        ),
    )
}

fn network(sc_mad: f64, eta: f64, tau: f64, nodes: usize) -> NetworkModel {
    let mad = if sc_mad >= eta && sc_mad < tau {
        sc_mad
    } else {
        0.5 * (eta + tau)
    };
    NetworkModel::new(eta, mad, tau, nodes).expect("network")
}

fn random_x0(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

struct RunSet<'a> {
    cl: &'a ClosedLoopModel,
    m: &'a LoopMatrices,
    net: &'a NetworkModel,
    proto: &'a Protocol,
    horizon: f64,
}

impl RunSet<'_> {
    fn run(&self, seed: u64, delta: f64) -> Trajectory {
        let timing = generate_timing(self.net, &TimingPolicy::UniformRandom { seed }, self.horizon).expect("timing");
        let omega = Disturbance::random(self.cl.q(), delta, 0.1, self.horizon, seed);
        simulate_matrices(SimInput {
            matrices: self.m,
            c_nodes: &self.cl.c_nodes,
            protocol: self.proto,
            timing: &timing,
            omega: &omega,
            x0: &random_x0(self.cl.n_cl(), seed),
            tau_m: self.net.tau_m,
            horizon: self.horizon,
        })
        .expect("simulation")
    }
}

fn jump_suite(ex2: &TableReport, ex1: &TableReport, certs: &mut Certificates) -> Outcome {
    const ETA: f64 = 0.01;
    const RUNS: u64 = 100;
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (rep, name) in [(ex2, "batch-reactor"), (ex1, "pendulum-n2")] {
        let sc = load_scenario(name).unwrap();
        let cl = sc.closed_loop().unwrap();
        let vm = cl.vertex_models();
        let m = &vm[0].nominal;
        for (th, variant) in [(Theorem::Tod, Variant::TodN), (Theorem::RoundRobin, Variant::RrN)] {
            let tau = 0.8 * tau_of(rep, th, ETA);
            let (p, w) = probe(&cl, th, ETA, tau, 0.0, false, &SolverOptions::default()).unwrap();
            certs.push(format!("c6 {name} {} tau={tau:.4}", th.tag()), &p, &w);
            if !w.is_feasible() {
                pass = false;
                parts.push(format!("{name} {}: no witness at {tau:.4}", th.tag()));
                continue;
            }
            let spec = FunctionalSpec::from_witness(variant, &p, &w.x).unwrap();
            let proto = match variant {
                Variant::TodN => Protocol::tod(spec.w.q.clone(), &cl.node_dims()).unwrap(),
                _ => Protocol::round_robin((0..cl.nodes()).collect(), cl.nodes()).unwrap(),
            };
            let net = network(sc.network.mad, ETA, tau, cl.nodes());
            let set = RunSet {
                cl: &cl,
                m,
                net: &net,
                proto: &proto,
                horizon: 0.5,
            };
            let opts = VerifyOptions {
                flow_points: 60,
                iss_step: None,
                quadrature_points: 2,
            };
            let (mut jump, mut flow, mut failed, mut jumps) = (f64::NEG_INFINITY, f64::NEG_INFINITY, 0, 0);
            for seed in 0..RUNS {
                let rep = verify_trajectory(&spec, &set.run(seed, 0.0), &opts).unwrap();
                jump = jump.max(rep.worst_jump() / rep.scale);
                flow = flow.max(rep.worst_flow() / rep.scale);
                jumps += rep.jumps.len();
                if !(rep.jumps_ok() && rep.flow_ok()) {
                    failed += 1;
                }
            }
            pass &= failed == 0;
            parts.push(format!(
                "{name} {} tau={tau:.4}: {failed}/{RUNS} failed, {jumps} jumps, max jump/V {jump:.1e}, max flow/V {flow:.1e}",
                variant.tag()
            ));
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(pass && secs <= 600.0, format!("{}; {secs:.0}s", parts.join("; ")))
}

fn iss_suite(certs: &mut Certificates) -> Outcome {
    const ETA: f64 = 0.02;
    const TAU: f64 = 0.03;
    const HORIZON: f64 = 20.0;
    let sc = load_scenario("batch-reactor").unwrap();
    let cl = sc.closed_loop().unwrap();
    let opts = SolverOptions::default();
    let (alpha, p, w) = match max_alpha(&cl, Theorem::Tod, ETA, TAU, true, (1e-6, 0.5), 1e-3, &opts) {
        Ok(v) => v,
        Err(e) => return outcome(false, format!("alpha search failed: {e}")),
    };
    certs.push(format!("c7 alpha={alpha:.4}"), &p, &w);
    let spec = FunctionalSpec::from_witness(Variant::TodN, &p, &w.x).unwrap();
    let proto = Protocol::tod(spec.w.q.clone(), &cl.node_dims()).unwrap();
    let net = network(sc.network.mad, ETA, TAU, cl.nodes());
    let set = RunSet {
        cl: &cl,
        m: &cl.nominal,
        net: &net,
        proto: &proto,
        horizon: HORIZON,
    };
    let grid: Vec<f64> = (0..=(HORIZON / 1e-2).round() as usize)
        .map(|i| i as f64 * 1e-2)
        .collect();
    let (mut points, mut violations, mut worst): (usize, usize, f64) = (0, 0, 0.0);
    for delta in [0.0, 0.1] {
        for seed in 0..20 {
            let tr = set.run(seed, delta);
            let rep = ncs_core::lyapunov::check_iss_bound(&spec, &tr, &grid).unwrap();
            points += rep.points;
            violations += rep.violations + rep.error_violations;
            worst = worst.max(rep.worst_ratio);
        }
    }
    outcome(
        violations == 0 && points > 0,
        format!(
            "alpha*={alpha:.4}, b={:.3e}; 40 realizations, {points} grid points, {violations} violations, worst V/bound {worst:.3}",
            spec.b
        ),
    )
}

/// Independent hybrid simulator: RK4 on every constant-input piece, with
/// the sample/reset bookkeeping redone from scratch.
struct Rk4Oracle<'a> {
    m: &'a LoopMatrices,
    c: &'a [DMatrix<f64>],
    proto: &'a Protocol,
    omega: &'a Disturbance,
    h: f64,
}

struct OracleRun {
    x_at_t: Vec<DVector<f64>>,
    e_at_t: Vec<Vec<DVector<f64>>>,
    active: Vec<usize>,
}

fn matvec(a: &[f64], n: usize, x: &[f64], out: &mut [f64]) {
    for i in 0..n {
        let mut s = 0.0;
        for j in 0..n {
            s += a[i + j * n] * x[j];
        }
        out[i] = s;
    }
}

impl Rk4Oracle<'_> {
    fn integrate(&self, x: &mut [f64], f: &[f64], a: f64, b: f64) {
        let n = x.len();
        let am = self.m.a.as_slice();
        let steps = ((b - a) / self.h).ceil().max(1.0) as usize;
        let dt = (b - a) / steps as f64;
        let (mut k1, mut k2, mut k3, mut k4, mut tmp) =
            (vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let rhs = |y: &[f64], out: &mut [f64]| {
            matvec(am, n, y, out);
            for i in 0..n {
                out[i] += f[i];
            }
        };
        for _ in 0..steps {
            rhs(x, &mut k1);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * dt * k1[i];
            }
            rhs(&tmp, &mut k2);
            for i in 0..n {
                tmp[i] = x[i] + 0.5 * dt * k2[i];
            }
            rhs(&tmp, &mut k3);
            for i in 0..n {
                tmp[i] = x[i] + dt * k3[i];
            }
            rhs(&tmp, &mut k4);
            for i in 0..n {
                x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
    }

    fn run(&self, tm: &TimingRealization, x0: &DVector<f64>, segments: usize) -> OracleRun {
        let n = x0.len();
        let q = self.m.d.ncols();
        let mut samples: HashMap<usize, DVector<f64>> = HashMap::new();
        for (j, &s) in tm.s.iter().enumerate() {
            if s <= tm.t[0] {
                samples.insert(j, x0.clone());
            }
        }
        let mut e: Vec<DVector<f64>> = self.c.iter().map(|c| -(c * x0)).collect();
        let mut active = self.proto.select(0, &e);
        let mut x = x0.clone();
        let mut out = OracleRun {
            x_at_t: vec![x.clone()],
            e_at_t: vec![e.clone()],
            active: vec![active],
        };
        for k in 0..segments {
            let (ta, tb) = (tm.t[k], tm.t[k + 1]);
            let mut base = &self.m.a1 * &samples[&k];
            for (i, b) in self.m.b_nodes.iter().enumerate() {
                if i != active {
                    base += b * &e[i];
                }
            }
            let mut cuts: Vec<(f64, Option<usize>)> =
                tm.s.iter()
                    .enumerate()
                    .filter(|(j, &s)| s > ta && s <= tb && !samples.contains_key(j))
                    .map(|(j, &s)| (s, Some(j)))
                    .collect();
            cuts.extend(self.omega.breakpoints(ta, tb).into_iter().map(|s| (s, None)));
            cuts.push((tb, None));
            cuts.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut t = ta;
            for (cut, sample) in cuts {
                if cut > t {
                    let f = &base + &self.m.d * self.omega.value(t, q);
                    self.integrate(x.as_mut_slice(), f.as_slice(), t, cut);
                    t = cut;
                }
                if let Some(j) = sample {
                    samples.insert(j, x.clone());
                }
            }
            let diff = &samples[&k] - &samples[&(k + 1)];
            for (i, c) in self.c.iter().enumerate() {
                let jump = c * &diff;
                e[i] = if i == active { jump } else { &e[i] + jump };
            }
            active = self.proto.select(k + 1, &e);
            debug_assert_eq!(x.len(), n);
            out.x_at_t.push(x.clone());
            out.e_at_t.push(e.clone());
            out.active.push(active);
        }
        out
    }
}

fn simulator_oracle() -> Outcome {
    const HORIZON: f64 = 5.0;
    let sc = load_scenario("pendulum-n2").unwrap();
    let cl = sc.closed_loop().unwrap();
    let vm = cl.vertex_models();
    let m = &vm[0].nominal;
    let net = network(sc.network.mad, sc.network.eta_m, sc.network.tau_m, cl.nodes());
    let mut worst_state: f64 = 0.0;
    let mut worst_reset: f64 = 0.0;
    let mut boundaries = 0;
    let mut mismatched_active = 0;
    let mut detail = Vec::new();
    let start = Instant::now();
    let protocols = [
        Protocol::tod(
            cl.node_dims().iter().map(|&d| DMatrix::identity(d, d)).collect(),
            &cl.node_dims(),
        )
        .unwrap(),
        Protocol::round_robin(vec![0, 1], 2).unwrap(),
    ];
    for (seed, proto) in protocols.iter().enumerate() {
        let seed = seed as u64 + 11;
        let tm = generate_timing(&net, &TimingPolicy::UniformRandom { seed }, HORIZON).unwrap();
        let omega = Disturbance::random(cl.q(), 0.1, 0.25, HORIZON, seed);
        let x0 = random_x0(cl.n_cl(), seed);
        let tr = simulate_matrices(SimInput {
            matrices: m,
            c_nodes: &cl.c_nodes,
            protocol: proto,
            timing: &tm,
            omega: &omega,
            x0: &x0,
            tau_m: net.tau_m,
            horizon: HORIZON,
        })
        .unwrap();
        let segs = tr.segments.len();
        let oracle = Rk4Oracle {
            m,
            c: &cl.c_nodes,
            proto,
            omega: &omega,
            h: 1e-6,
        }
        .run(&tm, &x0, segs);
        for k in 0..=segs {
            let x = if k < segs {
                tr.segments[k].x_start.clone()
            } else {
                tr.evaluate_in_segment(segs - 1, tm.t[segs]).0
            };
            let scale = 1.0 + x.norm();
            worst_state = worst_state.max((&x - &oracle.x_at_t[k]).norm() / scale);
            let (e, act) = if k < segs {
                (&tr.segments[k].e, tr.segments[k].active)
            } else {
                (&tr.final_e, tr.final_active)
            };
            for (a, b) in e.iter().zip(&oracle.e_at_t[k]) {
                worst_state = worst_state.max((a - b).norm() / scale);
            }
            if act != oracle.active[k] {
                mismatched_active += 1;
            }
        }
        for k in 0..segs {
            let next_e = if k + 1 < segs {
                &tr.segments[k + 1].e
            } else {
                &tr.final_e
            };
            let xs = tr.state(tm.s[k]).unwrap();
            let xs1 = tr.state(tm.s[k + 1]).unwrap();
            let seg = &tr.segments[k];
            for (i, c) in cl.c_nodes.iter().enumerate() {
                let jump = c * (&xs - &xs1);
                let expected = if i == seg.active {
                    jump.clone()
                } else {
                    &seg.e[i] + &jump
                };
                let scale = 1.0 + expected.norm() + seg.e[i].norm() + jump.norm();
                worst_reset = worst_reset.max((&next_e[i] - expected).norm() / scale);
            }
            let continuity = (&tr.evaluate_in_segment(k, tm.t[k + 1]).0 - &next_x(&tr, k)).norm();
            worst_reset = worst_reset.max(continuity / (1.0 + next_x(&tr, k).norm()));
            boundaries += 1;
        }
        detail.push(format!("{} {segs} updates", proto.name()));
    }
    outcome(
        worst_state <= 1e-8 && worst_reset <= 1e-10 && mismatched_active == 0,
        format!(
            "{}; max |x - x_rk4|/(1+|x|) {worst_state:.2e}, {mismatched_active} selection mismatches, max reset residual {worst_reset:.2e} over {boundaries} boundaries; {:.0}s",
            detail.join(", "),
            start.elapsed().as_secs_f64()
        ),
    )
}

fn next_x(tr: &Trajectory, k: usize) -> DVector<f64> {
    match tr.segments.get(k + 1) {
        Some(s) => s.x_start.clone(),
        None => tr.evaluate_in_segment(k, tr.segments[k].t_end).0,
    }
}

fn solver_health(certs: &Certificates) -> Outcome {
    let mut below = Vec::new();
    let mut drift: f64 = 0.0;
    for (tag, p, w) in &certs.items {
        let margins = verify_witness(p, &w.x);
        for (c, (label, m)) in p.constraints.iter().zip(&margins) {
            if *m < c.epsilon() {
                below.push(format!("{tag} {label}"));
            }
        }
        let back = import_sdpa(&export_sdpa(p)).expect("sdpa import");
        let again = verify_witness(&back, &w.x);
        if again.len() != margins.len() {
            drift = f64::INFINITY;
        }
        for (a, b) in margins.iter().zip(&again) {
            drift = drift.max((a.1 - b.1).abs());
        }
    }

    let sc = load_scenario("pendulum-n2").unwrap();
    let cl = sc.closed_loop().unwrap();
    let opts = SolverOptions::default();
    let (_, w1) = probe(&cl, Theorem::RoundRobin, 0.01, 0.02, 0.0, false, &opts).unwrap();
    let (_, w2) = probe(&cl, Theorem::RoundRobin, 0.01, 0.02, 0.0, false, &opts).unwrap();
    let same_solve =
        w1.x.as_slice()
            .iter()
            .map(|v| v.to_bits())
            .eq(w2.x.as_slice().iter().map(|v| v.to_bits()))
            && w1.iterations == w2.iterations;
    let net = network(sc.network.mad, 0.0, 0.01, 2);
    let proto = Protocol::round_robin(vec![0, 1], 2).unwrap();
    let vm = cl.vertex_models();
    let set = RunSet {
        cl: &cl,
        m: &vm[0].nominal,
        net: &net,
        proto: &proto,
        horizon: 1.0,
    };
    let (a, b) = (set.run(5, 0.1), set.run(5, 0.1));
    let same_sim = a.timing == b.timing
        && a.segments.len() == b.segments.len()
        && a.segments.iter().zip(&b.segments).all(|(s, t)| {
            s.x_start
                .iter()
                .map(|v| v.to_bits())
                .eq(t.x_start.iter().map(|v| v.to_bits()))
        });
    outcome(
        below.is_empty() && drift <= 1e-9 && same_solve && same_sim,
        format!(
            "{} feasible witnesses, {} margins below eps{}; SDPA round-trip drift {drift:.1e}; rerun identical: solve {same_solve}, simulation {same_sim}",
            certs.items.len(),
            below.len(),
            if below.is_empty() { String::new() } else { format!(" ({})", below.join(", ")) }
        ),
    )
}

fn spd(dim: usize, vals: &[f64]) -> DMatrix<f64> {
    let l = DMatrix::from_fn(dim, dim, |i, j| vals[(i * dim + j) % vals.len()]);
    &l * l.transpose() + DMatrix::identity(dim, dim) * 0.1
}

/// `(N, dims, Q entries, e entries, tie pattern, scale)`.
fn tod_case() -> impl Strategy<Value = (Vec<usize>, Vec<f64>, Vec<f64>, Vec<usize>, f64)> {
    (1usize..=6)
        .prop_flat_map(|n| {
            (
                proptest::collection::vec(1usize..=3, n),
                proptest::collection::vec(-2.0f64..2.0, 9 * n),
                proptest::collection::vec(-3.0f64..3.0, 3 * n),
                proptest::collection::vec(0usize..n, n),
                -6.0f64..6.0,
            )
        })
        .prop_map(|(dims, q, e, tie, s)| (dims, q, e, tie, 10f64.powf(s)))
}

fn protocol_suite() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let ties = std::cell::Cell::new(0usize);
    let tod = runner.run(&tod_case(), |(dims, qv, ev, tie, scale)| {
        let n = dims.len();
        // Nodes mapped to the same representative share Q and e exactly.
        let rep: Vec<usize> = (0..n)
            .map(|i| if dims[tie[i]] == dims[i] { tie[i].min(i) } else { i })
            .collect();
        let q: Vec<DMatrix<f64>> = (0..n)
            .map(|i| spd(dims[rep[i]], &qv[9 * rep[i]..9 * rep[i] + 9]))
            .collect();
        let e: Vec<DVector<f64>> = (0..n)
            .map(|i| DVector::from_column_slice(&ev[3 * rep[i]..3 * rep[i] + dims[i]]))
            .collect();
        let vals: Vec<f64> = (0..n).map(|i| (q[i].clone() * &e[i]).dot(&e[i])).collect();
        let max = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let expected = vals.iter().position(|&v| v == max).unwrap();
        if vals.iter().filter(|&&v| v == max).count() > 1 {
            ties.set(ties.get() + 1);
        }
        let got = tod_select(&e, &q);
        prop_assert_eq!(got, expected);
        let proto = Protocol::tod(q.clone(), &dims).map_err(|e| TestCaseError::fail(e.to_string()))?;
        prop_assert_eq!(proto.select(17, &e), expected);
        let scaled: Vec<DMatrix<f64>> = q.iter().map(|m| m * scale).collect();
        prop_assert_eq!(tod_select(&e, &scaled), got);
        Ok(())
    });
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    let perm = (1usize..=8).prop_flat_map(|n| (Just((0..n).collect::<Vec<_>>()).prop_shuffle(), 0usize..10_000));
    let rr = runner.run(&perm, |(order, k)| {
        let n = order.len();
        let proto = Protocol::round_robin(order.clone(), n).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let e: Vec<DVector<f64>> = (0..n).map(|_| DVector::zeros(1)).collect();
        prop_assert_eq!(rr_select(k, &order), rr_select(k + n, &order));
        prop_assert_eq!(proto.select(k, &e), order[k % n]);
        let mut seen = vec![0; n];
        for j in k..k + n {
            seen[rr_select(j, &order)] += 1;
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        Ok(())
    });
    let tod_msg = tod
        .as_ref()
        .map_or_else(|e| e.to_string(), |_| "0 failures".to_string());
    let rr_msg = rr.as_ref().map_or_else(|e| e.to_string(), |_| "0 failures".to_string());
    outcome(
        tod.is_ok() && rr.is_ok(),
        format!(
            "TOD argmax/tie-break/scaling 1000 cases ({} with ties): {tod_msg}; RR periodicity 1000 cases: {rr_msg}",
            ties.get()
        ),
    )
}

fn main() {
    let mut results: Vec<(u8, &str, Outcome)> = Vec::new();
    let mut certs = Certificates::default();
    let solver = SolverOptions::default();

    let mut tables = Vec::new();
    for (id, limit) in [("ex2", 1800.0), ("ex1-n2", 3600.0), ("ex1-n4", 3600.0)] {
        let start = Instant::now();
        let rep = table_run(id, &solver).expect("table run");
        let secs = start.elapsed().as_secs_f64();
        for (th, res) in &rep.results {
            for row in &res.rows {
                certs.push(
                    format!("{id} {} eta={}", th.tag(), row.eta_m),
                    &row.problem,
                    &row.witness,
                );
            }
        }
        println!("{}", rep.format());
        tables.push((rep, secs, limit));
    }
    let [(ex2, s2, l2), (ex1, s1, l1), (ex1n4, s4, l4)] = <[_; 3]>::try_from(tables).ok().unwrap();
    results.push((1, "batch reactor table", table_criterion(&ex2, s2, l2)));
    results.push((2, "pendulum N=2 table", table_criterion(&ex1, s1, l1)));
    results.push((3, "pendulum N=4 table", table_criterion(&ex1n4, s4, l4)));
    results.push((4, "non-small delay", non_small_delay(&[&ex1, &ex2])));
    results.push((5, "T2 >= T1 ordering", ordering(&[&ex1, &ex2])));
    results.push((6, "Lyapunov jump/flow suite", jump_suite(&ex2, &ex1, &mut certs)));
    results.push((7, "ISS bound suite", iss_suite(&mut certs)));
    results.push((8, "simulator RK4 oracle", simulator_oracle()));
    results.push((9, "solver health", solver_health(&certs)));
    results.push((10, "protocol properties", protocol_suite()));

    println!();
    let mut failed = 0;
    for (id, name, o) in &results {
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {id:>2} {} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
