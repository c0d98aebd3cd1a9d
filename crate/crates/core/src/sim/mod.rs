//! Event-driven simulation of the hybrid closed loop
//!
//! ```text
//! ẋ(t) = A x(t) + A1 x(s_k) + Σ_{i≠i*_k} B_i e_i(t_k) + D ω(t),   t ∈ [t_k, t_{k+1})
//! e_i(t_{k+1}) = C_i [x(s_k) − x(s_{k+1})]               (i = i*_k)
//! e_i(t_{k+1}) = e_i(t_k) + C_i [x(s_k) − x(s_{k+1})]    (i ≠ i*_k)
//! ```
//!
//! with `e(t_0) = −C x_0` and `x ≡ x_0` before `t_0`. Each segment is
//! propagated exactly with the matrix exponential of the augmented system.

pub mod protocol;
pub mod timing;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NcsError, Result};
use crate::linalg::expm;
use crate::model::{ClosedLoopModel, LoopMatrices, NetworkModel};

pub use protocol::{rr_select, tod_select, Protocol};
pub use timing::{generate_timing, TimingPolicy, TimingRealization};

/// Piecewise-constant disturbance.
#[derive(Debug, Clone, PartialEq)]
pub enum Disturbance {
    Zero,
    Constant(DVector<f64>),
    /// `values[j]` holds on `[times[j], times[j+1])`; zero before `times[0]`.
    Piecewise {
        times: Vec<f64>,
        values: Vec<DVector<f64>>,
    },
}

impl Disturbance {
    /// Random piecewise-constant signal with `|ω(t)| ≤ delta`, switching every `period`.
    pub fn random(q: usize, delta: f64, period: f64, horizon: f64, seed: u64) -> Self {
        if q == 0 || delta == 0.0 {
            return Disturbance::Zero;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let count = (horizon / period).ceil() as usize + 1;
        let mut times = Vec::with_capacity(count);
        let mut values = Vec::with_capacity(count);
        for j in 0..count {
            times.push(j as f64 * period);
            let v = DVector::from_fn(q, |_, _| rng.gen_range(-1.0..1.0));
            let nrm = v.norm();
            let radius = delta * rng.gen_range(0.0..=1.0f64);
            values.push(if nrm > 0.0 { v * (radius / nrm) } else { v });
        }
        Disturbance::Piecewise { times, values }
    }

    pub fn value(&self, t: f64, q: usize) -> DVector<f64> {
        match self {
            Disturbance::Zero => DVector::zeros(q),
            Disturbance::Constant(v) => v.clone(),
            Disturbance::Piecewise { times, values } => match times.iter().rposition(|&s| s <= t) {
                Some(j) => values[j].clone(),
                None => DVector::zeros(q),
            },
        }
    }

    /// Switching times strictly inside `(a, b)`.
    pub fn breakpoints(&self, a: f64, b: f64) -> Vec<f64> {
        match self {
            Disturbance::Piecewise { times, .. } => times.iter().copied().filter(|&s| s > a && s < b).collect(),
            _ => Vec::new(),
        }
    }

    /// `sup_t |ω(t)|`.
    pub fn sup_norm(&self) -> f64 {
        match self {
            Disturbance::Zero => 0.0,
            Disturbance::Constant(v) => v.norm(),
            Disturbance::Piecewise { values, .. } => values.iter().map(|v| v.norm()).fold(0.0, f64::max),
        }
    }
}

/// Constant-forcing sub-interval of a segment.
#[derive(Debug, Clone)]
pub struct Piece {
    pub start: f64,
    pub x_start: DVector<f64>,
    pub omega: DVector<f64>,
    /// `A1 x(s_k) + Σ_{i≠i*} B_i e_i + D ω`
    pub forcing: DVector<f64>,
}

/// Data of `[t_k, t_{k+1})`.
#[derive(Debug, Clone)]
pub struct Segment {
    pub k: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub s: f64,
    pub eta: f64,
    pub x_start: DVector<f64>,
    /// Held sample `x(s_k)`.
    pub x_sample: DVector<f64>,
    /// `e(t_k)`, constant on the segment.
    pub e: Vec<DVector<f64>>,
    pub active: usize,
    pub pieces: Vec<Piece>,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub matrices: LoopMatrices,
    pub c_nodes: Vec<DMatrix<f64>>,
    pub x0: DVector<f64>,
    pub timing: TimingRealization,
    pub protocol: Protocol,
    pub segments: Vec<Segment>,
    /// `e(t_K)` and the node selected for it, after the last reset.
    pub final_e: Vec<DVector<f64>>,
    pub final_active: usize,
    /// Earliest time with defined history.
    pub history_start: f64,
}

/// `(Φ(δ), Γ(δ))` with `Φ = e^{Aδ}` and `Γ = ∫_0^δ e^{Aσ} dσ`.
pub fn propagators(a: &DMatrix<f64>, delta: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(a * delta));
    m.view_mut((0, n), (n, n)).fill_with_identity();
    m.view_mut((0, n), (n, n)).scale_mut(delta);
    let e = expm(&m);
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned())
}

/// Exact solution of `ẋ = A x + f` after time `delta` from `x0`.
pub fn propagate(a: &DMatrix<f64>, x0: &DVector<f64>, f: &DVector<f64>, delta: f64) -> DVector<f64> {
    if delta == 0.0 {
        return x0.clone();
    }
    let n = a.nrows();
    let mut m = DMatrix::zeros(n + 1, n + 1);
    m.view_mut((0, 0), (n, n)).copy_from(&(a * delta));
    m.view_mut((0, n), (n, 1)).copy_from(&(f * delta));
    let e = expm(&m);
    e.view((0, 0), (n, n)) * x0 + e.view((0, n), (n, 1))
}

impl Segment {
    /// Constant-forcing piece active at `t`.
    pub fn piece_at(&self, t: f64) -> &Piece {
        let j = self.pieces.iter().rposition(|p| p.start <= t).unwrap_or(0);
        &self.pieces[j]
    }
}

impl Trajectory {
    pub fn t0(&self) -> f64 {
        self.segments[0].t_start
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map(|s| s.t_end).unwrap_or(self.t0())
    }

    pub fn n(&self) -> usize {
        self.x0.len()
    }

    /// Segment index containing `t` (`[t_k, t_{k+1})`, the last one closed).
    pub fn segment_index(&self, t: f64) -> Option<usize> {
        if t < self.t0() || t > self.t_end() {
            return None;
        }
        let idx = self.segments.partition_point(|s| s.t_start <= t);
        Some(idx.saturating_sub(1).min(self.segments.len() - 1))
    }

    /// State and derivative at `t` using the data of segment `k` (which may
    /// be evaluated at its closing instant to obtain a left limit).
    pub fn evaluate_in_segment(&self, k: usize, t: f64) -> (DVector<f64>, DVector<f64>) {
        let seg = &self.segments[k];
        let p = seg.piece_at(t);
        let x = propagate(&self.matrices.a, &p.x_start, &p.forcing, t - p.start);
        let dx = &self.matrices.a * &x + &p.forcing;
        (x, dx)
    }

    /// `(x(t), ẋ(t))`; before `t_0` the state is `x_0` with zero derivative.
    pub fn evaluate_state(&self, t: f64) -> Result<(DVector<f64>, DVector<f64>)> {
        let tol = 1e-12 * (1.0 + t.abs());
        if t < self.t0() {
            if t < self.history_start - tol {
                return Err(NcsError::OutOfRange {
                    t,
                    start: self.history_start,
                    end: self.t_end(),
                });
            }
            return Ok((self.x0.clone(), DVector::zeros(self.n())));
        }
        match self.segment_index(t) {
            Some(k) => Ok(self.evaluate_in_segment(k, t)),
            None => Err(NcsError::OutOfRange {
                t,
                start: self.history_start,
                end: self.t_end(),
            }),
        }
    }

    pub fn state(&self, t: f64) -> Result<DVector<f64>> {
        Ok(self.evaluate_state(t)?.0)
    }

    /// Error vector per node at `t`.
    pub fn errors_at(&self, t: f64) -> Result<&[DVector<f64>]> {
        let k = self.segment_index(t).ok_or(NcsError::OutOfRange {
            t,
            start: self.t0(),
            end: self.t_end(),
        })?;
        Ok(&self.segments[k].e)
    }

    /// Samples on a uniform grid over `[t_0, t_end]`.
    pub fn sample(&self, step: f64) -> Vec<TrajectorySample> {
        let mut out = Vec::new();
        let t0 = self.t0();
        let count = ((self.t_end() - t0) / step).floor() as usize;
        for j in 0..=count {
            let t = t0 + j as f64 * step;
            let k = self.segment_index(t).expect("grid inside range");
            let (x, _) = self.evaluate_in_segment(k, t);
            let seg = &self.segments[k];
            out.push(TrajectorySample {
                t,
                x,
                e: seg.e.clone(),
                active: seg.active,
                segment: k,
            });
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrajectorySample {
    pub t: f64,
    pub x: DVector<f64>,
    pub e: Vec<DVector<f64>>,
    pub active: usize,
    pub segment: usize,
}

/// Options for [`simulate`].
#[derive(Debug, Clone)]
pub struct SimInput<'a> {
    pub matrices: &'a LoopMatrices,
    pub c_nodes: &'a [DMatrix<f64>],
    pub protocol: &'a Protocol,
    pub timing: &'a TimingRealization,
    pub omega: &'a Disturbance,
    pub x0: &'a DVector<f64>,
    pub tau_m: f64,
    pub horizon: f64,
}

/// Simulates the nominal closed loop of `cl`.
pub fn simulate(
    cl: &ClosedLoopModel,
    net: &NetworkModel,
    protocol: &Protocol,
    timing: &TimingRealization,
    omega: &Disturbance,
    x0: &DVector<f64>,
    horizon: f64,
) -> Result<Trajectory> {
    timing.validate(net)?;
    simulate_matrices(SimInput {
        matrices: &cl.nominal,
        c_nodes: &cl.c_nodes,
        protocol,
        timing,
        omega,
        x0,
        tau_m: net.tau_m,
        horizon,
    })
}

/// Simulation with explicit loop matrices (e.g. one polytope vertex).
pub fn simulate_matrices(inp: SimInput) -> Result<Trajectory> {
    let m = inp.matrices;
    let n = m.a.nrows();
    let q = m.d.ncols();
    let nodes = inp.c_nodes.len();
    if inp.x0.len() != n {
        return Err(NcsError::dim(
            "x0",
            format!("expected length {n}, got {}", inp.x0.len()),
        ));
    }
    if m.b_nodes.len() != nodes {
        return Err(NcsError::dim("B_i", "node count differs from C_i"));
    }
    match inp.protocol {
        Protocol::Tod { weights } if weights.len() != nodes => {
            return Err(NcsError::dim(
                "Q",
                format!("{} weights for {nodes} nodes", weights.len()),
            ))
        }
        Protocol::RoundRobin { order } if order.len() != nodes => {
            return Err(NcsError::dim(
                "order",
                format!("{} entries for {nodes} nodes", order.len()),
            ))
        }
        _ => {}
    }
    let tm = inp.timing;
    let last =
        tm.t.iter()
            .position(|&t| t >= inp.horizon)
            .ok_or_else(|| NcsError::Timing(format!("timing ends before horizon {}", inp.horizon)))?
            .max(1);

    let mut tr = Trajectory {
        matrices: m.clone(),
        c_nodes: inp.c_nodes.to_vec(),
        x0: inp.x0.clone(),
        timing: tm.clone(),
        protocol: inp.protocol.clone(),
        segments: Vec::with_capacity(last),
        final_e: Vec::new(),
        final_active: 0,
        history_start: tm.t[0].min(0.0) - inp.tau_m,
    };

    let mut e: Vec<DVector<f64>> = inp.c_nodes.iter().map(|c| -(c * inp.x0)).collect();
    let mut active = inp.protocol.select(0, &e);
    let mut x = inp.x0.clone();
    let mut x_sample = inp.x0.clone();

    for k in 0..last {
        let (t_a, t_b) = (tm.t[k], tm.t[k + 1]);
        let mut base = &m.a1 * &x_sample;
        for (i, (bi, ei)) in m.b_nodes.iter().zip(&e).enumerate() {
            if i != active {
                base += bi * ei;
            }
        }
        let mut starts = vec![t_a];
        starts.extend(inp.omega.breakpoints(t_a, t_b));
        let mut pieces = Vec::with_capacity(starts.len());
        for (j, &start) in starts.iter().enumerate() {
            let w = inp.omega.value(start, q);
            let forcing = if q > 0 { &base + &m.d * &w } else { base.clone() };
            let end = starts.get(j + 1).copied().unwrap_or(t_b);
            let x_next = propagate(&m.a, &x, &forcing, end - start);
            pieces.push(Piece {
                start,
                x_start: x.clone(),
                omega: w,
                forcing,
            });
            x = x_next;
        }
        if !x.iter().all(|v| v.is_finite()) || x.norm() > 1e150 {
            return Err(NcsError::Divergence { time: t_b });
        }
        tr.segments.push(Segment {
            k,
            t_start: t_a,
            t_end: t_b,
            s: tm.s[k],
            eta: tm.eta[k],
            x_start: pieces[0].x_start.clone(),
            x_sample: x_sample.clone(),
            e: e.clone(),
            active,
            pieces,
        });
        let s_next = tm.s[k + 1];
        let x_sample_next = if s_next >= t_b { x.clone() } else { tr.state(s_next)? };
        let diff = &x_sample - &x_sample_next;
        for (i, c) in inp.c_nodes.iter().enumerate() {
            let jump = c * &diff;
            e[i] = if i == active { jump } else { &e[i] + jump };
        }
        active = inp.protocol.select(k + 1, &e);
        x_sample = x_sample_next;
    }
    tr.final_e = e;
    tr.final_active = active;
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LoopMatrices;

    fn scalar_loop(a: f64) -> (LoopMatrices, Vec<DMatrix<f64>>) {
        (
            LoopMatrices {
                a: DMatrix::from_element(1, 1, a),
                a1: DMatrix::zeros(1, 1),
                b_nodes: vec![DMatrix::zeros(1, 1), DMatrix::zeros(1, 1)],
                d: DMatrix::zeros(1, 0),
            },
            vec![DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 1.0)],
        )
    }

    fn run(a: f64, x0: f64, horizon: f64) -> Trajectory {
        let (m, c) = scalar_loop(a);
        let net = NetworkModel::new(0.0, 0.0, 0.05, 2).unwrap();
        let tm = generate_timing(&net, &TimingPolicy::Fixed { h: 0.03, eta: 0.0 }, horizon).unwrap();
        let proto = Protocol::round_robin(vec![0, 1], 2).unwrap();
        simulate_matrices(SimInput {
            matrices: &m,
            c_nodes: &c,
            protocol: &proto,
            timing: &tm,
            omega: &Disturbance::Zero,
            x0: &DVector::from_element(1, x0),
            tau_m: net.tau_m,
            horizon,
        })
        .unwrap()
    }

    #[test]
    fn constant_without_dynamics() {
        let tr = run(0.0, 2.5, 1.0);
        for t in [0.0, 0.31, 0.77, 1.0] {
            assert_eq!(tr.state(t).unwrap()[0], 2.5);
        }
    }

    #[test]
    fn scalar_decay_is_exact() {
        let tr = run(-1.0, 1.0, 1.0);
        let x = tr.state(1.0).unwrap()[0];
        assert!((x - (-1.0f64).exp()).abs() < 1e-14, "{x}");
    }

    #[test]
    fn prehistory_and_segment_start() {
        let tr = run(-1.0, 1.0, 0.5);
        let (x, dx) = tr.evaluate_state(-0.01).unwrap();
        assert_eq!((x[0], dx[0]), (1.0, 0.0));
        let seg = &tr.segments[3];
        let (x, _) = tr.evaluate_state(seg.t_start).unwrap();
        assert_eq!(x, seg.x_start);
        assert!(tr.evaluate_state(tr.t_end() + 1.0).is_err());
    }

    #[test]
    fn piecewise_disturbance_is_bounded() {
        let w = Disturbance::random(2, 0.1, 0.05, 1.0, 3);
        assert!(w.sup_norm() <= 0.1 + 1e-15);
        assert_eq!(w.breakpoints(0.01, 0.12), vec![0.05, 0.1]);
    }
}
