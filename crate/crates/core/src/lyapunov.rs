//! Lyapunov–Krasovskii functionals evaluated along simulated trajectories,
//! with numerical checks of the flow, jump and ISS inequalities.
//!
//! All three variants share
//!
//! ```text
//! Ṽ = xᵀPx + ∫_{t−η_m}^{t} e^{2α(s−t)} xᵀS0x + ∫_{t−τ_M}^{t−η_m} e^{2α(s−t)} xᵀS1x
//!     + η_m ∫_{−η_m}^{0}∫_{t+θ}^{t} e^{2α(s−t)} ẋᵀR0ẋ + (τ_M−η_m) ∫_{−τ_M}^{−η_m}∫_{t+θ}^{t} e^{2α(s−t)} ẋᵀR1ẋ
//! V_G = (τ_M−η_m) Σ_i ∫_{s_k}^{t} e^{2α(s−t)} |√G_i C_i ẋ|²
//! ```
//!
//! and differ in the error term added to `V = Ṽ + V_G`.

use std::fmt::Write as _;
use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result};
use crate::linalg::{all_finite, quad_form};
use crate::lmi::{rr_g_factor, LmiProblem};
use crate::sim::Trajectory;

pub const JUMP_TOL: f64 = 1e-8;
pub const FLOW_TOL: f64 = 1e-5;
pub const QUADRATURE_TOL: f64 = 1e-8;
const DIFF_STEP: f64 = 1e-7;
const BOUNDARY_GAP: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Variant {
    /// `V + Σ e_iᵀQ_ie_i`
    TodN,
    /// `V + (t_{k+1}−t)/(τ_M−η_m) e_iᵀQ_ie_i` for the idle node, `N = 2`.
    N2,
    /// `V + Σ_{j=1}^{N−1} (t_{k+1}−t)/(j(τ_M−η_m)) |√Q e_{i*_{k−j}}|²`, from `t_{N−1}` on.
    RrN,
}

impl Variant {
    pub fn tag(self) -> &'static str {
        match self {
            Variant::TodN => "tod-n",
            Variant::N2 => "n2",
            Variant::RrN => "rr-n",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tod-n" | "tod" => Some(Variant::TodN),
            "n2" => Some(Variant::N2),
            "rr-n" | "rr" => Some(Variant::RrN),
            _ => None,
        }
    }
}

/// Weight matrices of a functional.
#[derive(Debug, Clone)]
pub struct Weights {
    pub p: DMatrix<f64>,
    pub s0: DMatrix<f64>,
    pub s1: DMatrix<f64>,
    pub r0: DMatrix<f64>,
    pub r1: DMatrix<f64>,
    pub q: Vec<DMatrix<f64>>,
    pub u: Vec<DMatrix<f64>>,
    pub g: Vec<DMatrix<f64>>,
}

#[derive(Debug, Clone)]
pub struct FunctionalSpec {
    pub variant: Variant,
    pub w: Weights,
    pub alpha: f64,
    pub b: f64,
    pub eta_m: f64,
    pub tau_m: f64,
    pub order: usize,
    rule: Vec<(f64, f64)>,
    rule2: Vec<(f64, f64)>,
}

fn gauss_pairs(order: usize) -> Vec<(f64, f64)> {
    let n = NonZeroUsize::new(order.max(1)).expect("positive order");
    GaussLegendre::new(n).as_node_weight_pairs().to_vec()
}

impl FunctionalSpec {
    /// Builds a spec; `N2` forces `G_i = Q_i e^{2ατ_M}`, `RR-N` forces the
    /// Round-Robin `G_i` and `U_i = Q_i/(N−1)`.
    pub fn new(variant: Variant, mut w: Weights, alpha: f64, b: f64, eta_m: f64, tau_m: f64) -> Result<Self> {
        let n = w.p.nrows();
        for (name, m) in [("P", &w.p), ("S0", &w.s0), ("S1", &w.s1), ("R0", &w.r0), ("R1", &w.r1)] {
            if m.shape() != (n, n) {
                return Err(NcsError::dim(name, format!("expected {n}x{n}")));
            }
            if !all_finite(m) {
                return Err(NcsError::NonFinite(name.to_string()));
            }
        }
        let nodes = w.q.len();
        if nodes < 2 {
            return Err(NcsError::InvalidNetwork(format!(
                "need at least two nodes, got {nodes}"
            )));
        }
        if !(tau_m > eta_m) || eta_m < 0.0 {
            return Err(NcsError::Validation(format!(
                "need 0 ≤ eta_m < tau_M, got {eta_m}, {tau_m}"
            )));
        }
        match variant {
            Variant::TodN => {
                if w.u.len() != nodes || w.g.len() != nodes {
                    return Err(NcsError::dim("U/G", "one U_i and G_i per node required"));
                }
            }
            Variant::N2 => {
                if nodes != 2 {
                    return Err(NcsError::Unsupported(format!(
                        "variant n2 is defined for two nodes only, got {nodes}"
                    )));
                }
                let f = (2.0 * alpha * tau_m).exp();
                w.g = w.q.iter().map(|q| q * f).collect();
                w.u = w.q.clone();
            }
            Variant::RrN => {
                let f = rr_g_factor(nodes, alpha, eta_m, tau_m);
                w.g = w.q.iter().map(|q| q * f).collect();
                w.u = w.q.iter().map(|q| q / (nodes as f64 - 1.0)).collect();
            }
        }
        let order = 16;
        Ok(FunctionalSpec {
            variant,
            w,
            alpha,
            b,
            eta_m,
            tau_m,
            order,
            rule: gauss_pairs(order),
            rule2: gauss_pairs(2 * order),
        })
    }

    /// Reads `P, S0, S1, R0, R1, Q_i` (and `U_i, G_i`, `b` when present)
    /// from a solved problem.
    pub fn from_witness(variant: Variant, problem: &LmiProblem, x: &DVector<f64>) -> Result<Self> {
        let params = problem
            .params
            .as_ref()
            .ok_or_else(|| NcsError::Validation("problem carries no network parameters".into()))?;
        let l = &problem.layout;
        if x.len() != l.len() {
            return Err(NcsError::LayoutMismatch(format!(
                "witness has {} entries, layout {}",
                x.len(),
                l.len()
            )));
        }
        let get = |name: &str| {
            l.find(name)
                .map(|id| l.matrix(x, id))
                .ok_or_else(|| NcsError::LayoutMismatch(format!("variable {name} missing")))
        };
        let nodes = params.nodes();
        let q: Vec<_> = (1..=nodes).map(|i| get(&format!("Q{i}"))).collect::<Result<_>>()?;
        let opt = |prefix: &str| -> Option<Vec<DMatrix<f64>>> {
            (1..=nodes).map(|i| get(&format!("{prefix}{i}")).ok()).collect()
        };
        let (u, g) = match (opt("U"), opt("G")) {
            (Some(u), Some(g)) => (u, g),
            _ => {
                let f = rr_g_factor(nodes, params.alpha, params.eta_m, params.tau_m);
                (
                    q.iter().map(|qi| qi / (nodes as f64 - 1.0)).collect(),
                    q.iter().map(|qi| qi * f).collect(),
                )
            }
        };
        let b = get("b").map(|m| m[(0, 0)]).unwrap_or(0.0);
        let w = Weights {
            p: get("P")?,
            s0: get("S0")?,
            s1: get("S1")?,
            r0: get("R0")?,
            r1: get("R1")?,
            q,
            u,
            g,
        };
        Self::new(variant, w, params.alpha, b, params.eta_m, params.tau_m)
    }

    pub fn with_order(mut self, order: usize) -> Self {
        self.order = order.max(1);
        self.rule = gauss_pairs(self.order);
        self.rule2 = gauss_pairs(2 * self.order);
        self
    }

    pub fn nodes(&self) -> usize {
        self.w.q.len()
    }

    fn span(&self) -> f64 {
        self.tau_m - self.eta_m
    }

    /// First segment on which the functional is defined.
    pub fn first_segment(&self) -> usize {
        match self.variant {
            Variant::RrN => self.nodes() - 1,
            _ => 0,
        }
    }
}

/// Term-by-term value of `V_e(t)`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FunctionalValue {
    pub xpx: f64,
    pub s0: f64,
    pub s1: f64,
    pub r0: f64,
    pub r1: f64,
    pub vg: f64,
    /// Variant-specific error term.
    pub err: f64,
}

impl FunctionalValue {
    pub fn v_tilde(&self) -> f64 {
        self.xpx + self.s0 + self.s1 + self.r0 + self.r1
    }

    /// `V = Ṽ + V_G`
    pub fn v(&self) -> f64 {
        self.v_tilde() + self.vg
    }

    pub fn total(&self) -> f64 {
        self.v() + self.err
    }
}

/// State and derivative at `s`, using segment data no later than `kmax`.
fn state_upto(tr: &Trajectory, kmax: usize, s: f64) -> (DVector<f64>, DVector<f64>) {
    if s < tr.t0() {
        return (tr.x0.clone(), DVector::zeros(tr.n()));
    }
    let k = tr.segment_index(s).unwrap_or(tr.segments.len() - 1).min(kmax);
    tr.evaluate_in_segment(k, s)
}

/// Splits `[a, b]` where the integrands may be non-smooth.
fn split_points(tr: &Trajectory, kmax: usize, a: f64, b: f64, extra: &[f64]) -> Vec<f64> {
    let mut pts = vec![a, b];
    let inside = |p: f64| p > a && p < b;
    if inside(tr.t0()) {
        pts.push(tr.t0());
    }
    for seg in &tr.segments[..=kmax.min(tr.segments.len() - 1)] {
        if seg.t_start > b {
            break;
        }
        for p in &seg.pieces {
            if inside(p.start) {
                pts.push(p.start);
            }
        }
    }
    pts.extend(extra.iter().copied().filter(|p| inside(*p)));
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|x, y| (*x - *y).abs() <= 1e-15 * (1.0 + y.abs()));
    pts
}

/// Piecewise Gauss–Legendre quadrature of a vector-valued integrand; the
/// closure receives the sub-interval midpoint, the node and `(x, ẋ)`.
fn integrate<const M: usize>(
    tr: &Trajectory,
    kmax: usize,
    a: f64,
    b: f64,
    extra: &[f64],
    rule: &[(f64, f64)],
    mut f: impl FnMut(f64, f64, &DVector<f64>, &DVector<f64>) -> [f64; M],
) -> [f64; M] {
    let mut acc = [0.0; M];
    if !(b > a) {
        return acc;
    }
    let pts = split_points(tr, kmax, a, b, extra);
    for w in pts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if !(hi > lo) {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let half = 0.5 * (hi - lo);
        for &(node, weight) in rule {
            let s = mid + half * node;
            let (x, dx) = state_upto(tr, kmax, s);
            let v = f(mid, s, &x, &dx);
            for (a, v) in acc.iter_mut().zip(v) {
                *a += weight * half * v;
            }
        }
    }
    acc
}

/// Evaluates `V_e` along one trajectory.
pub struct Evaluator<'a> {
    pub spec: &'a FunctionalSpec,
    pub tr: &'a Trajectory,
    cg: DMatrix<f64>,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a FunctionalSpec, tr: &'a Trajectory) -> Result<Self> {
        if tr.c_nodes.len() != spec.nodes() {
            return Err(NcsError::dim(
                "Q",
                format!("{} weights for {} nodes", spec.nodes(), tr.c_nodes.len()),
            ));
        }
        if spec.w.p.nrows() != tr.n() {
            return Err(NcsError::dim("P", format!("expected {0}x{0}", tr.n())));
        }
        let n = tr.n();
        let mut cg = DMatrix::zeros(n, n);
        for (c, g) in tr.c_nodes.iter().zip(&spec.w.g) {
            cg += c.transpose() * g * c;
        }
        Ok(Evaluator { spec, tr, cg })
    }

    /// `V_e(t)` using the data of segment `k` (so `t = t_{k+1}` gives the left limit).
    pub fn eval_in_segment(&self, k: usize, t: f64) -> Result<FunctionalValue> {
        self.eval_with(k, t, &self.spec.rule)
    }

    pub fn eval(&self, t: f64) -> Result<FunctionalValue> {
        let k = self.tr.segment_index(t).ok_or(NcsError::OutOfRange {
            t,
            start: self.tr.t0(),
            end: self.tr.t_end(),
        })?;
        self.eval_in_segment(k, t)
    }

    /// Relative change of `V_e(t)` when the quadrature order is doubled.
    pub fn quadrature_delta(&self, k: usize, t: f64) -> Result<(f64, f64)> {
        let a = self.eval_with(k, t, &self.spec.rule)?.total();
        let b = self.eval_with(k, t, &self.spec.rule2)?.total();
        Ok((a, (a - b).abs() / a.abs().max(f64::MIN_POSITIVE)))
    }

    fn eval_with(&self, k: usize, t: f64, rule: &[(f64, f64)]) -> Result<FunctionalValue> {
        let spec = self.spec;
        let tr = self.tr;
        let seg = tr.segments.get(k).ok_or(NcsError::OutOfRange {
            t,
            start: tr.t0(),
            end: tr.t_end(),
        })?;
        let tol = 1e-12 * (1.0 + t.abs());
        if t < seg.t_start - tol || t > seg.t_end + tol {
            return Err(NcsError::OutOfRange {
                t,
                start: seg.t_start,
                end: seg.t_end,
            });
        }
        let nodes = spec.nodes();
        if k < spec.first_segment() {
            return Err(NcsError::InsufficientHistory(format!(
                "{} functional starts at t_{}",
                spec.variant.tag(),
                nodes - 1
            )));
        }
        let (eta, tau, h, alpha) = (spec.eta_m, spec.tau_m, spec.span(), spec.alpha);
        let vg_start = if spec.variant == Variant::RrN && k == nodes - 1 {
            tr.segments[0].s
        } else {
            seg.s
        };
        let lo = (t - tau).min(vg_start);
        if lo < tr.history_start - tol {
            return Err(NcsError::InsufficientHistory(format!(
                "need history from {lo}, trajectory starts at {}",
                tr.history_start
            )));
        }
        let w = &spec.w;
        let cg = &self.cg;
        let [s0, s1, r0, r1, vg] = integrate(tr, k, lo, t, &[t - eta, t - tau, vg_start], rule, |mid, s, x, dx| {
            let ew = (2.0 * alpha * (s - t)).exp();
            let mut out = [0.0; 5];
            if mid >= t - eta {
                out[0] = ew * quad_form(&w.s0, x);
                out[2] = eta * (s - t + eta) * ew * quad_form(&w.r0, dx);
            } else if mid >= t - tau {
                out[1] = ew * quad_form(&w.s1, x);
            }
            if mid >= t - tau {
                out[3] = h * h.min(s - t + tau) * ew * quad_form(&w.r1, dx);
            }
            if mid >= vg_start {
                out[4] = h * ew * quad_form(cg, dx);
            }
            out
        });
        let (x, _) = tr.evaluate_in_segment(k, t);
        let remaining = (seg.t_end - t).max(0.0);
        let err = match spec.variant {
            Variant::TodN => seg.e.iter().zip(&w.q).map(|(e, q)| quad_form(q, e)).sum(),
            Variant::N2 => {
                let j = 1 - seg.active;
                remaining / h * quad_form(&w.q[j], &seg.e[j])
            }
            Variant::RrN => (1..nodes)
                .map(|j| {
                    let i = tr.segments[k - j].active;
                    remaining / (j as f64 * h) * quad_form(&w.q[i], &seg.e[i])
                })
                .sum(),
        };
        Ok(FunctionalValue {
            xpx: quad_form(&w.p, &x),
            s0,
            s1,
            r0,
            r1,
            vg,
            err,
        })
    }

    /// `Ψ_{k+1}` of the Round-Robin recursion (`k ≥ N−1`, segment `k+1` must exist).
    pub fn psi(&self, k: usize) -> f64 {
        let spec = self.spec;
        let tr = self.tr;
        let nodes = spec.nodes();
        let t1 = tr.segments[k + 1].t_start;
        let alpha = spec.alpha;
        let weighted = |i: usize, a: f64, b: f64| {
            let (c, q) = (&tr.c_nodes[i], &spec.w.q[i]);
            integrate(tr, k + 1, a, b, &[], &spec.rule, |_, s, _, dx| {
                [(2.0 * alpha * (s - t1)).exp() * quad_form(q, &(c * dx))]
            })[0]
        };
        let s = |j: usize| tr.segments[j].s;
        let mut sum = 0.0;
        for j in 0..nodes.saturating_sub(2) {
            let i = tr.segments[k - j].active;
            sum += (nodes - 2 - j) as f64 * weighted(i, s(k - j - 1), s(k + 1));
        }
        sum += (nodes - 1) as f64 * weighted(tr.segments[k + 1].active, s(k), s(k + 1));
        let h = spec.span();
        -h * (2.0 * alpha * (spec.tau_m + (nodes as f64 - 2.0) * h)).exp() * sum
    }
}

pub fn eval_functional(spec: &FunctionalSpec, tr: &Trajectory, t: f64) -> Result<FunctionalValue> {
    Evaluator::new(spec, tr)?.eval(t)
}

#[derive(Debug, Clone, Serialize)]
pub struct FlowResidual {
    pub t: f64,
    pub k: usize,
    pub v_e: f64,
    pub dv_e: f64,
    pub residual: f64,
}

/// Left-hand side of the dissipation inequality on `grid`; points closer
/// than `1e−6` to a jump or a disturbance switch are skipped.
pub fn check_flow(spec: &FunctionalSpec, tr: &Trajectory, grid: &[f64]) -> Result<Vec<FlowResidual>> {
    let ev = Evaluator::new(spec, tr)?;
    let mut out = Vec::new();
    let h = spec.span();
    for &t in grid {
        let Some(k) = tr.segment_index(t) else { continue };
        if k < spec.first_segment() {
            continue;
        }
        let seg = &tr.segments[k];
        if t - seg.t_start < BOUNDARY_GAP
            || seg.t_end - t < BOUNDARY_GAP
            || seg.pieces.iter().any(|p| (t - p.start).abs() < BOUNDARY_GAP)
        {
            continue;
        }
        let f = |dt: f64| ev.eval_in_segment(k, t + dt).map(|v| v.total());
        let d1 = (f(DIFF_STEP)? - f(-DIFF_STEP)?) / (2.0 * DIFF_STEP);
        let d2 = (f(2.0 * DIFF_STEP)? - f(-2.0 * DIFF_STEP)?) / (4.0 * DIFF_STEP);
        let dv = (4.0 * d1 - d2) / 3.0;
        let v = f(0.0)?;
        let omega = &seg.piece_at(t).omega;
        let mut r = dv + 2.0 * spec.alpha * v - spec.b * omega.norm_squared();
        if spec.variant == Variant::TodN {
            for (i, e) in seg.e.iter().enumerate() {
                if i == seg.active {
                    r -= 2.0 * spec.alpha * quad_form(&spec.w.q[i], e);
                } else {
                    r -= quad_form(&spec.w.u[i], e) / h;
                }
            }
        }
        out.push(FlowResidual {
            t,
            k,
            v_e: v,
            dv_e: dv,
            residual: r,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct JumpResidual {
    /// Index `k+1` of the updating instant.
    pub index: usize,
    pub t: f64,
    /// `V_e(t_{k+1}) − V_e(t_{k+1}⁻)`
    pub theta: f64,
    /// Value that must be `≤ 0` for the variant's jump condition.
    pub residual: f64,
    pub psi: Option<f64>,
    pub left: f64,
    pub right: f64,
}

fn sup_disturbance(tr: &Trajectory) -> f64 {
    tr.segments
        .iter()
        .flat_map(|s| s.pieces.iter())
        .map(|p| p.omega.norm())
        .fold(0.0, f64::max)
}

fn decay_integral(alpha: f64, span: f64) -> f64 {
    if alpha == 0.0 {
        span
    } else {
        (1.0 - (-2.0 * alpha * span).exp()) / (2.0 * alpha)
    }
}

/// Jump residuals at every interior updating instant. `TOD-N` uses the
/// strengthened jump inequality, `N2` plain `Θ ≤ 0`, and `RR-N` the
/// cumulative bound anchored at `t_{N−1}`.
pub fn check_jumps(spec: &FunctionalSpec, tr: &Trajectory) -> Result<Vec<JumpResidual>> {
    let ev = Evaluator::new(spec, tr)?;
    let first = spec.first_segment();
    if tr.segments.len() < first + 2 {
        return Err(NcsError::InsufficientHistory(format!(
            "{} jump check needs updating instants beyond t_{}",
            spec.variant.tag(),
            first
        )));
    }
    let h = spec.span();
    let alpha = spec.alpha;
    let delta = sup_disturbance(tr);
    let anchor = if spec.variant == Variant::RrN {
        let t = tr.segments[first].t_start;
        Some((t, ev.eval_in_segment(first, t)?.total()))
    } else {
        None
    };
    let mut out = Vec::new();
    for k in first..tr.segments.len() - 1 {
        let seg = &tr.segments[k];
        let t1 = seg.t_end;
        let left = ev.eval_in_segment(k, t1)?.total();
        let right = ev.eval_in_segment(k + 1, t1)?.total();
        let theta = right - left;
        let (residual, psi) = match spec.variant {
            Variant::TodN => {
                let mut r = theta;
                for (i, e) in seg.e.iter().enumerate() {
                    if i == seg.active {
                        r += 2.0 * alpha * h * quad_form(&spec.w.q[i], e);
                    } else {
                        r += quad_form(&spec.w.u[i], e);
                    }
                }
                (r, None)
            }
            Variant::N2 => (theta, None),
            Variant::RrN => {
                let (ta, va) = anchor.expect("anchor set for rr-n");
                let psi = ev.psi(k);
                let bound = (-2.0 * alpha * (t1 - ta)).exp() * va
                    + psi
                    + spec.b * delta * delta * decay_integral(alpha, t1 - ta);
                (right - bound, Some(psi))
            }
        };
        out.push(JumpResidual {
            index: k + 1,
            t: t1,
            theta,
            residual,
            psi,
            left,
            right,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct IssReport {
    pub anchor: f64,
    pub v_anchor: f64,
    pub delta: f64,
    pub points: usize,
    pub violations: usize,
    /// `max V(t) / bound(t)`
    pub worst_ratio: f64,
    pub error_violations: usize,
    pub worst_error_ratio: f64,
}

impl IssReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.error_violations == 0
    }
}

/// Checks `V(t) ≤ e^{−2α(t−anchor)} V_e(anchor) + (b/2α) Δ²` on `grid`
/// (and the error bound for `TOD-N`), with `Δ` the sup of the disturbance.
pub fn check_iss_bound(spec: &FunctionalSpec, tr: &Trajectory, grid: &[f64]) -> Result<IssReport> {
    if spec.alpha <= 0.0 {
        return Err(NcsError::AlphaZero);
    }
    let ev = Evaluator::new(spec, tr)?;
    let first = spec.first_segment();
    if tr.segments.len() <= first {
        return Err(NcsError::InsufficientHistory(format!("no segment t_{first}")));
    }
    let anchor = tr.segments[first].t_start;
    let v_anchor = {
        let val = ev.eval_in_segment(first, anchor)?;
        match spec.variant {
            Variant::RrN => {
                let e = &tr.segments[first].e;
                val.v() + e.iter().zip(&spec.w.q).map(|(e, q)| quad_form(q, e)).sum::<f64>()
            }
            _ => val.total(),
        }
    };
    let delta = sup_disturbance(tr);
    let alpha = spec.alpha;
    let offset = spec.b / (2.0 * alpha) * delta * delta;
    let c_tilde = (2.0 * alpha * spec.span()).exp();
    let mut rep = IssReport {
        anchor,
        v_anchor,
        delta,
        points: 0,
        violations: 0,
        worst_ratio: 0.0,
        error_violations: 0,
        worst_error_ratio: 0.0,
    };
    let slack = |bound: f64| bound * (1.0 + 1e-9) + 1e-14 * v_anchor;
    for &t in grid {
        let Some(k) = tr.segment_index(t) else { continue };
        if t < anchor || k < first {
            continue;
        }
        let decay = (-2.0 * alpha * (t - anchor)).exp();
        let v = ev.eval_in_segment(k, t)?.v();
        let bound = decay * v_anchor + offset;
        rep.points += 1;
        rep.worst_ratio = rep.worst_ratio.max(v / bound);
        if v > slack(bound) {
            rep.violations += 1;
        }
        if spec.variant == Variant::TodN {
            let e = &tr.segments[k].e;
            let ve: f64 = e.iter().zip(&spec.w.q).map(|(e, q)| quad_form(q, e)).sum();
            let eb = c_tilde * decay * v_anchor + offset;
            rep.worst_error_ratio = rep.worst_error_ratio.max(ve / eb);
            if ve > slack(eb) {
                rep.error_violations += 1;
            }
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, Serialize)]
pub struct QuadratureDelta {
    pub t: f64,
    pub value: f64,
    pub delta: f64,
}

#[derive(Debug, Clone)]
pub struct VerifyOptions {
    pub flow_points: usize,
    /// Spacing of the ISS grid; `None` skips the ISS check.
    pub iss_step: Option<f64>,
    pub quadrature_points: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        VerifyOptions {
            flow_points: 100,
            iss_step: None,
            quadrature_points: 5,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub variant: Variant,
    /// `max V_e` over all evaluations, the unit for residual tolerances.
    pub scale: f64,
    pub jumps: Vec<JumpResidual>,
    pub flow: Vec<FlowResidual>,
    pub iss: Option<IssReport>,
    pub quadrature: Vec<QuadratureDelta>,
}

impl VerificationReport {
    pub fn worst_jump(&self) -> f64 {
        self.jumps.iter().map(|j| j.residual).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_flow(&self) -> f64 {
        self.flow.iter().map(|f| f.residual).fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn worst_psi(&self) -> Option<f64> {
        self.jumps.iter().filter_map(|j| j.psi).reduce(f64::max)
    }

    pub fn worst_quadrature(&self) -> f64 {
        self.quadrature.iter().map(|q| q.delta).fold(0.0, f64::max)
    }

    pub fn jumps_ok(&self) -> bool {
        self.worst_jump() <= JUMP_TOL * self.scale && self.worst_psi().is_none_or(|p| p <= 0.0)
    }

    pub fn flow_ok(&self) -> bool {
        self.worst_flow() <= FLOW_TOL * self.scale
    }

    pub fn quadrature_ok(&self) -> bool {
        self.worst_quadrature() < QUADRATURE_TOL
    }

    pub fn iss_ok(&self) -> bool {
        self.iss.as_ref().is_none_or(IssReport::passed)
    }

    pub fn passed(&self) -> bool {
        self.jumps_ok() && self.flow_ok() && self.iss_ok() && self.quadrature_ok()
    }

    pub fn format(&self) -> String {
        let verdict = |ok: bool| if ok { "PASS" } else { "FAIL" };
        let mut s = String::new();
        let _ = writeln!(s, "variant {}", self.variant.tag());
        let _ = writeln!(s, "scale max V_e = {:.6e}", self.scale);
        let _ = writeln!(
            s,
            "{} jumps: {} instants, worst residual {:.3e} (tol {:.1e} x scale)",
            verdict(self.jumps_ok()),
            self.jumps.len(),
            self.worst_jump(),
            JUMP_TOL
        );
        if let Some(p) = self.worst_psi() {
            let _ = writeln!(s, "     max Psi = {p:.3e}");
        }
        let _ = writeln!(
            s,
            "{} flow: {} points, worst residual {:.3e} (tol {:.1e} x scale)",
            verdict(self.flow_ok()),
            self.flow.len(),
            self.worst_flow(),
            FLOW_TOL
        );
        if let Some(iss) = &self.iss {
            let _ = writeln!(
                s,
                "{} iss: {} points, {} violations, worst ratio {:.6}, error-bound violations {}",
                verdict(iss.passed()),
                iss.points,
                iss.violations,
                iss.worst_ratio,
                iss.error_violations
            );
        }
        let _ = writeln!(
            s,
            "{} quadrature: worst relative change on doubling the order {:.3e}",
            verdict(self.quadrature_ok()),
            self.worst_quadrature()
        );
        s
    }
}

/// Runs the jump, flow, quadrature and (optionally) ISS checks on one trajectory.
pub fn verify_trajectory(spec: &FunctionalSpec, tr: &Trajectory, opts: &VerifyOptions) -> Result<VerificationReport> {
    let first = spec.first_segment();
    let start = tr
        .segments
        .get(first)
        .ok_or_else(|| NcsError::InsufficientHistory(format!("no segment t_{first}")))?
        .t_start;
    let end = tr.t_end();
    let grid: Vec<f64> = (0..opts.flow_points)
        .map(|j| start + (end - start) * (j as f64 + 0.5) / opts.flow_points as f64)
        .collect();
    let jumps = check_jumps(spec, tr)?;
    let flow = check_flow(spec, tr, &grid)?;
    let ev = Evaluator::new(spec, tr)?;
    let mut quadrature = Vec::new();
    for j in 0..opts.quadrature_points {
        let t = start + (end - start) * (j as f64 + 0.25) / opts.quadrature_points.max(1) as f64;
        let k = tr.segment_index(t).unwrap_or(first).max(first);
        let (value, delta) = ev.quadrature_delta(k, t)?;
        quadrature.push(QuadratureDelta { t, value, delta });
    }
    let iss = match opts.iss_step {
        Some(step) => {
            let count = ((end - start) / step).floor() as usize;
            let g: Vec<f64> = (0..=count).map(|j| start + j as f64 * step).collect();
            Some(check_iss_bound(spec, tr, &g)?)
        }
        None => None,
    };
    let scale = jumps
        .iter()
        .flat_map(|j| [j.left, j.right])
        .chain(flow.iter().map(|f| f.v_e))
        .chain(quadrature.iter().map(|q| q.value))
        .fold(0.0, f64::max);
    Ok(VerificationReport {
        variant: spec.variant,
        scale,
        jumps,
        flow,
        iss,
        quadrature,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{LoopMatrices, NetworkModel};
    use crate::sim::{generate_timing, simulate_matrices, Disturbance, Protocol, SimInput, TimingPolicy};

    fn zero_loop(n: usize) -> LoopMatrices {
        LoopMatrices {
            a: DMatrix::zeros(n, n),
            a1: DMatrix::zeros(n, n),
            b_nodes: vec![DMatrix::zeros(n, 1), DMatrix::zeros(n, 1)],
            d: DMatrix::zeros(n, 1),
        }
    }

    fn const_traj(v: &[f64]) -> Trajectory {
        let n = v.len();
        let m = zero_loop(n);
        let mut c0 = DMatrix::zeros(1, n);
        c0[(0, 0)] = 1.0;
        let mut c1 = DMatrix::zeros(1, n);
        c1[(0, n - 1)] = 1.0;
        let net = NetworkModel::new(0.01, 0.01, 0.03, 2).unwrap();
        let timing = generate_timing(&net, &TimingPolicy::Fixed { h: 0.02, eta: 0.01 }, 0.5).unwrap();
        let x0 = DVector::from_column_slice(v);
        let protocol = Protocol::round_robin(vec![0, 1], 2).unwrap();
        simulate_matrices(SimInput {
            matrices: &m,
            c_nodes: &[c0, c1],
            protocol: &protocol,
            timing: &timing,
            omega: &Disturbance::Zero,
            x0: &x0,
            tau_m: 0.03,
            horizon: 0.5,
        })
        .unwrap()
    }

    fn weights(n: usize, s: f64) -> Weights {
        let i = DMatrix::identity(n, n);
        Weights {
            p: i.clone() * 2.0,
            s0: i.clone() * s,
            s1: i.clone() * 3.0 * s,
            r0: i.clone() * s,
            r1: i * s,
            q: vec![DMatrix::identity(1, 1); 2],
            u: vec![DMatrix::identity(1, 1); 2],
            g: vec![DMatrix::identity(1, 1) * s; 2],
        }
    }

    #[test]
    fn constant_state_closed_form() {
        let v = [1.0, -2.0];
        let tr = const_traj(&v);
        let spec = FunctionalSpec::new(Variant::TodN, weights(2, 1.0), 0.0, 0.0, 0.01, 0.03).unwrap();
        let val = eval_functional(&spec, &tr, 0.237).unwrap();
        let vv = 5.0;
        assert!((val.v() - (2.0 * vv + 0.01 * vv + 0.02 * 3.0 * vv)).abs() < 1e-12);
        assert!(val.r0.abs() < 1e-15 && val.r1.abs() < 1e-15 && val.vg.abs() < 1e-15);
    }

    #[test]
    fn degenerate_weights() {
        let tr = const_traj(&[1.0, 3.0]);
        let spec = FunctionalSpec::new(Variant::TodN, weights(2, 0.0), 0.0, 0.0, 0.01, 0.03).unwrap();
        let t = 0.001;
        let val = eval_functional(&spec, &tr, tr.t0() + t).unwrap();
        let e = tr.errors_at(tr.t0() + t).unwrap();
        let expect = 2.0 * 10.0 + e.iter().map(|e| e.norm_squared()).sum::<f64>();
        assert!((val.total() - expect).abs() < 1e-12);
    }

    #[test]
    fn zero_dynamics_zero_flow_residual() {
        let tr = const_traj(&[0.5, 0.5]);
        let mut w = weights(2, 0.0);
        w.q = vec![DMatrix::zeros(1, 1); 2];
        w.u = w.q.clone();
        let spec = FunctionalSpec::new(Variant::TodN, w, 0.0, 0.0, 0.01, 0.03).unwrap();
        let grid: Vec<f64> = (1..50).map(|j| 0.01 * j as f64 + 0.003).collect();
        let flow = check_flow(&spec, &tr, &grid).unwrap();
        assert!(!flow.is_empty());
        assert!(flow.iter().all(|f| f.residual.abs() < 1e-6));
    }

    #[test]
    fn n2_requires_two_nodes() {
        let mut w = weights(2, 1.0);
        w.q.push(DMatrix::identity(1, 1));
        assert!(matches!(
            FunctionalSpec::new(Variant::N2, w, 0.0, 0.0, 0.0, 0.02),
            Err(NcsError::Unsupported(_))
        ));
    }

    #[test]
    fn rr_and_n2_agree_for_two_nodes() {
        let tr = const_traj(&[1.0, 0.0]);
        let a = FunctionalSpec::new(Variant::N2, weights(2, 1.0), 0.0, 0.0, 0.01, 0.03).unwrap();
        let b = FunctionalSpec::new(Variant::RrN, weights(2, 1.0), 0.0, 0.0, 0.01, 0.03).unwrap();
        for t in [0.05, 0.113, 0.3] {
            let (x, y) = (
                eval_functional(&a, &tr, t).unwrap(),
                eval_functional(&b, &tr, t).unwrap(),
            );
            assert!((x.err - y.err).abs() < 1e-15);
            assert!((x.v_tilde() - y.v_tilde()).abs() < 1e-15);
        }
    }

    #[test]
    fn alpha_zero_iss_rejected() {
        let tr = const_traj(&[1.0, 0.0]);
        let spec = FunctionalSpec::new(Variant::TodN, weights(2, 1.0), 0.0, 0.0, 0.01, 0.03).unwrap();
        assert!(matches!(check_iss_bound(&spec, &tr, &[0.1]), Err(NcsError::AlphaZero)));
    }
}
