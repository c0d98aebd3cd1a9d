//! Assembly of the TOD and Round-Robin LMI families.
//!
//! For node `i` the extended vector is
//!
//! ```text
//! ξ_i = col{x(t), x(t−η_m), x(t−τ(t)), x(t−τ_M), e_j (j ≠ i, ascending), ω}
//! ```
//!
//! and the main block reads
//!
//! ```text
//! [ Σ_i − Fᵀ Φ F e^{−2ατ_M}   Ξ_iᵀ H ]
//! [        *                   −H    ]  < 0
//! ```
//!
//! with `H = η_m² R0 + (τ_M−η_m)² R1 + (τ_M−η_m) Σ_l C_lᵀ G_l C_l`.

use nalgebra::DMatrix;

use super::layout::{DecisionLayout, VarId};
use super::problem::{AffineBuilder, Constraint, LmiParams, LmiProblem, Sense, Theorem, VarRef};
use crate::error::{NcsError, Result};
use crate::model::{ClosedLoopModel, NetworkModel};

/// Variable handles of one problem. Under the Round-Robin theorem `u` and
/// `g` are scaled references to `q`.
#[derive(Debug, Clone)]
pub struct TheoremVars {
    pub p: VarId,
    pub s0: VarId,
    pub s1: VarId,
    pub r0: VarId,
    pub r1: VarId,
    pub s12: VarId,
    pub q: Vec<VarId>,
    pub u: Vec<VarRef>,
    pub g: Vec<VarRef>,
    pub b: Option<VarId>,
}

/// Factor relating `G_i` to `Q_i` under the Round-Robin substitution:
/// `G_i = (N−1) e^{2α[τ_M + (N−2)(τ_M−η_m)]} Q_i`.
pub fn rr_g_factor(nodes: usize, alpha: f64, eta_m: f64, tau_m: f64) -> f64 {
    let nn = nodes as f64;
    (nn - 1.0) * (2.0 * alpha * (tau_m + (nn - 2.0) * (tau_m - eta_m))).exp()
}

fn declare_vars(
    layout: &mut DecisionLayout,
    theorem: Theorem,
    n: usize,
    dims: &[usize],
    disturbance: bool,
    alpha: f64,
    eta_m: f64,
    tau_m: f64,
) -> TheoremVars {
    let p = layout.add_symmetric("P", n, true);
    let s0 = layout.add_symmetric("S0", n, true);
    let s1 = layout.add_symmetric("S1", n, true);
    let r0 = layout.add_symmetric("R0", n, true);
    let r1 = layout.add_symmetric("R1", n, true);
    let s12 = layout.add_full("S12", n);
    let q: Vec<VarId> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| layout.add_symmetric(&format!("Q{}", i + 1), d, true))
        .collect();
    let (u, g) = match theorem {
        Theorem::Tod => {
            let u = dims
                .iter()
                .enumerate()
                .map(|(i, &d)| VarRef::new(layout.add_symmetric(&format!("U{}", i + 1), d, true)))
                .collect();
            let g = dims
                .iter()
                .enumerate()
                .map(|(i, &d)| VarRef::new(layout.add_symmetric(&format!("G{}", i + 1), d, true)))
                .collect();
            (u, g)
        }
        Theorem::RoundRobin => {
            let nn = dims.len() as f64;
            let gf = rr_g_factor(dims.len(), alpha, eta_m, tau_m);
            (
                q.iter().map(|&qi| VarRef::new(qi).scaled(1.0 / (nn - 1.0))).collect(),
                q.iter().map(|&qi| VarRef::new(qi).scaled(gf)).collect(),
            )
        }
    };
    let b = disturbance.then(|| layout.add_symmetric("b", 1, true));
    TheoremVars {
        p,
        s0,
        s1,
        r0,
        r1,
        s12,
        q,
        u,
        g,
        b,
    }
}

/// `rows × total` selector with an identity block at column `offset`.
fn selector(rows: usize, total: usize, offset: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(rows, total);
    for k in 0..rows {
        m[(k, offset + k)] = 1.0;
    }
    m
}

struct Ctx<'a> {
    cl: &'a ClosedLoopModel,
    vars: &'a TheoremVars,
    theorem: Theorem,
    alpha: f64,
    eta_m: f64,
    tau_m: f64,
    disturbance: bool,
}

/// Size of `ξ_i` (without the `H` rows).
pub fn xi_dim(n: usize, ny: usize, ni: usize, q: usize, disturbance: bool) -> usize {
    4 * n + (ny - ni) + if disturbance { q } else { 0 }
}

fn phi_constraint(layout: &DecisionLayout, vars: &TheoremVars, n: usize, vertex: usize) -> Constraint {
    let ea = selector(n, 2 * n, 0);
    let eb = selector(n, 2 * n, n);
    let mut bld = AffineBuilder::new(layout, 2 * n);
    bld.add_congruence(&ea, vars.r1);
    bld.add_congruence(&eb, vars.r1);
    bld.add_pair(&ea.transpose(), vars.s12, &eb);
    bld.finish(format!("Phi@v{vertex}"), Sense::PsdNonstrict, Some(vertex))
}

fn omega_constraint(layout: &DecisionLayout, ctx: &Ctx, i: usize, ni: usize, vertex: usize) -> Constraint {
    let nn = ctx.cl.nodes() as f64;
    let c = (1.0 - 2.0 * ctx.alpha * (ctx.tau_m - ctx.eta_m)) / (nn - 1.0);
    let ea = selector(ni, 2 * ni, 0);
    let eb = selector(ni, 2 * ni, ni);
    let q = VarRef::new(ctx.vars.q[i]);
    let mut bld = AffineBuilder::new(layout, 2 * ni);
    bld.add_congruence(&ea, q.scaled(-c));
    bld.add_congruence(&ea, ctx.vars.u[i]);
    bld.add_pair(&ea.transpose(), q, &eb);
    bld.add_congruence(&eb, q);
    bld.add_congruence(&eb, ctx.vars.g[i].scaled(-(-2.0 * ctx.alpha * ctx.tau_m).exp()));
    bld.finish(format!("Omega{}@v{vertex}", i + 1), Sense::NdStrict, Some(vertex))
}

fn main_block(layout: &DecisionLayout, ctx: &Ctx, i: usize, vertex: usize) -> Constraint {
    let cl = ctx.cl;
    let v = ctx.vars;
    let n = cl.n_cl();
    let dims = cl.node_dims();
    let ny = cl.ny();
    let q = if ctx.disturbance { cl.q() } else { 0 };
    let d = xi_dim(n, ny, dims[i], cl.q(), ctx.disturbance);
    let total = d + n;
    let (alpha, eta, tau) = (ctx.alpha, ctx.eta_m, ctx.tau_m);
    let span = tau - eta;

    let sel = |slot: usize| selector(n, total, slot * n);
    let f1 = sel(0);
    let f2 = &sel(0) - &sel(1);
    let fa = &sel(1) - &sel(2);
    let fb = &sel(2) - &sel(3);
    let eh = selector(n, total, d);

    // Error slots for j ≠ i, ascending; then ω.
    let mut e_offsets = Vec::new();
    let mut off = 4 * n;
    for (j, &nj) in dims.iter().enumerate() {
        if j == i {
            continue;
        }
        e_offsets.push((j, off, nj));
        off += nj;
    }
    let w_off = off;

    let mut xi = DMatrix::zeros(n, total);
    xi.view_mut((0, 0), (n, n)).copy_from(cl.a());
    xi.view_mut((0, 2 * n), (n, n)).copy_from(cl.a1());
    for &(j, o, nj) in &e_offsets {
        xi.view_mut((0, o), (n, nj)).copy_from(&cl.b_nodes()[j]);
    }
    if q > 0 {
        xi.view_mut((0, w_off), (n, q)).copy_from(cl.d());
    }
    let xi_t = xi.transpose();

    let mut bld = AffineBuilder::new(layout, total);

    // Σ_i: F1ᵀ P Ξ + Ξᵀ P F1
    bld.add_pair(&f1.transpose(), v.p, &xi);
    // Υ_i diagonal
    bld.add_congruence(&sel(0), v.s0);
    if alpha != 0.0 {
        bld.add_congruence(&sel(0), VarRef::new(v.p).scaled(2.0 * alpha));
    }
    let e_eta = (-2.0 * alpha * eta).exp();
    let e_tau = (-2.0 * alpha * tau).exp();
    bld.add_congruence(&sel(1), VarRef::new(v.s0).scaled(-e_eta));
    bld.add_congruence(&sel(1), VarRef::new(v.s1).scaled(e_eta));
    bld.add_congruence(&sel(3), VarRef::new(v.s1).scaled(-e_tau));
    for &(j, o, nj) in &e_offsets {
        let ej = selector(nj, total, o);
        bld.add_congruence(&ej, v.u[j].scaled(-1.0 / span));
        if alpha != 0.0 {
            bld.add_congruence(&ej, VarRef::new(v.q[j]).scaled(2.0 * alpha));
        }
    }
    if let Some(b) = v.b {
        for k in 0..q {
            let ew = selector(1, total, w_off + k);
            bld.add_congruence(&ew, VarRef::new(b).scaled(-1.0));
        }
    }
    // −F2ᵀ R0 F2 e^{−2αη_m}
    bld.add_congruence(&f2, VarRef::new(v.r0).scaled(-e_eta));
    // −Fᵀ Φ F e^{−2ατ_M}
    bld.add_congruence(&fa, VarRef::new(v.r1).scaled(-e_tau));
    bld.add_congruence(&fb, VarRef::new(v.r1).scaled(-e_tau));
    bld.add_pair(&fa.transpose(), VarRef::new(v.s12).scaled(-e_tau), &fb);

    // Off-diagonal Ξᵀ H and the −H corner.
    bld.add_pair(&xi_t, VarRef::new(v.r0).scaled(eta * eta), &eh);
    bld.add_pair(&xi_t, VarRef::new(v.r1).scaled(span * span), &eh);
    bld.add_congruence(&eh, VarRef::new(v.r0).scaled(-eta * eta));
    bld.add_congruence(&eh, VarRef::new(v.r1).scaled(-span * span));
    for (l, cl_l) in cl.c_nodes.iter().enumerate() {
        let c_eh = cl_l * &eh;
        bld.add_pair(&(&xi_t * cl_l.transpose()), v.g[l].scaled(span), &c_eh);
        bld.add_congruence(&c_eh, v.g[l].scaled(-span));
    }

    bld.finish(format!("Main{}@v{vertex}", i + 1), Sense::NdStrict, Some(vertex))
}

fn positivity_constraints(layout: &DecisionLayout) -> Vec<Constraint> {
    layout
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, s)| s.positive)
        .map(|(k, s)| {
            let mut bld = AffineBuilder::new(layout, s.dim);
            bld.add_congruence(&DMatrix::identity(s.dim, s.dim), VarId(k));
            bld.finish(format!("{}>0", s.name), Sense::PdStrict, None)
        })
        .collect()
}

fn check_inputs(cl: &ClosedLoopModel, net: &NetworkModel, alpha: f64) -> Result<()> {
    if cl.nodes() < 2 {
        return Err(NcsError::Unsupported(format!(
            "at least two sensor nodes are required, got {}",
            cl.nodes()
        )));
    }
    if !(net.tau_m > net.eta_m) || net.eta_m < 0.0 || !net.tau_m.is_finite() {
        return Err(NcsError::InvalidNetwork(format!(
            "need 0 <= eta_m < tau_M, got eta_m={}, tau_M={}",
            net.eta_m, net.tau_m
        )));
    }
    if !(alpha >= 0.0) || !alpha.is_finite() {
        return Err(NcsError::Validation(format!("decay rate must be >= 0, got {alpha}")));
    }
    Ok(())
}

fn assemble(
    theorem: Theorem,
    cl: &ClosedLoopModel,
    net: &NetworkModel,
    alpha: f64,
    disturbance: bool,
) -> Result<LmiProblem> {
    check_inputs(cl, net, alpha)?;
    let disturbance = disturbance && cl.q() > 0;
    let dims = cl.node_dims();
    let mut layout = DecisionLayout::new();
    let vars = declare_vars(
        &mut layout,
        theorem,
        cl.n_cl(),
        &dims,
        disturbance,
        alpha,
        net.eta_m,
        net.tau_m,
    );
    let per_vertex: Vec<LmiProblem> = cl
        .vertex_models()
        .iter()
        .enumerate()
        .map(|(vi, vcl)| {
            let ctx = Ctx {
                cl: vcl,
                vars: &vars,
                theorem,
                alpha,
                eta_m: net.eta_m,
                tau_m: net.tau_m,
                disturbance,
            };
            let mut cons = Vec::new();
            if ctx.theorem == Theorem::Tod {
                for (i, &ni) in dims.iter().enumerate() {
                    cons.push(omega_constraint(&layout, &ctx, i, ni, vi));
                }
            }
            cons.push(phi_constraint(&layout, &vars, vcl.n_cl(), vi));
            for i in 0..dims.len() {
                cons.push(main_block(&layout, &ctx, i, vi));
            }
            cons.extend(positivity_constraints(&layout));
            LmiProblem {
                layout: layout.clone(),
                constraints: cons,
                params: Some(LmiParams {
                    theorem,
                    alpha,
                    eta_m: net.eta_m,
                    tau_m: net.tau_m,
                    node_dims: dims.clone(),
                    q: if disturbance { cl.q() } else { 0 },
                    n_cl: cl.n_cl(),
                    disturbance,
                    vertices: 1,
                }),
            }
        })
        .collect();
    expand_polytopic(per_vertex)
}

/// TOD conditions for general `N`: `Ω_i < 0`, `Φ ≥ 0`, the main blocks and
/// positivity of every declared variable, for each polytope vertex.
pub fn assemble_theorem1(
    cl: &ClosedLoopModel,
    net: &NetworkModel,
    alpha: f64,
    disturbance: bool,
) -> Result<LmiProblem> {
    assemble(Theorem::Tod, cl, net, alpha, disturbance)
}

/// Round-Robin conditions: `U_i = Q_i/(N−1)` and `G_i` tied to `Q_i`, no `Ω_i`.
pub fn assemble_theorem2(
    cl: &ClosedLoopModel,
    net: &NetworkModel,
    alpha: f64,
    disturbance: bool,
) -> Result<LmiProblem> {
    assemble(Theorem::RoundRobin, cl, net, alpha, disturbance)
}

pub fn assemble_theorem(
    theorem: Theorem,
    cl: &ClosedLoopModel,
    net: &NetworkModel,
    alpha: f64,
    disturbance: bool,
) -> Result<LmiProblem> {
    assemble(theorem, cl, net, alpha, disturbance)
}

/// Merges per-vertex problems sharing one decision layout into a single
/// problem. Vertex-specific constraints are concatenated in vertex order
/// (relabelled to their position), vertex-independent ones are kept once.
pub fn expand_polytopic(problems: Vec<LmiProblem>) -> Result<LmiProblem> {
    let mut iter = problems.into_iter();
    let first = iter
        .next()
        .ok_or_else(|| NcsError::LayoutMismatch("no vertex problems given".into()))?;
    let layout = first.layout.clone();
    let mut params = first.params.clone();
    let mut shared: Vec<Constraint> = Vec::new();
    let mut specific: Vec<Constraint> = Vec::new();
    let absorb = |p: LmiProblem, vi: usize, specific: &mut Vec<Constraint>, shared: &mut Vec<Constraint>| {
        for mut c in p.constraints {
            match c.vertex {
                Some(_) => {
                    c.vertex = Some(vi);
                    if let Some(pos) = c.label.rfind("@v") {
                        c.label.truncate(pos);
                    }
                    c.label = format!("{}@v{vi}", c.label);
                    specific.push(c);
                }
                None if vi == 0 => shared.push(c),
                None => {}
            }
        }
    };
    absorb(first, 0, &mut specific, &mut shared);
    let mut count = 1;
    for (k, p) in iter.enumerate() {
        if p.layout != layout {
            return Err(NcsError::LayoutMismatch(format!(
                "vertex {} declares a different decision layout",
                k + 2
            )));
        }
        absorb(p, k + 1, &mut specific, &mut shared);
        count += 1;
    }
    if let Some(pm) = params.as_mut() {
        pm.vertices = count;
    }
    specific.extend(shared);
    Ok(LmiProblem {
        layout,
        constraints: specific,
        params,
    })
}
