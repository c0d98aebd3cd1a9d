use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::layout::{DecisionLayout, VarId, VarKind};
use crate::linalg::{min_eigenvalue, norm_inf, symmetrize};

/// Required sign of a constraint matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `M(x) ⪰ 0`
    PsdNonstrict,
    /// `M(x) ≻ 0`
    PdStrict,
    /// `M(x) ≺ 0`
    NdStrict,
}

impl Sense {
    /// Sign applied to `M(x)` so that a positive smallest eigenvalue always
    /// means "satisfied".
    pub fn sign(self) -> f64 {
        match self {
            Sense::NdStrict => -1.0,
            _ => 1.0,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Sense::PsdNonstrict => "psd",
            Sense::PdStrict => "pd",
            Sense::NdStrict => "nd",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s {
            "psd" => Some(Sense::PsdNonstrict),
            "pd" => Some(Sense::PdStrict),
            "nd" => Some(Sense::NdStrict),
            _ => None,
        }
    }
}

/// Relative strictness margin: strict constraints count as satisfied when
/// their sign-normalized smallest eigenvalue is at least
/// `STRICT_MARGIN * (1 + ‖M_0‖∞)`.
pub const STRICT_MARGIN: f64 = 1e-7;

/// Affine symmetric constraint `M(x) = M_0 + Σ_j x_j M_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub label: String,
    pub sense: Sense,
    /// Vertex this constraint belongs to; `None` for vertex-independent
    /// constraints (variable positivity).
    pub vertex: Option<usize>,
    pub constant: DMatrix<f64>,
    /// `(scalar index, coefficient)` pairs, sorted by index, zero blocks dropped.
    pub coeffs: Vec<(usize, DMatrix<f64>)>,
}

impl Constraint {
    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.constant.clone();
        for (j, c) in &self.coeffs {
            let v = x[*j];
            if v != 0.0 {
                m += c * v;
            }
        }
        m
    }

    /// `sign · M(x)`, positive definite exactly when the constraint holds strictly.
    pub fn normalized(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut m = self.eval(x);
        if self.sense == Sense::NdStrict {
            m.neg_mut();
        }
        m
    }

    pub fn epsilon(&self) -> f64 {
        STRICT_MARGIN * (1.0 + norm_inf(&self.constant))
    }

    pub fn is_homogeneous(&self) -> bool {
        self.constant.iter().all(|v| *v == 0.0)
    }
}

/// Which theorem a problem encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Theorem {
    /// TOD protocol, general N, with free `U_i`, `G_i`.
    Tod,
    /// Round-Robin for N ≥ 2 (and TOD for N = 2) with `U_i`, `G_i`
    /// eliminated in favour of `Q_i`.
    RoundRobin,
}

impl Theorem {
    pub fn tag(self) -> &'static str {
        match self {
            Theorem::Tod => "t1",
            Theorem::RoundRobin => "t2",
        }
    }

    pub fn from_tag(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "t1" | "tod" | "t1-tod" => Some(Theorem::Tod),
            "t2" | "rr" | "t2-rr" | "t2-rr/tod" => Some(Theorem::RoundRobin),
            _ => None,
        }
    }

    pub fn title(self) -> &'static str {
        match self {
            Theorem::Tod => "T1 (TOD)",
            Theorem::RoundRobin => "T2 (TOD/RR)",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LmiParams {
    pub theorem: Theorem,
    pub alpha: f64,
    pub eta_m: f64,
    pub tau_m: f64,
    pub node_dims: Vec<usize>,
    pub q: usize,
    pub n_cl: usize,
    pub disturbance: bool,
    pub vertices: usize,
}

impl LmiParams {
    pub fn nodes(&self) -> usize {
        self.node_dims.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmiProblem {
    pub layout: DecisionLayout,
    pub constraints: Vec<Constraint>,
    pub params: Option<LmiParams>,
}

impl LmiProblem {
    pub fn is_homogeneous(&self) -> bool {
        self.constraints.iter().all(Constraint::is_homogeneous)
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Vec<(String, f64)> {
        evaluate_constraints(self, x)
    }
}

/// Smallest eigenvalue of every sign-normalized constraint at `x`; a positive
/// value means the constraint is satisfied.
pub fn evaluate_constraints(p: &LmiProblem, x: &DVector<f64>) -> Vec<(String, f64)> {
    p.constraints
        .iter()
        .map(|c| (c.label.clone(), min_eigenvalue(&c.normalized(x))))
        .collect()
}

/// A (scaled) reference to a matrix variable, used to substitute one variable
/// by a multiple of another.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarRef {
    pub id: VarId,
    pub scale: f64,
}

impl VarRef {
    pub fn new(id: VarId) -> Self {
        VarRef { id, scale: 1.0 }
    }

    pub fn scaled(self, s: f64) -> Self {
        VarRef {
            id: self.id,
            scale: self.scale * s,
        }
    }
}

impl From<VarId> for VarRef {
    fn from(id: VarId) -> Self {
        VarRef::new(id)
    }
}

/// Accumulates an affine matrix from terms of the form `s · L V R`.
pub struct AffineBuilder<'a> {
    layout: &'a DecisionLayout,
    dim: usize,
    constant: DMatrix<f64>,
    coeffs: BTreeMap<usize, DMatrix<f64>>,
}

impl<'a> AffineBuilder<'a> {
    pub fn new(layout: &'a DecisionLayout, dim: usize) -> Self {
        AffineBuilder {
            layout,
            dim,
            constant: DMatrix::zeros(dim, dim),
            coeffs: BTreeMap::new(),
        }
    }

    pub fn add_constant(&mut self, m: &DMatrix<f64>) {
        self.constant += m;
    }

    fn coeff(&mut self, j: usize) -> &mut DMatrix<f64> {
        let dim = self.dim;
        self.coeffs.entry(j).or_insert_with(|| DMatrix::zeros(dim, dim))
    }

    /// Adds `s · L V R` with `L: dim×k`, `V: k×k`, `R: k×dim`.
    pub fn add(&mut self, l: &DMatrix<f64>, var: impl Into<VarRef>, r: &DMatrix<f64>) {
        let var = var.into();
        let spec = self.layout.var(var.id).clone();
        debug_assert_eq!(l.ncols(), spec.dim);
        debug_assert_eq!(r.nrows(), spec.dim);
        for k in 0..spec.scalar_count() {
            let (p, q) = spec.position(k);
            let mut term = l.column(p) * r.row(q);
            if spec.kind == VarKind::Symmetric && p != q {
                term += l.column(q) * r.row(p);
            }
            if term.iter().all(|v| *v == 0.0) {
                continue;
            }
            *self.coeff(spec.offset + k) += term * var.scale;
        }
    }

    /// Adds `s · Lᵀ V L`.
    pub fn add_congruence(&mut self, l: &DMatrix<f64>, var: impl Into<VarRef>) {
        self.add(&l.transpose(), var, l);
    }

    pub fn finish(self, label: impl Into<String>, sense: Sense, vertex: Option<usize>) -> Constraint {
        let mut constant = self.constant;
        symmetrize(&mut constant);
        let coeffs = self
            .coeffs
            .into_iter()
            .filter_map(|(j, mut c)| {
                symmetrize(&mut c);
                if c.iter().all(|v| *v == 0.0) {
                    None
                } else {
                    Some((j, c))
                }
            })
            .collect();
        Constraint {
            label: label.into(),
            sense,
            vertex,
            constant,
            coeffs,
        }
    }
}

impl<'a> AffineBuilder<'a> {
    /// Adds `s · L Vᵀ R`.
    fn add_transposed(&mut self, l: &DMatrix<f64>, var: VarRef, r: &DMatrix<f64>) {
        let spec = self.layout.var(var.id).clone();
        if spec.kind == VarKind::Symmetric {
            self.add(l, var, r);
            return;
        }
        for k in 0..spec.scalar_count() {
            let (p, q) = spec.position(k);
            let term = l.column(q) * r.row(p);
            if term.iter().all(|v| *v == 0.0) {
                continue;
            }
            *self.coeff(spec.offset + k) += term * var.scale;
        }
    }

    /// Adds `s · (L V R + (L V R)ᵀ)`; handles `Vᵀ` for full variables.
    pub fn add_pair(&mut self, l: &DMatrix<f64>, var: impl Into<VarRef>, r: &DMatrix<f64>) {
        let var = var.into();
        self.add(l, var, r);
        self.add_transposed(&r.transpose(), var, &l.transpose());
    }
}
