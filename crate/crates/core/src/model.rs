//! Plant, controller and network descriptions, and the closed-loop hybrid
//! model built from them.
//!
//! The closed loop is written in the delayed-reset form
//!
//! ```text
//! ẋ(t) = A x(t) + A1 x(s_k) + Σ_{i ≠ i*_k} B_i e_i(t_k) + D ω(t),   t ∈ [t_k, t_{k+1})
//! ```
//!
//! where `s_k = t_k − η_k` is the sampling instant of the update that arrives
//! at `t_k`. Static output feedback gives `A1 = B K C`, `B_i = B K_i`. A dynamic
//! controller is absorbed into an augmented state `[x; x_c]`, after which the
//! same structure holds with the augmented matrices.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result};
use crate::linalg::{hstack, vstack};

/// One vertex of a polytopic plant.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantVertex {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
}

/// Continuous LTI plant `ẋ = Ax + Bu + Dω` with the output split across
/// `N` sensor nodes, `y_i = C_i x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub outputs: Vec<DMatrix<f64>>,
    /// Polytope vertices; `None` for a certain plant.
    pub vertices: Option<Vec<PlantVertex>>,
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, d: DMatrix<f64>, outputs: Vec<DMatrix<f64>>) -> Result<Self> {
        let plant = PlantModel {
            a,
            b,
            d,
            outputs,
            vertices: None,
        };
        plant.validate()?;
        Ok(plant)
    }

    /// Polytopic plant. The first vertex doubles as the nominal model.
    pub fn polytopic(vertices: Vec<PlantVertex>, outputs: Vec<DMatrix<f64>>) -> Result<Self> {
        let first = vertices
            .first()
            .ok_or_else(|| NcsError::Validation("polytope without vertices".into()))?
            .clone();
        let plant = PlantModel {
            a: first.a,
            b: first.b,
            d: first.d,
            outputs,
            vertices: Some(vertices),
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn q(&self) -> usize {
        self.d.ncols()
    }

    pub fn nodes(&self) -> usize {
        self.outputs.len()
    }

    pub fn node_dims(&self) -> Vec<usize> {
        self.outputs.iter().map(|c| c.nrows()).collect()
    }

    pub fn ny(&self) -> usize {
        self.node_dims().iter().sum()
    }

    /// Stacked output matrix `C = col{C_1, …, C_N}`.
    pub fn c(&self) -> DMatrix<f64> {
        let parts: Vec<&DMatrix<f64>> = self.outputs.iter().collect();
        vstack(&parts)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if self.a.ncols() != n {
            return Err(NcsError::dim("A", format!("{}x{} is not square", n, self.a.ncols())));
        }
        if self.b.nrows() != n {
            return Err(NcsError::dim("B", format!("expected {n} rows, got {}", self.b.nrows())));
        }
        if self.d.nrows() != n {
            return Err(NcsError::dim("D", format!("expected {n} rows, got {}", self.d.nrows())));
        }
        if self.outputs.is_empty() {
            return Err(NcsError::dim("C", "no sensor nodes"));
        }
        for (i, c) in self.outputs.iter().enumerate() {
            if c.ncols() != n {
                return Err(NcsError::dim(
                    format!("C_{}", i + 1),
                    format!("expected {n} columns, got {}", c.ncols()),
                ));
            }
            if c.nrows() == 0 {
                return Err(NcsError::dim(format!("C_{}", i + 1), "node with no outputs"));
            }
        }
        if let Some(vs) = &self.vertices {
            for (j, v) in vs.iter().enumerate() {
                if v.a.shape() != self.a.shape() || v.b.shape() != self.b.shape() || v.d.shape() != self.d.shape() {
                    return Err(NcsError::dim(
                        format!("vertex {}", j + 1),
                        "vertex matrices differ in shape from the first vertex",
                    ));
                }
            }
        }
        Ok(())
    }

    fn vertex_list(&self) -> Vec<PlantVertex> {
        match &self.vertices {
            Some(vs) => vs.clone(),
            None => vec![PlantVertex {
                a: self.a.clone(),
                b: self.b.clone(),
                d: self.d.clone(),
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ControllerModel {
    /// `u = Σ K_i ŷ_i`, with `K_i` of size `m × n_i`.
    Static { gains: Vec<DMatrix<f64>> },
    /// `ẋ_c = A_c x_c + B_c ŷ`, `u = C_c x_c + D_c ŷ`.
    Dynamic {
        ac: DMatrix<f64>,
        bc: DMatrix<f64>,
        cc: DMatrix<f64>,
        dc: DMatrix<f64>,
    },
}

/// Delay and span bounds of the network: `η_m ≤ η_k ≤ MAD` and
/// `t_{k+1} − t_k + η_k ≤ τ_M`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub eta_m: f64,
    pub mad: f64,
    pub tau_m: f64,
    pub nodes: usize,
}

impl NetworkModel {
    pub fn new(eta_m: f64, mad: f64, tau_m: f64, nodes: usize) -> Result<Self> {
        let net = NetworkModel {
            eta_m,
            mad,
            tau_m,
            nodes,
        };
        net.validate()?;
        Ok(net)
    }

    /// Bounds for an LMI probe where only `η_m` and `τ_M` matter.
    pub fn for_span(eta_m: f64, tau_m: f64, nodes: usize) -> Result<Self> {
        Self::new(eta_m, eta_m, tau_m, nodes)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.eta_m.is_finite()
            && self.mad.is_finite()
            && self.tau_m.is_finite()
            && self.eta_m >= 0.0
            && self.eta_m <= self.mad
            && self.mad < self.tau_m;
        if !ok {
            return Err(NcsError::InvalidNetwork(format!(
                "need 0 <= eta_m <= MAD < tau_M, got eta_m={}, MAD={}, tau_M={}",
                self.eta_m, self.mad, self.tau_m
            )));
        }
        if self.nodes == 0 {
            return Err(NcsError::InvalidNetwork("no sensor nodes".into()));
        }
        Ok(())
    }

    pub fn mati(&self) -> f64 {
        self.tau_m - self.mad
    }
}

/// Matrices of one (vertex of the) closed loop.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopMatrices {
    pub a: DMatrix<f64>,
    pub a1: DMatrix<f64>,
    /// `B_i`, one `n_cl × n_i` block per node.
    pub b_nodes: Vec<DMatrix<f64>>,
    pub d: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopModel {
    pub nominal: LoopMatrices,
    /// Output selectors `C_i` acting on the closed-loop state.
    pub c_nodes: Vec<DMatrix<f64>>,
    /// Per-vertex matrices; empty for a certain plant.
    pub vertices: Vec<LoopMatrices>,
}

impl ClosedLoopModel {
    pub fn n_cl(&self) -> usize {
        self.nominal.a.nrows()
    }

    pub fn q(&self) -> usize {
        self.nominal.d.ncols()
    }

    pub fn nodes(&self) -> usize {
        self.c_nodes.len()
    }

    pub fn node_dims(&self) -> Vec<usize> {
        self.c_nodes.iter().map(|c| c.nrows()).collect()
    }

    pub fn ny(&self) -> usize {
        self.node_dims().iter().sum()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.nominal.a
    }

    pub fn a1(&self) -> &DMatrix<f64> {
        &self.nominal.a1
    }

    pub fn b_nodes(&self) -> &[DMatrix<f64>] {
        &self.nominal.b_nodes
    }

    pub fn d(&self) -> &DMatrix<f64> {
        &self.nominal.d
    }

    pub fn c(&self) -> DMatrix<f64> {
        let parts: Vec<&DMatrix<f64>> = self.c_nodes.iter().collect();
        vstack(&parts)
    }

    /// One model per polytope vertex; a singleton for a certain plant.
    /// Equal vertices are kept as separate entries.
    pub fn vertex_models(&self) -> Vec<ClosedLoopModel> {
        if self.vertices.is_empty() {
            return vec![self.clone()];
        }
        self.vertices
            .iter()
            .map(|v| ClosedLoopModel {
                nominal: v.clone(),
                c_nodes: self.c_nodes.clone(),
                vertices: Vec::new(),
            })
            .collect()
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len().max(1)
    }
}

/// Free-function form of [`ClosedLoopModel::vertex_models`].
pub fn vertex_models(cl: &ClosedLoopModel) -> Vec<ClosedLoopModel> {
    cl.vertex_models()
}

fn split_columns(m: &DMatrix<f64>, dims: &[usize]) -> Vec<DMatrix<f64>> {
    let mut out = Vec::with_capacity(dims.len());
    let mut c = 0;
    for &d in dims {
        out.push(m.columns(c, d).into_owned());
        c += d;
    }
    out
}

pub fn build_static_closed_loop(plant: &PlantModel, ctrl: &ControllerModel) -> Result<ClosedLoopModel> {
    plant.validate()?;
    let gains = match ctrl {
        ControllerModel::Static { gains } => gains,
        ControllerModel::Dynamic { .. } => {
            return Err(NcsError::Unsupported(
                "static builder called with a dynamic controller".into(),
            ))
        }
    };
    if gains.len() != plant.nodes() {
        return Err(NcsError::dim(
            "K",
            format!("{} gain blocks for {} sensor nodes", gains.len(), plant.nodes()),
        ));
    }
    for (i, (k, c)) in gains.iter().zip(&plant.outputs).enumerate() {
        if k.nrows() != plant.m() || k.ncols() != c.nrows() {
            return Err(NcsError::dim(
                format!("K_{}", i + 1),
                format!("expected {}x{}, got {}x{}", plant.m(), c.nrows(), k.nrows(), k.ncols()),
            ));
        }
    }
    let k_parts: Vec<&DMatrix<f64>> = gains.iter().collect();
    let k = hstack(&k_parts);
    let c = plant.c();

    let build = |v: &PlantVertex| LoopMatrices {
        a: v.a.clone(),
        a1: &v.b * &k * &c,
        b_nodes: gains.iter().map(|ki| &v.b * ki).collect(),
        d: v.d.clone(),
    };
    let verts = plant.vertex_list();
    Ok(ClosedLoopModel {
        nominal: build(&verts[0]),
        c_nodes: plant.outputs.clone(),
        vertices: if plant.vertices.is_some() {
            verts.iter().map(build).collect()
        } else {
            Vec::new()
        },
    })
}

/// Augments the plant with a dynamic controller. The state becomes
/// `[x; x_c]`; `B_i` are the node columns of `[B D_c; B_c]`, `C_i = [C_i 0]`,
/// so `A1 = [[B D_c C, 0], [B_c C, 0]]`.
pub fn build_dynamic_closed_loop(plant: &PlantModel, ctrl: &ControllerModel) -> Result<ClosedLoopModel> {
    plant.validate()?;
    let (ac, bc, cc, dc) = match ctrl {
        ControllerModel::Dynamic { ac, bc, cc, dc } => (ac, bc, cc, dc),
        ControllerModel::Static { .. } => {
            return Err(NcsError::Unsupported(
                "dynamic builder called with a static controller".into(),
            ))
        }
    };
    let n = plant.n();
    let nc = ac.nrows();
    let ny = plant.ny();
    let m = plant.m();
    if nc == 0 || ac.ncols() != nc {
        return Err(NcsError::dim(
            "A_c",
            format!("expected nonempty square, got {}x{}", ac.nrows(), ac.ncols()),
        ));
    }
    if bc.shape() != (nc, ny) {
        return Err(NcsError::dim(
            "B_c",
            format!("expected {nc}x{ny}, got {}x{}", bc.nrows(), bc.ncols()),
        ));
    }
    if cc.shape() != (m, nc) {
        return Err(NcsError::dim(
            "C_c",
            format!("expected {m}x{nc}, got {}x{}", cc.nrows(), cc.ncols()),
        ));
    }
    if dc.shape() != (m, ny) {
        return Err(NcsError::dim(
            "D_c",
            format!("expected {m}x{ny}, got {}x{}", dc.nrows(), dc.ncols()),
        ));
    }
    let c = plant.c();
    let dims = plant.node_dims();
    let q = plant.q();

    let build = |v: &PlantVertex| {
        let top = hstack(&[&v.a, &(&v.b * cc)]);
        let bottom = hstack(&[&DMatrix::zeros(nc, n), ac]);
        let a_bar = vstack(&[&top, &bottom]);
        let b_bar = vstack(&[&(&v.b * dc), bc]);
        let c_bar = hstack(&[&c, &DMatrix::zeros(ny, nc)]);
        let a1_bar = &b_bar * &c_bar;
        let d_bar = vstack(&[&v.d, &DMatrix::zeros(nc, q)]);
        LoopMatrices {
            a: a_bar,
            a1: a1_bar,
            b_nodes: split_columns(&b_bar, &dims),
            d: d_bar,
        }
    };
    let c_nodes = plant
        .outputs
        .iter()
        .map(|ci| hstack(&[ci, &DMatrix::zeros(ci.nrows(), nc)]))
        .collect();
    let verts = plant.vertex_list();
    Ok(ClosedLoopModel {
        nominal: build(&verts[0]),
        c_nodes,
        vertices: if plant.vertices.is_some() {
            verts.iter().map(build).collect()
        } else {
            Vec::new()
        },
    })
}

/// Dispatches on the controller variant.
pub fn build_closed_loop(plant: &PlantModel, ctrl: &ControllerModel) -> Result<ClosedLoopModel> {
    match ctrl {
        ControllerModel::Static { .. } => build_static_closed_loop(plant, ctrl),
        ControllerModel::Dynamic { .. } => build_dynamic_closed_loop(plant, ctrl),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_plant(a: f64, b: f64) -> PlantModel {
        PlantModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::zeros(1, 0),
            vec![DMatrix::identity(1, 1)],
        )
        .unwrap()
    }

    #[test]
    fn zero_input_matrix_gives_zero_coupling() {
        let plant = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 0),
            vec![
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            ],
        )
        .unwrap();
        let ctrl = ControllerModel::Static {
            gains: vec![DMatrix::from_element(1, 1, 3.0), DMatrix::from_element(1, 1, -2.0)],
        };
        let cl = build_static_closed_loop(&plant, &ctrl).unwrap();
        assert_eq!(cl.a1(), &DMatrix::zeros(2, 2));
        assert!(cl.b_nodes().iter().all(|b| b.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn single_identity_node_gives_scaled_input() {
        let b = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let plant = PlantModel::new(
            DMatrix::zeros(2, 2),
            b.clone(),
            DMatrix::zeros(2, 0),
            vec![DMatrix::identity(2, 2)],
        )
        .unwrap();
        let k = 1.7;
        let ctrl = ControllerModel::Static {
            gains: vec![DMatrix::identity(2, 2) * k],
        };
        let cl = build_static_closed_loop(&plant, &ctrl).unwrap();
        assert!((cl.a1() - &b * k).abs().max() < 1e-15);
    }

    #[test]
    fn gain_shape_error_names_block() {
        let plant = scalar_plant(1.0, 1.0);
        let ctrl = ControllerModel::Static {
            gains: vec![DMatrix::zeros(1, 2)],
        };
        let err = build_static_closed_loop(&plant, &ctrl).unwrap_err().to_string();
        assert!(err.contains("K_1"), "{err}");
    }

    #[test]
    fn output_column_mismatch_rejected() {
        let err = PlantModel::new(
            DMatrix::identity(2, 2),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(2, 0),
            vec![DMatrix::zeros(1, 3)],
        )
        .unwrap_err()
        .to_string();
        assert!(err.contains("C_1"), "{err}");
    }

    #[test]
    fn zero_dynamic_controller() {
        let a = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
        let plant = PlantModel::new(
            a.clone(),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(2, 0),
            vec![
                DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
                DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
            ],
        )
        .unwrap();
        let ctrl = ControllerModel::Dynamic {
            ac: DMatrix::zeros(1, 1),
            bc: DMatrix::zeros(1, 2),
            cc: DMatrix::zeros(1, 1),
            dc: DMatrix::zeros(1, 2),
        };
        let cl = build_dynamic_closed_loop(&plant, &ctrl).unwrap();
        assert_eq!(cl.n_cl(), 3);
        assert_eq!(cl.a().view((0, 0), (2, 2)), a.view((0, 0), (2, 2)));
        assert!(cl.a().row(2).iter().all(|v| *v == 0.0));
        assert!(cl.a1().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn network_bounds() {
        assert!(NetworkModel::new(0.0, 0.01, 0.02, 2).is_ok());
        assert!(NetworkModel::new(0.02, 0.01, 0.03, 2).is_err());
        assert!(NetworkModel::new(0.0, 0.03, 0.03, 2).is_err());
        assert!(NetworkModel::new(-0.1, 0.0, 0.03, 2).is_err());
        let net = NetworkModel::new(0.0, 0.01, 0.03, 2).unwrap();
        assert!((net.mati() - 0.02).abs() < 1e-15);
    }
}
