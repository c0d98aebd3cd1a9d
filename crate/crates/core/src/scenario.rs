//! Scenario files (TOML) and the bundled example systems.
//!
//! ```toml
//! name = "example"
//!
//! [plant]
//! a = [[...]]            # or per-vertex `a` under [[plant.vertices]]
//! b = [[...]]
//! d = [[...]]            # optional, no disturbance input when absent
//! e = [[...]]            # optional descriptor: A, B, D are premultiplied by E⁻¹
//! outputs = [[[...]], [[...]]]   # C_1, ..., C_N
//!
//! [controller]
//! kind = "static"        # gains = [K_1, ..., K_N]
//! # kind = "dynamic"     # ac, bc, cc, dc
//!
//! [network]
//! eta_m = 0.0
//! mad = 0.01             # optional, defaults to (eta_m + tau_m)/2
//! tau_m = 0.03
//!
//! [protocol]
//! kind = "tod"           # or "rr" with order = [1, 2, ...]
//!
//! [analysis]
//! alpha = 0.0
//! disturbance = false
//! delta = 0.0
//! ```

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NcsError, Result};
use crate::linalg::{from_rows, to_rows};
use crate::model::{build_closed_loop, ClosedLoopModel, ControllerModel, NetworkModel, PlantModel, PlantVertex};
use crate::sim::Protocol;

type Rows = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexSection {
    pub a: Rows,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Rows>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub e: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Rows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Rows>,
    pub outputs: Vec<Rows>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub vertices: Vec<VertexSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ControllerSection {
    Static { gains: Vec<Rows> },
    Dynamic { ac: Rows, bc: Rows, cc: Rows, dc: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub eta_m: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mad: Option<f64>,
    pub tau_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProtocolKind {
    #[default]
    Tod,
    Rr,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolSection {
    #[serde(default)]
    pub kind: ProtocolKind,
    /// Round-Robin node order, 1-based.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order: Option<Vec<usize>>,
    /// TOD weights `Q_i`; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<Rows>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default)]
    pub disturbance: bool,
    /// Bound on `‖ω‖∞` used by the ISS checks.
    #[serde(default)]
    pub delta: f64,
}

/// On-disk layout of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub description: String,
    pub plant: PlantSection,
    pub controller: ControllerSection,
    pub network: NetworkSection,
    #[serde(default)]
    pub protocol: ProtocolSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
}

/// Analysis parameters carried by a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalysisDefaults {
    pub alpha: f64,
    pub disturbance: bool,
    pub delta: f64,
}

/// A validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub plant: PlantModel,
    pub controller: ControllerModel,
    pub network: NetworkModel,
    pub protocol: Protocol,
    pub analysis: AnalysisDefaults,
    source: ScenarioFile,
}

pub const BUNDLED: [(&str, &str); 3] = [
    ("batch-reactor", include_str!("../scenarios/batch-reactor.toml")),
    ("pendulum-n2", include_str!("../scenarios/pendulum-n2.toml")),
    ("pendulum-n4", include_str!("../scenarios/pendulum-n4.toml")),
];

pub fn bundled_names() -> Vec<&'static str> {
    BUNDLED.iter().map(|(n, _)| *n).collect()
}

pub fn bundled_source(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

fn mat(rows: &Rows, what: &str) -> Result<DMatrix<f64>> {
    if rows.is_empty() {
        return Ok(DMatrix::zeros(0, 0));
    }
    let w = rows[0].len();
    if rows.iter().any(|r| r.len() != w) {
        return Err(NcsError::dim(what, "rows have different lengths"));
    }
    let m = from_rows(rows);
    if !m.iter().all(|v| v.is_finite()) {
        return Err(NcsError::NonFinite(what.to_string()));
    }
    Ok(m)
}

fn descriptor(e: &Option<Rows>, n: usize) -> Result<Option<DMatrix<f64>>> {
    let Some(rows) = e else { return Ok(None) };
    let e = mat(rows, "E")?;
    if e.shape() != (n, n) {
        return Err(NcsError::dim(
            "E",
            format!("expected {n}x{n}, got {}x{}", e.nrows(), e.ncols()),
        ));
    }
    e.try_inverse()
        .map(Some)
        .ok_or_else(|| NcsError::Validation("descriptor matrix E is singular".into()))
}

fn premultiply(einv: &Option<DMatrix<f64>>, m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    match einv {
        None => Ok(m),
        Some(ei) if m.nrows() == ei.ncols() => Ok(ei * m),
        Some(ei) => Err(NcsError::dim(
            what,
            format!("has {} rows, E is {}x{}", m.nrows(), ei.nrows(), ei.ncols()),
        )),
    }
}

impl ScenarioFile {
    fn plant(&self) -> Result<PlantModel> {
        let p = &self.plant;
        let outputs = p
            .outputs
            .iter()
            .enumerate()
            .map(|(i, c)| mat(c, &format!("C_{}", i + 1)))
            .collect::<Result<Vec<_>>>()?;
        let n = match (&p.a, p.vertices.first()) {
            (Some(a), _) => a.len(),
            (None, Some(v)) => v.a.len(),
            (None, None) => return Err(NcsError::Validation("plant needs `a` or `vertices`".into())),
        };
        let einv = descriptor(&p.e, n)?;
        let b_default = p.b.as_ref().map(|b| mat(b, "B")).transpose()?;
        let d_default = p.d.as_ref().map(|d| mat(d, "D")).transpose()?;
        let vertex = |a: &Rows, b: Option<&Rows>, d: Option<&Rows>, idx: Option<usize>| -> Result<PlantVertex> {
            let tag = |m: &str| match idx {
                Some(k) => format!("{m} (vertex {})", k + 1),
                None => m.to_string(),
            };
            let a = mat(a, &tag("A"))?;
            let b = match b {
                Some(b) => mat(b, &tag("B"))?,
                None => b_default
                    .clone()
                    .ok_or_else(|| NcsError::Validation(format!("{} is missing", tag("B"))))?,
            };
            let d = match d {
                Some(d) => mat(d, &tag("D"))?,
                None => d_default.clone().unwrap_or_else(|| DMatrix::zeros(a.nrows(), 0)),
            };
            Ok(PlantVertex {
                a: premultiply(&einv, a, &tag("A"))?,
                b: premultiply(&einv, b, &tag("B"))?,
                d: if d.ncols() == 0 {
                    DMatrix::zeros(n, 0)
                } else {
                    premultiply(&einv, d, &tag("D"))?
                },
            })
        };
        if p.vertices.is_empty() {
            let a = p.a.as_ref().expect("checked above");
            let v = vertex(a, None, None, None)?;
            PlantModel::new(v.a, v.b, v.d, outputs)
        } else {
            if p.a.is_some() {
                return Err(NcsError::Validation(
                    "give either plant `a` or `vertices`, not both".into(),
                ));
            }
            let verts = p
                .vertices
                .iter()
                .enumerate()
                .map(|(k, v)| vertex(&v.a, v.b.as_ref(), v.d.as_ref(), Some(k)))
                .collect::<Result<Vec<_>>>()?;
            PlantModel::polytopic(verts, outputs)
        }
    }

    fn controller(&self) -> Result<ControllerModel> {
        Ok(match &self.controller {
            ControllerSection::Static { gains } => ControllerModel::Static {
                gains: gains
                    .iter()
                    .enumerate()
                    .map(|(i, k)| mat(k, &format!("K_{}", i + 1)))
                    .collect::<Result<Vec<_>>>()?,
            },
            ControllerSection::Dynamic { ac, bc, cc, dc } => ControllerModel::Dynamic {
                ac: mat(ac, "A_c")?,
                bc: mat(bc, "B_c")?,
                cc: mat(cc, "C_c")?,
                dc: mat(dc, "D_c")?,
            },
        })
    }

    fn protocol(&self, plant: &PlantModel) -> Result<Protocol> {
        let nodes = plant.nodes();
        match self.protocol.kind {
            ProtocolKind::Tod => {
                let weights = match &self.protocol.weights {
                    None => plant.node_dims().iter().map(|&d| DMatrix::identity(d, d)).collect(),
                    Some(ws) => ws
                        .iter()
                        .enumerate()
                        .map(|(i, w)| mat(w, &format!("Q_{}", i + 1)))
                        .collect::<Result<Vec<_>>>()?,
                };
                Protocol::tod(weights, &plant.node_dims())
            }
            ProtocolKind::Rr => {
                let order = match &self.protocol.order {
                    None => (0..nodes).collect(),
                    Some(o) => {
                        if o.contains(&0) {
                            return Err(NcsError::Validation("round-robin order is 1-based".into()));
                        }
                        o.iter().map(|i| i - 1).collect()
                    }
                };
                Protocol::round_robin(order, nodes)
            }
        }
    }

    pub fn into_scenario(self) -> Result<Scenario> {
        let plant = self.plant()?;
        let controller = self.controller()?;
        build_closed_loop(&plant, &controller)?;
        let nw = &self.network;
        let mad = nw.mad.unwrap_or(0.5 * (nw.eta_m + nw.tau_m));
        let network = NetworkModel::new(nw.eta_m, mad, nw.tau_m, plant.nodes())?;
        let protocol = self.protocol(&plant)?;
        let an = &self.analysis;
        if !(an.alpha >= 0.0) || !an.alpha.is_finite() {
            return Err(NcsError::Validation(format!(
                "analysis.alpha must be >= 0, got {}",
                an.alpha
            )));
        }
        if !(an.delta >= 0.0) || !an.delta.is_finite() {
            return Err(NcsError::Validation(format!(
                "analysis.delta must be >= 0, got {}",
                an.delta
            )));
        }
        Ok(Scenario {
            name: self.name.clone(),
            description: self.description.clone(),
            plant,
            controller,
            network,
            protocol,
            analysis: AnalysisDefaults {
                alpha: an.alpha,
                disturbance: an.disturbance,
                delta: an.delta,
            },
            source: self,
        })
    }
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Parses and validates scenario text.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| NcsError::Parse {
        line: e.span().map(|s| line_of(text, s.start)).unwrap_or(0),
        msg: e.message().to_string(),
    })?;
    file.into_scenario()
}

/// Loads a bundled scenario by name, or a scenario file by path.
pub fn load_scenario(name_or_path: &str) -> Result<Scenario> {
    if let Some(src) = bundled_source(name_or_path) {
        return parse_scenario(src);
    }
    let path = Path::new(name_or_path);
    if !path.exists() {
        return Err(NcsError::UnknownScenario(format!(
            "`{name_or_path}` (not a file; bundled: {})",
            bundled_names().join(", ")
        )));
    }
    parse_scenario(&std::fs::read_to_string(path)?)
}

impl Scenario {
    pub fn closed_loop(&self) -> Result<ClosedLoopModel> {
        build_closed_loop(&self.plant, &self.controller)
    }

    pub fn file(&self) -> &ScenarioFile {
        &self.source
    }

    /// Canonical TOML form; parsing it yields the same scenario.
    pub fn to_toml(&self) -> String {
        canonical_toml(&self.source)
    }

    /// Short SHA-256 digest of the canonical form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

pub fn canonical_toml(file: &ScenarioFile) -> String {
    toml::to_string(file).expect("scenario data is always serializable")
}

/// Builds a scenario file from matrices, e.g. for programmatic use.
pub fn scenario_file_from_models(
    name: &str,
    plant: &PlantModel,
    controller: &ControllerModel,
    network: &NetworkModel,
) -> ScenarioFile {
    let outputs = plant.outputs.iter().map(to_rows).collect();
    let (a, b, d, vertices) = match &plant.vertices {
        None => (
            Some(to_rows(&plant.a)),
            Some(to_rows(&plant.b)),
            (plant.q() > 0).then(|| to_rows(&plant.d)),
            Vec::new(),
        ),
        Some(vs) => (
            None,
            None,
            None,
            vs.iter()
                .map(|v| VertexSection {
                    a: to_rows(&v.a),
                    b: Some(to_rows(&v.b)),
                    d: (v.d.ncols() > 0).then(|| to_rows(&v.d)),
                })
                .collect(),
        ),
    };
    let controller = match controller {
        ControllerModel::Static { gains } => ControllerSection::Static {
            gains: gains.iter().map(to_rows).collect(),
        },
        ControllerModel::Dynamic { ac, bc, cc, dc } => ControllerSection::Dynamic {
            ac: to_rows(ac),
            bc: to_rows(bc),
            cc: to_rows(cc),
            dc: to_rows(dc),
        },
    };
    ScenarioFile {
        name: name.to_string(),
        description: String::new(),
        plant: PlantSection {
            e: None,
            a,
            b,
            d,
            outputs,
            vertices,
        },
        controller,
        network: NetworkSection {
            eta_m: network.eta_m,
            mad: Some(network.mad),
            tau_m: network.tau_m,
        },
        protocol: ProtocolSection::default(),
        analysis: AnalysisSection::default(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_scenarios_are_canonical() {
        for (name, src) in BUNDLED {
            let sc = parse_scenario(src).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(sc.name, name);
            assert_eq!(sc.to_toml(), src, "{name} is not in canonical form");
        }
    }

    #[test]
    fn batch_reactor_shape() {
        let sc = load_scenario("batch-reactor").unwrap();
        assert_eq!(sc.plant.n(), 4);
        assert_eq!(sc.plant.node_dims(), vec![1, 1]);
        assert_eq!(sc.plant.a[(0, 0)], 1.380);
        assert_eq!(sc.plant.a[(0, 1)], -0.208);
        let cl = sc.closed_loop().unwrap();
        assert_eq!(cl.n_cl(), 6);
    }

    #[test]
    fn pendulum_n4_shape() {
        let sc = load_scenario("pendulum-n4").unwrap();
        assert_eq!(sc.plant.nodes(), 4);
        assert_eq!(sc.plant.vertices.as_ref().unwrap().len(), 4);
        for (i, c) in sc.plant.outputs.iter().enumerate() {
            assert_eq!(c, &DMatrix::<f64>::identity(4, 4).rows(i, 1).into_owned());
        }
        match &sc.controller {
            ControllerModel::Static { gains } => {
                let k: Vec<f64> = gains.iter().map(|g| g[(0, 0)]).collect();
                assert_eq!(k, vec![11.2062, -128.8597, 10.7823, -22.2629]);
            }
            _ => panic!("expected static gains"),
        }
    }

    #[test]
    fn output_split_mismatch_is_rejected() {
        let mut file: ScenarioFile = toml::from_str(BUNDLED[0].1).unwrap();
        file.plant.outputs[1] = vec![vec![0.0, 1.0, 0.0]];
        assert!(file.into_scenario().is_err());
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "name = \"x\"\n[plant]\na = [[1.0]\n";
        match parse_scenario(text) {
            Err(NcsError::Parse { line, .. }) => assert!(line >= 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }
}
