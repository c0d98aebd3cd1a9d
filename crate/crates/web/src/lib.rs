//! wasm-bindgen front end for the demo page in `www/`.
//!
//! Every export returns a JSON string; errors come back as JS strings.

use nalgebra::DVector;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use ncs_core::lmi::Theorem;
use ncs_core::model::NetworkModel;
use ncs_core::scenario::{load_scenario, Scenario};
use ncs_core::sdp::SolverOptions;
use ncs_core::search::{max_tau_row, probe, published_value, SearchSpec};
use ncs_core::sim::{generate_timing, simulate_matrices, Disturbance, Protocol, SimInput, TimingPolicy};

const MAX_SAMPLES: usize = 2000;

#[derive(Serialize)]
struct SimOut {
    t: Vec<f64>,
    x: Vec<Vec<f64>>,
    active: Vec<usize>,
    updates: usize,
    final_norm: f64,
}

#[derive(Serialize)]
struct ProbeOut {
    feasible: bool,
    status: &'static str,
    min_margin: f64,
    iterations: usize,
    variables: usize,
    blocks: usize,
}

#[derive(Serialize)]
struct MaxTauOut {
    tau_max: f64,
    status: &'static str,
    published: Option<f64>,
    probes: Vec<(f64, &'static str)>,
}

fn scenario(name: &str) -> Result<Scenario, String> {
    load_scenario(name).map_err(|e| e.to_string())
}

fn theorem(tag: &str) -> Result<Theorem, String> {
    Theorem::from_tag(tag).ok_or_else(|| format!("unknown theorem {tag}"))
}

fn json<T: Serialize>(v: &T) -> Result<String, String> {
    serde_json::to_string(v).map_err(|e| e.to_string())
}

pub fn simulate_json(name: &str, protocol: &str, tau_m: f64, horizon: f64, seed: u64) -> Result<String, String> {
    let sc = scenario(name)?;
    let cl = sc.closed_loop().map_err(|e| e.to_string())?;
    let nodes = cl.nodes();
    let proto = match protocol {
        "tod" => match &sc.protocol {
            Protocol::Tod { weights } => Protocol::tod(weights.clone(), &cl.node_dims()),
            _ => Protocol::tod(
                cl.node_dims()
                    .iter()
                    .map(|&d| nalgebra::DMatrix::identity(d, d))
                    .collect(),
                &cl.node_dims(),
            ),
        },
        "rr" => Protocol::round_robin((0..nodes).collect(), nodes),
        other => return Err(format!("unknown protocol {other}")),
    }
    .map_err(|e| e.to_string())?;
    let eta = sc.network.eta_m.min(0.5 * tau_m);
    let net = NetworkModel::new(eta, 0.5 * (eta + tau_m), tau_m, nodes).map_err(|e| e.to_string())?;
    let timing = generate_timing(&net, &TimingPolicy::UniformRandom { seed }, horizon).map_err(|e| e.to_string())?;
    let omega = Disturbance::random(cl.q(), 0.0, 0.1, horizon, seed);
    let m = cl.vertex_models()[0].nominal.clone();
    let x0 = DVector::from_element(cl.n_cl(), 1.0);
    let tr = simulate_matrices(SimInput {
        matrices: &m,
        c_nodes: &cl.c_nodes,
        protocol: &proto,
        timing: &timing,
        omega: &omega,
        x0: &x0,
        tau_m,
        horizon,
    })
    .map_err(|e| e.to_string())?;
    let samples = tr.sample(horizon / MAX_SAMPLES as f64);
    json(&SimOut {
        t: samples.iter().map(|s| s.t).collect(),
        x: samples.iter().map(|s| s.x.iter().copied().collect()).collect(),
        active: samples.iter().map(|s| s.active + 1).collect(),
        updates: tr.segments.len(),
        final_norm: samples.last().map_or(0.0, |s| s.x.norm()),
    })
}

pub fn probe_json(name: &str, thm: &str, eta_m: f64, tau_m: f64) -> Result<String, String> {
    let sc = scenario(name)?;
    let cl = sc.closed_loop().map_err(|e| e.to_string())?;
    let (p, w) =
        probe(&cl, theorem(thm)?, eta_m, tau_m, 0.0, false, &SolverOptions::default()).map_err(|e| e.to_string())?;
    json(&ProbeOut {
        feasible: w.is_feasible(),
        status: w.status.as_str(),
        min_margin: w.min_margin(),
        iterations: w.iterations,
        variables: p.layout.len(),
        blocks: p.constraints.len(),
    })
}

pub fn max_tau_json(name: &str, thm: &str, eta_m: f64) -> Result<String, String> {
    let sc = scenario(name)?;
    let cl = sc.closed_loop().map_err(|e| e.to_string())?;
    let th = theorem(thm)?;
    let row = max_tau_row(&cl, &SearchSpec::new(th, vec![eta_m]), eta_m).map_err(|e| e.to_string())?;
    json(&MaxTauOut {
        tau_max: row.tau_max,
        status: row.status_tag(),
        published: published_value(&sc.name, th, eta_m),
        probes: row.trace.iter().map(|p| (p.tau, p.status.as_str())).collect(),
    })
}

/// Trajectory of the first polytope vertex from x0 = 1 under random timing.
#[wasm_bindgen]
pub fn simulate(scenario: &str, protocol: &str, tau_m: f64, horizon: f64, seed: u32) -> Result<String, JsValue> {
    simulate_json(scenario, protocol, tau_m, horizon, seed as u64).map_err(|e| JsValue::from_str(&e))
}

/// One feasibility solve of the stability conditions.
#[wasm_bindgen]
pub fn feasible(scenario: &str, theorem: &str, eta_m: f64, tau_m: f64) -> Result<String, JsValue> {
    probe_json(scenario, theorem, eta_m, tau_m).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn max_tau(scenario: &str, theorem: &str, eta_m: f64) -> Result<String, JsValue> {
    max_tau_json(scenario, theorem, eta_m).map_err(|e| JsValue::from_str(&e))
}
