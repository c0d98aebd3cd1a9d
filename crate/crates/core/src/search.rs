//! Largest certified `τ_M` by bisection, and the reference table runs.

use web_time::Instant;

use serde::Serialize;

use crate::error::{NcsError, Result};
use crate::lmi::{assemble_theorem, LmiProblem, Theorem};
use crate::model::{ClosedLoopModel, NetworkModel};
use crate::scenario::load_scenario;
use crate::sdp::{solve_feasibility, CertificateWitness, SolveStatus, SolverOptions};

#[derive(Debug, Clone)]
pub struct SearchSpec {
    pub theorem: Theorem,
    pub eta_grid: Vec<f64>,
    pub alpha: f64,
    /// Absolute `τ_M` bracket; `None` uses `[η_m + 0.001, η_m + 0.1]` per row.
    pub bracket: Option<(f64, f64)>,
    pub tolerance: f64,
    pub max_expansions: usize,
    pub disturbance: bool,
    pub solver: SolverOptions,
}

impl SearchSpec {
    pub fn new(theorem: Theorem, eta_grid: Vec<f64>) -> Self {
        SearchSpec {
            theorem,
            eta_grid,
            alpha: 0.0,
            bracket: None,
            tolerance: 5e-4,
            max_expansions: 4,
            disturbance: false,
            solver: SolverOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Probe {
    pub tau: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub seconds: f64,
    pub min_margin: f64,
}

#[derive(Debug, Clone)]
pub struct SearchRow {
    pub eta_m: f64,
    pub theorem: Theorem,
    pub tau_max: f64,
    /// Some probe hit the iteration limit and was treated as infeasible.
    pub lower_bound_only: bool,
    pub trace: Vec<Probe>,
    pub witness: CertificateWitness,
    pub problem: LmiProblem,
    pub seconds: f64,
}

impl SearchRow {
    pub fn iterations(&self) -> usize {
        self.trace.iter().map(|p| p.iterations).sum()
    }

    pub fn status_tag(&self) -> &'static str {
        if self.lower_bound_only {
            "lower-bound-only"
        } else {
            "certified"
        }
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub rows: Vec<SearchRow>,
}

/// Assembles and solves one instance.
pub fn probe(
    cl: &ClosedLoopModel,
    theorem: Theorem,
    eta_m: f64,
    tau_m: f64,
    alpha: f64,
    disturbance: bool,
    opts: &SolverOptions,
) -> Result<(LmiProblem, CertificateWitness)> {
    let net = NetworkModel::for_span(eta_m, tau_m, cl.nodes())?;
    let p = assemble_theorem(theorem, cl, &net, alpha, disturbance)?;
    let w = solve_feasibility(&p, opts)?;
    Ok((p, w))
}

struct RowSearch<'a> {
    cl: &'a ClosedLoopModel,
    spec: &'a SearchSpec,
    eta: f64,
    trace: Vec<Probe>,
    best: Option<(f64, LmiProblem, CertificateWitness)>,
    limit_hit: bool,
}

impl RowSearch<'_> {
    fn run(&mut self, tau: f64) -> Result<bool> {
        let (p, w) = probe(
            self.cl,
            self.spec.theorem,
            self.eta,
            tau,
            self.spec.alpha,
            self.spec.disturbance,
            &self.spec.solver,
        )?;
        log::debug!(
            "eta_m={} tau_M={tau:.6} -> {} ({} it, {:.2}s)",
            self.eta,
            w.status,
            w.iterations,
            w.seconds
        );
        self.trace.push(Probe {
            tau,
            status: w.status,
            iterations: w.iterations,
            seconds: w.seconds,
            min_margin: w.min_margin(),
        });
        match w.status {
            SolveStatus::Feasible => {
                if self.best.as_ref().is_none_or(|(t, _, _)| tau > *t) {
                    self.best = Some((tau, p, w));
                }
                Ok(true)
            }
            SolveStatus::IterationLimit => {
                self.limit_hit = true;
                Ok(false)
            }
            SolveStatus::Infeasible => Ok(false),
        }
    }
}

/// Checks that feasible probes are downward closed in `τ_M`.
pub fn check_monotone(trace: &[Probe]) -> Result<()> {
    let lowest_infeasible = trace
        .iter()
        .filter(|p| p.status == SolveStatus::Infeasible)
        .map(|p| p.tau)
        .fold(f64::INFINITY, f64::min);
    if let Some(p) = trace
        .iter()
        .find(|p| p.status == SolveStatus::Feasible && p.tau > lowest_infeasible)
    {
        return Err(NcsError::SolverHealth(format!(
            "feasible at tau_M={} above infeasible tau_M={lowest_infeasible}",
            p.tau
        )));
    }
    Ok(())
}

/// Bisection for one `η_m`.
pub fn max_tau_row(cl: &ClosedLoopModel, spec: &SearchSpec, eta: f64) -> Result<SearchRow> {
    let start = Instant::now();
    if !(spec.tolerance > 0.0) {
        return Err(NcsError::Validation("bisection tolerance must be positive".into()));
    }
    let (mut lo, mut hi) = spec.bracket.unwrap_or((eta + 0.001, eta + 0.1));
    if !(lo < hi) || lo <= eta {
        return Err(NcsError::Bracket(format!(
            "need eta_m < tau_lo < tau_hi, got eta_m={eta}, [{lo}, {hi}]"
        )));
    }
    let mut rs = RowSearch {
        cl,
        spec,
        eta,
        trace: Vec::new(),
        best: None,
        limit_hit: false,
    };
    let mut expansions = 0;
    while !rs.run(lo)? {
        if expansions == spec.max_expansions {
            return Err(NcsError::NoCertificate(format!(
                "eta_m={eta}, lowest tested tau_M={lo}"
            )));
        }
        hi = lo;
        lo = eta + 0.25 * (lo - eta);
        expansions += 1;
    }
    while rs.run(hi)? {
        if expansions == spec.max_expansions {
            return Err(NcsError::Bracket(format!(
                "tau_M={hi} is still feasible and no expansion is left"
            )));
        }
        lo = hi;
        hi = eta + 2.0 * (hi - eta);
        expansions += 1;
    }
    while hi - lo > spec.tolerance {
        let mid = 0.5 * (lo + hi);
        if rs.run(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    rs.run(mid)?;
    check_monotone(&rs.trace)?;
    let (tau_max, problem, witness) = rs.best.take().expect("lower end is feasible");
    Ok(SearchRow {
        eta_m: eta,
        theorem: spec.theorem,
        tau_max,
        lower_bound_only: rs.limit_hit,
        trace: rs.trace,
        witness,
        problem,
        seconds: start.elapsed().as_secs_f64(),
    })
}

pub fn max_tau(cl: &ClosedLoopModel, spec: &SearchSpec) -> Result<SearchResult> {
    let rows = spec
        .eta_grid
        .iter()
        .map(|&eta| max_tau_row(cl, spec, eta))
        .collect::<Result<Vec<_>>>()?;
    Ok(SearchResult { rows })
}

/// Largest `α ∈ [lo, hi]` (to `tol`) for which the conditions hold.
pub fn max_alpha(
    cl: &ClosedLoopModel,
    theorem: Theorem,
    eta_m: f64,
    tau_m: f64,
    disturbance: bool,
    (lo, hi): (f64, f64),
    tol: f64,
    opts: &SolverOptions,
) -> Result<(f64, LmiProblem, CertificateWitness)> {
    let (p, w) = probe(cl, theorem, eta_m, tau_m, lo, disturbance, opts)?;
    if !w.is_feasible() {
        return Err(NcsError::NoCertificate(format!("alpha={lo} at tau_M={tau_m}")));
    }
    let mut best = (lo, p, w);
    let (p, w) = probe(cl, theorem, eta_m, tau_m, hi, disturbance, opts)?;
    if w.is_feasible() {
        return Ok((hi, p, w));
    }
    let (mut a, mut b) = (lo, hi);
    while b - a > tol {
        let mid = 0.5 * (a + b);
        let (p, w) = probe(cl, theorem, eta_m, tau_m, mid, disturbance, opts)?;
        if w.is_feasible() {
            a = mid;
            best = (mid, p, w);
        } else {
            b = mid;
        }
    }
    Ok(best)
}

/// Reference tables: scenario, `η_m` grid and published values per theorem.
#[derive(Debug, Clone)]
pub struct TableDef {
    pub id: &'static str,
    pub scenario: &'static str,
    pub eta_grid: Vec<f64>,
    pub published: Vec<(Theorem, Vec<f64>)>,
}

pub const TABLE_IDS: [&str; 3] = ["ex1-n2", "ex1-n4", "ex2"];

pub fn table_def(id: &str) -> Result<TableDef> {
    match id {
        "ex1-n2" => Ok(TableDef {
            id: "ex1-n2",
            scenario: "pendulum-n2",
            eta_grid: vec![0.0, 0.005, 0.01, 0.02, 0.04],
            published: vec![
                (Theorem::Tod, vec![0.014, 0.018, 0.021, 0.029, 0.044]),
                (Theorem::RoundRobin, vec![0.025, 0.028, 0.031, 0.036, 0.047]),
            ],
        }),
        "ex1-n4" => Ok(TableDef {
            id: "ex1-n4",
            scenario: "pendulum-n4",
            eta_grid: vec![0.0, 0.01],
            published: vec![
                (Theorem::Tod, vec![0.003, 0.012]),
                (Theorem::RoundRobin, vec![0.006, 0.015]),
            ],
        }),
        "ex2" => Ok(TableDef {
            id: "ex2",
            scenario: "batch-reactor",
            eta_grid: vec![0.0, 0.004, 0.01, 0.02, 0.03, 0.04],
            published: vec![
                (Theorem::Tod, vec![0.019, 0.022, 0.027, 0.034, 0.042, 0.050]),
                (Theorem::RoundRobin, vec![0.035, 0.037, 0.041, 0.047, 0.053, 0.059]),
            ],
        }),
        other => Err(NcsError::UnknownTable(other.to_string())),
    }
}

/// Published `τ_max` for a bundled scenario, theorem and `η_m`, if tabulated.
pub fn published_value(scenario: &str, theorem: Theorem, eta_m: f64) -> Option<f64> {
    TABLE_IDS.iter().filter_map(|id| table_def(id).ok()).find_map(|def| {
        if def.scenario != scenario {
            return None;
        }
        let col = def.eta_grid.iter().position(|e| (e - eta_m).abs() < 1e-12)?;
        def.published.iter().find(|(t, _)| *t == theorem).map(|(_, v)| v[col])
    })
}

/// Consecutive `η_m` pairs (sorted) where `τ_max` decreases.
pub fn eta_monotonicity_violations(rows: &[SearchRow]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.eta_m, r.tau_max)).collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    pts.windows(2)
        .filter(|w| w[1].1 < w[0].1)
        .map(|w| (w[0].0, w[1].0))
        .collect()
}

#[derive(Debug, Clone)]
pub struct TableReport {
    pub def: TableDef,
    /// One search result per theorem, in the order of `def.published`.
    pub results: Vec<(Theorem, SearchResult)>,
}

/// One CSV line of a search or table run.
#[derive(Debug, Clone, Serialize)]
pub struct CsvRow {
    pub eta_m: f64,
    pub theorem: &'static str,
    pub tau_max: f64,
    pub status: &'static str,
    pub published_value: Option<f64>,
    pub iterations: usize,
    pub seconds: f64,
}

pub fn csv_rows(result: &SearchResult, published: Option<&[f64]>) -> Vec<CsvRow> {
    result
        .rows
        .iter()
        .enumerate()
        .map(|(k, r)| CsvRow {
            eta_m: r.eta_m,
            theorem: r.theorem.tag(),
            tau_max: r.tau_max,
            status: r.status_tag(),
            published_value: published.and_then(|p| p.get(k).copied()),
            iterations: r.iterations(),
            seconds: r.seconds,
        })
        .collect()
}

impl TableReport {
    pub fn csv_rows(&self) -> Vec<CsvRow> {
        self.results
            .iter()
            .zip(&self.def.published)
            .flat_map(|((_, res), (_, pubv))| csv_rows(res, Some(pubv)))
            .collect()
    }

    /// Plain-text table: rows are methods, columns are `η_m`.
    pub fn format(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("{:<22}", "tau_M \\ eta_m"));
        for e in &self.def.eta_grid {
            out.push_str(&format!("{e:>9}"));
        }
        out.push('\n');
        for ((th, res), (_, pubv)) in self.results.iter().zip(&self.def.published) {
            out.push_str(&format!("{:<22}", th.title()));
            for r in &res.rows {
                out.push_str(&format!("{:>9.4}", r.tau_max));
            }
            out.push('\n');
            out.push_str(&format!("{:<22}", "  published"));
            for v in pubv {
                out.push_str(&format!("{v:>9.3}"));
            }
            out.push('\n');
        }
        out
    }
}

/// Runs both theorems over the grid of a reference table.
pub fn table_run(id: &str, solver: &SolverOptions) -> Result<TableReport> {
    let def = table_def(id)?;
    let sc = load_scenario(def.scenario)?;
    let cl = sc.closed_loop()?;
    let mut results = Vec::new();
    for (th, _) in &def.published {
        let mut spec = SearchSpec::new(*th, def.eta_grid.clone());
        spec.solver = solver.clone();
        results.push((*th, max_tau(&cl, &spec)?));
    }
    Ok(TableReport { def, results })
}
