use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ncs_core::lmi::{assemble_theorem, LmiProblem, Theorem};
use ncs_core::lyapunov::{verify_trajectory, FunctionalSpec, Variant, VerificationReport, VerifyOptions};
use ncs_core::model::{ClosedLoopModel, NetworkModel};
use ncs_core::scenario::{load_scenario, Scenario};
use ncs_core::sdp::{verify_witness, SolverOptions};
use ncs_core::sdpa::{export_sdpa, import_sdpa};
use ncs_core::search::{
    csv_rows, eta_monotonicity_violations, max_tau_row, published_value, table_def, SearchResult, SearchRow,
    SearchSpec, TableReport,
};
use ncs_core::sim::{generate_timing, simulate_matrices, Disturbance, Protocol, SimInput, TimingPolicy, Trajectory};

use crate::output::{header, resolve, write_csv, write_table, write_text, WitnessFile};
use crate::{CliError, ExportArgs, SearchArgs, SimulateArgs, SolverArgs, TableArgs, VerifyArgs};

pub struct Ctx {
    pub out_dir: Option<PathBuf>,
    pub pool: rayon::ThreadPool,
}

const TABLE_TOLERANCE: f64 = 0.002;

fn theorem(tag: &str) -> Result<Theorem, CliError> {
    Theorem::from_tag(tag).ok_or_else(|| CliError::Usage(format!("unknown theorem `{tag}` (expected t1 or t2)")))
}

fn solver_options(a: &SolverArgs) -> SolverOptions {
    log::info!("solver seed = {}", a.seed);
    SolverOptions {
        seed: a.seed,
        max_iter: a.max_iter,
        ..SolverOptions::default()
    }
}

fn witness_file(sc: &Scenario, row: &SearchRow, alpha: f64, disturbance: bool) -> WitnessFile {
    WitnessFile {
        scenario: sc.name.clone(),
        scenario_hash: sc.hash(),
        theorem: row.theorem.tag().to_string(),
        eta_m: row.eta_m,
        tau_m: row.tau_max,
        alpha,
        disturbance,
        status: row.witness.status.to_string(),
        min_margin: row.witness.min_margin(),
        x: row.witness.x.iter().copied().collect(),
    }
}

fn print_rows(rows: &[SearchRow]) {
    println!(
        "{:>8} {:>6} {:>10} {:>18} {:>6} {:>8}",
        "eta_m", "thm", "tau_max", "status", "iter", "seconds"
    );
    for r in rows {
        println!(
            "{:>8} {:>6} {:>10.5} {:>18} {:>6} {:>8.2}",
            r.eta_m,
            r.theorem.tag(),
            r.tau_max,
            r.status_tag(),
            r.iterations(),
            r.seconds
        );
    }
}

pub fn search(ctx: &Ctx, a: &SearchArgs) -> Result<(), CliError> {
    let sc = load_scenario(&a.scenario)?;
    let cl = sc.closed_loop()?;
    let th = theorem(&a.theorem)?;
    let etas = a.eta_m.clone().unwrap_or_else(|| vec![sc.network.eta_m]);
    let alpha = a.alpha.unwrap_or(sc.analysis.alpha);
    let disturbance = if a.no_disturbance {
        false
    } else {
        a.disturbance || sc.analysis.disturbance
    };
    let mut spec = SearchSpec::new(th, etas.clone());
    spec.alpha = alpha;
    spec.disturbance = disturbance;
    spec.tolerance = a.tol;
    spec.solver = solver_options(&a.solver);
    if let Some(b) = &a.bracket {
        spec.bracket = Some((b[0], b[1]));
    }
    let rows: Vec<SearchRow> = ctx.pool.install(|| {
        etas.par_iter()
            .map(|&e| max_tau_row(&cl, &spec, e))
            .collect::<Result<_, _>>()
    })?;
    print_rows(&rows);
    let bad = eta_monotonicity_violations(&rows);
    for (lo, hi) in &bad {
        println!("note: tau_max decreases between eta_m={lo} and eta_m={hi}");
    }
    let params = format!(
        "theorem={} eta_m={:?} alpha={alpha} disturbance={disturbance} tol={} seed={}",
        th.tag(),
        etas,
        a.tol,
        a.solver.seed
    );
    let hdr = header("search", &sc, &params);
    let published: Vec<f64> = rows
        .iter()
        .map(|r| published_value(&sc.name, th, r.eta_m).unwrap_or(f64::NAN))
        .collect();
    let result = SearchResult { rows };
    let mut csv = csv_rows(&result, Some(&published));
    for r in &mut csv {
        if r.published_value.is_some_and(f64::is_nan) {
            r.published_value = None;
        }
    }
    let path = resolve(&ctx.out_dir, &a.out, &format!("search_{}_{}.csv", sc.name, th.tag()));
    write_csv(&path, &hdr, &csv)?;
    println!("wrote {}", path.display());
    if let Some(dir) = &a.witness_dir {
        for r in &result.rows {
            let p = dir.join(format!("witness_{}_{}_eta{}.json", sc.name, th.tag(), r.eta_m));
            witness_file(&sc, r, alpha, disturbance).write(&p, &hdr)?;
            println!("wrote {}", p.display());
        }
    }
    Ok(())
}

pub fn table(ctx: &Ctx, a: &TableArgs) -> Result<(), CliError> {
    let def = table_def(&a.id)?;
    let sc = load_scenario(def.scenario)?;
    let cl = sc.closed_loop()?;
    let opts = solver_options(&a.solver);
    let jobs: Vec<(Theorem, f64)> = def
        .published
        .iter()
        .flat_map(|(th, _)| def.eta_grid.iter().map(move |&e| (*th, e)))
        .collect();
    let rows: Vec<SearchRow> = ctx.pool.install(|| {
        jobs.par_iter()
            .map(|&(th, e)| {
                let mut spec = SearchSpec::new(th, vec![e]);
                spec.solver = opts.clone();
                max_tau_row(&cl, &spec, e)
            })
            .collect::<Result<_, _>>()
    })?;
    let mut results = Vec::new();
    for (th, _) in &def.published {
        let rs: Vec<SearchRow> = rows.iter().filter(|r| r.theorem == *th).cloned().collect();
        results.push((*th, SearchResult { rows: rs }));
    }
    let report = TableReport { def, results };
    print!("{}", report.format());
    let hdr = header("table", &sc, &format!("id={} seed={}", a.id, a.solver.seed));
    let path = resolve(&ctx.out_dir, &a.out, &format!("table_{}.csv", a.id));
    write_csv(&path, &hdr, &report.csv_rows())?;
    println!("wrote {}", path.display());
    let mut failures = Vec::new();
    for row in report.csv_rows() {
        if let Some(p) = row.published_value {
            if (row.tau_max - p).abs() > TABLE_TOLERANCE {
                failures.push(format!(
                    "{} eta_m={}: {:.4} vs {p}",
                    row.theorem, row.eta_m, row.tau_max
                ));
            }
        }
    }
    for (_, res) in &report.results {
        for (lo, hi) in eta_monotonicity_violations(&res.rows) {
            failures.push(format!("tau_max decreases between eta_m={lo} and eta_m={hi}"));
        }
    }
    if failures.is_empty() {
        println!("PASS all cells within {TABLE_TOLERANCE} of the published values");
        Ok(())
    } else {
        Err(CliError::Fail(failures.join("; ")))
    }
}

fn parse_timing(s: &str) -> Result<TimingPolicy, CliError> {
    let bad = || CliError::Usage(format!("timing `{s}` (expected fixed:h,eta or random:seed)"));
    let (kind, rest) = s.split_once(':').ok_or_else(bad)?;
    match kind {
        "fixed" => {
            let (h, eta) = rest.split_once(',').ok_or_else(bad)?;
            Ok(TimingPolicy::Fixed {
                h: h.trim().parse().map_err(|_| bad())?,
                eta: eta.trim().parse().map_err(|_| bad())?,
            })
        }
        "random" => Ok(TimingPolicy::UniformRandom {
            seed: rest.trim().parse().map_err(|_| bad())?,
        }),
        _ => Err(bad()),
    }
}

fn protocol(
    kind: &str,
    sc: &Scenario,
    cl: &ClosedLoopModel,
    weights: Option<&[DMatrix<f64>]>,
) -> Result<Protocol, CliError> {
    let dims = cl.node_dims();
    let nodes = dims.len();
    match kind {
        "tod" => {
            let w = match (weights, &sc.protocol) {
                (Some(w), _) => w.to_vec(),
                (None, Protocol::Tod { weights }) => weights.clone(),
                (None, _) => dims.iter().map(|&d| DMatrix::identity(d, d)).collect(),
            };
            Ok(Protocol::tod(w, &dims)?)
        }
        "rr" => match &sc.protocol {
            Protocol::RoundRobin { order } => Ok(Protocol::round_robin(order.clone(), nodes)?),
            _ => Ok(Protocol::round_robin((0..nodes).collect(), nodes)?),
        },
        other => Err(CliError::Usage(format!(
            "unknown protocol `{other}` (expected tod or rr)"
        ))),
    }
}

/// Network with the given span, keeping the scenario's MAD when admissible.
fn network(sc: &Scenario, eta_m: f64, tau_m: f64, nodes: usize) -> Result<NetworkModel, CliError> {
    let mad = if sc.network.mad >= eta_m && sc.network.mad < tau_m {
        sc.network.mad
    } else {
        0.5 * (eta_m + tau_m)
    };
    Ok(NetworkModel::new(eta_m, mad, tau_m, nodes)?)
}

fn vertex(cl: &ClosedLoopModel, v: usize) -> Result<ncs_core::model::LoopMatrices, CliError> {
    let models = cl.vertex_models();
    if v == 0 || v > models.len() {
        return Err(CliError::Usage(format!("vertex {v} outside 1..={}", models.len())));
    }
    Ok(models[v - 1].nominal.clone())
}

pub fn simulate(ctx: &Ctx, a: &SimulateArgs) -> Result<(), CliError> {
    let sc = load_scenario(&a.scenario)?;
    let cl = sc.closed_loop()?;
    let kind = a.protocol.clone().unwrap_or_else(|| sc.protocol.name().to_string());
    let proto = protocol(&kind, &sc, &cl, None)?;
    let tau = a.tau_m.unwrap_or(sc.network.tau_m);
    let net = network(&sc, sc.network.eta_m, tau, cl.nodes())?;
    let policy = parse_timing(&a.timing)?;
    let timing = generate_timing(&net, &policy, a.horizon)?;
    let n = cl.n_cl();
    let x0 = match &a.x0 {
        Some(v) if v.len() == n => DVector::from_column_slice(v),
        Some(v) => {
            return Err(CliError::Usage(format!(
                "x0 has {} entries, closed loop has {n}",
                v.len()
            )))
        }
        None => DVector::from_element(n, 1.0),
    };
    let m = vertex(&cl, a.vertex)?;
    let omega = Disturbance::random(cl.q(), a.delta, 0.1, a.horizon, a.seed);
    let tr = simulate_matrices(SimInput {
        matrices: &m,
        c_nodes: &cl.c_nodes,
        protocol: &proto,
        timing: &timing,
        omega: &omega,
        x0: &x0,
        tau_m: tau,
        horizon: a.horizon,
    })?;
    let samples = tr.sample(a.step);
    let ny: usize = cl.node_dims().iter().sum();
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n).map(|i| format!("x{i}")));
    cols.extend((1..=ny).map(|i| format!("e{i}")));
    cols.push("active".into());
    cols.push("segment".into());
    let rows: Vec<Vec<String>> = samples
        .iter()
        .map(|s| {
            let mut r = vec![format!("{}", s.t)];
            r.extend(s.x.iter().map(|v| format!("{v:e}")));
            r.extend(s.e.iter().flat_map(|e| e.iter()).map(|v| format!("{v:e}")));
            r.push((s.active + 1).to_string());
            r.push(s.segment.to_string());
            r
        })
        .collect();
    let params = format!(
        "protocol={kind} timing={} tau_m={tau} mad={} horizon={} vertex={} delta={} seed={}",
        a.timing, net.mad, a.horizon, a.vertex, a.delta, a.seed
    );
    let path = resolve(&ctx.out_dir, &a.out, &format!("simulate_{}.csv", sc.name));
    write_table(&path, &header("simulate", &sc, &params), &cols, &rows)?;
    let last = samples.last().map(|s| s.x.norm()).unwrap_or(0.0);
    println!(
        "{} updates, {} samples, |x(T)| = {last:.6e}; wrote {}",
        tr.segments.len(),
        samples.len(),
        path.display()
    );
    Ok(())
}

/// Rebuilds the LMI problem a witness belongs to and checks its margins.
fn load_witness(
    sc: &Scenario,
    cl: &ClosedLoopModel,
    path: &std::path::Path,
) -> Result<(WitnessFile, LmiProblem, DVector<f64>), CliError> {
    let w = WitnessFile::read(path)?;
    if w.scenario_hash != sc.hash() {
        return Err(CliError::Usage(format!(
            "witness was computed for scenario {} (hash {}), not {} (hash {})",
            w.scenario,
            w.scenario_hash,
            sc.name,
            sc.hash()
        )));
    }
    let th = theorem(&w.theorem)?;
    let net = NetworkModel::for_span(w.eta_m, w.tau_m, cl.nodes())?;
    let p = assemble_theorem(th, cl, &net, w.alpha, w.disturbance)?;
    if w.x.len() != p.layout.len() {
        return Err(CliError::Usage(format!(
            "witness has {} entries, problem has {} decision scalars",
            w.x.len(),
            p.layout.len()
        )));
    }
    let x = DVector::from_vec(w.x.clone());
    Ok((w, p, x))
}

fn random_x0(n: usize, seed: u64) -> DVector<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn verify(ctx: &Ctx, a: &VerifyArgs) -> Result<(), CliError> {
    let sc = load_scenario(&a.scenario)?;
    let cl = sc.closed_loop()?;
    let (w, p, x) = load_witness(&sc, &cl, &a.witness)?;
    let margins = verify_witness(&p, &x);
    if let Some((label, m)) = p
        .constraints
        .iter()
        .zip(&margins)
        .find(|(c, (_, m))| *m < c.epsilon())
        .map(|(_, lm)| lm.clone())
    {
        return Err(CliError::Fail(format!("witness violates {label} (margin {m:e})")));
    }
    let variant = Variant::from_tag(&a.variant)
        .ok_or_else(|| CliError::Usage(format!("unknown variant `{}` (expected tod-n, n2 or rr-n)", a.variant)))?;
    let spec = FunctionalSpec::from_witness(variant, &p, &x)?;
    let kind = a.protocol.clone().unwrap_or_else(|| {
        match variant {
            Variant::TodN => "tod",
            Variant::RrN => "rr",
            Variant::N2 => sc.protocol.name(),
        }
        .to_string()
    });
    let proto = protocol(&kind, &sc, &cl, (kind == "tod").then_some(spec.w.q.as_slice()))?;
    let net = network(&sc, w.eta_m, w.tau_m, cl.nodes())?;
    let m = vertex(&cl, a.vertex)?;
    let opts = VerifyOptions {
        flow_points: a.flow_points,
        iss_step: a.iss_step,
        ..VerifyOptions::default()
    };
    log::info!("verify seed = {}", a.seed);
    let run = |r: u64| -> Result<VerificationReport, CliError> {
        let seed = a.seed + r;
        let timing = generate_timing(&net, &TimingPolicy::UniformRandom { seed }, a.horizon)?;
        let omega = Disturbance::random(cl.q(), a.delta, 0.1, a.horizon, seed);
        let x0 = random_x0(cl.n_cl(), seed);
        let tr: Trajectory = simulate_matrices(SimInput {
            matrices: &m,
            c_nodes: &cl.c_nodes,
            protocol: &proto,
            timing: &timing,
            omega: &omega,
            x0: &x0,
            tau_m: w.tau_m,
            horizon: a.horizon,
        })?;
        Ok(verify_trajectory(&spec, &tr, &opts)?)
    };
    let reports: Vec<VerificationReport> = ctx
        .pool
        .install(|| (0..a.runs).into_par_iter().map(run).collect::<Result<_, _>>())?;
    let params = format!(
        "witness={} theorem={} eta_m={} tau_m={} alpha={} variant={} protocol={kind} runs={} seed={} horizon={} vertex={} delta={}",
        a.witness.display(),
        w.theorem,
        w.eta_m,
        w.tau_m,
        w.alpha,
        variant.tag(),
        a.runs,
        a.seed,
        a.horizon,
        a.vertex,
        a.delta
    );
    let mut text = format!("# {}\n", header("verify", &sc, &params));
    let mut failed = 0;
    for (r, rep) in reports.iter().enumerate() {
        if !rep.passed() {
            failed += 1;
        }
        text.push_str(&format!(
            "\n[run {r} seed {}] {}\n",
            a.seed + r as u64,
            if rep.passed() { "PASS" } else { "FAIL" }
        ));
        text.push_str(&rep.format());
    }
    let worst = |f: &dyn Fn(&VerificationReport) -> f64| reports.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
    let summary = format!(
        "\nsummary: {} runs, {failed} failed; worst jump/scale {:.3e}, worst flow/scale {:.3e}, worst quadrature delta {:.3e}\n",
        reports.len(),
        worst(&|r| r.worst_jump() / r.scale),
        worst(&|r| r.worst_flow() / r.scale),
        worst(&|r| r.worst_quadrature())
    );
    text.push_str(&summary);
    let path = resolve(
        &ctx.out_dir,
        &a.report,
        &format!("verify_{}_{}.txt", sc.name, variant.tag()),
    );
    write_text(&path, &text)?;
    print!("{}", summary.trim_start());
    println!("wrote {}", path.display());
    if failed > 0 {
        Err(CliError::Fail(format!("{failed} of {} runs failed", reports.len())))
    } else {
        Ok(())
    }
}

pub fn export(ctx: &Ctx, a: &ExportArgs) -> Result<(), CliError> {
    let sc = load_scenario(&a.scenario)?;
    let cl = sc.closed_loop()?;
    let th = theorem(&a.theorem)?;
    let witness = match &a.witness {
        Some(path) => {
            let (w, _, x) = load_witness(&sc, &cl, path)?;
            if theorem(&w.theorem)? != th {
                return Err(CliError::Usage(format!("witness is for theorem {}", w.theorem)));
            }
            Some((w, x))
        }
        None => None,
    };
    let (eta, tau, alpha, dist) = match &witness {
        Some((w, _)) => (w.eta_m, w.tau_m, w.alpha, w.disturbance),
        None => (
            a.eta_m.unwrap_or(sc.network.eta_m),
            a.tau_m.unwrap_or(sc.network.tau_m),
            a.alpha.unwrap_or(sc.analysis.alpha),
            a.disturbance || sc.analysis.disturbance,
        ),
    };
    let net = NetworkModel::for_span(eta, tau, cl.nodes())?;
    let p = assemble_theorem(th, &cl, &net, alpha, dist)?;
    let params = format!(
        "theorem={} eta_m={eta} tau_m={tau} alpha={alpha} disturbance={dist}",
        th.tag()
    );
    let text = format!("* {}\n{}", header("export", &sc, &params), export_sdpa(&p));
    let path = resolve(&ctx.out_dir, &a.out, &format!("{}_{}.sdpa", sc.name, th.tag()));
    write_text(&path, &text)?;
    let back = import_sdpa(&std::fs::read_to_string(&path)?)?;
    let x = match &witness {
        Some((_, x)) => x.clone(),
        None => random_x0(p.layout.len(), 0),
    };
    let before = verify_witness(&p, &x);
    let after = verify_witness(&back, &x);
    let drift = before
        .iter()
        .zip(&after)
        .map(|(a, b)| (a.1 - b.1).abs())
        .fold(0.0, f64::max);
    if before.len() != after.len() || drift > 1e-9 {
        return Err(CliError::Health(format!(
            "margins changed by {drift:e} after the round trip"
        )));
    }
    let sizes: Vec<String> = p.constraints.iter().map(|c| c.dim().to_string()).collect();
    println!(
        "{} variables, {} blocks [{}]; round-trip margin drift {drift:.1e}; wrote {}",
        p.layout.len(),
        p.constraints.len(),
        sizes.join(" "),
        path.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn timing_strings() {
        assert!(
            matches!(parse_timing("fixed:0.01,0.002"), Ok(TimingPolicy::Fixed { h, eta }) if h == 0.01 && eta == 0.002)
        );
        assert!(matches!(
            parse_timing("random:7"),
            Ok(TimingPolicy::UniformRandom { seed: 7 })
        ));
        assert!(parse_timing("fixed:0.01").is_err());
        assert!(parse_timing("grid").is_err());
    }
}
