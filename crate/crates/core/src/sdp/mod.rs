//! Feasibility of [`LmiProblem`]s.
//!
//! Feasibility is decided through the margin problem
//!
//! ```text
//! maximize t   s.t.  f_k · sign_k · M_k(x) ⪰ t I   for every constraint k
//! ```
//!
//! where `f_k > 0` equilibrates the blocks and the decision variables are
//! kept in a bounded box (`‖V‖₂ ≤ bound` for every matrix variable) so the
//! optimum is finite. The problem is solved with the interior-point method in
//! [`ipm`]; the margins reported in the witness are always recomputed from
//! the original constraints.

pub mod ipm;
pub mod verify;

use web_time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result};
use crate::linalg::max_abs;
use crate::lmi::{evaluate_constraints, LmiProblem, VarKind};
use ipm::{DualSdp, IpmResiduals, SdpBlock, StepOutcome};

pub use verify::{min_eigenvalue_sturm, verify_witness};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    IterationLimit,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Feasible => "feasible",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::IterationLimit => "iteration-limit",
        }
    }
}

impl std::fmt::Display for SolveStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverOptions {
    /// Interior-point iterations.
    pub max_iter: usize,
    /// Relative tolerance on the duality gap and residuals.
    pub tol: f64,
    /// Seed for the randomized well-formedness probes.
    pub seed: u64,
    /// Spectral-norm bound on every matrix variable.
    pub bound: f64,
    /// Per-block scaling of the margin problem.
    pub equilibrate: bool,
    /// Record one log line per iteration in the witness.
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_iter: 150,
            tol: 1e-9,
            seed: 0,
            bound: 1.0,
            equilibrate: true,
            verbose: false,
        }
    }
}

/// Convergence information of the margin problem.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Best lower bound on the (scaled) margin `t`.
    pub lower: f64,
    /// Upper bound on `t` from the primal side.
    pub upper: f64,
    pub primal_infeasibility: f64,
    pub dual_infeasibility: f64,
    pub relative_gap: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateWitness {
    pub x: DVector<f64>,
    /// `(label, smallest eigenvalue of the sign-normalized constraint)`.
    pub margins: Vec<(String, f64)>,
    pub status: SolveStatus,
    pub iterations: usize,
    pub seconds: f64,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub log: Vec<String>,
}

impl CertificateWitness {
    pub fn is_feasible(&self) -> bool {
        self.status == SolveStatus::Feasible
    }

    pub fn min_margin(&self) -> f64 {
        self.margins.iter().map(|m| m.1).fold(f64::INFINITY, f64::min)
    }
}

fn check_well_formed(p: &LmiProblem, seed: u64) -> Result<()> {
    let n = p.layout.len();
    for c in &p.constraints {
        let d = c.dim();
        if c.constant.nrows() != c.constant.ncols() {
            return Err(NcsError::dim(&c.label, "constant term is not square"));
        }
        if !c.constant.iter().all(|v| v.is_finite()) {
            return Err(NcsError::NonFinite(format!("constant term of {}", c.label)));
        }
        for (j, m) in &c.coeffs {
            if *j >= n {
                return Err(NcsError::dim(
                    &c.label,
                    format!("coefficient index {j} outside layout of {n}"),
                ));
            }
            if m.nrows() != d || m.ncols() != d {
                return Err(NcsError::dim(
                    &c.label,
                    format!("coefficient {j} is {}x{}", m.nrows(), m.ncols()),
                ));
            }
            if !m.iter().all(|v| v.is_finite()) {
                return Err(NcsError::NonFinite(format!("coefficient {j} of {}", c.label)));
            }
        }
    }
    // Random probes: M(x) symmetric and affine in x.
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..2 {
        let x = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let y = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        for c in &p.constraints {
            let mx = c.eval(&x);
            let scale = 1.0 + max_abs(&mx);
            if max_abs(&(&mx - mx.transpose())) > 1e-9 * scale {
                return Err(NcsError::Validation(format!("constraint {} is not symmetric", c.label)));
            }
            let mid = c.eval(&((&x + &y) * 0.5));
            let avg = (mx + c.eval(&y)) * 0.5;
            if max_abs(&(mid - avg)) > 1e-9 * scale {
                return Err(NcsError::Validation(format!("constraint {} is not affine", c.label)));
            }
        }
    }
    Ok(())
}

/// Builds the margin problem in dual form. Variable `n` (last) is `t`.
fn margin_sdp(p: &LmiProblem, opts: &SolverOptions) -> (DualSdp, Vec<f64>) {
    let n = p.layout.len();
    let mut blocks = Vec::new();
    let mut scales = Vec::new();
    for c in &p.constraints {
        let d = c.dim();
        let s = c.sense.sign();
        let f = if opts.equilibrate {
            let mut m = max_abs(&c.constant);
            for (_, a) in &c.coeffs {
                m = m.max(max_abs(a));
            }
            if m > 0.0 {
                1.0 / m
            } else {
                1.0
            }
        } else {
            1.0
        };
        let mut terms: Vec<(usize, DMatrix<f64>)> = c.coeffs.iter().map(|(j, a)| (*j, a * (-s * f))).collect();
        terms.push((n, DMatrix::identity(d, d)));
        blocks.push(SdpBlock {
            c: &c.constant * (s * f),
            terms,
        });
        scales.push(f);
    }
    let r = opts.bound;
    for spec in p.layout.vars() {
        let d = spec.dim;
        let basis = |k: usize, size: usize, shift: usize| {
            let (a, b) = spec.position(k);
            let mut e = DMatrix::zeros(size, size);
            match spec.kind {
                VarKind::Symmetric => {
                    e[(a + shift, b + shift)] = 1.0;
                    e[(b + shift, a + shift)] = 1.0;
                }
                VarKind::Full => {
                    e[(a, b + shift)] = 1.0;
                    e[(b + shift, a)] = 1.0;
                }
            }
            e
        };
        match spec.kind {
            VarKind::Symmetric => {
                // r I − V ⪰ 0, and r I + V ⪰ 0 unless V is sign-constrained.
                let upper: Vec<(usize, DMatrix<f64>)> = (0..spec.scalar_count())
                    .map(|k| (spec.offset + k, basis(k, d, 0)))
                    .collect();
                if !spec.positive {
                    blocks.push(SdpBlock {
                        c: DMatrix::identity(d, d) * r,
                        terms: upper.iter().map(|(j, e)| (*j, -e)).collect(),
                    });
                }
                blocks.push(SdpBlock {
                    c: DMatrix::identity(d, d) * r,
                    terms: upper,
                });
            }
            VarKind::Full => {
                // [[r I, V], [Vᵀ, r I]] ⪰ 0
                blocks.push(SdpBlock {
                    c: DMatrix::identity(2 * d, 2 * d) * r,
                    terms: (0..spec.scalar_count())
                        .map(|k| (spec.offset + k, -basis(k, 2 * d, d)))
                        .collect(),
                });
            }
        }
    }
    let mut b = DVector::zeros(n + 1);
    b[n] = 1.0;
    (DualSdp { blocks, b }, scales)
}

fn all_at_least_eps(p: &LmiProblem, margins: &[(String, f64)], factor: f64) -> bool {
    p.constraints
        .iter()
        .zip(margins)
        .all(|(c, (_, m))| *m >= factor * c.epsilon())
}

/// Decides feasibility of `p` and returns a witness whose margins are the
/// sign-normalized smallest eigenvalues at the returned decision vector.
pub fn solve_feasibility(p: &LmiProblem, opts: &SolverOptions) -> Result<CertificateWitness> {
    let start = Instant::now();
    check_well_formed(p, opts.seed)?;
    let n = p.layout.len();
    let (sdp, _scales) = margin_sdp(p, opts);
    let mut st = sdp.initial_state();
    let mut log = Vec::new();
    let mut status = SolveStatus::IterationLimit;
    let mut best_x = DVector::zeros(n);
    let mut best_min = f64::NEG_INFINITY;
    let mut res: IpmResiduals = sdp.residuals(&st);
    let mut iterations = 0;
    let mut stalled = 0;
    let mut feasible_found = false;

    for it in 1..=opts.max_iter {
        iterations = it;
        let outcome = sdp.step(&mut st);
        res = sdp.residuals(&st);
        let x = st.y.rows(0, n).into_owned();
        let margins = evaluate_constraints(p, &x);
        let min_rel = p
            .constraints
            .iter()
            .zip(&margins)
            .map(|(c, (_, m))| m / c.epsilon())
            .fold(f64::INFINITY, f64::min);
        if min_rel > best_min {
            best_min = min_rel;
            best_x = x.clone();
        }
        let (sp, sd) = match outcome {
            StepOutcome::Continue { step_p, step_d } => (step_p, step_d),
            StepOutcome::Breakdown => (0.0, 0.0),
        };
        if opts.verbose {
            log.push(format!(
                "{it:4} t={:+.6e} ub={:+.6e} pinf={:.2e} dinf={:.2e} mu={:.2e} step=({sp:.3},{sd:.3}) minmargin/eps={:.3e}",
                res.dobj, res.pobj, res.pinf, res.dinf, res.mu, min_rel
            ));
        }
        if all_at_least_eps(p, &margins, 2.0) {
            feasible_found = true;
            break;
        }
        let converged = res.pinf < opts.tol && res.dinf < opts.tol && res.rel_gap() < opts.tol;
        // Certified negative optimum: primal nearly feasible with a negative bound.
        let bound_slack = st.y.norm() * res.pinf * (1.0 + sdp.b.norm());
        let negative_bound = res.pinf < 1e-8 && res.pobj + bound_slack < 0.0 && res.dinf < 1e-6;
        if converged || negative_bound {
            status = if all_at_least_eps(p, &evaluate_constraints(p, &best_x), 1.0) {
                SolveStatus::Feasible
            } else {
                SolveStatus::Infeasible
            };
            break;
        }
        if matches!(outcome, StepOutcome::Breakdown) || (sp < 1e-10 && sd < 1e-10) {
            stalled += 1;
        } else {
            stalled = 0;
        }
        if matches!(outcome, StepOutcome::Breakdown) || stalled >= 3 {
            let loose = res.pinf < 1e-6 && res.dinf < 1e-6 && res.rel_gap() < 1e-6;
            status = if all_at_least_eps(p, &evaluate_constraints(p, &best_x), 1.0) {
                SolveStatus::Feasible
            } else if loose || (res.pinf < 1e-6 && res.pobj < 0.0) {
                SolveStatus::Infeasible
            } else {
                SolveStatus::IterationLimit
            };
            break;
        }
    }
    if feasible_found
        || (status == SolveStatus::IterationLimit && all_at_least_eps(p, &evaluate_constraints(p, &best_x), 1.0))
    {
        status = SolveStatus::Feasible;
    }
    let margins = evaluate_constraints(p, &best_x);
    let diagnostics = Diagnostics {
        lower: res.dobj,
        upper: res.pobj,
        primal_infeasibility: res.pinf,
        dual_infeasibility: res.dinf,
        relative_gap: res.rel_gap(),
    };
    Ok(CertificateWitness {
        x: best_x,
        margins,
        status,
        iterations,
        seconds: start.elapsed().as_secs_f64(),
        diagnostics,
        log,
    })
}
