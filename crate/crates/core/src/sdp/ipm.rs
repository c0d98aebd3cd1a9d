//! Infeasible-start primal-dual path-following method for block-diagonal
//! SDPs in dual form
//!
//! ```text
//! maximize  bᵀy   s.t.  Z = C − Σ_i y_i A_i ⪰ 0
//! minimize ⟨C,X⟩  s.t.  ⟨A_i, X⟩ = b_i,  X ⪰ 0
//! ```
//!
//! using the HKM search direction with a Mehrotra predictor-corrector step.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// One diagonal block of the SDP.
#[derive(Debug, Clone)]
pub struct SdpBlock {
    pub c: DMatrix<f64>,
    /// Non-zero `A_i` restricted to this block.
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl SdpBlock {
    pub fn dim(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Debug, Clone)]
pub struct DualSdp {
    pub blocks: Vec<SdpBlock>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct IpmState {
    pub x: Vec<DMatrix<f64>>,
    pub z: Vec<DMatrix<f64>>,
    pub y: DVector<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmResiduals {
    pub pobj: f64,
    pub dobj: f64,
    pub pinf: f64,
    pub dinf: f64,
    pub mu: f64,
}

impl IpmResiduals {
    pub fn rel_gap(&self) -> f64 {
        (self.pobj - self.dobj).abs() / (1.0 + self.pobj.abs() + self.dobj.abs())
    }
}

pub enum StepOutcome {
    Continue {
        step_p: f64,
        step_d: f64,
    },
    /// The Schur complement or a block factorization broke down.
    Breakdown,
}

fn frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(u, v)| u * v).sum()
}

fn sym(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest `α ≤ 1/0 = ∞` keeping `M + α ΔM ⪰ 0`, given the Cholesky factor of `M`.
fn max_step(chol: &Cholesky<f64, Dyn>, dm: &DMatrix<f64>) -> f64 {
    let l = chol.l();
    let linv_dm = match l.solve_lower_triangular(dm) {
        Some(v) => v,
        None => return 0.0,
    };
    let w = match l.solve_lower_triangular(&linv_dm.transpose()) {
        Some(v) => v,
        None => return 0.0,
    };
    let lmin = SymmetricEigen::new(sym(&w))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    if lmin >= 0.0 {
        f64::INFINITY
    } else {
        -1.0 / lmin
    }
}

impl DualSdp {
    pub fn num_vars(&self) -> usize {
        self.b.len()
    }

    pub fn total_dim(&self) -> usize {
        self.blocks.iter().map(SdpBlock::dim).sum()
    }

    /// `C − Σ y_i A_i` for every block.
    pub fn slack(&self, y: &DVector<f64>) -> Vec<DMatrix<f64>> {
        self.blocks
            .iter()
            .map(|blk| {
                let mut s = blk.c.clone();
                for (i, a) in &blk.terms {
                    if y[*i] != 0.0 {
                        s -= a * y[*i];
                    }
                }
                s
            })
            .collect()
    }

    /// `A(M)_i = Σ_blocks ⟨A_i, M⟩`.
    fn apply_a(&self, ms: &[DMatrix<f64>]) -> DVector<f64> {
        let mut out = DVector::zeros(self.num_vars());
        for (blk, m) in self.blocks.iter().zip(ms) {
            for (i, a) in &blk.terms {
                out[*i] += frob(a, m);
            }
        }
        out
    }

    pub fn initial_state(&self) -> IpmState {
        let n_tot = self.total_dim().max(1) as f64;
        let mut amax: f64 = 0.0;
        let mut ratio: f64 = 0.0;
        let mut norms = vec![0.0f64; self.num_vars()];
        for blk in &self.blocks {
            for (i, a) in &blk.terms {
                norms[*i] += frob(a, a);
            }
        }
        for (i, nrm2) in norms.iter().enumerate() {
            let nrm = nrm2.sqrt();
            amax = amax.max(nrm);
            ratio = ratio.max((1.0 + self.b[i].abs()) / (1.0 + nrm));
        }
        let cnorm = self.blocks.iter().map(|b| frob(&b.c, &b.c)).sum::<f64>().sqrt();
        let xi = n_tot.sqrt() * ratio.max(1.0);
        let eta = (1.0 + amax.max(cnorm)) / n_tot.sqrt();
        IpmState {
            x: self
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.dim(), b.dim()) * xi)
                .collect(),
            z: self
                .blocks
                .iter()
                .map(|b| DMatrix::identity(b.dim(), b.dim()) * eta)
                .collect(),
            y: DVector::zeros(self.num_vars()),
        }
    }

    pub fn residuals(&self, st: &IpmState) -> IpmResiduals {
        let slack = self.slack(&st.y);
        let mut dinf2 = 0.0;
        let mut cnorm2 = 0.0;
        let mut pobj = 0.0;
        let mut xz = 0.0;
        for (k, blk) in self.blocks.iter().enumerate() {
            let rd = &slack[k] - &st.z[k];
            dinf2 += frob(&rd, &rd);
            cnorm2 += frob(&blk.c, &blk.c);
            pobj += frob(&blk.c, &st.x[k]);
            xz += frob(&st.x[k], &st.z[k]);
        }
        let rp = &self.b - self.apply_a(&st.x);
        IpmResiduals {
            pobj,
            dobj: self.b.dot(&st.y),
            pinf: rp.norm() / (1.0 + self.b.norm()),
            dinf: dinf2.sqrt() / (1.0 + cnorm2.sqrt()),
            mu: xz / self.total_dim().max(1) as f64,
        }
    }

    /// One predictor-corrector iteration.
    pub fn step(&self, st: &mut IpmState) -> StepOutcome {
        let m = self.num_vars();
        let nb = self.blocks.len();
        let slack = self.slack(&st.y);
        let rd: Vec<DMatrix<f64>> = (0..nb).map(|k| &slack[k] - &st.z[k]).collect();

        let mut zinv = Vec::with_capacity(nb);
        let mut xchol = Vec::with_capacity(nb);
        let mut zchol = Vec::with_capacity(nb);
        for k in 0..nb {
            let zc = match Cholesky::new(sym(&st.z[k])) {
                Some(c) => c,
                None => return StepOutcome::Breakdown,
            };
            let xc = match Cholesky::new(sym(&st.x[k])) {
                Some(c) => c,
                None => return StepOutcome::Breakdown,
            };
            zinv.push(sym(&zc.inverse()));
            zchol.push(zc);
            xchol.push(xc);
        }
        let mu = (0..nb).map(|k| frob(&st.x[k], &st.z[k])).sum::<f64>() / self.total_dim() as f64;

        // Schur complement O_ij = tr(A_i X A_j Z⁻¹).
        let mut schur = DMatrix::<f64>::zeros(m, m);
        for (k, blk) in self.blocks.iter().enumerate() {
            let x = &st.x[k];
            let g: Vec<DMatrix<f64>> = blk.terms.iter().map(|(_, a)| x * a * &zinv[k]).collect();
            for (p, (i, ai)) in blk.terms.iter().enumerate() {
                for (jj, (j, _)) in blk.terms.iter().enumerate().skip(p) {
                    let v = frob(ai, &g[jj]);
                    schur[(*i, *j)] += v;
                    if i != j {
                        schur[(*j, *i)] += v;
                    }
                }
            }
        }
        let schur = sym(&schur);
        let diag_max = (0..m).map(|i| schur[(i, i)].abs()).fold(0.0, f64::max);
        let chol = match Cholesky::new(schur.clone()) {
            Some(c) => c,
            None => {
                let mut reg = schur;
                for i in 0..m {
                    reg[(i, i)] += 1e-12 * diag_max.max(1e-300);
                }
                match Cholesky::new(reg) {
                    Some(c) => c,
                    None => return StepOutcome::Breakdown,
                }
            }
        };

        let xrz: Vec<DMatrix<f64>> = (0..nb).map(|k| sym(&(&st.x[k] * &rd[k] * &zinv[k]))).collect();
        let a_xrz = self.apply_a(&xrz);

        let direction = |sigma_mu: f64, corr: Option<&[DMatrix<f64>]>| {
            let mut rhs = &self.b + &a_xrz;
            if sigma_mu != 0.0 {
                rhs -= self.apply_a(&zinv) * sigma_mu;
            }
            if let Some(c) = corr {
                rhs += self.apply_a(c);
            }
            let dy = chol.solve(&rhs);
            let dz: Vec<DMatrix<f64>> = self
                .blocks
                .iter()
                .enumerate()
                .map(|(k, blk)| {
                    let mut d = rd[k].clone();
                    for (i, a) in &blk.terms {
                        if dy[*i] != 0.0 {
                            d -= a * dy[*i];
                        }
                    }
                    d
                })
                .collect();
            let dx: Vec<DMatrix<f64>> = (0..nb)
                .map(|k| {
                    let mut d = &zinv[k] * sigma_mu - &st.x[k] - sym(&(&st.x[k] * &dz[k] * &zinv[k]));
                    if let Some(c) = corr {
                        d -= &c[k];
                    }
                    d
                })
                .collect();
            (dx, dy, dz)
        };

        let steps = |dx: &[DMatrix<f64>], dz: &[DMatrix<f64>]| {
            let mut ap = f64::INFINITY;
            let mut ad = f64::INFINITY;
            for k in 0..nb {
                ap = ap.min(max_step(&xchol[k], &dx[k]));
                ad = ad.min(max_step(&zchol[k], &dz[k]));
            }
            (ap, ad)
        };

        // Predictor.
        let (dxa, _dya, dza) = direction(0.0, None);
        let (apa, ada) = steps(&dxa, &dza);
        let apa = apa.min(1.0);
        let ada = ada.min(1.0);
        let mut mu_aff = 0.0;
        for k in 0..nb {
            mu_aff += frob(&(&st.x[k] + &dxa[k] * apa), &(&st.z[k] + &dza[k] * ada));
        }
        mu_aff /= self.total_dim() as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        // Corrector.
        let corr: Vec<DMatrix<f64>> = (0..nb).map(|k| sym(&(&dxa[k] * &dza[k] * &zinv[k]))).collect();
        let (dx, dy, dz) = direction(sigma * mu, Some(&corr));
        let (ap, ad) = steps(&dx, &dz);
        let step_p = (0.95 * ap).min(1.0);
        let step_d = (0.95 * ad).min(1.0);

        for k in 0..nb {
            st.x[k] += &dx[k] * step_p;
            st.z[k] += &dz[k] * step_d;
            st.x[k] = sym(&st.x[k]);
            st.z[k] = sym(&st.z[k]);
        }
        st.y += dy * step_d;
        StepOutcome::Continue { step_p, step_d }
    }
}
