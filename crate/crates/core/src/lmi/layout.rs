use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

/// Index of a matrix variable inside a [`DecisionLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct VarId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarKind {
    /// Parameterized by its upper triangle, `n(n+1)/2` scalars.
    Symmetric,
    /// Unstructured square matrix, `n²` scalars.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarSpec {
    pub name: String,
    pub kind: VarKind,
    pub dim: usize,
    pub offset: usize,
    /// Declared positive definite (gets a positivity constraint).
    pub positive: bool,
}

impl VarSpec {
    pub fn scalar_count(&self) -> usize {
        match self.kind {
            VarKind::Symmetric => self.dim * (self.dim + 1) / 2,
            VarKind::Full => self.dim * self.dim,
        }
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.scalar_count()
    }

    /// Matrix position(s) of local scalar `k`: `(p, q)` with `p ≤ q` for
    /// symmetric variables, where the scalar fills both `(p,q)` and `(q,p)`.
    pub fn position(&self, k: usize) -> (usize, usize) {
        match self.kind {
            VarKind::Full => (k / self.dim, k % self.dim),
            VarKind::Symmetric => {
                let mut k = k;
                for p in 0..self.dim {
                    let row_len = self.dim - p;
                    if k < row_len {
                        return (p, p + k);
                    }
                    k -= row_len;
                }
                unreachable!("scalar index out of range")
            }
        }
    }
}

/// Ordered registry of matrix decision variables and their scalar ranges.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DecisionLayout {
    vars: Vec<VarSpec>,
    len: usize,
}

impl DecisionLayout {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, kind: VarKind, dim: usize, positive: bool) -> VarId {
        let spec = VarSpec {
            name: name.to_string(),
            kind,
            dim,
            offset: self.len,
            positive,
        };
        self.len += spec.scalar_count();
        self.vars.push(spec);
        VarId(self.vars.len() - 1)
    }

    pub fn add_symmetric(&mut self, name: &str, dim: usize, positive: bool) -> VarId {
        self.push(name, VarKind::Symmetric, dim, positive)
    }

    pub fn add_full(&mut self, name: &str, dim: usize) -> VarId {
        self.push(name, VarKind::Full, dim, false)
    }

    /// Total number of scalar decision parameters.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn vars(&self) -> &[VarSpec] {
        &self.vars
    }

    pub fn var(&self, id: VarId) -> &VarSpec {
        &self.vars[id.0]
    }

    pub fn find(&self, name: &str) -> Option<VarId> {
        self.vars.iter().position(|v| v.name == name).map(VarId)
    }

    /// Rebuilds the matrix value of `id` from a decision vector.
    pub fn matrix(&self, x: &DVector<f64>, id: VarId) -> DMatrix<f64> {
        let spec = self.var(id);
        let mut m = DMatrix::zeros(spec.dim, spec.dim);
        for k in 0..spec.scalar_count() {
            let (p, q) = spec.position(k);
            let v = x[spec.offset + k];
            m[(p, q)] = v;
            if spec.kind == VarKind::Symmetric {
                m[(q, p)] = v;
            }
        }
        m
    }

    /// Writes matrix `value` for variable `id` into `x` (upper triangle for
    /// symmetric variables).
    pub fn set_matrix(&self, x: &mut DVector<f64>, id: VarId, value: &DMatrix<f64>) {
        let spec = self.var(id);
        for k in 0..spec.scalar_count() {
            let (p, q) = spec.position(k);
            x[spec.offset + k] = value[(p, q)];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_are_disjoint_and_cover() {
        let mut l = DecisionLayout::new();
        l.add_symmetric("P", 4, true);
        l.add_full("S12", 4);
        l.add_symmetric("b", 1, true);
        assert_eq!(l.len(), 10 + 16 + 1);
        let mut covered = vec![0u8; l.len()];
        for v in l.vars() {
            for i in v.range() {
                covered[i] += 1;
            }
        }
        assert!(covered.iter().all(|c| *c == 1));
    }

    #[test]
    fn symmetric_roundtrip() {
        let mut l = DecisionLayout::new();
        let p = l.add_symmetric("P", 3, true);
        let m = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 5.0, 3.0, 5.0, 6.0]);
        let mut x = DVector::zeros(l.len());
        l.set_matrix(&mut x, p, &m);
        assert_eq!(l.matrix(&x, p), m);
        assert_eq!(x.as_slice(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }
}
