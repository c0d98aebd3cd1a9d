use nalgebra::{DMatrix, DVector};

use crate::error::{NcsError, Result};
use crate::linalg::{max_abs, min_eigenvalue, quad_form};

/// Scheduling protocol. Node indices are 0-based.
#[derive(Debug, Clone, PartialEq)]
pub enum Protocol {
    /// Try-Once-Discard with weights `Q_i`.
    Tod { weights: Vec<DMatrix<f64>> },
    /// Round-Robin visiting `order[k mod N]` at step `k`.
    RoundRobin { order: Vec<usize> },
}

impl Protocol {
    pub fn tod(weights: Vec<DMatrix<f64>>, dims: &[usize]) -> Result<Self> {
        if weights.len() != dims.len() {
            return Err(NcsError::dim(
                "Q",
                format!("{} weights for {} nodes", weights.len(), dims.len()),
            ));
        }
        for (i, (q, &d)) in weights.iter().zip(dims).enumerate() {
            if q.shape() != (d, d) {
                return Err(NcsError::dim(
                    format!("Q_{}", i + 1),
                    format!("expected {d}x{d}, got {}x{}", q.nrows(), q.ncols()),
                ));
            }
            if max_abs(&(q - q.transpose())) > 1e-12 * (1.0 + max_abs(q)) {
                return Err(NcsError::Validation(format!("Q_{} is not symmetric", i + 1)));
            }
            if min_eigenvalue(q) <= 0.0 {
                return Err(NcsError::Validation(format!("Q_{} is not positive definite", i + 1)));
            }
        }
        Ok(Protocol::Tod { weights })
    }

    pub fn round_robin(order: Vec<usize>, nodes: usize) -> Result<Self> {
        let mut seen = vec![false; nodes];
        if order.len() != nodes {
            return Err(NcsError::Validation(format!(
                "round-robin order has {} entries for {nodes} nodes",
                order.len()
            )));
        }
        for &i in &order {
            if i >= nodes || seen[i] {
                return Err(NcsError::Validation("round-robin order is not a permutation".into()));
            }
            seen[i] = true;
        }
        Ok(Protocol::RoundRobin { order })
    }

    /// Active node at step `k` given the errors `e(t_k)`.
    pub fn select(&self, k: usize, e: &[DVector<f64>]) -> usize {
        match self {
            Protocol::Tod { weights } => tod_select(e, weights),
            Protocol::RoundRobin { order } => rr_select(k, order),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Protocol::Tod { .. } => "tod",
            Protocol::RoundRobin { .. } => "rr",
        }
    }
}

/// Smallest index attaining `max_i e_iᵀ Q_i e_i`.
pub fn tod_select(e: &[DVector<f64>], weights: &[DMatrix<f64>]) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, (ei, qi)) in e.iter().zip(weights).enumerate() {
        let v = quad_form(qi, ei);
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

pub fn rr_select(k: usize, order: &[usize]) -> usize {
    order[k % order.len()]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> DVector<f64> {
        DVector::from_element(1, v)
    }

    fn q(v: f64) -> DMatrix<f64> {
        DMatrix::from_element(1, 1, v)
    }

    #[test]
    fn tod_examples() {
        assert_eq!(tod_select(&[s(2.0), s(1.0)], &[q(1.0), q(1.0)]), 0);
        assert_eq!(tod_select(&[s(1.5), s(1.5)], &[q(1.0), q(1.0)]), 0);
        assert_eq!(tod_select(&[s(1.0), s(1.9)], &[q(4.0), q(1.0)]), 0);
        assert_eq!(tod_select(&[s(1.0), s(2.1)], &[q(4.0), q(1.0)]), 1);
    }

    #[test]
    fn rr_examples() {
        assert_eq!(rr_select(5, &[0, 1]), 1);
        assert_eq!(rr_select(3, &[1, 2, 0]), 1);
    }

    #[test]
    fn constructors_validate() {
        assert!(Protocol::round_robin(vec![0, 0], 2).is_err());
        assert!(Protocol::round_robin(vec![1, 0], 2).is_ok());
        assert!(Protocol::tod(vec![q(1.0), q(-1.0)], &[1, 1]).is_err());
        assert!(Protocol::tod(vec![q(1.0)], &[1, 1]).is_err());
    }
}
