use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NcsError, Result};
use crate::model::NetworkModel;

const TIME_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TimingPolicy {
    /// Constant sampling period `h` and delay `eta`.
    Fixed { h: f64, eta: f64 },
    /// `η_k ~ U[η_m, MAD]`, `t_{k+1} − t_k ~ U[δ_min, τ_M − η_k]`.
    UniformRandom { seed: u64 },
    /// Deterministic sweep cycling through `eta_levels` delays in
    /// `[η_m, MAD]` and `span_levels` fractions of the admissible interval.
    GridSweep { eta_levels: usize, span_levels: usize },
}

impl TimingPolicy {
    pub fn tag(&self) -> String {
        match self {
            TimingPolicy::Fixed { h, eta } => format!("fixed:{h},{eta}"),
            TimingPolicy::UniformRandom { seed } => format!("random:{seed}"),
            TimingPolicy::GridSweep {
                eta_levels,
                span_levels,
            } => format!("grid:{eta_levels},{span_levels}"),
        }
    }
}

/// Sampling instants `s_k`, delays `η_k` and updating instants `t_k = s_k + η_k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRealization {
    pub s: Vec<f64>,
    pub eta: Vec<f64>,
    pub t: Vec<f64>,
    pub policy: String,
}

impl TimingRealization {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    /// Checks delay bounds, the span bound and ordering.
    pub fn validate(&self, net: &NetworkModel) -> Result<()> {
        let n = self.t.len();
        if self.s.len() != n || self.eta.len() != n || n < 2 {
            return Err(NcsError::Timing("need at least two consistent instants".into()));
        }
        for k in 0..n {
            let eta = self.eta[k];
            if eta < net.eta_m - TIME_TOL || eta > net.mad + TIME_TOL {
                return Err(NcsError::Timing(format!("delay {eta} at k={k} outside [eta_m, MAD]")));
            }
            if (self.t[k] - self.s[k] - eta).abs() > TIME_TOL * (1.0 + self.t[k].abs()) {
                return Err(NcsError::Timing(format!("t_{k} != s_{k} + eta_{k}")));
            }
            if k + 1 < n {
                if !(self.t[k + 1] > self.t[k]) || !(self.s[k + 1] > self.s[k]) {
                    return Err(NcsError::Timing(format!("instants not increasing at k={k}")));
                }
                let span = self.t[k + 1] - self.t[k] + eta;
                if span > net.tau_m + TIME_TOL {
                    return Err(NcsError::Timing(format!("span {span} exceeds tau_M at k={k}")));
                }
            }
        }
        Ok(())
    }
}

/// Generates instants until `t_k ≥ horizon`.
pub fn generate_timing(net: &NetworkModel, policy: &TimingPolicy, horizon: f64) -> Result<TimingRealization> {
    net.validate()?;
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(NcsError::Timing(format!("horizon must be positive, got {horizon}")));
    }
    let mut s = Vec::new();
    let mut eta = Vec::new();
    match policy {
        TimingPolicy::Fixed { h, eta: e } => {
            if !(*h > 0.0) {
                return Err(NcsError::Timing(format!("sampling period must be positive, got {h}")));
            }
            if *e < net.eta_m - TIME_TOL || *e > net.mad + TIME_TOL {
                return Err(NcsError::Timing(format!(
                    "delay {e} outside [eta_m, MAD] = [{}, {}]",
                    net.eta_m, net.mad
                )));
            }
            if h + e > net.tau_m + TIME_TOL {
                return Err(NcsError::Timing(format!(
                    "h + eta = {} exceeds tau_M = {}",
                    h + e,
                    net.tau_m
                )));
            }
            let mut k = 0usize;
            loop {
                let sk = k as f64 * h;
                s.push(sk);
                eta.push(*e);
                if sk + e >= horizon && k >= 1 {
                    break;
                }
                k += 1;
            }
        }
        TimingPolicy::UniformRandom { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(*seed);
            let floor = 1e-3 * (net.tau_m - net.mad);
            let draw_eta = |rng: &mut ChaCha8Rng| {
                if net.mad > net.eta_m {
                    rng.gen_range(net.eta_m..=net.mad)
                } else {
                    net.eta_m
                }
            };
            let mut eta_k = draw_eta(&mut rng);
            let mut t_k = eta_k;
            s.push(0.0);
            eta.push(eta_k);
            while t_k < horizon || s.len() < 2 {
                let eta_next = draw_eta(&mut rng);
                let hi = net.tau_m - eta_k;
                let lo = ((eta_next - eta_k).max(0.0) + floor).min(hi);
                let dt = if hi > lo { rng.gen_range(lo..=hi) } else { hi };
                let t_next = t_k + dt;
                s.push(t_next - eta_next);
                eta.push(eta_next);
                t_k = t_next;
                eta_k = eta_next;
            }
        }
        TimingPolicy::GridSweep {
            eta_levels,
            span_levels,
        } => {
            if *eta_levels == 0 || *span_levels == 0 {
                return Err(NcsError::Timing("grid sweep needs at least one level".into()));
            }
            let level = |k: usize| {
                let j = k % eta_levels;
                if *eta_levels == 1 {
                    net.eta_m
                } else {
                    net.eta_m + (net.mad - net.eta_m) * j as f64 / (*eta_levels - 1) as f64
                }
            };
            let floor = 1e-3 * (net.tau_m - net.mad);
            let mut k = 0usize;
            let mut eta_k = level(0);
            let mut t_k = eta_k;
            s.push(0.0);
            eta.push(eta_k);
            while t_k < horizon || s.len() < 2 {
                let eta_next = level(k + 1);
                let frac = ((k / eta_levels) % span_levels + 1) as f64 / *span_levels as f64;
                let hi = net.tau_m - eta_k;
                let lo = ((eta_next - eta_k).max(0.0) + floor).min(hi);
                let dt = (frac * hi).max(lo);
                let t_next = t_k + dt;
                s.push(t_next - eta_next);
                eta.push(eta_next);
                t_k = t_next;
                eta_k = eta_next;
                k += 1;
            }
        }
    }
    let t = s.iter().zip(&eta).map(|(a, b)| a + b).collect();
    let tr = TimingRealization {
        s,
        eta,
        t,
        policy: policy.tag(),
    };
    tr.validate(net)?;
    Ok(tr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_policy() {
        let net = NetworkModel::new(0.0, 0.0, 0.019, 2).unwrap();
        let tr = generate_timing(&net, &TimingPolicy::Fixed { h: 0.01, eta: 0.0 }, 0.1).unwrap();
        for (k, (s, t)) in tr.s.iter().zip(&tr.t).enumerate() {
            assert_eq!(*s, 0.01 * k as f64);
            assert_eq!(s, t);
        }
        assert!(*tr.t.last().unwrap() >= 0.1);
    }

    #[test]
    fn non_small_delay_fixed() {
        let net = NetworkModel::new(0.04, 0.04, 0.05, 2).unwrap();
        let tr = generate_timing(&net, &TimingPolicy::Fixed { h: 0.005, eta: 0.04 }, 0.2).unwrap();
        assert!(tr.t[1] - tr.t[0] > 0.0);
    }

    #[test]
    fn fixed_rejects_long_span() {
        let net = NetworkModel::new(0.0, 0.01, 0.019, 2).unwrap();
        assert!(generate_timing(&net, &TimingPolicy::Fixed { h: 0.015, eta: 0.01 }, 1.0).is_err());
    }

    #[test]
    fn grid_sweep_is_valid() {
        let net = NetworkModel::new(0.005, 0.02, 0.03, 2).unwrap();
        let tr = generate_timing(
            &net,
            &TimingPolicy::GridSweep {
                eta_levels: 3,
                span_levels: 4,
            },
            1.0,
        )
        .unwrap();
        tr.validate(&net).unwrap();
    }
}
