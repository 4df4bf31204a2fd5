//! Linear features `φ(x, a)` for the three environments.
//!
//! Every map is action-blocked: `φ(x, a)` places a per-state vector
//! `ψ(x)` in the block of action `a` and zeros elsewhere, so the weight
//! vector splits into one independent block per action.

use nalgebra::DMatrix;

use crate::envs::Observation;
use crate::error::{invalid, Result};

/// Per-dimension bounds and order of the CartPole Fourier basis.
#[derive(Debug, Clone, PartialEq)]
pub struct Fourier {
    pub order: usize,
    pub low: [f64; 4],
    pub high: [f64; 4],
    coeffs: Vec<[f64; 4]>,
}

impl Fourier {
    pub fn new(order: usize, low: [f64; 4], high: [f64; 4]) -> Result<Self> {
        if low.iter().zip(&high).any(|(l, h)| !(h > l)) {
            return Err(invalid("Fourier bounds need low < high"));
        }
        let k = order + 1;
        let coeffs = (0..k.pow(4))
            .map(|mut code| {
                let mut c = [0.0; 4];
                for slot in c.iter_mut().rev() {
                    *slot = (code % k) as f64;
                    code /= k;
                }
                c
            })
            .collect();
        Ok(Self {
            order,
            low,
            high,
            coeffs,
        })
    }

    /// Coefficient vectors `c ∈ {0..order}⁴`, first coordinate slowest.
    pub fn coefficients(&self) -> &[[f64; 4]] {
        &self.coeffs
    }

    /// Observation rescaled to `[0, 1]⁴`, clamped at the bounds.
    pub fn normalize(&self, obs: &[f64; 4]) -> [f64; 4] {
        let mut s = [0.0; 4];
        for i in 0..4 {
            s[i] = ((obs[i] - self.low[i]) / (self.high[i] - self.low[i])).clamp(0.0, 1.0);
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// One-hot on `(x, a)`.
    Tabular { n_states: usize, n_actions: usize },
    /// One-hot row plus one-hot column, per action.
    DeepSea { n: usize },
    /// Raw observation followed by the Fourier basis, per action.
    CartPole(Fourier),
}

impl FeatureMap {
    /// Order-4 Fourier basis over position ±2.4, velocity ±3, angle ±15°
    /// and angular velocity ±3.5.
    pub fn cartpole_default() -> Self {
        let theta = 15.0_f64.to_radians();
        FeatureMap::CartPole(
            Fourier::new(4, [-2.4, -3.0, -theta, -3.5], [2.4, 3.0, theta, 3.5])
                .expect("static bounds"),
        )
    }

    pub fn n_actions(&self) -> usize {
        match self {
            FeatureMap::Tabular { n_actions, .. } => *n_actions,
            _ => 2,
        }
    }

    /// Length of the per-state block `ψ(x)`.
    pub fn state_dim(&self) -> usize {
        match self {
            FeatureMap::Tabular { n_states, .. } => *n_states,
            FeatureMap::DeepSea { n } => 2 * n,
            FeatureMap::CartPole(f) => 4 + f.coeffs.len(),
        }
    }

    /// Total dimension `d` of `φ`.
    pub fn dim(&self) -> usize {
        self.state_dim() * self.n_actions()
    }

    /// Index in `φ` of entry `j` of the block of action `a`.
    pub fn column(&self, j: usize, a: usize) -> usize {
        a * self.state_dim() + j
    }

    /// Writes `ψ(x)` into `out` (length [`state_dim`](Self::state_dim)).
    pub fn state_features_into(&self, obs: &Observation, out: &mut [f64]) -> Result<()> {
        debug_assert_eq!(out.len(), self.state_dim());
        match (self, obs) {
            (FeatureMap::Tabular { n_states, .. }, Observation::Index(x)) if x < n_states => {
                out.fill(0.0);
                out[*x] = 1.0;
            }
            (FeatureMap::DeepSea { n }, Observation::Cell { row, col }) if row < n && col < n => {
                out.fill(0.0);
                out[*row] = 1.0;
                out[n + col] = 1.0;
            }
            (FeatureMap::CartPole(f), Observation::Physical(o)) => {
                if o.iter().any(|v| !v.is_finite()) {
                    return Err(invalid("non-finite CartPole observation"));
                }
                out[..4].copy_from_slice(o);
                let s = f.normalize(o);
                for (slot, c) in out[4..].iter_mut().zip(&f.coeffs) {
                    let arg = c[0] * s[0] + c[1] * s[1] + c[2] * s[2] + c[3] * s[3];
                    *slot = (std::f64::consts::PI * arg).cos();
                }
            }
            _ => return Err(invalid(format!("observation {obs:?} does not fit {self:?}"))),
        }
        Ok(())
    }

    pub fn state_features(&self, obs: &Observation) -> Result<Vec<f64>> {
        let mut out = vec![0.0; self.state_dim()];
        self.state_features_into(obs, &mut out)?;
        Ok(out)
    }

    /// Full `φ(x, a)`.
    pub fn features(&self, obs: &Observation, a: usize) -> Result<Vec<f64>> {
        if a >= self.n_actions() {
            return Err(invalid(format!("action {a} out of range")));
        }
        let psi = self.state_features(obs)?;
        let mut phi = vec![0.0; self.dim()];
        let k = self.state_dim();
        phi[a * k..(a + 1) * k].copy_from_slice(&psi);
        Ok(phi)
    }

    /// `φ(x, a)ᵀ w` given `ψ(x)`.
    pub fn value(&self, psi: &[f64], a: usize, w: &[f64]) -> f64 {
        let k = psi.len();
        psi.iter().zip(&w[a * k..(a + 1) * k]).map(|(p, w)| p * w).sum()
    }

    /// The feature matrix `Ψ` with rows `φ(x, a)ᵀ` ordered as `x · |A| + a`,
    /// for finite state spaces.
    pub fn matrix(&self) -> Option<DMatrix<f64>> {
        let m = self.n_actions();
        let states: Vec<Observation> = match self {
            FeatureMap::Tabular { n_states, .. } => (0..*n_states).map(Observation::Index).collect(),
            FeatureMap::DeepSea { n } => (0..n * n)
                .map(|i| Observation::Cell {
                    row: i / n,
                    col: i % n,
                })
                .collect(),
            FeatureMap::CartPole(_) => return None,
        };
        let mut psi = DMatrix::zeros(states.len() * m, self.dim());
        for (x, obs) in states.iter().enumerate() {
            for a in 0..m {
                let phi = self.features(obs, a).expect("enumerated observation");
                psi.row_mut(x * m + a).copy_from_slice(&phi);
            }
        }
        Some(psi)
    }
}

/// Largest row norm of a feature matrix.
pub fn max_row_norm(psi: &DMatrix<f64>) -> f64 {
    psi.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}
