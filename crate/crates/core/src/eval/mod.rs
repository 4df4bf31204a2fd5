//! Monte-Carlo policy evaluation with linear features.
//!
//! Each phase produces a trajectory under a fixed policy. Its empirical
//! mean reward estimates the gain; a ridge regression of truncated
//! differential returns on `φ(x, a)` estimates the action-value function,
//! which is then clipped to a fixed range.

mod features;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use features::{max_row_norm, FeatureMap, Fourier};

use crate::envs::Observation;
use crate::error::{invalid, Error, Result};
use crate::ftrl::Rate;

/// Default cap on the number of past estimates used for the learning rate.
pub const DEFAULT_SUBSAMPLE: usize = 30;
/// Default horizon cap for the truncated differential returns.
pub const DEFAULT_HORIZON_CAP: usize = 64;
/// Default guess of the mixing time that sets the clipping range.
pub const DEFAULT_TMIX_GUESS: f64 = 16.0;
/// Default ridge per sample.
pub const DEFAULT_RIDGE_PER_SAMPLE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Step {
    pub obs: Observation,
    pub action: usize,
    pub reward: f64,
}

/// The steps of one phase, all taken under the same policy.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Trajectory {
    pub phase: usize,
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn new(phase: usize, capacity: usize) -> Self {
        Self {
            phase,
            steps: Vec::with_capacity(capacity),
        }
    }

    pub fn push(&mut self, obs: Observation, action: usize, reward: f64) {
        self.steps.push(Step {
            obs,
            action,
            reward,
        });
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Empirical mean reward of a trajectory.
pub fn estimate_gain(traj: &Trajectory) -> Result<f64> {
    if traj.is_empty() {
        return Err(invalid("cannot estimate the gain of an empty trajectory"));
    }
    Ok(traj.steps.iter().map(|s| s.reward).sum::<f64>() / traj.len() as f64)
}

/// Range `[low, high]` that action-value estimates are clipped to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipRange {
    pub low: f64,
    pub high: f64,
}

impl ClipRange {
    /// `[b, b + Q_max]` with `b = −(2 t + 3) s` and `Q_max = 2 (2 t + 3) s`
    /// for mixing-time guess `t` and reward span `s`.
    pub fn from_mixing_guess(t_mix: f64, reward_span: f64) -> Result<Self> {
        if !(t_mix >= 0.0 && reward_span > 0.0) || !t_mix.is_finite() || !reward_span.is_finite() {
            return Err(invalid("clip range needs t_mix >= 0 and a positive reward span"));
        }
        let b = -(2.0 * t_mix + 3.0) * reward_span;
        let q_max = 2.0 * (2.0 * t_mix + 3.0) * reward_span;
        Ok(Self {
            low: b,
            high: b + q_max,
        })
    }

    pub fn width(&self) -> f64 {
        self.high - self.low
    }

    pub fn apply(&self, v: f64) -> f64 {
        v.clamp(self.low, self.high)
    }
}

/// A fitted, clipped linear action-value estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QEstimate {
    pub weights: Vec<f64>,
    /// `λ̂` of the most recent trajectory used in the fit.
    pub gain: f64,
    pub clip: ClipRange,
}

impl QEstimate {
    /// The all-zero estimate.
    pub fn zero(map: &FeatureMap, clip: ClipRange) -> Self {
        Self {
            weights: vec![0.0; map.dim()],
            gain: 0.0,
            clip,
        }
    }

    /// Clipped `φ(x, a)ᵀ w` given `ψ(x)`.
    pub fn value(&self, map: &FeatureMap, psi: &[f64], a: usize) -> f64 {
        self.clip.apply(map.value(psi, a, &self.weights))
    }

    /// Clipped values of every action given `ψ(x)`.
    pub fn values_into(&self, map: &FeatureMap, psi: &[f64], out: &mut [f64]) {
        for (a, slot) in out.iter_mut().enumerate() {
            *slot = self.value(map, psi, a);
        }
    }

    pub fn weight_norm(&self) -> f64 {
        self.weights.iter().map(|w| w * w).sum::<f64>().sqrt()
    }
}

/// Regression settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LsmcConfig {
    /// Return horizon `w`; defaults to `min(τ/2, 64)`.
    pub horizon: Option<usize>,
    /// Ridge `ρ`; defaults to `1e-6` times the number of steps.
    pub ridge: Option<f64>,
    pub clip: ClipRange,
}

/// Truncated differential returns `y_t = Σ_{i<w} (r_{t+i} − λ̂)` for
/// `t = 0..=τ−w`.
pub fn differential_returns(rewards: &[f64], gain: f64, horizon: usize) -> Result<Vec<f64>> {
    let tau = rewards.len();
    if horizon == 0 || horizon >= tau {
        return Err(invalid(format!("need 1 <= horizon < tau, got w={horizon}, tau={tau}")));
    }
    let mut prefix = Vec::with_capacity(tau + 1);
    prefix.push(0.0);
    let mut acc = 0.0;
    for r in rewards {
        acc += r - gain;
        prefix.push(acc);
    }
    Ok((0..=tau - horizon).map(|t| prefix[t + horizon] - prefix[t]).collect())
}

/// Least-squares Monte-Carlo fit on one or more trajectories.
///
/// Each trajectory contributes its own differential returns around its own
/// `λ̂`. The normal equations split into one system per action block.
pub fn lsmc_fit(trajs: &[&Trajectory], map: &FeatureMap, cfg: &LsmcConfig) -> Result<QEstimate> {
    let last = trajs.last().ok_or_else(|| invalid("no trajectory to fit"))?;
    let horizon = cfg.horizon.unwrap_or((last.len() / 2).min(DEFAULT_HORIZON_CAP));
    let total: usize = trajs.iter().map(|t| t.len()).sum();
    let ridge = cfg.ridge.unwrap_or(DEFAULT_RIDGE_PER_SAMPLE * total as f64);
    if !(ridge >= 0.0) || !ridge.is_finite() {
        return Err(invalid(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let k = map.state_dim();
    let m = map.n_actions();

    // rows grouped by action, stored row-major then viewed as columns
    let mut rows: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut targets: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut psi = vec![0.0; k];
    let mut gain = 0.0;
    for traj in trajs {
        gain = estimate_gain(traj)?;
        let rewards: Vec<f64> = traj.steps.iter().map(|s| s.reward).collect();
        let ys = differential_returns(&rewards, gain, horizon)?;
        for (step, y) in traj.steps.iter().zip(ys) {
            if step.action >= m {
                return Err(invalid(format!("action {} out of range", step.action)));
            }
            map.state_features_into(&step.obs, &mut psi)?;
            rows[step.action].extend_from_slice(&psi);
            targets[step.action].push(y);
        }
    }

    let mut weights = vec![0.0; map.dim()];
    for a in 0..m {
        let n = targets[a].len();
        // column-major k × n matrix whose columns are ψ(x_t)
        let xt = DMatrix::from_vec(k, n, std::mem::take(&mut rows[a]));
        let y = DVector::from_vec(std::mem::take(&mut targets[a]));
        let mut gram = &xt * xt.transpose();
        for i in 0..k {
            gram[(i, i)] += ridge;
        }
        let rhs = &xt * y;
        let chol = gram.cholesky().ok_or_else(|| {
            Error::DegenerateFit(format!("normal equations of action {a} are singular (ridge {ridge})"))
        })?;
        let sol = chol.solve(&rhs);
        if sol.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateFit(format!("non-finite weights for action {a}")));
        }
        for j in 0..k {
            weights[map.column(j, a)] = sol[j];
        }
    }
    Ok(QEstimate {
        weights,
        gain,
        clip: cfg.clip,
    })
}

/// Learning rate from the (possibly subsampled) prediction-error sum.
///
/// `values[s]` holds the clipped values `Q̂_{s+1}(x, ·)` of the past
/// estimates at the current state; the error terms are
/// `‖Q̂_s − Q̂_{s−1}‖∞²` with `Q̂_0 = 0`. With at most `n_max` terms the sum
/// is exact and no randomness is drawn; otherwise `n_max` terms are drawn
/// without replacement and scaled by `k / n_max`.
pub fn subsampled_rate<R: Rng + ?Sized>(
    values: &[Vec<f64>],
    n_max: usize,
    rate: Rate,
    rng: &mut R,
) -> Result<f64> {
    if n_max == 0 {
        return Err(invalid("subsample size must be positive"));
    }
    let k = values.len();
    let term = |s: usize| -> f64 {
        let d = if s == 0 {
            values[0].iter().map(|v| v.abs()).fold(0.0, f64::max)
        } else {
            values[s]
                .iter()
                .zip(&values[s - 1])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max)
        };
        d * d
    };
    let stat = if k <= n_max {
        (0..k).map(term).sum::<f64>()
    } else {
        let picked = rand::seq::index::sample(rng, k, n_max);
        let sum: f64 = picked.iter().map(term).sum();
        sum * k as f64 / n_max as f64
    };
    Ok(rate.at(stat))
}

/// `‖v‖_u = √(Σ u_i v_i²)`.
pub fn weighted_norm(v: &[f64], u: &[f64]) -> Result<f64> {
    if v.len() != u.len() {
        return Err(invalid("weighted norm needs equal lengths"));
    }
    if u.iter().any(|&w| w < 0.0) {
        return Err(invalid("weights must be non-negative"));
    }
    Ok(v.iter().zip(u).map(|(x, w)| w * x * x).sum::<f64>().sqrt())
}
