//! Randomized least-squares value iteration.
//!
//! Bayesian linear regression with noise variance `σ²` and an isotropic
//! Gaussian prior of precision `λ`. Features are action-blocked, so the
//! posterior factors into one independent Gaussian per action block.

use std::collections::BTreeMap;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;

use super::RlsviConfig;
use crate::envs::Observation;
use crate::error::{invalid, Error, Result};
use crate::eval::FeatureMap;

/// Posterior of one action block: `(G + λI)^{-1} b` and the Cholesky
/// factor of `G + λI`.
pub struct BlockPosterior {
    pub mean: DVector<f64>,
    pub chol: Cholesky<f64, Dyn>,
}

/// Posterior for `y = ψᵀθ + ε`, `ε ~ N(0, σ²)`, `θ ~ N(0, σ²/λ · I)`:
/// mean `(G + λI)^{-1} b`, covariance `σ² (G + λI)^{-1}`.
pub fn block_posterior(gram: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<BlockPosterior> {
    let mut a = gram.clone();
    for i in 0..a.nrows() {
        a[(i, i)] += lambda;
    }
    let chol = a
        .cholesky()
        .ok_or_else(|| Error::Numeric(format!("posterior precision is not invertible (λ = {lambda})")))?;
    let mean = chol.solve(rhs);
    Ok(BlockPosterior { mean, chol })
}

impl BlockPosterior {
    /// Draw from `N(mean, σ² (G + λI)^{-1})`.
    pub fn sample<R: Rng + ?Sized>(&self, sigma2: f64, rng: &mut R) -> DVector<f64> {
        let n = self.mean.len();
        let z = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        // (G + λI) = L Lᵀ, so L^{-T} z has covariance (G + λI)^{-1}
        let mut noise = z;
        let l = self.chol.l();
        l.tr_solve_lower_triangular_mut(&mut noise);
        &self.mean + noise * sigma2.sqrt()
    }
}

/// Sufficient statistics of one regression (one parameter vector).
#[derive(Debug, Clone)]
struct Stats {
    gram: Vec<DMatrix<f64>>,
    rhs: Vec<DVector<f64>>,
    /// `Σ ψ(x)` grouped by (action, next observation) for re-targeting.
    next: BTreeMap<(usize, usize), (Observation, DVector<f64>)>,
}

impl Stats {
    fn new(k: usize, m: usize) -> Self {
        Self {
            gram: vec![DMatrix::zeros(k, k); m],
            rhs: vec![DVector::zeros(k); m],
            next: BTreeMap::new(),
        }
    }

    fn add(&mut self, psi: &DVector<f64>, a: usize, y: f64) {
        self.gram[a].ger(1.0, psi, psi, 1.0);
        self.rhs[a].axpy(y, psi, 1.0);
    }
}

enum Mode {
    /// Separate parameters per step-in-episode, refit after every episode.
    Episodic { horizon: usize },
    /// Shared parameters, refit every `every` steps on newly absorbed data.
    Continuing { every: usize, pending: Vec<(DVector<f64>, usize, f64, Observation)> },
}

pub struct RlsviAgent {
    map: FeatureMap,
    cfg: RlsviConfig,
    mode: Mode,
    stats: Vec<Stats>,
    params: Vec<Vec<f64>>,
    width: usize,
    t: usize,
    updates: usize,
}

impl RlsviAgent {
    /// `horizon` selects episodic mode; otherwise parameters are refit every
    /// `update_every` steps.
    pub fn new<R: Rng + ?Sized>(
        map: FeatureMap,
        cfg: RlsviConfig,
        horizon: Option<usize>,
        update_every: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if !(cfg.sigma2 > 0.0) || !(cfg.prior_precision > 0.0) {
            return Err(invalid("RLSVI needs σ² > 0 and λ > 0"));
        }
        if !(0.0..=1.0).contains(&cfg.discount) {
            return Err(invalid("discount must lie in [0, 1]"));
        }
        let (mode, n_params) = match horizon {
            Some(h) if h >= 1 => (Mode::Episodic { horizon: h }, h),
            Some(_) => return Err(invalid("episode length must be positive")),
            None if update_every >= 1 => (
                Mode::Continuing {
                    every: update_every,
                    pending: Vec::new(),
                },
                1,
            ),
            None => return Err(invalid("update interval must be positive")),
        };
        let (k, m) = (map.state_dim(), map.n_actions());
        let mut agent = Self {
            stats: vec![Stats::new(k, m); n_params],
            params: vec![vec![0.0; map.dim()]; n_params],
            map,
            cfg,
            mode,
            width,
            t: 0,
            updates: 0,
        };
        for h in 0..n_params {
            agent.params[h] = agent.sample_params(&agent.stats[h], rng)?;
        }
        Ok(agent)
    }

    pub fn updates(&self) -> usize {
        self.updates
    }

    /// The current sampled parameters for step-in-episode `h`.
    pub fn params(&self, h: usize) -> &[f64] {
        &self.params[h]
    }

    fn current_h(&self) -> usize {
        match self.mode {
            Mode::Episodic { horizon } => self.t % horizon,
            Mode::Continuing { .. } => 0,
        }
    }

    fn sample_params<R: Rng + ?Sized>(&self, stats: &Stats, rng: &mut R) -> Result<Vec<f64>> {
        let k = self.map.state_dim();
        let mut theta = vec![0.0; self.map.dim()];
        for a in 0..self.map.n_actions() {
            let post = block_posterior(&stats.gram[a], &stats.rhs[a], self.cfg.prior_precision)?;
            let draw = post.sample(self.cfg.sigma2, rng);
            theta[a * k..(a + 1) * k].copy_from_slice(draw.as_slice());
        }
        Ok(theta)
    }

    fn max_value(&self, obs: &Observation, theta: &[f64]) -> Result<f64> {
        let psi = self.map.state_features(obs)?;
        Ok((0..self.map.n_actions())
            .map(|a| self.map.value(&psi, a, theta))
            .fold(f64::NEG_INFINITY, f64::max))
    }

    /// Greedy action on the sampled parameters, ties to the lowest index.
    pub fn act(&self, obs: &Observation) -> Result<usize> {
        let psi = self.map.state_features(obs)?;
        let theta = &self.params[self.current_h()];
        let mut best = (0, f64::NEG_INFINITY);
        for a in 0..self.map.n_actions() {
            let v = self.map.value(&psi, a, theta);
            if v > best.1 {
                best = (a, v);
            }
        }
        Ok(best.0)
    }

    /// Records one transition and refits when an update is due.
    pub fn observe<R: Rng + ?Sized>(
        &mut self,
        obs: &Observation,
        a: usize,
        r: f64,
        next: &Observation,
        rng: &mut R,
    ) -> Result<()> {
        if a >= self.map.n_actions() {
            return Err(invalid(format!("action {a} out of range")));
        }
        let h = self.current_h();
        let psi = DVector::from_vec(self.map.state_features(obs)?);
        self.t += 1;
        match &mut self.mode {
            Mode::Episodic { horizon } => {
                let horizon = *horizon;
                let stats = &mut self.stats[h];
                stats.add(&psi, a, r);
                let key = next
                    .index(self.width)
                    .ok_or_else(|| invalid("episodic RLSVI needs a finite observation space"))?;
                stats
                    .next
                    .entry((a, key))
                    .and_modify(|(_, s)| *s += &psi)
                    .or_insert((*next, psi));
                if self.t % horizon == 0 {
                    self.refit_episodic(rng)?;
                }
            }
            Mode::Continuing { every, pending } => {
                pending.push((psi, a, r, *next));
                if self.t % *every == 0 {
                    self.refit_continuing(rng)?;
                }
            }
        }
        Ok(())
    }

    fn refit_episodic<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let horizon = self.stats.len();
        let mut later: Option<Vec<f64>> = None;
        for h in (0..horizon).rev() {
            let mut stats = self.stats[h].clone();
            if let Some(theta) = &later {
                for ((a, _), (obs, sum)) in &self.stats[h].next {
                    let v = self.max_value(obs, theta)?;
                    stats.rhs[*a].axpy(v, sum, 1.0);
                }
            }
            let theta = self.sample_params(&stats, rng)?;
            self.params[h] = theta.clone();
            later = Some(theta);
        }
        self.updates += 1;
        Ok(())
    }

    fn refit_continuing<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<()> {
        let Mode::Continuing { pending, .. } = &mut self.mode else {
            unreachable!()
        };
        let batch = std::mem::take(pending);
        for (psi, a, r, next) in &batch {
            let y = r + self.cfg.discount * self.max_value(next, &self.params[0])?;
            self.stats[0].add(psi, *a, y);
        }
        self.params[0] = self.sample_params(&self.stats[0], rng)?;
        self.updates += 1;
        Ok(())
    }
}
