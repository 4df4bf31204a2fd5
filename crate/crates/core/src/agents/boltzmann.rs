//! Phase-based agents whose policies are Boltzmann distributions over the
//! sum of past action-value estimates.

use rand::Rng;

use super::{sample_index, Variant};
use crate::envs::Observation;
use crate::error::{Error, Result};
use crate::eval::{subsampled_rate, FeatureMap, QEstimate};
use crate::ftrl::{boltzmann, LearnerState, Rate};
use crate::mdp::Policy;

/// AAPI, k-AAPI or POLITEX.
///
/// Policies are never materialized: `π_{k+1}(·|x)` is recomputed from the
/// stored weight vectors whenever `x` is visited. For finite observation
/// spaces the result is memoized until the next improvement, as long as
/// computing it draws no randomness.
#[derive(Debug, Clone)]
pub struct BoltzmannAgent {
    variant: Variant,
    map: FeatureMap,
    rate: Rate,
    phases: usize,
    subsample: usize,
    exact: bool,
    history: Vec<QEstimate>,
    cache: Vec<Option<(Vec<f64>, f64)>>,
    width: usize,
    psi: Vec<f64>,
}

impl BoltzmannAgent {
    /// `n_obs` and `width` describe a finite observation space (see
    /// [`Observation::index`]); pass `None` for continuous ones.
    pub fn new(
        variant: Variant,
        map: FeatureMap,
        rate: Rate,
        phases: usize,
        subsample: usize,
        n_obs: Option<(usize, usize)>,
    ) -> Result<Self> {
        if variant == Variant::Rlsvi {
            return Err(crate::error::invalid("RLSVI is not a Boltzmann agent"));
        }
        if phases == 0 || subsample == 0 {
            return Err(crate::error::invalid("need at least one phase and a positive subsample"));
        }
        let exact = matches!(map, FeatureMap::Tabular { .. });
        let (len, width) = n_obs.unwrap_or((0, 0));
        let psi = vec![0.0; map.state_dim()];
        Ok(Self {
            variant,
            map,
            rate,
            phases,
            subsample,
            exact,
            history: Vec::new(),
            cache: vec![None; len],
            width,
            psi,
        })
    }

    pub fn map(&self) -> &FeatureMap {
        &self.map
    }

    /// Number of improvements so far; the current policy is `π_{k+1}`.
    pub fn phase(&self) -> usize {
        self.history.len()
    }

    pub fn history(&self) -> &[QEstimate] {
        &self.history
    }

    /// Appends the estimate for the phase just completed.
    pub fn improve(&mut self, estimate: QEstimate) -> Result<()> {
        if self.history.len() == self.phases {
            return Err(Error::PhaseOverflow(self.phases));
        }
        if estimate.weights.len() != self.map.dim() {
            return Err(crate::error::invalid("estimate does not match the feature map"));
        }
        self.history.push(estimate);
        self.cache.iter_mut().for_each(|c| *c = None);
        Ok(())
    }

    fn deterministic(&self) -> bool {
        self.exact || self.history.len() <= self.subsample
    }

    /// `π_{k+1}(·|x)` and the learning rate used (`None` before the first
    /// improvement).
    pub fn policy<R: Rng + ?Sized>(
        &mut self,
        obs: &Observation,
        rng: &mut R,
    ) -> Result<(Vec<f64>, Option<f64>)> {
        let m = self.map.n_actions();
        let k = self.history.len();
        if k == 0 {
            return Ok((vec![1.0 / m as f64; m], None));
        }
        let slot = obs.index(self.width).filter(|&i| i < self.cache.len());
        if let Some(i) = slot {
            if let Some((p, eta)) = &self.cache[i] {
                return Ok((p.clone(), Some(*eta)));
            }
        }
        self.map.state_features_into(obs, &mut self.psi)?;
        let values: Vec<Vec<f64>> = self
            .history
            .iter()
            .map(|est| {
                let mut v = vec![0.0; m];
                est.values_into(&self.map, &self.psi, &mut v);
                v
            })
            .collect();
        let (probs, eta) = self.from_values(&values, rng)?;
        if let Some(i) = slot {
            if self.deterministic() {
                self.cache[i] = Some((probs.clone(), eta));
            }
        }
        Ok((probs, Some(eta)))
    }

    fn from_values<R: Rng + ?Sized>(&self, values: &[Vec<f64>], rng: &mut R) -> Result<(Vec<f64>, f64)> {
        let k = values.len();
        if self.variant == Variant::Aapi && self.exact {
            let mut state = LearnerState::new(values[0].len());
            let mut out = None;
            for q in values {
                let eta = state.learning_rate(q, self.rate)?;
                let (f, next) = state.step(q, q, self.rate)?;
                out = Some((f.into_vec(), eta));
                state = next;
            }
            return Ok(out.expect("non-empty history"));
        }
        let mut index = values.iter().fold(vec![0.0; values[0].len()], |mut acc, q| {
            acc.iter_mut().zip(q).for_each(|(a, v)| *a += v);
            acc
        });
        let eta = match self.variant {
            Variant::Aapi => subsampled_rate(values, self.subsample, self.rate, rng)?,
            Variant::Kaapi => (self.rate.eta * (k as f64).sqrt()).max(self.rate.floor),
            Variant::Politex => (self.rate.eta / (self.phases as f64).sqrt()).max(self.rate.floor),
            Variant::Rlsvi => unreachable!(),
        };
        if self.variant != Variant::Politex {
            index.iter_mut().zip(&values[k - 1]).for_each(|(a, m)| *a += m);
        }
        Ok((boltzmann(&index, eta)?.into_vec(), eta))
    }

    /// Samples an action from the current policy.
    pub fn act<R: Rng + ?Sized>(&mut self, obs: &Observation, rng: &mut R) -> Result<(usize, Option<f64>)> {
        let (probs, eta) = self.policy(obs, rng)?;
        Ok((sample_index(&probs, rng), eta))
    }

    /// The current policy over a finite set of observations.
    pub fn policy_table<R: Rng + ?Sized>(&mut self, states: &[Observation], rng: &mut R) -> Result<Policy> {
        let rows = states
            .iter()
            .map(|o| self.policy(o, rng).map(|(p, _)| p))
            .collect::<Result<Vec<_>>>()?;
        Policy::from_rows(rows)
    }
}
