//! Learning agents and the phase-based interaction loop.

mod boltzmann;
mod rlsvi;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use boltzmann::BoltzmannAgent;
pub use rlsvi::{block_posterior, BlockPosterior, RlsviAgent};

use crate::envs::{Env, EnvKind, EnvSpec, Observation};
use crate::error::{invalid, Error, Result};
use crate::eval::{lsmc_fit, ClipRange, LsmcConfig, Trajectory, DEFAULT_SUBSAMPLE, DEFAULT_TMIX_GUESS};
use crate::ftrl::{Rate, DEFAULT_ETA_FLOOR};
use crate::mdp::Policy;

/// Stream of the environment's random numbers within a run.
pub const ENV_STREAM: u64 = 0;
/// Stream of the agent's random numbers within a run.
pub const AGENT_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Aapi,
    Kaapi,
    Politex,
    Rlsvi,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aapi" => Ok(Self::Aapi),
            "kaapi" => Ok(Self::Kaapi),
            "politex" => Ok(Self::Politex),
            "rlsvi" => Ok(Self::Rlsvi),
            other => Err(invalid(format!("unknown agent `{other}`"))),
        }
    }
}

/// Policy-evaluation settings of the Boltzmann agents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub horizon: Option<usize>,
    pub ridge: Option<f64>,
    pub t_mix_guess: f64,
    /// Fit on all trajectories so far instead of the last phase only.
    pub use_all_phases: bool,
    /// Past estimates sampled for the learning rate on non-tabular maps.
    pub subsample: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            horizon: None,
            ridge: None,
            t_mix_guess: DEFAULT_TMIX_GUESS,
            use_all_phases: false,
            subsample: DEFAULT_SUBSAMPLE,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RlsviConfig {
    pub sigma2: f64,
    pub prior_precision: f64,
    /// Episode length for DeepSea; defaults to `N`.
    pub episode_length: Option<usize>,
    /// Refit interval in continuing mode; defaults to `⌈√T⌉`.
    pub update_every: Option<usize>,
    /// Bootstrap discount of continuing-mode targets.
    pub discount: f64,
}

impl Default for RlsviConfig {
    fn default() -> Self {
        Self {
            sigma2: 1.0,
            prior_precision: 1.0,
            episode_length: None,
            update_every: None,
            discount: 0.99,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub variant: Variant,
    pub tau: usize,
    pub phases: usize,
    pub eta: f64,
    #[serde(default = "default_floor")]
    pub eta_floor: f64,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub rlsvi: RlsviConfig,
}

fn default_floor() -> f64 {
    DEFAULT_ETA_FLOOR
}

impl AgentConfig {
    pub fn new(variant: Variant, tau: usize, phases: usize, eta: f64) -> Self {
        Self {
            variant,
            tau,
            phases,
            eta,
            eta_floor: DEFAULT_ETA_FLOOR,
            eval: EvalConfig::default(),
            rlsvi: RlsviConfig::default(),
        }
    }

    /// Total number of steps `T = τ K`.
    pub fn total_steps(&self) -> usize {
        self.tau * self.phases
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau < 2 || self.phases == 0 {
            return Err(invalid("need tau >= 2 and at least one phase"));
        }
        if self.variant != Variant::Rlsvi && !(0.01..=1.0).contains(&self.eta) {
            return Err(invalid(format!("eta must lie in [0.01, 1], got {}", self.eta)));
        }
        if !(self.eta_floor > 0.0) {
            return Err(invalid("eta floor must be positive"));
        }
        Ok(())
    }
}

/// Samples an index from a probability vector with one uniform draw.
pub fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// Summary of one phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseInfo {
    pub phase: usize,
    /// Mean reward of the phase, `λ̂`.
    pub gain_estimate: f64,
    /// Learning-rate statistics over the steps of the phase.
    pub eta_mean: Option<f64>,
    pub eta_min: Option<f64>,
    pub eta_max: Option<f64>,
    /// Norm of the weights fitted at the end of the phase.
    pub weight_norm: Option<f64>,
    /// `max_x ‖π_{k+1}(·|x) − π_k(·|x)‖₁` on tabular environments.
    pub policy_change: Option<f64>,
}

/// Everything recorded during one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunResult {
    pub seed: u64,
    pub rewards: Vec<f64>,
    pub phases: Vec<PhaseInfo>,
    /// `π_1, …, π_K` on tabular environments for the Boltzmann agents.
    pub policies: Vec<Policy>,
}

impl RunResult {
    pub fn total_steps(&self) -> usize {
        self.rewards.len()
    }

    /// Mean reward over the whole run.
    pub fn average_reward(&self) -> f64 {
        self.rewards.iter().sum::<f64>() / self.rewards.len() as f64
    }
}

/// The per-run generators for the environment and the agent.
pub fn run_rngs(seed: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    env_rng.set_stream(ENV_STREAM);
    let mut agent_rng = ChaCha8Rng::seed_from_u64(seed);
    agent_rng.set_stream(AGENT_STREAM);
    (env_rng, agent_rng)
}

fn finite_observations(spec: &EnvSpec) -> Option<(Vec<Observation>, usize)> {
    match spec.kind {
        EnvKind::Tabular => Some(((0..spec.size).map(Observation::Index).collect(), spec.size)),
        EnvKind::DeepSea => {
            let n = spec.size;
            let cells = (0..n * n)
                .map(|i| Observation::Cell { row: i / n, col: i % n })
                .collect();
            Some((cells, n))
        }
        EnvKind::CartPole => None,
    }
}

fn in_phase(phase: usize) -> impl Fn(Error) -> Error {
    move |e| Error::InPhase {
        phase,
        source: Box::new(e),
    }
}

/// Runs one agent for `K` phases of `τ` steps from `seed`.
pub fn run_experiment(config: &AgentConfig, spec: &EnvSpec, seed: u64) -> Result<RunResult> {
    config.validate()?;
    let (mut env_rng, mut agent_rng) = run_rngs(seed);
    let env = Env::new(spec, &mut env_rng)?;
    match config.variant {
        Variant::Rlsvi => run_rlsvi(config, spec, env, seed, env_rng, agent_rng),
        _ => run_boltzmann(config, spec, env, seed, &mut env_rng, &mut agent_rng),
    }
}

fn run_boltzmann(
    config: &AgentConfig,
    spec: &EnvSpec,
    mut env: Env,
    seed: u64,
    env_rng: &mut ChaCha8Rng,
    agent_rng: &mut ChaCha8Rng,
) -> Result<RunResult> {
    let map = env.feature_map();
    let finite = finite_observations(spec);
    let shape = finite.as_ref().map(|(obs, w)| (obs.len(), *w));
    let rate = Rate::with_floor(config.eta, config.eta_floor);
    let mut agent = BoltzmannAgent::new(config.variant, map.clone(), rate, config.phases, config.eval.subsample, shape)?;
    let (lo, hi) = env.reward_range();
    let lsmc = LsmcConfig {
        horizon: config.eval.horizon,
        ridge: config.eval.ridge,
        clip: ClipRange::from_mixing_guess(config.eval.t_mix_guess, hi - lo)?,
    };
    let tabular_states = match spec.kind {
        EnvKind::Tabular => finite.as_ref().map(|(obs, _)| obs.clone()),
        _ => None,
    };

    let mut rewards = Vec::with_capacity(config.total_steps());
    let mut phases = Vec::with_capacity(config.phases);
    let mut policies = Vec::new();
    let mut trajectories: Vec<Trajectory> = Vec::new();
    for k in 0..config.phases {
        let wrap = in_phase(k);
        if let Some(states) = &tabular_states {
            policies.push(agent.policy_table(states, agent_rng).map_err(&wrap)?);
        }
        let mut traj = Trajectory::new(k, config.tau);
        let (mut eta_sum, mut eta_min, mut eta_max, mut eta_n) = (0.0, f64::INFINITY, 0.0f64, 0usize);
        for _ in 0..config.tau {
            let obs = env.observe();
            let (a, eta) = agent.act(&obs, agent_rng).map_err(&wrap)?;
            if let Some(e) = eta {
                eta_sum += e;
                eta_min = eta_min.min(e);
                eta_max = eta_max.max(e);
                eta_n += 1;
            }
            let r = env.step(a, env_rng).map_err(&wrap)?;
            traj.push(obs, a, r);
            rewards.push(r);
        }
        if !config.eval.use_all_phases {
            trajectories.clear();
        }
        trajectories.push(traj);
        let refs: Vec<&Trajectory> = trajectories.iter().collect();
        let estimate = lsmc_fit(&refs, &map, &lsmc).map_err(&wrap)?;
        let gain_estimate = estimate.gain;
        let weight_norm = estimate.weight_norm();
        agent.improve(estimate).map_err(&wrap)?;
        let policy_change = match (&tabular_states, policies.last()) {
            (Some(states), Some(prev)) => {
                let next = agent.policy_table(states, agent_rng).map_err(&wrap)?;
                Some(prev.max_l1_distance(&next)?)
            }
            _ => None,
        };
        let stat = |v: f64| (eta_n > 0).then_some(v);
        phases.push(PhaseInfo {
            phase: k,
            gain_estimate,
            eta_mean: stat(eta_sum / eta_n.max(1) as f64),
            eta_min: stat(eta_min),
            eta_max: stat(eta_max),
            weight_norm: Some(weight_norm),
            policy_change,
        });
    }
    Ok(RunResult {
        seed,
        rewards,
        phases,
        policies,
    })
}

fn run_rlsvi(
    config: &AgentConfig,
    spec: &EnvSpec,
    mut env: Env,
    seed: u64,
    mut env_rng: ChaCha8Rng,
    mut agent_rng: ChaCha8Rng,
) -> Result<RunResult> {
    let total = config.total_steps();
    let horizon = match spec.kind {
        EnvKind::DeepSea => Some(config.rlsvi.episode_length.unwrap_or(spec.size)),
        _ => None,
    };
    let every = config
        .rlsvi
        .update_every
        .unwrap_or_else(|| (total as f64).sqrt().ceil() as usize);
    let width = finite_observations(spec).map_or(0, |(_, w)| w);
    let mut agent = RlsviAgent::new(env.feature_map(), config.rlsvi, horizon, every, width, &mut agent_rng)?;
    let mut rewards = Vec::with_capacity(total);
    let mut phases = Vec::with_capacity(config.phases);
    for k in 0..config.phases {
        let wrap = in_phase(k);
        let mut sum = 0.0;
        for _ in 0..config.tau {
            let obs = env.observe();
            let a = agent.act(&obs).map_err(&wrap)?;
            let r = env.step(a, &mut env_rng).map_err(&wrap)?;
            let next = env.observe();
            agent.observe(&obs, a, r, &next, &mut agent_rng).map_err(&wrap)?;
            rewards.push(r);
            sum += r;
        }
        phases.push(PhaseInfo {
            phase: k,
            gain_estimate: sum / config.tau as f64,
            eta_mean: None,
            eta_min: None,
            eta_max: None,
            weight_norm: None,
            policy_change: None,
        });
    }
    Ok(RunResult {
        seed,
        rewards,
        phases,
        policies: Vec::new(),
    })
}
