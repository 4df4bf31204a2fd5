//! Randomized batches of lemma checks, reproducible from `(seed, trial)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::*;
use crate::agents::{run_experiment, AgentConfig, Variant};
use crate::envs::{EnvSpec, TabularErgodic};
use crate::mdp::{mixing_time_bound, perturb_policy, random_mdp, random_policy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    Bellman,
    Perfdiff,
    Relq,
    Aoftrl,
    Linf,
    Mcmahan,
    Gain,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Bellman,
        Suite::Perfdiff,
        Suite::Relq,
        Suite::Aoftrl,
        Suite::Linf,
        Suite::Mcmahan,
        Suite::Gain,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Suite::Bellman => "bellman",
            Suite::Perfdiff => "perfdiff",
            Suite::Relq => "relq",
            Suite::Aoftrl => "aoftrl",
            Suite::Linf => "linf",
            Suite::Mcmahan => "mcmahan",
            Suite::Gain => "gain",
        }
    }
}

impl std::str::FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == s)
            .ok_or_else(|| invalid(format!("unknown suite `{s}`")))
    }
}

/// Generator of trial `trial` under `seed`.
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64);
    rng
}

fn describe(suite: Suite, seed: u64, trial: usize, extra: String) -> String {
    format!("suite={} seed={seed} trial={trial} {extra}", suite.name())
}

/// Runs `trials` random instances of a suite. Trials run in parallel;
/// the output order is the trial order.
pub fn run_suite(suite: Suite, trials: usize, seed: u64) -> Result<Vec<LemmaReport>> {
    if suite == Suite::Gain {
        return gain_concentration_suite(&GainSuiteConfig::default(), trials, seed);
    }
    (0..trials)
        .into_par_iter()
        .map(|trial| one_trial(suite, seed, trial))
        .collect()
}

fn one_trial(suite: Suite, seed: u64, trial: usize) -> Result<LemmaReport> {
    let mut rng = trial_rng(seed, trial);
    match suite {
        Suite::Bellman => {
            let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=4));
            let mdp = random_mdp(n, m, 0.05, &mut rng);
            let pi = random_policy(n, m, &mut rng);
            bellman_residual(&mdp, &pi, describe(suite, seed, trial, format!("n={n} m={m}")))
        }
        Suite::Perfdiff => {
            let (n, m) = (rng.random_range(1..=6), rng.random_range(1..=4));
            let mdp = random_mdp(n, m, 0.05, &mut rng);
            let pi = random_policy(n, m, &mut rng);
            let pihat = random_policy(n, m, &mut rng);
            performance_difference(&mdp, &pi, &pihat, describe(suite, seed, trial, format!("n={n} m={m}")))
        }
        Suite::Relq => {
            let (n, m) = (rng.random_range(2..=5), rng.random_range(2..=3));
            let floor = rng.random_range(0.1..0.5);
            let mdp = random_mdp(n, m, floor, &mut rng);
            let mixing = mixing_time_bound(&mdp)?;
            if mixing.beta_max > 0.9 {
                return Err(Error::Numeric(format!("instance has β* = {} > 0.9", mixing.beta_max)));
            }
            let prev = random_policy(n, m, &mut rng);
            let alpha = rng.random_range(0.0..=0.1);
            let next = perturb_policy(&prev, alpha, &mut rng);
            let extra = format!("n={n} m={m} floor={floor} alpha={alpha} beta={}", mixing.beta_max);
            relative_q_bound(&mdp, &mixing, &prev, &next, 64, describe(suite, seed, trial, extra))
        }
        Suite::Aoftrl => {
            let (k, n) = (200, 5);
            let losses: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
                .collect();
            let rate = Rate::new(1.0 / (n as f64).ln().sqrt());
            aoftrl_audit(&losses, rate, describe(suite, seed, trial, format!("K={k} actions={n}")))
        }
        Suite::Linf => {
            let (n, m) = (rng.random_range(1..=4), rng.random_range(1..=3));
            let rows = n * m;
            let d = rng.random_range(1..=rows.min(8));
            let mdp = random_mdp(n, m, 0.05, &mut rng);
            let pi = random_policy(n, m, &mut rng);
            let mu = stationary_distribution(&induced_transition(&mdp, &pi)?)?.mu;
            let nu: Vec<f64> = (0..rows).map(|i| mu[i / m] * pi.prob(i / m, i % m)).collect();
            let mut gauss = || rng.random_range(-1.0..1.0) + rng.random_range(-1.0..1.0);
            let psi = DMatrix::from_fn(rows, d, |_, _| gauss());
            let w: Vec<f64> = (0..d).map(|_| gauss()).collect();
            let what: Vec<f64> = (0..d).map(|_| gauss()).collect();
            linf_weighted_bound(&psi, &nu, &w, &what, describe(suite, seed, trial, format!("rows={rows} d={d}")))
        }
        Suite::Mcmahan => {
            let len = rng.random_range(1..=50);
            let scale = 10f64.powf(rng.random_range(-3.0..3.0));
            let a: Vec<f64> = (0..len)
                .map(|_| {
                    if rng.random::<f64>() < 0.2 {
                        0.0
                    } else {
                        scale * rng.random::<f64>().powi(3)
                    }
                })
                .collect();
            mcmahan_sum(&a, describe(suite, seed, trial, format!("len={len}")))
        }
        Suite::Gain => unreachable!("gain trials are whole runs"),
    }
}

/// Setup of the gain concentration suite.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSuiteConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub agent: AgentConfig,
    pub delta: f64,
}

impl Default for GainSuiteConfig {
    fn default() -> Self {
        Self {
            n_states: 5,
            n_actions: 2,
            agent: AgentConfig::new(Variant::Aapi, 500, 400, crate::DEFAULT_TABULAR_ETA),
            delta: 0.05,
        }
    }
}

/// One report per seeded run (`seed + trial`) of the agent on the tabular
/// chain, with the contraction-based mixing constant of the chain.
pub fn gain_concentration_suite(cfg: &GainSuiteConfig, trials: usize, seed: u64) -> Result<Vec<LemmaReport>> {
    let mdp = TabularErgodic::new(cfg.n_states, cfg.n_actions)?.model();
    let mixing = mixing_time_bound(&mdp)?;
    let spec = EnvSpec::tabular(cfg.n_states, cfg.n_actions);
    (0..trials)
        .into_par_iter()
        .map(|trial| {
            let run_seed = seed.wrapping_add(trial as u64);
            let run = run_experiment(&cfg.agent, &spec, run_seed)?;
            let extra = format!("run_seed={run_seed} t_mix={}", mixing.t_mix_condition2);
            empirical_gain_concentration(
                &run.rewards,
                &mdp,
                &run.policies,
                mixing.t_mix_condition2,
                cfg.delta,
                describe(Suite::Gain, seed, trial, extra),
            )
        })
        .collect()
}

/// Relative Q checks between every pair of consecutive policies of a run.
pub fn relq_along_run(mdp: &TabularMdp, policies: &[Policy], phases: usize) -> Result<Vec<LemmaReport>> {
    let mixing = mixing_time_bound(mdp)?;
    policies
        .windows(2)
        .enumerate()
        .map(|(k, pair)| {
            relative_q_bound(mdp, &mixing, &pair[0], &pair[1], phases, format!("phase={}", k + 1))
        })
        .collect()
}
