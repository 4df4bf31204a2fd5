//! Exact checks of the lemmas behind the algorithm on small tabular
//! instances. Each check returns a [`LemmaReport`].

mod suites;

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

pub use suites::{gain_concentration_suite, relq_along_run, run_suite, GainSuiteConfig, Suite};

use crate::error::{invalid, Error, Result};
use crate::eval::max_row_norm;
use crate::ftrl::{regret_audit, Rate, SimplexPoint};
use crate::mdp::{
    average_reward, induced_transition, solve_q, stationary_distribution, MixingInfo, Policy,
    TabularMdp,
};

/// Tolerance of the performance-difference equality.
pub const PERF_DIFF_TOL: f64 = 1e-8;
/// Tolerance of the inequality checks.
pub const BOUND_TOL: f64 = 1e-9;
/// Tolerance of the sum inequality.
pub const SUM_TOL: f64 = 1e-12;

/// One evaluated lemma instance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub lhs: f64,
    pub rhs: f64,
    pub tolerance: f64,
    /// Distance to failure; negative exactly when the check fails.
    pub slack: f64,
    pub holds: bool,
    pub instance: String,
}

impl LemmaReport {
    /// `lhs ≤ rhs + tolerance`.
    pub fn inequality(lemma: &str, lhs: f64, rhs: f64, tolerance: f64, instance: String) -> Self {
        let slack = rhs + tolerance - lhs;
        Self {
            lemma: lemma.to_string(),
            lhs,
            rhs,
            tolerance,
            slack,
            holds: slack >= 0.0,
            instance,
        }
    }

    /// `|lhs − rhs| ≤ tolerance`.
    pub fn equality(lemma: &str, lhs: f64, rhs: f64, tolerance: f64, instance: String) -> Self {
        let slack = tolerance - (lhs - rhs).abs();
        Self {
            lemma: lemma.to_string(),
            lhs,
            rhs,
            tolerance,
            slack,
            holds: slack >= 0.0,
            instance,
        }
    }
}

/// Writes one JSON object per line.
pub fn write_jsonl<W: Write>(reports: &[LemmaReport], mut out: W) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Bellman residual of the exact solve, against the acceptance tolerance.
pub fn bellman_residual(mdp: &TabularMdp, pi: &Policy, instance: String) -> Result<LemmaReport> {
    let q = solve_q(mdp, pi)?;
    Ok(LemmaReport::inequality(
        "bellman",
        q.bellman_residual(mdp),
        crate::mdp::RESIDUAL_TOL,
        0.0,
        instance,
    ))
}

/// `λ_π − λ_π̂ = Σ_{x,a} μ_π(x) (π(a|x) − π̂(a|x)) Q_π̂(x, a)`.
pub fn performance_difference(
    mdp: &TabularMdp,
    pi: &Policy,
    pihat: &Policy,
    instance: String,
) -> Result<LemmaReport> {
    let lhs = average_reward(mdp, pi)? - average_reward(mdp, pihat)?;
    let mu = stationary_distribution(&induced_transition(mdp, pi)?)?.mu;
    let q = solve_q(mdp, pihat)?;
    let mut rhs = 0.0;
    for (x, m) in mu.iter().enumerate() {
        for a in 0..mdp.n_actions() {
            rhs += m * (pi.prob(x, a) - pihat.prob(x, a)) * q.q(x, a);
        }
    }
    Ok(LemmaReport::equality("performance_difference", lhs, rhs, PERF_DIFF_TOL, instance))
}

/// `max |Q_next − Q_prev| ≤ t² log₂²(K) max_x ‖π_prev(·|x) − π_next(·|x)‖₁ + 2/K³`
/// with `t = ⌈t_mix⌉` from the contraction constant.
pub fn relative_q_bound(
    mdp: &TabularMdp,
    mixing: &MixingInfo,
    pi_prev: &Policy,
    pi_next: &Policy,
    phases: usize,
    instance: String,
) -> Result<LemmaReport> {
    if phases < 2 {
        return Err(invalid("the relative Q bound needs K >= 2"));
    }
    let q_prev = solve_q(mdp, pi_prev)?;
    let q_next = solve_q(mdp, pi_next)?;
    let lhs = q_prev
        .q
        .iter()
        .zip(&q_next.q)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let t = mixing.t_mix_condition2.ceil();
    let log_k = (phases as f64).log2();
    let k = phases as f64;
    let rhs = t * t * log_k * log_k * pi_prev.max_l1_distance(pi_next)? + 2.0 / (k * k * k);
    Ok(LemmaReport::inequality("relative_q", lhs, rhs, BOUND_TOL, instance))
}

/// Right side of the gain concentration bound,
/// `K t + 4√2 t √(K T log(T/δ))`.
pub fn gain_concentration_rhs(phases: usize, steps: usize, t_mix: f64, delta: f64) -> f64 {
    let (k, t) = (phases as f64, steps as f64);
    k * t_mix + 4.0 * 2f64.sqrt() * t_mix * (k * t * (t / delta).ln()).sqrt()
}

/// `|Σ_t (λ_{π_t} − r_t)|` against [`gain_concentration_rhs`], for a run whose
/// policy is constant on consecutive blocks of equal length.
pub fn empirical_gain_concentration(
    rewards: &[f64],
    mdp: &TabularMdp,
    policies: &[Policy],
    t_mix: f64,
    delta: f64,
    instance: String,
) -> Result<LemmaReport> {
    let t = rewards.len();
    let k = policies.len();
    if k == 0 || t == 0 || t % k != 0 {
        return Err(invalid(format!("{t} rewards cannot be split into {k} equal phases")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid("delta must lie in (0, 1)"));
    }
    let tau = t / k;
    let mut sum = 0.0;
    for (pi, chunk) in policies.iter().zip(rewards.chunks(tau)) {
        let gain = average_reward(mdp, pi)?;
        sum += chunk.iter().map(|r| gain - r).sum::<f64>();
    }
    let rhs = gain_concentration_rhs(k, t, t_mix, delta);
    Ok(LemmaReport::inequality("gain_concentration", sum.abs(), rhs, 0.0, instance))
}

/// Checks `max_i |ψ_iᵀ(ŵ − w)| ≤ C_Ψ ‖Ψ(ŵ − w)‖_ν / √σ` with
/// `σ = λ_min(Ψᵀ diag(ν) Ψ)` and `C_Ψ` the largest row norm of `Ψ`.
pub fn linf_weighted_bound(
    psi: &DMatrix<f64>,
    nu: &[f64],
    w: &[f64],
    what: &[f64],
    instance: String,
) -> Result<LemmaReport> {
    let (rows, d) = psi.shape();
    if nu.len() != rows || w.len() != d || what.len() != d {
        return Err(invalid("feature matrix, weights and distribution disagree"));
    }
    if nu.iter().any(|&v| v < 0.0) {
        return Err(invalid("weights of the norm must be non-negative"));
    }
    let mut gram = DMatrix::zeros(d, d);
    for (i, row) in psi.row_iter().enumerate() {
        gram += nu[i] * row.transpose() * row;
    }
    let sigma = SymmetricEigen::new(gram).eigenvalues.min();
    if !(sigma > 0.0) {
        return Err(Error::ExcitationViolation(format!("λ_min = {sigma}")));
    }
    let diff = nalgebra::DVector::from_iterator(d, what.iter().zip(w).map(|(a, b)| a - b));
    let err = psi * diff;
    let lhs = err.amax();
    let weighted = crate::eval::weighted_norm(err.as_slice(), nu)?;
    let rhs = max_row_norm(psi) * weighted / sigma.sqrt();
    Ok(LemmaReport::inequality("linf_weighted", lhs, rhs, BOUND_TOL, instance))
}

/// `Σ_t a_t / √(Σ_{s≤t} a_s) ≤ 2 √(Σ_t a_t)`, skipping terms whose prefix
/// sum is zero.
pub fn mcmahan_sum(a: &[f64], instance: String) -> Result<LemmaReport> {
    if a.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(invalid("the sum inequality needs finite non-negative terms"));
    }
    let mut prefix = 0.0;
    let mut lhs = 0.0;
    for &v in a {
        prefix += v;
        if prefix > 0.0 {
            lhs += v / prefix.sqrt();
        }
    }
    Ok(LemmaReport::inequality("mcmahan_sum", lhs, 2.0 * prefix.sqrt(), SUM_TOL, instance))
}

/// Regret of an AO-FTRL stream against the best fixed action, using
/// the previous payoff as side-information.
pub fn aoftrl_audit(losses: &[Vec<f64>], rate: Rate, instance: String) -> Result<LemmaReport> {
    let n = losses.first().map(Vec::len).ok_or_else(|| invalid("empty stream"))?;
    let (plays, _) = crate::ftrl::play_stream(losses, losses, rate)?;
    let mut side = Vec::with_capacity(losses.len() + 1);
    side.push(vec![0.0; n]);
    side.extend(losses.iter().cloned());
    let comparator: SimplexPoint = crate::ftrl::best_vertex(losses)?;
    let audit = regret_audit(losses, &side, &plays, &comparator, rate)?;
    Ok(LemmaReport::inequality("aoftrl_regret", audit.regret, audit.bound, BOUND_TOL, instance))
}

/// Cumulative regret and its two components at every step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretCurves {
    /// `Σ_{s≤t} (λ* − r_s)`.
    pub total: Vec<f64>,
    /// `Σ_{s≤t} (λ_{π_s} − r_s)`.
    pub noise: Vec<f64>,
    /// `Σ_{s≤t} (λ* − λ_{π_s})`.
    pub pseudo: Vec<f64>,
}

impl RegretCurves {
    /// Largest violation of `total = noise + pseudo`.
    pub fn identity_error(&self) -> f64 {
        self.total
            .iter()
            .zip(self.noise.iter().zip(&self.pseudo))
            .map(|(t, (n, p))| (t - n - p).abs())
            .fold(0.0, f64::max)
    }
}

/// Regret decomposition of a run with phase policies `policies` against
/// the optimal gain `optimal_gain`.
pub fn regret_curves(
    rewards: &[f64],
    mdp: &TabularMdp,
    policies: &[Policy],
    optimal_gain: f64,
) -> Result<RegretCurves> {
    let t = rewards.len();
    let k = policies.len();
    if k == 0 || t % k != 0 {
        return Err(invalid(format!("{t} rewards cannot be split into {k} equal phases")));
    }
    let tau = t / k;
    let gains = policies
        .iter()
        .map(|pi| average_reward(mdp, pi))
        .collect::<Result<Vec<_>>>()?;
    let mut curves = RegretCurves {
        total: Vec::with_capacity(t),
        noise: Vec::with_capacity(t),
        pseudo: Vec::with_capacity(t),
    };
    let (mut total, mut noise, mut pseudo) = (0.0, 0.0, 0.0);
    for (s, r) in rewards.iter().enumerate() {
        let g = gains[s / tau];
        noise += g - r;
        pseudo += optimal_gain - g;
        total += optimal_gain - r;
        curves.total.push(total);
        curves.noise.push(noise);
        curves.pseudo.push(pseudo);
    }
    Ok(curves)
}

#[cfg(test)]
mod tests;
