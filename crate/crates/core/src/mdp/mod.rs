//! Exact algebra for finite MDPs under the average-reward criterion.
//!
//! Everything here works on dense matrices and is meant for small instances
//! (tens of states): induced chains, stationary distributions, gains, the
//! differential Bellman equation and mixing diagnostics. The learning code
//! never touches this module; it exists to provide ground truth.

mod random;

pub use random::{perturb_policy, random_mdp, random_policy};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Row sums of transition kernels and policies must hit 1 within this.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Residual tolerance for stationary distributions and Bellman solves.
pub const RESIDUAL_TOL: f64 = 1e-10;
/// Power iteration and the direct solve must agree to this (L-infinity).
pub const CROSS_CHECK_TOL: f64 = 1e-8;

const POWER_ITER_CAP: usize = 1_000_000;
const POWER_ITER_TOL: f64 = 1e-12;
const ENUMERATION_CAP: f64 = 1e6;
const TMIX_STEP_CAP: usize = 1_000_000;

/// A finite MDP with rewards in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpFile", into = "MdpFile")]
pub struct TabularMdp {
    n_states: usize,
    n_actions: usize,
    /// Flattened `P[x][a][x']`.
    transition: Vec<f64>,
    /// Flattened `r[x][a]`.
    reward: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct MdpFile {
    n_states: usize,
    n_actions: usize,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
}

impl TryFrom<MdpFile> for TabularMdp {
    type Error = Error;

    fn try_from(f: MdpFile) -> Result<Self> {
        let mdp = TabularMdp::from_nested(f.transition, f.reward)?;
        if mdp.n_states != f.n_states || mdp.n_actions != f.n_actions {
            return Err(invalid(format!(
                "declared shape {}x{} does not match arrays {}x{}",
                f.n_states, f.n_actions, mdp.n_states, mdp.n_actions
            )));
        }
        Ok(mdp)
    }
}

impl From<TabularMdp> for MdpFile {
    fn from(m: TabularMdp) -> Self {
        let transition = (0..m.n_states)
            .map(|x| (0..m.n_actions).map(|a| m.next_dist(x, a).to_vec()).collect())
            .collect();
        let reward = (0..m.n_states)
            .map(|x| (0..m.n_actions).map(|a| m.reward(x, a)).collect())
            .collect();
        MdpFile {
            n_states: m.n_states,
            n_actions: m.n_actions,
            transition,
            reward,
        }
    }
}

fn check_distribution(row: &[f64], what: &str) -> Result<()> {
    if row.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(invalid(format!("{what} has a negative or non-finite entry")));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

impl TabularMdp {
    /// Builds an MDP from a flattened `P[x][a][x']` tensor and `r[x][a]` table.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Vec<f64>,
        reward: Vec<f64>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("an MDP needs at least one state and one action"));
        }
        if transition.len() != n_states * n_actions * n_states {
            return Err(invalid(format!(
                "transition tensor has {} entries, expected {}",
                transition.len(),
                n_states * n_actions * n_states
            )));
        }
        if reward.len() != n_states * n_actions {
            return Err(invalid(format!(
                "reward table has {} entries, expected {}",
                reward.len(),
                n_states * n_actions
            )));
        }
        for (i, row) in transition.chunks(n_states).enumerate() {
            check_distribution(row, &format!("P[{}][{}]", i / n_actions, i % n_actions))?;
        }
        if let Some(r) = reward.iter().find(|r| !(0.0..=1.0).contains(*r)) {
            return Err(invalid(format!("reward {r} outside [0, 1]")));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
        })
    }

    /// Builds an MDP from nested `transition[x][a][x']` and `reward[x][a]` arrays.
    pub fn from_nested(transition: Vec<Vec<Vec<f64>>>, reward: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = transition.len();
        let n_actions = transition.first().map_or(0, Vec::len);
        if reward.len() != n_states {
            return Err(invalid("reward and transition disagree on the state count"));
        }
        let mut flat = Vec::with_capacity(n_states * n_actions * n_states);
        for per_state in &transition {
            if per_state.len() != n_actions {
                return Err(invalid("ragged action dimension in transition"));
            }
            for row in per_state {
                if row.len() != n_states {
                    return Err(invalid("ragged next-state dimension in transition"));
                }
                flat.extend_from_slice(row);
            }
        }
        let mut r = Vec::with_capacity(n_states * n_actions);
        for row in &reward {
            if row.len() != n_actions {
                return Err(invalid("ragged action dimension in reward"));
            }
            r.extend_from_slice(row);
        }
        Self::new(n_states, n_actions, flat, r)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// `P[x][a][·]`.
    pub fn next_dist(&self, x: usize, a: usize) -> &[f64] {
        let start = (x * self.n_actions + a) * self.n_states;
        &self.transition[start..start + self.n_states]
    }

    pub fn reward(&self, x: usize, a: usize) -> f64 {
        self.reward[x * self.n_actions + a]
    }

    /// Same dynamics, new reward table.
    pub fn with_rewards(&self, reward: Vec<f64>) -> Result<Self> {
        Self::new(self.n_states, self.n_actions, self.transition.clone(), reward)
    }

    fn check_policy(&self, pi: &Policy) -> Result<()> {
        if pi.n_states != self.n_states || pi.n_actions != self.n_actions {
            return Err(invalid(format!(
                "policy is {}x{} but the MDP is {}x{}",
                pi.n_states, pi.n_actions, self.n_states, self.n_actions
            )));
        }
        Ok(())
    }
}

/// A stationary stochastic policy `π[x][a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyFile", into = "PolicyFile")]
pub struct Policy {
    n_states: usize,
    n_actions: usize,
    probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    probs: Vec<Vec<f64>>,
}

impl TryFrom<PolicyFile> for Policy {
    type Error = Error;

    fn try_from(f: PolicyFile) -> Result<Self> {
        Policy::from_rows(f.probs)
    }
}

impl From<Policy> for PolicyFile {
    fn from(p: Policy) -> Self {
        PolicyFile {
            probs: (0..p.n_states).map(|x| p.row(x).to_vec()).collect(),
        }
    }
}

impl Policy {
    pub fn new(n_states: usize, n_actions: usize, probs: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(invalid("a policy needs at least one state and one action"));
        }
        if probs.len() != n_states * n_actions {
            return Err(invalid(format!(
                "policy has {} entries, expected {}",
                probs.len(),
                n_states * n_actions
            )));
        }
        for (x, row) in probs.chunks(n_actions).enumerate() {
            check_distribution(row, &format!("pi[{x}]"))?;
        }
        Ok(Self {
            n_states,
            n_actions,
            probs,
        })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n_states = rows.len();
        let n_actions = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_actions) {
            return Err(invalid("ragged policy rows"));
        }
        Self::new(n_states, n_actions, rows.concat())
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        let p = 1.0 / n_actions as f64;
        Self {
            n_states,
            n_actions,
            probs: vec![p; n_states * n_actions],
        }
    }

    /// The deterministic policy playing `actions[x]` in state `x`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        if let Some(a) = actions.iter().find(|&&a| a >= n_actions) {
            return Err(invalid(format!("action {a} out of range")));
        }
        let mut probs = vec![0.0; actions.len() * n_actions];
        for (x, &a) in actions.iter().enumerate() {
            probs[x * n_actions + a] = 1.0;
        }
        Self::new(actions.len(), n_actions, probs)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, x: usize) -> &[f64] {
        &self.probs[x * self.n_actions..(x + 1) * self.n_actions]
    }

    pub fn prob(&self, x: usize, a: usize) -> f64 {
        self.probs[x * self.n_actions + a]
    }

    /// `max_x ‖π(·|x) − π'(·|x)‖₁`.
    pub fn max_l1_distance(&self, other: &Policy) -> Result<f64> {
        if self.n_states != other.n_states || self.n_actions != other.n_actions {
            return Err(invalid("policy shapes differ"));
        }
        Ok((0..self.n_states)
            .map(|x| {
                self.row(x)
                    .iter()
                    .zip(other.row(x))
                    .map(|(p, q)| (p - q).abs())
                    .sum::<f64>()
            })
            .fold(0.0, f64::max))
    }
}

/// Stationary distribution of a chain together with its fixed-point residual.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub mu: Vec<f64>,
    /// `‖μP − μ‖∞`.
    pub residual: f64,
}

/// Exact differential action values, state values and gain of a policy.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub n_states: usize,
    pub n_actions: usize,
    /// Flattened `Q[x][a]`.
    pub q: Vec<f64>,
    pub v: Vec<f64>,
    pub gain: f64,
    /// Stationary distribution used for the `Σ μ V = 0` normalization.
    pub mu: Vec<f64>,
}

impl QTable {
    pub fn q(&self, x: usize, a: usize) -> f64 {
        self.q[x * self.n_actions + a]
    }

    pub fn q_row(&self, x: usize) -> &[f64] {
        &self.q[x * self.n_actions..(x + 1) * self.n_actions]
    }

    /// Largest Bellman residual `|Q − (r − λ + P V)|` over all pairs.
    pub fn bellman_residual(&self, mdp: &TabularMdp) -> f64 {
        let mut worst: f64 = 0.0;
        for x in 0..self.n_states {
            for a in 0..self.n_actions {
                let pv: f64 = mdp
                    .next_dist(x, a)
                    .iter()
                    .zip(&self.v)
                    .map(|(p, v)| p * v)
                    .sum();
                let rhs = mdp.reward(x, a) - self.gain + pv;
                worst = worst.max((self.q(x, a) - rhs).abs());
            }
        }
        worst
    }
}

/// Dobrushin coefficients and mixing times of an MDP.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MixingInfo {
    /// Dobrushin coefficient of each enumerated deterministic policy, in
    /// odometer order (state 0 varies fastest).
    pub per_policy_beta: Vec<f64>,
    /// Largest coefficient over all policies.
    pub beta_max: f64,
    /// `−1 / ln β*`, the contraction-based mixing constant.
    pub t_mix_condition2: f64,
    /// Worst-case steps to reach total variation ¼ (L1 distance ≤ ¼).
    pub t_mix_def1: usize,
}

/// State-to-state matrix `P^π(x, x') = Σ_a π(a|x) P(x'|x, a)`.
pub fn induced_transition(mdp: &TabularMdp, pi: &Policy) -> Result<DMatrix<f64>> {
    mdp.check_policy(pi)?;
    let n = mdp.n_states;
    let mut p = DMatrix::zeros(n, n);
    for x in 0..n {
        for a in 0..mdp.n_actions {
            let w = pi.prob(x, a);
            if w == 0.0 {
                continue;
            }
            for (y, &q) in mdp.next_dist(x, a).iter().enumerate() {
                p[(x, y)] += w * q;
            }
        }
    }
    Ok(p)
}

/// Induced state reward `r^π(x) = Σ_a π(a|x) r(x, a)`.
pub fn induced_reward(mdp: &TabularMdp, pi: &Policy) -> Result<DVector<f64>> {
    mdp.check_policy(pi)?;
    Ok(DVector::from_fn(mdp.n_states, |x, _| {
        (0..mdp.n_actions).map(|a| pi.prob(x, a) * mdp.reward(x, a)).sum()
    }))
}

fn check_stochastic(p: &DMatrix<f64>) -> Result<()> {
    if p.nrows() == 0 || p.nrows() != p.ncols() {
        return Err(invalid(format!(
            "expected a non-empty square matrix, got {}x{}",
            p.nrows(),
            p.ncols()
        )));
    }
    for (i, row) in p.row_iter().enumerate() {
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(invalid(format!("row {i} has a negative or non-finite entry")));
        }
        let s = row.sum();
        if (s - 1.0).abs() > 1e-10 {
            return Err(invalid(format!("row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// Stationary distribution by the direct solve of `(Pᵀ − I)μ = 0, Σμ = 1`.
pub fn stationary_by_solve(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_stochastic(p)?;
    let n = p.nrows();
    let mut a = p.transpose() - DMatrix::identity(n, n);
    for j in 0..n {
        a[(n - 1, j)] = 1.0;
    }
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let mu = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::ErgodicityViolation("stationary system is singular".into()))?;
    if mu.iter().any(|v| !v.is_finite()) {
        return Err(Error::ErgodicityViolation("stationary solve produced non-finite values".into()));
    }
    Ok(mu.iter().copied().collect())
}

/// Stationary distribution by power iteration from the uniform vector.
pub fn stationary_by_power(p: &DMatrix<f64>) -> Result<Vec<f64>> {
    check_stochastic(p)?;
    let n = p.nrows();
    let pt = p.transpose();
    let mut mu = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..POWER_ITER_CAP {
        let next = &pt * &mu;
        let change: f64 = (&next - &mu).abs().sum();
        mu = next;
        if change <= POWER_ITER_TOL {
            let s = mu.sum();
            return Ok(mu.iter().map(|v| v / s).collect());
        }
    }
    Err(Error::ErgodicityViolation(format!(
        "power iteration did not converge in {POWER_ITER_CAP} iterations"
    )))
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Computed both by power iteration and by a direct linear solve; the two
/// must agree to [`CROSS_CHECK_TOL`], which catches periodic and nearly
/// reducible chains.
pub fn stationary_distribution(p: &DMatrix<f64>) -> Result<StationaryDistribution> {
    let direct = stationary_by_solve(p)?;
    let power = stationary_by_power(p)?;
    let gap = direct
        .iter()
        .zip(&power)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if gap > CROSS_CHECK_TOL {
        return Err(Error::ErgodicityViolation(format!(
            "power iteration and direct solve disagree by {gap:e}"
        )));
    }
    let mut mu: Vec<f64> = direct.into_iter().map(|v| v.max(0.0)).collect();
    let s: f64 = mu.iter().sum();
    mu.iter_mut().for_each(|v| *v /= s);
    let residual = stationary_residual(p, &mu);
    if residual > RESIDUAL_TOL {
        return Err(Error::ErgodicityViolation(format!(
            "stationary residual {residual:e} exceeds tolerance"
        )));
    }
    Ok(StationaryDistribution { mu, residual })
}

fn stationary_residual(p: &DMatrix<f64>, mu: &[f64]) -> f64 {
    let n = p.nrows();
    (0..n)
        .map(|y| {
            let s: f64 = (0..n).map(|x| mu[x] * p[(x, y)]).sum();
            (s - mu[y]).abs()
        })
        .fold(0.0, f64::max)
}

/// Gain `λ_π = Σ_x μ_π(x) Σ_a π(a|x) r(x, a)`.
pub fn average_reward(mdp: &TabularMdp, pi: &Policy) -> Result<f64> {
    let p = induced_transition(mdp, pi)?;
    let st = stationary_distribution(&p)?;
    let r = induced_reward(mdp, pi)?;
    let gain: f64 = st.mu.iter().zip(r.iter()).map(|(m, r)| m * r).sum();
    Ok(gain.clamp(0.0, 1.0))
}

/// Solves the average-reward Bellman equation for `π` with the
/// normalization `Σ_x μ_π(x) V(x) = 0`.
pub fn solve_q(mdp: &TabularMdp, pi: &Policy) -> Result<QTable> {
    let n = mdp.n_states;
    let p = induced_transition(mdp, pi)?;
    let st = stationary_distribution(&p)?;
    let r = induced_reward(mdp, pi)?;
    let mu = DVector::from_vec(st.mu.clone());
    let gain = mu.dot(&r);

    // (I − P + 1μᵀ) v = r − λ1 forces μᵀv = 0 and is non-singular for an
    // ergodic chain.
    let a = DMatrix::identity(n, n) - &p + DMatrix::from_element(n, 1, 1.0) * mu.transpose();
    let rhs = r.add_scalar(-gain);
    let lu = a.clone().lu();
    let mut v = lu
        .solve(&rhs)
        .ok_or_else(|| Error::ErgodicityViolation("Bellman system is singular".into()))?;
    // One round of iterative refinement.
    let resid = &rhs - &a * &v;
    if let Some(dv) = lu.solve(&resid) {
        v += dv;
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::ErgodicityViolation("Bellman solve produced non-finite values".into()));
    }

    let mut q = vec![0.0; n * mdp.n_actions];
    for x in 0..n {
        for a in 0..mdp.n_actions {
            let pv: f64 = mdp.next_dist(x, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum();
            q[x * mdp.n_actions + a] = mdp.reward(x, a) - gain + pv;
        }
    }
    let table = QTable {
        n_states: n,
        n_actions: mdp.n_actions,
        q,
        v: v.iter().copied().collect(),
        gain,
        mu: st.mu,
    };
    let resid = table.bellman_residual(mdp);
    if resid > RESIDUAL_TOL {
        return Err(Error::Numeric(format!("Bellman residual {resid:e} exceeds tolerance")));
    }
    Ok(table)
}

/// `max_{i,j} ½‖P_i − P_j‖₁`, the one-step total-variation contraction factor.
pub fn dobrushin_coefficient(p: &DMatrix<f64>) -> Result<f64> {
    check_stochastic(p)?;
    let n = p.nrows();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let d: f64 = (0..n).map(|k| (p[(i, k)] - p[(j, k)]).abs()).sum();
            worst = worst.max(0.5 * d);
        }
    }
    Ok(worst.min(1.0))
}

/// Steps until every row of `P^t` is within L1 distance ¼ of `μ`.
fn tv_quarter_time(p: &DMatrix<f64>, mu: &[f64]) -> Result<usize> {
    let n = p.nrows();
    let mut pt = p.clone();
    for t in 1..=TMIX_STEP_CAP {
        let worst = (0..n)
            .map(|x| (0..n).map(|y| (pt[(x, y)] - mu[y]).abs()).sum::<f64>())
            .fold(0.0, f64::max);
        if worst <= 0.25 {
            return Ok(t);
        }
        pt = &pt * p;
    }
    Err(Error::ErgodicityViolation(format!(
        "chain did not mix within {TMIX_STEP_CAP} steps"
    )))
}

/// Mixing diagnostics over every deterministic policy of `mdp`.
///
/// The Dobrushin coefficient of `P^π` is a maximum of convex functions of
/// the per-state action distributions, so its maximum over all stochastic
/// policies is attained at a deterministic one.
pub fn mixing_time_bound(mdp: &TabularMdp) -> Result<MixingInfo> {
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let count = (m as f64).powi(n as i32);
    if count > ENUMERATION_CAP {
        return Err(Error::TooLarge(format!(
            "{m}^{n} deterministic policies exceed the enumeration cap"
        )));
    }
    let mut actions = vec![0usize; n];
    let mut per_policy_beta = Vec::with_capacity(count as usize);
    let mut t_mix_def1 = 1;
    loop {
        let p = DMatrix::from_fn(n, n, |x, y| mdp.next_dist(x, actions[x])[y]);
        per_policy_beta.push(dobrushin_coefficient(&p)?);
        let st = stationary_distribution(&p)?;
        t_mix_def1 = t_mix_def1.max(tv_quarter_time(&p, &st.mu)?);

        // odometer increment, state 0 fastest
        let mut i = 0;
        loop {
            if i == n {
                break;
            }
            actions[i] += 1;
            if actions[i] < m {
                break;
            }
            actions[i] = 0;
            i += 1;
        }
        if i == n {
            break;
        }
    }
    let beta_max = per_policy_beta.iter().copied().fold(0.0, f64::max);
    if beta_max >= 1.0 - 1e-15 {
        return Err(Error::ErgodicityViolation(
            "some deterministic policy has Dobrushin coefficient 1".into(),
        ));
    }
    let t_mix_condition2 = if beta_max == 0.0 { 0.0 } else { -1.0 / beta_max.ln() };
    Ok(MixingInfo {
        per_policy_beta,
        beta_max,
        t_mix_condition2,
        t_mix_def1,
    })
}

/// Gain-optimal policy by average-reward (Howard) policy iteration.
///
/// Returns the deterministic optimal policy and its Q-table. Ties keep the
/// incumbent action, then the lowest index.
pub fn optimal_policy(mdp: &TabularMdp) -> Result<(Policy, QTable)> {
    let (n, m) = (mdp.n_states, mdp.n_actions);
    let mut actions = vec![0usize; n];
    for _ in 0..10_000 {
        let pi = Policy::deterministic(m, &actions)?;
        let table = solve_q(mdp, &pi)?;
        let mut changed = false;
        for (x, act) in actions.iter_mut().enumerate() {
            let row = table.q_row(x);
            let best = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if row[*act] >= best - 1e-12 {
                continue;
            }
            *act = row.iter().position(|&q| q >= best - 1e-12).unwrap_or(0);
            changed = true;
        }
        if !changed {
            return Ok((pi, table));
        }
    }
    Err(Error::Numeric("policy iteration did not terminate".into()))
}

#[cfg(test)]
mod tests;
