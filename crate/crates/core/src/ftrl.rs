//! Adaptive optimistic follow-the-regularized-leader on the probability
//! simplex with a negative-entropy regularizer.
//!
//! Everything uses the payoff (maximization) convention: the learner plays
//! `argmax_f ⟨f, Σ q_s + M_{t+1}⟩ − η_t ℛ(f)`, which is the Boltzmann
//! distribution `softmax((Σ q_s + M_{t+1}) / η_t)`. The learning rate grows
//! with the accumulated squared prediction error,
//! `η_t = η √(2 Σ_{s≤t} ‖q_s − M_s‖∞²)`.

use serde::Serialize;

use crate::error::{invalid, Result};

/// Learning-rate floor used when the accumulated prediction error is zero.
pub const DEFAULT_ETA_FLOOR: f64 = 1e-8;

/// Slack allowed when auditing the regret bound.
pub const AUDIT_TOL: f64 = 1e-9;

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimplexPoint(Vec<f64>);

impl SimplexPoint {
    /// Validates non-negativity and a unit sum (within 1e-12).
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(invalid("empty simplex point"));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("simplex point has a negative or non-finite entry"));
        }
        let s: f64 = probs.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(invalid(format!("simplex point sums to {s}")));
        }
        Ok(Self(probs))
    }

    pub fn uniform(n: usize) -> Self {
        Self(vec![1.0 / n as f64; n])
    }

    /// The vertex `e_i` of the `n`-simplex.
    pub fn vertex(n: usize, i: usize) -> Self {
        let mut p = vec![0.0; n];
        p[i] = 1.0;
        Self(p)
    }

    pub fn probs(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Numerically stable softmax, `p ∝ exp(l − max l)`.
pub fn stable_softmax(logits: &[f64]) -> Result<SimplexPoint> {
    if logits.is_empty() {
        return Err(invalid("softmax of an empty vector"));
    }
    if logits.iter().any(|l| !l.is_finite()) {
        return Err(invalid("softmax input has NaN or infinite entries"));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    Ok(SimplexPoint(p))
}

/// Boltzmann distribution `softmax(index / eta)`.
///
/// The maximum is subtracted before scaling, so constant shifts of `index`
/// that are exact in floating point give bit-identical output.
pub fn boltzmann(index: &[f64], eta: f64) -> Result<SimplexPoint> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(invalid(format!("temperature {eta} must be positive and finite")));
    }
    if index.iter().any(|l| !l.is_finite()) {
        return Err(invalid("Boltzmann index has NaN or infinite entries"));
    }
    let max = index.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scaled: Vec<f64> = index.iter().map(|v| (v - max) / eta).collect();
    stable_softmax(&scaled)
}

/// Shifted negative entropy `log n + Σ f log f`, in `[0, log n]` with
/// `0·log 0 = 0`; zero at the uniform point.
pub fn shifted_neg_entropy(f: &[f64]) -> f64 {
    let n = f.len() as f64;
    n.ln() + f.iter().filter(|&&p| p > 0.0).map(|p| p * p.ln()).sum::<f64>()
}

/// Tuning constant and floor of the adaptive learning rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Rate {
    pub eta: f64,
    pub floor: f64,
}

impl Rate {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            floor: DEFAULT_ETA_FLOOR,
        }
    }

    pub fn with_floor(eta: f64, floor: f64) -> Self {
        Self { eta, floor }
    }

    fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) || !(self.floor > 0.0) {
            return Err(invalid(format!(
                "learning rate needs eta > 0 and floor > 0, got {:?}",
                self
            )));
        }
        Ok(())
    }

    /// `max(floor, η √(2 S))` for accumulated squared error `S`.
    pub fn at(&self, rate_stat: f64) -> f64 {
        (self.eta * (2.0 * rate_stat).sqrt()).max(self.floor)
    }
}

fn linf_sq(a: &[f64], b: &[f64]) -> f64 {
    let d = a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    d * d
}

/// Per-state accumulator of the learner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LearnerState {
    /// `Σ_s q_s` over the payoffs ingested so far.
    pub cum_loss: Vec<f64>,
    /// Side-information `M_k` announced for the next payoff; zero before the
    /// first step. In AAPI this is the previous payoff.
    pub prediction: Vec<f64>,
    /// `S_k = Σ_s ‖q_s − M_s‖∞²`.
    pub rate_stat: f64,
    /// Number of payoffs ingested.
    pub step: usize,
}

impl LearnerState {
    pub fn new(n_actions: usize) -> Self {
        Self {
            cum_loss: vec![0.0; n_actions],
            prediction: vec![0.0; n_actions],
            rate_stat: 0.0,
            step: 0,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.cum_loss.len()
    }

    /// The play before any payoff is seen: the uniform distribution, which
    /// minimizes the regularizer.
    pub fn initial_play(&self) -> SimplexPoint {
        SimplexPoint::uniform(self.n_actions())
    }

    fn check(&self, v: &[f64], what: &str) -> Result<()> {
        if v.len() != self.n_actions() {
            return Err(invalid(format!(
                "{what} has {} entries, learner has {} actions",
                v.len(),
                self.n_actions()
            )));
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(invalid(format!("{what} has non-finite entries")));
        }
        Ok(())
    }

    /// Learning rate `η_k` after ingesting `new_loss`.
    pub fn learning_rate(&self, new_loss: &[f64], rate: Rate) -> Result<f64> {
        rate.validate()?;
        self.check(new_loss, "loss")?;
        Ok(rate.at(self.rate_stat + linf_sq(new_loss, &self.prediction)))
    }

    /// One AO-FTRL update with the adaptive rate.
    ///
    /// Ingests `new_loss` (`q_k`), records `side_info` as `M_{k+1}` and
    /// returns the next play `softmax((Σ_{s≤k} q_s + M_{k+1}) / η_k)`.
    pub fn step(
        &self,
        new_loss: &[f64],
        side_info: &[f64],
        rate: Rate,
    ) -> Result<(SimplexPoint, LearnerState)> {
        let eta_k = self.learning_rate(new_loss, rate)?;
        self.step_with_eta(new_loss, side_info, eta_k)
    }

    /// Same update with an externally chosen `η_k` (k-AAPI, POLITEX).
    pub fn step_with_eta(
        &self,
        new_loss: &[f64],
        side_info: &[f64],
        eta_k: f64,
    ) -> Result<(SimplexPoint, LearnerState)> {
        self.check(new_loss, "loss")?;
        self.check(side_info, "side information")?;
        let mut next = self.clone();
        next.rate_stat += linf_sq(new_loss, &self.prediction);
        for (c, q) in next.cum_loss.iter_mut().zip(new_loss) {
            *c += q;
        }
        next.prediction.copy_from_slice(side_info);
        next.step += 1;
        let index: Vec<f64> = next
            .cum_loss
            .iter()
            .zip(side_info)
            .map(|(c, m)| c + m)
            .collect();
        Ok((boltzmann(&index, eta_k)?, next))
    }
}

/// Plays the learner against a payoff stream.
///
/// `side_infos` holds `M_2, …, M_{T+1}` (one per payoff; `M_1 = 0`). Returns
/// `f_1, …, f_{T+1}` and the learning rates `η_1, …, η_T`.
pub fn play_stream(
    losses: &[Vec<f64>],
    side_infos: &[Vec<f64>],
    rate: Rate,
) -> Result<(Vec<SimplexPoint>, Vec<f64>)> {
    if losses.is_empty() || side_infos.len() != losses.len() {
        return Err(invalid("need one side-information vector per payoff"));
    }
    let mut state = LearnerState::new(losses[0].len());
    let mut plays = vec![state.initial_play()];
    let mut etas = Vec::with_capacity(losses.len());
    for (q, m) in losses.iter().zip(side_infos) {
        etas.push(state.learning_rate(q, rate)?);
        let (f, next) = state.step(q, m, rate)?;
        plays.push(f);
        state = next;
    }
    Ok((plays, etas))
}

/// Both sides of the AO-FTRL regret bound for one payoff stream.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretAudit {
    /// `Σ_t ⟨f* − f_t, q_t⟩`.
    pub regret: f64,
    /// `√(2 R_max S) − Σ η_t/4 ‖f_t − f_{t+1}‖₁² + ⟨M_{T+1}, f_{T+1} − f*⟩`.
    pub bound: f64,
    /// The pre-simplification bound with the rates actually used:
    /// `Σ_t ‖q_t − M_t‖∞²/η_t + η_T ℛ(f*) − Σ η_t/4 ‖f_t − f_{t+1}‖₁² + ⟨M_{T+1}, f_{T+1} − f*⟩`.
    pub rate_bound: f64,
    /// `S = Σ ‖q_t − M_t‖∞²`.
    pub prediction_error: f64,
    /// `Σ η_t/4 ‖f_t − f_{t+1}‖₁²`.
    pub stability: f64,
    pub holds: bool,
    pub rate_bound_holds: bool,
}

/// Audits the regret of a learner run.
///
/// `losses` are `q_1..q_T`, `side_infos` are `M_1..M_{T+1}` (with `M_1 = 0`
/// for the bound to apply) and `plays` are `f_1..f_{T+1}`. The learning
/// rates are recomputed from `rate`. In the payoff convention the last
/// term of the bound reads `⟨M_{T+1}, f_{T+1} − f*⟩`.
pub fn regret_audit(
    losses: &[Vec<f64>],
    side_infos: &[Vec<f64>],
    plays: &[SimplexPoint],
    comparator: &SimplexPoint,
    rate: Rate,
) -> Result<RegretAudit> {
    rate.validate()?;
    let t = losses.len();
    if t == 0 || side_infos.len() != t + 1 || plays.len() != t + 1 {
        return Err(invalid(format!(
            "misaligned audit: {} payoffs, {} side-infos, {} plays",
            t,
            side_infos.len(),
            plays.len()
        )));
    }
    let n = comparator.len();
    let aligned = losses.iter().chain(side_infos).all(|v| v.len() == n)
        && plays.iter().all(|f| f.len() == n);
    if !aligned {
        return Err(invalid("vector dimensions disagree"));
    }

    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let fstar = comparator.probs();
    let mut regret = 0.0;
    let mut s = 0.0;
    let mut first = 0.0;
    let mut stability = 0.0;
    let mut eta_t = rate.floor;
    for (i, q) in losses.iter().enumerate() {
        let f = plays[i].probs();
        regret += dot(fstar, q) - dot(f, q);
        let a = linf_sq(q, &side_infos[i]);
        s += a;
        eta_t = rate.at(s);
        first += a / eta_t;
        let l1: f64 = f
            .iter()
            .zip(plays[i + 1].probs())
            .map(|(x, y)| (x - y).abs())
            .sum();
        stability += eta_t / 4.0 * l1 * l1;
    }
    let last = plays[t].probs();
    let m_last = &side_infos[t];
    let m_term = dot(m_last, last) - dot(m_last, fstar);
    let r_max = (n as f64).ln();
    let bound = (2.0 * r_max * s).sqrt() - stability + m_term;
    let rate_bound = first + eta_t * shifted_neg_entropy(fstar) - stability + m_term;
    Ok(RegretAudit {
        regret,
        bound,
        rate_bound,
        prediction_error: s,
        stability,
        holds: regret <= bound + AUDIT_TOL,
        rate_bound_holds: regret <= rate_bound + AUDIT_TOL,
    })
}

/// Best fixed action in hindsight for a payoff stream.
pub fn best_vertex(losses: &[Vec<f64>]) -> Result<SimplexPoint> {
    let n = losses.first().map(Vec::len).ok_or_else(|| invalid("empty stream"))?;
    let totals = losses.iter().fold(vec![0.0; n], |mut acc, q| {
        acc.iter_mut().zip(q).for_each(|(a, v)| *a += v);
        acc
    });
    let best = totals
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b })
        .0;
    Ok(SimplexPoint::vertex(n, best))
}

impl From<SimplexPoint> for Vec<f64> {
    fn from(p: SimplexPoint) -> Self {
        p.0
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn softmax_examples() {
        let p = stable_softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(close(p.probs(), &[1.0 / 3.0; 3], 1e-15));
        let p = stable_softmax(&[1000.0, 1000.0]).unwrap();
        assert_eq!(p.probs(), &[0.5, 0.5]);
        for c in [-7.0, 0.0, 3.5, 250.0] {
            let p = stable_softmax(&[c, c + 2f64.ln()]).unwrap();
            assert!(close(p.probs(), &[1.0 / 3.0, 2.0 / 3.0], 1e-12));
        }
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(stable_softmax(&[0.0, f64::NAN]).is_err());
        assert!(stable_softmax(&[f64::INFINITY, 0.0]).is_err());
        assert!(stable_softmax(&[]).is_err());
    }

    #[test]
    fn learning_rate_examples() {
        let rate = Rate::new(1.0);
        let s = LearnerState::new(3);
        let eta1 = s.learning_rate(&[2.0, 0.0, 1.0], rate).unwrap();
        assert!((eta1 - 8f64.sqrt()).abs() < 1e-12);

        let (_, s1) = s.step(&[2.0, 0.0, 1.0], &[0.0, 0.0, 0.0], rate).unwrap();
        let eta2 = s1.learning_rate(&[0.0, 2.0, 1.0], rate).unwrap();
        assert!((eta2 - 4.0).abs() < 1e-12);

        let flat = LearnerState::new(2);
        let eta = flat.learning_rate(&[0.0, 0.0], Rate::with_floor(0.5, 1e-3)).unwrap();
        assert_eq!(eta, 1e-3);
    }

    #[test]
    fn first_step_with_zero_payoff_is_uniform() {
        let (f, s) = LearnerState::new(4)
            .step(&[0.0; 4], &[0.0; 4], Rate::new(0.3))
            .unwrap();
        assert!(close(f.probs(), &[0.25; 4], 1e-15));
        assert_eq!(s.step, 1);
    }

    #[test]
    fn step_reproduces_boltzmann_by_hand() {
        // Arrange the index to be (5, 5 + η_k ln 3) after the step.
        let rate = Rate::new(0.5);
        let q = [2.0, 1.0];
        let s = LearnerState::new(2);
        let eta_k = s.learning_rate(&q, rate).unwrap();
        assert!((eta_k - 0.5 * 8f64.sqrt()).abs() < 1e-12);
        let side = [3.0, 4.0 + eta_k * 3f64.ln()];
        let (f, _) = s.step(&q, &side, rate).unwrap();
        assert!(close(f.probs(), &[0.25, 0.75], 1e-12));
    }

    #[test]
    fn step_shape_mismatch() {
        let s = LearnerState::new(2);
        assert!(s.step(&[1.0], &[0.0, 0.0], Rate::new(1.0)).is_err());
        assert!(s.step(&[1.0, 0.0], &[0.0], Rate::new(1.0)).is_err());
    }

    #[test]
    fn shift_is_bit_identical() {
        // Integer-valued indices keep the shift exact.
        let s = LearnerState::new(3);
        let (a, _) = s.step_with_eta(&[1.0, 4.0, 2.0], &[0.0, 1.0, 3.0], 0.7).unwrap();
        let (b, _) = s
            .step_with_eta(&[1025.0, 1028.0, 1026.0], &[0.0, 1.0, 3.0], 0.7)
            .unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn entropy_range() {
        assert!(shifted_neg_entropy(&[0.25; 4]).abs() < 1e-15);
        assert!((shifted_neg_entropy(&[0.0, 1.0, 0.0]) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn audit_zero_losses() {
        let losses = vec![vec![0.0; 3]; 10];
        let side = vec![vec![0.0; 3]; 10];
        let (plays, _) = play_stream(&losses, &side, Rate::new(1.0)).unwrap();
        let mut ms = vec![vec![0.0; 3]];
        ms.extend(side);
        let audit =
            regret_audit(&losses, &ms, &plays, &SimplexPoint::vertex(3, 0), Rate::new(1.0)).unwrap();
        assert_eq!(audit.regret, 0.0);
        assert!(audit.bound >= 0.0);
        assert!(audit.holds);
    }

    #[test]
    fn audit_misaligned() {
        let losses = vec![vec![0.0; 2]; 3];
        let plays = vec![SimplexPoint::uniform(2); 4];
        let ms = vec![vec![0.0; 2]; 3];
        assert!(regret_audit(&losses, &ms, &plays, &SimplexPoint::uniform(2), Rate::new(1.0)).is_err());
    }

    fn audit_stream(losses: &[Vec<f64>], eta: f64) -> RegretAudit {
        let n = losses[0].len();
        // M_{t+1} = q_t
        let side: Vec<Vec<f64>> = losses.to_vec();
        let (plays, _) = play_stream(losses, &side, Rate::new(eta)).unwrap();
        let mut ms = vec![vec![0.0; n]];
        ms.extend(side);
        let best = best_vertex(losses).unwrap();
        regret_audit(losses, &ms, &plays, &best, Rate::new(eta)).unwrap()
    }

    #[test]
    fn constant_payoff_stream_respects_rate_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let n = rng.random_range(2..=6);
            let q: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let losses = vec![q; 50];
            let eta = 1.0 / (n as f64).ln().sqrt();
            let audit = audit_stream(&losses, eta);
            assert!(audit.rate_bound_holds, "{audit:?}");
            assert!(audit.regret >= -1e-12);
        }
    }

    proptest! {
        #[test]
        fn rate_is_monotone(seed in any::<u64>(), n in 1usize..6, eta in 0.01f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut s = LearnerState::new(n);
            let mut last = 0.0;
            for _ in 0..30 {
                let q: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
                let eta_k = s.learning_rate(&q, Rate::new(eta)).unwrap();
                prop_assert!(eta_k >= last);
                last = eta_k;
                let (f, next) = s.step(&q, &q, Rate::new(eta)).unwrap();
                prop_assert!(SimplexPoint::new(f.into_vec()).is_ok());
                prop_assert!(next.rate_stat >= s.rate_stat);
                s = next;
            }
        }

        #[test]
        fn huge_logits_stay_on_simplex(v in prop::collection::vec(-1e6f64..1e6, 1..8)) {
            let p = stable_softmax(&v).unwrap();
            prop_assert!(SimplexPoint::new(p.into_vec()).is_ok());
        }

        #[test]
        fn uniform_payoffs_respect_rate_bound(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let losses: Vec<Vec<f64>> =
                (0..200).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
            let audit = audit_stream(&losses, 1.0 / 5f64.ln().sqrt());
            prop_assert!(audit.rate_bound_holds);
        }
    }
}
