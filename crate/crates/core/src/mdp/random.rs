use rand::Rng;

use super::{Policy, TabularMdp};

fn dirichlet_row<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    // Normalized unit exponentials are Dirichlet(1, …, 1).
    let mut row: Vec<f64> = (0..n).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|v| *v /= s);
    renormalize(&mut row);
    row
}

/// Forces an exact-as-possible unit sum by folding the rounding error into
/// the largest entry.
fn renormalize(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    let (imax, _) = row
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b });
    row[imax] += 1.0 - s;
}

/// Random MDP whose transition rows are `(1 − floor)·Dirichlet(1) + floor·uniform`
/// and whose rewards are uniform on `[0, 1]`.
///
/// A positive `floor` bounds every Dobrushin coefficient by `1 − floor`.
pub fn random_mdp<R: Rng + ?Sized>(
    n_states: usize,
    n_actions: usize,
    floor: f64,
    rng: &mut R,
) -> TabularMdp {
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let mut row = dirichlet_row(n_states, rng);
        for v in &mut row {
            *v = (1.0 - floor) * *v + floor / n_states as f64;
        }
        renormalize(&mut row);
        transition.extend(row);
    }
    let reward = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
    TabularMdp::new(n_states, n_actions, transition, reward).expect("generated MDP is valid")
}

/// Policy with independent Dirichlet(1) rows.
pub fn random_policy<R: Rng + ?Sized>(n_states: usize, n_actions: usize, rng: &mut R) -> Policy {
    let probs = (0..n_states).flat_map(|_| dirichlet_row(n_actions, rng)).collect();
    Policy::new(n_states, n_actions, probs).expect("generated policy is valid")
}

/// `(1 − α)π + α·π'` with `π'` random; the result is within `2α` of `π` in
/// per-state L1 distance.
pub fn perturb_policy<R: Rng + ?Sized>(pi: &Policy, alpha: f64, rng: &mut R) -> Policy {
    let other = random_policy(pi.n_states(), pi.n_actions(), rng);
    let mut probs = Vec::with_capacity(pi.n_states() * pi.n_actions());
    for x in 0..pi.n_states() {
        let mut row: Vec<f64> = pi
            .row(x)
            .iter()
            .zip(other.row(x))
            .map(|(p, q)| (1.0 - alpha) * p + alpha * q)
            .collect();
        renormalize(&mut row);
        probs.extend(row);
    }
    Policy::new(pi.n_states(), pi.n_actions(), probs).expect("mixture policy is valid")
}
