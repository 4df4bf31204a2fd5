use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::mdp::{mixing_time_bound, optimal_policy, random_mdp, random_policy};

fn id() -> String {
    String::new()
}

#[test]
fn report_holds_iff_within_tolerance() {
    assert!(LemmaReport::inequality("x", 1.0, 1.0, 0.0, id()).holds);
    assert!(LemmaReport::inequality("x", 1.0 + 1e-10, 1.0, 1e-9, id()).holds);
    assert!(!LemmaReport::inequality("x", 1.0 + 1e-8, 1.0, 1e-9, id()).holds);
    assert!(LemmaReport::equality("x", 1.0, 1.0 + 1e-9, 1e-8, id()).holds);
    assert!(!LemmaReport::equality("x", 1.0, 0.9, 1e-8, id()).holds);
}

#[test]
fn jsonl_has_one_record_per_line() {
    let reports = vec![
        LemmaReport::inequality("a", 0.0, 1.0, 0.0, "i=0".into()),
        LemmaReport::inequality("b", 2.0, 1.0, 0.0, "i=1".into()),
    ];
    let mut buf = Vec::new();
    write_jsonl(&reports, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    let v: serde_json::Value = serde_json::from_str(lines[1]).unwrap();
    assert_eq!(v["holds"], false);
    assert_eq!(v["lemma"], "b");
}

#[test]
fn performance_difference_identical_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mdp = random_mdp(4, 3, 0.1, &mut rng);
    let pi = random_policy(4, 3, &mut rng);
    let r = performance_difference(&mdp, &pi, &pi, id()).unwrap();
    assert_eq!(r.lhs, 0.0);
    assert!(r.rhs.abs() < 1e-15);
}

#[test]
fn performance_difference_single_state() {
    let mdp = TabularMdp::new(1, 3, vec![1.0; 3], vec![0.2, 0.5, 0.9]).unwrap();
    let pi = Policy::new(1, 3, vec![0.1, 0.2, 0.7]).unwrap();
    let pihat = Policy::new(1, 3, vec![0.5, 0.5, 0.0]).unwrap();
    let gain_hat = 0.5 * 0.2 + 0.5 * 0.5;
    let closed: f64 = [0.2, 0.5, 0.9]
        .iter()
        .enumerate()
        .map(|(a, r)| (pi.prob(0, a) - pihat.prob(0, a)) * (r - gain_hat))
        .sum();
    let r = performance_difference(&mdp, &pi, &pihat, id()).unwrap();
    assert!((r.rhs - closed).abs() < 1e-14);
    assert!(r.holds);
}

#[test]
fn relative_q_same_policy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mdp = random_mdp(3, 2, 0.3, &mut rng);
    let pi = random_policy(3, 2, &mut rng);
    let mixing = mixing_time_bound(&mdp).unwrap();
    let r = relative_q_bound(&mdp, &mixing, &pi, &pi, 64, id()).unwrap();
    assert_eq!(r.lhs, 0.0);
    assert!((r.rhs - 2.0 / 64f64.powi(3)).abs() < 1e-18);
    assert!(relative_q_bound(&mdp, &mixing, &pi, &pi, 1, id()).is_err());
}

#[test]
fn gain_concentration_with_constant_rewards() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random_mdp(3, 2, 0.3, &mut rng);
    let mdp = base.with_rewards(vec![0.4; 6]).unwrap();
    let policies = vec![random_policy(3, 2, &mut rng), random_policy(3, 2, &mut rng)];
    let rewards = vec![0.4; 100];
    let r = empirical_gain_concentration(&rewards, &mdp, &policies, 2.0, 0.05, id()).unwrap();
    assert!(r.lhs < 1e-12);
    assert!(r.holds);
    assert!(empirical_gain_concentration(&rewards[..99], &mdp, &policies, 2.0, 0.05, id()).is_err());
}

#[test]
fn gain_concentration_single_phase_formula() {
    let (t, tm, delta) = (1000usize, 3.0, 0.1);
    let expect = tm + 4.0 * 2f64.sqrt() * tm * (t as f64 * (t as f64 / delta).ln()).sqrt();
    assert!((gain_concentration_rhs(1, t, tm, delta) - expect).abs() < 1e-9);
}

#[test]
fn linf_bound_trivial_cases() {
    let psi = DMatrix::<f64>::identity(4, 4);
    let nu = vec![0.25; 4];
    let w = vec![0.3, -1.0, 2.0, 0.5];
    let r = linf_weighted_bound(&psi, &nu, &w, &w, id()).unwrap();
    assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
    assert!(r.holds);
    // identity features, uniform weights: ‖v‖∞ ≤ √n ‖v‖_ν = ‖v‖₂
    let what = vec![0.0; 4];
    let r = linf_weighted_bound(&psi, &nu, &w, &what, id()).unwrap();
    let l2 = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((r.rhs - l2).abs() < 1e-12);
    assert_eq!(r.lhs, 2.0);
}

#[test]
fn linf_bound_needs_excitation() {
    let psi = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
    let err = linf_weighted_bound(&psi, &[1.0, 0.0], &[0.0, 0.0], &[1.0, 1.0], id());
    assert!(matches!(err, Err(Error::ExcitationViolation(_))));
}

#[test]
fn mcmahan_examples() {
    let r = mcmahan_sum(&[0.0, 0.0, 4.0], id()).unwrap();
    assert_eq!((r.lhs, r.rhs), (2.0, 4.0));
    let r = mcmahan_sum(&[1.0, 1.0], id()).unwrap();
    assert!((r.lhs - (1.0 + 1.0 / 2f64.sqrt())).abs() < 1e-15);
    assert!(mcmahan_sum(&[1.0, -1.0], id()).is_err());
}

#[test]
fn regret_of_the_optimal_policy_is_pure_noise() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mdp = random_mdp(3, 2, 0.2, &mut rng);
    let (best, q) = optimal_policy(&mdp).unwrap();
    let rewards: Vec<f64> = (0..60).map(|i| (i % 3) as f64 / 2.0).collect();
    let curves = regret_curves(&rewards, &mdp, &[best.clone(), best], q.gain).unwrap();
    assert!(curves.pseudo.iter().all(|p| p.abs() < 1e-12));
    assert!(curves.identity_error() < 1e-9);
}

#[test]
fn regret_identity_on_mixed_policies() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mdp = random_mdp(4, 2, 0.2, &mut rng);
    let (_, q) = optimal_policy(&mdp).unwrap();
    let policies: Vec<Policy> = (0..5).map(|_| random_policy(4, 2, &mut rng)).collect();
    let rewards: Vec<f64> = (0..500).map(|i| ((i * 37) % 11) as f64 / 10.0).collect();
    let curves = regret_curves(&rewards, &mdp, &policies, q.gain).unwrap();
    assert!(curves.identity_error() < 1e-9);
    assert!(curves.pseudo.windows(2).all(|w| w[1] >= w[0] - 1e-15));
}

#[test]
fn small_suites_hold_and_reproduce() {
    for suite in Suite::ALL {
        if suite == Suite::Gain {
            continue;
        }
        let a = run_suite(suite, 20, 99).unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|r| r.holds), "{suite:?}: {:?}", a.iter().find(|r| !r.holds));
        assert_eq!(a, run_suite(suite, 20, 99).unwrap());
    }
    assert!("nope".parse::<Suite>().is_err());
    assert_eq!("relq".parse::<Suite>().unwrap(), Suite::Relq);
}

#[test]
fn short_gain_suite() {
    let cfg = GainSuiteConfig {
        agent: crate::agents::AgentConfig::new(crate::agents::Variant::Aapi, 100, 5, 0.1),
        ..GainSuiteConfig::default()
    };
    let reports = gain_concentration_suite(&cfg, 3, 0).unwrap();
    assert_eq!(reports.len(), 3);
    assert!(reports.iter().all(|r| r.holds));
}
