//! Ground-truth properties of the synthetic models, checked by brute-force
//! enumeration independent of the scoring code paths.

use approx::assert_relative_eq;
use llmap_core::oracle::{
    enumerate_kl, enumerate_mi, perturb, sample_pairs, score_pairs, OracleConfig, Response, ScoreMode,
    SyntheticModel,
};
use llmap_core::TextPair;

fn model(seed: u64) -> SyntheticModel {
    SyntheticModel::random(&OracleConfig::default(), seed).unwrap()
}

/// Probability of a content sequence followed by stop, multiplied out step
/// by step from the raw tables.
fn brute_prob(m: &SyntheticModel, x: usize, seq: &[usize]) -> f64 {
    let mut p = 1.0;
    for t in 0..seq.len() {
        p *= m.next_dist(x, &seq[..t])[seq[t]];
    }
    p * m.next_dist(x, seq)[m.tokens.len()]
}

#[test]
fn enumeration_conserves_mass() {
    for seed in 0..5 {
        let m = model(seed);
        for x in 0..m.prompts.len() {
            let total: f64 = m.enumerate_responses().iter().map(|r| m.response_prob(x, r)).sum();
            assert_relative_eq!(total, 1.0, epsilon = 1e-10);
        }
    }
}

#[test]
fn overflow_mass_bounded_by_stop_floor() {
    let m = model(11);
    let bound = (1.0 - m.p_stop_min).powi(m.max_len as i32);
    for x in 0..m.prompts.len() {
        assert!(m.overflow_mass(x) <= bound + 1e-15);
        assert!(m.overflow_mass(x) > 0.0);
    }
}

#[test]
fn conditional_scores_match_hand_products() {
    let m = model(2);
    let seqs: [&[usize]; 4] = [&[], &[0], &[1, 2], &[2, 2, 0]];
    for x in 0..m.prompts.len() {
        for seq in seqs {
            let pair = TextPair::new("p", m.prompts[x].clone(), m.render(&Response::Tokens(seq.to_vec())));
            let s = m.score_pairs(&[pair], ScoreMode::Conditional).unwrap()[0];
            assert_relative_eq!(s, brute_prob(&m, x, seq).ln(), max_relative = 1e-14);
        }
    }
}

#[test]
fn marginal_scores_equal_prompt_sum() {
    let m = model(4);
    for r in m.enumerate_responses() {
        let text = m.render(&r);
        let direct: f64 =
            (0..m.prompts.len()).map(|x| m.prompt_probs[x] * m.response_prob(x, &r)).sum();
        let s = m.score_pairs(&[TextPair::new("p", "ignored", text)], ScoreMode::Unconditional).unwrap()[0];
        assert_relative_eq!(s.exp(), direct, epsilon = 1e-12);
    }
}

#[test]
fn marginal_is_a_distribution() {
    let m = model(6);
    let overflow = m.marginal_prob(&Response::Overflow);
    let pairs: Vec<TextPair> = m
        .enumerate_responses()
        .into_iter()
        .filter(|r| *r != Response::Overflow)
        .map(|r| TextPair::new("p", "x0", m.render(&r)))
        .collect();
    let total: f64 = m.score_pairs(&pairs, ScoreMode::Unconditional).unwrap().iter().map(|s| s.exp()).sum();
    assert_relative_eq!(total, 1.0 - overflow, epsilon = 1e-10);
}

#[test]
fn empty_prompt_scoring_differs_from_marginal() {
    let m = model(8);
    let p = TextPair::new("p", "x0", m.render(&Response::Tokens(vec![0, 1])));
    let exact = m.score_pairs(std::slice::from_ref(&p), ScoreMode::Unconditional).unwrap()[0];
    let approx = m.score_pairs(&[p], ScoreMode::EmptyPrompt).unwrap()[0];
    assert!((exact - approx).abs() > 1e-6);
    // single-step responses agree: the first factor is averaged the same way
    let p = TextPair::new("p", "x0", "</s>");
    let exact = m.score_pairs(std::slice::from_ref(&p), ScoreMode::Unconditional).unwrap()[0];
    let approx = m.score_pairs(&[p], ScoreMode::EmptyPrompt).unwrap()[0];
    assert_relative_eq!(exact, approx, epsilon = 1e-14);
}

#[test]
fn kl_is_gibbs_nonnegative() {
    for seed in 0..5 {
        let a = model(seed);
        let b = perturb(&a, 0.2, seed + 100).unwrap();
        let fwd = enumerate_kl(&a, &b).unwrap();
        let bwd = enumerate_kl(&b, &a).unwrap();
        assert!(fwd > 0.0 && bwd > 0.0);
        assert!(fwd + bwd > 0.0);
    }
}

#[test]
fn perturbation_kl_shrinks_with_epsilon() {
    let base = model(21);
    let kls: Vec<f64> = [0.1, 0.01, 0.001]
        .iter()
        .map(|&e| enumerate_kl(&base, &perturb(&base, e, 5).unwrap()).unwrap())
        .collect();
    assert!(kls[0] > kls[1] && kls[1] > kls[2] && kls[2] > 0.0);
    // second-order behaviour: a tenfold smaller epsilon gives roughly 100x smaller KL
    assert!(kls[1] / kls[2] > 50.0 && kls[1] / kls[2] < 200.0);
}

#[test]
fn different_seeds_give_different_perturbations() {
    let base = model(3);
    let a = perturb(&base, 0.05, 1).unwrap();
    let b = perturb(&base, 0.05, 2).unwrap();
    assert_ne!(a, b);
    assert!(enumerate_kl(&base, &a).unwrap() > 0.0);
    assert!(enumerate_kl(&base, &b).unwrap() > 0.0);
}

#[test]
fn mi_bounded_by_entropies() {
    for seed in 0..5 {
        let cfg = OracleConfig { prompt_dependence: 0.9, sharpness: 2.0, ..OracleConfig::default() };
        let m = SyntheticModel::random(&cfg, seed).unwrap();
        let mi = enumerate_mi(&m);
        assert!(mi > 0.0);
        assert!(mi <= m.prompt_entropy().min(m.response_entropy()) + 1e-12);
    }
}

#[test]
fn sampling_is_seeded_and_in_support() {
    let m = model(9);
    let a = sample_pairs(&m, 500, 42).unwrap();
    let b = sample_pairs(&m, 500, 42).unwrap();
    let c = sample_pairs(&m, 500, 43).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);
    let scores = score_pairs(&m, "m", &a, ScoreMode::Conditional).unwrap();
    assert!(scores.values.iter().all(|s| s.is_finite()));
}

#[test]
fn prompt_frequencies_concentrate() {
    let cfg = OracleConfig { n_prompts: 2, ..OracleConfig::default() };
    let m = SyntheticModel::random(&cfg, 0).unwrap();
    let pairs = sample_pairs(&m, 100_000, 1).unwrap();
    let x0 = pairs.pairs().iter().filter(|p| p.prompt == "x0").count() as f64 / 1e5;
    assert!((0.49..=0.51).contains(&x0), "frequency {x0}");
}

#[test]
fn sampled_response_frequencies_match_probabilities() {
    let cfg = OracleConfig { n_prompts: 1, ..OracleConfig::default() };
    let m = SyntheticModel::random(&cfg, 12).unwrap();
    let n = 200_000;
    let pairs = sample_pairs(&m, n, 3).unwrap();
    let empty = pairs.pairs().iter().filter(|p| p.response == "</s>").count() as f64 / n as f64;
    let p = m.response_prob(0, &Response::Tokens(vec![]));
    let sd = (p * (1.0 - p) / n as f64).sqrt();
    assert!((empty - p).abs() < 4.0 * sd, "{empty} vs {p}");
}
