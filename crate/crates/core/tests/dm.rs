use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use umiclust::dm::{
    log_joint, log_multinomial_loglik, sample_mixing_weights, sample_theta_posterior,
    LogProbVector,
};
use umiclust::{ClusterStats, CountMatrix, Hyperparams, ModelState};

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (var / n).sqrt())
}

#[test]
fn loglik_matches_direct_product() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..50 {
        let raw: Vec<f64> = (0..6).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw.iter().map(|p| p / s).collect();
        let counts: Vec<u32> = (0..6).map(|_| rng.random_range(0..4)).collect();
        let cell: Vec<(u32, u32)> = counts
            .iter()
            .enumerate()
            .filter(|(_, &c)| c > 0)
            .map(|(g, &c)| (g as u32, c))
            .collect();
        let direct: f64 = counts
            .iter()
            .zip(&probs)
            .map(|(&c, &p)| p.powi(c as i32))
            .product::<f64>()
            .ln();
        let lt = LogProbVector::from_probs(&probs).unwrap();
        assert!((log_multinomial_loglik(&cell, &lt) - direct).abs() < 1e-10);
    }
}

#[test]
fn loglik_is_minus_infinity_on_zero_probability() {
    let lt = LogProbVector::from_probs(&[1.0, 0.0]).unwrap();
    assert_eq!(log_multinomial_loglik(&[(1, 2)], &lt), f64::NEG_INFINITY);
}

#[test]
fn theta_posterior_prior_mean_is_uniform() {
    let stats = ClusterStats::empty(4);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let draws: Vec<Vec<f64>> = (0..10_000)
        .map(|_| sample_theta_posterior(&stats, 1.0, &mut rng).probs())
        .collect();
    for g in 0..4 {
        let xs: Vec<f64> = draws.iter().map(|d| d[g]).collect();
        let (m, se) = mean_and_se(&xs);
        assert!((m - 0.25).abs() < 3.0 * se, "gene {g}: {m}");
    }
}

#[test]
fn theta_posterior_mean_follows_counts() {
    let stats = ClusterStats::from_counts(5, vec![1000, 0]);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let xs: Vec<f64> = (0..10_000)
        .map(|_| sample_theta_posterior(&stats, 1.0, &mut rng).probs()[0])
        .collect();
    let (m, se) = mean_and_se(&xs);
    // Dir(1 + 1000, 1 + 0) has mean 1001 / 1002.
    assert!((m - 1001.0 / 1002.0).abs() < 3.0 * se, "{m}");
}

#[test]
fn theta_posterior_moments_for_mixed_counts() {
    let stats = ClusterStats::from_counts(3, vec![3, 0, 7]);
    let lambda = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let draws: Vec<Vec<f64>> = (0..10_000)
        .map(|_| sample_theta_posterior(&stats, lambda, &mut rng).probs())
        .collect();
    for (g, &c) in [3.0, 0.0, 7.0].iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|d| d[g]).collect();
        let (m, se) = mean_and_se(&xs);
        let expect = (lambda + c) / (3.0 * lambda + 10.0);
        assert!((m - expect).abs() < 3.0 * se, "gene {g}: {m} vs {expect}");
    }
}

#[test]
fn mixing_weight_means() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let xs: Vec<f64> = (0..10_000)
        .map(|_| sample_mixing_weights(&[99], 1.0, &mut rng).unwrap()[0])
        .collect();
    let (m, se) = mean_and_se(&xs);
    assert!((m - 0.99).abs() < 3.0 * se);

    let xs: Vec<f64> = (0..10_000)
        .map(|_| sample_mixing_weights(&[50, 50], 0.5, &mut rng).unwrap()[2])
        .collect();
    let (m, se) = mean_and_se(&xs);
    assert!((m - 0.5 / 100.5).abs() < 3.0 * se, "{m}");
}

#[test]
fn mixing_weights_are_reproducible() {
    let a = sample_mixing_weights(&[3, 4], 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let b = sample_mixing_weights(&[3, 4], 0.5, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 3);
}

#[test]
fn log_joint_single_gene() {
    let m = CountMatrix::from_dense(&[vec![3], vec![1], vec![2]]).unwrap();
    let hp = Hyperparams::new(0.5, 1.0, 1.0).unwrap();
    let w = vec![0.8, 0.2];
    let s = ModelState::from_parts(&m, vec![0, 0, 0], w, vec![LogProbVector::uniform(1)]).unwrap();
    // ln Gamma(0.5) = ln(pi) / 2.
    let expect = 0.5 * 0.2f64.ln() + 2.0 * 0.8f64.ln() + 0.5f64.ln() - 0.5 * std::f64::consts::PI.ln();
    assert!((log_joint(&s, &m, &hp) - expect).abs() < 1e-12);
}

#[test]
fn log_joint_term_by_term() {
    // N = 3, V = 2, two clusters; alpha = 0.5, lambda = 2 so every term is
    // a closed form: ln Gamma(4) = ln 6, ln Gamma(2) = 0.
    let m = CountMatrix::from_dense(&[vec![2, 1], vec![0, 3], vec![1, 1]]).unwrap();
    let hp = Hyperparams::new(0.5, 2.0, 1.0).unwrap();
    let t0 = [0.6, 0.4];
    let t1 = [0.3, 0.7];
    let w = vec![0.5, 0.3, 0.2];
    let s = ModelState::from_parts(
        &m,
        vec![0, 1, 0],
        w,
        vec![LogProbVector::from_probs(&t0).unwrap(), LogProbVector::from_probs(&t1).unwrap()],
    )
    .unwrap();
    let ln = f64::ln;
    let mut expect = 2.0 * ln(0.5) - 0.5 * ln(std::f64::consts::PI) + 0.5 * ln(0.2);
    expect += 1.0 * ln(0.5) + 0.0 * ln(0.3);
    expect += 2.0 * ln(6.0);
    // Cluster 0 has counts (3, 2), cluster 1 has (0, 3); exponents lambda-1+s.
    expect += 4.0 * ln(0.6) + 3.0 * ln(0.4);
    expect += 1.0 * ln(0.3) + 4.0 * ln(0.7);
    assert!((log_joint(&s, &m, &hp) - expect).abs() < 1e-8);
}

#[test]
fn log_joint_ignores_cluster_order() {
    let m = CountMatrix::from_dense(&[vec![2, 1], vec![0, 3], vec![1, 1]]).unwrap();
    let hp = Hyperparams::default();
    let a = LogProbVector::from_probs(&[0.6, 0.4]).unwrap();
    let b = LogProbVector::from_probs(&[0.3, 0.7]).unwrap();
    let s1 = ModelState::from_parts(&m, vec![0, 1, 0], vec![0.5, 0.3, 0.2], vec![a.clone(), b.clone()]).unwrap();
    let s2 = ModelState::from_parts(&m, vec![1, 0, 1], vec![0.3, 0.5, 0.2], vec![b, a]).unwrap();
    assert!((log_joint(&s1, &m, &hp) - log_joint(&s2, &m, &hp)).abs() < 1e-12);
}

proptest! {
    #[test]
    fn theta_draws_are_normalized(counts in proptest::collection::vec(0u64..50, 1..30), lambda in 0.01f64..3.0, seed: u64) {
        let n: u64 = counts.iter().sum();
        let stats = ClusterStats::from_counts(n.max(1) as usize, counts);
        let t = sample_theta_posterior(&stats, lambda, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(t.is_normalized(1e-9));
        let again = sample_theta_posterior(&stats, lambda, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(t, again);
    }

    #[test]
    fn mixing_weights_form_a_simplex(sizes in proptest::collection::vec(1usize..100, 1..10), alpha in 0.05f64..2.0, seed: u64) {
        let w = sample_mixing_weights(&sizes, alpha, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(w.len(), sizes.len() + 1);
        prop_assert!(w.iter().all(|&x| x > 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
