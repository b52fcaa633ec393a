//! Monte Carlo checks of the estimators against closed forms and of the
//! permutation null.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use spotvol::lowrank::ResidualSeries;
use spotvol::residual_stats::{fit_bulk_exponential, truncated_exponential_mean};
use spotvol::seasonality::permutation_test;
use spotvol::synth::{generate, generate_components, SynthSpec};

fn exp_sample(mu: f64, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Exp::new(1.0 / mu).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

/// Monte Carlo estimate of the trimmed mean on a very large sample, independent
/// of the estimator's order-statistic code path.
fn monte_carlo_truncated_mean(mu: f64, q: f64) -> f64 {
    let c = mu * (1.0 / (1.0 - q)).ln();
    let xs = exp_sample(mu, 2_000_000, 424242);
    let kept: Vec<f64> = xs.into_iter().filter(|x| *x <= c).collect();
    kept.iter().sum::<f64>() / kept.len() as f64
}

#[test]
fn closed_form_agrees_with_monte_carlo() {
    let closed = truncated_exponential_mean(3.0, 0.99);
    let mc = monte_carlo_truncated_mean(3.0, 0.99);
    assert!((closed - mc).abs() / closed < 0.005, "{closed} vs {mc}");
}

#[test]
fn single_year_sample_within_three_percent() {
    let target = truncated_exponential_mean(3.0, 0.99);
    let fit = fit_bulk_exponential(&ResidualSeries::observed(exp_sample(3.0, 8784, 1)), 0.99).unwrap();
    assert!((fit.mu_trimmed - target).abs() / target <= 0.03, "{}", fit.mu_trimmed);
}

#[test]
fn truncated_mean_law_over_100_trials() {
    let target = truncated_exponential_mean(3.0, 0.99);
    let mean = (0..100)
        .map(|seed| {
            let r = ResidualSeries::observed(exp_sample(3.0, 8784, 1000 + seed));
            fit_bulk_exponential(&r, 0.99).unwrap().mu_trimmed
        })
        .sum::<f64>()
        / 100.0;
    assert!((mean - target).abs() / target <= 0.02, "{mean} vs {target}");
}

#[test]
fn censored_mle_removes_truncation_bias() {
    let mean = (0..50)
        .map(|seed| {
            let r = ResidualSeries::observed(exp_sample(3.0, 8784, seed));
            fit_bulk_exponential(&r, 0.99).unwrap().mu_censored
        })
        .sum::<f64>()
        / 50.0;
    assert!((mean - 3.0).abs() / 3.0 <= 0.01, "{mean}");
}

fn ks_statistic(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn permutation_null_ignores_input_order() {
    // strongly structured input: the null distribution must not care
    let n = 8784;
    let mut r: Vec<f64> = (0..n)
        .map(|h| ((h as f64 - n as f64 / 2.0) / (n as f64 / 2.0)).abs() * 5.0)
        .collect();
    let a = permutation_test(&ResidualSeries::observed(r.clone()), 1000, 1).unwrap();
    r.shuffle(&mut ChaCha8Rng::seed_from_u64(77));
    let b = permutation_test(&ResidualSeries::observed(r), 1000, 2).unwrap();
    let ks = ks_statistic(&a.permutation_values, &b.permutation_values);
    assert!(ks <= 0.1, "KS {ks}");
    assert!(a.p_value < 0.01);
}

#[test]
fn synth_distinct_seeds_differ() {
    for seed in 0..100u64 {
        let a = generate(&SynthSpec::price_like(2015, 1.0, seed)).unwrap();
        let b = generate(&SynthSpec::price_like(2015, 1.0, seed + 1000)).unwrap();
        assert_ne!(a, b);
    }
}

#[test]
fn synth_noise_is_uncorrelated_with_signal() {
    for seed in 0..5 {
        let c = generate_components(&SynthSpec::price_like(2016, 3.0, seed)).unwrap();
        let n = c.signal.len() as f64;
        let ms = c.signal.iter().sum::<f64>() / n;
        let me = c.noise.iter().sum::<f64>() / n;
        let (mut sse, mut see, mut sxe) = (0.0, 0.0, 0.0);
        for (s, e) in c.signal.iter().zip(&c.noise) {
            sse += (s - ms).powi(2);
            see += (e - me).powi(2);
            sxe += (s - ms) * (e - me);
        }
        let corr = sxe / (sse * see).sqrt();
        assert!(corr.abs() < 0.05, "seed {seed}: {corr}");
    }
}
