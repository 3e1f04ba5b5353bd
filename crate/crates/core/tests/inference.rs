//! Posterior checks of the samplers against closed forms.

use statrs::distribution::{ChiSquared, ContinuousCDF};

use spcf::inference::{importance_sample, trace_mh, MhConfig};
use spcf::interp::DEFAULT_STEP_BUDGET;
use spcf::lang::parse;

/// Pearson statistic of observed counts against expected probabilities,
/// and its p-value.
fn chi_square(counts: &[f64], probs: &[f64]) -> f64 {
    let n: f64 = counts.iter().sum();
    let stat: f64 = counts
        .iter()
        .zip(probs)
        .map(|(o, p)| (o - n * p).powi(2) / (n * p))
        .sum();
    let dist = ChiSquared::new((counts.len() - 1) as f64).unwrap();
    1.0 - dist.cdf(stat)
}

fn chain_values(src: &str, steps: usize, sigma: f64, thin: usize, seed: u64) -> Vec<f64> {
    let cfg = MhConfig {
        steps,
        sigma,
        burn_in: 1000,
        ..MhConfig::default()
    };
    let chain = trace_mh(&parse(src).unwrap(), &[], &cfg, seed).unwrap();
    chain.samples.iter().step_by(thin).map(|s| s.value).collect()
}

#[test]
fn importance_and_mh_agree_on_linear_score() {
    let src = "let s = sample in score(s); s";
    let p = parse(src).unwrap();
    let is = importance_sample(&p, &[], 100_000, 11, DEFAULT_STEP_BUDGET).unwrap();
    let (m1, se1) = is.mean().unwrap();
    let cfg = MhConfig {
        steps: 100_000,
        sigma: 0.3,
        ..MhConfig::default()
    };
    let chain = trace_mh(&p, &[], &cfg, 12).unwrap();
    let (m2, se2) = chain.mean().unwrap();
    assert!((m1 - m2).abs() <= 3.0 * (se1 * se1 + se2 * se2).sqrt(), "{m1} ± {se1} vs {m2} ± {se2}");
}

#[test]
fn stationary_density_follows_the_weight() {
    // w(s) = s² + 1/2, normalised density (s² + 1/2) · 6/5.
    let xs = chain_values("let s = sample in score(s * s + 0.5); s", 200_000, 0.5, 20, 13);
    let bins = 10;
    let mut counts = vec![0.0; bins];
    for x in &xs {
        counts[((x * bins as f64) as usize).min(bins - 1)] += 1.0;
    }
    let cdf = |x: f64| (x * x * x / 3.0 + x / 2.0) * 6.0 / 5.0;
    let probs: Vec<f64> = (0..bins)
        .map(|k| cdf((k + 1) as f64 / bins as f64) - cdf(k as f64 / bins as f64))
        .collect();
    let p = chi_square(&counts, &probs);
    assert!(p > 0.01, "p = {p}, counts {counts:?}");
}

#[test]
fn stationary_law_across_trace_lengths() {
    // k failures before the first sample ≤ 1/2 has prior 2^-(k+1); scoring
    // 1/(k+1) gives posterior 2^-(k+1) / ((k+1) ln 2).
    let src = "let rec g (n : R) : R = if sample <= 0.5 then n else g (n + 1) in \
               let k = g 0 in score(1 / (k + 1)); k";
    let xs = chain_values(src, 200_000, 0.3, 10, 14);
    let cells = 5;
    let mut counts = vec![0.0; cells + 1];
    for x in &xs {
        counts[(*x as usize).min(cells)] += 1.0;
    }
    let mut probs: Vec<f64> = (0..cells)
        .map(|k| 0.5f64.powi(k as i32 + 1) / ((k + 1) as f64 * std::f64::consts::LN_2))
        .collect();
    probs.push(1.0 - probs.iter().sum::<f64>());
    let p = chi_square(&counts, &probs);
    assert!(p > 0.01, "p = {p}, counts {counts:?}");
}

#[test]
fn ped_posterior_peaks_near_the_observed_distance() {
    let p = parse(spcf::corpus::get("ped").unwrap()).unwrap();
    let res = importance_sample(&p, &[], 20_000, 15, 10_000).unwrap();
    assert!(res.ess > 500.0, "{}", res.ess);
    let h = res.histogram(15, Some((0.0, 3.0))).unwrap();
    let mode = h.bin_center(h.mode());
    assert!((0.6..=1.0).contains(&mode), "{mode}");
    // Nothing beyond x = 2.2: the walk would need to travel at least x.
    assert!(h.masses[11..].iter().all(|m| *m < 1e-3 * h.total), "{:?}", h.masses);
}
