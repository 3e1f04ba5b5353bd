//! Posterior inference over traces with `weight_M` as the unnormalised
//! density: importance sampling from the prior and single-site
//! Metropolis-Hastings.

use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use thiserror::Error;

use crate::interp::{close, run_many, run_term, run_with_rng, InterpError, RunOutcome, Trace};
use crate::lang::{Term, Type, TypedProgram};
use crate::rng::{open_unit, stream};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferError {
    #[error("program result type is {0}, inference needs R")]
    NotReal(Type),
    #[error(transparent)]
    Interp(#[from] InterpError),
    #[error("no positive-weight trace in {0} prior draws")]
    InitFailure(usize),
    #[error("no samples to bin")]
    Empty,
    #[error("bad histogram range [{0}, {1}]")]
    Range(f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PosteriorSample {
    /// NaN for runs that did not terminate.
    pub value: f64,
    pub weight: f64,
    pub trace: Trace,
}

impl PosteriorSample {
    fn from_run(run: RunOutcome) -> PosteriorSample {
        match (run.terminated(), run.real_value()) {
            (true, Some(value)) => PosteriorSample {
                value,
                weight: run.weight,
                trace: run.trace,
            },
            _ => PosteriorSample {
                value: f64::NAN,
                weight: 0.0,
                trace: run.trace,
            },
        }
    }

    pub fn jsonl(&self) -> String {
        let value = if self.value.is_finite() { json!(self.value) } else { json!(null) };
        json!({"value": value, "weight": self.weight, "trace_len": self.trace.len()}).to_string()
    }
}

/// Self-normalised mean of `(value, weight)` pairs and its delta-method
/// standard error.
pub fn weighted_mean(pairs: impl Iterator<Item = (f64, f64)> + Clone) -> Option<(f64, f64)> {
    let total: f64 = pairs.clone().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return None;
    }
    let mean = pairs.clone().map(|(v, w)| v * w).sum::<f64>() / total;
    let var = pairs.map(|(v, w)| (w * (v - mean)).powi(2)).sum::<f64>() / (total * total);
    Some((mean, var.sqrt()))
}

fn check_real(prog: &TypedProgram) -> Result<(), InferError> {
    match &prog.result_type {
        Type::Real => Ok(()),
        t => Err(InferError::NotReal(t.clone())),
    }
}

#[derive(Debug, Clone)]
pub struct ImportanceResult {
    pub samples: Vec<PosteriorSample>,
    /// Kish effective sample size `(Σw)² / Σw²`.
    pub ess: f64,
    /// Runs that failed, got stuck or ran out of budget.
    pub failed: usize,
}

impl ImportanceResult {
    pub fn mean(&self) -> Option<(f64, f64)> {
        weighted_mean(self.pairs())
    }

    fn pairs(&self) -> impl Iterator<Item = (f64, f64)> + Clone + '_ {
        self.samples.iter().filter(|s| s.weight > 0.0).map(|s| (s.value, s.weight))
    }

    pub fn histogram(&self, bins: usize, range: Option<(f64, f64)>) -> Result<Histogram, InferError> {
        Histogram::build(self.pairs(), bins, range)
    }
}

/// Prior proposals: every seeded run is a sample weighted by its final
/// weight.
pub fn importance_sample(
    prog: &TypedProgram,
    inputs: &[f64],
    n: usize,
    seed: u64,
    budget: u64,
) -> Result<ImportanceResult, InferError> {
    check_real(prog)?;
    let term = close(prog, inputs)?;
    let runs = run_many(&term, n, seed, "importance", budget);
    let failed = runs.iter().filter(|r| !r.terminated()).count();
    let samples: Vec<PosteriorSample> = runs.into_iter().map(PosteriorSample::from_run).collect();
    let (s1, s2) = samples
        .iter()
        .fold((0.0, 0.0), |(a, b), s| (a + s.weight, b + s.weight * s.weight));
    let ess = if s2 > 0.0 { s1 * s1 / s2 } else { 0.0 };
    Ok(ImportanceResult { samples, ess, failed })
}

#[derive(Debug, Clone)]
pub struct MhConfig {
    pub steps: usize,
    pub sigma: f64,
    /// Leading states dropped from the chain.
    pub burn_in: usize,
    /// Independent chains, each running `steps` steps.
    pub chains: usize,
    /// Prior draws tried when looking for a positive-weight start.
    pub init_tries: usize,
    pub budget: u64,
}

impl Default for MhConfig {
    fn default() -> Self {
        MhConfig {
            steps: 10_000,
            sigma: 0.1,
            burn_in: 0,
            chains: 1,
            init_tries: 10_000,
            budget: crate::interp::DEFAULT_STEP_BUDGET,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MhChain {
    /// Visited states after burn-in, one per step, chains concatenated.
    pub samples: Vec<PosteriorSample>,
    pub accepted: usize,
    pub proposed: usize,
}

impl MhChain {
    pub fn acceptance_rate(&self) -> f64 {
        if self.proposed == 0 {
            0.0
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }

    /// Plain mean of the visited values with a batch-means standard error.
    pub fn mean(&self) -> Option<(f64, f64)> {
        let xs: Vec<f64> = self.samples.iter().map(|s| s.value).collect();
        if xs.is_empty() {
            return None;
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let batches = 20.min(xs.len());
        let size = xs.len() / batches;
        let bm: Vec<f64> = xs
            .chunks_exact(size)
            .map(|c| c.iter().sum::<f64>() / size as f64)
            .collect();
        let var = bm.iter().map(|b| (b - mean).powi(2)).sum::<f64>() / (bm.len() as f64 - 1.0).max(1.0);
        Some((mean, (var / bm.len() as f64).sqrt()))
    }

    pub fn histogram(&self, bins: usize, range: Option<(f64, f64)>) -> Result<Histogram, InferError> {
        Histogram::build(self.samples.iter().map(|s| (s.value, 1.0)), bins, range)
    }
}

/// Reflects `x` into the unit interval. `None` when it lands on 0 or 1.
fn reflect(x: f64) -> Option<f64> {
    let y = x.rem_euclid(2.0);
    let y = if y > 1.0 { 2.0 - y } else { y };
    (y > 0.0 && y < 1.0).then_some(y)
}

/// Runs on `proposal` as far as it goes, then on fresh uniforms.
fn rerun<R: Rng>(term: &Arc<Term>, proposal: &[f64], rng: &mut R, budget: u64) -> RunOutcome {
    let mut it = proposal.iter().copied();
    run_term(term, &mut || Some(it.next().unwrap_or_else(|| open_unit(rng))), budget)
}

fn single_chain(
    term: &Arc<Term>,
    cfg: &MhConfig,
    seed: u64,
    chain: u64,
) -> Result<MhChain, InferError> {
    let mut rng = stream(seed, "inference", "mh", chain);
    let mut state = (0..cfg.init_tries)
        .map(|_| run_with_rng(term, &mut rng, cfg.budget))
        .find(|r| r.terminated() && r.weight > 0.0 && r.real_value().is_some())
        .map(PosteriorSample::from_run)
        .ok_or(InferError::InitFailure(cfg.init_tries))?;
    let mut samples = Vec::with_capacity(cfg.steps.saturating_sub(cfg.burn_in));
    let (mut accepted, mut proposed) = (0, 0);
    for step in 0..cfg.steps {
        let n = state.trace.len();
        if n > 0 {
            proposed += 1;
            let i = rng.random_range(0..n);
            let z: f64 = rng.sample(StandardNormal);
            if let Some(si) = reflect(state.trace[i] + cfg.sigma * z) {
                let mut proposal = state.trace.clone();
                proposal[i] = si;
                let next = PosteriorSample::from_run(rerun(term, &proposal, &mut rng, cfg.budget));
                // The index is drawn uniformly from the current trace, so a
                // move between dimensions picks up the factor n / n'.
                let ratio = next.weight * n as f64 / (state.weight * next.trace.len() as f64);
                if next.weight > 0.0 && next.value.is_finite() && rng.random::<f64>() < ratio {
                    state = next;
                    accepted += 1;
                }
            }
        }
        if step >= cfg.burn_in {
            samples.push(state.clone());
        }
    }
    Ok(MhChain {
        samples,
        accepted,
        proposed,
    })
}

/// Single-site trace Metropolis-Hastings. Each step changes one trace entry
/// by a reflected Gaussian move and reruns the program, reusing the rest of
/// the trace and drawing fresh uniforms past its end.
pub fn trace_mh(prog: &TypedProgram, inputs: &[f64], cfg: &MhConfig, seed: u64) -> Result<MhChain, InferError> {
    check_real(prog)?;
    let term = close(prog, inputs)?;
    let chains: Vec<MhChain> = (0..cfg.chains.max(1) as u64)
        .into_par_iter()
        .map(|c| single_chain(&term, cfg, seed, c))
        .collect::<Result<_, _>>()?;
    Ok(chains.into_iter().fold(
        MhChain {
            samples: Vec::new(),
            accepted: 0,
            proposed: 0,
        },
        |mut acc, c| {
            acc.samples.extend(c.samples);
            acc.accepted += c.accepted;
            acc.proposed += c.proposed;
            acc
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub masses: Vec<f64>,
    /// Sum of the masses.
    pub total: f64,
    /// Mass of values outside the range, not binned.
    pub outside: f64,
}

impl Histogram {
    /// Weighted binning of `(value, mass)` pairs on `range`, by default the
    /// span of the values.
    pub fn build(
        pairs: impl Iterator<Item = (f64, f64)> + Clone,
        bins: usize,
        range: Option<(f64, f64)>,
    ) -> Result<Histogram, InferError> {
        let bins = bins.max(1);
        let finite = pairs.filter(|(v, _)| v.is_finite());
        if finite.clone().next().is_none() {
            return Err(InferError::Empty);
        }
        let (lo, hi) = match range {
            Some(r) => r,
            None => {
                let (lo, hi) = finite
                    .clone()
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), (v, _)| (a.min(v), b.max(v)));
                if lo == hi {
                    (lo - 0.5, hi + 0.5)
                } else {
                    (lo, hi)
                }
            }
        };
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(InferError::Range(lo, hi));
        }
        let width = (hi - lo) / bins as f64;
        let edges: Vec<f64> = (0..=bins).map(|k| if k == bins { hi } else { lo + width * k as f64 }).collect();
        let mut masses = vec![0.0; bins];
        let mut outside = 0.0;
        for (v, w) in finite {
            if v < lo || v > hi {
                outside += w;
            } else {
                let k = (((v - lo) / width) as usize).min(bins - 1);
                masses[k] += w;
            }
        }
        let total = masses.iter().sum();
        Ok(Histogram {
            edges,
            masses,
            total,
            outside,
        })
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        0.5 * (self.edges[k] + self.edges[k + 1])
    }

    /// Index of the heaviest bin.
    pub fn mode(&self) -> usize {
        self.masses
            .iter()
            .enumerate()
            .fold(0, |best, (k, m)| if *m > self.masses[best] { k } else { best })
    }

    /// Topographic prominence of each local maximum.
    pub fn peaks(&self) -> Vec<(usize, f64)> {
        let m = &self.masses;
        let n = m.len();
        (0..n)
            .filter(|&k| (k == 0 || m[k] > m[k - 1]) && (k + 1 == n || m[k] >= m[k + 1]))
            .map(|k| {
                let side = |range: &mut dyn Iterator<Item = usize>| {
                    let mut low = m[k];
                    for j in range {
                        if m[j] > m[k] {
                            return Some(low);
                        }
                        low = low.min(m[j]);
                    }
                    // Reached the edge without a higher bin.
                    None
                };
                let left = side(&mut (0..k).rev());
                let right = side(&mut (k + 1..n));
                let base = match (left, right) {
                    (Some(a), Some(b)) => a.max(b),
                    (Some(a), None) | (None, Some(a)) => a,
                    (None, None) => 0.0,
                };
                (k, m[k] - base)
            })
            .collect()
    }

    /// One peak stands out by more than `tol` times the largest mass.
    pub fn is_unimodal(&self, tol: f64) -> bool {
        let top = self.masses[self.mode()];
        self.peaks().iter().filter(|(_, p)| *p > tol * top).count() == 1
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_lo,bin_hi,mass\n");
        for (k, m) in self.masses.iter().enumerate() {
            writeln!(out, "{},{},{}", self.edges[k], self.edges[k + 1], m).unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::interp::{weight_of, DEFAULT_STEP_BUDGET};
    use crate::lang::parse;

    const SCORE_S: &str = "let s = sample in let w = score(s) in s";

    fn mh(src: &str, steps: usize, sigma: f64, seed: u64) -> MhChain {
        let cfg = MhConfig {
            steps,
            sigma,
            ..MhConfig::default()
        };
        trace_mh(&parse(src).unwrap(), &[], &cfg, seed).unwrap()
    }

    #[test]
    fn importance_mean_of_linear_score() {
        let res = importance_sample(&parse(SCORE_S).unwrap(), &[], 100_000, 1, DEFAULT_STEP_BUDGET).unwrap();
        let (mean, se) = res.mean().unwrap();
        assert!((mean - 2.0 / 3.0).abs() < 4.0 * se.max(1e-3), "{mean} ± {se}");
        // ESS of w = s under the prior: (1/2)² / (1/3) per draw.
        assert!((res.ess / 100_000.0 - 0.75).abs() < 0.01, "{}", res.ess);
    }

    #[test]
    fn unscored_program_has_unit_weights() {
        let res = importance_sample(&parse("sample").unwrap(), &[], 5000, 2, DEFAULT_STEP_BUDGET).unwrap();
        assert!(res.samples.iter().all(|s| s.weight == 1.0));
        assert_eq!(res.ess, 5000.0);
        let (mean, _) = res.mean().unwrap();
        assert!((mean - 0.5).abs() < 0.02);
    }

    #[test]
    fn mh_mean_of_linear_score() {
        let chain = mh(SCORE_S, 100_000, 0.3, 3);
        let (mean, se) = chain.mean().unwrap();
        assert!((mean - 2.0 / 3.0).abs() < 0.02, "{mean} ± {se}");
        assert!(chain.acceptance_rate() > 0.3);
    }

    #[test]
    fn zero_sigma_stays_put() {
        let chain = mh(SCORE_S, 200, 0.0, 4);
        let first = &chain.samples[0];
        assert!(chain.samples.iter().all(|s| s == first));
    }

    #[test]
    fn states_carry_their_weight() {
        let p = parse("let rec g (u : R) : R = if sample <= 0.5 then u else g (u + score(sample)) in g 1").unwrap();
        let chain = mh("let rec g (u : R) : R = if sample <= 0.5 then u else g (u + score(sample)) in g 1", 2000, 0.2, 5);
        for s in chain.samples.iter().step_by(97) {
            assert_eq!(s.weight, weight_of(&p, &[], &s.trace));
        }
        // Dimension changes happen.
        let lens: std::collections::BTreeSet<usize> = chain.samples.iter().map(|s| s.trace.len()).collect();
        assert!(lens.len() > 2);
    }

    #[test]
    fn never_moves_to_zero_weight() {
        let chain = mh("let s = sample in if s <= 0.5 then score(0) else s", 5000, 0.5, 6);
        assert!(chain.samples.iter().all(|s| s.weight > 0.0 && s.value > 0.5));
    }

    #[test]
    fn init_failure_without_positive_weight() {
        let cfg = MhConfig {
            init_tries: 50,
            ..MhConfig::default()
        };
        let err = trace_mh(&parse("score(0)").unwrap(), &[], &cfg, 0).unwrap_err();
        assert_eq!(err, InferError::InitFailure(50));
    }

    #[test]
    fn lambda_results_are_rejected() {
        let err = importance_sample(&parse("fn (x : R) -> x").unwrap(), &[], 10, 0, 100).unwrap_err();
        assert!(matches!(err, InferError::NotReal(_)));
    }

    #[test]
    fn reflection_stays_inside() {
        assert_eq!(reflect(0.25), Some(0.25));
        assert!((reflect(1.25).unwrap() - 0.75).abs() < 1e-15);
        assert!((reflect(-0.25).unwrap() - 0.25).abs() < 1e-15);
        assert!((reflect(2.25).unwrap() - 0.25).abs() < 1e-15);
        assert_eq!(reflect(1.0), None);
    }

    #[test]
    fn equal_weights_fill_equal_bins() {
        let vals: Vec<(f64, f64)> = (0..3000).map(|k| ((k as f64 + 0.5) / 1000.0, 1.0)).collect();
        let h = Histogram::build(vals.iter().copied(), 3, Some((0.0, 3.0))).unwrap();
        assert_eq!(h.masses, vec![1000.0, 1000.0, 1000.0]);
        assert_eq!(h.total, 3000.0);
        assert!(h.edges.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn single_sample_fills_one_bin() {
        let h = Histogram::build([(0.4, 2.0)].into_iter(), 10, None).unwrap();
        assert_eq!(h.masses.iter().filter(|m| **m > 0.0).count(), 1);
        assert_eq!(h.total, 2.0);
        assert!(matches!(Histogram::build(std::iter::empty(), 3, None), Err(InferError::Empty)));
    }

    #[test]
    fn csv_layout() {
        let h = Histogram::build([(0.5, 1.0), (1.5, 3.0)].into_iter(), 2, Some((0.0, 2.0))).unwrap();
        assert_eq!(h.to_csv(), "bin_lo,bin_hi,mass\n0,1,1\n1,2,3\n");
    }

    #[test]
    fn prominence_ignores_small_bumps() {
        let h = Histogram {
            edges: (0..=6).map(f64::from).collect(),
            masses: vec![1.0, 5.0, 10.0, 7.0, 7.5, 2.0],
            total: 32.5,
            outside: 0.0,
        };
        assert_eq!(h.mode(), 2);
        assert!(h.is_unimodal(0.1));
        assert!(!h.is_unimodal(0.01));
    }

    #[test]
    fn chains_are_reproducible() {
        let a = mh(SCORE_S, 500, 0.3, 9);
        let b = mh(SCORE_S, 500, 0.3, 9);
        assert_eq!(a.samples, b.samples);
    }

    #[test]
    fn jsonl_record() {
        let s = PosteriorSample {
            value: 0.5,
            weight: 2.0,
            trace: vec![0.1, 0.2],
        };
        assert_eq!(s.jsonl(), r#"{"trace_len":2,"value":0.5,"weight":2.0}"#);
    }
}
