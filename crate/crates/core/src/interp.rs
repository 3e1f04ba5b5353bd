//! Concrete small-step machine over configurations ⟨M, w, s⟩.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::lang::{decompose, fresh_name, subst, Decomposition, Term, Type, TypedProgram, Zipper};
use crate::rng::{chunks, open_unit, stream};

mod machine;

pub const DEFAULT_STEP_BUDGET: u64 = 1_000_000;

pub type Trace = Vec<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum FailReason {
    NegativeScore,
    PrimDomain,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Outcome {
    /// Reached a value having consumed the whole trace.
    Terminated,
    /// Reached a value with `consumed` < trace length entries used (replay
    /// only); weight and value functions treat this as 0 / ⊥.
    Overrun { consumed: usize },
    Failed(FailReason),
    /// The run asked for more samples than the trace holds (replay only).
    StuckNeedsSample,
    BudgetExceeded,
}

impl Outcome {
    pub fn label(&self) -> &'static str {
        match self {
            Outcome::Terminated => "terminated",
            Outcome::Overrun { .. } => "overrun",
            Outcome::Failed(_) => "failed",
            Outcome::StuckNeedsSample => "stuck",
            Outcome::BudgetExceeded => "budget",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub outcome: Outcome,
    /// Final value for `Terminated` and `Overrun`.
    pub value: Option<Arc<Term>>,
    pub weight: f64,
    /// Samples consumed, in order.
    pub trace: Trace,
    pub steps: u64,
    /// Conditional decisions taken, `true` for the then-branch.
    pub branches: Vec<bool>,
}

impl RunOutcome {
    pub fn terminated(&self) -> bool {
        self.outcome == Outcome::Terminated
    }

    pub fn real_value(&self) -> Option<f64> {
        self.value.as_ref().and_then(|v| v.as_const())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InterpError {
    #[error("program has {expected} inputs, got {got}")]
    InputArity { expected: usize, got: usize },
    #[error("trace entry {index} = {value} is not in (0, 1)")]
    TraceEntry { index: usize, value: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Configuration {
    pub term: Arc<Term>,
    pub weight: f64,
    pub trace: Trace,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    Next(Configuration),
    Value,
    Fail(FailReason),
    /// The redex is `sample` and no sample was supplied.
    NeedsSample,
}

enum Contracted {
    Term(Arc<Term>),
    Branch(Arc<Term>, bool),
    Sampled(f64),
    Scored(f64),
    Fail(FailReason),
    NeedsSample,
}

fn contract(redex: &Arc<Term>, next_sample: &mut dyn FnMut() -> Option<f64>) -> Contracted {
    match &**redex {
        Term::App(f, v) => match &**f {
            Term::Lam(y, _, body) => Contracted::Term(subst(body, y, v)),
            _ => unreachable!("decompose only yields β-redexes with a lambda head"),
        },
        Term::Prim(p, args) => {
            let vals: Vec<f64> = args
                .iter()
                .map(|a| a.as_const().expect("concrete machine sees constant arguments"))
                .collect();
            match p.eval(&vals) {
                Ok(v) => Contracted::Term(Term::constant(v)),
                Err(_) => Contracted::Fail(FailReason::PrimDomain),
            }
        }
        Term::Fix(lam) => Contracted::Term(unfold(lam)),
        Term::IfLeq(l, m, n) => {
            let r = l.as_const().expect("concrete machine sees constant scrutinees");
            if r <= 0.0 {
                Contracted::Branch(m.clone(), true)
            } else {
                Contracted::Branch(n.clone(), false)
            }
        }
        Term::Sample => match next_sample() {
            Some(s) => Contracted::Sampled(s),
            None => Contracted::NeedsSample,
        },
        Term::Score(v) => {
            let r = v.as_const().expect("concrete machine sees constant scores");
            if r >= 0.0 {
                Contracted::Scored(r)
            } else {
                Contracted::Fail(FailReason::NegativeScore)
            }
        }
        other => unreachable!("not a redex: {other:?}"),
    }
}

/// `Y(λy.M)` → `λz. M[Y(λy.M)/y] z`, shared with the symbolic machine.
pub(crate) fn unfold(lam: &Arc<Term>) -> Arc<Term> {
    let Term::Lam(y, ty, body) = &**lam else {
        unreachable!("decompose only yields Y applied to a lambda")
    };
    let Type::Arrow(sigma, _) = ty else {
        unreachable!("fixpoint binder has a function type")
    };
    let mut avoid = body.names();
    avoid.insert(y.clone());
    let z = fresh_name("z", &avoid);
    let fix = Arc::new(Term::Fix(lam.clone()));
    let inner = Term::app(subst(body, y, &fix), Arc::new(Term::Var(z.clone())));
    Arc::new(Term::Lam(z, (**sigma).clone(), inner))
}

/// One reduction step of a closed concrete configuration.
pub fn step(cfg: &Configuration, next_sample: Option<f64>) -> Step {
    let (ctx, redex) = match decompose(&cfg.term) {
        Decomposition::Value => return Step::Value,
        Decomposition::Redex(ctx, r) => (ctx, r),
        Decomposition::Stuck => panic!("ill-formed configuration: {}", cfg.term),
    };
    let mut supply = next_sample;
    let mut weight = cfg.weight;
    let mut trace = cfg.trace.clone();
    let new = match contract(&redex, &mut || supply.take()) {
        Contracted::Term(t) | Contracted::Branch(t, _) => t,
        Contracted::Sampled(s) => {
            trace.push(s);
            Term::constant(s)
        }
        Contracted::Scored(r) => {
            weight *= r;
            Term::constant(r)
        }
        Contracted::Fail(reason) => return Step::Fail(reason),
        Contracted::NeedsSample => return Step::NeedsSample,
    };
    Step::Next(Configuration {
        term: ctx.plug(new),
        weight,
        trace,
    })
}

/// Runs `term` to completion, drawing samples from `next_sample`.
pub fn run_term(term: &Arc<Term>, next_sample: &mut dyn FnMut() -> Option<f64>, budget: u64) -> RunOutcome {
    machine::run(term, next_sample, budget)
}

/// Same as [`run_term`] but driven by refocusing the substitution machine.
pub fn run_term_subst(term: &Arc<Term>, next_sample: &mut dyn FnMut() -> Option<f64>, budget: u64) -> RunOutcome {
    let mut zip = Zipper::new(term.clone());
    let mut out = RunOutcome {
        outcome: Outcome::Terminated,
        value: None,
        weight: 1.0,
        trace: Vec::new(),
        steps: 0,
        branches: Vec::new(),
    };
    loop {
        match zip.refocus() {
            Decomposition::Value => {
                out.value = Some(zip.focus().clone());
                return out;
            }
            Decomposition::Redex(..) => {}
            Decomposition::Stuck => panic!("ill-formed configuration: {}", zip.into_term()),
        }
        if out.steps >= budget {
            out.outcome = Outcome::BudgetExceeded;
            return out;
        }
        let new = match contract(zip.focus(), next_sample) {
            Contracted::Term(t) => t,
            Contracted::Branch(t, then) => {
                out.branches.push(then);
                t
            }
            Contracted::Sampled(s) => {
                out.trace.push(s);
                Term::constant(s)
            }
            Contracted::Scored(r) => {
                out.weight *= r;
                Term::constant(r)
            }
            Contracted::Fail(reason) => {
                out.outcome = Outcome::Failed(reason);
                return out;
            }
            Contracted::NeedsSample => {
                out.outcome = Outcome::StuckNeedsSample;
                return out;
            }
        };
        out.steps += 1;
        zip.replace(new);
    }
}

/// Closes the program by substituting constants for its inputs.
pub fn close(prog: &TypedProgram, inputs: &[f64]) -> Result<Arc<Term>, InterpError> {
    if inputs.len() != prog.free_vars.len() {
        return Err(InterpError::InputArity {
            expected: prog.free_vars.len(),
            got: inputs.len(),
        });
    }
    Ok(prog
        .free_vars
        .iter()
        .zip(inputs)
        .fold(prog.term.clone(), |t, (x, r)| subst(&t, x, &Term::constant(*r))))
}

/// Deterministic run consuming `trace` left to right.
pub fn replay(prog: &TypedProgram, inputs: &[f64], trace: &[f64], budget: u64) -> Result<RunOutcome, InterpError> {
    if let Some((index, &value)) = trace.iter().enumerate().find(|(_, s)| !(**s > 0.0 && **s < 1.0)) {
        return Err(InterpError::TraceEntry { index, value });
    }
    let term = close(prog, inputs)?;
    Ok(replay_term(&term, trace, budget))
}

/// Replay of an already closed term.
pub fn replay_term(term: &Arc<Term>, trace: &[f64], budget: u64) -> RunOutcome {
    let mut it = trace.iter().copied();
    let mut out = run_term(term, &mut || it.next(), budget);
    if out.outcome == Outcome::Terminated && out.trace.len() < trace.len() {
        out.outcome = Outcome::Overrun {
            consumed: out.trace.len(),
        };
    }
    out
}

/// `weight_M(r, s)`: the final weight when the run ends exactly on `s`,
/// otherwise 0.
pub fn weight_of(prog: &TypedProgram, inputs: &[f64], trace: &[f64]) -> f64 {
    match replay(prog, inputs, trace, DEFAULT_STEP_BUDGET) {
        Ok(out) if out.terminated() => out.weight,
        _ => 0.0,
    }
}

/// `value_M(r, s)`: the final value when the run ends exactly on `s`.
pub fn value_of(prog: &TypedProgram, inputs: &[f64], trace: &[f64]) -> Option<Arc<Term>> {
    match replay(prog, inputs, trace, DEFAULT_STEP_BUDGET) {
        Ok(out) if out.terminated() => out.value,
        _ => None,
    }
}

/// Run drawing fresh uniforms from `rng`.
pub fn run_with_rng<R: Rng + ?Sized>(term: &Arc<Term>, rng: &mut R, budget: u64) -> RunOutcome {
    run_term(term, &mut || Some(open_unit(rng)), budget)
}

/// Single seeded run.
pub fn run_sampling(prog: &TypedProgram, inputs: &[f64], seed: u64, budget: u64) -> Result<RunOutcome, InterpError> {
    let term = close(prog, inputs)?;
    let mut rng = stream(seed, "interp", "run", 0);
    Ok(run_with_rng(&term, &mut rng, budget))
}

/// `n` independent seeded runs, in a fixed order.
pub fn run_many(term: &Arc<Term>, n: usize, seed: u64, purpose: &str, budget: u64) -> Vec<RunOutcome> {
    run_many_map(term, n, seed, purpose, budget, |r| r)
}

/// [`run_many`] keeping only `f` of each run.
pub fn run_many_map<T: Send>(
    term: &Arc<Term>,
    n: usize,
    seed: u64,
    purpose: &str,
    budget: u64,
    f: impl Fn(RunOutcome) -> T + Sync,
) -> Vec<T> {
    chunks(n)
        .into_par_iter()
        .flat_map_iter(|(worker, _, len)| {
            let mut rng = stream(seed, "interp", purpose, worker);
            let f = &f;
            (0..len).map(move |_| f(run_with_rng(term, &mut rng, budget))).collect::<Vec<_>>()
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct TerminationEstimate {
    pub n_runs: usize,
    pub p_hat: f64,
    /// Half-width of the Wilson 95% interval.
    pub ci_halfwidth: f64,
    pub budget_exceeded: usize,
    pub failed: usize,
    /// Mean trace length over terminated runs.
    pub mean_trace_len: f64,
}

/// Centre and half-width of the Wilson 95% interval for `k` of `n`.
pub fn wilson(k: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let z = 1.959_963_984_540_054_f64;
    let (nf, p) = (n as f64, k as f64 / n as f64);
    let denom = 1.0 + z * z / nf;
    let centre = (p + z * z / (2.0 * nf)) / denom;
    let half = z * (p * (1.0 - p) / nf + z * z / (4.0 * nf * nf)).sqrt() / denom;
    (centre, half)
}

pub fn estimate_termination(
    prog: &TypedProgram,
    inputs: &[f64],
    n_runs: usize,
    budget: u64,
    seed: u64,
) -> Result<TerminationEstimate, InterpError> {
    let term = close(prog, inputs)?;
    let runs = run_many_map(&term, n_runs, seed, "termination", budget, |r| (r.outcome, r.trace.len()));
    let done: Vec<usize> = runs.iter().filter(|r| r.0 == Outcome::Terminated).map(|r| r.1).collect();
    let (_, half) = wilson(done.len(), n_runs);
    let mean_trace_len = if done.is_empty() {
        0.0
    } else {
        done.iter().map(|&k| k as f64).sum::<f64>() / done.len() as f64
    };
    Ok(TerminationEstimate {
        n_runs,
        p_hat: if n_runs == 0 { 0.0 } else { done.len() as f64 / n_runs as f64 },
        ci_halfwidth: half,
        budget_exceeded: runs.iter().filter(|r| r.0 == Outcome::BudgetExceeded).count(),
        failed: runs.iter().filter(|r| matches!(r.0, Outcome::Failed(_))).count(),
        mean_trace_len,
    })
}

/// Monte Carlo estimate of `⟦M⟧(U) = E[weight · 1{value ∈ U}]` under the
/// prior, with its standard error.
pub fn estimate_value_measure(
    prog: &TypedProgram,
    inputs: &[f64],
    predicate: impl Fn(&Term) -> bool + Sync,
    n_runs: usize,
    seed: u64,
    budget: u64,
) -> Result<(f64, f64), InterpError> {
    let term = close(prog, inputs)?;
    let runs = run_many(&term, n_runs, seed, "value-measure", budget);
    let xs: Vec<f64> = runs
        .iter()
        .map(|r| match (&r.outcome, &r.value) {
            (Outcome::Terminated, Some(v)) if predicate(v) => r.weight,
            _ => 0.0,
        })
        .collect();
    let n = xs.len().max(1) as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}
