//! Branch-wise differentiability checks, boundary masses, non-differentiability
//! witnesses and the classification of the trace space.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value as Json};
use thiserror::Error;

use crate::interp::{estimate_termination, replay, Outcome, TerminationEstimate, DEFAULT_STEP_BUDGET};
use crate::lang::TypedProgram;
use crate::primitives::{PrimClass, PrimError, PrimKind};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::rng::{chunks, open_unit, stream, StreamRng};
use crate::symbolic::{
    boundary_mass, estimate_region_measure, explore, grad_product, guided_interior_points, is_interior, descend_to_interior, BranchMap, Expr, ExploreConfig,
    InputBox, Interval, Leaf, MeasureEstimate,
};

#[derive(Debug, Clone)]
pub struct DiffConfig {
    pub explore: ExploreConfig,
    pub points_per_leaf: usize,
    pub fd_h: f64,
    pub tol: f64,
    /// Interior margin of the tested points; must exceed `fd_h`.
    pub margin: f64,
    pub eps: Vec<f64>,
    pub boundary_points: usize,
    pub measure_points: usize,
    /// Coordinate draws allowed when looking for the interior points of one
    /// leaf.
    pub sampler_tries: usize,
    pub jump_threshold: f64,
    /// Leaf pairs searched for witnesses.
    pub witness_pairs: usize,
    /// Segments bisected per pair.
    pub witness_probes: usize,
    pub step_budget: u64,
    /// Skip the termination estimate and take a.s. termination as given.
    pub assume_ast: bool,
    pub termination_runs: usize,
    /// Step budget of each termination run.
    pub termination_budget: u64,
    pub seed: u64,
}

impl Default for DiffConfig {
    fn default() -> Self {
        DiffConfig {
            explore: ExploreConfig {
                max_depth: 100,
                ..ExploreConfig::default()
            },
            points_per_leaf: 50,
            fd_h: 1e-5,
            tol: 1e-4,
            margin: 1e-3,
            eps: vec![1e-2, 1e-3, 1e-4],
            boundary_points: 4000,
            measure_points: 4000,
            sampler_tries: 20_000,
            jump_threshold: 1e-6,
            witness_pairs: 16,
            witness_probes: 8,
            step_budget: DEFAULT_STEP_BUDGET,
            assume_ast: false,
            termination_runs: 200,
            termination_budget: 100_000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GradientError {
    #[error("point is not in the leaf region")]
    Outside,
    #[error(transparent)]
    Boundary(#[from] PrimError),
}

/// Gradients with respect to `(r, s)`; `value` is `None` when the leaf's value
/// is a lambda.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchGradient {
    pub weight: Vec<f64>,
    pub value: Option<Vec<f64>>,
}

pub fn branch_gradient(leaf: &Leaf, r: &[f64], s: &[f64], margin: f64) -> Result<BranchGradient, GradientError> {
    let cfg = &leaf.config;
    if !cfg.region.contains(r, s) {
        return Err(GradientError::Outside);
    }
    let weight = grad_product(&cfg.weight, r, s, margin)?;
    let value = match cfg.value_expr() {
        Some(e) => Some(e.grad(r, s, margin)?),
        None => None,
    };
    Ok(BranchGradient { weight, value })
}

/// Central differences of `f` at `(r, s)`, coordinates ordered `r` then `s`.
pub fn central_difference(
    r: &[f64],
    s: &[f64],
    h: f64,
    f: impl Fn(&[f64], &[f64]) -> Option<f64>,
) -> Option<Vec<f64>> {
    let m = r.len();
    (0..m + s.len())
        .map(|k| {
            let shifted = |d: f64| {
                let (mut r2, mut s2) = (r.to_vec(), s.to_vec());
                if k < m {
                    r2[k] += d;
                } else {
                    s2[k - m] += d;
                }
                f(&r2, &s2)
            };
            Some((shifted(h)? - shifted(-h)?) / (2.0 * h))
        })
        .collect()
}

/// `max_k |a_k − b_k| / max(1, |b_k|)`.
pub fn gradient_error(ad: &[f64], fd: &[f64]) -> f64 {
    ad.iter()
        .zip(fd)
        .map(|(a, b)| (a - b).abs() / b.abs().max(1.0))
        .fold(0.0, f64::max)
}

fn rel_diff(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct LeafReport {
    pub leaf: usize,
    pub n: usize,
    pub path: String,
    pub points_tested: usize,
    /// The region provably has empty interior, so there is nothing to test.
    pub null: bool,
    /// Points whose margin probe failed and were left out.
    pub boundary_errors: usize,
    pub max_weight_error: f64,
    /// `None` for lambda-valued leaves.
    pub max_value_error: Option<f64>,
    /// Largest relative gap between the symbolic and concrete weight/value.
    pub max_symbolic_gap: f64,
    /// Points beyond `tol`, or where the concrete run left the branch.
    pub failures: usize,
    pub measure: MeasureEstimate,
    pub boundary: Vec<(f64, MeasureEstimate)>,
    pub boundary_shrinks: bool,
}

impl LeafReport {
    pub fn max_error(&self) -> f64 {
        self.max_weight_error.max(self.max_value_error.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Witness {
    pub r: Vec<f64>,
    pub s: Vec<f64>,
    /// Leaf on each side of the boundary.
    pub leaves: (usize, usize),
    pub weight_jump: f64,
    pub value_jump: f64,
    /// Distance between the two straddling points.
    pub width: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DiffReport {
    pub program_hash: String,
    pub tol: f64,
    pub fd_h: f64,
    pub leaves: Vec<LeafReport>,
    /// Σ μ̂ over terminal leaves.
    pub covered_measure: f64,
    pub covered_ci: f64,
    /// Σ μ̂ over the sample-redex snapshots, each in its own dimension.
    pub stuck_measure: f64,
    pub budget_measure: f64,
    pub witnesses: Vec<Witness>,
    pub unverified_primitives: Vec<String>,
    pub termination: Option<TerminationEstimate>,
    /// A.s. termination was assumed or estimated at ≥ 0.999.
    pub ast: bool,
    pub exhausted: bool,
    pub pass: bool,
}

impl DiffReport {
    pub fn to_json(&self) -> Json {
        let mut v = serde_json::to_value(self).expect("report serialises");
        v["schema"] = json!(crate::SCHEMA);
        v
    }

    pub fn summary(&self) -> String {
        let tested = self.leaves.iter().filter(|l| l.points_tested > 0).count();
        let worst = self.leaves.iter().map(LeafReport::max_error).fold(0.0, f64::max);
        let mut out = format!(
            "{} terminal leaves ({} tested), max gradient error {:.3e} (tol {:.0e})\n",
            self.leaves.len(),
            tested,
            worst,
            self.tol
        );
        out += &format!(
            "measure: terminal {:.4} ± {:.4}, stuck {:.4}, budget {:.4}\n",
            self.covered_measure, self.covered_ci, self.stuck_measure, self.budget_measure
        );
        out += &format!("witnesses: {}\n", self.witnesses.len());
        if !self.unverified_primitives.is_empty() {
            out += &format!("warning: unverified primitives {}\n", self.unverified_primitives.join(", "));
        }
        if !self.ast {
            out += "warning: almost-sure termination not established; only branch-wise claims apply\n";
        }
        out += if self.pass { "pass\n" } else { "FAIL\n" };
        out
    }
}

/// Interior points of a leaf region: guided draws, topped up by a random
/// walk inside the region when the guided sampler finds too few.
const DESCENT_ROUNDS: usize = 4;

pub fn leaf_points(
    leaf: &Leaf,
    k: usize,
    margin: f64,
    max_tries: usize,
    seed: u64,
    input: InputBox,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let reg = &leaf.config.region;
    let mut rng = stream(seed, "diff", "points", leaf.id as u64);
    let mut out = guided_interior_points(reg, k, margin, max_tries, &mut rng, input);
    // Thin leaves sometimes need a few descent rounds.
    for _ in 0..DESCENT_ROUNDS {
        if !out.is_empty() {
            break;
        }
        out.extend(descend_to_interior(reg, margin, max_tries, &mut rng, input));
    }
    if out.is_empty() || out.len() >= k {
        return out;
    }
    let mut cur = out[out.len() - 1].clone();
    let mut sigma = 0.05;
    let scale_r = input.hi - input.lo;
    for _ in 0..max_tries {
        if out.len() >= k {
            break;
        }
        let step = |x: f64, w: f64, rng: &mut StreamRng| x + sigma * w * rng.sample::<f64, _>(StandardNormal);
        let r: Vec<f64> = cur.0.iter().map(|x| step(*x, scale_r, &mut rng)).collect();
        let s: Vec<f64> = cur.1.iter().map(|x| step(*x, 1.0, &mut rng)).collect();
        if is_interior(reg, &r, &s, margin, input) {
            cur = (r, s);
            out.push(cur.clone());
            sigma = (sigma * 2.0).min(0.5);
        } else {
            sigma = (sigma * 0.5).max(1e-6);
        }
    }
    out
}

struct PointCheck {
    weight_error: f64,
    value_error: Option<f64>,
    gap: f64,
    ok: bool,
}

fn check_point(prog: &TypedProgram, leaf: &Leaf, r: &[f64], s: &[f64], cfg: &DiffConfig) -> Result<PointCheck, GradientError> {
    let ad = branch_gradient(leaf, r, s, cfg.margin)?;
    let run = |r: &[f64], s: &[f64]| replay(prog, r, s, cfg.step_budget).ok().filter(|o| o.terminated());
    let weight_fd = central_difference(r, s, cfg.fd_h, |r, s| run(r, s).map(|o| o.weight));
    let value_fd = ad
        .value
        .as_ref()
        .map(|_| central_difference(r, s, cfg.fd_h, |r, s| run(r, s).and_then(|o| o.real_value())));
    let Some(weight_fd) = weight_fd else {
        return Ok(PointCheck {
            weight_error: f64::INFINITY,
            value_error: None,
            gap: f64::INFINITY,
            ok: false,
        });
    };
    let weight_error = gradient_error(&ad.weight, &weight_fd);
    let value_error = match (&ad.value, value_fd) {
        (Some(a), Some(Some(f))) => Some(gradient_error(a, &f)),
        (Some(_), _) => Some(f64::INFINITY),
        _ => None,
    };
    let cfg_leaf = &leaf.config;
    let concrete = run(r, s);
    let gap = match &concrete {
        Some(o) => {
            let wg = cfg_leaf.weight_at(r, s).map_or(f64::INFINITY, |w| rel_diff(w, o.weight));
            let vg = match (cfg_leaf.value_expr(), o.real_value()) {
                (Some(e), Some(v)) => e.eval_at(r, s).map_or(f64::INFINITY, |x| rel_diff(x, v)),
                (None, None) => 0.0,
                _ => f64::INFINITY,
            };
            wg.max(vg)
        }
        None => f64::INFINITY,
    };
    let ok = weight_error <= cfg.tol && value_error.is_none_or(|e| e <= cfg.tol);
    Ok(PointCheck {
        weight_error,
        value_error,
        gap,
        ok,
    })
}

fn check_leaf(prog: &TypedProgram, leaf: &Leaf, cfg: &DiffConfig) -> (LeafReport, Vec<(Vec<f64>, Vec<f64>)>) {
    let input = cfg.explore.input_box;
    let reg = &leaf.config.region;
    let null = reg.interior_proved_empty(Interval::open(input.lo, input.hi));
    let points = if null {
        Vec::new()
    } else {
        leaf_points(leaf, cfg.points_per_leaf, cfg.margin, cfg.sampler_tries, cfg.seed, input)
    };
    let mut report = LeafReport {
        leaf: leaf.id,
        n: reg.n,
        path: leaf.config.path.iter().map(|b| if *b { 'T' } else { 'E' }).collect(),
        points_tested: 0,
        null,
        boundary_errors: 0,
        max_weight_error: 0.0,
        max_value_error: leaf.config.value_expr().map(|_| 0.0),
        max_symbolic_gap: 0.0,
        failures: 0,
        measure: estimate_region_measure(reg, cfg.measure_points, cfg.seed, input),
        boundary: boundary_mass(reg, &cfg.eps, cfg.boundary_points, cfg.seed, input),
        boundary_shrinks: true,
    };
    for (r, s) in &points {
        match check_point(prog, leaf, r, s, cfg) {
            Ok(c) => {
                report.points_tested += 1;
                report.max_weight_error = report.max_weight_error.max(c.weight_error);
                if let (Some(m), Some(e)) = (report.max_value_error.as_mut(), c.value_error) {
                    *m = m.max(e);
                }
                report.max_symbolic_gap = report.max_symbolic_gap.max(c.gap);
                if !c.ok {
                    report.failures += 1;
                }
            }
            Err(_) => report.boundary_errors += 1,
        }
    }
    let mut table = report.boundary.iter().map(|(e, m)| (*e, m.mu)).collect::<Vec<_>>();
    table.sort_by(|a, b| b.0.total_cmp(&a.0));
    report.boundary_shrinks = table.windows(2).all(|w| w[1].1 <= w[0].1);
    (report, points)
}

fn concrete_jump(prog: &TypedProgram, a: (&[f64], &[f64]), b: (&[f64], &[f64]), budget: u64) -> (f64, f64) {
    let run = |(r, s): (&[f64], &[f64])| replay(prog, r, s, budget).ok().filter(|o| o.terminated());
    match (run(a), run(b)) {
        (Some(x), Some(y)) => {
            let wj = (x.weight - y.weight).abs();
            let vj = match (x.real_value(), y.real_value()) {
                (Some(u), Some(v)) => (u - v).abs(),
                _ if x.value == y.value => 0.0,
                _ => f64::INFINITY,
            };
            (wj, vj)
        }
        _ => (f64::INFINITY, f64::INFINITY),
    }
}

/// Bisects segments from points of `a` to points of `b` down to the
/// boundary of `a`'s region and keeps the crossings where the concrete
/// weight or value jumps by at least `threshold`.
pub fn find_witnesses(
    prog: &TypedProgram,
    map: &BranchMap,
    a: &Leaf,
    b: &Leaf,
    points_a: &[(Vec<f64>, Vec<f64>)],
    points_b: &[(Vec<f64>, Vec<f64>)],
    threshold: f64,
    budget: u64,
) -> Vec<Witness> {
    let ra = &a.config.region;
    if ra.n != b.config.region.n || ra.m != b.config.region.m {
        return Vec::new();
    }
    let m = ra.m;
    let mut out = Vec::new();
    for ((pr, ps), (qr, qs)) in points_a.iter().zip(points_b) {
        let p: Vec<f64> = pr.iter().chain(ps).copied().collect();
        let q: Vec<f64> = qr.iter().chain(qs).copied().collect();
        let at = |t: f64| -> Vec<f64> { p.iter().zip(&q).map(|(x, y)| x + t * (y - x)).collect() };
        let inside = |x: &[f64]| ra.contains(&x[..m], &x[m..]);
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..64 {
            let mid = 0.5 * (lo + hi);
            if inside(&at(mid)) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let (x_in, x_out) = (at(lo), at(hi));
        let Some(&other) = map.locate(&x_out[..m], &x_out[m..]).first() else {
            continue;
        };
        let (wj, vj) = concrete_jump(prog, (&x_in[..m], &x_in[m..]), (&x_out[..m], &x_out[m..]), budget);
        if wj.max(vj) >= threshold {
            let width = x_in.iter().zip(&x_out).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
            let mid: Vec<f64> = x_in.iter().zip(&x_out).map(|(u, v)| 0.5 * (u + v)).collect();
            out.push(Witness {
                r: mid[..m].to_vec(),
                s: mid[m..].to_vec(),
                leaves: (a.id, other),
                weight_jump: wj,
                value_jump: vj,
                width,
            });
        }
    }
    out
}

fn collect_unverified(e: &Expr, out: &mut BTreeSet<String>) {
    if let Expr::Apply(p, args) = e {
        if p.class == PrimClass::Unverified {
            out.insert(p.name().to_string());
        }
        if let PrimKind::Compose(f, gs) = &p.kind {
            for q in std::iter::once(f).chain(gs) {
                if q.class == PrimClass::Unverified {
                    out.insert(q.name().to_string());
                }
            }
        }
        for a in args {
            collect_unverified(a, out);
        }
    }
}

/// Explores the program and checks every terminal leaf.
pub fn check_differentiability(prog: &TypedProgram, cfg: &DiffConfig) -> DiffReport {
    let map = explore(prog, &cfg.explore);
    check_map(prog, &map, cfg)
}

/// As [`check_differentiability`] on an already explored map.
pub fn check_map(prog: &TypedProgram, map: &BranchMap, cfg: &DiffConfig) -> DiffReport {
    let input = cfg.explore.input_box;
    let terminal: Vec<&Leaf> = map.terminal().collect();
    let checked: Vec<(LeafReport, Vec<(Vec<f64>, Vec<f64>)>)> =
        terminal.par_iter().map(|leaf| check_leaf(prog, leaf, cfg)).collect();

    let mut pairs = Vec::new();
    'outer: for (i, a) in terminal.iter().enumerate() {
        for (j, b) in terminal.iter().enumerate().skip(i + 1) {
            if pairs.len() >= cfg.witness_pairs {
                break 'outer;
            }
            let same_dim = a.config.region.n == b.config.region.n && a.config.region.m == b.config.region.m;
            if same_dim && !checked[i].1.is_empty() && !checked[j].1.is_empty() {
                pairs.push((i, j));
            }
        }
    }
    let witnesses: Vec<Witness> = pairs
        .par_iter()
        .flat_map_iter(|&(i, j)| {
            let k = cfg.witness_probes;
            let pa = &checked[i].1[..checked[i].1.len().min(k)];
            let pb = &checked[j].1[..checked[j].1.len().min(k)];
            find_witnesses(prog, map, terminal[i], terminal[j], pa, pb, cfg.jump_threshold, cfg.step_budget)
        })
        .collect();

    let leaves: Vec<LeafReport> = checked.into_iter().map(|(r, _)| r).collect();
    let covered_measure = leaves.iter().map(|l| l.measure.mu).fold(0.0, |a, b| a + b);
    let covered_ci = leaves.iter().map(|l| l.measure.ci.powi(2)).fold(0.0, |a, b| a + b).sqrt();
    let stuck_measure = map
        .stuck
        .par_iter()
        .map(|st| estimate_region_measure(&st.region, cfg.measure_points, cfg.seed, input).mu)
        .reduce(|| 0.0, |a, b| a + b);
    let budget_measure = map
        .budget()
        .collect::<Vec<_>>()
        .par_iter()
        .map(|l| estimate_region_measure(&l.config.region, cfg.measure_points, cfg.seed, input).mu)
        .reduce(|| 0.0, |a, b| a + b);

    let mut unverified = BTreeSet::new();
    for leaf in &terminal {
        for c in &leaf.config.region.constraints {
            collect_unverified(&c.expr, &mut unverified);
        }
        for e in &leaf.config.weight {
            collect_unverified(e, &mut unverified);
        }
        if let Some(e) = leaf.config.value_expr() {
            collect_unverified(&e, &mut unverified);
        }
    }

    let termination = (!cfg.assume_ast && prog.free_vars.is_empty())
        .then(|| estimate_termination(prog, &[], cfg.termination_runs, cfg.termination_budget, cfg.seed).ok())
        .flatten();
    let ast = cfg.assume_ast || termination.as_ref().is_some_and(|t| t.p_hat >= 0.999);
    let pass = leaves
        .iter()
        .all(|l| l.failures == 0 && l.max_error() <= cfg.tol && l.boundary_shrinks);
    DiffReport {
        program_hash: map.program_hash.clone(),
        tol: cfg.tol,
        fd_h: cfg.fd_h,
        leaves,
        covered_measure,
        covered_ci,
        stuck_measure,
        budget_measure,
        witnesses,
        unverified_primitives: unverified.into_iter().collect(),
        termination,
        ast,
        exhausted: map.exhausted,
        pass,
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DimensionClasses {
    pub n: usize,
    pub points: usize,
    pub terminated: f64,
    /// A proper prefix of the trace already terminates.
    pub prefix: f64,
    pub stuck: f64,
    pub failed: f64,
    pub budget: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct TraceSpaceReport {
    pub dims: Vec<DimensionClasses>,
    /// Σ_n of the budget-exceeded and failed masses.
    pub divergent_mass: f64,
}

/// Replays uniform traces of each length `0..=max_n` and tallies the outcome
/// classes. Masses are fractions of `μ(𝕊_n) = 1`.
pub fn classify_trace_space(
    prog: &TypedProgram,
    inputs: &[f64],
    max_n: usize,
    n_points: usize,
    seed: u64,
    budget: u64,
) -> TraceSpaceReport {
    let dims: Vec<DimensionClasses> = (0..=max_n)
        .map(|n| {
            let points = if n == 0 { 1 } else { n_points };
            let counts = chunks(points)
                .into_par_iter()
                .map(|(worker, _, len)| {
                    let mut rng = stream(seed, "diff", &format!("classify-{n}"), worker);
                    let mut c = [0usize; 5];
                    for _ in 0..len {
                        let s: Vec<f64> = (0..n).map(|_| open_unit(&mut rng)).collect();
                        let k = match replay(prog, inputs, &s, budget).map(|o| o.outcome) {
                            Ok(Outcome::Terminated) => 0,
                            Ok(Outcome::Overrun { .. }) => 1,
                            Ok(Outcome::StuckNeedsSample) => 2,
                            Ok(Outcome::Failed(_)) | Err(_) => 3,
                            Ok(Outcome::BudgetExceeded) => 4,
                        };
                        c[k] += 1;
                    }
                    c
                })
                .reduce(|| [0; 5], |a, b| std::array::from_fn(|i| a[i] + b[i]));
            let f = |k: usize| counts[k] as f64 / points as f64;
            DimensionClasses {
                n,
                points,
                terminated: f(0),
                prefix: f(1),
                stuck: f(2),
                failed: f(3),
                budget: f(4),
            }
        })
        .collect();
    let divergent_mass = dims.iter().map(|d| d.failed + d.budget).fold(0.0, |a, b| a + b);
    TraceSpaceReport { dims, divergent_mass }
}
