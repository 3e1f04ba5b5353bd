//! End-to-end acceptance checks. Prints one line per criterion and exits
//! nonzero if any of them fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use spcf::diff::{check_differentiability, DiffConfig, DiffReport};
use spcf::inference::{importance_sample, trace_mh, MhConfig};
use spcf::interp::{estimate_termination, run_sampling, DEFAULT_STEP_BUDGET};
use spcf::lang::{parse, TypedProgram};
use spcf::rng::stream;
use spcf::symbolic::{
    estimate_region_measure, eval_product, explore, instantiate, random_point, BranchMap, ExploreConfig, InputBox,
};

const RUNS_PER_PROGRAM: u64 = 10_000;
const POINTS_PER_DIMENSION: usize = 10_000;
const REL_TOL: f64 = 1e-9;
const EXPLORE_DEPTH: u64 = 100;
const GRAD_TOL: f64 = 1e-4;
const FD_H: f64 = 1e-5;
const MIN_POINTS: usize = 50;
const PED_BUDGET: u64 = 100_000_000;
const ENUMQ_BUDGET: u64 = 100_000;
const ENUMQ_RUNS: usize = 1_000;
const INFER_N: usize = 100_000;
const UNIMODAL_TOL: f64 = 0.2;
const SEED: u64 = 2024;

type Verdict = (bool, String);

fn corpus_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join(format!("../core/corpus/{name}.spcf"))
}

fn program(name: &str) -> TypedProgram {
    parse(spcf::corpus::get(name).unwrap()).unwrap()
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

fn maps() -> Vec<(&'static str, TypedProgram, BranchMap)> {
    spcf::corpus::ALL
        .iter()
        .map(|&(name, src)| {
            let p = parse(src).unwrap();
            let map = explore(&p, &ExploreConfig { max_depth: EXPLORE_DEPTH, ..ExploreConfig::default() });
            (name, p, map)
        })
        .collect()
}

fn replay_example() -> Verdict {
    let start = Instant::now();
    let out = Command::new(env!("CARGO_BIN_EXE_spcf"))
        .arg("replay")
        .arg(corpus_path("ped"))
        .args(["--trace", "0.2,0.9,0.7"])
        .output()
        .unwrap();
    let elapsed = start.elapsed();
    let doc: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let v = doc["value"].as_f64().unwrap_or(f64::NAN);
    let w = doc["weight"].as_f64().unwrap_or(f64::NAN);
    // 0.6 has no binary representation; the run computes the rounded
    // product 0.2 * 3, which lies within 2 ulp of 0.6.
    let ok_v = v == 0.2_f64 * 3.0 && (v - 0.6).abs() <= 2.0 * f64::EPSILON;
    let ok_w = (w - 0.54).abs() <= 0.005;
    let ok_t = elapsed < Duration::from_secs(1);
    (
        out.status.success() && ok_v && ok_w && ok_t,
        format!("value {v:?} weight {w:.6} in {elapsed:.2?}"),
    )
}

fn soundness(maps: &[(&str, TypedProgram, BranchMap)], start: Instant) -> Verdict {
    let mut covered = 0usize;
    let mut bad = Vec::new();
    for (name, p, map) in maps {
        let mut rng = stream(SEED, "acceptance", name, 0);
        for k in 0..RUNS_PER_PROGRAM {
            let (r, _) = random_point(&mut rng, map.m, 0, InputBox::default());
            let run = run_sampling(p, &r, SEED.wrapping_add(k), map.complete_depth).unwrap();
            if !run.terminated() || !map.covers(run.steps) {
                continue;
            }
            covered += 1;
            let hits = map.locate(&r, &run.trace);
            if hits.len() != 1 {
                bad.push(format!("{name}: {} leaves for {:?}", hits.len(), run.trace));
                continue;
            }
            let leaf = &map.leaves[hits[0]];
            let w = eval_product(&leaf.config.weight, &r, &run.trace).unwrap_or(f64::NAN);
            let v = instantiate(&leaf.config.term, &r, &run.trace).unwrap();
            let concrete = run.value.clone().unwrap();
            let value_ok = match (v.as_const(), concrete.as_const()) {
                (Some(a), Some(b)) => rel(a, b) <= REL_TOL,
                _ => v == concrete,
            };
            if !(rel(w, run.weight) <= REL_TOL) || !value_ok {
                bad.push(format!("{name}: mismatch at {:?}", run.trace));
            }
        }
    }
    let elapsed = start.elapsed();
    let first = bad.first().cloned().unwrap_or_default();
    (
        bad.is_empty() && elapsed < Duration::from_secs(120),
        format!(
            "{} programs, {covered} covered runs, {} violations {first} in {elapsed:.2?}",
            maps.len(),
            bad.len()
        ),
    )
}

fn disjointness(maps: &[(&str, TypedProgram, BranchMap)]) -> Verdict {
    assert!(!maps.is_empty(), "no branch maps");
    let mut violations = 0usize;
    let mut points = 0usize;
    for (name, _, map) in maps {
        let max_n = map.terminal().map(|l| l.config.region.n).max().unwrap_or(0);
        for n in 0..=max_n {
            let mut rng = stream(SEED, "acceptance", &format!("disjoint-{name}"), n as u64);
            for _ in 0..POINTS_PER_DIMENSION {
                let (r, s) = random_point(&mut rng, map.m, n, InputBox::default());
                points += 1;
                if map.locate(&r, &s).len() > 1 {
                    violations += 1;
                }
            }
        }
    }
    (violations == 0, format!("{points} points, {violations} violations"))
}

fn characteristic_function() -> Verdict {
    let p = program("diagonal");
    let map = explore(&p, &ExploreConfig::default());
    let leaves: Vec<_> = map.terminal().collect();
    let mut rng = stream(SEED, "acceptance", "diagonal", 0);
    let mut weights = Vec::new();
    for leaf in &leaves {
        let reg = &leaf.config.region;
        let mut seen = Vec::new();
        while seen.len() < 100 {
            let (r, s) = random_point(&mut rng, 0, reg.n, InputBox::default());
            if reg.contains(&r, &s) {
                seen.push(eval_product(&leaf.config.weight, &r, &s).unwrap());
            }
        }
        let constant = seen.iter().all(|&w| w == seen[0]);
        weights.push(if constant { seen[0] } else { f64::NAN });
    }
    let mut sorted = weights.clone();
    sorted.sort_by(f64::total_cmp);
    let weights_ok = leaves.len() == 2 && sorted == [0.0, 1.0];
    let measures: Vec<f64> = leaves
        .iter()
        .map(|l| estimate_region_measure(&l.config.region, 200_000, SEED, InputBox::default()).mu)
        .collect();
    let measures_ok = measures.len() == 2 && measures.iter().all(|m| (m - 0.5).abs() <= 0.02);

    let cfg = DiffConfig {
        boundary_points: 1_000_000,
        seed: SEED,
        ..DiffConfig::default()
    };
    let report = check_differentiability(&p, &cfg);
    let on_diagonal = !report.witnesses.is_empty()
        && report
            .witnesses
            .iter()
            .all(|w| w.s.len() == 2 && (w.s[0] - w.s[1]).abs() <= w.width.max(1e-9));
    let mut ratios = Vec::new();
    for leaf in &report.leaves {
        for pair in leaf.boundary.windows(2) {
            ratios.push(pair[0].1.mu / pair[1].1.mu);
        }
    }
    let shrink_ok = !ratios.is_empty() && ratios.iter().all(|&q| q >= 5.0);
    (
        weights_ok && measures_ok && on_diagonal && shrink_ok,
        format!(
            "weights {weights:?} measures {measures:.4?} witnesses {} ε-ratios {ratios:.2?}",
            report.witnesses.len()
        ),
    )
}

fn diff_reports() -> Vec<(&'static str, bool, DiffReport)> {
    spcf::corpus::ALL
        .iter()
        .map(|&(name, src)| {
            let p = parse(src).unwrap();
            let cfg = DiffConfig {
                fd_h: FD_H,
                tol: GRAD_TOL,
                points_per_leaf: MIN_POINTS,
                seed: SEED,
                ..DiffConfig::default()
            };
            (name, p.free_vars.is_empty(), check_differentiability(&p, &cfg))
        })
        .collect()
}

fn gradients(reports: &[(&str, bool, DiffReport)]) -> Verdict {
    let mut worst = 0.0f64;
    let mut leaves = 0usize;
    let mut null = 0usize;
    let mut bad = Vec::new();
    for (name, _, report) in reports {
        for leaf in &report.leaves {
            if leaf.null {
                null += 1;
                continue;
            }
            leaves += 1;
            worst = worst.max(leaf.max_error());
            if leaf.points_tested < MIN_POINTS || leaf.failures > 0 || !(leaf.max_error() <= GRAD_TOL) {
                bad.push(format!(
                    "{name} leaf {} ({} points, error {:.2e})",
                    leaf.leaf,
                    leaf.points_tested,
                    leaf.max_error()
                ));
            }
        }
    }
    let first = bad.first().cloned().unwrap_or_default();
    (
        bad.is_empty(),
        format!(
            "{leaves} leaves tested, {null} null, max error {worst:.2e}, {} bad {first}",
            bad.len()
        ),
    )
}

fn termination() -> Verdict {
    let ped = estimate_termination(&program("ped"), &[], 10_000, PED_BUDGET, SEED).unwrap();
    let geo = estimate_termination(&program("geometric"), &[], 10_000, DEFAULT_STEP_BUDGET, SEED).unwrap();
    let enumq = estimate_termination(&program("enumq"), &[], ENUMQ_RUNS, ENUMQ_BUDGET, SEED).unwrap();
    let ok = ped.p_hat >= 0.999
        && (geo.mean_trace_len - 2.0).abs() <= 0.05
        && enumq.budget_exceeded == enumq.n_runs;
    (
        ok,
        format!(
            "ped p̂ {:.4} (budget {PED_BUDGET}), geometric mean length {:.3}, enumq {}/{} over budget",
            ped.p_hat, geo.mean_trace_len, enumq.budget_exceeded, enumq.n_runs
        ),
    )
}

fn measure_bound(reports: &[(&str, bool, DiffReport)]) -> Verdict {
    assert!(!reports.is_empty(), "no reports");
    let mut worst = f64::NEG_INFINITY;
    let mut bad = Vec::new();
    for (name, closed, report) in reports {
        if !closed {
            continue;
        }
        let slack = report.covered_measure - (1.0 + 3.0 * report.covered_ci);
        worst = worst.max(slack);
        if slack > 0.0 {
            bad.push(format!("{name} {:.4} ± {:.4}", report.covered_measure, report.covered_ci));
        }
    }
    (bad.is_empty(), format!("max Σμ̂ - (1 + 3·CI) = {worst:.4} {}", bad.join(", ")))
}

fn inference(start: Instant) -> Verdict {
    let score_s = program("score_s");
    let is = importance_sample(&score_s, &[], INFER_N, SEED, DEFAULT_STEP_BUDGET).unwrap();
    let is_mean = is.mean().unwrap().0;
    let cfg = MhConfig {
        steps: INFER_N,
        ..MhConfig::default()
    };
    let mh_mean = trace_mh(&score_s, &[], &cfg, SEED).unwrap().mean().unwrap().0;
    let target = 2.0 / 3.0;
    let means_ok = (is_mean - target).abs() <= 0.02 && (mh_mean - target).abs() <= 0.02;

    let chain = trace_mh(&program("ped"), &[], &cfg, SEED).unwrap();
    let hist = chain.histogram(50, Some((0.0, 3.0))).unwrap();
    let mode = hist.bin_center(hist.mode());
    let shape_ok = hist.is_unimodal(UNIMODAL_TOL) && (0.6..=1.0).contains(&mode);
    let elapsed = start.elapsed();
    (
        means_ok && shape_ok && elapsed < Duration::from_secs(300),
        format!(
            "score_s IS {is_mean:.4} MH {mh_mean:.4}; ped mode {mode:.3} unimodal {} in {elapsed:.2?}",
            hist.is_unimodal(UNIMODAL_TOL)
        ),
    )
}

fn check(n: usize, f: impl FnOnce() -> Verdict) -> bool {
    let start = Instant::now();
    let (pass, detail) = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    });
    let label = if pass { "PASS" } else { "FAIL" };
    println!("criterion {n}: {label} {detail} [{:.1?}]", start.elapsed());
    pass
}

fn main() {
    let mut results = Vec::new();
    results.push(check(1, replay_example));
    let mut maps = Vec::new();
    results.push(check(2, || {
        let start = Instant::now();
        maps = self::maps();
        soundness(&maps, start)
    }));
    results.push(check(3, || disjointness(&maps)));
    results.push(check(4, characteristic_function));
    let mut reports = Vec::new();
    results.push(check(5, || {
        reports = diff_reports();
        gradients(&reports)
    }));
    results.push(check(6, termination));
    results.push(check(7, || measure_bound(&reports)));
    results.push(check(8, || inference(Instant::now())));
    let failed = results.iter().filter(|&&p| !p).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
