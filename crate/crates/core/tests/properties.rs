//! Property tests over randomly generated programs: printing, the concrete
//! machine, and the correspondence between symbolic and concrete runs.

use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use spcf::interp::{close, replay, run_sampling, run_term, run_term_subst, step, Configuration, Outcome, Step};
use spcf::lang::{parse, print, Term};
use spcf::symbolic::{eval_product, explore, instantiate, random_point, ExploreConfig, InputBox};

/// Random closed real-typed source program.
struct Gen {
    rng: ChaCha8Rng,
    fresh: usize,
}

impl Gen {
    fn new(seed: u64) -> Gen {
        Gen {
            rng: ChaCha8Rng::seed_from_u64(seed),
            fresh: 0,
        }
    }

    fn name(&mut self, base: &str) -> String {
        self.fresh += 1;
        format!("{base}{}", self.fresh)
    }

    fn constant(&mut self) -> String {
        let c: f64 = (self.rng.random::<f64>() * 4.0 - 2.0) * 100.0;
        // Adding zero turns -0 into 0.
        let c = c.round() / 100.0 + 0.0;
        if c < 0.0 {
            format!("({c})")
        } else {
            format!("{c}")
        }
    }

    fn term(&mut self, depth: usize, vars: &[String]) -> String {
        if depth == 0 {
            return match self.rng.random_range(0..3) {
                0 => "sample".into(),
                1 if !vars.is_empty() => vars[self.rng.random_range(0..vars.len())].clone(),
                _ => self.constant(),
            };
        }
        let d = depth - 1;
        match self.rng.random_range(0..10) {
            0 => format!("({} + {})", self.term(d, vars), self.term(d, vars)),
            1 => format!("({} - {})", self.term(d, vars), self.term(d, vars)),
            2 => format!("({} * {})", self.term(d, vars), self.term(d, vars)),
            3 => format!("({} / {})", self.term(d, vars), self.term(d, vars)),
            4 => format!(
                "(if {} <= {} then {} else {})",
                self.term(d, vars),
                self.term(d, vars),
                self.term(d, vars),
                self.term(d, vars)
            ),
            5 => {
                let x = self.name("x");
                let bound = self.term(d, vars);
                let mut inner = vars.to_vec();
                inner.push(x.clone());
                format!("(let {x} = {bound} in {})", self.term(d, &inner))
            }
            6 => format!("(score({}); {})", self.term(d, vars), self.term(d, vars)),
            7 => {
                let y = self.name("y");
                let mut inner = vars.to_vec();
                inner.push(y.clone());
                format!("((fn ({y} : R) -> {}) {})", self.term(d, &inner), self.term(d, vars))
            }
            8 => {
                let g = self.name("g");
                let u = self.name("u");
                let mut inner = vars.to_vec();
                inner.push(u.clone());
                let step = self.term(d, &inner);
                format!(
                    "(let rec {g} ({u} : R) : R = if sample <= 0.5 then {u} else {g} ({u} + {step}) in {g} {})",
                    self.term(d, vars)
                )
            }
            _ => format!("exp({})", self.term(d, vars)),
        }
    }
}

fn program(seed: u64, depth: usize) -> String {
    Gen::new(seed).term(depth, &[])
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn parse_print_round_trip(seed in any::<u64>(), depth in 0usize..5) {
        let src = program(seed, depth);
        let p = parse(&src).unwrap_or_else(|e| panic!("{src}: {e}"));
        let printed = print(&p.term);
        let q = parse(&printed).unwrap_or_else(|e| panic!("{printed}: {e}"));
        prop_assert_eq!(&p.term, &q.term);
    }

    #[test]
    fn zipper_machine_matches_single_steps(seed in any::<u64>(), depth in 0usize..5) {
        let p = parse(&program(seed, depth)).unwrap();
        let run = run_sampling(&p, &[], seed, 5000).unwrap();
        // Re-run the same trace one step at a time.
        let mut cfg = Configuration { term: p.term.clone(), weight: 1.0, trace: Vec::new() };
        let mut supply = run.trace.iter().copied();
        let mut steps = 0u64;
        let outcome = loop {
            if steps >= 5000 {
                break Outcome::BudgetExceeded;
            }
            let next = if at_sample(&cfg.term) { supply.next() } else { None };
            match step(&cfg, next) {
                Step::Next(c) => cfg = c,
                Step::Value => break Outcome::Terminated,
                Step::Fail(r) => break Outcome::Failed(r),
                Step::NeedsSample => break Outcome::StuckNeedsSample,
            }
            steps += 1;
        };
        prop_assert_eq!(outcome, run.outcome.clone());
        prop_assert_eq!(steps, run.steps);
        prop_assert_eq!(&cfg.trace, &run.trace);
        if run.terminated() {
            prop_assert_eq!(cfg.weight, run.weight);
            prop_assert_eq!(Some(cfg.term), run.value);
        }
    }

    #[test]
    fn environment_and_substitution_machines_agree(seed in any::<u64>(), depth in 0usize..5) {
        let p = parse(&program(seed, depth)).unwrap();
        let t = close(&p, &[]).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(seed);
        let mut r2 = ChaCha8Rng::seed_from_u64(seed);
        let a = run_term(&t, &mut || Some(r1.random::<f64>()), 3000);
        let b = run_term_subst(&t, &mut || Some(r2.random::<f64>()), 3000);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn terminating_traces_are_prefix_free(seed in any::<u64>(), depth in 0usize..5, extra in 0.001f64..0.999) {
        let p = parse(&program(seed, depth)).unwrap();
        let run = run_sampling(&p, &[], seed, 5000).unwrap();
        prop_assume!(run.terminated());
        let s = &run.trace;
        let again = replay(&p, &[], s, 5000).unwrap();
        prop_assert_eq!(again.outcome, Outcome::Terminated);
        prop_assert_eq!(again.weight, run.weight);
        prop_assert!(run.weight >= 0.0);
        let mut longer = s.clone();
        longer.push(extra);
        let over = replay(&p, &[], &longer, 5000).unwrap();
        prop_assert_eq!(over.outcome, Outcome::Overrun { consumed: s.len() });
        for k in 0..s.len() {
            let short = replay(&p, &[], &s[..k], 5000).unwrap();
            prop_assert_eq!(short.outcome, Outcome::StuckNeedsSample);
        }
    }

    #[test]
    fn symbolic_and_concrete_runs_agree(seed in any::<u64>(), depth in 0usize..4) {
        let src = program(seed, depth);
        let p = parse(&src).unwrap();
        let cfg = ExploreConfig { max_depth: 150, max_leaves: 2000, prune_samples: 0, ..ExploreConfig::default() };
        let map = explore(&p, &cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        // Completeness: covered terminating runs land in exactly one leaf.
        for k in 0..50 {
            let run = run_sampling(&p, &[], seed.wrapping_add(k), map.complete_depth).unwrap();
            if !run.terminated() || !map.covers(run.steps) {
                continue;
            }
            let hits = map.locate(&[], &run.trace);
            prop_assert_eq!(hits.len(), 1, "{} trace {:?}", src, run.trace);
            let leaf = &map.leaves[hits[0]];
            let w = eval_product(&leaf.config.weight, &[], &run.trace).unwrap();
            prop_assert!(rel(w, run.weight) <= 1e-9, "{} {} vs {}", src, w, run.weight);
            let v = instantiate(&leaf.config.term, &[], &run.trace).unwrap();
            let (a, b) = (v.as_const().unwrap(), run.real_value().unwrap());
            prop_assert!(rel(a, b) <= 1e-9, "{} {} vs {}", src, a, b);
        }
        // Soundness: points of a leaf region replay to the leaf's value.
        for leaf in map.terminal() {
            let reg = &leaf.config.region;
            for _ in 0..20 {
                let (_, s) = random_point(&mut rng, 0, reg.n, InputBox::default());
                if !reg.contains(&[], &s) {
                    continue;
                }
                let run = replay(&p, &[], &s, 100_000).unwrap();
                prop_assert_eq!(&run.outcome, &Outcome::Terminated, "{} {:?}", src, s);
                let w = eval_product(&leaf.config.weight, &[], &s).unwrap();
                prop_assert!(rel(w, run.weight) <= 1e-9);
                let v = instantiate(&leaf.config.term, &[], &s).unwrap().as_const().unwrap();
                prop_assert!(rel(v, run.real_value().unwrap()) <= 1e-9);
            }
        }
    }
}

fn at_sample(term: &Arc<Term>) -> bool {
    matches!(spcf::lang::decompose(term), spcf::lang::Decomposition::Redex(_, r) if *r == Term::Sample)
}

#[test]
fn leaves_partition_each_dimension() {
    for (name, src) in spcf::corpus::ALL {
        let p = parse(src).unwrap();
        if p.n_inputs() > 0 {
            continue;
        }
        let map = explore(&p, &ExploreConfig { max_depth: 60, ..ExploreConfig::default() });
        let max_n = map.terminal().map(|l| l.config.region.n).max().unwrap_or(0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in 0..=max_n {
            for _ in 0..1000 {
                let (_, s) = random_point(&mut rng, 0, n, InputBox::default());
                assert!(map.locate(&[], &s).len() <= 1, "{name} {s:?}");
                let mut depths = map
                    .stuck
                    .iter()
                    .filter(|st| st.region.n == n && st.region.contains(&[], &s))
                    .map(|st| st.depth)
                    .collect::<Vec<_>>();
                let hits = depths.len();
                depths.sort_unstable();
                depths.dedup();
                assert_eq!(depths.len(), hits, "{name}: overlapping stuck regions at {s:?}");
            }
        }
    }
}

#[test]
fn input_program_is_explored_over_the_box() {
    let p = parse(spcf::corpus::get("input").unwrap()).unwrap();
    let map = explore(&p, &ExploreConfig::default());
    assert_eq!(map.m, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let (r, s) = random_point(&mut rng, 1, 1, InputBox::default());
        let hits = map.locate(&r, &s);
        assert_eq!(hits.len(), 1);
        let run = replay(&p, &r, &s, 1000).unwrap();
        let w = eval_product(&map.leaves[hits[0]].config.weight, &r, &s).unwrap();
        assert!(rel(w, run.weight) <= 1e-9);
    }
}
