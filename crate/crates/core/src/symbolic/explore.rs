use std::sync::Arc;

use rayon::prelude::*;
use serde_json::{json, Value as Json};

use crate::lang::{print, TypedProgram};
use crate::rng::stream;

use super::interval::Interval;
use super::measure::{estimate_region_measure, random_point, InputBox, MeasureEstimate};
use super::region::Region;
use super::step::{symbolic_step, SymbolicConfiguration};

#[derive(Debug, Clone)]
pub struct ExploreConfig {
    /// Number of symbolic steps explored from the initial configuration.
    pub max_depth: u64,
    /// Stop when leaves plus frontier exceed this.
    pub max_leaves: usize,
    /// Monte Carlo membership probes per terminal leaf.
    pub prune_samples: usize,
    /// Points for the volume estimate of each terminal leaf; 0 skips it.
    pub measure_points: usize,
    pub seed: u64,
    pub input_box: InputBox,
}

impl Default for ExploreConfig {
    fn default() -> Self {
        ExploreConfig {
            max_depth: 1000,
            max_leaves: 20_000,
            prune_samples: 256,
            measure_points: 0,
            seed: 0,
            input_box: InputBox::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeafKind {
    Terminal,
    Budget,
}

#[derive(Debug, Clone)]
pub struct Leaf {
    pub id: usize,
    pub kind: LeafKind,
    pub config: SymbolicConfiguration,
    /// No Monte Carlo probe landed in the region (it may still be
    /// non-empty).
    pub mc_empty: bool,
    pub measure: Option<MeasureEstimate>,
}

/// Region of a configuration about to sample; the runs through it are stuck
/// on traces of length `region.n`.
#[derive(Debug, Clone)]
pub struct StuckSnapshot {
    pub depth: u64,
    pub region: Arc<Region>,
    pub path: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct BranchMap {
    pub program_hash: String,
    pub m: usize,
    pub input_box: InputBox,
    pub leaves: Vec<Leaf>,
    pub stuck: Vec<StuckSnapshot>,
    /// Successors dropped because their region was proved empty.
    pub pruned: usize,
    /// Every run of at most this many steps ends in a terminal leaf.
    pub complete_depth: u64,
    /// The whole tree was explored within the budget.
    pub exhausted: bool,
}

impl BranchMap {
    pub fn terminal(&self) -> impl Iterator<Item = &Leaf> {
        self.leaves.iter().filter(|l| l.kind == LeafKind::Terminal)
    }

    pub fn budget(&self) -> impl Iterator<Item = &Leaf> {
        self.leaves.iter().filter(|l| l.kind == LeafKind::Budget)
    }

    /// True when a concrete run of `steps` steps is covered by the map.
    pub fn covers(&self, steps: u64) -> bool {
        self.exhausted || steps <= self.complete_depth
    }

    /// Terminal leaves whose region contains the point.
    pub fn locate(&self, r: &[f64], s: &[f64]) -> Vec<usize> {
        self.terminal()
            .filter(|l| l.config.region.contains(r, s))
            .map(|l| l.id)
            .collect()
    }

    pub fn to_json(&self) -> Json {
        let leaves: Vec<Json> = self.leaves.iter().map(leaf_json).collect();
        json!({
            "schema": crate::SCHEMA,
            "program_hash": self.program_hash,
            "m": self.m,
            "terminal": self.terminal().count(),
            "budget": self.budget().count(),
            "stuck_snapshots": self.stuck.len(),
            "pruned": self.pruned,
            "complete_depth": self.complete_depth,
            "exhausted": self.exhausted,
            "leaves": leaves,
        })
    }
}

fn leaf_json(l: &Leaf) -> Json {
    let c = &l.config;
    let mut obj = json!({
        "id": l.id,
        "kind": match l.kind { LeafKind::Terminal => "terminal", LeafKind::Budget => "budget" },
        "n": c.region.n,
        "m": c.region.m,
        "depth": c.depth,
        "value_expr": c.value_expr().map(|e| e.to_json()),
        "weight_factors": c.weight.iter().map(|e| e.to_json()).collect::<Vec<_>>(),
        "constraints": c.region.to_json(),
        "path": c.path.iter().map(|b| if *b { "T" } else { "E" }).collect::<String>(),
        "mc_empty": l.mc_empty,
    });
    if l.kind == LeafKind::Terminal && c.value_expr().is_none() {
        obj["value"] = json!(print(&c.term));
    }
    if let Some(m) = &l.measure {
        obj["measure_est"] = json!({"mu": m.mu, "ci": m.ci});
    }
    obj
}

/// Breadth-first symbolic execution from ⟨M, 1, ℝ^m × 𝕊_0⟩.
pub fn explore(prog: &TypedProgram, cfg: &ExploreConfig) -> BranchMap {
    let mut frontier = vec![SymbolicConfiguration::initial(prog)];
    let mut leaves: Vec<Leaf> = Vec::new();
    let mut stuck = Vec::new();
    let mut pruned = 0;
    let mut depth = 0;
    let exhausted = loop {
        let (values, rest): (Vec<_>, Vec<_>) = frontier.into_iter().partition(|c| c.is_value());
        for config in values {
            leaves.push(Leaf {
                id: leaves.len(),
                kind: LeafKind::Terminal,
                config,
                mc_empty: false,
                measure: None,
            });
        }
        if rest.is_empty() {
            break true;
        }
        if depth >= cfg.max_depth || leaves.len() + rest.len() > cfg.max_leaves {
            for config in rest {
                leaves.push(Leaf {
                    id: leaves.len(),
                    kind: LeafKind::Budget,
                    config,
                    mc_empty: false,
                    measure: None,
                });
            }
            break false;
        }
        let expanded: Vec<(bool, Vec<SymbolicConfiguration>)> = rest
            .par_iter()
            .map(|c| (c.at_sample(), symbolic_step(c)))
            .collect();
        frontier = Vec::new();
        for (parent, (at_sample, succ)) in rest.iter().zip(expanded) {
            if at_sample {
                stuck.push(StuckSnapshot {
                    depth,
                    region: parent.region.clone(),
                    path: parent.path.clone(),
                });
            }
            for s in succ {
                let added = s.region.constraints.len() > parent.region.constraints.len();
                if added && s.region.proved_empty(Interval::WHOLE) {
                    pruned += 1;
                } else {
                    frontier.push(s);
                }
            }
        }
        depth += 1;
    };
    leaves.par_iter_mut().for_each(|leaf| {
        if leaf.kind != LeafKind::Terminal {
            return;
        }
        let reg = &leaf.config.region;
        if cfg.prune_samples > 0 {
            let mut rng = stream(cfg.seed, "explore", "prune", leaf.id as u64);
            leaf.mc_empty = !(0..cfg.prune_samples).any(|_| {
                let (r, s) = random_point(&mut rng, reg.m, reg.n, cfg.input_box);
                reg.contains(&r, &s)
            });
        }
        if cfg.measure_points > 0 {
            leaf.measure = Some(estimate_region_measure(reg, cfg.measure_points, cfg.seed, cfg.input_box));
        }
    });
    BranchMap {
        program_hash: crate::program_hash(prog),
        m: prog.free_vars.len(),
        input_box: cfg.input_box,
        leaves,
        stuck,
        pruned,
        complete_depth: depth,
        exhausted,
    }
}
