use std::sync::Arc;

use serde_json::{json, Value as Json};

use super::expr::{Affine, Expr};
use super::interval::{refute_constraints, Interval};

/// Sign relation of a constraint `expr rel 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rel {
    Le0,
    Gt0,
    Ge0,
    /// Only asks that the expression be defined.
    InDomain,
}

impl Rel {
    pub fn holds(self, v: f64) -> bool {
        match self {
            Rel::Le0 => v <= 0.0,
            Rel::Gt0 => v > 0.0,
            Rel::Ge0 => v >= 0.0,
            Rel::InDomain => true,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Rel::Le0 => "<=0",
            Rel::Gt0 => ">0",
            Rel::Ge0 => ">=0",
            Rel::InDomain => "dom",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub expr: Arc<Expr>,
    pub rel: Rel,
}

impl Constraint {
    pub fn holds_at(&self, r: &[f64], s: &[f64]) -> bool {
        self.expr.eval_at(r, s).is_some_and(|v| self.rel.holds(v))
    }

    pub fn to_json(&self) -> Json {
        json!({"expr": self.expr.to_json(), "rel": self.rel.label()})
    }
}

/// Conjunction of constraints over ℝ^m × (0,1)^n.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    pub m: usize,
    pub n: usize,
    pub constraints: Vec<Constraint>,
}

impl Region {
    pub fn full(m: usize, n: usize) -> Region {
        Region {
            m,
            n,
            constraints: Vec::new(),
        }
    }

    pub fn with(&self, expr: Arc<Expr>, rel: Rel) -> Region {
        let mut out = self.clone();
        out.constraints.push(Constraint { expr, rel });
        out
    }

    /// Same constraints, one more trace dimension.
    pub fn extruded(&self) -> Region {
        Region {
            n: self.n + 1,
            ..self.clone()
        }
    }

    pub fn contains(&self, r: &[f64], s: &[f64]) -> bool {
        r.len() == self.m
            && s.len() == self.n
            && s.iter().all(|x| *x > 0.0 && *x < 1.0)
            && self.constraints.iter().all(|c| c.holds_at(r, s))
    }

    /// True when interval propagation proves the constraints unsatisfiable,
    /// with inputs ranging over `input`.
    pub fn proved_empty(&self, input: Interval) -> bool {
        refute_constraints(&self.constraints, input)
    }

    /// True when the region is provably empty or pinned to a hyperplane:
    /// `e ≤ 0` and `e ≥ 0` both hold for a non-constant affine `e`.
    pub fn interior_proved_empty(&self, input: Interval) -> bool {
        if self.proved_empty(input) {
            return true;
        }
        // Each weak constraint as (affine form, sign) meaning form·sign ≤ 0.
        let weak: Vec<(Affine, f64)> = self
            .constraints
            .iter()
            .filter_map(|c| {
                let sign = match c.rel {
                    Rel::Le0 => 1.0,
                    Rel::Ge0 => -1.0,
                    _ => return None,
                };
                let a = c.expr.affine()?;
                (!a.is_constant()).then_some((a, sign))
            })
            .collect();
        weak.iter().enumerate().any(|(i, (a, sa))| {
            weak[i + 1..].iter().any(|(b, sb)| {
                (*a == *b && sa != sb) || (*a == b.scaled(-1.0) && sa == sb)
            })
        })
    }

    pub fn to_json(&self) -> Json {
        Json::Array(self.constraints.iter().map(Constraint::to_json).collect())
    }
}
