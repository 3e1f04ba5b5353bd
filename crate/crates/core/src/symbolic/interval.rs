//! Interval enclosures of value expressions, used to prove regions empty.
//!
//! Endpoints carry open/closed flags so that strict constraints such as
//! `3·α1 ≤ 0` over `α1 ∈ (0, 1)` can be refuted. Every inexact floating
//! operation widens its result outward, so enclosures are sound.

use std::collections::HashMap;
use std::sync::Arc;

use crate::primitives::{Prim, PrimKind};

use super::expr::Expr;
use super::region::{Constraint, Rel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

/// One endpoint candidate: value and whether it is attained.
type End = (f64, bool);

fn widen_down(x: f64, exact: bool) -> f64 {
    if exact || !x.is_finite() {
        x
    } else {
        x.next_down().next_down()
    }
}

fn widen_up(x: f64, exact: bool) -> f64 {
    if exact || !x.is_finite() {
        x
    } else {
        x.next_up().next_up()
    }
}

impl Interval {
    pub const WHOLE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
        lo_closed: false,
        hi_closed: false,
    };

    pub const UNIT_OPEN: Interval = Interval {
        lo: 0.0,
        hi: 1.0,
        lo_closed: false,
        hi_closed: false,
    };

    pub fn point(x: f64) -> Interval {
        Interval {
            lo: x,
            hi: x,
            lo_closed: true,
            hi_closed: true,
        }
    }

    pub fn open(lo: f64, hi: f64) -> Interval {
        Interval {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    fn new(lo: End, hi: End) -> Interval {
        if lo.0.is_nan() || hi.0.is_nan() {
            return Interval::WHOLE;
        }
        Interval {
            lo: lo.0,
            hi: hi.0,
            lo_closed: lo.1 && lo.0.is_finite(),
            hi_closed: hi.1 && hi.0.is_finite(),
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.lo < x || (self.lo_closed && self.lo == x)) && (x < self.hi || (self.hi_closed && self.hi == x))
    }

    pub fn is_empty(&self) -> bool {
        self.lo > self.hi || (self.lo == self.hi && !(self.lo_closed && self.hi_closed))
    }

    /// `{v : v rel 0}`.
    pub fn of_rel(rel: Rel) -> Interval {
        match rel {
            Rel::Le0 => Interval::new((f64::NEG_INFINITY, false), (0.0, true)),
            Rel::Gt0 => Interval::new((0.0, false), (f64::INFINITY, false)),
            Rel::Ge0 => Interval::new((0.0, true), (f64::INFINITY, false)),
            Rel::InDomain => Interval::WHOLE,
        }
    }

    pub fn intersect(self, other: Interval) -> Interval {
        let (lo, lo_closed) = match self.lo.total_cmp(&other.lo) {
            std::cmp::Ordering::Greater => (self.lo, self.lo_closed),
            std::cmp::Ordering::Less => (other.lo, other.lo_closed),
            std::cmp::Ordering::Equal => (self.lo, self.lo_closed && other.lo_closed),
        };
        let (hi, hi_closed) = match self.hi.total_cmp(&other.hi) {
            std::cmp::Ordering::Less => (self.hi, self.hi_closed),
            std::cmp::Ordering::Greater => (other.hi, other.hi_closed),
            std::cmp::Ordering::Equal => (self.hi, self.hi_closed && other.hi_closed),
        };
        Interval {
            lo,
            hi,
            lo_closed,
            hi_closed,
        }
    }

    /// True when the interval contains no value `v` with `v rel 0`.
    pub fn refutes(&self, rel: Rel) -> bool {
        match rel {
            Rel::Le0 => self.lo > 0.0 || (self.lo == 0.0 && !self.lo_closed),
            Rel::Gt0 => self.hi <= 0.0,
            Rel::Ge0 => self.hi < 0.0 || (self.hi == 0.0 && !self.hi_closed),
            Rel::InDomain => false,
        }
    }

    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
            lo_closed: self.hi_closed,
            hi_closed: self.lo_closed,
        }
    }

    fn add(self, o: Interval) -> Interval {
        let sum = |a: f64, b: f64| {
            let s = a + b;
            // TwoSum error term.
            let bb = s - a;
            let err = (a - (s - bb)) + (b - bb);
            (s, err == 0.0 || !s.is_finite())
        };
        let (lo, lo_exact) = sum(self.lo, o.lo);
        let (hi, hi_exact) = sum(self.hi, o.hi);
        Interval::new(
            (widen_down(lo, lo_exact), self.lo_closed && o.lo_closed),
            (widen_up(hi, hi_exact), self.hi_closed && o.hi_closed),
        )
    }

    fn mul(self, o: Interval) -> Interval {
        let zero_attained = self.contains(0.0) || o.contains(0.0);
        let mut cands = Vec::with_capacity(4);
        for (a, ac) in [(self.lo, self.lo_closed), (self.hi, self.hi_closed)] {
            for (b, bc) in [(o.lo, o.lo_closed), (o.hi, o.hi_closed)] {
                let p = a * b;
                if p.is_nan() {
                    return Interval::WHOLE;
                }
                let exact = !p.is_finite() || a.mul_add(b, -p) == 0.0;
                let closed = if p == 0.0 { zero_attained } else { ac && bc };
                cands.push((p, exact, closed));
            }
        }
        extreme(&cands)
    }

    fn div(self, o: Interval) -> Option<Interval> {
        if o.lo == 0.0 && o.hi == 0.0 {
            return None;
        }
        if !(o.lo > 0.0 || o.hi < 0.0) {
            return Some(Interval::WHOLE);
        }
        let zero_attained = self.contains(0.0);
        let mut cands = Vec::with_capacity(4);
        for (a, ac) in [(self.lo, self.lo_closed), (self.hi, self.hi_closed)] {
            for (b, bc) in [(o.lo, o.lo_closed), (o.hi, o.hi_closed)] {
                let q = a / b;
                if q.is_nan() {
                    return Some(Interval::WHOLE);
                }
                let exact = !q.is_finite() || b.is_infinite() || q.mul_add(b, -a) == 0.0;
                let closed = if q == 0.0 { zero_attained && b.is_finite() } else { ac && bc };
                cands.push((q, exact, closed));
            }
        }
        Some(extreme(&cands))
    }

    fn exp(self) -> Interval {
        let lo = widen_down(self.lo.exp(), self.lo == f64::NEG_INFINITY || self.lo == 0.0).max(0.0);
        let hi = widen_up(self.hi.exp(), self.hi == 0.0);
        // exp underflows to an attained 0 for very negative arguments.
        let lo_closed = if lo == 0.0 { self.lo.is_finite() } else { self.lo_closed };
        Interval::new((lo, lo_closed), (hi, self.hi_closed))
    }

    /// Monotone function defined on `(0, ∞)`.
    fn positive_monotone(self, f: fn(f64) -> f64, at_zero: f64) -> Option<Interval> {
        if self.hi <= 0.0 {
            return None;
        }
        let lo = if self.lo <= 0.0 {
            (at_zero, false)
        } else {
            (widen_down(f(self.lo), self.lo == 1.0 && at_zero.is_infinite()), self.lo_closed)
        };
        Some(Interval::new(lo, (widen_up(f(self.hi), false), self.hi_closed)))
    }

    fn abs(self) -> Interval {
        if self.contains(0.0) || (self.lo <= 0.0 && self.hi >= 0.0) {
            let hi = (-self.lo).max(self.hi);
            Interval::new((0.0, self.contains(0.0)), (hi, true))
        } else if self.lo > 0.0 {
            self
        } else {
            self.neg()
        }
    }
}

fn extreme(cands: &[(f64, bool, bool)]) -> Interval {
    let lo = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    let hi = cands.iter().map(|c| c.0).fold(f64::NEG_INFINITY, f64::max);
    let at = |v: f64| cands.iter().filter(move |c| c.0 == v);
    let lo_exact = at(lo).all(|c| c.1);
    let hi_exact = at(hi).all(|c| c.1);
    let lo_closed = at(lo).any(|c| c.2) || !lo_exact;
    let hi_closed = at(hi).any(|c| c.2) || !hi_exact;
    Interval::new(
        (widen_down(lo, lo_exact), lo_closed),
        (widen_up(hi, hi_exact), hi_closed),
    )
}

/// Enclosure of a primitive's image over a box of arguments; `None` when no
/// argument combination lies in its domain.
pub fn prim_interval(p: &Prim, args: &[Interval]) -> Option<Interval> {
    Some(match &p.kind {
        PrimKind::Add => args[0].add(args[1]),
        PrimKind::Sub => args[0].add(args[1].neg()),
        PrimKind::Mul => args[0].mul(args[1]),
        PrimKind::Neg => args[0].neg(),
        PrimKind::Div => args[0].div(args[1])?,
        PrimKind::Exp => args[0].exp(),
        PrimKind::Log => args[0].positive_monotone(f64::ln, f64::NEG_INFINITY)?,
        PrimKind::Sqrt => args[0].positive_monotone(f64::sqrt, 0.0)?,
        PrimKind::Abs => args[0].abs(),
        PrimKind::PdfNorm => {
            let sd = args[1];
            if sd.hi <= 0.0 {
                return None;
            }
            let hi = if sd.lo > 0.0 {
                widen_up(1.0 / (sd.lo * (2.0 * std::f64::consts::PI).sqrt()), false)
            } else {
                f64::INFINITY
            };
            // Far tails underflow to 0.
            Interval::new((0.0, true), (hi, true))
        }
        PrimKind::PdfUniform => {
            let (a, b) = (args[0], args[1]);
            if a.lo >= b.hi {
                return None;
            }
            let hi = if b.lo > a.hi {
                widen_up(1.0 / (b.lo - a.hi), false)
            } else {
                f64::INFINITY
            };
            Interval::new((0.0, true), (hi, true))
        }
        PrimKind::Constant(c) => Interval::point(*c),
        PrimKind::Projection(i) => args[*i],
        PrimKind::Compose(f, gs) => {
            let inner = gs
                .iter()
                .map(|g| prim_interval(g, args))
                .collect::<Option<Vec<_>>>()?;
            prim_interval(f, &inner)?
        }
    })
}

/// Enclosure of an expression with inputs ranging over `input` and sampling
/// variables over (0, 1). `None` means the expression is undefined on the
/// whole box.
pub fn expr_interval(e: &Expr, input: Interval) -> Option<Interval> {
    match e {
        Expr::Const(c) => Some(Interval::point(*c)),
        Expr::Input(_) => Some(input),
        Expr::Sample(_) => Some(Interval::UNIT_OPEN),
        Expr::Apply(p, args) => {
            let args = args
                .iter()
                .map(|a| expr_interval(a, input))
                .collect::<Option<Vec<_>>>()?;
            let out = prim_interval(p, &args)?;
            (!out.is_empty()).then_some(out)
        }
    }
}

/// True when `e rel 0` provably has no solution.
pub fn refutes(e: &Expr, rel: Rel, input: Interval) -> bool {
    match expr_interval(e, input) {
        None => true,
        Some(iv) => iv.refutes(rel),
    }
}

type Known = HashMap<*const Expr, Interval>;

/// Enclosure of `e` given the bounds already known for shared
/// subexpressions. Nodes are identified by address, so each shared node is
/// visited once.
fn narrowed(e: &Arc<Expr>, input: Interval, known: &Known, memo: &mut HashMap<*const Expr, Option<Interval>>) -> Option<Interval> {
    let key = Arc::as_ptr(e);
    if let Some(v) = memo.get(&key) {
        return *v;
    }
    let base = match &**e {
        Expr::Apply(p, args) => args
            .iter()
            .map(|a| narrowed(a, input, known, memo))
            .collect::<Option<Vec<_>>>()
            .and_then(|args| prim_interval(p, &args)),
        _ => expr_interval(e, input),
    };
    let out = base
        .map(|b| known.get(&key).map_or(b, |k| b.intersect(*k)))
        .filter(|iv| !iv.is_empty());
    memo.insert(key, out);
    out
}

/// Runs through the constraints in order, keeping for every constrained
/// subexpression its enclosure cut down by the relation; later enclosures
/// reuse these. True when some constraint becomes unsatisfiable.
pub fn refute_constraints(constraints: &[Constraint], input: Interval) -> bool {
    let mut known = Known::new();
    for c in constraints {
        let Some(iv) = narrowed(&c.expr, input, &known, &mut HashMap::new()) else {
            return true;
        };
        let iv = iv.intersect(Interval::of_rel(c.rel));
        if iv.is_empty() {
            return true;
        }
        known.insert(Arc::as_ptr(&c.expr), iv);
    }
    false
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::primitives::builtin_registry;
    use std::sync::Arc;

    fn apply(name: &str, args: Vec<Arc<Expr>>) -> Arc<Expr> {
        Arc::new(Expr::Apply(builtin_registry().builtin(name), args))
    }

    fn c(v: f64) -> Arc<Expr> {
        Arc::new(Expr::Const(v))
    }

    fn a(j: usize) -> Arc<Expr> {
        Arc::new(Expr::Sample(j))
    }

    #[test]
    fn strict_bounds_refute_scaled_samples() {
        let e = apply("mul", vec![a(1), c(3.0)]);
        assert!(refutes(&e, Rel::Le0, Interval::WHOLE));
        assert!(!refutes(&e, Rel::Gt0, Interval::WHOLE));
    }

    #[test]
    fn constants() {
        assert!(refutes(&c(-1.0), Rel::Ge0, Interval::WHOLE));
        assert!(!refutes(&c(0.0), Rel::Ge0, Interval::WHOLE));
        assert!(refutes(&c(0.0), Rel::Gt0, Interval::WHOLE));
        assert!(!refutes(&c(0.0), Rel::Le0, Interval::WHOLE));
        let undefined = apply("div", vec![c(1.0), c(0.0)]);
        assert!(refutes(&undefined, Rel::InDomain, Interval::WHOLE));
    }

    #[test]
    fn shared_subexpressions_carry_their_bounds() {
        // p = 3·α1 − α2 > 0 and p + α4 ≤ 0 cannot both hold.
        let p = apply("sub", vec![apply("mul", vec![a(1), c(3.0)]), a(2)]);
        let q = apply("add", vec![p.clone(), a(4)]);
        let cons = |e: &Arc<Expr>, rel| Constraint { expr: e.clone(), rel };
        assert!(!refutes(&q, Rel::Le0, Interval::WHOLE));
        assert!(refute_constraints(&[cons(&p, Rel::Gt0), cons(&q, Rel::Le0)], Interval::WHOLE));
        assert!(!refute_constraints(&[cons(&p, Rel::Le0), cons(&q, Rel::Le0)], Interval::WHOLE));
        assert!(!refute_constraints(&[cons(&p, Rel::Gt0), cons(&q, Rel::Gt0)], Interval::WHOLE));
    }

    #[test]
    fn differences_of_samples_are_not_refuted() {
        let e = apply("sub", vec![a(1), a(2)]);
        for rel in [Rel::Le0, Rel::Gt0, Rel::Ge0] {
            assert!(!refutes(&e, rel, Interval::WHOLE));
        }
    }

    #[test]
    fn enclosures_contain_sampled_values() {
        let exprs = [
            apply("add", vec![a(1), c(0.1)]),
            apply("mul", vec![apply("sub", vec![a(1), c(0.5)]), a(2)]),
            apply("div", vec![a(1), apply("add", vec![a(2), c(0.3)])]),
            apply("exp", vec![apply("neg", vec![a(1)])]),
            apply("log", vec![a(2)]),
            apply("sqrt", vec![a(1)]),
            apply("pdfnorm", vec![c(1.1), c(0.1), a(1)]),
            apply("abs", vec![apply("sub", vec![a(1), a(2)])]),
        ];
        let grid: Vec<f64> = (1..20).map(|k| k as f64 / 20.0).collect();
        for e in &exprs {
            let iv = expr_interval(e, Interval::WHOLE).unwrap();
            for &x in &grid {
                for &y in &grid {
                    let v = e.eval_at(&[], &[x, y]).unwrap();
                    assert!(iv.contains(v), "{e}: {v} not in {iv:?}");
                }
            }
        }
    }

    #[test]
    fn zero_times_anything_is_attained() {
        let iv = Interval::point(0.0).mul(Interval::UNIT_OPEN);
        assert!(iv.contains(0.0));
        assert!(!iv.refutes(Rel::Le0));
    }

    #[test]
    fn inputs_default_unbounded() {
        let e = apply("mul", vec![Arc::new(Expr::Input(1)), c(2.0)]);
        assert!(!refutes(&e, Rel::Le0, Interval::WHOLE));
        assert!(refutes(&e, Rel::Le0, Interval::open(1.0, 2.0)));
    }
}
