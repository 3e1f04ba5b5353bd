use std::sync::Arc;

use crate::interp::unfold;
use crate::lang::{decompose, map_leaves, subst, Decomposition, Term, TypedProgram};

use super::expr::{eval_product, Expr};
use super::region::{Region, Rel};

/// ⟨𝓜, 𝔀, U⟩ plus bookkeeping: the branch decisions taken and the number of
/// steps from the initial configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct SymbolicConfiguration {
    pub term: Arc<Term>,
    /// Weight as a product of factors; empty means 1.
    pub weight: Vec<Arc<Expr>>,
    pub region: Arc<Region>,
    pub path: Vec<bool>,
    pub depth: u64,
}

impl SymbolicConfiguration {
    /// ⟨M[x_i/x_i], 1, ℝ^m × 𝕊_0⟩ with the program's free variables replaced
    /// by input variables.
    pub fn initial(prog: &TypedProgram) -> SymbolicConfiguration {
        let term = prog
            .free_vars
            .iter()
            .enumerate()
            .fold(prog.term.clone(), |t, (i, x)| subst(&t, x, &Arc::new(Term::Input(i + 1))));
        SymbolicConfiguration {
            term,
            weight: Vec::new(),
            region: Arc::new(Region::full(prog.free_vars.len(), 0)),
            path: Vec::new(),
            depth: 0,
        }
    }

    pub fn is_value(&self) -> bool {
        self.term.is_value()
    }

    /// The value as an expression when it is real-typed.
    pub fn value_expr(&self) -> Option<Arc<Expr>> {
        Expr::from_value(&self.term)
    }

    pub fn weight_at(&self, r: &[f64], s: &[f64]) -> Option<f64> {
        eval_product(&self.weight, r, s)
    }

    /// True when the next redex is `sample`.
    pub fn at_sample(&self) -> bool {
        matches!(decompose(&self.term), Decomposition::Redex(_, r) if *r == Term::Sample)
    }

    fn successor(&self, term: Arc<Term>) -> SymbolicConfiguration {
        SymbolicConfiguration {
            term,
            weight: self.weight.clone(),
            region: self.region.clone(),
            path: self.path.clone(),
            depth: self.depth + 1,
        }
    }
}

/// Adds `e rel 0`, skipping constant constraints that hold everywhere.
fn constrain(region: &Arc<Region>, e: &Arc<Expr>, rel: Rel) -> Arc<Region> {
    match **e {
        Expr::Const(c) if rel.holds(c) => region.clone(),
        _ => Arc::new(region.with(e.clone(), rel)),
    }
}

fn expr_of(v: &Term) -> Arc<Expr> {
    Expr::from_value(v).expect("redex argument is a real-typed symbolic value")
}

/// One symbolic reduction step: no successors for values, two for
/// conditionals and one otherwise. Successors whose region is empty are
/// returned as well.
pub fn symbolic_step(cfg: &SymbolicConfiguration) -> Vec<SymbolicConfiguration> {
    let (ctx, redex) = match decompose(&cfg.term) {
        Decomposition::Value => return Vec::new(),
        Decomposition::Redex(ctx, r) => (ctx, r),
        Decomposition::Stuck => panic!("ill-formed symbolic configuration: {}", cfg.term),
    };
    let succ = |t: Arc<Term>| cfg.successor(ctx.plug(t));
    match &*redex {
        Term::App(f, v) => {
            let Term::Lam(y, _, body) = &**f else { unreachable!() };
            vec![succ(subst(body, y, v))]
        }
        Term::Prim(p, args) => {
            let folded = args
                .iter()
                .map(|a| a.as_const())
                .collect::<Option<Vec<f64>>>()
                .and_then(|cs| p.eval(&cs).ok());
            if let Some(v) = folded {
                return vec![succ(Term::constant(v))];
            }
            let e = Arc::new(Expr::Apply(p.clone(), args.iter().map(|a| expr_of(a)).collect()));
            let mut next = succ(Arc::new(Term::Delayed(e.clone())));
            next.region = Arc::new(cfg.region.with(e, Rel::InDomain));
            vec![next]
        }
        Term::Fix(lam) => vec![succ(unfold(lam))],
        Term::IfLeq(l, m, n) => {
            let e = expr_of(l);
            [(Rel::Le0, m, true), (Rel::Gt0, n, false)]
                .into_iter()
                .map(|(rel, branch, then)| {
                    let mut next = succ(branch.clone());
                    next.region = constrain(&cfg.region, &e, rel);
                    next.path.push(then);
                    next
                })
                .collect()
        }
        Term::Sample => {
            let mut next = succ(Arc::new(Term::SampleVar(cfg.region.n + 1)));
            next.region = Arc::new(cfg.region.extruded());
            vec![next]
        }
        Term::Score(v) => {
            let e = expr_of(v);
            let mut next = succ(v.clone());
            next.region = constrain(&cfg.region, &e, Rel::Ge0);
            next.weight.push(e);
            vec![next]
        }
        other => unreachable!("not a redex: {other:?}"),
    }
}

/// ⌞M⌟(r, s): substitutes the point and collapses delayed applications;
/// `None` outside the domain.
pub fn instantiate(term: &Arc<Term>, r: &[f64], s: &[f64]) -> Option<Arc<Term>> {
    map_leaves(term, &mut |t| match t {
        Term::Input(i) => Some(Some(Term::constant(*r.get(*i - 1)?))),
        Term::SampleVar(j) => Some(Some(Term::constant(*s.get(*j - 1)?))),
        Term::Delayed(e) => Some(Some(Term::constant(e.eval_at(r, s)?))),
        _ => Some(None),
    })
}
