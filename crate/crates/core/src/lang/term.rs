use std::cell::OnceCell;
use std::collections::HashSet;
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::primitives::Prim;
use crate::symbolic::Expr;

pub type Name = Arc<str>;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Type {
    Real,
    Arrow(Box<Type>, Box<Type>),
}

impl Type {
    pub fn arrow(param: Type, result: Type) -> Type {
        Type::Arrow(Box::new(param), Box::new(result))
    }
}

impl fmt::Display for Type {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Type::Real => write!(f, "R"),
            Type::Arrow(a, b) if matches!(**a, Type::Arrow(..)) => write!(f, "({a}) -> {b}"),
            Type::Arrow(a, b) => write!(f, "{a} -> {b}"),
        }
    }
}

/// Terms of the language. The last three variants only occur in symbolic
/// terms produced by symbolic execution; source programs never contain them.
#[derive(Clone, Debug, PartialEq)]
pub enum Term {
    Var(Name),
    Const(f64),
    Prim(Prim, Vec<Arc<Term>>),
    Lam(Name, Type, Arc<Term>),
    App(Arc<Term>, Arc<Term>),
    Fix(Arc<Term>),
    /// `if L <= 0 then M else N`
    IfLeq(Arc<Term>, Arc<Term>, Arc<Term>),
    Sample,
    Score(Arc<Term>),
    /// Input variable `x_i`, one-based.
    Input(usize),
    /// Sampling variable `α_j`, one-based.
    SampleVar(usize),
    /// Delayed primitive application; the expression root is always an
    /// application node.
    Delayed(Arc<Expr>),
}

static FRESH: AtomicU64 = AtomicU64::new(0);

fn globally_fresh(base: &str) -> Name {
    let n = FRESH.fetch_add(1, Ordering::Relaxed);
    format!("{base}'{n}").into()
}

impl Term {
    pub fn var(name: &str) -> Arc<Term> {
        Arc::new(Term::Var(name.into()))
    }

    pub fn constant(c: f64) -> Arc<Term> {
        Arc::new(Term::Const(c))
    }

    pub fn lam(param: &str, ty: Type, body: Arc<Term>) -> Arc<Term> {
        Arc::new(Term::Lam(param.into(), ty, body))
    }

    pub fn app(fun: Arc<Term>, arg: Arc<Term>) -> Arc<Term> {
        Arc::new(Term::App(fun, arg))
    }

    /// Values: constants and abstractions, plus the symbolic values of real
    /// type (input/sampling variables and delayed applications).
    pub fn is_value(&self) -> bool {
        matches!(
            self,
            Term::Const(_) | Term::Lam(..) | Term::Input(_) | Term::SampleVar(_) | Term::Delayed(_)
        )
    }

    /// Values of real type.
    pub fn is_real_value(&self) -> bool {
        self.is_value() && !matches!(self, Term::Lam(..))
    }

    pub fn as_const(&self) -> Option<f64> {
        match self {
            Term::Const(c) => Some(*c),
            _ => None,
        }
    }

    /// True when the term contains no input/sampling variables or delayed
    /// applications.
    pub fn is_concrete(&self) -> bool {
        match self {
            Term::Input(_) | Term::SampleVar(_) | Term::Delayed(_) => false,
            Term::Var(_) | Term::Const(_) | Term::Sample => true,
            Term::Prim(_, args) => args.iter().all(|a| a.is_concrete()),
            Term::Lam(_, _, b) | Term::Fix(b) | Term::Score(b) => b.is_concrete(),
            Term::App(a, b) => a.is_concrete() && b.is_concrete(),
            Term::IfLeq(l, m, n) => l.is_concrete() && m.is_concrete() && n.is_concrete(),
        }
    }

    pub fn free_vars(&self) -> HashSet<Name> {
        let mut out = HashSet::new();
        self.collect_free(&mut Vec::new(), &mut out);
        out
    }

    fn collect_free(&self, bound: &mut Vec<Name>, out: &mut HashSet<Name>) {
        match self {
            Term::Var(x) => {
                if !bound.contains(x) {
                    out.insert(x.clone());
                }
            }
            Term::Lam(x, _, body) => {
                bound.push(x.clone());
                body.collect_free(bound, out);
                bound.pop();
            }
            _ => self.for_each_child(|c| c.collect_free(bound, out)),
        }
    }

    fn for_each_child(&self, mut f: impl FnMut(&Term)) {
        match self {
            Term::Prim(_, args) => args.iter().for_each(|a| f(a)),
            Term::Lam(_, _, b) | Term::Fix(b) | Term::Score(b) => f(b),
            Term::App(a, b) => {
                f(a);
                f(b)
            }
            Term::IfLeq(l, m, n) => {
                f(l);
                f(m);
                f(n)
            }
            _ => {}
        }
    }

    /// Every variable name occurring in the term, bound or free.
    pub fn names(&self) -> HashSet<Name> {
        let mut out = HashSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut HashSet<Name>) {
        match self {
            Term::Var(x) => {
                out.insert(x.clone());
            }
            Term::Lam(x, _, body) => {
                out.insert(x.clone());
                body.collect_names(out);
            }
            _ => self.for_each_child(|c| c.collect_names(out)),
        }
    }

    pub fn size(&self) -> usize {
        let mut n = 1;
        self.for_each_child(|c| n += c.size());
        n
    }
}

/// A name based on `base` that does not occur in `avoid`.
pub fn fresh_name(base: &str, avoid: &HashSet<Name>) -> Name {
    if !avoid.contains(base) {
        return base.into();
    }
    (1..)
        .map(|i| format!("{base}{i}"))
        .find(|n| !avoid.contains(n.as_str()))
        .expect("unbounded supply of names")
        .into()
}

/// Capture-avoiding substitution `term[value/var]`.
///
/// Binders that would capture a free variable of `value` are renamed to
/// globally fresh names; with closed `value`s (the only case arising during
/// evaluation) no renaming ever happens.
pub fn subst(term: &Arc<Term>, var: &str, value: &Arc<Term>) -> Arc<Term> {
    let fv = OnceCell::new();
    subst_opt(term, var, value, &fv).unwrap_or_else(|| term.clone())
}

fn subst_opt(
    term: &Arc<Term>,
    var: &str,
    value: &Arc<Term>,
    fv: &OnceCell<HashSet<Name>>,
) -> Option<Arc<Term>> {
    let go = |t: &Arc<Term>| subst_opt(t, var, value, fv);
    let keep = |t: &Arc<Term>, new: Option<Arc<Term>>| new.unwrap_or_else(|| t.clone());
    match &**term {
        Term::Var(x) => (&**x == var).then(|| value.clone()),
        Term::Lam(x, ty, body) => {
            if &**x == var {
                return None;
            }
            if fv.get_or_init(|| value.free_vars()).contains(x) {
                let fresh = globally_fresh(x);
                let renamed = subst(body, x, &Arc::new(Term::Var(fresh.clone())));
                let body = keep(&renamed, go(&renamed));
                return Some(Arc::new(Term::Lam(fresh, ty.clone(), body)));
            }
            go(body).map(|b| Arc::new(Term::Lam(x.clone(), ty.clone(), b)))
        }
        Term::Prim(p, args) => {
            let new: Vec<Option<Arc<Term>>> = args.iter().map(go).collect();
            if new.iter().all(Option::is_none) {
                return None;
            }
            let args = args.iter().zip(new).map(|(a, n)| keep(a, n)).collect();
            Some(Arc::new(Term::Prim(p.clone(), args)))
        }
        Term::App(a, b) => match (go(a), go(b)) {
            (None, None) => None,
            (na, nb) => Some(Arc::new(Term::App(keep(a, na), keep(b, nb)))),
        },
        Term::Fix(b) => go(b).map(|b| Arc::new(Term::Fix(b))),
        Term::Score(b) => go(b).map(|b| Arc::new(Term::Score(b))),
        Term::IfLeq(l, m, n) => match (go(l), go(m), go(n)) {
            (None, None, None) => None,
            (nl, nm, nn) => Some(Arc::new(Term::IfLeq(keep(l, nl), keep(m, nm), keep(n, nn)))),
        },
        Term::Const(_) | Term::Sample | Term::Input(_) | Term::SampleVar(_) | Term::Delayed(_) => {
            None
        }
    }
}

/// Applies `f` to every node bottom-up, rebuilding only changed spines.
/// `f` returns `Some(replacement)` to replace a leaf-like node.
pub fn map_leaves(
    term: &Arc<Term>,
    f: &mut impl FnMut(&Term) -> Option<Option<Arc<Term>>>,
) -> Option<Arc<Term>> {
    // Outer None: undefined somewhere. Inner None: unchanged.
    fn go(
        term: &Arc<Term>,
        f: &mut impl FnMut(&Term) -> Option<Option<Arc<Term>>>,
    ) -> Option<Option<Arc<Term>>> {
        let keep = |t: &Arc<Term>, new: Option<Arc<Term>>| new.unwrap_or_else(|| t.clone());
        match &**term {
            Term::Var(_) | Term::Const(_) | Term::Sample | Term::Input(_) | Term::SampleVar(_)
            | Term::Delayed(_) => f(term),
            Term::Lam(x, ty, body) => {
                Some(go(body, f)?.map(|b| Arc::new(Term::Lam(x.clone(), ty.clone(), b))))
            }
            Term::Prim(p, args) => {
                let mut changed = false;
                let mut out = Vec::with_capacity(args.len());
                for a in args {
                    let n = go(a, f)?;
                    changed |= n.is_some();
                    out.push(keep(a, n));
                }
                Some(changed.then(|| Arc::new(Term::Prim(p.clone(), out))))
            }
            Term::App(a, b) => {
                let (na, nb) = (go(a, f)?, go(b, f)?);
                Some(
                    (na.is_some() || nb.is_some())
                        .then(|| Arc::new(Term::App(keep(a, na), keep(b, nb)))),
                )
            }
            Term::Fix(b) => Some(go(b, f)?.map(|b| Arc::new(Term::Fix(b)))),
            Term::Score(b) => Some(go(b, f)?.map(|b| Arc::new(Term::Score(b)))),
            Term::IfLeq(l, m, n) => {
                let (nl, nm, nn) = (go(l, f)?, go(m, f)?, go(n, f)?);
                Some((nl.is_some() || nm.is_some() || nn.is_some()).then(|| {
                    Arc::new(Term::IfLeq(keep(l, nl), keep(m, nm), keep(n, nn)))
                }))
            }
        }
    }
    go(term, f).map(|n| n.unwrap_or_else(|| term.clone()))
}
