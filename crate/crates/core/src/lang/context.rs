//! Unique decomposition of a non-value term into an evaluation context and
//! a redex. Shared by the concrete and symbolic machines: the same shapes
//! are redexes in both, with "real value" meaning a constant in concrete
//! terms and any real-typed symbolic value in symbolic ones.

use std::sync::Arc;

use crate::primitives::Prim;

use super::term::Term;

/// One layer of an evaluation context.
#[derive(Clone, Debug, PartialEq)]
pub enum Frame {
    /// `E M`
    AppFun(Arc<Term>),
    /// `(λy.M) E`
    AppArg(Arc<Term>),
    /// `f(V_1, …, V_{i-1}, E, M_{i+1}, …)`
    PrimArg {
        prim: Prim,
        done: Vec<Arc<Term>>,
        rest: Vec<Arc<Term>>,
    },
    /// `Y E`
    Fix,
    /// `if E <= 0 then M else N`
    IfCond(Arc<Term>, Arc<Term>),
    /// `score(E)`
    Score,
}

/// Evaluation context, outermost frame first. The empty context is the hole.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EvalContext {
    pub frames: Vec<Frame>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Decomposition {
    Value,
    Redex(EvalContext, Arc<Term>),
    /// Open or ill-typed: neither a value nor `E[R]`.
    Stuck,
}

impl EvalContext {
    pub fn is_hole(&self) -> bool {
        self.frames.is_empty()
    }

    /// `E[term]`
    pub fn plug(&self, term: Arc<Term>) -> Arc<Term> {
        self.frames.iter().rev().fold(term, |inner, frame| {
            Arc::new(match frame {
                Frame::AppFun(arg) => Term::App(inner, arg.clone()),
                Frame::AppArg(fun) => Term::App(fun.clone(), inner),
                Frame::PrimArg { prim, done, rest } => {
                    let mut args = Vec::with_capacity(done.len() + 1 + rest.len());
                    args.extend(done.iter().cloned());
                    args.push(inner);
                    args.extend(rest.iter().cloned());
                    Term::Prim(prim.clone(), args)
                }
                Frame::Fix => Term::Fix(inner),
                Frame::IfCond(m, n) => Term::IfLeq(inner, m.clone(), n.clone()),
                Frame::Score => Term::Score(inner),
            })
        })
    }
}

enum Descend {
    Into(Frame, Arc<Term>),
    Redex,
    Stuck,
}

/// One step of the search for the redex inside a non-value term.
fn descend(cur: &Term) -> Descend {
    match cur {
        Term::App(m, n) => {
            if !m.is_value() {
                Descend::Into(Frame::AppFun(n.clone()), m.clone())
            } else if !matches!(**m, Term::Lam(..)) {
                Descend::Stuck
            } else if !n.is_value() {
                Descend::Into(Frame::AppArg(m.clone()), n.clone())
            } else {
                Descend::Redex
            }
        }
        Term::Prim(prim, args) => match args.iter().position(|a| !a.is_value()) {
            Some(i) => {
                if args[..i].iter().any(|a| !a.is_real_value()) {
                    return Descend::Stuck;
                }
                let frame = Frame::PrimArg {
                    prim: prim.clone(),
                    done: args[..i].to_vec(),
                    rest: args[i + 1..].to_vec(),
                };
                Descend::Into(frame, args[i].clone())
            }
            None if args.iter().all(|a| a.is_real_value()) => Descend::Redex,
            None => Descend::Stuck,
        },
        Term::Fix(m) => {
            if !m.is_value() {
                Descend::Into(Frame::Fix, m.clone())
            } else if matches!(**m, Term::Lam(..)) {
                Descend::Redex
            } else {
                Descend::Stuck
            }
        }
        Term::IfLeq(l, m, n) => {
            if !l.is_value() {
                Descend::Into(Frame::IfCond(m.clone(), n.clone()), l.clone())
            } else if l.is_real_value() {
                Descend::Redex
            } else {
                Descend::Stuck
            }
        }
        Term::Score(m) => {
            if !m.is_value() {
                Descend::Into(Frame::Score, m.clone())
            } else if m.is_real_value() {
                Descend::Redex
            } else {
                Descend::Stuck
            }
        }
        Term::Sample => Descend::Redex,
        // Open variables, or values where a redex was expected.
        Term::Var(_) | Term::Const(_) | Term::Lam(..) | Term::Input(_) | Term::SampleVar(_) | Term::Delayed(_) => {
            Descend::Stuck
        }
    }
}

fn plug_frame(frame: Frame, inner: Arc<Term>) -> Arc<Term> {
    EvalContext { frames: vec![frame] }.plug(inner)
}

pub fn decompose(term: &Arc<Term>) -> Decomposition {
    if term.is_value() {
        return Decomposition::Value;
    }
    let mut frames = Vec::new();
    let mut cur = term.clone();
    loop {
        match descend(&cur) {
            Descend::Into(frame, next) => {
                frames.push(frame);
                cur = next;
            }
            Descend::Redex => return Decomposition::Redex(EvalContext { frames }, cur),
            Descend::Stuck => return Decomposition::Stuck,
        }
    }
}

/// The term `E[focus]` kept split at the hole, so that after a contraction
/// the next redex is found by moving from the hole instead of from the root.
/// Visits exactly the redexes `decompose` would.
#[derive(Clone, Debug)]
pub struct Zipper {
    stack: Vec<Frame>,
    focus: Arc<Term>,
}

impl Zipper {
    pub fn new(term: Arc<Term>) -> Zipper {
        Zipper {
            stack: Vec::new(),
            focus: term,
        }
    }

    /// Moves the focus to the next redex. `Value` means the whole term is a
    /// value (and the focus is that value).
    pub fn refocus(&mut self) -> Decomposition {
        loop {
            if self.focus.is_value() {
                match self.stack.pop() {
                    None => return Decomposition::Value,
                    Some(frame) => self.focus = plug_frame(frame, self.focus.clone()),
                }
                continue;
            }
            match descend(&self.focus) {
                Descend::Into(frame, next) => {
                    self.stack.push(frame);
                    self.focus = next;
                }
                Descend::Redex => {
                    return Decomposition::Redex(EvalContext::default(), self.focus.clone());
                }
                Descend::Stuck => return Decomposition::Stuck,
            }
        }
    }

    pub fn focus(&self) -> &Arc<Term> {
        &self.focus
    }

    /// Replaces the term in focus (the redex, after contraction).
    pub fn replace(&mut self, term: Arc<Term>) {
        self.focus = term;
    }

    pub fn depth(&self) -> usize {
        self.stack.len()
    }

    /// Reassembles the whole term.
    pub fn into_term(self) -> Arc<Term> {
        EvalContext { frames: self.stack }.plug(self.focus)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::Type;

    fn score(t: Arc<Term>) -> Arc<Term> {
        Arc::new(Term::Score(t))
    }

    #[test]
    fn values_do_not_decompose() {
        assert_eq!(decompose(&Term::constant(3.0)), Decomposition::Value);
    }

    #[test]
    fn redex_at_root() {
        let t = score(Term::constant(2.0));
        match decompose(&t) {
            Decomposition::Redex(ctx, r) => {
                assert!(ctx.is_hole());
                assert_eq!(r, t);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn argument_position() {
        let id = Term::lam("y", Type::Real, Term::var("y"));
        let redex = score(Term::constant(2.0));
        let t = Term::app(id.clone(), redex.clone());
        match decompose(&t) {
            Decomposition::Redex(ctx, r) => {
                assert_eq!(ctx.frames, vec![Frame::AppArg(id)]);
                assert_eq!(r, redex);
                assert_eq!(ctx.plug(r), t);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zipper_visits_the_same_redexes() {
        let p = crate::lang::parse("let f = fn (y : R) -> y * 2 in score(f (1 + 2)); exp(0)").unwrap();
        let mut zip = Zipper::new(p.term.clone());
        let mut whole = p.term.clone();
        loop {
            let expected = decompose(&whole);
            let got = zip.refocus();
            match (expected, got) {
                (Decomposition::Value, Decomposition::Value) => break,
                (Decomposition::Redex(ctx, r), Decomposition::Redex(_, r2)) => {
                    assert_eq!(r, r2);
                    // Contract with the concrete machine's result.
                    let cfg = crate::interp::Configuration { term: r.clone(), weight: 1.0, trace: vec![] };
                    let crate::interp::Step::Next(next) = crate::interp::step(&cfg, None) else { panic!() };
                    whole = ctx.plug(next.term.clone());
                    zip.replace(next.term);
                    assert_eq!(zip.clone().into_term(), whole);
                }
                (a, b) => panic!("{a:?} vs {b:?}"),
            }
        }
    }

    #[test]
    fn open_terms_are_stuck() {
        assert_eq!(decompose(&score(Term::var("x"))), Decomposition::Stuck);
        let bad = Term::app(Term::constant(1.0), Term::constant(2.0));
        assert_eq!(decompose(&bad), Decomposition::Stuck);
    }
}
