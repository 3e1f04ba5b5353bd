//! Environment machine for closed concrete terms. It contracts the same
//! redexes in the same order as the substitution machine, so steps, traces,
//! weights and branch decisions agree; variables are looked up instead of
//! substituted, and the final value is read back into a term.

use std::sync::Arc;

use crate::lang::{subst, Name, Term};

use super::{unfold, FailReason, Outcome, RunOutcome};

type Env = Option<Arc<Node>>;

struct Node {
    name: Name,
    bound: Bound,
    next: Env,
}

#[derive(Clone)]
enum Bound {
    Val(Val),
    /// `Y(lam)` with `lam` closed by the environment.
    Fix(Arc<Term>, Env),
}

#[derive(Clone)]
enum Val {
    Real(f64),
    Clo(Arc<Term>, Env),
    /// The unfolding of `Y(lam)`.
    FixClo(Arc<Term>, Env),
}

enum Frame {
    AppFun(Arc<Term>, Env),
    AppArg(Val),
    /// Function position of an unfolded fixpoint body; the argument is known.
    ApplyTo(Val),
    /// Evaluated arguments sit on top of the shared real stack.
    Prim { term: Arc<Term>, done: usize, env: Env },
    Fix,
    If(Arc<Term>, Arc<Term>, Env),
    Score,
}

enum Ctl {
    Eval(Arc<Term>, Env),
    Ret(Val),
}

fn bind(env: &Env, name: &Name, bound: Bound) -> Env {
    Some(Arc::new(Node {
        name: name.clone(),
        bound,
        next: env.clone(),
    }))
}

fn lookup<'a>(mut env: &'a Env, name: &Name) -> &'a Bound {
    while let Some(node) = env {
        if Arc::ptr_eq(&node.name, name) || node.name == *name {
            return &node.bound;
        }
        env = &node.next;
    }
    panic!("ill-formed configuration: free variable {name}")
}

fn real(v: Val) -> f64 {
    match v {
        Val::Real(r) => r,
        _ => panic!("ill-formed configuration: function where a real was expected"),
    }
}

fn readback(v: &Val) -> Arc<Term> {
    match v {
        Val::Real(r) => Term::constant(*r),
        Val::Clo(lam, env) => close_over(lam, env),
        Val::FixClo(lam, env) => unfold(&close_over(lam, env)),
    }
}

fn close_over(t: &Arc<Term>, env: &Env) -> Arc<Term> {
    let mut fv: Vec<Name> = t.free_vars().into_iter().collect();
    fv.sort();
    let mut out = t.clone();
    for x in fv {
        let value = match lookup(env, &x) {
            Bound::Val(v) => readback(v),
            Bound::Fix(lam, e) => Arc::new(Term::Fix(close_over(lam, e))),
        };
        out = subst(&out, &x, &value);
    }
    out
}

/// β-contraction of `f arg`; the step is counted by the caller.
fn apply(f: Val, arg: Val, stack: &mut Vec<Frame>) -> Ctl {
    match f {
        Val::Clo(lam, env) => {
            let Term::Lam(x, _, body) = &*lam else { unreachable!() };
            Ctl::Eval(body.clone(), bind(&env, x, Bound::Val(arg)))
        }
        Val::FixClo(lam, env) => {
            let Term::Lam(y, _, body) = &*lam else { unreachable!() };
            stack.push(Frame::ApplyTo(arg));
            let inner = bind(&env, y, Bound::Fix(lam.clone(), env.clone()));
            Ctl::Eval(body.clone(), inner)
        }
        Val::Real(_) => panic!("ill-formed configuration: applying a real"),
    }
}

pub(super) fn run(term: &Arc<Term>, next_sample: &mut dyn FnMut() -> Option<f64>, budget: u64) -> RunOutcome {
    let mut out = RunOutcome {
        outcome: Outcome::Terminated,
        value: None,
        weight: 1.0,
        trace: Vec::new(),
        steps: 0,
        branches: Vec::new(),
    };
    let mut stack: Vec<Frame> = Vec::new();
    let mut reals: Vec<f64> = Vec::new();
    let mut ctl = Ctl::Eval(term.clone(), None);

    macro_rules! contract {
        () => {
            if out.steps >= budget {
                out.outcome = Outcome::BudgetExceeded;
                return out;
            }
        };
    }
    macro_rules! fail {
        ($o:expr) => {{
            out.outcome = $o;
            return out;
        }};
    }

    loop {
        ctl = match ctl {
            Ctl::Eval(t, env) => match &*t {
                Term::Const(c) => Ctl::Ret(Val::Real(*c)),
                Term::Lam(..) => Ctl::Ret(Val::Clo(t.clone(), env)),
                Term::Var(x) => match lookup(&env, x) {
                    Bound::Val(v) => Ctl::Ret(v.clone()),
                    Bound::Fix(lam, e) => {
                        contract!();
                        out.steps += 1;
                        Ctl::Ret(Val::FixClo(lam.clone(), e.clone()))
                    }
                },
                Term::App(m, n) => {
                    stack.push(Frame::AppFun(n.clone(), env.clone()));
                    Ctl::Eval(m.clone(), env)
                }
                Term::Prim(p, args) => match args.first() {
                    Some(a) => {
                        let a = a.clone();
                        stack.push(Frame::Prim {
                            term: t.clone(),
                            done: 0,
                            env: env.clone(),
                        });
                        Ctl::Eval(a, env)
                    }
                    None => {
                        contract!();
                        match p.eval::<f64>(&[]) {
                            Ok(v) => {
                                out.steps += 1;
                                Ctl::Ret(Val::Real(v))
                            }
                            Err(_) => fail!(Outcome::Failed(FailReason::PrimDomain)),
                        }
                    }
                },
                Term::Fix(m) => {
                    stack.push(Frame::Fix);
                    Ctl::Eval(m.clone(), env)
                }
                Term::IfLeq(l, m, n) => {
                    stack.push(Frame::If(m.clone(), n.clone(), env.clone()));
                    Ctl::Eval(l.clone(), env)
                }
                Term::Score(m) => {
                    stack.push(Frame::Score);
                    Ctl::Eval(m.clone(), env)
                }
                Term::Sample => {
                    contract!();
                    match next_sample() {
                        Some(s) => {
                            out.trace.push(s);
                            out.steps += 1;
                            Ctl::Ret(Val::Real(s))
                        }
                        None => fail!(Outcome::StuckNeedsSample),
                    }
                }
                other => panic!("ill-formed configuration: {other}"),
            },
            Ctl::Ret(v) => match stack.pop() {
                None => {
                    out.value = Some(readback(&v));
                    return out;
                }
                Some(Frame::AppFun(n, env)) => {
                    if matches!(v, Val::Real(_)) {
                        panic!("ill-formed configuration: applying a real");
                    }
                    stack.push(Frame::AppArg(v));
                    Ctl::Eval(n, env)
                }
                Some(Frame::AppArg(f)) => {
                    contract!();
                    out.steps += 1;
                    apply(f, v, &mut stack)
                }
                Some(Frame::ApplyTo(arg)) => {
                    contract!();
                    out.steps += 1;
                    apply(v, arg, &mut stack)
                }
                Some(Frame::Prim { term, done, env }) => {
                    reals.push(real(v));
                    let done = done + 1;
                    let Term::Prim(p, args) = &*term else { unreachable!() };
                    if done < args.len() {
                        let a = args[done].clone();
                        stack.push(Frame::Prim { term: term.clone(), done, env: env.clone() });
                        Ctl::Eval(a, env)
                    } else {
                        contract!();
                        let at = reals.len() - done;
                        let r = p.eval(&reals[at..]);
                        reals.truncate(at);
                        match r {
                            Ok(r) => {
                                out.steps += 1;
                                Ctl::Ret(Val::Real(r))
                            }
                            Err(_) => fail!(Outcome::Failed(FailReason::PrimDomain)),
                        }
                    }
                }
                Some(Frame::Fix) => match v {
                    Val::Clo(lam, env) => {
                        contract!();
                        out.steps += 1;
                        Ctl::Ret(Val::FixClo(lam, env))
                    }
                    _ => panic!("ill-formed configuration: fixpoint of a non-function"),
                },
                Some(Frame::If(m, n, env)) => {
                    let r = real(v);
                    contract!();
                    out.steps += 1;
                    let then = r <= 0.0;
                    out.branches.push(then);
                    Ctl::Eval(if then { m } else { n }, env)
                }
                Some(Frame::Score) => {
                    let r = real(v);
                    contract!();
                    if r < 0.0 {
                        fail!(Outcome::Failed(FailReason::NegativeScore));
                    }
                    out.steps += 1;
                    out.weight *= r;
                    Ctl::Ret(Val::Real(r))
                }
            },
        };
    }
}
