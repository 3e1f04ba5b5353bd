use std::collections::HashMap;
use std::sync::Arc;

use thiserror::Error;

use super::term::{Name, Term, Type};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TypeError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("expected a function, found a term of type {0}")]
    NotAFunction(Type),
    #[error("argument has type {found}, expected {expected}")]
    ArgMismatch { expected: Type, found: Type },
    #[error("{what} must have type R, found {found}")]
    NotReal { what: &'static str, found: Type },
    #[error("branches disagree: {then_ty} vs {else_ty}")]
    BranchMismatch { then_ty: Type, else_ty: Type },
    #[error("fixpoint body must have type (s -> t) -> (s -> t), found {0}")]
    BadFix(Type),
    #[error("primitive `{name}` takes {expected} arguments, got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
}

/// Typing context with shadowing.
#[derive(Debug, Clone, Default)]
pub struct Context {
    bindings: Vec<(Name, Type)>,
}

impl Context {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_map(map: &HashMap<Name, Type>) -> Self {
        Context {
            bindings: map.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        }
    }

    pub fn push(&mut self, name: Name, ty: Type) {
        self.bindings.push((name, ty));
    }

    pub fn pop(&mut self) {
        self.bindings.pop();
    }

    pub fn lookup(&self, name: &str) -> Option<&Type> {
        self.bindings
            .iter()
            .rev()
            .find(|(n, _)| &**n == name)
            .map(|(_, t)| t)
    }
}

fn expect_real(what: &'static str, ty: Type) -> Result<(), TypeError> {
    match ty {
        Type::Real => Ok(()),
        found => Err(TypeError::NotReal { what, found }),
    }
}

/// Syntax-directed type synthesis. Symbolic variables and delayed
/// applications are real-typed.
pub fn typecheck(term: &Term, ctx: &mut Context) -> Result<Type, TypeError> {
    match term {
        Term::Var(x) => ctx
            .lookup(x)
            .cloned()
            .ok_or_else(|| TypeError::Unbound(x.to_string())),
        Term::Const(_) | Term::Sample | Term::Input(_) | Term::SampleVar(_) | Term::Delayed(_) => {
            Ok(Type::Real)
        }
        Term::Prim(p, args) => {
            if args.len() != p.arity {
                return Err(TypeError::Arity {
                    name: p.name.clone(),
                    expected: p.arity,
                    got: args.len(),
                });
            }
            for a in args {
                expect_real("primitive argument", typecheck(a, ctx)?)?;
            }
            Ok(Type::Real)
        }
        Term::Lam(x, ty, body) => {
            ctx.push(x.clone(), ty.clone());
            let result = typecheck(body, ctx);
            ctx.pop();
            Ok(Type::arrow(ty.clone(), result?))
        }
        Term::App(f, a) => {
            let fty = typecheck(f, ctx)?;
            let aty = typecheck(a, ctx)?;
            match fty {
                Type::Arrow(param, result) => {
                    if *param == aty {
                        Ok(*result)
                    } else {
                        Err(TypeError::ArgMismatch {
                            expected: *param,
                            found: aty,
                        })
                    }
                }
                other => Err(TypeError::NotAFunction(other)),
            }
        }
        Term::Fix(body) => match typecheck(body, ctx)? {
            Type::Arrow(from, to) if *from == *to && matches!(*from, Type::Arrow(..)) => Ok(*from),
            other => Err(TypeError::BadFix(other)),
        },
        Term::IfLeq(l, m, n) => {
            expect_real("conditional scrutinee", typecheck(l, ctx)?)?;
            let then_ty = typecheck(m, ctx)?;
            let else_ty = typecheck(n, ctx)?;
            if then_ty == else_ty {
                Ok(then_ty)
            } else {
                Err(TypeError::BranchMismatch { then_ty, else_ty })
            }
        }
        Term::Score(m) => {
            expect_real("score argument", typecheck(m, ctx)?)?;
            Ok(Type::Real)
        }
    }
}

/// Typechecks a closed term.
pub fn typecheck_closed(term: &Arc<Term>) -> Result<Type, TypeError> {
    typecheck(term, &mut Context::new())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annotated_identity() {
        let id = Term::lam("y", Type::Real, Term::var("y"));
        assert_eq!(typecheck_closed(&id).unwrap(), Type::arrow(Type::Real, Type::Real));
    }

    #[test]
    fn fix_of_functional() {
        let rr = Type::arrow(Type::Real, Type::Real);
        let body = Term::lam(
            "f",
            rr.clone(),
            Term::lam("x", Type::Real, Term::app(Term::var("f"), Term::var("x"))),
        );
        let t = Arc::new(Term::Fix(body));
        assert_eq!(typecheck_closed(&t).unwrap(), rr);
    }

    #[test]
    fn fix_needs_function_type() {
        let t = Arc::new(Term::Fix(Term::lam("x", Type::Real, Term::var("x"))));
        assert!(matches!(typecheck_closed(&t), Err(TypeError::BadFix(_))));
    }

    #[test]
    fn score_needs_real() {
        let id = Term::lam("y", Type::Real, Term::var("y"));
        let t = Arc::new(Term::Score(id));
        assert!(matches!(typecheck_closed(&t), Err(TypeError::NotReal { .. })));
    }

    #[test]
    fn unbound_and_misapplied() {
        assert!(matches!(
            typecheck_closed(&Term::var("q")),
            Err(TypeError::Unbound(_))
        ));
        let t = Term::app(Arc::new(Term::Sample), Arc::new(Term::Sample));
        assert!(matches!(typecheck_closed(&t), Err(TypeError::NotAFunction(Type::Real))));
    }
}
