//! Printing terms back to surface syntax.
//!
//! Every printed term is an atom of the surface grammar (parenthesised where
//! needed) and primitive applications are always printed in prefix form, so
//! `parse(print(t))` gives back `t` for source terms over the builtin
//! registry. Symbolic nodes print with a display-only notation: `@x1` for
//! inputs, `@a1` for sampling variables and `#f(...)` for delayed
//! applications.

use std::fmt::Write;

use crate::symbolic::Expr;

use super::term::Term;

pub fn print(term: &Term) -> String {
    let mut out = String::new();
    write_term(&mut out, term);
    out
}

fn write_const(out: &mut String, c: f64) {
    if c < 0.0 || (c == 0.0 && c.is_sign_negative()) {
        let _ = write!(out, "(-{:?})", -c);
    } else {
        let _ = write!(out, "{c:?}");
    }
}

fn write_term(out: &mut String, term: &Term) {
    match term {
        Term::Var(x) => out.push_str(x),
        Term::Const(c) => write_const(out, *c),
        Term::Sample => out.push_str("sample"),
        Term::Input(i) => {
            let _ = write!(out, "@x{i}");
        }
        Term::SampleVar(j) => {
            let _ = write!(out, "@a{j}");
        }
        Term::Delayed(e) => write_expr(out, e),
        Term::Score(m) => {
            out.push_str("score(");
            write_term(out, m);
            out.push(')');
        }
        Term::Prim(p, args) => {
            out.push_str(p.name());
            out.push('(');
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_term(out, a);
            }
            out.push(')');
        }
        Term::Lam(x, ty, body) => {
            let _ = write!(out, "(fn ({x} : {ty}) -> ");
            write_term(out, body);
            out.push(')');
        }
        Term::App(m, n) => {
            out.push('(');
            write_term(out, m);
            out.push(' ');
            write_term(out, n);
            out.push(')');
        }
        Term::Fix(m) => {
            out.push_str("(fix ");
            write_term(out, m);
            out.push(')');
        }
        Term::IfLeq(l, m, n) => {
            out.push_str("(if ");
            write_term(out, l);
            out.push_str(" <= 0 then ");
            write_term(out, m);
            out.push_str(" else ");
            write_term(out, n);
            out.push(')');
        }
    }
}

pub(crate) fn write_expr(out: &mut String, e: &Expr) {
    match e {
        Expr::Const(c) => write_const(out, *c),
        Expr::Input(i) => {
            let _ = write!(out, "@x{i}");
        }
        Expr::Sample(j) => {
            let _ = write!(out, "@a{j}");
        }
        Expr::Apply(p, args) => {
            let _ = write!(out, "#{}(", p.name());
            for (i, a) in args.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_expr(out, a);
            }
            out.push(')');
        }
    }
}

impl std::fmt::Display for Term {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&print(self))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lang::parse;

    fn round_trip(src: &str) {
        let p = parse(src).unwrap();
        let printed = print(&p.term);
        let again = parse(&printed).unwrap_or_else(|e| panic!("{printed}: {e}"));
        assert_eq!(again.term, p.term, "{printed}");
    }

    #[test]
    fn round_trips() {
        for src in [
            "score(sample)",
            "let x = sample * 3 in x - 1.5",
            "if flip() then -2 else 0.6000000000000001",
            "let rec f (x : R) : R = if x <= 0 then 0 else f (x - 1) in f 3",
            "fn (g : R -> R) -> g (neg(1e-12))",
            "pdfnorm(1.1, 0.1, sample); exp(log(2))",
            "if 0 <= 0 then 1 else 2",
        ] {
            round_trip(src);
        }
    }

    #[test]
    fn symbolic_notation() {
        use std::sync::Arc;
        let mul = crate::primitives::builtin_registry().builtin("mul");
        let e = Expr::Apply(mul, vec![Arc::new(Expr::Sample(1)), Arc::new(Expr::Const(3.0))]);
        assert_eq!(print(&Term::Delayed(Arc::new(e))), "#mul(@a1, 3.0)");
        assert_eq!(print(&Term::Const(-0.5)), "(-0.5)");
    }
}
