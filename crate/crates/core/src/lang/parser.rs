//! Surface syntax.
//!
//! ```text
//! program := seq
//! seq     := expr [";" seq]                       M; N  ≡  (fn (_ : R) -> N) M
//! expr    := "fn" "(" ident ":" type ")" "->" seq
//!          | "let" "rec" ident param+ ":" type "=" seq "in" seq
//!          | "let" ident param* [":" type] "=" seq "in" seq
//!          | "if" cond "then" seq "else" seq
//!          | arith
//! param   := "(" ident ":" type ")"
//! cond    := "flip" "(" ")"  |  arith "<=" arith
//! arith   := mul {("+" | "-") mul}
//! mul     := unary {("*" | "/") unary}
//! unary   := "-" unary | app
//! app     := atom {atom}
//! atom    := ident | real | "sample" | "score" "(" seq ")" | "fix" atom
//!          | prim "(" seq {"," seq} ")" | "(" seq ")"
//! type    := "R" | type "->" type | "(" type ")"
//! ```
//!
//! `if A <= B` is `if A - B <= 0` unless `B` is the literal `0`; `flip()` is
//! `sample <= 0.5`. Identifiers that are not bound anywhere are the program's
//! real-valued inputs, numbered by first occurrence. Comments are `(* … *)`.

use std::sync::Arc;

use thiserror::Error;

use crate::primitives::{builtin_registry, Prim, Registry};

use super::term::{Name, Term, Type};
use super::typing::{Context, TypeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LangError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unknown primitive `{name}`")]
    UnknownPrimitive { name: String, line: usize, col: usize },
    #[error("{line}:{col}: primitive `{name}` takes {expected} arguments, got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
        line: usize,
        col: usize,
    },
    #[error("{line}:{col}: type error: {err}")]
    Type {
        err: TypeError,
        line: usize,
        col: usize,
    },
}

/// A closed-up program: `term` has free variables among `free_vars`, all of
/// type `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedProgram {
    pub term: Arc<Term>,
    pub free_vars: Vec<Name>,
    pub result_type: Type,
}

impl TypedProgram {
    pub fn n_inputs(&self) -> usize {
        self.free_vars.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Pos {
    line: usize,
    col: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Num(f64),
    Kw(&'static str),
    Sym(&'static str),
    Eof,
}

const KEYWORDS: &[&str] = &[
    "fn", "let", "rec", "in", "if", "then", "else", "score", "sample", "fix", "flip",
];
const SYMBOLS: &[&str] = &[
    "->", "=>", "<=", "(", ")", ",", ":", ";", "=", "+", "-", "*", "/",
];

fn lex(src: &str) -> Result<Vec<(Tok, Pos)>, LangError> {
    let chars: Vec<char> = src.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0, 1, 1);
    let advance = |i: &mut usize, line: &mut usize, col: &mut usize, n: usize| {
        for _ in 0..n {
            if chars[*i] == '\n' {
                *line += 1;
                *col = 1;
            } else {
                *col += 1;
            }
            *i += 1;
        }
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, col };
        if c.is_whitespace() {
            advance(&mut i, &mut line, &mut col, 1);
        } else if c == '(' && chars.get(i + 1) == Some(&'*') {
            let mut depth = 0;
            loop {
                if i >= chars.len() {
                    return Err(LangError::Syntax {
                        line: pos.line,
                        col: pos.col,
                        msg: "unterminated comment".into(),
                    });
                }
                if chars[i] == '(' && chars.get(i + 1) == Some(&'*') {
                    depth += 1;
                    advance(&mut i, &mut line, &mut col, 2);
                } else if chars[i] == '*' && chars.get(i + 1) == Some(&')') {
                    depth -= 1;
                    advance(&mut i, &mut line, &mut col, 2);
                    if depth == 0 {
                        break;
                    }
                } else {
                    advance(&mut i, &mut line, &mut col, 1);
                }
            }
        } else if c.is_ascii_digit() || (c == '.' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) {
            let start = i;
            let mut j = i;
            while j < chars.len() && (chars[j].is_ascii_digit() || chars[j] == '.') {
                j += 1;
            }
            if j < chars.len() && (chars[j] == 'e' || chars[j] == 'E') {
                let mut k = j + 1;
                if k < chars.len() && (chars[k] == '+' || chars[k] == '-') {
                    k += 1;
                }
                if k < chars.len() && chars[k].is_ascii_digit() {
                    while k < chars.len() && chars[k].is_ascii_digit() {
                        k += 1;
                    }
                    j = k;
                }
            }
            let text: String = chars[start..j].iter().collect();
            let value: f64 = text.parse().map_err(|_| LangError::Syntax {
                line: pos.line,
                col: pos.col,
                msg: format!("bad number `{text}`"),
            })?;
            advance(&mut i, &mut line, &mut col, j - start);
            out.push((Tok::Num(value), pos));
        } else if c.is_alphabetic() || c == '_' {
            let start = i;
            let mut j = i;
            while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_' || chars[j] == '\'') {
                j += 1;
            }
            let text: String = chars[start..j].iter().collect();
            advance(&mut i, &mut line, &mut col, j - start);
            match KEYWORDS.iter().find(|k| **k == text) {
                Some(k) => out.push((Tok::Kw(k), pos)),
                None => out.push((Tok::Ident(text), pos)),
            }
        } else {
            let rest: String = chars[i..(i + 2).min(chars.len())].iter().collect();
            let sym = SYMBOLS
                .iter()
                .find(|s| rest.starts_with(**s))
                .ok_or_else(|| LangError::Syntax {
                    line: pos.line,
                    col: pos.col,
                    msg: format!("unexpected character `{c}`"),
                })?;
            advance(&mut i, &mut line, &mut col, sym.len());
            out.push((Tok::Sym(sym), pos));
        }
    }
    out.push((Tok::Eof, Pos { line, col }));
    Ok(out)
}

#[derive(Debug, Clone)]
enum Node {
    Var(Name),
    Num(f64),
    Sample,
    Score(Box<Surf>),
    Prim(Prim, Vec<Surf>),
    Lam(Name, Type, Box<Surf>),
    App(Box<Surf>, Box<Surf>),
    Fix(Box<Surf>),
    IfLeq(Box<Surf>, Box<Surf>, Box<Surf>),
    Let {
        name: Name,
        annot: Option<Type>,
        value: Box<Surf>,
        body: Box<Surf>,
    },
    Seq(Box<Surf>, Box<Surf>),
}

#[derive(Debug, Clone)]
struct Surf {
    node: Node,
    pos: Pos,
}

impl Surf {
    fn new(node: Node, pos: Pos) -> Surf {
        Surf { node, pos }
    }
}

struct Parser<'r> {
    toks: Vec<(Tok, Pos)>,
    at: usize,
    registry: &'r Registry,
}

impl<'r> Parser<'r> {
    fn peek(&self) -> &Tok {
        &self.toks[self.at].0
    }

    fn peek_at(&self, k: usize) -> &Tok {
        &self.toks[(self.at + k).min(self.toks.len() - 1)].0
    }

    fn pos(&self) -> Pos {
        self.toks[self.at].1
    }

    fn bump(&mut self) -> Tok {
        let t = self.toks[self.at].0.clone();
        if self.at + 1 < self.toks.len() {
            self.at += 1;
        }
        t
    }

    fn error<T>(&self, msg: impl Into<String>) -> Result<T, LangError> {
        let p = self.pos();
        Err(LangError::Syntax {
            line: p.line,
            col: p.col,
            msg: msg.into(),
        })
    }

    fn is_sym(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Sym(x) if *x == s)
    }

    fn is_kw(&self, s: &str) -> bool {
        matches!(self.peek(), Tok::Kw(x) if *x == s)
    }

    fn expect_sym(&mut self, s: &str) -> Result<(), LangError> {
        if self.is_sym(s) {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn expect_kw(&mut self, s: &str) -> Result<(), LangError> {
        if self.is_kw(s) {
            self.bump();
            Ok(())
        } else {
            self.error(format!("expected `{s}`, found {}", describe(self.peek())))
        }
    }

    fn ident(&mut self) -> Result<Name, LangError> {
        match self.peek().clone() {
            Tok::Ident(x) => {
                self.bump();
                Ok(x.into())
            }
            other => self.error(format!("expected identifier, found {}", describe(&other))),
        }
    }

    fn ty(&mut self) -> Result<Type, LangError> {
        let lhs = if self.is_sym("(") {
            self.bump();
            let t = self.ty()?;
            self.expect_sym(")")?;
            t
        } else {
            match self.peek().clone() {
                Tok::Ident(x) if x == "R" => {
                    self.bump();
                    Type::Real
                }
                other => return self.error(format!("expected a type, found {}", describe(&other))),
            }
        };
        if self.is_sym("->") || self.is_sym("=>") {
            self.bump();
            Ok(Type::arrow(lhs, self.ty()?))
        } else {
            Ok(lhs)
        }
    }

    fn param(&mut self) -> Result<(Name, Type), LangError> {
        self.expect_sym("(")?;
        let x = self.ident()?;
        self.expect_sym(":")?;
        let t = self.ty()?;
        self.expect_sym(")")?;
        Ok((x, t))
    }

    fn seq(&mut self) -> Result<Surf, LangError> {
        let first = self.expr()?;
        if self.is_sym(";") {
            let pos = self.pos();
            self.bump();
            let rest = self.seq()?;
            return Ok(Surf::new(Node::Seq(Box::new(first), Box::new(rest)), pos));
        }
        Ok(first)
    }

    fn expr(&mut self) -> Result<Surf, LangError> {
        let pos = self.pos();
        if self.is_kw("fn") {
            self.bump();
            let (x, t) = self.param()?;
            self.expect_sym("->")?;
            let body = self.seq()?;
            return Ok(Surf::new(Node::Lam(x, t, Box::new(body)), pos));
        }
        if self.is_kw("let") {
            return self.let_expr();
        }
        if self.is_kw("if") {
            self.bump();
            let cond = self.cond()?;
            self.expect_kw("then")?;
            let m = self.seq()?;
            self.expect_kw("else")?;
            let n = self.seq()?;
            return Ok(Surf::new(Node::IfLeq(Box::new(cond), Box::new(m), Box::new(n)), pos));
        }
        self.arith()
    }

    fn let_expr(&mut self) -> Result<Surf, LangError> {
        let pos = self.pos();
        self.expect_kw("let")?;
        let rec = self.is_kw("rec");
        if rec {
            self.bump();
        }
        let name = self.ident()?;
        let mut params = Vec::new();
        while self.is_sym("(") {
            params.push(self.param()?);
        }
        let annot = if self.is_sym(":") {
            self.bump();
            Some(self.ty()?)
        } else {
            None
        };
        self.expect_sym("=")?;
        let rhs = self.seq()?;
        self.expect_kw("in")?;
        let body = self.seq()?;

        let lambda = params.iter().rev().fold(rhs, |acc, (x, t)| {
            Surf::new(Node::Lam(x.clone(), t.clone(), Box::new(acc)), pos)
        });
        if !rec {
            let annot = match annot {
                Some(ret) => Some(params.iter().rev().fold(ret, |acc, (_, t)| Type::arrow(t.clone(), acc))),
                None => None,
            };
            return Ok(Surf::new(
                Node::Let {
                    name,
                    annot,
                    value: Box::new(lambda),
                    body: Box::new(body),
                },
                pos,
            ));
        }
        if params.is_empty() {
            return Err(LangError::Syntax {
                line: pos.line,
                col: pos.col,
                msg: "`let rec` needs at least one parameter".into(),
            });
        }
        let Some(ret) = annot else {
            return Err(LangError::Syntax {
                line: pos.line,
                col: pos.col,
                msg: "`let rec` needs a result type annotation".into(),
            });
        };
        let fty = params.iter().rev().fold(ret, |acc, (_, t)| Type::arrow(t.clone(), acc));
        let functional = Surf::new(Node::Lam(name.clone(), fty.clone(), Box::new(lambda)), pos);
        Ok(Surf::new(
            Node::Let {
                name,
                annot: Some(fty),
                value: Box::new(Surf::new(Node::Fix(Box::new(functional)), pos)),
                body: Box::new(body),
            },
            pos,
        ))
    }

    fn cond(&mut self) -> Result<Surf, LangError> {
        let pos = self.pos();
        if self.is_kw("flip") {
            self.bump();
            self.expect_sym("(")?;
            self.expect_sym(")")?;
            let sub = self.registry.builtin("sub");
            let sample = Surf::new(Node::Sample, pos);
            return Ok(Surf::new(Node::Prim(sub, vec![sample, Surf::new(Node::Num(0.5), pos)]), pos));
        }
        let lhs = self.arith()?;
        self.expect_sym("<=")?;
        let rhs = self.arith()?;
        if matches!(rhs.node, Node::Num(z) if z == 0.0) {
            return Ok(lhs);
        }
        let sub = self.registry.builtin("sub");
        Ok(Surf::new(Node::Prim(sub, vec![lhs, rhs]), pos))
    }

    fn arith(&mut self) -> Result<Surf, LangError> {
        let mut lhs = self.mul()?;
        loop {
            let name = if self.is_sym("+") {
                "add"
            } else if self.is_sym("-") {
                "sub"
            } else {
                return Ok(lhs);
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.mul()?;
            lhs = Surf::new(Node::Prim(self.registry.builtin(name), vec![lhs, rhs]), pos);
        }
    }

    fn mul(&mut self) -> Result<Surf, LangError> {
        let mut lhs = self.unary()?;
        loop {
            let name = if self.is_sym("*") {
                "mul"
            } else if self.is_sym("/") {
                "div"
            } else {
                return Ok(lhs);
            };
            let pos = self.pos();
            self.bump();
            let rhs = self.unary()?;
            lhs = Surf::new(Node::Prim(self.registry.builtin(name), vec![lhs, rhs]), pos);
        }
    }

    fn unary(&mut self) -> Result<Surf, LangError> {
        if self.is_sym("-") {
            let pos = self.pos();
            self.bump();
            if let Tok::Num(v) = *self.peek() {
                self.bump();
                return self.app_from(Surf::new(Node::Num(-v), pos));
            }
            let inner = self.unary()?;
            return Ok(Surf::new(Node::Prim(self.registry.builtin("neg"), vec![inner]), pos));
        }
        let head = self.atom()?;
        self.app_from(head)
    }

    fn app_from(&mut self, mut head: Surf) -> Result<Surf, LangError> {
        while self.starts_atom() {
            let pos = self.pos();
            let arg = self.atom()?;
            head = Surf::new(Node::App(Box::new(head), Box::new(arg)), pos);
        }
        Ok(head)
    }

    fn starts_atom(&self) -> bool {
        match self.peek() {
            Tok::Ident(_) | Tok::Num(_) => true,
            Tok::Kw(k) => matches!(*k, "sample" | "score" | "fix"),
            Tok::Sym(s) => *s == "(",
            Tok::Eof => false,
        }
    }

    fn atom(&mut self) -> Result<Surf, LangError> {
        let pos = self.pos();
        match self.peek().clone() {
            Tok::Num(v) => {
                self.bump();
                Ok(Surf::new(Node::Num(v), pos))
            }
            Tok::Kw("sample") => {
                self.bump();
                Ok(Surf::new(Node::Sample, pos))
            }
            Tok::Kw("score") => {
                self.bump();
                self.expect_sym("(")?;
                let inner = self.seq()?;
                self.expect_sym(")")?;
                Ok(Surf::new(Node::Score(Box::new(inner)), pos))
            }
            Tok::Kw("fix") => {
                self.bump();
                let inner = self.atom()?;
                Ok(Surf::new(Node::Fix(Box::new(inner)), pos))
            }
            Tok::Sym("(") => {
                self.bump();
                let inner = self.seq()?;
                self.expect_sym(")")?;
                Ok(inner)
            }
            Tok::Ident(name) => {
                self.bump();
                if !self.is_sym("(") {
                    return Ok(Surf::new(Node::Var(name.into()), pos));
                }
                let is_call = self.registry.get(&name, 1).is_some()
                    || name.starts_with("proj_")
                    || self.call_has_comma();
                if !is_call {
                    return Ok(Surf::new(Node::Var(name.into()), pos));
                }
                self.bump();
                let mut args = vec![self.seq()?];
                while self.is_sym(",") {
                    self.bump();
                    args.push(self.seq()?);
                }
                self.expect_sym(")")?;
                let prim = self.registry.get(&name, args.len()).ok_or(LangError::UnknownPrimitive {
                    name: name.clone(),
                    line: pos.line,
                    col: pos.col,
                })?;
                if prim.arity != args.len() {
                    return Err(LangError::Arity {
                        name,
                        expected: prim.arity,
                        got: args.len(),
                        line: pos.line,
                        col: pos.col,
                    });
                }
                Ok(Surf::new(Node::Prim(prim, args), pos))
            }
            other => self.error(format!("expected a term, found {}", describe(&other))),
        }
    }

    /// Looks ahead from an opening parenthesis for a top-level comma.
    fn call_has_comma(&self) -> bool {
        let mut depth = 0usize;
        let mut k = 0;
        loop {
            match self.peek_at(k) {
                Tok::Sym("(") => depth += 1,
                Tok::Sym(")") => {
                    depth -= 1;
                    if depth == 0 {
                        return false;
                    }
                }
                Tok::Sym(",") if depth == 1 => return true,
                Tok::Eof => return false,
                _ => {}
            }
            k += 1;
        }
    }
}

fn describe(t: &Tok) -> String {
    match t {
        Tok::Ident(x) => format!("identifier `{x}`"),
        Tok::Num(v) => format!("number `{v}`"),
        Tok::Kw(k) => format!("keyword `{k}`"),
        Tok::Sym(s) => format!("`{s}`"),
        Tok::Eof => "end of input".into(),
    }
}

struct Elaborator {
    ctx: Context,
    inputs: Vec<Name>,
}

impl Elaborator {
    fn type_err<T>(err: TypeError, pos: Pos) -> Result<T, LangError> {
        Err(LangError::Type {
            err,
            line: pos.line,
            col: pos.col,
        })
    }

    fn real(&mut self, s: &Surf, what: &'static str) -> Result<Arc<Term>, LangError> {
        let (t, ty) = self.elab(s)?;
        if ty != Type::Real {
            return Self::type_err(TypeError::NotReal { what, found: ty }, s.pos);
        }
        Ok(t)
    }

    fn elab(&mut self, s: &Surf) -> Result<(Arc<Term>, Type), LangError> {
        Ok(match &s.node {
            Node::Num(v) => (Term::constant(*v), Type::Real),
            Node::Sample => (Arc::new(Term::Sample), Type::Real),
            Node::Var(x) => match self.ctx.lookup(x) {
                Some(t) => (Arc::new(Term::Var(x.clone())), t.clone()),
                None => {
                    if !self.inputs.contains(x) {
                        self.inputs.push(x.clone());
                    }
                    (Arc::new(Term::Var(x.clone())), Type::Real)
                }
            },
            Node::Score(m) => (Arc::new(Term::Score(self.real(m, "score argument")?)), Type::Real),
            Node::Prim(p, args) => {
                let args = args
                    .iter()
                    .map(|a| self.real(a, "primitive argument"))
                    .collect::<Result<Vec<_>, _>>()?;
                (Arc::new(Term::Prim(p.clone(), args)), Type::Real)
            }
            Node::Lam(x, ty, body) => {
                self.ctx.push(x.clone(), ty.clone());
                let r = self.elab(body);
                self.ctx.pop();
                let (b, bty) = r?;
                (Arc::new(Term::Lam(x.clone(), ty.clone(), b)), Type::arrow(ty.clone(), bty))
            }
            Node::App(f, a) => {
                let (ft, fty) = self.elab(f)?;
                let (at, aty) = self.elab(a)?;
                match fty {
                    Type::Arrow(param, result) if *param == aty => {
                        (Arc::new(Term::App(ft, at)), *result)
                    }
                    Type::Arrow(param, _) => {
                        return Self::type_err(
                            TypeError::ArgMismatch {
                                expected: *param,
                                found: aty,
                            },
                            a.pos,
                        )
                    }
                    other => return Self::type_err(TypeError::NotAFunction(other), f.pos),
                }
            }
            Node::Fix(m) => {
                let (t, ty) = self.elab(m)?;
                match ty {
                    Type::Arrow(from, to) if from == to && matches!(*from, Type::Arrow(..)) => {
                        (Arc::new(Term::Fix(t)), *from)
                    }
                    other => return Self::type_err(TypeError::BadFix(other), s.pos),
                }
            }
            Node::IfLeq(l, m, n) => {
                let l = self.real(l, "conditional scrutinee")?;
                let (mt, then_ty) = self.elab(m)?;
                let (nt, else_ty) = self.elab(n)?;
                if then_ty != else_ty {
                    return Self::type_err(TypeError::BranchMismatch { then_ty, else_ty }, s.pos);
                }
                (Arc::new(Term::IfLeq(l, mt, nt)), then_ty)
            }
            Node::Let {
                name,
                annot,
                value,
                body,
            } => {
                let (v, vty) = self.elab(value)?;
                if let Some(expected) = annot {
                    if *expected != vty {
                        return Self::type_err(
                            TypeError::ArgMismatch {
                                expected: expected.clone(),
                                found: vty,
                            },
                            value.pos,
                        );
                    }
                }
                self.ctx.push(name.clone(), vty.clone());
                let r = self.elab(body);
                self.ctx.pop();
                let (b, bty) = r?;
                let lam = Arc::new(Term::Lam(name.clone(), vty, b));
                (Arc::new(Term::App(lam, v)), bty)
            }
            Node::Seq(m, n) => {
                let m = self.real(m, "left side of `;`")?;
                let name: Name = "_".into();
                self.ctx.push(name.clone(), Type::Real);
                let r = self.elab(n);
                self.ctx.pop();
                let (b, bty) = r?;
                let lam = Arc::new(Term::Lam(name, Type::Real, b));
                (Arc::new(Term::App(lam, m)), bty)
            }
        })
    }
}

pub fn parse(source: &str) -> Result<TypedProgram, LangError> {
    parse_with(source, &builtin_registry())
}

pub fn parse_with(source: &str, registry: &Registry) -> Result<TypedProgram, LangError> {
    let toks = lex(source)?;
    let mut p = Parser {
        toks,
        at: 0,
        registry,
    };
    let surf = p.seq()?;
    if !matches!(p.peek(), Tok::Eof) {
        return p.error(format!("unexpected {}", describe(p.peek())));
    }
    let mut e = Elaborator {
        ctx: Context::new(),
        inputs: Vec::new(),
    };
    let (term, result_type) = e.elab(&surf)?;
    Ok(TypedProgram {
        term,
        free_vars: e.inputs,
        result_type,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn score_of_sample() {
        let p = parse("score(sample)").unwrap();
        assert_eq!(*p.term, Term::Score(Arc::new(Term::Sample)));
        assert_eq!(p.result_type, Type::Real);
        assert!(p.free_vars.is_empty());
    }

    #[test]
    fn let_is_application() {
        let p = parse("let x = sample in x").unwrap();
        let expected = Term::app(Term::lam("x", Type::Real, Term::var("x")), Arc::new(Term::Sample));
        assert_eq!(p.term, expected);
    }

    #[test]
    fn real_is_not_a_function() {
        assert!(matches!(
            parse("sample sample"),
            Err(LangError::Type {
                err: TypeError::NotAFunction(Type::Real),
                ..
            })
        ));
    }

    #[test]
    fn lambda_annotation_types() {
        let p = parse("fn (y : R) -> y").unwrap();
        assert_eq!(p.result_type, Type::arrow(Type::Real, Type::Real));
        let p = parse("fix (fn (f : R -> R) -> fn (x : R) -> f x)").unwrap();
        assert_eq!(p.result_type, Type::arrow(Type::Real, Type::Real));
    }

    #[test]
    fn comparison_sugar() {
        let p = parse("if sample <= 0.5 then 1 else 2").unwrap();
        match &*p.term {
            Term::IfLeq(l, _, _) => match &**l {
                Term::Prim(f, args) => {
                    assert_eq!(f.name(), "sub");
                    assert_eq!(*args[1], Term::Const(0.5));
                }
                other => panic!("{other:?}"),
            },
            other => panic!("{other:?}"),
        }
        let p = parse("if sample <= 0 then 1 else 2").unwrap();
        assert!(matches!(&*p.term, Term::IfLeq(l, _, _) if **l == Term::Sample));
        let flip = parse("if flip() then 1 else 2").unwrap();
        let half = parse("if sample <= 0.5 then 1 else 2").unwrap();
        assert_eq!(flip.term, half.term);
    }

    #[test]
    fn let_rec_desugars_to_fix() {
        let p = parse("let rec f (x : R) : R = f x in f 1").unwrap();
        let Term::App(lam, fix) = &*p.term else { panic!() };
        assert!(matches!(&**lam, Term::Lam(n, _, _) if &**n == "f"));
        assert!(matches!(&**fix, Term::Fix(_)));
    }

    #[test]
    fn free_identifiers_are_inputs() {
        let p = parse("let y = b in a * y + b").unwrap();
        let names: Vec<&str> = p.free_vars.iter().map(|n| &**n).collect();
        assert_eq!(names, vec!["b", "a"]);
    }

    #[test]
    fn errors_carry_positions() {
        match parse("let x = in x") {
            Err(LangError::Syntax { line: 1, col: 9, .. }) => {}
            other => panic!("{other:?}"),
        }
        match parse("1 +\n  foo(1, 2)") {
            Err(LangError::UnknownPrimitive { name, line: 2, col: 3 }) => assert_eq!(name, "foo"),
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse("exp(1, 2)"), Err(LangError::Arity { expected: 1, got: 2, .. })));
        assert!(matches!(parse("(* open"), Err(LangError::Syntax { .. })));
    }

    #[test]
    fn negative_literals_and_precedence() {
        let p = parse("-1").unwrap();
        assert_eq!(*p.term, Term::Const(-1.0));
        let p = parse("1 + 2 * 3").unwrap();
        let Term::Prim(f, args) = &*p.term else { panic!() };
        assert_eq!(f.name(), "add");
        assert!(matches!(&*args[1], Term::Prim(g, _) if g.name() == "mul"));
    }

    #[test]
    fn sequencing() {
        let p = parse("let s = sample in (score(s); s)").unwrap();
        assert_eq!(p.result_type, Type::Real);
        assert!(parse("(fn (y : R) -> y); 1").is_err());
    }

    #[test]
    fn comments_nest() {
        let p = parse("(* a (* b *) c *) 5").unwrap();
        assert_eq!(*p.term, Term::Const(5.0));
    }
}
