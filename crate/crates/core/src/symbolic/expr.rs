use std::collections::BTreeMap;
use std::fmt;
use std::sync::Arc;

use serde_json::{json, Value as Json};

use crate::lang::{write_expr, Term};
use crate::primitives::{Prim, PrimError};
use crate::scalar::{Dual, Scalar};

/// Real-typed symbolic value: a tree of primitive applications over
/// constants, input variables `x_i` and sampling variables `α_j` (both
/// one-based). Denotes a partial function on ℝ^m × 𝕊_n.
#[derive(Clone, Debug, PartialEq)]
pub enum Expr {
    Const(f64),
    Input(usize),
    Sample(usize),
    Apply(Prim, Vec<Arc<Expr>>),
}

impl Expr {
    /// Reads a real-typed symbolic value term back as an expression.
    pub fn from_value(term: &Term) -> Option<Arc<Expr>> {
        match term {
            Term::Const(c) => Some(Arc::new(Expr::Const(*c))),
            Term::Input(i) => Some(Arc::new(Expr::Input(*i))),
            Term::SampleVar(j) => Some(Arc::new(Expr::Sample(*j))),
            Term::Delayed(e) => Some(e.clone()),
            _ => None,
        }
    }

    pub fn to_term(self: &Arc<Expr>) -> Arc<Term> {
        Arc::new(match &**self {
            Expr::Const(c) => Term::Const(*c),
            Expr::Input(i) => Term::Input(*i),
            Expr::Sample(j) => Term::SampleVar(*j),
            Expr::Apply(..) => Term::Delayed(self.clone()),
        })
    }

    pub fn is_const(&self) -> bool {
        matches!(self, Expr::Const(_))
    }

    /// Affine form, when the expression is built from `+`, `−`, negation and
    /// scaling by constants without rounding.
    pub fn affine(&self) -> Option<Affine> {
        match self {
            Expr::Const(c) => Some(Affine {
                constant: *c,
                coeffs: BTreeMap::new(),
            }),
            Expr::Input(i) => Some(Affine::var((true, *i))),
            Expr::Sample(j) => Some(Affine::var((false, *j))),
            Expr::Apply(p, args) => {
                let name = p.name();
                match (name, args.len()) {
                    ("add", 2) => args[0].affine()?.exact_sum(&args[1].affine()?, 1.0),
                    ("sub", 2) => args[0].affine()?.exact_sum(&args[1].affine()?, -1.0),
                    ("neg", 1) => Some(args[0].affine()?.scaled(-1.0)),
                    ("mul", 2) => {
                        let (a, b) = (args[0].affine()?, args[1].affine()?);
                        match (a.is_constant(), b.is_constant()) {
                            (true, _) => b.exact_scale(a.constant),
                            (_, true) => a.exact_scale(b.constant),
                            _ => None,
                        }
                    }
                    _ => None,
                }
            }
        }
    }

    /// Largest input index referenced (0 if none).
    pub fn max_input(&self) -> usize {
        match self {
            Expr::Input(i) => *i,
            Expr::Apply(_, args) => args.iter().map(|a| a.max_input()).max().unwrap_or(0),
            _ => 0,
        }
    }

    /// Largest sampling index referenced (0 if none).
    pub fn max_sample(&self) -> usize {
        match self {
            Expr::Sample(j) => *j,
            Expr::Apply(_, args) => args.iter().map(|a| a.max_sample()).max().unwrap_or(0),
            _ => 0,
        }
    }

    pub fn eval<S: Scalar>(&self, r: &[S], s: &[S]) -> Result<S, PrimError> {
        match self {
            Expr::Const(c) => Ok(S::from_f64(*c)),
            Expr::Input(i) => Ok(r[*i - 1]),
            Expr::Sample(j) => Ok(s[*j - 1]),
            Expr::Apply(p, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.eval(r, s))
                    .collect::<Result<Vec<S>, _>>()?;
                p.eval(&vals)
            }
        }
    }

    /// Evaluation at a point; `None` outside the domain or when the point
    /// has too few coordinates.
    pub fn eval_at(&self, r: &[f64], s: &[f64]) -> Option<f64> {
        if self.max_input() > r.len() || self.max_sample() > s.len() {
            return None;
        }
        self.eval(r, s).ok()
    }

    /// Checks that every primitive application along the tree is evaluated
    /// at least `margin` inside its domain.
    pub fn check_interior(&self, r: &[f64], s: &[f64], margin: f64) -> Result<f64, PrimError> {
        match self {
            Expr::Apply(p, args) => {
                let vals = args
                    .iter()
                    .map(|a| a.check_interior(r, s, margin))
                    .collect::<Result<Vec<f64>, _>>()?;
                let v = p.eval(&vals)?;
                if !p.in_interior(&vals, margin) {
                    return Err(PrimError::Boundary {
                        name: p.name().to_string(),
                        args: vals,
                        margin,
                    });
                }
                Ok(v)
            }
            other => other.eval(r, s),
        }
    }

    /// Gradient with respect to (r, s), one forward-mode pass per coordinate.
    pub fn grad(&self, r: &[f64], s: &[f64], margin: f64) -> Result<Vec<f64>, PrimError> {
        self.check_interior(r, s, margin)?;
        let lift = |xs: &[f64], hot: Option<usize>| -> Vec<Dual<f64>> {
            xs.iter()
                .enumerate()
                .map(|(k, &x)| if Some(k) == hot { Dual::variable(x) } else { Dual::constant(x) })
                .collect()
        };
        let mut out = Vec::with_capacity(r.len() + s.len());
        for k in 0..r.len() + s.len() {
            let (hr, hs) = if k < r.len() { (Some(k), None) } else { (None, Some(k - r.len())) };
            let d = self.eval(&lift(r, hr), &lift(s, hs))?;
            out.push(d.eps);
        }
        Ok(out)
    }

    /// Nested `{op, args}` tree with `"x_i"`/`"a_j"` leaves.
    pub fn to_json(&self) -> Json {
        match self {
            Expr::Const(c) => json!(c),
            Expr::Input(i) => json!(format!("x_{i}")),
            Expr::Sample(j) => json!(format!("a_{j}")),
            Expr::Apply(p, args) => json!({
                "op": p.name(),
                "args": args.iter().map(|a| a.to_json()).collect::<Vec<_>>(),
            }),
        }
    }
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        write_expr(&mut out, self);
        f.write_str(&out)
    }
}

/// `c + Σ k_v · v` over input and sampling variables, with exact float
/// coefficients; only built when no rounding occurs on the way.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub constant: f64,
    /// `(is_input, index) → coefficient`, zero coefficients dropped.
    pub coeffs: BTreeMap<(bool, usize), f64>,
}

impl Affine {
    fn var(key: (bool, usize)) -> Affine {
        Affine {
            constant: 0.0,
            coeffs: BTreeMap::from([(key, 1.0)]),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Scaling by −1 or a power of two is exact.
    pub fn scaled(&self, k: f64) -> Affine {
        Affine {
            constant: self.constant * k,
            coeffs: self.coeffs.iter().map(|(v, c)| (*v, c * k)).collect(),
        }
    }

    fn exact_scale(&self, k: f64) -> Option<Affine> {
        let exact = |x: f64| {
            let y = x * k;
            (y.is_finite() && x.mul_add(k, -y) == 0.0).then_some(y)
        };
        Some(Affine {
            constant: exact(self.constant)?,
            coeffs: self
                .coeffs
                .iter()
                .map(|(v, c)| Some((*v, exact(*c)?)))
                .filter(|e| e.is_none_or(|(_, c)| c != 0.0))
                .collect::<Option<_>>()?,
        })
    }

    fn exact_sum(&self, other: &Affine, sign: f64) -> Option<Affine> {
        let add = |x: f64, y: f64| {
            let (z, err) = two_sum(x, sign * y);
            (err == 0.0 && z.is_finite()).then_some(z)
        };
        let mut coeffs = self.coeffs.clone();
        for (v, c) in &other.coeffs {
            let z = add(*coeffs.get(v).unwrap_or(&0.0), *c)?;
            if z == 0.0 {
                coeffs.remove(v);
            } else {
                coeffs.insert(*v, z);
            }
        }
        Some(Affine {
            constant: add(self.constant, other.constant)?,
            coeffs,
        })
    }
}

fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

/// Product of factors, with the empty product 1.
pub fn eval_product(factors: &[Arc<Expr>], r: &[f64], s: &[f64]) -> Option<f64> {
    factors.iter().try_fold(1.0, |acc, e| Some(acc * e.eval_at(r, s)?))
}

/// Gradient of a product of factors by the product rule.
pub fn grad_product(
    factors: &[Arc<Expr>],
    r: &[f64],
    s: &[f64],
    margin: f64,
) -> Result<Vec<f64>, PrimError> {
    let dim = r.len() + s.len();
    let mut value = 1.0;
    let mut grad = vec![0.0; dim];
    for e in factors {
        let v = e.check_interior(r, s, margin)?;
        let g = e.grad(r, s, margin)?;
        for k in 0..dim {
            grad[k] = grad[k] * v + value * g[k];
        }
        value *= v;
    }
    Ok(grad)
}
