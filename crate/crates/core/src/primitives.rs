//! Primitive functions: partial maps `R^l ⇀ R` with explicit domains.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::Serialize;
use thiserror::Error;

use crate::rng;
use crate::scalar::{Dual, Scalar};

/// Default margin used when probing that a gradient query lies in the
/// interior of a primitive's domain.
pub const DEFAULT_INTERIOR_MARGIN: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrimError {
    #[error("{name}: arguments {args:?} outside the domain")]
    Domain { name: String, args: Vec<f64> },
    #[error("{name}: arguments {args:?} within {margin} of the domain boundary")]
    Boundary {
        name: String,
        args: Vec<f64>,
        margin: f64,
    },
    #[error("{name}: expected {expected} arguments, got {got}")]
    Arity {
        name: String,
        expected: usize,
        got: usize,
    },
}

/// Admissibility metadata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum PrimClass {
    /// Analytic on an open domain.
    Analytic,
    /// Open domain; preimages of intervals are finite unions of rectangles.
    RectDomain,
    /// No admissibility claim is made.
    Unverified,
}

/// Axis-aligned box; `None` bounds are unbounded.
pub type Rect = Vec<(Option<f64>, Option<f64>)>;

#[derive(Debug, Clone)]
pub enum PrimKind {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Exp,
    Log,
    Sqrt,
    Abs,
    /// `(mean, sd, x)`
    PdfNorm,
    /// `(a, b, x)`
    PdfUniform,
    Constant(f64),
    /// Zero-based coordinate.
    Projection(usize),
    Compose(Prim, Vec<Prim>),
}

#[derive(Debug)]
pub struct PrimitiveFn {
    pub name: String,
    pub arity: usize,
    pub kind: PrimKind,
    pub class: PrimClass,
    /// Box `(lo, hi)^arity` used by the admissibility probe.
    pub sampling_box: (f64, f64),
    /// Rectangle description of the domain, where one is known.
    pub domain_rects: Option<Vec<Rect>>,
}

/// Shared handle to a primitive. Two handles are equal when their names and
/// arities agree.
#[derive(Clone)]
pub struct Prim(Arc<PrimitiveFn>);

impl PartialEq for Prim {
    fn eq(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.0, &other.0)
            || (self.0.name == other.0.name && self.0.arity == other.0.arity)
    }
}

impl fmt::Debug for Prim {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.0.name, self.0.arity)
    }
}

impl std::ops::Deref for Prim {
    type Target = PrimitiveFn;
    fn deref(&self) -> &PrimitiveFn {
        &self.0
    }
}

fn gaussian_pdf<S: Scalar>(mean: S, sd: S, x: S) -> S {
    let z = (x - mean) / sd;
    let half = S::from_f64(0.5);
    (-(half * z * z)).exp() / (sd * S::from_f64((2.0 * PI).sqrt()))
}

impl Prim {
    pub fn new(
        name: impl Into<String>,
        arity: usize,
        kind: PrimKind,
        class: PrimClass,
    ) -> Prim {
        Prim(Arc::new(PrimitiveFn {
            name: name.into(),
            arity,
            kind,
            class,
            sampling_box: (-10.0, 10.0),
            domain_rects: None,
        }))
    }

    fn with_rects(self, rects: Vec<Rect>) -> Prim {
        let inner = Arc::try_unwrap(self.0).expect("fresh primitive");
        Prim(Arc::new(PrimitiveFn {
            domain_rects: Some(rects),
            ..inner
        }))
    }

    /// The constant function `c` of the given arity.
    pub fn constant(c: f64, arity: usize) -> Prim {
        Prim::new(
            format!("const_{c:?}"),
            arity,
            PrimKind::Constant(c),
            PrimClass::Analytic,
        )
    }

    /// Projection onto coordinate `index` (one-based) of `arity` arguments.
    pub fn projection(index: usize, arity: usize) -> Prim {
        assert!(index >= 1 && index <= arity, "projection index out of range");
        Prim::new(
            format!("proj_{index}"),
            arity,
            PrimKind::Projection(index - 1),
            PrimClass::Analytic,
        )
    }

    pub fn name(&self) -> &str {
        &self.0.name
    }

    fn check_arity(&self, got: usize) -> Result<(), PrimError> {
        if got == self.arity {
            Ok(())
        } else {
            Err(PrimError::Arity {
                name: self.name.clone(),
                expected: self.arity,
                got,
            })
        }
    }

    fn domain_error<S: Scalar>(&self, args: &[S]) -> PrimError {
        PrimError::Domain {
            name: self.name.clone(),
            args: args.iter().map(Scalar::re).collect(),
        }
    }

    /// Evaluates the primitive at any scalar type. Domain membership is
    /// decided on real parts.
    pub fn eval<S: Scalar>(&self, args: &[S]) -> Result<S, PrimError> {
        self.check_arity(args.len())?;
        let re = |i: usize| args[i].re();
        let out = match &self.kind {
            PrimKind::Add => args[0] + args[1],
            PrimKind::Sub => args[0] - args[1],
            PrimKind::Mul => args[0] * args[1],
            PrimKind::Neg => -args[0],
            PrimKind::Div => {
                if re(1) == 0.0 {
                    return Err(self.domain_error(args));
                }
                args[0] / args[1]
            }
            PrimKind::Exp => args[0].exp(),
            PrimKind::Log => {
                if !(re(0) > 0.0) {
                    return Err(self.domain_error(args));
                }
                args[0].ln()
            }
            PrimKind::Sqrt => {
                if !(re(0) > 0.0) {
                    return Err(self.domain_error(args));
                }
                args[0].sqrt()
            }
            PrimKind::Abs => args[0].abs(),
            PrimKind::PdfNorm => {
                if !(re(1) > 0.0) {
                    return Err(self.domain_error(args));
                }
                gaussian_pdf(args[0], args[1], args[2])
            }
            PrimKind::PdfUniform => {
                let (a, b, x) = (re(0), re(1), re(2));
                if !(a < b) || x == a || x == b {
                    return Err(self.domain_error(args));
                }
                if a < x && x < b {
                    S::one() / (args[1] - args[0])
                } else {
                    S::zero()
                }
            }
            PrimKind::Constant(c) => S::from_f64(*c),
            PrimKind::Projection(i) => args[*i],
            PrimKind::Compose(f, gs) => {
                let inner = gs
                    .iter()
                    .map(|g| g.eval(args))
                    .collect::<Result<Vec<S>, _>>()?;
                f.eval(&inner)?
            }
        };
        if out.re().is_finite() {
            Ok(out)
        } else {
            Err(self.domain_error(args))
        }
    }

    pub fn in_domain(&self, args: &[f64]) -> bool {
        self.eval(args).is_ok()
    }

    /// True when every coordinate can move by `±margin` without leaving the
    /// domain.
    pub fn in_interior(&self, args: &[f64], margin: f64) -> bool {
        if !self.in_domain(args) {
            return false;
        }
        let mut probe = args.to_vec();
        for i in 0..args.len() {
            for delta in [margin, -margin] {
                probe[i] = args[i] + delta;
                if !self.in_domain(&probe) {
                    return false;
                }
            }
            probe[i] = args[i];
        }
        true
    }

    /// Partial derivatives at an interior point, by forward-mode duals.
    pub fn grad(&self, args: &[f64], margin: f64) -> Result<Vec<f64>, PrimError> {
        self.check_arity(args.len())?;
        if !self.in_domain(args) {
            return Err(self.domain_error(args));
        }
        if !self.in_interior(args, margin) {
            return Err(PrimError::Boundary {
                name: self.name.clone(),
                args: args.to_vec(),
                margin,
            });
        }
        (0..args.len())
            .map(|k| {
                let duals: Vec<Dual<f64>> = args
                    .iter()
                    .enumerate()
                    .map(|(i, &a)| if i == k { Dual::variable(a) } else { Dual::constant(a) })
                    .collect();
                self.eval(&duals).map(|d| d.eps)
            })
            .collect()
    }
}

/// `f ∘ ⟨g_1, …, g_l⟩`.
pub fn compose_prims(f: &Prim, gs: &[Prim]) -> Result<Prim, PrimError> {
    f.check_arity(gs.len())?;
    let arity = gs.first().map(|g| g.arity).unwrap_or(0);
    for g in gs {
        g.check_arity(arity)?;
    }
    let class = if std::iter::once(f).chain(gs).any(|p| p.class == PrimClass::Unverified) {
        PrimClass::Unverified
    } else if std::iter::once(f).chain(gs).all(|p| p.class == PrimClass::Analytic) {
        PrimClass::Analytic
    } else {
        PrimClass::RectDomain
    };
    let name = format!(
        "{}<{}>",
        f.name,
        gs.iter().map(|g| g.name.as_str()).collect::<Vec<_>>().join(",")
    );
    Ok(Prim::new(
        name,
        arity,
        PrimKind::Compose(f.clone(), gs.to_vec()),
        class,
    ))
}

/// Name → primitive table.
#[derive(Debug, Clone)]
pub struct Registry {
    prims: HashMap<String, Prim>,
}

impl Registry {
    pub fn get(&self, name: &str, n_args: usize) -> Option<Prim> {
        if let Some(p) = self.prims.get(name) {
            return Some(p.clone());
        }
        let index: usize = name.strip_prefix("proj_")?.parse().ok()?;
        (index >= 1 && index <= n_args).then(|| Prim::projection(index, n_args))
    }

    /// Looks up a fixed-arity builtin by name.
    pub fn builtin(&self, name: &str) -> Prim {
        self.prims
            .get(name)
            .unwrap_or_else(|| panic!("no builtin primitive `{name}`"))
            .clone()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.prims.keys().map(String::as_str)
    }

    pub fn insert(&mut self, prim: Prim) {
        self.prims.insert(prim.name.clone(), prim);
    }

    pub fn iter(&self) -> impl Iterator<Item = &Prim> {
        self.prims.values()
    }
}

pub fn builtin_registry() -> Registry {
    use PrimClass::*;
    use PrimKind::*;
    let half_plane = |lo: Option<f64>, hi: Option<f64>| vec![(None, None), (lo, hi)];
    let mut prims = vec![
        Prim::new("add", 2, Add, Analytic),
        Prim::new("sub", 2, Sub, Analytic),
        Prim::new("mul", 2, Mul, Analytic),
        Prim::new("neg", 1, Neg, Analytic),
        Prim::new("div", 2, Div, RectDomain)
            .with_rects(vec![half_plane(None, Some(0.0)), half_plane(Some(0.0), None)]),
        Prim::new("exp", 1, Exp, Analytic),
        Prim::new("log", 1, Log, Analytic).with_rects(vec![vec![(Some(0.0), None)]]),
        Prim::new("sqrt", 1, Sqrt, Analytic).with_rects(vec![vec![(Some(0.0), None)]]),
        Prim::new("abs", 1, Abs, Unverified),
        Prim::new("pdfnorm", 3, PdfNorm, Analytic),
        Prim::new("pdfuniform", 3, PdfUniform, RectDomain),
    ];
    let mut registry = Registry {
        prims: HashMap::new(),
    };
    for p in prims.drain(..) {
        registry.insert(p);
    }
    registry
}

pub fn eval_prim(p: &Prim, args: &[f64]) -> Result<f64, PrimError> {
    p.eval(args)
}

pub fn grad_prim(p: &Prim, args: &[f64], margin: f64) -> Result<Vec<f64>, PrimError> {
    p.grad(args, margin)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbeReport {
    pub name: String,
    pub class: PrimClass,
    /// `(δ, fraction of box points with |f| ≤ δ)`, in the order given.
    pub fractions: Vec<(f64, f64)>,
    /// Least-squares slope of log-fraction against log-δ.
    pub slope: Option<f64>,
    pub passes: bool,
    pub heuristic_only: bool,
    pub note: Option<String>,
}

/// Monte Carlo look at the zero set of `p`: the fraction of box points with
/// `|f| ≤ δ` should fall off roughly linearly in `δ` when the zero set is
/// Lebesgue-null.
pub fn admissibility_probe(p: &Prim, n_points: usize, deltas: &[f64], seed: u64) -> ProbeReport {
    let (lo, hi) = p.sampling_box;
    let mut rng = rng::stream(seed, "primitives", "probe", 0);
    let mut hits = vec![0usize; deltas.len()];
    let mut point = vec![0.0; p.arity];
    for _ in 0..n_points {
        for x in point.iter_mut() {
            *x = lo + (hi - lo) * rng::open_unit(&mut rng);
        }
        if let Ok(v) = p.eval(&point) {
            for (h, &d) in hits.iter_mut().zip(deltas) {
                if v.abs() <= d {
                    *h += 1;
                }
            }
        }
    }
    let fractions: Vec<(f64, f64)> = deltas
        .iter()
        .zip(&hits)
        .map(|(&d, &h)| (d, h as f64 / n_points.max(1) as f64))
        .collect();

    let logs: Vec<(f64, f64)> = fractions
        .iter()
        .filter(|(_, f)| *f > 0.0)
        .map(|(d, f)| (d.ln(), f.ln()))
        .collect();
    let slope = (logs.len() >= 2).then(|| {
        let n = logs.len() as f64;
        let mx = logs.iter().map(|l| l.0).sum::<f64>() / n;
        let my = logs.iter().map(|l| l.1).sum::<f64>() / n;
        let sxy: f64 = logs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = logs.iter().map(|(x, _)| (x - mx).powi(2)).sum();
        sxy / sxx
    });

    let identically_zero = matches!(p.kind, PrimKind::Constant(c) if c == 0.0);
    let (passes, note) = if identically_zero {
        (false, Some("constant zero function: every point is a zero".to_string()))
    } else if logs.is_empty() {
        (true, Some("no sampled point near the zero set".to_string()))
    } else {
        let mut sorted = fractions.clone();
        sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
        let monotone = sorted.windows(2).all(|w| w[0].1 <= w[1].1);
        let ok = monotone && slope.map_or(true, |s| (0.5..=1.5).contains(&s));
        (ok, None)
    };
    ProbeReport {
        name: p.name.clone(),
        class: p.class,
        fractions,
        slope,
        passes,
        heuristic_only: true,
        note: if p.class == PrimClass::Unverified {
            Some(note.map_or("heuristic only".to_string(), |n| format!("heuristic only; {n}")))
        } else {
            note
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn central_diff(p: &Prim, args: &[f64], k: usize, h: f64) -> f64 {
        let mut plus = args.to_vec();
        let mut minus = args.to_vec();
        plus[k] += h;
        minus[k] -= h;
        (p.eval(&plus).unwrap() - p.eval(&minus).unwrap()) / (2.0 * h)
    }

    #[test]
    fn gaussian_pdf_matches_reduction_weight() {
        let reg = builtin_registry();
        let v = eval_prim(&reg.builtin("pdfnorm"), &[1.1, 0.1, 0.9]).unwrap();
        assert!((v - 0.5399).abs() < 1e-4, "{v}");
    }

    #[test]
    fn projection_and_constants() {
        let reg = builtin_registry();
        let p = reg.get("proj_2", 2).unwrap();
        assert_eq!(eval_prim(&p, &[7.0, 3.0]).unwrap(), 3.0);
        assert!(reg.get("proj_3", 2).is_none());
        assert_eq!(Prim::constant(2.5, 3).eval(&[1.0, 2.0, 3.0]).unwrap(), 2.5);
    }

    #[test]
    fn domain_errors() {
        let reg = builtin_registry();
        assert!(matches!(
            eval_prim(&reg.builtin("log"), &[-1.0]),
            Err(PrimError::Domain { .. })
        ));
        assert!(eval_prim(&reg.builtin("div"), &[1.0, 0.0]).is_err());
        assert!(eval_prim(&reg.builtin("sqrt"), &[0.0]).is_err());
        assert!(eval_prim(&reg.builtin("pdfnorm"), &[0.0, 0.0, 1.0]).is_err());
        assert!(eval_prim(&reg.builtin("pdfuniform"), &[1.0, 0.0, 0.5]).is_err());
        assert!(matches!(
            eval_prim(&reg.builtin("add"), &[1.0]),
            Err(PrimError::Arity { expected: 2, got: 1, .. })
        ));
    }

    #[test]
    fn simple_values() {
        let reg = builtin_registry();
        assert_eq!(eval_prim(&reg.builtin("exp"), &[0.0]).unwrap(), 1.0);
        assert_eq!(eval_prim(&reg.builtin("mul"), &[0.2, 3.0]).unwrap(), 0.2 * 3.0);
        assert!((eval_prim(&reg.builtin("mul"), &[0.2, 3.0]).unwrap() - 0.6).abs() < 1e-15);
        let u = reg.builtin("pdfuniform");
        assert_eq!(eval_prim(&u, &[0.0, 2.0, 1.0]).unwrap(), 0.5);
        assert_eq!(eval_prim(&u, &[0.0, 2.0, 3.0]).unwrap(), 0.0);
    }

    #[test]
    fn gradients() {
        let reg = builtin_registry();
        let g = grad_prim(&reg.builtin("mul"), &[0.2, 3.0], DEFAULT_INTERIOR_MARGIN).unwrap();
        assert_eq!(g, vec![3.0, 0.2]);
        // FD oracle with h = 1e-6 gives 10.7981...
        let pdf = reg.builtin("pdfnorm");
        let fd = central_diff(&pdf, &[1.1, 0.1, 0.9], 2, 1e-6);
        let g = grad_prim(&pdf, &[1.1, 0.1, 0.9], DEFAULT_INTERIOR_MARGIN).unwrap();
        assert!((g[2] - fd).abs() / fd.abs() < 1e-6);
        assert!((g[2] - 10.80).abs() < 0.01, "{}", g[2]);
        assert!(matches!(
            grad_prim(&reg.builtin("log"), &[0.0], DEFAULT_INTERIOR_MARGIN),
            Err(PrimError::Domain { .. })
        ));
        assert!(matches!(
            grad_prim(&reg.builtin("log"), &[1e-10], DEFAULT_INTERIOR_MARGIN),
            Err(PrimError::Boundary { .. })
        ));
    }

    #[test]
    fn composition() {
        let reg = builtin_registry();
        let twice = compose_prims(
            &reg.builtin("add"),
            &[Prim::projection(1, 1), Prim::projection(1, 1)],
        )
        .unwrap();
        assert_eq!(twice.eval(&[3.0]).unwrap(), 6.0);

        let log_sub = compose_prims(&reg.builtin("log"), &[reg.builtin("sub")]).unwrap();
        assert!(log_sub.eval(&[1.0, 1.0]).is_err());
        assert_eq!(log_sub.arity, 2);

        let exp_neg = compose_prims(&reg.builtin("exp"), &[reg.builtin("neg")]).unwrap();
        let g = exp_neg.grad(&[2.0], DEFAULT_INTERIOR_MARGIN).unwrap();
        let fd = central_diff(&exp_neg, &[2.0], 0, 1e-6);
        assert!((g[0] - fd).abs() < 1e-8);
        assert!((g[0] + (-2.0_f64).exp()).abs() < 1e-15);

        assert!(compose_prims(&reg.builtin("add"), &[reg.builtin("neg")]).is_err());
        assert!(compose_prims(&reg.builtin("add"), &[reg.builtin("neg"), reg.builtin("sub")]).is_err());
    }

    #[test]
    fn probe_identity_matches_strip_area() {
        let id = Prim::projection(1, 1);
        let r = admissibility_probe(&id, 1_000_000, &[0.1, 0.01], 3);
        // exact fraction 2δ/20
        assert!((r.fractions[0].1 - 0.01).abs() < 0.001, "{:?}", r.fractions);
        assert!((r.fractions[1].1 - 0.001).abs() < 0.0003, "{:?}", r.fractions);
        assert!(r.passes);
    }

    #[test]
    fn probe_flags_zero_function() {
        let r = admissibility_probe(&Prim::constant(0.0, 1), 1000, &[0.1, 0.01], 3);
        assert!(!r.passes);
        assert!(r.fractions.iter().all(|f| f.1 == 1.0));
    }

    #[test]
    fn unverified_is_heuristic() {
        let reg = builtin_registry();
        let r = admissibility_probe(&reg.builtin("abs"), 10_000, &[0.1, 0.01], 1);
        assert!(r.note.unwrap().starts_with("heuristic only"));
    }
}
