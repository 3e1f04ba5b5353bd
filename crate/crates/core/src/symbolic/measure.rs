//! Monte Carlo operations on regions: volume, boundary mass and interior
//! sampling. Inputs range over a bounded box, sampling variables over (0, 1).

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::rng::{chunks, open_unit, stream, StreamRng};

use super::region::{Constraint, Region, Rel};

/// Box `(lo, hi)^m` for the input variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InputBox {
    pub lo: f64,
    pub hi: f64,
}

impl Default for InputBox {
    fn default() -> Self {
        InputBox { lo: -10.0, hi: 10.0 }
    }
}

impl InputBox {
    pub fn volume(&self, m: usize) -> f64 {
        (self.hi - self.lo).powi(m as i32)
    }

    fn draw(&self, rng: &mut StreamRng) -> f64 {
        self.lo + (self.hi - self.lo) * open_unit(rng)
    }
}

/// Uniform point of box^m × (0,1)^n.
pub fn random_point(rng: &mut StreamRng, m: usize, n: usize, input: InputBox) -> (Vec<f64>, Vec<f64>) {
    let r = (0..m).map(|_| input.draw(rng)).collect();
    let s = (0..n).map(|_| open_unit(rng)).collect();
    (r, s)
}

#[derive(Debug, Clone, Serialize)]
pub struct MeasureEstimate {
    pub mu: f64,
    /// Half-width of the normal 95% interval.
    pub ci: f64,
    pub n_points: usize,
    pub hits: usize,
}

fn count_hits(
    n_points: usize,
    seed: u64,
    purpose: &str,
    m: usize,
    n: usize,
    input: InputBox,
    hit: impl Fn(&[f64], &[f64]) -> bool + Sync,
) -> usize {
    chunks(n_points)
        .into_par_iter()
        .map(|(worker, _, len)| {
            let mut rng = stream(seed, "measure", purpose, worker);
            (0..len)
                .filter(|_| {
                    let (r, s) = random_point(&mut rng, m, n, input);
                    hit(&r, &s)
                })
                .count()
        })
        .sum()
}

fn estimate(hits: usize, n_points: usize, volume: f64) -> MeasureEstimate {
    let p = if n_points == 0 { 0.0 } else { hits as f64 / n_points as f64 };
    let se = (p * (1.0 - p) / n_points.max(1) as f64).sqrt();
    MeasureEstimate {
        mu: p * volume,
        ci: 1.96 * se * volume,
        n_points,
        hits,
    }
}

/// μ̂(U) for U ⊆ box^m × 𝕊_n.
pub fn estimate_region_measure(reg: &Region, n_points: usize, seed: u64, input: InputBox) -> MeasureEstimate {
    let hits = count_hits(n_points, seed, "volume", reg.m, reg.n, input, |r, s| reg.contains(r, s));
    estimate(hits, n_points, input.volume(reg.m))
}

/// Axis neighbours at distance `eps`, skipping those outside the box.
fn neighbours<'a>(
    r: &'a [f64],
    s: &'a [f64],
    eps: f64,
    input: InputBox,
) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> + 'a {
    let m = r.len();
    (0..m + s.len()).flat_map(move |k| {
        [eps, -eps].into_iter().filter_map(move |d| {
            let (mut r2, mut s2) = (r.to_vec(), s.to_vec());
            if k < m {
                r2[k] += d;
                (r2[k] > input.lo && r2[k] < input.hi).then_some((r2, s2))
            } else {
                s2[k - m] += d;
                (s2[k - m] > 0.0 && s2[k - m] < 1.0).then_some((r2, s2))
            }
        })
    })
}

/// True when membership changes between the point and one of its axis
/// neighbours at distance `eps`.
pub fn near_boundary(reg: &Region, r: &[f64], s: &[f64], eps: f64, input: InputBox) -> bool {
    let inside = reg.contains(r, s);
    neighbours(r, s, eps, input).any(|(r2, s2)| reg.contains(&r2, &s2) != inside)
}

/// Estimated mass of the inner ε-layer of U: points of U with an axis
/// neighbour at distance ε outside U. Summed over the leaves of a branch map
/// this covers the ε-neighbourhood of every branch boundary. The same points
/// are used for every ε.
pub fn boundary_mass(reg: &Region, eps: &[f64], n_points: usize, seed: u64, input: InputBox) -> Vec<(f64, MeasureEstimate)> {
    eps.iter()
        .map(|&e| {
            let hits = count_hits(n_points, seed, "boundary", reg.m, reg.n, input, |r, s| {
                reg.contains(r, s) && neighbours(r, s, e, input).any(|(r2, s2)| !reg.contains(&r2, &s2))
            });
            (e, estimate(hits, n_points, input.volume(reg.m)))
        })
        .collect()
}

/// True when the point and all its axis neighbours at distance `delta` lie
/// in the region (and in the open cube), and every primitive on the way is
/// evaluated at least `delta` inside its domain.
pub fn is_interior(reg: &Region, r: &[f64], s: &[f64], delta: f64, input: InputBox) -> bool {
    let in_cube = |x: f64| x - delta > 0.0 && x + delta < 1.0;
    let in_box = |x: f64| x - delta > input.lo && x + delta < input.hi;
    reg.contains(r, s)
        && r.iter().all(|x| in_box(*x))
        && s.iter().all(|x| in_cube(*x))
        && neighbours(r, s, delta, input).all(|(r2, s2)| reg.contains(&r2, &s2))
        && reg.constraints.iter().all(|c| c.expr.check_interior(r, s, delta).is_ok())
}

/// Rejection sampling of an interior point.
pub fn sample_region_interior(
    reg: &Region,
    delta: f64,
    max_tries: usize,
    seed: u64,
    input: InputBox,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let mut rng = stream(seed, "measure", "interior", 0);
    draw_interior(reg, delta, max_tries, &mut rng, input)
}

pub fn draw_interior<R: Rng>(
    reg: &Region,
    delta: f64,
    max_tries: usize,
    rng: &mut R,
    input: InputBox,
) -> Option<(Vec<f64>, Vec<f64>)> {
    for _ in 0..max_tries {
        let r: Vec<f64> = (0..reg.m).map(|_| input.lo + (input.hi - input.lo) * open_unit(rng)).collect();
        let s: Vec<f64> = (0..reg.n).map(|_| open_unit(rng)).collect();
        if is_interior(reg, &r, &s, delta, input) {
            return Some((r, s));
        }
    }
    None
}

/// Up to `k` interior points, drawn sequentially from one stream.
pub fn sample_interior_points(
    reg: &Region,
    k: usize,
    delta: f64,
    max_tries: usize,
    seed: u64,
    input: InputBox,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = stream(seed, "measure", "interior-points", 0);
    let mut out = Vec::with_capacity(k);
    for _ in 0..max_tries {
        if out.len() == k {
            break;
        }
        let (r, s) = random_point(&mut rng, reg.m, reg.n, input);
        if is_interior(reg, &r, &s, delta, input) {
            out.push((r, s));
        }
    }
    out
}

/// Interior point drawn coordinate by coordinate in sampling order: `s_j` is
/// redrawn until every constraint whose last sampling variable is `α_j`
/// holds with margin `delta`, starting over when a stage cannot be met. The
/// point is not uniform on the region. `max_tries` bounds the total number of
/// coordinate draws.
pub fn guided_interior<R: Rng>(
    reg: &Region,
    delta: f64,
    max_tries: usize,
    rng: &mut R,
    input: InputBox,
) -> Option<(Vec<f64>, Vec<f64>)> {
    guided_interior_points(reg, 1, delta, max_tries, rng, input).pop()
}

/// Up to `k` points from [`guided_interior`], sharing one budget of
/// `max_tries` coordinate draws.
pub fn guided_interior_points<R: Rng>(
    reg: &Region,
    k: usize,
    delta: f64,
    max_tries: usize,
    rng: &mut R,
    input: InputBox,
) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut stages: Vec<Vec<&Constraint>> = vec![Vec::new(); reg.n + 1];
    for c in &reg.constraints {
        stages[c.expr.max_sample().min(reg.n)].push(c);
    }
    let mut g = Guide {
        reg,
        stages,
        delta,
        input,
        budget: max_tries,
    };
    let mut out = Vec::with_capacity(k);
    while g.budget > 0 && out.len() < k {
        g.budget -= 1;
        let r: Vec<f64> = (0..reg.m)
            .map(|_| input.lo + delta + (input.hi - input.lo - 2.0 * delta) * open_unit(rng))
            .collect();
        let mut s = Vec::with_capacity(reg.n);
        if g.stage_ok(0, &r, &s) && g.extend(&r, &mut s, rng) {
            out.push((r, s));
        }
    }
    out
}

/// Total amount by which the point misses the constraints, each asked to
/// hold with slack `slack`; undefined constraints count 1.
fn violation(reg: &Region, r: &[f64], s: &[f64], slack: f64) -> f64 {
    reg.constraints
        .iter()
        .map(|c| match c.expr.eval_at(r, s) {
            None => 1.0,
            Some(v) => match c.rel {
                Rel::Le0 => (v + slack).max(0.0),
                Rel::Gt0 | Rel::Ge0 => (slack - v).max(0.0),
                Rel::InDomain => 0.0,
            },
        })
        .sum()
}

/// Random search for an interior point: perturbations that do not increase
/// the total constraint violation are kept until the point is interior.
/// Finds thin regions that rejection sampling misses. The budget is spread
/// over a few restarts.
pub fn descend_to_interior<R: Rng>(
    reg: &Region,
    delta: f64,
    max_tries: usize,
    rng: &mut R,
    input: InputBox,
) -> Option<(Vec<f64>, Vec<f64>)> {
    const RESTARTS: usize = 8;
    (0..RESTARTS).find_map(|_| descend_once(reg, delta, max_tries / RESTARTS + 1, rng, input))
}

fn descend_once<R: Rng>(
    reg: &Region,
    delta: f64,
    tries: usize,
    rng: &mut R,
    input: InputBox,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let slack = 5.0 * delta;
    let lo_r = input.lo + delta;
    let w_r = input.hi - input.lo - 2.0 * delta;
    let mut r: Vec<f64> = (0..reg.m).map(|_| lo_r + w_r * open_unit(rng)).collect();
    let mut s: Vec<f64> = (0..reg.n).map(|_| delta + (1.0 - 2.0 * delta) * open_unit(rng)).collect();
    let dim = reg.m + reg.n;
    if dim == 0 {
        return is_interior(reg, &r, &s, delta, input).then_some((r, s));
    }
    let mut cur = violation(reg, &r, &s, slack);
    let mut sigma = 0.1;
    for _ in 0..tries {
        if cur == 0.0 && is_interior(reg, &r, &s, delta, input) {
            return Some((r, s));
        }
        // Single-coordinate moves, or moves along all axes at once to get
        // out of corners where two constraints pull against each other.
        let single = rng.random_bool(0.5).then(|| rng.random_range(0..dim));
        let mut u = |k: usize| -> f64 {
            if single.is_none_or(|j| j == k) {
                sigma * (rng.random::<f64>() * 2.0 - 1.0)
            } else {
                0.0
            }
        };
        let r2: Vec<f64> = (0..reg.m).map(|k| (r[k] + w_r * u(k)).clamp(lo_r, lo_r + w_r)).collect();
        let s2: Vec<f64> = (0..reg.n)
            .map(|k| (s[k] + u(reg.m + k)).clamp(delta, 1.0 - delta))
            .collect();
        let v = violation(reg, &r2, &s2, slack);
        if v <= cur {
            if v < cur {
                sigma = (sigma * 1.5).min(0.5);
            }
            r = r2;
            s = s2;
            cur = v;
        } else {
            sigma = (sigma * 0.9).max(1e-4);
        }
    }
    None
}

const STAGE_TRIES: usize = 16;

struct Guide<'a> {
    reg: &'a Region,
    stages: Vec<Vec<&'a Constraint>>,
    delta: f64,
    input: InputBox,
    budget: usize,
}

impl Guide<'_> {
    fn stage_ok(&self, j: usize, r: &[f64], s: &[f64]) -> bool {
        self.stages[j].iter().all(|c| {
            c.holds_at(r, s)
                && c.expr.check_interior(r, s, self.delta).is_ok()
                && neighbours(r, s, self.delta, self.input).all(|(r2, s2)| c.holds_at(&r2, &s2))
        })
    }

    fn extend<R: Rng>(&mut self, r: &[f64], s: &mut Vec<f64>, rng: &mut R) -> bool {
        for j in 1..=self.reg.n {
            let mut placed = false;
            for _ in 0..STAGE_TRIES {
                if self.budget == 0 {
                    return false;
                }
                self.budget -= 1;
                s.push(self.delta + (1.0 - 2.0 * self.delta) * open_unit(rng));
                if self.stage_ok(j, r, s) {
                    placed = true;
                    break;
                }
                s.pop();
            }
            if !placed {
                return false;
            }
        }
        is_interior(self.reg, r, s, self.delta, self.input)
    }
}
