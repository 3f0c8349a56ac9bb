//! First-moment thresholds: combine `h` and `p` into `alpha_bar`, search
//! over overlap sequences, and the single-vector capacity bound.

use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::Serialize;

use crate::combfactor::{closed_form_from_params, overlap_params, EntropyProgram, OverlapMode};
use crate::core::{ClusterSequence, EPS_Q};
use crate::error::{Error, Result};
use crate::probfactor::{nested_prob, QuadratureConfig};
use crate::special::central_mass;
use crate::Spec;

#[derive(Debug, Clone, Serialize)]
pub struct BoundResult {
    pub spec: Spec,
    /// Combinatorial factor in bits.
    pub h: f64,
    pub p: f64,
    pub log_p: f64,
    pub alpha_bar: f64,
    pub mode: OverlapMode,
}

impl BoundResult {
    /// `q_1..q_s` of the evaluated spec.
    pub fn q(&self) -> Vec<f64> {
        self.spec.q().interior().to_vec()
    }

    /// Whether `2^h p^alpha < 1`, i.e. `alpha > alpha_bar`.
    pub fn certifies(&self, alpha: f64) -> bool {
        alpha > self.alpha_bar
    }
}

/// Combinatorial factor: closed form up to three vectors, entropy program beyond.
pub fn combinatorial_h(spec: &Spec, mode: OverlapMode) -> Result<f64> {
    let k = spec.k().total();
    if k <= 3 {
        return closed_form_from_params(&overlap_params(spec, mode)?, k);
    }
    Ok(EntropyProgram::for_k(k)?.solve(spec, mode)?.h)
}

pub fn alpha_bar(spec: &Spec, mode: OverlapMode, quad: &QuadratureConfig) -> Result<BoundResult> {
    let h = combinatorial_h(spec, mode)?;
    let pf = nested_prob(spec, quad)?;
    Ok(BoundResult {
        spec: spec.clone(),
        h,
        p: pf.p,
        log_p: pf.log_p,
        alpha_bar: -h * LN_2 / pf.log_p,
        mode,
    })
}

/// True iff the union bound vanishes at density `alpha` (strictly above `alpha_bar`).
pub fn ogp_indicator(spec: &Spec, alpha: f64, mode: OverlapMode, quad: &QuadratureConfig) -> Result<bool> {
    Ok(alpha_bar(spec, mode, quad)?.certifies(alpha))
}

/// `-ln 2 / ln P(|g| <= kappa)`.
pub fn capacity_union_bound(kappa: f64) -> f64 {
    -LN_2 / central_mass(kappa).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Refinement {
    None,
    NelderMead,
    Coordinate,
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchConfig {
    /// Grid points per coordinate, log-spaced in `1 - q_l`.
    pub resolution: usize,
    pub refine: Refinement,
    /// Evaluation budget for the refinement stage.
    pub max_evals: usize,
    /// Per-level range of `1 - q_l`; the last entry is reused for deeper levels.
    pub bounds: Vec<(f64, f64)>,
    pub quad: QuadratureConfig,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            resolution: 9,
            refine: Refinement::NelderMead,
            max_evals: 400,
            bounds: vec![(2e-4, 0.2), (2e-3, 0.3), (5e-3, 0.4)],
            quad: QuadratureConfig::default(),
        }
    }
}

impl SearchConfig {
    fn range(&self, level: usize) -> (f64, f64) {
        *self.bounds.get(level).or(self.bounds.last()).unwrap_or(&(1e-4, 0.5))
    }

    fn validate(&self) -> Result<()> {
        if self.resolution < 3 {
            return Err(Error::OutOfRange {
                name: "resolution",
                value: self.resolution as f64,
            });
        }
        for &(lo, hi) in &self.bounds {
            if !(0.0 < lo && lo < hi && hi < 1.0) {
                return Err(Error::OutOfRange {
                    name: "bounds",
                    value: lo,
                });
            }
        }
        self.quad.validate()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SearchOutcome {
    pub best: BoundResult,
    pub evaluations: usize,
    pub infeasible: usize,
}

/// Coordinates are `x_l = ln(1 - q_l)`; ordering needs strictly increasing `x`.
fn q_from_x(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| 1.0 - v.exp()).collect()
}

fn ordered(q: &[f64]) -> bool {
    q.iter().all(|&v| v > 0.0 && v < 1.0 - EPS_Q) && q.windows(2).all(|w| w[0] - w[1] >= EPS_Q)
}

struct Objective<'a> {
    k: &'a ClusterSequence,
    kappa: f64,
    mode: OverlapMode,
    quad: &'a QuadratureConfig,
}

impl Objective<'_> {
    fn eval(&self, x: &[f64]) -> Option<BoundResult> {
        let q = q_from_x(x);
        if !ordered(&q) {
            return None;
        }
        let spec = Spec::from_parts(self.k.as_slice(), &q, self.kappa).ok()?;
        alpha_bar(&spec, self.mode, self.quad).ok()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).map_or(f64::INFINITY, |r| r.alpha_bar)
    }
}

fn grid_points(s: usize, cfg: &SearchConfig) -> Vec<Vec<f64>> {
    let axes: Vec<Vec<f64>> = (0..s)
        .map(|l| {
            let (lo, hi) = cfg.range(l);
            let (a, b) = (lo.ln(), hi.ln());
            let n = cfg.resolution;
            (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
        })
        .collect();
    let mut pts = vec![vec![]];
    for axis in &axes {
        pts = pts
            .into_iter()
            .flat_map(|p| {
                axis.iter().map(move |&v| {
                    let mut q = p.clone();
                    q.push(v);
                    q
                })
            })
            .filter(|p: &Vec<f64>| p.windows(2).all(|w| w[0] < w[1]))
            .collect();
    }
    pts
}

/// Minimizes `alpha_bar` over strictly decreasing `q` for fixed `k`.
pub fn optimize_q(k: &ClusterSequence, kappa: f64, search: &SearchConfig, mode: OverlapMode) -> Result<SearchOutcome> {
    search.validate()?;
    let obj = Objective {
        k,
        kappa,
        mode,
        quad: &search.quad,
    };
    let pts = grid_points(k.levels(), search);
    let results: Vec<Option<BoundResult>> = pts.par_iter().map(|x| obj.eval(x)).collect();
    let infeasible = results.iter().filter(|r| r.is_none()).count();
    let (best_x, best) = pts
        .iter()
        .zip(results)
        .filter_map(|(x, r)| r.map(|r| (x.clone(), r)))
        .min_by(|a, b| a.1.alpha_bar.total_cmp(&b.1.alpha_bar))
        .ok_or(Error::NoFeasiblePoint)?;
    let mut evaluations = pts.len();
    let spacing: Vec<f64> = (0..k.levels())
        .map(|l| {
            let (lo, hi) = search.range(l);
            (hi / lo).ln() / (search.resolution - 1) as f64
        })
        .collect();
    let refined = match search.refine {
        Refinement::None => None,
        Refinement::NelderMead => Some(nelder_mead(|x| obj.value(x), &best_x, &spacing, search.max_evals)),
        Refinement::Coordinate => Some(coordinate_search(|x| obj.value(x), &best_x, &spacing, search.max_evals)),
    };
    let best = match refined {
        Some((x, used)) => {
            evaluations += used;
            match obj.eval(&x) {
                Some(r) if r.alpha_bar <= best.alpha_bar => r,
                _ => best,
            }
        }
        None => best,
    };
    Ok(SearchOutcome {
        best,
        evaluations,
        infeasible,
    })
}

/// Nelder-Mead with textbook coefficients.
pub fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: &[f64], max_evals: usize) -> (Vec<f64>, usize) {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(n + 1);
    simplex.push((x0.to_vec(), f(x0)));
    for i in 0..n {
        let mut x = x0.to_vec();
        x[i] += 0.5 * step[i];
        let fx = f(&x);
        simplex.push((x, fx));
    }
    let mut evals = n + 1;
    let lerp = |a: &[f64], b: &[f64], t: f64| -> Vec<f64> { a.iter().zip(b).map(|(a, b)| a + t * (b - a)).collect() };
    while evals < max_evals {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let spread = simplex[n].1 - simplex[0].1;
        let size = simplex[1..]
            .iter()
            .flat_map(|(x, _)| x.iter().zip(&simplex[0].0).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max);
        if size < 1e-7 || (spread.is_finite() && spread.abs() < 1e-12 && size < 1e-4) {
            break;
        }
        let centroid: Vec<f64> = (0..n)
            .map(|j| simplex[..n].iter().map(|(x, _)| x[j]).sum::<f64>() / n as f64)
            .collect();
        let worst = simplex[n].clone();
        let xr = lerp(&centroid, &worst.0, -1.0);
        let fr = f(&xr);
        evals += 1;
        if fr < simplex[0].1 {
            let xe = lerp(&centroid, &worst.0, -2.0);
            let fe = f(&xe);
            evals += 1;
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let (xc, fc) = if fr < worst.1 {
                let xc = lerp(&centroid, &xr, 0.5);
                let fc = f(&xc);
                (xc, fc)
            } else {
                let xc = lerp(&centroid, &worst.0, 0.5);
                let fc = f(&xc);
                (xc, fc)
            };
            evals += 1;
            if fc < worst.1.min(fr) {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for v in simplex.iter_mut().skip(1) {
                    v.0 = lerp(&best, &v.0, 0.5);
                    v.1 = f(&v.0);
                }
                evals += n;
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    (simplex.swap_remove(0).0, evals)
}

/// Cyclic golden-section line searches along each coordinate.
pub fn coordinate_search<F: Fn(&[f64]) -> f64>(f: F, x0: &[f64], step: &[f64], max_evals: usize) -> (Vec<f64>, usize) {
    const G: f64 = 0.618_033_988_749_894_9;
    let mut x = x0.to_vec();
    let mut evals = 0;
    let mut width: Vec<f64> = step.to_vec();
    while evals < max_evals && width.iter().any(|w| *w > 1e-7) {
        for i in 0..x.len() {
            let at = |t: f64, x: &Vec<f64>| {
                let mut y = x.clone();
                y[i] = t;
                f(&y)
            };
            let (mut a, mut b) = (x[i] - width[i], x[i] + width[i]);
            let mut c = b - G * (b - a);
            let mut d = a + G * (b - a);
            let (mut fc, mut fd) = (at(c, &x), at(d, &x));
            evals += 2;
            for _ in 0..30 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - G * (b - a);
                    fc = at(c, &x);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + G * (b - a);
                    fd = at(d, &x);
                }
                evals += 1;
            }
            let t = 0.5 * (a + b);
            let moved = (t - x[i]).abs();
            if at(t, &x) < at(x[i], &x) {
                x[i] = t;
            }
            evals += 2;
            width[i] = if moved > 0.5 * width[i] {
                width[i]
            } else {
                width[i] * 0.25
            };
        }
    }
    (x, evals)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn capacity_at_unit_margin() {
        assert!((capacity_union_bound(1.0) - 1.8159).abs() < 1e-4);
    }

    #[test]
    fn nelder_mead_finds_a_quadratic_minimum() {
        let (x, _) = nelder_mead(
            |x| (x[0] - 1.0).powi(2) + 3.0 * (x[1] + 2.0).powi(2),
            &[0.0, 0.0],
            &[1.0, 1.0],
            500,
        );
        assert!((x[0] - 1.0).abs() < 1e-5 && (x[1] + 2.0).abs() < 1e-5);
    }

    #[test]
    fn coordinate_search_finds_a_quadratic_minimum() {
        let (x, _) = coordinate_search(
            |x| (x[0] - 0.3).powi(2) + (x[1] - 0.1).powi(2),
            &[0.0, 0.0],
            &[1.0, 1.0],
            2000,
        );
        assert!((x[0] - 0.3).abs() < 1e-5 && (x[1] - 0.1).abs() < 1e-5);
    }

    #[test]
    fn grid_respects_ordering() {
        let cfg = SearchConfig::default();
        let pts = grid_points(2, &cfg);
        assert!(!pts.is_empty());
        assert!(pts.iter().all(|p| p[0] < p[1]));
    }
}
