//! Per-constraint probability that all `k_s` correlated Gaussians land in
//! `[-kappa, kappa]`, plus a seeded Monte Carlo estimate of the same quantity.
//!
//! Both quadratures evaluate the forward recursion
//!
//! ```text
//! F_0(m) = P(|m + sigma_0 g| <= kappa)
//! F_i(m) = E_y[ F_{i-1}(m + sigma_i y)^(k_i / k_{i-1}) ],   sigma_i^2 = q_i - q_{i+1}
//! p      = F_s(0)
//! ```
//!
//! [`QuadratureMode::Adaptive`], the default, runs it on a uniform grid whose
//! step resolves the narrowest `sigma_i`; trapezoid sums of Gaussian
//! convolutions converge geometrically in the points per standard deviation.
//! [`QuadratureMode::GaussHermite`] applies a Hermite rule at every level.
//! Near `q_1 -> 1` the inner factors have edges of width `sigma_0` that a
//! fixed rule resolves only with a few hundred nodes.
//!
//! [`inner_kernel`] is the shifted one-dimensional kernel of the equivalent
//! representation through `Q^{-1}`, exposed for checking the coefficients.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::core::{covariance_coefficients, CovarianceCoeffs};
use crate::error::{Error, Result};
use crate::special::{gauss_hermite, log_norm_interval, norm_cdf, norm_pdf};
use crate::Spec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum QuadratureMode {
    GaussHermite,
    Adaptive,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureConfig {
    /// Hermite order per level, or 16x the grid points per narrowest
    /// standard deviation in adaptive mode.
    pub nodes_per_level: usize,
    /// Cutoff in standard deviations for truncated ranges.
    pub truncation: f64,
    pub mode: QuadratureMode,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            nodes_per_level: 80,
            truncation: 10.0,
            mode: QuadratureMode::Adaptive,
        }
    }
}

impl QuadratureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.nodes_per_level < 16 {
            return Err(Error::OutOfRange {
                name: "nodes_per_level",
                value: self.nodes_per_level as f64,
            });
        }
        if !(self.truncation > 0.0) {
            return Err(Error::OutOfRange {
                name: "truncation",
                value: self.truncation,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ProbFactor {
    pub p: f64,
    pub log_p: f64,
    pub spec: Spec,
    pub config: QuadratureConfig,
}

/// Slopes `sqrt(-c_{i+1} / c_1)` mapping auxiliary normals onto the shift `D`.
fn shift_slopes(coeffs: &CovarianceCoeffs<f64>) -> Vec<f64> {
    let c1 = coeffs.c_w[0];
    coeffs.c_w[1..].iter().map(|c| (-c / c1).sqrt()).collect()
}

fn log_kernel_at_shift(d: f64, e: f64) -> f64 {
    0.5 * d * d + log_norm_interval(-e - d, e - d)
}

/// `exp(D^2/2) * (Phi(E - D) - Phi(-E - D))` with `D = sum_i sqrt(-c_{i+1}/c_1) z_i`
/// and `E = sqrt(c_1) kappa`. Returns `+inf` only if the true value overflows.
pub fn inner_kernel(z: &[f64], coeffs: &CovarianceCoeffs<f64>, kappa: f64) -> f64 {
    log_inner_kernel(z, coeffs, kappa).exp()
}

/// Natural log of [`inner_kernel`]; finite for any finite `z`.
pub fn log_inner_kernel(z: &[f64], coeffs: &CovarianceCoeffs<f64>, kappa: f64) -> f64 {
    let d: f64 = shift_slopes(coeffs).iter().zip(z).map(|(a, z)| a * z).sum();
    log_kernel_at_shift(d, coeffs.c_w[0].sqrt() * kappa)
}

pub fn nested_prob(spec: &Spec, config: &QuadratureConfig) -> Result<ProbFactor> {
    config.validate()?;
    let log_p = match config.mode {
        QuadratureMode::Adaptive => grid_log_prob(spec, config),
        QuadratureMode::GaussHermite => hermite_log_prob(spec, config)?,
    };
    let p = log_p.exp();
    if !(p > f64::MIN_POSITIVE) || !log_p.is_finite() {
        return Err(Error::QuadratureUnderflow { log_p });
    }
    Ok(ProbFactor {
        p,
        log_p,
        spec: spec.clone(),
        config: *config,
    })
}

/// Level `i` of the overlap structure contributes an independent normal of
/// variance `q_i - q_{i+1}`; each row is the mean `m` built from the coarser
/// levels plus its own finest-level noise. Nodes integrate every level in
/// log space, so `nodes^s` kernel evaluations in total.
fn hermite_log_prob(spec: &Spec, config: &QuadratureConfig) -> Result<f64> {
    covariance_coefficients(spec)?;
    let s = spec.s();
    let sig: Vec<f64> = (0..=s).map(|i| (spec.q_at(i) - spec.q_at(i + 1)).sqrt()).collect();
    let (nodes, weights) = gauss_hermite(config.nodes_per_level);
    let log_w: Vec<f64> = weights.iter().map(|w| w.ln()).collect();
    let ks = spec.k().as_slice();
    let kappa = spec.kappa();

    // log P(|m + sig_0 g| <= kappa) raised through levels 1..=level
    let level_value = |level: usize, m: f64| -> f64 {
        fn go(level: usize, m: f64, kappa: f64, sig: &[f64], ks: &[usize], nodes: &[f64], log_w: &[f64]) -> f64 {
            if level == 0 {
                return log_norm_interval((-kappa - m) / sig[0], (kappa - m) / sig[0]);
            }
            let r = (ks[level] / ks[level - 1]) as f64;
            let terms: Vec<f64> = nodes
                .iter()
                .zip(log_w)
                .map(|(x, lw)| lw + r * go(level - 1, m + sig[level] * x, kappa, sig, ks, nodes, log_w))
                .collect();
            log_sum_exp(&terms)
        }
        go(level, m, kappa, &sig, ks, &nodes, &log_w)
    };
    Ok(level_value(s, 0.0))
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn grid_log_prob(spec: &Spec, config: &QuadratureConfig) -> f64 {
    let s = spec.s();
    let kappa = spec.kappa();
    let trunc = config.truncation;
    let sig: Vec<f64> = (0..=s).map(|i| (spec.q_at(i) - spec.q_at(i + 1)).sqrt()).collect();
    let per_sigma = (config.nodes_per_level as f64 / 16.0).max(1.0);
    let h = sig.iter().cloned().fold(f64::INFINITY, f64::min) / per_sigma;
    let half = ((kappa + trunc) / h).ceil() as usize;
    let grid = |j: usize| (j as f64 - half as f64) * h;
    let n = 2 * half + 1;

    let mut f: Vec<f64> = (0..n)
        .map(|j| {
            let m = grid(j);
            norm_cdf((kappa - m) / sig[0]) - norm_cdf((-kappa - m) / sig[0])
        })
        .collect();
    let ks = spec.k().as_slice();
    for i in 1..=s {
        let r = (ks[i] / ks[i - 1]) as i32;
        let powered: Vec<f64> = f.iter().map(|v| v.powi(r)).collect();
        if i == s {
            let p: f64 = powered
                .iter()
                .enumerate()
                .map(|(j, v)| v * norm_pdf(grid(j) / sig[i]) / sig[i] * h)
                .sum();
            return p.ln();
        }
        let w = ((trunc * sig[i]) / h).ceil() as usize;
        let kernel: Vec<f64> = (0..=2 * w)
            .map(|t| norm_pdf((t as f64 - w as f64) * h / sig[i]) / sig[i] * h)
            .collect();
        f = convolve_same(&powered, &kernel, w);
    }
    unreachable!("the loop returns at the top level")
}

/// Centered convolution with zero padding; `kernel.len() == 2w + 1`.
fn convolve_same(x: &[f64], kernel: &[f64], w: usize) -> Vec<f64> {
    let n = x.len();
    let one = |j: usize| {
        let lo = j.saturating_sub(w);
        let hi = (j + w).min(n - 1);
        (lo..=hi).map(|t| x[t] * kernel[t + w - j]).sum::<f64>()
    };
    if n * kernel.len() > 1 << 20 {
        (0..n).into_par_iter().map(one).collect()
    } else {
        (0..n).map(one).collect()
    }
}

/// Fixed number of sample blocks so results do not depend on the thread count.
const MC_BLOCKS: u64 = 64;

/// Fraction of `N(0, Q)` draws inside the cube `[-kappa, kappa]^n` and its
/// binomial standard error. Bit-reproducible per `(seed, samples)`.
pub fn mc_orthant_prob(q: &DMatrix<f64>, kappa: f64, samples: u64, seed: u64) -> Result<(f64, f64)> {
    if samples == 0 {
        return Err(Error::OutOfRange {
            name: "samples",
            value: 0.0,
        });
    }
    let l = q.clone().cholesky().ok_or(Error::NotPsd)?.unpack();
    let n = q.nrows();
    let hits: u64 = (0..MC_BLOCKS)
        .into_par_iter()
        .map(|b| {
            let count = samples / MC_BLOCKS + u64::from(b < samples % MC_BLOCKS);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(b);
            let mut z = vec![0.0; n];
            let mut inside = 0u64;
            for _ in 0..count {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(&mut rng);
                }
                let ok = (0..n).all(|r| {
                    let g: f64 = (0..=r).map(|c| l[(r, c)] * z[c]).sum();
                    g.abs() <= kappa
                });
                inside += u64::from(ok);
            }
            inside
        })
        .sum();
    let p = hits as f64 / samples as f64;
    Ok((p, (p * (1.0 - p) / samples as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::special::central_mass;

    fn spec(k: &[usize], q: &[f64], kappa: f64) -> Spec {
        Spec::from_parts(k, q, kappa).unwrap()
    }

    #[test]
    fn kernel_at_zero_shift_is_central_mass() {
        let sp = spec(&[1, 3], &[0.978], 1.0);
        let c = covariance_coefficients(&sp).unwrap();
        let e = c.c_w[0].sqrt();
        let v = inner_kernel(&[0.0], &c, 1.0);
        assert!((v - central_mass(e)).abs() < 1e-14);
    }

    #[test]
    fn independence_limit() {
        let p = nested_prob(&spec(&[1, 2], &[1e-5], 1.0), &QuadratureConfig::default()).unwrap();
        assert!((p.p - central_mass(1.0).powi(2)).abs() < 1e-4);
    }

    #[test]
    fn hermite_and_grid_agree_at_moderate_overlap() {
        let sp = spec(&[1, 2, 4], &[0.6, 0.3], 1.0);
        let grid = nested_prob(&sp, &QuadratureConfig::default()).unwrap();
        let gh = nested_prob(
            &sp,
            &QuadratureConfig {
                mode: QuadratureMode::GaussHermite,
                ..Default::default()
            },
        )
        .unwrap();
        assert!((grid.log_p - gh.log_p).abs() < 1e-9, "{} {}", grid.log_p, gh.log_p);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let a = mc_orthant_prob(&q, 1.0, 10_000, 7).unwrap();
        let b = mc_orthant_prob(&q, 1.0, 10_000, 7).unwrap();
        assert_eq!(a, b);
        let c = mc_orthant_prob(&q, 1.0, 10_000, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn too_few_nodes_rejected() {
        let cfg = QuadratureConfig {
            nodes_per_level: 8,
            ..Default::default()
        };
        assert!(nested_prob(&spec(&[1, 2], &[0.5], 1.0), &cfg).is_err());
    }
}
