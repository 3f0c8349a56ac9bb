//! Error-function helpers that stay finite deep in the Gaussian tails.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use libm::{erf, erfc};
use nalgebra::{DMatrix, SymmetricEigen};

/// Scaled complementary error function `exp(x^2) * erfc(x)`.
pub fn erfcx(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 * (x * x).exp() - erfcx(-x);
    }
    if x < 3.0 {
        return (x * x).exp() * erfc(x);
    }
    // continued fraction, evaluated bottom-up; converges fast for large x
    let mut t = x;
    for n in (1..=80).rev() {
        t = x + (n as f64 / 2.0) / t;
    }
    1.0 / (PI.sqrt() * t)
}

/// Standard normal CDF.
pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Standard normal density.
pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// `ln(Phi(b) - Phi(a))` for `a < b`, accurate when both ends sit in one tail.
pub fn log_norm_interval(a: f64, b: f64) -> f64 {
    debug_assert!(a < b);
    if a >= 0.0 {
        // upper tail: Q(a) - Q(b) with Q(x) = erfcx(x/sqrt2) exp(-x^2/2) / 2
        let ua = a * FRAC_1_SQRT_2;
        let ub = b * FRAC_1_SQRT_2;
        let ratio = (ua * ua - ub * ub).exp() * erfcx(ub);
        (0.5f64).ln() - 0.5 * a * a + (erfcx(ua) - ratio).ln()
    } else if b <= 0.0 {
        log_norm_interval(-b, -a)
    } else {
        let tails = 0.5 * erfc(b * FRAC_1_SQRT_2) + 0.5 * erfc(-a * FRAC_1_SQRT_2);
        (-tails).ln_1p()
    }
}

/// `P(|g| <= kappa)` for a standard normal `g`.
pub fn central_mass(kappa: f64) -> f64 {
    erf(kappa * FRAC_1_SQRT_2)
}

/// Gauss-Hermite rule for the standard normal weight (Golub-Welsch).
/// Weights sum to one, so `sum w_i f(x_i)` approximates `E[f(z)]`.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    let jacobi = DMatrix::from_fn(n, n, |r, c| {
        if r + 1 == c || c + 1 == r {
            (r.max(c) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    pairs.into_iter().unzip()
}
