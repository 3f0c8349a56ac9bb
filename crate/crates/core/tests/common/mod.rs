//! Oracles and printed fixtures shared by several test binaries.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use ogp_bounds::Spec;

pub fn binary_entropy_bits(a: &[f64]) -> f64 {
    -a.iter().filter(|&&x| x > 0.0).map(|x| x * x.log2()).sum::<f64>()
}

/// Maximum entropy over the one-dimensional feasible set of four vectors,
/// by a dense scan of its null direction.
pub fn dense_grid_h4(spec: &Spec) -> f64 {
    // atoms: signs of v2, v3, v4 with v1 = +; bit j set when v_{j+2} agrees with v1
    let ks = spec.k().as_slice();
    let level = |i: usize, j: usize| ks.iter().position(|&kl| (i - 1) / kl == (j - 1) / kl).unwrap();
    let sign = |atom: usize, v: usize| v == 1 || (atom >> (v - 2)) & 1 == 1;
    let mut rows = vec![vec![1.0; 8]];
    let mut rhs = vec![1.0];
    for i in 1..=4 {
        for j in i + 1..=4 {
            rows.push((0..8).map(|a| f64::from(u8::from(sign(a, i) == sign(a, j)))).collect());
            rhs.push(0.5 * (1.0 + spec.q_at(level(i, j))));
        }
    }
    let m = DMatrix::from_fn(7, 8, |r, c| rows[r][c]);
    let b = DVector::from_vec(rhs);
    let svd = m.clone().svd(true, true);
    let x0 = svd.solve(&b, 1e-12).unwrap();
    let full = (m.transpose() * &m).symmetric_eigen();
    let idx = full.eigenvalues.imin();
    let null: Vec<f64> = full.eigenvectors.column(idx).iter().cloned().collect();
    let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
    for (x, d) in x0.iter().zip(&null) {
        if d.abs() > 1e-12 {
            let t = -x / d;
            if *d > 0.0 {
                lo = lo.max(t);
            } else {
                hi = hi.min(t);
            }
        }
    }
    let n = 200_000;
    let mut best = f64::NEG_INFINITY;
    for i in 0..=n {
        let t = lo + (hi - lo) * i as f64 / n as f64;
        let a: Vec<f64> = x0.iter().zip(&null).map(|(x, d)| (x + t * d).max(0.0)).collect();
        best = best.max(binary_entropy_bits(&a));
    }
    1.0 + best
}

pub const A4: [[i8; 7]; 6] = [
    [1, 1, 1, 0, 0, 0, 1],
    [0, 0, 1, 1, 1, 0, 1],
    [0, 1, 0, 1, 0, 1, 1],
    [0, 0, 1, 0, 0, 1, 0],
    [0, 1, 0, 0, 1, 0, 0],
    [1, 0, 0, 1, 0, 0, 0],
];

pub const A51: [[i8; 15]; 11] = [
    [1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1],
    [0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 1, 0, 0, 0, 1],
    [0, 0, 1, 1, 0, 0, 1, 1, 1, 0, 0, 1, 1, 0, 1],
    [0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 0, 1, 1],
    [0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0],
    [0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0],
    [0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0],
    [0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0],
    [0, 0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0],
    [0, 1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0],
    [1, 0, 0, 0, 0, 0, 0, 1, 0, 0, 0, 0, 0, 0, 0],
];

pub const A52: [[i8; 7]; 11] = [
    [0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, 0, 1],
    [0, 0, -1, 0, 0, 0, 0],
    [0, 0, 0, 0, 0, -1, 0],
    [0, -1, 0, 0, 0, 0, 0],
    [0, 0, 0, 0, -1, 0, 0],
    [-1, 0, 0, 0, 0, 0, 0],
    [0, 0, 0, -1, 0, 0, 0],
];

/// The five-vector matrix assembled from its printed blocks.
pub fn printed_a5() -> Vec<Vec<i8>> {
    let mut out: Vec<Vec<i8>> = A51
        .iter()
        .zip(A52.iter())
        .map(|(l, r)| l.iter().chain(r.iter()).copied().collect())
        .collect();
    for row in A4 {
        out.push(std::iter::repeat_n(0, 15).chain(row).collect());
    }
    out
}
