//! Ultrametric structure: cluster sizes, overlap levels and the algebra of
//! the block-structured covariance matrix shared by every other module.
//!
//! Vector indices in the public functions are 1-based.

use std::fmt::{self, Debug, Display};

use nalgebra::DMatrix;
use num_traits::{Float, FromPrimitive, NumCast};
use serde::Serialize;

use crate::error::{Error, Result};

/// Minimum admissible gap between consecutive overlaps.
pub const EPS_Q: f64 = 1e-6;

/// floating point: f32 or f64
pub trait Real: Float + FromPrimitive + NumCast + nalgebra::Scalar + Display + Send + Sync + Serialize {}
impl Real for f32 {}
impl Real for f64 {}

fn cast<T: Real>(x: f64) -> T {
    T::from_f64(x).expect("f64 always converts to a float type")
}

fn to_f64<T: Real>(x: T) -> f64 {
    x.to_f64().expect("float always converts to f64")
}

/// Cluster sizes `[1, k_1, ..., k_s]`; each size divides the next.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize)]
pub struct ClusterSequence(Vec<usize>);

impl ClusterSequence {
    pub fn new(k: Vec<usize>) -> Result<Self> {
        if k.len() < 2 || k[0] != 1 || k.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::BadClusterSequence(k));
        }
        for (i, w) in k.windows(2).enumerate() {
            if w[1] % w[0] != 0 {
                return Err(Error::NonDivisibleK {
                    prev: i,
                    next: i + 1,
                    num: w[1],
                    den: w[0],
                });
            }
        }
        Ok(Self(k))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    /// Number of ultrametric levels `s`.
    pub fn levels(&self) -> usize {
        self.0.len() - 1
    }

    /// Total number of vectors `k_s`.
    pub fn total(&self) -> usize {
        *self.0.last().unwrap()
    }

    /// `k_i / k_{i-1}` for `i >= 1`.
    pub fn ratio(&self, i: usize) -> usize {
        self.0[i] / self.0[i - 1]
    }
}

impl Display for ClusterSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|x| x.to_string()).collect();
        write!(f, "[{}]", parts.join(","))
    }
}

/// Overlaps `[1, q_1, ..., q_s, 0]`, strictly decreasing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapSequence<T: Real>(Vec<T>);

impl<T: Real> OverlapSequence<T> {
    /// Takes the full sequence including the fixed endpoints.
    pub fn new(q: Vec<T>) -> Result<Self> {
        let n = q.len();
        if n < 3 || q[0] != T::one() || q[n - 1] != T::zero() {
            return Err(Error::BadOverlapShape {
                expected: n.max(3),
                got: n,
            });
        }
        let eps: T = cast(EPS_Q);
        for i in 1..n {
            if !(q[i] < q[i - 1]) {
                return Err(Error::NonDecreasingQ {
                    index: i,
                    value: to_f64(q[i]),
                });
            }
            if q[i - 1] - q[i] < eps {
                return Err(Error::QGapBelowEpsilon {
                    index: i - 1,
                    gap: to_f64(q[i - 1] - q[i]),
                    eps: EPS_Q,
                });
            }
        }
        Ok(Self(q))
    }

    /// Builds `[1, interior..., 0]`.
    pub fn from_interior(interior: &[T]) -> Result<Self> {
        let mut q = Vec::with_capacity(interior.len() + 2);
        q.push(T::one());
        q.extend_from_slice(interior);
        q.push(T::zero());
        Self::new(q)
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    /// `[q_1, ..., q_s]`.
    pub fn interior(&self) -> &[T] {
        &self.0[1..self.0.len() - 1]
    }
}

/// One bound evaluation: levels, cluster sizes, overlaps and margin.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UltrametricSpec<T: Real> {
    k: ClusterSequence,
    q: OverlapSequence<T>,
    kappa: T,
}

impl<T: Real> UltrametricSpec<T> {
    pub fn new(k: ClusterSequence, q: OverlapSequence<T>, kappa: T) -> Result<Self> {
        validate_spec(Self { k, q, kappa })
    }

    /// Convenience constructor from raw slices; `q` holds only `q_1..q_s`.
    pub fn from_parts(k: &[usize], q: &[T], kappa: T) -> Result<Self> {
        Self::new(
            ClusterSequence::new(k.to_vec())?,
            OverlapSequence::from_interior(q)?,
            kappa,
        )
    }

    /// Same cluster structure and margin, different overlaps.
    pub fn with_q(&self, q: &[T]) -> Result<Self> {
        Self::new(self.k.clone(), OverlapSequence::from_interior(q)?, self.kappa)
    }

    pub fn s(&self) -> usize {
        self.k.levels()
    }

    pub fn k(&self) -> &ClusterSequence {
        &self.k
    }

    pub fn q(&self) -> &OverlapSequence<T> {
        &self.q
    }

    /// `q_l` for `l` in `0..=s+1`.
    pub fn q_at(&self, level: usize) -> T {
        self.q.0[level]
    }

    pub fn kappa(&self) -> T {
        self.kappa
    }
}

/// Re-checks every structural invariant and hands the spec back.
pub fn validate_spec<T: Real>(spec: UltrametricSpec<T>) -> Result<UltrametricSpec<T>> {
    let k = ClusterSequence::new(spec.k.0.clone())?;
    let q = OverlapSequence::new(spec.q.0.clone())?;
    if q.0.len() != k.0.len() + 1 {
        return Err(Error::BadOverlapShape {
            expected: k.0.len() + 1,
            got: q.0.len(),
        });
    }
    if !(spec.kappa > T::zero()) || !spec.kappa.is_finite() {
        return Err(Error::NonPositiveKappa(to_f64(spec.kappa)));
    }
    Ok(spec)
}

/// Finest level at which vectors `i` and `j` sit in the same cluster.
pub fn level_of_pair(i: usize, j: usize, k: &ClusterSequence) -> Result<usize> {
    let n = k.total();
    if i == 0 || j == 0 || i > n || j > n {
        return Err(Error::IndexOutOfRange { i, j, n });
    }
    Ok(level_unchecked(i, j, k.as_slice()))
}

pub(crate) fn level_unchecked(i: usize, j: usize, k: &[usize]) -> usize {
    k.iter()
        .position(|&kl| (i - 1) / kl == (j - 1) / kl)
        .expect("the top cluster contains every vector")
}

/// The `k_s x k_s` overlap matrix with entries `q_{level(i,j)}`.
pub fn build_overlap_matrix<T: Real>(spec: &UltrametricSpec<T>) -> DMatrix<T> {
    let ks = spec.k.as_slice();
    let n = spec.k.total();
    DMatrix::from_fn(n, n, |r, c| spec.q_at(level_unchecked(r + 1, c + 1, ks)))
}

/// Coefficients of `Q^{-1} = c_1 I + sum_i c_{i+1} J_i`, where `J_i` is the
/// block-diagonal all-ones matrix with blocks of size `k_i`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CovarianceCoeffs<T: Real> {
    pub c_w: Vec<T>,
    pub det_q: T,
    pub log_det_q: f64,
    pub k_total: usize,
}

impl<T: Real> CovarianceCoeffs<T> {
    /// Dense `Q^{-1}` assembled from the coefficients.
    pub fn inverse_matrix(&self, k: &ClusterSequence) -> DMatrix<T> {
        let ks = k.as_slice();
        let n = self.k_total;
        DMatrix::from_fn(n, n, |r, c| {
            let mut v = if r == c { self.c_w[0] } else { T::zero() };
            for (i, &ki) in ks.iter().enumerate().skip(1) {
                if r / ki == c / ki {
                    v = v + self.c_w[i];
                }
            }
            v
        })
    }
}

pub fn covariance_coefficients<T: Real>(spec: &UltrametricSpec<T>) -> Result<CovarianceCoeffs<T>> {
    let s = spec.s();
    let ks = spec.k.as_slice();
    let eps: T = cast(EPS_Q);
    for i in 0..=s {
        let gap = spec.q_at(i) - spec.q_at(i + 1);
        if gap < eps {
            return Err(Error::SingularGap {
                index: i,
                gap: to_f64(gap),
            });
        }
    }
    let mut c_w = Vec::with_capacity(s + 1);
    c_w.push(T::one() / (T::one() - spec.q_at(1)));
    for i in 1..=s {
        let acc = (1..=i).fold(T::zero(), |a, j| a + cast::<T>(ks[j - 1] as f64) * c_w[j - 1]);
        let gap = spec.q_at(i) - spec.q_at(i + 1);
        let denom = T::one() / gap + cast::<T>(ks[i] as f64) * acc;
        c_w.push(-(acc * acc) / denom);
    }
    let q = build_overlap_matrix(spec).map(to_f64);
    let log_det_q = match q.clone().cholesky() {
        Some(ch) => 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
        None => return Err(Error::NotPsd),
    };
    Ok(CovarianceCoeffs {
        c_w,
        det_q: cast(log_det_q.exp()),
        log_det_q,
        k_total: spec.k.total(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn divisibility_is_enforced() {
        let err = UltrametricSpec::from_parts(&[1, 3, 8], &[0.99, 0.97], 1.0).unwrap_err();
        assert!(matches!(err, Error::NonDivisibleK { num: 8, den: 3, .. }));
    }

    #[test]
    fn overlap_ordering_errors() {
        let e = UltrametricSpec::from_parts(&[1, 2, 4], &[0.5, 0.7], 1.0).unwrap_err();
        assert!(matches!(e, Error::NonDecreasingQ { index: 2, .. }));
        let e = UltrametricSpec::from_parts(&[1, 2, 4], &[0.5, 0.5 - 1e-8], 1.0).unwrap_err();
        assert!(matches!(e, Error::QGapBelowEpsilon { index: 1, .. }));
        let e = UltrametricSpec::from_parts(&[1, 2], &[0.5], 0.0).unwrap_err();
        assert!(matches!(e, Error::NonPositiveKappa(_)));
    }

    #[test]
    fn valid_specs() {
        UltrametricSpec::from_parts(&[1, 4, 12], &[0.9989, 0.9745], 1.0).unwrap();
        UltrametricSpec::from_parts(&[1, 3], &[0.5], 1.0).unwrap();
        UltrametricSpec::from_parts(&[1usize, 3], &[0.5f32], 1.0).unwrap();
    }

    #[test]
    fn level_rule_examples() {
        let k = ClusterSequence::new(vec![1, 2, 4, 8]).unwrap();
        assert_eq!(level_of_pair(8, 7, &k).unwrap(), 1);
        assert_eq!(level_of_pair(8, 5, &k).unwrap(), 2);
        assert_eq!(level_of_pair(8, 1, &k).unwrap(), 3);
        assert_eq!(level_of_pair(5, 5, &k).unwrap(), 0);
        assert!(level_of_pair(9, 1, &k).is_err());
        let k = ClusterSequence::new(vec![1, 4, 12]).unwrap();
        assert_eq!(level_of_pair(4, 5, &k).unwrap(), 2);
        assert_eq!(level_of_pair(3, 4, &k).unwrap(), 1);
    }

    #[test]
    fn overlap_matrix_entries() {
        let spec = UltrametricSpec::from_parts(&[1, 2, 4], &[0.9, 0.5], 1.0).unwrap();
        let q = build_overlap_matrix(&spec);
        assert_eq!(q[(0, 1)], 0.9);
        for (r, c) in [(0, 2), (0, 3), (1, 2), (1, 3)] {
            assert_eq!(q[(r, c)], 0.5);
        }
        assert_eq!(q[(2, 3)], 0.9);
        assert!((0..4).all(|i| q[(i, i)] == 1.0));
    }

    #[test]
    fn coefficient_examples() {
        let spec = UltrametricSpec::from_parts(&[1, 2], &[0.9689], 1.0).unwrap();
        let c = covariance_coefficients(&spec).unwrap();
        assert!((c.c_w[0] - 32.154_340_836).abs() < 1e-6);
        assert!((c.c_w[1] + 15.823_263).abs() < 1e-4, "{}", c.c_w[1]);

        let q = 0.978;
        let spec = UltrametricSpec::from_parts(&[1, 3], &[q], 1.0).unwrap();
        let c = covariance_coefficients(&spec).unwrap();
        let want = -(1.0 / (1.0 - q)).powi(2) / (1.0 / q + 3.0 / (1.0 - q));
        assert!((c.c_w[1] - want).abs() < 1e-9 * want.abs());
    }

    #[test]
    fn generic_over_f32() {
        let spec = UltrametricSpec::from_parts(&[1, 2, 4], &[0.9f32, 0.5], 1.0).unwrap();
        let c = covariance_coefficients(&spec).unwrap();
        let prod = c.inverse_matrix(spec.k()) * build_overlap_matrix(&spec);
        let err = (prod - DMatrix::<f32>::identity(4, 4)).amax();
        assert!(err < 1e-4, "{err}");
    }
}
