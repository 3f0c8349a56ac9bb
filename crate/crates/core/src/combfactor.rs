//! Combinatorial factor `h`: the base-2 growth rate of the number of sign
//! vector tuples with a prescribed ultrametric agreement pattern.
//!
//! The count is organized as a partition scheme. Vector 1 is all plus; each
//! later vector `v_k` splits every segment of the previous partition into
//! the part where it agrees with `v_1` and the rest. A segment at step `k` is
//! therefore a sign pattern of `v_1..v_k` with `v_1 = +`; the finest segments
//! (step `k_s`) are the atoms the entropy is taken over.
//!
//! [`build_a`] emits the recursive constraint matrix column by column from
//! this scheme. Columns of the step-`k` block are labelled by the agreement
//! code of `v_k` with `v_1..v_{k-1}` (most significant bit = `v_1`), in the
//! order `2^{k-2} .. 2^{k-1}-2`, `2^{k-2}-1 .. 1`, all-ones. Code 0 is the
//! closing slack segment, which only enters through normalization.

use std::collections::HashMap;
use std::io::{self, Write};
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::core::level_unchecked;
use crate::error::{Error, Result};
use crate::Spec;

/// Largest `k_s` the constraint generator accepts by default.
pub const K_MAX: usize = 12;
pub const TOL_KKT: f64 = 1e-10;
pub const TOL_FEAS: f64 = 1e-9;

fn xlog2x(x: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x * x.log2()
    }
}

/// Binary entropy in bits, `0 log 0 = 0`.
pub fn scalar_entropy(a: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&a) {
        return Err(Error::OutOfRange { name: "a", value: a });
    }
    Ok(-xlog2x(a) - xlog2x(1.0 - a))
}

/// Shannon entropy in bits of a probability vector.
pub fn vector_entropy(a: &[f64]) -> Result<f64> {
    if let Some(&bad) = a.iter().find(|x| !(**x >= 0.0)) {
        return Err(Error::OutOfRange {
            name: "a_i",
            value: bad,
        });
    }
    let total: f64 = a.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(total));
    }
    Ok(-a.iter().map(|&x| xlog2x(x)).sum::<f64>())
}

/// How the agreement of vectors 1 and 2 with vector 3 is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OverlapMode {
    /// `q_s2 = q_sx2 - (1 - q_s1)/2`, with `q_sx2` the second-level sign
    /// overlap whatever cluster vector 3 sits in.
    PaperLiteral,
    /// Vector 3 uses the agreement its cluster position implies.
    LevelConsistent,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OverlapParams {
    /// `(1 + q_l)/2` for `l = 1..=s`.
    pub q_sx: Vec<f64>,
    pub q_s1: f64,
    pub q_s2: f64,
}

impl OverlapParams {
    /// Agreement of vector 3 with vectors 1 and 2 implied by `q_s2`.
    pub fn third_agreement(&self) -> f64 {
        self.q_s2 + 0.5 * (1.0 - self.q_s1)
    }
}

fn sign_overlap(spec: &Spec, i: usize, j: usize) -> f64 {
    0.5 * (1.0 + spec.q_at(level_unchecked(i, j, spec.k().as_slice())))
}

pub fn overlap_params(spec: &Spec, mode: OverlapMode) -> Result<OverlapParams> {
    let q_sx: Vec<f64> = (1..=spec.s()).map(|l| 0.5 * (1.0 + spec.q_at(l))).collect();
    let q_s1 = q_sx[0];
    let third = match mode {
        OverlapMode::PaperLiteral => *q_sx.get(1).unwrap_or(&q_s1),
        OverlapMode::LevelConsistent if spec.k().total() >= 3 => sign_overlap(spec, 1, 3),
        OverlapMode::LevelConsistent => q_s1,
    };
    let q_s2 = third - 0.5 * (1.0 - sign_overlap(spec, 1, 2));
    if q_s2 < 0.0 {
        return Err(Error::InfeasibleTriple(q_s2));
    }
    Ok(OverlapParams { q_sx, q_s1, q_s2 })
}

/// First-level closed forms for two and three vectors.
pub fn closed_form_h(q: f64, k: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&q) {
        return Err(Error::OutOfRange { name: "q", value: q });
    }
    let q_s1 = 0.5 * (1.0 + q);
    let params = OverlapParams {
        q_sx: vec![q_s1],
        q_s1,
        q_s2: q_s1 - 0.5 * (1.0 - q_s1),
    };
    closed_form_from_params(&params, k)
}

pub(crate) fn closed_form_from_params(p: &OverlapParams, k: usize) -> Result<f64> {
    match k {
        2 => Ok(1.0 + scalar_entropy(p.q_s1)?),
        3 => {
            let third = p.third_agreement();
            Ok(1.0
                + scalar_entropy(p.q_s1)?
                + p.q_s1 * scalar_entropy(p.q_s2 / p.q_s1)?
                + (1.0 - p.q_s1) * scalar_entropy((third - p.q_s2) / (1.0 - p.q_s1))?)
        }
        _ => Err(Error::OutOfRange {
            name: "k",
            value: k as f64,
        }),
    }
}

/// Row-sorted coordinate-format matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseMatrix {
    pub rows: usize,
    pub cols: usize,
    /// `(row, col, value)`, 0-based.
    pub entries: Vec<(usize, usize, f64)>,
}

impl SparseMatrix {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.rows, self.cols);
        for &(r, c, v) in &self.entries {
            m[(r, c)] += v;
        }
        m
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        for &(r, c, v) in &self.entries {
            y[r] += v * x[c];
        }
        y
    }

    /// Plain-text triplets, 1-based: a `rows cols nnz` header, then `row col value`.
    pub fn write_triplets<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "{} {} {}", self.rows, self.cols, self.entries.len())?;
        for &(r, c, v) in &self.entries {
            writeln!(w, "{} {} {}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

/// One partition segment: signs of `v_1..v_step`, bit `j` set when `v_{j+1} = +`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct Segment {
    pub step: usize,
    pub pattern: u32,
}

/// Meaning of a constraint row, used to fill the right-hand side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum RowKind {
    /// Agreement of vector `vector` with the earlier vector `other`.
    Agreement { vector: usize, other: usize },
    /// Children of a segment sum to the parent variable.
    Split,
    /// Children of the step-4 slack plus the step-4 all-plus variable fill `q_s2`.
    SplitBaseSlack,
    /// Step-4 splitting of the fixed three-vector regions, `region` in 1..=3.
    BaseRegion(usize),
    /// Complemented agreement row: the atoms where the pair disagrees.
    Disagreement { vector: usize, other: usize },
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintMatrix {
    pub k: usize,
    pub a: SparseMatrix,
    /// One per variable; the final entry is the slack segment (no column).
    pub segments: Vec<Segment>,
    pub kinds: Vec<RowKind>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstraintSystem {
    pub k: usize,
    pub a: SparseMatrix,
    pub b: Vec<f64>,
    pub segments: Vec<Segment>,
    pub kinds: Vec<RowKind>,
}

impl ConstraintSystem {
    pub fn n_vars(&self) -> usize {
        self.segments.len()
    }

    /// The recursive system for `spec`, requires `k_s >= 4`.
    pub fn build(spec: &Spec, mode: OverlapMode) -> Result<Self> {
        let m = build_a(spec.k().total())?;
        let b = rhs(&m, spec, mode)?;
        Ok(Self::from_parts(m, b))
    }

    fn from_parts(m: ConstraintMatrix, b: Vec<f64>) -> Self {
        Self {
            k: m.k,
            a: m.a,
            b,
            segments: m.segments,
            kinds: m.kinds,
        }
    }

    /// Atom-level system with one agreement row per vector pair; valid for
    /// any `k_s >= 2`.
    pub fn pairwise(spec: &Spec, mode: OverlapMode) -> Result<Self> {
        let k = spec.k().total();
        if k > K_MAX {
            return Err(Error::SizeLimit { k, limit: K_MAX });
        }
        let params = overlap_params(spec, mode)?;
        let n_atoms = 1usize << (k - 1);
        let slack_pattern = slack_pattern(k);
        let patterns: Vec<u32> = (0..n_atoms as u32)
            .map(|a| (a << 1) | 1)
            .filter(|&p| p != slack_pattern)
            .chain(std::iter::once(slack_pattern))
            .collect();
        let cols = n_atoms - 1;
        let mut entries = Vec::new();
        let mut b = Vec::new();
        let mut kinds = Vec::new();
        for vector in 2..=k {
            for other in 1..vector {
                let target = match (other, vector) {
                    (1, 2) => params.q_s1,
                    (_, 3) => params.third_agreement(),
                    _ => sign_overlap(spec, other, vector),
                };
                let agree = |p: u32| ((p >> (vector - 1)) & 1) == ((p >> (other - 1)) & 1);
                let complement = agree(slack_pattern);
                let row = b.len();
                for (c, &p) in patterns[..cols].iter().enumerate() {
                    if agree(p) != complement {
                        entries.push((row, c, 1.0));
                    }
                }
                if complement {
                    b.push(1.0 - target);
                    kinds.push(RowKind::Disagreement { vector, other });
                } else {
                    b.push(target);
                    kinds.push(RowKind::Agreement { vector, other });
                }
            }
        }
        Ok(Self {
            k,
            a: SparseMatrix {
                rows: b.len(),
                cols,
                entries,
            },
            b,
            segments: patterns.iter().map(|&pattern| Segment { step: k, pattern }).collect(),
            kinds,
        })
    }
}

fn slack_pattern(k: usize) -> u32 {
    (1u32 << (k - 1)) - 1
}

fn bit(code: u32, j: usize, nbits: usize) -> bool {
    (code >> (nbits - j)) & 1 == 1
}

/// Agreement codes of the step-`k` block in column order.
fn block_codes(k: usize) -> Vec<u32> {
    let half = 1u32 << (k - 2);
    let full = (1u32 << (k - 1)) - 1;
    (half..full)
        .chain((1..half).rev())
        .chain(std::iter::once(full))
        .collect()
}

fn local_column(code: u32, k: usize) -> Option<usize> {
    let half = 1u32 << (k - 2);
    let full = (1u32 << (k - 1)) - 1;
    match code {
        0 => None,
        c if c == full => Some(full as usize - 1),
        c if c >= half => Some((c - half) as usize),
        c => Some((half - 1 + (half - 1 - c)) as usize),
    }
}

/// Segment of `v_1..v_k` for agreement code `code` of `v_k`.
fn code_segment(code: u32, k: usize) -> Segment {
    let nbits = k - 1;
    let lead = bit(code, 1, nbits);
    let mut pattern = 0u32;
    for j in 1..k {
        if bit(code, j, nbits) == lead {
            pattern |= 1 << (j - 1);
        }
    }
    if lead {
        pattern |= 1 << (k - 1);
    }
    Segment { step: k, pattern }
}

/// Code of the step-`(k-1)` parent of the step-`k` segment with code `code`.
fn parent_code(code: u32, k: usize) -> u32 {
    let nbits = k - 1;
    let last = bit(code, k - 1, nbits);
    (1..k - 1).fold(0u32, |acc, j| (acc << 1) | u32::from(bit(code, j, nbits) == last))
}

pub fn build_a(k: usize) -> Result<ConstraintMatrix> {
    build_a_with_limit(k, K_MAX)
}

/// As [`build_a`] with a custom size ceiling; the column count grows like `2^k`.
pub fn build_a_with_limit(k: usize, limit: usize) -> Result<ConstraintMatrix> {
    if k < 4 || k > limit {
        return Err(Error::SizeLimit { k, limit });
    }
    if k > K_MAX {
        eprintln!("warning: k = {k} needs about 2^{} variables", k);
    }
    let width = |kk: usize| (1usize << (kk - 1)) - 1;
    let height = |kk: usize| (kk - 1) + (1usize << (kk - 2)) - 1;
    // block k occupies the leftmost columns and topmost rows
    let mut col_off = HashMap::new();
    let mut row_off = HashMap::new();
    let (mut c0, mut r0) = (0, 0);
    for kk in (4..=k).rev() {
        col_off.insert(kk, c0);
        row_off.insert(kk, r0);
        c0 += width(kk);
        r0 += height(kk);
    }
    let mut entries = Vec::new();
    let mut kinds = vec![RowKind::Split; r0];
    let mut segments = Vec::with_capacity(c0 + 1);
    for kk in (4..=k).rev() {
        let codes = block_codes(kk);
        let cols = col_off[&kk];
        let rows = row_off[&kk];
        segments.extend(codes.iter().map(|&c| code_segment(c, kk)));
        for j in 1..kk {
            let r = rows + j - 1;
            kinds[r] = RowKind::Agreement { vector: kk, other: j };
            for (c, &code) in codes.iter().enumerate() {
                if bit(code, j, kk - 1) {
                    entries.push((r, cols + c, 1.0));
                }
            }
        }
        let half = 1usize << (kk - 2);
        for s in 1..half {
            let r = rows + kk - 1 + s - 1;
            let c1 = half - s - 1;
            let c2 = c1 + half - 1;
            entries.push((r, cols + c1, 1.0));
            entries.push((r, cols + c2, 1.0));
            if kk == 4 {
                kinds[r] = RowKind::BaseRegion(s);
                continue;
            }
            let prev = kk - 1;
            match local_column(parent_code(codes[c1], kk), prev) {
                Some(pc) => entries.push((r, col_off[&prev] + pc, -1.0)),
                None if kk == 5 => {
                    entries.push((r, col_off[&prev] + width(prev) - 1, 1.0));
                    kinds[r] = RowKind::SplitBaseSlack;
                }
                None => {
                    entries.push((r, col_off[&prev] + width(prev) - 1, 1.0));
                    entries.push((r, col_off[&(prev - 1)] + width(prev - 1) - 1, -1.0));
                }
            }
        }
    }
    segments.push(code_segment(0, k));
    entries.sort_by_key(|e| (e.0, e.1));
    Ok(ConstraintMatrix {
        k,
        a: SparseMatrix {
            rows: r0,
            cols: c0,
            entries,
        },
        segments,
        kinds,
    })
}

fn rhs(m: &ConstraintMatrix, spec: &Spec, mode: OverlapMode) -> Result<Vec<f64>> {
    if spec.k().total() != m.k {
        return Err(Error::Parse(format!(
            "matrix built for k = {} used with k_s = {}",
            m.k,
            spec.k().total()
        )));
    }
    let p = overlap_params(spec, mode)?;
    Ok(m.kinds
        .iter()
        .map(|kind| match *kind {
            RowKind::Agreement { vector, other } => sign_overlap(spec, other, vector),
            RowKind::Disagreement { vector, other } => 1.0 - sign_overlap(spec, other, vector),
            RowKind::Split => 0.0,
            RowKind::SplitBaseSlack => p.q_s2,
            RowKind::BaseRegion(1) => p.q_s1 - p.q_s2,
            RowKind::BaseRegion(_) => 0.5 * (1.0 - p.q_s1),
        })
        .collect())
}

/// Right-hand side of the recursive system for `spec`.
pub fn build_b(spec: &Spec, mode: OverlapMode) -> Result<Vec<f64>> {
    let k = spec.k().total();
    if k < 4 {
        return Err(Error::SizeLimit { k, limit: K_MAX });
    }
    rhs(&build_a(k)?, spec, mode)
}

#[derive(Debug, Clone, Serialize)]
pub struct EntropySolution {
    /// Masses of the `2^{k_s - 1}` finest segments, summing to one.
    pub a: Vec<f64>,
    /// Every variable of the system (columns, then slack).
    pub full: Vec<f64>,
    /// `1 + h_v(a)` in bits.
    pub h: f64,
    /// Multipliers of the independent rows kept by the reduction; the
    /// first one belongs to the normalization row.
    pub dual: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Linear map from system variables onto atoms, with a maximal independent
/// set of constraint rows. Depends on the matrix only, not on `b`.
#[derive(Debug, Clone)]
pub struct AtomProgram {
    k: usize,
    /// Row 0 is normalization; the rest are atom-level images of `rows`.
    m: DMatrix<f64>,
    rows: Vec<usize>,
    segments: Vec<Segment>,
}

fn segment_atoms(seg: Segment, k: usize) -> impl Iterator<Item = usize> {
    let low = (seg.pattern >> 1) as usize;
    let shift = seg.step - 1;
    (0..1usize << (k - seg.step)).map(move |hi| low | (hi << shift))
}

impl AtomProgram {
    pub fn new(a: &SparseMatrix, segments: &[Segment], k: usize) -> Self {
        let n = 1usize << (k - 1);
        let mut dense_rows: Vec<Vec<f64>> = vec![vec![0.0; n]; a.rows];
        for &(r, c, v) in &a.entries {
            for atom in segment_atoms(segments[c], k) {
                dense_rows[r][atom] += v;
            }
        }
        let mut basis: Vec<Vec<f64>> = vec![vec![1.0 / (n as f64).sqrt(); n]];
        let mut kept_rows = Vec::new();
        let mut kept: Vec<Vec<f64>> = vec![vec![1.0; n]];
        for (r, row) in dense_rows.into_iter().enumerate() {
            let norm0 = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm0 == 0.0 {
                continue;
            }
            let mut w = row.clone();
            for _ in 0..2 {
                for e in &basis {
                    let dot: f64 = w.iter().zip(e).map(|(x, y)| x * y).sum();
                    w.iter_mut().zip(e).for_each(|(x, y)| *x -= dot * y);
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-9 * norm0 {
                w.iter_mut().for_each(|x| *x /= norm);
                basis.push(w);
                kept.push(row);
                kept_rows.push(r);
            }
        }
        let m = DMatrix::from_fn(kept.len(), n, |r, c| kept[r][c]);
        Self {
            k,
            m,
            rows: kept_rows,
            segments: segments.to_vec(),
        }
    }

    pub fn n_atoms(&self) -> usize {
        self.m.ncols()
    }

    /// Number of independent constraints including normalization.
    pub fn rank(&self) -> usize {
        self.m.nrows()
    }

    pub fn solve(&self, a: &SparseMatrix, b: &[f64]) -> Result<EntropySolution> {
        let mut rhs = Vec::with_capacity(self.rows.len() + 1);
        rhs.push(1.0);
        rhs.extend(self.rows.iter().map(|&r| b[r]));
        let rhs = DVector::from_vec(rhs);
        let (atoms, dual, iterations) = match dual_newton(&self.m, &rhs) {
            Ok(v) => v,
            Err(Error::NotConverged { .. }) => {
                let atoms = projected_gradient(&self.m, &rhs);
                (atoms, DVector::zeros(rhs.len()), 0)
            }
            Err(e) => return Err(e),
        };
        let full: Vec<f64> = self
            .segments
            .iter()
            .map(|&s| segment_atoms(s, self.k).map(|i| atoms[i]).sum())
            .collect();
        let cols = &full[..a.cols];
        let resid = a
            .mul_vec(cols)
            .iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs())
            .fold((atoms.iter().sum::<f64>() - 1.0).abs(), f64::max);
        if resid > TOL_FEAS {
            return Err(Error::Infeasible(format!("residual {resid:e} after solve")));
        }
        let a_vec: Vec<f64> = atoms.iter().cloned().collect();
        let h = 1.0 - a_vec.iter().map(|&x| xlog2x(x)).sum::<f64>();
        Ok(EntropySolution {
            a: a_vec,
            full,
            h,
            dual: dual.iter().cloned().collect(),
            kkt_residual: resid,
            iterations,
        })
    }
}

fn primal(m: &DMatrix<f64>, lam: &DVector<f64>) -> DVector<f64> {
    m.tr_mul(lam).map(|eta| (-1.0 - eta).min(700.0).exp())
}

/// Newton's method on the entropy dual `g(l) = sum_i exp(-1 - (M^T l)_i) + l.b`.
fn dual_newton(m: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DVector<f64>, usize)> {
    const MAX_IT: usize = 200;
    let n = m.ncols() as f64;
    let mut lam = DVector::zeros(m.nrows());
    lam[0] = n.ln() - 1.0;
    let mut a = primal(m, &lam);
    let mut g = a.sum() + lam.dot(b);
    for it in 0..MAX_IT {
        let grad = b - m * &a;
        let resid = grad.amax();
        if resid < 1e-13 {
            return Ok((a, lam, it));
        }
        let mut scaled = m.clone();
        for (j, mut col) in scaled.column_iter_mut().enumerate() {
            col *= a[j];
        }
        let hess = &scaled * m.transpose();
        let step = match hess.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => {
                let ridge = hess.clone() + DMatrix::identity(hess.nrows(), hess.nrows()) * 1e-12 * hess.amax();
                ridge.lu().solve(&grad).ok_or(Error::NotConverged {
                    iterations: it,
                    residual: resid,
                })?
            }
        };
        let dir = -step;
        let slope = grad.dot(&dir);
        let mut t = 1.0;
        loop {
            let trial = &lam + &dir * t;
            let a_t = primal(m, &trial);
            let g_t = a_t.sum() + trial.dot(b);
            // near the optimum g stops resolving in floating point; the
            // gradient still does
            let closer = (b - m * &a_t).amax() < resid;
            if g_t <= g + 1e-4 * t * slope || (closer && g_t <= g + 1e-12 * g.abs()) || t < 1e-12 {
                lam = trial;
                a = a_t;
                g = g_t;
                break;
            }
            t *= 0.5;
        }
        if !g.is_finite() || g < -1e8 || lam.amax() > 1e8 {
            return Err(Error::Infeasible(format!("dual diverges (residual {resid:e})")));
        }
    }
    let resid = (b - m * &a).amax();
    if resid < 0.1 * TOL_FEAS {
        return Ok((a, lam, MAX_IT));
    }
    Err(Error::NotConverged {
        iterations: MAX_IT,
        residual: resid,
    })
}

fn project_simplex(v: &DVector<f64>) -> DVector<f64> {
    let mut u: Vec<f64> = v.iter().cloned().collect();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut css = 0.0;
    let mut theta = 0.0;
    for (i, &ui) in u.iter().enumerate() {
        css += ui;
        let t = (css - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            theta = t;
        }
    }
    v.map(|x| (x - theta).max(0.0))
}

/// Fallback: projected gradient on a penalized entropy objective.
fn projected_gradient(m: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let n = m.ncols();
    let mut a = DVector::from_element(n, 1.0 / n as f64);
    let mut rho = 10.0;
    let lip = m.norm().powi(2);
    for _ in 0..8 {
        let step = 1.0 / (rho * lip + 1e3);
        for _ in 0..5000 {
            let r = m * &a - b;
            let ent = a.map(|x| if x > 1e-300 { x.ln() + 1.0 } else { -690.0 });
            let grad = ent + m.tr_mul(&r) * rho;
            a = project_simplex(&(&a - grad * step));
        }
        rho *= 10.0;
    }
    a
}

/// Solves the maximum-entropy program of `sys` over the finest segments.
pub fn max_entropy_solve(sys: &ConstraintSystem) -> Result<EntropySolution> {
    AtomProgram::new(&sys.a, &sys.segments, sys.k).solve(&sys.a, &sys.b)
}

/// Prepared recursive program for one `k_s`, shared across overlap values.
#[derive(Debug)]
pub struct EntropyProgram {
    pub matrix: ConstraintMatrix,
    pub atoms: AtomProgram,
}

impl EntropyProgram {
    /// Cached per `k`; building the `k = 12` reduction takes a noticeable moment.
    pub fn for_k(k: usize) -> Result<Arc<Self>> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<EntropyProgram>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        if let Some(p) = cache.lock().unwrap().get(&k) {
            return Ok(p.clone());
        }
        let matrix = build_a(k)?;
        let atoms = AtomProgram::new(&matrix.a, &matrix.segments, k);
        let prog = Arc::new(Self { matrix, atoms });
        cache.lock().unwrap().insert(k, prog.clone());
        Ok(prog)
    }

    pub fn solve(&self, spec: &Spec, mode: OverlapMode) -> Result<EntropySolution> {
        let b = rhs(&self.matrix, spec, mode)?;
        self.atoms.solve(&self.matrix.a, &b)
    }
}

fn binomial(n: u64, k: u64) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i + 1) as u128)
}

/// Exact number of `k_s`-tuples in `{+-1}^n` whose pairwise agreement counts
/// equal `(1 + q_level) n / 2`, summed over all type (sign-pattern count)
/// vectors. Returns 0 when the targets admit no integral type.
pub fn brute_force_count(n: usize, spec: &Spec) -> Result<u128> {
    let k = spec.k().total();
    if n > 20 || n == 0 || k > 4 {
        return Err(Error::SizeLimit { k: k.max(n), limit: 20 });
    }
    let mut targets = vec![vec![0usize; k + 1]; k + 1];
    for i in 1..=k {
        for j in (i + 1)..=k {
            let t = sign_overlap(spec, i, j) * n as f64;
            if (t - t.round()).abs() > 1e-9 {
                return Err(Error::TargetsNotIntegral(t));
            }
            targets[i][j] = t.round() as usize;
        }
    }
    let n_types = 1usize << (k - 1);
    let patterns: Vec<u32> = (0..n_types as u32).map(|a| (a << 1) | 1).collect();
    let mut counts = vec![0usize; n_types];
    let mut total = 0u128;

    fn recurse(
        idx: usize,
        left: usize,
        counts: &mut Vec<usize>,
        patterns: &[u32],
        targets: &[Vec<usize>],
        k: usize,
        n: usize,
        total: &mut u128,
    ) {
        if idx + 1 == counts.len() {
            counts[idx] = left;
            for i in 1..=k {
                for j in (i + 1)..=k {
                    let agree: usize = patterns
                        .iter()
                        .zip(counts.iter())
                        .filter(|(p, _)| ((*p >> (i - 1)) & 1) == ((*p >> (j - 1)) & 1))
                        .map(|(_, c)| *c)
                        .sum();
                    if agree != targets[i][j] {
                        return;
                    }
                }
            }
            let mut ways = 1u128;
            let mut rem = n as u64;
            for &c in counts.iter() {
                ways *= binomial(rem, c as u64);
                rem -= c as u64;
            }
            *total += ways;
            return;
        }
        for c in 0..=left {
            counts[idx] = c;
            recurse(idx + 1, left - c, counts, patterns, targets, k, n, total);
        }
    }

    recurse(0, n, &mut counts, &patterns, &targets, k, n, &mut total);
    Ok(total << n)
}
