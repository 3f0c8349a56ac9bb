//! Lifting-level capacity estimates and their comparison with the union
//! bounds, plus the rule that turns a `c` sequence into cluster sizes.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bound::BoundResult;
use crate::core::ClusterSequence;
use crate::error::{Error, Result};

const FIXTURE_TEXT: &str = include_str!("../data/rdt_fixtures.txt");

/// SHA-256 of the canonical fixture file.
pub const FIXTURE_SHA256: &str = "666500c08c025d7ef709eee5908eb5c43d58e5360bc60004a7072909db61797b";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RdtLiftingFixture {
    pub r: usize,
    pub alpha_c_r: f64,
    /// Empty when the level has no reported parameters.
    pub p_hat: Vec<f64>,
    pub c_hat: Vec<f64>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn parse_vec(field: &str) -> Result<Vec<f64>> {
    if field == "-" {
        return Ok(Vec::new());
    }
    field
        .split(',')
        .map(|v| v.parse().map_err(|_| Error::Parse(format!("fixture value {v:?}"))))
        .collect()
}

/// Parses fixture text in the shipped format.
pub fn parse_fixtures(text: &str) -> Result<Vec<RdtLiftingFixture>> {
    let mut out = Vec::new();
    let mut format_seen = false;
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        match fields.as_slice() {
            ["format", "1"] => format_seen = true,
            ["format", v] => return Err(Error::Parse(format!("unsupported fixture format {v}"))),
            ["r", r, alpha, p, c] => out.push(RdtLiftingFixture {
                r: r.parse().map_err(|_| Error::Parse(format!("level {r:?}")))?,
                alpha_c_r: alpha.parse().map_err(|_| Error::Parse(format!("alpha {alpha:?}")))?,
                p_hat: parse_vec(p)?,
                c_hat: parse_vec(c)?,
            }),
            _ => return Err(Error::Parse(format!("fixture line {line:?}"))),
        }
    }
    if !format_seen {
        return Err(Error::Parse("fixture file lacks a format line".into()));
    }
    Ok(out)
}

/// Checks `text` against the canonical hash, then parses it.
pub fn verified_fixtures(text: &str) -> Result<Vec<RdtLiftingFixture>> {
    let digest = sha256_hex(text.as_bytes());
    if digest != FIXTURE_SHA256 {
        return Err(Error::FixtureMismatch(format!(
            "fixture hash {digest} differs from {FIXTURE_SHA256}"
        )));
    }
    parse_fixtures(text)
}

/// The embedded fixtures, hash-checked.
pub fn fixtures() -> Result<Vec<RdtLiftingFixture>> {
    verified_fixtures(FIXTURE_TEXT)
}

pub fn fixture(r: usize) -> Result<RdtLiftingFixture> {
    fixtures()?.into_iter().find(|f| f.r == r).ok_or(Error::NoFixture(r))
}

/// `k_i = k_{i-1} * round(c_i / c_{i-1})`, rounding half away from zero.
pub fn suggest_k_from_c(c_hat: &[f64]) -> Result<ClusterSequence> {
    if c_hat.is_empty() || c_hat[0] != 1.0 {
        return Err(Error::Parse("c sequence must start with 1".into()));
    }
    if let Some(&bad) = c_hat.iter().find(|c| !(**c > 0.0) || !c.is_finite()) {
        return Err(Error::OutOfRange {
            name: "c_hat",
            value: bad,
        });
    }
    let mut k = vec![1usize];
    for i in 1..c_hat.len() {
        let ratio = (c_hat[i] / c_hat[i - 1]).round();
        if ratio < 1.0 {
            return Err(Error::ZeroRatio(i));
        }
        k.push(k[i - 1] * ratio as usize);
    }
    ClusterSequence::new(k)
}

#[derive(Debug, Clone, Serialize)]
pub struct CoordinateView {
    pub index: usize,
    pub q: Option<f64>,
    pub p_hat: Option<f64>,
    pub k_ratio: Option<f64>,
    pub c_ratio: Option<f64>,
}

/// Side-by-side record of a level-`s` bound and the level-`s + 2` estimate.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub s: usize,
    pub r: usize,
    pub alpha_bar: f64,
    pub alpha_c_r: f64,
    /// `alpha_bar - alpha_c_r`.
    pub delta: f64,
    /// Whether the bound sits at or below the lifting estimate.
    pub bound_below_estimate: bool,
    pub coordinates: Vec<CoordinateView>,
}

pub fn comparison_report(s: usize, computed: &BoundResult) -> Result<ComparisonReport> {
    let fx = fixture(s + 2)?;
    let q = computed.spec.q().as_slice();
    let k = computed.spec.k().as_slice();
    let n = (s + 1).max(fx.p_hat.len()).max(fx.c_hat.len());
    let coordinates = (0..n)
        .map(|i| CoordinateView {
            index: i,
            q: (i <= s).then(|| q[i]),
            p_hat: fx.p_hat.get(i).copied(),
            k_ratio: (i <= s).then(|| k[i] as f64 / k[i.saturating_sub(1)] as f64),
            c_ratio: fx.c_hat.get(i).map(|c| c / fx.c_hat[i.saturating_sub(1)]),
        })
        .collect();
    let delta = computed.alpha_bar - fx.alpha_c_r;
    Ok(ComparisonReport {
        s,
        r: fx.r,
        alpha_bar: computed.alpha_bar,
        alpha_c_r: fx.alpha_c_r,
        delta,
        bound_below_estimate: delta <= 0.0,
        coordinates,
    })
}
