//! Oracle checks behind `ogp-bounds verify`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::combfactor::{
    brute_force_count, closed_form_h, max_entropy_solve, ConstraintSystem, EntropyProgram, OverlapMode,
};
use crate::core::build_overlap_matrix;
use crate::error::{Error, Result};
use crate::probfactor::{mc_orthant_prob, nested_prob, QuadratureConfig};
use crate::rdtlink;
use crate::Spec;

use super::{table_fixtures_verified, TABLE_FIXTURE_TEXT};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub scope: &'static str,
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(scope: &'static str, name: String, passed: bool, detail: String) -> Self {
        Self {
            scope,
            name,
            passed,
            detail,
        }
    }
}

/// Random valid specs with `s <= 3` and `k_s <= max_total`.
pub fn random_specs(count: usize, max_total: usize, seed: u64) -> Vec<Spec> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let s = rng.random_range(1..=3);
        let mut k = vec![1usize];
        for _ in 0..s {
            let last = *k.last().unwrap();
            let room = max_total / last;
            if room < 2 {
                break;
            }
            k.push(last * rng.random_range(2..=room.min(4)));
        }
        let levels = k.len() - 1;
        let mut q: Vec<f64> = (0..levels).map(|_| rng.random_range(0.05..0.95)).collect();
        q.sort_by(|a, b| b.total_cmp(a));
        let kappa = [0.5, 1.0, 2.0][rng.random_range(0..3)];
        if let Ok(spec) = Spec::from_parts(&k, &q, kappa) {
            out.push(spec);
        }
    }
    out
}

pub fn quadrature(samples: u64, seed: u64, quad: &QuadratureConfig) -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for (i, spec) in random_specs(10, 8, seed).iter().enumerate() {
        let pf = nested_prob(spec, quad)?;
        let (mc, se) = mc_orthant_prob(&build_overlap_matrix(spec), spec.kappa(), samples, seed + i as u64)?;
        let z = (pf.p - mc) / se.max(f64::MIN_POSITIVE);
        checks.push(Check::new(
            "quadrature",
            format!("k={} q={:?} kappa={}", spec.k(), spec.q().interior(), spec.kappa()),
            z.abs() <= 4.0,
            format!("quadrature {:.6e} monte carlo {:.6e} z {:+.2}", pf.p, mc, z),
        ));
    }
    Ok(checks)
}

pub fn entropy() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for k in [2usize, 3] {
        let mut worst = 0.0f64;
        for i in 0..20 {
            let q = 0.02 + 0.96 * i as f64 / 19.0;
            let spec = Spec::from_parts(&[1, k], &[q], 1.0)?;
            let sys = ConstraintSystem::pairwise(&spec, OverlapMode::LevelConsistent)?;
            let sol = max_entropy_solve(&sys)?;
            worst = worst.max((sol.h - closed_form_h(q, k)?).abs());
        }
        checks.push(Check::new(
            "entropy",
            format!("closed form k={k}"),
            worst <= 1e-9,
            format!("max |program - closed form| {worst:.2e} over 20 overlaps"),
        ));
    }
    let prog = EntropyProgram::for_k(4)?;
    let mut worst = 0.0f64;
    for q in [0.3, 0.6, 0.9, 0.97, 0.995] {
        let spec = Spec::from_parts(&[1, 4], &[q], 1.0)?;
        let recursive = prog.solve(&spec, OverlapMode::LevelConsistent)?.h;
        let pairwise = max_entropy_solve(&ConstraintSystem::pairwise(&spec, OverlapMode::LevelConsistent)?)?.h;
        worst = worst.max((recursive - pairwise).abs());
    }
    checks.push(Check::new(
        "entropy",
        "recursive vs pairwise k=4".into(),
        worst <= 1e-9,
        format!("max |difference| {worst:.2e} over 5 overlaps"),
    ));
    Ok(checks)
}

/// Integral agreement counts `t` for which the unique type has all cells positive.
pub fn integral_overlaps(n: usize, k: usize) -> Vec<f64> {
    (n / 2 + 1..n)
        .filter(|&t| k == 2 || (3 * t > n && (3 * t - n).is_multiple_of(2)))
        .map(|t| 2.0 * t as f64 / n as f64 - 1.0)
        .collect()
}

pub fn enumeration() -> Result<Vec<Check>> {
    let mut checks = Vec::new();
    for k in [2usize, 3] {
        let slack = (k * (k - 1) / 2) as f64;
        for n in [8usize, 12, 16] {
            let mut worst_ratio = 0.0f64;
            let mut tested = 0;
            for q in integral_overlaps(n, k) {
                let spec = Spec::from_parts(&[1, k], &[q], 1.0)?;
                let count = brute_force_count(n, &spec)?;
                if count == 0 {
                    continue;
                }
                let rate = (count as f64).log2() / n as f64;
                let allowed = slack * ((n + 1) as f64).log2() / n as f64;
                worst_ratio = worst_ratio.max((rate - closed_form_h(q, k)?).abs() / allowed);
                tested += 1;
            }
            checks.push(Check::new(
                "enumeration",
                format!("k={k} n={n}"),
                tested > 0 && worst_ratio <= 1.0,
                format!("configurations tested: {tested}, worst gap {worst_ratio:.3} of the allowance"),
            ));
        }
    }
    Ok(checks)
}

pub fn fixtures() -> Vec<Check> {
    let mut checks = Vec::new();
    let lifting = rdtlink::fixtures();
    let row = lifting
        .as_ref()
        .map(|f| f.iter().map(|x| x.alpha_c_r).collect::<Vec<_>>())
        .unwrap_or_default();
    checks.push(Check::new(
        "fixtures",
        "lifting estimates".into(),
        row == [4.2250, 1.8159, 1.6576, 1.6218, 1.6093, 1.6041, 1.6021],
        match &lifting {
            Ok(_) => format!("sha256 {} ok", rdtlink::FIXTURE_SHA256),
            Err(e) => e.to_string(),
        },
    ));
    let tables = table_fixtures_verified();
    checks.push(Check::new(
        "fixtures",
        "union-bound tables".into(),
        tables.as_ref().is_ok_and(|t| t.len() == 41),
        match &tables {
            Ok(t) => format!(
                "sha256 {} ok, {} rows",
                rdtlink::sha256_hex(TABLE_FIXTURE_TEXT.as_bytes()),
                t.len()
            ),
            Err(e) => e.to_string(),
        },
    ));
    checks
}

/// Error to surface when any check failed; fixture failures take precedence.
pub fn outcome(checks: &[Check]) -> Result<()> {
    let failed: Vec<&Check> = checks.iter().filter(|c| !c.passed).collect();
    if failed.is_empty() {
        return Ok(());
    }
    let names = failed.iter().map(|c| c.name.as_str()).collect::<Vec<_>>().join("; ");
    if failed.iter().any(|c| c.scope == "fixtures") {
        Err(Error::FixtureMismatch(names))
    } else {
        Err(Error::CheckFailed(names))
    }
}
