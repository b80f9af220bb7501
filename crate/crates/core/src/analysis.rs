//! Notary committee sizing.
//!
//! A committee of `m` is drawn without replacement from `N` nodes of which
//! `K` are Byzantine, so the Byzantine count is hypergeometric. The
//! committee fails when that count exceeds the fault bound of agreement.
//! Tails around `2^-80` underflow naive products, so the scan works in log
//! space and every answer is re-checked with exact integers.

use std::fmt;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AnalysisError {
    #[error("invalid parameters: N={population}, K={byzantine}, m={size}")]
    Domain { population: u64, byzantine: u64, size: u64 },
    #[error("no committee size up to {population} reaches 2^{target_log2}")]
    Infeasible { population: u64, target_log2: i32 },
}

/// Which Byzantine count breaks a committee of `m`.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Default, Serialize, Deserialize)]
pub enum Convention {
    /// More than `⌊(m−1)/3⌋` faulty members (agreement's bound).
    #[default]
    FaultBound,
    /// More than `⌊m/3⌋` faulty members.
    OneThird,
}

impl Convention {
    pub fn tolerated(self, m: u64) -> u64 {
        match self {
            Convention::FaultBound => m.saturating_sub(1) / 3,
            Convention::OneThird => m / 3,
        }
    }
}

fn check(population: u64, byzantine: u64, size: u64) -> Result<(), AnalysisError> {
    if byzantine > population || size == 0 || size > population {
        return Err(AnalysisError::Domain { population, byzantine, size });
    }
    Ok(())
}

fn ln_choose(n: u64, k: u64) -> f64 {
    ln_gamma(n as f64 + 1.0) - ln_gamma(k as f64 + 1.0) - ln_gamma((n - k) as f64 + 1.0)
}

/// `P[X = x]` for `X ~ Hypergeometric(N, K, m)`.
pub fn hypergeometric_pmf(population: u64, byzantine: u64, size: u64, x: u64) -> f64 {
    let honest = population - byzantine;
    if x > byzantine || x > size || size - x > honest {
        return 0.0;
    }
    (ln_choose(byzantine, x) + ln_choose(honest, size - x) - ln_choose(population, size)).exp()
}

/// Natural log of `P[X > tolerated(m)]`; `-inf` when the tail is empty.
pub fn ln_fail_prob_with(
    population: u64,
    byzantine: u64,
    size: u64,
    convention: Convention,
) -> Result<f64, AnalysisError> {
    check(population, byzantine, size)?;
    let honest = population - byzantine;
    let lo = (convention.tolerated(size) + 1).max(size.saturating_sub(honest));
    let hi = byzantine.min(size);
    if lo > hi {
        return Ok(f64::NEG_INFINITY);
    }
    let mut ln_term = ln_choose(byzantine, lo) + ln_choose(honest, size - lo)
        - ln_choose(population, size);
    let mut terms = Vec::new();
    let mut peak = f64::NEG_INFINITY;
    let mut x = lo;
    loop {
        terms.push(ln_term);
        peak = peak.max(ln_term);
        if x == hi {
            break;
        }
        let ratio = ((byzantine - x) as f64 * (size - x) as f64)
            / ((x + 1) as f64 * (honest + x + 1 - size) as f64);
        ln_term += ratio.ln();
        x += 1;
        // Past the mode the terms only shrink; stop once they are noise.
        if ratio < 1.0 && ln_term < peak - 80.0 {
            break;
        }
    }
    // Compensated sum of exp(term - peak).
    let mut sum = 0.0f64;
    let mut carry = 0.0f64;
    for t in &terms {
        let y = (t - peak).exp() - carry;
        let s = sum + y;
        carry = (s - sum) - y;
        sum = s;
    }
    Ok(peak + sum.ln())
}

pub fn ln_fail_prob(population: u64, byzantine: u64, size: u64) -> Result<f64, AnalysisError> {
    ln_fail_prob_with(population, byzantine, size, Convention::FaultBound)
}

pub fn fail_prob(population: u64, byzantine: u64, size: u64) -> Result<f64, AnalysisError> {
    Ok(ln_fail_prob(population, byzantine, size)?.exp())
}

/// An exact probability `numerator / denominator`.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExactProb {
    pub numerator: BigUint,
    pub denominator: BigUint,
}

impl ExactProb {
    /// `self ≤ 2^exp` for `exp ≤ 0`.
    pub fn at_most_pow2(&self, exp: i32) -> bool {
        assert!(exp <= 0, "exponent must be non-positive");
        (&self.numerator << (-exp) as usize) <= self.denominator
    }

    /// `log2(self)`, accurate to about 1e-12 absolute.
    pub fn log2(&self) -> f64 {
        if self.numerator.is_zero() {
            return f64::NEG_INFINITY;
        }
        log2_big(&self.numerator) - log2_big(&self.denominator)
    }
}

fn log2_big(v: &BigUint) -> f64 {
    let bits = v.bits();
    let shift = bits.saturating_sub(64);
    let top = (v >> shift).to_f64().unwrap_or(f64::MAX);
    top.log2() + shift as f64
}

fn binomial(n: u64, k: u64) -> BigUint {
    if k > n {
        return BigUint::zero();
    }
    let k = k.min(n - k);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= n - i;
        acc /= i + 1;
    }
    acc
}

/// `P[X > tolerated(m)]` as an exact fraction.
pub fn fail_prob_exact_with(
    population: u64,
    byzantine: u64,
    size: u64,
    convention: Convention,
) -> Result<ExactProb, AnalysisError> {
    check(population, byzantine, size)?;
    let honest = population - byzantine;
    let denominator = binomial(population, size);
    let lo = (convention.tolerated(size) + 1).max(size.saturating_sub(honest));
    let hi = byzantine.min(size);
    let mut numerator = BigUint::zero();
    if lo <= hi {
        let mut bad = binomial(byzantine, lo);
        let mut good = binomial(honest, size - lo);
        for x in lo..=hi {
            numerator += &bad * &good;
            if x == hi {
                break;
            }
            bad *= byzantine - x;
            bad /= x + 1;
            good *= size - x;
            good /= honest + x + 1 - size;
        }
    }
    Ok(ExactProb { numerator, denominator })
}

pub fn fail_prob_exact(population: u64, byzantine: u64, size: u64) -> Result<ExactProb, AnalysisError> {
    fail_prob_exact_with(population, byzantine, size, Convention::FaultBound)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct SizingQuery {
    pub population: u64,
    pub byzantine: u64,
    /// Target failure probability `2^target_log2`, non-positive.
    pub target_log2: i32,
}

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Sizing {
    pub size: u64,
    pub log2_fail: f64,
}

/// Float verdicts this close to the target are settled exactly.
const EXACT_BAND: f64 = 1e-3;

fn qualifies(
    q: &SizingQuery,
    m: u64,
    convention: Convention,
) -> Result<(bool, f64), AnalysisError> {
    let log2 = ln_fail_prob_with(q.population, q.byzantine, m, convention)? / std::f64::consts::LN_2;
    let target = q.target_log2 as f64;
    if (log2 - target).abs() < EXACT_BAND {
        let exact = fail_prob_exact_with(q.population, q.byzantine, m, convention)?;
        return Ok((exact.at_most_pow2(q.target_log2), log2));
    }
    Ok((log2 <= target, log2))
}

/// Smallest `m` whose failure probability is at most `2^target_log2`.
///
/// The tail is not monotone in `m`, so this scans upward from 1 and the
/// first hit is the answer. The hit is re-verified exactly.
pub fn min_notary_size_with(q: SizingQuery, convention: Convention) -> Result<Sizing, AnalysisError> {
    if q.target_log2 > 0 {
        return Err(AnalysisError::Domain {
            population: q.population,
            byzantine: q.byzantine,
            size: 0,
        });
    }
    check(q.population, q.byzantine, 1)?;
    for m in 1..=q.population {
        let (ok, log2) = qualifies(&q, m, convention)?;
        if ok {
            let exact = fail_prob_exact_with(q.population, q.byzantine, m, convention)?;
            if exact.at_most_pow2(q.target_log2) {
                return Ok(Sizing { size: m, log2_fail: log2 });
            }
        }
    }
    Err(AnalysisError::Infeasible { population: q.population, target_log2: q.target_log2 })
}

pub fn min_notary_size(q: SizingQuery) -> Result<Sizing, AnalysisError> {
    min_notary_size_with(q, Convention::FaultBound)
}

/// One cell of the quoted sizing table.
#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
pub struct TableCell {
    pub population: u64,
    /// Byzantine ratio is `1 / ratio_denominator`.
    pub ratio_denominator: u64,
    pub target_log2: i32,
    pub quoted: u64,
}

impl TableCell {
    pub fn query(&self) -> SizingQuery {
        SizingQuery {
            population: self.population,
            byzantine: self.population / self.ratio_denominator,
            target_log2: self.target_log2,
        }
    }
}

/// The twelve quoted cells in row order (target −40, −60, −80).
pub const REFERENCE_TABLE: [TableCell; 12] = {
    const fn c(population: u64, ratio_denominator: u64, target_log2: i32, quoted: u64) -> TableCell {
        TableCell { population, ratio_denominator, target_log2, quoted }
    }
    [
        c(10_000, 4, -40, 1237),
        c(10_000, 5, -40, 481),
        c(100_000, 4, -40, 1402),
        c(100_000, 5, -40, 489),
        c(10_000, 4, -60, 1789),
        c(10_000, 5, -60, 724),
        c(100_000, 4, -60, 2165),
        c(100_000, 5, -60, 774),
        c(10_000, 4, -80, 2272),
        c(10_000, 5, -80, 952),
        c(100_000, 4, -80, 2900),
        c(100_000, 5, -80, 1054),
    ]
};

#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
pub struct CellReport {
    pub cell: TableCell,
    pub computed: u64,
    pub log2_fail: f64,
    /// `log2 fail(quoted)` under the default convention.
    pub quoted_log2_fail: f64,
    /// Minimum size under the `⌊m/3⌋` convention, for diagnosis.
    pub one_third_size: u64,
}

impl CellReport {
    pub fn matches(&self) -> bool {
        self.computed == self.cell.quoted
    }

    pub fn diagnosis(&self) -> String {
        if self.matches() {
            return "match".to_string();
        }
        let verdict = if self.quoted_log2_fail <= self.cell.target_log2 as f64 {
            "meets target, but a smaller size already qualifies"
        } else {
            "misses target"
        };
        format!(
            "quoted {} has log2 fail {:.3} ({verdict}); computed {} ({:+}); \
             the floor(m/3) convention gives {}",
            self.cell.quoted,
            self.quoted_log2_fail,
            self.computed,
            self.computed as i64 - self.cell.quoted as i64,
            self.one_third_size,
        )
    }
}

impl fmt::Display for CellReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "N={} ratio=1/{} target=2^{} quoted={} computed={} log2_fail={:.3} {}",
            self.cell.population,
            self.cell.ratio_denominator,
            self.cell.target_log2,
            self.cell.quoted,
            self.computed,
            self.log2_fail,
            if self.matches() { "MATCH" } else { "MISMATCH" }
        )
    }
}

pub fn evaluate_cell(cell: TableCell) -> Result<CellReport, AnalysisError> {
    let q = cell.query();
    let s = min_notary_size(q)?;
    let quoted_log2_fail =
        ln_fail_prob(q.population, q.byzantine, cell.quoted)? / std::f64::consts::LN_2;
    let one_third = min_notary_size_with(q, Convention::OneThird)?;
    Ok(CellReport {
        cell,
        computed: s.size,
        log2_fail: s.log2_fail,
        quoted_log2_fail,
        one_third_size: one_third.size,
    })
}
