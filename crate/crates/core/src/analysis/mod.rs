//! Failure probabilities of committee trees.
//!
//! Two partition models are supported: a fixed adversary count `M` placed
//! uniformly without replacement (hypergeometric) and independent corruption
//! with probability `P` (binomial). For each failure event the module gives an
//! exact value where one is computable and an analytic upper bound.
//!
//! Every probability is carried as a natural logarithm ([`Prob`]) so values
//! far below the smallest `f64` remain representable.

mod brute;
mod events;
mod presets;
mod sizing;
mod tails;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub use brute::{brute_force_delta, BRUTE_MAX_BINOMIAL, BRUTE_MAX_HYPERGEOMETRIC};
pub use events::{delta, delta_e0, delta_e1, delta_e2, delta_ek, qc_necessary_condition_bound, safety_failure_bound, QcBound};
pub use presets::{
    builtin_preset, preset_names, run_preset, sweep_events, sweep_report, Ceiling, ModelSpec, Preset, PresetKind, PresetReport, StepRange,
    SweepRow,
};
pub use sizing::{committee_size_solver, committee_size_upper_bound, layout_upper_bound, SizingParams, SizingResult};
pub use tails::{
    binom_tail, binom_tail_bound, hoeffding_bound, hyper_tail, hyper_tail_bound, kl_divergence, ln_choose,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnalysisError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("bound precondition violated: {0}")]
    BoundPrecondition(String),
    #[error("instance too large for enumeration: {0}")]
    TooLarge(String),
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, AnalysisError> {
    Err(AnalysisError::InvalidInput(msg.into()))
}

/// Probability stored as its natural logarithm. `ln = -inf` is zero.
#[derive(Clone, Copy, PartialEq, PartialOrd)]
pub struct Prob {
    ln: f64,
}

impl Prob {
    pub const ZERO: Prob = Prob { ln: f64::NEG_INFINITY };
    pub const ONE: Prob = Prob { ln: 0.0 };

    /// Clamps to `[0, 1]`.
    pub fn from_ln(ln: f64) -> Prob {
        debug_assert!(!ln.is_nan());
        Prob { ln: ln.min(0.0) }
    }

    pub fn from_value(v: f64) -> Prob {
        debug_assert!(!v.is_nan());
        if v <= 0.0 {
            Prob::ZERO
        } else {
            Prob::from_ln(v.ln())
        }
    }

    pub fn ln(self) -> f64 {
        self.ln
    }

    /// Value as `f64`; underflows to 0 below about `1e-308`.
    pub fn value(self) -> f64 {
        self.ln.exp()
    }

    pub fn is_zero(self) -> bool {
        self.ln == f64::NEG_INFINITY
    }

    /// `log10` of the value, finite for every non-zero probability.
    pub fn log10(self) -> f64 {
        self.ln / std::f64::consts::LN_10
    }

    /// `self + other`, capped at 1.
    pub fn capped_add(self, other: Prob) -> Prob {
        Prob::from_ln(log_add(self.ln, other.ln))
    }

    /// Relative comparison tolerant to rounding: `self <= other * (1 + rel)`.
    pub fn le_rel(self, other: Prob, rel: f64) -> bool {
        self.is_zero() || self.ln <= other.ln + rel.ln_1p()
    }
}

impl fmt::Debug for Prob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Prob({self})")
    }
}

impl fmt::Display for Prob {
    /// Scientific notation with six significant digits after the point,
    /// valid for values below the `f64` range.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return f.write_str("0");
        }
        let l10 = self.log10();
        let mut exp = l10.floor();
        let mut mant = 10f64.powf(l10 - exp);
        let rounded = (mant * 1e6).round() / 1e6;
        if rounded >= 10.0 {
            mant = rounded / 10.0;
            exp += 1.0;
        } else {
            mant = rounded;
        }
        write!(f, "{mant:.6}e{exp:03}")
    }
}

impl Serialize for Prob {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Prob {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        parse_prob(&s).ok_or_else(|| serde::de::Error::custom(format!("invalid probability {s:?}")))
    }
}

/// Parses `0`, plain decimals and `m.mmme-XXX` even below the `f64` range.
pub fn parse_prob(s: &str) -> Option<Prob> {
    let s = s.trim();
    if let Ok(v) = s.parse::<f64>() {
        if v > 0.0 || v == 0.0 && !s.contains(['e', 'E']) {
            return (0.0..=1.0).contains(&v).then(|| Prob::from_value(v));
        }
    }
    let (m, e) = s.split_once(['e', 'E'])?;
    let m: f64 = m.parse().ok()?;
    let e: f64 = e.parse().ok()?;
    (m > 0.0).then(|| Prob::from_ln(m.ln() + e * std::f64::consts::LN_10))
}

/// `ln(exp(a) + exp(b))`.
pub(crate) fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return hi;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(sum(exp(x)))` with compensated summation of the scaled terms.
pub(crate) fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + neumaier(xs.iter().map(|&x| (x - max).exp())).ln()
}

/// Neumaier compensated sum.
pub(crate) fn neumaier(xs: impl IntoIterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut c = 0.0f64;
    for x in xs {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

/// Exact non-negative rational, used for thresholds such as `A = 1/3` so that
/// `floor(A * n)` has no rounding error.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Fraction {
    num: u64,
    den: u64,
}

impl Fraction {
    pub fn new(num: u64, den: u64) -> Result<Fraction, AnalysisError> {
        if den == 0 {
            return invalid("zero denominator");
        }
        let g = gcd(num, den);
        Ok(Fraction { num: num / g, den: den / g })
    }

    pub const fn third() -> Fraction {
        Fraction { num: 1, den: 3 }
    }

    pub const fn two_thirds() -> Fraction {
        Fraction { num: 2, den: 3 }
    }

    pub const fn half() -> Fraction {
        Fraction { num: 1, den: 2 }
    }

    pub fn num(self) -> u64 {
        self.num
    }

    pub fn den(self) -> u64 {
        self.den
    }

    pub fn as_f64(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `floor(self * n)`.
    pub fn floor_mul(self, n: usize) -> usize {
        ((n as u128 * self.num as u128) / self.den as u128) as usize
    }

    /// Strictly inside `(0, 1)`.
    pub fn is_proper(self) -> bool {
        self.num > 0 && self.num < self.den
    }
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a.max(1)
    } else {
        gcd(b, a % b)
    }
}

impl fmt::Debug for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl fmt::Display for Fraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.num, self.den)
    }
}

impl FromStr for Fraction {
    type Err = AnalysisError;

    /// Accepts `a/b` or a plain decimal such as `0.25`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || AnalysisError::InvalidInput(format!("not a fraction: {s:?}"));
        if let Some((a, b)) = s.split_once('/') {
            let a: u64 = a.trim().parse().map_err(|_| bad())?;
            let b: u64 = b.trim().parse().map_err(|_| bad())?;
            return Fraction::new(a, b);
        }
        let (int, frac) = s.split_once('.').unwrap_or((s, ""));
        if frac.len() > 18 || !int.chars().chain(frac.chars()).all(|c| c.is_ascii_digit()) || s.is_empty() {
            return Err(bad());
        }
        let den = 10u64.pow(frac.len() as u32);
        let int: u64 = if int.is_empty() { 0 } else { int.parse().map_err(|_| bad())? };
        let frac_v: u64 = if frac.is_empty() { 0 } else { frac.parse().map_err(|_| bad())? };
        Fraction::new(int.checked_mul(den).and_then(|v| v.checked_add(frac_v)).ok_or_else(bad)?, den)
    }
}

impl Serialize for Fraction {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Fraction {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// How Byzantine nodes are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Adversary {
    /// Exactly `M` Byzantine nodes placed uniformly without replacement.
    ExactCount(usize),
    /// Each node Byzantine independently with probability `P`.
    Fraction(f64),
}

/// Committee sizes plus an adversary model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionModel {
    pub n_nodes: usize,
    pub sizes: Vec<usize>,
    pub adversary: Adversary,
}

impl PartitionModel {
    pub fn new(n_nodes: usize, sizes: Vec<usize>, adversary: Adversary) -> Result<Self, AnalysisError> {
        if sizes.is_empty() || sizes.contains(&0) {
            return invalid("committee sizes must be positive");
        }
        if sizes.iter().sum::<usize>() != n_nodes {
            return invalid(format!("sizes sum to {} but N = {n_nodes}", sizes.iter().sum::<usize>()));
        }
        match adversary {
            Adversary::ExactCount(m) if m >= n_nodes => return invalid(format!("M = {m} must be below N = {n_nodes}")),
            Adversary::Fraction(p) if !(p > 0.0 && p < 1.0) => return invalid(format!("P = {p} must lie in (0, 1)")),
            _ => {}
        }
        Ok(PartitionModel { n_nodes, sizes, adversary })
    }

    /// `N = nK + r` split: the `r` highest-indexed committees get `n + 1`
    /// nodes, matching the overlay construction.
    pub fn split(n_nodes: usize, k: usize, adversary: Adversary) -> Result<Self, AnalysisError> {
        if k == 0 || k > n_nodes {
            return invalid(format!("K = {k} must lie in [1, N = {n_nodes}]"));
        }
        PartitionModel::new(n_nodes, split_sizes(n_nodes, k), adversary)
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    /// Adversary fraction: `M/N` or `P`.
    pub fn p(&self) -> f64 {
        match self.adversary {
            Adversary::ExactCount(m) => m as f64 / self.n_nodes as f64,
            Adversary::Fraction(p) => p,
        }
    }

    pub fn model_name(&self) -> &'static str {
        match self.adversary {
            Adversary::ExactCount(_) => "hypergeometric",
            Adversary::Fraction(_) => "binomial",
        }
    }

    /// Sizes of the merged sibling pairs `(2,3), (4,5), …, (K-1,K)`.
    pub fn sibling_pair_sizes(&self) -> Result<Vec<usize>, AnalysisError> {
        if self.k().is_multiple_of(2) {
            return invalid(format!("sibling pairs need odd K, got {}", self.k()));
        }
        Ok(self.sizes[1..].chunks(2).map(|c| c[0] + c[1]).collect())
    }
}

/// Committee sizes for `K` committees over `N` nodes.
pub fn split_sizes(n_nodes: usize, k: usize) -> Vec<usize> {
    let (n, r) = (n_nodes / k, n_nodes % k);
    (1..=k).map(|mu| if mu > k - r { n + 1 } else { n }).collect()
}

/// A failure of the committee tree. Serialized in its display form, e.g. `E3(2/3)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureEvent {
    /// The leader is Byzantine.
    E0,
    /// Some committee has more than a fraction `A` Byzantine.
    E1(Fraction),
    /// Some merged sibling pair has more than a fraction `A` Byzantine.
    E2(Fraction),
    /// The top `k` committees jointly have more than a fraction `B` Byzantine.
    Ek(usize, Fraction),
}

impl fmt::Display for FailureEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FailureEvent::E0 => f.write_str("E0"),
            FailureEvent::E1(a) => write!(f, "E1({a})"),
            FailureEvent::E2(a) => write!(f, "E2({a})"),
            FailureEvent::Ek(k, b) => write!(f, "E{k}({b})"),
        }
    }
}

impl FromStr for FailureEvent {
    type Err = AnalysisError;

    /// `E0`, `E1(1/3)`, `E2(1/3)`, `E3(2/3)`, … (case-insensitive).
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim().to_ascii_lowercase();
        let bad = || AnalysisError::InvalidInput(format!("unknown event {s:?}"));
        if t == "e0" {
            return Ok(FailureEvent::E0);
        }
        let rest = t.strip_prefix('e').ok_or_else(bad)?;
        let (k, frac) = rest.split_once('(').ok_or_else(bad)?;
        let frac: Fraction = frac.strip_suffix(')').ok_or_else(bad)?.parse()?;
        match k.parse::<usize>().map_err(|_| bad())? {
            1 => Ok(FailureEvent::E1(frac)),
            2 => Ok(FailureEvent::E2(frac)),
            k if k >= 3 => Ok(FailureEvent::Ek(k, frac)),
            _ => Err(bad()),
        }
    }
}

impl Serialize for FailureEvent {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FailureEvent {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Exact value when computable, and an upper bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventValue {
    pub exact: Option<Prob>,
    pub bound: Prob,
}

impl EventValue {
    /// The exact value if present, else the bound.
    pub fn best(&self) -> Prob {
        self.exact.unwrap_or(self.bound)
    }
}
