//! Expert-score transforms, rater agreement, contingency tables and the
//! Mann-Whitney U test.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("score {value} outside [{min}, {max}]")]
    OutOfRange { value: i32, min: i32, max: i32 },
    #[error("no class reaches two of three votes")]
    NoMajority,
    #[error("all values are tied; the U statistic has zero variance")]
    DegenerateData,
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("unknown sign class {0:?}")]
    UnknownSign(String),
}

pub type Result<T> = std::result::Result<T, StatsError>;

/// Raw expert score on the 11-point scale, −5..=+5.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct Score11(i8);

/// Collapsed 5-point score, −2..=+2.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "i32", into = "i32")]
pub struct Score5(i8);

macro_rules! bounded_score {
    ($ty:ident, $lo:expr, $hi:expr) => {
        impl $ty {
            pub const MIN: i32 = $lo;
            pub const MAX: i32 = $hi;

            pub fn new(value: i32) -> Result<Self> {
                if (Self::MIN..=Self::MAX).contains(&value) {
                    Ok(Self(value as i8))
                } else {
                    Err(StatsError::OutOfRange { value, min: Self::MIN, max: Self::MAX })
                }
            }

            pub fn value(self) -> i32 {
                i32::from(self.0)
            }
        }

        impl TryFrom<i32> for $ty {
            type Error = StatsError;
            fn try_from(v: i32) -> Result<Self> {
                Self::new(v)
            }
        }

        impl From<$ty> for i32 {
            fn from(s: $ty) -> i32 {
                s.value()
            }
        }
    };
}

bounded_score!(Score11, -5, 5);
bounded_score!(Score5, -2, 2);

/// Direction of a dog's reaction to the stranger.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum SignClass {
    /// Reacts away from the stressor.
    #[serde(rename = "-")]
    Negative,
    /// Neutral, stable coping.
    #[serde(rename = "0")]
    Neutral,
    /// Reacts toward the stressor.
    #[serde(rename = "+")]
    Positive,
}

impl SignClass {
    pub const ALL: [SignClass; 3] = [SignClass::Negative, SignClass::Neutral, SignClass::Positive];

    pub fn as_str(self) -> &'static str {
        match self {
            SignClass::Negative => "-",
            SignClass::Neutral => "0",
            SignClass::Positive => "+",
        }
    }

    pub fn index(self) -> usize {
        match self {
            SignClass::Negative => 0,
            SignClass::Neutral => 1,
            SignClass::Positive => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

impl fmt::Display for SignClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignClass {
    type Err = StatsError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "-" | "−" => Ok(SignClass::Negative),
            "0" => Ok(SignClass::Neutral),
            "+" => Ok(SignClass::Positive),
            other => Err(StatsError::UnknownSign(other.to_string())),
        }
    }
}

/// −5,−4 → −2; −3,−2 → −1; −1,0,+1 → 0; +2,+3 → +1; +4,+5 → +2.
pub fn collapse_11_to_5(s: Score11) -> Score5 {
    let v = match s.value() {
        -5 | -4 => -2,
        -3 | -2 => -1,
        -1..=1 => 0,
        2 | 3 => 1,
        _ => 2,
    };
    Score5(v)
}

pub fn collapse_5_to_sign(s: Score5) -> SignClass {
    match s.value() {
        v if v < 0 => SignClass::Negative,
        0 => SignClass::Neutral,
        _ => SignClass::Positive,
    }
}

/// Two-of-three vote over the raters' sign classes.
pub fn majority_vote(signs: [SignClass; 3]) -> Result<SignClass> {
    let [a, b, c] = signs;
    if a == b || a == c {
        Ok(a)
    } else if b == c {
        Ok(b)
    } else {
        Err(StatsError::NoMajority)
    }
}

/// Mean over subjects of the fraction of agreeing rater pairs (out of three).
pub fn percent_agreement(panel: &[[SignClass; 3]]) -> Result<f64> {
    if panel.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let total: f64 = panel
        .iter()
        .map(|[a, b, c]| {
            let pairs = usize::from(a == b) + usize::from(a == c) + usize::from(b == c);
            pairs as f64 / 3.0
        })
        .sum();
    Ok(total / panel.len() as f64)
}

/// Free-marginal multi-rater kappa: (Po − 1/q) / (1 − 1/q).
pub fn free_marginal_kappa(observed_agreement: f64, q: u32) -> f64 {
    let chance = 1.0 / f64::from(q);
    (observed_agreement - chance) / (1.0 - chance)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UTestMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U statistic of the first sample, ties counted as one half.
    pub u: f64,
    pub z: f64,
    pub p_two_sided: f64,
    pub method: UTestMethod,
    pub n1: usize,
    pub n2: usize,
}

/// Pooled sample sizes up to this bound use the exact permutation p-value.
pub const EXACT_CUTOFF: usize = 12;

/// Midranks (1-based) of the values, ties sharing their average rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // positions start..end hold ranks start+1..=end
        let avg = (start + 1 + end) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = avg;
        }
        start = end;
    }
    ranks
}

fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut sum = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        let t = (j - i) as f64;
        sum += t * t * t - t;
        i = j;
    }
    sum
}

/// Two-sided Mann-Whitney U test of `a` against `b`.
///
/// Pooled sizes up to [`EXACT_CUTOFF`] enumerate every split of the pooled
/// midranks; larger samples use the tie-corrected normal approximation
/// without continuity correction. `z` is always the normal statistic.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<UTestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let n1 = a.len();
    let n2 = b.len();
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let nf = n as f64;
    let prod = (n1 * n2) as f64;
    let var = prod / 12.0 * ((nf + 1.0) - tie_term(&pooled) / (nf * (nf - 1.0)));
    if var <= 0.0 || !var.is_finite() {
        return Err(StatsError::DegenerateData);
    }
    let mean = prod / 2.0;
    let z = (u - mean) / var.sqrt();

    let (p, method) = if n <= EXACT_CUTOFF {
        (exact_p(&ranks, n1, u), UTestMethod::Exact)
    } else {
        let p = statrs::function::erf::erfc(z.abs() / std::f64::consts::SQRT_2);
        (p, UTestMethod::Normal)
    };
    Ok(UTestResult { u, z, p_two_sided: p.min(1.0), method, n1, n2 })
}

/// P(|U − mean| ≥ |u_obs − mean|) over all C(n, n1) assignments of the
/// pooled midranks to the first group.
fn exact_p(ranks: &[f64], n1: usize, u_obs: f64) -> f64 {
    let n = ranks.len();
    let mean = (n1 * (n - n1)) as f64 / 2.0;
    let observed = (u_obs - mean).abs();
    let offset = (n1 * (n1 + 1)) as f64 / 2.0;
    let mut extreme = 0u64;
    let mut total = 0u64;
    let mut chosen: Vec<usize> = (0..n1).collect();
    loop {
        let r: f64 = chosen.iter().map(|&i| ranks[i]).sum();
        if ((r - offset) - mean).abs() >= observed - 1e-9 {
            extreme += 1;
        }
        total += 1;
        // advance to the next combination in lexicographic order
        let mut i = n1;
        loop {
            if i == 0 {
                return extreme as f64 / total as f64;
            }
            i -= 1;
            if chosen[i] < n - n1 + i {
                break;
            }
        }
        chosen[i] += 1;
        for j in i + 1..n1 {
            chosen[j] = chosen[j - 1] + 1;
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) { (v[mid - 1] + v[mid]) / 2.0 } else { v[mid] })
}

/// Cluster × sign-class contingency table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    pub clusters: Vec<usize>,
    pub classes: Vec<SignClass>,
    /// `counts[row][col]`, rows follow `clusters`, columns follow `classes`.
    pub counts: Vec<Vec<usize>>,
    pub row_totals: Vec<usize>,
    pub col_totals: Vec<usize>,
    pub total: usize,
    /// Fraction of trials matching their cluster's majority class.
    pub purity: f64,
}

impl CrossTab {
    pub fn count(&self, cluster: usize, class: SignClass) -> usize {
        let row = self.clusters.iter().position(|&c| c == cluster);
        let col = self.classes.iter().position(|&c| c == class);
        match (row, col) {
            (Some(r), Some(c)) => self.counts[r][c],
            _ => 0,
        }
    }
}

pub fn cross_tab(assignments: &[usize], labels: &[SignClass]) -> Result<CrossTab> {
    if assignments.len() != labels.len() {
        return Err(StatsError::LengthMismatch { left: assignments.len(), right: labels.len() });
    }
    let mut table: BTreeMap<usize, BTreeMap<SignClass, usize>> = BTreeMap::new();
    for (&c, &l) in assignments.iter().zip(labels) {
        *table.entry(c).or_default().entry(l).or_default() += 1;
    }
    let clusters: Vec<usize> = table.keys().copied().collect();
    let mut classes: Vec<SignClass> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let counts: Vec<Vec<usize>> = clusters
        .iter()
        .map(|c| classes.iter().map(|l| table[c].get(l).copied().unwrap_or(0)).collect())
        .collect();
    let row_totals: Vec<usize> = counts.iter().map(|r| r.iter().sum()).collect();
    let col_totals: Vec<usize> =
        (0..classes.len()).map(|j| counts.iter().map(|r| r[j]).sum()).collect();
    let total = assignments.len();
    let majority: usize = counts.iter().map(|r| r.iter().copied().max().unwrap_or(0)).sum();
    let purity = if total == 0 { 0.0 } else { majority as f64 / total as f64 };
    Ok(CrossTab { clusters, classes, counts, row_totals, col_totals, total, purity })
}
