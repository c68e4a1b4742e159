//! Rank-based tests for comparing samples of final fitness values.

use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};
use thiserror::Error;

/// The normal approximation is used once both samples exceed this size.
pub const EXACT_MAX_PER_SIDE: usize = 8;
/// Above this pooled size the exact distribution is not enumerated.
pub const EXACT_MAX_POOLED: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("sample {0} is empty")]
    EmptySample(usize),
    #[error("at least two groups are required, got {0}")]
    TooFewGroups(usize),
    #[error("sample contains a NaN")]
    NaN,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p: f64,
    /// Signed z from the tie-corrected normal approximation. Negative when
    /// the first sample tends to hold the smaller values.
    pub z: f64,
    pub exact: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KruskalWallis {
    pub h: f64,
    pub p: f64,
    pub df: usize,
}

/// Midranks (1-based) of `values` plus the tie term Σ(t³ − t).
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &order[start..end] {
            ranks[i] = rank;
        }
        let t = (end - start) as f64;
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

fn check(samples: &[&[f64]]) -> Result<(), StatsError> {
    for (i, s) in samples.iter().enumerate() {
        if s.is_empty() {
            return Err(StatsError::EmptySample(i));
        }
        if s.iter().any(|v| v.is_nan()) {
            return Err(StatsError::NaN);
        }
    }
    Ok(())
}

fn standard_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid parameters")
}

/// Two-sided Mann-Whitney U test with midranks for ties.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    check(&[a, b])?;
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let r1: f64 = ranks[..n1].iter().sum();
    let u = r1 - (n1 * (n1 + 1)) as f64 / 2.0;

    let n = (n1 + n2) as f64;
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let mean = n1f * n2f / 2.0;
    let variance = if n > 1.0 {
        n1f * n2f / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)))
    } else {
        0.0
    };
    let sigma = variance.sqrt();
    let z = if sigma > 0.0 {
        let d = u - mean;
        d.signum() * (d.abs() - 0.5).max(0.0) / sigma
    } else {
        0.0
    };

    let normal = n1.min(n2) > EXACT_MAX_PER_SIDE || n1 + n2 > EXACT_MAX_POOLED;
    let p = if sigma == 0.0 {
        1.0
    } else if normal {
        (2.0 * (1.0 - standard_normal().cdf(z.abs()))).min(1.0)
    } else {
        exact_p(&ranks, n1)
    };
    Ok(MannWhitney {
        u,
        p: p.clamp(0.0, 1.0),
        z,
        exact: !normal,
    })
}

/// Exact two-sided p for the rank sum of the first `n1` pooled ranks, by
/// counting every way of choosing that many ranks from the pool.
fn exact_p(ranks: &[f64], n1: usize) -> f64 {
    let n2 = ranks.len() - n1;
    // enumerate subsets of the smaller side; midranks doubled are integers
    let (size, observed): (usize, usize) = if n1 <= n2 {
        (n1, ranks[..n1].iter().map(|r| (2.0 * r) as usize).sum())
    } else {
        (n2, ranks[n1..].iter().map(|r| (2.0 * r) as usize).sum())
    };
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r) as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s
    let mut ways = vec![vec![0.0f64; max_sum + 1]; size + 1];
    ways[0][0] = 1.0;
    for &r in &doubled {
        for k in (1..=size).rev() {
            let (lower, upper) = ways.split_at_mut(k);
            for s in (r..=max_sum).rev() {
                upper[0][s] += lower[k - 1][s - r];
            }
        }
    }
    let dist = &ways[size];
    let total: f64 = dist.iter().sum();
    let below: f64 = dist[..=observed].iter().sum();
    let above: f64 = dist[observed..].iter().sum();
    (2.0 * below.min(above) / total).min(1.0)
}

/// Kruskal-Wallis H test with tie correction.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<KruskalWallis, StatsError> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    check(groups)?;
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let (ranks, ties) = midranks(&pooled);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h_raw = 12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0);
    let correction = 1.0 - ties / (n * n * n - n);
    let df = groups.len() - 1;
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, p: 1.0, df });
    }
    let h = (h_raw / correction).max(0.0);
    let chi = ChiSquared::new(df as f64).expect("df >= 1");
    Ok(KruskalWallis {
        h,
        p: (1.0 - chi.cdf(h)).clamp(0.0, 1.0),
        df,
    })
}

/// Multiplies each p by the number of comparisons, capped at 1.
pub fn bonferroni(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffectSize {
    None,
    Small,
    Medium,
    Large,
}

impl EffectSize {
    pub fn from_r(r: f64) -> EffectSize {
        if r <= 0.3 {
            EffectSize::Small
        } else if r <= 0.5 {
            EffectSize::Medium
        } else {
            EffectSize::Large
        }
    }

    /// `~`, `+`, `++`, `+++`; minus signs when the reference is worse.
    pub fn symbol(self, reference_better: bool) -> &'static str {
        match (self, reference_better) {
            (EffectSize::None, _) => "~",
            (EffectSize::Small, true) => "+",
            (EffectSize::Medium, true) => "++",
            (EffectSize::Large, true) => "+++",
            (EffectSize::Small, false) => "-",
            (EffectSize::Medium, false) => "--",
            (EffectSize::Large, false) => "---",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EffectSize::None => "none",
            EffectSize::Small => "small",
            EffectSize::Medium => "medium",
            EffectSize::Large => "large",
        }
    }
}

/// r = |z| / sqrt(n) and its magnitude category.
pub fn effect_size_r(z: f64, n_total: usize) -> (f64, EffectSize) {
    let r = z.abs() / (n_total as f64).sqrt();
    (r, EffectSize::from_r(r))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairComparison {
    pub first: usize,
    pub second: usize,
    pub test: MannWhitney,
    pub p_adjusted: f64,
    pub significant: bool,
    pub r: f64,
    pub effect: EffectSize,
    /// The first group tends to the lower (better) values.
    pub first_better: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub kruskal: KruskalWallis,
    pub significant: bool,
    pub pairs: Vec<PairComparison>,
}

/// Kruskal-Wallis gate followed, when significant, by Bonferroni-corrected
/// Mann-Whitney tests: `reference` against every other group, or all pairs
/// when no reference is given. Lower values are better.
pub fn compare_groups(groups: &[&[f64]], reference: Option<usize>, alpha: f64) -> Result<Comparison, StatsError> {
    let kruskal = kruskal_wallis(groups)?;
    let significant = kruskal.p <= alpha;
    let mut pairs = Vec::new();
    if significant {
        let plan: Vec<(usize, usize)> = match reference {
            Some(r) => (0..groups.len()).filter(|&o| o != r).map(|o| (r, o)).collect(),
            None => (0..groups.len())
                .flat_map(|i| (i + 1..groups.len()).map(move |j| (i, j)))
                .collect(),
        };
        let tests = plan
            .iter()
            .map(|&(i, j)| mann_whitney_u(groups[i], groups[j]))
            .collect::<Result<Vec<_>, _>>()?;
        let adjusted = bonferroni(&tests.iter().map(|t| t.p).collect::<Vec<_>>());
        for ((&(first, second), test), p_adjusted) in plan.iter().zip(tests).zip(adjusted) {
            let n = groups[first].len() + groups[second].len();
            let (r, magnitude) = effect_size_r(test.z, n);
            let significant = p_adjusted <= alpha;
            pairs.push(PairComparison {
                first,
                second,
                test,
                p_adjusted,
                significant,
                r,
                effect: if significant { magnitude } else { EffectSize::None },
                first_better: test.z < 0.0,
            });
        }
    }
    Ok(Comparison {
        kruskal,
        significant,
        pairs,
    })
}
