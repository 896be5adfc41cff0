//! Reference distributions and statistical checks used to validate the
//! distributed samplers.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::Exp1;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Largest population the exact enumerator accepts.
pub const MAX_EXACT_ITEMS: usize = 8;

/// Kahan-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    c: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let y = x - self.c;
        let t = self.sum + y;
        self.c = (t - self.sum) - y;
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Exact law of the unordered sample, keyed by sorted item indices.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactDistribution {
    pub probs: BTreeMap<Vec<usize>, f64>,
}

impl ExactDistribution {
    pub fn prob(&self, set: &[usize]) -> f64 {
        let mut key = set.to_vec();
        key.sort_unstable();
        self.probs.get(&key).copied().unwrap_or(0.0)
    }

    pub fn total(&self) -> f64 {
        let mut k = KahanSum::default();
        self.probs.values().for_each(|&p| k.add(p));
        k.value()
    }

    /// Marginal inclusion probability of each item.
    pub fn inclusion(&self, n: usize) -> Vec<f64> {
        let mut acc = vec![KahanSum::default(); n];
        for (set, &p) in &self.probs {
            for &i in set {
                acc[i].add(p);
            }
        }
        acc.iter().map(KahanSum::value).collect()
    }
}

/// Enumerates every ordered selection of `min(s, n)` items drawn one at a
/// time proportionally to remaining weight, then folds orders into sets.
pub fn exact_swor_distribution(weights: &[f64], s: usize) -> Result<ExactDistribution> {
    if weights.len() > MAX_EXACT_ITEMS {
        return Err(Error::Size(format!(
            "exact enumeration supports at most {MAX_EXACT_ITEMS} items, got {}",
            weights.len()
        )));
    }
    if let Some(&w) = weights.iter().find(|w| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::InvalidWeight(w));
    }
    let s = s.min(weights.len());
    let total: f64 = weights.iter().sum();
    let mut acc: BTreeMap<Vec<usize>, KahanSum> = BTreeMap::new();
    let mut picked = Vec::with_capacity(s);
    let mut used = vec![false; weights.len()];
    enumerate(weights, s, total, 1.0, &mut picked, &mut used, &mut acc);
    Ok(ExactDistribution {
        probs: acc.into_iter().map(|(k, v)| (k, v.value())).collect(),
    })
}

fn enumerate(
    weights: &[f64],
    s: usize,
    remaining: f64,
    p: f64,
    picked: &mut Vec<usize>,
    used: &mut [bool],
    acc: &mut BTreeMap<Vec<usize>, KahanSum>,
) {
    if picked.len() == s {
        let mut key = picked.clone();
        key.sort_unstable();
        acc.entry(key).or_default().add(p);
        return;
    }
    for i in 0..weights.len() {
        if used[i] {
            continue;
        }
        used[i] = true;
        picked.push(i);
        enumerate(
            weights,
            s,
            remaining - weights[i],
            p * weights[i] / remaining,
            picked,
            used,
            acc,
        );
        picked.pop();
        used[i] = false;
    }
}

/// Per-slot law of a with-replacement sample: `w_i / W`.
pub fn exact_swr_marginal(weights: &[f64]) -> Vec<f64> {
    let total: f64 = weights.iter().sum();
    weights.iter().map(|w| w / total).collect()
}

/// Top-`s` indices by key `w / E` with `E ~ Exp(1)`, largest key first.
pub fn centralized_key_sampler<R: Rng + ?Sized>(weights: &[f64], s: usize, rng: &mut R) -> Vec<usize> {
    let mut keyed: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let e: f64 = rng.sample(Exp1);
            (w / e, i)
        })
        .collect();
    keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    keyed.truncate(s);
    keyed.into_iter().map(|(_, i)| i).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailCheck {
    /// Fraction of trials with `|sum - s| > eps * s`.
    pub rate: f64,
    /// `2 exp(-eps^2 s / 5)`.
    pub bound: f64,
}

impl TailCheck {
    pub fn passes(&self) -> bool {
        self.rate <= self.bound
    }
}

pub fn exp_sum_tail_bound(s: usize, eps: f64) -> f64 {
    2.0 * (-eps * eps * s as f64 / 5.0).exp()
}

/// Monte Carlo exceedance rate of a sum of `s` unit exponentials.
pub fn exp_sum_tail_check<R: Rng + ?Sized>(
    s: usize,
    eps: f64,
    trials: usize,
    rng: &mut R,
) -> Result<TailCheck> {
    if trials < 10_000 {
        return Err(Error::Config(format!("need at least 10^4 trials, got {trials}")));
    }
    if s == 0 || !(eps > 0.0) {
        return Err(Error::Config("s must be >= 1 and eps > 0".into()));
    }
    let target = s as f64;
    let mut outside = 0u64;
    for _ in 0..trials {
        let sum: f64 = (0..s).map(|_| rng.sample::<f64, _>(Exp1)).sum();
        if (sum - target).abs() > eps * target {
            outside += 1;
        }
    }
    Ok(TailCheck {
        rate: outside as f64 / trials as f64,
        bound: exp_sum_tail_bound(s, eps),
    })
}

/// Smallest expected count the chi-square approximation accepts.
pub const MIN_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquare {
    pub statistic: f64,
    pub dof: usize,
    pub critical: f64,
    pub pass: bool,
}

fn verdict(statistic: f64, dof: usize, alpha: f64) -> Result<ChiSquare> {
    if dof == 0 {
        return Ok(ChiSquare {
            statistic,
            dof,
            critical: f64::INFINITY,
            pass: true,
        });
    }
    let dist = ChiSquared::new(dof as f64).map_err(|e| Error::Domain(e.to_string()))?;
    let critical = dist.inverse_cdf(1.0 - alpha);
    Ok(ChiSquare {
        statistic,
        dof,
        critical,
        pass: statistic < critical,
    })
}

/// Pearson goodness of fit of `observed` counts against probabilities
/// `expected`. Categories with zero probability must be empty.
pub fn chi_square_gof(observed: &[u64], expected: &[f64], alpha: f64) -> Result<ChiSquare> {
    if observed.len() != expected.len() {
        return Err(Error::Config(format!(
            "{} observed categories vs {} expected",
            observed.len(),
            expected.len()
        )));
    }
    let n: u64 = observed.iter().sum();
    let mut stat = KahanSum::default();
    let mut cats = 0usize;
    for (i, (&o, &p)) in observed.iter().zip(expected).enumerate() {
        if p == 0.0 {
            if o > 0 {
                return verdict(f64::INFINITY, observed.len().saturating_sub(1).max(1), alpha);
            }
            continue;
        }
        let e = p * n as f64;
        if e < MIN_EXPECTED {
            return Err(Error::PoolingRequired {
                category: i,
                expected: e,
            });
        }
        let d = o as f64 - e;
        stat.add(d * d / e);
        cats += 1;
    }
    verdict(stat.value(), cats.saturating_sub(1), alpha)
}

/// Homogeneity test of two count vectors over the same categories.
pub fn chi_square_two_sample(a: &[u64], b: &[u64], alpha: f64) -> Result<ChiSquare> {
    if a.len() != b.len() {
        return Err(Error::Config("samples have different category counts".into()));
    }
    let na: u64 = a.iter().sum();
    let nb: u64 = b.iter().sum();
    let n = (na + nb) as f64;
    let mut stat = KahanSum::default();
    let mut cats = 0usize;
    for (i, (&x, &y)) in a.iter().zip(b).enumerate() {
        let col = (x + y) as f64;
        if col == 0.0 {
            continue;
        }
        for (o, rows) in [(x, na), (y, nb)] {
            let e = rows as f64 * col / n;
            if e < MIN_EXPECTED {
                return Err(Error::PoolingRequired {
                    category: i,
                    expected: e,
                });
            }
            let d = o as f64 - e;
            stat.add(d * d / e);
        }
        cats += 1;
    }
    verdict(stat.value(), cats.saturating_sub(1), alpha)
}

/// Merges the least likely categories into bucket 0 until it expects at
/// least [`MIN_EXPECTED`] of `n` draws; every other category keeps its own
/// bucket. Returns the category-to-bucket map and bucket probabilities.
pub fn pool_categories(probs: &[f64], n: u64) -> (Vec<usize>, Vec<f64>) {
    let min_p = MIN_EXPECTED / n as f64;
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[a].total_cmp(&probs[b]).then(a.cmp(&b)));
    let mut map = vec![0; probs.len()];
    let mut buckets: Vec<f64> = Vec::new();
    let mut pooled_mass = 0.0;
    let mut pooled: Vec<usize> = Vec::new();
    for &i in &order {
        if pooled_mass < min_p {
            pooled_mass += probs[i];
            pooled.push(i);
        } else {
            map[i] = buckets.len() + 1;
            buckets.push(probs[i]);
        }
    }
    let mut out = vec![pooled_mass];
    out.extend(buckets);
    for i in pooled {
        map[i] = 0;
    }
    (map, out)
}

/// Applies a category map from [`pool_categories`] to raw counts.
pub fn pool_counts(counts: &[u64], map: &[usize], buckets: usize) -> Vec<u64> {
    let mut out = vec![0; buckets];
    for (&c, &b) in counts.iter().zip(map) {
        out[b] += c;
    }
    out
}
