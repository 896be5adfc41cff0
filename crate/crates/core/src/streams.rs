//! Stream generators and the `site,id,weight` text format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};

use crate::bits::{derive_seed, RngBits};
use crate::error::{Error, Result};
use crate::simnet::epoch_block_sites;
use crate::types::{validate_weight, ItemId, WeightedItem};

/// Largest stream a generator will materialize.
pub const MAX_GENERATED: u64 = 200_000_000;

/// Support size of the Zipf generator.
pub const ZIPF_SUPPORT: u64 = 10_000;

const GEN_STREAM: u64 = 0x5354_5245_414d;

#[derive(Debug, Clone, PartialEq)]
pub enum StreamKind {
    Unit,
    /// Integer weights drawn from Zipf(alpha) over `1..=ZIPF_SUPPORT`.
    Zipf { alpha: f64 },
    /// `giants` items of weight `big`, `mids` items of weight `mid`, and unit
    /// items for the rest of the length, shuffled.
    SkewedGiants {
        giants: usize,
        big: f64,
        mids: usize,
        mid: f64,
    },
    HhLower { epsilon: f64, count: usize },
    EpochLower { k: usize, eta: u32 },
    File(std::path::PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSpec {
    pub kind: StreamKind,
    /// Length for the kinds that take one.
    pub n: usize,
    pub seed: u64,
}

impl StreamSpec {
    pub fn new(kind: StreamKind, n: usize, seed: u64) -> Self {
        StreamSpec { kind, n, seed }
    }

    /// Items with `seq = 1..` and site 0, except where the kind fixes sites
    /// (epoch-lower, files).
    pub fn generate(&self) -> Result<Vec<WeightedItem>> {
        match &self.kind {
            StreamKind::Unit => Ok(unit(self.n)),
            StreamKind::Zipf { alpha } => gen_zipf(self.n, *alpha, self.seed),
            StreamKind::SkewedGiants {
                giants,
                big,
                mids,
                mid,
            } => gen_skewed_giants(*giants, *big, *mids, *mid, self.n, self.seed),
            StreamKind::HhLower { epsilon, count } => gen_hh_lower(*epsilon, *count),
            StreamKind::EpochLower { k, eta } => gen_epoch_lower(*k, *eta, self.seed),
            StreamKind::File(path) => Ok(ingest(path)?.items),
        }
    }
}

fn item(i: usize, w: f64) -> WeightedItem {
    WeightedItem {
        id: ItemId::new(i as u64 + 1),
        weight: w,
        site: 0,
        seq: i as u64 + 1,
    }
}

fn check_len(n: u64) -> Result<()> {
    if n > MAX_GENERATED {
        return Err(Error::Size(format!(
            "stream of {n} items exceeds the {MAX_GENERATED} item budget"
        )));
    }
    Ok(())
}

pub fn unit(n: usize) -> Vec<WeightedItem> {
    (0..n).map(|i| item(i, 1.0)).collect()
}

/// Builds a stream from weights, ids `1..`.
pub fn from_weights(weights: &[f64]) -> Result<Vec<WeightedItem>> {
    weights
        .iter()
        .enumerate()
        .map(|(i, &w)| WeightedItem::new(i as u64 + 1, w, 0, i as u64 + 1))
        .collect()
}

pub fn gen_zipf(n: usize, alpha: f64, seed: u64) -> Result<Vec<WeightedItem>> {
    check_len(n as u64)?;
    let dist = Zipf::new(ZIPF_SUPPORT, alpha).map_err(|e| Error::Config(format!("zipf: {e}")))?;
    let mut rng = RngBits::from_seed(derive_seed(seed, GEN_STREAM));
    Ok((0..n).map(|i| item(i, dist.sample(rng.rng()).round())).collect())
}

pub fn gen_skewed_giants(
    giants: usize,
    big: f64,
    mids: usize,
    mid: f64,
    n: usize,
    seed: u64,
) -> Result<Vec<WeightedItem>> {
    validate_weight(big)?;
    validate_weight(mid)?;
    let fixed = giants + mids;
    if fixed > n {
        return Err(Error::Config(format!(
            "{giants} giants and {mids} mid items do not fit in length {n}"
        )));
    }
    check_len(n as u64)?;
    let mut weights: Vec<f64> = std::iter::repeat(big)
        .take(giants)
        .chain(std::iter::repeat(mid).take(mids))
        .chain(std::iter::repeat(1.0).take(n - fixed))
        .collect();
    let mut rng = RngBits::from_seed(derive_seed(seed, GEN_STREAM));
    weights.shuffle(rng.rng());
    Ok(weights.iter().enumerate().map(|(i, &w)| item(i, w)).collect())
}

/// Unscaled weights `1, (1+e) e, (1+e)^2 e, ...` for `i = 0..=count`.
pub fn hh_lower_raw_weights(epsilon: f64, count: usize) -> Vec<f64> {
    std::iter::once(1.0)
        .chain((1..=count).map(|i| (1.0 + epsilon).powi(i as i32) * epsilon))
        .collect()
}

/// The geometric stream in which every arrival is heavy, scaled by `1/e`
/// so all weights are at least 1.
pub fn gen_hh_lower(epsilon: f64, count: usize) -> Result<Vec<WeightedItem>> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1/2]")));
    }
    check_len(count as u64 + 1)?;
    hh_lower_raw_weights(epsilon, count)
        .iter()
        .enumerate()
        .map(|(i, &w)| WeightedItem::new(i as u64 + 1, w / epsilon, 0, i as u64 + 1))
        .collect()
}

/// `k^eta` unit updates laid out in epoch blocks across `k` sites.
pub fn gen_epoch_lower(k: usize, eta: u32, seed: u64) -> Result<Vec<WeightedItem>> {
    if k < 2 || eta < 1 {
        return Err(Error::Config("epoch-lower needs k >= 2 and eta >= 1".into()));
    }
    let n = (k as u64)
        .checked_pow(eta)
        .ok_or_else(|| Error::Size(format!("{k}^{eta} overflows")))?;
    check_len(n)?;
    let sites = epoch_block_sites(n as usize, k, seed);
    Ok(sites
        .into_iter()
        .enumerate()
        .map(|(i, s)| WeightedItem {
            site: s,
            ..item(i, 1.0)
        })
        .collect())
}

/// A parsed stream file. Text ids are numbered `1..` in first-appearance
/// order; `labels[token - 1]` is the original text.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Ingested {
    pub items: Vec<WeightedItem>,
    pub labels: Vec<String>,
}

impl Ingested {
    pub fn label(&self, id: ItemId) -> Option<&str> {
        let idx = usize::try_from(id.token).ok()?.checked_sub(1)?;
        self.labels.get(idx).map(String::as_str)
    }

    /// Rejects items addressed to a site outside `0..k`.
    pub fn check_sites(&self, k: usize) -> Result<()> {
        for (i, it) in self.items.iter().enumerate() {
            if it.site >= k {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: format!("site {} not below k = {k}", it.site),
                });
            }
        }
        Ok(())
    }
}

pub fn ingest(path: &Path) -> Result<Ingested> {
    parse_stream(&std::fs::read_to_string(path)?)
}

/// Lines starting with `#` are comments and do not count toward `seq`.
pub fn parse_stream(text: &str) -> Result<Ingested> {
    let mut out = Ingested::default();
    let mut tokens: HashMap<String, u64> = HashMap::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        if line.starts_with('#') {
            continue;
        }
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let fields: Vec<&str> = line.split(',').collect();
        let [site, id, w] = fields[..] else {
            return Err(err(format!("expected site,id,weight but got {line:?}")));
        };
        let site: usize = site
            .trim()
            .parse()
            .map_err(|_| err(format!("bad site {site:?}")))?;
        let id = id.trim();
        if id.is_empty() {
            return Err(err("empty id".into()));
        }
        let w: f64 = w
            .trim()
            .parse()
            .map_err(|_| err(format!("bad weight {w:?}")))?;
        validate_weight(w).map_err(|e| err(e.to_string()))?;
        let next = tokens.len() as u64 + 1;
        let token = *tokens.entry(id.to_string()).or_insert_with(|| {
            out.labels.push(id.to_string());
            next
        });
        out.items.push(WeightedItem {
            id: ItemId::new(token),
            weight: w,
            site,
            seq: out.items.len() as u64 + 1,
        });
    }
    Ok(out)
}

/// Renders items as `site,id,weight` lines.
pub fn write_stream(items: &[WeightedItem]) -> String {
    let mut s = String::with_capacity(items.len() * 12);
    for it in items {
        let _ = writeln!(s, "{},{},{}", it.site, it.id, it.weight);
    }
    s
}

/// Least-squares slope of log frequency against log rank over the ranks
/// whose count is at least `min_count`.
pub fn rank_frequency_slope(items: &[WeightedItem], min_count: u64) -> f64 {
    let mut counts: HashMap<u64, u64> = HashMap::new();
    for it in items {
        *counts.entry(it.weight as u64).or_default() += 1;
    }
    let pts: Vec<(f64, f64)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .map(|(r, c)| ((r as f64).ln(), (c as f64).ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}

/// Uniform site for each item; used by tests that want a random layout
/// independent of the simulator's partitioner.
pub fn scatter(items: &mut [WeightedItem], k: usize, seed: u64) {
    let mut rng = RngBits::from_seed(derive_seed(seed, GEN_STREAM + 1));
    for it in items {
        it.site = rng.rng().gen_range(0..k);
    }
}
