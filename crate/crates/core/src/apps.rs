//! Residual heavy hitters and L1 tracking on top of the SWOR protocol.

use crate::error::{Error, Result};
use crate::protocol::{CoordinatorVariant, SworFactory};
use crate::simnet::{SimConfig, Simulation};
use crate::types::{ItemId, WeightedItem};

fn check_eps_delta(epsilon: f64, delta: f64) -> Result<()> {
    if !(epsilon > 0.0 && epsilon <= 0.5) {
        return Err(Error::Config(format!("epsilon {epsilon} outside (0, 1/2]")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Config(format!("delta {delta} outside (0, 1)")));
    }
    Ok(())
}

/// Number of top coordinates removed before measuring residual mass:
/// `ceil(1/eps)`, with slack for `1/eps` landing a hair above an integer.
pub fn tail_count(epsilon: f64) -> usize {
    (1.0 / epsilon - 1e-9).ceil() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HhConfig {
    pub epsilon: f64,
    pub delta: f64,
    /// `ceil(6 ln(1/(delta eps)) / eps)`.
    pub s: usize,
    /// Output size, `ceil(2/eps)`.
    pub cap: usize,
}

impl HhConfig {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        check_eps_delta(epsilon, delta)?;
        let s = (6.0 * (1.0 / (delta * epsilon)).ln() / epsilon).ceil().max(1.0) as usize;
        let cap = (2.0 / epsilon - 1e-9).ceil() as usize;
        Ok(HhConfig {
            epsilon,
            delta,
            s,
            cap,
        })
    }

    pub fn factory(&self) -> SworFactory {
        SworFactory::new(self.s)
    }
}

/// The `cap` heaviest items of a sample, heaviest first. Equal weights
/// keep sample order.
pub fn hh_query(sample: &[(ItemId, f64)], cfg: &HhConfig) -> Vec<(ItemId, f64)> {
    let mut out = sample.to_vec();
    out.sort_by(|a, b| b.1.total_cmp(&a.1));
    out.truncate(cfg.cap);
    out
}

/// Weight vector of a stream prefix, indexed by arrival position.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualVector {
    pub x: Vec<f64>,
}

impl ResidualVector {
    pub fn from_prefix(items: &[WeightedItem]) -> Self {
        ResidualVector {
            x: items.iter().map(|it| it.weight).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.x.iter().sum()
    }

    /// Positions of the `m` largest coordinates. Among equal values the
    /// later position is removed first, so smaller indices stay in the tail.
    fn top(&self, m: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.x.len()).collect();
        idx.sort_by(|&a, &b| self.x[b].total_cmp(&self.x[a]).then(b.cmp(&a)));
        idx.truncate(m);
        idx
    }

    /// `x` with its `m` largest coordinates set to zero.
    pub fn tail(&self, m: usize) -> Vec<f64> {
        let mut t = self.x.clone();
        for i in self.top(m) {
            t[i] = 0.0;
        }
        t
    }

    pub fn tail_norm(&self, m: usize) -> f64 {
        self.tail(m).iter().sum()
    }

    /// Positions with `x_i >= eps * |x_tail(1/eps)|_1`.
    pub fn residual_heavy(&self, epsilon: f64) -> Vec<usize> {
        let bar = epsilon * self.tail_norm(tail_count(epsilon));
        (0..self.x.len()).filter(|&i| self.x[i] >= bar).collect()
    }

    /// Positions with `x_i >= eps * |x|_1`.
    pub fn plain_heavy(&self, epsilon: f64) -> Vec<usize> {
        let bar = epsilon * self.norm();
        (0..self.x.len()).filter(|&i| self.x[i] >= bar).collect()
    }
}

/// How many qualifying ids appear in `output`.
pub fn recovered(output: &[(ItemId, f64)], qualifying: &[ItemId]) -> usize {
    qualifying
        .iter()
        .filter(|q| output.iter().any(|(id, _)| id == *q))
        .count()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L1Config {
    pub epsilon: f64,
    pub delta: f64,
    /// `ceil(10 ln(1/delta) / eps^2)`.
    pub s: usize,
    /// Copies inserted per item, `ceil(s / (2 eps))`.
    pub ell: u32,
}

/// Copy counts above this are slow enough to warn about.
pub const ELL_WARN: u32 = 10_000;

impl L1Config {
    pub fn new(epsilon: f64, delta: f64) -> Result<Self> {
        check_eps_delta(epsilon, delta)?;
        let s = (10.0 * (1.0 / delta).ln() / (epsilon * epsilon)).ceil().max(1.0) as usize;
        let ell = (s as f64 / (2.0 * epsilon)).ceil();
        if ell > u32::MAX as f64 {
            return Err(Error::Size(format!("duplication factor {ell} too large")));
        }
        Ok(L1Config {
            epsilon,
            delta,
            s,
            ell: ell as u32,
        })
    }
}

/// Continuous estimate of the total weight: each item enters the sampler
/// as `ell` copies and the estimate is `s * u / ell` for the `s`-th largest
/// key `u`.
pub struct L1Tracker {
    cfg: L1Config,
    sim: Simulation<SworFactory>,
    items: u64,
    copies: u64,
}

impl L1Tracker {
    pub fn new(cfg: L1Config, sim: SimConfig) -> Result<Self> {
        Self::with_variant(cfg, sim, CoordinatorVariant::FullBuffers)
    }

    pub fn with_variant(cfg: L1Config, sim: SimConfig, variant: CoordinatorVariant) -> Result<Self> {
        let factory = SworFactory::new(cfg.s).with_variant(variant);
        Ok(L1Tracker {
            cfg,
            sim: Simulation::new(&factory, sim)?,
            items: 0,
            copies: 0,
        })
    }

    pub fn config(&self) -> &L1Config {
        &self.cfg
    }

    pub fn simulation(&self) -> &Simulation<SworFactory> {
        &self.sim
    }

    /// Feeds the copies `(token, 1..=ell)` of `item` through its site.
    pub fn on_item(&mut self, item: &WeightedItem) -> Result<()> {
        self.items += 1;
        for d in 1..=self.cfg.ell {
            self.copies += 1;
            let copy = WeightedItem {
                id: ItemId::duplicate(item.id.token, d),
                weight: item.weight,
                site: item.site,
                seq: self.copies,
            };
            self.sim.feed(&copy)?;
        }
        Ok(())
    }

    pub fn items_seen(&self) -> u64 {
        self.items
    }

    /// Current estimate of the total weight seen.
    pub fn estimate(&self) -> Result<f64> {
        if self.items == 0 {
            return Err(Error::Empty);
        }
        let top = self.sim.coordinator().query_entries();
        let u = top.get(self.cfg.s - 1).ok_or(Error::Empty)?.key;
        Ok(self.cfg.s as f64 * u / self.cfg.ell as f64)
    }
}
