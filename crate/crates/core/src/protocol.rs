//! Site and coordinator state machines for distributed weighted sampling
//! without replacement.
//!
//! Sites forward items of unsaturated levels unfiltered ("early" messages)
//! and filter everything else against the last epoch threshold they heard.
//! The coordinator buffers early items per level until `4rs` of them have
//! arrived, then releases the whole level to the sampler. The sampler keeps
//! the `s` largest keys; its minimum `u` drives the epoch broadcasts.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::bits::{derive_seed, streams, RngBits};
use crate::error::{Error, Result};
use crate::key::{self, epoch_of, gen_key, key_exceeds_cut, level_unchecked, pow_r, Cut};
use crate::simnet::{Coordinator, Digest, ProtocolFactory, Site};
use crate::types::{ItemId, ProtocolParams, WeightedItem};

/// Everything that travels over the simulated network.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    /// Unfiltered item of an unsaturated level (site to coordinator).
    Early { id: ItemId, w: f64 },
    /// Item whose key passed the site filter (site to coordinator).
    Regular { id: ItemId, w: f64, v: f64 },
    /// Level `j` released to the sampler (broadcast).
    LevelSaturated { level: u32 },
    /// New site filter threshold `r^j` (broadcast).
    UpdateEpoch { threshold: f64 },
    /// Candidate for one with-replacement slot (site to coordinator).
    SwrSlot { id: ItemId, w: f64, slot: u32, mark: f64 },
    /// New shared with-replacement round (broadcast).
    SwrRound { round: u32 },
}

/// Ledger category of a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerClass {
    Early,
    Regular,
    Saturated,
    Epoch,
}

impl Message {
    pub fn kind(&self) -> &'static str {
        match self {
            Message::Early { .. } => "early",
            Message::Regular { .. } => "regular",
            Message::LevelSaturated { .. } => "level-saturated",
            Message::UpdateEpoch { .. } => "update-epoch",
            Message::SwrSlot { .. } => "swr-slot",
            Message::SwrRound { .. } => "swr-round",
        }
    }

    pub fn ledger_class(&self) -> LedgerClass {
        match self {
            Message::Early { .. } => LedgerClass::Early,
            Message::Regular { .. } | Message::SwrSlot { .. } => LedgerClass::Regular,
            Message::LevelSaturated { .. } => LedgerClass::Saturated,
            Message::UpdateEpoch { .. } | Message::SwrRound { .. } => LedgerClass::Epoch,
        }
    }

    pub fn is_broadcast(&self) -> bool {
        matches!(
            self,
            Message::LevelSaturated { .. } | Message::UpdateEpoch { .. } | Message::SwrRound { .. }
        )
    }
}

/// A released or buffered item together with its key. Ordered by key, ties
/// broken by coordinator arrival order (later arrival ranks higher).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub id: ItemId,
    pub weight: f64,
    pub key: f64,
    pub seq: u64,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.key
            .total_cmp(&other.key)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

// ---------------------------------------------------------------------------
// Site

/// Per-site state: the epoch threshold heard last and the saturation flags.
#[derive(Debug, Clone)]
pub struct SworSite {
    params: ProtocolParams,
    u: f64,
    saturated: Vec<bool>,
    bits: RngBits,
    // Last (weight, threshold) comparison point; duplicate-heavy streams
    // reuse it for long runs.
    cached: Option<(f64, f64, Cut)>,
    decision_bits: u64,
    decisions: u64,
}

impl SworSite {
    pub fn new(params: ProtocolParams, bits: RngBits) -> Self {
        SworSite {
            params,
            u: 0.0,
            saturated: Vec::new(),
            bits,
            cached: None,
            decision_bits: 0,
            decisions: 0,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.u
    }

    pub fn is_saturated(&self, level: u32) -> bool {
        self.saturated.get(level as usize).copied().unwrap_or(false)
    }

    pub fn set_threshold(&mut self, u: f64) {
        self.u = u;
    }

    pub fn set_saturated(&mut self, level: u32) {
        let j = level as usize;
        if self.saturated.len() <= j {
            self.saturated.resize(j + 1, false);
        }
        self.saturated[j] = true;
    }

    /// Mean number of uniform bits spent per filter decision.
    pub fn mean_decision_bits(&self) -> f64 {
        if self.decisions == 0 {
            0.0
        } else {
            self.decision_bits as f64 / self.decisions as f64
        }
    }

    fn cut(&mut self, w: f64) -> Cut {
        match self.cached {
            Some((cw, cu, cut)) if cw == w && cu == self.u => cut,
            _ => {
                let cut = Cut::new(w, self.u);
                self.cached = Some((w, self.u, cut));
                cut
            }
        }
    }

    /// Handles one local arrival; returns the message to send, if any.
    pub fn on_item(&mut self, item: &WeightedItem) -> Option<Message> {
        let w = item.weight;
        let j = level_unchecked(w, self.params.r);
        if !self.is_saturated(j) {
            return Some(Message::Early { id: item.id, w });
        }
        let cut = self.cut(w);
        let (pass, lazy) = key_exceeds_cut(cut, &mut self.bits);
        self.decisions += 1;
        self.decision_bits += lazy.bits_consumed() as u64;
        if !pass {
            return None;
        }
        let key = lazy.complete(w, &mut self.bits);
        Some(Message::Regular {
            id: item.id,
            w,
            v: key.value,
        })
    }

    pub fn on_broadcast(&mut self, msg: &Message) -> Result<()> {
        match *msg {
            Message::LevelSaturated { level } => {
                self.set_saturated(level);
                Ok(())
            }
            Message::UpdateEpoch { threshold } => {
                if threshold < self.u {
                    return Err(Error::Protocol(format!(
                        "epoch threshold {threshold} below current site threshold {}",
                        self.u
                    )));
                }
                self.u = threshold;
                Ok(())
            }
            ref other => Err(Error::Protocol(format!(
                "site cannot handle {} message",
                other.kind()
            ))),
        }
    }
}

impl Site for SworSite {
    fn on_item(&mut self, item: &WeightedItem, out: &mut Vec<Message>) -> Result<()> {
        out.extend(SworSite::on_item(self, item));
        Ok(())
    }

    fn on_broadcast(&mut self, msg: &Message) -> Result<()> {
        SworSite::on_broadcast(self, msg)
    }
}

// ---------------------------------------------------------------------------
// Coordinator

/// How the coordinator stores early items of unsaturated levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum CoordinatorVariant {
    /// Keep every buffered item.
    #[default]
    FullBuffers,
    /// Keep only the `s` largest keys of each level plus counters. A level
    /// releases at most `s` items into a sample of size `s`, so this is
    /// output-equivalent to full buffers.
    TopS,
}

#[derive(Debug, Clone, Default)]
struct LevelSet {
    count: u64,
    total_weight: f64,
    max_weight: f64,
    full: Vec<Entry>,
    // Min-heap of retained entries for the TopS variant.
    top: BinaryHeap<Reverse<Entry>>,
}

#[derive(Debug, Clone)]
pub struct SworCoordinator {
    params: ProtocolParams,
    variant: CoordinatorVariant,
    bits: RngBits,
    sample: BinaryHeap<Reverse<Entry>>,
    u: f64,
    epoch: Option<i32>,
    levels: Vec<LevelSet>,
    saturated: Vec<bool>,
    arrivals: u64,
    release_log: Option<Vec<ItemId>>,
}

impl SworCoordinator {
    pub fn new(params: ProtocolParams, variant: CoordinatorVariant, bits: RngBits) -> Self {
        SworCoordinator {
            params,
            variant,
            bits,
            sample: BinaryHeap::with_capacity(params.s + 1),
            u: 0.0,
            epoch: None,
            levels: Vec::new(),
            saturated: Vec::new(),
            arrivals: 0,
            release_log: None,
        }
    }

    /// Records the ids fed to the sampler, in release order.
    pub fn with_release_log(mut self) -> Self {
        self.release_log = Some(Vec::new());
        self
    }

    pub fn release_log(&self) -> Option<&[ItemId]> {
        self.release_log.as_deref()
    }

    pub fn params(&self) -> ProtocolParams {
        self.params
    }

    /// The `s`-th largest released key, or 0 while fewer than `s` released.
    pub fn threshold(&self) -> f64 {
        self.u
    }

    pub fn epoch(&self) -> Option<i32> {
        self.epoch
    }

    pub fn sample_len(&self) -> usize {
        self.sample.len()
    }

    pub fn sample_entries(&self) -> Vec<Entry> {
        let mut v: Vec<Entry> = self.sample.iter().map(|r| r.0).collect();
        v.sort_by(|a, b| b.cmp(a));
        v
    }

    pub fn is_saturated(&self, level: u32) -> bool {
        self.saturated.get(level as usize).copied().unwrap_or(false)
    }

    /// Number of early items received so far for `level`.
    pub fn level_count(&self, level: u32) -> u64 {
        self.levels.get(level as usize).map_or(0, |l| l.count)
    }

    /// Entries currently held for unsaturated levels.
    pub fn buffered_entries(&self) -> Vec<Entry> {
        let mut v = Vec::new();
        for l in &self.levels {
            v.extend(l.full.iter().copied());
            v.extend(l.top.iter().map(|r| r.0));
        }
        v
    }

    fn level_mut(&mut self, j: u32) -> &mut LevelSet {
        let j = j as usize;
        if self.levels.len() <= j {
            self.levels.resize_with(j + 1, LevelSet::default);
            self.saturated.resize(j + 1, false);
        }
        &mut self.levels[j]
    }

    fn next_seq(&mut self) -> u64 {
        self.arrivals += 1;
        self.arrivals
    }

    /// Inserts into the sample and evicts the minimum beyond `s`; does not
    /// announce epochs.
    fn insert(&mut self, e: Entry) {
        if let Some(log) = self.release_log.as_mut() {
            log.push(e.id);
        }
        let s = self.params.s;
        if self.sample.len() == s {
            // Full: only a key above the minimum changes anything.
            if let Some(Reverse(min)) = self.sample.peek() {
                if e <= *min {
                    return;
                }
            }
            self.sample.pop();
        }
        self.sample.push(Reverse(e));
        self.u = if self.sample.len() == s {
            self.sample.peek().map_or(0.0, |r| r.0.key)
        } else {
            0.0
        };
    }

    /// Announces a new epoch when `u` has entered a higher interval.
    fn refresh_epoch(&mut self) -> Option<Message> {
        if self.u <= 0.0 {
            return None;
        }
        let j = epoch_of(self.u, self.params.r).ok()?;
        if self.epoch.is_some_and(|cur| j <= cur) {
            return None;
        }
        self.epoch = Some(j);
        Some(Message::UpdateEpoch {
            threshold: pow_r(self.params.r, j),
        })
    }

    /// Adds one released item to the sample and returns the epoch broadcast
    /// it triggers, if any.
    pub fn add_to_sample(&mut self, e: Entry) -> Option<Message> {
        self.insert(e);
        self.refresh_epoch()
    }

    /// Handles an early message. Generates the key on arrival and buffers it;
    /// when the level reaches `4rs` items it is released in arrival order.
    pub fn on_early(&mut self, id: ItemId, w: f64) -> Result<Vec<Message>> {
        let j = level_unchecked(w, self.params.r);
        if self.is_saturated(j) {
            return Err(Error::Protocol(format!(
                "early message for saturated level {j} (item {id})"
            )));
        }
        let key = gen_key(w, &mut self.bits);
        let seq = self.next_seq();
        let entry = Entry {
            id,
            weight: w,
            key: key.value,
            seq,
        };
        let s = self.params.s;
        let variant = self.variant;
        let level = self.level_mut(j);
        level.count += 1;
        level.total_weight += w;
        level.max_weight = level.max_weight.max(w);
        match variant {
            CoordinatorVariant::FullBuffers => level.full.push(entry),
            CoordinatorVariant::TopS => {
                level.top.push(Reverse(entry));
                if level.top.len() > s {
                    level.top.pop();
                }
            }
        }
        if level.count < self.params.saturation_size() {
            return Ok(Vec::new());
        }
        self.flush(j)
    }

    fn flush(&mut self, j: u32) -> Result<Vec<Message>> {
        let level = std::mem::take(&mut self.levels[j as usize]);
        // Every released item carries at most 1/(4s) of its level's weight.
        if level.max_weight * 4.0 * self.params.s as f64 > level.total_weight * (1.0 + 1e-12) {
            return Err(Error::Protocol(format!(
                "level {j} released an item heavier than 1/(4s) of the level weight"
            )));
        }
        let mut released = level.full;
        if !level.top.is_empty() {
            released = level.top.into_vec().into_iter().map(|r| r.0).collect();
            released.sort_by_key(|e| e.seq);
        }
        for e in released {
            self.insert(e);
        }
        self.levels[j as usize].count = level.count;
        self.saturated[j as usize] = true;
        let mut out = Vec::with_capacity(2);
        out.extend(self.refresh_epoch());
        out.push(Message::LevelSaturated { level: j });
        Ok(out)
    }

    /// Handles a regular message; stale keys at or below `u` are dropped.
    pub fn on_regular(&mut self, id: ItemId, w: f64, v: f64) -> Option<Message> {
        let seq = self.next_seq();
        if v <= self.u {
            return None;
        }
        self.add_to_sample(Entry {
            id,
            weight: w,
            key: v,
            seq,
        })
    }

    /// The `s` largest keys among the sample and all unsaturated buffers,
    /// largest first.
    pub fn query_entries(&self) -> Vec<Entry> {
        let mut all = self.sample_entries();
        all.extend(self.buffered_entries());
        all.sort_by(|a, b| b.cmp(a));
        all.truncate(self.params.s);
        all
    }

    /// Current weighted sample without replacement: `(id, weight)` pairs,
    /// largest key first.
    pub fn query_sample(&self) -> Vec<(ItemId, f64)> {
        self.query_entries()
            .into_iter()
            .map(|e| (e.id, e.weight))
            .collect()
    }

    /// Structural invariants; used by the fuzz suite.
    pub fn check_invariants(&self) -> Result<()> {
        let s = self.params.s;
        if self.sample.len() > s {
            return Err(Error::Protocol(format!("|S| = {} exceeds s = {s}", self.sample.len())));
        }
        let min = self.sample.peek().map(|r| r.0.key);
        let want_u = if self.sample.len() == s { min.unwrap_or(0.0) } else { 0.0 };
        if self.u != want_u {
            return Err(Error::Protocol(format!("u = {} but expected {want_u}", self.u)));
        }
        for (j, l) in self.levels.iter().enumerate() {
            if self.saturated[j] {
                if !l.full.is_empty() || !l.top.is_empty() {
                    return Err(Error::Protocol(format!("saturated level {j} still buffers items")));
                }
            } else if l.count >= self.params.saturation_size() {
                return Err(Error::Protocol(format!("level {j} holds {} items unflushed", l.count)));
            } else if l.full.len() + l.top.len() > l.count as usize {
                return Err(Error::Protocol(format!("level {j} buffer larger than its counter")));
            }
        }
        Ok(())
    }
}

impl Coordinator for SworCoordinator {
    fn on_message(&mut self, src: usize, msg: Message, out: &mut Vec<Message>) -> Result<()> {
        match msg {
            Message::Early { id, w } => {
                out.extend(self.on_early(id, w)?);
                Ok(())
            }
            Message::Regular { id, w, v } => {
                out.extend(self.on_regular(id, w, v));
                Ok(())
            }
            other => Err(Error::Protocol(format!(
                "coordinator cannot handle {} message from site {src}",
                other.kind()
            ))),
        }
    }

    fn digest(&self) -> Digest {
        Digest {
            sample_len: self.sample.len(),
            threshold: self.u,
        }
    }

    fn query(&self) -> Result<Vec<(ItemId, f64)>> {
        Ok(self.query_sample())
    }

    fn check_invariants(&self) -> Result<()> {
        SworCoordinator::check_invariants(self)
    }
}

/// Builds SWOR sites and coordinator for the simulator.
#[derive(Debug, Clone, Copy)]
pub struct SworFactory {
    pub s: usize,
    pub variant: CoordinatorVariant,
    pub log_releases: bool,
}

impl SworFactory {
    pub fn new(s: usize) -> Self {
        SworFactory {
            s,
            variant: CoordinatorVariant::FullBuffers,
            log_releases: false,
        }
    }

    pub fn with_variant(mut self, variant: CoordinatorVariant) -> Self {
        self.variant = variant;
        self
    }

    pub fn logging_releases(mut self) -> Self {
        self.log_releases = true;
        self
    }
}

impl ProtocolFactory for SworFactory {
    type Site = SworSite;
    type Coordinator = SworCoordinator;

    fn build(&self, k: usize, seed: u64) -> Result<(Vec<SworSite>, SworCoordinator)> {
        let params = ProtocolParams::new(self.s, k)?;
        let sites = (0..k)
            .map(|i| SworSite::new(params, RngBits::from_seed(derive_seed(seed, streams::site(i)))))
            .collect();
        let mut coord = SworCoordinator::new(
            params,
            self.variant,
            RngBits::from_seed(derive_seed(seed, streams::COORDINATOR)),
        );
        if self.log_releases {
            coord = coord.with_release_log();
        }
        Ok((sites, coord))
    }

    fn ledger_params(&self, k: usize) -> (usize, u64) {
        let r = ProtocolParams::new(self.s.max(1), k.max(1)).map_or(2, |p| p.r);
        (self.s, r)
    }
}

/// The order in which items reach the sampler, computed from weights alone:
/// items of saturated levels at arrival, early items when their level fills.
/// Regular items appear whether or not their key passes a site filter.
pub fn release_order(items: &[WeightedItem], params: ProtocolParams) -> Vec<ItemId> {
    let cap = params.saturation_size();
    let mut counts: Vec<u64> = Vec::new();
    let mut pending: Vec<Vec<ItemId>> = Vec::new();
    let mut out = Vec::new();
    for it in items {
        let j = key::level_unchecked(it.weight, params.r) as usize;
        if counts.len() <= j {
            counts.resize(j + 1, 0);
            pending.resize_with(j + 1, Vec::new);
        }
        if counts[j] >= cap {
            out.push(it.id);
            continue;
        }
        counts[j] += 1;
        pending[j].push(it.id);
        if counts[j] == cap {
            out.append(&mut pending[j]);
        }
    }
    out
}
