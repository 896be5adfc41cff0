//! Deterministic synchronous-round simulator for the coordinator model.
//!
//! `k` sites each observe at most one item per round and talk to a single
//! coordinator over FIFO channels. After each item the simulator drains every
//! channel, including broadcasts triggered along the way, before the next
//! item arrives, so queries always see a quiescent state. Messages are
//! stamped with the round they are sent in; `delivery` rounds-per-hop only
//! shifts those stamps.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::bits::{derive_seed, streams, RngBits};
use crate::error::{Error, Result};
use crate::protocol::{LedgerClass, Message};
use crate::types::{ItemId, WeightedItem};

pub trait Site {
    fn on_item(&mut self, item: &WeightedItem, out: &mut Vec<Message>) -> Result<()>;
    fn on_broadcast(&mut self, msg: &Message) -> Result<()>;
}

/// Coordinator-side snapshot written to the transcript after every item.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Digest {
    pub sample_len: usize,
    pub threshold: f64,
}

pub trait Coordinator {
    /// Handles one message from `src`; broadcasts go to `out`.
    fn on_message(&mut self, src: usize, msg: Message, out: &mut Vec<Message>) -> Result<()>;
    fn digest(&self) -> Digest;
    fn query(&self) -> Result<Vec<(ItemId, f64)>>;
    fn check_invariants(&self) -> Result<()> {
        Ok(())
    }
}

/// Builds one protocol instance for `k` sites from a run seed.
pub trait ProtocolFactory {
    type Site: Site;
    type Coordinator: Coordinator;

    fn build(&self, k: usize, seed: u64) -> Result<(Vec<Self::Site>, Self::Coordinator)>;

    /// `(s, r)` reported in ledger exports.
    fn ledger_params(&self, k: usize) -> (usize, u64);
}

/// How stream items are assigned to sites.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Partitioner {
    #[default]
    RoundRobin,
    SingleSite,
    Random,
    /// Per epoch `[k^i, k^(i+1))` of the stream, each site gets one
    /// contiguous block, in a seed-permuted site order.
    AdversarialEpoch,
    /// Keep the site recorded on each item.
    FileOrder,
}

impl fmt::Display for Partitioner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Partitioner::RoundRobin => "round-robin",
            Partitioner::SingleSite => "single-site",
            Partitioner::Random => "random",
            Partitioner::AdversarialEpoch => "adversarial-epoch",
            Partitioner::FileOrder => "file-order",
        })
    }
}

impl FromStr for Partitioner {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "round-robin" => Partitioner::RoundRobin,
            "single-site" => Partitioner::SingleSite,
            "random" => Partitioner::Random,
            "adversarial-epoch" => Partitioner::AdversarialEpoch,
            "file-order" => Partitioner::FileOrder,
            _ => return Err(Error::Config(format!("unknown partitioner {s:?}"))),
        })
    }
}

impl Partitioner {
    /// Rewrites `site` on every item.
    pub fn assign(&self, items: &mut [WeightedItem], k: usize, seed: u64) -> Result<()> {
        if k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        match self {
            Partitioner::RoundRobin => {
                for (i, it) in items.iter_mut().enumerate() {
                    it.site = i % k;
                }
            }
            Partitioner::SingleSite => items.iter_mut().for_each(|it| it.site = 0),
            Partitioner::Random => {
                let mut rng = RngBits::from_seed(derive_seed(seed, streams::PARTITIONER));
                for it in items.iter_mut() {
                    it.site = rng.rng().gen_range(0..k);
                }
            }
            Partitioner::AdversarialEpoch => {
                let sites = epoch_block_sites(items.len(), k, seed);
                for (it, s) in items.iter_mut().zip(sites) {
                    it.site = s;
                }
            }
            Partitioner::FileOrder => {
                if let Some(it) = items.iter().find(|it| it.site >= k) {
                    return Err(Error::Config(format!(
                        "item {} names site {} but k = {k}",
                        it.id, it.site
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Site of each of the first `n` positions under the epoch-block layout.
///
/// Position 0 forms the opening epoch. Epoch `i >= 0` then covers positions
/// `[k^i, k^(i+1))`, split into `k` contiguous blocks whose sizes differ by at
/// most one, handed to sites in an order permuted by `seed`.
pub fn epoch_block_sites(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut rng = RngBits::from_seed(derive_seed(seed, streams::PARTITIONER));
    let mut out = Vec::with_capacity(n);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(rng.rng());
    if n == 0 {
        return out;
    }
    out.push(order[0]);
    let mut start: usize = 1;
    while out.len() < n {
        let end = if k == 1 {
            n
        } else {
            start.saturating_mul(k).min(n)
        };
        let len = end - start;
        order.shuffle(rng.rng());
        let base = len / k;
        let extra = len % k;
        for (b, &site) in order.iter().enumerate() {
            let size = base + usize::from(b < extra);
            out.extend(std::iter::repeat(site).take(size));
        }
        start = end;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub k: usize,
    pub seed: u64,
    /// Rounds per hop; 0 delivers within the same round.
    pub delivery: u32,
    pub partitioner: Partitioner,
    pub record_transcript: bool,
    /// Run the invariant monitor after every item.
    pub check_invariants: bool,
}

impl SimConfig {
    pub fn new(k: usize, seed: u64) -> Self {
        SimConfig {
            k,
            seed,
            delivery: 1,
            partitioner: Partitioner::RoundRobin,
            record_transcript: false,
            check_invariants: false,
        }
    }

    pub fn with_partitioner(mut self, p: Partitioner) -> Self {
        self.partitioner = p;
        self
    }

    pub fn with_transcript(mut self) -> Self {
        self.record_transcript = true;
        self
    }

    pub fn with_invariants(mut self) -> Self {
        self.check_invariants = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Message counts. Broadcasts are stored once and count `k` messages each.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MessageLedger {
    pub k: u64,
    pub early: u64,
    pub regular: u64,
    pub saturated_broadcasts: u64,
    pub epoch_broadcasts: u64,
    /// Messages stamped with each round, for rounds with traffic.
    pub per_round: BTreeMap<u64, u64>,
}

impl MessageLedger {
    pub fn new(k: usize) -> Self {
        MessageLedger {
            k: k as u64,
            ..Default::default()
        }
    }

    pub fn saturated_messages(&self) -> u64 {
        self.k * self.saturated_broadcasts
    }

    pub fn epoch_messages(&self) -> u64 {
        self.k * self.epoch_broadcasts
    }

    pub fn total(&self) -> u64 {
        self.early + self.regular + self.saturated_messages() + self.epoch_messages()
    }

    fn record(&mut self, round: u64, msg: &Message) {
        let n = match msg.ledger_class() {
            LedgerClass::Early => {
                self.early += 1;
                1
            }
            LedgerClass::Regular => {
                self.regular += 1;
                1
            }
            LedgerClass::Saturated => {
                self.saturated_broadcasts += 1;
                self.k
            }
            LedgerClass::Epoch => {
                self.epoch_broadcasts += 1;
                self.k
            }
        };
        *self.per_round.entry(round).or_default() += n;
    }

    /// `total == early + regular + k * broadcasts == sum of per-round totals`.
    pub fn check(&self) -> Result<()> {
        let by_round: u64 = self.per_round.values().sum();
        if by_round != self.total() {
            return Err(Error::Protocol(format!(
                "ledger per-round sum {by_round} != total {}",
                self.total()
            )));
        }
        Ok(())
    }

    pub const CSV_HEADER: &'static str = "k,s,r,W,n,early,regular,saturated_bcast,epoch_bcast,total";

    /// One CSV row; broadcast columns count messages (k per broadcast).
    pub fn csv_row(&self, s: usize, r: u64, total_weight: f64, n: u64) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.k,
            s,
            r,
            total_weight,
            n,
            self.early,
            self.regular,
            self.saturated_messages(),
            self.epoch_messages(),
            self.total()
        )
    }
}

/// Network endpoint in transcript lines: `-` (environment), `c`, or `s<i>`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Endpoint {
    Env,
    Coordinator,
    Site(usize),
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Endpoint::Env => f.write_str("-"),
            Endpoint::Coordinator => f.write_str("c"),
            Endpoint::Site(i) => write!(f, "s{i}"),
        }
    }
}

impl FromStr for Endpoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "-" => Ok(Endpoint::Env),
            "c" => Ok(Endpoint::Coordinator),
            _ => s
                .strip_prefix('s')
                .and_then(|n| n.parse().ok())
                .map(Endpoint::Site)
                .ok_or_else(|| Error::Domain(format!("bad endpoint {s:?}"))),
        }
    }
}

/// One parsed transcript line: `round,kind,src,dst,id,w,v_or_level`.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub round: u64,
    pub kind: String,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub id: Option<ItemId>,
    pub w: Option<f64>,
    pub extra: String,
}

impl Record {
    fn parse(line: &str, lineno: usize) -> Result<Record> {
        let err = |msg: String| Error::Parse { line: lineno, msg };
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(err(format!("expected 7 fields, got {}", f.len())));
        }
        let round = f[0].parse().map_err(|_| err(format!("bad round {:?}", f[0])))?;
        let src = f[2].parse().map_err(|e: Error| err(e.to_string()))?;
        let dst = f[3].parse().map_err(|e: Error| err(e.to_string()))?;
        let id = if f[4].is_empty() {
            None
        } else {
            Some(f[4].parse().map_err(|e: Error| err(e.to_string()))?)
        };
        let w = if f[5].is_empty() {
            None
        } else {
            Some(f[5].parse().map_err(|_| err(format!("bad weight {:?}", f[5])))?)
        };
        Ok(Record {
            round,
            kind: f[1].to_string(),
            src,
            dst,
            id,
            w,
            extra: f[6].to_string(),
        })
    }

    pub fn to_line(&self) -> String {
        let id = self.id.map(|i| i.to_string()).unwrap_or_default();
        let w = self.w.map(|w| w.to_string()).unwrap_or_default();
        format!(
            "{},{},{},{},{},{},{}",
            self.round, self.kind, self.src, self.dst, id, w, self.extra
        )
    }
}

/// Line-oriented event log. The text is the contract: identical runs
/// produce identical bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    text: String,
}

impl Transcript {
    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn is_empty(&self) -> bool {
        self.text.is_empty()
    }

    pub fn from_text(text: impl Into<String>) -> Self {
        Transcript { text: text.into() }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Transcript::from_text(std::fs::read_to_string(path)?))
    }

    pub fn dump(&self, path: &Path) -> Result<()> {
        std::fs::write(path, &self.text)?;
        Ok(())
    }

    /// Parsed event lines; `#` comment lines are skipped.
    pub fn records(&self) -> Result<Vec<Record>> {
        self.text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.starts_with('#'))
            .map(|(i, l)| Record::parse(l, i + 1))
            .collect()
    }

    /// Items delivered to sites, in order, with their sites preserved.
    pub fn items(&self) -> Result<Vec<WeightedItem>> {
        let mut out = Vec::new();
        for (i, rec) in self.records()?.into_iter().enumerate() {
            if rec.kind != "item" {
                continue;
            }
            let site = match rec.dst {
                Endpoint::Site(s) => s,
                _ => {
                    return Err(Error::Parse {
                        line: i + 1,
                        msg: "item not addressed to a site".into(),
                    })
                }
            };
            let (Some(id), Some(w)) = (rec.id, rec.w) else {
                return Err(Error::Parse {
                    line: i + 1,
                    msg: "item without id or weight".into(),
                });
            };
            out.push(WeightedItem::new(id, w, site, out.len() as u64 + 1)?);
        }
        Ok(out)
    }

    /// Round stamps never decrease along any `(src, dst)` channel.
    pub fn check_fifo(&self) -> Result<()> {
        let mut last: std::collections::HashMap<(Endpoint, Endpoint), u64> = Default::default();
        for (i, rec) in self.records()?.into_iter().enumerate() {
            if rec.kind == "item" || rec.kind == "digest" {
                continue;
            }
            let prev = last.entry((rec.src, rec.dst)).or_insert(0);
            if rec.round < *prev {
                return Err(Error::Protocol(format!(
                    "line {}: channel {}->{} went back from round {} to {}",
                    i + 1,
                    rec.src,
                    rec.dst,
                    prev,
                    rec.round
                )));
            }
            *prev = rec.round;
        }
        Ok(())
    }

    fn push_item(&mut self, round: u64, item: &WeightedItem) {
        let _ = writeln!(
            self.text,
            "{round},item,-,s{},{},{},",
            item.site, item.id, item.weight
        );
    }

    fn push_message(&mut self, round: u64, src: Endpoint, dst: Endpoint, msg: &Message) {
        let t = &mut self.text;
        let _ = match msg {
            Message::Early { id, w } => writeln!(t, "{round},early,{src},{dst},{id},{w},"),
            Message::Regular { id, w, v } => writeln!(t, "{round},regular,{src},{dst},{id},{w},{v}"),
            Message::LevelSaturated { level } => {
                writeln!(t, "{round},level-saturated,{src},{dst},,,{level}")
            }
            Message::UpdateEpoch { threshold } => {
                writeln!(t, "{round},update-epoch,{src},{dst},,,{threshold}")
            }
            Message::SwrSlot { id, w, slot, mark } => {
                writeln!(t, "{round},swr-slot,{src},{dst},{id},{w},{slot}:{mark}")
            }
            Message::SwrRound { round: j } => writeln!(t, "{round},swr-round,{src},{dst},,,{j}"),
        };
    }

    fn push_digest(&mut self, round: u64, d: Digest) {
        let _ = writeln!(
            self.text,
            "{round},digest,c,c,,{},{}",
            d.sample_len, d.threshold
        );
    }
}

struct Envelope {
    seq: u64,
    msg: Message,
}

/// Checks message-level invariants while the simulation runs.
#[derive(Debug, Default)]
struct Monitor {
    last_threshold: f64,
    last_epoch_payload: Option<f64>,
    saturated_levels: HashSet<u32>,
    last_swr_round: Option<u32>,
}

impl Monitor {
    fn on_broadcast(&mut self, msg: &Message) -> Result<()> {
        match *msg {
            Message::UpdateEpoch { threshold } => {
                if self.last_epoch_payload.is_some_and(|p| threshold <= p) {
                    return Err(Error::Protocol(format!(
                        "epoch threshold {threshold} not above previous {:?}",
                        self.last_epoch_payload
                    )));
                }
                self.last_epoch_payload = Some(threshold);
            }
            Message::LevelSaturated { level } => {
                if !self.saturated_levels.insert(level) {
                    return Err(Error::Protocol(format!("level {level} saturated twice")));
                }
            }
            Message::SwrRound { round } => {
                if self.last_swr_round.is_some_and(|p| round <= p) {
                    return Err(Error::Protocol(format!("swr round {round} did not advance")));
                }
                self.last_swr_round = Some(round);
            }
            _ => {}
        }
        Ok(())
    }

    fn on_settled(&mut self, d: Digest) -> Result<()> {
        if d.threshold < self.last_threshold {
            return Err(Error::Protocol(format!(
                "coordinator threshold fell from {} to {}",
                self.last_threshold, d.threshold
            )));
        }
        self.last_threshold = d.threshold;
        Ok(())
    }
}

/// A running simulation. Feed items one at a time; every call returns with
/// all channels drained.
pub struct Simulation<P: ProtocolFactory> {
    config: SimConfig,
    sites: Vec<P::Site>,
    coordinator: P::Coordinator,
    up: Vec<VecDeque<Envelope>>,
    down: Vec<VecDeque<Envelope>>,
    up_sent: Vec<u64>,
    up_recv: Vec<u64>,
    down_sent: Vec<u64>,
    down_recv: Vec<u64>,
    round: u64,
    site_round: Vec<Option<u64>>,
    ledger: MessageLedger,
    transcript: Transcript,
    monitor: Option<Monitor>,
    items: u64,
    total_weight: f64,
    scratch: Vec<Message>,
}

impl<P: ProtocolFactory> Simulation<P> {
    pub fn new(factory: &P, config: SimConfig) -> Result<Self> {
        config.validate()?;
        let k = config.k;
        let (sites, coordinator) = factory.build(k, config.seed)?;
        let monitor = config.check_invariants.then(Monitor::default);
        Ok(Simulation {
            sites,
            coordinator,
            up: (0..k).map(|_| VecDeque::new()).collect(),
            down: (0..k).map(|_| VecDeque::new()).collect(),
            up_sent: vec![0; k],
            up_recv: vec![0; k],
            down_sent: vec![0; k],
            down_recv: vec![0; k],
            round: 1,
            site_round: vec![None; k],
            ledger: MessageLedger::new(k),
            transcript: Transcript::default(),
            monitor,
            items: 0,
            total_weight: 0.0,
            scratch: Vec::new(),
            config,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn coordinator(&self) -> &P::Coordinator {
        &self.coordinator
    }

    pub fn sites(&self) -> &[P::Site] {
        &self.sites
    }

    pub fn ledger(&self) -> &MessageLedger {
        &self.ledger
    }

    pub fn transcript(&self) -> &Transcript {
        &self.transcript
    }

    pub fn items_seen(&self) -> u64 {
        self.items
    }

    pub fn total_weight(&self) -> f64 {
        self.total_weight
    }

    /// Delivers one item to its site and settles every resulting message.
    pub fn feed(&mut self, item: &WeightedItem) -> Result<()> {
        let site = item.site;
        if site >= self.config.k {
            return Err(Error::Config(format!(
                "item {} assigned to site {site} but k = {}",
                item.id, self.config.k
            )));
        }
        if self.site_round[site] == Some(self.round) {
            self.round += 1;
        }
        self.site_round[site] = Some(self.round);
        self.items += 1;
        self.total_weight += item.weight;
        let round = self.round;
        let recording = self.config.record_transcript;
        if recording {
            self.transcript.push_item(round, item);
        }

        let mut out = std::mem::take(&mut self.scratch);
        out.clear();
        self.sites[site]
            .on_item(item, &mut out)
            .map_err(|e| self.context(e, item))?;
        for msg in out.drain(..) {
            self.ledger.record(round, &msg);
            if recording {
                self.transcript
                    .push_message(round, Endpoint::Site(site), Endpoint::Coordinator, &msg);
            }
            self.up_sent[site] += 1;
            self.up[site].push_back(Envelope {
                seq: self.up_sent[site],
                msg,
            });
        }
        let sent = !self.up[site].is_empty();
        self.scratch = out;
        if sent {
            self.settle(round).map_err(|e| self.context(e, item))?;
        }

        let digest = self.coordinator.digest();
        if recording {
            self.transcript.push_digest(round, digest);
        }
        if let Some(mon) = self.monitor.as_mut() {
            mon.on_settled(digest).map_err(|e| Self::wrap(e, item))?;
            self.coordinator
                .check_invariants()
                .map_err(|e| Self::wrap(e, item))?;
            self.ledger.check().map_err(|e| Self::wrap(e, item))?;
        }
        Ok(())
    }

    fn wrap(e: Error, item: &WeightedItem) -> Error {
        match e {
            Error::Protocol(m) => Error::Protocol(format!("item seq {} ({}): {m}", item.seq, item.id)),
            other => other,
        }
    }

    fn context(&self, e: Error, item: &WeightedItem) -> Error {
        Self::wrap(e, item)
    }

    fn settle(&mut self, round: u64) -> Result<()> {
        let k = self.config.k;
        let hop = self.config.delivery as u64;
        let mut bcast = Vec::new();
        loop {
            let mut moved = false;
            for src in 0..k {
                while let Some(env) = self.up[src].pop_front() {
                    moved = true;
                    self.up_recv[src] += 1;
                    if env.seq != self.up_recv[src] {
                        return Err(Error::Protocol(format!(
                            "FIFO breach on s{src}->c: got #{} expected #{}",
                            env.seq, self.up_recv[src]
                        )));
                    }
                    self.coordinator.on_message(src, env.msg, &mut bcast)?;
                    for b in bcast.drain(..) {
                        self.broadcast(round + hop, b)?;
                    }
                }
            }
            for dst in 0..k {
                while let Some(env) = self.down[dst].pop_front() {
                    moved = true;
                    self.down_recv[dst] += 1;
                    if env.seq != self.down_recv[dst] {
                        return Err(Error::Protocol(format!(
                            "FIFO breach on c->s{dst}: got #{} expected #{}",
                            env.seq, self.down_recv[dst]
                        )));
                    }
                    self.sites[dst].on_broadcast(&env.msg)?;
                }
            }
            if !moved {
                return Ok(());
            }
        }
    }

    fn broadcast(&mut self, round: u64, msg: Message) -> Result<()> {
        if !msg.is_broadcast() {
            return Err(Error::Protocol(format!(
                "coordinator emitted non-broadcast {} message",
                msg.kind()
            )));
        }
        if let Some(mon) = self.monitor.as_mut() {
            mon.on_broadcast(&msg)?;
        }
        self.ledger.record(round, &msg);
        for dst in 0..self.config.k {
            if self.config.record_transcript {
                self.transcript
                    .push_message(round, Endpoint::Coordinator, Endpoint::Site(dst), &msg);
            }
            self.down_sent[dst] += 1;
            self.down[dst].push_back(Envelope {
                seq: self.down_sent[dst],
                msg: msg.clone(),
            });
        }
        Ok(())
    }

    pub fn query(&self) -> Result<Vec<(ItemId, f64)>> {
        self.coordinator.query()
    }

    pub fn finish(self) -> RunOutput<P> {
        RunOutput {
            transcript: self.transcript,
            ledger: self.ledger,
            sites: self.sites,
            coordinator: self.coordinator,
            items: self.items,
            total_weight: self.total_weight,
        }
    }
}

pub struct RunOutput<P: ProtocolFactory> {
    pub transcript: Transcript,
    pub ledger: MessageLedger,
    pub sites: Vec<P::Site>,
    pub coordinator: P::Coordinator,
    pub items: u64,
    pub total_weight: f64,
}

/// Assigns sites per the configured partitioner and returns the stream the
/// simulator will see.
pub fn partition(stream: &[WeightedItem], config: &SimConfig) -> Result<Vec<WeightedItem>> {
    let mut items = stream.to_vec();
    config.partitioner.assign(&mut items, config.k, config.seed)?;
    Ok(items)
}

/// Runs the whole stream to completion.
pub fn run<P: ProtocolFactory>(
    stream: &[WeightedItem],
    config: &SimConfig,
    factory: &P,
) -> Result<RunOutput<P>> {
    let items = partition(stream, config)?;
    let mut sim = Simulation::new(factory, config.clone())?;
    for it in &items {
        sim.feed(it)?;
    }
    Ok(sim.finish())
}

/// Runs the stream and records the query output right after each probe time
/// (1-based item counts, any order).
pub fn run_probed<P: ProtocolFactory>(
    stream: &[WeightedItem],
    config: &SimConfig,
    factory: &P,
    probes: &[usize],
) -> Result<(RunOutput<P>, Vec<Vec<(ItemId, f64)>>)> {
    let items = partition(stream, config)?;
    for &t in probes {
        if t == 0 || t > items.len() {
            return Err(Error::OutOfRange(format!(
                "probe time {t} outside 1..={}",
                items.len()
            )));
        }
    }
    let mut results = vec![Vec::new(); probes.len()];
    let mut sim = Simulation::new(factory, config.clone())?;
    for (i, it) in items.iter().enumerate() {
        sim.feed(it)?;
        for (slot, &t) in probes.iter().enumerate() {
            if t == i + 1 {
                results[slot] = sim.query()?;
            }
        }
    }
    Ok((sim.finish(), results))
}

/// A stream bound to a configuration, probed by replaying from scratch.
pub struct RunHandle<'a, P: ProtocolFactory> {
    pub stream: &'a [WeightedItem],
    pub config: SimConfig,
    pub factory: &'a P,
}

impl<'a, P: ProtocolFactory> RunHandle<'a, P> {
    pub fn new(stream: &'a [WeightedItem], config: SimConfig, factory: &'a P) -> Self {
        RunHandle {
            stream,
            config,
            factory,
        }
    }

    /// Query output once the `t`-th item's effects have settled.
    pub fn probe_at(&self, t: usize) -> Result<Vec<(ItemId, f64)>> {
        let (_, mut res) = run_probed(self.stream, &self.config, self.factory, &[t])?;
        Ok(res.pop().unwrap_or_default())
    }
}

/// Re-runs the items recorded in `transcript` (keeping their sites) and
/// returns the fresh output. A faithful transcript replays to identical
/// bytes.
pub fn replay<P: ProtocolFactory>(
    transcript: &Transcript,
    config: &SimConfig,
    factory: &P,
) -> Result<RunOutput<P>> {
    transcript.check_fifo()?;
    let items = transcript.items()?;
    let cfg = SimConfig {
        partitioner: Partitioner::FileOrder,
        record_transcript: true,
        ..config.clone()
    };
    run(&items, &cfg, factory)
}
