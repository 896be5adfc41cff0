//! Weighted sampling with replacement as `s` independent single-item
//! samplers.
//!
//! An integer weight `w` stands for `w` unit copies, each with a uniform
//! mark; a slot holds the item owning the smallest mark seen so far, which
//! is item `i` with probability `w_i / W`. The coordinator tracks a shared
//! round `j`: every slot's current minimum is below `2^-j`, so sites only
//! need to report items whose minimum copy mark falls below `2^-j`. That
//! happens with probability `alpha(w, j)` per slot, independently, so the
//! site draws how many slots it hits from a binomial and picks them
//! uniformly.

use rand::seq::index;
use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::bits::{derive_seed, streams, RngBits};
use crate::error::{Error, Result};
use crate::protocol::Message;
use crate::simnet::{Coordinator, Digest, ProtocolFactory, Site};
use crate::types::{validate_weight, ItemId, WeightedItem};

/// Highest round tracked; `2^-MAX_ROUND` is still a normal f64.
pub const MAX_ROUND: u32 = 1000;

/// `1 - (1 - 2^-j)^w`: chance that some copy of a weight-`w` item marks
/// below `2^-j`.
pub fn alpha(w: f64, j: u32) -> Result<f64> {
    check_integer(w)?;
    Ok(alpha_unchecked(w, j))
}

fn alpha_unchecked(w: f64, j: u32) -> f64 {
    if j == 0 {
        return 1.0;
    }
    -(w * (-round_cut(j)).ln_1p()).exp_m1()
}

fn round_cut(j: u32) -> f64 {
    (-(j as f64)).exp2()
}

fn check_integer(w: f64) -> Result<()> {
    validate_weight(w)?;
    if w.fract() != 0.0 {
        return Err(Error::Domain(format!(
            "sampling with replacement needs integer weights, got {w}"
        )));
    }
    Ok(())
}

/// Minimum copy mark of a weight-`w` item conditioned on being below the
/// round cut, by inversion with `v` uniform in `(0, 1]`.
fn conditional_mark(w: f64, a: f64, v: f64) -> f64 {
    -((-v * a).ln_1p() / w).exp_m1()
}

#[derive(Debug, Clone)]
pub struct SwrSite {
    s: usize,
    round: u32,
    bits: RngBits,
}

impl SwrSite {
    pub fn new(s: usize, bits: RngBits) -> Self {
        SwrSite { s, round: 0, bits }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Per-slot send probability for an item of weight `w` right now.
    pub fn send_probability(&self, w: f64) -> Result<f64> {
        alpha(w, self.round)
    }

    pub fn on_item(&mut self, item: &WeightedItem, out: &mut Vec<Message>) -> Result<()> {
        check_integer(item.weight)?;
        let w = item.weight;
        let a = alpha_unchecked(w, self.round);
        let rng = self.bits.rng();
        let hits = if a >= 1.0 {
            self.s as u64
        } else {
            Binomial::new(self.s as u64, a)
                .map_err(|e| Error::Domain(e.to_string()))?
                .sample(rng)
        };
        if hits == 0 {
            return Ok(());
        }
        let mut slots = index::sample(rng, self.s, hits as usize).into_vec();
        slots.sort_unstable();
        for slot in slots {
            let v = 1.0 - rng.gen::<f64>();
            out.push(Message::SwrSlot {
                id: item.id,
                w,
                slot: slot as u32,
                mark: conditional_mark(w, a, v),
            });
        }
        Ok(())
    }

    pub fn on_broadcast(&mut self, msg: &Message) -> Result<()> {
        match *msg {
            Message::SwrRound { round } if round >= self.round => {
                self.round = round;
                Ok(())
            }
            Message::SwrRound { round } => Err(Error::Protocol(format!(
                "round moved back from {} to {round}",
                self.round
            ))),
            _ => Err(Error::Protocol(format!(
                "site got unexpected {} broadcast",
                msg.kind()
            ))),
        }
    }
}

impl Site for SwrSite {
    fn on_item(&mut self, item: &WeightedItem, out: &mut Vec<Message>) -> Result<()> {
        SwrSite::on_item(self, item, out)
    }

    fn on_broadcast(&mut self, msg: &Message) -> Result<()> {
        SwrSite::on_broadcast(self, msg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Slot {
    id: ItemId,
    w: f64,
    mark: f64,
}

#[derive(Debug, Clone)]
pub struct SwrCoordinator {
    slots: Vec<Option<Slot>>,
    round: u32,
}

impl SwrCoordinator {
    pub fn new(s: usize) -> Self {
        SwrCoordinator {
            slots: vec![None; s],
            round: 0,
        }
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    pub fn on_slot(&mut self, id: ItemId, w: f64, slot: u32, mark: f64) -> Result<Option<Message>> {
        let cell = self
            .slots
            .get_mut(slot as usize)
            .ok_or_else(|| Error::Protocol(format!("slot {slot} out of range")))?;
        // Marks drawn before a round change may still be in flight; they sit
        // above the new cut and lose to the slot minimum.
        if !(0.0..=1.0).contains(&mark) {
            return Err(Error::Protocol(format!("mark {mark} outside [0, 1]")));
        }
        if cell.map_or(true, |c| mark < c.mark) {
            *cell = Some(Slot { id, w, mark });
        }
        Ok(self.advance())
    }

    fn advance(&mut self) -> Option<Message> {
        let mut worst = 0.0f64;
        for s in &self.slots {
            worst = worst.max(s.as_ref()?.mark);
        }
        let old = self.round;
        while self.round < MAX_ROUND && worst < round_cut(self.round + 1) {
            self.round += 1;
        }
        (self.round > old).then_some(Message::SwrRound { round: self.round })
    }

    /// One `(id, w)` per slot, in slot order.
    pub fn query_slots(&self) -> Result<Vec<(ItemId, f64)>> {
        self.slots
            .iter()
            .map(|s| s.map(|s| (s.id, s.w)).ok_or(Error::Empty))
            .collect()
    }

    pub fn check_invariants(&self) -> Result<()> {
        let cut = round_cut(self.round);
        for (i, s) in self.slots.iter().enumerate() {
            if let Some(s) = s {
                if s.mark > cut {
                    return Err(Error::Protocol(format!(
                        "slot {i} mark {} above round cut {cut}",
                        s.mark
                    )));
                }
            } else if self.round > 0 {
                return Err(Error::Protocol(format!("slot {i} empty in round {}", self.round)));
            }
        }
        Ok(())
    }
}

impl Coordinator for SwrCoordinator {
    fn on_message(&mut self, _src: usize, msg: Message, out: &mut Vec<Message>) -> Result<()> {
        match msg {
            Message::SwrSlot { id, w, slot, mark } => {
                out.extend(self.on_slot(id, w, slot, mark)?);
                Ok(())
            }
            other => Err(Error::Protocol(format!(
                "coordinator got unexpected {} message",
                other.kind()
            ))),
        }
    }

    fn digest(&self) -> Digest {
        Digest {
            sample_len: self.slots.iter().filter(|s| s.is_some()).count(),
            threshold: self.round as f64,
        }
    }

    fn query(&self) -> Result<Vec<(ItemId, f64)>> {
        self.query_slots()
    }

    fn check_invariants(&self) -> Result<()> {
        SwrCoordinator::check_invariants(self)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SwrFactory {
    pub s: usize,
}

impl SwrFactory {
    pub fn new(s: usize) -> Self {
        SwrFactory { s }
    }
}

impl ProtocolFactory for SwrFactory {
    type Site = SwrSite;
    type Coordinator = SwrCoordinator;

    fn build(&self, k: usize, seed: u64) -> Result<(Vec<SwrSite>, SwrCoordinator)> {
        if self.s == 0 {
            return Err(Error::Config("sample size s must be >= 1".into()));
        }
        let sites = (0..k)
            .map(|i| SwrSite::new(self.s, RngBits::from_seed(derive_seed(seed, streams::site(i)))))
            .collect();
        Ok((sites, SwrCoordinator::new(self.s)))
    }

    fn ledger_params(&self, _k: usize) -> (usize, u64) {
        (self.s, 2)
    }
}
