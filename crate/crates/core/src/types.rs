use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Opaque item identifier.
///
/// `token` names the stream element; `dup` is non-zero only for the derived
/// copies created by the L1 tracker (copy `dup` of element `token`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ItemId {
    pub token: u64,
    pub dup: u32,
}

impl ItemId {
    pub const fn new(token: u64) -> Self {
        ItemId { token, dup: 0 }
    }

    pub const fn duplicate(token: u64, dup: u32) -> Self {
        ItemId { token, dup }
    }
}

impl From<u64> for ItemId {
    fn from(token: u64) -> Self {
        ItemId::new(token)
    }
}

impl fmt::Display for ItemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dup == 0 {
            write!(f, "{}", self.token)
        } else {
            write!(f, "{}#{}", self.token, self.dup)
        }
    }
}

impl FromStr for ItemId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Domain(format!("malformed item id {s:?}"));
        match s.split_once('#') {
            Some((t, d)) => Ok(ItemId {
                token: t.parse().map_err(|_| bad())?,
                dup: d.parse().map_err(|_| bad())?,
            }),
            None => Ok(ItemId::new(s.parse().map_err(|_| bad())?)),
        }
    }
}

/// One element of the merged distributed stream.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeightedItem {
    pub id: ItemId,
    pub weight: f64,
    /// Site that observes the item, in `0..k`.
    pub site: usize,
    /// Global arrival index, 1-based.
    pub seq: u64,
}

impl WeightedItem {
    /// Builds an item, rejecting weights that are not finite or are below 1.
    pub fn new(id: impl Into<ItemId>, weight: f64, site: usize, seq: u64) -> Result<Self> {
        validate_weight(weight)?;
        Ok(WeightedItem {
            id: id.into(),
            weight,
            site,
            seq,
        })
    }
}

pub fn validate_weight(w: f64) -> Result<()> {
    if w.is_finite() && w >= 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidWeight(w))
    }
}

/// Checks that `seq` strictly increases and every weight is admissible.
pub fn validate_stream(items: &[WeightedItem]) -> Result<()> {
    let mut last = 0u64;
    for it in items {
        validate_weight(it.weight)?;
        if it.seq <= last {
            return Err(Error::Domain(format!(
                "sequence numbers must strictly increase (saw {} after {last})",
                it.seq
            )));
        }
        last = it.seq;
    }
    Ok(())
}

/// Sample size, site count, and the derived level/epoch base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProtocolParams {
    pub s: usize,
    pub k: usize,
    pub r: u64,
}

impl ProtocolParams {
    /// `r = max(2, ceil(k / s))`.
    pub fn new(s: usize, k: usize) -> Result<Self> {
        if s == 0 {
            return Err(Error::Config("sample size s must be >= 1".into()));
        }
        if k == 0 {
            return Err(Error::Config("site count k must be >= 1".into()));
        }
        let r = (k.div_ceil(s) as u64).max(2);
        Ok(ProtocolParams { s, k, r })
    }

    /// Number of early items that saturates a level set: `4 * r * s`.
    pub fn saturation_size(&self) -> u64 {
        4 * self.r * self.s as u64
    }
}
