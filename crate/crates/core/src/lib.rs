//! Distributed weighted sampling without replacement over a simulated
//! coordinator network, with heavy-hitter and L1 trackers built on top.

pub mod apps;
pub mod bits;
pub mod error;
pub mod key;
pub mod oracle;
pub mod protocol;
pub mod simnet;
pub mod streams;
pub mod swr;
pub mod types;

pub use error::{Error, Result};
pub use types::{ItemId, ProtocolParams, WeightedItem};
