//! Seeded bit sources.
//!
//! Every random decision in the protocol reads from a [`BitSource`], so that
//! a run is a pure function of its seed. Bits are consumed most significant
//! first: `next_bits(n)` returns the same value as `n` calls to `next_bit`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub trait BitSource {
    fn next_bit(&mut self) -> bool;

    /// Draws `n <= 64` bits; the first bit drawn is the most significant.
    fn next_bits(&mut self, n: u32) -> u64 {
        debug_assert!(n <= 64);
        let mut out = 0u64;
        for _ in 0..n {
            out = (out << 1) | self.next_bit() as u64;
        }
        out
    }

    /// Total bits handed out so far.
    fn bits_drawn(&self) -> u64;
}

/// Bit stream carved out of an `RngCore`, 64 bits at a time.
#[derive(Debug, Clone)]
pub struct RngBits<R = ChaCha8Rng> {
    rng: R,
    // Unconsumed bits, left aligned.
    buf: u64,
    avail: u32,
    drawn: u64,
}

impl RngBits<ChaCha8Rng> {
    pub fn from_seed(seed: u64) -> Self {
        RngBits::new(ChaCha8Rng::seed_from_u64(seed))
    }
}

impl<R: RngCore> RngBits<R> {
    pub fn new(rng: R) -> Self {
        RngBits {
            rng,
            buf: 0,
            avail: 0,
            drawn: 0,
        }
    }

    /// The underlying generator, for draws that do not go through the bit
    /// buffer (binomials, subsets, continuous variates).
    pub fn rng(&mut self) -> &mut R {
        &mut self.rng
    }
}

impl<R: RngCore> BitSource for RngBits<R> {
    #[inline]
    fn next_bit(&mut self) -> bool {
        if self.avail == 0 {
            self.buf = self.rng.next_u64();
            self.avail = 64;
        }
        let b = self.buf >> 63;
        self.buf <<= 1;
        self.avail -= 1;
        self.drawn += 1;
        b == 1
    }

    #[inline]
    fn next_bits(&mut self, n: u32) -> u64 {
        debug_assert!(n <= 64);
        if n == 0 {
            return 0;
        }
        self.drawn += n as u64;
        if n <= self.avail {
            let out = self.buf >> (64 - n);
            self.buf = self.buf.checked_shl(n).unwrap_or(0);
            self.avail -= n;
            return out;
        }
        let have = self.avail;
        let hi = if have == 0 { 0 } else { self.buf >> (64 - have) };
        let need = n - have;
        self.buf = self.rng.next_u64();
        self.avail = 64;
        let lo = self.buf >> (64 - need);
        self.buf = self.buf.checked_shl(need).unwrap_or(0);
        self.avail -= need;
        (hi.checked_shl(need).unwrap_or(0)) | lo
    }

    fn bits_drawn(&self) -> u64 {
        self.drawn
    }
}

/// Replays a fixed bit sequence; panics when exhausted.
#[derive(Debug, Clone)]
pub struct ReplayBits {
    bits: Vec<bool>,
    pos: usize,
}

impl ReplayBits {
    pub fn new(bits: Vec<bool>) -> Self {
        ReplayBits { bits, pos: 0 }
    }
}

impl BitSource for ReplayBits {
    fn next_bit(&mut self) -> bool {
        let b = self.bits[self.pos];
        self.pos += 1;
        b
    }

    fn bits_drawn(&self) -> u64 {
        self.pos as u64
    }
}

/// SplitMix64 finalizer; derives independent child seeds from one seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(stream.wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Stream tags used when deriving per-node seeds.
pub mod streams {
    pub const COORDINATOR: u64 = u64::MAX;
    pub const PARTITIONER: u64 = u64::MAX - 1;

    pub const fn site(i: usize) -> u64 {
        i as u64
    }
}
