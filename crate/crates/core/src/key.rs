//! Level arithmetic and exponential sampling keys.
//!
//! A key for an item of weight `w` is `v = w / t` with `t ~ Exp(1)`, and
//! `t = -ln(U)` for a uniform `U`. `U` is a 128-bit binary fraction drawn one
//! bit at a time, taken at the midpoint of its final dyadic interval:
//! `U = (m + 1/2) / 2^128`. It therefore never touches 0 or 1.
//!
//! [`key_exceeds`] decides `w / t > threshold` from the shortest bit prefix
//! that settles it, and [`LazyUniform::complete`] extends the same prefix to a
//! full key. Deciding first and completing later reads exactly the bits that
//! [`gen_key`] would read, so both paths agree bit for bit.

use crate::bits::BitSource;
use crate::error::{Error, Result};

pub const UNIFORM_BITS: u32 = 128;

/// `r^j` as an `f64`.
///
/// Non-negative powers are exact integers while they fit in `u128` and are
/// then rounded once; past that range they continue by repeated
/// multiplication. Negative powers are reciprocals. Every caller goes through
/// this function, so level and epoch boundaries are consistent everywhere.
pub fn pow_r(r: u64, j: i32) -> f64 {
    if j < 0 {
        return 1.0 / pow_r(r, -j);
    }
    let mut exact: u128 = 1;
    let mut i = 0;
    while i < j {
        match exact.checked_mul(r as u128) {
            Some(p) => exact = p,
            None => break,
        }
        i += 1;
    }
    let mut p = exact as f64;
    let rf = r as f64;
    while i < j {
        p *= rf;
        i += 1;
    }
    p
}

/// Level of a weight: the `j >= 0` with `w` in `[r^j, r^(j+1))`; weights
/// below `r` are level 0.
pub fn level_of(w: f64, r: u64) -> Result<u32> {
    if !(w > 0.0) || w.is_nan() {
        return Err(Error::Domain(format!("level_of needs a positive weight, got {w}")));
    }
    if r < 2 {
        return Err(Error::Domain(format!("level base must be >= 2, got {r}")));
    }
    Ok(level_unchecked(w, r))
}

#[inline]
pub(crate) fn level_unchecked(w: f64, r: u64) -> u32 {
    let rf = r as f64;
    if w < rf {
        return 0;
    }
    // Walk the same power sequence as `pow_r`.
    let mut j: u32 = 1;
    let mut exact: Option<u128> = Some(r as u128);
    let mut p = rf;
    loop {
        let next_exact = exact.and_then(|e| e.checked_mul(r as u128));
        let next = match next_exact {
            Some(e) => e as f64,
            None => p * rf,
        };
        if next > w {
            return j;
        }
        exact = next_exact;
        p = next;
        j += 1;
    }
}

/// Epoch index of a threshold: the integer `j` (possibly negative) with
/// `u` in `[r^j, r^(j+1))`.
pub fn epoch_of(u: f64, r: u64) -> Result<i32> {
    if !(u > 0.0) || !u.is_finite() {
        return Err(Error::Domain(format!("epoch_of needs a positive finite value, got {u}")));
    }
    if r < 2 {
        return Err(Error::Domain(format!("level base must be >= 2, got {r}")));
    }
    let mut j = (u.ln() / (r as f64).ln()).floor() as i32;
    while pow_r(r, j) > u {
        j -= 1;
    }
    while pow_r(r, j + 1) <= u {
        j += 1;
    }
    Ok(j)
}

/// A sampling key `value = weight / raw_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Key {
    pub value: f64,
    pub raw_t: f64,
    pub bits_consumed: u32,
}

impl Key {
    /// Key from an externally chosen exponential draw.
    pub fn from_t(w: f64, t: f64) -> Result<Key> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("exponential draw must be positive, got {t}")));
        }
        Ok(Key {
            value: w / t,
            raw_t: t,
            bits_consumed: 0,
        })
    }
}

/// Precomputed comparison point for one `(weight, threshold)` pair.
///
/// With `N = !m` (the bits of `1 - U`) the key exceeds the threshold iff
/// `N < cut`; `None` means every `U` qualifies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Cut(Option<u128>);

impl Cut {
    pub fn new(w: f64, threshold: f64) -> Cut {
        Cut(cut_for(w, threshold))
    }
}

fn cut_for(w: f64, threshold: f64) -> Option<u128> {
    if threshold <= 0.0 {
        return None;
    }
    // w/t > threshold  <=>  U > exp(-x)  <=>  1 - U < q,  q = 1 - exp(-x).
    let x = w / threshold;
    let q = -(-x).exp_m1();
    if q >= 1.0 {
        return None;
    }
    // 1 - U = (N + 1/2) / 2^128 < q  <=>  N < ceil(q * 2^128 - 1/2).
    let bits = q.to_bits();
    let exp = ((bits >> 52) & 0x7ff) as i32;
    let frac = (bits & ((1u64 << 52) - 1)) as u128;
    let (mant, e) = if exp == 0 {
        (frac, -1074)
    } else {
        (frac | (1u128 << 52), exp - 1075)
    };
    let sh = e + UNIFORM_BITS as i32;
    if sh >= 0 {
        return Some(mant << sh);
    }
    let d = (-sh) as u32;
    let floor = if d >= 128 { 0 } else { mant >> d };
    let rem = if d >= 128 { mant } else { mant - (floor << d) };
    let above_half = if d - 1 >= 128 { false } else { rem > (1u128 << (d - 1)) };
    Some(floor + above_half as u128)
}

/// A uniform whose leading bits have been drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LazyUniform {
    prefix: u128,
    bits: u32,
}

impl LazyUniform {
    pub fn new() -> Self {
        LazyUniform::default()
    }

    pub fn bits_consumed(&self) -> u32 {
        self.bits
    }

    #[inline]
    fn push(&mut self, bit: bool) {
        self.prefix = (self.prefix << 1) | bit as u128;
        self.bits += 1;
    }

    /// Range of `N = !m` consistent with the bits drawn so far.
    #[inline]
    fn n_range(&self) -> (u128, u128) {
        if self.bits == 0 {
            return (0, u128::MAX);
        }
        let free = UNIFORM_BITS - self.bits;
        let mask = if self.bits == 128 {
            u128::MAX
        } else {
            (1u128 << self.bits) - 1
        };
        let np = !self.prefix & mask;
        let lo = if free == 0 { np } else { np << free };
        let hi = if free == 0 { lo } else { lo | ((1u128 << free) - 1) };
        (lo, hi)
    }

    /// Draws bits until the comparison against `cut` is settled.
    fn decide<B: BitSource + ?Sized>(&mut self, cut: Cut, src: &mut B) -> bool {
        let cut = match cut.0 {
            None => return true,
            Some(c) => c,
        };
        loop {
            let (lo, hi) = self.n_range();
            if hi < cut {
                return true;
            }
            if lo >= cut {
                return false;
            }
            // At 128 bits lo == hi, so one of the branches above fired.
            self.push(src.next_bit());
        }
    }

    /// Draws the remaining bits and returns the full key.
    pub fn complete<B: BitSource + ?Sized>(mut self, w: f64, src: &mut B) -> Key {
        while self.bits < UNIFORM_BITS {
            let n = (UNIFORM_BITS - self.bits).min(64);
            let chunk = src.next_bits(n) as u128;
            self.prefix = (self.prefix << n) | chunk;
            self.bits += n;
        }
        let m = self.prefix;
        let scale = 2f64.powi(-(UNIFORM_BITS as i32));
        let t = if m >> 127 == 0 {
            -(((m as f64) + 0.5) * scale).ln()
        } else {
            let n = !m;
            -(-(((n as f64) + 0.5) * scale)).ln_1p()
        };
        Key {
            value: w / t,
            raw_t: t,
            bits_consumed: self.bits,
        }
    }
}

/// Full-precision key for weight `w`.
pub fn gen_key<B: BitSource + ?Sized>(w: f64, src: &mut B) -> Key {
    LazyUniform::new().complete(w, src)
}

/// Decides whether the key of weight `w` exceeds `threshold`, drawing only
/// as many uniform bits as the decision needs. A threshold of 0 is passed by
/// every key without drawing anything.
pub fn key_exceeds<B: BitSource + ?Sized>(
    w: f64,
    threshold: f64,
    src: &mut B,
) -> (bool, LazyUniform) {
    key_exceeds_cut(Cut::new(w, threshold), src)
}

/// [`key_exceeds`] with the comparison point already computed.
pub fn key_exceeds_cut<B: BitSource + ?Sized>(cut: Cut, src: &mut B) -> (bool, LazyUniform) {
    let mut lazy = LazyUniform::new();
    let decision = lazy.decide(cut, src);
    (decision, lazy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bits::{ReplayBits, RngBits};

    #[test]
    fn level_examples() {
        assert_eq!(level_of(5.0, 2).unwrap(), 2);
        assert_eq!(level_of(1.0, 2).unwrap(), 0);
        assert_eq!(level_of(16.0, 4).unwrap(), 2);
        assert_eq!(level_of(0.3, 2).unwrap(), 0);
        assert_eq!(level_of(15.999, 4).unwrap(), 1);
        assert!(level_of(0.0, 2).is_err());
        assert!(level_of(-1.0, 2).is_err());
        assert!(level_of(1.0, 1).is_err());
    }

    #[test]
    fn level_exact_at_powers() {
        for r in [2u64, 3, 4, 7, 10, 16, 1000] {
            for j in 0..=60 {
                let p = pow_r(r, j);
                if !p.is_finite() {
                    break;
                }
                assert_eq!(level_of(p, r).unwrap(), j as u32, "r={r} j={j}");
            }
        }
    }

    #[test]
    fn epoch_examples() {
        assert_eq!(epoch_of(5.0, 2).unwrap(), 2);
        assert_eq!(epoch_of(3.0, 2).unwrap(), 1);
        assert_eq!(epoch_of(1.0, 2).unwrap(), 0);
        assert_eq!(epoch_of(0.3, 2).unwrap(), -2);
        assert_eq!(epoch_of(0.25, 2).unwrap(), -2);
        assert_eq!(epoch_of(8.0, 2).unwrap(), 3);
        for r in [2u64, 3, 16] {
            for j in -20..40 {
                assert_eq!(epoch_of(pow_r(r, j), r).unwrap(), j);
            }
        }
    }

    #[test]
    fn forced_draws() {
        let k = Key::from_t(3.0, 1.5).unwrap();
        assert_eq!(k.value, 2.0);
        assert_eq!(Key::from_t(1.0, 1.0).unwrap().value, 1.0);
        assert!(Key::from_t(1.0, 0.0).is_err());
    }

    #[test]
    fn extreme_bit_patterns_stay_finite() {
        let zeros = ReplayBits::new(vec![false; 128]);
        let ones = ReplayBits::new(vec![true; 128]);
        let k0 = gen_key(1.0, &mut zeros.clone());
        let k1 = gen_key(1.0, &mut ones.clone());
        assert!(k0.raw_t.is_finite() && k0.raw_t > 80.0);
        assert!(k1.raw_t > 0.0 && k1.raw_t < 1e-30);
    }

    #[test]
    fn zero_threshold_draws_nothing() {
        let mut b = RngBits::from_seed(3);
        let (d, lazy) = key_exceeds(1.0, 0.0, &mut b);
        assert!(d);
        assert_eq!(lazy.bits_consumed(), 0);
        assert_eq!(b.bits_drawn(), 0);
    }

    #[test]
    fn first_bit_settles_small_ratio() {
        // w / threshold tiny: the key can only exceed when 1 - U is tiny,
        // i.e. U's leading bits are all ones. A leading zero settles "no".
        let mut b = ReplayBits::new(vec![false]);
        let (d, lazy) = key_exceeds(1.0, 1e6, &mut b);
        assert!(!d);
        assert_eq!(lazy.bits_consumed(), 1);
    }

    #[test]
    fn decision_matches_completed_value() {
        let mut src = RngBits::from_seed(99);
        for i in 0..20_000 {
            let w = 1.0 + (i % 37) as f64;
            let thr = 0.01 * (1 + i % 500) as f64;
            let mut a = src.clone();
            let (d, lazy) = key_exceeds(w, thr, &mut a);
            let key = lazy.complete(w, &mut a);
            let full = gen_key(w, &mut src);
            assert_eq!(key, full);
            assert_eq!(d, full.value > thr);
            assert_eq!(a.bits_drawn(), src.bits_drawn());
        }
    }
}
