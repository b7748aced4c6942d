//! Fixed-point bitstring formats and the dyadic interval geometry they induce.
//!
//! A format with `I` integer bits and `F` fraction bits (plus an optional sign
//! bit) covers the half-open range `[lo, hi)` with `2^B` cells of width
//! `2^-F`. Bits are read most-significant first; every prefix of length `j`
//! picks one of the `2^j` depth-`j` dyadic sub-intervals of the range, so the
//! sign bit is simply the top-level split at zero (offset binary).

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported bit budget. Cell indices are held in a `u64`.
pub const MAX_TOTAL_BITS: u32 = 62;
/// Fraction bits beyond this cannot be represented exactly in binary64.
pub const MAX_FRAC_BITS: u32 = 52;

/// Bit budget and interval semantics of one quantized scalar.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FixedPointFormat {
    signed: bool,
    int_bits: u32,
    frac_bits: u32,
}

impl FixedPointFormat {
    pub fn new(signed: bool, int_bits: u32, frac_bits: u32) -> Result<Self> {
        let total = signed as u32 + int_bits + frac_bits;
        if total == 0 {
            return Err(Error::Format("format needs at least one bit".into()));
        }
        if total > MAX_TOTAL_BITS {
            return Err(Error::Format(format!(
                "{total} bits exceeds the maximum of {MAX_TOTAL_BITS}"
            )));
        }
        if frac_bits > MAX_FRAC_BITS {
            return Err(Error::Format(format!(
                "{frac_bits} fraction bits exceeds the maximum of {MAX_FRAC_BITS}"
            )));
        }
        if int_bits > 60 {
            return Err(Error::Format(format!("{int_bits} integer bits is too many")));
        }
        Ok(Self {
            signed,
            int_bits,
            frac_bits,
        })
    }

    /// Unsigned format over `[0, 2^I)`.
    pub fn unsigned(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(false, int_bits, frac_bits)
    }

    /// Signed format over `[-2^I, 2^I)`.
    pub fn signed(int_bits: u32, frac_bits: u32) -> Result<Self> {
        Self::new(true, int_bits, frac_bits)
    }

    pub fn has_sign(&self) -> bool {
        self.signed
    }

    pub fn int_bits(&self) -> u32 {
        self.int_bits
    }

    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    pub fn total_bits(&self) -> u32 {
        self.signed as u32 + self.int_bits + self.frac_bits
    }

    pub fn lo(&self) -> f64 {
        if self.signed {
            -pow2(self.int_bits as i32)
        } else {
            0.0
        }
    }

    pub fn hi(&self) -> f64 {
        pow2(self.int_bits as i32)
    }

    pub fn width(&self) -> f64 {
        self.hi() - self.lo()
    }

    /// Cell width `2^-F`.
    pub fn resolution(&self) -> f64 {
        pow2(-(self.frac_bits as i32))
    }

    pub fn num_cells(&self) -> u64 {
        1u64 << self.total_bits()
    }

    pub fn contains(&self, x: f64) -> bool {
        x >= self.lo() && x < self.hi()
    }

    /// Same sign and integer bits with a different fraction budget.
    pub fn with_frac_bits(&self, frac_bits: u32) -> Result<Self> {
        Self::new(self.signed, self.int_bits, frac_bits)
    }

    /// Lower endpoint of the leaf cell addressed by `bits`.
    pub fn decode(&self, bits: Bitstring) -> Result<f64> {
        if bits.len() != self.total_bits() {
            return Err(Error::Format(format!(
                "bitstring has {} bits, format {} needs {}",
                bits.len(),
                self,
                self.total_bits()
            )));
        }
        Ok(self.decode_index(bits.value()))
    }

    /// Lower endpoint of leaf cell `index` (big-endian integer value of the bits).
    pub fn decode_index(&self, index: u64) -> f64 {
        self.lo() + index as f64 * self.resolution()
    }

    /// The unique full-length bitstring whose cell contains `x`.
    pub fn encode(&self, x: f64) -> Result<Bitstring> {
        self.encode_index(x)
            .map(|index| Bitstring::from_parts(index, self.total_bits()))
    }

    /// Index of the leaf cell containing `x`.
    pub fn encode_index(&self, x: f64) -> Result<u64> {
        if !self.contains(x) {
            return Err(Error::Range {
                value: x,
                lo: self.lo(),
                hi: self.hi(),
            });
        }
        let res = self.resolution();
        let last = self.num_cells() - 1;
        let mut index = (((x - self.lo()) / res).floor() as u64).min(last);
        // The subtraction may round; endpoints are exact, so fix up against them.
        while index > 0 && self.decode_index(index) > x {
            index -= 1;
        }
        while index < last && self.decode_index(index) + res <= x {
            index += 1;
        }
        Ok(index)
    }

    /// Half-open interval `[a, b)` of the node reached by `prefix`.
    pub fn cell(&self, prefix: Bitstring) -> Result<(f64, f64)> {
        if prefix.len() > self.total_bits() {
            return Err(Error::Format(format!(
                "prefix of length {} is longer than the {}-bit format",
                prefix.len(),
                self.total_bits()
            )));
        }
        Ok(self.cell_at(prefix.len(), prefix.value()))
    }

    /// Interval of the `index`-th node at `depth`.
    pub fn cell_at(&self, depth: u32, index: u64) -> (f64, f64) {
        let width = self.width() * pow2(-(depth as i32));
        let a = self.lo() + index as f64 * width;
        (a, a + width)
    }

    /// Sign-magnitude reading of a full-length bitstring: the first bit is the
    /// sign and the remaining bits are a place-value magnitude scaled by
    /// `2^-F`. Only meaningful for signed formats; this ordering is not
    /// monotone in the bits and is kept for cross-checking hand-worked values.
    pub fn decode_sign_magnitude(&self, bits: Bitstring) -> Result<f64> {
        if !self.signed {
            return Err(Error::Format("sign-magnitude needs a signed format".into()));
        }
        if bits.len() != self.total_bits() {
            return Err(Error::Format(format!(
                "bitstring has {} bits, format needs {}",
                bits.len(),
                self.total_bits()
            )));
        }
        let mag_bits = self.total_bits() - 1;
        let negative = bits.bit(0);
        let magnitude = bits.value() & ((1u64 << mag_bits) - 1);
        let value = magnitude as f64 * self.resolution();
        Ok(if negative { -value } else { value })
    }
}

/// Renders as `s<I>i<F>f` (signed) or `u<I>i<F>f` (unsigned).
impl fmt::Display for FixedPointFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = if self.signed { 's' } else { 'u' };
        write!(f, "{s}{}i{}f", self.int_bits, self.frac_bits)
    }
}

impl FromStr for FixedPointFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Format(format!("cannot parse format {s:?}; expected e.g. \"s2i7f\""));
        let signed = match s.chars().next() {
            Some('s') => true,
            Some('u') => false,
            _ => return Err(bad()),
        };
        let rest = s[1..].strip_suffix('f').ok_or_else(bad)?;
        let (int_part, frac_part) = rest.split_once('i').ok_or_else(bad)?;
        let digits = |p: &str| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit());
        if !digits(int_part) || !digits(frac_part) {
            return Err(bad());
        }
        let int_bits = int_part.parse().map_err(|_| bad())?;
        let frac_bits = frac_part.parse().map_err(|_| bad())?;
        Self::new(signed, int_bits, frac_bits)
    }
}

impl Serialize for FixedPointFormat {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FixedPointFormat {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// A path of bit decisions, most significant first, packed into a `u64`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Bitstring {
    value: u64,
    len: u32,
}

impl Bitstring {
    pub const EMPTY: Bitstring = Bitstring { value: 0, len: 0 };

    /// Bitstring of length `len` whose big-endian integer value is `value`.
    ///
    /// Panics if `len > 63` or `value` does not fit in `len` bits.
    pub fn from_parts(value: u64, len: u32) -> Self {
        assert!(len < 64, "bitstrings hold at most 63 bits");
        assert!(value >> len == 0, "value {value} does not fit in {len} bits");
        Self { value, len }
    }

    pub fn from_bits(bits: &[bool]) -> Self {
        bits.iter().fold(Self::EMPTY, |acc, &b| acc.push(b))
    }

    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Big-endian integer value.
    pub fn value(&self) -> u64 {
        self.value
    }

    /// Bit at position `i`, counted from the most significant (root) decision.
    pub fn bit(&self, i: u32) -> bool {
        assert!(i < self.len, "bit {i} out of range for length {}", self.len);
        (self.value >> (self.len - 1 - i)) & 1 == 1
    }

    #[must_use]
    pub fn push(self, bit: bool) -> Self {
        Self::from_parts((self.value << 1) | bit as u64, self.len + 1)
    }

    #[must_use]
    pub fn prefix(&self, len: u32) -> Self {
        assert!(len <= self.len);
        Self {
            value: self.value >> (self.len - len),
            len,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = bool> + '_ {
        (0..self.len).map(move |i| self.bit(i))
    }
}

impl fmt::Display for Bitstring {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.iter() {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for Bitstring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.len() > 63 {
            return Err(Error::Format("bitstrings hold at most 63 bits".into()));
        }
        s.chars().try_fold(Self::EMPTY, |acc, c| match c {
            '0' => Ok(acc.push(false)),
            '1' => Ok(acc.push(true)),
            _ => Err(Error::Format(format!("invalid bit {c:?} in {s:?}"))),
        })
    }
}

/// Exact power of two for exponents in the normal binary64 range.
pub(crate) fn pow2(exp: i32) -> f64 {
    debug_assert!((-1022..=1023).contains(&exp));
    f64::from_bits(((exp + 1023) as u64) << 52)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bs(s: &str) -> Bitstring {
        s.parse().unwrap()
    }

    #[test]
    fn decode_worked_examples() {
        let fmt = FixedPointFormat::unsigned(1, 2).unwrap();
        assert_eq!(fmt.decode(bs("010")).unwrap(), 0.5);
        assert_eq!(fmt.decode(bs("000")).unwrap(), 0.0);
        assert!(fmt.decode(bs("01")).is_err());
    }

    #[test]
    fn sign_magnitude_cross_check() {
        // 1 | 010 | 0110 -> -(2 + 0.25 + 0.125)
        let fmt = FixedPointFormat::signed(3, 4).unwrap();
        let v = fmt.decode_sign_magnitude(bs("10100110")).unwrap();
        assert_eq!(v, -2.375);
        // the pattern drawn with fraction 0111 lands one cell further out
        assert_eq!(fmt.decode_sign_magnitude(bs("10100111")).unwrap(), -2.4375);
    }

    #[test]
    fn encode_examples() {
        let fmt = FixedPointFormat::unsigned(1, 2).unwrap();
        assert_eq!(fmt.encode(0.5).unwrap(), bs("010"));
        assert_eq!(fmt.encode(fmt.lo()).unwrap(), bs("000"));
        let fmt = FixedPointFormat::unsigned(0, 3).unwrap();
        assert_eq!(fmt.encode(0.374999).unwrap(), bs("010"));
        assert!(fmt.encode(1.0).is_err());
        assert!(fmt.encode(-1e-300).is_err());
        assert!(fmt.encode(f64::NAN).is_err());
    }

    #[test]
    fn encode_handles_rounding_near_boundaries() {
        let fmt = FixedPointFormat::signed(2, 2).unwrap();
        let x = 0.25f64.next_down();
        let idx = fmt.encode_index(x).unwrap();
        assert!(fmt.decode_index(idx) <= x && x < fmt.decode_index(idx) + 0.25);
        let tiny = 1e-300;
        let idx = fmt.encode_index(tiny).unwrap();
        assert_eq!(fmt.decode_index(idx), 0.0);
        let idx = fmt.encode_index(-tiny).unwrap();
        assert_eq!(fmt.decode_index(idx), -0.25);
    }

    #[test]
    fn cells() {
        let fmt = FixedPointFormat::unsigned(1, 0).unwrap();
        assert_eq!(fmt.cell(Bitstring::EMPTY).unwrap(), (0.0, 2.0));
        let fmt = FixedPointFormat::unsigned(1, 2).unwrap();
        assert_eq!(fmt.cell(bs("01")).unwrap(), (0.5, 1.0));
        let fmt = FixedPointFormat::unsigned(0, 3).unwrap();
        assert_eq!(fmt.cell(bs("01")).unwrap(), (0.25, 0.5));
        assert!(fmt.cell(bs("0110")).is_err());
        let fmt = FixedPointFormat::unsigned(0, 5).unwrap();
        let (a, b) = fmt.cell(bs("011")).unwrap();
        assert_eq!(fmt.cell(bs("0110")).unwrap(), (a, (a + b) / 2.0));
        assert_eq!(fmt.cell(bs("0111")).unwrap(), ((a + b) / 2.0, b));
    }

    #[test]
    fn cell_children_split_parent_at_midpoint() {
        let fmt = FixedPointFormat::signed(2, 5).unwrap();
        let p = bs("011");
        let (a, b) = fmt.cell(p).unwrap();
        let (l0, l1) = fmt.cell(p.push(false)).unwrap();
        let (r0, r1) = fmt.cell(p.push(true)).unwrap();
        assert_eq!((l0, l1, r0, r1), (a, (a + b) / 2.0, (a + b) / 2.0, b));
    }

    #[test]
    fn partition_by_enumeration() {
        let fmt = FixedPointFormat::signed(2, 9).unwrap();
        for depth in 0..=12 {
            let n = 1u64 << depth;
            let mut prev_end = fmt.lo();
            for i in 0..n {
                let (a, b) = fmt.cell_at(depth, i);
                assert_eq!(a, prev_end);
                assert!(b > a);
                prev_end = b;
            }
            assert_eq!(prev_end, fmt.hi());
        }
    }

    #[test]
    fn format_strings() {
        let f: FixedPointFormat = "s2i7f".parse().unwrap();
        assert!(f.has_sign());
        assert_eq!((f.int_bits(), f.frac_bits(), f.total_bits()), (2, 7, 10));
        assert_eq!((f.lo(), f.hi(), f.resolution()), (-4.0, 4.0, 1.0 / 128.0));
        assert_eq!(f.to_string(), "s2i7f");
        let u: FixedPointFormat = "u0i3f".parse().unwrap();
        assert_eq!((u.lo(), u.hi()), (0.0, 1.0));
        for bad in ["", "s2i7", "x2i7f", "s2f", "si7f", "s2i-1f", "u0i0f", "s2i60f"] {
            assert!(bad.parse::<FixedPointFormat>().is_err(), "{bad}");
        }
    }

    #[test]
    fn range_holds_exactly_two_pow_b_cells() {
        for s in ["u0i1f", "s0i1f", "s2i5f", "u3i0f", "s1i20f"] {
            let f: FixedPointFormat = s.parse().unwrap();
            assert_eq!(f.width(), f.num_cells() as f64 * f.resolution());
        }
    }
}
