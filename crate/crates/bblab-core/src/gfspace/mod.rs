//! Ambient spaces F_p^n and their points.
//!
//! A point of F_p^n is stored as the integer whose base-p numeral is the
//! coordinate string: coordinate 0 is the most significant digit, so the
//! textual form of a point ("0121" for p = 3, n = 4) is exactly its index
//! written in base p and zero-padded to n digits. Lexicographic order on
//! coordinate strings therefore coincides with numeric order on indices,
//! which is what every tie-break in the library leans on.

mod mat;
mod subspace;

pub use mat::MatFp;
pub use subspace::{
    enumerate_subspaces, enumerate_subspaces_within, gaussian_binomial, AffineDualMap,
    AffineSubspace, Subspace,
};

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub const MAX_AMBIENT: u32 = 1 << 24;
const PRIMES: [u8; 6] = [2, 3, 5, 7, 11, 13];

/// Shape of an ambient space F_p^n with p a small prime and p^n <= 2^24.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Debug, Serialize, Deserialize)]
pub struct FieldParams {
    p: u8,
    n: u8,
}

impl FieldParams {
    pub fn new(p: u8, n: usize) -> Result<Self> {
        if !PRIMES.contains(&p) {
            return Err(Error::precondition(format!(
                "p must be a prime in 2..=13, got {p}"
            )));
        }
        let mut size: u64 = 1;
        for _ in 0..n {
            size *= p as u64;
            if size > MAX_AMBIENT as u64 {
                return Err(Error::precondition(format!(
                    "ambient too large: {p}^{n} exceeds 2^24"
                )));
            }
        }
        Ok(FieldParams { p, n: n as u8 })
    }

    #[inline]
    pub fn p(&self) -> u8 {
        self.p
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.n as usize
    }

    /// p^n, the number of points.
    #[inline]
    pub fn size(&self) -> u32 {
        (self.p as u32).pow(self.n as u32)
    }

    #[inline]
    pub fn check_point(&self, v: u32) -> Result<()> {
        if v < self.size() {
            Ok(())
        } else {
            Err(Error::precondition(format!(
                "point index {v} out of range for p={} n={}",
                self.p, self.n
            )))
        }
    }

    /// Coordinate `pos` (0 = most significant digit).
    #[inline]
    pub fn digit(&self, v: u32, pos: usize) -> u8 {
        debug_assert!(pos < self.n as usize);
        let shift = (self.p as u32).pow((self.n as usize - 1 - pos) as u32);
        ((v / shift) % self.p as u32) as u8
    }

    pub fn digits(&self, v: u32) -> Vec<u8> {
        let p = self.p as u32;
        let mut out = vec![0u8; self.n as usize];
        let mut x = v;
        for i in (0..self.n as usize).rev() {
            out[i] = (x % p) as u8;
            x /= p;
        }
        out
    }

    pub fn from_digits(&self, digits: &[u8]) -> Result<u32> {
        if digits.len() != self.n as usize {
            return Err(Error::precondition(format!(
                "expected {} digits, got {}",
                self.n,
                digits.len()
            )));
        }
        let mut v: u32 = 0;
        for &d in digits {
            if d >= self.p {
                return Err(Error::precondition(format!(
                    "digit {d} out of range mod {}",
                    self.p
                )));
            }
            v = v * self.p as u32 + d as u32;
        }
        Ok(v)
    }

    #[inline]
    pub fn vadd(&self, a: u32, b: u32) -> u32 {
        if self.p == 2 {
            return a ^ b;
        }
        let p = self.p as u32;
        let (mut x, mut y) = (a, b);
        let mut out = 0;
        let mut place = 1;
        for _ in 0..self.n {
            out += ((x % p + y % p) % p) * place;
            x /= p;
            y /= p;
            place *= p;
        }
        out
    }

    #[inline]
    pub fn vneg(&self, a: u32) -> u32 {
        if self.p == 2 {
            return a;
        }
        let p = self.p as u32;
        let mut x = a;
        let mut out = 0;
        let mut place = 1;
        for _ in 0..self.n {
            out += ((p - x % p) % p) * place;
            x /= p;
            place *= p;
        }
        out
    }

    #[inline]
    pub fn vsub(&self, a: u32, b: u32) -> u32 {
        if self.p == 2 {
            return a ^ b;
        }
        self.vadd(a, self.vneg(b))
    }

    /// Scalar multiple c.v computed digit-wise.
    #[inline]
    pub fn vscale(&self, c: u8, a: u32) -> u32 {
        if self.p == 2 {
            return if c & 1 == 1 { a } else { 0 };
        }
        let p = self.p as u32;
        let mut x = a;
        let mut out = 0;
        let mut place = 1;
        for _ in 0..self.n {
            out += ((x % p) * c as u32 % p) * place;
            x /= p;
            place *= p;
        }
        out
    }

    /// Standard dot pairing sum_i a_i b_i mod p; the dual space is collapsed
    /// onto F_p^n through it.
    #[inline]
    pub fn dot(&self, a: u32, b: u32) -> u8 {
        if self.p == 2 {
            return ((a & b).count_ones() & 1) as u8;
        }
        let p = self.p as u32;
        let (mut x, mut y) = (a, b);
        let mut acc = 0;
        for _ in 0..self.n {
            acc += (x % p) * (y % p);
            x /= p;
            y /= p;
        }
        (acc % p) as u8
    }

    /// Points in index order. Index order is coordinate-lexicographic order.
    pub fn points(&self) -> impl Iterator<Item = u32> {
        0..self.size()
    }

    pub fn inv_mod_p(&self, c: u8) -> u8 {
        debug_assert!(c % self.p != 0);
        let p = self.p as u32;
        let mut acc = 1u32;
        let mut base = c as u32 % p;
        let mut e = p - 2;
        while e > 0 {
            if e & 1 == 1 {
                acc = acc * base % p;
            }
            base = base * base % p;
            e >>= 1;
        }
        acc as u8
    }
}

/// A point of F_p^n together with its ambient shape.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct PointVec {
    pub index: u32,
    pub params: FieldParams,
}

impl PointVec {
    pub fn new(params: FieldParams, index: u32) -> Result<Self> {
        params.check_point(index)?;
        Ok(PointVec { index, params })
    }

    pub fn digits(&self) -> Vec<u8> {
        self.params.digits(self.index)
    }

    pub fn digit_string(&self) -> String {
        digit_string(self.params, self.index)
    }

    pub fn add(&self, other: &PointVec) -> PointVec {
        debug_assert_eq!(self.params, other.params);
        PointVec {
            index: self.params.vadd(self.index, other.index),
            params: self.params,
        }
    }

    pub fn sub(&self, other: &PointVec) -> PointVec {
        debug_assert_eq!(self.params, other.params);
        PointVec {
            index: self.params.vsub(self.index, other.index),
            params: self.params,
        }
    }

    pub fn neg(&self) -> PointVec {
        PointVec {
            index: self.params.vneg(self.index),
            params: self.params,
        }
    }

    pub fn scale(&self, c: u8) -> PointVec {
        PointVec {
            index: self.params.vscale(c, self.index),
            params: self.params,
        }
    }

    pub fn dot(&self, other: &PointVec) -> u8 {
        debug_assert_eq!(self.params, other.params);
        self.params.dot(self.index, other.index)
    }
}

/// Parse a coordinate string ("0121") into a point index.
pub fn parse_digit_string(params: FieldParams, s: &str) -> Result<u32> {
    if s.len() != params.n() {
        return Err(Error::precondition(format!(
            "expected {} coordinates, got {:?}",
            params.n(),
            s
        )));
    }
    let mut digits = Vec::with_capacity(params.n());
    for ch in s.chars() {
        // Digits above 9 (p = 11, 13) use the radix convention a, b, c.
        let d = ch
            .to_digit(params.p() as u32)
            .ok_or_else(|| Error::precondition(format!("bad coordinate character {ch:?}")))?;
        digits.push(d as u8);
    }
    params.from_digits(&digits)
}

pub fn digit_string(params: FieldParams, v: u32) -> String {
    params
        .digits(v)
        .iter()
        .map(|&d| char::from_digit(d as u32, 13).unwrap())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn params_validation() {
        assert!(FieldParams::new(2, 24).is_ok());
        assert!(FieldParams::new(2, 25).is_err());
        assert!(FieldParams::new(4, 3).is_err());
        assert!(FieldParams::new(13, 6).is_ok());
        assert!(FieldParams::new(13, 7).is_err());
        assert!(FieldParams::new(3, 0).is_ok());
        assert_eq!(FieldParams::new(3, 0).unwrap().size(), 1);
    }

    #[test]
    fn digit_round_trip_examples() {
        let params = FieldParams::new(3, 3).unwrap();
        // "012" reads as the base-3 numeral 012 = 5.
        assert_eq!(parse_digit_string(params, "012").unwrap(), 5);
        assert_eq!(digit_string(params, 5), "012");
        assert_eq!(params.digit(5, 0), 0);
        assert_eq!(params.digit(5, 1), 1);
        assert_eq!(params.digit(5, 2), 2);
    }

    #[test]
    fn arithmetic_examples() {
        let params = FieldParams::new(3, 2).unwrap();
        let a = params.from_digits(&[1, 2]).unwrap();
        let b = params.from_digits(&[2, 2]).unwrap();
        assert_eq!(params.digits(params.vadd(a, b)), vec![0, 1]);
        assert_eq!(params.digits(params.vneg(a)), vec![2, 1]);
        assert_eq!(params.dot(a, b), (1 * 2 + 2 * 2) as u8 % 3);
        let two = FieldParams::new(2, 4).unwrap();
        assert_eq!(two.vadd(0b1010, 0b0110), 0b1100);
        assert_eq!(two.dot(0b1010, 0b0110), 1);
    }

    #[test]
    fn inverse_table() {
        for p in [2u8, 3, 5, 7, 11, 13] {
            let params = FieldParams::new(p, 1).unwrap();
            for c in 1..p {
                assert_eq!((c as u32 * params.inv_mod_p(c) as u32) % p as u32, 1);
            }
        }
    }

    proptest! {
        #[test]
        fn digits_round_trip(pn in prop::sample::select(vec![(2u8, 10usize), (3, 6), (5, 4), (7, 3), (11, 2), (13, 2)]), seed in any::<u32>()) {
            let params = FieldParams::new(pn.0, pn.1).unwrap();
            let v = seed % params.size();
            prop_assert_eq!(params.from_digits(&params.digits(v)).unwrap(), v);
            let s = digit_string(params, v);
            prop_assert_eq!(parse_digit_string(params, &s).unwrap(), v);
        }

        #[test]
        fn group_laws(seed in any::<(u32, u32, u32)>()) {
            let params = FieldParams::new(5, 3).unwrap();
            let (a, b, c) = (seed.0 % params.size(), seed.1 % params.size(), seed.2 % params.size());
            prop_assert_eq!(params.vadd(a, b), params.vadd(b, a));
            prop_assert_eq!(params.vadd(params.vadd(a, b), c), params.vadd(a, params.vadd(b, c)));
            prop_assert_eq!(params.vadd(a, params.vneg(a)), 0);
            prop_assert_eq!(params.vsub(params.vadd(a, b), b), a);
        }
    }
}
