//! Dense subsets of F_p^n and of products F_p^{n1} x F_p^{n2}, sumset
//! calculus, and the vertical/horizontal fiber operators.

use crate::error::{Error, Result};
use crate::gfspace::{digit_string, parse_digit_string, AffineSubspace, FieldParams, Subspace};
use crate::transform;
use std::fmt;

/// Flat bitset; bit i lives in word i/64.
#[derive(Clone, PartialEq, Eq, Debug)]
struct Bits {
    words: Vec<u64>,
    len: u32,
}

impl Bits {
    fn new(len: u32) -> Bits {
        Bits {
            words: vec![0; (len as usize + 63) / 64],
            len,
        }
    }

    #[inline]
    fn get(&self, i: u32) -> bool {
        self.words[(i >> 6) as usize] >> (i & 63) & 1 == 1
    }

    #[inline]
    fn insert(&mut self, i: u32) {
        self.words[(i >> 6) as usize] |= 1 << (i & 63);
    }

    #[inline]
    fn remove(&mut self, i: u32) {
        self.words[(i >> 6) as usize] &= !(1 << (i & 63));
    }

    fn count(&self) -> u64 {
        self.words.iter().map(|w| w.count_ones() as u64).sum()
    }

    fn iter_ones(&self) -> impl Iterator<Item = u32> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut rest = w;
            std::iter::from_fn(move || {
                if rest == 0 {
                    return None;
                }
                let b = rest.trailing_zeros();
                rest &= rest - 1;
                Some((wi as u32) << 6 | b)
            })
        })
    }

    fn zip_words(&mut self, other: &Bits, f: impl Fn(u64, u64) -> u64) {
        debug_assert_eq!(self.len, other.len);
        for (a, &b) in self.words.iter_mut().zip(&other.words) {
            *a = f(*a, b);
        }
    }

    fn complement(&mut self) {
        for w in &mut self.words {
            *w = !*w;
        }
        let tail = self.len % 64;
        if tail != 0 {
            *self.words.last_mut().unwrap() &= (1u64 << tail) - 1;
        }
    }
}

/// Subset of F_p^n with cached cardinality.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct DenseSet {
    params: FieldParams,
    bits: Bits,
    card: u64,
}

impl DenseSet {
    pub fn empty(params: FieldParams) -> DenseSet {
        DenseSet {
            params,
            bits: Bits::new(params.size()),
            card: 0,
        }
    }

    pub fn full(params: FieldParams) -> DenseSet {
        let mut s = Self::empty(params);
        s.bits.complement();
        s.card = params.size() as u64;
        s
    }

    pub fn from_members(params: FieldParams, members: &[u32]) -> Result<DenseSet> {
        let mut s = Self::empty(params);
        for &m in members {
            params.check_point(m)?;
            s.insert(m);
        }
        Ok(s)
    }

    pub fn from_subspace(s: &Subspace) -> DenseSet {
        let mut out = Self::empty(s.params());
        for v in s.enumerate() {
            out.insert(v);
        }
        out
    }

    pub fn from_affine(a: &AffineSubspace) -> DenseSet {
        let mut out = Self::empty(a.params());
        for v in a.enumerate() {
            out.insert(v);
        }
        out
    }

    #[inline]
    pub fn params(&self) -> FieldParams {
        self.params
    }

    #[inline]
    pub fn contains(&self, v: u32) -> bool {
        self.bits.get(v)
    }

    pub fn insert(&mut self, v: u32) {
        debug_assert!(v < self.params.size());
        if !self.bits.get(v) {
            self.bits.insert(v);
            self.card += 1;
        }
    }

    pub fn remove(&mut self, v: u32) {
        if self.bits.get(v) {
            self.bits.remove(v);
            self.card -= 1;
        }
    }

    #[inline]
    pub fn card(&self) -> u64 {
        self.card
    }

    pub fn is_empty(&self) -> bool {
        self.card == 0
    }

    pub fn density(&self) -> f64 {
        self.card as f64 / self.params.size() as f64
    }

    /// Members in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = u32> + '_ {
        self.bits.iter_ones()
    }

    pub fn union(&self, other: &DenseSet) -> DenseSet {
        let mut out = self.clone();
        out.bits.zip_words(&other.bits, |a, b| a | b);
        out.card = out.bits.count();
        out
    }

    pub fn intersect(&self, other: &DenseSet) -> DenseSet {
        let mut out = self.clone();
        out.bits.zip_words(&other.bits, |a, b| a & b);
        out.card = out.bits.count();
        out
    }

    pub fn difference(&self, other: &DenseSet) -> DenseSet {
        let mut out = self.clone();
        out.bits.zip_words(&other.bits, |a, b| a & !b);
        out.card = out.bits.count();
        out
    }

    pub fn complement(&self) -> DenseSet {
        let mut out = self.clone();
        out.bits.complement();
        out.card = self.params.size() as u64 - self.card;
        out
    }

    pub fn is_subset_of(&self, other: &DenseSet) -> bool {
        self.bits
            .words
            .iter()
            .zip(&other.bits.words)
            .all(|(&a, &b)| a & !b == 0)
    }

    /// {v + t : v in self}.
    pub fn shift(&self, t: u32) -> DenseSet {
        let mut out = Self::empty(self.params);
        for v in self.iter() {
            out.insert(self.params.vadd(v, t));
        }
        out
    }

    /// {-v : v in self}.
    pub fn negate(&self) -> DenseSet {
        if self.params.p() == 2 {
            return self.clone();
        }
        let mut out = Self::empty(self.params);
        for v in self.iter() {
            out.insert(self.params.vneg(v));
        }
        out
    }

    /// Rewrite members of an affine subspace in its internal coordinates
    /// (dimension many digits). Every member must lie in `w`.
    pub fn to_coords(&self, w: &AffineSubspace) -> Result<DenseSet> {
        let inner = FieldParams::new(self.params.p(), w.dim())?;
        let mut out = DenseSet::empty(inner);
        for v in self.iter() {
            let rel = self.params.vsub(v, w.base());
            let coords = w.direction().coords_of(rel).ok_or_else(|| {
                Error::precondition(format!(
                    "set member {} lies outside the restriction subspace",
                    digit_string(self.params, v)
                ))
            })?;
            out.insert(inner.from_digits(&coords)?);
        }
        Ok(out)
    }

    /// Inverse of `to_coords`: map a set in `w`'s internal coordinates back
    /// into the ambient of `w`.
    pub fn lift_from_coords(w: &AffineSubspace, inner_set: &DenseSet) -> DenseSet {
        let params = w.params();
        let inner = inner_set.params();
        debug_assert_eq!(inner.n(), w.dim());
        let mut out = DenseSet::empty(params);
        for v in inner_set.iter() {
            let member = w.direction().member_from_coords(&inner.digits(v));
            out.insert(params.vadd(member, w.base()));
        }
        out
    }

    /// Indicator counts as a plain vector, for the transform kernels.
    pub(crate) fn counts(&self) -> Vec<u64> {
        let mut out = vec![0u64; self.params.size() as usize];
        for v in self.iter() {
            out[v as usize] = 1;
        }
        out
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Sign {
    Plus,
    Minus,
}

/// Double-loop cost above which sumsets switch to exact integer
/// convolution.
const CONV_CROSSOVER: u64 = 1 << 12;

fn sumset_direct(a: &DenseSet, b: &DenseSet, sign: Sign) -> DenseSet {
    let params = a.params;
    let mut out = DenseSet::empty(params);
    for x in a.iter() {
        for y in b.iter() {
            let z = match sign {
                Sign::Plus => params.vadd(x, y),
                Sign::Minus => params.vsub(x, y),
            };
            out.insert(z);
        }
    }
    out
}

fn sumset_conv(a: &DenseSet, b: &DenseSet, sign: Sign) -> DenseSet {
    let params = a.params;
    let bc = match sign {
        Sign::Plus => b.counts(),
        Sign::Minus => transform::reverse_counts(params, &b.counts()),
    };
    let counts = transform::convolution_counts(params, &a.counts(), &bc);
    let mut out = DenseSet::empty(params);
    for (z, &c) in counts.iter().enumerate() {
        if c > 0 {
            out.insert(z as u32);
        }
    }
    out
}

/// {x + y} or {x - y} over all pairs.
pub fn sumset(a: &DenseSet, b: &DenseSet, sign: Sign) -> Result<DenseSet> {
    if a.params != b.params {
        return Err(Error::AmbientMismatch(
        "sumset arguments live in different ambients".into(),
        ));
    }
    if a.card() * b.card() > CONV_CROSSOVER {
        Ok(sumset_conv(a, b, sign))
    } else {
        Ok(sumset_direct(a, b, sign))
    }
}

/// (A + A) - (A + A). Symmetric, contains 0 whenever A is nonempty.
pub fn two_a_minus_two_a(a: &DenseSet) -> DenseSet {
    if a.card() * a.params.size() as u64 > CONV_CROSSOVER {
        let s = sumset_conv(a, a, Sign::Plus);
        sumset_conv(&s, &s, Sign::Minus)
    } else {
        let s = sumset_direct(a, a, Sign::Plus);
        sumset_direct(&s, &s, Sign::Minus)
    }
}

/// Subset of F_p^{n1} x F_p^{n2}, stored over the combined index
/// x * p^{n2} + y (digit concatenation, so the joint ambient obeys the
/// same p^n cap).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ProductSet {
    params1: FieldParams,
    params2: FieldParams,
    combined: FieldParams,
    bits: Bits,
    card: u64,
}

impl ProductSet {
    pub fn empty(params1: FieldParams, params2: FieldParams) -> Result<ProductSet> {
        if params1.p() != params2.p() {
            return Err(Error::AmbientMismatch(
                "product factors must share p".into(),
            ));
        }
        let combined = FieldParams::new(params1.p(), params1.n() + params2.n())?;
        Ok(ProductSet {
            params1,
            params2,
            combined,
            bits: Bits::new(combined.size()),
            card: 0,
        })
    }

    pub fn full(params1: FieldParams, params2: FieldParams) -> Result<ProductSet> {
        let mut s = Self::empty(params1, params2)?;
        s.bits.complement();
        s.card = s.combined.size() as u64;
        Ok(s)
    }

    pub fn product(a: &DenseSet, b: &DenseSet) -> Result<ProductSet> {
        let mut out = Self::empty(a.params(), b.params())?;
        for x in a.iter() {
            for y in b.iter() {
                out.insert(x, y);
            }
        }
        Ok(out)
    }

    pub fn from_pairs(
        params1: FieldParams,
        params2: FieldParams,
        pairs: &[(u32, u32)],
    ) -> Result<ProductSet> {
        let mut out = Self::empty(params1, params2)?;
        for &(x, y) in pairs {
            params1.check_point(x)?;
            params2.check_point(y)?;
            out.insert(x, y);
        }
        Ok(out)
    }

    pub fn params1(&self) -> FieldParams {
        self.params1
    }

    pub fn params2(&self) -> FieldParams {
        self.params2
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> u32 {
        x * self.params2.size() + y
    }

    #[inline]
    pub fn contains(&self, x: u32, y: u32) -> bool {
        self.bits.get(self.idx(x, y))
    }

    pub fn insert(&mut self, x: u32, y: u32) {
        debug_assert!(x < self.params1.size() && y < self.params2.size());
        let i = self.idx(x, y);
        if !self.bits.get(i) {
            self.bits.insert(i);
            self.card += 1;
        }
    }

    pub fn remove(&mut self, x: u32, y: u32) {
        debug_assert!(x < self.params1.size() && y < self.params2.size());
        let i = self.idx(x, y);
        if self.bits.get(i) {
            self.bits.remove(i);
            self.card -= 1;
        }
    }

    pub fn card(&self) -> u64 {
        self.card
    }

    pub fn is_empty(&self) -> bool {
        self.card == 0
    }

    pub fn density(&self) -> f64 {
        self.card as f64 / self.combined.size() as f64
    }

    /// Pairs in increasing combined-index order (x major, y minor).
    pub fn iter_pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let size2 = self.params2.size();
        self.bits.iter_ones().map(move |i| (i / size2, i % size2))
    }

    pub fn fiber_at_x(&self, x: u32) -> DenseSet {
        let mut out = DenseSet::empty(self.params2);
        let base = x * self.params2.size();
        for y in 0..self.params2.size() {
            if self.bits.get(base + y) {
                out.insert(y);
            }
        }
        out
    }

    pub fn fiber_at_y(&self, y: u32) -> DenseSet {
        let mut out = DenseSet::empty(self.params1);
        let size2 = self.params2.size();
        for x in 0..self.params1.size() {
            if self.bits.get(x * size2 + y) {
                out.insert(x);
            }
        }
        out
    }

    pub fn swap(&self) -> ProductSet {
        let mut out = Self::empty(self.params2, self.params1).expect("same p");
        for (x, y) in self.iter_pairs() {
            out.insert(y, x);
        }
        out
    }

    pub fn is_subset_of(&self, other: &ProductSet) -> bool {
        self.bits
            .words
            .iter()
            .zip(&other.bits.words)
            .all(|(&a, &b)| a & !b == 0)
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Axis {
    First,
    Second,
}

/// Axis First: {y : (x,y) in P} at x = at. Axis Second: {x : (x,y) in P}
/// at y = at.
pub fn fiber(p: &ProductSet, at: u32, axis: Axis) -> Result<DenseSet> {
    match axis {
        Axis::First => {
            p.params1.check_point(at)?;
            Ok(p.fiber_at_x(at))
        }
        Axis::Second => {
            p.params2.check_point(at)?;
            Ok(p.fiber_at_y(at))
        }
    }
}

/// Replace every row fiber by its (F+F)-(F+F); empty fibers stay empty.
pub fn phi_v(p: &ProductSet) -> ProductSet {
    let mut out = ProductSet::empty(p.params1, p.params2).expect("valid shape");
    for x in 0..p.params1.size() {
        let f = p.fiber_at_x(x);
        if f.is_empty() {
            continue;
        }
        for y in two_a_minus_two_a(&f).iter() {
            out.insert(x, y);
        }
    }
    out
}

/// Replace every column fiber by its (F+F)-(F+F). Implemented on strided
/// columns directly, not through swap, so the swap identity stays an
/// independent check.
pub fn phi_h(p: &ProductSet) -> ProductSet {
    let mut out = ProductSet::empty(p.params1, p.params2).expect("valid shape");
    for y in 0..p.params2.size() {
        let f = p.fiber_at_y(y);
        if f.is_empty() {
            continue;
        }
        for x in two_a_minus_two_a(&f).iter() {
            out.insert(x, y);
        }
    }
    out
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PhiOp {
    H,
    V,
}

impl fmt::Display for PhiOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhiOp::H => "H",
            PhiOp::V => "V",
        })
    }
}

/// Parse a word like "HVH".
pub fn parse_phi_word(s: &str) -> Result<Vec<PhiOp>> {
    s.chars()
        .map(|c| match c {
            'H' | 'h' => Ok(PhiOp::H),
            'V' | 'v' => Ok(PhiOp::V),
            other => Err(Error::precondition(format!(
                "operator word may only contain H and V, got {other:?}"
            ))),
        })
        .collect()
}

pub struct Pipeline {
    pub result: ProductSet,
    /// Cardinalities: input first, then one entry per applied operator.
    pub stage_cards: Vec<u64>,
}

/// Apply a composition word right to left: [H,V,H] means the rightmost H
/// acts first.
pub fn phi_pipeline(p: &ProductSet, word: &[PhiOp]) -> Result<Pipeline> {
    if word.is_empty() {
        return Err(Error::precondition("operator word must be nonempty"));
    }
    let mut cur = p.clone();
    let mut stage_cards = vec![cur.card()];
    for op in word.iter().rev() {
        cur = match op {
            PhiOp::H => phi_h(&cur),
            PhiOp::V => phi_v(&cur),
        };
        stage_cards.push(cur.card());
    }
    Ok(Pipeline {
        result: cur,
        stage_cards,
    })
}

#[derive(Clone, Debug)]
pub enum SetFile {
    Single(DenseSet),
    Product(ProductSet),
}

/// Text format: header `p <p> n1 <n1> [n2 <n2>]`, then `list` (one element
/// per line as digit strings, `x` or `x y`) or `hex` (the bitset as
/// lowercase hex bytes, byte k holding indices 8k..8k+7, bit j of byte k
/// being index 8k+j).
pub fn read_set_text(text: &str) -> Result<SetFile> {
    let mut lines = text.lines().enumerate();
    let (header_no, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| Error::Parse {
            line: 1,
            msg: "empty file".into(),
        })?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    let parse_err = |line: usize, msg: String| Error::Parse { line: line + 1, msg };
    let grab = |toks: &[&str], i: usize, key: &str| -> Result<u32> {
        if toks.get(i).copied() != Some(key) {
            return Err(parse_err(header_no, format!("expected `{key}` in header")));
        }
        toks.get(i + 1)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| parse_err(header_no, format!("bad value for `{key}`")))
    };
    let p = grab(&toks, 0, "p")? as u8;
    let n1 = grab(&toks, 2, "n1")? as usize;
    let product = toks.len() > 4;
    let params1 = FieldParams::new(p, n1)?;
    let params2 = if product {
        Some(FieldParams::new(p, grab(&toks, 4, "n2")? as usize)?)
    } else {
        None
    };

    let (mode_no, mode) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty())
        .ok_or_else(|| parse_err(header_no, "missing mode line (`list` or `hex`)".into()))?;
    match mode.trim() {
        "list" => {
            if let Some(params2) = params2 {
                let mut out = ProductSet::empty(params1, params2)?;
                for (no, line) in lines {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let mut parts = line.split_whitespace();
                    let (Some(xs), Some(ys), None) = (parts.next(), parts.next(), parts.next())
                    else {
                        return Err(parse_err(no, "expected two coordinates per line".into()));
                    };
                    let x = parse_digit_string(params1, xs)
                        .map_err(|e| parse_err(no, e.to_string()))?;
                    let y = parse_digit_string(params2, ys)
                        .map_err(|e| parse_err(no, e.to_string()))?;
                    out.insert(x, y);
                }
                Ok(SetFile::Product(out))
            } else {
                let mut out = DenseSet::empty(params1);
                for (no, line) in lines {
                    let line = line.trim();
                    if line.is_empty() {
                        continue;
                    }
                    let v = parse_digit_string(params1, line)
                        .map_err(|e| parse_err(no, e.to_string()))?;
                    out.insert(v);
                }
                Ok(SetFile::Single(out))
            }
        }
        "hex" => {
            let size = match params2 {
                Some(p2) => {
                    FieldParams::new(p, n1 + p2.n())?;
                    params1.size() * p2.size()
                }
                None => params1.size(),
            };
            let mut hex = String::new();
            let mut last_no = mode_no;
            for (no, line) in lines {
                hex.push_str(line.trim());
                last_no = no;
            }
            let expect = 2 * ((size as usize + 7) / 8);
            if hex.len() != expect {
                return Err(parse_err(
                    last_no,
                    format!("expected {expect} hex digits for {size} indices, got {}", hex.len()),
                ));
            }
            let mut members = Vec::new();
            for k in 0..hex.len() / 2 {
                let byte = u8::from_str_radix(&hex[2 * k..2 * k + 2], 16)
                    .map_err(|_| parse_err(last_no, format!("bad hex byte at position {k}")))?;
                for j in 0..8 {
                    if byte >> j & 1 == 1 {
                        let idx = 8 * k as u32 + j;
                        if idx >= size {
                            return Err(parse_err(last_no, "padding bits must be zero".into()));
                        }
                        members.push(idx);
                    }
                }
            }
            if let Some(params2) = params2 {
                let size2 = params2.size();
                let pairs: Vec<(u32, u32)> =
                    members.iter().map(|&i| (i / size2, i % size2)).collect();
                Ok(SetFile::Product(ProductSet::from_pairs(
                    params1, params2, &pairs,
                )?))
            } else {
                Ok(SetFile::Single(DenseSet::from_members(params1, &members)?))
            }
        }
        other => Err(parse_err(
            mode_no,
            format!("expected `list` or `hex`, got {other:?}"),
        )),
    }
}

fn hex_of_bits(bits: &Bits) -> String {
    let nbytes = (bits.len as usize + 7) / 8;
    let mut out = String::with_capacity(2 * nbytes);
    for k in 0..nbytes {
        let mut byte = 0u8;
        for j in 0..8 {
            let idx = 8 * k as u32 + j;
            if idx < bits.len && bits.get(idx) {
                byte |= 1 << j;
            }
        }
        out.push_str(&format!("{byte:02x}"));
    }
    out
}

pub fn write_set_text(f: &SetFile) -> String {
    match f {
        SetFile::Single(s) => {
            let params = s.params();
            let mut out = format!("p {} n1 {}\n", params.p(), params.n());
            if s.density() < 1.0 / 64.0 {
                out.push_str("list\n");
                for v in s.iter() {
                    out.push_str(&digit_string(params, v));
                    out.push('\n');
                }
            } else {
                out.push_str("hex\n");
                out.push_str(&hex_of_bits(&s.bits));
                out.push('\n');
            }
            out
        }
        SetFile::Product(s) => {
            let (p1, p2) = (s.params1(), s.params2());
            let mut out = format!("p {} n1 {} n2 {}\n", p1.p(), p1.n(), p2.n());
            if s.density() < 1.0 / 64.0 {
                out.push_str("list\n");
                for (x, y) in s.iter_pairs() {
                    out.push_str(&digit_string(p1, x));
                    out.push(' ');
                    out.push_str(&digit_string(p2, y));
                    out.push('\n');
                }
            } else {
                out.push_str("hex\n");
                out.push_str(&hex_of_bits(&s.bits));
                out.push('\n');
            }
            out
        }
    }
}
