//! Linear and affine subspaces of F_p^n in canonical form.
//!
//! A `Subspace` always stores the reduced row echelon basis of its span,
//! rows ordered by pivot coordinate. Two subspaces are equal as sets iff
//! their `rows` vectors are equal, and comparing `rows` lexicographically
//! is the tie-break order used throughout the library.

use super::{FieldParams, MatFp};
use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Debug)]
pub struct Subspace {
    params: FieldParams,
    rows: Vec<u32>,
    pivots: Vec<usize>,
}

impl Subspace {
    pub fn from_spanning(params: FieldParams, vectors: &[u32]) -> Subspace {
        let mut m = MatFp::from_point_rows(params, vectors);
        let pivots = m.rref();
        let rows = (0..m.rows).map(|i| m.row_as_point(params, i)).collect();
        Subspace {
            params,
            rows,
            pivots,
        }
    }

    pub fn zero(params: FieldParams) -> Subspace {
        Subspace {
            params,
            rows: Vec::new(),
            pivots: Vec::new(),
        }
    }

    pub fn full(params: FieldParams) -> Subspace {
        let unit = |i: usize| (params.p() as u32).pow((params.n() - 1 - i) as u32);
        Subspace {
            params,
            rows: (0..params.n()).map(unit).collect(),
            pivots: (0..params.n()).collect(),
        }
    }

    #[inline]
    pub fn params(&self) -> FieldParams {
        self.params
    }

    /// RREF basis rows, pivot coordinate ascending.
    pub fn rows(&self) -> &[u32] {
        &self.rows
    }

    pub fn pivots(&self) -> &[usize] {
        &self.pivots
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.rows.len()
    }

    #[inline]
    pub fn codim(&self) -> usize {
        self.params.n() - self.rows.len()
    }

    pub fn size(&self) -> u64 {
        (self.params.p() as u64).pow(self.dim() as u32)
    }

    pub fn basis_matrix(&self) -> MatFp {
        MatFp::from_point_rows(self.params, &self.rows)
    }

    /// Canonical coset representative: v minus its projection onto the
    /// basis, leaving zeros at every pivot coordinate. reduce(v) == 0 iff
    /// v is a member, and reduce(u) == reduce(v) iff u - v is a member.
    pub fn reduce(&self, v: u32) -> u32 {
        let mut x = v;
        for (row, &piv) in self.rows.iter().zip(&self.pivots) {
            let d = self.params.digit(x, piv);
            if d != 0 {
                x = self.params.vsub(x, self.params.vscale(d, *row));
            }
        }
        x
    }

    pub fn contains(&self, v: u32) -> bool {
        self.reduce(v) == 0
    }

    /// Coefficients of v in the stored basis, if v is a member.
    pub fn coords_of(&self, v: u32) -> Option<Vec<u8>> {
        if !self.contains(v) {
            return None;
        }
        Some(
            self.pivots
                .iter()
                .map(|&piv| self.params.digit(v, piv))
                .collect(),
        )
    }

    pub fn member_from_coords(&self, coeffs: &[u8]) -> u32 {
        debug_assert_eq!(coeffs.len(), self.dim());
        let mut v = 0;
        for (&c, &row) in coeffs.iter().zip(&self.rows) {
            v = self.params.vadd(v, self.params.vscale(c, row));
        }
        v
    }

    /// Members in increasing index order. (With the RREF basis, stepping
    /// through coefficient tuples lexicographically walks the members in
    /// numeric order.)
    pub fn enumerate(&self) -> impl Iterator<Item = u32> + '_ {
        let k = self.dim();
        let p = self.params.p() as u64;
        let total = p.pow(k as u32);
        (0..total).map(move |m| {
            let mut coeffs = vec![0u8; k];
            let mut x = m;
            for i in (0..k).rev() {
                coeffs[i] = (x % p) as u8;
                x /= p;
            }
            self.member_from_coords(&coeffs)
        })
    }

    /// Canonical coset representatives (zeros at pivot coordinates), in
    /// increasing index order; p^codim of them.
    pub fn coset_reps(&self) -> impl Iterator<Item = u32> + '_ {
        let params = self.params;
        let free: Vec<usize> = (0..params.n())
            .filter(|c| !self.pivots.contains(c))
            .collect();
        let p = params.p() as u64;
        let total = p.pow(free.len() as u32);
        (0..total).map(move |m| {
            let mut digits = vec![0u8; params.n()];
            let mut x = m;
            for i in (0..free.len()).rev() {
                digits[free[i]] = (x % p) as u8;
                x /= p;
            }
            params.from_digits(&digits).unwrap()
        })
    }

    pub fn sum(&self, other: &Subspace) -> Subspace {
        debug_assert_eq!(self.params, other.params);
        let mut all = self.rows.clone();
        all.extend_from_slice(&other.rows);
        Subspace::from_spanning(self.params, &all)
    }

    /// {s : s.v = 0 for all members v} under the standard dot pairing.
    pub fn orthogonal_complement(&self) -> Subspace {
        let ns = self.basis_matrix().nullspace();
        let rows: Vec<u32> = (0..ns.rows).map(|i| ns.row_as_point(self.params, i)).collect();
        Subspace::from_spanning(self.params, &rows)
    }

    pub fn intersect(&self, other: &Subspace) -> Subspace {
        debug_assert_eq!(self.params, other.params);
        self.orthogonal_complement()
            .sum(&other.orthogonal_complement())
            .orthogonal_complement()
    }

    pub fn is_subspace_of(&self, other: &Subspace) -> bool {
        self.rows.iter().all(|&r| other.contains(r))
    }

    /// Greedy complement of self inside `within` (must contain self):
    /// picks the subset of `within`'s basis rows that extends self, then
    /// canonicalizes. Deterministic given the two bases.
    pub fn complement_within(&self, within: &Subspace) -> Subspace {
        debug_assert!(self.is_subspace_of(within));
        let mut acc = self.rows.clone();
        let mut picked = Vec::new();
        let mut cur = Subspace::from_spanning(self.params, &acc);
        for &row in &within.rows {
            if !cur.contains(row) {
                picked.push(row);
                acc.push(row);
                cur = Subspace::from_spanning(self.params, &acc);
            }
        }
        debug_assert_eq!(cur.dim(), within.dim());
        Subspace::from_spanning(self.params, &picked)
    }
}

/// Coset base + direction, with base canonicalized to the lex-least coset
/// representative (zeros at the direction's pivot coordinates).
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AffineSubspace {
    direction: Subspace,
    base: u32,
}

impl AffineSubspace {
    pub fn new(direction: Subspace, base: u32) -> AffineSubspace {
        let base = direction.reduce(base);
        AffineSubspace { direction, base }
    }

    pub fn from_subspace(direction: Subspace) -> AffineSubspace {
        AffineSubspace { direction, base: 0 }
    }

    /// Solution set {x : M x = rhs}, or None when inconsistent.
    pub fn solution_set(params: FieldParams, m: &MatFp, rhs: &[u8]) -> Result<Option<AffineSubspace>> {
        debug_assert_eq!(m.cols, params.n());
        let Some(x) = m.solve(rhs)? else {
            return Ok(None);
        };
        let ns = m.nullspace();
        let rows: Vec<u32> = (0..ns.rows).map(|i| ns.row_as_point(params, i)).collect();
        let direction = Subspace::from_spanning(params, &rows);
        Ok(Some(AffineSubspace::new(direction, params.from_digits(&x)?)))
    }

    pub fn params(&self) -> FieldParams {
        self.direction.params
    }

    pub fn direction(&self) -> &Subspace {
        &self.direction
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn dim(&self) -> usize {
        self.direction.dim()
    }

    pub fn size(&self) -> u64 {
        self.direction.size()
    }

    pub fn is_linear(&self) -> bool {
        self.base == 0
    }

    pub fn contains(&self, v: u32) -> bool {
        self.direction.contains(self.params().vsub(v, self.base))
    }

    pub fn enumerate(&self) -> impl Iterator<Item = u32> + '_ {
        let params = self.params();
        let base = self.base;
        self.direction.enumerate().map(move |v| params.vadd(base, v))
    }

    /// Map an affine subspace expressed in self's internal coordinates
    /// back into self's ambient.
    pub fn lift_inner(&self, inner: &AffineSubspace) -> AffineSubspace {
        let params = self.params();
        let inner_params = inner.params();
        debug_assert_eq!(inner_params.n(), self.dim());
        let rows: Vec<u32> = inner
            .direction()
            .rows()
            .iter()
            .map(|&r| self.direction.member_from_coords(&inner_params.digits(r)))
            .collect();
        let dir = Subspace::from_spanning(params, &rows);
        let base = params.vadd(
            self.base,
            self.direction
                .member_from_coords(&inner_params.digits(inner.base())),
        );
        AffineSubspace::new(dir, base)
    }

    pub fn intersect(&self, other: &AffineSubspace) -> Option<AffineSubspace> {
        let params = self.params();
        debug_assert_eq!(params, other.params());
        let mut m = self.direction.orthogonal_complement().basis_matrix();
        let other_perp = other.direction.orthogonal_complement().basis_matrix();
        let mut rhs: Vec<u8> = (0..m.rows)
            .map(|i| {
                params.dot(m.row_as_point(params, i), self.base)
            })
            .collect();
        for i in 0..other_perp.rows {
            m.push_row(other_perp.row(i));
            rhs.push(params.dot(other_perp.row_as_point(params, i), other.base));
        }
        AffineSubspace::solution_set(params, &m, &rhs).expect("consistent shapes")
    }
}

/// Affine map y -> L y + c between two coordinate spaces.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct AffineDualMap {
    pub domain: FieldParams,
    pub codomain: FieldParams,
    pub linear: MatFp,
    pub offset: u32,
}

impl AffineDualMap {
    pub fn new(domain: FieldParams, codomain: FieldParams, linear: MatFp, offset: u32) -> Result<Self> {
        if linear.rows != codomain.n() || linear.cols != domain.n() || linear.p != domain.p() {
            return Err(Error::precondition("affine map shape mismatch"));
        }
        codomain.check_point(offset)?;
        Ok(AffineDualMap {
            domain,
            codomain,
            linear,
            offset,
        })
    }

    pub fn zero(domain: FieldParams, codomain: FieldParams) -> Self {
        AffineDualMap {
            domain,
            codomain,
            linear: MatFp::zero(domain.p(), codomain.n(), domain.n()),
            offset: 0,
        }
    }

    pub fn eval(&self, y: u32) -> u32 {
        let out = self.linear.mul_vec(&self.domain.digits(y));
        self.codomain
            .vadd(self.codomain.from_digits(&out).unwrap(), self.offset)
    }

    pub fn is_constant(&self) -> bool {
        self.linear.is_zero()
    }

    /// Pointwise combination sum_i c_i m_i(y), all maps sharing shapes.
    pub fn linear_combination(maps: &[&AffineDualMap], coeffs: &[u8]) -> AffineDualMap {
        debug_assert!(!maps.is_empty());
        debug_assert_eq!(maps.len(), coeffs.len());
        let (domain, codomain) = (maps[0].domain, maps[0].codomain);
        let p = domain.p() as u32;
        let mut linear = MatFp::zero(domain.p(), codomain.n(), domain.n());
        let mut offset = 0u32;
        for (m, &c) in maps.iter().zip(coeffs) {
            debug_assert_eq!(m.domain, domain);
            debug_assert_eq!(m.codomain, codomain);
            for i in 0..linear.rows {
                for j in 0..linear.cols {
                    let v = (linear.get(i, j) as u32 + c as u32 * m.linear.get(i, j) as u32) % p;
                    linear.set(i, j, v as u8);
                }
            }
            offset = codomain.vadd(offset, codomain.vscale(c, m.offset));
        }
        AffineDualMap {
            domain,
            codomain,
            linear,
            offset,
        }
    }

    /// Restrict to new domain coordinates: y = M y' gives (L M) y' + c.
    pub fn precompose(&self, new_domain: FieldParams, m: &MatFp) -> AffineDualMap {
        debug_assert_eq!(m.rows, self.domain.n());
        debug_assert_eq!(m.cols, new_domain.n());
        AffineDualMap {
            domain: new_domain,
            codomain: self.codomain,
            linear: self.linear.mul(m),
            offset: self.offset,
        }
    }

    /// Shift the domain origin: y -> y + t gives L y + (L t + c).
    pub fn translate_domain(&self, t: u32) -> AffineDualMap {
        let lt = self.linear.mul_vec(&self.domain.digits(t));
        let lt = self.codomain.from_digits(&lt).unwrap();
        AffineDualMap {
            domain: self.domain,
            codomain: self.codomain,
            linear: self.linear.clone(),
            offset: self.codomain.vadd(self.offset, lt),
        }
    }

    /// Change codomain coordinates: value v becomes B v.
    pub fn postcompose(&self, new_codomain: FieldParams, b: &MatFp) -> AffineDualMap {
        debug_assert_eq!(b.cols, self.codomain.n());
        debug_assert_eq!(b.rows, new_codomain.n());
        let off = b.mul_vec(&self.codomain.digits(self.offset));
        AffineDualMap {
            domain: self.domain,
            codomain: new_codomain,
            linear: b.mul(&self.linear),
            offset: new_codomain.from_digits(&off).unwrap(),
        }
    }
}

/// Number of k-dimensional subspaces of F_p^n, saturating at u128::MAX.
pub fn gaussian_binomial(p: u8, n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let p = p as u128;
    let mut num = 1u128;
    let mut den = 1u128;
    for i in 0..k {
        // (p^(n-i) - 1) / (p^(k-i) - 1); do the division exactly per factor.
        let top = p.checked_pow((n - i) as u32).map(|v| v - 1);
        let bot = p.pow((k - i) as u32) - 1;
        match top {
            Some(t) => match num.checked_mul(t) {
                Some(v) => num = v,
                None => return u128::MAX,
            },
            None => return u128::MAX,
        }
        den *= bot;
        let g = gcd(num, den);
        num /= g;
        den /= g;
    }
    debug_assert_eq!(den, 1);
    num
}

fn gcd(a: u128, b: u128) -> u128 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// All k-dimensional subspaces of F_p^n, by canonical RREF enumeration:
/// pivot sets in lexicographic order, free entries counted up
/// most-significant-first. Errors when the count exceeds `cap`.
pub fn enumerate_subspaces(params: FieldParams, k: usize, cap: u64) -> Result<Vec<Subspace>> {
    let count = gaussian_binomial(params.p(), params.n(), k);
    if count > cap as u128 {
        return Err(Error::CapExceeded {
            needed: count,
            cap,
        });
    }
    let n = params.n();
    let p = params.p();
    let mut out = Vec::with_capacity(count as usize);
    let mut pivots: Vec<usize> = (0..k).collect();
    loop {
        // Free cells: (row, col) with col > pivot(row), col not a pivot.
        let mut cells = Vec::new();
        for (r, &piv) in pivots.iter().enumerate() {
            for c in piv + 1..n {
                if !pivots.contains(&c) {
                    cells.push((r, c));
                }
            }
        }
        let total = (p as u64).pow(cells.len() as u32);
        for m in 0..total {
            let mut mat = MatFp::zero(p, k, n);
            for (r, &piv) in pivots.iter().enumerate() {
                mat.set(r, piv, 1);
            }
            let mut x = m;
            for i in (0..cells.len()).rev() {
                let (r, c) = cells[i];
                mat.set(r, c, (x % p as u64) as u8);
                x /= p as u64;
            }
            let rows: Vec<u32> = (0..k).map(|i| mat.row_as_point(params, i)).collect();
            out.push(Subspace::from_spanning(params, &rows));
        }
        // Next pivot combination in lex order.
        let mut i = k;
        loop {
            if i == 0 {
                return Ok(out);
            }
            i -= 1;
            if pivots[i] < n - (k - i) {
                pivots[i] += 1;
                for j in i + 1..k {
                    pivots[j] = pivots[j - 1] + 1;
                }
                break;
            }
        }
        if k == 0 {
            return Ok(out);
        }
    }
}

/// All k-dimensional subspaces of `within`, mapped through its basis.
pub fn enumerate_subspaces_within(within: &Subspace, k: usize, cap: u64) -> Result<Vec<Subspace>> {
    let params = within.params();
    let inner = FieldParams::new(params.p(), within.dim())?;
    let subs = enumerate_subspaces(inner, k, cap)?;
    Ok(subs
        .into_iter()
        .map(|s| {
            let rows: Vec<u32> = s
                .rows()
                .iter()
                .map(|&r| within.member_from_coords(&inner.digits(r)))
                .collect();
            Subspace::from_spanning(params, &rows)
        })
        .collect())
}
