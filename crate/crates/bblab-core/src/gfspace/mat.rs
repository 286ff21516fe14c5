//! Dense matrices over F_p, row-major, one byte per entry.

use super::FieldParams;
use crate::error::{Error, Result};

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct MatFp {
    pub p: u8,
    pub rows: usize,
    pub cols: usize,
    data: Vec<u8>,
}

impl MatFp {
    pub fn zero(p: u8, rows: usize, cols: usize) -> Self {
        MatFp {
            p,
            rows,
            cols,
            data: vec![0; rows * cols],
        }
    }

    pub fn identity(p: u8, n: usize) -> Self {
        let mut m = Self::zero(p, n, n);
        for i in 0..n {
            m.set(i, i, 1);
        }
        m
    }

    pub fn from_rows(p: u8, cols: usize, rows: &[Vec<u8>]) -> Self {
        let mut m = Self::zero(p, rows.len(), cols);
        for (i, r) in rows.iter().enumerate() {
            debug_assert_eq!(r.len(), cols);
            for (j, &v) in r.iter().enumerate() {
                m.set(i, j, v % p);
            }
        }
        m
    }

    /// Rows given as point indices of F_p^cols.
    pub fn from_point_rows(params: FieldParams, rows: &[u32]) -> Self {
        let digit_rows: Vec<Vec<u8>> = rows.iter().map(|&r| params.digits(r)).collect();
        Self::from_rows(params.p(), params.n(), &digit_rows)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> u8 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: u8) {
        self.data[i * self.cols + j] = v % self.p;
    }

    pub fn row(&self, i: usize) -> &[u8] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_as_point(&self, params: FieldParams, i: usize) -> u32 {
        debug_assert_eq!(params.n(), self.cols);
        params.from_digits(self.row(i)).unwrap()
    }

    pub fn push_row(&mut self, row: &[u8]) {
        debug_assert_eq!(row.len(), self.cols);
        self.data.extend(row.iter().map(|&v| v % self.p));
        self.rows += 1;
    }

    pub fn transpose(&self) -> MatFp {
        let mut out = MatFp::zero(self.p, self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.set(j, i, self.get(i, j));
            }
        }
        out
    }

    pub fn mul(&self, other: &MatFp) -> MatFp {
        debug_assert_eq!(self.cols, other.rows);
        debug_assert_eq!(self.p, other.p);
        let p = self.p as u32;
        let mut out = MatFp::zero(self.p, self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k) as u32;
                if a == 0 {
                    continue;
                }
                for j in 0..other.cols {
                    let v = (out.get(i, j) as u32 + a * other.get(k, j) as u32) % p;
                    out.set(i, j, v as u8);
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[u8]) -> Vec<u8> {
        debug_assert_eq!(self.cols, v.len());
        let p = self.p as u32;
        (0..self.rows)
            .map(|i| {
                let mut acc = 0u32;
                for j in 0..self.cols {
                    acc += self.get(i, j) as u32 * v[j] as u32;
                }
                (acc % p) as u8
            })
            .collect()
    }

    fn inv_scalar(&self, c: u8) -> u8 {
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

    /// In-place reduced row echelon form. Returns pivot column per pivot row;
    /// non-pivot rows end up zero and are truncated.
    pub fn rref(&mut self) -> Vec<usize> {
        let p = self.p as u32;
        let mut pivots = Vec::new();
        let mut r = 0;
        for col in 0..self.cols {
            let Some(sel) = (r..self.rows).find(|&i| self.get(i, col) != 0) else {
                continue;
            };
            if sel != r {
                for j in 0..self.cols {
                    let (a, b) = (self.get(r, j), self.get(sel, j));
                    self.set(r, j, b);
                    self.set(sel, j, a);
                }
            }
            let inv = self.inv_scalar(self.get(r, col)) as u32;
            for j in 0..self.cols {
                let v = self.get(r, j) as u32 * inv % p;
                self.set(r, j, v as u8);
            }
            for i in 0..self.rows {
                if i == r {
                    continue;
                }
                let f = self.get(i, col) as u32;
                if f == 0 {
                    continue;
                }
                for j in 0..self.cols {
                    let v = (self.get(i, j) as u32 + (p - f) * self.get(r, j) as u32) % p;
                    self.set(i, j, v as u8);
                }
            }
            pivots.push(col);
            r += 1;
            if r == self.rows {
                break;
            }
        }
        self.data.truncate(r * self.cols);
        self.rows = r;
        pivots
    }

    pub fn rank(&self) -> usize {
        let mut m = self.clone();
        m.rref().len()
    }

    /// Basis rows of the right kernel {x : M x = 0}, in RREF.
    pub fn nullspace(&self) -> MatFp {
        let p = self.p as u32;
        let mut m = self.clone();
        let pivots = m.rref();
        let free: Vec<usize> = (0..self.cols).filter(|c| !pivots.contains(c)).collect();
        let mut out = MatFp::zero(self.p, 0, self.cols);
        for &f in &free {
            let mut row = vec![0u8; self.cols];
            row[f] = 1;
            for (ri, &pc) in pivots.iter().enumerate() {
                let coeff = m.get(ri, f) as u32;
                row[pc] = ((p - coeff) % p) as u8;
            }
            out.push_row(&row);
        }
        out.rref();
        out
    }

    /// One solution of M x = b, if consistent.
    pub fn solve(&self, b: &[u8]) -> Result<Option<Vec<u8>>> {
        if b.len() != self.rows {
            return Err(Error::precondition("solve: rhs length mismatch"));
        }
        let mut aug = MatFp::zero(self.p, self.rows, self.cols + 1);
        for i in 0..self.rows {
            for j in 0..self.cols {
                aug.set(i, j, self.get(i, j));
            }
            aug.set(i, self.cols, b[i]);
        }
        let pivots = aug.rref();
        if pivots.last() == Some(&self.cols) {
            return Ok(None);
        }
        let mut x = vec![0u8; self.cols];
        for (ri, &pc) in pivots.iter().enumerate() {
            x[pc] = aug.get(ri, self.cols);
        }
        Ok(Some(x))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rref_example() {
        // Rows (1,1,0), (1,2,0), (0,0,1) over F_3 reduce to the identity.
        let mut m = MatFp::from_rows(3, 3, &[vec![1, 1, 0], vec![1, 2, 0], vec![0, 0, 1]]);
        let pivots = m.rref();
        assert_eq!(pivots, vec![0, 1, 2]);
        assert_eq!(m, MatFp::identity(3, 3));
        // A singular stack drops its dependent row: (2,1,0) = 2 * (1,2,0).
        let mut s = MatFp::from_rows(3, 3, &[vec![1, 2, 0], vec![2, 1, 0]]);
        assert_eq!(s.rref(), vec![0]);
        assert_eq!(s.rows, 1);
    }

    #[test]
    fn rank_and_nullspace() {
        // x + y + z = 0 over F_2 has the kernel {000, 011, 101, 110}.
        let m = MatFp::from_rows(2, 3, &[vec![1, 1, 1]]);
        assert_eq!(m.rank(), 1);
        let ns = m.nullspace();
        assert_eq!(ns.rows, 2);
        for i in 0..ns.rows {
            assert!(m.mul_vec(ns.row(i)).iter().all(|&v| v == 0));
        }
    }

    #[test]
    fn solve_consistent_and_not() {
        let m = MatFp::from_rows(5, 2, &[vec![1, 2], vec![2, 4]]);
        // Second equation is twice the first: rhs (1, 2) works, (1, 3) does not.
        let x = m.solve(&[1, 2]).unwrap().unwrap();
        assert_eq!(m.mul_vec(&x), vec![1, 2]);
        assert!(m.solve(&[1, 3]).unwrap().is_none());
    }

    proptest! {
        #[test]
        fn nullspace_dimension(p in prop::sample::select(vec![2u8, 3, 5]), entries in prop::collection::vec(0u8..13, 12)) {
            let rows: Vec<Vec<u8>> = entries.chunks(4).map(|c| c.iter().map(|&v| v % p).collect()).collect();
            let m = MatFp::from_rows(p, 4, &rows);
            let ns = m.nullspace();
            prop_assert_eq!(m.rank() + ns.rows, 4);
            for i in 0..ns.rows {
                prop_assert!(m.mul_vec(ns.row(i)).iter().all(|&v| v == 0));
            }
        }

        #[test]
        fn rref_idempotent(entries in prop::collection::vec(0u8..3, 12)) {
            let rows: Vec<Vec<u8>> = entries.chunks(4).map(|c| c.to_vec()).collect();
            let mut m = MatFp::from_rows(3, 4, &rows);
            m.rref();
            let once = m.clone();
            m.rref();
            prop_assert_eq!(m, once);
        }
    }
}
