//! Exact integer convolution over the group F_p^n.
//!
//! p = 2 goes through an integer Walsh-Hadamard transform (the pointwise
//! products and the inverse pass run in i128; unnormalized butterflies can
//! exceed 64 bits even when the final counts are small). Odd p goes through
//! a number-theoretic transform modulo the smallest prime q > 2^25 with
//! q ≡ 1 (mod p); true counts are below 2^24 < q, so reduction mod q loses
//! nothing.

use crate::gfspace::FieldParams;

pub(crate) fn wht_in_place_i64(v: &mut [i64]) {
    debug_assert!(v.len().is_power_of_two());
    let mut h = 1;
    while h < v.len() {
        for start in (0..v.len()).step_by(h * 2) {
            for i in start..start + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

pub(crate) fn wht_in_place_i128(v: &mut [i128]) {
    debug_assert!(v.len().is_power_of_two());
    let mut h = 1;
    while h < v.len() {
        for start in (0..v.len()).step_by(h * 2) {
            for i in start..start + h {
                let (a, b) = (v[i], v[i + h]);
                v[i] = a + b;
                v[i + h] = a - b;
            }
        }
        h *= 2;
    }
}

fn is_prime(q: u64) -> bool {
    if q < 2 {
        return false;
    }
    let mut d = 2;
    while d * d <= q {
        if q % d == 0 {
            return false;
        }
        d += 1;
    }
    true
}

pub(crate) struct NttPlan {
    pub q: u64,
    /// omega^k mod q for k in 0..p; omega is a primitive p-th root of unity.
    pub omega_pows: Vec<u64>,
    pub omega_inv_pows: Vec<u64>,
}

impl NttPlan {
    pub(crate) fn new(p: u8) -> NttPlan {
        let p64 = p as u64;
        let mut q = (1u64 << 25) + 1;
        while !(q % p64 == 1 && is_prime(q)) {
            q += 1;
        }
        // A generator power of order exactly p.
        let omega = (2..q)
            .map(|g| pow_mod(g, (q - 1) / p64, q))
            .find(|&w| w != 1)
            .expect("q has an element of order p");
        debug_assert_eq!(pow_mod(omega, p64, q), 1);
        let omega_pows: Vec<u64> = (0..p64).map(|k| pow_mod(omega, k, q)).collect();
        let omega_inv = omega_pows[(p64 - 1) as usize];
        let omega_inv_pows: Vec<u64> = (0..p64).map(|k| pow_mod(omega_inv, k, q)).collect();
        NttPlan {
            q,
            omega_pows,
            omega_inv_pows,
        }
    }
}

fn pow_mod(mut b: u64, mut e: u64, q: u64) -> u64 {
    let mut acc = 1u64;
    b %= q;
    while e > 0 {
        if e & 1 == 1 {
            acc = acc * b % q;
        }
        b = b * b % q;
        e >>= 1;
    }
    acc
}

/// DFT over F_p^n mod q: one radix-p pass per coordinate.
fn ntt_pass(v: &mut [u64], p: usize, q: u64, pows: &[u64]) {
    let len = v.len();
    let mut stride = 1;
    let mut scratch = vec![0u64; p];
    while stride < len {
        let period = stride * p;
        for start in (0..len).step_by(period) {
            for off in 0..stride {
                for (k, s) in scratch.iter_mut().enumerate() {
                    *s = v[start + off + k * stride];
                }
                for j in 0..p {
                    let mut acc = 0u64;
                    for (k, &s) in scratch.iter().enumerate() {
                        acc = (acc + s * pows[j * k % p]) % q;
                    }
                    v[start + off + j * stride] = acc;
                }
            }
        }
        stride = period;
    }
}

/// Exact counts of the additive convolution r(z) = sum_x a(x) b(z - x).
/// Inputs are nonnegative counts; the true outputs must stay below 2^25
/// for odd p (guaranteed for indicator inputs since p^n <= 2^24).
pub(crate) fn convolution_counts(params: FieldParams, a: &[u64], b: &[u64]) -> Vec<u64> {
    let size = params.size() as usize;
    debug_assert_eq!(a.len(), size);
    debug_assert_eq!(b.len(), size);
    if params.p() == 2 {
        let mut fa: Vec<i64> = a.iter().map(|&v| v as i64).collect();
        let mut fb: Vec<i64> = b.iter().map(|&v| v as i64).collect();
        wht_in_place_i64(&mut fa);
        wht_in_place_i64(&mut fb);
        let mut prod: Vec<i128> = fa
            .iter()
            .zip(&fb)
            .map(|(&x, &y)| x as i128 * y as i128)
            .collect();
        wht_in_place_i128(&mut prod);
        prod.into_iter()
            .map(|v| {
                debug_assert!(v >= 0 && v % size as i128 == 0);
                (v / size as i128) as u64
            })
            .collect()
    } else {
        let p = params.p() as usize;
        let plan = NttPlan::new(params.p());
        let q = plan.q;
        let mut fa: Vec<u64> = a.iter().map(|&v| v % q).collect();
        let mut fb: Vec<u64> = b.iter().map(|&v| v % q).collect();
        ntt_pass(&mut fa, p, q, &plan.omega_pows);
        ntt_pass(&mut fb, p, q, &plan.omega_pows);
        for (x, &y) in fa.iter_mut().zip(&fb) {
            *x = *x * y % q;
        }
        ntt_pass(&mut fa, p, q, &plan.omega_inv_pows);
        let inv_size = pow_mod(size as u64 % q, q - 2, q);
        fa.into_iter().map(|v| v * inv_size % q).collect()
    }
}

/// Counts of b composed with negation: out[-x] = b[x].
pub(crate) fn reverse_counts(params: FieldParams, b: &[u64]) -> Vec<u64> {
    let mut out = vec![0u64; b.len()];
    for (x, &v) in b.iter().enumerate() {
        out[params.vneg(x as u32) as usize] = v;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_conv(params: FieldParams, a: &[u64], b: &[u64]) -> Vec<u64> {
        let size = params.size() as usize;
        let mut out = vec![0u64; size];
        for x in 0..size as u32 {
            if a[x as usize] == 0 {
                continue;
            }
            for y in 0..size as u32 {
                out[params.vadd(x, y) as usize] += a[x as usize] * b[y as usize];
            }
        }
        out
    }

    #[test]
    fn ntt_prime_properties() {
        for p in [3u8, 5, 7, 11, 13] {
            let plan = NttPlan::new(p);
            assert!(plan.q > 1 << 25);
            assert_eq!((plan.q - 1) % p as u64, 0);
            assert!(is_prime(plan.q));
            assert_eq!(plan.omega_pows[0], 1);
            assert_ne!(plan.omega_pows[1], 1);
        }
    }

    #[test]
    fn convolution_matches_brute_force() {
        for (p, n) in [(2u8, 4usize), (3, 3), (5, 2), (7, 2), (13, 1)] {
            let params = FieldParams::new(p, n).unwrap();
            let size = params.size() as usize;
            // A fixed quasi-random pattern keeps the oracle deterministic.
            let a: Vec<u64> = (0..size).map(|i| ((i * 7 + 3) % 5 == 0) as u64).collect();
            let b: Vec<u64> = (0..size).map(|i| ((i * 11 + 1) % 3 == 0) as u64).collect();
            assert_eq!(convolution_counts(params, &a, &b), brute_conv(params, &a, &b));
            let rb = reverse_counts(params, &b);
            let diff = convolution_counts(params, &a, &rb);
            for z in 0..size as u32 {
                let mut expect = 0;
                for x in 0..size as u32 {
                    expect += a[x as usize] * b[params.vsub(x, z) as usize];
                }
                assert_eq!(diff[z as usize], expect, "difference counts at z={z}");
            }
        }
    }

    #[test]
    fn wht_self_inverse() {
        let mut v: Vec<i64> = vec![3, 1, 4, 1, 5, 9, 2, 6];
        let orig = v.clone();
        wht_in_place_i64(&mut v);
        wht_in_place_i64(&mut v);
        let back: Vec<i64> = v.iter().map(|&x| x / 8).collect();
        assert_eq!(back, orig);
    }
}
