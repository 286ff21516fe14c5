//! Fourier analysis on F_p^n: transform and inversion, convolution, the
//! U^2 fourth power as an exact quadruple count, pseudorandomness defect,
//! and large-spectrum extraction.
//!
//! Characters are indexed by dual vectors through the dot pairing,
//! chi_s(x) = omega^{s.x} with omega = exp(2 pi i / p), and
//! fhat(s) = E_x f(x) omega^{s.x}. Everything for p = 2 runs through
//! dyadic f64 arithmetic and is exact; odd p uses tabulated complex roots
//! with 1e-9/1e-10 test tolerances.

use crate::error::{Error, Result};
use crate::gfspace::{AffineSubspace, FieldParams};
use crate::setcalc::DenseSet;
use crate::transform;
use num_complex::Complex64;

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Origin {
    Raw,
    Indicator,
    Balanced,
}

/// A real-valued function on F_p^n, densely tabulated.
#[derive(Clone, PartialEq, Debug)]
pub struct DensityFn {
    params: FieldParams,
    values: Vec<f64>,
    origin: Origin,
}

impl DensityFn {
    pub fn from_values(params: FieldParams, values: Vec<f64>) -> Result<DensityFn> {
        if values.len() != params.size() as usize {
            return Err(Error::precondition("value table length must be p^n"));
        }
        Ok(DensityFn {
            params,
            values,
            origin: Origin::Raw,
        })
    }

    pub fn from_indicator(a: &DenseSet) -> DensityFn {
        let mut values = vec![0.0; a.params().size() as usize];
        for v in a.iter() {
            values[v as usize] = 1.0;
        }
        DensityFn {
            params: a.params(),
            values,
            origin: Origin::Indicator,
        }
    }

    /// 1_A - alpha, mean zero.
    pub fn balanced(a: &DenseSet) -> DensityFn {
        let alpha = a.density();
        let mut values = vec![-alpha; a.params().size() as usize];
        for v in a.iter() {
            values[v as usize] = 1.0 - alpha;
        }
        DensityFn {
            params: a.params(),
            values,
            origin: Origin::Balanced,
        }
    }

    pub fn params(&self) -> FieldParams {
        self.params
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn origin(&self) -> Origin {
        self.origin
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.params.size() as f64
    }
}

/// Fourier coefficients, indexed by the dual vector s.
#[derive(Clone, Debug)]
pub struct Spectrum {
    params: FieldParams,
    coeffs: Vec<Complex64>,
    /// True when produced by the dyadic p = 2 path (bit-exact values).
    exact: bool,
}

impl Spectrum {
    pub fn params(&self) -> FieldParams {
        self.params
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeff(&self, s: u32) -> Complex64 {
        self.coeffs[s as usize]
    }

    pub fn is_exact(&self) -> bool {
        self.exact
    }

    /// Largest nontrivial magnitude and the least dual index attaining it.
    /// None when n = 0 (no nontrivial characters).
    pub fn max_nontrivial(&self) -> Option<(u32, f64)> {
        let mut best: Option<(u32, f64)> = None;
        for s in 1..self.params.size() {
            let m = self.coeffs[s as usize].norm();
            if best.map_or(true, |(_, bm)| m > bm) {
                best = Some((s, m));
            }
        }
        best
    }
}

fn omega_pows(p: u8) -> Vec<Complex64> {
    (0..p)
        .map(|k| Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / p as f64))
        .collect()
}

/// One radix-p pass per coordinate; pows[j*k mod p] multiplies the k-th
/// input of each group into the j-th output.
fn dft_pass(v: &mut [Complex64], p: usize, pows: &[Complex64]) {
    let len = v.len();
    let mut stride = 1;
    let mut scratch = vec![Complex64::new(0.0, 0.0); p];
    while stride < len {
        let period = stride * p;
        for start in (0..len).step_by(period) {
            for off in 0..stride {
                for (k, s) in scratch.iter_mut().enumerate() {
                    *s = v[start + off + k * stride];
                }
                for j in 0..p {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (k, &s) in scratch.iter().enumerate() {
                        acc += s * pows[j * k % p];
                    }
                    v[start + off + j * stride] = acc;
                }
            }
        }
        stride = period;
    }
}

fn wht_f64(v: &mut [f64]) {
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

/// fhat(s) = E_x f(x) omega^{s.x}.
pub fn dft(f: &DensityFn) -> Spectrum {
    let params = f.params;
    let size = params.size() as usize;
    if params.p() == 2 {
        let mut v = f.values.clone();
        wht_f64(&mut v);
        let scale = 1.0 / size as f64;
        let coeffs = v.into_iter().map(|x| Complex64::new(x * scale, 0.0)).collect();
        return Spectrum {
            params,
            coeffs,
            exact: true,
        };
    }
    let mut v: Vec<Complex64> = f.values.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    dft_pass(&mut v, params.p() as usize, &omega_pows(params.p()));
    let scale = 1.0 / size as f64;
    let coeffs = v.into_iter().map(|c| c * scale).collect();
    Spectrum {
        params,
        coeffs,
        exact: false,
    }
}

/// f(x) = sum_s fhat(s) omega^{-s.x}; assumes a conjugate-symmetric
/// spectrum (always true for spectra of real functions) and returns the
/// real part.
pub fn inverse_dft(spec: &Spectrum) -> DensityFn {
    let params = spec.params;
    if params.p() == 2 {
        let mut v: Vec<f64> = spec.coeffs.iter().map(|c| c.re).collect();
        wht_f64(&mut v);
        return DensityFn {
            params,
            values: v,
            origin: Origin::Raw,
        };
    }
    let mut v = spec.coeffs.clone();
    let pows: Vec<Complex64> = omega_pows(params.p()).into_iter().map(|c| c.conj()).collect();
    dft_pass(&mut v, params.p() as usize, &pows);
    DensityFn {
        params,
        values: v.into_iter().map(|c| c.re).collect(),
        origin: Origin::Raw,
    }
}

/// (f*g)(x) = E_y f(y) g(x-y). Indicator inputs go through the exact
/// integer pair-count path; everything else multiplies spectra.
pub fn convolve(f: &DensityFn, g: &DensityFn) -> Result<DensityFn> {
    if f.params != g.params {
        return Err(Error::AmbientMismatch(
            "convolution arguments live in different ambients".into(),
        ));
    }
    let params = f.params;
    let size = params.size() as usize;
    if f.origin == Origin::Indicator && g.origin == Origin::Indicator {
        let fa: Vec<u64> = f.values.iter().map(|&x| x as u64).collect();
        let fb: Vec<u64> = g.values.iter().map(|&x| x as u64).collect();
        let counts = transform::convolution_counts(params, &fa, &fb);
        let values = counts.into_iter().map(|c| c as f64 / size as f64).collect();
        return Ok(DensityFn {
            params,
            values,
            origin: Origin::Raw,
        });
    }
    let fs = dft(f);
    let gs = dft(g);
    let prod = Spectrum {
        params,
        coeffs: fs
            .coeffs
            .iter()
            .zip(&gs.coeffs)
            .map(|(&a, &b)| a * b)
            .collect(),
        exact: fs.exact && gs.exact,
    };
    Ok(inverse_dft(&prod))
}

/// Exact count of additive quadruples and its normalized density.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct QuadCount {
    /// #{(x1,x2,x3,x4) in A^4 : x1 + x2 = x3 + x4}.
    pub count: u128,
    /// count / |ambient|^3; equals the U^2 fourth power of the indicator.
    pub density: f64,
}

fn check_inside(a: &DenseSet, ambient: &AffineSubspace) -> Result<()> {
    for v in a.iter() {
        if !ambient.contains(v) {
            return Err(Error::precondition(
                "set must lie inside the stated ambient",
            ));
        }
    }
    Ok(())
}

/// Pair counts r(z) = #{(x,y) in A^2 : x + y = z} in the ambient's
/// internal coordinates.
fn pair_counts(rel: &DenseSet) -> Vec<u64> {
    let params = rel.params();
    let card = rel.card();
    if card * card <= 1 << 12 {
        let mut r = vec![0u64; params.size() as usize];
        for x in rel.iter() {
            for y in rel.iter() {
                r[params.vadd(x, y) as usize] += 1;
            }
        }
        r
    } else {
        let c = rel.counts();
        transform::convolution_counts(params, &c, &c)
    }
}

/// U^2 fourth power of 1_A relative to `ambient`, as an exact integer
/// quadruple count.
pub fn u2_fourth_power(a: &DenseSet, ambient: &AffineSubspace) -> Result<QuadCount> {
    check_inside(a, ambient)?;
    let rel = a.to_coords(ambient)?;
    let r = pair_counts(&rel);
    let count: u128 = r.iter().map(|&v| (v as u128) * (v as u128)).sum();
    let w = ambient.size() as u128;
    debug_assert!(count <= (a.card() as u128).pow(3).max(1));
    debug_assert!(count >= (a.card() as u128).pow(2));
    Ok(QuadCount {
        count,
        density: count as f64 / (w * w * w) as f64,
    })
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct Pseudorandomness {
    /// Least epsilon for which the U^2 fourth power is at most
    /// alpha^4 (1 + epsilon): epsilon_star = count |W| / |A|^4 - 1,
    /// computed in exact integers before the final division.
    pub epsilon_star: f64,
    /// max_{s != 0} |fhat(s)| of the indicator relative to the ambient.
    pub max_nontrivial_coeff: f64,
}

pub fn pseudorandomness(a: &DenseSet, ambient: &AffineSubspace) -> Result<Pseudorandomness> {
    if a.is_empty() {
        return Err(Error::precondition(
            "pseudorandomness of the empty set is undefined",
        ));
    }
    let quad = u2_fourth_power(a, ambient)?;
    let numer = quad.count * ambient.size() as u128;
    let denom = (a.card() as u128).pow(4);
    // Cauchy-Schwarz on pair counts gives count * |W| >= |A|^4 exactly.
    debug_assert!(numer >= denom);
    let epsilon_star = (numer - denom) as f64 / denom as f64;
    let rel = a.to_coords(ambient)?;
    let spec = dft(&DensityFn::from_indicator(&rel));
    let max_nontrivial_coeff = spec.max_nontrivial().map_or(0.0, |(_, m)| m);
    Ok(Pseudorandomness {
        epsilon_star,
        max_nontrivial_coeff,
    })
}

#[derive(Clone, Copy, PartialEq, Debug)]
pub struct LargeCoeff {
    pub s: u32,
    pub magnitude: f64,
}

/// All nontrivial dual vectors with |fhat_A(s)| >= threshold, by
/// decreasing magnitude (ties by increasing s). Parseval caps the length
/// at alpha / threshold^2.
pub fn large_spectrum(a: &DenseSet, threshold: f64) -> Result<Vec<LargeCoeff>> {
    if threshold <= 0.0 {
        return Err(Error::precondition("threshold must be positive"));
    }
    let spec = dft(&DensityFn::from_indicator(a));
    let mut out: Vec<LargeCoeff> = (1..a.params().size())
        .filter_map(|s| {
            let m = spec.coeff(s).norm();
            (m >= threshold).then_some(LargeCoeff { s, magnitude: m })
        })
        .collect();
    out.sort_by(|x, y| {
        y.magnitude
            .partial_cmp(&x.magnitude)
            .unwrap()
            .then(x.s.cmp(&y.s))
    });
    debug_assert!(out.len() as f64 <= a.density() / (threshold * threshold) + 1e-9);
    Ok(out)
}

/// Spectrum of the indicator relative to an affine ambient (internal
/// coordinates of the ambient's direction).
pub fn relative_spectrum(a: &DenseSet, ambient: &AffineSubspace) -> Result<Spectrum> {
    check_inside(a, ambient)?;
    let rel = a.to_coords(ambient)?;
    Ok(dft(&DensityFn::from_indicator(&rel)))
}

/// CSV dump: `s_index,re,im,magnitude`, one row per dual vector in index
/// order.
pub fn spectrum_to_csv(spec: &Spectrum) -> String {
    let mut out = String::from("s_index,re,im,magnitude\n");
    for (s, c) in spec.coeffs.iter().enumerate() {
        out.push_str(&format!("{s},{},{},{}\n", c.re, c.im, c.norm()));
    }
    out
}
