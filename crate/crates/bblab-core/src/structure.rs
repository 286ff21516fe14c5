//! Structural extraction routines: certified subspaces inside difference
//! sets, the whole-space test, density increments, regularity descent,
//! random 4-partitions, and the brute-force affine-piece oracle.

use crate::error::{Error, Result};
use crate::fourier::{self, DensityFn, Spectrum};
use crate::gfspace::{
    digit_string, enumerate_subspaces, AffineDualMap, AffineSubspace, FieldParams, Subspace,
};
use crate::setcalc::{two_a_minus_two_a, DenseSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

#[derive(Clone, Copy, PartialEq, Debug)]
pub enum ThresholdPolicy {
    /// Start at alpha^{3/2}; on verification failure halve, down to a floor
    /// of alpha^2 p^{-n/2}.
    Auto,
    Fixed(f64),
}

/// Certified subspace inside (A+A)-(A+A), found by annihilating the large
/// spectrum and verified member by member. The verification makes the
/// routine self-certifying: a returned subspace is always correct, and an
/// uncertifiable set reports NoCertifiedSubspace instead.
pub fn spectral_bogolyubov(a: &DenseSet, policy: ThresholdPolicy) -> Result<Subspace> {
    spectral_bogolyubov_with_stats(a, policy).map(|(w, _)| w)
}

/// Same as `spectral_bogolyubov`, also reporting the spectral threshold
/// that certified the subspace. Parseval caps the large spectrum at
/// alpha / t^2, so the threshold bounds the codimension of the result.
pub fn spectral_bogolyubov_with_stats(
    a: &DenseSet,
    policy: ThresholdPolicy,
) -> Result<(Subspace, f64)> {
    if a.is_empty() {
        return Err(Error::precondition("set must be nonempty"));
    }
    let params = a.params();
    let diff = two_a_minus_two_a(a);
    let spec = fourier::dft(&DensityFn::from_indicator(a));
    let alpha = a.density();

    let verify = |threshold: f64| -> Option<Subspace> {
        let k: Vec<u32> = (1..params.size())
            .filter(|&s| spec.coeff(s).norm() >= threshold)
            .collect();
        let w = Subspace::from_spanning(params, &k).orthogonal_complement();
        let ok = w.enumerate().all(|v| diff.contains(v));
        ok.then_some(w)
    };

    match policy {
        ThresholdPolicy::Fixed(t) => verify(t)
            .map(|w| (w, t))
            .ok_or(Error::NoCertifiedSubspace),
        ThresholdPolicy::Auto => {
            let floor = alpha * alpha / (params.size() as f64).sqrt();
            let mut t = alpha.powf(1.5);
            loop {
                if let Some(w) = verify(t) {
                    return Ok((w, t));
                }
                t /= 2.0;
                if t < floor {
                    return Err(Error::NoCertifiedSubspace);
                }
            }
        }
    }
}

/// Exact oracle: a maximum-dimension subspace wholly inside `a`, or None
/// when 0 is missing (every subspace contains 0). Ties go to the
/// lexicographically least canonical basis.
pub fn max_subspace_in(a: &DenseSet, cap: u64) -> Result<Option<Subspace>> {
    max_subspace_in_at_least(a, 0, cap)
}

/// Budgeted variant of `max_subspace_in` that only descends to `min_dim`;
/// None means no subspace of dimension >= min_dim fits.
pub fn max_subspace_in_at_least(
    a: &DenseSet,
    min_dim: usize,
    cap: u64,
) -> Result<Option<Subspace>> {
    let params = a.params();
    if !a.contains(0) {
        return Ok(None);
    }
    // dim k needs p^k members.
    let mut upper = params.n();
    while upper > 0 && (params.p() as u64).pow(upper as u32) > a.card() {
        upper -= 1;
    }
    for k in (min_dim..=upper).rev() {
        let mut best: Option<Subspace> = None;
        for s in enumerate_subspaces(params, k, cap)? {
            if s.enumerate().all(|v| a.contains(v))
                && best.as_ref().map_or(true, |b| s.rows() < b.rows())
            {
                best = Some(s);
            }
        }
        if best.is_some() {
            return Ok(best);
        }
    }
    Ok(None)
}

/// True iff the off-mean spectral fourth-power mass is strictly below
/// alpha^4, i.e. count(quadruples) |W| < 2 |A|^4 in exact integers. When
/// true, (A+A)-(A+A) is all of the ambient's direction.
pub fn wholespace_test(a: &DenseSet, ambient: &AffineSubspace) -> Result<bool> {
    let quad = fourier::u2_fourth_power(a, ambient)?;
    let holds = quad.count * (ambient.size() as u128) < 2 * (a.card() as u128).pow(4);
    if holds {
        #[cfg(debug_assertions)]
        {
            let rel = a.to_coords(ambient)?;
            debug_assert_eq!(
                two_a_minus_two_a(&rel),
                DenseSet::full(rel.params()),
                "spectral criterion held but the difference set is not everything"
            );
        }
    }
    Ok(holds)
}

#[derive(Clone, Debug)]
pub struct IncrementResult {
    /// Affine hyperplane of the ambient (codimension 1 in it).
    pub hyperplane: AffineSubspace,
    /// Density of A within that hyperplane; at least alpha + beta/2.
    pub new_density: f64,
    /// Witnessing dual vector, in the ambient's internal coordinates.
    pub witness: u32,
    pub witness_magnitude: f64,
}

fn relative_data(a: &DenseSet, ambient: &AffineSubspace) -> Result<(DenseSet, Spectrum)> {
    let rel = a.to_coords(ambient)?;
    let spec = fourier::dft(&DensityFn::from_indicator(&rel));
    Ok((rel, spec))
}

/// Densest of the p parallel coset hyperplanes orthogonal to the largest
/// nontrivial coefficient (which must reach `beta`).
pub fn density_increment(
    a: &DenseSet,
    ambient: &AffineSubspace,
    beta: f64,
) -> Result<IncrementResult> {
    let (rel, spec) = relative_data(a, ambient)?;
    let params = rel.params();
    let Some((witness, magnitude)) = spec.max_nontrivial() else {
        return Err(Error::precondition(
            "zero-dimensional ambient has no nontrivial characters",
        ));
    };
    if magnitude < beta {
        return Err(Error::precondition(format!(
            "no nontrivial coefficient reaches beta = {beta} (max is {magnitude})"
        )));
    }
    let p = params.p();
    let mut counts = vec![0u64; p as usize];
    for y in rel.iter() {
        counts[params.dot(witness, y) as usize] += 1;
    }
    let (best_c, best_count) = counts
        .iter()
        .enumerate()
        .max_by(|(c1, n1), (c2, n2)| n1.cmp(n2).then(c2.cmp(c1)))
        .map(|(c, &n)| (c as u8, n))
        .unwrap();
    let coset_size = params.size() as u64 / p as u64;
    let new_density = best_count as f64 / coset_size as f64;
    let alpha = a.card() as f64 / ambient.size() as f64;
    debug_assert!(new_density + 1e-9 >= alpha + beta / 2.0);

    let m = crate::gfspace::MatFp::from_rows(p, params.n(), &[params.digits(witness)]);
    let inner = AffineSubspace::solution_set(params, &m, &[best_c])?
        .expect("coset hyperplanes are nonempty");
    Ok(IncrementResult {
        hyperplane: ambient.lift_inner(&inner),
        new_density,
        witness,
        witness_magnitude: magnitude,
    })
}

#[derive(Clone, Debug)]
pub struct DescentStep {
    pub subspace: AffineSubspace,
    pub density: f64,
}

#[derive(Clone, Debug)]
pub struct RegularityCertificate {
    pub h: AffineSubspace,
    pub restricted_density: f64,
    pub t: usize,
    pub epsilon: f64,
    pub descent_trace: Vec<DescentStep>,
}

struct Restriction {
    cur: AffineSubspace,
    inside: DenseSet,
    rel: DenseSet,
}

impl Restriction {
    fn new(a: &DenseSet, cur: AffineSubspace) -> Result<Restriction> {
        let inside = a.intersect(&DenseSet::from_affine(&cur));
        let rel = inside.to_coords(&cur)?;
        Ok(Restriction { cur, inside, rel })
    }

    fn density(&self) -> f64 {
        self.inside.card() as f64 / self.cur.size() as f64
    }
}

/// Exhaustive regularity descent: while some affine subspace of
/// codimension 1..=t (relative to the current ambient) holds A with
/// density above current (1+epsilon), descend into the densest such
/// violator. The returned certificate is checkable by re-running the scan.
pub fn regularize(
    a: &DenseSet,
    ambient: &AffineSubspace,
    t: usize,
    epsilon: f64,
    cap: u64,
) -> Result<RegularityCertificate> {
    if a.is_empty() {
        return Err(Error::precondition("set must be nonempty"));
    }
    let mut state = Restriction::new(a, ambient.clone())?;
    let mut descent_trace = Vec::new();
    loop {
        let alpha = state.density();
        let d = state.cur.dim();
        let inner_params = state.rel.params();
        // Best violator: density first, then fewest lost dimensions, then
        // canonical basis and base point.
        let mut best: Option<(f64, usize, AffineSubspace)> = None;
        for j in 1..=t.min(d) {
            for s in enumerate_subspaces(inner_params, d - j, cap)? {
                for rep in s.coset_reps() {
                    let f = AffineSubspace::new(s.clone(), rep);
                    let count = f.enumerate().filter(|&y| state.rel.contains(y)).count();
                    let density = count as f64 / f.size() as f64;
                    if density > alpha * (1.0 + epsilon) {
                        let better = match &best {
                            None => true,
                            Some((bd, bj, bf)) => {
                                density > *bd
                                    || (density == *bd
                                        && (j, f.direction().rows(), f.base())
                                            < (*bj, bf.direction().rows(), bf.base()))
                            }
                        };
                        if better {
                            best = Some((density, j, f));
                        }
                    }
                }
            }
        }
        match best {
            Some((density, _, f)) => {
                let lifted = state.cur.lift_inner(&f);
                state = Restriction::new(a, lifted.clone())?;
                debug_assert_eq!(state.density(), density);
                descent_trace.push(DescentStep {
                    subspace: lifted,
                    density,
                });
            }
            None => {
                // Also confirm the summed lower bound before certifying.
                let floor = alpha * (1.0 - (inner_params.p() as f64).powi(t as i32) * epsilon);
                for j in 1..=t.min(d) {
                    for s in enumerate_subspaces(inner_params, d - j, cap)? {
                        for rep in s.coset_reps() {
                            let f = AffineSubspace::new(s.clone(), rep);
                            let count =
                                f.enumerate().filter(|&y| state.rel.contains(y)).count();
                            if (count as f64) / f.size() as f64 + 1e-9 < floor {
                                return Err(Error::internal(
                                    "regularity lower bound failed on a certified ambient",
                                ));
                            }
                        }
                    }
                }
                return Ok(RegularityCertificate {
                    h: state.cur,
                    restricted_density: alpha,
                    t,
                    epsilon,
                    descent_trace,
                });
            }
        }
    }
}

/// Density-increment descent until the restricted set is
/// epsilon-pseudorandom. Each non-pseudorandom stage is guaranteed a
/// coefficient of magnitude alpha^{3/2} epsilon^{1/2}, so the increment
/// never stalls; density rises by at least beta/2 per step.
pub fn regularize_pseudorandom(
    a: &DenseSet,
    ambient: &AffineSubspace,
    epsilon: f64,
) -> Result<RegularityCertificate> {
    if a.is_empty() {
        return Err(Error::precondition("set must be nonempty"));
    }
    let mut state = Restriction::new(a, ambient.clone())?;
    let mut descent_trace = Vec::new();
    loop {
        let alpha = state.density();
        let pr = fourier::pseudorandomness(&state.inside, &state.cur)?;
        if pr.epsilon_star <= epsilon {
            return Ok(RegularityCertificate {
                h: state.cur,
                restricted_density: alpha,
                t: 1,
                epsilon,
                descent_trace,
            });
        }
        // The fourth-power bound guarantees max >= alpha^{3/2} sqrt(eps*);
        // shave a hair so float rounding cannot produce a phantom stall.
        let beta = alpha.powf(1.5) * epsilon.sqrt() * (1.0 - 1e-12);
        let inc = density_increment(&state.inside, &state.cur, beta).map_err(|e| {
            Error::internal(format!(
                "increment unavailable despite epsilon_star {} > {}: {e}",
                pr.epsilon_star, epsilon
            ))
        })?;
        state = Restriction::new(a, inc.hyperplane.clone())?;
        descent_trace.push(DescentStep {
            subspace: inc.hyperplane,
            density: inc.new_density,
        });
        if descent_trace.len() > 10_000 {
            return Err(Error::internal("pseudorandom descent failed to terminate"));
        }
    }
}

pub fn certificate_to_json(cert: &RegularityCertificate) -> serde_json::Value {
    let params = cert.h.params();
    let affine = |s: &AffineSubspace| {
        json!({
            "base": digit_string(params, s.base()),
            "basis": s.direction().rows().iter().map(|&r| digit_string(params, r)).collect::<Vec<_>>(),
        })
    };
    json!({
        "t": cert.t,
        "epsilon": cert.epsilon,
        "steps": cert.descent_trace.iter().map(|step| {
            let mut v = affine(&step.subspace);
            v["density"] = json!(step.density);
            v
        }).collect::<Vec<_>>(),
        "h": affine(&cert.h),
        "restricted_density": cert.restricted_density,
    })
}

#[derive(Clone, Debug)]
pub struct Partition4 {
    pub parts: [DenseSet; 4],
    pub retained: u64,
    pub attempts: u32,
}

/// Las Vegas uniform 4-coloring, resampled until the position-respecting
/// retained quadruples reach ceil(|tuples|/256).
pub fn partition4(
    universe: &DenseSet,
    tuples: &[[u32; 4]],
    seed: u64,
    max_retries: u32,
) -> Result<Partition4> {
    let params = universe.params();
    for tuple in tuples {
        for (i, &y) in tuple.iter().enumerate() {
            if !universe.contains(y) {
                return Err(Error::precondition(
                    "tuple entries must come from the universe",
                ));
            }
            if tuple[..i].contains(&y) {
                return Err(Error::precondition(
                    "tuple entries must be pairwise distinct",
                ));
            }
        }
    }
    let target = (tuples.len() as u64).div_ceil(256);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let members: Vec<u32> = universe.iter().collect();
    let mut best_retained = 0u64;
    for attempt in 1..=max_retries {
        let mut color = vec![0u8; params.size() as usize];
        for &m in &members {
            color[m as usize] = rng.gen_range(0..4u8);
        }
        let retained = tuples
            .iter()
            .filter(|t| t.iter().enumerate().all(|(i, &y)| color[y as usize] == i as u8))
            .count() as u64;
        best_retained = best_retained.max(retained);
        if retained >= target {
            let mut parts = [
                DenseSet::empty(params),
                DenseSet::empty(params),
                DenseSet::empty(params),
                DenseSet::empty(params),
            ];
            for &m in &members {
                parts[color[m as usize] as usize].insert(m);
            }
            return Ok(Partition4 {
                parts,
                retained,
                attempts: attempt,
            });
        }
    }
    Err(Error::RetriesExhausted {
        attempts: max_retries,
        best_retained,
    })
}

#[derive(Clone, Debug)]
pub struct AffinePiece {
    /// Subset of the domain on which `map` reproduces the sampled values.
    pub s: DenseSet,
    pub map: AffineDualMap,
}

/// Additive quadruples in the graph {(y, xi(y))}: y1+y2 = y3+y4 with
/// matching xi sums.
pub fn graph_quadruples(domain: &DenseSet, xi: &dyn Fn(u32) -> u32, codomain: FieldParams) -> u128 {
    let params = domain.params();
    let mut count = 0u128;
    for y1 in domain.iter() {
        for y2 in domain.iter() {
            let ys = params.vadd(y1, y2);
            let xs = codomain.vadd(xi(y1), xi(y2));
            for y3 in domain.iter() {
                let y4 = params.vsub(ys, y3);
                if domain.contains(y4) && codomain.vadd(xi(y3), xi(y4)) == xs {
                    count += 1;
                }
            }
        }
    }
    count
}

fn decode_affine_map(
    domain: FieldParams,
    codomain: FieldParams,
    index: u64,
) -> AffineDualMap {
    let p = domain.p() as u64;
    let (n_in, n_out) = (domain.n(), codomain.n());
    let ndigits = (n_in + 1) * n_out;
    let mut digits = vec![0u8; ndigits];
    let mut x = index;
    for i in (0..ndigits).rev() {
        digits[i] = (x % p) as u8;
        x /= p;
    }
    let mut linear = crate::gfspace::MatFp::zero(domain.p(), n_out, n_in);
    for r in 0..n_out {
        for c in 0..n_in {
            linear.set(r, c, digits[r * n_in + c]);
        }
    }
    let offset = codomain
        .from_digits(&digits[n_out * n_in..])
        .expect("digits in range");
    AffineDualMap::new(domain, codomain, linear, offset).expect("shapes agree")
}

/// Brute-force stand-in for the affine-piece extraction: enumerate every
/// affine map from the domain's ambient to the codomain and keep the one
/// agreeing with xi on the most domain points (first such map in the
/// ascending row-major encoding). The quadruple precondition mirrors the
/// hypothesis under which the guarantee is meaningful.
pub fn affine_piece(
    domain: &DenseSet,
    codomain: FieldParams,
    xi: &dyn Fn(u32) -> u32,
    min_quadruple_fraction: f64,
    cap: u64,
) -> Result<AffinePiece> {
    let params = domain.params();
    if domain.is_empty() {
        return Err(Error::precondition("domain must be nonempty"));
    }
    let quads = graph_quadruples(domain, xi, codomain);
    let need = min_quadruple_fraction * (domain.card() as f64).powi(3);
    if (quads as f64) < need {
        return Err(Error::precondition(format!(
            "graph has {quads} additive quadruples, below the required {need:.1}"
        )));
    }
    let total: u128 = (params.p() as u128).pow(((params.n() + 1) * codomain.n()) as u32);
    if total > cap as u128 {
        return Err(Error::CapExceeded {
            needed: total,
            cap,
        });
    }
    let mut best: Option<(u64, u64)> = None;
    for index in 0..total as u64 {
        let map = decode_affine_map(params, codomain, index);
        let agree = domain.iter().filter(|&y| map.eval(y) == xi(y)).count() as u64;
        if best.map_or(true, |(bc, _)| agree > bc) {
            best = Some((agree, index));
        }
    }
    let (_, index) = best.expect("at least one map exists");
    let map = decode_affine_map(params, codomain, index);
    let mut s = DenseSet::empty(params);
    for y in domain.iter() {
        if map.eval(y) == xi(y) {
            s.insert(y);
        }
    }
    Ok(AffinePiece { s, map })
}
