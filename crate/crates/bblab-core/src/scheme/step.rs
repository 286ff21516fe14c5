//! One step of the reduction loop: either most columns already have their
//! difference set filling the constrained window (termination), or a
//! positive proportion of additive quadruples sees a deep fiber
//! intersection, and that structure is converted into a dimension drop or
//! one more affine constraint map.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::fourier;
use crate::gfspace::{AffineDualMap, FieldParams, MatFp, Subspace};
use crate::setcalc::{self, two_a_minus_two_a, DenseSet};
use crate::structure;

use super::{
    linear_value, project_mod, rank_mod, rank_hypothesis_holds, window_pairs, ConstraintSystem,
    FiberedSet, SchemeState,
};

/// Outcome of a dichotomy scan that found enough good x.
#[derive(Clone, Debug)]
pub struct TerminationWitness {
    /// The x whose column difference set equals the direction of their
    /// constraint set.
    pub x3: DenseSet,
    pub good_count: u64,
    /// The count the scan had to reach.
    pub threshold: f64,
    pub warnings: Vec<String>,
}

/// Census of additive quadruples whose four fibers intersect deeply.
#[derive(Clone, Debug)]
pub struct QuadrupleStructure {
    /// Ordered additive quadruples (y1, y2, y3, y1+y2-y3) inside the columns.
    pub total: u128,
    /// The quadruples whose joint fiber codimension is under the threshold.
    pub structured: Vec<[u32; 4]>,
    pub kappa: f64,
    /// Structured means joint codimension strictly below 4r - s.
    pub codim_threshold: usize,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug)]
pub enum Dichotomy {
    Termination(TerminationWitness),
    Quadruples(QuadrupleStructure),
}

/// Decide the step. Requires the columns to be eps-pseudorandom in their
/// window for eps = p^{-r}/256; `relaxed_epsilon` admits a looser budget
/// with a warning instead of failing. Either enough x are good, with the
/// claimed block exactly re-checked inside the row operator image of the
/// product view, or the quadruple census is returned with its proportion
/// bound checked (hard only when the scale supports the constants).
pub fn dichotomy(state: &SchemeState, relaxed_epsilon: Option<f64>) -> Result<Dichotomy> {
    let mut warnings = Vec::new();
    let eps = state.epsilon();
    let pr = fourier::pseudorandomness(state.a(), state.w())?;
    let strict = pr.epsilon_star <= eps;
    if !strict {
        match relaxed_epsilon {
            Some(relaxed) if pr.epsilon_star <= relaxed => warnings.push(format!(
                "columns are only {:.6}-pseudorandom where {eps:.6} was demanded; \
                 continuing under the relaxed budget {relaxed:.6}",
                pr.epsilon_star
            )),
            _ => {
                return Err(Error::precondition(format!(
                    "columns are not pseudorandom enough in the window: eps* = {} > {eps}",
                    pr.epsilon_star
                )))
            }
        }
    }

    let params1 = state.params1();
    let inner = state.coords_params();
    let pairs = window_pairs(state.w());
    let mut x3 = DenseSet::empty(params1);
    let mut good: Vec<(u32, DenseSet)> = Vec::new();
    for x in state.v().enumerate() {
        let mut b_aff = DenseSet::empty(inner);
        let mut hom = DenseSet::empty(inner);
        let mut a_x = DenseSet::empty(inner);
        for &(c, y) in &pairs {
            if state.xis().iter().all(|xi| params1.dot(x, xi.eval(c)) == 0) {
                b_aff.insert(c);
            }
            if state
                .xis()
                .iter()
                .all(|xi| params1.dot(x, linear_value(xi, c)) == 0)
            {
                hom.insert(c);
            }
            if state.a().contains(y) && state.fibers()[&y].contains(x) {
                a_x.insert(c);
            }
        }
        if !b_aff.is_empty() && two_a_minus_two_a(&a_x) == hom {
            x3.insert(x);
            good.push((x, hom));
        }
    }

    let p = params1.p() as f64;
    let threshold = p.powi(-(state.r() as i32)) * state.v().size() as f64 / 12.0;
    if x3.card() as f64 >= threshold {
        // The termination claim is exact: for every good x, the direction
        // members it certifies must already sit in the row operator image.
        let img = setcalc::phi_v(&state.product_view()?);
        let wdir = state.w().direction();
        for (x, hom) in &good {
            for c in hom.iter() {
                let d = wdir.member_from_coords(&inner.digits(c));
                if !img.contains(*x, d) {
                    return Err(Error::internal(format!(
                        "termination block ({x}, {d}) escapes the row operator image"
                    )));
                }
            }
        }
        return Ok(Dichotomy::Termination(TerminationWitness {
            good_count: x3.card(),
            x3,
            threshold,
            warnings,
        }));
    }

    let mut quad = quadruple_structure(state);
    let bound = p.powi(state.s() as i32 - 4 * state.r() as i32) * eps;
    if quad.kappa < bound {
        let scale_supports = state.v().dim() >= 3 * state.r() + 10
            && rank_hypothesis_holds(state, 3 * state.r() + 10);
        if strict && scale_supports {
            return Err(Error::internal(format!(
                "structured proportion {} fell under the guaranteed {bound}",
                quad.kappa
            )));
        }
        warnings.push(format!(
            "structured proportion {} is under the asymptotic floor {bound}; \
             expected below the scale the constants assume",
            quad.kappa
        ));
    }
    quad.warnings = warnings;
    Ok(Dichotomy::Quadruples(quad))
}

/// Count ordered additive quadruples of the columns and mark those whose
/// four fibers intersect in codimension under 4r - s. The joint
/// codimension is cached per unordered fiber-identity pattern.
pub fn quadruple_structure(state: &SchemeState) -> QuadrupleStructure {
    let params1 = state.params1();
    let params2 = state.params2();
    let members: Vec<u32> = state.a().iter().collect();
    let v_perp = state.v().orthogonal_complement();
    let v_codim = v_perp.dim();

    let mut key_ids: BTreeMap<Vec<u32>, usize> = BTreeMap::new();
    let mut perp_rows: Vec<Vec<u32>> = Vec::new();
    let mut fiber_id: BTreeMap<u32, usize> = BTreeMap::new();
    for &y in &members {
        let fiber = &state.fibers()[&y];
        let next = key_ids.len();
        let id = *key_ids.entry(fiber.rows().to_vec()).or_insert(next);
        if id == perp_rows.len() {
            perp_rows.push(fiber.orthogonal_complement().rows().to_vec());
        }
        fiber_id.insert(y, id);
    }

    let codim_threshold = 4 * state.r() - state.s();
    let mut cache: BTreeMap<[usize; 4], usize> = BTreeMap::new();
    let mut total = 0u128;
    let mut structured = Vec::new();
    for &y1 in &members {
        for &y2 in &members {
            let ysum = params2.vadd(y1, y2);
            for &y3 in &members {
                let y4 = params2.vsub(ysum, y3);
                if !state.a().contains(y4) {
                    continue;
                }
                total += 1;
                let mut key = [fiber_id[&y1], fiber_id[&y2], fiber_id[&y3], fiber_id[&y4]];
                key.sort_unstable();
                let codim = *cache.entry(key).or_insert_with(|| {
                    let mut rows: Vec<u32> = v_perp.rows().to_vec();
                    for id in key {
                        rows.extend_from_slice(&perp_rows[id]);
                    }
                    Subspace::from_spanning(params1, &rows).dim() - v_codim
                });
                if codim < codim_threshold {
                    structured.push([y1, y2, y3, y4]);
                }
            }
        }
    }
    let kappa = structured.len() as f64 / total as f64;
    QuadrupleStructure {
        total,
        structured,
        kappa,
        codim_threshold,
        warnings: Vec::new(),
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum ReductionKind {
    /// A nonzero combination of the maps had small linear-part rank; its
    /// value span was cut away and the combination removed from the family.
    LowRankCombination,
    /// A cutting functional landed in the map span on most columns; a
    /// matching combination was rotated out of the family.
    SpanPigeonhole,
    /// A cutting functional landed outside the map span; each leftover
    /// span was split around it and the last map absorbed into leftovers.
    PerpComplement,
    /// No functional cuts any fiber: every fiber already equals v and the
    /// recorded codimension bound was simply stale.
    BoundTightened,
}

impl ReductionKind {
    pub fn name(&self) -> &'static str {
        match self {
            ReductionKind::LowRankCombination => "low-rank-combination",
            ReductionKind::SpanPigeonhole => "span-pigeonhole",
            ReductionKind::PerpComplement => "perp-complement",
            ReductionKind::BoundTightened => "bound-tightened",
        }
    }
}

/// A step that shrinks the codimension budget.
#[derive(Clone, Debug)]
pub struct CodimReduction {
    pub kind: ReductionKind,
    pub v_new: Subspace,
    /// Columns surviving the step.
    pub s_set: DenseSet,
    pub fibers_new: BTreeMap<u32, Subspace>,
    pub xis_new: Vec<AffineDualMap>,
    pub uys_new: BTreeMap<u32, Subspace>,
    pub r_new: usize,
    /// The cutting functional, when one was selected.
    pub functional: Option<u32>,
    /// The winning relation coefficients, when the search ran.
    pub relation: Option<Vec<u8>>,
    /// The map combination involved, when one was selected.
    pub combination: Option<Vec<u8>>,
}

impl CodimReduction {
    /// Rebuild the state after this step; construction re-verifies every
    /// invariant.
    pub fn apply(&self, state: &SchemeState) -> Result<SchemeState> {
        SchemeState::new(
            self.v_new.clone(),
            FiberedSet::new(
                state.w().clone(),
                self.s_set.clone(),
                self.fibers_new.clone(),
                self.r_new,
            )?,
            ConstraintSystem::new(self.xis_new.clone(), self.uys_new.clone()),
        )
    }
}

/// A step that captures one more affine constraint map.
#[derive(Clone, Debug)]
pub struct NewAffineMap {
    pub xi: AffineDualMap,
    /// Columns on which the map reproduces the relation's value.
    pub s_set: DenseSet,
    pub uys_new: BTreeMap<u32, Subspace>,
    pub relation: Vec<u8>,
    pub retained_quadruples: u64,
    pub agreement: u64,
}

impl NewAffineMap {
    pub fn apply(&self, state: &SchemeState) -> Result<SchemeState> {
        let fibers = self
            .s_set
            .iter()
            .map(|y| (y, state.fibers()[&y].clone()))
            .collect();
        let mut xis = state.xis().to_vec();
        xis.push(self.xi.clone());
        SchemeState::new(
            state.v().clone(),
            FiberedSet::new(state.w().clone(), self.s_set.clone(), fibers, state.r())?,
            ConstraintSystem::new(xis, self.uys_new.clone()),
        )
    }
}

#[derive(Clone, Debug)]
pub enum LineariseOutcome {
    Reduction(CodimReduction),
    NewMap(NewAffineMap),
}

#[derive(Clone, Debug)]
pub struct LineariseConfig {
    /// Rank floor for the pre-check; default min(3r + 10, dim v).
    pub rank_threshold: Option<usize>,
    pub max_partition_retries: u32,
    /// Cap for the affine-map enumeration behind the new-map extraction.
    pub map_cap: u64,
    /// Cap on the p^{4r} relation coefficient table.
    pub relation_cap: u64,
}

impl Default for LineariseConfig {
    fn default() -> Self {
        LineariseConfig {
            rank_threshold: None,
            max_partition_retries: 10_000,
            map_cap: crate::DEFAULT_ENUMERATION_CAP,
            relation_cap: 1 << 24,
        }
    }
}

/// Convert quadruple structure into progress. First a pre-check for a
/// low-rank map combination; otherwise an exhaustive search over the
/// p^{4r} coefficient vectors for a non-obvious relation holding on a
/// pigeonhole share of the structured quadruples, followed by the case
/// split: a block supported on the maps yields a cutting functional and a
/// codimension drop, while a block leaning on the leftovers yields a new
/// affine map via a position-respecting coloring and the graph extraction.
pub fn linearise(
    state: &SchemeState,
    quad: &QuadrupleStructure,
    seed: u64,
    cfg: &LineariseConfig,
) -> Result<LineariseOutcome> {
    if quad.structured.is_empty() {
        return Err(Error::precondition(
            "no structured quadruples to linearise from",
        ));
    }
    let params1 = state.params1();
    let p = params1.p();
    let (r, s) = (state.r(), state.s());
    let v_perp = state.v().orthogonal_complement();
    let threshold = cfg
        .rank_threshold
        .unwrap_or_else(|| (3 * r + 10).min(state.v().dim()));

    if s > 0 {
        let sparams = FieldParams::new(p, s)?;
        let refs: Vec<&AffineDualMap> = state.xis().iter().collect();
        for enc in 1..sparams.size() {
            let lambda = sparams.digits(enc);
            let combo = AffineDualMap::linear_combination(&refs, &lambda);
            if rank_mod(&v_perp, &combo) < threshold {
                let red = low_rank_reduction(state, &lambda, &combo)?;
                red.apply(state)?;
                return Ok(LineariseOutcome::Reduction(red));
            }
        }
    }

    let slots = slot_table(state)?;
    let (best_count, best_a, aparams) = relation_search(state, quad, &slots, cfg)?;
    let pk = (p as u128).pow(4 * r as u32);
    let ps = (p as u128).pow(s as u32);
    let ps1 = (p as u128).pow(s as u32 + 1);
    let floor = (quad.structured.len() as u128 * (ps1 - ps)).div_ceil(pk - ps);
    if (best_count as u128) < floor {
        return Err(Error::internal(format!(
            "best relation count {best_count} fell under the pigeonhole floor {floor}"
        )));
    }
    let a_digits = aparams.digits(best_a);

    let elim = (0..4).find(|&i| (s..r).all(|j| a_digits[i * r + j] == 0));
    let outcome = match elim {
        Some(_) => cutting_functional(state, &a_digits).map(LineariseOutcome::Reduction)?,
        None => new_map(state, quad, &slots, &a_digits, seed, cfg)
            .map(LineariseOutcome::NewMap)?,
    };
    match &outcome {
        LineariseOutcome::Reduction(red) => {
            red.apply(state)?;
        }
        LineariseOutcome::NewMap(nm) => {
            nm.apply(state)?;
        }
    }
    Ok(outcome)
}

/// Per-column slot list of length r: the s map values, then the leftover
/// basis rows, zero-padded. Everything is reduced into the canonical
/// transversal of v-perp so that linear relations among slots mean
/// relations modulo v-perp.
fn slot_table(state: &SchemeState) -> Result<BTreeMap<u32, Vec<u32>>> {
    let v_perp = state.v().orthogonal_complement();
    let mut out = BTreeMap::new();
    for y in state.a().iter() {
        let c = state.window_coords(y)?;
        let mut slots: Vec<u32> = state
            .xis()
            .iter()
            .map(|xi| v_perp.reduce(xi.eval(c)))
            .collect();
        for &row in state.uys()[&y].rows() {
            slots.push(v_perp.reduce(row));
        }
        slots.resize(state.r(), 0);
        out.insert(y, slots);
    }
    Ok(out)
}

/// Coefficient vectors that hold on every additive quadruple of affine
/// maps regardless of the family: block weights (1, 1, -1, -1) on a single
/// map column.
fn is_obvious(p: u8, r: usize, s: usize, digits: &[u8]) -> bool {
    let z: [u8; 4] = [1, 1, p - 1, p - 1];
    for i in 0..4 {
        for j in s..r {
            if digits[i * r + j] != 0 {
                return false;
            }
        }
    }
    for j in 0..s {
        let t = digits[j] as u16;
        for i in 0..4 {
            if digits[i * r + j] != (t * z[i] as u16 % p as u16) as u8 {
                return false;
            }
        }
    }
    true
}

/// For every structured quadruple, enumerate the non-obvious coefficient
/// vectors annihilating its stacked slots (a nullspace per distinct slot
/// pattern, cached), and return the most frequent one: (count, encoding,
/// the 4r-digit coefficient space).
fn relation_search(
    state: &SchemeState,
    quad: &QuadrupleStructure,
    slots: &BTreeMap<u32, Vec<u32>>,
    cfg: &LineariseConfig,
) -> Result<(u64, u32, FieldParams)> {
    let params1 = state.params1();
    let p = params1.p();
    let (r, s) = (state.r(), state.s());
    let k = 4 * r;
    let needed = (p as u128).pow(k as u32);
    let aparams = FieldParams::new(p, k).map_err(|_| Error::CapExceeded {
        needed,
        cap: cfg.relation_cap,
    })?;
    if u64::from(aparams.size()) > cfg.relation_cap {
        return Err(Error::CapExceeded {
            needed,
            cap: cfg.relation_cap,
        });
    }

    let mut slot_ids: BTreeMap<Vec<u32>, u32> = BTreeMap::new();
    let mut slot_lists: Vec<Vec<u32>> = Vec::new();
    let mut id_of_y: BTreeMap<u32, u32> = BTreeMap::new();
    for (&y, sl) in slots {
        let next = slot_ids.len() as u32;
        let id = *slot_ids.entry(sl.clone()).or_insert(next);
        if id as usize == slot_lists.len() {
            slot_lists.push(sl.clone());
        }
        id_of_y.insert(y, id);
    }

    let n1 = params1.n();
    let mut counts: BTreeMap<u32, u64> = BTreeMap::new();
    let mut cache: BTreeMap<[u32; 4], Vec<u32>> = BTreeMap::new();
    for q in &quad.structured {
        let key = [
            id_of_y[&q[0]],
            id_of_y[&q[1]],
            id_of_y[&q[2]],
            id_of_y[&q[3]],
        ];
        let nonobvious = cache.entry(key).or_insert_with(|| {
            let mut m = MatFp::zero(p, n1, k);
            for (i, id) in key.iter().enumerate() {
                for (j, &slot) in slot_lists[*id as usize].iter().enumerate() {
                    for (row, &d) in params1.digits(slot).iter().enumerate() {
                        m.set(row, i * r + j, d);
                    }
                }
            }
            let basis = m.nullspace();
            let (nb, _) = basis.shape();
            let basis_pts: Vec<u32> = (0..nb)
                .map(|i| aparams.from_digits(basis.row(i)).expect("digits in range"))
                .collect();
            let bparams = FieldParams::new(p, nb).expect("nullity fits");
            let mut pts = Vec::new();
            for enc in 0..bparams.size() {
                let mut acc = 0u32;
                for (ci, &bp) in bparams.digits(enc).iter().zip(&basis_pts) {
                    acc = aparams.vadd(acc, aparams.vscale(*ci, bp));
                }
                if !is_obvious(p, r, s, &aparams.digits(acc)) {
                    pts.push(acc);
                }
            }
            pts.sort_unstable();
            pts
        });
        for &a in nonobvious.iter() {
            *counts.entry(a).or_insert(0) += 1;
        }
    }

    let mut best: Option<(u64, u32)> = None;
    for (&a, &count) in &counts {
        if best.map_or(true, |(bc, _)| count > bc) {
            best = Some((count, a));
        }
    }
    let (best_count, best_a) = best.unwrap_or((0, 0));
    Ok((best_count, best_a, aparams))
}

/// Greedy completion of a nonzero coefficient vector to a basis of F_p^s;
/// the given vector stays first.
fn complete_basis(p: u8, lambda: &[u8]) -> Vec<Vec<u8>> {
    let s = lambda.len();
    let mut rows = vec![lambda.to_vec()];
    for j in 0..s {
        if rows.len() == s {
            break;
        }
        let mut unit = vec![0u8; s];
        unit[j] = 1;
        let mut candidate = rows.clone();
        candidate.push(unit.clone());
        if MatFp::from_rows(p, s, &candidate).rank() == candidate.len() {
            rows.push(unit);
        }
    }
    rows
}

/// Pre-check hit: cut away the value span of the low-rank combination and
/// rotate it out of the family. Every fiber keeps its annihilator shape
/// with the same leftover, one budget unit cheaper.
fn low_rank_reduction(
    state: &SchemeState,
    lambda: &[u8],
    combo: &AffineDualMap,
) -> Result<CodimReduction> {
    let params1 = state.params1();
    let mut value_rows = Vec::new();
    for y in state.a().iter() {
        value_rows.push(combo.eval(state.window_coords(y)?));
    }
    let value_span = Subspace::from_spanning(params1, &value_rows);
    let v_new = state.v().intersect(&value_span.orthogonal_complement());
    let v_new_perp = v_new.orthogonal_complement();

    let refs: Vec<&AffineDualMap> = state.xis().iter().collect();
    let basis = complete_basis(params1.p(), lambda);
    let xis_new: Vec<AffineDualMap> = basis[1..]
        .iter()
        .map(|row| AffineDualMap::linear_combination(&refs, row))
        .collect();
    let r_new = state.r() - 1;
    let mut fibers_new = BTreeMap::new();
    let mut uys_new = BTreeMap::new();
    for y in state.a().iter() {
        let f = state.fibers()[&y].intersect(&v_new);
        if v_new.dim() - f.dim() > r_new {
            return Err(Error::internal(
                "codimension failed to drop under the low-rank cut",
            ));
        }
        fibers_new.insert(y, f);
        uys_new.insert(y, project_mod(&v_new_perp, &state.uys()[&y]));
    }
    Ok(CodimReduction {
        kind: ReductionKind::LowRankCombination,
        v_new,
        s_set: state.a().clone(),
        fibers_new,
        xis_new,
        uys_new,
        r_new,
        functional: None,
        relation: None,
        combination: Some(lambda.to_vec()),
    })
}

/// Case of a relation block supported on the maps: select the functional
/// most often inside a fiber annihilator, cut v by it, and either rotate a
/// matching map combination out of the family (span pigeonhole) or split
/// every leftover span around the functional (perp complement). When no
/// functional cuts anything, every fiber already equals v and only the
/// recorded bound shrinks.
fn cutting_functional(state: &SchemeState, a_digits: &[u8]) -> Result<CodimReduction> {
    let params1 = state.params1();
    let p = params1.p();
    let (r, s) = (state.r(), state.s());
    let v_perp = state.v().orthogonal_complement();
    let perps: BTreeMap<u32, Subspace> = state
        .a()
        .iter()
        .map(|y| (y, state.fibers()[&y].orthogonal_complement()))
        .collect();

    // Scan canonical representatives modulo v-perp only; reduce fixes a
    // unique representative per coset and membership is coset-invariant.
    let mut best: Option<(usize, u32)> = None;
    for phi in 1..params1.size() {
        if v_perp.reduce(phi) != phi {
            continue;
        }
        let count = perps.values().filter(|pp| pp.contains(phi)).count();
        if count == 0 {
            continue;
        }
        if best.map_or(true, |(bc, _)| count > bc) {
            best = Some((count, phi));
        }
    }
    let Some((_, phi)) = best else {
        return bound_tightened(state, a_digits);
    };

    let phi_perp = Subspace::from_spanning(params1, &[phi]).orthogonal_complement();
    let v_new = state.v().intersect(&phi_perp);
    if v_new.dim() + 1 != state.v().dim() {
        return Err(Error::internal(
            "cutting functional failed to drop exactly one dimension",
        ));
    }
    let v_new_perp = v_new.orthogonal_complement();

    let s0: Vec<u32> = state
        .a()
        .iter()
        .filter(|y| perps[y].contains(phi))
        .collect();
    let mut s1 = Vec::new();
    let mut s2 = Vec::new();
    for &y in &s0 {
        let c = state.window_coords(y)?;
        let mut rows: Vec<u32> = state.xis().iter().map(|xi| xi.eval(c)).collect();
        rows.extend_from_slice(v_perp.rows());
        if Subspace::from_spanning(params1, &rows).contains(phi) {
            s1.push(y);
        } else {
            s2.push(y);
        }
    }

    if s1.len() >= s2.len() {
        // Span pigeonhole: some combination matches phi on a 1/(p^s - 1)
        // share of s1.
        let sparams = FieldParams::new(p, s)?;
        let refs: Vec<&AffineDualMap> = state.xis().iter().collect();
        let mut best: Option<(usize, Vec<u8>, AffineDualMap)> = None;
        for enc in 1..sparams.size() {
            let lambda = sparams.digits(enc);
            let combo = AffineDualMap::linear_combination(&refs, &lambda);
            let mut count = 0;
            for &y in &s1 {
                if v_perp.reduce(combo.eval(state.window_coords(y)?)) == phi {
                    count += 1;
                }
            }
            if best.as_ref().map_or(true, |(bc, _, _)| count > *bc) {
                best = Some((count, lambda, combo));
            }
        }
        let (count, lambda, combo) =
            best.ok_or_else(|| Error::internal("span case reached with no maps"))?;
        if count < s1.len().div_ceil(sparams.size() as usize - 1) {
            return Err(Error::internal(
                "no combination matched the functional often enough",
            ));
        }
        let mut s3 = DenseSet::empty(state.params2());
        for &y in &s1 {
            if v_perp.reduce(combo.eval(state.window_coords(y)?)) == phi {
                s3.insert(y);
            }
        }
        let basis = complete_basis(p, &lambda);
        let xis_new: Vec<AffineDualMap> = basis[1..]
            .iter()
            .map(|row| AffineDualMap::linear_combination(&refs, row))
            .collect();
        let mut fibers_new = BTreeMap::new();
        let mut uys_new = BTreeMap::new();
        for y in s3.iter() {
            fibers_new.insert(y, state.fibers()[&y].intersect(&v_new));
            uys_new.insert(y, project_mod(&v_new_perp, &state.uys()[&y]));
        }
        return Ok(CodimReduction {
            kind: ReductionKind::SpanPigeonhole,
            v_new,
            s_set: s3,
            fibers_new,
            xis_new,
            uys_new,
            r_new: r - 1,
            functional: Some(phi),
            relation: Some(a_digits.to_vec()),
            combination: Some(lambda),
        });
    }

    // Perp complement: phi sits in the annihilator but outside the map
    // span, so each leftover splits around it and the last map retires
    // into the leftovers.
    let mut s_set = DenseSet::empty(state.params2());
    let mut fibers_new = BTreeMap::new();
    let mut uys_new = BTreeMap::new();
    for &y in &s2 {
        let c = state.window_coords(y)?;
        let mut g_rows: Vec<u32> = state.xis().iter().map(|xi| xi.eval(c)).collect();
        g_rows.push(phi);
        g_rows.extend_from_slice(v_perp.rows());
        let g = Subspace::from_spanning(params1, &g_rows);
        let perp_y = &perps[&y];
        if !g.is_subspace_of(perp_y) {
            return Err(Error::internal("split base escapes the annihilator"));
        }
        let u2 = g.complement_within(perp_y);
        if u2.dim() + 1 > r - s {
            return Err(Error::internal("leftover split failed to shrink"));
        }
        let mut u_rows: Vec<u32> = u2.rows().to_vec();
        if s > 0 {
            u_rows.push(state.xis()[s - 1].eval(c));
        }
        let reduced: Vec<u32> = u_rows.iter().map(|&z| v_new_perp.reduce(z)).collect();
        uys_new.insert(y, Subspace::from_spanning(params1, &reduced));
        fibers_new.insert(y, state.fibers()[&y].intersect(&v_new));
        s_set.insert(y);
    }
    let xis_new = if s > 0 {
        state.xis()[..s - 1].to_vec()
    } else {
        Vec::new()
    };
    Ok(CodimReduction {
        kind: ReductionKind::PerpComplement,
        v_new,
        s_set,
        fibers_new,
        xis_new,
        uys_new,
        r_new: r - 1,
        functional: Some(phi),
        relation: Some(a_digits.to_vec()),
        combination: None,
    })
}

/// All fibers equal v, so no functional can cut; the bound tightens to the
/// true worst codimension (at least s) and the leftovers vanish.
fn bound_tightened(state: &SchemeState, a_digits: &[u8]) -> Result<CodimReduction> {
    let r_new = state
        .a()
        .iter()
        .map(|y| state.v().dim() - state.fibers()[&y].dim())
        .max()
        .expect("columns nonempty")
        .max(state.s());
    if r_new >= state.r() {
        return Err(Error::internal("codimension bound failed to tighten"));
    }
    let uys_new = state
        .a()
        .iter()
        .map(|y| (y, Subspace::zero(state.params1())))
        .collect();
    Ok(CodimReduction {
        kind: ReductionKind::BoundTightened,
        v_new: state.v().clone(),
        s_set: state.a().clone(),
        fibers_new: state.fibers().clone(),
        xis_new: state.xis().to_vec(),
        uys_new,
        r_new,
        functional: None,
        relation: Some(a_digits.to_vec()),
        combination: None,
    })
}

/// Case of every relation block leaning on the leftovers: color the
/// columns by position, read the relation's value map off the surviving
/// quadruples, and extract the affine map agreeing with it on most
/// columns. The agreement set keeps its annihilators reproducible with one
/// leftover dimension less.
fn new_map(
    state: &SchemeState,
    quad: &QuadrupleStructure,
    slots: &BTreeMap<u32, Vec<u32>>,
    a_digits: &[u8],
    seed: u64,
    cfg: &LineariseConfig,
) -> Result<NewAffineMap> {
    let params1 = state.params1();
    let p = params1.p();
    let (r, s) = (state.r(), state.s());
    let z: [u8; 4] = [1, 1, p - 1, p - 1];
    let j_pick: Vec<usize> = (0..4)
        .map(|i| {
            (s..r)
                .find(|&j| a_digits[i * r + j] != 0)
                .expect("every block leans on a leftover slot")
        })
        .collect();

    // Quadruples where the relation holds with all entries distinct; only
    // those can survive a position-respecting coloring.
    let mut t_rel: Vec<[u32; 4]> = Vec::new();
    for q in &quad.structured {
        let mut sum = 0u32;
        for (i, y) in q.iter().enumerate() {
            for (j, &slot) in slots[y].iter().enumerate() {
                sum = params1.vadd(sum, params1.vscale(a_digits[i * r + j], slot));
            }
        }
        if sum != 0 {
            continue;
        }
        if (0..4).all(|i| (0..i).all(|k| q[k] != q[i])) {
            t_rel.push(*q);
        }
    }
    if t_rel.is_empty() {
        return Err(Error::DeskScale(
            "the winning relation is supported only on degenerate quadruples".into(),
        ));
    }

    let partition = structure::partition4(state.a(), &t_rel, seed, cfg.max_partition_retries)?;
    let color_of = |y: u32| -> usize {
        partition
            .parts
            .iter()
            .position(|part| part.contains(y))
            .expect("coloring covers the columns")
    };

    // The relation's value map per column, in window coordinates.
    let mut table: BTreeMap<u32, u32> = BTreeMap::new();
    for y in state.a().iter() {
        let i = color_of(y);
        let mut acc = 0u32;
        for (j, &slot) in slots[&y].iter().enumerate() {
            acc = params1.vadd(acc, params1.vscale(a_digits[i * r + j], slot));
        }
        table.insert(state.window_coords(y)?, params1.vscale(z[i], acc));
    }
    let xi_fn = |c: u32| -> u32 { *table.get(&c).unwrap_or(&0) };

    let a_coords = state.a().to_coords(state.w())?;
    let fraction =
        partition.retained as f64 * (1.0 - 1e-9) / (state.a().card() as f64).powi(3);
    let piece = structure::affine_piece(&a_coords, params1, &xi_fn, fraction, cfg.map_cap)?;
    let s_set = DenseSet::lift_from_coords(state.w(), &piece.s);

    let v_perp = state.v().orthogonal_complement();
    let mut uys_new = BTreeMap::new();
    for y in s_set.iter() {
        let i = color_of(y);
        let rows: Vec<u32> = (s..r)
            .filter(|&j| j != j_pick[i])
            .map(|j| slots[&y][j])
            .collect();
        uys_new.insert(y, Subspace::from_spanning(params1, &rows));
    }
    // Recovery: on the agreement set the new map's value together with the
    // kept slots regenerates the annihilator exactly.
    for y in s_set.iter() {
        let c = state.window_coords(y)?;
        let mut rows: Vec<u32> = state.xis().iter().map(|xi| xi.eval(c)).collect();
        rows.push(piece.map.eval(c));
        rows.extend_from_slice(uys_new[&y].rows());
        rows.extend_from_slice(v_perp.rows());
        if Subspace::from_spanning(params1, &rows) != state.fibers()[&y].orthogonal_complement() {
            return Err(Error::internal(
                "annihilator recovery failed on the agreement set",
            ));
        }
    }
    Ok(NewAffineMap {
        xi: piece.map,
        s_set,
        uys_new,
        relation: a_digits.to_vec(),
        retained_quadruples: partition.retained,
        agreement: piece.s.card(),
    })
}
