//! Fibered bookkeeping for the bilinear reduction loop.
//!
//! A dense product set is summarized column by column: each surviving y
//! carries a subspace fiber V_y certified inside the difference set of the
//! raw column, and the family of annihilators is tracked in the shape
//!
//! ```text
//! V_y^perp = span(xi_1(y), ..., xi_s(y)) + U_y + v^perp
//! ```
//!
//! where v is the current space on the first coordinate, each xi_j is an
//! affine map from window coordinates to functionals, and the U_y are
//! leftover spans of dimension at most r - s. The loop in `driver` either
//! grows s or shrinks r until the leftovers are gone, then reads off a
//! bilinear variety.

mod driver;
mod step;

pub use driver::{report_to_json, run_driver, DriverConfig, DriverReport, StepRecord};
pub use step::{
    dichotomy, linearise, quadruple_structure, CodimReduction, Dichotomy, LineariseConfig,
    LineariseOutcome, NewAffineMap, QuadrupleStructure, ReductionKind, TerminationWitness,
};

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::gfspace::{AffineDualMap, AffineSubspace, FieldParams, MatFp, Subspace};
use crate::setcalc::{DenseSet, ProductSet};
use crate::structure::{self, ThresholdPolicy};

/// Columns surviving the density filter, still carrying their raw fibers.
#[derive(Clone, Debug)]
pub struct DenseFibers {
    pub a: DenseSet,
    pub fibers: BTreeMap<u32, DenseSet>,
}

/// Keep the columns holding at least half their fair share of the mass.
/// If the product has density >= delta, a delta/2 fraction of columns
/// survives; that count is re-checked, not assumed.
pub fn dense_fibers(p: &ProductSet, delta: f64) -> Result<DenseFibers> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::precondition("delta must lie in (0, 1]"));
    }
    if p.density() + 1e-12 < delta {
        return Err(Error::precondition(format!(
            "product density {} is below delta {delta}",
            p.density()
        )));
    }
    let col_size = p.params1().size() as f64;
    let mut a = DenseSet::empty(p.params2());
    let mut fibers = BTreeMap::new();
    for y in 0..p.params2().size() {
        let b = p.fiber_at_y(y);
        if b.card() as f64 >= delta * col_size / 2.0 {
            a.insert(y);
            fibers.insert(y, b);
        }
    }
    if a.density() + 1e-12 < delta / 2.0 {
        return Err(Error::internal("surviving columns fell below delta/2"));
    }
    Ok(DenseFibers { a, fibers })
}

/// Replace every kept raw fiber by a subspace certified inside its
/// 2B-2B. The spectral route is tried first; when it declines to certify,
/// the exact maximal subspace of the difference set is used instead, so the
/// containment is unconditional either way. `r` records the worst observed
/// codimension.
pub fn bogolyubov_fibers(df: &DenseFibers, cap: u64) -> Result<FiberedSet> {
    if df.a.is_empty() {
        return Err(Error::precondition("no surviving columns"));
    }
    let mut fibers = BTreeMap::new();
    let mut r = 0usize;
    for y in df.a.iter() {
        let b = df
            .fibers
            .get(&y)
            .ok_or_else(|| Error::precondition("fiber missing for a surviving column"))?;
        if b.is_empty() {
            return Err(Error::precondition("each fiber must be nonempty"));
        }
        let v_y = match structure::spectral_bogolyubov(b, ThresholdPolicy::Auto) {
            Ok(v) => v,
            Err(Error::NoCertifiedSubspace) => {
                let diff = crate::setcalc::two_a_minus_two_a(b);
                structure::max_subspace_in(&diff, cap)?
                    .expect("a difference set always contains zero")
            }
            Err(e) => return Err(e),
        };
        r = r.max(v_y.codim());
        fibers.insert(y, v_y);
    }
    let w = AffineSubspace::from_subspace(Subspace::full(df.a.params()));
    FiberedSet::new(w, df.a.clone(), fibers, r)
}

/// The certified column family: a window w on the second coordinate, the
/// surviving columns a inside it, and one subspace fiber per column.
#[derive(Clone, Debug)]
pub struct FiberedSet {
    w: AffineSubspace,
    a: DenseSet,
    fibers: BTreeMap<u32, Subspace>,
    /// Bookkeeping bound on every fiber codimension. Kept as a running
    /// bound rather than recomputed: later dimension budgets lean on it.
    r: usize,
}

impl FiberedSet {
    pub fn new(
        w: AffineSubspace,
        a: DenseSet,
        fibers: BTreeMap<u32, Subspace>,
        r: usize,
    ) -> Result<FiberedSet> {
        if a.params() != w.params() {
            return Err(Error::AmbientMismatch(
                "columns and window use different ambients".into(),
            ));
        }
        if a.is_empty() {
            return Err(Error::precondition("column set must be nonempty"));
        }
        if fibers.len() as u64 != a.card() {
            return Err(Error::precondition(
                "fibers must be keyed exactly by the surviving columns",
            ));
        }
        let mut params1 = None;
        for y in a.iter() {
            if !w.contains(y) {
                return Err(Error::precondition("column outside the window"));
            }
            let f = fibers
                .get(&y)
                .ok_or_else(|| Error::precondition("fiber missing for a column"))?;
            match params1 {
                None => params1 = Some(f.params()),
                Some(q) if q == f.params() => {}
                Some(_) => {
                    return Err(Error::AmbientMismatch(
                        "fibers use different first-coordinate ambients".into(),
                    ))
                }
            }
        }
        // The bound r is measured against the enclosing x-space, which this
        // type does not know; the state constructor enforces it.
        Ok(FiberedSet { w, a, fibers, r })
    }

    pub fn w(&self) -> &AffineSubspace {
        &self.w
    }

    pub fn a(&self) -> &DenseSet {
        &self.a
    }

    pub fn fibers(&self) -> &BTreeMap<u32, Subspace> {
        &self.fibers
    }

    pub fn r(&self) -> usize {
        self.r
    }

    pub fn params1(&self) -> FieldParams {
        self.fibers
            .values()
            .next()
            .expect("column set is nonempty")
            .params()
    }

    /// The union of fiber x {column} blocks as a plain product set.
    pub fn product_view(&self) -> Result<ProductSet> {
        let mut out = ProductSet::empty(self.params1(), self.a.params())?;
        for (&y, fiber) in &self.fibers {
            for x in fiber.enumerate() {
                out.insert(x, y);
            }
        }
        Ok(out)
    }
}

/// Check that the product view sits inside `img` (normally the column
/// operator applied to the original set). Strided sampling by default; the
/// full scan is behind the flag because the view can be much bigger than
/// the surviving column count suggests.
pub fn check_product_containment(fibered: &FiberedSet, img: &ProductSet, full: bool) -> Result<()> {
    let stride = if full { 1u64 } else { 64 };
    let mut k = 0u64;
    for (&y, fiber) in &fibered.fibers {
        for x in fiber.enumerate() {
            if k % stride == 0 && !img.contains(x, y) {
                return Err(Error::internal(format!(
                    "certified fiber block ({x}, {y}) escapes the column operator image"
                )));
            }
            k += 1;
        }
    }
    Ok(())
}

/// The affine maps and leftover spans describing the fiber annihilators.
#[derive(Clone, Debug)]
pub struct ConstraintSystem {
    xis: Vec<AffineDualMap>,
    uys: BTreeMap<u32, Subspace>,
}

impl ConstraintSystem {
    pub fn new(xis: Vec<AffineDualMap>, uys: BTreeMap<u32, Subspace>) -> ConstraintSystem {
        ConstraintSystem { xis, uys }
    }

    pub fn xis(&self) -> &[AffineDualMap] {
        &self.xis
    }

    pub fn uys(&self) -> &BTreeMap<u32, Subspace> {
        &self.uys
    }

    pub fn s(&self) -> usize {
        self.xis.len()
    }
}

/// A verified snapshot of the loop: the first-coordinate space v, the
/// fibered columns, and the constraint system tying them together. The
/// constructor re-derives every invariant, so holding a SchemeState is the
/// proof that the bookkeeping is consistent.
#[derive(Clone, Debug)]
pub struct SchemeState {
    v: Subspace,
    fibered: FiberedSet,
    constraints: ConstraintSystem,
}

impl SchemeState {
    pub fn new(
        v: Subspace,
        fibered: FiberedSet,
        constraints: ConstraintSystem,
    ) -> Result<SchemeState> {
        let params1 = v.params();
        if fibered.params1() != params1 {
            return Err(Error::AmbientMismatch(
                "fibers and v use different ambients".into(),
            ));
        }
        let s = constraints.s();
        let r = fibered.r;
        if s > r {
            return Err(Error::precondition(format!(
                "{s} maps exceed the codimension budget {r}"
            )));
        }
        let dparams = FieldParams::new(fibered.w.params().p(), fibered.w.dim())?;
        for xi in &constraints.xis {
            if xi.domain != dparams || xi.codomain != params1 {
                return Err(Error::AmbientMismatch(
                    "constraint map shape does not match window and ambient".into(),
                ));
            }
        }
        if constraints.uys.len() as u64 != fibered.a.card() {
            return Err(Error::precondition(
                "leftover spans must be keyed exactly by the surviving columns",
            ));
        }
        let v_perp = v.orthogonal_complement();
        for y in fibered.a.iter() {
            let fiber = &fibered.fibers[&y];
            if !fiber.is_subspace_of(&v) {
                return Err(Error::precondition("fiber escapes the current space v"));
            }
            if v.dim() - fiber.dim() > r {
                return Err(Error::precondition(format!(
                    "fiber codimension {} in v exceeds the bound {r}",
                    v.dim() - fiber.dim()
                )));
            }
            let uy = constraints
                .uys
                .get(&y)
                .ok_or_else(|| Error::precondition("leftover span missing for a column"))?;
            if uy.params() != params1 {
                return Err(Error::AmbientMismatch(
                    "leftover span in the wrong ambient".into(),
                ));
            }
            if uy.dim() > r - s {
                return Err(Error::precondition(format!(
                    "leftover span of dimension {} exceeds r - s = {}",
                    uy.dim(),
                    r - s
                )));
            }
            let c = window_coords(&fibered.w, y)?;
            let mut rows: Vec<u32> = constraints.xis.iter().map(|xi| xi.eval(c)).collect();
            rows.extend_from_slice(uy.rows());
            rows.extend_from_slice(v_perp.rows());
            if Subspace::from_spanning(params1, &rows) != fiber.orthogonal_complement() {
                return Err(Error::precondition(format!(
                    "annihilator of the fiber at column {y} is not spanned by its maps, \
                     leftover and v-perp"
                )));
            }
        }
        Ok(SchemeState {
            v,
            fibered,
            constraints,
        })
    }

    /// Entry state: v is the full ambient, no maps yet, each leftover span
    /// is the entire fiber annihilator.
    pub fn initial(fibered: FiberedSet) -> Result<SchemeState> {
        let params1 = fibered.params1();
        let uys = fibered
            .a
            .iter()
            .map(|y| (y, fibered.fibers[&y].orthogonal_complement()))
            .collect();
        SchemeState::new(
            Subspace::full(params1),
            fibered,
            ConstraintSystem::new(Vec::new(), uys),
        )
    }

    pub fn v(&self) -> &Subspace {
        &self.v
    }

    pub fn w(&self) -> &AffineSubspace {
        &self.fibered.w
    }

    pub fn a(&self) -> &DenseSet {
        &self.fibered.a
    }

    pub fn fibers(&self) -> &BTreeMap<u32, Subspace> {
        &self.fibered.fibers
    }

    pub fn xis(&self) -> &[AffineDualMap] {
        &self.constraints.xis
    }

    pub fn uys(&self) -> &BTreeMap<u32, Subspace> {
        &self.constraints.uys
    }

    pub fn r(&self) -> usize {
        self.fibered.r
    }

    pub fn s(&self) -> usize {
        self.constraints.s()
    }

    /// Pseudorandomness demanded of the columns inside their window.
    pub fn epsilon(&self) -> f64 {
        (self.params1().p() as f64).powi(-(self.r() as i32)) / 256.0
    }

    pub fn params1(&self) -> FieldParams {
        self.v.params()
    }

    pub fn params2(&self) -> FieldParams {
        self.fibered.a.params()
    }

    /// Domain of the constraint maps: window coordinates as packed points.
    pub fn coords_params(&self) -> FieldParams {
        FieldParams::new(self.params2().p(), self.fibered.w.dim()).expect("window fits")
    }

    pub fn window_coords(&self, y: u32) -> Result<u32> {
        window_coords(&self.fibered.w, y)
    }

    pub fn product_view(&self) -> Result<ProductSet> {
        self.fibered.product_view()
    }

    /// Restrict the window to a sub-window h, keeping only columns inside
    /// it and re-expressing every map in h's coordinates.
    pub fn restrict_window(&self, h: &AffineSubspace) -> Result<SchemeState> {
        let w = &self.fibered.w;
        if !h.direction().is_subspace_of(w.direction()) || !w.contains(h.base()) {
            return Err(Error::precondition("sub-window escapes the current window"));
        }
        let a = self.fibered.a.intersect(&DenseSet::from_affine(h));
        if a.is_empty() {
            return Err(Error::precondition("no columns survive the sub-window"));
        }
        let fibers = a.iter().map(|y| (y, self.fibered.fibers[&y].clone())).collect();
        let uys = a.iter().map(|y| (y, self.constraints.uys[&y].clone())).collect();
        let xis = self
            .constraints
            .xis
            .iter()
            .map(|xi| rebase_map(xi, w, h))
            .collect();
        SchemeState::new(
            self.v.clone(),
            FiberedSet::new(h.clone(), a, fibers, self.fibered.r)?,
            ConstraintSystem::new(xis, uys),
        )
    }
}

/// Coordinates of y relative to the window, packed as a point over
/// F_p^{dim w}.
pub(crate) fn window_coords(w: &AffineSubspace, y: u32) -> Result<u32> {
    let params = w.params();
    let rel = params.vsub(y, w.base());
    let digits = w
        .direction()
        .coords_of(rel)
        .ok_or_else(|| Error::precondition("point outside the window"))?;
    let inner = FieldParams::new(params.p(), w.dim())?;
    inner.from_digits(&digits)
}

/// All (coordinate point, ambient member) pairs of the window, ascending
/// in the coordinate.
pub(crate) fn window_pairs(w: &AffineSubspace) -> Vec<(u32, u32)> {
    let params = w.params();
    let inner = FieldParams::new(params.p(), w.dim()).expect("window fits");
    (0..inner.size())
        .map(|c| {
            let m = w.direction().member_from_coords(&inner.digits(c));
            (c, params.vadd(w.base(), m))
        })
        .collect()
}

/// Value of the linear part of `map` at coordinate point c.
pub(crate) fn linear_value(map: &AffineDualMap, c: u32) -> u32 {
    map.codomain.vsub(map.eval(c), map.eval(0))
}

/// Rank of the linear part of `map`, counted modulo the rows of `modulo`.
pub(crate) fn rank_mod(modulo: &Subspace, map: &AffineDualMap) -> usize {
    let codomain = map.codomain;
    let (n_out, n_in) = map.linear.shape();
    let mut rows: Vec<u32> = modulo.rows().to_vec();
    for k in 0..n_in {
        let digits: Vec<u8> = (0..n_out).map(|i| map.linear.get(i, k)).collect();
        rows.push(codomain.from_digits(&digits).expect("digits in range"));
    }
    Subspace::from_spanning(codomain, &rows).dim() - modulo.dim()
}

/// Span of `sub` with every row reduced modulo `modulo`'s canonical
/// transversal. Reduction is linear, so this is the projection of the span.
pub(crate) fn project_mod(modulo: &Subspace, sub: &Subspace) -> Subspace {
    let rows: Vec<u32> = sub.rows().iter().map(|&row| modulo.reduce(row)).collect();
    Subspace::from_spanning(sub.params(), &rows)
}

/// Re-express a map whose domain is `old`'s coordinates in the coordinates
/// of the nested window `new`. Values at shared ambient points agree.
pub(crate) fn rebase_map(
    map: &AffineDualMap,
    old: &AffineSubspace,
    new: &AffineSubspace,
) -> AffineDualMap {
    let params = old.params();
    let old_inner = FieldParams::new(params.p(), old.dim()).expect("window fits");
    let new_inner = FieldParams::new(params.p(), new.dim()).expect("window fits");
    let mut m = MatFp::zero(params.p(), old.dim(), new.dim());
    for (l, &row) in new.direction().rows().iter().enumerate() {
        let c = old
            .direction()
            .coords_of(row)
            .expect("nested window direction");
        for (k, &digit) in c.iter().enumerate() {
            m.set(k, l, digit);
        }
    }
    let shift_digits = old
        .direction()
        .coords_of(params.vsub(new.base(), old.base()))
        .expect("nested window base");
    let shift = old_inner
        .from_digits(&shift_digits)
        .expect("digits in range");
    map.translate_domain(shift).precompose(new_inner, &m)
}

/// Per-column constraint statistics: how many x see a degenerate
/// constraint set, and how dense the columns through x are on average.
#[derive(Clone, Debug)]
pub struct ClaimStats {
    /// Fraction of x in v whose constraint set B_x has codimension < s.
    pub bad_x_fraction: f64,
    /// Mean over x in v of |A_x| / |B_x|.
    pub mean_alpha_x: f64,
    /// Expected ceiling for the bad fraction, meaningful at scale.
    pub bad_fraction_bound: f64,
    /// Expected floor for the mean, meaningful at scale.
    pub mean_alpha_bound: f64,
    pub rank_hypothesis: bool,
    pub rank_threshold: usize,
    pub warnings: Vec<String>,
}

/// Scan every x in v: B_x = columns of the window annihilated by x under
/// all maps, A_x = surviving columns whose fiber contains x. The two
/// expected bounds hold when the rank hypothesis does and the ambient is
/// large enough for the constants; at small scale violations are reported
/// as warnings, never failures.
pub fn claim_stats(state: &SchemeState, rank_threshold: Option<usize>) -> ClaimStats {
    let params1 = state.params1();
    let (r, s) = (state.r(), state.s());
    let eps = state.epsilon();
    let p = params1.p() as f64;
    let threshold = rank_threshold.unwrap_or_else(|| (3 * r + 10).min(state.v().dim()));
    let rank_hypothesis = rank_hypothesis_holds(state, threshold);

    let pairs = window_pairs(state.w());
    let w_size = pairs.len() as u64;
    let ps = (params1.p() as u64).pow(s as u32);
    let mut bad = 0u64;
    let mut alpha_sum = 0.0f64;
    let mut x_count = 0u64;
    for x in state.v().enumerate() {
        let mut b_card = 0u64;
        for &(c, _) in &pairs {
            if state.xis().iter().all(|xi| params1.dot(x, xi.eval(c)) == 0) {
                b_card += 1;
            }
        }
        if b_card * ps > w_size {
            bad += 1;
        }
        let a_card = state
            .a()
            .iter()
            .filter(|&y| state.fibers()[&y].contains(x))
            .count() as u64;
        if b_card > 0 {
            alpha_sum += a_card as f64 / b_card as f64;
        }
        x_count += 1;
    }
    let bad_x_fraction = bad as f64 / x_count as f64;
    let mean_alpha_x = alpha_sum / x_count as f64;
    let alpha = state.a().card() as f64 / w_size as f64;
    let bad_fraction_bound = eps * p.powi(-(r as i32)) / 4.0;
    let mean_alpha_bound = alpha * p.powi(s as i32 - r as i32) * (1.0 - eps / 4.0);

    let mut warnings = Vec::new();
    if rank_hypothesis {
        if bad_x_fraction > bad_fraction_bound {
            warnings.push(format!(
                "bad-x fraction {bad_x_fraction} exceeds the asymptotic ceiling \
                 {bad_fraction_bound}; expected below the scale the constants assume"
            ));
        }
        if mean_alpha_x < mean_alpha_bound {
            warnings.push(format!(
                "mean column density {mean_alpha_x} is under the asymptotic floor \
                 {mean_alpha_bound}; expected below the scale the constants assume"
            ));
        }
    } else {
        warnings.push(format!(
            "rank hypothesis fails at threshold {threshold}; statistics reported unchecked"
        ));
    }
    ClaimStats {
        bad_x_fraction,
        mean_alpha_x,
        bad_fraction_bound,
        mean_alpha_bound,
        rank_hypothesis,
        rank_threshold: threshold,
        warnings,
    }
}

/// Does every nonzero combination of the maps keep linear-part rank at
/// least `threshold` modulo v-perp?
pub fn rank_hypothesis_holds(state: &SchemeState, threshold: usize) -> bool {
    let s = state.s();
    if s == 0 {
        return true;
    }
    let v_perp = state.v().orthogonal_complement();
    let sparams = FieldParams::new(state.params1().p(), s).expect("s maps fit");
    let refs: Vec<&AffineDualMap> = state.xis().iter().collect();
    (1..sparams.size()).all(|enc| {
        let combo = AffineDualMap::linear_combination(&refs, &sparams.digits(enc));
        rank_mod(&v_perp, &combo) >= threshold
    })
}

#[cfg(test)]
pub(crate) mod testutil {
    use super::*;

    pub(crate) fn f2(n: usize) -> FieldParams {
        FieldParams::new(2, n).unwrap()
    }

    pub(crate) fn full_window(params: FieldParams) -> AffineSubspace {
        AffineSubspace::from_subspace(Subspace::full(params))
    }

    // Planted family over F_2^3 x F_2^3: V_y = {x : x . y = 0}, realized by
    // the identity constraint map. Shared by several scheme tests.
    pub(crate) fn dot_kernel_state() -> SchemeState {
        let params = f2(3);
        let w = full_window(params);
        let a = DenseSet::full(params);
        let mut fibers = BTreeMap::new();
        let mut uys = BTreeMap::new();
        for y in 0..8u32 {
            fibers.insert(
                y,
                Subspace::from_spanning(params, &[y]).orthogonal_complement(),
            );
            uys.insert(y, Subspace::zero(params));
        }
        let xi = AffineDualMap::new(params, params, MatFp::identity(2, 3), 0).unwrap();
        let fibered = FiberedSet::new(w, a, fibers, 1).unwrap();
        SchemeState::new(
            Subspace::full(params),
            fibered,
            ConstraintSystem::new(vec![xi], uys),
        )
        .unwrap()
    }

    // Every fiber is the annihilator of the same point c. With a map the
    // annihilator is spanned by a constant map value; without it, by the
    // leftover span.
    pub(crate) fn planted_state(c: u32, with_map: bool) -> SchemeState {
        let params = f2(3);
        let fiber = Subspace::from_spanning(params, &[c]).orthogonal_complement();
        let mut fibers = BTreeMap::new();
        let mut uys = BTreeMap::new();
        let mut xis = Vec::new();
        for y in 0..8u32 {
            fibers.insert(y, fiber.clone());
            uys.insert(
                y,
                if with_map {
                    Subspace::zero(params)
                } else {
                    Subspace::from_spanning(params, &[c])
                },
            );
        }
        if with_map {
            xis.push(AffineDualMap::new(params, params, MatFp::zero(2, 3, 3), c).unwrap());
        }
        let fibered =
            FiberedSet::new(full_window(params), DenseSet::full(params), fibers, 1).unwrap();
        SchemeState::new(
            Subspace::full(params),
            fibered,
            ConstraintSystem::new(xis, uys),
        )
        .unwrap()
    }
}
