//! Bilinear varieties: simultaneous zero sets of bilinear forms on a pair
//! of subspaces, with membership, containment, a budgeted search for a
//! variety inside a given product set, and the low-rank pipeline check.

use crate::error::{Error, Result};
use crate::gfspace::{digit_string, enumerate_subspaces, parse_digit_string, FieldParams, MatFp, Subspace};
use crate::setcalc::{phi_pipeline, PhiOp, ProductSet};
use serde_json::json;

/// {(x,y) in w1 x w2 : Q_1(x,y) = ... = Q_{r3}(x,y) = 0}. Forms live in
/// the canonical basis coordinates of w1 and w2, so each is
/// dim(w1) x dim(w2); the stored family spans the same form space as the
/// input but is pruned to a canonical independent set, making r3 minimal
/// and equality structural.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BilinearVariety {
    w1: Subspace,
    w2: Subspace,
    forms: Vec<MatFp>,
}

impl BilinearVariety {
    pub fn new(w1: Subspace, w2: Subspace, forms: Vec<MatFp>) -> Result<BilinearVariety> {
        let p = w1.params().p();
        if w2.params().p() != p {
            return Err(Error::AmbientMismatch(
                "variety sides use different primes".into(),
            ));
        }
        let (d1, d2) = (w1.dim(), w2.dim());
        for f in &forms {
            if f.shape() != (d1, d2) {
                return Err(Error::precondition(format!(
                    "form shape {:?} does not match side dimensions ({d1}, {d2})",
                    f.shape()
                )));
            }
        }
        // Canonicalize the span: flatten row-major, RREF, rebuild.
        let mut flat = MatFp::zero(p, 0, d1 * d2);
        for f in &forms {
            let mut row = Vec::with_capacity(d1 * d2);
            for i in 0..d1 {
                row.extend_from_slice(f.row(i));
            }
            flat.push_row(&row);
        }
        flat.rref();
        let forms = (0..flat.rank())
            .map(|k| {
                let mut m = MatFp::zero(p, d1, d2);
                for i in 0..d1 {
                    for j in 0..d2 {
                        m.set(i, j, flat.get(k, i * d2 + j));
                    }
                }
                m
            })
            .collect();
        Ok(BilinearVariety { w1, w2, forms })
    }

    pub fn product(w1: Subspace, w2: Subspace) -> Result<BilinearVariety> {
        BilinearVariety::new(w1, w2, Vec::new())
    }

    pub fn w1(&self) -> &Subspace {
        &self.w1
    }

    pub fn w2(&self) -> &Subspace {
        &self.w2
    }

    pub fn forms(&self) -> &[MatFp] {
        &self.forms
    }

    pub fn r1(&self) -> usize {
        self.w1.codim()
    }

    pub fn r2(&self) -> usize {
        self.w2.codim()
    }

    pub fn r3(&self) -> usize {
        self.forms.len()
    }

    /// max(r1, r2, r3), the quantity the search minimizes.
    pub fn complexity(&self) -> usize {
        self.r1().max(self.r2()).max(self.r3())
    }

    pub fn holds(&self, x: u32, y: u32) -> bool {
        let (Some(c1), Some(c2)) = (self.w1.coords_of(x), self.w2.coords_of(y)) else {
            return false;
        };
        let p = self.w1.params().p() as u32;
        self.forms.iter().all(|q| {
            let mut acc = 0u32;
            for (k, &a) in c1.iter().enumerate() {
                if a == 0 {
                    continue;
                }
                for (l, &b) in c2.iter().enumerate() {
                    acc += a as u32 * b as u32 * q.get(k, l) as u32;
                }
            }
            acc % p == 0
        })
    }

    /// The form in ambient coordinates: since the canonical bases are in
    /// reduced echelon form, a member's coordinate vector is just its
    /// digits at the pivot positions, so the ambient matrix is the
    /// coordinate form scattered onto the pivot grid.
    pub fn ambient_form(&self, idx: usize) -> MatFp {
        let params1 = self.w1.params();
        let params2 = self.w2.params();
        let q = &self.forms[idx];
        let mut m = MatFp::zero(params1.p(), params1.n(), params2.n());
        for (k, &pk) in self.w1.pivots().iter().enumerate() {
            for (l, &pl) in self.w2.pivots().iter().enumerate() {
                m.set(pk, pl, q.get(k, l));
            }
        }
        m
    }
}

pub fn variety_members(v: &BilinearVariety, cap: u64) -> Result<ProductSet> {
    let needed = v.w1.size() as u128 * v.w2.size() as u128;
    if needed > cap as u128 {
        return Err(Error::CapExceeded { needed, cap });
    }
    let mut out = ProductSet::empty(v.w1.params(), v.w2.params())?;
    for x in v.w1.enumerate() {
        for y in v.w2.enumerate() {
            if v.holds(x, y) {
                out.insert(x, y);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Containment {
    Contained,
    /// First variety member missing from the set, in (x asc, y asc) order.
    Witness { x: u32, y: u32 },
}

impl Containment {
    pub fn holds(&self) -> bool {
        matches!(self, Containment::Contained)
    }
}

/// Does the product set contain every member of the variety?
pub fn contains(p: &ProductSet, v: &BilinearVariety) -> Result<Containment> {
    if p.params1() != v.w1.params() || p.params2() != v.w2.params() {
        return Err(Error::AmbientMismatch(
            "variety and product set ambients differ".into(),
        ));
    }
    for x in v.w1.enumerate() {
        for y in v.w2.enumerate() {
            if v.holds(x, y) && !p.contains(x, y) {
                return Ok(Containment::Witness { x, y });
            }
        }
    }
    Ok(Containment::Contained)
}

#[derive(Clone, Copy, Debug)]
pub struct SearchBudget {
    /// Pairs (w1, w2) with codim(w1) + codim(w2) beyond this are not tried.
    pub max_total_codim: usize,
    /// Limit on candidate forms enumerated per pair (p^{dim1 dim2}).
    pub form_cap: u64,
    /// Limit on subspace enumeration per side.
    pub subspace_cap: u64,
    /// Use minimum-dimension form-space search instead of greedy cover on
    /// pairs with dim1*dim2 <= 9 (greedy elsewhere).
    pub exact_cover: bool,
}

impl Default for SearchBudget {
    fn default() -> Self {
        SearchBudget {
            max_total_codim: 8,
            form_cap: 1 << 16,
            subspace_cap: 1_000_000,
            exact_cover: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct SearchReport {
    pub variety: Option<BilinearVariety>,
    pub pairs_scanned: u64,
    /// Among pairs where the cover failed or was skipped, the fewest bad
    /// points left unexcluded.
    pub best_uncovered: Option<u64>,
}

fn decode_form(p: u8, d1: usize, d2: usize, digits: &[u8]) -> MatFp {
    let mut m = MatFp::zero(p, d1, d2);
    for i in 0..d1 {
        for j in 0..d2 {
            m.set(i, j, digits[i * d2 + j]);
        }
    }
    m
}

/// Greedy cover on one pair: returns the chosen forms (each nonzero on at
/// least one previously uncovered bad point, hence independent), or None
/// when some bad point vanishes on every candidate.
fn greedy_cover(p: u8, d: usize, bad: &[Vec<u8>]) -> (Vec<Vec<u8>>, usize) {
    let total = (p as u64).pow(d as u32);
    let mut covered = vec![false; bad.len()];
    let mut left = bad.len();
    let mut chosen: Vec<Vec<u8>> = Vec::new();
    let mut digits = vec![0u8; d];
    while left > 0 {
        let mut best: Option<(usize, Vec<u8>)> = None;
        digits.iter_mut().for_each(|x| *x = 0);
        for _ in 1..total {
            // Increment the MSB-first digit counter.
            for pos in (0..d).rev() {
                digits[pos] += 1;
                if digits[pos] < p {
                    break;
                }
                digits[pos] = 0;
            }
            let hits = bad
                .iter()
                .zip(&covered)
                .filter(|(t, &c)| {
                    !c && {
                        let s: u32 = t
                            .iter()
                            .zip(&digits)
                            .map(|(&a, &b)| a as u32 * b as u32)
                            .sum();
                        s % p as u32 != 0
                    }
                })
                .count();
            if hits > best.as_ref().map_or(0, |(h, _)| *h) {
                best = Some((hits, digits.clone()));
            }
        }
        let Some((_, form)) = best else {
            return (chosen, left);
        };
        for (t, c) in bad.iter().zip(covered.iter_mut()) {
            if !*c {
                let s: u32 = t.iter().zip(&form).map(|(&a, &b)| a as u32 * b as u32).sum();
                if s % p as u32 != 0 {
                    *c = true;
                    left -= 1;
                }
            }
        }
        chosen.push(form);
    }
    (chosen, 0)
}

/// Minimum-dimension form space whose zero set avoids every bad point:
/// scan dimensions upward through the canonical subspace enumeration of
/// the d-dimensional form space.
fn exact_cover(p: u8, d: usize, bad: &[Vec<u8>], cap: u64) -> Result<Option<Vec<Vec<u8>>>> {
    if bad.is_empty() {
        return Ok(Some(Vec::new()));
    }
    if d == 0 {
        return Ok(None);
    }
    let space = FieldParams::new(p, d)?;
    for k in 1..=d {
        for s in enumerate_subspaces(space, k, cap)? {
            let rows: Vec<Vec<u8>> = s.rows().iter().map(|&r| space.digits(r)).collect();
            let all_excluded = bad.iter().all(|t| {
                rows.iter().any(|row| {
                    let s: u32 = t.iter().zip(row).map(|(&a, &b)| a as u32 * b as u32).sum();
                    s % p as u32 != 0
                })
            });
            if all_excluded {
                return Ok(Some(rows));
            }
        }
    }
    Ok(None)
}

/// Search for a bilinear variety inside `s`, minimizing max(r1, r2, r3)
/// with ties broken by r1+r2+r3 and then the canonical bases. Every
/// candidate is verified by containment before it can win, so a returned
/// variety is always genuine.
pub fn greedy_variety_search(s: &ProductSet, budget: &SearchBudget) -> Result<SearchReport> {
    let params1 = s.params1();
    let params2 = s.params2();
    if !s.contains(0, 0) {
        return Ok(SearchReport {
            variety: None,
            pairs_scanned: 0,
            best_uncovered: None,
        });
    }
    let mut pairs_scanned = 0u64;
    let mut best_uncovered: Option<u64> = None;
    let mut best: Option<(usize, usize, BilinearVariety)> = None;
    let max_c = budget.max_total_codim.min(params1.n() + params2.n());
    for c in 0..=max_c {
        for r1 in 0..=c.min(params1.n()) {
            let r2 = c - r1;
            if r2 > params2.n() {
                continue;
            }
            if let Some((m, _, _)) = &best {
                if r1.max(r2) > *m {
                    continue;
                }
            }
            let side1 = enumerate_subspaces(params1, params1.n() - r1, budget.subspace_cap)?;
            let side2 = enumerate_subspaces(params2, params2.n() - r2, budget.subspace_cap)?;
            for w1 in &side1 {
                for w2 in &side2 {
                    pairs_scanned += 1;
                    let (d1, d2) = (w1.dim(), w2.dim());
                    let d = d1 * d2;
                    // Coordinate functionals of the uncovered points; a
                    // zero side coordinate makes the point unexcludable.
                    let mut bad = Vec::new();
                    let mut hopeless = 0u64;
                    for x in w1.enumerate() {
                        let c1 = w1.coords_of(x).unwrap();
                        for y in w2.enumerate() {
                            if s.contains(x, y) {
                                continue;
                            }
                            if x == 0 || y == 0 {
                                hopeless += 1;
                                continue;
                            }
                            let c2 = w2.coords_of(y).unwrap();
                            let mut t = vec![0u8; d];
                            for (k, &a) in c1.iter().enumerate() {
                                for (l, &b) in c2.iter().enumerate() {
                                    t[k * d2 + l] = ((a as u32 * b as u32) % params1.p() as u32) as u8;
                                }
                            }
                            bad.push(t);
                        }
                    }
                    if hopeless > 0 {
                        let u = hopeless + bad.len() as u64;
                        best_uncovered = Some(best_uncovered.map_or(u, |b| b.min(u)));
                        continue;
                    }
                    if (params1.p() as u128).pow(d as u32) > budget.form_cap as u128 {
                        let u = bad.len() as u64;
                        best_uncovered = Some(best_uncovered.map_or(u, |b| b.min(u)));
                        continue;
                    }
                    let forms = if budget.exact_cover && d <= 9 {
                        match exact_cover(params1.p(), d, &bad, budget.subspace_cap)? {
                            Some(f) => f,
                            None => {
                                let u = bad.len() as u64;
                                best_uncovered = Some(best_uncovered.map_or(u, |b| b.min(u)));
                                continue;
                            }
                        }
                    } else {
                        let (chosen, left) = greedy_cover(params1.p(), d, &bad);
                        if left > 0 {
                            best_uncovered =
                                Some(best_uncovered.map_or(left as u64, |b| b.min(left as u64)));
                            continue;
                        }
                        chosen
                    };
                    let mats = forms
                        .iter()
                        .map(|f| decode_form(params1.p(), d1, d2, f))
                        .collect();
                    let v = BilinearVariety::new(w1.clone(), w2.clone(), mats)?;
                    if !contains(s, &v)?.holds() {
                        return Err(Error::internal(
                            "cover succeeded but the variety escapes the set",
                        ));
                    }
                    let key = (v.complexity(), v.r1() + v.r2() + v.r3());
                    let better = match &best {
                        None => true,
                        Some((m, sum, bv)) => {
                            key < (*m, *sum)
                                || (key == (*m, *sum)
                                    && (v.w1.rows(), v.w2.rows()) < (bv.w1.rows(), bv.w2.rows()))
                        }
                    };
                    if better {
                        best = Some((key.0, key.1, v));
                    }
                }
            }
        }
    }
    Ok(SearchReport {
        variety: best.map(|(_, _, v)| v),
        pairs_scanned,
        best_uncovered,
    })
}

/// Bilinear map into m x m matrices, stored through its values on the
/// standard basis pairs.
#[derive(Clone, PartialEq, Eq, Debug)]
pub struct BilinearMapTensor {
    params1: FieldParams,
    params2: FieldParams,
    m: usize,
    components: Vec<Vec<MatFp>>,
}

impl BilinearMapTensor {
    pub fn new(
        params1: FieldParams,
        params2: FieldParams,
        m: usize,
        components: Vec<Vec<MatFp>>,
    ) -> Result<BilinearMapTensor> {
        if params1.p() != params2.p() {
            return Err(Error::AmbientMismatch("tensor sides use different primes".into()));
        }
        if m == 0 || m > 8 {
            return Err(Error::precondition("output matrix size must be in 1..=8"));
        }
        if components.len() != params1.n()
            || components.iter().any(|row| row.len() != params2.n())
        {
            return Err(Error::precondition(
                "component grid must be n1 x n2 to match the ambients",
            ));
        }
        for row in &components {
            for c in row {
                if c.shape() != (m, m) {
                    return Err(Error::precondition("components must be m x m"));
                }
            }
        }
        Ok(BilinearMapTensor {
            params1,
            params2,
            m,
            components,
        })
    }

    pub fn zero(params1: FieldParams, params2: FieldParams, m: usize) -> Result<BilinearMapTensor> {
        let comp =
            vec![vec![MatFp::zero(params1.p(), m, m); params2.n()]; params1.n()];
        BilinearMapTensor::new(params1, params2, m, comp)
    }

    /// psi(f, g) = f . g as a 1x1 matrix.
    pub fn dot_product(params: FieldParams) -> Result<BilinearMapTensor> {
        let comp = (0..params.n())
            .map(|i| {
                (0..params.n())
                    .map(|j| {
                        let mut m = MatFp::zero(params.p(), 1, 1);
                        if i == j {
                            m.set(0, 0, 1);
                        }
                        m
                    })
                    .collect()
            })
            .collect();
        BilinearMapTensor::new(params, params, 1, comp)
    }

    /// psi(f, g) = f g^T, an n x n outer product (rank <= 1 everywhere).
    pub fn outer_product(params: FieldParams) -> Result<BilinearMapTensor> {
        let n = params.n();
        let comp = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut m = MatFp::zero(params.p(), n, n);
                        m.set(i, j, 1);
                        m
                    })
                    .collect()
            })
            .collect();
        BilinearMapTensor::new(params, params, n, comp)
    }

    pub fn params1(&self) -> FieldParams {
        self.params1
    }

    pub fn params2(&self) -> FieldParams {
        self.params2
    }

    pub fn output_size(&self) -> usize {
        self.m
    }

    pub fn eval(&self, f: u32, g: u32) -> MatFp {
        let p = self.params1.p();
        let mut out = MatFp::zero(p, self.m, self.m);
        for i in 0..self.params1.n() {
            let fi = self.params1.digit(f, i);
            if fi == 0 {
                continue;
            }
            for j in 0..self.params2.n() {
                let gj = self.params2.digit(g, j);
                if gj == 0 {
                    continue;
                }
                let scale = (fi as u32 * gj as u32) % p as u32;
                let c = &self.components[i][j];
                for a in 0..self.m {
                    for b in 0..self.m {
                        let v = (out.get(a, b) as u32 + scale * c.get(a, b) as u32) % p as u32;
                        out.set(a, b, v as u8);
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct RankReport {
    pub epsilon: usize,
    pub word: Vec<PhiOp>,
    /// Density of the low-rank level set P_epsilon.
    pub delta: f64,
    /// Cardinalities along the pipeline, input first.
    pub stage_cards: Vec<u64>,
    /// 4^{|word|} epsilon.
    pub rank_bound: usize,
    pub max_image_rank: usize,
    /// rank_histogram[k] counts image points whose value has rank k.
    pub rank_histogram: Vec<u64>,
    pub variety: Option<BilinearVariety>,
}

/// Level-set pipeline: P_eps = {(f,g): rank psi(f,g) <= eps}, pushed
/// through the operator word. Every image point must satisfy the
/// subadditive bound rank <= 4^{|word|} eps; a breach is an
/// implementation bug, not a data condition.
pub fn rank_corollary_check(
    psi: &BilinearMapTensor,
    epsilon: usize,
    word: &[PhiOp],
    budget: &SearchBudget,
) -> Result<RankReport> {
    let params1 = psi.params1;
    let params2 = psi.params2;
    let mut level = ProductSet::empty(params1, params2)?;
    for f in params1.points() {
        for g in params2.points() {
            if psi.eval(f, g).rank() <= epsilon {
                level.insert(f, g);
            }
        }
    }
    let delta = level.density();
    let pipeline = phi_pipeline(&level, word)?;
    let rank_bound = 4usize.pow(word.len() as u32) * epsilon;
    let mut rank_histogram = vec![0u64; psi.m + 1];
    let mut max_image_rank = 0;
    for (f, g) in pipeline.result.iter_pairs() {
        let r = psi.eval(f, g).rank();
        if r > rank_bound {
            return Err(Error::internal(format!(
                "image point ({f}, {g}) has rank {r} > {rank_bound}"
            )));
        }
        max_image_rank = max_image_rank.max(r);
        rank_histogram[r] += 1;
    }
    let search = greedy_variety_search(&pipeline.result, budget)?;
    Ok(RankReport {
        epsilon,
        word: word.to_vec(),
        delta,
        stage_cards: pipeline.stage_cards,
        rank_bound,
        max_image_rank,
        rank_histogram,
        variety: search.variety,
    })
}

pub fn variety_to_json(v: &BilinearVariety) -> serde_json::Value {
    let params1 = v.w1.params();
    let params2 = v.w2.params();
    json!({
        "p": params1.p(),
        "n1": params1.n(),
        "n2": params2.n(),
        "w1_basis": v.w1.rows().iter().map(|&r| digit_string(params1, r)).collect::<Vec<_>>(),
        "w2_basis": v.w2.rows().iter().map(|&r| digit_string(params2, r)).collect::<Vec<_>>(),
        "forms": v.forms.iter().map(|q| {
            (0..q.shape().0).map(|i| q.row(i).to_vec()).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
        "r1": v.r1(),
        "r2": v.r2(),
        "r3": v.r3(),
    })
}

fn field_from_json(v: &serde_json::Value, nkey: &str) -> Result<FieldParams> {
    let p = v["p"]
        .as_u64()
        .ok_or_else(|| Error::precondition("missing p"))?;
    let n = v[nkey]
        .as_u64()
        .ok_or_else(|| Error::precondition(format!("missing {nkey}")))?;
    FieldParams::new(p as u8, n as usize)
}

pub fn variety_from_json(v: &serde_json::Value) -> Result<BilinearVariety> {
    let params1 = field_from_json(v, "n1")?;
    let params2 = field_from_json(v, "n2")?;
    let basis = |key: &str, params: FieldParams| -> Result<Subspace> {
        let rows = v[key]
            .as_array()
            .ok_or_else(|| Error::precondition(format!("missing {key}")))?;
        let mut pts = Vec::new();
        for r in rows {
            let s = r
                .as_str()
                .ok_or_else(|| Error::precondition("basis rows must be digit strings"))?;
            pts.push(parse_digit_string(params, s)?);
        }
        Ok(Subspace::from_spanning(params, &pts))
    };
    let w1 = basis("w1_basis", params1)?;
    let w2 = basis("w2_basis", params2)?;
    let mut forms = Vec::new();
    for fv in v["forms"]
        .as_array()
        .ok_or_else(|| Error::precondition("missing forms"))?
    {
        let rows = fv
            .as_array()
            .ok_or_else(|| Error::precondition("forms must be arrays of rows"))?;
        let mut mrows = Vec::new();
        for row in rows {
            let mut out = Vec::new();
            for cell in row
                .as_array()
                .ok_or_else(|| Error::precondition("form rows must be arrays"))?
            {
                let x = cell
                    .as_u64()
                    .ok_or_else(|| Error::precondition("form entries must be residues"))?;
                if x >= params1.p() as u64 {
                    return Err(Error::precondition("form entry out of residue range"));
                }
                out.push(x as u8);
            }
            mrows.push(out);
        }
        if mrows.len() != w1.dim() || mrows.iter().any(|r| r.len() != w2.dim()) {
            return Err(Error::precondition("form shape does not match bases"));
        }
        forms.push(MatFp::from_rows(params1.p(), w2.dim(), &mrows));
    }
    BilinearVariety::new(w1, w2, forms)
}

pub fn tensor_to_json(t: &BilinearMapTensor) -> serde_json::Value {
    json!({
        "p": t.params1.p(),
        "n1": t.params1.n(),
        "n2": t.params2.n(),
        "m": t.m,
        "components": t.components.iter().map(|row| {
            row.iter().map(|c| {
                (0..t.m).map(|i| c.row(i).to_vec()).collect::<Vec<_>>()
            }).collect::<Vec<_>>()
        }).collect::<Vec<_>>(),
    })
}

pub fn tensor_from_json(v: &serde_json::Value) -> Result<BilinearMapTensor> {
    let params1 = field_from_json(v, "n1")?;
    let params2 = field_from_json(v, "n2")?;
    let m = v["m"]
        .as_u64()
        .ok_or_else(|| Error::precondition("missing m"))? as usize;
    let grid = v["components"]
        .as_array()
        .ok_or_else(|| Error::precondition("missing components"))?;
    let mut components = Vec::new();
    for row in grid {
        let row = row
            .as_array()
            .ok_or_else(|| Error::precondition("components must be a grid"))?;
        let mut out_row = Vec::new();
        for c in row {
            let c = c
                .as_array()
                .ok_or_else(|| Error::precondition("each component must be a matrix"))?;
            let mut mrows = Vec::new();
            for r in c {
                let r = r
                    .as_array()
                    .ok_or_else(|| Error::precondition("matrix rows must be arrays"))?;
                let mut out = Vec::new();
                for cell in r {
                    let x = cell
                        .as_u64()
                        .ok_or_else(|| Error::precondition("entries must be residues"))?;
                    if x >= params1.p() as u64 {
                        return Err(Error::precondition("entry out of residue range"));
                    }
                    out.push(x as u8);
                }
                mrows.push(out);
            }
            if mrows.len() != m || mrows.iter().any(|r| r.len() != m) {
                return Err(Error::precondition("component is not m x m"));
            }
            out_row.push(MatFp::from_rows(params1.p(), m, &mrows));
        }
        components.push(out_row);
    }
    BilinearMapTensor::new(params1, params2, m, components)
}

pub fn rank_report_to_json(r: &RankReport) -> serde_json::Value {
    json!({
        "epsilon": r.epsilon,
        "word": r.word.iter().map(|op| op.to_string()).collect::<String>(),
        "delta": r.delta,
        "stage_cards": r.stage_cards,
        "rank_bound": r.rank_bound,
        "max_image_rank": r.max_image_rank,
        "rank_histogram": r.rank_histogram,
        "variety": r.variety.as_ref().map(variety_to_json),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::setcalc::{phi_h, phi_v};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn f2(n: usize) -> FieldParams {
        FieldParams::new(2, n).unwrap()
    }

    fn dot_form(params: FieldParams) -> MatFp {
        MatFp::identity(params.p(), params.n())
    }

    fn dot_zero_set(params: FieldParams) -> ProductSet {
        let mut s = ProductSet::empty(params, params).unwrap();
        for x in params.points() {
            for y in params.points() {
                if params.dot(x, y) == 0 {
                    s.insert(x, y);
                }
            }
        }
        s
    }

    #[test]
    fn members_examples() {
        let params = f2(2);
        let full = Subspace::full(params);
        let v = BilinearVariety::product(full.clone(), full.clone()).unwrap();
        assert_eq!(
            variety_members(&v, 1000).unwrap(),
            ProductSet::full(params, params).unwrap()
        );

        // x . y on one-dimensional sides: only (1,1) is excluded.
        let p1 = f2(1);
        let v = BilinearVariety::new(
            Subspace::full(p1),
            Subspace::full(p1),
            vec![dot_form(p1)],
        )
        .unwrap();
        let m = variety_members(&v, 1000).unwrap();
        let got: Vec<(u32, u32)> = m.iter_pairs().collect();
        assert_eq!(got, vec![(0, 0), (0, 1), (1, 0)]);

        // Forms spanning all of Mat_2: only pairs with a zero side remain.
        let mut all_forms = Vec::new();
        for i in 0..2 {
            for j in 0..2 {
                let mut q = MatFp::zero(2, 2, 2);
                q.set(i, j, 1);
                all_forms.push(q);
            }
        }
        let v = BilinearVariety::new(full.clone(), full.clone(), all_forms).unwrap();
        assert_eq!(v.r3(), 4);
        let m = variety_members(&v, 1000).unwrap();
        for x in params.points() {
            for y in params.points() {
                assert_eq!(m.contains(x, y), x == 0 || y == 0);
            }
        }

        assert!(matches!(
            variety_members(&v, 10),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn dependent_forms_are_pruned() {
        let params = f2(2);
        let full = Subspace::full(params);
        let q = dot_form(params);
        let v = BilinearVariety::new(full.clone(), full.clone(), vec![q.clone(), q.clone()])
            .unwrap();
        assert_eq!(v.r3(), 1);
        let zero = MatFp::zero(2, 2, 2);
        let v = BilinearVariety::new(full.clone(), full, vec![zero]).unwrap();
        assert_eq!(v.r3(), 0);
    }

    #[test]
    fn contains_examples() {
        let params = f2(2);
        let full = Subspace::full(params);
        let v = BilinearVariety::new(full.clone(), full.clone(), vec![dot_form(params)]).unwrap();

        let everything = ProductSet::full(params, params).unwrap();
        assert!(contains(&everything, &v).unwrap().holds());

        let empty = ProductSet::empty(params, params).unwrap();
        assert_eq!(
            contains(&empty, &v).unwrap(),
            Containment::Witness { x: 0, y: 0 }
        );

        assert!(contains(&dot_zero_set(params), &v).unwrap().holds());

        let other = ProductSet::empty(params, f2(3)).unwrap();
        assert!(matches!(
            contains(&other, &v),
            Err(Error::AmbientMismatch(_))
        ));
    }

    #[test]
    fn ambient_form_agrees_with_coordinates() {
        let params = f2(3);
        let w1 = Subspace::from_spanning(params, &[0b110, 0b001]);
        let w2 = Subspace::from_spanning(params, &[0b101]);
        let mut q = MatFp::zero(2, 2, 1);
        q.set(0, 0, 1);
        q.set(1, 0, 1);
        let v = BilinearVariety::new(w1.clone(), w2.clone(), vec![q]).unwrap();
        let amb = v.ambient_form(0);
        for x in w1.enumerate() {
            for y in w2.enumerate() {
                let mut acc = 0u32;
                for i in 0..3 {
                    for j in 0..3 {
                        acc += params.digit(x, i) as u32
                            * amb.get(i, j) as u32
                            * params.digit(y, j) as u32;
                    }
                }
                let coord_holds = v.holds(x, y);
                assert_eq!(acc % 2 == 0, coord_holds);
            }
        }
    }

    #[test]
    fn search_examples() {
        let params = f2(2);
        let budget = SearchBudget::default();

        let report =
            greedy_variety_search(&ProductSet::full(params, params).unwrap(), &budget).unwrap();
        let v = report.variety.unwrap();
        assert_eq!((v.r1(), v.r2(), v.r3()), (0, 0, 0));

        // Dot-product zero set: full sides, one form.
        let report = greedy_variety_search(&dot_zero_set(params), &budget).unwrap();
        let v = report.variety.unwrap();
        assert_eq!((v.r1(), v.r2(), v.r3()), (0, 0, 1));
        assert_eq!(
            variety_members(&v, 1000).unwrap(),
            dot_zero_set(params)
        );

        // Product of proper subspaces: recovered with no forms.
        let w1 = Subspace::from_spanning(params, &[0b01]);
        let w2 = Subspace::from_spanning(params, &[0b11]);
        let s = ProductSet::product(
            &crate::setcalc::DenseSet::from_subspace(&w1),
            &crate::setcalc::DenseSet::from_subspace(&w2),
        )
        .unwrap();
        let report = greedy_variety_search(&s, &budget).unwrap();
        let v = report.variety.unwrap();
        assert_eq!(v.w1(), &w1);
        assert_eq!(v.w2(), &w2);
        assert_eq!(v.r3(), 0);

        // Missing origin: sentinel none.
        let mut s = ProductSet::full(params, params).unwrap();
        s = {
            let mut t = ProductSet::empty(params, params).unwrap();
            for (x, y) in s.iter_pairs() {
                if (x, y) != (0, 0) {
                    t.insert(x, y);
                }
            }
            t
        };
        let report = greedy_variety_search(&s, &budget).unwrap();
        assert!(report.variety.is_none());
        assert_eq!(report.pairs_scanned, 0);
    }

    #[test]
    fn exact_cover_agrees_with_greedy_on_small_sets() {
        let params = f2(2);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let exact = SearchBudget {
            exact_cover: true,
            ..SearchBudget::default()
        };
        for _ in 0..40 {
            let mut s = ProductSet::empty(params, params).unwrap();
            s.insert(0, 0);
            for x in params.points() {
                for y in params.points() {
                    if rng.gen_bool(0.7) {
                        s.insert(x, y);
                    }
                }
            }
            let g = greedy_variety_search(&s, &SearchBudget::default()).unwrap();
            let e = greedy_variety_search(&s, &exact).unwrap();
            match (&g.variety, &e.variety) {
                (Some(gv), Some(ev)) => {
                    // Exact cover can only improve the objective.
                    assert!(ev.complexity() <= gv.complexity());
                    assert!(contains(&s, gv).unwrap().holds());
                    assert!(contains(&s, ev).unwrap().holds());
                }
                (None, None) => {}
                (gv, ev) => panic!("searches disagree on feasibility: {gv:?} vs {ev:?}"),
            }
        }
    }

    fn random_variety(rng: &mut ChaCha8Rng, params: FieldParams) -> BilinearVariety {
        let dim1 = rng.gen_range(1..=params.n());
        let dim2 = rng.gen_range(1..=params.n());
        let w1 = loop {
            let pts: Vec<u32> = (0..dim1).map(|_| rng.gen_range(0..params.size())).collect();
            let s = Subspace::from_spanning(params, &pts);
            if s.dim() == dim1 {
                break s;
            }
        };
        let w2 = loop {
            let pts: Vec<u32> = (0..dim2).map(|_| rng.gen_range(0..params.size())).collect();
            let s = Subspace::from_spanning(params, &pts);
            if s.dim() == dim2 {
                break s;
            }
        };
        let nforms = rng.gen_range(0..=2);
        let forms = (0..nforms)
            .map(|_| {
                let mut q = MatFp::zero(params.p(), dim1, dim2);
                for i in 0..dim1 {
                    for j in 0..dim2 {
                        q.set(i, j, rng.gen_range(0..params.p()));
                    }
                }
                q
            })
            .collect();
        BilinearVariety::new(w1, w2, forms).unwrap()
    }

    #[test]
    fn varieties_are_phi_fixed_points() {
        let params = f2(3);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let v = random_variety(&mut rng, params);
            let m = variety_members(&v, 100_000).unwrap();
            assert_eq!(phi_v(&m), m);
            assert_eq!(phi_h(&m), m);
        }
    }

    #[test]
    fn fibers_are_linear() {
        let params = f2(3);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..30 {
            let v = random_variety(&mut rng, params);
            let m = variety_members(&v, 100_000).unwrap();
            for x in v.w1().enumerate() {
                let fiber = m.fiber_at_x(x);
                let members: Vec<u32> = fiber.iter().collect();
                let span = Subspace::from_spanning(params, &members);
                assert_eq!(fiber.card(), span.size());
            }
        }
    }

    #[test]
    fn search_is_self_certifying_on_random_sets() {
        let params = f2(2);
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..60 {
            let mut s = ProductSet::empty(params, params).unwrap();
            for x in params.points() {
                for y in params.points() {
                    if rng.gen_bool(0.5) {
                        s.insert(x, y);
                    }
                }
            }
            let report = greedy_variety_search(&s, &SearchBudget::default()).unwrap();
            if let Some(v) = report.variety {
                assert!(contains(&s, &v).unwrap().holds());
            }
        }
    }

    #[test]
    fn rank_check_zero_map() {
        let params = f2(2);
        let psi = BilinearMapTensor::zero(params, params, 1).unwrap();
        let word = [PhiOp::H, PhiOp::V, PhiOp::H];
        let report = rank_corollary_check(&psi, 0, &word, &SearchBudget::default()).unwrap();
        assert_eq!(report.delta, 1.0);
        assert_eq!(report.stage_cards, vec![16, 16, 16, 16]);
        assert_eq!(report.max_image_rank, 0);
        assert_eq!(report.rank_bound, 0);
        let v = report.variety.unwrap();
        assert_eq!((v.r1(), v.r2(), v.r3()), (0, 0, 0));
    }

    #[test]
    fn rank_check_dot_product() {
        let params = f2(2);
        let psi = BilinearMapTensor::dot_product(params).unwrap();
        let word = [PhiOp::H, PhiOp::V, PhiOp::H];
        let report = rank_corollary_check(&psi, 0, &word, &SearchBudget::default()).unwrap();
        // P_0 = {f . g = 0} of density 10/16; every image point keeps
        // rank 0, i.e. stays inside the level set.
        assert_eq!(report.delta, 10.0 / 16.0);
        assert_eq!(report.max_image_rank, 0);
        for (i, &c) in report.rank_histogram.iter().enumerate() {
            if i > 0 {
                assert_eq!(c, 0);
            }
        }
        let v = report.variety.unwrap();
        assert!(contains(&dot_zero_set(params), &v).unwrap().holds());
    }

    #[test]
    fn rank_check_outer_product() {
        let params = f2(2);
        let psi = BilinearMapTensor::outer_product(params).unwrap();
        for f in params.points() {
            for g in params.points() {
                assert!(psi.eval(f, g).rank() <= 1);
            }
        }
        let word = [PhiOp::H, PhiOp::V, PhiOp::H];
        let report = rank_corollary_check(&psi, 1, &word, &SearchBudget::default()).unwrap();
        assert_eq!(report.delta, 1.0);
        assert_eq!(report.max_image_rank, 1);
    }

    #[test]
    fn variety_json_round_trip() {
        let params = f2(3);
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        for _ in 0..20 {
            let v = random_variety(&mut rng, params);
            let text = serde_json::to_string(&variety_to_json(&v)).unwrap();
            let back = variety_from_json(&serde_json::from_str(&text).unwrap()).unwrap();
            assert_eq!(back, v);
        }
    }

    #[test]
    fn tensor_json_round_trip() {
        let params = f2(2);
        let psi = BilinearMapTensor::dot_product(params).unwrap();
        let text = serde_json::to_string(&tensor_to_json(&psi)).unwrap();
        let back = tensor_from_json(&serde_json::from_str(&text).unwrap()).unwrap();
        assert_eq!(back, psi);
        assert_eq!(back.eval(0b11, 0b01), psi.eval(0b11, 0b01));

        let bad = serde_json::json!({"p": 2, "n1": 2, "n2": 2, "m": 1, "components": []});
        assert!(tensor_from_json(&bad).is_err());
    }
}
