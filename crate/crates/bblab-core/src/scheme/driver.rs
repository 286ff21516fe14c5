//! End-to-end driver: from a dense product set to a bilinear variety
//! certified to sit inside a short difference-operator pipeline of the
//! input. Preprocessing certifies the column family, the loop alternates
//! pseudorandomizing the window with the dichotomy, and one of two
//! endgames converts the final state into the variety, whose containment
//! is then re-checked against an independently computed pipeline.

use std::collections::BTreeMap;
use std::time::Instant;

use serde_json::json;

use crate::bivariety::{self, BilinearVariety, Containment};
use crate::error::{Error, Result};
use crate::gfspace::{digit_string, AffineSubspace, FieldParams, MatFp, Subspace};
use crate::setcalc::{parse_phi_word, phi_h, phi_pipeline, two_a_minus_two_a, DenseSet, ProductSet};
use crate::structure::{self, certificate_to_json, RegularityCertificate};

use super::step::{
    self, Dichotomy, LineariseConfig, LineariseOutcome, TerminationWitness,
};
use super::{bogolyubov_fibers, check_product_containment, dense_fibers, linear_value, rebase_map, SchemeState};

#[derive(Clone, Debug)]
pub struct DriverConfig {
    /// Base seed; each randomized step consumes one increment.
    pub seed: u64,
    pub cap: u64,
    /// Admit windows that are only this pseudorandom, with a warning.
    pub relaxed_epsilon: Option<f64>,
    /// Rank floor for the linearisation pre-check.
    pub rank_threshold: Option<usize>,
    /// Extra codimension allowed when accepting a termination window.
    pub termination_codim_slack: usize,
    pub max_partition_retries: u32,
    /// Check the preprocessing containment on every cell instead of a
    /// stride sample.
    pub full_phi_check: bool,
}

impl Default for DriverConfig {
    fn default() -> Self {
        DriverConfig {
            seed: 0xBB1A8,
            cap: crate::DEFAULT_ENUMERATION_CAP,
            relaxed_epsilon: None,
            rank_threshold: None,
            termination_codim_slack: 1,
            max_partition_retries: 10_000,
            full_phi_check: false,
        }
    }
}

/// One recorded driver event, counted or not.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub index: usize,
    pub action: String,
    /// Whether the step consumed reduction budget.
    pub counted: bool,
    pub r: usize,
    pub s: usize,
    pub columns: u64,
    pub window_codim: usize,
    pub v_dim: usize,
    pub detail: serde_json::Value,
}

#[derive(Clone, Debug)]
pub struct DriverReport {
    pub delta: f64,
    pub r_initial: usize,
    pub r_final: usize,
    pub s_final: usize,
    pub steps: Vec<StepRecord>,
    /// "map-saturated" (every budget unit carries a map) or "good-points"
    /// (enough x already have filled difference sets).
    pub endgame: String,
    /// Difference-operator word re-applied to the input for the final
    /// check, leftmost operator applied last.
    pub word: String,
    pub variety: BilinearVariety,
    pub containment: bool,
    pub witness: Option<(u32, u32)>,
    /// Input cardinality, then one entry per pipeline stage.
    pub stage_cards: Vec<u64>,
    pub warnings: Vec<String>,
    pub endgame_detail: serde_json::Value,
    pub timing_ms: BTreeMap<String, u128>,
}

fn record(
    steps: &mut Vec<StepRecord>,
    action: &str,
    counted: bool,
    state: &SchemeState,
    detail: serde_json::Value,
) {
    steps.push(StepRecord {
        index: steps.len(),
        action: action.into(),
        counted,
        r: state.r(),
        s: state.s(),
        columns: state.a().card(),
        window_codim: state.params2().n() - state.w().dim(),
        v_dim: state.v().dim(),
        detail,
    });
}

/// Run the full reduction on a dense product set. The containment verdict
/// at the end is computed from the raw input and the returned word alone,
/// independently of the loop's own bookkeeping.
pub fn run_driver(p: &ProductSet, delta: f64, cfg: &DriverConfig) -> Result<DriverReport> {
    let mut timing: BTreeMap<String, u128> = BTreeMap::new();
    let mut warnings: Vec<String> = Vec::new();
    let started = Instant::now();

    let df = dense_fibers(p, delta)?;
    let fibered = bogolyubov_fibers(&df, cfg.cap)?;
    let img = phi_h(p);
    check_product_containment(&fibered, &img, cfg.full_phi_check)?;
    let mut state = SchemeState::initial(fibered)?;
    timing.insert("preprocess".into(), started.elapsed().as_millis());

    let loop_started = Instant::now();
    let r0 = state.r();
    let prime = state.params1().p();
    let mut steps: Vec<StepRecord> = Vec::new();
    let mut counted = 0usize;
    let mut seed_counter = cfg.seed;
    let lin_cfg = LineariseConfig {
        rank_threshold: cfg.rank_threshold,
        max_partition_retries: cfg.max_partition_retries,
        map_cap: cfg.cap,
        ..LineariseConfig::default()
    };
    let mut accepted: Option<(TerminationWitness, RegularityCertificate)> = None;
    let mut iterations = 0usize;

    while state.s() < state.r() {
        iterations += 1;
        if iterations > 2 * r0 + state.params2().n() + 8 {
            return Err(Error::internal("reduction loop failed to terminate"));
        }

        let cert = structure::regularize_pseudorandom(state.a(), state.w(), state.epsilon())?;
        if cert.h != *state.w() {
            state = state.restrict_window(&cert.h)?;
            record(
                &mut steps,
                "pseudorandomize",
                false,
                &state,
                json!({
                    "window_dim": cert.h.dim(),
                    "restricted_density": cert.restricted_density,
                    "descent_steps": cert.descent_trace.len(),
                }),
            );
            continue;
        }

        match step::dichotomy(&state, cfg.relaxed_epsilon)? {
            Dichotomy::Termination(tw) => {
                warnings.extend(tw.warnings.iter().cloned());
                // Accept only if the good points concentrate on a window of
                // codimension within budget; otherwise keep reducing.
                let gamma = tw.x3.card() as f64 / state.v().size() as f64;
                let t = state.s() + 1;
                let eps_g = gamma.powf(1.5) * (prime as f64).powi(-(t as i32)) / 10.0;
                let ambient = AffineSubspace::from_subspace(state.v().clone());
                let gcert = structure::regularize(&tw.x3, &ambient, t, eps_g, cfg.cap)?;
                let codim = state.v().dim() - gcert.h.dim();
                let allowed = state.r() + cfg.termination_codim_slack;
                let guard = json!({
                    "good_count": tw.good_count,
                    "threshold": tw.threshold,
                    "window_codim": codim,
                    "allowed_codim": allowed,
                });
                if codim <= allowed {
                    record(&mut steps, "terminate", false, &state, guard);
                    accepted = Some((tw, gcert));
                    break;
                }
                warnings.push(format!(
                    "good points concentrate on codimension {codim} (> {allowed}); \
                     deferring the termination to keep reducing"
                ));
                record(&mut steps, "termination-deferred", false, &state, guard.clone());
                let q = step::quadruple_structure(&state);
                let fallback = if q.structured.is_empty() {
                    Some("no structured quadruples to reduce with".to_string())
                } else {
                    match step::linearise(&state, &q, seed_counter, &lin_cfg) {
                        Ok(outcome) => {
                            seed_counter = seed_counter.wrapping_add(1);
                            state = apply_counted(&state, &outcome, &mut steps, &mut counted, r0)?;
                            None
                        }
                        Err(Error::DeskScale(msg)) => Some(msg),
                        Err(e) => return Err(e),
                    }
                };
                if let Some(msg) = fallback {
                    warnings.push(format!(
                        "deferred termination could not be reduced further ({msg}); \
                         accepting the wide window"
                    ));
                    record(&mut steps, "terminate", false, &state, guard);
                    accepted = Some((tw, gcert));
                    break;
                }
            }
            Dichotomy::Quadruples(q) => {
                warnings.extend(q.warnings.iter().cloned());
                if q.structured.is_empty() {
                    return Err(Error::DeskScale(
                        "no structured quadruples at this scale; the dichotomy cannot advance"
                            .into(),
                    ));
                }
                let outcome = step::linearise(&state, &q, seed_counter, &lin_cfg)?;
                seed_counter = seed_counter.wrapping_add(1);
                state = apply_counted(&state, &outcome, &mut steps, &mut counted, r0)?;
            }
        }
    }
    timing.insert("loop".into(), loop_started.elapsed().as_millis());

    let endgame_started = Instant::now();
    let (endgame, word, variety, endgame_detail) = match accepted {
        Some((tw, gcert)) => {
            let (variety, detail) = endgame_good_points(&state, &tw, &gcert)?;
            ("good-points", "HVH", variety, detail)
        }
        None => {
            let (variety, detail) = endgame_map_saturated(&state, cfg.cap)?;
            ("map-saturated", "VH", variety, detail)
        }
    };
    timing.insert("endgame".into(), endgame_started.elapsed().as_millis());

    let check_started = Instant::now();
    let pipeline = phi_pipeline(p, &parse_phi_word(word)?)?;
    let verdict = bivariety::contains(&pipeline.result, &variety)?;
    let witness = match verdict {
        Containment::Contained => None,
        Containment::Witness { x, y } => Some((x, y)),
    };
    timing.insert("containment".into(), check_started.elapsed().as_millis());

    Ok(DriverReport {
        delta,
        r_initial: r0,
        r_final: state.r(),
        s_final: state.s(),
        steps,
        endgame: endgame.into(),
        word: word.into(),
        variety,
        containment: witness.is_none(),
        witness,
        stage_cards: pipeline.stage_cards,
        warnings,
        endgame_detail,
        timing_ms: timing,
    })
}

/// Apply a linearisation outcome, record it, and enforce the budget
/// monovariant: r never grows, r - s never grows, one of them drops.
fn apply_counted(
    state: &SchemeState,
    outcome: &LineariseOutcome,
    steps: &mut Vec<StepRecord>,
    counted: &mut usize,
    r0: usize,
) -> Result<SchemeState> {
    let (old_r, old_gap) = (state.r(), state.r() - state.s());
    let params1 = state.params1();
    let (next, action, detail) = match outcome {
        LineariseOutcome::Reduction(red) => {
            let detail = json!({
                "functional": red.functional.map(|f| digit_string(params1, f)),
                "relation": red.relation,
                "combination": red.combination,
                "columns_kept": red.s_set.card(),
            });
            (red.apply(state)?, red.kind.name(), detail)
        }
        LineariseOutcome::NewMap(nm) => {
            let detail = json!({
                "relation": nm.relation,
                "retained_quadruples": nm.retained_quadruples,
                "agreement": nm.agreement,
                "columns_kept": nm.s_set.card(),
            });
            (nm.apply(state)?, "new-map", detail)
        }
    };
    let (new_r, new_gap) = (next.r(), next.r() - next.s());
    if new_r > old_r || new_gap > old_gap || (new_r == old_r && new_gap == old_gap) {
        return Err(Error::internal(format!(
            "step '{action}' broke the budget monovariant: \
             (r, r-s) went from ({old_r}, {old_gap}) to ({new_r}, {new_gap})"
        )));
    }
    *counted += 1;
    if *counted > 2 * r0 {
        return Err(Error::internal(format!(
            "{counted} counted steps exceed the 2 x {r0} budget"
        )));
    }
    record(steps, action, true, &next, detail);
    Ok(next)
}

/// Endgame with every budget unit carrying a map (s = r). Regularizing the
/// columns inside the window makes each constrained column set have a full
/// difference set; translating the x side against the map constants at the
/// window base makes every constrained set nonempty. Word: the column
/// operator, then the row operator.
fn endgame_map_saturated(
    state: &SchemeState,
    cap: u64,
) -> Result<(BilinearVariety, serde_json::Value)> {
    let params1 = state.params1();
    let prime = params1.p();
    let r = state.r();
    let gamma = state.a().card() as f64 / state.w().size() as f64;
    let eta = gamma.powf(1.5) * (prime as f64).powi(-(r as i32 + 1)) / 10.0;
    let cert = structure::regularize(state.a(), state.w(), r + 1, eta, cap)?;
    let h = &cert.h;

    let a_h = state.a().intersect(&DenseSet::from_affine(h));
    let a_prime = a_h.to_coords(h)?;
    let ch = FieldParams::new(prime, h.dim())?;
    let maps_h: Vec<_> = state
        .xis()
        .iter()
        .map(|xi| rebase_map(xi, state.w(), h))
        .collect::<Vec<_>>();
    let consts: Vec<u32> = maps_h.iter().map(|m| m.eval(0)).collect();
    let w1_fix = state
        .v()
        .intersect(&Subspace::from_spanning(params1, &consts).orthogonal_complement());

    for x in w1_fix.enumerate() {
        let mut a_x = DenseSet::empty(ch);
        let mut hom = DenseSet::empty(ch);
        for c in 0..ch.size() {
            if maps_h.iter().all(|m| params1.dot(x, linear_value(m, c)) == 0) {
                hom.insert(c);
            }
            if a_prime.contains(c) && maps_h.iter().all(|m| params1.dot(x, m.eval(c)) == 0) {
                a_x.insert(c);
            }
        }
        if two_a_minus_two_a(&a_x) != hom {
            return Err(Error::internal(format!(
                "constrained columns at x = {} fail to fill their direction",
                digit_string(params1, x)
            )));
        }
    }

    let d1 = w1_fix.dim();
    let d2 = h.dim();
    let mut forms = Vec::with_capacity(maps_h.len());
    for m in &maps_h {
        let mut q = MatFp::zero(prime, d1, d2);
        for l in 0..d2 {
            let mut unit = vec![0u8; d2];
            unit[l] = 1;
            let val = linear_value(m, ch.from_digits(&unit)?);
            for (k, &row) in w1_fix.rows().iter().enumerate() {
                q.set(k, l, params1.dot(row, val));
            }
        }
        forms.push(q);
    }
    let variety = BilinearVariety::new(w1_fix, h.direction().clone(), forms)?;
    let detail = json!({
        "certificate": certificate_to_json(&cert),
        "restricted_columns": a_prime.card(),
        "x_side_dim": d1,
        "window_dim": d2,
    });
    Ok((variety, detail))
}

/// Endgame from an accepted termination: the good points, regularized on
/// their own window, have difference sets filling the annihilator of each
/// surviving column direction. Word: column operator, row operator, column
/// operator again.
fn endgame_good_points(
    state: &SchemeState,
    tw: &TerminationWitness,
    gcert: &RegularityCertificate,
) -> Result<(BilinearVariety, serde_json::Value)> {
    let params1 = state.params1();
    let prime = params1.p();
    let s = state.s();
    let wdir = state.w().direction();
    let dw = wdir.dim();
    let cw = FieldParams::new(prime, dw)?;
    let hx = &gcert.h;
    let tx = hx.base();
    let chx = FieldParams::new(prime, hx.dim())?;

    // Column directions whose map values annihilate the window base; on
    // these the affine and linear constraints coincide.
    let w2_fix = if s == 0 {
        wdir.clone()
    } else {
        let mut g = MatFp::zero(prime, s, dw);
        for k in 0..dw {
            let mut unit = vec![0u8; dw];
            unit[k] = 1;
            let e_k = cw.from_digits(&unit)?;
            for (j, xi) in state.xis().iter().enumerate() {
                g.set(j, k, params1.dot(tx, linear_value(xi, e_k)));
            }
        }
        let ns = g.nullspace();
        let (rows, _) = ns.shape();
        let members: Vec<u32> = (0..rows)
            .map(|i| wdir.member_from_coords(ns.row(i)))
            .collect();
        Subspace::from_spanning(state.params2(), &members)
    };

    let x_inside = tw.x3.intersect(&DenseSet::from_affine(hx));
    if x_inside.is_empty() {
        return Err(Error::internal("good points missing from their own window"));
    }
    let x_prime = x_inside.to_coords(hx)?;

    for y in w2_fix.enumerate() {
        let cy = cw.from_digits(&wdir.coords_of(y).expect("member of the direction"))?;
        let vals: Vec<u32> = state.xis().iter().map(|xi| linear_value(xi, cy)).collect();
        let mut hom = DenseSet::empty(chx);
        for c in 0..chx.size() {
            let member = hx.direction().member_from_coords(&chx.digits(c));
            if vals.iter().all(|&val| params1.dot(member, val) == 0) {
                hom.insert(c);
            }
        }
        let x_y = x_prime.intersect(&hom);
        if two_a_minus_two_a(&x_y) != hom {
            return Err(Error::internal(format!(
                "good points at column direction {} fail to fill the annihilator",
                digit_string(state.params2(), y)
            )));
        }
    }

    let d1 = hx.dim();
    let d2 = w2_fix.dim();
    let mut forms = Vec::with_capacity(s);
    for xi in state.xis() {
        let mut q = MatFp::zero(prime, d1, d2);
        for (l, &yrow) in w2_fix.rows().iter().enumerate() {
            let cy = cw.from_digits(&wdir.coords_of(yrow).expect("row of a sub-direction"))?;
            let val = linear_value(xi, cy);
            for (k, &xrow) in hx.direction().rows().iter().enumerate() {
                q.set(k, l, params1.dot(xrow, val));
            }
        }
        forms.push(q);
    }
    let variety = BilinearVariety::new(hx.direction().clone(), w2_fix, forms)?;
    let detail = json!({
        "certificate": certificate_to_json(gcert),
        "good_count": tw.good_count,
        "good_in_window": x_prime.card(),
        "x_side_dim": d1,
        "y_side_dim": d2,
        "translate": digit_string(params1, tx),
    });
    Ok((variety, detail))
}

pub fn report_to_json(report: &DriverReport) -> serde_json::Value {
    json!({
        "delta": report.delta,
        "r_initial": report.r_initial,
        "r_final": report.r_final,
        "s_final": report.s_final,
        "steps": report.steps.iter().map(|s| json!({
            "index": s.index,
            "action": s.action,
            "counted": s.counted,
            "r": s.r,
            "s": s.s,
            "columns": s.columns,
            "window_codim": s.window_codim,
            "v_dim": s.v_dim,
            "detail": s.detail,
        })).collect::<Vec<_>>(),
        "endgame": report.endgame,
        "word": report.word,
        "variety": bivariety::variety_to_json(&report.variety),
        "containment": report.containment,
        "witness": report.witness.map(|(x, y)| json!({"x": x, "y": y})),
        "stage_cards": report.stage_cards,
        "warnings": report.warnings,
        "endgame_detail": report.endgame_detail,
        "timing_ms": report.timing_ms.iter().map(|(k, v)| (k.clone(), json!(v))).collect::<serde_json::Map<_, _>>(),
    })
}
