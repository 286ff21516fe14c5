//! Acceptance battery. One test per criterion; each prints a single
//! "[acceptance] criterion NN <name>: PASS|FAIL" line and then asserts.
//! Tolerances, budgets, and time limits are pinned here, in code.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use bblab_core::bivariety::{
    rank_corollary_check, variety_members, BilinearMapTensor, BilinearVariety, SearchBudget,
};
use bblab_core::fourier::{convolve, dft, inverse_dft, u2_fourth_power, DensityFn};
use bblab_core::scheme::{run_driver, DriverConfig};
use bblab_core::setcalc::{
    parse_phi_word, phi_h, phi_v, two_a_minus_two_a, write_set_text, DenseSet, ProductSet, SetFile,
};
use bblab_core::structure::{
    density_increment, max_subspace_in, partition4, regularize, spectral_bogolyubov_with_stats,
    wholespace_test, ThresholdPolicy,
};
use bblab_core::{
    enumerate_subspaces, AffineSubspace, FieldParams, MatFp, Subspace, DEFAULT_ENUMERATION_CAP,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-9;

fn verdict(num: usize, name: &str, r: Result<(), String>) {
    match &r {
        Ok(()) => println!("[acceptance] criterion {num:02} {name}: PASS"),
        Err(e) => println!("[acceptance] criterion {num:02} {name}: FAIL ({e})"),
    }
    if let Err(e) = r {
        panic!("criterion {num:02} {name}: {e}");
    }
}

fn full_ambient(params: FieldParams) -> AffineSubspace {
    AffineSubspace::from_subspace(Subspace::full(params))
}

fn random_set(rng: &mut ChaCha8Rng, params: FieldParams, density: f64) -> DenseSet {
    let mut out = DenseSet::empty(params);
    for v in 0..params.size() {
        if rng.gen_bool(density) {
            out.insert(v);
        }
    }
    out
}

fn time_guard(start: Instant, limit: Duration, what: &str) -> Result<(), String> {
    let took = start.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("{what} took {took:?}, limit {limit:?}"))
    }
}

#[test]
fn criterion_01_fourier_identity_suite() {
    let start = Instant::now();
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        let shapes: [(u8, usize); 3] = [(2, 10), (3, 6), (5, 4)];
        for i in 0..500 {
            let (p, n_max) = shapes[i % 3];
            let n = rng.gen_range(1..=n_max);
            let params = FieldParams::new(p, n).map_err(|e| e.to_string())?;
            let size = params.size() as usize;
            // Every third run uses an indicator so the p = 2 integer path
            // gets exercised on its exact domain.
            let (f, g) = if i % 3 == 0 {
                let a = random_set(&mut rng, params, 0.4);
                let b = random_set(&mut rng, params, 0.4);
                (DensityFn::from_indicator(&a), DensityFn::from_indicator(&b))
            } else {
                let mut vals = || -> Vec<f64> {
                    (0..size).map(|_| rng.gen_range(-1.0..1.0)).collect()
                };
                (
                    DensityFn::from_values(params, vals()).map_err(|e| e.to_string())?,
                    DensityFn::from_values(params, vals()).map_err(|e| e.to_string())?,
                )
            };
            let fh = dft(&f);
            let gh = dft(&g);

            // Parseval: E_x |f|^2 = sum_s |fhat(s)|^2.
            let lhs: f64 = f.values().iter().map(|v| v * v).sum::<f64>() / size as f64;
            let rhs: f64 = fh.coeffs().iter().map(|c| c.norm_sqr()).sum();
            if (lhs - rhs).abs() > TOL {
                return Err(format!("Parseval off by {} on run {i}", (lhs - rhs).abs()));
            }

            // Inversion round-trip.
            let back = inverse_dft(&fh);
            let worst = f
                .values()
                .iter()
                .zip(back.values())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if worst > TOL {
                return Err(format!("inversion off by {worst} on run {i}"));
            }
            if p == 2 && i % 3 == 0 {
                if !fh.is_exact() {
                    return Err(format!("integer path not taken on run {i}"));
                }
                if f.values() != back.values() {
                    return Err(format!("integer path round-trip inexact on run {i}"));
                }
            }

            // Convolution theorem: (f * g)^ = fhat ghat.
            let conv = convolve(&f, &g).map_err(|e| e.to_string())?;
            let ch = dft(&conv);
            for s in 0..params.size() {
                let want = fh.coeff(s) * gh.coeff(s);
                if (ch.coeff(s) - want).norm() > TOL {
                    return Err(format!("convolution theorem off at s={s} on run {i}"));
                }
            }
        }
        time_guard(start, Duration::from_secs(30), "500 identity checks")
    };
    verdict(1, "fourier identity suite", run());
}

#[test]
fn criterion_02_u2_matches_the_literal_quadruple_count() {
    let start = Instant::now();
    let run = || -> Result<(), String> {
        let params = FieldParams::new(2, 4).map_err(|e| e.to_string())?;
        let ambient = full_ambient(params);
        for mask in 0u32..(1 << 16) {
            let mut a = DenseSet::empty(params);
            for v in 0..16 {
                if mask >> v & 1 == 1 {
                    a.insert(v);
                }
            }
            let quad = u2_fourth_power(&a, &ambient).map_err(|e| e.to_string())?;
            let members: Vec<u32> = a.iter().collect();
            let mut literal: u128 = 0;
            for &x1 in &members {
                for &x2 in &members {
                    for &x3 in &members {
                        for &x4 in &members {
                            if x1 ^ x2 == x3 ^ x4 {
                                literal += 1;
                            }
                        }
                    }
                }
            }
            if quad.count != literal {
                return Err(format!(
                    "mask {mask:#06x}: transform says {}, loop says {literal}",
                    quad.count
                ));
            }
        }
        time_guard(start, Duration::from_secs(300), "65536 exact counts")
    };
    verdict(2, "U^2 exactness on all subsets of F_2^4", run());
}

#[test]
fn criterion_03_wholespace_test_is_sound() {
    let run = || -> Result<(), String> {
        let params3 = FieldParams::new(2, 3).map_err(|e| e.to_string())?;
        let ambient3 = full_ambient(params3);
        let full3 = DenseSet::full(params3);
        for mask in 0u32..(1 << 8) {
            let mut a = DenseSet::empty(params3);
            for v in 0..8 {
                if mask >> v & 1 == 1 {
                    a.insert(v);
                }
            }
            if wholespace_test(&a, &ambient3).map_err(|e| e.to_string())?
                && two_a_minus_two_a(&a) != full3
            {
                return Err(format!("mask {mask:#04x} passes the test but does not fill"));
            }
        }
        let params4 = FieldParams::new(2, 4).map_err(|e| e.to_string())?;
        let ambient4 = full_ambient(params4);
        let full4 = DenseSet::full(params4);
        let mut rng = ChaCha8Rng::seed_from_u64(103);
        for i in 0..10_000 {
            let density = rng.gen_range(0.05..0.95);
            let a = random_set(&mut rng, params4, density);
            if wholespace_test(&a, &ambient4).map_err(|e| e.to_string())?
                && two_a_minus_two_a(&a) != full4
            {
                return Err(format!("seeded run {i} passes the test but does not fill"));
            }
        }
        Ok(())
    };
    verdict(3, "difference set fills whenever the spectral test passes", run());
}

#[test]
fn criterion_04_density_increment_gains_half_the_coefficient() {
    let run = || -> Result<(), String> {
        let shapes: [(u8, usize); 3] = [(2, 4), (2, 5), (3, 3)];
        let mut rng = ChaCha8Rng::seed_from_u64(104);
        let mut done = 0usize;
        while done < 1000 {
            let (p, n) = shapes[done % 3];
            let params = FieldParams::new(p, n).map_err(|e| e.to_string())?;
            // Plant a direction: dense on one side of a random functional.
            let s0 = rng.gen_range(1..params.size());
            let mut a = DenseSet::empty(params);
            for v in 0..params.size() {
                let q = if params.dot(s0, v) == 0 { 0.75 } else { 0.25 };
                if rng.gen_bool(q) {
                    a.insert(v);
                }
            }
            if a.is_empty() || a.card() == params.size() as u64 {
                continue;
            }
            let ambient = full_ambient(params);
            let spec = dft(&DensityFn::from_indicator(&a));
            let Some((_, beta)) = spec.max_nontrivial() else { continue };
            if beta < 1e-9 {
                continue;
            }
            let alpha = a.density();
            let inc = density_increment(&a, &ambient, beta).map_err(|e| e.to_string())?;
            if inc.new_density + 1e-12 < alpha + beta / 2.0 {
                return Err(format!(
                    "run {done}: got {} < {} + {}/2",
                    inc.new_density, alpha, beta
                ));
            }
            // Recount on the returned coset with no shared code.
            let inside = inc.hyperplane.enumerate().filter(|&v| a.contains(v)).count();
            let recount = inside as f64 / inc.hyperplane.size() as f64;
            if (recount - inc.new_density).abs() > 1e-12 {
                return Err(format!("run {done}: reported density does not recount"));
            }
            done += 1;
        }
        Ok(())
    };
    verdict(4, "density increment of beta/2 on planted sets", run());
}

#[test]
fn criterion_05_regularity_certificates_survive_a_full_scan() {
    let run = || -> Result<(), String> {
        let mut rng = ChaCha8Rng::seed_from_u64(105);
        for run_ix in 0..200 {
            let t = 1 + run_ix % 2;
            let params = if run_ix % 4 < 2 {
                FieldParams::new(2, 4)
            } else {
                FieldParams::new(3, 3)
            }
            .map_err(|e| e.to_string())?;
            let ambient = full_ambient(params);
            let density = rng.gen_range(0.3..0.6);
            let a = random_set(&mut rng, params, density);
            if a.is_empty() {
                continue;
            }
            let epsilon = 0.1;
            let cert = regularize(&a, &ambient, t, epsilon, DEFAULT_ENUMERATION_CAP)
                .map_err(|e| e.to_string())?;
            let inside = cert.h.enumerate().filter(|&v| a.contains(v)).count() as f64;
            let alpha = inside / cert.h.size() as f64;
            if (alpha - cert.restricted_density).abs() > 1e-12 {
                return Err(format!("run {run_ix}: certificate density does not recount"));
            }
            let inner = FieldParams::new(params.p(), cert.h.dim()).map_err(|e| e.to_string())?;
            let floor = alpha * (1.0 - (params.p() as f64).powi(t as i32) * epsilon);
            for j in 1..=t.min(cert.h.dim()) {
                for s in enumerate_subspaces(inner, cert.h.dim() - j, DEFAULT_ENUMERATION_CAP)
                    .map_err(|e| e.to_string())?
                {
                    for rep in s.coset_reps() {
                        let piece = cert.h.lift_inner(&AffineSubspace::new(s.clone(), rep));
                        let count = piece.enumerate().filter(|&v| a.contains(v)).count() as f64;
                        let density = count / piece.size() as f64;
                        if density > alpha * (1.0 + epsilon) + 1e-12 {
                            return Err(format!(
                                "run {run_ix}: codim-{j} violator of density {density}"
                            ));
                        }
                        if density + TOL < floor {
                            return Err(format!(
                                "run {run_ix}: codim-{j} piece below the floor"
                            ));
                        }
                    }
                }
            }
        }
        Ok(())
    };
    verdict(5, "no violators survive a regularity certificate", run());
}

#[test]
fn criterion_06_partition4_meets_the_retention_floor() {
    let run = || -> Result<(), String> {
        let params = FieldParams::new(2, 6).map_err(|e| e.to_string())?;
        let universe = DenseSet::full(params);
        let sizes = [1usize, 64, 256, 4096];
        let mut rng = ChaCha8Rng::seed_from_u64(106);
        for i in 0..100 {
            let want = sizes[i % 4];
            let mut tuples = Vec::with_capacity(want);
            while tuples.len() < want {
                let mut t = [0u32; 4];
                for slot in &mut t {
                    *slot = rng.gen_range(0..params.size());
                }
                if t[0] != t[1] && t[0] != t[2] && t[0] != t[3]
                    && t[1] != t[2] && t[1] != t[3] && t[2] != t[3]
                {
                    tuples.push(t);
                }
            }
            let part = partition4(&universe, &tuples, rng.gen(), 10_000)
                .map_err(|e| format!("instance {i}: {e}"))?;
            let floor = want.div_ceil(256) as u64;
            if part.retained < floor {
                return Err(format!("instance {i}: retained {} < {floor}", part.retained));
            }
            if part.attempts > 10_000 {
                return Err(format!("instance {i}: attempts {}", part.attempts));
            }
            // Disjoint and covering.
            let mut seen = DenseSet::empty(params);
            let mut total = 0;
            for p in &part.parts {
                total += p.card();
                seen = seen.union(p);
            }
            if total != params.size() as u64 || seen != universe {
                return Err(format!("instance {i}: parts are not a partition"));
            }
            // Recount the retained quadruples.
            let recount = tuples
                .iter()
                .filter(|t| (0..4).all(|k| part.parts[k].contains(t[k])))
                .count() as u64;
            if recount != part.retained {
                return Err(format!("instance {i}: retained does not recount"));
            }
        }
        Ok(())
    };
    verdict(6, "4-coloring retains its quadruple floor", run());
}

#[test]
fn criterion_07_spectral_subspaces_verify_and_track_the_oracle() {
    let run = || -> Result<(), String> {
        let check = |a: &DenseSet, label: &str| -> Result<(), String> {
            let (w, t_used) = spectral_bogolyubov_with_stats(a, ThresholdPolicy::Auto)
                .map_err(|e| format!("{label}: {e}"))?;
            let diff = two_a_minus_two_a(a);
            for v in w.enumerate() {
                if !diff.contains(v) {
                    return Err(format!("{label}: member {v} escapes the difference set"));
                }
            }
            let best = max_subspace_in(&diff, DEFAULT_ENUMERATION_CAP)
                .map_err(|e| e.to_string())?
                .ok_or_else(|| format!("{label}: oracle found nothing"))?;
            let n = a.params().n();
            let over = (n - w.dim()) as f64 - (n - best.dim()) as f64;
            let bound = a.density() / (t_used * t_used);
            if over > bound + TOL {
                return Err(format!(
                    "{label}: codim overshoot {over} exceeds alpha/t^2 = {bound}"
                ));
            }
            Ok(())
        };
        let params3 = FieldParams::new(2, 3).map_err(|e| e.to_string())?;
        for mask in 0u32..(1 << 7) {
            let mut a = DenseSet::empty(params3);
            a.insert(0);
            for v in 1..8 {
                if mask >> (v - 1) & 1 == 1 {
                    a.insert(v);
                }
            }
            check(&a, &format!("mask {mask:#04x}"))?;
        }
        let params5 = FieldParams::new(2, 5).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(107);
        let mut done = 0;
        while done < 1000 {
            let density = rng.gen_range(0.25..0.8);
            let a = random_set(&mut rng, params5, density);
            if a.density() < 0.25 {
                continue;
            }
            check(&a, &format!("seeded run {done}"))?;
            done += 1;
        }
        Ok(())
    };
    verdict(7, "certified subspaces sit inside 2A-2A near the optimum", run());
}

#[test]
fn criterion_08_operators_act_fiberwise_and_fix_varieties() {
    let run = || -> Result<(), String> {
        let fiber_check = |p: &ProductSet, label: &str| -> Result<(), String> {
            let v_img = phi_v(p);
            for x in 0..p.params1().size() {
                if v_img.fiber_at_x(x) != two_a_minus_two_a(&p.fiber_at_x(x)) {
                    return Err(format!("{label}: row {x} mismatch"));
                }
            }
            let h_img = phi_h(p);
            for y in 0..p.params2().size() {
                if h_img.fiber_at_y(y) != two_a_minus_two_a(&p.fiber_at_y(y)) {
                    return Err(format!("{label}: column {y} mismatch"));
                }
            }
            Ok(())
        };
        let p2 = FieldParams::new(2, 2).map_err(|e| e.to_string())?;
        for mask in 0u32..(1 << 16) {
            let mut p = ProductSet::empty(p2, p2).map_err(|e| e.to_string())?;
            for i in 0..16 {
                if mask >> i & 1 == 1 {
                    p.insert(i / 4, i % 4);
                }
            }
            fiber_check(&p, &format!("mask {mask:#06x}"))?;
        }
        let p3 = FieldParams::new(2, 3).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(108);
        for i in 0..1000 {
            let mut p = ProductSet::empty(p3, p3).map_err(|e| e.to_string())?;
            let density = rng.gen_range(0.1..0.9);
            for x in 0..8 {
                for y in 0..8 {
                    if rng.gen_bool(density) {
                        p.insert(x, y);
                    }
                }
            }
            fiber_check(&p, &format!("seeded run {i}"))?;
        }
        for i in 0..100 {
            let v = random_variety(&mut rng, p3);
            let members =
                variety_members(&v, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
            if phi_v(&members) != members || phi_h(&members) != members {
                return Err(format!("variety {i} moved under an operator"));
            }
        }
        Ok(())
    };
    verdict(8, "fiberwise operator identity and variety fixed points", run());
}

fn random_variety(rng: &mut ChaCha8Rng, params: FieldParams) -> BilinearVariety {
    let side = |rng: &mut ChaCha8Rng| loop {
        let rows: Vec<u32> = (0..rng.gen_range(1..=params.n()))
            .map(|_| rng.gen_range(0..params.size()))
            .collect();
        let s = Subspace::from_spanning(params, &rows);
        if s.dim() >= 1 {
            return s;
        }
    };
    let w1 = side(rng);
    let w2 = side(rng);
    let forms = (0..rng.gen_range(0..=2))
        .map(|_| {
            let mut q = MatFp::zero(params.p(), w1.dim(), w2.dim());
            for i in 0..w1.dim() {
                for j in 0..w2.dim() {
                    q.set(i, j, rng.gen_range(0..params.p()));
                }
            }
            q
        })
        .collect();
    BilinearVariety::new(w1, w2, forms).unwrap()
}

#[test]
fn criterion_09_driver_contains_noisy_varieties() {
    let start = Instant::now();
    let run = || -> Result<(), String> {
        let params = FieldParams::new(2, 3).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(109);
        for i in 0..100 {
            let v = random_variety(&mut rng, params);
            let mut p =
                variety_members(&v, DEFAULT_ENUMERATION_CAP).map_err(|e| e.to_string())?;
            let noise_target = (p.card() / 10) as usize;
            let mut added = 0;
            for _ in 0..1000 {
                if added >= noise_target {
                    break;
                }
                let (x, y) = (rng.gen_range(0..8), rng.gen_range(0..8));
                if !p.contains(x, y) {
                    p.insert(x, y);
                    added += 1;
                }
            }
            let delta = p.density() * 0.999;
            let cfg = DriverConfig {
                seed: 0x5EED_0000 + i,
                ..DriverConfig::default()
            };
            let report = run_driver(&p, delta, &cfg)
                .map_err(|e| format!("seed {i} ({} pairs): {e}", p.card()))?;
            let counted = report.steps.iter().filter(|s| s.counted).count();
            if counted > 2 * report.r_initial {
                return Err(format!(
                    "seed {i}: {counted} counted steps for initial bound {}",
                    report.r_initial
                ));
            }
            if !report.containment {
                return Err(format!("seed {i}: containment failed"));
            }
        }
        time_guard(start, Duration::from_secs(600), "100 driver runs")
    };
    verdict(9, "driver terminates in 2r steps with verified containment", run());
}

#[test]
fn criterion_10_rank_level_sets_respect_the_word_bound() {
    let run = || -> Result<(), String> {
        let params = FieldParams::new(2, 3).map_err(|e| e.to_string())?;
        let word = parse_phi_word("HVH").map_err(|e| e.to_string())?;
        let budget = SearchBudget::default();
        let check = |t: &BilinearMapTensor, eps: usize, label: &str| -> Result<(), String> {
            let report =
                rank_corollary_check(t, eps, &word, &budget).map_err(|e| format!("{label}: {e}"))?;
            if report.max_image_rank > report.rank_bound {
                return Err(format!("{label}: breach escaped the checker"));
            }
            Ok(())
        };
        check(&BilinearMapTensor::zero(params, params, 1).map_err(|e| e.to_string())?, 0, "zero")?;
        check(&BilinearMapTensor::dot_product(params).map_err(|e| e.to_string())?, 0, "dot")?;
        check(&BilinearMapTensor::outer_product(params).map_err(|e| e.to_string())?, 1, "outer")?;
        let mut rng = ChaCha8Rng::seed_from_u64(110);
        for i in 0..50 {
            let m = rng.gen_range(1..=3);
            let comp = (0..3)
                .map(|_| {
                    (0..3)
                        .map(|_| {
                            let mut c = MatFp::zero(2, m, m);
                            for r in 0..m {
                                for s in 0..m {
                                    c.set(r, s, rng.gen_range(0..2));
                                }
                            }
                            c
                        })
                        .collect()
                })
                .collect();
            let t = BilinearMapTensor::new(params, params, m, comp).map_err(|e| e.to_string())?;
            let eps = rng.gen_range(0..=m);
            check(&t, eps, &format!("seeded tensor {i}"))?;
        }
        Ok(())
    };
    verdict(10, "image ranks stay under 4^|word| epsilon", run());
}

#[test]
fn criterion_11_performance_floor() {
    let run = || -> Result<(), String> {
        let params = FieldParams::new(2, 16).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(111);
        let values: Vec<f64> = (0..params.size()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = DensityFn::from_values(params, values).map_err(|e| e.to_string())?;
        let best = (0..3)
            .map(|_| {
                let t0 = Instant::now();
                let spec = dft(&f);
                let took = t0.elapsed();
                std::hint::black_box(spec.coeff(1));
                took
            })
            .min()
            .unwrap();
        if best > Duration::from_millis(100) {
            return Err(format!("dft over 65536 points took {best:?}"));
        }

        let p8 = FieldParams::new(2, 8).map_err(|e| e.to_string())?;
        let mut prod = ProductSet::empty(p8, p8).map_err(|e| e.to_string())?;
        for x in 0..256 {
            for y in 0..256 {
                if rng.gen_bool(0.3) {
                    prod.insert(x, y);
                }
            }
        }
        let t0 = Instant::now();
        let img = phi_v(&prod);
        let took = t0.elapsed();
        std::hint::black_box(img.card());
        if took > Duration::from_secs(2) {
            return Err(format!("row operator over 256x256 took {took:?}"));
        }
        Ok(())
    };
    verdict(11, "transform and operator performance floor", run());
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_bblab")
}

fn run_cli(args: &[&str]) -> Output {
    Command::new(bin()).args(args).output().unwrap()
}

/// Report bytes with the wall-clock fields removed: the top-level
/// timestamp and, for driver traces, the timing table.
fn normalized(out: &Output) -> Result<String, String> {
    let mut v: serde_json::Value = serde_json::from_slice(&out.stdout).map_err(|e| {
        format!(
            "unparseable report: {e}; stderr: {}",
            String::from_utf8_lossy(&out.stderr)
        )
    })?;
    let obj = v.as_object_mut().ok_or("report is not an object")?;
    obj.remove("timestamp_ms");
    obj.remove("timing_ms");
    Ok(serde_json::to_string(&v).unwrap())
}

#[test]
fn criterion_12_reports_are_deterministic() {
    let run = || -> Result<(), String> {
        let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
        let write = |name: &str, text: &str| -> PathBuf {
            let p = dir.path().join(name);
            std::fs::write(&p, text).unwrap();
            p
        };
        let fix = write("fix.set", "p 2 n1 2\nlist\n00\n01\n10\n");
        let params = FieldParams::new(2, 3).unwrap();
        let mut kern = ProductSet::empty(params, params).unwrap();
        for x in 0..8 {
            for y in 0..8 {
                if params.dot(x, y) == 0 {
                    kern.insert(x, y);
                }
            }
        }
        let kern_file = write("kern.set", &write_set_text(&SetFile::Product(kern)));
        let dot = write(
            "dot.tensor",
            &serde_json::to_string(&serde_json::json!({
                "p": 2, "n1": 2, "n2": 2, "m": 1,
                "components": [[[[1]], [[0]]], [[[0]], [[1]]]],
            }))
            .unwrap(),
        );
        let fix_s = fix.to_str().unwrap();
        let kern_s = kern_file.to_str().unwrap();
        let dot_s = dot.to_str().unwrap();
        let csv_a = dir.path().join("a.csv");
        let csv_b = dir.path().join("b.csv");
        let img_a = dir.path().join("a.out");
        let img_b = dir.path().join("b.out");
        let invocations: Vec<(Vec<&str>, Vec<&str>, &Path, &Path)> = vec![
            (
                vec!["fourier-stats", fix_s, "--seed", "5", "--spectrum", csv_a.to_str().unwrap()],
                vec!["fourier-stats", fix_s, "--seed", "5", "--spectrum", csv_b.to_str().unwrap()],
                &csv_a,
                &csv_b,
            ),
            (
                vec!["phi", kern_s, "--word", "HVH", "--seed", "5", "--image", img_a.to_str().unwrap()],
                vec!["phi", kern_s, "--word", "HVH", "--seed", "5", "--image", img_b.to_str().unwrap()],
                &img_a,
                &img_b,
            ),
        ];
        for (args_a, args_b, file_a, file_b) in &invocations {
            let a = run_cli(args_a);
            let b = run_cli(args_b);
            if !a.status.success() || !b.status.success() {
                return Err(format!("{args_a:?} did not exit cleanly"));
            }
            // Aux files must match bit for bit even across output paths.
            let fa = std::fs::read(file_a).map_err(|e| e.to_string())?;
            let fb = std::fs::read(file_b).map_err(|e| e.to_string())?;
            if fa != fb {
                return Err(format!("{args_a:?}: auxiliary outputs differ"));
            }
            // Reports only differ in the spectrum/image path they echo, so
            // compare them with those fields dropped.
            let mut ja: serde_json::Value = serde_json::from_slice(&a.stdout).unwrap();
            let mut jb: serde_json::Value = serde_json::from_slice(&b.stdout).unwrap();
            for j in [&mut ja, &mut jb] {
                let o = j.as_object_mut().unwrap();
                o.remove("timestamp_ms");
                o.remove("spectrum_csv");
                o.remove("image_file");
            }
            if ja != jb {
                return Err(format!("{args_a:?}: reports differ"));
            }
        }
        // Subcommands whose full reports must be byte-identical.
        let repeats: Vec<Vec<&str>> = vec![
            vec!["fourier-stats", fix_s, "--seed", "5"],
            vec!["bogolyubov", fix_s, "--exact", "--seed", "5"],
            vec!["phi", kern_s, "--word", "HVH", "--seed", "5"],
            vec!["scheme-trace", kern_s, "--delta", "0.5", "--seed", "5"],
            vec!["rank-corollary", dot_s, "--epsilon", "0", "--seed", "5"],
        ];
        for args in &repeats {
            let a = run_cli(args);
            let b = run_cli(args);
            if !a.status.success() || !b.status.success() {
                return Err(format!(
                    "{args:?} did not exit cleanly: {}",
                    String::from_utf8_lossy(&a.stderr)
                ));
            }
            if normalized(&a)? != normalized(&b)? {
                return Err(format!("{args:?}: reports differ between runs"));
            }
        }
        Ok(())
    };
    verdict(12, "byte-identical reports modulo the timestamp", run());
}
