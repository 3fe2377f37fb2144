//! Acceptance suite: every criterion runs in sequence, prints one PASS/FAIL
//! line with its runtime against the budget, and the process fails if any
//! criterion does.

mod common;

use std::f64::consts::{FRAC_PI_4, FRAC_PI_8, PI, SQRT_2};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::{check_euler, check_gradient, check_homogeneity, check_extension, generic_case, extension_case};
use escape_core::analysis::{prop3_compare, rank_profile, theorem1_forms};
use escape_core::constructions::{
    aligned_rank_one_optimum, circle_dataset, counterexample_params, rank_one_input,
    rank_one_max_speed, rank_one_speed, rank_one_speed_closed_form,
};
use escape_core::dynamics::{
    blow_up_time, escape_time, integrate_gf_t, norm_closed_form, unit_sphere_rate,
};
use escape_core::escape::{
    escape_speed, run_restart, search_optimal_escape, success_fraction, SearchConfig, StepRule,
};
use escape_core::experiments::idx::{encode_images, encode_labels, parse_idx_as, parse_idx_bytes, write_idx, IdxKind};
use escape_core::experiments::mnist::load_subset;
use escape_core::experiments::train::{detect_plateau_drop, train_full_loss, PlateauCriteria, TrainConfig};
use escape_core::{Dataset, Error, Matrix, Vector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Criterion<'a> = (&'static str, u64, Box<dyn FnOnce() -> Outcome + 'a>);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn c1_counterexample_speeds() -> Outcome {
    let data = circle_dataset(8).map_err(|e| e.to_string())?;
    let s2 = escape_speed(&counterexample_params(4).unwrap(), &data).map_err(|e| e.to_string())?;
    let (_, s1) = rank_one_max_speed(&data, 1e-4).map_err(|e| e.to_string())?;
    ensure((s2 - 0.5).abs() <= 1e-12, || format!("s2 = {s2}"))?;
    ensure((s1 - (SQRT_2 - 1.0)).abs() <= 1e-9, || format!("s1 = {s1}"))?;
    ensure(s2 > s1, || "rank two does not beat rank one".into())?;
    Ok(format!("s1 = {s1:.12}, s2 = {s2:.12}"))
}

fn c2_rank_one_curve() -> Outcome {
    let data = circle_dataset(8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        worst = worst.max((rank_one_speed(phi, &data).unwrap() - rank_one_speed_closed_form(phi)).abs());
    }
    ensure(worst <= 1e-12, || format!("closed form vs direct: {worst:e}"))?;

    // Local maxima on a 1e-5 grid, scanned with the closed form and confirmed
    // against the direct curve at each maximum and its neighbours.
    let n = (2.0 * PI / 1e-5) as usize;
    let at = |i: usize| rank_one_speed_closed_form(2.0 * PI * (i % n) as f64 / n as f64);
    let direct = |i: usize| rank_one_speed(2.0 * PI * (i % n) as f64 / n as f64, &data).unwrap();
    let mut maxima = Vec::new();
    let (mut prev, mut cur) = (at(n - 1), at(0));
    for i in 0..n {
        let next = at(i + 1);
        if cur > prev && cur >= next {
            let (dp, dc, dn) = (direct(i + n - 1), direct(i), direct(i + 1));
            ensure(dc >= dp.max(dn) - 1e-12 && (dc - cur).abs() <= 1e-12, || {
                format!("direct curve has no maximum at grid point {i}")
            })?;
            maxima.push(2.0 * PI * i as f64 / n as f64);
        }
        prev = cur;
        cur = next;
    }
    let off = maxima
        .iter()
        .map(|&m| (m - (m / FRAC_PI_4).round() * FRAC_PI_4).abs())
        .fold(0.0, f64::max);
    ensure(maxima.len() == 8, || format!("{} local maxima", maxima.len()))?;
    ensure(off <= 1e-4, || format!("maximum {off:e} from a multiple of π/4"))?;
    let zero = (0..8)
        .map(|k| rank_one_speed(FRAC_PI_8 + k as f64 * FRAC_PI_4, &data).unwrap().abs())
        .fold(0.0, f64::max);
    ensure(zero <= 1e-12, || format!("s(π/8 + kπ/4) = {zero:e}"))?;
    Ok(format!("max |closed - direct| = {worst:.1e}, 8 maxima within {off:.1e} of kπ/4"))
}

fn c3_escape_time() -> Outcome {
    let data = circle_dataset(8).unwrap();
    let rho = counterexample_params(4).unwrap();
    let l = 3usize;
    let dt = 1e-5;
    let mut details = Vec::new();
    // Unit-norm start with G scaled so the unit direction has rate ½, and the
    // escape direction itself on the radius-√3 sphere.
    let scaled = data.with_g(data.g() * (3.0 * 3f64.sqrt())).unwrap();
    for (name, start, d, norm0, rate) in [
        ("unit start", rho.scaled(1.0 / 3f64.sqrt()), &scaled, 1.0, 0.5),
        ("√3 start", rho.clone(), &data, 3f64.sqrt(), unit_sphere_rate(0.5, l)),
    ] {
        let t_star = blow_up_time(norm0, rate, l).unwrap();
        let steps = (0.9 * t_star / dt).floor() as usize;
        let tr = integrate_gf_t(&start, d, dt, steps).map_err(|e| e.to_string())?;
        let worst = tr
            .samples
            .iter()
            .map(|s| (s.param_norm / norm_closed_form(norm0, rate, l, s.time).unwrap() - 1.0).abs())
            .fold(0.0, f64::max);
        ensure(worst <= 1e-3, || format!("{name}: rel. error {worst:e}"))?;
        for r in [2.0, 10.0, 1e3] {
            let r = r * norm0;
            let t = escape_time(norm0, r, l, rate).map_err(|e| e.to_string())?;
            let back = norm_closed_form(norm0, rate, l, t).map_err(|e| e.to_string())?;
            ensure((back - r).abs() <= 1e-10 * r, || format!("{name}: round trip {back} vs {r}"))?;
        }
        details.push(format!("{name}: blow-up {t_star:.6}, rel. error {worst:.1e}"));
    }
    let (t_unit, t_sqrt3) = (blow_up_time(1.0, 0.5, l).unwrap(), blow_up_time(3f64.sqrt(), unit_sphere_rate(0.5, l), l).unwrap());
    ensure((t_unit - 2.0 / 3.0).abs() <= 1e-12, || format!("blow-up {t_unit}"))?;
    ensure((t_sqrt3 - 2.0).abs() <= 1e-12, || format!("blow-up {t_sqrt3}"))?;
    Ok(details.join("; "))
}

fn c4_network_properties() -> Outcome {
    for seed in 0..200u64 {
        let (params, data) = generic_case(seed, 1e-4);
        check_homogeneity(&params, &data)
            .and_then(|_| check_euler(&params, &data))
            .and_then(|_| check_gradient(&params, &data))
            .map_err(|e| format!("seed {seed}: {e}"))?;
    }
    Ok("200 configurations".into())
}

fn c5_depth_extension() -> Outcome {
    for seed in 0..50u64 {
        let (params, data) = extension_case(seed);
        for k in 1..=3 {
            check_extension(&params, &data, k).map_err(|e| format!("seed {seed}: {e}"))?;
        }
    }
    let data = circle_dataset(8).unwrap();
    for k in 1..=3 {
        check_extension(&counterexample_params(4).unwrap(), &data, k).map_err(|e| format!("counterexample: {e}"))?;
    }
    Ok("50 random networks and the counterexample, k = 1..3".into())
}

fn c6_weak_control() -> Outcome {
    let data = circle_dataset(8).unwrap();
    let mut details = Vec::new();
    for (depth, rule, step_size, steps) in [
        (3, StepRule::Fixed, 0.01, 2000),
        (6, StepRule::Fixed, 0.1, 2000),
        (10, StepRule::Backtrack, 10.0, 3000),
    ] {
        let cfg = SearchConfig {
            restarts: 8,
            steps,
            step_size,
            step_rule: rule,
            ..SearchConfig::new(depth, 8)
        };
        let out = search_optimal_escape(&data, &cfg).map_err(|e| format!("depth {depth}: {e}"))?;
        let checked: usize = out.reports.iter().map(|r| r.prop4.checked).sum();
        let violations: usize = out.reports.iter().map(|r| r.prop4.violations).sum();
        ensure(violations == 0, || format!("depth {depth}: {violations} violations"))?;
        ensure(checked > 0, || format!("depth {depth}: no iterate met the preconditions"))?;
        details.push(format!("L={depth}: {checked} iterates checked"));
    }
    Ok(details.join(", "))
}

fn c7_exact_cases(reports: &mut Vec<String>) -> Outcome {
    let u = Vector::from_vec(vec![0.2, 1.0, 0.0, 0.7]);
    let v = Vector::from_vec(vec![1.0, 0.4, 0.9, 0.3]);
    let g = Matrix::from_row_slice(2, 4, &[0.5, -1.0, 0.3, 0.9, -0.2, 0.8, 1.1, -0.6]);
    let x = rank_one_input(&u, &v, None);
    for depth in 2..=6 {
        let rho = aligned_rank_one_optimum(&u, &v, &g, depth, 4).map_err(|e| e.to_string())?;
        let worst = rank_profile(&rho, &x).map_err(|e| e.to_string())?.max_ratio();
        ensure(worst <= 1e-10, || format!("depth {depth}: ratio {worst:e}"))?;
    }

    let mut points = 0;
    let mut finite = 0;
    for xn in [1.0, 3.0, 10.0, 30.0, 100.0] {
        for gn in [0.5, 1.0] {
            for s in [0.1, 0.3] {
                for ell in [10usize, 1_000, 100_000, 10_000_000, 1_000_000_000] {
                    let f = theorem1_forms(xn, gn, s, ell).map_err(|e| e.to_string())?;
                    points += 1;
                    if f.appendix_form.is_finite() {
                        finite += 1;
                        let rel = (f.appendix_form - f.main_text_form).abs() / f.appendix_form;
                        ensure(rel <= 1e-12, || format!("forms differ by {rel:e}"))?;
                    } else {
                        ensure(f.main_text_form.is_infinite(), || "one form vacuous, one not".into())?;
                    }
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for eps in [0.01, 0.05] {
        let noise = common::gaussian(4, 4, &mut rng);
        let noise = &noise * (eps / noise.norm());
        let xp = rank_one_input(&u, &v, Some(&noise));
        let data = Dataset::new(xp.clone(), g.clone()).unwrap();
        let cfg = SearchConfig {
            restarts: 4,
            ..SearchConfig::new(3, 4)
        };
        let best = search_optimal_escape(&data, &cfg).map_err(|e| e.to_string())?.best;
        let report = prop3_compare(&best.direction, &xp, &g, best.speed, eps).map_err(|e| e.to_string())?;
        reports.push(format!(
            "eps = {eps}: searched speed {:.6}, strong-control bound {:.4e}, measured max ratio {:.4e}, within bound: {}",
            best.speed, report.bound, report.max_ratio, report.within_bound
        ));
    }
    Ok(format!("exact optima rank one at depths 2..6; forms agree on {points} grid points ({finite} non-vacuous)"))
}

fn c8_success_fraction() -> Outcome {
    let data = circle_dataset(8).unwrap();
    let widths = [4, 8, 16, 32];
    let template = SearchConfig::new(3, 4);
    let fractions = success_fraction(&data, &widths, 20, SQRT_2 - 1.0, &template).map_err(|e| e.to_string())?;
    let mut best_wide = f64::NEG_INFINITY;
    for w in [16, 32] {
        let cfg = SearchConfig {
            hidden_widths: vec![w; 2],
            ..template.clone()
        };
        for r in 0..20 {
            best_wide = best_wide.max(run_restart(&data, &cfg, r).map_err(|e| e.to_string())?.0.speed);
        }
    }
    let rising = fractions.windows(2).filter(|p| p[1].1 >= p[0].1).count();
    let shown: Vec<String> = fractions.iter().map(|(w, f)| format!("{w}:{f:.2}")).collect();
    ensure(best_wide >= 0.49, || format!("best speed at width ≥ 16 is {best_wide}"))?;
    ensure(rising == 3, || format!("fractions {shown:?} rise on {rising} of 3 pairs"))?;
    Ok(format!("fractions {}, best speed at width ≥ 16: {best_wide:.4}", shown.join(" ")))
}

fn c9_mnist(reports: &mut Vec<String>) -> Outcome {
    let root = concat!(env!("CARGO_MANIFEST_DIR"), "/../../data/mnist-1k");
    let (x, labels) = load_subset(
        format!("{root}/train-images-idx3-ubyte"),
        format!("{root}/train-labels-idx1-ubyte"),
        1000,
    )
    .map_err(|e| e.to_string())?;
    let mut wins = 0;
    for seed in 0..3u64 {
        let cfg = TrainConfig {
            widths: vec![784, 64, 64, 64, 64, 64, 10],
            init_sigma: 1e-3,
            epochs: 6000,
            batch_size: 32,
            lr_numerator: 10.0,
            lr_clamp: None,
            log_every: 320,
            stop_after_drop: Some(0.1),
            seed,
        };
        let log = train_full_loss(&x, &labels, &cfg).map_err(|e| format!("seed {seed}: {e}"))?;
        let l0 = log.entries[0].loss;
        ensure((l0 - 10f64.ln()).abs() <= 1e-3, || format!("seed {seed}: initial loss {l0}"))?;
        let drop = detect_plateau_drop(&log.losses(), &PlateauCriteria::default())
            .ok_or_else(|| format!("seed {seed}: no plateau followed by a drop"))?;
        let e = &log.entries[drop.drop_index];
        let first = e.weight_tail_ratios[..3].iter().sum::<f64>() / 3.0;
        let last = e.weight_tail_ratios[3..].iter().sum::<f64>() / 3.0;
        if last < first {
            wins += 1;
        }
        reports.push(format!(
            "seed {seed}: plateau until epoch {}, drop at epoch {} (loss {:.4}); tail ratio layers 1-3 {first:.3e}, layers 4-6 {last:.3e}",
            log.entries[drop.plateau_end].epoch, e.epoch, e.loss
        ));
    }
    ensure(wins >= 2, || format!("deeper layers lower-rank for {wins} of 3 seeds"))?;
    Ok(format!("deeper layers lower-rank after the drop for {wins} of 3 seeds"))
}

fn c10_idx() -> Outcome {
    #[rustfmt::skip]
    let fixture: [u8; 24] = [
        0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2,
        0, 17, 128, 255,
        1, 2, 254, 3,
    ];
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("images");
    write_idx(&path, &fixture).map_err(|e| e.to_string())?;
    let m = parse_idx_as(&path, IdxKind::Images).map_err(|e| e.to_string())?;
    let expected = Matrix::from_column_slice(4, 2, &[0.0, 17.0, 128.0, 255.0, 1.0, 2.0, 254.0, 3.0]);
    ensure(m == expected, || format!("parsed {m}"))?;
    let pixels: Vec<u8> = m.iter().map(|&v| v as u8).collect();
    ensure(encode_images(2, 2, 2, &pixels).unwrap() == fixture, || "re-encoding differs".into())?;

    let labels = encode_labels(&[3, 1, 4, 1, 5]);
    let (kind, lm) = parse_idx_bytes(&labels).map_err(|e| e.to_string())?;
    ensure(kind == IdxKind::Labels && lm.iter().map(|&v| v as u8).eq([3, 1, 4, 1, 5]), || "labels".into())?;

    let mut wrong = labels.clone();
    wrong[3] = 0x03;
    let lpath = dir.path().join("labels");
    write_idx(&lpath, &wrong).unwrap();
    ensure(matches!(parse_idx_as(&lpath, IdxKind::Labels), Err(Error::Format(_))), || "image magic accepted for labels".into())?;
    let mut bogus = labels;
    bogus[3] = 0x07;
    ensure(matches!(parse_idx_bytes(&bogus), Err(Error::Format(_))), || "unknown magic accepted".into())?;
    Ok("byte-exact round trip, wrong magic rejected".into())
}

fn main() -> ExitCode {
    let mut c7_reports = Vec::new();
    let mut c9_reports = Vec::new();
    let mut all = true;
    let criteria: Vec<Criterion<'_>> = vec![
        ("C1 counterexample speeds", 1, Box::new(c1_counterexample_speeds)),
        ("C2 rank-one speed curve", 1, Box::new(c2_rank_one_curve)),
        ("C3 norm closed form and escape time", 10, Box::new(c3_escape_time)),
        ("C4 homogeneity, Euler identity and gradients", 30, Box::new(c4_network_properties)),
        ("C5 depth extension", 30, Box::new(c5_depth_extension)),
        ("C6 weak control during searches", 120, Box::new(c6_weak_control)),
        ("C7 exact strong-control cases", 60, Box::new(|| c7_exact_cases(&mut c7_reports))),
        ("C8 success fraction by width", 300, Box::new(c8_success_fraction)),
        ("C9 MNIST plateau and low-rank layers", 900, Box::new(|| c9_mnist(&mut c9_reports))),
        ("C10 IDX parser", 1, Box::new(c10_idx)),
    ];
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let in_time = elapsed <= Duration::from_secs(budget);
        let (pass, detail) = match outcome {
            Ok(d) if in_time => (true, d),
            Ok(d) => (false, format!("{d}; over the {budget} s budget")),
            Err(e) => (false, e),
        };
        all &= pass;
        println!(
            "{} {name} [{:.2} s / {budget} s]: {detail}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    for r in c7_reports.iter().chain(&c9_reports) {
        println!("  report: {r}");
    }
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
