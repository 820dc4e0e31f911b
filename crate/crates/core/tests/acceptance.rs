//! Acceptance suite. Every criterion prints one `PASS`/`FAIL` line and then
//! asserts, so `cargo test --test acceptance -- --nocapture` shows the full
//! scoreboard even when some criteria fail.

use std::f64::consts::PI;
use std::io::Write;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dispflow::discrete::{jitter_correct_rows, shift_rows};
use dispflow::flows::{self, FlowParams};
use dispflow::io::experiment::{
    self, measure, Correction, ExperimentConfig, Stage, TomographySettings,
};
use dispflow::io::metrics::rmse;
use dispflow::tomo::{self, Filter, PhantomVariant};
use dispflow::varsolve::{self, EnergyParams, MONOTONE_SLACK};
use dispflow::{grid, Axis, Extension, ScalarField};

/// Written to the process stderr directly so the line shows even when the
/// harness captures output.
fn report(id: u32, ok: bool, detail: String) {
    let line = format!("criterion {id:>2}: {} | {detail}\n", if ok { "PASS" } else { "FAIL" });
    let _ = std::io::stderr().write_all(line.as_bytes());
}

fn shipped_config(name: &str) -> ExperimentConfig {
    let path: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", name]
        .iter()
        .collect();
    ExperimentConfig::load(&path, &[]).unwrap()
}

fn relative_slack(v: f64) -> f64 {
    MONOTONE_SLACK * v.abs().max(f64::MIN_POSITIVE)
}

#[test]
fn c01_lagged_iteration_is_monotone() {
    let mut t = TomographySettings::new(128);
    t.angle_step = PI / 90.0;
    t.a = PI / 18.0;
    t.seed = 7;
    let m = measure(&t).unwrap();
    let u0 = m.perturbed.field();
    let eps = 1e-3 * u0.range() * u0.range();
    let params = EnergyParams::new(Axis::X1, 1, 2, 2, 1e-4, eps);
    // zero tolerance: run all 50 iterations
    let (_, trace) = varsolve::iterate(u0, &params, 50, 0.0).unwrap();
    let recs = &trace.records;

    let mut worst_fc = 0.0f64;
    let mut worst_r = 0.0f64;
    let mut worst_bound = 0.0f64;
    let mut c = trace.initial_grad_linf;
    for w in recs.windows(2) {
        let (a, b) = (w[0], w[1]);
        worst_fc = worst_fc.max((b.fc - a.fc) / relative_slack(a.fc));
        worst_r = worst_r.max((b.r - a.r) / relative_slack(a.r));
        // a.du_l2 = ||u_m - u_{m-1}||, decrease Fc(u_m; u_{m-1}) - Fc(u_{m+1}; u_m);
        // C is the largest slope seen up to u_{m-1}
        let lhs = a.du_l2 * a.du_l2 / (2.0 * (c * c + eps));
        let rhs = a.fc - b.fc;
        worst_bound = worst_bound.max((lhs - rhs) / relative_slack(a.fc));
        c = c.max(a.grad_linf);
    }
    let ok = recs.len() == 50
        && worst_fc <= 1.0
        && worst_r <= 1.0
        && worst_bound <= 1.0
        && trace.violations.is_empty();
    report(
        1,
        ok,
        format!(
            "{} iterations, Fc {:.6e} -> {:.6e}, worst increase in slack units: Fc {worst_fc:.3}, R {worst_r:.3}, bound {worst_bound:.3}",
            recs.len(),
            recs[0].fc,
            recs.last().unwrap().fc
        ),
    );
    assert!(ok);
}

#[test]
fn c02_affine_rows_are_equilibria() {
    let (n1, n2) = (32, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let coeffs: Vec<(f64, f64)> = (0..n2)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    let mut u = ScalarField::zeros(n1, n2);
    for (j2, &(c1, c2)) in coeffs.iter().enumerate() {
        for j1 in 0..n1 {
            u.set(j1, j2, c1 * u.coord(Axis::X1, j1) + c2);
        }
    }
    let params = FlowParams::new(Axis::X1, 1, 2, 2).with_extension(Extension::Linear);
    let rhs = flows::flow_rhs(&u, &params).unwrap();
    let interior = (0..n2)
        .flat_map(|j2| (1..n1 - 1).map(move |j1| (j1, j2)))
        .map(|(j1, j2)| rhs.get(j1, j2).abs())
        .fold(0.0, f64::max);
    let dt = flows::stable_dt(&u, &params).unwrap();
    let ev = flows::evolve(&u, &params, 1000.0 * dt, Some(dt)).unwrap();
    let drift = grid::norm_linf(&ev.state.u.sub(&u));
    let ok = interior <= 1e-12 && ev.state.steps >= 1000 && drift <= 1e-8;
    report(
        2,
        ok,
        format!(
            "interior |rhs| max {interior:.3e}, drift {drift:.3e} over {} steps",
            ev.state.steps
        ),
    );
    assert!(ok);
}

#[test]
fn c03_strip_widths() {
    let s = shipped_config("strip.cfg").strip;
    assert_eq!((s.dx, s.t_end, s.q), (0.1, 1e-6, 2));
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, p) in experiment::ALL_PAIRS {
        let run = experiment::strip_flow(&s, k, p).unwrap();
        // interior rows only
        let growth: Vec<f64> = (1..s.n2 - 1)
            .map(|j| run.fwhm_after[j] - run.fwhm_before[j])
            .collect();
        let lo = growth.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = growth.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pass = if (k, p) == (1, 1) {
            hi < 0.5
        } else {
            lo >= 1.0
        };
        ok &= pass;
        detail.push(format!("(k={k},p={p}) growth {lo:.3}..{hi:.3}"));
    }
    report(3, ok, detail.join(", "));
    assert!(ok);
}

#[test]
fn c04_interfaces_straighten() {
    let s = shipped_config("interface.cfg").interface;
    assert_eq!((s.q, s.rel_tol), (2, 1e-6));
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, p) in experiment::ALL_PAIRS {
        let run = experiment::interface_flow(&s, k, p).unwrap();
        let res = &run.evolution.residuals;
        let steady = run.evolution.converged && *res.last().unwrap() < 1e-6 * res[0];
        let pass = steady && run.variance_after * 10.0 <= run.variance_before;
        ok &= pass;
        detail.push(format!(
            "(k={k},p={p}) var {:.3} -> {:.2e} in {} steps",
            run.variance_before, run.variance_after, run.evolution.state.steps
        ));
    }
    report(4, ok, detail.join(", "));
    assert!(ok);
}

/// Relative L2 error of the 90-angle round trip, frozen from the first run.
const ROUND_TRIP_GOLDEN: f64 = 0.16473;

#[test]
fn c05_round_trip() {
    let n = 128;
    let f = tomo::shepp_logan(n, PhantomVariant::Modified).unwrap();
    let err = |count: usize| {
        let s = tomo::radon(&f, &tomo::uniform_angles(count), tomo::default_offsets(n)).unwrap();
        let r = tomo::fbp(&s, n, Filter::RamLak).unwrap();
        grid::norm_l2(&r.sub(&f)) / grid::norm_l2(&f)
    };
    let (e90, e180) = (err(90), err(180));
    let ok = e90 <= 0.25 && e180 < e90 && (e90 - ROUND_TRIP_GOLDEN).abs() < 5e-5;
    report(
        5,
        ok,
        format!("rel L2 {e90:.5} at 90 angles (golden {ROUND_TRIP_GOLDEN}), {e180:.5} at 180"),
    );
    assert!(ok);
}

fn uncorrected_rmse(a: f64, seed: u64) -> f64 {
    let mut t = TomographySettings::new(128);
    t.a = a;
    t.seed = seed;
    let m = measure(&t).unwrap();
    rmse(&tomo::fbp(&m.perturbed, t.n, t.filter).unwrap(), &m.phantom).unwrap()
}

#[test]
fn c06_small_perturbations_are_milder() {
    let base = uncorrected_rmse(0.0, 7);
    let small = uncorrected_rmse(PI / 30.0, 7);
    let large = uncorrected_rmse(PI / 18.0, 7);
    let ratio = (small - base) / (large - base);
    let ok = ratio < 0.5;
    report(
        6,
        ok,
        format!("rmse a=0 {base:.5}, pi/30 {small:.5}, pi/18 {large:.5}; excess ratio {ratio:.3} (need < 0.5)"),
    );
    assert!(ok);
}

fn corrected_rmse(cfg: &ExperimentConfig, stage: Stage) -> (f64, f64) {
    let m = measure(&cfg.tomography).unwrap();
    let t = &cfg.tomography;
    let before = rmse(&tomo::fbp(&m.perturbed, t.n, t.filter).unwrap(), &m.phantom).unwrap();
    let Correction { sinogram, .. } = experiment::correct(cfg, stage, &m.perturbed).unwrap();
    let after = rmse(&tomo::fbp(&sinogram, t.n, t.filter).unwrap(), &m.phantom).unwrap();
    (before, after)
}

#[test]
fn c07_flow_correction_efficacy() {
    let cfg = shipped_config("large_perturbation.cfg");
    assert_eq!((cfg.flow.k, cfg.flow.p, cfg.flow.q), (1, 2, 1));
    assert!((cfg.tomography.a - PI / 18.0).abs() < 1e-15);
    let (before, flow) = corrected_rmse(&cfg, Stage::Flow);
    let (_, assign) = corrected_rmse(&cfg, Stage::Assign);
    let reduction = 1.0 - flow / before;

    let noisy = shipped_config("noisy.cfg");
    assert_eq!(noisy.tomography.noise, 0.01);
    let (noisy_before, noisy_flow) = corrected_rmse(&noisy, Stage::Flow);

    let parts = [reduction >= 0.20, flow < assign, noisy_flow < noisy_before];
    let ok = parts.iter().all(|&p| p);
    let mark = |p: bool| if p { "ok" } else { "no" };
    report(
        7,
        ok,
        format!(
            "uncorrected {before:.5}, flow {flow:.5} ({:.1}% reduction, need 20%: {}), assign {assign:.5} (flow better: {}), noisy {noisy_before:.5} -> {noisy_flow:.5} ({})",
            100.0 * reduction,
            mark(parts[0]),
            mark(parts[1]),
            mark(parts[2])
        ),
    );
    assert!(ok);
}

/// Sum of random Gaussian bumps on the unit square.
fn smooth_image(n: usize, count: usize, width: f64, seed: u64) -> ScalarField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bumps: Vec<(f64, f64, f64, f64)> = (0..count)
        .map(|_| {
            (
                rng.random_range(0.0..1.0),
                rng.random_range(0.0..1.0),
                rng.random_range(-1.0..1.0),
                width * rng.random_range(0.5..1.5),
            )
        })
        .collect();
    ScalarField::from_fn(n, n, |x, y| {
        bumps
            .iter()
            .map(|&(cx, cy, a, w)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (w * w)).exp())
            .sum()
    })
}

#[test]
fn c08_jitter_recovery() {
    let (n, m, k) = (256, 5usize, 2);
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut failures = Vec::new();
    for case in 0..20u64 {
        let f = smooth_image(n, 240, 0.04, 1000 + case);
        let truth: Vec<i64> = (0..n)
            .map(|_| rng.random_range(-(m as i64)..=m as i64))
            .collect();
        let observed = shift_rows(&f, &truth).unwrap();
        let (out, d) = jitter_correct_rows(&observed, m, k).unwrap();
        let offset = d.shifts()[0] - truth[0];
        let shifts_ok = d.shifts().iter().zip(&truth).all(|(a, b)| a - b == offset);
        // compare away from the columns touched by edge fill
        let aligned = shift_rows(&f, &vec![-offset; n]).unwrap();
        let margin = 2 * m + offset.unsigned_abs() as usize;
        let image_ok =
            (0..n).all(|j2| (margin..n - margin).all(|j1| out.get(j1, j2) == aligned.get(j1, j2)));
        if !(shifts_ok && image_ok) {
            failures.push(case);
        }
    }
    let ok = failures.is_empty();
    report(
        8,
        ok,
        format!("20 images {n}x{n}, M={m}, k={k}; failed cases {failures:?}"),
    );
    assert!(ok);
}

#[test]
fn c09_disk_chords() {
    let n = 256;
    let r = 0.5;
    let px = 2.0 / n as f64;
    // 8x8 supersampled indicator of the centred disk
    let mut f = ScalarField::zeros(n, n);
    for j2 in 0..n {
        for j1 in 0..n {
            let mut hits = 0;
            for a in 0..8 {
                for b in 0..8 {
                    let x = -1.0 + (j1 as f64 + (b as f64 + 0.5) / 8.0) * px;
                    let y = 1.0 - (j2 as f64 + (a as f64 + 0.5) / 8.0) * px;
                    if x * x + y * y <= r * r {
                        hits += 1;
                    }
                }
            }
            f.set(j1, j2, hits as f64 / 64.0);
        }
    }
    let s = tomo::radon(&f, &tomo::uniform_angles(90), tomo::default_offsets(n)).unwrap();
    let mut worst = 0.0f64;
    // diagnostic only: bins more than two pixels from the rim
    let mut worst_inner = 0.0f64;
    for j in 0..90 {
        for kk in 0..s.n_offsets() {
            let l = s.offset(kk);
            let exact = if l.abs() < r {
                2.0 * (r * r - l * l).sqrt()
            } else {
                0.0
            };
            let err = (s.field().get(j, kk) - exact).abs();
            worst = worst.max(err);
            if (l.abs() - r).abs() > 2.0 * px {
                worst_inner = worst_inner.max(err);
            }
        }
    }
    let ok = worst <= 0.01 * 2.0 * r;
    report(
        9,
        ok,
        format!(
            "max chord error {worst:.4e} (limit {:.4e}); away from the rim {worst_inner:.4e}",
            0.01 * 2.0 * r
        ),
    );
    assert!(ok);
}

#[test]
fn c10_semi_implicit_identity() {
    let n = 32;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut u_prev = ScalarField::from_fn(n, n, |x, y| (3.0 * x).sin() + x * y);
    u_prev
        .values_mut()
        .iter_mut()
        .for_each(|v| *v += 0.05 * rng.random_range(-1.0..1.0));
    let mut params = EnergyParams::new(Axis::X1, 1, 2, 2, 1e-3, 1e-2);
    params.cg.rel_tol = 1e-13;
    let u = varsolve::convex_step(&u_prev, &params).unwrap();
    let residual = varsolve::explicit_flow_residual(&u, &u_prev, &params).unwrap();

    // dense oracle: (I/alpha + W K^T K) u = u_prev / alpha, built row by row
    let w = varsolve::data_weight(&u_prev, 2, 1e-2).unwrap();
    let h = u_prev.dx1();
    let alpha = 1e-3;
    let mut dense_worst = 0.0f64;
    for j2 in 0..n {
        let mut a = vec![vec![0.0; n]; n];
        let mut b = vec![0.0; n];
        for j in 0..n {
            a[j][j] += 1.0 / alpha;
            b[j] = u_prev.get(j, j2) / alpha;
            // -(d/dx)(du/dx) with even reflection at both ends
            let wj = w.get(j, j2) / (h * h);
            if j > 0 {
                a[j][j] += wj;
                a[j][j - 1] -= wj;
            }
            if j + 1 < n {
                a[j][j] += wj;
                a[j][j + 1] -= wj;
            }
        }
        let x = solve_dense(a, b);
        for (j, xj) in x.iter().enumerate() {
            dense_worst = dense_worst.max((xj - u.get(j, j2)).abs());
        }
    }
    let ok = residual <= 1e-6 && dense_worst <= 1e-6;
    report(
        10,
        ok,
        format!(
            "optimality residual {residual:.3e}, max deviation from dense solve {dense_worst:.3e}"
        ),
    );
    assert!(ok);
}

/// Gaussian elimination with partial pivoting.
fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}
