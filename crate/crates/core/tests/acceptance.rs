//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting it; run with `--nocapture` to see them.

mod common;

use std::time::{Duration, Instant};

use common::{cli, dense, random_values, rng, small_radar, tiny_spec, tree};
use num_complex::Complex64;
use rand::Rng;
use radarfield::geometry::{full_azimuth_range, viewpoint_grid, Viewpoint};
use radarfield::grt::{forward_dataset, GrtContext, Split, ViewOperator};
use radarfield::harness::{preset, run, Method, Preset, PRESET_EXPERIMENTS};
use radarfield::inr::{backward, forward_with_tape, init, ActivationConfig, MlpParams, Variant};
use radarfield::kaczmarz::{residual_norm, solve_with, KaczmarzConfig};
use radarfield::metrics::{gaussian_window, m_cos, m_ssim, p_rmse, ssim_2d, t_iou, SSIM_C1, SSIM_C2};
use radarfield::optimizer::{evaluate, LossWeights};
use radarfield::scene::{GridSpec, VoxelGrid};
use radarfield::{max_relative_error, wrap_phase};

fn report(name: &str, pass: bool, detail: String) {
    println!("{} {name}: {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "{name}: {detail}");
}

fn dot(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x * y.conj()).sum()
}

fn norm(a: &[Complex64]) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

#[test]
fn adjoint_identity() {
    let t = Instant::now();
    let spec = GridSpec::with_count(2.0, 8).unwrap();
    let radar = small_radar();
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let mut r = rng(seed);
        let vp = Viewpoint::new(r.random_range(0.0..std::f64::consts::PI), r.random_range(0.0..std::f64::consts::TAU)).unwrap();
        let op = ViewOperator::new(&vp, &radar, &spec).unwrap();
        let rho = random_values(spec.len(), &mut r);
        let mut d = radarfield::grt::SignalTensor::zeros(&radar);
        d.values = random_values(radar.signal_len(), &mut r);
        let f_rho = op.apply(&rho).unwrap();
        let ft_d = op.apply_adjoint(&d).unwrap();
        let err = (dot(&f_rho.values, &d.values) - dot(&rho, &ft_d)).norm() / (norm(&f_rho.values) * norm(&d.values));
        worst = worst.max(err);
    }
    let el = t.elapsed();
    report(
        "adjoint identity (20 instances, 8^3, 4 freq, 2x2)",
        worst < 1e-10 && el < Duration::from_secs(5),
        format!("max relative mismatch {worst:.2e} (< 1e-10), {el:.2?} (< 5 s)"),
    );
}

fn small_model(variant: Variant, half_extent: f64, seed: u64) -> MlpParams {
    init(ActivationConfig { hidden_width: 8, depth: 2, half_extent, ..ActivationConfig::new(variant) }, seed).unwrap()
}

/// Central differences of `f` over every parameter.
fn fd_gradient(p: &MlpParams, f: impl Fn(&MlpParams) -> f64) -> Vec<f64> {
    let h = 1e-5;
    (0..p.len())
        .map(|i| {
            let mut a = p.clone();
            let mut b = p.clone();
            a.values[i] += h;
            b.values[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

#[test]
fn end_to_end_gradient_check() {
    let t = Instant::now();
    let spec = GridSpec::with_count(1.0, 2).unwrap();
    let radar = small_radar();
    let vp = Viewpoint::new(0.7, 1.1).unwrap();
    let truth = VoxelGrid::new(spec, random_values(spec.len(), &mut rng(11))).unwrap();
    let ds = forward_dataset(&truth, &[vp], &radar).unwrap().with_split(Split { train: vec![0], test: vec![] }).unwrap();
    let ctx = GrtContext::new(&ds, &[0], &spec).unwrap();
    let weights = LossWeights::default();
    let mut errs = Vec::new();
    for variant in [Variant::N, Variant::S] {
        let model = small_model(variant, 0.5, 3);
        let (_, grad) = evaluate(&model, &ds, &ctx, &weights).unwrap();
        let fd = fd_gradient(&model, |p| evaluate(p, &ds, &ctx, &weights).unwrap().0.total);
        errs.push((variant, max_relative_error(&grad, &fd)));
    }
    let el = t.elapsed();
    report(
        "end-to-end gradient (loss -> adjoint -> MLP backward, 2^3 grid, 1 view)",
        errs.iter().all(|e| e.1 < 1e-3) && el < Duration::from_secs(30),
        format!("max relative error {errs:?} (< 1e-3), {el:.2?} (< 30 s)"),
    );
}

#[test]
fn mlp_gradient_check() {
    let mut r = rng(5);
    let points: Vec<[f64; 3]> = (0..16).map(|_| [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)]).collect();
    let cot = random_values(points.len(), &mut r);
    let objective = |p: &MlpParams| -> f64 {
        let (out, _) = forward_with_tape(p, &points).unwrap();
        out.iter().zip(&cot).map(|(o, c)| (c.conj() * o).re).sum()
    };
    let mut errs = Vec::new();
    for variant in [Variant::N, Variant::S] {
        let model = small_model(variant, 1.0, 9);
        let (_, tape) = forward_with_tape(&model, &points).unwrap();
        let grad = backward(&model, &tape, &cot).unwrap();
        errs.push((variant, max_relative_error(&grad, &fd_gradient(&model, objective))));
    }
    report(
        "MLP gradient (width 8, depth 2, all parameters)",
        errs.iter().all(|e| e.1 < 1e-4),
        format!("max relative error {errs:?} (< 1e-4)"),
    );
}

#[test]
fn kaczmarz_vs_dense_oracle() {
    let t = Instant::now();
    let radar = small_radar();
    let spec = GridSpec::with_count(10.0, 4).unwrap();
    let vps = viewpoint_grid(4, 2, full_azimuth_range(4), [0.8, 2.3]).unwrap();
    let idx: Vec<usize> = (0..vps.len()).collect();

    // noisy random scene: residual against the dense least-squares optimum
    let mut r = rng(3);
    let truth = VoxelGrid::new(spec, random_values(spec.len(), &mut r)).unwrap();
    let mut ds = forward_dataset(&truth, &vps, &radar).unwrap();
    for s in &mut ds.signals {
        for v in &mut s.values {
            *v += Complex64::new(r.random_range(-0.1..0.1), r.random_range(-0.1..0.1));
        }
    }
    let ctx = GrtContext::new(&ds, &idx, &spec).unwrap();
    let a = dense(&ctx);
    let d = nalgebra::DVector::from_iterator(a.nrows(), idx.iter().flat_map(|&i| ds.signals[i].values.clone()));
    let x_ls = a.clone().svd(true, true).solve(&d, 1e-12).unwrap();
    let ls_res = (&a * &x_ls - &d).norm();
    let x = solve_with(&ds, &ctx, &KaczmarzConfig::default(), |_, _| {}).unwrap();
    let kz_res = residual_norm(&ds, &ctx, &x.values).unwrap();
    let ratio = kz_res / ls_res;

    // single point targets
    let mut hits = 0;
    for seed in 0..10u64 {
        let mut r = rng(100 + seed);
        let mut truth = VoxelGrid::zeros(spec);
        let target = r.random_range(0..spec.len());
        truth.values[target] = Complex64::from_polar(1.0, r.random_range(-3.0..3.0));
        let ds = forward_dataset(&truth, &vps, &radar).unwrap();
        let ctx = GrtContext::new(&ds, &idx, &spec).unwrap();
        let cfg = KaczmarzConfig { seed, ..Default::default() };
        let x = solve_with(&ds, &ctx, &cfg, |_, _| {}).unwrap();
        hits += (x.argmax_magnitude() == target) as usize;
    }
    let el = t.elapsed();
    report(
        "Kaczmarz vs dense least squares (4^3, 8 views, 4 freq, 2x2, 100 sweeps)",
        ratio <= 1.05 && hits == 10 && el < Duration::from_secs(60),
        format!("residual ratio {ratio:.4} (<= 1.05), point targets {hits}/10, {el:.2?} (< 60 s)"),
    );
}

/// SSIM written straight from the definition: every valid window position,
/// 2-D Gaussian weights, weighted moments, then the mean of the map.
fn literal_ssim(x: &[f64], y: &[f64], n: usize) -> f64 {
    let w1 = gaussian_window(n);
    let k = w1.len();
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..=n - k {
        for j in 0..=n - k {
            let (mut mx, mut my) = (0.0, 0.0);
            for a in 0..k {
                for b in 0..k {
                    let w = w1[a] * w1[b];
                    mx += w * x[(i + a) * n + j + b];
                    my += w * y[(i + a) * n + j + b];
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for a in 0..k {
                for b in 0..k {
                    let w = w1[a] * w1[b];
                    let dx = x[(i + a) * n + j + b] - mx;
                    let dy = y[(i + a) * n + j + b] - my;
                    vx += w * dx * dx;
                    vy += w * dy * dy;
                    cxy += w * dx * dy;
                }
            }
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn metric_oracles() {
    let n = 25;
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(seed);
        let x: Vec<f64> = (0..n * n).map(|_| r.random_range(0.0..1.0)).collect();
        let y: Vec<f64> = x.iter().map(|v| (v * 0.7 + r.random_range(0.0..0.3)).min(1.0)).collect();
        worst = worst.max((ssim_2d(&x, &y, n) - literal_ssim(&x, &y, n)).abs());
    }

    let spec = GridSpec::with_count(5.0, 10).unwrap();
    let truth = VoxelGrid::new(spec, random_values(spec.len(), &mut rng(1))).unwrap();
    let scaled = VoxelGrid::new(spec, truth.values.iter().map(|v| v * 2.0).collect()).unwrap();
    let mut left = VoxelGrid::zeros(spec);
    let mut right = VoxelGrid::zeros(spec);
    for i in 0..spec.len() {
        let x = spec.unravel(i)[0];
        if x < 3 {
            left.values[i] = Complex64::new(1.0, 0.0);
        } else if x > 6 {
            right.values[i] = Complex64::new(0.0, 1.0);
        }
    }
    let mut block = VoxelGrid::zeros(spec);
    for ix in 2..7 {
        for iy in 2..7 {
            for iz in 2..7 {
                block.values[spec.index(ix, iy, iz)] = Complex64::new(1.0, 0.0);
            }
        }
    }
    let mut holed = block.clone();
    holed.values[spec.index(4, 4, 4)] = Complex64::new(0.0, 0.0);

    let cfg = small_radar();
    let sig = |v: Vec<Complex64>| radarfield::grt::SignalTensor::from_values(&cfg, v).unwrap();
    let base: Vec<Complex64> = random_values(cfg.signal_len(), &mut rng(2));
    let quarter = sig(base.iter().map(|v| v * Complex64::i()).collect());
    let turned = sig(base.iter().map(|v| Complex64::from_polar(v.norm(), v.arg() + std::f64::consts::TAU)).collect());
    let base = sig(base);
    let quarter_rmse = p_rmse(&[quarter], std::slice::from_ref(&base)).unwrap();
    let turned_rmse = p_rmse(&[turned], std::slice::from_ref(&base)).unwrap();

    let identities = [
        ("m-SSIM(x, x) = 1", m_ssim(&truth, &truth).unwrap() == 1.0),
        ("m-COS(x, x) = 1", m_cos(&truth, &truth).unwrap() == 1.0),
        ("m-COS(2x, x) = 1", m_cos(&scaled, &truth).unwrap() == 1.0),
        ("m-COS(disjoint) = 0", m_cos(&left, &right).unwrap() == 0.0),
        ("t-IoU(x, x) = 1", t_iou(&truth, &truth, 0.2).unwrap() == 1.0),
        ("t-IoU(disjoint) = 0", t_iou(&left, &right, 0.2).unwrap() == 0.0),
        ("t-IoU(cube minus one voxel) = 124/125", t_iou(&holed, &block, 0.2).unwrap() == 124.0 / 125.0),
        ("p-RMSE(s, s) = 0", p_rmse(std::slice::from_ref(&base), std::slice::from_ref(&base)).unwrap() == 0.0),
        ("p-RMSE(quarter turn) = pi/2", (quarter_rmse - std::f64::consts::FRAC_PI_2).abs() < 1e-12),
        // x + 2 pi is not exactly representable, so the round trip through
        // from_polar leaves rounding-level phase differences
        ("p-RMSE(+2 pi) = 0", turned_rmse < 1e-12 && wrap_phase(std::f64::consts::TAU) == 0.0),
    ];
    let failed: Vec<&str> = identities.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    report(
        "metric oracles",
        worst < 1e-6 && failed.is_empty(),
        format!(
            "SSIM vs literal formula max |diff| {worst:.2e} on 10 random 25x25 slices (< 1e-6); {}/{} identities hold{}",
            identities.len() - failed.len(),
            identities.len(),
            if failed.is_empty() { String::new() } else { format!(", failed: {failed:?}") }
        ),
    );
}

#[test]
fn desk_trend_rift_beats_least_squares() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for seed in 0..3 {
        let spec = preset("cube", Preset::Desk, seed).unwrap();
        assert_eq!(spec.methods, vec![Method::RiftN, Method::Ls]);
        let r = run(&spec, &dir.path().join(format!("seed{seed}"))).unwrap();
        let (rift, ls) = (r.reports[0].m_ssim, r.reports[1].m_ssim);
        rows.push((seed, rift, ls, rift / ls));
    }
    let wins = rows.iter().filter(|r| r.3 >= 1.5).count();
    let el = t.elapsed();
    let detail: Vec<String> = rows
        .iter()
        .map(|(s, a, b, q)| format!("seed {s}: RIFT(N)-100 {a:.4} vs LS-100 {b:.4} ({q:.2}x)"))
        .collect();
    report(
        "desk cube trend (m-SSIM RIFT(N) >= 1.5x LS in >= 2 of 3 seeds)",
        wins >= 2 && el < Duration::from_secs(20 * 60),
        format!("{}; {wins}/3 seeds; {el:.0?} (< 20 min)", detail.join("; ")),
    );
}

/// Magnitude-weighted centroid, in voxel units, of the truth voxels with
/// `x < 0` (`side = -1`) or `x > 0` (`side = 1`).
fn centroid(g: &VoxelGrid, side: f64) -> [f64; 3] {
    let mut c = [0.0; 3];
    let mut w = 0.0;
    for (i, v) in g.values.iter().enumerate() {
        if g.spec.center(i)[0] * side > 0.0 && v.norm() > 0.0 {
            let u = g.spec.unravel(i);
            for k in 0..3 {
                c[k] += v.norm() * u[k] as f64;
            }
            w += v.norm();
        }
    }
    c.map(|x| x / w)
}

/// Largest-magnitude voxel on one side of `x = 0`.
fn side_argmax(g: &VoxelGrid, side: f64) -> [usize; 3] {
    let (i, _) = g
        .values
        .iter()
        .enumerate()
        .filter(|(i, _)| g.spec.center(*i)[0] * side > 0.0)
        .fold((0, -1.0), |best, (i, v)| if v.norm() > best.1 { (i, v.norm()) } else { best });
    g.spec.unravel(i)
}

fn is_local_max(g: &VoxelGrid, at: [usize; 3]) -> bool {
    let n = g.spec.n as isize;
    let m = g.get(at[0], at[1], at[2]).norm();
    for dx in -1..=1isize {
        for dy in -1..=1isize {
            for dz in -1..=1isize {
                let q = [at[0] as isize + dx, at[1] as isize + dy, at[2] as isize + dz];
                if q.iter().all(|&c| (0..n).contains(&c)) && g.get(q[0] as usize, q[1] as usize, q[2] as usize).norm() > m {
                    return false;
                }
            }
        }
    }
    true
}

#[test]
fn weak_target_detection() {
    let t = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut spec = preset("wtd", Preset::Desk, 0).unwrap();
    spec.methods = vec![Method::RiftN];
    let r = run(&spec, dir.path()).unwrap();
    let recon = &r.recons[0].1;
    let mut parts = Vec::new();
    let mut ok = true;
    for (label, side) in [("strong (x<0)", -1.0), ("weak (x>0)", 1.0)] {
        let peak = side_argmax(recon, side);
        let c = centroid(&r.truth, side);
        let dist = (0..3).map(|k| (peak[k] as f64 - c[k]).powi(2)).sum::<f64>().sqrt();
        let local = is_local_max(recon, peak);
        ok &= dist <= 2.0 && local;
        parts.push(format!(
            "{label}: peak {peak:?} vs centroid [{:.2}, {:.2}, {:.2}], {dist:.2} voxels, local max {local}",
            c[0], c[1], c[2]
        ));
    }
    let el = t.elapsed();
    report(
        "weak-target detection (far field, bars at 4:1, RIFT(N))",
        ok && el < Duration::from_secs(20 * 60),
        format!("{}; {el:.0?} (< 20 min)", parts.join("; ")),
    );
}

#[test]
fn cli_determinism_across_thread_counts() {
    let mut outputs = Vec::new();
    let dirs: Vec<_> = (0..3).map(|_| tempfile::tempdir().unwrap()).collect();
    for (k, threads) in [1usize, 4, 1].into_iter().enumerate() {
        let d = dirs[k].path();
        let spec = d.join("spec.toml");
        std::fs::write(&spec, tiny_spec(6).to_toml()).unwrap();
        let p = |rel: &str| d.join(rel).to_string_lossy().into_owned();
        let sp = p("spec.toml");
        let stages: Vec<Vec<String>> = vec![
            vec!["synth".into(), "--spec".into(), sp.clone(), "--out".into(), p("ds.toml")],
            vec!["train".into(), "--spec".into(), sp.clone(), "--dataset".into(), p("ds.toml"), "--out".into(), p("rift")],
            vec!["train".into(), "--spec".into(), sp.clone(), "--dataset".into(), p("ds.toml"), "--method".into(), "rift_s".into(), "--out".into(), p("rift_s")],
            vec!["invert".into(), "--spec".into(), sp.clone(), "--dataset".into(), p("ds.toml"), "--out".into(), p("ls.grid")],
            vec!["eval".into(), "--dataset".into(), p("ds.toml"), "--grid".into(), p("ls.grid"), "--out".into(), p("ls.csv")],
            vec!["eval".into(), "--dataset".into(), p("ds.toml"), "--checkpoint".into(), p("rift/best.ckpt"), "--out".into(), p("rift.csv")],
            vec!["render".into(), "--grid".into(), p("rift/recon.grid"), "--out".into(), p("slices")],
            vec!["run".into(), "--spec".into(), sp.clone(), "--out".into(), p("bundle")],
        ];
        for args in &stages {
            let a: Vec<&str> = args.iter().map(String::as_str).collect();
            let out = cli(&a, threads);
            assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
        }
        outputs.push(tree(d));
    }
    let same = outputs[0] == outputs[1] && outputs[0] == outputs[2];
    report(
        "CLI determinism (synth, train, invert, eval, render, run; 1 vs 4 threads, rerun)",
        same,
        format!("{} files per run, byte-identical: {same}", outputs[0].len()),
    );
}

#[test]
fn paper_scale_presets() {
    let mut notes = Vec::new();
    let mut ok = true;
    for name in PRESET_EXPERIMENTS {
        let s = preset(name, Preset::Paper, 0).unwrap();
        let n_vp = s.viewpoints.grid().unwrap().len();
        let shape = (s.radar.n_freq, s.radar.n_tx, s.radar.n_rx);
        let full = if name == "wtd" { n_vp == 861 && s.forward_grid.granularity == 0.12 } else { n_vp == 2601 };
        ok &= full && shape == (100, 16, 16) && s.train.epochs == 500;
        notes.push(format!("{name}: {n_vp} viewpoints, {shape:?}, {} epochs", s.train.epochs));
    }
    let out = cli(&["run", "--preset", "paper", "--experiment", "cube", "--dry-run", "--out", "unused"], 1);
    let dry = out.status.success() && String::from_utf8_lossy(&out.stdout).contains("n_freq = 100");
    report(
        "paper-scale presets available",
        ok && dry,
        format!("{}; CLI dry run resolves: {dry}", notes.join("; ")),
    );
}
