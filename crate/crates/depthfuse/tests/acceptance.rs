//! Acceptance suite: one test per release criterion, each printing a
//! `criterion NN ...: PASS` line (visible with `--nocapture`).
//!
//! Run with `cargo test -p depthfuse --test acceptance`.

use std::time::Instant;

use depthfuse::dataset;
use depthfuse::grid::{BinaryMask, DepthGrid, FeatureGrid};
use depthfuse::metrics;
use depthfuse::oracle;
use depthfuse::poisson::{self, CgSettings};
use depthfuse::refine::{self, LinearMap, RefineParams};
use depthfuse::rng::XorShift64Star;

fn random_prior(h: usize, w: usize, rough: bool, rng: &mut XorShift64Star) -> DepthGrid {
    let (a, b, pa, pb) = (
        rng.range_f64(0.5, 2.0),
        rng.range_f64(0.5, 2.0),
        rng.range_f64(0.0, 6.0),
        rng.range_f64(0.0, 6.0),
    );
    let noise = if rough { 2.0 } else { 0.0 };
    DepthGrid::from_fn(h, w, |i, j| {
        10.0 + 5.0 * (a * i as f64 / h as f64 + pa).sin()
            + 5.0 * (b * j as f64 / w as f64 + pb).cos()
            + noise * rng.next_f64()
    })
    .unwrap()
}

fn random_instance(
    h: usize,
    w: usize,
    density: f64,
    rng: &mut XorShift64Star,
) -> (DepthGrid, DepthGrid) {
    let prior = random_prior(h, w, rng.next_f64() < 0.5, rng);
    let sparse = DepthGrid::from_fn(h, w, |_, _| {
        if rng.next_f64() < density {
            1.0 + 29.0 * rng.next_f64()
        } else {
            0.0
        }
    })
    .unwrap();
    (sparse, prior)
}

fn inf_norm_diff(a: &DepthGrid, b: &DepthGrid) -> f64 {
    a.values()
        .iter()
        .zip(b.values())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn random_features(h: usize, w: usize, c: usize, rng: &mut XorShift64Star) -> FeatureGrid {
    let values: Vec<f64> = (0..h * w * c).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
    FeatureGrid::new(h, w, c, values).unwrap()
}

#[test]
fn c01_poisson_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = XorShift64Star::new(0xC1);
    let densities = [0.0, 0.02, 0.06, 0.20];
    let settings = CgSettings::with_tolerance(1e-11);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let h = 8 + rng.below(9);
        let w = 8 + rng.below(9);
        let (sparse, prior) = random_instance(h, w, densities[trial % 4], &mut rng);
        let (fast, report) = poisson::densify(&sparse, &prior, &settings).unwrap();
        assert!(report.converged, "instance {trial} did not converge");
        let direct = oracle::dense_poisson_solve(&sparse, &prior).unwrap();
        let x_inf = direct.values().iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        let scaled = inf_norm_diff(&fast, &direct) / (1.0 + x_inf);
        worst = worst.max(scaled);
        assert!(
            scaled <= 1e-8,
            "instance {trial}: scaled deviation {scaled}"
        );
    }
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 10.0, "oracle sweep took {elapsed:.2}s");
    println!(
        "criterion 01 (poisson oracle equivalence): PASS — worst scaled deviation {worst:.3e}, {elapsed:.2}s"
    );
}

#[test]
fn c02_hard_constraint_exactness() {
    let mut rng = XorShift64Star::new(0xC2);
    let mut checked = 0usize;
    for trial in 0..30 {
        let h = 8 + rng.below(20);
        let w = 8 + rng.below(20);
        let (sparse, prior) = random_instance(h, w, 0.02 + 0.2 * rng.next_f64(), &mut rng);
        let (fused, _) = poisson::densify(&sparse, &prior, &CgSettings::default()).unwrap();
        for (p, s) in fused.values().iter().zip(sparse.values()) {
            if *s > 0.0 {
                assert_eq!(p.to_bits(), s.to_bits(), "trial {trial}");
                checked += 1;
            }
        }
    }
    assert!(checked > 0);
    println!("criterion 02 (hard-constraint exactness): PASS — {checked} anchors bit-identical");
}

#[test]
fn c03_zero_anchor_consistency() {
    let mut rng = XorShift64Star::new(0xC3);
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let h = 12 + rng.below(16);
        let w = 12 + rng.below(16);
        let prior = random_prior(h, w, trial % 2 == 0, &mut rng);
        let sparse = DepthGrid::zeros(h, w);
        let (fused, report) = poisson::densify(&sparse, &prior, &CgSettings::default()).unwrap();
        assert!(report.converged);
        let gap = inf_norm_diff(&fused, &prior);
        worst = worst.max(gap);
        assert!(gap <= 1e-6, "trial {trial}: deviation {gap}");
    }
    println!("criterion 03 (zero-anchor identity): PASS — worst deviation {worst:.3e}");
}

#[test]
fn c04_spd_certification() {
    let mut rng = XorShift64Star::new(0xC4);
    let mut pairs = 0usize;
    while pairs < 1000 {
        let h = 6 + rng.below(12);
        let w = 6 + rng.below(12);
        let (sparse, _) = random_instance(h, w, 0.15 * rng.next_f64(), &mut rng);
        let part = depthfuse::build_partition(&sparse).unwrap();
        let n = part.unknown().len();
        if n == 0 {
            continue;
        }
        for _ in 0..25 {
            let u: Vec<f64> = (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let v: Vec<f64> = (0..n).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let au = poisson::apply_restricted_operator(&u, &part).unwrap();
            let av = poisson::apply_restricted_operator(&v, &part).unwrap();
            let left: f64 = au.iter().zip(&v).map(|(a, b)| a * b).sum();
            let right: f64 = u.iter().zip(&av).map(|(a, b)| a * b).sum();
            let scale = left.abs().max(right.abs()).max(1e-30);
            assert!((left - right).abs() / scale <= 1e-10);
            let quad: f64 = au.iter().zip(&u).map(|(a, b)| a * b).sum();
            assert!(quad > 0.0);
            pairs += 1;
        }
    }
    println!("criterion 04 (SPD certification): PASS — {pairs} random vector pairs");
}

#[test]
fn c05_propagation_equivalence() {
    let mut rng = XorShift64Star::new(0xC5);
    let mut worst = 0.0f64;
    for trial in 0..50 {
        let init = DepthGrid::from_fn(8, 8, |_, _| 1.0 + 9.0 * rng.next_f64()).unwrap();
        let sensor = DepthGrid::from_fn(8, 8, |_, _| 1.0 + 9.0 * rng.next_f64()).unwrap();
        let mask =
            BinaryMask::new(8, 8, (0..64).map(|_| rng.next_f64() < 0.3).collect()).unwrap();
        let features = random_features(8, 8, 5, &mut rng);
        let w_f =
            LinearMap::new(4, 5, (0..20).map(|_| rng.next_f64() - 0.5).collect()).unwrap();
        let g =
            LinearMap::new(3, 6, (0..18).map(|_| rng.next_f64() - 0.5).collect()).unwrap();
        let w_alpha: Vec<f64> = (0..6).map(|_| rng.next_f64() - 0.5).collect();
        for iterations in [1usize, 3, 6] {
            let params = RefineParams {
                kappa: [0.5, 1.0, 4.0][trial % 3],
                iterations,
                w_f: w_f.clone(),
                g: g.clone(),
                w_alpha: w_alpha.clone(),
                ..RefineParams::default()
            };
            let fast = refine::refine(&init, &sensor, &mask, &features, &params).unwrap();
            let slow =
                oracle::reference_propagate(&init, &sensor, &mask, &features, &params).unwrap();
            let gap = inf_norm_diff(&fast, &slow);
            worst = worst.max(gap);
            assert!(gap <= 1e-9, "trial {trial}, T={iterations}: gap {gap}");
        }
    }
    println!("criterion 05 (propagation equivalence): PASS — worst deviation {worst:.3e}");
}

#[test]
fn c06_stochasticity_suite() {
    let mut rng = XorShift64Star::new(0xC6);
    let mut rows = 0usize;
    for &kappa in &[0.1, 1.0, 10.0] {
        for _ in 0..3 {
            let features = random_features(9, 9, 5, &mut rng);
            let params = RefineParams {
                kappa,
                g: LinearMap::new(3, 6, (0..18).map(|_| rng.next_f64() * 2.0 - 1.0).collect())
                    .unwrap(),
                ..RefineParams::default()
            };
            let stack = refine::affinity_weights(&features, &params).unwrap();
            for k_idx in 0..3 {
                for i in 0..9 {
                    for j in 0..9 {
                        let patch = stack.patch_weights(k_idx, i, j);
                        assert!(patch.iter().all(|&w| w >= 0.0));
                        let sum: f64 = patch.iter().sum();
                        assert!(
                            (sum - 1.0).abs() <= 1e-6,
                            "kappa {kappa} kernel {k_idx}: row sum {sum}"
                        );
                        rows += 1;
                    }
                }
            }
            for i in 0..9 {
                for j in 0..9 {
                    let gates = stack.gates_at(i, j);
                    assert!(gates.iter().all(|&g| g >= 0.0));
                    let sum: f64 = gates.iter().sum();
                    assert!((sum - 1.0).abs() <= 1e-6);
                }
            }
        }
    }
    println!("criterion 06 (stochasticity suite): PASS — {rows} affinity rows checked");
}

#[test]
fn c07_anchoring_limits() {
    let mut rng = XorShift64Star::new(0xC7);
    let init = DepthGrid::from_fn(9, 9, |_, _| 1.0 + 50.0 * rng.next_f64()).unwrap();
    let sensor = DepthGrid::from_fn(9, 9, |_, _| 1.0 + 50.0 * rng.next_f64()).unwrap();
    let features = random_features(9, 9, 5, &mut rng);

    // Saturated anchor head with a full mask: the sensor passes through.
    let mut saturated = RefineParams::default();
    saturated.w_alpha[5] = 40.0;
    let full = BinaryMask::filled(9, 9, true);
    let out = refine::refine(&init, &sensor, &full, &features, &saturated).unwrap();
    for (a, b) in out.values().iter().zip(sensor.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }

    // Empty mask: one iteration is exactly the gated mix.
    let empty = BinaryMask::filled(9, 9, false);
    let one_step = RefineParams {
        iterations: 1,
        ..RefineParams::default()
    };
    let refined = refine::refine(&init, &sensor, &empty, &features, &one_step).unwrap();
    let stack = refine::affinity_weights(&features, &one_step).unwrap();
    let mix = refine::center_tethered_step(&init, &init, &stack).unwrap();
    for (a, b) in refined.values().iter().zip(mix.values()) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    println!("criterion 07 (anchoring limits): PASS — both mask extremes exact");
}

#[test]
fn c08_silog_scale_invariance() {
    let mut rng = XorShift64Star::new(0xC8);
    let mut worst = 0.0f64;
    for _ in 0..20 {
        let pred = DepthGrid::from_fn(16, 16, |_, _| 0.5 + 0.5 * rng.next_f64()).unwrap();
        let gt = DepthGrid::from_fn(16, 16, |_, _| {
            if rng.next_f64() < 0.8 {
                0.3 + 2.7 * rng.next_f64()
            } else {
                0.0
            }
        })
        .unwrap();
        let base = metrics::silog_loss(&pred, &gt, metrics::SILOG_EPSILON).unwrap();
        for s in [0.5, 2.0, 10.0] {
            let scaled = DepthGrid::from_fn(16, 16, |i, j| s * pred.get(i, j)).unwrap();
            let loss = metrics::silog_loss(&scaled, &gt, metrics::SILOG_EPSILON).unwrap();
            let gap = (loss - base).abs();
            worst = worst.max(gap);
            assert!(gap <= 1e-6, "scale {s}: |{loss} - {base}| = {gap}");
        }
    }
    println!("criterion 08 (SI-log scale invariance): PASS — worst gap {worst:.3e}");
}

#[test]
fn c09_codec_bit_exactness() {
    let dir = tempfile::tempdir().unwrap();

    // Every 16-bit code once.
    let all_codes: Vec<u16> = (0..=u16::MAX).collect();
    let png_path = dir.path().join("all_codes.png");
    dataset::write_png_codes(256, 256, &all_codes, &png_path).unwrap();
    let (h, w, decoded) = dataset::read_png_codes(&png_path).unwrap();
    assert_eq!((h, w), (256, 256));
    assert_eq!(decoded, all_codes);

    // PFM: random finite bit patterns plus edge cases, exact at bit level.
    let mut rng = XorShift64Star::new(0xC9);
    let mut values: Vec<f32> = vec![
        0.0,
        -0.0,
        f32::MIN_POSITIVE,
        f32::MIN_POSITIVE / 2.0, // subnormal
        f32::MAX,
        f32::MIN,
        1.0,
        -1.0,
    ];
    while values.len() < 4096 {
        let v = f32::from_bits(rng.next_u64() as u32);
        if v.is_finite() {
            values.push(v);
        }
    }
    let mut buf = Vec::new();
    dataset::pfm::write(64, 64, &values, &mut buf).unwrap();
    let (ph, pw, back) = dataset::pfm::read(std::io::Cursor::new(buf)).unwrap();
    assert_eq!((ph, pw), (64, 64));
    for (a, b) in back.iter().zip(&values) {
        assert_eq!(a.to_bits(), b.to_bits());
    }
    println!("criterion 09 (codec bit-exactness): PASS — 65536 PNG codes, 4096 PFM values");
}

#[test]
fn c10_mechanism_rmse_reduction() {
    let mut reductions = Vec::with_capacity(100);
    let mut improved = 0usize;
    for seed in 0..100u64 {
        let scene = oracle::synth_scene(64, 64, seed).unwrap();
        let (fused, report) =
            poisson::densify(&scene.sparse, &scene.prior, &CgSettings::default()).unwrap();
        assert!(report.converged, "seed {seed} did not converge");
        for (p, s) in fused.values().iter().zip(scene.sparse.values()) {
            if *s > 0.0 {
                assert_eq!(p.to_bits(), s.to_bits());
            }
        }
        let (rmse_fused, _, _) = metrics::masked_rmse_mae(&fused, &scene.dense_gt).unwrap();
        let (rmse_prior, _, _) = metrics::masked_rmse_mae(&scene.prior, &scene.dense_gt).unwrap();
        if rmse_fused < rmse_prior {
            improved += 1;
        }
        reductions.push(1.0 - rmse_fused / rmse_prior);
    }
    reductions.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = (reductions[49] + reductions[50]) / 2.0;
    assert!(improved >= 90, "only {improved}/100 scenes improved");
    assert!(
        median >= 0.30,
        "median RMSE reduction {median:.3} below 30%"
    );
    println!(
        "criterion 10 (mechanism check): PASS — {improved}/100 improved, median reduction {:.1}%",
        median * 100.0
    );
}

#[test]
fn c11_performance_envelope() {
    // Full benchmark-size raster converges within the wall-clock budget.
    let scene = oracle::synth_scene(352, 1216, 0xD0).unwrap();
    let start = Instant::now();
    let (_, report) = poisson::densify(&scene.sparse, &scene.prior, &CgSettings::default()).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(report.converged, "KITTI-size solve did not converge");
    assert!(elapsed < 30.0, "KITTI-size solve took {elapsed:.1}s");

    // Per-iteration operator work is linear in pixel count.
    let mut per_pixel = Vec::new();
    for &side in &[64usize, 128, 256] {
        let scene = oracle::synth_scene(side, side, 0xD1).unwrap();
        let (_, report, stats) =
            poisson::densify_with_stats(&scene.sparse, &scene.prior, &CgSettings::default())
                .unwrap();
        assert!(report.converged);
        let w = stats.operator_touches as f64 / (stats.iterations as f64 * (side * side) as f64);
        assert!(w <= 7.0, "side {side}: {w} touches per pixel-iteration");
        per_pixel.push(w);
    }
    let lo = per_pixel.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = per_pixel.iter().copied().fold(0.0f64, f64::max);
    assert!(
        hi / lo <= 1.5,
        "work per pixel-iteration spreads {lo:.3}..{hi:.3}"
    );
    println!(
        "criterion 11 (performance envelope): PASS — 1216x352 in {elapsed:.2}s ({} iterations), work/pixel/iter {lo:.3}..{hi:.3}",
        report.iterations
    );
}
