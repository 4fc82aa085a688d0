//! Independent small-scale references for validating the fast paths.
//!
//! Everything here is written in a deliberately naive style — explicit
//! loops, an explicitly assembled matrix, no shared helpers with the
//! modules under test — so that agreement between the two routes is
//! meaningful evidence rather than tautology.

// Index loops are the point here; keep the transliteration literal.
#![allow(clippy::needless_range_loop)]

use crate::dataset::{synth_sparse, SparsityMode, SparsitySpec};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DepthGrid, FeatureGrid};
use crate::refine::RefineParams;
use crate::rng::XorShift64Star;

/// Dense assembly budget in pixels.
pub const DENSE_PIXEL_LIMIT: usize = 4096;

/// Explicitly assembled restricted system.
pub struct DenseSystem {
    /// Unknown pixels in row-major order.
    pub unknowns: Vec<(usize, usize)>,
    /// Row-major `n x n` operator matrix.
    pub matrix: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Assembles the restricted operator and right-hand side entry by entry.
pub fn dense_system(sparse: &DepthGrid, prior: &DepthGrid) -> Result<DenseSystem> {
    let (h, w) = (sparse.height(), sparse.width());
    if prior.dims() != sparse.dims() {
        return Err(Error::DimensionMismatch {
            expected: sparse.dims(),
            found: prior.dims(),
        });
    }
    if h * w > DENSE_PIXEL_LIMIT {
        return Err(Error::SizeExceeded {
            pixels: h * w,
            limit: DENSE_PIXEL_LIMIT,
        });
    }
    if h < 3 || w < 3 {
        return Err(Error::GridTooSmall {
            found: sparse.dims(),
            min_side: 3,
        });
    }

    // Re-derive the partition with plain loops.
    let mut rank = vec![usize::MAX; h * w];
    let mut unknowns = Vec::new();
    for i in 0..h {
        for j in 0..w {
            let border = i == 0 || i == h - 1 || j == 0 || j == w - 1;
            if !border && sparse.get(i, j) <= 0.0 {
                rank[i * w + j] = unknowns.len();
                unknowns.push((i, j));
            }
        }
    }

    // Boundary data: measurement, else prior on the border, else zero.
    let mut v = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let border = i == 0 || i == h - 1 || j == 0 || j == w - 1;
            if sparse.get(i, j) > 0.0 {
                v[i * w + j] = sparse.get(i, j);
            } else if border {
                v[i * w + j] = prior.get(i, j);
            }
        }
    }

    let n = unknowns.len();
    let mut matrix = vec![0.0; n * n];
    let mut rhs = vec![0.0; n];
    for (r, &(i, j)) in unknowns.iter().enumerate() {
        matrix[r * n + r] = 4.0;
        let neighbors = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)];
        for &(ni, nj) in &neighbors {
            let nr = rank[ni * w + nj];
            if nr != usize::MAX {
                matrix[r * n + nr] = -1.0;
            }
        }
        let le = 4.0 * prior.get(i, j)
            - prior.get(i - 1, j)
            - prior.get(i + 1, j)
            - prior.get(i, j - 1)
            - prior.get(i, j + 1);
        let lv = 4.0 * v[i * w + j]
            - v[(i - 1) * w + j]
            - v[(i + 1) * w + j]
            - v[i * w + j - 1]
            - v[i * w + j + 1];
        rhs[r] = le - lv;
    }

    Ok(DenseSystem {
        unknowns,
        matrix,
        rhs,
    })
}

/// Direct solve of the restricted system by (naive) Cholesky factorization,
/// followed by the same reconstruction as the fast path: measurements and
/// boundary data copied, unknowns from the solve, floored at zero.
pub fn dense_poisson_solve(sparse: &DepthGrid, prior: &DepthGrid) -> Result<DepthGrid> {
    let system = dense_system(sparse, prior)?;
    let n = system.unknowns.len();
    let x = cholesky_solve(n, system.matrix.clone(), &system.rhs)?;

    let (h, w) = (sparse.height(), sparse.width());
    let mut values = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let border = i == 0 || i == h - 1 || j == 0 || j == w - 1;
            if sparse.get(i, j) > 0.0 {
                values[i * w + j] = sparse.get(i, j);
            } else if border {
                values[i * w + j] = prior.get(i, j);
            }
        }
    }
    for (r, &(i, j)) in system.unknowns.iter().enumerate() {
        values[i * w + j] = x[r].max(0.0);
    }
    DepthGrid::new(h, w, values)
}

/// Textbook Cholesky: factor `a = L L^T` in place, then two substitutions.
fn cholesky_solve(n: usize, mut a: Vec<f64>, b: &[f64]) -> Result<Vec<f64>> {
    for k in 0..n {
        let mut d = a[k * n + k];
        for m in 0..k {
            d -= a[k * n + m] * a[k * n + m];
        }
        if d <= 0.0 {
            return Err(Error::NumericFailure(format!(
                "non-positive pivot {d} at row {k}"
            )));
        }
        let lkk = d.sqrt();
        a[k * n + k] = lkk;
        for i in k + 1..n {
            let mut s = a[i * n + k];
            for m in 0..k {
                s -= a[i * n + m] * a[k * n + m];
            }
            a[i * n + k] = s / lkk;
        }
    }

    // L y = b
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for m in 0..i {
            s -= a[i * n + m] * y[m];
        }
        y[i] = s / a[i * n + i];
    }
    // L^T x = y
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for m in i + 1..n {
            s -= a[m * n + i] * x[m];
        }
        x[i] = s / a[i * n + i];
    }
    Ok(x)
}

/// Scalar transliteration of the refinement loop: embeddings, distances,
/// weights, tether, gates, and anchoring all recomputed inline per pixel.
pub fn reference_propagate(
    init: &DepthGrid,
    sensor: &DepthGrid,
    mask: &BinaryMask,
    features: &FeatureGrid,
    params: &RefineParams,
) -> Result<DepthGrid> {
    params.validate(features.channels())?;
    let (h, w) = (init.height(), init.width());
    if h * w > DENSE_PIXEL_LIMIT {
        return Err(Error::SizeExceeded {
            pixels: h * w,
            limit: DENSE_PIXEL_LIMIT,
        });
    }
    for dims in [sensor.dims(), mask.dims(), features.dims()] {
        if dims != init.dims() {
            return Err(Error::DimensionMismatch {
                expected: init.dims(),
                found: dims,
            });
        }
    }

    let c = features.channels();
    let ce = params.w_f.rows();
    let sk = params.kappa.sqrt();

    // Embed every pixel: project, then the origin exponential map.
    let mut emb = vec![vec![0.0f64; ce]; h * w];
    for i in 0..h {
        for j in 0..w {
            let f = features.at(i, j);
            let u = &mut emb[i * w + j];
            for r in 0..ce {
                let mut s = 0.0;
                for k in 0..c {
                    s += params.w_f.row(r)[k] * f[k];
                }
                u[r] = s;
            }
            let mut norm = 0.0;
            for r in 0..ce {
                norm += u[r] * u[r];
            }
            norm = norm.sqrt();
            if norm > 0.0 {
                let t = (sk * norm).tanh().min(1.0 - 1e-7);
                for r in 0..ce {
                    u[r] *= t / (sk * norm);
                }
            }
        }
    }

    let hyper_dist = |a: &[f64], b: &[f64]| -> f64 {
        // Mobius addition of (-a) and b, then 2/sqrt(k) * atanh(sqrt(k)|m|).
        let mut a2 = 0.0;
        let mut b2 = 0.0;
        let mut ab = 0.0;
        for r in 0..ce {
            a2 += a[r] * a[r];
            b2 += b[r] * b[r];
            ab += -a[r] * b[r];
        }
        let cu = 1.0 + 2.0 * params.kappa * ab + params.kappa * b2;
        let cv = 1.0 - params.kappa * a2;
        let den = (1.0 + 2.0 * params.kappa * ab + params.kappa * params.kappa * a2 * b2)
            .max(1e-15);
        let mut m2 = 0.0;
        for r in 0..ce {
            let mr = (cu * (-a[r]) + cv * b[r]) / den;
            m2 += mr * mr;
        }
        let arg = (sk * m2.sqrt()).min(1.0 - 1e-7);
        2.0 / sk * arg.atanh()
    };

    // Gates and anchor strengths per pixel.
    let kn = params.kernel_sizes.len();
    let mut gates = vec![0.0f64; h * w * kn];
    let mut alpha = vec![0.0f64; h * w];
    for i in 0..h {
        for j in 0..w {
            let f = features.at(i, j);
            let mut sum = 0.0;
            for k_idx in 0..kn {
                let row = params.g.row(k_idx);
                let mut z = row[c];
                for k in 0..c {
                    z += row[k] * f[k];
                }
                let e = z.exp();
                gates[(i * w + j) * kn + k_idx] = e;
                sum += e;
            }
            for k_idx in 0..kn {
                gates[(i * w + j) * kn + k_idx] /= sum;
            }
            let mut z = params.w_alpha[c];
            for k in 0..c {
                z += params.w_alpha[k] * f[k];
            }
            alpha[i * w + j] = 1.0 / (1.0 + (-z).exp());
        }
    }

    let d0: Vec<f64> = init.values().to_vec();
    let mut d = d0.clone();
    for _ in 0..params.iterations {
        let mut next = vec![0.0f64; h * w];
        for i in 0..h {
            for j in 0..w {
                let mut mixed = 0.0;
                for (k_idx, &k) in params.kernel_sizes.iter().enumerate() {
                    let r = (k / 2) as isize;
                    let tau = params.temperatures[k_idx];
                    let mut num = 0.0;
                    let mut den = 0.0;
                    for di in -r..=r {
                        for dj in -r..=r {
                            let qi = i as isize + di;
                            let qj = j as isize + dj;
                            if qi < 0 || qj < 0 || qi >= h as isize || qj >= w as isize {
                                continue;
                            }
                            let (qi, qj) = (qi as usize, qj as usize);
                            let dist = hyper_dist(&emb[i * w + j], &emb[qi * w + qj]);
                            let weight = (-dist / tau).exp();
                            let val = if di == 0 && dj == 0 {
                                d0[i * w + j]
                            } else {
                                d[qi * w + qj]
                            };
                            num += weight * val;
                            den += weight;
                        }
                    }
                    mixed += gates[(i * w + j) * kn + k_idx] * num / den;
                }
                next[i * w + j] = if mask.get(i, j) {
                    let a = alpha[i * w + j];
                    (1.0 - a) * mixed + a * sensor.get(i, j)
                } else {
                    mixed
                };
            }
        }
        d = next;
    }

    let clamped: Vec<f64> = d.iter().map(|&v| v.clamp(0.0, params.d_max)).collect();
    DepthGrid::new(h, w, clamped)
}

/// A synthetic desk-scale scene: piecewise-smooth ground truth, a prior
/// distorted by smooth low-frequency gain and bias fields, and a ~6% sparse
/// sample. Fully determined by the seed.
pub struct SyntheticScene {
    pub dense_gt: DepthGrid,
    pub prior: DepthGrid,
    pub sparse: DepthGrid,
    pub mask: BinaryMask,
    pub seed: u64,
}

/// Gain amplitude of the prior distortion.
const GAIN_AMPLITUDE: f64 = 0.2;
/// Bias amplitude of the prior distortion, meters.
const BIAS_AMPLITUDE: f64 = 1.0;

pub fn synth_scene(height: usize, width: usize, seed: u64) -> Result<SyntheticScene> {
    if height < 8 || width < 8 {
        return Err(Error::GridTooSmall {
            found: crate::grid::Dims::new(height, width),
            min_side: 8,
        });
    }
    let mut rng = XorShift64Star::new(seed);

    // Base plane with bounded slopes, depth kept within [2, 30] m.
    let d0 = rng.range_f64(12.0, 18.0);
    let gx = rng.range_f64(-4.0, 4.0);
    let gy = rng.range_f64(-4.0, 4.0);
    let mut gt = vec![0.0f64; height * width];
    for i in 0..height {
        for j in 0..width {
            gt[i * width + j] = d0
                + gx * j as f64 / (width - 1) as f64
                + gy * i as f64 / (height - 1) as f64;
        }
    }

    // A few rectangular step discontinuities.
    let n_rects = 2 + rng.below(3);
    for _ in 0..n_rects {
        let top = rng.below(height);
        let left = rng.below(width);
        let rh = 2 + rng.below(height / 2);
        let rw = 2 + rng.below(width / 2);
        let delta = (if rng.next_f64() < 0.5 { -1.0 } else { 1.0 }) * rng.range_f64(2.0, 5.0);
        for i in top..(top + rh).min(height) {
            for j in left..(left + rw).min(width) {
                gt[i * width + j] += delta;
            }
        }
    }
    for v in &mut gt {
        *v = v.clamp(2.0, 30.0);
    }
    let dense_gt = DepthGrid::new(height, width, gt)?;

    // Smooth low-frequency gain/bias distortion.
    let gain_field = smooth_field(height, width, &mut rng);
    let bias_field = smooth_field(height, width, &mut rng);
    let prior_values: Vec<f64> = dense_gt
        .values()
        .iter()
        .enumerate()
        .map(|(idx, &g)| {
            (1.0 + GAIN_AMPLITUDE * gain_field[idx]) * g + BIAS_AMPLITUDE * bias_field[idx]
        })
        .collect();
    let prior = DepthGrid::new(height, width, prior_values)?;

    let (sparse, mask) = synth_sparse(
        &dense_gt,
        &SparsitySpec {
            mode: SparsityMode::UniformRandom { density: 0.06 },
            seed: seed ^ 0xA5A5_5A5A_DEAD_BEEF,
        },
    )?;

    Ok(SyntheticScene {
        dense_gt,
        prior,
        sparse,
        mask,
        seed,
    })
}

/// Sum of three random-phase low-frequency sinusoids, normalized to
/// amplitude at most one.
fn smooth_field(height: usize, width: usize, rng: &mut XorShift64Star) -> Vec<f64> {
    let mut comps = Vec::new();
    let mut amp_sum = 0.0;
    for _ in 0..3 {
        let a = rng.range_f64(0.5, 1.0);
        let u = rng.range_f64(0.3, 1.5);
        let v = rng.range_f64(0.3, 1.5);
        let phase = rng.range_f64(0.0, std::f64::consts::TAU);
        amp_sum += a;
        comps.push((a, u, v, phase));
    }
    let mut field = vec![0.0f64; height * width];
    for i in 0..height {
        for j in 0..width {
            let mut s = 0.0;
            for &(a, u, v, phase) in &comps {
                s += a
                    * (std::f64::consts::TAU
                        * (u * i as f64 / height as f64 + v * j as f64 / width as f64)
                        + phase)
                        .sin();
            }
            field[i * width + j] = s / amp_sum;
        }
    }
    field
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::masked_rmse_mae;
    use crate::poisson::{densify, CgSettings};
    use crate::refine::refine;

    #[test]
    fn dense_solve_no_anchors_affine_prior_returns_prior() {
        let sparse = DepthGrid::zeros(7, 7);
        let prior = DepthGrid::from_fn(7, 7, |i, j| 3.0 + 0.5 * i as f64 + 0.25 * j as f64)
            .unwrap();
        let p = dense_poisson_solve(&sparse, &prior).unwrap();
        for (a, b) in p.values().iter().zip(prior.values()) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn dense_solve_singleton_closed_form() {
        let sparse = DepthGrid::zeros(3, 3);
        let prior = DepthGrid::constant(3, 3, 2.0).unwrap();
        let system = dense_system(&sparse, &prior).unwrap();
        assert_eq!(system.unknowns, vec![(1, 1)]);
        assert_eq!(system.matrix, vec![4.0]);
        assert!((system.rhs[0] - 8.0).abs() < 1e-12);
        let p = dense_poisson_solve(&sparse, &prior).unwrap();
        assert!((p.get(1, 1) - system.rhs[0] / 4.0).abs() < 1e-12);
    }

    #[test]
    fn dense_solve_residual_is_tiny() {
        let mut rng = XorShift64Star::new(41);
        let sparse = DepthGrid::from_fn(12, 12, |_, _| {
            if rng.next_f64() < 0.08 {
                2.0 + 8.0 * rng.next_f64()
            } else {
                0.0
            }
        })
        .unwrap();
        let prior = DepthGrid::from_fn(12, 12, |_, _| 2.0 + 10.0 * rng.next_f64()).unwrap();
        let system = dense_system(&sparse, &prior).unwrap();
        let n = system.unknowns.len();
        let x = cholesky_solve(n, system.matrix.clone(), &system.rhs).unwrap();
        for r in 0..n {
            let mut ax = 0.0;
            for c in 0..n {
                ax += system.matrix[r * n + c] * x[c];
            }
            assert!((ax - system.rhs[r]).abs() <= 1e-10);
        }
    }

    #[test]
    fn dense_solve_rejects_oversized_instances() {
        let sparse = DepthGrid::zeros(65, 65);
        let prior = DepthGrid::constant(65, 65, 1.0).unwrap();
        assert!(matches!(
            dense_poisson_solve(&sparse, &prior),
            Err(Error::SizeExceeded { .. })
        ));
    }

    #[test]
    fn reference_propagate_constant_and_full_anchor() {
        let c = DepthGrid::constant(8, 8, 5.0).unwrap();
        let f = FeatureGrid::new(8, 8, 5, vec![0.1; 8 * 8 * 5]).unwrap();
        let mask = BinaryMask::filled(8, 8, true);
        let params = RefineParams::default();
        let out = reference_propagate(&c, &c, &mask, &f, &params).unwrap();
        for &v in out.values() {
            assert!((v - 5.0).abs() < 1e-12);
        }

        // Saturated anchor head: the sensor wins wherever observed.
        let mut rng = XorShift64Star::new(42);
        let init = DepthGrid::from_fn(8, 8, |_, _| 1.0 + 7.0 * rng.next_f64()).unwrap();
        let sensor = DepthGrid::from_fn(8, 8, |_, _| 1.0 + 7.0 * rng.next_f64()).unwrap();
        let mut sat = RefineParams::default();
        sat.w_alpha[5] = 40.0;
        let out = reference_propagate(&init, &sensor, &mask, &f, &sat).unwrap();
        for (a, b) in out.values().iter().zip(sensor.values()) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn reference_matches_fast_path() {
        let mut rng = XorShift64Star::new(43);
        for trial in 0..10 {
            let init = DepthGrid::from_fn(8, 8, |_, _| 1.0 + 9.0 * rng.next_f64()).unwrap();
            let sensor = DepthGrid::from_fn(8, 8, |_, _| 1.0 + 9.0 * rng.next_f64()).unwrap();
            let mask =
                BinaryMask::new(8, 8, (0..64).map(|_| rng.next_f64() < 0.3).collect()).unwrap();
            let fv: Vec<f64> = (0..8 * 8 * 5).map(|_| rng.next_f64() * 2.0 - 1.0).collect();
            let features = FeatureGrid::new(8, 8, 5, fv).unwrap();
            let params = RefineParams {
                iterations: 1 + trial % 4,
                ..RefineParams::default()
            };
            let fast = refine(&init, &sensor, &mask, &features, &params).unwrap();
            let slow = reference_propagate(&init, &sensor, &mask, &features, &params).unwrap();
            for (a, b) in fast.values().iter().zip(slow.values()) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn scenes_are_deterministic_and_distorted() {
        for seed in [1u64, 7, 2026] {
            let a = synth_scene(16, 20, seed).unwrap();
            let b = synth_scene(16, 20, seed).unwrap();
            assert_eq!(a.dense_gt.values(), b.dense_gt.values());
            assert_eq!(a.prior.values(), b.prior.values());
            assert_eq!(a.sparse.values(), b.sparse.values());
            assert_eq!(a.mask, b.mask);
            let max_gap = a
                .dense_gt
                .values()
                .iter()
                .zip(a.prior.values())
                .map(|(g, p)| (g - p).abs())
                .fold(0.0f64, f64::max)
                ;
            assert!(max_gap > 0.0, "prior must differ from ground truth");
            assert!(a.prior.values().iter().all(|&v| v > 0.0));
            for (s, m) in a.sparse.values().iter().zip(a.mask.bits()) {
                assert_eq!(*s > 0.0, *m);
            }
        }
    }

    #[test]
    fn synth_scene_rejects_tiny_grids() {
        assert!(matches!(
            synth_scene(4, 20, 1),
            Err(Error::GridTooSmall { .. })
        ));
    }

    #[test]
    fn densify_improves_on_distorted_prior() {
        let mut improved = 0;
        for seed in 0..20u64 {
            let scene = synth_scene(32, 32, seed).unwrap();
            let (p, report) = densify(&scene.sparse, &scene.prior, &CgSettings::default()).unwrap();
            assert!(report.converged);
            let (rmse_fused, _, _) = masked_rmse_mae(&p, &scene.dense_gt).unwrap();
            let (rmse_prior, _, _) = masked_rmse_mae(&scene.prior, &scene.dense_gt).unwrap();
            if rmse_fused < rmse_prior {
                improved += 1;
            }
        }
        assert!(improved >= 18, "only {improved}/20 scenes improved");
    }
}
