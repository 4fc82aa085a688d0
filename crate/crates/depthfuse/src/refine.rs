//! Affinity-based refinement: pixels are embedded in a Poincaré ball, each
//! pixel mixes its neighborhood with row-stochastic weights derived from
//! hyperbolic distances, a per-pixel gate blends the kernel sizes, and
//! observed pixels are pulled back toward the raw sensor depth.
//!
//! Every update is a convex combination, so iterates stay inside the value
//! range of their inputs before the final `[0, d_max]` clamp. All learned
//! coefficients arrive through [`RefineParams`]; nothing here trains.

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DepthGrid, Dims, FeatureGrid, ScalarGrid};

/// Clamp applied to norms before `atanh`/division so rounding at the ball
/// boundary can never produce infinities.
const BOUNDARY_EPS: f64 = 1e-7;

/// Dense row-major coefficient matrix for the small learned maps.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl LinearMap {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                found: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(
                "linear map holds non-finite coefficient".into(),
            ));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        for i in 0..n {
            data[i * n + i] = 1.0;
        }
        Self { rows: n, cols: n, data }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn apply(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, slot) in out.iter_mut().enumerate() {
            *slot = dot(self.row(r), x);
        }
    }
}

/// Configuration for one refinement run. The affine heads `g` and `w_alpha`
/// carry a trailing bias coefficient (column `channels`), which is how the
/// default anchor strength of 0.9 at zero features is expressed.
#[derive(Debug, Clone)]
pub struct RefineParams {
    /// Poincaré-ball curvature, shared across kernels. Must be > 0.
    pub kappa: f64,
    /// Odd kernel sizes, e.g. `[3, 5, 7]`.
    pub kernel_sizes: Vec<usize>,
    /// Softmax temperature per kernel; larger flattens the weights.
    pub temperatures: Vec<f64>,
    /// Propagation iterations, at least 1.
    pub iterations: usize,
    /// Depth clamp bound in meters.
    pub d_max: f64,
    /// Feature projection into the embedding space, `C_e x C`.
    pub w_f: LinearMap,
    /// Kernel-gate head, `K x (C + 1)` with bias column last.
    pub g: LinearMap,
    /// Anchor head, `C + 1` coefficients with bias last.
    pub w_alpha: Vec<f64>,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self::default_for_channels(5)
    }
}

impl RefineParams {
    /// Deterministic defaults for `channels`-wide features: identity
    /// projection, uniform gates, anchor strength 0.9 everywhere.
    pub fn default_for_channels(channels: usize) -> Self {
        let kernel_sizes = vec![3, 5, 7];
        let mut w_alpha = vec![0.0; channels + 1];
        w_alpha[channels] = 9.0f64.ln(); // logistic(ln 9) = 0.9
        Self {
            kappa: 1.0,
            temperatures: vec![0.1, 0.2, 0.4],
            iterations: 6,
            d_max: 90.0,
            w_f: LinearMap::identity(channels),
            g: LinearMap::zeros(kernel_sizes.len(), channels + 1),
            w_alpha,
            kernel_sizes,
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "curvature must be positive, got {}",
                self.kappa
            )));
        }
        if self.kernel_sizes.is_empty() {
            return Err(Error::InvalidValue("kernel set is empty".into()));
        }
        for &k in &self.kernel_sizes {
            if k < 3 || k % 2 == 0 {
                return Err(Error::InvalidValue(format!(
                    "kernel sizes must be odd and >= 3, got {k}"
                )));
            }
        }
        if self.temperatures.len() != self.kernel_sizes.len() {
            return Err(Error::LengthMismatch {
                expected: self.kernel_sizes.len(),
                found: self.temperatures.len(),
            });
        }
        if self.temperatures.iter().any(|&t| !(t > 0.0 && t.is_finite())) {
            return Err(Error::InvalidValue(
                "temperatures must all be positive".into(),
            ));
        }
        if self.iterations < 1 {
            return Err(Error::InvalidValue(
                "iteration count must be at least 1".into(),
            ));
        }
        if !(self.d_max > 0.0 && self.d_max.is_finite()) {
            return Err(Error::InvalidValue(format!(
                "d_max must be positive, got {}",
                self.d_max
            )));
        }
        if self.w_f.cols() != channels || self.w_f.rows() == 0 {
            return Err(Error::InvalidValue(format!(
                "feature projection is {}x{}, expected _x{channels}",
                self.w_f.rows(),
                self.w_f.cols()
            )));
        }
        if self.g.rows() != self.kernel_sizes.len() || self.g.cols() != channels + 1 {
            return Err(Error::InvalidValue(format!(
                "gate head is {}x{}, expected {}x{}",
                self.g.rows(),
                self.g.cols(),
                self.kernel_sizes.len(),
                channels + 1
            )));
        }
        if self.w_alpha.len() != channels + 1 {
            return Err(Error::LengthMismatch {
                expected: channels + 1,
                found: self.w_alpha.len(),
            });
        }
        Ok(())
    }
}

/// Precomputed row-stochastic neighborhood weights per kernel, plus the
/// per-pixel kernel gates. Out-of-grid slots hold weight zero and the
/// normalization runs over the surviving members only.
#[derive(Debug, Clone)]
pub struct AffinityStack {
    height: usize,
    width: usize,
    kernel_sizes: Vec<usize>,
    /// Per kernel: `H*W*k*k` weights, pixel-major, patch slot fastest.
    weights: Vec<Vec<f64>>,
    /// `H*W*K` gate values, pixel-major.
    gates: Vec<f64>,
}

impl AffinityStack {
    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    pub fn kernel_sizes(&self) -> &[usize] {
        &self.kernel_sizes
    }

    /// Patch weights of pixel `(i, j)` under kernel index `k_idx`, row-major
    /// over the `k*k` window.
    pub fn patch_weights(&self, k_idx: usize, i: usize, j: usize) -> &[f64] {
        let k = self.kernel_sizes[k_idx];
        let start = (i * self.width + j) * k * k;
        &self.weights[k_idx][start..start + k * k]
    }

    /// Gate vector of pixel `(i, j)`, one entry per kernel.
    pub fn gates_at(&self, i: usize, j: usize) -> &[f64] {
        let k = self.kernel_sizes.len();
        let start = (i * self.width + j) * k;
        &self.gates[start..start + k]
    }
}

/// Möbius addition in the curvature-`kappa` Poincaré ball.
pub fn mobius_add(x: &[f64], y: &[f64], kappa: f64) -> Vec<f64> {
    debug_assert_eq!(x.len(), y.len());
    let x2 = dot(x, x);
    let y2 = dot(y, y);
    let xy = dot(x, y);
    let cu = 1.0 + 2.0 * kappa * xy + kappa * y2;
    let cv = 1.0 - kappa * x2;
    let den = (1.0 + 2.0 * kappa * xy + kappa * kappa * x2 * y2).max(1e-15);
    x.iter()
        .zip(y)
        .map(|(&xi, &yi)| (cu * xi + cv * yi) / den)
        .collect()
}

/// Exponential map at the origin: `tanh(sqrt(k) ||v||) * v / (sqrt(k) ||v||)`.
/// Fixes the origin and lands strictly inside the ball; the tanh factor is
/// capped below one so saturated inputs cannot reach the boundary.
pub fn exp_map_origin(v: &[f64], kappa: f64) -> Result<Vec<f64>> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "curvature must be positive, got {kappa}"
        )));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidValue("embedding input is not finite".into()));
    }
    let norm = dot(v, v).sqrt();
    if norm == 0.0 {
        return Ok(vec![0.0; v.len()]);
    }
    let sk = kappa.sqrt();
    let t = (sk * norm).tanh().min(1.0 - BOUNDARY_EPS);
    let scale = t / (sk * norm);
    Ok(v.iter().map(|&x| x * scale).collect())
}

/// Hyperbolic distance `2/sqrt(k) * atanh(sqrt(k) ||(-x) (+) y||)` between
/// two in-ball points. Errors if either argument lies on or outside the
/// boundary.
pub fn poincare_distance(x: &[f64], y: &[f64], kappa: f64) -> Result<f64> {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "curvature must be positive, got {kappa}"
        )));
    }
    let sk = kappa.sqrt();
    if sk * dot(x, x).sqrt() >= 1.0 || sk * dot(y, y).sqrt() >= 1.0 {
        return Err(Error::OutsideBall);
    }
    Ok(distance_in_ball(x, y, kappa))
}

/// Distance for arguments already known to be inside the ball.
fn distance_in_ball(x: &[f64], y: &[f64], kappa: f64) -> f64 {
    if x == y {
        return 0.0;
    }
    let neg_x: Vec<f64> = x.iter().map(|&v| -v).collect();
    let m = mobius_add(&neg_x, y, kappa);
    let sk = kappa.sqrt();
    let arg = (sk * dot(&m, &m).sqrt()).min(1.0 - BOUNDARY_EPS);
    2.0 / sk * arg.atanh()
}

/// Builds the row-stochastic affinity weights and kernel gates for a
/// feature grid. Weights follow `exp(-d(h_p, h_q) / tau_k)` over each
/// in-grid neighborhood; gates are a per-pixel softmax over the kernel set.
pub fn affinity_weights(features: &FeatureGrid, params: &RefineParams) -> Result<AffinityStack> {
    params.validate(features.channels())?;
    let (h, w) = (features.height(), features.width());
    let k_max = *params.kernel_sizes.iter().max().unwrap();
    if h < k_max || w < k_max {
        return Err(Error::GridTooSmall {
            found: features.dims(),
            min_side: k_max,
        });
    }

    // Embed every pixel once.
    let ce = params.w_f.rows();
    let mut embedded = vec![0.0; h * w * ce];
    let mut projected = vec![0.0; ce];
    for i in 0..h {
        for j in 0..w {
            params.w_f.apply(features.at(i, j), &mut projected);
            let ball = exp_map_origin(&projected, params.kappa)?;
            embedded[(i * w + j) * ce..(i * w + j + 1) * ce].copy_from_slice(&ball);
        }
    }
    let emb = |i: usize, j: usize| &embedded[(i * w + j) * ce..(i * w + j + 1) * ce];

    let mut weights = Vec::with_capacity(params.kernel_sizes.len());
    for (k_idx, &k) in params.kernel_sizes.iter().enumerate() {
        let r = (k / 2) as isize;
        let tau = params.temperatures[k_idx];
        let mut layer = vec![0.0; h * w * k * k];
        for i in 0..h {
            for j in 0..w {
                let base = (i * w + j) * k * k;
                let mut sum = 0.0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let qi = i as isize + di;
                        let qj = j as isize + dj;
                        if qi < 0 || qj < 0 || qi >= h as isize || qj >= w as isize {
                            continue;
                        }
                        let d = distance_in_ball(
                            emb(i, j),
                            emb(qi as usize, qj as usize),
                            params.kappa,
                        );
                        let slot = ((di + r) * k as isize + (dj + r)) as usize;
                        let wq = (-d / tau).exp();
                        layer[base + slot] = wq;
                        sum += wq;
                    }
                }
                // The window always contains the center (distance zero,
                // weight one), so the sum is at least one.
                for slot in 0..k * k {
                    layer[base + slot] /= sum;
                }
            }
        }
        weights.push(layer);
    }

    // Kernel gates: softmax of the affine head over the feature vector.
    let kn = params.kernel_sizes.len();
    let mut gates = vec![0.0; h * w * kn];
    for i in 0..h {
        for j in 0..w {
            let f = features.at(i, j);
            let base = (i * w + j) * kn;
            let mut max_logit = f64::NEG_INFINITY;
            for k_idx in 0..kn {
                let row = params.g.row(k_idx);
                let logit = dot(&row[..f.len()], f) + row[f.len()];
                gates[base + k_idx] = logit;
                max_logit = max_logit.max(logit);
            }
            let mut sum = 0.0;
            for k_idx in 0..kn {
                let e = (gates[base + k_idx] - max_logit).exp();
                gates[base + k_idx] = e;
                sum += e;
            }
            for k_idx in 0..kn {
                gates[base + k_idx] /= sum;
            }
        }
    }

    Ok(AffinityStack {
        height: h,
        width: w,
        kernel_sizes: params.kernel_sizes.clone(),
        weights,
        gates,
    })
}

/// One propagation step: every patch is re-centered on the initialization
/// (the center slot reads `init`, all other slots read `current`), each
/// kernel averages its patch with the precomputed weights, and the gates
/// mix the per-kernel results.
pub fn center_tethered_step(
    current: &DepthGrid,
    init: &DepthGrid,
    affinity: &AffinityStack,
) -> Result<DepthGrid> {
    if current.dims() != init.dims() {
        return Err(Error::DimensionMismatch {
            expected: current.dims(),
            found: init.dims(),
        });
    }
    if current.dims() != affinity.dims() {
        return Err(Error::DimensionMismatch {
            expected: current.dims(),
            found: affinity.dims(),
        });
    }
    let (h, w) = (current.height(), current.width());
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let gates = affinity.gates_at(i, j);
            let mut mixed = 0.0;
            for (k_idx, &k) in affinity.kernel_sizes.iter().enumerate() {
                let r = (k / 2) as isize;
                let patch = affinity.patch_weights(k_idx, i, j);
                let mut acc = 0.0;
                for di in -r..=r {
                    for dj in -r..=r {
                        let qi = i as isize + di;
                        let qj = j as isize + dj;
                        if qi < 0 || qj < 0 || qi >= h as isize || qj >= w as isize {
                            continue;
                        }
                        let slot = ((di + r) * k as isize + (dj + r)) as usize;
                        let val = if di == 0 && dj == 0 {
                            init.get(i, j)
                        } else {
                            current.get(qi as usize, qj as usize)
                        };
                        acc += patch[slot] * val;
                    }
                }
                mixed += gates[k_idx] * acc;
            }
            out[i * w + j] = mixed;
        }
    }
    DepthGrid::new(h, w, out)
}

/// Per-pixel anchor strength `logistic(w_alpha . [F(p); 1])`.
pub fn anchor_map(features: &FeatureGrid, params: &RefineParams) -> Result<Vec<f64>> {
    params.validate(features.channels())?;
    let (h, w) = (features.height(), features.width());
    let c = features.channels();
    let mut alpha = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let f = features.at(i, j);
            let z = dot(&params.w_alpha[..c], f) + params.w_alpha[c];
            alpha[i * w + j] = logistic(z);
        }
    }
    Ok(alpha)
}

/// Blends the gated mix toward the raw sensor depth at observed pixels:
/// `(1 - a) * mixed + a * sensor` where the mask is set, `mixed` elsewhere.
pub fn sensor_anchor_blend(
    mixed: &DepthGrid,
    sensor: &DepthGrid,
    mask: &BinaryMask,
    features: &FeatureGrid,
    params: &RefineParams,
) -> Result<DepthGrid> {
    let alpha = anchor_map(features, params)?;
    blend_with_alpha(mixed, sensor, mask, &alpha)
}

fn blend_with_alpha(
    mixed: &DepthGrid,
    sensor: &DepthGrid,
    mask: &BinaryMask,
    alpha: &[f64],
) -> Result<DepthGrid> {
    for dims in [sensor.dims(), mask.dims()] {
        if dims != mixed.dims() {
            return Err(Error::DimensionMismatch {
                expected: mixed.dims(),
                found: dims,
            });
        }
    }
    let (h, w) = (mixed.height(), mixed.width());
    let mut out = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let m = mixed.get(i, j);
            out.push(if mask.get(i, j) {
                let a = alpha[i * w + j];
                (1.0 - a) * m + a * sensor.get(i, j)
            } else {
                m
            });
        }
    }
    DepthGrid::new(h, w, out)
}

/// Full refinement loop: `iterations` rounds of center-tethered propagation
/// followed by sensor anchoring, then a `[0, d_max]` clamp. The tether and
/// the anchor strengths are both computed once from the static inputs.
pub fn refine(
    init: &DepthGrid,
    sensor: &DepthGrid,
    mask: &BinaryMask,
    features: &FeatureGrid,
    params: &RefineParams,
) -> Result<DepthGrid> {
    params.validate(features.channels())?;
    for dims in [sensor.dims(), mask.dims(), features.dims()] {
        if dims != init.dims() {
            return Err(Error::DimensionMismatch {
                expected: init.dims(),
                found: dims,
            });
        }
    }
    let affinity = affinity_weights(features, params)?;
    let alpha = anchor_map(features, params)?;

    let mut current = init.clone();
    for _ in 0..params.iterations {
        let mixed = center_tethered_step(&current, init, &affinity)?;
        current = blend_with_alpha(&mixed, sensor, mask, &alpha)?;
    }

    let clamped: Vec<f64> = current
        .values()
        .iter()
        .map(|&v| v.clamp(0.0, params.d_max))
        .collect();
    DepthGrid::new(init.height(), init.width(), clamped)
}

/// Five deterministic feature channels standing in for a learned encoder:
/// normalized intensity, normalized row and column coordinates, and the
/// prior's horizontal and vertical forward differences, each scaled to
/// `[-1, 1]`.
pub fn handcrafted_features(image: &DepthGrid, prior: &DepthGrid) -> Result<FeatureGrid> {
    if image.dims() != prior.dims() {
        return Err(Error::DimensionMismatch {
            expected: image.dims(),
            found: prior.dims(),
        });
    }
    let (h, w) = (image.height(), image.width());

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &v in image.values() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let span = hi - lo;

    let gx = |i: usize, j: usize| {
        if j + 1 < w {
            prior.get(i, j + 1) - prior.get(i, j)
        } else {
            0.0
        }
    };
    let gy = |i: usize, j: usize| {
        if i + 1 < h {
            prior.get(i + 1, j) - prior.get(i, j)
        } else {
            0.0
        }
    };
    let mut gmax: f64 = 0.0;
    for i in 0..h {
        for j in 0..w {
            gmax = gmax.max(gx(i, j).abs()).max(gy(i, j).abs());
        }
    }

    let mut values = Vec::with_capacity(h * w * 5);
    for i in 0..h {
        for j in 0..w {
            values.push(if span > 0.0 {
                2.0 * (image.get(i, j) - lo) / span - 1.0
            } else {
                0.0
            });
            values.push(if h > 1 {
                2.0 * i as f64 / (h - 1) as f64 - 1.0
            } else {
                0.0
            });
            values.push(if w > 1 {
                2.0 * j as f64 / (w - 1) as f64 - 1.0
            } else {
                0.0
            });
            values.push(if gmax > 0.0 { gx(i, j) / gmax } else { 0.0 });
            values.push(if gmax > 0.0 { gy(i, j) / gmax } else { 0.0 });
        }
    }
    FeatureGrid::new(h, w, 5, values)
}

/// Adds an externally supplied residual to the densified map and clamps to
/// `[0, d_max]`. Callers without a residual pass a zero grid.
pub fn residual_init(
    pseudo: &DepthGrid,
    residual: &ScalarGrid,
    d_max: f64,
) -> Result<DepthGrid> {
    if pseudo.dims() != residual.dims() {
        return Err(Error::DimensionMismatch {
            expected: pseudo.dims(),
            found: residual.dims(),
        });
    }
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "d_max must be positive, got {d_max}"
        )));
    }
    let values: Vec<f64> = pseudo
        .values()
        .iter()
        .zip(residual.values())
        .map(|(&p, &r)| (p + r).clamp(0.0, d_max))
        .collect();
    DepthGrid::new(pseudo.height(), pseudo.width(), values)
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

#[inline]
fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}
