//! Masked evaluation metrics and loss functionals.
//!
//! The validity mask is `gt > 0` everywhere; invalid pixels never contribute
//! to a sum. RMSE and MAE are reported in meters on raw grids, the two loss
//! functionals operate on depth normalized by the dataset maximum.

use crate::error::{Error, Result};
use crate::grid::DepthGrid;

/// Default epsilon for the scale-invariant log loss.
pub const SILOG_EPSILON: f64 = 1e-6;

/// Metrics and losses for one prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalReport {
    /// Root-mean-square error in meters, over valid pixels.
    pub rmse: f64,
    /// Mean absolute error in meters, over valid pixels.
    pub mae: f64,
    /// Composite L1+L2 loss in normalized depth space.
    pub l1l2: f64,
    /// Scale-invariant log loss in normalized depth space.
    pub silog: f64,
    /// `max(1, number of valid ground-truth pixels)`.
    pub valid_pixel_count: usize,
}

impl EvalReport {
    /// Flat `key=value` block, one entry per line.
    pub fn to_kv_block(&self) -> String {
        format!(
            "rmse={}\nmae={}\nl1l2={}\nsilog={}\nn={}",
            self.rmse, self.mae, self.l1l2, self.silog, self.valid_pixel_count
        )
    }

    pub fn csv_header() -> &'static str {
        "rmse,mae,l1l2,silog,n"
    }

    pub fn to_csv_row(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.rmse, self.mae, self.l1l2, self.silog, self.valid_pixel_count
        )
    }
}

/// `clip(depth / d_max, 0, 1)`.
pub fn normalize(depth: &DepthGrid, d_max: f64) -> Result<DepthGrid> {
    if !(d_max > 0.0 && d_max.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "d_max must be positive, got {d_max}"
        )));
    }
    let values: Vec<f64> = depth
        .values()
        .iter()
        .map(|&v| (v / d_max).clamp(0.0, 1.0))
        .collect();
    DepthGrid::new(depth.height(), depth.width(), values)
}

/// Masked RMSE and MAE in the input units, with `n = max(1, sum of mask)`.
pub fn masked_rmse_mae(pred: &DepthGrid, gt: &DepthGrid) -> Result<(f64, f64, usize)> {
    check_dims(pred, gt)?;
    let mut n = 0usize;
    let mut sq = 0.0;
    let mut ab = 0.0;
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if g > 0.0 {
            let e = p - g;
            sq += e * e;
            ab += e.abs();
            n += 1;
        }
    }
    let denom = n.max(1) as f64;
    Ok(((sq / denom).sqrt(), ab / denom, n.max(1)))
}

/// Composite loss `(1/n) * sum(|e| + e^2)` over masked errors.
pub fn l1l2_loss(pred: &DepthGrid, gt: &DepthGrid) -> Result<f64> {
    check_dims(pred, gt)?;
    let mut n = 0usize;
    let mut acc = 0.0;
    for (&p, &g) in pred.values().iter().zip(gt.values()) {
        if g > 0.0 {
            let e = p - g;
            acc += e.abs() + e * e;
            n += 1;
        }
    }
    Ok(acc / n.max(1) as f64)
}

/// Scale-invariant log loss: the variance of masked log differences
/// `log(max(pred, eps) + eps) - log(gt + eps)`. The epsilon floor keeps the
/// logarithm total; a global rescaling of the prediction only shifts the
/// log differences and leaves the variance unchanged.
pub fn silog_loss(pred_rel: &DepthGrid, gt: &DepthGrid, epsilon: f64) -> Result<f64> {
    check_dims(pred_rel, gt)?;
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidValue(format!(
            "epsilon must be positive, got {epsilon}"
        )));
    }
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    for (&p, &g) in pred_rel.values().iter().zip(gt.values()) {
        if g > 0.0 {
            let d = (p.max(epsilon) + epsilon).ln() - (g + epsilon).ln();
            sum += d;
            sum_sq += d * d;
            n += 1;
        }
    }
    let denom = n.max(1) as f64;
    let mean = sum / denom;
    Ok((sum_sq / denom - mean * mean).max(0.0))
}

/// Convenience bundle: meters-scale metrics on the raw pair, loss
/// functionals on the `d_max`-normalized pair.
pub fn evaluate(pred: &DepthGrid, gt: &DepthGrid, d_max: f64) -> Result<EvalReport> {
    let (rmse, mae, n) = masked_rmse_mae(pred, gt)?;
    let pred_n = normalize(pred, d_max)?;
    let gt_n = normalize(gt, d_max)?;
    let l1l2 = l1l2_loss(&pred_n, &gt_n)?;
    let silog = silog_loss(&pred_n, &gt_n, SILOG_EPSILON)?;
    Ok(EvalReport {
        rmse,
        mae,
        l1l2,
        silog,
        valid_pixel_count: n,
    })
}

fn check_dims(pred: &DepthGrid, gt: &DepthGrid) -> Result<()> {
    if pred.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: pred.dims(),
            found: gt.dims(),
        });
    }
    Ok(())
}
