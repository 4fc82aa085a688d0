//! Canonical raster types, masks, and the known/unknown pixel partition.
//!
//! Everything downstream works on row-major `f64` rasters. Depth values are
//! meters; a value of exactly `0` means "no measurement" wherever a validity
//! convention applies. All types are immutable after construction, so they
//! can be shared freely across threads.

use std::fmt;

use crate::error::{Error, Result};

/// Raster dimensions, `height x width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub height: usize,
    pub width: usize,
}

impl Dims {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

impl fmt::Display for Dims {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

fn check_same_dims(expected: Dims, found: Dims) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}

/// Dense depth raster in meters. `0` encodes "no value" where a validity
/// convention applies; stored values are always finite and non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl DepthGrid {
    /// Validates shape and value range. Every value must be finite and >= 0.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: values.len(),
            });
        }
        for &v in &values {
            if !v.is_finite() {
                return Err(Error::InvalidValue(format!(
                    "depth grid holds non-finite value {v}"
                )));
            }
            if v < 0.0 {
                return Err(Error::InvalidValue(format!(
                    "depth grid holds negative value {v}"
                )));
            }
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(height, width, vec![value; height * width])
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    /// Builds a grid from a per-pixel function of `(row, col)`.
    pub fn from_fn(
        height: usize,
        width: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut values = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                values.push(f(i, j));
            }
        }
        Self::new(height, width, values)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// True at pixels carrying a measurement (value > 0).
    pub fn valid_mask(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            bits: self.values.iter().map(|&v| v > 0.0).collect(),
        }
    }
}

/// Unconstrained scalar raster for derived fields (Laplacians, residuals)
/// that may carry either sign. Values are still required to be finite.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScalarGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(
                "scalar grid holds non-finite value".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            values,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Row-major boolean raster, paired with same-sized grids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: bits.len(),
            });
        }
        Ok(Self {
            height,
            width,
            bits,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            bits: vec![value; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.width + j]
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn count_set(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// Per-pixel feature vectors, `channels` floats per pixel, stored row-major
/// with the channel index fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGrid {
    height: usize,
    width: usize,
    channels: usize,
    values: Vec<f64>,
}

impl FeatureGrid {
    pub fn new(height: usize, width: usize, channels: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                expected: height * width * channels,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidValue(
                "feature grid holds non-finite value".into(),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            values,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    /// Feature vector at pixel `(i, j)`.
    #[inline]
    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        let start = (i * self.width + j) * self.channels;
        &self.values[start..start + self.channels]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The known set K (measured pixels plus the image border) and the unknown
/// set U, both in row-major order, with a dense pixel -> rank map for U.
#[derive(Debug, Clone)]
pub struct IndexPartition {
    height: usize,
    width: usize,
    known: Vec<(usize, usize)>,
    unknown: Vec<(usize, usize)>,
    unknown_rank: Vec<usize>, // usize::MAX at known pixels
}

impl IndexPartition {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.height, self.width)
    }

    pub fn known(&self) -> &[(usize, usize)] {
        &self.known
    }

    pub fn unknown(&self) -> &[(usize, usize)] {
        &self.unknown
    }

    #[inline]
    pub fn is_unknown(&self, i: usize, j: usize) -> bool {
        self.unknown_rank[i * self.width + j] != usize::MAX
    }

    /// Rank of `(i, j)` within the unknown ordering, if unknown.
    #[inline]
    pub fn unknown_rank(&self, i: usize, j: usize) -> Option<usize> {
        let r = self.unknown_rank[i * self.width + j];
        (r != usize::MAX).then_some(r)
    }
}

/// Splits the pixel lattice into known pixels (measurements and the border)
/// and unknown interior pixels, in deterministic row-major order.
///
/// Every border pixel is known, so each unknown pixel has all four lattice
/// neighbors inside the grid.
pub fn build_partition(sparse: &DepthGrid) -> Result<IndexPartition> {
    let (h, w) = (sparse.height(), sparse.width());
    if h < 3 || w < 3 {
        return Err(Error::GridTooSmall {
            found: sparse.dims(),
            min_side: 3,
        });
    }

    let mut known = Vec::new();
    let mut unknown = Vec::new();
    let mut unknown_rank = vec![usize::MAX; h * w];

    for i in 0..h {
        for j in 0..w {
            let border = i == 0 || i == h - 1 || j == 0 || j == w - 1;
            if border || sparse.get(i, j) > 0.0 {
                known.push((i, j));
            } else {
                unknown_rank[i * w + j] = unknown.len();
                unknown.push((i, j));
            }
        }
    }

    Ok(IndexPartition {
        height: h,
        width: w,
        known,
        unknown,
        unknown_rank,
    })
}

/// Materializes the Dirichlet field: the measurement where one exists, the
/// prior on measurement-free border pixels, and `0` on the unknown set.
///
/// The zeros are an extension convention so a single stencil pass can read
/// the field everywhere; they are never interpreted as depth. At border
/// pixels that also carry a measurement, the measurement wins.
pub fn assemble_dirichlet_field(
    sparse: &DepthGrid,
    prior: &DepthGrid,
    partition: &IndexPartition,
) -> Result<DepthGrid> {
    check_same_dims(sparse.dims(), prior.dims())?;
    check_same_dims(sparse.dims(), partition.dims())?;

    let (h, w) = (sparse.height(), sparse.width());
    let mut values = vec![0.0; h * w];
    for &(i, j) in partition.known() {
        let s = sparse.get(i, j);
        values[i * w + j] = if s > 0.0 { s } else { prior.get(i, j) };
    }
    DepthGrid::new(h, w, values)
}
