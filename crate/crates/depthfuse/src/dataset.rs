//! Raster codecs and sparse-sample synthesis.
//!
//! Depth travels as 16-bit grayscale PNG with the benchmark convention
//! `code = round(meters * 256)`, code 0 meaning "no measurement". Relative
//! priors travel as grayscale PFM (header `Pf`, dimensions, then a scale
//! whose sign encodes endianness; scanlines bottom-up). Both codecs are
//! bit-exact round trips at their native precision.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, DepthGrid};
use crate::rng::XorShift64Star;

/// The fixed 16-bit depth-PNG convention.
pub struct DepthPngCodec;

impl DepthPngCodec {
    /// Codes per meter.
    pub const SCALE: f64 = 256.0;
    /// Code reserved for "no measurement".
    pub const INVALID_CODE: u16 = 0;
    /// Largest representable depth, `65535 / 256` meters.
    pub const MAX_DEPTH: f64 = u16::MAX as f64 / Self::SCALE;

    pub fn decode_code(code: u16) -> f64 {
        code as f64 / Self::SCALE
    }

    /// Errors if the value rounds past the representable 16-bit range.
    pub fn encode_depth(meters: f64) -> Result<u16> {
        let code = (meters * Self::SCALE).round();
        if code < 0.0 || code > u16::MAX as f64 {
            return Err(Error::OutOfRange(format!(
                "depth {meters} m exceeds the 16-bit code range (max {} m)",
                Self::MAX_DEPTH
            )));
        }
        Ok(code as u16)
    }
}

/// Reads a 16-bit single-channel PNG into meters (`code / 256`).
pub fn read_depth_png(path: impl AsRef<Path>) -> Result<DepthGrid> {
    let (h, w, codes) = read_png_codes(path.as_ref())?;
    let values = codes.iter().map(|&c| DepthPngCodec::decode_code(c)).collect();
    DepthGrid::new(h, w, values)
}

/// Writes meters as a 16-bit single-channel PNG (`round(meters * 256)`).
pub fn write_depth_png(grid: &DepthGrid, path: impl AsRef<Path>) -> Result<()> {
    let mut codes = Vec::with_capacity(grid.values().len());
    for &v in grid.values() {
        codes.push(DepthPngCodec::encode_depth(v)?);
    }
    write_png_codes(grid.height(), grid.width(), &codes, path.as_ref())
}

/// Reads a 16-bit PNG as a mask: any nonzero code is set.
pub fn read_mask_png(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let (h, w, codes) = read_png_codes(path.as_ref())?;
    BinaryMask::new(h, w, codes.iter().map(|&c| c > 0).collect())
}

/// Writes a mask as a 16-bit PNG with codes 0 / 65535.
pub fn write_mask_png(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let codes: Vec<u16> = mask
        .bits()
        .iter()
        .map(|&b| if b { u16::MAX } else { 0 })
        .collect();
    write_png_codes(mask.height(), mask.width(), &codes, path.as_ref())
}

/// Raw 16-bit code access, used by the round-trip checks.
pub fn read_png_codes(path: &Path) -> Result<(usize, usize, Vec<u16>)> {
    let file = File::open(path)?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::IDENTITY);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    let mut buf = vec![0u8; reader.output_buffer_size().unwrap_or(0)];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::PngDecode(e.to_string()))?;
    if info.bit_depth != png::BitDepth::Sixteen {
        return Err(Error::WrongBitDepth {
            found: format!("{:?}", info.bit_depth),
        });
    }
    if info.color_type != png::ColorType::Grayscale {
        return Err(Error::WrongChannelCount {
            found: format!("{:?}", info.color_type),
        });
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let bytes = &buf[..info.buffer_size()];
    // 16-bit PNG samples are big-endian.
    let codes: Vec<u16> = bytes
        .chunks_exact(2)
        .map(|c| u16::from_be_bytes([c[0], c[1]]))
        .collect();
    if codes.len() != w * h {
        return Err(Error::PngDecode(format!(
            "payload holds {} samples, expected {}",
            codes.len(),
            w * h
        )));
    }
    Ok((h, w, codes))
}

pub fn write_png_codes(height: usize, width: usize, codes: &[u16], path: &Path) -> Result<()> {
    if codes.len() != height * width {
        return Err(Error::LengthMismatch {
            expected: height * width,
            found: codes.len(),
        });
    }
    let file = File::create(path)?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::PngEncode(e.to_string()))?;
    let mut bytes = Vec::with_capacity(codes.len() * 2);
    for &c in codes {
        bytes.extend_from_slice(&c.to_be_bytes());
    }
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::PngEncode(e.to_string()))?;
    Ok(())
}

/// Grayscale PFM primitives. Values are exchanged top-down row-major at the
/// API boundary; the bottom-up file convention is handled internally.
pub mod pfm {
    use super::*;

    /// Parses a grayscale PFM stream. NaN and infinite samples are rejected.
    pub fn read(mut reader: impl Read) -> Result<(usize, usize, Vec<f32>)> {
        let mut bytes = Vec::new();
        reader.read_to_end(&mut bytes)?;

        let mut pos = 0usize;
        let magic = next_token(&bytes, &mut pos)?;
        match magic.as_str() {
            "Pf" => {}
            "PF" => {
                return Err(Error::WrongChannelCount {
                    found: "3-channel PFM (magic PF)".into(),
                })
            }
            other => {
                return Err(Error::MalformedHeader(format!(
                    "bad magic {other:?}, expected Pf"
                )))
            }
        }
        let width: usize = parse_token(&bytes, &mut pos, "width")?;
        let height: usize = parse_token(&bytes, &mut pos, "height")?;
        if width == 0 || height == 0 {
            return Err(Error::MalformedHeader("zero image dimension".into()));
        }
        let scale: f64 = parse_token(&bytes, &mut pos, "scale")?;
        if scale == 0.0 || !scale.is_finite() {
            return Err(Error::MalformedHeader(format!("bad scale {scale}")));
        }
        let little_endian = scale < 0.0;

        let payload = &bytes[pos..];
        let expected = width * height * 4;
        if payload.len() != expected {
            return Err(Error::MalformedHeader(format!(
                "payload holds {} bytes, expected {expected}",
                payload.len()
            )));
        }

        // Scanlines are stored bottom-up: file row 0 is the bottom image row.
        let mut values = vec![0.0f32; width * height];
        for file_row in 0..height {
            let grid_row = height - 1 - file_row;
            for col in 0..width {
                let o = (file_row * width + col) * 4;
                let b = [payload[o], payload[o + 1], payload[o + 2], payload[o + 3]];
                let v = if little_endian {
                    f32::from_le_bytes(b)
                } else {
                    f32::from_be_bytes(b)
                };
                if !v.is_finite() {
                    return Err(Error::NonFinitePayload);
                }
                values[grid_row * width + col] = v;
            }
        }
        Ok((height, width, values))
    }

    /// Writes a grayscale PFM (little-endian, scale -1.0).
    pub fn write(
        height: usize,
        width: usize,
        values: &[f32],
        mut writer: impl Write,
    ) -> Result<()> {
        if values.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                found: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinitePayload);
        }
        write!(writer, "Pf\n{width} {height}\n-1.0\n")?;
        for file_row in 0..height {
            let grid_row = height - 1 - file_row;
            for col in 0..width {
                writer.write_all(&values[grid_row * width + col].to_le_bytes())?;
            }
        }
        Ok(())
    }

    /// One header token: skip whitespace, take non-whitespace bytes. The
    /// final (scale) token is followed by exactly one whitespace byte before
    /// the binary payload, which this consumption pattern honors.
    fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String> {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        let start = *pos;
        while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if start == *pos {
            return Err(Error::MalformedHeader("truncated header".into()));
        }
        let token = std::str::from_utf8(&bytes[start..*pos])
            .map_err(|_| Error::MalformedHeader("non-ascii header".into()))?
            .to_string();
        if *pos < bytes.len() {
            *pos += 1; // single whitespace separator
        }
        Ok(token)
    }

    fn parse_token<T: std::str::FromStr>(
        bytes: &[u8],
        pos: &mut usize,
        what: &str,
    ) -> Result<T> {
        let token = next_token(bytes, pos)?;
        token
            .parse()
            .map_err(|_| Error::MalformedHeader(format!("bad {what} {token:?}")))
    }
}

/// Reads a grayscale PFM as a depth-like raster. Besides the finiteness
/// check of the codec, values must be non-negative to qualify as depth.
pub fn read_float_raster(path: impl AsRef<Path>) -> Result<DepthGrid> {
    let file = File::open(path.as_ref())?;
    let (h, w, values) = pfm::read(BufReader::new(file))?;
    DepthGrid::new(h, w, values.into_iter().map(f64::from).collect())
}

/// Writes a raster as grayscale PFM at `f32` precision.
pub fn write_float_raster(grid: &DepthGrid, path: impl AsRef<Path>) -> Result<()> {
    let values: Vec<f32> = grid.values().iter().map(|&v| v as f32).collect();
    let file = File::create(path.as_ref())?;
    pfm::write(grid.height(), grid.width(), &values, BufWriter::new(file))
}

/// How to choose sampled pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SparsityMode {
    /// Exactly `round(density * pixels)` pixels (at least one), sampled
    /// without replacement.
    UniformRandom { density: f64 },
    /// All pixels of every n-th row, starting at row 0.
    EveryNthRow { n: usize },
    /// Exactly `count` pixels, sampled without replacement.
    FixedCount { count: usize },
}

/// Deterministic sparsity pattern: same spec, same mask, on any platform.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SparsitySpec {
    pub mode: SparsityMode,
    pub seed: u64,
}

/// Masks a dense grid down to a sparse sample: `sparse = dense` where the
/// mask is set, zero elsewhere.
pub fn synth_sparse(dense: &DepthGrid, spec: &SparsitySpec) -> Result<(DepthGrid, BinaryMask)> {
    let (h, w) = (dense.height(), dense.width());
    let total = h * w;
    let mut bits = vec![false; total];

    match spec.mode {
        SparsityMode::UniformRandom { density } => {
            if !(density > 0.0 && density <= 1.0) {
                return Err(Error::InvalidValue(format!(
                    "density must lie in (0, 1], got {density}"
                )));
            }
            let count = ((density * total as f64).round() as usize).clamp(1, total);
            sample_without_replacement(total, count, spec.seed, &mut bits);
        }
        SparsityMode::EveryNthRow { n } => {
            if n == 0 {
                return Err(Error::InvalidValue("row stride must be at least 1".into()));
            }
            for i in (0..h).step_by(n) {
                bits[i * w..(i + 1) * w].fill(true);
            }
        }
        SparsityMode::FixedCount { count } => {
            if count == 0 {
                return Err(Error::InvalidValue("sample count must be at least 1".into()));
            }
            if count > total {
                return Err(Error::CountExceedsPixels {
                    count,
                    pixels: total,
                });
            }
            sample_without_replacement(total, count, spec.seed, &mut bits);
        }
    }

    let mask = BinaryMask::new(h, w, bits)?;
    let sparse_values: Vec<f64> = dense
        .values()
        .iter()
        .zip(mask.bits())
        .map(|(&v, &b)| if b { v } else { 0.0 })
        .collect();
    let sparse = DepthGrid::new(h, w, sparse_values)?;
    Ok((sparse, mask))
}

/// Partial Fisher-Yates over the index range, driven by the pinned PRNG.
fn sample_without_replacement(total: usize, count: usize, seed: u64, bits: &mut [bool]) {
    let mut rng = XorShift64Star::new(seed);
    let mut indices: Vec<usize> = (0..total).collect();
    for i in 0..count {
        let j = i + rng.below(total - i);
        indices.swap(i, j);
        bits[indices[i]] = true;
    }
}
