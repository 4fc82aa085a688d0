//! Flat `key = value` run configuration with dotted sections.
//!
//! ```text
//! # refinement run, outdoor scale
//! d_max = 90.0
//! align = false
//! cg.tol = 1e-8
//! cg.max_iters = 4000
//! refine.kappa = 1.0
//! refine.kernel_sizes = 3 5 7
//! refine.temperatures = 0.1 0.2 0.4
//! refine.iterations = 6
//! refine.w_f.shape = 5 5
//! refine.w_f.data = 1 0 0 0 0  0 1 0 0 0  0 0 1 0 0  0 0 0 1 0  0 0 0 0 1
//! refine.g.shape = 3 6
//! refine.g.data = 0 0 0 0 0 0  0 0 0 0 0 0  0 0 0 0 0 0
//! refine.w_alpha.data = 0 0 0 0 0 2.197224577336220
//! ```
//!
//! Arrays are whitespace- or comma-separated numbers. The coefficient
//! blocks carry a `.shape` declaration (`rows cols` for matrices); the
//! `w_alpha` vector may omit it. `g` and `w_alpha` are affine heads: their
//! last column/entry is a bias applied after the feature dot product.
//! Unknown and duplicate keys are errors, so typos surface immediately.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::poisson::CgSettings;
use crate::refine::{LinearMap, RefineParams};

/// Everything a CLI run needs beyond its input paths.
#[derive(Debug, Clone)]
pub struct RunConfig {
    /// Dataset maximum depth in meters; used for normalization and clamps.
    pub d_max: f64,
    /// Whether to least-squares align the prior to the anchors first.
    pub align: bool,
    pub cg: CgSettings,
    pub refine: RefineParams,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_max: 90.0,
            align: false,
            cg: CgSettings::default(),
            refine: RefineParams::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref())?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = parse_entries(text)?;
        let mut config = RunConfig::default();

        if let Some(v) = take_f64(&mut entries, "d_max")? {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("d_max must be positive, got {v}")));
            }
            config.d_max = v;
            config.refine.d_max = v;
        }
        if let Some(v) = take_bool(&mut entries, "align")? {
            config.align = v;
        }
        if let Some(v) = take_f64(&mut entries, "cg.tol")? {
            config.cg.rel_tolerance = v;
        }
        if let Some(v) = take_usize(&mut entries, "cg.max_iters")? {
            config.cg.max_iterations = Some(v);
        }

        // The projection decides the feature width everything must agree on.
        let channels = match take_matrix(&mut entries, "refine.w_f")? {
            Some(m) => {
                let c = m.cols();
                config.refine = RefineParams {
                    w_f: m,
                    ..RefineParams::default_for_channels(c)
                };
                config.refine.d_max = config.d_max;
                c
            }
            None => config.refine.w_f.cols(),
        };

        if let Some(v) = take_f64(&mut entries, "refine.kappa")? {
            config.refine.kappa = v;
        }
        if let Some(v) = take_f64(&mut entries, "refine.d_max")? {
            config.refine.d_max = v;
        }
        if let Some(v) = take_usize(&mut entries, "refine.iterations")? {
            config.refine.iterations = v;
        }
        let kernel_sizes = take_vec_usize(&mut entries, "refine.kernel_sizes")?;
        let temperatures = take_vec_f64(&mut entries, "refine.temperatures")?;
        if let Some(ks) = kernel_sizes {
            if temperatures.is_none() && ks != config.refine.kernel_sizes {
                return Err(Error::Config(
                    "refine.temperatures must be set when refine.kernel_sizes is".into(),
                ));
            }
            config.refine.g = LinearMap::zeros(ks.len(), channels + 1);
            config.refine.kernel_sizes = ks;
        }
        if let Some(ts) = temperatures {
            config.refine.temperatures = ts;
        }
        if let Some(g) = take_matrix(&mut entries, "refine.g")? {
            config.refine.g = g;
        }
        if let Some(wa) = take_vector(&mut entries, "refine.w_alpha")? {
            config.refine.w_alpha = wa;
        }

        if let Some((key, (line, _))) = entries.iter().next() {
            return Err(Error::Config(format!("unknown key {key:?} (line {line})")));
        }

        config
            .refine
            .validate(channels)
            .map_err(|e| Error::Config(format!("refine section: {e}")))?;
        Ok(config)
    }
}

type Entries = BTreeMap<String, (usize, String)>;

fn parse_entries(text: &str) -> Result<Entries> {
    let mut entries = Entries::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "line {line_no}: expected key = value, got {line:?}"
            )));
        };
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {line_no}: empty key")));
        }
        if entries
            .insert(key.clone(), (line_no, value.trim().to_string()))
            .is_some()
        {
            return Err(Error::Config(format!(
                "line {line_no}: duplicate key {key:?}"
            )));
        }
    }
    Ok(entries)
}

fn take_raw(entries: &mut Entries, key: &str) -> Option<(usize, String)> {
    entries.remove(key)
}

fn take_f64(entries: &mut Entries, key: &str) -> Result<Option<f64>> {
    take_raw(entries, key)
        .map(|(line, v)| {
            v.parse()
                .map_err(|_| Error::Config(format!("line {line}: {key} expects a number, got {v:?}")))
        })
        .transpose()
}

fn take_usize(entries: &mut Entries, key: &str) -> Result<Option<usize>> {
    take_raw(entries, key)
        .map(|(line, v)| {
            v.parse().map_err(|_| {
                Error::Config(format!("line {line}: {key} expects an integer, got {v:?}"))
            })
        })
        .transpose()
}

fn take_bool(entries: &mut Entries, key: &str) -> Result<Option<bool>> {
    take_raw(entries, key)
        .map(|(line, v)| match v.as_str() {
            "true" | "1" => Ok(true),
            "false" | "0" => Ok(false),
            other => Err(Error::Config(format!(
                "line {line}: {key} expects true/false, got {other:?}"
            ))),
        })
        .transpose()
}

fn split_numbers(value: &str) -> impl Iterator<Item = &str> {
    value
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
}

fn take_vec_f64(entries: &mut Entries, key: &str) -> Result<Option<Vec<f64>>> {
    take_raw(entries, key)
        .map(|(line, v)| {
            split_numbers(&v)
                .map(|t| {
                    t.parse().map_err(|_| {
                        Error::Config(format!("line {line}: {key} has a bad number {t:?}"))
                    })
                })
                .collect()
        })
        .transpose()
}

fn take_vec_usize(entries: &mut Entries, key: &str) -> Result<Option<Vec<usize>>> {
    take_raw(entries, key)
        .map(|(line, v)| {
            split_numbers(&v)
                .map(|t| {
                    t.parse().map_err(|_| {
                        Error::Config(format!("line {line}: {key} has a bad integer {t:?}"))
                    })
                })
                .collect()
        })
        .transpose()
}

/// A `<key>.shape = rows cols` / `<key>.data = ...` pair.
fn take_matrix(entries: &mut Entries, key: &str) -> Result<Option<LinearMap>> {
    let shape = take_vec_usize(entries, &format!("{key}.shape"))?;
    let data = take_vec_f64(entries, &format!("{key}.data"))?;
    match (shape, data) {
        (None, None) => Ok(None),
        (Some(shape), Some(data)) => {
            if shape.len() != 2 {
                return Err(Error::Config(format!(
                    "{key}.shape expects two numbers (rows cols), got {}",
                    shape.len()
                )));
            }
            LinearMap::new(shape[0], shape[1], data)
                .map(Some)
                .map_err(|e| Error::Config(format!("{key}: {e}")))
        }
        _ => Err(Error::Config(format!(
            "{key} needs both {key}.shape and {key}.data"
        ))),
    }
}

/// A flat vector block; `.shape` (single length) is optional.
fn take_vector(entries: &mut Entries, key: &str) -> Result<Option<Vec<f64>>> {
    let shape = take_vec_usize(entries, &format!("{key}.shape"))?;
    let data = take_vec_f64(entries, &format!("{key}.data"))?;
    match (shape, data) {
        (Some(_), None) => Err(Error::Config(format!(
            "{key}.shape given without {key}.data"
        ))),
        (None, None) => Ok(None),
        (shape, Some(data)) => {
            if let Some(shape) = shape {
                if shape.len() != 1 || shape[0] != data.len() {
                    return Err(Error::Config(format!(
                        "{key}.shape {shape:?} does not match {} data values",
                        data.len()
                    )));
                }
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("{key}.data holds non-finite value")));
            }
            Ok(Some(data))
        }
    }
}
