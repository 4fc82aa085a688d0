//! Metric depth densification from sparse anchors and a dense relative prior.
//!
//! The pipeline has two stages plus tooling:
//!
//! 1. [`poisson::densify`] fuses a dense relative-depth prior with sparse
//!    metric measurements by solving a Poisson system on the unmeasured
//!    pixels: the result follows the prior's gradients while matching every
//!    measurement and the image border exactly.
//! 2. [`refine::refine`] optionally polishes the result with multi-kernel
//!    affinity propagation. Pixel affinities come from hyperbolic distances
//!    between feature embeddings in a Poincaré ball; each patch stays
//!    tethered to its initialization and observed pixels are pulled toward
//!    the raw sensor depth.
//!
//! [`metrics`] provides the masked RMSE/MAE and loss functionals used to
//! score depth maps, [`dataset`] the benchmark raster formats (16-bit depth
//! PNG, grayscale PFM) and deterministic sparsity synthesis, [`oracle`]
//! independent naive reference implementations used to validate the fast
//! paths, and [`cli`] the command-line surface.

pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod oracle;
pub mod poisson;
pub mod refine;
pub mod rng;

pub use error::{Error, Result};
pub use grid::{
    assemble_dirichlet_field, build_partition, BinaryMask, DepthGrid, Dims, FeatureGrid,
    IndexPartition, ScalarGrid,
};
pub use metrics::EvalReport;
pub use poisson::{densify, CgSettings, SolveReport};
pub use refine::{refine, RefineParams};
