//! Bayesian complementary clustering of multi-type planar point patterns.

// `!(x > 0.0)` style tests are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::needless_range_loop)]

pub mod diagnostics;
pub mod error;
pub mod ingest;
pub mod intensity;
pub mod kcross;
pub mod model;
pub mod pattern;
pub mod sampler2;
pub mod samplerk;
pub mod synth;

pub use error::{GridRefError, IngestError, ModelError, PatternError, SamplerError, StatsError};
pub use model::{CenterDensity, Hyperparams, ModelParams, UniformDensity};
pub use pattern::{
    BipartiteMatching, ClusterSummary, MarkedPoint, Matching, MoveKind, ObservationWindow, Point,
    PointPattern, Rect,
};
