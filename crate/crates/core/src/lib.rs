//! Co-sparse texture segmentation.
//!
//! Pixels are described by color and by a smoothed co-support signature of
//! their surrounding patch under an overcomplete analysis operator. A
//! likelihood from scribbles (supervised) or from color and texture
//! clustering (unsupervised) feeds a convex relaxation of a multi-label
//! Potts model with an optional label cost, solved by a preconditioned
//! primal-dual method.

// `!(x > 0.0)` is used on purpose so that NaN parameters are rejected
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod clustering;
pub mod error;
pub mod io;
pub mod likelihood;
pub mod operator;
pub mod pipeline;
pub mod solver;
pub mod strokes;
pub mod texture;

pub use clustering::{kmeans, kmedians, ClusterFit, ClusterModel};
pub use error::{Error, Result};
pub use likelihood::{DataTerm, ScribbleSet, SupervisedParams, TextureTemperature, UnsupervisedParams};
pub use operator::AnalysisOperator;
pub use pipeline::{dice_score, match_labels, Mode, SegConfig, SegmentationReport, Segmenter};
pub use solver::{EdgeMetric, GammaMode, RelaxationState, Segmentation, SolverParams};
pub use strokes::Stroke;
pub use texture::{CoSupportSignature, PatchExtractor, SignatureField, TexturalRepresentative};
