//! Offline residual vector quantization.
//!
//! The crate covers the whole offline pipeline for compressing fixed-size
//! latent frames: mini-batch k-means codebooks ([`kmeans`]), conventional and
//! scale-standardized residual quantizers ([`rvq`]), a residual quantizer with
//! implicit neural codebooks ([`qinco`]), quality metrics ([`metrics`]),
//! fixed-width bit packing ([`bitstream`]) and frame ingestion ([`dataset`]).
//!
//! Data-parallel loops (batch encoding, candidate scoring, distance scans) run
//! on rayon when the `parallel` feature is enabled, which it is by default.
//! Every reduction uses a fixed order, so results are bit-identical with or
//! without the feature and for any thread count.

pub mod bitstream;
pub mod codebook;
pub mod codes;
pub mod dataset;
pub mod error;
pub mod frame;
mod io;
pub mod kmeans;
pub mod metrics;
mod par;
pub mod qinco;
pub mod quantizer;
pub mod rvq;

pub use codebook::{assign, cluster_stats, Assignment, Codebook, SIGMA_FLOOR};
pub use codes::CodeVector;
pub use error::{Error, Result};
pub use frame::{Frame, FrameSet};
pub use kmeans::{kmeans_fit, KMeansConfig};
pub use par::set_threads;
pub use qinco::{QincoModel, TrainConfig};
pub use quantizer::{AnyModel, Quantizer};
pub use rvq::{irvq_train, rvq_train, RvqModel, StageSearch, Variant};
