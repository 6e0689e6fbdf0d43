//! Sliced Wasserstein Weisfeiler-Lehman (SWWL) graph kernel.
//!
//! Pipeline: continuous WL node embeddings ([`wl`]), projected quantile
//! embeddings on shared random directions ([`sw`], [`features`]), Gram
//! matrices from cached pairwise distances ([`kernels`]) and robust GP
//! regression with Student-t predictions ([`gp`]). Binary artifact formats
//! live in [`artifact`]; [`synth`] generates random geometric graph datasets.

pub mod artifact;
pub mod features;
pub mod gp;
pub mod graph;
pub mod kernels;
pub mod optim;
pub mod sw;
pub mod synth;
pub mod wl;

pub use features::{FeatureConfig, FeatureSpace, GraphFeatures};
pub use gp::{GpError, GpModel, GpSettings, PredictiveDistribution};
pub use graph::{AttributedGraph, Dataset, DatasetError, Edge, GraphRecord};
pub use kernels::{KernelConfig, KernelError};
pub use sw::{PqEmbedding, ProjectionSet, QuantileGrid, QuantileRule, SwError};
pub use wl::{WlConfig, WlEmbedding};
