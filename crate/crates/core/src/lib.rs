//! Entropy-regularized optimal transport in log-linear time.
//!
//! Kernels can be dense, sparse on an LSH neighbor pattern, low-rank
//! Nyström, or locally corrected Nyström (LCN): the Nyström kernel with
//! exact entries restored on the neighbor pattern. One log-domain Sinkhorn
//! solver runs on all of them.

pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod geometry;
pub mod kmeans;
pub mod logsumexp;
pub mod lsh;
pub mod nystrom;
pub mod sinkhorn;
pub mod sparse;
pub mod support;

pub use error::{Error, Result};
pub use geometry::{build_cost, build_kernel, CostFunction, DenseCost, DenseKernel, Marginals, PointSet};
pub use lsh::{LshConfig, LshScheme, NeighborPairs};
pub use nystrom::{build_factors, select_landmarks, LandmarkMethod, LandmarkSet, NystromFactors};
pub use sinkhorn::{sinkhorn, BpExtension, KernelOperator, Plan, SinkhornOptions, SinkhornResult};
pub use sparse::{build_correction, build_sparse, LcnCorrection, SparseKernel};
pub use support::{has_support, SupportStatus};
