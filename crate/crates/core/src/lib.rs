//! Co-Space sample mining.
//!
//! Given two successive embeddings of a partially labeled sample set, every
//! unlabeled sample is scored by how stable its neighborhood stays across the
//! change of representation: label propagation is run on a kNN graph in each
//! embedding, the two soft labels are compared after reweighting classes by
//! how little their local labeled covariance moved (Hellinger distance between
//! zero-mean Gaussians), and the most consistent samples receive pseudo-labels.
//! Iterating grows the labeled pool.
//!
//! All numeric code is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the scalar for the common case.

pub mod cli;
pub mod cospace;
pub mod dataset;
pub mod error;
pub mod graph;
pub mod linalg;
pub mod mining;
pub mod propagation;
pub mod scalar;
pub mod synth;
pub mod variation;

pub use cospace::{
    make_cospace, reduce, reduce_cospace, CoSpace, FeatureProvider, FeatureSpace,
    FileSequenceProvider, InMemoryProvider, Pca, ReduceMethod,
};
pub use dataset::{augment, LabelVector, Partition, SampleId};
pub use error::{Error, Result};
pub use graph::{build_knn, build_transition, KernelParams, KnnIndex, TransitionMatrix};
pub use mining::{
    confidence, confidence_ablation, mine_iteration, run_loop, select, Confidence, Criterion,
    MiningConfig, MiningResult,
};
pub use propagation::{intrinsic_variation, propagate, PropagationParams, SoftLabelMatrix};
pub use scalar::Scalar;
pub use variation::{
    hellinger, labeled_neighborhood, local_covariance, top_s_classes, transformation_matrix,
    LocalCovariance, MemberMode, TransformationMatrix, VariationParams,
};

pub type FeatureSpaceF64 = FeatureSpace<f64>;
pub type FeatureSpaceF32 = FeatureSpace<f32>;
pub type CoSpaceF64 = CoSpace<f64>;
pub type CoSpaceF32 = CoSpace<f32>;
pub type TransitionMatrixF64 = TransitionMatrix<f64>;
pub type SoftLabelMatrixF64 = SoftLabelMatrix<f64>;
pub type TransformationMatrixF64 = TransformationMatrix<f64>;
pub type LocalCovarianceF64 = LocalCovariance<f64>;
pub type ConfidenceF64 = Confidence<f64>;
pub type MiningResultF64 = MiningResult<f64>;
