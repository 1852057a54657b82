//! Learning a concept embedding inside a low-dimensional subspace spanned by
//! selected vocabulary embeddings.
//!
//! The pipeline is: load a [`Vocabulary`], pick the embeddings closest to an
//! initial word ([`select_by_rank`] / [`select_fixed_m`]), start from one-hot
//! weights ([`init_weights`]) and descend on the weights of `v = V_M w`
//! against an [`Objective`] ([`optimize`]). The result can be dropped into a
//! prompt's embedding matrix with [`combine`].

pub mod error;
pub mod geometry;
pub mod objectives;
pub mod optimizer;
pub mod prompt;
pub mod selection;
pub mod store;
pub mod synthetic;
pub mod verify;

pub use error::{Error, Result};
pub use geometry::{
    distance, distance_vector, gram_outer, least_squares, numerical_rank, project_columnspace, ColumnSpace,
    DistanceMetric, RankReport,
};
pub use objectives::{grad_check, Evaluation, LinearReconstruction, Objective, ObjectiveSpec, QuadraticTarget};
pub use optimizer::{
    compose_embedding, init_weights, optimize, weight_gradient, Algorithm, OptimizerConfig, RunMetrics, StepRecord,
    WeightVector,
};
pub use prompt::{combine, generate_stub, EmbeddingMatrixY, GenerationHandle, PromptTemplate};
pub use selection::{order_by_distance, select_by_rank, select_fixed_m, SubspaceBasis};
pub use store::{load_vocabulary, save_vocabulary, Format, TokenKey, Vocabulary};
pub use verify::{verify_projected_step, verify_spanning, SpanningReport, StepIdentityReport};
