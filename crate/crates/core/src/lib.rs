//! Sparse graph diffusion driven by generalized opinion dynamics.
//!
//! The crate is organized bottom-up:
//!
//! * [`sparse`], [`features`], [`graph`]: CSR matrices, dense node features,
//!   undirected graphs and their normalized Laplacian.
//! * [`opinion`]: DeGroot, Friedkin-Johnsen and Hegselmann-Krause steppers.
//! * [`diffusion`]: the retention/stubbornness/neighborhood/smoothing update,
//!   norm bounds, weight evolution and the closed-form fixed point.
//! * [`consensus`]: classification of converged states and theorem checks.
//! * [`train`]: a trainable model with exact unrolled gradients.
//! * [`influence`]: Monte Carlo IC / LT / SIS ground truth.
//! * [`sbm`] and [`experiments`]: generators and end-to-end pipelines.

pub mod consensus;
pub mod diffusion;
pub mod error;
pub mod experiments;
pub mod features;
pub mod graph;
pub mod influence;
pub mod opinion;
pub mod sbm;
pub mod sparse;
pub mod train;

pub use consensus::{classify_convergence, detect_blocks, ConsensusKind, ConsensusReport};
pub use diffusion::{
    combined_matrix, evolve_weights, fixed_point_solve, godnf_step, op_norm_bound, reg_loss,
    run_diffusion, ConvergenceReport, DiffusionParams, Trajectory, WeightMode, WeightSchedule,
};
pub use error::{Error, Result};
pub use features::FeatureMatrix;
pub use graph::{normalized_laplacian, uniform_row_stochastic, Graph};
pub use influence::{simulate, CascadeConfig, CascadeModel, EdgeProbability};
pub use sbm::{generate_sbm, Sbm};
pub use sparse::{norm_1_inf, spmm, SparseMatrix};
pub use train::{train, ModelParams, Targets, Task, TrainConfig, TrainLoss};
