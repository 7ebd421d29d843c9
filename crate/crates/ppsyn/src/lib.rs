// `!(x > 0.0)` is used for parameter validation so NaN is rejected too;
// clippy's suggested `x <= 0.0` would let NaN through.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

//! Partition-based differentially private synthetic tabular data.
//!
//! The pipeline selects low-dimensional marginals by contribution per unit of
//! privacy budget, measures each one under Gaussian noise after adaptively
//! partitioning its cells (so noise is paid per interval, not per cell), fits
//! a full-domain distribution to all noisy measurements, and samples synthetic
//! records from the fit. Accounting is in zCDP throughout.

pub mod cli;
pub mod domain;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod partition;
pub mod privacy;
pub mod rng;
pub mod selection;
pub mod synthesizer;

pub use domain::{
    compute_marginal, generate_workload, load_dataset, load_workload, marginal_l1, Clique,
    Dataset, DomainSpec, Marginal, Workload,
};
pub use error::{Error, Result};
pub use estimator::{
    fit, model_marginal, sample, DistributionModel, FitOptions, NoisyMeasurement, WeightMode,
};
pub use evaluation::{
    baseline_no_partition, generate_range_queries, range_query_error, workload_error, RangeQuery,
};
pub use partition::{
    expand_uniform, merge_error, partition_1d, partition_md, precompute_merge_sequence,
    precompute_split_sequence, reconstruction_error, required_rho, Partition, PartitionResult,
};
pub use privacy::{
    em_epsilon_for_rho, eps_delta_to_rho, exponential_select, gaussian_perturb, sigma_for_rho,
    NoiseSpec, PrivacyAccountant,
};
pub use selection::{part_sele, PartitionMode, SelectionOutcome, Selector};
pub use synthesizer::{one_way_init, synthesize, BudgetSpec, SynthesisConfig, SynthesisOutput};
