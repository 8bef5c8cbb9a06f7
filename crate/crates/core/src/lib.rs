//! Multi-fidelity surrogate modelling of field outputs.
//!
//! Field snapshots from low- and high-fidelity solvers are resampled onto a
//! shared grid ([`field_grid`]), compressed with POD ([`pod`]) and fused by
//! two-step multi-fidelity kriging over the latent coordinates
//! ([`kriging`], [`mf_kriging`]). The resulting surrogates drive a
//! constrained SQP design optimisation ([`optimizer`]).

pub mod benchmark;
pub mod doe;
pub mod error;
pub mod evaluation;
pub mod field_grid;
pub mod io;
pub mod kriging;
pub mod mf_kriging;
pub mod optimizer;
pub mod pod;
pub mod spatial;
pub mod surrogate;
pub mod synthetic;

pub use error::{Error, ErrorClass, Result};
pub use field_grid::{
    interpolate_nearest, Disc, Fidelity, GridField, GridSpec, NearestMap, Rect, ScatteredField, StandardGrid,
};
pub use pod::{assemble_snapshots, compute_pod, PodBasis, SnapshotMatrix};
pub use benchmark::{BenchmarkConfig, BenchmarkReport};
pub use doe::{lhs, nested_subset, DesignSpace, SubsetStrategy};
pub use evaluation::{CostModel, FieldDataset, Method, QoiSummary, StudyRow};
pub use kriging::{KrigingConfig, KrigingModel};
pub use mf_kriging::{fit_mf, FidelityDataset, MultiFidelityModel};
pub use optimizer::{minimize_constrained, multistart, OptResult, OptimizationProblem, Problem, SqpOptions};
pub use surrogate::{FieldSurrogate, SingleFidelityModel, Surrogate};
