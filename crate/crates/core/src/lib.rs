//! Quantifying the deviation of space-time covariance operators from
//! separability.
//!
//! The crate covers the discretized operator algebra ([`operator`]), the
//! three separable approximations and their measures ([`separability`]),
//! self-normalized inference ([`selfnorm`], [`pivot`], [`inference`]), a
//! synthetic data engine ([`synthetic`]), the smoothing and detrending
//! pipeline for raw series ([`preprocess`]) and the on-disk formats ([`io`]).

// Negated comparisons are used on purpose so that NaN fails the check.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod grid;
pub mod inference;
pub mod io;
pub mod operator;
pub mod pivot;
pub mod preprocess;
pub mod sample;
pub mod selfnorm;
pub mod separability;
pub mod synthetic;

pub use error::{Error, Result};
pub use grid::GridSpec;
pub use inference::{
    analyze, confidence_interval, report_for_operator, test_approximate_separability, test_relevant_deviation,
    AnalysisConfig, ConfidenceInterval, MeasureTarget, RelevanceTestResult, SeparabilityReport, TestDirection,
};
pub use operator::{
    empirical_covariance, hs_inner, kron, restack, sequential_covariance, trace, unstack, Axis, FactorOperator,
    RestackedOperator, SpaceTimeOperator,
};
pub use pivot::{quantile_table, PivotTable};
pub use sample::SampleSet;
pub use selfnorm::{NuGrid, SequentialMeasures};
pub use separability::{
    measures, MeasureKind, PowerIteration, ProductOrientation, SeparabilityMeasures, SingularTriple,
};
pub use synthetic::{CoordinateMode, CoverageStudyConfig, CoverageTable, Generator, SyntheticModel};
