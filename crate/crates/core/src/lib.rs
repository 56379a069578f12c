//! Simulation and estimation toolkit for randomized experiments where the
//! interference network itself responds to treatment.
//!
//! Outcomes live on analysis units, treatments on randomization units, and
//! the bipartite (or unipartite) edges between them are truth-table
//! functions of the assignment rather than fixed data. Naive
//! inverse-probability estimators condition on the realized edges and pick
//! up bias; the estimators here identify the effect through instruments
//! supported on an always-present anchor subgraph instead.
//!
//! Module map:
//! - [`design`]: Bernoulli assignment draws, seeded substreams, and the
//!   exact enumeration oracle used to pin expectations in tests.
//! - [`graph`]: treatment-dependent edge rules, realization, anchor
//!   verification, and dependency classification.
//! - [`outcomes`]: exposure weights, linear outcome models, and the true
//!   total treatment effect.
//! - [`estimators`]: the validated instrumented estimator and the naive
//!   inverse-probability contrast it replaces.
//! - [`testing`]: randomization tests for edge exogeneity, edge shifts
//!   between arms, and the sharp null of no outcome response.
//! - [`canonical`]: the three minimal bias demonstrations, frozen.
//! - [`montecarlo`]: seeded scenario families, the replication engine, and
//!   the variance-scaling and normality diagnostics.
//! - [`io`]: strict JSON schemas for graph, outcome, config, and scenario
//!   files, with canonical re-serialization.

pub mod canonical;
pub mod design;
pub mod error;
pub mod estimators;
pub mod graph;
pub mod io;
pub mod montecarlo;
pub mod outcomes;
pub mod testing;

pub use canonical::{
    anchored_variant, canonical_graph, naive_case_table, reference_naive_expectation,
    reference_naive_value, AnchoredVariant, CanonicalExample,
};
pub use design::{
    enumerate_assignments, exact_covariance, exact_expectation, exact_expectation_checked,
    BernoulliDesign, KahanSum, TreatmentVector, ENUMERATION_CAP,
};
pub use error::{AssumptionViolation, Error, Result};
pub use estimators::{
    horvitz_thompson, EstimateResult, EstimatorConfig, InstrumentSpec, UnitEstimate,
    ValidatedEstimator,
};
pub use io::{
    load_config, load_graph, load_outcomes, load_scenario, parse_json, to_canonical_json,
    write_json_file, BoundsFile, ConfigFile, EdgeEntry, GraphFile, InstrumentFile, OutcomesFile,
    WeightsFile,
};
pub use montecarlo::{
    bias_table, ks_normal, normality_diagnostic, replicate, replicate_instance,
    variance_envelope, variance_scaling_study, BiasMode, BiasReport, BiasRow, CaseRow,
    EstimatorChoice, GraphFamily, Instance, OutcomeFamily, ReplicationSummary, ScalingReport,
    ScalingRow, Scenario, WeightFamily, MIN_NORMALITY_REPS,
};
pub use graph::{
    classify_dependency, verify_anchor, AnchorSubgraph, DependencyReport, EdgeRule, EdgeRuleKind,
    EndogenousGraph, PairRule, RealizedGraph, UnitSets, VerificationReport, VerifyMode,
    DEPENDENCY_CAP,
};
pub use outcomes::{
    check_weight_band, evaluate, exposure, true_tte, DeclaredBounds, ExposureWeights,
    OutcomeModel, WeightScheme,
};
pub use testing::{
    edge_shift_ttest, exogeneity_test, sharp_null_test, welch_ttest, Alternative, TestResult,
};
