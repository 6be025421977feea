//! Numerical toolkit for harmonic metrics near the large-scale limit of
//! rank-n Higgs bundle moduli.
//!
//! The crate is organized around a chain of constructions:
//!
//! * [`partition`] describes ramification clusters (local rank partitions
//!   with spectral shifts) and the exact rational weights `alpha_{K,i}`.
//! * [`toda`] solves the radial cyclic affine Toda system whose solutions
//!   furnish the local model metrics, and exposes the exact `t`-rescaling,
//!   modified Bessel evaluation, and decay-envelope checks.
//! * [`metrics`] assembles the limiting and model metrics from the profiles
//!   and samples the unitary-gauge model pair `(A, Phi)`, including the
//!   finite-difference curvature check `F + t^2 [Phi, Phi*]`.
//! * [`higgs`] handles the algebraic side: companion blocks and their
//!   characteristic polynomials, eigenvalue clustering, discriminant
//!   orders, and the stratification and parabolic-degree identities.
//! * [`assembly`] glues model and limiting metrics with a cutoff, measures
//!   the resulting error functional in L2 over the disk, and fits the
//!   exponential decay of that error in `t`.
//! * [`linearize`] classifies blocks against a threshold cluster size,
//!   computes exact indicial-root spectra of the decoupled linearized
//!   operator, realizes that operator on a polar grid, and checks the
//!   energy identity, the Higgs multiplier bound, and the growth and
//!   rescaled-limit behavior of the connection family.

pub mod assembly;
pub mod higgs;
pub mod linearize;
pub mod metrics;
pub mod partition;
pub mod toda;

pub use assembly::{
    approx_metric, cutoff_value, decay_csv, error_entry, error_l2, error_l2_blocks, error_row,
    fit_decay, AssemblyError, DecayReport, QuadratureSpec, CUTOFF_INNER, CUTOFF_OUTER,
};
pub use higgs::{
    char_poly, companion_matrix, discriminant_order, eigenvalue_clusters, parabolic_degree,
    polynomial_roots, validate_strata, CompanionBlock, EigenvalueCluster, HiggsError,
    StrataCount, DEFAULT_CLUSTER_TOL,
};
pub use linearize::{
    build_atilde, bump_section, connection_growth, decoupled_apply, energy_identity,
    grid_function, growth_csv, indicial_csv, indicial_spectrum, limit_csv, m_phi_bound,
    m_phi_entry, radial_bump, rayleigh_probe, rescaled_laplacian_limit, AtildeSpec, BlockKind,
    GrowthTable, IndicialSpectrum, LimitTable, LinearizeError, PolarGrid, GROWTH_R_MIN,
    MIN_GRID_NODES, SUPPORT_MARGIN,
};
pub use metrics::{
    field_samples_csv, hitchin_residual_model, limiting_metric, metric_profile_csv, model_metric,
    model_unitary_pair, FieldSample, MetricDiag, MetricEntry, MetricScale, MetricsError,
    ModelField, TodaFamily,
};
pub use partition::{
    alpha, alpha_checked, alpha_row, BlockRecord, ClusterBlock, ClusterPartition,
    PartitionError, PartitionRecord,
};
pub use toda::{
    asymptotic_check, bessel_k0, bessel_k0_scaled, evaluate_rescaled, linearized_decay_constant,
    painleve_residual, solution_csv, solve_toda, zeta, EnvelopeReport, RadialGrid, SolutionRecord,
    SolverConfig, TodaError, TodaSolution, SCHEMA_VERSION,
};
