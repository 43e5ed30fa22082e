//! Gaussian random fields on compact metric graphs.
//!
//! A field with Matern-type covariance is the solution of the fractional
//! SPDE `(kappa^2 - Laplacian)^beta u = W` with natural vertex coupling
//! (continuity plus zero outgoing flux). Sampling proceeds in five stages:
//!
//! 1. mesh every edge uniformly ([`mesh`]),
//! 2. assemble mass and stiffness matrices, lumped or consistent
//!    ([`assembly`]),
//! 3. draw the white-noise load vector through a mass factorization
//!    ([`noise`]),
//! 4. expand the fractional inverse into exponentially convergent shifted
//!    resolvents ([`quadrature`]),
//! 5. solve each resolvent with a vertex Schur complement, tridiagonal
//!    interior factorizations, and Neumann-Neumann preconditioned CG
//!    ([`dd_solver`]).
//!
//! [`harness`] composes these into sampling, convergence, and scaling
//! experiments with CSV output.

pub mod assembly;
pub mod dd_solver;
pub mod error;
pub mod graph;
pub mod harness;
pub mod memstats;
pub mod mesh;
pub mod noise;
pub mod quadrature;
pub mod sparse;

pub use assembly::{assemble_mass, assemble_stiffness, MassMatrix, MassMode, StiffnessMatrix};
pub use dd_solver::{
    default_max_iter, thomas_factorize, PcgOutcome, SchurSystem, StepSolution,
    ThomasFactorization, DEFAULT_PCG_TOL,
};
pub use error::{Error, Result};
pub use graph::{barabasi_albert, Edge, MetricGraph, VertexDegreeTable};
pub use harness::{
    covariance_error_study, default_test_graph, dyadic_width, fit_rate, perf_study, sample_field,
    solve_spde, strong_error_study, write_cov_csv, write_field_csv, write_perf_csv,
    write_strong_csv, CovConfig, CovErrorReport, FieldSample, LevelError, PerfConfig, PerfRecord,
    PerfTask, SampleConfig, SpdeSolution, StrongConfig, StrongErrorReport,
    DEFAULT_COV_NODE_LIMIT,
};
pub use mesh::{prolongation, EdgeMesh, Mesh, NodePosition, Prolongation};
pub use noise::{factor, project_noise, sample, sample_with_rng, NoiseFactor, NoiseVector};
pub use quadrature::{plan, QuadraturePlan, QuadratureStep};
