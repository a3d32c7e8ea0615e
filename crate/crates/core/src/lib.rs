//! Analysis and synthesis of fixed-order H-infinity controllers for linear
//! time-delay systems in delay differential algebraic (descriptor) form.
//!
//! The crate models interconnections of delay systems as descriptor systems
//! E x'(t) = A_0 x(t) + sum_i A_i x(t - tau_i) + B w(t), z = C x(t) with a
//! possibly singular E, and provides
//!
//! - transfer function and asymptotic transfer function evaluation,
//! - the strong H-infinity norm (robust against infinitesimal delay
//!   perturbations) via a torus sweep plus a level-set iteration on a
//!   Chebyshev spectral discretization,
//! - characteristic roots, spectral abscissa and the strong stability test,
//! - nonsmooth minimization (BFGS with weak Wolfe line search and a gradient
//!   sampling phase) of the robust spectral abscissa and of the strong norm
//!   over free controller parameters.

// Transfer-function quantities keep their mathematical capitals (T, Ta).
#![allow(non_snake_case)]

pub mod discretize;
pub mod error;
pub mod lapack;
pub mod model;
pub mod nsopt;
pub mod objectives;
pub mod spectrum;
pub mod strong_norm;
pub mod synthesis;
pub mod torus;
pub mod transfer;

pub use error::{Error, Result};
pub use model::{
    eliminate_feedthrough, eliminate_io_delays, interconnect, ControllerBlock, DdaeSystem,
    DelayedIoSystem, ParameterizedSystem, PartitionedSystem, PlantBlock,
};
pub use nsopt::{
    minimize, Objective, ObjectiveEval, OptimizerOptions, OptimizerReport, Termination,
};
pub use objectives::{grad_robust_abscissa, grad_strong_norm, grad_strong_norm_with};
pub use spectrum::{
    char_roots, correct_root, difference_abscissa, is_strongly_stable, robust_spectral_abscissa,
    spectral_abscissa, spectral_abscissa_detailed, CharRoot, CorrectedRoot, RootCluster,
    RootOptions, SpectrumResult, StrongStabilityReport,
};
pub use strong_norm::{
    effective_delays, hinf_norm_T, hinf_norm_Ta_at_delays, strong_hinf_norm, strong_hinf_norm_with,
    strong_norm_Ta, LevelSetPeak, NormBranch, NormOptions, StrongNormResult, TorusPeak,
};
pub use synthesis::{build_closed_loop, hinf_design, stabilize, stabilize_from, SynthesisOptions};
pub use transfer::{
    eval_T, eval_Ta_lambda, eval_Ta_torus, eval_dT, eval_dT_dp, log_grid, sigma_sweep,
    FrequencyResponse, SweepPoint,
};
