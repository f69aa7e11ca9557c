//! Gaussian kernel least-mean-squares filtering with a fixed dictionary, and
//! an analytical model of its mean and mean-square convergence.
//!
//! - [`kernel`]: the Gaussian kernel.
//! - [`moments`]: closed-form second- and fourth-order moments of kernelized
//!   Gaussian inputs.
//! - [`dictionary`]: grid and coherence-selected center sets.
//! - [`filter`]: the online KLMS filter.
//! - [`theory`]: Wiener solution, stability bounds, covariance recursion and
//!   predicted learning curves.
//! - [`experiments`]: the two benchmark plants, Monte Carlo learning curves and
//!   theory-versus-simulation comparison.

pub mod dictionary;
pub mod error;
pub mod experiments;
pub mod filter;
pub mod kernel;
pub mod moments;
pub mod theory;

pub use dictionary::{coherence_sweep, CoherenceSweep, Dictionary, DictionaryDiagnostics};
pub use error::{Error, Result};
pub use experiments::{
    compare, monte_carlo, run_experiment, BenchmarkSystem, ComparisonReport, ExperimentConfig, LearningCurve,
    SystemKind,
};
pub use filter::{kernelize, KlmsFilter};
pub use kernel::GaussianKernel;
pub use moments::{Ar1Params, FourthOrderTable, InputModel, KernelMoments};
pub use theory::{ConvergenceModel, OptimalSolution, PredictedCurve, TheoryModel};
