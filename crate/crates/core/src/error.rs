use alloc::string::String;
use num_complex::Complex64;

pub type Result<T> = core::result::Result<T, Error>;

/// Failures raised anywhere in the reduction pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite input value in {what} at index {index}")]
    NonFiniteInput { what: &'static str, index: usize },

    #[error("equation {index} ({label}) produced a non-finite derivative")]
    NonFiniteDerivative { index: usize, label: String },

    #[error(
        "finite-difference step {step:e} vanishes against component {index} (value {value:e})"
    )]
    StepTooSmall { step: f64, index: usize, value: f64 },

    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: String,
        value: f64,
        reason: &'static str,
    },

    #[error("nonphysical controller frequency omega_sv = {omega} for inverter {inverter}")]
    NonPhysicalFrequency { inverter: char, omega: f64 },

    #[error(
        "singular Newton Jacobian at iteration {iteration} (condition estimate {condition:e})"
    )]
    SingularJacobian { iteration: usize, condition: f64 },

    #[error("Newton iteration did not converge in {iterations} iterations (best residual {best_residual:e})")]
    NoConvergence {
        iterations: usize,
        best_residual: f64,
    },

    #[error("eigenvalue iteration failed to converge")]
    EigenSolverFailed,

    #[error("eigenvector matrix is ill-conditioned (condition {condition:e}); participation factors are unreliable")]
    DefectiveMatrix { condition: f64 },

    #[error("eigenpair {mode} has residual {residual:e} above bound {bound:e}")]
    InaccurateEigenpair {
        mode: usize,
        residual: f64,
        bound: f64,
    },

    #[error("participation column for mode {0} is zero")]
    ZeroParticipation(usize),

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("A22 is singular or ill-conditioned (condition {condition:e})")]
    SingularFastBlock { condition: f64 },

    #[error(
        "L iteration diverged after {iterations} iterations (residual {residual:e}); \
         fast/slow modulus separation of the diagonal blocks is only {separation:.3}"
    )]
    LDiverged {
        iterations: usize,
        residual: f64,
        separation: f64,
    },

    #[error("L iteration did not reach tolerance in {iterations} iterations (last relative step {step:e})")]
    LNotConverged { iterations: usize, step: f64 },

    #[error("slow eigenvalue {slow} and fast eigenvalue {fast} nearly coincide; Sylvester equation is ill-posed")]
    CommonEigenvalue { slow: Complex64, fast: Complex64 },

    #[error("{which} block residual {residual:e} exceeds bound {bound:e}")]
    ResidualTooLarge {
        which: &'static str,
        residual: f64,
        bound: f64,
    },

    #[error("{which} block has eigenvalue {eigenvalue} outside the open left half plane")]
    UnstableBlock {
        which: &'static str,
        eigenvalue: Complex64,
    },

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("time step {dt:e} s exceeds the stability guideline {limit:e} s")]
    TimeStepTooLarge { dt: f64, limit: f64 },

    #[error("integration produced a non-finite value at t = {time} s in state {index}")]
    SimulationBlowUp { time: f64, index: usize },

    #[error("the {0} variant needs a decoupling transform; run `reduce` first")]
    MissingTransform(&'static str),

    #[error("traces are not on identical grids: {0}")]
    GridMismatch(String),
}
