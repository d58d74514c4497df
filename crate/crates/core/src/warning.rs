use core::fmt;

use num_complex::Complex64;

/// Non-fatal diagnostics. The core never prints; callers decide what to do with these.
#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Linearizing about a point whose residual is not small.
    LargeResidual { residual: f64 },
    /// Newton needed the halving line search.
    DampedNewton { iterations: usize },
    /// A state carries nearly equal participation mass in both blocks.
    AmbiguousState {
        state: usize,
        fast_mass: f64,
        slow_mass: f64,
    },
    /// Number of fast states differs from the number of fast modes.
    BlockSizeMismatch {
        fast_states: usize,
        fast_modes: usize,
    },
    /// A fast-block eigenvalue is real (should be oscillatory).
    FastModeNotOscillatory { eigenvalue: Complex64 },
    /// A fast-block eigenvalue is repeated (should be simple).
    FastModeRepeated { eigenvalue: Complex64 },
    /// The slow block has no oscillatory mode, so the gap ratio is infinite.
    SlowBlockNonOscillatory,
    /// Event moved onto the integration grid.
    EventSnapped { requested: f64, snapped: f64 },
    /// `t_end` moved onto the integration grid.
    HorizonSnapped { requested: f64, snapped: f64 },
    /// The step does not resolve the fastest mode well.
    TimeStepLarge { dt: f64, limit: f64 },
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Warning::LargeResidual { residual } => {
                write!(f, "operating point residual {residual:e} exceeds 1e-6")
            }
            Warning::DampedNewton { iterations } => {
                write!(f, "Newton used damping (converged in {iterations} iterations)")
            }
            Warning::AmbiguousState {
                state,
                fast_mass,
                slow_mass,
            } => write!(
                f,
                "state x{} has near-equal participation (fast {fast_mass:.3}, slow {slow_mass:.3})",
                state + 1
            ),
            Warning::BlockSizeMismatch {
                fast_states,
                fast_modes,
            } => write!(
                f,
                "{fast_states} states assigned to the fast block but {fast_modes} fast modes selected"
            ),
            Warning::FastModeNotOscillatory { eigenvalue } => {
                write!(f, "fast-block eigenvalue {eigenvalue} has zero imaginary part")
            }
            Warning::FastModeRepeated { eigenvalue } => {
                write!(f, "fast-block eigenvalue {eigenvalue} is not simple")
            }
            Warning::SlowBlockNonOscillatory => {
                write!(f, "slow block is purely real; gap ratio is infinite")
            }
            Warning::EventSnapped { requested, snapped } => {
                write!(f, "event at {requested} s snapped to grid time {snapped} s")
            }
            Warning::HorizonSnapped { requested, snapped } => {
                write!(f, "t_end {requested} s snapped to grid time {snapped} s")
            }
            Warning::TimeStepLarge { dt, limit } => {
                write!(f, "dt = {dt:e} s exceeds 0.05/max|lambda| = {limit:e} s")
            }
        }
    }
}
