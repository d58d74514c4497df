//! Input-driven ODE systems `x' = f(x, u)` and their central-difference linearization.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Default absolute finite-difference step for per-unit scaled states.
pub const DEFAULT_FD_STEP: f64 = 1e-7;

/// A nonlinear, input-driven, time-invariant ODE system.
///
/// Implementations must be pure: the same `(x, u)` always yields the same derivative.
pub trait OdeSystem {
    fn state_labels(&self) -> &[String];

    fn input_dim(&self) -> usize;

    fn state_dim(&self) -> usize {
        self.state_labels().len()
    }

    /// Writes `f(x, u)` into `dx`. Lengths are validated by [`eval_rhs_into`].
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()>;
}

impl<S: OdeSystem + ?Sized> OdeSystem for &S {
    fn state_labels(&self) -> &[String] {
        (**self).state_labels()
    }
    fn input_dim(&self) -> usize {
        (**self).input_dim()
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        (**self).rhs(x, u, dx)
    }
}

/// Closure-backed system, mostly for tests and small synthetic models.
pub struct FnSystem<F> {
    labels: Vec<String>,
    input_dim: usize,
    f: F,
}

impl<F> FnSystem<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    pub fn new(labels: Vec<String>, input_dim: usize, f: F) -> Result<Self> {
        if labels.is_empty() || input_dim == 0 {
            return Err(Error::InvalidPartition(
                "systems need at least one state and one input".into(),
            ));
        }
        for (i, l) in labels.iter().enumerate() {
            if labels[..i].contains(l) {
                return Err(Error::InvalidPartition(alloc::format!(
                    "duplicate state label {l}"
                )));
            }
        }
        Ok(Self {
            labels,
            input_dim,
            f,
        })
    }

    /// Labels `x1..xn`.
    pub fn numbered(state_dim: usize, input_dim: usize, f: F) -> Result<Self> {
        Self::new(
            (1..=state_dim).map(|i| alloc::format!("x{i}")).collect(),
            input_dim,
            f,
        )
    }
}

impl<F> OdeSystem for FnSystem<F>
where
    F: Fn(&[f64], &[f64], &mut [f64]),
{
    fn state_labels(&self) -> &[String] {
        &self.labels
    }
    fn input_dim(&self) -> usize {
        self.input_dim
    }
    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        (self.f)(x, u, dx);
        Ok(())
    }
}

fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Dimension {
            what,
            expected,
            got,
        })
    }
}

fn check_finite(what: &'static str, v: &[f64]) -> Result<()> {
    match v.iter().position(|x| !x.is_finite()) {
        Some(index) => Err(Error::NonFiniteInput { what, index }),
        None => Ok(()),
    }
}

/// Validated `f(x, u)` written into `dx`.
pub fn eval_rhs_into<S: OdeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    u: &[f64],
    dx: &mut [f64],
) -> Result<()> {
    let n = system.state_dim();
    check_len("state vector", n, x.len())?;
    check_len("input vector", system.input_dim(), u.len())?;
    check_len("derivative buffer", n, dx.len())?;
    check_finite("state vector", x)?;
    check_finite("input vector", u)?;
    system.rhs(x, u, dx)?;
    if let Some(index) = dx.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteDerivative {
            index,
            label: system.state_labels()[index].clone(),
        });
    }
    Ok(())
}

pub fn eval_rhs<S: OdeSystem + ?Sized>(system: &S, x: &[f64], u: &[f64]) -> Result<Vec<f64>> {
    let mut dx = vec![0.0; system.state_dim()];
    eval_rhs_into(system, x, u, &mut dx)?;
    Ok(dx)
}

pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

fn check_step(h: f64, base: &[f64]) -> Result<()> {
    if !(h > 0.0) || !h.is_finite() {
        return Err(Error::InvalidParameter {
            name: "fd_step".into(),
            value: h,
            reason: "must be positive and finite",
        });
    }
    for (index, &value) in base.iter().enumerate() {
        if value + h == value || value - h == value {
            return Err(Error::StepTooSmall {
                step: h,
                index,
                value,
            });
        }
    }
    Ok(())
}

/// Central-difference Jacobian with respect to the state.
///
/// Column `j` is `(f(x + h e_j, u) - f(x - h e_j, u)) / (2h)`.
pub fn jacobian_state<S: OdeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    u: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = system.state_dim();
    check_len("state vector", n, x.len())?;
    check_step(h, x)?;
    let mut jac = DMatrix::zeros(n, n);
    let mut xp = x.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..n {
        xp[j] = x[j] + h;
        eval_rhs_into(system, &xp, u, &mut fp)?;
        xp[j] = x[j] - h;
        eval_rhs_into(system, &xp, u, &mut fm)?;
        xp[j] = x[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// Central-difference Jacobian with respect to the input.
pub fn jacobian_input<S: OdeSystem + ?Sized>(
    system: &S,
    x: &[f64],
    u: &[f64],
    h: f64,
) -> Result<DMatrix<f64>> {
    let n = system.state_dim();
    let p = system.input_dim();
    check_len("input vector", p, u.len())?;
    check_step(h, u)?;
    let mut jac = DMatrix::zeros(n, p);
    let mut up = u.to_vec();
    let mut fp = vec![0.0; n];
    let mut fm = vec![0.0; n];
    for j in 0..p {
        up[j] = u[j] + h;
        eval_rhs_into(system, x, &up, &mut fp)?;
        up[j] = u[j] - h;
        eval_rhs_into(system, x, &up, &mut fm)?;
        up[j] = u[j];
        for i in 0..n {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(jac)
}

/// An operating point `(x_bar, u_bar)` with its residual recomputed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    x_bar: Vec<f64>,
    u_bar: Vec<f64>,
    residual_inf_norm: f64,
}

impl OperatingPoint {
    pub fn new<S: OdeSystem + ?Sized>(
        system: &S,
        x_bar: Vec<f64>,
        u_bar: Vec<f64>,
    ) -> Result<Self> {
        let r = eval_rhs(system, &x_bar, &u_bar)?;
        Ok(Self {
            x_bar,
            u_bar,
            residual_inf_norm: inf_norm(&r),
        })
    }

    pub fn x_bar(&self) -> &[f64] {
        &self.x_bar
    }

    pub fn u_bar(&self) -> &[f64] {
        &self.u_bar
    }

    pub fn residual_inf_norm(&self) -> f64 {
        self.residual_inf_norm
    }
}

/// Small-signal model `x_s' = A x_s + B u_s` about an operating point.
#[derive(Debug, Clone)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub operating_point: OperatingPoint,
    pub fd_step: f64,
    pub state_labels: Vec<String>,
}
