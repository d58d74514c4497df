//! Two-time-scale block diagonalization of a partitioned nonlinear system
//!
//! ```text
//! z' = A11 z + A12 y + f(z, y)      (slow, n states)
//! y' = A21 z + A22 y + g(z, y)      (fast, m states)
//! ```
//!
//! `eta = y + L z` removes `A21` (block-triangular form), `xi = z - H eta` removes
//! `A12` (block-diagonal form). `L` solves `A21 - A22 L + L A11 - L A12 L = 0` and `H`
//! solves `(A11 - A12 L) H - H (A22 + L A12) + A12 = 0`. The change of variables is
//! exact; only dropping the cross terms of the remainders gives an approximation.

use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, mat_vec_acc, mat_vec_into};
use crate::modal::Partition;
use crate::system::{eval_rhs_into, LinearModel, OdeSystem, OperatingPoint};
use crate::warning::Warning;

const SINGULAR_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct PartitionedLinearModel {
    pub a11: DMatrix<f64>,
    pub a12: DMatrix<f64>,
    pub a21: DMatrix<f64>,
    pub a22: DMatrix<f64>,
    pub partition: Partition,
    pub operating_point: OperatingPoint,
    /// `||A||_F` of the unpartitioned matrix; scale for residual bounds.
    pub a_norm: f64,
    pub a22_condition: f64,
}

impl PartitionedLinearModel {
    /// `[[A11, A12], [A21, A22]]` un-permuted back to the original state order.
    pub fn reassemble(&self) -> DMatrix<f64> {
        let n = self.partition.n();
        let total = self.partition.state_dim();
        let perm = self.partition.permutation();
        let mut a = DMatrix::zeros(total, total);
        for i in 0..total {
            for j in 0..total {
                let v = match (i < n, j < n) {
                    (true, true) => self.a11[(i, j)],
                    (true, false) => self.a12[(i, j - n)],
                    (false, true) => self.a21[(i - n, j)],
                    (false, false) => self.a22[(i - n, j - n)],
                };
                a[(perm[i], perm[j])] = v;
            }
        }
        a
    }
}

/// Permutes `A` into `[z; y]` order and extracts the four blocks.
pub fn partition_model(lin: &LinearModel, partition: &Partition) -> Result<PartitionedLinearModel> {
    let total = lin.a.nrows();
    if partition.state_dim() != total {
        return Err(Error::Dimension {
            what: "partition",
            expected: total,
            got: partition.state_dim(),
        });
    }
    let n = partition.n();
    let m = partition.m();
    let pa = partition.permute_matrix(&lin.a);
    let a22 = pa.view((n, n), (m, m)).into_owned();
    let a22_condition = linalg::condition_number(&a22);
    if !(a22_condition <= SINGULAR_CONDITION) {
        return Err(Error::SingularFastBlock {
            condition: a22_condition,
        });
    }
    Ok(PartitionedLinearModel {
        a11: pa.view((0, 0), (n, n)).into_owned(),
        a12: pa.view((0, n), (n, m)).into_owned(),
        a21: pa.view((n, 0), (m, n)).into_owned(),
        a22,
        partition: partition.clone(),
        operating_point: lin.operating_point.clone(),
        a_norm: lin.a.norm(),
        a22_condition,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LOptions {
    /// Relative Frobenius step tolerance.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for LOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LSolution {
    pub l: DMatrix<f64>,
    pub iterations: usize,
    /// `||A21 - A22 L + L A11 - L A12 L||_F` of the returned `L`.
    pub residual: f64,
    /// The same residual after every iterate, starting with `L0`.
    pub history: Vec<f64>,
}

pub fn l_equation_residual(blocks: &PartitionedLinearModel, l: &DMatrix<f64>) -> f64 {
    (&blocks.a21 - &blocks.a22 * l + l * &blocks.a11 - l * &blocks.a12 * l).norm()
}

fn modulus_separation(blocks: &PartitionedLinearModel) -> f64 {
    let fast = linalg::eigenvalues(&blocks.a22).unwrap_or_default();
    let slow = linalg::eigenvalues(&blocks.a11).unwrap_or_default();
    let min_fast = fast.iter().map(|l| l.norm()).fold(f64::INFINITY, f64::min);
    let max_slow = slow.iter().map(|l| l.norm()).fold(0.0, f64::max);
    if max_slow > 0.0 {
        min_fast / max_slow
    } else {
        f64::INFINITY
    }
}

/// Fixed-point iteration `L0 = A22^-1 A21`, `L_{k+1} = A22^-1 (A21 + L_k (A11 - A12 L_k))`.
pub fn solve_l(blocks: &PartitionedLinearModel, opts: LOptions) -> Result<LSolution> {
    let a22_inv = linalg::inverse(&blocks.a22).ok_or(Error::SingularFastBlock {
        condition: blocks.a22_condition,
    })?;
    let base = &a22_inv * &blocks.a21;
    let mut l = base.clone();
    let mut history = vec![l_equation_residual(blocks, &l)];
    let mut growth = 0;
    let mut last_step = f64::INFINITY;

    for k in 1..=opts.max_iter {
        let next = &base + &a22_inv * &l * (&blocks.a11 - &blocks.a12 * &l);
        let step = (&next - &l).norm();
        let scale = l.norm();
        l = next;
        let residual = l_equation_residual(blocks, &l);
        if !residual.is_finite() {
            return Err(Error::LDiverged {
                iterations: k,
                residual,
                separation: modulus_separation(blocks),
            });
        }
        growth = if residual > *history.last().unwrap_or(&f64::INFINITY) {
            growth + 1
        } else {
            0
        };
        history.push(residual);
        if growth >= 5 {
            return Err(Error::LDiverged {
                iterations: k,
                residual,
                separation: modulus_separation(blocks),
            });
        }
        last_step = if scale > 0.0 { step / scale } else { step };
        if step <= opts.tol * scale {
            return Ok(LSolution {
                l,
                iterations: k,
                residual,
                history,
            });
        }
    }
    Err(Error::LNotConverged {
        iterations: opts.max_iter,
        step: last_step,
    })
}

/// Solves `(A11 - A12 L) H - H (A22 + L A12) + A12 = 0`; returns `(H, residual)`.
pub fn solve_h(blocks: &PartitionedLinearModel, l: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let slow = &blocks.a11 - &blocks.a12 * l;
    let fast = &blocks.a22 + l * &blocks.a12;
    let rhs = -&blocks.a12;
    let h = linalg::solve_sylvester(&slow, &fast, &rhs, 1e-8 * blocks.a_norm)?;
    let residual = (&slow * &h - &h * &fast + &blocks.a12).norm();
    Ok((h, residual))
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    /// `min |Im lambda(fast)| / max |Im lambda(slow)|`.
    pub ratio: f64,
    pub min_fast_imag: f64,
    pub max_slow_imag: f64,
    pub warnings: Vec<Warning>,
}

/// Imaginary-part separation between the fast and slow blocks.
///
/// Also reports fast eigenvalues that are real or repeated.
pub fn timescale_gap(slow_eigs: &[Complex64], fast_eigs: &[Complex64]) -> GapReport {
    let mut warnings = Vec::new();
    let scale = fast_eigs.iter().map(|l| l.norm()).fold(0.0, f64::max);
    for (i, l) in fast_eigs.iter().enumerate() {
        if l.im == 0.0 {
            warnings.push(Warning::FastModeNotOscillatory { eigenvalue: *l });
        } else if fast_eigs[..i]
            .iter()
            .any(|o| (o - l).norm() <= 1e-9 * scale.max(1.0))
        {
            warnings.push(Warning::FastModeRepeated { eigenvalue: *l });
        }
    }
    let min_fast_imag = fast_eigs
        .iter()
        .map(|l| l.im.abs())
        .fold(f64::INFINITY, f64::min);
    let max_slow_imag = slow_eigs.iter().map(|l| l.im.abs()).fold(0.0, f64::max);
    let ratio = if max_slow_imag > 0.0 {
        min_fast_imag / max_slow_imag
    } else {
        warnings.push(Warning::SlowBlockNonOscillatory);
        f64::INFINITY
    };
    GapReport {
        ratio,
        min_fast_imag,
        max_slow_imag,
        warnings,
    }
}

/// `L`, `H` and the decoupled diagonal blocks, validated against their defining
/// equations.
#[derive(Debug, Clone)]
pub struct DecouplingTransform {
    pub l: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// `A11 - A12 L`.
    pub slow_block: DMatrix<f64>,
    /// `A22 + L A12`.
    pub fast_block: DMatrix<f64>,
    pub l_residual: f64,
    pub h_residual: f64,
    pub l_iterations: usize,
    pub slow_eigenvalues: Vec<Complex64>,
    pub fast_eigenvalues: Vec<Complex64>,
    pub gap: GapReport,
    // I - L H and I - H L
    y_from_eta: DMatrix<f64>,
    slow_projector: DMatrix<f64>,
}

impl DecouplingTransform {
    pub fn new(blocks: &PartitionedLinearModel, opts: LOptions) -> Result<Self> {
        let sol = solve_l(blocks, opts)?;
        let (h, h_residual) = solve_h(blocks, &sol.l)?;
        Self::from_parts(blocks, sol.l, h, sol.iterations, h_residual)
    }

    /// Rebuilds a transform from previously computed `L` and `H`.
    pub fn from_matrices(
        blocks: &PartitionedLinearModel,
        l: DMatrix<f64>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        let (n, m) = (blocks.partition.n(), blocks.partition.m());
        if l.shape() != (m, n) || h.shape() != (n, m) {
            return Err(Error::Dimension {
                what: "L/H matrices",
                expected: 2 * n * m,
                got: l.len() + h.len(),
            });
        }
        let slow = &blocks.a11 - &blocks.a12 * &l;
        let fast = &blocks.a22 + &l * &blocks.a12;
        let h_residual = (&slow * &h - &h * &fast + &blocks.a12).norm();
        Self::from_parts(blocks, l, h, 0, h_residual)
    }

    fn from_parts(
        blocks: &PartitionedLinearModel,
        l: DMatrix<f64>,
        h: DMatrix<f64>,
        l_iterations: usize,
        h_residual: f64,
    ) -> Result<Self> {
        let bound = 1e-9 * blocks.a_norm;
        let l_residual = l_equation_residual(blocks, &l);
        if !(l_residual <= bound) {
            return Err(Error::ResidualTooLarge {
                which: "L",
                residual: l_residual,
                bound,
            });
        }
        if !(h_residual <= bound) {
            return Err(Error::ResidualTooLarge {
                which: "H",
                residual: h_residual,
                bound,
            });
        }
        let slow_block = &blocks.a11 - &blocks.a12 * &l;
        let fast_block = &blocks.a22 + &l * &blocks.a12;
        let slow_eigenvalues = linalg::eigenvalues(&slow_block).ok_or(Error::EigenSolverFailed)?;
        let fast_eigenvalues = linalg::eigenvalues(&fast_block).ok_or(Error::EigenSolverFailed)?;
        for (which, eigs) in [("slow", &slow_eigenvalues), ("fast", &fast_eigenvalues)] {
            if let Some(e) = eigs.iter().find(|e| !(e.re < 0.0)) {
                return Err(Error::UnstableBlock {
                    which,
                    eigenvalue: *e,
                });
            }
        }
        let gap = timescale_gap(&slow_eigenvalues, &fast_eigenvalues);
        let (n, m) = (blocks.partition.n(), blocks.partition.m());
        let y_from_eta = DMatrix::identity(m, m) - &l * &h;
        let slow_projector = DMatrix::identity(n, n) - &h * &l;
        Ok(Self {
            l,
            h,
            slow_block,
            fast_block,
            l_residual,
            h_residual,
            l_iterations,
            slow_eigenvalues,
            fast_eigenvalues,
            gap,
            y_from_eta,
            slow_projector,
        })
    }

    pub fn n(&self) -> usize {
        self.h.nrows()
    }

    pub fn m(&self) -> usize {
        self.l.nrows()
    }

    /// `min |Im lambda(fast)| / max |Im lambda(slow)|`.
    pub fn gap_ratio(&self) -> f64 {
        self.gap.ratio
    }

    /// `eta = y + L z`, `xi = z - H eta`.
    pub fn to_decoupled(&self, z: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut eta = y.to_vec();
        mat_vec_acc(&self.l, z, &mut eta, 1.0);
        let mut xi = z.to_vec();
        mat_vec_acc(&self.h, &eta, &mut xi, -1.0);
        (xi, eta)
    }

    /// `z = xi + H eta`, `y = (I - L H) eta - L xi`.
    pub fn from_decoupled(&self, xi: &[f64], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut z = vec![0.0; self.n()];
        let mut y = vec![0.0; self.m()];
        self.from_decoupled_into(xi, eta, &mut z, &mut y);
        (z, y)
    }

    pub fn from_decoupled_into(&self, xi: &[f64], eta: &[f64], z: &mut [f64], y: &mut [f64]) {
        z.copy_from_slice(xi);
        mat_vec_acc(&self.h, eta, z, 1.0);
        mat_vec_into(&self.y_from_eta, eta, y);
        mat_vec_acc(&self.l, xi, y, -1.0);
    }
}

/// Nonlinear remainders in deviation coordinates about `x_bar`:
/// `f(z, y; u) = rhs_z(x_bar + P^-1 [z; y], u) - A11 z - A12 y`, likewise `g`.
///
/// The input enters only through the full right-hand side, so an input step shows
/// up as a nonzero remainder at the origin.
pub struct NonlinearRemainders<'a, S: ?Sized> {
    system: &'a S,
    blocks: &'a PartitionedLinearModel,
}

impl<'a, S: OdeSystem + ?Sized> NonlinearRemainders<'a, S> {
    pub fn new(system: &'a S, blocks: &'a PartitionedLinearModel) -> Result<Self> {
        if system.state_dim() != blocks.partition.state_dim() {
            return Err(Error::Dimension {
                what: "remainder system",
                expected: blocks.partition.state_dim(),
                got: system.state_dim(),
            });
        }
        Ok(Self { system, blocks })
    }

    pub fn blocks(&self) -> &PartitionedLinearModel {
        self.blocks
    }

    pub fn x_bar(&self) -> &[f64] {
        self.blocks.operating_point.x_bar()
    }

    /// Writes `f(z, y)` into `f_out` and `g(z, y)` into `g_out`.
    pub fn eval_into(
        &self,
        z: &[f64],
        y: &[f64],
        u: &[f64],
        f_out: &mut [f64],
        g_out: &mut [f64],
    ) -> Result<()> {
        let p = &self.blocks.partition;
        let total = p.state_dim();
        let mut x = self.x_bar().to_vec();
        for (&i, &dz) in p.slow().iter().zip(z) {
            x[i] += dz;
        }
        for (&i, &dy) in p.fast().iter().zip(y) {
            x[i] += dy;
        }
        let mut dx = vec![0.0; total];
        eval_rhs_into(self.system, &x, u, &mut dx)?;
        for (o, &i) in f_out.iter_mut().zip(p.slow()) {
            *o = dx[i];
        }
        for (o, &i) in g_out.iter_mut().zip(p.fast()) {
            *o = dx[i];
        }
        mat_vec_acc(&self.blocks.a11, z, f_out, -1.0);
        mat_vec_acc(&self.blocks.a12, y, f_out, -1.0);
        mat_vec_acc(&self.blocks.a21, z, g_out, -1.0);
        mat_vec_acc(&self.blocks.a22, y, g_out, -1.0);
        Ok(())
    }

    pub fn eval(&self, z: &[f64], y: &[f64], u: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut f = vec![0.0; self.blocks.partition.n()];
        let mut g = vec![0.0; self.blocks.partition.m()];
        self.eval_into(z, y, u, &mut f, &mut g)?;
        Ok((f, g))
    }

    /// `(f_bar, g_bar) = ((I - H L) f - H g, L f + g)` at `(z, y)`.
    pub fn transformed(
        &self,
        t: &DecouplingTransform,
        z: &[f64],
        y: &[f64],
        u: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (f, g) = self.eval(z, y, u)?;
        let mut f_bar = vec![0.0; t.n()];
        mat_vec_into(&t.slow_projector, &f, &mut f_bar);
        mat_vec_acc(&t.h, &g, &mut f_bar, -1.0);
        let mut g_bar = g;
        mat_vec_acc(&t.l, &f, &mut g_bar, 1.0);
        Ok((f_bar, g_bar))
    }

    /// `(f_tilde(xi, eta), g_tilde(xi, eta))`: the transformed remainders evaluated at
    /// `z = xi + H eta`, `y = (I - L H) eta - L xi`.
    pub fn composite(
        &self,
        t: &DecouplingTransform,
        xi: &[f64],
        eta: &[f64],
        u: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let (z, y) = t.from_decoupled(xi, eta);
        self.transformed(t, &z, &y, u)
    }
}

/// Right-hand side of the exact block-diagonal system:
/// `xi' = (A11 - A12 L) xi + f_tilde(xi, eta)`, `eta' = (A22 + L A12) eta + g_tilde(xi, eta)`.
pub fn exact_decoupled_rhs<S: OdeSystem + ?Sized>(
    xi: &[f64],
    eta: &[f64],
    u: &[f64],
    t: &DecouplingTransform,
    rem: &NonlinearRemainders<'_, S>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mut dxi, mut deta) = rem.composite(t, xi, eta, u)?;
    mat_vec_acc(&t.slow_block, xi, &mut dxi, 1.0);
    mat_vec_acc(&t.fast_block, eta, &mut deta, 1.0);
    Ok((dxi, deta))
}

/// Approximate slow subsystem `xi' = (A11 - A12 L) xi + f_tilde(xi, 0)`.
pub struct SlowSubsystem<'a, S: ?Sized> {
    transform: &'a DecouplingTransform,
    remainders: &'a NonlinearRemainders<'a, S>,
    zero_eta: Vec<f64>,
}

impl<'a, S: OdeSystem + ?Sized> SlowSubsystem<'a, S> {
    pub fn dim(&self) -> usize {
        self.transform.n()
    }

    pub fn rhs(&self, xi: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (mut dxi, _) = self
            .remainders
            .composite(self.transform, xi, &self.zero_eta, u)?;
        mat_vec_acc(&self.transform.slow_block, xi, &mut dxi, 1.0);
        Ok(dxi)
    }
}

/// Approximate fast subsystem `eta' = (A22 + L A12) eta + g_tilde(xi_ctx, eta)`, with
/// the slow coordinates held at a caller-supplied context value.
pub struct FastSubsystem<'a, S: ?Sized> {
    transform: &'a DecouplingTransform,
    remainders: &'a NonlinearRemainders<'a, S>,
}

impl<'a, S: OdeSystem + ?Sized> FastSubsystem<'a, S> {
    pub fn dim(&self) -> usize {
        self.transform.m()
    }

    pub fn rhs(&self, xi_context: &[f64], eta: &[f64], u: &[f64]) -> Result<Vec<f64>> {
        let (_, mut deta) = self
            .remainders
            .composite(self.transform, xi_context, eta, u)?;
        mat_vec_acc(&self.transform.fast_block, eta, &mut deta, 1.0);
        Ok(deta)
    }
}

/// The two independent approximate subsystems. They only borrow immutable data.
pub fn approx_subsystem_rhs<'a, S: OdeSystem + ?Sized>(
    transform: &'a DecouplingTransform,
    remainders: &'a NonlinearRemainders<'a, S>,
) -> (SlowSubsystem<'a, S>, FastSubsystem<'a, S>) {
    (
        SlowSubsystem {
            transform,
            remainders,
            zero_eta: vec![0.0; transform.m()],
        },
        FastSubsystem {
            transform,
            remainders,
        },
    )
}

/// Everything downstream simulation needs about one reduction.
#[derive(Debug, Clone)]
pub struct Reduction {
    pub blocks: PartitionedLinearModel,
    pub transform: DecouplingTransform,
}

impl Reduction {
    pub fn new(lin: &LinearModel, partition: &Partition, opts: LOptions) -> Result<Self> {
        let blocks = partition_model(lin, partition)?;
        let transform = DecouplingTransform::new(&blocks, opts)?;
        Ok(Self { blocks, transform })
    }

    pub fn partition(&self) -> &Partition {
        &self.blocks.partition
    }

    pub fn operating_point(&self) -> &OperatingPoint {
        &self.blocks.operating_point
    }
}
