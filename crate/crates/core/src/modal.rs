//! Equilibrium, linearization, eigenanalysis, participation factors and the
//! modulus-based fast/slow state partition.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg;
use crate::system::{
    eval_rhs, inf_norm, jacobian_input, jacobian_state, LinearModel, OdeSystem, OperatingPoint,
    DEFAULT_FD_STEP,
};
use crate::warning::Warning;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub fd_step: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            fd_step: DEFAULT_FD_STEP,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SteadyState {
    pub point: OperatingPoint,
    pub iterations: usize,
    pub warnings: Vec<Warning>,
}

/// Newton iteration on `f(x, u) = 0` with a halving line search as fallback.
pub fn find_steady_state<S: OdeSystem + ?Sized>(
    system: &S,
    u: &[f64],
    x_init: &[f64],
    opts: NewtonOptions,
) -> Result<SteadyState> {
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "newton_tol".into(),
            value: opts.tol,
            reason: "must be positive",
        });
    }
    let mut x = x_init.to_vec();
    let mut r = eval_rhs(system, &x, u)?;
    let mut norm = inf_norm(&r);
    let mut damped = false;

    for iteration in 0..=opts.max_iter {
        if norm <= opts.tol {
            let mut warnings = Vec::new();
            if damped {
                warnings.push(Warning::DampedNewton {
                    iterations: iteration,
                });
            }
            return Ok(SteadyState {
                point: OperatingPoint::new(system, x, u.to_vec())?,
                iterations: iteration,
                warnings,
            });
        }
        if iteration == opts.max_iter {
            break;
        }
        let jac = jacobian_state(system, &x, u, opts.fd_step)?;
        let rhs = DVector::from_iterator(r.len(), r.iter().map(|v| -v));
        let step = match linalg::solve(&jac, &rhs) {
            Some(s) if s.iter().all(|v| v.is_finite()) => s,
            _ => {
                return Err(Error::SingularJacobian {
                    iteration,
                    condition: linalg::condition_number(&jac),
                })
            }
        };

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let trial: Vec<f64> = x
                .iter()
                .zip(step.iter())
                .map(|(a, s)| a + lambda * s)
                .collect();
            if let Ok(rt) = eval_rhs(system, &trial, u) {
                let nt = inf_norm(&rt);
                if nt < norm {
                    accepted = Some((trial, rt, nt));
                    break;
                }
            }
            lambda *= 0.5;
            damped = true;
        }
        match accepted {
            Some((xt, rt, nt)) => {
                x = xt;
                r = rt;
                norm = nt;
            }
            // No descent possible: roundoff floor or a genuinely bad start.
            None => {
                return Err(Error::NoConvergence {
                    iterations: iteration + 1,
                    best_residual: norm,
                })
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        best_residual: norm,
    })
}

/// Central-difference small-signal model about `op`.
pub fn linearize<S: OdeSystem + ?Sized>(
    system: &S,
    op: &OperatingPoint,
    h: f64,
) -> Result<(LinearModel, Vec<Warning>)> {
    let mut warnings = Vec::new();
    if op.residual_inf_norm() > 1e-6 {
        warnings.push(Warning::LargeResidual {
            residual: op.residual_inf_norm(),
        });
    }
    let a = jacobian_state(system, op.x_bar(), op.u_bar(), h)?;
    let b = jacobian_input(system, op.x_bar(), op.u_bar(), h)?;
    Ok((
        LinearModel {
            a,
            b,
            operating_point: op.clone(),
            fd_step: h,
            state_labels: system.state_labels().to_vec(),
        },
        warnings,
    ))
}

/// Eigen-decomposition ordered by descending modulus.
///
/// Within a conjugate pair the eigenvalue with positive imaginary part comes first.
/// Right vectors are columns of `right` (unit 2-norm); left vectors are rows of
/// `left = right^-1`, so `left.row(i) * right.column(j) = delta_ij`.
#[derive(Debug, Clone)]
pub struct ModeSet {
    pub eigenvalues: Vec<Complex64>,
    pub right: DMatrix<Complex64>,
    pub left: DMatrix<Complex64>,
    pub residuals: Vec<f64>,
    /// 2-norm condition number of `right`.
    pub condition: f64,
}

impl ModeSet {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn moduli(&self) -> Vec<f64> {
        self.eigenvalues.iter().map(|l| l.norm()).collect()
    }

    /// Whether modes `i` and `i + 1` form a complex conjugate pair.
    pub fn is_pair_start(&self, i: usize) -> bool {
        i + 1 < self.len()
            && self.eigenvalues[i].im != 0.0
            && self.eigenvalues[i + 1] == self.eigenvalues[i].conj()
    }
}

const DEFECTIVE_CONDITION: f64 = 1e12;

fn same_cluster(a: Complex64, b: Complex64, scale: f64) -> bool {
    (a - b).norm() <= 1e-8 * 0.5 * (a.norm() + b.norm()) + 1e-11 * scale
}

/// Full nonsymmetric eigen-decomposition.
///
/// Eigenvalues come from the real Schur form. Each group of numerically equal
/// eigenvalues gets an orthonormal basis of the null space of `A - lambda I`
/// (smallest right singular vectors), which keeps semisimple repeated eigenvalues,
/// common in symmetric multi-machine models, well conditioned. Vectors for
/// eigenvalues with negative imaginary part are the conjugates of their partners.
pub fn eigenpairs(a: &DMatrix<f64>) -> Result<ModeSet> {
    let n = a.nrows();
    if n == 0 || a.ncols() != n {
        return Err(Error::Dimension {
            what: "square matrix",
            expected: n,
            got: a.ncols(),
        });
    }
    if a.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: "matrix",
            index: a.iter().position(|v| !v.is_finite()).unwrap_or(0),
        });
    }
    let norm_a = linalg::spectral_norm(a);
    let mut lambda = linalg::eigenvalues(a).ok_or(Error::EigenSolverFailed)?;
    // A repeated real eigenvalue can come out of the Schur form as a conjugate pair
    // with a roundoff-sized imaginary part.
    for l in lambda.iter_mut() {
        if l.im != 0.0 && same_cluster(*l, l.conj(), norm_a) {
            l.im = 0.0;
        }
    }
    lambda.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.im.total_cmp(&x.im)));

    let mut vectors = DMatrix::<Complex64>::zeros(n, n);
    let mut done = vec![false; n];
    for i in 0..n {
        if done[i] || lambda[i].im < 0.0 {
            continue;
        }
        let real = lambda[i].im == 0.0;
        let members: Vec<usize> = (i..n)
            .filter(|&j| {
                !done[j]
                    && (lambda[j].im == 0.0) == real
                    && lambda[j].im >= 0.0
                    && same_cluster(lambda[i], lambda[j], norm_a)
            })
            .collect();
        let k = members.len();
        let mean = members.iter().map(|&j| lambda[j]).sum::<Complex64>() / k as f64;
        let basis = if real {
            let shifted = a - DMatrix::identity(n, n) * mean.re;
            let (b, _) = linalg::smallest_right_singular_vectors(&shifted, k);
            linalg::complexify(&b)
        } else {
            let shifted = linalg::complexify(a) - DMatrix::identity(n, n) * mean;
            linalg::smallest_right_singular_vectors(&shifted, k).0
        };
        for (col, &j) in members.iter().enumerate() {
            // A numerically multiple eigenvalue is reported at its cluster mean.
            if k > 1 {
                lambda[j] = if real {
                    Complex64::new(mean.re, 0.0)
                } else {
                    mean
                };
            }
            let v = normalize_phase(basis.column(col).into_owned());
            vectors.set_column(j, &v);
            done[j] = true;
        }
    }
    // Conjugate partners; each positive-imaginary column is consumed once.
    let mut partner_used = vec![false; n];
    for i in 0..n {
        if done[i] {
            continue;
        }
        let target = lambda[i].conj();
        let partner = (0..n)
            .filter(|&j| done[j] && lambda[j].im > 0.0 && !partner_used[j])
            .min_by(|&p, &q| {
                (lambda[p] - target)
                    .norm()
                    .total_cmp(&(lambda[q] - target).norm())
            })
            .ok_or(Error::EigenSolverFailed)?;
        partner_used[partner] = true;
        lambda[i] = lambda[partner].conj();
        let v = vectors.column(partner).map(|c| c.conj());
        vectors.set_column(i, &v);
        done[i] = true;
    }

    let condition = linalg::complex_condition_number(&vectors);
    if !(condition <= DEFECTIVE_CONDITION) {
        return Err(Error::DefectiveMatrix { condition });
    }
    let left = vectors
        .clone()
        .lu()
        .try_inverse()
        .ok_or(Error::DefectiveMatrix {
            condition: f64::INFINITY,
        })?;

    let ac = linalg::complexify(a);
    let bound = 1e-8 * norm_a.max(f64::MIN_POSITIVE);
    let mut residuals = Vec::with_capacity(n);
    for i in 0..n {
        let v = vectors.column(i);
        let r = (&ac * v - v * lambda[i]).norm();
        if r > bound {
            return Err(Error::InaccurateEigenpair {
                mode: i,
                residual: r,
                bound,
            });
        }
        residuals.push(r);
    }

    Ok(ModeSet {
        eigenvalues: lambda,
        right: vectors,
        left,
        residuals,
        condition,
    })
}

/// Unit 2-norm, largest-magnitude component real and positive.
fn normalize_phase(mut v: DVector<Complex64>) -> DVector<Complex64> {
    let norm = v.norm();
    if norm > 0.0 {
        v /= Complex64::new(norm, 0.0);
    }
    let pivot = v
        .iter()
        .copied()
        .max_by(|a, b| a.norm().total_cmp(&b.norm()))
        .unwrap_or(Complex64::new(1.0, 0.0));
    if pivot.norm() > 0.0 {
        let phase = pivot.conj() / pivot.norm();
        v *= phase;
    }
    v
}

/// State-versus-mode participation factors, one column per mode.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipationMatrix {
    /// `entries[(k, i)]`: participation of state `k` in mode `i`.
    pub entries: DMatrix<f64>,
}

impl ParticipationMatrix {
    pub fn get(&self, state: usize, mode: usize) -> f64 {
        self.entries[(state, mode)]
    }

    /// States with participation above `threshold` in `mode`.
    pub fn significant_states(&self, mode: usize, threshold: f64) -> Vec<usize> {
        (0..self.entries.nrows())
            .filter(|&k| self.entries[(k, mode)] > threshold)
            .collect()
    }
}

/// `p[k][i] = |w_i[k]| |v_i[k]| / sum_k |w_i[k]| |v_i[k]|`.
pub fn participation_matrix(modes: &ModeSet) -> Result<ParticipationMatrix> {
    let n = modes.len();
    let mut entries = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut total = 0.0;
        for k in 0..n {
            let p = modes.left[(i, k)].norm() * modes.right[(k, i)].norm();
            entries[(k, i)] = p;
            total += p;
        }
        if !(total > 0.0) {
            return Err(Error::ZeroParticipation(i));
        }
        for k in 0..n {
            entries[(k, i)] /= total;
        }
    }
    Ok(ParticipationMatrix { entries })
}

/// Slow (`z`) and fast (`y`) state index sets.
///
/// The partitioned state is `[z; y]`; `permutation()[i]` is the original index of
/// partitioned position `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    slow: Vec<usize>,
    fast: Vec<usize>,
}

impl Partition {
    pub fn new(state_dim: usize, mut slow: Vec<usize>, mut fast: Vec<usize>) -> Result<Self> {
        if slow.is_empty() || fast.is_empty() {
            return Err(Error::InvalidPartition(
                "both blocks must be non-empty".into(),
            ));
        }
        slow.sort_unstable();
        fast.sort_unstable();
        let mut seen = vec![false; state_dim];
        for &i in slow.iter().chain(fast.iter()) {
            if i >= state_dim {
                return Err(Error::InvalidPartition(format!(
                    "state index {i} out of range"
                )));
            }
            if seen[i] {
                return Err(Error::InvalidPartition(format!("state {i} assigned twice")));
            }
            seen[i] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::InvalidPartition(format!(
                "state {missing} not assigned"
            )));
        }
        Ok(Self { slow, fast })
    }

    /// Slow block is the leading `slow_count` states.
    pub fn leading_slow(state_dim: usize, slow_count: usize) -> Result<Self> {
        Self::new(
            state_dim,
            (0..slow_count).collect(),
            (slow_count..state_dim).collect(),
        )
    }

    pub fn slow(&self) -> &[usize] {
        &self.slow
    }

    pub fn fast(&self) -> &[usize] {
        &self.fast
    }

    /// `n`, the slow block size.
    pub fn n(&self) -> usize {
        self.slow.len()
    }

    /// `m`, the fast block size.
    pub fn m(&self) -> usize {
        self.fast.len()
    }

    pub fn state_dim(&self) -> usize {
        self.slow.len() + self.fast.len()
    }

    pub fn permutation(&self) -> Vec<usize> {
        self.slow.iter().chain(self.fast.iter()).copied().collect()
    }

    /// `[z; y]` from an original-order vector.
    pub fn split(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            self.slow.iter().map(|&i| x[i]).collect(),
            self.fast.iter().map(|&i| x[i]).collect(),
        )
    }

    /// Original-order vector from `(z, y)`.
    pub fn merge_into(&self, z: &[f64], y: &[f64], out: &mut [f64]) {
        for (&i, &v) in self.slow.iter().zip(z) {
            out[i] = v;
        }
        for (&i, &v) in self.fast.iter().zip(y) {
            out[i] = v;
        }
    }

    /// `P A P^T` in partitioned order.
    pub fn permute_matrix(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let p = self.permutation();
        let n = p.len();
        DMatrix::from_fn(n, n, |i, j| a[(p[i], p[j])])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitStrategy {
    /// The `m` largest-modulus modes are fast.
    FastCount(usize),
    /// Largest consecutive-modulus ratio among admissible splits.
    AutoGap,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub partition: Partition,
    /// Modes `0..fast_modes` (descending modulus) are the fast modes.
    pub fast_modes: usize,
    /// `|lambda_{m-1}| / |lambda_m|` at the chosen split.
    pub split_ratio: f64,
    /// Per state: summed participation over the fast and slow modes.
    pub fast_mass: Vec<f64>,
    pub slow_mass: Vec<f64>,
    pub warnings: Vec<Warning>,
}

fn masses(pf: &ParticipationMatrix, fast_modes: usize) -> (Vec<f64>, Vec<f64>) {
    let n = pf.entries.nrows();
    let modes = pf.entries.ncols();
    let fast = (0..n)
        .map(|k| (0..fast_modes).map(|i| pf.entries[(k, i)]).sum())
        .collect();
    let slow = (0..n)
        .map(|k| (fast_modes..modes).map(|i| pf.entries[(k, i)]).sum())
        .collect();
    (fast, slow)
}

fn split_states(fast_mass: &[f64], slow_mass: &[f64]) -> (Vec<usize>, Vec<usize>) {
    let mut slow = Vec::new();
    let mut fast = Vec::new();
    for k in 0..fast_mass.len() {
        if fast_mass[k] > slow_mass[k] {
            fast.push(k);
        } else {
            slow.push(k);
        }
    }
    (slow, fast)
}

/// Assigns every state to the block holding its larger participation mass.
///
/// Auto-gap only considers splits that keep conjugate pairs together, put only
/// oscillatory modes in the fast set, leave at least one oscillatory mode in the slow
/// set (so the imaginary-part gap is finite) and whose participation assignment
/// yields exactly as many fast states as fast modes.
pub fn classify_modes(
    modes: &ModeSet,
    pf: &ParticipationMatrix,
    strategy: SplitStrategy,
) -> Result<Classification> {
    let n = modes.len();
    let moduli = modes.moduli();
    let ratio = |m: usize| {
        if moduli[m] > 0.0 {
            moduli[m - 1] / moduli[m]
        } else {
            f64::INFINITY
        }
    };
    let fast_modes = match strategy {
        SplitStrategy::FastCount(m) => {
            if m == 0 || m >= n {
                return Err(Error::InvalidPartition(format!(
                    "fast count {m} must lie in 1..{n}"
                )));
            }
            if modes.is_pair_start(m - 1) {
                return Err(Error::InvalidPartition(format!(
                    "fast count {m} splits the conjugate pair of modes {m} and {}",
                    m + 1
                )));
            }
            m
        }
        SplitStrategy::AutoGap => {
            let mut best: Option<(usize, f64)> = None;
            for m in 1..n {
                if modes.is_pair_start(m - 1) {
                    continue;
                }
                if modes.eigenvalues[..m].iter().any(|l| l.im == 0.0) {
                    continue;
                }
                if modes.eigenvalues[m..].iter().all(|l| l.im == 0.0) {
                    continue;
                }
                let (fm, sm) = masses(pf, m);
                if split_states(&fm, &sm).1.len() != m {
                    continue;
                }
                let r = ratio(m);
                if best.map_or(true, |(_, b)| r > b) {
                    best = Some((m, r));
                }
            }
            best.ok_or_else(|| Error::InvalidPartition("no admissible modulus gap".into()))?
                .0
        }
    };

    let (fast_mass, slow_mass) = masses(pf, fast_modes);
    let (slow, fast) = split_states(&fast_mass, &slow_mass);
    let mut warnings = Vec::new();
    for k in 0..n {
        if (fast_mass[k] - slow_mass[k]).abs() < 0.05 {
            warnings.push(Warning::AmbiguousState {
                state: k,
                fast_mass: fast_mass[k],
                slow_mass: slow_mass[k],
            });
        }
    }
    if fast.len() != fast_modes {
        warnings.push(Warning::BlockSizeMismatch {
            fast_states: fast.len(),
            fast_modes,
        });
    }
    let partition = Partition::new(n, slow, fast)?;
    Ok(Classification {
        partition,
        fast_modes,
        split_ratio: ratio(fast_modes),
        fast_mass,
        slow_mass,
        warnings,
    })
}
