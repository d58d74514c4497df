//! Three synchronverter-controlled inverters with LC filters in parallel on an RL grid.
//!
//! All quantities are per-unit in the grid-aligned dq frame unless stated otherwise.
//! Complex dq quantities are stored as adjacent `(d, q)` reals.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::ops::{Add, Mul, Neg, Sub};

use crate::error::{Error, Result};
use crate::modal::{find_steady_state, NewtonOptions, SteadyState};
use crate::system::{OdeSystem, OperatingPoint};

pub const STATE_DIM: usize = 19;
pub const INPUT_DIM: usize = 13;

/// Inverter names in state/input order.
pub const INVERTERS: [char; 3] = ['A', 'B', 'C'];

/// State indices (zero-based) in the fixed state ordering.
pub mod state {
    pub const V_OD: usize = 0;
    pub const V_OQ: usize = 1;
    /// `i_id` of inverter `k`; `i_iq` follows.
    pub const fn i_id(k: usize) -> usize {
        2 + 2 * k
    }
    pub const I_GD: usize = 8;
    pub const I_GQ: usize = 9;
    pub const fn omega_sv(k: usize) -> usize {
        10 + 3 * k
    }
    pub const fn delta_theta(k: usize) -> usize {
        11 + 3 * k
    }
    pub const fn mf_if(k: usize) -> usize {
        12 + 3 * k
    }
    /// Number of electrical (filter and grid) states leading the vector.
    pub const ELECTRICAL: usize = 10;
}

/// Input indices (zero-based).
pub mod input {
    pub const V_G: usize = 0;
    pub const fn p_ref(k: usize) -> usize {
        1 + 4 * k
    }
    pub const fn q_ref(k: usize) -> usize {
        2 + 4 * k
    }
    pub const fn omega_ref(k: usize) -> usize {
        3 + 4 * k
    }
    pub const fn v_ref(k: usize) -> usize {
        4 + 4 * k
    }
}

pub const STATE_LABELS: [&str; STATE_DIM] = [
    "v_od",
    "v_oq",
    "i_id.A",
    "i_iq.A",
    "i_id.B",
    "i_iq.B",
    "i_id.C",
    "i_iq.C",
    "i_gd",
    "i_gq",
    "omega_sv.A",
    "dtheta_sv.A",
    "Mf_if.A",
    "omega_sv.B",
    "dtheta_sv.B",
    "Mf_if.B",
    "omega_sv.C",
    "dtheta_sv.C",
    "Mf_if.C",
];

pub const INPUT_LABELS: [&str; INPUT_DIM] = [
    "V_g",
    "P_ref.A",
    "Q_ref.A",
    "omega_ref.A",
    "v_ref.A",
    "P_ref.B",
    "Q_ref.B",
    "omega_ref.B",
    "v_ref.B",
    "P_ref.C",
    "Q_ref.C",
    "omega_ref.C",
    "v_ref.C",
];

/// A dq pair `d + j q`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Dq {
    pub d: f64,
    pub q: f64,
}

impl Dq {
    pub const ZERO: Dq = Dq { d: 0.0, q: 0.0 };

    pub const fn new(d: f64, q: f64) -> Self {
        Self { d, q }
    }

    fn at(v: &[f64], i: usize) -> Self {
        Self::new(v[i], v[i + 1])
    }

    /// Multiplication by `j`.
    pub fn rotate_j(self) -> Self {
        Self::new(-self.q, self.d)
    }

    pub fn scale(self, s: f64) -> Self {
        Self::new(self.d * s, self.q * s)
    }
}

impl Add for Dq {
    type Output = Dq;
    fn add(self, o: Dq) -> Dq {
        Dq::new(self.d + o.d, self.q + o.q)
    }
}

impl Sub for Dq {
    type Output = Dq;
    fn sub(self, o: Dq) -> Dq {
        Dq::new(self.d - o.d, self.q - o.q)
    }
}

impl Neg for Dq {
    type Output = Dq;
    fn neg(self) -> Dq {
        Dq::new(-self.d, -self.q)
    }
}

impl Mul<f64> for Dq {
    type Output = Dq;
    fn mul(self, s: f64) -> Dq {
        self.scale(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridParameters {
    /// Base power (VA).
    pub s_base: f64,
    /// Base voltage (V).
    pub v_base: f64,
    /// Base angular frequency (rad/s).
    pub omega_b: f64,
    pub r_g: f64,
    pub l_g: f64,
    /// Constant grid frequency (p.u.).
    pub omega_g: f64,
    /// Nominal grid voltage magnitude; the model itself reads `V_g` from the input vector.
    pub v_g: f64,
}

impl Default for GridParameters {
    fn default() -> Self {
        Self {
            s_base: 2.75e6,
            v_base: 563.0,
            omega_b: 2.0 * PI * 50.0,
            r_g: 0.01,
            l_g: 0.2,
            omega_g: 1.0,
            v_g: 1.0,
        }
    }
}

fn finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.into(),
            value,
            reason: "must be finite",
        })
    }
}

fn positive(name: &str, value: f64) -> Result<()> {
    finite(name, value)?;
    if value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: name.into(),
            value,
            reason: "must be positive",
        })
    }
}

impl GridParameters {
    pub fn validate(&self) -> Result<()> {
        positive("S_b", self.s_base)?;
        positive("V_b", self.v_base)?;
        positive("omega_b", self.omega_b)?;
        finite("R_g", self.r_g)?;
        positive("L_g", self.l_g)?;
        finite("omega_g", self.omega_g)?;
        finite("V_g", self.v_g)
    }
}

/// Filter and synchronverter controller parameters of one inverter.
#[derive(Debug, Clone, PartialEq)]
pub struct InverterParameters {
    pub r_f: f64,
    pub l_f: f64,
    pub c_f: f64,
    pub v_dc: f64,
    /// Inertia time constant (s).
    pub t_a: f64,
    pub k_d: f64,
    pub k_omega: f64,
    /// Reactive-loop integral constant.
    pub k: f64,
    pub k_q: f64,
}

impl Default for InverterParameters {
    fn default() -> Self {
        Self {
            r_f: 0.003,
            l_f: 0.08,
            c_f: 0.074,
            v_dc: 1.0,
            t_a: 2.0,
            k_d: 1.0,
            k_omega: 20.0,
            k: 2200.0,
            k_q: 0.0,
        }
    }
}

impl InverterParameters {
    /// `suffix` is appended to parameter names in error messages (e.g. `.A`).
    pub fn validate(&self, suffix: &str) -> Result<()> {
        let name = |n: &str| {
            let mut s = String::from(n);
            s.push_str(suffix);
            s
        };
        finite(&name("R_f"), self.r_f)?;
        positive(&name("L_f"), self.l_f)?;
        positive(&name("C_f"), self.c_f)?;
        positive(&name("V_dc"), self.v_dc)?;
        positive(&name("T_a"), self.t_a)?;
        finite(&name("K_D"), self.k_d)?;
        finite(&name("K_omega"), self.k_omega)?;
        positive(&name("K"), self.k)?;
        finite(&name("K_q"), self.k_q)
    }
}

/// Reference inputs of one inverter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct References {
    pub p_ref: f64,
    pub q_ref: f64,
    pub omega_ref: f64,
    pub v_ref: f64,
}

impl Default for References {
    fn default() -> Self {
        Self {
            p_ref: 0.5,
            q_ref: 0.0,
            omega_ref: 1.0,
            v_ref: 1.0,
        }
    }
}

/// The 19-entry state vector in the fixed ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub [f64; STATE_DIM]);

impl StateVector {
    /// Nominal initial guess: `v_o = 1`, zero currents, `omega_sv = 1`, zero angles, unit flux.
    pub fn flat_start() -> Self {
        let mut x = [0.0; STATE_DIM];
        x[state::V_OD] = 1.0;
        for k in 0..3 {
            x[state::omega_sv(k)] = 1.0;
            x[state::mf_if(k)] = 1.0;
        }
        Self(x)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// The 13-entry input vector in the fixed ordering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputVector(pub [f64; INPUT_DIM]);

impl InputVector {
    pub fn new(v_g: f64, refs: [References; 3]) -> Self {
        let mut u = [0.0; INPUT_DIM];
        u[input::V_G] = v_g;
        for (k, r) in refs.iter().enumerate() {
            u[input::p_ref(k)] = r.p_ref;
            u[input::q_ref(k)] = r.q_ref;
            u[input::omega_ref(k)] = r.omega_ref;
            u[input::v_ref(k)] = r.v_ref;
        }
        Self(u)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn references(&self, k: usize) -> References {
        References {
            p_ref: self.0[input::p_ref(k)],
            q_ref: self.0[input::q_ref(k)],
            omega_ref: self.0[input::omega_ref(k)],
            v_ref: self.0[input::v_ref(k)],
        }
    }
}

impl Default for InputVector {
    fn default() -> Self {
        Self::new(1.0, [References::default(); 3])
    }
}

/// `d i_g / dt = omega_b ((v_o - R_g i_g - v_g) / L_g - j omega_g i_g)`, `v_g = V_g + j0`.
pub fn grid_current_rhs(i_g: Dq, v_o: Dq, v_g: f64, p: &GridParameters) -> Dq {
    let drive = (v_o - i_g * p.r_g - Dq::new(v_g, 0.0)) * (1.0 / p.l_g);
    (drive - i_g.rotate_j() * p.omega_g) * p.omega_b
}

/// `d i_i / dt = omega_b ((m V_dc - R_f i_i - v_o) / L_f - j omega_g i_i)`.
pub fn inverter_current_rhs(
    i_i: Dq,
    m: Dq,
    v_o: Dq,
    p: &InverterParameters,
    omega_b: f64,
    omega_g: f64,
) -> Dq {
    let drive = (m * p.v_dc - i_i * p.r_f - v_o) * (1.0 / p.l_f);
    (drive - i_i.rotate_j() * omega_g) * omega_b
}

/// `d v_o / dt = omega_b ((i_T - i_g) / C_T - j omega_g v_o)`.
pub fn capacitor_voltage_rhs(
    v_o: Dq,
    i_t: Dq,
    i_g: Dq,
    c_t: f64,
    omega_b: f64,
    omega_g: f64,
) -> Dq {
    ((i_t - i_g) * (1.0 / c_t) - v_o.rotate_j() * omega_g) * omega_b
}

/// Grid frame to controller frame: `T(dtheta) = [[cos, sin], [-sin, cos]]`.
pub fn rotate_frame(v: Dq, delta_theta: f64) -> Dq {
    let (s, c) = libm::sincos(delta_theta);
    Dq::new(c * v.d + s * v.q, -s * v.d + c * v.q)
}

/// `(P_e, Q)` from `P_e + jQ = v (conj i)`.
pub fn instantaneous_powers(v: Dq, i: Dq) -> (f64, f64) {
    (v.d * i.d + v.q * i.q, v.q * i.d - v.d * i.q)
}

pub fn voltage_magnitude(v: Dq) -> f64 {
    libm::hypot(v.d, v.q)
}

/// Emulated mechanical power: reference plus frequency droop.
pub fn mechanical_power(p_ref: f64, k_omega: f64, omega_ref: f64, omega_sv: f64) -> f64 {
    p_ref + k_omega * (omega_ref - omega_sv)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    pub omega_sv: f64,
    pub delta_theta: f64,
    pub mf_if: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurements {
    pub p_e: f64,
    pub q: f64,
    pub v_hat: f64,
}

/// Swing, angle and reactive-loop derivatives `[d omega_sv, d dtheta_sv, d (Mf if)]`.
pub fn controller_rhs(
    inverter: char,
    s: ControllerState,
    m: Measurements,
    r: References,
    p: &InverterParameters,
    omega_b: f64,
    omega_g: f64,
) -> Result<[f64; 3]> {
    // NaN must also be rejected here.
    if !(s.omega_sv > 0.0) {
        return Err(Error::NonPhysicalFrequency {
            inverter,
            omega: s.omega_sv,
        });
    }
    let p_m = mechanical_power(r.p_ref, p.k_omega, r.omega_ref, s.omega_sv);
    let d_omega =
        (p_m / s.omega_sv - m.p_e / s.omega_sv - p.k_d * (s.omega_sv - r.omega_ref)) / p.t_a;
    let d_theta = omega_b * (s.omega_sv - omega_g);
    let d_flux = (r.q_ref - m.q + p.k_q * (r.v_ref - m.v_hat)) / p.k;
    Ok([d_omega, d_theta, d_flux])
}

/// Modulation index in the grid frame.
///
/// The back-EMF `e = omega_sv * Mf if` sits on the controller d-axis and is rotated
/// back to the grid frame with `T(-dtheta)`.
pub fn modulation_voltage(omega_sv: f64, mf_if: f64, delta_theta: f64, v_dc: f64) -> Dq {
    rotate_frame(Dq::new(omega_sv * mf_if, 0.0), -delta_theta) * (1.0 / v_dc)
}

/// The 19-state, 13-input grid model.
#[derive(Debug, Clone)]
pub struct SynchronverterGrid {
    grid: GridParameters,
    inverters: [InverterParameters; 3],
    labels: Vec<String>,
    c_total: f64,
}

impl Default for SynchronverterGrid {
    fn default() -> Self {
        Self::new(
            GridParameters::default(),
            core::array::from_fn(|_| InverterParameters::default()),
        )
        .expect("default parameters are valid")
    }
}

impl SynchronverterGrid {
    pub fn new(grid: GridParameters, inverters: [InverterParameters; 3]) -> Result<Self> {
        grid.validate()?;
        for (k, inv) in inverters.iter().enumerate() {
            let suffix = [b'.', b'A' + k as u8];
            inv.validate(core::str::from_utf8(&suffix).unwrap_or(""))?;
        }
        let c_total = inverters.iter().map(|p| p.c_f).sum();
        Ok(Self {
            grid,
            inverters,
            labels: STATE_LABELS.iter().map(|s| String::from(*s)).collect(),
            c_total,
        })
    }

    pub fn grid(&self) -> &GridParameters {
        &self.grid
    }

    pub fn inverters(&self) -> &[InverterParameters; 3] {
        &self.inverters
    }

    /// `C_T`, the parallel filter capacitance.
    pub fn total_capacitance(&self) -> f64 {
        self.c_total
    }

    /// Groups of inverters with equal parameters and equal references under `u`.
    pub fn interchangeable_groups(&self, u: &[f64]) -> Vec<Vec<usize>> {
        let refs = |k: usize| {
            [
                u[input::p_ref(k)],
                u[input::q_ref(k)],
                u[input::omega_ref(k)],
                u[input::v_ref(k)],
            ]
        };
        let mut groups: Vec<Vec<usize>> = Vec::new();
        for k in 0..3 {
            match groups
                .iter_mut()
                .find(|g| self.inverters[g[0]] == self.inverters[k] && refs(g[0]) == refs(k))
            {
                Some(g) => g.push(k),
                None => groups.push(vec![k]),
            }
        }
        groups
    }

    /// Equilibrium for inputs `u` from the flat start.
    ///
    /// Interchangeable inverters have equal exact equilibria, but pivoting in the
    /// Newton solve breaks that at roundoff level; their states are averaged so that
    /// trajectories from this point keep the symmetry bit for bit.
    pub fn steady_state(&self, u: &[f64], opts: NewtonOptions) -> Result<SteadyState> {
        let mut ss = find_steady_state(self, u, StateVector::flat_start().as_slice(), opts)?;
        let mut x = ss.point.x_bar().to_vec();
        for g in self
            .interchangeable_groups(u)
            .iter()
            .filter(|g| g.len() > 1)
        {
            let slots = |k: usize| {
                [
                    state::i_id(k),
                    state::i_id(k) + 1,
                    state::omega_sv(k),
                    state::delta_theta(k),
                    state::mf_if(k),
                ]
            };
            for s in 0..5 {
                let mean = g.iter().map(|&k| x[slots(k)[s]]).sum::<f64>() / g.len() as f64;
                for &k in g {
                    x[slots(k)[s]] = mean;
                }
            }
        }
        ss.point = OperatingPoint::new(self, x, u.to_vec())?;
        Ok(ss)
    }

    /// Full 19-entry derivative.
    pub fn assemble(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        let g = &self.grid;
        let v_o = Dq::at(x, state::V_OD);
        let i_g = Dq::at(x, state::I_GD);
        let mut i_t = Dq::ZERO;

        for k in 0..3 {
            let p = &self.inverters[k];
            let i_i = Dq::at(x, state::i_id(k));
            i_t = i_t + i_i;

            let cs = ControllerState {
                omega_sv: x[state::omega_sv(k)],
                delta_theta: x[state::delta_theta(k)],
                mf_if: x[state::mf_if(k)],
            };
            let v_oc = rotate_frame(v_o, cs.delta_theta);
            let i_ic = rotate_frame(i_i, cs.delta_theta);
            let (p_e, q) = instantaneous_powers(v_oc, i_ic);
            let meas = Measurements {
                p_e,
                q,
                v_hat: voltage_magnitude(v_oc),
            };
            let refs = References {
                p_ref: u[input::p_ref(k)],
                q_ref: u[input::q_ref(k)],
                omega_ref: u[input::omega_ref(k)],
                v_ref: u[input::v_ref(k)],
            };
            let [dw, dth, dflux] =
                controller_rhs(INVERTERS[k], cs, meas, refs, p, g.omega_b, g.omega_g)?;
            dx[state::omega_sv(k)] = dw;
            dx[state::delta_theta(k)] = dth;
            dx[state::mf_if(k)] = dflux;

            let m = modulation_voltage(cs.omega_sv, cs.mf_if, cs.delta_theta, p.v_dc);
            let di = inverter_current_rhs(i_i, m, v_o, p, g.omega_b, g.omega_g);
            dx[state::i_id(k)] = di.d;
            dx[state::i_id(k) + 1] = di.q;
        }

        let dv = capacitor_voltage_rhs(v_o, i_t, i_g, self.c_total, g.omega_b, g.omega_g);
        dx[state::V_OD] = dv.d;
        dx[state::V_OQ] = dv.q;
        let dig = grid_current_rhs(i_g, v_o, u[input::V_G], g);
        dx[state::I_GD] = dig.d;
        dx[state::I_GQ] = dig.q;
        Ok(())
    }
}

impl OdeSystem for SynchronverterGrid {
    fn state_labels(&self) -> &[String] {
        &self.labels
    }

    fn input_dim(&self) -> usize {
        INPUT_DIM
    }

    fn rhs(&self, x: &[f64], u: &[f64], dx: &mut [f64]) -> Result<()> {
        self.assemble(x, u, dx)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::eval_rhs;

    fn close(a: Dq, b: Dq, tol: f64) -> bool {
        (a.d - b.d).abs() <= tol && (a.q - b.q).abs() <= tol
    }

    #[test]
    fn grid_current_balances() {
        let p = GridParameters::default();
        assert_eq!(
            grid_current_rhs(Dq::ZERO, Dq::new(1.0, 0.0), 1.0, &p),
            Dq::ZERO
        );
        // v_o = v_g + R_g i_g + j omega_g L_g i_g with i_g = 1
        let d = grid_current_rhs(Dq::new(1.0, 0.0), Dq::new(1.01, 0.2), 1.0, &p);
        assert!(close(d, Dq::ZERO, 1e-12), "{d:?}");
    }

    #[test]
    fn inverter_current_balances() {
        let p = InverterParameters::default();
        let v_o = Dq::new(0.97, 0.3);
        let d = inverter_current_rhs(Dq::ZERO, v_o * (1.0 / p.v_dc), v_o, &p, 100.0 * PI, 1.0);
        assert_eq!(d, Dq::ZERO);
        let m = v_o + Dq::new(p.r_f, p.l_f);
        let d = inverter_current_rhs(Dq::new(1.0, 0.0), m, v_o, &p, 100.0 * PI, 1.0);
        assert!(close(d, Dq::ZERO, 1e-12), "{d:?}");
    }

    #[test]
    fn inverter_current_golden_value() {
        // Hand evaluation: m V_dc - R_f i - v_o = (0.9 - 0.0006 - 0.95, 0.35 - 0.0003 - 0.28)
        //   = (-0.0506, 0.0697); / L_f = (-0.6325, 0.87125); - j i = (+0.1, -0.2)
        //   -> (-0.5325, 0.67125) * omega_b
        let p = InverterParameters::default();
        let wb = 100.0 * PI;
        let d = inverter_current_rhs(
            Dq::new(0.2, 0.1),
            Dq::new(0.9, 0.35),
            Dq::new(0.95, 0.28),
            &p,
            wb,
            1.0,
        );
        assert!(
            close(d, Dq::new(-0.5325 * wb, 0.67125 * wb), 1e-10),
            "{d:?}"
        );
    }

    #[test]
    fn capacitor_balances() {
        let c_t = 0.222;
        assert_eq!(
            capacitor_voltage_rhs(
                Dq::ZERO,
                Dq::new(0.3, 0.1),
                Dq::new(0.3, 0.1),
                c_t,
                314.0,
                1.0
            ),
            Dq::ZERO
        );
        let d = capacitor_voltage_rhs(
            Dq::new(1.0, 0.0),
            Dq::new(0.0, c_t),
            Dq::ZERO,
            c_t,
            314.0,
            1.0,
        );
        assert!(close(d, Dq::ZERO, 1e-12));
    }

    #[test]
    fn rotation_examples() {
        let v = Dq::new(0.3, -0.8);
        assert_eq!(rotate_frame(v, 0.0), v);
        assert!(close(
            rotate_frame(Dq::new(1.0, 0.0), PI / 2.0),
            Dq::new(0.0, -1.0),
            1e-15
        ));
    }

    #[test]
    fn power_examples() {
        assert_eq!(
            instantaneous_powers(Dq::new(1.0, 0.0), Dq::new(0.5, 0.0)),
            (0.5, 0.0)
        );
        assert_eq!(
            instantaneous_powers(Dq::new(1.0, 0.0), Dq::new(0.0, -0.3)),
            (0.0, 0.3)
        );
        let (p, q) = instantaneous_powers(Dq::new(0.8, 0.6), Dq::new(0.5, -0.2));
        assert!((p - 0.28).abs() < 1e-15 && (q - 0.46).abs() < 1e-15);
    }

    #[test]
    fn magnitude_examples() {
        assert_eq!(voltage_magnitude(Dq::new(1.0, 0.0)), 1.0);
        assert_eq!(voltage_magnitude(Dq::new(3.0, 4.0)), 5.0);
        assert_eq!(voltage_magnitude(Dq::ZERO), 0.0);
    }

    #[test]
    fn mechanical_power_examples() {
        assert_eq!(mechanical_power(0.5, 20.0, 1.0, 1.0), 0.5);
        assert!((mechanical_power(0.5, 20.0, 1.0, 0.99) - 0.7).abs() < 1e-12);
        assert!((mechanical_power(0.5, 20.0, 1.0, 1.01) - 0.3).abs() < 1e-12);
    }

    #[test]
    fn controller_examples() {
        let p = InverterParameters::default();
        let refs = References::default();
        let s = ControllerState {
            omega_sv: 1.0,
            delta_theta: 0.2,
            mf_if: 1.0,
        };
        let m = Measurements {
            p_e: refs.p_ref,
            q: refs.q_ref,
            v_hat: 0.9,
        };
        assert_eq!(
            controller_rhs('A', s, m, refs, &p, 100.0 * PI, 1.0).unwrap(),
            [0.0; 3]
        );

        let s2 = ControllerState {
            omega_sv: 1.001,
            ..s
        };
        let d = controller_rhs('A', s2, m, refs, &p, 100.0 * PI, 1.0).unwrap();
        assert!((d[1] - 0.1 * PI).abs() < 1e-10);

        let m2 = Measurements { q: 0.1, ..m };
        let d = controller_rhs('A', s, m2, refs, &p, 100.0 * PI, 1.0).unwrap();
        assert!((d[2] + 1.0 / 22000.0).abs() < 1e-15);
    }

    #[test]
    fn controller_rejects_nonpositive_frequency() {
        let p = InverterParameters::default();
        let s = ControllerState {
            omega_sv: 0.0,
            delta_theta: 0.0,
            mf_if: 1.0,
        };
        let m = Measurements {
            p_e: 0.0,
            q: 0.0,
            v_hat: 1.0,
        };
        assert!(matches!(
            controller_rhs('B', s, m, References::default(), &p, 1.0, 1.0),
            Err(Error::NonPhysicalFrequency { inverter: 'B', .. })
        ));
    }

    #[test]
    fn modulation_examples() {
        assert!(close(
            modulation_voltage(1.0, 1.0, 0.0, 1.0),
            Dq::new(1.0, 0.0),
            0.0
        ));
        assert!(close(
            modulation_voltage(1.0, 1.0, PI / 2.0, 1.0),
            Dq::new(0.0, 1.0),
            1e-15
        ));
    }

    #[test]
    fn identical_inverters_have_identical_derivatives() {
        let sys = SynchronverterGrid::default();
        let mut x = StateVector::flat_start().0;
        for k in 0..3 {
            x[state::i_id(k)] = 0.4;
            x[state::i_id(k) + 1] = 0.1;
            x[state::delta_theta(k)] = 0.3;
        }
        let d = eval_rhs(&sys, &x, InputVector::default().as_slice()).unwrap();
        for off in 0..2 {
            assert_eq!(
                d[state::i_id(1) + off].to_bits(),
                d[state::i_id(2) + off].to_bits()
            );
        }
        for k in [state::omega_sv(1), state::delta_theta(1), state::mf_if(1)] {
            assert_eq!(d[k].to_bits(), d[k + 3].to_bits());
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let mut inv: [InverterParameters; 3] =
            core::array::from_fn(|_| InverterParameters::default());
        inv[1].l_f = -1.0;
        match SynchronverterGrid::new(GridParameters::default(), inv) {
            Err(Error::InvalidParameter { name, .. }) => assert_eq!(name, "L_f.B"),
            other => panic!("unexpected {other:?}"),
        }
        let grid = GridParameters {
            l_g: 0.0,
            ..Default::default()
        };
        assert!(SynchronverterGrid::new(
            grid,
            core::array::from_fn(|_| InverterParameters::default())
        )
        .is_err());
    }

    proptest::proptest! {
        #[test]
        fn frame_rotation_is_an_isometry(d in -10.0..10.0f64, q in -10.0..10.0f64, th in -7.0..7.0f64) {
            let v = Dq::new(d, q);
            let r = rotate_frame(v, th);
            proptest::prop_assert!((voltage_magnitude(r) - voltage_magnitude(v)).abs() <= 1e-12 * (1.0 + voltage_magnitude(v)));
            proptest::prop_assert!(close(rotate_frame(r, -th), v, 1e-12 * (1.0 + voltage_magnitude(v))));
        }
    }
}
