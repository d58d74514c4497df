//! Fixed-step RK4 integration of the full, exact-decoupled and approximate-decoupled
//! systems, with piecewise-constant input events and trace comparison.

use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::decouple::{approx_subsystem_rhs, exact_decoupled_rhs, NonlinearRemainders, Reduction};
use crate::error::{Error, Result};
use crate::system::{OdeSystem, OperatingPoint};
use crate::warning::Warning;

/// Largest `dt * max|lambda|` accepted without a warning.
pub const STEP_RESOLUTION: f64 = 0.05;

/// Step change of one input at `time`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InputEvent {
    pub time: f64,
    pub input: usize,
    pub value: f64,
}

/// A validated simulation scenario on the grid `t_start + k dt`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    t_start: f64,
    t_end: f64,
    dt: f64,
    steps: usize,
    /// Events with snapped times, stable-sorted by step.
    events: Vec<(usize, InputEvent)>,
    initial: OperatingPoint,
}

impl Scenario {
    /// Validates the scenario and snaps event times and `t_end` onto the grid.
    pub fn new(
        t_start: f64,
        t_end: f64,
        dt: f64,
        events: Vec<InputEvent>,
        initial: OperatingPoint,
    ) -> Result<(Self, Vec<Warning>)> {
        if !t_start.is_finite() || !t_end.is_finite() || !(t_start < t_end) {
            return Err(Error::InvalidScenario(alloc::format!(
                "need finite t_start < t_end, got [{t_start}, {t_end}]"
            )));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::InvalidScenario(alloc::format!(
                "dt must be positive, got {dt}"
            )));
        }
        let mut warnings = Vec::new();
        let span = (t_end - t_start) / dt;
        let steps = libm::round(span);
        if steps < 1.0 || steps > u32::MAX as f64 {
            return Err(Error::InvalidScenario(alloc::format!(
                "horizon of {span} steps is out of range"
            )));
        }
        let steps = steps as usize;
        let snapped_end = t_start + steps as f64 * dt;
        if (snapped_end - t_end).abs() > 1e-6 * dt {
            warnings.push(Warning::HorizonSnapped {
                requested: t_end,
                snapped: snapped_end,
            });
        }
        let input_dim = initial.u_bar().len();
        let mut snapped = Vec::with_capacity(events.len());
        for ev in events {
            if ev.input >= input_dim {
                return Err(Error::InvalidScenario(alloc::format!(
                    "event input index {} out of range (system has {input_dim} inputs)",
                    ev.input
                )));
            }
            if !ev.value.is_finite() {
                return Err(Error::InvalidScenario(alloc::format!(
                    "event value {} is not finite",
                    ev.value
                )));
            }
            let slack = 1e-6 * dt;
            if !(ev.time >= t_start - slack && ev.time <= t_end + slack) {
                return Err(Error::InvalidScenario(alloc::format!(
                    "event time {} outside [{t_start}, {t_end}]",
                    ev.time
                )));
            }
            let k = (libm::round((ev.time - t_start) / dt) as usize).min(steps);
            let time = t_start + k as f64 * dt;
            if (time - ev.time).abs() > slack {
                warnings.push(Warning::EventSnapped {
                    requested: ev.time,
                    snapped: time,
                });
            }
            snapped.push((k, InputEvent { time, ..ev }));
        }
        snapped.sort_by_key(|(k, _)| *k);
        Ok((
            Self {
                t_start,
                t_end: snapped_end,
                dt,
                steps,
                events: snapped,
                initial,
            },
            warnings,
        ))
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    /// Grid-snapped end time.
    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn time(&self, step: usize) -> f64 {
        self.t_start + step as f64 * self.dt
    }

    pub fn events(&self) -> impl Iterator<Item = &InputEvent> {
        self.events.iter().map(|(_, e)| e)
    }

    pub fn initial(&self) -> &OperatingPoint {
        &self.initial
    }

    /// Step index of the first event, or 0 without events.
    pub fn first_event_step(&self) -> usize {
        self.events.first().map_or(0, |(k, _)| *k)
    }

    /// Same scenario with a different step; events are re-snapped.
    pub fn with_dt(&self, dt: f64) -> Result<(Self, Vec<Warning>)> {
        Self::new(
            self.t_start,
            self.t_end,
            dt,
            self.events().copied().collect(),
            self.initial.clone(),
        )
    }

    /// Piecewise-constant input over every step: entry `k` holds `u` on `[t_k, t_{k+1})`.
    pub fn input_schedule(&self) -> InputSchedule<'_> {
        InputSchedule {
            scenario: self,
            u: self.initial.u_bar().to_vec(),
            next: 0,
        }
    }

    /// FNV-1a hash of grid, events, and initial point.
    pub fn hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.f64(self.t_start);
        h.f64(self.t_end);
        h.f64(self.dt);
        for (k, e) in &self.events {
            h.u64(*k as u64);
            h.u64(e.input as u64);
            h.f64(e.value);
        }
        for v in self.initial.x_bar().iter().chain(self.initial.u_bar()) {
            h.f64(*v);
        }
        h.0
    }
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }

    fn bytes(&mut self, b: &[u8]) {
        for &x in b {
            self.0 ^= x as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }

    fn f64(&mut self, v: f64) {
        self.u64(v.to_bits());
    }
}

/// Walks the grid applying events atomically at the start of their step.
pub struct InputSchedule<'a> {
    scenario: &'a Scenario,
    u: Vec<f64>,
    next: usize,
}

impl InputSchedule<'_> {
    /// Input active on `[t_step, t_step+1)`. Steps must be visited in order.
    pub fn at(&mut self, step: usize) -> &[f64] {
        let events = &self.scenario.events;
        while self.next < events.len() && events[self.next].0 <= step {
            let e = events[self.next].1;
            self.u[e.input] = e.value;
            self.next += 1;
        }
        &self.u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Variant {
    Full,
    Exact,
    Approx,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::Exact, Variant::Approx];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::Exact => "exact",
            Variant::Approx => "approx",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Which slow coordinates drive the approximate fast subsystem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FastContext {
    /// `xi` frozen at its value at the first event (start time without events).
    #[default]
    Frozen,
    /// `xi` taken from the slow solution at the start of each step.
    Tracked,
}

impl FastContext {
    pub fn name(self) -> &'static str {
        match self {
            FastContext::Frozen => "frozen",
            FastContext::Tracked => "tracked",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [FastContext::Frozen, FastContext::Tracked]
            .into_iter()
            .find(|v| v.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceMeta {
    pub variant: Option<Variant>,
    pub dt: f64,
    pub scenario_hash: u64,
}

/// Samples on the scenario grid; `data` is row-major, one row per time.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrace {
    pub times: Vec<f64>,
    pub data: Vec<f64>,
    pub labels: Vec<String>,
    pub meta: TraceMeta,
}

impl SimulationTrace {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data[i * d..(i + 1) * d]
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = f64> + '_ {
        self.data.iter().skip(j).step_by(self.dim()).copied()
    }

    pub fn state_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IntegrationOptions {
    /// `max |lambda|` of the linearization, for the step-size guideline.
    pub fastest_mode: Option<f64>,
    /// Escalate step-size warnings to errors.
    pub strict: bool,
}

/// Checks `dt <= 0.05 / max|lambda|`.
pub fn check_time_step(dt: f64, opts: &IntegrationOptions) -> Result<Option<Warning>> {
    let Some(lam) = opts.fastest_mode.filter(|l| *l > 0.0) else {
        return Ok(None);
    };
    let limit = STEP_RESOLUTION / lam;
    if dt <= limit {
        Ok(None)
    } else if opts.strict {
        Err(Error::TimeStepTooLarge { dt, limit })
    } else {
        Ok(Some(Warning::TimeStepLarge { dt, limit }))
    }
}

/// Classical fixed-step RK4.
///
/// `rhs(step, x, u, dx)` is evaluated with the input held constant over the step;
/// events in the scenario are applied before the step that begins at their time.
/// Returns the row-major samples at every grid point.
pub fn integrate_rk4<F>(
    x0: &[f64],
    scenario: &Scenario,
    opts: &IntegrationOptions,
    mut rhs: F,
) -> Result<(Vec<f64>, Vec<Warning>)>
where
    F: FnMut(usize, &[f64], &[f64], &mut [f64]) -> Result<()>,
{
    let mut warnings = Vec::new();
    warnings.extend(check_time_step(scenario.dt, opts)?);
    let d = x0.len();
    if let Some(i) = x0.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput {
            what: "initial state",
            index: i,
        });
    }
    let steps = scenario.steps;
    let dt = scenario.dt;
    let mut data = Vec::with_capacity((steps + 1) * d);
    data.extend_from_slice(x0);
    let mut x = x0.to_vec();
    let mut tmp = vec![0.0; d];
    let (mut k1, mut k2, mut k3, mut k4) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);
    let mut schedule = scenario.input_schedule();

    for step in 0..steps {
        let u = schedule.at(step);
        let blow_up = |v: &[f64]| -> Result<()> {
            match v.iter().position(|v| !v.is_finite()) {
                Some(index) => Err(Error::SimulationBlowUp {
                    time: scenario.time(step + 1),
                    index,
                }),
                None => Ok(()),
            }
        };
        rhs(step, &x, u, &mut k1)?;
        blow_up(&k1)?;
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * dt * k1[i];
        }
        rhs(step, &tmp, u, &mut k2)?;
        blow_up(&k2)?;
        for i in 0..d {
            tmp[i] = x[i] + 0.5 * dt * k2[i];
        }
        rhs(step, &tmp, u, &mut k3)?;
        blow_up(&k3)?;
        for i in 0..d {
            tmp[i] = x[i] + dt * k3[i];
        }
        rhs(step, &tmp, u, &mut k4)?;
        blow_up(&k4)?;
        for i in 0..d {
            x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
        }
        blow_up(&x)?;
        data.extend_from_slice(&x);
    }
    Ok((data, warnings))
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SimulationOptions {
    pub integration: IntegrationOptions,
    pub fast_context: FastContext,
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub trace: SimulationTrace,
    pub warnings: Vec<Warning>,
}

/// Integrates one model variant over the scenario and returns the trace in original
/// state coordinates.
pub fn run_scenario<S: OdeSystem + ?Sized>(
    system: &S,
    variant: Variant,
    scenario: &Scenario,
    reduction: Option<&Reduction>,
    opts: &SimulationOptions,
) -> Result<SimulationOutput> {
    let total = system.state_dim();
    let x0 = scenario.initial.x_bar();
    if x0.len() != total {
        return Err(Error::Dimension {
            what: "scenario initial state",
            expected: total,
            got: x0.len(),
        });
    }
    if scenario.initial.u_bar().len() != system.input_dim() {
        return Err(Error::Dimension {
            what: "scenario initial input",
            expected: system.input_dim(),
            got: scenario.initial.u_bar().len(),
        });
    }
    let times: Vec<f64> = (0..=scenario.steps).map(|k| scenario.time(k)).collect();
    let (data, warnings) = match variant {
        Variant::Full => integrate_rk4(x0, scenario, &opts.integration, |_, x, u, dx| {
            system.rhs(x, u, dx)
        })?,
        Variant::Exact => {
            let red = reduction.ok_or(Error::MissingTransform("exact"))?;
            run_exact(system, scenario, red, opts)?
        }
        Variant::Approx => {
            let red = reduction.ok_or(Error::MissingTransform("approx"))?;
            run_approx(system, scenario, red, opts)?
        }
    };
    Ok(SimulationOutput {
        trace: SimulationTrace {
            times,
            data,
            labels: system.state_labels().to_vec(),
            meta: TraceMeta {
                variant: Some(variant),
                dt: scenario.dt,
                scenario_hash: scenario.hash(),
            },
        },
        warnings,
    })
}

fn check_reduction<S: OdeSystem + ?Sized>(system: &S, red: &Reduction) -> Result<()> {
    if red.partition().state_dim() != system.state_dim() {
        return Err(Error::Dimension {
            what: "decoupling transform",
            expected: system.state_dim(),
            got: red.partition().state_dim(),
        });
    }
    Ok(())
}

/// Initial decoupled coordinates for `x0` relative to the reduction's operating point.
fn initial_decoupled(x0: &[f64], red: &Reduction) -> (Vec<f64>, Vec<f64>) {
    let dev: Vec<f64> = x0
        .iter()
        .zip(red.operating_point().x_bar())
        .map(|(a, b)| a - b)
        .collect();
    let (z, y) = red.partition().split(&dev);
    red.transform.to_decoupled(&z, &y)
}

fn map_back(
    red: &Reduction,
    xi: &[f64],
    eta: &[f64],
    z: &mut [f64],
    y: &mut [f64],
    out: &mut Vec<f64>,
) {
    red.transform.from_decoupled_into(xi, eta, z, y);
    let start = out.len();
    out.resize(start + red.partition().state_dim(), 0.0);
    let row = &mut out[start..];
    red.partition().merge_into(z, y, row);
    for (v, b) in row.iter_mut().zip(red.operating_point().x_bar()) {
        *v += b;
    }
}

fn run_exact<S: OdeSystem + ?Sized>(
    system: &S,
    scenario: &Scenario,
    red: &Reduction,
    opts: &SimulationOptions,
) -> Result<(Vec<f64>, Vec<Warning>)> {
    check_reduction(system, red)?;
    let (n, m) = (red.partition().n(), red.partition().m());
    let rem = NonlinearRemainders::new(system, &red.blocks)?;
    let (xi0, eta0) = initial_decoupled(scenario.initial.x_bar(), red);
    let mut w0 = xi0;
    w0.extend_from_slice(&eta0);
    let (coords, warnings) = integrate_rk4(&w0, scenario, &opts.integration, |_, w, u, dw| {
        let (dxi, deta) = exact_decoupled_rhs(&w[..n], &w[n..], u, &red.transform, &rem)?;
        dw[..n].copy_from_slice(&dxi);
        dw[n..].copy_from_slice(&deta);
        Ok(())
    })?;
    let mut out = Vec::with_capacity((scenario.steps + 1) * (n + m));
    let (mut z, mut y) = (vec![0.0; n], vec![0.0; m]);
    for w in coords.chunks_exact(n + m) {
        map_back(red, &w[..n], &w[n..], &mut z, &mut y, &mut out);
    }
    Ok((out, warnings))
}

fn run_approx<S: OdeSystem + ?Sized>(
    system: &S,
    scenario: &Scenario,
    red: &Reduction,
    opts: &SimulationOptions,
) -> Result<(Vec<f64>, Vec<Warning>)> {
    check_reduction(system, red)?;
    let (n, m) = (red.partition().n(), red.partition().m());
    let rem = NonlinearRemainders::new(system, &red.blocks)?;
    let (slow, fast) = approx_subsystem_rhs(&red.transform, &rem);
    let (xi0, eta0) = initial_decoupled(scenario.initial.x_bar(), red);

    let (xi_trace, mut warnings) =
        integrate_rk4(&xi0, scenario, &opts.integration, |_, xi, u, dxi| {
            dxi.copy_from_slice(&slow.rhs(xi, u)?);
            Ok(())
        })?;
    let frozen_step = scenario.first_event_step();
    let context = |step: usize| -> &[f64] {
        let k = match opts.fast_context {
            FastContext::Frozen => frozen_step,
            FastContext::Tracked => step,
        };
        &xi_trace[k * n..(k + 1) * n]
    };
    let (eta_trace, w) =
        integrate_rk4(&eta0, scenario, &opts.integration, |step, eta, u, deta| {
            deta.copy_from_slice(&fast.rhs(context(step), eta, u)?);
            Ok(())
        })?;
    warnings.extend(
        w.into_iter()
            .filter(|w| !warnings.contains(w))
            .collect::<Vec<_>>(),
    );

    let mut out = Vec::with_capacity((scenario.steps + 1) * (n + m));
    let (mut z, mut y) = (vec![0.0; n], vec![0.0; m]);
    for (xi, eta) in xi_trace.chunks_exact(n).zip(eta_trace.chunks_exact(m)) {
        map_back(red, xi, eta, &mut z, &mut y, &mut out);
    }
    Ok((out, warnings))
}

/// Per-state error between two traces on an identical grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceComparison {
    pub labels: Vec<String>,
    /// Over the whole trace.
    pub max_abs: Vec<f64>,
    /// `||a - b||_2 / max(||a - mean(a)||_2, 1e-9)` over the window.
    pub rel_l2: Vec<f64>,
    pub global_max: f64,
    pub window: (f64, f64),
}

/// Compares `b` against the reference `a`. `window` defaults to the full span.
pub fn compare_traces(
    a: &SimulationTrace,
    b: &SimulationTrace,
    window: Option<(f64, f64)>,
) -> Result<TraceComparison> {
    if a.labels != b.labels {
        return Err(Error::GridMismatch("state labels differ".to_string()));
    }
    if a.times != b.times {
        return Err(Error::GridMismatch(alloc::format!(
            "time grids differ ({} vs {} samples)",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::GridMismatch("traces are empty".to_string()));
    }
    let d = a.dim();
    let (lo, hi) = window.unwrap_or((a.times[0], a.times[a.len() - 1]));
    let eps = 1e-9 * (hi - lo).abs().max(1.0) * 1e-3;
    let rows: Vec<usize> = (0..a.len())
        .filter(|&i| a.times[i] >= lo - eps && a.times[i] <= hi + eps)
        .collect();
    if rows.is_empty() {
        return Err(Error::GridMismatch(alloc::format!(
            "window [{lo}, {hi}] holds no samples"
        )));
    }
    let mut max_abs = vec![0.0f64; d];
    for (ra, rb) in a.data.chunks_exact(d).zip(b.data.chunks_exact(d)) {
        for j in 0..d {
            max_abs[j] = max_abs[j].max((ra[j] - rb[j]).abs());
        }
    }
    let mut rel_l2 = vec![0.0; d];
    for (j, r) in rel_l2.iter_mut().enumerate() {
        let mean = rows.iter().map(|&i| a.row(i)[j]).sum::<f64>() / rows.len() as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for &i in &rows {
            let (x, y) = (a.row(i)[j], b.row(i)[j]);
            num += (x - y) * (x - y);
            den += (x - mean) * (x - mean);
        }
        *r = libm::sqrt(num) / libm::sqrt(den).max(1e-9);
    }
    let global_max = max_abs.iter().copied().fold(0.0, f64::max);
    Ok(TraceComparison {
        labels: a.labels.clone(),
        max_abs,
        rel_l2,
        global_max,
        window: (lo, hi),
    })
}
