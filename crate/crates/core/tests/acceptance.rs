//! Acceptance gate: one `[PASS]`/`[FAIL]` line per criterion on the built-in
//! three-inverter model, exit status 1 if any line fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use twoscale_core::decouple::{partition_model, solve_h, solve_l, LOptions, Reduction};
use twoscale_core::grid::{input, state, InputVector, InverterParameters, SynchronverterGrid};
use twoscale_core::modal::{
    classify_modes, eigenpairs, find_steady_state, linearize, participation_matrix, Classification,
    ModeSet, NewtonOptions, ParticipationMatrix, Partition, SplitStrategy, SteadyState,
};
use twoscale_core::sim::{
    compare_traces, integrate_rk4, run_scenario, FastContext, InputEvent, IntegrationOptions,
    Scenario, SimulationOptions, SimulationTrace, Variant,
};
use twoscale_core::system::{FnSystem, LinearModel, OdeSystem, OperatingPoint, DEFAULT_FD_STEP};

const EVENT_TIME: f64 = 1.0;
const P_REF_STEP: f64 = 0.6;
const DT: f64 = 1e-5;
const T_END: f64 = 2.0;

struct Fixture {
    system: SynchronverterGrid,
    u: InputVector,
    steady: SteadyState,
    steady_time: Duration,
    modes: ModeSet,
    pf: ParticipationMatrix,
    class: Classification,
    reduction: Reduction,
    scenario: Scenario,
    full: SimulationTrace,
    exact: SimulationTrace,
    approx: SimulationTrace,
    sim_time: Duration,
}

fn step_scenario(op: &OperatingPoint, dt: f64) -> Scenario {
    let ev = InputEvent {
        time: EVENT_TIME,
        input: input::p_ref(0),
        value: P_REF_STEP,
    };
    Scenario::new(0.0, T_END, dt, vec![ev], op.clone())
        .unwrap()
        .0
}

fn sim_opts(modes: &ModeSet, ctx: FastContext) -> SimulationOptions {
    SimulationOptions {
        integration: IntegrationOptions {
            fastest_mode: modes.moduli().first().copied(),
            strict: false,
        },
        fast_context: ctx,
    }
}

fn build() -> Fixture {
    let system = SynchronverterGrid::default();
    let u = InputVector::default();
    let t0 = Instant::now();
    let steady = system
        .steady_state(u.as_slice(), NewtonOptions::default())
        .expect("steady state");
    let steady_time = t0.elapsed();
    let (lin, _) = linearize(&system, &steady.point, DEFAULT_FD_STEP).expect("linearize");
    let modes = eigenpairs(&lin.a).expect("eigenpairs");
    let pf = participation_matrix(&modes).expect("participation");
    let class = classify_modes(&modes, &pf, SplitStrategy::AutoGap).expect("classification");
    let reduction = Reduction::new(&lin, &class.partition, LOptions::default()).expect("reduction");
    let scenario = step_scenario(&steady.point, DT);
    let opts = sim_opts(&modes, FastContext::default());

    let t0 = Instant::now();
    let [full, exact, approx] = std::thread::scope(|s| {
        let handles = Variant::ALL.map(|v| {
            let (system, scenario, reduction, opts) = (&system, &scenario, &reduction, &opts);
            s.spawn(move || run_scenario(system, v, scenario, Some(reduction), opts))
        });
        handles.map(|h| h.join().unwrap().expect("simulation").trace)
    });
    let sim_time = t0.elapsed();
    Fixture {
        system,
        u,
        steady,
        steady_time,
        modes,
        pf,
        class,
        reduction,
        scenario,
        full,
        exact,
        approx,
        sim_time,
    }
}

struct Outcome {
    pass: bool,
    summary: String,
    details: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            details: Vec::new(),
        }
    }

    fn detail(mut self, d: impl Into<String>) -> Self {
        self.details.push(d.into());
        self
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn c1_equilibrium(f: &Fixture) -> Outcome {
    let x = f.steady.point.x_bar();
    let res = f.steady.point.residual_inf_norm();
    let omega_err = (0..3)
        .map(|k| (x[state::omega_sv(k)] - 1.0).abs())
        .fold(0.0, f64::max);
    let igd = x[state::I_GD];
    let pass = res <= 1e-10
        && omega_err <= 1e-10
        && (igd - 1.5).abs() <= 0.05
        && f.steady_time < Duration::from_secs(1);
    Outcome::new(
        pass,
        format!(
            "residual {res:.2e} (<= 1e-10), max|omega_sv - 1| {omega_err:.1e}, i_gd {igd:.4} (1.5 +/- 0.05), \
             {} Newton iterations in {:.1} ms (< 1 s)",
            f.steady.iterations,
            f.steady_time.as_secs_f64() * 1e3
        ),
    )
}

fn spectrum_checks(eigs: &[Complex64]) -> (bool, Vec<String>) {
    let moduli: Vec<f64> = eigs.iter().map(|l| l.norm()).collect();
    let mut lines = Vec::new();
    let mut ok = true;
    let mut check = |name: &str, pass: bool, msg: String| {
        ok &= pass;
        lines.push(format!(
            "{} {name}: {msg}",
            if pass { "ok  " } else { "MISS" }
        ));
    };
    let big = moduli.iter().filter(|m| **m >= 300.0).count();
    let small = moduli.iter().filter(|m| **m <= 50.0).count();
    check(
        "counts",
        big == 10 && small == 9,
        format!("{big} with |lambda| >= 300 (want 10), {small} with |lambda| <= 50 (want 9)"),
    );
    let osc: Vec<f64> = eigs
        .iter()
        .filter(|l| l.im > 0.0)
        .map(|l| l.norm())
        .collect();
    let real: Vec<f64> = eigs.iter().filter(|l| l.im == 0.0).map(|l| l.re).collect();
    let pairs = |lo: f64, hi: f64| -> Vec<f64> {
        osc.iter()
            .copied()
            .filter(|m| *m >= lo && *m < hi)
            .collect()
    };
    let dominant = pairs(1000.0, f64::INFINITY);
    check(
        "dominant pairs",
        dominant.len() == 2
            && within(dominant[0], 4661.03, 0.05)
            && within(dominant[1], 4032.74, 0.05),
        format!("{dominant:.2?} vs [4661.03, 4032.74] within 5%"),
    );
    let mid = pairs(100.0, 1000.0);
    check(
        "~314 pairs",
        mid.len() == 3 && mid.iter().all(|m| within(*m, 314.16, 0.02)),
        format!("{mid:.2?} vs 314 within 2%"),
    );
    let slow = pairs(0.0, 100.0);
    let slow_ok = slow.len() == 3
        && slow.iter().filter(|m| within(**m, 44.96, 0.05)).count() == 2
        && slow.iter().filter(|m| within(**m, 15.03, 0.05)).count() == 1;
    check(
        "slow pairs",
        slow_ok,
        format!("{slow:.2?} vs [44.96, 44.96, 15.03] within 5%"),
    );
    let mut r = real.clone();
    r.sort_by(|a, b| a.total_cmp(b));
    // -0.0636 appears twice and -0.0066 once in the reference spectrum
    let real_ok = r.len() == 3
        && r.iter().filter(|v| within(**v, -0.0636, 0.10)).count() == 2
        && r.iter().filter(|v| within(**v, -0.0066, 0.10)).count() == 1;
    check(
        "real modes",
        real_ok,
        format!("{r:.5?} vs [-0.0636, -0.0636, -0.0066] within 10%"),
    );
    (ok, lines)
}

fn c2_spectrum(f: &Fixture) -> Outcome {
    let (pass, lines) = spectrum_checks(&f.modes.eigenvalues);
    let mut out = Outcome::new(
        pass,
        format!(
            "{} of 5 sub-checks hold at the default reactive-loop constant K = {}",
            lines.iter().filter(|l| l.starts_with("ok")).count(),
            f.system.inverters()[0].k
        ),
    );
    for l in lines {
        out = out.detail(l);
    }
    // Same pipeline with K = 200 on every inverter.
    let inv = InverterParameters {
        k: 200.0,
        ..InverterParameters::default()
    };
    let alt =
        SynchronverterGrid::new(f.system.grid().clone(), [inv.clone(), inv.clone(), inv]).unwrap();
    let diag = alt
        .steady_state(f.u.as_slice(), NewtonOptions::default())
        .and_then(|ss| linearize(&alt, &ss.point, DEFAULT_FD_STEP))
        .and_then(|(lin, _)| eigenpairs(&lin.a));
    match diag {
        Ok(m) => {
            let (ok, lines) = spectrum_checks(&m.eigenvalues);
            out = out.detail(format!(
                "diagnostic, K = 200: all sub-checks {}",
                if ok { "hold" } else { "do not hold" }
            ));
            for l in lines {
                out = out.detail(format!("  {l}"));
            }
        }
        Err(e) => out = out.detail(format!("diagnostic, K = 200: {e}")),
    }
    out
}

fn c3_participation(f: &Fixture) -> Outcome {
    let mut bad = Vec::new();
    let fast_modes = 10;
    for mode in 0..f.modes.len() {
        for k in f.pf.significant_states(mode, 0.15) {
            let fast_state = k < state::ELECTRICAL;
            if fast_state != (mode < fast_modes) {
                bad.push(format!(
                    "mode {} -> x{} ({:.3})",
                    mode + 1,
                    k + 1,
                    f.pf.get(k, mode)
                ));
            }
        }
    }
    let auto_ok = f.class.fast_modes == fast_modes
        && f.class.partition.fast() == (0..state::ELECTRICAL).collect::<Vec<_>>().as_slice();
    Outcome::new(
        bad.is_empty() && auto_ok,
        format!(
            "{} misplaced entries above 0.15; auto-gap chose m = {} with fast states {:?}",
            bad.len(),
            f.class.fast_modes,
            f.class
                .partition
                .fast()
                .iter()
                .map(|k| k + 1)
                .collect::<Vec<_>>()
        ),
    )
    .detail(if bad.is_empty() {
        String::from("none")
    } else {
        bad.join(", ")
    })
}

fn c4_transform(f: &Fixture) -> Outcome {
    let t = &f.reduction.transform;
    let bound = 1e-9 * f.reduction.blocks.a_norm;
    let mut remaining: Vec<Complex64> = t
        .slow_eigenvalues
        .iter()
        .chain(&t.fast_eigenvalues)
        .copied()
        .collect();
    let mut worst = 0.0f64;
    for l in &f.modes.eigenvalues {
        let (idx, d) = remaining
            .iter()
            .enumerate()
            .map(|(i, m)| (i, (m - l).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        worst = worst.max(d / l.norm());
        remaining.swap_remove(idx);
    }
    let gap = t.gap_ratio();
    let pass =
        t.l_residual <= bound && t.h_residual <= bound && worst <= 1e-6 && (gap - 7.0).abs() <= 0.5;
    Outcome::new(
        pass,
        format!(
            "L residual {:.2e}, H residual {:.2e} (bound {bound:.2e}); eig split error {worst:.1e} (<= 1e-6); \
             gap ratio {gap:.3} (7.0 +/- 0.5); L in {} iterations",
            t.l_residual, t.h_residual, t.l_iterations
        ),
    )
}

fn c5_exactness(f: &Fixture) -> Outcome {
    let cmp = compare_traces(&f.full, &f.exact, None).unwrap();
    let pass = cmp.global_max <= 1e-6 && f.sim_time < Duration::from_secs(60);
    Outcome::new(
        pass,
        format!(
            "exact vs full global max error {:.2e} p.u. (<= 1e-6); three variants in {:.1} s (< 60 s)",
            cmp.global_max,
            f.sim_time.as_secs_f64()
        ),
    )
}

fn i_gd_profile(trace: &SimulationTrace, post_eq: f64) -> (f64, f64, f64) {
    let j = state::I_GD;
    let start = trace.row(f64_row(trace, EVENT_TIME))[j];
    let end = trace.last()[j];
    let peak = trace
        .times
        .iter()
        .zip(trace.column(j))
        .filter(|(t, _)| **t >= EVENT_TIME)
        .map(|(_, v)| v)
        .fold(f64::NEG_INFINITY, f64::max);
    (start, end, peak - post_eq)
}

fn f64_row(trace: &SimulationTrace, t: f64) -> usize {
    trace
        .times
        .iter()
        .position(|s| (s - t).abs() < 1e-9)
        .unwrap()
}

fn worst_rel_l2(full: &SimulationTrace, other: &SimulationTrace) -> (f64, String) {
    let cmp = compare_traces(full, other, Some((EVENT_TIME, T_END))).unwrap();
    let (i, v) = cmp
        .rel_l2
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .unwrap();
    (*v, cmp.labels[i].clone())
}

fn c6_fidelity(f: &Fixture) -> Outcome {
    let (worst, label) = worst_rel_l2(&f.full, &f.approx);
    let mut u_post = f.u;
    u_post.0[input::p_ref(0)] = P_REF_STEP;
    let post = find_steady_state(
        &f.system,
        u_post.as_slice(),
        f.steady.point.x_bar(),
        NewtonOptions::default(),
    )
    .expect("post-event equilibrium");
    let post_igd = post.point.x_bar()[state::I_GD];
    let mut ok = worst < 0.05;
    let mut details = Vec::new();
    for (name, tr) in [("full", &f.full), ("approx", &f.approx)] {
        let (start, end, overshoot) = i_gd_profile(tr, post_igd);
        let good = (start - 1.5).abs() <= 0.05 && (end - 1.6).abs() <= 0.05 && overshoot <= 0.05;
        ok &= good;
        details.push(format!(
            "{name}: i_gd {start:.4} -> {end:.4} at t = 2 s, peak above post-event equilibrium {post_igd:.4}: {overshoot:.4}"
        ));
    }
    let cmp = compare_traces(&f.full, &f.approx, Some((EVENT_TIME, T_END))).unwrap();
    let per_state: Vec<String> = cmp
        .labels
        .iter()
        .zip(&cmp.rel_l2)
        .map(|(l, v)| format!("{l} {:.2}%", 100.0 * v))
        .collect();
    let mut out = Outcome::new(
        ok,
        format!(
            "worst relative L2 over [1, 2] s: {:.2}% in {label} (< 5%), fast context {}",
            100.0 * worst,
            FastContext::default().name()
        ),
    );
    for d in details {
        out = out.detail(d);
    }
    out = out.detail(format!("per state: {}", per_state.join(", ")));
    let tracked = run_scenario(
        &f.system,
        Variant::Approx,
        &f.scenario,
        Some(&f.reduction),
        &sim_opts(&f.modes, FastContext::Tracked),
    )
    .unwrap()
    .trace;
    let (tw, tl) = worst_rel_l2(&f.full, &tracked);
    out.detail(format!(
        "diagnostic, tracked fast context: worst relative L2 {:.3}% in {tl}",
        100.0 * tw
    ))
}

fn labelled_identical(trace: &SimulationTrace) -> (bool, f64) {
    let pairs = [
        (state::i_id(1), state::i_id(2)),
        (state::i_id(1) + 1, state::i_id(2) + 1),
        (state::omega_sv(1), state::omega_sv(2)),
        (state::delta_theta(1), state::delta_theta(2)),
        (state::mf_if(1), state::mf_if(2)),
    ];
    let mut identical = true;
    let mut max = 0.0f64;
    for i in 0..trace.len() {
        let row = trace.row(i);
        for (b, c) in pairs {
            identical &= row[b].to_bits() == row[c].to_bits();
            max = max.max((row[b] - row[c]).abs());
        }
    }
    (identical, max)
}

fn c8_symmetry(f: &Fixture) -> Outcome {
    let x = f.steady.point.x_bar();
    let eq_ok = [
        (state::i_id(1), state::i_id(2)),
        (state::i_id(1) + 1, state::i_id(2) + 1),
        (state::delta_theta(1), state::delta_theta(2)),
        (state::mf_if(1), state::mf_if(2)),
    ]
    .iter()
    .all(|(b, c)| x[*b].to_bits() == x[*c].to_bits());
    let (full_ok, _) = labelled_identical(&f.full);
    let (_, exact_max) = labelled_identical(&f.exact);
    let (_, approx_max) = labelled_identical(&f.approx);
    Outcome::new(
        eq_ok && full_ok,
        format!(
            "B/C bit-identical at equilibrium: {eq_ok}; B/C bit-identical over the full-model step trace: {full_ok}"
        ),
    )
    .detail(format!(
        "decoupled variants (matrix products in permuted coordinates): max |B - C| exact {exact_max:.1e}, approx {approx_max:.1e}"
    ))
}

// ---- random two-time-scale systems for the oracle suite ----

fn partitioned(a: DMatrix<f64>, n: usize) -> twoscale_core::decouple::PartitionedLinearModel {
    let dim = a.nrows();
    let sys =
        FnSystem::numbered(dim, 1, |_x, _u, dx| dx.iter_mut().for_each(|v| *v = 0.0)).unwrap();
    let op = OperatingPoint::new(&sys, vec![0.0; dim], vec![0.0]).unwrap();
    let lin = LinearModel {
        a,
        b: DMatrix::zeros(dim, 1),
        operating_point: op,
        fd_step: DEFAULT_FD_STEP,
        state_labels: sys.state_labels().to_vec(),
    };
    partition_model(&lin, &Partition::leading_slow(dim, n).unwrap()).unwrap()
}

fn max_modulus(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(0.0, f64::max)
}

fn min_modulus(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|l| l.norm())
        .fold(f64::INFINITY, f64::min)
}

fn random_two_scale(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, usize) {
    loop {
        let n = rng.random_range(1..=6);
        let m = rng.random_range(1..=6);
        let mut uniform = |r: usize, c: usize, s: f64| {
            DMatrix::from_fn(r, c, |_, _| s * rng.random_range(-1.0..1.0))
        };
        let a11 = uniform(n, n, 1.0) - DMatrix::identity(n, n) * 1.5;
        let a12 = uniform(n, m, 1.0);
        let a21 = uniform(m, n, 1.0);
        let shape = DMatrix::identity(m, m) + uniform(m, m, 0.3);
        let mut d = DMatrix::zeros(m, m);
        let scale = 20.0 * max_modulus(&a11).max(1.0);
        let mut i = 0;
        while i < m {
            let sigma = rng.random_range(0.5..5.0);
            let w = scale * rng.random_range(1.0..3.0);
            if i + 1 < m {
                d[(i, i)] = -sigma;
                d[(i + 1, i + 1)] = -sigma;
                d[(i, i + 1)] = w;
                d[(i + 1, i)] = -w;
                i += 2;
            } else {
                d[(i, i)] = -w;
                i += 1;
            }
        }
        let Some(inv) = shape.clone().try_inverse() else {
            continue;
        };
        let a22 = &shape * d * inv;
        if min_modulus(&a22) < 10.0 * max_modulus(&a11) {
            continue;
        }
        let mut a = DMatrix::zeros(n + m, n + m);
        a.view_mut((0, 0), (n, n)).copy_from(&a11);
        a.view_mut((0, n), (n, m)).copy_from(&a12);
        a.view_mut((n, 0), (m, n)).copy_from(&a21);
        a.view_mut((n, n), (m, m)).copy_from(&a22);
        return (a, n);
    }
}

/// Newton on the quadratic L equation, each step a Kronecker-vectorized dense solve.
fn newton_kronecker_l(b: &twoscale_core::decouple::PartitionedLinearModel) -> DMatrix<f64> {
    let (n, m) = (b.a11.nrows(), b.a22.nrows());
    let mut l = b.a22.clone().try_inverse().unwrap() * &b.a21;
    for _ in 0..50 {
        let r = &b.a21 - &b.a22 * &l + &l * &b.a11 - &l * &b.a12 * &l;
        let left = -(&b.a22 + &l * &b.a12);
        let right = &b.a11 - &b.a12 * &l;
        let jac = DMatrix::<f64>::identity(n, n).kronecker(&left)
            + right.transpose().kronecker(&DMatrix::identity(m, m));
        let rhs = -nalgebra::DVector::from_column_slice(r.as_slice());
        let step = jac.lu().solve(&rhs).unwrap();
        let step = DMatrix::from_column_slice(m, n, step.as_slice());
        l += &step;
        if step.norm() <= 1e-15 * l.norm().max(1.0) {
            break;
        }
    }
    l
}

/// `(I_m (x) S - F^T (x) I_n) vec(H) = -vec(A12)`.
fn kronecker_h(
    b: &twoscale_core::decouple::PartitionedLinearModel,
    l: &DMatrix<f64>,
) -> DMatrix<f64> {
    let (n, m) = (b.a11.nrows(), b.a22.nrows());
    let s = &b.a11 - &b.a12 * l;
    let f = &b.a22 + l * &b.a12;
    let k = DMatrix::<f64>::identity(m, m).kronecker(&s)
        - f.transpose().kronecker(&DMatrix::identity(n, n));
    let rhs = -nalgebra::DVector::from_column_slice(b.a12.as_slice());
    let h = k.lu().solve(&rhs).unwrap();
    DMatrix::from_column_slice(n, m, h.as_slice())
}

fn rk4_decay_error(dt: f64) -> f64 {
    let sys = FnSystem::numbered(1, 1, |x, _u, dx| dx[0] = -x[0]).unwrap();
    let op = OperatingPoint::new(&sys, vec![1.0], vec![0.0]).unwrap();
    let (sc, _) = Scenario::new(0.0, 1.0, dt, vec![], op).unwrap();
    let (data, _) = integrate_rk4(
        &[1.0],
        &sc,
        &IntegrationOptions::default(),
        |_, x, u, dx| sys.rhs(x, u, dx),
    )
    .unwrap();
    (data[data.len() - 1] - (-1.0f64).exp()).abs()
}

fn rk4_oscillator_error(dt: f64) -> f64 {
    let sys = FnSystem::numbered(2, 1, |x, _u, dx| {
        dx[0] = x[1];
        dx[1] = -x[0];
    })
    .unwrap();
    let op = OperatingPoint::new(&sys, vec![1.0, 0.0], vec![0.0]).unwrap();
    let (sc, _) = Scenario::new(0.0, 10.0, dt, vec![], op).unwrap();
    let (data, _) = integrate_rk4(
        &[1.0, 0.0],
        &sc,
        &IntegrationOptions::default(),
        |_, x, u, dx| sys.rhs(x, u, dx),
    )
    .unwrap();
    let last = &data[data.len() - 2..];
    (last[0] - 10.0f64.cos())
        .abs()
        .max((last[1] + 10.0f64.sin()).abs())
}

fn c7_oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_2024);
    let (mut worst_l, mut worst_h) = (0.0f64, 0.0f64);
    let mut failures = Vec::new();
    for case in 0..100 {
        let (a, n) = random_two_scale(&mut rng);
        let b = partitioned(a, n);
        let sol = match solve_l(&b, LOptions::default()) {
            Ok(s) => s,
            Err(e) => {
                failures.push(format!("case {case}: solve_L {e}"));
                continue;
            }
        };
        let l_ref = newton_kronecker_l(&b);
        let dl = (&sol.l - &l_ref).amax() / l_ref.amax().max(1.0);
        let (h, _) = match solve_h(&b, &sol.l) {
            Ok(h) => h,
            Err(e) => {
                failures.push(format!("case {case}: solve_H {e}"));
                continue;
            }
        };
        let h_ref = kronecker_h(&b, &sol.l);
        let dh = (&h - &h_ref).amax() / h_ref.amax().max(1.0);
        worst_l = worst_l.max(dl);
        worst_h = worst_h.max(dh);
    }
    let e1 = rk4_decay_error(0.01);
    let decay_ratios = [
        rk4_decay_error(0.1) / rk4_decay_error(0.05),
        rk4_decay_error(0.05) / rk4_decay_error(0.025),
    ];
    let osc_ratios = [
        rk4_oscillator_error(0.1) / rk4_oscillator_error(0.05),
        rk4_oscillator_error(0.05) / rk4_oscillator_error(0.025),
    ];
    let order_ok = decay_ratios
        .iter()
        .chain(&osc_ratios)
        .all(|r| (14.0..=18.0).contains(r));
    let pass = failures.is_empty() && worst_l <= 1e-9 && worst_h <= 1e-10 && e1 <= 1e-9 && order_ok;
    let mut out = Outcome::new(
        pass,
        format!(
            "100 random systems: max L deviation {worst_l:.1e} (<= 1e-9), max H deviation {worst_h:.1e} (<= 1e-10); \
             RK4 x' = -x at dt 0.01 error {e1:.1e} (<= 1e-9)"
        ),
    )
    .detail(format!(
        "RK4 error ratios under dt halving (16 expected): decay {decay_ratios:.2?}, oscillator {osc_ratios:.2?}"
    ));
    for fl in failures {
        out = out.detail(fl);
    }
    out
}

fn p_dt_halving(f: &Fixture) -> Outcome {
    let opts = SimulationOptions::default();
    let traces: Vec<SimulationTrace> = [1e-4, 5e-5, 2.5e-5]
        .iter()
        .map(|dt| {
            run_scenario(
                &f.system,
                Variant::Full,
                &step_scenario(&f.steady.point, *dt),
                None,
                &opts,
            )
            .unwrap()
            .trace
        })
        .collect();
    // max difference on the coarse grid points
    let diff = |a: &SimulationTrace, b: &SimulationTrace, stride: usize| -> f64 {
        let mut m = 0.0f64;
        for i in 0..a.len() {
            for (x, y) in a.row(i).iter().zip(b.row(i * stride)) {
                m = m.max((x - y).abs());
            }
        }
        m
    };
    let d1 = diff(&traces[0], &traces[1], 2);
    let d_fine = diff(&traces[1], &traces[2], 2);
    Outcome::new(
        d_fine <= d1 / 15.0,
        format!("full-model change at dt 1e-4 -> 5e-5: {d1:.2e}, at 5e-5 -> 2.5e-5: {d_fine:.2e} (ratio {:.1}, >= 15)", d1 / d_fine),
    )
}

fn p_persistence(f: &Fixture) -> Outcome {
    let (sc, _) = Scenario::new(0.0, T_END, DT, vec![], f.steady.point.clone()).unwrap();
    let opts = sim_opts(&f.modes, FastContext::default());
    let x_bar = f.steady.point.x_bar();
    let mut worst = Vec::new();
    for v in Variant::ALL {
        let tr = run_scenario(&f.system, v, &sc, Some(&f.reduction), &opts)
            .unwrap()
            .trace;
        let dev = tr
            .data
            .chunks_exact(tr.dim())
            .flat_map(|row| row.iter().zip(x_bar).map(|(a, b)| (a - b).abs()))
            .fold(0.0f64, f64::max);
        worst.push((v, dev));
    }
    Outcome::new(
        worst.iter().all(|(_, d)| *d <= 1e-9),
        format!(
            "no-event drift from the equilibrium over 2 s (<= 1e-9): {}",
            worst
                .iter()
                .map(|(v, d)| format!("{v} {d:.1e}"))
                .collect::<Vec<_>>()
                .join(", ")
        ),
    )
}

fn p_determinism(f: &Fixture) -> Outcome {
    let opts = sim_opts(&f.modes, FastContext::default());
    let again = run_scenario(
        &f.system,
        Variant::Approx,
        &f.scenario,
        Some(&f.reduction),
        &opts,
    )
    .unwrap()
    .trace;
    let same = again
        .data
        .iter()
        .zip(&f.approx.data)
        .all(|(a, b)| a.to_bits() == b.to_bits());
    Outcome::new(same, "repeated approx run is bit-identical to the first")
}

fn main() -> ExitCode {
    let t0 = Instant::now();
    let f = build();
    let results: Vec<(&str, Outcome)> = vec![
        ("C1 equilibrium", c1_equilibrium(&f)),
        ("C2 spectrum structure", c2_spectrum(&f)),
        ("C3 participation split", c3_participation(&f)),
        ("C4 transform quality", c4_transform(&f)),
        ("C5 exactness", c5_exactness(&f)),
        ("C6 approximation fidelity", c6_fidelity(&f)),
        ("C7 oracle suites", c7_oracles()),
        ("C8 symmetry", c8_symmetry(&f)),
        ("P1 dt halving", p_dt_halving(&f)),
        ("P2 equilibrium persistence", p_persistence(&f)),
        ("P3 determinism", p_determinism(&f)),
    ];
    let mut failed = 0;
    for (name, o) in &results {
        println!(
            "[{}] {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.summary
        );
        for d in &o.details {
            println!("       {d}");
        }
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed ({:.1} s)",
        results.len() - failed,
        t0.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
