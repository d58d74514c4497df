//! Pipeline stages behind the subcommands.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};

use twoscale_core::decouple::{partition_model, DecouplingTransform, LOptions, Reduction};
use twoscale_core::grid::{SynchronverterGrid, INPUT_LABELS};
use twoscale_core::modal::{
    classify_modes, eigenpairs, linearize, participation_matrix, Classification, ModeSet,
    NewtonOptions, ParticipationMatrix, Partition, SplitStrategy, SteadyState,
};
use twoscale_core::sim::{
    compare_traces, run_scenario, IntegrationOptions, Scenario, SimulationOptions, SimulationTrace,
    TraceComparison, Variant,
};
use twoscale_core::system::{LinearModel, OdeSystem};
use twoscale_core::Warning;

use crate::artifacts::{num, ArtifactDir};
use crate::config::{FastCount, RunConfig};

/// Everything up to and including the mode classification.
pub struct Analysis {
    pub steady: SteadyState,
    pub lin: LinearModel,
    pub modes: ModeSet,
    pub pf: ParticipationMatrix,
    pub class: Classification,
}

pub struct Session {
    pub cfg: RunConfig,
    pub system: SynchronverterGrid,
    pub out: ArtifactDir,
    warnings: Vec<(&'static str, Warning)>,
}

fn stage<T, E: std::fmt::Display>(name: &'static str, r: std::result::Result<T, E>) -> Result<T> {
    r.map_err(|e| anyhow!("stage `{name}` failed: {e}"))
}

fn labels(idx: &[usize], all: &[String]) -> Vec<String> {
    idx.iter().map(|&i| all[i].clone()).collect()
}

fn fmt_complex(l: num_complex::Complex64) -> String {
    if l.im == 0.0 {
        format!("{:.4}", l.re)
    } else {
        format!(
            "{:.4} {} j{:.4}",
            l.re,
            if l.im < 0.0 { '-' } else { '+' },
            l.im.abs()
        )
    }
}

impl Session {
    /// Validates the configuration and writes its echo to `config.ini`.
    pub fn new(cfg: RunConfig) -> Result<Self> {
        let system = stage("config", cfg.system())?;
        let out = ArtifactDir::create(&cfg.output.directory, cfg.hash())?;
        out.write_text("config.ini", &cfg.echo())?;
        Ok(Self {
            cfg,
            system,
            out,
            warnings: Vec::new(),
        })
    }

    fn warn(&mut self, stage: &'static str, w: impl IntoIterator<Item = Warning>) {
        for w in w {
            eprintln!("warning [{stage}]: {w}");
            self.warnings.push((stage, w));
        }
    }

    pub fn warnings(&self) -> &[(&'static str, Warning)] {
        &self.warnings
    }

    fn newton(&self) -> NewtonOptions {
        NewtonOptions {
            tol: self.cfg.analysis.newton_tol,
            max_iter: self.cfg.analysis.newton_max_iter,
            fd_step: self.cfg.analysis.fd_step,
        }
    }

    pub fn steady(&mut self, write: bool) -> Result<SteadyState> {
        let ss = stage(
            "steady",
            self.system
                .steady_state(self.cfg.inputs.as_slice(), self.newton()),
        )?;
        self.warn("steady", ss.warnings.clone());
        if write {
            let labels = self.system.state_labels().to_vec();
            let rows = labels
                .iter()
                .zip(ss.point.x_bar())
                .map(|(l, v)| vec![l.clone(), num(*v)]);
            self.out.write_table(
                "steady.csv",
                &[
                    ("newton-iterations", ss.iterations.to_string()),
                    ("residual-inf-norm", num(ss.point.residual_inf_norm())),
                ],
                &["state".into(), "value".into()],
                rows,
            )?;
        }
        Ok(ss)
    }

    pub fn linearize(&mut self, ss: &SteadyState, write: bool) -> Result<LinearModel> {
        let (lin, w) = stage(
            "linearize",
            linearize(&self.system, &ss.point, self.cfg.analysis.fd_step),
        )?;
        self.warn("linearize", w);
        if write {
            let meta = [("fd-step", num(lin.fd_step))];
            let states = lin.state_labels.clone();
            let inputs: Vec<String> = INPUT_LABELS.iter().map(|s| s.to_string()).collect();
            self.out
                .write_matrix("A.csv", &meta, "state", &states, &states, &lin.a)?;
            self.out
                .write_matrix("B.csv", &meta, "state", &states, &inputs, &lin.b)?;
        }
        Ok(lin)
    }

    pub fn analyse(&mut self, write_steady: bool, write_lin: bool) -> Result<Analysis> {
        let steady = self.steady(write_steady)?;
        let lin = self.linearize(&steady, write_lin)?;
        let modes = stage("eigs", eigenpairs(&lin.a))?;
        let pf = stage("pf", participation_matrix(&modes))?;
        let strategy = match self.cfg.analysis.fast_count {
            FastCount::Auto => SplitStrategy::AutoGap,
            FastCount::Fixed(m) => SplitStrategy::FastCount(m),
        };
        let class = stage("pf", classify_modes(&modes, &pf, strategy))?;
        self.warn("pf", class.warnings.clone());
        Ok(Analysis {
            steady,
            lin,
            modes,
            pf,
            class,
        })
    }

    pub fn write_eigs(&self, a: &Analysis) -> Result<()> {
        let rows = a.modes.eigenvalues.iter().enumerate().map(|(i, l)| {
            vec![
                (i + 1).to_string(),
                num(l.re),
                num(l.im),
                num(l.norm()),
                if i < a.class.fast_modes {
                    "fast"
                } else {
                    "slow"
                }
                .to_string(),
            ]
        });
        self.out.write_table(
            "eigs.csv",
            &[
                ("order", "descending modulus".into()),
                ("eigenvector-condition", num(a.modes.condition)),
            ],
            &["mode", "real", "imag", "modulus", "block"].map(String::from),
            rows,
        )
    }

    pub fn write_pf(&self, a: &Analysis) -> Result<()> {
        let modes: Vec<String> = (1..=a.modes.len()).map(|i| format!("mode{i}")).collect();
        self.out.write_matrix(
            "pf.csv",
            &[("pf-threshold", num(self.cfg.analysis.pf_threshold))],
            "state",
            &a.lin.state_labels,
            &modes,
            &a.pf.entries,
        )?;
        self.write_partition(a)
    }

    fn write_partition(&self, a: &Analysis) -> Result<()> {
        let p = &a.class.partition;
        let rows = (0..p.state_dim()).map(|k| {
            vec![
                (k + 1).to_string(),
                a.lin.state_labels[k].clone(),
                if p.fast().contains(&k) {
                    "fast"
                } else {
                    "slow"
                }
                .to_string(),
                num(a.class.fast_mass[k]),
                num(a.class.slow_mass[k]),
            ]
        });
        self.out.write_table(
            "partition.csv",
            &[
                ("fast-modes", a.class.fast_modes.to_string()),
                ("split-ratio", num(a.class.split_ratio)),
            ],
            &["state", "label", "block", "fast_mass", "slow_mass"].map(String::from),
            rows,
        )
    }

    fn l_options(&self) -> LOptions {
        LOptions {
            tol: self.cfg.analysis.l_tol,
            max_iter: self.cfg.analysis.l_max_iter,
        }
    }

    pub fn reduce(&mut self, a: &Analysis) -> Result<Reduction> {
        let red = stage(
            "reduce",
            Reduction::new(&a.lin, &a.class.partition, self.l_options()),
        )?;
        self.warn("reduce", red.transform.gap.warnings.clone());
        self.write_partition(a)?;
        self.write_transform(a, &red)?;
        Ok(red)
    }

    fn write_transform(&self, a: &Analysis, red: &Reduction) -> Result<()> {
        let t = &red.transform;
        let slow = labels(red.partition().slow(), &a.lin.state_labels);
        let fast = labels(red.partition().fast(), &a.lin.state_labels);
        self.out.write_matrix(
            "L.csv",
            &[
                ("equation-residual", num(t.l_residual)),
                ("iterations", t.l_iterations.to_string()),
            ],
            "fast\\slow",
            &fast,
            &slow,
            &t.l,
        )?;
        self.out.write_matrix(
            "H.csv",
            &[
                ("equation-residual", num(t.h_residual)),
                ("gap-ratio", num(t.gap_ratio())),
            ],
            "slow\\fast",
            &slow,
            &fast,
            &t.h,
        )
    }

    /// Rebuilds the transform from `partition.csv`, `L.csv` and `H.csv`, validating it
    /// against the current linearization.
    pub fn load_reduction(&mut self, a: &Analysis, variant: Variant) -> Result<Reduction> {
        for f in ["partition.csv", "L.csv", "H.csv"] {
            if !self.out.exists(f) {
                bail!(
                    "stage `simulate` failed: {} (missing {})",
                    twoscale_core::Error::MissingTransform(variant.name()),
                    self.out.path(f).display()
                );
            }
        }
        let part = self.out.read_table("partition.csv")?;
        let mut slow = Vec::new();
        let mut fast = Vec::new();
        for row in &part.rows {
            let k: usize = row
                .first()
                .and_then(|s| s.parse().ok())
                .filter(|k| *k >= 1)
                .ok_or_else(|| anyhow!("partition.csv: bad state index"))?;
            match row.get(2).map(String::as_str) {
                Some("fast") => fast.push(k - 1),
                Some("slow") => slow.push(k - 1),
                _ => bail!("partition.csv: bad block for state {k}"),
            }
        }
        let partition = stage("simulate", Partition::new(a.lin.a.nrows(), slow, fast))?;
        if partition != a.class.partition {
            bail!("stage `simulate` failed: stored partition.csv differs from the configured partition; run `reduce` first");
        }
        let (_, _, l) = self.out.read_table("L.csv")?.matrix("L.csv")?;
        let (_, _, h) = self.out.read_table("H.csv")?.matrix("H.csv")?;
        let blocks = stage("simulate", partition_model(&a.lin, &partition))?;
        let transform = DecouplingTransform::from_matrices(&blocks, l, h)
            .map_err(|e| anyhow!("stage `simulate` failed: stored transform does not fit this model ({e}); run `reduce` first"))?;
        Ok(Reduction { blocks, transform })
    }

    pub fn scenario(&mut self, ss: &SteadyState) -> Result<Scenario> {
        let s = &self.cfg.scenario;
        let (sc, w) = stage(
            "simulate",
            Scenario::new(s.t_start, s.t_end, s.dt, s.events.clone(), ss.point.clone()),
        )?;
        self.warn("simulate", w);
        Ok(sc)
    }

    /// Runs the variants concurrently and writes one trace file per variant.
    pub fn simulate(
        &mut self,
        a: &Analysis,
        variants: &[Variant],
        reduction: Option<&Reduction>,
    ) -> Result<Vec<SimulationTrace>> {
        let scenario = self.scenario(&a.steady)?;
        let opts = SimulationOptions {
            integration: IntegrationOptions {
                fastest_mode: a.modes.moduli().first().copied(),
                strict: self.cfg.analysis.strict,
            },
            fast_context: self.cfg.analysis.fast_context,
        };
        let system = &self.system;
        let results: Vec<_> = std::thread::scope(|s| {
            let handles: Vec<_> = variants
                .iter()
                .map(|&v| {
                    let (scenario, opts) = (&scenario, &opts);
                    s.spawn(move || run_scenario(system, v, scenario, reduction, opts))
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("simulation thread"))
                .collect()
        });
        let mut traces = Vec::new();
        for (v, r) in variants.iter().zip(results) {
            let out = r.map_err(|e| anyhow!("stage `simulate` ({v}) failed: {e}"))?;
            // every variant raises the same step-size warning; keep one copy
            let fresh: Vec<Warning> = out
                .warnings
                .into_iter()
                .filter(|w| !self.warnings.iter().any(|(_, x)| x == w))
                .collect();
            self.warn("simulate", fresh);
            self.out.write_trace(&out.trace, self.cfg.output.stride)?;
            traces.push(out.trace);
        }
        Ok(traces)
    }

    /// Comparison window: from the first event to the end, or the whole span.
    pub fn window(&self, trace: &SimulationTrace) -> (f64, f64) {
        let end = *trace.times.last().unwrap_or(&0.0);
        let start = self
            .cfg
            .scenario
            .events
            .iter()
            .map(|e| e.time)
            .fold(f64::INFINITY, f64::min);
        if start.is_finite() && start < end {
            (start, end)
        } else {
            (trace.times.first().copied().unwrap_or(0.0), end)
        }
    }

    pub fn compare(
        &self,
        reference: &SimulationTrace,
        other: &SimulationTrace,
        names: (Variant, Variant),
    ) -> Result<TraceComparison> {
        let window = self.window(reference);
        let cmp = stage("compare", compare_traces(reference, other, Some(window)))?;
        let rows = cmp
            .labels
            .iter()
            .zip(cmp.max_abs.iter().zip(&cmp.rel_l2))
            .map(|(l, (m, r))| vec![l.clone(), num(*m), num(*r)]);
        self.out.write_table(
            "compare.csv",
            &[
                ("reference", names.0.name().into()),
                ("candidate", names.1.name().into()),
                ("window", format!("{} {}", num(window.0), num(window.1))),
                ("global-max-abs", num(cmp.global_max)),
            ],
            &["state", "max_abs", "rel_l2"].map(String::from),
            rows,
        )?;
        Ok(cmp)
    }

    pub fn report(
        &self,
        a: &Analysis,
        red: &Reduction,
        traces: &[SimulationTrace],
        comparisons: &[(Variant, Variant, TraceComparison)],
    ) -> Result<()> {
        let mut s = String::new();
        let labels = &a.lin.state_labels;
        let ss = &a.steady;
        let _ = writeln!(s, "Steady state");
        let _ = writeln!(
            s,
            "  Newton iterations {}, residual inf-norm {:.3e}",
            ss.iterations,
            ss.point.residual_inf_norm()
        );
        for (i, (l, v)) in labels.iter().zip(ss.point.x_bar()).enumerate() {
            let _ = writeln!(s, "  x{:<3} {l:<12} {v:>14.8}", i + 1);
        }

        let _ = writeln!(s, "\nEigenvalues (descending modulus)");
        let _ = writeln!(
            s,
            "  {:<5} {:<28} {:>12}  block",
            "mode", "lambda", "|lambda|"
        );
        for (i, l) in a.modes.eigenvalues.iter().enumerate() {
            let block = if i < a.class.fast_modes {
                "fast"
            } else {
                "slow"
            };
            let _ = writeln!(
                s,
                "  {:<5} {:<28} {:>12.4}  {block}",
                i + 1,
                fmt_complex(*l),
                l.norm()
            );
        }
        let _ = writeln!(s, "  eigenvector condition {:.3e}", a.modes.condition);

        let th = self.cfg.analysis.pf_threshold;
        let _ = writeln!(s, "\nParticipation above {th}");
        for mode in 0..a.modes.len() {
            let states: Vec<String> =
                a.pf.significant_states(mode, th)
                    .iter()
                    .map(|&k| format!("x{} ({:.2})", k + 1, a.pf.get(k, mode)))
                    .collect();
            let _ = writeln!(s, "  mode {:<3} {}", mode + 1, states.join(", "));
        }

        let p = red.partition();
        let idx = |v: &[usize]| {
            v.iter()
                .map(|k| format!("x{}", k + 1))
                .collect::<Vec<_>>()
                .join(" ")
        };
        let _ = writeln!(
            s,
            "\nPartition (m = {} fast modes, split ratio {:.3})",
            a.class.fast_modes, a.class.split_ratio
        );
        let _ = writeln!(s, "  fast: {}", idx(p.fast()));
        let _ = writeln!(s, "  slow: {}", idx(p.slow()));

        let t = &red.transform;
        let _ = writeln!(s, "\nDecoupling");
        let _ = writeln!(s, "  ||A||_F {:.6e}", red.blocks.a_norm);
        let _ = writeln!(
            s,
            "  L: {} iterations, residual {:.3e}",
            t.l_iterations, t.l_residual
        );
        let _ = writeln!(s, "  H: residual {:.3e}", t.h_residual);
        let _ = writeln!(
            s,
            "  gap ratio {:.4} (min |Im| fast {:.4}, max |Im| slow {:.4})",
            t.gap.ratio, t.gap.min_fast_imag, t.gap.max_slow_imag
        );
        let mut fast: Vec<_> = t.fast_eigenvalues.clone();
        let mut slow: Vec<_> = t.slow_eigenvalues.clone();
        for v in [&mut fast, &mut slow] {
            v.sort_by(|x, y| y.norm().total_cmp(&x.norm()).then(y.im.total_cmp(&x.im)));
        }
        let list = |v: &[num_complex::Complex64]| {
            v.iter()
                .map(|l| fmt_complex(*l))
                .collect::<Vec<_>>()
                .join(", ")
        };
        let _ = writeln!(s, "  fast block: {}", list(&fast));
        let _ = writeln!(s, "  slow block: {}", list(&slow));

        let sc = &self.cfg.scenario;
        let _ = writeln!(s, "\nSimulation");
        let _ = writeln!(
            s,
            "  t = [{}, {}] s, dt = {:e} s, fast context {}",
            sc.t_start,
            sc.t_end,
            sc.dt,
            self.cfg.analysis.fast_context.name()
        );
        for e in &sc.events {
            let _ = writeln!(
                s,
                "  event: {} = {} at t = {} s",
                INPUT_LABELS[e.input], e.value, e.time
            );
        }
        for tr in traces {
            let last = tr.last();
            let igd = tr.state_index("i_gd").map(|j| last[j]).unwrap_or(f64::NAN);
            let _ = writeln!(
                s,
                "  {:<7} {} samples, i_gd(t_end) = {:.6}",
                tr.meta.variant.map_or("custom", Variant::name),
                tr.len(),
                igd
            );
        }
        for (r, c, cmp) in comparisons {
            let (worst_i, worst) = cmp
                .rel_l2
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.total_cmp(y.1))
                .map(|(i, v)| (i, *v))
                .unwrap_or((0, 0.0));
            let _ = writeln!(
                s,
                "  {c} vs {r}: global max |error| {:.3e}, worst relative L2 on [{}, {}] s {:.4}% ({})",
                cmp.global_max,
                cmp.window.0,
                cmp.window.1,
                100.0 * worst,
                cmp.labels[worst_i]
            );
        }

        let _ = writeln!(s, "\nWarnings");
        if self.warnings.is_empty() {
            let _ = writeln!(s, "  none");
        }
        for (st, w) in &self.warnings {
            let _ = writeln!(s, "  [{st}] {w}");
        }
        self.out
            .write_text("report.txt", &s)
            .context("writing report")
    }
}
