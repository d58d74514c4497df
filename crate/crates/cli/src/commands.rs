use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use twoscale_core::sim::Variant;

use crate::config::{FastCount, RunConfig};
use crate::pipeline::Session;

#[derive(Debug, Parser)]
#[command(
    name = "twoscale",
    version,
    about = "Two-time-scale reduction of a three-synchronverter grid model"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// INI run configuration; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `[output] directory`).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Number of fast modes.
    #[arg(long, global = true, value_name = "N", conflicts_with = "auto_gap")]
    pub fast_count: Option<usize>,
    /// Choose the fast-mode count from the largest admissible modulus gap.
    #[arg(long, global = true)]
    pub auto_gap: bool,
    /// Participation threshold used in reports.
    #[arg(long, global = true, value_name = "X")]
    pub pf_threshold: Option<f64>,
    /// Integration step in seconds.
    #[arg(long, global = true, value_name = "X")]
    pub dt: Option<f64>,
    /// Write every N-th sample to trace files.
    #[arg(long, global = true, value_name = "N")]
    pub stride: Option<usize>,
    /// Treat step-size warnings as errors.
    #[arg(long, global = true)]
    pub strict: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum VariantArg {
    Full,
    Exact,
    Approx,
    All,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TraceArg {
    Full,
    Exact,
    Approx,
}

impl From<TraceArg> for Variant {
    fn from(v: TraceArg) -> Self {
        match v {
            TraceArg::Full => Variant::Full,
            TraceArg::Exact => Variant::Exact,
            TraceArg::Approx => Variant::Approx,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve for the equilibrium (steady.csv).
    Steady,
    /// Linearize about the equilibrium (A.csv, B.csv).
    Linearize,
    /// Eigenvalues by descending modulus (eigs.csv).
    Eigs,
    /// Participation factors and state partition (pf.csv, partition.csv).
    Pf,
    /// Solve for L and H (L.csv, H.csv, partition.csv).
    Reduce,
    /// Integrate the scenario (trace_<variant>.csv); decoupled variants need `reduce`.
    Simulate {
        #[arg(long, value_enum, default_value = "all")]
        variant: VariantArg,
    },
    /// Compare two stored traces (compare.csv).
    Compare {
        #[arg(value_enum)]
        reference: TraceArg,
        #[arg(value_enum)]
        candidate: TraceArg,
    },
    /// Every stage end to end, plus report.txt.
    Pipeline,
}

pub fn load_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text).with_context(|| format!("in {}", p.display()))?
        }
        None => RunConfig::default(),
    };
    if let Some(o) = &g.out {
        cfg.output.directory = o.to_string_lossy().into_owned();
    }
    if let Some(m) = g.fast_count {
        cfg.analysis.fast_count = FastCount::Fixed(m);
    }
    if g.auto_gap {
        cfg.analysis.fast_count = FastCount::Auto;
    }
    if let Some(x) = g.pf_threshold {
        cfg.analysis.pf_threshold = x;
    }
    if let Some(x) = g.dt {
        cfg.scenario.dt = x;
    }
    if let Some(n) = g.stride {
        cfg.output.stride = n;
    }
    if g.strict {
        cfg.analysis.strict = true;
    }
    if !(cfg.analysis.pf_threshold > 0.0) || !(cfg.scenario.dt > 0.0) || cfg.output.stride == 0 {
        anyhow::bail!("--pf-threshold, --dt and --stride must be positive");
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = load_config(&cli.global)?;
    let mut s = Session::new(cfg)?;
    match cli.command {
        Command::Steady => {
            let ss = s.steady(true)?;
            println!(
                "steady: {} Newton iterations, residual {:.3e}",
                ss.iterations,
                ss.point.residual_inf_norm()
            );
        }
        Command::Linearize => {
            let ss = s.steady(false)?;
            let lin = s.linearize(&ss, true)?;
            println!("linearize: ||A||_F = {:.6e}", lin.a.norm());
        }
        Command::Eigs => {
            let a = s.analyse(false, false)?;
            s.write_eigs(&a)?;
            println!(
                "eigs: {} modes, {} fast, |lambda| {:.4} .. {:.4}",
                a.modes.len(),
                a.class.fast_modes,
                a.modes.moduli().first().unwrap_or(&0.0),
                a.modes.moduli().last().unwrap_or(&0.0)
            );
        }
        Command::Pf => {
            let a = s.analyse(false, false)?;
            s.write_pf(&a)?;
            println!(
                "pf: fast states {:?}",
                a.class
                    .partition
                    .fast()
                    .iter()
                    .map(|k| k + 1)
                    .collect::<Vec<_>>()
            );
        }
        Command::Reduce => {
            let a = s.analyse(false, false)?;
            let red = s.reduce(&a)?;
            println!(
                "reduce: L in {} iterations, gap ratio {:.4}",
                red.transform.l_iterations,
                red.transform.gap_ratio()
            );
        }
        Command::Simulate { variant } => {
            let variants: Vec<Variant> = match variant {
                VariantArg::Full => vec![Variant::Full],
                VariantArg::Exact => vec![Variant::Exact],
                VariantArg::Approx => vec![Variant::Approx],
                VariantArg::All => Variant::ALL.to_vec(),
            };
            let a = s.analyse(false, false)?;
            let red = match variants.iter().find(|v| **v != Variant::Full) {
                Some(v) => Some(s.load_reduction(&a, *v)?),
                None => None,
            };
            let traces = s.simulate(&a, &variants, red.as_ref())?;
            for t in traces {
                println!(
                    "simulate: wrote trace_{}.csv ({} samples)",
                    t.meta.variant.map_or("custom", Variant::name),
                    t.len()
                );
            }
        }
        Command::Compare {
            reference,
            candidate,
        } => {
            let (r, c) = (Variant::from(reference), Variant::from(candidate));
            let a = s.out.read_trace(r)?;
            let b = s.out.read_trace(c)?;
            let cmp = s.compare(&a, &b, (r, c))?;
            println!(
                "compare: {c} vs {r} global max |error| {:.3e}",
                cmp.global_max
            );
        }
        Command::Pipeline => {
            let a = s.analyse(true, true)?;
            s.write_eigs(&a)?;
            s.write_pf(&a)?;
            let red = s.reduce(&a)?;
            let traces = s.simulate(&a, &Variant::ALL, Some(&red))?;
            let (full, exact, approx) = (&traces[0], &traces[1], &traces[2]);
            let exact_cmp = twoscale_core::sim::compare_traces(full, exact, Some(s.window(full)))
                .map_err(|e| anyhow::anyhow!("stage `compare` failed: {e}"))?;
            // compare.csv holds the approximate-vs-full comparison
            let approx_cmp = s.compare(full, approx, (Variant::Full, Variant::Approx))?;
            let comparisons = [
                (Variant::Full, Variant::Exact, exact_cmp),
                (Variant::Full, Variant::Approx, approx_cmp),
            ];
            s.report(&a, &red, &traces, &comparisons)?;
            println!("pipeline: artifacts in {}", s.out.dir().display());
            for (r, c, cmp) in &comparisons {
                let worst = cmp.rel_l2.iter().copied().fold(0.0, f64::max);
                println!(
                    "  {c} vs {r}: global max |error| {:.3e}, worst relative L2 {:.4}%",
                    cmp.global_max,
                    100.0 * worst
                );
            }
        }
    }
    Ok(())
}
