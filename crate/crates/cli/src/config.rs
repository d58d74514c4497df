//! Run configuration: a small INI dialect.
//!
//! ```text
//! # comment            ; also a comment
//! [section]
//! key = value
//! ```
//!
//! Sections are `parameters`, `inputs`, `scenario`, `analysis` and `output`. Keys
//! are case-sensitive, unknown keys and sections are errors, and a key may appear
//! once per section except `event`. Per-inverter keys take an optional `.A`/`.B`/`.C`
//! suffix; the bare key sets all three and suffixed keys override it regardless of
//! order. Missing keys take the defaults of the built-in model.

use std::fmt::Write as _;

use sha2::{Digest, Sha256};
use thiserror::Error;

use twoscale_core::grid::{
    GridParameters, InputVector, InverterParameters, References, SynchronverterGrid, INPUT_LABELS,
    INVERTERS,
};
use twoscale_core::sim::{FastContext, InputEvent};

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("line {line}: unknown key `{key}` in [{section}]")]
    UnknownKey {
        line: usize,
        section: String,
        key: String,
    },
    #[error("line {line}: invalid value for `{key}`: {message}")]
    Value {
        line: usize,
        key: String,
        message: String,
    },
    #[error("{0}")]
    Model(#[from] twoscale_core::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FastCount {
    Auto,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub events: Vec<InputEvent>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            t_start: 0.0,
            t_end: 2.0,
            dt: 1e-5,
            events: vec![InputEvent {
                time: 1.0,
                input: twoscale_core::grid::input::p_ref(0),
                value: 0.6,
            }],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisConfig {
    pub fd_step: f64,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub pf_threshold: f64,
    pub fast_count: FastCount,
    pub l_tol: f64,
    pub l_max_iter: usize,
    pub strict: bool,
    pub fast_context: FastContext,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            fd_step: twoscale_core::system::DEFAULT_FD_STEP,
            newton_tol: 1e-10,
            newton_max_iter: 50,
            pf_threshold: 0.15,
            fast_count: FastCount::Auto,
            l_tol: 1e-12,
            l_max_iter: 200,
            strict: false,
            fast_context: FastContext::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub directory: String,
    pub stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: "out".into(),
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub grid: GridParameters,
    pub inverters: [InverterParameters; 3],
    pub inputs: InputVector,
    pub scenario: ScenarioConfig,
    pub analysis: AnalysisConfig,
    pub output: OutputConfig,
}

const GRID_KEYS: [&str; 6] = ["S_b", "V_b", "omega_b", "R_g", "L_g", "omega_g"];
const INVERTER_KEYS: [&str; 9] = [
    "R_f", "L_f", "C_f", "V_dc", "T_a", "K_D", "K_omega", "K", "K_q",
];
const REFERENCE_KEYS: [&str; 4] = ["P_ref", "Q_ref", "omega_ref", "v_ref"];

fn grid_field<'a>(g: &'a mut GridParameters, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "S_b" => &mut g.s_base,
        "V_b" => &mut g.v_base,
        "omega_b" => &mut g.omega_b,
        "R_g" => &mut g.r_g,
        "L_g" => &mut g.l_g,
        "omega_g" => &mut g.omega_g,
        _ => return None,
    })
}

fn inverter_field<'a>(p: &'a mut InverterParameters, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "R_f" => &mut p.r_f,
        "L_f" => &mut p.l_f,
        "C_f" => &mut p.c_f,
        "V_dc" => &mut p.v_dc,
        "T_a" => &mut p.t_a,
        "K_D" => &mut p.k_d,
        "K_omega" => &mut p.k_omega,
        "K" => &mut p.k,
        "K_q" => &mut p.k_q,
        _ => return None,
    })
}

fn reference_field<'a>(r: &'a mut References, key: &str) -> Option<&'a mut f64> {
    Some(match key {
        "P_ref" => &mut r.p_ref,
        "Q_ref" => &mut r.q_ref,
        "omega_ref" => &mut r.omega_ref,
        "v_ref" => &mut r.v_ref,
        _ => return None,
    })
}

/// `key.X` -> `(key, Some(k))`, `key` -> `(key, None)`.
fn split_suffix(key: &str) -> (&str, Option<usize>) {
    if let Some((base, s)) = key.rsplit_once('.') {
        if let Some(k) = INVERTERS
            .iter()
            .position(|c| s.len() == 1 && s.starts_with(*c))
        {
            return (base, Some(k));
        }
    }
    (key, None)
}

struct Entry<'a> {
    line: usize,
    section: &'a str,
    key: &'a str,
    value: &'a str,
}

fn lex(text: &str) -> Result<Vec<Entry<'_>>, ConfigError> {
    const SECTIONS: [&str; 5] = ["parameters", "inputs", "scenario", "analysis", "output"];
    let mut entries = Vec::new();
    let mut section: Option<&str> = None;
    let mut seen: Vec<(&str, &str)> = Vec::new();
    let mut seen_sections: Vec<&str> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split(['#', ';']).next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(rest) = content.strip_prefix('[') {
            let name = rest.strip_suffix(']').ok_or_else(|| ConfigError::Syntax {
                line,
                message: format!("unterminated section header `{content}`"),
            })?;
            let name = name.trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("unknown section [{name}]"),
                });
            }
            if seen_sections.contains(&name) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("section [{name}] appears twice"),
                });
            }
            seen_sections.push(name);
            section = Some(name);
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("expected `key = value`, got `{content}`"),
        })?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            return Err(ConfigError::Syntax {
                line,
                message: "empty key".into(),
            });
        }
        let section = section.ok_or_else(|| ConfigError::Syntax {
            line,
            message: format!("key `{key}` outside any section"),
        })?;
        if key != "event" {
            if seen.contains(&(section, key)) {
                return Err(ConfigError::Syntax {
                    line,
                    message: format!("duplicate key `{key}` in [{section}]"),
                });
            }
            seen.push((section, key));
        }
        entries.push(Entry {
            line,
            section,
            key,
            value,
        });
    }
    Ok(entries)
}

fn number(e: &Entry<'_>) -> Result<f64, ConfigError> {
    let v: f64 = e.value.parse().map_err(|_| ConfigError::Value {
        line: e.line,
        key: e.key.into(),
        message: format!("`{}` is not a number", e.value),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(ConfigError::Value {
            line: e.line,
            key: e.key.into(),
            message: "must be finite".into(),
        })
    }
}

fn positive(e: &Entry<'_>) -> Result<f64, ConfigError> {
    let v = number(e)?;
    if v > 0.0 {
        Ok(v)
    } else {
        Err(ConfigError::Value {
            line: e.line,
            key: e.key.into(),
            message: format!("{v} must be positive"),
        })
    }
}

fn count(e: &Entry<'_>) -> Result<usize, ConfigError> {
    match e.value.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(ConfigError::Value {
            line: e.line,
            key: e.key.into(),
            message: format!("`{}` is not a positive integer", e.value),
        }),
    }
}

fn input_index(token: &str) -> Option<usize> {
    token
        .parse::<usize>()
        .ok()
        .filter(|i| *i < INPUT_LABELS.len())
        .or_else(|| INPUT_LABELS.iter().position(|l| *l == token))
}

fn parse_event(e: &Entry<'_>) -> Result<Option<InputEvent>, ConfigError> {
    if e.value == "none" {
        return Ok(None);
    }
    let bad = |message: String| ConfigError::Value {
        line: e.line,
        key: "event".into(),
        message,
    };
    let parts: Vec<&str> = e.value.split_whitespace().collect();
    let [time, input, value] = parts[..] else {
        return Err(bad(format!(
            "expected `time input value`, got `{}`",
            e.value
        )));
    };
    let num = |s: &str| {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| bad(format!("`{s}` is not a number")))
    };
    let index = input_index(input).ok_or_else(|| {
        bad(format!(
            "unknown input `{input}` (use 0..{} or one of {})",
            INPUT_LABELS.len() - 1,
            INPUT_LABELS.join(", ")
        ))
    })?;
    Ok(Some(InputEvent {
        time: num(time)?,
        input: index,
        value: num(value)?,
    }))
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let entries = lex(text)?;
        let mut cfg = RunConfig::default();
        let mut refs: [References; 3] = core::array::from_fn(|k| cfg.inputs.references(k));
        let mut v_g = cfg.inputs.0[twoscale_core::grid::input::V_G];
        let mut events: Option<Vec<InputEvent>> = None;

        // Bare per-inverter keys first so that suffixed ones override them.
        let mut ordered: Vec<&Entry<'_>> = entries
            .iter()
            .filter(|e| split_suffix(e.key).1.is_none())
            .collect();
        ordered.extend(entries.iter().filter(|e| split_suffix(e.key).1.is_some()));

        for e in ordered {
            let unknown = || ConfigError::UnknownKey {
                line: e.line,
                section: e.section.into(),
                key: e.key.into(),
            };
            match e.section {
                "parameters" => {
                    if let Some(f) = grid_field(&mut cfg.grid, e.key) {
                        *f = number(e)?;
                        continue;
                    }
                    let (base, which) = split_suffix(e.key);
                    if !INVERTER_KEYS.contains(&base) {
                        return Err(unknown());
                    }
                    let v = number(e)?;
                    for (k, inv) in cfg.inverters.iter_mut().enumerate() {
                        if which.is_none_or(|w| w == k) {
                            *inverter_field(inv, base).unwrap() = v;
                        }
                    }
                }
                "inputs" => {
                    if e.key == "V_g" {
                        v_g = number(e)?;
                        continue;
                    }
                    let (base, which) = split_suffix(e.key);
                    if !REFERENCE_KEYS.contains(&base) {
                        return Err(unknown());
                    }
                    let v = number(e)?;
                    for (k, r) in refs.iter_mut().enumerate() {
                        if which.is_none_or(|w| w == k) {
                            *reference_field(r, base).unwrap() = v;
                        }
                    }
                }
                "scenario" => match e.key {
                    "t_start" => cfg.scenario.t_start = number(e)?,
                    "t_end" => cfg.scenario.t_end = number(e)?,
                    "dt" => cfg.scenario.dt = positive(e)?,
                    "event" => events.get_or_insert_with(Vec::new).extend(parse_event(e)?),
                    _ => return Err(unknown()),
                },
                "analysis" => match e.key {
                    "fd_step" => cfg.analysis.fd_step = positive(e)?,
                    "newton_tol" => cfg.analysis.newton_tol = positive(e)?,
                    "newton_max_iter" => cfg.analysis.newton_max_iter = count(e)?,
                    "pf_threshold" => cfg.analysis.pf_threshold = positive(e)?,
                    "fast_count" => {
                        cfg.analysis.fast_count = if e.value == "auto" {
                            FastCount::Auto
                        } else {
                            FastCount::Fixed(count(e)?)
                        }
                    }
                    "l_tol" => cfg.analysis.l_tol = positive(e)?,
                    "l_max_iter" => cfg.analysis.l_max_iter = count(e)?,
                    "strict" => {
                        cfg.analysis.strict = match e.value {
                            "true" => true,
                            "false" => false,
                            _ => {
                                return Err(ConfigError::Value {
                                    line: e.line,
                                    key: e.key.into(),
                                    message: "expected `true` or `false`".into(),
                                })
                            }
                        }
                    }
                    "fast_context" => {
                        cfg.analysis.fast_context =
                            FastContext::parse(e.value).ok_or_else(|| ConfigError::Value {
                                line: e.line,
                                key: e.key.into(),
                                message: "expected `frozen` or `tracked`".into(),
                            })?
                    }
                    _ => return Err(unknown()),
                },
                "output" => match e.key {
                    "directory" => cfg.output.directory = e.value.to_string(),
                    "stride" => cfg.output.stride = count(e)?,
                    _ => return Err(unknown()),
                },
                _ => unreachable!("sections are checked while lexing"),
            }
        }
        cfg.grid.v_g = v_g;
        cfg.inputs = InputVector::new(v_g, refs);
        if let Some(ev) = events {
            cfg.scenario.events = ev;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.system()?;
        let s = &self.scenario;
        if !(s.t_start < s.t_end) {
            return Err(twoscale_core::Error::InvalidScenario(format!(
                "t_start {} must be before t_end {}",
                s.t_start, s.t_end
            ))
            .into());
        }
        Ok(())
    }

    pub fn system(&self) -> Result<SynchronverterGrid, twoscale_core::Error> {
        SynchronverterGrid::new(self.grid.clone(), self.inverters.clone())
    }

    /// Canonical listing of every effective setting; parses back to the same config.
    pub fn echo(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        let _ = writeln!(s, "[parameters]");
        for (key, v) in GRID_KEYS
            .iter()
            .zip([g.s_base, g.v_base, g.omega_b, g.r_g, g.l_g, g.omega_g])
        {
            let _ = writeln!(s, "{key} = {v:?}");
        }
        for key in INVERTER_KEYS {
            for (k, c) in INVERTERS.iter().enumerate() {
                let mut inv = self.inverters[k].clone();
                let v = *inverter_field(&mut inv, key).unwrap();
                let _ = writeln!(s, "{key}.{c} = {v:?}");
            }
        }
        let _ = writeln!(s, "\n[inputs]");
        let _ = writeln!(
            s,
            "V_g = {:?}",
            self.inputs.0[twoscale_core::grid::input::V_G]
        );
        for key in REFERENCE_KEYS {
            for (k, c) in INVERTERS.iter().enumerate() {
                let mut r = self.inputs.references(k);
                let _ = writeln!(
                    s,
                    "{key}.{c} = {:?}",
                    *reference_field(&mut r, key).unwrap()
                );
            }
        }
        let sc = &self.scenario;
        let _ = writeln!(s, "\n[scenario]");
        let _ = writeln!(
            s,
            "t_start = {:?}\nt_end = {:?}\ndt = {:?}",
            sc.t_start, sc.t_end, sc.dt
        );
        if sc.events.is_empty() {
            let _ = writeln!(s, "event = none");
        }
        for e in &sc.events {
            let _ = writeln!(
                s,
                "event = {:?} {} {:?}",
                e.time, INPUT_LABELS[e.input], e.value
            );
        }
        let a = &self.analysis;
        let _ = writeln!(s, "\n[analysis]");
        let _ = writeln!(s, "fd_step = {:?}", a.fd_step);
        let _ = writeln!(s, "newton_tol = {:?}", a.newton_tol);
        let _ = writeln!(s, "newton_max_iter = {}", a.newton_max_iter);
        let _ = writeln!(s, "pf_threshold = {:?}", a.pf_threshold);
        match a.fast_count {
            FastCount::Auto => {
                let _ = writeln!(s, "fast_count = auto");
            }
            FastCount::Fixed(m) => {
                let _ = writeln!(s, "fast_count = {m}");
            }
        }
        let _ = writeln!(s, "l_tol = {:?}", a.l_tol);
        let _ = writeln!(s, "l_max_iter = {}", a.l_max_iter);
        let _ = writeln!(s, "strict = {}", a.strict);
        let _ = writeln!(s, "fast_context = {}", a.fast_context.name());
        let _ = writeln!(s, "\n[output]");
        let _ = writeln!(s, "directory = {}", self.output.directory);
        let _ = writeln!(s, "stride = {}", self.output.stride);
        s
    }

    /// SHA-256 of [`RunConfig::echo`] without the `directory` line, hex encoded, so
    /// identical runs into different directories carry the same hash.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for line in self
            .echo()
            .lines()
            .filter(|l| !l.starts_with("directory = "))
        {
            h.update(line.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}
