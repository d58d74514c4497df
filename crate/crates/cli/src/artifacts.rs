//! CSV artifacts in the output directory.
//!
//! Every file starts with `# config-sha256: <hex>` followed by optional `# key: value`
//! comment lines, then a CSV header row. Floats are written as `{:.16e}`, which
//! round-trips exactly.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use nalgebra::DMatrix;

use twoscale_core::sim::{SimulationTrace, TraceMeta, Variant};

pub const HASH_KEY: &str = "config-sha256";

pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// A parsed artifact: comment metadata, header, and data rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn meta(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    fn parse_f64(&self, name: &str, s: &str) -> Result<f64> {
        s.trim()
            .parse()
            .map_err(|_| anyhow!("{name}: `{s}` is not a number"))
    }

    /// Numeric block with a label column first and a header row; returns
    /// `(row labels, column labels, matrix)`.
    pub fn matrix(&self, name: &str) -> Result<(Vec<String>, Vec<String>, DMatrix<f64>)> {
        let cols = self.header.len().saturating_sub(1);
        let mut m = DMatrix::zeros(self.rows.len(), cols);
        let mut labels = Vec::with_capacity(self.rows.len());
        for (i, row) in self.rows.iter().enumerate() {
            if row.len() != cols + 1 {
                bail!(
                    "{name}: row {} has {} fields, expected {}",
                    i + 1,
                    row.len(),
                    cols + 1
                );
            }
            labels.push(row[0].clone());
            for j in 0..cols {
                m[(i, j)] = self.parse_f64(name, &row[j + 1])?;
            }
        }
        Ok((labels, self.header[1..].to_vec(), m))
    }
}

pub struct ArtifactDir {
    dir: PathBuf,
    hash: String,
}

impl ArtifactDir {
    pub fn create(dir: impl Into<PathBuf>, hash: String) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(Self { dir, hash })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn write_text(&self, name: &str, body: &str) -> Result<()> {
        let path = self.path(name);
        fs::write(&path, format!("# {HASH_KEY}: {}\n{body}", self.hash))
            .with_context(|| format!("writing {}", path.display()))
    }

    pub fn write_table<I>(
        &self,
        name: &str,
        meta: &[(&str, String)],
        header: &[String],
        rows: I,
    ) -> Result<()>
    where
        I: IntoIterator<Item = Vec<String>>,
    {
        let path = self.path(name);
        let file =
            fs::File::create(&path).with_context(|| format!("writing {}", path.display()))?;
        let mut out = BufWriter::new(file);
        writeln!(out, "# {HASH_KEY}: {}", self.hash)?;
        for (k, v) in meta {
            writeln!(out, "# {k}: {v}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(header)?;
        for row in rows {
            w.write_record(&row)?;
        }
        w.flush()
            .with_context(|| format!("writing {}", path.display()))?;
        Ok(())
    }

    pub fn write_matrix(
        &self,
        name: &str,
        meta: &[(&str, String)],
        corner: &str,
        row_labels: &[String],
        col_labels: &[String],
        m: &DMatrix<f64>,
    ) -> Result<()> {
        let mut header = vec![corner.to_string()];
        header.extend(col_labels.iter().cloned());
        let rows = (0..m.nrows()).map(|i| {
            let mut r = vec![row_labels[i].clone()];
            r.extend((0..m.ncols()).map(|j| num(m[(i, j)])));
            r
        });
        self.write_table(name, meta, &header, rows)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).is_file()
    }

    pub fn read_table(&self, name: &str) -> Result<Table> {
        let path = self.path(name);
        let text =
            fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        parse_table(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn write_trace(&self, trace: &SimulationTrace, stride: usize) -> Result<String> {
        let variant = trace.meta.variant.map_or("custom", Variant::name);
        let name = format!("trace_{variant}.csv");
        let meta = [
            ("variant", variant.to_string()),
            ("dt", num(trace.meta.dt)),
            ("stride", stride.to_string()),
            (
                "scenario-fnv1a",
                format!("{:016x}", trace.meta.scenario_hash),
            ),
        ];
        let mut header = vec!["t".to_string()];
        header.extend(trace.labels.iter().cloned());
        let rows = (0..trace.len()).step_by(stride.max(1)).map(|i| {
            let mut r = vec![num(trace.times[i])];
            r.extend(trace.row(i).iter().map(|v| num(*v)));
            r
        });
        self.write_table(&name, &meta, &header, rows)?;
        Ok(name)
    }

    pub fn read_trace(&self, variant: Variant) -> Result<SimulationTrace> {
        let name = format!("trace_{}.csv", variant.name());
        if !self.exists(&name) {
            bail!(
                "{} not found; run `simulate --variant {}` first",
                self.path(&name).display(),
                variant.name()
            );
        }
        let table = self.read_table(&name)?;
        let (times, _, m) = table.matrix(&name)?;
        let times = times
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| anyhow!("{name}: bad time `{t}`"))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter().copied());
        }
        let dt = table
            .meta("dt")
            .and_then(|s| s.parse().ok())
            .unwrap_or(f64::NAN);
        let scenario_hash = table
            .meta("scenario-fnv1a")
            .and_then(|s| u64::from_str_radix(s, 16).ok())
            .unwrap_or(0);
        Ok(SimulationTrace {
            times,
            data,
            labels: table.header[1..].to_vec(),
            meta: TraceMeta {
                variant: Some(variant),
                dt,
                scenario_hash,
            },
        })
    }
}

pub fn parse_table(text: &str) -> Result<Table> {
    let mut meta = Vec::new();
    let mut body_start = 0;
    for line in text.lines() {
        let Some(c) = line.strip_prefix('#') else {
            break;
        };
        body_start += line.len() + 1;
        if let Some((k, v)) = c.split_once(':') {
            meta.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.get(body_start..).unwrap_or("").as_bytes());
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<Result<Vec<Vec<String>>, _>>()?;
    Ok(Table { meta, header, rows })
}
