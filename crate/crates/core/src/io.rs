//! File formats: run CSVs and sidecars, dataset dumps, manifests.
//!
//! Floats are always written with 17 significant digits so that reruns are
//! byte-identical and values round-trip exactly.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::distribution::{DataDistribution, Dataset};
use crate::error::{Error, Result};
use crate::perceptron::{ModelParams, RunRecord, StopReason};

pub const RUN_HEADER: &str = "step,t,w1,w_perp_norm,lambda,r,train_loss,n_train,test_error,alignment";
pub const THEORY_HEADER: &str = "lambda,r,g1,g_perp,n,sigma11,sigma12,sigma22,sigma1,sigma2";
pub const ODE_HEADER: &str = "t,w1,wp,lambda,n_theory";
pub const DATASET_MAGIC: &str = "sgdreg-dataset v1";

/// 17 significant digits; `inf`, `-inf` and `NaN` for non-finite values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Join already formatted fields into one CSV line (with newline).
pub fn csv_line<I, S>(fields: I) -> String
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut line = String::new();
    for (i, f) in fields.into_iter().enumerate() {
        if i > 0 {
            line.push(',');
        }
        line.push_str(f.as_ref());
    }
    line.push('\n');
    line
}

/// Write through a temporary file and rename, so readers never see a
/// partially written file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })
}

pub fn run_csv(record: &RunRecord) -> String {
    let mut out = String::with_capacity(64 * record.points.len());
    out.push_str(RUN_HEADER);
    out.push('\n');
    for p in &record.points {
        let o = &p.obs;
        out.push_str(&csv_line([
            p.step.to_string(),
            fmt_f64(p.t),
            fmt_f64(o.w1),
            fmt_f64(o.w_perp_norm),
            fmt_f64(o.lambda),
            fmt_f64(o.r),
            fmt_f64(o.train_loss),
            fmt_f64(o.n_train),
            fmt_f64(o.test_error),
            fmt_f64(o.alignment),
        ]));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSidecar {
    pub params: ModelParams,
    pub temperature: f64,
    pub stop_reason: StopReason,
    pub t_star: Option<f64>,
    pub steps: u64,
}

impl RunSidecar {
    pub fn of(record: &RunRecord) -> Self {
        RunSidecar {
            params: record.params.clone(),
            temperature: record.params.temperature(),
            stop_reason: record.stop_reason,
            t_star: record.t_star,
            steps: record.steps,
        }
    }
}

/// `record.csv` and `record.json` in `dir`.
pub fn write_run(dir: &Path, record: &RunRecord) -> Result<()> {
    write_atomic(&dir.join("record.csv"), run_csv(record).as_bytes())?;
    write_json(&dir.join("record.json"), &RunSidecar::of(record))
}

/// Header line followed by little-endian `f64` rows `[x₁, x⊥...]`.
pub fn write_dataset(path: &Path, data: &Dataset<f64>) -> Result<()> {
    let mut bytes = format!(
        "{DATASET_MAGIC} chi={} d={} P={} seed={}\n",
        fmt_f64(data.distribution().chi()),
        data.dim(),
        data.len(),
        data.seed()
    )
    .into_bytes();
    bytes.reserve(8 * data.rows().len());
    for x in data.rows() {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    write_atomic(path, &bytes)
}

pub fn read_dataset(path: &Path) -> Result<Dataset<f64>> {
    let bad = |reason: &str| Error::Format {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = BufReader::new(file);
    let mut header = String::new();
    reader.read_line(&mut header).map_err(|e| Error::io(path, e))?;
    let rest = header
        .trim_end()
        .strip_prefix(DATASET_MAGIC)
        .ok_or_else(|| bad("missing dataset header"))?;
    let (mut chi, mut d, mut p, mut seed) = (None, None, None, None);
    for field in rest.split_whitespace() {
        let (k, v) = field.split_once('=').ok_or_else(|| bad("malformed header field"))?;
        match k {
            "chi" => chi = v.parse::<f64>().ok(),
            "d" => d = v.parse::<usize>().ok(),
            "P" => p = v.parse::<usize>().ok(),
            "seed" => seed = v.parse::<u64>().ok(),
            _ => return Err(bad("unknown header field")),
        }
    }
    let (chi, d, p, seed) = match (chi, d, p, seed) {
        (Some(a), Some(b), Some(c), Some(s)) => (a, b, c, s),
        _ => return Err(bad("incomplete header")),
    };
    let mut raw = Vec::new();
    reader.read_to_end(&mut raw).map_err(|e| Error::io(path, e))?;
    if raw.len() != 8 * d * p {
        return Err(bad("payload length does not match header"));
    }
    let rows = raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Dataset::from_rows(DataDistribution::new(chi, d)?, seed, rows)
}

/// Resolved configuration of one CLI invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
}

impl Manifest {
    pub fn new(command: &str, config: serde_json::Value) -> Self {
        Manifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        write_json(&path, self)?;
        Ok(path)
    }
}

/// Parse a CSV produced by this crate into a header and rows of fields.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<String> = lines
        .next()
        .ok_or_else(|| Error::Format {
            path: path.to_path_buf(),
            reason: "empty csv".into(),
        })?
        .split(',')
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let fields: Vec<String> = line.split(',').map(str::to_string).collect();
        if fields.len() != header.len() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                reason: format!("row {} has {} fields, header has {}", i + 1, fields.len(), header.len()),
            });
        }
        rows.push(fields);
    }
    Ok((header, rows))
}

/// Render a table of floats with a header.
pub fn float_table(header: &str, rows: &[Vec<f64>]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{header}");
    for row in rows {
        out.push_str(&csv_line(row.iter().map(|&x| fmt_f64(x))));
    }
    out
}
