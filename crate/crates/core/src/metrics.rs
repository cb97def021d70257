//! Training curves as CSV, one flushed row per record.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

pub const HEADER: &str = "iter,wall_ms,train_loss,train_metric,eval_metric";

/// One metrics row. Missing values are written as `nan`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub iter: usize,
    pub wall_ms: u64,
    pub train_loss: f64,
    /// Accuracy, perplexity or correlation depending on the task.
    pub train_metric: f64,
    pub eval_metric: f64,
}

impl MetricsRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.iter,
            self.wall_ms,
            fmt(self.train_loss),
            fmt(self.train_metric),
            fmt(self.eval_metric)
        )
    }
}

fn fmt(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else {
        format!("{v:?}")
    }
}

pub struct MetricsWriter {
    out: Option<(PathBuf, BufWriter<File>)>,
    last_iter: Option<usize>,
    rows: Vec<MetricsRow>,
}

impl MetricsWriter {
    /// Truncates `path` and writes the header. `None` keeps rows in memory only.
    pub fn create(path: Option<&Path>) -> Result<Self> {
        let out = match path {
            Some(p) => {
                let f = File::create(p).map_err(|e| Error::io(p, e))?;
                let mut w = BufWriter::new(f);
                writeln!(w, "{HEADER}")
                    .and_then(|_| w.flush())
                    .map_err(|e| Error::io(p, e))?;
                Some((p.to_path_buf(), w))
            }
            None => None,
        };
        Ok(MetricsWriter {
            out,
            last_iter: None,
            rows: Vec::new(),
        })
    }

    /// Appends and flushes a row. Iteration numbers must increase.
    pub fn write(&mut self, row: MetricsRow) -> Result<()> {
        if self.last_iter.is_some_and(|l| row.iter <= l) {
            return Err(Error::Invariant(format!(
                "metrics iteration {} after {}",
                row.iter,
                self.last_iter.unwrap_or(0)
            )));
        }
        if let Some((p, w)) = self.out.as_mut() {
            writeln!(w, "{}", row.to_csv())
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(p.as_path(), e))?;
        }
        self.last_iter = Some(row.iter);
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[MetricsRow] {
        &self.rows
    }
}

/// Reads a metrics file back.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let headers = reader.headers().map_err(|e| Error::format(path, e.to_string()))?;
    if headers.iter().collect::<Vec<_>>().join(",") != HEADER {
        return Err(Error::format(path, "unexpected metrics header"));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Error::format(path, e.to_string()))?;
        let bad = |c: &str| Error::format(path, format!("bad metrics cell {c:?}"));
        let f = |i: usize| rec[i].parse::<f64>().map_err(|_| bad(&rec[i]));
        rows.push(MetricsRow {
            iter: rec[0].parse().map_err(|_| bad(&rec[0]))?,
            wall_ms: rec[1].parse().map_err(|_| bad(&rec[1]))?,
            train_loss: f(2)?,
            train_metric: f(3)?,
            eval_metric: f(4)?,
        });
    }
    Ok(rows)
}

/// Pearson correlation of two equal-length series; NaN when either is
/// constant or they are empty.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    if n == 0 {
        return f64::NAN;
    }
    let (a, b) = (&a[..n], &b[..n]);
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return f64::NAN;
    }
    sab / (saa * sbb).sqrt()
}
