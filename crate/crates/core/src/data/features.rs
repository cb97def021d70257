//! Precomputed feature vectors stored as CSV with a `label` column followed
//! by `f0..fN`.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Vector;

#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSet {
    pub vectors: Vec<Vector>,
    pub labels: Vec<usize>,
}

/// Reads the file without normalizing.
pub fn read_feature_csv(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let path = path.as_ref();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let headers = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if headers.get(0) != Some("label") {
        return Err(Error::format(path, "first column must be `label`"));
    }
    for (k, h) in headers.iter().skip(1).enumerate() {
        if h != format!("f{k}") {
            return Err(Error::format(path, format!("column {} is `{h}`, expected `f{k}`", k + 1)));
        }
    }
    let width = headers.len() - 1;
    if width == 0 {
        return Err(Error::format(path, "no feature columns"));
    }
    let mut set = FeatureSet {
        vectors: Vec::new(),
        labels: Vec::new(),
    };
    for (row, record) in reader.records().enumerate() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = row + 2;
        let label = record[0]
            .trim()
            .parse::<usize>()
            .map_err(|_| Error::format(path, format!("line {line}: bad label {:?}", &record[0])))?;
        let v = record
            .iter()
            .skip(1)
            .map(|cell| {
                cell.trim()
                    .parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| Error::format(path, format!("line {line}: non-numeric cell {cell:?}")))
            })
            .collect::<Result<Vector>>()?;
        set.labels.push(label);
        set.vectors.push(v);
    }
    Ok(set)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.kind() {
        csv::ErrorKind::Io(_) => match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        csv::ErrorKind::UnequalLengths { .. } => Error::format(path, format!("ragged row: {e}")),
        _ => Error::format(path, e.to_string()),
    }
}

/// Rescales each feature so its column minimum maps to 0 and maximum to 1.
/// Constant columns become 0.
pub fn min_max_normalize(vectors: &mut [Vector]) {
    let Some(width) = vectors.first().map(Vec::len) else {
        return;
    };
    for k in 0..width {
        let (lo, hi) = vectors
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v[k]), h.max(v[k])));
        let span = hi - lo;
        for v in vectors.iter_mut() {
            v[k] = if span > 0.0 { (v[k] - lo) / span } else { 0.0 };
        }
    }
}

pub fn load_feature_csv(path: impl AsRef<Path>) -> Result<FeatureSet> {
    let mut set = read_feature_csv(path)?;
    min_max_normalize(&mut set.vectors);
    Ok(set)
}

/// Zero-pads `vector` to `chunk * chunks` entries and splits it into
/// `chunks` consecutive slices of length `chunk`.
pub fn chunk_features(vector: &[f64], chunk: usize, chunks: usize) -> Result<Vec<Vector>> {
    let total = chunk * chunks;
    if vector.len() > total {
        return Err(Error::Domain(format!(
            "vector of length {} does not fit {chunks} chunks of {chunk}",
            vector.len()
        )));
    }
    let mut padded = vector.to_vec();
    padded.resize(total, 0.0);
    Ok(padded.chunks(chunk.max(1)).take(chunks).map(<[f64]>::to_vec).collect())
}
