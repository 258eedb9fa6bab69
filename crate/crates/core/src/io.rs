//! Dataset file formats and provenance digests.
//!
//! Two interchangeable formats:
//! - CSV with a header: one `label` column of integers `1..L`, remaining
//!   columns are features.
//! - LIBSVM sparse lines: `label idx:val ...` with 1-based indices; the
//!   dimension is the largest index seen.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! write/read cycle reproduces values exactly and repeated runs are
//! byte-identical.

use std::fs;
use std::io::Write as _;
use std::path::Path;

use ndarray::Array2;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::Dataset;

pub fn write_csv(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str("label");
    for i in 1..=dataset.n_features() {
        out.push_str(&format!(",x{i}"));
    }
    out.push('\n');
    for mu in 0..dataset.n_samples() {
        out.push_str(&format!("{}", dataset.labels()[mu] + 1));
        for v in dataset.sample(mu).iter() {
            out.push_str(&format!(",{v}"));
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_csv(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Parse("empty csv file".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let label_col = cols
        .iter()
        .position(|c| c.trim() == "label")
        .ok_or_else(|| Error::Parse("csv header has no `label` column".into()))?;
    let n = cols.len() - 1;
    if n == 0 {
        return Err(Error::Parse("csv has no feature columns".into()));
    }

    let mut labels = Vec::new();
    let mut values: Vec<f64> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != cols.len() {
            return Err(Error::Parse(format!(
                "line {}: expected {} fields, got {}",
                lineno + 2,
                cols.len(),
                fields.len()
            )));
        }
        for (idx, field) in fields.iter().enumerate() {
            if idx == label_col {
                let y: i64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad label `{field}`", lineno + 2))
                })?;
                if y < 1 {
                    return Err(Error::Parse(format!(
                        "line {}: labels are 1-based, got {y}",
                        lineno + 2
                    )));
                }
                labels.push((y - 1) as usize);
            } else {
                let v: f64 = field.trim().parse().map_err(|_| {
                    Error::Parse(format!("line {}: bad value `{field}`", lineno + 2))
                })?;
                values.push(v);
            }
        }
    }
    if labels.is_empty() {
        return Err(Error::Parse("csv has no data rows".into()));
    }
    let m = labels.len();
    let n_classes = labels.iter().max().unwrap() + 1;
    let features = Array2::from_shape_vec((m, n), values)
        .map_err(|e| Error::Parse(format!("shape error: {e}")))?;
    Dataset::new(features, labels, n_classes.max(2))
}

pub fn write_libsvm(path: &Path, dataset: &Dataset) -> Result<()> {
    let mut out = String::new();
    for mu in 0..dataset.n_samples() {
        out.push_str(&format!("{}", dataset.labels()[mu] + 1));
        for (i, &v) in dataset.sample(mu).iter().enumerate() {
            if v != 0.0 {
                out.push_str(&format!(" {}:{v}", i + 1));
            }
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_libsvm(path: &Path) -> Result<Dataset> {
    let text = fs::read_to_string(path)?;
    let mut labels = Vec::new();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut n = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let label: i64 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|_| Error::Parse(format!("line {}: bad label", lineno + 1)))?;
        if label < 1 {
            return Err(Error::Parse(format!(
                "line {}: labels are 1-based, got {label}",
                lineno + 1
            )));
        }
        labels.push((label - 1) as usize);
        let mut row = Vec::new();
        for tok in parts {
            let (idx, val) = tok.split_once(':').ok_or_else(|| {
                Error::Parse(format!("line {}: bad token `{tok}`", lineno + 1))
            })?;
            let idx: usize = idx
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad index", lineno + 1)))?;
            if idx == 0 {
                return Err(Error::Parse(format!(
                    "line {}: indices are 1-based",
                    lineno + 1
                )));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| Error::Parse(format!("line {}: bad value", lineno + 1)))?;
            n = n.max(idx);
            row.push((idx - 1, val));
        }
        rows.push(row);
    }
    if labels.is_empty() {
        return Err(Error::Parse("libsvm file has no rows".into()));
    }
    let m = labels.len();
    if n == 0 {
        return Err(Error::Parse("libsvm file has no features".into()));
    }
    let mut features = Array2::<f64>::zeros((m, n));
    for (mu, row) in rows.iter().enumerate() {
        for &(i, v) in row {
            features[[mu, i]] = v;
        }
    }
    let n_classes = labels.iter().max().unwrap() + 1;
    Dataset::new(features, labels, n_classes.max(2))
}

/// Reads a dataset, dispatching on the file extension (`.csv` vs anything
/// else, treated as LIBSVM).
pub fn read_dataset(path: &Path) -> Result<Dataset> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => read_csv(path),
        _ => read_libsvm(path),
    }
}

pub fn write_dataset(path: &Path, dataset: &Dataset) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => write_csv(path, dataset),
        _ => write_libsvm(path, dataset),
    }
}

/// Plain numeric CSV sidecar with the generating class centers, one row
/// per class.
pub fn write_true_weights(path: &Path, w: &Array2<f64>) -> Result<()> {
    let mut out = Vec::new();
    for row in w.rows() {
        let line: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
        writeln!(out, "{}", line.join(","))?;
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_true_weights(path: &Path) -> Result<Array2<f64>> {
    let text = fs::read_to_string(path)?;
    let mut values = Vec::new();
    let mut n = None;
    let mut rows = 0usize;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .map(|v| v.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Parse(format!("bad weight value: {e}")))?;
        match n {
            None => n = Some(row.len()),
            Some(k) if k != row.len() => {
                return Err(Error::Parse("ragged weight rows".into()));
            }
            _ => {}
        }
        values.extend(row);
        rows += 1;
    }
    let n = n.ok_or_else(|| Error::Parse("empty weights file".into()))?;
    Array2::from_shape_vec((rows, n), values)
        .map_err(|e| Error::Parse(format!("shape error: {e}")))
}

/// Content digest of a dataset (shape, labels, feature bits), independent
/// of the on-disk format.
pub fn dataset_digest(dataset: &Dataset) -> String {
    let mut h = Sha256::new();
    h.update((dataset.n_samples() as u64).to_le_bytes());
    h.update((dataset.n_features() as u64).to_le_bytes());
    h.update((dataset.n_classes() as u64).to_le_bytes());
    for &y in dataset.labels() {
        h.update((y as u64).to_le_bytes());
    }
    for v in dataset.features().iter() {
        h.update(v.to_le_bytes());
    }
    let digest = h.finalize();
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use tempfile::tempdir;

    fn toy() -> Dataset {
        let x = array![[1.0, 0.0, -2.5], [0.1, 0.2, 0.3]];
        Dataset::new(x, vec![0, 2], 3).unwrap()
    }

    #[test]
    fn csv_round_trip_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.csv");
        let d = toy();
        write_csv(&p, &d).unwrap();
        let back = read_csv(&p).unwrap();
        assert_eq!(back.labels(), d.labels());
        assert_eq!(back.features(), d.features());
        assert_eq!(dataset_digest(&back), dataset_digest(&d));
    }

    #[test]
    fn libsvm_round_trip_exact() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("d.libsvm");
        let d = toy();
        write_libsvm(&p, &d).unwrap();
        let back = read_libsvm(&p).unwrap();
        assert_eq!(back.labels(), d.labels());
        assert_eq!(back.features(), d.features());
    }

    #[test]
    fn csv_rejects_malformed_input() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        std::fs::write(&p, "label,x1\n1,1.0\n2\n").unwrap();
        assert!(read_csv(&p).is_err());
        std::fs::write(&p, "x1,x2\n1.0,2.0\n").unwrap();
        assert!(read_csv(&p).is_err());
        std::fs::write(&p, "label,x1\n0,1.0\n").unwrap();
        assert!(read_csv(&p).is_err());
    }

    #[test]
    fn true_weights_round_trip() {
        let dir = tempdir().unwrap();
        let p = dir.path().join("w.csv");
        let w = array![[0.5, 0.0], [-1.25, 3.0]];
        write_true_weights(&p, &w).unwrap();
        let back = read_true_weights(&p).unwrap();
        assert_eq!(back, w);
    }

    #[test]
    fn digest_distinguishes_data() {
        let d1 = toy();
        let d2 = Dataset::new(
            array![[1.0, 0.0, -2.5], [0.1, 0.2, 0.30000001]],
            vec![0, 2],
            3,
        )
        .unwrap();
        assert_ne!(dataset_digest(&d1), dataset_digest(&d2));
    }
}
