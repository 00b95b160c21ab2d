//! Dataset loading, synthetic data, checkpoints and embedding export.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, FORMAT_VERSION};

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::gmm::GmmParams;
use crate::numerics::{Matrix, SeededRng};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Matrix,
    labels: Option<Vec<usize>>,
    name: String,
}

impl Dataset {
    pub fn new(samples: Matrix, labels: Option<Vec<usize>>, name: impl Into<String>) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != samples.rows() {
                return Err(Error::shape("dataset labels", samples.rows(), l.len()));
            }
        }
        if !samples.is_finite() {
            return Err(Error::NonFinite("dataset samples".into()));
        }
        Ok(Dataset {
            samples,
            labels,
            name: name.into(),
        })
    }

    pub fn samples(&self) -> &Matrix {
        &self.samples
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.samples.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.samples.cols()
    }

    /// The first `n` samples (or all of them if there are fewer).
    pub fn head(&self, n: usize) -> Dataset {
        let idx: Vec<usize> = (0..n.min(self.len())).collect();
        Dataset {
            samples: self.samples.select_rows(&idx),
            labels: self.labels.as_ref().map(|l| l[..idx.len()].to_vec()),
            name: self.name.clone(),
        }
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn format_err(path: &Path, offset: usize, msg: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        offset,
        msg: msg.into(),
    }
}

/// Parses an unsigned-byte IDX file, returning its dimension sizes and payload.
fn parse_idx<'a>(path: &Path, bytes: &'a [u8], magic: u32, ndims: usize) -> Result<(Vec<usize>, &'a [u8])> {
    if bytes.len() < 4 {
        return Err(format_err(path, bytes.len(), "file ends inside the magic number"));
    }
    let found = u32::from_be_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if found != magic {
        return Err(format_err(
            path,
            0,
            format!("bad magic number {found:#010x}, expected {magic:#010x}"),
        ));
    }
    let header = 4 + 4 * ndims;
    if bytes.len() < header {
        return Err(format_err(path, bytes.len(), "file ends inside the dimension sizes"));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|i| {
            let o = 4 + 4 * i;
            u32::from_be_bytes([bytes[o], bytes[o + 1], bytes[o + 2], bytes[o + 3]]) as usize
        })
        .collect();
    let expected: usize = dims.iter().product();
    let payload = &bytes[header..];
    if payload.len() < expected {
        return Err(format_err(
            path,
            bytes.len(),
            format!(
                "truncated payload: dimensions {dims:?} need {expected} bytes after offset {header}, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(format_err(
            path,
            header + expected,
            format!("{} unexpected trailing bytes", payload.len() - expected),
        ));
    }
    Ok((dims, payload))
}

/// Reads IDX images (magic `0x00000803`) and optionally IDX labels (magic
/// `0x00000801`). Pixels are scaled by 1/255; each image becomes one row.
pub fn load_idx(images: &Path, labels: Option<&Path>) -> Result<Dataset> {
    let bytes = read_bytes(images)?;
    let (dims, payload) = parse_idx(images, &bytes, 0x0000_0803, 3)?;
    let (n, d) = (dims[0], dims[1] * dims[2]);
    let data: Vec<f64> = payload.iter().map(|&b| b as f64 / 255.0).collect();
    let samples = Matrix::from_vec(n, d, data)?;
    let labels = match labels {
        None => None,
        Some(lp) => {
            let lbytes = read_bytes(lp)?;
            let (ldims, lpayload) = parse_idx(lp, &lbytes, 0x0000_0801, 1)?;
            if ldims[0] != n {
                return Err(format_err(
                    lp,
                    4,
                    format!("label count {} does not match image count {n}", ldims[0]),
                ));
            }
            Some(lpayload.iter().map(|&b| b as usize).collect())
        }
    };
    let name = images
        .file_stem()
        .map_or_else(|| "idx".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(samples, labels, name)
}

/// Reads a headerless numeric table. With `has_labels` the last column is
/// the integer class label. Values are not rescaled.
pub fn load_csv(path: &Path, has_labels: bool, delimiter: u8) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .delimiter(delimiter)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let parse_err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_error(path, e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        match width {
            None => width = Some(record.len()),
            Some(w) if w != record.len() => {
                return Err(parse_err(line, format!("expected {w} fields, found {}", record.len())));
            }
            _ => {}
        }
        let n_features = if has_labels { record.len() - 1 } else { record.len() };
        if n_features == 0 {
            return Err(parse_err(line, "no feature columns".into()));
        }
        for (i, cell) in record.iter().take(n_features).enumerate() {
            let v: f64 = cell
                .parse()
                .map_err(|_| parse_err(line, format!("column {}: {cell:?} is not a number", i + 1)))?;
            if !v.is_finite() {
                return Err(parse_err(line, format!("column {}: non-finite value {cell:?}", i + 1)));
            }
            values.push(v);
        }
        if has_labels {
            let cell = &record[n_features];
            let l: usize = cell.parse().map_err(|_| {
                parse_err(line, format!("label {cell:?} is not a nonnegative integer"))
            })?;
            labels.push(l);
        }
        rows += 1;
    }
    let Some(width) = width else {
        return Err(parse_err(1, "file contains no rows".into()));
    };
    let d = if has_labels { width - 1 } else { width };
    let samples = Matrix::from_vec(rows, d, values)?;
    let name = path
        .file_stem()
        .map_or_else(|| "csv".to_string(), |s| s.to_string_lossy().into_owned());
    Dataset::new(samples, has_labels.then_some(labels), name)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            line,
            msg: format!("{other:?}"),
        },
    }
}

fn unit_direction(d: usize, rng: &mut SeededRng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-8 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

/// Means for `synth_gmm`. In one dimension they sit on a lattice with spacing
/// `separation`. With `m <= d` they lie on distinct coordinate axes at
/// distance `separation` from the origin. Otherwise they are random unit
/// directions scaled by `separation`, keeping the best spread of 64 draws.
fn synth_means(m: usize, d: usize, separation: f64, rng: &mut SeededRng) -> Matrix {
    let mut means = Matrix::zeros(m, d);
    if d == 1 {
        for k in 0..m {
            means[(k, 0)] = separation * k as f64;
        }
    } else if m <= d {
        let axes = rng.choose_distinct(d, m);
        for (k, a) in axes.into_iter().enumerate() {
            means[(k, a)] = separation;
        }
    } else {
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for _ in 0..64 {
            let dirs: Vec<Vec<f64>> = (0..m).map(|_| unit_direction(d, rng)).collect();
            let mut min = f64::INFINITY;
            for i in 0..m {
                for j in i + 1..m {
                    let dist: f64 = dirs[i].iter().zip(&dirs[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                    min = min.min(dist);
                }
            }
            if min > best.0 {
                best = (min, dirs);
            }
        }
        for (k, dir) in best.1.iter().enumerate() {
            for (j, v) in dir.iter().enumerate() {
                means[(k, j)] = separation * v;
            }
        }
    }
    means
}

/// `n` samples from an equal-weight mixture of `m` unit-variance Gaussians
/// in `d` dimensions, with the generating component as the label.
pub fn synth_gmm(m: usize, d: usize, n: usize, separation: f64, rng: &mut SeededRng) -> Result<(Dataset, GmmParams)> {
    if m == 0 || d == 0 || n == 0 {
        return Err(Error::InvalidArgument(format!(
            "synthetic mixture needs positive sizes, got m={m} d={d} n={n}"
        )));
    }
    if separation.is_nan() || separation <= 0.0 || !separation.is_finite() {
        return Err(Error::InvalidArgument(format!("separation must be positive, got {separation}")));
    }
    let means = synth_means(m, d, separation, rng);
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let k = rng.below(m);
        labels.push(k);
        for j in 0..d {
            data.push(means[(k, j)] + rng.normal());
        }
    }
    let truth = GmmParams::from_moments(&vec![1.0; m], means, &Matrix::from_vec(m, d, vec![1.0; m * d])?)?;
    let ds = Dataset::new(Matrix::from_vec(n, d, data)?, Some(labels), format!("synth-gmm-m{m}-d{d}"))?;
    Ok((ds, truth))
}

/// Shortest decimal that round-trips the value rounded to 9 significant digits.
pub fn format_sig9(v: f64) -> String {
    if !v.is_finite() {
        return v.to_string();
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Writes a two-column embedding with header `x,y` or `x,y,label`.
pub fn emit_embedding_csv(ys: &Matrix, labels: Option<&[usize]>, path: &Path) -> Result<()> {
    if ys.cols() != 2 {
        return Err(Error::shape("emit_embedding_csv", "2 columns", ys.cols()));
    }
    if let Some(l) = labels {
        if l.len() != ys.rows() {
            return Err(Error::shape("emit_embedding_csv labels", ys.rows(), l.len()));
        }
    }
    let mut out = String::from(if labels.is_some() { "x,y,label\n" } else { "x,y\n" });
    for (i, row) in ys.row_iter().enumerate() {
        out.push_str(&format_sig9(row[0]));
        out.push(',');
        out.push_str(&format_sig9(row[1]));
        if let Some(l) = labels {
            out.push(',');
            out.push_str(&l[i].to_string());
        }
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests;
