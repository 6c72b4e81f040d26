//! Binary tensor files, CSV feature import, `key: value` sidecars and pyramid
//! manifests.
//!
//! A tensor file is the magic `UFT1`, a little-endian `u32` rank, that many
//! `u32` dimensions, then row-major little-endian `f32` values.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2};

use crate::alignment::{FeaturePyramid, GridShape};
use crate::error::{Error, Result};
use crate::measures::FeatureSet;

pub const MAGIC: &[u8; 4] = b"UFT1";
pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message: message.into(),
    }
}

pub fn encode_tensor(shape: &[usize], data: impl IntoIterator<Item = f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * shape.len() + 4 * shape.iter().product::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(shape.len() as u32).to_le_bytes());
    for &d in shape {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in data {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8], path: &Path) -> Result<Tensor> {
    let word = |k: usize| -> Result<u32> {
        bytes
            .get(4 * k..4 * k + 4)
            .map(|b| u32::from_le_bytes(b.try_into().expect("four bytes")))
            .ok_or_else(|| format_err(path, "truncated header"))
    };
    if bytes.get(..4) != Some(MAGIC.as_slice()) {
        return Err(format_err(path, "missing UFT1 magic"));
    }
    let rank = word(1)? as usize;
    let shape = (0..rank).map(|k| word(2 + k).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| format_err(path, "dimension product overflows"))?;
    let body = &bytes[4 * (2 + rank)..];
    if body.len() != 4 * count {
        return Err(format_err(
            path,
            format!("expected {} data bytes for shape {shape:?}, found {}", 4 * count, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().expect("four bytes")))
        .collect();
    Ok(Tensor { shape, data })
}

pub fn write_tensor(path: &Path, shape: &[usize], data: impl IntoIterator<Item = f64>) -> Result<()> {
    fs::write(path, encode_tensor(shape, data)).map_err(io_err(path))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_tensor(&bytes, path)
}

pub fn write_matrix(path: &Path, m: &Array2<f64>) -> Result<()> {
    write_tensor(path, &[m.nrows(), m.ncols()], m.iter().copied())
}

pub fn write_vector(path: &Path, v: &Array1<f64>) -> Result<()> {
    write_tensor(path, &[v.len()], v.iter().copied())
}

pub fn read_matrix(path: &Path) -> Result<Array2<f64>> {
    let t = read_tensor(path)?;
    match t.shape[..] {
        [r, c] => Ok(Array2::from_shape_vec((r, c), t.data.into_iter().map(f64::from).collect())
            .expect("length checked on decode")),
        _ => Err(format_err(path, format!("expected a rank-2 tensor, found shape {:?}", t.shape))),
    }
}

/// Rank 1, or rank 2 with a unit dimension.
pub fn read_vector(path: &Path) -> Result<Array1<f64>> {
    let t = read_tensor(path)?;
    match t.shape[..] {
        [_] | [1, _] | [_, 1] => Ok(t.data.into_iter().map(f64::from).collect()),
        _ => Err(format_err(path, format!("expected a vector, found shape {:?}", t.shape))),
    }
}

/// One feature vector per non-empty line, comma separated.
pub fn read_csv_features(path: &Path) -> Result<FeatureSet> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| format_err(path, e.to_string()))?;
    let mut rows = Vec::new();
    for (line, record) in reader.records().enumerate() {
        let record = record.map_err(|e| format_err(path, e.to_string()))?;
        let row = record
            .iter()
            .map(|field| {
                field
                    .parse::<f64>()
                    .map_err(|e| format_err(path, format!("line {}: {field:?}: {e}", line + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    FeatureSet::from_rows(&rows).map_err(|e| format_err(path, e.to_string()))
}

/// Tensor or CSV features, chosen by extension.
pub fn read_features(path: &Path) -> Result<FeatureSet> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        read_csv_features(path)
    } else {
        FeatureSet::new(read_matrix(path)?)
    }
}

pub fn format_sidecar<K: AsRef<str>, V: AsRef<str>>(entries: &[(K, V)]) -> String {
    entries
        .iter()
        .map(|(k, v)| format!("{}: {}\n", k.as_ref(), v.as_ref()))
        .collect()
}

pub fn write_sidecar<K: AsRef<str>, V: AsRef<str>>(path: &Path, entries: &[(K, V)]) -> Result<()> {
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(format_sidecar(entries).as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn parse_sidecar(text: &str, path: &Path) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split_once(':')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| format_err(path, format!("not a `key: value` line: {l:?}")))
        })
        .collect()
}

pub fn read_sidecar(path: &Path) -> Result<Vec<(String, String)>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_sidecar(&text, path)
}

fn level_file(k: usize) -> String {
    format!("level{k}.uft")
}

/// Writes `level{k}.uft` per level and a manifest into `dir`.
pub fn write_pyramid(dir: &Path, pyramid: &FeaturePyramid) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let base = pyramid.base();
    let mut entries = vec![
        ("levels".to_string(), pyramid.len().to_string()),
        ("grid".to_string(), format!("{} {}", base.h, base.w)),
    ];
    let mut written = Vec::new();
    for (k, level) in pyramid.levels().iter().enumerate() {
        let path = dir.join(level_file(k));
        write_matrix(&path, level.as_array())?;
        let g = pyramid.level_shape(k);
        entries.push((format!("level{k}"), format!("{} {} {} {}", level_file(k), g.h, g.w, level.dim())));
        written.push(path);
    }
    let manifest = dir.join(MANIFEST);
    write_sidecar(&manifest, &entries)?;
    written.push(manifest);
    Ok(written)
}

pub fn read_pyramid(dir: &Path) -> Result<FeaturePyramid> {
    let manifest = dir.join(MANIFEST);
    let entries = read_sidecar(&manifest)?;
    let get = |key: &str| {
        entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| format_err(&manifest, format!("missing `{key}`")))
    };
    let numbers = |s: &str| -> Result<Vec<usize>> {
        s.split_whitespace()
            .map(|t| t.parse().map_err(|_| format_err(&manifest, format!("bad number {t:?}"))))
            .collect()
    };
    let levels: usize = get("levels")?
        .parse()
        .map_err(|_| format_err(&manifest, "bad level count"))?;
    let grid = match numbers(get("grid")?)?[..] {
        [h, w] => GridShape::new(h, w),
        _ => return Err(format_err(&manifest, "grid needs two sizes")),
    };
    let mut out = Vec::with_capacity(levels);
    for k in 0..levels {
        let spec = get(&format!("level{k}"))?;
        let file = spec.split_whitespace().next().unwrap_or_default();
        out.push(read_features(&dir.join(file))?);
    }
    FeaturePyramid::new(out, grid)
}
