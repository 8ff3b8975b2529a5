//! Deterministic, versioned on-disk formats.
//!
//! A dataset directory holds `manifest.json` plus raw little-endian f64
//! arrays (`X.f64`, `Zpf.f64`, `Zsig.f64`), row-major, one file per array,
//! each CRC-32 checksummed. A manifold directory holds `manifest.json`,
//! `X.f64`, `Y.f64` and the sparse weights as a `W.triplets` binary stream
//! of `(row: u32, col: u32, value: f64)` records sorted by `(row, col)`.
//! Files are written to a temp name and renamed, so readers never observe a
//! partial file.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

use crate::error::{Result, StorageError};
use crate::lle::Manifold;
use crate::pipeline::{Dataset, DatasetMeta};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArrayDescriptor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub dtype: String,
    pub byte_order: String,
    pub layout: String,
    pub filename: String,
    pub crc32: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct DatasetManifest {
    format_version: u32,
    kind: String,
    arrays: Vec<ArrayDescriptor>,
    meta: DatasetMeta,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TripletDescriptor {
    filename: String,
    entries: usize,
    crc32: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifoldManifest {
    format_version: u32,
    kind: String,
    arrays: Vec<ArrayDescriptor>,
    weights: TripletDescriptor,
    k1: usize,
    dim: usize,
    reg: f64,
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| StorageError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| StorageError::io(path, e))?;
    Ok(())
}

fn matrix_bytes(m: &DMatrix<f64>) -> Vec<u8> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols() * 8);
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            out.extend_from_slice(&m[(r, c)].to_le_bytes());
        }
    }
    out
}

fn write_array(dir: &Path, name: &str, filename: &str, m: &DMatrix<f64>) -> Result<ArrayDescriptor> {
    let bytes = matrix_bytes(m);
    let crc = crc32fast::hash(&bytes);
    write_atomic(&dir.join(filename), &bytes)?;
    Ok(ArrayDescriptor {
        name: name.to_string(),
        rows: m.nrows(),
        cols: m.ncols(),
        dtype: "f64".into(),
        byte_order: "little".into(),
        layout: "row_major".into(),
        filename: filename.to_string(),
        crc32: crc,
    })
}

fn read_array(dir: &Path, desc: &ArrayDescriptor) -> Result<DMatrix<f64>> {
    if desc.dtype != "f64" || desc.byte_order != "little" || desc.layout != "row_major" {
        return Err(StorageError::Format(format!(
            "unsupported array encoding for {}: {}/{}/{}",
            desc.name, desc.dtype, desc.byte_order, desc.layout
        ))
        .into());
    }
    let path = dir.join(&desc.filename);
    let bytes = fs::read(&path).map_err(|e| StorageError::io(&path, e))?;
    let expected = (desc.rows * desc.cols * 8) as u64;
    if bytes.len() as u64 != expected {
        return Err(StorageError::Truncated {
            file: desc.filename.clone(),
            expected,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let crc = crc32fast::hash(&bytes);
    if crc != desc.crc32 {
        return Err(StorageError::ChecksumMismatch {
            file: desc.filename.clone(),
            expected: desc.crc32,
            actual: crc,
        }
        .into());
    }
    let vals: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(DMatrix::from_row_slice(desc.rows, desc.cols, &vals))
}

fn read_manifest<T: for<'de> Deserialize<'de>>(dir: &Path) -> Result<T> {
    let path = dir.join("manifest.json");
    let text = fs::read_to_string(&path).map_err(|e| StorageError::io(&path, e))?;
    // Probe the version before strict decoding so version mismatches are
    // named as such rather than as generic parse errors.
    #[derive(Deserialize)]
    struct VersionProbe {
        format_version: u32,
    }
    let probe: VersionProbe = serde_json::from_str(&text)
        .map_err(|e| StorageError::Format(format!("manifest.json: {e}")))?;
    if probe.format_version != FORMAT_VERSION {
        return Err(StorageError::VersionMismatch {
            found: probe.format_version,
            supported: FORMAT_VERSION,
        }
        .into());
    }
    serde_json::from_str(&text)
        .map_err(|e| StorageError::Format(format!("manifest.json: {e}")).into())
}

fn find_array<'a>(arrays: &'a [ArrayDescriptor], name: &str) -> Result<&'a ArrayDescriptor> {
    arrays
        .iter()
        .find(|a| a.name == name)
        .ok_or_else(|| StorageError::Format(format!("manifest lacks array {name}")).into())
}

/// Persists a dataset: X.f64, Zpf.f64, Zsig.f64 + manifest.json.
pub fn save_dataset(ds: &Dataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StorageError::io(dir, e))?;
    let arrays = vec![
        write_array(dir, "X", "X.f64", &ds.x)?,
        write_array(dir, "Zpf", "Zpf.f64", &ds.z_pf)?,
        write_array(dir, "Zsig", "Zsig.f64", &ds.z_sig)?,
    ];
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        kind: "dataset".into(),
        arrays,
        meta: ds.meta,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| StorageError::Format(e.to_string()))?;
    write_atomic(&dir.join("manifest.json"), text.as_bytes())
}

/// Loads a dataset, verifying version, sizes and checksums.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let manifest: DatasetManifest = read_manifest(dir)?;
    if manifest.kind != "dataset" {
        return Err(StorageError::Format(format!(
            "expected a dataset directory, found kind {:?}",
            manifest.kind
        ))
        .into());
    }
    let x = read_array(dir, find_array(&manifest.arrays, "X")?)?;
    let z_pf = read_array(dir, find_array(&manifest.arrays, "Zpf")?)?;
    let z_sig = read_array(dir, find_array(&manifest.arrays, "Zsig")?)?;
    if z_pf.nrows() != x.nrows() || z_sig.nrows() != x.nrows() {
        return Err(StorageError::Invariant(format!(
            "row misalignment: X has {}, Zpf has {}, Zsig has {}",
            x.nrows(),
            z_pf.nrows(),
            z_sig.nrows()
        ))
        .into());
    }
    Ok(Dataset {
        x,
        z_pf,
        z_sig,
        meta: manifest.meta,
    })
}

fn triplet_bytes(weights: &[Vec<(usize, f64)>]) -> Vec<u8> {
    let mut out = Vec::new();
    for (row, entries) in weights.iter().enumerate() {
        for &(col, v) in entries {
            out.extend_from_slice(&(row as u32).to_le_bytes());
            out.extend_from_slice(&(col as u32).to_le_bytes());
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Persists a fitted manifold: X.f64, Y.f64, W.triplets + manifest.json.
pub fn save_manifold(man: &Manifold, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| StorageError::io(dir, e))?;
    let arrays = vec![
        write_array(dir, "X", "X.f64", &man.x)?,
        write_array(dir, "Y", "Y.f64", &man.y)?,
    ];
    let bytes = triplet_bytes(&man.weights);
    let crc = crc32fast::hash(&bytes);
    let entries = man.weights.iter().map(Vec::len).sum();
    write_atomic(&dir.join("W.triplets"), &bytes)?;
    let manifest = ManifoldManifest {
        format_version: FORMAT_VERSION,
        kind: "manifold".into(),
        arrays,
        weights: TripletDescriptor {
            filename: "W.triplets".into(),
            entries,
            crc32: crc,
        },
        k1: man.k1,
        dim: man.dim,
        reg: man.reg,
    };
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| StorageError::Format(e.to_string()))?;
    write_atomic(&dir.join("manifest.json"), text.as_bytes())
}

/// Loads a manifold, verifying the weight-stream ordering and that every
/// row carries exactly `k1` nonzeros.
pub fn load_manifold(dir: &Path) -> Result<Manifold> {
    let manifest: ManifoldManifest = read_manifest(dir)?;
    if manifest.kind != "manifold" {
        return Err(StorageError::Format(format!(
            "expected a manifold directory, found kind {:?}",
            manifest.kind
        ))
        .into());
    }
    let x = read_array(dir, find_array(&manifest.arrays, "X")?)?;
    let y = read_array(dir, find_array(&manifest.arrays, "Y")?)?;
    let n = x.nrows();
    if y.nrows() != n {
        return Err(StorageError::Invariant(format!(
            "X has {n} rows but Y has {}",
            y.nrows()
        ))
        .into());
    }

    let path = dir.join(&manifest.weights.filename);
    let bytes = fs::read(&path).map_err(|e| StorageError::io(&path, e))?;
    let expected = (manifest.weights.entries * 16) as u64;
    if bytes.len() as u64 != expected {
        return Err(StorageError::Truncated {
            file: manifest.weights.filename.clone(),
            expected,
            actual: bytes.len() as u64,
        }
        .into());
    }
    let crc = crc32fast::hash(&bytes);
    if crc != manifest.weights.crc32 {
        return Err(StorageError::ChecksumMismatch {
            file: manifest.weights.filename.clone(),
            expected: manifest.weights.crc32,
            actual: crc,
        }
        .into());
    }
    let mut weights: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    let mut last: Option<(u32, u32)> = None;
    for rec in bytes.chunks_exact(16) {
        let row = u32::from_le_bytes(rec[0..4].try_into().unwrap());
        let col = u32::from_le_bytes(rec[4..8].try_into().unwrap());
        let v = f64::from_le_bytes(rec[8..16].try_into().unwrap());
        if let Some(prev) = last {
            if (row, col) <= prev {
                return Err(StorageError::Format(format!(
                    "W.triplets not strictly sorted by (row, col) at ({row}, {col})"
                ))
                .into());
            }
        }
        last = Some((row, col));
        if row as usize >= n || col as usize >= n {
            return Err(StorageError::Invariant(format!(
                "weight index ({row}, {col}) out of range for N = {n}"
            ))
            .into());
        }
        weights[row as usize].push((col as usize, v));
    }
    for (row, entries) in weights.iter().enumerate() {
        if entries.len() != manifest.k1 {
            return Err(StorageError::Invariant(format!(
                "row {row} has {} weights, manifest k1 = {}",
                entries.len(),
                manifest.k1
            ))
            .into());
        }
    }
    Ok(Manifold {
        x,
        y,
        weights,
        k1: manifest.k1,
        dim: manifest.dim,
        reg: manifest.reg,
    })
}
