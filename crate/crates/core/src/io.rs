//! Flat little-endian `f64` arrays with JSON sidecars, and JSON reports.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::observation::{ObservationMatrix, SamplingScheme};

pub const DTYPE: &str = "f64-le";

/// Description of a flat binary array.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub kind: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    /// Row-major over `shape`.
    pub layout: String,
    pub config_hash: String,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl Sidecar {
    pub fn new(kind: &str, shape: Vec<usize>, config_hash: &str, meta: serde_json::Value) -> Self {
        Self {
            kind: kind.into(),
            shape,
            dtype: DTYPE.into(),
            layout: "row-major".into(),
            config_hash: config_hash.into(),
            meta,
        }
    }
}

/// `A.bin` -> `A.bin.json`.
pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

pub fn write_array(path: &Path, data: &[f64], sidecar: &Sidecar) -> Result<()> {
    if data.len() != sidecar.shape.iter().product::<usize>() {
        return Err(Error::Input("array length does not match the sidecar shape".into()));
    }
    let mut bytes = Vec::with_capacity(8 * data.len());
    for x in data {
        bytes.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, bytes)?;
    write_json(&sidecar_path(path), sidecar)
}

pub fn read_array(path: &Path) -> Result<(Vec<f64>, Sidecar)> {
    let sidecar: Sidecar = read_json(&sidecar_path(path))?;
    if sidecar.dtype != DTYPE {
        return Err(Error::Input(format!("unsupported dtype {}", sidecar.dtype)));
    }
    let bytes = fs::read(path)?;
    let n: usize = sidecar.shape.iter().product();
    if bytes.len() != 8 * n {
        return Err(Error::Input(format!(
            "{} holds {} bytes, sidecar shape needs {}",
            path.display(),
            bytes.len(),
            8 * n
        )));
    }
    let data = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
    Ok((data, sidecar))
}

/// Matrix in row-major order; the sidecar carries the sampling scheme and
/// whatever else the caller puts in `meta`.
pub fn write_matrix(
    path: &Path,
    a: &ObservationMatrix,
    config_hash: &str,
    mut meta: serde_json::Value,
) -> Result<()> {
    let (m, n) = a.matrix.shape();
    let row_major: Vec<f64> = a.matrix.transpose().as_slice().to_vec();
    if !meta.is_object() {
        meta = serde_json::json!({});
    }
    meta["scheme"] = serde_json::to_value(&a.scheme)?;
    meta["row_order"] = "lexicographic in (x', t)".into();
    meta["col_order"] = "lexicographic in Omega node coordinates, last axis fastest".into();
    write_array(path, &row_major, &Sidecar::new("observation_matrix", vec![m, n], config_hash, meta))
}

pub fn read_matrix(path: &Path) -> Result<(ObservationMatrix, Sidecar)> {
    let (data, sidecar) = read_array(path)?;
    if sidecar.shape.len() != 2 {
        return Err(Error::Input("matrix sidecar needs a 2-d shape".into()));
    }
    let (m, n) = (sidecar.shape[0], sidecar.shape[1]);
    let matrix = DMatrix::from_row_slice(m, n, &data);
    let scheme: SamplingScheme = serde_json::from_value(sidecar.meta["scheme"].clone())
        .map_err(|e| Error::Input(format!("matrix sidecar lacks a sampling scheme: {e}")))?;
    if scheme.n_rows() != m || scheme.n_cols() != n {
        return Err(Error::Input("sampling scheme does not match the matrix shape".into()));
    }
    Ok((ObservationMatrix { matrix, scheme }, sidecar))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{PatchSigma, RegionOmega};
    use crate::grid::AxisBox;

    #[test]
    fn matrix_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let omega = RegionOmega::new(AxisBox::new(vec![0.0, 0.5], vec![0.25, 0.75]).unwrap()).unwrap();
        let sigma = PatchSigma::new(AxisBox::new(vec![-0.3], vec![0.3]).unwrap(), 0.1, 0.3).unwrap();
        let scheme = SamplingScheme::new(&omega, &sigma, 0.125, 0.0625).unwrap();
        let (m, n) = (scheme.n_rows(), scheme.n_cols());
        let matrix = DMatrix::from_fn(m, n, |i, j| (i * n + j) as f64 + 0.5);
        let a = ObservationMatrix { matrix, scheme };
        let path = dir.path().join("A.bin");
        write_matrix(&path, &a, "abc", serde_json::json!({"solver": "neumann"})).unwrap();
        let raw = fs::read(&path).unwrap();
        // row-major: second stored value is A[0, 1]
        assert_eq!(f64::from_le_bytes(raw[8..16].try_into().unwrap()), 1.5);
        let (b, side) = read_matrix(&path).unwrap();
        assert_eq!(b.matrix, a.matrix);
        assert_eq!(b.scheme, a.scheme);
        assert_eq!(side.config_hash, "abc");
        assert_eq!(side.meta["solver"], "neumann");
    }

    #[test]
    fn truncated_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        write_array(&path, &[1.0, 2.0, 3.0], &Sidecar::new("v", vec![3], "h", serde_json::Value::Null)).unwrap();
        fs::write(&path, [0u8; 16]).unwrap();
        assert!(matches!(read_array(&path), Err(Error::Input(_))));
    }
}
