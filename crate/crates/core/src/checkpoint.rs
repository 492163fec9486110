//! Binary container for named model tensors.
//!
//! Checkpoints are flat archives of `(name, matrix)` entries in a fixed byte
//! layout, so retraining with the same seed reproduces a checkpoint file
//! byte for byte:
//!
//! ```text
//! magic   4 bytes  b"M2SC"
//! version u32 LE
//! count   u32 LE                      number of tensors
//! entry*  name_len u32 LE
//!         name     UTF-8 bytes
//!         rows     u32 LE
//!         cols     u32 LE
//!         data     rows*cols f64 LE   row-major
//! ```
//!
//! Values are stored at the f64 precision the trainer computes in; converting
//! to a narrower width would make a reloaded model diverge from the in-memory
//! one. Entries are written in the order the model lists them, and
//! [`TensorMap`] enforces on load that a model consumes exactly the entries
//! present — a stale or foreign file fails loudly instead of half-loading.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::numerics::Mat;

/// First four bytes of every checkpoint file.
pub const CHECKPOINT_MAGIC: [u8; 4] = *b"M2SC";
/// Current layout version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Failure while writing or reading a checkpoint.
#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("checkpoint io failed for {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} is not a checkpoint: expected magic {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },
    #[error("{path} uses unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("{path} is truncated: {context}")]
    Truncated { path: PathBuf, context: String },
    #[error("tensor name in {path} is not valid UTF-8")]
    NameNotUtf8 { path: PathBuf },
    #[error("duplicate tensor {name} in {path}")]
    DuplicateTensor { path: PathBuf, name: String },
    #[error("checkpoint is missing tensor {name}")]
    MissingTensor { name: String },
    #[error("checkpoint contains unexpected tensors: {names:?}")]
    UnexpectedTensors { names: Vec<String> },
    #[error("tensor {name} has shape {found_rows}x{found_cols}, expected {rows}x{cols}")]
    ShapeMismatch {
        name: String,
        rows: usize,
        cols: usize,
        found_rows: usize,
        found_cols: usize,
    },
}

/// Writes `tensors` to `path` in listing order.
pub fn write_checkpoint(path: &Path, tensors: &[(&str, &Mat)]) -> Result<(), CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut buf = Vec::new();
    buf.extend_from_slice(&CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for (name, mat) in tensors {
        buf.extend_from_slice(&(name.len() as u32).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(mat.nrows() as u32).to_le_bytes());
        buf.extend_from_slice(&(mat.ncols() as u32).to_le_bytes());
        for &x in mat.iter() {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(io_err)?;
    file.write_all(&buf).map_err(io_err)?;
    Ok(())
}

/// Reads every tensor in `path`, preserving file order.
pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Mat)>, CheckpointError> {
    let io_err = |source| CheckpointError::Io { path: path.to_path_buf(), source };
    let mut bytes = Vec::new();
    fs::File::open(path).map_err(io_err)?.read_to_end(&mut bytes).map_err(io_err)?;
    let mut at = 0usize;
    let take = |at: &mut usize, n: usize, context: &str| -> Result<usize, CheckpointError> {
        let start = *at;
        if start + n > bytes.len() {
            return Err(CheckpointError::Truncated {
                path: path.to_path_buf(),
                context: format!("{context} needs {n} bytes at offset {start}, file has {}", bytes.len()),
            });
        }
        *at += n;
        Ok(start)
    };
    let read_u32 = |at: &mut usize, context: &str| -> Result<u32, CheckpointError> {
        let start = take(at, 4, context)?;
        Ok(u32::from_le_bytes(bytes[start..start + 4].try_into().expect("4 bytes")))
    };

    let start = take(&mut at, 4, "magic")?;
    let found: [u8; 4] = bytes[start..start + 4].try_into().expect("4 bytes");
    if found != CHECKPOINT_MAGIC {
        return Err(CheckpointError::BadMagic { path: path.to_path_buf(), expected: CHECKPOINT_MAGIC, found });
    }
    let version = read_u32(&mut at, "version")?;
    if version != CHECKPOINT_VERSION {
        return Err(CheckpointError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version,
            supported: CHECKPOINT_VERSION,
        });
    }
    let count = read_u32(&mut at, "tensor count")? as usize;
    let mut out = Vec::with_capacity(count);
    let mut seen = BTreeMap::new();
    for i in 0..count {
        let name_len = read_u32(&mut at, "name length")? as usize;
        let start = take(&mut at, name_len, "tensor name")?;
        let name = std::str::from_utf8(&bytes[start..start + name_len])
            .map_err(|_| CheckpointError::NameNotUtf8 { path: path.to_path_buf() })?
            .to_string();
        if seen.insert(name.clone(), i).is_some() {
            return Err(CheckpointError::DuplicateTensor { path: path.to_path_buf(), name });
        }
        let rows = read_u32(&mut at, "rows")? as usize;
        let cols = read_u32(&mut at, "cols")? as usize;
        let start = take(&mut at, rows * cols * 8, &format!("data of {name}"))?;
        let data: Vec<f64> = bytes[start..start + rows * cols * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let mat = Mat::from_shape_vec((rows, cols), data).expect("length matches rows*cols");
        out.push((name, mat));
    }
    Ok(out)
}

/// Loaded checkpoint contents with consumption tracking.
///
/// Models rebuild themselves by [`take`](Self::take)-ing each tensor they
/// own (shape-checked), then call [`finish`](Self::finish) so leftovers —
/// evidence the file belongs to a different model — become an error.
#[derive(Debug)]
pub struct TensorMap {
    entries: BTreeMap<String, Mat>,
}

impl TensorMap {
    /// Loads `path` into a consumable map.
    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let entries = read_checkpoint(path)?.into_iter().collect();
        Ok(Self { entries })
    }

    /// Builds a map from in-memory entries (for tests and round-trips).
    pub fn from_entries(entries: Vec<(String, Mat)>) -> Self {
        Self { entries: entries.into_iter().collect() }
    }

    /// Removes and returns `name`, requiring shape `rows x cols`.
    ///
    /// A failed take leaves the map unchanged.
    pub fn take(&mut self, name: &str, rows: usize, cols: usize) -> Result<Mat, CheckpointError> {
        let mat = self
            .entries
            .get(name)
            .ok_or_else(|| CheckpointError::MissingTensor { name: name.to_string() })?;
        if mat.nrows() != rows || mat.ncols() != cols {
            return Err(CheckpointError::ShapeMismatch {
                name: name.to_string(),
                rows,
                cols,
                found_rows: mat.nrows(),
                found_cols: mat.ncols(),
            });
        }
        Ok(self.entries.remove(name).expect("presence checked above"))
    }

    /// Succeeds only when every entry has been taken.
    pub fn finish(self) -> Result<(), CheckpointError> {
        if self.entries.is_empty() {
            Ok(())
        } else {
            Err(CheckpointError::UnexpectedTensors { names: self.entries.into_keys().collect() })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<(String, Mat)> {
        vec![
            ("w".to_string(), Mat::from_shape_fn((2, 3), |(i, j)| (i * 3 + j) as f64 / 7.0)),
            ("b".to_string(), Mat::from_shape_fn((1, 3), |(_, j)| -(j as f64))),
        ]
    }

    #[test]
    fn round_trip_preserves_order_names_and_bits() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("model.ckpt");
        let tensors = sample();
        let refs: Vec<(&str, &Mat)> = tensors.iter().map(|(n, m)| (n.as_str(), m)).collect();
        write_checkpoint(&path, &refs).expect("write");
        let back = read_checkpoint(&path).expect("read");
        assert_eq!(back.len(), 2);
        for ((n0, m0), (n1, m1)) in tensors.iter().zip(&back) {
            assert_eq!(n0, n1);
            assert_eq!(m0, m1);
        }
    }

    #[test]
    fn header_layout_is_pinned() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("one.ckpt");
        let m = Mat::from_shape_vec((1, 2), vec![1.0, -2.5]).expect("shape");
        write_checkpoint(&path, &[("t", &m)]).expect("write");
        let bytes = fs::read(&path).expect("read bytes");
        assert_eq!(&bytes[0..4], b"M2SC");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1); // version
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 1); // count
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 1); // name_len
        assert_eq!(&bytes[16..17], b"t");
        assert_eq!(u32::from_le_bytes(bytes[17..21].try_into().unwrap()), 1); // rows
        assert_eq!(u32::from_le_bytes(bytes[21..25].try_into().unwrap()), 2); // cols
        assert_eq!(f64::from_le_bytes(bytes[25..33].try_into().unwrap()), 1.0);
        assert_eq!(f64::from_le_bytes(bytes[33..41].try_into().unwrap()), -2.5);
        assert_eq!(bytes.len(), 41);
    }

    #[test]
    fn bad_magic_and_version_are_rejected() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("bad.ckpt");
        fs::write(&path, b"NOPE\x01\x00\x00\x00\x00\x00\x00\x00").expect("write");
        assert!(matches!(read_checkpoint(&path), Err(CheckpointError::BadMagic { .. })));
        let mut ok = CHECKPOINT_MAGIC.to_vec();
        ok.extend_from_slice(&9u32.to_le_bytes());
        ok.extend_from_slice(&0u32.to_le_bytes());
        fs::write(&path, &ok).expect("write");
        assert!(matches!(
            read_checkpoint(&path),
            Err(CheckpointError::UnsupportedVersion { found: 9, .. })
        ));
    }

    #[test]
    fn truncation_is_detected_with_context() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("cut.ckpt");
        let m = Mat::from_shape_vec((2, 2), vec![1.0, 2.0, 3.0, 4.0]).expect("shape");
        write_checkpoint(&path, &[("weights", &m)]).expect("write");
        let bytes = fs::read(&path).expect("read");
        fs::write(&path, &bytes[..bytes.len() - 5]).expect("truncate");
        match read_checkpoint(&path) {
            Err(CheckpointError::Truncated { context, .. }) => {
                assert!(context.contains("weights"), "context should name the tensor: {context}");
            }
            other => panic!("expected truncation error, got {other:?}"),
        }
    }

    #[test]
    fn tensor_map_flags_missing_shape_and_leftovers() {
        let mut map = TensorMap::from_entries(sample());
        assert!(matches!(
            map.take("nope", 1, 1),
            Err(CheckpointError::MissingTensor { name }) if name == "nope"
        ));
        assert!(matches!(
            map.take("w", 3, 2),
            Err(CheckpointError::ShapeMismatch { found_rows: 2, found_cols: 3, .. })
        ));
        let _ = map.take("w", 2, 3).expect("w");
        assert!(matches!(
            map.finish(),
            Err(CheckpointError::UnexpectedTensors { names }) if names == vec!["b".to_string()]
        ));

        let mut map = TensorMap::from_entries(sample());
        let _ = map.take("w", 2, 3).expect("w");
        let _ = map.take("b", 1, 3).expect("b");
        map.finish().expect("all consumed");
    }

    #[test]
    fn duplicate_tensor_names_are_rejected() {
        let dir = tempfile::tempdir().expect("tempdir");
        let path = dir.path().join("dup.ckpt");
        let m = Mat::zeros((1, 1));
        write_checkpoint(&path, &[("t", &m), ("t", &m)]).expect("write");
        assert!(matches!(
            read_checkpoint(&path),
            Err(CheckpointError::DuplicateTensor { name, .. }) if name == "t"
        ));
    }
}
