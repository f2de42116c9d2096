//! Flat binary persistence for feature matrices.
//!
//! Layout: 8-byte magic, u32 LE row count (always 192), u32 LE column
//! count, then column-major 32-bit LE floats.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use super::{FeatureError, FeatureMatrix, N_FEATURES};

const MAGIC: &[u8; 8] = b"AUSFEAT\0";

pub fn write_feature_file(path: impl AsRef<Path>, feat: &FeatureMatrix) -> Result<(), FeatureError> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(MAGIC)?;
    w.write_all(&(feat.values.nrows() as u32).to_le_bytes())?;
    w.write_all(&(feat.values.ncols() as u32).to_le_bytes())?;
    for col in feat.values.columns() {
        for v in col.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_feature_file(path: impl AsRef<Path>) -> Result<FeatureMatrix, FeatureError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());
    let bad = |detail: String| FeatureError::Format {
        path: display.clone(),
        detail,
    };

    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(bad(format!("bad magic {magic:02x?}")));
    }
    let mut dim = [0u8; 4];
    r.read_exact(&mut dim)?;
    let rows = u32::from_le_bytes(dim) as usize;
    r.read_exact(&mut dim)?;
    let cols = u32::from_le_bytes(dim) as usize;
    if rows != N_FEATURES {
        return Err(bad(format!("expected {N_FEATURES} rows, found {rows}")));
    }
    if cols == 0 {
        return Err(bad("zero columns".into()));
    }

    let mut data = vec![0u8; rows * cols * 4];
    r.read_exact(&mut data)?;
    let mut values = Array2::zeros((rows, cols));
    for c in 0..cols {
        for row in 0..rows {
            let off = (c * rows + row) * 4;
            let bits = [data[off], data[off + 1], data[off + 2], data[off + 3]];
            values[[row, c]] = f64::from(f32::from_le_bytes(bits));
        }
    }
    Ok(FeatureMatrix { values, source_id })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_preserves_values_at_f32_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let values = Array2::from_shape_fn((N_FEATURES, 17), |_| rng.random::<f64>() * 6.0 - 3.0);
        let feat = FeatureMatrix {
            values,
            source_id: "roundtrip".into(),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("roundtrip.feat");
        write_feature_file(&path, &feat).unwrap();
        let back = read_feature_file(&path).unwrap();
        assert_eq!(back.source_id, "roundtrip");
        assert_eq!(back.values.dim(), feat.values.dim());
        for (a, b) in back.values.iter().zip(feat.values.iter()) {
            assert_eq!(*a, f64::from(*b as f32));
        }
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feat");
        std::fs::write(&path, b"NOTAFEAT\x01\x00\x00\x00\x01\x00\x00\x00").unwrap();
        assert!(matches!(
            read_feature_file(&path),
            Err(FeatureError::Format { .. })
        ));
    }

    #[test]
    fn wrong_row_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rows.feat");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.extend_from_slice(&64u32.to_le_bytes());
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 64 * 4]);
        std::fs::write(&path, bytes).unwrap();
        assert!(matches!(
            read_feature_file(&path),
            Err(FeatureError::Format { .. })
        ));
    }
}
