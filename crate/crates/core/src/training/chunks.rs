//! Fixed-width chunk extraction from feature matrices.
//!
//! Chunks are 192 x 51 slices taken at a 10-frame stride. Files shorter
//! than one chunk are right-padded by reflection so no labeled subject
//! is dropped.

use ndarray::{s, Array2, Array3};

use crate::features::FeatureMatrix;
use crate::model::{forward_batch, ModelError, NetworkParams};

/// Frames per chunk (T).
pub const CHUNK_WIDTH: usize = 51;
/// Frame stride between chunk starts.
pub const CHUNK_STRIDE: usize = 10;
/// Chunks per GEMM call; fixed so runs are bit-reproducible regardless
/// of how large a batch the caller assembles.
pub(crate) const SUB_BATCH: usize = 64;

/// One labeled training chunk.
#[derive(Debug, Clone)]
pub struct Chunk {
    /// Shape (192, 51).
    pub values: Array2<f64>,
    /// COVID = 1, Non-COVID = 0.
    pub label: u8,
    pub source_id: String,
}

/// Start frames of all chunks of an `n_frames`-long file. Empty iff the
/// file needs reflect padding first (n_frames < width).
pub fn chunk_starts(n_frames: usize) -> Vec<usize> {
    if n_frames < CHUNK_WIDTH {
        return Vec::new();
    }
    (0..=(n_frames - CHUNK_WIDTH) / CHUNK_STRIDE)
        .map(|i| i * CHUNK_STRIDE)
        .collect()
}

/// Right-pad a matrix to `target` columns by reflecting about the last
/// frame (a single frame repeats).
pub fn reflect_pad_columns(m: &Array2<f64>, target: usize) -> Array2<f64> {
    let n = m.ncols();
    debug_assert!(n >= 1);
    if n >= target {
        return m.clone();
    }
    let mut out = Array2::zeros((m.nrows(), target));
    out.slice_mut(s![.., ..n]).assign(m);
    for j in n..target {
        let src = reflect_index(j, n);
        let col = m.column(src).to_owned();
        out.column_mut(j).assign(&col);
    }
    out
}

fn reflect_index(j: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let r = j % period;
    if r < n {
        r
    } else {
        period - r
    }
}

/// Spec-level chunk extraction: materialized chunks inheriting the file
/// label.
pub fn make_chunks(feat: &FeatureMatrix, label: u8) -> Vec<Chunk> {
    let starts = chunk_starts(feat.n_frames());
    if starts.is_empty() {
        let padded = reflect_pad_columns(&feat.values, CHUNK_WIDTH);
        return vec![Chunk {
            values: padded,
            label,
            source_id: feat.source_id.clone(),
        }];
    }
    starts
        .iter()
        .map(|&start| Chunk {
            values: feat.values.slice(s![.., start..start + CHUNK_WIDTH]).to_owned(),
            label,
            source_id: feat.source_id.clone(),
        })
        .collect()
}

/// Assemble a (T, B, input) tensor from chunk windows of stored
/// matrices. Each draw is (matrix index, start frame).
pub(crate) fn assemble_batch(
    matrices: &[Array2<f64>],
    draws: &[(usize, usize)],
) -> Array3<f64> {
    let input = matrices[0].nrows();
    let mut x = Array3::zeros((CHUNK_WIDTH, draws.len(), input));
    for (b, &(m, start)) in draws.iter().enumerate() {
        let window = matrices[m].slice(s![.., start..start + CHUNK_WIDTH]);
        for t in 0..CHUNK_WIDTH {
            x.slice_mut(s![t, b, ..]).assign(&window.column(t));
        }
    }
    x
}

/// Inference-mode probabilities for every chunk of one file, in chunk
/// order, processed in fixed-size sub-batches.
pub fn score_chunks(
    params: &NetworkParams,
    values: &Array2<f64>,
) -> Result<Vec<f64>, ModelError> {
    let starts = chunk_starts(values.ncols());
    let (matrix, starts) = if starts.is_empty() {
        (reflect_pad_columns(values, CHUNK_WIDTH), vec![0usize])
    } else {
        (values.clone(), starts)
    };
    let matrices = [matrix];
    let mut probs = Vec::with_capacity(starts.len());
    for group in starts.chunks(SUB_BATCH) {
        let draws: Vec<(usize, usize)> = group.iter().map(|&s| (0, s)).collect();
        let x = assemble_batch(&matrices, &draws);
        let (p, _) = forward_batch(params, x, 0.0, None)?;
        probs.extend(p.iter().copied());
    }
    Ok(probs)
}
