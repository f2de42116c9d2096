//! Class-balanced mini-batch sampling.
//!
//! Sampling is file-first with replacement: pick a file uniformly
//! within the class, then a chunk uniformly within the file. The
//! minority class is thereby oversampled to an exact 50/50 batch split.

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::chunks::{chunk_starts, reflect_pad_columns, CHUNK_WIDTH};
use super::TrainError;
use crate::features::FeatureMatrix;

/// One sampled chunk: indices into the pool plus the inherited label.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ChunkDraw {
    /// Index into [`ChunkPool::matrices`].
    pub matrix: usize,
    /// Start frame of the chunk window.
    pub start: usize,
    pub label: u8,
}

struct FileEntry {
    matrix: usize,
    starts: Vec<usize>,
}

/// All chunks of a file set, grouped by class and file.
pub struct ChunkPool {
    /// Feature matrices, reflect-padded where shorter than one chunk.
    pub matrices: Vec<Array2<f64>>,
    pub source_ids: Vec<String>,
    by_class: [Vec<FileEntry>; 2],
}

impl ChunkPool {
    pub fn build(files: &[(&FeatureMatrix, u8)]) -> Self {
        let mut pool = Self {
            matrices: Vec::with_capacity(files.len()),
            source_ids: Vec::with_capacity(files.len()),
            by_class: [Vec::new(), Vec::new()],
        };
        for (feat, label) in files {
            let starts = chunk_starts(feat.n_frames());
            let (matrix, starts) = if starts.is_empty() {
                (reflect_pad_columns(&feat.values, CHUNK_WIDTH), vec![0])
            } else {
                (feat.values.clone(), starts)
            };
            let idx = pool.matrices.len();
            pool.matrices.push(matrix);
            pool.source_ids.push(feat.source_id.clone());
            pool.by_class[*label as usize].push(FileEntry {
                matrix: idx,
                starts,
            });
        }
        pool
    }

    pub fn class_file_counts(&self) -> [usize; 2] {
        [self.by_class[0].len(), self.by_class[1].len()]
    }

    pub fn total_chunks(&self) -> usize {
        self.by_class
            .iter()
            .flatten()
            .map(|f| f.starts.len())
            .sum()
    }

    /// Draw a batch with an exact 50/50 class split (positives first).
    pub fn balanced_batch(
        &self,
        batch_size: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<ChunkDraw>, TrainError> {
        assert!(batch_size >= 2 && batch_size % 2 == 0, "batch size must be even");
        for (label, entries) in self.by_class.iter().enumerate() {
            if entries.is_empty() {
                return Err(TrainError::EmptyClass { label: label as u8 });
            }
        }
        let mut batch = Vec::with_capacity(batch_size);
        for label in [1u8, 0u8] {
            let entries = &self.by_class[label as usize];
            for _ in 0..batch_size / 2 {
                let file = &entries[rng.random_range(0..entries.len())];
                let start = file.starts[rng.random_range(0..file.starts.len())];
                batch.push(ChunkDraw {
                    matrix: file.matrix,
                    start,
                    label,
                });
            }
        }
        Ok(batch)
    }
}
