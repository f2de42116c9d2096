//! Log-mel + delta feature extraction.
//!
//! A pre-processed clip becomes a 192 x N_k matrix: 64 log-mel rows,
//! 64 first-order delta rows and 64 second-order delta rows, each row
//! file-level mean-variance normalized.

mod delta;
mod io;
mod mel;
mod stft;

pub use delta::append_deltas;
pub use io::{read_feature_file, write_feature_file};
pub use mel::{build_mel_filterbank, MelFilterbank};
pub use stft::stft_power;

use ndarray::Array2;
use thiserror::Error;

use crate::audio::AudioClip;

/// STFT analysis window in samples (23.2 ms at 44.1 kHz).
pub const WINDOW_SIZE: usize = 1024;
/// STFT hop in samples (10 ms at 44.1 kHz).
pub const HOP_SIZE: usize = 441;
/// Number of mel filters.
pub const N_MELS: usize = 64;
/// One-sided spectrum size for a 1024-point FFT.
pub const N_FFT_BINS: usize = WINDOW_SIZE / 2 + 1;
/// Total feature rows: log-mel + delta + delta-delta.
pub const N_FEATURES: usize = 3 * N_MELS;
/// Additive floor inside the log to avoid -inf on silent frames.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("clip '{source_id}' has {len} samples, shorter than one {window}-sample window")]
    TooShort {
        source_id: String,
        len: usize,
        window: usize,
    },
    #[error("feature file i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad feature file '{path}': {detail}")]
    Format { path: String, detail: String },
}

/// Normalized 192 x N_k feature matrix for one recording.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    /// Shape (192, N_k).
    pub values: Array2<f64>,
    pub source_id: String,
}

impl FeatureMatrix {
    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }
}

/// Number of full analysis frames for a clip of `len` samples.
pub fn n_frames_for_len(len: usize) -> usize {
    if len < WINDOW_SIZE {
        0
    } else {
        (len - WINDOW_SIZE) / HOP_SIZE + 1
    }
}

/// ln(mel_weights . power + floor)
pub fn log_mel(power: &Array2<f64>, fb: &MelFilterbank) -> Array2<f64> {
    let mut mel = fb.weights.dot(power);
    mel.mapv_inplace(|v| (v + LOG_FLOOR).ln());
    mel
}

/// Row-wise standardization to mean 0, variance 1. Rows with variance
/// below 1e-12 become all-zero.
pub fn mvn_normalize(feat: &Array2<f64>, source_id: impl Into<String>) -> FeatureMatrix {
    let n = feat.ncols() as f64;
    let mut values = feat.clone();
    for mut row in values.rows_mut() {
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        if var < 1e-12 {
            row.fill(0.0);
        } else {
            let std = var.sqrt();
            row.mapv_inplace(|v| (v - mean) / std);
        }
    }
    FeatureMatrix {
        values,
        source_id: source_id.into(),
    }
}

/// Full extraction stage: STFT power -> log-mel -> deltas -> MVN.
pub fn extract_features(clip: &AudioClip, fb: &MelFilterbank) -> Result<FeatureMatrix, FeatureError> {
    let power = stft_power(clip)?;
    let mel = log_mel(&power, fb);
    let with_deltas = append_deltas(&mel);
    Ok(mvn_normalize(&with_deltas, clip.source_id.clone()))
}
