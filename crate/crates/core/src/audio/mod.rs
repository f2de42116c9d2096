//! Audio pre-processing: decoding, resampling, peak normalization and
//! low-activity trimming.
//!
//! The pipeline order is normalize -> trim. Activity detection compares
//! the absolute sample value against the threshold since audio is
//! bipolar.

mod io;
mod resample;

pub use io::load_audio;
pub use resample::resample;

use thiserror::Error;

/// Target sample rate for the whole pipeline.
pub const TARGET_SAMPLE_RATE: u32 = 44_100;
/// Activity-detection amplitude threshold.
pub const ACTIVITY_THRESHOLD: f64 = 0.01;
/// Buffer kept on either side of an active sample, in seconds.
pub const ACTIVITY_BUFFER_SECS: f64 = 0.050;

#[derive(Debug, Error)]
pub enum AudioError {
    #[error("cannot read '{path}': {source}")]
    Unreadable {
        path: String,
        source: std::io::Error,
    },
    #[error("unsupported codec in '{path}': {detail}")]
    UnsupportedCodec { path: String, detail: String },
    #[error("decode failure in '{path}': {detail}")]
    Decode { path: String, detail: String },
    #[error("zero-length audio stream in '{path}'")]
    EmptyStream { path: String },
    /// All samples are exactly zero; peak normalization is undefined.
    #[error("degenerate audio '{source_id}': all samples are zero")]
    DegenerateAudio { source_id: String },
    /// No sample exceeds the activity threshold.
    #[error("silent audio '{source_id}': no sample above threshold {threshold}")]
    SilentAudio { source_id: String, threshold: f64 },
    #[error("invalid trim parameters: {0}")]
    InvalidTrimParams(String),
}

/// Decoded mono waveform with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
    pub source_id: String,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32, source_id: impl Into<String>) -> Self {
        Self {
            samples,
            sample_rate,
            source_id: source_id.into(),
        }
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

/// Scale samples so the largest absolute value is exactly 1.
pub fn normalize(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    let peak = clip.peak();
    if peak == 0.0 {
        return Err(AudioError::DegenerateAudio {
            source_id: clip.source_id.clone(),
        });
    }
    let samples = clip.samples.iter().map(|s| s / peak).collect();
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    })
}

/// Drop regions that are nowhere near an above-threshold sample.
///
/// A sample at index `i` is retained iff some sample `j` with
/// `|samples[j]| > threshold` exists within `buffer_secs * sample_rate`
/// samples of `i`. Retained regions are concatenated in order.
pub fn trim_low_activity(
    clip: &AudioClip,
    threshold: f64,
    buffer_secs: f64,
) -> Result<AudioClip, AudioError> {
    if !(0.0 < threshold && threshold < 1.0) {
        return Err(AudioError::InvalidTrimParams(format!(
            "threshold {threshold} outside (0,1)"
        )));
    }
    if buffer_secs < 0.0 {
        return Err(AudioError::InvalidTrimParams(format!(
            "negative buffer {buffer_secs}"
        )));
    }
    let buffer = (buffer_secs * clip.sample_rate as f64).round() as usize;
    let n = clip.samples.len();

    // Merge [a - buffer, a + buffer] windows around active samples.
    let mut regions: Vec<(usize, usize)> = Vec::new();
    for (i, s) in clip.samples.iter().enumerate() {
        if s.abs() > threshold {
            let lo = i.saturating_sub(buffer);
            let hi = (i + buffer).min(n.saturating_sub(1));
            match regions.last_mut() {
                Some((_, end)) if lo <= *end + 1 => *end = hi,
                _ => regions.push((lo, hi)),
            }
        }
    }
    if regions.is_empty() {
        return Err(AudioError::SilentAudio {
            source_id: clip.source_id.clone(),
            threshold,
        });
    }

    let mut samples = Vec::new();
    for (lo, hi) in regions {
        samples.extend_from_slice(&clip.samples[lo..=hi]);
    }
    Ok(AudioClip {
        samples,
        sample_rate: clip.sample_rate,
        source_id: clip.source_id.clone(),
    })
}

/// normalize -> trim with the pipeline's default parameters.
pub fn preprocess(clip: &AudioClip) -> Result<AudioClip, AudioError> {
    let normalized = normalize(clip)?;
    trim_low_activity(&normalized, ACTIVITY_THRESHOLD, ACTIVITY_BUFFER_SECS)
}
