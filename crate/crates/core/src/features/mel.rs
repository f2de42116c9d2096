//! Triangular mel filterbank (HTK mel scale).

use ndarray::Array2;

use super::{N_FFT_BINS, N_MELS, WINDOW_SIZE};
use crate::audio::TARGET_SAMPLE_RATE;

/// 64 triangular filters over the 513-bin half spectrum.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// Shape (64, 513), nonnegative.
    pub weights: Array2<f64>,
    /// Filter center frequencies in Hz, strictly increasing.
    pub centers_hz: Vec<f64>,
    pub f_min: f64,
    pub f_max: f64,
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Build the pipeline's filterbank: 64 filters, 1024-point FFT,
/// 44.1 kHz, 0 Hz to Nyquist.
pub fn build_mel_filterbank() -> MelFilterbank {
    build_mel_filterbank_with(N_MELS, WINDOW_SIZE, TARGET_SAMPLE_RATE, 0.0, 22_050.0)
}

pub fn build_mel_filterbank_with(
    n_filters: usize,
    n_fft: usize,
    sample_rate: u32,
    f_min: f64,
    f_max: f64,
) -> MelFilterbank {
    let n_bins = n_fft / 2 + 1;
    debug_assert_eq!(n_bins, N_FFT_BINS);
    let mel_lo = hz_to_mel(f_min);
    let mel_hi = hz_to_mel(f_max);
    // n_filters + 2 edge points; triangle i spans points i-1 .. i+1.
    let edges_hz: Vec<f64> = (0..n_filters + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (n_filters + 1) as f64))
        .collect();

    let bin_hz = f64::from(sample_rate) / n_fft as f64;
    let mut weights = Array2::zeros((n_filters, n_bins));
    for i in 0..n_filters {
        let (left, center, right) = (edges_hz[i], edges_hz[i + 1], edges_hz[i + 2]);
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f <= center {
                (f - left) / (center - left)
            } else {
                (right - f) / (right - center)
            };
            if w > 0.0 {
                weights[[i, k]] = w;
            }
        }
    }

    MelFilterbank {
        weights,
        centers_hz: edges_hz[1..=n_filters].to_vec(),
        f_min,
        f_max,
    }
}
