//! Short-time power spectrum.

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{FeatureError, HOP_SIZE, N_FFT_BINS, WINDOW_SIZE};
use crate::audio::AudioClip;

/// Squared-magnitude half spectra of Hann-windowed segments.
///
/// Returns a (513, N_k) matrix with N_k = floor((len - 1024)/441) + 1.
/// Partial trailing windows are dropped.
pub fn stft_power(clip: &AudioClip) -> Result<Array2<f64>, FeatureError> {
    let len = clip.samples.len();
    if len < WINDOW_SIZE {
        return Err(FeatureError::TooShort {
            source_id: clip.source_id.clone(),
            len,
            window: WINDOW_SIZE,
        });
    }
    let n_frames = (len - WINDOW_SIZE) / HOP_SIZE + 1;
    let window = hann_window(WINDOW_SIZE);

    let fft = FftPlanner::<f64>::new().plan_fft_forward(WINDOW_SIZE);
    let mut power = Array2::zeros((N_FFT_BINS, n_frames));
    let mut buf = vec![Complex::new(0.0, 0.0); WINDOW_SIZE];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];

    for frame in 0..n_frames {
        let start = frame * HOP_SIZE;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(clip.samples[start + i] * window[i], 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for k in 0..N_FFT_BINS {
            power[[k, frame]] = buf[k].norm_sqr();
        }
    }
    Ok(power)
}

fn hann_window(size: usize) -> Vec<f64> {
    (0..size)
        .map(|n| 0.5 * (1.0 - (std::f64::consts::TAU * n as f64 / size as f64).cos()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::audio::AudioClip;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rustfft::num_complex::Complex;

    fn clip(samples: Vec<f64>) -> AudioClip {
        AudioClip::new(samples, 44_100, "t")
    }

    /// Naive O(n^2) DFT of one windowed frame.
    fn direct_dft_power(frame: &[f64]) -> Vec<f64> {
        let window = hann_window(frame.len());
        let n = frame.len();
        (0..n / 2 + 1)
            .map(|k| {
                let mut acc = Complex::new(0.0, 0.0);
                for (i, s) in frame.iter().enumerate() {
                    let phase = -std::f64::consts::TAU * k as f64 * i as f64 / n as f64;
                    acc += Complex::from_polar(s * window[i], phase);
                }
                acc.norm_sqr()
            })
            .collect()
    }

    #[test]
    fn zero_signal_gives_zero_power() {
        let out = stft_power(&clip(vec![0.0; 2048])).unwrap();
        assert_eq!(out.shape(), &[513, 3]);
        assert!(out.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn constant_signal_matches_the_hann_window_transform() {
        // The periodic Hann window has exactly three DFT lines:
        // N/2 at bin 0 and -N/4 at bins +-1. A constant input therefore
        // puts (sum hann)^2 at DC, a quarter of that at bin 1, and
        // nothing anywhere else.
        let out = stft_power(&clip(vec![1.0; WINDOW_SIZE])).unwrap();
        let window_sum: f64 = hann_window(WINDOW_SIZE).iter().sum();
        let dc = out[[0, 0]];
        assert!((dc - window_sum * window_sum).abs() / dc < 1e-10);
        assert!((out[[1, 0]] - dc / 4.0).abs() / dc < 1e-10);
        for k in 2..N_FFT_BINS {
            assert!(out[[k, 0]] <= 1e-6 * dc, "bin {k} leaks {}", out[[k, 0]]);
        }
        // direct DFT of the window confirms the closed form
        let oracle = direct_dft_power(&vec![1.0; WINDOW_SIZE]);
        assert!((oracle[0] - dc).abs() / dc < 1e-9);
        assert!((oracle[1] - dc / 4.0).abs() / dc < 1e-9);
    }

    #[test]
    fn pure_tone_peaks_at_its_bin_in_every_frame() {
        // bin 100 * 44100 / 1024 = 4306.64 Hz
        let freq = 100.0 * 44_100.0 / 1024.0;
        let samples: Vec<f64> = (0..44_100)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / 44_100.0).sin())
            .collect();
        let out = stft_power(&clip(samples)).unwrap();
        for (t, col) in out.columns().into_iter().enumerate() {
            let argmax = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, 100, "frame {t}");
        }
    }

    #[test]
    fn matches_direct_dft_on_random_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let samples: Vec<f64> = (0..WINDOW_SIZE).map(|_| rng.random::<f64>() - 0.5).collect();
        let out = stft_power(&clip(samples.clone())).unwrap();
        let expect = direct_dft_power(&samples);
        for k in 0..N_FFT_BINS {
            let scale = expect[k].abs().max(1.0);
            assert!(
                (out[[k, 0]] - expect[k]).abs() / scale < 1e-9,
                "bin {k}: {} vs {}",
                out[[k, 0]],
                expect[k]
            );
        }
    }

    #[test]
    fn frame_count_follows_the_hop_formula() {
        for len in [1024usize, 1464, 1465, 1906, 10_000] {
            let out = stft_power(&clip(vec![0.1; len])).unwrap();
            assert_eq!(out.ncols(), (len - 1024) / 441 + 1, "len {len}");
        }
    }

    #[test]
    fn sub_window_clip_errors() {
        assert!(matches!(
            stft_power(&clip(vec![0.1; 1023])),
            Err(FeatureError::TooShort { .. })
        ));
    }
}
