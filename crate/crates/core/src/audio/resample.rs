//! Band-limited sample-rate conversion.
//!
//! Windowed-sinc interpolation with a 64-tap Kaiser window. When
//! downsampling, the kernel cutoff shrinks to the new Nyquist frequency
//! to suppress aliasing.

use super::AudioClip;

const HALF_TAPS: i64 = 32;
const KAISER_BETA: f64 = 9.0;

/// Resample a clip to `target_rate`. Equal rates return the clip
/// unchanged.
pub fn resample(clip: &AudioClip, target_rate: u32) -> AudioClip {
    if clip.sample_rate == target_rate || clip.samples.is_empty() {
        return AudioClip {
            samples: clip.samples.clone(),
            sample_rate: target_rate,
            source_id: clip.source_id.clone(),
        };
    }

    let in_rate = f64::from(clip.sample_rate);
    let out_rate = f64::from(target_rate);
    let n_in = clip.samples.len();
    let n_out = ((n_in as u64 * u64::from(target_rate) + u64::from(clip.sample_rate) / 2)
        / u64::from(clip.sample_rate)) as usize;

    // Cutoff relative to the input Nyquist; < 1 only when downsampling.
    let cutoff = (out_rate / in_rate).min(1.0);
    let i0_beta = bessel_i0(KAISER_BETA);

    let mut out = Vec::with_capacity(n_out);
    for m in 0..n_out {
        let t = m as f64 * in_rate / out_rate;
        let center = t.floor() as i64;
        let mut acc = 0.0;
        for k in (center - HALF_TAPS + 1)..=(center + HALF_TAPS) {
            if k < 0 || k as usize >= n_in {
                continue;
            }
            let x = t - k as f64;
            acc += clip.samples[k as usize] * cutoff * sinc(cutoff * x) * kaiser(x, i0_beta);
        }
        out.push(acc);
    }

    AudioClip {
        samples: out,
        sample_rate: target_rate,
        source_id: clip.source_id.clone(),
    }
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn kaiser(x: f64, i0_beta: f64) -> f64 {
    let u = x / HALF_TAPS as f64;
    if u.abs() >= 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / i0_beta
}

/// Zeroth-order modified Bessel function of the first kind, by series.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half_x = x / 2.0;
    for k in 1..64 {
        term *= (half_x / k as f64) * (half_x / k as f64);
        sum += term;
        if term < sum * 1e-16 {
            break;
        }
    }
    sum
}
