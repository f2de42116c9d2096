//! Synthetic stand-in corpus.
//!
//! Each subject gets one recording per category built from filtered
//! noise bursts and harmonic tones. The positive class differs only by
//! a controlled upward shift of the spectral envelope (band centers and
//! formants), scaled by `separation`: at 0 the classes are identically
//! distributed, at 1 the envelope sits one octave higher.

use std::f64::consts::TAU;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{write_manifest, Category, DatasetError, Label, ManifestEntry};

const SAMPLE_RATE: u32 = 44_100;
const FS: f64 = SAMPLE_RATE as f64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SynthConfig {
    pub n_subjects: usize,
    pub positive_fraction: f64,
    /// Spectral-envelope shift of the positive class, in half-octaves.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_subjects: 100,
            positive_fraction: 0.2,
            separation: 0.3,
            seed: 0,
        }
    }
}

/// Generate audio files plus `manifest.csv` under `out_dir`. Byte
/// deterministic for a given config.
pub fn synth_corpus(cfg: &SynthConfig, out_dir: &Path) -> Result<Vec<ManifestEntry>, DatasetError> {
    if cfg.n_subjects < 10 {
        return Err(DatasetError::InsufficientData(format!(
            "need at least 10 subjects, got {}",
            cfg.n_subjects
        )));
    }
    if !(0.0..1.0).contains(&cfg.positive_fraction) || cfg.positive_fraction <= 0.0 {
        return Err(DatasetError::Synthesis(format!(
            "positive fraction {} outside (0, 1)",
            cfg.positive_fraction
        )));
    }
    std::fs::create_dir_all(out_dir)?;

    let n_positive = ((cfg.n_subjects as f64 * cfg.positive_fraction).round() as usize)
        .clamp(1, cfg.n_subjects - 1);
    let mut order: Vec<usize> = (0..cfg.n_subjects).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(splitmix(cfg.seed ^ 0x4c41_4245)));
    let mut labels = vec![Label::NonCovid; cfg.n_subjects];
    for &i in order.iter().take(n_positive) {
        labels[i] = Label::Covid;
    }

    let mut entries = Vec::with_capacity(cfg.n_subjects * 3);
    for subject in 0..cfg.n_subjects {
        let subject_id = format!("s{subject:04}");
        let label = labels[subject];
        let shift = match label {
            Label::Covid => 2f64.powf(cfg.separation),
            Label::NonCovid => 1.0,
        };
        for (cat_idx, category) in Category::ALL.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(splitmix(
                cfg.seed
                    ^ (subject as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)
                    ^ ((cat_idx as u64 + 1) << 56),
            ));
            let duration = rng.random_range(2.0..6.0);
            let mut samples = match category {
                Category::Breathing => breathing(duration, shift, &mut rng),
                Category::Cough => cough(duration, shift, &mut rng),
                Category::Speech => speech(duration, shift, &mut rng),
            };
            let gain = rng.random_range(0.5..0.9);
            let peak = samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
            for s in samples.iter_mut() {
                *s *= gain / peak;
            }

            let file_id = format!("{subject_id}_{category}");
            let path = out_dir.join(format!("{file_id}.wav"));
            write_wav(&path, &samples)?;
            entries.push(ManifestEntry {
                file_id,
                subject_id: subject_id.clone(),
                category,
                path,
                label: Some(label),
                duration: (duration * 1000.0).round() / 1000.0,
            });
        }
    }
    write_manifest(out_dir.join("manifest.csv"), &entries)?;
    Ok(entries)
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn write_wav(path: &Path, samples: &[f64]) -> Result<(), DatasetError> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| DatasetError::Synthesis(e.to_string()))?;
    for s in samples {
        let v = (s * 32_767.0).round().clamp(-32_768.0, 32_767.0) as i16;
        writer
            .write_sample(v)
            .map_err(|e| DatasetError::Synthesis(e.to_string()))?;
    }
    writer
        .finalize()
        .map_err(|e| DatasetError::Synthesis(e.to_string()))?;
    Ok(())
}

fn base_buffer(duration: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = (duration * FS) as usize;
    // faint broadband floor, far below the activity threshold
    (0..n).map(|_| 0.001 * (rng.random::<f64>() * 2.0 - 1.0)).collect()
}

/// Wide-band noise burst: three resonators staggered around `center`
/// Hz so the energy spans roughly 0.6x to 1.8x the center frequency.
fn noise_burst(out: &mut [f64], center: f64, bandwidth: f64, amp: f64, rng: &mut ChaCha8Rng) {
    let len = out.len();
    let mut stages: Vec<(f64, f64, f64, f64)> = [0.7, 1.0, 1.45]
        .iter()
        .map(|m| {
            let r = (-std::f64::consts::PI * bandwidth / FS).exp();
            let cos_w = (TAU * (center * m).min(0.45 * FS) / FS).cos();
            (r, cos_w, 0.0, 0.0)
        })
        .collect();
    for (i, slot) in out.iter_mut().enumerate() {
        let x = rng.random::<f64>() * 2.0 - 1.0;
        let mut acc = 0.0;
        for (r, cos_w, y1, y2) in stages.iter_mut() {
            let y = x + 2.0 * *r * *cos_w * *y1 - *r * *r * *y2;
            *y2 = *y1;
            *y1 = y;
            acc += y;
        }
        let env = (std::f64::consts::PI * i as f64 / len as f64).sin();
        *slot += amp * 0.03 * acc * env * env;
    }
}

fn breathing(duration: f64, shift: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = base_buffer(duration, rng);
    let n = out.len();
    let mut cursor = (rng.random_range(0.05..0.25) * FS) as usize;
    while cursor < n {
        // inhale glides up, exhale glides down; pauses in between keep
        // the on/off contrast that survives per-file normalization
        for (lo, hi, glide) in [(0.15, 0.26, 0.25), (0.18, 0.30, -0.2)] {
            let len = ((rng.random_range(lo..hi) * FS) as usize).min(n - cursor);
            if len == 0 {
                break;
            }
            let center = shift * rng.random_range(1050.0..1400.0);
            let amp = rng.random_range(0.6..1.0);
            let flutter = rng.random_range(6.0..10.0);
            let phase = rng.random::<f64>() * TAU;
            breath_burst(
                &mut out[cursor..cursor + len],
                center,
                glide,
                amp,
                flutter,
                phase,
                rng,
            );
            cursor += len + (rng.random_range(0.25..0.50) * FS) as usize;
            if cursor >= n {
                break;
            }
        }
        cursor += (rng.random_range(0.10..0.35) * FS) as usize;
    }
    out
}

/// Breath burst: band noise plus a soft harmonic airflow tone whose
/// spectral bump sits at `center`, with amplitude flutter.
fn breath_burst(
    out: &mut [f64],
    center: f64,
    glide: f64,
    amp: f64,
    flutter_hz: f64,
    flutter_phase: f64,
    rng: &mut ChaCha8Rng,
) {
    let len = out.len();
    let mut y1 = 0.0f64;
    let mut y2 = 0.0f64;
    let r = (-std::f64::consts::PI * 420.0 / FS).exp();
    // low-pitched airflow tone shaped by a single envelope bump
    let f0 = rng.random_range(90.0..130.0);
    let n_harmonics = (5200.0 / f0) as usize;
    let harmonics: Vec<(f64, f64, f64)> = (1..=n_harmonics)
        .map(|k| {
            let f = k as f64 * f0;
            let bump = (-((f - center) / (0.22 * center)).powi(2)).exp()
                + 0.8 * (-((f - 1.9 * center) / (0.3 * center)).powi(2)).exp()
                + 0.04;
            (f, bump / (k as f64).sqrt(), rng.random::<f64>() * TAU)
        })
        .collect();
    for (i, slot) in out.iter_mut().enumerate() {
        let progress = i as f64 / len as f64;
        let f = center * (1.0 + glide * progress);
        let cos_w = (TAU * f.min(0.45 * FS) / FS).cos();
        let x = rng.random::<f64>() * 2.0 - 1.0;
        let y = x + 2.0 * r * cos_w * y1 - r * r * y2;
        y2 = y1;
        y1 = y;
        let attack = (i as f64 / (0.02 * FS)).min(1.0);
        let env = attack * (0.5 * std::f64::consts::PI * (1.0 - progress)).sin();
        let tremor = (1.0 + 0.6 * (TAU * flutter_hz * i as f64 / FS + flutter_phase).sin()).max(0.0);
        let t = i as f64 / FS;
        let mut tone = 0.0;
        for (hf, ha, phase) in &harmonics {
            tone += ha * (TAU * hf * t + phase).sin();
        }
        *slot += amp * env * env * tremor * (0.03 * y + 0.16 * tone);
    }
}

fn cough(duration: f64, shift: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = base_buffer(duration, rng);
    let n = out.len();
    let mut cursor = (rng.random_range(0.05..0.3) * FS) as usize;
    while cursor < n {
        let len = ((rng.random_range(0.08..0.16) * FS) as usize).min(n - cursor);
        if len == 0 {
            break;
        }
        let center = shift * rng.random_range(900.0..1400.0);
        let amp = rng.random_range(0.7..1.0);
        let thump = shift * rng.random_range(140.0..200.0);
        let tau = len as f64 / 3.0;
        let phase = rng.random::<f64>() * TAU;
        {
            let burst = &mut out[cursor..cursor + len];
            noise_burst(burst, center, 650.0, amp, rng);
            for (i, slot) in burst.iter_mut().enumerate() {
                let attack = (i as f64 / (0.004 * FS)).min(1.0);
                let decay = (-(i as f64) / tau).exp();
                let tone = (TAU * thump * i as f64 / FS + phase).sin();
                *slot *= attack * (0.3 + 0.7 * decay);
                *slot += amp * attack * 0.35 * tone * (-(i as f64) / (tau * 0.6)).exp();
            }
        }
        cursor += len + (rng.random_range(0.25..0.65) * FS) as usize;
    }
    out
}

fn speech(duration: f64, shift: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut out = base_buffer(duration, rng);
    let n = out.len();
    // formant-like spectral envelope; the class shift moves the bumps
    let f1 = shift * rng.random_range(550.0..680.0);
    let f2 = shift * rng.random_range(1350.0..1650.0);
    let envelope = |f: f64| -> f64 {
        let b1 = (-((f - f1) / 230.0).powi(2)).exp();
        let b2 = 0.7 * (-((f - f2) / 380.0).powi(2)).exp();
        b1 + b2 + 0.06
    };
    let mut cursor = (rng.random_range(0.05..0.2) * FS) as usize;
    while cursor < n {
        let len = ((rng.random_range(0.12..0.22) * FS) as usize).min(n - cursor);
        if len == 0 {
            break;
        }
        let f0 = rng.random_range(115.0..175.0);
        let amp = rng.random_range(0.5..0.9);
        let n_harmonics = (5800.0 / f0) as usize;
        let harmonics: Vec<(f64, f64, f64)> = (1..=n_harmonics)
            .map(|k| {
                let f = k as f64 * f0;
                (f, envelope(f) / (k as f64).sqrt(), rng.random::<f64>() * TAU)
            })
            .collect();
        {
            let segment = &mut out[cursor..cursor + len];
            for (i, slot) in segment.iter_mut().enumerate() {
                let t = i as f64 / FS;
                let env = (std::f64::consts::PI * i as f64 / len as f64).sin();
                let mut acc = 0.0;
                for (f, a, phase) in &harmonics {
                    acc += a * (TAU * f * t + phase).sin();
                }
                *slot += amp * 0.18 * env * env * acc;
            }
        }
        cursor += len + (rng.random_range(0.06..0.16) * FS) as usize;
    }
    out
}
