//! WAV and FLAC decoding with channel downmix.

use std::fs::File;
use std::io::Read;
use std::path::Path;

use super::{resample, AudioClip, AudioError, TARGET_SAMPLE_RATE};

/// Decode a FLAC or PCM WAV file into a mono clip at 44.1 kHz.
///
/// Multichannel inputs are mean-downmixed before resampling. Sample
/// values stay in native float scale; normalization happens later in
/// the pipeline.
pub fn load_audio(path: impl AsRef<Path>) -> Result<AudioClip, AudioError> {
    let path = path.as_ref();
    let display = path.display().to_string();
    let source_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| display.clone());

    let mut magic = [0u8; 4];
    File::open(path)
        .and_then(|mut f| f.read_exact(&mut magic))
        .map_err(|source| AudioError::Unreadable {
            path: display.clone(),
            source,
        })?;

    let (samples, rate, channels) = match &magic {
        b"RIFF" => decode_wav(path)?,
        b"fLaC" => decode_flac(path)?,
        _ => {
            return Err(AudioError::UnsupportedCodec {
                path: display,
                detail: format!("unrecognized magic bytes {magic:02x?}"),
            })
        }
    };
    if samples.is_empty() || channels == 0 {
        return Err(AudioError::EmptyStream { path: display });
    }

    let mono = downmix(&samples, channels);
    let clip = AudioClip::new(mono, rate, source_id);
    Ok(resample(&clip, TARGET_SAMPLE_RATE))
}

fn decode_wav(path: &Path) -> Result<(Vec<f64>, u32, usize), AudioError> {
    let display = path.display().to_string();
    let mut reader = hound::WavReader::open(path).map_err(|e| AudioError::Decode {
        path: display.clone(),
        detail: e.to_string(),
    })?;
    let spec = reader.spec();
    let samples: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Int => {
            let scale = f64::from(1u32 << (spec.bits_per_sample - 1));
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| f64::from(v) / scale))
                .collect::<Result<_, _>>()
        }
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .map(|s| s.map(f64::from))
            .collect::<Result<_, _>>(),
    }
    .map_err(|e| AudioError::Decode {
        path: display,
        detail: e.to_string(),
    })?;
    Ok((samples, spec.sample_rate, spec.channels as usize))
}

fn decode_flac(path: &Path) -> Result<(Vec<f64>, u32, usize), AudioError> {
    let display = path.display().to_string();
    let mut reader = claxon::FlacReader::open(path).map_err(|e| AudioError::Decode {
        path: display.clone(),
        detail: e.to_string(),
    })?;
    let info = reader.streaminfo();
    let scale = f64::from(1u32 << (info.bits_per_sample - 1));
    // claxon interleaves channels in sample order.
    let samples: Vec<f64> = reader
        .samples()
        .map(|s| s.map(|v| f64::from(v) / scale))
        .collect::<Result<_, _>>()
        .map_err(|e| AudioError::Decode {
            path: display,
            detail: e.to_string(),
        })?;
    Ok((samples, info.sample_rate, info.channels as usize))
}

fn downmix(interleaved: &[f64], channels: usize) -> Vec<f64> {
    if channels == 1 {
        return interleaved.to_vec();
    }
    interleaved
        .chunks(channels)
        .map(|frame| frame.iter().sum::<f64>() / channels as f64)
        .collect()
}
