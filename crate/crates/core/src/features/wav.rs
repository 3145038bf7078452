use std::path::Path;

use hound::{SampleFormat, WavReader, WavSpec, WavWriter};

use super::AudioClip;
use crate::error::{Error, Result};

/// Reads a PCM WAV file (16-bit integer or 32-bit float), averaging channels to mono.
pub fn load_wav(path: &Path) -> Result<AudioClip> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    // past this point, read failures mean the file content is bad
    let reader = WavReader::new(std::io::BufReader::new(file)).map_err(|e| map_hound(path, e))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::Format(format!("{}: zero channels", path.display())));
    }

    let interleaved: Vec<f64> = match (spec.sample_format, spec.bits_per_sample) {
        (SampleFormat::Int, 16) => reader
            .into_samples::<i16>()
            .map(|s| s.map(|v| v as f64 / 32768.0))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (SampleFormat::Float, 32) => reader
            .into_samples::<f32>()
            .map(|s| s.map(|v| v as f64))
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| map_hound(path, e))?,
        (fmt, bits) => {
            return Err(Error::UnsupportedCodec(format!(
                "{}: {bits}-bit {fmt:?} PCM (expected 16-bit int or 32-bit float)",
                path.display()
            )))
        }
    };

    let mono = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };
    AudioClip::new(mono, spec.sample_rate)
}

/// Writes a mono 16-bit PCM WAV. Samples are clamped to the representable range.
pub fn write_wav_i16(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate(),
        bits_per_sample: 16,
        sample_format: SampleFormat::Int,
    };
    let mut writer = WavWriter::create(path, spec).map_err(|e| write_err(path, e))?;
    for &s in clip.samples() {
        let v = (s * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(v).map_err(|e| write_err(path, e))?;
    }
    writer.finalize().map_err(|e| write_err(path, e))
}

fn write_err(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::io(path, e),
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}

fn map_hound(path: &Path, err: hound::Error) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Format(format!("{}: {e}", path.display())),
        hound::Error::Unsupported => {
            Error::UnsupportedCodec(format!("{}: unsupported WAV encoding", path.display()))
        }
        other => Error::Format(format!("{}: {other}", path.display())),
    }
}
