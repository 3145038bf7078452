//! Speech front end: WAV ingestion, resampling, 64-band log-mel analysis at the
//! video frame rate, and first/second temporal differences.

mod deltas;
mod mel;
mod resample;
mod wav;

pub use deltas::{stack_context, temporal_differences, FeatureSequence};
pub use mel::{
    hann_window, hz_to_mel, log_mel_spectrogram, mel_to_hz, power_spectrum, LogMelSpectrogram,
    MelFilterbank,
};
pub use resample::resample;
pub use wav::{load_wav, write_wav_i16};

use crate::error::{Error, Result};

/// Sample rate every clip is brought to before analysis.
pub const CANONICAL_SAMPLE_RATE: u32 = 44_100;
/// Analysis frames per second; matches the 25 FPS landmark tracks.
pub const FRAME_RATE: f64 = 25.0;
pub const N_MELS: usize = 64;
/// Width of one feature frame: Δ followed by ΔΔ.
pub const FEATURE_DIM: usize = 2 * N_MELS;
/// Floor applied to mel energies before the log.
pub const LOG_FLOOR: f64 = 1e-10;

/// Mono audio with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f64>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Argument("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite {
                name: format!("audio sample {i}"),
            });
        }
        Ok(AudioClip {
            samples,
            sample_rate,
        })
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Samples per analysis window (and hop) at `sample_rate`: 1764 at 44.1 kHz.
pub fn window_len(sample_rate: u32) -> usize {
    (sample_rate as f64 / FRAME_RATE).round() as usize
}

/// Full front end for a canonical-rate clip: log-mel followed by Δ/ΔΔ.
pub fn extract_features(clip: &AudioClip) -> Result<FeatureSequence> {
    let clip = if clip.sample_rate() == CANONICAL_SAMPLE_RATE {
        std::borrow::Cow::Borrowed(clip)
    } else {
        std::borrow::Cow::Owned(resample(clip, CANONICAL_SAMPLE_RATE)?)
    };
    let fb = MelFilterbank::standard(CANONICAL_SAMPLE_RATE)?;
    let spec = log_mel_spectrogram(&clip, &fb)?;
    temporal_differences(&spec)
}
