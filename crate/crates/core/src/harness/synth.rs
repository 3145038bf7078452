//! Deterministic synthetic corpus: tone/noise/silence utterances paired with
//! landmark tracks whose mouth opening follows the audio energy.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::{DatasetManifest, ManifestEntry, Split};
use crate::error::{Error, Result};
use crate::features::{window_len, write_wav_i16, AudioClip, CANONICAL_SAMPLE_RATE, FRAME_RATE};
use crate::geometry::{
    template_face_px, write_landmark_file, LandmarkFile, LandmarkFrame, Point, SimilarityTransform,
};

/// Source video frame size of the synthetic tracks.
pub const VIDEO_WIDTH: f64 = 720.0;
pub const VIDEO_HEIGHT: f64 = 576.0;
/// Frame RMS at which the mouth is fully open.
pub const RMS_FULL_OPEN: f64 = 0.3;
/// Inner-lip opening (canonical pixels) at full energy.
pub const MAX_OPENING_PX: f64 = 40.0;
/// Weight of the current frame in the opening's one-pole smoother.
pub const OPENING_SMOOTHING: f64 = 0.7;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Silence,
    Tone { frequency: f64, amplitude: f64 },
    /// Uniform white noise in `[-amplitude, amplitude]`.
    Noise { amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub utterances: usize,
    pub speakers: usize,
    pub duration_secs: f64,
    /// Split tag written to the manifest for every entry.
    pub split: Split,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            utterances: 8,
            speakers: 4,
            duration_secs: 3.0,
            split: Split::Auto,
        }
    }
}

/// Per-speaker face shape (canonical pixels) and placement in the video frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerStyle {
    pub shape: LandmarkFrame,
    pub placement: SimilarityTransform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthUtterance {
    pub audio: AudioClip,
    pub landmarks: LandmarkFile,
    /// Mouth opening per frame in canonical pixels, before placement.
    pub opening_px: Vec<f64>,
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

pub fn speaker_style(seed: u64, speaker: usize) -> SpeakerStyle {
    let mut rng = rng_for(seed, 1 << 32 | speaker as u64);
    let stretch = rng.random_range(0.9..1.1);
    let shape = template_face_px().map(|p| {
        Point::new(
            300.0 + stretch * (p.x - 300.0) + rng.random_range(-3.0..3.0),
            p.y + rng.random_range(-3.0..3.0),
        )
    });
    let scale = rng.random_range(0.7..1.0);
    let rotation = rng.random_range(-0.08..0.08);
    let centre = Point::new(
        VIDEO_WIDTH / 2.0 + rng.random_range(-30.0..30.0),
        VIDEO_HEIGHT / 2.0 + rng.random_range(-30.0..30.0),
    );
    let linear = SimilarityTransform {
        rotation,
        scale,
        translation: Point::default(),
    };
    let placement = SimilarityTransform {
        translation: centre - linear.apply_linear(Point::new(300.0, 300.0)),
        ..linear
    };
    SpeakerStyle { shape, placement }
}

/// Random segment plan covering `n_samples`: a short silent lead-in, then
/// 0.2-0.8 s pieces of silence, tones and noise.
pub fn random_segments(rng: &mut ChaCha8Rng, n_samples: usize) -> Vec<(Segment, usize)> {
    let sr = CANONICAL_SAMPLE_RATE as f64;
    let lead = ((rng.random_range(0.1..0.3) * sr) as usize).min(n_samples);
    let mut plan = vec![(Segment::Silence, lead)];
    let mut used = lead;
    while used < n_samples {
        let len = ((rng.random_range(0.2..0.8) * sr) as usize).min(n_samples - used);
        let seg = match rng.random_range(0..3) {
            0 => Segment::Silence,
            1 => Segment::Tone {
                frequency: rng.random_range(120.0..1500.0),
                amplitude: rng.random_range(0.1..0.6),
            },
            _ => Segment::Noise {
                amplitude: rng.random_range(0.1..0.6),
            },
        };
        plan.push((seg, len));
        used += len;
    }
    plan
}

pub fn render_segments(plan: &[(Segment, usize)], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = CANONICAL_SAMPLE_RATE as f64;
    let mut out = Vec::with_capacity(plan.iter().map(|(_, n)| n).sum());
    for &(seg, n) in plan {
        match seg {
            Segment::Silence => out.extend(std::iter::repeat_n(0.0, n)),
            Segment::Tone {
                frequency,
                amplitude,
            } => out.extend((0..n).map(|k| {
                amplitude * (2.0 * std::f64::consts::PI * frequency * k as f64 / sr).sin()
            })),
            Segment::Noise { amplitude } => {
                out.extend((0..n).map(|_| rng.random_range(-amplitude..=amplitude)))
            }
        }
    }
    out
}

/// RMS of each complete 40 ms frame.
pub fn frame_rms(samples: &[f64], frame_len: usize) -> Vec<f64> {
    samples
        .chunks_exact(frame_len)
        .map(|c| (c.iter().map(|s| s * s).sum::<f64>() / frame_len as f64).sqrt())
        .collect()
}

/// `o_t = a g(rms_t) + (1 - a) o_{t-1}` with `g` linear up to full opening.
pub fn mouth_opening(rms: &[f64]) -> Vec<f64> {
    let mut prev = 0.0;
    rms.iter()
        .map(|&r| {
            let target = MAX_OPENING_PX * (r / RMS_FULL_OPEN).min(1.0);
            prev = OPENING_SMOOTHING * target + (1.0 - OPENING_SMOOTHING) * prev;
            prev
        })
        .collect()
}

/// Opens the mouth of a canonical-pixel face by `opening` pixels: the lower
/// lip and jaw drop, the upper lip lifts slightly, the corners follow.
pub fn open_mouth(face: &LandmarkFrame, opening: f64) -> LandmarkFrame {
    let mut pts = *face.points();
    let shift = |p: &mut Point, dy: f64| p.y += dy;
    for i in [49, 50, 51, 52, 53, 61, 62, 63] {
        shift(&mut pts[i], -0.15 * opening);
    }
    for i in [55, 56, 57, 58, 59, 65, 66, 67] {
        shift(&mut pts[i], 0.85 * opening);
    }
    for i in [48, 54, 60, 64] {
        shift(&mut pts[i], 0.35 * opening);
        pts[i].x += 0.05 * opening * (300.0 - pts[i].x).signum();
    }
    for (k, p) in pts.iter_mut().enumerate().take(13).skip(4) {
        let w = 1.0 - (k as f64 - 8.0).abs() / 5.0;
        shift(p, 0.6 * w * opening);
    }
    LandmarkFrame::new(pts).expect("finite points")
}

pub fn synthesize_utterance(
    plan: &[(Segment, usize)],
    style: &SpeakerStyle,
    rng: &mut ChaCha8Rng,
) -> Result<SynthUtterance> {
    let samples = render_segments(plan, rng);
    let rms = frame_rms(&samples, window_len(CANONICAL_SAMPLE_RATE));
    if rms.is_empty() {
        return Err(Error::Argument("synthetic utterance shorter than one frame".into()));
    }
    let opening_px = mouth_opening(&rms);
    let frames = opening_px
        .iter()
        .map(|&o| style.placement.apply(&open_mouth(&style.shape, o)))
        .collect();
    Ok(SynthUtterance {
        audio: AudioClip::new(samples, CANONICAL_SAMPLE_RATE)?,
        landmarks: LandmarkFile {
            width: VIDEO_WIDTH,
            height: VIDEO_HEIGHT,
            fps: FRAME_RATE,
            mean_face: false,
            frames,
        },
        opening_px,
    })
}

/// Writes `utt_NNN.wav`, `utt_NNN.txt` and `manifest.tsv` into `dir`.
pub fn generate_synthetic_dataset(dir: &Path, config: &SynthConfig) -> Result<DatasetManifest> {
    if config.utterances == 0 || config.speakers == 0 {
        return Err(Error::Argument("need at least one utterance and one speaker".into()));
    }
    if !(config.duration_secs > 0.0 && config.duration_secs.is_finite()) {
        return Err(Error::Argument(format!("bad duration {}", config.duration_secs)));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let n_samples = (config.duration_secs * CANONICAL_SAMPLE_RATE as f64).round() as usize;
    let styles: Vec<SpeakerStyle> = (0..config.speakers)
        .map(|s| speaker_style(config.seed, s))
        .collect();
    let mut manifest = DatasetManifest::default();
    for i in 0..config.utterances {
        let mut rng = rng_for(config.seed, i as u64);
        let plan = random_segments(&mut rng, n_samples);
        let speaker = i % config.speakers;
        let utt = synthesize_utterance(&plan, &styles[speaker], &mut rng)?;
        let audio = dir.join(format!("utt_{i:03}.wav"));
        let landmarks = dir.join(format!("utt_{i:03}.txt"));
        write_wav_i16(&audio, &utt.audio)?;
        write_landmark_file(&landmarks, &utt.landmarks)?;
        manifest.entries.push(ManifestEntry {
            audio,
            landmarks,
            speaker: format!("spk{speaker}"),
            split: config.split,
        });
    }
    manifest.write(&dir.join("manifest.tsv"))?;
    Ok(manifest)
}
