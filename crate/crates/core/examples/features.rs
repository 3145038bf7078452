//! Extracts the 128-d Δ/ΔΔ log-mel features from a WAV file (or a generated
//! chirp) and prints per-frame summaries.
//!
//! cargo run --example features -- [clip.wav]

use std::f64::consts::PI;

use lark::features::{
    extract_features, load_wav, log_mel_spectrogram, AudioClip, MelFilterbank,
    CANONICAL_SAMPLE_RATE,
};

fn chirp(secs: f64, sr: u32) -> AudioClip {
    let n = (secs * sr as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / sr as f64;
            0.3 * (2.0 * PI * (200.0 * t + 400.0 * t * t)).sin()
        })
        .collect();
    AudioClip::new(samples, sr).unwrap()
}

fn main() -> lark::Result<()> {
    let clip = match std::env::args().nth(1) {
        Some(p) => load_wav(p.as_ref())?,
        None => chirp(2.0, 16_000),
    };
    println!(
        "{:.2} s at {} Hz ({} samples)",
        clip.duration_secs(),
        clip.sample_rate(),
        clip.len()
    );
    let feats = extract_features(&clip)?;
    println!("{} frames x {} dims", feats.num_frames(), feats.dim());

    let resampled = lark::features::resample(&clip, CANONICAL_SAMPLE_RATE)?;
    let spec = log_mel_spectrogram(&resampled, &MelFilterbank::standard(CANONICAL_SAMPLE_RATE)?)?;
    println!("frame  peak band  log energy   |delta|   |delta2|");
    for (t, (mel, f)) in spec
        .frames()
        .rows()
        .into_iter()
        .zip(feats.frames().rows())
        .enumerate()
        .step_by(5)
    {
        let (band, energy) = mel
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |a, (i, &v)| if v > a.1 { (i, v) } else { a });
        let norm = |s: &[f64]| s.iter().map(|v| v * v).sum::<f64>().sqrt();
        let f = f.to_vec();
        println!(
            "{t:5}  {band:9}  {energy:10.3}  {:8.3}  {:8.3}",
            norm(&f[..64]),
            norm(&f[64..])
        );
    }
    Ok(())
}
