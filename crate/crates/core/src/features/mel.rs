//! HTK-scale triangular mel filterbank and framed log-mel analysis.

use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::{num_complex::Complex, FftPlanner};

use super::{window_len, AudioClip, FRAME_RATE, LOG_FLOOR, N_MELS};
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Triangular filters over the one-sided spectrum of an `fft_size`-point FFT.
/// No area normalization: every triangle peaks at 1.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    weights: Array2<f64>,
    centers_hz: Vec<f64>,
    sample_rate: u32,
    fft_size: usize,
    f_min: f64,
    f_max: f64,
}

impl MelFilterbank {
    pub fn new(
        sample_rate: u32,
        fft_size: usize,
        n_mels: usize,
        f_min: f64,
        f_max: f64,
    ) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if n_mels == 0 || fft_size < 2 || !(0.0..f_max).contains(&f_min) || f_max > nyquist {
            return Err(Error::Argument(format!(
                "bad filterbank: {n_mels} mels, fft {fft_size}, range {f_min}..{f_max} Hz at {sample_rate} Hz"
            )));
        }
        let n_bins = fft_size / 2 + 1;
        let bin_hz = sample_rate as f64 / fft_size as f64;

        let (m_lo, m_hi) = (hz_to_mel(f_min), hz_to_mel(f_max));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(m_lo + (m_hi - m_lo) * i as f64 / (n_mels + 1) as f64))
            .collect();

        let mut weights = Array2::zeros((n_mels, n_bins));
        for m in 0..n_mels {
            let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
            for k in 0..n_bins {
                let f = k as f64 * bin_hz;
                let w = if f > lo && f <= mid {
                    (f - lo) / (mid - lo)
                } else if f > mid && f < hi {
                    (hi - f) / (hi - mid)
                } else {
                    0.0
                };
                weights[[m, k]] = w;
            }
            if weights.row(m).iter().all(|&w| w <= 0.0) {
                return Err(Error::Argument(format!(
                    "mel filter {m} ({lo:.1}-{hi:.1} Hz) covers no FFT bin; use a larger FFT"
                )));
            }
        }

        Ok(MelFilterbank {
            weights,
            centers_hz: edges[1..=n_mels].to_vec(),
            sample_rate,
            fft_size,
            f_min,
            f_max,
        })
    }

    /// 64 filters from 0 Hz to Nyquist, FFT size the next power of two above
    /// the 40 ms window (2048 at 44.1 kHz).
    pub fn standard(sample_rate: u32) -> Result<Self> {
        let fft = window_len(sample_rate).next_power_of_two();
        Self::new(sample_rate, fft, N_MELS, 0.0, sample_rate as f64 / 2.0)
    }

    pub fn weights(&self) -> &Array2<f64> {
        &self.weights
    }

    pub fn n_mels(&self) -> usize {
        self.weights.nrows()
    }

    pub fn n_fft_bins(&self) -> usize {
        self.weights.ncols()
    }

    pub fn centers_hz(&self) -> &[f64] {
        &self.centers_hz
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn fft_size(&self) -> usize {
        self.fft_size
    }

    pub fn frequency_range(&self) -> (f64, f64) {
        (self.f_min, self.f_max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogMelSpectrogram {
    frames: Array2<f64>,
    frame_rate: f64,
}

impl LogMelSpectrogram {
    pub fn new(frames: Array2<f64>, frame_rate: f64) -> Self {
        LogMelSpectrogram { frames, frame_rate }
    }

    /// T x n_mels
    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }
}

/// One-sided power spectrum |X_k|^2, k = 0..=fft_size/2, of `frame * window`
/// zero-padded to `fft_size`. Unnormalized DFT.
pub fn power_spectrum(frame: &[f64], window: &[f64], fft_size: usize) -> Vec<f64> {
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(fft_size);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    power_spectrum_with(&*fft, frame, window, &mut buf)
}

fn power_spectrum_with(
    fft: &dyn rustfft::Fft<f64>,
    frame: &[f64],
    window: &[f64],
    buf: &mut [Complex<f64>],
) -> Vec<f64> {
    buf.fill(Complex::new(0.0, 0.0));
    for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(window) {
        b.re = x * w;
    }
    fft.process(buf);
    buf[..buf.len() / 2 + 1].iter().map(|c| c.norm_sqr()).collect()
}

/// Non-overlapping 40 ms Hann frames, power spectrum, mel projection, then
/// `ln(max(energy, LOG_FLOOR))`. T = floor(samples / window).
pub fn log_mel_spectrogram(clip: &AudioClip, fb: &MelFilterbank) -> Result<LogMelSpectrogram> {
    if clip.sample_rate() != fb.sample_rate() {
        return Err(Error::Shape(format!(
            "clip at {} Hz but filterbank built for {} Hz",
            clip.sample_rate(),
            fb.sample_rate()
        )));
    }
    let win = window_len(clip.sample_rate());
    if win > fb.fft_size() {
        return Err(Error::Shape(format!(
            "window of {win} samples exceeds FFT size {}",
            fb.fft_size()
        )));
    }
    let n_frames = clip.len() / win;
    if n_frames == 0 {
        return Err(Error::EmptyInput(format!(
            "clip of {} samples is shorter than one {win}-sample window",
            clip.len()
        )));
    }

    let window = hann_window(win);
    let fft = FftPlanner::new().plan_fft_forward(fb.fft_size());
    let mut buf = vec![Complex::new(0.0, 0.0); fb.fft_size()];
    let floor_log = LOG_FLOOR.ln();
    let mut out = Array2::from_elem((n_frames, fb.n_mels()), floor_log);

    for (t, chunk) in clip.samples().chunks_exact(win).enumerate() {
        let power = power_spectrum_with(&*fft, chunk, &window, &mut buf);
        for (m, row) in fb.weights().rows().into_iter().enumerate() {
            let e: f64 = row.iter().zip(&power).map(|(w, p)| w * p).sum();
            out[[t, m]] = e.max(LOG_FLOOR).ln();
        }
    }
    Ok(LogMelSpectrogram::new(out, FRAME_RATE))
}
