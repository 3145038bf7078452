//! Windowed-sinc polyphase resampler.
//!
//! The low-pass cutoff sits at 95% of the lower of the two Nyquist frequencies,
//! with 16 zero crossings per side under a Kaiser window (beta 8). Each phase is
//! normalized to unit DC gain.

use std::f64::consts::PI;

use super::AudioClip;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: f64 = 16.0;
const CUTOFF: f64 = 0.95;
const KAISER_BETA: f64 = 8.0;
const MAX_PHASES: u64 = 4096;

pub fn resample(clip: &AudioClip, target_rate: u32) -> Result<AudioClip> {
    if target_rate == 0 {
        return Err(Error::Argument("target sample rate must be positive".into()));
    }
    let src_rate = clip.sample_rate();
    if src_rate == target_rate {
        return Ok(clip.clone());
    }

    let g = gcd(src_rate as u64, target_rate as u64);
    let up = target_rate as u64 / g;
    let down = src_rate as u64 / g;
    let n_in = clip.len();
    let n_out = ((n_in as u128 * target_rate as u128) / src_rate as u128) as usize;

    // cutoff as a fraction of the input Nyquist
    let fc = CUTOFF * (target_rate as f64 / src_rate as f64).min(1.0);
    let half = (ZERO_CROSSINGS / fc).ceil() as i64;
    let phases = up.min(MAX_PHASES);
    let table: Vec<Vec<f64>> = (0..phases)
        .map(|p| phase_taps(p as f64 / phases as f64, half, fc))
        .collect();

    let x = clip.samples();
    let mut out = Vec::with_capacity(n_out);
    for n in 0..n_out as u64 {
        let num = n * down;
        let base = (num / up) as i64;
        let phase = if up <= MAX_PHASES {
            (num % up) as usize
        } else {
            (((num % up) as f64 / up as f64) * phases as f64).floor() as usize
        };
        let taps = &table[phase];
        let mut acc = 0.0;
        for (j, &h) in taps.iter().enumerate() {
            let idx = base + j as i64 - half + 1;
            if idx >= 0 && (idx as usize) < n_in {
                acc += h * x[idx as usize];
            }
        }
        out.push(acc);
    }
    AudioClip::new(out, target_rate)
}

/// Taps for input offsets `-half+1 ..= half` relative to floor(position), where
/// the output sits `frac` samples past that floor.
fn phase_taps(frac: f64, half: i64, fc: f64) -> Vec<f64> {
    let mut taps: Vec<f64> = (-half + 1..=half)
        .map(|k| {
            let t = k as f64 - frac;
            fc * sinc(fc * t) * kaiser(t / half as f64)
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for h in &mut taps {
        *h /= sum;
    }
    taps
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-12 {
        1.0
    } else {
        (PI * x).sin() / (PI * x)
    }
}

fn kaiser(u: f64) -> f64 {
    if u.abs() > 1.0 {
        return 0.0;
    }
    bessel_i0(KAISER_BETA * (1.0 - u * u).sqrt()) / bessel_i0(KAISER_BETA)
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut k = 1.0;
    while term > 1e-16 * sum {
        term *= q / (k * k);
        sum += term;
        k += 1.0;
    }
    sum
}

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}
