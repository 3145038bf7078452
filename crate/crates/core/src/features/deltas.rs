use ndarray::{s, Array2};

use super::LogMelSpectrogram;
use crate::error::{Error, Result};

/// Per-frame `[Δ | ΔΔ]` vectors derived from a log-mel spectrogram.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSequence {
    frames: Array2<f64>,
    frame_rate: f64,
}

impl FeatureSequence {
    pub fn new(frames: Array2<f64>, frame_rate: f64) -> Self {
        FeatureSequence { frames, frame_rate }
    }

    /// T x 128; columns 0..64 hold Δ, 64..128 hold ΔΔ.
    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn num_frames(&self) -> usize {
        self.frames.nrows()
    }

    pub fn dim(&self) -> usize {
        self.frames.ncols()
    }
}

/// Δ_t = m_t - m_{t-1} and ΔΔ_t = Δ_t - Δ_{t-1}. Δ_0 is zero; ΔΔ_0 and ΔΔ_1
/// are zero because ΔΔ needs two real Δ frames. Requires T >= 3.
pub fn temporal_differences(spec: &LogMelSpectrogram) -> Result<FeatureSequence> {
    let m = spec.frames();
    let (t_len, bands) = m.dim();
    if t_len < 3 {
        return Err(Error::SequenceTooShort {
            needed: 3,
            got: t_len,
        });
    }
    let mut out = Array2::zeros((t_len, 2 * bands));
    for t in 1..t_len {
        for b in 0..bands {
            let d = m[[t, b]] - m[[t - 1, b]];
            out[[t, b]] = d;
            out[[t, bands + b]] = d - out[[t - 1, b]];
        }
    }
    // boundary convention: ΔΔ needs two valid Δ frames
    out.slice_mut(s![1, bands..]).fill(0.0);
    Ok(FeatureSequence::new(out, spec.frame_rate()))
}

/// Concatenates each frame with its `context - 1` predecessors, oldest first;
/// frames before t = 0 are zero vectors. Output is T x (dim * context).
pub fn stack_context(feat: &FeatureSequence, context: usize) -> Result<Array2<f64>> {
    if context == 0 {
        return Err(Error::Argument("context must be at least 1 frame".into()));
    }
    let (t_len, dim) = feat.frames().dim();
    let mut out = Array2::zeros((t_len, dim * context));
    for t in 0..t_len {
        for j in 0..context {
            // block j holds frame t - (context - 1 - j)
            let back = context - 1 - j;
            if back <= t {
                out.slice_mut(s![t, j * dim..(j + 1) * dim])
                    .assign(&feat.frames().row(t - back));
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use proptest::prelude::*;

    fn spec_from(rows: Vec<Vec<f64>>) -> LogMelSpectrogram {
        let t = rows.len();
        let b = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        LogMelSpectrogram::new(Array2::from_shape_vec((t, b), flat).unwrap(), 25.0)
    }

    // two-pass oracle: Δ first, then ΔΔ from Δ, with the boundary frames zeroed
    fn naive(m: &Array2<f64>) -> Array2<f64> {
        let (t_len, b) = m.dim();
        let mut d = vec![vec![0.0; b]; t_len];
        for t in 1..t_len {
            for k in 0..b {
                d[t][k] = m[[t, k]] - m[[t - 1, k]];
            }
        }
        let mut dd = vec![vec![0.0; b]; t_len];
        for t in 2..t_len {
            for k in 0..b {
                dd[t][k] = d[t][k] - d[t - 1][k];
            }
        }
        let mut out = Array2::zeros((t_len, 2 * b));
        for t in 0..t_len {
            for k in 0..b {
                out[[t, k]] = d[t][k];
                out[[t, b + k]] = dd[t][k];
            }
        }
        out
    }

    #[test]
    fn constant_spectrogram_gives_zeros() {
        let s = spec_from(vec![vec![-3.0; 64]; 10]);
        let f = temporal_differences(&s).unwrap();
        assert_eq!(f.frames().dim(), (10, 128));
        assert!(f.frames().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_ramp() {
        let c: Vec<f64> = (0..64).map(|k| k as f64 * 0.5 - 3.0).collect();
        let rows = (0..6)
            .map(|t| c.iter().map(|&v| v * t as f64).collect())
            .collect();
        let f = temporal_differences(&spec_from(rows)).unwrap();
        for t in 1..6 {
            for k in 0..64 {
                assert!((f.frames()[[t, k]] - c[k]).abs() < 1e-12);
            }
        }
        for t in 0..6 {
            for k in 64..128 {
                assert!(f.frames()[[t, k]].abs() < 1e-12);
            }
        }
        assert!(f.frames().row(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_matches_two_pass_oracle() {
        let m = Array2::from_shape_fn((5, 64), |(t, k)| {
            (((t * 131 + k * 17) % 97) as f64 / 9.7).sin() * 4.0
        });
        let f = temporal_differences(&LogMelSpectrogram::new(m.clone(), 25.0)).unwrap();
        assert_eq!(f.frames(), &naive(&m));
    }

    #[test]
    fn too_short() {
        let s = spec_from(vec![vec![0.0; 64]; 2]);
        assert!(matches!(
            temporal_differences(&s),
            Err(Error::SequenceTooShort { needed: 3, got: 2 })
        ));
    }

    fn seq(t: usize, dim: usize) -> FeatureSequence {
        FeatureSequence::new(
            Array2::from_shape_fn((t, dim), |(i, j)| (i * 1000 + j) as f64),
            25.0,
        )
    }

    #[test]
    fn context_one_is_identity() {
        let f = seq(7, 128);
        assert_eq!(&stack_context(&f, 1).unwrap(), f.frames());
    }

    #[test]
    fn context_five_left_padding() {
        let f = seq(10, 128);
        let out = stack_context(&f, 5).unwrap();
        let row0 = out.row(0);
        assert!(row0.slice(s![..4 * 128]).iter().all(|&v| v == 0.0));
        assert_eq!(row0.slice(s![4 * 128..]), f.frames().row(0));
    }

    #[test]
    fn context_three_spot_checks() {
        let f = seq(75, 128);
        let out = stack_context(&f, 3).unwrap();
        assert_eq!(out.dim(), (75, 384));
        for t in [1usize, 37, 74] {
            let mut manual: Vec<f64> = Vec::new();
            for back in [2i64, 1, 0] {
                let src = t as i64 - back;
                if src < 0 {
                    manual.extend(std::iter::repeat_n(0.0, 128));
                } else {
                    manual.extend(f.frames().row(src as usize).iter());
                }
            }
            assert_eq!(out.row(t), Array1::from(manual));
        }
    }

    #[test]
    fn zero_context_rejected() {
        assert!(stack_context(&seq(3, 4), 0).is_err());
    }

    proptest! {
        #[test]
        fn deltas_are_linear(
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            xs in proptest::collection::vec(-10.0f64..10.0, 6 * 64),
            ys in proptest::collection::vec(-10.0f64..10.0, 6 * 64),
        ) {
            let x = Array2::from_shape_vec((6, 64), xs).unwrap();
            let y = Array2::from_shape_vec((6, 64), ys).unwrap();
            let combo = &x * a + &y * b;
            let lhs = temporal_differences(&LogMelSpectrogram::new(combo, 25.0)).unwrap();
            let dx = temporal_differences(&LogMelSpectrogram::new(x, 25.0)).unwrap();
            let dy = temporal_differences(&LogMelSpectrogram::new(y, 25.0)).unwrap();
            let rhs = dx.frames() * a + dy.frames() * b;
            for (l, r) in lhs.frames().iter().zip(rhs.iter()) {
                prop_assert!((l - r).abs() <= 1e-12 * (1.0 + r.abs()));
            }
        }
    }
}
