//! The landmark regressor: a stack of LSTM layers feeding a linear head that
//! emits 68 (x, y) pairs per audio frame, trained on delayed targets.

mod adam;
mod checkpoint;
pub mod lstm;

pub use checkpoint::CHECKPOINT_KIND;
pub use adam::{adam_step, AdamConfig, AdamState};
pub use lstm::{
    backward, clip_global_norm, forward, infer, init_params, masked_mse, DropoutMasks,
    ForwardCache, LayerParams, Params,
};

use ndarray::{Array2, Array3, Axis};

use crate::error::{Error, Result};
use crate::features::{stack_context, FeatureSequence, FEATURE_DIM, FRAME_RATE};
use crate::geometry::{repin_eyes, LandmarkFrame, LandmarkSequence, MeanFace, Pins, FRAME_DIM};

/// Milliseconds per frame at 25 FPS; delays are named in these units.
pub const MS_PER_FRAME: usize = 40;

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub num_layers: usize,
    pub hidden_size: usize,
    /// Width of one feature frame before context stacking (128 for Δ/ΔΔ).
    pub feature_dim: usize,
    /// Frames per input vector, current frame included.
    pub context_frames: usize,
    /// Output at step t targets landmark frame t - delay.
    pub delay_frames: usize,
    pub dropout_rate: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_layers: 4,
            hidden_size: 256,
            feature_dim: FEATURE_DIM,
            context_frames: 5,
            delay_frames: 1,
            dropout_rate: 0.2,
        }
    }
}

impl ModelConfig {
    pub fn input_dim(&self) -> usize {
        self.feature_dim * self.context_frames
    }

    pub fn output_dim(&self) -> usize {
        FRAME_DIM
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_layers == 0 || self.hidden_size == 0 || self.feature_dim == 0 {
            return Err(Error::Config("layers, hidden size and feature dim must be positive".into()));
        }
        if self.context_frames == 0 {
            return Err(Error::Config("context must be at least 1 frame".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    /// `D{delay ms}-C{context}`, e.g. `D40-C5`.
    pub fn model_id(&self) -> String {
        format!("D{}-C{}", self.delay_frames * MS_PER_FRAME, self.context_frames)
    }

    /// Applies the delay/context named by a model id such as `D80-C3`.
    pub fn with_model_id(&self, id: &str) -> Result<Self> {
        let (delay_frames, context_frames) = parse_model_id(id)?;
        Ok(ModelConfig {
            delay_frames,
            context_frames,
            ..self.clone()
        })
    }
}

/// Parses `D{ms}-C{n}` into (delay frames, context frames).
pub fn parse_model_id(id: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("bad model id `{id}` (expected e.g. D40-C5)"));
    let (d, c) = id.trim().split_once('-').ok_or_else(bad)?;
    let ms: usize = d.strip_prefix('D').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let ctx: usize = c.strip_prefix('C').and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    if !ms.is_multiple_of(MS_PER_FRAME) || ctx == 0 {
        return Err(bad());
    }
    Ok((ms / MS_PER_FRAME, ctx))
}

/// Everything needed for standalone inference.
#[derive(Debug, Clone, PartialEq)]
pub struct TalkingFaceModel {
    pub config: ModelConfig,
    pub params: Params,
    pub mean_face: MeanFace,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictedSequence {
    /// Delay-compensated, re-pinned landmarks in normalized coordinates.
    pub frames: LandmarkSequence,
    /// Raw network outputs (T x 136) before the delay shift and re-pinning.
    pub raw: Array2<f64>,
    pub model_id: String,
    pub delay_frames: usize,
}

impl TalkingFaceModel {
    pub fn model_id(&self) -> String {
        self.config.model_id()
    }

    /// Context stacking, inference pass, delay compensation (drop the first D
    /// outputs, repeat the last one D times), then per-frame eye re-pinning.
    pub fn predict(&self, features: &FeatureSequence) -> Result<PredictedSequence> {
        if features.dim() != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "features have {} columns, model expects {}",
                features.dim(),
                self.config.feature_dim
            )));
        }
        if (features.frame_rate() - FRAME_RATE).abs() > 1e-9 {
            return Err(Error::Shape(format!(
                "features at {} FPS, model runs at {FRAME_RATE}",
                features.frame_rate()
            )));
        }
        let steps = features.num_frames();
        if steps == 0 {
            return Err(Error::EmptyInput("no feature frames".into()));
        }
        let stacked = stack_context(features, self.config.context_frames)?;
        let input = stacked.insert_axis(Axis(1));
        let raw = infer(&self.params, &input)?.remove_axis(Axis(1));

        let pins = Pins::canonical();
        let delay = self.config.delay_frames;
        let frames = (0..steps)
            .map(|k| {
                let src = (k + delay).min(steps - 1);
                let f = LandmarkFrame::from_flat(raw.row(src).as_slice().unwrap())?;
                repin_eyes(&f, &pins)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PredictedSequence {
            frames: LandmarkSequence::new(frames, FRAME_RATE)?,
            raw,
            model_id: self.model_id(),
            delay_frames: delay,
        })
    }
}

/// Loss for one sequence: output step t is compared with target frame t - D,
/// J = (1/N) Σ_t ||s_{t-D} - ŝ_t||² over the N = T - D compared frames.
pub fn mse_loss(predicted: &Array2<f64>, target: &Array2<f64>, delay: usize) -> Result<f64> {
    if predicted.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            predicted.dim(),
            target.dim()
        )));
    }
    let steps = predicted.nrows();
    if steps <= delay {
        return Err(Error::Shape(format!(
            "delay {delay} leaves no frames of a {steps}-frame sequence"
        )));
    }
    let (shifted, weights) = delayed_targets(target, steps, delay);
    let p = predicted.view().insert_axis(Axis(1)).to_owned();
    let (loss, _) = masked_mse(&p, &shifted.insert_axis(Axis(1)), weights.view().insert_axis(Axis(1)))?;
    Ok(loss)
}

/// Target and weight rows for a delayed sequence of `valid` real frames padded
/// to `target.nrows()`: row t holds frame t - D, weighted 1 when that frame is
/// real and t >= D.
pub fn delayed_targets(
    target: &Array2<f64>,
    valid: usize,
    delay: usize,
) -> (Array2<f64>, ndarray::Array1<f64>) {
    let steps = target.nrows();
    let mut shifted = Array2::zeros(target.raw_dim());
    let mut weights = ndarray::Array1::zeros(steps);
    for t in delay..steps {
        let src = t - delay;
        if src < valid {
            shifted.row_mut(t).assign(&target.row(src));
            weights[t] = 1.0;
        }
    }
    (shifted, weights)
}

/// Stacks equally long per-sequence matrices (T x D each) into T x B x D.
pub fn batch_major(seqs: &[Array2<f64>]) -> Result<Array3<f64>> {
    let first = seqs
        .first()
        .ok_or_else(|| Error::EmptyInput("empty batch".into()))?;
    let (steps, dim) = first.dim();
    let mut out = Array3::zeros((steps, seqs.len(), dim));
    for (b, s) in seqs.iter().enumerate() {
        if s.dim() != (steps, dim) {
            return Err(Error::Shape(format!(
                "sequence {b} is {:?}, batch expects ({steps}, {dim})",
                s.dim()
            )));
        }
        out.index_axis_mut(Axis(1), b).assign(s);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
