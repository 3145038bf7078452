use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::geometry::{
    LandmarkFrame, MeanFace, CANONICAL_PIN_LEFT_PX, CANONICAL_PIN_RIGHT_PX, CANONICAL_SIDE,
    NUM_LANDMARKS,
};

use super::lstm::Params;
use super::{ModelConfig, TalkingFaceModel};

pub const CHECKPOINT_KIND: &str = "checkpoint";

impl TalkingFaceModel {
    pub fn to_container(&self) -> Result<Container> {
        let mut c = Container::new(CHECKPOINT_KIND);
        let cfg = &self.config;
        c.set_meta("model_id", self.model_id());
        c.set_meta("num_layers", cfg.num_layers);
        c.set_meta("hidden_size", cfg.hidden_size);
        c.set_meta("feature_dim", cfg.feature_dim);
        c.set_meta("context_frames", cfg.context_frames);
        c.set_meta("delay_frames", cfg.delay_frames);
        c.set_meta("dropout_rate", cfg.dropout_rate);
        c.set_meta("output_dim", cfg.output_dim());
        c.set_meta("canonical_side", CANONICAL_SIDE);
        c.set_meta(
            "eye_pins_px",
            format!(
                "{},{},{},{}",
                CANONICAL_PIN_LEFT_PX.x,
                CANONICAL_PIN_LEFT_PX.y,
                CANONICAL_PIN_RIGHT_PX.x,
                CANONICAL_PIN_RIGHT_PX.y
            ),
        );
        c.set_meta("mean_face_sources", self.mean_face.source_count);
        for (name, shape, data) in self.params.tensors() {
            c.push(&name, shape, data.to_vec())?;
        }
        c.push("mean_face", vec![NUM_LANDMARKS, 2], self.mean_face.frame.to_flat())?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let kind = c.meta("kind")?;
        if kind != CHECKPOINT_KIND {
            return Err(Error::Format(format!("expected a checkpoint, found `{kind}`")));
        }
        let config = ModelConfig {
            num_layers: c.meta_parse("num_layers")?,
            hidden_size: c.meta_parse("hidden_size")?,
            feature_dim: c.meta_parse("feature_dim")?,
            context_frames: c.meta_parse("context_frames")?,
            delay_frames: c.meta_parse("delay_frames")?,
            dropout_rate: c.meta_parse("dropout_rate")?,
        };
        config
            .validate()
            .map_err(|e| Error::Format(format!("checkpoint config: {e}")))?;
        let output_dim: usize = c.meta_parse("output_dim")?;
        if output_dim != config.output_dim() {
            return Err(Error::Format(format!("checkpoint output dim {output_dim}")));
        }
        let side: f64 = c.meta_parse("canonical_side")?;
        if side != CANONICAL_SIDE {
            return Err(Error::Format(format!("checkpoint canonical side {side}")));
        }

        let mut params = Params::zeros(&config);
        let names = params.names();
        let shapes: Vec<Vec<usize>> = params.tensors().into_iter().map(|(_, s, _)| s).collect();
        if c.tensors.len() != names.len() + 1 {
            return Err(Error::Format(format!(
                "checkpoint holds {} tensors, expected {}",
                c.tensors.len(),
                names.len() + 1
            )));
        }
        for ((slot, name), shape) in params.tensors_mut().into_iter().zip(&names).zip(&shapes) {
            let t = c.tensor(name)?;
            t.expect_shape(shape)?;
            slot.copy_from_slice(&t.data);
        }
        params.check_finite()?;

        let mf = c.tensor("mean_face")?;
        mf.expect_shape(&[NUM_LANDMARKS, 2])?;
        let mean_face = MeanFace {
            frame: LandmarkFrame::from_flat(&mf.data)?,
            source_count: c.meta_parse("mean_face_sources")?,
        };
        Ok(TalkingFaceModel {
            config,
            params,
            mean_face,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_container()?.write(path.as_ref())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_container(&Container::read(path.as_ref())?)
    }
}
