//! Mini-batch training over the delay/context grid.

use std::path::Path;

use log::{info, warn};
use ndarray::{s, Array1, Array2, Array3, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::dataset::{Dataset, Utterance};
use super::manifest::Split;
use crate::container::checksum;
use crate::error::{Error, Result};
use crate::features::stack_context;
use crate::geometry::MeanFace;
use crate::model::{
    adam_step, backward, clip_global_norm, delayed_targets, forward, init_params, masked_mse,
    AdamConfig, AdamState, DropoutMasks, ModelConfig, TalkingFaceModel,
};

/// Training chunk length in frames (3 s at 25 FPS).
pub const SEQUENCE_LENGTH: usize = 75;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// (delay frames, context frames) per grid point.
    pub grid: Vec<(usize, usize)>,
    /// Layer count, width and dropout; delay and context come from the grid.
    pub model: ModelConfig,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub sequence_length: usize,
    pub clip_norm: f64,
    /// Train grid points concurrently instead of one after another.
    pub parallel_grid: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            grid: full_grid(),
            model: ModelConfig::default(),
            batch_size: 128,
            learning_rate: 1e-3,
            epochs: 50,
            seed: 0,
            sequence_length: SEQUENCE_LENGTH,
            clip_norm: 5.0,
            parallel_grid: false,
        }
    }
}

/// Delays 0/40/80 ms by contexts 3 and 5.
pub fn full_grid() -> Vec<(usize, usize)> {
    let mut g = Vec::new();
    for d in 0..3 {
        for c in [3, 5] {
            g.push((d, c));
        }
    }
    g
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Config("model grid is empty".into()));
        }
        if self.batch_size == 0 || self.sequence_length == 0 {
            return Err(Error::Config("batch size and sequence length must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.clip_norm > 0.0) {
            return Err(Error::Config("learning rate and clip norm must be positive".into()));
        }
        for &(d, c) in &self.grid {
            self.model_config(d, c).validate()?;
        }
        Ok(())
    }

    pub fn model_config(&self, delay_frames: usize, context_frames: usize) -> ModelConfig {
        ModelConfig {
            delay_frames,
            context_frames,
            ..self.model.clone()
        }
    }

    pub fn model_configs(&self) -> Vec<ModelConfig> {
        self.grid.iter().map(|&(d, c)| self.model_config(d, c)).collect()
    }
}

/// One fixed-length training sequence with its loss weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    /// L x input_dim stacked context vectors.
    pub inputs: Array2<f64>,
    /// L x 136; row t holds landmark frame t - D of the utterance.
    pub targets: Array2<f64>,
    /// 1 where row t enters the loss, 0 for delay warm-up and padding.
    pub weights: Array1<f64>,
}

/// Stacks context and shifts targets over the whole utterance, then cuts it
/// into `len`-frame chunks; the last chunk is zero-padded with zero weight.
pub fn make_examples<'a>(
    utterances: impl IntoIterator<Item = &'a Utterance>,
    config: &ModelConfig,
    len: usize,
) -> Result<Vec<TrainingExample>> {
    let mut out = Vec::new();
    for u in utterances {
        let inputs = stack_context(&u.features, config.context_frames)?;
        let targets = u.targets.to_matrix();
        let steps = targets.nrows();
        if inputs.nrows() != steps {
            return Err(Error::Shape(format!(
                "utterance {}: {} feature frames vs {steps} targets",
                u.entry,
                inputs.nrows()
            )));
        }
        let (shifted, weights) = delayed_targets(&targets, steps, config.delay_frames);
        for start in (0..steps).step_by(len) {
            let end = (start + len).min(steps);
            let mut ex = TrainingExample {
                inputs: Array2::zeros((len, inputs.ncols())),
                targets: Array2::zeros((len, targets.ncols())),
                weights: Array1::zeros(len),
            };
            let n = end - start;
            ex.inputs.slice_mut(s![..n, ..]).assign(&inputs.slice(s![start..end, ..]));
            ex.targets.slice_mut(s![..n, ..]).assign(&shifted.slice(s![start..end, ..]));
            ex.weights.slice_mut(s![..n]).assign(&weights.slice(s![start..end]));
            out.push(ex);
        }
    }
    Ok(out)
}

/// Network initialization with the head bias set to the mean face, so an
/// untrained model already outputs the canonical identity.
pub fn initial_model(config: &ModelConfig, mean_face: &MeanFace, seed: u64) -> TalkingFaceModel {
    let mut params = init_params(config, seed);
    params.head_bias = Array1::from(mean_face.frame.to_flat());
    TalkingFaceModel {
        config: config.clone(),
        params,
        mean_face: mean_face.clone(),
    }
}

/// Seed of one grid point, derived from the run seed and the model id.
pub fn grid_seed(seed: u64, model_id: &str) -> u64 {
    seed ^ checksum(model_id.as_bytes())
}

struct Batch {
    inputs: Array3<f64>,
    targets: Array3<f64>,
    weights: Array2<f64>,
}

fn assemble(examples: &[TrainingExample], idx: &[usize]) -> Batch {
    let first = &examples[idx[0]];
    let (len, in_dim) = first.inputs.dim();
    let out_dim = first.targets.ncols();
    let mut b = Batch {
        inputs: Array3::zeros((len, idx.len(), in_dim)),
        targets: Array3::zeros((len, idx.len(), out_dim)),
        weights: Array2::zeros((len, idx.len())),
    };
    for (k, &i) in idx.iter().enumerate() {
        let ex = &examples[i];
        b.inputs.index_axis_mut(Axis(1), k).assign(&ex.inputs);
        b.targets.index_axis_mut(Axis(1), k).assign(&ex.targets);
        b.weights.column_mut(k).assign(&ex.weights);
    }
    b
}

/// Step-level training state for one model.
pub struct Trainer {
    model: TalkingFaceModel,
    adam: AdamState,
    rng: ChaCha8Rng,
    examples: Vec<TrainingExample>,
    batch_size: usize,
    clip_norm: f64,
    steps: usize,
}

impl Trainer {
    pub fn new(
        model: TalkingFaceModel,
        examples: Vec<TrainingExample>,
        adam: AdamConfig,
        batch_size: usize,
        clip_norm: f64,
        seed: u64,
    ) -> Result<Self> {
        if examples.is_empty() {
            return Err(Error::EmptyInput("no training sequences".into()));
        }
        if batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        let in_dim = model.config.input_dim();
        if let Some(ex) = examples.iter().find(|e| e.inputs.ncols() != in_dim) {
            return Err(Error::Shape(format!(
                "training input width {}, model expects {in_dim}",
                ex.inputs.ncols()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Ok(Trainer {
            adam: AdamState::new(adam, &model.params),
            model,
            rng,
            examples,
            batch_size,
            clip_norm,
            steps: 0,
        })
    }

    pub fn model(&self) -> &TalkingFaceModel {
        &self.model
    }

    pub fn into_model(self) -> TalkingFaceModel {
        self.model
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn num_examples(&self) -> usize {
        self.examples.len()
    }

    /// One Adam update on the given examples; returns the batch loss measured
    /// in the (dropout) training pass and the number of counted frames.
    pub fn step(&mut self, batch: &[usize]) -> Result<(f64, f64)> {
        if batch.is_empty() {
            return Err(Error::EmptyInput("empty batch".into()));
        }
        let b = assemble(&self.examples, batch);
        let cfg = &self.model.config;
        let masks = DropoutMasks::sample(cfg, batch.len(), &mut self.rng);
        let masks = (cfg.dropout_rate > 0.0).then_some(&masks);
        let (y, cache) = forward(&self.model.params, &b.inputs, masks)?;
        let (loss, dy) = masked_mse(&y, &b.targets, b.weights.view())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                name: "training loss".into(),
            });
        }
        let mut grads = backward(&self.model.params, &cache, &dy)?;
        clip_global_norm(&mut grads, self.clip_norm);
        adam_step(&mut self.model.params, &grads, &mut self.adam)?;
        self.steps += 1;
        Ok((loss, b.weights.sum()))
    }

    /// A shuffled pass over every example; returns the frame-weighted mean of
    /// the batch losses.
    pub fn epoch(&mut self) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.examples.len()).collect();
        order.shuffle(&mut self.rng);
        let (mut total, mut frames) = (0.0, 0.0);
        for batch in order.chunks(self.batch_size) {
            let (loss, n) = self.step(batch)?;
            total += loss * n;
            frames += n;
        }
        Ok(if frames > 0.0 { total / frames } else { 0.0 })
    }

    /// Full-batch loss on the training examples with dropout off.
    pub fn training_loss(&self) -> Result<f64> {
        examples_loss(&self.model, &self.examples)
    }
}

/// Inference-mode loss over `examples`, pooled over all counted frames.
pub fn examples_loss(model: &TalkingFaceModel, examples: &[TrainingExample]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::EmptyInput("no sequences to score".into()));
    }
    let idx: Vec<usize> = (0..examples.len()).collect();
    let (mut total, mut frames) = (0.0, 0.0);
    for chunk in idx.chunks(128) {
        let b = assemble(examples, chunk);
        let y = crate::model::infer(&model.params, &b.inputs)?;
        let (loss, _) = masked_mse(&y, &b.targets, b.weights.view())?;
        let n = b.weights.sum();
        total += loss * n;
        frames += n;
    }
    Ok(if frames > 0.0 { total / frames } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train: f64,
    pub val: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModel {
    pub model: TalkingFaceModel,
    pub history: Vec<EpochLoss>,
}

impl TrainedModel {
    pub fn history_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_loss\tval_loss\n");
        for h in &self.history {
            let val = h.val.map_or_else(|| "-".to_string(), |v| v.to_string());
            s.push_str(&format!("{}\t{}\t{val}\n", h.epoch, h.train));
        }
        s
    }

    pub fn write_history(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.history_tsv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains one grid point on the dataset's training split.
pub fn train_model(dataset: &Dataset, model_config: &ModelConfig, cfg: &TrainConfig) -> Result<TrainedModel> {
    model_config.validate()?;
    let id = model_config.model_id();
    let seed = grid_seed(cfg.seed, &id);
    let train = make_examples(dataset.split(Split::Train), model_config, cfg.sequence_length)?;
    if train.is_empty() {
        return Err(Error::EmptyInput("no training-split utterances".into()));
    }
    let val = make_examples(dataset.split(Split::Val), model_config, cfg.sequence_length)?;
    let model = initial_model(model_config, &dataset.mean_face, seed);
    let adam = AdamConfig {
        learning_rate: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let mut trainer = Trainer::new(model, train, adam, cfg.batch_size, cfg.clip_norm, seed)?;
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        let train_loss = trainer.epoch()?;
        let val_loss = if val.is_empty() {
            None
        } else {
            Some(examples_loss(trainer.model(), &val)?)
        };
        if let Some(v) = val_loss.filter(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                name: format!("validation loss {v}"),
            });
        }
        info!(
            "{id} epoch {epoch}/{}: train {train_loss:.6}{}",
            cfg.epochs,
            val_loss.map_or(String::new(), |v| format!(", val {v:.6}"))
        );
        history.push(EpochLoss {
            epoch,
            train: train_loss,
            val: val_loss,
        });
    }
    Ok(TrainedModel {
        model: trainer.into_model(),
        history,
    })
}

/// Trains every grid point. A failing point (for example a non-finite loss)
/// is reported in its slot and the rest of the grid still runs.
pub fn train_grid(dataset: &Dataset, cfg: &TrainConfig) -> Result<Vec<(String, Result<TrainedModel>)>> {
    cfg.validate()?;
    let configs = cfg.model_configs();
    let run = |mc: &ModelConfig| {
        let id = mc.model_id();
        let res = train_model(dataset, mc, cfg);
        if let Err(e) = &res {
            warn!("{id}: training aborted: {e}");
        }
        (id, res)
    };
    Ok(if cfg.parallel_grid {
        configs.par_iter().map(run).collect()
    } else {
        configs.iter().map(run).collect()
    })
}
