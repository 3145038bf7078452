//! Dataset assembly, training over the delay/context grid, evaluation and a
//! synthetic corpus generator.

pub mod dataset;
pub mod eval;
pub mod manifest;
pub mod synth;
pub mod train;

pub use dataset::{build_dataset, read_preprocessed, write_preprocessed, Dataset, EntryFailure, Utterance};
pub use eval::{compute_metrics, evaluate, evaluate_sequences, select_model, EvalReport, EvalRow, Metrics};
pub use manifest::{DatasetManifest, ManifestEntry, Split};
pub use synth::{generate_synthetic_dataset, SynthConfig};
pub use train::{
    full_grid, initial_model, make_examples, train_grid, train_model, TrainConfig, TrainedModel,
    Trainer, TrainingExample, SEQUENCE_LENGTH,
};

#[cfg(test)]
mod tests;
