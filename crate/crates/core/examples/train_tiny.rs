//! Overfits a small network on a synthetic corpus and prints the loss curve.
//!
//! cargo run --release --example train_tiny -- [steps] [hidden] [context]

use std::time::Instant;

use lark::harness::{
    build_dataset, generate_synthetic_dataset, initial_model, make_examples, Split, SynthConfig,
    Trainer, SEQUENCE_LENGTH,
};
use lark::model::{AdamConfig, ModelConfig};

fn main() -> lark::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let steps = args.first().copied().unwrap_or(500);
    let hidden = args.get(1).copied().unwrap_or(64);
    let context = args.get(2).copied().unwrap_or(5);

    let dir = std::env::temp_dir().join("lark_train_tiny");
    let manifest = generate_synthetic_dataset(
        &dir,
        &SynthConfig {
            seed: 1,
            utterances: 8,
            split: Split::Train,
            ..Default::default()
        },
    )?;
    let dataset = build_dataset(&manifest, 0, None)?;
    let config = ModelConfig {
        num_layers: 4,
        hidden_size: hidden,
        context_frames: context,
        delay_frames: 1,
        dropout_rate: 0.0,
        ..ModelConfig::default()
    };
    let examples = make_examples(&dataset.utterances, &config, SEQUENCE_LENGTH)?;
    let model = initial_model(&config, &dataset.mean_face, 7);
    let mut trainer = Trainer::new(model, examples, AdamConfig::default(), 128, 5.0, 7)?;
    let all: Vec<usize> = (0..trainer.num_examples()).collect();
    println!("initial loss {:.6}", trainer.training_loss()?);
    let start = Instant::now();
    for step in 1..=steps {
        let (loss, _) = trainer.step(&all)?;
        if step % 50 == 0 || step == 1 {
            println!("step {step:5}  loss {loss:.6}  ({:.1} s)", start.elapsed().as_secs_f64());
        }
    }
    println!("final loss {:.6}", trainer.training_loss()?);
    Ok(())
}
