//! Compares backpropagated gradients against central finite differences on a
//! small random network.
//!
//! cargo run --example gradient_check -- [layers] [hidden] [steps]

use lark::model::{backward, forward, init_params, masked_mse, ModelConfig};
use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> lark::Result<()> {
    let args: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let config = ModelConfig {
        num_layers: args.first().copied().unwrap_or(2),
        hidden_size: args.get(1).copied().unwrap_or(4),
        feature_dim: 6,
        context_frames: 1,
        delay_frames: 0,
        dropout_rate: 0.0,
    };
    let steps = args.get(2).copied().unwrap_or(5);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let p = init_params(&config, 3);
    let x = Array3::from_shape_simple_fn((steps, 2, 6), || rng.random_range(-1.0..1.0));
    let y = Array3::from_shape_simple_fn((steps, 2, 136), || rng.random_range(0.0..1.0));
    let w = Array2::ones((steps, 2));

    let (out, cache) = forward(&p, &x, None)?;
    let (_, dy) = masked_mse(&out, &y, w.view())?;
    let grads = backward(&p, &cache, &dy)?;
    let loss = |q: &lark::model::Params| -> lark::Result<f64> {
        Ok(masked_mse(&forward(q, &x, None)?.0, &y, w.view())?.0)
    };

    let h = 1e-5;
    for (ti, (name, _, g)) in grads.tensors().iter().enumerate() {
        let (mut diff, mut norm) = (0.0f64, 0.0f64);
        for k in 0..g.len() {
            let mut plus = p.clone();
            plus.tensors_mut()[ti][k] += h;
            let mut minus = p.clone();
            minus.tensors_mut()[ti][k] -= h;
            let num = (loss(&plus)? - loss(&minus)?) / (2.0 * h);
            diff += (g[k] - num).powi(2);
            norm += g[k] * g[k];
        }
        println!("{name:24} relative error {:.2e}", diff.sqrt() / norm.sqrt().max(1e-300));
    }
    Ok(())
}
