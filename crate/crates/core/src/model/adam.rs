use super::lstm::Params;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Params,
    pub second_moment: Params,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &Params) -> Self {
        AdamState {
            config,
            step: 0,
            first_moment: params.zeros_like(),
            second_moment: params.zeros_like(),
        }
    }
}

/// One bias-corrected Adam update. Rejects non-finite gradients before touching
/// any state, naming the offending tensor.
pub fn adam_step(params: &mut Params, grads: &Params, state: &mut AdamState) -> Result<()> {
    if grads.names() != params.names() || grads.num_values() != params.num_values() {
        return Err(Error::Shape("gradient tensors do not match parameters".into()));
    }
    grads.check_finite()?;

    state.step += 1;
    let AdamConfig {
        learning_rate: lr,
        beta1: b1,
        beta2: b2,
        epsilon: eps,
    } = state.config;
    let bc1 = 1.0 - b1.powi(state.step as i32);
    let bc2 = 1.0 - b2.powi(state.step as i32);

    let g_all = grads.tensors();
    let m_all = state.first_moment.tensors_mut();
    let v_all = state.second_moment.tensors_mut();
    let p_all = params.tensors_mut();
    for (((p, (_, _, g)), m), v) in p_all.into_iter().zip(g_all).zip(m_all).zip(v_all) {
        for k in 0..p.len() {
            m[k] = b1 * m[k] + (1.0 - b1) * g[k];
            v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lstm::init_params;
    use crate::model::ModelConfig;

    fn tiny() -> ModelConfig {
        ModelConfig {
            num_layers: 1,
            hidden_size: 2,
            feature_dim: 3,
            context_frames: 1,
            delay_frames: 0,
            dropout_rate: 0.0,
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = init_params(&tiny(), 1);
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &p);
        // seed some moment so decay is visible
        st.first_moment.head_bias[0] = 0.5;
        st.second_moment.head_bias[0] = 0.25;
        let g = p.zeros_like();
        adam_step(&mut p, &g, &mut st).unwrap();
        assert_eq!(st.step, 1);
        assert_eq!(st.first_moment.head_bias[0], 0.45);
        assert!((st.second_moment.head_bias[0] - 0.24975).abs() < 1e-15);
        // only the seeded entry moves; everything else is untouched
        let mut expected = before.clone();
        expected.head_bias[0] -= 1e-3 * (0.45 / 0.1) / ((0.24975f64 / 0.001).sqrt() + 1e-8);
        assert_eq!(p.layers, expected.layers);
        assert_eq!(p.head_weight, expected.head_weight);
        assert!((p.head_bias[0] - expected.head_bias[0]).abs() < 1e-15);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        for g in [3.7, -0.002, 250.0] {
            let mut p = init_params(&tiny(), 2);
            let x0 = p.head_bias[1];
            let mut grads = p.zeros_like();
            grads.head_bias[1] = g;
            let mut st = AdamState::new(AdamConfig::default(), &p);
            adam_step(&mut p, &grads, &mut st).unwrap();
            // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
            let expected = -1e-3 * g / (g.abs() + 1e-8);
            assert!((p.head_bias[1] - x0 - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn non_finite_gradient_names_tensor() {
        let mut p = init_params(&tiny(), 3);
        let mut g = p.zeros_like();
        g.layers[0].w_recurrent[[1, 0]] = f64::NAN;
        let mut st = AdamState::new(AdamConfig::default(), &p);
        let before = p.clone();
        match adam_step(&mut p, &g, &mut st) {
            Err(Error::NonFinite { name }) => assert_eq!(name, "layer0.w_recurrent"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(st.step, 0);
        assert_eq!(p, before);
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut p = init_params(&tiny(), 9);
            let mut st = AdamState::new(AdamConfig::default(), &p);
            for k in 0..50 {
                let mut g = p.clone();
                g.scale(0.1 * (k as f64).sin());
                adam_step(&mut p, &g, &mut st).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }
}
