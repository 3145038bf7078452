//! Stacked LSTM with a linear output head, batched forward pass and full
//! backpropagation through time.
//!
//! Activations are stored time-major as 2-D matrices whose row `t * B + b`
//! holds sequence `b` at step `t`. Gate columns are laid out `[i | f | g | o]`.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, Axis};
use rand::distr::{Bernoulli, Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    /// input_dim x 4H
    pub w_input: Array2<f64>,
    /// H x 4H
    pub w_recurrent: Array2<f64>,
    /// 4H
    pub bias: Array1<f64>,
}

impl LayerParams {
    pub fn zeros(input_dim: usize, hidden: usize) -> Self {
        LayerParams {
            w_input: Array2::zeros((input_dim, 4 * hidden)),
            w_recurrent: Array2::zeros((hidden, 4 * hidden)),
            bias: Array1::zeros(4 * hidden),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w_input.nrows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_recurrent.nrows()
    }

    /// One step of the recurrence for a single sequence.
    pub fn cell_forward(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hid = self.hidden_size();
        let mut z = self.bias.to_vec();
        for (xi, row) in x.iter().zip(self.w_input.rows()) {
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += xi * w;
            }
        }
        for (hi, row) in h_prev.iter().zip(self.w_recurrent.rows()) {
            for (zj, w) in z.iter_mut().zip(row) {
                *zj += hi * w;
            }
        }
        let mut h = vec![0.0; hid];
        let mut c = vec![0.0; hid];
        for j in 0..hid {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[hid + j]);
            let g = z[2 * hid + j].tanh();
            let o = sigmoid(z[3 * hid + j]);
            c[j] = f * c_prev[j] + i * g;
            h[j] = o * c[j].tanh();
        }
        (h, c)
    }
}

/// Every trainable tensor of the network. Also used to hold gradients and
/// optimizer moments, which share the same shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    pub layers: Vec<LayerParams>,
    /// H x output_dim
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl Params {
    pub fn zeros(config: &ModelConfig) -> Self {
        let hid = config.hidden_size;
        let layers = (0..config.num_layers)
            .map(|l| {
                let input = if l == 0 { config.input_dim() } else { hid };
                LayerParams::zeros(input, hid)
            })
            .collect();
        Params {
            layers,
            head_weight: Array2::zeros((hid, config.output_dim())),
            head_bias: Array1::zeros(config.output_dim()),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Params {
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams::zeros(l.input_dim(), l.hidden_size()))
                .collect(),
            head_weight: Array2::zeros(self.head_weight.raw_dim()),
            head_bias: Array1::zeros(self.head_bias.raw_dim()),
        }
    }

    /// Tensor names in the fixed serialization order.
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for l in 0..self.layers.len() {
            names.push(format!("layer{l}.w_input"));
            names.push(format!("layer{l}.w_recurrent"));
            names.push(format!("layer{l}.bias"));
        }
        names.push("head.weight".into());
        names.push("head.bias".into());
        names
    }

    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(Vec<usize>, &[f64])> = Vec::new();
        for l in &self.layers {
            out.push((l.w_input.shape().to_vec(), l.w_input.as_slice().unwrap()));
            out.push((l.w_recurrent.shape().to_vec(), l.w_recurrent.as_slice().unwrap()));
            out.push((l.bias.shape().to_vec(), l.bias.as_slice().unwrap()));
        }
        out.push((self.head_weight.shape().to_vec(), self.head_weight.as_slice().unwrap()));
        out.push((self.head_bias.shape().to_vec(), self.head_bias.as_slice().unwrap()));
        self.names()
            .into_iter()
            .zip(out)
            .map(|(n, (s, d))| (n, s, d))
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::new();
        for l in &mut self.layers {
            out.push(l.w_input.as_slice_mut().unwrap());
            out.push(l.w_recurrent.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
        }
        out.push(self.head_weight.as_slice_mut().unwrap());
        out.push(self.head_bias.as_slice_mut().unwrap());
        out
    }

    pub fn num_values(&self) -> usize {
        self.tensors().iter().map(|(_, _, d)| d.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|(_, _, d)| d.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            for v in t {
                *v *= factor;
            }
        }
    }

    pub fn check_finite(&self) -> Result<()> {
        for (name, _, data) in self.tensors() {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { name });
            }
        }
        Ok(())
    }
}

/// Uniform(-k, k) weights with k = 1/sqrt(fan_in), forget-gate bias 1, other
/// biases 0. An LSTM layer's fan-in is its input width plus its hidden width.
pub fn init_params(config: &ModelConfig, seed: u64) -> Params {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = Params::zeros(config);
    let hid = config.hidden_size;
    for layer in &mut p.layers {
        let k = init_bound(layer.input_dim() + hid);
        let dist = Uniform::new_inclusive(-k, k).expect("finite bound");
        layer.w_input.mapv_inplace(|_| dist.sample(&mut rng));
        layer.w_recurrent.mapv_inplace(|_| dist.sample(&mut rng));
        layer.bias.slice_mut(s![hid..2 * hid]).fill(1.0);
    }
    let k = init_bound(hid);
    let dist = Uniform::new_inclusive(-k, k).expect("finite bound");
    p.head_weight.mapv_inplace(|_| dist.sample(&mut rng));
    p
}

pub fn init_bound(fan_in: usize) -> f64 {
    1.0 / (fan_in as f64).sqrt()
}

/// Per-sequence inverted-dropout masks, reused at every time step.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMasks {
    /// Output of layer `l` (input of layer `l + 1`, or of the head): B x H each.
    pub between: Vec<Array2<f64>>,
    /// Recurrent input `h_{t-1}` of layer `l`: B x H each.
    pub recurrent: Vec<Array2<f64>>,
}

impl DropoutMasks {
    pub fn ones(config: &ModelConfig, batch: usize) -> Self {
        let m = Array2::ones((batch, config.hidden_size));
        DropoutMasks {
            between: vec![m.clone(); config.num_layers],
            recurrent: vec![m; config.num_layers],
        }
    }

    /// Entries are 0 with probability `rate`, else `1 / (1 - rate)`.
    pub fn sample<R: Rng>(config: &ModelConfig, batch: usize, rng: &mut R) -> Self {
        let rate = config.dropout_rate;
        if rate <= 0.0 {
            return Self::ones(config, batch);
        }
        let keep = Bernoulli::new(1.0 - rate).expect("rate in [0, 1)");
        let scale = 1.0 / (1.0 - rate);
        let mut draw = || {
            Array2::from_shape_simple_fn((batch, config.hidden_size), || {
                if keep.sample(rng) {
                    scale
                } else {
                    0.0
                }
            })
        };
        let between = (0..config.num_layers).map(|_| draw()).collect();
        let recurrent = (0..config.num_layers).map(|_| draw()).collect();
        DropoutMasks { between, recurrent }
    }
}

#[derive(Debug, Clone, Default)]
struct LayerCache {
    /// masked layer input, TB x in
    input: Array2<f64>,
    /// masked h_{t-1}, TB x H
    h_prev: Array2<f64>,
    /// activated gates, TB x 4H
    gates: Array2<f64>,
    /// cell state, TB x H
    cell: Array2<f64>,
    tanh_cell: Array2<f64>,
}

/// Activations kept by [`forward`] for [`backward`]. The default value is an
/// empty cache, which `backward` rejects.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    steps: usize,
    batch: usize,
    layers: Vec<LayerCache>,
    top: Array2<f64>,
    masks: Option<DropoutMasks>,
}

/// Runs the network over `inputs` (T x B x input_dim). With `masks`, applies
/// dropout between layers, before the head, and on recurrent inputs.
pub fn forward(
    params: &Params,
    inputs: &Array3<f64>,
    masks: Option<&DropoutMasks>,
) -> Result<(Array3<f64>, ForwardCache)> {
    run(params, inputs, masks, true)
}

/// Inference pass: no dropout, no cache.
pub fn infer(params: &Params, inputs: &Array3<f64>) -> Result<Array3<f64>> {
    Ok(run(params, inputs, None, false)?.0)
}

fn run(
    params: &Params,
    inputs: &Array3<f64>,
    masks: Option<&DropoutMasks>,
    keep: bool,
) -> Result<(Array3<f64>, ForwardCache)> {
    let (steps, batch, in_dim) = inputs.dim();
    let first = params
        .layers
        .first()
        .ok_or_else(|| Error::Shape("network has no layers".into()))?;
    if in_dim != first.input_dim() {
        return Err(Error::Shape(format!(
            "input dimension {in_dim}, network expects {}",
            first.input_dim()
        )));
    }
    if let Some(m) = masks {
        let hid = first.hidden_size();
        let ok = m.between.len() == params.layers.len()
            && m.recurrent.len() == params.layers.len()
            && m.between.iter().chain(&m.recurrent).all(|a| a.dim() == (batch, hid));
        if !ok {
            return Err(Error::Shape("dropout masks do not match batch/network".into()));
        }
    }

    let rows = steps * batch;
    let mut x = inputs
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, in_dim))
        .expect("standard layout");
    let mut caches = Vec::with_capacity(params.layers.len());

    for (l, layer) in params.layers.iter().enumerate() {
        let hid = layer.hidden_size();
        let rec_mask = masks.map(|m| &m.recurrent[l]);
        let mut gates = Array2::zeros((rows, 4 * hid));
        for t in 0..steps {
            gates.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&layer.bias);
        }
        general_mat_mul(1.0, &x, &layer.w_input, 1.0, &mut gates);

        let mut h_prev_all = Array2::zeros((rows, hid));
        let mut cell = Array2::zeros((rows, hid));
        let mut tanh_cell = Array2::zeros((rows, hid));
        let mut h_out = Array2::zeros((rows, hid));

        for t in 0..steps {
            let r = t * batch..(t + 1) * batch;
            if t > 0 {
                let prev = h_out.slice(s![(t - 1) * batch..t * batch, ..]).to_owned();
                let prev = match rec_mask {
                    Some(m) => prev * m,
                    None => prev,
                };
                h_prev_all.slice_mut(s![r.clone(), ..]).assign(&prev);
                let mut z = gates.slice_mut(s![r.clone(), ..]);
                general_mat_mul(1.0, &prev, &layer.w_recurrent, 1.0, &mut z);
            }
            for b in 0..batch {
                let row = t * batch + b;
                let mut g = gates.row_mut(row);
                let g = g.as_slice_mut().unwrap();
                for j in 0..hid {
                    g[j] = sigmoid(g[j]);
                    g[hid + j] = sigmoid(g[hid + j]);
                    g[2 * hid + j] = g[2 * hid + j].tanh();
                    g[3 * hid + j] = sigmoid(g[3 * hid + j]);
                }
                for j in 0..hid {
                    let c_prev = if t > 0 { cell[[row - batch, j]] } else { 0.0 };
                    let c = g[hid + j] * c_prev + g[j] * g[2 * hid + j];
                    let tc = c.tanh();
                    cell[[row, j]] = c;
                    tanh_cell[[row, j]] = tc;
                    h_out[[row, j]] = g[3 * hid + j] * tc;
                }
            }
        }

        if let Some(m) = masks {
            apply_blocks(&mut h_out, &m.between[l], batch);
        }
        let next = h_out;
        if keep {
            caches.push(LayerCache {
                input: std::mem::replace(&mut x, next),
                h_prev: h_prev_all,
                gates,
                cell,
                tanh_cell,
            });
        } else {
            x = next;
        }
    }

    let out_dim = params.head_bias.len();
    let mut y = Array2::zeros((rows, out_dim));
    for r in 0..rows {
        y.row_mut(r).assign(&params.head_bias);
    }
    general_mat_mul(1.0, &x, &params.head_weight, 1.0, &mut y);
    let y = y
        .into_shape_with_order((steps, batch, out_dim))
        .expect("standard layout");

    let cache = if keep {
        ForwardCache {
            steps,
            batch,
            layers: caches,
            top: x,
            masks: masks.cloned(),
        }
    } else {
        ForwardCache::default()
    };
    Ok((y, cache))
}

/// Multiplies each `B`-row time block of `m` by `mask` (B x cols).
fn apply_blocks(m: &mut Array2<f64>, mask: &Array2<f64>, batch: usize) {
    for mut block in m.axis_chunks_iter_mut(Axis(0), batch) {
        block *= mask;
    }
}

/// Gradients of every parameter given dLoss/dOutput (T x B x output_dim).
pub fn backward(params: &Params, cache: &ForwardCache, d_output: &Array3<f64>) -> Result<Params> {
    if cache.layers.is_empty() || cache.layers.len() != params.layers.len() {
        return Err(Error::State(
            "no forward cache for these parameters; run a training forward pass first".into(),
        ));
    }
    let (steps, batch) = (cache.steps, cache.batch);
    let out_dim = params.head_bias.len();
    if d_output.dim() != (steps, batch, out_dim) {
        return Err(Error::Shape(format!(
            "output gradient shape {:?}, forward pass produced ({steps}, {batch}, {out_dim})",
            d_output.dim()
        )));
    }
    let rows = steps * batch;
    let dy = d_output
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((rows, out_dim))
        .expect("standard layout");

    let mut grads = params.zeros_like();
    general_mat_mul(1.0, &cache.top.t(), &dy, 0.0, &mut grads.head_weight);
    grads.head_bias = dy.sum_axis(Axis(0));

    let mut d_h = dy.dot(&params.head_weight.t());
    let n_layers = params.layers.len();
    if let Some(m) = &cache.masks {
        apply_blocks(&mut d_h, &m.between[n_layers - 1], batch);
    }

    for l in (0..n_layers).rev() {
        let layer = &params.layers[l];
        let lc = &cache.layers[l];
        let hid = layer.hidden_size();
        let rec_mask = cache.masks.as_ref().map(|m| &m.recurrent[l]);

        let mut dz = Array2::<f64>::zeros((rows, 4 * hid));
        let mut dh_next = Array2::<f64>::zeros((batch, hid));
        let mut dc_next = Array2::<f64>::zeros((batch, hid));

        for t in (0..steps).rev() {
            for b in 0..batch {
                let row = t * batch + b;
                let g = lc.gates.row(row);
                let g = g.as_slice().unwrap();
                let mut dzr = dz.row_mut(row);
                let dzr = dzr.as_slice_mut().unwrap();
                for j in 0..hid {
                    let (i, f, gg, o) = (g[j], g[hid + j], g[2 * hid + j], g[3 * hid + j]);
                    let tc = lc.tanh_cell[[row, j]];
                    let c_prev = if t > 0 { lc.cell[[row - batch, j]] } else { 0.0 };
                    let dh = d_h[[row, j]] + dh_next[[b, j]];
                    let dc = dc_next[[b, j]] + dh * o * (1.0 - tc * tc);
                    dzr[j] = dc * gg * i * (1.0 - i);
                    dzr[hid + j] = dc * c_prev * f * (1.0 - f);
                    dzr[2 * hid + j] = dc * i * (1.0 - gg * gg);
                    dzr[3 * hid + j] = dh * tc * o * (1.0 - o);
                    dc_next[[b, j]] = dc * f;
                }
            }
            if t > 0 {
                let dz_t = dz.slice(s![t * batch..(t + 1) * batch, ..]);
                general_mat_mul(1.0, &dz_t, &layer.w_recurrent.t(), 0.0, &mut dh_next);
                if let Some(m) = rec_mask {
                    dh_next *= m;
                }
            }
        }

        let grads_l = &mut grads.layers[l];
        general_mat_mul(1.0, &lc.input.t(), &dz, 0.0, &mut grads_l.w_input);
        general_mat_mul(1.0, &lc.h_prev.t(), &dz, 0.0, &mut grads_l.w_recurrent);
        grads_l.bias = dz.sum_axis(Axis(0));

        if l > 0 {
            d_h = dz.dot(&layer.w_input.t());
            if let Some(m) = &cache.masks {
                apply_blocks(&mut d_h, &m.between[l - 1], batch);
            }
        }
    }
    Ok(grads)
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut Params, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm && norm.is_finite() {
        grads.scale(max_norm / norm);
    }
    norm
}

/// Masked mean squared error over a batch. `weights` (T x B) selects which
/// (step, sequence) pairs count; N is their sum. Each counted step contributes
/// the squared error summed over all output coordinates.
pub fn masked_mse(
    predicted: &Array3<f64>,
    target: &Array3<f64>,
    weights: ArrayView2<f64>,
) -> Result<(f64, Array3<f64>)> {
    if predicted.dim() != target.dim() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs target {:?}",
            predicted.dim(),
            target.dim()
        )));
    }
    let (steps, batch, _) = predicted.dim();
    if weights.dim() != (steps, batch) {
        return Err(Error::Shape(format!(
            "loss weights {:?}, expected ({steps}, {batch})",
            weights.dim()
        )));
    }
    let n: f64 = weights.sum();
    let mut grad = Array3::zeros(predicted.raw_dim());
    if n <= 0.0 {
        return Ok((0.0, grad));
    }
    let mut total = 0.0;
    for t in 0..steps {
        for b in 0..batch {
            let w = weights[[t, b]];
            if w == 0.0 {
                continue;
            }
            let p = predicted.slice(s![t, b, ..]);
            let y = target.slice(s![t, b, ..]);
            let mut g = grad.slice_mut(s![t, b, ..]);
            for ((gk, pk), yk) in g.iter_mut().zip(p).zip(y) {
                let d = pk - yk;
                total += w * d * d;
                *gk = 2.0 * w * d / n;
            }
        }
    }
    Ok((total / n, grad))
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}
