//! Fully connected networks over a flat parameter vector.
//!
//! Layer `l` stores its weight matrix `fan_in x fan_out` row-major, followed
//! by its bias. Inputs are batches with one sample per row.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{invalid, Result, SeqPenError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
    Softmax,
    Identity,
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Sigmoid => z.mapv_inplace(|v| 1.0 / (1.0 + (-v).exp())),
            Activation::Identity => {}
            Activation::Softmax => {
                for mut row in z.rows_mut() {
                    let max = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
                    row.mapv_inplace(|v| (v - max).exp());
                    let sum = row.sum();
                    row /= sum;
                }
            }
        }
    }

    /// Turns `dL/dy` into `dL/dz` given the layer output `y`.
    fn backprop(self, y: &Array2<f64>, dy: &mut Array2<f64>) {
        match self {
            Activation::Relu => ndarray::Zip::from(dy).and(y).for_each(|d, &y| {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }),
            Activation::Sigmoid => ndarray::Zip::from(dy).and(y).for_each(|d, &y| *d *= y * (1.0 - y)),
            Activation::Identity => {}
            Activation::Softmax => {
                for (mut d, y) in dy.rows_mut().into_iter().zip(y.rows()) {
                    let dot = d.dot(&y);
                    ndarray::Zip::from(&mut d).and(&y).for_each(|d, &y| *d = y * (*d - dot));
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            fan_in,
            fan_out,
            activation,
        }
    }

    pub fn param_len(&self) -> usize {
        self.fan_in * self.fan_out + self.fan_out
    }
}

#[derive(Debug, Clone)]
pub struct DenseNet {
    layers: Vec<LayerSpec>,
    offsets: Vec<usize>,
}

/// Activations kept by [`DenseNet::forward`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Array2<f64>>,
    fingerprint: u64,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("at least the input")
    }
}

fn fingerprint(params: &[f64]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ params.len() as u64;
    for v in params {
        h = (h ^ v.to_bits()).wrapping_mul(0x0000_0100_0000_01b3).rotate_left(5);
    }
    h
}

impl DenseNet {
    pub fn new(layers: Vec<LayerSpec>) -> Result<Self> {
        if layers.is_empty() {
            return Err(invalid("network needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].fan_out != w[1].fan_in {
                return Err(SeqPenError::DimensionMismatch {
                    expected: w[0].fan_out,
                    got: w[1].fan_in,
                });
            }
        }
        if layers.iter().any(|l| l.fan_in == 0 || l.fan_out == 0) {
            return Err(invalid("layer widths must be positive"));
        }
        let mut offsets = vec![0];
        for l in &layers {
            offsets.push(offsets.last().unwrap() + l.param_len());
        }
        Ok(Self { layers, offsets })
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn param_len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().fan_out
    }

    /// Uniform weights in `+-sqrt(6 / (fan_in + fan_out))`, zero biases.
    pub fn init_params<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut params = vec![0.0; self.param_len()];
        for (l, spec) in self.layers.iter().enumerate() {
            let limit = (6.0 / (spec.fan_in + spec.fan_out) as f64).sqrt();
            let start = self.offsets[l];
            for w in &mut params[start..start + spec.fan_in * spec.fan_out] {
                *w = rng.gen_range(-limit..limit);
            }
        }
        params
    }

    fn layer_params<'a>(&self, params: &'a [f64], l: usize) -> (ArrayView2<'a, f64>, &'a [f64]) {
        let spec = self.layers[l];
        let start = self.offsets[l];
        let nw = spec.fan_in * spec.fan_out;
        let w = ArrayView2::from_shape((spec.fan_in, spec.fan_out), &params[start..start + nw]).expect("layout");
        (w, &params[start + nw..start + nw + spec.fan_out])
    }

    fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_len() {
            return Err(SeqPenError::DimensionMismatch {
                expected: self.param_len(),
                got: params.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, params: &[f64], inputs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
        self.check_params(params)?;
        if inputs.ncols() != self.input_dim() {
            return Err(SeqPenError::DimensionMismatch {
                expected: self.input_dim(),
                got: inputs.ncols(),
            });
        }
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(inputs.to_owned());
        for (l, spec) in self.layers.iter().enumerate() {
            let (w, b) = self.layer_params(params, l);
            let mut z = acts[l].dot(&w);
            z += &ArrayView2::from_shape((1, spec.fan_out), b).expect("bias row");
            spec.activation.apply(&mut z);
            acts.push(z);
        }
        let out = acts.last().unwrap().clone();
        Ok((
            out,
            ForwardCache {
                acts,
                fingerprint: fingerprint(params),
            },
        ))
    }

    /// Adds the parameter gradient of `sum(grad_out * output)` into `grad`
    /// and returns the input gradient.
    pub fn backward_into(
        &self,
        params: &[f64],
        cache: &ForwardCache,
        grad_out: ArrayView2<'_, f64>,
        grad: &mut [f64],
    ) -> Result<Array2<f64>> {
        self.check_params(params)?;
        if grad.len() != params.len() {
            return Err(SeqPenError::DimensionMismatch {
                expected: params.len(),
                got: grad.len(),
            });
        }
        if cache.acts.len() != self.layers.len() + 1 || cache.fingerprint != fingerprint(params) {
            return Err(SeqPenError::StaleCache);
        }
        if grad_out.dim() != cache.output().dim() {
            return Err(SeqPenError::DimensionMismatch {
                expected: cache.output().len(),
                got: grad_out.len(),
            });
        }
        let mut delta = grad_out.to_owned();
        for l in (0..self.layers.len()).rev() {
            let spec = self.layers[l];
            spec.activation.backprop(&cache.acts[l + 1], &mut delta);
            let (w, _) = self.layer_params(params, l);
            let start = self.offsets[l];
            let nw = spec.fan_in * spec.fan_out;
            let gw = cache.acts[l].t().dot(&delta);
            let gb: Array1<f64> = delta.sum_axis(Axis(0));
            for (g, v) in grad[start..start + nw].iter_mut().zip(gw.iter()) {
                *g += v;
            }
            for (g, v) in grad[start + nw..start + nw + spec.fan_out].iter_mut().zip(gb.iter()) {
                *g += v;
            }
            delta = delta.dot(&w.t());
        }
        Ok(delta)
    }

    pub fn backward(&self, params: &[f64], cache: &ForwardCache, grad_out: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; params.len()];
        self.backward_into(params, cache, grad_out, &mut grad)?;
        Ok(grad)
    }
}

pub fn mlp_forward(net: &DenseNet, params: &[f64], inputs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, ForwardCache)> {
    net.forward(params, inputs)
}

pub fn mlp_backward(
    net: &DenseNet,
    params: &[f64],
    cache: &ForwardCache,
    grad_out: ArrayView2<'_, f64>,
) -> Result<Vec<f64>> {
    net.backward(params, cache, grad_out)
}

pub const PROB_FLOOR: f64 = 1e-12;

/// `-ln p[label]`, with `p[label]` floored at [`PROB_FLOOR`].
pub fn ce_loss(probs: &[f64], label: usize) -> f64 {
    let p = probs[label];
    if p <= 0.0 {
        log::warn!("probability of the true class is {p}; clamping to {PROB_FLOOR}");
    }
    -p.max(PROB_FLOOR).ln()
}

/// Gradient of [`ce_loss`] with respect to the probabilities.
pub fn ce_grad(probs: &[f64], label: usize) -> Vec<f64> {
    let mut g = vec![0.0; probs.len()];
    g[label] = -1.0 / probs[label].max(PROB_FLOOR);
    g
}

/// Mean squared pixel error.
pub fn mse_loss(image: &[f64], recon: &[f64]) -> f64 {
    let d: f64 = image.iter().zip(recon).map(|(a, b)| (b - a) * (b - a)).sum();
    d / image.len() as f64
}

/// Gradient of [`mse_loss`] with respect to the reconstruction.
pub fn mse_grad(image: &[f64], recon: &[f64]) -> Vec<f64> {
    let k = 2.0 / image.len() as f64;
    image.iter().zip(recon).map(|(a, b)| k * (b - a)).collect()
}

/// Keeps only rows `rows` of a batch.
pub(crate) fn gather_rows(src: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), src.ncols()));
    for (k, &r) in rows.iter().enumerate() {
        out.slice_mut(s![k, ..]).assign(&src.slice(s![r, ..]));
    }
    out
}
