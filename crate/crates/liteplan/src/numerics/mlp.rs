use crate::constants::LAYERNORM_EPS;
use crate::error::{Error, Result};

use super::{Rng, Tensor2};

/// Per-layer nonlinearity applied after the affine map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Mish,
    /// Mish followed by a (non-affine) LayerNorm over the feature axis.
    MishLayerNorm,
    Tanh,
}

impl Activation {
    pub fn tag(&self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Mish => "mish",
            Activation::MishLayerNorm => "mish_layernorm",
            Activation::Tanh => "tanh",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "identity" => Ok(Activation::Identity),
            "mish" => Ok(Activation::Mish),
            "mish_layernorm" => Ok(Activation::MishLayerNorm),
            "tanh" => Ok(Activation::Tanh),
            other => Err(Error::Config(format!("unknown activation tag {other}"))),
        }
    }
}

#[inline]
fn softplus(z: f32) -> f32 {
    if z > 20.0 {
        z
    } else if z < -20.0 {
        z.exp()
    } else {
        z.exp().ln_1p()
    }
}

#[inline]
pub(crate) fn mish(z: f32) -> f32 {
    z * softplus(z).tanh()
}

#[inline]
fn mish_grad(z: f32) -> f32 {
    let sp = softplus(z);
    let t = sp.tanh();
    let sig = 1.0 / (1.0 + (-z).exp());
    t + z * (1.0 - t * t) * sig
}

/// One affine layer. `weight` is stored input-major (`in x out`) so that a
/// batch forward is `x * W + b`.
#[derive(Debug, Clone)]
pub struct Layer {
    pub weight: Tensor2,
    pub bias: Vec<f32>,
    pub activation: Activation,
}

/// Parameters of a feed-forward network.
#[derive(Debug, Clone)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
}

/// Gradients shaped exactly like [`MlpParams`].
#[derive(Debug, Clone)]
pub struct MlpGrads {
    pub weights: Vec<Tensor2>,
    pub biases: Vec<Vec<f32>>,
}

/// Activations cached by `forward`, sufficient for exact backprop.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer plus the final output (`layers.len() + 1` entries).
    pub inputs: Vec<Tensor2>,
    /// Pre-activation of each layer.
    pub preacts: Vec<Tensor2>,
    /// Mish output for MishLayerNorm layers (`None` otherwise).
    pub mish_out: Vec<Option<Tensor2>>,
    /// Per-row 1/std for MishLayerNorm layers.
    pub inv_std: Vec<Option<Vec<f32>>>,
}

impl MlpParams {
    /// Build a network from a width chain and per-layer activations.
    /// Weights are drawn N(0, 1/fan_in), biases zero.
    pub fn new(widths: &[usize], activations: &[Activation], rng: &mut Rng) -> Result<Self> {
        if widths.len() < 2 {
            return Err(Error::Config("width list needs at least two entries".into()));
        }
        if activations.len() != widths.len() - 1 {
            return Err(Error::Config(format!(
                "{} activations for {} layers",
                activations.len(),
                widths.len() - 1
            )));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, act) in activations.iter().enumerate() {
            let (fan_in, fan_out) = (widths[i], widths[i + 1]);
            let scale = (1.0 / fan_in as f32).sqrt();
            let mut weight = rng.randn(fan_in, fan_out);
            for v in weight.data.iter_mut() {
                *v *= scale;
            }
            layers.push(Layer { weight, bias: vec![0.0; fan_out], activation: *act });
        }
        Ok(Self { layers })
    }

    pub fn input_width(&self) -> usize {
        self.layers[0].weight.rows
    }

    pub fn output_width(&self) -> usize {
        self.layers.last().unwrap().weight.cols
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.data.len() + l.bias.len())
            .sum()
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_width()];
        w.extend(self.layers.iter().map(|l| l.weight.cols));
        w
    }

    /// Batched forward pass; the cache holds everything backprop needs.
    pub fn forward(&self, input: &Tensor2) -> Result<(Tensor2, ForwardCache)> {
        if input.cols != self.input_width() {
            return Err(Error::Shape(format!(
                "input cols {} vs network input width {}",
                input.cols,
                self.input_width()
            )));
        }
        let mut cache = ForwardCache {
            inputs: vec![input.clone()],
            preacts: Vec::with_capacity(self.layers.len()),
            mish_out: Vec::with_capacity(self.layers.len()),
            inv_std: Vec::with_capacity(self.layers.len()),
        };
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            cache.preacts.push(z.clone());
            let y = match layer.activation {
                Activation::Identity => {
                    cache.mish_out.push(None);
                    cache.inv_std.push(None);
                    z
                }
                Activation::Mish => {
                    cache.mish_out.push(None);
                    cache.inv_std.push(None);
                    z.map(mish)
                }
                Activation::Tanh => {
                    cache.mish_out.push(None);
                    cache.inv_std.push(None);
                    z.map(f32::tanh)
                }
                Activation::MishLayerNorm => {
                    let m = z.map(mish);
                    let n = m.cols as f32;
                    let mut y = Tensor2::zeros(m.rows, m.cols);
                    let mut inv_stds = Vec::with_capacity(m.rows);
                    for r in 0..m.rows {
                        let row = m.row(r);
                        let mean = row.iter().sum::<f32>() / n;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
                        let inv_std = 1.0 / (var + LAYERNORM_EPS).sqrt();
                        inv_stds.push(inv_std);
                        for (c, v) in row.iter().enumerate() {
                            y.set(r, c, (v - mean) * inv_std);
                        }
                    }
                    cache.mish_out.push(Some(m));
                    cache.inv_std.push(Some(inv_stds));
                    y
                }
            };
            cache.inputs.push(y.clone());
            x = y;
        }
        Ok((x, cache))
    }

    /// Inference-only forward without cache allocation.
    pub fn infer(&self, input: &Tensor2) -> Result<Tensor2> {
        if input.cols != self.input_width() {
            return Err(Error::Shape(format!(
                "input cols {} vs network input width {}",
                input.cols,
                self.input_width()
            )));
        }
        let mut x = input.clone();
        for layer in &self.layers {
            let mut z = x.matmul(&layer.weight)?;
            z.add_row_vector(&layer.bias)?;
            x = match layer.activation {
                Activation::Identity => z,
                Activation::Mish => z.map(mish),
                Activation::Tanh => z.map(f32::tanh),
                Activation::MishLayerNorm => {
                    let m = z.map(mish);
                    let n = m.cols as f32;
                    let mut y = Tensor2::zeros(m.rows, m.cols);
                    for r in 0..m.rows {
                        let row = m.row(r);
                        let mean = row.iter().sum::<f32>() / n;
                        let var =
                            row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / n;
                        let inv_std = 1.0 / (var + LAYERNORM_EPS).sqrt();
                        for (c, v) in row.iter().enumerate() {
                            y.set(r, c, (v - mean) * inv_std);
                        }
                    }
                    y
                }
            };
        }
        Ok(x)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        if cache.inputs.len() != self.layers.len() + 1
            || cache.preacts.len() != self.layers.len()
        {
            return Err(Error::Shape("cache does not match network depth".into()));
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if cache.inputs[i].cols != layer.weight.rows
                || cache.preacts[i].cols != layer.weight.cols
            {
                return Err(Error::Shape(format!(
                    "cache layer {i} widths do not match parameters"
                )));
            }
        }
        Ok(())
    }

    /// Reverse-mode gradients. Returns parameter gradients and the gradient
    /// with respect to the network input.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        output_grad: &Tensor2,
    ) -> Result<(MlpGrads, Tensor2)> {
        self.check_cache(cache)?;
        if !output_grad.same_shape(cache.inputs.last().unwrap()) {
            return Err(Error::Shape(format!(
                "output grad {}x{} vs output {}x{}",
                output_grad.rows,
                output_grad.cols,
                cache.inputs.last().unwrap().rows,
                cache.inputs.last().unwrap().cols
            )));
        }
        let mut weights = vec![Tensor2::zeros(0, 0); self.layers.len()];
        let mut biases = vec![Vec::new(); self.layers.len()];
        let mut dy = output_grad.clone();
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &cache.preacts[l];
            let dz = match layer.activation {
                Activation::Identity => dy,
                Activation::Mish => {
                    let mut dz = dy;
                    for (g, &zv) in dz.data.iter_mut().zip(z.data.iter()) {
                        *g *= mish_grad(zv);
                    }
                    dz
                }
                Activation::Tanh => {
                    let y = &cache.inputs[l + 1];
                    let mut dz = dy;
                    for (g, &yv) in dz.data.iter_mut().zip(y.data.iter()) {
                        *g *= 1.0 - yv * yv;
                    }
                    dz
                }
                Activation::MishLayerNorm => {
                    let y = &cache.inputs[l + 1];
                    let inv_std = cache.inv_std[l]
                        .as_ref()
                        .ok_or_else(|| Error::Shape("cache missing layernorm stats".into()))?;
                    let n = y.cols as f32;
                    let mut dm = Tensor2::zeros(y.rows, y.cols);
                    for r in 0..y.rows {
                        let dy_row = dy.row(r);
                        let y_row = y.row(r);
                        let mean_dy = dy_row.iter().sum::<f32>() / n;
                        let mean_dyy = dy_row
                            .iter()
                            .zip(y_row)
                            .map(|(a, b)| a * b)
                            .sum::<f32>()
                            / n;
                        let s = inv_std[r];
                        for c in 0..y.cols {
                            dm.set(r, c, s * (dy_row[c] - mean_dy - y_row[c] * mean_dyy));
                        }
                    }
                    let mut dz = dm;
                    for (g, &zv) in dz.data.iter_mut().zip(z.data.iter()) {
                        *g *= mish_grad(zv);
                    }
                    dz
                }
            };
            let x = &cache.inputs[l];
            weights[l] = x.matmul_at_b(&dz)?;
            let mut db = vec![0.0f32; dz.cols];
            for r in 0..dz.rows {
                for (b, &g) in db.iter_mut().zip(dz.row(r)) {
                    *b += g;
                }
            }
            biases[l] = db;
            dy = dz.matmul_a_bt(&layer.weight)?;
        }
        Ok((MlpGrads { weights, biases }, dy))
    }
}

impl MlpGrads {
    pub fn zeros_like(params: &MlpParams) -> Self {
        Self {
            weights: params
                .layers
                .iter()
                .map(|l| Tensor2::zeros(l.weight.rows, l.weight.cols))
                .collect(),
            biases: params.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }
}
