use crate::error::{Error, Result};

use super::{MlpGrads, MlpParams, Tensor2};

#[derive(Debug, Clone, Copy)]
pub struct AdamWConfig {
    pub lr: f32,
    pub weight_decay: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
}

impl AdamWConfig {
    pub fn with_lr(lr: f32, weight_decay: f32) -> Self {
        Self { lr, weight_decay, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment buffers matching the parameter shapes.
#[derive(Debug, Clone)]
pub struct AdamWState {
    pub config: AdamWConfig,
    pub step: u64,
    m_w: Vec<Tensor2>,
    v_w: Vec<Tensor2>,
    m_b: Vec<Vec<f32>>,
    v_b: Vec<Vec<f32>>,
}

impl AdamWState {
    pub fn new(params: &MlpParams, config: AdamWConfig) -> Self {
        let zeros = MlpGrads::zeros_like(params);
        Self {
            config,
            step: 0,
            m_w: zeros.weights.clone(),
            v_w: zeros.weights,
            m_b: zeros.biases.clone(),
            v_b: zeros.biases,
        }
    }
}

#[inline]
fn update_slice(
    p: &mut [f32],
    g: &[f32],
    m: &mut [f32],
    v: &mut [f32],
    c: &AdamWConfig,
    bc1: f32,
    bc2: f32,
) {
    for i in 0..p.len() {
        p[i] *= 1.0 - c.lr * c.weight_decay;
        m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g[i];
        v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g[i] * g[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        p[i] -= c.lr * m_hat / (v_hat.sqrt() + c.eps);
    }
}

/// One decoupled-weight-decay Adam step in place.
pub fn adamw_step(
    params: &mut MlpParams,
    grads: &MlpGrads,
    state: &mut AdamWState,
) -> Result<()> {
    if grads.weights.len() != params.layers.len() {
        return Err(Error::Shape("gradient layer count mismatch".into()));
    }
    for (l, layer) in params.layers.iter().enumerate() {
        if !grads.weights[l].same_shape(&layer.weight)
            || grads.biases[l].len() != layer.bias.len()
        {
            return Err(Error::Shape(format!("gradient shape mismatch at layer {l}")));
        }
        if !grads.weights[l].is_finite() || !grads.biases[l].iter().all(|v| v.is_finite()) {
            return Err(Error::Training(format!("non-finite gradient at layer {l}")));
        }
    }
    state.step += 1;
    let c = state.config;
    let bc1 = 1.0 - c.beta1.powi(state.step as i32);
    let bc2 = 1.0 - c.beta2.powi(state.step as i32);
    for (l, layer) in params.layers.iter_mut().enumerate() {
        update_slice(
            &mut layer.weight.data,
            &grads.weights[l].data,
            &mut state.m_w[l].data,
            &mut state.v_w[l].data,
            &c,
            bc1,
            bc2,
        );
        update_slice(
            &mut layer.bias,
            &grads.biases[l],
            &mut state.m_b[l],
            &mut state.v_b[l],
            &c,
            bc1,
            bc2,
        );
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Activation, Rng};

    fn scalar_net(value: f32) -> MlpParams {
        let mut rng = Rng::seed(0);
        let mut p = MlpParams::new(&[1, 1], &[Activation::Identity], &mut rng).unwrap();
        p.layers[0].weight.data[0] = value;
        p.layers[0].bias[0] = 0.0;
        p
    }

    fn scalar_grads(p: &MlpParams, g: f32) -> MlpGrads {
        let mut grads = MlpGrads::zeros_like(p);
        grads.weights[0].data[0] = g;
        grads
    }

    #[test]
    fn zero_gradient_no_decay_unchanged() {
        let mut p = scalar_net(1.5);
        let g = scalar_grads(&p, 0.0);
        let mut s = AdamWState::new(&p, AdamWConfig::with_lr(0.1, 0.0));
        adamw_step(&mut p, &g, &mut s).unwrap();
        assert_eq!(p.layers[0].weight.data[0], 1.5);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn first_step_is_signed_lr() {
        // Bias-corrected moments make the first step ~ -lr * sign(g).
        let mut p = scalar_net(1.0);
        let g = scalar_grads(&p, 1.0);
        let mut s = AdamWState::new(&p, AdamWConfig::with_lr(0.1, 0.0));
        adamw_step(&mut p, &g, &mut s).unwrap();
        let got = p.layers[0].weight.data[0];
        assert!((got - 0.9).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn decay_only_shrinks() {
        let mut p = scalar_net(2.0);
        let g = scalar_grads(&p, 0.0);
        let mut s = AdamWState::new(&p, AdamWConfig::with_lr(0.1, 0.01));
        adamw_step(&mut p, &g, &mut s).unwrap();
        let want = 2.0 * (1.0 - 0.1 * 0.01);
        assert!((p.layers[0].weight.data[0] - want).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut p = scalar_net(1.0);
        let g = scalar_grads(&p, f32::NAN);
        let mut s = AdamWState::new(&p, AdamWConfig::with_lr(0.1, 0.0));
        let err = adamw_step(&mut p, &g, &mut s).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }
}
