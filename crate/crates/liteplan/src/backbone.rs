//! Generative backbones behind a single contract: a diffusion noise
//! predictor sampled with DDIM, and a rectified-flow velocity field
//! sampled with Euler and straightened by reflow. Both support
//! classifier-free guidance on a scalar condition and endpoint
//! inpainting.

use crate::constants::{NULL_CONDITION, X0_CLIP};
use crate::error::{Error, Result};
use crate::numerics::{adamw_step, Activation, AdamWState, MlpParams, Rng, Tensor2};
use crate::schedule::{
    cfg_combine, ddim_grid, ddim_step, euler_flow_step, euler_grid, InpaintMask, Schedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Diffusion,
    RectifiedFlow,
}

impl BackboneKind {
    pub fn tag(&self) -> &'static str {
        match self {
            BackboneKind::Diffusion => "diffusion",
            BackboneKind::RectifiedFlow => "rf",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "diffusion" => Ok(BackboneKind::Diffusion),
            "rf" => Ok(BackboneKind::RectifiedFlow),
            other => Err(Error::Config(format!("unknown backbone kind {other}"))),
        }
    }
}

/// Token layout of the generated sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SequenceGeometry {
    pub tokens: usize,
    pub token_dim: usize,
}

impl SequenceGeometry {
    pub fn flat_width(&self) -> usize {
        self.tokens * self.token_dim
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SamplerConfig {
    pub sample_steps: usize,
    pub guidance: f32,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainBatchSpec {
    /// Probability of keeping the condition (the mask probability is 1 - p).
    pub keep_prob: f32,
}

#[derive(Debug, Clone, Copy)]
pub struct TrainStepInfo {
    pub loss: f32,
    pub conditional_rows: usize,
}

/// Sinusoidal embedding of the (continuous) diffusion/flow time.
pub fn time_embedding(s: f32, dim: usize, out: &mut [f32]) {
    debug_assert_eq!(out.len(), dim);
    let pairs = dim / 2;
    for k in 0..pairs {
        let freq = std::f32::consts::PI * (1 << k) as f32;
        out[2 * k] = (freq * s).sin();
        out[2 * k + 1] = (freq * s).cos();
    }
    if dim % 2 == 1 {
        out[dim - 1] = s;
    }
}

/// A parameterized noise or velocity predictor over flattened jumpy
/// sequences, with the training and sampling contracts attached.
/// Clamp the x0 reconstruction implied by a noise prediction to the
/// data range and fold the correction back into the prediction. At the
/// noise end of the schedule 1/alpha is enormous, so raw predictor
/// error would otherwise blow up the very first solver step.
pub fn stabilize_eps(sched: &Schedule, x_s: &Tensor2, eps_hat: &mut Tensor2, s: usize) {
    let a = sched.alpha[s];
    let g = sched.sigma[s];
    if g <= 0.0 {
        return;
    }
    for i in 0..eps_hat.data.len() {
        let x0 = (x_s.data[i] - g * eps_hat.data[i]) / a;
        if x0.abs() > X0_CLIP {
            let clamped = x0.clamp(-X0_CLIP, X0_CLIP);
            eps_hat.data[i] = (x_s.data[i] - a * clamped) / g;
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenerativeBackbone {
    pub kind: BackboneKind,
    pub geometry: SequenceGeometry,
    pub net: MlpParams,
    pub schedule: Option<Schedule>,
    pub s_embed_dim: usize,
    /// Flat sequence slots clamped to data values during training
    /// (first token; last token for refinement levels).
    pub train_clamp: Vec<usize>,
}

impl GenerativeBackbone {
    pub fn new(
        kind: BackboneKind,
        geometry: SequenceGeometry,
        hidden: &[usize],
        s_embed_dim: usize,
        schedule: Option<Schedule>,
        train_clamp: Vec<usize>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if kind == BackboneKind::Diffusion && schedule.is_none() {
            return Err(Error::Config("diffusion backbone requires a schedule".into()));
        }
        let data = geometry.flat_width();
        let mut widths = vec![data + s_embed_dim + 1];
        widths.extend_from_slice(hidden);
        widths.push(data);
        let mut acts = vec![Activation::Mish; hidden.len()];
        acts.push(Activation::Identity);
        let net = MlpParams::new(&widths, &acts, rng)?;
        for &slot in &train_clamp {
            if slot >= data {
                return Err(Error::Config(format!("train clamp slot {slot} out of range")));
            }
        }
        Ok(Self { kind, geometry, net, schedule, s_embed_dim, train_clamp })
    }

    pub fn input_width(&self) -> usize {
        self.geometry.flat_width() + self.s_embed_dim + 1
    }

    fn assemble(&self, x: &Tensor2, s_rows: &[f32], cond_rows: &[f32]) -> Result<Tensor2> {
        let data = self.geometry.flat_width();
        if x.cols != data || s_rows.len() != x.rows || cond_rows.len() != x.rows {
            return Err(Error::Shape(format!(
                "assemble: x {}x{}, {} s values, {} conditions",
                x.rows,
                x.cols,
                s_rows.len(),
                cond_rows.len()
            )));
        }
        let width = self.input_width();
        let mut input = Tensor2::zeros(x.rows, width);
        for r in 0..x.rows {
            let row = input.row_mut(r);
            row[..data].copy_from_slice(x.row(r));
            time_embedding(s_rows[r], self.s_embed_dim, &mut row[data..data + self.s_embed_dim]);
            row[width - 1] = cond_rows[r];
        }
        Ok(input)
    }

    /// Predict noise or velocity for a batch sharing one time but with
    /// per-row conditions.
    pub fn predict_rows(&self, x: &Tensor2, s: f32, cond_rows: &[f32]) -> Result<Tensor2> {
        let input = self.assemble(x, &vec![s; x.rows], cond_rows)?;
        self.net.infer(&input)
    }

    fn guided_prediction(
        &self,
        x: &Tensor2,
        s: f32,
        cond: f32,
        w: f32,
    ) -> Result<Tensor2> {
        if w == 1.0 {
            self.predict_rows(x, s, &vec![cond; x.rows])
        } else if w == 0.0 {
            self.predict_rows(x, s, &vec![NULL_CONDITION; x.rows])
        } else {
            let c = self.predict_rows(x, s, &vec![cond; x.rows])?;
            let u = self.predict_rows(x, s, &vec![NULL_CONDITION; x.rows])?;
            cfg_combine(&c, &u, w)
        }
    }

    fn mask_condition(
        &self,
        cond: &[f32],
        spec: &TrainBatchSpec,
        rng: &mut Rng,
    ) -> (Vec<f32>, usize) {
        let mut kept = 0usize;
        let out = cond
            .iter()
            .map(|&c| {
                if rng.uniform() < spec.keep_prob {
                    kept += 1;
                    c
                } else {
                    NULL_CONDITION
                }
            })
            .collect();
        (out, kept)
    }

    fn apply_grads(
        &mut self,
        input: Tensor2,
        resid: Tensor2,
        opt: &mut AdamWState,
    ) -> Result<f32> {
        let n = resid.rows as f32;
        let loss = resid.data.iter().map(|v| v * v).sum::<f32>() / n;
        if !loss.is_finite() {
            return Err(Error::Training(format!(
                "non-finite loss over batch of {} rows",
                resid.rows
            )));
        }
        let (_, cache) = self.net.forward(&input)?;
        let out_grad = resid.map(|v| 2.0 * v / n);
        let (grads, _) = self.net.backward(&cache, &out_grad)?;
        adamw_step(&mut self.net, &grads, opt)?;
        Ok(loss)
    }

    /// One noise-matching gradient step (diffusion backbone).
    pub fn diffusion_train_step(
        &mut self,
        opt: &mut AdamWState,
        x0: &Tensor2,
        cond: &[f32],
        spec: &TrainBatchSpec,
        rng: &mut Rng,
    ) -> Result<TrainStepInfo> {
        let sched = self
            .schedule
            .clone()
            .ok_or_else(|| Error::Config("diffusion_train_step without schedule".into()))?;
        let data = self.geometry.flat_width();
        if x0.cols != data || cond.len() != x0.rows {
            return Err(Error::Shape("diffusion_train_step batch shapes".into()));
        }
        let n = x0.rows;
        let t_steps = sched.steps;
        let mut eps = rng.randn(n, data);
        for r in 0..n {
            for &slot in &self.train_clamp {
                eps.set(r, slot, x0.get(r, slot));
            }
        }
        let mut x_s = Tensor2::zeros(n, data);
        let mut s_rows = Vec::with_capacity(n);
        for r in 0..n {
            let s_idx = 1 + rng.below(t_steps);
            s_rows.push(s_idx as f32 / t_steps as f32);
            let (a, g) = (sched.alpha[s_idx], sched.sigma[s_idx]);
            for c in 0..data {
                x_s.set(r, c, a * x0.get(r, c) + g * eps.get(r, c));
            }
        }
        let (cond_in, kept) = self.mask_condition(cond, spec, rng);
        let input = self.assemble(&x_s, &s_rows, &cond_in)?;
        let pred = self.net.infer(&input)?;
        let mut resid = pred;
        for (p, &e) in resid.data.iter_mut().zip(eps.data.iter()) {
            *p -= e;
        }
        let loss = self.apply_grads(input, resid, opt)?;
        Ok(TrainStepInfo { loss, conditional_rows: kept })
    }

    /// One velocity-matching gradient step (rectified flow backbone).
    /// When `x0` is `None` the noise endpoint is drawn fresh; a provided
    /// `x0` realizes the deterministic reflow coupling.
    pub fn rf_train_step(
        &mut self,
        opt: &mut AdamWState,
        x1: &Tensor2,
        x0: Option<&Tensor2>,
        cond: &[f32],
        spec: &TrainBatchSpec,
        rng: &mut Rng,
    ) -> Result<TrainStepInfo> {
        let data = self.geometry.flat_width();
        if x1.cols != data || cond.len() != x1.rows {
            return Err(Error::Shape("rf_train_step batch shapes".into()));
        }
        let n = x1.rows;
        let mut noise = match x0 {
            Some(t) => {
                if !t.same_shape(x1) {
                    return Err(Error::Shape("rf_train_step pair shapes".into()));
                }
                t.clone()
            }
            None => rng.randn(n, data),
        };
        for r in 0..n {
            for &slot in &self.train_clamp {
                noise.set(r, slot, x1.get(r, slot));
            }
        }
        let mut x_s = Tensor2::zeros(n, data);
        let mut s_rows = Vec::with_capacity(n);
        for r in 0..n {
            let s = rng.uniform();
            s_rows.push(s);
            for c in 0..data {
                x_s.set(r, c, (1.0 - s) * noise.get(r, c) + s * x1.get(r, c));
            }
        }
        let (cond_in, kept) = self.mask_condition(cond, spec, rng);
        let input = self.assemble(&x_s, &s_rows, &cond_in)?;
        let pred = self.net.infer(&input)?;
        let mut resid = pred;
        for i in 0..resid.data.len() {
            resid.data[i] -= x1.data[i] - noise.data[i];
        }
        let loss = self.apply_grads(input, resid, opt)?;
        Ok(TrainStepInfo { loss, conditional_rows: kept })
    }

    /// Draw `n` candidate sequences. Inpainted slots are clamped in the
    /// initial noise and after every solver step; guidance combines two
    /// predictor evaluations per step when w is not 0 or 1.
    pub fn sample(
        &self,
        n: usize,
        cond: f32,
        sc: &SamplerConfig,
        mask: &InpaintMask,
        rng: &mut Rng,
    ) -> Result<Tensor2> {
        if n == 0 {
            return Err(Error::Sampling("n_candidates must be >= 1".into()));
        }
        for &(slot, v) in &mask.slots {
            if slot >= self.geometry.flat_width() {
                return Err(Error::Sampling(format!("inpaint slot {slot} out of range")));
            }
            if !v.is_finite() {
                return Err(Error::Sampling("non-finite inpaint value".into()));
            }
        }
        let data = self.geometry.flat_width();
        let mut x = rng.randn(n, data);
        mask.apply(&mut x);
        match self.kind {
            BackboneKind::Diffusion => {
                let sched = self
                    .schedule
                    .as_ref()
                    .ok_or_else(|| Error::Config("sampling without schedule".into()))?;
                let grid = ddim_grid(sched.steps, sc.sample_steps)?;
                for w in grid.windows(2) {
                    let s_cont = w[0] as f32 / sched.steps as f32;
                    let mut eps_hat = self.guided_prediction(&x, s_cont, cond, sc.guidance)?;
                    stabilize_eps(sched, &x, &mut eps_hat, w[0]);
                    x = ddim_step(sched, &x, &eps_hat, w[0], w[1])?;
                    mask.apply(&mut x);
                    if !x.is_finite() {
                        return Err(Error::Sampling(format!(
                            "non-finite sample after DDIM step {} -> {}",
                            w[0], w[1]
                        )));
                    }
                }
            }
            BackboneKind::RectifiedFlow => {
                let grid = euler_grid(sc.sample_steps)?;
                for w in grid.windows(2) {
                    let v_hat = self.guided_prediction(&x, w[0], cond, sc.guidance)?;
                    x = euler_flow_step(&x, &v_hat, w[0], w[1])?;
                    mask.apply(&mut x);
                    if !x.is_finite() {
                        return Err(Error::Sampling(format!(
                            "non-finite sample after Euler step {} -> {}",
                            w[0], w[1]
                        )));
                    }
                }
            }
        }
        Ok(x)
    }

    /// Generate a coupled (noise, sample) dataset by integrating the
    /// trained flow; the couplings feed reflow training.
    pub fn reflow_generate(
        &self,
        n_pairs: usize,
        sampling_steps: usize,
        conds: &[f32],
        rng: &mut Rng,
    ) -> Result<(Tensor2, Tensor2)> {
        if self.kind != BackboneKind::RectifiedFlow {
            return Err(Error::Config("reflow_generate requires a flow backbone".into()));
        }
        if conds.len() != n_pairs {
            return Err(Error::Shape("reflow_generate condition count".into()));
        }
        let data = self.geometry.flat_width();
        let mut x0_all = Tensor2::zeros(n_pairs, data);
        let mut x1_all = Tensor2::zeros(n_pairs, data);
        let grid = euler_grid(sampling_steps)?;
        let chunk = 256usize;
        let mut start = 0usize;
        while start < n_pairs {
            let end = (start + chunk).min(n_pairs);
            let rows = end - start;
            let x0 = rng.randn(rows, data);
            let mut x = x0.clone();
            let cond_rows = &conds[start..end];
            for w in grid.windows(2) {
                let v = self.predict_rows(&x, w[0], cond_rows)?;
                x = euler_flow_step(&x, &v, w[0], w[1])?;
            }
            if !x.is_finite() {
                return Err(Error::Sampling("non-finite reflow sample".into()));
            }
            for r in 0..rows {
                x0_all.row_mut(start + r).copy_from_slice(x0.row(r));
                x1_all.row_mut(start + r).copy_from_slice(x.row(r));
            }
            start = end;
        }
        Ok((x0_all, x1_all))
    }

    /// Straightness of the learned flow on a coupled pair set: mean
    /// squared deviation of the field from the straight displacement,
    /// averaged over an s-grid.
    pub fn straightness(
        &self,
        x0: &Tensor2,
        x1: &Tensor2,
        conds: &[f32],
        s_grid: usize,
    ) -> Result<f32> {
        if !x0.same_shape(x1) || conds.len() != x0.rows {
            return Err(Error::Shape("straightness input shapes".into()));
        }
        let mut total = 0.0f64;
        let mut count = 0usize;
        for k in 0..s_grid {
            let s = (k as f32 + 0.5) / s_grid as f32;
            let mut x_s = Tensor2::zeros(x0.rows, x0.cols);
            for i in 0..x_s.data.len() {
                x_s.data[i] = (1.0 - s) * x0.data[i] + s * x1.data[i];
            }
            let v = self.predict_rows(&x_s, s, conds)?;
            for i in 0..v.data.len() {
                let d = (x1.data[i] - x0.data[i]) - v.data[i];
                total += (d * d) as f64;
                count += 1;
            }
        }
        Ok((total / count as f64) as f32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn geometry() -> SequenceGeometry {
        SequenceGeometry { tokens: 2, token_dim: 2 }
    }

    fn diffusion_backbone(seed: u64, clamp: Vec<usize>) -> GenerativeBackbone {
        let mut rng = Rng::seed(seed);
        GenerativeBackbone::new(
            BackboneKind::Diffusion,
            geometry(),
            &[32],
            8,
            Some(Schedule::cosine(100).unwrap()),
            clamp,
            &mut rng,
        )
        .unwrap()
    }

    fn flow_backbone(seed: u64) -> GenerativeBackbone {
        let mut rng = Rng::seed(seed);
        GenerativeBackbone::new(
            BackboneKind::RectifiedFlow,
            geometry(),
            &[32],
            8,
            None,
            vec![],
            &mut rng,
        )
        .unwrap()
    }

    fn zero_net(b: &mut GenerativeBackbone) {
        for layer in b.net.layers.iter_mut() {
            layer.weight.data.iter_mut().for_each(|v| *v = 0.0);
            layer.bias.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    #[test]
    fn zero_predictor_diffusion_loss_matches_noise_moment() {
        // With a zero predictor the loss is E||eps||^2 = token dimensionality.
        let mut b = diffusion_backbone(0, vec![]);
        zero_net(&mut b);
        let mut opt = AdamWState::new(&b.net, crate::numerics::AdamWConfig::with_lr(0.0, 0.0));
        let mut rng = Rng::seed(1);
        let spec = TrainBatchSpec { keep_prob: 0.75 };
        let mut acc = 0.0f64;
        let n_batches = 100;
        for _ in 0..n_batches {
            let x0 = rng.randn(64, 4);
            let cond: Vec<f32> = (0..64).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let info = b.diffusion_train_step(&mut opt, &x0, &cond, &spec, &mut rng).unwrap();
            acc += info.loss as f64;
        }
        let mean = acc / n_batches as f64;
        let dim = 4.0;
        assert!((mean - dim).abs() / dim < 0.05, "mean loss {mean} vs dim {dim}");
    }

    #[test]
    fn keep_prob_one_always_conditional() {
        let mut b = diffusion_backbone(2, vec![]);
        let mut opt = AdamWState::new(&b.net, crate::numerics::AdamWConfig::with_lr(1e-4, 0.0));
        let mut rng = Rng::seed(3);
        let spec = TrainBatchSpec { keep_prob: 1.0 };
        let x0 = rng.randn(32, 4);
        let cond = vec![0.5; 32];
        let info = b.diffusion_train_step(&mut opt, &x0, &cond, &spec, &mut rng).unwrap();
        assert_eq!(info.conditional_rows, 32);
    }

    #[test]
    fn rf_degenerate_coupling_zero_loss_for_zero_field() {
        let mut b = flow_backbone(4);
        for layer in b.net.layers.iter_mut() {
            layer.weight.data.iter_mut().for_each(|v| *v = 0.0);
            layer.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut opt = AdamWState::new(&b.net, crate::numerics::AdamWConfig::with_lr(0.0, 0.0));
        let mut rng = Rng::seed(5);
        let x1 = rng.randn(16, 4);
        let x0 = x1.clone();
        let cond = vec![NULL_CONDITION; 16];
        let spec = TrainBatchSpec { keep_prob: 1.0 };
        let info = b
            .rf_train_step(&mut opt, &x1, Some(&x0), &cond, &spec, &mut rng)
            .unwrap();
        assert!(info.loss.abs() < 1e-10, "loss {}", info.loss);
    }

    #[test]
    fn zero_predictor_rf_loss_matches_displacement_moment() {
        // x0, x1 ~ N(0, I) independent: E||x1 - x0||^2 = 2 * dim.
        let mut b = flow_backbone(6);
        zero_net(&mut b);
        let mut opt = AdamWState::new(&b.net, crate::numerics::AdamWConfig::with_lr(0.0, 0.0));
        let mut rng = Rng::seed(7);
        let spec = TrainBatchSpec { keep_prob: 1.0 };
        let mut acc = 0.0f64;
        for _ in 0..100 {
            let x1 = rng.randn(64, 4);
            let cond = vec![NULL_CONDITION; 64];
            let info = b.rf_train_step(&mut opt, &x1, None, &cond, &spec, &mut rng).unwrap();
            acc += info.loss as f64;
        }
        let mean = acc / 100.0;
        assert!((mean - 8.0).abs() / 8.0 < 0.05, "mean {mean}");
    }

    #[test]
    fn rf_point_mass_target() {
        // Trained on a point mass at mu, the 20-step Euler sample mean
        // lands on mu.
        let mut b = flow_backbone(8);
        let mut opt = AdamWState::new(&b.net, crate::numerics::AdamWConfig::with_lr(2e-3, 0.0));
        let mut rng = Rng::seed(9);
        let mu = [0.8f32, -0.4, 0.2, 0.6];
        let spec = TrainBatchSpec { keep_prob: 1.0 };
        for _ in 0..1500 {
            let mut x1 = Tensor2::zeros(64, 4);
            for r in 0..64 {
                x1.row_mut(r).copy_from_slice(&mu);
            }
            let cond = vec![NULL_CONDITION; 64];
            b.rf_train_step(&mut opt, &x1, None, &cond, &spec, &mut rng).unwrap();
        }
        let sc = SamplerConfig { sample_steps: 20, guidance: 0.0 };
        let out = b.sample(256, NULL_CONDITION, &sc, &InpaintMask::default(), &mut rng).unwrap();
        for c in 0..4 {
            let mean: f32 = (0..256).map(|r| out.get(r, c)).sum::<f32>() / 256.0;
            assert!((mean - mu[c]).abs() < 0.05, "dim {c}: {mean} vs {}", mu[c]);
        }
    }

    #[test]
    fn inpainted_slots_bit_equal() {
        let mut rng = Rng::seed(10);
        let mask = InpaintMask { slots: vec![(0, 0.25), (1, -0.5)] };
        for b in [diffusion_backbone(11, vec![0, 1]), flow_backbone(12)] {
            let sc = SamplerConfig { sample_steps: 3, guidance: 1.5 };
            let out = b.sample(8, 0.3, &sc, &mask, &mut rng).unwrap();
            for r in 0..8 {
                assert_eq!(out.get(r, 0).to_bits(), 0.25f32.to_bits());
                assert_eq!(out.get(r, 1).to_bits(), (-0.5f32).to_bits());
            }
        }
    }

    #[test]
    fn cfg_degeneracy_bit_exact() {
        let b = diffusion_backbone(13, vec![]);
        let sched = b.schedule.clone().unwrap();
        let sc1 = SamplerConfig { sample_steps: 3, guidance: 1.0 };
        let mask = InpaintMask::default();
        let mut rng_a = Rng::seed(14);
        let got = b.sample(4, 0.7, &sc1, &mask, &mut rng_a).unwrap();
        // Reference chain with the conditional predictor alone.
        let mut rng_b = Rng::seed(14);
        let mut x = rng_b.randn(4, 4);
        let grid = ddim_grid(sched.steps, 3).unwrap();
        for w in grid.windows(2) {
            let s_cont = w[0] as f32 / sched.steps as f32;
            let eps = b.predict_rows(&x, s_cont, &vec![0.7; 4]).unwrap();
            x = ddim_step(&sched, &x, &eps, w[0], w[1]).unwrap();
        }
        assert_eq!(got.data, x.data);
    }

    #[test]
    fn null_condition_matches_unguided_bit_exact() {
        let b = flow_backbone(15);
        let mask = InpaintMask::default();
        let sc_w0 = SamplerConfig { sample_steps: 3, guidance: 0.0 };
        let sc_w1 = SamplerConfig { sample_steps: 3, guidance: 1.0 };
        let mut rng_a = Rng::seed(16);
        let mut rng_b = Rng::seed(16);
        let a = b.sample(4, 0.9, &sc_w0, &mask, &mut rng_a).unwrap();
        let c = b.sample(4, NULL_CONDITION, &sc_w1, &mask, &mut rng_b).unwrap();
        assert_eq!(a.data, c.data);
    }

    #[test]
    fn fixed_seed_sampling_deterministic() {
        let b = diffusion_backbone(17, vec![]);
        let sc = SamplerConfig { sample_steps: 3, guidance: 1.2 };
        let mask = InpaintMask { slots: vec![(2, 0.1)] };
        let mut r1 = Rng::seed(18);
        let mut r2 = Rng::seed(18);
        let a = b.sample(1, 0.2, &sc, &mask, &mut r1).unwrap();
        let c = b.sample(1, 0.2, &sc, &mask, &mut r2).unwrap();
        assert_eq!(a.data, c.data);
    }

    #[test]
    fn reflow_generate_pair_count_and_kind_guard() {
        let b = flow_backbone(19);
        let mut rng = Rng::seed(20);
        let conds = vec![NULL_CONDITION; 300];
        let (x0, x1) = b.reflow_generate(300, 4, &conds, &mut rng).unwrap();
        assert_eq!(x0.rows, 300);
        assert_eq!(x1.rows, 300);
        let d = diffusion_backbone(21, vec![]);
        assert!(d.reflow_generate(10, 4, &vec![0.0; 10], &mut rng).is_err());
    }

    #[test]
    fn straightness_zero_for_straight_synthetic_field() {
        // A field that always outputs exactly the displacement scores zero.
        let mut b = flow_backbone(22);
        for layer in b.net.layers.iter_mut() {
            layer.weight.data.iter_mut().for_each(|v| *v = 0.0);
            layer.bias.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut rng = Rng::seed(23);
        let x0 = rng.randn(8, 4);
        let x1 = x0.clone(); // displacement zero, matches the zero field
        let s = b.straightness(&x0, &x1, &vec![NULL_CONDITION; 8], 5).unwrap();
        assert!(s.abs() < 1e-12);
    }
}
