//! Property evaluators for conditioning and candidate selection, the
//! expectile-regression value learner, and the inverse-dynamics model
//! used for action extraction.

use crate::error::{Error, Result};
use crate::numerics::{adamw_step, Activation, AdamWState, MlpParams, Rng, Tensor2};

/// Cumulative reward of a dense sequence slice: the sum of all provided
/// per-step rewards (the slice carries one reward per state).
pub fn eval_reward_property(rewards: &[f32]) -> f32 {
    rewards.iter().sum()
}

/// Discounted reward-plus-terminal-value property of a dense slice of
/// horizon H: `rewards` holds the first H-1 per-step rewards and
/// `v_last` is V at the final state.
pub fn eval_value_property(rewards: &[f32], gamma: f32, v_last: f32) -> f32 {
    let mut acc = 0.0f64;
    let mut disc = 1.0f64;
    for &r in rewards {
        acc += disc * r as f64;
        disc *= gamma as f64;
    }
    (acc + disc * v_last as f64) as f32
}

/// Monte-Carlo discounted returns-to-go for one episode's reward
/// sequence (zero bootstrap at the end).
pub fn discounted_returns(rewards: &[f32], gamma: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; rewards.len()];
    let mut acc = 0.0f32;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + gamma * acc;
        out[t] = acc;
    }
    out
}

/// Learned state-value function V(o), fit by expectile regression of
/// Monte-Carlo returns-to-go. The network regresses returns divided by
/// `ret_scale` so sparse and dense tasks train at comparable magnitudes.
#[derive(Debug, Clone)]
pub struct ValueCritic {
    pub gamma: f32,
    pub net: MlpParams,
    pub ret_scale: f32,
}

impl ValueCritic {
    pub fn new(obs_dim: usize, hidden: usize, gamma: f32, rng: &mut Rng) -> Result<Self> {
        let net = MlpParams::new(
            &[obs_dim, hidden, hidden, 1],
            &[Activation::MishLayerNorm, Activation::MishLayerNorm, Activation::Identity],
            rng,
        )?;
        Ok(Self { gamma, net, ret_scale: 1.0 })
    }

    /// Fix the regression scale from the dataset's return magnitudes.
    pub fn set_scale_from_returns(&mut self, returns: &[f32]) {
        let max_abs = returns.iter().fold(0.0f32, |m, v| m.max(v.abs()));
        self.ret_scale = if max_abs > 0.0 { max_abs } else { 1.0 };
    }

    pub fn value_batch(&self, obs: &Tensor2) -> Result<Vec<f32>> {
        let y = self.net.infer(obs)?;
        Ok(y.data.iter().map(|v| v * self.ret_scale).collect())
    }

    pub fn value(&self, obs: &[f32]) -> Result<f32> {
        let mut t = Tensor2::zeros(1, obs.len());
        t.row_mut(0).copy_from_slice(obs);
        Ok(self.value_batch(&t)?[0])
    }

    /// One expectile-regression step: loss = mean |tau - 1{u<0}| u^2
    /// with u = G - V(o), computed in scaled units.
    pub fn train_step(
        &mut self,
        opt: &mut AdamWState,
        obs: &Tensor2,
        returns: &[f32],
        tau: f32,
    ) -> Result<f32> {
        if returns.len() != obs.rows {
            return Err(Error::Shape("value batch row mismatch".into()));
        }
        let (y, cache) = self.net.forward(obs)?;
        let n = obs.rows as f32;
        let mut out_grad = Tensor2::zeros(obs.rows, 1);
        let mut loss = 0.0f32;
        for r in 0..obs.rows {
            let u = returns[r] / self.ret_scale - y.get(r, 0);
            let w = if u < 0.0 { 1.0 - tau } else { tau };
            loss += w * u * u / n;
            out_grad.set(r, 0, -2.0 * w * u / n);
        }
        if !loss.is_finite() {
            return Err(Error::Training("non-finite expectile loss".into()));
        }
        let (grads, _) = self.net.backward(&cache, &out_grad)?;
        adamw_step(&mut self.net, &grads, opt)?;
        Ok(loss)
    }
}

/// Action recovery model a_t = h(o_t, o_{t+1}); the final tanh is
/// scaled per-dimension to the action box, so predictions always lie
/// inside it. Two numerical choices matter here: training regresses the
/// pre-squash output toward atanh of the bounded target (avoiding the
/// vanishing-gradient plateau of squared error taken after the tanh),
/// and the network internally sees the whitened displacement
/// (o_{t+1} - o_t) / diff_scale rather than o_{t+1} — at small step
/// sizes the action signal is a tiny input perturbation, and nonlinear
/// functions of it are ill-conditioned to learn without rescaling. Both
/// are linear reparametrizations of the same (o_t, o_{t+1}) interface.
#[derive(Debug, Clone)]
pub struct InverseDynamics {
    pub net: MlpParams,
    pub act_bound: Vec<f32>,
    pub obs_dim: usize,
    /// Per-dimension scale of one-step displacements (whitening).
    pub diff_scale: Vec<f32>,
}

/// Fraction of the action box used when inverting tanh for training
/// targets; keeps atanh finite for boundary actions.
const TANH_TARGET_CLIP: f32 = 0.999;

impl InverseDynamics {
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: usize,
        act_bound: Vec<f32>,
        rng: &mut Rng,
    ) -> Result<Self> {
        if act_bound.len() != act_dim || act_bound.iter().any(|b| *b <= 0.0) {
            return Err(Error::Config("inverse dynamics action bounds".into()));
        }
        let net = MlpParams::new(
            &[2 * obs_dim, hidden, hidden, act_dim],
            &[Activation::MishLayerNorm, Activation::MishLayerNorm, Activation::Identity],
            rng,
        )?;
        Ok(Self { net, act_bound, obs_dim, diff_scale: vec![1.0; obs_dim] })
    }

    /// Fit the displacement whitening scale from a sample of
    /// (o_t, o_{t+1}) pairs.
    pub fn fit_input_stats(&mut self, pairs: &Tensor2) -> Result<()> {
        if pairs.cols != 2 * self.obs_dim || pairs.rows == 0 {
            return Err(Error::Shape("fit_input_stats pair shape".into()));
        }
        for d in 0..self.obs_dim {
            let mut sum = 0.0f64;
            let mut sumsq = 0.0f64;
            for r in 0..pairs.rows {
                let diff = (pairs.get(r, self.obs_dim + d) - pairs.get(r, d)) as f64;
                sum += diff;
                sumsq += diff * diff;
            }
            let mean = sum / pairs.rows as f64;
            let var = (sumsq / pairs.rows as f64 - mean * mean).max(0.0);
            self.diff_scale[d] = (var.sqrt() as f32).max(crate::constants::STD_FLOOR);
        }
        Ok(())
    }

    fn features(&self, pairs: &Tensor2) -> Result<Tensor2> {
        if pairs.cols != 2 * self.obs_dim {
            return Err(Error::Shape("inverse dynamics pair width".into()));
        }
        let mut f = pairs.clone();
        for r in 0..f.rows {
            for d in 0..self.obs_dim {
                let diff = pairs.get(r, self.obs_dim + d) - pairs.get(r, d);
                f.set(r, self.obs_dim + d, diff / self.diff_scale[d]);
            }
        }
        Ok(f)
    }

    /// `pairs` rows are concatenated (o_t, o_{t+1}).
    pub fn predict_batch(&self, pairs: &Tensor2) -> Result<Tensor2> {
        let mut y = self.net.infer(&self.features(pairs)?)?;
        for r in 0..y.rows {
            for (c, &b) in self.act_bound.iter().enumerate() {
                y.set(r, c, y.get(r, c).tanh() * b);
            }
        }
        Ok(y)
    }

    pub fn predict(&self, obs: &[f32], obs_next: &[f32]) -> Result<Vec<f32>> {
        let mut t = Tensor2::zeros(1, obs.len() + obs_next.len());
        t.row_mut(0)[..obs.len()].copy_from_slice(obs);
        t.row_mut(0)[obs.len()..].copy_from_slice(obs_next);
        Ok(self.predict_batch(&t)?.data)
    }

    /// One regression step in pre-squash space; the returned loss is the
    /// action-space MSE of the squashed predictions.
    pub fn train_step(
        &mut self,
        opt: &mut AdamWState,
        pairs: &Tensor2,
        actions: &Tensor2,
    ) -> Result<f32> {
        if actions.rows != pairs.rows || actions.cols != self.act_bound.len() {
            return Err(Error::Shape("inverse dynamics batch shapes".into()));
        }
        let (y, cache) = self.net.forward(&self.features(pairs)?)?;
        let n = pairs.rows as f32;
        let mut out_grad = Tensor2::zeros(y.rows, y.cols);
        let mut loss = 0.0f32;
        for r in 0..y.rows {
            for (c, &b) in self.act_bound.iter().enumerate() {
                let target =
                    (actions.get(r, c) / b).clamp(-TANH_TARGET_CLIP, TANH_TARGET_CLIP).atanh();
                let resid = y.get(r, c) - target;
                out_grad.set(r, c, 2.0 * resid / n);
                let act_resid = b * y.get(r, c).tanh() - actions.get(r, c);
                loss += act_resid * act_resid / n;
            }
        }
        if !loss.is_finite() {
            return Err(Error::Training("non-finite inverse-dynamics loss".into()));
        }
        let (grads, _) = self.net.backward(&cache, &out_grad)?;
        adamw_step(&mut self.net, &grads, opt)?;
        Ok(loss)
    }

    pub fn mse(&self, pairs: &Tensor2, actions: &Tensor2) -> Result<f32> {
        let y = self.predict_batch(pairs)?;
        let mut loss = 0.0f32;
        for i in 0..y.data.len() {
            let d = y.data[i] - actions.data[i];
            loss += d * d;
        }
        Ok(loss / pairs.rows as f32)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CriticKind {
    Reward,
    Value,
}

impl CriticKind {
    pub fn tag(&self) -> &'static str {
        match self {
            CriticKind::Reward => "reward",
            CriticKind::Value => "value",
        }
    }

    pub fn from_tag(tag: &str) -> Result<Self> {
        match tag {
            "reward" => Ok(CriticKind::Reward),
            "value" => Ok(CriticKind::Value),
            other => Err(Error::Config(format!("unknown critic kind {other}"))),
        }
    }
}

/// Scores jumpy key-point sequences during planning. Per-key-point
/// rewards are recomputed from states; on dense-reward tasks they are
/// scaled by the jump as a Riemann estimate of the dense sum, while on
/// reach tasks (`terminal` set) the episode ends at the first rewarding
/// state, so the estimate truncates at the first rewarding key point —
/// without this, a plan hallucinating several key points inside the
/// goal would out-score every feasible plan by a factor of the jump.
/// The value variant discounts and adds V at the final key point.
pub struct JumpyScorer<'a> {
    pub kind: CriticKind,
    pub reward: &'a dyn Fn(&[f32]) -> f32,
    pub value: Option<&'a ValueCritic>,
    pub gamma: f32,
    /// True when a positive reward terminates the episode (reach task).
    pub terminal: bool,
}

impl JumpyScorer<'_> {
    /// `keypoints` is a (tokens x obs_dim) sequence in environment
    /// units; `jump` is the level's temporal jump.
    pub fn score(&self, keypoints: &Tensor2, jump: usize) -> Result<f32> {
        let tokens = keypoints.rows;
        if tokens == 0 {
            return Err(Error::Planning("empty key-point sequence".into()));
        }
        let horizon = (tokens - 1) * jump + 1;
        let score = match self.kind {
            CriticKind::Reward => {
                let mut acc = 0.0f32;
                for r in 0..tokens {
                    let rew = (self.reward)(keypoints.row(r));
                    if self.terminal && rew > 0.0 {
                        acc += rew;
                        break;
                    }
                    acc += rew * jump as f32;
                }
                acc
            }
            CriticKind::Value => {
                let critic = self
                    .value
                    .ok_or_else(|| Error::Planning("value scoring without a value critic".into()))?;
                let mut acc = 0.0f32;
                let mut terminated = false;
                for r in 0..tokens - 1 {
                    let disc = self.gamma.powi((r * jump) as i32);
                    let rew = (self.reward)(keypoints.row(r));
                    if self.terminal && rew > 0.0 {
                        acc += disc * rew;
                        terminated = true;
                        break;
                    }
                    acc += disc * rew * jump as f32;
                }
                if terminated {
                    acc
                } else {
                    let v = critic.value(keypoints.row(tokens - 1))?;
                    acc + self.gamma.powi(horizon as i32 - 1) * v
                }
            }
        };
        if !score.is_finite() {
            return Err(Error::Planning("non-finite candidate score".into()));
        }
        Ok(score)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::AdamWConfig;

    #[test]
    fn reward_property_sums() {
        assert_eq!(eval_reward_property(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(eval_reward_property(&[1.0, 1.0, 1.0]), 3.0);
        assert_eq!(eval_reward_property(&[1.0; 9]), 9.0);
    }

    #[test]
    fn value_property_reductions() {
        // gamma = 1, V = 0 reduces to the plain sum of the H-1 rewards.
        let r = [0.5f32, 0.25, 1.0];
        assert_eq!(eval_value_property(&r, 1.0, 0.0), 1.75);
        // H = 1: no rewards, just V(o_0).
        assert_eq!(eval_value_property(&[], 0.99, 0.7), 0.7);
    }

    #[test]
    fn value_property_discounted_terminal() {
        // H = 9, zero rewards, V(last) = 1: gamma^(H-1).
        let got = eval_value_property(&[0.0; 8], 0.99, 1.0);
        let want = 0.99f64.powi(8);
        assert!((got as f64 - want).abs() < 1e-6, "{got} vs {want}");
        assert!((got - 0.9227).abs() < 1e-3);
    }

    #[test]
    fn returns_to_go_matches_closed_form() {
        // Constant reward 1: G_t = (1 - gamma^(T-t)) / (1 - gamma).
        let gamma = 0.9f32;
        let rewards = vec![1.0f32; 10];
        let got = discounted_returns(&rewards, gamma);
        for t in 0..10 {
            let want = (1.0 - (gamma as f64).powi((10 - t) as i32)) / (1.0 - gamma as f64);
            assert!((got[t] as f64 - want).abs() < 1e-5, "t={t}: {} vs {want}", got[t]);
        }
        // Backward recursion cross-check on an uneven sequence.
        let r = [1.0f32, -2.0, 3.0];
        let g = discounted_returns(&r, 0.5);
        assert!((g[2] - 3.0).abs() < 1e-6);
        assert!((g[1] - (-2.0 + 0.5 * 3.0)).abs() < 1e-6);
        assert!((g[0] - (1.0 + 0.5 * g[1])).abs() < 1e-6);
    }

    #[test]
    fn expectile_of_two_point_target() {
        // At a fixed input with targets {0, 10} equally likely, the
        // tau-expectile solves tau (10 - V) = (1 - tau) V, so V = 10 tau.
        let mut rng = Rng::seed(0);
        let mut v = ValueCritic::new(1, 16, 0.99, &mut rng).unwrap();
        v.ret_scale = 10.0;
        let mut opt = AdamWState::new(&v.net, AdamWConfig::with_lr(3e-3, 0.0));
        let mut obs = Tensor2::zeros(64, 1);
        obs.data.iter_mut().for_each(|x| *x = 0.5);
        let mut returns = vec![0.0f32; 64];
        for r in returns.iter_mut().skip(32) {
            *r = 10.0;
        }
        for _ in 0..3000 {
            v.train_step(&mut opt, &obs, &returns, 0.9).unwrap();
        }
        let got = v.value(&[0.5]).unwrap();
        assert!((got - 9.0).abs() < 0.3, "expectile estimate {got}");
    }

    #[test]
    fn value_fits_deterministic_returns() {
        // Single deterministic trajectory, tau = 0.5: plain regression
        // onto the exact returns-to-go.
        let mut rng = Rng::seed(1);
        let gamma = 0.99f32;
        let n = 64usize;
        let rewards = vec![1.0f32; n];
        let returns = discounted_returns(&rewards, gamma);
        let mut obs = Tensor2::zeros(n, 1);
        for t in 0..n {
            obs.set(t, 0, t as f32 / n as f32);
        }
        let mut v = ValueCritic::new(1, 128, gamma, &mut rng).unwrap();
        v.set_scale_from_returns(&returns);
        let mut opt = AdamWState::new(&v.net, AdamWConfig::with_lr(3e-3, 0.0));
        for step in 0..22000 {
            if step == 4000 {
                opt.config.lr = 1e-3;
            } else if step == 10000 {
                opt.config.lr = 2e-4;
            } else if step == 16000 {
                opt.config.lr = 2e-5;
            }
            v.train_step(&mut opt, &obs, &returns, 0.5).unwrap();
        }
        let fitted = v.value_batch(&obs).unwrap();
        for t in [0usize, 16, 32, 48, 63] {
            let rel = (fitted[t] - returns[t]).abs() / returns[t].abs().max(1.0);
            assert!(rel < 0.05, "t={t}: fitted {} vs {}", fitted[t], returns[t]);
        }
    }

    #[test]
    fn zero_reward_value_near_zero() {
        let mut rng = Rng::seed(2);
        let mut v = ValueCritic::new(2, 16, 0.99, &mut rng).unwrap();
        // Weight decay pulls the net to the exact zero function.
        let mut opt = AdamWState::new(&v.net, AdamWConfig::with_lr(3e-3, 0.01));
        let obs = rng.randn(128, 2);
        let returns = vec![0.0f32; 128];
        for _ in 0..3000 {
            v.train_step(&mut opt, &obs, &returns, 0.9).unwrap();
        }
        let probe = rng.randn(32, 2);
        for val in v.value_batch(&probe).unwrap() {
            assert!(val.abs() < 0.05, "V {val}");
        }
    }

    #[test]
    fn inverse_dynamics_outputs_inside_action_box() {
        let mut rng = Rng::seed(3);
        let inv = InverseDynamics::new(2, 2, 16, vec![1.0, 0.5], &mut rng).unwrap();
        let pairs = rng.randn(64, 4).map(|v| 10.0 * v);
        let y = inv.predict_batch(&pairs).unwrap();
        for r in 0..64 {
            assert!(y.get(r, 0).abs() <= 1.0);
            assert!(y.get(r, 1).abs() <= 0.5);
        }
    }

    #[test]
    fn inverse_dynamics_recovers_linear_map() {
        // o' = o + dt * a with dt = 0.05: the action is recoverable in
        // closed form, so held-out MSE must be tiny.
        let dt = 0.05f32;
        let mut rng = Rng::seed(4);
        let mut inv = InverseDynamics::new(2, 2, 64, vec![1.0, 1.0], &mut rng).unwrap();
        let mut opt = AdamWState::new(&inv.net, AdamWConfig::with_lr(2e-3, 0.0));
        let make_batch = |rng: &mut Rng, n: usize| {
            let mut pairs = Tensor2::zeros(n, 4);
            let mut actions = Tensor2::zeros(n, 2);
            for r in 0..n {
                let o = [rng.uniform(), rng.uniform()];
                // Interior of the action box: tanh saturation makes
                // exact boundary actions unreachable.
                let a = [rng.uniform_range(-0.9, 0.9), rng.uniform_range(-0.9, 0.9)];
                pairs.row_mut(r)[..2].copy_from_slice(&o);
                pairs.row_mut(r)[2] = o[0] + dt * a[0];
                pairs.row_mut(r)[3] = o[1] + dt * a[1];
                actions.row_mut(r).copy_from_slice(&a);
            }
            (pairs, actions)
        };
        let (stat_pairs, _) = make_batch(&mut rng, 512);
        inv.fit_input_stats(&stat_pairs).unwrap();
        for step in 0..6000 {
            if step == 3000 {
                opt.config.lr = 5e-4;
            } else if step == 4500 {
                opt.config.lr = 1e-4;
            }
            let (p, a) = make_batch(&mut rng, 128);
            inv.train_step(&mut opt, &p, &a).unwrap();
        }
        let (hp, ha) = make_batch(&mut rng, 256);
        let mse = inv.mse(&hp, &ha).unwrap();
        assert!(mse < 1e-3, "held-out MSE {mse}");
        // Zero displacement implies near-zero action.
        let a0 = inv.predict(&[0.3, 0.4], &[0.3, 0.4]).unwrap();
        assert!(a0.iter().all(|v| v.abs() < 0.05), "{a0:?}");
        // Determinism on identical inputs.
        let a1 = inv.predict(&[0.3, 0.4], &[0.3, 0.4]).unwrap();
        assert_eq!(a0, a1);
    }

    #[test]
    fn shuffled_labels_floor_at_action_variance() {
        // With labels independent of inputs the best constant predictor
        // is the mean, so held-out MSE approaches the action variance.
        let mut rng = Rng::seed(5);
        let mut inv = InverseDynamics::new(1, 1, 32, vec![1.0], &mut rng).unwrap();
        let mut opt = AdamWState::new(&inv.net, AdamWConfig::with_lr(1e-3, 0.0));
        // Uniform[-1,1] actions: variance 1/3.
        for _ in 0..2000 {
            let pairs = rng.randn(128, 2);
            let mut actions = Tensor2::zeros(128, 1);
            actions.data.iter_mut().for_each(|v| *v = rng.uniform_range(-1.0, 1.0));
            inv.train_step(&mut opt, &pairs, &actions).unwrap();
        }
        let pairs = rng.randn(1024, 2);
        let mut actions = Tensor2::zeros(1024, 1);
        actions.data.iter_mut().for_each(|v| *v = rng.uniform_range(-1.0, 1.0));
        let mse = inv.mse(&pairs, &actions).unwrap();
        assert!((mse - 1.0 / 3.0).abs() < 0.1, "MSE {mse} vs variance 1/3");
    }

    #[test]
    fn jumpy_scorer_reward_riemann_and_value_terminal() {
        let reward = |o: &[f32]| o[0];
        let mut kp = Tensor2::zeros(3, 1);
        kp.set(0, 0, 1.0);
        kp.set(1, 0, 2.0);
        kp.set(2, 0, 3.0);
        let s = JumpyScorer {
            kind: CriticKind::Reward,
            reward: &reward,
            value: None,
            gamma: 0.99,
            terminal: false,
        };
        // Jump 4: Riemann estimate 4 * (1 + 2 + 3).
        assert_eq!(s.score(&kp, 4).unwrap(), 24.0);

        // Reach-task semantics: the first rewarding key point ends the
        // episode, so it contributes once, unscaled.
        let st = JumpyScorer {
            kind: CriticKind::Reward,
            reward: &reward,
            value: None,
            gamma: 0.99,
            terminal: true,
        };
        assert_eq!(st.score(&kp, 4).unwrap(), 1.0);

        // Value variant with zero rewards: gamma^(H-1) * V(last).
        let mut rng = Rng::seed(6);
        let mut v = ValueCritic::new(1, 8, 0.99, &mut rng).unwrap();
        for layer in v.net.layers.iter_mut() {
            layer.weight.data.iter_mut().for_each(|x| *x = 0.0);
            layer.bias.iter_mut().for_each(|x| *x = 0.0);
        }
        v.net.layers.last_mut().unwrap().bias[0] = 1.0;
        let zero_reward = |_: &[f32]| 0.0f32;
        let sv = JumpyScorer {
            kind: CriticKind::Value,
            reward: &zero_reward,
            value: Some(&v),
            gamma: 0.99,
            terminal: false,
        };
        // 3 tokens, jump 4: horizon 9, so gamma^8 * V.
        let got = sv.score(&kp, 4).unwrap();
        assert!((got as f64 - 0.99f64.powi(8)).abs() < 1e-6, "{got}");

        // Terminal value variant: a goal at key point 1 (env step 4)
        // yields gamma^4 * r with no value tail.
        let goal_reward = |o: &[f32]| if o[0] >= 2.0 { 1.0f32 } else { 0.0 };
        let svt = JumpyScorer {
            kind: CriticKind::Value,
            reward: &goal_reward,
            value: Some(&v),
            gamma: 0.99,
            terminal: true,
        };
        let got = svt.score(&kp, 4).unwrap();
        assert!((got as f64 - 0.99f64.powi(4)).abs() < 1e-6, "{got}");
    }
}
