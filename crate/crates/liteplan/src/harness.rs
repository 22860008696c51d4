//! Orchestration: model bundle assembly and persistence, the training
//! pipeline, evaluation rollouts with replanning, the latency
//! benchmark, reflow, and plan export.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::backbone::{BackboneKind, GenerativeBackbone, SamplerConfig, TrainBatchSpec};
use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::constants::NULL_CONDITION;
use crate::critic::{
    discounted_returns, CriticKind, InverseDynamics, JumpyScorer, ValueCritic,
};
use crate::dataset::{generate_dataset, Dataset, ObsStats, PolicyMix};
use crate::env::Env;
use crate::error::{Error, Result};
use crate::numerics::{AdamWConfig, AdamWState, MlpParams, Rng, Tensor2};
use crate::prp::{
    dense_slice, jumpy_from_dense, plan_once, total_tokens, LevelConfig, PlanConfig, PrpPlan,
    SelectionMode,
};
use crate::schedule::Schedule;

/// Everything needed to plan: per-level backbones, critics, inverse
/// dynamics, and the normalization state.
#[derive(Debug, Clone)]
pub struct PlannerBundle {
    pub config: RunConfig,
    pub env: Env,
    pub levels: Vec<LevelConfig>,
    pub backbones: Vec<GenerativeBackbone>,
    pub value: Option<ValueCritic>,
    pub invdyn: InverseDynamics,
    pub stats: ObsStats,
    pub cond_min: Vec<f32>,
    pub cond_max: Vec<f32>,
}

fn backbone_kind(config: &RunConfig) -> Result<BackboneKind> {
    BackboneKind::from_tag(&config.kind)
}

fn critic_kind(config: &RunConfig) -> Result<CriticKind> {
    CriticKind::from_tag(&config.critic)
}

fn selection_mode(config: &RunConfig) -> Result<SelectionMode> {
    match config.select_mode.as_str() {
        "argmax" => Ok(SelectionMode::Argmax),
        "nearest" => Ok(SelectionMode::Nearest(config.target)),
        other => Err(Error::Config(format!("unknown select mode {other}"))),
    }
}

impl PlannerBundle {
    /// Fresh architecture per the config with randomly initialized
    /// parameters and identity normalization.
    pub fn new_untrained(config: &RunConfig) -> Result<Self> {
        config.validate()?;
        let env = Env::from_name(&config.env)?;
        let levels = config.levels()?;
        let kind = backbone_kind(config)?;
        let obs_dim = env.obs_dim();
        let mut rng = Rng::seed(config.seed).derive(0xB007);
        let schedule = match kind {
            BackboneKind::Diffusion => Some(Schedule::cosine(config.t_steps)?),
            BackboneKind::RectifiedFlow => None,
        };
        let mut backbones = Vec::with_capacity(levels.len());
        for level in &levels {
            // Alg. 1 clamps the first token always; refinement levels
            // additionally clamp the inherited last token.
            let mut clamp: Vec<usize> = (0..obs_dim).collect();
            if level.index > 0 {
                let base = (level.tokens - 1) * obs_dim;
                clamp.extend(base..base + obs_dim);
            }
            backbones.push(GenerativeBackbone::new(
                kind,
                crate::backbone::SequenceGeometry { tokens: level.tokens, token_dim: obs_dim },
                &[config.hidden],
                config.s_embed_dim,
                schedule.clone(),
                clamp,
                &mut rng,
            )?);
        }
        let value = if critic_kind(config)? == CriticKind::Value {
            Some(ValueCritic::new(obs_dim, config.value_hidden, config.gamma, &mut rng)?)
        } else {
            None
        };
        let invdyn = InverseDynamics::new(
            obs_dim,
            env.act_dim(),
            config.invdyn_hidden,
            env.act_bound(),
            &mut rng,
        )?;
        let stats = ObsStats { mean: vec![0.0; obs_dim], std: vec![1.0; obs_dim] };
        let n_levels = levels.len();
        Ok(Self {
            config: config.clone(),
            env,
            levels,
            backbones,
            value,
            invdyn,
            stats,
            cond_min: vec![0.0; n_levels],
            cond_max: vec![1.0; n_levels],
        })
    }

    pub fn samplers(&self) -> Vec<SamplerConfig> {
        // Guided sampling only at level 0; refinement levels sample
        // unconditionally.
        self.levels
            .iter()
            .map(|l| SamplerConfig {
                sample_steps: self.config.sample_steps,
                guidance: if l.index == 0 { self.config.guidance } else { 0.0 },
            })
            .collect()
    }

    pub fn conditions(&self) -> Vec<f32> {
        self.levels
            .iter()
            .map(|l| if l.index == 0 { self.config.target } else { NULL_CONDITION })
            .collect()
    }

    /// Map a raw property label into the backbone's [-1, 1] condition
    /// units for the given level.
    pub fn normalize_condition(&self, level: usize, label: f32) -> f32 {
        let (lo, hi) = (self.cond_min[level], self.cond_max[level]);
        if hi - lo < 1e-9 {
            0.0
        } else {
            2.0 * (label - lo) / (hi - lo) - 1.0
        }
    }

    /// One replanning decision: returns the action and the full plan.
    pub fn plan(&self, obs: &[f32], rng: &mut Rng) -> Result<(Vec<f32>, PrpPlan)> {
        let obs_norm = self.stats.normalize(obs);
        let plan_cfg = PlanConfig {
            n_candidates: self.config.n_candidates,
            mode: selection_mode(&self.config)?,
            score_all_levels: self.config.score_all_levels,
        };
        let samplers = self.samplers();
        let conditions = self.conditions();
        let stats = &self.stats;
        let env = &self.env;
        let gamma = self.config.gamma;
        let kind = critic_kind(&self.config)?;
        let value = self.value.as_ref();
        let reward = |row_norm: &[f32]| env.state_reward(&stats.denormalize(row_norm));
        let levels = &self.levels;
        let score = |level: usize, _cand: usize, seq: &Tensor2| -> Result<f32> {
            let scorer =
                JumpyScorer { kind, reward: &reward, value, gamma, terminal: env.terminal_on_reward() };
            scorer.score(seq, levels[level].jump)
        };
        let plan = plan_once(
            &self.levels,
            &self.backbones,
            &samplers,
            &conditions,
            &obs_norm,
            &plan_cfg,
            &score,
            rng,
        )?;
        let (o0, o1) = plan.action_pair();
        let action = self.invdyn.predict(o0, o1)?;
        Ok((action, plan))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new(self.config.to_doc());
        for (l, bb) in self.backbones.iter().enumerate() {
            push_mlp(&mut ck, &format!("backbone{l}"), &bb.net);
        }
        if let Some(v) = &self.value {
            push_mlp(&mut ck, "value", &v.net);
            ck.push_vec("value.ret_scale", &[v.ret_scale]);
        }
        push_mlp(&mut ck, "invdyn", &self.invdyn.net);
        ck.push_vec("invdyn.diff_scale", &self.invdyn.diff_scale);
        ck.push_vec("stats.mean", &self.stats.mean);
        ck.push_vec("stats.std", &self.stats.std);
        ck.push_vec("cond.min", &self.cond_min);
        ck.push_vec("cond.max", &self.cond_max);
        ck
    }

    /// Rebuild the architecture from the embedded config and load all
    /// parameters; shape mismatches surface as checkpoint errors.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = RunConfig::from_doc(&ck.config_doc)?;
        let mut bundle = Self::new_untrained(&config)?;
        for (l, bb) in bundle.backbones.iter_mut().enumerate() {
            load_mlp(ck, &format!("backbone{l}"), &mut bb.net)?;
        }
        if let Some(v) = &mut bundle.value {
            load_mlp(ck, "value", &mut v.net)?;
            v.ret_scale = ck.get_scalar("value.ret_scale")?;
        }
        load_mlp(ck, "invdyn", &mut bundle.invdyn.net)?;
        bundle.invdyn.diff_scale = ck.get_vec("invdyn.diff_scale")?;
        bundle.stats.mean = ck.get_vec("stats.mean")?;
        bundle.stats.std = ck.get_vec("stats.std")?;
        bundle.cond_min = ck.get_vec("cond.min")?;
        bundle.cond_max = ck.get_vec("cond.max")?;
        let obs_dim = bundle.env.obs_dim();
        if bundle.stats.mean.len() != obs_dim
            || bundle.invdyn.diff_scale.len() != obs_dim
            || bundle.cond_min.len() != bundle.levels.len()
        {
            return Err(Error::Checkpoint("stored stats do not match the architecture".into()));
        }
        Ok(bundle)
    }
}

fn push_mlp(ck: &mut Checkpoint, prefix: &str, net: &MlpParams) {
    for (i, layer) in net.layers.iter().enumerate() {
        ck.push(format!("{prefix}.l{i}.weight"), layer.weight.clone());
        ck.push_vec(format!("{prefix}.l{i}.bias"), &layer.bias);
    }
}

fn load_mlp(ck: &Checkpoint, prefix: &str, net: &mut MlpParams) -> Result<()> {
    for (i, layer) in net.layers.iter_mut().enumerate() {
        layer.weight =
            ck.get_shaped(&format!("{prefix}.l{i}.weight"), layer.weight.rows, layer.weight.cols)?;
        let bias = ck.get_vec(&format!("{prefix}.l{i}.bias"))?;
        if bias.len() != layer.bias.len() {
            return Err(Error::Checkpoint(format!("{prefix}.l{i}.bias length mismatch")));
        }
        layer.bias = bias;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// gen-data

#[derive(Debug, Serialize)]
pub struct GenDataReport {
    pub episodes: usize,
    pub dataset_path: String,
    pub provenance_path: String,
}

pub fn cmd_gen_data(config: &RunConfig, out: &Path) -> Result<GenDataReport> {
    config.validate()?;
    let env = Env::from_name(&config.env)?;
    let mix = PolicyMix {
        expert: config.mix_expert,
        noisy: config.mix_noisy,
        random: config.mix_random,
        dead_end: config.mix_dead_end,
    };
    let (dataset, provenance) = generate_dataset(&env, &mix, config.episodes, config.seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    dataset.save(out)?;
    let prov_path = out.with_extension("provenance.json");
    provenance.save(&prov_path)?;
    Ok(GenDataReport {
        episodes: dataset.episodes.len(),
        dataset_path: out.display().to_string(),
        provenance_path: prov_path.display().to_string(),
    })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug, Serialize)]
pub struct TrainReport {
    pub final_backbone_loss: Vec<f32>,
    pub final_value_loss: Option<f32>,
    pub final_invdyn_loss: f32,
    pub invdyn_holdout_mse: f32,
    pub checkpoint_path: String,
    pub curve_path: String,
}

/// Pool of (episode, start) sampling plus cached normalized episode
/// observations and returns.
struct TrainPool<'a> {
    dataset: &'a Dataset,
    norm_obs: Vec<Tensor2>,
    returns: Vec<Vec<f32>>,
}

impl<'a> TrainPool<'a> {
    fn new(dataset: &'a Dataset, gamma: f32) -> Self {
        let norm_obs = dataset.episodes.iter().map(|ep| dataset.stats.normalize_rows(&ep.obs)).collect();
        let returns = dataset.episodes.iter().map(|ep| discounted_returns(&ep.rew, gamma)).collect();
        Self { dataset, norm_obs, returns }
    }

    fn sample_episode(&self, rng: &mut Rng) -> usize {
        rng.below(self.dataset.episodes.len())
    }
}

fn out_path(config: &RunConfig, name: &str) -> PathBuf {
    Path::new(&config.out_dir).join(name)
}

/// Property label of one dense window under the configured critic.
fn window_label(
    kind: CriticKind,
    dense_rew: &[f32],
    dense_obs: &Tensor2,
    gamma: f32,
    value: Option<&ValueCritic>,
    stats: &ObsStats,
) -> Result<f32> {
    match kind {
        CriticKind::Reward => Ok(crate::critic::eval_reward_property(dense_rew)),
        CriticKind::Value => {
            let critic = value.ok_or_else(|| {
                Error::Training("value labels requested without a value critic".into())
            })?;
            let last = dense_obs.row(dense_obs.rows - 1);
            let v_last = critic.value(&stats.normalize(last))?;
            let h = dense_rew.len();
            Ok(crate::critic::eval_value_property(&dense_rew[..h - 1], gamma, v_last))
        }
    }
}

pub fn cmd_train(config: &RunConfig) -> Result<TrainReport> {
    config.validate()?;
    let dataset_path = Path::new(&config.dataset);
    if !dataset_path.exists() {
        return Err(Error::Data(format!("dataset not found: {}", dataset_path.display())));
    }
    let dataset = Dataset::load(dataset_path)?;
    if dataset.episodes.is_empty() {
        return Err(Error::Data("dataset has no episodes".into()));
    }
    std::fs::create_dir_all(&config.out_dir)?;
    let mut bundle = PlannerBundle::new_untrained(config)?;
    bundle.stats = dataset.stats.clone();
    let env = bundle.env.clone();
    if dataset.obs_dim != env.obs_dim() || dataset.act_dim != env.act_dim() {
        return Err(Error::Data(format!(
            "dataset dims {}x{} do not match env {}",
            dataset.obs_dim,
            dataset.act_dim,
            env.name()
        )));
    }
    let pool = TrainPool::new(&dataset, config.gamma);
    let kind = backbone_kind(config)?;
    let ckind = critic_kind(config)?;
    let mut curve = String::from("phase,step,loss\n");
    let mut rng = Rng::seed(config.seed).derive(0x7EA1);

    // --- inverse dynamics ---
    let sample_pairs = |pool: &TrainPool, rng: &mut Rng, n: usize| {
        let obs_dim = env.obs_dim();
        let mut pairs = Tensor2::zeros(n, 2 * obs_dim);
        let mut actions = Tensor2::zeros(n, env.act_dim());
        for r in 0..n {
            // Rejection-sample transitions whose action is recoverable;
            // collision/clamp steps carry no inverse-dynamics signal.
            let mut pick = (pool.sample_episode(rng), 0usize);
            for attempt in 0..64 {
                let e = pool.sample_episode(rng);
                let ep = &pool.dataset.episodes[e];
                let t = rng.below(ep.len());
                pick = (e, t);
                if attempt == 63
                    || env.action_identifiable(ep.obs.row(t), ep.obs.row(t + 1), ep.act.row(t))
                {
                    break;
                }
            }
            let (e, t) = pick;
            let ep = &pool.dataset.episodes[e];
            pairs.row_mut(r)[..obs_dim].copy_from_slice(pool.norm_obs[e].row(t));
            pairs.row_mut(r)[obs_dim..].copy_from_slice(pool.norm_obs[e].row(t + 1));
            actions.row_mut(r).copy_from_slice(ep.act.row(t));
        }
        (pairs, actions)
    };
    let (stat_pairs, _) = sample_pairs(&pool, &mut rng, 2048);
    bundle.invdyn.fit_input_stats(&stat_pairs)?;
    let mut inv_opt =
        AdamWState::new(&bundle.invdyn.net, AdamWConfig::with_lr(config.invdyn_lr, 0.0));
    let mut final_invdyn_loss = 0.0f32;
    for step in 0..config.invdyn_steps {
        if step == config.invdyn_steps / 2 {
            inv_opt.config.lr = config.invdyn_lr / 4.0;
        }
        if step == config.invdyn_steps * 3 / 4 {
            inv_opt.config.lr = config.invdyn_lr / 20.0;
        }
        let (pairs, actions) = sample_pairs(&pool, &mut rng, 128);
        final_invdyn_loss = bundle
            .invdyn
            .train_step(&mut inv_opt, &pairs, &actions)
            .map_err(|e| Error::Training(format!("inverse dynamics step {step}: {e}")))?;
        if step % 100 == 0 {
            curve.push_str(&format!("invdyn,{step},{final_invdyn_loss}\n"));
        }
    }
    let (hold_pairs, hold_actions) = sample_pairs(&pool, &mut rng, 1024);
    let invdyn_holdout_mse = bundle.invdyn.mse(&hold_pairs, &hold_actions)?;

    // --- value critic ---
    let mut final_value_loss = None;
    if let Some(value) = bundle.value.as_mut() {
        let all_returns: Vec<f32> = pool.returns.iter().flatten().copied().collect();
        value.set_scale_from_returns(&all_returns);
        let mut opt = AdamWState::new(&value.net, AdamWConfig::with_lr(config.value_lr, 0.0));
        for step in 0..config.value_steps {
            if step == config.value_steps / 2 {
                opt.config.lr = config.value_lr / 4.0;
            }
            if step == config.value_steps * 3 / 4 {
                opt.config.lr = config.value_lr / 20.0;
            }
            let n = 256;
            let mut obs = Tensor2::zeros(n, env.obs_dim());
            let mut rets = Vec::with_capacity(n);
            for r in 0..n {
                let e = pool.sample_episode(&mut rng);
                let t = rng.below(pool.returns[e].len());
                obs.row_mut(r).copy_from_slice(pool.norm_obs[e].row(t));
                rets.push(pool.returns[e][t]);
            }
            let loss = value
                .train_step(&mut opt, &obs, &rets, config.tau)
                .map_err(|e| Error::Training(format!("value critic step {step}: {e}")))?;
            final_value_loss = Some(loss);
            if step % 100 == 0 {
                curve.push_str(&format!("value,{step},{loss}\n"));
            }
        }
    }

    // --- per-level condition normalizers (label pre-pass) ---
    let n_levels = bundle.levels.len();
    let mut cond_min = vec![f32::INFINITY; n_levels];
    let mut cond_max = vec![f32::NEG_INFINITY; n_levels];
    for _ in 0..2000 {
        let e = pool.sample_episode(&mut rng);
        let ep = &dataset.episodes[e];
        let t = rng.below(ep.len());
        for (l, level) in bundle.levels.iter().enumerate() {
            let dense = dense_slice(ep, t, level.horizon)?;
            let label = window_label(
                ckind,
                &dense.rew,
                &dense.obs,
                config.gamma,
                bundle.value.as_ref(),
                &bundle.stats,
            )?;
            cond_min[l] = cond_min[l].min(label);
            cond_max[l] = cond_max[l].max(label);
        }
    }
    bundle.cond_min = cond_min;
    bundle.cond_max = cond_max;

    // --- backbones, interleaved per-level inner loop ---
    // Level 0 is the only level sampled with a condition (and CFG), so
    // only it trains with condition dropout; refinement levels always
    // see the null token, matching their inference-time inputs exactly.
    let cond_spec = |l: usize| TrainBatchSpec {
        keep_prob: if l == 0 { config.keep_prob } else { 0.0 },
    };
    let mut opts: Vec<AdamWState> = bundle
        .backbones
        .iter()
        .map(|bb| AdamWState::new(&bb.net, AdamWConfig::with_lr(config.lr, 0.0)))
        .collect();
    let mut final_backbone_loss = vec![0.0f32; n_levels];
    let obs_dim = env.obs_dim();
    for step in 0..config.grad_steps {
        for l in 0..n_levels {
            let level = bundle.levels[l];
            let n = config.batch_size;
            let mut x0 = Tensor2::zeros(n, level.tokens * obs_dim);
            let mut conds = Vec::with_capacity(n);
            for r in 0..n {
                let e = pool.sample_episode(&mut rng);
                let ep = &dataset.episodes[e];
                let t = rng.below(ep.len());
                let dense = dense_slice(ep, t, level.horizon)?;
                let label = window_label(
                    ckind,
                    &dense.rew,
                    &dense.obs,
                    config.gamma,
                    bundle.value.as_ref(),
                    &bundle.stats,
                )?;
                conds.push(bundle.normalize_condition(l, label));
                let jumpy = jumpy_from_dense(&bundle.stats.normalize_rows(&dense.obs), level.jump);
                x0.row_mut(r).copy_from_slice(&jumpy.data);
            }
            let bb = &mut bundle.backbones[l];
            let info = match kind {
                BackboneKind::Diffusion => {
                    bb.diffusion_train_step(&mut opts[l], &x0, &conds, &cond_spec(l), &mut rng)
                }
                BackboneKind::RectifiedFlow => {
                    bb.rf_train_step(&mut opts[l], &x0, None, &conds, &cond_spec(l), &mut rng)
                }
            }
            .map_err(|e| Error::Training(format!("level {l} step {step}: {e}")))?;
            final_backbone_loss[l] = info.loss;
            if step % 50 == 0 {
                curve.push_str(&format!("backbone{l},{step},{}\n", info.loss));
            }
        }
    }

    let curve_path = out_path(config, "train_curve.csv");
    std::fs::write(&curve_path, &curve)?;
    let ck = bundle.to_checkpoint();
    let ck_path = out_path(config, "model.prpl");
    ck.save(&ck_path)?;
    let report = TrainReport {
        final_backbone_loss,
        final_value_loss,
        final_invdyn_loss,
        invdyn_holdout_mse,
        checkpoint_path: ck_path.display().to_string(),
        curve_path: curve_path.display().to_string(),
    };
    std::fs::write(
        out_path(config, "train_metrics.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Training(e.to_string()))?,
    )?;
    Ok(report)
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Clone, Serialize)]
pub struct LatencySummary {
    pub mean_ms: f64,
    pub p50_ms: f64,
    pub p90_ms: f64,
    pub decisions_per_sec: f64,
    pub samples: usize,
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let idx = ((sorted.len() as f64 - 1.0) * q).round() as usize;
    sorted[idx]
}

fn summarize_latency(samples_ms: &[f64]) -> LatencySummary {
    let mut sorted = samples_ms.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = sorted.iter().sum::<f64>() / sorted.len().max(1) as f64;
    LatencySummary {
        mean_ms: mean,
        p50_ms: percentile(&sorted, 0.5),
        p90_ms: percentile(&sorted, 0.9),
        decisions_per_sec: if mean > 0.0 { 1000.0 / mean } else { f64::NAN },
        samples: sorted.len(),
    }
}

#[derive(Debug, Serialize)]
pub struct EvalReport {
    pub env: String,
    pub mode: String,
    pub critic: String,
    pub episodes: usize,
    /// Goal-reach fraction (maze) — always present for schema
    /// stability; 0 for the runner.
    pub success_rate: f64,
    pub mean_return: f64,
    pub mean_length: f64,
    pub latency: LatencySummary,
}

pub fn cmd_eval(bundle: &PlannerBundle, n_episodes: usize, seed: u64) -> Result<EvalReport> {
    if n_episodes == 0 {
        return Err(Error::Config("n_episodes must be >= 1".into()));
    }
    let env = &bundle.env;
    let root = Rng::seed(seed);
    let mut successes = 0usize;
    let mut returns = 0.0f64;
    let mut lengths = 0usize;
    let mut latencies: Vec<f64> = vec![];
    for e in 0..n_episodes {
        let mut rng = root.derive(e as u64);
        let mut state = env.reset(&mut rng);
        let mut ep_return = 0.0f64;
        let mut steps = 0usize;
        let mut reached = false;
        for _ in 0..env.max_steps() {
            let t0 = Instant::now();
            let (action, _) = bundle.plan(&state, &mut rng)?;
            latencies.push(t0.elapsed().as_secs_f64() * 1000.0);
            let (next, r) = env.step(&state, &action);
            ep_return += r as f64;
            steps += 1;
            state = next;
            if let Env::Maze(m) = env {
                if m.in_goal(&state) {
                    reached = true;
                    break;
                }
            }
        }
        if reached {
            successes += 1;
        }
        returns += ep_return;
        lengths += steps;
    }
    Ok(EvalReport {
        env: env.name().to_string(),
        mode: bundle.config.mode.clone(),
        critic: bundle.config.critic.clone(),
        episodes: n_episodes,
        success_rate: successes as f64 / n_episodes as f64,
        mean_return: returns / n_episodes as f64,
        mean_length: lengths as f64 / n_episodes as f64,
        latency: summarize_latency(&latencies),
    })
}

// ---------------------------------------------------------------------------
// bench

#[derive(Debug, Serialize)]
pub struct BenchRow {
    pub mode: String,
    pub tokens_per_decision: usize,
    pub latency: LatencySummary,
}

#[derive(Debug, Serialize)]
pub struct BenchReport {
    pub n_decisions: usize,
    pub warmup: usize,
    /// plan_once only; env stepping excluded by design.
    pub timing_scope: String,
    pub rows: Vec<BenchRow>,
}

fn time_planner(
    bundle: &PlannerBundle,
    obs: &[f32],
    n_decisions: usize,
    warmup: usize,
) -> Result<LatencySummary> {
    let mut rng = Rng::seed(bundle.config.seed).derive(0xBE7C);
    let mut samples = Vec::with_capacity(n_decisions);
    for i in 0..warmup + n_decisions {
        let t0 = Instant::now();
        let _ = bundle.plan(obs, &mut rng)?;
        let dt = t0.elapsed().as_secs_f64() * 1000.0;
        if i >= warmup {
            samples.push(dt);
        }
    }
    Ok(summarize_latency(&samples))
}

/// Times the loaded bundle plus equal-width random-init planners for
/// the other ablation modes (planning latency does not depend on the
/// weight values).
pub fn cmd_bench(bundle: &PlannerBundle, n_decisions: usize, warmup: usize) -> Result<BenchReport> {
    if n_decisions == 0 {
        return Err(Error::Config("n_decisions must be >= 1".into()));
    }
    let mut obs_rng = Rng::seed(bundle.config.seed).derive(0x0B5);
    let obs = bundle.env.reset(&mut obs_rng);
    let mut rows = vec![];
    for mode in ["prp", "one-shot", "only-last-level"] {
        let b: PlannerBundle;
        let target: &PlannerBundle = if mode == bundle.config.mode {
            bundle
        } else {
            let mut cfg = bundle.config.clone();
            cfg.mode = mode.to_string();
            b = PlannerBundle::new_untrained(&cfg)?;
            &b
        };
        let latency = time_planner(target, &obs, n_decisions, warmup)?;
        rows.push(BenchRow {
            mode: mode.to_string(),
            tokens_per_decision: total_tokens(&target.levels),
            latency,
        });
    }
    Ok(BenchReport {
        n_decisions,
        warmup,
        timing_scope: "plan_once only (environment stepping excluded)".into(),
        rows,
    })
}

pub fn write_bench_outputs(config: &RunConfig, report: &BenchReport) -> Result<()> {
    std::fs::create_dir_all(&config.out_dir)?;
    let mut csv = String::from("mode,tokens_per_decision,mean_ms,p50_ms,p90_ms,decisions_per_sec\n");
    for row in &report.rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{}\n",
            row.mode,
            row.tokens_per_decision,
            row.latency.mean_ms,
            row.latency.p50_ms,
            row.latency.p90_ms,
            row.latency.decisions_per_sec
        ));
    }
    std::fs::write(out_path(config, "bench.csv"), csv)?;
    std::fs::write(
        out_path(config, "bench.json"),
        serde_json::to_string_pretty(report).map_err(|e| Error::Io(std::io::Error::other(e)))?,
    )?;
    Ok(())
}

// ---------------------------------------------------------------------------
// reflow

#[derive(Debug, Serialize)]
pub struct ReflowReport {
    pub straightness_before: Vec<f32>,
    pub straightness_after: Vec<f32>,
    pub checkpoint_path: String,
}

pub fn cmd_reflow(bundle: &PlannerBundle) -> Result<(PlannerBundle, ReflowReport)> {
    if backbone_kind(&bundle.config)? != BackboneKind::RectifiedFlow {
        return Err(Error::Config("reflow requires a rectified-flow checkpoint".into()));
    }
    let config = &bundle.config;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut out = bundle.clone();
    let mut rng = Rng::seed(config.seed).derive(0x4EF1);
    let mut before = vec![];
    let mut after = vec![];
    let spec = TrainBatchSpec { keep_prob: 1.0 };
    for (l, bb) in out.backbones.iter_mut().enumerate() {
        // Couplings must cover the conditions seen at inference:
        // level 0 mixes real conditions with the null token at the
        // training keep-probability; other levels are unconditional.
        let conds: Vec<f32> = (0..config.reflow_pairs)
            .map(|_| {
                if l == 0 && rng.uniform() < config.keep_prob {
                    rng.uniform_range(-1.0, 1.0)
                } else {
                    NULL_CONDITION
                }
            })
            .collect();
        let (x0, x1) = bb.reflow_generate(config.reflow_pairs, config.reflow_gen_steps, &conds, &mut rng)?;
        before.push(bb.straightness(&x0, &x1, &conds, 8)?);
        // Warm start from the trained flow, reduced learning rate.
        let mut opt = AdamWState::new(&bb.net, AdamWConfig::with_lr(config.reflow_lr, 0.0));
        let batch = config.batch_size.min(config.reflow_pairs);
        for step in 0..config.reflow_steps {
            let mut bx0 = Tensor2::zeros(batch, x0.cols);
            let mut bx1 = Tensor2::zeros(batch, x1.cols);
            let mut bc = Vec::with_capacity(batch);
            for r in 0..batch {
                let i = rng.below(config.reflow_pairs);
                bx0.row_mut(r).copy_from_slice(x0.row(i));
                bx1.row_mut(r).copy_from_slice(x1.row(i));
                bc.push(conds[i]);
            }
            bb.rf_train_step(&mut opt, &bx1, Some(&bx0), &bc, &spec, &mut rng)
                .map_err(|e| Error::Training(format!("reflow level {l} step {step}: {e}")))?;
        }
        after.push(bb.straightness(&x0, &x1, &conds, 8)?);
    }
    let ck = out.to_checkpoint();
    let ck_path = out_path(config, "model_reflow.prpl");
    ck.save(&ck_path)?;
    let report = ReflowReport {
        straightness_before: before,
        straightness_after: after,
        checkpoint_path: ck_path.display().to_string(),
    };
    std::fs::write(
        out_path(config, "reflow_metrics.json"),
        serde_json::to_string_pretty(&report).map_err(|e| Error::Io(std::io::Error::other(e)))?,
    )?;
    Ok((out, report))
}

// ---------------------------------------------------------------------------
// export-plans

#[derive(Debug, Serialize)]
pub struct ExportReport {
    pub svg_path: String,
    pub json_path: String,
    /// Per-level variance of the final key point across candidates
    /// (env units, summed over dimensions).
    pub final_keypoint_dispersion: Vec<f32>,
}

pub fn cmd_export_plans(
    bundle: &PlannerBundle,
    n_candidates: usize,
    seed: u64,
) -> Result<ExportReport> {
    let maze = match &bundle.env {
        Env::Maze(m) => m.clone(),
        _ => {
            return Err(Error::Unsupported(
                "plan export requires a 2-D maze environment".into(),
            ))
        }
    };
    let config = &bundle.config;
    std::fs::create_dir_all(&config.out_dir)?;
    let mut rng = Rng::seed(seed);
    let obs = bundle.env.reset(&mut rng.clone());
    let mut probe = bundle.clone();
    probe.config.n_candidates = n_candidates;
    probe.config.score_all_levels = true;
    let (action, plan) = probe.plan(&obs, &mut rng)?;

    // Dispersion of each level's final key point across candidates.
    let mut dispersion = vec![];
    for lp in &plan.levels {
        let mut var = 0.0f64;
        for d in 0..bundle.env.obs_dim() {
            let vals: Vec<f64> = lp
                .candidates
                .iter()
                .map(|c| {
                    let row = bundle.stats.denormalize(c.row(c.rows - 1));
                    row[d] as f64
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            var += vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / vals.len() as f64;
        }
        dispersion.push(var as f32);
    }

    // SVG: unit box scaled to 500x500, y flipped to screen coordinates.
    let scale = 500.0f32;
    let px = |x: f32| x * scale;
    let py = |y: f32| (1.0 - y) * scale;
    let colors = ["#1b6ca8", "#43a047", "#e65100", "#8e24aa"];
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{s}\" height=\"{s}\" viewBox=\"0 0 {s} {s}\">\n\
         <rect width=\"{s}\" height=\"{s}\" fill=\"#fafafa\" stroke=\"#333\"/>\n",
        s = scale
    );
    for w in &maze.walls {
        svg.push_str(&format!(
            "<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#555\"/>\n",
            px(w.x0),
            py(w.y1),
            px(w.x1 - w.x0),
            px(w.y1 - w.y0)
        ));
    }
    svg.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"{}\" fill=\"none\" stroke=\"#c62828\" stroke-width=\"2\"/>\n",
        px(maze.goal[0]),
        py(maze.goal[1]),
        px(maze.goal_radius)
    ));
    for (l, lp) in plan.levels.iter().enumerate() {
        let color = colors[l % colors.len()];
        for (c, cand) in lp.candidates.iter().enumerate() {
            let pts: Vec<String> = (0..cand.rows)
                .map(|r| {
                    let row = bundle.stats.denormalize(cand.row(r));
                    format!("{:.2},{:.2}", px(row[0]), py(row[1]))
                })
                .collect();
            let width = if c == lp.selected { "2.5" } else { "0.8" };
            let opacity = if c == lp.selected { "1.0" } else { "0.35" };
            svg.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{width}\" stroke-opacity=\"{opacity}\"/>\n",
                pts.join(" ")
            ));
        }
    }
    svg.push_str(&format!(
        "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#000\"/>\n</svg>\n",
        px(obs[0]),
        py(obs[1])
    ));
    let svg_path = out_path(config, "plans.svg");
    std::fs::write(&svg_path, &svg)?;

    let levels_json: Vec<serde_json::Value> = plan
        .levels
        .iter()
        .enumerate()
        .map(|(l, lp)| {
            let candidates: Vec<Vec<Vec<f32>>> = lp
                .candidates
                .iter()
                .map(|c| (0..c.rows).map(|r| bundle.stats.denormalize(c.row(r))).collect())
                .collect();
            serde_json::json!({
                "level": l,
                "jump": bundle.levels[l].jump,
                "candidates": candidates,
                "scores": lp.scores,
                "selected": lp.selected,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "observation": obs,
        "action": action,
        "levels": levels_json,
        "final_keypoint_dispersion": dispersion,
    });
    let json_path = out_path(config, "plans.json");
    std::fs::write(&json_path, serde_json::to_string_pretty(&doc).unwrap())?;
    Ok(ExportReport {
        svg_path: svg_path.display().to_string(),
        json_path: json_path.display().to_string(),
        final_keypoint_dispersion: dispersion,
    })
}
