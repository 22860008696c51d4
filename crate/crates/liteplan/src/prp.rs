//! Progressive refinement planning: level geometry, training-slice
//! extraction with property labels, candidate selection, and the
//! coarse-to-fine planning pass itself.

use crate::backbone::{GenerativeBackbone, SamplerConfig};
use crate::dataset::Episode;
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor2};
use crate::schedule::InpaintMask;

/// Geometry of one refinement level: horizon H, temporal jump I, and
/// token count n = (H - 1)/I + 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LevelConfig {
    pub index: usize,
    pub horizon: usize,
    pub jump: usize,
    pub tokens: usize,
}

/// Chain levels from a total horizon and a jump list: each level spans
/// one jump interval of its parent, H_{l+1} = I_l + 1.
pub fn build_levels(total_horizon: usize, jumps: &[usize]) -> Result<Vec<LevelConfig>> {
    if jumps.is_empty() {
        return Err(Error::Config("jump list is empty".into()));
    }
    if *jumps.last().unwrap() != 1 {
        return Err(Error::Config("last temporal jump must be 1".into()));
    }
    if total_horizon < 2 {
        return Err(Error::Config("total horizon must be at least 2".into()));
    }
    let mut levels = Vec::with_capacity(jumps.len());
    let mut horizon = total_horizon;
    for (index, &jump) in jumps.iter().enumerate() {
        if jump == 0 {
            return Err(Error::Config("temporal jump must be positive".into()));
        }
        if (horizon - 1) % jump != 0 {
            return Err(Error::Config(format!(
                "level {index}: jump {jump} does not divide horizon {horizon} minus one"
            )));
        }
        let tokens = (horizon - 1) / jump + 1;
        levels.push(LevelConfig { index, horizon, jump, tokens });
        horizon = jump + 1;
    }
    Ok(levels)
}

/// Total generated tokens across all levels (the PRP cost measure).
pub fn total_tokens(levels: &[LevelConfig]) -> usize {
    levels.iter().map(|l| l.tokens).sum()
}

/// Dense window of an episode starting at `start`: H states and H
/// per-step rewards, padded past the episode end by repeating the
/// terminal state with zero reward.
#[derive(Debug, Clone)]
pub struct DenseSlice {
    pub obs: Tensor2,
    pub rew: Vec<f32>,
}

pub fn dense_slice(ep: &Episode, start: usize, horizon: usize) -> Result<DenseSlice> {
    if ep.is_empty() {
        return Err(Error::Data("empty episode".into()));
    }
    let len = ep.len();
    let mut obs = Tensor2::zeros(horizon, ep.obs.cols);
    let mut rew = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let idx = (start + k).min(len);
        obs.row_mut(k).copy_from_slice(ep.obs.row(idx));
        rew.push(if start + k < len { ep.rew[start + k] } else { 0.0 });
    }
    Ok(DenseSlice { obs, rew })
}

/// Every `jump`-th row of a dense state window.
pub fn jumpy_from_dense(dense: &Tensor2, jump: usize) -> Tensor2 {
    let tokens = (dense.rows - 1) / jump + 1;
    let mut out = Tensor2::zeros(tokens, dense.cols);
    for t in 0..tokens {
        out.row_mut(t).copy_from_slice(dense.row(t * jump));
    }
    out
}

/// Per-level jumpy training sequences with property labels: the label
/// is the critic's evaluation of the *dense* window (the jumpy
/// sequence inherits the dense completion's property).
pub fn make_training_slices(
    ep: &Episode,
    levels: &[LevelConfig],
    start: usize,
    label: &dyn Fn(&DenseSlice) -> Result<f32>,
) -> Result<Vec<(Tensor2, f32)>> {
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let dense = dense_slice(ep, start, level.horizon)?;
        let value = label(&dense)?;
        out.push((jumpy_from_dense(&dense.obs, level.jump), value));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SelectionMode {
    Argmax,
    Nearest(f32),
}

/// Best candidate under the mode; ties break to the lowest index.
pub fn select_candidate(scores: &[f32], mode: SelectionMode) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::Planning("no candidates to select from".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Planning("non-finite candidate score".into()));
    }
    let key = |s: f32| match mode {
        SelectionMode::Argmax => s,
        SelectionMode::Nearest(target) => -(s - target).abs(),
    };
    let mut best = 0usize;
    for (i, &s) in scores.iter().enumerate().skip(1) {
        if key(s) > key(scores[best]) {
            best = i;
        }
    }
    Ok(best)
}

/// One level's planning record.
#[derive(Debug, Clone)]
pub struct LevelPlan {
    /// Candidate jumpy sequences, one (tokens x obs_dim) matrix each.
    pub candidates: Vec<Tensor2>,
    pub scores: Vec<f32>,
    pub selected: usize,
}

impl LevelPlan {
    pub fn selected_seq(&self) -> &Tensor2 {
        &self.candidates[self.selected]
    }
}

#[derive(Debug, Clone)]
pub struct PrpPlan {
    pub levels: Vec<LevelPlan>,
}

impl PrpPlan {
    /// First two states of the final (dense) level — the inverse
    /// dynamics input.
    pub fn action_pair(&self) -> (&[f32], &[f32]) {
        let last = self.levels.last().unwrap().selected_seq();
        (last.row(0), last.row(1))
    }
}

/// Planning-time knobs that are not per-level.
#[derive(Debug, Clone, Copy)]
pub struct PlanConfig {
    pub n_candidates: usize,
    pub mode: SelectionMode,
    /// When false, levels above 0 sample a single sequence without
    /// scoring (selection only at level 0).
    pub score_all_levels: bool,
}

/// One coarse-to-fine planning pass. Level 0 inpaints the current
/// observation as its first token; each subsequent level additionally
/// inpaints the previous level's first key point (x_{I_{l-1}}) as its
/// last token, bit-exactly. `score(level, candidate_index, seq)`
/// evaluates a jumpy candidate in the model's (normalized) units.
pub fn plan_once(
    levels: &[LevelConfig],
    backbones: &[GenerativeBackbone],
    samplers: &[SamplerConfig],
    conditions: &[f32],
    current_obs: &[f32],
    plan_cfg: &PlanConfig,
    score: &dyn Fn(usize, usize, &Tensor2) -> Result<f32>,
    rng: &mut Rng,
) -> Result<PrpPlan> {
    if levels.is_empty()
        || backbones.len() != levels.len()
        || samplers.len() != levels.len()
        || conditions.len() != levels.len()
    {
        return Err(Error::Planning("level/backbone/sampler/condition count mismatch".into()));
    }
    if plan_cfg.n_candidates == 0 {
        return Err(Error::Planning("n_candidates must be >= 1".into()));
    }
    let obs_dim = current_obs.len();
    let mut plan_levels: Vec<LevelPlan> = Vec::with_capacity(levels.len());
    for (l, level) in levels.iter().enumerate() {
        let bb = &backbones[l];
        if bb.geometry.tokens != level.tokens || bb.geometry.token_dim != obs_dim {
            return Err(Error::Planning(format!(
                "level {l}: backbone geometry {}x{} does not match level tokens {} x obs {}",
                bb.geometry.tokens, bb.geometry.token_dim, level.tokens, obs_dim
            )));
        }
        let mut slots: Vec<(usize, f32)> =
            current_obs.iter().enumerate().map(|(d, &v)| (d, v)).collect();
        if l > 0 {
            let prev = plan_levels[l - 1].selected_seq();
            let anchor = prev.row(1); // previous level's x_{I_{l-1}}
            let base = (level.tokens - 1) * obs_dim;
            slots.extend(anchor.iter().enumerate().map(|(d, &v)| (base + d, v)));
        }
        let mask = InpaintMask { slots };
        let scored = l == 0 || plan_cfg.score_all_levels;
        let n = if scored { plan_cfg.n_candidates } else { 1 };
        let flat = bb.sample(n, conditions[l], &samplers[l], &mask, rng)?;
        let mut candidates = Vec::with_capacity(n);
        for c in 0..n {
            let mut seq = Tensor2::zeros(level.tokens, obs_dim);
            seq.data.copy_from_slice(flat.row(c));
            candidates.push(seq);
        }
        let (scores, selected) = if scored {
            let mut scores = Vec::with_capacity(n);
            for (c, cand) in candidates.iter().enumerate() {
                scores.push(score(l, c, cand)?);
            }
            let selected = select_candidate(&scores, plan_cfg.mode)?;
            (scores, selected)
        } else {
            (vec![], 0)
        };
        plan_levels.push(LevelPlan { candidates, scores, selected });
    }
    Ok(PrpPlan { levels: plan_levels })
}
