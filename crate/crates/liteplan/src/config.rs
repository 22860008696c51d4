//! Run configuration: typed struct, plain-text sectioned key = value
//! parsing/serialization, CLI overrides, and the ablation-mode
//! transforms applied to the level spec.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::prp::{build_levels, LevelConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // [run]
    pub env: String,
    pub seed: u64,
    pub mode: String,
    pub dataset: String,
    pub out_dir: String,
    // [levels]
    pub total_horizon: usize,
    pub jumps: Vec<usize>,
    // [backbone]
    pub kind: String,
    pub hidden: usize,
    pub s_embed_dim: usize,
    // [schedule]
    pub t_steps: usize,
    pub sample_steps: usize,
    // [guidance]
    pub guidance: f32,
    pub keep_prob: f32,
    pub target: f32,
    // [critic]
    pub critic: String,
    pub gamma: f32,
    pub tau: f32,
    pub value_hidden: usize,
    pub invdyn_hidden: usize,
    // [train]
    pub grad_steps: usize,
    pub batch_size: usize,
    pub lr: f32,
    pub value_steps: usize,
    pub value_lr: f32,
    pub invdyn_steps: usize,
    pub invdyn_lr: f32,
    // [plan]
    pub n_candidates: usize,
    pub score_all_levels: bool,
    pub select_mode: String,
    // [data]
    pub episodes: usize,
    pub mix_expert: f32,
    pub mix_noisy: f32,
    pub mix_random: f32,
    pub mix_dead_end: f32,
    // [reflow]
    pub reflow_pairs: usize,
    pub reflow_steps: usize,
    pub reflow_lr: f32,
    pub reflow_gen_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "maze".into(),
            seed: 0,
            mode: "prp".into(),
            dataset: "data.prpd".into(),
            out_dir: "out".into(),
            total_horizon: 129,
            jumps: vec![32, 8, 1],
            kind: "diffusion".into(),
            hidden: 256,
            s_embed_dim: 8,
            t_steps: 1000,
            sample_steps: 3,
            guidance: 1.5,
            keep_prob: 0.75,
            target: 1.0,
            critic: "value".into(),
            gamma: 0.99,
            tau: 0.9,
            value_hidden: 64,
            invdyn_hidden: 64,
            grad_steps: 6000,
            batch_size: 256,
            lr: 2e-4,
            value_steps: 8000,
            value_lr: 1e-3,
            invdyn_steps: 6000,
            invdyn_lr: 1e-3,
            n_candidates: 32,
            score_all_levels: true,
            select_mode: "argmax".into(),
            episodes: 200,
            mix_expert: 0.4,
            mix_noisy: 0.3,
            mix_random: 0.2,
            mix_dead_end: 0.1,
            reflow_pairs: 10000,
            reflow_steps: 4000,
            reflow_lr: 2e-5,
            reflow_gen_steps: 20,
        }
    }
}

/// (section, key) pairs in canonical serialization order.
const FIELDS: &[(&str, &str)] = &[
    ("run", "env"),
    ("run", "seed"),
    ("run", "mode"),
    ("run", "dataset"),
    ("run", "out_dir"),
    ("levels", "total_horizon"),
    ("levels", "jumps"),
    ("backbone", "kind"),
    ("backbone", "hidden"),
    ("backbone", "s_embed_dim"),
    ("schedule", "t_steps"),
    ("schedule", "sample_steps"),
    ("guidance", "w"),
    ("guidance", "keep_prob"),
    ("guidance", "target"),
    ("critic", "kind"),
    ("critic", "gamma"),
    ("critic", "tau"),
    ("critic", "value_hidden"),
    ("critic", "invdyn_hidden"),
    ("train", "grad_steps"),
    ("train", "batch_size"),
    ("train", "lr"),
    ("train", "value_steps"),
    ("train", "value_lr"),
    ("train", "invdyn_steps"),
    ("train", "invdyn_lr"),
    ("plan", "n_candidates"),
    ("plan", "score_all_levels"),
    ("plan", "select_mode"),
    ("data", "episodes"),
    ("data", "mix_expert"),
    ("data", "mix_noisy"),
    ("data", "mix_random"),
    ("data", "mix_dead_end"),
    ("reflow", "pairs"),
    ("reflow", "steps"),
    ("reflow", "lr"),
    ("reflow", "gen_steps"),
];

fn fmt_f32(v: f32) -> String {
    // Shortest representation that round-trips.
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f32>().ok(), Some(v));
    s
}

impl RunConfig {
    fn get_field(&self, section: &str, key: &str) -> String {
        match (section, key) {
            ("run", "env") => self.env.clone(),
            ("run", "seed") => self.seed.to_string(),
            ("run", "mode") => self.mode.clone(),
            ("run", "dataset") => self.dataset.clone(),
            ("run", "out_dir") => self.out_dir.clone(),
            ("levels", "total_horizon") => self.total_horizon.to_string(),
            ("levels", "jumps") => {
                self.jumps.iter().map(|j| j.to_string()).collect::<Vec<_>>().join(",")
            }
            ("backbone", "kind") => self.kind.clone(),
            ("backbone", "hidden") => self.hidden.to_string(),
            ("backbone", "s_embed_dim") => self.s_embed_dim.to_string(),
            ("schedule", "t_steps") => self.t_steps.to_string(),
            ("schedule", "sample_steps") => self.sample_steps.to_string(),
            ("guidance", "w") => fmt_f32(self.guidance),
            ("guidance", "keep_prob") => fmt_f32(self.keep_prob),
            ("guidance", "target") => fmt_f32(self.target),
            ("critic", "kind") => self.critic.clone(),
            ("critic", "gamma") => fmt_f32(self.gamma),
            ("critic", "tau") => fmt_f32(self.tau),
            ("critic", "value_hidden") => self.value_hidden.to_string(),
            ("critic", "invdyn_hidden") => self.invdyn_hidden.to_string(),
            ("train", "grad_steps") => self.grad_steps.to_string(),
            ("train", "batch_size") => self.batch_size.to_string(),
            ("train", "lr") => fmt_f32(self.lr),
            ("train", "value_steps") => self.value_steps.to_string(),
            ("train", "value_lr") => fmt_f32(self.value_lr),
            ("train", "invdyn_steps") => self.invdyn_steps.to_string(),
            ("train", "invdyn_lr") => fmt_f32(self.invdyn_lr),
            ("plan", "n_candidates") => self.n_candidates.to_string(),
            ("plan", "score_all_levels") => self.score_all_levels.to_string(),
            ("plan", "select_mode") => self.select_mode.clone(),
            ("data", "episodes") => self.episodes.to_string(),
            ("data", "mix_expert") => fmt_f32(self.mix_expert),
            ("data", "mix_noisy") => fmt_f32(self.mix_noisy),
            ("data", "mix_random") => fmt_f32(self.mix_random),
            ("data", "mix_dead_end") => fmt_f32(self.mix_dead_end),
            ("reflow", "pairs") => self.reflow_pairs.to_string(),
            ("reflow", "steps") => self.reflow_steps.to_string(),
            ("reflow", "lr") => fmt_f32(self.reflow_lr),
            ("reflow", "gen_steps") => self.reflow_gen_steps.to_string(),
            _ => unreachable!("unlisted field {section}.{key}"),
        }
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let bad = |what: &str| Error::Config(format!("{section}.{key}: invalid {what} `{value}`"));
        macro_rules! parse {
            ($ty:ty, $what:expr) => {
                value.trim().parse::<$ty>().map_err(|_| bad($what))?
            };
        }
        match (section, key) {
            ("run", "env") => self.env = value.trim().to_string(),
            ("run", "seed") => self.seed = parse!(u64, "integer"),
            ("run", "mode") => self.mode = value.trim().to_string(),
            ("run", "dataset") => self.dataset = value.trim().to_string(),
            ("run", "out_dir") => self.out_dir = value.trim().to_string(),
            ("levels", "total_horizon") => self.total_horizon = parse!(usize, "integer"),
            ("levels", "jumps") => {
                let jumps: std::result::Result<Vec<usize>, _> =
                    value.split(',').map(|p| p.trim().parse::<usize>()).collect();
                self.jumps = jumps.map_err(|_| bad("jump list"))?;
            }
            ("backbone", "kind") => self.kind = value.trim().to_string(),
            ("backbone", "hidden") => self.hidden = parse!(usize, "integer"),
            ("backbone", "s_embed_dim") => self.s_embed_dim = parse!(usize, "integer"),
            ("schedule", "t_steps") => self.t_steps = parse!(usize, "integer"),
            ("schedule", "sample_steps") => self.sample_steps = parse!(usize, "integer"),
            ("guidance", "w") => self.guidance = parse!(f32, "number"),
            ("guidance", "keep_prob") => self.keep_prob = parse!(f32, "number"),
            ("guidance", "target") => self.target = parse!(f32, "number"),
            ("critic", "kind") => self.critic = value.trim().to_string(),
            ("critic", "gamma") => self.gamma = parse!(f32, "number"),
            ("critic", "tau") => self.tau = parse!(f32, "number"),
            ("critic", "value_hidden") => self.value_hidden = parse!(usize, "integer"),
            ("critic", "invdyn_hidden") => self.invdyn_hidden = parse!(usize, "integer"),
            ("train", "grad_steps") => self.grad_steps = parse!(usize, "integer"),
            ("train", "batch_size") => self.batch_size = parse!(usize, "integer"),
            ("train", "lr") => self.lr = parse!(f32, "number"),
            ("train", "value_steps") => self.value_steps = parse!(usize, "integer"),
            ("train", "value_lr") => self.value_lr = parse!(f32, "number"),
            ("train", "invdyn_steps") => self.invdyn_steps = parse!(usize, "integer"),
            ("train", "invdyn_lr") => self.invdyn_lr = parse!(f32, "number"),
            ("plan", "n_candidates") => self.n_candidates = parse!(usize, "integer"),
            ("plan", "score_all_levels") => self.score_all_levels = parse!(bool, "boolean"),
            ("plan", "select_mode") => self.select_mode = value.trim().to_string(),
            ("data", "episodes") => self.episodes = parse!(usize, "integer"),
            ("data", "mix_expert") => self.mix_expert = parse!(f32, "number"),
            ("data", "mix_noisy") => self.mix_noisy = parse!(f32, "number"),
            ("data", "mix_random") => self.mix_random = parse!(f32, "number"),
            ("data", "mix_dead_end") => self.mix_dead_end = parse!(f32, "number"),
            ("reflow", "pairs") => self.reflow_pairs = parse!(usize, "integer"),
            ("reflow", "steps") => self.reflow_steps = parse!(usize, "integer"),
            ("reflow", "lr") => self.reflow_lr = parse!(f32, "number"),
            ("reflow", "gen_steps") => self.reflow_gen_steps = parse!(usize, "integer"),
            _ => return Err(Error::Config(format!("unknown config key {section}.{key}"))),
        }
        Ok(())
    }

    /// Canonical sectioned key = value document.
    pub fn to_doc(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for &(section, key) in FIELDS {
            if section != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{section}]\n"));
                current = section;
            }
            out.push_str(&format!("{key} = {}\n", self.get_field(section, key)));
        }
        out
    }

    /// Parse a document; unknown keys are configuration errors.
    pub fn from_doc(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", lineno + 1))
            })?;
            if section.is_empty() {
                return Err(Error::Config(format!("line {}: key outside a section", lineno + 1)));
            }
            cfg.set(&section, key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_doc(&text)
    }

    /// Apply a `section.key=value` CLI override.
    pub fn apply_override(&mut self, spec: &str) -> Result<()> {
        let (path, value) = spec
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{spec}`: expected section.key=value")))?;
        let (section, key) = path
            .trim()
            .split_once('.')
            .ok_or_else(|| Error::Config(format!("override `{spec}`: expected section.key=value")))?;
        self.set(section, key, value.trim())
    }

    pub fn validate(&self) -> Result<()> {
        if !matches!(self.env.as_str(), "maze" | "runner") {
            return Err(Error::Config(format!("unknown environment {}", self.env)));
        }
        if !matches!(self.mode.as_str(), "prp" | "one-shot" | "only-last-level") {
            return Err(Error::Config(format!("unknown mode {}", self.mode)));
        }
        if !matches!(self.kind.as_str(), "diffusion" | "rf") {
            return Err(Error::Config(format!("unknown backbone kind {}", self.kind)));
        }
        if !matches!(self.critic.as_str(), "reward" | "value") {
            return Err(Error::Config(format!("unknown critic kind {}", self.critic)));
        }
        if !matches!(self.select_mode.as_str(), "argmax" | "nearest") {
            return Err(Error::Config(format!("unknown select mode {}", self.select_mode)));
        }
        if !(0.0..=1.0).contains(&self.keep_prob) {
            return Err(Error::Config("keep_prob must lie in [0, 1]".into()));
        }
        if !(0.0 < self.gamma && self.gamma <= 1.0) {
            return Err(Error::Config("gamma must lie in (0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.tau) || self.tau == 0.0 {
            return Err(Error::Config("tau must lie in (0, 1)".into()));
        }
        if self.n_candidates == 0 || self.batch_size == 0 || self.sample_steps == 0 {
            return Err(Error::Config("counts must be positive".into()));
        }
        // The level spec itself (including ablation transforms) must chain.
        self.levels()?;
        Ok(())
    }

    /// Level geometry after applying the ablation mode: `one-shot`
    /// densifies the full horizon into one level; `only-last-level`
    /// keeps only the innermost (dense, short-horizon) level.
    pub fn levels(&self) -> Result<Vec<LevelConfig>> {
        let base = build_levels(self.total_horizon, &self.jumps)?;
        match self.mode.as_str() {
            "prp" => Ok(base),
            "one-shot" => build_levels(self.total_horizon, &[1]),
            "only-last-level" => build_levels(base.last().unwrap().horizon, &[1]),
            other => Err(Error::Config(format!("unknown mode {other}"))),
        }
    }
}

/// Generic section map used by tests to inspect documents.
pub fn parse_doc_map(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut section = String::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            section = name.trim().to_string();
            continue;
        }
        if let Some((key, value)) = line.split_once('=') {
            out.insert(format!("{section}.{}", key.trim()), value.trim().to_string());
        } else {
            return Err(Error::Config(format!("malformed line `{line}`")));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn doc_roundtrip_identity() {
        let cfg = RunConfig::default();
        let doc = cfg.to_doc();
        let back = RunConfig::from_doc(&doc).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_doc(), doc);
    }

    #[test]
    fn overrides_and_unknown_keys() {
        let mut cfg = RunConfig::default();
        cfg.apply_override("train.lr=0.001").unwrap();
        assert_eq!(cfg.lr, 0.001);
        cfg.apply_override("levels.jumps=16,4,1").unwrap();
        assert_eq!(cfg.jumps, vec![16, 4, 1]);
        assert!(matches!(cfg.apply_override("nope.key=1").unwrap_err(), Error::Config(_)));
        assert!(matches!(cfg.apply_override("train.lr=abc").unwrap_err(), Error::Config(_)));
        assert!(matches!(cfg.apply_override("no-equals").unwrap_err(), Error::Config(_)));
    }

    #[test]
    fn mode_transforms_level_spec() {
        let mut cfg = RunConfig::default();
        assert_eq!(cfg.levels().unwrap().len(), 3);
        cfg.mode = "one-shot".into();
        let one = cfg.levels().unwrap();
        assert_eq!(one.len(), 1);
        assert_eq!((one[0].horizon, one[0].jump, one[0].tokens), (129, 1, 129));
        cfg.mode = "only-last-level".into();
        let last = cfg.levels().unwrap();
        assert_eq!(last.len(), 1);
        assert_eq!((last[0].horizon, last[0].jump, last[0].tokens), (9, 1, 9));
    }

    #[test]
    fn validation_rejects_bad_values() {
        let mut cfg = RunConfig::default();
        cfg.keep_prob = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.jumps = vec![32, 7, 1];
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig::default();
        cfg.mode = "bogus".into();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn comments_and_blank_lines_ignored() {
        let doc = "# header\n[train]\n\nlr = 0.5\n# trailing\n";
        let cfg = RunConfig::from_doc(doc).unwrap();
        assert_eq!(cfg.lr, 0.5);
    }

    #[test]
    fn malformed_lines_are_config_errors() {
        assert!(matches!(RunConfig::from_doc("[train]\nlr 0.5\n").unwrap_err(), Error::Config(_)));
        assert!(matches!(RunConfig::from_doc("lr = 0.5\n").unwrap_err(), Error::Config(_)));
    }
}
