//! Binary dataset container ("PRPD"), observation normalization stats,
//! and mixed-quality dataset generation from scripted policies.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::constants::STD_FLOOR;
use crate::env::{Env, Policy, ScriptedPolicy};
use crate::error::{Error, Result};
use crate::numerics::{Rng, Tensor2};

pub const DATASET_MAGIC: &[u8; 4] = b"PRPD";
pub const DATASET_VERSION: u32 = 1;

/// One rollout: `obs` has len+1 rows, `act` and `rew` have len entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub obs: Tensor2,
    pub act: Tensor2,
    pub rew: Vec<f32>,
    pub terminal: bool,
}

impl Episode {
    pub fn len(&self) -> usize {
        self.rew.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rew.is_empty()
    }
}

/// Per-dimension observation mean/std.
#[derive(Debug, Clone, PartialEq)]
pub struct ObsStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl ObsStats {
    pub fn from_episodes(episodes: &[Episode], obs_dim: usize) -> Result<Self> {
        let mut sum = vec![0.0f64; obs_dim];
        let mut sumsq = vec![0.0f64; obs_dim];
        let mut count = 0usize;
        for ep in episodes {
            for r in 0..ep.obs.rows {
                for d in 0..obs_dim {
                    let v = ep.obs.get(r, d) as f64;
                    sum[d] += v;
                    sumsq[d] += v * v;
                }
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Data("no observations to compute stats from".into()));
        }
        let mut mean = vec![0.0f32; obs_dim];
        let mut std = vec![0.0f32; obs_dim];
        for d in 0..obs_dim {
            let m = sum[d] / count as f64;
            let var = (sumsq[d] / count as f64 - m * m).max(0.0);
            mean[d] = m as f32;
            std[d] = (var.sqrt() as f32).max(STD_FLOOR);
        }
        Ok(Self { mean, std })
    }

    pub fn validate(&self) -> Result<()> {
        for (d, (&m, &s)) in self.mean.iter().zip(self.std.iter()).enumerate() {
            if !m.is_finite() || !s.is_finite() {
                return Err(Error::Data(format!("non-finite obs stats at dimension {d}")));
            }
            if s <= 1e-6 {
                return Err(Error::Data(format!("degenerate obs std at dimension {d}")));
            }
        }
        Ok(())
    }

    pub fn normalize(&self, obs: &[f32]) -> Vec<f32> {
        obs.iter().zip(self.mean.iter().zip(self.std.iter())).map(|(&v, (&m, &s))| (v - m) / s).collect()
    }

    pub fn denormalize(&self, obs: &[f32]) -> Vec<f32> {
        obs.iter().zip(self.mean.iter().zip(self.std.iter())).map(|(&v, (&m, &s))| v * s + m).collect()
    }

    pub fn normalize_rows(&self, t: &Tensor2) -> Tensor2 {
        let mut out = t.clone();
        for r in 0..out.rows {
            for d in 0..out.cols {
                out.set(r, d, (t.get(r, d) - self.mean[d]) / self.std[d]);
            }
        }
        out
    }

    pub fn denormalize_rows(&self, t: &Tensor2) -> Tensor2 {
        let mut out = t.clone();
        for r in 0..out.rows {
            for d in 0..out.cols {
                out.set(r, d, t.get(r, d) * self.std[d] + self.mean[d]);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub episodes: Vec<Episode>,
    pub stats: ObsStats,
}

fn write_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn write_f32s(w: &mut impl Write, vs: &[f32]) -> Result<()> {
    for v in vs {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_f32s(r: &mut impl Read, n: usize) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; 4 * n];
    r.read_exact(&mut bytes)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect())
}

impl Dataset {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(file);
        w.write_all(DATASET_MAGIC)?;
        write_u32(&mut w, DATASET_VERSION)?;
        write_u32(&mut w, self.obs_dim as u32)?;
        write_u32(&mut w, self.act_dim as u32)?;
        write_u32(&mut w, self.episodes.len() as u32)?;
        for ep in &self.episodes {
            let len = ep.len();
            if ep.obs.rows != len + 1
                || ep.obs.cols != self.obs_dim
                || ep.act.rows != len
                || ep.act.cols != self.act_dim
            {
                return Err(Error::Data("episode shape inconsistent with header dims".into()));
            }
            write_u32(&mut w, len as u32)?;
            write_f32s(&mut w, &ep.obs.data)?;
            write_f32s(&mut w, &ep.act.data)?;
            write_f32s(&mut w, &ep.rew)?;
            w.write_all(&[u8::from(ep.terminal)])?;
        }
        write_f32s(&mut w, &self.stats.mean)?;
        write_f32s(&mut w, &self.stats.std)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let mut r = std::io::BufReader::new(file);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != DATASET_MAGIC {
            return Err(Error::Data(format!("bad dataset magic {magic:?}")));
        }
        let version = read_u32(&mut r)?;
        if version != DATASET_VERSION {
            return Err(Error::Data(format!("unsupported dataset version {version}")));
        }
        let obs_dim = read_u32(&mut r)? as usize;
        let act_dim = read_u32(&mut r)? as usize;
        let n_eps = read_u32(&mut r)? as usize;
        let mut episodes = Vec::with_capacity(n_eps);
        for _ in 0..n_eps {
            let len = read_u32(&mut r)? as usize;
            let obs_data = read_f32s(&mut r, (len + 1) * obs_dim)?;
            let act_data = read_f32s(&mut r, len * act_dim)?;
            let rew = read_f32s(&mut r, len)?;
            let mut term = [0u8; 1];
            r.read_exact(&mut term)?;
            let mut obs = Tensor2::zeros(len + 1, obs_dim);
            obs.data = obs_data;
            let mut act = Tensor2::zeros(len, act_dim);
            act.data = act_data;
            episodes.push(Episode { obs, act, rew, terminal: term[0] != 0 });
        }
        let mean = read_f32s(&mut r, obs_dim)?;
        let std = read_f32s(&mut r, obs_dim)?;
        let stats = ObsStats { mean, std };
        stats.validate()?;
        Ok(Self { obs_dim, act_dim, episodes, stats })
    }
}

/// Fractions of scripted behaviors in a generated dataset; must sum
/// to 1.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PolicyMix {
    pub expert: f32,
    pub noisy: f32,
    pub random: f32,
    pub dead_end: f32,
}

impl PolicyMix {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.expert, self.noisy, self.random, self.dead_end];
        if parts.iter().any(|p| *p < 0.0) {
            return Err(Error::Data("negative policy fraction".into()));
        }
        let sum: f32 = parts.iter().sum();
        if (sum - 1.0).abs() > 1e-5 {
            return Err(Error::Data(format!("policy fractions sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Deterministic episode assignment: fractions quantized by count.
    pub fn assign(&self, n_episodes: usize) -> Vec<Policy> {
        let n_expert = (self.expert * n_episodes as f32).round() as usize;
        let n_noisy = (self.noisy * n_episodes as f32).round() as usize;
        let n_random = (self.random * n_episodes as f32).round() as usize;
        let mut out = Vec::with_capacity(n_episodes);
        for i in 0..n_episodes {
            out.push(if i < n_expert {
                Policy::ExpertWaypoint
            } else if i < n_expert + n_noisy {
                Policy::Noisy
            } else if i < n_expert + n_noisy + n_random {
                Policy::Random
            } else {
                Policy::DeadEnd
            });
        }
        out
    }
}

/// Sidecar provenance: which scripted policy produced each episode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Provenance {
    pub env: String,
    pub seed: u64,
    pub mix: PolicyMix,
    pub episode_policies: Vec<String>,
}

impl Provenance {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("provenance serialization: {e}")))?;
        std::fs::write(path, json)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("provenance parse: {e}")))
    }
}

/// Roll out the scripted policy mix; every episode runs to the env's
/// step cap so property labels see complete futures. Reproducible per
/// seed via derived per-episode streams.
pub fn generate_dataset(
    env: &Env,
    mix: &PolicyMix,
    n_episodes: usize,
    seed: u64,
) -> Result<(Dataset, Provenance)> {
    if n_episodes == 0 {
        return Err(Error::Data("n_episodes must be >= 1".into()));
    }
    mix.validate()?;
    let assignment = mix.assign(n_episodes);
    let root = Rng::seed(seed);
    let mut episodes = Vec::with_capacity(n_episodes);
    let mut labels = Vec::with_capacity(n_episodes);
    for (i, &policy) in assignment.iter().enumerate() {
        let mut rng = root.derive(i as u64);
        // Half the maze episodes start anywhere in free space so the
        // models see purposeful motion over the whole map, not just
        // along routes out of the start corner (the eval start).
        let mut state = match env {
            Env::Maze(m) if i % 2 == 1 => m.sample_free(&mut rng),
            _ => env.reset(&mut rng),
        };
        let mut pol = ScriptedPolicy::new(policy, env, &state, &mut rng);
        let steps = env.max_steps();
        let mut obs_rows = vec![state.clone()];
        let mut act_rows: Vec<Vec<f32>> = vec![];
        let mut rew = Vec::with_capacity(steps);
        let mut terminal = false;
        for _ in 0..steps {
            let a = pol.act(env, &state, &mut rng);
            let (next, r) = env.step(&state, &a);
            act_rows.push(a);
            rew.push(r);
            obs_rows.push(next.clone());
            state = next;
            // The maze is a reach task: the episode ends on goal entry.
            // Letting rollouts idle at the goal would swamp the data with
            // trivial stay-put windows and inflate value labels there.
            if let Env::Maze(m) = env {
                if m.in_goal(&state) {
                    terminal = true;
                    break;
                }
            }
        }
        let len = act_rows.len();
        let mut obs = Tensor2::zeros(len + 1, env.obs_dim());
        let mut act = Tensor2::zeros(len, env.act_dim());
        for (t, row) in obs_rows.iter().enumerate() {
            obs.row_mut(t).copy_from_slice(row);
        }
        for (t, row) in act_rows.iter().enumerate() {
            act.row_mut(t).copy_from_slice(row);
        }
        episodes.push(Episode { obs, act, rew, terminal });
        labels.push(policy.tag().to_string());
    }
    let stats = ObsStats::from_episodes(&episodes, env.obs_dim())?;
    stats.validate()?;
    let dataset = Dataset { obs_dim: env.obs_dim(), act_dim: env.act_dim(), episodes, stats };
    let provenance =
        Provenance { env: env.name().to_string(), seed, mix: *mix, episode_policies: labels };
    Ok((dataset, provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::PointMaze2D;

    fn mixed() -> PolicyMix {
        PolicyMix { expert: 0.4, noisy: 0.3, random: 0.2, dead_end: 0.1 }
    }

    #[test]
    fn mix_must_sum_to_one() {
        assert!(mixed().validate().is_ok());
        let bad = PolicyMix { expert: 0.5, noisy: 0.5, random: 0.5, dead_end: 0.0 };
        assert!(bad.validate().is_err());
        assert!(matches!(bad.validate().unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn zero_episodes_is_data_error() {
        let env = Env::from_name("maze").unwrap();
        assert!(matches!(generate_dataset(&env, &mixed(), 0, 1).unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn normalize_basics() {
        let stats = ObsStats { mean: vec![1.0, -2.0], std: vec![2.0, 0.5] };
        assert_eq!(stats.normalize(&[1.0, -2.0]), vec![0.0, 0.0]);
        let x = [0.3f32, 0.7];
        let rt = stats.denormalize(&stats.normalize(&x));
        for (a, b) in rt.iter().zip(x.iter()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn degenerate_std_names_dimension() {
        let stats = ObsStats { mean: vec![0.0, 0.0], std: vec![1.0, 1e-7] };
        let err = stats.validate().unwrap_err();
        assert!(err.to_string().contains("dimension 1"), "{err}");
    }

    #[test]
    fn dataset_normalized_payload_is_standardized() {
        let env = Env::from_name("maze").unwrap();
        let (ds, _) = generate_dataset(&env, &mixed(), 20, 3).unwrap();
        // Re-computing stats on the normalized payload gives mean 0 / std 1.
        let normed: Vec<Episode> = ds
            .episodes
            .iter()
            .map(|ep| Episode {
                obs: ds.stats.normalize_rows(&ep.obs),
                act: ep.act.clone(),
                rew: ep.rew.clone(),
                terminal: ep.terminal,
            })
            .collect();
        let restats = ObsStats::from_episodes(&normed, 2).unwrap();
        for d in 0..2 {
            assert!(restats.mean[d].abs() < 1e-3, "mean {}", restats.mean[d]);
            assert!((restats.std[d] - 1.0).abs() < 1e-3, "std {}", restats.std[d]);
        }
    }

    #[test]
    fn save_load_roundtrip_byte_identical() {
        let env = Env::from_name("runner").unwrap();
        let (ds, _) = generate_dataset(&env, &mixed(), 10, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.prpd");
        let p2 = dir.path().join("b.prpd");
        ds.save(&p1).unwrap();
        let loaded = Dataset::load(&p1).unwrap();
        assert_eq!(loaded, ds);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn same_seed_byte_identical_files() {
        let env = Env::from_name("maze").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut paths = vec![];
        for name in ["x.prpd", "y.prpd"] {
            let (ds, _) = generate_dataset(&env, &mixed(), 15, 9).unwrap();
            let p = dir.path().join(name);
            ds.save(&p).unwrap();
            paths.push(p);
        }
        assert_eq!(std::fs::read(&paths[0]).unwrap(), std::fs::read(&paths[1]).unwrap());
    }

    #[test]
    fn corrupt_magic_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.prpd");
        std::fs::write(&p, b"NOPE0000").unwrap();
        assert!(matches!(Dataset::load(&p).unwrap_err(), Error::Data(_)));
    }

    #[test]
    fn expert_mix_reaches_goal() {
        let env = Env::from_name("maze").unwrap();
        let maze = PointMaze2D::u_maze();
        let all_expert = PolicyMix { expert: 1.0, noisy: 0.0, random: 0.0, dead_end: 0.0 };
        let (ds, prov) = generate_dataset(&env, &all_expert, 40, 11).unwrap();
        assert!(prov.episode_policies.iter().all(|p| p == "expert"));
        let reached = ds
            .episodes
            .iter()
            .filter(|ep| (0..ep.obs.rows).any(|r| maze.in_goal(ep.obs.row(r))))
            .count();
        assert!(reached as f32 / 40.0 >= 0.95, "reached {reached}/40");
    }

    #[test]
    fn random_mix_goal_rate_near_pinned_baseline() {
        // Random walks rarely reach the goal: only free-space starts
        // that happen to begin near it drift in. Measured once: 5 of 40
        // (all from free-space starts; corner starts never reach).
        let env = Env::from_name("maze").unwrap();
        let maze = PointMaze2D::u_maze();
        let all_random = PolicyMix { expert: 0.0, noisy: 0.0, random: 1.0, dead_end: 0.0 };
        let (ds, _) = generate_dataset(&env, &all_random, 40, 13).unwrap();
        let reached = ds
            .episodes
            .iter()
            .filter(|ep| (0..ep.obs.rows).any(|r| maze.in_goal(ep.obs.row(r))))
            .count();
        assert!(reached <= 10, "random baseline drifted: {reached}/40");
    }

    #[test]
    fn provenance_roundtrip_and_assignment() {
        let env = Env::from_name("maze").unwrap();
        let (_, prov) = generate_dataset(&env, &mixed(), 10, 17).unwrap();
        assert_eq!(prov.episode_policies.len(), 10);
        assert_eq!(prov.episode_policies.iter().filter(|p| *p == "expert").count(), 4);
        assert_eq!(prov.episode_policies.iter().filter(|p| *p == "dead_end").count(), 1);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("prov.json");
        prov.save(&p).unwrap();
        let back = Provenance::load(&p).unwrap();
        assert_eq!(back.episode_policies, prov.episode_policies);
        assert_eq!(back.seed, 17);
    }
}
