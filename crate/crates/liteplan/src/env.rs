//! Desk-scale deterministic environments: a U-shaped point maze with a
//! sparse goal reward and a dead-end branch, and a dense-reward line
//! runner. Both are pure state machines; scripted policies for dataset
//! generation live here too.

use crate::error::{Error, Result};
use crate::numerics::Rng;

/// Axis-aligned wall rectangle (forbidden region).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f32,
    pub x1: f32,
    pub y0: f32,
    pub y1: f32,
}

impl Rect {
    pub fn contains(&self, x: f32, y: f32) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }
}

/// Point-mass maze in the unit box; actions are velocities in [-1,1]^2,
/// reward is 1 inside the goal disc, walls resolve by per-axis
/// projection onto the wall face.
#[derive(Debug, Clone)]
pub struct PointMaze2D {
    pub walls: Vec<Rect>,
    pub start: [f32; 2],
    pub start_jitter: f32,
    pub goal: [f32; 2],
    pub goal_radius: f32,
    pub dt: f32,
    pub max_steps: usize,
}

impl PointMaze2D {
    /// U-maze: two wall slabs rising from the floor with a blind
    /// corridor between them; the only start-to-goal route goes over
    /// the top. The corridor is reachable but dead-ends at the floor.
    pub fn u_maze() -> Self {
        Self {
            walls: vec![
                Rect { x0: 0.35, x1: 0.45, y0: 0.0, y1: 0.6 },
                Rect { x0: 0.55, x1: 0.65, y0: 0.0, y1: 0.6 },
            ],
            start: [0.12, 0.12],
            start_jitter: 0.05,
            goal: [0.88, 0.12],
            goal_radius: 0.07,
            dt: 0.05,
            max_steps: 200,
        }
    }

    pub fn in_goal(&self, state: &[f32]) -> bool {
        let dx = state[0] - self.goal[0];
        let dy = state[1] - self.goal[1];
        dx * dx + dy * dy <= self.goal_radius * self.goal_radius
    }

    pub fn reward(&self, state: &[f32]) -> f32 {
        if self.in_goal(state) {
            1.0
        } else {
            0.0
        }
    }

    fn blocked(&self, x: f32, y: f32) -> bool {
        self.walls.iter().any(|w| w.contains(x, y))
    }

    /// Move one axis at a time, projecting onto the nearest wall face
    /// when the target cell is forbidden. Valid (no tunneling) while
    /// the per-step displacement stays below the wall thickness.
    pub fn step(&self, state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        let ax = action[0].clamp(-1.0, 1.0);
        let ay = action[1].clamp(-1.0, 1.0);
        let (x, y) = (state[0], state[1]);
        let mut nx = (x + self.dt * ax).clamp(0.0, 1.0);
        for w in &self.walls {
            if w.contains(nx, y) {
                nx = if ax > 0.0 { w.x0 } else { w.x1 };
            }
        }
        let mut ny = (y + self.dt * ay).clamp(0.0, 1.0);
        for w in &self.walls {
            if w.contains(nx, ny) {
                ny = if ay > 0.0 { w.y0 } else { w.y1 };
            }
        }
        let next = vec![nx, ny];
        let r = self.reward(&next);
        (next, r)
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f32> {
        loop {
            let x = self.start[0] + rng.uniform_range(-self.start_jitter, self.start_jitter);
            let y = self.start[1] + rng.uniform_range(-self.start_jitter, self.start_jitter);
            let (x, y) = (x.clamp(0.0, 1.0), y.clamp(0.0, 1.0));
            if !self.blocked(x, y) {
                return vec![x, y];
            }
        }
    }

    /// True when the straight segment between two states clips a wall.
    /// Sampled at a resolution finer than the wall thickness so the
    /// check cannot tunnel through a wall between samples.
    pub fn segment_blocked(&self, a: &[f32], b: &[f32]) -> bool {
        const SAMPLES: usize = 16;
        (0..=SAMPLES).any(|i| {
            let t = i as f32 / SAMPLES as f32;
            let x = a[0] + t * (b[0] - a[0]);
            let y = a[1] + t * (b[1] - a[1]);
            self.blocked(x, y)
        })
    }

    /// Uniform sample over free space (outside walls and the goal
    /// disc); used for data-collection episode starts so coverage is
    /// not limited to paths out of the start corner.
    pub fn sample_free(&self, rng: &mut Rng) -> Vec<f32> {
        loop {
            let x = rng.uniform_range(0.02, 0.98);
            let y = rng.uniform_range(0.02, 0.98);
            if !self.blocked(x, y) && !self.in_goal(&[x, y]) {
                return vec![x, y];
            }
        }
    }
}

/// 1-D runner: thrust changes velocity (clipped to [-1,1]), position
/// integrates velocity, dense reward v' - 0.1 a^2.
#[derive(Debug, Clone)]
pub struct LineRunner {
    pub dt: f32,
    pub max_steps: usize,
}

impl LineRunner {
    pub fn new() -> Self {
        Self { dt: 0.05, max_steps: 100 }
    }

    /// State is (position, velocity).
    pub fn step(&self, state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        let a = action[0].clamp(-1.0, 1.0);
        let v = (state[1] + self.dt * a).clamp(-1.0, 1.0);
        let p = state[0] + self.dt * v;
        let r = v - 0.1 * a * a;
        (vec![p, v], r)
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f32> {
        vec![rng.uniform_range(-0.1, 0.1), rng.uniform_range(-0.1, 0.1)]
    }

    /// State-only reward surrogate used by candidate scoring (the
    /// action penalty needs the action, which plans don't carry).
    pub fn state_reward(&self, state: &[f32]) -> f32 {
        state[1]
    }
}

impl Default for LineRunner {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
pub enum Env {
    Maze(PointMaze2D),
    Runner(LineRunner),
}

impl Env {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "maze" => Ok(Env::Maze(PointMaze2D::u_maze())),
            "runner" => Ok(Env::Runner(LineRunner::new())),
            other => Err(Error::Config(format!("unknown environment {other}"))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Env::Maze(_) => "maze",
            Env::Runner(_) => "runner",
        }
    }

    pub fn obs_dim(&self) -> usize {
        2
    }

    pub fn act_dim(&self) -> usize {
        match self {
            Env::Maze(_) => 2,
            Env::Runner(_) => 1,
        }
    }

    pub fn act_bound(&self) -> Vec<f32> {
        vec![1.0; self.act_dim()]
    }

    pub fn max_steps(&self) -> usize {
        match self {
            Env::Maze(m) => m.max_steps,
            Env::Runner(r) => r.max_steps,
        }
    }

    pub fn reset(&self, rng: &mut Rng) -> Vec<f32> {
        match self {
            Env::Maze(m) => m.reset(rng),
            Env::Runner(r) => r.reset(rng),
        }
    }

    pub fn step(&self, state: &[f32], action: &[f32]) -> (Vec<f32>, f32) {
        match self {
            Env::Maze(m) => m.step(state, action),
            Env::Runner(r) => r.step(state, action),
        }
    }

    /// Whether a positive reward ends the episode (reach task). The
    /// maze terminates on goal entry; the runner pays dense reward for
    /// its whole horizon.
    pub fn terminal_on_reward(&self) -> bool {
        matches!(self, Env::Maze(_))
    }

    /// State-only per-step reward used for labels and plan scoring.
    pub fn state_reward(&self, state: &[f32]) -> f32 {
        match self {
            Env::Maze(m) => m.reward(state),
            Env::Runner(r) => r.state_reward(state),
        }
    }

    /// Whether the action is recoverable from the transition alone.
    /// Collisions and velocity clamps destroy that information: any
    /// action pushing further into the constraint yields the same next
    /// state, so such pairs are useless as inverse-dynamics targets.
    pub fn action_identifiable(&self, obs: &[f32], next: &[f32], action: &[f32]) -> bool {
        match self {
            Env::Maze(m) => (0..2).all(|d| (next[d] - obs[d] - m.dt * action[d]).abs() < 1e-5),
            Env::Runner(r) => (next[1] - obs[1] - r.dt * action[0]).abs() < 1e-5,
        }
    }
}

/// Scripted data-generation behaviors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    ExpertWaypoint,
    Noisy,
    Random,
    DeadEnd,
}

impl Policy {
    pub fn tag(&self) -> &'static str {
        match self {
            Policy::ExpertWaypoint => "expert",
            Policy::Noisy => "noisy",
            Policy::Random => "random",
            Policy::DeadEnd => "dead_end",
        }
    }
}

/// Per-episode policy state (waypoint progress).
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    policy: Policy,
    waypoints: Vec<[f32; 2]>,
    next_wp: usize,
}

const WP_TOL: f32 = 0.04;

impl ScriptedPolicy {
    /// Routes from `start` so episodes may begin anywhere in free
    /// space. Crossing height and descent lane are jittered per episode
    /// so purposeful transit covers the whole crossing band and right
    /// chamber rather than one hairline path; the climb happens at the
    /// start's own x, so climb coverage follows the start distribution.
    pub fn new(policy: Policy, env: &Env, start: &[f32], rng: &mut Rng) -> Self {
        let waypoints = match env {
            Env::Maze(m) => match policy {
                // Up at the current x, across the top, then descend
                // onto the goal — skipping legs already behind us.
                Policy::ExpertWaypoint | Policy::Noisy => {
                    let cross = rng.uniform_range(0.68, 0.88);
                    let descend = rng.uniform_range(0.70, 0.94);
                    let goal = [m.goal[0], m.goal[1]];
                    if start[0] > 0.67 {
                        // Right chamber: the goal is in direct line of sight.
                        vec![goal]
                    } else if start[1] >= cross {
                        vec![[descend, cross], goal]
                    } else {
                        vec![[start[0].clamp(0.04, 0.96), cross], [descend, cross], goal]
                    }
                }
                // Same climb, then down the blind corridor.
                Policy::DeadEnd => {
                    let cross = rng.uniform_range(0.68, 0.88);
                    if start[1] >= cross {
                        vec![[0.5, cross], [0.5, 0.1]]
                    } else {
                        vec![[start[0].clamp(0.04, 0.96), cross], [0.5, cross], [0.5, 0.1]]
                    }
                }
                Policy::Random => vec![],
            },
            Env::Runner(_) => vec![],
        };
        Self { policy, waypoints, next_wp: 0 }
    }

    pub fn act(&mut self, env: &Env, state: &[f32], rng: &mut Rng) -> Vec<f32> {
        match env {
            Env::Maze(_) => self.act_maze(state, rng),
            Env::Runner(_) => self.act_runner(rng),
        }
    }

    fn act_maze(&mut self, state: &[f32], rng: &mut Rng) -> Vec<f32> {
        if self.policy == Policy::Random {
            return vec![rng.uniform_range(-1.0, 1.0), rng.uniform_range(-1.0, 1.0)];
        }
        while self.next_wp < self.waypoints.len() {
            let wp = self.waypoints[self.next_wp];
            let (dx, dy) = (wp[0] - state[0], wp[1] - state[1]);
            if dx.hypot(dy) > WP_TOL {
                break;
            }
            self.next_wp += 1;
        }
        let mut a = if self.next_wp < self.waypoints.len() {
            let wp = self.waypoints[self.next_wp];
            let (dx, dy) = (wp[0] - state[0], wp[1] - state[1]);
            let norm = dx.hypot(dy).max(1e-6);
            // Full speed toward the waypoint, slowing on final approach.
            let speed = (norm / (0.05 * 2.0)).min(1.0);
            [speed * dx / norm, speed * dy / norm]
        } else {
            [0.0, 0.0]
        };
        if self.policy == Policy::Noisy {
            a[0] = (a[0] + 0.3 * rng.normal()).clamp(-1.0, 1.0);
            a[1] = (a[1] + 0.3 * rng.normal()).clamp(-1.0, 1.0);
        }
        a.to_vec()
    }

    fn act_runner(&mut self, rng: &mut Rng) -> Vec<f32> {
        match self.policy {
            // Near-optimal: hold the velocity cap with light thrust.
            Policy::ExpertWaypoint => vec![0.6],
            Policy::Noisy => vec![(0.6 + 0.4 * rng.normal()).clamp(-1.0, 1.0)],
            Policy::Random => vec![rng.uniform_range(-1.0, 1.0)],
            // Anti-expert: drives velocity negative.
            Policy::DeadEnd => vec![-0.6],
        }
    }
}
