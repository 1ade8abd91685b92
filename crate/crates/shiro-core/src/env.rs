//! Goal-conditioned point-mass environments.
//!
//! A first-order point agent moves inside a rectangular arena with
//! axis-aligned wall blocks. State is the `(x, y)` position, the action is a
//! per-step displacement clipped to `+-1`, and the reward is the negative
//! Euclidean distance to the episode goal, so reward is always `<= 0` and
//! zero exactly at the goal.
//!
//! Two built-in layouts exist: `point_reach` (an open 20x20 arena) and
//! `point_maze` (the same arena with a central wall block that forces a
//! U-shaped detour between the conventional start `(0, 0)` and the
//! evaluation goal `(0, 16)`). Custom layouts load from JSON.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-step displacement limit (action box is `+-1`, scaled by this).
pub const MAX_SPEED: f64 = 1.0;
/// An episode ends in success when the final position is strictly closer
/// than this to the goal.
pub const SUCCESS_RADIUS: f64 = 2.5;
/// Steps per episode.
pub const EPISODE_HORIZON: usize = 500;
/// Sub-goal components are clipped to `+-SUBGOAL_LIMIT`.
pub const SUBGOAL_LIMIT: f64 = 10.0;

/// How episode goals are drawn at reset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GoalMode {
    /// Uniform over the arena's free space.
    Train,
    /// The layout's fixed evaluation goal.
    Eval,
}

/// Axis-aligned wall block; the open interior is impassable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Wall {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl Wall {
    fn contains_open(&self, x: f64, y: f64) -> bool {
        x > self.x0 && x < self.x1 && y > self.y0 && y < self.y1
    }
}

/// Serializable maze layout.
///
/// `arena` is `[width, height]`; the rectangle spans
/// `[-2, width - 2] x [-2, height - 2]` so the conventional start `(0, 0)`
/// has a two-unit margin. Walls, start, and goal are absolute coordinates.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MazeSpec {
    pub arena: [f64; 2],
    pub walls: Vec<[f64; 4]>,
    pub start: [f64; 2],
    pub eval_goal: [f64; 2],
}

/// Lower-left corner of every arena.
const ARENA_ORIGIN: f64 = -2.0;

impl MazeSpec {
    pub fn point_maze() -> Self {
        Self {
            arena: [20.0, 20.0],
            walls: vec![[-2.0, 6.0, 10.0, 10.0]],
            start: [0.0, 0.0],
            eval_goal: [0.0, 16.0],
        }
    }

    pub fn point_reach() -> Self {
        Self {
            arena: [20.0, 20.0],
            walls: Vec::new(),
            start: [0.0, 0.0],
            eval_goal: [0.0, 16.0],
        }
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// The UMDP contract every environment here satisfies: goal-conditioned
/// reset, box-constrained steps, and a success predicate.
pub trait UmdpEnv: Send {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn goal_dim(&self) -> usize;
    /// Action box half-width per dimension.
    fn action_limit(&self) -> f64;
    /// Sub-goal box half-width per dimension.
    fn subgoal_limit(&self) -> f64;
    fn episode_horizon(&self) -> usize;
    fn set_goal_mode(&mut self, mode: GoalMode);
    /// Starts a new episode; returns the initial state and the episode goal.
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>);
    /// Advances one step; returns `(next_state, reward, done)`.
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool);
    fn is_success(&self, state: &[f64], goal: &[f64]) -> bool;
    /// Teleports the agent without touching the episode clock or goal.
    fn set_state(&mut self, state: &[f64]);
    /// Reinstates a mid-episode snapshot (position, goal, elapsed steps);
    /// used when resuming a checkpointed run.
    fn restore_episode(&mut self, state: &[f64], goal: &[f64], episode_step: usize);
    fn state(&self) -> Vec<f64>;
    fn episode_goal(&self) -> Vec<f64>;
    fn boxed_clone(&self) -> Box<dyn UmdpEnv>;
}

/// Point-mass agent in a walled arena.
#[derive(Debug, Clone)]
pub struct PointMazeEnv {
    bounds: [f64; 4],
    walls: Vec<Wall>,
    start: [f64; 2],
    eval_goal: [f64; 2],
    goal_mode: GoalMode,
    position: [f64; 2],
    goal: [f64; 2],
    episode_step: usize,
}

impl PointMazeEnv {
    pub fn point_maze() -> Self {
        Self::from_spec(&MazeSpec::point_maze()).expect("built-in layout is valid")
    }

    pub fn from_spec(spec: &MazeSpec) -> Result<Self> {
        let [w, h] = spec.arena;
        if w <= 0.0 || h <= 0.0 {
            return Err(Error::InvalidConfig("arena dimensions must be positive".into()));
        }
        let bounds = [ARENA_ORIGIN, ARENA_ORIGIN + w, ARENA_ORIGIN, ARENA_ORIGIN + h];
        let walls: Vec<Wall> = spec
            .walls
            .iter()
            .map(|&[x0, y0, x1, y1]| Wall { x0, y0, x1, y1 })
            .collect();
        for wall in &walls {
            if wall.x0 >= wall.x1 || wall.y0 >= wall.y1 {
                return Err(Error::InvalidConfig(format!("degenerate wall {wall:?}")));
            }
        }
        let env = Self {
            bounds,
            walls,
            start: spec.start,
            eval_goal: spec.eval_goal,
            goal_mode: GoalMode::Eval,
            position: spec.start,
            goal: spec.eval_goal,
            episode_step: 0,
        };
        for (label, p) in [("start", spec.start), ("eval_goal", spec.eval_goal)] {
            if !env.in_bounds(p[0], p[1]) || env.in_any_wall(p[0], p[1]) {
                return Err(Error::InvalidConfig(format!(
                    "{label} {p:?} is outside the arena or inside a wall"
                )));
            }
        }
        Ok(env)
    }

    fn in_bounds(&self, x: f64, y: f64) -> bool {
        x >= self.bounds[0] && x <= self.bounds[1] && y >= self.bounds[2] && y <= self.bounds[3]
    }

    fn in_any_wall(&self, x: f64, y: f64) -> bool {
        self.walls.iter().any(|w| w.contains_open(x, y))
    }

    fn sample_free_point(&self, rng: &mut ChaCha8Rng) -> [f64; 2] {
        loop {
            let x = rng.gen_range(self.bounds[0]..=self.bounds[1]);
            let y = rng.gen_range(self.bounds[2]..=self.bounds[3]);
            if !self.in_any_wall(x, y) {
                return [x, y];
            }
        }
    }

    /// Axis move with wall sliding: the perpendicular component of a motion
    /// into a wall face is cancelled by clamping to that face.
    fn move_axis(&mut self, axis: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        let from = self.position[axis];
        let mut to = from + delta;
        let other = self.position[1 - axis];
        for wall in &self.walls {
            let (lo, hi, o_lo, o_hi) = if axis == 0 {
                (wall.x0, wall.x1, wall.y0, wall.y1)
            } else {
                (wall.y0, wall.y1, wall.x0, wall.x1)
            };
            if other <= o_lo || other >= o_hi {
                continue;
            }
            if delta > 0.0 && from <= lo && to > lo {
                to = lo;
            } else if delta < 0.0 && from >= hi && to < hi {
                to = hi;
            }
        }
        let (b_lo, b_hi) = if axis == 0 {
            (self.bounds[0], self.bounds[1])
        } else {
            (self.bounds[2], self.bounds[3])
        };
        self.position[axis] = to.clamp(b_lo, b_hi);
    }

    fn reward(&self) -> f64 {
        let dx = self.position[0] - self.goal[0];
        let dy = self.position[1] - self.goal[1];
        -(dx * dx + dy * dy).sqrt()
    }
}

impl UmdpEnv for PointMazeEnv {
    fn state_dim(&self) -> usize {
        2
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn goal_dim(&self) -> usize {
        2
    }

    fn action_limit(&self) -> f64 {
        1.0
    }

    fn subgoal_limit(&self) -> f64 {
        SUBGOAL_LIMIT
    }

    fn episode_horizon(&self) -> usize {
        EPISODE_HORIZON
    }

    fn set_goal_mode(&mut self, mode: GoalMode) {
        self.goal_mode = mode;
    }

    fn reset(&mut self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        self.position = self.start;
        self.episode_step = 0;
        self.goal = match self.goal_mode {
            GoalMode::Eval => self.eval_goal,
            GoalMode::Train => self.sample_free_point(rng),
        };
        (self.position.to_vec(), self.goal.to_vec())
    }

    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        assert_eq!(action.len(), 2, "action length mismatch");
        assert!(
            action.iter().all(|a| a.is_finite()),
            "non-finite action {action:?}"
        );
        let mut clipped = [action[0], action[1]];
        for a in &mut clipped {
            if a.abs() > 1.0 {
                log::warn!("action component {a} outside +-1; clipping");
                *a = a.clamp(-1.0, 1.0);
            }
        }
        self.move_axis(0, clipped[0] * MAX_SPEED);
        self.move_axis(1, clipped[1] * MAX_SPEED);
        self.episode_step += 1;
        let done = self.episode_step >= EPISODE_HORIZON;
        (self.position.to_vec(), self.reward(), done)
    }

    fn is_success(&self, state: &[f64], goal: &[f64]) -> bool {
        let dx = state[0] - goal[0];
        let dy = state[1] - goal[1];
        (dx * dx + dy * dy).sqrt() < SUCCESS_RADIUS
    }

    fn set_state(&mut self, state: &[f64]) {
        assert_eq!(state.len(), 2, "state length mismatch");
        self.position = [state[0], state[1]];
    }

    fn restore_episode(&mut self, state: &[f64], goal: &[f64], episode_step: usize) {
        assert_eq!(state.len(), 2, "state length mismatch");
        assert_eq!(goal.len(), 2, "goal length mismatch");
        self.position = [state[0], state[1]];
        self.goal = [goal[0], goal[1]];
        self.episode_step = episode_step;
    }

    fn state(&self) -> Vec<f64> {
        self.position.to_vec()
    }

    fn episode_goal(&self) -> Vec<f64> {
        self.goal.to_vec()
    }

    fn boxed_clone(&self) -> Box<dyn UmdpEnv> {
        Box::new(self.clone())
    }
}

/// Open arena with no interior walls; a fast smoke-test task.
#[derive(Debug, Clone)]
pub struct PointReachEnv(PointMazeEnv);

impl PointReachEnv {
    pub fn new() -> Self {
        Self(PointMazeEnv::from_spec(&MazeSpec::point_reach()).expect("built-in layout is valid"))
    }
}

impl Default for PointReachEnv {
    fn default() -> Self {
        Self::new()
    }
}

impl UmdpEnv for PointReachEnv {
    fn state_dim(&self) -> usize {
        self.0.state_dim()
    }
    fn action_dim(&self) -> usize {
        self.0.action_dim()
    }
    fn goal_dim(&self) -> usize {
        self.0.goal_dim()
    }
    fn action_limit(&self) -> f64 {
        self.0.action_limit()
    }
    fn subgoal_limit(&self) -> f64 {
        self.0.subgoal_limit()
    }
    fn episode_horizon(&self) -> usize {
        self.0.episode_horizon()
    }
    fn set_goal_mode(&mut self, mode: GoalMode) {
        self.0.set_goal_mode(mode);
    }
    fn reset(&mut self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        self.0.reset(rng)
    }
    fn step(&mut self, action: &[f64]) -> (Vec<f64>, f64, bool) {
        self.0.step(action)
    }
    fn is_success(&self, state: &[f64], goal: &[f64]) -> bool {
        self.0.is_success(state, goal)
    }
    fn set_state(&mut self, state: &[f64]) {
        self.0.set_state(state);
    }
    fn restore_episode(&mut self, state: &[f64], goal: &[f64], episode_step: usize) {
        self.0.restore_episode(state, goal, episode_step);
    }
    fn state(&self) -> Vec<f64> {
        self.0.state()
    }
    fn episode_goal(&self) -> Vec<f64> {
        self.0.episode_goal()
    }
    fn boxed_clone(&self) -> Box<dyn UmdpEnv> {
        Box::new(self.clone())
    }
}

/// Resolves an environment name: `point_maze` and `point_reach` are built in,
/// anything else is treated as a path to a layout JSON file.
pub fn load_env(name: &str) -> Result<Box<dyn UmdpEnv>> {
    match name {
        "point_maze" => Ok(Box::new(PointMazeEnv::point_maze())),
        "point_reach" => Ok(Box::new(PointReachEnv::new())),
        path => {
            let spec = MazeSpec::from_file(std::path::Path::new(path)).map_err(|e| {
                Error::InvalidConfig(format!("unknown environment '{path}' ({e})"))
            })?;
            Ok(Box::new(PointMazeEnv::from_spec(&spec)?))
        }
    }
}
