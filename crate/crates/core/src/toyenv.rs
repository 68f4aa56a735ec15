//! Deterministic pellet-and-ghost gridworld with an exactly solved tabular
//! agent, used as ground truth for every other stage of the pipeline.
//!
//! Maps are plain text: `#` wall, `.` pellet, `o` power pellet, `G` ghost
//! start, `P` agent start, anything else open floor. The ghost bounces
//! horizontally along its row. Episodes end when the agent meets the ghost,
//! eats the last pellet, or hits the step cap.
//!
//! Stream states are entity planes rendered at 84×84: pellets, the ghost's
//! previous cell, the ghost's current cell, and the agent (newest last).

use std::collections::{HashMap, VecDeque};
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{forward, Activation, FlattenOrder, LayerSpec, NetworkSpec};
use crate::streams::{Stream, StreamMeta, StreamRecord};
use crate::tensor::{state_to_input, Tensor};

pub const ACTION_LABELS: [&str; 5] = ["up", "down", "left", "right", "noop"];
pub const NOOP: usize = 4;
pub const MAX_DIM: usize = 12;
pub const STATE_LIMIT: usize = 100_000;
pub const INPUT_SIZE: usize = 84;
pub const PLANES: usize = 4;
/// Raw-frame pixels per grid cell.
pub const FRAME_CELL: usize = 12;
/// Longest run of no-op steps at the start of an episode.
pub const MAX_NOOPS: usize = 30;

pub const DEFAULT_MAP: &str = "\
#######
#P . o#
# # # #
#. G .#
#######
";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardSpec {
    pub pellet: f64,
    pub power_pellet: f64,
    /// Added when the agent meets the ghost.
    pub death: f64,
    pub step: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self::regular()
    }
}

impl RewardSpec {
    pub fn regular() -> Self {
        Self {
            pellet: 10.0,
            power_pellet: 50.0,
            death: 0.0,
            step: 0.0,
        }
    }

    /// Only power pellets pay.
    pub fn power_pill() -> Self {
        Self {
            pellet: 0.0,
            power_pellet: 50.0,
            ..Self::regular()
        }
    }

    /// Regular rewards plus a large penalty for meeting the ghost.
    pub fn fear_ghosts() -> Self {
        Self {
            death: -100.0,
            ..Self::regular()
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "regular" => Some(Self::regular()),
            "power-pill" => Some(Self::power_pill()),
            "fear-ghosts" => Some(Self::fear_ghosts()),
            _ => None,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ToyState {
    pub agent: usize,
    pub phase: usize,
    /// Bit i set while pellet i is uneaten.
    pub pellets: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridWorld {
    pub width: usize,
    pub height: usize,
    pub walls: Vec<bool>,
    pub pellet_cells: Vec<usize>,
    pub power: Vec<bool>,
    pub agent_start: usize,
    /// Ghost cell per patrol phase; empty when there is no ghost.
    pub patrol: Vec<usize>,
    pub rewards: RewardSpec,
    pub step_cap: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub next: ToyState,
    pub reward: f64,
    pub terminal: bool,
    pub died: bool,
}

impl GridWorld {
    pub fn parse(map: &str, rewards: RewardSpec) -> Result<Self> {
        let lines: Vec<&str> = map.lines().filter(|l| !l.trim().is_empty()).collect();
        let height = lines.len();
        let width = lines.iter().map(|l| l.chars().count()).max().unwrap_or(0);
        if height == 0 || width == 0 || height > MAX_DIM || width > MAX_DIM {
            return Err(Error::InvalidArgument(format!(
                "map must be between 1x1 and {MAX_DIM}x{MAX_DIM}, got {width}x{height}"
            )));
        }
        let mut walls = vec![false; width * height];
        let mut pellet_cells = Vec::new();
        let mut power = Vec::new();
        let (mut agent, mut ghost) = (None, None);
        for (y, line) in lines.iter().enumerate() {
            let chars: Vec<char> = line.chars().collect();
            for x in 0..width {
                let cell = y * width + x;
                match chars.get(x).copied().unwrap_or(' ') {
                    '#' => walls[cell] = true,
                    '.' => {
                        pellet_cells.push(cell);
                        power.push(false);
                    }
                    'o' => {
                        pellet_cells.push(cell);
                        power.push(true);
                    }
                    'P' if agent.is_none() => agent = Some(cell),
                    'G' if ghost.is_none() => ghost = Some(cell),
                    'P' | 'G' => {
                        return Err(Error::InvalidArgument(format!(
                            "map has more than one {:?}",
                            chars[x]
                        )))
                    }
                    _ => {}
                }
            }
        }
        if pellet_cells.len() > 24 {
            return Err(Error::InvalidArgument(format!(
                "at most 24 pellets supported, map has {}",
                pellet_cells.len()
            )));
        }
        let agent_start =
            agent.ok_or_else(|| Error::InvalidArgument("map has no agent start 'P'".into()))?;
        let mut env = Self {
            width,
            height,
            walls,
            pellet_cells,
            power,
            agent_start,
            patrol: Vec::new(),
            rewards,
            step_cap: 200,
        };
        if let Some(g) = ghost {
            env.patrol = env.bounce_patrol(g);
        }
        Ok(env)
    }

    pub fn load(map_path: &Path, rewards: RewardSpec) -> Result<Self> {
        let text = fs::read_to_string(map_path).map_err(|e| Error::io(map_path, e))?;
        Self::parse(&text, rewards)
    }

    pub fn default_env(rewards: RewardSpec) -> Self {
        Self::parse(DEFAULT_MAP, rewards).expect("default map parses")
    }

    fn open(&self, x: isize, y: isize) -> bool {
        x >= 0
            && y >= 0
            && (x as usize) < self.width
            && (y as usize) < self.height
            && !self.walls[y as usize * self.width + x as usize]
    }

    fn xy(&self, cell: usize) -> (isize, isize) {
        ((cell % self.width) as isize, (cell / self.width) as isize)
    }

    /// Horizontal back-and-forth patrol, starting to the right.
    fn bounce_patrol(&self, start: usize) -> Vec<usize> {
        let (mut x, y) = self.xy(start);
        if !self.open(x - 1, y) && !self.open(x + 1, y) {
            return vec![start];
        }
        let mut dir = 1isize;
        let mut seen = HashMap::new();
        let mut cells = Vec::new();
        loop {
            if !self.open(x + dir, y) {
                dir = -dir;
            }
            if let Some(&from) = seen.get(&(x, dir)) {
                return cells.split_off(from);
            }
            seen.insert((x, dir), cells.len());
            cells.push(y as usize * self.width + x as usize);
            x += dir;
        }
    }

    pub fn initial_state(&self) -> ToyState {
        ToyState {
            agent: self.agent_start,
            phase: 0,
            pellets: if self.pellet_cells.is_empty() {
                0
            } else {
                (1u32 << self.pellet_cells.len()) - 1
            },
        }
    }

    pub fn ghost_cell(&self, phase: usize) -> Option<usize> {
        self.patrol.get(phase).copied()
    }

    pub fn ghost_prev_cell(&self, phase: usize) -> Option<usize> {
        let n = self.patrol.len();
        (n > 0).then(|| self.patrol[(phase + n - 1) % n])
    }

    pub fn step(&self, s: ToyState, action: usize) -> Outcome {
        let (x, y) = self.xy(s.agent);
        let (dx, dy) = match action {
            0 => (0, -1),
            1 => (0, 1),
            2 => (-1, 0),
            3 => (1, 0),
            _ => (0, 0),
        };
        let agent = if self.open(x + dx, y + dy) {
            ((y + dy) as usize) * self.width + (x + dx) as usize
        } else {
            s.agent
        };
        let phase = if self.patrol.is_empty() {
            0
        } else {
            (s.phase + 1) % self.patrol.len()
        };
        let g0 = self.ghost_cell(s.phase);
        let g1 = self.ghost_cell(phase);
        let died = g1 == Some(agent) || (g0 == Some(agent) && g1 == Some(s.agent));
        let mut next = ToyState {
            agent,
            phase,
            pellets: s.pellets,
        };
        let mut reward = self.rewards.step;
        if died {
            return Outcome {
                next,
                reward: reward + self.rewards.death,
                terminal: true,
                died,
            };
        }
        if let Some(bit) = self.pellet_cells.iter().position(|&c| c == agent) {
            if s.pellets & (1 << bit) != 0 {
                next.pellets &= !(1 << bit);
                reward += if self.power[bit] {
                    self.rewards.power_pellet
                } else {
                    self.rewards.pellet
                };
            }
        }
        Outcome {
            next,
            reward,
            terminal: s.pellets != 0 && next.pellets == 0,
            died,
        }
    }
}

// --- tabular MDP ----------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    /// `None` when the transition ends the episode.
    pub next: Option<usize>,
    pub reward: f64,
}

/// Finite deterministic MDP; state 0 is the initial state.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub num_actions: usize,
    /// `[state][action]`
    pub transitions: Vec<Vec<Transition>>,
}

#[derive(Debug, Clone)]
pub struct EnumeratedEnv {
    pub mdp: TabularMdp,
    pub states: Vec<ToyState>,
    pub index: HashMap<ToyState, usize>,
}

impl GridWorld {
    /// Breadth-first enumeration of every non-terminal state reachable from the start.
    pub fn enumerate(&self, limit: usize) -> Result<EnumeratedEnv> {
        let start = self.initial_state();
        let mut states = vec![start];
        let mut index = HashMap::from([(start, 0usize)]);
        let mut transitions = Vec::new();
        let mut queue = VecDeque::from([0usize]);
        while let Some(i) = queue.pop_front() {
            let s = states[i];
            let mut row = Vec::with_capacity(ACTION_LABELS.len());
            for a in 0..ACTION_LABELS.len() {
                let o = self.step(s, a);
                let next = if o.terminal {
                    None
                } else {
                    Some(*index.entry(o.next).or_insert_with(|| {
                        states.push(o.next);
                        queue.push_back(states.len() - 1);
                        states.len() - 1
                    }))
                };
                row.push(Transition {
                    next,
                    reward: o.reward,
                });
            }
            transitions.push(row);
            if states.len() > limit {
                return Err(Error::StateSpaceOverflow {
                    states: states.len(),
                    limit,
                });
            }
        }
        Ok(EnumeratedEnv {
            mdp: TabularMdp {
                num_actions: ACTION_LABELS.len(),
                transitions,
            },
            states,
            index,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    /// `[state][action]`
    pub q: Vec<Vec<f64>>,
    pub discount: f64,
    /// Bellman optimality residual of `q` (sup norm).
    pub residual: f64,
    pub iterations: usize,
}

impl TabularPolicy {
    pub fn greedy(&self, state: usize) -> usize {
        greedy(&self.q[state])
    }
}

/// Lowest index among the maximal entries.
pub fn greedy<T: PartialOrd + Copy>(q: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in q.iter().enumerate() {
        if v > q[best] {
            best = i;
        }
    }
    best
}

fn bellman(mdp: &TabularMdp, q: &[Vec<f64>], discount: f64) -> Vec<Vec<f64>> {
    let v: Vec<f64> = q
        .iter()
        .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    mdp.transitions
        .par_iter()
        .map(|row| {
            row.iter()
                .map(|t| t.reward + t.next.map_or(0.0, |n| discount * v[n]))
                .collect()
        })
        .collect()
}

/// Q-value iteration until the Bellman residual of the returned table is <= `tol`.
pub fn solve(mdp: &TabularMdp, discount: f64, tol: f64) -> Result<TabularPolicy> {
    if !(0.0..1.0).contains(&discount) {
        return Err(Error::InvalidArgument(format!(
            "discount must be in [0, 1), got {discount}"
        )));
    }
    let mut q = vec![vec![0.0; mdp.num_actions]; mdp.transitions.len()];
    for iterations in 0..1_000_000 {
        let next = bellman(mdp, &q, discount);
        let residual = q
            .iter()
            .flatten()
            .zip(next.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if residual <= tol {
            return Ok(TabularPolicy {
                q,
                discount,
                residual,
                iterations,
            });
        }
        q = next;
    }
    Err(Error::InvalidArgument("value iteration did not converge".into()))
}

// --- rendering --------------------------------------------------------------

/// Pixel edge of one grid cell in the 84×84 input planes.
pub fn plane_cell(env: &GridWorld) -> usize {
    INPUT_SIZE / (env.width.max(env.height) + 1)
}

/// Grid-resolution planes `[plane][y][x]` (values 0/1) for a state.
pub fn grid_planes(env: &GridWorld, s: &ToyState) -> Vec<u8> {
    let n = env.width * env.height;
    let mut p = vec![0u8; PLANES * n];
    for (bit, &cell) in env.pellet_cells.iter().enumerate() {
        if s.pellets & (1 << bit) != 0 {
            p[cell] = 1;
        }
    }
    if let Some(g) = env.ghost_prev_cell(s.phase) {
        p[n + g] = 1;
    }
    if let Some(g) = env.ghost_cell(s.phase) {
        p[2 * n + g] = 1;
    }
    p[3 * n + s.agent] = 1;
    p
}

/// 84×84×4 (`h, w, c`) u8 input state.
pub fn render_state(env: &GridWorld, s: &ToyState) -> Vec<u8> {
    let cs = plane_cell(env);
    let planes = grid_planes(env, s);
    let n = env.width * env.height;
    let mut out = vec![0u8; INPUT_SIZE * INPUT_SIZE * PLANES];
    for p in 0..PLANES {
        for cell in 0..n {
            if planes[p * n + cell] == 0 {
                continue;
            }
            let (cx, cy) = (cell % env.width, cell / env.width);
            for y in cy * cs..(cy + 1) * cs {
                for x in cx * cs..(cx + 1) * cs {
                    out[(y * INPUT_SIZE + x) * PLANES + p] = 255;
                }
            }
        }
    }
    out
}

pub fn frame_dims(env: &GridWorld) -> [usize; 2] {
    [env.height * FRAME_CELL, env.width * FRAME_CELL]
}

const WALL: [u8; 3] = [33, 33, 222];
const PELLET: [u8; 3] = [255, 184, 151];
const GHOST: [u8; 3] = [255, 0, 0];
const AGENT: [u8; 3] = [255, 255, 0];

fn fill(buf: &mut [u8], w: usize, x0: usize, y0: usize, size: usize, c: [u8; 3]) {
    for y in y0..y0 + size {
        for x in x0..x0 + size {
            let i = (y * w + x) * 3;
            buf[i..i + 3].copy_from_slice(&c);
        }
    }
}

fn lerp_px(env: &GridWorld, from: usize, to: usize, i: usize) -> (usize, usize) {
    let f = |c: usize| ((c % env.width) * FRAME_CELL, (c / env.width) * FRAME_CELL);
    let (ax, ay) = f(from);
    let (bx, by) = f(to);
    let l = |a: usize, b: usize| (a as isize + (b as isize - a as isize) * i as isize / 4) as usize;
    (l(ax, bx), l(ay, by))
}

/// Four RGB frames animating the move from `prev` into `curr`; the last frame
/// shows `curr` exactly.
pub fn render_frames(env: &GridWorld, prev: Option<&ToyState>, curr: &ToyState) -> Vec<u8> {
    let [h, w] = frame_dims(env);
    let prev = prev.unwrap_or(curr);
    let mut out = Vec::with_capacity(4 * h * w * 3);
    for i in 1..=4 {
        let mut buf = vec![0u8; h * w * 3];
        for (cell, &wall) in env.walls.iter().enumerate() {
            if wall {
                let (x, y) = lerp_px(env, cell, cell, 4);
                fill(&mut buf, w, x, y, FRAME_CELL, WALL);
            }
        }
        let mask = if i < 4 { prev.pellets } else { curr.pellets };
        for (bit, &cell) in env.pellet_cells.iter().enumerate() {
            if mask & (1 << bit) != 0 {
                let size = if env.power[bit] { 8 } else { 4 };
                let (x, y) = lerp_px(env, cell, cell, 4);
                let off = (FRAME_CELL - size) / 2;
                fill(&mut buf, w, x + off, y + off, size, PELLET);
            }
        }
        if let (Some(g0), Some(g1)) = (env.ghost_cell(prev.phase), env.ghost_cell(curr.phase)) {
            let (x, y) = lerp_px(env, g0, g1, i);
            fill(&mut buf, w, x + 1, y + 1, FRAME_CELL - 2, GHOST);
        }
        let (x, y) = lerp_px(env, prev.agent, curr.agent, i);
        fill(&mut buf, w, x + 2, y + 2, FRAME_CELL - 4, AGENT);
        out.extend_from_slice(&buf);
    }
    out
}

// --- rollouts ---------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutStats {
    /// Undiscounted return per episode, including a final truncated episode.
    pub episode_returns: Vec<f64>,
    pub deaths: usize,
}

impl RolloutStats {
    pub fn mean_return(&self) -> f64 {
        self.episode_returns.iter().sum::<f64>() / self.episode_returns.len() as f64
    }
}

fn stream_meta(env: &GridWorld, agent: serde_json::Value) -> StreamMeta {
    StreamMeta {
        state_dims: [INPUT_SIZE, INPUT_SIZE, PLANES],
        action_labels: ACTION_LABELS.iter().map(|s| s.to_string()).collect(),
        frame_dims: frame_dims(env),
        agent: Some(agent),
    }
}

/// Runs `steps` agent steps. Each episode starts with a seeded 0–30 step run
/// of no-ops, then follows `decide(state_index, state) -> (q_values, action)`.
fn rollout_with(
    env: &GridWorld,
    enumerated: &EnumeratedEnv,
    seed: u64,
    steps: usize,
    agent: serde_json::Value,
    mut decide: impl FnMut(usize, &ToyState) -> Result<(Vec<f32>, usize)>,
) -> Result<(Stream, RolloutStats)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = Stream::new(stream_meta(env, agent));
    let mut stats = RolloutStats {
        episode_returns: Vec::new(),
        deaths: 0,
    };
    let mut state = env.initial_state();
    let mut prev: Option<ToyState> = None;
    let mut noops = rng.random_range(0..=MAX_NOOPS);
    let mut ep_steps = 0;
    let mut ep_return = 0.0;
    let mut new_episode = true;
    for _ in 0..steps {
        let idx = *enumerated.index.get(&state).ok_or_else(|| {
            Error::InvalidArgument("rollout reached a state outside the enumeration".into())
        })?;
        let (q, greedy_action) = decide(idx, &state)?;
        let action = if noops > 0 {
            noops -= 1;
            NOOP
        } else {
            greedy_action
        };
        let o = env.step(state, action);
        if new_episode {
            stream.begin_episode();
            new_episode = false;
        }
        stream.push(StreamRecord {
            state: render_state(env, &state),
            q_values: q,
            action: action as u8,
            frames: render_frames(env, prev.as_ref(), &state),
            reward: Some(o.reward as f32),
        })?;
        ep_return += o.reward;
        ep_steps += 1;
        stats.deaths += usize::from(o.died);
        if o.terminal || ep_steps == env.step_cap {
            stats.episode_returns.push(ep_return);
            ep_return = 0.0;
            ep_steps = 0;
            state = env.initial_state();
            prev = None;
            noops = rng.random_range(0..=MAX_NOOPS);
            new_episode = true;
        } else {
            prev = Some(state);
            state = o.next;
        }
    }
    if ep_steps > 0 {
        stats.episode_returns.push(ep_return);
    }
    Ok((stream, stats))
}

/// Rollout of the tabular greedy policy; q-values come from the table.
pub fn rollout(
    env: &GridWorld,
    enumerated: &EnumeratedEnv,
    policy: &TabularPolicy,
    seed: u64,
    steps: usize,
) -> Result<(Stream, RolloutStats)> {
    let agent = serde_json::json!({ "kind": "tabular", "rewards": env.rewards, "seed": seed });
    rollout_with(env, enumerated, seed, steps, agent, |idx, _| {
        let q = &policy.q[idx];
        Ok((q.iter().map(|&v| v as f32).collect(), greedy(q)))
    })
}

/// Rollout driven by a network: q-values are the network's outputs for the
/// rendered state and the greedy action is the network's argmax.
pub fn rollout_with_net(
    env: &GridWorld,
    enumerated: &EnumeratedEnv,
    net: &NetworkSpec,
    seed: u64,
    steps: usize,
) -> Result<(Stream, RolloutStats)> {
    let agent = serde_json::json!({ "kind": "distilled", "rewards": env.rewards, "seed": seed });
    rollout_with(env, enumerated, seed, steps, agent, |_, s| {
        let x = state_to_input(&render_state(env, s), (INPUT_SIZE, INPUT_SIZE, PLANES))?;
        let q = forward(net, &x)?.q_values;
        let a = greedy(&q);
        Ok((q, a))
    })
}

// --- distillation -------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillConfig {
    /// Largest acceptable |net Q − table Q| over enumerated states.
    pub max_residual: f64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        Self { max_residual: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub states: usize,
    pub hidden_units: usize,
    pub max_abs_residual: f64,
    /// Fraction of states whose network argmax is a tabular-optimal action.
    pub argmax_agreement: f64,
    pub within_bound: bool,
}

/// Builds a conv+dense network reproducing the tabular Q-function on every
/// enumerated state.
///
/// * `conv1` averages each `cs × cs` cell block, recovering the grid planes.
/// * `conv2` (1×2 kernel, weights 1 and ½) mixes each cell with its right
///   neighbour; the map is invertible because the last grid column is empty.
/// * `fc1` holds one detector per state, firing 0.5 on an exact match and
///   ≤ −0.5 (clipped to 0) otherwise.
/// * `fc2` maps detectors to Q-values, fitted by least squares on the
///   detector features.
pub fn distill(
    env: &GridWorld,
    enumerated: &EnumeratedEnv,
    policy: &TabularPolicy,
    cfg: &DistillConfig,
) -> Result<(NetworkSpec, FitReport)> {
    let cs = plane_cell(env);
    let g = INPUT_SIZE / cs;
    let (gw, gh) = (g - 1, g);
    let n_states = enumerated.states.len();
    let na = ACTION_LABELS.len();

    let mut w1 = vec![0.0f32; PLANES * PLANES * cs * cs];
    for p in 0..PLANES {
        let base = (p * PLANES + p) * cs * cs;
        w1[base..base + cs * cs].fill(1.0 / (cs * cs) as f32);
    }
    let conv1 = LayerSpec::conv(
        "conv1",
        Tensor::new(vec![PLANES, PLANES, cs, cs], w1)?,
        Tensor::zeros(vec![PLANES]),
        Activation::Relu,
        (cs, cs),
    )?;
    let mut w2 = vec![0.0f32; PLANES * PLANES * 2];
    for p in 0..PLANES {
        w2[(p * PLANES + p) * 2] = 1.0;
        w2[(p * PLANES + p) * 2 + 1] = 0.5;
    }
    let conv2 = LayerSpec::conv(
        "conv2",
        Tensor::new(vec![PLANES, PLANES, 1, 2], w2)?,
        Tensor::zeros(vec![PLANES]),
        Activation::Relu,
        (1, 1),
    )?;

    // detector weights: +1 on cells set in the state's planes, −1 elsewhere,
    // pulled back through conv2's mixing
    let n_in = PLANES * gh * gw;
    let mut w3 = vec![0.0f32; n_states * n_in];
    let mut b3 = vec![0.0f32; n_states];
    let n = env.width * env.height;
    for (si, s) in enumerated.states.iter().enumerate() {
        let planes = grid_planes(env, s);
        let row = &mut w3[si * n_in..(si + 1) * n_in];
        let mut ones = 0usize;
        for p in 0..PLANES {
            for y in 0..gh {
                let wp = |x: usize| -> f64 {
                    let on = y < env.height && x < env.width && planes[p * n + y * env.width + x] == 1;
                    if on {
                        1.0
                    } else {
                        -1.0
                    }
                };
                for x in 0..gw {
                    if wp(x) > 0.0 {
                        ones += 1;
                    }
                    let mut acc = 0.0f64;
                    let mut f = 1.0f64;
                    for src in (0..=x).rev() {
                        acc += wp(src) * f;
                        f *= -0.5;
                    }
                    row[(p * gh + y) * gw + x] = acc as f32;
                }
            }
        }
        b3[si] = 0.5 - ones as f32;
    }
    let fc1 = LayerSpec::dense(
        "fc1",
        Tensor::new(vec![n_states, n_in], w3)?,
        Tensor::new(vec![n_states], b3)?,
        Activation::Relu,
    )?;

    let labels: Vec<String> = ACTION_LABELS.iter().map(|s| s.to_string()).collect();
    let placeholder = LayerSpec::dense(
        "fc2",
        Tensor::zeros(vec![na, n_states]),
        Tensor::zeros(vec![na]),
        Activation::Identity,
    )?;
    let mut net = NetworkSpec::new(
        vec![conv1, conv2, fc1, placeholder],
        (INPUT_SIZE, INPUT_SIZE, PLANES),
        labels,
        FlattenOrder::Chw,
    )?;

    // detector features of every state; the design is one-hot so the normal
    // equations are diagonal
    let features: Vec<Vec<f32>> = enumerated
        .states
        .par_iter()
        .map(|s| {
            let x = state_to_input(&render_state(env, s), (INPUT_SIZE, INPUT_SIZE, PLANES))?;
            Ok(forward(&net, &x)?.per_layer[3].data().to_vec())
        })
        .collect::<Result<_>>()?;
    let mut gram = vec![0.0f64; n_states];
    let mut rhs = vec![0.0f64; na * n_states];
    for (si, h) in features.iter().enumerate() {
        for (m, &v) in h.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            let v = f64::from(v);
            gram[m] += v * v;
            for a in 0..na {
                rhs[a * n_states + m] += v * policy.q[si][a];
            }
        }
    }
    let w4: Vec<f32> = (0..na * n_states)
        .map(|i| {
            let m = i % n_states;
            if gram[m] > 0.0 {
                (rhs[i] / gram[m]) as f32
            } else {
                0.0
            }
        })
        .collect();
    net.layers[3].weights = Tensor::new(vec![na, n_states], w4)?;

    let evals: Vec<(f64, bool)> = enumerated
        .states
        .par_iter()
        .enumerate()
        .map(|(si, s)| {
            let x = state_to_input(&render_state(env, s), (INPUT_SIZE, INPUT_SIZE, PLANES))?;
            let q = forward(&net, &x)?.q_values;
            let table = &policy.q[si];
            let resid = q
                .iter()
                .zip(table)
                .map(|(&a, &b)| (f64::from(a) - b).abs())
                .fold(0.0, f64::max);
            let best = table.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let agree = table[greedy(&q)] >= best - 1e-6;
            Ok((resid, agree))
        })
        .collect::<Result<_>>()?;
    let max_abs_residual = evals.iter().map(|e| e.0).fold(0.0, f64::max);
    let report = FitReport {
        states: n_states,
        hidden_units: n_states,
        max_abs_residual,
        argmax_agreement: evals.iter().filter(|e| e.1).count() as f64 / n_states as f64,
        within_bound: max_abs_residual <= cfg.max_residual,
    };
    if !report.within_bound {
        log::warn!(
            "distilled network residual {max_abs_residual} exceeds bound {}",
            cfg.max_residual
        );
    }
    Ok((net, report))
}
