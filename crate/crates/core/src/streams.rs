//! Recorded gameplay streams.
//!
//! A stream directory holds `stream.json` plus flat little-endian component
//! files, one entry per record:
//!
//! | file          | contents                    |
//! |---------------|-----------------------------|
//! | `states.bin`  | `N × h × w × c` u8          |
//! | `qvalues.bin` | `N × A` f32                 |
//! | `actions.bin` | `N` u8                      |
//! | `frames.bin`  | `N × 4 × H × W × 3` u8 RGB  |
//! | `rewards.bin` | `N` f32, optional           |
//!
//! Producers are expected to skip the game's unresponsive start frames and to
//! begin every episode with a random 0–30 step run of the no-op action.

use std::fs;
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{forward, NetworkSpec};
use crate::tensor::state_to_input;

pub const MANIFEST_FILE: &str = "stream.json";
const STATES_FILE: &str = "states.bin";
const QVALUES_FILE: &str = "qvalues.bin";
const ACTIONS_FILE: &str = "actions.bin";
const FRAMES_FILE: &str = "frames.bin";
const REWARDS_FILE: &str = "rewards.bin";

/// Raw screens per record (one per repeated action frame).
pub const FRAMES_PER_RECORD: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMeta {
    /// (h, w, c) of the stacked input state.
    pub state_dims: [usize; 3],
    pub action_labels: Vec<String>,
    /// (H, W) of the raw RGB screens.
    pub frame_dims: [usize; 2],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub agent: Option<serde_json::Value>,
}

impl StreamMeta {
    pub fn num_actions(&self) -> usize {
        self.action_labels.len()
    }

    pub fn state_len(&self) -> usize {
        self.state_dims.iter().product()
    }

    pub fn frame_len(&self) -> usize {
        self.frame_dims[0] * self.frame_dims[1] * 3
    }
}

/// One owned agent step.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamRecord {
    /// `h × w × c`, channel 0 = oldest frame.
    pub state: Vec<u8>,
    pub q_values: Vec<f32>,
    pub action: u8,
    /// `4 × H × W × 3` RGB.
    pub frames: Vec<u8>,
    pub reward: Option<f32>,
}

/// Borrowed view of one record inside a [`Stream`].
#[derive(Debug, Clone, Copy)]
pub struct RecordView<'a> {
    pub index: usize,
    pub state: &'a [u8],
    pub q_values: &'a [f32],
    pub action: u8,
    pub frames: &'a [u8],
    pub reward: Option<f32>,
}

impl RecordView<'_> {
    /// Raw screen `i` (0..4) as `H × W × 3` bytes.
    pub fn frame(&self, i: usize) -> &[u8] {
        let n = self.frames.len() / FRAMES_PER_RECORD;
        &self.frames[i * n..(i + 1) * n]
    }
}

/// Columnar container of records.
#[derive(Debug, Clone, PartialEq)]
pub struct Stream {
    pub meta: StreamMeta,
    states: Vec<u8>,
    q_values: Vec<f32>,
    actions: Vec<u8>,
    frames: Vec<u8>,
    rewards: Option<Vec<f32>>,
    episode_boundaries: Vec<usize>,
}

impl Stream {
    pub fn new(meta: StreamMeta) -> Self {
        Self {
            meta,
            states: Vec::new(),
            q_values: Vec::new(),
            actions: Vec::new(),
            frames: Vec::new(),
            rewards: None,
            episode_boundaries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn episode_boundaries(&self) -> &[usize] {
        &self.episode_boundaries
    }

    pub fn rewards(&self) -> Option<&[f32]> {
        self.rewards.as_deref()
    }

    /// Marks the next pushed record as the start of a new episode.
    pub fn begin_episode(&mut self) {
        let n = self.len();
        if self.episode_boundaries.last() != Some(&n) {
            self.episode_boundaries.push(n);
        }
    }

    /// Appends a record. The first record always opens an episode. Rewards
    /// must be given for all records or for none.
    pub fn push(&mut self, rec: StreamRecord) -> Result<()> {
        let m = &self.meta;
        if rec.state.len() != m.state_len()
            || rec.q_values.len() != m.num_actions()
            || rec.frames.len() != FRAMES_PER_RECORD * m.frame_len()
        {
            return Err(Error::Stream(format!(
                "record {} does not match stream dims",
                self.len()
            )));
        }
        let empty = self.is_empty();
        match (&mut self.rewards, rec.reward) {
            (Some(r), Some(v)) => r.push(v),
            (None, Some(v)) if empty => self.rewards = Some(vec![v]),
            (None, None) => {}
            _ => {
                return Err(Error::Stream(format!(
                    "record {}: rewards must be present for all records or none",
                    self.len()
                )))
            }
        }
        if self.is_empty() {
            self.begin_episode();
        }
        self.states.extend_from_slice(&rec.state);
        self.q_values.extend_from_slice(&rec.q_values);
        self.actions.push(rec.action);
        self.frames.extend_from_slice(&rec.frames);
        Ok(())
    }

    pub fn record(&self, i: usize) -> RecordView<'_> {
        let (s, a, f) = (self.meta.state_len(), self.meta.num_actions(), self.meta.frame_len() * FRAMES_PER_RECORD);
        RecordView {
            index: i,
            state: &self.states[i * s..(i + 1) * s],
            q_values: &self.q_values[i * a..(i + 1) * a],
            action: self.actions[i],
            frames: &self.frames[i * f..(i + 1) * f],
            reward: self.rewards.as_ref().map(|r| r[i]),
        }
    }

    pub fn get(&self, i: usize) -> Result<RecordView<'_>> {
        if i >= self.len() {
            return Err(Error::IndexOutOfRange {
                index: i,
                len: self.len(),
            });
        }
        Ok(self.record(i))
    }

    pub fn records(&self) -> impl Iterator<Item = RecordView<'_>> {
        (0..self.len()).map(move |i| self.record(i))
    }

    /// Record ranges of each episode, in order.
    pub fn episodes(&self) -> Vec<Range<usize>> {
        let b = &self.episode_boundaries;
        b.iter()
            .enumerate()
            .map(|(i, &start)| start..b.get(i + 1).copied().unwrap_or(self.len()))
            .collect()
    }

    /// Range of the episode containing record `i`.
    pub fn episode_of(&self, i: usize) -> Range<usize> {
        let b = &self.episode_boundaries;
        let pos = b.partition_point(|&s| s <= i);
        let start = if pos == 0 { 0 } else { b[pos - 1] };
        let end = b.get(pos).copied().unwrap_or(self.len());
        start..end
    }
}

// --- files ----------------------------------------------------------------

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    records: usize,
    #[serde(flatten)]
    meta: StreamMeta,
    episode_boundaries: Vec<usize>,
    has_rewards: bool,
}

fn read_component(dir: &Path, name: &str, expected: usize) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    if bytes.len() != expected {
        return Err(Error::Stream(format!(
            "{name}: expected {expected} bytes, found {}",
            bytes.len()
        )));
    }
    Ok(bytes)
}

fn f32s(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect()
}

fn f32_bytes(v: &[f32]) -> Vec<u8> {
    v.iter().flat_map(|x| x.to_le_bytes()).collect()
}

pub fn load_stream(dir: impl AsRef<Path>) -> Result<Stream> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| Error::json(&manifest_path, e))?;
    let n = m.records;
    let meta = m.meta;
    if meta.num_actions() == 0 || meta.num_actions() > 256 {
        return Err(Error::Stream(format!(
            "{} action labels; expected 1..=256",
            meta.num_actions()
        )));
    }

    let states = read_component(dir, STATES_FILE, n * meta.state_len())?;
    let q_values = f32s(&read_component(dir, QVALUES_FILE, n * meta.num_actions() * 4)?);
    let actions = read_component(dir, ACTIONS_FILE, n)?;
    let frames = read_component(dir, FRAMES_FILE, n * FRAMES_PER_RECORD * meta.frame_len())?;
    let rewards = if m.has_rewards {
        Some(f32s(&read_component(dir, REWARDS_FILE, n * 4)?))
    } else {
        None
    };

    let b = &m.episode_boundaries;
    let ok = if n == 0 {
        b.is_empty()
    } else {
        b.first() == Some(&0) && b.windows(2).all(|w| w[0] < w[1]) && b.last().unwrap() < &n
    };
    if !ok {
        return Err(Error::Stream(format!(
            "episode boundaries {b:?} do not partition {n} records"
        )));
    }
    Ok(Stream {
        meta,
        states,
        q_values,
        actions,
        frames,
        rewards,
        episode_boundaries: m.episode_boundaries,
    })
}

pub fn save_stream(stream: &Stream, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let manifest = Manifest {
        records: stream.len(),
        meta: stream.meta.clone(),
        episode_boundaries: stream.episode_boundaries.clone(),
        has_rewards: stream.rewards.is_some(),
    };
    let manifest_path = dir.join(MANIFEST_FILE);
    let text =
        serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&manifest_path, e))?;
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.join(name);
        fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
    };
    write(MANIFEST_FILE, text.as_bytes())?;
    write(STATES_FILE, &stream.states)?;
    write(QVALUES_FILE, &f32_bytes(&stream.q_values))?;
    write(ACTIONS_FILE, &stream.actions)?;
    write(FRAMES_FILE, &stream.frames)?;
    match &stream.rewards {
        Some(r) => write(REWARDS_FILE, &f32_bytes(r))?,
        None => {
            let path = dir.join(REWARDS_FILE);
            if path.exists() {
                fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
    }
    Ok(())
}

// --- validation -------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub record: Option<usize>,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QCheck {
    pub sampled: usize,
    pub max_deviation: f32,
    pub worst_record: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub records: usize,
    pub violations: Vec<Violation>,
    pub q_check: Option<QCheck>,
    pub notices: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Structural checks, plus Q recomputation on up to `sample` evenly spaced
/// records when a network is given.
pub fn validate_stream(stream: &Stream, net: Option<&NetworkSpec>, sample: usize) -> ValidationReport {
    let mut violations = Vec::new();
    let mut notices = Vec::new();
    let a = stream.meta.num_actions();
    for r in stream.records() {
        if usize::from(r.action) >= a {
            violations.push(Violation {
                record: Some(r.index),
                message: format!("action {} out of range for {a} actions", r.action),
            });
        }
        if r.q_values.iter().any(|q| !q.is_finite()) {
            violations.push(Violation {
                record: Some(r.index),
                message: "non-finite q-value".into(),
            });
        }
        if r.reward.is_some_and(|v| !v.is_finite()) {
            violations.push(Violation {
                record: Some(r.index),
                message: "non-finite reward".into(),
            });
        }
    }
    let b = stream.episode_boundaries();
    if !stream.is_empty()
        && (b.first() != Some(&0)
            || !b.windows(2).all(|w| w[0] < w[1])
            || b.last().is_some_and(|&l| l >= stream.len()))
    {
        violations.push(Violation {
            record: None,
            message: format!("episode boundaries {b:?} do not partition the stream"),
        });
    }

    let q_check = match net {
        None => {
            notices.push("no network supplied; q-value recomputation skipped".into());
            None
        }
        Some(net) => {
            let [h, w, c] = stream.meta.state_dims;
            if net.input_shape != (h, w, c) || net.num_actions() != a {
                violations.push(Violation {
                    record: None,
                    message: format!(
                        "network input {:?} / {} actions does not match stream {:?} / {a}",
                        net.input_shape,
                        net.num_actions(),
                        stream.meta.state_dims
                    ),
                });
                None
            } else {
                let n = stream.len();
                let k = sample.min(n);
                let mut max_deviation = 0.0f32;
                let mut worst_record = None;
                for j in 0..k {
                    let i = j * n / k;
                    let r = stream.record(i);
                    let dev = state_to_input(r.state, (h, w, c))
                        .and_then(|x| forward(net, &x))
                        .map(|tr| {
                            tr.q_values
                                .iter()
                                .zip(r.q_values)
                                .map(|(x, y)| (x - y).abs())
                                .fold(0.0f32, f32::max)
                        });
                    match dev {
                        Ok(d) if d.is_nan() || d > max_deviation => {
                            max_deviation = if d.is_nan() { f32::INFINITY } else { d };
                            worst_record = Some(i);
                        }
                        Ok(_) => {}
                        Err(e) => violations.push(Violation {
                            record: Some(i),
                            message: format!("forward pass failed: {e}"),
                        }),
                    }
                }
                Some(QCheck {
                    sampled: k,
                    max_deviation,
                    worst_record,
                })
            }
        }
    };
    ValidationReport {
        records: stream.len(),
        violations,
        q_check,
        notices,
    }
}

/// Mean over episodes of the summed per-record rewards.
pub fn score_stream(stream: &Stream) -> Result<f64> {
    let rewards = stream
        .rewards()
        .ok_or_else(|| Error::Stream("stream has no reward channel".into()))?;
    let eps = stream.episodes();
    if eps.is_empty() {
        return Err(Error::Stream("stream has no episodes".into()));
    }
    let total: f64 = eps
        .iter()
        .map(|r| rewards[r.clone()].iter().map(|&v| f64::from(v)).sum::<f64>())
        .sum();
    Ok(total / eps.len() as f64)
}
