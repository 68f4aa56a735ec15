//! State importance and strategy-summary extraction.
//!
//! Three selectors share one [`Summary`] output:
//!
//! * [`highlights_online`] replays the online HIGHLIGHTS loop over a recorded
//!   stream, treating every episode as one simulation run.
//! * [`highlights_div_online`] is the same loop with diversity-aware
//!   eviction: a candidate close to an existing summary member competes only
//!   against that member.
//! * [`highlights_div_offline`] ranks every recorded state by importance and
//!   greedily admits states that are far from everything already admitted,
//!   including the admitted states' context windows.
//!
//! Random and first-k baselines are provided for comparison.

use std::collections::VecDeque;
use std::fs;
use std::ops::Range;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::streams::Stream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImportanceKind {
    /// max(Q) − min(Q)
    Minmax,
    /// max(Q) − second-highest(Q)
    #[default]
    Second,
}

impl std::str::FromStr for ImportanceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minmax" => Ok(Self::Minmax),
            "second" => Ok(Self::Second),
            other => Err(Error::InvalidArgument(format!("unknown importance {other:?}"))),
        }
    }
}

fn check_len(q: &[f32]) -> Result<()> {
    if q.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "importance needs at least 2 q-values, got {}",
            q.len()
        )));
    }
    Ok(())
}

pub fn importance_minmax(q: &[f32]) -> Result<f64> {
    check_len(q)?;
    let (lo, hi) = q
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(f64::from(v)), hi.max(f64::from(v)))
        });
    Ok(hi - lo)
}

pub fn importance_second(q: &[f32]) -> Result<f64> {
    check_len(q)?;
    let (mut first, mut second) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in q {
        let v = f64::from(v);
        if v > first {
            second = first;
            first = v;
        } else if v > second {
            second = v;
        }
    }
    Ok(first - second)
}

pub fn importance(kind: ImportanceKind, q: &[f32]) -> Result<f64> {
    match kind {
        ImportanceKind::Minmax => importance_minmax(q),
        ImportanceKind::Second => importance_second(q),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HighlightsParams {
    /// Summary budget (number of trajectories).
    pub k: usize,
    /// Trajectory length.
    pub l: usize,
    /// Minimal number of states between two admitted states.
    pub interval_size: usize,
    /// States following the important state in its trajectory.
    pub states_after: usize,
    /// Cap on the number of episodes consumed (online modes); `None` = all.
    pub num_simulations: Option<usize>,
    pub importance: ImportanceKind,
}

impl HighlightsParams {
    /// Canonical online configuration: k=5, l=40, interval 50, 10 states after.
    pub fn online_default() -> Self {
        Self {
            k: 5,
            l: 40,
            interval_size: 50,
            states_after: 10,
            num_simulations: None,
            importance: ImportanceKind::Second,
        }
    }

    /// Canonical offline configuration: k=5, ten context states on each side, interval 10.
    pub fn offline_default() -> Self {
        Self {
            k: 5,
            l: 21,
            interval_size: 10,
            states_after: 10,
            num_simulations: None,
            importance: ImportanceKind::Second,
        }
    }

    pub fn states_before(&self) -> usize {
        self.l - self.states_after - 1
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::InvalidArgument("k must be >= 1".into()));
        }
        if self.states_after >= self.l {
            return Err(Error::InvalidArgument(format!(
                "states_after ({}) must be < l ({})",
                self.states_after, self.l
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivParams {
    pub sample_size: usize,
    /// Percentile in (0, 100).
    pub percentile: f64,
    pub seed: u64,
}

impl Default for DivParams {
    fn default() -> Self {
        Self {
            sample_size: 1000,
            percentile: 3.0,
            seed: 0,
        }
    }
}

impl DivParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.percentile > 0.0 && self.percentile < 100.0) {
            return Err(Error::InvalidArgument(format!(
                "percentile must be in (0, 100), got {}",
                self.percentile
            )));
        }
        if self.sample_size < 2 {
            return Err(Error::InvalidArgument("sample_size must be >= 2".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTrajectory {
    /// Record index of the important state.
    pub base_index: usize,
    pub importance: f64,
    /// Contiguous record indices, all within one episode.
    pub indices: Vec<usize>,
    pub actions: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SummaryMode {
    Online,
    DivOnline,
    DivOffline,
    Random,
    First,
}

impl std::str::FromStr for SummaryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "online" => Self::Online,
            "div-online" => Self::DivOnline,
            "div-offline" => Self::DivOffline,
            "random" => Self::Random,
            "first" => Self::First,
            other => return Err(Error::InvalidArgument(format!("unknown mode {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mode: SummaryMode,
    pub params: HighlightsParams,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub div: Option<DivParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    /// Ordered by importance, highest first (ties: lower base index first).
    pub trajectories: Vec<SummaryTrajectory>,
}

impl Summary {
    pub fn base_indices(&self) -> Vec<usize> {
        self.trajectories.iter().map(|t| t.base_index).collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::json(path, e))
    }
}

fn sort_by_importance(trajs: &mut [SummaryTrajectory]) {
    trajs.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then(a.base_index.cmp(&b.base_index))
    });
}

/// Per-record importance for the whole stream.
pub fn stream_importance(stream: &Stream, kind: ImportanceKind) -> Result<Vec<f64>> {
    stream.records().map(|r| importance(kind, r.q_values)).collect()
}

/// Euclidean distance between raw u8 states.
pub fn state_distance(a: &[u8], b: &[u8]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "state lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    Ok((sq_distance(a, b) as f64).sqrt())
}

fn sq_distance(a: &[u8], b: &[u8]) -> u64 {
    // 4096 squared u8 differences fit in a u32
    a.chunks(4096)
        .zip(b.chunks(4096))
        .map(|(x, y)| {
            x.iter()
                .zip(y)
                .map(|(&p, &q)| {
                    let d = i32::from(p) - i32::from(q);
                    (d * d) as u32
                })
                .sum::<u32>() as u64
        })
        .sum()
}

/// Linear interpolation between order statistics of sorted data.
pub fn percentile_sorted(sorted: &[f64], pct: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = rank - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Seeded sample of record indices used for threshold calibration.
pub fn calibration_sample(n: usize, div: &DivParams) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(div.seed);
    let mut idx = sample(&mut rng, n, div.sample_size.min(n)).into_vec();
    idx.sort_unstable();
    idx
}

/// Percentile of pairwise state distances over a seeded sample.
pub fn calibrate_threshold(stream: &Stream, div: &DivParams) -> Result<f64> {
    div.validate()?;
    if stream.len() < 2 {
        return Err(Error::Stream(format!(
            "threshold calibration needs at least 2 records, got {}",
            stream.len()
        )));
    }
    let idx = calibration_sample(stream.len(), div);
    let mut dists: Vec<f64> = (0..idx.len())
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = stream.record(idx[i]).state;
            idx[i + 1..]
                .iter()
                .map(move |&j| (sq_distance(a, stream.record(j).state) as f64).sqrt())
        })
        .collect();
    dists.sort_unstable_by(f64::total_cmp);
    Ok(percentile_sorted(&dists, div.percentile))
}

fn episodes_limited(stream: &Stream, cap: Option<usize>) -> Vec<Range<usize>> {
    let mut eps = stream.episodes();
    if let Some(cap) = cap {
        eps.truncate(cap);
    }
    eps
}

struct Slot {
    traj: SummaryTrajectory,
    /// Record index at which the trailing context is complete.
    due: usize,
    finalized: bool,
}

/// How the online loop decides admission once the interval counter is zero.
enum Admission {
    Plain,
    Diverse { threshold: f64 },
}

fn run_online(stream: &Stream, params: &HighlightsParams, admission: Admission) -> Result<Vec<SummaryTrajectory>> {
    params.validate()?;
    if stream.is_empty() {
        return Err(Error::Stream("stream is empty".into()));
    }
    let mut summary: Vec<Slot> = Vec::with_capacity(params.k + 1);
    for ep in episodes_limited(stream, params.num_simulations) {
        let mut window: VecDeque<usize> = VecDeque::with_capacity(params.l);
        let mut c = 0usize;
        for i in ep.clone() {
            if window.len() == params.l {
                window.pop_front();
            }
            window.push_back(i);
            c = c.saturating_sub(1);
            let imp = importance(params.importance, stream.record(i).q_values)?;

            for slot in summary.iter_mut().filter(|s| !s.finalized && s.due == i) {
                set_window(&mut slot.traj, &window, stream);
                slot.finalized = true;
            }

            if c != 0 {
                continue;
            }
            let evict = match admission {
                Admission::Plain => plain_choice(&summary, imp, params.k),
                Admission::Diverse { threshold } => {
                    let state = stream.record(i).state;
                    let nearest = summary
                        .iter()
                        .enumerate()
                        .map(|(pos, s)| (pos, sq_distance(state, stream.record(s.traj.base_index).state)))
                        .min_by_key(|&(pos, d)| (d, summary[pos].traj.base_index));
                    match nearest {
                        Some((pos, d)) if (d as f64).sqrt() <= threshold => {
                            if imp > summary[pos].traj.importance {
                                Choice::Replace(pos)
                            } else {
                                Choice::Skip
                            }
                        }
                        _ => plain_choice(&summary, imp, params.k),
                    }
                }
            };
            match evict {
                Choice::Skip => continue,
                Choice::Replace(pos) => {
                    summary.remove(pos);
                }
                Choice::Append => {}
            }
            let mut slot = Slot {
                traj: SummaryTrajectory {
                    base_index: i,
                    importance: imp,
                    indices: Vec::new(),
                    actions: Vec::new(),
                },
                due: i + params.states_after,
                finalized: false,
            };
            if params.states_after == 0 {
                set_window(&mut slot.traj, &window, stream);
                slot.finalized = true;
            }
            summary.push(slot);
            c = params.interval_size;
        }
        // trajectories cut short by the episode end keep what followed them
        for slot in summary.iter_mut().filter(|s| !s.finalized) {
            set_window(&mut slot.traj, &window, stream);
            slot.finalized = true;
        }
    }
    let mut out: Vec<SummaryTrajectory> = summary.into_iter().map(|s| s.traj).collect();
    sort_by_importance(&mut out);
    Ok(out)
}

enum Choice {
    Skip,
    Append,
    Replace(usize),
}

fn plain_choice(summary: &[Slot], imp: f64, k: usize) -> Choice {
    if summary.len() < k {
        return Choice::Append;
    }
    // minimum importance; the earliest admitted wins ties
    let (pos, min) = summary
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |best, (p, s)| {
            if s.traj.importance < best.1 {
                (p, s.traj.importance)
            } else {
                best
            }
        });
    if imp > min {
        Choice::Replace(pos)
    } else {
        Choice::Skip
    }
}

fn set_window(traj: &mut SummaryTrajectory, window: &VecDeque<usize>, stream: &Stream) {
    traj.indices = window.iter().copied().collect();
    traj.actions = window.iter().map(|&i| stream.record(i).action).collect();
}

pub fn highlights_online(stream: &Stream, params: &HighlightsParams) -> Result<Summary> {
    Ok(Summary {
        mode: SummaryMode::Online,
        params: *params,
        div: None,
        threshold: None,
        trajectories: run_online(stream, params, Admission::Plain)?,
    })
}

pub fn highlights_div_online(stream: &Stream, params: &HighlightsParams, div: &DivParams) -> Result<Summary> {
    let threshold = calibrate_threshold(stream, div)?;
    let mut s = highlights_div_online_with_threshold(stream, params, threshold)?;
    s.div = Some(*div);
    Ok(s)
}

/// Diversity-aware online selection with an explicit similarity threshold.
pub fn highlights_div_online_with_threshold(
    stream: &Stream,
    params: &HighlightsParams,
    threshold: f64,
) -> Result<Summary> {
    Ok(Summary {
        mode: SummaryMode::DivOnline,
        params: *params,
        div: None,
        threshold: Some(threshold),
        trajectories: run_online(stream, params, Admission::Diverse { threshold })?,
    })
}

/// Context window of `base`: `before` records before and `after` after,
/// clipped to the episode.
pub fn context_window(stream: &Stream, base: usize, before: usize, after: usize) -> Range<usize> {
    let ep = stream.episode_of(base);
    base.saturating_sub(before).max(ep.start)..(base + after + 1).min(ep.end)
}

fn trajectory_at(stream: &Stream, params: &HighlightsParams, base: usize, imp: f64) -> SummaryTrajectory {
    let w = context_window(stream, base, params.states_before(), params.states_after);
    SummaryTrajectory {
        base_index: base,
        importance: imp,
        indices: w.clone().collect(),
        actions: w.map(|i| stream.record(i).action).collect(),
    }
}

/// Records an admitted offline state excludes: its context window widened to
/// at least `interval_size` on both sides.
pub fn offline_exclusion_window(stream: &Stream, params: &HighlightsParams, base: usize) -> Range<usize> {
    context_window(
        stream,
        base,
        params.states_before().max(params.interval_size),
        params.states_after.max(params.interval_size),
    )
}

pub fn highlights_div_offline(stream: &Stream, params: &HighlightsParams, div: &DivParams) -> Result<Summary> {
    let threshold = calibrate_threshold(stream, div)?;
    let mut s = highlights_div_offline_with_threshold(stream, params, threshold)?;
    s.div = Some(*div);
    Ok(s)
}

/// Offline selection with an explicit similarity threshold.
pub fn highlights_div_offline_with_threshold(
    stream: &Stream,
    params: &HighlightsParams,
    threshold: f64,
) -> Result<Summary> {
    params.validate()?;
    if stream.is_empty() {
        return Err(Error::Stream("stream is empty".into()));
    }
    let imp = stream_importance(stream, params.importance)?;
    let mut order: Vec<usize> = (0..stream.len()).collect();
    order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));

    let mut admitted = Vec::with_capacity(params.k);
    let mut members: Vec<usize> = Vec::new();
    for i in order {
        if admitted.len() == params.k {
            break;
        }
        let s = stream.record(i).state;
        let far = members
            .iter()
            .all(|&m| (sq_distance(s, stream.record(m).state) as f64).sqrt() > threshold);
        if far {
            admitted.push(i);
            members.extend(offline_exclusion_window(stream, params, i));
        }
    }
    let mut trajectories: Vec<_> = admitted
        .into_iter()
        .map(|b| trajectory_at(stream, params, b, imp[b]))
        .collect();
    sort_by_importance(&mut trajectories);
    Ok(Summary {
        mode: SummaryMode::DivOffline,
        params: *params,
        div: None,
        threshold: Some(threshold),
        trajectories,
    })
}

/// Baseline: `k` base states drawn uniformly without replacement.
pub fn random_summary(stream: &Stream, params: &HighlightsParams, seed: u64) -> Result<Summary> {
    params.validate()?;
    if stream.is_empty() {
        return Err(Error::Stream("stream is empty".into()));
    }
    let imp = stream_importance(stream, params.importance)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let bases = sample(&mut rng, stream.len(), params.k.min(stream.len()));
    let mut trajectories: Vec<_> = bases
        .iter()
        .map(|b| trajectory_at(stream, params, b, imp[b]))
        .collect();
    sort_by_importance(&mut trajectories);
    Ok(Summary {
        mode: SummaryMode::Random,
        params: *params,
        div: None,
        threshold: None,
        trajectories,
    })
}

/// Baseline: the first `k` trajectories encountered, separated by `interval_size`.
pub fn first_summary(stream: &Stream, params: &HighlightsParams) -> Result<Summary> {
    params.validate()?;
    if stream.is_empty() {
        return Err(Error::Stream("stream is empty".into()));
    }
    let imp = stream_importance(stream, params.importance)?;
    let mut trajectories = Vec::new();
    let mut cursor = 0;
    while trajectories.len() < params.k && cursor < stream.len() {
        let ep = stream.episode_of(cursor);
        let base = (cursor + params.states_before()).min(ep.end - 1);
        trajectories.push(trajectory_at(stream, params, base, imp[base]));
        cursor = base + params.states_after + 1 + params.interval_size;
    }
    sort_by_importance(&mut trajectories);
    Ok(Summary {
        mode: SummaryMode::First,
        params: *params,
        div: None,
        threshold: None,
        trajectories,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::streams::{StreamMeta, StreamRecord};

    /// Stream whose record i has importance `imps[i]` (second-highest rule) and
    /// a 1-byte state `states[i]`.
    pub(crate) fn stream_with(imps: &[f32], states: &[u8], boundaries: &[usize]) -> Stream {
        let mut s = Stream::new(StreamMeta {
            state_dims: [1, 1, 1],
            action_labels: vec!["a".into(), "b".into()],
            frame_dims: [1, 1],
            agent: None,
        });
        for (i, (&imp, &st)) in imps.iter().zip(states).enumerate() {
            if boundaries.contains(&i) {
                s.begin_episode();
            }
            s.push(StreamRecord {
                state: vec![st],
                q_values: vec![imp, 0.0],
                action: (i % 2) as u8,
                frames: vec![0; 12],
                reward: None,
            })
            .unwrap();
        }
        s
    }

    #[test]
    fn importance_examples() {
        assert_eq!(importance_minmax(&[10.0, 2.0, 5.0]).unwrap(), 8.0);
        assert_eq!(importance_minmax(&[3.0; 4]).unwrap(), 0.0);
        assert_eq!(importance_minmax(&[-1.0, -4.0]).unwrap(), 3.0);
        assert_eq!(importance_second(&[10.0, 2.0, 5.0]).unwrap(), 5.0);
        assert_eq!(importance_second(&[7.0, 7.0, 1.0]).unwrap(), 0.0);
        assert!(importance_second(&[3.0]).is_err());
        assert!(importance_minmax(&[]).is_err());
    }

    #[test]
    fn distance_examples() {
        let a = vec![0u8; 100];
        assert_eq!(state_distance(&a, &a).unwrap(), 0.0);
        let mut b = a.clone();
        b[17] = 255;
        assert_eq!(state_distance(&a, &b).unwrap(), 255.0);
        assert!(state_distance(&a, &b[..99]).is_err());
    }

    #[test]
    fn percentile_median_of_three() {
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0], 50.0), 2.0);
        assert_eq!(percentile_sorted(&[1.0, 2.0, 3.0], 25.0), 1.5);
    }

    #[test]
    fn calibration_examples() {
        let s = stream_with(&[1.0; 5], &[9; 5], &[]);
        let div = DivParams { sample_size: 1000, percentile: 3.0, seed: 1 };
        assert_eq!(calibrate_threshold(&s, &div).unwrap(), 0.0);
        // three states 0, 1, 3 -> pairwise distances {1, 2, 3}
        let s = stream_with(&[1.0; 3], &[0, 1, 3], &[]);
        let div = DivParams { sample_size: 3, percentile: 50.0, seed: 0 };
        assert_eq!(calibrate_threshold(&s, &div).unwrap(), 2.0);
        assert!(calibrate_threshold(&stream_with(&[1.0], &[0], &[]), &div).is_err());
        let bad = DivParams { percentile: 100.0, ..div };
        assert!(calibrate_threshold(&s, &bad).is_err());
    }

    #[test]
    fn online_under_budget_takes_all() {
        let s = stream_with(&[1.0, 4.0, 2.0], &[0, 1, 2], &[]);
        let p = HighlightsParams {
            k: 3,
            l: 2,
            interval_size: 0,
            states_after: 0,
            num_simulations: None,
            importance: ImportanceKind::Second,
        };
        let sum = highlights_online(&s, &p).unwrap();
        assert_eq!(sum.base_indices(), vec![1, 2, 0]);
        assert_eq!(sum.trajectories[0].indices, vec![0, 1]);
    }

    #[test]
    fn online_hand_simulation() {
        // k=2, l=5, interval 3, statesAfter 1 over 12 states.
        // imps:   0:1 1:5 2:2 3:7 4:0 5:3 6:9 7:1 8:4 9:8 10:2 11:6
        // step 0: admit 0 (c=3). 1,2: c>0. step 3: c=0 -> admit 3 (|T|=1<2), c=3.
        // 4,5: c>0. step 6: c=0, 9 > min(1) -> evict 0, admit 6. 7,8 skip.
        // step 9: 8 > min(7) -> evict 3, admit 9. 10, 11 skip (c=2,1).
        // windows finalize one step after admission: 6 -> [3..=7], 9 -> [6..=10]
        let imps = [1.0, 5.0, 2.0, 7.0, 0.0, 3.0, 9.0, 1.0, 4.0, 8.0, 2.0, 6.0];
        let s = stream_with(&imps, &[0; 12], &[]);
        let p = HighlightsParams {
            k: 2,
            l: 5,
            interval_size: 3,
            states_after: 1,
            num_simulations: None,
            importance: ImportanceKind::Second,
        };
        let sum = highlights_online(&s, &p).unwrap();
        assert_eq!(sum.base_indices(), vec![6, 9]);
        assert_eq!(sum.trajectories[0].indices, vec![3, 4, 5, 6, 7]);
        assert_eq!(sum.trajectories[1].indices, vec![6, 7, 8, 9, 10]);
    }

    #[test]
    fn online_resets_at_episode_boundary() {
        let imps = [1.0, 9.0, 2.0, 3.0, 8.0];
        let s = stream_with(&imps, &[0; 5], &[0, 3]);
        let p = HighlightsParams {
            k: 2,
            l: 3,
            interval_size: 5,
            states_after: 2,
            num_simulations: None,
            importance: ImportanceKind::Second,
        };
        let sum = highlights_online(&s, &p).unwrap();
        // 0 admitted, its window truncated at the episode end; 3 admitted fresh
        assert_eq!(sum.base_indices(), vec![3, 0]);
        assert_eq!(sum.trajectories[1].indices, vec![0, 1, 2]);
        assert_eq!(sum.trajectories[0].indices, vec![3, 4]);

        let capped = HighlightsParams { num_simulations: Some(1), ..p };
        assert_eq!(highlights_online(&s, &capped).unwrap().base_indices(), vec![0]);
    }

    #[test]
    fn div_online_identical_states_keep_one() {
        let s = stream_with(&[1.0, 2.0, 3.0, 0.5, 4.0], &[7; 5], &[]);
        let p = HighlightsParams {
            k: 3,
            l: 2,
            interval_size: 0,
            states_after: 0,
            num_simulations: None,
            importance: ImportanceKind::Second,
        };
        let sum = highlights_div_online(&s, &p, &DivParams::default()).unwrap();
        assert_eq!(sum.base_indices(), vec![4]);
    }

    #[test]
    fn div_online_without_binding_matches_plain() {
        let imps = [1.0, 5.0, 2.0, 7.0, 0.0, 3.0, 9.0, 1.0, 4.0, 8.0, 2.0, 6.0];
        let states: Vec<u8> = (0..12).map(|i| i * 20).collect();
        let s = stream_with(&imps, &states, &[]);
        let p = HighlightsParams {
            k: 3,
            l: 4,
            interval_size: 1,
            states_after: 1,
            num_simulations: None,
            importance: ImportanceKind::Second,
        };
        let plain = highlights_online(&s, &p).unwrap();
        let div = highlights_div_online_with_threshold(&s, &p, 5.0).unwrap();
        assert_eq!(plain.trajectories, div.trajectories);
    }

    #[test]
    fn offline_top1_and_context() {
        let imps = [1.0, 5.0, 2.0, 7.0, 0.0, 3.0];
        let s = stream_with(&imps, &[0, 50, 100, 150, 200, 250], &[0, 5]);
        let p = HighlightsParams {
            k: 1,
            l: 5,
            interval_size: 0,
            states_after: 2,
            num_simulations: None,
            importance: ImportanceKind::Second,
        };
        let sum = highlights_div_offline_with_threshold(&s, &p, 1.0).unwrap();
        assert_eq!(sum.base_indices(), vec![3]);
        // two before, two after, clipped at the boundary before record 5
        assert_eq!(sum.trajectories[0].indices, vec![1, 2, 3, 4]);
    }

    #[test]
    fn random_baseline_is_seeded() {
        let s = stream_with(&[1.0; 50], &[0; 50], &[]);
        let p = HighlightsParams::offline_default();
        let a = random_summary(&s, &p, 11).unwrap();
        assert_eq!(a, random_summary(&s, &p, 11).unwrap());
        assert_eq!(a.trajectories.len(), 5);
        let f = first_summary(&s, &p).unwrap();
        assert_eq!(f.trajectories.iter().map(|t| t.base_index).min(), Some(10));
    }

    #[test]
    fn params_validation() {
        let mut p = HighlightsParams::online_default();
        assert!(p.validate().is_ok());
        p.k = 0;
        assert!(p.validate().is_err());
        let p = HighlightsParams { states_after: 40, ..HighlightsParams::online_default() };
        assert!(p.validate().is_err());
    }
}
