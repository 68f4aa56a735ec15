//! Cascading-randomization sanity checks for saliency maps.
//!
//! Layers are re-drawn from the output inward; after each stage the maps for
//! the same states and actions are recomputed and compared against the
//! trained network's maps with sign-flip corrected similarity metrics.

use std::fs;
use std::path::Path;

use image::{GrayImage, Rgb, RgbImage};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compositor::normalize_saliency;
use crate::error::{Error, Result};
use crate::lrp::{saliency, ConvRule, SaliencyMap};
use crate::metrics::{is_degenerate, signflip_sim, Metric, MetricConfig};
use crate::net::{forward, NetworkSpec};
use crate::streams::Stream;
use crate::tensor::{state_to_input, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizationSchedule {
    /// Layer names, output layer first. Stage `i` randomizes `stages[..=i]`.
    pub stages: Vec<String>,
    pub seed: u64,
}

impl RandomizationSchedule {
    /// Every layer of `net`, from the output inward.
    pub fn cascade(net: &NetworkSpec, seed: u64) -> Self {
        Self {
            stages: net.layers.iter().rev().map(|l| l.name.clone()).collect(),
            seed,
        }
    }
}

fn empirical(v: &[f32]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().map(|&x| f64::from(x)).sum::<f64>() / n;
    let var = v.iter().map(|&x| (f64::from(x) - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn resample(t: &Tensor, rng: &mut ChaCha8Rng) -> Tensor {
    let (mean, std) = empirical(t.data());
    let data = match Normal::new(mean, std) {
        Ok(d) if std > 0.0 => (0..t.len()).map(|_| d.sample(rng) as f32).collect(),
        _ => vec![mean as f32; t.len()],
    };
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

/// Copy of `net` with the layers of stages `..=stage` redrawn from a normal
/// distribution matching each tensor's empirical mean and std. `None`
/// returns the network unchanged.
pub fn randomize_layers(net: &NetworkSpec, schedule: &RandomizationSchedule, stage: Option<usize>) -> Result<NetworkSpec> {
    let mut out = net.clone();
    let Some(stage) = stage else {
        return Ok(out);
    };
    if stage >= schedule.stages.len() {
        return Err(Error::InvalidArgument(format!(
            "stage {stage} out of range for {} stages",
            schedule.stages.len()
        )));
    }
    for name in &schedule.stages[..=stage] {
        let idx = net
            .layer_index(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown layer {name:?}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        rng.set_stream(idx as u64);
        let layer = &mut out.layers[idx];
        layer.weights = resample(&layer.weights, &mut rng);
        layer.bias = resample(&layer.bias, &mut rng);
    }
    Ok(out)
}

/// Which saliency channels are scored.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ChannelSelection {
    /// The newest frame's channel only.
    #[default]
    Newest,
    /// Mean of the per-channel scores.
    AllMean,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SanityConfig {
    pub rule: ConvRule,
    pub channels: ChannelSelection,
    pub metrics: MetricConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    pub mean: f64,
    pub std_error: f64,
    pub count: usize,
    /// Scores that fell under the zero-variance convention.
    pub degenerate: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageResult {
    /// `None` for the unrandomized baseline.
    pub stage: Option<usize>,
    pub layers_randomized: Vec<String>,
    pub metrics: Vec<MetricSummary>,
}

impl StageResult {
    pub fn metric(&self, m: Metric) -> &MetricSummary {
        self.metrics.iter().find(|s| s.metric == m).unwrap()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilarityReport {
    pub n_states: usize,
    pub schedule: RandomizationSchedule,
    pub config: SanityConfig,
    /// Baseline first, then one entry per cascade stage.
    pub stages: Vec<StageResult>,
}

fn score_pair(base: &SaliencyMap, other: &SaliencyMap, cfg: &SanityConfig) -> Result<Vec<(f64, bool)>> {
    let a = normalize_saliency(base);
    let b = normalize_saliency(other);
    let (h, w, c) = a.dims();
    let channels: Vec<usize> = match cfg.channels {
        ChannelSelection::Newest => vec![c - 1],
        ChannelSelection::AllMean => (0..c).collect(),
    };
    Metric::ALL
        .iter()
        .map(|&m| {
            let mut total = 0.0;
            let mut degenerate = false;
            for &ch in &channels {
                let (pa, pb) = (a.channel(ch), b.channel(ch));
                degenerate |= m != Metric::Ssim && is_degenerate(&pa, &pb);
                total += signflip_sim(m, &pa, &pb, (h, w), &cfg.metrics)?;
            }
            Ok((total / channels.len() as f64, degenerate))
        })
        .collect()
}

fn summarize(scores: &[Vec<(f64, bool)>]) -> Vec<MetricSummary> {
    Metric::ALL
        .iter()
        .enumerate()
        .map(|(mi, &metric)| {
            let vals: Vec<f64> = scores.iter().map(|s| s[mi].0).collect();
            let n = vals.len();
            let mean = vals.iter().sum::<f64>() / n as f64;
            let std_error = if n > 1 {
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
                var.sqrt() / (n as f64).sqrt()
            } else {
                0.0
            };
            MetricSummary {
                metric,
                mean,
                std_error,
                count: n,
                degenerate: scores.iter().filter(|s| s[mi].1).count(),
            }
        })
        .collect()
}

fn maps_for(net: &NetworkSpec, stream: &Stream, n: usize, rule: ConvRule) -> Result<Vec<SaliencyMap>> {
    let [h, w, c] = stream.meta.state_dims;
    (0..n)
        .into_par_iter()
        .map(|i| {
            let r = stream.record(i);
            let tr = forward(net, &state_to_input(r.state, (h, w, c))?)?;
            saliency(net, &tr, usize::from(r.action), rule)
        })
        .collect()
}

/// Runs the full cascade on the first `n_states` records.
pub fn run_sanity(
    net: &NetworkSpec,
    stream: &Stream,
    schedule: &RandomizationSchedule,
    n_states: usize,
    cfg: &SanityConfig,
) -> Result<SimilarityReport> {
    run_sanity_with_dumps(net, stream, schedule, n_states, cfg, None)
}

/// Like [`run_sanity`]; additionally writes the first state's normalized
/// newest-channel map for every stage as a PNG into `dump_dir`.
pub fn run_sanity_with_dumps(
    net: &NetworkSpec,
    stream: &Stream,
    schedule: &RandomizationSchedule,
    n_states: usize,
    cfg: &SanityConfig,
    dump_dir: Option<&Path>,
) -> Result<SimilarityReport> {
    if n_states == 0 || n_states > stream.len() {
        return Err(Error::InvalidArgument(format!(
            "n_states {n_states} must be in 1..={}",
            stream.len()
        )));
    }
    let baseline = maps_for(net, stream, n_states, cfg.rule)?;
    let mut stage_nets = vec![None];
    stage_nets.extend((0..schedule.stages.len()).map(Some));

    let mut stages = Vec::with_capacity(stage_nets.len());
    for stage in stage_nets {
        let rnet = randomize_layers(net, schedule, stage)?;
        let maps = match stage {
            None => baseline.clone(),
            Some(_) => maps_for(&rnet, stream, n_states, cfg.rule)?,
        };
        if let Some(dir) = dump_dir {
            dump_map(&maps[0], dir, stage)?;
        }
        let scores: Vec<Vec<(f64, bool)>> = baseline
            .par_iter()
            .zip(&maps)
            .map(|(a, b)| score_pair(a, b, cfg))
            .collect::<Result<_>>()?;
        stages.push(StageResult {
            stage,
            layers_randomized: stage
                .map(|s| schedule.stages[..=s].to_vec())
                .unwrap_or_default(),
            metrics: summarize(&scores),
        });
    }
    Ok(SimilarityReport {
        n_states,
        schedule: schedule.clone(),
        config: *cfg,
        stages,
    })
}

fn dump_map(map: &SaliencyMap, dir: &Path, stage: Option<usize>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let norm = normalize_saliency(map);
    let (h, w, c) = norm.dims();
    let px = norm
        .channel(c - 1)
        .iter()
        .map(|v| (v * 255.0).round() as u8)
        .collect();
    let name = match stage {
        None => "stage_baseline.png".to_string(),
        Some(s) => format!("stage_{s:02}.png"),
    };
    let p = dir.join(name);
    GrayImage::from_raw(w as u32, h as u32, px)
        .unwrap()
        .save(&p)
        .map_err(|e| Error::Encode(format!("{}: {e}", p.display())))
}

impl SimilarityReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    /// Line chart of mean similarity per stage, one series per metric, y in [-1, 1].
    pub fn render_chart(&self, path: &Path) -> Result<()> {
        const W: u32 = 640;
        const H: u32 = 400;
        const PAD: i64 = 40;
        let mut img = RgbImage::from_pixel(W, H, Rgb([255, 255, 255]));
        let (x0, x1) = (PAD, i64::from(W) - PAD);
        let (y_top, y_bot) = (PAD, i64::from(H) - PAD);
        let n = self.stages.len().max(2) - 1;
        let xpos = |i: usize| x0 + (x1 - x0) * i as i64 / n as i64;
        let ypos = |v: f64| {
            let t = (v.clamp(-1.0, 1.0) + 1.0) / 2.0;
            y_bot - ((y_bot - y_top) as f64 * t).round() as i64
        };
        let axis = Rgb([0, 0, 0]);
        let grid = Rgb([210, 210, 210]);
        for v in [-1.0, -0.5, 0.5, 1.0] {
            draw_line(&mut img, (x0, ypos(v)), (x1, ypos(v)), grid);
        }
        draw_line(&mut img, (x0, ypos(0.0)), (x1, ypos(0.0)), axis);
        draw_line(&mut img, (x0, y_top), (x0, y_bot), axis);
        for i in 0..self.stages.len() {
            draw_line(&mut img, (xpos(i), y_bot - 4), (xpos(i), y_bot + 4), axis);
        }
        let colors = [Rgb([214, 39, 40]), Rgb([31, 119, 180]), Rgb([44, 160, 44])];
        for (mi, m) in Metric::ALL.iter().enumerate() {
            let pts: Vec<(i64, i64)> = self
                .stages
                .iter()
                .enumerate()
                .map(|(i, s)| (xpos(i), ypos(s.metric(*m).mean)))
                .collect();
            for w in pts.windows(2) {
                draw_line(&mut img, w[0], w[1], colors[mi]);
            }
            for &(x, y) in &pts {
                fill_rect(&mut img, x - 2, y - 2, 5, 5, colors[mi]);
            }
            // legend swatch
            fill_rect(&mut img, x1 - 60 + 20 * mi as i64, 10, 12, 12, colors[mi]);
        }
        img.save(path)
            .map_err(|e| Error::Encode(format!("{}: {e}", path.display())))
    }
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

fn fill_rect(img: &mut RgbImage, x: i64, y: i64, w: i64, h: i64, c: Rgb<u8>) {
    for yy in y..y + h {
        for xx in x..x + w {
            put(img, xx, yy, c);
        }
    }
}

fn draw_line(img: &mut RgbImage, (mut x, mut y): (i64, i64), (x1, y1): (i64, i64), c: Rgb<u8>) {
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        put(img, x, y, c);
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}
