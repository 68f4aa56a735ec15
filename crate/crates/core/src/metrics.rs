//! Similarity metrics between two saliency planes of equal size.
//!
//! Correlation-style metrics are undefined when an input has zero variance;
//! such cases score 1.0 when both planes are identical constants and 0.0
//! otherwise.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    Spearman,
    Ssim,
    HogPearson,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Spearman, Metric::Ssim, Metric::HogPearson];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Spearman => "spearman",
            Metric::Ssim => "ssim",
            Metric::HogPearson => "hog-pearson",
        }
    }
}

/// SSIM window and stabilizing constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimConfig {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self {
            window: 11,
            sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct HogConfig {
    /// Unsigned orientation bins over [0, π).
    pub bins: usize,
    /// Square cell edge in pixels.
    pub cell: usize,
}

impl Default for HogConfig {
    fn default() -> Self {
        Self { bins: 9, cell: 14 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricConfig {
    pub ssim: SsimConfig,
    pub hog: HogConfig,
}

fn check_pair(a: &[f32], b: &[f32], dims: (usize, usize)) -> Result<()> {
    if a.len() != b.len() || a.len() != dims.0 * dims.1 || a.is_empty() {
        return Err(Error::Shape(format!(
            "metric inputs must both be {}x{}, got {} and {}",
            dims.0,
            dims.1,
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

/// True if the pair falls under the zero-variance convention.
pub fn is_degenerate(a: &[f32], b: &[f32]) -> bool {
    let constant = |v: &[f32]| v.iter().all(|&x| x == v[0]);
    constant(a) || constant(b)
}

fn pearson_f64(x: &[f64], y: &[f64], equal: bool) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return if sxx == 0.0 && syy == 0.0 && equal { 1.0 } else { 0.0 };
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// Pearson correlation with the zero-variance convention.
pub fn pearson(a: &[f32], b: &[f32]) -> f64 {
    let x: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    pearson_f64(&x, &y, a == b)
}

/// 1-based ranks, ties share their average rank.
pub fn average_ranks(v: &[f32]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut ranks = vec![0.0; v.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && v[idx[end]] == v[idx[start]] {
            end += 1;
        }
        let avg = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = avg;
        }
        start = end;
    }
    ranks
}

pub fn spearman_sim(a: &[f32], b: &[f32], dims: (usize, usize)) -> Result<f64> {
    check_pair(a, b, dims)?;
    Ok(pearson_f64(&average_ranks(a), &average_ranks(b), a == b))
}

fn gaussian_kernel(cfg: &SsimConfig) -> Vec<f64> {
    let r = (cfg.window / 2) as f64;
    let g: Vec<f64> = (0..cfg.window)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * cfg.sigma * cfg.sigma)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    g.into_iter().map(|v| v / s).collect()
}

/// Separable valid-mode filtering of an `h × w` plane.
fn filter_valid(x: &[f64], (h, w): (usize, usize), k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let ow = w - n + 1;
    let oh = h - n + 1;
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for xo in 0..ow {
            rows[y * ow + xo] = (0..n).map(|i| k[i] * x[y * w + xo + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for yo in 0..oh {
        for xo in 0..ow {
            out[yo * ow + xo] = (0..n).map(|i| k[i] * rows[(yo + i) * ow + xo]).sum();
        }
    }
    out
}

pub fn ssim_with(a: &[f32], b: &[f32], dims: (usize, usize), cfg: &SsimConfig) -> Result<f64> {
    check_pair(a, b, dims)?;
    if dims.0 < cfg.window || dims.1 < cfg.window {
        return Err(Error::Shape(format!(
            "ssim window {} larger than {}x{} map",
            cfg.window, dims.0, dims.1
        )));
    }
    let k = gaussian_kernel(cfg);
    let x: Vec<f64> = a.iter().map(|&v| f64::from(v)).collect();
    let y: Vec<f64> = b.iter().map(|&v| f64::from(v)).collect();
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();
    let mx = filter_valid(&x, dims, &k);
    let my = filter_valid(&y, dims, &k);
    let sxx = filter_valid(&xx, dims, &k);
    let syy = filter_valid(&yy, dims, &k);
    let sxy = filter_valid(&xy, dims, &k);
    let c1 = (cfg.k1 * cfg.dynamic_range).powi(2);
    let c2 = (cfg.k2 * cfg.dynamic_range).powi(2);
    let total: f64 = (0..mx.len())
        .map(|i| {
            let (ux, uy) = (mx[i], my[i]);
            let vx = sxx[i] - ux * ux;
            let vy = syy[i] - uy * uy;
            let cxy = sxy[i] - ux * uy;
            ((2.0 * ux * uy + c1) * (2.0 * cxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / mx.len() as f64)
}

pub fn ssim_sim(a: &[f32], b: &[f32], dims: (usize, usize)) -> Result<f64> {
    ssim_with(a, b, dims, &SsimConfig::default())
}

/// Concatenated per-cell orientation histograms, magnitude-weighted.
pub fn hog_descriptor(a: &[f32], (h, w): (usize, usize), cfg: &HogConfig) -> Vec<f64> {
    let (cy, cx) = (h / cfg.cell, w / cfg.cell);
    let mut hist = vec![0.0f64; cy * cx * cfg.bins];
    let px = |y: usize, x: usize| f64::from(a[y * w + x]);
    let bin_width = std::f64::consts::PI / cfg.bins as f64;
    for y in 0..cy * cfg.cell {
        for x in 0..cx * cfg.cell {
            let gx = px(y, (x + 1).min(w - 1)) - px(y, x.saturating_sub(1));
            let gy = px((y + 1).min(h - 1), x) - px(y.saturating_sub(1), x);
            let mag = (gx * gx + gy * gy).sqrt();
            if mag == 0.0 {
                continue;
            }
            let mut theta = gy.atan2(gx);
            if theta < 0.0 {
                theta += std::f64::consts::PI;
            }
            // unsigned: π and 0 are the same orientation
            if theta >= std::f64::consts::PI {
                theta -= std::f64::consts::PI;
            }
            let bin = ((theta / bin_width) as usize).min(cfg.bins - 1);
            let cell = (y / cfg.cell) * cx + x / cfg.cell;
            hist[cell * cfg.bins + bin] += mag;
        }
    }
    hist
}

pub fn hog_pearson_with(a: &[f32], b: &[f32], dims: (usize, usize), cfg: &HogConfig) -> Result<f64> {
    check_pair(a, b, dims)?;
    if dims.0 < cfg.cell || dims.1 < cfg.cell {
        return Err(Error::Shape(format!(
            "hog cell {} larger than {}x{} map",
            cfg.cell, dims.0, dims.1
        )));
    }
    let ha = hog_descriptor(a, dims, cfg);
    let hb = hog_descriptor(b, dims, cfg);
    Ok(pearson_f64(&ha, &hb, ha == hb))
}

pub fn hog_pearson_sim(a: &[f32], b: &[f32], dims: (usize, usize)) -> Result<f64> {
    hog_pearson_with(a, b, dims, &HogConfig::default())
}

pub fn similarity(metric: Metric, a: &[f32], b: &[f32], dims: (usize, usize), cfg: &MetricConfig) -> Result<f64> {
    match metric {
        Metric::Spearman => spearman_sim(a, b, dims),
        Metric::Ssim => ssim_with(a, b, dims, &cfg.ssim),
        Metric::HogPearson => hog_pearson_with(a, b, dims, &cfg.hog),
    }
}

/// `max(m(S, S'), m(1 − S, S'))` for a map `S` normalized to [0, 1].
pub fn signflip_sim(
    metric: Metric,
    s: &[f32],
    s_prime: &[f32],
    dims: (usize, usize),
    cfg: &MetricConfig,
) -> Result<f64> {
    let direct = similarity(metric, s, s_prime, dims, cfg)?;
    let inverted: Vec<f32> = s.iter().map(|v| 1.0 - v).collect();
    Ok(direct.max(similarity(metric, &inverted, s_prime, dims, cfg)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> Vec<f32> {
        (0..h * w).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()
    }

    #[test]
    fn self_similarity_is_one() {
        let a = ramp(28, 28);
        for m in Metric::ALL {
            let v = similarity(m, &a, &a, (28, 28), &MetricConfig::default()).unwrap();
            assert_eq!(v, 1.0, "{m:?}");
        }
    }

    #[test]
    fn spearman_reversal_and_ties() {
        let a = ramp(5, 5);
        let b: Vec<f32> = a.iter().map(|v| 1.0 - v).collect();
        assert!((spearman_sim(&a, &b, (5, 5)).unwrap() + 1.0).abs() < 1e-12);
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn constant_convention() {
        let c = vec![0.5f32; 16];
        let d = vec![0.25f32; 16];
        assert_eq!(spearman_sim(&c, &c, (4, 4)).unwrap(), 1.0);
        assert_eq!(spearman_sim(&c, &d, (4, 4)).unwrap(), 0.0);
        assert_eq!(spearman_sim(&c, &ramp(4, 4), (4, 4)).unwrap(), 0.0);
        assert!(is_degenerate(&c, &ramp(4, 4)));
    }

    #[test]
    fn signflip_recovers_inversion() {
        let a = ramp(14, 14);
        let b: Vec<f32> = a.iter().map(|v| 1.0 - v).collect();
        let cfg = MetricConfig::default();
        assert!((signflip_sim(Metric::Spearman, &a, &b, (14, 14), &cfg).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(signflip_sim(Metric::Spearman, &a, &a, (14, 14), &cfg).unwrap(), 1.0);
    }

    #[test]
    fn shape_errors() {
        assert!(spearman_sim(&[0.0; 4], &[0.0; 3], (2, 2)).is_err());
        assert!(ssim_sim(&[0.0; 100], &[0.0; 100], (10, 10)).is_err());
        assert!(hog_pearson_sim(&[0.0; 100], &[0.0; 100], (10, 10)).is_err());
    }
}
