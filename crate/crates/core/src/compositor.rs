//! Summary video rendering: de-flickered raw screens, optional saliency
//! overlay on the green channel, masked score area, black separators
//! between trajectories, written as a PNG sequence and an animated GIF.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::highlights::Summary;
use crate::lrp::SaliencyMap;
use crate::streams::{Stream, FRAMES_PER_RECORD};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlayConfig {
    pub fps: u32,
    pub separator_seconds: f64,
    /// Fraction of the screen height blacked out from the bottom.
    pub mask_fraction: f64,
    /// Multiplier on the normalized saliency before it is added to green.
    pub saliency_gain: f32,
}

impl Default for OverlayConfig {
    fn default() -> Self {
        Self {
            fps: 30,
            separator_seconds: 1.0,
            mask_fraction: 0.5,
            saliency_gain: 1.0,
        }
    }
}

impl OverlayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.fps == 0 {
            return Err(Error::InvalidArgument("fps must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.mask_fraction) {
            return Err(Error::InvalidArgument(format!(
                "mask fraction must be in [0, 1], got {}",
                self.mask_fraction
            )));
        }
        if self.separator_seconds.is_nan() || self.separator_seconds < 0.0 {
            return Err(Error::InvalidArgument("separator must be >= 0 seconds".into()));
        }
        Ok(())
    }

    pub fn separator_frames(&self) -> usize {
        (f64::from(self.fps) * self.separator_seconds).round() as usize
    }

    /// GIF frame delay in centiseconds.
    pub fn gif_delay(&self) -> u16 {
        (100.0 / f64::from(self.fps)).round() as u16
    }
}

/// Per-pixel, per-channel maximum of two frames.
pub fn deflicker(curr: &RgbImage, prev: &RgbImage) -> Result<RgbImage> {
    if curr.dimensions() != prev.dimensions() {
        return Err(Error::Shape(format!(
            "deflicker frames differ: {:?} vs {:?}",
            curr.dimensions(),
            prev.dimensions()
        )));
    }
    let data = curr
        .as_raw()
        .iter()
        .zip(prev.as_raw())
        .map(|(&a, &b)| a.max(b))
        .collect();
    Ok(RgbImage::from_raw(curr.width(), curr.height(), data).unwrap())
}

/// Joint min-max normalization over the whole tensor; a constant map becomes zero.
pub fn normalize_saliency(map: &SaliencyMap) -> SaliencyMap {
    let d = map.relevance.data();
    let (lo, hi) = d
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let span = hi - lo;
    let data = if span > 0.0 {
        d.iter().map(|&v| (v - lo) / span).collect()
    } else {
        vec![0.0; d.len()]
    };
    SaliencyMap {
        relevance: Tensor::new(map.relevance.shape().to_vec(), data).unwrap(),
        ..map.clone()
    }
}

/// Linear blend toward `next`; frame 4 shows `next` exactly.
pub fn interpolate_saliency(prev_shown: &[f32], next: &[f32], i: usize) -> Result<Vec<f32>> {
    if !(1..=4).contains(&i) {
        return Err(Error::InvalidArgument(format!("frame index {i} outside 1..=4")));
    }
    if prev_shown.len() != next.len() {
        return Err(Error::Shape("interpolation maps differ in size".into()));
    }
    if i == 4 {
        return Ok(next.to_vec());
    }
    let t = i as f32 / 4.0;
    Ok(prev_shown
        .iter()
        .zip(next)
        .map(|(&p, &n)| (1.0 - t) * p + t * n)
        .collect())
}

/// Bilinear resampling (pixel-centre aligned, edge clamped).
pub fn upscale_bilinear(src: &[f32], (sh, sw): (usize, usize), (dh, dw): (usize, usize)) -> Vec<f32> {
    let coord = |d: usize, dn: usize, sn: usize| -> (usize, usize, f32) {
        let s = ((d as f32 + 0.5) * sn as f32 / dn as f32 - 0.5).clamp(0.0, (sn - 1) as f32);
        let lo = s.floor() as usize;
        let hi = (lo + 1).min(sn - 1);
        (lo, hi, s - lo as f32)
    };
    let mut out = Vec::with_capacity(dh * dw);
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, dh, sh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, dw, sw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bot = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bot * fy);
        }
    }
    out
}

/// Number of bottom rows blacked out.
pub fn masked_rows(height: u32, mask_fraction: f64) -> u32 {
    ((f64::from(height) * mask_fraction).round() as u32).min(height)
}

pub fn apply_mask(frame: &mut RgbImage, mask_fraction: f64) {
    let h = frame.height();
    let start = h - masked_rows(h, mask_fraction);
    for y in start..h {
        for x in 0..frame.width() {
            frame.put_pixel(x, y, image::Rgb([0, 0, 0]));
        }
    }
}

/// Adds the upscaled saliency to the green channel, then applies the mask.
pub fn overlay(frame: &RgbImage, sal: &[f32], sal_dims: (usize, usize), cfg: &OverlayConfig) -> Result<RgbImage> {
    if sal.len() != sal_dims.0 * sal_dims.1 {
        return Err(Error::Shape("saliency plane does not match its dims".into()));
    }
    let (w, h) = frame.dimensions();
    let up = upscale_bilinear(sal, sal_dims, (h as usize, w as usize));
    let mut out = frame.clone();
    for (px, &s) in out.pixels_mut().zip(&up) {
        let add = (255.0 * cfg.saliency_gain * s).round();
        px[1] = (f32::from(px[1]) + add).clamp(0.0, 255.0) as u8;
    }
    apply_mask(&mut out, cfg.mask_fraction);
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Annotation {
    pub trajectory: Option<usize>,
    pub record: Option<usize>,
    /// 1..=4 within the record's repeated-action frames.
    pub frame_index: Option<usize>,
    pub separator: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    pub frames: Vec<RgbImage>,
    pub annotations: Vec<Annotation>,
    pub overlaid: bool,
}

/// Expected frame count for a summary: 4 frames per record plus separators.
pub fn expected_frame_count(records_per_trajectory: &[usize], cfg: &OverlayConfig) -> usize {
    let content: usize = records_per_trajectory.iter().map(|n| FRAMES_PER_RECORD * n).sum();
    content + records_per_trajectory.len().saturating_sub(1) * cfg.separator_frames()
}

fn raw_frame(stream: &Stream, record: usize, i: usize) -> RgbImage {
    let [h, w] = stream.meta.frame_dims;
    RgbImage::from_raw(w as u32, h as u32, stream.record(record).frame(i).to_vec()).unwrap()
}

/// Newest-frame saliency plane of a normalized map.
fn newest_plane(map: &SaliencyMap) -> Vec<f32> {
    let (_, _, c) = map.dims();
    map.channel(c - 1)
}

pub fn render_summary(
    stream: &Stream,
    summary: &Summary,
    saliency: Option<&HashMap<usize, SaliencyMap>>,
    cfg: &OverlayConfig,
) -> Result<FrameSequence> {
    cfg.validate()?;
    let [fh, fw] = stream.meta.frame_dims;
    let mut frames = Vec::new();
    let mut annotations = Vec::new();
    for (t, traj) in summary.trajectories.iter().enumerate() {
        if let Some(&bad) = traj.indices.iter().find(|&&i| i >= stream.len()) {
            return Err(Error::IndexOutOfRange {
                index: bad,
                len: stream.len(),
            });
        }
        if t > 0 {
            for _ in 0..cfg.separator_frames() {
                frames.push(RgbImage::new(fw as u32, fh as u32));
                annotations.push(Annotation {
                    trajectory: None,
                    record: None,
                    frame_index: None,
                    separator: true,
                });
            }
        }
        let mut prev_raw: Option<RgbImage> = None;
        let mut prev_shown: Option<Vec<f32>> = None;
        for &rec in &traj.indices {
            let plane = match saliency {
                Some(maps) => {
                    let map = maps.get(&rec).ok_or_else(|| {
                        Error::InvalidArgument(format!("no saliency map for record {rec}"))
                    })?;
                    let norm = normalize_saliency(map);
                    let (sh, sw, _) = norm.dims();
                    Some((newest_plane(&norm), (sh, sw)))
                }
                None => None,
            };
            for i in 0..FRAMES_PER_RECORD {
                let curr = raw_frame(stream, rec, i);
                let mut shown = deflicker(&curr, prev_raw.as_ref().unwrap_or(&curr))?;
                if let Some((next, dims)) = &plane {
                    let prev = prev_shown.as_deref().unwrap_or(next);
                    let sal = interpolate_saliency(prev, next, i + 1)?;
                    shown = overlay(&shown, &sal, *dims, cfg)?;
                } else {
                    apply_mask(&mut shown, cfg.mask_fraction);
                }
                frames.push(shown);
                annotations.push(Annotation {
                    trajectory: Some(t),
                    record: Some(rec),
                    frame_index: Some(i + 1),
                    separator: false,
                });
                prev_raw = Some(curr);
            }
            if let Some((next, _)) = plane {
                prev_shown = Some(next);
            }
        }
    }
    Ok(FrameSequence {
        frames,
        annotations,
        overlaid: saliency.is_some(),
    })
}

fn gif_frame(img: &RgbImage, delay: u16) -> gif::Frame<'static> {
    let (w, h) = (img.width() as u16, img.height() as u16);
    let mut colors: BTreeMap<[u8; 3], u8> = BTreeMap::new();
    let mut exact = true;
    for px in img.pixels() {
        if !colors.contains_key(&px.0) {
            if colors.len() == 256 {
                exact = false;
                break;
            }
            colors.insert(px.0, 0);
        }
    }
    let mut frame = if exact {
        let mut palette = Vec::with_capacity(colors.len() * 3);
        for (i, (c, idx)) in colors.iter_mut().enumerate() {
            *idx = i as u8;
            palette.extend_from_slice(c);
        }
        let indices: Vec<u8> = img.pixels().map(|p| colors[&p.0]).collect();
        gif::Frame::from_palette_pixels(w, h, indices, palette, None)
    } else {
        gif::Frame::from_rgb_speed(w, h, img.as_raw(), 10)
    };
    frame.delay = delay;
    frame
}

/// Encodes frames as a looping GIF89a.
pub fn write_gif(frames: &[RgbImage], path: &Path, cfg: &OverlayConfig) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("no frames to encode".into()))?;
    if first.width() > u32::from(u16::MAX) || first.height() > u32::from(u16::MAX) {
        return Err(Error::Encode("frame too large for gif".into()));
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut enc = gif::Encoder::new(BufWriter::new(file), first.width() as u16, first.height() as u16, &[])
        .map_err(|e| Error::Encode(e.to_string()))?;
    enc.set_repeat(gif::Repeat::Infinite)
        .map_err(|e| Error::Encode(e.to_string()))?;
    for f in frames {
        enc.write_frame(&gif_frame(f, cfg.gif_delay()))
            .map_err(|e| Error::Encode(e.to_string()))?;
    }
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RenderManifest {
    pub config: OverlayConfig,
    pub overlaid: bool,
    pub frame_count: usize,
    pub frame_dims: [u32; 2],
    pub annotations: Vec<Annotation>,
}

/// Writes `frames/NNNNN.png`, `summary.gif` and `render.json` under `out_dir`.
pub fn write_sequence(seq: &FrameSequence, out_dir: &Path, cfg: &OverlayConfig) -> Result<()> {
    let frames_dir = out_dir.join("frames");
    fs::create_dir_all(&frames_dir).map_err(|e| Error::io(&frames_dir, e))?;
    for (i, f) in seq.frames.iter().enumerate() {
        let p = frames_dir.join(format!("{i:05}.png"));
        f.save(&p)
            .map_err(|e| Error::Encode(format!("{}: {e}", p.display())))?;
    }
    write_gif(&seq.frames, &out_dir.join("summary.gif"), cfg)?;
    let (w, h) = seq.frames.first().map(|f| f.dimensions()).unwrap_or((0, 0));
    let manifest = RenderManifest {
        config: *cfg,
        overlaid: seq.overlaid,
        frame_count: seq.frames.len(),
        frame_dims: [h, w],
        annotations: seq.annotations.clone(),
    };
    let p = out_dir.join("render.json");
    let text = serde_json::to_string_pretty(&manifest).map_err(|e| Error::json(&p, e))?;
    fs::write(&p, text).map_err(|e| Error::io(&p, e))
}
