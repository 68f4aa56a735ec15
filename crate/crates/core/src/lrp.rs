//! Layer-wise relevance propagation.
//!
//! Relevance starts at the analyzed action's Q-value and is pushed back
//! through the stored activations of a [`ForwardTrace`]. Dense layers and the
//! first conv layer always use the z⁺ rule (positive contributions `w·a`,
//! bias ignored). The remaining conv layers use either z⁺ or the argmax rule,
//! which routes each neuron's whole relevance to the single input with the
//! largest contribution `w·a` inside its receptive field.
//!
//! Outputs whose positive-contribution sum is zero cannot pass relevance on
//! under z⁺; their relevance is dropped and accounted for in
//! [`Diagnostics`], so `input total + dropped == Q[action]` always holds.

use std::fs;
use std::path::Path;

use image::GrayImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{flatten, unflatten, ForwardTrace, LayerKind, LayerSpec, NetworkSpec};
use crate::tensor::Tensor;

/// Propagation rule for conv layers other than the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvRule {
    #[default]
    Argmax,
    Zplus,
}

impl std::str::FromStr for ConvRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(ConvRule::Argmax),
            "zplus" => Ok(ConvRule::Zplus),
            other => Err(Error::InvalidArgument(format!("unknown rule {other:?}"))),
        }
    }
}

impl std::fmt::Display for ConvRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConvRule::Argmax => "argmax",
            ConvRule::Zplus => "zplus",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Total relevance lost at zero-denominator outputs.
    pub dropped_relevance: f64,
    /// Number of outputs whose relevance was dropped.
    pub dropped_count: usize,
    /// Argmax selections where every contribution in the field was <= 0.
    pub nonpositive_argmax: usize,
}

impl Diagnostics {
    fn drop(&mut self, r: f64) {
        if r != 0.0 {
            self.dropped_relevance += r;
            self.dropped_count += 1;
        }
    }
}

/// Relevance for every activation of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRelevance {
    /// Same shapes as `ForwardTrace::per_layer`.
    pub per_layer: Vec<Tensor>,
    pub analyzed_action: usize,
    /// Relevance dropped while propagating from layer `i + 1` into layer `i`.
    pub dropped_per_layer: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    /// `[h, w, c]`, channel i = frame i of the stacked state (oldest first).
    pub relevance: Tensor,
    pub analyzed_action: usize,
    /// Starting relevance, `Q[analyzed_action]`.
    pub q_value: f32,
    pub rule: ConvRule,
    pub diagnostics: Diagnostics,
}

impl SaliencyMap {
    pub fn dims(&self) -> (usize, usize, usize) {
        let s = self.relevance.shape();
        (s[0], s[1], s[2])
    }

    /// One channel as an `h*w` row-major plane.
    pub fn channel(&self, ch: usize) -> Vec<f32> {
        let (_, _, c) = self.dims();
        self.relevance
            .data()
            .iter()
            .skip(ch)
            .step_by(c)
            .copied()
            .collect()
    }

    /// Entries whose magnitude exceeds `fraction` of the largest magnitude.
    pub fn count_above(&self, fraction: f32) -> usize {
        let max = self
            .relevance
            .data()
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()));
        if max == 0.0 {
            return 0;
        }
        self.relevance
            .data()
            .iter()
            .filter(|v| v.abs() > fraction * max)
            .count()
    }

    pub fn nonzero_count(&self) -> usize {
        self.relevance.data().iter().filter(|v| **v != 0.0).count()
    }
}

/// Output-layer relevance: `Q[action]` at `action`, zero elsewhere.
pub fn init_output_relevance(trace: &ForwardTrace, action: usize) -> Result<Tensor> {
    let n = trace.q_values.len();
    if action >= n {
        return Err(Error::IndexOutOfRange { index: action, len: n });
    }
    let mut r = vec![0.0; n];
    r[action] = trace.q_values[action];
    Ok(Tensor::from_vec(r))
}

pub fn propagate_dense_zplus(
    r_next: &Tensor,
    input_act: &Tensor,
    layer: &LayerSpec,
    diag: &mut Diagnostics,
) -> Result<Tensor> {
    if layer.kind != LayerKind::Dense
        || input_act.len() != layer.in_dim()
        || r_next.len() != layer.out_dim()
    {
        return Err(Error::Shape(format!(
            "dense z+ on layer {}: relevance {} / activation {} vs weights {:?}",
            layer.name,
            r_next.len(),
            input_act.len(),
            layer.weights.shape()
        )));
    }
    let n_in = layer.in_dim();
    let a = input_act.data();
    let mut r = vec![0.0f64; n_in];
    for (row, &rk) in layer.weights.data().chunks_exact(n_in).zip(r_next.data()) {
        if rk == 0.0 {
            continue;
        }
        let rk = f64::from(rk);
        let den: f64 = row
            .iter()
            .zip(a)
            .map(|(&w, &v)| f64::from((w * v).max(0.0)))
            .sum();
        if den <= 0.0 {
            diag.drop(rk);
            continue;
        }
        let scale = rk / den;
        for ((&w, &v), rj) in row.iter().zip(a).zip(r.iter_mut()) {
            let z = (w * v).max(0.0);
            if z > 0.0 {
                *rj += f64::from(z) * scale;
            }
        }
    }
    Tensor::new(input_act.shape().to_vec(), r.into_iter().map(|v| v as f32).collect())
}

struct ConvGeom {
    cin: usize,
    h: usize,
    w: usize,
    oc: usize,
    oh: usize,
    ow: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
}

fn conv_geom(r_next: &Tensor, input_act: &Tensor, layer: &LayerSpec) -> Result<ConvGeom> {
    if layer.kind != LayerKind::Conv {
        return Err(Error::InvalidArgument(format!(
            "layer {} is not a conv layer",
            layer.name
        )));
    }
    let out_shape = layer.output_shape(input_act.shape())?;
    if r_next.shape() != out_shape {
        return Err(Error::Shape(format!(
            "conv layer {}: relevance shape {:?} != output shape {out_shape:?}",
            layer.name,
            r_next.shape()
        )));
    }
    let (cin, h, w) = input_act.dims3()?;
    let (kh, kw) = layer.kernel();
    Ok(ConvGeom {
        cin,
        h,
        w,
        oc: out_shape[0],
        oh: out_shape[1],
        ow: out_shape[2],
        kh,
        kw,
        sh: layer.stride.0,
        sw: layer.stride.1,
    })
}

/// Calls `f(input_flat_index, weight)` for every edge feeding output (o, oy, ox),
/// in ascending input index order.
#[inline]
fn for_each_edge(g: &ConvGeom, wt: &[f32], o: usize, oy: usize, ox: usize, mut f: impl FnMut(usize, f32)) {
    for c in 0..g.cin {
        for ky in 0..g.kh {
            let row = (c * g.h + oy * g.sh + ky) * g.w + ox * g.sw;
            let wrow = ((o * g.cin + c) * g.kh + ky) * g.kw;
            for kx in 0..g.kw {
                f(row + kx, wt[wrow + kx]);
            }
        }
    }
}

pub fn propagate_conv_zplus(
    r_next: &Tensor,
    input_act: &Tensor,
    layer: &LayerSpec,
    diag: &mut Diagnostics,
) -> Result<Tensor> {
    let g = conv_geom(r_next, input_act, layer)?;
    let a = input_act.data();
    let wt = layer.weights.data();
    let mut r = vec![0.0f64; a.len()];
    for o in 0..g.oc {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let rk = r_next.data()[(o * g.oh + oy) * g.ow + ox];
                if rk == 0.0 {
                    continue;
                }
                let rk = f64::from(rk);
                let mut den = 0.0f64;
                for_each_edge(&g, wt, o, oy, ox, |j, w| den += f64::from((w * a[j]).max(0.0)));
                if den <= 0.0 {
                    diag.drop(rk);
                    continue;
                }
                let scale = rk / den;
                for_each_edge(&g, wt, o, oy, ox, |j, w| {
                    let z = (w * a[j]).max(0.0);
                    if z > 0.0 {
                        r[j] += f64::from(z) * scale;
                    }
                });
            }
        }
    }
    Tensor::new(input_act.shape().to_vec(), r.into_iter().map(|v| v as f32).collect())
}

pub fn propagate_conv_argmax(
    r_next: &Tensor,
    input_act: &Tensor,
    layer: &LayerSpec,
    diag: &mut Diagnostics,
) -> Result<Tensor> {
    let g = conv_geom(r_next, input_act, layer)?;
    let a = input_act.data();
    let wt = layer.weights.data();
    let mut r = vec![0.0f64; a.len()];
    for o in 0..g.oc {
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let rk = r_next.data()[(o * g.oh + oy) * g.ow + ox];
                if rk == 0.0 {
                    continue;
                }
                let mut best = (usize::MAX, f32::NEG_INFINITY);
                // strict '>' keeps the lowest index on ties
                for_each_edge(&g, wt, o, oy, ox, |j, w| {
                    let z = w * a[j];
                    if z > best.1 {
                        best = (j, z);
                    }
                });
                if best.1 <= 0.0 {
                    diag.nonpositive_argmax += 1;
                }
                r[best.0] += f64::from(rk);
            }
        }
    }
    Tensor::new(input_act.shape().to_vec(), r.into_iter().map(|v| v as f32).collect())
}

/// Propagates relevance for `action` through every layer of `net`.
pub fn propagate(
    net: &NetworkSpec,
    trace: &ForwardTrace,
    action: usize,
    rule: ConvRule,
) -> Result<LayerRelevance> {
    let n = net.layers.len();
    if trace.per_layer.len() != n + 1 {
        return Err(Error::Shape(format!(
            "trace has {} activations, network needs {}",
            trace.per_layer.len(),
            n + 1
        )));
    }
    let mut diag = Diagnostics::default();
    let mut per_layer = vec![Tensor::zeros(vec![1]); n + 1];
    let mut dropped_per_layer = vec![0.0; n];
    per_layer[n] = init_output_relevance(trace, action)?;

    for i in (0..n).rev() {
        let layer = &net.layers[i];
        let act = &trace.per_layer[i];
        let before = diag.dropped_relevance;
        let r_next = &per_layer[i + 1];
        let r = match layer.kind {
            LayerKind::Dense if act.shape().len() == 3 => {
                let flat = flatten(act, net.flatten_order)?;
                let r = propagate_dense_zplus(r_next, &flat, layer, &mut diag)?;
                unflatten(&r, act.shape(), net.flatten_order)?
            }
            LayerKind::Dense => propagate_dense_zplus(r_next, act, layer, &mut diag)?,
            LayerKind::Conv if i == 0 || rule == ConvRule::Zplus => {
                propagate_conv_zplus(r_next, act, layer, &mut diag)?
            }
            LayerKind::Conv => propagate_conv_argmax(r_next, act, layer, &mut diag)?,
        };
        dropped_per_layer[i] = diag.dropped_relevance - before;
        per_layer[i] = r;
    }
    Ok(LayerRelevance {
        per_layer,
        analyzed_action: action,
        dropped_per_layer,
        diagnostics: diag,
    })
}

/// Input-layer relevance map for `action`.
pub fn saliency(
    net: &NetworkSpec,
    trace: &ForwardTrace,
    action: usize,
    rule: ConvRule,
) -> Result<SaliencyMap> {
    let rel = propagate(net, trace, action, rule)?;
    let input = rel.per_layer.into_iter().next().unwrap();
    Ok(SaliencyMap {
        relevance: input.chw_to_hwc()?,
        analyzed_action: action,
        q_value: trace.q_values[action],
        rule,
        diagnostics: rel.diagnostics,
    })
}

// --- export ---------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SaliencySidecar {
    pub record: Option<usize>,
    pub action: usize,
    pub q_value: f32,
    pub rule: ConvRule,
    /// `[h, w, c]`
    pub shape: [usize; 3],
    pub diagnostics: Diagnostics,
    pub nonzero_entries: usize,
    pub entries_above_1pct: usize,
}

/// File stem used for a record's saliency files.
pub fn saliency_stem(record: usize) -> String {
    format!("sal_{record:06}")
}

/// Writes `<stem>.bin` (little-endian f32, `[h, w, c]`), `<stem>.json`, and
/// optionally one min-max normalized PNG per channel.
pub fn write_saliency(
    map: &SaliencyMap,
    dir: &Path,
    stem: &str,
    record: Option<usize>,
    pngs: bool,
) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let bin_path = dir.join(format!("{stem}.bin"));
    let bytes: Vec<u8> = map
        .relevance
        .data()
        .iter()
        .flat_map(|v| v.to_le_bytes())
        .collect();
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;

    let (h, w, c) = map.dims();
    let sidecar = SaliencySidecar {
        record,
        action: map.analyzed_action,
        q_value: map.q_value,
        rule: map.rule,
        shape: [h, w, c],
        diagnostics: map.diagnostics,
        nonzero_entries: map.nonzero_count(),
        entries_above_1pct: map.count_above(0.01),
    };
    let json_path = dir.join(format!("{stem}.json"));
    let text =
        serde_json::to_string_pretty(&sidecar).map_err(|e| Error::json(&json_path, e))?;
    fs::write(&json_path, text).map_err(|e| Error::io(&json_path, e))?;

    if pngs {
        for ch in 0..c {
            let plane = map.channel(ch);
            let (lo, hi) = plane
                .iter()
                .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            let span = hi - lo;
            let px: Vec<u8> = plane
                .iter()
                .map(|&v| {
                    if span > 0.0 {
                        ((v - lo) / span * 255.0).round() as u8
                    } else {
                        0
                    }
                })
                .collect();
            let img = GrayImage::from_raw(w as u32, h as u32, px)
                .ok_or_else(|| Error::Encode("saliency png buffer".into()))?;
            let png_path = dir.join(format!("{stem}_ch{ch}.png"));
            img.save(&png_path)
                .map_err(|e| Error::Encode(format!("{}: {e}", png_path.display())))?;
        }
    }
    Ok(())
}

/// Reads a saliency map written by [`write_saliency`].
pub fn read_saliency(dir: &Path, stem: &str) -> Result<(SaliencyMap, SaliencySidecar)> {
    let json_path = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
    let sidecar: SaliencySidecar =
        serde_json::from_str(&text).map_err(|e| Error::json(&json_path, e))?;
    let bin_path = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    let [h, w, c] = sidecar.shape;
    if bytes.len() != h * w * c * 4 {
        return Err(Error::Shape(format!(
            "{}: expected {} bytes, got {}",
            bin_path.display(),
            h * w * c * 4,
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    let map = SaliencyMap {
        relevance: Tensor::new(vec![h, w, c], data)?,
        analyzed_action: sidecar.action,
        q_value: sidecar.q_value,
        rule: sidecar.rule,
        diagnostics: sidecar.diagnostics,
    };
    Ok((map, sidecar))
}
