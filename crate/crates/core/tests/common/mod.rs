//! Independent reference implementations and fixtures shared by the
//! integration tests and the acceptance runner.
#![allow(dead_code)]

use std::collections::VecDeque;

use highlights_lrp::highlights::{HighlightsParams, ImportanceKind};
use highlights_lrp::net::{Activation, FlattenOrder, LayerKind, LayerSpec, NetworkSpec};
use highlights_lrp::streams::{Stream, StreamMeta, StreamRecord};
use highlights_lrp::tensor::Tensor;
use highlights_lrp::toyenv::{
    distill, rollout_with_net, solve, DistillConfig, FitReport, GridWorld, RewardSpec, STATE_LIMIT,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

// --- networks -----------------------------------------------------------------

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Random conv+dense network with input at most `max_hw`×`max_hw`×2.
pub fn random_net(rng: &mut ChaCha8Rng, max_hw: usize) -> NetworkSpec {
    let h = rng.random_range(4..=max_hw);
    let w = rng.random_range(4..=max_hw);
    let c = rng.random_range(1..=2);
    let mut layers = Vec::new();
    let (mut ch, mut hh, mut ww) = (c, h, w);
    let n_conv = rng.random_range(1..=2);
    for i in 0..n_conv {
        let k = rng.random_range(1..=3usize).min(hh).min(ww);
        let s = rng.random_range(1..=2usize);
        let oc = rng.random_range(1..=3);
        let wt = Tensor::new(vec![oc, ch, k, k], uniform(rng, oc * ch * k * k, -1.0, 1.0)).unwrap();
        let b = Tensor::new(vec![oc], uniform(rng, oc, -0.2, 0.2)).unwrap();
        layers.push(LayerSpec::conv(format!("conv{}", i + 1), wt, b, Activation::Relu, (s, s)).unwrap());
        hh = (hh - k) / s + 1;
        ww = (ww - k) / s + 1;
        ch = oc;
    }
    let mut n_in = ch * hh * ww;
    let n_dense = rng.random_range(1..=2);
    let actions = rng.random_range(2..=4);
    for i in 0..n_dense {
        let last = i + 1 == n_dense;
        let out = if last { actions } else { rng.random_range(2..=8) };
        let wt = Tensor::new(vec![out, n_in], uniform(rng, out * n_in, -1.0, 1.0)).unwrap();
        let b = Tensor::new(vec![out], uniform(rng, out, -0.2, 0.2)).unwrap();
        let act = if last { Activation::Identity } else { Activation::Relu };
        layers.push(LayerSpec::dense(format!("fc{}", i + 1), wt, b, act).unwrap());
        n_in = out;
    }
    let order = if rng.random_bool(0.5) { FlattenOrder::Chw } else { FlattenOrder::Hwc };
    let labels = (0..actions).map(|a| format!("a{a}")).collect();
    NetworkSpec::new(layers, (h, w, c), labels, order).unwrap()
}

pub fn random_state(rng: &mut ChaCha8Rng, net: &NetworkSpec) -> Vec<u8> {
    let (h, w, c) = net.input_shape;
    (0..h * w * c).map(|_| rng.random()).collect()
}

/// Explicit matrix of a conv layer over CHW-flattened input and output.
type Unrolled = (Vec<Vec<f64>>, Vec<f64>, (usize, usize, usize));

fn unroll_conv(layer: &LayerSpec, (c, h, w): (usize, usize, usize)) -> Unrolled {
    let s = layer.weights.shape();
    let (oc, kh, kw) = (s[0], s[2], s[3]);
    let (sy, sx) = layer.stride;
    let oh = (h - kh) / sy + 1;
    let ow = (w - kw) / sx + 1;
    let wt = layer.weights.data();
    let mut m = vec![vec![0.0; c * h * w]; oc * oh * ow];
    let mut b = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        for y in 0..oh {
            for x in 0..ow {
                let row = (o * oh + y) * ow + x;
                b[row] = f64::from(layer.bias.data()[o]);
                for ci in 0..c {
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let col = (ci * h + y * sy + ky) * w + x * sx + kx;
                            m[row][col] = f64::from(wt[((o * c + ci) * kh + ky) * kw + kx]);
                        }
                    }
                }
            }
        }
    }
    (m, b, (oc, oh, ow))
}

/// Permutation taking CHW flat index to the network's flatten position.
fn flatten_perm(order: FlattenOrder, (c, h, w): (usize, usize, usize)) -> Vec<usize> {
    let mut p = vec![0; c * h * w];
    for ci in 0..c {
        for y in 0..h {
            for x in 0..w {
                let chw = (ci * h + y) * w + x;
                p[chw] = match order {
                    FlattenOrder::Chw => chw,
                    FlattenOrder::Hwc => (y * w + x) * c + ci,
                };
            }
        }
    }
    p
}

/// z+ relevance on the conv-unrolled network, computed in f64 with its own
/// forward pass. Returns the input map in `[h, w, c]` order and the output Q.
pub fn unrolled_zplus(net: &NetworkSpec, state: &[u8], action: usize) -> (Vec<f64>, f64) {
    let (h, w, c) = net.input_shape;
    // input in CHW
    let mut x = vec![0.0; c * h * w];
    for y in 0..h {
        for xx in 0..w {
            for ci in 0..c {
                x[(ci * h + y) * w + xx] = f64::from(state[(y * w + xx) * c + ci]) / 255.0;
            }
        }
    }
    let mut mats: Vec<(Vec<Vec<f64>>, Vec<f64>, bool)> = Vec::new();
    let mut shape = (c, h, w);
    let mut perm_applied = false;
    for layer in &net.layers {
        match layer.kind {
            LayerKind::Conv => {
                let (m, b, s) = unroll_conv(layer, shape);
                mats.push((m, b, layer.activation == Activation::Relu));
                shape = s;
            }
            LayerKind::Dense => {
                let n_in = layer.in_dim();
                let wt = layer.weights.data();
                let mut m: Vec<Vec<f64>> = wt.chunks(n_in).map(|r| r.iter().map(|&v| f64::from(v)).collect()).collect();
                if !perm_applied {
                    // columns indexed by flatten position; reorder to CHW
                    let p = flatten_perm(net.flatten_order, shape);
                    for row in &mut m {
                        *row = (0..n_in).map(|chw| row[p[chw]]).collect();
                    }
                    perm_applied = true;
                }
                let b = layer.bias.data().iter().map(|&v| f64::from(v)).collect();
                mats.push((m, b, layer.activation == Activation::Relu));
            }
        }
    }
    let mut acts = vec![x];
    for (m, b, relu) in &mats {
        let a = acts.last().unwrap();
        let z: Vec<f64> = m
            .iter()
            .zip(b)
            .map(|(row, bb)| {
                let v = row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>() + bb;
                if *relu {
                    v.max(0.0)
                } else {
                    v
                }
            })
            .collect();
        acts.push(z);
    }
    let q = acts.last().unwrap()[action];
    let mut r = vec![0.0; acts.last().unwrap().len()];
    r[action] = q;
    for (li, (m, _, _)) in mats.iter().enumerate().rev() {
        let a = &acts[li];
        let mut rin = vec![0.0; a.len()];
        for (k, row) in m.iter().enumerate() {
            if r[k] == 0.0 {
                continue;
            }
            let den: f64 = row.iter().zip(a).map(|(w, v)| (w * v).max(0.0)).sum();
            if den <= 0.0 {
                continue;
            }
            for (j, (w, v)) in row.iter().zip(a).enumerate() {
                rin[j] += (w * v).max(0.0) / den * r[k];
            }
        }
        r = rin;
    }
    let mut hwc = vec![0.0; r.len()];
    for ci in 0..c {
        for y in 0..h {
            for xx in 0..w {
                hwc[(y * w + xx) * c + ci] = r[(ci * h + y) * w + xx];
            }
        }
    }
    (hwc, q)
}

// --- streams ------------------------------------------------------------------

pub fn tiny_meta(state_len: usize, actions: usize) -> StreamMeta {
    StreamMeta {
        state_dims: [1, state_len, 1],
        action_labels: (0..actions).map(|a| format!("a{a}")).collect(),
        frame_dims: [1, 1],
        agent: None,
    }
}

/// Random stream with 1-4 episodes and coarse Q-values so importance ties occur.
pub fn random_stream(rng: &mut ChaCha8Rng, max_len: usize, state_len: usize) -> Stream {
    let n = rng.random_range(1..=max_len);
    let actions = rng.random_range(2..=4);
    let mut s = Stream::new(tiny_meta(state_len, actions));
    let n_eps = rng.random_range(1..=4usize).min(n);
    let mut cuts: Vec<usize> = (0..n_eps - 1).map(|_| rng.random_range(1..n)).collect();
    cuts.sort_unstable();
    cuts.dedup();
    let levels = rng.random_range(3..=12);
    let state_levels = rng.random_range(2..=6u32);
    for i in 0..n {
        if cuts.contains(&i) {
            s.begin_episode();
        }
        let q: Vec<f32> = (0..actions).map(|_| rng.random_range(0..levels) as f32 * 0.5).collect();
        s.push(StreamRecord {
            state: (0..state_len).map(|_| (rng.random_range(0..state_levels) * 40) as u8).collect(),
            q_values: q,
            action: rng.random_range(0..actions) as u8,
            frames: vec![0; 12],
            reward: None,
        })
        .unwrap();
    }
    s
}

pub fn imp_of(kind: ImportanceKind, q: &[f32]) -> f64 {
    let mut v: Vec<f64> = q.iter().map(|&x| f64::from(x)).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    match kind {
        ImportanceKind::Minmax => v[0] - v[v.len() - 1],
        ImportanceKind::Second => v[0] - v[1],
    }
}

/// (base, importance, indices) in output order.
pub type RefTrajectory = (usize, f64, Vec<usize>);

/// Step-by-step online selection using the interval counter `c` to decide
/// when the latest admitted trajectory's trailing context is complete.
/// Requires `1 <= states_after < interval_size`.
pub fn reference_online(stream: &Stream, p: &HighlightsParams) -> Vec<RefTrajectory> {
    assert!(p.states_after >= 1 && p.states_after < p.interval_size);
    // summary in admission order: (base, importance, trajectory or None)
    let mut summary: Vec<(usize, f64, Option<Vec<usize>>)> = Vec::new();
    let bounds = stream.episode_boundaries().to_vec();
    let mut eps = Vec::new();
    for (j, &b) in bounds.iter().enumerate() {
        eps.push(b..bounds.get(j + 1).copied().unwrap_or(stream.len()));
    }
    for ep in eps {
        let mut t: VecDeque<usize> = VecDeque::new();
        let mut c: usize = 0;
        let mut latest: Option<usize> = None;
        for s in ep {
            if t.len() == p.l {
                t.pop_front();
            }
            t.push_back(s);
            c = c.saturating_sub(1);
            let imp = imp_of(p.importance, stream.record(s).q_values);
            if c > 0 && p.interval_size - c == p.states_after {
                let base = latest.unwrap();
                if let Some(entry) = summary.iter_mut().find(|e| e.0 == base) {
                    entry.2 = Some(t.iter().copied().collect());
                }
            }
            if c == 0 {
                let admit = if summary.len() < p.k {
                    true
                } else {
                    let mut min_pos = 0;
                    for (pos, e) in summary.iter().enumerate() {
                        if e.1 < summary[min_pos].1 {
                            min_pos = pos;
                        }
                    }
                    if imp > summary[min_pos].1 {
                        summary.remove(min_pos);
                        true
                    } else {
                        false
                    }
                };
                if admit {
                    summary.push((s, imp, None));
                    latest = Some(s);
                    c = p.interval_size;
                }
            }
        }
        for e in summary.iter_mut().filter(|e| e.2.is_none()) {
            e.2 = Some(t.iter().copied().collect());
        }
    }
    let mut out: Vec<RefTrajectory> = summary.into_iter().map(|(b, i, t)| (b, i, t.unwrap())).collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    out
}

pub fn random_online_params(rng: &mut ChaCha8Rng) -> HighlightsParams {
    let interval_size = rng.random_range(2..=20);
    let l = rng.random_range(2..=15);
    let states_after = rng.random_range(1..interval_size.min(l));
    HighlightsParams {
        k: rng.random_range(1..=6),
        l,
        interval_size,
        states_after,
        num_simulations: None,
        importance: if rng.random_bool(0.5) {
            ImportanceKind::Second
        } else {
            ImportanceKind::Minmax
        },
    }
}

pub fn euclid(a: &[u8], b: &[u8]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Records within `before`/`after` of `base`, clipped to the episode.
pub fn window_in_episode(stream: &Stream, base: usize, before: usize, after: usize) -> Vec<usize> {
    let b = stream.episode_boundaries();
    let start = *b.iter().filter(|&&x| x <= base).max().unwrap();
    let end = b.iter().copied().find(|&x| x > base).unwrap_or(stream.len());
    (base.saturating_sub(before).max(start)..(base + after + 1).min(end)).collect()
}

/// Checks admitted bases pairwise and the dominance property by scanning
/// every state. Returns a description of the first violation.
pub fn check_offline(stream: &Stream, p: &HighlightsParams, threshold: f64, bases: &[usize]) -> Result<(), String> {
    let imp: Vec<f64> = stream.records().map(|r| imp_of(p.importance, r.q_values)).collect();
    for (i, &a) in bases.iter().enumerate() {
        for &b in &bases[i + 1..] {
            let d = euclid(stream.record(a).state, stream.record(b).state);
            if d <= threshold {
                return Err(format!("admitted {a} and {b} at distance {d} <= {threshold}"));
            }
        }
    }
    let before = (p.l - p.states_after - 1).max(p.interval_size);
    let after = p.states_after.max(p.interval_size);
    // precedence in the importance scan
    let precedes = |x: usize, y: usize| imp[x] > imp[y] || (imp[x] == imp[y] && x < y);
    let last = bases.iter().copied().reduce(|a, b| if precedes(a, b) { b } else { a });
    for (j, &imp_j) in imp.iter().enumerate() {
        if bases.contains(&j) {
            continue;
        }
        let contested = match last {
            Some(last) if bases.len() == p.k => precedes(j, last),
            _ => true,
        };
        if !contested {
            continue;
        }
        let excluded = bases.iter().filter(|&&b| precedes(b, j)).any(|&b| {
            window_in_episode(stream, b, before, after)
                .into_iter()
                .any(|m| euclid(stream.record(j).state, stream.record(m).state) <= threshold)
        });
        if !excluded {
            return Err(format!("state {j} (importance {imp_j}) rejected without a similar member"));
        }
    }
    Ok(())
}

/// Pairwise distances over `sample` sorted, then the percentile by linear
/// interpolation between closest ranks.
pub fn percentile_oracle(stream: &Stream, sample: &[usize], pct: f64) -> f64 {
    let mut d = Vec::new();
    for i in 0..sample.len() {
        for j in i + 1..sample.len() {
            d.push(euclid(stream.record(sample[i]).state, stream.record(sample[j]).state));
        }
    }
    d.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = pct / 100.0 * (d.len() - 1) as f64;
    let lo = pos.floor() as usize;
    if lo + 1 >= d.len() {
        return d[lo];
    }
    d[lo] + (pos - lo as f64) * (d[lo + 1] - d[lo])
}

// --- metrics ------------------------------------------------------------------

fn naive_pearson(x: &[f64], y: &[f64], equal: bool) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return if vx == 0.0 && vy == 0.0 && equal { 1.0 } else { 0.0 };
    }
    cov / (vx.sqrt() * vy.sqrt())
}

/// Rank = count below + (count equal + 1) / 2.
fn naive_ranks(v: &[f32]) -> Vec<f64> {
    v.iter()
        .map(|&x| {
            let below = v.iter().filter(|&&y| y < x).count() as f64;
            let equal = v.iter().filter(|&&y| y == x).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

pub fn naive_spearman(a: &[f32], b: &[f32]) -> f64 {
    naive_pearson(&naive_ranks(a), &naive_ranks(b), a == b)
}

/// Direct 2-D Gaussian-window SSIM averaged over valid window positions.
pub fn naive_ssim(a: &[f32], b: &[f32], (h, w): (usize, usize)) -> f64 {
    let n = 11;
    let sigma: f64 = 1.5;
    let mut g = vec![vec![0.0; n]; n];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0;
    for y0 in 0..=h - n {
        for x0 in 0..=w - n {
            let (mut mx, mut my) = (0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = g[i][j] / total;
                    mx += k * f64::from(a[(y0 + i) * w + x0 + j]);
                    my += k * f64::from(b[(y0 + i) * w + x0 + j]);
                }
            }
            let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
            for i in 0..n {
                for j in 0..n {
                    let k = g[i][j] / total;
                    let p = f64::from(a[(y0 + i) * w + x0 + j]) - mx;
                    let q = f64::from(b[(y0 + i) * w + x0 + j]) - my;
                    vx += k * p * p;
                    vy += k * q * q;
                    cxy += k * p * q;
                }
            }
            sum += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    sum / count as f64
}

pub fn naive_hog(a: &[f32], (h, w): (usize, usize)) -> Vec<f64> {
    let (cell, bins) = (14usize, 9usize);
    let (cy, cx) = (h / cell, w / cell);
    let mut hist = vec![0.0; cy * cx * bins];
    let at = |y: isize, x: isize| {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        f64::from(a[y * w + x])
    };
    for y in 0..(cy * cell) as isize {
        for x in 0..(cx * cell) as isize {
            let gx = at(y, x + 1) - at(y, x - 1);
            let gy = at(y + 1, x) - at(y - 1, x);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let theta = gy.atan2(gx).rem_euclid(std::f64::consts::PI);
            let mut bin = (theta / (std::f64::consts::PI / bins as f64)).floor() as usize;
            if bin >= bins {
                bin = 0;
            }
            let c = (y as usize / cell) * cx + x as usize / cell;
            hist[c * bins + bin] += mag;
        }
    }
    hist
}

pub fn naive_hog_pearson(a: &[f32], b: &[f32], dims: (usize, usize)) -> f64 {
    let (ha, hb) = (naive_hog(a, dims), naive_hog(b, dims));
    naive_pearson(&ha, &hb, ha == hb)
}

// --- toy fixture ----------------------------------------------------------------

pub struct Toy {
    pub env: GridWorld,
    pub net: NetworkSpec,
    pub stream: Stream,
    pub fit: FitReport,
}

/// Default gridworld, solved, distilled, and rolled out with the network.
pub fn toy(seed: u64, steps: usize) -> Toy {
    let env = GridWorld::default_env(RewardSpec::regular());
    let e = env.enumerate(STATE_LIMIT).unwrap();
    let policy = solve(&e.mdp, 0.99, 1e-9).unwrap();
    let (net, fit) = distill(&env, &e, &policy, &DistillConfig::default()).unwrap();
    let (stream, _) = rollout_with_net(&env, &e, &net, seed, steps).unwrap();
    Toy { env, net, stream, fit }
}
