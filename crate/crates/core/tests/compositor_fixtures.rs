use std::collections::HashMap;

use highlights_lrp::compositor::{
    apply_mask, deflicker, expected_frame_count, interpolate_saliency, normalize_saliency, overlay,
    render_summary, write_sequence, OverlayConfig,
};
use highlights_lrp::highlights::{HighlightsParams, Summary, SummaryMode, SummaryTrajectory};
use highlights_lrp::lrp::{ConvRule, Diagnostics, SaliencyMap};
use highlights_lrp::streams::{Stream, StreamMeta, StreamRecord};
use highlights_lrp::tensor::Tensor;
use image::{Rgb, RgbImage};

fn img(w: u32, h: u32, f: impl Fn(u32, u32) -> [u8; 3]) -> RgbImage {
    RgbImage::from_fn(w, h, |x, y| Rgb(f(x, y)))
}

fn map(h: usize, w: usize, c: usize, f: impl Fn(usize) -> f32) -> SaliencyMap {
    SaliencyMap {
        relevance: Tensor::new(vec![h, w, c], (0..h * w * c).map(f).collect()).unwrap(),
        analyzed_action: 0,
        q_value: 1.0,
        rule: ConvRule::Argmax,
        diagnostics: Diagnostics::default(),
    }
}

#[test]
fn deflicker_is_channelwise_max() {
    let a = img(3, 2, |x, y| [x as u8 * 50, 10, y as u8 * 90]);
    let b = img(3, 2, |x, _| [60, x as u8 * 20, 40]);
    let d = deflicker(&a, &b).unwrap();
    assert_eq!(d.get_pixel(0, 0).0, [60, 10, 40]);
    assert_eq!(d.get_pixel(2, 1).0, [100, 40, 90]);
    // first frame of a trajectory uses itself
    assert_eq!(deflicker(&a, &a).unwrap(), a);
}

#[test]
fn normalization_spans_unit_interval() {
    let m = normalize_saliency(&map(2, 2, 2, |i| i as f32 - 2.0));
    assert_eq!(m.relevance.data(), &[0.0, 1.0 / 7.0, 2.0 / 7.0, 3.0 / 7.0, 4.0 / 7.0, 5.0 / 7.0, 6.0 / 7.0, 1.0]);
    let flat = normalize_saliency(&map(2, 2, 1, |_| 3.0));
    assert!(flat.relevance.data().iter().all(|&v| v == 0.0));
}

#[test]
fn interpolation_endpoints_are_exact() {
    let p = vec![0.1f32, 0.7, 0.3];
    let n = vec![0.9f32, 0.2, 0.3];
    assert_eq!(interpolate_saliency(&p, &n, 4).unwrap(), n);
    let mid = interpolate_saliency(&p, &n, 2).unwrap();
    assert_eq!(mid, vec![0.5 * 0.1 + 0.5 * 0.9, 0.5 * 0.7 + 0.5 * 0.2, 0.3]);
    assert!(interpolate_saliency(&p, &n, 0).is_err());
}

#[test]
fn overlay_clamps_green_and_masks_bottom() {
    let frame = img(4, 4, |_, _| [10, 200, 30]);
    let cfg = OverlayConfig {
        mask_fraction: 0.25,
        ..OverlayConfig::default()
    };
    // 4x4 saliency at the frame's resolution: identity resampling
    let sal: Vec<f32> = (0..16).map(|i| if i < 4 { 1.0 } else { 0.1 }).collect();
    let out = overlay(&frame, &sal, (4, 4), &cfg).unwrap();
    assert_eq!(out.get_pixel(0, 0).0, [10, 255, 30]);
    assert_eq!(out.get_pixel(1, 1).0, [10, 200 + 26, 30]);
    for x in 0..4 {
        assert_eq!(out.get_pixel(x, 3).0, [0, 0, 0]);
    }
    let mut plain = frame.clone();
    apply_mask(&mut plain, 0.5);
    assert_eq!(plain.get_pixel(0, 1).0, [10, 200, 30]);
    assert_eq!(plain.get_pixel(0, 2).0, [0, 0, 0]);
}

fn stream_with_frames(n: usize, fh: usize, fw: usize) -> Stream {
    let mut s = Stream::new(StreamMeta {
        state_dims: [2, 2, 4],
        action_labels: vec!["a".into(), "b".into()],
        frame_dims: [fh, fw],
        agent: None,
    });
    for r in 0..n {
        let frames = (0..4 * fh * fw * 3).map(|i| ((r * 7 + i) % 251) as u8).collect();
        s.push(StreamRecord {
            state: vec![0; 16],
            q_values: vec![1.0, 0.0],
            action: 0,
            frames,
            reward: None,
        })
        .unwrap();
    }
    s
}

fn summary_of(trajs: Vec<Vec<usize>>) -> Summary {
    Summary {
        mode: SummaryMode::First,
        params: HighlightsParams::offline_default(),
        div: None,
        threshold: None,
        trajectories: trajs
            .into_iter()
            .map(|idx| SummaryTrajectory {
                base_index: idx[0],
                importance: 1.0,
                actions: vec![0; idx.len()],
                indices: idx,
            })
            .collect(),
    }
}

#[test]
fn study_default_frame_count() {
    let cfg = OverlayConfig::default();
    assert_eq!(expected_frame_count(&[21; 5], &cfg), 5 * 84 + 4 * 30);
    let stream = stream_with_frames(120, 6, 5);
    let summary = summary_of((0..5).map(|t| (t * 22..t * 22 + 21).collect()).collect());
    let seq = render_summary(&stream, &summary, None, &cfg).unwrap();
    assert_eq!(seq.frames.len(), 540);
    assert_eq!(seq.annotations.iter().filter(|a| a.separator).count(), 120);
}

#[test]
fn first_frames_use_own_saliency_and_previous_raw_frame() {
    let stream = stream_with_frames(3, 2, 2);
    let summary = summary_of(vec![vec![0, 1]]);
    let mut maps = HashMap::new();
    maps.insert(0, map(2, 2, 4, |i| if i % 4 == 3 && i < 4 { 1.0 } else { 0.0 }));
    maps.insert(1, map(2, 2, 4, |i| if i % 4 == 3 && i >= 12 { 1.0 } else { 0.0 }));
    let cfg = OverlayConfig {
        mask_fraction: 0.0,
        ..OverlayConfig::default()
    };
    let seq = render_summary(&stream, &summary, Some(&maps), &cfg).unwrap();
    assert_eq!(seq.frames.len(), 8);
    let raw = |r: usize, i: usize| {
        let f = stream.record(r).frame(i).to_vec();
        RgbImage::from_raw(2, 2, f).unwrap()
    };
    // frame 1 of record 0: no predecessor, saliency is record 0's own map
    let s0 = vec![1.0, 0.0, 0.0, 0.0];
    assert_eq!(seq.frames[0], overlay(&raw(0, 0), &s0, (2, 2), &cfg).unwrap());
    // frame 2 of record 1 blends toward record 1's map and deflickers with frame 1
    let s1 = vec![0.0, 0.0, 0.0, 1.0];
    let blend = interpolate_saliency(&s0, &s1, 2).unwrap();
    let df = deflicker(&raw(1, 1), &raw(1, 0)).unwrap();
    assert_eq!(seq.frames[5], overlay(&df, &blend, (2, 2), &cfg).unwrap());
    assert_eq!(seq.frames[7], overlay(&deflicker(&raw(1, 3), &raw(1, 2)).unwrap(), &s1, (2, 2), &cfg).unwrap());
}

#[test]
fn written_gif_decodes_with_expected_frames() {
    let stream = stream_with_frames(10, 8, 8);
    let summary = summary_of(vec![vec![0, 1, 2], vec![5, 6]]);
    let cfg = OverlayConfig {
        fps: 10,
        separator_seconds: 0.3,
        ..OverlayConfig::default()
    };
    let seq = render_summary(&stream, &summary, None, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_sequence(&seq, dir.path(), &cfg).unwrap();
    assert_eq!(std::fs::read_dir(dir.path().join("frames")).unwrap().count(), 23);
    let mut opts = gif::DecodeOptions::new();
    opts.set_color_output(gif::ColorOutput::RGBA);
    let mut dec = opts.read_info(std::fs::File::open(dir.path().join("summary.gif")).unwrap()).unwrap();
    let mut n = 0;
    while let Some(f) = dec.read_next_frame().unwrap() {
        assert_eq!(f.delay, 10);
        n += 1;
    }
    assert_eq!(n, 23);
}
