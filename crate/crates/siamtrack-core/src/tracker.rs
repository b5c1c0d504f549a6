//! Online inference: crop geometry, hanning-windowed peak selection, and
//! bounding-box decoding with patch-to-frame coordinate mapping.
//!
//! The context rule sizes the crop square as `sqrt((w+p)(h+p))` with
//! `p = (w+h)/2`; the instance crop scales that side by 255/127 so the
//! target keeps the same relative extent in both patches, which makes the
//! two crop scales equal.

use crate::backbone::{EXEMPLAR_SIZE, INSTANCE_SIZE};
use crate::error::{Error, Result};
use crate::labels::{self, BBox, HeadOutput};
use crate::model::{Geometry, TrackModel};
use crate::tensor::Tensor;

/// Blend weight of the hanning window in the final score map.
pub const DEFAULT_HANNING_GAMMA: f64 = 0.3;

/// 8-bit RGB frame, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame", "zero dimension"));
        }
        if pixels.len() != 3 * width * height {
            return Err(Error::invalid(
                "frame",
                format!(
                    "pixel buffer has {} bytes, {width}x{height} RGB needs {}",
                    pixels.len(),
                    3 * width * height
                ),
            ));
        }
        Ok(Frame {
            width,
            height,
            pixels,
        })
    }

    fn channel_at(&self, c: usize, x: i64, y: i64) -> Option<f64> {
        if x < 0 || y < 0 || x >= self.width as i64 || y >= self.height as i64 {
            return None;
        }
        let idx = 3 * (y as usize * self.width + x as usize) + c;
        Some(self.pixels[idx] as f64 / 255.0)
    }

    fn mean_rgb(&self) -> [f64; 3] {
        let mut sums = [0.0f64; 3];
        for px in self.pixels.chunks_exact(3) {
            sums[0] += px[0] as f64;
            sums[1] += px[1] as f64;
            sums[2] += px[2] as f64;
        }
        let n = (self.width * self.height) as f64 * 255.0;
        [sums[0] / n, sums[1] / n, sums[2] / n]
    }
}

/// Side of the context square in frame pixels for a target box, before the
/// branch scaling.
pub fn context_side(bbox: &BBox) -> f64 {
    let pad = (bbox.w + bbox.h) / 2.0;
    ((bbox.w + pad) * (bbox.h + pad)).sqrt()
}

/// Crop geometry for target size `a`: square side in frame pixels and the
/// patch-pixels-per-frame-pixel scale.
fn crop_geometry(bbox: &BBox, a: usize) -> (f64, f64) {
    let side = context_side(bbox) * a as f64 / EXEMPLAR_SIZE as f64;
    (side, a as f64 / side)
}

/// Crops and bilinearly resamples a square context region around `bbox`
/// into an `a x a` patch in [0, 1], mean-filling beyond the frame border.
/// Returns the patch and the crop scale (patch pixels per frame pixel).
pub fn crop_region(frame: &Frame, bbox: &BBox, a: usize) -> Result<(Tensor, f64)> {
    if bbox.w <= 0.0 || bbox.h <= 0.0 {
        return Err(Error::invalid("crop bbox", "degenerate size"));
    }
    let (side, scale) = crop_geometry(bbox, a);
    let origin_x = bbox.cx - side / 2.0;
    let origin_y = bbox.cy - side / 2.0;
    let mean = frame.mean_rgb();

    let mut data = vec![0.0; 3 * a * a];
    for c in 0..3 {
        let plane = &mut data[c * a * a..(c + 1) * a * a];
        for py in 0..a {
            let fy = origin_y + (py as f64 + 0.5) / scale;
            let v = fy - 0.5;
            let y0 = v.floor();
            let wy = v - y0;
            for px in 0..a {
                let fx = origin_x + (px as f64 + 0.5) / scale;
                let u = fx - 0.5;
                let x0 = u.floor();
                let wx = u - x0;
                let sample = |dx: i64, dy: i64| {
                    frame
                        .channel_at(c, x0 as i64 + dx, y0 as i64 + dy)
                        .unwrap_or(mean[c])
                };
                let top = sample(0, 0) * (1.0 - wx) + sample(1, 0) * wx;
                let bot = sample(0, 1) * (1.0 - wx) + sample(1, 1) * wx;
                plane[py * a + px] = top * (1.0 - wy) + bot * wy;
            }
        }
    }
    Ok((Tensor::new(vec![3, a, a], data)?, scale))
}

/// Length-`m` raised cosine with endpoints 0 and center 1.
fn hanning(m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![1.0];
    }
    (0..m)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / (m - 1) as f64).cos()))
        .collect()
}

/// Convex blend of a score map with the separable hanning prior.
pub fn apply_hanning(score: &Tensor, gamma: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::invalid("hanning gamma", format!("{gamma} outside [0, 1]")));
    }
    let s = score.shape();
    if s.len() != 3 || s[0] != 1 || s[1] != s[2] {
        return Err(Error::shape(
            "apply_hanning",
            format!("expected [1,M,M] score, got {s:?}"),
        ));
    }
    let m = s[1];
    let win = hanning(m);
    let mut out = Vec::with_capacity(m * m);
    for y in 0..m {
        for x in 0..m {
            out.push((1.0 - gamma) * score.at(0, y, x) + gamma * win[y] * win[x]);
        }
    }
    Tensor::new(vec![1, m, m], out)
}

/// Row-major argmax (smallest y, then smallest x on ties).
fn argmax_cell(score: &Tensor) -> (usize, usize) {
    let m = score.shape()[1];
    let mut best = f64::NEG_INFINITY;
    let mut cell = (0, 0);
    for y in 0..m {
        for x in 0..m {
            let v = score.at(0, y, x);
            if v > best {
                best = v;
                cell = (x, y);
            }
        }
    }
    cell
}

pub struct Decoded {
    pub bbox: BBox,
    /// True when a non-positive size was clamped to the 2-pixel floor.
    pub size_clamped: bool,
    pub peak_cell: (usize, usize),
}

/// Reads the windowed peak, applies the sub-stride offset and exponential
/// size at that cell, and maps the result to frame pixels.
pub fn decode(
    head: &HeadOutput,
    stride: usize,
    crop_scale: f64,
    crop_origin: (f64, f64),
) -> Result<Decoded> {
    let (px, py) = argmax_cell(&head.score);
    let dx = head.offset.at(0, py, px);
    let dy = head.offset.at(1, py, px);
    let s = stride as f64;
    let center_patch = (s * (px as f64 + dx), s * (py as f64 + dy));
    // Exponent capped so a wild early prediction cannot overflow to inf.
    let w_patch = head.size.at(0, py, px).min(40.0).exp();
    let h_patch = head.size.at(1, py, px).min(40.0).exp();

    let cx = crop_origin.0 + center_patch.0 / crop_scale;
    let cy = crop_origin.1 + center_patch.1 / crop_scale;
    let mut w = w_patch / crop_scale;
    let mut h = h_patch / crop_scale;
    let mut size_clamped = false;
    if w <= 0.0 {
        w = 2.0;
        size_clamped = true;
    }
    if h <= 0.0 {
        h = 2.0;
        size_clamped = true;
    }
    Ok(Decoded {
        bbox: BBox::new(cx, cy, w, h)?,
        size_clamped,
        peak_cell: (px, py),
    })
}

/// Per-sequence tracking state. The exemplar features are computed once at
/// initialization and never updated.
pub struct TrackerState {
    exemplar_features: Option<Tensor>,
    current: BBox,
    geometry: Geometry,
    gamma: f64,
    instance_forwards: u64,
    size_clamp_warnings: u64,
}

impl TrackerState {
    /// Crops the exemplar, freezes its features, and starts tracking from
    /// `bbox`.
    pub fn init(model: &TrackModel, frame: &Frame, bbox: BBox, gamma: f64) -> Result<Self> {
        let geometry = model.geometry()?;
        let (patch, _) = crop_region(frame, &bbox, EXEMPLAR_SIZE)?;
        let features = model.forward_features(&patch)?;
        if features.shape()[1] != geometry.exemplar_feat {
            return Err(Error::shape(
                "tracker init",
                format!(
                    "exemplar features are {}x{}, analysis predicts {}",
                    features.shape()[1],
                    features.shape()[2],
                    geometry.exemplar_feat
                ),
            ));
        }
        Ok(TrackerState {
            exemplar_features: Some(features),
            current: bbox,
            geometry,
            gamma,
            instance_forwards: 0,
            size_clamp_warnings: 0,
        })
    }

    /// State for groundtruth-driven (oracle) tracking; no model involved.
    pub fn init_oracle(bbox: BBox, geometry: Geometry, gamma: f64) -> Self {
        TrackerState {
            exemplar_features: None,
            current: bbox,
            geometry,
            gamma,
            instance_forwards: 0,
            size_clamp_warnings: 0,
        }
    }

    pub fn current_bbox(&self) -> BBox {
        self.current
    }

    pub fn exemplar_features(&self) -> Option<&Tensor> {
        self.exemplar_features.as_ref()
    }

    pub fn instance_forwards(&self) -> u64 {
        self.instance_forwards
    }

    pub fn size_clamp_warnings(&self) -> u64 {
        self.size_clamp_warnings
    }

    /// Frame coordinates of map cell (0, 0) and the crop scale for the
    /// instance crop around the current estimate.
    fn instance_frame(&self) -> (f64, f64, (f64, f64)) {
        let (side, scale) = crop_geometry(&self.current, INSTANCE_SIZE);
        let origin = (self.current.cx - side / 2.0, self.current.cy - side / 2.0);
        let off0 = self.geometry.map_origin_in_patch(INSTANCE_SIZE);
        (side, scale, (origin.0 + off0 / scale, origin.1 + off0 / scale))
    }

    fn finish(&mut self, head: &HeadOutput, scale: f64, origin: (f64, f64)) -> Result<BBox> {
        let windowed = apply_hanning(&head.score, self.gamma)?;
        let windowed_head = HeadOutput {
            score: windowed,
            offset: head.offset.clone(),
            size: head.size.clone(),
        };
        let decoded = decode(&windowed_head, self.geometry.stride, scale, origin)?;
        if decoded.size_clamped {
            self.size_clamp_warnings += 1;
            eprintln!(
                "warning: decoded size was non-positive, clamped to the 2-pixel floor (frame forward {})",
                self.instance_forwards
            );
        }
        self.current = decoded.bbox;
        Ok(decoded.bbox)
    }

    /// One tracking step: exactly one network inference on the instance
    /// crop, then windowing, decoding and state update.
    pub fn track_step(&mut self, model: &TrackModel, frame: &Frame) -> Result<BBox> {
        let exemplar = self.exemplar_features.as_ref().ok_or_else(|| {
            Error::invalid("tracker state", "initialized without a model; use the oracle step")
        })?;
        let (_, scale, map_origin) = self.instance_frame();
        let (patch, patch_scale) = crop_region(frame, &self.current, INSTANCE_SIZE)?;
        debug_assert_eq!(scale, patch_scale);
        let head = model.infer(exemplar, &patch)?;
        self.instance_forwards += 1;
        self.finish(&head, scale, map_origin)
    }

    /// Oracle step: fabricates head maps from the groundtruth box and runs
    /// the identical windowing/decoding path, isolating crop geometry and
    /// decoding from model quality.
    pub fn track_step_oracle(&mut self, truth: &BBox) -> Result<BBox> {
        let (_, scale, map_origin) = self.instance_frame();
        let m = self.geometry.map_size;
        let s = self.geometry.stride;
        let coverage = (m * s) as f64;
        let clamp = |v: f64| v.clamp(0.0, coverage - 1e-6);
        let center_map = (
            clamp((truth.cx - map_origin.0) * scale),
            clamp((truth.cy - map_origin.1) * scale),
        );
        let box_map = BBox::new(center_map.0, center_map.1, truth.w * scale, truth.h * scale)?;
        let targets = labels::head_targets(&box_map, m, s)?;
        let mut offset = Tensor::zeros(vec![2, m, m]);
        let mut size = Tensor::zeros(vec![2, m, m]);
        for i in 0..m * m {
            offset.data_mut()[i] = targets.delta.0;
            offset.data_mut()[m * m + i] = targets.delta.1;
            size.data_mut()[i] = targets.size_log.0;
            size.data_mut()[m * m + i] = targets.size_log.1;
        }
        let head = HeadOutput {
            score: targets.score_label,
            offset,
            size,
        };
        self.finish(&head, scale, map_origin)
    }
}

/// Tracks a whole annotated sequence: initializes from the first truth box
/// and returns one box per frame (frame 0 is the initialization itself).
pub fn track_sequence(
    model: &TrackModel,
    seq: &crate::synth::AnnotatedSequence,
    gamma: f64,
) -> Result<Vec<BBox>> {
    let mut state = TrackerState::init(model, &seq.frames[0], seq.truth[0], gamma)?;
    let mut result = Vec::with_capacity(seq.frames.len());
    result.push(seq.truth[0]);
    for frame in &seq.frames[1..] {
        result.push(state.track_step(model, frame)?);
    }
    Ok(result)
}

/// Oracle variant of [`track_sequence`]: per-frame head maps are fabricated
/// from the groundtruth, exercising crop geometry, windowing and decoding.
pub fn track_sequence_oracle(
    geometry: Geometry,
    seq: &crate::synth::AnnotatedSequence,
    gamma: f64,
) -> Result<Vec<BBox>> {
    let mut state = TrackerState::init_oracle(seq.truth[0], geometry, gamma);
    let mut result = Vec::with_capacity(seq.frames.len());
    result.push(seq.truth[0]);
    for truth in &seq.truth[1..] {
        result.push(state.track_step_oracle(truth)?);
    }
    Ok(result)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{parse_backbone_spec, REFERENCE_BACKBONE};
    use crate::labels::head_targets;
    use crate::rng;

    fn uniform_frame(w: usize, h: usize, rgb: [u8; 3]) -> Frame {
        let mut pixels = Vec::with_capacity(3 * w * h);
        for _ in 0..w * h {
            pixels.extend_from_slice(&rgb);
        }
        Frame::new(w, h, pixels).unwrap()
    }

    #[test]
    fn context_square_side() {
        let b = BBox::new(0.0, 0.0, 100.0, 100.0).unwrap();
        assert!((context_side(&b) - 200.0).abs() < 1e-12);
        let b = BBox::new(0.0, 0.0, 64.0, 32.0).unwrap();
        assert!((context_side(&b) - 8960.0f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn crop_scale_is_branch_independent() {
        let frame = uniform_frame(300, 300, [100, 100, 100]);
        let b = BBox::new(150.0, 150.0, 100.0, 100.0).unwrap();
        let (_, scale_ex) = crop_region(&frame, &b, EXEMPLAR_SIZE).unwrap();
        let (_, scale_inst) = crop_region(&frame, &b, INSTANCE_SIZE).unwrap();
        assert!((scale_ex - 127.0 / 200.0).abs() < 1e-12);
        assert!((scale_inst - scale_ex).abs() < 1e-12);
    }

    #[test]
    fn uniform_frame_gives_uniform_patch() {
        let frame = uniform_frame(200, 150, [60, 120, 180]);
        let b = BBox::new(100.0, 75.0, 50.0, 40.0).unwrap();
        let (patch, _) = crop_region(&frame, &b, EXEMPLAR_SIZE).unwrap();
        for c in 0..3 {
            let want = [60.0, 120.0, 180.0][c] / 255.0;
            assert!(patch.plane(c).iter().all(|&v| (v - want).abs() < 1e-12));
        }
    }

    #[test]
    fn crop_preserves_rectangle_size_in_patch_space() {
        // White rectangle on gray; its measured extent in the patch must
        // match bbox size times the crop scale within a pixel.
        let mut frame = uniform_frame(240, 200, [96, 96, 96]);
        let b = BBox::new(120.0, 100.0, 60.0, 40.0).unwrap();
        for y in 0..200 {
            for x in 0..240 {
                let inx = (x as f64 + 0.5 - (b.cx - b.w / 2.0)) >= 0.0
                    && (x as f64 + 0.5) < b.cx + b.w / 2.0;
                let iny = (y as f64 + 0.5 - (b.cy - b.h / 2.0)) >= 0.0
                    && (y as f64 + 0.5) < b.cy + b.h / 2.0;
                if inx && iny {
                    let i = 3 * (y * 240 + x);
                    frame.pixels[i] = 255;
                    frame.pixels[i + 1] = 255;
                    frame.pixels[i + 2] = 255;
                }
            }
        }
        let (patch, scale) = crop_region(&frame, &b, INSTANCE_SIZE).unwrap();
        let mid = INSTANCE_SIZE / 2;
        let count_row = (0..INSTANCE_SIZE)
            .filter(|&x| patch.at(0, mid, x) > 0.7)
            .count() as f64;
        let count_col = (0..INSTANCE_SIZE)
            .filter(|&y| patch.at(0, y, mid) > 0.7)
            .count() as f64;
        assert!((count_row - b.w * scale).abs() <= 1.0, "row {count_row} vs {}", b.w * scale);
        assert!((count_col - b.h * scale).abs() <= 1.0, "col {count_col} vs {}", b.h * scale);
    }

    #[test]
    fn crop_rejects_degenerate_bbox() {
        let frame = uniform_frame(64, 64, [0, 0, 0]);
        let b = BBox {
            cx: 10.0,
            cy: 10.0,
            w: 0.0,
            h: 5.0,
        };
        assert!(crop_region(&frame, &b, 127).is_err());
    }

    #[test]
    fn hanning_blend_identity_and_endpoint() {
        let mut r = rng::seeded(40);
        let data: Vec<f64> = (0..17 * 17).map(|_| rng::uniform(&mut r, 0.0, 1.0)).collect();
        let score = Tensor::new(vec![1, 17, 17], data).unwrap();
        let same = apply_hanning(&score, 0.0).unwrap();
        assert_eq!(score.data(), same.data());

        let pure = apply_hanning(&score, 1.0).unwrap();
        let win = hanning(17);
        for y in 0..17 {
            for x in 0..17 {
                assert!((pure.at(0, y, x) - win[y] * win[x]).abs() < 1e-15);
            }
        }
        assert_eq!(argmax_cell(&pure), (8, 8));
    }

    #[test]
    fn hanning_on_uniform_scores_peaks_at_center() {
        let score = Tensor::filled(vec![1, 17, 17], 0.4);
        let blended = apply_hanning(&score, 0.5).unwrap();
        assert_eq!(argmax_cell(&blended), (8, 8));
    }

    fn oracle_head(bbox_map: &BBox, m: usize, s: usize) -> HeadOutput {
        let targets = head_targets(bbox_map, m, s).unwrap();
        let mut offset = Tensor::zeros(vec![2, m, m]);
        let mut size = Tensor::zeros(vec![2, m, m]);
        for i in 0..m * m {
            offset.data_mut()[i] = targets.delta.0;
            offset.data_mut()[m * m + i] = targets.delta.1;
            size.data_mut()[i] = targets.size_log.0;
            size.data_mut()[m * m + i] = targets.size_log.1;
        }
        HeadOutput {
            score: targets.score_label,
            offset,
            size,
        }
    }

    #[test]
    fn decode_inverts_encoding_for_random_boxes() {
        let mut r = rng::seeded(41);
        for _ in 0..500 {
            let b = BBox::new(
                rng::uniform(&mut r, 4.0, 132.0),
                rng::uniform(&mut r, 4.0, 132.0),
                rng::uniform(&mut r, 4.0, 100.0),
                rng::uniform(&mut r, 4.0, 100.0),
            )
            .unwrap();
            let head = oracle_head(&b, 17, 8);
            let d = decode(&head, 8, 1.0, (0.0, 0.0)).unwrap();
            assert!((d.bbox.cx - b.cx).abs() < 1e-9);
            assert!((d.bbox.cy - b.cy).abs() < 1e-9);
            assert!((d.bbox.w - b.w).abs() < 1e-9);
            assert!((d.bbox.h - b.h).abs() < 1e-9);
        }
    }

    #[test]
    fn decode_center_cell_arithmetic() {
        let b = BBox::new(64.0, 64.0, 40.0, 30.0).unwrap();
        let head = oracle_head(&b, 17, 8);
        let d = decode(&head, 8, 1.0, (0.0, 0.0)).unwrap();
        assert_eq!(d.peak_cell, (8, 8));
        assert!((d.bbox.cx - 64.0).abs() < 1e-12 && (d.bbox.cy - 64.0).abs() < 1e-12);
        assert!((d.bbox.w - 40.0).abs() < 1e-9 && (d.bbox.h - 30.0).abs() < 1e-9);
    }

    #[test]
    fn decode_clamps_underflowed_size() {
        let b = BBox::new(64.0, 64.0, 40.0, 30.0).unwrap();
        let mut head = oracle_head(&b, 17, 8);
        for v in head.size.data_mut().iter_mut() {
            *v = -800.0; // exp underflows to +0
        }
        let d = decode(&head, 8, 1.0, (0.0, 0.0)).unwrap();
        assert!(d.size_clamped);
        assert_eq!(d.bbox.w, 2.0);
        assert_eq!(d.bbox.h, 2.0);
    }

    #[test]
    fn oracle_tracking_static_scene_stays_put() {
        let geometry = Geometry {
            stride: 8,
            map_size: 17,
            exemplar_feat: 5,
            instance_feat: 21,
        };
        let truth = BBox::new(80.0, 64.0, 36.0, 28.0).unwrap();
        let mut state = TrackerState::init_oracle(truth, geometry, DEFAULT_HANNING_GAMMA);
        for _ in 0..100 {
            let b = state.track_step_oracle(&truth).unwrap();
            assert!((b.cx - truth.cx).abs() < 1.0 && (b.cy - truth.cy).abs() < 1.0);
            assert!((b.w - truth.w).abs() < 1.0 && (b.h - truth.h).abs() < 1.0);
        }
    }

    #[test]
    fn oracle_tracking_follows_moving_target() {
        let geometry = Geometry {
            stride: 8,
            map_size: 17,
            exemplar_feat: 5,
            instance_feat: 21,
        };
        let mut truth = BBox::new(40.0, 40.0, 30.0, 24.0).unwrap();
        let mut state = TrackerState::init_oracle(truth, geometry, DEFAULT_HANNING_GAMMA);
        for _ in 0..60 {
            truth.cx += 2.0;
            truth.cy += 1.0;
            let b = state.track_step_oracle(&truth).unwrap();
            let err = ((b.cx - truth.cx).powi(2) + (b.cy - truth.cy).powi(2)).sqrt();
            assert!(err < 1.0, "center error {err}");
        }
    }

    #[test]
    fn one_instance_forward_per_frame() {
        let spec = parse_backbone_spec(REFERENCE_BACKBONE).unwrap();
        let model = TrackModel::new(spec, 7).unwrap();
        let mut r = rng::seeded(50);
        let mut pixels = vec![0u8; 3 * 160 * 120];
        for p in pixels.iter_mut() {
            *p = (rng::unit(&mut r) * 256.0) as u8;
        }
        let frame = Frame::new(160, 120, pixels).unwrap();
        let bbox = BBox::new(80.0, 60.0, 40.0, 30.0).unwrap();
        let mut state = TrackerState::init(&model, &frame, bbox, DEFAULT_HANNING_GAMMA).unwrap();
        let before = state.exemplar_features().unwrap().clone();
        for i in 1..=5 {
            state.track_step(&model, &frame).unwrap();
            assert_eq!(state.instance_forwards(), i);
        }
        assert_eq!(state.exemplar_features().unwrap(), &before);
    }

    #[test]
    fn init_is_deterministic_and_keeps_bbox() {
        let spec = parse_backbone_spec(REFERENCE_BACKBONE).unwrap();
        let model = TrackModel::new(spec, 7).unwrap();
        let frame = uniform_frame(200, 160, [50, 90, 130]);
        let bbox = BBox::new(100.0, 80.0, 48.0, 36.0).unwrap();
        let a = TrackerState::init(&model, &frame, bbox, 0.3).unwrap();
        let b = TrackerState::init(&model, &frame, bbox, 0.3).unwrap();
        assert_eq!(a.current_bbox(), bbox);
        assert_eq!(a.exemplar_features().unwrap(), b.exemplar_features().unwrap());
    }
}
