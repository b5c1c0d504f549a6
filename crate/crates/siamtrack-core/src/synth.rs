//! Deterministic synthetic video: textured rectangles on a smooth textured
//! background, with bounded random-walk motion, multiplicative size drift,
//! distractor objects drawn from the same texture distribution, and
//! optional per-pixel Gaussian noise. Stands in for real tracking footage
//! at desk scale.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::labels::{self, BBox, HeadTargets};
use crate::model::Geometry;
use crate::ppm;
use crate::rng::{self, Rng};
use crate::tensor::Tensor;
use crate::tracker::{crop_region, Frame};

/// Largest index gap between the two frames of a training pair.
pub const MAX_PAIR_GAP: usize = 50;

/// Bound on the instance-crop jitter, in patch pixels.
pub const PAIR_JITTER: f64 = 32.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SequenceConfig {
    pub frames: usize,
    pub width: usize,
    pub height: usize,
    pub target_min: f64,
    pub target_max: f64,
    pub velocity: f64,
    pub scale_drift: f64,
    pub distractors: usize,
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SequenceConfig {
    fn default() -> Self {
        SequenceConfig {
            frames: 60,
            width: 160,
            height: 120,
            target_min: 24.0,
            target_max: 48.0,
            velocity: 3.0,
            scale_drift: 0.01,
            distractors: 2,
            noise_sigma: 4.0,
            seed: 0,
        }
    }
}

impl SequenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 {
            return Err(Error::invalid("sequence config", "frames must be >= 1"));
        }
        if self.width < 32 || self.height < 32 {
            return Err(Error::invalid("sequence config", "frame must be at least 32x32"));
        }
        if !(self.target_min > 2.0 && self.target_max >= self.target_min) {
            return Err(Error::invalid(
                "sequence config",
                "need 2 < target_min <= target_max",
            ));
        }
        let margin = self.target_max + 2.0;
        if margin * 2.0 >= self.width.min(self.height) as f64 {
            return Err(Error::invalid(
                "sequence config",
                format!(
                    "target_max {} does not fit a {}x{} frame",
                    self.target_max, self.width, self.height
                ),
            ));
        }
        if self.velocity < 0.0 {
            return Err(Error::invalid("sequence config", "velocity must be >= 0"));
        }
        if !(0.0..=0.1).contains(&self.scale_drift) {
            return Err(Error::invalid("sequence config", "scale_drift must lie in [0, 0.1]"));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::invalid("sequence config", "noise_sigma must be >= 0"));
        }
        Ok(())
    }

    pub fn to_key_values(&self) -> String {
        format!(
            "frames={}\nwidth={}\nheight={}\ntarget_min={}\ntarget_max={}\nvelocity={}\nscale_drift={}\ndistractors={}\nnoise_sigma={}\nseed={}\n",
            self.frames,
            self.width,
            self.height,
            self.target_min,
            self.target_max,
            self.velocity,
            self.scale_drift,
            self.distractors,
            self.noise_sigma,
            self.seed
        )
    }

    /// Parses `key=value` pairs, rejecting unknown keys by name.
    pub fn from_pairs(pairs: &[(String, String)]) -> Result<Self> {
        let mut cfg = SequenceConfig::default();
        for (key, value) in pairs {
            let bad = |what: &str| {
                Error::invalid(
                    "sequence config",
                    format!("key `{key}` needs {what}, got `{value}`"),
                )
            };
            match key.as_str() {
                "frames" => cfg.frames = value.parse().map_err(|_| bad("an integer"))?,
                "width" => cfg.width = value.parse().map_err(|_| bad("an integer"))?,
                "height" => cfg.height = value.parse().map_err(|_| bad("an integer"))?,
                "target_min" => cfg.target_min = value.parse().map_err(|_| bad("a number"))?,
                "target_max" => cfg.target_max = value.parse().map_err(|_| bad("a number"))?,
                "velocity" => cfg.velocity = value.parse().map_err(|_| bad("a number"))?,
                "scale_drift" => cfg.scale_drift = value.parse().map_err(|_| bad("a number"))?,
                "distractors" => cfg.distractors = value.parse().map_err(|_| bad("an integer"))?,
                "noise_sigma" => cfg.noise_sigma = value.parse().map_err(|_| bad("a number"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| bad("an integer"))?,
                _ => {
                    return Err(Error::invalid(
                        "sequence config",
                        format!("unknown key `{key}`"),
                    ))
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Splits `key=value` lines (blank lines and `#` comments allowed).
pub fn parse_key_value_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: idx + 1,
            detail: format!("expected key=value, got `{line}`"),
        })?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnotatedSequence {
    pub frames: Vec<Frame>,
    pub truth: Vec<BBox>,
}

const TILE: usize = 24;

/// Generator coordinates live on a 1/64-pixel grid. Positions, sizes and
/// velocities are then exactly representable, every position update is
/// exact in IEEE arithmetic, and the center/top-left conversion in the
/// annotation file round-trips bit for bit.
fn q64(v: f64) -> f64 {
    (v * 64.0).round() / 64.0
}

/// Quantize toward zero: shrinks magnitudes, so norm bounds survive.
fn q64_down(v: f64) -> f64 {
    (v * 64.0).trunc() / 64.0
}

fn q64_clamped(v: f64, lo: f64, hi: f64) -> f64 {
    let q = q64(v);
    if q < lo {
        (lo * 64.0).ceil() / 64.0
    } else if q > hi {
        (hi * 64.0).floor() / 64.0
    } else {
        q
    }
}

struct Sprite {
    texture: Vec<[f64; 3]>, // TILE x TILE
    cx: f64,
    cy: f64,
    w: f64,
    h: f64,
    vx: f64,
    vy: f64,
}

impl Sprite {
    fn spawn(r: &mut Rng, cfg: &SequenceConfig) -> Sprite {
        let texture = (0..TILE * TILE)
            .map(|_| {
                [
                    rng::uniform(r, 0.0, 1.0),
                    rng::uniform(r, 0.0, 1.0),
                    rng::uniform(r, 0.0, 1.0),
                ]
            })
            .collect();
        let w = q64_clamped(
            rng::uniform(r, cfg.target_min, cfg.target_max),
            cfg.target_min,
            cfg.target_max,
        );
        let h = q64_clamped(
            rng::uniform(r, cfg.target_min, cfg.target_max),
            cfg.target_min,
            cfg.target_max,
        );
        let margin_x = cfg.target_max / 2.0 + 2.0;
        let margin_y = cfg.target_max / 2.0 + 2.0;
        let cx = q64(rng::uniform(r, margin_x, cfg.width as f64 - margin_x));
        let cy = q64(rng::uniform(r, margin_y, cfg.height as f64 - margin_y));
        let angle = rng::uniform(r, 0.0, std::f64::consts::TAU);
        let speed = rng::uniform(r, 0.0, cfg.velocity);
        Sprite {
            texture,
            cx,
            cy,
            w,
            h,
            vx: q64_down(speed * angle.cos()),
            vy: q64_down(speed * angle.sin()),
        }
    }

    fn bbox(&self) -> BBox {
        BBox {
            cx: self.cx,
            cy: self.cy,
            w: self.w,
            h: self.h,
        }
    }

    fn step(&mut self, r: &mut Rng, cfg: &SequenceConfig) {
        // Velocity random walk, norm clamped so per-frame displacement
        // never exceeds the configured bound.
        let angle = rng::uniform(r, 0.0, std::f64::consts::TAU);
        let kick = rng::uniform(r, 0.0, cfg.velocity * 0.3);
        let mut vx = self.vx + kick * angle.cos();
        let mut vy = self.vy + kick * angle.sin();
        let norm = (vx * vx + vy * vy).sqrt();
        if norm > cfg.velocity && norm > 0.0 {
            vx *= cfg.velocity / norm;
            vy *= cfg.velocity / norm;
        }
        self.vx = q64_down(vx);
        self.vy = q64_down(vy);

        if cfg.scale_drift > 0.0 {
            self.w = q64_clamped(
                self.w * rng::uniform(r, 1.0 - cfg.scale_drift, 1.0 + cfg.scale_drift),
                cfg.target_min,
                cfg.target_max,
            );
            self.h = q64_clamped(
                self.h * rng::uniform(r, 1.0 - cfg.scale_drift, 1.0 + cfg.scale_drift),
                cfg.target_min,
                cfg.target_max,
            );
        }

        // Sizes and velocities sit on the 1/64 grid, so every expression
        // below is exact and the displacement never exceeds the bound.
        let (lo_x, hi_x) = (self.w / 2.0 + 1.0, cfg.width as f64 - self.w / 2.0 - 1.0);
        let (lo_y, hi_y) = (self.h / 2.0 + 1.0, cfg.height as f64 - self.h / 2.0 - 1.0);
        let mut nx = self.cx + self.vx;
        let mut ny = self.cy + self.vy;
        if nx < lo_x || nx > hi_x {
            self.vx = -self.vx;
            nx = (self.cx + self.vx).clamp(lo_x, hi_x);
        }
        if ny < lo_y || ny > hi_y {
            self.vy = -self.vy;
            ny = (self.cy + self.vy).clamp(lo_y, hi_y);
        }
        self.cx = nx.clamp(lo_x, hi_x);
        self.cy = ny.clamp(lo_y, hi_y);
    }

    /// Draws the sprite with its texture bilinearly stretched to the
    /// current box size.
    fn draw(&self, canvas: &mut [f64], width: usize, height: usize) {
        let (x0, y0) = (self.cx - self.w / 2.0, self.cy - self.h / 2.0);
        let px_lo = x0.ceil().max(0.0) as usize;
        let px_hi = ((self.cx + self.w / 2.0).floor() as usize).min(width);
        let py_lo = y0.ceil().max(0.0) as usize;
        let py_hi = ((self.cy + self.h / 2.0).floor() as usize).min(height);
        for py in py_lo..py_hi {
            let ty = ((py as f64 + 0.5 - y0) / self.h * (TILE - 1) as f64).clamp(0.0, (TILE - 1) as f64);
            let (iy, fy) = (ty.floor() as usize, ty.fract());
            let iy1 = (iy + 1).min(TILE - 1);
            for px in px_lo..px_hi {
                let tx = ((px as f64 + 0.5 - x0) / self.w * (TILE - 1) as f64)
                    .clamp(0.0, (TILE - 1) as f64);
                let (ix, fx) = (tx.floor() as usize, tx.fract());
                let ix1 = (ix + 1).min(TILE - 1);
                let base = 3 * (py * width + px);
                for c in 0..3 {
                    let t00 = self.texture[iy * TILE + ix][c];
                    let t01 = self.texture[iy * TILE + ix1][c];
                    let t10 = self.texture[iy1 * TILE + ix][c];
                    let t11 = self.texture[iy1 * TILE + ix1][c];
                    let top = t00 * (1.0 - fx) + t01 * fx;
                    let bot = t10 * (1.0 - fx) + t11 * fx;
                    canvas[base + c] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
    }
}

/// Smooth value-noise background in [0.15, 0.85): a coarse random grid,
/// bilinearly upsampled so it lacks the targets' high-frequency texture.
fn background(r: &mut Rng, width: usize, height: usize) -> Vec<f64> {
    const CELL: usize = 16;
    let gw = width / CELL + 2;
    let gh = height / CELL + 2;
    let grid: Vec<[f64; 3]> = (0..gw * gh)
        .map(|_| {
            [
                rng::uniform(r, 0.15, 0.85),
                rng::uniform(r, 0.15, 0.85),
                rng::uniform(r, 0.15, 0.85),
            ]
        })
        .collect();
    let mut canvas = vec![0.0; 3 * width * height];
    for y in 0..height {
        let gy = y as f64 / CELL as f64;
        let (iy, fy) = (gy.floor() as usize, gy.fract());
        for x in 0..width {
            let gx = x as f64 / CELL as f64;
            let (ix, fx) = (gx.floor() as usize, gx.fract());
            let base = 3 * (y * width + x);
            for c in 0..3 {
                let g00 = grid[iy * gw + ix][c];
                let g01 = grid[iy * gw + ix + 1][c];
                let g10 = grid[(iy + 1) * gw + ix][c];
                let g11 = grid[(iy + 1) * gw + ix + 1][c];
                let top = g00 * (1.0 - fx) + g01 * fx;
                let bot = g10 * (1.0 - fx) + g11 * fx;
                canvas[base + c] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    canvas
}

/// Generates a fully deterministic annotated sequence for a config.
pub fn generate_sequence(config: &SequenceConfig) -> Result<AnnotatedSequence> {
    config.validate()?;
    let mut r = rng::seeded(config.seed);
    let bg = background(&mut r, config.width, config.height);
    let mut distractors: Vec<Sprite> = (0..config.distractors)
        .map(|_| Sprite::spawn(&mut r, config))
        .collect();
    let mut target = Sprite::spawn(&mut r, config);

    let mut frames = Vec::with_capacity(config.frames);
    let mut truth = Vec::with_capacity(config.frames);
    let mut canvas = vec![0.0; bg.len()];
    for frame_idx in 0..config.frames {
        if frame_idx > 0 {
            for d in distractors.iter_mut() {
                d.step(&mut r, config);
            }
            target.step(&mut r, config);
        }
        canvas.copy_from_slice(&bg);
        for d in &distractors {
            d.draw(&mut canvas, config.width, config.height);
        }
        // Target drawn last so it is never occluded.
        target.draw(&mut canvas, config.width, config.height);

        let mut pixels = Vec::with_capacity(canvas.len());
        if config.noise_sigma > 0.0 {
            for &v in &canvas {
                let noisy = v * 255.0 + config.noise_sigma * rng::gaussian(&mut r);
                pixels.push(noisy.round().clamp(0.0, 255.0) as u8);
            }
        } else {
            for &v in &canvas {
                pixels.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        frames.push(Frame::new(config.width, config.height, pixels)?);
        truth.push(target.bbox());
    }
    Ok(AnnotatedSequence { frames, truth })
}

/// One training pair: exemplar crop on one frame's truth box, instance
/// crop around another frame's (jittered) truth center, and the matching
/// head targets in map coordinates.
pub fn sample_training_pair(
    seq: &AnnotatedSequence,
    r: &mut Rng,
    geometry: &Geometry,
) -> Result<(Tensor, Tensor, HeadTargets)> {
    let n = seq.frames.len();
    if n < 2 {
        return Err(Error::invalid("training pair", "sequence needs at least 2 frames"));
    }
    let i = rng::index(r, n);
    let lo = i.saturating_sub(MAX_PAIR_GAP);
    let hi = (i + MAX_PAIR_GAP).min(n - 1);
    let j = lo + rng::index(r, hi - lo + 1);

    let half_span = (geometry.stride * (geometry.map_size - 1)) as f64 / 2.0;
    let jitter_bound = PAIR_JITTER.min(half_span);
    let jx = rng::uniform(r, -jitter_bound, jitter_bound);
    let jy = rng::uniform(r, -jitter_bound, jitter_bound);

    let (exemplar, _) = crop_region(&seq.frames[i], &seq.truth[i], crate::backbone::EXEMPLAR_SIZE)?;

    let truth = seq.truth[j];
    let a_inst = crate::backbone::INSTANCE_SIZE;
    let (_, scale) = {
        let side = crate::tracker::context_side(&truth) * a_inst as f64
            / crate::backbone::EXEMPLAR_SIZE as f64;
        (side, a_inst as f64 / side)
    };
    let crop_center = BBox {
        cx: truth.cx + jx / scale,
        cy: truth.cy + jy / scale,
        w: truth.w,
        h: truth.h,
    };
    let (instance, inst_scale) = crop_region(&seq.frames[j], &crop_center, a_inst)?;
    debug_assert!((inst_scale - scale).abs() < 1e-12);

    // Target center sits at the patch middle minus the jitter; translate to
    // map coordinates and pair with the patch-pixel size.
    let map_box = BBox::new(
        half_span - jx,
        half_span - jy,
        truth.w * scale,
        truth.h * scale,
    )?;
    let targets = labels::head_targets(&map_box, geometry.map_size, geometry.stride)?;
    Ok((exemplar, instance, targets))
}

/// Writes frames as `%06d.ppm` plus `groundtruth.txt` (`x y w h` top-left
/// corner lines, exact decimal round-trip).
pub fn write_sequence(seq: &AnnotatedSequence, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    for (i, frame) in seq.frames.iter().enumerate() {
        ppm::write_ppm(frame, &dir.join(format!("{i:06}.ppm")))?;
    }
    let mut text = String::new();
    for b in &seq.truth {
        let (x, y) = b.top_left();
        text.push_str(&format!("{} {} {} {}\n", x, y, b.w, b.h));
    }
    let gt = dir.join("groundtruth.txt");
    fs::write(&gt, text).map_err(|e| Error::io(gt.display().to_string(), e))?;
    Ok(())
}

pub fn read_groundtruth(path: &Path) -> Result<Vec<BBox>> {
    let name = path.display().to_string();
    let text = fs::read_to_string(path).map_err(|e| Error::io(&name, e))?;
    let mut truth = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::format(&name, format!("bad number on line {}", idx + 1)))?;
        if fields.len() != 4 {
            return Err(Error::format(
                &name,
                format!("line {} has {} fields, expected 4", idx + 1, fields.len()),
            ));
        }
        truth.push(BBox::from_top_left(fields[0], fields[1], fields[2], fields[3])?);
    }
    if truth.is_empty() {
        return Err(Error::format(&name, "no annotations"));
    }
    Ok(truth)
}

pub fn read_sequence(dir: &Path) -> Result<AnnotatedSequence> {
    let name = dir.display().to_string();
    let mut frame_paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| Error::io(&name, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ppm"))
        .collect();
    frame_paths.sort();
    let frames: Vec<Frame> = frame_paths
        .iter()
        .map(|p| ppm::read_ppm(p))
        .collect::<Result<_>>()?;
    let truth = read_groundtruth(&dir.join("groundtruth.txt"))?;
    if frames.is_empty() {
        return Err(Error::format(&name, "no .ppm frames"));
    }
    if frames.len() != truth.len() {
        return Err(Error::format(
            dir.join("groundtruth.txt").display().to_string(),
            format!("{} annotation lines for {} frames", truth.len(), frames.len()),
        ));
    }
    Ok(AnnotatedSequence { frames, truth })
}
