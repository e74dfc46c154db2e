//! Synthetic clips with a tunable action/scene spurious correlation.
//!
//! A clip is a single foreground square moving over a static textured
//! background. The square looks the same for every action, so the only
//! action signal is its trajectory; the only scene signal is the background.
//! Because the generator keeps the clean background plate, background-only,
//! human-only and background-swapped variants are exact.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClipShape {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Default for ClipShape {
    fn default() -> Self {
        Self {
            frames: 8,
            height: 32,
            width: 32,
            channels: 3,
        }
    }
}

impl ClipShape {
    pub fn frame_len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn clip_len(&self) -> usize {
        self.frames * self.frame_len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config(format!("clip shape has a zero extent: {self:?}")));
        }
        Ok(())
    }
}

/// Controls how strongly the scene follows the action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasSpec {
    pub num_actions: usize,
    pub num_scenes: usize,
    /// Probability that a clip's scene is `scene_of_action[action]`.
    pub correlation: f64,
    pub scene_of_action: Vec<usize>,
}

impl BiasSpec {
    /// Action `a` is paired with scene `a % num_scenes`.
    pub fn new(num_actions: usize, num_scenes: usize, correlation: f64) -> Self {
        Self {
            num_actions,
            num_scenes,
            correlation,
            scene_of_action: (0..num_actions).map(|a| a % num_scenes.max(1)).collect(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_actions < 2 || self.num_scenes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 actions and 2 scenes, got {} and {}",
                self.num_actions, self.num_scenes
            )));
        }
        if !(0.0..=1.0).contains(&self.correlation) {
            return Err(Error::Config(format!(
                "correlation {} outside [0, 1]",
                self.correlation
            )));
        }
        if self.scene_of_action.len() != self.num_actions
            || self.scene_of_action.iter().any(|&s| s >= self.num_scenes)
        {
            return Err(Error::Config(
                "scene_of_action must map every action to a valid scene".into(),
            ));
        }
        Ok(())
    }
}

impl Default for BiasSpec {
    fn default() -> Self {
        Self::new(4, 4, 0.9)
    }
}

/// Rendering parameters shared by every clip of a dataset.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RenderSpec {
    /// Side length of the foreground square in pixels.
    pub fg_size: usize,
    /// Displacement per frame in pixels.
    pub speed: usize,
    /// Amplitude of per-pixel background noise.
    pub noise: f32,
}

impl Default for RenderSpec {
    fn default() -> Self {
        Self {
            fg_size: 6,
            speed: 2,
            noise: 0.03,
        }
    }
}

pub const FOREGROUND_COLOR: f32 = 0.95;
pub const MID_GRAY: f32 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticVideo {
    pub id: usize,
    pub seed: u64,
    pub shape: ClipShape,
    /// `T x H x W x C`, row-major, values in `[0, 1]`.
    pub frames: Vec<f32>,
    /// `T x H x W`, true on the moving actor.
    pub fg_mask: Vec<bool>,
    /// Clean background plate, `H x W x C`, identical in every frame.
    pub plate: Vec<f32>,
    pub action: usize,
    pub scene: usize,
}

impl SyntheticVideo {
    pub fn frame(&self, t: usize) -> &[f32] {
        let len = self.shape.frame_len();
        &self.frames[t * len..(t + 1) * len]
    }

    pub fn mask_frame(&self, t: usize) -> &[bool] {
        let len = self.shape.pixels();
        &self.fg_mask[t * len..(t + 1) * len]
    }

    pub fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.frames.len() != self.shape.clip_len()
            || self.fg_mask.len() != self.shape.frames * self.shape.pixels()
            || self.plate.len() != self.shape.frame_len()
        {
            return Err(Error::shape(self.shape, "buffer lengths"));
        }
        if self.frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("video frames"));
        }
        Ok(())
    }

    /// Copy of the clip with frames reordered by `order` (length `T`).
    pub fn reorder_frames(&self, order: &[usize]) -> Self {
        let (fl, pl) = (self.shape.frame_len(), self.shape.pixels());
        let mut frames = Vec::with_capacity(self.frames.len());
        let mut mask = Vec::with_capacity(self.fg_mask.len());
        for &t in order {
            frames.extend_from_slice(self.frame(t));
            mask.extend_from_slice(&self.fg_mask[t * pl..(t + 1) * pl]);
        }
        debug_assert_eq!(frames.len(), order.len() * fl);
        Self {
            frames,
            fg_mask: mask,
            shape: ClipShape {
                frames: order.len(),
                ..self.shape
            },
            ..self.clone()
        }
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of the `index`-th clip of a dataset generated from `seed`.
pub fn video_seed(seed: u64, index: usize) -> u64 {
    splitmix64(seed ^ splitmix64(index as u64))
}

const MOTION_SALT: u64 = 0x6d6f_7469_6f6e_0001;
const SCENE_SALT: u64 = 0x7363_656e_6500_0002;

/// Draws `(action, scene)` for one clip under `bias`.
fn draw_labels(rng: &mut ChaCha8Rng, bias: &BiasSpec) -> (usize, usize) {
    let action = rng.gen_range(0..bias.num_actions);
    let scene = if rng.gen::<f64>() < bias.correlation {
        bias.scene_of_action[action]
    } else {
        rng.gen_range(0..bias.num_scenes)
    };
    (action, scene)
}

/// Per-frame top-left corner of the foreground square for `action`.
///
/// Motion patterns cycle through up, down, left-right oscillation and
/// diagonal; classes beyond the fourth reuse a pattern at a higher speed.
/// Positions wrap around the frame, so a single frame carries no
/// information about the action.
pub fn trajectory(
    action: usize,
    motion_seed: u64,
    shape: &ClipShape,
    render: &RenderSpec,
) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(motion_seed ^ MOTION_SALT);
    let y0 = rng.gen_range(0..shape.height) as i64;
    let x0 = rng.gen_range(0..shape.width) as i64;
    let v = (render.speed * (1 + action / 4)) as i64;
    let (h, w) = (shape.height as i64, shape.width as i64);
    (0..shape.frames)
        .map(|t| {
            let ti = t as i64;
            let (dy, dx) = match action % 4 {
                0 => (-v * ti, 0),
                1 => (v * ti, 0),
                2 => {
                    let phase = 2.0 * std::f64::consts::PI * t as f64 / shape.frames as f64;
                    (0, (3.0 * v as f64 * phase.sin()).round() as i64)
                }
                _ => (v * ti, v * ti),
            };
            (
                (y0 + dy).rem_euclid(h) as usize,
                (x0 + dx).rem_euclid(w) as usize,
            )
        })
        .collect()
}

/// Foreground masks (`T x H x W`) for a trajectory.
pub fn foreground_mask(
    action: usize,
    motion_seed: u64,
    shape: &ClipShape,
    render: &RenderSpec,
) -> Vec<bool> {
    let (h, w) = (shape.height, shape.width);
    let mut mask = vec![false; shape.frames * h * w];
    for (t, (py, px)) in trajectory(action, motion_seed, shape, render)
        .into_iter()
        .enumerate()
    {
        for dy in 0..render.fg_size {
            for dx in 0..render.fg_size {
                let y = (py + dy) % h;
                let x = (px + dx) % w;
                mask[t * h * w + y * w + x] = true;
            }
        }
    }
    mask
}

fn hsv_to_rgb(h: f32, s: f32, v: f32) -> [f32; 3] {
    let i = (h * 6.0).floor();
    let f = h * 6.0 - i;
    let (p, q, t) = (v * (1.0 - s), v * (1.0 - f * s), v * (1.0 - (1.0 - f) * s));
    match (i as i32).rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Clean background plate (`H x W x C`) for `scene`.
///
/// Each scene has its own base colour and stripe orientation; the stripe
/// phase and the fixed per-pixel noise vary per clip.
pub fn render_plate(
    scene: usize,
    num_scenes: usize,
    appearance_seed: u64,
    shape: &ClipShape,
    render: &RenderSpec,
) -> Vec<f32> {
    let mut rng = ChaCha8Rng::seed_from_u64(appearance_seed ^ SCENE_SALT);
    let base = hsv_to_rgb(scene as f32 / num_scenes as f32, 0.65, 0.5);
    let phase: f32 = rng.gen_range(0.0..std::f32::consts::TAU);
    let freq = std::f32::consts::TAU / (4.0 + (scene / 4) as f32 * 2.0);
    let mut plate = Vec::with_capacity(shape.frame_len());
    for y in 0..shape.height {
        for x in 0..shape.width {
            let (yf, xf) = (y as f32, x as f32);
            let coord = match scene % 4 {
                0 => yf,
                1 => xf,
                2 => (xf + yf) * std::f32::consts::FRAC_1_SQRT_2,
                _ => (xf - yf) * std::f32::consts::FRAC_1_SQRT_2,
            };
            let stripe = 0.12 * (coord * freq + phase).sin();
            for c in 0..shape.channels {
                let noise = if render.noise > 0.0 {
                    rng.gen_range(-render.noise..render.noise)
                } else {
                    0.0
                };
                let v = base[c % 3] + stripe + noise;
                plate.push(v.clamp(0.0, 1.0));
            }
        }
    }
    plate
}

fn composite(plate: &[f32], mask: &[bool], shape: &ClipShape) -> Vec<f32> {
    let c = shape.channels;
    let mut frames = Vec::with_capacity(shape.clip_len());
    for t in 0..shape.frames {
        for p in 0..shape.pixels() {
            if mask[t * shape.pixels() + p] {
                frames.extend(std::iter::repeat(FOREGROUND_COLOR).take(c));
            } else {
                frames.extend_from_slice(&plate[p * c..(p + 1) * c]);
            }
        }
    }
    frames
}

/// Renders one clip from its seed.
pub fn generate_video(
    id: usize,
    seed: u64,
    shape: &ClipShape,
    bias: &BiasSpec,
    render: &RenderSpec,
) -> Result<SyntheticVideo> {
    check_geometry(shape, render)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (action, scene) = draw_labels(&mut rng, bias);
    let fg_mask = foreground_mask(action, seed, shape, render);
    let plate = render_plate(scene, bias.num_scenes, seed, shape, render);
    let frames = composite(&plate, &fg_mask, shape);
    Ok(SyntheticVideo {
        id,
        seed,
        shape: *shape,
        frames,
        fg_mask,
        plate,
        action,
        scene,
    })
}

fn check_geometry(shape: &ClipShape, render: &RenderSpec) -> Result<()> {
    shape.validate()?;
    if render.fg_size == 0 || render.fg_size > shape.height.min(shape.width) {
        return Err(Error::ForegroundTooLarge {
            size: render.fg_size,
            height: shape.height,
            width: shape.width,
        });
    }
    Ok(())
}

/// Generates `n` clips with the default renderer.
pub fn generate_dataset(
    n: usize,
    shape: ClipShape,
    bias: &BiasSpec,
    seed: u64,
) -> Result<Vec<SyntheticVideo>> {
    generate_dataset_with(n, shape, bias, &RenderSpec::default(), seed, 0)
}

/// Generates `n` clips with ids `first_id..first_id + n`. Clip `i` is
/// rendered from `video_seed(seed, first_id + i)`, so the output does not
/// depend on how the work is scheduled across threads.
pub fn generate_dataset_with(
    n: usize,
    shape: ClipShape,
    bias: &BiasSpec,
    render: &RenderSpec,
    seed: u64,
    first_id: usize,
) -> Result<Vec<SyntheticVideo>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    bias.validate()?;
    check_geometry(&shape, render)?;
    (first_id..first_id + n)
        .into_par_iter()
        .map(|id| generate_video(id, video_seed(seed, id), &shape, bias, render))
        .collect()
}

/// Single background frames (`H x W x C`) labelled by scene, for pretraining
/// the scene classifier.
pub fn scene_images(
    n: usize,
    shape: &ClipShape,
    num_scenes: usize,
    render: &RenderSpec,
    seed: u64,
) -> Vec<(Vec<f32>, usize)> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let s = video_seed(seed ^ 0x5ce4e, i);
            let scene = ChaCha8Rng::seed_from_u64(s).gen_range(0..num_scenes);
            (render_plate(scene, num_scenes, s, shape, render), scene)
        })
        .collect()
}

fn tile_plate(plate: &[f32], frames: usize) -> Vec<f32> {
    let mut out = Vec::with_capacity(plate.len() * frames);
    for _ in 0..frames {
        out.extend_from_slice(plate);
    }
    out
}

/// The clip with the actor removed: every frame is the clean plate.
pub fn background_only(v: &SyntheticVideo) -> SyntheticVideo {
    SyntheticVideo {
        frames: tile_plate(&v.plate, v.shape.frames),
        fg_mask: vec![false; v.fg_mask.len()],
        ..v.clone()
    }
}

/// The clip with every non-actor pixel set to `fill` (one value per channel).
pub fn human_only(v: &SyntheticVideo, fill: &[f32]) -> Result<SyntheticVideo> {
    let c = v.shape.channels;
    if fill.len() != c {
        return Err(Error::shape(c, fill.len()));
    }
    let mut frames = v.frames.clone();
    for (p, &fg) in v.fg_mask.iter().enumerate() {
        if !fg {
            frames[p * c..(p + 1) * c].copy_from_slice(fill);
        }
    }
    Ok(SyntheticVideo {
        frames,
        plate: fill.iter().copied().cycle().take(v.plate.len()).collect(),
        ..v.clone()
    })
}

/// The clip's actor composited over `donor`'s clean background.
pub fn background_swap(v: &SyntheticVideo, donor: &SyntheticVideo) -> Result<SyntheticVideo> {
    if donor.action == v.action {
        return Err(Error::SameActionDonor(v.action));
    }
    if donor.shape != v.shape {
        return Err(Error::shape(v.shape, donor.shape));
    }
    let c = v.shape.channels;
    let pixels = v.shape.pixels();
    let mut frames = v.frames.clone();
    for (p, &fg) in v.fg_mask.iter().enumerate() {
        if !fg {
            let q = p % pixels;
            frames[p * c..(p + 1) * c].copy_from_slice(&donor.plate[q * c..(q + 1) * c]);
        }
    }
    Ok(SyntheticVideo {
        frames,
        plate: donor.plate.clone(),
        scene: donor.scene,
        ..v.clone()
    })
}

/// The four clips used by the bias metrics.
#[derive(Debug, Clone)]
pub struct VariantSet {
    pub original: SyntheticVideo,
    pub background_only: SyntheticVideo,
    pub human_only: SyntheticVideo,
    pub background_swapped: SyntheticVideo,
    pub swap_source_action: usize,
}

impl VariantSet {
    pub fn build(v: &SyntheticVideo, donor: &SyntheticVideo, fill: &[f32]) -> Result<Self> {
        Ok(Self {
            original: v.clone(),
            background_only: background_only(v),
            human_only: human_only(v, fill)?,
            background_swapped: background_swap(v, donor)?,
            swap_source_action: donor.action,
        })
    }
}

/// Picks a background donor of a different action for each clip.
pub fn choose_donors(videos: &[SyntheticVideo], seed: u64) -> Result<Vec<usize>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    videos
        .iter()
        .map(|v| {
            let candidates: Vec<usize> = videos
                .iter()
                .enumerate()
                .filter(|(_, d)| d.action != v.action)
                .map(|(i, _)| i)
                .collect();
            if candidates.is_empty() {
                return Err(Error::SameActionDonor(v.action));
            }
            Ok(candidates[rng.gen_range(0..candidates.len())])
        })
        .collect()
}
