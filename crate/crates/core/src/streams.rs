//! The unbiased spatio-temporal stream, the two biased-stream designs and the
//! shared heads.
//!
//! Both encoders are small pre-norm transformers over non-overlapping patch
//! tokens. The spatio-temporal encoder lets every token of a clip attend to
//! every other one; the per-frame encoder restricts attention to tokens of
//! the same frame and averages frame features over time, so its output does
//! not depend on frame order.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamStore};
use crate::scalar::Scalar;
use crate::synth::{ClipShape, SyntheticVideo};
use crate::tensor::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemporalMode {
    Spatiotemporal,
    PerFrame,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub embed_dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub patch_size: usize,
    pub temporal_mode: TemporalMode,
    #[serde(default = "default_mlp_ratio")]
    pub mlp_ratio: usize,
}

fn default_mlp_ratio() -> usize {
    2
}

impl EncoderConfig {
    pub fn spatiotemporal() -> Self {
        Self {
            embed_dim: 64,
            depth: 2,
            heads: 4,
            patch_size: 8,
            temporal_mode: TemporalMode::Spatiotemporal,
            mlp_ratio: 2,
        }
    }

    pub fn per_frame() -> Self {
        Self {
            temporal_mode: TemporalMode::PerFrame,
            ..Self::spatiotemporal()
        }
    }

    pub fn validate(&self, shape: &ClipShape) -> Result<()> {
        if self.embed_dim == 0 || self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::Config(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            )));
        }
        if self.patch_size == 0
            || shape.height % self.patch_size != 0
            || shape.width % self.patch_size != 0
        {
            return Err(Error::Config(format!(
                "patch_size {} must divide the {}x{} frame",
                self.patch_size, shape.height, shape.width
            )));
        }
        if self.mlp_ratio == 0 {
            return Err(Error::Config("mlp_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn patches_per_frame(&self, shape: &ClipShape) -> usize {
        (shape.height / self.patch_size) * (shape.width / self.patch_size)
    }

    pub fn patch_dim(&self, shape: &ClipShape) -> usize {
        self.patch_size * self.patch_size * shape.channels
    }
}

/// How a clip is altered before it reaches the input-based biased stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputTransform {
    Identity,
    Shuffle,
    DuplicateSingle,
}

impl InputTransform {
    /// Source frame index for each output position.
    pub fn frame_order(self, frames: usize, rng: &mut impl Rng) -> Vec<usize> {
        match self {
            Self::Identity => (0..frames).collect(),
            Self::Shuffle => {
                let mut order: Vec<usize> = (0..frames).collect();
                order.shuffle(rng);
                order
            }
            Self::DuplicateSingle => vec![rng.gen_range(0..frames); frames],
        }
    }

    /// Fair-coin choice between shuffling and single-frame duplication.
    pub fn alternate(rng: &mut impl Rng) -> Self {
        if rng.gen_bool(0.5) {
            Self::Shuffle
        } else {
            Self::DuplicateSingle
        }
    }
}

/// Flattens clips into patch-token rows, centring pixel values on zero.
///
/// Rows are ordered clip, then frame (following `orders[i]` when given),
/// then patch in raster order; each row is the patch's pixels in
/// `(dy, dx, channel)` order.
pub fn clip_tokens<T: Scalar>(
    videos: &[&SyntheticVideo],
    orders: Option<&[Vec<usize>]>,
    patch: usize,
) -> Matrix<T> {
    let Some(first) = videos.first() else {
        return Matrix::zeros(0, 0);
    };
    let s = first.shape;
    let (gh, gw) = (s.height / patch, s.width / patch);
    let pdim = patch * patch * s.channels;
    let frames_per = orders.map_or(s.frames, |o| o[0].len());
    let mut data = Vec::with_capacity(videos.len() * frames_per * gh * gw * pdim);
    let half = T::lit(0.5);
    for (i, v) in videos.iter().enumerate() {
        let identity: Vec<usize>;
        let order: &[usize] = match orders {
            Some(o) => &o[i],
            None => {
                identity = (0..s.frames).collect();
                &identity
            }
        };
        for &t in order {
            let frame = v.frame(t);
            for py in 0..gh {
                for px in 0..gw {
                    for dy in 0..patch {
                        let y = py * patch + dy;
                        let row = &frame[(y * s.width + px * patch) * s.channels..];
                        for &x in &row[..patch * s.channels] {
                            data.push(T::lit(f64::from(x)) - half);
                        }
                    }
                }
            }
        }
    }
    let rows = data.len() / pdim;
    Matrix::from_vec(rows, pdim, data)
}

/// Adds an encoder's parameters under `prefix`.
pub(crate) fn init_encoder<T: Scalar>(
    store: &mut ParamStore<T>,
    prefix: &str,
    cfg: &EncoderConfig,
    shape: &ClipShape,
    rng: &mut impl Rng,
) {
    let d = cfg.embed_dim;
    let pdim = cfg.patch_dim(shape);
    let tokens = match cfg.temporal_mode {
        TemporalMode::Spatiotemporal => shape.frames * cfg.patches_per_frame(shape),
        TemporalMode::PerFrame => cfg.patches_per_frame(shape),
    };
    let hidden = d * cfg.mlp_ratio;
    let inv = |n: usize| 1.0 / (n as f64).sqrt();
    store.init_normal(format!("{prefix}.patch.w"), pdim, d, inv(pdim), rng);
    store.insert(format!("{prefix}.patch.b"), Matrix::zeros(1, d));
    store.init_normal(format!("{prefix}.pos"), tokens, d, 0.1, rng);
    for b in 0..cfg.depth {
        let p = format!("{prefix}.blocks.{b}");
        store.insert(format!("{p}.ln1.g"), Matrix::filled(1, d, T::one()));
        store.insert(format!("{p}.ln1.b"), Matrix::zeros(1, d));
        store.init_normal(format!("{p}.attn.qkv.w"), d, 3 * d, inv(d), rng);
        store.insert(format!("{p}.attn.qkv.b"), Matrix::zeros(1, 3 * d));
        store.init_normal(format!("{p}.attn.proj.w"), d, d, 0.5 * inv(d), rng);
        store.insert(format!("{p}.attn.proj.b"), Matrix::zeros(1, d));
        store.insert(format!("{p}.ln2.g"), Matrix::filled(1, d, T::one()));
        store.insert(format!("{p}.ln2.b"), Matrix::zeros(1, d));
        store.init_normal(format!("{p}.mlp.fc1.w"), d, hidden, inv(d), rng);
        store.insert(format!("{p}.mlp.fc1.b"), Matrix::zeros(1, hidden));
        store.init_normal(format!("{p}.mlp.fc2.w"), hidden, d, 0.5 * inv(hidden), rng);
        store.insert(format!("{p}.mlp.fc2.b"), Matrix::zeros(1, d));
    }
    store.insert(format!("{prefix}.ln_f.g"), Matrix::filled(1, d, T::one()));
    store.insert(format!("{prefix}.ln_f.b"), Matrix::zeros(1, d));
}

/// Runs an encoder over `batch` clips of `frames` frames whose patch tokens
/// are the rows of `tokens`. Returns one mean-pooled feature row per clip.
pub(crate) fn encode<T: Scalar>(
    tape: &mut Tape<T>,
    bound: &Bound,
    prefix: &str,
    cfg: &EncoderConfig,
    shape: &ClipShape,
    tokens: Var,
    frames: usize,
) -> Var {
    let per_frame = cfg.patches_per_frame(shape);
    let p = |name: &str| bound.get(&format!("{prefix}.{name}"));
    let mut x = tape.linear(tokens, p("patch.w"), p("patch.b"));
    x = tape.add_tiled(x, p("pos"));
    let group = match cfg.temporal_mode {
        TemporalMode::Spatiotemporal => frames * per_frame,
        TemporalMode::PerFrame => per_frame,
    };
    for b in 0..cfg.depth {
        let blk = |name: &str| bound.get(&format!("{prefix}.blocks.{b}.{name}"));
        let h = tape.layer_norm(x, blk("ln1.g"), blk("ln1.b"));
        let qkv = tape.linear(h, blk("attn.qkv.w"), blk("attn.qkv.b"));
        let a = tape.attention(qkv, cfg.heads, group);
        let a = tape.linear(a, blk("attn.proj.w"), blk("attn.proj.b"));
        x = tape.add(x, a);
        let h = tape.layer_norm(x, blk("ln2.g"), blk("ln2.b"));
        let h = tape.linear(h, blk("mlp.fc1.w"), blk("mlp.fc1.b"));
        let h = tape.gelu(h);
        let h = tape.linear(h, blk("mlp.fc2.w"), blk("mlp.fc2.b"));
        x = tape.add(x, h);
    }
    x = tape.layer_norm(x, p("ln_f.g"), p("ln_f.b"));
    match cfg.temporal_mode {
        TemporalMode::Spatiotemporal => tape.group_mean(x, frames * per_frame),
        TemporalMode::PerFrame => {
            let per_frame_features = tape.group_mean(x, per_frame);
            tape.group_mean(per_frame_features, frames)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasedStreamKind {
    None,
    ExtractorBased,
    InputBased,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub clip: ClipShape,
    pub num_actions: usize,
    pub num_scenes: usize,
    /// Encoder of the unbiased stream, and of the input-based biased stream.
    pub unbiased: EncoderConfig,
    /// Per-frame encoder of the extractor-based biased stream.
    pub extractor: EncoderConfig,
    pub biased_kind: BiasedStreamKind,
    pub scene_prediction: bool,
    #[serde(default = "default_grl_strength")]
    pub grl_strength: f64,
}

fn default_grl_strength() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            clip: ClipShape::default(),
            num_actions: 4,
            num_scenes: 4,
            unbiased: EncoderConfig::spatiotemporal(),
            extractor: EncoderConfig::per_frame(),
            biased_kind: BiasedStreamKind::ExtractorBased,
            scene_prediction: true,
            grl_strength: 1.0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.clip.validate()?;
        if self.unbiased.temporal_mode != TemporalMode::Spatiotemporal {
            return Err(Error::Config(
                "the unbiased stream needs a spatiotemporal encoder".into(),
            ));
        }
        if self.extractor.temporal_mode != TemporalMode::PerFrame {
            return Err(Error::Config(
                "the extractor-based biased stream needs a per_frame encoder".into(),
            ));
        }
        self.unbiased.validate(&self.clip)?;
        self.extractor.validate(&self.clip)?;
        if self.num_actions < 2 || self.num_scenes < 2 {
            return Err(Error::Config("need at least 2 actions and 2 scenes".into()));
        }
        if self.scene_prediction && self.biased_kind == BiasedStreamKind::None {
            return Err(Error::Config(
                "scene prediction requires a biased stream".into(),
            ));
        }
        if !(self.grl_strength > 0.0) {
            return Err(Error::Config("grl_strength must be positive".into()));
        }
        Ok(())
    }

    /// Encoder used by the biased stream, if there is one.
    pub fn biased_encoder(&self) -> Option<&EncoderConfig> {
        match self.biased_kind {
            BiasedStreamKind::None => None,
            BiasedStreamKind::ExtractorBased => Some(&self.extractor),
            BiasedStreamKind::InputBased => Some(&self.unbiased),
        }
    }
}

/// Feature and logits for one clip.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamOutput<T> {
    pub feature: Vec<T>,
    pub action_logits: Vec<T>,
    /// Absent when the model has no scene head.
    pub scene_logits: Option<Vec<T>>,
}

/// Tape handles for a batch of stream outputs (one row per clip).
#[derive(Debug, Clone, Copy)]
pub struct StreamVars {
    pub feature: Var,
    pub action_logits: Var,
    pub scene_logits: Option<Var>,
}

/// Gradient reversal with a validated strength.
pub fn grl<T: Scalar>(tape: &mut Tape<T>, x: Var, strength: f64) -> Result<Var> {
    if !(strength > 0.0 && strength.is_finite()) {
        return Err(Error::Config(format!("GRL strength {strength} must be positive")));
    }
    Ok(tape.grl(x, T::lit(strength)))
}

pub const UNBIASED: &str = "unbiased";
pub const BIASED: &str = "biased";

/// Two-stream action model: unbiased encoder and head, optional biased
/// encoder and head, and a scene head shared by both streams.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStreamModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
}

impl<T: Scalar> TwoStreamModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let c = &config;
        init_encoder(&mut params, UNBIASED, &c.unbiased, &c.clip, &mut rng);
        let head = |store: &mut ParamStore<T>, name: &str, d: usize, out: usize, rng: &mut ChaCha8Rng| {
            store.init_normal(format!("{name}.w"), d, out, 1.0 / (d as f64).sqrt(), rng);
            store.insert(format!("{name}.b"), Matrix::zeros(1, out));
        };
        head(&mut params, "head_u", c.unbiased.embed_dim, c.num_actions, &mut rng);
        if let Some(enc) = c.biased_encoder() {
            init_encoder(&mut params, BIASED, enc, &c.clip, &mut rng);
            head(&mut params, "head_b", enc.embed_dim, c.num_actions, &mut rng);
            if enc.embed_dim != c.unbiased.embed_dim {
                return Err(Error::Config(
                    "both streams must share a feature width for the shared scene head and HSIC"
                        .into(),
                ));
            }
        }
        if c.scene_prediction {
            head(&mut params, "head_s", c.unbiased.embed_dim, c.num_scenes, &mut rng);
        }
        Ok(Self { config, params })
    }

    fn check_clips(&self, videos: &[&SyntheticVideo]) -> Result<()> {
        if videos.is_empty() {
            return Err(Error::EmptyRecords);
        }
        for v in videos {
            if v.shape != self.config.clip {
                return Err(Error::shape(self.config.clip, v.shape));
            }
        }
        Ok(())
    }

    /// Unbiased stream on the tape: spatio-temporal features, action logits,
    /// and scene logits through the gradient reversal layer.
    pub fn unbiased_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        videos: &[&SyntheticVideo],
    ) -> Result<StreamVars> {
        self.check_clips(videos)?;
        let c = &self.config;
        let tokens = tape.constant(clip_tokens(videos, None, c.unbiased.patch_size));
        let feature = encode(tape, bound, UNBIASED, &c.unbiased, &c.clip, tokens, c.clip.frames);
        let action_logits = tape.linear(feature, bound.get("head_u.w"), bound.get("head_u.b"));
        let scene_logits = if c.scene_prediction {
            let reversed = grl(tape, feature, c.grl_strength)?;
            Some(tape.linear(reversed, bound.get("head_s.w"), bound.get("head_s.b")))
        } else {
            None
        };
        Ok(StreamVars {
            feature,
            action_logits,
            scene_logits,
        })
    }

    /// Biased stream on the tape with explicit per-clip frame orders. The
    /// scene path has no gradient reversal.
    pub fn biased_on_tape(
        &self,
        tape: &mut Tape<T>,
        bound: &Bound,
        videos: &[&SyntheticVideo],
        orders: &[Vec<usize>],
    ) -> Result<StreamVars> {
        self.check_clips(videos)?;
        let c = &self.config;
        let enc = c
            .biased_encoder()
            .ok_or_else(|| Error::Config("model has no biased stream".into()))?;
        if orders.len() != videos.len() {
            return Err(Error::shape(videos.len(), orders.len()));
        }
        let frames = orders[0].len();
        if orders.iter().any(|o| o.len() != frames || o.iter().any(|&t| t >= c.clip.frames)) {
            return Err(Error::Config("invalid frame order".into()));
        }
        if enc.temporal_mode == TemporalMode::Spatiotemporal && frames != c.clip.frames {
            return Err(Error::shape(c.clip.frames, frames));
        }
        let tokens = tape.constant(clip_tokens(videos, Some(orders), enc.patch_size));
        let feature = encode(tape, bound, BIASED, enc, &c.clip, tokens, frames);
        let action_logits = tape.linear(feature, bound.get("head_b.w"), bound.get("head_b.b"));
        let scene_logits = c
            .scene_prediction
            .then(|| tape.linear(feature, bound.get("head_s.w"), bound.get("head_s.b")));
        Ok(StreamVars {
            feature,
            action_logits,
            scene_logits,
        })
    }

    fn read_outputs(tape: &Tape<T>, vars: &StreamVars) -> Vec<StreamOutput<T>> {
        let f = tape.value(vars.feature);
        let a = tape.value(vars.action_logits);
        let s = vars.scene_logits.map(|s| tape.value(s));
        (0..f.rows())
            .map(|i| StreamOutput {
                feature: f.row(i).to_vec(),
                action_logits: a.row(i).to_vec(),
                scene_logits: s.map(|m| m.row(i).to_vec()),
            })
            .collect()
    }

    pub fn forward_unbiased(&self, videos: &[&SyntheticVideo]) -> Result<Vec<StreamOutput<T>>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let vars = self.unbiased_on_tape(&mut tape, &bound, videos)?;
        Ok(Self::read_outputs(&tape, &vars))
    }

    /// Extractor-based biased stream on clips in their stored order.
    pub fn forward_biased_extractor(
        &self,
        videos: &[&SyntheticVideo],
    ) -> Result<Vec<StreamOutput<T>>> {
        if self.config.biased_kind != BiasedStreamKind::ExtractorBased {
            return Err(Error::Config("model has no extractor-based biased stream".into()));
        }
        let orders: Vec<Vec<usize>> = videos
            .iter()
            .map(|_| (0..self.config.clip.frames).collect())
            .collect();
        self.forward_biased_ordered(videos, &orders)
    }

    /// Input-based biased stream after applying `transform` to each clip.
    pub fn forward_biased_input(
        &self,
        videos: &[&SyntheticVideo],
        transform: InputTransform,
        rng: &mut impl Rng,
    ) -> Result<Vec<StreamOutput<T>>> {
        if self.config.biased_kind != BiasedStreamKind::InputBased {
            return Err(Error::Config("model has no input-based biased stream".into()));
        }
        if transform == InputTransform::Identity {
            return Err(Error::IdentityTransform);
        }
        let orders: Vec<Vec<usize>> = videos
            .iter()
            .map(|_| transform.frame_order(self.config.clip.frames, rng))
            .collect();
        self.forward_biased_ordered(videos, &orders)
    }

    /// Biased stream with explicit frame orders, outside any training graph.
    pub fn forward_biased_ordered(
        &self,
        videos: &[&SyntheticVideo],
        orders: &[Vec<usize>],
    ) -> Result<Vec<StreamOutput<T>>> {
        let mut tape = Tape::new();
        let bound = self.params.bind(&mut tape, false);
        let vars = self.biased_on_tape(&mut tape, &bound, videos, orders)?;
        Ok(Self::read_outputs(&tape, &vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, BiasSpec};

    fn tiny_config(kind: BiasedStreamKind) -> ModelConfig {
        let enc = EncoderConfig {
            embed_dim: 8,
            depth: 1,
            heads: 2,
            patch_size: 4,
            temporal_mode: TemporalMode::Spatiotemporal,
            mlp_ratio: 2,
        };
        ModelConfig {
            clip: ClipShape {
                frames: 4,
                height: 8,
                width: 8,
                channels: 3,
            },
            num_actions: 4,
            num_scenes: 3,
            unbiased: enc,
            extractor: EncoderConfig {
                temporal_mode: TemporalMode::PerFrame,
                ..enc
            },
            biased_kind: kind,
            scene_prediction: kind != BiasedStreamKind::None,
            grl_strength: 1.0,
        }
    }

    fn clips(cfg: &ModelConfig, n: usize) -> Vec<SyntheticVideo> {
        let bias = BiasSpec::new(cfg.num_actions, cfg.num_scenes, 0.5);
        let render = crate::synth::RenderSpec {
            fg_size: 2,
            ..Default::default()
        };
        crate::synth::generate_dataset_with(n, cfg.clip, &bias, &render, 17, 0).unwrap()
    }

    #[test]
    fn output_dimensions_follow_config() {
        let cfg = tiny_config(BiasedStreamKind::ExtractorBased);
        let model = TwoStreamModel::<f64>::new(cfg.clone(), 1).unwrap();
        let data = clips(&cfg, 3);
        let refs: Vec<_> = data.iter().collect();
        let out = model.forward_unbiased(&refs).unwrap();
        assert_eq!(out.len(), 3);
        assert_eq!(out[0].feature.len(), 8);
        assert_eq!(out[0].action_logits.len(), 4);
        assert_eq!(out[0].scene_logits.as_ref().unwrap().len(), 3);
        assert_eq!(out, model.forward_unbiased(&refs).unwrap());
        let b = model.forward_biased_extractor(&refs).unwrap();
        assert_eq!(b[0].feature.len(), 8);
    }

    #[test]
    fn duplicate_input_has_identical_frames() {
        let cfg = tiny_config(BiasedStreamKind::InputBased);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let order = InputTransform::DuplicateSingle.frame_order(cfg.clip.frames, &mut rng);
        assert!(order.iter().all(|&t| t == order[0]));
        let data = clips(&cfg, 1);
        let toks = clip_tokens::<f64>(&[&data[0]], Some(&[order]), 4);
        let per = 4;
        for t in 1..cfg.clip.frames {
            assert_eq!(toks.slice_rows(0, per), toks.slice_rows(t * per, (t + 1) * per));
        }
    }

    #[test]
    fn shuffle_is_reproducible_under_seed() {
        let a = InputTransform::Shuffle.frame_order(8, &mut ChaCha8Rng::seed_from_u64(9));
        let b = InputTransform::Shuffle.frame_order(8, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        let mut sorted = a.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn identity_transform_rejected_for_input_stream() {
        let cfg = tiny_config(BiasedStreamKind::InputBased);
        let model = TwoStreamModel::<f64>::new(cfg.clone(), 1).unwrap();
        let data = clips(&cfg, 2);
        let refs: Vec<_> = data.iter().collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            model.forward_biased_input(&refs, InputTransform::Identity, &mut rng),
            Err(Error::IdentityTransform)
        ));
        assert!(model
            .forward_biased_input(&refs, InputTransform::Shuffle, &mut rng)
            .is_ok());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let cfg = tiny_config(BiasedStreamKind::None);
        let model = TwoStreamModel::<f32>::new(cfg, 1).unwrap();
        let other = generate_dataset(1, ClipShape::default(), &BiasSpec::default(), 0).unwrap();
        assert!(matches!(
            model.forward_unbiased(&[&other[0]]),
            Err(Error::Shape { .. })
        ));
    }

    #[test]
    fn scene_without_biased_stream_rejected() {
        let mut cfg = tiny_config(BiasedStreamKind::None);
        cfg.scene_prediction = true;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn identical_configs_have_identical_shapes() {
        let cfg = tiny_config(BiasedStreamKind::InputBased);
        let a = TwoStreamModel::<f32>::new(cfg.clone(), 1).unwrap();
        let b = TwoStreamModel::<f32>::new(cfg, 2).unwrap();
        assert_eq!(a.params.shapes(), b.params.shapes());
        assert_ne!(a.params, b.params);
    }

    #[test]
    fn grl_strength_must_be_positive() {
        let mut tape = Tape::<f64>::new();
        let x = tape.param(Matrix::zeros(1, 2));
        assert!(grl(&mut tape, x, 0.0).is_err());
        assert!(grl(&mut tape, x, 1.0).is_ok());
    }
}
