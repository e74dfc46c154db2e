//! Frozen scene classifier that turns one random frame into a soft scene
//! label.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::params::{AdamW, AdamWConfig, ParamStore, StoredArray};
use crate::scalar::Scalar;
use crate::streams::{encode, init_encoder, EncoderConfig, TemporalMode};
use crate::synth::{scene_images, ClipShape, RenderSpec, SyntheticVideo};
use crate::tensor::Matrix;

pub const REQUIRED_ACCURACY: f64 = 0.95;
const PREFIX: &str = "scene";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenePretrainConfig {
    pub encoder: EncoderConfig,
    pub train_images: usize,
    pub heldout_images: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for ScenePretrainConfig {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig {
                embed_dim: 16,
                depth: 1,
                heads: 2,
                patch_size: 8,
                temporal_mode: TemporalMode::PerFrame,
                mlp_ratio: 2,
            },
            train_images: 400,
            heldout_images: 200,
            epochs: 4,
            batch_size: 16,
            lr: 3e-3,
            seed: 0,
        }
    }
}

/// A per-frame encoder with a scene head. Immutable once built: no method
/// hands out mutable access to its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FrozenSceneClassifier<T> {
    encoder: EncoderConfig,
    frame: ClipShape,
    num_scenes: usize,
    params: ParamStore<T>,
    heldout_accuracy: f64,
}

fn single_frame(shape: &ClipShape) -> ClipShape {
    ClipShape { frames: 1, ..*shape }
}

/// Patch tokens for a batch of single `H x W x C` frames.
fn frame_tokens<T: Scalar>(frames: &[&[f32]], shape: &ClipShape, patch: usize) -> Matrix<T> {
    let (gh, gw) = (shape.height / patch, shape.width / patch);
    let pdim = patch * patch * shape.channels;
    let half = T::lit(0.5);
    let mut data = Vec::with_capacity(frames.len() * gh * gw * pdim);
    for frame in frames {
        for py in 0..gh {
            for px in 0..gw {
                for dy in 0..patch {
                    let y = py * patch + dy;
                    let start = (y * shape.width + px * patch) * shape.channels;
                    for &x in &frame[start..start + patch * shape.channels] {
                        data.push(T::lit(f64::from(x)) - half);
                    }
                }
            }
        }
    }
    Matrix::from_vec(data.len() / pdim.max(1), pdim, data)
}

fn scene_logits<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    trainable: bool,
    encoder: &EncoderConfig,
    frame: &ClipShape,
    frames: &[&[f32]],
) -> (crate::params::Bound, crate::autodiff::Var) {
    let bound = params.bind(tape, trainable);
    let tokens = tape.constant(frame_tokens(frames, frame, encoder.patch_size));
    let f = encode(tape, &bound, PREFIX, encoder, frame, tokens, 1);
    let logits = tape.linear(f, bound.get("scene_head.w"), bound.get("scene_head.b"));
    (bound, logits)
}

/// Trains a scene classifier on background-only frames, checks held-out
/// accuracy and freezes it.
pub fn pretrain_scene_classifier<T: Scalar>(
    clip: &ClipShape,
    num_scenes: usize,
    render: &RenderSpec,
    cfg: &ScenePretrainConfig,
) -> Result<FrozenSceneClassifier<T>> {
    if cfg.encoder.temporal_mode != TemporalMode::PerFrame {
        return Err(Error::Config("scene classifier needs a per_frame encoder".into()));
    }
    let frame = single_frame(clip);
    cfg.encoder.validate(&frame)?;
    if cfg.batch_size == 0 || cfg.train_images == 0 || cfg.heldout_images == 0 {
        return Err(Error::Config("scene pretraining sizes must be positive".into()));
    }
    let train = scene_images(cfg.train_images, &frame, num_scenes, render, cfg.seed);
    let heldout = scene_images(
        cfg.heldout_images,
        &frame,
        num_scenes,
        render,
        cfg.seed ^ 0xffff_0000,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ParamStore::new();
    init_encoder(&mut params, PREFIX, &cfg.encoder, &frame, &mut rng);
    let d = cfg.encoder.embed_dim;
    params.init_normal("scene_head.w", d, num_scenes, 1.0 / (d as f64).sqrt(), &mut rng);
    params.insert("scene_head.b", Matrix::zeros(1, num_scenes));
    let mut opt = AdamW::new(AdamWConfig {
        lr: cfg.lr,
        weight_decay: 0.0,
        ..AdamWConfig::default()
    });
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let frames: Vec<&[f32]> = chunk.iter().map(|&i| train[i].0.as_slice()).collect();
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].1).collect();
            let mut tape = Tape::new();
            let (bound, logits) =
                scene_logits(&mut tape, &params, true, &cfg.encoder, &frame, &frames);
            let loss = tape.cross_entropy(logits, &labels);
            let grads = tape.backward(loss);
            opt.step(&mut params, &bound.grads(&grads));
        }
    }
    let mut classifier = FrozenSceneClassifier {
        encoder: cfg.encoder,
        frame,
        num_scenes,
        params,
        heldout_accuracy: 0.0,
    };
    let mut correct = 0;
    for chunk in heldout.chunks(64) {
        let frames: Vec<&[f32]> = chunk.iter().map(|(f, _)| f.as_slice()).collect();
        let probs = classifier.predict_frames(&frames);
        for (pred, (_, label)) in probs.argmax_rows().into_iter().zip(chunk) {
            correct += usize::from(pred == *label);
        }
    }
    let accuracy = correct as f64 / heldout.len() as f64;
    if accuracy < REQUIRED_ACCURACY {
        return Err(Error::SceneClassifierUnderfit {
            accuracy,
            required: REQUIRED_ACCURACY,
        });
    }
    classifier.heldout_accuracy = accuracy;
    Ok(classifier)
}

impl<T: Scalar> FrozenSceneClassifier<T> {
    pub fn num_scenes(&self) -> usize {
        self.num_scenes
    }

    pub fn heldout_accuracy(&self) -> f64 {
        self.heldout_accuracy
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    /// SHA-256 of the frozen parameters.
    pub fn digest(&self) -> String {
        self.params.digest()
    }

    /// Scene probabilities, one row per `H x W x C` frame.
    pub fn predict_frames(&self, frames: &[&[f32]]) -> Matrix<T> {
        let mut tape = Tape::new();
        let (_, logits) = scene_logits(
            &mut tape,
            &self.params,
            false,
            &self.encoder,
            &self.frame,
            frames,
        );
        tape.value(logits).softmax_rows()
    }

    fn check_clip(&self, v: &SyntheticVideo) -> Result<()> {
        if v.shape.height != self.frame.height
            || v.shape.width != self.frame.width
            || v.shape.channels != self.frame.channels
        {
            return Err(Error::shape(self.frame, v.shape));
        }
        Ok(())
    }

    /// Soft label from one uniformly drawn frame of `v`.
    pub fn soft_label(&self, v: &SyntheticVideo, rng: &mut impl Rng) -> Result<Vec<T>> {
        Ok(self.soft_labels(&[v], rng)?.row(0).to_vec())
    }

    /// Soft labels for a batch, drawing one frame per clip in order.
    pub fn soft_labels(&self, videos: &[&SyntheticVideo], rng: &mut impl Rng) -> Result<Matrix<T>> {
        let mut frames = Vec::with_capacity(videos.len());
        for v in videos {
            self.check_clip(v)?;
            frames.push(v.frame(rng.gen_range(0..v.shape.frames)));
        }
        Ok(self.predict_frames(&frames))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let stored = StoredScene {
            encoder: self.encoder,
            frame: self.frame,
            num_scenes: self.num_scenes,
            heldout_accuracy: self.heldout_accuracy,
            params: self.params.to_serializable(),
        };
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, serde_json::to_vec(&stored)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingArtifact(path.to_path_buf()));
        }
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let s: StoredScene = serde_json::from_slice(&bytes).map_err(|e| Error::Malformed {
            what: "scene classifier checkpoint",
            detail: e.to_string(),
        })?;
        Ok(Self {
            encoder: s.encoder,
            frame: s.frame,
            num_scenes: s.num_scenes,
            heldout_accuracy: s.heldout_accuracy,
            params: ParamStore::from_serializable(&s.params),
        })
    }
}

#[derive(Serialize, Deserialize)]
struct StoredScene {
    encoder: EncoderConfig,
    frame: ClipShape,
    num_scenes: usize,
    heldout_accuracy: f64,
    params: std::collections::BTreeMap<String, StoredArray>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_dataset, BiasSpec};

    fn small_clip() -> ClipShape {
        ClipShape {
            frames: 4,
            height: 16,
            width: 16,
            channels: 3,
        }
    }

    fn trained() -> FrozenSceneClassifier<f32> {
        pretrain_scene_classifier(
            &small_clip(),
            4,
            &RenderSpec::default(),
            &ScenePretrainConfig {
                train_images: 200,
                heldout_images: 100,
                ..ScenePretrainConfig::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn pretraining_reaches_required_accuracy() {
        let c = trained();
        assert!(c.heldout_accuracy() >= REQUIRED_ACCURACY);
    }

    #[test]
    fn soft_labels_are_distributions_and_reproducible() {
        let c = trained();
        let data = generate_dataset(6, small_clip(), &BiasSpec::default(), 2).unwrap();
        let refs: Vec<_> = data.iter().collect();
        let a = c.soft_labels(&refs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = c.soft_labels(&refs, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a, b);
        for i in 0..a.rows() {
            let s: f32 = a.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
        let one = c.soft_label(&data[0], &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        assert_eq!(one.len(), 4);
    }

    #[test]
    fn identical_frames_give_identical_labels() {
        let c = trained();
        let data = generate_dataset(1, small_clip(), &BiasSpec::default(), 5).unwrap();
        let dup = data[0].reorder_frames(&[2, 2, 2, 2]);
        let first = c.soft_label(&dup, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        for seed in 1..5 {
            let other = c.soft_label(&dup, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            assert_eq!(first, other);
        }
        let frame = data[0].frame(0);
        assert_eq!(c.predict_frames(&[frame]), c.predict_frames(&[frame]));
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scene.json");
        c.save(&path).unwrap();
        let back = FrozenSceneClassifier::<f32>::load(&path).unwrap();
        assert_eq!(back, c);
        assert!(matches!(
            FrozenSceneClassifier::<f32>::load(&dir.path().join("nope.json")),
            Err(Error::MissingArtifact(_))
        ));
    }
}
