#![allow(dead_code)]

pub mod grad;

use debias::streams::{BiasedStreamKind, EncoderConfig, ModelConfig, TemporalMode};
use debias::synth::{generate_dataset, BiasSpec, ClipShape, SyntheticVideo};
use debias::tensor::Matrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Median of pairwise euclidean distances, with the positive-distance and
/// unit fallbacks.
fn oracle_bandwidth(x: &[Vec<f64>]) -> f64 {
    let mut d = Vec::new();
    for i in 0..x.len() {
        for j in (i + 1)..x.len() {
            let s: f64 = x[i].iter().zip(&x[j]).map(|(a, b)| (a - b).powi(2)).sum();
            d.push(s.sqrt());
        }
    }
    let med = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    };
    let m = med(&mut d.clone());
    if m > 0.0 {
        return m;
    }
    let mut pos: Vec<f64> = d.into_iter().filter(|&v| v > 0.0).collect();
    if pos.is_empty() {
        1.0
    } else {
        med(&mut pos)
    }
}

fn oracle_gram(x: &[Vec<f64>], sigma: f64) -> Vec<Vec<f64>> {
    x.iter()
        .map(|a| {
            x.iter()
                .map(|b| {
                    let s: f64 = a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum();
                    (-s / (2.0 * sigma * sigma)).exp()
                })
                .collect()
        })
        .collect()
}

/// Literal `(m-1)^-2 sum_{ijkl} K_ij H_jk L_kl H_li` with gaussian kernels
/// at the median-heuristic bandwidth, or at `sigma` when given.
pub fn hsic_reference(x: &[Vec<f64>], y: &[Vec<f64>], sigma: Option<f64>) -> f64 {
    let m = x.len();
    let k = oracle_gram(x, sigma.unwrap_or_else(|| oracle_bandwidth(x)));
    let l = oracle_gram(y, sigma.unwrap_or_else(|| oracle_bandwidth(y)));
    let h = |i: usize, j: usize| (if i == j { 1.0 } else { 0.0 }) - 1.0 / m as f64;
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            for kk in 0..m {
                for ll in 0..m {
                    total += k[i][j] * h(j, kk) * l[kk][ll] * h(ll, i);
                }
            }
        }
    }
    total / ((m - 1) as f64).powi(2)
}

pub fn rows(m: &Matrix<f64>) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

pub fn normal_matrix(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tiny_clip() -> ClipShape {
    ClipShape {
        frames: 4,
        height: 8,
        width: 8,
        channels: 3,
    }
}

pub fn tiny_encoder(mode: TemporalMode) -> EncoderConfig {
    EncoderConfig {
        embed_dim: 8,
        depth: 1,
        heads: 2,
        patch_size: 4,
        temporal_mode: mode,
        mlp_ratio: 2,
    }
}

pub fn tiny_model(kind: BiasedStreamKind, scene: bool) -> ModelConfig {
    ModelConfig {
        clip: tiny_clip(),
        num_actions: 4,
        num_scenes: 4,
        unbiased: tiny_encoder(TemporalMode::Spatiotemporal),
        extractor: tiny_encoder(TemporalMode::PerFrame),
        biased_kind: kind,
        scene_prediction: scene,
        grl_strength: 1.0,
    }
}

pub fn tiny_clips(n: usize, seed: u64) -> Vec<SyntheticVideo> {
    let mut render = debias::synth::RenderSpec::default();
    render.fg_size = 3;
    render.speed = 1;
    debias::synth::generate_dataset_with(n, tiny_clip(), &BiasSpec::new(4, 4, 0.9), &render, seed, 0)
        .expect("tiny clips")
}

pub fn default_clips(n: usize, seed: u64) -> Vec<SyntheticVideo> {
    generate_dataset(n, ClipShape::default(), &BiasSpec::default(), seed).expect("clips")
}

/// Soft labels drawn uniformly from the simplex interior.
pub fn random_simplex(rng: &mut impl Rng, rows: usize, cols: usize) -> Matrix<f64> {
    let mut m = Matrix::from_fn(rows, cols, |_, _| rng.gen_range(0.1..1.0));
    for i in 0..rows {
        let s: f64 = m.row(i).iter().sum();
        for v in m.row_mut(i) {
            *v /= s;
        }
    }
    m
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// A complete experiment small enough to train in well under a second per
/// epoch.
pub fn tiny_experiment(kind: BiasedStreamKind, scene: bool) -> debias::experiment::ExperimentConfig {
    let mut c = debias::experiment::ExperimentConfig::default();
    c.epochs = 3;
    c.batch_size = 8;
    c.eval_every = 2;
    c.data.clip = tiny_clip();
    c.data.render.fg_size = 3;
    c.data.render.speed = 1;
    c.data.n_train = 32;
    c.data.n_val = 16;
    c.model.unbiased = tiny_encoder(TemporalMode::Spatiotemporal);
    c.model.extractor = tiny_encoder(TemporalMode::PerFrame);
    c.model.biased_stream_kind = kind;
    c.model.scene_prediction = scene;
    c.optimizer.lr = 1e-3;
    c.loss.t0 = 1;
    c.scene_pretrain.encoder = tiny_encoder(TemporalMode::PerFrame);
    c
}

/// Twenty records with hand-counted metrics. Actions cycle 0..4.
///
/// - original correct for records 0..16 (16 of 20)
/// - background-only correct for 0..10 (10), so BOR = 10/16
/// - human-only correct for 4..18 (14), so HOR = 14/16
/// - swapped correct for 0..8 (8 of 20); of the 12 wrong, records 8..17
///   name the donor's action (9), so SBErr = 9/12
///
/// Returns the records and `[top1, BOR, HOR, SHAcc, SBErr]`.
pub fn metric_fixture() -> (Vec<debias::metrics::PredictionRecord>, [f64; 5]) {
    let records = (0..20)
        .map(|i| {
            let t = i % 4;
            let wrong = (t + 1) % 4;
            let src = (t + 2) % 4;
            debias::metrics::PredictionRecord {
                video_id: i,
                true_action: t,
                pred_original: if i < 16 { t } else { wrong },
                pred_bg_only: if i < 10 { t } else { wrong },
                pred_human_only: if (4..18).contains(&i) { t } else { (t + 3) % 4 },
                pred_bg_swapped: match i {
                    0..=7 => t,
                    8..=16 => src,
                    _ => wrong,
                },
                swap_source_action: src,
            }
        })
        .collect();
    (records, [0.8, 0.625, 0.875, 0.4, 0.75])
}
