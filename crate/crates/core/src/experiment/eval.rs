//! Variant-video evaluation of the unbiased stream.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::hsic::KernelSpec;
use crate::metrics::{inter_stream_hsic, MetricsReport, PredictionRecord};
use crate::scalar::Scalar;
use crate::streams::{BiasedStreamKind, InputTransform, StreamOutput, TwoStreamModel};
use crate::synth::{choose_donors, video_seed, SyntheticVideo, VariantSet, MID_GRAY};
use crate::tensor::Matrix;

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub records: Vec<PredictionRecord>,
}

fn argmax(v: &[impl Scalar]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

fn predictions<T: Scalar>(model: &TwoStreamModel<T>, clips: &[&SyntheticVideo]) -> Result<Vec<usize>> {
    Ok(model
        .forward_unbiased(clips)?
        .iter()
        .map(|o| argmax(&o.action_logits))
        .collect())
}

fn features<T: Scalar>(outs: &[StreamOutput<T>]) -> Matrix<T> {
    let rows: Vec<Vec<T>> = outs.iter().map(|o| o.feature.clone()).collect();
    Matrix::from_rows(&rows)
}

struct BatchResult<T> {
    records: Vec<PredictionRecord>,
    features: Option<(Matrix<T>, Matrix<T>)>,
}

/// Builds the four variants of every clip, predicts each with the unbiased
/// stream and computes the metrics. Inter-stream HSIC is the mean over
/// batches of `batch_size` clips; the input-based biased stream sees
/// shuffled clips. Batches run on the rayon pool; results do not depend on
/// the number of workers.
pub fn evaluate<T: Scalar>(
    model: &TwoStreamModel<T>,
    videos: &[SyntheticVideo],
    kernel: &KernelSpec,
    batch_size: usize,
    seed: u64,
) -> Result<Evaluation> {
    if videos.is_empty() {
        return Err(Error::EmptyRecords);
    }
    if batch_size == 0 {
        return Err(Error::Config("evaluation batch size must be positive".into()));
    }
    for v in videos {
        if v.shape != model.config.clip {
            return Err(Error::shape(model.config.clip, v.shape));
        }
    }
    let donors = choose_donors(videos, seed)?;
    let fill = vec![MID_GRAY; model.config.clip.channels];
    let chunks: Vec<(usize, &[SyntheticVideo])> = videos.chunks(batch_size).enumerate().collect();
    let results: Vec<BatchResult<T>> = chunks
        .par_iter()
        .map(|&(b, chunk)| -> Result<BatchResult<T>> {
            let offset = b * batch_size;
            let sets = chunk
                .iter()
                .enumerate()
                .map(|(i, v)| VariantSet::build(v, &videos[donors[offset + i]], &fill))
                .collect::<Result<Vec<_>>>()?;
            let pick = |f: fn(&VariantSet) -> &SyntheticVideo| -> Vec<&SyntheticVideo> {
                sets.iter().map(f).collect()
            };
            let originals = pick(|s| &s.original);
            let out_u = model.forward_unbiased(&originals)?;
            let orig: Vec<usize> = out_u.iter().map(|o| argmax(&o.action_logits)).collect();
            let bg = predictions(model, &pick(|s| &s.background_only))?;
            let human = predictions(model, &pick(|s| &s.human_only))?;
            let swapped = predictions(model, &pick(|s| &s.background_swapped))?;
            let records = sets
                .iter()
                .enumerate()
                .map(|(i, s)| PredictionRecord {
                    video_id: s.original.id,
                    true_action: s.original.action,
                    pred_original: orig[i],
                    pred_bg_only: bg[i],
                    pred_human_only: human[i],
                    pred_bg_swapped: swapped[i],
                    swap_source_action: s.swap_source_action,
                })
                .collect();
            let out_b = match model.config.biased_kind {
                _ if chunk.len() < 2 => None,
                BiasedStreamKind::None => None,
                BiasedStreamKind::ExtractorBased => Some(model.forward_biased_extractor(&originals)?),
                BiasedStreamKind::InputBased => {
                    let mut rng = ChaCha8Rng::seed_from_u64(video_seed(seed, b));
                    Some(model.forward_biased_input(&originals, InputTransform::Shuffle, &mut rng)?)
                }
            };
            Ok(BatchResult {
                records,
                features: out_b.map(|ob| (features(&ob), features(&out_u))),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(videos.len());
    let mut pairs = Vec::new();
    for r in results {
        records.extend(r.records);
        pairs.extend(r.features);
    }
    let hsic = if pairs.is_empty() {
        None
    } else {
        Some(inter_stream_hsic(&pairs, kernel)?)
    };
    Ok(Evaluation {
        report: MetricsReport::from_records(&records, hsic)?,
        records,
    })
}
