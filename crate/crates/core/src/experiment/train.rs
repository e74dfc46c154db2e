//! The epoch loop.

use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::checkpoint::{Checkpoint, CHECKPOINT_FILE};
use super::config::ExperimentConfig;
use super::eval::{evaluate, Evaluation};
use super::runlog::{LogRecord, RunLog, Timing};
use crate::autodiff::{Tape, Var};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::losses::{
    beta_schedule, biased_loss, breakdown, total_loss, unbiased_loss, LossContext, StreamLoss,
};
use crate::params::{AdamW, Bound};
use crate::scalar::Scalar;
use crate::scene::FrozenSceneClassifier;
use crate::streams::{BiasedStreamKind, InputTransform, TwoStreamModel};
use crate::synth::SyntheticVideo;

// Independent ChaCha streams drawn from the run seed.
const STREAM_ORDER: u64 = 1;
const STREAM_TRANSFORM: u64 = 2;
const STREAM_SOFT_LABEL: u64 = 3;

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seed for donor choice and evaluation-time shuffles; fixed per run so
/// every evaluation uses the same variants.
pub fn eval_seed(cfg: &ExperimentConfig) -> u64 {
    cfg.seed ^ 0x5EED_E7A1
}

#[derive(Debug)]
pub struct TrainOutcome<T> {
    pub model: TwoStreamModel<T>,
    pub log: RunLog,
    pub evaluation: Evaluation,
}

/// Tape handles of one batch objective.
#[derive(Debug, Clone, Copy)]
pub struct Objective {
    pub unbiased: StreamLoss,
    pub biased: Option<StreamLoss>,
    /// `alpha L_u + (1 - alpha) L_b`, or `L_u` alone without a biased stream.
    pub total: Var,
}

/// Builds the full training objective for one batch on `tape`.
///
/// `biased_orders` gives the frame order fed to the biased stream for each
/// clip and must be present exactly when the model has a biased stream.
pub fn objective<T: Scalar>(
    model: &TwoStreamModel<T>,
    tape: &mut Tape<T>,
    bound: &Bound,
    videos: &[&SyntheticVideo],
    biased_orders: Option<&[Vec<usize>]>,
    ctx: &LossContext<'_, T>,
) -> Result<Objective> {
    let out_u = model.unbiased_on_tape(tape, bound, videos)?;
    let out_b = match (model.config.biased_kind, biased_orders) {
        (BiasedStreamKind::None, None) => None,
        (BiasedStreamKind::None, Some(_)) => {
            return Err(Error::Config("frame orders given for a model without a biased stream".into()))
        }
        (_, Some(orders)) => Some(model.biased_on_tape(tape, bound, videos, orders)?),
        (_, None) => return Err(Error::Config("the biased stream needs frame orders".into())),
    };
    let unbiased = unbiased_loss(tape, &out_u, out_b.map(|o| o.feature), ctx)?;
    Ok(match out_b {
        Some(ob) => {
            let biased = biased_loss(tape, &ob, out_u.feature, ctx)?;
            let total = total_loss(tape, unbiased.total, biased.total, ctx.weights.alpha);
            Objective {
                unbiased,
                biased: Some(biased),
                total,
            }
        }
        None => Objective {
            unbiased,
            biased: None,
            total: unbiased.total,
        },
    })
}

/// Trains a model from `cfg` on `data`.
///
/// `scene` must be present exactly when scene prediction is enabled. When
/// `out_dir` is given, the run log, timings and checkpoints are written
/// there.
pub fn train<T: Scalar>(
    cfg: &ExperimentConfig,
    data: &Dataset,
    scene: Option<&FrozenSceneClassifier<T>>,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if cfg.model.scene_prediction && scene.is_none() {
        return Err(Error::Config("scene prediction needs a scene classifier".into()));
    }
    if let Some(s) = scene {
        if s.num_scenes() != cfg.data.bias.num_scenes {
            return Err(Error::shape(cfg.data.bias.num_scenes, s.num_scenes()));
        }
    }
    if data.train.len() < cfg.batch_size || data.val.is_empty() {
        return Err(Error::Config(format!(
            "dataset has {} training and {} validation clips; batch size is {}",
            data.train.len(),
            data.val.len(),
            cfg.batch_size
        )));
    }
    for v in data.train.iter().chain(&data.val) {
        if v.shape != cfg.data.clip {
            return Err(Error::shape(cfg.data.clip, v.shape));
        }
    }

    let mut log = match out_dir {
        Some(dir) => RunLog::create(dir)?,
        None => RunLog::in_memory(),
    };
    log.append(LogRecord::Header {
        config_hash: cfg.hash(),
        config: Box::new(cfg.clone()),
    })?;

    let mut model = TwoStreamModel::<T>::new(cfg.model_config(), cfg.seed)?;
    let mut opt = AdamW::<T>::new(cfg.optimizer);
    let mut order_rng = rng_stream(cfg.seed, STREAM_ORDER);
    let mut transform_rng = rng_stream(cfg.seed, STREAM_TRANSFORM);
    let mut soft_rng = rng_stream(cfg.seed, STREAM_SOFT_LABEL);
    let kind = cfg.model.biased_stream_kind;
    let frames = cfg.data.clip.frames;
    let mut indices: Vec<usize> = (0..data.train.len()).collect();
    let mut last_eval = None;

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        indices.shuffle(&mut order_rng);
        let beta_t = beta_schedule(epoch, &cfg.loss);
        // Incomplete trailing batches are dropped so every HSIC estimate
        // uses the same batch size.
        for (step, batch) in indices.chunks_exact(cfg.batch_size).enumerate() {
            let videos: Vec<&SyntheticVideo> = batch.iter().map(|&i| &data.train[i]).collect();
            let labels: Vec<usize> = videos.iter().map(|v| v.action).collect();
            let soft = match scene {
                Some(s) if cfg.model.scene_prediction => Some(s.soft_labels(&videos, &mut soft_rng)?),
                _ => None,
            };
            let ctx = LossContext {
                labels: &labels,
                soft_labels: soft.as_ref(),
                epoch,
                weights: &cfg.loss,
                kernel: &cfg.kernel,
            };

            let mut tape = Tape::<T>::new();
            let bound = model.params.bind(&mut tape, true);
            // Both biased-stream designs see shuffled or single-frame clips,
            // alternating per batch.
            let (transform, orders) = match kind {
                BiasedStreamKind::None => (None, None),
                BiasedStreamKind::ExtractorBased | BiasedStreamKind::InputBased => {
                    let t = InputTransform::alternate(&mut transform_rng);
                    let orders: Vec<Vec<usize>> = videos
                        .iter()
                        .map(|_| t.frame_order(frames, &mut transform_rng))
                        .collect();
                    (Some(t), Some(orders))
                }
            };
            // Diverged parameters surface as non-finite features before any
            // loss term exists; report them as a failed step all the same.
            let obj = objective(&model, &mut tape, &bound, &videos, orders.as_deref(), &ctx)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFiniteLoss {
                        epoch,
                        step,
                        breakdown: format!("non-finite values in the {what}"),
                    },
                    other => other,
                })?;
            let total = obj.total;
            let loss = breakdown(&tape, &obj.unbiased, obj.biased.as_ref(), total, beta_t, (epoch, step))?;
            let grads = bound.grads(&tape.backward(total));
            opt.step(&mut model.params, &grads);
            log.append(LogRecord::Step {
                epoch,
                step,
                transform,
                loss,
            })?;
        }

        let done = epoch + 1;
        if done % cfg.eval_every == 0 || done == cfg.epochs {
            let ev = evaluate(&model, &data.val, &cfg.kernel, cfg.batch_size, eval_seed(cfg))?;
            log.append(LogRecord::Eval {
                epoch,
                metrics: ev.report,
            })?;
            if let Some(dir) = out_dir {
                Checkpoint::new(cfg, done, &model).save(&dir.join(CHECKPOINT_FILE))?;
            }
            last_eval = Some(ev);
        }
        log.append_timing(Timing {
            epoch,
            seconds: started.elapsed().as_secs_f64(),
        })?;
        log.flush()?;
    }

    Ok(TrainOutcome {
        model,
        log,
        evaluation: last_eval.expect("the final epoch always evaluates"),
    })
}
