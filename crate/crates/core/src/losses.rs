//! Per-stream losses and their combination.
//!
//! ```text
//! L_u = CE(y_u, y) + beta(t) KL_u + lambda HSIC(sg(f_b), f_u)
//! L_b = CE(y_b, y) + beta(t) KL_b - lambda HSIC(f_b, sg(f_u))
//! L   = alpha L_u + (1 - alpha) L_b
//! ```
//!
//! Stop-gradient is applied to the features: the detached feature is a tape
//! constant, so the other stream's parameters receive nothing from that
//! term.

use serde::{Deserialize, Serialize};

use crate::autodiff::{kl_rows, Tape, Var};
use crate::error::{Error, Result};
use crate::hsic::KernelSpec;
use crate::scalar::Scalar;
use crate::streams::StreamVars;
use crate::tensor::Matrix;

pub const SIMPLEX_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub t0: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 0.1,
            lambda: 1000.0,
            t0: 15,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::Config(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if !(self.beta >= 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("beta and lambda must be non-negative".into()));
        }
        Ok(())
    }
}

/// `beta(t) = u(t - t0) beta`, active from epoch `t0` onwards.
pub fn beta_schedule(epoch: usize, w: &LossWeights) -> f64 {
    if epoch >= w.t0 {
        w.beta
    } else {
        0.0
    }
}

/// Every scalar of one training step's objective.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub ce_u: f64,
    pub ce_b: f64,
    pub scene_u: f64,
    pub scene_b: f64,
    pub ind: f64,
    pub total_u: f64,
    pub total_b: f64,
    pub total: f64,
    pub beta_t: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        [
            self.ce_u,
            self.ce_b,
            self.scene_u,
            self.scene_b,
            self.ind,
            self.total_u,
            self.total_b,
            self.total,
            self.beta_t,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Checks that every row of `soft` lies on the probability simplex.
pub fn check_simplex<T: Scalar>(soft: &Matrix<T>) -> Result<()> {
    for i in 0..soft.rows() {
        let row = soft.row(i);
        let sum: f64 = row.iter().map(|v| v.to_f64_lossy()).sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE || row.iter().any(|&v| v < T::zero()) {
            return Err(Error::NotSimplex { sum });
        }
    }
    Ok(())
}

/// `KL(soft || softmax(logits))` averaged over rows.
pub fn scene_kl<T: Scalar>(logits: &Matrix<T>, soft: &Matrix<T>) -> Result<T> {
    if logits.shape() != soft.shape() {
        return Err(Error::shape(logits.shape(), soft.shape()));
    }
    check_simplex(soft)?;
    Ok(kl_rows(logits, soft))
}

/// Tape handles for the terms of one stream's loss.
#[derive(Debug, Clone, Copy)]
pub struct StreamLoss {
    pub total: Var,
    pub ce: Var,
    pub scene: Option<Var>,
    pub ind: Option<Var>,
}

/// Inputs shared by both stream losses.
#[derive(Debug, Clone, Copy)]
pub struct LossContext<'a, T> {
    pub labels: &'a [usize],
    /// Scene soft labels, one row per clip; required when the stream has
    /// scene logits.
    pub soft_labels: Option<&'a Matrix<T>>,
    pub epoch: usize,
    pub weights: &'a LossWeights,
    pub kernel: &'a KernelSpec,
}

fn scene_term<T: Scalar>(
    tape: &mut Tape<T>,
    logits: Option<Var>,
    ctx: &LossContext<'_, T>,
) -> Result<Option<Var>> {
    let Some(logits) = logits else {
        return Ok(None);
    };
    let soft = ctx
        .soft_labels
        .ok_or_else(|| Error::Config("scene logits present but no soft labels".into()))?;
    if soft.shape() != tape.value(logits).shape() {
        return Err(Error::shape(tape.value(logits).shape(), soft.shape()));
    }
    check_simplex(soft)?;
    Ok(Some(tape.soft_kl(logits, soft)))
}

fn check_labels<T: Scalar>(tape: &Tape<T>, out: &StreamVars, labels: &[usize]) -> Result<()> {
    let logits = tape.value(out.action_logits);
    if logits.rows() != labels.len() {
        return Err(Error::shape(logits.rows(), labels.len()));
    }
    if labels.iter().any(|&y| y >= logits.cols()) {
        return Err(Error::Config("action label out of range".into()));
    }
    Ok(())
}

fn assemble<T: Scalar>(
    tape: &mut Tape<T>,
    ce: Var,
    scene: Option<Var>,
    ind: Option<Var>,
    ctx: &LossContext<'_, T>,
    ind_sign: f64,
) -> Var {
    let mut total = ce;
    if let Some(s) = scene {
        let weighted = tape.scale(s, T::lit(beta_schedule(ctx.epoch, ctx.weights)));
        total = tape.add(total, weighted);
    }
    if let Some(i) = ind {
        let weighted = tape.scale(i, T::lit(ind_sign * ctx.weights.lambda));
        total = tape.add(total, weighted);
    }
    total
}

/// Unbiased-stream loss. `f_b` is detached here, so only the unbiased
/// stream is pushed towards independence.
pub fn unbiased_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out_u: &StreamVars,
    f_b: Option<Var>,
    ctx: &LossContext<'_, T>,
) -> Result<StreamLoss> {
    check_labels(tape, out_u, ctx.labels)?;
    let ce = tape.cross_entropy(out_u.action_logits, ctx.labels);
    let scene = scene_term(tape, out_u.scene_logits, ctx)?;
    let ind = match f_b {
        Some(f_b) => {
            let fixed = tape.detach(f_b);
            Some(tape.hsic(fixed, out_u.feature, ctx.kernel, ctx.kernel)?)
        }
        None => None,
    };
    let total = assemble(tape, ce, scene, ind, ctx, 1.0);
    Ok(StreamLoss {
        total,
        ce,
        scene,
        ind,
    })
}

/// Biased-stream loss. The independence term enters with a negative sign
/// and `f_u` detached, so the biased stream is driven towards the unbiased
/// features.
pub fn biased_loss<T: Scalar>(
    tape: &mut Tape<T>,
    out_b: &StreamVars,
    f_u: Var,
    ctx: &LossContext<'_, T>,
) -> Result<StreamLoss> {
    check_labels(tape, out_b, ctx.labels)?;
    let ce = tape.cross_entropy(out_b.action_logits, ctx.labels);
    let scene = scene_term(tape, out_b.scene_logits, ctx)?;
    let fixed = tape.detach(f_u);
    let ind = tape.hsic(out_b.feature, fixed, ctx.kernel, ctx.kernel)?;
    let total = assemble(tape, ce, scene, Some(ind), ctx, -1.0);
    Ok(StreamLoss {
        total,
        ce,
        scene,
        ind: Some(ind),
    })
}

/// `alpha L_u + (1 - alpha) L_b`.
pub fn total_loss<T: Scalar>(tape: &mut Tape<T>, l_u: Var, l_b: Var, alpha: f64) -> Var {
    let a = tape.scale(l_u, T::lit(alpha));
    let b = tape.scale(l_b, T::lit(1.0 - alpha));
    tape.add(a, b)
}

/// Scalar form of [`total_loss`].
pub fn combine(l_u: f64, l_b: f64, alpha: f64) -> f64 {
    alpha * l_u + (1.0 - alpha) * l_b
}

/// Reads every term off the tape. Fails on any non-finite value.
pub fn breakdown<T: Scalar>(
    tape: &Tape<T>,
    lu: &StreamLoss,
    lb: Option<&StreamLoss>,
    total: Var,
    beta_t: f64,
    (epoch, step): (usize, usize),
) -> Result<LossBreakdown> {
    let v = |x: Var| tape.value(x).item().to_f64_lossy();
    let opt = |x: Option<Var>| x.map_or(0.0, v);
    let b = LossBreakdown {
        ce_u: v(lu.ce),
        ce_b: lb.map_or(0.0, |l| v(l.ce)),
        scene_u: opt(lu.scene),
        scene_b: lb.map_or(0.0, |l| opt(l.scene)),
        ind: opt(lu.ind),
        total_u: v(lu.total),
        total_b: lb.map_or(0.0, |l| v(l.total)),
        total: v(total),
        beta_t,
    };
    if !b.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch,
            step,
            breakdown: format!("{b:?}"),
        });
    }
    Ok(b)
}
