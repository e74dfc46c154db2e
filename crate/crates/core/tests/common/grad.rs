//! Gradient checks on the full training objective of a tiny f64 model.
//!
//! The tape gradient of the objective is not the derivative of the total
//! loss: stop-gradients and the reversal layer alter it by design. For each
//! parameter group the expected gradient is the derivative of a group
//! surrogate assembled from the separately logged loss terms:
//!
//! - unbiased stream: `alpha (ce_u - beta scene_u + lambda ind)`
//! - biased stream:   `(1 - alpha) (ce_b + beta scene_b - lambda ind)`
//! - scene head:      `beta (alpha scene_u + (1 - alpha) scene_b)`

use std::collections::BTreeMap;

use debias::autodiff::Tape;
use debias::experiment::objective;
use debias::hsic::KernelSpec;
use debias::losses::{breakdown, LossBreakdown, LossContext, LossWeights};
use debias::params::ParamStore;
use debias::streams::{BiasedStreamKind, InputTransform, TwoStreamModel};
use debias::synth::SyntheticVideo;
use debias::tensor::Matrix;
use rand::Rng;

use super::{random_simplex, rng, tiny_clips, tiny_model};

pub struct Fixture {
    pub model: TwoStreamModel<f64>,
    pub clips: Vec<SyntheticVideo>,
    pub labels: Vec<usize>,
    pub soft: Matrix<f64>,
    pub orders: Vec<Vec<usize>>,
    pub weights: LossWeights,
    pub kernel: KernelSpec,
    /// Epoch past `t0`, so the scene terms are active.
    pub epoch: usize,
}

impl Fixture {
    pub fn new(kind: BiasedStreamKind, seed: u64) -> Self {
        let model = TwoStreamModel::<f64>::new(tiny_model(kind, true), seed).unwrap();
        let clips = tiny_clips(6, seed + 1);
        let mut r = rng(seed + 2);
        let orders = clips
            .iter()
            .map(|_| InputTransform::Shuffle.frame_order(4, &mut r))
            .collect();
        Self {
            model,
            labels: clips.iter().map(|c| c.action).collect(),
            soft: random_simplex(&mut r, clips.len(), 4),
            clips,
            orders,
            weights: LossWeights {
                alpha: 0.5,
                beta: 0.1,
                lambda: 1000.0,
                t0: 0,
            },
            kernel: KernelSpec::median(),
            epoch: 1,
        }
    }

    /// Loss terms and tape gradients for `params`.
    pub fn run(&self, params: &ParamStore<f64>) -> (LossBreakdown, BTreeMap<String, Matrix<f64>>) {
        let mut model = self.model.clone();
        model.params = params.clone();
        let refs: Vec<&SyntheticVideo> = self.clips.iter().collect();
        let ctx = LossContext {
            labels: &self.labels,
            soft_labels: Some(&self.soft),
            epoch: self.epoch,
            weights: &self.weights,
            kernel: &self.kernel,
        };
        let mut tape = Tape::new();
        let bound = model.params.bind(&mut tape, true);
        let obj = objective(&model, &mut tape, &bound, &refs, Some(&self.orders), &ctx).unwrap();
        let b = breakdown(&tape, &obj.unbiased, obj.biased.as_ref(), obj.total, self.weights.beta, (0, 0))
            .unwrap();
        (b, bound.grads(&tape.backward(obj.total)))
    }

    pub fn surrogate(&self, name: &str, b: &LossBreakdown) -> f64 {
        let LossWeights {
            alpha, beta, lambda, ..
        } = self.weights;
        if name.starts_with("unbiased.") || name.starts_with("head_u.") {
            alpha * (b.ce_u - beta * b.scene_u + lambda * b.ind)
        } else if name.starts_with("biased.") || name.starts_with("head_b.") {
            (1.0 - alpha) * (b.ce_b + beta * b.scene_b - lambda * b.ind)
        } else if name.starts_with("head_s.") {
            beta * (alpha * b.scene_u + (1.0 - alpha) * b.scene_b)
        } else {
            panic!("unexpected parameter {name}")
        }
    }
}

#[derive(Debug)]
pub struct FdReport {
    pub checked: usize,
    pub max_rel_err: f64,
    pub worst: String,
}

/// Compares tape gradients with central differences of the group
/// surrogates on `count` randomly sampled scalar parameters.
pub fn full_graph_fd(kind: BiasedStreamKind, seed: u64, count: usize) -> FdReport {
    let fx = Fixture::new(kind, seed);
    let (_, grads) = fx.run(&fx.model.params);
    let names: Vec<String> = fx.model.params.names().cloned().collect();
    let mut r = rng(seed + 3);
    let h = 1e-5;
    let mut report = FdReport {
        checked: 0,
        max_rel_err: 0.0,
        worst: String::new(),
    };
    while report.checked < count {
        let name = &names[r.gen_range(0..names.len())];
        let len = fx.model.params.get(name).unwrap().len();
        let idx = r.gen_range(0..len);
        let eval = |delta: f64| {
            let mut p = fx.model.params.clone();
            p.get_mut(name).unwrap().as_mut_slice()[idx] += delta;
            fx.surrogate(name, &fx.run(&p).0)
        };
        let fd = (eval(h) - eval(-h)) / (2.0 * h);
        let an = grads.get(name).map_or(0.0, |g| g.as_slice()[idx]);
        // Entries whose gradient is negligible against the objective scale
        // are compared absolutely.
        let err = if fd.abs().max(an.abs()) < 1e-6 {
            (fd - an).abs() * 1e3
        } else {
            (fd - an).abs() / fd.abs().max(an.abs())
        };
        if err > report.max_rel_err {
            report.max_rel_err = err;
            report.worst = format!("{name}[{idx}]: fd {fd:.6e} analytic {an:.6e}");
        }
        report.checked += 1;
    }
    report
}

/// Largest deviation between the unbiased-encoder gradient of the scene
/// loss through the reversal layer and the negated gradient of the same
/// loss without it.
pub fn grl_negation_gap(seed: u64) -> f64 {
    let fx = Fixture::new(BiasedStreamKind::ExtractorBased, seed);
    let refs: Vec<&SyntheticVideo> = fx.clips.iter().collect();
    let grads = |reversed: bool| {
        let mut tape = Tape::new();
        let bound = fx.model.params.bind(&mut tape, true);
        let out = fx.model.unbiased_on_tape(&mut tape, &bound, &refs).unwrap();
        let logits = if reversed {
            out.scene_logits.unwrap()
        } else {
            tape.linear(out.feature, bound.get("head_s.w"), bound.get("head_s.b"))
        };
        let loss = tape.soft_kl(logits, &fx.soft);
        bound.grads(&tape.backward(loss))
    };
    let (with, without) = (grads(true), grads(false));
    let mut gap: f64 = 0.0;
    let mut compared = 0;
    for (name, g) in &with {
        let other = &without[name];
        let sign = if name.starts_with("unbiased.") { -1.0 } else { 1.0 };
        for (a, b) in g.as_slice().iter().zip(other.as_slice()) {
            gap = gap.max((a - sign * b).abs());
            compared += 1;
        }
    }
    assert!(compared > 0);
    gap
}

/// Largest gradient magnitude that leaks through either stop-gradient:
/// the independence term of `L_u` into biased parameters, and that of
/// `L_b` into unbiased parameters. Exactly zero when the blocks hold.
pub fn stop_gradient_leak(kind: BiasedStreamKind, seed: u64) -> f64 {
    let fx = Fixture::new(kind, seed);
    let refs: Vec<&SyntheticVideo> = fx.clips.iter().collect();
    let ctx = LossContext {
        labels: &fx.labels,
        soft_labels: Some(&fx.soft),
        epoch: fx.epoch,
        weights: &fx.weights,
        kernel: &fx.kernel,
    };
    let mut leak: f64 = 0.0;
    for from_unbiased in [true, false] {
        let mut tape = Tape::new();
        let bound = fx.model.params.bind(&mut tape, true);
        let obj = objective(&fx.model, &mut tape, &bound, &refs, Some(&fx.orders), &ctx).unwrap();
        let (term, blocked) = if from_unbiased {
            (obj.unbiased.ind.unwrap(), "biased.")
        } else {
            (obj.biased.unwrap().ind.unwrap(), "unbiased.")
        };
        let grads = bound.grads(&tape.backward(term));
        let mut reached = false;
        for (name, g) in &grads {
            if name.starts_with(blocked) {
                leak = leak.max(g.max_abs());
            } else {
                reached |= g.max_abs() > 0.0;
            }
        }
        assert!(reached, "independence term reached no parameters");
    }
    leak
}
