//! Named parameter storage and the AdamW optimiser.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Gradients, Tape, Var};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Parameters keyed by a stable dotted name such as
/// `unbiased.blocks.0.attn.qkv.w`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: BTreeMap<String, Matrix<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Matrix<T>) {
        self.params.insert(name.into(), value);
    }

    /// Gaussian initialisation with standard deviation `std`.
    pub fn init_normal(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        std: f64,
        rng: &mut impl Rng,
    ) {
        let normal = Normal::new(0.0, std).expect("valid std");
        let m = Matrix::from_fn(rows, cols, |_, _| T::lit(normal.sample(rng)));
        self.insert(name, m);
    }

    pub fn get(&self, name: &str) -> Option<&Matrix<T>> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Matrix<T>> {
        self.params.get_mut(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Matrix<T>)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(Matrix::len).sum()
    }

    /// Shapes by name; identical configs produce identical maps.
    pub fn shapes(&self) -> BTreeMap<String, (usize, usize)> {
        self.params
            .iter()
            .map(|(k, v)| (k.clone(), v.shape()))
            .collect()
    }

    /// Puts every parameter on `tape`; `trainable` selects whether they
    /// receive gradients.
    pub fn bind(&self, tape: &mut Tape<T>, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|(k, v)| {
                let var = if trainable {
                    tape.param(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// SHA-256 over names, shapes and values.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (k, v) in &self.params {
            h.update(k.as_bytes());
            h.update((v.rows() as u64).to_le_bytes());
            h.update((v.cols() as u64).to_le_bytes());
            for x in v.as_slice() {
                h.update(x.to_f64_lossy().to_le_bytes());
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    pub fn to_serializable(&self) -> BTreeMap<String, StoredArray> {
        self.params
            .iter()
            .map(|(k, v)| {
                (
                    k.clone(),
                    StoredArray {
                        rows: v.rows(),
                        cols: v.cols(),
                        data: v.as_slice().iter().map(|x| x.to_f64_lossy()).collect(),
                    },
                )
            })
            .collect()
    }

    pub fn from_serializable(map: &BTreeMap<String, StoredArray>) -> Self {
        Self {
            params: map
                .iter()
                .map(|(k, a)| {
                    (
                        k.clone(),
                        Matrix::from_vec(a.rows, a.cols, a.data.iter().map(|&x| T::lit(x)).collect()),
                    )
                })
                .collect(),
        }
    }
}

/// A parameter array as written to checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredArray {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Tape handles for a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    vars: BTreeMap<String, Var>,
}

impl Bound {
    /// Panics on an unknown name: parameter names are fixed by the model
    /// constructor, so a miss is a programming error.
    pub fn get(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradients by parameter name; parameters no gradient reached are
    /// omitted.
    pub fn grads<T: Scalar>(&self, g: &Gradients<T>) -> BTreeMap<String, Matrix<T>> {
        self.vars
            .iter()
            .filter_map(|(k, &v)| g.get(v).map(|m| (k.clone(), m.clone())))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 5e-5,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
        }
    }
}

/// Adam with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW<T> {
    config: AdamWConfig,
    step: u64,
    first: BTreeMap<String, Matrix<T>>,
    second: BTreeMap<String, Matrix<T>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: AdamWConfig) -> Self {
        Self {
            config,
            step: 0,
            first: BTreeMap::new(),
            second: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Updates every parameter that has an entry in `grads`.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &BTreeMap<String, Matrix<T>>) {
        self.step += 1;
        let c = &self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let lr = T::lit(c.lr);
        let decay = T::one() - lr * T::lit(c.weight_decay);
        let eps = T::lit(c.eps);
        let bc1 = T::one() - T::lit(c.beta1.powi(self.step as i32));
        let bc2 = T::one() - T::lit(c.beta2.powi(self.step as i32));
        for (name, g) in grads {
            let Some(p) = params.get_mut(name) else {
                continue;
            };
            let m = self
                .first
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            let v = self
                .second
                .entry(name.clone())
                .or_insert_with(|| Matrix::zeros(g.rows(), g.cols()));
            for (((pp, &gg), mm), vv) in p
                .as_mut_slice()
                .iter_mut()
                .zip(g.as_slice())
                .zip(m.as_mut_slice())
                .zip(v.as_mut_slice())
            {
                *mm = b1 * *mm + (T::one() - b1) * gg;
                *vv = b2 * *vv + (T::one() - b2) * gg * gg;
                let mhat = *mm / bc1;
                let vhat = *vv / bc2;
                *pp = *pp * decay - lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}
