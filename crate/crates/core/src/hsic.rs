//! Biased empirical HSIC between two batched feature sets.
//!
//! The estimator is `(m - 1)^-2 * tr(K H L H)` with gaussian Gram matrices
//! `K`, `L` and the centering matrix `H = I - (1/m) 1 1^T`. The analytic
//! gradient includes the dependence of a median-heuristic bandwidth on the
//! inputs, so it agrees with finite differences of [`hsic_biased`] itself.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Matrix;

/// Bandwidth used when every pairwise distance in a batch is zero.
pub const DEGENERATE_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    #[default]
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "policy", content = "value")]
pub enum BandwidthPolicy {
    Fixed(f64),
    #[default]
    MedianHeuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: BandwidthPolicy,
}

impl KernelSpec {
    pub fn gaussian(sigma: f64) -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth: BandwidthPolicy::Fixed(sigma),
        }
    }

    pub fn median() -> Self {
        Self {
            family: KernelFamily::Gaussian,
            bandwidth: BandwidthPolicy::MedianHeuristic,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.bandwidth {
            BandwidthPolicy::Fixed(s) if !(s > 0.0 && s.is_finite()) => {
                Err(Error::InvalidBandwidth(s))
            }
            _ => Ok(()),
        }
    }
}

/// An `m x d` batch of feature vectors with `m >= 2` and finite entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBatch<T>(Matrix<T>);

impl<T: Scalar> FeatureBatch<T> {
    pub fn new(values: Matrix<T>) -> Result<Self> {
        check_features(&values)?;
        Ok(Self(values))
    }

    pub fn values(&self) -> &Matrix<T> {
        &self.0
    }

    pub fn batch_size(&self) -> usize {
        self.0.rows()
    }

    pub fn dim(&self) -> usize {
        self.0.cols()
    }

    pub fn into_inner(self) -> Matrix<T> {
        self.0
    }
}

pub(crate) fn check_features<T: Scalar>(x: &Matrix<T>) -> Result<()> {
    if x.rows() < 2 {
        return Err(Error::BatchTooSmall(x.rows()));
    }
    if !x.all_finite() {
        return Err(Error::NonFinite("feature batch"));
    }
    Ok(())
}

/// A bandwidth resolved against a concrete batch.
///
/// `support` lists the point pairs whose distance defines the bandwidth
/// together with their weights; it is empty for fixed bandwidths and for the
/// degenerate fallback, where the bandwidth does not depend on the inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedBandwidth<T> {
    pub sigma: T,
    pub support: Vec<(usize, usize, T)>,
}

fn squared_distances<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let m = x.rows();
    let mut d = Matrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let dist: T = x
                .row(i)
                .iter()
                .zip(x.row(j))
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum();
            d[(i, j)] = dist;
            d[(j, i)] = dist;
        }
    }
    d
}

/// Median of the pairwise euclidean distances; if that median is zero the
/// median of the strictly positive distances is used instead, and if every
/// distance is zero the bandwidth falls back to [`DEGENERATE_BANDWIDTH`].
fn median_bandwidth<T: Scalar>(sq: &Matrix<T>) -> ResolvedBandwidth<T> {
    let m = sq.rows();
    let mut pairs: Vec<(T, usize, usize)> = Vec::with_capacity(m * (m - 1) / 2);
    for i in 0..m {
        for j in (i + 1)..m {
            pairs.push((sq[(i, j)].sqrt(), i, j));
        }
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite distances"));
    let pick = |list: &[(T, usize, usize)]| -> ResolvedBandwidth<T> {
        let n = list.len();
        if n % 2 == 1 {
            let (r, i, j) = list[n / 2];
            ResolvedBandwidth {
                sigma: r,
                support: vec![(i, j, T::one())],
            }
        } else {
            let (r1, i1, j1) = list[n / 2 - 1];
            let (r2, i2, j2) = list[n / 2];
            let half = T::lit(0.5);
            ResolvedBandwidth {
                sigma: (r1 + r2) * half,
                support: vec![(i1, j1, half), (i2, j2, half)],
            }
        }
    };
    let resolved = pick(&pairs);
    if resolved.sigma > T::zero() {
        return resolved;
    }
    let positive: Vec<_> = pairs.into_iter().filter(|p| p.0 > T::zero()).collect();
    if positive.is_empty() {
        ResolvedBandwidth {
            sigma: T::lit(DEGENERATE_BANDWIDTH),
            support: Vec::new(),
        }
    } else {
        pick(&positive)
    }
}

fn resolve<T: Scalar>(sq: &Matrix<T>, kernel: &KernelSpec) -> Result<ResolvedBandwidth<T>> {
    kernel.validate()?;
    Ok(match kernel.bandwidth {
        BandwidthPolicy::Fixed(s) => ResolvedBandwidth {
            sigma: T::lit(s),
            support: Vec::new(),
        },
        BandwidthPolicy::MedianHeuristic => median_bandwidth(sq),
    })
}

/// Resolves the bandwidth of `kernel` for the batch `x`.
pub fn resolve_bandwidth<T: Scalar>(
    x: &Matrix<T>,
    kernel: &KernelSpec,
) -> Result<ResolvedBandwidth<T>> {
    check_features(x)?;
    resolve(&squared_distances(x), kernel)
}

fn gaussian_gram<T: Scalar>(sq: &Matrix<T>, sigma: T) -> Matrix<T> {
    let scale = -(T::one() / (T::lit(2.0) * sigma * sigma));
    let m = sq.rows();
    Matrix::from_fn(m, m, |i, j| {
        if i == j {
            T::one()
        } else {
            (sq[(i, j)] * scale).exp()
        }
    })
}

/// Gaussian Gram matrix `K_ij = exp(-||x_i - x_j||^2 / (2 sigma^2))`.
pub fn gram_matrix<T: Scalar>(x: &FeatureBatch<T>, kernel: &KernelSpec) -> Result<Matrix<T>> {
    let sq = squared_distances(x.values());
    let bw = resolve(&sq, kernel)?;
    Ok(gaussian_gram(&sq, bw.sigma))
}

/// `H = I - (1/m) 1 1^T`.
pub fn centering_matrix<T: Scalar>(m: usize) -> Result<Matrix<T>> {
    if m < 2 {
        return Err(Error::BatchTooSmall(m));
    }
    let inv = T::one() / T::from_usize(m).expect("batch size");
    Ok(Matrix::from_fn(m, m, |i, j| {
        if i == j {
            T::one() - inv
        } else {
            -inv
        }
    }))
}

/// `H A H` computed by subtracting row, column and grand means.
fn double_center<T: Scalar>(a: &Matrix<T>) -> Matrix<T> {
    let m = a.rows();
    let mf = T::from_usize(m).expect("batch size");
    let row_mean: Vec<T> = (0..m).map(|i| a.row(i).iter().copied().sum::<T>() / mf).collect();
    let col_mean: Vec<T> = (0..m)
        .map(|j| (0..m).map(|i| a[(i, j)]).sum::<T>() / mf)
        .collect();
    let grand = row_mean.iter().copied().sum::<T>() / mf;
    Matrix::from_fn(m, m, |i, j| a[(i, j)] - row_mean[i] - col_mean[j] + grand)
}

fn normaliser<T: Scalar>(m: usize) -> T {
    let mm1 = T::from_usize(m - 1).expect("batch size");
    T::one() / (mm1 * mm1)
}

fn check_pair<T: Scalar>(x: &Matrix<T>, y: &Matrix<T>) -> Result<()> {
    if x.rows() != y.rows() {
        return Err(Error::BatchMismatch {
            left: x.rows(),
            right: y.rows(),
        });
    }
    check_features(x)?;
    check_features(y)
}

/// Value and input gradients of the HSIC estimator.
#[derive(Debug, Clone)]
pub struct HsicWithGrad<T> {
    pub value: T,
    pub grad_x: Matrix<T>,
    pub grad_y: Matrix<T>,
}

/// Biased HSIC estimator `(m - 1)^-2 tr(K H L H)`.
pub fn hsic_biased<T: Scalar>(
    x: &FeatureBatch<T>,
    y: &FeatureBatch<T>,
    kx: &KernelSpec,
    ky: &KernelSpec,
) -> Result<T> {
    hsic_value(x.values(), y.values(), kx, ky)
}

pub(crate) fn hsic_value<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    kx: &KernelSpec,
    ky: &KernelSpec,
) -> Result<T> {
    check_pair(x, y)?;
    let sx = squared_distances(x);
    let sy = squared_distances(y);
    let k = gaussian_gram(&sx, resolve(&sx, kx)?.sigma);
    let l = gaussian_gram(&sy, resolve(&sy, ky)?.sigma);
    // tr(K H L H) = <HKH, HLH> since H is idempotent; centring both sides
    // makes a constant batch give exactly zero.
    let kc = double_center(&k);
    let lc = double_center(&l);
    let inner: T = kc
        .as_slice()
        .iter()
        .zip(lc.as_slice())
        .map(|(&a, &b)| a * b)
        .sum();
    Ok(normaliser::<T>(x.rows()) * inner)
}

/// HSIC together with its gradient with respect to both inputs.
pub fn hsic_biased_with_grad<T: Scalar>(
    x: &Matrix<T>,
    y: &Matrix<T>,
    kx: &KernelSpec,
    ky: &KernelSpec,
) -> Result<HsicWithGrad<T>> {
    check_pair(x, y)?;
    let m = x.rows();
    let c = normaliser::<T>(m);
    let sx = squared_distances(x);
    let sy = squared_distances(y);
    let bx = resolve(&sx, kx)?;
    let by = resolve(&sy, ky)?;
    let k = gaussian_gram(&sx, bx.sigma);
    let l = gaussian_gram(&sy, by.sigma);
    let kc = double_center(&k);
    let lc = double_center(&l);
    let value = c * kc
        .as_slice()
        .iter()
        .zip(lc.as_slice())
        .map(|(&a, &b)| a * b)
        .sum::<T>();
    // d value / d K = c * HLH and symmetrically for L.
    let grad_x = gram_input_grad(x, &sx, &k, &lc, c, &bx);
    let grad_y = gram_input_grad(y, &sy, &l, &kc, c, &by);
    Ok(HsicWithGrad {
        value,
        grad_x,
        grad_y,
    })
}

/// Back-propagates `d value / d K_ij = c * weight_ij` through the gaussian
/// kernel and, when present, through the data-dependent bandwidth.
fn gram_input_grad<T: Scalar>(
    x: &Matrix<T>,
    sq: &Matrix<T>,
    gram: &Matrix<T>,
    weight: &Matrix<T>,
    c: T,
    bw: &ResolvedBandwidth<T>,
) -> Matrix<T> {
    let (m, d) = x.shape();
    let sigma = bw.sigma;
    let inv_s2 = T::one() / (sigma * sigma);
    let two = T::lit(2.0);
    let mut grad = Matrix::zeros(m, d);
    let mut d_sigma = T::zero();
    for i in 0..m {
        for j in 0..m {
            if i == j {
                continue;
            }
            let g = c * weight[(i, j)] * gram[(i, j)];
            d_sigma += g * sq[(i, j)];
            // Both (i, j) and (j, i) carry this pair's contribution to x_i.
            let coef = -two * g * inv_s2;
            for t in 0..d {
                grad[(i, t)] += coef * (x[(i, t)] - x[(j, t)]);
            }
        }
    }
    if !bw.support.is_empty() {
        d_sigma *= inv_s2 / sigma;
        for &(a, b, w) in &bw.support {
            let r = sq[(a, b)].sqrt();
            if r == T::zero() {
                continue;
            }
            let coef = d_sigma * w / r;
            for t in 0..d {
                let diff = x[(a, t)] - x[(b, t)];
                grad[(a, t)] += coef * diff;
                grad[(b, t)] -= coef * diff;
            }
        }
    }
    grad
}

/// Explicit-sum evaluation of the same estimator, for cross-checking.
///
/// Evaluates `sum_{i,j,k,l} K_ij H_jk L_kl H_li` with every kernel entry and
/// the bandwidth computed by plain loops. Quartic in `m`; test scale only.
pub fn hsic_oracle<T: Scalar>(
    x: &FeatureBatch<T>,
    y: &FeatureBatch<T>,
    kx: &KernelSpec,
    ky: &KernelSpec,
) -> Result<T> {
    let (x, y) = (x.values(), y.values());
    check_pair(x, y)?;
    let m = x.rows();
    let kernel_entries = |z: &Matrix<T>, spec: &KernelSpec| -> Result<Vec<Vec<T>>> {
        spec.validate()?;
        let dist = |i: usize, j: usize| -> T {
            let mut s = T::zero();
            for t in 0..z.cols() {
                let diff = z[(i, t)] - z[(j, t)];
                s += diff * diff;
            }
            s
        };
        let sigma = match spec.bandwidth {
            BandwidthPolicy::Fixed(s) => T::lit(s),
            BandwidthPolicy::MedianHeuristic => {
                let mut all = Vec::new();
                for i in 0..m {
                    for j in 0..i {
                        all.push(dist(i, j).sqrt());
                    }
                }
                let median = |v: &mut Vec<T>| -> T {
                    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    let n = v.len();
                    if n % 2 == 1 {
                        v[n / 2]
                    } else {
                        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
                    }
                };
                let med = median(&mut all);
                if med > T::zero() {
                    med
                } else {
                    let mut pos: Vec<T> = all.into_iter().filter(|&r| r > T::zero()).collect();
                    if pos.is_empty() {
                        T::lit(DEGENERATE_BANDWIDTH)
                    } else {
                        median(&mut pos)
                    }
                }
            }
        };
        let mut out = vec![vec![T::zero(); m]; m];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (-dist(i, j) / (T::lit(2.0) * sigma * sigma)).exp();
            }
        }
        Ok(out)
    };
    let k = kernel_entries(x, kx)?;
    let l = kernel_entries(y, ky)?;
    let mf = T::from_usize(m).unwrap();
    let h = |a: usize, b: usize| -> T {
        let delta = if a == b { T::one() } else { T::zero() };
        delta - T::one() / mf
    };
    let mut total = T::zero();
    for i in 0..m {
        for j in 0..m {
            for kk in 0..m {
                let kh = k[i][j] * h(j, kk);
                for ll in 0..m {
                    total += kh * l[kk][ll] * h(ll, i);
                }
            }
        }
    }
    let mm1 = mf - T::one();
    Ok(total / (mm1 * mm1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn batch(rows: &[Vec<f64>]) -> FeatureBatch<f64> {
        FeatureBatch::new(Matrix::from_rows(rows)).unwrap()
    }

    fn random_batch(rng: &mut ChaCha8Rng, m: usize, d: usize) -> FeatureBatch<f64> {
        FeatureBatch::new(Matrix::from_fn(m, d, |_, _| rng.gen_range(-1.0..1.0))).unwrap()
    }

    #[test]
    fn gram_of_identical_rows_is_all_ones() {
        let x = batch(&[vec![0.3, -1.0], vec![0.3, -1.0]]);
        let k = gram_matrix(&x, &KernelSpec::gaussian(1.0)).unwrap();
        assert_eq!(k, Matrix::filled(2, 2, 1.0));
        // median heuristic falls back to bandwidth 1 on identical points
        let k = gram_matrix(&x, &KernelSpec::median()).unwrap();
        assert_eq!(k, Matrix::filled(2, 2, 1.0));
    }

    #[test]
    fn gram_closed_form_two_points() {
        let x = batch(&[vec![0.0], vec![1.0]]);
        let k = gram_matrix(&x, &KernelSpec::gaussian(1.0)).unwrap();
        assert_eq!(k[(0, 0)], 1.0);
        assert!((k[(0, 1)] - (-0.5f64).exp()).abs() < 1e-15);
        assert_eq!(k[(0, 1)], k[(1, 0)]);
    }

    #[test]
    fn gram_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_batch(&mut rng, 4, 3);
        let sigma = 0.7;
        let k = gram_matrix(&x, &KernelSpec::gaussian(sigma)).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let mut s = 0.0;
                for t in 0..3 {
                    s += (x.values()[(i, t)] - x.values()[(j, t)]).powi(2);
                }
                let expect = (-s / (2.0 * sigma * sigma)).exp();
                assert!((k[(i, j)] - expect).abs() <= 1e-12);
                assert!(k[(i, j)] > 0.0 && k[(i, j)] <= 1.0);
            }
        }
    }

    #[test]
    fn gram_rejects_non_finite() {
        let m = Matrix::from_rows(&[vec![0.0], vec![f64::NAN]]);
        assert!(matches!(FeatureBatch::new(m), Err(Error::NonFinite(_))));
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
    }

    #[test]
    fn centering_matrix_properties() {
        let h2 = centering_matrix::<f64>(2).unwrap();
        assert_eq!(h2, Matrix::from_rows(&[vec![0.5, -0.5], vec![-0.5, 0.5]]));
        let h3 = centering_matrix::<f64>(3).unwrap();
        for i in 0..3 {
            assert!(h3.row(i).iter().sum::<f64>().abs() <= 1e-15);
        }
        let h8 = centering_matrix::<f64>(8).unwrap();
        assert!(h8.matmul(&h8).sub(&h8).max_abs() <= 1e-12);
        assert_eq!(h8, h8.transpose());
        assert!(matches!(centering_matrix::<f64>(1), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn constant_y_gives_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_batch(&mut rng, 6, 2);
        let y = batch(&vec![vec![0.25, 4.0]; 6]);
        let k = KernelSpec::median();
        assert_eq!(hsic_biased(&x, &y, &k, &k).unwrap(), 0.0);
        assert_eq!(hsic_oracle(&x, &y, &k, &k).unwrap().abs() < 1e-15, true);
    }

    #[test]
    fn oracle_matches_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = random_batch(&mut rng, 4, 3);
        let k = KernelSpec::median();
        let v = hsic_biased(&x, &x, &k, &k).unwrap();
        assert!(v > 0.0);
        assert!((v - hsic_oracle(&x, &x, &k, &k).unwrap()).abs() <= 1e-10);
    }

    #[test]
    fn two_point_hand_expansion() {
        // K = L = [[1, e], [e, 1]] with e = exp(-1/2); H = 0.5 [[1,-1],[-1,1]].
        // HKH = (1 - e)/2 [[1,-1],[-1,1]], so tr(KHLH) = tr(HKH HLH) = (1 - e)^2.
        let x = batch(&[vec![0.0], vec![1.0]]);
        let k = KernelSpec::gaussian(1.0);
        let e = (-0.5f64).exp();
        let expect = (1.0 - e).powi(2);
        assert!((hsic_oracle(&x, &x, &k, &k).unwrap() - expect).abs() < 1e-14);
        assert!((hsic_biased(&x, &x, &k, &k).unwrap() - expect).abs() < 1e-14);
    }

    #[test]
    fn mismatched_batches_rejected() {
        let x = batch(&[vec![0.0], vec![1.0]]);
        let y = batch(&[vec![0.0], vec![1.0], vec![2.0]]);
        let k = KernelSpec::median();
        assert!(matches!(
            hsic_biased(&x, &y, &k, &k),
            Err(Error::BatchMismatch { left: 2, right: 3 })
        ));
        let single = Matrix::from_rows(&[vec![1.0]]);
        assert!(matches!(FeatureBatch::new(single), Err(Error::BatchTooSmall(1))));
    }

    #[test]
    fn median_falls_back_to_positive_distances() {
        // five copies of one point and one outlier: most distances are zero
        let mut rows = vec![vec![0.0, 0.0]; 5];
        rows.push(vec![3.0, 4.0]);
        let x = Matrix::from_rows(&rows);
        let bw = resolve_bandwidth(&x, &KernelSpec::median()).unwrap();
        assert_eq!(bw.sigma, 5.0);
    }
}
