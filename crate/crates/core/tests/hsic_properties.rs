mod common;

use common::{hsic_reference, normal_matrix, rel_err, rng, rows};
use debias::hsic::{hsic_biased, hsic_biased_with_grad, FeatureBatch, KernelSpec};
use debias::tensor::Matrix;
use proptest::prelude::*;

fn batch(m: &Matrix<f64>) -> FeatureBatch<f64> {
    FeatureBatch::new(m.clone()).unwrap()
}

fn hsic(x: &Matrix<f64>, y: &Matrix<f64>) -> f64 {
    let k = KernelSpec::median();
    hsic_biased(&batch(x), &batch(y), &k, &k).unwrap()
}

fn features(m: usize, d: usize) -> impl Strategy<Value = Matrix<f64>> {
    proptest::collection::vec(-3.0f64..3.0, m * d).prop_map(move |v| Matrix::from_vec(m, d, v))
}

fn pair() -> impl Strategy<Value = (Matrix<f64>, Matrix<f64>)> {
    (2usize..12, 1usize..6, 1usize..6)
        .prop_flat_map(|(m, dx, dy)| (features(m, dx), features(m, dy)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn non_negative((x, y) in pair()) {
        prop_assert!(hsic(&x, &y) >= -1e-12);
    }

    #[test]
    fn symmetric((x, y) in pair()) {
        let a = hsic(&x, &y);
        let b = hsic(&y, &x);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn joint_row_permutation_leaves_value_unchanged(
        (x, y) in pair(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let mut perm: Vec<usize> = (0..x.rows()).collect();
        perm.shuffle(&mut rng(seed));
        let a = hsic(&x, &y);
        let b = hsic(&x.select_rows(&perm), &y.select_rows(&perm));
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn matches_reference_sum((x, y) in pair()) {
        let a = hsic(&x, &y);
        let b = hsic_reference(&rows(&x), &rows(&y), None);
        prop_assert!((a - b).abs() <= 1e-10, "{a} vs {b}");
    }

    #[test]
    fn constant_batch_is_independent(x in features(6, 3), c in -2.0f64..2.0) {
        let y = Matrix::filled(6, 2, c);
        prop_assert_eq!(hsic(&x, &y), 0.0);
    }
}

#[test]
fn dependence_exceeds_independence() {
    for seed in 0..5 {
        let mut r = rng(100 + seed);
        let x = normal_matrix(&mut r, 128, 4);
        let y = normal_matrix(&mut r, 128, 4);
        let dep = hsic(&x, &x);
        let ind = hsic(&x, &y);
        assert!(dep > 5.0 * ind, "seed {seed}: {dep} vs {ind}");
    }
}

#[test]
fn gradient_matches_central_differences() {
    let k = KernelSpec::median();
    for seed in 0..4 {
        let mut r = rng(seed);
        let x = normal_matrix(&mut r, 6, 3);
        let y = normal_matrix(&mut r, 6, 3);
        let g = hsic_biased_with_grad(&x, &y, &k, &k).unwrap();
        let h = 1e-5;
        for (which, grad) in [(0, &g.grad_x), (1, &g.grad_y)] {
            for idx in 0..18 {
                let eval = |delta: f64| {
                    let (mut a, mut b) = (x.clone(), y.clone());
                    let target = if which == 0 { &mut a } else { &mut b };
                    target.as_mut_slice()[idx] += delta;
                    hsic(&a, &b)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grad.as_slice()[idx];
                assert!(
                    rel_err(fd, an) <= 1e-4 || (fd - an).abs() < 1e-12,
                    "seed {seed} input {which} entry {idx}: fd {fd} analytic {an}"
                );
            }
        }
    }
}

#[test]
fn fixed_bandwidth_matches_reference() {
    let mut r = rng(9);
    let x = normal_matrix(&mut r, 7, 2);
    let y = normal_matrix(&mut r, 7, 5);
    let k = KernelSpec::gaussian(1.7);
    let a = hsic_biased(&batch(&x), &batch(&y), &k, &k).unwrap();
    let b = hsic_reference(&rows(&x), &rows(&y), Some(1.7));
    assert!((a - b).abs() < 1e-12);
}

#[test]
fn two_point_hand_expansion() {
    // With k = exp(-1/2), HKH = HLH = (1 - k)/2 [[1, -1], [-1, 1]], so the
    // trace is (1 - k)^2.
    let x = Matrix::from_vec(2, 1, vec![0.0, 1.0]);
    let k = KernelSpec::gaussian(1.0);
    let v = hsic_biased(&batch(&x), &batch(&x), &k, &k).unwrap();
    assert!((v - (1.0 - (-0.5f64).exp()).powi(2)).abs() < 1e-15);
}
