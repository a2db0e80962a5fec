use disentangle_core::losses::{
    adversary_classification_loss, adversary_classification_loss_grad, expression_loss, expression_loss_grad, fooling_loss,
    fooling_loss_grad, reconstruction_loss, reconstruction_loss_grad, total_loss,
};
use disentangle_core::model::softmax_backward;
use disentangle_core::{ClassProbabilities, LossReport, LossWeights, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn probs(rows: usize, n: usize, data: Vec<f64>) -> ClassProbabilities {
    ClassProbabilities { probs: Tensor::from_vec(&[rows, n], data).unwrap() }
}

fn one_hot(classes: &[usize], n: usize) -> Tensor {
    disentangle_core::data::one_hot(classes, n)
}

#[test]
fn analytic_values() {
    let uniform = probs(1, 8, vec![0.125; 8]);
    assert!((fooling_loss(&uniform) - 8f64.ln()).abs() < 1e-9);
    let p = probs(1, 3, vec![0.5, 0.25, 0.25]);
    assert!((expression_loss(&p, &one_hot(&[0], 3)).unwrap() - 2f64.ln()).abs() < 1e-9);
    let x = Tensor::from_vec(&[2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
    assert_eq!(reconstruction_loss(&x, &x).unwrap(), 0.0);
}

#[test]
fn reconstruction_is_mean_of_per_sample_squared_norms() {
    let x = Tensor::zeros(&[2, 2]);
    let y = Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 0.0, 3.0]).unwrap();
    // (1 + 4 + 9) / 2
    assert_eq!(reconstruction_loss(&x, &y).unwrap(), 7.0);
    let mut y3 = y.clone();
    y3.scale(3.0);
    assert!((reconstruction_loss(&x, &y3).unwrap() - 63.0).abs() < 1e-12);
}

#[test]
fn reported_total_uses_weights() {
    let w = LossWeights::new(0.0, 1.0, 1.0).unwrap();
    let r = LossReport::new(5.0, 2.0, 1.0, 2.0794, &w);
    assert!((total_loss(&r, &w) - 5.0794).abs() < 1e-12);
    assert!((r.l_final - 5.0794).abs() < 1e-12);
}

#[test]
fn non_one_hot_labels_are_rejected() {
    let p = probs(1, 3, vec![0.5, 0.25, 0.25]);
    let bad = Tensor::from_vec(&[1, 3], vec![0.5, 0.5, 0.0]).unwrap();
    assert!(expression_loss(&p, &bad).is_err());
    assert!(expression_loss(&p, &one_hot(&[0, 1], 3)).is_err());
}

fn random_row(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

#[test]
fn fooling_loss_is_minimal_only_at_uniform() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for k in 0..10_000 {
        let n = 2 + k % 15;
        let row = random_row(&mut rng, n);
        let l = fooling_loss(&probs(1, n, row.clone()));
        let ln_n = (n as f64).ln();
        assert!(l >= ln_n - 1e-12, "n={n} loss {l} below ln N");
        let dev = row.iter().map(|p| (p - 1.0 / n as f64).abs()).fold(0.0, f64::max);
        if dev > 1e-6 {
            assert!(l > ln_n + 1e-9, "non-uniform row reached the minimum");
        }
    }
    for n in 2..=16 {
        let l = fooling_loss(&probs(1, n, vec![1.0 / n as f64; n]));
        assert!((l - (n as f64).ln()).abs() < 1e-9);
    }
}

fn central_difference(f: &dyn Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    (0..x.len())
        .map(|i| {
            let (mut a, mut b) = (x.to_vec(), x.to_vec());
            a[i] += h;
            b[i] -= h;
            (f(&a) - f(&b)) / (2.0 * h)
        })
        .collect()
}

fn assert_close(analytic: &[f64], numeric: &[f64], what: &str) {
    for (i, (a, n)) in analytic.iter().zip(numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        assert!(rel < 1e-4, "{what}[{i}]: analytic {a} numeric {n} rel {rel}");
    }
}

/// Checks a probability-space gradient both directly and pulled back to logits.
fn check_prob_gradient(
    loss: &dyn Fn(&ClassProbabilities) -> f64,
    grad: &dyn Fn(&ClassProbabilities) -> Tensor,
    rows: usize,
    n: usize,
    rng: &mut ChaCha8Rng,
    what: &str,
) {
    let flat: Vec<f64> = (0..rows).flat_map(|_| random_row(rng, n)).collect();
    let p = probs(rows, n, flat.clone());
    let numeric = central_difference(&|v: &[f64]| loss(&probs(rows, n, v.to_vec())), &flat, 1e-6);
    assert_close(grad(&p).data(), &numeric, what);

    let logits: Vec<f64> = (0..rows * n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let through = |z: &[f64]| loss(&ClassProbabilities::from_logits(&Tensor::from_vec(&[rows, n], z.to_vec()).unwrap()));
    let p = ClassProbabilities::from_logits(&Tensor::from_vec(&[rows, n], logits.clone()).unwrap());
    let dz = softmax_backward(&p.probs, &grad(&p));
    assert_close(dz.data(), &central_difference(&through, &logits, 1e-6), what);
}

#[test]
fn gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..20 {
        let (rows, n) = (1 + trial % 4, 2 + trial % 6);
        let classes: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..n)).collect();
        let y = one_hot(&classes, n);
        check_prob_gradient(
            &|p| expression_loss(p, &y).unwrap(),
            &|p| expression_loss_grad(p, &y).unwrap(),
            rows,
            n,
            &mut rng,
            "expression",
        );
        check_prob_gradient(
            &|p| adversary_classification_loss(p, &y).unwrap(),
            &|p| adversary_classification_loss_grad(p, &y).unwrap(),
            rows,
            n,
            &mut rng,
            "adversary",
        );
        check_prob_gradient(&fooling_loss, &fooling_loss_grad, rows, n, &mut rng, "fooling");

        let len = rows * 5;
        let x: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let xh: Vec<f64> = (0..len).map(|_| rng.gen_range(0.0..1.0)).collect();
        let xt = Tensor::from_vec(&[rows, 5], x).unwrap();
        let f = |v: &[f64]| reconstruction_loss(&xt, &Tensor::from_vec(&[rows, 5], v.to_vec()).unwrap()).unwrap();
        let g = reconstruction_loss_grad(&xt, &Tensor::from_vec(&[rows, 5], xh.clone()).unwrap()).unwrap();
        assert_close(g.data(), &central_difference(&f, &xh, 1e-6), "reconstruction");
    }
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(logits in prop::collection::vec(-30.0f64..30.0, 1..40), n in 1usize..8) {
        let rows = logits.len() / n;
        prop_assume!(rows > 0);
        let t = Tensor::from_vec(&[rows, n], logits[..rows * n].to_vec()).unwrap();
        let p = ClassProbabilities::from_logits(&t);
        for i in 0..rows {
            let row = p.probs.row(i);
            prop_assert!(row.iter().all(|v| *v >= 0.0 && *v <= 1.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn fooling_loss_never_below_ln_n(raw in prop::collection::vec(1e-6f64..1.0, 2..17)) {
        let n = raw.len();
        let s: f64 = raw.iter().sum();
        let row: Vec<f64> = raw.iter().map(|v| v / s).collect();
        prop_assert!(fooling_loss(&probs(1, n, row)) >= (n as f64).ln() - 1e-12);
    }

    #[test]
    fn batch_order_does_not_change_mean_losses(seed in 0u64..1000, rows in 2usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 4;
        let flat: Vec<f64> = (0..rows).flat_map(|_| random_row(&mut rng, n)).collect();
        let classes: Vec<usize> = (0..rows).map(|_| rng.gen_range(0..n)).collect();
        let perm: Vec<usize> = (0..rows).rev().collect();
        let p = probs(rows, n, flat.clone());
        let q = ClassProbabilities { probs: p.probs.gather_rows(&perm) };
        let cq: Vec<usize> = perm.iter().map(|&i| classes[i]).collect();
        let a = expression_loss(&p, &one_hot(&classes, n)).unwrap();
        let b = expression_loss(&q, &one_hot(&cq, n)).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
        prop_assert!((fooling_loss(&p) - fooling_loss(&q)).abs() < 1e-12);
    }

    #[test]
    fn reshape_round_trips(dims in prop::collection::vec(1usize..5, 1..4)) {
        let len: usize = dims.iter().product();
        let data: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let t = Tensor::from_vec(&dims, data.clone()).unwrap();
        let back = t.clone().reshape(&[len]).unwrap().reshape(&dims).unwrap();
        prop_assert_eq!(back, t);
    }
}
