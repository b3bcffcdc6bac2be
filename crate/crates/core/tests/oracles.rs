//! Independent reference computations checked against the library.

use stiefel_lora_core::adapters::{AdapterInit, BMode};
use stiefel_lora_core::harness::loss_and_upstream;
use stiefel_lora_core::linalg::matmul_tn;
use stiefel_lora_core::*;

/// Modified Gram–Schmidt; the R it implies has a positive diagonal.
fn mgs(m: &Matrix) -> Matrix {
    let (rows, cols) = m.shape();
    let mut q: Vec<Vec<f64>> = (0..cols).map(|j| m.column(j)).collect();
    for j in 0..cols {
        for i in 0..j {
            let (head, tail) = q.split_at_mut(j);
            let d: f64 = head[i].iter().zip(&tail[0]).map(|(a, b)| a * b).sum();
            for (x, y) in tail[0].iter_mut().zip(&head[i]) {
                *x -= d * y;
            }
        }
        let n = q[j].iter().map(|x| x * x).sum::<f64>().sqrt();
        q[j].iter_mut().for_each(|x| *x /= n);
    }
    let mut out = Matrix::zeros(rows, cols);
    for j in 0..cols {
        for i in 0..rows {
            out[(i, j)] = q[j][i];
        }
    }
    out
}

#[test]
fn qr_matches_gram_schmidt_on_small_example() {
    let m = gaussian_matrix(5, 3, &mut RngState::new(42));
    let (q, r) = qr_positive(&m).unwrap();
    let reference = mgs(&m);
    let diff = q.sub(&reference).unwrap();
    assert!(diff.as_slice().iter().all(|x| x.abs() < 1e-10));
    let recon = matmul(&q, &r).unwrap();
    assert!(frobenius_norm(&recon.sub(&m).unwrap()) / frobenius_norm(&m) < 1e-12);
    assert!(frobenius_norm(&matmul_tn(&q, &q).unwrap().sub(&Matrix::identity(3)).unwrap()) < 1e-12);
}

/// Straight-line Adam over a slice of scalars.
fn adam_reference(steps: &[f64], lr: f64, b1: f64, b2: f64, eps: f64) -> f64 {
    let (mut p, mut m, mut v) = (0.0f64, 0.0f64, 0.0f64);
    for (i, g) in steps.iter().enumerate() {
        let t = (i + 1) as i32;
        m = b1 * m + (1.0 - b1) * g;
        v = b2 * v + (1.0 - b2) * g * g;
        let mh = m / (1.0 - b1.powi(t));
        let vh = v / (1.0 - b2.powi(t));
        p -= lr * mh / (vh.sqrt() + eps);
    }
    p
}

#[test]
fn adam_two_constant_steps_match_reference() {
    let h = AdamHyper::new(0.1);
    let mut p = Matrix::zeros(1, 1);
    let mut st = AdamState::new(1, 1);
    let g = Matrix::from_vec(1, 1, vec![0.7]).unwrap();
    for _ in 0..2 {
        let (np, ns) = adam_step(&st, &p, &g, &h).unwrap();
        p = np;
        st = ns;
    }
    let expected = adam_reference(&[0.7, 0.7], 0.1, 0.9, 0.999, 1e-8);
    assert!((p[(0, 0)] - expected).abs() < 1e-15, "{} vs {expected}", p[(0, 0)]);
}

#[test]
fn adam_varying_gradients_match_reference() {
    let grads = [1.0, -0.3, 2.5, 0.0, -1.2, 0.4];
    let h = AdamHyper { lr: 0.05, beta1: 0.8, beta2: 0.99, eps: 1e-6, weight_decay: 0.0 };
    let mut p = Matrix::zeros(1, 1);
    let mut st = AdamState::new(1, 1);
    for &g in &grads {
        let (np, ns) = adam_step(&st, &p, &Matrix::from_vec(1, 1, vec![g]).unwrap(), &h).unwrap();
        p = np;
        st = ns;
    }
    let expected = adam_reference(&grads, 0.05, 0.8, 0.99, 1e-6);
    assert!((p[(0, 0)] - expected).abs() < 1e-14);
}

/// Dense loss written out directly from the definition of the layer.
fn dense_loss(
    w0: &Matrix,
    a: &Matrix,
    b: &Matrix,
    s: f64,
    magnitude: Option<&[f64]>,
    x: &Matrix,
    target: &Matrix,
) -> f64 {
    let (d, k) = w0.shape();
    let r = a.rows();
    let mut w = w0.clone();
    for i in 0..d {
        for j in 0..k {
            let mut acc = 0.0;
            for p in 0..r {
                acc += b[(i, p)] * a[(p, j)];
            }
            w[(i, j)] += s * acc;
        }
    }
    if let Some(mag) = magnitude {
        for j in 0..k {
            let n = (0..d).map(|i| w[(i, j)] * w[(i, j)]).sum::<f64>().sqrt();
            for i in 0..d {
                w[(i, j)] *= mag[j] / n;
            }
        }
    }
    let n = x.cols();
    let mut loss = 0.0;
    for i in 0..d {
        for c in 0..n {
            let y: f64 = (0..k).map(|j| w[(i, j)] * x[(j, c)]).sum();
            loss += (y - target[(i, c)]).powi(2);
        }
    }
    loss / (2.0 * n as f64)
}

fn central_difference(m: &Matrix, f: impl Fn(&Matrix) -> f64, h: f64) -> Matrix {
    let mut g = Matrix::zeros(m.rows(), m.cols());
    for i in 0..m.rows() {
        for j in 0..m.cols() {
            let mut plus = m.clone();
            plus[(i, j)] += h;
            let mut minus = m.clone();
            minus[(i, j)] -= h;
            g[(i, j)] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
    }
    g
}

fn rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
    frobenius_norm(&analytic.sub(numeric).unwrap()) / frobenius_norm(numeric).max(1e-300)
}

#[test]
fn upstream_matches_finite_differences_of_loss() {
    let mut rng = RngState::new(5);
    let pred = gaussian_matrix(3, 4, &mut rng);
    let target = gaussian_matrix(3, 4, &mut rng);
    let (_, up) = loss_and_upstream(&pred, &target).unwrap();
    let fd = central_difference(&pred, |p| loss_and_upstream(p, &target).unwrap().0, 1e-6);
    assert!(rel_err(&up, &fd) < 1e-7);
}

#[test]
fn adapter_gradients_match_finite_differences() {
    for (trial, variant, train_a) in [
        (0u64, Variant::Lora, true),
        (1, Variant::Dora, true),
        (2, Variant::Lora, false),
        (3, Variant::Dora, false),
    ] {
        let mut rng = RngState::new(100 + trial);
        let w0 = gaussian_matrix(4, 3, &mut rng);
        let init = AdapterInit {
            rank: 2,
            alpha: 3.0,
            mode: BMode::Stiefel,
            variant,
            train_a,
            scaling_rule: ScalingRule::Standard,
        };
        let fresh = LoraAdapter::init(w0.clone(), &init, &mut rng).unwrap();
        let a = if train_a { gaussian_matrix(2, 3, &mut rng) } else { fresh.a().clone() };
        let ad = LoraAdapter::from_parts(
            w0.clone(),
            a.clone(),
            fresh.b().clone(),
            3.0,
            ScalingRule::Standard,
            train_a,
            variant,
            fresh.dora_magnitude().map(<[f64]>::to_vec),
        )
        .unwrap();
        let b = ad.b().matrix().clone();
        let x = gaussian_matrix(3, 5, &mut rng);
        let target = gaussian_matrix(4, 5, &mut rng);
        let (_, up) = loss_and_upstream(&ad.forward(&x).unwrap(), &target).unwrap();
        let (ga, gb) = ad.gradients(&x, &up).unwrap();
        let mag = ad.dora_magnitude().map(<[f64]>::to_vec);
        let s = ad.scaling();

        let fd_b = central_difference(&b, |bb| dense_loss(&w0, &a, bb, s, mag.as_deref(), &x, &target), 1e-6);
        assert!(rel_err(&gb, &fd_b) < 1e-6, "{variant:?} train_a={train_a}: B err {}", rel_err(&gb, &fd_b));
        if train_a {
            let fd_a = central_difference(&a, |aa| dense_loss(&w0, aa, &b, s, mag.as_deref(), &x, &target), 1e-6);
            assert!(rel_err(&ga, &fd_a) < 1e-6, "{variant:?}: A err {}", rel_err(&ga, &fd_a));
        } else {
            assert_eq!(ga, Matrix::zeros(2, 3));
        }
    }
}

#[test]
fn forward_matches_dense_oracle() {
    let mut rng = RngState::new(9);
    let w0 = gaussian_matrix(2, 2, &mut rng);
    let a = gaussian_matrix(1, 2, &mut rng);
    let b = Matrix::column_vector(&[0.6, 0.8]);
    let ad = LoraAdapter::from_parts(
        w0.clone(),
        a.clone(),
        BFactor::Stiefel(StiefelPoint::new(b.clone()).unwrap()),
        1.5,
        ScalingRule::Standard,
        true,
        Variant::Lora,
        None,
    )
    .unwrap();
    let x = gaussian_matrix(2, 3, &mut rng);
    let y = ad.forward(&x).unwrap();
    for i in 0..2 {
        for c in 0..3 {
            let mut expected = 0.0;
            for j in 0..2 {
                expected += (w0[(i, j)] + 1.5 * b[(i, 0)] * a[(0, j)]) * x[(j, c)];
            }
            assert!((y[(i, c)] - expected).abs() < 1e-14);
        }
    }
    let dense = ad.dense_effective_weight().unwrap();
    let via_dense = matmul(&dense, &x).unwrap();
    assert!(frobenius_norm(&via_dense.sub(&y).unwrap()) / frobenius_norm(&y) < 1e-12);
}
