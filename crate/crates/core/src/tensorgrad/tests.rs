use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::error::Error;

fn t(shape: &[usize], data: Vec<f64>) -> Tensor<f64> {
    Tensor::from_vec(shape, data).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
fn numeric_grad(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64) -> Vec<f64> {
    let h = 1e-4;
    (0..x.numel())
        .map(|i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            (f(&plus) - f(&minus)) / (2.0 * h)
        })
        .collect()
}

fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

/// Checks d(loss)/d(input) for a unary graph builder against finite differences.
fn check_unary(x: Tensor<f64>, build: impl Fn(&mut Graph<f64>, Var) -> Var) {
    let mut g = Graph::new();
    let v = g.leaf(x.clone().with_grad());
    let out = build(&mut g, v);
    let loss = g.sum(out);
    let grads = g.backward(loss).unwrap();
    let analytic = grads.get(v).unwrap().to_vec();
    let numeric = numeric_grad(&x, |xp| {
        let mut g = Graph::new();
        let v = g.constant(xp.clone());
        let out = build(&mut g, v);
        let loss = g.sum(out);
        g.value(loss).item()
    });
    let err = max_rel_err(&analytic, &numeric);
    assert!(err < 1e-5, "rel err {err}");
}

#[test]
fn matmul_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let a = Tensor::<f64>::randn(&[3, 3], 1.0, &mut rng);
    let eye = t(&[3, 3], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
    let mut g = Graph::new();
    let (i, av) = (g.constant(eye), g.constant(a.clone()));
    let out = g.matmul(i, av).unwrap();
    assert_eq!(g.value(out).data(), a.data());
}

#[test]
fn add_elementwise() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2], vec![1.0, 2.0]));
    let b = g.constant(t(&[2], vec![3.0, 4.0]));
    let c = g.add(a, b).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);
}

#[test]
fn conv_with_delta_kernel_is_identity() {
    let img: Vec<f64> = (0..25).map(|i| (i as f64).sin()).collect();
    let mut kernel = vec![0.0; 9];
    kernel[4] = 1.0;
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 5, 5], img.clone()));
    let w = g.constant(t(&[1, 1, 3, 3], kernel));
    let y = g.conv2d(x, w, None).unwrap();
    assert_eq!(g.value(y).data(), &img[..]);
}

#[test]
fn square_gradient() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1], vec![3.0]).with_grad());
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap(), &[6.0]);
    assert!(g.is_empty(), "record is cleared after backward");
}

#[test]
fn sum_of_product_gradient() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
    let b = Tensor::<f64>::randn(&[2, 3], 1.0, &mut rng);
    let mut g = Graph::new();
    let (av, bv) = (g.leaf(a.with_grad()), g.constant(b.clone()));
    let p = g.mul(av, bv).unwrap();
    let s = g.sum(p);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(av).unwrap(), b.data());
    assert!(grads.get(bv).is_none());
}

#[test]
fn non_scalar_loss_rejected() {
    let mut g = Graph::<f64>::new();
    let x = g.leaf(t(&[2], vec![1.0, 2.0]).with_grad());
    let y = g.scale(x, 2.0);
    assert!(matches!(g.backward(y), Err(Error::ShapeMismatch { .. })));
    assert!(Graph::<f64>::new().backward(Var::clone(&y)).is_err());
}

#[test]
fn shape_errors_name_the_shapes() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2, 3], vec![0.0; 6]));
    let b = g.constant(t(&[2, 2], vec![0.0; 4]));
    let msg = g.matmul(b, a).map(|_| ()).and_then(|_| g.matmul(a, b).map(|_| ())).unwrap_err().to_string();
    assert!(msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    assert!(g.add(a, b).is_err());
}

#[test]
fn scalar_broadcast_only() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[3], vec![1.0, 2.0, 3.0]).with_grad());
    let s = g.leaf(t(&[1], vec![2.0]).with_grad());
    let p = g.mul(a, s).unwrap();
    assert_eq!(g.value(p).data(), &[2.0, 4.0, 6.0]);
    let l = g.sum(p);
    let grads = g.backward(l).unwrap();
    assert_eq!(grads.get(s).unwrap(), &[6.0]);
    assert_eq!(grads.get(a).unwrap(), &[2.0, 2.0, 2.0]);
}

#[test]
fn untracked_ops_are_not_recorded_as_differentiable() {
    let mut g = Graph::<f64>::new();
    let a = g.constant(t(&[2], vec![1.0, 2.0]));
    let b = g.silu(a);
    let l = g.sum(b);
    let grads = g.backward(l).unwrap();
    assert!(grads.get(a).is_none());
}

#[test]
fn primitive_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let img = Tensor::<f64>::randn(&[2, 4, 4, 4], 1.0, &mut rng);
    let w = Tensor::<f64>::randn(&[3, 4, 3, 3], 0.5, &mut rng);
    let b = Tensor::<f64>::randn(&[3], 0.5, &mut rng);
    check_unary(img.clone(), |g, x| {
        let (wv, bv) = (g.constant(w.clone()), g.constant(b.clone()));
        g.conv2d(x, wv, Some(bv)).unwrap()
    });
    check_unary(w.clone(), |g, wv| {
        let xv = g.constant(img.clone());
        g.conv2d(xv, wv, None).unwrap()
    });
    let weights = Tensor::<f64>::randn(&[2, 4, 2, 2], 1.0, &mut rng);
    check_unary(img.clone(), |g, x| {
        let p = g.avg_pool2(x).unwrap();
        let wv = g.constant(weights.clone());
        g.mul(p, wv).unwrap()
    });
    let up_w = Tensor::<f64>::randn(&[2, 4, 8, 8], 1.0, &mut rng);
    check_unary(img.clone(), |g, x| {
        let u = g.upsample2(x).unwrap();
        let wv = g.constant(up_w.clone());
        g.mul(u, wv).unwrap()
    });
    let gw = Tensor::<f64>::randn(&[2, 4, 4, 4], 1.0, &mut rng);
    let gamma = Tensor::<f64>::randn(&[4], 1.0, &mut rng);
    let beta = Tensor::<f64>::randn(&[4], 1.0, &mut rng);
    check_unary(img.clone(), |g, x| {
        let (ga, be) = (g.constant(gamma.clone()), g.constant(beta.clone()));
        let n = g.group_norm(x, ga, be, 4).unwrap();
        let wv = g.constant(gw.clone());
        g.mul(n, wv).unwrap()
    });
    check_unary(gamma.clone(), |g, ga| {
        let x = g.constant(img.clone());
        let be = g.constant(beta.clone());
        let n = g.group_norm(x, ga, be, 2).unwrap();
        let wv = g.constant(gw.clone());
        g.mul(n, wv).unwrap()
    });
    let sq = Tensor::<f64>::randn(&[2, 4, 4, 4], 1.0, &mut rng);
    check_unary(img.clone(), |g, x| {
        let s = g.silu(x);
        let c = g.constant(sq.clone());
        g.mul(s, c).unwrap()
    });
    let mat = Tensor::<f64>::randn(&[4, 3], 1.0, &mut rng);
    check_unary(Tensor::randn(&[2, 4], 1.0, &mut rng), |g, x| {
        let m = g.constant(mat.clone());
        let y = g.matmul(x, m).unwrap();
        g.mul(y, y).unwrap()
    });
    check_unary(mat.clone(), |g, m| {
        let x = g.constant(t(&[1, 4], vec![0.5, -1.0, 2.0, 0.25]));
        let y = g.matmul(x, m).unwrap();
        g.mul(y, y).unwrap()
    });
    let other = Tensor::<f64>::randn(&[2, 3, 4, 4], 1.0, &mut rng);
    check_unary(img.clone(), |g, x| {
        let o = g.constant(other.clone());
        let c = g.concat(x, o).unwrap();
        g.mul(c, c).unwrap()
    });
    let per = Tensor::<f64>::randn(&[2, 4], 1.0, &mut rng);
    check_unary(per.clone(), |g, v| {
        let x = g.constant(img.clone());
        let y = g.channel_add(x, v).unwrap();
        g.mul(y, y).unwrap()
    });
    check_unary(b.clone(), |g, bias| {
        let x = g.constant(Tensor::randn(&[2, 3, 2, 2], 1.0, &mut ChaCha8Rng::seed_from_u64(9)));
        let y = g.bias_add(x, bias).unwrap();
        g.mul(y, y).unwrap()
    });
    let target = Tensor::<f64>::randn(&[2, 4, 4, 4], 1.0, &mut rng);
    check_unary(img.clone(), |g, x| {
        let tv = g.constant(target.clone());
        g.mse(x, tv).unwrap()
    });
}

#[test]
fn relu_gradient_away_from_kink() {
    let x = t(&[4], vec![-1.5, -0.3, 0.4, 2.0]);
    check_unary(x, |g, v| {
        let r = g.relu(v);
        g.mul(r, r).unwrap()
    });
}

#[test]
fn forward_and_backward_are_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::<f32>::randn(&[2, 4, 8, 8], 1.0, &mut rng);
        let w = Tensor::<f32>::randn(&[4, 4, 3, 3], 0.3, &mut rng).with_grad();
        let mut g = Graph::new();
        let (xv, wv) = (g.constant(x), g.leaf(w));
        let y = g.conv2d(xv, wv, None).unwrap();
        let y = g.silu(y);
        let l = g.mean(y);
        let out = g.value(l).item();
        let grads = g.backward(l).unwrap();
        (out.to_bits(), grads.get(wv).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
    };
    assert_eq!(run(), run());
}
