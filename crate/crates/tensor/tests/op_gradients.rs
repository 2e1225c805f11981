use approx::assert_relative_eq;
use hfc_tensor::{Graph, NodeId, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-6;

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Central differences of `f(x) . r` against the analytic gradient, with a
/// fixed random projection `r` so every output element contributes.
fn check(shape: &[usize], seed: u64, f: impl Fn(&mut Graph<f64>, NodeId) -> NodeId) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = random(shape, &mut rng);

    let mut g = Graph::new();
    let xi = g.input_with_grad(x.clone());
    let y = f(&mut g, xi);
    let r = random(g.shape(y), &mut rng);
    let ri = g.input(r.clone());
    let prod = g.mul(y, ri).unwrap();
    let loss = g.sum(prod);
    let grads = g.backward(loss).unwrap();
    let analytic = grads.get(xi).unwrap().clone();

    let eval = |x: Tensor<f64>| {
        let mut g = Graph::new();
        let xi = g.input(x);
        let y = f(&mut g, xi);
        g.value(y).data().iter().zip(r.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    for i in 0..x.numel() {
        let mut up = x.clone();
        up.data_mut()[i] += STEP;
        let mut down = x.clone();
        down.data_mut()[i] -= STEP;
        let numeric = (eval(up) - eval(down)) / (2.0 * STEP);
        assert_relative_eq!(analytic.data()[i], numeric, epsilon = 1e-6, max_relative = 1e-5);
    }
}

#[test]
fn conv_gradient_wrt_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let w = random(&[3, 2, 3, 3], &mut rng);
    for stride in [1, 2] {
        check(&[1, 2, 6, 6], 1, |g, x| {
            let wi = g.input(w.clone());
            g.conv2d(x, wi, None, stride, 1).unwrap()
        });
    }
}

#[test]
fn smooth_ops_gradients() {
    check(&[2, 3, 4, 4], 2, |g, x| g.sigmoid(x));
    check(&[1, 2, 4, 4], 3, |g, x| g.upsample(x, 2).unwrap());
    check(&[1, 4, 4, 4], 4, |g, x| g.avg_pool2(x).unwrap());
    check(&[1, 3, 4, 4], 5, |g, x| g.channel_mean(x).unwrap());
    check(&[1, 3, 4, 4], 6, |g, x| g.spatial_mean(x).unwrap());
    check(&[1, 4, 3, 3], 7, |g, x| g.pixel_l2_normalize(x, 1e-12).unwrap());
    check(&[2, 3, 4], 8, |g, x| {
        let t = g.transpose(x).unwrap();
        let gram = g.matmul(x, t, false, false).unwrap();
        let tn = g.matmul(x, x, true, false).unwrap();
        let a = g.sum(gram);
        let b = g.sum(tn);
        g.mul(a, b).unwrap()
    });
}

#[test]
fn group_norm_gradient() {
    check(&[2, 4, 3, 3], 10, |g, x| {
        let gamma = g.input(Tensor::from_fn(&[4], |i| 0.5 + i as f64));
        let beta = g.input(Tensor::from_fn(&[4], |i| i as f64 - 1.0));
        g.group_norm(x, gamma, beta, 2, 1e-5).unwrap()
    });
}

#[test]
fn bce_gradient_inside_the_clamp() {
    let target = Tensor::from_fn(&[1, 1, 4, 4], |i| (i % 3 == 0) as u8 as f64);
    for balanced in [false, true] {
        check(&[1, 1, 4, 4], 11, |g, x| {
            let p = g.sigmoid(x);
            g.bce(p, &target, balanced, 1e-7).unwrap().0
        });
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn concat_then_reshape_preserves_data(c1 in 1usize..4, c2 in 1usize..4, hw in 1usize..5) {
        let a = Tensor::from_fn(&[1, c1, hw, hw], |i| i as f64);
        let b = Tensor::from_fn(&[1, c2, hw, hw], |i| -(i as f64));
        let mut g = Graph::new();
        let ai = g.input(a.clone());
        let bi = g.input(b.clone());
        let c = g.concat(&[ai, bi]).unwrap();
        let flat = g.reshape(c, &[(c1 + c2) * hw * hw]).unwrap();
        let expect: Vec<f64> = a.data().iter().chain(b.data()).copied().collect();
        prop_assert_eq!(g.value(flat).data(), &expect[..]);
    }
}
