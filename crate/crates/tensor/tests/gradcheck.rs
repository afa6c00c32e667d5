//! Analytic gradients against central finite differences in f64.

use funcnet_tensor::{Tape, Tensor, Var};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;

type Build = dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Var<'t, f64>;

fn random(rng: &mut ChaCha8Rng, dims: &[usize]) -> Tensor<f64> {
    let n = dims.iter().product();
    Tensor::from_vec(dims, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Scalar loss `sum(f(inputs) * weights)` evaluated without recording grads.
fn loss_value(f: &Build, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|t| tape.constant(t.clone()).unwrap())
        .collect();
    let out = f(&tape, &vars);
    let w = tape.constant(weights.clone()).unwrap();
    out.mul(w).unwrap().sum().unwrap().value().item().unwrap()
}

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-8)
}

/// Largest relative error over every coordinate of every input.
fn max_grad_error(f: &Build, inputs: Vec<Tensor<f64>>, rng: &mut ChaCha8Rng) -> f64 {
    let tape = Tape::new();
    let vars: Vec<_> = inputs
        .iter()
        .map(|t| tape.param(t.clone()).unwrap())
        .collect();
    let out = f(&tape, &vars);
    let weights = random(rng, out.shape().dims());
    let w = tape.constant(weights.clone()).unwrap();
    let loss = out.mul(w).unwrap().sum().unwrap();
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, var) in vars.iter().enumerate() {
        let analytic = grads.get_or_zeros(*var);
        for j in 0..inputs[i].numel() {
            let mut plus = inputs.clone();
            plus[i].data_mut()[j] += H;
            let mut minus = inputs.clone();
            minus[i].data_mut()[j] -= H;
            let numeric =
                (loss_value(f, &plus, &weights) - loss_value(f, &minus, &weights)) / (2.0 * H);
            worst = worst.max(rel_err(analytic.data()[j], numeric));
        }
    }
    worst
}

#[test]
fn matmul_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        let inputs = vec![random(&mut rng, &[3, 4]), random(&mut rng, &[4, 2])];
        let err = max_grad_error(&|_, v| v[0].matmul(v[1]).unwrap(), inputs, &mut rng);
        assert!(err <= 1e-6, "matmul relative error {err}");
    }
}

#[test]
fn conv2d_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for k in [1, 3, 5] {
        let inputs = vec![
            random(&mut rng, &[1, 2, 5, 5]),
            random(&mut rng, &[3, 2, k, k]),
            random(&mut rng, &[3]),
        ];
        let err = max_grad_error(&|_, v| v[0].conv2d(v[1], v[2]).unwrap(), inputs, &mut rng);
        assert!(err <= 1e-6, "conv2d k={k} relative error {err}");
    }
}

#[test]
fn elementwise_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let dims = [2, 3, 2, 2];
    let shapes: Vec<(&str, Box<Build>, Vec<Tensor<f64>>)> = vec![
        (
            "add",
            Box::new(|_, v| v[0].add(v[1]).unwrap()),
            vec![random(&mut rng, &dims), random(&mut rng, &dims)],
        ),
        (
            "sub",
            Box::new(|_, v| v[0].sub(v[1]).unwrap()),
            vec![random(&mut rng, &dims), random(&mut rng, &dims)],
        ),
        (
            "mul",
            Box::new(|_, v| v[0].mul(v[1]).unwrap()),
            vec![random(&mut rng, &dims), random(&mut rng, &dims)],
        ),
        (
            "add_channel",
            Box::new(|_, v| v[0].add(v[1]).unwrap()),
            vec![random(&mut rng, &dims), random(&mut rng, &[3])],
        ),
        (
            "scale",
            Box::new(|_, v| v[0].scale(-1.7).unwrap().add_scalar(0.3).unwrap()),
            vec![random(&mut rng, &dims)],
        ),
        (
            "affine",
            Box::new(|_, v| v[0].channel_affine(v[1], v[2]).unwrap()),
            vec![
                random(&mut rng, &dims),
                random(&mut rng, &[3]),
                random(&mut rng, &[3]),
            ],
        ),
    ];
    for (name, f, inputs) in shapes {
        let err = max_grad_error(f.as_ref(), inputs, &mut rng);
        assert!(err <= 1e-6, "{name} relative error {err}");
    }
}

#[test]
fn nonlinear_ops_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let dims = [2, 3, 3, 3];
    let cases: Vec<(&str, Box<Build>, Vec<Tensor<f64>>)> = vec![
        (
            "prelu",
            Box::new(|_, v| v[0].prelu(v[1]).unwrap()),
            vec![random(&mut rng, &dims), random(&mut rng, &[3])],
        ),
        (
            "tanh",
            Box::new(|_, v| v[0].tanh().unwrap()),
            vec![random(&mut rng, &dims)],
        ),
        (
            "div",
            Box::new(|_, v| v[0].div(v[1].add_scalar(3.0).unwrap()).unwrap()),
            vec![random(&mut rng, &dims), random(&mut rng, &dims)],
        ),
        (
            "mean_abs",
            Box::new(|_, v| v[0].mean_abs().unwrap()),
            vec![random(&mut rng, &dims)],
        ),
    ];
    for (name, f, inputs) in cases {
        let err = max_grad_error(f.as_ref(), inputs, &mut rng);
        assert!(err <= 1e-4, "{name} relative error {err}");
    }
}

#[test]
fn composed_network_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let inputs = vec![
        random(&mut rng, &[2, 2, 4, 4]),
        random(&mut rng, &[3, 2, 3, 3]),
        random(&mut rng, &[3]),
        random(&mut rng, &[3]),
        random(&mut rng, &[2, 3, 3, 3]),
        random(&mut rng, &[2]),
        random(&mut rng, &[2, 2, 4, 4]),
    ];
    let f: &Build = &|_, v| {
        let h = v[0].conv2d(v[1], v[2]).unwrap().prelu(v[3]).unwrap();
        let y = h.conv2d(v[4], v[5]).unwrap().add(v[0]).unwrap();
        y.sub(v[6]).unwrap().mean_abs().unwrap()
    };
    let err = max_grad_error(f, inputs, &mut rng);
    assert!(err <= 1e-4, "network relative error {err}");
}

fn conv_net_f32(seed: u64) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rnd = |dims: &[usize]| {
        let n = dims.iter().product();
        Tensor::<f32>::from_vec(
            dims,
            (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect(),
        )
        .unwrap()
    };
    let (x, k, b) = (rnd(&[4, 3, 8, 8]), rnd(&[5, 3, 3, 3]), rnd(&[5]));
    let tape = Tape::new();
    let xv = tape.constant(x).unwrap();
    let kv = tape.param(k).unwrap();
    let bv = tape.param(b).unwrap();
    let loss = xv.conv2d(kv, bv).unwrap().mean_abs().unwrap();
    let g = tape.backward(loss).unwrap();
    (
        g.get(kv).unwrap().data().to_vec(),
        g.get(bv).unwrap().data().to_vec(),
    )
}

#[test]
fn repeated_runs_are_bitwise_identical() {
    let (k1, b1) = conv_net_f32(9);
    let (k2, b2) = conv_net_f32(9);
    assert!(k1.iter().zip(&k2).all(|(a, b)| a.to_bits() == b.to_bits()));
    assert!(b1.iter().zip(&b2).all(|(a, b)| a.to_bits() == b.to_bits()));
}

#[test]
fn thread_count_does_not_change_results() {
    let single = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let multi = rayon::ThreadPoolBuilder::new()
        .num_threads(3)
        .build()
        .unwrap();
    let a = single.install(|| conv_net_f32(11));
    let b = multi.install(|| conv_net_f32(11));
    assert!(a
        .0
        .iter()
        .zip(&b.0)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a
        .1
        .iter()
        .zip(&b.1)
        .all(|(x, y)| x.to_bits() == y.to_bits()));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn identity_kernel_is_exact(c in 1usize..4, h in 1usize..7, w in 1usize..7, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x64 = random(&mut rng, &[2, c, h, w]);
        let mut k = vec![0.0; c * c * 9];
        for i in 0..c {
            k[(i * c + i) * 9 + 4] = 1.0;
        }
        let k64 = Tensor::from_vec(&[c, c, 3, 3], k).unwrap();
        let b64 = Tensor::zeros(funcnet_tensor::Shape::new(vec![c]).unwrap());
        let y64 = funcnet_tensor::kernels::conv2d(&x64, &k64, &b64).unwrap();
        prop_assert!(y64.bitwise_eq(&x64));
        let x32 = x64.cast::<f32>();
        let y32 = funcnet_tensor::kernels::conv2d(&x32, &k64.cast(), &b64.cast()).unwrap();
        prop_assert!(y32.bitwise_eq(&x32));
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tape = Tape::new();
        let x = tape.param(random(&mut rng, &[1, 2, 4, 4])).unwrap();
        let k = tape.param(random(&mut rng, &[2, 2, 3, 3])).unwrap();
        let b = tape.param(random(&mut rng, &[2])).unwrap();
        let s = tape.param(random(&mut rng, &[2])).unwrap();
        let y = x.conv2d(k, b).unwrap().prelu(s).unwrap();
        let grads = tape.backward_with(y, Tensor::zeros(y.shape())).unwrap();
        for v in [x, k, b, s] {
            prop_assert!(grads.get_or_zeros(v).data().iter().all(|&g| g == 0.0));
        }
    }
}
