mod common;

use common::{gradient_relative_error, naive_forward, random_instance, system_shapes};
use dqs_core::env::EnvKind;
use dqs_core::nn::{
    self, HiddenActivation, Network, NetworkShape, OutputActivation, ParameterVector,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn batched_forward_matches_naive_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kind in [EnvKind::PointMass2D, EnvKind::PlanarArm] {
        for (name, shape) in system_shapes(&kind.spec(), 8, 128, 256) {
            let (params, input) = random_instance(&shape, &mut rng);
            let net = Network::new(shape, ParameterVector::from_vec(params.clone())).unwrap();
            let fast = net.forward(&input).unwrap();
            let slow = naive_forward(&shape, &params, &input);
            for (a, b) in fast.iter().zip(&slow) {
                assert!(
                    (a - b).abs() <= 1e-12 * (1.0 + b.abs()),
                    "{kind} {name}: {a} vs {b}"
                );
            }
        }
    }
}

#[test]
fn finite_differences_full_size_shapes() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for kind in [EnvKind::PointMass2D, EnvKind::PlanarArm] {
        for (name, shape) in system_shapes(&kind.spec(), 8, 128, 256) {
            for _ in 0..3 {
                let (params, input) = random_instance(&shape, &mut rng);
                let err = gradient_relative_error(&shape, &params, &input, 20, &mut rng);
                assert!(err < 1e-4, "{kind} {name}: relative error {err}");
            }
        }
    }
}

#[test]
fn finite_differences_tanh_hidden_and_odd_sizes() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (i, h, o, out) in [
        (1, 1, 1, OutputActivation::Linear),
        (3, 5, 2, OutputActivation::Bounded),
        (7, 16, 9, OutputActivation::Linear),
    ] {
        for act in [HiddenActivation::Relu, HiddenActivation::Tanh] {
            let shape = NetworkShape::new(i, h, o, out)
                .unwrap()
                .with_hidden_activation(act);
            for _ in 0..5 {
                let (params, input) = random_instance(&shape, &mut rng);
                let err = gradient_relative_error(&shape, &params, &input, 50, &mut rng);
                assert!(err < 1e-4, "{shape:?}: {err}");
            }
        }
    }
}

#[test]
fn batch_backward_sums_single_sample_gradients() {
    let shape = NetworkShape::new(4, 16, 3, OutputActivation::Bounded).unwrap();
    let net = Network::init(shape, 9).unwrap();
    let xs =
        ndarray::Array2::from_shape_fn((5, 4), |(r, c)| (r as f64 - 2.0) * 0.3 + c as f64 * 0.1);
    let g = ndarray::Array2::from_shape_fn((5, 3), |(r, c)| (r + c) as f64 * 0.1 - 0.2);
    let tape = net.tape(xs.view()).unwrap();
    let mut batched = vec![0.0; shape.parameter_count()];
    net.backward_tape(&tape, g.view(), Some(&mut batched))
        .unwrap();
    let mut summed = vec![0.0; shape.parameter_count()];
    for r in 0..5 {
        let (gp, _) = nn::backward(
            &shape,
            &net.params,
            xs.row(r).as_slice().unwrap(),
            g.row(r).as_slice().unwrap(),
        )
        .unwrap();
        summed.iter_mut().zip(gp.iter()).for_each(|(s, v)| *s += v);
    }
    for (a, b) in batched.iter().zip(&summed) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}
