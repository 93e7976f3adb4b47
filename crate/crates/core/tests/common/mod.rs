//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Nothing here calls into the batched code paths it
//! is used to check.

#![allow(dead_code)]

use dqs_core::archive::Centroids;
use dqs_core::env::EnvSpec;
use dqs_core::nn::{HiddenActivation, NetworkShape, OutputActivation};
use rand::Rng;
use rand_distr::StandardNormal;

/// Plain nested-loop forward pass over the canonical flat layout.
pub fn naive_forward(shape: &NetworkShape, params: &[f64], input: &[f64]) -> Vec<f64> {
    naive_forward_with_signs(shape, params, input).0
}

/// Forward pass that also returns the sign of every hidden pre-activation.
pub fn naive_forward_with_signs(
    shape: &NetworkShape,
    params: &[f64],
    input: &[f64],
) -> (Vec<f64>, Vec<bool>) {
    let mut signs = Vec::new();
    let dims = [
        (shape.input_dim, shape.hidden_dim),
        (shape.hidden_dim, shape.hidden_dim),
        (shape.hidden_dim, shape.output_dim),
    ];
    let mut x = input.to_vec();
    let mut at = 0;
    for (l, &(fan_in, fan_out)) in dims.iter().enumerate() {
        let w = &params[at..at + fan_in * fan_out];
        let b = &params[at + fan_in * fan_out..at + fan_in * fan_out + fan_out];
        at += fan_in * fan_out + fan_out;
        let mut y = vec![0.0; fan_out];
        for o in 0..fan_out {
            let mut acc = b[o];
            for i in 0..fan_in {
                acc += w[o * fan_in + i] * x[i];
            }
            if l < 2 {
                signs.push(acc > 0.0);
            }
            y[o] = if l < 2 {
                match shape.hidden_activation {
                    HiddenActivation::Relu => acc.max(0.0),
                    HiddenActivation::Tanh => acc.tanh(),
                }
            } else {
                match shape.output_activation {
                    OutputActivation::Linear => acc,
                    OutputActivation::Bounded => acc.tanh(),
                }
            };
        }
        x = y;
    }
    (x, signs)
}

/// Every network the system builds, at the given hidden sizes:
/// `(name, shape)` for policy, species actor, species critic, discriminator.
pub fn system_shapes(
    spec: &EnvSpec,
    m: usize,
    policy_hidden: usize,
    hidden: usize,
) -> Vec<(&'static str, NetworkShape)> {
    let (s, a) = (spec.state_dim, spec.action_dim);
    vec![
        (
            "policy",
            NetworkShape::new(s, policy_hidden, a, OutputActivation::Bounded).unwrap(),
        ),
        (
            "actor",
            NetworkShape::new(s + m, hidden, a, OutputActivation::Bounded).unwrap(),
        ),
        (
            "critic",
            NetworkShape::new(s + a + m, hidden, 1, OutputActivation::Linear).unwrap(),
        ),
        (
            "discriminator",
            NetworkShape::new(s, hidden, m, OutputActivation::Linear).unwrap(),
        ),
    ]
}

/// Relative error `|a - f| / max(|a|, |f|)` between the analytic gradient of
/// `L = c . f(x; theta)` and central differences of the naive forward pass,
/// over all input coordinates and `per_block` random coordinates from each
/// weight and bias block. Coordinates whose perturbation moves a ReLU unit
/// across its kink are skipped, since central differences are meaningless there.
pub fn gradient_relative_error<R: Rng>(
    shape: &NetworkShape,
    params: &[f64],
    input: &[f64],
    per_block: usize,
    rng: &mut R,
) -> f64 {
    let c: Vec<f64> = (0..shape.output_dim)
        .map(|_| rng.gen_range(-1.0..1.0))
        .collect();
    let pv = dqs_core::nn::ParameterVector::from_vec(params.to_vec());
    let (g_params, g_input) = dqs_core::nn::backward(shape, &pv, input, &c).unwrap();
    let relu = shape.hidden_activation == HiddenActivation::Relu;
    let base_signs = naive_forward_with_signs(shape, params, input).1;
    let loss = |p: &[f64], x: &[f64]| -> Option<f64> {
        let (out, signs) = naive_forward_with_signs(shape, p, x);
        if relu && signs != base_signs {
            return None;
        }
        Some(out.iter().zip(&c).map(|(o, w)| o * w).sum())
    };
    let h = 1e-6;

    let mut blocks = Vec::new();
    let mut at = 0;
    for (fan_in, fan_out) in [
        (shape.input_dim, shape.hidden_dim),
        (shape.hidden_dim, shape.hidden_dim),
        (shape.hidden_dim, shape.output_dim),
    ] {
        blocks.push(at..at + fan_in * fan_out);
        blocks.push(at + fan_in * fan_out..at + fan_in * fan_out + fan_out);
        at += fan_in * fan_out + fan_out;
    }
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    let mut p = params.to_vec();
    for block in blocks {
        for _ in 0..per_block.min(block.len()) {
            let j = rng.gen_range(block.clone());
            let orig = p[j];
            p[j] = orig + h;
            let up = loss(&p, input);
            p[j] = orig - h;
            let down = loss(&p, input);
            p[j] = orig;
            if let (Some(up), Some(down)) = (up, down) {
                analytic.push(g_params[j]);
                numeric.push((up - down) / (2.0 * h));
            }
        }
    }
    let mut x = input.to_vec();
    for j in 0..x.len() {
        let orig = x[j];
        x[j] = orig + h;
        let up = loss(params, &x);
        x[j] = orig - h;
        let down = loss(params, &x);
        x[j] = orig;
        if let (Some(up), Some(down)) = (up, down) {
            analytic.push(g_input[j]);
            numeric.push((up - down) / (2.0 * h));
        }
    }
    let diff: f64 = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, f)| (a - f) * (a - f))
        .sum::<f64>()
        .sqrt();
    let na = analytic.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nf = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na.max(nf) == 0.0 {
        0.0
    } else {
        diff / na.max(nf)
    }
}

/// Inputs and parameters for one random gradient instance. Parameters are
/// drawn wider than the initializer so hidden units are not all near zero.
pub fn random_instance<R: Rng>(shape: &NetworkShape, rng: &mut R) -> (Vec<f64>, Vec<f64>) {
    let scale = 1.5 / (shape.hidden_dim as f64).sqrt().max(1.0);
    let params = (0..shape.parameter_count())
        .map(|_| rng.gen_range(-1.0..1.0) * scale.max(0.2))
        .collect();
    let input = (0..shape.input_dim)
        .map(|_| rng.gen_range(-2.0..2.0))
        .collect();
    (params, input)
}

/// One transition as seen by the target oracle.
pub struct ScalarTransition {
    pub reward: f64,
    pub diversity_reward: f64,
    pub next_state: Vec<f64>,
    pub species: usize,
    pub done: bool,
}

pub struct TargetOracle<'a> {
    pub actor_shape: NetworkShape,
    pub actor_target: &'a [f64],
    pub critic_shape: NetworkShape,
    pub q1_target: &'a [f64],
    pub q2_target: &'a [f64],
    pub m: usize,
    pub action_bound: f64,
    pub gamma: f64,
    pub sigma: f64,
    pub noise_clip: f64,
    pub lambda: f64,
}

impl TargetOracle<'_> {
    /// `y = r + lambda r_z + (1 - d) gamma min_j Q'_j(s', clip(pi'(s', z) + eps), z)`
    /// with `eps = clip(N(0, (sigma b)^2), -c b, c b)` drawn row by row from `rng`.
    pub fn targets<R: Rng>(&self, batch: &[ScalarTransition], rng: &mut R) -> Vec<f64> {
        let b = self.action_bound;
        let noise: Vec<Vec<f64>> = batch
            .iter()
            .map(|_| {
                (0..self.actor_shape.output_dim)
                    .map(|_| {
                        let e: f64 = rng.sample(StandardNormal);
                        (e * self.sigma * b).clamp(-self.noise_clip * b, self.noise_clip * b)
                    })
                    .collect()
            })
            .collect();
        batch
            .iter()
            .zip(noise)
            .map(|(t, eps)| {
                let mut one_hot = vec![0.0; self.m];
                one_hot[t.species] = 1.0;
                let actor_in: Vec<f64> = t.next_state.iter().chain(&one_hot).copied().collect();
                let action: Vec<f64> =
                    naive_forward(&self.actor_shape, self.actor_target, &actor_in)
                        .iter()
                        .zip(&eps)
                        .map(|(a, e)| (a * b + e).clamp(-b, b))
                        .collect();
                let critic_in: Vec<f64> = t
                    .next_state
                    .iter()
                    .chain(&action)
                    .chain(&one_hot)
                    .copied()
                    .collect();
                let q1 = naive_forward(&self.critic_shape, self.q1_target, &critic_in)[0];
                let q2 = naive_forward(&self.critic_shape, self.q2_target, &critic_in)[0];
                let mask = if t.done { 0.0 } else { 1.0 };
                t.reward + self.lambda * t.diversity_reward + mask * self.gamma * q1.min(q2)
            })
            .collect()
    }
}

/// Brute-force archive replay: best fitness per nearest centroid, found by
/// scanning every centroid.
pub fn brute_force_cells(centroids: &Centroids, offers: &[(Vec<f64>, f64)]) -> Vec<Option<f64>> {
    let mut best = vec![None::<f64>; centroids.len()];
    for (d, f) in offers {
        let mut k = 0;
        let mut kd = f64::INFINITY;
        for i in 0..centroids.len() {
            let dist: f64 = centroids
                .get(i)
                .iter()
                .zip(d)
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if dist < kd {
                kd = dist;
                k = i;
            }
        }
        best[k] = Some(best[k].map_or(*f, |b| b.max(*f)));
    }
    best
}

/// Labelled Gaussian clusters (sd 0.5) centred on corners of `[-2, 2]^3`,
/// repeated across the remaining dimensions. Separable for `m <= 8`.
pub fn clustered_states<R: Rng>(
    n: usize,
    dim: usize,
    m: usize,
    rng: &mut R,
) -> (Vec<Vec<f64>>, Vec<usize>) {
    let centers: Vec<Vec<f64>> = (0..m)
        .map(|z| {
            (0..dim)
                .map(|d| if (z >> (d % 3)) & 1 == 1 { 2.0 } else { -2.0 })
                .collect()
        })
        .collect();
    let mut states = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let z = rng.gen_range(0..m);
        let s: Vec<f64> = centers[z]
            .iter()
            .map(|c| c + 0.5 * rng.sample::<f64, _>(StandardNormal))
            .collect();
        states.push(s);
        labels.push(z);
    }
    (states, labels)
}
