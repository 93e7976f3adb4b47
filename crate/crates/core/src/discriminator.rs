//! Species classifier `q(z | s)` and the rewards derived from it.
//!
//! The diversity reward is the log-likelihood ratio of the classifier's
//! posterior against the uniform species prior,
//! `r_z = log q(z | s') - log p(z)`, a variational lower-bound term on the
//! mutual information between visited states and species.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Network, NetworkShape, OutputActivation};

/// Lower clamp applied to `log q(z | s)` before it enters the reward.
pub const LOG_PROB_FLOOR: f64 = -10.0;

/// Uniform prior over `m` species.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpeciesPrior {
    m: usize,
}

impl SpeciesPrior {
    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "need at least one species");
        Self { m }
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn prob(&self, _z: usize) -> f64 {
        1.0 / self.m as f64
    }

    pub fn log_prob(&self, _z: usize) -> f64 {
        -(self.m as f64).ln()
    }
}

/// `r + lambda * r_z`.
pub fn qd_reward(reward: f64, diversity_reward: f64, lambda: f64) -> f64 {
    debug_assert!(lambda >= 0.0);
    reward + lambda * diversity_reward
}

/// Reward for a given classifier log-probability.
pub fn diversity_reward_from_log_prob(log_q: f64, prior: &SpeciesPrior, z: usize) -> f64 {
    log_q.max(LOG_PROB_FLOOR) - prior.log_prob(z)
}

/// Numerically stable log-softmax of one row of logits.
pub fn log_softmax(logits: ArrayView1<'_, f64>) -> Vec<f64> {
    let max = logits.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn log_softmax_rows(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let ls = log_softmax(row.view());
        row.iter_mut().zip(ls).for_each(|(r, v)| *r = v);
    }
    out
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    pub network: Network,
    pub adam: AdamState,
}

impl Discriminator {
    pub fn new(
        state_dim: usize,
        hidden_dim: usize,
        m: usize,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let shape = NetworkShape::new(state_dim, hidden_dim, m, OutputActivation::Linear)?;
        Ok(Self::from_network(
            Network::init(shape, seed)?,
            learning_rate,
        ))
    }

    pub fn from_network(network: Network, learning_rate: f64) -> Self {
        let adam = AdamState::new(network.params.len(), learning_rate);
        Self { network, adam }
    }

    pub fn n_species(&self) -> usize {
        self.network.shape.output_dim
    }

    pub fn log_probs(&self, state: &[f64]) -> Result<Vec<f64>> {
        if !state.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteInput { what: "state" });
        }
        let logits = self.network.forward(state)?;
        Ok(log_softmax(ArrayView1::from(&logits[..])))
    }

    pub fn log_probs_batch(&self, states: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(log_softmax_rows(&self.network.forward_batch(states)?))
    }

    /// `q(. | state)`, a probability vector over species.
    pub fn predict(&self, state: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_probs(state)?.into_iter().map(f64::exp).collect())
    }

    pub fn diversity_reward(&self, prior: &SpeciesPrior, state: &[f64], z: usize) -> Result<f64> {
        let m = self.n_species();
        if z >= m {
            return Err(Error::SpeciesOutOfRange { z, m });
        }
        let lp = self.log_probs(state)?;
        Ok(diversity_reward_from_log_prob(lp[z], prior, z))
    }

    /// Mean negative log-likelihood of `labels` and its parameter gradient.
    pub fn nll_and_gradient(
        &self,
        states: ArrayView2<'_, f64>,
        labels: &[usize],
    ) -> Result<(f64, Vec<f64>)> {
        let n = labels.len();
        if n == 0 {
            return Err(Error::Malformed {
                what: "discriminator batch",
                reason: "empty".into(),
            });
        }
        if states.nrows() != n {
            return Err(Error::DimensionMismatch {
                what: "discriminator labels",
                expected: states.nrows(),
                got: n,
            });
        }
        let m = self.n_species();
        if let Some(&z) = labels.iter().find(|&&z| z >= m) {
            return Err(Error::SpeciesOutOfRange { z, m });
        }
        let tape = self.network.tape(states)?;
        let log_p = log_softmax_rows(tape.output());
        let inv_n = 1.0 / n as f64;
        let mut loss = 0.0;
        // d(mean NLL)/d(logits) = (softmax - onehot) / N
        let mut upstream = log_p.mapv(|v| v.exp() * inv_n);
        for (i, &z) in labels.iter().enumerate() {
            loss -= log_p[[i, z]];
            upstream[[i, z]] -= inv_n;
        }
        let mut grad = vec![0.0; self.network.params.len()];
        self.network
            .backward_tape(&tape, upstream.view(), Some(&mut grad))?;
        Ok((loss * inv_n, grad))
    }

    /// One Adam step on the mean NLL; returns the loss before the step.
    pub fn train_step(&mut self, states: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64> {
        let (loss, grad) = self.nll_and_gradient(states, labels)?;
        adam_step(&mut self.network.params, &grad, &mut self.adam)?;
        Ok(loss)
    }
}
