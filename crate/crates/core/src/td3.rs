//! Species-conditioned TD3.
//!
//! Twin critics `Q(s, a, z)` and an actor `pi(a | s, z)` take the species as a
//! one-hot block appended to their input. Critic targets bootstrap through
//! the target actor with clipped smoothing noise and the minimum of the twin
//! target critics; the actor and all targets are refreshed every
//! `policy_delay` critic steps.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::discriminator::{qd_reward, Discriminator, SpeciesPrior};
use crate::error::{Error, Result};
use crate::nn::{adam_step, polyak_update, AdamState, Network, NetworkShape, OutputActivation};
use crate::replay::{Batch, ReplayBuffer};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Td3Config {
    pub gamma: f64,
    pub tau: f64,
    /// Critic steps per actor/target step (`d`).
    pub policy_delay: u64,
    /// Target smoothing noise standard deviation, in units of the action bound.
    pub smoothing_sigma: f64,
    /// Smoothing noise clip `c`, in units of the action bound.
    pub noise_clip: f64,
    pub batch_size: usize,
}

impl Default for Td3Config {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            policy_delay: 2,
            smoothing_sigma: 0.2,
            noise_clip: 0.5,
            batch_size: 256,
        }
    }
}

impl Td3Config {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(Error::config(
                "gamma",
                format!("{} not in (0, 1]", self.gamma),
            ));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::config("tau", format!("{} not in [0, 1]", self.tau)));
        }
        if self.policy_delay == 0 {
            return Err(Error::config("policy_delay", "must be >= 1"));
        }
        if !(self.noise_clip > 0.0) {
            return Err(Error::config("noise_clip", "must be > 0"));
        }
        if !(self.smoothing_sigma >= 0.0) {
            return Err(Error::config("sigma", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size", "must be >= 1"));
        }
        Ok(())
    }
}

pub fn one_hot_species(z: usize, m: usize) -> Result<Vec<f64>> {
    if z >= m {
        return Err(Error::SpeciesOutOfRange { z, m });
    }
    let mut v = vec![0.0; m];
    v[z] = 1.0;
    Ok(v)
}

/// `[states | actions | one_hot(z)]`, the actions block being optional.
fn with_species(
    states: ArrayView2<'_, f64>,
    actions: Option<ArrayView2<'_, f64>>,
    species: &[usize],
    m: usize,
) -> Result<Array2<f64>> {
    let n = species.len();
    let sd = states.ncols();
    let ad = actions.map_or(0, |a| a.ncols());
    for rows in std::iter::once(states.nrows()).chain(actions.map(|a| a.nrows())) {
        if rows != n {
            return Err(Error::DimensionMismatch {
                what: "batch rows",
                expected: n,
                got: rows,
            });
        }
    }
    let mut out = Array2::zeros((n, sd + ad + m));
    out.slice_mut(s![.., ..sd]).assign(&states);
    if let Some(a) = actions {
        out.slice_mut(s![.., sd..sd + ad]).assign(&a);
    }
    for (i, &z) in species.iter().enumerate() {
        if z >= m {
            return Err(Error::SpeciesOutOfRange { z, m });
        }
        out[[i, sd + ad + z]] = 1.0;
    }
    Ok(out)
}

/// Anything that scores `(s, a, z)` and exposes `dQ/da`; the species critic
/// in production, analytic stand-ins in tests.
pub trait ActionValue {
    fn value_and_action_gradient(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        species: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)>;
}

/// Loss `-(1/N) sum Q(s, b * net(x), z)` and its gradient over `net`'s
/// parameters, where `x` is the network input for state `s` and `b` the
/// action bound of a `Bounded` output.
pub fn policy_gradient<Q: ActionValue + ?Sized>(
    net: &Network,
    inputs: ArrayView2<'_, f64>,
    states: ArrayView2<'_, f64>,
    species: &[usize],
    action_bound: f64,
    critic: &Q,
) -> Result<(f64, Vec<f64>)> {
    let n = states.nrows() as f64;
    let tape = net.tape(inputs)?;
    let actions = tape.output() * action_bound;
    let (q, dq_da) = critic.value_and_action_gradient(states, actions.view(), species)?;
    let upstream = dq_da * (-action_bound / n);
    let mut grad = vec![0.0; net.params.len()];
    net.backward_tape(&tape, upstream.view(), Some(&mut grad))?;
    Ok((-q.sum() / n, grad))
}

#[derive(Debug, Clone)]
pub struct SpeciesActor {
    pub online: Network,
    pub target: Network,
    pub adam: AdamState,
    pub action_bound: f64,
    pub n_species: usize,
}

impl SpeciesActor {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden_dim: usize,
        n_species: usize,
        action_bound: f64,
        learning_rate: f64,
        seed: u64,
    ) -> Result<Self> {
        let shape = NetworkShape::new(
            state_dim + n_species,
            hidden_dim,
            action_dim,
            OutputActivation::Bounded,
        )?;
        let online = Network::init(shape, seed)?;
        Ok(Self {
            target: online.clone(),
            adam: AdamState::new(online.params.len(), learning_rate),
            online,
            action_bound,
            n_species,
        })
    }

    fn act_with(
        &self,
        net: &Network,
        states: ArrayView2<'_, f64>,
        species: &[usize],
    ) -> Result<Array2<f64>> {
        let x = with_species(states, None, species, self.n_species)?;
        Ok(net.forward_batch(x.view())? * self.action_bound)
    }

    pub fn act(&self, states: ArrayView2<'_, f64>, species: &[usize]) -> Result<Array2<f64>> {
        self.act_with(&self.online, states, species)
    }

    pub fn target_act(
        &self,
        states: ArrayView2<'_, f64>,
        species: &[usize],
    ) -> Result<Array2<f64>> {
        self.act_with(&self.target, states, species)
    }

    /// One Adam step ascending the mean of `critic` along the actor's actions.
    /// Returns the pre-step loss `-(1/N) sum Q`.
    pub fn update<Q: ActionValue + ?Sized>(
        &mut self,
        critic: &Q,
        states: ArrayView2<'_, f64>,
        species: &[usize],
    ) -> Result<f64> {
        let x = with_species(states, None, species, self.n_species)?;
        let (loss, grad) = policy_gradient(
            &self.online,
            x.view(),
            states,
            species,
            self.action_bound,
            critic,
        )?;
        adam_step(&mut self.online.params, &grad, &mut self.adam)?;
        Ok(loss)
    }
}

#[derive(Debug, Clone)]
pub struct SpeciesCritic {
    pub q1: Network,
    pub q2: Network,
    pub q1_target: Network,
    pub q2_target: Network,
    pub adam1: AdamState,
    pub adam2: AdamState,
    pub n_species: usize,
}

impl SpeciesCritic {
    pub fn new(
        state_dim: usize,
        action_dim: usize,
        hidden_dim: usize,
        n_species: usize,
        learning_rate: f64,
        seeds: (u64, u64),
    ) -> Result<Self> {
        let shape = NetworkShape::new(
            state_dim + action_dim + n_species,
            hidden_dim,
            1,
            OutputActivation::Linear,
        )?;
        let q1 = Network::init(shape, seeds.0)?;
        let q2 = Network::init(shape, seeds.1)?;
        let len = q1.params.len();
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            adam1: AdamState::new(len, learning_rate),
            adam2: AdamState::new(len, learning_rate),
            n_species,
        })
    }

    pub fn inputs(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        species: &[usize],
    ) -> Result<Array2<f64>> {
        with_species(states, Some(actions), species, self.n_species)
    }

    pub fn evaluate(net: &Network, inputs: ArrayView2<'_, f64>) -> Result<Array1<f64>> {
        Ok(net.forward_batch(inputs)?.index_axis_move(Axis(1), 0))
    }
}

impl ActionValue for SpeciesCritic {
    /// Uses the first online critic.
    fn value_and_action_gradient(
        &self,
        states: ArrayView2<'_, f64>,
        actions: ArrayView2<'_, f64>,
        species: &[usize],
    ) -> Result<(Array1<f64>, Array2<f64>)> {
        let x = self.inputs(states, actions, species)?;
        let tape = self.q1.tape(x.view())?;
        let q = tape.output().column(0).to_owned();
        let ones = Array2::ones((states.nrows(), 1));
        let dx = self.q1.backward_tape(&tape, ones.view(), None)?;
        let sd = states.ncols();
        let da = dx.slice(s![.., sd..sd + actions.ncols()]).to_owned();
        Ok((q, da))
    }
}

/// Draws target smoothing noise `clip(N(0, sigma^2), -c, c)`, both scaled by
/// the action bound.
pub fn smoothing_noise<R: Rng + ?Sized>(
    rng: &mut R,
    rows: usize,
    action_dim: usize,
    config: &Td3Config,
    action_bound: f64,
) -> Array2<f64> {
    let clip = config.noise_clip * action_bound;
    let sd = config.smoothing_sigma * action_bound;
    Array2::from_shape_simple_fn((rows, action_dim), || {
        let e: f64 = rng.sample(StandardNormal);
        (e * sd).clamp(-clip, clip)
    })
}

/// Bellman targets `r_qd + (1 - done) * gamma * min(Q1', Q2')(s', a~', z)`
/// with `a~' = clip(pi'(s', z) + noise)`. `noise` is already clipped.
pub fn critic_target_with_noise(
    critic: &SpeciesCritic,
    actor: &SpeciesActor,
    batch: &Batch,
    config: &Td3Config,
    lambda: f64,
    noise: ArrayView2<'_, f64>,
) -> Result<Array1<f64>> {
    let b = actor.action_bound;
    let mut next_actions = actor.target_act(batch.next_states.view(), &batch.species)?;
    next_actions += &noise;
    next_actions.mapv_inplace(|a| a.clamp(-b, b));
    let x = critic.inputs(
        batch.next_states.view(),
        next_actions.view(),
        &batch.species,
    )?;
    let q1 = SpeciesCritic::evaluate(&critic.q1_target, x.view())?;
    let q2 = SpeciesCritic::evaluate(&critic.q2_target, x.view())?;
    Ok(Array1::from_shape_fn(batch.len(), |i| {
        let r_qd = qd_reward(batch.rewards[i], batch.diversity_rewards[i], lambda);
        r_qd + (1.0 - batch.done[i]) * config.gamma * q1[i].min(q2[i])
    }))
}

pub fn critic_target<R: Rng + ?Sized>(
    critic: &SpeciesCritic,
    actor: &SpeciesActor,
    batch: &Batch,
    config: &Td3Config,
    lambda: f64,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let noise = smoothing_noise(
        rng,
        batch.len(),
        batch.actions.ncols(),
        config,
        actor.action_bound,
    );
    critic_target_with_noise(critic, actor, batch, config, lambda, noise.view())
}

/// Mean squared error of `net` against `targets` and its parameter gradient.
pub fn mse_and_gradient(
    net: &Network,
    inputs: ArrayView2<'_, f64>,
    targets: &Array1<f64>,
) -> Result<(f64, Vec<f64>)> {
    let n = targets.len() as f64;
    let tape = net.tape(inputs)?;
    let err = &tape.output().column(0) - targets;
    let loss = err.mapv(|e| e * e).sum() / n;
    let upstream = err.mapv(|e| 2.0 * e / n).insert_axis(Axis(1));
    let mut grad = vec![0.0; net.params.len()];
    net.backward_tape(&tape, upstream.view(), Some(&mut grad))?;
    Ok((loss, grad))
}

/// One Adam step per online critic toward fixed `targets`. Returns the
/// pre-step losses.
pub fn critic_step(
    critic: &mut SpeciesCritic,
    batch: &Batch,
    targets: &Array1<f64>,
) -> Result<(f64, f64)> {
    let x = critic.inputs(batch.states.view(), batch.actions.view(), &batch.species)?;
    let (l1, g1) = mse_and_gradient(&critic.q1, x.view(), targets)?;
    let (l2, g2) = mse_and_gradient(&critic.q2, x.view(), targets)?;
    adam_step(&mut critic.q1.params, &g1, &mut critic.adam1)?;
    adam_step(&mut critic.q2.params, &g2, &mut critic.adam2)?;
    Ok((l1, l2))
}

/// Polyak-averages both target critics and the target actor toward their
/// online networks.
pub fn update_targets(
    critic: &mut SpeciesCritic,
    actor: &mut SpeciesActor,
    tau: f64,
) -> Result<()> {
    polyak_update(&mut critic.q1_target.params, &critic.q1.params, tau)?;
    polyak_update(&mut critic.q2_target.params, &critic.q2.params, tau)?;
    polyak_update(&mut actor.target.params, &actor.online.params, tau)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LearnerConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_bound: f64,
    pub n_species: usize,
    pub actor_hidden: usize,
    pub critic_hidden: usize,
    pub discriminator_hidden: usize,
    /// Shared by actor, critics and discriminator.
    pub learning_rate: f64,
    pub lambda: f64,
    pub td3: Td3Config,
}

/// Running sums over every batch the critics were trained on, used to audit
/// how `r_qd` was assembled.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardAudit {
    pub samples: u64,
    pub reward_sum: f64,
    pub diversity_reward_sum: f64,
    pub qd_reward_sum: f64,
    /// Largest `|r_qd - r|` seen; exactly 0 when `lambda = 0`.
    pub max_qd_minus_env: f64,
}

impl RewardAudit {
    fn record(&mut self, batch: &Batch, lambda: f64) {
        for i in 0..batch.len() {
            let r = batch.rewards[i];
            let rz = batch.diversity_rewards[i];
            let qd = qd_reward(r, rz, lambda);
            self.samples += 1;
            self.reward_sum += r;
            self.diversity_reward_sum += rz;
            self.qd_reward_sum += qd;
            self.max_qd_minus_env = self.max_qd_minus_env.max((qd - r).abs());
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpdateStats {
    pub critic_losses: (f64, f64),
    pub actor_loss: Option<f64>,
    pub discriminator_loss: f64,
}

/// Everything trained from the replay buffer: species critics, species
/// actor and discriminator, plus their step counters.
#[derive(Debug, Clone)]
pub struct Learner {
    pub config: LearnerConfig,
    pub critic: SpeciesCritic,
    pub actor: SpeciesActor,
    pub discriminator: Discriminator,
    pub prior: SpeciesPrior,
    pub audit: RewardAudit,
    critic_steps: u64,
    actor_steps: u64,
}

impl Learner {
    /// `seeds` supplies one seed per network: critic 1, critic 2, actor,
    /// discriminator.
    pub fn new(config: LearnerConfig, seeds: [u64; 4]) -> Result<Self> {
        config.td3.validate()?;
        let c = &config;
        Ok(Self {
            critic: SpeciesCritic::new(
                c.state_dim,
                c.action_dim,
                c.critic_hidden,
                c.n_species,
                c.learning_rate,
                (seeds[0], seeds[1]),
            )?,
            actor: SpeciesActor::new(
                c.state_dim,
                c.action_dim,
                c.actor_hidden,
                c.n_species,
                c.action_bound,
                c.learning_rate,
                seeds[2],
            )?,
            discriminator: Discriminator::new(
                c.state_dim,
                c.discriminator_hidden,
                c.n_species,
                c.learning_rate,
                seeds[3],
            )?,
            prior: SpeciesPrior::uniform(c.n_species),
            audit: RewardAudit::default(),
            config,
            critic_steps: 0,
            actor_steps: 0,
        })
    }

    pub fn critic_steps(&self) -> u64 {
        self.critic_steps
    }

    pub fn actor_steps(&self) -> u64 {
        self.actor_steps
    }

    /// Critic step on `batch`, then the delayed actor and target step when
    /// the critic step count is a multiple of `policy_delay`.
    pub fn td3_step<R: Rng + ?Sized>(
        &mut self,
        batch: &Batch,
        rng: &mut R,
    ) -> Result<((f64, f64), Option<f64>)> {
        let td3 = self.config.td3;
        let targets = critic_target(
            &self.critic,
            &self.actor,
            batch,
            &td3,
            self.config.lambda,
            rng,
        )?;
        self.audit.record(batch, self.config.lambda);
        let losses = critic_step(&mut self.critic, batch, &targets)?;
        self.critic_steps += 1;
        let actor_loss = if self.critic_steps % td3.policy_delay == 0 {
            let loss = self
                .actor
                .update(&self.critic, batch.states.view(), &batch.species)?;
            update_targets(&mut self.critic, &mut self.actor, td3.tau)?;
            self.actor_steps += 1;
            Some(loss)
        } else {
            None
        };
        Ok((losses, actor_loss))
    }

    /// One learner update as performed every `critic_update_freq`
    /// environment steps: a TD3 step and a discriminator step, both on one
    /// uniform replay batch.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<UpdateStats> {
        let sample = buffer.sample_uniform(self.config.td3.batch_size, rng)?;
        let batch = Batch::from_transitions(&sample);
        let (critic_losses, actor_loss) = self.td3_step(&batch, rng)?;
        let discriminator_loss = self
            .discriminator
            .train_step(batch.states.view(), &batch.species)?;
        Ok(UpdateStats {
            critic_losses,
            actor_loss,
            discriminator_loss,
        })
    }

    pub fn diversity_reward(&self, next_state: &[f64], z: usize) -> Result<f64> {
        self.discriminator
            .diversity_reward(&self.prior, next_state, z)
    }
}
