//! Speciated population and the evaluate/evolve generation step.
//!
//! The population is split into `m` equally sized species that never
//! exchange members. Each generation every policy is rolled out once (its
//! fitness is a lifetime running mean), the `K` best of each species survive
//! as elites, and the remaining slots are refilled with clones of random
//! elites pushed along the species critic's policy gradient.

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::env::{Env, Environment, EpisodeResult};
use crate::error::{Error, Result};
use crate::nn::{adam_step, AdamState, Network, NetworkShape, OutputActivation};
use crate::replay::{ReplayBuffer, Transition};
use crate::seed::{SeedTree, Stream};
use crate::td3::{policy_gradient, ActionValue, Learner, UpdateStats};

pub fn policy_shape(
    state_dim: usize,
    hidden_dim: usize,
    action_dim: usize,
) -> Result<NetworkShape> {
    NetworkShape::new(state_dim, hidden_dim, action_dim, OutputActivation::Bounded)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGenome {
    /// Unique within a run; also the elite tie-breaker (lower wins).
    pub id: u64,
    pub species: usize,
    pub network: Network,
    pub fitness_sum: f64,
    pub eval_count: u64,
    /// Generations survived as an elite.
    pub age: u64,
    pub last_descriptor: Option<Vec<f64>>,
}

impl PolicyGenome {
    pub fn new(id: u64, species: usize, network: Network) -> Self {
        Self {
            id,
            species,
            network,
            fitness_sum: 0.0,
            eval_count: 0,
            age: 0,
            last_descriptor: None,
        }
    }

    pub fn average_fitness(&self) -> Option<f64> {
        (self.eval_count > 0).then(|| self.fitness_sum / self.eval_count as f64)
    }

    pub fn record(&mut self, fitness: f64, descriptor: Vec<f64>) {
        self.fitness_sum += fitness;
        self.eval_count += 1;
        self.last_descriptor = Some(descriptor);
    }

    /// Deterministic action `b * tanh(net(s))`.
    pub fn act(&self, state: &[f64], action_bound: f64) -> Result<Vec<f64>> {
        let mut a = self.network.forward(state)?;
        a.iter_mut().for_each(|v| *v *= action_bound);
        Ok(a)
    }

    /// Clone with a new id and empty statistics.
    pub fn offspring(&self, id: u64) -> Self {
        Self::new(id, self.species, self.network.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PopulationConfig {
    pub population_size: usize,
    pub n_species: usize,
    /// Elites kept per species.
    pub elites: usize,
}

impl PopulationConfig {
    pub fn species_size(&self) -> usize {
        self.population_size / self.n_species
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_species == 0 {
            return Err(Error::config("m", "must be >= 1"));
        }
        if self.population_size == 0 || self.population_size % self.n_species != 0 {
            return Err(Error::config(
                "population",
                format!(
                    "population {} is not divisible by m = {}",
                    self.population_size, self.n_species
                ),
            ));
        }
        if self.elites == 0 || self.elites >= self.species_size() {
            return Err(Error::config(
                "k",
                format!(
                    "need 1 <= k < species size {}, got {}",
                    self.species_size(),
                    self.elites
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SpeciesPopulation {
    species: Vec<Vec<PolicyGenome>>,
    next_id: u64,
}

impl SpeciesPopulation {
    /// Splits `population_size` freshly initialized policies evenly across
    /// `n_species` species. Only divisibility is checked here; the elite
    /// count is validated by [`PopulationConfig::validate`].
    pub fn init(
        population_size: usize,
        n_species: usize,
        shape: NetworkShape,
        seeds: &SeedTree,
    ) -> Result<Self> {
        if n_species == 0 || population_size == 0 || population_size % n_species != 0 {
            return Err(Error::config(
                "population",
                format!("population {population_size} is not divisible by m = {n_species}"),
            ));
        }
        let per = population_size / n_species;
        let mut next_id = 0;
        let species = (0..n_species)
            .map(|z| {
                (0..per)
                    .map(|_| {
                        let id = next_id;
                        next_id += 1;
                        let net = Network::init(shape, seeds.seed(Stream::PolicyInit, id))?;
                        Ok(PolicyGenome::new(id, z, net))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { species, next_id })
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn len(&self) -> usize {
        self.species.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn species(&self, z: usize) -> &[PolicyGenome] {
        &self.species[z]
    }

    pub fn iter(&self) -> impl Iterator<Item = &PolicyGenome> {
        self.species.iter().flatten()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut PolicyGenome> {
        self.species.iter_mut().flatten()
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalSettings {
    /// Gaussian exploration noise standard deviation, in units of the action bound.
    pub exploration_noise: f64,
    /// Environment steps between learner updates.
    pub critic_update_freq: usize,
}

/// What happens alongside a rollout.
pub enum Hooks<'a> {
    /// Plain rollout: no diversity reward, nothing stored, no learning.
    Disabled,
    /// Diversity rewards from a frozen learner; transitions are returned but
    /// not stored.
    Collect(&'a Learner),
    /// Store every transition and update the learner on schedule.
    Learn {
        learner: &'a mut Learner,
        buffer: &'a mut ReplayBuffer,
    },
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub episode: EpisodeResult,
    pub updates: Vec<UpdateStats>,
}

/// Rolls `genome` out for one episode with exploration noise, interleaving
/// learner updates according to `hooks`, and folds the episode fitness into
/// the genome's running mean.
pub fn evaluate_policy<R: Rng + ?Sized>(
    genome: &mut PolicyGenome,
    env: &mut Env,
    mut hooks: Hooks<'_>,
    settings: &EvalSettings,
    rng: &mut R,
) -> Result<Evaluation> {
    let spec = env.spec();
    let bound = spec.action_bound;
    let noise_sd = settings.exploration_noise * bound;
    let freq = settings.critic_update_freq.max(1);
    let z = genome.species;

    let mut state = env.reset(0);
    let mut transitions = Vec::with_capacity(spec.horizon);
    let mut updates = Vec::new();
    let mut fitness = 0.0;
    let mut t = 0;
    while !env.is_done() {
        let mut action = genome.act(&state, bound)?;
        for a in action.iter_mut() {
            let e: f64 = rng.sample(StandardNormal);
            *a = (*a + noise_sd * e).clamp(-bound, bound);
        }
        let out = env.step(&action)?;
        t += 1;
        fitness += out.reward;
        let diversity_reward = match &hooks {
            Hooks::Disabled => 0.0,
            Hooks::Collect(learner) => learner.diversity_reward(&out.next_state, z)?,
            Hooks::Learn { learner, .. } => learner.diversity_reward(&out.next_state, z)?,
        };
        let transition = Transition {
            state,
            action,
            reward: out.reward,
            diversity_reward,
            next_state: out.next_state.clone(),
            species: z,
            done: out.done,
        };
        if let Hooks::Learn { learner, buffer } = &mut hooks {
            buffer.push(transition.clone())?;
            if t % freq == 0 {
                updates.push(learner.update(buffer, rng)?);
            }
        }
        transitions.push(transition);
        state = out.next_state;
    }
    let descriptor = env.behavior_descriptor()?;
    genome.record(fitness, descriptor.clone());
    Ok(Evaluation {
        episode: EpisodeResult {
            transitions,
            fitness,
            behavior_descriptor: descriptor,
        },
        updates,
    })
}

/// Keeps the `k` genomes with the highest average fitness (ties go to the
/// lower id) and increments their age.
pub fn select_elites(mut species: Vec<PolicyGenome>, k: usize) -> Result<Vec<PolicyGenome>> {
    if k > species.len() {
        return Err(Error::config(
            "k",
            format!("cannot keep {k} elites from {} policies", species.len()),
        ));
    }
    if let Some(g) = species.iter().find(|g| g.eval_count == 0) {
        return Err(Error::UnevaluatedGenome(g.id));
    }
    species.sort_by(|a, b| {
        let fa = a.average_fitness().expect("evaluated");
        let fb = b.average_fitness().expect("evaluated");
        fb.total_cmp(&fa).then(a.id.cmp(&b.id))
    });
    species.truncate(k);
    for g in species.iter_mut() {
        g.age += 1;
    }
    Ok(species)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MutationSettings {
    /// Gradient steps per offspring.
    pub n_grad: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub action_bound: f64,
}

/// Draws `n` states for species `z`, falling back to the whole buffer while
/// the species has no data yet.
fn species_states<R: Rng + ?Sized>(
    buffer: &ReplayBuffer,
    z: usize,
    n: usize,
    rng: &mut R,
) -> Result<Array2<f64>> {
    let sample = if buffer.species_len(z) > 0 {
        buffer.sample_species(z, n, rng)?
    } else {
        buffer.sample_uniform(n, rng)?
    };
    let dim = sample[0].state.len();
    let mut states = Array2::zeros((n, dim));
    for (i, t) in sample.iter().enumerate() {
        states.row_mut(i).assign(&ndarray::aview1(&t.state));
    }
    Ok(states)
}

/// Gradient of `-(1/N) sum Q(s, pi(s), z)` over the policy parameters on a
/// fixed state batch.
pub fn mutation_gradient<Q: ActionValue + ?Sized>(
    network: &Network,
    states: ArrayView2<'_, f64>,
    z: usize,
    action_bound: f64,
    critic: &Q,
) -> Result<(f64, Vec<f64>)> {
    let species = vec![z; states.nrows()];
    policy_gradient(network, states, states, &species, action_bound, critic)
}

/// Clones `elite` under `id` and applies `n_grad` Adam steps of the
/// species-`z` policy gradient, each on a fresh batch of species states.
pub fn mutate_policy<Q: ActionValue + ?Sized, R: Rng + ?Sized>(
    elite: &PolicyGenome,
    id: u64,
    critic: &Q,
    buffer: &ReplayBuffer,
    settings: &MutationSettings,
    rng: &mut R,
) -> Result<PolicyGenome> {
    let mut child = elite.offspring(id);
    if settings.n_grad == 0 {
        return Ok(child);
    }
    let z = child.species;
    let mut adam = AdamState::new(child.network.params.len(), settings.learning_rate);
    for _ in 0..settings.n_grad {
        let states = species_states(buffer, z, settings.batch_size, rng)?;
        let (_, grad) = mutation_gradient(
            &child.network,
            states.view(),
            z,
            settings.action_bound,
            critic,
        )?;
        adam_step(&mut child.network.params, &grad, &mut adam)?;
    }
    Ok(child)
}

/// Table-2 style summary of one species' elites after selection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesStats {
    pub species: usize,
    pub avg_elite_age: f64,
    pub avg_elite_fitness: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvolveReport {
    pub species: Vec<SpeciesStats>,
    pub offspring_per_species: Vec<usize>,
}

/// One evolve step over every species: keep `K` elites, refill the species
/// with mutated clones of elites drawn uniformly with replacement.
pub fn evolve<Q: ActionValue + ?Sized, R: Rng + ?Sized>(
    population: &mut SpeciesPopulation,
    elites: usize,
    critic: &Q,
    buffer: &ReplayBuffer,
    settings: &MutationSettings,
    rng: &mut R,
) -> Result<EvolveReport> {
    let mut stats = Vec::with_capacity(population.n_species());
    let mut offspring_counts = Vec::with_capacity(population.n_species());
    for z in 0..population.n_species() {
        let members = std::mem::take(&mut population.species[z]);
        let size = members.len();
        let survivors = select_elites(members, elites)?;
        let k = survivors.len() as f64;
        stats.push(SpeciesStats {
            species: z,
            avg_elite_age: survivors.iter().map(|g| g.age as f64).sum::<f64>() / k,
            avg_elite_fitness: survivors
                .iter()
                .map(|g| g.average_fitness().expect("elites are evaluated"))
                .sum::<f64>()
                / k,
        });
        let mut next = survivors.clone();
        for _ in 0..size - survivors.len() {
            let parent = &survivors[rng.gen_range(0..survivors.len())];
            let id = population.fresh_id();
            next.push(mutate_policy(parent, id, critic, buffer, settings, rng)?);
        }
        offspring_counts.push(size - survivors.len());
        population.species[z] = next;
    }
    Ok(EvolveReport {
        species: stats,
        offspring_per_species: offspring_counts,
    })
}
