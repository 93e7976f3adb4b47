//! Experiment driver: the DQS generation loop, the MAP-Elites baseline and
//! the files a run leaves behind.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::IteratorRandom;
use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;

use crate::archive::{build_centroids, species_separation, Centroids, CvtArchive};
use crate::config::{Algorithm, RunConfig};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::evolution::{
    evaluate_policy, evolve, policy_shape, EvalSettings, Evaluation, Hooks, MutationSettings,
    PolicyGenome, SpeciesPopulation,
};
use crate::nn::Network;
use crate::replay::ReplayBuffer;
use crate::seed::{SeedTree, Stream};
use crate::td3::{Learner, LearnerConfig, RewardAudit, UpdateStats};

pub const METRICS_HEADER: &str = "generation,eval_count,qd_score,max_fitness,coverage,\
mean_population_fitness,species_separation,discriminator_loss,critic_loss,wall_seconds";
pub const SPECIES_STATS_HEADER: &str = "generation,species_id,avg_elite_age,avg_elite_fitness";
pub const AUDIT_HEADER: &str = "generation,samples,reward_sum,diversity_reward_sum,\
qd_reward_sum,max_abs_qd_minus_reward";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub generation: usize,
    pub eval_count: usize,
    pub qd_score: f64,
    pub max_fitness: Option<f64>,
    pub coverage: f64,
    pub mean_population_fitness: f64,
    pub species_separation: Option<f64>,
    /// Means over the learner updates made during the generation.
    pub discriminator_loss: Option<f64>,
    pub critic_loss: Option<f64>,
    pub wall_seconds: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeciesStatsRow {
    pub generation: usize,
    pub species_id: usize,
    pub avg_elite_age: f64,
    pub avg_elite_fitness: f64,
}

/// Cumulative reward audit after a generation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuditRow {
    pub generation: usize,
    pub audit: RewardAudit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    Sequential,
    ParallelEval,
}

impl EvalMode {
    pub fn name(self) -> &'static str {
        match self {
            EvalMode::Sequential => "sequential",
            EvalMode::ParallelEval => "parallel_eval",
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunRecord {
    pub config: RunConfig,
    pub mode: EvalMode,
    pub metrics: Vec<MetricsRow>,
    pub species_stats: Vec<SpeciesStatsRow>,
    pub audit: Vec<AuditRow>,
    pub archive: CvtArchive,
    pub wall_seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl RunRecord {
    pub fn final_metrics(&self) -> Option<&MetricsRow> {
        self.metrics.last()
    }

    pub fn metrics_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.metrics {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.generation,
                r.eval_count,
                r.qd_score,
                opt(r.max_fitness),
                r.coverage,
                r.mean_population_fitness,
                opt(r.species_separation),
                opt(r.discriminator_loss),
                opt(r.critic_loss),
                opt(r.wall_seconds),
            )
            .unwrap();
        }
        out
    }

    pub fn species_stats_csv(&self) -> String {
        let mut out = format!("{SPECIES_STATS_HEADER}\n");
        for r in &self.species_stats {
            writeln!(
                out,
                "{},{},{},{}",
                r.generation, r.species_id, r.avg_elite_age, r.avg_elite_fitness
            )
            .unwrap();
        }
        out
    }

    pub fn audit_csv(&self) -> String {
        let mut out = format!("{AUDIT_HEADER}\n");
        for r in &self.audit {
            let a = &r.audit;
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.generation,
                a.samples,
                a.reward_sum,
                a.diversity_reward_sum,
                a.qd_reward_sum,
                a.max_qd_minus_env
            )
            .unwrap();
        }
        out
    }

    pub fn archive_csv(&self) -> String {
        let mut buf = Vec::new();
        self.archive.write_csv(&mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    /// Writes metrics.csv, species_stats.csv, reward_audit.csv, archive.csv,
    /// archive.json, config.toml and run_info.txt into `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let archive_json = serde_json::to_string(&self.archive).map_err(|e| Error::Malformed {
            what: "archive",
            reason: e.to_string(),
        })?;
        let info = format!(
            "algorithm = {}\nmode = {}\nwall_seconds = {:.3}\n",
            match self.config.algorithm {
                Algorithm::Dqs => "dqs",
                Algorithm::MapElitesBaseline => "map_elites_baseline",
            },
            self.mode.name(),
            self.wall_seconds
        );
        for (name, body) in [
            ("metrics.csv", self.metrics_csv()),
            ("species_stats.csv", self.species_stats_csv()),
            ("reward_audit.csv", self.audit_csv()),
            ("archive.csv", self.archive_csv()),
            ("archive.json", archive_json),
            ("config.toml", self.config.to_toml()),
            ("run_info.txt", info),
        ] {
            let path = dir.join(name);
            fs::write(&path, body).map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }
}

/// Centroids named by the config: loaded from `centroids_file` if set,
/// otherwise built from `centroid_seed`.
pub fn centroids_for(config: &RunConfig) -> Result<Centroids> {
    let bd_dim = config.env.spec().bd_dim;
    let centroids = match &config.centroids_file {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            Centroids::read_csv(&text)?
        }
        None => build_centroids(config.n_cells, bd_dim, config.centroid_seed)?,
    };
    check_centroids(config, &centroids)?;
    Ok(centroids)
}

fn check_centroids(config: &RunConfig, centroids: &Centroids) -> Result<()> {
    let bd_dim = config.env.spec().bd_dim;
    if centroids.dim() != bd_dim {
        return Err(Error::DimensionMismatch {
            what: "centroid",
            expected: bd_dim,
            got: centroids.dim(),
        });
    }
    Ok(())
}

/// Dispatches on `config.algorithm`.
pub fn run(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let centroids = centroids_for(config)?;
    run_with_centroids(config, centroids)
}

pub fn run_with_centroids(config: &RunConfig, centroids: Centroids) -> Result<RunRecord> {
    match config.algorithm {
        Algorithm::Dqs => run_dqs_with_centroids(config, centroids),
        Algorithm::MapElitesBaseline => run_map_elites_baseline_with_centroids(config, centroids),
    }
}

pub fn run_dqs(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let centroids = centroids_for(config)?;
    run_dqs_with_centroids(config, centroids)
}

pub fn run_map_elites_baseline(config: &RunConfig) -> Result<RunRecord> {
    config.validate()?;
    let centroids = centroids_for(config)?;
    run_map_elites_baseline_with_centroids(config, centroids)
}

fn learner_config(config: &RunConfig, spec: &EnvSpec) -> LearnerConfig {
    LearnerConfig {
        state_dim: spec.state_dim,
        action_dim: spec.action_dim,
        action_bound: spec.action_bound,
        n_species: config.m,
        actor_hidden: config.actor_hidden,
        critic_hidden: config.critic_hidden,
        discriminator_hidden: config.discriminator_hidden,
        learning_rate: config.learning_rate,
        lambda: config.lambda,
        td3: config.td3(),
    }
}

fn row_losses(updates: &[UpdateStats]) -> (Option<f64>, Option<f64>) {
    (
        mean(updates.iter().map(|u| u.discriminator_loss)),
        mean(
            updates
                .iter()
                .map(|u| 0.5 * (u.critic_losses.0 + u.critic_losses.1)),
        ),
    )
}

/// Evaluates every member of the population once, in species order.
/// Sequentially, learner updates interleave with each rollout. With
/// `parallel_eval` the rollouts run concurrently against a frozen learner
/// and the same number of updates is replayed afterwards.
fn evaluate_population(
    population: &mut SpeciesPopulation,
    learner: &mut Learner,
    buffer: &mut ReplayBuffer,
    config: &RunConfig,
    seeds: &SeedTree,
    generation: usize,
    first_eval: usize,
) -> Result<Vec<UpdateStats>> {
    let settings = EvalSettings {
        exploration_noise: config.exploration_noise,
        critic_update_freq: config.critic_update_freq,
    };
    let mut updates = Vec::new();
    if !config.parallel_eval {
        let mut env = config.env.make();
        for (i, genome) in population.iter_mut().enumerate() {
            let mut rng = seeds.rng(Stream::Rollout, (first_eval + i) as u64);
            let hooks = Hooks::Learn {
                learner: &mut *learner,
                buffer: &mut *buffer,
            };
            let eval = evaluate_policy(genome, &mut env, hooks, &settings, &mut rng)?;
            updates.extend(eval.updates);
        }
        return Ok(updates);
    }

    let frozen: &Learner = learner;
    let evaluations: Vec<Evaluation> = population
        .iter_mut()
        .collect::<Vec<_>>()
        .into_par_iter()
        .enumerate()
        .map(|(i, genome)| {
            let mut env = config.env.make();
            let mut rng = seeds.rng(Stream::Rollout, (first_eval + i) as u64);
            evaluate_policy(
                genome,
                &mut env,
                Hooks::Collect(frozen),
                &settings,
                &mut rng,
            )
        })
        .collect::<Result<_>>()?;
    let mut rng = seeds.rng(Stream::Learner, generation as u64);
    let freq = config.critic_update_freq;
    for eval in evaluations {
        for (t, transition) in eval.episode.transitions.into_iter().enumerate() {
            buffer.push(transition)?;
            if (t + 1) % freq == 0 {
                updates.push(learner.update(buffer, &mut rng)?);
            }
        }
    }
    Ok(updates)
}

pub fn run_dqs_with_centroids(config: &RunConfig, centroids: Centroids) -> Result<RunRecord> {
    config.validate()?;
    check_centroids(config, &centroids)?;
    let start = Instant::now();
    let spec = config.env.spec();
    let seeds = SeedTree::new(config.seed);
    let shape = policy_shape(spec.state_dim, config.policy_hidden, spec.action_dim)?;
    let mut population = SpeciesPopulation::init(config.population, config.m, shape, &seeds)?;
    let mut learner = Learner::new(
        learner_config(config, &spec),
        [0, 1, 2, 3].map(|i| seeds.seed(Stream::LearnerInit, i)),
    )?;
    let mut buffer = ReplayBuffer::new(config.buffer_size, config.m);
    let mut archive = CvtArchive::new(centroids);
    let mutation = MutationSettings {
        n_grad: config.n_grad,
        batch_size: config.batch_size,
        learning_rate: config.policy_learning_rate,
        action_bound: spec.action_bound,
    };

    let mut record = RunRecord {
        config: config.clone(),
        mode: if config.parallel_eval {
            EvalMode::ParallelEval
        } else {
            EvalMode::Sequential
        },
        metrics: Vec::new(),
        species_stats: Vec::new(),
        audit: Vec::new(),
        archive: CvtArchive::new(archive.centroids().clone()),
        wall_seconds: 0.0,
    };
    let mut eval_count = 0;
    let mut generation = 0;
    while eval_count < config.num_eval {
        let updates = evaluate_population(
            &mut population,
            &mut learner,
            &mut buffer,
            config,
            &seeds,
            generation,
            eval_count,
        )?;
        eval_count += population.len();

        let mut groups = vec![Vec::new(); config.m];
        let mut fitness_sum = 0.0;
        for g in population.iter() {
            let fitness = g.average_fitness().ok_or(Error::UnevaluatedGenome(g.id))?;
            let descriptor = g
                .last_descriptor
                .clone()
                .ok_or(Error::UnevaluatedGenome(g.id))?;
            archive.insert(&descriptor, fitness, g.species)?;
            fitness_sum += fitness;
            groups[g.species].push(descriptor);
        }
        let separation = species_separation(&groups)?;

        let mut rng = seeds.rng(Stream::Evolution, generation as u64);
        let report = evolve(
            &mut population,
            config.k,
            &learner.critic,
            &buffer,
            &mutation,
            &mut rng,
        )?;

        let (discriminator_loss, critic_loss) = row_losses(&updates);
        record.metrics.push(MetricsRow {
            generation,
            eval_count,
            qd_score: archive.qd_score(),
            max_fitness: archive.max_fitness(),
            coverage: archive.coverage(),
            mean_population_fitness: fitness_sum / population.len() as f64,
            species_separation: Some(separation),
            discriminator_loss,
            critic_loss,
            wall_seconds: config
                .record_wall_time
                .then(|| start.elapsed().as_secs_f64()),
        });
        record
            .species_stats
            .extend(report.species.iter().map(|s| SpeciesStatsRow {
                generation,
                species_id: s.species,
                avg_elite_age: s.avg_elite_age,
                avg_elite_fitness: s.avg_elite_fitness,
            }));
        record.audit.push(AuditRow {
            generation,
            audit: learner.audit,
        });
        generation += 1;
    }
    record.archive = archive;
    record.wall_seconds = start.elapsed().as_secs_f64();
    Ok(record)
}

/// Plain CVT-MAP-Elites: after a random bootstrap of one population's worth
/// of genomes, each evaluation perturbs the policy of a uniformly chosen
/// filled cell with isotropic Gaussian noise. Rollouts are noise-free.
pub fn run_map_elites_baseline_with_centroids(
    config: &RunConfig,
    centroids: Centroids,
) -> Result<RunRecord> {
    config.validate()?;
    check_centroids(config, &centroids)?;
    let start = Instant::now();
    let spec = config.env.spec();
    let seeds = SeedTree::new(config.seed);
    let shape = policy_shape(spec.state_dim, config.policy_hidden, spec.action_dim)?;
    let mut archive = CvtArchive::new(centroids);
    let mut policies: Vec<Option<Network>> = vec![None; archive.n_cells()];
    let mut rng = seeds.rng(Stream::Baseline, 0);
    let noise = Normal::new(0.0, config.baseline_mutation_std)
        .map_err(|e| Error::config("baseline_mutation_std", e.to_string()))?;
    let settings = EvalSettings {
        exploration_noise: 0.0,
        critic_update_freq: config.critic_update_freq,
    };
    let mut env = config.env.make();

    let mut metrics = Vec::new();
    let mut eval_count = 0;
    let mut generation = 0;
    while eval_count < config.num_eval {
        let mut fitness_sum = 0.0;
        for _ in 0..config.population {
            let id = eval_count as u64;
            let network = if eval_count < config.population {
                Network::init(shape, seeds.seed(Stream::PolicyInit, id))?
            } else {
                let (cell, _) = archive
                    .filled()
                    .choose(&mut rng)
                    .expect("bootstrap fills at least one cell");
                let mut net = policies[cell].clone().expect("filled cells keep a policy");
                for p in net.params.iter_mut() {
                    *p += rng.sample(noise);
                }
                net
            };
            let mut genome = PolicyGenome::new(id, 0, network);
            let eval =
                evaluate_policy(&mut genome, &mut env, Hooks::Disabled, &settings, &mut rng)?;
            let descriptor = eval.episode.behavior_descriptor;
            let fitness = eval.episode.fitness;
            if archive.insert(&descriptor, fitness, 0)? {
                policies[archive.centroids().nearest(&descriptor)] = Some(genome.network);
            }
            fitness_sum += fitness;
            eval_count += 1;
        }
        metrics.push(MetricsRow {
            generation,
            eval_count,
            qd_score: archive.qd_score(),
            max_fitness: archive.max_fitness(),
            coverage: archive.coverage(),
            mean_population_fitness: fitness_sum / config.population as f64,
            species_separation: None,
            discriminator_loss: None,
            critic_loss: None,
            wall_seconds: config
                .record_wall_time
                .then(|| start.elapsed().as_secs_f64()),
        });
        generation += 1;
    }
    Ok(RunRecord {
        config: config.clone(),
        mode: EvalMode::Sequential,
        metrics,
        species_stats: Vec::new(),
        audit: Vec::new(),
        archive,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::EnvKind;

    fn tiny(num_eval: usize) -> RunConfig {
        RunConfig {
            population: 8,
            m: 2,
            k: 2,
            n_grad: 2,
            policy_hidden: 8,
            actor_hidden: 8,
            critic_hidden: 8,
            discriminator_hidden: 8,
            batch_size: 8,
            num_eval,
            n_cells: 32,
            ..RunConfig::default()
        }
    }

    #[test]
    fn budget_arithmetic() {
        let r = run_dqs(&tiny(80)).unwrap();
        assert_eq!(r.metrics.len(), 10);
        assert_eq!(r.metrics.last().unwrap().eval_count, 80);
        for (i, w) in r.metrics.windows(2).enumerate() {
            assert_eq!(w[1].eval_count - w[0].eval_count, 8, "row {i}");
        }
        assert_eq!(r.species_stats.len(), 20);
    }

    #[test]
    fn overshoot_stops_after_budget() {
        let r = run_dqs(&tiny(20)).unwrap();
        assert_eq!(r.metrics.last().unwrap().eval_count, 24);
    }

    #[test]
    fn deterministic_outputs() {
        let a = run_dqs(&tiny(32)).unwrap();
        let b = run_dqs(&tiny(32)).unwrap();
        assert_eq!(a.metrics_csv(), b.metrics_csv());
        assert_eq!(a.archive_csv(), b.archive_csv());
        let mut other = tiny(32);
        other.seed = 1;
        assert_ne!(run_dqs(&other).unwrap().metrics_csv(), a.metrics_csv());
    }

    #[test]
    fn zero_lambda_audit() {
        let mut c = tiny(32);
        c.lambda = 0.0;
        let r = run_dqs(&c).unwrap();
        let last = r.audit.last().unwrap().audit;
        assert!(last.samples > 0);
        assert_eq!(last.max_qd_minus_env, 0.0);
        assert_eq!(last.qd_reward_sum, last.reward_sum);
        assert_ne!(last.diversity_reward_sum, 0.0);
    }

    #[test]
    fn parallel_mode_runs_same_number_of_updates() {
        let mut c = tiny(16);
        c.parallel_eval = true;
        let p = run_dqs(&c).unwrap();
        assert_eq!(p.mode, EvalMode::ParallelEval);
        let s = run_dqs(&tiny(16)).unwrap();
        assert_eq!(
            p.audit.last().unwrap().audit.samples,
            s.audit.last().unwrap().audit.samples
        );
        assert_eq!(run_dqs(&c).unwrap().metrics_csv(), p.metrics_csv());
    }

    #[test]
    fn baseline_schema_matches() {
        let mut c = tiny(32);
        c.algorithm = Algorithm::MapElitesBaseline;
        c.env = EnvKind::PlanarArm;
        let b = run(&c).unwrap();
        let d = run_dqs(&tiny(32)).unwrap();
        assert_eq!(b.metrics.len(), d.metrics.len());
        let header = |s: String| s.lines().next().unwrap().to_owned();
        assert_eq!(header(b.metrics_csv()), header(d.metrics_csv()));
        assert!(b.metrics.iter().all(|r| r.qd_score.is_finite()));
        assert_eq!(b.metrics_csv(), run(&c).unwrap().metrics_csv());
    }

    #[test]
    fn outputs_written() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_dqs(&tiny(16)).unwrap();
        r.write_to(dir.path()).unwrap();
        for f in [
            "metrics.csv",
            "species_stats.csv",
            "reward_audit.csv",
            "archive.csv",
            "archive.json",
            "config.toml",
            "run_info.txt",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let echoed = fs::read_to_string(dir.path().join("config.toml")).unwrap();
        assert_eq!(RunConfig::from_toml(&echoed).unwrap(), r.config);
        let json = fs::read_to_string(dir.path().join("archive.json")).unwrap();
        let back: CvtArchive = serde_json::from_str(&json).unwrap();
        assert_eq!(back, r.archive);
    }
}
