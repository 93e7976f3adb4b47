//! Built-in episodic continuous-control tasks with behavior descriptors.
//!
//! Both tasks start from a fixed state, clip actions internally, never
//! terminate early and describe an episode by its normalized final position.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::replay::Transition;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    /// Episode length `T`.
    pub horizon: usize,
    pub bd_dim: usize,
    pub action_bound: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "point_mass_2d")]
    PointMass2D,
    #[serde(rename = "planar_arm")]
    PlanarArm,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PointMass2D => "point_mass_2d",
            EnvKind::PlanarArm => "planar_arm",
        }
    }

    pub fn spec(self) -> EnvSpec {
        match self {
            EnvKind::PointMass2D => PointMass2D::SPEC,
            EnvKind::PlanarArm => PlanarArm::SPEC,
        }
    }

    pub fn make(self) -> Env {
        match self {
            EnvKind::PointMass2D => Env::PointMass2D(PointMass2D::new()),
            EnvKind::PlanarArm => Env::PlanarArm(PlanarArm::new()),
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point_mass_2d" => Ok(EnvKind::PointMass2D),
            "planar_arm" => Ok(EnvKind::PlanarArm),
            other => Err(Error::UnknownEnvironment(other.to_owned())),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub next_state: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

pub trait Environment {
    fn spec(&self) -> EnvSpec;

    /// Puts the task in its initial state. The start state does not depend on
    /// the seed for the built-in tasks.
    fn reset(&mut self, seed: u64) -> Vec<f64>;

    fn state(&self) -> Vec<f64>;

    fn steps_taken(&self) -> usize;

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome>;

    /// Normalized final-position descriptor; only defined once the episode is
    /// complete.
    fn behavior_descriptor(&self) -> Result<Vec<f64>>;

    fn is_done(&self) -> bool {
        self.steps_taken() >= self.spec().horizon
    }
}

fn validated_action(spec: &EnvSpec, action: &[f64]) -> Result<Vec<f64>> {
    if action.len() != spec.action_dim {
        return Err(Error::DimensionMismatch {
            what: "action",
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    if !action.iter().all(|a| a.is_finite()) {
        return Err(Error::NonFiniteInput { what: "action" });
    }
    let b = spec.action_bound;
    Ok(action.iter().map(|a| a.clamp(-b, b)).collect())
}

fn require_complete(steps: usize, horizon: usize) -> Result<()> {
    if steps < horizon {
        return Err(Error::IncompleteEpisode { steps, horizon });
    }
    Ok(())
}

/// Point mass in a `[-5, 5]^2` arena driven by accelerations. Rewarded for
/// velocity along `+x` minus a quadratic control cost.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMass2D {
    position: [f64; 2],
    velocity: [f64; 2],
    steps: usize,
}

impl PointMass2D {
    pub const SPEC: EnvSpec = EnvSpec {
        state_dim: 4,
        action_dim: 2,
        horizon: 50,
        bd_dim: 2,
        action_bound: 1.0,
    };
    pub const DT: f64 = 0.1;
    pub const ARENA: f64 = 5.0;
    pub const MAX_SPEED: f64 = 1.0;
    pub const CONTROL_COST: f64 = 0.05;

    pub fn new() -> Self {
        Self {
            position: [0.0; 2],
            velocity: [0.0; 2],
            steps: 0,
        }
    }
}

impl Default for PointMass2D {
    fn default() -> Self {
        Self::new()
    }
}

impl Environment for PointMass2D {
    fn spec(&self) -> EnvSpec {
        Self::SPEC
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        *self = Self::new();
        self.state()
    }

    fn state(&self) -> Vec<f64> {
        vec![
            self.position[0],
            self.position[1],
            self.velocity[0],
            self.velocity[1],
        ]
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::EpisodeOver(self.steps));
        }
        let a = validated_action(&Self::SPEC, action)?;
        for i in 0..2 {
            self.velocity[i] =
                (self.velocity[i] + a[i] * Self::DT).clamp(-Self::MAX_SPEED, Self::MAX_SPEED);
            self.position[i] =
                (self.position[i] + self.velocity[i] * Self::DT).clamp(-Self::ARENA, Self::ARENA);
        }
        self.steps += 1;
        let reward = self.velocity[0] - Self::CONTROL_COST * (a[0] * a[0] + a[1] * a[1]);
        Ok(StepOutcome {
            next_state: self.state(),
            reward,
            done: self.is_done(),
        })
    }

    fn behavior_descriptor(&self) -> Result<Vec<f64>> {
        require_complete(self.steps, Self::SPEC.horizon)?;
        Ok(self
            .position
            .iter()
            .map(|p| ((p + Self::ARENA) / (2.0 * Self::ARENA)).clamp(0.0, 1.0))
            .collect())
    }
}

/// Four-link planar arm (links of 0.25) steered by joint-angle increments,
/// penalized by squared end-effector distance to a fixed target.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarArm {
    angles: [f64; 4],
    steps: usize,
}

impl PlanarArm {
    pub const SPEC: EnvSpec = EnvSpec {
        state_dim: 4,
        action_dim: 4,
        horizon: 20,
        bd_dim: 2,
        action_bound: 0.1,
    };
    pub const LINK_LENGTH: f64 = 0.25;
    pub const TARGET: [f64; 2] = [0.0, 0.6];

    pub fn new() -> Self {
        Self {
            angles: [0.0; 4],
            steps: 0,
        }
    }

    pub fn end_effector(&self) -> [f64; 2] {
        forward_kinematics(&self.angles)
    }
}

impl Default for PlanarArm {
    fn default() -> Self {
        Self::new()
    }
}

pub fn forward_kinematics(angles: &[f64]) -> [f64; 2] {
    let mut heading = 0.0;
    let mut tip = [0.0, 0.0];
    for a in angles {
        heading += a;
        tip[0] += PlanarArm::LINK_LENGTH * heading.cos();
        tip[1] += PlanarArm::LINK_LENGTH * heading.sin();
    }
    tip
}

impl Environment for PlanarArm {
    fn spec(&self) -> EnvSpec {
        Self::SPEC
    }

    fn reset(&mut self, _seed: u64) -> Vec<f64> {
        *self = Self::new();
        self.state()
    }

    fn state(&self) -> Vec<f64> {
        self.angles.to_vec()
    }

    fn steps_taken(&self) -> usize {
        self.steps
    }

    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.is_done() {
            return Err(Error::EpisodeOver(self.steps));
        }
        let a = validated_action(&Self::SPEC, action)?;
        for (angle, delta) in self.angles.iter_mut().zip(&a) {
            *angle += delta;
        }
        self.steps += 1;
        let [ex, ey] = self.end_effector();
        let (dx, dy) = (ex - Self::TARGET[0], ey - Self::TARGET[1]);
        Ok(StepOutcome {
            next_state: self.state(),
            reward: -(dx * dx + dy * dy),
            done: self.is_done(),
        })
    }

    fn behavior_descriptor(&self) -> Result<Vec<f64>> {
        require_complete(self.steps, Self::SPEC.horizon)?;
        Ok(self
            .end_effector()
            .iter()
            .map(|c| ((c + 1.0) / 2.0).clamp(0.0, 1.0))
            .collect())
    }
}

/// Closed set of built-in tasks.
#[derive(Debug, Clone, PartialEq)]
pub enum Env {
    PointMass2D(PointMass2D),
    PlanarArm(PlanarArm),
}

impl Env {
    fn inner(&self) -> &dyn Environment {
        match self {
            Env::PointMass2D(e) => e,
            Env::PlanarArm(e) => e,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Environment {
        match self {
            Env::PointMass2D(e) => e,
            Env::PlanarArm(e) => e,
        }
    }
}

impl Environment for Env {
    fn spec(&self) -> EnvSpec {
        self.inner().spec()
    }
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.inner_mut().reset(seed)
    }
    fn state(&self) -> Vec<f64> {
        self.inner().state()
    }
    fn steps_taken(&self) -> usize {
        self.inner().steps_taken()
    }
    fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        self.inner_mut().step(action)
    }
    fn behavior_descriptor(&self) -> Result<Vec<f64>> {
        self.inner().behavior_descriptor()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub transitions: Vec<Transition>,
    /// Undiscounted sum of environment rewards.
    pub fitness: f64,
    pub behavior_descriptor: Vec<f64>,
}

/// Runs one full episode with `policy` and no learning side effects. Stored
/// transitions carry `species` and a zero diversity reward.
pub fn rollout<E, P>(env: &mut E, seed: u64, species: usize, mut policy: P) -> Result<EpisodeResult>
where
    E: Environment + ?Sized,
    P: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut state = env.reset(seed);
    let mut transitions = Vec::with_capacity(env.spec().horizon);
    let mut fitness = 0.0;
    while !env.is_done() {
        let action = policy(&state)?;
        let out = env.step(&action)?;
        fitness += out.reward;
        transitions.push(Transition {
            state,
            action,
            reward: out.reward,
            diversity_reward: 0.0,
            next_state: out.next_state.clone(),
            species,
            done: out.done,
        });
        state = out.next_state;
    }
    Ok(EpisodeResult {
        transitions,
        fitness,
        behavior_descriptor: env.behavior_descriptor()?,
    })
}
