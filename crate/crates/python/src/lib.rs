use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};

use dqs_core::archive::{self, CvtArchive};
use dqs_core::config::RunConfig;
use dqs_core::discriminator::{self, SpeciesPrior};
use dqs_core::env::{Env, EnvKind, Environment};
use dqs_core::nn::{self, NetworkShape, OutputActivation, ParameterVector};
use dqs_core::runner::{self, RunRecord};

fn err(e: dqs_core::Error) -> PyErr {
    match e {
        dqs_core::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

/// Three-layer MLP with ReLU hidden units.
#[pyclass(module = "dqs")]
struct Network {
    inner: nn::Network,
}

#[pymethods]
impl Network {
    #[new]
    #[pyo3(signature = (input_dim, hidden_dim, output_dim, bounded = false, seed = 0))]
    fn new(
        input_dim: usize,
        hidden_dim: usize,
        output_dim: usize,
        bounded: bool,
        seed: u64,
    ) -> PyResult<Self> {
        let out = if bounded {
            OutputActivation::Bounded
        } else {
            OutputActivation::Linear
        };
        let shape = NetworkShape::new(input_dim, hidden_dim, output_dim, out).map_err(err)?;
        Ok(Self {
            inner: nn::Network::init(shape, seed).map_err(err)?,
        })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.params.len()
    }

    #[getter]
    fn parameters(&self) -> Vec<f64> {
        self.inner.params.to_vec()
    }

    #[setter]
    fn set_parameters(&mut self, values: Vec<f64>) -> PyResult<()> {
        self.inner =
            nn::Network::new(self.inner.shape, ParameterVector::from_vec(values)).map_err(err)?;
        Ok(())
    }

    fn forward(&self, input: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.forward(&input).map_err(err)
    }

    /// Returns `(parameter_gradient, input_gradient)` for one sample.
    fn backward(
        &self,
        input: Vec<f64>,
        output_gradient: Vec<f64>,
    ) -> PyResult<(Vec<f64>, Vec<f64>)> {
        let (g, dx) = nn::backward(
            &self.inner.shape,
            &self.inner.params,
            &input,
            &output_gradient,
        )
        .map_err(err)?;
        Ok((g.into_inner(), dx))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        let f = File::create(&path).map_err(|e| PyOSError::new_err(e.to_string()))?;
        nn::write_checkpoint(BufWriter::new(f), &self.inner)
            .map_err(|e| PyOSError::new_err(e.to_string()))
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let f = File::open(&path).map_err(|e| PyOSError::new_err(e.to_string()))?;
        Ok(Self {
            inner: nn::read_checkpoint(BufReader::new(f)).map_err(err)?,
        })
    }
}

/// One of the built-in tasks: "point_mass_2d" or "planar_arm".
#[pyclass(module = "dqs", name = "Environment")]
struct PyEnvironment {
    kind: EnvKind,
    env: Env,
}

#[pymethods]
impl PyEnvironment {
    #[new]
    fn new(name: &str) -> PyResult<Self> {
        let kind: EnvKind = name.parse().map_err(err)?;
        Ok(Self {
            kind,
            env: kind.make(),
        })
    }

    #[getter]
    fn name(&self) -> &'static str {
        self.kind.name()
    }

    fn spec<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyDict>> {
        let s = self.kind.spec();
        let d = PyDict::new_bound(py);
        d.set_item("state_dim", s.state_dim)?;
        d.set_item("action_dim", s.action_dim)?;
        d.set_item("horizon", s.horizon)?;
        d.set_item("bd_dim", s.bd_dim)?;
        d.set_item("action_bound", s.action_bound)?;
        Ok(d)
    }

    #[pyo3(signature = (seed = 0))]
    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.env.reset(seed)
    }

    /// Returns `(next_state, reward, done)`.
    fn step(&mut self, action: Vec<f64>) -> PyResult<(Vec<f64>, f64, bool)> {
        let out = self.env.step(&action).map_err(err)?;
        Ok((out.next_state, out.reward, out.done))
    }

    fn behavior_descriptor(&self) -> PyResult<Vec<f64>> {
        self.env.behavior_descriptor().map_err(err)
    }
}

/// CVT archive used for QD-score, coverage and max-fitness reporting.
#[pyclass(module = "dqs")]
#[derive(Clone)]
struct Archive {
    inner: CvtArchive,
}

#[pymethods]
impl Archive {
    #[new]
    #[pyo3(signature = (n_cells = 1024, bd_dim = 2, seed = 0))]
    fn new(n_cells: usize, bd_dim: usize, seed: u64) -> PyResult<Self> {
        let c = archive::build_centroids(n_cells, bd_dim, seed).map_err(err)?;
        Ok(Self {
            inner: CvtArchive::new(c),
        })
    }

    #[pyo3(signature = (descriptor, fitness, species = 0))]
    fn insert(&mut self, descriptor: Vec<f64>, fitness: f64, species: usize) -> PyResult<bool> {
        self.inner
            .insert(&descriptor, fitness, species)
            .map_err(err)
    }

    #[getter]
    fn n_cells(&self) -> usize {
        self.inner.n_cells()
    }

    fn qd_score(&self) -> f64 {
        self.inner.qd_score()
    }

    fn max_fitness(&self) -> Option<f64> {
        self.inner.max_fitness()
    }

    fn coverage(&self) -> f64 {
        self.inner.coverage()
    }

    fn centroids(&self) -> Vec<Vec<f64>> {
        self.inner.centroids().rows().map(<[f64]>::to_vec).collect()
    }

    /// `(cell, fitness, descriptor, species)` for every filled cell.
    fn elites(&self) -> Vec<(usize, f64, Vec<f64>, usize)> {
        self.inner
            .filled()
            .map(|(i, e)| (i, e.fitness, e.descriptor.clone(), e.species))
            .collect()
    }

    fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.inner.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("ascii csv")
    }
}

/// Outcome of `run`: per-generation metrics plus the final archive.
#[pyclass(module = "dqs")]
struct RunResult {
    record: RunRecord,
}

#[pymethods]
impl RunResult {
    fn metrics<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyList>> {
        let rows = PyList::empty_bound(py);
        for r in &self.record.metrics {
            let d = PyDict::new_bound(py);
            d.set_item("generation", r.generation)?;
            d.set_item("eval_count", r.eval_count)?;
            d.set_item("qd_score", r.qd_score)?;
            d.set_item("max_fitness", r.max_fitness)?;
            d.set_item("coverage", r.coverage)?;
            d.set_item("mean_population_fitness", r.mean_population_fitness)?;
            d.set_item("species_separation", r.species_separation)?;
            d.set_item("discriminator_loss", r.discriminator_loss)?;
            d.set_item("critic_loss", r.critic_loss)?;
            rows.append(d)?;
        }
        Ok(rows)
    }

    fn metrics_csv(&self) -> String {
        self.record.metrics_csv()
    }

    fn species_stats_csv(&self) -> String {
        self.record.species_stats_csv()
    }

    fn reward_audit_csv(&self) -> String {
        self.record.audit_csv()
    }

    #[getter]
    fn archive(&self) -> Archive {
        Archive {
            inner: self.record.archive.clone(),
        }
    }

    #[getter]
    fn config(&self) -> String {
        self.record.config.to_toml()
    }

    fn write(&self, out_dir: PathBuf) -> PyResult<()> {
        self.record.write_to(&out_dir).map_err(err)
    }
}

fn to_toml(value: &Bound<'_, PyAny>) -> PyResult<toml::Value> {
    if let Ok(b) = value.extract::<bool>() {
        Ok(toml::Value::Boolean(b))
    } else if let Ok(i) = value.extract::<i64>() {
        Ok(toml::Value::Integer(i))
    } else if let Ok(f) = value.extract::<f64>() {
        Ok(toml::Value::Float(f))
    } else if let Ok(s) = value.extract::<String>() {
        Ok(toml::Value::String(s))
    } else {
        Err(PyValueError::new_err(format!(
            "unsupported config value {value}"
        )))
    }
}

/// Runs DQS or the baseline (key `algorithm`). `config` is TOML text;
/// keyword arguments override it key by key.
#[pyfunction]
#[pyo3(signature = (config = "", **overrides))]
fn run(py: Python<'_>, config: &str, overrides: Option<&Bound<'_, PyDict>>) -> PyResult<RunResult> {
    let mut table = toml::Table::new();
    if let Some(o) = overrides {
        for (k, v) in o.iter() {
            table.insert(k.extract::<String>()?, to_toml(&v)?);
        }
    }
    let cfg = RunConfig::layered(config, table).map_err(err)?;
    let record = py.allow_threads(|| runner::run(&cfg)).map_err(err)?;
    Ok(RunResult { record })
}

/// Table-1 defaults as TOML text.
#[pyfunction]
fn default_config() -> String {
    RunConfig::default().to_toml()
}

#[pyfunction]
#[pyo3(signature = (n_cells, bd_dim, seed = 0))]
fn build_centroids(n_cells: usize, bd_dim: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let c = archive::build_centroids(n_cells, bd_dim, seed).map_err(err)?;
    Ok(c.rows().map(<[f64]>::to_vec).collect())
}

/// Mean distance between per-species mean descriptors.
#[pyfunction]
fn species_separation(groups: Vec<Vec<Vec<f64>>>) -> PyResult<f64> {
    archive::species_separation(&groups).map_err(err)
}

#[pyfunction]
fn qd_reward(reward: f64, diversity_reward: f64, lam: f64) -> f64 {
    discriminator::qd_reward(reward, diversity_reward, lam)
}

/// `max(log q, -10) - log(1/m)`.
#[pyfunction]
fn diversity_reward(log_q: f64, m: usize) -> PyResult<f64> {
    if m == 0 {
        return Err(PyValueError::new_err("m must be >= 1"));
    }
    Ok(discriminator::diversity_reward_from_log_prob(
        log_q,
        &SpeciesPrior::uniform(m),
        0,
    ))
}

#[pymodule]
fn dqs(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Network>()?;
    m.add_class::<PyEnvironment>()?;
    m.add_class::<Archive>()?;
    m.add_class::<RunResult>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(build_centroids, m)?)?;
    m.add_function(wrap_pyfunction!(species_separation, m)?)?;
    m.add_function(wrap_pyfunction!(qd_reward, m)?)?;
    m.add_function(wrap_pyfunction!(diversity_reward, m)?)?;
    Ok(())
}
