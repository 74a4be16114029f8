//! Python bindings for the option-indexed HRL workbench.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use oihrl::a2c::{train_policy, A2cConfig};
use oihrl::config::RunConfig;
use oihrl::craftworld::{generate_craftworld, CraftWorldParams};
use oihrl::env::{Env, World};
use oihrl::harness::{cmd_evaluate, cmd_meta_train, parse_baselines, Baseline};
use oihrl::index::{Checkpoint, CheckpointExpectation, KeyInit, Retriever as CoreRetriever};
use oihrl::meta::{evaluate_retrieval, meta_train, summarize, MetaTrainConfig};
use oihrl::seeding::mdp_seed;
use oihrl::task::{OptionId, VariantRef};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: oihrl::Error) -> PyErr {
    match e {
        oihrl::Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn variant_ref(v: (usize, usize)) -> VariantRef {
    VariantRef::new(v.0, v.1)
}

fn pairs(vs: &[VariantRef]) -> Vec<(usize, usize)> {
    vs.iter().map(|v| (v.task.0, v.variant)).collect()
}

/// A task library with its split and episode settings.
#[pyclass(module = "oihrl_py", frozen)]
pub struct Domain {
    inner: oihrl::domain::Domain,
    world: Arc<World>,
}

impl Domain {
    fn wrap(inner: oihrl::domain::Domain) -> PyResult<Self> {
        let world = World::new(Arc::new(inner.graph.clone()), inner.episode).map_err(py_err)?;
        Ok(Self {
            inner,
            world: Arc::new(world),
        })
    }

    fn check_variant(&self, v: (usize, usize)) -> PyResult<VariantRef> {
        let r = variant_ref(v);
        if self.inner.graph.variant(r).is_none() {
            return Err(PyValueError::new_err(format!("no variant {v:?}")));
        }
        Ok(r)
    }
}

#[pymethods]
impl Domain {
    /// Generated CraftWorld; `preset` is "desk" or "full".
    #[staticmethod]
    #[pyo3(signature = (preset = "desk", seed = 0))]
    fn craftworld(preset: &str, seed: u64) -> PyResult<Self> {
        let params = match preset {
            "desk" => CraftWorldParams::desk(),
            "full" => CraftWorldParams::full(),
            other => return Err(PyValueError::new_err(format!("unknown preset `{other}`"))),
        };
        Self::wrap(generate_craftworld(&params, seed).map_err(py_err)?)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::wrap(oihrl::domain::Domain::load(&path).map_err(py_err)?)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).map_err(py_err)
    }

    #[getter]
    fn num_options(&self) -> usize {
        self.inner.num_options()
    }

    #[getter]
    fn state_dim(&self) -> usize {
        self.world.state_dim()
    }

    #[getter]
    fn train(&self) -> Vec<(usize, usize)> {
        pairs(&self.inner.split.train)
    }

    #[getter]
    fn validation(&self) -> Vec<(usize, usize)> {
        pairs(&self.inner.split.validation)
    }

    #[getter]
    fn test(&self) -> Vec<(usize, usize)> {
        pairs(&self.inner.split.test)
    }

    fn hash(&self) -> String {
        oihrl::harness::hex(&self.inner.hash())
    }

    fn option_name(&self, option: usize) -> PyResult<String> {
        if option >= self.inner.num_options() {
            return Err(PyValueError::new_err(format!("no option {option}")));
        }
        Ok(self.inner.graph.option_name(OptionId(option)).to_string())
    }

    fn variant_name(&self, variant: (usize, usize)) -> PyResult<String> {
        let r = self.check_variant(variant)?;
        Ok(self.inner.graph.variant_name(r))
    }

    /// Option ids the variant's recipe needs.
    fn recipe(&self, variant: (usize, usize)) -> PyResult<Vec<usize>> {
        let r = self.check_variant(variant)?;
        let goal = self.world.goal(r).map_err(py_err)?;
        Ok(goal.recipe.options.iter().map(|o| o.0).collect())
    }

    /// Encoded initial state of a variant's episode.
    #[pyo3(signature = (variant, seed = 0))]
    fn initial_state(&self, variant: (usize, usize), seed: u64) -> PyResult<Vec<f64>> {
        let r = self.check_variant(variant)?;
        let goal = self.world.goal(r).map_err(py_err)?;
        Ok(self.world.encode(&self.world.reset(&goal, seed)))
    }

    /// Trains a fresh A2C policy over `options` on the variant's evaluation
    /// MDP and returns the final greedy evaluation.
    #[pyo3(signature = (variant, options, env_steps = 200_000, master_seed = 0))]
    fn train_policy<'py>(
        &self,
        py: Python<'py>,
        variant: (usize, usize),
        options: Vec<usize>,
        env_steps: usize,
        master_seed: u64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let r = self.check_variant(variant)?;
        let seed = mdp_seed(master_seed, r);
        let goal = Arc::new(self.world.goal(r).map_err(py_err)?);
        let mut env = Env::new(self.world.clone(), goal, seed);
        let cfg = A2cConfig {
            env_steps,
            seed,
            ..A2cConfig::default()
        };
        let actions: Vec<OptionId> = options.into_iter().map(OptionId).collect();
        let (_, curve) = train_policy(&mut env, &actions, &cfg).map_err(py_err)?;
        let last = curve.last().copied().ok_or_else(|| PyValueError::new_err("empty learning curve"))?;
        let d = PyDict::new(py);
        d.set_item("updates", last.update)?;
        d.set_item("env_steps", last.env_steps)?;
        d.set_item("mean_reward", last.mean_reward)?;
        d.set_item("mean_length", last.mean_length)?;
        d.set_item("completion", last.completion)?;
        Ok(d)
    }
}

/// Query network plus option index.
#[pyclass(module = "oihrl_py")]
pub struct Retriever {
    inner: CoreRetriever,
}

#[pymethods]
impl Retriever {
    #[new]
    #[pyo3(signature = (domain, hidden = 100, key_dim = 50, seed = 0, key_init_scale = 1.0))]
    fn new(domain: &Domain, hidden: usize, key_dim: usize, seed: u64, key_init_scale: f64) -> PyResult<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let init = if key_init_scale == 0.0 {
            KeyInit::Zeros
        } else {
            KeyInit::ScaledGlorot(key_init_scale)
        };
        let inner = CoreRetriever::new(
            domain.world.state_dim(),
            hidden,
            key_dim,
            domain.inner.num_options(),
            init,
            &mut rng,
        )
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf, domain: &Domain, key_dim: usize) -> PyResult<Self> {
        let expect = CheckpointExpectation {
            k: domain.inner.num_options(),
            d: key_dim,
            state_dim: domain.world.state_dim(),
            domain_hash: domain.inner.hash(),
        };
        let ck = Checkpoint::load_expecting(&path, &expect).map_err(py_err)?;
        Ok(Self { inner: ck.retriever })
    }

    fn save(&self, path: PathBuf, domain: &Domain) -> PyResult<()> {
        Checkpoint {
            domain_hash: domain.inner.hash(),
            retriever: self.inner.clone(),
        }
        .save(&path)
        .map_err(py_err)
    }

    fn probabilities(&self, state: Vec<f64>) -> PyResult<Vec<f64>> {
        self.inner.probabilities(&state).map_err(py_err)
    }

    /// Option ids fetched for `state`, most probable first.
    #[pyo3(signature = (state, top_p = 0.9))]
    fn select(&self, state: Vec<f64>, top_p: f64) -> PyResult<Vec<usize>> {
        let r = self.inner.select(&state, top_p).map_err(py_err)?;
        Ok(r.fetched.iter().map(|o| o.0).collect())
    }

    /// Meta-trains on the domain's training split; returns per-iteration losses.
    #[pyo3(signature = (domain, iterations, batch_size = 32, learning_rate = 1e-3, top_p = 0.9, seed = 0))]
    fn meta_train(
        &mut self,
        domain: &Domain,
        iterations: usize,
        batch_size: usize,
        learning_rate: f64,
        top_p: f64,
        seed: u64,
    ) -> PyResult<Vec<f64>> {
        let cfg = MetaTrainConfig {
            iterations,
            batch_size,
            learning_rate,
            top_p,
            seed,
            ..MetaTrainConfig::default()
        };
        let report = meta_train(&domain.world, &domain.inner.split.train, &mut self.inner, &cfg, |_| {})
            .map_err(py_err)?;
        Ok(report.records.iter().map(|r| r.mean_loss).collect())
    }

    /// Sufficiency, extra and missing counts averaged over `variants`
    /// (default: the test split).
    #[pyo3(signature = (domain, variants = None, seed = 0, top_p = 0.9))]
    fn evaluate<'py>(
        &self,
        py: Python<'py>,
        domain: &Domain,
        variants: Option<Vec<(usize, usize)>>,
        seed: u64,
        top_p: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let vs: Vec<VariantRef> = match variants {
            Some(v) => v.into_iter().map(|p| domain.check_variant(p)).collect::<PyResult<_>>()?,
            None => domain.inner.split.test.clone(),
        };
        let records = evaluate_retrieval(&domain.world, &self.inner, &vs, seed, top_p).map_err(py_err)?;
        let s = summarize(&records);
        let d = PyDict::new(py);
        d.set_item("variants", vs.len())?;
        d.set_item("sufficient_fraction", s.sufficient_fraction)?;
        d.set_item("mean_extra", s.mean_extra)?;
        d.set_item("mean_missing", s.mean_missing)?;
        Ok(d)
    }
}

/// Runs the `meta-train` command for a TOML config; returns the losses.
#[pyfunction]
#[pyo3(signature = (config, out, seed = None))]
fn run_meta_train(config: PathBuf, out: PathBuf, seed: Option<u64>) -> PyResult<Vec<f64>> {
    let cfg = RunConfig::load(&config).map_err(py_err)?;
    let seed = seed.unwrap_or(cfg.seed);
    let (_, report) = cmd_meta_train(&cfg, seed, &out).map_err(py_err)?;
    Ok(report.records.iter().map(|r| r.mean_loss).collect())
}

/// Runs the `evaluate` command; returns one summary dict per baseline.
#[pyfunction]
#[pyo3(signature = (config, out, baselines = None, workers = 1, seed = None))]
fn run_evaluate<'py>(
    py: Python<'py>,
    config: PathBuf,
    out: PathBuf,
    baselines: Option<Vec<String>>,
    workers: usize,
    seed: Option<u64>,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let cfg = RunConfig::load(&config).map_err(py_err)?;
    let seed = seed.unwrap_or(cfg.seed);
    let names = baselines.unwrap_or_else(|| cfg.evaluation.baselines.clone());
    let bs: Vec<Baseline> = parse_baselines(&names).map_err(py_err)?;
    let outcome = cmd_evaluate(&cfg, seed, &out, &bs, workers).map_err(py_err)?;
    outcome
        .summaries
        .iter()
        .map(|s| {
            let d = PyDict::new(py);
            d.set_item("baseline", &s.baseline)?;
            d.set_item("variants", s.variants)?;
            d.set_item("mean_reward", s.mean_reward)?;
            d.set_item("ci_lo", s.ci_lo)?;
            d.set_item("ci_hi", s.ci_hi)?;
            d.set_item("mean_length", s.mean_length)?;
            d.set_item("completion", s.completion)?;
            d.set_item("sufficient_fraction", s.sufficient_fraction)?;
            d.set_item("mean_extra", s.mean_extra)?;
            d.set_item("mean_missing", s.mean_missing)?;
            Ok(d)
        })
        .collect()
}

/// Indices of the smallest set of options whose mass exceeds `p`.
#[pyfunction]
fn top_p(probs: Vec<f64>, p: f64) -> PyResult<Vec<usize>> {
    Ok(oihrl::index::top_p(&probs, p).map_err(py_err)?.into_iter().map(|o| o.0).collect())
}

#[pymodule]
fn oihrl_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Domain>()?;
    m.add_class::<Retriever>()?;
    m.add_function(wrap_pyfunction!(run_meta_train, m)?)?;
    m.add_function(wrap_pyfunction!(run_evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(top_p, m)?)?;
    Ok(())
}
