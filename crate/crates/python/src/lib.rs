//! Python bindings. Matrices cross the boundary as lists of float rows;
//! configs as JSON strings.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use protoflow::diffcore::Tensor;
use protoflow::eval::{evaluate_agent, ExpertAgent, Preset, ScenarioSpec};
use protoflow::factorize;
use protoflow::foresight::{self, ForesightConfig, RolloutConfig};
use protoflow::pipeline::{grad_check_foresight, grad_check_policy};
use protoflow::policy::{self, ConditionTokens, PolicyConfig};

fn py_err(e: protoflow::Error) -> PyErr {
    PyValueError::new_err(format!("{}: {}", e.kind(), e))
}

fn to_tensor(rows: &[Vec<f64>]) -> PyResult<Tensor> {
    Tensor::from_rows(rows).map_err(py_err)
}

fn to_rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

fn parse_config<T: serde::de::DeserializeOwned + Default>(json: Option<&str>) -> PyResult<T> {
    match json {
        None => Ok(T::default()),
        Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(format!("json: {e}"))),
    }
}

/// Block-causal frame mask as a boolean matrix (True = may attend).
#[pyfunction]
fn block_causal_mask(frames: usize, tokens_per_frame: usize) -> PyResult<Vec<Vec<bool>>> {
    let m = foresight::build_block_causal_mask(frames, tokens_per_frame).map_err(py_err)?;
    let n = frames * tokens_per_frame;
    Ok((0..n).map(|r| (0..n).map(|c| m.is_allowed(r, c)).collect()).collect())
}

#[pyfunction]
#[pyo3(signature = (points, k, max_iter = 8, seed = 0))]
fn lloyd_kmeans<'py>(py: Python<'py>, points: Vec<Vec<f64>>, k: usize, max_iter: usize, seed: u64) -> PyResult<Bound<'py, PyDict>> {
    let res = factorize::lloyd_kmeans(&to_tensor(&points)?, k, max_iter, seed).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("centroids", to_rows(&res.centroids))?;
    d.set_item("assignments", res.assignments)?;
    d.set_item("objective", res.objective)?;
    d.set_item("iterations", res.iterations_run)?;
    Ok(d)
}

/// Prototype tokens of one frame; each entry is a dict.
#[pyfunction]
#[pyo3(signature = (frame, patch_rows, patch_cols, scales = vec![1, 2, 4, 8], max_iter = 8, seed = 0))]
fn hierarchical_prototypes<'py>(
    py: Python<'py>,
    frame: Vec<Vec<f64>>,
    patch_rows: usize,
    patch_cols: usize,
    scales: Vec<usize>,
    max_iter: usize,
    seed: u64,
) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let t = to_tensor(&frame)?;
    let grid = protoflow::world::GridSpec {
        patch_rows,
        patch_cols,
        feat_dim: t.cols(),
    };
    let set = factorize::hierarchical_prototypes(&t, &grid, &scales, max_iter, seed).map_err(py_err)?;
    set.tokens
        .iter()
        .map(|tok| {
            let d = PyDict::new(py);
            d.set_item("vector", tok.vector.clone())?;
            d.set_item("scale", tok.scale)?;
            d.set_item("cluster", tok.cluster)?;
            d.set_item("members", tok.members)?;
            d.set_item("position", tok.position.to_vec())?;
            Ok(d)
        })
        .collect()
}

#[pyclass(name = "ForesightModel")]
struct PyForesight {
    inner: foresight::ForesightModel,
}

#[pymethods]
impl PyForesight {
    #[new]
    #[pyo3(signature = (config_json = None, seed = 0))]
    fn new(config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let config: ForesightConfig = parse_config(config_json)?;
        Ok(PyForesight {
            inner: foresight::ForesightModel::new(config, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn config_json(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serializes")
    }

    fn num_parameters(&self) -> usize {
        self.inner.params.iter().map(|(_, t)| t.len()).sum()
    }

    /// Flow-matching loss of a clip (list of `[L][d]` frames).
    #[pyo3(signature = (frames, seed = 0))]
    fn loss(&self, frames: Vec<Vec<Vec<f64>>>, seed: u64) -> PyResult<f64> {
        let clip = frames.iter().map(|f| to_tensor(f)).collect::<PyResult<Vec<_>>>()?;
        Ok(self.inner.loss(&clip, seed).map_err(py_err)?.0)
    }

    #[pyo3(signature = (history, horizon = 4, denoise_steps = 4, seed = 0))]
    fn rollout(&self, history: Vec<Vec<Vec<f64>>>, horizon: usize, denoise_steps: usize, seed: u64) -> PyResult<Vec<Vec<Vec<f64>>>> {
        let hist = history.iter().map(|f| to_tensor(f)).collect::<PyResult<Vec<_>>>()?;
        let cfg = RolloutConfig {
            horizon,
            denoise_steps,
            seed,
        };
        let out = foresight::rollout(&self.inner, &hist, &cfg).map_err(py_err)?;
        Ok(out.iter().map(to_rows).collect())
    }
}

#[pyclass(name = "PolicyModel")]
struct PyPolicy {
    inner: policy::PolicyModel,
}

#[pymethods]
impl PyPolicy {
    #[new]
    #[pyo3(signature = (config_json = None, seed = 0))]
    fn new(config_json: Option<&str>, seed: u64) -> PyResult<Self> {
        let config: PolicyConfig = parse_config(config_json)?;
        Ok(PyPolicy {
            inner: policy::PolicyModel::new(config, seed).map_err(py_err)?,
        })
    }

    #[getter]
    fn config_json(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serializes")
    }

    /// Samples a chunk in raw action units. `prototypes` rows have width
    /// `feat_dim + 3` and may be empty.
    #[pyo3(signature = (task_id, scene, state, prototypes, steps = 4, seed = 0))]
    fn sample(&self, task_id: usize, scene: Vec<f64>, state: Vec<f64>, prototypes: Vec<Vec<f64>>, steps: usize, seed: u64) -> PyResult<Vec<Vec<f64>>> {
        let width = self.inner.config.proto_dim();
        let protos = if prototypes.is_empty() {
            Tensor::zeros(&[0, width])
        } else {
            to_tensor(&prototypes)?
        };
        let cond = ConditionTokens {
            task_id,
            scene,
            state,
            prototypes: protos,
        };
        let chunk = policy::sample_action_chunk(&self.inner, &cond, steps, seed).map_err(py_err)?;
        Ok(to_rows(&chunk.actions))
    }
}

/// Success rate of the scripted expert on a preset ("static-target" or
/// "moving-target").
#[pyfunction]
#[pyo3(signature = (preset, episodes = 50, seed = 0))]
fn expert_success_rate(preset: &str, episodes: usize, seed: u64) -> PyResult<f64> {
    let preset: Preset = serde_json::from_value(serde_json::Value::String(preset.into()))
        .map_err(|e| PyValueError::new_err(format!("preset: {e}")))?;
    let spec = ScenarioSpec {
        preset,
        task_id: 0,
        layout_seed: 1,
        grid: None,
        episode_length: None,
    };
    let scenario = spec.build().map_err(py_err)?;
    let report = evaluate_agent(&mut ExpertAgent, "expert", &[scenario], None, episodes, seed).map_err(py_err)?;
    Ok(report.rows[0].success_rate)
}

/// Max relative finite-difference error for "foresight" or "policy".
#[pyfunction]
#[pyo3(signature = (module, seed = 0))]
fn grad_check(module: &str, seed: u64) -> PyResult<f64> {
    let report = match module {
        "foresight" => grad_check_foresight(seed),
        "policy" => grad_check_policy(seed),
        other => return Err(PyValueError::new_err(format!("unknown module {other:?}"))),
    }
    .map_err(py_err)?;
    Ok(report.max_relative_error)
}

#[pymodule]
fn protoflow_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(block_causal_mask, m)?)?;
    m.add_function(wrap_pyfunction!(lloyd_kmeans, m)?)?;
    m.add_function(wrap_pyfunction!(hierarchical_prototypes, m)?)?;
    m.add_function(wrap_pyfunction!(expert_success_rate, m)?)?;
    m.add_function(wrap_pyfunction!(grad_check, m)?)?;
    m.add_class::<PyForesight>()?;
    m.add_class::<PyPolicy>()?;
    Ok(())
}
