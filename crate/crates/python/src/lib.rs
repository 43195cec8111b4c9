//! Python module `sim_py`: meshes, synthetic worlds, CLIP models, losses,
//! retrieval metrics, ridge, statistics and the pipeline commands.

use std::path::Path;

use ndarray::Array2;
use pyo3::exceptions::{PyIndexError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sim_core::clip::{clip_probabilities, directional_loss, similarity_matrix, ClipModel};
use sim_core::datagen::{make_world, TripletSource, WindowSource, World, WorldConfig};
use sim_core::icosphere::{build_patching, generate_icosphere, IcoSphere, PatchIndex};
use sim_core::nn::param_count;
use sim_core::persist::RunConfig;
use sim_core::SimError;

fn py_err(e: SimError) -> PyErr {
    let msg = format!("[{}] {e}", e.kind());
    match e {
        SimError::Argument(_) | SimError::Json(_) | SimError::Format(_) => PyValueError::new_err(msg),
        SimError::Bounds(_) => PyIndexError::new_err(msg),
        _ => PyRuntimeError::new_err(msg),
    }
}

fn rows<T: Copy + Into<f64>>(a: &Array2<T>) -> Vec<Vec<f64>> {
    a.rows().into_iter().map(|r| r.iter().map(|&v| v.into()).collect()).collect()
}

fn matrix(data: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let r = data.len();
    let c = data.first().map_or(0, Vec::len);
    if data.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix"));
    }
    Ok(Array2::from_shape_vec((r, c), data.into_iter().flatten().collect()).expect("checked shape"))
}

fn config_from(json: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match json {
        Some(text) => RunConfig::from_json(text).map_err(py_err)?,
        None => RunConfig::default(),
    };
    cfg.resolve(None).map_err(py_err)
}

#[pyclass(name = "Mesh", module = "sim_py")]
struct PyMesh {
    inner: IcoSphere,
}

#[pymethods]
impl PyMesh {
    #[getter]
    fn level(&self) -> u32 {
        self.inner.level()
    }

    #[getter]
    fn num_vertices(&self) -> usize {
        self.inner.num_vertices()
    }

    #[getter]
    fn num_faces(&self) -> usize {
        self.inner.num_faces()
    }

    fn vertices(&self) -> Vec<[f64; 3]> {
        self.inner.vertices().to_vec()
    }

    fn faces(&self) -> Vec<[u32; 3]> {
        self.inner.faces().to_vec()
    }
}

#[pyfunction]
fn icosphere(level: u32) -> PyResult<PyMesh> {
    Ok(PyMesh {
        inner: generate_icosphere(level).map_err(py_err)?,
    })
}

/// Vertex indices of every patch of `fine_level` cut by `coarse_level` faces.
#[pyfunction]
fn patching(fine_level: u32, coarse_level: u32) -> PyResult<Vec<Vec<u32>>> {
    let p = build_patching(
        &generate_icosphere(fine_level).map_err(py_err)?,
        &generate_icosphere(coarse_level).map_err(py_err)?,
    )
    .map_err(py_err)?;
    Ok(p.patches().map(<[u32]>::to_vec).collect())
}

#[pyfunction]
fn default_config() -> String {
    serde_json::to_string_pretty(&RunConfig::default()).expect("config serializes")
}

#[pyclass(name = "World", module = "sim_py")]
struct PyWorld {
    inner: World,
}

#[pymethods]
impl PyWorld {
    /// Generates a world from a JSON `WorldConfig` (defaults when omitted).
    #[new]
    #[pyo3(signature = (config_json=None))]
    fn new(config_json: Option<&str>) -> PyResult<Self> {
        let cfg: WorldConfig = match config_json {
            Some(t) => serde_json::from_str(t).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => WorldConfig::default(),
        };
        Ok(Self {
            inner: make_world(&cfg).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_triplets(&self) -> usize {
        self.inner.num_triplets()
    }

    fn config_json(&self) -> String {
        serde_json::to_string(&self.inner.config).expect("config serializes")
    }

    /// `V × T` fMRI window of a triplet.
    fn window(&self, id: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(&self.inner.window(id).map_err(py_err)?))
    }

    fn video(&self, id: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(TripletSource::video(&self.inner, id).map_err(py_err)?))
    }

    fn audio(&self, id: usize) -> PyResult<Vec<Vec<f64>>> {
        Ok(rows(TripletSource::audio(&self.inner, id).map_err(py_err)?))
    }

    /// `(subject, movie, clip)` of a triplet id.
    fn key(&self, id: usize) -> PyResult<(usize, usize, usize)> {
        self.inner.check_id(id).map_err(py_err)?;
        let k = self.inner.config.triplet_key(id);
        Ok((k.subject, k.movie, k.clip))
    }

    #[pyo3(signature = (lags, lam=1.0))]
    fn lag_scan(&self, lags: Vec<usize>, lam: f64) -> PyResult<(usize, Vec<(usize, f64)>)> {
        let s = sim_core::eval::lag_scan(&self.inner, &lags, lam).map_err(py_err)?;
        Ok((s.best_lag, s.results.iter().map(|r| (r.lag, r.mean_r)).collect()))
    }
}

#[pyclass(name = "ClipModel", module = "sim_py")]
struct PyClipModel {
    inner: ClipModel<f32>,
    patching: PatchIndex,
}

#[pymethods]
impl PyClipModel {
    /// Randomly initialized model for a run config, optionally restored from
    /// a CLIP checkpoint.
    #[new]
    #[pyo3(signature = (config_json=None, checkpoint=None, force=false))]
    fn new(config_json: Option<&str>, checkpoint: Option<&str>, force: bool) -> PyResult<Self> {
        let cfg = config_from(config_json)?;
        let inner = match checkpoint {
            Some(p) => sim_cli::load_clip_model(&cfg, &cfg.world, Path::new(p), force),
            None => sim_cli::new_clip_model(&cfg, &cfg.world),
        }
        .map_err(py_err)?;
        Ok(Self {
            inner,
            patching: sim_cli::patching_for(&cfg).map_err(py_err)?,
        })
    }

    #[getter]
    fn num_params(&self) -> usize {
        param_count(&self.inner)
    }

    #[getter]
    fn tau(&self) -> f64 {
        self.inner.tau
    }

    fn embed_fmri(&self, window: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let w = matrix(window)?.mapv(|v| v as f32);
        let y = self.inner.embed_fmri(w.view(), &self.patching).map_err(py_err)?;
        Ok(y.iter().map(|&v| v as f64).collect())
    }

    fn embed_video(&self, seq: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let s = matrix(seq)?.mapv(|v| v as f32);
        Ok(self.inner.embed_video(s.view()).map_err(py_err)?.iter().map(|&v| v as f64).collect())
    }

    fn embed_audio(&self, seq: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let s = matrix(seq)?.mapv(|v| v as f32);
        Ok(self.inner.embed_audio(s.view()).map_err(py_err)?.iter().map(|&v| v as f64).collect())
    }
}

/// Directional CLIP loss of unit-norm embedding rows `a` against `b`.
#[pyfunction]
fn clip_loss(a: Vec<Vec<f64>>, b: Vec<Vec<f64>>, tau: f64) -> PyResult<f64> {
    let z = similarity_matrix(matrix(a)?.view(), matrix(b)?.view()).map_err(py_err)?;
    let p = clip_probabilities(&z, tau).map_err(py_err)?;
    Ok(directional_loss(&p))
}

/// `(mean %, CI half-width %)`.
#[pyfunction]
fn topk_accuracy(ranks: Vec<usize>, k: usize) -> PyResult<(f64, f64)> {
    let a = sim_core::eval::topk_accuracy(&ranks, k).map_err(py_err)?;
    Ok((a.mean, a.ci))
}

/// `(W, b)` with `Y ≈ X·W + b`.
#[pyfunction]
fn ridge_fit(x: Vec<Vec<f64>>, y: Vec<Vec<f64>>, lam: f64) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let m = sim_core::eval::ridge_fit(matrix(x)?.view(), matrix(y)?.view(), lam).map_err(py_err)?;
    let b = &m.intercept - &m.x_mean.dot(&m.weights);
    Ok((rows(&m.weights), b.to_vec()))
}

/// `(t, p_raw, p_bonferroni)` of Welch's test.
#[pyfunction]
#[pyo3(signature = (a, b, num_comparisons=1))]
fn welch_ttest(a: Vec<f64>, b: Vec<f64>, num_comparisons: usize) -> PyResult<(f64, f64, f64)> {
    let t = sim_core::eval::welch_ttest(&a, &b, num_comparisons).map_err(py_err)?;
    Ok((t.t, t.p_raw, t.p_bonferroni))
}

#[pyfunction]
fn pearson(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    sim_core::attnmap::correlate_fields(&a, &b, None).map_err(py_err)
}

/// Runs `sim synth` and returns the dataset path.
#[pyfunction]
#[pyo3(signature = (out, config_json=None))]
fn synth(out: &str, config_json: Option<&str>) -> PyResult<String> {
    let cfg = config_from(config_json)?;
    let p = sim_cli::cmd_synth(&cfg, Path::new(out)).map_err(py_err)?;
    Ok(p.display().to_string())
}

#[pymodule]
fn sim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyMesh>()?;
    m.add_class::<PyWorld>()?;
    m.add_class::<PyClipModel>()?;
    m.add_function(wrap_pyfunction!(icosphere, m)?)?;
    m.add_function(wrap_pyfunction!(patching, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(clip_loss, m)?)?;
    m.add_function(wrap_pyfunction!(topk_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(ridge_fit, m)?)?;
    m.add_function(wrap_pyfunction!(welch_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(pearson, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nested_lists_round_trip() {
        let data = vec![vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]];
        let m = matrix(data.clone()).unwrap();
        assert_eq!(m.dim(), (2, 3));
        assert_eq!(rows(&m), data);
    }

    #[test]
    fn ragged_rows_rejected() {
        assert!(matrix(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn empty_matrix_is_zero_by_zero() {
        assert_eq!(matrix(Vec::new()).unwrap().dim(), (0, 0));
    }
}
