//! Python bindings: the training entry point, checkpoint inference, the
//! evaluation metrics and the loss primitives, exposed over plain lists so
//! the module works without any array dependency.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use drdg_core::error::DrdgError;
use drdg_core::evalkit::{self, ScoreSet, ThresholdPolicy};
use drdg_core::model::{load_checkpoint, ModelState};
use drdg_core::objectives;
use drdg_core::syndata::{generate_domain_dataset, rgb_pixel_to_hsv, DomainSpec, GenConfig};
use drdg_core::tensor::Tensor;
use drdg_core::trainer::{self, dispatch, prepare_data, RunConfig};

fn err(e: DrdgError) -> PyErr {
    match e {
        DrdgError::Config(_) | DrdgError::Contract(_) => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

/// Step-type names ("DIS" / "SRM_MAIN" / "FRM") for steps 1..=steps.
#[pyfunction]
fn dispatch_trace(steps: u64, k: u64) -> PyResult<Vec<String>> {
    if k < 2 || steps == 0 {
        return Err(PyValueError::new_err("need steps ≥ 1 and K ≥ 2"));
    }
    Ok((1..=steps).map(|t| dispatch(t, k).to_string()).collect())
}

fn score_set(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<ScoreSet> {
    ScoreSet::new(scores, labels).map_err(err)
}

/// Mann–Whitney AUC of liveness scores (`labels`: true = live).
#[pyfunction]
fn auc(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<f64> {
    evalkit::auc(&score_set(scores, labels)?).map_err(err)
}

/// HTER at the EER threshold, or at `threshold` when given.
#[pyfunction]
#[pyo3(signature = (scores, labels, threshold=None))]
fn hter(scores: Vec<f64>, labels: Vec<bool>, threshold: Option<f64>) -> PyResult<f64> {
    let policy = match threshold {
        Some(t) => ThresholdPolicy::Fixed(t),
        None => ThresholdPolicy::Eer,
    };
    evalkit::hter(&score_set(scores, labels)?, &policy).map_err(err)
}

/// ROC sweep: list of (threshold, FAR, FRR).
#[pyfunction]
fn roc_points(scores: Vec<f64>, labels: Vec<bool>) -> PyResult<Vec<(f64, f64, f64)>> {
    let points = evalkit::roc_curve(&score_set(scores, labels)?).map_err(err)?;
    Ok(points.into_iter().map(|p| (p.threshold, p.far, p.frr)).collect())
}

/// Hexcone RGB→HSV for one pixel, all components in [0,1].
#[pyfunction]
fn rgb_to_hsv(r: f64, g: f64, b: f64) -> (f64, f64, f64) {
    rgb_pixel_to_hsv(r, g, b).0
}

/// Mean true-domain NLL over probability rows.
#[pyfunction]
fn loss_dis(probs: Vec<Vec<f64>>, domains: Vec<usize>) -> PyResult<f64> {
    let n = probs.len();
    let m = probs.first().map(|r| r.len()).unwrap_or(0);
    let flat: Vec<f64> = probs.into_iter().flatten().collect();
    let t = Tensor::from_vec(&[n, m], flat).map_err(err)?;
    Ok(objectives::loss_dis(&t, &domains).map_err(err)?.value)
}

/// The default experiment config as a JSON string.
#[pyfunction]
fn default_config() -> PyResult<String> {
    serde_json::to_string_pretty(&RunConfig::default())
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))
}

/// Generate one synthetic domain. Returns
/// `(images_flat, image_shape, labels, depth_flat, depth_shape)`.
#[pyfunction]
#[pyo3(signature = (spec_json, n, seed, gen_json=None))]
fn generate_dataset(
    spec_json: &str,
    n: usize,
    seed: u64,
    gen_json: Option<&str>,
) -> PyResult<(Vec<f64>, Vec<usize>, Vec<u8>, Vec<f64>, Vec<usize>)> {
    let spec: DomainSpec =
        serde_json::from_str(spec_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let gen: GenConfig = match gen_json {
        Some(j) => serde_json::from_str(j).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => GenConfig::default(),
    };
    let samples = generate_domain_dataset(&spec, &gen, n, seed).map_err(err)?;
    let (h, w) = gen.image_hw;
    let (dh, dw) = gen.depth_hw;
    let mut images = Vec::with_capacity(n * h * w * 6);
    let mut depth = Vec::with_capacity(n * dh * dw);
    let mut labels = Vec::with_capacity(n);
    for s in &samples {
        images.extend_from_slice(s.image.data());
        depth.extend_from_slice(s.depth_target.data());
        labels.push(u8::from(s.live));
    }
    Ok((images, vec![n, h, w, 6], labels, depth, vec![n, dh, dw]))
}

/// A trained (or freshly loaded) model with its inference path.
#[pyclass]
struct Model {
    state: ModelState,
    frm_enabled: bool,
}

#[pymethods]
impl Model {
    /// Load a checkpoint stem (path without the .bin/.json extension).
    #[staticmethod]
    fn load(stem: &str) -> PyResult<Model> {
        let (state, _report) = load_checkpoint(std::path::Path::new(stem)).map_err(err)?;
        let frm_enabled = std::fs::read_to_string(format!("{}.json", stem))
            .ok()
            .and_then(|t| serde_json::from_str::<serde_json::Value>(&t).ok())
            .and_then(|v| v["meta"]["extra"]["frm_enabled"].as_bool())
            .unwrap_or(true);
        Ok(Model { state, frm_enabled })
    }

    /// Liveness probability of one H×W×6 image given as a flat row-major
    /// list (channels last).
    fn infer(&self, image: Vec<f64>, h: usize, w: usize) -> PyResult<f64> {
        let t = Tensor::from_vec(&[h, w, 6], image).map_err(err)?;
        evalkit::infer(&self.state, &t, self.frm_enabled).map_err(err)
    }

    /// Image size (h, w) the model expects.
    #[getter]
    fn image_hw(&self) -> (usize, usize) {
        self.state.arch.image_hw
    }

    #[getter]
    fn step(&self) -> u64 {
        self.state.step
    }
}

/// Run the full training schedule from a JSON config. Returns the trained
/// model and the run summary as JSON. With `out_dir`, the run directory
/// (step log, checkpoints, score dumps) is written there.
#[pyfunction]
#[pyo3(signature = (config_json, out_dir=None))]
fn train(config_json: &str, out_dir: Option<&str>) -> PyResult<(Model, String)> {
    let cfg: RunConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let data = prepare_data(&cfg).map_err(err)?;
    let dir = out_dir.map(std::path::PathBuf::from);
    let (state, log) = trainer::train(&cfg, &data, dir.as_deref()).map_err(err)?;
    let summary = serde_json::to_string(&log.summary)
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok((
        Model {
            state,
            frm_enabled: cfg.train.toggles.frm,
        },
        summary,
    ))
}

#[pymodule]
fn drdg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dispatch_trace, m)?)?;
    m.add_function(wrap_pyfunction!(auc, m)?)?;
    m.add_function(wrap_pyfunction!(hter, m)?)?;
    m.add_function(wrap_pyfunction!(roc_points, m)?)?;
    m.add_function(wrap_pyfunction!(rgb_to_hsv, m)?)?;
    m.add_function(wrap_pyfunction!(loss_dis, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_class::<Model>()?;
    Ok(())
}
