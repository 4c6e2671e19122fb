//! Python bindings: scene types, risk models, synthetic scenarios, label
//! reconstruction, metrics and the full synthetic study.

use std::path::PathBuf;

use dspr_core::dataset::{consistency_filter as filter_frames, plurality_labels as plurality, ClassThresholds};
use dspr_core::dspr::{object_risk as risk_of, risk_series as series, risk_vector, DsprModel, RiskModel};
use dspr_core::geometry::{first_contact as contact, RpdTier, Vec2};
use dspr_core::learn::{evaluate as score, SoftmaxConfig, SoftmaxRegression};
use dspr_core::pipeline::{run_study as study, StudyConfig};
use dspr_core::scene::{
    load_scenario as load, save_scenario, Frame as CoreFrame, KinematicState as CoreState, ObjectKind, RatingPanel,
    Scenario as CoreScenario, TrafficObject as CoreObject,
};
use dspr_core::synth::{gen_scenario as generate, ScenarioKind};
use dspr_core::ttc::inverse_ttc_vector;
use dspr_core::{DsprParams, Error, ErrorCategory};
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn py_err(e: Error) -> PyErr {
    match (&e, e.category()) {
        (Error::Io { .. }, _) => PyOSError::new_err(e.to_string()),
        (_, ErrorCategory::Numeric) => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

/// Converts a serializable value into plain Python objects.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Builds a value from keyword arguments layered over its defaults.
fn from_kwargs<T: DeserializeOwned>(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<T> {
    let text: String = match kwargs {
        Some(k) => py.import("json")?.call_method1("dumps", (k,))?.extract()?,
        None => "{}".into(),
    };
    serde_json::from_str(&text).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// Risk-model constants and solver tolerances. Keyword arguments override
/// the defaults, e.g. `Params(horizon=3.0, clamp_spatial=False)`.
#[pyclass(name = "Params", from_py_object)]
#[derive(Clone, Default)]
struct Params(DsprParams);

#[pymethods]
impl Params {
    #[new]
    #[pyo3(signature = (**kwargs))]
    fn new(py: Python<'_>, kwargs: Option<&Bound<'_, PyDict>>) -> PyResult<Self> {
        let p: DsprParams = from_kwargs(py, kwargs)?;
        p.validate().map_err(py_err)?;
        Ok(Params(p))
    }

    fn to_dict<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0)
    }

    fn __getattr__<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        self.to_dict(py)?
            .get_item(name)
            .map_err(|_| pyo3::exceptions::PyAttributeError::new_err(name.to_string()))
    }
}

fn params_or_default(params: Option<&Params>) -> DsprParams {
    params.map(|p| p.0.clone()).unwrap_or_default()
}

/// Planar kinematic state; heading in radians counterclockwise from +x.
#[pyclass(name = "KinematicState", from_py_object)]
#[derive(Clone)]
struct KinematicState(CoreState);

#[pymethods]
impl KinematicState {
    #[new]
    #[pyo3(signature = (x, y, vx, vy, ax = 0.0, ay = 0.0, heading = 0.0))]
    fn new(x: f64, y: f64, vx: f64, vy: f64, ax: f64, ay: f64, heading: f64) -> PyResult<Self> {
        CoreState::new(Vec2::new(x, y), Vec2::new(vx, vy), Vec2::new(ax, ay), heading)
            .map(KinematicState)
            .map_err(py_err)
    }

    #[getter]
    fn position(&self) -> (f64, f64) {
        (self.0.position.x, self.0.position.y)
    }

    #[getter]
    fn velocity(&self) -> (f64, f64) {
        (self.0.velocity.x, self.0.velocity.y)
    }

    #[getter]
    fn acceleration(&self) -> (f64, f64) {
        (self.0.acceleration.x, self.0.acceleration.y)
    }

    #[getter]
    fn heading(&self) -> f64 {
        self.0.heading
    }

    #[getter]
    fn speed(&self) -> f64 {
        self.0.speed()
    }

    fn __repr__(&self) -> String {
        let s = &self.0;
        format!(
            "KinematicState(x={}, y={}, vx={}, vy={}, heading={})",
            s.position.x, s.position.y, s.velocity.x, s.velocity.y, s.heading
        )
    }
}

fn parse_kind(kind: &str) -> PyResult<ObjectKind> {
    match kind {
        "vehicle" => Ok(ObjectKind::Vehicle),
        "pedestrian" => Ok(ObjectKind::Pedestrian),
        _ => Err(PyValueError::new_err(format!("kind must be `vehicle` or `pedestrian`, got `{kind}`"))),
    }
}

/// A traffic participant; the footprint defaults by kind.
#[pyclass(name = "TrafficObject", from_py_object)]
#[derive(Clone)]
struct TrafficObject(CoreObject);

#[pymethods]
impl TrafficObject {
    #[new]
    #[pyo3(signature = (id, kind, state, length = None, width = None))]
    fn new(id: String, kind: &str, state: &KinematicState, length: Option<f64>, width: Option<f64>) -> PyResult<Self> {
        let mut obj = CoreObject::new(id, parse_kind(kind)?, state.0);
        if let Some(l) = length {
            obj.length = l;
        }
        if let Some(w) = width {
            obj.width = w;
        }
        obj.validate().map_err(py_err)?;
        Ok(TrafficObject(obj))
    }

    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        match self.0.kind {
            ObjectKind::Vehicle => "vehicle",
            ObjectKind::Pedestrian => "pedestrian",
        }
    }

    #[getter]
    fn state(&self) -> KinematicState {
        KinematicState(self.0.state)
    }

    #[getter]
    fn footprint(&self) -> (f64, f64) {
        (self.0.length, self.0.width)
    }
}

/// One time step: ego state, surrounding objects and road class (1-6).
#[pyclass(name = "Frame", from_py_object)]
#[derive(Clone)]
struct Frame(CoreFrame);

#[pymethods]
impl Frame {
    #[new]
    #[pyo3(signature = (timestamp, ego, objects, road_condition = 1))]
    fn new(timestamp: f64, ego: &KinematicState, objects: Vec<TrafficObject>, road_condition: u8) -> PyResult<Self> {
        let frame = CoreFrame {
            timestamp,
            ego: ego.0,
            objects: objects.into_iter().map(|o| o.0).collect(),
            road_condition,
        };
        frame.validate().map_err(py_err)?;
        Ok(Frame(frame))
    }

    #[getter]
    fn timestamp(&self) -> f64 {
        self.0.timestamp
    }

    #[getter]
    fn ego(&self) -> KinematicState {
        KinematicState(self.0.ego)
    }

    #[getter]
    fn objects(&self) -> Vec<TrafficObject> {
        self.0.objects.iter().cloned().map(TrafficObject).collect()
    }

    #[getter]
    fn road_condition(&self) -> u8 {
        self.0.road_condition
    }
}

/// A validated, evenly sampled traffic clip.
#[pyclass(name = "Scenario", from_py_object)]
#[derive(Clone)]
struct Scenario(CoreScenario);

#[pymethods]
impl Scenario {
    #[getter]
    fn id(&self) -> String {
        self.0.id.clone()
    }

    #[getter]
    fn frequency(&self) -> f64 {
        self.0.frequency
    }

    fn __len__(&self) -> usize {
        self.0.frames.len()
    }

    fn frame(&self, index: usize) -> PyResult<Frame> {
        self.0
            .frames
            .get(index)
            .cloned()
            .map(Frame)
            .ok_or_else(|| pyo3::exceptions::PyIndexError::new_err(index))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_scenario(&self.0, path).map_err(py_err)
    }

    /// Per-frame 40-slot risk vectors from `model` ("dspr" or "ttc").
    #[pyo3(signature = (model = "dspr", params = None))]
    fn risk_series(&self, model: &str, params: Option<&Params>) -> PyResult<Vec<Vec<f64>>> {
        let m: Box<dyn RiskModel> = match model {
            "dspr" => Box::new(DsprModel::new(params_or_default(params))),
            "ttc" => Box::new(dspr_core::ttc::TtcModel::default()),
            _ => return Err(PyValueError::new_err(format!("model must be `dspr` or `ttc`, got `{model}`"))),
        };
        Ok(series(m.as_ref(), &self.0).into_iter().map(|v| v.values().to_vec()).collect())
    }
}

/// 40-slot risk vector of a frame plus the per-object breakdowns.
#[pyfunction]
#[pyo3(signature = (frame, params = None))]
fn risk<'py>(py: Python<'py>, frame: &Frame, params: Option<&Params>) -> PyResult<(Vec<f64>, Bound<'py, PyAny>)> {
    let (v, breakdowns) = risk_vector(&frame.0, &params_or_default(params));
    Ok((v.values().to_vec(), to_py(py, &breakdowns)?))
}

/// Risk breakdown of one object for an ego state.
#[pyfunction]
#[pyo3(signature = (ego, obj, params = None))]
fn object_risk<'py>(
    py: Python<'py>,
    ego: &KinematicState,
    obj: &TrafficObject,
    params: Option<&Params>,
) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &risk_of(&ego.0, &obj.0, &params_or_default(params)))
}

/// Capped inverse time-to-collision per slot.
#[pyfunction]
#[pyo3(signature = (frame, cap = 10.0, min_range = 0.1))]
fn inverse_ttc(frame: &Frame, cap: f64, min_range: f64) -> Vec<f64> {
    inverse_ttc_vector(&frame.0, cap, min_range).values().to_vec()
}

/// First time (s) the object enters the ego's strong or weak domain within
/// the horizon, or None.
#[pyfunction]
#[pyo3(signature = (ego, obj, tier = "strong", params = None))]
fn first_contact(ego: &KinematicState, obj: &TrafficObject, tier: &str, params: Option<&Params>) -> PyResult<Option<f64>> {
    let tier = match tier {
        "strong" => RpdTier::Strong,
        "weak" => RpdTier::Weak,
        _ => return Err(PyValueError::new_err(format!("tier must be `strong` or `weak`, got `{tier}`"))),
    };
    Ok(contact(&ego.0, &obj.0, tier, &params_or_default(params)).time())
}

/// Synthetic clip of `kind`: free_flow, lead_brake, cut_in, crossing_ped
/// or mixed.
#[pyfunction]
#[pyo3(signature = (id, kind, duration = 15.0, seed = 0))]
fn gen_scenario(id: &str, kind: &str, duration: f64, seed: u64) -> PyResult<Scenario> {
    let kind: ScenarioKind = kind.parse().map_err(py_err)?;
    generate(id, kind, duration, seed).map(Scenario).map_err(py_err)
}

#[pyfunction]
fn load_scenario(path: PathBuf) -> PyResult<Scenario> {
    load(path).map(Scenario).map_err(py_err)
}

fn panel(ratings: Vec<Vec<u8>>) -> PyResult<RatingPanel> {
    if ratings.iter().flatten().any(|r| !(1..=5).contains(r)) {
        return Err(PyValueError::new_err("ratings must lie in 1..=5"));
    }
    let ratings = ratings
        .into_iter()
        .map(|row| row.into_iter().map(|r| r.min(4)).collect())
        .collect();
    Ok(RatingPanel {
        scenario_id: "panel".into(),
        ratings,
    })
}

/// Per-frame true label (1-4) or None from a participants x frames rating
/// matrix. Ratings of 5 count as 4.
#[pyfunction]
#[pyo3(signature = (ratings, p_true = None))]
fn consistency_filter(ratings: Vec<Vec<u8>>, p_true: Option<[f64; 4]>) -> PyResult<Vec<Option<u8>>> {
    let thresholds = p_true.map_or_else(ClassThresholds::default, |p_true| ClassThresholds { p_true });
    thresholds.validate().map_err(py_err)?;
    let decisions = filter_frames(&panel(ratings)?, &thresholds).map_err(py_err)?;
    Ok(decisions.into_iter().map(|d| d.label()).collect())
}

/// Most common rating per frame, ties resolved toward the lower rating.
#[pyfunction]
fn plurality_labels(ratings: Vec<Vec<u8>>) -> PyResult<Vec<u32>> {
    // A Vec<u8> would cross over as `bytes`.
    let labels = plurality(&panel(ratings)?).map_err(py_err)?;
    Ok(labels.into_iter().map(u32::from).collect())
}

/// Accuracy, per-class and macro precision/recall/F1/AUC and the confusion
/// matrix of 4-class probabilities against labels in 1..=4.
#[pyfunction]
fn evaluate<'py>(py: Python<'py>, probabilities: Vec<[f64; 4]>, labels: Vec<u8>) -> PyResult<Bound<'py, PyAny>> {
    let metrics = score(&probabilities, &labels).map_err(py_err)?;
    to_py(py, &metrics)
}

/// Runs the default synthetic study. Keyword arguments override fields of
/// the study configuration (suite_seed, params, panel, pipeline, baseline,
/// compare_ttc); `classifier` takes reference-classifier settings.
#[pyfunction]
#[pyo3(signature = (classifier = None, **kwargs))]
fn run_study<'py>(
    py: Python<'py>,
    classifier: Option<&Bound<'py, PyDict>>,
    kwargs: Option<&Bound<'py, PyDict>>,
) -> PyResult<Bound<'py, PyAny>> {
    let config: StudyConfig = from_kwargs(py, kwargs)?;
    let settings: SoftmaxConfig = from_kwargs(py, classifier)?;
    settings.validate().map_err(py_err)?;
    let report = py
        .detach(|| study(&SoftmaxRegression::new(settings), &config))
        .map_err(py_err)?;
    to_py(py, &report)
}

#[pymodule]
fn dspr(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Params>()?;
    m.add_class::<KinematicState>()?;
    m.add_class::<TrafficObject>()?;
    m.add_class::<Frame>()?;
    m.add_class::<Scenario>()?;
    m.add_function(wrap_pyfunction!(risk, m)?)?;
    m.add_function(wrap_pyfunction!(object_risk, m)?)?;
    m.add_function(wrap_pyfunction!(inverse_ttc, m)?)?;
    m.add_function(wrap_pyfunction!(first_contact, m)?)?;
    m.add_function(wrap_pyfunction!(gen_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(load_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(consistency_filter, m)?)?;
    m.add_function(wrap_pyfunction!(plurality_labels, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    Ok(())
}
