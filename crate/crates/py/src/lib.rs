//! Python bindings for the panel forecasting library: panels, generators,
//! strategy fits, regret reports, closed-form bounds, rank-based inference,
//! and the simplex projection.
//!
//! Composite inputs (generator specs, strategies, bound formulas) arrive as
//! the same JSON the command line accepts — pass a label like `"ftl"` or a
//! `json.dumps`-ed object; results come back as plain dicts and lists.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use serde_json::Value as JsonValue;

use synthreg::adversary::GeneratorSpec;
use synthreg::cli::{oracle_class_for, parse_strategy};
use synthreg::panel::Panel;
use synthreg::protocol::{
    compute_regret, oracle_fixed_weights, protocol_loss, run_protocol, theoretical_bound,
    BoundKind, OracleClass, RegretOptions,
};
use synthreg::simplex::Loss;

fn py_err(err: synthreg::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn json_err(err: serde_json::Error) -> PyErr {
    PyValueError::new_err(err.to_string())
}

/// Renders any serializable result as Python dicts/lists/scalars.
fn value_to_py(py: Python<'_>, value: &JsonValue) -> PyObject {
    match value {
        JsonValue::Null => py.None(),
        JsonValue::Bool(b) => b.into_py(py),
        JsonValue::Number(n) => {
            if let Some(i) = n.as_i64() {
                i.into_py(py)
            } else if let Some(u) = n.as_u64() {
                u.into_py(py)
            } else {
                n.as_f64().unwrap_or(f64::NAN).into_py(py)
            }
        }
        JsonValue::String(s) => s.into_py(py),
        JsonValue::Array(items) => {
            PyList::new_bound(py, items.iter().map(|v| value_to_py(py, v))).into_py(py)
        }
        JsonValue::Object(map) => {
            let dict = PyDict::new_bound(py);
            for (k, v) in map {
                dict.set_item(k, value_to_py(py, v)).expect("fresh dict accepts items");
            }
            dict.into_py(py)
        }
    }
}

fn serialize_to_py<T: serde::Serialize>(py: Python<'_>, value: &T) -> PyResult<PyObject> {
    let json = serde_json::to_value(value).map_err(json_err)?;
    Ok(value_to_py(py, &json))
}

/// `{"kind": ...}` JSON object, or a bare label for parameter-free formulas.
fn parse_bound(input: &str) -> PyResult<BoundKind> {
    let trimmed = input.trim();
    let value: JsonValue = if trimmed.starts_with('{') {
        serde_json::from_str(trimmed).map_err(json_err)?
    } else {
        serde_json::json!({ "kind": trimmed })
    };
    serde_json::from_value(value).map_err(json_err)
}

fn parse_loss(input: &str) -> PyResult<Loss> {
    serde_json::from_value(JsonValue::String(input.trim().to_string())).map_err(json_err)
}

/// A single treated series plus its control series.
#[pyclass(name = "Panel")]
#[derive(Clone)]
struct PyPanel {
    inner: Panel,
}

#[pymethods]
impl PyPanel {
    /// `Panel(treated, controls, bound=None)`: `controls` is one list per
    /// control unit; the outcome bound is inferred when omitted.
    #[new]
    #[pyo3(signature = (treated, controls, bound=None))]
    fn new(treated: Vec<f64>, controls: Vec<Vec<f64>>, bound: Option<f64>) -> PyResult<Self> {
        let inner = match bound {
            Some(b) => Panel::with_bound(treated, controls, b),
            None => Panel::new(treated, controls),
        }
        .map_err(py_err)?;
        Ok(Self { inner })
    }

    /// Reads a `t,y0,y1..yN` CSV.
    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        Ok(Self { inner: Panel::read_csv(path).map_err(py_err)? })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        self.inner.write_csv(path).map_err(py_err)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv_string()
    }

    #[getter]
    fn units(&self) -> usize {
        self.inner.units()
    }

    #[getter]
    fn periods(&self) -> usize {
        self.inner.periods()
    }

    #[getter]
    fn bound(&self) -> f64 {
        self.inner.bound()
    }

    fn treated(&self) -> Vec<f64> {
        self.inner.treated().to_vec()
    }

    /// Outcomes of control unit `i` (1-based, matching the CSV header).
    fn control(&self, i: usize) -> PyResult<Vec<f64>> {
        if i == 0 || i > self.inner.units() {
            return Err(PyValueError::new_err(format!(
                "control index {i} outside 1..={}",
                self.inner.units()
            )));
        }
        Ok((1..=self.inner.periods()).map(|t| self.inner.controls_at(t)[i - 1]).collect())
    }

    fn __repr__(&self) -> String {
        format!("Panel(units={}, periods={})", self.inner.units(), self.inner.periods())
    }

    fn __len__(&self) -> usize {
        self.inner.periods()
    }
}

/// Draws a panel from a seeded generator spec
/// (JSON: `{"kind": "iid_bounded", "n": 4, "t": 60, "seed": 0}`).
#[pyfunction]
fn generate_panel(spec: &str) -> PyResult<PyPanel> {
    let spec: GeneratorSpec = serde_json::from_str(spec).map_err(json_err)?;
    Ok(PyPanel { inner: synthreg::adversary::generate_panel(&spec).map_err(py_err)? })
}

/// Runs a strategy over the panel and returns its trajectory:
/// per-period predictions, losses, and played weights.
#[pyfunction]
fn fit(py: Python<'_>, panel: &PyPanel, strategy: &str) -> PyResult<PyObject> {
    let config = parse_strategy(strategy).map_err(py_err)?;
    let traj = run_protocol(&panel.inner, &config).map_err(py_err)?;
    serialize_to_py(py, &traj)
}

/// Trajectory loss minus the ex-post oracle loss for the strategy's
/// comparator class, optionally against a closed-form bound, a timing
/// density `pi`, and the adaptive subinterval scan.
#[pyfunction]
#[pyo3(signature = (panel, strategy, bound=None, pi=None, adaptive=false))]
fn regret_report(
    py: Python<'_>,
    panel: &PyPanel,
    strategy: &str,
    bound: Option<&str>,
    pi: Option<Vec<f64>>,
    adaptive: bool,
) -> PyResult<PyObject> {
    let config = parse_strategy(strategy).map_err(py_err)?;
    let traj = run_protocol(&panel.inner, &config).map_err(py_err)?;
    let oracle = oracle_fixed_weights(
        &panel.inner,
        oracle_class_for(&config),
        protocol_loss(&config),
    )
    .map_err(py_err)?;
    let bound = bound.map(parse_bound).transpose()?;
    let opts = RegretOptions { pi: pi.as_deref(), bound, adaptive };
    let report = compute_regret(&panel.inner, &traj, &oracle, &opts).map_err(py_err)?;
    serialize_to_py(py, &report)
}

/// Ex-post best fixed weights on the panel for a comparator class
/// (`"simplex"`, `"affine"`, `"twfe"`, `"first_diff"`) and loss
/// (`"squared"`, `"absolute"`).
#[pyfunction]
#[pyo3(signature = (panel, class="simplex", loss="squared"))]
fn oracle_weights(
    py: Python<'_>,
    panel: &PyPanel,
    class: &str,
    loss: &str,
) -> PyResult<PyObject> {
    let class: OracleClass =
        serde_json::from_value(JsonValue::String(class.trim().to_string())).map_err(json_err)?;
    let loss = parse_loss(loss)?;
    let fit = oracle_fixed_weights(&panel.inner, class, loss).map_err(py_err)?;
    serialize_to_py(py, &fit)
}

/// Evaluates a closed-form regret bound at `n` controls and horizon `t`.
/// `kind` is a label (`"theorem1"`, `"ftrl_ridge"`, `"ftrl_entropy"`) or a
/// JSON object for parameterized formulas
/// (`{"kind": "corollary1", "c": 2.0}`).
#[pyfunction]
fn bound_value(kind: &str, n: usize, t: usize) -> PyResult<f64> {
    theoretical_bound(parse_bound(kind)?, n, t).map_err(py_err)
}

/// Rank-based randomization test of a sharp null at treatment period `s`
/// (1-based). `null` is the hypothesized effect path; zeros when omitted.
#[pyfunction]
#[pyo3(signature = (panel, strategy, s, alpha=0.05, c=1.0, null=None))]
fn randomization_test(
    py: Python<'_>,
    panel: &PyPanel,
    strategy: &str,
    s: usize,
    alpha: f64,
    c: f64,
    null: Option<Vec<f64>>,
) -> PyResult<PyObject> {
    let config = parse_strategy(strategy).map_err(py_err)?;
    let study = match null {
        Some(effects) => {
            synthreg::inference::ObservedStudy::with_null(panel.inner.clone(), s, effects)
        }
        None => synthreg::inference::ObservedStudy::new(panel.inner.clone(), s),
    }
    .map_err(py_err)?;
    let test =
        synthreg::inference::randomization_test(&study, &config, alpha, c).map_err(py_err)?;
    serialize_to_py(py, &test)
}

/// Euclidean projection onto the probability simplex.
#[pyfunction]
fn project_simplex(v: Vec<f64>) -> PyResult<Vec<f64>> {
    synthreg::simplex::project_simplex(&v).map_err(py_err)
}

#[pymodule]
fn synthreg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPanel>()?;
    m.add_function(wrap_pyfunction!(generate_panel, m)?)?;
    m.add_function(wrap_pyfunction!(fit, m)?)?;
    m.add_function(wrap_pyfunction!(regret_report, m)?)?;
    m.add_function(wrap_pyfunction!(oracle_weights, m)?)?;
    m.add_function(wrap_pyfunction!(bound_value, m)?)?;
    m.add_function(wrap_pyfunction!(randomization_test, m)?)?;
    m.add_function(wrap_pyfunction!(project_simplex, m)?)?;
    Ok(())
}
