//! Python bindings for a small slice of the signforge toolkit: sign
//! transforms, legibility contrast, sign rasterization, and the
//! cross-entropy optimizer driving a Python objective.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use signforge::ceopt::{
    optimize as run_optimize, CandidatePoint, CeError, CeSettings, CellPartition, Coordinate,
    SearchSpace,
};
use signforge::domain::Rgb;
use signforge::oracle::contrast_ratio as wcag_contrast;
use signforge::render::{
    natural_canvas, rasterize_sign_layers, similarity_matrix as similarity, SignSpec,
};

fn rgb(channels: (u8, u8, u8)) -> Rgb {
    Rgb([channels.0, channels.1, channels.2])
}

fn ce_to_py(err: CeError) -> PyErr {
    match err {
        // Surface the Python exception that aborted the objective instead
        // of wrapping its message.
        CeError::Evaluation(source) => match source.downcast::<PyErr>() {
            Ok(py_err) => *py_err,
            Err(other) => PyRuntimeError::new_err(other.to_string()),
        },
        other => PyValueError::new_err(other.to_string()),
    }
}

#[pyfunction]
fn version() -> &'static str {
    env!("CARGO_PKG_VERSION")
}

/// Row-major 3x3 similarity transform: scale, then rotate by `rotation`
/// radians counterclockwise, then translate by (tx, ty).
#[pyfunction]
fn similarity_matrix(scale: f64, rotation: f64, tx: f64, ty: f64) -> PyResult<Vec<Vec<f64>>> {
    let m = similarity(scale, rotation, tx, ty).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok((0..3)
        .map(|row| (0..3).map(|col| m[(row, col)]).collect())
        .collect())
}

/// WCAG-style contrast ratio between two RGB triples, in [1, 21].
#[pyfunction]
fn contrast_ratio(fg: (u8, u8, u8), bg: (u8, u8, u8)) -> f64 {
    wcag_contrast(rgb(fg), rgb(bg))
}

/// Rasterizes a sign at its natural canvas size and returns PNG bytes.
#[pyfunction]
fn render_sign_png<'py>(
    py: Python<'py>,
    text: &str,
    letter_rgb: (u8, u8, u8),
    background_rgb: (u8, u8, u8),
    font_scale: u32,
) -> PyResult<Bound<'py, PyBytes>> {
    let spec = SignSpec::new(text, rgb(letter_rgb), rgb(background_rgb), font_scale)
        .map_err(|e| PyValueError::new_err(e.to_string()))?;
    let (width, height) = natural_canvas(text, font_scale);
    let raster =
        rasterize_sign_layers(&spec, width, height).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let bytes = raster
        .image
        .to_png_bytes()
        .map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    Ok(PyBytes::new(py, &bytes))
}

fn parse_coordinate(index: usize, item: &Bound<'_, PyAny>) -> PyResult<Coordinate> {
    let parts: Vec<Bound<'_, PyAny>> = item.extract().map_err(|_| {
        PyValueError::new_err(format!("coordinate {index}: expected a tuple"))
    })?;
    let kind: String = parts
        .first()
        .ok_or_else(|| PyValueError::new_err(format!("coordinate {index}: empty tuple")))?
        .extract()?;
    match kind.as_str() {
        "categorical" => {
            if parts.len() != 2 {
                return Err(PyValueError::new_err(format!(
                    "coordinate {index}: expected (\"categorical\", size)"
                )));
            }
            Ok(Coordinate::Categorical { size: parts[1].extract()? })
        }
        "int" => {
            if parts.len() != 4 {
                return Err(PyValueError::new_err(format!(
                    "coordinate {index}: expected (\"int\", lo, hi, bins)"
                )));
            }
            Ok(Coordinate::BoundedInteger {
                lo: parts[1].extract()?,
                hi: parts[2].extract()?,
                bins: parts[3].extract()?,
            })
        }
        other => Err(PyValueError::new_err(format!(
            "coordinate {index}: unknown kind {other:?} (use \"categorical\" or \"int\")"
        ))),
    }
}

/// Cross-entropy search over a discrete space, scoring candidates with a
/// Python callable that receives a list of ints and returns a float.
/// Returns a dict with best_point, best_score, evaluations, iterations,
/// and truncated.
#[pyfunction]
#[pyo3(signature = (coordinates, objective, *, max_iterations=30, n_s=20, n_bar_s=5, seed=0,
    rho_smooth=0.3, epsilon_floor=1e-3, target_score=None, max_evaluations=None))]
#[allow(clippy::too_many_arguments)]
fn optimize(
    py: Python<'_>,
    coordinates: Vec<Bound<'_, PyAny>>,
    objective: Py<PyAny>,
    max_iterations: u32,
    n_s: usize,
    n_bar_s: usize,
    seed: u64,
    rho_smooth: f64,
    epsilon_floor: f64,
    target_score: Option<f64>,
    max_evaluations: Option<u64>,
) -> PyResult<Py<PyDict>> {
    let coords = coordinates
        .iter()
        .enumerate()
        .map(|(i, item)| parse_coordinate(i, item))
        .collect::<PyResult<Vec<_>>>()?;
    let space = SearchSpace::new(coords).map_err(ce_to_py)?;
    let partition = CellPartition::regular(&space);
    let settings = CeSettings {
        max_iterations,
        n_s,
        n_bar_s,
        seed,
        rho_smooth,
        epsilon_floor,
        target_score,
        max_evaluations,
    };

    let objective_fn = move |point: &CandidatePoint| -> Result<f64, CeError> {
        Python::attach(|py| {
            objective
                .call1(py, (point.values.clone(),))
                .and_then(|value| value.extract::<f64>(py))
                .map_err(|e| CeError::Evaluation(Box::new(e)))
        })
    };
    // Candidates are evaluated on worker threads that re-attach to the
    // interpreter per call, so the calling thread must let go of it.
    let outcome = py
        .detach(|| run_optimize(&space, &partition, &objective_fn, &settings))
        .map_err(ce_to_py)?;

    let result = PyDict::new(py);
    result.set_item("best_point", outcome.best_point.values.clone())?;
    result.set_item("best_score", outcome.best_score)?;
    result.set_item("evaluations", outcome.evaluations)?;
    result.set_item("iterations", outcome.trace.len())?;
    result.set_item("truncated", outcome.truncated)?;
    Ok(result.unbind())
}

#[pymodule]
fn signforge_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(version, m)?)?;
    m.add_function(wrap_pyfunction!(similarity_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(contrast_ratio, m)?)?;
    m.add_function(wrap_pyfunction!(render_sign_png, m)?)?;
    m.add_function(wrap_pyfunction!(optimize, m)?)?;
    Ok(())
}
