//! Python bindings: the CLI pipeline plus readers for its outputs.

use std::path::PathBuf;

use clap::Parser;
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use lineplane::cli::{error_line, run, Cli};
use lineplane::metrics::{m1_metrics, GroundTruth, M1Block};
use lineplane::{io, raster, Error, LineSegment3D, PlanarPrimitive};

create_exception!(_lineplane, LineplaneError, PyException, "Pipeline error; message starts with the error code.");

fn py_err(e: Error) -> PyErr {
    LineplaneError::new_err(error_line(&e))
}

type Point = (f64, f64, f64);

#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct Plane {
    pub id: u64,
    pub center: Point,
    pub rotation: (f64, f64, f64, f64),
    pub radii: (f64, f64, f64, f64),
}

#[pymethods]
impl Plane {
    fn vertices(&self) -> Vec<Point> {
        let r = self.rotation;
        let p = PlanarPrimitive::new(
            lineplane::PlaneId(self.id),
            lineplane::Vec3::new(self.center.0, self.center.1, self.center.2),
            [r.0, r.1, r.2, r.3],
            [self.radii.0, self.radii.1, self.radii.2, self.radii.3],
        );
        p.vertices().iter().map(|v| (v.x, v.y, v.z)).collect()
    }

    fn __repr__(&self) -> String {
        format!("Plane(id={}, center={:?}, radii={:?})", self.id, self.center, self.radii)
    }
}

impl From<&PlanarPrimitive> for Plane {
    fn from(p: &PlanarPrimitive) -> Self {
        let (r, q) = (p.radii, p.rotation);
        Plane {
            id: p.id.0,
            center: (p.center.x, p.center.y, p.center.z),
            rotation: (q[0], q[1], q[2], q[3]),
            radii: (r[0], r[1], r[2], r[3]),
        }
    }
}

#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
pub struct Line3D {
    pub u: Point,
    pub v: Point,
    pub plane: u64,
    pub edge: u8,
    pub track_len: usize,
}

#[pymethods]
impl Line3D {
    fn length(&self) -> f64 {
        let d = (self.u.0 - self.v.0, self.u.1 - self.v.1, self.u.2 - self.v.2);
        (d.0 * d.0 + d.1 * d.1 + d.2 * d.2).sqrt()
    }

    fn __repr__(&self) -> String {
        format!("Line3D(u={:?}, v={:?}, plane={}, edge={})", self.u, self.v, self.plane, self.edge)
    }
}

impl From<&LineSegment3D> for Line3D {
    fn from(l: &LineSegment3D) -> Self {
        Line3D {
            u: (l.u.x, l.u.y, l.u.z),
            v: (l.v.x, l.v.y, l.v.z),
            plane: l.plane.0,
            edge: l.edge.get(),
            track_len: l.track.len(),
        }
    }
}

/// Runs the command line with `args` (no program name), e.g. `["synth", "--out", "d"]`.
#[pyfunction]
fn run_cli(py: Python<'_>, args: Vec<String>) -> PyResult<()> {
    let cli = Cli::try_parse_from(std::iter::once("lineplane".to_string()).chain(args))
        .map_err(|e| LineplaneError::new_err(format!("E_USAGE {}", e.to_string().lines().next().unwrap_or(""))))?;
    py.detach(|| run(cli)).map_err(py_err)
}

#[pyfunction]
fn lambda_schedule(ite: u64) -> f64 {
    raster::lambda_schedule(ite)
}

#[pyfunction]
fn load_planes(path: PathBuf) -> PyResult<Vec<Plane>> {
    Ok(io::read_planes(&path).map_err(py_err)?.iter().map(Plane::from).collect())
}

fn load_segments(path: &PathBuf) -> Result<Vec<LineSegment3D>, Error> {
    if path.extension().is_some_and(|e| e == "obj") {
        io::read_obj_lines(path)
    } else {
        Ok(io::read_line_map(path)?.lines)
    }
}

/// Lines from a line map or an `.obj` export.
#[pyfunction]
fn load_lines(path: PathBuf) -> PyResult<Vec<Line3D>> {
    Ok(load_segments(&path).map_err(py_err)?.iter().map(Line3D::from).collect())
}

fn block<'py>(py: Python<'py>, b: &M1Block) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("acc", b.acc)?;
    d.set_item("comp", b.comp)?;
    d.set_item("prec", b.prec)?;
    d.set_item("recall", b.recall)?;
    d.set_item("f1", b.f1)?;
    Ok(d)
}

/// Junction and line level M1 metrics of `pred` against the GT `.obj` lines.
#[pyfunction]
#[pyo3(signature = (pred, gt, tau=0.05, gt_samples_per_line=1000))]
fn m1<'py>(py: Python<'py>, pred: PathBuf, gt: PathBuf, tau: f64, gt_samples_per_line: usize) -> PyResult<Bound<'py, PyDict>> {
    let report = py
        .detach(|| {
            let pred = load_segments(&pred)?;
            let gt = GroundTruth::from_lines(&io::read_obj_lines(&gt)?, gt_samples_per_line)?;
            m1_metrics(&pred, &gt, tau, true)
        })
        .map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("tau", report.tau)?;
    d.set_item("lines", report.lines)?;
    d.set_item("junction", block(py, &report.junction)?)?;
    d.set_item("line", block(py, &report.line)?)?;
    Ok(d)
}

#[pymodule]
fn _lineplane(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("LineplaneError", m.py().get_type::<LineplaneError>())?;
    m.add_class::<Plane>()?;
    m.add_class::<Line3D>()?;
    m.add_function(wrap_pyfunction!(run_cli, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(load_planes, m)?)?;
    m.add_function(wrap_pyfunction!(load_lines, m)?)?;
    m.add_function(wrap_pyfunction!(m1, m)?)?;
    Ok(())
}
