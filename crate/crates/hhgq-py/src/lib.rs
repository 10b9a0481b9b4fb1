use hhgq::field::{self, FieldParams};
use hhgq::fock::{self, StateKind};
use hhgq::hhgstate::{self, ModeLayout};
use hhgq::measures::{self, WignerSpec};
use hhgq::orbits::{self, OrbitSolution, Window};
use hhgq::pipeline::{self, Truncation};
use hhgq::scan::{self, RunConfig};
use num_complex::Complex64 as C64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;
use std::collections::BTreeMap;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

/// Monochromatic driving field and coupling, atomic units.
#[pyclass(name = "FieldParams", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyFieldParams(FieldParams);

#[pymethods]
impl PyFieldParams {
    #[new]
    #[pyo3(signature = (E0, omegaL=0.057, Ip=0.5, g1=5e-3, Nat=100_000))]
    #[allow(non_snake_case)]
    fn new(E0: f64, omegaL: f64, Ip: f64, g1: f64, Nat: u64) -> PyResult<Self> {
        FieldParams::new(E0, omegaL, Ip, g1, Nat).map(Self).map_err(value_err)
    }

    #[getter(E0)]
    fn e0(&self) -> f64 {
        self.0.E0
    }

    #[getter(omegaL)]
    fn omega(&self) -> f64 {
        self.0.omegaL
    }

    #[getter(Ip)]
    fn ip(&self) -> f64 {
        self.0.Ip
    }

    #[getter]
    fn g1(&self) -> f64 {
        self.0.g1
    }

    #[getter(Nat)]
    fn nat(&self) -> u64 {
        self.0.Nat
    }

    fn up(&self) -> f64 {
        self.0.up()
    }

    fn period(&self) -> f64 {
        self.0.period()
    }

    fn cutoff_harmonic(&self) -> i64 {
        field::cutoff_harmonic(&self.0)
    }

    fn electric_field(&self, t: C64) -> C64 {
        field::electric_field(t, &self.0)
    }

    fn vector_potential(&self, t: C64) -> C64 {
        field::vector_potential(t, &self.0)
    }

    fn __repr__(&self) -> String {
        let f = &self.0;
        format!("FieldParams(E0={}, omegaL={}, Ip={}, g1={}, Nat={})", f.E0, f.omegaL, f.Ip, f.g1, f.Nat)
    }
}

/// One saddle-point solution (quantum orbit).
#[pyclass(name = "Orbit", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyOrbit(OrbitSolution);

#[pymethods]
impl PyOrbit {
    #[getter]
    fn q(&self) -> i64 {
        self.0.q
    }

    #[getter]
    fn branch(&self) -> String {
        self.0.branch.to_string()
    }

    #[getter]
    fn t_ion(&self) -> C64 {
        self.0.t_ion
    }

    #[getter]
    fn t_re(&self) -> C64 {
        self.0.t_re
    }

    #[getter]
    fn p(&self) -> C64 {
        self.0.p_s
    }

    #[getter]
    fn residual_norm(&self) -> f64 {
        self.0.residual_norm
    }

    #[getter]
    fn action(&self) -> C64 {
        self.0.action
    }

    fn displacement_spectrum(&self, fp: &PyFieldParams, q1_max: i64) -> PyResult<BTreeMap<i64, C64>> {
        hhgq::backaction::displacement_spectrum(&self.0, &fp.0, q1_max).map_err(runtime_err)
    }

    /// (emission amplitude, fundamental displacement).
    fn amplitude(&self, fp: &PyFieldParams) -> PyResult<(C64, C64)> {
        let a = hhgq::backaction::orbit_amplitude(&self.0, &fp.0).map_err(runtime_err)?;
        Ok((a.amplitude, a.delta1))
    }

    fn __repr__(&self) -> String {
        format!("Orbit(q={}, branch={}, t_re={})", self.0.q, self.0.branch, self.0.t_re)
    }
}

/// Dense state vector or density matrix over truncated Fock modes.
#[pyclass(name = "QState", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyQState(fock::QState);

#[pymethods]
impl PyQState {
    #[staticmethod]
    fn vector(dims: Vec<usize>, data: Vec<C64>) -> PyResult<Self> {
        fock::QState::vector(dims, data).map(Self).map_err(value_err)
    }

    /// Row-major density matrix.
    #[staticmethod]
    fn density(dims: Vec<usize>, data: Vec<C64>) -> PyResult<Self> {
        fock::QState::density(dims, data).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn vacuum(dims: Vec<usize>) -> Self {
        Self(fock::QState::vacuum(&dims))
    }

    #[staticmethod]
    fn coherent(alpha: C64, dim: usize) -> PyResult<Self> {
        fock::coherent_state(alpha, dim).map(|(s, _)| Self(s)).map_err(value_err)
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        fock::QState::from_bytes(data).map(Self).map_err(value_err)
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        fock::QState::from_json(text).map(Self).map_err(value_err)
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.0.dims().to_vec()
    }

    #[getter]
    fn is_density(&self) -> bool {
        self.0.kind() == StateKind::DensityMatrix
    }

    #[getter]
    fn data(&self) -> Vec<C64> {
        self.0.data().to_vec()
    }

    fn weight(&self) -> f64 {
        self.0.weight()
    }

    fn normalized(&self) -> Self {
        Self(self.0.normalized())
    }

    fn to_density(&self) -> Self {
        Self(self.0.to_density())
    }

    fn purity(&self) -> f64 {
        self.0.purity()
    }

    fn partial_trace(&self, keep: Vec<usize>) -> PyResult<Self> {
        fock::partial_trace(&self.0, &keep).map(Self).map_err(value_err)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.0.to_bytes())
    }

    fn to_json(&self) -> String {
        self.0.to_json()
    }

    fn __repr__(&self) -> String {
        let kind = if self.is_density() { "density" } else { "vector" };
        format!("QState({kind}, dims={:?})", self.0.dims())
    }
}

#[pyfunction]
#[pyo3(signature = (fp, q, seeds=1000))]
fn solve_orbits(fp: &PyFieldParams, q: i64, seeds: usize) -> PyResult<Vec<PyOrbit>> {
    let o = orbits::solve_orbits(q, &fp.0, Window::one_cycle(&fp.0), seeds).map_err(runtime_err)?;
    Ok(o.into_iter().map(PyOrbit).collect())
}

#[pyfunction]
fn mean_photon(state: &PyQState, mode: usize) -> f64 {
    measures::mean_photon(&state.0, mode)
}

#[pyfunction]
fn linear_entropy(state: &PyQState, traced: Vec<usize>) -> PyResult<f64> {
    measures::linear_entropy_of(&state.0, &traced).map_err(value_err)
}

#[pyfunction]
#[pyo3(signature = (state, which=0))]
fn log_negativity(state: &PyQState, which: usize) -> PyResult<f64> {
    measures::log_negativity(&state.0, which).map_err(value_err)
}

/// Rows over Im β, columns over Re β.
#[pyfunction]
fn wigner(state: &PyQState, re_range: (f64, f64), im_range: (f64, f64), resolution: (usize, usize)) -> PyResult<Vec<Vec<f64>>> {
    let g = measures::wigner(&state.0, &WignerSpec { re_range, im_range, resolution }).map_err(value_err)?;
    Ok(g.values.chunks(resolution.0).map(|r| r.to_vec()).collect())
}

/// Non-vacuum herald on `mode`: (remaining state, success probability).
#[pyfunction]
fn herald(state: &PyQState, mode: usize) -> PyResult<(PyQState, f64)> {
    let h = hhgstate::herald(&state.0, mode).map_err(value_err)?;
    Ok((PyQState(h.state), h.success_probability))
}

/// Many-atom state of the fundamental and harmonic-q modes (three modes,
/// one per orbit branch, with `three_mode`).
#[pyfunction]
#[pyo3(signature = (fp, q, nat_compute=10_000, fundamental=60, harmonic=6, three_mode=false))]
fn many_atom_state(fp: &PyFieldParams, q: i64, nat_compute: u64, fundamental: usize, harmonic: usize, three_mode: bool) -> PyResult<PyQState> {
    let o = pipeline::point_orbits(&fp.0, q, orbits::DEFAULT_SEEDS).map_err(runtime_err)?;
    let amps = pipeline::amplitudes_for(&o, &fp.0).map_err(runtime_err)?;
    let (amps, nat) = pipeline::equivalent_atoms(&amps, fp.0.Nat, nat_compute);
    let trunc = Truncation { fundamental, harmonic, ..Truncation::desk() };
    let layout = if three_mode { ModeLayout::ThreeMode } else { ModeLayout::TwoMode };
    let (s, _) = pipeline::prepare_state(&amps, layout, &trunc, nat).map_err(runtime_err)?;
    Ok(PyQState(s.state))
}

/// (severity, message) pairs for a JSON run configuration.
#[pyfunction]
fn validate_config(config_json: &str) -> PyResult<Vec<(String, String)>> {
    let c = RunConfig::from_json(config_json).map_err(value_err)?;
    Ok(scan::validate_config(&c).into_iter().map(|d| (format!("{:?}", d.severity).to_lowercase(), d.message)).collect())
}

/// Runs a scan, writing its tables; returns the manifest as JSON.
#[pyfunction]
fn run_scan(config_json: &str) -> PyResult<String> {
    let c = RunConfig::from_json(config_json).map_err(value_err)?;
    let r = scan::run_scan(&c).map_err(runtime_err)?;
    serde_json::to_string(&r.manifest).map_err(runtime_err)
}

#[pymodule]
fn hhgq_py(_py: Python, m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyFieldParams>()?;
    m.add_class::<PyOrbit>()?;
    m.add_class::<PyQState>()?;
    m.add_function(wrap_pyfunction!(solve_orbits, m)?)?;
    m.add_function(wrap_pyfunction!(mean_photon, m)?)?;
    m.add_function(wrap_pyfunction!(linear_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(log_negativity, m)?)?;
    m.add_function(wrap_pyfunction!(wigner, m)?)?;
    m.add_function(wrap_pyfunction!(herald, m)?)?;
    m.add_function(wrap_pyfunction!(many_atom_state, m)?)?;
    m.add_function(wrap_pyfunction!(validate_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_scan, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
