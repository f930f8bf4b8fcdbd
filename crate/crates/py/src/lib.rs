//! Python bindings. Structured results (reports, fits, reassembly events)
//! come back as plain dicts; the small value types are classes.

use std::path::PathBuf;
use std::sync::Arc;

use burstlab::fit::{self, EmConfig, FitOptions, GroupWeighting, TraceGroup};
use burstlab::generator::{self, TraceFile};
use burstlab::model::{self, VrStreamParams};
use burstlab::rv::{self, RngStream, Variate};
use burstlab::sim::{self, ScenarioConfig, SourceSpec, StationConfig};
use burstlab::wire::{self, ReassemblyEvent, DEFAULT_FRAGMENT_SIZE};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};
use serde::Serialize;

fn py_err(e: burstlab::Error) -> PyErr {
    if e.is_io() {
        PyOSError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

/// Round-trips through JSON so nested reports keep their field names.
fn to_py<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "Rng", module = "burstlab")]
struct PyRng(RngStream);

#[pymethods]
impl PyRng {
    #[new]
    #[pyo3(signature = (seed, stream_id = 0))]
    fn new(seed: u64, stream_id: u64) -> Self {
        Self(RngStream::new(seed, stream_id))
    }

    fn next_u64(&mut self) -> u64 {
        self.0.next_u64()
    }

    fn uniform(&mut self) -> f64 {
        self.0.uniform()
    }

    fn standard_normal(&mut self) -> f64 {
        self.0.standard_normal()
    }
}

#[pyclass(
    name = "VrModelConstants",
    module = "burstlab",
    frozen,
    get_all,
    skip_from_py_object
)]
#[derive(Clone, Copy)]
struct PyConstants {
    c: f64,
    s_i: f64,
    s_p: f64,
    a_i: f64,
    b_i: f64,
    a_p: f64,
    b_p: f64,
}

impl From<model::VrModelConstants> for PyConstants {
    fn from(k: model::VrModelConstants) -> Self {
        Self {
            c: k.c,
            s_i: k.s_i,
            s_p: k.s_p,
            a_i: k.a_i,
            b_i: k.b_i,
            a_p: k.a_p,
            b_p: k.b_p,
        }
    }
}

impl From<PyConstants> for model::VrModelConstants {
    fn from(k: PyConstants) -> Self {
        Self {
            c: k.c,
            s_i: k.s_i,
            s_p: k.s_p,
            a_i: k.a_i,
            b_i: k.b_i,
            a_p: k.a_p,
            b_p: k.b_p,
        }
    }
}

const D: model::VrModelConstants = model::VrModelConstants::FITTED;

#[pymethods]
impl PyConstants {
    #[new]
    #[pyo3(signature = (c = D.c, s_i = D.s_i, s_p = D.s_p, a_i = D.a_i, b_i = D.b_i, a_p = D.a_p, b_p = D.b_p))]
    fn new(c: f64, s_i: f64, s_p: f64, a_i: f64, b_i: f64, a_p: f64, b_p: f64) -> PyResult<Self> {
        let k = Self {
            c,
            s_i,
            s_p,
            a_i,
            b_i,
            a_p,
            b_p,
        };
        model::VrModelConstants::from(k)
            .validate()
            .map_err(py_err)?;
        Ok(k)
    }

    /// Accepts a bare constants object or a fit report.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        model::VrModelConstants::from_json(text)
            .map(Self::from)
            .map_err(py_err)
    }

    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&model::VrModelConstants::from(*self))
            .map_err(|e| PyValueError::new_err(e.to_string()))
    }

    /// `(w_I, w_P)`.
    fn mixture_weights(&self) -> PyResult<(f64, f64)> {
        model::derive_weights(self.s_i, self.s_p).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "VrModelConstants(c={}, s_i={}, s_p={}, a_i={}, b_i={}, a_p={}, b_p={})",
            self.c, self.s_i, self.s_p, self.a_i, self.b_i, self.a_p, self.b_p
        )
    }
}

fn constants_or_default(k: Option<PyRef<'_, PyConstants>>) -> model::VrModelConstants {
    k.map(|k| model::VrModelConstants::from(*k))
        .unwrap_or_default()
}

#[pyclass(name = "VrModel", module = "burstlab", frozen)]
struct PyVrModel(model::VrModel);

#[pymethods]
impl PyVrModel {
    #[new]
    #[pyo3(signature = (rate_mbps, fps, constants = None))]
    fn new(rate_mbps: f64, fps: f64, constants: Option<PyRef<'_, PyConstants>>) -> PyResult<Self> {
        let params = VrStreamParams::from_mbps(rate_mbps, fps).map_err(py_err)?;
        model::VrModel::new(params, constants_or_default(constants))
            .map(Self)
            .map_err(py_err)
    }

    /// Mean frame size, bytes.
    #[getter]
    fn mean_frame_size(&self) -> f64 {
        self.0.params.mean_frame_size()
    }

    #[getter]
    fn constants(&self) -> PyConstants {
        self.0.constants.into()
    }

    /// Mixture parameters in bytes: `(w_I, mu_I, sigma_I, mu_P, sigma_P)`.
    #[getter]
    fn frame_size_params(&self) -> (f64, f64, f64, f64, f64) {
        let g = &self.0.frame_size;
        (g.w_hi, g.mu_hi, g.sigma_hi, g.mu_lo, g.sigma_lo)
    }

    /// Logistic IFI location and scale, seconds.
    #[getter]
    fn ifi_params(&self) -> (f64, f64) {
        (self.0.ifi.mu, self.0.ifi.s)
    }

    fn sample_frame(&self, mut rng: PyRefMut<'_, PyRng>) -> PyResult<u64> {
        self.0.sample_frame(&mut rng.0).map_err(py_err)
    }

    fn sample_ifi(&self, mut rng: PyRefMut<'_, PyRng>) -> f64 {
        self.0.sample_ifi(&mut rng.0)
    }

    fn sample_frames(&self, n: usize, mut rng: PyRefMut<'_, PyRng>) -> PyResult<Vec<u64>> {
        (0..n)
            .map(|_| self.0.sample_frame(&mut rng.0).map_err(py_err))
            .collect()
    }

    fn sample_ifis(&self, n: usize, mut rng: PyRefMut<'_, PyRng>) -> Vec<f64> {
        (0..n).map(|_| self.0.sample_ifi(&mut rng.0)).collect()
    }
}

#[pyclass(
    name = "FragmentHeader",
    module = "burstlab",
    frozen,
    get_all,
    eq,
    skip_from_py_object
)]
#[derive(Clone, Copy, PartialEq)]
struct PyHeader {
    burst_seq: u32,
    frag_index: u16,
    frag_count: u16,
    burst_size: u64,
    timestamp_ns: u64,
}

impl From<wire::FragmentHeader> for PyHeader {
    fn from(h: wire::FragmentHeader) -> Self {
        Self {
            burst_seq: h.burst_seq,
            frag_index: h.frag_index,
            frag_count: h.frag_count,
            burst_size: h.burst_size,
            timestamp_ns: h.timestamp_ns,
        }
    }
}

impl PyHeader {
    fn core(&self) -> wire::FragmentHeader {
        wire::FragmentHeader {
            burst_seq: self.burst_seq,
            frag_index: self.frag_index,
            frag_count: self.frag_count,
            burst_size: self.burst_size,
            timestamp_ns: self.timestamp_ns,
        }
    }
}

#[pymethods]
impl PyHeader {
    #[new]
    fn new(
        burst_seq: u32,
        frag_index: u16,
        frag_count: u16,
        burst_size: u64,
        timestamp_ns: u64,
    ) -> Self {
        Self {
            burst_seq,
            frag_index,
            frag_count,
            burst_size,
            timestamp_ns,
        }
    }

    fn encode<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.core().encode())
    }

    #[staticmethod]
    fn decode(data: &[u8]) -> PyResult<Self> {
        wire::decode_header(data).map(Self::from).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "FragmentHeader(burst_seq={}, frag_index={}, frag_count={}, burst_size={}, timestamp_ns={})",
            self.burst_seq, self.frag_index, self.frag_count, self.burst_size, self.timestamp_ns
        )
    }
}

/// Fragments of one burst as `(header, payload_len)` pairs.
#[pyfunction]
#[pyo3(signature = (burst_seq, burst_size, timestamp_ns, fragment_size = DEFAULT_FRAGMENT_SIZE))]
fn fragment_burst(
    burst_seq: u32,
    burst_size: u64,
    timestamp_ns: u64,
    fragment_size: usize,
) -> PyResult<Vec<(PyHeader, usize)>> {
    let frags =
        wire::fragment_burst(burst_seq, burst_size, timestamp_ns, fragment_size).map_err(py_err)?;
    Ok(frags
        .into_iter()
        .map(|f| (f.header.into(), f.payload_len))
        .collect())
}

/// Wire datagrams (header plus zero payload) for one burst.
#[pyfunction]
#[pyo3(signature = (burst_seq, burst_size, timestamp_ns, fragment_size = DEFAULT_FRAGMENT_SIZE))]
fn burst_datagrams<'py>(
    py: Python<'py>,
    burst_seq: u32,
    burst_size: u64,
    timestamp_ns: u64,
    fragment_size: usize,
) -> PyResult<Vec<Bound<'py, PyBytes>>> {
    let frags =
        wire::fragment_burst(burst_seq, burst_size, timestamp_ns, fragment_size).map_err(py_err)?;
    Ok(frags
        .iter()
        .map(|f| PyBytes::new(py, &f.to_datagram()))
        .collect())
}

#[pyclass(name = "BurstReassembler", module = "burstlab")]
#[derive(Default)]
struct PyReassembler(wire::BurstReassembler);

fn event_dict<'py>(py: Python<'py>, ev: &ReassemblyEvent) -> PyResult<Bound<'py, PyAny>> {
    let (kind, body) = match ev {
        ReassemblyEvent::FragmentAccepted {
            burst_seq,
            frag_index,
        } => (
            "fragment_accepted",
            serde_json::json!({ "burst_seq": burst_seq, "frag_index": frag_index }),
        ),
        ReassemblyEvent::DuplicateFragment {
            burst_seq,
            frag_index,
        } => (
            "duplicate_fragment",
            serde_json::json!({ "burst_seq": burst_seq, "frag_index": frag_index }),
        ),
        ReassemblyEvent::LateFragmentIgnored { burst_seq } => (
            "late_fragment_ignored",
            serde_json::json!({ "burst_seq": burst_seq }),
        ),
        ReassemblyEvent::BurstReceived(b) => (
            "burst_received",
            serde_json::to_value(b).unwrap_or_default(),
        ),
        ReassemblyEvent::BurstDiscarded(d) => (
            "burst_discarded",
            serde_json::to_value(d).unwrap_or_default(),
        ),
    };
    let d = to_py(py, &body)?;
    d.set_item("event", kind)?;
    Ok(d)
}

#[pymethods]
impl PyReassembler {
    #[new]
    fn new() -> Self {
        Self::default()
    }

    /// Events caused by one fragment, as dicts with an `event` key.
    fn on_fragment<'py>(
        &mut self,
        py: Python<'py>,
        header: PyRef<'_, PyHeader>,
        payload_len: usize,
        arrival_ns: u64,
    ) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let events = self.0.on_fragment(&header.core(), payload_len, arrival_ns);
        events.iter().map(|e| event_dict(py, e)).collect()
    }

    fn on_datagram<'py>(
        &mut self,
        py: Python<'py>,
        data: &[u8],
        arrival_ns: u64,
    ) -> PyResult<Vec<Bound<'py, PyAny>>> {
        let f = wire::Fragment::from_datagram(data).map_err(py_err)?;
        let events = self.0.on_fragment(&f.header, f.payload_len, arrival_ns);
        events.iter().map(|e| event_dict(py, e)).collect()
    }

    /// Discards the in-progress burst, if any, and reports it.
    fn finish<'py>(&mut self, py: Python<'py>) -> PyResult<Option<Bound<'py, PyAny>>> {
        self.0
            .finish()
            .map(|d| event_dict(py, &ReassemblyEvent::BurstDiscarded(d)))
            .transpose()
    }

    #[getter]
    fn counters<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.0.counters())
    }
}

#[pyclass(name = "Source", module = "burstlab", frozen)]
struct PySource(SourceSpec);

#[pymethods]
impl PySource {
    #[staticmethod]
    #[pyo3(signature = (rate_mbps, fps, constants = None))]
    fn vr(rate_mbps: f64, fps: f64, constants: Option<PyRef<'_, PyConstants>>) -> PyResult<Self> {
        let p = VrStreamParams::from_mbps(rate_mbps, fps).map_err(py_err)?;
        Ok(Self(SourceSpec::Vr {
            target_rate_bps: p.target_rate_bps,
            frame_rate: p.frame_rate,
            constants: constants_or_default(constants),
        }))
    }

    /// Sizes in bytes and periods in seconds, written as variate specs such
    /// as `"const:1000"` or `"uniform:0.01:0.02"`.
    #[staticmethod]
    fn simple(size: &str, period: &str) -> PyResult<Self> {
        let parse = |s: &str| s.parse::<Variate>().map_err(py_err);
        Ok(Self(SourceSpec::Simple {
            size: parse(size)?,
            period: parse(period)?,
        }))
    }

    #[staticmethod]
    #[pyo3(signature = (path, start_time_s = 0.0))]
    fn trace(path: PathBuf, start_time_s: f64) -> PyResult<Self> {
        let t = generator::load_trace(&path).map_err(py_err)?;
        Ok(Self(SourceSpec::Trace {
            trace: Arc::new(t),
            start_time_s,
        }))
    }

    /// Burst `(size_bytes, next_period_ns)` pairs drawn from this source.
    #[pyo3(signature = (n, seed, stream_id = 1))]
    fn bursts(&self, n: usize, seed: u64, stream_id: u64) -> PyResult<Vec<(u64, u64)>> {
        let mut g = self
            .0
            .build(RngStream::new(seed, stream_id))
            .map_err(py_err)?;
        let mut out = Vec::with_capacity(n);
        while out.len() < n && g.has_next_burst() {
            let b = g.generate_burst().map_err(py_err)?;
            out.push((b.burst_size, b.next_period_ns));
        }
        Ok(out)
    }
}

/// Runs the bottleneck simulation and returns the metrics report.
#[pyfunction]
#[pyo3(signature = (
    source, n_stations = 1, link_mbps = 866.7, duration_s = 10.0, seed = 1, loss = 0.0,
    queue_limit = 0, prop_delay_us = 0.0, overhead_bytes = 0, fragment_size = DEFAULT_FRAGMENT_SIZE,
    start_offset_us = 0.0,
))]
#[allow(clippy::too_many_arguments)]
fn run_scenario<'py>(
    py: Python<'py>,
    source: PyRef<'_, PySource>,
    n_stations: usize,
    link_mbps: f64,
    duration_s: f64,
    seed: u64,
    loss: f64,
    queue_limit: usize,
    prop_delay_us: f64,
    overhead_bytes: u64,
    fragment_size: usize,
    start_offset_us: f64,
) -> PyResult<Bound<'py, PyAny>> {
    if !(link_mbps > 0.0) || !(prop_delay_us >= 0.0) || !(start_offset_us >= 0.0) {
        return Err(PyValueError::new_err(
            "link rate must be positive and delays non-negative",
        ));
    }
    let cfg = ScenarioConfig {
        stations: (0..n_stations)
            .map(|i| StationConfig {
                source: source.0.clone(),
                start_offset_ns: (i as f64 * start_offset_us * 1e3).round() as u64,
            })
            .collect(),
        link_rate_bps: (link_mbps * 1e6).round() as u64,
        propagation_delay_ns: (prop_delay_us * 1e3).round() as u64,
        overhead_bytes,
        loss_prob: loss,
        queue_limit,
        duration_s,
        seed,
        fragment_size,
    };
    let report = sim::run_scenario(&cfg).map_err(py_err)?;
    to_py(py, &report)
}

/// Nearest-rank percentile.
#[pyfunction]
fn percentile(samples: Vec<u64>, p: f64) -> PyResult<u64> {
    sim::percentile(&samples, p).map_err(py_err)
}

#[pyfunction]
fn logistic_pdf(x: f64, mu: f64, s: f64) -> PyResult<f64> {
    let p = rv::LogisticParams::new(mu, s).map_err(py_err)?;
    rv::logistic_pdf(x, &p).map_err(py_err)
}

#[pyfunction]
fn logistic_cdf(x: f64, mu: f64, s: f64) -> PyResult<f64> {
    let p = rv::LogisticParams::new(mu, s).map_err(py_err)?;
    rv::logistic_cdf(x, &p).map_err(py_err)
}

#[pyfunction]
fn logistic_quantile(u: f64, mu: f64, s: f64) -> PyResult<f64> {
    let p = rv::LogisticParams::new(mu, s).map_err(py_err)?;
    rv::logistic_quantile(u, &p).map_err(py_err)
}

/// `{"metadata": {...}, "sizes": [...], "periods_ns": [...]}`.
#[pyfunction]
fn load_trace<'py>(py: Python<'py>, path: PathBuf) -> PyResult<Bound<'py, PyDict>> {
    let t = generator::load_trace(&path).map_err(py_err)?;
    trace_dict(py, &t)
}

fn trace_dict<'py>(py: Python<'py>, t: &TraceFile) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("metadata", t.metadata.clone())?;
    d.set_item(
        "sizes",
        t.records.iter().map(|r| r.burst_size).collect::<Vec<_>>(),
    )?;
    d.set_item(
        "periods_ns",
        t.records
            .iter()
            .map(|r| r.next_period_ns)
            .collect::<Vec<_>>(),
    )?;
    Ok(d)
}

/// Logistic `(mu, s)` by moments.
#[pyfunction]
fn fit_logistic(samples: Vec<f64>) -> PyResult<(f64, f64)> {
    let p = fit::fit_logistic(&samples).map_err(py_err)?;
    Ok((p.mu, p.s))
}

#[pyfunction]
#[pyo3(signature = (samples, restarts = 50, max_iter = 500, tol = 1e-8, seed = 0))]
fn fit_gmm2<'py>(
    py: Python<'py>,
    samples: Vec<f64>,
    restarts: usize,
    max_iter: usize,
    tol: f64,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let cfg = EmConfig {
        restarts,
        max_iter,
        tol,
    };
    let f = fit::fit_gmm2_em(&samples, &cfg, &mut RngStream::new(seed, 0)).map_err(py_err)?;
    to_py(py, &f)
}

#[pyfunction]
#[pyo3(signature = (points, weights = None))]
fn fit_linear_through_origin(points: Vec<(f64, f64)>, weights: Option<Vec<f64>>) -> PyResult<f64> {
    fit::fit_linear_through_origin(&points, weights.as_deref()).map_err(py_err)
}

/// `(a, b)` of `y = a * x**b`.
#[pyfunction]
#[pyo3(signature = (points, weights = None))]
fn fit_power_law(points: Vec<(f64, f64)>, weights: Option<Vec<f64>>) -> PyResult<(f64, f64)> {
    fit::fit_power_law_weighted(&points, weights.as_deref()).map_err(py_err)
}

/// Fits model constants to trace files, one group per file.
#[pyfunction]
#[pyo3(signature = (paths, restarts = 50, max_iter = 500, tol = 1e-8, uniform_weights = false, seed = 0))]
fn fit_vr_model<'py>(
    py: Python<'py>,
    paths: Vec<PathBuf>,
    restarts: usize,
    max_iter: usize,
    tol: f64,
    uniform_weights: bool,
    seed: u64,
) -> PyResult<Bound<'py, PyAny>> {
    let groups = paths
        .iter()
        .map(|p| generator::load_trace(p).map(|t| TraceGroup::from_trace(&t)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(py_err)?;
    let opts = FitOptions {
        em: EmConfig {
            restarts,
            max_iter,
            tol,
        },
        weighting: if uniform_weights {
            GroupWeighting::Uniform
        } else {
            GroupWeighting::Goodness
        },
        seed,
    };
    let report = fit::fit_vr_model(&groups, &opts).map_err(py_err)?;
    to_py(py, &report)
}

#[pymodule(name = "burstlab")]
fn burstlab_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("HEADER_LEN", wire::HEADER_LEN)?;
    m.add("DEFAULT_FRAGMENT_SIZE", DEFAULT_FRAGMENT_SIZE)?;
    m.add("RNG_ALGORITHM", rv::RNG_ALGORITHM)?;
    m.add_class::<PyRng>()?;
    m.add_class::<PyConstants>()?;
    m.add_class::<PyVrModel>()?;
    m.add_class::<PyHeader>()?;
    m.add_class::<PyReassembler>()?;
    m.add_class::<PySource>()?;
    m.add_function(wrap_pyfunction!(fragment_burst, m)?)?;
    m.add_function(wrap_pyfunction!(burst_datagrams, m)?)?;
    m.add_function(wrap_pyfunction!(run_scenario, m)?)?;
    m.add_function(wrap_pyfunction!(percentile, m)?)?;
    m.add_function(wrap_pyfunction!(logistic_pdf, m)?)?;
    m.add_function(wrap_pyfunction!(logistic_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(logistic_quantile, m)?)?;
    m.add_function(wrap_pyfunction!(load_trace, m)?)?;
    m.add_function(wrap_pyfunction!(fit_logistic, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gmm2, m)?)?;
    m.add_function(wrap_pyfunction!(fit_linear_through_origin, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power_law, m)?)?;
    m.add_function(wrap_pyfunction!(fit_vr_model, m)?)?;
    Ok(())
}
