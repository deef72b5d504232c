//! Python bindings. Structured results cross the boundary as plain
//! dicts/lists (through JSON), so they match the CLI artifacts field for field.

use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use groupdp::bellman::{StructuralParams, VfiOptions};
use groupdp::counterfactual::{channel_decomposition, nodes_from_panel, run_scenarios, Scenario, SimulationConfig};
use groupdp::estimate::inference::{asymptotic_se, refit_config};
use groupdp::estimate::{
    block_bootstrap, fit_mle, information_criteria as ic, likelihood_surface, lr_test as lr, negative_log_likelihood,
    BootstrapConfig, EstimationResult, GridAxis, LikelihoodContext, ModelKind, OptimizerConfig, Restriction,
};
use groupdp::oracle::{self, OracleOptions};
use groupdp::panel::{derive_neighbor_vars, load_panel, validate_panel, Panel, PanelSchema};
use groupdp::statespace::{Binning, StateSpace, StateSpec};
use groupdp::synth::{generate_synthetic, SyntheticConfig};
use groupdp::transitions::Transitions;

create_exception!(pygroupdp, GroupdpError, PyException, "Raised for every library error; the message starts with the error kind.");

fn err(e: groupdp::Error) -> PyErr {
    GroupdpError::new_err(format!("[{}] {e}", e.kind()))
}

fn config_err(msg: impl Into<String>) -> PyErr {
    err(groupdp::Error::Config(msg.into()))
}

fn to_py<T: Serialize>(py: Python<'_>, value: &T) -> PyResult<Py<PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| err(e.into()))?;
    Ok(py.import("json")?.call_method1("loads", (text,))?.unbind())
}

fn from_py<T: DeserializeOwned>(py: Python<'_>, obj: &Bound<'_, PyAny>) -> PyResult<T> {
    let text: String = py.import("json")?.call_method1("dumps", (obj,))?.extract()?;
    serde_json::from_str(&text).map_err(|e| config_err(e.to_string()))
}

fn parse_str<T: DeserializeOwned>(s: &str, what: &str) -> PyResult<T> {
    serde_json::from_value(Value::String(s.into())).map_err(|_| config_err(format!("unknown {what} `{s}`")))
}

#[pyclass(name = "StateSpec", module = "pygroupdp", from_py_object)]
#[derive(Clone)]
struct PyStateSpec {
    inner: StateSpec,
}

#[pymethods]
impl PyStateSpec {
    /// `binning` is one of none, binary, bins_0_1_2plus, bins_0_1_2_3plus.
    #[new]
    #[pyo3(signature = (age_max = 58, n_cages = 3, binning = "binary"))]
    fn new(age_max: u32, n_cages: u32, binning: &str) -> PyResult<Self> {
        let inner = StateSpec {
            age_max,
            n_cages,
            binning: parse_str::<Binning>(binning, "binning")?,
        };
        inner.validate().map_err(err)?;
        Ok(Self { inner })
    }

    #[getter]
    fn age_max(&self) -> u32 {
        self.inner.age_max
    }

    #[getter]
    fn n_cages(&self) -> u32 {
        self.inner.n_cages
    }

    #[getter]
    fn binning(&self) -> &'static str {
        self.inner.binning.name()
    }

    /// Number of states.
    fn size(&self) -> PyResult<usize> {
        Ok(StateSpace::new(self.inner).map_err(err)?.size())
    }

    fn __repr__(&self) -> String {
        format!(
            "StateSpec(age_max={}, n_cages={}, binning='{}')",
            self.inner.age_max,
            self.inner.n_cages,
            self.inner.binning.name()
        )
    }
}

#[pyclass(name = "Params", module = "pygroupdp", from_py_object)]
#[derive(Clone)]
struct PyParams {
    inner: StructuralParams,
}

#[pymethods]
impl PyParams {
    #[new]
    #[pyo3(signature = (theta_age, theta_fail, theta_rc, gamma_lag = vec![], gamma_fail = vec![], beta = 0.9))]
    fn new(theta_age: Vec<f64>, theta_fail: f64, theta_rc: f64, gamma_lag: Vec<f64>, gamma_fail: Vec<f64>, beta: f64) -> Self {
        Self {
            inner: StructuralParams {
                theta_age,
                theta_fail,
                theta_rc,
                gamma_lag,
                gamma_fail,
                beta,
            },
        }
    }

    /// Reference values of the spatial (binary) specification.
    #[staticmethod]
    fn reference_spatial() -> Self {
        Self {
            inner: StructuralParams::reference_spatial(),
        }
    }

    #[staticmethod]
    fn reference_baseline() -> Self {
        Self {
            inner: StructuralParams::reference_baseline(),
        }
    }

    #[staticmethod]
    fn reference_intensity() -> Self {
        Self {
            inner: StructuralParams::reference_intensity(),
        }
    }

    /// Standard optimizer start.
    #[staticmethod]
    #[pyo3(signature = (n_cages = 3, gamma_arity = 1, beta = 0.9))]
    fn default_start(n_cages: usize, gamma_arity: usize, beta: f64) -> Self {
        Self {
            inner: StructuralParams::default_start(n_cages, gamma_arity, beta),
        }
    }

    /// Build from a dict with the `to_dict` layout.
    #[staticmethod]
    fn from_dict(py: Python<'_>, d: &Bound<'_, PyAny>) -> PyResult<Self> {
        Ok(Self { inner: from_py(py, d)? })
    }

    fn to_dict(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner)
    }

    /// Coefficient names in `values()` order.
    fn names(&self) -> Vec<String> {
        self.inner.names()
    }

    fn values(&self) -> Vec<f64> {
        self.inner.to_vec()
    }

    #[getter]
    fn beta(&self) -> f64 {
        self.inner.beta
    }

    #[getter]
    fn gamma_lag(&self) -> Vec<f64> {
        self.inner.gamma_lag.clone()
    }

    #[getter]
    fn gamma_fail(&self) -> Vec<f64> {
        self.inner.gamma_fail.clone()
    }

    fn __repr__(&self) -> String {
        let body: Vec<String> = self
            .inner
            .names()
            .iter()
            .zip(self.inner.to_vec())
            .map(|(n, v)| format!("{n}={v}"))
            .collect();
        format!("Params({}, beta={})", body.join(", "), self.inner.beta)
    }
}

#[pyclass(name = "Panel", module = "pygroupdp")]
struct PyPanel {
    inner: Panel,
}

fn with_neighbors(panel: Panel) -> PyResult<Panel> {
    if panel.neighbors_derived() {
        Ok(panel)
    } else {
        derive_neighbor_vars(&panel, &panel.topology()).map_err(err)
    }
}

#[pymethods]
impl PyPanel {
    /// Load a panel CSV; neighbor columns are derived when absent.
    #[staticmethod]
    fn read_csv(path: &str) -> PyResult<Self> {
        let panel = load_panel(path, PanelSchema::default()).map_err(err)?;
        Ok(Self {
            inner: with_neighbors(panel)?,
        })
    }

    /// Simulate a synthetic panel at `truth`.
    #[staticmethod]
    #[pyo3(signature = (truth, spec, seed = 1, n_groups = 100, group_size = 30, periods = 80))]
    fn synthetic(py: Python<'_>, truth: PyParams, spec: PyStateSpec, seed: u64, n_groups: u32, group_size: u32, periods: u32) -> PyResult<Self> {
        let cfg = SyntheticConfig {
            seed,
            n_groups,
            group_size,
            periods,
            ..Default::default()
        };
        let data = py
            .detach(|| generate_synthetic(&truth.inner, &spec.inner, &cfg))
            .map_err(err)?;
        Ok(Self { inner: data.panel })
    }

    fn write_csv(&self, path: &str) -> PyResult<()> {
        let file = std::fs::File::create(path).map_err(|e| err(e.into()))?;
        self.inner.write_csv(std::io::BufWriter::new(file)).map_err(err)
    }

    fn to_csv(&self) -> PyResult<String> {
        self.inner.to_csv_string().map_err(err)
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// `(continue, replace)` counts.
    fn choice_counts(&self) -> (u64, u64) {
        self.inner.choice_counts()
    }

    fn n_groups(&self) -> usize {
        self.inner.topology().n_groups()
    }

    /// Gap, age-law and range report; pass a spec to check against its cap.
    #[pyo3(signature = (spec = None))]
    fn validate(&self, py: Python<'_>, spec: Option<PyStateSpec>) -> PyResult<Py<PyAny>> {
        to_py(py, &validate_panel(&self.inner, spec.as_ref().map(|s| &s.inner)))
    }
}

/// A panel tied to a state space: estimated transitions and observation
/// counts, ready for likelihood evaluation.
#[pyclass(name = "Model", module = "pygroupdp")]
struct PyModel {
    ctx: LikelihoodContext,
    panel: Panel,
    transitions: Transitions,
    smoothing: f64,
}

fn model_kind(space: &StateSpace) -> ModelKind {
    match space.binning() {
        Binning::None => ModelKind::Baseline,
        Binning::Binary => ModelKind::Spatial,
        _ => ModelKind::Intensity,
    }
}

fn axis(t: (f64, f64, usize)) -> GridAxis {
    GridAxis { lo: t.0, hi: t.1, n: t.2 }
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (panel, spec, smoothing = 0.5, vfi_tol = 1e-10))]
    fn new(py: Python<'_>, panel: &PyPanel, spec: PyStateSpec, smoothing: f64, vfi_tol: f64) -> PyResult<Self> {
        let space = StateSpace::new(spec.inner).map_err(err)?;
        let vfi = VfiOptions {
            tol: vfi_tol,
            ..Default::default()
        };
        let panel = panel.inner.clone();
        py.detach(|| {
            let transitions = Transitions::estimate(&panel, &space, smoothing)?;
            let ctx = LikelihoodContext::new(&panel, &space, transitions.kernels(&space)?, vfi)?;
            Ok(Self {
                ctx,
                panel,
                transitions,
                smoothing,
            })
        })
        .map_err(err)
    }

    #[getter]
    fn n_states(&self) -> usize {
        self.ctx.space.size()
    }

    #[getter]
    fn n_obs(&self) -> usize {
        self.ctx.n_obs
    }

    /// Estimated failure hazard and neighbor process.
    fn transitions(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.transitions)
    }

    fn nll(&self, params: &PyParams) -> PyResult<f64> {
        negative_log_likelihood(&self.ctx, &params.inner).map_err(err)
    }

    /// Intercept-only logit NLL.
    fn null_nll(&self) -> f64 {
        self.ctx.null_nll()
    }

    /// Solve the dynamic program; returns ev, p_replace, iterations and
    /// the final sup-norm gap.
    fn solve(&self, py: Python<'_>, params: &PyParams) -> PyResult<Py<PyAny>> {
        let sol = self.ctx.solve(&params.inner).map_err(err)?;
        let p: Vec<f64> = (0..sol.ev.len()).map(|s| sol.p_replace(s)).collect();
        let out = serde_json::json!({
            "ev": sol.ev,
            "p_replace": p,
            "iterations": sol.iterations,
            "final_sup_norm": sol.final_sup_norm,
        });
        to_py(py, &out)
    }

    /// Maximum likelihood fit; returns the estimation result as a dict.
    /// `restriction` is full, lag_only, fail_only or no_gamma.
    #[pyo3(signature = (restriction = "full", init = None, se = true, max_evals = 20000))]
    fn fit(&self, py: Python<'_>, restriction: &str, init: Option<PyParams>, se: bool, max_evals: usize) -> PyResult<Py<PyAny>> {
        let restriction: Restriction = parse_str(restriction, "restriction")?;
        let space = &self.ctx.space;
        let init = match init {
            Some(p) => p.inner,
            None => StructuralParams::default_start(space.spec().n_cages as usize, space.levels() - 1, 0.9),
        };
        let cfg = OptimizerConfig {
            max_evals,
            ..Default::default()
        };
        let kind = model_kind(space);
        let fit = py
            .detach(|| {
                let mut fit = fit_mle(&self.ctx, kind, restriction, &init, &cfg)?;
                if se {
                    match asymptotic_se(&self.ctx, &fit.params_hat, &fit.free) {
                        Ok(a) => fit.se_asymptotic = Some(a.se),
                        Err(e) => fit.se_asymptotic_error = Some(e.to_string()),
                    }
                }
                Ok(fit)
            })
            .map_err(err)?;
        to_py(py, &fit)
    }

    /// Cage-block bootstrap around a fit dict; returns the bootstrap block.
    #[pyo3(signature = (fit, replicates = 100, seed = 7))]
    fn bootstrap(&self, py: Python<'_>, fit: &Bound<'_, PyAny>, replicates: usize, seed: u64) -> PyResult<Py<PyAny>> {
        let fit: EstimationResult = from_py(py, fit)?;
        let cfg = BootstrapConfig {
            replicates,
            seed,
            ..Default::default()
        };
        let boot = py
            .detach(|| {
                block_bootstrap(&self.panel, &self.ctx.space, self.smoothing, self.ctx.vfi, &fit, &refit_config(&fit), &cfg)
            })
            .map_err(err)?;
        to_py(py, &boot)
    }

    /// NLL grid over `(gamma_lag, gamma_fail)` with the rest at `params`;
    /// axes are `(lo, hi, n)`.
    fn surface(&self, py: Python<'_>, params: &PyParams, lag: (f64, f64, usize), fail: (f64, f64, usize)) -> PyResult<Py<PyAny>> {
        let grid = py
            .detach(|| likelihood_surface(&self.ctx, &params.inner, &axis(lag), &axis(fail)))
            .map_err(err)?;
        to_py(py, &grid)
    }

    /// Forward-simulate scenarios from the panel's last period. `scenarios`
    /// is a list of dicts like `{"label": "x", "kind": "lag_only"}`; the
    /// standard four when omitted.
    #[pyo3(signature = (params, scenarios = None, periods = 36, seed = 11, replications = 10))]
    fn simulate(
        &self,
        py: Python<'_>,
        params: &PyParams,
        scenarios: Option<&Bound<'_, PyAny>>,
        periods: u32,
        seed: u64,
        replications: usize,
    ) -> PyResult<Py<PyAny>> {
        let scenarios: Vec<Scenario> = match scenarios {
            Some(s) => from_py(py, s)?,
            None => Scenario::standard(),
        };
        let cfg = SimulationConfig {
            periods,
            seed,
            replications,
            ..Default::default()
        };
        let space = &self.ctx.space;
        let out = py
            .detach(|| {
                let (nodes, start) = nodes_from_panel(&self.panel, space.spec().age_max)?;
                let cmp = run_scenarios(
                    &params.inner,
                    space,
                    &self.ctx.kernels,
                    &self.transitions.hazard,
                    &nodes,
                    start,
                    &scenarios,
                    &cfg,
                )?;
                let channels = channel_decomposition(&cmp).ok();
                Ok(serde_json::json!({ "comparison": cmp, "channel_effects": channels }))
            })
            .map_err(err)?;
        to_py(py, &out)
    }
}

/// Likelihood ratio test; returns statistic, df and p_value.
#[pyfunction]
fn lr_test(py: Python<'_>, nll_restricted: f64, nll_full: f64, df: usize) -> PyResult<Py<PyAny>> {
    to_py(py, &lr(nll_restricted, nll_full, df).map_err(err)?)
}

/// `(aic, bic)`.
#[pyfunction]
fn information_criteria(nll: f64, k: usize, n_obs: usize) -> (f64, f64) {
    ic(nll, k, n_obs)
}

/// Brute-force check of the decomposition on random instances.
#[pyfunction]
#[pyo3(signature = (instances = 50, seed = 1, tol = 1e-9, max_joint = oracle::DEFAULT_MAX_JOINT))]
fn verify_decomposition(py: Python<'_>, instances: usize, seed: u64, tol: f64, max_joint: usize) -> PyResult<Py<PyAny>> {
    let opts = OracleOptions {
        max_joint,
        ..Default::default()
    };
    let batch = py.detach(|| oracle::verify_batch(instances, seed, tol, &opts)).map_err(err)?;
    to_py(py, &batch)
}

/// Joint versus decomposed per-iteration timing.
#[pyfunction(name = "bench")]
#[pyo3(signature = (groups = 3, group_size = 8, beta = 0.9, seed = 1, min_seconds = 0.2))]
fn bench_timings(py: Python<'_>, groups: usize, group_size: usize, beta: f64, seed: u64, min_seconds: f64) -> PyResult<Py<PyAny>> {
    let rows = py
        .detach(|| oracle::bench(groups, group_size, beta, seed, oracle::DEFAULT_MAX_JOINT, min_seconds))
        .map_err(err)?;
    to_py(py, &rows)
}

#[pymodule]
fn pygroupdp(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("GroupdpError", m.py().get_type::<GroupdpError>())?;
    m.add_class::<PyStateSpec>()?;
    m.add_class::<PyParams>()?;
    m.add_class::<PyPanel>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(lr_test, m)?)?;
    m.add_function(wrap_pyfunction!(information_criteria, m)?)?;
    m.add_function(wrap_pyfunction!(verify_decomposition, m)?)?;
    m.add_function(wrap_pyfunction!(bench_timings, m)?)?;
    Ok(())
}
