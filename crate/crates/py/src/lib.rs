//! Python bindings: problems, optimizers, the ODE solver, the harness and
//! the property suite.

use flowadam::harness::{self, ExperimentConfig, OptimizerKind};
use flowadam::optim::{self, AdamConfig, InjectionMode};
use flowadam::{
    ode, verify, FlowAdamConfig, Mode, OdeConfig, ParamVector, ProblemConfig, ProblemKind,
};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn to_py(e: flowadam::Error) -> PyErr {
    match e {
        flowadam::Error::InvalidConfig(_)
        | flowadam::Error::InvalidScenario(_)
        | flowadam::Error::Unknown { .. }
        | flowadam::Error::LengthMismatch { .. } => PyValueError::new_err(e.to_string()),
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn parse_mode(mode: &str) -> PyResult<Mode> {
    mode.parse().map_err(to_py)
}

fn json_to_py<'py, T: serde::Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// A seeded benchmark objective.
#[pyclass(module = "flowadam")]
struct Problem {
    inner: Box<dyn flowadam::Problem>,
    config: ProblemConfig,
}

impl Problem {
    fn params(&self, theta: Vec<f64>) -> PyResult<ParamVector> {
        let dim = self.inner.dim();
        if theta.len() != dim {
            return Err(PyValueError::new_err(format!(
                "expected {dim} parameters, got {}",
                theta.len()
            )));
        }
        ParamVector::with_layout(theta, self.inner.layout()).map_err(to_py)
    }
}

#[pymethods]
impl Problem {
    #[new]
    #[pyo3(signature = (kind, scenario=None, seed=1, lam=flowadam::problems::LAMBDA_REG, noise_std=None))]
    fn new(
        kind: &str,
        scenario: Option<&str>,
        seed: u64,
        lam: f64,
        noise_std: Option<f64>,
    ) -> PyResult<Self> {
        let kind = ProblemKind::parse(kind).map_err(to_py)?;
        let mut config = match scenario {
            Some(s) => ProblemConfig::new(kind, s).map_err(to_py)?,
            None => ProblemConfig::default_for(kind),
        };
        if let Some(n) = noise_std {
            config = config.with_noise_std(n);
        }
        let inner = flowadam::build_problem(&config, seed, lam).map_err(to_py)?;
        Ok(Problem { inner, config })
    }

    #[getter]
    fn name(&self) -> String {
        self.config.label()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn metric_name(&self) -> String {
        self.inner.metric_name().to_string()
    }

    /// Initial parameters drawn from the problem's init distribution.
    #[pyo3(signature = (seed=1))]
    fn init(&self, seed: u64) -> Vec<f64> {
        self.inner
            .init(&mut flowadam::Rng::stream(seed, 1))
            .into_vec()
    }

    fn loss(&self, theta: Vec<f64>) -> PyResult<f64> {
        Ok(self.inner.loss(&self.params(theta)?))
    }

    fn loss_grad(&self, theta: Vec<f64>) -> PyResult<(f64, Vec<f64>)> {
        let (l, g) = self.inner.loss_grad(&self.params(theta)?);
        Ok((l, g.into_vec()))
    }

    fn test_metric(&self, theta: Vec<f64>) -> PyResult<Option<f64>> {
        Ok(self.inner.test_metric(&self.params(theta)?))
    }

    fn __repr__(&self) -> String {
        format!("Problem({}, dim={})", self.config.label(), self.inner.dim())
    }
}

/// FlowAdam, Adam, AdamW or SGD with momentum, holding its own state.
#[pyclass(module = "flowadam")]
struct Optimizer {
    inner: Box<dyn flowadam::Optimizer + Sync>,
    kind: String,
}

fn event_dict<'py>(py: Python<'py>, e: &flowadam::StepEvent) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("loss", e.loss)?;
    d.set_item("triggered", e.triggered)?;
    d.set_item("fallback", e.fallback)?;
    d.set_item("nfe", e.nfe)?;
    d.set_item("loss_after_ode", e.loss_after_ode)?;
    Ok(d)
}

#[pymethods]
impl Optimizer {
    /// `kind` is one of flowadam, flowadam_hard, adam, adam_l2, adamw,
    /// sgd_momentum. `gamma`, `alpha_s` and `tau` override the mode preset.
    #[new]
    #[pyo3(signature = (kind, dim, mode="B", lr=None, gamma=None, alpha_s=None, tau=None, weight_decay=0.01, momentum=0.9))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        dim: usize,
        mode: &str,
        lr: Option<f64>,
        gamma: Option<f64>,
        alpha_s: Option<f64>,
        tau: Option<f64>,
        weight_decay: f64,
        momentum: f64,
    ) -> PyResult<Self> {
        let k = OptimizerKind::parse(kind).map_err(to_py)?;
        let mut flow = FlowAdamConfig::preset(parse_mode(mode)?);
        if let Some(lr) = lr {
            flow.adam.lr = lr;
        }
        if let Some(g) = gamma {
            flow.injection_weight = g;
        }
        if let Some(a) = alpha_s {
            flow.switch_sensitivity = a;
        }
        if let Some(t) = tau {
            flow.time_scale = t;
        }
        let inner: Box<dyn flowadam::Optimizer + Sync> = match k {
            OptimizerKind::FlowAdam | OptimizerKind::FlowAdamHard => {
                if k == OptimizerKind::FlowAdamHard {
                    flow.injection = InjectionMode::Hard;
                }
                flow.validate().map_err(to_py)?;
                Box::new(flowadam::FlowAdam::new(flow, dim))
            }
            OptimizerKind::Adam | OptimizerKind::AdamL2 => {
                Box::new(flowadam::Adam::new(flow.adam, dim))
            }
            OptimizerKind::AdamW => {
                let cfg = AdamConfig {
                    weight_decay,
                    ..flow.adam
                };
                cfg.validate().map_err(to_py)?;
                Box::new(flowadam::Adam::new(cfg, dim))
            }
            OptimizerKind::SgdMomentum => Box::new(flowadam::SgdMomentum::new(
                lr.unwrap_or(1e-2),
                momentum,
                dim,
            )),
        };
        Ok(Optimizer {
            inner,
            kind: k.to_string(),
        })
    }

    /// One step; returns the new parameters and a dict describing the step.
    fn step<'py>(
        &mut self,
        py: Python<'py>,
        problem: &Problem,
        theta: Vec<f64>,
    ) -> PyResult<(Vec<f64>, Bound<'py, PyDict>)> {
        let mut p = problem.params(theta)?;
        let event = self
            .inner
            .step(problem.inner.as_ref(), &mut p)
            .map_err(to_py)?;
        Ok((p.into_vec(), event_dict(py, &event)?))
    }

    fn __repr__(&self) -> String {
        format!("Optimizer({})", self.kind)
    }
}

/// Integrates `dy/dt = field(y)` over `[0, t_span]` with dopri5. Returns
/// `(y_end, nfe, status)`.
#[pyfunction]
#[pyo3(signature = (field, y0, t_span, rtol=1e-4, atol=1e-4))]
fn integrate(
    field: Bound<'_, PyAny>,
    y0: Vec<f64>,
    t_span: f64,
    rtol: f64,
    atol: f64,
) -> PyResult<(Vec<f64>, usize, String)> {
    let cfg = OdeConfig {
        rtol,
        atol,
        ..OdeConfig::default()
    };
    let n = y0.len();
    let mut failure: Option<PyErr> = None;
    let f = |y: &ParamVector| -> ParamVector {
        if failure.is_none() {
            match field
                .call1((y.as_slice().to_vec(),))
                .and_then(|r| r.extract::<Vec<f64>>())
            {
                Ok(v) if v.len() == n => return ParamVector::from_vec(v),
                Ok(v) => {
                    failure = Some(PyValueError::new_err(format!(
                        "field returned {} values for a {n}-vector",
                        v.len()
                    )))
                }
                Err(e) => failure = Some(e),
            }
        }
        ParamVector::from_vec(vec![f64::NAN; n])
    };
    let res = ode::integrate(f, &ParamVector::from_vec(y0), t_span, &cfg).map_err(to_py)?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok((res.y_end.into_vec(), res.nfe, format!("{:?}", res.status)))
}

/// Elementwise clamp of a gradient to [-1, 1].
#[pyfunction]
fn clip_grad(g: Vec<f64>) -> Vec<f64> {
    optim::clip_grad(&ParamVector::from_vec(g)).into_vec()
}

/// Convex blend `(1 - gamma) m + gamma v`.
#[pyfunction]
fn soft_inject(m: Vec<f64>, v: Vec<f64>, gamma: f64) -> PyResult<Vec<f64>> {
    optim::soft_inject(&ParamVector::from_vec(m), &ParamVector::from_vec(v), gamma)
        .map(ParamVector::into_vec)
        .map_err(to_py)
}

/// Runs one experiment and returns a list of per-seed report dicts.
#[pyfunction]
#[pyo3(signature = (problem, optimizer, mode="B", steps=1000, seeds=None, scenario=None))]
fn run_experiment<'py>(
    py: Python<'py>,
    problem: &str,
    optimizer: &str,
    mode: &str,
    steps: u64,
    seeds: Option<Vec<u64>>,
    scenario: Option<&str>,
) -> PyResult<Bound<'py, PyAny>> {
    let kind = ProblemKind::parse(problem).map_err(to_py)?;
    let pc = match scenario {
        Some(s) => ProblemConfig::new(kind, s).map_err(to_py)?,
        None => ProblemConfig::default_for(kind),
    };
    let opt = OptimizerKind::parse(optimizer).map_err(to_py)?;
    let cfg = ExperimentConfig::new(pc, opt, parse_mode(mode)?)
        .with_steps(steps)
        .with_seeds(seeds.unwrap_or_else(|| harness::DEFAULT_SEEDS.to_vec()));
    let reports = py.detach(|| harness::run_experiment(&cfg)).map_err(to_py)?;
    json_to_py(py, &reports)
}

/// Runs the property suite; returns `(all_passed, [check dicts])`.
#[pyfunction]
fn verify_properties<'py>(py: Python<'py>) -> PyResult<(bool, Bound<'py, PyAny>)> {
    let results = py.detach(verify::run_all);
    let ok = results.iter().all(|r| r.passed);
    Ok((ok, json_to_py(py, &results)?))
}

#[pymodule]
#[pyo3(name = "flowadam")]
fn flowadam_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Problem>()?;
    m.add_class::<Optimizer>()?;
    m.add_function(wrap_pyfunction!(integrate, m)?)?;
    m.add_function(wrap_pyfunction!(clip_grad, m)?)?;
    m.add_function(wrap_pyfunction!(soft_inject, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(verify_properties, m)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use pyo3::types::PyModule;

    fn with_module(f: impl FnOnce(&Bound<'_, PyModule>)) {
        Python::initialize();
        Python::attach(|py| {
            let m = PyModule::new(py, "flowadam").unwrap();
            flowadam_module(&m).unwrap();
            f(&m);
        });
    }

    #[test]
    fn module_exposes_problem_and_optimizer() {
        with_module(|m| {
            let p = m
                .getattr("Problem")
                .unwrap()
                .call1(("rosenbrock",))
                .unwrap();
            assert_eq!(p.getattr("dim").unwrap().extract::<usize>().unwrap(), 2);
            let (loss, grad): (f64, Vec<f64>) = p
                .call_method1("loss_grad", (vec![1.0, 1.0],))
                .unwrap()
                .extract()
                .unwrap();
            assert_eq!((loss, grad), (0.0, vec![0.0, 0.0]));
            let opt = m
                .getattr("Optimizer")
                .unwrap()
                .call1(("flowadam", 2))
                .unwrap();
            let out = opt.call_method1("step", (&p, vec![-1.2, 1.0])).unwrap();
            let (theta, _event): (Vec<f64>, Bound<'_, PyDict>) = out.extract().unwrap();
            assert_eq!(theta.len(), 2);
        });
    }

    #[test]
    fn python_field_integrates_and_errors_propagate() {
        with_module(|m| {
            let py = m.py();
            let neg = py.eval(c"lambda y: [-v for v in y]", None, None).unwrap();
            let (y, _, status): (Vec<f64>, usize, String) = m
                .getattr("integrate")
                .unwrap()
                .call1((neg, vec![1.0], 1.0))
                .unwrap()
                .extract()
                .unwrap();
            assert_eq!(status, "Success");
            assert!((y[0] - (-1.0f64).exp()).abs() < 2e-3);
            let short = py.eval(c"lambda y: []", None, None).unwrap();
            let err = m
                .getattr("integrate")
                .unwrap()
                .call1((short, vec![1.0], 1.0))
                .unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(py));
        });
    }

    #[test]
    fn bad_names_raise_value_error() {
        with_module(|m| {
            let err = m.getattr("Problem").unwrap().call1(("nope",)).unwrap_err();
            assert!(err.is_instance_of::<PyValueError>(m.py()));
        });
    }
}
