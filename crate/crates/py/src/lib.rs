//! Python bindings: systems, scenario sets, DA clearing and pricing, the RT
//! rollout with settlement, the out-of-sample evaluator and batch studies.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use flexsettle::analysis::{ols as core_ols, rt_cost_curves};
use flexsettle::benchmark;
use flexsettle::da::{build_design, compute_prices, DaPrices, Design};
use flexsettle::pipeline::{self, DaDay, DayRun};
use flexsettle::rt::RtMode;
use flexsettle::scenario::ScenarioSet;
use flexsettle::settlement::iso_position;
use flexsettle::solver::{backend_by_name, SolverBackend};
use flexsettle::study::{self, StudyConfig, StudyMode};
use flexsettle::system::{validate_system, Constituent, SystemModel};
use flexsettle::Error;

fn err(e: Error) -> PyErr {
    match e {
        Error::Input(_) | Error::Io { .. } => PyValueError::new_err(e.to_string()),
        _ => PyRuntimeError::new_err(e.to_string()),
    }
}

fn backend(name: &str) -> PyResult<Box<dyn SolverBackend>> {
    backend_by_name(name).map_err(|e| PyValueError::new_err(e.to_string()))
}

fn design(name: &str) -> PyResult<Design> {
    match name.to_ascii_lowercase().as_str() {
        "base" => Ok(Design::Base),
        "ir" => Ok(Design::Ir),
        "fo" => Ok(Design::Fo),
        other => Err(PyValueError::new_err(format!("unknown design {other:?}; use base, ir or fo"))),
    }
}

fn rt_mode(name: &str) -> PyResult<RtMode> {
    match name.to_ascii_lowercase().as_str() {
        "full" => Ok(RtMode::Full),
        "restricted" => Ok(RtMode::Restricted),
        other => Err(PyValueError::new_err(format!("unknown RT mode {other:?}; use full or restricted"))),
    }
}

/// Generators, uncertain accounts, reserve products and market settings.
#[pyclass(name = "System", module = "flexsettle", from_py_object)]
#[derive(Clone)]
struct PySystem {
    inner: SystemModel,
}

#[pymethods]
impl PySystem {
    /// The 30-unit desk benchmark.
    #[staticmethod]
    fn desk() -> Self {
        Self { inner: benchmark::desk_system() }
    }

    /// Three units over four hours, with a skewed net-load error.
    #[staticmethod]
    fn asymmetric() -> Self {
        Self { inner: benchmark::asymmetric_system() }
    }

    #[staticmethod]
    fn from_toml(text: &str) -> PyResult<Self> {
        SystemModel::from_toml_str(text).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        SystemModel::load(path).map(|inner| Self { inner }).map_err(err)
    }

    fn to_toml(&self) -> String {
        self.inner.to_toml_string()
    }

    #[getter]
    fn name(&self) -> String {
        self.inner.name.clone()
    }

    #[getter]
    fn generator_ids(&self) -> Vec<String> {
        self.inner.generators.iter().map(|g| g.id.clone()).collect()
    }

    #[getter]
    fn total_capacity(&self) -> f64 {
        self.inner.total_capacity()
    }

    #[getter]
    fn da_hours(&self) -> usize {
        self.inner.market.da_hours
    }

    #[getter]
    fn rt_resolution(&self) -> f64 {
        self.inner.market.rt_resolution
    }

    /// Broken invariants, one message each; empty when the model is sound.
    fn validate(&self) -> Vec<String> {
        validate_system(&self.inner, None).iter().map(|v| v.to_string()).collect()
    }

    fn __repr__(&self) -> String {
        format!("System(name={:?}, generators={})", self.inner.name, self.inner.generators.len())
    }
}

/// Constituent scenarios on a shared time axis.
#[pyclass(name = "Scenarios", module = "flexsettle", from_py_object)]
#[derive(Clone)]
struct PyScenarios {
    inner: ScenarioSet,
}

#[pymethods]
impl PyScenarios {
    /// `series` maps a constituent (load, wind, solar, aggregate) to
    /// `[scenario][interval]` MW; `start` is an ISO timestamp.
    #[staticmethod]
    #[pyo3(signature = (resolution, series, start = "2030-01-01T00:00:00"))]
    fn from_series(resolution: f64, series: BTreeMap<String, Vec<Vec<f64>>>, start: &str) -> PyResult<Self> {
        let start = start
            .parse()
            .map_err(|e| PyValueError::new_err(format!("start {start:?}: {e}")))?;
        let mut map = BTreeMap::new();
        for (k, v) in series {
            map.insert(Constituent::parse(&k).map_err(err)?, v);
        }
        ScenarioSet::new(resolution, start, map).map(|inner| Self { inner }).map_err(err)
    }

    #[staticmethod]
    fn read_csv(path: PathBuf) -> PyResult<Self> {
        let f = std::fs::File::open(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        ScenarioSet::read_csv(f).map(|inner| Self { inner }).map_err(err)
    }

    fn write_csv(&self, path: PathBuf) -> PyResult<()> {
        let f = std::fs::File::create(&path).map_err(|e| PyValueError::new_err(format!("{}: {e}", path.display())))?;
        self.inner.write_csv(f).map_err(err)
    }

    #[getter]
    fn resolution(&self) -> f64 {
        self.inner.resolution
    }

    #[getter]
    fn start(&self) -> String {
        self.inner.start.to_string()
    }

    #[getter]
    fn num_scenarios(&self) -> usize {
        self.inner.num_scenarios()
    }

    #[getter]
    fn num_intervals(&self) -> usize {
        self.inner.num_intervals()
    }

    #[getter]
    fn probabilities(&self) -> Vec<f64> {
        self.inner.probabilities.clone()
    }

    fn net_load(&self, scenario: usize) -> PyResult<Vec<f64>> {
        if scenario >= self.inner.num_scenarios() {
            return Err(PyValueError::new_err(format!("scenario {scenario} out of range")));
        }
        Ok((0..self.inner.num_intervals()).map(|k| self.inner.net_load(scenario, k)).collect())
    }

    fn resample(&self, resolution: f64) -> PyResult<Self> {
        self.inner.resample(resolution).map(|inner| Self { inner }).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Scenarios(scenarios={}, intervals={}, resolution={})",
            self.inner.num_scenarios(),
            self.inner.num_intervals(),
            self.inner.resolution
        )
    }
}

/// Hourly DA scenarios and a 15-minute realisation of one desk day.
#[pyfunction]
#[pyo3(signature = (system, seed, day, scenarios = 50))]
fn desk_day(system: &PySystem, seed: u64, day: usize, scenarios: usize) -> PyResult<(PyScenarios, PyScenarios)> {
    let d = benchmark::desk_day(seed, day, scenarios, &system.inner.market).map_err(err)?;
    Ok((PyScenarios { inner: d.scenarios }, PyScenarios { inner: d.actual }))
}

/// Scenario set for the asymmetric instance.
#[pyfunction]
fn asymmetric_scenarios(resolution: f64, count: usize, seed: u64) -> PyResult<PyScenarios> {
    benchmark::asymmetric_scenarios(resolution, count, seed)
        .map(|inner| PyScenarios { inner })
        .map_err(err)
}

/// A cleared DA market, with prices when the backend gives duals.
#[pyclass(name = "DaResult", module = "flexsettle", from_py_object)]
#[derive(Clone)]
struct PyDaResult {
    day: DaDay,
    prices: Option<DaPrices>,
}

#[pymethods]
impl PyDaResult {
    #[getter]
    fn design(&self) -> &'static str {
        self.day.solution.design.as_str()
    }

    #[getter]
    fn objective(&self) -> f64 {
        self.day.solution.objective
    }

    #[getter]
    fn production_cost(&self) -> f64 {
        self.day.solution.production_cost()
    }

    #[getter]
    fn cost_breakdown(&self) -> BTreeMap<String, f64> {
        self.day.solution.cost_breakdown.clone()
    }

    #[getter]
    fn generator_ids(&self) -> Vec<String> {
        self.day.solution.generator_ids.clone()
    }

    /// `[generator][hour]` MW.
    #[getter]
    fn dispatch(&self) -> Vec<Vec<f64>> {
        self.day.solution.p.clone()
    }

    #[getter]
    fn commitment(&self) -> Vec<Vec<f64>> {
        self.day.solution.u.clone()
    }

    #[getter]
    fn scheduled_net_load(&self) -> Vec<f64> {
        (0..self.day.solution.hours).map(|t| self.day.solution.scheduled_net_load(t)).collect()
    }

    /// `[generator][hour]` awarded upward and downward flexibility.
    #[getter]
    fn flexibility(&self) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let s = &self.day.solution;
        let per = |f: &dyn Fn(usize, usize) -> f64| -> Vec<Vec<f64>> {
            (0..s.p.len()).map(|i| (0..s.hours).map(|t| f(i, t)).collect()).collect()
        };
        (per(&|i, t| s.flex_up(i, t)), per(&|i, t| s.flex_down(i, t)))
    }

    /// Largest hedge residual over FO buyers, levels and hours; `None`
    /// outside the FO design.
    #[getter]
    fn max_hedge_residual(&self) -> Option<f64> {
        let s = &self.day.solution;
        let fo = s.fo.as_ref()?;
        let mut worst = 0.0f64;
        for b in 0..fo.levels.len() {
            for sc in 0..fo.levels[b].len() {
                for t in 0..s.hours {
                    worst = worst.max(fo.hedge_residual(b, sc, t, s.pda[fo.buyer_account[b]][t]).abs());
                }
            }
        }
        Some(worst)
    }

    /// λ^DA per hour.
    #[getter]
    fn energy_prices(&self) -> Option<Vec<f64>> {
        self.prices.as_ref().map(|p| p.energy.clone())
    }

    /// `(up, down)`, each `[tier][hour]`.
    #[getter]
    fn fo_prices(&self) -> Option<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
        self.prices.as_ref().map(|p| (p.fo_up.clone(), p.fo_down.clone()))
    }

    /// Product name to hourly clearing price.
    #[getter]
    fn ir_prices(&self) -> Option<BTreeMap<String, Vec<f64>>> {
        self.prices
            .as_ref()
            .map(|p| p.ir_names.iter().cloned().zip(p.ir_product.iter().cloned()).collect())
    }

    #[getter]
    fn notes(&self) -> Vec<String> {
        self.day.notes.clone()
    }

    /// Simplified balancing model over every realisation; one dict per
    /// scenario.
    #[pyo3(signature = (system, realisations, backend = "highs"))]
    fn evaluate_oos(
        &self,
        py: Python<'_>,
        system: &PySystem,
        realisations: &PyScenarios,
        backend: &str,
    ) -> PyResult<Vec<BTreeMap<String, f64>>> {
        let b = self::backend(backend)?;
        let oos = py
            .detach(|| pipeline::evaluate_oos(&system.inner, &self.day, &realisations.inner, "python", b.as_ref()))
            .map_err(err)?;
        Ok(oos
            .results
            .iter()
            .map(|r| {
                BTreeMap::from([
                    ("scenario".to_string(), r.scenario as f64),
                    ("energy_cost".to_string(), r.energy_cost),
                    ("penalty_cost".to_string(), r.penalty_cost),
                    ("commitment_cost".to_string(), r.commitment_cost),
                    ("total_cost".to_string(), r.total_cost),
                ])
            })
            .collect())
    }

    fn __repr__(&self) -> String {
        format!("DaResult(design={}, objective={:.2})", self.design(), self.objective())
    }
}

/// Clears the DA market of one design ("base", "ir" or "fo").
#[pyfunction]
#[pyo3(signature = (system, scenarios, design, backend = "highs", day = 0))]
fn clear_da(
    py: Python<'_>,
    system: &PySystem,
    scenarios: &PyScenarios,
    design: &str,
    backend: &str,
    day: usize,
) -> PyResult<PyDaResult> {
    let d = self::design(design)?;
    let b = self::backend(backend)?;
    py.detach(|| {
        let out = pipeline::clear_da(&system.inner, &scenarios.inner, d, day, b.as_ref())?;
        let prices = if b.provides_duals() {
            let problem = build_design(&system.inner, &out.forecast, d)?;
            Some(compute_prices(&problem, &out.solution, b.as_ref())?)
        } else {
            None
        };
        Ok(PyDaResult { day: out, prices })
    })
    .map_err(err)
}

/// Two-settlement outcome of one day.
#[pyclass(name = "DayResult", module = "flexsettle", from_py_object)]
#[derive(Clone)]
struct PyDayResult {
    run: DayRun,
}

#[pymethods]
impl PyDayResult {
    #[getter]
    fn da(&self) -> PyDaResult {
        PyDaResult {
            day: self.run.da.clone(),
            prices: Some(self.run.prices.clone()),
        }
    }

    /// DA cost, RT incremental and scarcity cost, and their total.
    #[getter]
    fn cost(&self) -> BTreeMap<String, f64> {
        let c = &self.run.cost;
        BTreeMap::from([
            ("da_cost".to_string(), c.da_cost),
            ("rt_incremental".to_string(), c.rt_incremental),
            ("rt_scarcity".to_string(), c.rt_scarcity),
            ("total".to_string(), c.total),
        ])
    }

    /// λ^RT per RTD interval; `None` where the dispatch gave no dual.
    #[getter]
    fn rt_prices(&self) -> Vec<Option<f64>> {
        self.run.rt.prices()
    }

    /// ISO net position per `stage/product`, plus `total`.
    fn iso_position(&self) -> PyResult<BTreeMap<String, f64>> {
        let pos = iso_position(&self.run.ledger).map_err(err)?;
        let mut out: BTreeMap<String, f64> = pos
            .by_stage_product
            .iter()
            .map(|((s, p), v)| (format!("{}/{}", s.as_str(), p.as_str()), *v))
            .collect();
        out.insert("total".to_string(), pos.total);
        Ok(out)
    }

    /// Ledger entries as `(party, class, stage, product, interval, amount)`.
    fn ledger(&self) -> Vec<(String, &'static str, &'static str, &'static str, usize, f64)> {
        self.run
            .ledger
            .entries
            .iter()
            .map(|e| (e.party.clone(), e.class.as_str(), e.stage.as_str(), e.product.as_str(), e.interval, e.amount))
            .collect()
    }

    /// Net cash of one party over the day.
    fn party_total(&self, party: &str) -> f64 {
        self.run.ledger.party_total(party)
    }

    #[getter]
    fn exercises(&self) -> usize {
        self.run.exercises.iter().filter(|e| e.exercised > 0.0).count()
    }

    #[getter]
    fn flags(&self) -> Vec<String> {
        self.run.flags.clone()
    }

    /// `(slope, intercept, r2)` of the positive- and negative-error RT cost fits.
    fn cost_curves(&self) -> PyResult<((f64, f64, f64), (f64, f64, f64))> {
        let (p, n) = rt_cost_curves(&self.run.points).map_err(err)?;
        Ok(((p.slope, p.intercept, p.r2), (n.slope, n.intercept, n.r2)))
    }

    fn __repr__(&self) -> String {
        format!("DayResult(design={}, total={:.2})", self.run.da.solution.design.as_str(), self.run.cost.total)
    }
}

/// Clears DA, rolls RT forward on scenario 0 of `actual` and settles.
#[pyfunction]
#[pyo3(signature = (system, scenarios, actual, design, mode = "full", backend = "highs", day = 0))]
#[allow(clippy::too_many_arguments)]
fn simulate_day(
    py: Python<'_>,
    system: &PySystem,
    scenarios: &PyScenarios,
    actual: &PyScenarios,
    design: &str,
    mode: &str,
    backend: &str,
    day: usize,
) -> PyResult<PyDayResult> {
    let d = self::design(design)?;
    let m = rt_mode(mode)?;
    let b = self::backend(backend)?;
    py.detach(|| pipeline::simulate_day(&system.inner, &scenarios.inner, &actual.inner, d, m, day, b.as_ref()))
        .map(|run| PyDayResult { run })
        .map_err(err)
}

/// Runs a study from a TOML config; returns output file name to sha256.
#[pyfunction]
#[pyo3(signature = (config, mode = "full", backend = "highs"))]
fn run_study(py: Python<'_>, config: PathBuf, mode: &str, backend: &str) -> PyResult<BTreeMap<String, String>> {
    let cfg = StudyConfig::load(&config).map_err(err)?;
    let mode = match mode {
        "full" => StudyMode::Full,
        "oos" => StudyMode::OosOnly,
        other => return Err(PyValueError::new_err(format!("unknown study mode {other:?}; use full or oos"))),
    };
    let b = self::backend(backend)?;
    py.detach(|| study::run_study(&cfg, mode, b.as_ref()))
        .map(|o| o.files)
        .map_err(err)
}

/// Least squares with intercept: `(slope, intercept, r2)`.
#[pyfunction]
fn ols(x: Vec<f64>, y: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    core_ols(&x, &y).map_err(err)
}

#[pymodule]
fn _flexsettle(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PySystem>()?;
    m.add_class::<PyScenarios>()?;
    m.add_class::<PyDaResult>()?;
    m.add_class::<PyDayResult>()?;
    m.add_function(wrap_pyfunction!(desk_day, m)?)?;
    m.add_function(wrap_pyfunction!(asymmetric_scenarios, m)?)?;
    m.add_function(wrap_pyfunction!(clear_da, m)?)?;
    m.add_function(wrap_pyfunction!(simulate_day, m)?)?;
    m.add_function(wrap_pyfunction!(run_study, m)?)?;
    m.add_function(wrap_pyfunction!(ols, m)?)?;
    m.add(
        "__all__",
        vec![
            "System",
            "Scenarios",
            "DaResult",
            "DayResult",
            "desk_day",
            "asymmetric_scenarios",
            "clear_da",
            "simulate_day",
            "run_study",
            "ols",
        ],
    )?;
    Ok(())
}
