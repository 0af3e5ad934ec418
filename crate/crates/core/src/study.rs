//! Batch studies: a TOML configuration selects the system, the scenario
//! source, the designs and the weeks; `run_study` simulates them and writes
//! report CSVs plus a checksum manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    committed_unit_diff, da_schedule_percentile, flexibility_demand_metric, rt_cost_curves, weekly_cost_diff, write_rows,
    CostCurveFit, CostReport, WeeklyDiffRow,
};
use crate::benchmark::{desk_day, desk_system, out_of_sample};
use crate::da::Design;
use crate::error::{Error, Result};
use crate::pipeline::{clear_da, evaluate_oos, simulate_day, DaDay, DayRun, OosDay};
use crate::rt::RtMode;
use crate::scenario::{cluster_weeks, net_load_moments, week_features, zscore, ScenarioSet};
use crate::settlement::{aggregate_cashflows, iso_position, CashflowLedger, PartyClass, Product, Stage};
use crate::solver::SolverBackend;
use crate::system::{CommitClass, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DesignSelection {
    Fo,
    Ir,
    Both,
}

impl DesignSelection {
    pub fn designs(self) -> Vec<Design> {
        match self {
            DesignSelection::Fo => vec![Design::Fo],
            DesignSelection::Ir => vec![Design::Ir],
            DesignSelection::Both => vec![Design::Ir, Design::Fo],
        }
    }
}

/// Desk-benchmark scenarios generated from a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub weeks: usize,
    #[serde(default = "seven")]
    pub days_per_week: usize,
    #[serde(default = "fifty")]
    pub scenarios: usize,
}

fn seven() -> usize {
    7
}

fn fifty() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    /// System TOML; the desk benchmark when absent.
    #[serde(default)]
    pub system: Option<PathBuf>,
    /// Hourly DA scenarios covering whole days.
    #[serde(default)]
    pub scenarios: Option<PathBuf>,
    /// Realisation at RT resolution over the same days.
    #[serde(default)]
    pub actuals: Option<PathBuf>,
    /// Out-of-sample realisations at RT resolution.
    #[serde(default)]
    pub oos_file: Option<PathBuf>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSpec>,
    #[serde(default = "both")]
    pub designs: DesignSelection,
    #[serde(default = "seven")]
    pub days_per_week: usize,
    /// Weeks to simulate, each with weight 1.
    #[serde(default)]
    pub weeks: Option<Vec<usize>>,
    /// Characteristic weeks by k-medoids, weighted by cluster size.
    #[serde(default)]
    pub clusters: Option<usize>,
    #[serde(default)]
    pub oos_scenarios: usize,
    #[serde(default)]
    pub oos_seed: u64,
    #[serde(default = "full")]
    pub rt_mode: RtMode,
    pub output: PathBuf,
}

fn both() -> DesignSelection {
    DesignSelection::Both
}

fn full() -> RtMode {
    RtMode::Full
}

impl StudyConfig {
    /// Parses a config; relative paths are taken from `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::input(format!("study config: {e}")))?;
        let fix = |p: &mut Option<PathBuf>| {
            if let Some(x) = p.as_mut() {
                if x.is_relative() {
                    *x = base.join(&*x);
                }
            }
        };
        fix(&mut cfg.system);
        fix(&mut cfg.scenarios);
        fix(&mut cfg.actuals);
        fix(&mut cfg.oos_file);
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn check(&self) -> Result<()> {
        match (&self.synthetic, &self.scenarios, &self.actuals) {
            (Some(_), None, None) => {}
            (None, Some(_), Some(_)) => {}
            (Some(_), _, _) => return Err(Error::input("give either `synthetic` or scenario files, not both")),
            _ => return Err(Error::input("need `synthetic` or both `scenarios` and `actuals`")),
        }
        for p in [&self.system, &self.scenarios, &self.actuals, &self.oos_file].into_iter().flatten() {
            if !p.exists() {
                return Err(Error::input(format!("{} does not exist", p.display())));
            }
        }
        if self.weeks.is_some() && self.clusters.is_some() {
            return Err(Error::input("give `weeks` or `clusters`, not both"));
        }
        if self.oos_scenarios > 0 && self.synthetic.is_none() && self.oos_file.is_none() {
            return Err(Error::input("out-of-sample runs need `synthetic` or `oos_file`"));
        }
        Ok(())
    }

    fn days_per_week(&self) -> usize {
        self.synthetic.as_ref().map_or(self.days_per_week, |s| s.days_per_week).max(1)
    }
}

/// DA scenarios, realisation and (optionally) out-of-sample draws of one day.
#[derive(Debug, Clone)]
pub struct DayInput {
    pub day: usize,
    pub scenarios: ScenarioSet,
    pub actual: ScenarioSet,
    pub oos: Option<ScenarioSet>,
}

/// Days available to a study and how they group into weeks.
pub struct StudyInputs {
    pub system: SystemModel,
    pub num_days: usize,
    pub days_per_week: usize,
    source: Source,
}

enum Source {
    Synthetic(SyntheticSpec),
    Files {
        scenarios: ScenarioSet,
        actuals: ScenarioSet,
        oos: Option<ScenarioSet>,
    },
}

fn read_set(path: &Path) -> Result<ScenarioSet> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    ScenarioSet::read_csv(f)
}

impl StudyInputs {
    pub fn load(cfg: &StudyConfig) -> Result<Self> {
        let system = match &cfg.system {
            Some(p) => SystemModel::load(p)?,
            None => desk_system(),
        };
        let dpw = cfg.days_per_week();
        let hours = system.market.da_hours;
        let (num_days, source) = match &cfg.synthetic {
            Some(s) => (s.weeks * s.days_per_week, Source::Synthetic(s.clone())),
            None => {
                let scenarios = read_set(cfg.scenarios.as_ref().expect("checked"))?;
                let actuals = read_set(cfg.actuals.as_ref().expect("checked"))?;
                if (scenarios.resolution - 60.0).abs() > 1e-9 || scenarios.num_intervals() % hours != 0 {
                    return Err(Error::input("DA scenarios must be hourly and cover whole days"));
                }
                let days = scenarios.num_intervals() / hours;
                let per_hour = system.market.rt_intervals_per_hour();
                if (actuals.resolution - system.market.rt_resolution).abs() > 1e-9
                    || actuals.num_intervals() != days * hours * per_hour
                    || actuals.start != scenarios.start
                {
                    return Err(Error::input("actuals must be at RT resolution on the scenarios' days"));
                }
                let oos = cfg.oos_file.as_ref().map(|p| read_set(p)).transpose()?;
                if let Some(o) = &oos {
                    if o.num_intervals() != actuals.num_intervals() || o.resolution != actuals.resolution {
                        return Err(Error::input("out-of-sample file is not aligned with the actuals"));
                    }
                }
                (days, Source::Files { scenarios, actuals, oos })
            }
        };
        Ok(Self {
            system,
            num_days,
            days_per_week: dpw,
            source,
        })
    }

    pub fn num_weeks(&self) -> usize {
        self.num_days / self.days_per_week
    }

    pub fn day(&self, day: usize, oos: usize, oos_seed: u64) -> Result<DayInput> {
        let cfg = &self.system.market;
        match &self.source {
            Source::Synthetic(s) => {
                let d = desk_day(s.seed, day, s.scenarios, cfg)?;
                let oos = (oos > 0).then(|| out_of_sample(&d, oos, oos_seed, cfg)).transpose()?;
                Ok(DayInput {
                    day,
                    scenarios: d.scenarios,
                    actual: d.actual,
                    oos,
                })
            }
            Source::Files { scenarios, actuals, oos: o } => {
                let h = cfg.da_hours;
                let per = h * cfg.rt_intervals_per_hour();
                let oos = match (oos, o) {
                    (0, _) | (_, None) => None,
                    (n, Some(set)) => {
                        let w = set.window(day * per, (day + 1) * per);
                        Some(w.subset(0, n.min(w.num_scenarios())))
                    }
                };
                Ok(DayInput {
                    day,
                    scenarios: scenarios.window(day * h, (day + 1) * h),
                    actual: actuals.window(day * per, (day + 1) * per),
                    oos,
                })
            }
        }
    }

    /// Selected weeks and their weights.
    pub fn select_weeks(&self, cfg: &StudyConfig) -> Result<Vec<(usize, f64)>> {
        let n = self.num_weeks();
        if let Some(ws) = &cfg.weeks {
            if let Some(w) = ws.iter().find(|&&w| w >= n) {
                return Err(Error::input(format!("week {w} out of range (have {n})")));
            }
            return Ok(ws.iter().map(|&w| (w, 1.0)).collect());
        }
        let Some(k) = cfg.clusters else {
            return Ok((0..n).map(|w| (w, 1.0)).collect());
        };
        let features = (0..n)
            .map(|w| {
                let (mut m, mut s, mut a) = (Vec::new(), Vec::new(), Vec::new());
                for d in w * self.days_per_week..(w + 1) * self.days_per_week {
                    let inp = self.day(d, 0, 0)?;
                    let (dm, ds) = net_load_moments(&inp.scenarios);
                    let hourly = inp.actual.resample(60.0)?;
                    m.extend(dm);
                    s.extend(ds);
                    a.extend((0..hourly.num_intervals()).map(|t| hourly.net_load(0, t)));
                }
                week_features(&m, &s, &a)
            })
            .collect::<Result<Vec<_>>>()?;
        let res = cluster_weeks(&zscore(&features), k)?;
        Ok(res.medoids.iter().zip(&res.weights).map(|(&w, &c)| (w, c as f64)).collect())
    }
}

/// What a study run executes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StudyMode {
    /// DA, RT rollout, settlement and analysis; plus the out-of-sample sweep
    /// when configured.
    Full,
    /// DA and the out-of-sample sweep only.
    OosOnly,
}

/// Files written and their checksums.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StudyOutcome {
    pub files: BTreeMap<String, String>,
    pub failures: Vec<String>,
}

struct DesignResult {
    design: Design,
    runs: Vec<DayRun>,
    da: Vec<DaDay>,
    oos: Vec<OosDay>,
}

fn fmt(x: f64) -> String {
    // Rounding first keeps -0.000000 out of the tables.
    format!("{:.6}", (x * 1e6).round() / 1e6 + 0.0)
}

/// Writes CSV output files into one directory and tracks their checksums.
struct Writer {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Writer {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: BTreeMap::new(),
        })
    }

    fn put(&mut self, name: &str, bytes: Vec<u8>) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, &bytes).map_err(|e| Error::io(&path, e))?;
        let sum = Sha256::digest(&bytes);
        self.files.insert(name.to_string(), sum.iter().map(|b| format!("{b:02x}")).collect());
        Ok(())
    }

    fn rows<T: Serialize>(&mut self, name: &str, rows: &[T]) -> Result<()> {
        let mut buf = Vec::new();
        write_rows(&mut buf, rows)?;
        self.put(name, buf)
    }

    fn table(&mut self, name: &str, header: &[&str], rows: Vec<Vec<String>>) -> Result<()> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for r in rows {
            w.write_record(&r)?;
        }
        let buf = w.into_inner().map_err(|e| Error::Internal(e.to_string()))?;
        self.put(name, buf)
    }

    fn manifest(&mut self) -> Result<()> {
        let rows = self.files.iter().map(|(f, s)| vec![f.clone(), s.clone()]).collect();
        let files = std::mem::take(&mut self.files);
        self.table("manifest.csv", &["file", "sha256"], rows)?;
        self.files = files;
        Ok(())
    }
}

#[derive(Serialize)]
struct CostRow {
    design: Design,
    week: usize,
    weight: f64,
    da_cost: f64,
    rt_incremental: f64,
    rt_scarcity: f64,
    total: f64,
}

fn week_reports(design: Design, label: &str, weeks: &[(usize, f64)], dpw: usize, per_day: &BTreeMap<usize, CostReport>) -> Vec<CostReport> {
    weeks
        .iter()
        .map(|&(w, _)| {
            let days: Vec<&CostReport> = (w * dpw..(w + 1) * dpw).filter_map(|d| per_day.get(&d)).collect();
            let sum = |f: fn(&CostReport) -> f64| days.iter().map(|r| f(r)).sum::<f64>();
            let scen: Vec<&str> = days.iter().map(|r| r.scenarios.as_str()).collect();
            CostReport::new(
                design,
                w,
                format!("{label}:{}", scen.join("+")),
                sum(|r| r.da_cost),
                sum(|r| r.rt_incremental),
                sum(|r| r.rt_scarcity),
            )
        })
        .collect()
}

fn cost_rows(reports: &[CostReport], weeks: &[(usize, f64)]) -> Vec<CostRow> {
    reports
        .iter()
        .zip(weeks)
        .map(|(r, &(_, weight))| CostRow {
            design: r.design,
            week: r.week,
            weight,
            da_cost: r.da_cost,
            rt_incremental: r.rt_incremental,
            rt_scarcity: r.rt_scarcity,
            total: r.total,
        })
        .collect()
}

fn annual_row(design: Design, reports: &[CostReport], weeks: &[(usize, f64)]) -> Vec<String> {
    let w = |f: fn(&CostReport) -> f64| -> f64 { reports.iter().zip(weeks).map(|(r, &(_, k))| k * f(r)).sum() };
    vec![
        design.as_str().into(),
        fmt(w(|r| r.da_cost)),
        fmt(w(|r| r.rt_incremental)),
        fmt(w(|r| r.rt_scarcity)),
        fmt(w(|r| r.total)),
    ]
}

fn curve_rows(design: Design, source: &str, points: &[(f64, f64)], notes: &mut Vec<String>) -> Vec<CostCurveFit> {
    match rt_cost_curves(points) {
        Ok((p, n)) => vec![p, n],
        Err(e) => {
            notes.push(format!("{} {source} cost curves: {e}", design.as_str()));
            vec![]
        }
    }
}

const SETTLEMENT_COMPONENTS: [(Stage, Product); 10] = [
    (Stage::Da, Product::Energy),
    (Stage::Da, Product::FoUp),
    (Stage::Da, Product::FoDown),
    (Stage::Da, Product::IrUp),
    (Stage::Da, Product::IrDown),
    (Stage::Rt, Product::Energy),
    (Stage::Rt, Product::FoUp),
    (Stage::Rt, Product::FoDown),
    (Stage::Rt, Product::IrUp),
    (Stage::Rt, Product::IrDown),
];

fn simulate_design(
    inputs: &StudyInputs,
    cfg: &StudyConfig,
    mode: StudyMode,
    design: Design,
    days: &[usize],
    backend: &(dyn SolverBackend + Sync),
) -> (DesignResult, Vec<(usize, String)>) {
    let sys = &inputs.system;
    let out: Vec<Result<(Option<DayRun>, DaDay, Option<OosDay>)>> = days
        .par_iter()
        .map(|&d| {
            let inp = inputs.day(d, cfg.oos_scenarios, cfg.oos_seed)?;
            let (run, da) = match mode {
                StudyMode::Full => {
                    let run = simulate_day(sys, &inp.scenarios, &inp.actual, design, cfg.rt_mode, d, backend)?;
                    let da = run.da.clone();
                    (Some(run), da)
                }
                StudyMode::OosOnly => (None, clear_da(sys, &inp.scenarios, design, d, backend)?),
            };
            let oos = match &inp.oos {
                Some(set) => Some(evaluate_oos(sys, &da, set, &crate::pipeline::digest(&inp.scenarios, set), backend)?),
                None => None,
            };
            Ok((run, da, oos))
        })
        .collect();
    let mut res = DesignResult {
        design,
        runs: vec![],
        da: vec![],
        oos: vec![],
    };
    let mut failures = Vec::new();
    for (d, r) in days.iter().zip(out) {
        match r {
            Ok((run, da, oos)) => {
                res.runs.extend(run);
                res.da.push(da);
                res.oos.extend(oos);
            }
            Err(e) => failures.push((*d, format!("{} day {d}: {e}", design.as_str()))),
        }
    }
    (res, failures)
}

/// Runs the study and writes its artifacts into `cfg.output`. On failure
/// the outputs of successful days are kept, `failure.log` lists the
/// failures and the first error is returned.
pub fn run_study(cfg: &StudyConfig, mode: StudyMode, backend: &(dyn SolverBackend + Sync)) -> Result<StudyOutcome> {
    let inputs = StudyInputs::load(cfg)?;
    let weeks = inputs.select_weeks(cfg)?;
    let mut w = Writer::new(&cfg.output)?;
    let dpw = inputs.days_per_week;
    let days: Vec<usize> = weeks.iter().flat_map(|&(wk, _)| wk * dpw..(wk + 1) * dpw).collect();
    if days.is_empty() {
        w.manifest()?;
        return Ok(StudyOutcome::default());
    }
    let mut results = Vec::new();
    let mut failures = Vec::new();
    let mut failed_days = Vec::new();
    for design in cfg.designs.designs() {
        let (r, f) = simulate_design(&inputs, cfg, mode, design, &days, backend);
        results.push(r);
        failed_days.extend(f.iter().map(|x| x.0));
        failures.extend(f.into_iter().map(|x| x.1));
    }
    // Reports cover only weeks every design completed.
    let complete: Vec<(usize, f64)> = weeks
        .iter()
        .copied()
        .filter(|&(wk, _)| !failed_days.iter().any(|d| d / dpw == wk))
        .collect();
    let weeks = complete;
    for r in &mut results {
        r.runs.retain(|x| !failed_days.contains(&x.day));
        r.da.retain(|x| !failed_days.contains(&x.day));
        r.oos.retain(|x| !failed_days.contains(&x.day));
    }
    let mut notes = vec![
        format!("backend: {}", backend.name()),
        format!("rt mode: {:?}", cfg.rt_mode),
        "costs in $; rollout costs are per simulated realisation, oos costs are scenario means".into(),
    ];
    write_reports(&mut w, &inputs, &weeks, &results, &mut notes)?;
    notes.extend(failures.iter().map(|f| format!("failed: {f}")));
    w.put("notes.txt", (notes.join("\n") + "\n").into_bytes())?;
    if !failures.is_empty() {
        w.put("failure.log", (failures.join("\n") + "\n").into_bytes())?;
    }
    w.manifest()?;
    let outcome = StudyOutcome {
        files: w.files.clone(),
        failures: failures.clone(),
    };
    match failures.first() {
        Some(f) => Err(Error::Solve(crate::solver::SolverError::Backend(f.clone()))),
        None => Ok(outcome),
    }
}

fn write_reports(
    w: &mut Writer,
    inputs: &StudyInputs,
    weeks: &[(usize, f64)],
    results: &[DesignResult],
    notes: &mut Vec<String>,
) -> Result<()> {
    let sys = &inputs.system;
    let dpw = inputs.days_per_week;
    let mut cost_table = Vec::new();
    let mut annual = Vec::new();
    let mut oos_table = Vec::new();
    let mut oos_annual = Vec::new();
    let mut iso_rows = Vec::new();
    let mut flex_rows = Vec::new();
    let mut imb_rows = Vec::new();
    let mut schedule = Vec::new();
    let mut rt_rows = Vec::new();
    let mut curves = Vec::new();
    let mut oos_rows = Vec::new();
    let mut exercise_rows = Vec::new();
    let mut weekly: BTreeMap<Design, Vec<CostReport>> = BTreeMap::new();
    let mut weekly_oos: BTreeMap<Design, Vec<CostReport>> = BTreeMap::new();

    for r in results {
        let d = r.design;
        for day in &r.da {
            notes.extend(day.notes.iter().map(|n| format!("{} day {}: {n}", d.as_str(), day.day)));
            let pct = da_schedule_percentile(&day.solution, &day.forecast.net_load);
            let demand = flexibility_demand_metric(&day.solution, &day.forecast.net_load)?;
            for t in 0..day.solution.hours {
                let committed = sys
                    .generators
                    .iter()
                    .enumerate()
                    .filter(|(i, g)| g.commit_class == CommitClass::DaOnly && day.solution.committed(*i, t))
                    .count();
                let f = &demand[t];
                let opt = |x: Option<f64>| x.map(fmt).unwrap_or_default();
                schedule.push(vec![
                    d.as_str().into(),
                    day.day.to_string(),
                    t.to_string(),
                    fmt(day.solution.scheduled_net_load(t)),
                    fmt(pct[t].0),
                    pct[t].1.to_string(),
                    fmt(f.up),
                    fmt(f.down),
                    fmt(f.width),
                    opt(f.normalized),
                    opt(f.up_normalized),
                    opt(f.down_normalized),
                    committed.to_string(),
                ]);
            }
        }

        if !r.runs.is_empty() {
            let per_day: BTreeMap<usize, CostReport> = r.runs.iter().map(|x| (x.day, x.cost.clone())).collect();
            let reports = week_reports(d, "rollout", weeks, dpw, &per_day);
            cost_table.extend(cost_rows(&reports, weeks));
            annual.push(annual_row(d, &reports, weeks));
            weekly.insert(d, reports);

            let mut ledger = CashflowLedger::new();
            let mut rtc = BTreeMap::new();
            for run in &r.runs {
                ledger.extend(run.ledger.clone());
                rtc.insert(run.day, run.rt.incremental_cost());
                for f in &run.flags {
                    notes.push(format!("{} day {}: {f}", d.as_str(), run.day));
                }
                for iv in &run.rt.intervals {
                    let (e, c) = run.points[iv.interval];
                    rt_rows.push(vec![
                        d.as_str().into(),
                        run.day.to_string(),
                        iv.interval.to_string(),
                        fmt(e),
                        fmt(c),
                        iv.lambda.map(fmt).unwrap_or_default(),
                    ]);
                }
                for x in &run.exercises {
                    exercise_rows.push(vec![
                        run.day.to_string(),
                        x.buyer.clone(),
                        x.tier.to_string(),
                        x.direction.as_str().into(),
                        x.interval.to_string(),
                        x.price_trigger.to_string(),
                        x.quantity_trigger.to_string(),
                        fmt(x.held),
                        fmt(x.exercised),
                        fmt(x.payoff),
                    ]);
                }
            }
            w.put(&format!("ledger_{}.csv", d.as_str()), {
                let mut buf = Vec::new();
                ledger.write_csv(&mut buf)?;
                buf
            })?;
            let pos = iso_position(&ledger)?;
            for class in [PartyClass::Seller, PartyClass::Buyer, PartyClass::Load, PartyClass::Iso] {
                for p in [Product::Energy, Product::FoUp, Product::FoDown, Product::IrUp, Product::IrDown] {
                    let s = |st: Stage| ledger.sum_where(|e| e.class == class && e.stage == st && e.product == p);
                    let (da, rt) = (s(Stage::Da), s(Stage::Rt));
                    iso_rows.push(vec![d.as_str().into(), p.as_str().into(), class.as_str().into(), fmt(da), fmt(rt), fmt(da + rt)]);
                }
            }
            if let Some(ratio) = pos.ir_recovery_ratio {
                notes.push(format!("{} IR RT recovery ratio {ratio:.6}", d.as_str()));
            }
            let seller = aggregate_cashflows(&ledger, PartyClass::Seller, &rtc);
            for (st, p) in SETTLEMENT_COMPONENTS {
                if p == Product::Energy {
                    continue;
                }
                let (m, s) = seller.component_stats(st, p);
                flex_rows.push(vec![d.as_str().into(), format!("{}_{}", st.as_str(), p.as_str()), fmt(m), fmt(s)]);
            }
            let flex_days: Vec<f64> = (0..seller.days.len())
                .map(|i| {
                    seller
                        .components
                        .iter()
                        .filter(|((_, p), _)| *p != Product::Energy)
                        .map(|(_, v)| v[i])
                        .sum()
                })
                .collect();
            let margins: Vec<f64> = seller.days.iter().zip(&flex_days).map(|(day, f)| f - rtc[day]).collect();
            for (name, xs) in [("flexibility_total", &flex_days), ("margin", &margins)] {
                let (m, s) = crate::settlement::mean_std(xs);
                flex_rows.push(vec![d.as_str().into(), name.into(), fmt(m), fmt(s)]);
            }
            for class in [PartyClass::Buyer, PartyClass::Load] {
                let stats = aggregate_cashflows(&ledger, class, &BTreeMap::new());
                let imbalance: Vec<(Stage, Product)> =
                    SETTLEMENT_COMPONENTS.iter().copied().filter(|(_, p)| *p != Product::Energy).collect();
                let mut totals = vec![0.0; stats.days.len()];
                for (st, p) in imbalance {
                    if let Some(v) = stats.components.get(&(st, p)) {
                        totals.iter_mut().zip(v).for_each(|(t, x)| *t += x);
                    }
                    let (m, s) = stats.component_stats(st, p);
                    imb_rows.push(vec![
                        d.as_str().into(),
                        class.as_str().into(),
                        format!("{}_{}", st.as_str(), p.as_str()),
                        fmt(m),
                        fmt(s),
                    ]);
                }
                let (m, s) = crate::settlement::mean_std(&totals);
                imb_rows.push(vec![d.as_str().into(), class.as_str().into(), "total".into(), fmt(m), fmt(s)]);
            }
            let pts: Vec<(f64, f64)> = r.runs.iter().flat_map(|x| x.points.clone()).collect();
            curves.extend(curve_rows(d, "rollout", &pts, notes).into_iter().map(|c| (d, "rollout", c)));
        }

        if !r.oos.is_empty() {
            let per_day: BTreeMap<usize, CostReport> = r.oos.iter().map(|x| (x.day, x.cost.clone())).collect();
            let reports = week_reports(d, "oos", weeks, dpw, &per_day);
            oos_table.extend(cost_rows(&reports, weeks));
            oos_annual.push(annual_row(d, &reports, weeks));
            weekly_oos.insert(d, reports);
            for o in &r.oos {
                oos_rows.extend(o.rows(d));
            }
            let pts: Vec<(f64, f64)> = r.oos.iter().flat_map(|x| x.points.clone()).collect();
            curves.extend(curve_rows(d, "oos", &pts, notes).into_iter().map(|c| (d, "oos", c)));
        }
    }

    let annual_header = ["design", "da_cost", "rt_incremental", "rt_scarcity", "total"];
    if !cost_table.is_empty() {
        w.rows("costs.csv", &cost_table)?;
        w.table("annual_costs.csv", &annual_header, annual)?;
    }
    if !oos_table.is_empty() {
        w.rows("oos_costs.csv", &oos_table)?;
        w.table("oos_annual_costs.csv", &annual_header, oos_annual)?;
        w.rows("oos.csv", &oos_rows)?;
    }
    if !iso_rows.is_empty() {
        w.table("settlements.csv", &["design", "product", "class", "da", "rt", "total"], iso_rows)?;
        w.table("cashflows_flexible.csv", &["design", "component", "mean", "std"], flex_rows)?;
        w.table("cashflows_imbalance.csv", &["design", "class", "component", "mean", "std"], imb_rows)?;
        w.table("rt_intervals.csv", &["design", "day", "interval", "error", "cost", "lambda"], rt_rows)?;
    }
    if !exercise_rows.is_empty() {
        w.table(
            "exercises.csv",
            &["day", "buyer", "tier", "direction", "interval", "price_trigger", "quantity_trigger", "held", "exercised", "payoff"],
            exercise_rows,
        )?;
    }
    if !schedule.is_empty() {
        w.table(
            "schedule.csv",
            &[
                "design", "day", "hour", "scheduled_net_load", "percentile", "clamped", "flex_up", "flex_down", "width_5_95",
                "normalized", "up_normalized", "down_normalized", "da_only_committed",
            ],
            schedule,
        )?;
    }
    if !curves.is_empty() {
        let rows = curves
            .into_iter()
            .map(|(d, src, c)| {
                vec![d.as_str().into(), src.into(), format!("{:?}", c.direction).to_lowercase(), fmt(c.slope), fmt(c.intercept), fmt(c.r2), c.n.to_string()]
            })
            .collect();
        w.table("cost_curves.csv", &["design", "source", "direction", "slope", "intercept", "r2", "n"], rows)?;
    }
    let weights: Vec<f64> = weeks.iter().map(|w| w.1).collect();
    for (name, table) in [("weekly_diff.csv", &weekly), ("oos_weekly_diff.csv", &weekly_oos)] {
        if let (Some(ir), Some(fo)) = (table.get(&Design::Ir), table.get(&Design::Fo)) {
            let diff = weekly_cost_diff(ir, fo, &weights, sys.market.mip_gap)?;
            let mut rows: Vec<WeeklyDiffRow> = diff.rows;
            rows.push(WeeklyDiffRow {
                week: usize::MAX,
                weight: weights.iter().sum(),
                ir_total: diff.annual_ir,
                fo_total: diff.annual_fo,
                diff: diff.annual_diff,
                band: rows.iter().map(|r| r.weight * r.band).sum(),
                exceeds_band: false,
            });
            let last = rows.len() - 1;
            rows[last].exceeds_band = rows[last].diff.abs() > rows[last].band;
            let out: Vec<Vec<String>> = rows
                .iter()
                .map(|r| {
                    vec![
                        if r.week == usize::MAX { "annual".into() } else { r.week.to_string() },
                        fmt(r.weight),
                        fmt(r.ir_total),
                        fmt(r.fo_total),
                        fmt(r.diff),
                        fmt(r.band),
                        r.exceeds_band.to_string(),
                    ]
                })
                .collect();
            w.table(name, &["week", "weight", "ir_total", "fo_total", "diff", "band", "exceeds_band"], out)?;
        }
    }
    let by = |d: Design| results.iter().find(|r| r.design == d);
    if let (Some(ir), Some(fo)) = (by(Design::Ir), by(Design::Fo)) {
        let mut rows = Vec::new();
        for (a, b) in fo.da.iter().zip(&ir.da) {
            for (t, x) in committed_unit_diff(sys, &a.solution, &b.solution)?.into_iter().enumerate() {
                rows.push(vec![a.day.to_string(), t.to_string(), x.to_string()]);
            }
        }
        w.table("committed_diff.csv", &["day", "hour", "fo_minus_ir"], rows)?;
    }
    Ok(())
}

/// Key columns of each file `compare` diffs.
const COMPARED: [(&str, &[&str]); 5] = [
    ("costs.csv", &["design", "week"]),
    ("schedule.csv", &["design", "day", "hour"]),
    ("cashflows_flexible.csv", &["design", "component"]),
    ("cashflows_imbalance.csv", &["design", "class", "component"]),
    ("settlements.csv", &["design", "product", "class"]),
];

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rd = csv::Reader::from_reader(f);
    let header: Vec<String> = rd.headers()?.iter().map(String::from).collect();
    let rows = rd
        .records()
        .map(|r| r.map(|r| r.iter().map(String::from).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((header, rows))
}

fn designs_in(rows: &[Vec<String>], col: usize) -> Vec<String> {
    let mut d: Vec<String> = rows.iter().map(|r| r[col].clone()).collect();
    d.sort();
    d.dedup();
    d
}

/// Per-file deltas `b - a` of every numeric column, rows matched on the
/// file's key columns. When each directory holds one different design, the
/// design column is left out of the key so the two designs are paired.
pub fn compare(a: &Path, b: &Path, out: &Path) -> Result<StudyOutcome> {
    let mut w = Writer::new(out)?;
    for (file, keys) in COMPARED {
        let pa = a.join(file);
        let pb = b.join(file);
        if !pa.exists() && !pb.exists() {
            continue;
        }
        let (ha, ra) = read_table(&pa)?;
        let (hb, rb) = read_table(&pb)?;
        if ha != hb {
            return Err(Error::input(format!("{file}: columns differ between {} and {}", a.display(), b.display())));
        }
        let idx = |name: &str| -> Result<usize> {
            ha.iter().position(|h| h == name).ok_or_else(|| Error::input(format!("{file}: missing column {name}")))
        };
        let dcol = idx("design")?;
        let pair_designs = designs_in(&ra, dcol) != designs_in(&rb, dcol);
        let key_cols: Vec<usize> = keys
            .iter()
            .filter(|k| !(pair_designs && **k == "design"))
            .map(|k| idx(k))
            .collect::<Result<_>>()?;
        let key = |r: &Vec<String>| -> Vec<String> { key_cols.iter().map(|&c| r[c].clone()).collect() };
        let map_b: BTreeMap<Vec<String>, &Vec<String>> = rb.iter().map(|r| (key(r), r)).collect();
        let numeric: Vec<usize> = (0..ha.len())
            .filter(|c| !key_cols.contains(c) && *c != dcol && ra.iter().chain(&rb).all(|r| r[*c].is_empty() || r[*c].parse::<f64>().is_ok()))
            .collect();
        let mut header: Vec<String> = key_cols.iter().map(|&c| ha[c].clone()).collect();
        header.extend(["design_a".to_string(), "design_b".to_string()]);
        header.extend(numeric.iter().map(|&c| format!("delta_{}", ha[c])));
        let mut rows = Vec::new();
        for r in &ra {
            let k = key(r);
            let Some(o) = map_b.get(&k) else {
                return Err(Error::input(format!("{file}: row {k:?} missing from {}", b.display())));
            };
            let mut row = k.clone();
            row.push(r[dcol].clone());
            row.push(o[dcol].clone());
            for &c in &numeric {
                let v = |s: &str| s.parse::<f64>().unwrap_or(0.0);
                row.push(fmt(v(&o[c]) - v(&r[c])));
            }
            rows.push(row);
        }
        if rows.len() != rb.len() {
            return Err(Error::input(format!("{file}: row counts differ ({} vs {})", ra.len(), rb.len())));
        }
        let h: Vec<&str> = header.iter().map(String::as_str).collect();
        w.table(&format!("delta_{file}"), &h, rows)?;
    }
    if w.files.is_empty() {
        return Err(Error::input(format!(
            "nothing to compare: neither {} nor {} holds study tables",
            a.display(),
            b.display()
        )));
    }
    w.manifest()?;
    Ok(StudyOutcome {
        files: w.files.clone(),
        failures: vec![],
    })
}

/// Input checks of a study: system invariants and, per day, forecast
/// calibration of the DA scenarios against the realisation.
#[derive(Debug, Clone, Default)]
pub struct Diagnosis {
    pub violations: Vec<String>,
    /// `(day, mean error %, min error %, max error %, mean [5, 95] width %)`.
    pub days: Vec<(usize, f64, f64, f64, f64)>,
    pub files: BTreeMap<String, String>,
}

pub fn diagnose(cfg: &StudyConfig) -> Result<Diagnosis> {
    let inputs = StudyInputs::load(cfg)?;
    let mut out = Diagnosis {
        violations: crate::system::validate_system(&inputs.system, None).iter().map(|v| v.to_string()).collect(),
        ..Diagnosis::default()
    };
    let mut w = Writer::new(&cfg.output)?;
    let mut rows = Vec::new();
    for d in 0..inputs.num_days {
        let inp = inputs.day(d, 0, 0)?;
        let hourly = inp.actual.resample(60.0)?;
        let diag = crate::scenario::forecast_diagnostics(&inp.scenarios, &hourly)?;
        for t in 0..diag.median.len() {
            rows.push(vec![
                d.to_string(),
                t.to_string(),
                fmt(diag.median[t]),
                fmt(diag.error_pct[t]),
                fmt(diag.interval_width_pct[t]),
                fmt(diag.observed_rank[t]),
            ]);
        }
        let width = diag.interval_width_pct.iter().sum::<f64>() / diag.interval_width_pct.len().max(1) as f64;
        out.days.push((d, diag.mean_error_pct, diag.min_error_pct, diag.max_error_pct, width));
    }
    w.table("diagnostics.csv", &["day", "hour", "median", "error_pct", "width_5_95_pct", "observed_rank"], rows)?;
    let v = out.violations.iter().map(|x| vec![x.clone()]).collect();
    w.table("violations.csv", &["violation"], v)?;
    w.manifest()?;
    out.files = w.files.clone();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::HighsBackend;

    fn config(dir: &Path, extra: &str) -> StudyConfig {
        let text = format!("output = \"out\"\n{extra}\n[synthetic]\nseed = 11\nweeks = 2\ndays_per_week = 1\nscenarios = 20\n");
        StudyConfig::from_toml_str(&text, dir).unwrap()
    }

    #[test]
    fn config_validation() {
        let dir = tempfile::tempdir().unwrap();
        let base = dir.path();
        assert!(StudyConfig::from_toml_str("output = \"o\"", base).is_err());
        assert!(StudyConfig::from_toml_str("output = \"o\"\nscenarios = \"missing.csv\"\nactuals = \"a.csv\"", base).is_err());
        assert!(StudyConfig::from_toml_str("output = \"o\"\nbogus = 1\n[synthetic]\nseed = 1\nweeks = 1", base).is_err());
        let c = config(base, "designs = \"fo\"");
        assert_eq!(c.designs, DesignSelection::Fo);
        assert_eq!(c.output, base.join("out"));
    }

    #[test]
    fn empty_week_list_succeeds_with_empty_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "weeks = []");
        let out = run_study(&cfg, StudyMode::Full, &HighsBackend::default()).unwrap();
        assert!(out.files.is_empty());
        let manifest = fs::read_to_string(cfg.output.join("manifest.csv")).unwrap();
        assert_eq!(manifest.trim(), "file,sha256");
    }

    #[test]
    fn out_of_range_week_is_an_input_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "weeks = [5]");
        assert!(run_study(&cfg, StudyMode::Full, &HighsBackend::default()).unwrap_err().is_input());
    }

    #[test]
    fn no_dual_backend_fails_with_log() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), "weeks = [0]\ndesigns = \"ir\"");
        let err = run_study(&cfg, StudyMode::Full, &crate::solver::MicrolpBackend::default()).unwrap_err();
        assert!(matches!(err, Error::Solve(_)));
        assert!(cfg.output.join("failure.log").exists());
        assert!(cfg.output.join("manifest.csv").exists());
    }
}
