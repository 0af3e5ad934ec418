//! One simulated day of a design: DA clearing and pricing, RT rollout
//! against the realisation, settlement, and the out-of-sample evaluator.

use serde::Serialize;

use crate::analysis::{rollout_points, simple_rt_points, CostReport};
use crate::da::{build_design, compute_prices, solve_da, DaPrices, DaSolution, Design};
use crate::error::{Error, Result};
use crate::rt::{rollout, run_simple_rt, RtContext, RtMode, RtResult, SimpleRtResult};
use crate::scenario::{DaForecast, ScenarioSet};
use crate::settlement::{
    settle_da_energy, settle_fo_payoffs, settle_fo_premiums, settle_ir, settle_rt_energy, CashflowLedger,
    ExerciseRecord,
};
use crate::solver::SolverBackend;
use crate::system::SystemModel;

/// DA outcome of one design on one day.
#[derive(Debug, Clone)]
pub struct DaDay {
    pub day: usize,
    pub forecast: DaForecast,
    pub solution: DaSolution,
    pub notes: Vec<String>,
}

pub fn clear_da(system: &SystemModel, scenarios: &ScenarioSet, design: Design, day: usize, backend: &dyn SolverBackend) -> Result<DaDay> {
    let forecast = DaForecast::from_scenarios(scenarios)?;
    if forecast.hours() != system.market.da_hours {
        return Err(Error::input(format!(
            "day {day}: forecast has {} hours, the market clears {}",
            forecast.hours(),
            system.market.da_hours
        )));
    }
    let problem = build_design(system, &forecast, design)?;
    let solution = solve_da(&problem, &system.market, backend)?;
    Ok(DaDay {
        day,
        notes: problem.notes.clone(),
        forecast,
        solution,
    })
}

/// Full two-settlement outcome of one design on one day.
#[derive(Debug, Clone)]
pub struct DayRun {
    pub day: usize,
    pub da: DaDay,
    pub prices: DaPrices,
    pub rt: RtResult,
    pub ledger: CashflowLedger,
    pub exercises: Vec<ExerciseRecord>,
    pub flags: Vec<String>,
    pub cost: CostReport,
    /// `(net-load error, RT cost)` per RTD interval.
    pub points: Vec<(f64, f64)>,
}

/// Realised net load of scenario 0, per interval.
pub fn net_load_path(actual: &ScenarioSet) -> Vec<f64> {
    (0..actual.num_intervals()).map(|k| actual.net_load(0, k)).collect()
}

/// Clears DA on `scenarios`, rolls RT forward on `actual` (scenario 0 at
/// RT resolution) and settles every product; ledger entries carry `day`.
pub fn simulate_day(
    system: &SystemModel,
    scenarios: &ScenarioSet,
    actual: &ScenarioSet,
    design: Design,
    mode: RtMode,
    day: usize,
    backend: &dyn SolverBackend,
) -> Result<DayRun> {
    if !backend.provides_duals() {
        return Err(Error::input(format!(
            "backend {} gives no duals; settlement needs DA and RT prices",
            backend.name()
        )));
    }
    let da = clear_da(system, scenarios, design, day, backend)?;
    let sol = &da.solution;
    let problem = build_design(system, &da.forecast, design)?;
    let prices = compute_prices(&problem, sol, backend)?;
    let path = net_load_path(actual);
    let ctx = RtContext::new(system, sol, &path, mode)?;
    let rt = rollout(&ctx, backend)?;

    let mut ledger = settle_da_energy(system, sol, &prices);
    ledger.extend(settle_rt_energy(system, sol, &rt, actual, 0)?);
    let mut exercises = Vec::new();
    let mut flags = Vec::new();
    match design {
        Design::Fo => {
            ledger.extend(settle_fo_premiums(system, sol, &prices));
            let pay = settle_fo_payoffs(system, sol, &rt, actual, 0)?;
            ledger.extend(pay.ledger);
            exercises = pay.records;
            flags = pay.flags;
        }
        Design::Ir => {
            ledger.extend(settle_ir(system, sol, &prices, system.market.rt_intervals_per_hour(), actual, 0)?);
        }
        Design::Base => {}
    }
    let mut stamped = CashflowLedger::new();
    stamped.append_day(ledger, day);
    let cost = CostReport::from_rollout(day, digest(scenarios, actual), sol, &rt);
    let points = rollout_points(sol, &rt, &path);
    Ok(DayRun {
        day,
        da,
        prices,
        rt,
        ledger: stamped,
        exercises,
        flags,
        cost,
        points,
    })
}

/// Short fingerprint of the inputs a day was simulated on.
pub fn digest(scenarios: &ScenarioSet, actual: &ScenarioSet) -> String {
    use sha2::{Digest, Sha256};
    let mut h = Sha256::new();
    for set in [scenarios, actual] {
        h.update(set.resolution.to_le_bytes());
        h.update(set.start.to_string().as_bytes());
        for (c, m) in &set.series {
            h.update(c.as_str().as_bytes());
            for v in m.iter().flatten() {
                h.update(v.to_le_bytes());
            }
        }
    }
    let out = h.finalize();
    out.iter().take(8).map(|b| format!("{b:02x}")).collect()
}

/// Simple-model costs of one DA outcome over out-of-sample realisations.
#[derive(Debug, Clone)]
pub struct OosDay {
    pub day: usize,
    pub results: Vec<SimpleRtResult>,
    pub cost: CostReport,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Serialize)]
pub struct OosRow {
    pub design: Design,
    pub day: usize,
    pub scenario: usize,
    pub energy_cost: f64,
    pub penalty_cost: f64,
    pub commitment_cost: f64,
    pub total_cost: f64,
}

pub fn evaluate_oos(system: &SystemModel, da: &DaDay, realisations: &ScenarioSet, label: &str, backend: &dyn SolverBackend) -> Result<OosDay> {
    let results = run_simple_rt(&da.solution, realisations, system, backend)?;
    let strikes = system.seller_params()?;
    let points = results.iter().flat_map(|r| simple_rt_points(r, &strikes, &system.market)).collect();
    let cost = CostReport::from_simple(da.day, label, &da.solution, &results);
    Ok(OosDay {
        day: da.day,
        results,
        cost,
        points,
    })
}

impl OosDay {
    pub fn rows(&self, design: Design) -> Vec<OosRow> {
        self.results
            .iter()
            .map(|r| OosRow {
                design,
                day: self.day,
                scenario: r.scenario,
                energy_cost: r.energy_cost,
                penalty_cost: r.penalty_cost,
                commitment_cost: r.commitment_cost,
                total_cost: r.total_cost,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::benchmark::{desk_day, desk_system};
    use crate::settlement::iso_position;
    use crate::solver::HighsBackend;
    use std::time::Instant;

    #[test]
    #[ignore = "timing probe for the desk benchmark"]
    fn desk_day_timing() {
        let sys = desk_system();
        let day = desk_day(1, 0, 50, &sys.market).unwrap();
        for design in [Design::Ir, Design::Fo] {
            let t = Instant::now();
            let run = simulate_day(&sys, &day.scenarios, &day.actual, design, RtMode::Full, 0, &HighsBackend::default()).unwrap();
            let pos = iso_position(&run.ledger).unwrap();
            eprintln!(
                "{design:?}: {:.1}s da {:.0} rt {:.0} scarcity {:.0} iso {:.2} fo {:.2e}",
                t.elapsed().as_secs_f64(),
                run.cost.da_cost,
                run.cost.rt_incremental,
                run.cost.rt_scarcity,
                pos.total,
                pos.fo_total()
            );
        }
    }

    #[test]
    #[ignore = "probe for the asymmetric instance"]
    fn asymmetric_probe() {
        use crate::analysis::rt_cost_curves;
        use crate::benchmark::{asymmetric_scenarios, asymmetric_system};
        let sys = asymmetric_system();
        let backend = HighsBackend::default();
        let da_set = asymmetric_scenarios(60.0, 200, 1).unwrap();
        let oos = asymmetric_scenarios(sys.market.rt_resolution, 200, 2).unwrap();
        for design in [Design::Ir, Design::Fo] {
            let da = clear_da(&sys, &da_set, design, 0, &backend).unwrap();
            let o = evaluate_oos(&sys, &da, &oos, "x", &backend).unwrap();
            let (p, n) = rt_cost_curves(&o.points).unwrap();
            let s = &da.solution;
            eprintln!(
                "{design:?}: da {:.1} rt {:.1} pen {:.1} total {:.1} slope+ {:.2} slope- {:.2}",
                o.cost.da_cost, o.cost.rt_incremental, o.cost.rt_scarcity, o.cost.total, p.slope, n.slope
            );
            for t in 0..s.hours {
                eprintln!(
                    "  t{t} p {:?} u {:?} nl {:.1} up {:.1} dn {:.1}",
                    s.p.iter().map(|r| (r[t] * 10.0).round() / 10.0).collect::<Vec<_>>(),
                    s.u.iter().map(|r| r[t].round()).collect::<Vec<_>>(),
                    s.scheduled_net_load(t),
                    (0..3).map(|i| s.flex_up(i, t)).sum::<f64>(),
                    (0..3).map(|i| s.flex_down(i, t)).sum::<f64>(),
                );
            }
        }
    }
}
