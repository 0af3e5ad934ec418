//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so every line is printed on a normal
//! `cargo test` run; the process exits non-zero when any criterion fails.

use std::cell::Cell;
use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use chrono::NaiveDate;
use proptest::prelude::*;
use proptest::strategy::ValueTree;
use proptest::test_runner::{Config as PropConfig, TestCaseError, TestRunner};
use rayon::prelude::*;

use flexsettle::analysis::rt_cost_curves;
use flexsettle::benchmark::{asymmetric_scenarios, asymmetric_system, desk_day, desk_system};
use flexsettle::da::{build_design, compute_prices, solve_da, DaSolution, Design, FoAwards};
use flexsettle::fixtures::{fast_generator, generator, linear_forecast, system};
use flexsettle::pipeline::{clear_da, evaluate_oos, simulate_day};
use flexsettle::rt::{rollout, run_simple_rt, RtContext, RtInterval, RtMode, RtResult};
use flexsettle::scenario::{tier_probabilities, ScenarioSet};
use flexsettle::settlement::{
    aggregate_cashflows, iso_position, settle_fo_payoffs, settle_ir, settle_rt_energy, CashflowLedger, PartyClass,
    Product, Stage,
};
use flexsettle::solver::{HighsBackend, SolveOptions, SolverBackend, SolverError, VarKind};
use flexsettle::study::{run_study, StudyConfig, StudyMode};
use flexsettle::system::{Constituent, Direction, MarketConfig, ProbabilityRule, SystemModel};

const FO_POSITION_TOL: f64 = 1e-6;
const RECOVERY_TOL: f64 = 1e-9;
const HEDGE_TOL_MW: f64 = 1e-4;
const BRUTE_FORCE_TOL: f64 = 1e-6;
const INVARIANCE_VAR_TOL: f64 = 1e-9;
const SIMPLE_RT_TOL: f64 = 1e-6;
const COST_BAND: f64 = 0.005;
const DESK_DAYS: usize = 50;
const DESK_BUDGET: Duration = Duration::from_secs(600);
const ASYM_BUDGET: Duration = Duration::from_secs(900);

type Check = Result<String, String>;

/// Runtime targets are reported, not part of a criterion's pass condition.
static RUNTIME_MISSES: AtomicUsize = AtomicUsize::new(0);

fn runtime_note(elapsed: Duration, target: Duration) -> String {
    let secs = elapsed.as_secs_f64();
    if elapsed <= target {
        format!("{secs:.0}s (target {}s met)", target.as_secs())
    } else {
        RUNTIME_MISSES.fetch_add(1, Ordering::Relaxed);
        format!("{secs:.0}s (runtime target {}s MISSED)", target.as_secs())
    }
}

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn start() -> chrono::NaiveDateTime {
    NaiveDate::from_ymd_opt(2030, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap()
}

fn load_path(resolution: f64, load: Vec<f64>) -> ScenarioSet {
    ScenarioSet::new(resolution, start(), BTreeMap::from([(Constituent::Load, vec![load])])).unwrap()
}

fn tight(mut s: SystemModel) -> SystemModel {
    s.market.mip_gap = 1e-9;
    s
}

/// Largest |hedge residual| over buyers, levels and hours.
fn max_hedge_residual(sol: &DaSolution) -> f64 {
    let fo = sol.fo.as_ref().expect("FO solution");
    let mut worst = 0.0f64;
    for (b, &acc) in fo.buyer_account.iter().enumerate() {
        for s in 0..fo.levels[b].len() {
            for t in 0..sol.hours {
                worst = worst.max(fo.hedge_residual(b, s, t, sol.pda[acc][t]).abs());
            }
        }
    }
    worst
}

/// Sum of |amount| over non-operator FO entries of one stage.
fn fo_gross(ledger: &CashflowLedger, stage: Option<Stage>) -> f64 {
    ledger
        .entries
        .iter()
        .filter(|e| e.class != PartyClass::Iso)
        .filter(|e| matches!(e.product, Product::FoUp | Product::FoDown))
        .filter(|e| stage.is_none_or(|s| e.stage == s))
        .map(|e| e.amount.abs())
        .sum()
}

/// 1: the operator's FO position nets to zero on randomized desk days.
fn fo_revenue_adequacy(residuals: &mut Vec<f64>) -> Check {
    let sys = desk_system();
    let backend = HighsBackend::default();
    let t0 = Instant::now();
    let runs: Vec<Result<(f64, f64, f64, f64), String>> = (0..DESK_DAYS)
        .into_par_iter()
        .map(|d| {
            let day = desk_day(9000 + d as u64, d, 50, &sys.market).map_err(|e| format!("day {d}: {e}"))?;
            let run = simulate_day(&sys, &day.scenarios, &day.actual, Design::Fo, RtMode::Full, d, &backend)
                .map_err(|e| format!("day {d}: {e}"))?;
            let pos = iso_position(&run.ledger).map_err(|e| format!("day {d}: {e}"))?;
            let mut worst = 0.0f64;
            for stage in [Stage::Da, Stage::Rt] {
                let net = pos.get(stage, Product::FoUp) + pos.get(stage, Product::FoDown);
                worst = worst.max(net.abs() / fo_gross(&run.ledger, Some(stage)).max(1.0));
            }
            worst = worst.max(pos.fo_total().abs() / fo_gross(&run.ledger, None).max(1.0));
            let exercised: f64 = run.exercises.iter().map(|e| e.exercised).sum();
            Ok((worst, max_hedge_residual(&run.da.solution), fo_gross(&run.ledger, None), exercised))
        })
        .collect();
    let elapsed = t0.elapsed();
    let mut worst = 0.0f64;
    let mut gross = 0.0;
    let mut exercised = 0.0;
    for r in runs {
        let (w, h, g, x) = r?;
        worst = worst.max(w);
        residuals.push(h);
        gross += g;
        exercised += x;
    }
    ensure(gross > 0.0, || "no FO cashflow on any day".into())?;
    ensure(worst <= FO_POSITION_TOL, || format!("relative FO position {worst:.3e}"))?;
    Ok(format!(
        "{DESK_DAYS} days, max relative FO position {worst:.2e}, FO gross ${gross:.0}, {exercised:.0} MW exercised, {}",
        runtime_note(elapsed, DESK_BUDGET)
    ))
}

/// Solved IR day on one unit whose reserve capability is scarce.
fn ir_instance(p_min: f64, up_only: bool) -> (SystemModel, DaSolution, flexsettle::da::DaPrices) {
    let mut g = generator("g", p_min, &[(60.0, 20.0)]);
    g.ramp_rate = 60.0;
    g.initially_on = true;
    let mut sys = tight(system("ir", vec![g]));
    if up_only {
        sys.reserve_products.retain(|p| p.direction == Direction::Up);
    }
    let forecast = linear_forecast(&[50.0, 50.0], 50.0);
    let backend = HighsBackend::default();
    let p = build_design(&sys, &forecast, Design::Ir).unwrap();
    let sol = solve_da(&p, &sys.market, &backend).unwrap();
    let prices = compute_prices(&p, &sol, &backend).unwrap();
    (sys, sol, prices)
}

/// 2: IR costs are at most recovered, fully only when the cap binds.
fn ir_under_recovery() -> Check {
    let iph = MarketConfig::default().rt_intervals_per_hour();
    let res = 60.0 / iph as f64;
    let worst_over = Cell::new(f64::NEG_INFINITY);
    let ratio = |sys: &SystemModel, sol: &DaSolution, pr: &flexsettle::da::DaPrices, path: Vec<f64>| {
        let l = settle_ir(sys, sol, pr, iph, &load_path(res, path), 0).map_err(|e| e.to_string())?;
        let pos = iso_position(&l).map_err(|e| e.to_string())?;
        let da = -(pos.get(Stage::Da, Product::IrUp) + pos.get(Stage::Da, Product::IrDown));
        let rt = pos.get(Stage::Rt, Product::IrUp) + pos.get(Stage::Rt, Product::IrDown);
        worst_over.set(worst_over.get().max(rt - da));
        pos.ir_recovery_ratio.ok_or_else(|| "no DA IR cost".to_string())
    };

    let (sys, sol, pr) = ir_instance(0.0, true);
    ensure(pr.ir_product[0].iter().all(|&x| x > 0.0), || format!("cap instance unpriced: {:?}", pr.ir_product))?;
    let award = (0..2).map(|t| sol.ir[0].total(t)).fold(0.0, f64::max);
    let short = vec![50.0 + award + 5.0; 2 * iph];
    let cap = ratio(&sys, &sol, &pr, short)?;

    let (sys2, sol2, pr2) = ir_instance(40.0, false);
    ensure(pr2.ir_product.iter().all(|row| row.iter().all(|&x| x > 0.0)), || {
        format!("symmetric instance unpriced: {:?}", pr2.ir_product)
    })?;
    let swing = (0..2)
        .flat_map(|t| sol2.ir.iter().map(move |a| (a, t)))
        .map(|(a, t)| a.total(t))
        .fold(0.0, f64::max)
        + 5.0;
    let alternating: Vec<f64> = (0..2 * iph).map(|k| if k % 2 == 0 { 50.0 + swing } else { 50.0 - swing }).collect();
    let sym = ratio(&sys2, &sol2, &pr2, alternating)?;

    let mut runner = TestRunner::new(PropConfig { cases: 64, failure_persistence: None, ..PropConfig::default() });
    let paths = proptest::collection::vec(-30.0f64..30.0, 2 * iph);
    for (s, so, p) in [(&sys, &sol, &pr), (&sys2, &sol2, &pr2)] {
        runner
            .run(&paths, |errs| {
                let path = errs.iter().map(|e| 50.0 + e).collect();
                ratio(s, so, p, path).map_err(TestCaseError::fail)?;
                Ok(())
            })
            .map_err(|e| format!("random paths: {e}"))?;
    }

    ensure((cap - 1.0).abs() <= RECOVERY_TOL, || format!("cap-binding ratio {cap}"))?;
    ensure(sym < 1.0, || format!("symmetric ratio {sym}"))?;
    let worst_over = worst_over.get();
    ensure(worst_over <= 1e-9, || format!("recovery exceeded DA cost by {worst_over}"))?;
    Ok(format!(
        "cap-binding ratio {cap:.12}, symmetric ratio {sym:.4}, max RT-DA excess {worst_over:.2e} over 130 runs"
    ))
}

/// Small FO instance: up to two sellers, one aggregate buyer, three levels.
fn small_fo(costs: (f64, f64), fast: bool) -> SystemModel {
    let mut a = generator("a", 10.0, &[(40.0, costs.0), (30.0, costs.0 + 8.0)]);
    a.no_load_cost = 40.0;
    a.startup_cost = 150.0;
    a.ramp_rate = 35.0;
    let mut b = if fast {
        fast_generator("b", 5.0, &[(40.0, costs.1)])
    } else {
        generator("b", 5.0, &[(40.0, costs.1)])
    };
    b.no_load_cost = 15.0;
    b.startup_cost = 60.0;
    let mut sys = tight(system("small", vec![a, b]));
    sys.market.tier_percentiles = vec![10.0, 50.0, 90.0];
    sys
}

/// Minimum over every integer assignment of the LP with integers fixed.
fn enumerate(model: &flexsettle::solver::LinearModel, backend: &dyn SolverBackend) -> Result<f64, String> {
    let ints: Vec<usize> = model
        .vars()
        .iter()
        .enumerate()
        .filter(|(_, v)| v.kind != VarKind::Continuous)
        .map(|(i, _)| i)
        .collect();
    if ints.len() > 14 {
        return Err(format!("{} integer variables", ints.len()));
    }
    let opts = SolveOptions {
        mip_gap: 0.0,
        ..SolveOptions::default()
    };
    let mut best = f64::INFINITY;
    for mask in 0u32..(1 << ints.len()) {
        let mut values = vec![0.0; model.num_vars()];
        for (bit, &i) in ints.iter().enumerate() {
            values[i] = f64::from((mask >> bit) & 1);
        }
        match backend.solve_raw(&model.fix_integers(&values), &opts) {
            Ok(sol) => best = best.min(model.evaluate_objective(&sol.values)),
            Err(SolverError::Infeasible { .. }) => {}
            Err(e) => return Err(e.to_string()),
        }
    }
    Ok(best)
}

/// 3 and 4 share the random small-instance corpus.
fn small_corpus() -> Vec<((f64, f64), Vec<f64>, f64, bool)> {
    let mut runner = TestRunner::deterministic();
    let strat = (
        (15.0f64..40.0, 25.0f64..70.0),
        proptest::collection::vec(30.0f64..100.0, 1..=2),
        0.0f64..25.0,
        any::<bool>(),
    );
    (0..24).map(|_| strat.new_tree(&mut runner).unwrap().current()).collect()
}

/// 3: the hedging identity holds at every DA optimum.
fn hedging_identity(desk: &[f64]) -> Check {
    let backend = HighsBackend::default();
    let mut worst = desk.iter().copied().fold(0.0, f64::max);
    let corpus = small_corpus();
    for (costs, demand, spread, fast) in &corpus {
        let sys = small_fo(*costs, *fast);
        let p = build_design(&sys, &linear_forecast(demand, *spread), Design::Fo).map_err(|e| e.to_string())?;
        let sol = solve_da(&p, &sys.market, &backend).map_err(|e| e.to_string())?;
        worst = worst.max(max_hedge_residual(&sol));
    }
    ensure(!desk.is_empty(), || "no desk days to check".into())?;
    ensure(worst <= HEDGE_TOL_MW, || format!("residual {worst:.3e} MW"))?;
    Ok(format!(
        "max residual {worst:.2e} MW over {} desk days and {} small instances",
        desk.len(),
        corpus.len()
    ))
}

/// 4: the MILP optimum equals exhaustive commitment enumeration.
fn brute_force_equivalence() -> Check {
    let backend = HighsBackend::default();
    let mut worst = 0.0f64;
    let corpus = small_corpus();
    for (costs, demand, spread, fast) in &corpus {
        let sys = small_fo(*costs, *fast);
        let p = build_design(&sys, &linear_forecast(demand, *spread), Design::Fo).map_err(|e| e.to_string())?;
        ensure(p.fo.as_ref().is_some_and(|f| f.tiers.num_levels() == 3 && f.buyers.len() == 1), || {
            "instance is not one buyer with three levels".into()
        })?;
        let milp = solve_da(&p, &sys.market, &backend).map_err(|e| e.to_string())?;
        let oracle = enumerate(&p.model, &backend)?;
        let rel = (milp.objective - oracle).abs() / oracle.abs().max(1.0);
        ensure(rel <= BRUTE_FORCE_TOL, || format!("milp {} vs enumeration {oracle} ({demand:?}, fast {fast})", milp.objective))?;
        worst = worst.max(rel);
    }
    Ok(format!("{} instances, max relative gap {worst:.2e}", corpus.len()))
}

fn hand_da(sys: &SystemModel, p: f64, pda: f64) -> DaSolution {
    DaSolution {
        design: Design::Fo,
        hours: 1,
        objective: 0.0,
        mip_gap: 0.0,
        optimal: true,
        backend: "hand".into(),
        values: vec![],
        generator_ids: sys.generators.iter().map(|g| g.id.clone()).collect(),
        p: vec![vec![p]],
        u: vec![vec![1.0]],
        start: vec![vec![0.0]],
        account_ids: vec!["load".into()],
        account_constituents: vec![Constituent::Load],
        pda: vec![vec![pda]],
        shortfall: vec![0.0],
        surplus: vec![0.0],
        ir: vec![],
        fo: None,
        cost_breakdown: BTreeMap::new(),
    }
}

fn one_interval(p: f64, lambda: f64) -> RtResult {
    RtResult {
        mode: RtMode::Restricted,
        intervals: vec![RtInterval {
            interval: 0,
            hour: 0,
            p: vec![p],
            inc: vec![0.0],
            dec: vec![0.0],
            spin: vec![0.0],
            lambda: Some(lambda),
            shortage: 0.0,
            surplus: 0.0,
            spin_shortfall: 0.0,
            energy_cost: 0.0,
            shortage_cost: 0.0,
            surplus_cost: 0.0,
            spin_cost: 0.0,
            balance_residual: 0.0,
        }],
        commitment: vec![],
        commitment_cost: 0.0,
        released_up: vec![],
        released_down: vec![],
    }
}

fn variance(xs: &[f64]) -> f64 {
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64
}

/// 5: a fully hedged buyer pays the strike whatever the RT price.
fn hedge_invariance() -> Check {
    let (c_up, c_dn) = (50.0, 10.0);
    let sys = system("hedge", vec![generator("g", 0.0, &[(200.0, 30.0)])]);
    let mut sol = hand_da(&sys, 100.0, -100.0);
    let held = 20.0;
    sol.fo = Some(FoAwards {
        seller_gen: vec![0],
        strike_up: vec![c_up],
        strike_down: vec![c_dn],
        hs_up: vec![vec![vec![held], vec![0.0]]],
        hs_dn: vec![vec![vec![0.0], vec![held]]],
        u_rt: vec![vec![vec![0.0], vec![0.0]]],
        buyer_account: vec![0],
        levels: vec![vec![vec![-120.0], vec![-100.0], vec![-80.0]]],
        hd_up: vec![vec![vec![held], vec![0.0]]],
        hd_dn: vec![vec![vec![0.0], vec![held]]],
        sd_up: vec![vec![vec![0.0], vec![0.0]]],
        sd_dn: vec![vec![vec![0.0], vec![0.0]]],
        y: vec![vec![vec![0.0]; 3]],
        prob_up: vec![0.25, 0.5],
        prob_down: vec![0.5, 0.25],
    });
    let per_mw = |load: f64, lambda: f64| -> Result<f64, String> {
        let actual = load_path(60.0, vec![load]);
        let res = one_interval(load, lambda);
        let pay = settle_fo_payoffs(&sys, &sol, &res, &actual, 0).map_err(|e| e.to_string())?;
        let imb = settle_rt_energy(&sys, &sol, &res, &actual, 0).map_err(|e| e.to_string())?;
        let cash = pay.ledger.party_total("load") + imb.party_total("load");
        Ok(-cash / (load - 100.0).abs())
    };
    let ups = [60.0, 120.0, 900.0, 2500.0, 4500.0]
        .iter()
        .map(|&l| per_mw(115.0, l))
        .collect::<Result<Vec<_>, _>>()?;
    let downs = [-20.0, 0.0, 2.0, 5.0, 9.5]
        .iter()
        .map(|&l| per_mw(88.0, l))
        .collect::<Result<Vec<_>, _>>()?;
    let (vu, vd) = (variance(&ups), variance(&downs));
    ensure(ups.iter().all(|c| (c - c_up).abs() <= 1e-9), || format!("up costs {ups:?}"))?;
    ensure(downs.iter().all(|c| (c + c_dn).abs() <= 1e-9), || format!("down costs {downs:?}"))?;
    ensure(vu <= INVARIANCE_VAR_TOL && vd <= INVARIANCE_VAR_TOL, || format!("variances {vu:e} {vd:e}"))?;
    Ok(format!("up ${:.6}/MW (var {vu:.1e}), down ${:.6}/MW (var {vd:.1e}) over 5 prices each", ups[0], downs[0]))
}

/// 6: the simplified balancing model reproduces the restricted rollout.
fn simple_rt_agreement() -> Check {
    let mut a = generator("a", 20.0, &[(80.0, 20.0), (40.0, 30.0)]);
    a.initially_on = true;
    let mut b = generator("b", 10.0, &[(30.0, 45.0), (30.0, 55.0)]);
    b.initially_on = true;
    let sys = system("agree", vec![a, b]);
    let backend = HighsBackend::default();
    let iph = sys.market.rt_intervals_per_hour();
    let median = [100.0, 120.0];
    let mut runner = TestRunner::new(PropConfig { cases: 16, failure_persistence: None, ..PropConfig::default() });
    let worst = Cell::new(0.0f64);
    let count = Cell::new(0);
    for design in [Design::Ir, Design::Fo] {
        let p = build_design(&sys, &linear_forecast(&median, 20.0), design).map_err(|e| e.to_string())?;
        let da = solve_da(&p, &sys.market, &backend).map_err(|e| e.to_string())?;
        runner
            .run(&proptest::collection::vec(-40.0f64..40.0, 2 * iph), |errs| {
                let path: Vec<f64> = errs.iter().enumerate().map(|(k, e)| median[k / iph] + e).collect();
                let ctx = RtContext::new(&sys, &da, &path, RtMode::Restricted).unwrap();
                let rtd = rollout(&ctx, &backend).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let set = load_path(60.0 / iph as f64, path.clone());
                let simple = run_simple_rt(&da, &set, &sys, &backend).map_err(|e| TestCaseError::fail(e.to_string()))?;
                let (r, s) = (rtd.total_cost(), simple[0].total_cost);
                let rel = (r - s).abs() / r.abs().max(1.0);
                worst.set(worst.get().max(rel));
                count.set(count.get() + 1);
                prop_assert!(rel <= SIMPLE_RT_TOL, "{design:?}: rollout {r} simple {s}");
                Ok(())
            })
            .map_err(|e| e.to_string())?;
    }
    Ok(format!(
        "{} paths over IR and FO schedules, max relative difference {:.2e}",
        count.get(),
        worst.get()
    ))
}

/// 7: default tiers give the deepest up probability and its scarcity value.
fn probability_arithmetic() -> Check {
    let cfg = MarketConfig::default();
    let (up, _) = tier_probabilities(&cfg.tier_percentiles, ProbabilityRule::FullCrossing);
    ensure(up[0] == 0.05, || format!("deepest up probability {}", up[0]))?;
    let sys = desk_system();
    let day = desk_day(1, 0, 20, &sys.market).map_err(|e| e.to_string())?;
    let forecast = flexsettle::scenario::DaForecast::from_scenarios(&day.scenarios).map_err(|e| e.to_string())?;
    let p = build_design(&sys, &forecast, Design::Fo).map_err(|e| e.to_string())?;
    let fo = p.fo.as_ref().ok_or("no FO block")?;
    let prob = fo.tiers.deepest_up_probability();
    let vc = fo.buyers[0].vc_up;
    ensure(prob == 0.05, || format!("built tiers give {prob}"))?;
    ensure(vc == 225.0, || format!("VC up {vc}"))?;
    Ok(format!("deepest up probability {prob}, VC up ${vc}/MWh at scarcity ${}", cfg.rt_spin_scarcity))
}

/// 8: the reported cashflow sums come out of ledgers built from their parts.
fn cashflow_identities() -> Check {
    // Two days whose means are the reported components, in dollars.
    let mut sellers = CashflowLedger::new();
    let mut imbalance = CashflowLedger::new();
    for (day, (ir_up, rt_energy, rt_ir)) in [(100_000.0, 350_000.0, -200_000.0), (180_000.0, 230_000.0, -380_000.0)]
        .into_iter()
        .enumerate()
    {
        let mut s = CashflowLedger::new();
        s.post("flex", PartyClass::Seller, Stage::Da, Product::IrUp, 0, ir_up);
        s.post("flex", PartyClass::Seller, Stage::Rt, Product::Energy, 0, rt_energy);
        sellers.append_day(s, day);
        let mut u = CashflowLedger::new();
        u.post("load", PartyClass::Load, Stage::Rt, Product::Energy, 0, -rt_energy);
        u.post("load", PartyClass::Load, Stage::Rt, Product::IrUp, 0, rt_ir);
        imbalance.append_day(u, day);
    }
    let rtc = BTreeMap::from([(0, 250_000.0), (1, 250_000.0)]);
    let flex = aggregate_cashflows(&sellers, PartyClass::Seller, &rtc);
    let unc = aggregate_cashflows(&imbalance, PartyClass::Load, &BTreeMap::new());
    let m = 1e6;
    let got = (
        flex.component_stats(Stage::Da, Product::IrUp).0 / m,
        flex.component_stats(Stage::Rt, Product::Energy).0 / m,
        flex.total_stats().0 / m,
        flex.margin_stats().0 / m,
    );
    ensure(got == (0.14, 0.29, 0.43, 0.18), || format!("flexible sellers {got:?}"))?;
    let got2 = (
        unc.component_stats(Stage::Rt, Product::Energy).0 / m,
        unc.component_stats(Stage::Rt, Product::IrUp).0 / m,
        unc.total_stats().0 / m,
    );
    ensure(got2 == (-0.29, -0.29, -0.58), || format!("imbalance parties {got2:?}"))?;
    ensure(sellers.audit(0.0).is_empty() && imbalance.audit(0.0).is_empty(), || "ledger audit".into())?;
    Ok("0.14 + 0.29 = 0.43 (margin 0.18), -0.29 - 0.29 = -0.58".into())
}

/// 9: FO is no costlier than IR on the asymmetric instance, with a flatter
/// upward cost curve.
fn directional_comparison() -> Check {
    let sys = asymmetric_system();
    let backend = HighsBackend::default();
    let t0 = Instant::now();
    let da_set = asymmetric_scenarios(60.0, 200, 1).map_err(|e| e.to_string())?;
    let oos = asymmetric_scenarios(sys.market.rt_resolution, 200, 2).map_err(|e| e.to_string())?;
    let mut out = BTreeMap::new();
    for design in [Design::Ir, Design::Fo] {
        let da = clear_da(&sys, &da_set, design, 0, &backend).map_err(|e| e.to_string())?;
        let o = evaluate_oos(&sys, &da, &oos, "asymmetric", &backend).map_err(|e| e.to_string())?;
        let (up, _) = rt_cost_curves(&o.points).map_err(|e| e.to_string())?;
        out.insert(design, (o.cost.total, o.cost.da_cost, up.slope));
    }
    let elapsed = t0.elapsed();
    let (ir, fo) = (out[&Design::Ir], out[&Design::Fo]);
    let band = COST_BAND * ir.1.max(fo.1);
    ensure(fo.0 <= ir.0 + band, || format!("FO {:.1} > IR {:.1} + {band:.1}", fo.0, ir.0))?;
    ensure(fo.2 <= ir.2, || format!("FO slope {:.3} > IR slope {:.3}", fo.2, ir.2))?;
    Ok(format!(
        "expected cost FO {:.1} vs IR {:.1} (band {band:.1}), up slope FO {:.2} vs IR {:.2}, {}",
        fo.0,
        ir.0,
        fo.2,
        ir.2,
        runtime_note(elapsed, ASYM_BUDGET)
    ))
}

/// 10: the same config, seeds and backend give the same output checksums.
fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let backend = HighsBackend::default();
    let mut manifests = Vec::new();
    for run in ["a", "b"] {
        let text = format!(
            "output = \"{run}\"\noos_scenarios = 8\noos_seed = 3\n\n[synthetic]\nseed = 11\nweeks = 2\ndays_per_week = 1\nscenarios = 20\n"
        );
        let cfg = StudyConfig::from_toml_str(&text, dir.path()).map_err(|e| e.to_string())?;
        let out = run_study(&cfg, StudyMode::Full, &backend).map_err(|e| e.to_string())?;
        let manifest = std::fs::read(dir.path().join(run).join("manifest.csv")).map_err(|e| e.to_string())?;
        manifests.push((out.files, manifest));
    }
    ensure(manifests[0].0.len() > 5, || format!("only {} files", manifests[0].0.len()))?;
    ensure(manifests[0] == manifests[1], || {
        let diff: Vec<&String> = manifests[0]
            .0
            .iter()
            .filter(|(k, v)| manifests[1].0.get(*k) != Some(v))
            .map(|(k, _)| k)
            .collect();
        format!("checksums differ: {diff:?}")
    })?;
    Ok(format!("{} files with identical sha256 across two runs", manifests[0].0.len()))
}

fn main() {
    // Numeric arguments select criteria; other libtest-style arguments
    // (filters, --nocapture) are ignored.
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let selected = |n: usize| only.is_empty() || only.contains(&n);
    let mut desk_residuals = Vec::new();
    let mut failed = 0;
    let mut ran = 0;
    let mut report = |n: usize, name: &str, r: std::thread::Result<Check>| {
        ran += 1;
        let line = match r {
            Ok(Ok(detail)) => format!("criterion {n:>2} PASS  {name}: {detail}"),
            Ok(Err(why)) => {
                failed += 1;
                format!("criterion {n:>2} FAIL  {name}: {why}")
            }
            Err(_) => {
                failed += 1;
                format!("criterion {n:>2} FAIL  {name}: panicked")
            }
        };
        println!("{line}");
    };
    if selected(1) || selected(3) {
        let r = catch_unwind(AssertUnwindSafe(|| fo_revenue_adequacy(&mut desk_residuals)));
        if selected(1) {
            report(1, "FO revenue adequacy", r);
        }
    }
    let rest: Vec<(usize, &str, Box<dyn FnOnce() -> Check + '_>)> = vec![
        (2, "IR under-recovery", Box::new(ir_under_recovery)),
        (3, "hedging identity", Box::new(|| hedging_identity(&desk_residuals))),
        (4, "brute-force equivalence", Box::new(brute_force_equivalence)),
        (5, "hedge invariance", Box::new(hedge_invariance)),
        (6, "simple RT agreement", Box::new(simple_rt_agreement)),
        (7, "probability arithmetic", Box::new(probability_arithmetic)),
        (8, "cashflow identities", Box::new(cashflow_identities)),
        (9, "directional cost comparison", Box::new(directional_comparison)),
        (10, "determinism", Box::new(determinism)),
    ];
    for (n, name, f) in rest {
        if selected(n) {
            report(n, name, catch_unwind(AssertUnwindSafe(f)));
        }
    }
    println!(
        "acceptance: {} passed, {failed} failed, {} runtime target(s) missed",
        ran - failed,
        RUNTIME_MISSES.load(Ordering::Relaxed)
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
