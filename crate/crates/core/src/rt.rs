//! Real-time rollout: hour-ahead commitment of fast units (RTC) and
//! interval-by-interval economic dispatch (RTD), plus the simplified
//! balancing model used for large out-of-sample sweeps.
//!
//! RT offers are incremental: every unit sells increments above its DA
//! schedule at its up strike and buys back decrements at its down strike.
//! All capacity held for flexibility in DA is released; nothing in RT
//! enforces a holding.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::da::DaSolution;
use crate::error::{Error, Result};
use crate::scenario::ScenarioSet;
use crate::solver::{LinearModel, RowId, RowSense, SolveOptions, SolverBackend, VarId};
use crate::system::{FlexSellerParams, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RtMode {
    /// Every online unit may be re-dispatched within its physical limits.
    Full,
    /// Only DA flexibility awards may be deployed, without ramp or reserve
    /// limits; only offline award holders may be started.
    Restricted,
}

/// Commitment and dispatch carried from one RT step to the next.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtState {
    /// `[generator][hour]`: DA status, overwritten by RTC for fast units.
    pub u: Vec<Vec<bool>>,
    /// Dispatch and status in the interval before the next one to run.
    pub p_prev: Vec<f64>,
    pub u_prev: Vec<bool>,
    pub next_interval: usize,
    /// Hours already fixed by RTC.
    pub committed_through: usize,
    /// DA flexibility capacity released to RT per hour, MW.
    pub released_up: Vec<f64>,
    pub released_down: Vec<f64>,
}

impl RtState {
    pub fn from_da(system: &SystemModel, da: &DaSolution) -> Self {
        let n = system.generators.len();
        Self {
            u: (0..n).map(|i| (0..da.hours).map(|t| da.committed(i, t)).collect()).collect(),
            p_prev: system.generators.iter().map(|g| if g.initially_on { g.p_min } else { 0.0 }).collect(),
            u_prev: system.generators.iter().map(|g| g.initially_on).collect(),
            next_interval: 0,
            committed_through: 0,
            released_up: (0..da.hours).map(|t| (0..n).map(|i| da.flex_up(i, t)).sum()).collect(),
            released_down: (0..da.hours).map(|t| (0..n).map(|i| da.flex_down(i, t)).sum()).collect(),
        }
    }
}

/// Inputs shared by every RT step of one simulated day.
#[derive(Debug, Clone)]
pub struct RtContext<'a> {
    pub system: &'a SystemModel,
    pub da: &'a DaSolution,
    pub strikes: Vec<FlexSellerParams>,
    pub mode: RtMode,
    /// Realised net load per RT interval, MW.
    pub actual: &'a [f64],
    pub intervals_per_hour: usize,
}

impl<'a> RtContext<'a> {
    pub fn new(system: &'a SystemModel, da: &'a DaSolution, actual: &'a [f64], mode: RtMode) -> Result<Self> {
        let iph = system.market.rt_intervals_per_hour();
        if iph == 0 || (60.0 / system.market.rt_resolution - iph as f64).abs() > 1e-9 {
            return Err(Error::input("RT resolution must divide the hour"));
        }
        if actual.len() < da.hours * iph {
            return Err(Error::input(format!(
                "RT actuals cover {} intervals, need {}",
                actual.len(),
                da.hours * iph
            )));
        }
        Ok(Self {
            system,
            da,
            strikes: system.seller_params()?,
            mode,
            actual,
            intervals_per_hour: iph,
        })
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.intervals_per_hour as f64
    }

    pub fn num_intervals(&self) -> usize {
        self.da.hours * self.intervals_per_hour
    }

    fn hour(&self, k: usize) -> usize {
        k / self.intervals_per_hour
    }

    /// Fast units RTC may (re)commit in hour `h`.
    fn adjustable(&self, i: usize, h: usize) -> bool {
        let g = &self.system.generators[i];
        if !g.is_fast() || g.start_lead_time > self.system.market.rtc_lead {
            return false;
        }
        match self.mode {
            RtMode::Full => true,
            RtMode::Restricted => !self.da.committed(i, h) && self.da.flex_up(i, h) > 1e-9,
        }
    }
}

/// Either a fixed status or a decision variable.
#[derive(Debug, Clone, Copy)]
enum Status {
    Fixed(bool),
    Var(VarId),
}

impl Status {
    fn term(self, coef: f64) -> (Option<(VarId, f64)>, f64) {
        match self {
            Status::Fixed(on) => (None, if on { coef } else { 0.0 }),
            Status::Var(v) => (Some((v, coef)), 0.0),
        }
    }
}

struct RtModel {
    model: LinearModel,
    /// `[k][i]` relative to the first modelled interval
    p: Vec<Vec<VarId>>,
    inc: Vec<Vec<VarId>>,
    dec: Vec<Vec<VarId>>,
    spin: Vec<Vec<Option<VarId>>>,
    short: Vec<VarId>,
    surplus: Vec<VarId>,
    spin_short: Vec<Option<VarId>>,
    balance: Vec<RowId>,
    /// `[hour offset][i]`
    status: Vec<Vec<Status>>,
}

/// Dispatch model over intervals `from..to` with the given status per hour.
/// With `commit` set, adjustable units get hourly binaries and startups.
fn build_rt_model(ctx: &RtContext, state: &RtState, from: usize, to: usize, commit: bool) -> RtModel {
    let sys = ctx.system;
    let cfg = &sys.market;
    let dt = ctx.dt();
    let n = sys.generators.len();
    let restricted = ctx.mode == RtMode::Restricted;
    let mut m = LinearModel::new("rt");
    let h0 = ctx.hour(from);
    let h1 = ctx.hour(to - 1);

    let mut status = Vec::new();
    for h in h0..=h1 {
        let row: Vec<Status> = (0..n)
            .map(|i| {
                if commit && ctx.adjustable(i, h) {
                    let v = m.add_binary(format!("u_rt[{}][{h}]", sys.generators[i].id));
                    m.add_cost(v, sys.generators[i].no_load_cost, "rt_no_load");
                    Status::Var(v)
                } else {
                    Status::Fixed(state.u[i][h])
                }
            })
            .collect();
        status.push(row);
    }
    if commit {
        for (i, g) in sys.generators.iter().enumerate() {
            for h in h0..=h1 {
                if let Status::Var(u) = status[h - h0][i] {
                    // v >= u_h - u_{h-1}
                    let v = m.add_continuous(format!("start_rt[{}][{h}]", g.id), 0.0, 1.0);
                    m.add_cost(v, g.startup_cost, "rt_startup");
                    let mut terms = vec![(v, 1.0), (u, -1.0)];
                    let mut rhs = 0.0;
                    let prev = if h == h0 {
                        Status::Fixed(if h == 0 { g.initially_on } else { state.u[i][h - 1] })
                    } else {
                        status[h - h0 - 1][i]
                    };
                    let (t, c) = prev.term(1.0);
                    terms.extend(t);
                    rhs -= c;
                    m.add_row(format!("start_rt[{}][{h}]", g.id), "rt_startup", terms, RowSense::Ge, rhs);
                }
            }
        }
    }

    let mut out = RtModel {
        model: m,
        p: vec![],
        inc: vec![],
        dec: vec![],
        spin: vec![],
        short: vec![],
        surplus: vec![],
        spin_short: vec![],
        balance: vec![],
        status,
    };
    let m = &mut out.model;
    for k in from..to {
        let h = ctx.hour(k);
        let st = &out.status[h - h0];
        let mut p_row = Vec::with_capacity(n);
        let mut inc_row = Vec::with_capacity(n);
        let mut dec_row = Vec::with_capacity(n);
        let mut spin_row = Vec::with_capacity(n);
        for (i, g) in sys.generators.iter().enumerate() {
            let pda = ctx.da.p[i][h];
            let p = m.add_continuous(format!("p[{}][{k}]", g.id), 0.0, f64::INFINITY);
            let inc = m.add_continuous(format!("inc[{}][{k}]", g.id), 0.0, f64::INFINITY);
            let dec = m.add_continuous(format!("dec[{}][{k}]", g.id), 0.0, f64::INFINITY);
            m.add_cost(inc, ctx.strikes[i].strike_up * dt, "rt_inc");
            m.add_cost(dec, -ctx.strikes[i].strike_down * dt, "rt_dec");
            m.add_row(
                format!("dev[{}][{k}]", g.id),
                "rt_deviation",
                vec![(p, 1.0), (inc, -1.0), (dec, 1.0)],
                RowSense::Eq,
                pda,
            );
            if restricted {
                let (t, c) = st[i].term(-ctx.da.flex_up(i, h));
                let mut terms = vec![(inc, 1.0)];
                terms.extend(t);
                // an online unit without an award keeps its schedule
                m.add_row(format!("inc_cap[{}][{k}]", g.id), "rt_award", terms, RowSense::Le, -c);
                m.set_bounds(dec, 0.0, ctx.da.flex_down(i, h));
                m.set_bounds(p, f64::NEG_INFINITY, f64::INFINITY);
            } else {
                let (t, c) = st[i].term(-g.p_max);
                let mut terms = vec![(p, 1.0)];
                terms.extend(t);
                m.add_row(format!("pmax[{}][{k}]", g.id), "rt_capacity", terms, RowSense::Le, -c);
                let (t, c) = st[i].term(-g.p_min);
                let mut terms = vec![(p, 1.0)];
                terms.extend(t);
                m.add_row(format!("pmin[{}][{k}]", g.id), "rt_min_output", terms, RowSense::Ge, -c);
            }
            p_row.push(p);
            inc_row.push(inc);
            dec_row.push(dec);
            spin_row.push(None);
        }
        if !restricted {
            // ramp, with the DA schedule's own change always admissible
            for (i, g) in sys.generators.iter().enumerate() {
                let pda = ctx.da.p[i][h];
                let (prev_p, prev_pda, prev_status) = if k == from {
                    let prev_h = if k == 0 { None } else { Some(ctx.hour(k - 1)) };
                    let prev_pda = prev_h.map_or(state.p_prev[i], |ph| ctx.da.p[i][ph]);
                    (Err(state.p_prev[i]), prev_pda, Status::Fixed(state.u_prev[i]))
                } else {
                    let ph = ctx.hour(k - 1);
                    (Ok(out.p[k - 1 - from][i]), ctx.da.p[i][ph], out.status[ph - h0][i])
                };
                let up_allow = g.ramp_rate * dt + (pda - prev_pda).max(0.0) + g.p_max;
                let dn_allow = g.ramp_rate * dt + (prev_pda - pda).max(0.0) + g.p_max;
                let mut rise = vec![(p_row[i], 1.0)];
                let mut fall = vec![(p_row[i], -1.0)];
                let mut rise_rhs = up_allow;
                let mut fall_rhs = dn_allow;
                match prev_p {
                    Ok(v) => {
                        rise.push((v, -1.0));
                        fall.push((v, 1.0));
                    }
                    Err(c) => {
                        rise_rhs += c;
                        fall_rhs -= c;
                    }
                }
                // start / stop allowances: + p_max (1 - u)
                let (t, c) = prev_status.term(g.p_max);
                rise.extend(t);
                rise_rhs -= c;
                let (t, c) = out.status[h - h0][i].term(g.p_max);
                fall.extend(t);
                fall_rhs -= c;
                m.add_row(format!("ramp_up[{}][{k}]", g.id), "rt_ramp", rise, RowSense::Le, rise_rhs);
                m.add_row(format!("ramp_dn[{}][{k}]", g.id), "rt_ramp", fall, RowSense::Le, fall_rhs);
            }
        }
        let spin_short = if !restricted && cfg.rt_reserve_requirement > 0.0 {
            let mut req = Vec::new();
            for (i, g) in sys.generators.iter().enumerate() {
                let s = m.add_continuous(format!("spin[{}][{k}]", g.id), 0.0, g.ramp_rate * dt);
                let (t, c) = out.status[h - h0][i].term(-g.p_max);
                let mut terms = vec![(s, 1.0), (p_row[i], 1.0)];
                terms.extend(t);
                m.add_row(format!("spin_cap[{}][{k}]", g.id), "rt_spin", terms, RowSense::Le, -c);
                req.push((s, 1.0));
                spin_row[i] = Some(s);
            }
            let short = m.add_continuous(format!("spin_short[{k}]"), 0.0, f64::INFINITY);
            m.add_cost(short, cfg.rt_spin_scarcity * dt, "rt_spin_scarcity");
            req.push((short, 1.0));
            m.add_row(format!("spin_req[{k}]"), "rt_spin_requirement", req, RowSense::Ge, cfg.rt_reserve_requirement);
            Some(short)
        } else {
            None
        };
        let short = m.add_continuous(format!("short[{k}]"), 0.0, f64::INFINITY);
        let surplus = m.add_continuous(format!("surplus[{k}]"), 0.0, f64::INFINITY);
        m.add_cost(short, cfg.shortage_penalty * dt, "rt_shortage");
        m.add_cost(surplus, -cfg.surplus_penalty * dt, "rt_surplus");
        let mut terms: Vec<(VarId, f64)> = p_row.iter().map(|&p| (p, 1.0)).collect();
        terms.push((short, 1.0));
        terms.push((surplus, -1.0));
        let bal = m.add_row(format!("balance[{k}]"), "rt_balance", terms, RowSense::Eq, ctx.actual[k]);
        out.p.push(p_row);
        out.inc.push(inc_row);
        out.dec.push(dec_row);
        out.spin.push(spin_row);
        out.short.push(short);
        out.surplus.push(surplus);
        out.spin_short.push(spin_short);
        out.balance.push(bal);
    }
    out
}

fn rt_options(sys: &SystemModel) -> SolveOptions {
    SolveOptions {
        mip_gap: sys.market.mip_gap,
        time_limit: sys.market.time_limit,
        seed: sys.market.solver_seed,
    }
}

/// Hour-ahead commitment for hour `hour`: a MILP over the look-ahead with
/// perfect foresight of the actuals; only the first hour's commitment of
/// adjustable fast units is kept.
pub fn run_rtc(ctx: &RtContext, state: &RtState, hour: usize, backend: &dyn SolverBackend) -> Result<RtState> {
    let iph = ctx.intervals_per_hour;
    let last_hour = (hour + ctx.system.market.rtc_horizon_hours.max(1)).min(ctx.da.hours);
    if hour >= last_hour {
        return Err(Error::input(format!("RTC hour {hour} is past the end of the day")));
    }
    let mut next = state.clone();
    let any = (0..ctx.system.generators.len()).any(|i| (hour..last_hour).any(|h| ctx.adjustable(i, h)));
    if any {
        let from = hour * iph;
        let start_state = RtState {
            p_prev: state.p_prev.clone(),
            u_prev: state.u_prev.clone(),
            ..state.clone()
        };
        let rm = build_rt_model(ctx, &start_state, from, last_hour * iph, true);
        let sol = backend.solve(&rm.model, &rt_options(ctx.system))?;
        for (i, st) in rm.status[0].iter().enumerate() {
            if let Status::Var(v) = st {
                next.u[i][hour] = sol.value(*v) > 0.5;
            }
        }
    }
    next.committed_through = hour + 1;
    Ok(next)
}

/// Dispatch outcome of one RT interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtInterval {
    pub interval: usize,
    pub hour: usize,
    pub p: Vec<f64>,
    pub inc: Vec<f64>,
    pub dec: Vec<f64>,
    pub spin: Vec<f64>,
    /// $/MWh; `None` when the backend gives no duals.
    pub lambda: Option<f64>,
    pub shortage: f64,
    pub surplus: f64,
    pub spin_shortfall: f64,
    /// Σ (strike_up inc - strike_down dec) dt
    pub energy_cost: f64,
    pub shortage_cost: f64,
    pub surplus_cost: f64,
    pub spin_cost: f64,
    pub balance_residual: f64,
}

impl RtInterval {
    pub fn penalty_cost(&self) -> f64 {
        self.shortage_cost + self.surplus_cost + self.spin_cost
    }
}

/// Single-interval economic dispatch at the state's commitment.
pub fn run_rtd(
    ctx: &RtContext,
    state: &RtState,
    interval: usize,
    backend: &dyn SolverBackend,
) -> Result<(RtInterval, RtState)> {
    if interval >= ctx.num_intervals() {
        return Err(Error::input(format!("RT interval {interval} is past the end of the day")));
    }
    let rm = build_rt_model(ctx, state, interval, interval + 1, false);
    let sol = backend.solve(&rm.model, &SolveOptions::default())?;
    let dt = ctx.dt();
    let v = |x: VarId| sol.value(x);
    let p: Vec<f64> = rm.p[0].iter().map(|&x| v(x)).collect();
    let inc: Vec<f64> = rm.inc[0].iter().map(|&x| v(x)).collect();
    let dec: Vec<f64> = rm.dec[0].iter().map(|&x| v(x)).collect();
    let cfg = &ctx.system.market;
    let shortage = v(rm.short[0]);
    let surplus = v(rm.surplus[0]);
    let spin_shortfall = rm.spin_short[0].map_or(0.0, v);
    let energy_cost = (0..p.len())
        .map(|i| (ctx.strikes[i].strike_up * inc[i] - ctx.strikes[i].strike_down * dec[i]) * dt)
        .sum();
    let residual = p.iter().sum::<f64>() + shortage - surplus - ctx.actual[interval];
    let hour = ctx.hour(interval);
    let out = RtInterval {
        interval,
        hour,
        spin: rm.spin[0].iter().map(|s| s.map_or(0.0, v)).collect(),
        lambda: sol.dual(rm.balance[0]).map(|d| d / dt),
        shortage,
        surplus,
        spin_shortfall,
        energy_cost,
        shortage_cost: cfg.shortage_penalty * shortage * dt,
        surplus_cost: -cfg.surplus_penalty * surplus * dt,
        spin_cost: cfg.rt_spin_scarcity * spin_shortfall * dt,
        balance_residual: residual.abs(),
        p,
        inc,
        dec,
    };
    let mut next = state.clone();
    next.p_prev = out.p.clone();
    next.u_prev = (0..out.p.len()).map(|i| state.u[i][hour]).collect();
    next.next_interval = interval + 1;
    Ok((out, next))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RtResult {
    pub mode: RtMode,
    pub intervals: Vec<RtInterval>,
    /// Final `[generator][hour]` commitment.
    pub commitment: Vec<Vec<bool>>,
    /// No-load and startup cost of RT commitment changes relative to DA.
    pub commitment_cost: f64,
    pub released_up: Vec<f64>,
    pub released_down: Vec<f64>,
}

impl RtResult {
    /// RTD incremental cost: redispatch plus commitment changes.
    pub fn incremental_cost(&self) -> f64 {
        self.intervals.iter().map(|i| i.energy_cost).sum::<f64>() + self.commitment_cost
    }

    pub fn scarcity_cost(&self) -> f64 {
        self.intervals.iter().map(RtInterval::penalty_cost).sum()
    }

    pub fn total_cost(&self) -> f64 {
        self.incremental_cost() + self.scarcity_cost()
    }

    pub fn prices(&self) -> Vec<Option<f64>> {
        self.intervals.iter().map(|i| i.lambda).collect()
    }

    pub fn max_balance_residual(&self) -> f64 {
        self.intervals.iter().map(|i| i.balance_residual).fold(0.0, f64::max)
    }

    /// Hours in which a unit is online in RT but not in DA.
    pub fn rt_starts(&self, da: &DaSolution) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, row) in self.commitment.iter().enumerate() {
            for (h, &on) in row.iter().enumerate() {
                if on && !da.committed(i, h) {
                    out.push((i, h));
                }
            }
        }
        out
    }
}

fn starts(initial: bool, u: &[bool]) -> Vec<bool> {
    u.iter()
        .enumerate()
        .map(|(h, &on)| on && !(if h == 0 { initial } else { u[h - 1] }))
        .collect()
}

/// No-load and startup cost of an RT commitment relative to the DA one.
pub fn commitment_cost_delta(system: &SystemModel, da: &DaSolution, rt_u: &[Vec<bool>]) -> f64 {
    let mut total = 0.0;
    for (i, g) in system.generators.iter().enumerate() {
        let da_u: Vec<bool> = (0..da.hours).map(|h| da.committed(i, h)).collect();
        let rt = &rt_u[i];
        let sd = starts(g.initially_on, &da_u);
        let sr = starts(g.initially_on, rt);
        for h in 0..da.hours {
            total += g.no_load_cost * (rt[h] as u8 as f64 - da_u[h] as u8 as f64);
            total += g.startup_cost * (sr[h] as u8 as f64 - sd[h] as u8 as f64);
        }
    }
    total
}

/// RTC every hour, RTD every interval, for one day.
pub fn rollout(ctx: &RtContext, backend: &dyn SolverBackend) -> Result<RtResult> {
    let mut state = RtState::from_da(ctx.system, ctx.da);
    let mut intervals = Vec::with_capacity(ctx.num_intervals());
    for h in 0..ctx.da.hours {
        state = run_rtc(ctx, &state, h, backend)?;
        for k in h * ctx.intervals_per_hour..(h + 1) * ctx.intervals_per_hour {
            let (res, next) = run_rtd(ctx, &state, k, backend)?;
            intervals.push(res);
            state = next;
        }
    }
    Ok(RtResult {
        mode: ctx.mode,
        commitment_cost: commitment_cost_delta(ctx.system, ctx.da, &state.u),
        commitment: state.u,
        released_up: state.released_up,
        released_down: state.released_down,
        intervals,
    })
}

/// One scenario of the simplified balancing model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimpleRtResult {
    pub scenario: usize,
    /// Interval length, hours.
    pub dt: f64,
    /// `[generator][interval]`
    pub p_up: Vec<Vec<f64>>,
    pub p_down: Vec<Vec<f64>>,
    pub u_rt: Vec<Vec<f64>>,
    pub u_start: Vec<Vec<f64>>,
    pub eps_up: Vec<f64>,
    pub eps_down: Vec<f64>,
    /// Realised minus scheduled net load per interval.
    pub error: Vec<f64>,
    pub energy_cost: f64,
    pub penalty_cost: f64,
    pub commitment_cost: f64,
    pub total_cost: f64,
}

/// Minimum-cost deployment of DA awards against each scenario's realised
/// net load: increments bounded by upward awards of units online in DA or
/// started in RT, decrements by downward awards, balance slacks priced at
/// the RT shortage / surplus penalties.
pub fn run_simple_rt(
    da: &DaSolution,
    scenarios: &ScenarioSet,
    system: &SystemModel,
    backend: &dyn SolverBackend,
) -> Result<Vec<SimpleRtResult>> {
    let per_hour = 60.0 / scenarios.resolution;
    if per_hour < 1.0 || (per_hour - per_hour.round()).abs() > 1e-9 {
        return Err(Error::input("scenario resolution must divide the hour"));
    }
    let per_hour = per_hour.round() as usize;
    let n_int = da.hours * per_hour;
    if scenarios.num_intervals() < n_int {
        return Err(Error::input(format!(
            "scenarios cover {} intervals, need {n_int}",
            scenarios.num_intervals()
        )));
    }
    let strikes = system.seller_params()?;
    (0..scenarios.num_scenarios())
        .into_par_iter()
        .map(|s| {
            let actual: Vec<f64> = (0..n_int).map(|k| scenarios.net_load(s, k)).collect();
            simple_rt_scenario(da, system, &strikes, &actual, per_hour, s, backend)
        })
        .collect()
}

/// The simplified model for one realised net-load path.
pub fn simple_rt_scenario(
    da: &DaSolution,
    system: &SystemModel,
    strikes: &[FlexSellerParams],
    actual: &[f64],
    per_hour: usize,
    scenario: usize,
    backend: &dyn SolverBackend,
) -> Result<SimpleRtResult> {
    let cfg = &system.market;
    let dt = 1.0 / per_hour as f64;
    let n_int = actual.len();
    let n = system.generators.len();
    let hour = |k: usize| k / per_hour;
    let mut m = LinearModel::new("simple_rt");
    let mut p_up = vec![Vec::with_capacity(n_int); n];
    let mut p_dn = vec![Vec::with_capacity(n_int); n];
    let mut u_rt: Vec<Vec<Option<VarId>>> = vec![Vec::with_capacity(n_int); n];
    let mut u_start: Vec<Vec<Option<VarId>>> = vec![Vec::with_capacity(n_int); n];
    let mut da_start_cost = 0.0;
    for (i, g) in system.generators.iter().enumerate() {
        for k in 0..n_int {
            let h = hour(k);
            let up = da.flex_up(i, h);
            let dn = da.flex_down(i, h);
            let u_da = da.committed(i, h);
            let pu = m.add_continuous(format!("p_up[{}][{k}]", g.id), 0.0, f64::INFINITY);
            let pd = m.add_continuous(format!("p_dn[{}][{k}]", g.id), 0.0, dn);
            m.add_cost(pu, strikes[i].strike_up * dt, "rt_inc");
            m.add_cost(pd, -strikes[i].strike_down * dt, "rt_dec");
            let ur = (g.is_fast() && !u_da && up > 1e-9).then(|| {
                let v = m.add_binary(format!("u_rt[{}][{k}]", g.id));
                m.add_cost(v, g.no_load_cost * dt, "rt_no_load");
                v
            });
            // p_up <= HS↑ (U^DA + u^RT)
            let mut terms = vec![(pu, 1.0)];
            if let Some(v) = ur {
                terms.push((v, -up));
            }
            let rhs = if u_da { up } else { 0.0 };
            m.add_row(format!("up_cap[{}][{k}]", g.id), "simple_award", terms, RowSense::Le, rhs);
            p_up[i].push(pu);
            p_dn[i].push(pd);
            u_rt[i].push(ur);
        }
        // start tracking on the combined status U^DA + u^RT
        let mut prev: (Option<VarId>, f64) = (None, if g.initially_on { 1.0 } else { 0.0 });
        let mut prev_da = g.initially_on;
        for k in 0..n_int {
            let u_da = da.committed(i, hour(k));
            if u_da && !prev_da {
                da_start_cost += g.startup_cost;
            }
            let cur = (u_rt[i][k], if u_da { 1.0 } else { 0.0 });
            let needs = cur.0.is_some() || prev.0.is_some() || cur.1 > prev.1;
            let sv = needs.then(|| {
                let v = m.add_continuous(format!("start[{}][{k}]", g.id), 0.0, 1.0);
                m.add_cost(v, g.startup_cost, "rt_startup");
                let mut terms = vec![(v, 1.0)];
                if let Some(x) = cur.0 {
                    terms.push((x, -1.0));
                }
                if let Some(x) = prev.0 {
                    terms.push((x, 1.0));
                }
                m.add_row(format!("start[{}][{k}]", g.id), "simple_startup", terms, RowSense::Ge, cur.1 - prev.1);
                v
            });
            u_start[i].push(sv);
            prev = cur;
            prev_da = u_da;
        }
    }
    let mut eps_up = Vec::with_capacity(n_int);
    let mut eps_dn = Vec::with_capacity(n_int);
    let mut error = Vec::with_capacity(n_int);
    for k in 0..n_int {
        let h = hour(k);
        let sched: f64 = (0..n).map(|i| da.p[i][h]).sum();
        let e = actual[k] - sched;
        let a = m.add_continuous(format!("eps_up[{k}]"), 0.0, f64::INFINITY);
        let b = m.add_continuous(format!("eps_dn[{k}]"), 0.0, f64::INFINITY);
        m.add_cost(a, cfg.shortage_penalty * dt, "rt_shortage");
        m.add_cost(b, -cfg.surplus_penalty * dt, "rt_surplus");
        let mut terms = Vec::with_capacity(2 * n + 2);
        for i in 0..n {
            terms.push((p_up[i][k], 1.0));
            terms.push((p_dn[i][k], -1.0));
        }
        terms.push((a, 1.0));
        terms.push((b, -1.0));
        m.add_row(format!("balance[{k}]"), "simple_balance", terms, RowSense::Eq, e);
        eps_up.push(a);
        eps_dn.push(b);
        error.push(e);
    }
    m.add_constant_cost(-da_start_cost, "rt_startup");
    let sol = backend.solve(
        &m,
        &SolveOptions {
            mip_gap: cfg.mip_gap,
            time_limit: cfg.time_limit,
            seed: cfg.solver_seed,
        },
    )?;
    let v = |x: VarId| sol.value(x);
    let grid = |g: &Vec<Vec<VarId>>| -> Vec<Vec<f64>> { g.iter().map(|r| r.iter().map(|&x| v(x)).collect()).collect() };
    let opt_grid = |g: &Vec<Vec<Option<VarId>>>| -> Vec<Vec<f64>> {
        g.iter().map(|r| r.iter().map(|x| x.map_or(0.0, v)).collect()).collect()
    };
    let breakdown = m.cost_breakdown(&sol.values);
    let part = |tags: &[&str]| -> f64 { tags.iter().filter_map(|t| breakdown.get(t)).sum() };
    Ok(SimpleRtResult {
        scenario,
        dt,
        p_up: grid(&p_up),
        p_down: grid(&p_dn),
        u_rt: opt_grid(&u_rt),
        u_start: opt_grid(&u_start),
        eps_up: eps_up.iter().map(|&x| v(x)).collect(),
        eps_down: eps_dn.iter().map(|&x| v(x)).collect(),
        error,
        energy_cost: part(&["rt_inc", "rt_dec"]),
        penalty_cost: part(&["rt_shortage", "rt_surplus"]),
        commitment_cost: part(&["rt_no_load", "rt_startup"]),
        total_cost: sol.objective,
    })
}
