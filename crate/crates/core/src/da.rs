//! Day-ahead unit commitment in three flavours (base, imbalance reserves,
//! flexibility options) and pricing from the fixed-integer LP.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{DaForecast, PercentileTable, TierStructure};
use crate::solver::{LinearModel, LpSolution, RowId, RowSense, SolveOptions, SolveStatus, SolverBackend, VarId};
use crate::system::{
    overlapping_steps, Constituent, Direction, FlexSellerParams, MarketConfig, ReserveProductDef, SystemModel,
    UncertainAccount,
};

/// Cost tags that make up production cost; everything else in the DA
/// objective is a product-design term.
pub const PRODUCTION_TAGS: [&str; 5] = ["energy", "no_load", "startup", "da_shortfall", "da_surplus"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Design {
    Base,
    Ir,
    Fo,
}

impl Design {
    pub fn as_str(self) -> &'static str {
        match self {
            Design::Base => "base",
            Design::Ir => "ir",
            Design::Fo => "fo",
        }
    }
}

#[derive(Debug, Clone)]
pub struct GenVars {
    pub u: Vec<VarId>,
    pub p: Vec<VarId>,
    /// `[t][segment]`
    pub seg: Vec<Vec<VarId>>,
    pub start: Vec<VarId>,
    pub stop: Vec<VarId>,
    /// `p <= p_max u` (gains reserve/FO-up terms in the extended designs).
    pub cap_row: Vec<RowId>,
    /// `p >= p_min u` (gains reserve/FO-down terms).
    pub min_row: Vec<RowId>,
}

#[derive(Debug, Clone)]
pub struct AccountVars {
    pub account: UncertainAccount,
    pub pda: Vec<VarId>,
}

#[derive(Debug, Clone)]
pub struct IrStepVars {
    /// MW per hour.
    pub quantity: Vec<f64>,
    pub price: f64,
    pub short: Vec<VarId>,
    pub row: Vec<RowId>,
}

#[derive(Debug, Clone)]
pub struct IrProductVars {
    pub def: ReserveProductDef,
    /// `[generator][t]`
    pub award: Vec<Vec<VarId>>,
    pub steps: Vec<IrStepVars>,
}

#[derive(Debug, Clone)]
pub struct SellerFoVars {
    pub gen: usize,
    pub params: FlexSellerParams,
    /// `[r][t]`
    pub hs_up: Vec<Vec<VarId>>,
    pub hs_dn: Vec<Vec<VarId>>,
    /// Offline start indicators of fast units, `[r][t]`.
    pub u_rt: Option<Vec<Vec<VarId>>>,
}

#[derive(Debug, Clone)]
pub struct BuyerFoVars {
    /// Index into [`DaProblem::accounts`].
    pub account: usize,
    /// `[s][t]` MW of net injection.
    pub levels: Vec<Vec<f64>>,
    pub vc_up: f64,
    pub vc_dn: f64,
    /// `[r][t]`
    pub hd_up: Vec<Vec<VarId>>,
    pub hd_dn: Vec<Vec<VarId>>,
    pub sd_up: Vec<Vec<VarId>>,
    pub sd_dn: Vec<Vec<VarId>>,
    /// `[s][t]`
    pub y: Vec<Vec<VarId>>,
    /// Hedging identity rows, `[s][t]`.
    pub hedge_rows: Vec<Vec<RowId>>,
}

#[derive(Debug, Clone)]
pub struct FoVars {
    pub tiers: TierStructure,
    pub sellers: Vec<SellerFoVars>,
    pub buyers: Vec<BuyerFoVars>,
    /// Tier balance rows `[r][t]`; their duals are the tier prices.
    pub balance_up: Vec<Vec<RowId>>,
    pub balance_dn: Vec<Vec<RowId>>,
}

/// A built DA market: the linear model plus a registry of its variables
/// and rows.
#[derive(Debug, Clone)]
pub struct DaProblem {
    pub design: Design,
    pub hours: usize,
    pub system: SystemModel,
    pub model: LinearModel,
    pub gens: Vec<GenVars>,
    pub accounts: Vec<AccountVars>,
    /// Energy balance per hour; duals are λ^DA.
    pub balance: Vec<RowId>,
    pub shortfall: Vec<Option<VarId>>,
    pub surplus: Vec<Option<VarId>>,
    pub ir: Vec<IrProductVars>,
    pub fo: Option<FoVars>,
    /// Warnings raised while building (e.g. capacity below peak forecast).
    pub notes: Vec<String>,
}

fn fixed_injection(forecast: &DaForecast, c: Constituent, t: usize) -> f64 {
    forecast.median_injection(c, t)
}

/// Standard UC with demand fixed at the median forecast of each constituent.
pub fn build_base_uc(system: &SystemModel, forecast: &DaForecast) -> Result<DaProblem> {
    let hours = forecast.hours();
    if hours == 0 {
        return Err(Error::input("forecast has no hours"));
    }
    let cfg = &system.market;
    let mut m = LinearModel::new("da");
    let mut notes = Vec::new();

    let mut gens = Vec::with_capacity(system.generators.len());
    for g in &system.generators {
        let id = &g.id;
        let mut gv = GenVars {
            u: vec![],
            p: vec![],
            seg: vec![],
            start: vec![],
            stop: vec![],
            cap_row: vec![],
            min_row: vec![],
        };
        for t in 0..hours {
            let u = m.add_binary(format!("u[{id}][{t}]"));
            let p = m.add_continuous(format!("p[{id}][{t}]"), 0.0, g.p_max);
            let segs: Vec<VarId> = g
                .cost_curve
                .iter()
                .enumerate()
                .map(|(k, s)| {
                    let v = m.add_continuous(format!("seg[{id}][{t}][{k}]"), 0.0, s.width);
                    m.add_cost(v, s.cost, "energy");
                    v
                })
                .collect();
            let mut terms = vec![(p, 1.0)];
            terms.extend(segs.iter().map(|&v| (v, -1.0)));
            m.add_row(format!("segsum[{id}][{t}]"), "segments", terms, RowSense::Eq, 0.0);
            let cap = m.add_row(
                format!("pmax[{id}][{t}]"),
                "capacity",
                vec![(p, 1.0), (u, -g.p_max)],
                RowSense::Le,
                0.0,
            );
            let min = m.add_row(
                format!("pmin[{id}][{t}]"),
                "min_output",
                vec![(p, 1.0), (u, -g.p_min)],
                RowSense::Ge,
                0.0,
            );
            m.add_cost(u, g.no_load_cost, "no_load");
            let v = m.add_continuous(format!("start[{id}][{t}]"), 0.0, 1.0);
            let w = m.add_continuous(format!("stop[{id}][{t}]"), 0.0, 1.0);
            m.add_cost(v, g.startup_cost, "startup");
            gv.u.push(u);
            gv.p.push(p);
            gv.seg.push(segs);
            gv.start.push(v);
            gv.stop.push(w);
            gv.cap_row.push(cap);
            gv.min_row.push(min);
        }
        let u0 = if g.initially_on { 1.0 } else { 0.0 };
        let p0 = if g.initially_on { g.p_min } else { 0.0 };
        for t in 0..hours {
            // v - w = u_t - u_{t-1}
            let mut terms = vec![(gv.start[t], 1.0), (gv.stop[t], -1.0), (gv.u[t], -1.0)];
            let rhs = if t == 0 {
                -u0
            } else {
                terms.push((gv.u[t - 1], 1.0));
                0.0
            };
            m.add_row(format!("transition[{id}][{t}]"), "commitment", terms, RowSense::Eq, rhs);

            let up = g.min_up_time.max(1) as usize;
            if up > 1 {
                let lo = (t + 1).saturating_sub(up);
                let mut terms: Vec<_> = (lo..=t).map(|k| (gv.start[k], 1.0)).collect();
                terms.push((gv.u[t], -1.0));
                m.add_row(format!("minup[{id}][{t}]"), "min_up", terms, RowSense::Le, 0.0);
            }
            let dn = g.min_down_time.max(1) as usize;
            if dn > 1 {
                let lo = (t + 1).saturating_sub(dn);
                let mut terms: Vec<_> = (lo..=t).map(|k| (gv.stop[k], 1.0)).collect();
                terms.push((gv.u[t], 1.0));
                m.add_row(format!("mindown[{id}][{t}]"), "min_down", terms, RowSense::Le, 1.0);
            }

            // p_t - p_{t-1} <= RR + p_max (1 - u_{t-1}), and the mirror
            let prev_p = (t > 0).then(|| gv.p[t - 1]);
            let mut up_terms = vec![(gv.p[t], 1.0)];
            let mut dn_terms = vec![(gv.p[t], -1.0), (gv.u[t], g.p_max)];
            let mut up_rhs = g.ramp_rate + g.p_max;
            let mut dn_rhs = g.ramp_rate + g.p_max;
            match prev_p {
                Some(pp) => {
                    up_terms.push((pp, -1.0));
                    up_terms.push((gv.u[t - 1], g.p_max));
                    dn_terms.push((pp, 1.0));
                }
                None => {
                    up_rhs += p0 - g.p_max * u0;
                    dn_rhs -= p0;
                }
            }
            m.add_row(format!("rampup[{id}][{t}]"), "ramp", up_terms, RowSense::Le, up_rhs);
            m.add_row(format!("rampdn[{id}][{t}]"), "ramp", dn_terms, RowSense::Le, dn_rhs);
        }
        gens.push(gv);
    }

    let accounts: Vec<AccountVars> = system
        .constituent_accounts()
        .into_iter()
        .map(|a| {
            let pda = (0..hours)
                .map(|t| {
                    let v = fixed_injection(forecast, a.constituent, t);
                    m.add_continuous(format!("pda[{}][{t}]", a.id), v, v)
                })
                .collect();
            AccountVars { account: a, pda }
        })
        .collect();

    let mut balance = Vec::with_capacity(hours);
    let mut shortfall = Vec::with_capacity(hours);
    let mut surplus = Vec::with_capacity(hours);
    let cap = system.total_capacity();
    for t in 0..hours {
        let mut terms: Vec<_> = gens.iter().map(|g| (g.p[t], 1.0)).collect();
        terms.extend(accounts.iter().map(|a| (a.pda[t], 1.0)));
        let sh = cfg.da_shortfall_penalty.map(|pen| {
            let v = m.add_continuous(format!("da_short[{t}]"), 0.0, f64::INFINITY);
            m.add_cost(v, pen, "da_shortfall");
            terms.push((v, 1.0));
            v
        });
        let su = cfg.da_surplus_penalty.map(|pen| {
            let v = m.add_continuous(format!("da_surplus[{t}]"), 0.0, f64::INFINITY);
            m.add_cost(v, pen, "da_surplus");
            terms.push((v, -1.0));
            v
        });
        balance.push(m.add_row(format!("balance[{t}]"), "energy_balance", terms, RowSense::Eq, 0.0));
        shortfall.push(sh);
        surplus.push(su);
        let demand = -accounts.iter().map(|a| fixed_injection(forecast, a.account.constituent, t)).sum::<f64>();
        if demand > cap + 1e-9 {
            notes.push(format!("hour {t}: forecast demand {demand:.1} MW exceeds capacity {cap:.1} MW"));
        }
    }

    Ok(DaProblem {
        design: Design::Base,
        hours,
        system: system.clone(),
        model: m,
        gens,
        accounts,
        balance,
        shortfall,
        surplus,
        ir: vec![],
        fo: None,
        notes,
    })
}

/// Ramp rows that keep reserve deployment feasible across hours:
/// `(p_t + up_t) - (p_{t-1} - dn_{t-1}) <= RR + p_max (1 - u_{t-1})` and the
/// mirror, with an extra start allowance for fast units.
fn add_reserve_ramp_rows(p: &mut DaProblem, up: &[Vec<Vec<(VarId, f64)>>], dn: &[Vec<Vec<(VarId, f64)>>]) {
    for (i, g) in p.system.generators.clone().iter().enumerate() {
        let gv = &p.gens[i];
        let u0 = if g.initially_on { 1.0 } else { 0.0 };
        let p0 = if g.initially_on { g.p_min } else { 0.0 };
        for t in 0..p.hours {
            let mut rise = vec![(gv.p[t], 1.0)];
            rise.extend(up[i][t].iter().copied());
            let mut fall = vec![(gv.p[t], -1.0)];
            fall.extend(dn[i][t].iter().copied());
            let mut rise_rhs = g.ramp_rate;
            let mut fall_rhs = g.ramp_rate;
            // start/stop allowances
            if t == 0 {
                rise_rhs += p0 + g.p_max * (1.0 - u0);
                fall_rhs += -p0;
            } else {
                rise.push((gv.p[t - 1], -1.0));
                rise.extend(dn[i][t - 1].iter().copied());
                rise.push((gv.u[t - 1], g.p_max));
                rise_rhs += g.p_max;
                fall.push((gv.p[t - 1], 1.0));
                fall.extend(up[i][t - 1].iter().copied());
            }
            fall.push((gv.u[t], g.p_max));
            fall_rhs += g.p_max;
            if g.is_fast() {
                rise.push((gv.u[t], g.p_max));
                rise_rhs += g.p_max;
                if t > 0 {
                    fall.push((gv.u[t - 1], g.p_max));
                    fall_rhs += g.p_max;
                } else {
                    fall_rhs += g.p_max * (1.0 - u0);
                }
            }
            p.model
                .add_row(format!("resramp_up[{}][{t}]", g.id), "reserve_ramp", rise, RowSense::Le, rise_rhs);
            p.model
                .add_row(format!("resramp_dn[{}][{t}]", g.id), "reserve_ramp", fall, RowSense::Le, fall_rhs);
        }
    }
}

/// Per-step requirement (MW) of a demand curve from the net-load table.
pub fn ir_step_quantities(def: &ReserveProductDef, nl: &PercentileTable) -> Result<Vec<Vec<f64>>> {
    def.demand_steps
        .iter()
        .map(|s| {
            (0..nl.num_intervals())
                .map(|t| Ok((nl.require(t, s.upper_pct)? - nl.require(t, s.lower_pct)?).max(0.0)))
                .collect()
        })
        .collect()
}

/// Adds imbalance-reserve products with stepped, cascading demand curves.
pub fn apply_ir_design(mut p: DaProblem, products: &[ReserveProductDef], nl: &PercentileTable) -> Result<DaProblem> {
    if p.design != Design::Base {
        return Err(Error::input("imbalance reserves must be applied to a base problem"));
    }
    if nl.num_intervals() < p.hours {
        return Err(Error::input("net-load table shorter than the DA horizon"));
    }
    for def in products {
        if let Some((a, b)) = overlapping_steps(&def.demand_steps) {
            return Err(Error::input(format!("{}: steps {a} and {b} overlap", def.name)));
        }
    }
    p.design = Design::Ir;
    let hours = p.hours;
    let gens = p.system.generators.clone();
    let n = gens.len();
    let bids: Vec<f64> = p.system.seller_params()?.iter().map(|s| s.capacity_bid).collect();

    let mut vars = Vec::new();
    for def in products {
        let award: Vec<Vec<VarId>> = gens
            .iter()
            .enumerate()
            .map(|(i, g)| {
                (0..hours)
                    .map(|t| {
                        let v = p
                            .model
                            .add_continuous(format!("res[{}][{}][{t}]", def.name, g.id), 0.0, f64::INFINITY);
                        p.model.add_cost(v, bids[i], "capacity_bid");
                        v
                    })
                    .collect()
            })
            .collect();
        let quantities = ir_step_quantities(def, nl)?;
        let steps = def
            .demand_steps
            .iter()
            .zip(quantities)
            .enumerate()
            .map(|(k, (s, q))| {
                let short = (0..hours)
                    .map(|t| {
                        let v = p.model.add_continuous(format!("res_short[{}][{k}][{t}]", def.name), 0.0, q[t]);
                        p.model.add_cost(v, s.price, "ir_shortfall");
                        v
                    })
                    .collect();
                IrStepVars {
                    quantity: q,
                    price: s.price,
                    short,
                    row: vec![],
                }
            })
            .collect();
        vars.push(IrProductVars {
            def: def.clone(),
            award,
            steps,
        });
    }

    // Cascading requirement rows, per direction: product order by rank
    // (highest first), then step order. Row j holds every award whose rank is
    // at least that of row j's owner and the cumulative shortfall up to j.
    for dir in [Direction::Up, Direction::Down] {
        let mut order: Vec<usize> = (0..vars.len()).filter(|&a| vars[a].def.direction == dir).collect();
        order.sort_by_key(|&a| std::cmp::Reverse(vars[a].def.cascade_rank));
        for t in 0..hours {
            let mut cum_q = 0.0;
            let mut cum_short: Vec<(VarId, f64)> = Vec::new();
            for &a in &order {
                for k in 0..vars[a].steps.len() {
                    cum_q += vars[a].steps[k].quantity[t];
                    cum_short.push((vars[a].steps[k].short[t], 1.0));
                    let rank = vars[a].def.cascade_rank;
                    let mut terms = cum_short.clone();
                    for &b in &order {
                        if vars[b].def.cascade_rank >= rank {
                            terms.extend(vars[b].award.iter().map(|aw| (aw[t], 1.0)));
                        }
                    }
                    let row = p.model.add_row(
                        format!("ir_req[{}][{k}][{t}]", vars[a].def.name),
                        "ir_requirement",
                        terms,
                        RowSense::Ge,
                        cum_q,
                    );
                    vars[a].steps[k].row.push(row);
                }
            }
        }
    }

    // Headroom, footroom and ramp reservation.
    let mut up_terms = vec![vec![Vec::new(); hours]; n];
    let mut dn_terms = vec![vec![Vec::new(); hours]; n];
    for (i, g) in gens.iter().enumerate() {
        for t in 0..hours {
            let mut up_ramp = Vec::new();
            let mut dn_ramp = Vec::new();
            for pv in &vars {
                let v = pv.award[i][t];
                match pv.def.direction {
                    Direction::Up => {
                        p.model.add_term(p.gens[i].cap_row[t], v, 1.0);
                        up_ramp.push((v, pv.def.beta()));
                        up_terms[i][t].push((v, 1.0));
                    }
                    Direction::Down => {
                        p.model.add_term(p.gens[i].min_row[t], v, -1.0);
                        dn_ramp.push((v, pv.def.beta()));
                        dn_terms[i][t].push((v, 1.0));
                    }
                }
            }
            let u = p.gens[i].u[t];
            let fast_cap = if g.is_fast() { g.fast_start_capacity() } else { 0.0 };
            if g.is_fast() {
                // offline fast units can cover upward needs within an hour
                p.model.add_term(p.gens[i].cap_row[t], u, fast_cap);
                p.model.shift_rhs(p.gens[i].cap_row[t], fast_cap);
            }
            let mut up_ramp_row = up_ramp;
            up_ramp_row.push((u, -g.ramp_rate + fast_cap));
            p.model.add_row(
                format!("ramp_reserve_up[{}][{t}]", g.id),
                "ramp_reservation",
                up_ramp_row,
                RowSense::Le,
                fast_cap,
            );
            let mut dn_ramp_row = dn_ramp;
            dn_ramp_row.push((u, -g.ramp_rate));
            p.model.add_row(
                format!("ramp_reserve_dn[{}][{t}]", g.id),
                "ramp_reservation",
                dn_ramp_row,
                RowSense::Le,
                0.0,
            );
        }
    }
    add_reserve_ramp_rows(&mut p, &up_terms, &dn_terms);
    p.ir = vars;
    Ok(p)
}

/// Adds the flexibility-option market: seller holdings, buyer holdings and
/// self-hedges per tier, the hedging identity per level, the exercisable-volume
/// penalty, seller envelopes and the offline fast-start approximation.
pub fn apply_fo_design(
    mut p: DaProblem,
    sellers: &[FlexSellerParams],
    buyers: &[UncertainAccount],
    tiers: &TierStructure,
    cfg: &MarketConfig,
) -> Result<DaProblem> {
    if p.design != Design::Base {
        return Err(Error::input("flexibility options must be applied to a base problem"));
    }
    p.design = Design::Fo;
    let hours = p.hours;
    let n_tiers = tiers.num_tiers();
    let n_levels = tiers.num_levels();
    let gens = p.system.generators.clone();
    if n_tiers == 0 {
        return Err(Error::input("tier structure has no tiers"));
    }

    // Buyer DA schedules become decisions.
    let aggregate = buyers.iter().any(|b| b.constituent == Constituent::Aggregate);
    if aggregate {
        if buyers.len() != 1 {
            return Err(Error::input("an aggregate buyer must be the only buyer"));
        }
        let acc = buyers[0].clone();
        let pda: Vec<VarId> = (0..hours)
            .map(|t| p.model.add_continuous(format!("pda[{}][{t}]", acc.id), f64::NEG_INFINITY, f64::INFINITY))
            .collect();
        for t in 0..hours {
            for a in &p.accounts {
                p.model.remove_term(p.balance[t], a.pda[t]);
            }
            p.model.add_term(p.balance[t], pda[t], 1.0);
        }
        p.accounts = vec![AccountVars { account: acc, pda }];
    } else {
        for b in buyers {
            let idx = p
                .accounts
                .iter()
                .position(|a| a.account.constituent == b.constituent)
                .ok_or_else(|| Error::input(format!("buyer {} has no DA account", b.id)))?;
            p.accounts[idx].account = b.clone();
            let lo = if b.constituent.is_withdrawal() { f64::NEG_INFINITY } else { 0.0 };
            for t in 0..hours {
                p.model.set_bounds(p.accounts[idx].pda[t], lo, f64::INFINITY);
            }
        }
    }
    for a in &p.accounts {
        for t in 0..hours {
            p.model.add_cost(a.pda[t], a.account.da_cost, "buyer_energy");
        }
    }

    let pu = &tiers.prob_up;
    let pd = &tiers.prob_down;

    // Sellers.
    let mut seller_vars = Vec::new();
    let mut up_terms = vec![vec![Vec::new(); hours]; gens.len()];
    let mut dn_terms = vec![vec![Vec::new(); hours]; gens.len()];
    for sp in sellers {
        let i = p
            .system
            .generator_index(&sp.generator)
            .ok_or_else(|| Error::input(format!("seller {} is not a generator", sp.generator)))?;
        let g = &gens[i];
        let mk = |m: &mut LinearModel, name: &str| -> Vec<Vec<VarId>> {
            (0..n_tiers)
                .map(|r| (0..hours).map(|t| m.add_continuous(format!("{name}[{}][{r}][{t}]", g.id), 0.0, f64::INFINITY)).collect())
                .collect()
        };
        let hs_up = mk(&mut p.model, "hs_up");
        let hs_dn = mk(&mut p.model, "hs_dn");
        let fast_cap = g.fast_start_capacity();
        let u_rt = g.is_fast().then(|| {
            (0..n_tiers)
                .map(|r| (0..hours).map(|t| p.model.add_binary(format!("u_rt[{}][{r}][{t}]", g.id))).collect::<Vec<_>>())
                .collect::<Vec<_>>()
        });
        for r in 0..n_tiers {
            for t in 0..hours {
                p.model.add_cost(hs_up[r][t], pu[r] * sp.strike_up, "fo_seller_expected");
                p.model.add_cost(hs_dn[r][t], -pd[r] * sp.strike_down, "fo_seller_expected");
                p.model.add_cost(hs_up[r][t], sp.capacity_bid, "capacity_bid");
                p.model.add_cost(hs_dn[r][t], sp.capacity_bid, "capacity_bid");
                if let Some(urt) = &u_rt {
                    p.model.add_cost(urt[r][t], g.startup_cost * pu[r], "fo_fast_start");
                }
            }
        }
        for t in 0..hours {
            let u = p.gens[i].u[t];
            let ups: Vec<(VarId, f64)> = (0..n_tiers).map(|r| (hs_up[r][t], 1.0)).collect();
            let dns: Vec<(VarId, f64)> = (0..n_tiers).map(|r| (hs_dn[r][t], 1.0)).collect();
            let starts: Vec<(VarId, f64)> = u_rt
                .as_ref()
                .map(|x| (0..n_tiers).map(|r| (x[r][t], -fast_cap)).collect())
                .unwrap_or_default();

            // ramp envelope
            let mut row = ups.clone();
            row.push((u, -g.ramp_rate));
            row.extend(starts.iter().copied());
            p.model.add_row(format!("fo_ramp_up[{}][{t}]", g.id), "fo_ramp", row, RowSense::Le, 0.0);
            let mut row = dns.clone();
            row.push((u, -g.ramp_rate));
            p.model.add_row(format!("fo_ramp_dn[{}][{t}]", g.id), "fo_ramp", row, RowSense::Le, 0.0);

            // headroom / footroom on the capacity rows
            for &(v, c) in &ups {
                p.model.add_term(p.gens[i].cap_row[t], v, c);
            }
            for &(v, c) in &starts {
                p.model.add_term(p.gens[i].cap_row[t], v, c);
            }
            for &(v, _) in &dns {
                p.model.add_term(p.gens[i].min_row[t], v, -1.0);
            }
            up_terms[i][t].extend(ups.iter().copied());
            dn_terms[i][t].extend(dns.iter().copied());

            if let Some(urt) = &u_rt {
                // exclusive: online in DA or started for some tier
                let mut row: Vec<(VarId, f64)> = (0..n_tiers).map(|r| (urt[r][t], 1.0)).collect();
                row.push((u, 1.0));
                p.model.add_row(format!("fo_fast_excl[{}][{t}]", g.id), "fo_fast_start", row, RowSense::Le, 1.0);
                // a unit started for tier r serves every tier at or below r
                for rp in 0..n_tiers {
                    let mut row = vec![(hs_up[rp][t], 1.0), (u, -g.p_max)];
                    row.extend((rp..n_tiers).map(|r| (urt[r][t], -fast_cap)));
                    p.model.add_row(
                        format!("fo_fast_elig[{}][{rp}][{t}]", g.id),
                        "fo_fast_start",
                        row,
                        RowSense::Le,
                        0.0,
                    );
                }
            }
        }
        seller_vars.push(SellerFoVars {
            gen: i,
            params: sp.clone(),
            hs_up,
            hs_dn,
            u_rt,
        });
    }
    add_reserve_ramp_rows(&mut p, &up_terms, &dn_terms);

    // Buyers.
    let mut buyer_vars = Vec::new();
    for (ai, acc) in p.accounts.clone().iter().enumerate() {
        let a = &acc.account;
        let levels = tiers
            .account(&a.id)
            .ok_or_else(|| Error::input(format!("no tier levels for buyer {}", a.id)))?
            .levels
            .clone();
        if levels.len() != n_levels || levels.iter().any(|l| l.len() < hours) {
            return Err(Error::input(format!("buyer {}: level table has the wrong shape", a.id)));
        }
        for s in 1..n_levels {
            for t in 0..hours {
                if levels[s][t] < levels[s - 1][t] - 1e-9 {
                    return Err(Error::input(format!("buyer {}: levels not ascending at s={s} t={t}", a.id)));
                }
            }
        }
        let vc_up = a
            .self_hedge_cost_up
            .unwrap_or(tiers.deepest_up_probability() * cfg.rt_spin_scarcity);
        let vc_dn = a.self_hedge_cost_down;
        let mk = |m: &mut LinearModel, name: &str, count: usize| -> Vec<Vec<VarId>> {
            (0..count)
                .map(|r| (0..hours).map(|t| m.add_continuous(format!("{name}[{}][{r}][{t}]", a.id), 0.0, f64::INFINITY)).collect())
                .collect()
        };
        let hd_up = mk(&mut p.model, "hd_up", n_tiers);
        let hd_dn = mk(&mut p.model, "hd_dn", n_tiers);
        let sd_up = mk(&mut p.model, "sd_up", n_tiers);
        let sd_dn = mk(&mut p.model, "sd_dn", n_tiers);
        let y = mk(&mut p.model, "y", n_levels);
        for r in 0..n_tiers {
            for t in 0..hours {
                p.model.add_cost(hd_up[r][t], -pu[r] * a.da_cost, "fo_buyer_value");
                p.model.add_cost(sd_up[r][t], -pu[r] * a.da_cost, "fo_buyer_value");
                p.model.add_cost(hd_dn[r][t], pd[r] * a.da_cost, "fo_buyer_value");
                p.model.add_cost(sd_dn[r][t], pd[r] * a.da_cost, "fo_buyer_value");
                p.model.add_cost(sd_up[r][t], pu[r] * vc_up, "fo_self_hedge");
                p.model.add_cost(sd_dn[r][t], -pd[r] * vc_dn, "fo_self_hedge");
                p.model.add_row(
                    format!("fo_dn_limit[{}][{r}][{t}]", a.id),
                    "fo_down_limit",
                    vec![(hd_dn[r][t], 1.0), (sd_dn[r][t], 1.0)],
                    RowSense::Le,
                    levels[r + 1][t] - levels[r][t],
                );
            }
        }
        let mut hedge_rows = vec![Vec::with_capacity(hours); n_levels];
        for s in 0..n_levels {
            for t in 0..hours {
                p.model.add_cost(y[s][t], cfg.fo_penalty_m, "fo_penalty");
                let mut held: Vec<(VarId, f64)> = Vec::new();
                for r in 0..s {
                    held.push((hd_dn[r][t], 1.0));
                    held.push((sd_dn[r][t], 1.0));
                }
                let mut ident = vec![(acc.pda[t], 1.0)];
                ident.extend(held.iter().copied());
                let mut exer = held;
                for r in s..n_tiers {
                    ident.push((hd_up[r][t], -1.0));
                    ident.push((sd_up[r][t], -1.0));
                    exer.push((hd_up[r][t], 1.0));
                    exer.push((sd_up[r][t], 1.0));
                }
                hedge_rows[s].push(p.model.add_row(
                    format!("fo_hedge[{}][{s}][{t}]", a.id),
                    "fo_hedging",
                    ident,
                    RowSense::Eq,
                    levels[s][t],
                ));
                exer.push((y[s][t], -1.0));
                p.model.add_row(format!("fo_exer[{}][{s}][{t}]", a.id), "fo_exercisable", exer, RowSense::Le, 0.0);
                p.model.add_row(
                    format!("fo_dev_hi[{}][{s}][{t}]", a.id),
                    "fo_deviation",
                    vec![(y[s][t], 1.0), (acc.pda[t], -1.0)],
                    RowSense::Ge,
                    -levels[s][t],
                );
                p.model.add_row(
                    format!("fo_dev_lo[{}][{s}][{t}]", a.id),
                    "fo_deviation",
                    vec![(y[s][t], 1.0), (acc.pda[t], 1.0)],
                    RowSense::Ge,
                    levels[s][t],
                );
            }
        }
        buyer_vars.push(BuyerFoVars {
            account: ai,
            levels,
            vc_up,
            vc_dn,
            hd_up,
            hd_dn,
            sd_up,
            sd_dn,
            y,
            hedge_rows,
        });
    }

    // Tier balance: sellers' holdings equal buyers' holdings.
    let mut balance_up = vec![Vec::with_capacity(hours); n_tiers];
    let mut balance_dn = vec![Vec::with_capacity(hours); n_tiers];
    for r in 0..n_tiers {
        for t in 0..hours {
            let mut up: Vec<(VarId, f64)> = seller_vars.iter().map(|s| (s.hs_up[r][t], 1.0)).collect();
            up.extend(buyer_vars.iter().map(|b| (b.hd_up[r][t], -1.0)));
            let mut dn: Vec<(VarId, f64)> = seller_vars.iter().map(|s| (s.hs_dn[r][t], 1.0)).collect();
            dn.extend(buyer_vars.iter().map(|b| (b.hd_dn[r][t], -1.0)));
            balance_up[r].push(p.model.add_row(format!("fo_bal_up[{r}][{t}]"), "fo_balance", up, RowSense::Eq, 0.0));
            balance_dn[r].push(p.model.add_row(format!("fo_bal_dn[{r}][{t}]"), "fo_balance", dn, RowSense::Eq, 0.0));
        }
    }

    p.fo = Some(FoVars {
        tiers: tiers.clone(),
        sellers: seller_vars,
        buyers: buyer_vars,
        balance_up,
        balance_dn,
    });
    Ok(p)
}

/// Builds the problem for a design with the system's own products, buyers
/// and strike prices.
pub fn build_design(system: &SystemModel, forecast: &DaForecast, design: Design) -> Result<DaProblem> {
    let base = build_base_uc(system, forecast)?;
    match design {
        Design::Base => Ok(base),
        Design::Ir => apply_ir_design(base, &system.reserve_products, &forecast.net_load),
        Design::Fo => {
            let buyers = system.fo_buyers();
            let tiers = crate::scenario::build_account_tiers(&buyers, forecast, &system.market)?;
            apply_fo_design(base, &system.seller_params()?, &buyers, &tiers, &system.market)
        }
    }
}

/// FO awards pulled out of a solution, indexed like the registry.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FoAwards {
    /// Generator index per seller.
    pub seller_gen: Vec<usize>,
    pub strike_up: Vec<f64>,
    pub strike_down: Vec<f64>,
    /// `[seller][r][t]`
    pub hs_up: Vec<Vec<Vec<f64>>>,
    pub hs_dn: Vec<Vec<Vec<f64>>>,
    pub u_rt: Vec<Vec<Vec<f64>>>,
    /// Account index per buyer.
    pub buyer_account: Vec<usize>,
    /// `[buyer][s][t]`
    pub levels: Vec<Vec<Vec<f64>>>,
    /// `[buyer][r][t]`
    pub hd_up: Vec<Vec<Vec<f64>>>,
    pub hd_dn: Vec<Vec<Vec<f64>>>,
    pub sd_up: Vec<Vec<Vec<f64>>>,
    pub sd_dn: Vec<Vec<Vec<f64>>>,
    /// `[buyer][s][t]`
    pub y: Vec<Vec<Vec<f64>>>,
    pub prob_up: Vec<f64>,
    pub prob_down: Vec<f64>,
}

impl FoAwards {
    /// Σ_r hs↑ of seller `k` in hour `t`.
    pub fn seller_up(&self, k: usize, t: usize) -> f64 {
        self.hs_up[k].iter().map(|r| r[t]).sum()
    }

    pub fn seller_down(&self, k: usize, t: usize) -> f64 {
        self.hs_dn[k].iter().map(|r| r[t]).sum()
    }

    /// Residual of the hedging identity for buyer `b`, level `s`, hour `t`.
    pub fn hedge_residual(&self, b: usize, s: usize, t: usize, pda: f64) -> f64 {
        let n_tiers = self.hd_up[b].len();
        let down: f64 = (0..s).map(|r| self.hd_dn[b][r][t] + self.sd_dn[b][r][t]).sum();
        let up: f64 = (s..n_tiers).map(|r| self.hd_up[b][r][t] + self.sd_up[b][r][t]).sum();
        pda + down - up - self.levels[b][s][t]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrAwards {
    pub product: String,
    pub direction: Direction,
    /// `[generator][t]`
    pub award: Vec<Vec<f64>>,
    /// `[step][t]` requirement
    pub quantity: Vec<Vec<f64>>,
    /// `[step][t]` unmet requirement
    pub short: Vec<Vec<f64>>,
}

impl IrAwards {
    pub fn total(&self, t: usize) -> f64 {
        self.award.iter().map(|a| a[t]).sum()
    }

    pub fn requirement(&self, t: usize) -> f64 {
        self.quantity.iter().map(|q| q[t]).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaSolution {
    pub design: Design,
    pub hours: usize,
    pub objective: f64,
    pub mip_gap: f64,
    pub optimal: bool,
    pub backend: String,
    pub values: Vec<f64>,
    pub generator_ids: Vec<String>,
    /// `[generator][t]`
    pub p: Vec<Vec<f64>>,
    pub u: Vec<Vec<f64>>,
    pub start: Vec<Vec<f64>>,
    pub account_ids: Vec<String>,
    pub account_constituents: Vec<Constituent>,
    /// `[account][t]` scheduled net injection
    pub pda: Vec<Vec<f64>>,
    pub shortfall: Vec<f64>,
    pub surplus: Vec<f64>,
    pub ir: Vec<IrAwards>,
    pub fo: Option<FoAwards>,
    pub cost_breakdown: BTreeMap<String, f64>,
}

impl DaSolution {
    /// Energy + no-load + startup + DA slack penalties.
    pub fn production_cost(&self) -> f64 {
        PRODUCTION_TAGS.iter().filter_map(|t| self.cost_breakdown.get(*t)).sum()
    }

    /// Scheduled net load: minus the accounts' scheduled injections.
    pub fn scheduled_net_load(&self, t: usize) -> f64 {
        -self.pda.iter().map(|a| a[t]).sum::<f64>()
    }

    pub fn committed(&self, i: usize, t: usize) -> bool {
        self.u[i][t] > 0.5
    }

    /// Σ IR awards of a generator in one direction.
    pub fn ir_award(&self, i: usize, t: usize, dir: Direction) -> f64 {
        self.ir.iter().filter(|a| a.direction == dir).map(|a| a.award[i][t]).sum()
    }

    /// Upward flexibility held by a generator (IR or FO).
    /// Upward flexibility sold by generator `i` (FO plus IR), floored at 0
    /// against solver round-off.
    pub fn flex_up(&self, i: usize, t: usize) -> f64 {
        let fo = self.fo.as_ref().map_or(0.0, |f| {
            f.seller_gen.iter().enumerate().filter(|(_, &g)| g == i).map(|(k, _)| f.seller_up(k, t)).sum()
        });
        (fo + self.ir_award(i, t, Direction::Up)).max(0.0)
    }

    pub fn flex_down(&self, i: usize, t: usize) -> f64 {
        let fo = self.fo.as_ref().map_or(0.0, |f| {
            f.seller_gen.iter().enumerate().filter(|(_, &g)| g == i).map(|(k, _)| f.seller_down(k, t)).sum()
        });
        (fo + self.ir_award(i, t, Direction::Down)).max(0.0)
    }
}

fn extract(p: &DaProblem, sol: &LpSolution) -> DaSolution {
    let v = |x: VarId| sol.value(x);
    let grid = |m: &Vec<Vec<VarId>>| -> Vec<Vec<f64>> { m.iter().map(|r| r.iter().map(|&x| v(x)).collect()).collect() };
    let fo = p.fo.as_ref().map(|f| FoAwards {
        seller_gen: f.sellers.iter().map(|s| s.gen).collect(),
        strike_up: f.sellers.iter().map(|s| s.params.strike_up).collect(),
        strike_down: f.sellers.iter().map(|s| s.params.strike_down).collect(),
        hs_up: f.sellers.iter().map(|s| grid(&s.hs_up)).collect(),
        hs_dn: f.sellers.iter().map(|s| grid(&s.hs_dn)).collect(),
        u_rt: f
            .sellers
            .iter()
            .map(|s| s.u_rt.as_ref().map_or_else(|| vec![vec![0.0; p.hours]; f.tiers.num_tiers()], |x| grid(x)))
            .collect(),
        buyer_account: f.buyers.iter().map(|b| b.account).collect(),
        levels: f.buyers.iter().map(|b| b.levels.clone()).collect(),
        hd_up: f.buyers.iter().map(|b| grid(&b.hd_up)).collect(),
        hd_dn: f.buyers.iter().map(|b| grid(&b.hd_dn)).collect(),
        sd_up: f.buyers.iter().map(|b| grid(&b.sd_up)).collect(),
        sd_dn: f.buyers.iter().map(|b| grid(&b.sd_dn)).collect(),
        y: f.buyers.iter().map(|b| grid(&b.y)).collect(),
        prob_up: f.tiers.prob_up.clone(),
        prob_down: f.tiers.prob_down.clone(),
    });
    DaSolution {
        design: p.design,
        hours: p.hours,
        objective: sol.objective,
        mip_gap: sol.mip_gap,
        optimal: sol.status == SolveStatus::Optimal,
        backend: sol.backend.to_string(),
        values: sol.values.clone(),
        generator_ids: p.system.generators.iter().map(|g| g.id.clone()).collect(),
        p: p.gens.iter().map(|g| g.p.iter().map(|&x| v(x)).collect()).collect(),
        u: p.gens.iter().map(|g| g.u.iter().map(|&x| v(x).round()).collect()).collect(),
        start: p.gens.iter().map(|g| g.start.iter().map(|&x| v(x)).collect()).collect(),
        account_ids: p.accounts.iter().map(|a| a.account.id.clone()).collect(),
        account_constituents: p.accounts.iter().map(|a| a.account.constituent).collect(),
        pda: p.accounts.iter().map(|a| a.pda.iter().map(|&x| v(x)).collect()).collect(),
        shortfall: p.shortfall.iter().map(|x| x.map_or(0.0, v)).collect(),
        surplus: p.surplus.iter().map(|x| x.map_or(0.0, v)).collect(),
        ir: p
            .ir
            .iter()
            .map(|pv| IrAwards {
                product: pv.def.name.clone(),
                direction: pv.def.direction,
                award: grid(&pv.award),
                quantity: pv.steps.iter().map(|s| s.quantity.clone()).collect(),
                short: pv.steps.iter().map(|s| s.short.iter().map(|&x| v(x)).collect()).collect(),
            })
            .collect(),
        fo,
        cost_breakdown: p
            .model
            .cost_breakdown(&sol.values)
            .into_iter()
            .map(|(k, v)| (k.to_string(), v))
            .collect(),
    }
}

pub fn solve_options(cfg: &MarketConfig) -> SolveOptions {
    SolveOptions {
        mip_gap: cfg.mip_gap,
        time_limit: cfg.time_limit,
        seed: cfg.solver_seed,
    }
}

/// Solves the MILP to the configured gap.
pub fn solve_da(p: &DaProblem, cfg: &MarketConfig, backend: &dyn SolverBackend) -> Result<DaSolution> {
    let sol = backend.solve(&p.model, &solve_options(cfg))?;
    Ok(extract(p, &sol))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DaPrices {
    /// λ^DA per hour, $/MWh.
    pub energy: Vec<f64>,
    /// λ↑ per tier and hour, $/MW.
    pub fo_up: Vec<Vec<f64>>,
    pub fo_down: Vec<Vec<f64>>,
    /// Clearing price of each IR product per hour, $/MW.
    pub ir_product: Vec<Vec<f64>>,
    /// Price of each step `[product][step][t]`.
    pub ir_step: Vec<Vec<Vec<f64>>>,
    pub ir_names: Vec<String>,
    /// How the pricing LP was solved.
    pub note: String,
}

impl DaPrices {
    /// IR price of a direction: the highest product price among products in
    /// that direction.
    pub fn ir_price(&self, sol: &DaSolution, dir: Direction, t: usize) -> f64 {
        sol.ir
            .iter()
            .zip(&self.ir_product)
            .filter(|(a, _)| a.direction == dir)
            .map(|(_, p)| p[t])
            .fold(0.0, f64::max)
    }
}

/// Fixes commitment at the solution and reads prices off the LP duals.
pub fn compute_prices(p: &DaProblem, sol: &DaSolution, backend: &dyn SolverBackend) -> Result<DaPrices> {
    if !backend.provides_duals() {
        return Err(Error::input(format!("backend {} cannot price (no duals)", backend.name())));
    }
    let lp = p.model.fix_integers(&sol.values);
    let opts = SolveOptions {
        mip_gap: 0.0,
        ..SolveOptions::default()
    };
    let res = backend.solve_raw(&lp, &opts).map_err(|e| Error::Internal(format!("pricing LP: {e}")))?;
    let d = |r: RowId| res.dual(r).unwrap_or(0.0);
    let energy = p.balance.iter().map(|&r| d(r)).collect();
    let (fo_up, fo_down) = match &p.fo {
        Some(f) => (
            f.balance_up.iter().map(|row| row.iter().map(|&r| d(r)).collect()).collect(),
            f.balance_dn.iter().map(|row| row.iter().map(|&r| d(r)).collect()).collect(),
        ),
        None => (vec![], vec![]),
    };
    let (ir_product, ir_step) = ir_prices(p, &d);
    Ok(DaPrices {
        energy,
        fo_up,
        fo_down,
        ir_product,
        ir_step,
        ir_names: p.ir.iter().map(|pv| pv.def.name.clone()).collect(),
        note: format!("restricted LP with fixed commitment, backend {} default basis", backend.name()),
    })
}

/// Step and product prices of the cascading requirement rows. Raising a
/// step's quantity raises the right-hand side of its own row and every later
/// row of the same direction, so its price is the suffix sum of row duals. An
/// award of product `b` appears in every row owned by a product of rank at
/// most `b`'s, so its price is the sum of those rows' duals.
fn ir_prices(p: &DaProblem, d: &dyn Fn(RowId) -> f64) -> (Vec<Vec<f64>>, Vec<Vec<Vec<f64>>>) {
    let mut product = vec![vec![0.0; p.hours]; p.ir.len()];
    let mut step: Vec<Vec<Vec<f64>>> = p.ir.iter().map(|pv| vec![vec![0.0; p.hours]; pv.steps.len()]).collect();
    for dir in [Direction::Up, Direction::Down] {
        let mut order: Vec<usize> = (0..p.ir.len()).filter(|&a| p.ir[a].def.direction == dir).collect();
        order.sort_by_key(|&a| std::cmp::Reverse(p.ir[a].def.cascade_rank));
        let seq: Vec<(usize, usize)> = order
            .iter()
            .flat_map(|&a| (0..p.ir[a].steps.len()).map(move |k| (a, k)))
            .collect();
        for t in 0..p.hours {
            let duals: Vec<f64> = seq.iter().map(|&(a, k)| d(p.ir[a].steps[k].row[t])).collect();
            let mut tail = 0.0;
            for j in (0..seq.len()).rev() {
                tail += duals[j];
                let (a, k) = seq[j];
                step[a][k][t] = tail;
            }
            for &b in &order {
                let rank = p.ir[b].def.cascade_rank;
                product[b][t] = seq
                    .iter()
                    .zip(&duals)
                    .filter(|((a, _), _)| p.ir[*a].def.cascade_rank <= rank)
                    .map(|(_, x)| x)
                    .sum();
            }
        }
    }
    (product, step)
}

/// Tier pairs whose price magnitudes are out of order with their exercise
/// probabilities: a tier exercised whenever another is (higher Π) should not
/// be priced below it. Only tiers with positive held volume are compared.
pub fn fo_price_order_violations(sol: &DaSolution, prices: &DaPrices, tol: f64) -> Vec<String> {
    let Some(fo) = &sol.fo else { return vec![] };
    let mut out = Vec::new();
    let held = |dir: Direction, r: usize, t: usize| -> f64 {
        let grid = if dir == Direction::Up { &fo.hd_up } else { &fo.hd_dn };
        grid.iter().map(|b| b[r][t]).sum()
    };
    for (dir, probs, lam) in [
        (Direction::Up, &fo.prob_up, &prices.fo_up),
        (Direction::Down, &fo.prob_down, &prices.fo_down),
    ] {
        for t in 0..sol.hours {
            for a in 0..probs.len() {
                for b in 0..probs.len() {
                    if probs[a] > probs[b]
                        && held(dir, a, t) > tol
                        && held(dir, b, t) > tol
                        && lam[a][t].abs() + tol < lam[b][t].abs()
                    {
                        out.push(format!(
                            "{} t={t}: tier {a} (Π={:.3}) priced {:.4} below tier {b} (Π={:.3}) at {:.4}",
                            dir.as_str(),
                            probs[a],
                            lam[a][t],
                            probs[b],
                            lam[b][t]
                        ));
                    }
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{fast_generator, generator, linear_forecast, system};
    use crate::scenario::{tier_probabilities, AccountLevels};
    use crate::solver::{HighsBackend, MicrolpBackend, SolverError};
    use crate::system::ProbabilityRule;
    use proptest::prelude::*;

    fn tight(mut s: SystemModel) -> SystemModel {
        s.market.mip_gap = 1e-9;
        s
    }

    fn solve(p: &DaProblem) -> DaSolution {
        solve_da(p, &p.system.market, &HighsBackend::default()).unwrap()
    }

    #[test]
    fn single_unit_serves_flat_load() {
        let mut g = generator("g", 0.0, &[(100.0, 20.0)]);
        g.no_load_cost = 10.0;
        g.initially_on = true;
        let sys = tight(system("one", vec![g]));
        let p = build_base_uc(&sys, &linear_forecast(&[50.0; 24], 0.0)).unwrap();
        let sol = solve(&p);
        assert!((sol.objective - (24.0 * 50.0 * 20.0 + 24.0 * 10.0)).abs() < 1e-6);
        assert!((sol.production_cost() - sol.objective).abs() < 1e-6);
        let prices = compute_prices(&p, &sol, &HighsBackend::default()).unwrap();
        assert!(prices.energy.iter().all(|l| (l - 20.0).abs() < 1e-6));
    }

    #[test]
    fn merit_order_sets_the_price() {
        let cheap = generator("cheap", 0.0, &[(40.0, 20.0)]);
        let dear = generator("dear", 0.0, &[(100.0, 30.0)]);
        let sys = tight(system("two", vec![cheap, dear]));
        let p = build_base_uc(&sys, &linear_forecast(&[60.0; 4], 0.0)).unwrap();
        let sol = solve(&p);
        for t in 0..4 {
            assert!((sol.p[0][t] - 40.0).abs() < 1e-6);
            assert!((sol.p[1][t] - 20.0).abs() < 1e-6);
        }
        let prices = compute_prices(&p, &sol, &HighsBackend::default()).unwrap();
        assert!(prices.energy.iter().all(|l| (l - 30.0).abs() < 1e-6));
    }

    /// Cost of serving `demand` with a fixed set of committed units, by
    /// filling marginal segments cheapest first; `None` if infeasible.
    fn greedy_dispatch(gens: &[crate::system::Generator], on: &[bool], demand: f64) -> Option<f64> {
        let floor: f64 = gens.iter().zip(on).filter(|(_, &o)| o).map(|(g, _)| g.p_min).sum();
        let cap: f64 = gens.iter().zip(on).filter(|(_, &o)| o).map(|(g, _)| g.p_max).sum();
        if demand < floor - 1e-9 || demand > cap + 1e-9 {
            return None;
        }
        let mut cost = 0.0;
        let mut pieces = Vec::new();
        for (g, _) in gens.iter().zip(on).filter(|(_, &o)| o) {
            cost += g.energy_cost(g.p_min) + g.no_load_cost;
            let mut used = g.p_min;
            for s in &g.cost_curve {
                let skip = used.min(s.width);
                used -= skip;
                if s.width - skip > 0.0 {
                    pieces.push((s.cost, s.width - skip));
                }
            }
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = demand - floor;
        for (c, w) in pieces {
            let take = left.min(w);
            cost += take * c;
            left -= take;
        }
        Some(cost)
    }

    fn brute_force(sys: &SystemModel, demand: &[f64]) -> f64 {
        let n = sys.generators.len();
        let h = demand.len();
        let mut best = f64::INFINITY;
        for mask in 0u32..(1 << (n * h)) {
            let on = |i: usize, t: usize| mask >> (i * h + t) & 1 == 1;
            let mut total = 0.0;
            let mut ok = true;
            for t in 0..h {
                let state: Vec<bool> = (0..n).map(|i| on(i, t)).collect();
                match greedy_dispatch(&sys.generators, &state, demand[t]) {
                    Some(c) => total += c,
                    None => {
                        ok = false;
                        break;
                    }
                }
                for (i, g) in sys.generators.iter().enumerate() {
                    let was = if t == 0 { g.initially_on } else { on(i, t - 1) };
                    if on(i, t) && !was {
                        total += g.startup_cost;
                    }
                }
            }
            if ok {
                best = best.min(total);
            }
        }
        best
    }

    #[test]
    fn milp_matches_commitment_enumeration() {
        let mut a = generator("a", 20.0, &[(40.0, 18.0), (40.0, 24.0)]);
        a.no_load_cost = 300.0;
        a.startup_cost = 500.0;
        let mut b = generator("b", 10.0, &[(30.0, 30.0), (20.0, 36.0)]);
        b.no_load_cost = 60.0;
        b.startup_cost = 80.0;
        let mut c = generator("c", 5.0, &[(40.0, 55.0)]);
        c.no_load_cost = 10.0;
        c.startup_cost = 20.0;
        let mut sys = tight(system("three", vec![a, b, c]));
        sys.market.da_shortfall_penalty = None;
        sys.market.da_surplus_penalty = None;
        let demand = [35.0, 90.0, 140.0, 60.0];
        let p = build_base_uc(&sys, &linear_forecast(&demand, 0.0)).unwrap();
        let oracle = brute_force(&sys, &demand);
        let highs = solve(&p);
        let micro = solve_da(&p, &sys.market, &MicrolpBackend).unwrap();
        assert!((highs.objective - oracle).abs() < 1e-5, "{} vs {oracle}", highs.objective);
        assert!((micro.objective - oracle).abs() < 1e-5, "{} vs {oracle}", micro.objective);
    }

    #[test]
    fn demand_above_capacity_without_slack_is_infeasible() {
        let mut sys = system("small", vec![generator("g", 0.0, &[(50.0, 20.0)])]);
        sys.market.da_shortfall_penalty = None;
        let p = build_base_uc(&sys, &linear_forecast(&[80.0; 2], 0.0)).unwrap();
        assert!(p.notes.iter().any(|n| n.contains("exceeds capacity")));
        match solve_da(&p, &sys.market, &HighsBackend::default()) {
            Err(Error::Solve(SolverError::Infeasible { families })) => {
                assert!(families.contains(&"energy_balance".to_string()), "{families:?}");
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn slack_prices_shortfall_at_the_penalty() {
        let sys = tight(system("small", vec![generator("g", 0.0, &[(50.0, 20.0)])]));
        let p = build_base_uc(&sys, &linear_forecast(&[80.0], 0.0)).unwrap();
        let sol = solve(&p);
        assert!((sol.shortfall[0] - 30.0).abs() < 1e-6);
        let prices = compute_prices(&p, &sol, &HighsBackend::default()).unwrap();
        assert!((prices.energy[0] - 9000.0).abs() < 1e-6);
    }

    /// One hour, an aggregate buyer with net-load levels 110 / 100 / 90 at
    /// the 10th / 50th / 90th level percentiles.
    fn fo_case(ramp: f64, cost: f64, pcts: &[f64]) -> (DaProblem, DaSolution) {
        let mut g = generator("g", 0.0, &[(200.0, cost)]);
        g.ramp_rate = ramp;
        let mut sys = tight(system("fo", vec![g]));
        sys.market.tier_percentiles = pcts.to_vec();
        let forecast = linear_forecast(&[100.0], 12.5);
        let buyers = sys.fo_buyers();
        let tiers = crate::scenario::build_account_tiers(&buyers, &forecast, &sys.market).unwrap();
        assert!((tiers.accounts[0].levels[0][0] + 110.0).abs() < 1e-9);
        let base = build_base_uc(&sys, &forecast).unwrap();
        let p = apply_fo_design(base, &sys.seller_params().unwrap(), &buyers, &tiers, &sys.market).unwrap();
        let sol = solve(&p);
        (p, sol)
    }

    #[test]
    fn fo_hand_case_schedules_low_and_buys_upward_options() {
        let (p, sol) = fo_case(100.0, 100.0, &[10.0, 50.0, 90.0]);
        let fo = sol.fo.as_ref().unwrap();
        // Moving pda one MW from -100 towards -90 saves $100 of energy, costs
        // 0.5*100 + 0.1*100 in seller strikes and 2 * 2.8 in penalty, so the
        // schedule sits at the top level and both tiers are held upward.
        assert!((sol.pda[0][0] + 90.0).abs() < 1e-6);
        assert!((fo.hd_up[0][0][0] - 10.0).abs() < 1e-6);
        assert!((fo.hd_up[0][1][0] - 10.0).abs() < 1e-6);
        assert!(fo.hd_dn[0].iter().all(|r| r[0].abs() < 1e-6));
        assert!((sol.objective - (9000.0 + 0.1 * 1000.0 + 0.5 * 1000.0 + 2.8 * 30.0)).abs() < 1e-6);
        for s in 0..3 {
            assert!(fo.hedge_residual(0, s, 0, sol.pda[0][0]).abs() < 1e-6);
        }
        // the seller is not constrained: tier prices are expected strikes
        let prices = compute_prices(&p, &sol, &HighsBackend::default()).unwrap();
        assert!((prices.fo_up[0][0] - 0.1 * 100.0).abs() < 1e-6, "{:?}", prices.fo_up);
        assert!((prices.fo_up[1][0] - 0.5 * 100.0).abs() < 1e-6, "{:?}", prices.fo_up);
        assert!((prices.energy[0] - 100.0).abs() < 1e-6);
    }

    #[test]
    fn scarce_flexibility_is_priced_at_the_self_hedge_cost() {
        // one tier between net load 110 and 100; the seller can ramp 5 of the
        // 10 MW, the buyer self-hedges the rest
        let (p, sol) = fo_case(5.0, 100.0, &[10.0, 50.0]);
        let fo = sol.fo.as_ref().unwrap();
        assert!((sol.pda[0][0] + 100.0).abs() < 1e-6);
        assert!((fo.seller_up(0, 0) - 5.0).abs() < 1e-6);
        assert!((fo.sd_up[0][0][0] - 5.0).abs() < 1e-6);
        let prices = compute_prices(&p, &sol, &HighsBackend::default()).unwrap();
        // VC↑ defaults to the deepest up probability times RT scarcity
        let vc_up = 0.1 * 4500.0;
        assert!((prices.fo_up[0][0] - 0.1 * vc_up).abs() < 1e-6, "{:?}", prices.fo_up);
    }

    #[test]
    fn offline_fast_unit_sells_upward_options() {
        // the base unit runs flat out, so upward options can only come from
        // an offline peaker start or the buyer's self-hedge
        let mut base_unit = generator("base", 0.0, &[(100.0, 20.0)]);
        base_unit.initially_on = true;
        let mut peaker = fast_generator("peaker", 10.0, &[(40.0, 60.0)]);
        peaker.no_load_cost = 5000.0;
        peaker.ramp_rate = 20.0;
        peaker.startup_cost = 100.0;
        let mut sys = tight(system("fast", vec![base_unit, peaker]));
        sys.market.tier_percentiles = vec![10.0, 50.0, 90.0];
        sys.market.da_shortfall_penalty = None;
        let forecast = linear_forecast(&[100.0, 100.0], 12.5);
        let p = build_design(&sys, &forecast, Design::Fo).unwrap();
        let sol = solve(&p);
        let fo = sol.fo.as_ref().unwrap();
        for t in 0..2 {
            assert!(!sol.committed(1, t));
            let starts: f64 = fo.u_rt[1].iter().map(|r| r[t]).sum();
            assert!((starts - 1.0).abs() < 1e-9);
            // a start covers at most min(p_max, p_min + ramp)
            assert!(fo.seller_up(1, t) > 1.0 && fo.seller_up(1, t) <= 30.0 + 1e-9);
        }
        assert!(sol.cost_breakdown["fo_fast_start"] > 0.0);
    }

    #[test]
    fn aggregate_mode_replaces_constituent_schedules() {
        let sys = system("agg", vec![generator("g", 0.0, &[(200.0, 20.0)])]);
        let p = build_design(&sys, &linear_forecast(&[100.0; 2], 12.5), Design::Fo).unwrap();
        assert_eq!(p.accounts.len(), 1);
        assert_eq!(p.accounts[0].account.constituent, Constituent::Aggregate);
        for &row in &p.balance {
            let vars: Vec<VarId> = p.model.row(row).terms.iter().map(|t| t.0).collect();
            assert!(vars.contains(&p.accounts[0].pda[0]) || vars.contains(&p.accounts[0].pda[1]));
        }
    }

    #[test]
    fn per_constituent_mode_frees_each_schedule() {
        let mut sys = tight(system("per", vec![generator("g", 0.0, &[(200.0, 20.0)])]));
        sys.market.fo_account_mode = crate::system::FoAccountMode::PerConstituent;
        let p = build_design(&sys, &linear_forecast(&[100.0; 2], 12.5), Design::Fo).unwrap();
        assert_eq!(p.accounts.len(), 3);
        let sol = solve(&p);
        let fo = sol.fo.as_ref().unwrap();
        for b in 0..3 {
            for s in 0..9 {
                for t in 0..2 {
                    assert!(fo.hedge_residual(b, s, t, sol.pda[b][t]).abs() < 1e-5);
                }
            }
        }
    }

    #[test]
    fn zero_width_forecast_needs_no_reserve() {
        let sys = tight(system("ir0", vec![generator("g", 0.0, &[(200.0, 20.0)])]));
        let forecast = linear_forecast(&[100.0; 3], 0.0);
        let base = solve(&build_design(&sys, &forecast, Design::Base).unwrap());
        let ir = solve(&build_design(&sys, &forecast, Design::Ir).unwrap());
        assert!((base.objective - ir.objective).abs() < 1e-6);
        for a in &ir.ir {
            assert!((0..3).all(|t| a.requirement(t) == 0.0 && a.total(t).abs() < 1e-9));
        }
    }

    fn ramp_limited_ir() -> (DaProblem, DaSolution) {
        let mut g = generator("g", 0.0, &[(100.0, 20.0)]);
        g.ramp_rate = 10.0;
        let mut products = crate::system::default_ir_products();
        products.retain(|p| p.direction == Direction::Up);
        products[0].response_time = 15.0;
        let mut sys = tight(system("ramp", vec![g]));
        sys.reserve_products = products;
        // load 50 flat, up requirement spread*0.9 = 45
        let forecast = linear_forecast(&[50.0, 50.0], 50.0);
        let p = build_design(&sys, &forecast, Design::Ir).unwrap();
        let sol = solve(&p);
        (p, sol)
    }

    #[test]
    fn reserve_respects_the_modified_ramp() {
        let (_, sol) = ramp_limited_ir();
        // capacity allows 50 and the ramp reservation 40; the inter-hour ramp
        // (p_1 + r_1) - (p_0 - 0) <= 10 binds
        assert!((sol.ir[0].award[0][1] - 10.0).abs() < 1e-6, "{:?}", sol.ir[0].award);
        assert!((sol.ir[0].award[0][0] - 10.0).abs() < 1e-6, "{:?}", sol.ir[0].award);
        let short: f64 = sol.ir[0].short.iter().map(|s| s[1]).sum();
        assert!((short - 35.0).abs() < 1e-6);
    }

    #[test]
    fn reserve_price_is_the_marginal_unmet_step() {
        let (p, sol) = ramp_limited_ir();
        let prices = compute_prices(&p, &sol, &HighsBackend::default()).unwrap();
        // the first unmet MW sits in the 1200 step
        assert!((prices.ir_product[0][1] - 1200.0).abs() < 1e-6, "{:?}", prices.ir_product);
        assert!((prices.ir_step[0][0][1] - 1200.0).abs() < 1e-6);
        assert!((prices.ir_step[0][3][1] - 600.0).abs() < 1e-6);
    }

    #[test]
    fn cascade_lets_fast_product_fill_slow_steps() {
        let mut products = crate::system::default_ir_products();
        products.retain(|p| p.direction == Direction::Up);
        let mut fast = products[0].clone();
        fast.name = "ir_up_fast".into();
        fast.response_time = 10.0;
        fast.cascade_rank = 1;
        fast.demand_steps = vec![crate::system::DemandStep { lower_pct: 50.0, upper_pct: 60.0, price: 2000.0 }];
        products.push(fast);
        let mut sys = tight(system("cascade", vec![generator("g", 0.0, &[(200.0, 20.0)])]));
        sys.reserve_products = products;
        let forecast = linear_forecast(&[50.0], 50.0);
        let p = build_design(&sys, &forecast, Design::Ir).unwrap();
        let sol = solve(&p);
        let fast_req = sol.ir[1].requirement(0);
        let total = sol.ir[0].total(0) + sol.ir[1].total(0);
        // both requirements are met with no shortfall, the fast product
        // counting towards the slow one
        assert!(sol.ir[1].total(0) >= fast_req - 1e-6);
        assert!(total >= fast_req + sol.ir[0].requirement(0) - 1e-6);
        assert!(sol.ir.iter().all(|a| a.short.iter().all(|s| s[0].abs() < 1e-9)));
    }

    #[test]
    fn pricing_needs_a_dual_capable_backend() {
        let sys = system("one", vec![generator("g", 0.0, &[(100.0, 20.0)])]);
        let p = build_base_uc(&sys, &linear_forecast(&[50.0], 0.0)).unwrap();
        let sol = solve(&p);
        assert!(compute_prices(&p, &sol, &MicrolpBackend).is_err());
    }

    fn fixed_schedule_case(levels: [f64; 3], pda: f64) -> (DaProblem, DaSolution) {
        let mut sys = tight(system("hedge", vec![generator("g", 0.0, &[(100.0, 30.0), (100.0, 50.0)])]));
        sys.market.tier_percentiles = vec![10.0, 50.0, 90.0];
        let (prob_up, prob_down) = tier_probabilities(&sys.market.tier_percentiles, ProbabilityRule::FullCrossing);
        let tiers = TierStructure {
            percentiles: sys.market.tier_percentiles.clone(),
            accounts: vec![AccountLevels {
                account: "aggregate".into(),
                levels: levels.iter().map(|&l| vec![l]).collect(),
            }],
            prob_up,
            prob_down,
        };
        let base = build_base_uc(&sys, &linear_forecast(&[-pda], 0.0)).unwrap();
        let mut p = apply_fo_design(base, &sys.seller_params().unwrap(), &sys.fo_buyers(), &tiers, &sys.market).unwrap();
        let v = p.accounts[0].pda[0];
        p.model.set_bounds(v, pda, pda);
        let sol = solve(&p);
        (p, sol)
    }

    #[test]
    fn forced_median_schedule_hedges_both_sides() {
        // loads of 60 / 50 / 40 MW, schedule fixed at 50
        let (_, sol) = fixed_schedule_case([-60.0, -50.0, -40.0], -50.0);
        let fo = sol.fo.as_ref().unwrap();
        assert!((fo.hd_up[0][0][0] - 10.0).abs() < 1e-6);
        assert!((fo.hd_dn[0][1][0] - 10.0).abs() < 1e-6);
        assert!(fo.hd_up[0][1][0].abs() < 1e-6 && fo.hd_dn[0][0][0].abs() < 1e-6);
        assert!(fo.sd_up[0].iter().chain(&fo.sd_dn[0]).all(|r| r[0].abs() < 1e-6));
        for s in 0..3 {
            assert!(fo.hedge_residual(0, s, 0, -50.0).abs() < 1e-6);
        }
    }

    #[test]
    fn certain_buyer_holds_nothing() {
        let (_, sol) = fixed_schedule_case([-50.0; 3], -50.0);
        let fo = sol.fo.as_ref().unwrap();
        let all = fo.hd_up[0].iter().chain(&fo.hd_dn[0]).chain(&fo.sd_up[0]).chain(&fo.sd_dn[0]).chain(&fo.y[0]);
        assert!(all.flatten().all(|x| x.abs() < 1e-9));
    }

    #[test]
    fn non_monotone_levels_are_rejected() {
        let sys = system("bad", vec![generator("g", 0.0, &[(100.0, 30.0)])]);
        let (prob_up, prob_down) = tier_probabilities(&[10.0, 50.0, 90.0], ProbabilityRule::FullCrossing);
        let tiers = TierStructure {
            percentiles: vec![10.0, 50.0, 90.0],
            accounts: vec![AccountLevels {
                account: "aggregate".into(),
                levels: vec![vec![-40.0], vec![-50.0], vec![-30.0]],
            }],
            prob_up,
            prob_down,
        };
        let base = build_base_uc(&sys, &linear_forecast(&[50.0], 0.0)).unwrap();
        let err = apply_fo_design(base, &sys.seller_params().unwrap(), &sys.fo_buyers(), &tiers, &sys.market);
        assert!(matches!(err, Err(Error::Input(_))));
    }

    #[test]
    fn holding_both_directions_across_hours_breaks_the_modified_ramp() {
        // RR = 10: 10 MW up in hour 1 after 10 MW down in hour 0 at a flat
        // 50 MW schedule needs a 20 MW swing
        let mut g = generator("g", 0.0, &[(100.0, 20.0)]);
        g.ramp_rate = 10.0;
        let sys = system("swing", vec![g]);
        let p = build_design(&sys, &linear_forecast(&[50.0, 50.0], 20.0), Design::Ir).unwrap();
        let mut x = vec![0.0; p.model.num_vars()];
        for t in 0..2 {
            x[p.gens[0].u[t].0] = 1.0;
            x[p.gens[0].p[t].0] = 50.0;
            x[p.gens[0].seg[t][0].0] = 50.0;
        }
        let up = p.ir.iter().find(|a| a.def.direction == Direction::Up).unwrap();
        let dn = p.ir.iter().find(|a| a.def.direction == Direction::Down).unwrap();
        x[up.award[0][1].0] = 10.0;
        x[dn.award[0][0].0] = 10.0;
        let row = (0..p.model.num_rows())
            .map(RowId)
            .find(|&r| p.model.row(r).name == "resramp_up[g][1]")
            .unwrap();
        assert!((p.model.row(row).violation(&x) - 10.0).abs() < 1e-9);
        // with 5 MW each way the swing fits
        x[up.award[0][1].0] = 5.0;
        x[dn.award[0][0].0] = 5.0;
        assert!(p.model.row(row).violation(&x) == 0.0);
    }

    #[test]
    fn binaries_are_commitments_and_fast_starts() {
        let sys = system(
            "bin",
            vec![generator("slow", 0.0, &[(100.0, 20.0)]), fast_generator("fast", 0.0, &[(50.0, 60.0)])],
        );
        let p = build_design(&sys, &linear_forecast(&[60.0; 3], 10.0), Design::Fo).unwrap();
        let tiers = p.fo.as_ref().unwrap().tiers.num_tiers();
        let binaries = p.model.num_integer_vars();
        assert_eq!(binaries, 2 * 3 + tiers * 3);
    }

    #[test]
    fn price_order_report_flags_inverted_tiers() {
        let (p, sol) = fo_case(100.0, 100.0, &[10.0, 50.0, 90.0]);
        let mut prices = compute_prices(&p, &sol, &HighsBackend::default()).unwrap();
        assert!(fo_price_order_violations(&sol, &prices, 1e-6).is_empty());
        prices.fo_up[1][0] = 1.0;
        assert_eq!(fo_price_order_violations(&sol, &prices, 1e-6).len(), 1);
    }

    fn random_fo(levels: Vec<f64>, cost: f64, ramp: f64) -> (DaProblem, DaSolution) {
        let mut g = generator("g", 0.0, &[(400.0, cost)]);
        g.ramp_rate = ramp;
        let mut sys = system("prop", vec![g]);
        sys.market.tier_percentiles = vec![10.0, 30.0, 50.0, 70.0, 90.0];
        let mut sorted = levels;
        sorted.sort_by(f64::total_cmp);
        let (prob_up, prob_down) = tier_probabilities(&sys.market.tier_percentiles, ProbabilityRule::FullCrossing);
        let tiers = TierStructure {
            percentiles: sys.market.tier_percentiles.clone(),
            accounts: vec![AccountLevels {
                account: "aggregate".into(),
                levels: sorted.iter().map(|&l| vec![l]).collect(),
            }],
            prob_up,
            prob_down,
        };
        let forecast = linear_forecast(&[-sorted[2]], 0.0);
        let base = build_base_uc(&sys, &forecast).unwrap();
        let p = apply_fo_design(base, &sys.seller_params().unwrap(), &sys.fo_buyers(), &tiers, &sys.market).unwrap();
        let sol = solve(&p);
        (p, sol)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn fo_solutions_satisfy_the_identities(
            levels in proptest::collection::vec(-300.0f64..-20.0, 5),
            cost in 5.0f64..80.0,
            ramp in 1.0f64..200.0,
        ) {
            let (p, sol) = random_fo(levels, cost, ramp);
            let fo = sol.fo.as_ref().unwrap();
            for s in 0..5 {
                prop_assert!(fo.hedge_residual(0, s, 0, sol.pda[0][0]).abs() <= 1e-4);
            }
            for r in 0..4 {
                let up: f64 = fo.hs_up.iter().map(|x| x[r][0]).sum::<f64>() - fo.hd_up[0][r][0];
                let dn: f64 = fo.hs_dn.iter().map(|x| x[r][0]).sum::<f64>() - fo.hd_dn[0][r][0];
                prop_assert!(up.abs() <= 1e-6 && dn.abs() <= 1e-6);
            }
            let parts: f64 = sol.cost_breakdown.values().sum();
            prop_assert!((parts - sol.objective).abs() <= 1e-6 * sol.objective.abs().max(1.0));
            let (viol, _) = p.model.max_violation(&sol.values);
            prop_assert!(viol <= 1e-6);
        }
    }
}
