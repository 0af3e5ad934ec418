//! Cashflows of both designs as a double-entry ledger against the operator,
//! with dual-trigger option exercise, imbalance-reserve cost allocation and
//! the operator's revenue-adequacy audit.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::da::{DaPrices, DaSolution};
use crate::error::{Error, Result};
use crate::rt::RtResult;
use crate::scenario::ScenarioSet;
use crate::system::{Constituent, Direction, SystemModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartyClass {
    /// Generators (flexibility sellers).
    Seller,
    /// Wind and solar accounts.
    Buyer,
    /// Load, the aggregate account and the scarcity accounts.
    Load,
    Iso,
}

impl PartyClass {
    pub fn as_str(self) -> &'static str {
        match self {
            PartyClass::Seller => "seller",
            PartyClass::Buyer => "buyer",
            PartyClass::Load => "load",
            PartyClass::Iso => "iso",
        }
    }

    pub fn of(c: Constituent) -> Self {
        match c {
            Constituent::Load | Constituent::Aggregate => PartyClass::Load,
            Constituent::Wind | Constituent::Solar => PartyClass::Buyer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Da,
    Rt,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Da => "da",
            Stage::Rt => "rt",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Product {
    Energy,
    FoUp,
    FoDown,
    IrUp,
    IrDown,
}

impl Product {
    pub fn as_str(self) -> &'static str {
        match self {
            Product::Energy => "energy",
            Product::FoUp => "fo_up",
            Product::FoDown => "fo_down",
            Product::IrUp => "ir_up",
            Product::IrDown => "ir_down",
        }
    }

    pub fn fo(d: Direction) -> Self {
        match d {
            Direction::Up => Product::FoUp,
            Direction::Down => Product::FoDown,
        }
    }

    pub fn ir(d: Direction) -> Self {
        match d {
            Direction::Up => Product::IrUp,
            Direction::Down => Product::IrDown,
        }
    }
}

pub const ISO: &str = "iso";
/// Scarcity account credited with RT unserved energy (and debited with
/// over-generation) at the RT price.
pub const RT_SLACK: &str = "rt_slack";
pub const DA_SLACK: &str = "da_slack";

/// One side of a transfer; positive amounts are received.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    /// Pairs a party entry with its operator counter-entry.
    pub txn: usize,
    pub day: usize,
    pub party: String,
    pub class: PartyClass,
    pub stage: Stage,
    pub product: Product,
    /// DA hour or RT interval.
    pub interval: usize,
    pub amount: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CashflowLedger {
    pub entries: Vec<LedgerEntry>,
    next_txn: usize,
}

impl CashflowLedger {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records `amount` received by `party` and the opposite operator entry.
    pub fn post(
        &mut self,
        party: &str,
        class: PartyClass,
        stage: Stage,
        product: Product,
        interval: usize,
        amount: f64,
    ) {
        if amount == 0.0 {
            return;
        }
        let txn = self.next_txn;
        self.next_txn += 1;
        for (p, c, a) in [(party, class, amount), (ISO, PartyClass::Iso, -amount)] {
            self.entries.push(LedgerEntry {
                txn,
                day: 0,
                party: p.to_string(),
                class: c,
                stage,
                product,
                interval,
                amount: a,
            });
        }
    }

    /// Appends another ledger, stamping its entries with `day`.
    pub fn append_day(&mut self, other: CashflowLedger, day: usize) {
        let offset = self.next_txn;
        for mut e in other.entries {
            e.txn += offset;
            e.day = day;
            self.entries.push(e);
        }
        self.next_txn += other.next_txn;
    }

    pub fn extend(&mut self, other: CashflowLedger) {
        let day = other.entries.first().map_or(0, |e| e.day);
        self.append_day(other, day);
    }

    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.amount).sum()
    }

    pub fn party_total(&self, party: &str) -> f64 {
        self.entries.iter().filter(|e| e.party == party).map(|e| e.amount).sum()
    }

    pub fn sum_where(&self, f: impl Fn(&LedgerEntry) -> bool) -> f64 {
        self.entries.iter().filter(|e| f(e)).map(|e| e.amount).sum()
    }

    /// Transactions that are not a party entry plus an equal and opposite
    /// operator entry.
    pub fn audit(&self, tol: f64) -> Vec<String> {
        let mut by_txn: BTreeMap<usize, Vec<&LedgerEntry>> = BTreeMap::new();
        for e in &self.entries {
            by_txn.entry(e.txn).or_default().push(e);
        }
        let mut out = Vec::new();
        for (txn, es) in by_txn {
            let iso = es.iter().filter(|e| e.class == PartyClass::Iso).count();
            let sum: f64 = es.iter().map(|e| e.amount).sum();
            if es.len() != 2 || iso != 1 || sum.abs() > tol {
                let parts: Vec<String> = es.iter().map(|e| format!("{}:{:.6}", e.party, e.amount)).collect();
                out.push(format!("txn {txn}: {}", parts.join(", ")));
            }
        }
        out
    }

    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["day", "party", "class", "stage", "product", "interval", "amount"])?;
        for e in &self.entries {
            wtr.write_record([
                e.day.to_string(),
                e.party.clone(),
                e.class.as_str().to_string(),
                e.stage.as_str().to_string(),
                e.product.as_str().to_string(),
                e.interval.to_string(),
                format!("{:.6}", e.amount),
            ])?;
        }
        wtr.flush().map_err(|e| Error::Internal(e.to_string()))?;
        Ok(())
    }
}

/// Uniform-price DA energy: generators receive λ·p, accounts λ·pda (load
/// pays), and any DA slack is settled with a scarcity account.
pub fn settle_da_energy(system: &SystemModel, sol: &DaSolution, prices: &DaPrices) -> CashflowLedger {
    let mut l = CashflowLedger::new();
    for t in 0..sol.hours {
        let lam = prices.energy[t];
        for (i, g) in system.generators.iter().enumerate() {
            l.post(&g.id, PartyClass::Seller, Stage::Da, Product::Energy, t, lam * sol.p[i][t]);
        }
        for (a, id) in sol.account_ids.iter().enumerate() {
            let class = PartyClass::of(sol.account_constituents[a]);
            l.post(id, class, Stage::Da, Product::Energy, t, lam * sol.pda[a][t]);
        }
        l.post(
            DA_SLACK,
            PartyClass::Load,
            Stage::Da,
            Product::Energy,
            t,
            lam * (sol.shortfall[t] - sol.surplus[t]),
        );
    }
    l
}

/// FO premiums: sellers receive λ·hs, buyers pay λ·hd per tier; self-hedges
/// carry no cash.
pub fn settle_fo_premiums(system: &SystemModel, sol: &DaSolution, prices: &DaPrices) -> CashflowLedger {
    let mut l = CashflowLedger::new();
    let Some(fo) = &sol.fo else { return l };
    for t in 0..sol.hours {
        for r in 0..fo.prob_up.len() {
            for (dir, lam) in [(Direction::Up, prices.fo_up[r][t]), (Direction::Down, prices.fo_down[r][t])] {
                let product = Product::fo(dir);
                for (k, &g) in fo.seller_gen.iter().enumerate() {
                    let hs = if dir == Direction::Up { fo.hs_up[k][r][t] } else { fo.hs_dn[k][r][t] };
                    l.post(&system.generators[g].id, PartyClass::Seller, Stage::Da, product, t, lam * hs);
                }
                for (b, &a) in fo.buyer_account.iter().enumerate() {
                    let hd = if dir == Direction::Up { fo.hd_up[b][r][t] } else { fo.hd_dn[b][r][t] };
                    let class = PartyClass::of(sol.account_constituents[a]);
                    l.post(&sol.account_ids[a], class, Stage::Da, product, t, -lam * hd);
                }
            }
        }
    }
    l
}

/// Realised injection of a constituent; when only the aggregate net load is
/// given, load carries all of it.
pub fn realized_injection(actual: &ScenarioSet, scenario: usize, c: Constituent, k: usize) -> f64 {
    let aggregate_only = actual.get(Constituent::Load).is_none() && actual.get(Constituent::Aggregate).is_some();
    match c {
        Constituent::Load if aggregate_only => -actual.net_load(scenario, k),
        Constituent::Wind | Constituent::Solar if aggregate_only => 0.0,
        _ => actual.injection(c, scenario, k),
    }
}

fn check_actuals(actual: &ScenarioSet, sol: &DaSolution, rt: &RtResult) -> Result<usize> {
    let n = rt.intervals.len();
    if n == 0 || n % sol.hours != 0 {
        return Err(Error::input("RT result does not cover whole DA hours"));
    }
    if actual.num_intervals() < n {
        return Err(Error::input(format!(
            "actuals cover {} intervals, RT has {n}",
            actual.num_intervals()
        )));
    }
    Ok(n / sol.hours)
}

fn rt_price(rt: &RtResult, k: usize) -> Result<f64> {
    rt.intervals[k]
        .lambda
        .ok_or_else(|| Error::input(format!("RT interval {k} has no price (backend without duals)")))
}

/// RT deviations at λ^RT: generators on p^RT - p^DA, accounts on realised
/// minus scheduled injection, the scarcity account on shortage - surplus.
pub fn settle_rt_energy(
    system: &SystemModel,
    sol: &DaSolution,
    rt: &RtResult,
    actual: &ScenarioSet,
    scenario: usize,
) -> Result<CashflowLedger> {
    let iph = check_actuals(actual, sol, rt)?;
    let dt = 1.0 / iph as f64;
    let mut l = CashflowLedger::new();
    for (k, iv) in rt.intervals.iter().enumerate() {
        let h = k / iph;
        let lam = rt_price(rt, k)?;
        for (i, g) in system.generators.iter().enumerate() {
            l.post(&g.id, PartyClass::Seller, Stage::Rt, Product::Energy, k, lam * (iv.p[i] - sol.p[i][h]) * dt);
        }
        for (a, id) in sol.account_ids.iter().enumerate() {
            let c = sol.account_constituents[a];
            let dev = realized_injection(actual, scenario, c, k) - sol.pda[a][h];
            l.post(id, PartyClass::of(c), Stage::Rt, Product::Energy, k, lam * dev * dt);
        }
        l.post(RT_SLACK, PartyClass::Load, Stage::Rt, Product::Energy, k, lam * (iv.shortage - iv.surplus) * dt);
    }
    Ok(l)
}

/// Exercise of one buyer's options in one tier, direction and RT interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExerciseRecord {
    pub buyer: String,
    pub tier: usize,
    pub direction: Direction,
    pub interval: usize,
    pub price_trigger: bool,
    pub quantity_trigger: bool,
    pub held: f64,
    /// MW exercised (matched to in-the-money sellers).
    pub exercised: f64,
    /// Average payoff per exercised MW, $/MWh.
    pub payoff: f64,
}

/// MW of tier `[lo, hi]` crossed when the realisation moves from `pda`
/// towards `realized`, for the given direction.
pub fn tier_crossing(dir: Direction, lo: f64, hi: f64, pda: f64, realized: f64) -> f64 {
    match dir {
        Direction::Up => (hi.min(pda) - realized.max(lo)).max(0.0),
        Direction::Down => (hi.min(realized) - pda.max(lo)).max(0.0),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoPayoffs {
    pub records: Vec<ExerciseRecord>,
    pub ledger: CashflowLedger,
    /// Realisations outside the outermost levels (unhedged excess).
    pub flags: Vec<String>,
}

/// Dual-trigger exercise: a tier is exercised by the MW the realisation
/// crosses on the far side of the DA schedule, up to holdings, against each
/// pro-rata matched seller whose strike is in the money at λ^RT.
pub fn settle_fo_payoffs(
    system: &SystemModel,
    sol: &DaSolution,
    rt: &RtResult,
    actual: &ScenarioSet,
    scenario: usize,
) -> Result<FoPayoffs> {
    let mut out = FoPayoffs::default();
    let Some(fo) = &sol.fo else { return Ok(out) };
    let iph = check_actuals(actual, sol, rt)?;
    let dt = 1.0 / iph as f64;
    let n_tiers = fo.prob_up.len();
    for k in 0..rt.intervals.len() {
        let h = k / iph;
        let lam = rt_price(rt, k)?;
        for (b, &a) in fo.buyer_account.iter().enumerate() {
            let id = &sol.account_ids[a];
            let class = PartyClass::of(sol.account_constituents[a]);
            let levels = &fo.levels[b];
            let pda = sol.pda[a][h];
            let realized = realized_injection(actual, scenario, sol.account_constituents[a], k);
            let (lo, hi) = (levels[0][h], levels[n_tiers][h]);
            if realized < lo - 1e-9 || realized > hi + 1e-9 {
                out.flags.push(format!(
                    "{id} interval {k}: realised {realized:.3} outside [{lo:.3}, {hi:.3}], excess unhedged"
                ));
            }
            for r in 0..n_tiers {
                for dir in [Direction::Up, Direction::Down] {
                    let held = if dir == Direction::Up { fo.hd_up[b][r][h] } else { fo.hd_dn[b][r][h] };
                    let crossed = tier_crossing(dir, levels[r][h], levels[r + 1][h], pda, realized);
                    let quantity = crossed > 1e-9;
                    if held <= 1e-9 && !quantity {
                        continue;
                    }
                    let ex = crossed.min(held);
                    let holdings: Vec<f64> = (0..fo.seller_gen.len())
                        .map(|s| if dir == Direction::Up { fo.hs_up[s][r][h] } else { fo.hs_dn[s][r][h] })
                        .collect();
                    let total: f64 = holdings.iter().sum();
                    let mut exercised = 0.0;
                    let mut paid = 0.0;
                    let mut price = false;
                    for (s, &hs) in holdings.iter().enumerate() {
                        if hs <= 0.0 || total <= 0.0 {
                            continue;
                        }
                        let per_mw = match dir {
                            Direction::Up => lam - fo.strike_up[s],
                            Direction::Down => fo.strike_down[s] - lam,
                        };
                        if per_mw <= 0.0 {
                            continue;
                        }
                        price = true;
                        let mw = ex * hs / total;
                        exercised += mw;
                        paid += mw * per_mw;
                        let amount = mw * per_mw * dt;
                        let seller = &system.generators[fo.seller_gen[s]].id;
                        out.ledger.post(seller, PartyClass::Seller, Stage::Rt, Product::fo(dir), k, -amount);
                        out.ledger.post(id, class, Stage::Rt, Product::fo(dir), k, amount);
                    }
                    out.records.push(ExerciseRecord {
                        buyer: id.clone(),
                        tier: r,
                        direction: dir,
                        interval: k,
                        price_trigger: price,
                        quantity_trigger: quantity,
                        held,
                        exercised,
                        payoff: if exercised > 0.0 { paid / exercised } else { 0.0 },
                    });
                }
            }
        }
    }
    Ok(out)
}

/// IR: suppliers paid price × award in DA; in RT each constituent pays the
/// DA price of the direction per MW of its directional imbalance, with the
/// total per direction and interval capped at that interval's prorated DA
/// procurement cost.
pub fn settle_ir(
    system: &SystemModel,
    sol: &DaSolution,
    prices: &DaPrices,
    rt_intervals_per_hour: usize,
    actual: &ScenarioSet,
    scenario: usize,
) -> Result<CashflowLedger> {
    let mut l = CashflowLedger::new();
    if sol.ir.is_empty() {
        return Ok(l);
    }
    let iph = rt_intervals_per_hour;
    if actual.num_intervals() < sol.hours * iph {
        return Err(Error::input("actuals do not cover the day for IR settlement"));
    }
    let dt = 1.0 / iph as f64;
    let mut procured = BTreeMap::new();
    for t in 0..sol.hours {
        for (a, award) in sol.ir.iter().enumerate() {
            let price = prices.ir_product[a][t];
            for (i, g) in system.generators.iter().enumerate() {
                let amt = price * award.award[i][t];
                l.post(&g.id, PartyClass::Seller, Stage::Da, Product::ir(award.direction), t, amt);
                *procured.entry((award.direction, t)).or_insert(0.0) += amt;
            }
        }
    }
    for k in 0..sol.hours * iph {
        let h = k / iph;
        for dir in [Direction::Up, Direction::Down] {
            let rate = prices.ir_price(sol, dir, h);
            let cap = procured.get(&(dir, h)).copied().unwrap_or(0.0) * dt;
            let charges: Vec<f64> = (0..sol.account_ids.len())
                .map(|a| {
                    let dev = realized_injection(actual, scenario, sol.account_constituents[a], k) - sol.pda[a][h];
                    let imbalance = match dir {
                        Direction::Up => (-dev).max(0.0),
                        Direction::Down => dev.max(0.0),
                    };
                    rate * imbalance * dt
                })
                .collect();
            let total: f64 = charges.iter().sum();
            let scale = if total > cap && total > 0.0 { cap / total } else { 1.0 };
            for (a, c) in charges.iter().enumerate() {
                let class = PartyClass::of(sol.account_constituents[a]);
                l.post(&sol.account_ids[a], class, Stage::Rt, Product::ir(dir), k, -c * scale);
            }
        }
    }
    Ok(l)
}

/// The operator's net by stage and product.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IsoPosition {
    pub by_stage_product: BTreeMap<(Stage, Product), f64>,
    pub total: f64,
    /// RT IR recovery over DA IR cost; `None` without IR procurement.
    pub ir_recovery_ratio: Option<f64>,
}

impl IsoPosition {
    pub fn get(&self, stage: Stage, product: Product) -> f64 {
        self.by_stage_product.get(&(stage, product)).copied().unwrap_or(0.0)
    }

    pub fn fo_total(&self) -> f64 {
        [Product::FoUp, Product::FoDown]
            .iter()
            .flat_map(|&p| [Stage::Da, Stage::Rt].map(|s| self.get(s, p)))
            .sum()
    }
}

impl fmt::Display for IsoPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<10} {:>16} {:>16}", "product", "da", "rt")?;
        for p in [Product::Energy, Product::FoUp, Product::FoDown, Product::IrUp, Product::IrDown] {
            writeln!(f, "{:<10} {:>16.2} {:>16.2}", p.as_str(), self.get(Stage::Da, p), self.get(Stage::Rt, p))?;
        }
        write!(f, "{:<10} {:>16.2}", "total", self.total)
    }
}

/// Operator position from a ledger; fails when the ledger is not
/// double-entry.
pub fn iso_position(ledger: &CashflowLedger) -> Result<IsoPosition> {
    let bad = ledger.audit(1e-6);
    if !bad.is_empty() {
        return Err(Error::Audit(format!("unbalanced ledger: {}", bad.join("; "))));
    }
    let mut pos = IsoPosition::default();
    for e in ledger.entries.iter().filter(|e| e.class == PartyClass::Iso) {
        *pos.by_stage_product.entry((e.stage, e.product)).or_insert(0.0) += e.amount;
        pos.total += e.amount;
    }
    let da_cost = -(pos.get(Stage::Da, Product::IrUp) + pos.get(Stage::Da, Product::IrDown));
    let rt_rec = pos.get(Stage::Rt, Product::IrUp) + pos.get(Stage::Rt, Product::IrDown);
    pos.ir_recovery_ratio = (da_cost > 0.0).then(|| rt_rec / da_cost);
    Ok(pos)
}

/// Mean and sample standard deviation (0 for a single sample).
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (0.0, 0.0);
    }
    let m = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (m, 0.0);
    }
    let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
    (m, var.sqrt())
}

/// Daily cashflows of one party class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CashflowStats {
    pub class: PartyClass,
    pub days: Vec<usize>,
    /// Per `(stage, product)`, the class's daily totals.
    pub components: BTreeMap<(Stage, Product), Vec<f64>>,
    pub totals: Vec<f64>,
    /// Daily totals minus RT incremental production costs.
    pub margins: Vec<f64>,
}

impl CashflowStats {
    pub fn component_stats(&self, stage: Stage, product: Product) -> (f64, f64) {
        self.components.get(&(stage, product)).map_or((0.0, 0.0), |v| mean_std(v))
    }

    pub fn total_stats(&self) -> (f64, f64) {
        mean_std(&self.totals)
    }

    pub fn margin_stats(&self) -> (f64, f64) {
        mean_std(&self.margins)
    }
}

/// Per-day cashflows of a class, with `rt_costs[day]` (the class's RT
/// incremental production cost) subtracted for margins.
pub fn aggregate_cashflows(ledger: &CashflowLedger, class: PartyClass, rt_costs: &BTreeMap<usize, f64>) -> CashflowStats {
    let mut days: Vec<usize> = ledger.entries.iter().map(|e| e.day).chain(rt_costs.keys().copied()).collect();
    days.sort_unstable();
    days.dedup();
    let idx: BTreeMap<usize, usize> = days.iter().enumerate().map(|(i, &d)| (d, i)).collect();
    let mut components: BTreeMap<(Stage, Product), Vec<f64>> = BTreeMap::new();
    let mut totals = vec![0.0; days.len()];
    for e in ledger.entries.iter().filter(|e| e.class == class) {
        let d = idx[&e.day];
        components.entry((e.stage, e.product)).or_insert_with(|| vec![0.0; days.len()])[d] += e.amount;
        totals[d] += e.amount;
    }
    let margins = days
        .iter()
        .zip(&totals)
        .map(|(d, t)| t - rt_costs.get(d).copied().unwrap_or(0.0))
        .collect();
    CashflowStats {
        class,
        days,
        components,
        totals,
        margins,
    }
}
