//! Physical and financial description of a test system: generators,
//! uncertain accounts, imbalance-reserve products and market settings.
//!
//! A whole [`SystemModel`] is one TOML document; see `docs/system.md` in the
//! repository root for the schema.

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::TierStructure;

const TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CommitClass {
    /// Commitment fixed in the day-ahead market.
    DaOnly,
    /// May be (re)committed by the hour-ahead RT commitment.
    FastStart,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostSegment {
    /// MW
    pub width: f64,
    /// $/MWh
    pub cost: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub id: String,
    pub p_min: f64,
    pub p_max: f64,
    /// MW per hour.
    pub ramp_rate: f64,
    /// Hours.
    #[serde(default = "one")]
    pub min_up_time: u32,
    #[serde(default = "one")]
    pub min_down_time: u32,
    #[serde(default)]
    pub startup_cost: f64,
    /// $ per hour online.
    #[serde(default)]
    pub no_load_cost: f64,
    pub cost_curve: Vec<CostSegment>,
    pub commit_class: CommitClass,
    /// Minutes; only meaningful for fast-start units.
    #[serde(default)]
    pub start_lead_time: f64,
    /// Initial status before hour 0 (true = online at `p_min`).
    #[serde(default)]
    pub initially_on: bool,
}

fn one() -> u32 {
    1
}

impl Generator {
    pub fn is_fast(&self) -> bool {
        self.commit_class == CommitClass::FastStart
    }

    /// Output a fast unit can reach within one hour of a start.
    pub fn fast_start_capacity(&self) -> f64 {
        self.p_max.min(self.p_min + self.ramp_rate)
    }

    pub fn min_marginal_cost(&self) -> Option<f64> {
        self.cost_curve.iter().map(|s| s.cost).reduce(f64::min)
    }

    pub fn max_marginal_cost(&self) -> Option<f64> {
        self.cost_curve.iter().map(|s| s.cost).reduce(f64::max)
    }

    /// Production cost of `p` MW for one hour, excluding no-load.
    pub fn energy_cost(&self, p: f64) -> f64 {
        let mut left = p.max(0.0);
        let mut cost = 0.0;
        for seg in &self.cost_curve {
            let take = left.min(seg.width);
            cost += take * seg.cost;
            left -= take;
        }
        cost
    }
}

/// Strike prices a generator commits to for flexibility it sells.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexSellerParams {
    pub generator: String,
    /// $/MWh for incremental RT energy.
    pub strike_up: f64,
    /// $/MWh for decremental RT energy.
    pub strike_down: f64,
    /// $/MW offered for holding capacity.
    #[serde(default)]
    pub capacity_bid: f64,
}

/// Default strikes: the most and least expensive segment of the DA curve.
pub fn derive_strike_prices(gen: &Generator) -> Result<FlexSellerParams> {
    match (gen.min_marginal_cost(), gen.max_marginal_cost()) {
        (Some(lo), Some(hi)) => Ok(FlexSellerParams {
            generator: gen.id.clone(),
            strike_up: hi,
            strike_down: lo,
            capacity_bid: 0.0,
        }),
        _ => Err(Error::input(format!("generator {}: empty cost curve", gen.id))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Constituent {
    Load,
    Wind,
    Solar,
    /// Load net of wind and solar under one account.
    Aggregate,
}

impl Constituent {
    pub fn as_str(self) -> &'static str {
        match self {
            Constituent::Load => "load",
            Constituent::Wind => "wind",
            Constituent::Solar => "solar",
            Constituent::Aggregate => "aggregate",
        }
    }

    /// Load-like constituents inject negative MW.
    pub fn is_withdrawal(self) -> bool {
        matches!(self, Constituent::Load | Constituent::Aggregate)
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "load" => Ok(Constituent::Load),
            "wind" => Ok(Constituent::Wind),
            "solar" => Ok(Constituent::Solar),
            "aggregate" | "net_load" => Ok(Constituent::Aggregate),
            other => Err(Error::input(format!("unknown constituent {other:?}"))),
        }
    }
}

impl fmt::Display for Constituent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A buyer of flexibility whose output is uncertain. Availability levels
/// live in [`TierStructure`], keyed by `id`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UncertainAccount {
    pub id: String,
    pub constituent: Constituent,
    /// $/MWh value of DA energy for this account (0 for renewables).
    #[serde(default)]
    pub da_cost: f64,
    /// $/MWh cost of covering an up tier internally. `None`: deepest up-tier
    /// probability times the RT spinning scarcity price.
    #[serde(default)]
    pub self_hedge_cost_up: Option<f64>,
    #[serde(default)]
    pub self_hedge_cost_down: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Up,
    Down,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::Up => "up",
            Direction::Down => "down",
        }
    }
}

/// One step of a reserve demand curve. The quantity is the net-load width
/// between the two forecast percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandStep {
    pub lower_pct: f64,
    pub upper_pct: f64,
    /// $/MW
    pub price: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReserveProductDef {
    pub name: String,
    pub direction: Direction,
    /// Minutes.
    pub response_time: f64,
    /// Highest price first.
    pub demand_steps: Vec<DemandStep>,
    /// Awards of products with a higher rank also fill this product's steps.
    #[serde(default)]
    pub cascade_rank: i32,
    /// Share of hourly ramp reserved per MW awarded. `None`: response time / 60.
    #[serde(default)]
    pub beta: Option<f64>,
}

impl ReserveProductDef {
    pub fn beta(&self) -> f64 {
        self.beta.unwrap_or(self.response_time / 60.0)
    }
}

/// Imbalance-reserve products used when none are configured. Up prices for
/// the two outermost steps and all down prices are assumptions, flagged in
/// study reports.
pub fn default_ir_products() -> Vec<ReserveProductDef> {
    let up = vec![
        DemandStep { lower_pct: 50.0, upper_pct: 65.0, price: 1200.0 },
        DemandStep { lower_pct: 65.0, upper_pct: 80.0, price: 1000.0 },
        DemandStep { lower_pct: 80.0, upper_pct: 90.0, price: 800.0 },
        DemandStep { lower_pct: 90.0, upper_pct: 95.0, price: 600.0 },
    ];
    let down = vec![
        DemandStep { lower_pct: 35.0, upper_pct: 50.0, price: 1200.0 },
        DemandStep { lower_pct: 20.0, upper_pct: 35.0, price: 1000.0 },
        DemandStep { lower_pct: 10.0, upper_pct: 20.0, price: 800.0 },
        DemandStep { lower_pct: 5.0, upper_pct: 10.0, price: 600.0 },
    ];
    vec![
        ReserveProductDef {
            name: "ir_up".into(),
            direction: Direction::Up,
            response_time: 60.0,
            demand_steps: up,
            cascade_rank: 0,
            beta: None,
        },
        ReserveProductDef {
            name: "ir_down".into(),
            direction: Direction::Down,
            response_time: 60.0,
            demand_steps: down,
            cascade_rank: 0,
            beta: None,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoAccountMode {
    SingleAggregate,
    PerConstituent,
}

/// How tier exercise probabilities follow from the level percentiles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbabilityRule {
    /// Probability that the realisation fully crosses the tier.
    FullCrossing,
    /// Probability of reaching the tier midpoint.
    Midpoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub da_hours: usize,
    /// Minutes between the RTC solve and the first hour it commits.
    pub rtc_lead: f64,
    pub rtc_horizon_hours: usize,
    /// Minutes.
    pub rt_resolution: f64,
    /// Ascending, in (0, 100).
    pub tier_percentiles: Vec<f64>,
    pub probability_rule: ProbabilityRule,
    /// $/MW penalty on exercisable FO volume.
    pub fo_penalty_m: f64,
    pub mip_gap: f64,
    /// Optional solve time limit per MILP, seconds.
    pub time_limit: Option<f64>,
    pub solver_seed: u32,
    /// MW of RT spinning reserve.
    pub rt_reserve_requirement: f64,
    /// $/MWh
    pub rt_spin_scarcity: f64,
    /// $/MWh penalty on unserved energy in RT.
    pub shortage_penalty: f64,
    /// $/MWh, negative: the value of over-generation slack.
    pub surplus_penalty: f64,
    /// DA unserved-energy penalty; `None` makes DA shortfall infeasible.
    pub da_shortfall_penalty: Option<f64>,
    /// DA over-generation penalty; `None` makes DA surplus infeasible.
    pub da_surplus_penalty: Option<f64>,
    pub fo_account_mode: FoAccountMode,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            da_hours: 24,
            rtc_lead: 60.0,
            rtc_horizon_hours: 3,
            rt_resolution: 15.0,
            tier_percentiles: vec![5.0, 10.0, 20.0, 35.0, 50.0, 65.0, 80.0, 90.0, 95.0],
            probability_rule: ProbabilityRule::FullCrossing,
            fo_penalty_m: 2.8,
            mip_gap: 0.005,
            time_limit: None,
            solver_seed: 0,
            rt_reserve_requirement: 0.0,
            rt_spin_scarcity: 4500.0,
            shortage_penalty: 9000.0,
            surplus_penalty: -250.0,
            da_shortfall_penalty: Some(9000.0),
            da_surplus_penalty: Some(250.0),
            fo_account_mode: FoAccountMode::SingleAggregate,
        }
    }
}

impl MarketConfig {
    pub fn rt_intervals_per_hour(&self) -> usize {
        (60.0 / self.rt_resolution).round() as usize
    }

    /// Hours per RT interval.
    pub fn rt_dt(&self) -> f64 {
        self.rt_resolution / 60.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemModel {
    #[serde(default)]
    pub name: String,
    pub generators: Vec<Generator>,
    #[serde(default)]
    pub accounts: Vec<UncertainAccount>,
    #[serde(default = "default_ir_products")]
    pub reserve_products: Vec<ReserveProductDef>,
    #[serde(default)]
    pub strike_overrides: Vec<FlexSellerParams>,
    #[serde(default)]
    pub market: MarketConfig,
}

impl SystemModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::input(format!("system file: {e}")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("system model serialises")
    }

    pub fn generator_index(&self, id: &str) -> Option<usize> {
        self.generators.iter().position(|g| g.id == id)
    }

    /// Strike prices for every generator: overrides where given, otherwise
    /// derived from the cost curve.
    pub fn seller_params(&self) -> Result<Vec<FlexSellerParams>> {
        self.generators
            .iter()
            .map(|g| match self.strike_overrides.iter().find(|o| o.generator == g.id) {
                Some(o) => Ok(o.clone()),
                None => derive_strike_prices(g),
            })
            .collect()
    }

    /// Accounts representing load, wind and solar individually. Missing ones
    /// are filled with zero-cost defaults.
    pub fn constituent_accounts(&self) -> Vec<UncertainAccount> {
        [Constituent::Load, Constituent::Wind, Constituent::Solar]
            .into_iter()
            .map(|c| {
                self.accounts
                    .iter()
                    .find(|a| a.constituent == c)
                    .cloned()
                    .unwrap_or_else(|| UncertainAccount {
                        id: c.as_str().to_string(),
                        constituent: c,
                        da_cost: 0.0,
                        self_hedge_cost_up: None,
                        self_hedge_cost_down: 0.0,
                    })
            })
            .collect()
    }

    /// The accounts that buy flexibility under the configured account mode.
    pub fn fo_buyers(&self) -> Vec<UncertainAccount> {
        match self.market.fo_account_mode {
            FoAccountMode::PerConstituent => self.constituent_accounts(),
            FoAccountMode::SingleAggregate => vec![self
                .accounts
                .iter()
                .find(|a| a.constituent == Constituent::Aggregate)
                .cloned()
                .unwrap_or_else(|| UncertainAccount {
                    id: "aggregate".into(),
                    constituent: Constituent::Aggregate,
                    da_cost: 0.0,
                    self_hedge_cost_up: None,
                    self_hedge_cost_down: 0.0,
                })],
        }
    }

    pub fn total_capacity(&self) -> f64 {
        self.generators.iter().map(|g| g.p_max).sum()
    }
}

/// One broken invariant, with where it was found.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub location: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Every invariant the model (and, when given, the account levels) breaks.
pub fn validate_system(model: &SystemModel, tiers: Option<&TierStructure>) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: String, message: String| out.push(Violation { location, message });

    let mut seen = BTreeSet::new();
    for g in &model.generators {
        let loc = format!("generator {}", g.id);
        if !seen.insert(g.id.as_str()) {
            push(loc.clone(), "duplicate id".into());
        }
        if !(0.0 <= g.p_min && g.p_min <= g.p_max) {
            push(loc.clone(), format!("need 0 <= p_min <= p_max, got {} and {}", g.p_min, g.p_max));
        }
        if g.ramp_rate < 0.0 {
            push(loc.clone(), format!("negative ramp rate {}", g.ramp_rate));
        }
        if g.startup_cost < 0.0 || g.no_load_cost < 0.0 {
            push(loc.clone(), "negative startup or no-load cost".into());
        }
        if g.cost_curve.is_empty() {
            push(loc.clone(), "empty cost curve".into());
        }
        if g.cost_curve.windows(2).any(|w| w[1].cost < w[0].cost) {
            push(loc.clone(), "cost curve marginal costs decrease".into());
        }
        if g.cost_curve.iter().any(|s| s.width < 0.0) {
            push(loc.clone(), "negative segment width".into());
        }
        let width: f64 = g.cost_curve.iter().map(|s| s.width).sum();
        if (width - g.p_max).abs() > TOL {
            push(loc.clone(), format!("segment widths sum to {width}, p_max is {}", g.p_max));
        }
        if g.is_fast() && g.start_lead_time > model.market.rtc_lead {
            push(
                loc.clone(),
                format!(
                    "fast-start lead time {} min exceeds the RTC lead of {} min",
                    g.start_lead_time, model.market.rtc_lead
                ),
            );
        }
    }
    for o in &model.strike_overrides {
        if model.generator_index(&o.generator).is_none() {
            push(format!("strike override {}", o.generator), "unknown generator".into());
        }
        if o.strike_down > o.strike_up {
            push(format!("strike override {}", o.generator), "strike_down above strike_up".into());
        }
    }

    let mut ids = BTreeSet::new();
    for a in &model.accounts {
        if !ids.insert(a.id.as_str()) {
            push(format!("account {}", a.id), "duplicate id".into());
        }
    }

    for p in &model.reserve_products {
        let loc = format!("reserve product {}", p.name);
        if p.beta() < 0.0 {
            push(loc.clone(), format!("negative beta {}", p.beta()));
        }
        if p.demand_steps.windows(2).any(|w| w[1].price >= w[0].price) {
            push(loc.clone(), "scarcity prices must strictly decrease along the steps".into());
        }
        for (j, s) in p.demand_steps.iter().enumerate() {
            if !(0.0 < s.lower_pct && s.lower_pct < s.upper_pct && s.upper_pct < 100.0) {
                push(format!("{loc} step {j}"), "percentile pair must satisfy 0 < lower < upper < 100".into());
            }
        }
        if let Some((a, b)) = overlapping_steps(&p.demand_steps) {
            push(loc.clone(), format!("steps {a} and {b} overlap"));
        }
    }

    let m = &model.market;
    if m.tier_percentiles.len() < 2 {
        push("market".into(), "need at least two tier percentiles".into());
    }
    if m.tier_percentiles.windows(2).any(|w| w[1] <= w[0]) {
        push("market".into(), "tier percentiles must strictly increase".into());
    }
    if m.tier_percentiles.iter().any(|&p| !(0.0 < p && p < 100.0)) {
        push("market".into(), "tier percentiles must lie in (0, 100)".into());
    }
    if m.mip_gap < 0.0 {
        push("market".into(), format!("negative mip gap {}", m.mip_gap));
    }
    if m.rt_resolution <= 0.0 || (60.0 / m.rt_resolution).fract().abs() > 1e-9 {
        push("market".into(), "RT resolution must divide an hour".into());
    }

    if let Some(t) = tiers {
        // indices are zero-based
        for acc in &t.accounts {
            for (s, pair) in acc.levels.windows(2).enumerate() {
                for (h, (lo, hi)) in pair[0].iter().zip(&pair[1]).enumerate() {
                    if hi < lo {
                        push(
                            format!("account {} level s={} t={h}", acc.account, s + 1),
                            format!("levels not ascending ({hi} < {lo})"),
                        );
                    }
                }
            }
        }
    }
    out
}

/// First pair of steps whose percentile ranges overlap, if any.
pub(crate) fn overlapping_steps(steps: &[DemandStep]) -> Option<(usize, usize)> {
    for i in 0..steps.len() {
        for j in i + 1..steps.len() {
            let (a, b) = (&steps[i], &steps[j]);
            if a.lower_pct < b.upper_pct - TOL && b.lower_pct < a.upper_pct - TOL {
                return Some((i, j));
            }
        }
    }
    None
}
