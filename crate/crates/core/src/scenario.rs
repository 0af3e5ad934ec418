//! Probabilistic inputs: constituent scenarios, percentile tables, discrete
//! availability levels and tiers, characteristic-week clustering, forecast
//! diagnostics and a synthetic scenario generator.

use std::collections::BTreeMap;
use std::io::{Read, Write};

use chrono::{Duration, NaiveDateTime};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{Constituent, MarketConfig, ProbabilityRule, UncertainAccount};

const TS_FORMAT: &str = "%Y-%m-%dT%H:%M";

/// Constituent scenarios on a shared time axis.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSet {
    /// Minutes per interval.
    pub resolution: f64,
    pub start: NaiveDateTime,
    /// Π_s, one per scenario.
    pub probabilities: Vec<f64>,
    /// Per constituent: `[scenario][interval]` MW.
    pub series: BTreeMap<Constituent, Vec<Vec<f64>>>,
}

impl ScenarioSet {
    /// Equiprobable set; every constituent must have the same shape.
    pub fn new(
        resolution: f64,
        start: NaiveDateTime,
        series: BTreeMap<Constituent, Vec<Vec<f64>>>,
    ) -> Result<Self> {
        let n = series.values().next().map_or(0, |m| m.len());
        let set = Self {
            resolution,
            start,
            probabilities: vec![1.0 / n.max(1) as f64; n],
            series,
        };
        set.check()?;
        Ok(set)
    }

    pub fn with_probabilities(mut self, probabilities: Vec<f64>) -> Result<Self> {
        self.probabilities = probabilities;
        self.check()?;
        Ok(self)
    }

    fn check(&self) -> Result<()> {
        let n = self.probabilities.len();
        let t = self.num_intervals();
        for (c, m) in &self.series {
            if m.len() != n {
                return Err(Error::input(format!("{c}: {} scenarios, expected {n}", m.len())));
            }
            if m.iter().any(|row| row.len() != t) {
                return Err(Error::input(format!("{c}: scenarios do not share the time axis")));
            }
        }
        if self.probabilities.iter().any(|&p| p < 0.0) {
            return Err(Error::input("negative scenario probability"));
        }
        let total: f64 = self.probabilities.iter().sum();
        if n > 0 && (total - 1.0).abs() > 1e-9 {
            return Err(Error::input(format!("scenario probabilities sum to {total}")));
        }
        if self.resolution <= 0.0 {
            return Err(Error::input("non-positive resolution"));
        }
        Ok(())
    }

    pub fn num_scenarios(&self) -> usize {
        self.probabilities.len()
    }

    pub fn num_intervals(&self) -> usize {
        self.series.values().next().and_then(|m| m.first()).map_or(0, |r| r.len())
    }

    pub fn get(&self, c: Constituent) -> Option<&Vec<Vec<f64>>> {
        self.series.get(&c)
    }

    /// Value of a constituent, 0 when the constituent is absent.
    pub fn value(&self, c: Constituent, scenario: usize, interval: usize) -> f64 {
        self.series.get(&c).map_or(0.0, |m| m[scenario][interval])
    }

    /// Load minus wind minus solar; the `aggregate` series when only that is given.
    pub fn net_load(&self, scenario: usize, interval: usize) -> f64 {
        if let Some(m) = self.series.get(&Constituent::Aggregate) {
            return m[scenario][interval];
        }
        self.value(Constituent::Load, scenario, interval)
            - self.value(Constituent::Wind, scenario, interval)
            - self.value(Constituent::Solar, scenario, interval)
    }

    /// Realised net injection of an account: negative for load-like constituents.
    pub fn injection(&self, c: Constituent, scenario: usize, interval: usize) -> f64 {
        match c {
            Constituent::Aggregate => -self.net_load(scenario, interval),
            Constituent::Load => -self.value(c, scenario, interval),
            _ => self.value(c, scenario, interval),
        }
    }

    pub fn timestamp(&self, interval: usize) -> NaiveDateTime {
        self.start + Duration::seconds((self.resolution * 60.0 * interval as f64).round() as i64)
    }

    /// Average consecutive intervals up to a coarser resolution.
    pub fn resample(&self, resolution: f64) -> Result<ScenarioSet> {
        let ratio = resolution / self.resolution;
        let k = ratio.round() as usize;
        if k == 0 || (ratio - k as f64).abs() > 1e-9 || self.num_intervals() % k != 0 {
            return Err(Error::input(format!(
                "cannot resample {} min x {} to {resolution} min",
                self.resolution,
                self.num_intervals()
            )));
        }
        let series = self
            .series
            .iter()
            .map(|(c, m)| {
                let m2 = m
                    .iter()
                    .map(|row| row.chunks(k).map(|ch| ch.iter().sum::<f64>() / k as f64).collect())
                    .collect();
                (*c, m2)
            })
            .collect();
        Ok(ScenarioSet {
            resolution,
            start: self.start,
            probabilities: self.probabilities.clone(),
            series,
        })
    }

    /// Intervals `[from, to)` of every scenario.
    pub fn window(&self, from: usize, to: usize) -> ScenarioSet {
        ScenarioSet {
            resolution: self.resolution,
            start: self.timestamp(from),
            probabilities: self.probabilities.clone(),
            series: self
                .series
                .iter()
                .map(|(c, m)| (*c, m.iter().map(|r| r[from..to].to_vec()).collect()))
                .collect(),
        }
    }

    /// Single-scenario set holding scenario `s`.
    pub fn scenario(&self, s: usize) -> ScenarioSet {
        ScenarioSet {
            resolution: self.resolution,
            start: self.start,
            probabilities: vec![1.0],
            series: self.series.iter().map(|(c, m)| (*c, vec![m[s].clone()])).collect(),
        }
    }

    /// Scenarios `[from, to)`, renormalised.
    pub fn subset(&self, from: usize, to: usize) -> ScenarioSet {
        let total: f64 = self.probabilities[from..to].iter().sum();
        ScenarioSet {
            resolution: self.resolution,
            start: self.start,
            probabilities: self.probabilities[from..to].iter().map(|p| p / total).collect(),
            series: self.series.iter().map(|(c, m)| (*c, m[from..to].to_vec())).collect(),
        }
    }

    /// CSV with columns `constituent,scenario,timestamp,mw`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["constituent", "scenario", "timestamp", "mw"])?;
        for (c, m) in &self.series {
            for (s, row) in m.iter().enumerate() {
                for (t, v) in row.iter().enumerate() {
                    wr.write_record([
                        c.as_str().to_string(),
                        s.to_string(),
                        self.timestamp(t).format(TS_FORMAT).to_string(),
                        v.to_string(),
                    ])?;
                }
            }
        }
        wr.flush().map_err(|e| Error::io("<csv>", e))?;
        Ok(())
    }

    /// Inverse of [`ScenarioSet::write_csv`]. Rows may come in any order; the
    /// resolution is inferred from the first two distinct timestamps.
    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(r);
        let mut raw: BTreeMap<(Constituent, usize, NaiveDateTime), f64> = BTreeMap::new();
        for rec in rd.records() {
            let rec = rec?;
            if rec.len() != 4 {
                return Err(Error::input(format!("scenario csv: expected 4 columns, got {}", rec.len())));
            }
            let c = Constituent::parse(&rec[0])?;
            let s: usize = rec[1].trim().parse().map_err(|_| Error::input(format!("bad scenario id {:?}", &rec[1])))?;
            let ts = NaiveDateTime::parse_from_str(rec[2].trim(), TS_FORMAT)
                .map_err(|e| Error::input(format!("bad timestamp {:?}: {e}", &rec[2])))?;
            let v: f64 = rec[3].trim().parse().map_err(|_| Error::input(format!("bad MW value {:?}", &rec[3])))?;
            raw.insert((c, s, ts), v);
        }
        let mut stamps: Vec<NaiveDateTime> = raw.keys().map(|k| k.2).collect();
        stamps.sort();
        stamps.dedup();
        let start = *stamps.first().ok_or_else(|| Error::input("scenario csv is empty"))?;
        let resolution = if stamps.len() > 1 {
            (stamps[1] - stamps[0]).num_seconds() as f64 / 60.0
        } else {
            60.0
        };
        let n = raw.keys().map(|k| k.1).max().unwrap_or(0) + 1;
        let mut series: BTreeMap<Constituent, Vec<Vec<f64>>> = BTreeMap::new();
        for ((c, s, ts), v) in raw {
            let m = series.entry(c).or_insert_with(|| vec![vec![f64::NAN; stamps.len()]; n]);
            let t = stamps.binary_search(&ts).expect("timestamp collected above");
            m[s][t] = v;
        }
        for (c, m) in &series {
            if m.iter().flatten().any(|v| v.is_nan()) {
                return Err(Error::input(format!("scenario csv: {c} has gaps")));
            }
        }
        ScenarioSet::new(resolution, start, series)
    }
}

/// MW value of a quantity at each requested percentile, per interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PercentileTable {
    pub quantity: String,
    pub percentiles: Vec<f64>,
    /// `[interval][percentile index]`
    pub values: Vec<Vec<f64>>,
}

impl PercentileTable {
    pub fn num_intervals(&self) -> usize {
        self.values.len()
    }

    fn index_of(&self, pct: f64) -> Option<usize> {
        self.percentiles.iter().position(|&p| (p - pct).abs() < 1e-9)
    }

    pub fn value(&self, interval: usize, pct: f64) -> Option<f64> {
        self.index_of(pct).map(|j| self.values[interval][j])
    }

    pub fn require(&self, interval: usize, pct: f64) -> Result<f64> {
        self.value(interval, pct)
            .ok_or_else(|| Error::input(format!("{}: percentile {pct} not tabulated", self.quantity)))
    }

    /// Column at one percentile across all intervals.
    pub fn column(&self, pct: f64) -> Result<Vec<f64>> {
        let j = self
            .index_of(pct)
            .ok_or_else(|| Error::input(format!("{}: percentile {pct} not tabulated", self.quantity)))?;
        Ok(self.values.iter().map(|r| r[j]).collect())
    }

    /// Same shape, all zeros.
    pub fn zeros_like(&self, quantity: &str) -> PercentileTable {
        PercentileTable {
            quantity: quantity.into(),
            percentiles: self.percentiles.clone(),
            values: vec![vec![0.0; self.percentiles.len()]; self.values.len()],
        }
    }

    /// Percentile at which `x` sits in interval `t`, by linear interpolation
    /// between tabulated points, clamped to the table's range. The flag is
    /// true when clamping happened.
    pub fn percentile_of(&self, t: usize, x: f64) -> (f64, bool) {
        let row = &self.values[t];
        let pcts = &self.percentiles;
        let last = row.len() - 1;
        if x < row[0] {
            return (pcts[0], true);
        }
        if x > row[last] {
            return (pcts[last], true);
        }
        // Flat stretches map to their middle percentile.
        let lo = row.iter().position(|&v| v >= x).unwrap_or(last);
        if (row[lo] - x).abs() < 1e-12 {
            let hi = row.iter().rposition(|&v| (v - x).abs() < 1e-12).unwrap_or(lo);
            return ((pcts[lo] + pcts[hi]) / 2.0, false);
        }
        let (a, b) = (lo - 1, lo);
        let w = (x - row[a]) / (row[b] - row[a]);
        (pcts[a] + w * (pcts[b] - pcts[a]), false)
    }
}

/// Nearest-rank quantile of a probability-weighted sample: the smallest value
/// whose cumulative probability reaches `pct / 100`.
pub fn weighted_quantile(values: &[f64], probs: &[f64], pct: f64) -> f64 {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    quantile_sorted(&idx, values, probs, pct)
}

fn quantile_sorted(idx: &[usize], values: &[f64], probs: &[f64], pct: f64) -> f64 {
    let n = idx.len();
    let uniform = probs.windows(2).all(|w| w[0] == w[1]);
    if uniform {
        // integer arithmetic keeps equiprobable sets exact
        let rank = ((pct / 100.0) * n as f64 - 1e-9).ceil().max(1.0) as usize;
        return values[idx[rank.min(n) - 1]];
    }
    let target = pct / 100.0 - 1e-12;
    let mut acc = 0.0;
    for &i in idx {
        acc += probs[i];
        if acc >= target {
            return values[i];
        }
    }
    values[idx[n - 1]]
}

fn check_pcts(pcts: &[f64]) -> Result<()> {
    if let Some(p) = pcts.iter().find(|&&p| !(0.0 < p && p < 100.0)) {
        return Err(Error::input(format!("percentile {p} outside (0, 100)")));
    }
    Ok(())
}

/// Empirical percentiles of one constituent, per interval.
pub fn compute_constituent_percentiles(
    set: &ScenarioSet,
    constituent: Constituent,
    pcts: &[f64],
) -> Result<PercentileTable> {
    check_pcts(pcts)?;
    if set.num_scenarios() < 2 {
        return Err(Error::input("percentiles need at least two scenarios"));
    }
    let m = set
        .get(constituent)
        .ok_or_else(|| Error::input(format!("scenario set has no {constituent} series")))?;
    let mut values = Vec::with_capacity(set.num_intervals());
    let mut col = vec![0.0; set.num_scenarios()];
    for t in 0..set.num_intervals() {
        for (s, row) in m.iter().enumerate() {
            col[s] = row[t];
        }
        let mut idx: Vec<usize> = (0..col.len()).collect();
        idx.sort_by(|&a, &b| col[a].total_cmp(&col[b]).then(a.cmp(&b)));
        values.push(pcts.iter().map(|&p| quantile_sorted(&idx, &col, &set.probabilities, p)).collect());
    }
    Ok(PercentileTable {
        quantity: constituent.as_str().into(),
        percentiles: pcts.to_vec(),
        values,
    })
}

/// 1..=99
pub fn all_percentiles() -> Vec<f64> {
    (1..=99).map(f64::from).collect()
}

/// NL(p) = load(p) - wind(100 - p) - solar(100 - p).
pub fn compute_net_load_percentiles(
    load: &PercentileTable,
    wind: &PercentileTable,
    solar: &PercentileTable,
) -> Result<PercentileTable> {
    let t = load.num_intervals();
    if wind.num_intervals() != t || solar.num_intervals() != t {
        return Err(Error::input("percentile tables do not share the time axis"));
    }
    let mut values = Vec::with_capacity(t);
    for h in 0..t {
        let mut row = Vec::with_capacity(load.percentiles.len());
        for &p in &load.percentiles {
            let l = load.require(h, p)?;
            let w = wind.value(h, 100.0 - p).ok_or_else(|| {
                Error::input(format!("wind percentile {} needed for net-load percentile {p}", 100.0 - p))
            })?;
            let s = solar.value(h, 100.0 - p).ok_or_else(|| {
                Error::input(format!("solar percentile {} needed for net-load percentile {p}", 100.0 - p))
            })?;
            row.push(l - w - s);
        }
        values.push(row);
    }
    Ok(PercentileTable {
        quantity: "net_load".into(),
        percentiles: load.percentiles.clone(),
        values,
    })
}

/// Hourly percentile tables for every constituent plus net load; what the DA
/// market sees.
#[derive(Debug, Clone, PartialEq)]
pub struct DaForecast {
    pub load: PercentileTable,
    pub wind: PercentileTable,
    pub solar: PercentileTable,
    pub net_load: PercentileTable,
}

impl DaForecast {
    /// Percentiles 1..=99 of a (DA-resolution) scenario set. Missing
    /// renewable constituents are taken as zero.
    pub fn from_scenarios(set: &ScenarioSet) -> Result<Self> {
        let pcts = all_percentiles();
        let load = if set.get(Constituent::Load).is_some() {
            compute_constituent_percentiles(set, Constituent::Load, &pcts)?
        } else {
            let mut t = compute_constituent_percentiles(set, Constituent::Aggregate, &pcts)?;
            t.quantity = "load".into();
            t
        };
        let other = |c: Constituent| -> Result<PercentileTable> {
            if set.get(c).is_some() {
                compute_constituent_percentiles(set, c, &pcts)
            } else {
                Ok(load.zeros_like(c.as_str()))
            }
        };
        let wind = other(Constituent::Wind)?;
        let solar = other(Constituent::Solar)?;
        let net_load = compute_net_load_percentiles(&load, &wind, &solar)?;
        Ok(Self { load, wind, solar, net_load })
    }

    pub fn hours(&self) -> usize {
        self.net_load.num_intervals()
    }

    /// Median-based DA injection of a constituent (negative for load-like).
    pub fn median_injection(&self, c: Constituent, hour: usize) -> f64 {
        let v = |t: &PercentileTable| t.value(hour, 50.0).unwrap_or(0.0);
        match c {
            Constituent::Load => -v(&self.load),
            Constituent::Wind => v(&self.wind),
            Constituent::Solar => v(&self.solar),
            Constituent::Aggregate => -v(&self.net_load),
        }
    }

    /// Injection level of an account at level percentile `pct`
    /// (ascending in generation).
    pub fn level(&self, c: Constituent, hour: usize, pct: f64) -> Result<f64> {
        Ok(match c {
            Constituent::Load => -self.load.require(hour, 100.0 - pct)?,
            Constituent::Wind => self.wind.require(hour, pct)?,
            Constituent::Solar => self.solar.require(hour, pct)?,
            Constituent::Aggregate => -self.net_load.require(hour, 100.0 - pct)?,
        })
    }
}

/// Discrete levels of one account, ascending in generation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccountLevels {
    pub account: String,
    /// `[level s][hour]` MW of net injection.
    pub levels: Vec<Vec<f64>>,
}

impl AccountLevels {
    pub fn tier_width(&self, r: usize, t: usize) -> f64 {
        self.levels[r + 1][t] - self.levels[r][t]
    }
}

/// Levels at the configured percentiles and exercise probabilities of the
/// tiers between adjacent levels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TierStructure {
    /// Level percentiles, ascending.
    pub percentiles: Vec<f64>,
    pub accounts: Vec<AccountLevels>,
    /// Π↑_r, one per tier.
    pub prob_up: Vec<f64>,
    /// Π↓_r, one per tier.
    pub prob_down: Vec<f64>,
}

impl TierStructure {
    pub fn num_levels(&self) -> usize {
        self.percentiles.len()
    }

    pub fn num_tiers(&self) -> usize {
        self.percentiles.len() - 1
    }

    pub fn account(&self, id: &str) -> Option<&AccountLevels> {
        self.accounts.iter().find(|a| a.account == id)
    }

    /// Up probability of the tier adjacent to the lowest level.
    pub fn deepest_up_probability(&self) -> f64 {
        self.prob_up[0]
    }
}

/// Exercise probabilities of the tiers between adjacent level percentiles.
pub fn tier_probabilities(pcts: &[f64], rule: ProbabilityRule) -> (Vec<f64>, Vec<f64>) {
    let tiers = pcts.windows(2);
    match rule {
        ProbabilityRule::FullCrossing => tiers.map(|w| (w[0] / 100.0, 1.0 - w[1] / 100.0)).unzip(),
        ProbabilityRule::Midpoint => tiers
            .map(|w| {
                let mid = (w[0] + w[1]) / 200.0;
                (mid, 1.0 - mid)
            })
            .unzip(),
    }
}

fn check_tier_pcts(pcts: &[f64], nl: &PercentileTable) -> Result<()> {
    if pcts.len() < 2 {
        return Err(Error::input("tiers need at least two percentiles"));
    }
    if pcts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("tier percentiles must strictly increase"));
    }
    check_pcts(pcts)?;
    for &p in pcts {
        if nl.index_of(100.0 - p).is_none() {
            return Err(Error::input(format!("net-load percentile {} not tabulated", 100.0 - p)));
        }
    }
    Ok(())
}

/// Tiers of a single aggregate account whose levels are the negated net-load
/// percentiles: level at percentile p is `-NL(100 - p)`.
pub fn build_tiers(nl: &PercentileTable, cfg: &MarketConfig) -> Result<TierStructure> {
    let pcts = &cfg.tier_percentiles;
    check_tier_pcts(pcts, nl)?;
    let levels = pcts
        .iter()
        .map(|&p| (0..nl.num_intervals()).map(|t| nl.require(t, 100.0 - p).map(|v| -v)).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let (prob_up, prob_down) = tier_probabilities(pcts, cfg.probability_rule);
    Ok(TierStructure {
        percentiles: pcts.clone(),
        accounts: vec![AccountLevels {
            account: "aggregate".into(),
            levels,
        }],
        prob_up,
        prob_down,
    })
}

/// Tiers for an arbitrary list of accounts.
pub fn build_account_tiers(
    accounts: &[UncertainAccount],
    forecast: &DaForecast,
    cfg: &MarketConfig,
) -> Result<TierStructure> {
    let pcts = &cfg.tier_percentiles;
    check_tier_pcts(pcts, &forecast.net_load)?;
    let hours = forecast.hours();
    let accounts = accounts
        .iter()
        .map(|a| {
            let levels = pcts
                .iter()
                .map(|&p| (0..hours).map(|t| forecast.level(a.constituent, t, p)).collect())
                .collect::<Result<Vec<Vec<f64>>>>()?;
            Ok(AccountLevels {
                account: a.id.clone(),
                levels,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (prob_up, prob_down) = tier_probabilities(pcts, cfg.probability_rule);
    Ok(TierStructure {
        percentiles: pcts.clone(),
        accounts,
        prob_up,
        prob_down,
    })
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

/// Population standard deviation.
fn pstd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len().max(1) as f64).sqrt()
}

/// Clustering features of one week: average ensemble mean and average
/// ensemble spread of the DA net load, then mean and spread of the RT error
/// normalised by the DA spread.
pub fn week_features(da_mean: &[f64], da_std: &[f64], actual: &[f64]) -> Result<Vec<f64>> {
    if da_mean.len() != da_std.len() || da_mean.len() != actual.len() || da_mean.is_empty() {
        return Err(Error::input("week feature series are misaligned or empty"));
    }
    let z: Vec<f64> = actual
        .iter()
        .zip(da_mean)
        .zip(da_std)
        .map(|((a, m), s)| if *s > 0.0 { (a - m) / s } else { 0.0 })
        .collect();
    Ok(vec![mean(da_mean), mean(da_std), mean(&z), pstd(&z)])
}

/// Per-interval ensemble mean and population standard deviation of net load.
pub fn net_load_moments(set: &ScenarioSet) -> (Vec<f64>, Vec<f64>) {
    (0..set.num_intervals())
        .map(|t| {
            let m: f64 = (0..set.num_scenarios()).map(|s| set.probabilities[s] * set.net_load(s, t)).sum();
            let v: f64 = (0..set.num_scenarios())
                .map(|s| set.probabilities[s] * (set.net_load(s, t) - m).powi(2))
                .sum();
            (m, v.sqrt())
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekClusterResult {
    /// Cluster index of each week.
    pub assignments: Vec<usize>,
    /// Medoid week of each cluster.
    pub medoids: Vec<usize>,
    /// Member count of each cluster.
    pub weights: Vec<usize>,
}

impl WeekClusterResult {
    /// Summed distance of members to their medoid.
    pub fn cost(&self, dist: &[Vec<f64>]) -> f64 {
        self.assignments
            .iter()
            .enumerate()
            .map(|(w, &c)| dist[w][self.medoids[c]])
            .sum()
    }
}

/// Columns scaled to zero mean and unit variance (constant columns become 0).
pub fn zscore(features: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let d = features.first().map_or(0, |f| f.len());
    let mut out = features.to_vec();
    for j in 0..d {
        let col: Vec<f64> = features.iter().map(|f| f[j]).collect();
        let (m, s) = (mean(&col), pstd(&col));
        for row in &mut out {
            row[j] = if s > 0.0 { (row[j] - m) / s } else { 0.0 };
        }
    }
    out
}

pub fn distance_matrix(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    points
        .iter()
        .map(|a| {
            points
                .iter()
                .map(|b| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .collect()
        })
        .collect()
}

fn assign(dist: &[Vec<f64>], medoids: &[usize]) -> (Vec<usize>, f64) {
    let mut cost = 0.0;
    let assignments = (0..dist.len())
        .map(|w| {
            if let Some(own) = medoids.iter().position(|&m| m == w) {
                return own;
            }
            let (c, d) = medoids
                .iter()
                .enumerate()
                .map(|(c, &m)| (c, dist[w][m]))
                .fold((0, f64::INFINITY), |best, x| if x.1 < best.1 { x } else { best });
            cost += d;
            c
        })
        .collect();
    (assignments, cost)
}

/// k-medoids (PAM: greedy BUILD, then best-improvement SWAP) on z-scored
/// features with Euclidean distance. Each medoid is then re-chosen as the
/// member with the least summed distance to its cluster.
pub fn cluster_weeks(features: &[Vec<f64>], k: usize) -> Result<WeekClusterResult> {
    let n = features.len();
    if k == 0 || k > n {
        return Err(Error::input(format!("cannot form {k} clusters from {n} weeks")));
    }
    let dist = distance_matrix(&zscore(features));

    let mut medoids: Vec<usize> = Vec::with_capacity(k);
    while medoids.len() < k {
        let mut best = (usize::MAX, f64::INFINITY);
        for cand in (0..n).filter(|c| !medoids.contains(c)) {
            let mut trial = medoids.clone();
            trial.push(cand);
            let (_, cost) = assign(&dist, &trial);
            if cost < best.1 - 1e-12 {
                best = (cand, cost);
            }
        }
        medoids.push(best.0);
    }

    let (_, mut cost) = assign(&dist, &medoids);
    loop {
        let mut best: Option<(usize, usize, f64)> = None;
        for i in 0..k {
            for cand in (0..n).filter(|c| !medoids.contains(c)) {
                let mut trial = medoids.clone();
                trial[i] = cand;
                let (_, c) = assign(&dist, &trial);
                if c < best.map_or(cost, |b| b.2) - 1e-12 {
                    best = Some((i, cand, c));
                }
            }
        }
        match best {
            Some((i, cand, c)) => {
                medoids[i] = cand;
                cost = c;
            }
            None => break,
        }
    }

    let (assignments, _) = assign(&dist, &medoids);
    for (c, m) in medoids.iter_mut().enumerate() {
        let members: Vec<usize> = (0..n).filter(|&w| assignments[w] == c).collect();
        let within = |x: usize| members.iter().map(|&w| dist[x][w]).sum::<f64>();
        *m = members.iter().copied().fold(*m, |b, x| if within(x) < within(b) - 1e-12 { x } else { b });
    }
    let (assignments, _) = assign(&dist, &medoids);
    let mut weights = vec![0; k];
    for &c in &assignments {
        weights[c] += 1;
    }
    Ok(WeekClusterResult {
        assignments,
        medoids,
        weights,
    })
}

/// Forecast-quality summary of a net-load ensemble against actuals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastDiagnostics {
    /// Mid-rank of the actual within the ensemble per interval, 0..=100.
    pub observed_rank: Vec<f64>,
    /// `(nominal percentile, observed rank at that quantile of intervals)`.
    pub rank_curve: Vec<(f64, f64)>,
    /// Width of the [5, 95] interval as % of the median, per interval.
    pub interval_width_pct: Vec<f64>,
    pub median: Vec<f64>,
    /// (actual - median) / median in %, per interval.
    pub error_pct: Vec<f64>,
    pub mean_error_pct: f64,
    pub min_error_pct: f64,
    pub max_error_pct: f64,
}

/// Calibration, sharpness and error statistics of the net-load ensemble.
/// `actuals` is a single-scenario set on the same axis.
pub fn forecast_diagnostics(set: &ScenarioSet, actuals: &ScenarioSet) -> Result<ForecastDiagnostics> {
    if actuals.num_intervals() != set.num_intervals()
        || actuals.resolution != set.resolution
        || actuals.start != set.start
        || actuals.num_scenarios() != 1
    {
        return Err(Error::input("actuals are not aligned with the scenario time axis"));
    }
    let n = set.num_scenarios();
    if n < 2 {
        return Err(Error::input("diagnostics need at least two scenarios"));
    }
    let mut observed_rank = Vec::new();
    let mut width = Vec::new();
    let mut median = Vec::new();
    let mut error_pct = Vec::new();
    for t in 0..set.num_intervals() {
        let col: Vec<f64> = (0..n).map(|s| set.net_load(s, t)).collect();
        let a = actuals.net_load(0, t);
        let below: f64 = (0..n).filter(|&s| col[s] < a).map(|s| set.probabilities[s]).sum();
        let equal: f64 = (0..n).filter(|&s| col[s] == a).map(|s| set.probabilities[s]).sum();
        // rounding hides the summation noise of equal weights
        observed_rank.push((1e9 * 100.0 * (below + 0.5 * equal)).round() / 1e9);
        let q = |p| weighted_quantile(&col, &set.probabilities, p);
        let med = q(50.0);
        width.push(if med != 0.0 { 100.0 * (q(95.0) - q(5.0)) / med.abs() } else { f64::NAN });
        error_pct.push(if med != 0.0 { 100.0 * (a - med) / med.abs() } else { f64::NAN });
        median.push(med);
    }
    let uniform = vec![1.0; observed_rank.len()];
    let rank_curve = all_percentiles()
        .into_iter()
        .map(|p| (p, weighted_quantile(&observed_rank, &uniform, p)))
        .collect();
    let finite: Vec<f64> = error_pct.iter().copied().filter(|e| e.is_finite()).collect();
    Ok(ForecastDiagnostics {
        observed_rank,
        rank_curve,
        interval_width_pct: width,
        median,
        mean_error_pct: mean(&finite),
        min_error_pct: finite.iter().copied().fold(f64::INFINITY, f64::min),
        max_error_pct: finite.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        error_pct,
    })
}

/// First-order autoregressive noise around a profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Stationary standard deviation, MW.
    pub std: f64,
    /// Additional standard deviation as a fraction of the profile value.
    pub relative_std: f64,
    /// Lag-one autocorrelation, in [0, 1).
    pub phi: f64,
    /// Physical floor (e.g. 0 for wind).
    pub min: Option<f64>,
    /// Physical ceiling (e.g. installed capacity).
    pub max: Option<f64>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            std: 0.0,
            relative_std: 0.0,
            phi: 0.9,
            min: None,
            max: None,
        }
    }
}

/// `count` scenarios of `profile` plus AR(1) noise with stationary variance
/// σ_t² where σ_t = std + relative_std·|profile_t|.
pub fn generate_synthetic_scenarios(
    profile: &[f64],
    noise: &NoiseConfig,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::input("scenario count must be positive"));
    }
    if !(0.0..1.0).contains(&noise.phi) {
        return Err(Error::input(format!("autocorrelation {} outside [0, 1)", noise.phi)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let innovation = (1.0 - noise.phi * noise.phi).sqrt();
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut e: f64 = StandardNormal.sample(&mut rng);
        let mut row = Vec::with_capacity(profile.len());
        for (t, &base) in profile.iter().enumerate() {
            if t > 0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                e = noise.phi * e + innovation * z;
            }
            let sigma = noise.std + noise.relative_std * base.abs();
            let mut v = base + sigma * e;
            if let Some(lo) = noise.min {
                v = v.max(lo);
            }
            if let Some(hi) = noise.max {
                v = v.min(hi);
            }
            row.push(v);
        }
        out.push(row);
    }
    Ok(out)
}
