//! Comparative metrics over DA and RT outcomes: system cost reports, RT
//! cost curves, flexibility demand and schedule percentiles.

use serde::{Deserialize, Serialize};

use crate::da::{DaSolution, Design};
use crate::error::{Error, Result};
use crate::rt::{RtResult, SimpleRtResult};
use crate::scenario::PercentileTable;
use crate::system::{CommitClass, Direction, FlexSellerParams, MarketConfig, SystemModel};

/// Costs of one design on one week (or day), $.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub design: Design,
    pub week: usize,
    /// Fingerprint of the scenario set the costs were simulated on.
    pub scenarios: String,
    pub da_cost: f64,
    pub rt_incremental: f64,
    pub rt_scarcity: f64,
    pub total: f64,
}

impl CostReport {
    pub fn new(design: Design, week: usize, scenarios: impl Into<String>, da_cost: f64, rt_incremental: f64, rt_scarcity: f64) -> Self {
        Self {
            design,
            week,
            scenarios: scenarios.into(),
            da_cost,
            rt_incremental,
            rt_scarcity,
            total: da_cost + rt_incremental + rt_scarcity,
        }
    }

    /// DA production cost plus the RT rollout's incremental and scarcity costs.
    pub fn from_rollout(week: usize, scenarios: impl Into<String>, da: &DaSolution, rt: &RtResult) -> Self {
        Self::new(da.design, week, scenarios, da.production_cost(), rt.incremental_cost(), rt.scarcity_cost())
    }

    /// DA production cost plus the mean simple-model RT cost over scenarios.
    pub fn from_simple(week: usize, scenarios: impl Into<String>, da: &DaSolution, rt: &[SimpleRtResult]) -> Self {
        let n = rt.len().max(1) as f64;
        let inc = rt.iter().map(|r| r.energy_cost + r.commitment_cost).sum::<f64>() / n;
        let pen = rt.iter().map(|r| r.penalty_cost).sum::<f64>() / n;
        Self::new(da.design, week, scenarios, da.production_cost(), inc, pen)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorSign {
    Positive,
    Negative,
}

/// Least-squares line of RT cost against net-load forecast error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostCurveFit {
    pub direction: ErrorSign,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub n: usize,
}

/// Ordinary least squares with intercept: `(slope, intercept, r2)`.
pub fn ols(x: &[f64], y: &[f64]) -> Result<(f64, f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::input("least squares needs at least two paired points"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx <= 1e-12 * n * (1.0 + mx * mx) {
        return Err(Error::input("least squares with constant regressor"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// Separate fits for positive and negative errors. Zero-error points
/// belong to both subsamples.
pub fn rt_cost_curves(points: &[(f64, f64)]) -> Result<(CostCurveFit, CostCurveFit)> {
    let fit = |direction: ErrorSign| -> Result<CostCurveFit> {
        let (x, y): (Vec<f64>, Vec<f64>) = points
            .iter()
            .filter(|(e, _)| match direction {
                ErrorSign::Positive => *e >= 0.0,
                ErrorSign::Negative => *e <= 0.0,
            })
            .copied()
            .unzip();
        let (slope, intercept, r2) =
            ols(&x, &y).map_err(|e| Error::input(format!("{direction:?} error cost curve: {e}")))?;
        Ok(CostCurveFit {
            direction,
            slope,
            intercept,
            r2,
            n: x.len(),
        })
    };
    Ok((fit(ErrorSign::Positive)?, fit(ErrorSign::Negative)?))
}

/// `(error, cost)` per RTD interval: realised minus scheduled net load
/// against redispatch plus penalty cost.
pub fn rollout_points(da: &DaSolution, rt: &RtResult, actual_net_load: &[f64]) -> Vec<(f64, f64)> {
    rt.intervals
        .iter()
        .map(|iv| {
            let sched: f64 = da.p.iter().map(|p| p[iv.hour]).sum();
            (actual_net_load[iv.interval] - sched, iv.energy_cost + iv.penalty_cost())
        })
        .collect()
}

/// `(error, cost)` per interval of a simple-model scenario, commitment
/// costs excluded.
pub fn simple_rt_points(res: &SimpleRtResult, strikes: &[FlexSellerParams], cfg: &MarketConfig) -> Vec<(f64, f64)> {
    (0..res.error.len())
        .map(|k| {
            let energy: f64 = strikes
                .iter()
                .enumerate()
                .map(|(i, s)| s.strike_up * res.p_up[i][k] - s.strike_down * res.p_down[i][k])
                .sum();
            let penalty = cfg.shortage_penalty * res.eps_up[k] - cfg.surplus_penalty * res.eps_down[k];
            (res.error[k], (energy + penalty) * res.dt)
        })
        .collect()
}

/// Flexibility procured in one hour, normalised by the [5, 95] forecast
/// interval width of net load.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlexDemand {
    pub hour: usize,
    pub up: f64,
    pub down: f64,
    pub width: f64,
    /// `None` when the interval has zero width.
    pub normalized: Option<f64>,
    pub up_normalized: Option<f64>,
    pub down_normalized: Option<f64>,
}

/// Upward and downward procurement per hour: FO holdings of buyers, or IR
/// awards of all products.
pub fn procured(da: &DaSolution, t: usize) -> (f64, f64) {
    if let Some(fo) = &da.fo {
        let sum = |g: &Vec<Vec<Vec<f64>>>| -> f64 { g.iter().flat_map(|b| b.iter().map(|r| r[t])).sum() };
        return (sum(&fo.hd_up), sum(&fo.hd_dn));
    }
    let dir = |d: Direction| -> f64 { (0..da.p.len()).map(|i| da.ir_award(i, t, d)).sum() };
    (dir(Direction::Up), dir(Direction::Down))
}

pub fn flexibility_demand_metric(da: &DaSolution, nl: &PercentileTable) -> Result<Vec<FlexDemand>> {
    (0..da.hours)
        .map(|t| {
            let width = nl.require(t, 95.0)? - nl.require(t, 5.0)?;
            let (up, down) = procured(da, t);
            let norm = |x: f64| (width > 1e-9).then(|| x / width);
            Ok(FlexDemand {
                hour: t,
                up,
                down,
                width,
                normalized: norm(up + down),
                up_normalized: norm(up),
                down_normalized: norm(down),
            })
        })
        .collect()
}

/// Percentile of the scheduled net load within each hour's forecast, with a
/// flag when it falls outside the table and was clamped.
pub fn da_schedule_percentile(da: &DaSolution, nl: &PercentileTable) -> Vec<(f64, bool)> {
    (0..da.hours).map(|t| nl.percentile_of(t, da.scheduled_net_load(t))).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyDiffRow {
    pub week: usize,
    pub weight: f64,
    pub ir_total: f64,
    pub fo_total: f64,
    /// IR minus FO.
    pub diff: f64,
    /// MIP-gap band: gap times the larger DA cost.
    pub band: f64,
    pub exceeds_band: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeeklyDiff {
    pub rows: Vec<WeeklyDiffRow>,
    pub annual_ir: f64,
    pub annual_fo: f64,
    pub annual_diff: f64,
}

/// Week-by-week IR - FO cost difference and the cluster-weighted totals.
pub fn weekly_cost_diff(ir: &[CostReport], fo: &[CostReport], weights: &[f64], mip_gap: f64) -> Result<WeeklyDiff> {
    if ir.len() != fo.len() || ir.len() != weights.len() {
        return Err(Error::input(format!(
            "{} IR reports, {} FO reports, {} weights",
            ir.len(),
            fo.len(),
            weights.len()
        )));
    }
    let mut rows = Vec::with_capacity(ir.len());
    let (mut annual_ir, mut annual_fo) = (0.0, 0.0);
    for ((a, b), &w) in ir.iter().zip(fo).zip(weights) {
        if a.week != b.week || a.scenarios != b.scenarios {
            return Err(Error::input(format!(
                "week {} vs {}: designs simulated on different scenarios ({} vs {})",
                a.week, b.week, a.scenarios, b.scenarios
            )));
        }
        let diff = a.total - b.total;
        let band = mip_gap * a.da_cost.abs().max(b.da_cost.abs());
        annual_ir += w * a.total;
        annual_fo += w * b.total;
        rows.push(WeeklyDiffRow {
            week: a.week,
            weight: w,
            ir_total: a.total,
            fo_total: b.total,
            diff,
            band,
            exceeds_band: diff.abs() > band,
        });
    }
    Ok(WeeklyDiff {
        rows,
        annual_ir,
        annual_fo,
        annual_diff: annual_ir - annual_fo,
    })
}

/// Per hour, committed DA-only units under FO minus those under IR.
pub fn committed_unit_diff(system: &SystemModel, fo: &DaSolution, ir: &DaSolution) -> Result<Vec<i64>> {
    let n = system.generators.len();
    if fo.p.len() != n || ir.p.len() != n || fo.hours != ir.hours {
        return Err(Error::input("commitment comparison needs solutions of the same system and horizon"));
    }
    Ok((0..fo.hours)
        .map(|t| {
            system
                .generators
                .iter()
                .enumerate()
                .filter(|(_, g)| g.commit_class == CommitClass::DaOnly)
                .map(|(i, _)| fo.committed(i, t) as i64 - ir.committed(i, t) as i64)
                .sum()
        })
        .collect())
}

/// Writes serialisable rows as CSV with a header.
pub fn write_rows<W: std::io::Write, T: Serialize>(w: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush().map_err(|e| Error::Internal(e.to_string()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::da::{build_design, solve_da};
    use crate::fixtures::{generator, linear_forecast, system};
    use crate::solver::HighsBackend;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    #[test]
    fn exact_line() {
        let x: Vec<f64> = (1..10).map(f64::from).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v).collect();
        let (s, i, r2) = ols(&x, &y).unwrap();
        assert!((s - 3.0).abs() < 1e-12 && i.abs() < 1e-12 && (r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_regressor_is_an_error() {
        assert!(ols(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(rt_cost_curves(&[(1.0, 1.0), (2.0, 3.0), (-1.0, 0.0)]).is_err());
    }

    #[test]
    fn mirrored_data_mirrors_slopes() {
        let pos: Vec<(f64, f64)> = (1..20).map(|k| (f64::from(k), 4.0 * f64::from(k) + (k % 3) as f64)).collect();
        let all: Vec<(f64, f64)> = pos.iter().flat_map(|&(x, y)| [(x, y), (-x, y)]).collect();
        let (p, n) = rt_cost_curves(&all).unwrap();
        assert!((p.slope + n.slope).abs() < 1e-9);
        assert!((p.intercept - n.intercept).abs() < 1e-9);
        assert_eq!(p.n, 19);
    }

    #[test]
    fn noisy_slope_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noise = Normal::new(0.0, 20.0).unwrap();
        let pts: Vec<(f64, f64)> = (0..1000)
            .map(|_| {
                let x: f64 = rng.random_range(0.0..100.0);
                (x, 5.0 * x + 12.0 + noise.sample(&mut rng))
            })
            .chain([(-1.0, -5.0), (-2.0, -10.0)])
            .collect();
        let (p, _) = rt_cost_curves(&pts).unwrap();
        assert!((p.slope - 5.0).abs() < 0.25, "slope {}", p.slope);
    }

    fn manual(p: Vec<Vec<f64>>, pda: Vec<f64>) -> DaSolution {
        let sys = system("m", p.iter().enumerate().map(|(i, _)| generator(&format!("g{i}"), 0.0, &[(100.0, 10.0)])).collect());
        let p_len = pda.len();
        let mut sol = {
            let prob = build_design(&sys, &linear_forecast(&vec![10.0; p_len], 5.0), Design::Base).unwrap();
            solve_da(&prob, &sys.market, &HighsBackend::default()).unwrap()
        };
        sol.u = p.iter().map(|r| r.iter().map(|&x| f64::from(x > 0.0)).collect()).collect();
        sol.p = p;
        sol.pda = vec![pda];
        sol
    }

    #[test]
    fn schedule_percentiles() {
        let nl = linear_forecast(&[100.0, 100.0, 100.0], 50.0).net_load;
        let fo_p95 = nl.require(1, 95.0).unwrap();
        let sol = manual(vec![vec![100.0, fo_p95, 500.0]], vec![-100.0, -fo_p95, -500.0]);
        let pct = da_schedule_percentile(&sol, &nl);
        assert!((pct[0].0 - 50.0).abs() < 1e-9 && !pct[0].1);
        assert!((pct[1].0 - 95.0).abs() < 1e-9);
        assert_eq!(pct[2], (99.0, true));
    }

    #[test]
    fn flexibility_demand_definitional() {
        let nl = linear_forecast(&[100.0, 100.0], 50.0).net_load;
        let width = nl.require(0, 95.0).unwrap() - nl.require(0, 5.0).unwrap();
        let mut sol = manual(vec![vec![100.0, 100.0]], vec![-100.0, -100.0]);
        sol.ir = [(Direction::Up, 0.5), (Direction::Down, 0.5)]
            .into_iter()
            .map(|(d, share)| crate::da::IrAwards {
                product: d.as_str().into(),
                direction: d,
                award: vec![vec![share * width, 0.0]],
                quantity: vec![],
                short: vec![],
            })
            .collect();
        let m = flexibility_demand_metric(&sol, &nl).unwrap();
        assert!((m[0].normalized.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(m[1].normalized, Some(0.0));
        let flat = linear_forecast(&[100.0, 100.0], 0.0).net_load;
        assert_eq!(flexibility_demand_metric(&sol, &flat).unwrap()[0].normalized, None);
    }

    #[test]
    fn weekly_diff_cases() {
        let r = |d, w, total: f64| CostReport::new(d, w, "s", total * 0.9, total * 0.1, 0.0);
        let ir = vec![r(Design::Ir, 0, 100.0), r(Design::Ir, 1, 200.0)];
        let same = weekly_cost_diff(&ir, &ir, &[1.0, 1.0], 0.005).unwrap();
        assert!(same.rows.iter().all(|x| x.diff == 0.0 && !x.exceeds_band));
        assert_eq!(same.annual_ir, 300.0);
        let fo = vec![r(Design::Fo, 0, 90.0), r(Design::Fo, 1, 199.5)];
        let d = weekly_cost_diff(&ir, &fo, &[3.0, 2.0], 0.005).unwrap();
        assert!(d.rows[0].exceeds_band && !d.rows[1].exceeds_band);
        assert!((d.annual_diff - (3.0 * 10.0 + 2.0 * 0.5)).abs() < 1e-9);
        let other = vec![CostReport::new(Design::Fo, 0, "t", 1.0, 0.0, 0.0), r(Design::Fo, 1, 1.0)];
        assert!(weekly_cost_diff(&ir, &other, &[1.0, 1.0], 0.005).is_err());
        assert!(weekly_cost_diff(&ir, &fo, &[1.0], 0.005).is_err());
    }

    #[test]
    fn committed_unit_counting() {
        let sys = system("c", (0..2).map(|i| generator(&format!("g{i}"), 0.0, &[(100.0, 10.0)])).collect());
        let ir = manual(vec![vec![10.0; 8], vec![0.0; 8]], vec![-10.0; 8]);
        let mut fo = ir.clone();
        assert_eq!(committed_unit_diff(&sys, &fo, &ir).unwrap(), vec![0; 8]);
        for t in 0..5 {
            fo.u[1][t] = 1.0;
        }
        assert_eq!(committed_unit_diff(&sys, &fo, &ir).unwrap(), vec![1, 1, 1, 1, 1, 0, 0, 0]);
    }

    #[test]
    fn report_total_reconciles_with_schedule_cost() {
        let sys = system("two", vec![generator("a", 0.0, &[(60.0, 20.0)]), generator("b", 0.0, &[(100.0, 50.0)])]);
        let prob = build_design(&sys, &linear_forecast(&[80.0, 120.0], 0.0), Design::Base).unwrap();
        let sol = solve_da(&prob, &sys.market, &HighsBackend::default()).unwrap();
        let oracle: f64 = (0..2)
            .map(|t| sys.generators.iter().enumerate().map(|(i, g)| g.energy_cost(sol.p[i][t])).sum::<f64>())
            .sum();
        let rep = CostReport::new(sol.design, 0, "s", sol.production_cost(), 0.0, 0.0);
        assert!((rep.total - oracle).abs() <= 1e-6 * oracle);
    }

    proptest! {
        #[test]
        fn annualisation_is_linear(
            totals in proptest::collection::vec(0.0f64..1e6, 1..6),
            c in 0.1f64..10.0,
        ) {
            let mk = |d, scale: f64| -> Vec<CostReport> {
                totals.iter().enumerate().map(|(w, t)| CostReport::new(d, w, "s", t * scale, 0.0, 0.0)).collect()
            };
            let weights: Vec<f64> = (0..totals.len()).map(|w| (w + 1) as f64).collect();
            let a = weekly_cost_diff(&mk(Design::Ir, 1.0), &mk(Design::Fo, 0.5), &weights, 0.005).unwrap();
            let b = weekly_cost_diff(&mk(Design::Ir, c), &mk(Design::Fo, 0.5 * c), &weights, 0.005).unwrap();
            prop_assert!((b.annual_ir - c * a.annual_ir).abs() <= 1e-9 * (1.0 + b.annual_ir.abs()));
            prop_assert!((b.annual_diff - c * a.annual_diff).abs() <= 1e-9 * (1.0 + b.annual_diff.abs()));
        }

        #[test]
        fn regression_recovers_seeded_slopes(seed in 0u64..1000, slope in -20.0f64..20.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Normal::new(0.0, 1.0).unwrap();
            let (x, y): (Vec<f64>, Vec<f64>) = (0..500)
                .map(|_| {
                    let x: f64 = rng.random_range(-10.0..10.0);
                    (x, slope * x + noise.sample(&mut rng))
                })
                .unzip();
            let (s, _, _) = ols(&x, &y).unwrap();
            prop_assert!((s - slope).abs() < 0.1);
        }
    }
}
