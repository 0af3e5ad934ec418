//! Small hand-sized systems and forecasts for tests, examples and the
//! Python smoke test.

use crate::scenario::{all_percentiles, DaForecast, PercentileTable};
use crate::system::{default_ir_products, CommitClass, CostSegment, Generator, MarketConfig, SystemModel};

/// A DA-only unit with ramp rate equal to its capacity and unit min up/down.
pub fn generator(id: &str, p_min: f64, segments: &[(f64, f64)]) -> Generator {
    let p_max = segments.iter().map(|s| s.0).sum();
    Generator {
        id: id.into(),
        p_min,
        p_max,
        ramp_rate: p_max,
        min_up_time: 1,
        min_down_time: 1,
        startup_cost: 0.0,
        no_load_cost: 0.0,
        cost_curve: segments.iter().map(|&(width, cost)| CostSegment { width, cost }).collect(),
        commit_class: CommitClass::DaOnly,
        start_lead_time: 240.0,
        initially_on: false,
    }
}

pub fn fast_generator(id: &str, p_min: f64, segments: &[(f64, f64)]) -> Generator {
    Generator {
        commit_class: CommitClass::FastStart,
        start_lead_time: 10.0,
        ..generator(id, p_min, segments)
    }
}

pub fn system(name: &str, generators: Vec<Generator>) -> SystemModel {
    SystemModel {
        name: name.into(),
        generators,
        accounts: vec![],
        reserve_products: default_ir_products(),
        strike_overrides: vec![],
        market: MarketConfig::default(),
    }
}

/// Forecast with load only: the net load at percentile `p` of hour `t` is
/// `median[t] + spread * (p - 50) / 50`.
pub fn linear_forecast(median: &[f64], spread: f64) -> DaForecast {
    let pcts = all_percentiles();
    let values: Vec<Vec<f64>> = median
        .iter()
        .map(|m| pcts.iter().map(|p| m + spread * (p - 50.0) / 50.0).collect())
        .collect();
    let load = PercentileTable {
        quantity: "load".into(),
        percentiles: pcts.clone(),
        values: values.clone(),
    };
    DaForecast {
        wind: load.zeros_like("wind"),
        solar: load.zeros_like("solar"),
        net_load: PercentileTable {
            quantity: "net_load".into(),
            percentiles: pcts,
            values,
        },
        load,
    }
}
