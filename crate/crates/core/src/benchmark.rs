//! Desk-scale benchmark: a 30-unit system with wind and solar, synthetic
//! daily forecasts and realisations, and small crafted instances.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::scenario::{generate_synthetic_scenarios, NoiseConfig, ScenarioSet};
use crate::system::{
    default_ir_products, CommitClass, Constituent, CostSegment, Generator, MarketConfig, SystemModel,
};

pub const WIND_CAPACITY: f64 = 1300.0;
pub const SOLAR_CAPACITY: f64 = 100.0;

fn unit(id: String, class: CommitClass, p_min: f64, segments: &[(f64, f64)], ramp: f64, min_up: u32, su: f64, nl: f64) -> Generator {
    Generator {
        id,
        p_min,
        p_max: segments.iter().map(|s| s.0).sum(),
        ramp_rate: ramp,
        min_up_time: min_up,
        min_down_time: min_up,
        startup_cost: su,
        no_load_cost: nl,
        cost_curve: segments.iter().map(|&(width, cost)| CostSegment { width, cost }).collect(),
        commit_class: class,
        start_lead_time: if class == CommitClass::FastStart { 10.0 } else { 240.0 },
        initially_on: false,
    }
}

/// 24 DA-only units (3,050 MW) and 6 fast-start units (400 MW): the 61:8
/// split of a large system, with 1,300 MW of wind and 100 MW of solar.
pub fn desk_system() -> SystemModel {
    let mut g = Vec::with_capacity(30);
    for k in 0..4 {
        let c = 8.0 + k as f64;
        let mut u = unit(format!("base{k}"), CommitClass::DaOnly, 100.0, &[(100.0, c), (50.0, c + 2.0)], 40.0, 8, 20000.0, 300.0);
        u.initially_on = true;
        g.push(u);
    }
    for k in 0..8 {
        let c = 20.0 + k as f64;
        let mut u = unit(format!("coal{k}"), CommitClass::DaOnly, 50.0, &[(75.0, c), (50.0, c + 4.0)], 60.0, 6, 5000.0, 500.0);
        u.initially_on = k < 6;
        g.push(u);
    }
    for k in 0..8 {
        let c = 32.0 + 1.5 * k as f64;
        let mut u = unit(format!("ccgt{k}"), CommitClass::DaOnly, 60.0, &[(90.0, c), (60.0, c + 6.0)], 90.0, 4, 3000.0, 400.0);
        u.initially_on = k < 2;
        g.push(u);
    }
    for k in 0..4 {
        let c = 55.0 + 3.0 * k as f64;
        g.push(unit(format!("steam{k}"), CommitClass::DaOnly, 20.0, &[(40.0, c), (22.5, c + 10.0)], 62.5, 3, 1500.0, 250.0));
    }
    for k in 0..6 {
        let c = 90.0 + 8.0 * k as f64;
        let cap = 400.0 / 6.0;
        g.push(unit(format!("peaker{k}"), CommitClass::FastStart, 10.0, &[(cap, c)], cap, 1, 300.0, 150.0));
    }
    SystemModel {
        name: "desk".into(),
        generators: g,
        accounts: vec![],
        reserve_products: default_ir_products(),
        strike_overrides: vec![],
        market: MarketConfig::default(),
    }
}

/// Load, wind and solar profiles of one day, MW per hour.
#[derive(Debug, Clone, PartialEq)]
pub struct DayProfile {
    pub load: Vec<f64>,
    pub wind: Vec<f64>,
    pub solar: Vec<f64>,
}

/// A randomised day: peak load, wind capacity factor and its diurnal phase
/// are drawn from `rng`.
pub fn day_profile(rng: &mut ChaCha8Rng) -> DayProfile {
    let peak = rng.random_range(2500.0..2850.0);
    let valley = peak * rng.random_range(0.62..0.72);
    let cf = rng.random_range(0.2..0.55);
    let phase = rng.random_range(0.0..24.0);
    let tau = std::f64::consts::TAU;
    let load = (0..24)
        .map(|h| {
            let x = h as f64;
            let shape = 0.5 - 0.5 * (tau * (x - 4.0) / 24.0).cos() + 0.15 * (tau * (x - 18.0) / 12.0).cos().max(0.0);
            valley + (peak - valley) * shape.min(1.0)
        })
        .collect();
    let wind = (0..24)
        .map(|h| {
            let v = cf * (1.0 + 0.35 * (tau * (h as f64 - phase) / 24.0).cos());
            (v * WIND_CAPACITY).clamp(0.0, WIND_CAPACITY)
        })
        .collect();
    let solar = (0..24)
        .map(|h| {
            let x = (h as f64 - 12.5) / 5.0;
            if x.abs() < 1.0 {
                0.8 * SOLAR_CAPACITY * (1.0 - x * x)
            } else {
                0.0
            }
        })
        .collect();
    DayProfile { load, wind, solar }
}

/// Forecast-error noise of each constituent at hourly resolution.
pub fn desk_noise() -> [(Constituent, NoiseConfig); 3] {
    [
        (Constituent::Load, NoiseConfig { std: 20.0, relative_std: 0.02, phi: 0.9, min: Some(0.0), max: None }),
        (Constituent::Wind, NoiseConfig { std: 120.0, relative_std: 0.0, phi: 0.9, min: Some(0.0), max: Some(WIND_CAPACITY) }),
        (Constituent::Solar, NoiseConfig { std: 0.0, relative_std: 0.15, phi: 0.9, min: Some(0.0), max: Some(SOLAR_CAPACITY) }),
    ]
}

fn upsample(hourly: &[f64], per_hour: usize) -> Vec<f64> {
    let n = hourly.len();
    (0..n * per_hour)
        .map(|k| {
            let x = (k as f64 + 0.5) / per_hour as f64 - 0.5;
            let i = x.floor().clamp(0.0, (n - 1) as f64) as usize;
            let j = (i + 1).min(n - 1);
            let w = (x - i as f64).clamp(0.0, 1.0);
            hourly[i] * (1.0 - w) + hourly[j] * w
        })
        .collect()
}

/// `count` scenarios of every constituent around a profile, at
/// `resolution` minutes.
pub fn scenarios_for(
    profile: &DayProfile,
    start: NaiveDateTime,
    resolution: f64,
    count: usize,
    seed: u64,
) -> Result<ScenarioSet> {
    let per_hour = (60.0 / resolution).round() as usize;
    // Finer intervals keep the hourly error persistence.
    let phi_scale = 1.0 / per_hour as f64;
    let mut series = BTreeMap::new();
    for (k, (c, noise)) in desk_noise().into_iter().enumerate() {
        let base = match c {
            Constituent::Load => &profile.load,
            Constituent::Wind => &profile.wind,
            _ => &profile.solar,
        };
        let noise = NoiseConfig {
            phi: noise.phi.powf(phi_scale),
            ..noise
        };
        let paths = generate_synthetic_scenarios(&upsample(base, per_hour), &noise, count, seed.wrapping_add(k as u64))?;
        series.insert(c, paths);
    }
    ScenarioSet::new(resolution, start, series)
}

/// One benchmark day: hourly DA scenarios and one 15-minute realisation
/// drawn from the same distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DeskDay {
    pub day: usize,
    pub profile: DayProfile,
    pub scenarios: ScenarioSet,
    pub actual: ScenarioSet,
}

pub fn day_start(day: usize) -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2030, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap() + Duration::days(day as i64)
}

fn day_seed(seed: u64, day: usize, stream: u64) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ ((day as u64) << 20) ^ stream
}

pub fn desk_day(seed: u64, day: usize, scenarios: usize, cfg: &MarketConfig) -> Result<DeskDay> {
    let mut rng = ChaCha8Rng::seed_from_u64(day_seed(seed, day, 0));
    let profile = day_profile(&mut rng);
    let start = day_start(day);
    let set = scenarios_for(&profile, start, 60.0, scenarios, day_seed(seed, day, 1 << 8))?;
    let actual = scenarios_for(&profile, start, cfg.rt_resolution, 1, day_seed(seed, day, 2 << 8))?;
    Ok(DeskDay {
        day,
        profile,
        scenarios: set,
        actual,
    })
}

/// Out-of-sample realisations of a day at RT resolution.
pub fn out_of_sample(day: &DeskDay, count: usize, seed: u64, cfg: &MarketConfig) -> Result<ScenarioSet> {
    scenarios_for(&day.profile, day.actual.start, cfg.rt_resolution, count, day_seed(seed, day.day, 3 << 8))
}

/// Two units with asymmetric flexibility costs: a cheap slow unit whose
/// headroom is the only inexpensive upward flexibility, and a fast unit
/// that is costly to use. Net load is uncertain with a wide upper tail.
pub fn asymmetric_system() -> SystemModel {
    let mut base = unit("cheap".into(), CommitClass::DaOnly, 40.0, &[(120.0, 20.0), (80.0, 24.0)], 200.0, 1, 400.0, 100.0);
    base.initially_on = true;
    let mut mid = unit("mid".into(), CommitClass::DaOnly, 30.0, &[(60.0, 45.0), (40.0, 50.0)], 100.0, 1, 2000.0, 300.0);
    mid.initially_on = false;
    let peak = unit("peaker".into(), CommitClass::FastStart, 0.0, &[(150.0, 400.0)], 150.0, 1, 500.0, 200.0);
    let mut market = MarketConfig {
        da_hours: 4,
        rtc_horizon_hours: 2,
        ..MarketConfig::default()
    };
    market.tier_percentiles = vec![5.0, 20.0, 35.0, 50.0, 65.0, 80.0, 95.0];
    SystemModel {
        name: "asymmetric".into(),
        generators: vec![base, mid, peak],
        accounts: vec![],
        reserve_products: default_ir_products(),
        strike_overrides: vec![],
        market,
    }
}

/// Net-load profile of the asymmetric instance with skewed hourly noise.
pub fn asymmetric_profile() -> DayProfile {
    DayProfile {
        load: vec![200.0, 230.0, 250.0, 220.0],
        wind: vec![0.0; 4],
        solar: vec![0.0; 4],
    }
}

/// Right-skewed net-load scenarios: a mixture of small symmetric errors and
/// occasional large upward deviations.
pub fn asymmetric_scenarios(resolution: f64, count: usize, seed: u64) -> Result<ScenarioSet> {
    let profile = asymmetric_profile();
    let per_hour = (60.0 / resolution).round() as usize;
    let base = upsample(&profile.load, per_hour);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let small = generate_synthetic_scenarios(
        &base,
        &NoiseConfig { std: 6.0, relative_std: 0.0, phi: 0.8f64.powf(1.0 / per_hour as f64), min: Some(0.0), max: None },
        count,
        seed ^ 0x5a5a,
    )?;
    let paths = small
        .into_iter()
        .map(|row| {
            let spike = if rng.random_bool(0.25) { rng.random_range(15.0..45.0) } else { 0.0 };
            row.into_iter().map(|v| v + spike).collect()
        })
        .collect();
    ScenarioSet::new(resolution, day_start(0), BTreeMap::from([(Constituent::Load, paths)]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::validate_system;

    #[test]
    fn desk_proportions() {
        let s = desk_system();
        assert_eq!(s.generators.len(), 30);
        let cap = |c: CommitClass| -> f64 { s.generators.iter().filter(|g| g.commit_class == c).map(|g| g.p_max).sum() };
        let (da, fast) = (cap(CommitClass::DaOnly), cap(CommitClass::FastStart));
        assert_eq!(s.generators.iter().filter(|g| g.is_fast()).count(), 6);
        assert!((da / fast - 61.0 / 8.0).abs() < 1e-9);
        assert!((WIND_CAPACITY / SOLAR_CAPACITY - 13.0).abs() < 1e-12);
        assert!(validate_system(&s, None).is_empty());
        assert!(validate_system(&asymmetric_system(), None).is_empty());
    }

    #[test]
    fn days_are_reproducible_and_distinct() {
        let cfg = MarketConfig::default();
        let a = desk_day(3, 0, 20, &cfg).unwrap();
        let b = desk_day(3, 0, 20, &cfg).unwrap();
        let c = desk_day(3, 1, 20, &cfg).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.profile, c.profile);
        assert_eq!(a.scenarios.num_intervals(), 24);
        assert_eq!(a.actual.num_intervals(), 96);
        let peak = (0..96).map(|k| a.actual.net_load(0, k)).fold(f64::MIN, f64::max);
        assert!(peak < desk_system().total_capacity());
    }
}
