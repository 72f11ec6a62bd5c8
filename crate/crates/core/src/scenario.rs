//! Seeded synthetic PV/load year and the noisy hourly region forecasts that
//! the day-ahead stage sees.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Network;

pub const STEPS_PER_DAY: usize = 96;
pub const STEPS_PER_HOUR: usize = 4;
pub const HOURS: usize = 24;
pub const DAYS_PER_YEAR: usize = 365;

/// Nominal case loads are treated as the annual peak; the daily shape with
/// seasonal and day noise tops out near 1.3, so the default scale brings the
/// yearly maximum back to roughly the nominal value.
pub const DEFAULT_LOAD_SCALE: f64 = 0.75;

/// Stream offset separating forecast-noise draws from profile draws.
const FORECAST_STREAM: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub seed: u64,
    /// Per-bus peak active load, MW.
    pub peak_p_mw: Vec<f64>,
    /// Per-bus power factor in (0, 1].
    pub power_factor: Vec<f64>,
    /// Per-PV installed capacity, MVA (before `pv_scale`).
    pub pv_capacity_mva: Vec<f64>,
    /// Multiplier applied to every peak load.
    pub load_scale: f64,
    /// Multiplier applied to every PV capacity.
    pub pv_scale: f64,
    /// Half-width of the uniform day-to-day load factor.
    pub load_day_noise: f64,
    pub load_seasonal_amplitude: f64,
    pub pv_seasonal_amplitude: f64,
    /// Fraction of capacity reached at clear-sky solar noon in midsummer.
    pub pv_peak_ratio: f64,
    pub cloud_min: f64,
    pub cloud_max: f64,
    /// Mean and seasonal half-swing of daylight length, hours.
    pub daylight_mean_h: f64,
    pub daylight_swing_h: f64,
    /// Relative standard deviation of the multiplicative forecast noise.
    pub forecast_noise: f64,
}

impl ScenarioConfig {
    /// Defaults drawn from the network's nominal loads and PV sizes.
    pub fn for_network(net: &Network, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            seed,
            peak_p_mw: net.buses.iter().map(|b| b.p_load_mw).collect(),
            power_factor: net
                .buses
                .iter()
                .map(|b| {
                    let s = b.p_load_mw.hypot(b.q_load_mvar);
                    if s > 0.0 {
                        b.p_load_mw / s
                    } else {
                        1.0
                    }
                })
                .collect(),
            pv_capacity_mva: net.pvs.iter().map(|p| p.s_mva).collect(),
            load_scale: DEFAULT_LOAD_SCALE,
            pv_scale: 1.0,
            load_day_noise: 0.10,
            load_seasonal_amplitude: 0.15,
            pv_seasonal_amplitude: 0.3,
            pv_peak_ratio: 0.95,
            cloud_min: 0.2,
            cloud_max: 1.0,
            daylight_mean_h: 12.0,
            daylight_swing_h: 2.0,
            forecast_noise: 0.05,
        }
    }

    /// Every day identical: no seasonal swing, clouds or day-to-day noise.
    pub fn steady(net: &Network, seed: u64) -> ScenarioConfig {
        ScenarioConfig {
            load_day_noise: 0.0,
            load_seasonal_amplitude: 0.0,
            pv_seasonal_amplitude: 0.0,
            cloud_min: 1.0,
            cloud_max: 1.0,
            daylight_swing_h: 0.0,
            ..ScenarioConfig::for_network(net, seed)
        }
    }

    pub fn validate(&self, net: &Network) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.peak_p_mw.len() != net.bus_count() || self.power_factor.len() != net.bus_count() {
            return bad(format!("per-bus vectors must have {} entries", net.bus_count()));
        }
        if self.pv_capacity_mva.len() != net.pvs.len() {
            return bad(format!("pv_capacity_mva must have {} entries", net.pvs.len()));
        }
        if let Some(p) = self.peak_p_mw.iter().find(|p| !(**p >= 0.0)) {
            return bad(format!("negative peak load {p}"));
        }
        if let Some(pf) = self.power_factor.iter().find(|pf| !(**pf > 0.0 && **pf <= 1.0)) {
            return bad(format!("power factor {pf} not in (0, 1]"));
        }
        if self.pv_capacity_mva.iter().any(|s| !(*s > 0.0)) {
            return bad("PV capacities must be positive".into());
        }
        if !(self.load_scale >= 0.0) || !(self.pv_scale >= 0.0) {
            return bad("scales must be non-negative".into());
        }
        if !(0.0 <= self.cloud_min && self.cloud_min <= self.cloud_max && self.cloud_max <= 1.0) {
            return bad("cloud range must satisfy 0 <= min <= max <= 1".into());
        }
        if !(0.0..=1.0).contains(&self.pv_peak_ratio) {
            return bad("pv_peak_ratio must be in [0, 1]".into());
        }
        if !(self.daylight_swing_h >= 0.0 && self.daylight_mean_h + self.daylight_swing_h <= 24.0) {
            return bad("daylight parameters out of range".into());
        }
        if !(self.forecast_noise >= 0.0) || !(0.0..1.0).contains(&self.load_day_noise) {
            return bad("noise levels out of range".into());
        }
        Ok(())
    }

    /// Longest daylight period of the year, hours.
    pub fn max_daylight_h(&self) -> f64 {
        self.daylight_mean_h + self.daylight_swing_h
    }

    pub fn effective_pv_capacity(&self) -> Vec<f64> {
        self.pv_capacity_mva.iter().map(|s| s * self.pv_scale).collect()
    }
}

/// Node-level truth for one day at 15-minute resolution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayProfile {
    pub day_index: usize,
    /// `[bus][step]`, MW.
    pub p_load: Vec<Vec<f64>>,
    /// `[bus][step]`, MVAr.
    pub q_load: Vec<Vec<f64>>,
    /// `[pv][step]`, MW.
    pub pv_p: Vec<Vec<f64>>,
}

impl DayProfile {
    /// System net load (load minus PV) at each step, MW.
    pub fn system_net_load(&self) -> Vec<f64> {
        (0..STEPS_PER_DAY)
            .map(|t| {
                self.p_load.iter().map(|b| b[t]).sum::<f64>() - self.pv_p.iter().map(|p| p[t]).sum::<f64>()
            })
            .collect()
    }
}

/// Hourly net-load forecasts, MW. Carries nothing finer than region/hour.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionForecast {
    /// `[region][hour]`.
    pub region: Vec<Vec<f64>>,
    pub system: Vec<f64>,
}

/// Clear-sky-free double-peak load shape with its maximum near 1.0.
pub fn load_shape(hour: f64) -> f64 {
    let bump = |c: f64, w: f64| (-(hour - c).powi(2) / (2.0 * w * w)).exp();
    0.45 + 0.25 * bump(8.0, 1.5) + 0.55 * bump(19.5, 2.0)
}

/// Daylight length for a day of the year, hours (longest near day 172).
fn daylight_hours(cfg: &ScenarioConfig, day: usize) -> f64 {
    cfg.daylight_mean_h + cfg.daylight_swing_h * (2.0 * PI * (day as f64 - 172.0) / 365.0).cos()
}

/// Normalized clear-sky irradiance bell; zero outside daylight.
pub fn clear_sky(hour: f64, daylight: f64) -> f64 {
    let sunrise = 12.0 - daylight / 2.0;
    let x = (hour - sunrise) / daylight;
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        (PI * x).sin().powf(1.5)
    }
}

fn step_hour(step: usize) -> f64 {
    (step as f64 + 0.5) / STEPS_PER_HOUR as f64
}

/// Seeded year generator; days are produced independently so they can be
/// generated lazily or in parallel.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub cfg: ScenarioConfig,
    /// Bus of each PV unit.
    pv_bus: Vec<usize>,
    /// Region of each bus and of each PV unit.
    bus_region: Vec<usize>,
    regions: usize,
}

impl Scenario {
    pub fn new(net: &Network, cfg: ScenarioConfig) -> Result<Scenario> {
        cfg.validate(net)?;
        Ok(Scenario {
            cfg,
            pv_bus: net.pvs.iter().map(|p| p.bus).collect(),
            bus_region: net.buses.iter().map(|b| b.region).collect(),
            regions: net.region_count,
        })
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(stream);
        rng
    }

    pub fn day(&self, day_index: usize) -> DayProfile {
        let cfg = &self.cfg;
        let mut rng = self.rng(day_index as u64);
        let season = (2.0 * PI * (day_index as f64 - 200.0) / 365.0).cos();
        let load_season = 1.0 + cfg.load_seasonal_amplitude * season;

        let n = cfg.peak_p_mw.len();
        let mut p_load = Vec::with_capacity(n);
        let mut q_load = Vec::with_capacity(n);
        for b in 0..n {
            let day_factor = 1.0 + rng.random_range(-cfg.load_day_noise..=cfg.load_day_noise);
            let peak = cfg.peak_p_mw[b] * cfg.load_scale * load_season * day_factor;
            let tan_phi = cfg.power_factor[b].acos().tan();
            let p: Vec<f64> = (0..STEPS_PER_DAY).map(|t| peak * load_shape(step_hour(t))).collect();
            let q: Vec<f64> = p.iter().map(|x| x * tan_phi).collect();
            p_load.push(p);
            q_load.push(q);
        }

        let daylight = daylight_hours(cfg, day_index);
        let pv_season = 1.0
            - cfg.pv_seasonal_amplitude
                * (1.0 - (2.0 * PI * (day_index as f64 - 172.0) / 365.0).cos())
                / 2.0;
        let cloud = rng.random_range(cfg.cloud_min..=cfg.cloud_max);
        let pv_p = cfg
            .effective_pv_capacity()
            .iter()
            .map(|&s| {
                (0..STEPS_PER_DAY)
                    .map(|t| {
                        let v = s * cfg.pv_peak_ratio * clear_sky(step_hour(t), daylight) * pv_season * cloud;
                        v.clamp(0.0, s)
                    })
                    .collect()
            })
            .collect();

        DayProfile {
            day_index,
            p_load,
            q_load,
            pv_p,
        }
    }

    pub fn generate_year(&self) -> Vec<DayProfile> {
        (0..DAYS_PER_YEAR).map(|d| self.day(d)).collect()
    }

    /// Noisy forecast for a day using the scenario's own noise stream.
    pub fn forecast(&self, day: &DayProfile) -> RegionForecast {
        let mut rng = self.rng(FORECAST_STREAM + day.day_index as u64);
        self.make_forecast(day, self.cfg.forecast_noise, &mut rng)
    }

    /// Hourly region/system net load with multiplicative Gaussian noise,
    /// independent per (series, hour).
    pub fn make_forecast<R: Rng>(&self, day: &DayProfile, sigma: f64, rng: &mut R) -> RegionForecast {
        let truth = true_hourly(day, &self.bus_region, &self.pv_bus, self.regions);
        let normal = Normal::new(0.0, sigma.max(0.0)).expect("sigma is finite");
        let noisy = |x: f64, rng: &mut R| {
            if sigma > 0.0 {
                x * (1.0 + normal.sample(rng))
            } else {
                x
            }
        };
        let region = truth
            .region
            .iter()
            .map(|series| series.iter().map(|&x| noisy(x, rng)).collect())
            .collect();
        let system = truth.system.iter().map(|&x| noisy(x, rng)).collect();
        RegionForecast { region, system }
    }

    /// Writes each generated day to `dir/day_XXX.json`.
    pub fn dump_year(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for d in 0..DAYS_PER_YEAR {
            let path = dir.join(format!("day_{d:03}.json"));
            let text = serde_json::to_string(&self.day(d)).expect("profile serializes");
            std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn true_hourly(day: &DayProfile, bus_region: &[usize], pv_bus: &[usize], regions: usize) -> RegionForecast {
    let mut region = vec![vec![0.0; HOURS]; regions];
    let mut system = vec![0.0; HOURS];
    for h in 0..HOURS {
        for t in h * STEPS_PER_HOUR..(h + 1) * STEPS_PER_HOUR {
            for (b, series) in day.p_load.iter().enumerate() {
                region[bus_region[b]][h] += series[t];
                system[h] += series[t];
            }
            for (k, series) in day.pv_p.iter().enumerate() {
                region[bus_region[pv_bus[k]]][h] -= series[t];
                system[h] -= series[t];
            }
        }
        for r in region.iter_mut() {
            r[h] /= STEPS_PER_HOUR as f64;
        }
        system[h] /= STEPS_PER_HOUR as f64;
    }
    RegionForecast { region, system }
}
