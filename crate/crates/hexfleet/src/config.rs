//! Run configuration: one TOML table per subsystem, strict key checking,
//! documented defaults, and range validation with key-path diagnostics.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::TrainConfig;
use crate::env::{EnergyModel, EnvParams, FleetConfig, RewardParams};
use crate::scenario::{FareModel, SynthConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config value out of range: {key}: {message}")]
    Range { key: &'static str, message: String },
}

macro_rules! range {
    ($cond:expr, $key:literal, $($msg:tt)*) => {
        if !($cond) {
            return Err(ConfigError::Range { key: $key, message: format!($($msg)*) });
        }
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    pub rows: usize,
    pub cols: usize,
    pub hex_pitch_km: f64,
    pub n_stations: usize,
    pub exclusion_radius: u32,
}

impl Default for GridSection {
    fn default() -> Self {
        GridSection { rows: 5, cols: 5, hex_pitch_km: 0.8, n_stations: 2, exclusion_radius: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub horizon: usize,
    pub hotspots: usize,
    pub peak_rate: f64,
    pub dt_min: f64,
    pub base_fare: f64,
    pub fare_per_km: f64,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        ScenarioSection {
            horizon: 288,
            hotspots: 2,
            peak_rate: 5.0,
            dt_min: 5.0,
            base_fare: 2.5,
            fare_per_km: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FleetSection {
    pub n_vehicles: usize,
    pub e_max_kwh: f64,
    pub e_min_kwh: f64,
    pub init_soc_min_frac: f64,
    pub init_soc_max_frac: f64,
    pub ports_per_station: u32,
    pub station_p_max_kw: f64,
    pub feeder_cap_kw: f64,
}

impl Default for FleetSection {
    fn default() -> Self {
        FleetSection {
            n_vehicles: 20,
            e_max_kwh: 50.0,
            e_min_kwh: 5.0,
            init_soc_min_frac: 0.5,
            init_soc_max_frac: 0.9,
            ports_per_station: 5,
            station_p_max_kw: 30.0,
            feeder_cap_kw: 60.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvSection {
    pub eta_drv_kwh_per_km: f64,
    pub eta_c: f64,
    pub c_drv_per_km: f64,
    pub lambda_wait: f64,
    pub lambda_drop: f64,
    pub w_max_steps: u32,
    pub p_min_kw: f64,
    pub base_price_per_kwh: f64,
    pub peak_price_amp: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        EnvSection {
            eta_drv_kwh_per_km: 0.18,
            eta_c: 0.9,
            c_drv_per_km: 0.3,
            lambda_wait: 0.5,
            lambda_drop: 0.1,
            w_max_steps: 6,
            p_min_kw: 1.0,
            base_price_per_kwh: 0.18,
            peak_price_amp: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectionSection {
    pub mu: f64,
    pub milp_time_limit_s: f64,
    pub milp_node_cap: u64,
}

impl Default for ProjectionSection {
    fn default() -> Self {
        ProjectionSection { mu: 0.5, milp_time_limit_s: 3.0, milp_node_cap: 400 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WdroSection {
    pub rho: f64,
    pub rho_target: f64,
    pub beta: f64,
    pub eta0: f64,
    pub inner_k: usize,
    /// Step size as a fraction of the support radius.
    pub inner_step: f64,
    pub ball_radius: f64,
    pub lambda0: f64,
}

impl Default for WdroSection {
    fn default() -> Self {
        WdroSection {
            rho: 0.3,
            rho_target: 0.2,
            beta: 0.3,
            eta0: 0.01,
            inner_k: 10,
            inner_step: 0.05,
            ball_radius: 0.9,
            lambda0: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NeuralSection {
    pub hidden: usize,
    pub alpha: f64,
}

impl Default for NeuralSection {
    fn default() -> Self {
        NeuralSection { hidden: 64, alpha: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentSection {
    pub lr_actor: f64,
    pub lr_critic: f64,
    pub lr_value: f64,
    pub gamma: f64,
    pub buffer: usize,
    pub batch: usize,
    pub episodes: usize,
    pub steps_per_episode: usize,
    pub warmup_steps: usize,
    pub polyak_tau: f64,
    pub greedy_pickup_hops: u32,
    pub eval_episodes: usize,
}

impl Default for AgentSection {
    fn default() -> Self {
        AgentSection {
            lr_actor: 5e-5,
            lr_critic: 1e-4,
            lr_value: 1e-4,
            gamma: 0.995,
            buffer: 100_000,
            batch: 128,
            episodes: 200,
            steps_per_episode: 48,
            warmup_steps: 256,
            polyak_tau: 0.005,
            greedy_pickup_hops: 3,
            eval_episodes: 50,
        }
    }
}

/// Merged view of every subsystem's settings.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub grid: GridSection,
    pub scenario: ScenarioSection,
    pub fleet: FleetSection,
    pub env: EnvSection,
    pub projection: ProjectionSection,
    pub wdro: WdroSection,
    pub neural: NeuralSection,
    pub agent: AgentSection,
}

impl RunConfig {
    /// Parse a TOML document; unknown keys are errors, missing keys take the
    /// documented defaults. Every numeric field is range-checked.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        range!(self.grid.rows > 0 && self.grid.cols > 0, "grid.rows/cols", "grid dimensions must be positive");
        range!(self.grid.hex_pitch_km > 0.0, "grid.hex_pitch_km", "must be positive");
        range!(
            self.grid.n_stations <= self.grid.rows * self.grid.cols,
            "grid.n_stations",
            "more stations than cells"
        );
        range!(self.scenario.horizon >= 1, "scenario.horizon", "must be at least 1");
        range!(self.scenario.peak_rate >= 0.0, "scenario.peak_rate", "must be nonnegative");
        range!(self.scenario.dt_min > 0.0, "scenario.dt_min", "must be positive");
        range!(self.scenario.base_fare >= 0.0, "scenario.base_fare", "must be nonnegative");
        range!(self.scenario.fare_per_km >= 0.0, "scenario.fare_per_km", "must be nonnegative");
        range!(self.fleet.n_vehicles > 0, "fleet.n_vehicles", "must be positive");
        range!(self.fleet.e_max_kwh > 0.0, "fleet.e_max_kwh", "must be positive");
        range!(
            self.fleet.e_min_kwh >= 0.0 && self.fleet.e_min_kwh < self.fleet.e_max_kwh,
            "fleet.e_min_kwh",
            "must lie in [0, e_max)"
        );
        range!(
            (0.0..=1.0).contains(&self.fleet.init_soc_min_frac)
                && self.fleet.init_soc_min_frac <= self.fleet.init_soc_max_frac
                && self.fleet.init_soc_max_frac <= 1.0,
            "fleet.init_soc_frac",
            "need 0 <= min <= max <= 1"
        );
        range!(self.fleet.feeder_cap_kw >= 0.0, "fleet.feeder_cap_kw", "must be nonnegative");
        range!(self.env.eta_drv_kwh_per_km > 0.0, "env.eta_drv_kwh_per_km", "must be positive");
        range!(
            self.env.eta_c > 0.0 && self.env.eta_c <= 1.0,
            "env.eta_c",
            "must lie in (0, 1], got {}",
            self.env.eta_c
        );
        range!(self.env.c_drv_per_km >= 0.0, "env.c_drv_per_km", "must be nonnegative");
        range!(self.env.lambda_wait >= 0.0, "env.lambda_wait", "must be nonnegative");
        range!(self.env.lambda_drop >= 0.0, "env.lambda_drop", "must be nonnegative");
        range!(self.env.w_max_steps >= 1, "env.w_max_steps", "must be at least 1");
        range!(self.env.p_min_kw >= 0.0, "env.p_min_kw", "must be nonnegative");
        range!(self.projection.mu >= 0.0, "projection.mu", "must be nonnegative");
        range!(
            self.projection.milp_time_limit_s >= 0.0,
            "projection.milp_time_limit_s",
            "must be nonnegative"
        );
        range!(self.wdro.rho >= 0.0, "wdro.rho", "must be nonnegative");
        range!(
            self.wdro.rho_target >= 0.0 && self.wdro.rho_target <= self.wdro.rho.max(1e-12),
            "wdro.rho_target",
            "must lie in [0, rho]"
        );
        range!(self.wdro.beta >= 0.0, "wdro.beta", "must be nonnegative");
        range!(self.wdro.eta0 > 0.0, "wdro.eta0", "must be positive");
        range!(self.wdro.inner_k >= 1, "wdro.inner_k", "must be at least 1");
        range!(self.wdro.inner_step > 0.0, "wdro.inner_step", "must be positive");
        range!(self.wdro.ball_radius >= 0.0, "wdro.ball_radius", "must be nonnegative");
        range!(self.wdro.lambda0 >= 0.0, "wdro.lambda0", "must be nonnegative");
        range!(self.neural.hidden >= 1, "neural.hidden", "must be at least 1");
        range!(self.neural.alpha >= 0.0, "neural.alpha", "must be nonnegative");
        range!(
            self.agent.gamma > 0.0 && self.agent.gamma < 1.0,
            "agent.gamma",
            "gamma must lie in (0,1), got {}",
            self.agent.gamma
        );
        range!(self.agent.lr_actor > 0.0, "agent.lr_actor", "must be positive");
        range!(self.agent.lr_critic > 0.0, "agent.lr_critic", "must be positive");
        range!(self.agent.lr_value > 0.0, "agent.lr_value", "must be positive");
        range!(self.agent.buffer > 0, "agent.buffer", "must be positive");
        range!(self.agent.batch > 0, "agent.batch", "must be positive");
        range!(self.agent.episodes > 0, "agent.episodes", "must be positive");
        range!(self.agent.steps_per_episode > 0, "agent.steps_per_episode", "must be positive");
        Ok(())
    }

    pub fn fleet_config(&self) -> FleetConfig {
        FleetConfig {
            n_vehicles: self.fleet.n_vehicles,
            e_max: self.fleet.e_max_kwh,
            e_min: self.fleet.e_min_kwh,
            init_soc_frac: (self.fleet.init_soc_min_frac, self.fleet.init_soc_max_frac),
            ports_per_station: self.fleet.ports_per_station,
            station_p_max_kw: self.fleet.station_p_max_kw,
            feeder_cap_kw: self.fleet.feeder_cap_kw,
        }
    }

    pub fn env_params(&self) -> EnvParams {
        EnvParams {
            energy: EnergyModel { eta_drv: self.env.eta_drv_kwh_per_km, eta_c: self.env.eta_c },
            rewards: RewardParams {
                c_drv: self.env.c_drv_per_km,
                lambda_wait: self.env.lambda_wait,
                lambda_drop: self.env.lambda_drop,
                w_max: self.env.w_max_steps,
            },
            fare: FareModel { base_fare: self.scenario.base_fare, per_km: self.scenario.fare_per_km },
            p_min_kw: self.env.p_min_kw,
            dt_min: self.scenario.dt_min,
            base_price: self.env.base_price_per_kwh,
            peak_price_amp: self.env.peak_price_amp,
        }
    }

    pub fn synth_config(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            horizon: self.scenario.horizon,
            hotspots: self.scenario.hotspots,
            peak_rate: self.scenario.peak_rate,
            seed,
            dt_min: self.scenario.dt_min,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr_actor: self.agent.lr_actor,
            lr_critic: self.agent.lr_critic,
            lr_value: self.agent.lr_value,
            gamma: self.agent.gamma,
            buffer_capacity: self.agent.buffer,
            batch_size: self.agent.batch,
            rho: self.wdro.rho,
            rho_target: self.wdro.rho_target,
            beta: self.wdro.beta,
            eta0: self.wdro.eta0,
            tau_max_s: self.projection.milp_time_limit_s,
            milp_node_cap: self.projection.milp_node_cap,
            mu: self.projection.mu,
            polyak_tau: self.agent.polyak_tau,
            alpha: self.neural.alpha,
            inner_k: self.wdro.inner_k,
            inner_step_frac: self.wdro.inner_step,
            ball_radius: self.wdro.ball_radius,
            lambda0: self.wdro.lambda0,
            hidden: self.neural.hidden,
            episodes: self.agent.episodes,
            steps_per_episode: self.agent.steps_per_episode,
            warmup_steps: self.agent.warmup_steps,
            greedy_pickup_hops: self.agent.greedy_pickup_hops,
        }
    }

    pub fn build_grid(&self) -> Result<crate::hexgrid::HexGrid, crate::hexgrid::GridError> {
        crate::hexgrid::build_grid_spaced(
            self.grid.rows,
            self.grid.cols,
            self.grid.hex_pitch_km,
            self.grid.n_stations,
            0,
            None,
            self.grid.exclusion_radius,
        )
    }
}
