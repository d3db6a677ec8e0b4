//! Scenario configuration: simulation, mobility and feature parameters.
//!
//! Scenario files are flat TOML key/value documents. Every key maps onto one
//! field below; unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::FeatureParams;
use crate::geom::Point;
use crate::mobility::TraceTable;

pub const SLOW_SPEED: (f64, f64) = (1.0, 5.0);
pub const FAST_SPEED: (f64, f64) = (13.0, 17.0);

/// Buffer capacity and TTL used while collecting training data.
pub const TRAIN_BUFFER: usize = 200;
pub const TRAIN_TTL: u32 = 300;
/// Buffer capacity and TTL used for evaluation, large enough that nothing is dropped.
pub const TEST_BUFFER: usize = 2000;
pub const TEST_TTL: u32 = 3000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub scenario_id: String,
    pub area_width: f64,
    pub area_height: f64,
    pub node_count: usize,
    pub tx_range: f64,
    /// Seconds per timestep.
    pub timestep: f64,
    /// Total timesteps, cooldown included.
    pub duration: u64,
    /// Trailing timesteps without new traffic.
    pub cooldown: u64,
    pub buffer_cap: usize,
    pub initial_ttl: u32,
    /// Poisson rate of new flows per timestep.
    pub flow_arrival_rate: f64,
    /// Poisson rate of new packets per active flow per timestep.
    pub packet_rate: f64,
    pub flow_duration_mean: f64,
    pub rng_seed: u64,
}

impl SimConfig {
    pub fn default_flow_rate(node_count: usize) -> f64 {
        0.001 * node_count as f64 / 25.0
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.duration <= self.cooldown {
            return bad("duration must exceed cooldown");
        }
        if self.node_count < 2 {
            return bad("node_count must be at least 2");
        }
        if !(self.tx_range > 0.0) {
            return bad("tx_range must be positive");
        }
        if self.buffer_cap < 1 {
            return bad("buffer_cap must be at least 1");
        }
        if self.initial_ttl < 1 {
            return bad("initial_ttl must be at least 1");
        }
        if !(self.timestep > 0.0) {
            return bad("timestep must be positive");
        }
        if !(self.area_width > 0.0 && self.area_height > 0.0) {
            return bad("area dimensions must be positive");
        }
        for (name, v) in [
            ("flow_arrival_rate", self.flow_arrival_rate),
            ("packet_rate", self.packet_rate),
            ("flow_duration_mean", self.flow_duration_mean),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::InvalidConfig(format!("{name} must be a finite non-negative rate")));
            }
        }
        Ok(())
    }

    /// First timestep of the cooldown period.
    pub fn traffic_end(&self) -> u64 {
        self.duration - self.cooldown
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpeedClass {
    Slow,
    Fast,
}

impl SpeedClass {
    pub fn range(self) -> (f64, f64) {
        match self {
            SpeedClass::Slow => SLOW_SPEED,
            SpeedClass::Fast => FAST_SPEED,
        }
    }

    pub fn mean(self) -> f64 {
        let (lo, hi) = self.range();
        0.5 * (lo + hi)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MobilityModel {
    /// Random waypoint.
    Rwp,
    /// Reference point group mobility.
    Rpgm { groups: usize, group_radius: f64 },
    /// Manhattan grid with square blocks.
    Grid { block: f64 },
    /// Externally recorded positions.
    Trace { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MobilitySpec {
    pub model: MobilityModel,
    pub slow_count: usize,
    pub fast_count: usize,
    /// Pause at each waypoint, seconds.
    pub pause: f64,
    /// Steps simulated and discarded before t = 0.
    pub warmup: u64,
}

impl MobilitySpec {
    /// Speed class of node `i`: the first `slow_count` nodes are slow.
    pub fn class_of(&self, node: usize) -> Option<SpeedClass> {
        if matches!(self.model, MobilityModel::Trace { .. }) {
            None
        } else if node < self.slow_count {
            Some(SpeedClass::Slow)
        } else {
            Some(SpeedClass::Fast)
        }
    }

    pub fn group_of(&self, node: usize, node_count: usize) -> Option<usize> {
        match self.model {
            MobilityModel::Rpgm { groups, .. } if groups > 0 => {
                let per = node_count.div_ceil(groups);
                Some((node / per).min(groups - 1))
            }
            _ => None,
        }
    }

    pub fn nominal_mean_speed(&self) -> f64 {
        let n = self.slow_count + self.fast_count;
        if n == 0 {
            return SpeedClass::Slow.mean();
        }
        (self.slow_count as f64 * SpeedClass::Slow.mean()
            + self.fast_count as f64 * SpeedClass::Fast.mean())
            / n as f64
    }
}

/// Everything needed to run one simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub sim: SimConfig,
    pub mobility: MobilitySpec,
    pub features: FeatureParams,
    /// Speed used to convert distance into the transitive-timer travel penalty.
    pub mean_speed: f64,
}

/// On-disk form of a [`Scenario`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub scenario_id: String,
    pub area_width: f64,
    pub area_height: f64,
    pub node_count: usize,
    pub tx_range: f64,
    #[serde(default = "one")]
    pub timestep: f64,
    pub duration: u64,
    pub cooldown: u64,
    #[serde(default = "default_buffer")]
    pub buffer_cap: usize,
    #[serde(default = "default_ttl")]
    pub initial_ttl: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow_arrival_rate: Option<f64>,
    #[serde(default = "default_packet_rate")]
    pub packet_rate: f64,
    #[serde(default = "default_flow_duration")]
    pub flow_duration_mean: f64,
    #[serde(default)]
    pub rng_seed: u64,

    /// One of `rwp`, `rpgm`, `grid`, `trace`.
    pub mobility: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slow_count: Option<usize>,
    #[serde(default)]
    pub fast_count: usize,
    #[serde(default)]
    pub pause: f64,
    #[serde(default = "default_warmup")]
    pub warmup: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub groups: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_block: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_path: Option<PathBuf>,

    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_speed: Option<f64>,
}

fn one() -> f64 {
    1.0
}
fn default_buffer() -> usize {
    TRAIN_BUFFER
}
fn default_ttl() -> u32 {
    TRAIN_TTL
}
fn default_packet_rate() -> f64 {
    0.01
}
fn default_flow_duration() -> f64 {
    5000.0
}
fn default_warmup() -> u64 {
    5000
}

pub const DEFAULT_GROUP_RADIUS: f64 = 60.0;
pub const DEFAULT_GRID_BLOCK: f64 = 50.0;

impl ScenarioFile {
    pub fn into_scenario(self, base_dir: Option<&Path>) -> Result<Scenario> {
        let n = self.node_count;
        let slow = self.slow_count.unwrap_or(n.saturating_sub(self.fast_count));
        let model = match self.mobility.as_str() {
            "rwp" => MobilityModel::Rwp,
            "rpgm" => MobilityModel::Rpgm {
                groups: self.groups.unwrap_or(1),
                group_radius: self.group_radius.unwrap_or(DEFAULT_GROUP_RADIUS),
            },
            "grid" => MobilityModel::Grid { block: self.grid_block.unwrap_or(DEFAULT_GRID_BLOCK) },
            "trace" => {
                let p = self
                    .trace_path
                    .clone()
                    .ok_or_else(|| Error::InvalidConfig("trace mobility needs trace_path".into()))?;
                let p = match base_dir {
                    Some(dir) if p.is_relative() => dir.join(p),
                    _ => p,
                };
                MobilityModel::Trace { path: p }
            }
            other => return Err(Error::InvalidConfig(format!("unknown mobility model '{other}'"))),
        };
        let mobility = MobilitySpec {
            model,
            slow_count: slow,
            fast_count: self.fast_count,
            pause: self.pause,
            warmup: self.warmup,
        };
        let features = FeatureParams { beta: self.beta.unwrap_or(0.5), ..FeatureParams::default() };
        let mean_speed = self.mean_speed.unwrap_or_else(|| mobility.nominal_mean_speed());
        let sim = SimConfig {
            scenario_id: self.scenario_id,
            area_width: self.area_width,
            area_height: self.area_height,
            node_count: n,
            tx_range: self.tx_range,
            timestep: self.timestep,
            duration: self.duration,
            cooldown: self.cooldown,
            buffer_cap: self.buffer_cap,
            initial_ttl: self.initial_ttl,
            flow_arrival_rate: self.flow_arrival_rate.unwrap_or_else(|| SimConfig::default_flow_rate(n)),
            packet_rate: self.packet_rate,
            flow_duration_mean: self.flow_duration_mean,
            rng_seed: self.rng_seed,
        };
        let sc = Scenario { sim, mobility, features, mean_speed };
        sc.validate()?;
        Ok(sc)
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        let m = &self.mobility;
        if !matches!(m.model, MobilityModel::Trace { .. })
            && m.slow_count + m.fast_count != self.sim.node_count
        {
            return Err(Error::InvalidConfig(format!(
                "speed mix {}+{} does not sum to node_count {}",
                m.slow_count, m.fast_count, self.sim.node_count
            )));
        }
        if !(m.pause >= 0.0) {
            return Err(Error::InvalidConfig("pause must be non-negative".into()));
        }
        match m.model {
            MobilityModel::Rpgm { groups, group_radius } => {
                if groups == 0 || groups > self.sim.node_count || !(group_radius >= 0.0) {
                    return Err(Error::InvalidConfig("rpgm needs 1..=N groups and radius >= 0".into()));
                }
            }
            MobilityModel::Grid { block } => {
                if !(block > 0.0) {
                    return Err(Error::InvalidConfig("grid_block must be positive".into()));
                }
            }
            _ => {}
        }
        if !(0.0..=1.0).contains(&self.features.beta) {
            return Err(Error::InvalidConfig("beta must lie in [0, 1]".into()));
        }
        if !(self.mean_speed > 0.0) {
            return Err(Error::InvalidConfig("mean_speed must be positive".into()));
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::config(path, e.to_string()))?;
        Self::from_toml(&text, path.parent()).map_err(|e| match e {
            Error::Config { msg, .. } => Error::config(path, msg),
            Error::InvalidConfig(msg) => Error::config(path, msg),
            other => other,
        })
    }

    pub fn from_toml(text: &str, base_dir: Option<&Path>) -> Result<Scenario> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| Error::config("<scenario>", e.to_string()))?;
        file.into_scenario(base_dir)
    }

    pub fn to_file(&self) -> ScenarioFile {
        let (mobility, groups, group_radius, grid_block, trace_path) = match &self.mobility.model {
            MobilityModel::Rwp => ("rwp", None, None, None, None),
            MobilityModel::Rpgm { groups, group_radius } => {
                ("rpgm", Some(*groups), Some(*group_radius), None, None)
            }
            MobilityModel::Grid { block } => ("grid", None, None, Some(*block), None),
            MobilityModel::Trace { path } => ("trace", None, None, None, Some(path.clone())),
        };
        let s = &self.sim;
        ScenarioFile {
            scenario_id: s.scenario_id.clone(),
            area_width: s.area_width,
            area_height: s.area_height,
            node_count: s.node_count,
            tx_range: s.tx_range,
            timestep: s.timestep,
            duration: s.duration,
            cooldown: s.cooldown,
            buffer_cap: s.buffer_cap,
            initial_ttl: s.initial_ttl,
            flow_arrival_rate: Some(s.flow_arrival_rate),
            packet_rate: s.packet_rate,
            flow_duration_mean: s.flow_duration_mean,
            rng_seed: s.rng_seed,
            mobility: mobility.to_string(),
            slow_count: Some(self.mobility.slow_count),
            fast_count: self.mobility.fast_count,
            pause: self.mobility.pause,
            warmup: self.mobility.warmup,
            groups,
            group_radius,
            grid_block,
            trace_path,
            beta: Some(self.features.beta),
            mean_speed: Some(self.mean_speed),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("scenario serializes")
    }

    /// Short fingerprint of the full configuration, embedded in output artifacts.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.to_toml().as_bytes());
        let out = h.finalize();
        out.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.sim.rng_seed = seed;
        self
    }

    /// Switch to evaluation buffer/TTL sizes.
    pub fn testing(mut self) -> Self {
        self.sim.buffer_cap = TEST_BUFFER;
        self.sim.initial_ttl = TEST_TTL;
        self
    }

    pub fn with_duration(mut self, duration: u64, cooldown: u64) -> Self {
        self.sim.duration = duration;
        self.sim.cooldown = cooldown;
        self
    }

    pub fn with_range(mut self, r: f64) -> Self {
        self.sim.tx_range = r;
        self
    }
}

/// Named scenarios of the small (500 m x 500 m) training family and the large
/// (1000 m x 1000 m) testing family.
pub mod presets {
    use super::*;

    fn base(id: &str, side: f64, n: usize, r: f64, model: MobilityModel, slow: usize, fast: usize) -> Scenario {
        let mobility = MobilitySpec { model, slow_count: slow, fast_count: fast, pause: 0.0, warmup: 5000 };
        let mean_speed = mobility.nominal_mean_speed();
        Scenario {
            sim: SimConfig {
                scenario_id: id.to_string(),
                area_width: side,
                area_height: side,
                node_count: n,
                tx_range: r,
                timestep: 1.0,
                duration: 100_000,
                cooldown: 40_000,
                buffer_cap: TRAIN_BUFFER,
                initial_ttl: TRAIN_TTL,
                flow_arrival_rate: SimConfig::default_flow_rate(n),
                packet_rate: 0.01,
                flow_duration_mean: 5000.0,
                rng_seed: 0,
            },
            mobility,
            features: FeatureParams::default(),
            mean_speed,
        }
    }

    /// Small-network scenario by name: `rpgm-1group`, `rpgm-2group`, `rwp-3`,
    /// `rwp-15`, `rwp-mix1`, `rwp-mix2`, `rwp-mix3`.
    pub fn small(name: &str, r: f64) -> Option<Scenario> {
        let id = format!("{name}-r{r}");
        let rpgm = |g| MobilityModel::Rpgm { groups: g, group_radius: DEFAULT_GROUP_RADIUS };
        Some(match name {
            "rpgm-1group" => base(&id, 500.0, 25, r, rpgm(1), 25, 0),
            "rpgm-2group" => base(&id, 500.0, 24, r, rpgm(2), 24, 0),
            "rwp-3" => base(&id, 500.0, 25, r, MobilityModel::Rwp, 25, 0),
            "rwp-15" => base(&id, 500.0, 25, r, MobilityModel::Rwp, 0, 25),
            "rwp-mix1" => base(&id, 500.0, 25, r, MobilityModel::Rwp, 5, 20),
            "rwp-mix2" => base(&id, 500.0, 25, r, MobilityModel::Rwp, 12, 13),
            "rwp-mix3" => base(&id, 500.0, 25, r, MobilityModel::Rwp, 20, 5),
            _ => return None,
        })
    }

    /// Fixed node positions, driven by an in-memory trace. Area is 500 m x 500 m.
    pub fn stationary(id: &str, points: &[Point], r: f64, duration: u64, cooldown: u64) -> (Scenario, TraceTable) {
        let model = MobilityModel::Trace { path: PathBuf::new() };
        let mut sc = base(id, 500.0, points.len(), r, model, 0, 0);
        sc.mean_speed = 3.0;
        sc = sc.with_duration(duration, cooldown);
        (sc, TraceTable::stationary(points, duration))
    }

    /// Large-network scenario: the small family scaled 4x, plus `grid-3`,
    /// `grid-15`, `grid-mix1..3`.
    pub fn large(name: &str, r: f64) -> Option<Scenario> {
        let id = format!("large-{name}-r{r}");
        let grid = MobilityModel::Grid { block: DEFAULT_GRID_BLOCK };
        let mut sc = match name {
            "grid-3" => base(&id, 1000.0, 100, r, grid, 100, 0),
            "grid-15" => base(&id, 1000.0, 100, r, grid, 0, 100),
            "grid-mix1" => base(&id, 1000.0, 100, r, grid, 20, 80),
            "grid-mix2" => base(&id, 1000.0, 100, r, grid, 48, 52),
            "grid-mix3" => base(&id, 1000.0, 100, r, grid, 80, 20),
            _ => {
                let small = small(name, r)?;
                let n = small.sim.node_count * 4;
                let slow = small.mobility.slow_count * 4;
                let fast = small.mobility.fast_count * 4;
                base(&id, 1000.0, n, r, small.mobility.model, slow, fast)
            }
        };
        sc.sim.duration = 50_000;
        sc.sim.cooldown = 20_000;
        Some(sc.testing())
    }
}
