use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const DEVICE_DIM: usize = 8;
pub const PATH_DIM: usize = 4;
pub const LOCAL_DIM: usize = DEVICE_DIM + PATH_DIM;
pub const STATE_DIM: usize = 1 + LOCAL_DIM + 3 * LOCAL_DIM;
pub const ACTION_DIM: usize = LOCAL_DIM + 2;
pub const FEATURE_DIM: usize = STATE_DIM + ACTION_DIM;

const DEVICE_NAMES: [&str; DEVICE_DIM] = [
    "queue_len",
    "node_density",
    "node_degree",
    "dynconn_short",
    "dynconn_long",
    "dispersion_short",
    "dispersion_long",
    "new_neighbors",
];
const PATH_NAMES: [&str; PATH_DIM] = ["dst_queue_len", "distance", "transitive_timer", "aoi"];

/// Scenario-independent feature constants. Together with the ordered feature
/// names they define the schema a model is trained against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureParams {
    /// Degree at which a node counts as well connected.
    pub degree_scale: f64,
    /// Length scale for distances and dispersion, meters.
    pub length_scale: f64,
    /// Sigmoid steepness for timers.
    pub sigmoid_k: f64,
    /// Sigmoid midpoint for timers, seconds.
    pub sigmoid_mid: f64,
    /// Initial transitive timer and AoI, seconds.
    pub timer_init: f64,
    pub dynconn_short: u64,
    pub dynconn_long: u64,
    pub dispersion_short: u64,
    pub dispersion_long: u64,
    /// EWMA weight on the newest dispersion window.
    pub beta: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        FeatureParams {
            degree_scale: 10.0,
            length_scale: 1500.0,
            sigmoid_k: 0.01,
            sigmoid_mid: 200.0,
            timer_init: 200.0,
            dynconn_short: 100,
            dynconn_long: 500,
            dispersion_short: 10,
            dispersion_long: 100,
            beta: 0.5,
        }
    }
}

impl FeatureParams {
    pub fn dispersion_short_init(&self) -> f64 {
        self.length_scale / 20.0
    }

    pub fn dispersion_long_init(&self) -> f64 {
        self.length_scale / 5.0
    }

    pub fn distance_init(&self) -> f64 {
        self.length_scale / 2.0
    }
}

/// Per-scenario normalization bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub ttl: f64,
    pub buffer: f64,
    pub nodes: f64,
}

pub fn norm_ttl(x: f64, ttl: f64) -> f64 {
    ((x + 1.0) / (ttl + 1.0)).clamp(0.0, 1.0)
}

pub fn norm_queue(x: f64, buffer: f64) -> f64 {
    ((x + 1.0) / (buffer + 1.0)).clamp(0.0, 1.0)
}

pub fn norm_density(x: f64, nodes: f64) -> f64 {
    ((x + 1.0) / (nodes + 1.0)).min(1.0)
}

pub fn norm_degree(x: f64, scale: f64) -> f64 {
    ((x + 1.0) / (scale + 1.0)).min(1.0)
}

pub fn norm_dynconn(x: f64, nodes: f64) -> f64 {
    ((x + 1.0) / nodes).min(1.0)
}

pub fn norm_length(x: f64, length: f64) -> f64 {
    ((x + 1.0) / (length + 1.0)).clamp(0.0, 1.0)
}

pub fn shifted_sigmoid(x: f64, k: f64, mid: f64) -> f64 {
    1.0 / (1.0 + (-k * (x - mid)).exp())
}

/// Ordered feature names plus the constants they are normalized with.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSchema {
    pub names: Vec<String>,
    pub params: FeatureParams,
}

impl FeatureSchema {
    pub fn new(params: FeatureParams) -> Self {
        let local: Vec<String> = DEVICE_NAMES
            .iter()
            .map(|n| format!("device.{n}"))
            .chain(PATH_NAMES.iter().map(|n| format!("path.{n}")))
            .collect();
        let mut names = vec!["packet.ttl".to_string()];
        names.extend(local.iter().cloned());
        for agg in ["min", "max", "mean"] {
            names.extend(local.iter().map(|n| format!("neighborhood.{agg}.{n}")));
        }
        names.extend(local.iter().map(|n| format!("action.{n}")));
        names.push("action.visited".into());
        names.push("action.transmit".into());
        debug_assert_eq!(names.len(), FEATURE_DIM);
        FeatureSchema { names, params }
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    /// Fingerprint over the ordered names and constants.
    pub fn hash(&self) -> String {
        let p = &self.params;
        let mut h = Sha256::new();
        for n in &self.names {
            h.update(n.as_bytes());
            h.update(b"\n");
        }
        let consts = format!(
            "S={:?};L={:?};k={:?};mid={:?};init={:?};ds={};dl={};ts={};tl={};beta={:?}",
            p.degree_scale,
            p.length_scale,
            p.sigmoid_k,
            p.sigmoid_mid,
            p.timer_init,
            p.dynconn_short,
            p.dynconn_long,
            p.dispersion_short,
            p.dispersion_long,
            p.beta
        );
        h.update(consts.as_bytes());
        h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    /// Human-readable dump: hash, constants, then one name per line.
    pub fn dump(&self) -> String {
        #[derive(Serialize)]
        struct Dump<'a> {
            hash: String,
            dim: usize,
            params: &'a FeatureParams,
            names: &'a [String],
        }
        toml::to_string(&Dump { hash: self.hash(), dim: self.dim(), params: &self.params, names: &self.names })
            .expect("schema serializes")
    }
}

impl Default for FeatureSchema {
    fn default() -> Self {
        Self::new(FeatureParams::default())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dimension_is_sixty_three() {
        assert_eq!(1 + 8 + 4 + 36 + 12 + 2, 63);
        assert_eq!(FEATURE_DIM, 63);
        assert_eq!(STATE_DIM, 49);
        assert_eq!(ACTION_DIM, 14);
        assert_eq!(FeatureSchema::default().dim(), 63);
    }

    #[test]
    fn golden_normalizations() {
        assert_eq!(norm_ttl(0.0, 300.0), 1.0 / 301.0);
        assert!((norm_ttl(0.0, 300.0) - 0.00332).abs() < 1e-5);
        assert_eq!(shifted_sigmoid(200.0, 0.01, 200.0), 0.5);
        assert_eq!(norm_degree(12.0, 10.0), 1.0);
        assert_eq!(norm_degree(4.0, 10.0), 5.0 / 11.0);
        assert_eq!(norm_density(4.0, 25.0), 5.0 / 26.0);
        assert_eq!(norm_dynconn(24.0, 25.0), 1.0);
        assert_eq!(norm_length(750.0, 1500.0), 751.0 / 1501.0);
        assert_eq!(norm_queue(20.0, 200.0), 21.0 / 201.0);
    }

    #[test]
    fn hash_tracks_names_and_params() {
        let a = FeatureSchema::default();
        assert_eq!(a.hash(), FeatureSchema::default().hash());
        let b = FeatureSchema::new(FeatureParams { beta: 0.3, ..FeatureParams::default() });
        assert_ne!(a.hash(), b.hash());
        let mut c = FeatureSchema::default();
        c.names.swap(1, 2);
        assert_ne!(a.hash(), c.hash());
        assert!(a.dump().contains(&a.hash()));
    }
}
