//! Per-node knowledge tables and assembly of the normalized state/action
//! feature vectors fed to the Q-network.

mod builder;
mod schema;
mod state;

pub use builder::FeatureContext;
pub use schema::*;
pub use state::{ewma, max_excursion, window_dispersion, NodeState, PeerTables};
