//! Discrete-event simulator for station-based bike-sharing systems.
//!
//! Users appear, decide where to rent (optionally reserving), ride, decide
//! where to return (optionally reserving a slot) and walk to their
//! destination. Every dispatched event is written to a JSON-lines history
//! from which the quality metrics are computed.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::fmt;

use serde::{Deserialize, Serialize};

pub mod audit;
pub mod config;
pub mod demand;
pub mod engine;
pub mod fleet;
pub mod geo;
pub mod history;
pub mod metrics;
pub mod recommend;
pub mod users;

pub use config::{GlobalConfig, Scenario, StationConfig, StationsConfig, UsersConfig};
pub use engine::{simulate, RunSummary, SimError, Simulation};
pub use fleet::{ReservationId, Station, StationId};
pub use geo::{GeoPoint, GreatCircleRouter, Router, TravelMode};
pub use history::{History, HistoryRecord};
pub use metrics::{MetricsCounters, MetricsReport};
pub use users::{UserConfig, UserTypeRegistry};

/// Index of a user in the users configuration file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct UserId(pub u32);

impl fmt::Display for UserId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}
