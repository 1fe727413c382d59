//! Global, stations and users configuration files.
//!
//! Parsing is strict: unknown fields are rejected with the JSON path of the
//! offending field. Semantic checks collect every violation before failing.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::fleet::StationId;
use crate::geo::{BoundingBox, GeoPoint};
use crate::recommend::{RecommenderConfig, RecommenderRegistry};
use crate::users::{UserConfig, UserTypeRegistry};

pub const DEFAULT_RESERVATION_TIME: f64 = 1200.0;
pub const DEFAULT_RETURN_RETRY_DELAY: f64 = 60.0;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub file: String,
    pub field: String,
    pub rule: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.file, self.field, self.rule)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{file}: {field}: {message}")]
    Parse {
        file: String,
        field: String,
        message: String,
    },
    #[error("{}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Violation>),
}

fn default_reservation_time() -> f64 {
    DEFAULT_RESERVATION_TIME
}
fn default_circuity() -> f64 {
    1.0
}
fn default_retry_delay() -> f64 {
    DEFAULT_RETURN_RETRY_DELAY
}
fn default_output_path() -> PathBuf {
    PathBuf::from("output")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct GlobalConfig {
    /// Seconds before a reservation expires.
    #[serde(default = "default_reservation_time")]
    pub reservation_time: f64,
    /// Users may only appear within `[0, totalSimulationTime]`.
    pub total_simulation_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_seed: Option<u64>,
    pub bounding_box: BoundingBox,
    /// Graph data for a street-network router. Accepted but unused by the
    /// built-in great-circle router.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub map: Option<PathBuf>,
    #[serde(default = "default_output_path")]
    pub output_path: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommendation_system_type: Option<RecommenderConfig>,
    #[serde(default = "default_circuity")]
    pub circuity_walk: f64,
    #[serde(default = "default_circuity")]
    pub circuity_cycle: f64,
    /// Wait before retrying once every return station has failed.
    #[serde(default = "default_retry_delay")]
    pub return_retry_delay: f64,
}

impl GlobalConfig {
    pub fn new(total_simulation_time: f64, bounding_box: BoundingBox) -> Self {
        Self {
            reservation_time: DEFAULT_RESERVATION_TIME,
            total_simulation_time,
            random_seed: None,
            bounding_box,
            map: None,
            output_path: default_output_path(),
            recommendation_system_type: None,
            circuity_walk: 1.0,
            circuity_cycle: 1.0,
            return_retry_delay: DEFAULT_RETURN_RETRY_DELAY,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct StationConfig {
    pub id: StationId,
    pub position: GeoPoint,
    pub capacity: u32,
    pub initial_bikes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationsConfig {
    pub stations: Vec<StationConfig>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UsersConfig {
    pub users: Vec<UserConfig>,
}

pub const GLOBAL_FILE: &str = "global";
pub const STATIONS_FILE: &str = "stations";
pub const USERS_FILE: &str = "users";

/// Parses JSON text, reporting failures with the JSON path of the field.
pub fn parse_json<T: DeserializeOwned>(text: &str, file: &str) -> Result<T, ConfigError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let field = e.path().to_string();
        ConfigError::Parse {
            file: file.to_string(),
            field,
            message: e.into_inner().to_string(),
        }
    })
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_json(&text, &path.display().to_string())
}

pub fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<(), ConfigError> {
    let io = |source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let mut text = serde_json::to_string_pretty(value).expect("config types serialize");
    text.push('\n');
    fs::write(path, text).map_err(io)
}

/// SHA-256 of the canonical JSON encoding.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config types serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// The three validated inputs of one simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub global: GlobalConfig,
    pub stations: StationsConfig,
    pub users: UsersConfig,
}

impl Scenario {
    pub fn new(global: GlobalConfig, stations: StationsConfig, users: UsersConfig) -> Self {
        Self {
            global,
            stations,
            users,
        }
    }

    /// Loads the three files and validates them against the built-in registries.
    pub fn load_and_validate(global: &Path, stations: &Path, users: &Path) -> Result<Self, ConfigError> {
        let scenario = Self {
            global: load_json(global)?,
            stations: load_json(stations)?,
            users: load_json(users)?,
        };
        scenario.validate(&UserTypeRegistry::default(), &RecommenderRegistry::default())?;
        Ok(scenario)
    }

    pub fn validate(
        &self,
        user_types: &UserTypeRegistry,
        recommenders: &RecommenderRegistry,
    ) -> Result<(), ConfigError> {
        let mut v = validate_global(&self.global, recommenders);
        v.extend(validate_stations(&self.stations, &self.global.bounding_box));
        v.extend(validate_users(&self.users, user_types, self.global.recommendation_system_type.is_some()));
        if v.is_empty() {
            Ok(())
        } else {
            Err(ConfigError::Invalid(v))
        }
    }
}

fn violation(file: &str, field: impl Into<String>, rule: impl Into<String>) -> Violation {
    Violation {
        file: file.to_string(),
        field: field.into(),
        rule: rule.into(),
    }
}

pub fn validate_global(g: &GlobalConfig, recommenders: &RecommenderRegistry) -> Vec<Violation> {
    let f = GLOBAL_FILE;
    let mut v = Vec::new();
    if !(g.reservation_time > 0.0) {
        v.push(violation(f, "reservationTime", "must be > 0"));
    }
    if !(g.total_simulation_time > 0.0) {
        v.push(violation(f, "totalSimulationTime", "must be > 0"));
    }
    if let Err(e) = g.bounding_box.validate() {
        v.push(violation(f, "boundingBox", e.to_string()));
    }
    if !(g.circuity_walk >= 1.0) {
        v.push(violation(f, "circuityWalk", "must be >= 1.0"));
    }
    if !(g.circuity_cycle >= 1.0) {
        v.push(violation(f, "circuityCycle", "must be >= 1.0"));
    }
    if !(g.return_retry_delay > 0.0) {
        v.push(violation(f, "returnRetryDelay", "must be > 0"));
    }
    if let Some(rec) = &g.recommendation_system_type {
        if let Err(e) = recommenders.build(rec) {
            v.push(violation(f, "recommendationSystemType", e.to_string()));
        }
    }
    v
}

pub fn validate_stations(s: &StationsConfig, bbox: &BoundingBox) -> Vec<Violation> {
    let f = STATIONS_FILE;
    let mut v = Vec::new();
    let mut seen = HashSet::new();
    for (i, st) in s.stations.iter().enumerate() {
        let at = |field: &str| format!("stations[{i}] (id {}).{field}", st.id);
        if !seen.insert(st.id) {
            v.push(violation(f, at("id"), "duplicate station id"));
        }
        if st.capacity == 0 {
            v.push(violation(f, at("capacity"), "must be > 0"));
        }
        if st.initial_bikes > st.capacity {
            v.push(violation(
                f,
                at("initialBikes"),
                format!("{} exceeds capacity {}", st.initial_bikes, st.capacity),
            ));
        }
        if let Err(e) = st.position.validate() {
            v.push(violation(f, at("position"), e.to_string()));
        } else if !bbox.contains(&st.position) {
            v.push(violation(f, at("position"), "outside the bounding box"));
        }
    }
    v
}

pub fn validate_users(u: &UsersConfig, registry: &UserTypeRegistry, has_recommender: bool) -> Vec<Violation> {
    let f = USERS_FILE;
    let mut v = Vec::new();
    for (i, user) in u.users.iter().enumerate() {
        let at = |field: &str| format!("users[{i}].{field}");
        match registry.create(user) {
            None => v.push(violation(
                f,
                at("userType"),
                format!("unknown user type '{}' (known: {})", user.user_type, registry.names().join(", ")),
            )),
            Some(b) if b.uses_recommender() && !has_recommender => v.push(violation(
                f,
                at("userType"),
                format!("{} requires recommendationSystemType in the global config", b.type_name()),
            )),
            Some(_) => {}
        }
        for (field, p) in [("position", &user.position), ("destinationPlace", &user.destination_place)] {
            if let Err(e) = p.validate() {
                v.push(violation(f, at(field), e.to_string()));
            }
        }
        if let Some(Err(e)) = user.intermediate_position.map(|p| p.validate()) {
            v.push(violation(f, at("intermediatePosition"), e.to_string()));
        }
        if !(user.time_instant >= 0.0) {
            v.push(violation(f, at("timeInstant"), "must be >= 0"));
        }
        if !(user.walking_velocity > 0.0) {
            v.push(violation(f, at("walkingVelocity"), "must be > 0"));
        }
        if !(user.cycling_velocity > 0.0) {
            v.push(violation(f, at("cyclingVelocity"), "must be > 0"));
        }
        if user.min_rental_attempts < 1 {
            v.push(violation(f, at("minRentalAttempts"), "must be >= 1"));
        }
        if !(user.max_distance_to_rent_bike > 0.0) {
            v.push(violation(f, at("maxDistanceToRentBike"), "must be > 0"));
        }
    }
    v
}
