//! Recommendation systems for obedient users.
//!
//! A recommender returns an ordered list of stations for renting or
//! returning a bike. Lists only contain stations that currently have the
//! requested resource; ties break by ascending station id.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::fleet::{Station, StationId};
use crate::geo::{GeoPoint, Router, TravelMode};

pub const AVAILABLE_RESOURCES: &str = "AVAILABLE_RESOURCES";
pub const AVAILABLE_RESOURCES_RATIO: &str = "AVAILABLE_RESOURCES_RATIO";

/// Distances below this are floored before computing resource ratios.
const MIN_RATIO_DISTANCE: f64 = 1.0;

#[derive(Debug, Error, PartialEq)]
pub enum RecommendError {
    #[error("unknown recommendation system type '{0}'")]
    UnknownType(String),
    #[error("recommender {recommender}: unknown parameter '{parameter}'")]
    UnknownParameter {
        recommender: String,
        parameter: String,
    },
    #[error("recommender {recommender}: invalid value for '{parameter}': {reason}")]
    InvalidParameter {
        recommender: String,
        parameter: String,
        reason: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct RecommenderConfig {
    pub type_name: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Value>,
}

impl RecommenderConfig {
    pub fn new(type_name: &str) -> Self {
        Self {
            type_name: type_name.to_string(),
            parameters: BTreeMap::new(),
        }
    }
}

pub trait Recommender: Send + Sync {
    fn type_name(&self) -> &str;

    fn recommend_station_to_rent_bike(
        &self,
        position: &GeoPoint,
        stations: &[Station],
        router: &dyn Router,
    ) -> Vec<StationId>;

    fn recommend_station_to_return_bike(
        &self,
        position: &GeoPoint,
        destination: &GeoPoint,
        stations: &[Station],
        router: &dyn Router,
    ) -> Vec<StationId>;
}

fn ranked(mut scored: Vec<(StationId, f64)>) -> Vec<StationId> {
    scored.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    scored.into_iter().map(|(id, _)| id).collect()
}

/// Most available resources first; ignores distance.
#[derive(Debug, Default, Clone, Copy)]
pub struct AvailableResources;

impl Recommender for AvailableResources {
    fn type_name(&self) -> &str {
        AVAILABLE_RESOURCES
    }

    fn recommend_station_to_rent_bike(
        &self,
        _position: &GeoPoint,
        stations: &[Station],
        _router: &dyn Router,
    ) -> Vec<StationId> {
        ranked(
            stations
                .iter()
                .filter(|s| s.available_bikes > 0)
                .map(|s| (s.id, s.available_bikes as f64))
                .collect(),
        )
    }

    fn recommend_station_to_return_bike(
        &self,
        _position: &GeoPoint,
        _destination: &GeoPoint,
        stations: &[Station],
        _router: &dyn Router,
    ) -> Vec<StationId> {
        ranked(
            stations
                .iter()
                .filter(|s| s.available_slots > 0)
                .map(|s| (s.id, s.available_slots as f64))
                .collect(),
        )
    }
}

/// Which distance divides the free slots when ranking return stations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReturnDistance {
    /// Walking distance from the station to the user's destination.
    #[default]
    StationToDestination,
    /// Cycling distance from the user to the station.
    UserToStation,
}

/// Highest ratio of available resources to distance first.
#[derive(Debug, Default, Clone, Copy)]
pub struct AvailableResourcesRatio {
    pub return_distance: ReturnDistance,
}

impl AvailableResourcesRatio {
    fn from_parameters(params: &BTreeMap<String, Value>) -> Result<Self, RecommendError> {
        let mut out = Self::default();
        for (key, value) in params {
            match key.as_str() {
                "returnDistanceFrom" => {
                    out.return_distance = match value.as_str() {
                        Some("destination") => ReturnDistance::StationToDestination,
                        Some("user") => ReturnDistance::UserToStation,
                        _ => {
                            return Err(RecommendError::InvalidParameter {
                                recommender: AVAILABLE_RESOURCES_RATIO.into(),
                                parameter: key.clone(),
                                reason: format!("expected \"destination\" or \"user\", got {value}"),
                            })
                        }
                    }
                }
                _ => {
                    return Err(RecommendError::UnknownParameter {
                        recommender: AVAILABLE_RESOURCES_RATIO.into(),
                        parameter: key.clone(),
                    })
                }
            }
        }
        Ok(out)
    }
}

impl Recommender for AvailableResourcesRatio {
    fn type_name(&self) -> &str {
        AVAILABLE_RESOURCES_RATIO
    }

    fn recommend_station_to_rent_bike(
        &self,
        position: &GeoPoint,
        stations: &[Station],
        router: &dyn Router,
    ) -> Vec<StationId> {
        ranked(
            stations
                .iter()
                .filter(|s| s.available_bikes > 0)
                .map(|s| {
                    let d = router.distance(position, &s.position, TravelMode::Walk);
                    (s.id, s.available_bikes as f64 / d.max(MIN_RATIO_DISTANCE))
                })
                .collect(),
        )
    }

    fn recommend_station_to_return_bike(
        &self,
        position: &GeoPoint,
        destination: &GeoPoint,
        stations: &[Station],
        router: &dyn Router,
    ) -> Vec<StationId> {
        ranked(
            stations
                .iter()
                .filter(|s| s.available_slots > 0)
                .map(|s| {
                    let d = match self.return_distance {
                        ReturnDistance::StationToDestination => {
                            router.distance(&s.position, destination, TravelMode::Walk)
                        }
                        ReturnDistance::UserToStation => {
                            router.distance(position, &s.position, TravelMode::Cycle)
                        }
                    };
                    (s.id, s.available_slots as f64 / d.max(MIN_RATIO_DISTANCE))
                })
                .collect(),
        )
    }
}

type RecommenderFactory =
    fn(&BTreeMap<String, Value>) -> Result<Box<dyn Recommender>, RecommendError>;

/// Recommenders selectable by `typeName` in the global configuration.
pub struct RecommenderRegistry {
    factories: HashMap<String, RecommenderFactory>,
}

impl RecommenderRegistry {
    pub fn empty() -> Self {
        Self {
            factories: HashMap::new(),
        }
    }

    pub fn register(&mut self, type_name: &str, factory: RecommenderFactory) {
        self.factories.insert(type_name.to_ascii_uppercase(), factory);
    }

    pub fn build(&self, config: &RecommenderConfig) -> Result<Box<dyn Recommender>, RecommendError> {
        let factory = self
            .factories
            .get(&config.type_name.to_ascii_uppercase())
            .ok_or_else(|| RecommendError::UnknownType(config.type_name.clone()))?;
        factory(&config.parameters)
    }
}

impl Default for RecommenderRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(AVAILABLE_RESOURCES, |params| {
            if let Some(key) = params.keys().next() {
                return Err(RecommendError::UnknownParameter {
                    recommender: AVAILABLE_RESOURCES.into(),
                    parameter: key.clone(),
                });
            }
            Ok(Box::new(AvailableResources))
        });
        r.register(AVAILABLE_RESOURCES_RATIO, |params| {
            Ok(Box::new(AvailableResourcesRatio::from_parameters(params)?))
        });
        r
    }
}
