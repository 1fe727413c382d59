//! Geographic primitives and the route/travel-time service.
//!
//! All distances are meters, times seconds and velocities m/s.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const EARTH_RADIUS_METERS: f64 = 6_371_000.0;

#[derive(Debug, Error, PartialEq)]
pub enum GeoError {
    #[error("latitude {0} outside [-90, 90]")]
    Latitude(f64),
    #[error("longitude {0} outside [-180, 180]")]
    Longitude(f64),
    #[error("velocity must be positive, got {0} m/s")]
    Velocity(f64),
    #[error("circuity factor must be >= 1.0, got {0}")]
    Circuity(f64),
    #[error("bounding box corners are inverted")]
    InvertedBox,
}

/// A WGS84 position in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeoPoint {
    pub lat: f64,
    pub lon: f64,
}

impl GeoPoint {
    pub const fn new(lat: f64, lon: f64) -> Self {
        Self { lat, lon }
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(-90.0..=90.0).contains(&self.lat) {
            return Err(GeoError::Latitude(self.lat));
        }
        if !(-180.0..=180.0).contains(&self.lon) {
            return Err(GeoError::Longitude(self.lon));
        }
        Ok(())
    }

    /// Linear interpolation in coordinate space; `frac` is clamped to [0, 1].
    pub fn lerp(&self, other: &GeoPoint, frac: f64) -> GeoPoint {
        let f = frac.clamp(0.0, 1.0);
        GeoPoint {
            lat: self.lat + (other.lat - self.lat) * f,
            lon: self.lon + (other.lon - self.lon) * f,
        }
    }

    /// Point displaced by `north`/`east` meters using local equirectangular scaling.
    pub fn offset_meters(&self, north: f64, east: f64) -> GeoPoint {
        let meters_per_deg_lat = EARTH_RADIUS_METERS.to_radians();
        let meters_per_deg_lon = meters_per_deg_lat * self.lat.to_radians().cos();
        GeoPoint {
            lat: self.lat + north / meters_per_deg_lat,
            lon: self.lon + east / meters_per_deg_lon,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BoundingBox {
    pub top_left: GeoPoint,
    pub bottom_right: GeoPoint,
}

impl BoundingBox {
    pub fn validate(&self) -> Result<(), GeoError> {
        self.top_left.validate()?;
        self.bottom_right.validate()?;
        if self.top_left.lat < self.bottom_right.lat || self.top_left.lon > self.bottom_right.lon {
            return Err(GeoError::InvertedBox);
        }
        Ok(())
    }

    pub fn contains(&self, p: &GeoPoint) -> bool {
        p.lat <= self.top_left.lat
            && p.lat >= self.bottom_right.lat
            && p.lon >= self.top_left.lon
            && p.lon <= self.bottom_right.lon
    }

    /// Square box of `side` meters centred on `center`.
    pub fn around(center: GeoPoint, side: f64) -> Self {
        let half = side / 2.0;
        let tl = center.offset_meters(half, -half);
        let br = center.offset_meters(-half, half);
        Self {
            top_left: tl,
            bottom_right: br,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TravelMode {
    Walk,
    Cycle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub waypoints: Vec<GeoPoint>,
    pub total_distance: f64,
    pub mode: TravelMode,
}

/// Haversine distance in meters.
pub fn great_circle_distance(a: &GeoPoint, b: &GeoPoint) -> f64 {
    let phi1 = a.lat.to_radians();
    let phi2 = b.lat.to_radians();
    let dphi = (b.lat - a.lat).to_radians();
    let dlambda = (b.lon - a.lon).to_radians();
    let h = (dphi / 2.0).sin().powi(2) + phi1.cos() * phi2.cos() * (dlambda / 2.0).sin().powi(2);
    2.0 * EARTH_RADIUS_METERS * h.sqrt().min(1.0).asin()
}

pub fn compute_route(a: &GeoPoint, b: &GeoPoint, mode: TravelMode, circuity: f64) -> Route {
    Route {
        waypoints: vec![*a, *b],
        total_distance: great_circle_distance(a, b) * circuity,
        mode,
    }
}

pub fn travel_time(route: &Route, velocity: f64) -> Result<f64, GeoError> {
    if !(velocity > 0.0) {
        return Err(GeoError::Velocity(velocity));
    }
    Ok(route.total_distance / velocity)
}

/// Route and travel-time provider used by the engine, user decisions and recommenders.
pub trait Router: Send + Sync {
    fn route(&self, from: &GeoPoint, to: &GeoPoint, mode: TravelMode) -> Route;

    fn distance(&self, from: &GeoPoint, to: &GeoPoint, mode: TravelMode) -> f64 {
        self.route(from, to, mode).total_distance
    }

    fn travel_time(&self, route: &Route, velocity: f64) -> Result<f64, GeoError> {
        travel_time(route, velocity)
    }
}

/// Offline router: great-circle distance scaled by a per-mode circuity factor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreatCircleRouter {
    circuity_walk: f64,
    circuity_cycle: f64,
}

impl GreatCircleRouter {
    pub fn new(circuity_walk: f64, circuity_cycle: f64) -> Result<Self, GeoError> {
        for c in [circuity_walk, circuity_cycle] {
            if !(c >= 1.0) {
                return Err(GeoError::Circuity(c));
            }
        }
        Ok(Self {
            circuity_walk,
            circuity_cycle,
        })
    }
}

impl Default for GreatCircleRouter {
    fn default() -> Self {
        Self {
            circuity_walk: 1.0,
            circuity_cycle: 1.0,
        }
    }
}

impl Router for GreatCircleRouter {
    fn route(&self, from: &GeoPoint, to: &GeoPoint, mode: TravelMode) -> Route {
        let circuity = match mode {
            TravelMode::Walk => self.circuity_walk,
            TravelMode::Cycle => self.circuity_cycle,
        };
        compute_route(from, to, mode, circuity)
    }
}
