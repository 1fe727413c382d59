//! Users configuration generation.
//!
//! Synthetic demand comes from entry points: each emits users as a
//! homogeneous Poisson process inside a circle. Recorded demand comes from
//! hourly trip logs, jittered in time within the hour and in space around
//! the origin and destination stations.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::TAU;
use std::io::Read;

use log::warn;
use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::config::{GlobalConfig, StationsConfig, UsersConfig};
use crate::fleet::StationId;
use crate::geo::{BoundingBox, GeoPoint};
use crate::users::UserConfig;

/// Spatial jitter applied to trip-log origins and destinations, meters.
pub const TRIP_JITTER_RADIUS: f64 = 200.0;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("entry point {index}: {rule}")]
    InvalidEntryPoint { index: usize, rule: String },
    #[error("trip log line {line}: {source}")]
    TripLog {
        line: u64,
        #[source]
        source: csv::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeWindow {
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub enum DestinationSpec {
    WholeArea,
    Circle { center: GeoPoint, radius: f64 },
}

/// Optional per-user settings copied onto every generated user.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct UserTemplate {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub walking_velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycling_velocity: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_rental_attempts: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_distance_to_rent_bike: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Value>,
}

impl UserTemplate {
    pub fn instantiate(&self, user_type: &str, position: GeoPoint, destination: GeoPoint, time: f64) -> UserConfig {
        let mut u = UserConfig::new(user_type, position, destination, time);
        if let Some(v) = self.walking_velocity {
            u.walking_velocity = v;
        }
        if let Some(v) = self.cycling_velocity {
            u.cycling_velocity = v;
        }
        if let Some(v) = self.min_rental_attempts {
            u.min_rental_attempts = v;
        }
        if let Some(v) = self.max_distance_to_rent_bike {
            u.max_distance_to_rent_bike = v;
        }
        u.parameters = self.parameters.clone();
        u
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EntryPoint {
    pub position: GeoPoint,
    pub radius: f64,
    pub rate_per_hour: f64,
    pub user_type: String,
    #[serde(default)]
    pub user_parameters: UserTemplate,
    pub destination: DestinationSpec,
    /// Defaults to the whole simulation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_window: Option<TimeWindow>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct EntryPointsConfig {
    pub entry_points: Vec<EntryPoint>,
}

/// Arrival instants of a Poisson process with `rate_per_hour` inside the
/// window: exponential gaps with mean 3600 / rate seconds.
pub fn generate_arrival_times<R: Rng + ?Sized>(rate_per_hour: f64, window: TimeWindow, rng: &mut R) -> Vec<f64> {
    let Ok(gap) = Exp::new(rate_per_hour / 3600.0) else {
        return Vec::new();
    };
    if rate_per_hour <= 0.0 {
        return Vec::new();
    }
    let mut times = Vec::new();
    let mut t = window.start;
    loop {
        t += gap.sample(rng);
        if t >= window.end {
            return times;
        }
        if t > window.start {
            times.push(t);
        }
    }
}

/// Uniform point in a disc: radial distance `radius * sqrt(u)`.
pub fn sample_point_in_circle<R: Rng + ?Sized>(center: GeoPoint, radius: f64, rng: &mut R) -> GeoPoint {
    if radius <= 0.0 {
        return center;
    }
    let r = radius * rng.random::<f64>().sqrt();
    let bearing = rng.random_range(0.0..TAU);
    center.offset_meters(r * bearing.cos(), r * bearing.sin())
}

pub fn sample_point_in_box<R: Rng + ?Sized>(bbox: &BoundingBox, rng: &mut R) -> GeoPoint {
    GeoPoint::new(
        rng.random_range(bbox.bottom_right.lat..=bbox.top_left.lat),
        rng.random_range(bbox.top_left.lon..=bbox.bottom_right.lon),
    )
}

fn check_entry_point(index: usize, ep: &EntryPoint, bbox: &BoundingBox) -> Result<(), DemandError> {
    let fail = |rule: String| Err(DemandError::InvalidEntryPoint { index, rule });
    if !bbox.contains(&ep.position) {
        return fail(format!("position {:?} lies outside the bounding box", ep.position));
    }
    if !(ep.radius >= 0.0) {
        return fail(format!("radius must be >= 0, got {}", ep.radius));
    }
    if !(ep.rate_per_hour >= 0.0) || !ep.rate_per_hour.is_finite() {
        return fail(format!("ratePerHour must be a finite value >= 0, got {}", ep.rate_per_hour));
    }
    if let Some(w) = ep.time_window {
        if !(w.start >= 0.0 && w.start <= w.end) {
            return fail(format!("timeWindow must satisfy 0 <= start <= end, got [{}, {}]", w.start, w.end));
        }
    }
    if let DestinationSpec::Circle { radius, .. } = ep.destination {
        if !(radius >= 0.0) {
            return fail(format!("destination radius must be >= 0, got {radius}"));
        }
    }
    Ok(())
}

/// One user per arrival of every entry point, sorted by appearance time.
/// `rate_override` replaces every entry point's rate.
pub fn generate_users<R: Rng + ?Sized>(
    entry_points: &[EntryPoint],
    global: &GlobalConfig,
    rate_override: Option<f64>,
    rng: &mut R,
) -> Result<UsersConfig, DemandError> {
    let bbox = &global.bounding_box;
    let mut users = Vec::new();
    for (index, ep) in entry_points.iter().enumerate() {
        check_entry_point(index, ep, bbox)?;
        let window = ep.time_window.unwrap_or(TimeWindow {
            start: 0.0,
            end: global.total_simulation_time,
        });
        let rate = rate_override.unwrap_or(ep.rate_per_hour);
        for t in generate_arrival_times(rate, window, rng) {
            let position = sample_point_in_circle(ep.position, ep.radius, rng);
            let destination = match ep.destination {
                DestinationSpec::WholeArea => sample_point_in_box(bbox, rng),
                DestinationSpec::Circle { center, radius } => sample_point_in_circle(center, radius, rng),
            };
            users.push(ep.user_parameters.instantiate(&ep.user_type, position, destination, t));
        }
    }
    users.sort_by(|a, b| a.time_instant.total_cmp(&b.time_instant));
    Ok(UsersConfig { users })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripRecord {
    pub hour: u32,
    pub origin_station: StationId,
    pub destination_station: StationId,
    #[serde(default, rename = "cycling_velocity_mps")]
    pub cycling_velocity: Option<f64>,
}

/// Parses a `hour,origin_station,destination_station[,cycling_velocity_mps]` CSV.
pub fn read_trip_log<R: Read>(reader: R) -> Result<Vec<TripRecord>, DemandError> {
    let mut r = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    r.deserialize()
        .map(|rec| {
            rec.map_err(|source: csv::Error| DemandError::TripLog {
                line: source.position().map_or(0, |p| p.line()),
                source,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripLogUsers {
    pub users: UsersConfig,
    /// Trips naming a station absent from the stations config.
    pub skipped: usize,
}

/// One user per trip: appearance uniform within the trip's hour, origin and
/// destination uniform within [`TRIP_JITTER_RADIUS`] of the stations.
pub fn users_from_trip_log<R: Rng + ?Sized>(
    trips: &[TripRecord],
    stations: &StationsConfig,
    user_type: &str,
    template: &UserTemplate,
    rng: &mut R,
) -> TripLogUsers {
    let positions: HashMap<StationId, GeoPoint> = stations.stations.iter().map(|s| (s.id, s.position)).collect();
    let mut users = Vec::with_capacity(trips.len());
    let mut skipped = 0;
    for (i, trip) in trips.iter().enumerate() {
        let (Some(&origin), Some(&dest)) = (
            positions.get(&trip.origin_station),
            positions.get(&trip.destination_station),
        ) else {
            warn!(
                "trip {}: unknown station ({} -> {}); skipped",
                i + 1,
                trip.origin_station,
                trip.destination_station
            );
            skipped += 1;
            continue;
        };
        let start = trip.hour as f64 * 3600.0;
        // keep the instant inside [start, start + 3600) despite rounding
        let t = (start + rng.random::<f64>() * 3600.0).min((start + 3600.0).next_down());
        let position = sample_point_in_circle(origin, TRIP_JITTER_RADIUS, rng);
        let destination = sample_point_in_circle(dest, TRIP_JITTER_RADIUS, rng);
        let mut u = template.instantiate(user_type, position, destination, t);
        if let Some(v) = trip.cycling_velocity {
            u.cycling_velocity = v;
        }
        users.push(u);
    }
    users.sort_by(|a, b| a.time_instant.total_cmp(&b.time_instant));
    TripLogUsers {
        users: UsersConfig { users },
        skipped,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::StationConfig;
    use crate::geo::great_circle_distance;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const HOUR: TimeWindow = TimeWindow { start: 0.0, end: 3600.0 };

    fn madrid() -> GeoPoint {
        GeoPoint::new(40.4168, -3.7038)
    }

    #[test]
    fn zero_rate_yields_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(generate_arrival_times(0.0, HOUR, &mut rng).is_empty());
    }

    #[test]
    fn arrivals_are_sorted_inside_the_window_and_seeded() {
        let w = TimeWindow { start: 100.0, end: 7300.0 };
        let a = generate_arrival_times(60.0, w, &mut ChaCha8Rng::seed_from_u64(3));
        let b = generate_arrival_times(60.0, w, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(a, b);
        assert!(a.windows(2).all(|p| p[0] <= p[1]));
        assert!(a.iter().all(|&t| t > 100.0 && t < 7300.0));
        assert!(!a.is_empty());
    }

    #[test]
    fn zero_radius_is_the_center() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_point_in_circle(madrid(), 0.0, &mut rng), madrid());
    }

    #[test]
    fn samples_are_uniform_by_area() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut inner = 0;
        for _ in 0..10_000 {
            let p = sample_point_in_circle(madrid(), 200.0, &mut rng);
            let d = great_circle_distance(&madrid(), &p);
            assert!(d <= 201.0, "{d}");
            if d <= 200.0 / 2f64.sqrt() {
                inner += 1;
            }
        }
        let frac = inner as f64 / 10_000.0;
        assert!((frac - 0.5).abs() <= 0.02, "{frac}");
    }

    fn global() -> GlobalConfig {
        GlobalConfig::new(3600.0, BoundingBox::around(madrid(), 3000.0))
    }

    fn entry(offset_east: f64) -> EntryPoint {
        EntryPoint {
            position: madrid().offset_meters(0.0, offset_east),
            radius: 200.0,
            rate_per_hour: 10.0,
            user_type: "INFORMED".into(),
            user_parameters: UserTemplate::default(),
            destination: DestinationSpec::WholeArea,
            time_window: None,
        }
    }

    #[test]
    fn five_entry_points_give_about_fifty_users() {
        let eps: Vec<_> = (0..5).map(|i| entry(i as f64 * 200.0 - 400.0)).collect();
        let g = global();
        let mut total = 0;
        for seed in 0..200 {
            let users = generate_users(&eps, &g, None, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
            total += users.users.len();
            for u in &users.users {
                assert!(g.bounding_box.contains(&u.destination_place));
                let near = eps
                    .iter()
                    .any(|e| great_circle_distance(&e.position, &u.position) <= 201.0);
                assert!(near);
            }
            assert!(users.users.windows(2).all(|w| w[0].time_instant <= w[1].time_instant));
        }
        let mean = total as f64 / 200.0;
        assert!((mean - 50.0).abs() < 2.0, "{mean}");
    }

    #[test]
    fn empty_entry_points_and_bad_ones() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(generate_users(&[], &global(), None, &mut rng).unwrap().users.is_empty());
        let far = entry(10_000.0);
        let err = generate_users(&[entry(0.0), far], &global(), None, &mut rng).unwrap_err();
        assert!(matches!(err, DemandError::InvalidEntryPoint { index: 1, .. }), "{err}");
    }

    #[test]
    fn entry_point_json_shape() {
        let text = r#"{"entryPoints":[{"position":{"lat":40.4,"lon":-3.7},"radius":200,"ratePerHour":10,
            "userType":"OBEDIENT","userParameters":{"minRentalAttempts":3},
            "destination":{"circle":{"center":{"lat":40.41,"lon":-3.69},"radius":300}},
            "timeWindow":{"start":0,"end":1800}}]}"#;
        let cfg: EntryPointsConfig = serde_json::from_str(text).unwrap();
        let ep = &cfg.entry_points[0];
        assert_eq!(ep.user_parameters.min_rental_attempts, Some(3));
        assert!(matches!(ep.destination, DestinationSpec::Circle { radius, .. } if radius == 300.0));
        let whole: DestinationSpec = serde_json::from_str(r#""wholeArea""#).unwrap();
        assert_eq!(whole, DestinationSpec::WholeArea);
        assert!(serde_json::from_str::<EntryPointsConfig>(r#"{"entryPoints":[{"bogus":1}]}"#).is_err());
    }

    #[test]
    fn trip_log_jitter() {
        let stations = StationsConfig {
            stations: vec![
                StationConfig {
                    id: StationId(1),
                    position: madrid(),
                    capacity: 10,
                    initial_bikes: 5,
                },
                StationConfig {
                    id: StationId(2),
                    position: madrid().offset_meters(500.0, 0.0),
                    capacity: 10,
                    initial_bikes: 5,
                },
            ],
        };
        let log = "hour,origin_station,destination_station,cycling_velocity_mps\n8,1,2,5.5\n9,2,1,\n8,1,7,\n";
        let trips = read_trip_log(log.as_bytes()).unwrap();
        assert_eq!(trips.len(), 3);
        assert_eq!(trips[1].cycling_velocity, None);
        let out = users_from_trip_log(
            &trips,
            &stations,
            "INFORMED",
            &UserTemplate::default(),
            &mut ChaCha8Rng::seed_from_u64(5),
        );
        assert_eq!(out.skipped, 1);
        let users = &out.users.users;
        assert_eq!(users.len(), 2);
        let at8 = users.iter().find(|u| u.time_instant < 32400.0).unwrap();
        assert!(at8.time_instant >= 28800.0);
        assert_eq!(at8.cycling_velocity, 5.5);
        assert!(great_circle_distance(&at8.position, &madrid()) <= 201.0);
        let at9 = users.iter().find(|u| u.time_instant >= 32400.0).unwrap();
        assert!(at9.time_instant < 36000.0);
        assert_eq!(at9.cycling_velocity, crate::users::DEFAULT_CYCLING_VELOCITY);
    }

    #[test]
    fn bad_trip_log_names_the_line() {
        let err = read_trip_log("hour,origin_station,destination_station\n1,2,3\nx,2,3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, DemandError::TripLog { line: 3, .. }), "{err}");
    }
}
