//! User configuration, runtime state and decision behaviors.
//!
//! Each user type implements the eight decision hooks the engine invokes
//! along the user life cycle. The six built-in types differ in how much
//! they know when picking a station (nothing, live availability, or a
//! recommender's list) and whether they reserve before travelling.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::fleet::{ReservationId, Station, StationId};
use crate::geo::{GeoPoint, Router, TravelMode};
use crate::recommend::Recommender;

pub const DEFAULT_WALKING_VELOCITY: f64 = 1.4;
pub const DEFAULT_CYCLING_VELOCITY: f64 = 6.0;
pub const DEFAULT_MIN_RENTAL_ATTEMPTS: u32 = 2;
pub const DEFAULT_MAX_DISTANCE_TO_RENT_BIKE: f64 = 600.0;

fn default_walking_velocity() -> f64 {
    DEFAULT_WALKING_VELOCITY
}
fn default_cycling_velocity() -> f64 {
    DEFAULT_CYCLING_VELOCITY
}
fn default_min_rental_attempts() -> u32 {
    DEFAULT_MIN_RENTAL_ATTEMPTS
}
fn default_max_distance() -> f64 {
    DEFAULT_MAX_DISTANCE_TO_RENT_BIKE
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct UserConfig {
    pub user_type: String,
    pub position: GeoPoint,
    pub destination_place: GeoPoint,
    pub time_instant: f64,
    #[serde(default = "default_walking_velocity")]
    pub walking_velocity: f64,
    #[serde(default = "default_cycling_velocity")]
    pub cycling_velocity: f64,
    /// Failed rent/reserve attempts after which the user abandons.
    #[serde(default = "default_min_rental_attempts")]
    pub min_rental_attempts: u32,
    #[serde(default = "default_max_distance")]
    pub max_distance_to_rent_bike: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intermediate_position: Option<GeoPoint>,
    /// Parameters understood only by extension user types.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub parameters: BTreeMap<String, Value>,
}

impl UserConfig {
    pub fn new(user_type: &str, position: GeoPoint, destination_place: GeoPoint, time_instant: f64) -> Self {
        Self {
            user_type: user_type.to_string(),
            position,
            destination_place,
            time_instant,
            walking_velocity: DEFAULT_WALKING_VELOCITY,
            cycling_velocity: DEFAULT_CYCLING_VELOCITY,
            min_rental_attempts: DEFAULT_MIN_RENTAL_ATTEMPTS,
            max_distance_to_rent_bike: DEFAULT_MAX_DISTANCE_TO_RENT_BIKE,
            intermediate_position: None,
            parameters: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LifeCycleState {
    Appeared,
    DecidingRental,
    WalkingToStation,
    ReservingBike,
    WalkingWithReservation,
    WithBike,
    Riding,
    DecidingReturn,
    CyclingToStation,
    ReservingSlot,
    CyclingWithReservation,
    WalkingToDestination,
    Left,
}

/// What led to the pending rental decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RentalContext {
    Appeared,
    FailedRental,
    FailedBikeReservation,
    BikeReservationTimeout,
}

/// What led to the pending return decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnContext {
    FinishedRide,
    FailedReturn,
    FailedSlotReservation,
    SlotReservationTimeout,
}

/// A straight movement between two events, used to place a user whose
/// reservation expires mid-way.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Leg {
    pub from: GeoPoint,
    pub to: GeoPoint,
    pub depart: f64,
    pub arrive: f64,
}

impl Leg {
    pub fn position_at(&self, t: f64) -> GeoPoint {
        let span = self.arrive - self.depart;
        if span <= 0.0 {
            return self.to;
        }
        self.from.lerp(&self.to, (t - self.depart) / span)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRuntime {
    pub current_position: GeoPoint,
    pub state: LifeCycleState,
    pub failed_rental_attempts: u32,
    pub failed_return_attempts: u32,
    /// Stations where a rent, bike reservation or pickup failed.
    pub tried_rental: BTreeSet<StationId>,
    /// Stations where a return or slot reservation failed; cleared on exhaustion.
    pub tried_return: BTreeSet<StationId>,
    pub has_bike: bool,
    pub appeared_at: Option<f64>,
    pub took_bike_at: Option<f64>,
    pub returned_bike_at: Option<f64>,
    pub arrived_at: Option<f64>,
    pub reservation: Option<ReservationId>,
    pub leg: Option<Leg>,
    pub rental_context: RentalContext,
    pub return_context: ReturnContext,
    pub pending_return: Option<ReturnDecision>,
    /// Station chosen by the latest return decision.
    pub return_target: Option<StationId>,
}

impl UserRuntime {
    pub fn new(position: GeoPoint) -> Self {
        Self {
            current_position: position,
            state: LifeCycleState::Appeared,
            failed_rental_attempts: 0,
            failed_return_attempts: 0,
            tried_rental: BTreeSet::new(),
            tried_return: BTreeSet::new(),
            has_bike: false,
            appeared_at: None,
            took_bike_at: None,
            returned_bike_at: None,
            arrived_at: None,
            reservation: None,
            leg: None,
            rental_context: RentalContext::Appeared,
            return_context: ReturnContext::FinishedRide,
            pending_return: None,
            return_target: None,
        }
    }

    /// (T_os, T_rs, T_fd) in seconds, once the user reached the destination.
    pub fn time_breakdown(&self) -> Option<(f64, f64, f64)> {
        Some((
            self.took_bike_at? - self.appeared_at?,
            self.returned_bike_at? - self.took_bike_at?,
            self.arrived_at? - self.returned_bike_at?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RentalDecision {
    GoToStation(StationId),
    ReserveBikeAt(StationId),
    LeaveSystem,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AfterBikeDecision {
    GoToReturnStation(StationId),
    ReserveSlotAt(StationId),
    RideToIntermediate(GeoPoint),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReturnDecision {
    GoToReturnStation(StationId),
    ReserveSlotAt(StationId),
}

impl ReturnDecision {
    pub fn station(&self) -> StationId {
        match *self {
            ReturnDecision::GoToReturnStation(s) | ReturnDecision::ReserveSlotAt(s) => s,
        }
    }
}

/// Everything a user may consult when deciding.
pub struct DecisionContext<'a> {
    pub config: &'a UserConfig,
    pub runtime: &'a UserRuntime,
    pub stations: &'a [Station],
    pub router: &'a dyn Router,
    pub recommender: Option<&'a dyn Recommender>,
    pub now: f64,
    pub rng: &'a mut dyn RngCore,
}

impl DecisionContext<'_> {
    fn walk_distance(&self, from: &GeoPoint, to: &GeoPoint) -> f64 {
        self.router.distance(from, to, TravelMode::Walk)
    }

    fn station(&self, id: StationId) -> Option<&Station> {
        self.stations.iter().find(|s| s.id == id)
    }
}

/// The decision interface of a user type.
pub trait UserBehavior: Send + Sync {
    fn type_name(&self) -> &str;

    /// Whether the type needs a recommendation system configured.
    fn uses_recommender(&self) -> bool {
        false
    }

    fn decide_after_appearing(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision;
    fn decide_after_failed_rental(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision;
    fn decide_after_failed_bike_reservation(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision;
    fn decide_after_bike_reservation_timeout(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision;
    fn decide_after_getting_bike(&self, ctx: &mut DecisionContext<'_>) -> AfterBikeDecision;
    fn decide_after_failed_return(&self, ctx: &mut DecisionContext<'_>) -> ReturnDecision;
    fn decide_after_finishing_ride(&self, ctx: &mut DecisionContext<'_>) -> ReturnDecision;
    fn decide_after_failed_slot_reservation(&self, ctx: &mut DecisionContext<'_>) -> ReturnDecision;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Knowledge {
    /// Goes to the nearest station without looking at availability.
    Uninformed,
    /// Goes to the nearest station that has the needed resource.
    Informed,
    /// Follows the recommender's list.
    Obedient,
}

/// The built-in user types: a knowledge level plus whether to reserve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StandardUser {
    pub knowledge: Knowledge,
    pub reserves: bool,
    name: &'static str,
}

impl StandardUser {
    pub const UNINFORMED: Self = Self::new(Knowledge::Uninformed, false, "UNINFORMED");
    pub const INFORMED: Self = Self::new(Knowledge::Informed, false, "INFORMED");
    pub const OBEDIENT: Self = Self::new(Knowledge::Obedient, false, "OBEDIENT");
    pub const UNINFORMED_R: Self = Self::new(Knowledge::Uninformed, true, "UNINFORMED_R");
    pub const INFORMED_R: Self = Self::new(Knowledge::Informed, true, "INFORMED_R");
    pub const OBEDIENT_R: Self = Self::new(Knowledge::Obedient, true, "OBEDIENT_R");

    const fn new(knowledge: Knowledge, reserves: bool, name: &'static str) -> Self {
        Self {
            knowledge,
            reserves,
            name,
        }
    }

    /// Station to rent from, or `None` when nothing acceptable is within walking range.
    fn rental_station(&self, ctx: &DecisionContext<'_>) -> Option<StationId> {
        let pos = ctx.runtime.current_position;
        let max = ctx.config.max_distance_to_rent_bike;
        let tried = &ctx.runtime.tried_rental;
        match self.knowledge {
            Knowledge::Uninformed | Knowledge::Informed => {
                let informed = self.knowledge == Knowledge::Informed;
                let (id, dist) = nearest(
                    ctx.stations
                        .iter()
                        .filter(|s| !tried.contains(&s.id))
                        .filter(|s| !informed || s.available_bikes > 0)
                        .map(|s| (s.id, ctx.walk_distance(&pos, &s.position))),
                )?;
                (dist <= max).then_some(id)
            }
            Knowledge::Obedient => {
                let rec = ctx.recommender?;
                rec.recommend_station_to_rent_bike(&pos, ctx.stations, ctx.router)
                    .into_iter()
                    .filter(|id| !tried.contains(id))
                    .find(|id| {
                        ctx.station(*id)
                            .is_some_and(|s| ctx.walk_distance(&pos, &s.position) <= max)
                    })
            }
        }
    }

    fn rental_decision(&self, ctx: &DecisionContext<'_>) -> RentalDecision {
        if ctx.runtime.failed_rental_attempts >= ctx.config.min_rental_attempts {
            return RentalDecision::LeaveSystem;
        }
        match self.rental_station(ctx) {
            Some(id) if self.reserves => RentalDecision::ReserveBikeAt(id),
            Some(id) => RentalDecision::GoToStation(id),
            None => RentalDecision::LeaveSystem,
        }
    }

    fn return_station_excluding(&self, ctx: &DecisionContext<'_>, tried: &BTreeSet<StationId>) -> Option<StationId> {
        let dest = ctx.config.destination_place;
        match self.knowledge {
            Knowledge::Uninformed | Knowledge::Informed => {
                let informed = self.knowledge == Knowledge::Informed;
                nearest(
                    ctx.stations
                        .iter()
                        .filter(|s| !tried.contains(&s.id))
                        .filter(|s| !informed || s.available_slots > 0)
                        .map(|s| (s.id, ctx.walk_distance(&s.position, &dest))),
                )
                .map(|(id, _)| id)
            }
            Knowledge::Obedient => ctx.recommender.and_then(|rec| {
                rec.recommend_station_to_return_bike(&ctx.runtime.current_position, &dest, ctx.stations, ctx.router)
                    .into_iter()
                    .find(|id| !tried.contains(id))
            }),
        }
    }

    /// Never fails: a user holding a bike must eventually dock it.
    fn return_station(&self, ctx: &DecisionContext<'_>) -> StationId {
        if let Some(id) = self.return_station_excluding(ctx, &ctx.runtime.tried_return) {
            return id;
        }
        let none = BTreeSet::new();
        if let Some(id) = self.return_station_excluding(ctx, &none) {
            return id;
        }
        // no station has a free slot right now: head for the one nearest the destination
        let dest = ctx.config.destination_place;
        nearest(ctx.stations.iter().map(|s| (s.id, ctx.walk_distance(&s.position, &dest))))
            .map(|(id, _)| id)
            .expect("world has at least one station")
    }

    fn return_decision(&self, ctx: &DecisionContext<'_>) -> ReturnDecision {
        let id = self.return_station(ctx);
        if self.reserves {
            ReturnDecision::ReserveSlotAt(id)
        } else {
            ReturnDecision::GoToReturnStation(id)
        }
    }
}

/// Closest candidate; equal distances resolve to the lowest station id.
fn nearest(candidates: impl Iterator<Item = (StationId, f64)>) -> Option<(StationId, f64)> {
    candidates.min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)))
}

impl UserBehavior for StandardUser {
    fn type_name(&self) -> &str {
        self.name
    }

    fn uses_recommender(&self) -> bool {
        self.knowledge == Knowledge::Obedient
    }

    fn decide_after_appearing(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision {
        self.rental_decision(ctx)
    }

    fn decide_after_failed_rental(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision {
        self.rental_decision(ctx)
    }

    fn decide_after_failed_bike_reservation(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision {
        self.rental_decision(ctx)
    }

    fn decide_after_bike_reservation_timeout(&self, ctx: &mut DecisionContext<'_>) -> RentalDecision {
        self.rental_decision(ctx)
    }

    fn decide_after_getting_bike(&self, ctx: &mut DecisionContext<'_>) -> AfterBikeDecision {
        if let Some(p) = ctx.config.intermediate_position {
            return AfterBikeDecision::RideToIntermediate(p);
        }
        match self.return_decision(ctx) {
            ReturnDecision::GoToReturnStation(s) => AfterBikeDecision::GoToReturnStation(s),
            ReturnDecision::ReserveSlotAt(s) => AfterBikeDecision::ReserveSlotAt(s),
        }
    }

    fn decide_after_failed_return(&self, ctx: &mut DecisionContext<'_>) -> ReturnDecision {
        self.return_decision(ctx)
    }

    fn decide_after_finishing_ride(&self, ctx: &mut DecisionContext<'_>) -> ReturnDecision {
        self.return_decision(ctx)
    }

    fn decide_after_failed_slot_reservation(&self, ctx: &mut DecisionContext<'_>) -> ReturnDecision {
        // a timed-out slot was lost to slowness, not to the station: keep
        // heading there while it still has room
        if ctx.runtime.return_context == ReturnContext::SlotReservationTimeout {
            if let Some(id) = ctx.runtime.return_target {
                if ctx.station(id).is_some_and(|s| s.available_slots > 0) {
                    return ReturnDecision::ReserveSlotAt(id);
                }
            }
        }
        self.return_decision(ctx)
    }
}

type BehaviorFactory = fn(&UserConfig) -> Box<dyn UserBehavior>;

/// User types addressable by the `userType` string of a users file.
/// Lookup is case-insensitive.
pub struct UserTypeRegistry {
    factories: HashMap<String, BehaviorFactory>,
}

impl UserTypeRegistry {
    pub fn empty() -> Self {
        Self {
            factories: HashMap::new(),
        }
    }

    pub fn register(&mut self, type_name: &str, factory: BehaviorFactory) {
        self.factories.insert(type_name.to_ascii_uppercase(), factory);
    }

    pub fn contains(&self, type_name: &str) -> bool {
        self.factories.contains_key(&type_name.to_ascii_uppercase())
    }

    pub fn create(&self, config: &UserConfig) -> Option<Box<dyn UserBehavior>> {
        self.factories
            .get(&config.user_type.to_ascii_uppercase())
            .map(|f| f(config))
    }

    pub fn names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.factories.keys().cloned().collect();
        names.sort();
        names
    }
}

impl Default for UserTypeRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register("UNINFORMED", |_| Box::new(StandardUser::UNINFORMED));
        r.register("INFORMED", |_| Box::new(StandardUser::INFORMED));
        r.register("OBEDIENT", |_| Box::new(StandardUser::OBEDIENT));
        r.register("UNINFORMED_R", |_| Box::new(StandardUser::UNINFORMED_R));
        r.register("INFORMED_R", |_| Box::new(StandardUser::INFORMED_R));
        r.register("OBEDIENT_R", |_| Box::new(StandardUser::OBEDIENT_R));
        r
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::GreatCircleRouter;
    use crate::recommend::AvailableResources;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ORIGIN: GeoPoint = GeoPoint::new(40.4168, -3.7038);

    fn station(id: u32, east: f64, bikes: u32) -> Station {
        Station::new(StationId(id), ORIGIN.offset_meters(0.0, east), 20, bikes).unwrap()
    }

    struct Fixture {
        config: UserConfig,
        runtime: UserRuntime,
        stations: Vec<Station>,
        router: GreatCircleRouter,
        rng: ChaCha8Rng,
    }

    impl Fixture {
        fn new(user_type: &str, stations: Vec<Station>) -> Self {
            Self {
                config: UserConfig::new(user_type, ORIGIN, ORIGIN, 0.0),
                runtime: UserRuntime::new(ORIGIN),
                stations,
                router: GreatCircleRouter::default(),
                rng: ChaCha8Rng::seed_from_u64(1),
            }
        }

        fn ctx<'a>(&'a mut self, rec: Option<&'a dyn Recommender>) -> DecisionContext<'a> {
            DecisionContext {
                config: &self.config,
                runtime: &self.runtime,
                stations: &self.stations,
                router: &self.router,
                recommender: rec,
                now: 0.0,
                rng: &mut self.rng,
            }
        }
    }

    #[test]
    fn uninformed_goes_to_nearest_regardless_of_bikes() {
        let mut f = Fixture::new("UNINFORMED", vec![station(1, 100.0, 0), station(2, 300.0, 5)]);
        let d = StandardUser::UNINFORMED.decide_after_appearing(&mut f.ctx(None));
        assert_eq!(d, RentalDecision::GoToStation(StationId(1)));
    }

    #[test]
    fn uninformed_leaves_when_nearest_is_too_far() {
        let mut f = Fixture::new("UNINFORMED", vec![station(1, 700.0, 5)]);
        let d = StandardUser::UNINFORMED.decide_after_appearing(&mut f.ctx(None));
        assert_eq!(d, RentalDecision::LeaveSystem);
    }

    #[test]
    fn informed_goes_to_nearest_with_bikes() {
        let mut f = Fixture::new("INFORMED", vec![station(1, 100.0, 0), station(2, 300.0, 5)]);
        let d = StandardUser::INFORMED.decide_after_appearing(&mut f.ctx(None));
        assert_eq!(d, RentalDecision::GoToStation(StationId(2)));
    }

    #[test]
    fn informed_leaves_without_stocked_station_in_range() {
        let mut f = Fixture::new("INFORMED", vec![station(1, 100.0, 0), station(2, 650.0, 5)]);
        let d = StandardUser::INFORMED.decide_after_appearing(&mut f.ctx(None));
        assert_eq!(d, RentalDecision::LeaveSystem);
    }

    #[test]
    fn reserving_variants_wrap_the_same_choice() {
        let mut f = Fixture::new("INFORMED_R", vec![station(1, 100.0, 0), station(2, 300.0, 5)]);
        assert_eq!(
            StandardUser::INFORMED_R.decide_after_appearing(&mut f.ctx(None)),
            RentalDecision::ReserveBikeAt(StationId(2))
        );
        assert_eq!(
            StandardUser::UNINFORMED_R.decide_after_appearing(&mut f.ctx(None)),
            RentalDecision::ReserveBikeAt(StationId(1))
        );
    }

    #[test]
    fn abandons_after_max_failed_attempts() {
        let mut f = Fixture::new("INFORMED", vec![station(1, 100.0, 5), station(2, 400.0, 5)]);
        f.config.min_rental_attempts = 2;
        f.runtime.failed_rental_attempts = 2;
        f.runtime.tried_rental.insert(StationId(1));
        assert_eq!(
            StandardUser::INFORMED.decide_after_failed_rental(&mut f.ctx(None)),
            RentalDecision::LeaveSystem
        );
        f.config.min_rental_attempts = 3;
        assert_eq!(
            StandardUser::INFORMED.decide_after_failed_rental(&mut f.ctx(None)),
            RentalDecision::GoToStation(StationId(2))
        );
    }

    #[test]
    fn abandons_when_all_stations_tried() {
        let mut f = Fixture::new("UNINFORMED", vec![station(1, 100.0, 5), station(2, 400.0, 5)]);
        f.config.min_rental_attempts = 5;
        f.runtime.failed_rental_attempts = 2;
        f.runtime.tried_rental.extend([StationId(1), StationId(2)]);
        assert_eq!(
            StandardUser::UNINFORMED.decide_after_failed_rental(&mut f.ctx(None)),
            RentalDecision::LeaveSystem
        );
    }

    #[test]
    fn obedient_follows_recommender_within_range() {
        let mut f = Fixture::new("OBEDIENT", vec![station(1, 100.0, 3), station(2, 400.0, 8), station(3, 900.0, 15)]);
        let rec = AvailableResources;
        // station 3 has most bikes but is beyond 600 m
        assert_eq!(
            StandardUser::OBEDIENT.decide_after_appearing(&mut f.ctx(Some(&rec))),
            RentalDecision::GoToStation(StationId(2))
        );
        assert_eq!(
            StandardUser::OBEDIENT.decide_after_appearing(&mut f.ctx(None)),
            RentalDecision::LeaveSystem
        );
    }

    #[test]
    fn intermediate_position_forces_ride() {
        let mut f = Fixture::new("INFORMED", vec![station(1, 100.0, 3)]);
        let p = ORIGIN.offset_meters(500.0, 0.0);
        f.config.intermediate_position = Some(p);
        assert_eq!(
            StandardUser::INFORMED.decide_after_getting_bike(&mut f.ctx(None)),
            AfterBikeDecision::RideToIntermediate(p)
        );
    }

    #[test]
    fn informed_returns_to_nearest_with_slots() {
        // 50 m station full, 250 m station has 4 slots
        let mut f = Fixture::new("INFORMED", vec![station(1, 50.0, 20), station(2, 250.0, 16)]);
        assert_eq!(
            StandardUser::INFORMED.decide_after_getting_bike(&mut f.ctx(None)),
            AfterBikeDecision::GoToReturnStation(StationId(2))
        );
        assert_eq!(
            StandardUser::UNINFORMED.decide_after_getting_bike(&mut f.ctx(None)),
            AfterBikeDecision::GoToReturnStation(StationId(1))
        );
    }

    #[test]
    fn obedient_r_reserves_top_return_recommendation() {
        let mut f = Fixture::new("OBEDIENT_R", vec![station(1, 50.0, 15), station(2, 250.0, 2)]);
        let rec = AvailableResources;
        assert_eq!(
            StandardUser::OBEDIENT_R.decide_after_getting_bike(&mut f.ctx(Some(&rec))),
            AfterBikeDecision::ReserveSlotAt(StationId(2))
        );
    }

    #[test]
    fn failed_return_moves_to_next_station_then_resets() {
        let mut f = Fixture::new("INFORMED", vec![station(1, 50.0, 10), station(2, 250.0, 10)]);
        f.runtime.tried_return.insert(StationId(1));
        assert_eq!(
            StandardUser::INFORMED.decide_after_failed_return(&mut f.ctx(None)),
            ReturnDecision::GoToReturnStation(StationId(2))
        );
        f.runtime.tried_return.insert(StationId(2));
        // exhausted: tried set is ignored and the policy re-runs
        assert_eq!(
            StandardUser::INFORMED.decide_after_failed_return(&mut f.ctx(None)),
            ReturnDecision::GoToReturnStation(StationId(1))
        );
    }

    #[test]
    fn return_never_leaves_even_when_everything_is_full() {
        let mut f = Fixture::new("INFORMED", vec![station(4, 50.0, 20), station(2, 250.0, 20)]);
        assert_eq!(
            StandardUser::INFORMED.decide_after_finishing_ride(&mut f.ctx(None)),
            ReturnDecision::GoToReturnStation(StationId(4))
        );
        let rec = AvailableResources;
        assert_eq!(
            StandardUser::OBEDIENT.decide_after_failed_slot_reservation(&mut f.ctx(Some(&rec))),
            ReturnDecision::GoToReturnStation(StationId(4))
        );
    }

    #[test]
    fn distance_ties_break_by_id() {
        let mut f = Fixture::new("UNINFORMED", vec![station(7, 100.0, 5), station(3, -100.0, 5)]);
        assert_eq!(
            StandardUser::UNINFORMED.decide_after_appearing(&mut f.ctx(None)),
            RentalDecision::GoToStation(StationId(3))
        );
    }

    #[test]
    fn registry_is_case_insensitive() {
        let reg = UserTypeRegistry::default();
        let cfg = UserConfig::new("informed_r", ORIGIN, ORIGIN, 0.0);
        let b = reg.create(&cfg).unwrap();
        assert_eq!(b.type_name(), "INFORMED_R");
        assert!(reg.contains("Obedient"));
        assert!(!reg.contains("TELEPORTER"));
        assert_eq!(reg.names().len(), 6);
    }

    #[test]
    fn user_config_defaults() {
        let json = r#"{"userType":"INFORMED","position":{"lat":40.0,"lon":-3.0},
            "destinationPlace":{"lat":40.01,"lon":-3.0},"timeInstant":100}"#;
        let c: UserConfig = serde_json::from_str(json).unwrap();
        assert_eq!(c.walking_velocity, 1.4);
        assert_eq!(c.cycling_velocity, 6.0);
        assert_eq!(c.min_rental_attempts, 2);
        assert_eq!(c.max_distance_to_rent_bike, 600.0);
        assert!(serde_json::from_str::<UserConfig>(&json.replace("100}", "100,\"bogus\":1}")).is_err());
    }

    #[test]
    fn leg_interpolation() {
        let a = ORIGIN;
        let b = ORIGIN.offset_meters(0.0, 1000.0);
        let leg = Leg { from: a, to: b, depart: 0.0, arrive: 100.0 };
        let mid = leg.position_at(50.0);
        let d = crate::geo::great_circle_distance(&a, &mid);
        assert!((d - 500.0).abs() < 1.0, "{d}");
        assert_eq!(leg.position_at(200.0), b);
    }
}
