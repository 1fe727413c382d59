//! Event-driven simulation core.
//!
//! One `UserAppears` event is queued per user; dispatching an event mutates
//! the station inventory and user state, asks the user's behavior for a
//! decision where the life cycle branches, and schedules successor events.
//! The run ends when the queue is empty, so every user who appeared inside
//! the simulation window completes their life cycle.

mod event;

use std::collections::HashMap;
use std::io::Write;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub use event::{EventKind, EventQueue, QueueError, SimEvent};

use crate::config::{digest, Scenario};
use crate::fleet::{FleetError, Reservation, ReservationId, ReservationState, Station, StationId};
use crate::geo::{GeoError, GeoPoint, GreatCircleRouter, Router, TravelMode};
use crate::history::{
    ConfigDigests, DecisionRecord, HistoryError, HistoryHeader, HistoryRecord, HistoryWriter, StationInfo,
};
use crate::metrics::MetricsCounters;
use crate::recommend::{RecommendError, Recommender, RecommenderRegistry};
use crate::users::{
    AfterBikeDecision, DecisionContext, Leg, LifeCycleState, RentalContext, RentalDecision, ReturnContext,
    ReturnDecision, UserBehavior, UserConfig, UserRuntime, UserTypeRegistry,
};
use crate::UserId;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("{kind} for user {user} at t={time}: {source}")]
    Dispatch {
        kind: EventKind,
        user: UserId,
        time: f64,
        #[source]
        source: Box<SimError>,
    },
    #[error(transparent)]
    Queue(#[from] QueueError),
    #[error(transparent)]
    Fleet(#[from] FleetError),
    #[error(transparent)]
    Geo(#[from] GeoError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Recommender(#[from] RecommendError),
    #[error("invalid station configuration: {0}")]
    Stations(String),
    #[error("unknown station {0}")]
    UnknownStation(StationId),
    #[error("unknown reservation {0}")]
    UnknownReservation(ReservationId),
    #[error("unknown user type '{0}'")]
    UnknownUserType(String),
    #[error("user type {0} needs a recommendation system but none is configured")]
    MissingRecommender(String),
    #[error("reservation {id} used at t={time} after its expiry t={expiry}")]
    LateReservation { id: ReservationId, time: f64, expiry: f64 },
    #[error("event after the user left the system")]
    UserAlreadyLeft,
    #[error("user life cycle violated: {0}")]
    LifeCycle(&'static str),
    #[error("the world has no stations")]
    NoStations,
}

/// Totals returned by a run; the same counters the analysis recomputes
/// from the history.
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub seed: u64,
    pub events: u64,
    pub horizon: f64,
    pub rejected_users: usize,
    pub counters: MetricsCounters,
}

struct SimUser {
    config: UserConfig,
    runtime: UserRuntime,
    behavior: Box<dyn UserBehavior>,
    failed_hires: u64,
}

/// Router, user types and recommenders used by a simulation.
pub struct Components {
    pub router: Box<dyn Router>,
    pub user_types: UserTypeRegistry,
    pub recommenders: RecommenderRegistry,
}

impl Components {
    pub fn for_scenario(scenario: &Scenario) -> Result<Self, SimError> {
        Ok(Self {
            router: Box::new(GreatCircleRouter::new(
                scenario.global.circuity_walk,
                scenario.global.circuity_cycle,
            )?),
            user_types: UserTypeRegistry::default(),
            recommenders: RecommenderRegistry::default(),
        })
    }
}

pub struct Simulation<W: Write> {
    stations: Vec<Station>,
    station_index: HashMap<StationId, usize>,
    users: Vec<SimUser>,
    reservations: Vec<Reservation>,
    queue: EventQueue,
    rng: ChaCha8Rng,
    seed: u64,
    router: Box<dyn Router>,
    recommender: Option<Box<dyn Recommender>>,
    reservation_time: f64,
    return_retry_delay: f64,
    history: HistoryWriter<W>,
    counters: MetricsCounters,
    rejected_users: usize,
    events: u64,
    last_time: f64,
}

/// Runs a scenario with the built-in components and writes the history to `sink`.
pub fn simulate<W: Write>(scenario: &Scenario, sink: W) -> Result<(RunSummary, W), SimError> {
    Simulation::new(scenario, Components::for_scenario(scenario)?, sink)?.run()
}

impl<W: Write> Simulation<W> {
    /// Builds the world, writes the history header and queues one
    /// `UserAppears` per user whose appearance lies within the simulation time.
    pub fn new(scenario: &Scenario, components: Components, sink: W) -> Result<Self, SimError> {
        let global = &scenario.global;
        if scenario.stations.stations.is_empty() {
            return Err(SimError::NoStations);
        }
        let mut stations: Vec<Station> = Vec::with_capacity(scenario.stations.stations.len());
        let mut station_index = HashMap::new();
        for sc in &scenario.stations.stations {
            if station_index.insert(sc.id, stations.len()).is_some() {
                return Err(SimError::Stations(format!("duplicate station id {}", sc.id)));
            }
            stations.push(Station::new(sc.id, sc.position, sc.capacity, sc.initial_bikes)?);
        }

        let recommender = global
            .recommendation_system_type
            .as_ref()
            .map(|cfg| components.recommenders.build(cfg))
            .transpose()?;

        let seed = global.random_seed.unwrap_or_else(rand::random);
        let mut queue = EventQueue::new();
        let mut users = Vec::new();
        let mut rejected_users = 0;
        for cfg in &scenario.users.users {
            let behavior = components
                .user_types
                .create(cfg)
                .ok_or_else(|| SimError::UnknownUserType(cfg.user_type.clone()))?;
            if behavior.uses_recommender() && recommender.is_none() {
                return Err(SimError::MissingRecommender(behavior.type_name().to_string()));
            }
            // ids stay equal to the position in the users file
            let id = UserId(users.len() as u32);
            if cfg.time_instant > global.total_simulation_time {
                warn!(
                    "user {id} of type {} at t={} appears after the simulation time {}; skipped",
                    cfg.user_type, cfg.time_instant, global.total_simulation_time
                );
                rejected_users += 1;
            } else {
                queue.schedule(SimEvent::new(cfg.time_instant, EventKind::UserAppears, id))?;
            }
            users.push(SimUser {
                config: cfg.clone(),
                runtime: UserRuntime::new(cfg.position),
                behavior,
                failed_hires: 0,
            });
        }

        let header = HistoryHeader {
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed,
            reservation_time: global.reservation_time,
            total_simulation_time: global.total_simulation_time,
            recommender: recommender.as_ref().map(|r| r.type_name().to_string()),
            digests: ConfigDigests {
                global: digest(&scenario.global),
                stations: digest(&scenario.stations),
                users: digest(&scenario.users),
            },
            stations: scenario
                .stations
                .stations
                .iter()
                .map(|s| StationInfo {
                    id: s.id,
                    position: s.position,
                    capacity: s.capacity,
                    initial_bikes: s.initial_bikes,
                })
                .collect(),
        };
        let mut history = HistoryWriter::new(sink);
        history.write_header(&header)?;

        Ok(Self {
            stations,
            station_index,
            users,
            reservations: Vec::new(),
            queue,
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            router: components.router,
            recommender,
            reservation_time: global.reservation_time,
            return_retry_delay: global.return_retry_delay,
            history,
            counters: MetricsCounters::default(),
            rejected_users,
            events: 0,
            last_time: 0.0,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn pending_events(&self) -> usize {
        self.queue.len()
    }

    pub fn stations(&self) -> &[Station] {
        &self.stations
    }

    /// Processes events until the queue is exhausted.
    pub fn run(mut self) -> Result<(RunSummary, W), SimError> {
        while self.step()?.is_some() {}
        self.counters.fh_h = self
            .users
            .iter()
            .filter(|u| u.runtime.took_bike_at.is_some())
            .map(|u| u.failed_hires)
            .sum();
        let summary = RunSummary {
            seed: self.seed,
            events: self.events,
            horizon: self.last_time,
            rejected_users: self.rejected_users,
            counters: self.counters,
        };
        Ok((summary, self.history.finish()?))
    }

    /// Dispatches the next event, returning its kind.
    pub fn step(&mut self) -> Result<Option<EventKind>, SimError> {
        let Some(ev) = self.queue.pop() else {
            return Ok(None);
        };
        self.last_time = ev.time;
        self.events += 1;
        self.dispatch(ev).map_err(|source| SimError::Dispatch {
            kind: ev.kind,
            user: ev.user,
            time: ev.time,
            source: Box::new(source),
        })?;
        Ok(Some(ev.kind))
    }

    fn station_idx(&self, id: StationId) -> Result<usize, SimError> {
        self.station_index.get(&id).copied().ok_or(SimError::UnknownStation(id))
    }

    fn reservation_mut(&mut self, id: ReservationId) -> Result<&mut Reservation, SimError> {
        self.reservations
            .get_mut(id.0 as usize)
            .ok_or(SimError::UnknownReservation(id))
    }

    fn schedule(&mut self, ev: SimEvent) -> Result<(), SimError> {
        self.queue.schedule(ev)?;
        Ok(())
    }

    fn record(&mut self, ev: &SimEvent) -> HistoryRecord {
        let mut r = HistoryRecord::new(ev.time, ev.seq, ev.kind, ev.user);
        r.station = ev.station;
        r.reservation = ev.reservation;
        r
    }

    fn with_station_state(&self, mut r: HistoryRecord, station: StationId) -> Result<HistoryRecord, SimError> {
        let idx = self.station_idx(station)?;
        r.station = Some(station);
        r.station_state = Some(self.stations[idx].snapshot());
        Ok(r)
    }

    /// Starts a movement and returns the arrival time.
    fn travel(&mut self, user: UserId, to: GeoPoint, mode: TravelMode, depart: f64) -> Result<f64, SimError> {
        let u = &self.users[user.0 as usize];
        let from = u.runtime.current_position;
        let velocity = match mode {
            TravelMode::Walk => u.config.walking_velocity,
            TravelMode::Cycle => u.config.cycling_velocity,
        };
        let route = self.router.route(&from, &to, mode);
        let arrive = depart + self.router.travel_time(&route, velocity)?;
        self.users[user.0 as usize].runtime.leg = Some(Leg {
            from,
            to,
            depart,
            arrive,
        });
        Ok(arrive)
    }

    fn decide_rental(&mut self, user: UserId, now: f64) -> RentalDecision {
        let u = &self.users[user.0 as usize];
        let mut ctx = DecisionContext {
            config: &u.config,
            runtime: &u.runtime,
            stations: &self.stations,
            router: self.router.as_ref(),
            recommender: self.recommender.as_deref(),
            now,
            rng: &mut self.rng,
        };
        match u.runtime.rental_context {
            RentalContext::Appeared => u.behavior.decide_after_appearing(&mut ctx),
            RentalContext::FailedRental => u.behavior.decide_after_failed_rental(&mut ctx),
            RentalContext::FailedBikeReservation => u.behavior.decide_after_failed_bike_reservation(&mut ctx),
            RentalContext::BikeReservationTimeout => u.behavior.decide_after_bike_reservation_timeout(&mut ctx),
        }
    }

    fn decide_return(&mut self, user: UserId, now: f64) -> ReturnDecision {
        let u = &self.users[user.0 as usize];
        let mut ctx = DecisionContext {
            config: &u.config,
            runtime: &u.runtime,
            stations: &self.stations,
            router: self.router.as_ref(),
            recommender: self.recommender.as_deref(),
            now,
            rng: &mut self.rng,
        };
        match u.runtime.return_context {
            ReturnContext::FinishedRide => u.behavior.decide_after_finishing_ride(&mut ctx),
            ReturnContext::FailedReturn => u.behavior.decide_after_failed_return(&mut ctx),
            // no dedicated hook for slot timeouts: treated like a failed slot reservation
            ReturnContext::FailedSlotReservation | ReturnContext::SlotReservationTimeout => {
                u.behavior.decide_after_failed_slot_reservation(&mut ctx)
            }
        }
    }

    fn decide_after_getting_bike(&mut self, user: UserId, now: f64) -> AfterBikeDecision {
        let u = &self.users[user.0 as usize];
        let mut ctx = DecisionContext {
            config: &u.config,
            runtime: &u.runtime,
            stations: &self.stations,
            router: self.router.as_ref(),
            recommender: self.recommender.as_deref(),
            now,
            rng: &mut self.rng,
        };
        u.behavior.decide_after_getting_bike(&mut ctx)
    }

    fn rental_failed(&mut self, user: UserId, station: StationId, ctx: RentalContext, now: f64) -> Result<(), SimError> {
        let rt = &mut self.users[user.0 as usize].runtime;
        rt.failed_rental_attempts += 1;
        rt.tried_rental.insert(station);
        rt.rental_context = ctx;
        rt.state = LifeCycleState::DecidingRental;
        self.schedule(SimEvent::new(now, EventKind::UserDecidesRental, user))
    }

    fn return_failed(&mut self, user: UserId, station: StationId, ctx: ReturnContext, now: f64) -> Result<(), SimError> {
        let rt = &mut self.users[user.0 as usize].runtime;
        rt.failed_return_attempts += 1;
        if ctx != ReturnContext::SlotReservationTimeout {
            rt.tried_return.insert(station);
        }
        rt.return_context = ctx;
        rt.state = LifeCycleState::DecidingReturn;
        self.schedule(SimEvent::new(now, EventKind::UserDecidesReturn, user))
    }

    fn dispatch(&mut self, ev: SimEvent) -> Result<(), SimError> {
        let now = ev.time;
        let uid = ev.user;
        let ui = uid.0 as usize;
        if self.users[ui].runtime.state == LifeCycleState::Left {
            return Err(SimError::UserAlreadyLeft);
        }
        let mut rec = self.record(&ev);

        match ev.kind {
            EventKind::UserAppears => {
                let u = &mut self.users[ui];
                u.runtime.appeared_at = Some(now);
                u.runtime.state = LifeCycleState::DecidingRental;
                u.runtime.rental_context = RentalContext::Appeared;
                rec.user_type = Some(u.behavior.type_name().to_string());
                rec.position = Some(u.config.position);
                rec.destination = Some(u.config.destination_place);
                self.counters.n += 1;
                self.schedule(SimEvent::new(now, EventKind::UserDecidesRental, uid))?;
            }

            EventKind::UserDecidesRental => {
                let decision = self.decide_rental(uid, now);
                rec.position = Some(self.users[ui].runtime.current_position);
                match decision {
                    RentalDecision::GoToStation(s) => {
                        let idx = self.station_idx(s)?;
                        rec = self.with_station_state(rec, s)?;
                        rec.decision = Some(DecisionRecord::GoToStation { station: s });
                        let arrive = self.travel(uid, self.stations[idx].position, TravelMode::Walk, now)?;
                        self.users[ui].runtime.state = LifeCycleState::WalkingToStation;
                        self.schedule(SimEvent::new(arrive, EventKind::UserArrivesAtStationToRent, uid).at_station(s))?;
                    }
                    RentalDecision::ReserveBikeAt(s) => {
                        self.station_idx(s)?;
                        rec = self.with_station_state(rec, s)?;
                        rec.decision = Some(DecisionRecord::ReserveBike { station: s });
                        self.users[ui].runtime.state = LifeCycleState::ReservingBike;
                        self.schedule(SimEvent::new(now, EventKind::UserTriesToReserveBike, uid).at_station(s))?;
                    }
                    RentalDecision::LeaveSystem => {
                        rec.decision = Some(DecisionRecord::LeaveSystem);
                        self.schedule(SimEvent::new(now, EventKind::UserLeavesSystem, uid))?;
                    }
                }
            }

            EventKind::UserArrivesAtStationToRent => {
                let s = ev.station.expect("queue enforces station");
                let idx = self.station_idx(s)?;
                self.users[ui].runtime.current_position = self.stations[idx].position;
                let ok = self.stations[idx].try_rent_bike();
                rec = self.with_station_state(rec, s)?;
                rec.success = Some(ok);
                if ok {
                    self.schedule(SimEvent::new(now, EventKind::UserTakesBike, uid).at_station(s))?;
                } else {
                    self.counters.fh += 1;
                    self.users[ui].failed_hires += 1;
                    self.rental_failed(uid, s, RentalContext::FailedRental, now)?;
                }
            }

            EventKind::UserTriesToReserveBike => {
                let s = ev.station.expect("queue enforces station");
                let idx = self.station_idx(s)?;
                let rid = ReservationId(self.reservations.len() as u64);
                let res = self.stations[idx].try_reserve_bike(rid, uid, now, self.reservation_time);
                rec = self.with_station_state(rec, s)?;
                rec.success = Some(res.is_some());
                match res {
                    Some(r) => {
                        rec.reservation = Some(rid);
                        rec.expiry = Some(r.expiry_time);
                        self.reservations.push(r);
                        self.users[ui].runtime.reservation = Some(rid);
                        self.schedule(
                            SimEvent::new(now, EventKind::UserHasBikeReservation, uid)
                                .at_station(s)
                                .with_reservation(rid),
                        )?;
                    }
                    None => self.rental_failed(uid, s, RentalContext::FailedBikeReservation, now)?,
                }
            }

            EventKind::UserHasBikeReservation | EventKind::UserHasSlotReservation => {
                let s = ev.station.expect("queue enforces station");
                let rid = ev.reservation.ok_or(SimError::LifeCycle("reservation event without reservation"))?;
                let expiry = self.reservation_mut(rid)?.expiry_time;
                let idx = self.station_idx(s)?;
                let bike = ev.kind == EventKind::UserHasBikeReservation;
                let (mode, state, fulfil, timeout) = if bike {
                    (
                        TravelMode::Walk,
                        LifeCycleState::WalkingWithReservation,
                        EventKind::UserTakesBike,
                        EventKind::BikeReservationTimeout,
                    )
                } else {
                    (
                        TravelMode::Cycle,
                        LifeCycleState::CyclingWithReservation,
                        EventKind::UserReturnsBike,
                        EventKind::SlotReservationTimeout,
                    )
                };
                let arrive = self.travel(uid, self.stations[idx].position, mode, now)?;
                self.users[ui].runtime.state = state;
                let next = if arrive <= expiry {
                    SimEvent::new(arrive, fulfil, uid)
                } else {
                    SimEvent::new(expiry, timeout, uid)
                };
                self.schedule(next.at_station(s).with_reservation(rid))?;
            }

            EventKind::BikeReservationTimeout | EventKind::SlotReservationTimeout => {
                let s = ev.station.expect("queue enforces station");
                let rid = ev.reservation.ok_or(SimError::LifeCycle("timeout without reservation"))?;
                let idx = self.station_idx(s)?;
                // timeouts are only scheduled when the user cannot make it in time
                if self.reservation_mut(rid)?.state != ReservationState::Active {
                    return Err(SimError::LifeCycle("timeout for a reservation that is no longer active"));
                }
                let mut res = self.reservation_mut(rid)?.clone();
                self.stations[idx].expire_reservation(&mut res)?;
                *self.reservation_mut(rid)? = res;
                let rt = &mut self.users[ui].runtime;
                rt.reservation = None;
                if let Some(leg) = rt.leg {
                    rt.current_position = leg.position_at(now);
                }
                rec.position = Some(rt.current_position);
                rec = self.with_station_state(rec, s)?;
                if ev.kind == EventKind::BikeReservationTimeout {
                    self.rental_failed(uid, s, RentalContext::BikeReservationTimeout, now)?;
                } else {
                    self.return_failed(uid, s, ReturnContext::SlotReservationTimeout, now)?;
                }
            }

            EventKind::UserTakesBike => {
                let s = ev.station.expect("queue enforces station");
                let idx = self.station_idx(s)?;
                if let Some(rid) = ev.reservation {
                    let mut res = self.reservation_mut(rid)?.clone();
                    if now > res.expiry_time {
                        return Err(SimError::LateReservation {
                            id: rid,
                            time: now,
                            expiry: res.expiry_time,
                        });
                    }
                    self.stations[idx].fulfill_reservation(&mut res)?;
                    *self.reservation_mut(rid)? = res;
                    self.users[ui].runtime.reservation = None;
                }
                let rt = &mut self.users[ui].runtime;
                if rt.has_bike || rt.took_bike_at.is_some() {
                    return Err(SimError::LifeCycle("user takes a second bike"));
                }
                rt.has_bike = true;
                rt.took_bike_at = Some(now);
                rt.current_position = self.stations[idx].position;
                rt.state = LifeCycleState::WithBike;
                self.counters.sh += 1;
                rec = self.with_station_state(rec, s)?;

                match self.decide_after_getting_bike(uid, now) {
                    AfterBikeDecision::RideToIntermediate(p) => {
                        rec.decision = Some(DecisionRecord::RideTo { position: p });
                        let arrive = self.travel(uid, p, TravelMode::Cycle, now)?;
                        self.users[ui].runtime.state = LifeCycleState::Riding;
                        self.schedule(SimEvent::new(arrive, EventKind::UserFinishesRide, uid))?;
                    }
                    AfterBikeDecision::GoToReturnStation(st) => {
                        rec.decision = Some(DecisionRecord::GoToReturnStation { station: st });
                        self.users[ui].runtime.pending_return = Some(ReturnDecision::GoToReturnStation(st));
                        self.schedule(SimEvent::new(now, EventKind::UserDecidesReturn, uid))?;
                    }
                    AfterBikeDecision::ReserveSlotAt(st) => {
                        rec.decision = Some(DecisionRecord::ReserveSlot { station: st });
                        self.users[ui].runtime.pending_return = Some(ReturnDecision::ReserveSlotAt(st));
                        self.schedule(SimEvent::new(now, EventKind::UserDecidesReturn, uid))?;
                    }
                }
            }

            EventKind::UserFinishesRide => {
                let rt = &mut self.users[ui].runtime;
                if let Some(leg) = rt.leg {
                    rt.current_position = leg.to;
                }
                rt.state = LifeCycleState::DecidingReturn;
                rt.return_context = ReturnContext::FinishedRide;
                rec.position = Some(rt.current_position);
                self.schedule(SimEvent::new(now, EventKind::UserDecidesReturn, uid))?;
            }

            EventKind::UserDecidesReturn => {
                if !self.users[ui].runtime.has_bike {
                    return Err(SimError::LifeCycle("return decision without a bike"));
                }
                let decision = match self.users[ui].runtime.pending_return.take() {
                    Some(d) => d,
                    None => self.decide_return(uid, now),
                };
                let s = decision.station();
                let idx = self.station_idx(s)?;
                // every candidate failed: start over after a pause
                let mut depart = now;
                let rt = &mut self.users[ui].runtime;
                rt.return_target = Some(s);
                if rt.tried_return.contains(&s) {
                    rt.tried_return.clear();
                    depart += self.return_retry_delay;
                }
                rec.position = Some(rt.current_position);
                rec = self.with_station_state(rec, s)?;
                match decision {
                    ReturnDecision::GoToReturnStation(_) => {
                        rec.decision = Some(DecisionRecord::GoToReturnStation { station: s });
                        let arrive = self.travel(uid, self.stations[idx].position, TravelMode::Cycle, depart)?;
                        self.users[ui].runtime.state = LifeCycleState::CyclingToStation;
                        self.schedule(
                            SimEvent::new(arrive, EventKind::UserArrivesAtStationToReturn, uid).at_station(s),
                        )?;
                    }
                    ReturnDecision::ReserveSlotAt(_) => {
                        rec.decision = Some(DecisionRecord::ReserveSlot { station: s });
                        self.users[ui].runtime.state = LifeCycleState::ReservingSlot;
                        self.schedule(SimEvent::new(depart, EventKind::UserTriesToReserveSlot, uid).at_station(s))?;
                    }
                }
            }

            EventKind::UserArrivesAtStationToReturn => {
                let s = ev.station.expect("queue enforces station");
                let idx = self.station_idx(s)?;
                self.users[ui].runtime.current_position = self.stations[idx].position;
                let ok = self.stations[idx].try_return_bike();
                rec = self.with_station_state(rec, s)?;
                rec.success = Some(ok);
                if ok {
                    self.schedule(SimEvent::new(now, EventKind::UserReturnsBike, uid).at_station(s))?;
                } else {
                    self.counters.fr += 1;
                    self.return_failed(uid, s, ReturnContext::FailedReturn, now)?;
                }
            }

            EventKind::UserTriesToReserveSlot => {
                let s = ev.station.expect("queue enforces station");
                let idx = self.station_idx(s)?;
                let rid = ReservationId(self.reservations.len() as u64);
                let res = self.stations[idx].try_reserve_slot(rid, uid, now, self.reservation_time);
                rec = self.with_station_state(rec, s)?;
                rec.success = Some(res.is_some());
                match res {
                    Some(r) => {
                        rec.reservation = Some(rid);
                        rec.expiry = Some(r.expiry_time);
                        self.reservations.push(r);
                        self.users[ui].runtime.reservation = Some(rid);
                        self.schedule(
                            SimEvent::new(now, EventKind::UserHasSlotReservation, uid)
                                .at_station(s)
                                .with_reservation(rid),
                        )?;
                    }
                    None => self.return_failed(uid, s, ReturnContext::FailedSlotReservation, now)?,
                }
            }

            EventKind::UserReturnsBike => {
                let s = ev.station.expect("queue enforces station");
                let idx = self.station_idx(s)?;
                if let Some(rid) = ev.reservation {
                    let mut res = self.reservation_mut(rid)?.clone();
                    if now > res.expiry_time {
                        return Err(SimError::LateReservation {
                            id: rid,
                            time: now,
                            expiry: res.expiry_time,
                        });
                    }
                    self.stations[idx].fulfill_reservation(&mut res)?;
                    *self.reservation_mut(rid)? = res;
                    self.users[ui].runtime.reservation = None;
                }
                let rt = &mut self.users[ui].runtime;
                if !rt.has_bike {
                    return Err(SimError::LifeCycle("return without a bike"));
                }
                rt.has_bike = false;
                rt.returned_bike_at = Some(now);
                rt.current_position = self.stations[idx].position;
                rt.state = LifeCycleState::WalkingToDestination;
                self.counters.sr += 1;
                rec = self.with_station_state(rec, s)?;
                let dest = self.users[ui].config.destination_place;
                let arrive = self.travel(uid, dest, TravelMode::Walk, now)?;
                self.schedule(SimEvent::new(arrive, EventKind::UserArrivesAtDestination, uid))?;
            }

            EventKind::UserArrivesAtDestination => {
                let u = &mut self.users[ui];
                let rt = &mut u.runtime;
                rt.current_position = u.config.destination_place;
                rt.arrived_at = Some(now);
                rec.position = Some(rt.current_position);
                self.schedule(SimEvent::new(now, EventKind::UserLeavesSystem, uid))?;
            }

            EventKind::UserLeavesSystem => {
                let rt = &mut self.users[ui].runtime;
                if rt.has_bike {
                    return Err(SimError::LifeCycle("user leaves while holding a bike"));
                }
                if rt.took_bike_at.is_none() {
                    self.counters.abandoned += 1;
                }
                rt.state = LifeCycleState::Left;
                rec.position = Some(rt.current_position);
            }
        }

        self.history.append(&rec)?;
        Ok(())
    }
}
