//! Consistency checks over a stored history.
//!
//! Each check returns the list of violations it found; an empty list means
//! the history passed. The checks only read the history, so they can audit
//! files produced by any version of the engine.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use crate::engine::EventKind;
use crate::fleet::{ReservationId, StationId};
use crate::history::{DecisionRecord, History, HistoryRecord};
use crate::UserId;

#[derive(Debug, Clone, PartialEq)]
pub struct AuditViolation {
    pub time: f64,
    pub seq: u64,
    pub message: String,
}

impl fmt::Display for AuditViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "t={} seq={}: {}", self.time, self.seq, self.message)
    }
}

fn violation(r: &HistoryRecord, message: impl Into<String>) -> AuditViolation {
    AuditViolation {
        time: r.time,
        seq: r.seq,
        message: message.into(),
    }
}

/// Records must be strictly increasing in `(time, seq)`.
pub fn check_event_order(history: &History) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    for w in history.records.windows(2) {
        let (a, b) = (&w[0], &w[1]);
        if b.time < a.time || (b.time == a.time && b.seq <= a.seq) {
            out.push(violation(b, format!("follows (t={}, seq={})", a.time, a.seq)));
        }
    }
    out
}

/// Capacity identity on every snapshot, and docked plus in-use bikes equal
/// to the initial fleet after every record.
///
/// A bike counts as in use from the successful rental attempt (or the
/// pickup of a reserved bike) until the successful return attempt (or the
/// drop into a reserved slot).
pub fn check_conservation(history: &History) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    let mut docked: BTreeMap<StationId, (u32, u32)> = history
        .header
        .stations
        .iter()
        .map(|s| (s.id, (s.capacity, s.initial_bikes)))
        .collect();
    let fleet: i64 = history.header.stations.iter().map(|s| s.initial_bikes as i64).sum();
    let mut docked_total = fleet;
    let mut in_use: i64 = 0;

    for r in &history.records {
        match (r.event, r.success, r.reservation) {
            (EventKind::UserArrivesAtStationToRent, Some(true), _) => in_use += 1,
            (EventKind::UserTakesBike, _, Some(_)) => in_use += 1,
            (EventKind::UserArrivesAtStationToReturn, Some(true), _) => in_use -= 1,
            (EventKind::UserReturnsBike, _, Some(_)) => in_use -= 1,
            _ => {}
        }
        if let (Some(id), Some(snap)) = (r.station, r.station_state) {
            match docked.get_mut(&id) {
                None => out.push(violation(r, format!("snapshot for unknown station {id}"))),
                Some((capacity, bikes)) => {
                    if snap.total() != *capacity {
                        out.push(violation(
                            r,
                            format!("station {id}: counts sum to {} but capacity is {capacity}", snap.total()),
                        ));
                    }
                    docked_total += snap.docked_bikes() as i64 - *bikes as i64;
                    *bikes = snap.docked_bikes();
                }
            }
        }
        if in_use < 0 {
            out.push(violation(r, "more bikes returned than rented"));
        }
        if docked_total + in_use != fleet {
            out.push(violation(
                r,
                format!("{docked_total} docked + {in_use} in use != fleet of {fleet}"),
            ));
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    Start,
    After(EventKind, Option<bool>),
    Done,
}

fn legal_successor(prev: EventKind, success: Option<bool>, next: EventKind) -> bool {
    use EventKind::*;
    match prev {
        UserAppears => next == UserDecidesRental,
        UserDecidesRental => matches!(next, UserArrivesAtStationToRent | UserTriesToReserveBike | UserLeavesSystem),
        UserArrivesAtStationToRent | UserTriesToReserveBike => match success {
            Some(true) if prev == UserArrivesAtStationToRent => next == UserTakesBike,
            Some(true) => next == UserHasBikeReservation,
            _ => next == UserDecidesRental,
        },
        UserHasBikeReservation => matches!(next, UserTakesBike | BikeReservationTimeout),
        BikeReservationTimeout => next == UserDecidesRental,
        UserTakesBike => matches!(next, UserFinishesRide | UserDecidesReturn),
        UserFinishesRide => next == UserDecidesReturn,
        UserDecidesReturn => matches!(next, UserArrivesAtStationToReturn | UserTriesToReserveSlot),
        UserArrivesAtStationToReturn | UserTriesToReserveSlot => match success {
            Some(true) if prev == UserArrivesAtStationToReturn => next == UserReturnsBike,
            Some(true) => next == UserHasSlotReservation,
            _ => next == UserDecidesReturn,
        },
        UserHasSlotReservation => matches!(next, UserReturnsBike | SlotReservationTimeout),
        SlotReservationTimeout => next == UserDecidesReturn,
        UserReturnsBike => next == UserArrivesAtDestination,
        UserArrivesAtDestination => next == UserLeavesSystem,
        UserLeavesSystem => false,
    }
}

/// Every user's events form a legal life-cycle path that ends with
/// `UserLeavesSystem`, and nobody leaves while holding a bike.
pub fn check_user_paths(history: &History) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    let mut users: HashMap<UserId, (Expect, bool)> = HashMap::new();
    for r in &history.records {
        let (expect, has_bike) = users.entry(r.user).or_insert((Expect::Start, false));
        let legal = match *expect {
            Expect::Start => r.event == EventKind::UserAppears,
            Expect::After(prev, success) => legal_successor(prev, success, r.event),
            Expect::Done => false,
        };
        if !legal {
            out.push(violation(
                r,
                format!("user {}: {} not allowed after {:?}", r.user, r.event, expect),
            ));
        }
        match r.event {
            EventKind::UserTakesBike => *has_bike = true,
            EventKind::UserReturnsBike => *has_bike = false,
            EventKind::UserLeavesSystem if *has_bike => {
                out.push(violation(r, format!("user {} leaves holding a bike", r.user)))
            }
            _ => {}
        }
        *expect = if r.event == EventKind::UserLeavesSystem {
            Expect::Done
        } else {
            Expect::After(r.event, r.success)
        };
    }
    let mut unfinished: Vec<_> = users
        .iter()
        .filter(|(_, (e, _))| *e != Expect::Done)
        .map(|(u, _)| *u)
        .collect();
    unfinished.sort();
    let end = history.records.last();
    for u in unfinished {
        out.push(AuditViolation {
            time: end.map_or(0.0, |r| r.time),
            seq: end.map_or(0, |r| r.seq),
            message: format!("user {u} never left the system"),
        });
    }
    out
}

/// Reservation bookkeeping: expiry equals creation plus the reservation
/// time, fulfilment happens no later than expiry, timeouts fire exactly at
/// expiry, and every reservation ends exactly once at its own station.
pub fn check_reservation_timing(history: &History) -> Vec<AuditViolation> {
    struct Open {
        station: Option<StationId>,
        user: UserId,
        expiry: f64,
        closed: bool,
    }
    let rt = history.header.reservation_time;
    let mut out = Vec::new();
    let mut open: BTreeMap<ReservationId, Open> = BTreeMap::new();
    for r in &history.records {
        let Some(id) = r.reservation else { continue };
        match r.event {
            EventKind::UserTriesToReserveBike | EventKind::UserTriesToReserveSlot => {
                let expiry = r.expiry.unwrap_or(f64::NAN);
                if expiry != r.time + rt {
                    out.push(violation(r, format!("reservation {id} expires at {expiry}, not {}", r.time + rt)));
                }
                if open
                    .insert(
                        id,
                        Open {
                            station: r.station,
                            user: r.user,
                            expiry,
                            closed: false,
                        },
                    )
                    .is_some()
                {
                    out.push(violation(r, format!("reservation {id} created twice")));
                }
            }
            EventKind::UserHasBikeReservation | EventKind::UserHasSlotReservation => {
                if !open.contains_key(&id) {
                    out.push(violation(r, format!("unknown reservation {id}")));
                }
            }
            kind => {
                let Some(o) = open.get_mut(&id) else {
                    out.push(violation(r, format!("unknown reservation {id}")));
                    continue;
                };
                if o.closed {
                    out.push(violation(r, format!("reservation {id} used after it ended")));
                }
                if o.station != r.station || o.user != r.user {
                    out.push(violation(r, format!("reservation {id} used by another user or station")));
                }
                o.closed = true;
                let timeout = matches!(kind, EventKind::BikeReservationTimeout | EventKind::SlotReservationTimeout);
                if timeout && r.time != o.expiry {
                    out.push(violation(r, format!("reservation {id} timed out at {}, expiry {}", r.time, o.expiry)));
                }
                if !timeout && r.time > o.expiry {
                    out.push(violation(r, format!("reservation {id} fulfilled after expiry {}", o.expiry)));
                }
            }
        }
    }
    for (id, o) in &open {
        if !o.closed {
            out.push(AuditViolation {
                time: o.expiry,
                seq: 0,
                message: format!("reservation {id} never ended"),
            });
        }
    }
    out
}

/// For users whose type satisfies `reserving`: every pickup and drop-off
/// uses a reservation and no walk-up attempt ever happens.
pub fn check_reserving_users(history: &History, reserving: impl Fn(&str) -> bool) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    let mut flagged: HashMap<UserId, bool> = HashMap::new();
    for r in &history.records {
        if r.event == EventKind::UserAppears {
            flagged.insert(r.user, r.user_type.as_deref().is_some_and(&reserving));
            continue;
        }
        if !flagged.get(&r.user).copied().unwrap_or(false) {
            continue;
        }
        match r.event {
            EventKind::UserTakesBike | EventKind::UserReturnsBike if r.reservation.is_none() => {
                out.push(violation(r, format!("user {} {} without a reservation", r.user, r.event)))
            }
            EventKind::UserArrivesAtStationToRent | EventKind::UserArrivesAtStationToReturn => {
                out.push(violation(r, format!("reserving user {} walks up to a station", r.user)))
            }
            _ => {}
        }
    }
    out
}

/// Users whose type satisfies `informed` only head for stations that had a
/// rentable bike when they decided.
pub fn check_informed_choices(history: &History, informed: impl Fn(&str) -> bool) -> Vec<AuditViolation> {
    let mut out = Vec::new();
    let mut flagged: HashMap<UserId, bool> = HashMap::new();
    for r in &history.records {
        if r.event == EventKind::UserAppears {
            flagged.insert(r.user, r.user_type.as_deref().is_some_and(&informed));
            continue;
        }
        if r.event != EventKind::UserDecidesRental || !flagged.get(&r.user).copied().unwrap_or(false) {
            continue;
        }
        if let Some(DecisionRecord::GoToStation { .. } | DecisionRecord::ReserveBike { .. }) = r.decision {
            if !matches!(r.station_state, Some(s) if s.available_bikes > 0) {
                out.push(violation(r, format!("user {} chose a station without bikes", r.user)));
            }
        }
    }
    out
}

/// Runs every type-independent check.
pub fn audit(history: &History) -> Vec<AuditViolation> {
    let mut out = check_event_order(history);
    out.extend(check_conservation(history));
    out.extend(check_user_paths(history));
    out.extend(check_reservation_timing(history));
    out
}
