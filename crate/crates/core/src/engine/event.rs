//! Event kinds and the time-ordered event queue.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fleet::{ReservationId, StationId};
use crate::UserId;

/// The sixteen kinds of events in a user's life cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EventKind {
    UserAppears,
    UserDecidesRental,
    UserArrivesAtStationToRent,
    UserTriesToReserveBike,
    UserHasBikeReservation,
    BikeReservationTimeout,
    UserTakesBike,
    UserFinishesRide,
    UserDecidesReturn,
    UserArrivesAtStationToReturn,
    UserTriesToReserveSlot,
    UserHasSlotReservation,
    SlotReservationTimeout,
    UserReturnsBike,
    UserArrivesAtDestination,
    UserLeavesSystem,
}

impl EventKind {
    pub const ALL: [EventKind; 16] = [
        EventKind::UserAppears,
        EventKind::UserDecidesRental,
        EventKind::UserArrivesAtStationToRent,
        EventKind::UserTriesToReserveBike,
        EventKind::UserHasBikeReservation,
        EventKind::BikeReservationTimeout,
        EventKind::UserTakesBike,
        EventKind::UserFinishesRide,
        EventKind::UserDecidesReturn,
        EventKind::UserArrivesAtStationToReturn,
        EventKind::UserTriesToReserveSlot,
        EventKind::UserHasSlotReservation,
        EventKind::SlotReservationTimeout,
        EventKind::UserReturnsBike,
        EventKind::UserArrivesAtDestination,
        EventKind::UserLeavesSystem,
    ];

    /// Kinds that always refer to a station.
    pub fn requires_station(&self) -> bool {
        matches!(
            self,
            EventKind::UserArrivesAtStationToRent
                | EventKind::UserTriesToReserveBike
                | EventKind::UserHasBikeReservation
                | EventKind::BikeReservationTimeout
                | EventKind::UserTakesBike
                | EventKind::UserArrivesAtStationToReturn
                | EventKind::UserTriesToReserveSlot
                | EventKind::UserHasSlotReservation
                | EventKind::SlotReservationTimeout
                | EventKind::UserReturnsBike
        )
    }
}

impl fmt::Display for EventKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimEvent {
    pub time: f64,
    pub seq: u64,
    pub kind: EventKind,
    pub user: UserId,
    pub station: Option<StationId>,
    pub reservation: Option<ReservationId>,
}

impl SimEvent {
    pub fn new(time: f64, kind: EventKind, user: UserId) -> Self {
        Self {
            time,
            seq: 0,
            kind,
            user,
            station: None,
            reservation: None,
        }
    }

    pub fn at_station(mut self, station: StationId) -> Self {
        self.station = Some(station);
        self
    }

    pub fn with_reservation(mut self, reservation: ReservationId) -> Self {
        self.reservation = Some(reservation);
        self
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum QueueError {
    #[error("cannot schedule {kind} for user {user} at t={time} before the clock (t={clock})")]
    BackInTime {
        kind: EventKind,
        user: UserId,
        time: f64,
        clock: f64,
    },
    #[error("event time {0} is not a finite non-negative number")]
    BadTime(f64),
    #[error("{kind} for user {user} has no station")]
    MissingStation { kind: EventKind, user: UserId },
}

struct Entry(SimEvent);

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    // reversed: BinaryHeap is a max-heap and we want the earliest (time, seq)
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .0
            .time
            .total_cmp(&self.0.time)
            .then(other.0.seq.cmp(&self.0.seq))
    }
}

/// Min-queue over `(time, seq)`; `seq` is assigned at insertion so
/// simultaneous events pop in the order they were scheduled.
#[derive(Default)]
pub struct EventQueue {
    heap: BinaryHeap<Entry>,
    next_seq: u64,
    clock: f64,
}

impl EventQueue {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heap.is_empty()
    }

    /// Returns the sequence number assigned to the event.
    pub fn schedule(&mut self, mut event: SimEvent) -> Result<u64, QueueError> {
        if !event.time.is_finite() || event.time < 0.0 {
            return Err(QueueError::BadTime(event.time));
        }
        if event.time < self.clock {
            return Err(QueueError::BackInTime {
                kind: event.kind,
                user: event.user,
                time: event.time,
                clock: self.clock,
            });
        }
        if event.kind.requires_station() && event.station.is_none() {
            return Err(QueueError::MissingStation {
                kind: event.kind,
                user: event.user,
            });
        }
        event.seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Entry(event));
        Ok(event.seq)
    }

    /// Removes the earliest event and advances the clock to its time.
    pub fn pop(&mut self) -> Option<SimEvent> {
        let Entry(ev) = self.heap.pop()?;
        self.clock = ev.time;
        Some(ev)
    }

    pub fn peek(&self) -> Option<&SimEvent> {
        self.heap.peek().map(|e| &e.0)
    }
}
