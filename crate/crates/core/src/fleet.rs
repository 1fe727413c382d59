//! Station inventory and reservation life cycle.
//!
//! A station's slots are always in exactly one of four states: holding an
//! available bike, holding a reserved bike, empty and available, or empty
//! and reserved. Every operation here preserves
//! `available_bikes + reserved_bikes + available_slots + reserved_slots == capacity`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoPoint;
use crate::UserId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StationId(pub u32);

impl fmt::Display for StationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReservationId(pub u64);

impl fmt::Display for ReservationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum FleetError {
    #[error("station {0}: capacity must be positive")]
    ZeroCapacity(StationId),
    #[error("station {id}: initial bikes {bikes} exceed capacity {capacity}")]
    Overfull {
        id: StationId,
        bikes: u32,
        capacity: u32,
    },
    #[error("reservation {id} is {state:?}, expected active")]
    NotActive {
        id: ReservationId,
        state: ReservationState,
    },
    #[error("reservation {reservation} belongs to station {expected}, not {actual}")]
    WrongStation {
        reservation: ReservationId,
        expected: StationId,
        actual: StationId,
    },
    #[error("station {0}: inventory underflow while applying reservation")]
    Underflow(StationId),
}

/// Four-way slot counts of a station at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StationSnapshot {
    pub available_bikes: u32,
    pub reserved_bikes: u32,
    pub available_slots: u32,
    pub reserved_slots: u32,
}

impl StationSnapshot {
    pub fn total(&self) -> u32 {
        self.available_bikes + self.reserved_bikes + self.available_slots + self.reserved_slots
    }

    pub fn docked_bikes(&self) -> u32 {
        self.available_bikes + self.reserved_bikes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Station {
    pub id: StationId,
    pub position: GeoPoint,
    pub capacity: u32,
    pub available_bikes: u32,
    pub reserved_bikes: u32,
    pub available_slots: u32,
    pub reserved_slots: u32,
}

impl Station {
    pub fn new(
        id: StationId,
        position: GeoPoint,
        capacity: u32,
        initial_bikes: u32,
    ) -> Result<Self, FleetError> {
        if capacity == 0 {
            return Err(FleetError::ZeroCapacity(id));
        }
        if initial_bikes > capacity {
            return Err(FleetError::Overfull {
                id,
                bikes: initial_bikes,
                capacity,
            });
        }
        Ok(Self {
            id,
            position,
            capacity,
            available_bikes: initial_bikes,
            reserved_bikes: 0,
            available_slots: capacity - initial_bikes,
            reserved_slots: 0,
        })
    }

    pub fn snapshot(&self) -> StationSnapshot {
        StationSnapshot {
            available_bikes: self.available_bikes,
            reserved_bikes: self.reserved_bikes,
            available_slots: self.available_slots,
            reserved_slots: self.reserved_slots,
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.snapshot().total() == self.capacity
    }

    /// Walk-up rental. Reserved bikes are not rentable.
    pub fn try_rent_bike(&mut self) -> bool {
        if self.available_bikes == 0 {
            return false;
        }
        self.available_bikes -= 1;
        self.available_slots += 1;
        true
    }

    /// Walk-up return. Reserved slots are not usable.
    pub fn try_return_bike(&mut self) -> bool {
        if self.available_slots == 0 {
            return false;
        }
        self.available_slots -= 1;
        self.available_bikes += 1;
        true
    }

    pub fn try_reserve_bike(
        &mut self,
        id: ReservationId,
        user: UserId,
        now: f64,
        reservation_time: f64,
    ) -> Option<Reservation> {
        if self.available_bikes == 0 {
            return None;
        }
        self.available_bikes -= 1;
        self.reserved_bikes += 1;
        Some(Reservation::new(id, user, self.id, ReservationKind::Bike, now, reservation_time))
    }

    pub fn try_reserve_slot(
        &mut self,
        id: ReservationId,
        user: UserId,
        now: f64,
        reservation_time: f64,
    ) -> Option<Reservation> {
        if self.available_slots == 0 {
            return None;
        }
        self.available_slots -= 1;
        self.reserved_slots += 1;
        Some(Reservation::new(id, user, self.id, ReservationKind::Slot, now, reservation_time))
    }

    /// The reserved bike leaves the dock, or the reserved slot receives a bike.
    pub fn fulfill_reservation(&mut self, res: &mut Reservation) -> Result<(), FleetError> {
        self.check_reservation(res)?;
        match res.kind {
            ReservationKind::Bike => {
                self.reserved_bikes = self
                    .reserved_bikes
                    .checked_sub(1)
                    .ok_or(FleetError::Underflow(self.id))?;
                self.available_slots += 1;
            }
            ReservationKind::Slot => {
                self.reserved_slots = self
                    .reserved_slots
                    .checked_sub(1)
                    .ok_or(FleetError::Underflow(self.id))?;
                self.available_bikes += 1;
            }
        }
        res.state = ReservationState::Fulfilled;
        Ok(())
    }

    /// The hold is released back to the walk-up pool.
    pub fn expire_reservation(&mut self, res: &mut Reservation) -> Result<(), FleetError> {
        self.check_reservation(res)?;
        match res.kind {
            ReservationKind::Bike => {
                self.reserved_bikes = self
                    .reserved_bikes
                    .checked_sub(1)
                    .ok_or(FleetError::Underflow(self.id))?;
                self.available_bikes += 1;
            }
            ReservationKind::Slot => {
                self.reserved_slots = self
                    .reserved_slots
                    .checked_sub(1)
                    .ok_or(FleetError::Underflow(self.id))?;
                self.available_slots += 1;
            }
        }
        res.state = ReservationState::Expired;
        Ok(())
    }

    fn check_reservation(&self, res: &Reservation) -> Result<(), FleetError> {
        if res.state != ReservationState::Active {
            return Err(FleetError::NotActive {
                id: res.id,
                state: res.state,
            });
        }
        if res.station != self.id {
            return Err(FleetError::WrongStation {
                reservation: res.id,
                expected: res.station,
                actual: self.id,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationKind {
    Bike,
    Slot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReservationState {
    Active,
    Fulfilled,
    Expired,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reservation {
    pub id: ReservationId,
    pub user: UserId,
    pub station: StationId,
    pub kind: ReservationKind,
    pub start_time: f64,
    pub expiry_time: f64,
    pub state: ReservationState,
}

impl Reservation {
    fn new(
        id: ReservationId,
        user: UserId,
        station: StationId,
        kind: ReservationKind,
        now: f64,
        reservation_time: f64,
    ) -> Self {
        Self {
            id,
            user,
            station,
            kind,
            start_time: now,
            expiry_time: now + reservation_time,
            state: ReservationState::Active,
        }
    }
}
