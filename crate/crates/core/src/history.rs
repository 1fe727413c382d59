//! JSON-lines simulation history.
//!
//! The first line is a header describing the run (seed, config digests and
//! the initial station inventory); every following line is one dispatched
//! event. Lines are tagged with `"record": "header"` or `"record": "event"`.

use std::io::{BufRead, BufWriter, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EventKind;
use crate::fleet::{ReservationId, StationId, StationSnapshot};
use crate::geo::GeoPoint;
use crate::UserId;

#[derive(Debug, Error)]
pub enum HistoryError {
    #[error("history io: {0}")]
    Io(#[from] std::io::Error),
    #[error("history line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("history serialization: {0}")]
    Serialize(#[source] serde_json::Error),
    #[error("record (t={time}, seq={seq}) written after (t={last_time}, seq={last_seq})")]
    OutOfOrder {
        time: f64,
        seq: u64,
        last_time: f64,
        last_seq: u64,
    },
    #[error("history has no header line")]
    MissingHeader,
    #[error("history line {0}: unexpected second header")]
    DuplicateHeader(usize),
    #[error("header already written")]
    HeaderWritten,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationInfo {
    pub id: StationId,
    pub position: GeoPoint,
    pub capacity: u32,
    pub initial_bikes: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDigests {
    pub global: String,
    pub stations: String,
    pub users: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryHeader {
    pub version: String,
    pub seed: u64,
    pub reservation_time: f64,
    pub total_simulation_time: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recommender: Option<String>,
    pub digests: ConfigDigests,
    pub stations: Vec<StationInfo>,
}

/// Outcome of a decision hook, as recorded on decision events.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "action", rename_all = "snake_case")]
pub enum DecisionRecord {
    GoToStation { station: StationId },
    ReserveBike { station: StationId },
    LeaveSystem,
    GoToReturnStation { station: StationId },
    ReserveSlot { station: StationId },
    RideTo { position: GeoPoint },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub time: f64,
    pub seq: u64,
    pub event: EventKind,
    pub user: UserId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station: Option<StationId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reservation: Option<ReservationId>,
    /// Inventory of `station` after the event was applied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub station_state: Option<StationSnapshot>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decision: Option<DecisionRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_type: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<GeoPoint>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub destination: Option<GeoPoint>,
    /// Expiry of a reservation created by this event.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expiry: Option<f64>,
}

impl HistoryRecord {
    pub fn new(time: f64, seq: u64, event: EventKind, user: UserId) -> Self {
        Self {
            time,
            seq,
            event,
            user,
            station: None,
            reservation: None,
            station_state: None,
            success: None,
            decision: None,
            user_type: None,
            position: None,
            destination: None,
            expiry: None,
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum Line {
    Header(HistoryHeader),
    Event(HistoryRecord),
}

#[derive(Serialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum LineRef<'a> {
    Header(&'a HistoryHeader),
    Event(&'a HistoryRecord),
}

pub struct HistoryWriter<W: Write> {
    out: BufWriter<W>,
    last: Option<(f64, u64)>,
    header_written: bool,
    records: u64,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(sink: W) -> Self {
        Self {
            out: BufWriter::new(sink),
            last: None,
            header_written: false,
            records: 0,
        }
    }

    pub fn write_header(&mut self, header: &HistoryHeader) -> Result<(), HistoryError> {
        if self.header_written {
            return Err(HistoryError::HeaderWritten);
        }
        self.write_line(&LineRef::Header(header))?;
        self.header_written = true;
        Ok(())
    }

    /// Appends one record; records must arrive in `(time, seq)` order.
    pub fn append(&mut self, record: &HistoryRecord) -> Result<(), HistoryError> {
        if let Some((last_time, last_seq)) = self.last {
            if record.time < last_time || (record.time == last_time && record.seq <= last_seq) {
                return Err(HistoryError::OutOfOrder {
                    time: record.time,
                    seq: record.seq,
                    last_time,
                    last_seq,
                });
            }
        }
        self.write_line(&LineRef::Event(record))?;
        self.last = Some((record.time, record.seq));
        self.records += 1;
        Ok(())
    }

    pub fn records_written(&self) -> u64 {
        self.records
    }

    fn write_line(&mut self, line: &LineRef<'_>) -> Result<(), HistoryError> {
        serde_json::to_writer(&mut self.out, line).map_err(HistoryError::Serialize)?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    /// Flushes and returns the underlying sink.
    pub fn finish(self) -> Result<W, HistoryError> {
        self.out.into_inner().map_err(|e| HistoryError::Io(e.into_error()))
    }
}

/// A fully loaded history.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    pub header: HistoryHeader,
    pub records: Vec<HistoryRecord>,
}

impl History {
    pub fn read<R: BufRead>(reader: R) -> Result<Self, HistoryError> {
        let mut header = None;
        let mut records = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line =
                serde_json::from_str(&line).map_err(|source| HistoryError::Parse { line: i + 1, source })?;
            match parsed {
                Line::Header(h) => {
                    if header.is_some() || !records.is_empty() {
                        return Err(HistoryError::DuplicateHeader(i + 1));
                    }
                    header = Some(h);
                }
                Line::Event(r) => records.push(r),
            }
        }
        Ok(Self {
            header: header.ok_or(HistoryError::MissingHeader)?,
            records,
        })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, HistoryError> {
        Self::read(bytes)
    }

    pub fn write<W: Write>(&self, sink: W) -> Result<W, HistoryError> {
        let mut w = HistoryWriter::new(sink);
        w.write_header(&self.header)?;
        for r in &self.records {
            w.append(r)?;
        }
        w.finish()
    }

    /// Time of the last event, or 0 for an empty run.
    pub fn horizon(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.time)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header() -> HistoryHeader {
        HistoryHeader {
            version: "test".into(),
            seed: 7,
            reservation_time: 1200.0,
            total_simulation_time: 3600.0,
            recommender: None,
            digests: ConfigDigests {
                global: "g".into(),
                stations: "s".into(),
                users: "u".into(),
            },
            stations: vec![StationInfo {
                id: StationId(1),
                position: GeoPoint::new(40.0, -3.0),
                capacity: 20,
                initial_bikes: 10,
            }],
        }
    }

    fn record(time: f64, seq: u64) -> HistoryRecord {
        let mut r = HistoryRecord::new(time, seq, EventKind::UserArrivesAtStationToRent, UserId(3));
        r.station = Some(StationId(1));
        r.success = Some(true);
        r.station_state = Some(StationSnapshot {
            available_bikes: 9,
            reserved_bikes: 0,
            available_slots: 11,
            reserved_slots: 0,
        });
        r
    }

    #[test]
    fn single_record_round_trip() {
        let mut w = HistoryWriter::new(Vec::new());
        w.write_header(&header()).unwrap();
        w.append(&record(12.5, 0)).unwrap();
        let bytes = w.finish().unwrap();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        let h = History::from_bytes(&bytes).unwrap();
        assert_eq!(h.header, header());
        assert_eq!(h.records, vec![record(12.5, 0)]);
        assert_eq!(h.write(Vec::new()).unwrap(), bytes);
    }

    #[test]
    fn same_time_ascending_seq_is_accepted() {
        let mut w = HistoryWriter::new(Vec::new());
        w.write_header(&header()).unwrap();
        w.append(&record(5.0, 1)).unwrap();
        w.append(&record(5.0, 2)).unwrap();
        assert!(matches!(w.append(&record(5.0, 2)), Err(HistoryError::OutOfOrder { .. })));
        assert!(matches!(w.append(&record(4.0, 9)), Err(HistoryError::OutOfOrder { .. })));
        w.append(&record(6.0, 0)).unwrap();
        let h = History::from_bytes(&w.finish().unwrap()).unwrap();
        let seqs: Vec<u64> = h.records.iter().map(|r| r.seq).collect();
        assert_eq!(seqs, vec![1, 2, 0]);
    }

    #[test]
    fn header_is_required_and_unique() {
        assert!(matches!(History::from_bytes(b""), Err(HistoryError::MissingHeader)));
        let mut w = HistoryWriter::new(Vec::new());
        w.write_header(&header()).unwrap();
        assert!(matches!(w.write_header(&header()), Err(HistoryError::HeaderWritten)));
        let line = serde_json::to_string(&LineRef::Header(&header())).unwrap();
        let doubled = format!("{line}\n{line}\n");
        assert!(matches!(History::from_bytes(doubled.as_bytes()), Err(HistoryError::DuplicateHeader(2))));
    }

    #[test]
    fn key_names_are_stable() {
        let mut r = record(1.0, 0);
        r.decision = Some(DecisionRecord::GoToStation { station: StationId(4) });
        let v: serde_json::Value = serde_json::to_value(LineRef::Event(&r)).unwrap();
        assert_eq!(v["record"], "event");
        assert_eq!(v["event"], "UserArrivesAtStationToRent");
        assert_eq!(v["station_state"]["available_bikes"], 9);
        assert_eq!(v["decision"]["action"], "go_to_station");
        assert_eq!(v["decision"]["station"], 4);
        assert!(v.get("expiry").is_none());
    }
}
