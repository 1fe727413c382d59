//! Performance indicators computed from a finished history.
//!
//! Hire/return ratios come from event counts; AET and AD are time-weighted
//! over `[0, horizon]`, where the horizon is the time of the last event.
//! Station inventories are piecewise constant between snapshots.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::EventKind;
use crate::fleet::StationId;
use crate::history::History;
use crate::UserId;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Raw event counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsCounters {
    pub n: u64,
    pub sh: u64,
    pub fh: u64,
    /// Failed hires of users who eventually got a bike.
    pub fh_h: u64,
    pub sr: u64,
    pub fr: u64,
    pub abandoned: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl MetricsCounters {
    /// Demand satisfaction, SH / N.
    pub fn ds(&self) -> Option<f64> {
        ratio(self.sh, self.n)
    }

    /// Hire efficiency, SH / (SH + FH_h).
    pub fn he(&self) -> Option<f64> {
        ratio(self.sh, self.sh + self.fh_h)
    }

    /// Return efficiency, SR / (SR + FR): returns over return attempts.
    pub fn re(&self) -> Option<f64> {
        ratio(self.sr, self.sr + self.fr)
    }

    /// Return efficiency with SH in the denominator, SR / (SH + FR).
    /// Identical to [`re`](Self::re) whenever every hirer returned.
    pub fn re_hires(&self) -> Option<f64> {
        ratio(self.sr, self.sh + self.fr)
    }

    fn add(&mut self, other: &Self) {
        self.n += other.n;
        self.sh += other.sh;
        self.fh += other.fh;
        self.fh_h += other.fh_h;
        self.sr += other.sr;
        self.fr += other.fr;
        self.abandoned += other.abandoned;
    }
}

/// Available-bike timeline of one station.
#[derive(Debug, Clone, PartialEq)]
pub struct StationSeries {
    pub id: StationId,
    pub capacity: u32,
    /// `(time, available_bikes)` change points, starting at t = 0.
    pub points: Vec<(f64, u32)>,
}

impl StationSeries {
    pub fn new(id: StationId, capacity: u32, initial_bikes: u32) -> Self {
        Self {
            id,
            capacity,
            points: vec![(0.0, initial_bikes)],
        }
    }

    pub fn push(&mut self, time: f64, available_bikes: u32) {
        match self.points.last_mut() {
            Some(last) if last.0 == time => last.1 = available_bikes,
            Some(last) if last.1 == available_bikes => {}
            _ => self.points.push((time, available_bikes)),
        }
    }

    fn integrate(&self, horizon: f64, f: impl Fn(u32) -> f64) -> f64 {
        let mut total = 0.0;
        for (i, &(t, v)) in self.points.iter().enumerate() {
            let end = self.points.get(i + 1).map_or(horizon, |p| p.0).min(horizon);
            if end > t {
                total += (end - t) * f(v);
            }
        }
        total
    }

    /// Seconds with no rentable bike over `[0, horizon]`.
    pub fn empty_time(&self, horizon: f64) -> f64 {
        self.integrate(horizon, |v| if v == 0 { 1.0 } else { 0.0 })
    }

    /// Time-weighted mean of |available - capacity / 2|. With a zero horizon
    /// this is the initial deviation.
    pub fn avg_deviation(&self, horizon: f64) -> f64 {
        let half = self.capacity as f64 / 2.0;
        let dev = |v: u32| (v as f64 - half).abs();
        if horizon <= 0.0 {
            return dev(self.points[0].1);
        }
        self.integrate(horizon, dev) / horizon
    }
}

/// Timestamps of one user's life cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct UserTimes {
    pub user: UserId,
    pub user_type: String,
    pub appeared: f64,
    pub took_bike: Option<f64>,
    pub returned_bike: Option<f64>,
    pub arrived: Option<f64>,
    pub failed_hires: u64,
}

impl UserTimes {
    /// `(T_os, T_rs, T_fd)` in seconds for users who completed a trip.
    pub fn breakdown(&self) -> Option<(f64, f64, f64)> {
        let took = self.took_bike?;
        let returned = self.returned_bike?;
        let arrived = self.arrived?;
        Some((took - self.appeared, returned - took, arrived - returned))
    }

    pub fn total_time(&self) -> Option<f64> {
        self.breakdown().map(|(a, b, c)| a + b + c)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationMetrics {
    pub id: StationId,
    pub capacity: u32,
    pub empty_time: f64,
    pub avg_deviation: f64,
}

/// Indicators for one group of users.
#[derive(Debug, Clone, PartialEq)]
pub struct TypeMetrics {
    pub user_type: String,
    pub counters: MetricsCounters,
    /// Mean total time in minutes over users who completed a trip.
    pub tt_min: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub horizon: f64,
    pub overall: TypeMetrics,
    /// One entry per user type, sorted by name.
    pub by_type: Vec<TypeMetrics>,
    /// Mean station empty time, minutes.
    pub aet_min: f64,
    /// Mean station deviation, bikes.
    pub ad: f64,
    pub stations: Vec<StationMetrics>,
    pub users: Vec<UserTimes>,
}

impl MetricsReport {
    pub fn counters(&self) -> &MetricsCounters {
        &self.overall.counters
    }
    pub fn ds(&self) -> Option<f64> {
        self.overall.counters.ds()
    }
    pub fn he(&self) -> Option<f64> {
        self.overall.counters.he()
    }
    pub fn re(&self) -> Option<f64> {
        self.overall.counters.re()
    }
    pub fn tt_min(&self) -> Option<f64> {
        self.overall.tt_min
    }
}

fn mean_tt_min<'a>(users: impl Iterator<Item = &'a UserTimes>) -> Option<f64> {
    let (sum, count) = users
        .filter_map(UserTimes::total_time)
        .fold((0.0, 0usize), |(s, c), t| (s + t, c + 1));
    (count > 0).then(|| sum / count as f64 / 60.0)
}

/// Recomputes every indicator from a stored history.
pub fn analyze(history: &History) -> MetricsReport {
    let horizon = history.horizon();
    let mut series: BTreeMap<StationId, StationSeries> = history
        .header
        .stations
        .iter()
        .map(|s| (s.id, StationSeries::new(s.id, s.capacity, s.initial_bikes)))
        .collect();
    let mut users: Vec<UserTimes> = Vec::new();
    let mut index: HashMap<UserId, usize> = HashMap::new();
    let mut per_user: Vec<MetricsCounters> = Vec::new();

    for r in &history.records {
        if let (Some(id), Some(state)) = (r.station, r.station_state) {
            if let Some(s) = series.get_mut(&id) {
                s.push(r.time, state.available_bikes);
            }
        }
        if r.event == EventKind::UserAppears {
            index.insert(r.user, users.len());
            users.push(UserTimes {
                user: r.user,
                user_type: r.user_type.clone().unwrap_or_default(),
                appeared: r.time,
                took_bike: None,
                returned_bike: None,
                arrived: None,
                failed_hires: 0,
            });
            per_user.push(MetricsCounters {
                n: 1,
                ..Default::default()
            });
            continue;
        }
        let Some(&i) = index.get(&r.user) else { continue };
        let (u, c) = (&mut users[i], &mut per_user[i]);
        match r.event {
            EventKind::UserArrivesAtStationToRent if r.success == Some(false) => {
                c.fh += 1;
                u.failed_hires += 1;
            }
            EventKind::UserArrivesAtStationToReturn if r.success == Some(false) => c.fr += 1,
            EventKind::UserTakesBike => {
                c.sh += 1;
                u.took_bike = Some(r.time);
            }
            EventKind::UserReturnsBike => {
                c.sr += 1;
                u.returned_bike = Some(r.time);
            }
            EventKind::UserArrivesAtDestination => u.arrived = Some(r.time),
            EventKind::UserLeavesSystem if u.took_bike.is_none() => c.abandoned += 1,
            _ => {}
        }
    }
    for (u, c) in users.iter().zip(per_user.iter_mut()) {
        if u.took_bike.is_some() {
            c.fh_h = c.fh;
        }
    }

    let mut groups: BTreeMap<&str, (MetricsCounters, Vec<&UserTimes>)> = BTreeMap::new();
    let mut all = MetricsCounters::default();
    for (u, c) in users.iter().zip(&per_user) {
        let g = groups.entry(u.user_type.as_str()).or_default();
        g.0.add(c);
        g.1.push(u);
        all.add(c);
    }
    let by_type = groups
        .into_iter()
        .map(|(name, (counters, members))| TypeMetrics {
            user_type: name.to_string(),
            counters,
            tt_min: mean_tt_min(members.into_iter()),
        })
        .collect();

    let stations: Vec<StationMetrics> = series
        .values()
        .map(|s| StationMetrics {
            id: s.id,
            capacity: s.capacity,
            empty_time: s.empty_time(horizon),
            avg_deviation: s.avg_deviation(horizon),
        })
        .collect();
    let count = stations.len().max(1) as f64;
    let aet_min = stations.iter().map(|s| s.empty_time).sum::<f64>() / count / 60.0;
    let ad = stations.iter().map(|s| s.avg_deviation).sum::<f64>() / count;

    MetricsReport {
        horizon,
        overall: TypeMetrics {
            user_type: "ALL".into(),
            counters: all,
            tt_min: mean_tt_min(users.iter()),
        },
        by_type,
        aet_min,
        ad,
        stations,
        users,
    }
}

/// One row of `metrics.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub user_type: String,
    pub n: u64,
    pub abandoned: u64,
    pub ds: Option<f64>,
    pub he: Option<f64>,
    pub re: Option<f64>,
    pub tt_min: Option<f64>,
    pub ad: f64,
    pub aet_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationRow {
    pub station_id: StationId,
    pub capacity: u32,
    pub empty_time_min: f64,
    pub avg_deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRow {
    pub user: UserId,
    pub user_type: String,
    pub appeared: f64,
    pub t_os_s: Option<f64>,
    pub t_rs_s: Option<f64>,
    pub t_fd_s: Option<f64>,
    pub tt_min: Option<f64>,
}

impl MetricsReport {
    /// Summary rows: one per user type, then an `ALL` row when several
    /// types are present. AD and AET are properties of the run and repeat
    /// on every row.
    pub fn rows(&self) -> Vec<MetricsRow> {
        let row = |t: &TypeMetrics| MetricsRow {
            user_type: t.user_type.clone(),
            n: t.counters.n,
            abandoned: t.counters.abandoned,
            ds: t.counters.ds(),
            he: t.counters.he(),
            re: t.counters.re(),
            tt_min: t.tt_min,
            ad: self.ad,
            aet_min: self.aet_min,
        };
        let mut rows: Vec<MetricsRow> = self.by_type.iter().map(row).collect();
        if self.by_type.len() > 1 {
            rows.push(row(&self.overall));
        }
        rows
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<(), MetricsError> {
    let io = |source| MetricsError::Io {
        path: path.to_path_buf(),
        source,
    };
    let csv_err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let file = File::create(path).map_err(io)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    // written by hand so that an empty table still has its header
    w.write_record(header).map_err(csv_err)?;
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush().map_err(io)
}

pub const METRICS_HEADER: [&str; 9] = ["user_type", "n", "abandoned", "ds", "he", "re", "tt_min", "ad", "aet_min"];

/// Writes `metrics.csv`, `stations.csv` and `users.csv` into `dir`.
pub fn write_metrics_csv(report: &MetricsReport, dir: &Path) -> Result<(), MetricsError> {
    std::fs::create_dir_all(dir).map_err(|source| MetricsError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    write_rows(&dir.join("metrics.csv"), &METRICS_HEADER, report.rows())?;
    write_rows(
        &dir.join("stations.csv"),
        &["station_id", "capacity", "empty_time_min", "avg_deviation"],
        report.stations.iter().map(|s| StationRow {
            station_id: s.id,
            capacity: s.capacity,
            empty_time_min: s.empty_time / 60.0,
            avg_deviation: s.avg_deviation,
        }),
    )?;
    write_rows(
        &dir.join("users.csv"),
        &["user", "user_type", "appeared", "t_os_s", "t_rs_s", "t_fd_s", "tt_min"],
        report.users.iter().map(|u| {
            let b = u.breakdown();
            UserRow {
                user: u.user,
                user_type: u.user_type.clone(),
                appeared: u.appeared,
                t_os_s: b.map(|b| b.0),
                t_rs_s: b.map(|b| b.1),
                t_fd_s: b.map(|b| b.2),
                tt_min: u.total_time().map(|t| t / 60.0),
            }
        }),
    )
}

/// Reads a `metrics.csv` back.
pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>, MetricsError> {
    let csv_err = |source| MetricsError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().collect::<Result<_, _>>().map_err(csv_err)
}
