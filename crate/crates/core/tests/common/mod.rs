#![allow(dead_code)]

use std::collections::HashMap;
use std::path::PathBuf;

use bikeshare_sim::config::load_json;
use bikeshare_sim::demand::{generate_users, EntryPointsConfig};
use bikeshare_sim::recommend::RecommenderConfig;
use bikeshare_sim::{GlobalConfig, Scenario, StationsConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

pub fn designed_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/designed")
}

pub struct Designed {
    pub global: GlobalConfig,
    pub stations: StationsConfig,
    pub entry_points: EntryPointsConfig,
}

pub fn designed() -> Designed {
    let dir = designed_dir();
    Designed {
        global: load_json(&dir.join("global.json")).unwrap(),
        stations: load_json(&dir.join("stations.json")).unwrap(),
        entry_points: load_json(&dir.join("entry_points.json")).unwrap(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Variant {
    pub label: &'static str,
    pub user_type: &'static str,
    pub recommender: Option<&'static str>,
}

pub const UNINFORMED: Variant = Variant {
    label: "Uninformed",
    user_type: "UNINFORMED",
    recommender: None,
};
pub const INFORMED: Variant = Variant {
    label: "Informed",
    user_type: "INFORMED",
    recommender: None,
};
pub const UNINFORMED_R: Variant = Variant {
    label: "Uninformed-R",
    user_type: "UNINFORMED_R",
    recommender: None,
};
pub const INFORMED_R: Variant = Variant {
    label: "Informed-R",
    user_type: "INFORMED_R",
    recommender: None,
};
pub const OBEDIENT_AVR: Variant = Variant {
    label: "Obedient-AvR",
    user_type: "OBEDIENT",
    recommender: Some("AVAILABLE_RESOURCES"),
};
pub const OBEDIENT_AVR_DIST: Variant = Variant {
    label: "Obedient-AvR/Dist",
    user_type: "OBEDIENT",
    recommender: Some("AVAILABLE_RESOURCES_RATIO"),
};
pub const OBEDIENT_AVR_R: Variant = Variant {
    label: "Obedient-AvR-R",
    user_type: "OBEDIENT_R",
    recommender: Some("AVAILABLE_RESOURCES"),
};

pub const VARIANTS: [Variant; 7] = [
    UNINFORMED,
    INFORMED,
    UNINFORMED_R,
    INFORMED_R,
    OBEDIENT_AVR,
    OBEDIENT_AVR_DIST,
    OBEDIENT_AVR_R,
];

/// The same appearances for every variant of a (rate, seed) point; only
/// the user type and the recommender change.
pub fn designed_scenario(d: &Designed, rate: f64, seed: u64, variant: Variant) -> Scenario {
    let mut global = d.global.clone();
    global.random_seed = Some(seed);
    global.recommendation_system_type = variant.recommender.map(RecommenderConfig::new);
    let mut users = generate_users(
        &d.entry_points.entry_points,
        &global,
        Some(rate),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )
    .unwrap();
    for u in &mut users.users {
        u.user_type = variant.user_type.to_string();
    }
    Scenario::new(global, d.stations.clone(), users)
}

/// Metrics recomputed straight from the raw JSON lines.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleMetrics {
    pub n: u64,
    pub abandoned: u64,
    pub ds: Option<f64>,
    pub he: Option<f64>,
    pub re: Option<f64>,
    pub aet_min: f64,
    pub ad: f64,
    pub tt_min: Option<f64>,
}

#[derive(Default)]
struct OracleUser {
    appear: f64,
    take: Option<f64>,
    give_back: Option<f64>,
    arrive: Option<f64>,
    failed_hires: u64,
    failed_returns: u64,
    returns: u64,
}

struct OracleStation {
    capacity: f64,
    bikes: f64,
    since: f64,
    empty: f64,
    deviation: f64,
}

impl OracleStation {
    fn advance(&mut self, t: f64) {
        let dt = t - self.since;
        if self.bikes == 0.0 {
            self.empty += dt;
        }
        self.deviation += dt * (self.bikes - self.capacity / 2.0).abs();
        self.since = t;
    }
}

/// Single pass over a history, sharing no code with the crate's analysis.
pub fn oracle(bytes: &[u8]) -> OracleMetrics {
    let text = std::str::from_utf8(bytes).unwrap();
    let mut stations: HashMap<u64, OracleStation> = HashMap::new();
    let mut order: Vec<u64> = Vec::new();
    let mut users: HashMap<u64, OracleUser> = HashMap::new();
    let mut last_time = 0.0;
    for line in text.lines() {
        let v: Value = serde_json::from_str(line).unwrap();
        if v["record"] == "header" {
            for s in v["stations"].as_array().unwrap() {
                let id = s["id"].as_u64().unwrap();
                order.push(id);
                stations.insert(
                    id,
                    OracleStation {
                        capacity: s["capacity"].as_f64().unwrap(),
                        bikes: s["initial_bikes"].as_f64().unwrap(),
                        since: 0.0,
                        empty: 0.0,
                        deviation: 0.0,
                    },
                );
            }
            continue;
        }
        let t = v["time"].as_f64().unwrap();
        last_time = t;
        if let (Some(id), Some(state)) = (v["station"].as_u64(), v.get("station_state")) {
            let s = stations.get_mut(&id).unwrap();
            s.advance(t);
            s.bikes = state["available_bikes"].as_f64().unwrap();
        }
        let uid = v["user"].as_u64().unwrap();
        let failed = v["success"] == Value::Bool(false);
        let u = users.entry(uid).or_default();
        match v["event"].as_str().unwrap() {
            "UserAppears" => u.appear = t,
            "UserArrivesAtStationToRent" if failed => u.failed_hires += 1,
            "UserArrivesAtStationToReturn" if failed => u.failed_returns += 1,
            "UserTakesBike" => u.take = Some(t),
            "UserReturnsBike" => {
                u.give_back = Some(t);
                u.returns += 1;
            }
            "UserArrivesAtDestination" => u.arrive = Some(t),
            _ => {}
        }
    }

    let horizon = last_time;
    let mut aet = 0.0;
    let mut ad = 0.0;
    for id in &order {
        let s = stations.get_mut(id).unwrap();
        if horizon > 0.0 {
            s.advance(horizon);
            ad += s.deviation / horizon;
        } else {
            ad += (s.bikes - s.capacity / 2.0).abs();
        }
        aet += s.empty;
    }
    let count = order.len().max(1) as f64;

    let n = users.len() as u64;
    let hired: Vec<&OracleUser> = users.values().filter(|u| u.take.is_some()).collect();
    let sh = hired.len() as u64;
    let fh_h: u64 = hired.iter().map(|u| u.failed_hires).sum();
    let sr: u64 = users.values().map(|u| u.returns).sum();
    let fr: u64 = users.values().map(|u| u.failed_returns).sum();
    let mut tts: Vec<f64> = users
        .values()
        .filter_map(|u| Some(u.arrive? - u.appear))
        .collect();
    tts.sort_by(f64::total_cmp);
    let div = |a: u64, b: u64| (b > 0).then(|| a as f64 / b as f64);
    OracleMetrics {
        n,
        abandoned: n - sh,
        ds: div(sh, n),
        he: div(sh, sh + fh_h),
        re: div(sr, sr + fr),
        aet_min: aet / count / 60.0,
        ad: ad / count,
        tt_min: (!tts.is_empty()).then(|| tts.iter().sum::<f64>() / tts.len() as f64 / 60.0),
    }
}

pub fn close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => (a - b).abs() <= tol,
        (None, None) => true,
        _ => false,
    }
}
