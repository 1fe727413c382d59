use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use bikeshare_sim::audit::audit;
use bikeshare_sim::config::{load_json, write_json, ConfigError, Scenario};
use bikeshare_sim::demand::{
    generate_users, read_trip_log, users_from_trip_log, EntryPointsConfig, UserTemplate,
};
use bikeshare_sim::metrics::{analyze, write_metrics_csv, MetricsRow, METRICS_HEADER};
use bikeshare_sim::recommend::RecommenderRegistry;
use bikeshare_sim::users::UserTypeRegistry;
use bikeshare_sim::{simulate, GlobalConfig, History, StationsConfig};

/// Per-seed metric rows of one rate.
type RateRuns = Vec<(u64, Vec<MetricsRow>)>;

const DEFAULT_RATES: [f64; 7] = [10.0, 20.0, 40.0, 60.0, 80.0, 120.0, 150.0];

#[derive(Parser)]
#[command(name = "bikeshare-sim", version, about = "Event-driven bike sharing simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one simulation and write its history and metrics.
    Simulate(SimulateArgs),
    /// Write a users file from entry points or a trip log.
    GenUsers(GenUsersArgs),
    /// Recompute metrics from a stored history.
    Analyze(AnalyzeArgs),
    /// Run a demand-rate sweep over several seeds.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    global: PathBuf,
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    users: PathBuf,
    /// Output directory; defaults to the global config's outputPath.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").required(true).args(["entry_points", "trip_log"]))]
struct GenUsersArgs {
    #[arg(long)]
    entry_points: Option<PathBuf>,
    #[arg(long, requires = "stations", requires = "user_type")]
    trip_log: Option<PathBuf>,
    #[arg(long)]
    stations: Option<PathBuf>,
    #[arg(long)]
    global: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Replaces every entry point's rate.
    #[arg(long)]
    rate_per_hour: Option<f64>,
    #[arg(long)]
    user_type: Option<String>,
    #[arg(long)]
    min_rental_attempts: Option<u32>,
    #[arg(long)]
    max_distance_to_rent_bike: Option<f64>,
    /// Defaults to the global randomSeed, then to entropy.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    history: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also run the consistency audit; violations make the command fail.
    #[arg(long)]
    check: bool,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    global: PathBuf,
    #[arg(long)]
    stations: PathBuf,
    #[arg(long)]
    entry_points: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_RATES)]
    rates: Vec<f64>,
    /// Seeds 0..N are run for every rate.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    #[arg(long)]
    out: PathBuf,
    /// Keep each run's history file.
    #[arg(long)]
    keep_histories: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => run_simulate(a),
        Command::GenUsers(a) => run_gen_users(a),
        Command::Analyze(a) => run_analyze(a),
        Command::Sweep(a) => run_sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(ConfigError::Invalid(violations)) = e.downcast_ref::<ConfigError>() {
                eprintln!("error: {} configuration problem(s)", violations.len());
                for v in violations {
                    eprintln!("  {v}");
                }
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::FAILURE
        }
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

/// Simulates into `dir/history.jsonl`, then derives the CSVs from the file.
fn simulate_to_dir(scenario: &Scenario, dir: &Path) -> Result<bikeshare_sim::RunSummary> {
    create_dir(dir)?;
    let path = dir.join("history.jsonl");
    let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    let (summary, _) = simulate(scenario, file)?;
    let history = History::read(BufReader::new(File::open(&path)?))?;
    write_metrics_csv(&analyze(&history), dir)?;
    Ok(summary)
}

fn run_simulate(a: SimulateArgs) -> Result<()> {
    let scenario = Scenario::load_and_validate(&a.global, &a.stations, &a.users)?;
    let out = a.out.unwrap_or_else(|| scenario.global.output_path.clone());
    let s = simulate_to_dir(&scenario, &out)?;
    let c = &s.counters;
    println!(
        "seed={} events={} horizon={} N={} SH={} FH={} SR={} FR={} abandoned={}",
        s.seed, s.events, s.horizon, c.n, c.sh, c.fh, c.sr, c.fr, c.abandoned
    );
    if s.rejected_users > 0 {
        println!("rejected users (appear after the simulation time): {}", s.rejected_users);
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn run_gen_users(a: GenUsersArgs) -> Result<()> {
    let global: GlobalConfig = load_json(&a.global)?;
    let seed = a.seed.or(global.random_seed).unwrap_or_else(rand::random);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let template = UserTemplate {
        min_rental_attempts: a.min_rental_attempts,
        max_distance_to_rent_bike: a.max_distance_to_rent_bike,
        ..Default::default()
    };
    let registry = UserTypeRegistry::default();
    let users = if let Some(path) = &a.entry_points {
        let mut eps: EntryPointsConfig = load_json(path)?;
        for ep in &mut eps.entry_points {
            if let Some(t) = &a.user_type {
                ep.user_type = t.clone();
            }
            ep.user_parameters.min_rental_attempts = a.min_rental_attempts.or(ep.user_parameters.min_rental_attempts);
            ep.user_parameters.max_distance_to_rent_bike =
                a.max_distance_to_rent_bike.or(ep.user_parameters.max_distance_to_rent_bike);
        }
        generate_users(&eps.entry_points, &global, a.rate_per_hour, &mut rng)?
    } else {
        let (Some(log), Some(stations_path), Some(user_type)) = (&a.trip_log, &a.stations, &a.user_type) else {
            bail!("--trip-log needs --stations and --user-type");
        };
        if !registry.contains(user_type) {
            bail!("unknown user type '{user_type}'; known: {}", registry.names().join(", "));
        }
        let stations: StationsConfig = load_json(stations_path)?;
        let file = File::open(log).with_context(|| format!("cannot open {}", log.display()))?;
        let trips = read_trip_log(BufReader::new(file)).with_context(|| log.display().to_string())?;
        let out = users_from_trip_log(&trips, &stations, user_type, &template, &mut rng);
        if out.skipped > 0 {
            eprintln!("skipped {} trip(s) with unknown stations", out.skipped);
        }
        out.users
    };
    write_json(&users, &a.out)?;
    println!("wrote {} users to {} (seed {seed})", users.users.len(), a.out.display());
    Ok(())
}

fn run_analyze(a: AnalyzeArgs) -> Result<()> {
    let file = File::open(&a.history).with_context(|| format!("cannot open {}", a.history.display()))?;
    let history = History::read(BufReader::new(file)).with_context(|| a.history.display().to_string())?;
    let report = analyze(&history);
    write_metrics_csv(&report, &a.out)?;
    println!("wrote {}", a.out.display());
    if a.check {
        let violations = audit(&history);
        for v in &violations {
            eprintln!("  {v}");
        }
        if !violations.is_empty() {
            bail!("{} audit violation(s)", violations.len());
        }
        println!("audit: ok");
    }
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let global: GlobalConfig = load_json(&a.global)?;
    let stations: StationsConfig = load_json(&a.stations)?;
    let eps: EntryPointsConfig = load_json(&a.entry_points)?;
    create_dir(&a.out)?;
    let types = UserTypeRegistry::default();
    let recommenders = RecommenderRegistry::default();

    let jobs: Vec<(f64, u64)> = a
        .rates
        .iter()
        .flat_map(|&r| (0..a.seeds).map(move |s| (r, s)))
        .collect();
    let results: Vec<Result<(f64, u64, Vec<MetricsRow>)>> = jobs
        .par_iter()
        .map(|&(rate, seed)| {
            let mut g = global.clone();
            g.random_seed = Some(seed);
            let users = generate_users(&eps.entry_points, &g, Some(rate), &mut ChaCha8Rng::seed_from_u64(seed))?;
            let scenario = Scenario::new(g, stations.clone(), users);
            scenario.validate(&types, &recommenders)?;
            let report = if a.keep_histories {
                let dir = a.out.join(format!("rate_{rate}")).join(format!("seed_{seed}"));
                simulate_to_dir(&scenario, &dir)?;
                let file = File::open(dir.join("history.jsonl"))?;
                analyze(&History::read(BufReader::new(file))?)
            } else {
                let (_, bytes) = simulate(&scenario, Vec::new())?;
                analyze(&History::from_bytes(&bytes)?)
            };
            Ok((rate, seed, report.rows()))
        })
        .collect();

    let mut by_rate: Vec<(f64, RateRuns)> = a.rates.iter().map(|&r| (r, Vec::new())).collect();
    for res in results {
        let (rate, seed, rows) = res?;
        if let Some(slot) = by_rate.iter_mut().find(|(r, _)| *r == rate) {
            slot.1.push((seed, rows));
        }
    }
    for (rate, runs) in by_rate {
        let path = a.out.join(format!("metrics_rate_{rate}.csv"));
        let file = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
        let mut w = csv::Writer::from_writer(BufWriter::new(file));
        let mut header = vec!["seed"];
        header.extend(METRICS_HEADER);
        w.write_record(&header)?;
        for (seed, rows) in runs {
            for r in rows {
                let mut rec = vec![seed.to_string()];
                let fields = [
                    r.user_type,
                    r.n.to_string(),
                    r.abandoned.to_string(),
                    opt(r.ds),
                    opt(r.he),
                    opt(r.re),
                    opt(r.tt_min),
                    r.ad.to_string(),
                    r.aet_min.to_string(),
                ];
                rec.extend(fields);
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
