use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use p2plbs_core::crypto::{render_table, CostProfiles};
use p2plbs_core::harness::{
    capacity_report, privacy_report, run_scenario, RunOutput, ScenarioConfig, SearchCostModel,
};

#[derive(Parser, Debug)]
#[command(
    name = "p2plbs",
    version,
    about = "Pseudonymous P2P POI-sharing simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write metrics.json and events.log.
    Run {
        config: PathBuf,
        /// Override the config seed. Repeat to run several seeds concurrently,
        /// each into its own `seed-<S>` subdirectory.
        #[arg(long)]
        seed: Vec<u64>,
        /// Output directory.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Analytic verification and response-generation budgets.
    Capacity {
        config: PathBuf,
        /// Emit JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Linkability summary of an event log, as JSON.
    Privacy { events: PathBuf },
    /// Print the calibrated crypto cost profiles.
    Bench,
}

fn write_run(out: &Path, run: &RunOutput) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let metrics = serde_json::to_string_pretty(&run.metrics)?;
    fs::write(out.join("metrics.json"), metrics + "\n")?;
    fs::write(out.join("events.log"), run.log.as_str())?;
    Ok(())
}

fn summarize(label: &str, run: &RunOutput) {
    let m = &run.metrics;
    println!(
        "{label}: needs={} local={} peer={} lbs={} exposure={:.3} rx_query_rate={:.3}/s violations={}",
        m.total_needs,
        m.locally_served,
        m.peer_served,
        m.lbs_served,
        m.lbs_exposure_ratio,
        m.mean_received_query_rate_per_s,
        m.invariant_violations.len()
    );
    for v in &m.invariant_violations {
        eprintln!("{label}: violation {v}");
    }
}

fn run(config: &Path, seeds: &[u64], out: &Path) -> Result<bool> {
    let base = ScenarioConfig::load(config)?;
    if seeds.len() <= 1 {
        let mut cfg = base;
        if let Some(s) = seeds.first() {
            cfg.seed = *s;
        }
        let run = run_scenario(cfg)?;
        write_run(out, &run)?;
        summarize(&out.display().to_string(), &run);
        return Ok(run.ok());
    }
    let results: Vec<Result<bool>> = thread::scope(|s| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|seed| {
                let mut cfg = base.clone();
                cfg.seed = *seed;
                let dir = out.join(format!("seed-{seed}"));
                s.spawn(move || -> Result<bool> {
                    let run = run_scenario(cfg)?;
                    write_run(&dir, &run)?;
                    summarize(&dir.display().to_string(), &run);
                    Ok(run.ok())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("run thread"))
            .collect()
    });
    let mut ok = true;
    for r in results {
        ok &= r?;
    }
    Ok(ok)
}

fn main() -> Result<ExitCode> {
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            if !run(&config, &seed, &out)? {
                return Ok(ExitCode::from(2));
            }
        }
        Command::Capacity { config, json } => {
            let cfg = ScenarioConfig::load(&config)?;
            let report = capacity_report(&cfg, &SearchCostModel::default())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&report)?);
            } else {
                print!("{report}");
            }
        }
        Command::Privacy { events } => {
            let log = fs::read_to_string(&events)
                .with_context(|| format!("reading {}", events.display()))?;
            println!("{}", serde_json::to_string_pretty(&privacy_report(&log))?);
        }
        Command::Bench => print!("{}", render_table(&CostProfiles::default())),
    }
    Ok(ExitCode::SUCCESS)
}
