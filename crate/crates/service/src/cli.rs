//! Command-line front end.

use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use vfnav_core::study::{run_study, StudyConfig};

use crate::autopilot::{run_protocol, AutopilotConfig};
use crate::error::ServiceError;
use crate::scene::Scene;
use crate::server::{router, Registry};
use crate::session::{replay, Session};

#[derive(Debug, Parser)]
#[command(name = "vfnav", version, about = "Virtual fluoroscopy navigation engine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arms {
    Both,
    Guided,
    Blind,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the calibration, registration and replay invariant suite.
    Selftest {
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Monte-Carlo comparison of guided and blind screw insertion.
    Study {
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 2024)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Arms::Both)]
        arms: Arms,
        #[arg(long)]
        tracker_sigma_mm: Option<f64>,
        #[arg(long)]
        image_sigma_px: Option<f64>,
        #[arg(long)]
        blind_entry_sigma_mm: Option<f64>,
        #[arg(long)]
        blind_angle_sigma_deg: Option<f64>,
        /// Write the full report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        /// Write the summary table as CSV (printed to stdout otherwise).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Host the session API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        addr: SocketAddr,
        /// Directory for per-session JSONL logs.
        #[arg(long)]
        log_dir: Option<PathBuf>,
    },
    /// Replay a session log and verify it reproduces byte for byte.
    Replay { log: PathBuf },
    /// Run the full protocol on a scene with the scripted operator.
    Run {
        scene: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
    },
}

/// Exit code for an error raised anywhere below the CLI.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<ServiceError>() {
        return e.exit_code();
    }
    match err.downcast_ref::<vfnav_core::Error>() {
        Some(vfnav_core::Error::InvalidParameter(_)) => 1,
        _ => 2,
    }
}

pub fn study_config(command: &Command) -> Option<StudyConfig> {
    let Command::Study {
        trials,
        seed,
        arms,
        tracker_sigma_mm,
        image_sigma_px,
        blind_entry_sigma_mm,
        blind_angle_sigma_deg,
        ..
    } = command
    else {
        return None;
    };
    let mut config = StudyConfig {
        n_trials: *trials,
        seed: *seed,
        ..StudyConfig::default()
    };
    config.arms.guided = *arms != Arms::Blind;
    config.arms.blind = *arms != Arms::Guided;
    if let Some(v) = tracker_sigma_mm {
        config.guided.tracker_sigma_mm = *v;
    }
    if let Some(v) = image_sigma_px {
        config.guided.image_sigma_px = *v;
    }
    if let Some(v) = blind_entry_sigma_mm {
        config.blind.entry_sigma_mm = *v;
    }
    if let Some(v) = blind_angle_sigma_deg {
        config.blind.angle_sigma_deg = *v;
    }
    Some(config)
}

/// Runs a parsed command; returns the process exit code.
pub fn execute(cli: Cli) -> anyhow::Result<i32> {
    match &cli.command {
        Command::Selftest { seed } => {
            let results = crate::selftest::run(*seed);
            for r in &results {
                println!("{} {}: {}", if r.passed { "ok  " } else { "FAIL" }, r.name, r.detail);
            }
            Ok(if results.iter().all(|r| r.passed) { 0 } else { 2 })
        }
        Command::Study { json, csv, .. } => {
            let config = study_config(&cli.command).expect("study command");
            let report = run_study(&config)?;
            if let Some(path) = json {
                std::fs::write(path, report.to_json()).with_context(|| format!("writing {}", path.display()))?;
            }
            match csv {
                Some(path) => {
                    std::fs::write(path, report.summary_csv()).with_context(|| format!("writing {}", path.display()))?
                }
                None => print!("{}", report.summary_csv()),
            }
            eprintln!(
                "exposure {:.2} s vs {:.2} s (ratio {:.3}); guided below blind at 95%: {}",
                report.exposure.virtual_total_s,
                report.exposure.conventional_total_s,
                report.exposure.ratio,
                report
                    .guided_lower_at_95
                    .map_or("n/a".to_string(), |b| b.to_string())
            );
            Ok(0)
        }
        Command::Serve { addr, log_dir } => {
            if let Some(dir) = log_dir {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            }
            let app = router(Registry::new(log_dir.clone()));
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(addr).await?;
                eprintln!("listening on http://{}", listener.local_addr()?);
                axum::serve(listener, app).await
            })?;
            Ok(0)
        }
        Command::Replay { log } => {
            let text = std::fs::read_to_string(log).with_context(|| format!("reading {}", log.display()))?;
            let outcome = replay(&text)?;
            println!(
                "replayed {} events; final phase {}; identical",
                outcome.events,
                outcome.session.phase()
            );
            Ok(0)
        }
        Command::Run { scene, log } => {
            let scene = Scene::from_file(scene)?;
            let mut session = match log {
                Some(path) => Session::create_logged(scene, path)?,
                None => Session::create(scene)?,
            };
            let summary = run_protocol(&mut session, &AutopilotConfig::default())?;
            let report = session.grade().expect("protocol ends with a grade");
            eprintln!("steering converged: {} after {} iterations", summary.converged, summary.iterations);
            println!("{}", serde_json::to_string_pretty(report)?);
            Ok(0)
        }
    }
}
