use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gatepilot::harness::{
    run_control_campaign, run_live, run_live_remote, run_pose_accuracy, serve_realtime, ExperimentConfig, Scenario,
};
use gatepilot::link::{DEFAULT_COMMAND_PORT, DEFAULT_TELEMETRY_PORT};

#[derive(Parser)]
#[command(name = "gatepilot", version, about = "Marker-guided gate racing experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pose-estimation error statistics over random marker views.
    PoseAccuracy(Common),
    /// Closed-loop runs through a gate course.
    Campaign(Common),
    /// One run with commands sent over the UDP link.
    Live {
        #[command(flatten)]
        common: Common,
        /// Link server to fly against; a loopback server is started when absent.
        #[arg(long)]
        connect: Option<SocketAddr>,
        /// Local port for telemetry from `--connect`.
        #[arg(long, default_value_t = DEFAULT_TELEMETRY_PORT)]
        telemetry_port: u16,
    },
    /// Serve a simulated vehicle over UDP in real time.
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = SocketAddr::from(([127, 0, 0, 1], DEFAULT_COMMAND_PORT)))]
        bind: SocketAddr,
        #[arg(long, default_value_t = DEFAULT_TELEMETRY_PORT)]
        telemetry_port: u16,
        /// Seconds to serve; runs until killed when absent.
        #[arg(long)]
        duration: Option<f64>,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    course: Option<PathBuf>,
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=2))]
    strategy: Option<u8>,
    /// natural, artificial, noiseless or custom
    #[arg(long)]
    profile: Option<String>,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self, scenario: Scenario) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::from_file(path)
                .with_context(|| format!("loading config {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        cfg.scenario = scenario;
        if let Some(c) = &self.course {
            cfg.course = Some(c.clone());
        }
        if let Some(s) = self.strategy {
            cfg.strategy = s;
        }
        if let Some(p) = &self.profile {
            cfg.profile = p.clone();
        }
        if let Some(r) = self.runs {
            cfg.runs = r;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = o.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn verdict(met: bool) -> ExitCode {
    if met {
        ExitCode::SUCCESS
    } else {
        eprintln!("thresholds not met");
        ExitCode::from(1)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::PoseAccuracy(common) => {
            let cfg = common.load(Scenario::PoseAccuracy)?;
            let r = run_pose_accuracy(&cfg)?;
            println!(
                "{} samples, sigma {} px: translation MAE [{:.2}, {:.2}, {:.2}] mm, euler MAE [{:.2}, {:.2}, {:.2}] deg, {} failures",
                r.samples,
                r.pixel_sigma,
                r.translation_mae[0],
                r.translation_mae[1],
                r.translation_mae[2],
                r.euler_mae[0],
                r.euler_mae[1],
                r.euler_mae[2],
                r.failures
            );
            Ok(verdict(r.thresholds_met))
        }
        Command::Campaign(common) => {
            let cfg = common.load(Scenario::ControlRun)?;
            let r = run_control_campaign(&cfg)?;
            for run in &r.runs {
                println!(
                    "run {:2}: {}/{} passes, {} collisions, {} misses, lap {}",
                    run.run,
                    run.passes,
                    run.gates,
                    run.collisions,
                    run.misses,
                    run.lap_time.map_or("-".into(), |t| format!("{t:.2} s"))
                );
            }
            let t = &r.totals;
            println!(
                "strategy {} / {}: pass rate {:.3}, collision rate {:.3}, mean lap {}, tick {:.3} ms mean",
                r.strategy,
                r.profile,
                t.pass_rate,
                t.collision_rate,
                t.mean_lap_time.map_or("-".into(), |t| format!("{t:.2} s")),
                t.tick_mean_ms
            );
            Ok(verdict(r.thresholds_met))
        }
        Command::Live {
            common,
            connect,
            telemetry_port,
        } => {
            let cfg = common.load(Scenario::LiveLink)?;
            let r = match connect {
                Some(addr) => run_live_remote(&cfg, addr, telemetry_port)
                    .with_context(|| format!("flying against link server {addr}"))?,
                None => run_live(&cfg)?,
            };
            println!(
                "{}: {}/{} passes, {} collisions, lap {}, {:.1} Hz loop, tick {:.3} ms mean / {:.3} ms p95",
                r.mode,
                r.run.passes,
                r.run.gates,
                r.run.collisions,
                r.run.lap_time.map_or("-".into(), |t| format!("{t:.2} s")),
                r.loop_rate_hz,
                r.run.latency.mean_ms,
                r.run.latency.p95_ms
            );
            Ok(verdict(r.thresholds_met))
        }
        Command::Serve {
            common,
            bind,
            telemetry_port,
            duration,
        } => {
            let cfg = common.load(Scenario::LiveLink)?;
            let duration = duration.map(Duration::from_secs_f64);
            eprintln!("serving on {bind}, telemetry to port {telemetry_port}");
            serve_realtime(&cfg, bind, telemetry_port, duration)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
