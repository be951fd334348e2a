//! Runs with the controller and the plant on opposite ends of the UDP link.

use std::net::SocketAddr;
use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::campaign::{context, write_file, RunReport};
use super::sim::{
    run_closed_loop, trajectory_csv, ControllerSide, GateProgress, LatencyStats, PlantDriver, PlantRunner,
    RunOutcome, TickOutcome, TrajectoryRow,
};
use super::{io_err, run_seed, ExperimentConfig, HarnessError, PLANT_STREAM};
use crate::geometry::Vec3;
use crate::link::{
    velocity_to_rc, CommandMessage, LinkClient, LinkError, LinkServer, ServerConfig, SharedPlant,
    TelemetryMessage, TelemetryReceiver, DEFAULT_TIMEOUT,
};
use crate::perception::SimRng;
use crate::vehicle::{step_with_disturbance, DroneState, VelocityCommand, VelocityDrift};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiveReport {
    /// `loopback` (lockstep, deterministic) or `remote` (real time).
    pub mode: String,
    pub run: RunReport,
    /// Control ticks per wall-clock second.
    pub loop_rate_hz: f64,
    pub thresholds_met: bool,
}

enum SimRequest {
    Tick { substeps: usize, phase: u8 },
    Finish,
}

enum SimReply {
    Tick(TickOutcome),
    Finish(GateProgress),
}

/// Plant on its own thread, fed by the link server's mailbox. The
/// controller sends the command over UDP, then releases one camera period
/// of simulation.
struct LinkDriver {
    client: LinkClient,
    params: crate::vehicle::PlantParams,
    requests: mpsc::Sender<SimRequest>,
    replies: mpsc::Receiver<SimReply>,
    sim_thread: Option<std::thread::JoinHandle<()>>,
}

impl PlantDriver for LinkDriver {
    fn advance(&mut self, cmd: &VelocityCommand, substeps: usize, phase: u8) -> Result<TickOutcome, HarnessError> {
        self.client.send_ok(&velocity_to_rc(cmd, &self.params))?;
        self.requests
            .send(SimRequest::Tick { substeps, phase })
            .map_err(|_| HarnessError::Config("simulation thread stopped".into()))?;
        match self.replies.recv() {
            Ok(SimReply::Tick(out)) => Ok(out),
            _ => Err(HarnessError::Config("simulation thread stopped".into())),
        }
    }

    fn finish(mut self) -> Result<GateProgress, HarnessError> {
        let _ = self.client.send_ok(&CommandMessage::Land);
        self.requests
            .send(SimRequest::Finish)
            .map_err(|_| HarnessError::Config("simulation thread stopped".into()))?;
        let progress = match self.replies.recv() {
            Ok(SimReply::Finish(p)) => p,
            _ => return Err(HarnessError::Config("simulation thread stopped".into())),
        };
        if let Some(t) = self.sim_thread.take() {
            let _ = t.join();
        }
        Ok(progress)
    }
}

fn loopback() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 0))
}

fn finish_report(
    cfg: &ExperimentConfig,
    mode: &str,
    seed: u64,
    out: &RunOutcome,
) -> Result<LiveReport, HarnessError> {
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;
    let name = format!("live_{mode}.csv");
    write_file(&cfg.out_dir.join(&name), &trajectory_csv(&out.rows))?;
    let run = RunReport::from_outcome(1, seed, out, name);
    let loop_rate_hz = out.ticks as f64 / out.wall.as_secs_f64().max(1e-9);
    let thresholds_met = run.completed && loop_rate_hz >= cfg.thresholds.min_loop_rate;
    let report = LiveReport {
        mode: mode.into(),
        run,
        loop_rate_hz,
        thresholds_met,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.out_dir.join(format!("live_{mode}.json")), &json)?;
    Ok(report)
}

/// First run of the campaign described by `cfg`, with every command sent
/// through a link server on the loopback interface. Simulation advances in
/// lockstep with the controller, so the outcome matches the in-process run.
pub fn run_live(cfg: &ExperimentConfig) -> Result<LiveReport, HarnessError> {
    cfg.validate()?;
    let profile = cfg.profile_settings()?;
    let seed = run_seed(cfg.seed, 0);
    let course = cfg.course_for_run(0)?;
    let start = DroneState::at_rest(course.start.pos.into(), course.start.yaw);

    let telemetry = TelemetryReceiver::bind(loopback())?;
    let shared = SharedPlant::new(start, cfg.plant);
    let server = LinkServer::start(
        ServerConfig {
            bind: loopback(),
            telemetry_port: telemetry.port().map_err(LinkError::from)?,
            telemetry_hz: 10.0,
        },
        Arc::clone(&shared),
    )
    .map_err(LinkError::from)?;

    let (req_tx, req_rx) = mpsc::channel();
    let (rep_tx, rep_rx) = mpsc::channel();
    let mut runner = PlantRunner::new(course.clone(), cfg.plant, profile.velocity_noise(), seed, cfg.drone_radius);
    let sim_shared = Arc::clone(&shared);
    let sim_thread = std::thread::Builder::new()
        .name("sim".into())
        .spawn(move || {
            while let Ok(req) = req_rx.recv() {
                match req {
                    SimRequest::Tick { substeps, phase } => {
                        let out = runner.advance(&sim_shared.command(), substeps, phase);
                        sim_shared.publish(out.state);
                        if rep_tx.send(SimReply::Tick(out)).is_err() {
                            return;
                        }
                    }
                    SimRequest::Finish => {
                        let _ = rep_tx.send(SimReply::Finish(runner.into_progress()));
                        return;
                    }
                }
            }
        })
        .map_err(|e| HarnessError::Config(format!("cannot start simulation thread: {e}")))?;

    let client = LinkClient::connect(server.local_addr(), DEFAULT_TIMEOUT)?;
    client.send_ok(&CommandMessage::EnterSdk)?;
    client.send_ok(&CommandMessage::Takeoff)?;
    let driver = LinkDriver {
        client,
        params: cfg.plant,
        requests: req_tx,
        replies: rep_rx,
        sim_thread: Some(sim_thread),
    };
    let ctx = context(cfg, &course, &profile, seed);
    let out = run_closed_loop(&ctx, driver, start)?;
    server.shutdown();
    finish_report(cfg, "loopback", seed, &out)
}

fn state_from_telemetry(m: &TelemetryMessage) -> DroneState {
    DroneState {
        position: Vec3::new(m.x, m.y, m.z),
        yaw: m.yaw,
        velocity_world: Vec3::new(m.vx, m.vy, m.vz),
        yaw_rate: 0.0,
        t: m.t_ms as f64 / 1000.0,
    }
}

/// Real-time run against an external link server (see [`serve_realtime`]).
/// The vehicle state comes from telemetry, so the run is not deterministic.
pub fn run_live_remote(
    cfg: &ExperimentConfig,
    server: SocketAddr,
    telemetry_port: u16,
) -> Result<LiveReport, HarnessError> {
    cfg.validate()?;
    let profile = cfg.profile_settings()?;
    let seed = run_seed(cfg.seed, 0);
    let course = cfg.course_for_run(0)?;

    let bind = SocketAddr::new(
        if server.ip().is_loopback() { [127, 0, 0, 1].into() } else { [0, 0, 0, 0].into() },
        telemetry_port,
    );
    let telemetry = TelemetryReceiver::bind(bind)?;
    let client = LinkClient::connect(server, DEFAULT_TIMEOUT)?;
    client.send_ok(&CommandMessage::EnterSdk)?;
    client.send_ok(&CommandMessage::Takeoff)?;

    let ctx = context(cfg, &course, &profile, seed);
    let mut controller = ControllerSide::new(&ctx)?;
    let mut progress = GateProgress::new(course.gates.len());
    let frame = Duration::from_secs_f64(1.0 / cfg.camera_hz as f64);

    let first = telemetry.recv(DEFAULT_TIMEOUT)?;
    let mut state = state_from_telemetry(&first);
    let t_origin = state.t;
    let mut last_heard = Instant::now();
    let mut rows = Vec::new();
    let mut latencies = Vec::new();
    let mut timed_out = false;
    let started = Instant::now();
    let mut ticks = 0usize;
    let mut next_frame = Instant::now();
    while !progress.done() {
        if let Some(m) = telemetry.try_latest()? {
            let mut next = state_from_telemetry(&m);
            next.t -= t_origin;
            let gate_idx = progress.next;
            let event = progress.update(&state, &next, &course, cfg.drone_radius);
            state = next;
            last_heard = Instant::now();
            rows.push(TrajectoryRow {
                state,
                phase: controller.phase(),
                gate_idx,
                event,
            });
        } else if last_heard.elapsed() > DEFAULT_TIMEOUT {
            return Err(LinkError::Timeout(DEFAULT_TIMEOUT).into());
        }
        if state.t >= cfg.max_time {
            timed_out = true;
            break;
        }
        let t0 = Instant::now();
        let cmd = controller.decide(&state);
        client.send_ok(&velocity_to_rc(&cmd, &cfg.plant))?;
        latencies.push(t0.elapsed());
        ticks += 1;

        next_frame += frame;
        let now = Instant::now();
        if next_frame > now {
            std::thread::sleep(next_frame - now);
        }
    }
    let _ = client.send_ok(&CommandMessage::Land);
    let out = RunOutcome {
        rows,
        progress,
        latency: LatencyStats::from_samples(&latencies),
        timed_out,
        wall: started.elapsed(),
        ticks,
    };
    finish_report(cfg, "remote", seed, &out)
}

/// Serve the simulated vehicle over UDP in real time until `duration`
/// elapses (forever when `None`).
pub fn serve_realtime(
    cfg: &ExperimentConfig,
    bind: SocketAddr,
    telemetry_port: u16,
    duration: Option<Duration>,
) -> Result<(), HarnessError> {
    cfg.validate()?;
    let profile = cfg.profile_settings()?;
    let course = cfg.course_for_run(0)?;
    let mut state = DroneState::at_rest(course.start.pos.into(), course.start.yaw);
    let shared = SharedPlant::new(state, cfg.plant);
    let server = LinkServer::start(
        ServerConfig {
            bind,
            telemetry_port,
            telemetry_hz: 10.0,
        },
        Arc::clone(&shared),
    )
    .map_err(LinkError::from)?;

    let mut drift = VelocityDrift::new(profile.velocity_noise());
    let mut rng = SimRng::seed_from_u64(run_seed(cfg.seed, 0));
    rng.set_stream(PLANT_STREAM);
    let dt = Duration::from_secs_f64(cfg.plant.dt);
    let started = Instant::now();
    let mut next = started;
    while duration.is_none_or(|d| started.elapsed() < d) {
        let cmd = shared.command();
        let d = drift.next(&cmd, &cfg.plant, &mut rng);
        state = step_with_disturbance(&state, &cmd, &cfg.plant, d);
        shared.publish(state);
        next += dt;
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        }
    }
    server.shutdown();
    Ok(())
}
