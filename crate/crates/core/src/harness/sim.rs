//! The closed perception-control-plant loop shared by every run mode.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, OBSERVATION_STREAM, PLANT_STREAM};
use crate::camera::CameraModel;
use crate::controller::{ControlConfig, Strategy};
use crate::link::quantize;
use crate::perception::{observe_markers, select_nearest, solve_pnp, track, NoiseProfile, SimRng, TrackerState};
use crate::vehicle::{
    check_gate_events, gate_crossing, step_with_disturbance, Course, DroneState, GateEvent, GateEventKind,
    PlantParams, VelocityCommand, VelocityDrift, VelocityNoise,
};

pub const CSV_HEADER: &str = "t,x,y,z,yaw,vx,vy,vz,wz,phase,gate_idx,event";

/// A crossing of the target gate's plane this close to its centre (mm, per
/// axis) ends the attempt at that gate even without a pass.
const ATTEMPT_REGION: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub state: DroneState,
    pub phase: u8,
    /// Gate the drone is currently trying to pass.
    pub gate_idx: usize,
    /// `|`-separated `kind@gate` labels, empty for most rows.
    pub event: String,
}

impl TrajectoryRow {
    pub fn csv_line(&self) -> String {
        let s = &self.state;
        format!(
            "{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{:.3},{},{},{}",
            s.t,
            s.position.x,
            s.position.y,
            s.position.z,
            s.yaw,
            s.velocity_world.x,
            s.velocity_world.y,
            s.velocity_world.z,
            s.yaw_rate,
            self.phase,
            self.gate_idx,
            self.event
        )
    }
}

pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 80);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(out, "{}", r.csv_line());
    }
    out
}

/// Ordered gate bookkeeping for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateProgress {
    /// Index of the gate to attempt next.
    pub next: usize,
    pub passed: Vec<bool>,
    pub collided: Vec<bool>,
    pub missed: Vec<bool>,
    /// Time of the pass of the final gate.
    pub lap_time: Option<f64>,
    pub events: Vec<GateEvent>,
}

impl GateProgress {
    pub fn new(gates: usize) -> Self {
        Self {
            next: 0,
            passed: vec![false; gates],
            collided: vec![false; gates],
            missed: vec![false; gates],
            lap_time: None,
            events: Vec::new(),
        }
    }

    pub fn done(&self) -> bool {
        self.next >= self.passed.len()
    }

    /// Account for one plant step; returns the event label for the log.
    pub(crate) fn update(&mut self, prev: &DroneState, next: &DroneState, course: &Course, radius: f64) -> String {
        let mut labels = Vec::new();
        let mut target_passed = false;
        for ev in check_gate_events(prev, next, course, radius) {
            match ev.kind {
                GateEventKind::Pass => {
                    labels.push(format!("pass@{}", ev.gate));
                    if ev.gate == self.next {
                        target_passed = true;
                    }
                }
                GateEventKind::Collision => {
                    labels.push(format!("collision@{}", ev.gate));
                    self.collided[ev.gate] = true;
                }
            }
            self.events.push(ev);
        }
        if self.done() {
            return labels.join("|");
        }
        let target = self.next;
        if target_passed {
            self.passed[target] = true;
            if target + 1 == self.passed.len() {
                let t = self
                    .events
                    .iter()
                    .rev()
                    .find(|e| e.kind == GateEventKind::Pass && e.gate == target)
                    .map(|e| e.t)
                    .expect("pass event recorded");
                self.lap_time = Some(t);
            }
            self.next += 1;
        } else if let Some((p, _)) = gate_crossing(&prev.position, &next.position, &course.gates[target]) {
            if p.x.abs() <= ATTEMPT_REGION && p.y.abs() <= ATTEMPT_REGION {
                self.missed[target] = true;
                labels.push(format!("miss@{target}"));
                self.next += 1;
            }
        }
        labels.join("|")
    }
}

/// Owner of the simulated vehicle: integrates commands, injects the
/// velocity-tracking noise and keeps gate progress.
#[derive(Debug, Clone)]
pub struct PlantRunner {
    course: Course,
    params: PlantParams,
    drift: VelocityDrift,
    rng: SimRng,
    radius: f64,
    state: DroneState,
    progress: GateProgress,
}

impl PlantRunner {
    pub fn new(course: Course, params: PlantParams, noise: VelocityNoise, seed: u64, radius: f64) -> Self {
        let mut rng = SimRng::seed_from_u64(seed);
        rng.set_stream(PLANT_STREAM);
        let start = course.start;
        let state = DroneState::at_rest(start.pos.into(), start.yaw);
        let progress = GateProgress::new(course.gates.len());
        Self {
            course,
            params,
            drift: VelocityDrift::new(noise),
            rng,
            radius,
            state,
            progress,
        }
    }

    pub fn state(&self) -> DroneState {
        self.state
    }

    pub fn progress(&self) -> &GateProgress {
        &self.progress
    }

    pub fn into_progress(self) -> GateProgress {
        self.progress
    }

    /// Run up to `substeps` plant steps under `cmd`, stopping early once the
    /// last gate has been attempted.
    pub fn advance(&mut self, cmd: &VelocityCommand, substeps: usize, phase: u8) -> TickOutcome {
        let mut rows = Vec::with_capacity(substeps);
        for _ in 0..substeps {
            if self.progress.done() {
                break;
            }
            let d = self.drift.next(cmd, &self.params, &mut self.rng);
            let next = step_with_disturbance(&self.state, cmd, &self.params, d);
            let gate_idx = self.progress.next;
            let event = self.progress.update(&self.state, &next, &self.course, self.radius);
            self.state = next;
            rows.push(TrajectoryRow {
                state: next,
                phase,
                gate_idx,
                event,
            });
        }
        TickOutcome {
            state: self.state,
            rows,
            done: self.progress.done(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TickOutcome {
    pub state: DroneState,
    pub rows: Vec<TrajectoryRow>,
    pub done: bool,
}

/// Whatever carries commands to the plant: a direct call or the UDP link.
pub trait PlantDriver {
    fn advance(&mut self, cmd: &VelocityCommand, substeps: usize, phase: u8) -> Result<TickOutcome, HarnessError>;
    fn finish(self) -> Result<GateProgress, HarnessError>;
}

/// Direct in-process plant. Commands are quantized exactly as the link
/// would quantize them.
pub struct InProcess(pub PlantRunner);

impl PlantDriver for InProcess {
    fn advance(&mut self, cmd: &VelocityCommand, substeps: usize, phase: u8) -> Result<TickOutcome, HarnessError> {
        let q = quantize(cmd, &self.0.params);
        Ok(self.0.advance(&q, substeps, phase))
    }

    fn finish(self) -> Result<GateProgress, HarnessError> {
        Ok(self.0.into_progress())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct LatencyStats {
    pub ticks: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(samples: &[Duration]) -> Self {
        if samples.is_empty() {
            return Self::default();
        }
        let mut ms: Vec<f64> = samples.iter().map(|d| d.as_secs_f64() * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let idx = ((ms.len() as f64 * 0.95).ceil() as usize).clamp(1, ms.len()) - 1;
        Self {
            ticks: ms.len(),
            mean_ms: ms.iter().sum::<f64>() / ms.len() as f64,
            p95_ms: ms[idx],
            max_ms: ms[ms.len() - 1],
        }
    }
}

/// Everything the controller side of the loop needs.
#[derive(Debug, Clone)]
pub struct LoopContext<'a> {
    pub course: &'a Course,
    pub camera: &'a CameraModel,
    pub control: &'a ControlConfig,
    pub plant: &'a PlantParams,
    pub strategy: u8,
    pub noise: NoiseProfile,
    pub camera_hz: u32,
    pub tracker_timeout: f64,
    pub max_time: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub rows: Vec<TrajectoryRow>,
    pub progress: GateProgress,
    pub latency: LatencyStats,
    pub timed_out: bool,
    /// Wall-clock duration of the loop.
    pub wall: Duration,
    pub ticks: usize,
}

/// Controller half of the loop: observation, pose recovery, nearest-marker
/// selection, tracking and the strategy state machine.
pub struct ControllerSide<'a> {
    ctx: &'a LoopContext<'a>,
    markers: Vec<crate::perception::MarkerSpec>,
    rng: SimRng,
    strategy: Strategy,
    tracker: TrackerState,
}

impl<'a> ControllerSide<'a> {
    pub fn new(ctx: &'a LoopContext<'a>) -> Result<Self, HarnessError> {
        let mut rng = SimRng::seed_from_u64(ctx.noise.seed);
        rng.set_stream(OBSERVATION_STREAM);
        let strategy = Strategy::new(ctx.strategy)
            .ok_or_else(|| HarnessError::Config(format!("unknown strategy {}", ctx.strategy)))?;
        Ok(Self {
            ctx,
            markers: ctx.course.markers(),
            rng,
            strategy,
            tracker: TrackerState::default(),
        })
    }

    pub fn frame(&self) -> f64 {
        1.0 / self.ctx.camera_hz as f64
    }

    /// One camera frame taken at `state`; the command to hold until the next.
    pub fn decide(&mut self, state: &DroneState) -> VelocityCommand {
        let ctx = self.ctx;
        let observations = observe_markers(
            &self.markers,
            &state.camera_pose_world(),
            ctx.camera,
            &ctx.noise,
            &mut self.rng,
            state.t,
        );
        let estimates: Vec<_> = observations
            .iter()
            .filter_map(|o| {
                let side = self.markers.iter().find(|m| m.id == o.id)?.side;
                solve_pnp(o, side, ctx.camera).ok()
            })
            .collect();
        let frame = self.frame();
        let (tracker, pose) = track(self.tracker, select_nearest(&estimates), frame, ctx.tracker_timeout);
        self.tracker = tracker;
        self.strategy.step(pose.as_ref(), ctx.control, frame)
    }

    pub fn phase(&self) -> u8 {
        self.strategy.phase()
    }
}

/// Drive one run: observe, estimate, select, track, decide, then hand the
/// command to the plant for one camera period.
pub fn run_closed_loop<D: PlantDriver>(
    ctx: &LoopContext<'_>,
    mut driver: D,
    initial: DroneState,
) -> Result<RunOutcome, HarnessError> {
    let mut controller = ControllerSide::new(ctx)?;
    let hz = ctx.camera_hz as usize;
    let per_second = (1.0 / ctx.plant.dt).round() as usize;

    let mut state = initial;
    let mut rows = Vec::new();
    let mut latencies = Vec::new();
    let mut timed_out = false;
    let started = Instant::now();
    let mut k = 0usize;
    loop {
        if state.t >= ctx.max_time - 1e-9 {
            timed_out = true;
            break;
        }
        let t0 = Instant::now();
        let cmd = controller.decide(&state);
        latencies.push(t0.elapsed());

        let substeps = (k + 1) * per_second / hz - k * per_second / hz;
        let out = driver.advance(&cmd, substeps, controller.phase())?;
        rows.extend(out.rows);
        state = out.state;
        k += 1;
        if out.done {
            break;
        }
    }
    let wall = started.elapsed();
    let progress = driver.finish()?;
    Ok(RunOutcome {
        rows,
        progress,
        latency: LatencyStats::from_samples(&latencies),
        timed_out,
        wall,
        ticks: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Vec3;
    use crate::vehicle::{GateSpec, StartPose};

    fn straight_course() -> Course {
        Course {
            start: StartPose {
                pos: [0.0, 0.0, 1200.0],
                yaw: 0.0,
            },
            gates: vec![
                GateSpec::new(0, Vec3::new(1000.0, 0.0, 1200.0), 0.0, 500.0, 1, 150.0, None).unwrap(),
                GateSpec::new(1, Vec3::new(2000.0, 0.0, 1200.0), 0.0, 500.0, 2, 150.0, None).unwrap(),
            ],
        }
    }

    #[test]
    fn progress_through_two_gates() {
        let course = straight_course();
        let p = PlantParams::default();
        let mut runner = PlantRunner::new(course, p, VelocityNoise::none(), 0, 120.0);
        let cmd = VelocityCommand::new(500.0, 0.0, 0.0, 0.0, &p);
        let mut rows = Vec::new();
        while !runner.progress().done() && runner.state().t < 20.0 {
            rows.extend(runner.advance(&cmd, 7, 2).rows);
        }
        let pr = runner.progress();
        assert_eq!(pr.passed, vec![true, true]);
        assert_eq!(pr.collided, vec![false, false]);
        let lap = pr.lap_time.unwrap();
        assert!(lap > 4.0 && lap < 5.0, "{lap}");
        let labelled: Vec<_> = rows.iter().filter(|r| !r.event.is_empty()).map(|r| r.event.as_str()).collect();
        assert_eq!(labelled, vec!["pass@0", "pass@1"]);
        // rows stop at the final gate
        assert!((rows.last().unwrap().state.t - lap).abs() < 0.01);
    }

    #[test]
    fn wide_crossing_is_a_miss() {
        let mut course = straight_course();
        course.start.pos = [0.0, 600.0, 1200.0];
        let p = PlantParams::default();
        let mut runner = PlantRunner::new(course, p, VelocityNoise::none(), 0, 120.0);
        let cmd = VelocityCommand::new(500.0, 0.0, 0.0, 0.0, &p);
        while !runner.progress().done() && runner.state().t < 20.0 {
            runner.advance(&cmd, 7, 2);
        }
        let pr = runner.progress();
        assert_eq!(pr.missed, vec![true, true]);
        assert_eq!(pr.passed, vec![false, false]);
        assert!(pr.lap_time.is_none());
    }

    #[test]
    fn csv_formatting() {
        let mut s = DroneState::at_rest(Vec3::new(1.0, -2.5, 1000.0), 45.0);
        s.t = 0.005;
        let row = TrajectoryRow {
            state: s,
            phase: 3,
            gate_idx: 1,
            event: "pass@1".into(),
        };
        assert_eq!(row.csv_line(), "0.005,1.000,-2.500,1000.000,45.000,0.000,0.000,0.000,0.000,3,1,pass@1");
        assert!(trajectory_csv(&[row]).starts_with("t,x,y,z,yaw,vx,vy,vz,wz,phase,gate_idx,event\n"));
    }

    #[test]
    fn latency_percentiles() {
        let samples: Vec<_> = (1..=100).map(Duration::from_millis).collect();
        let s = LatencyStats::from_samples(&samples);
        assert!((s.mean_ms - 50.5).abs() < 1e-9);
        assert!((s.p95_ms - 95.0).abs() < 1e-9);
        assert_eq!(s.ticks, 100);
    }
}
