use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sim::{run_closed_loop, trajectory_csv, InProcess, LatencyStats, LoopContext, PlantRunner, RunOutcome};
use super::{io_err, run_seed, ExperimentConfig, HarnessError, ProfileSettings};
use crate::vehicle::{Course, DroneState, GateEvent};

/// One flight, shaped like a row of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    /// 1-based.
    pub run: usize,
    pub seed: u64,
    pub gates: usize,
    pub passes: usize,
    pub collisions: usize,
    pub misses: usize,
    pub passed: Vec<bool>,
    pub collided: Vec<bool>,
    /// Seconds from the first command to the pass of the final gate.
    pub lap_time: Option<f64>,
    /// Every gate passed in order.
    pub completed: bool,
    pub timed_out: bool,
    /// Trajectory CSV file name, relative to the output directory.
    pub trajectory: String,
    pub latency: LatencyStats,
    pub events: Vec<GateEvent>,
}

impl RunReport {
    pub fn from_outcome(run: usize, seed: u64, out: &RunOutcome, trajectory: String) -> Self {
        let p = &out.progress;
        let count = |v: &[bool]| v.iter().filter(|&&b| b).count();
        Self {
            run,
            seed,
            gates: p.passed.len(),
            passes: count(&p.passed),
            collisions: count(&p.collided),
            misses: count(&p.missed),
            passed: p.passed.clone(),
            collided: p.collided.clone(),
            lap_time: p.lap_time,
            completed: p.passed.iter().all(|&b| b),
            timed_out: out.timed_out,
            trajectory,
            latency: out.latency,
            events: p.events.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignTotals {
    pub runs: usize,
    pub gates: usize,
    pub passes: usize,
    pub collisions: usize,
    pub pass_rate: f64,
    pub collision_rate: f64,
    pub completed_runs: usize,
    /// Mean over completed runs.
    pub mean_lap_time: Option<f64>,
    pub tick_mean_ms: f64,
    pub tick_p95_ms: f64,
}

impl CampaignTotals {
    pub fn from_runs(runs: &[RunReport]) -> Self {
        let gates: usize = runs.iter().map(|r| r.gates).sum();
        let passes: usize = runs.iter().map(|r| r.passes).sum();
        let collisions: usize = runs.iter().map(|r| r.collisions).sum();
        let laps: Vec<f64> = runs.iter().filter(|r| r.completed).filter_map(|r| r.lap_time).collect();
        let ticks: usize = runs.iter().map(|r| r.latency.ticks).sum();
        let tick_mean_ms = if ticks == 0 {
            0.0
        } else {
            runs.iter().map(|r| r.latency.mean_ms * r.latency.ticks as f64).sum::<f64>() / ticks as f64
        };
        Self {
            runs: runs.len(),
            gates,
            passes,
            collisions,
            pass_rate: passes as f64 / gates.max(1) as f64,
            collision_rate: collisions as f64 / gates.max(1) as f64,
            completed_runs: laps.len(),
            mean_lap_time: (!laps.is_empty()).then(|| laps.iter().sum::<f64>() / laps.len() as f64),
            tick_mean_ms,
            tick_p95_ms: runs.iter().map(|r| r.latency.p95_ms).fold(0.0, f64::max),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignReport {
    pub strategy: u8,
    pub profile: String,
    pub seed: u64,
    pub runs: Vec<RunReport>,
    pub totals: CampaignTotals,
    pub thresholds_met: bool,
}

pub(crate) fn context<'a>(
    cfg: &'a ExperimentConfig,
    course: &'a Course,
    profile: &ProfileSettings,
    seed: u64,
) -> LoopContext<'a> {
    LoopContext {
        course,
        camera: &cfg.camera,
        control: &cfg.control,
        plant: &cfg.plant,
        strategy: cfg.strategy,
        noise: profile.noise_profile(seed),
        camera_hz: cfg.camera_hz,
        tracker_timeout: cfg.tracker_timeout,
        max_time: cfg.max_time,
    }
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<(), HarnessError> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// Seeded closed-loop flights, in process. Writes `run_NN.csv` per run and
/// `summary.json` into the output directory.
pub fn run_control_campaign(cfg: &ExperimentConfig) -> Result<CampaignReport, HarnessError> {
    cfg.validate()?;
    let profile = cfg.profile_settings()?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(io_err(&cfg.out_dir))?;

    let mut runs = Vec::with_capacity(cfg.runs);
    for run in 0..cfg.runs {
        let seed = run_seed(cfg.seed, run);
        let course = cfg.course_for_run(run)?;
        let start = DroneState::at_rest(course.start.pos.into(), course.start.yaw);
        let runner = PlantRunner::new(course.clone(), cfg.plant, profile.velocity_noise(), seed, cfg.drone_radius);
        let ctx = context(cfg, &course, &profile, seed);
        let out = run_closed_loop(&ctx, InProcess(runner), start)?;

        let name = format!("run_{:02}.csv", run + 1);
        write_file(&cfg.out_dir.join(&name), &trajectory_csv(&out.rows))?;
        runs.push(RunReport::from_outcome(run + 1, seed, &out, name));
    }

    let totals = CampaignTotals::from_runs(&runs);
    let th = &cfg.thresholds;
    let thresholds_met = totals.pass_rate >= th.min_pass_rate
        && totals.collision_rate <= th.max_collision_rate
        && totals.tick_mean_ms < th.max_tick_mean;
    let report = CampaignReport {
        strategy: cfg.strategy,
        profile: cfg.profile.clone(),
        seed: cfg.seed,
        runs,
        totals,
        thresholds_met,
    };
    let json = serde_json::to_string_pretty(&report).expect("report serializes");
    write_file(&cfg.out_dir.join("summary.json"), &json)?;
    Ok(report)
}
