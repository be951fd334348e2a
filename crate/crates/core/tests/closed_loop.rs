//! Controller behaviour with the simulated plant and the noiseless
//! observation pipeline in the loop.

use gatepilot::camera::CameraModel;
use gatepilot::controller::{
    standoff_command, step_strategy_one, ControlConfig, GateView, S1Phase, StrategyOneState,
};
use gatepilot::geometry::Vec3;
use gatepilot::perception::{observe_markers, solve_pnp, track, NoiseProfile, PoseEstimate, SimRng, TrackerState};
use gatepilot::vehicle::{step, DroneState, GateSpec, PlantParams};
use rand::{Rng, SeedableRng};

const CAMERA_HZ: usize = 30;

struct Loop {
    gate: GateSpec,
    cam: CameraModel,
    plant: PlantParams,
    noise: NoiseProfile,
    rng: SimRng,
    tracker: TrackerState,
    drone: DroneState,
    tick: usize,
}

impl Loop {
    fn new(drone: DroneState) -> Self {
        Self {
            gate: GateSpec::new(0, Vec3::new(0.0, 0.0, 1200.0), 0.0, 500.0, 1, 150.0, None).unwrap(),
            cam: CameraModel::default_synthetic(),
            plant: PlantParams::default(),
            noise: NoiseProfile::noiseless(0),
            rng: SimRng::seed_from_u64(0),
            tracker: TrackerState::default(),
            drone,
            tick: 0,
        }
    }

    fn perceive(&mut self) -> Option<PoseEstimate> {
        let obs = observe_markers(
            &[self.gate.marker],
            &self.drone.camera_pose_world(),
            &self.cam,
            &self.noise,
            &mut self.rng,
            self.drone.t,
        );
        let det = obs.first().and_then(|o| solve_pnp(o, 150.0, &self.cam).ok());
        let (tracker, pose) = track(self.tracker, det, 1.0 / CAMERA_HZ as f64, 0.3);
        self.tracker = tracker;
        pose
    }

    fn advance(&mut self, cmd: &gatepilot::vehicle::VelocityCommand) {
        let per_second = (1.0 / self.plant.dt).round() as usize;
        let k = self.tick;
        let n = (k + 1) * per_second / CAMERA_HZ - k * per_second / CAMERA_HZ;
        for _ in 0..n {
            self.drone = step(&self.drone, cmd, &self.plant);
        }
        self.tick += 1;
    }
}

/// Drone in front of the gate (gate at the origin, flown through along +x),
/// `gx` to the right of its axis, `gz` before its plane, `dh` above its centre.
fn drone_in_front(gx: f64, gz: f64, dh: f64) -> Vec3 {
    Vec3::new(-gz, -gx, 1200.0 + dh)
}

fn heading_to(from: Vec3, to: Vec3) -> f64 {
    let d = to - from;
    d.y.atan2(d.x).to_degrees()
}

#[test]
fn strategy_one_bearing_decreases_after_transients() {
    let cfg = ControlConfig::default();
    let mut rng = SimRng::seed_from_u64(42);
    for trial in 0..100 {
        let pos = drone_in_front(rng.random_range(-600.0..600.0), rng.random_range(1800.0..3000.0), 0.0);
        let mut lp = Loop::new(DroneState::at_rest(pos, 0.0));
        let to_marker = heading_to(pos, lp.gate.marker.pose_world.translation);
        let bearing0: f64 = rng.random_range(-22.0..22.0);
        lp.drone.yaw = to_marker - bearing0;

        let mut st = StrategyOneState::default();
        let mut history = Vec::new();
        for _ in 0..(CAMERA_HZ * 10) {
            let pose = lp.perceive().expect("static marker stays visible");
            let view = GateView::new(&pose, cfg.marker_offset);
            if st.phase > S1Phase::Approach {
                break;
            }
            history.push(view.bearing.abs());
            let (cmd, next) = step_strategy_one(st, Some(&pose), &cfg, 1.0 / CAMERA_HZ as f64);
            st = next;
            lp.advance(&cmd);
        }
        assert!((history[0] - bearing0.abs()).abs() < 1e-6);
        let settle = CAMERA_HZ / 2;
        for w in history[settle..].windows(2) {
            assert!(w[1] <= w[0] + 1e-6, "trial {trial}: bearing grew {} -> {}", w[0], w[1]);
        }
    }
}

#[test]
fn strategy_two_reaches_standoff() {
    let cfg = ControlConfig::default();
    let mut rng = SimRng::seed_from_u64(7);
    let target = |g: &GateSpec| g.pose_world.apply(&Vec3::new(0.0, 0.0, cfg.d1));
    for trial in 0..100 {
        let pos = drone_in_front(
            rng.random_range(-1500.0..1500.0),
            rng.random_range(1200.0..4000.0),
            rng.random_range(-400.0..400.0),
        );
        let mut lp = Loop::new(DroneState::at_rest(pos, 0.0));
        lp.drone.yaw = heading_to(pos, lp.gate.marker.pose_world.translation) + rng.random_range(-10.0..10.0);
        let goal = target(&lp.gate);
        let mut reached = None;
        while lp.drone.t < 30.0 {
            let pose = lp.perceive().unwrap_or_else(|| panic!("trial {trial}: marker lost at t={}", lp.drone.t));
            if (lp.drone.position - goal).norm() < 50.0 {
                reached = Some(lp.drone.t);
                break;
            }
            let cmd = standoff_command(&GateView::new(&pose, cfg.marker_offset), &cfg);
            lp.advance(&cmd);
        }
        assert!(reached.is_some(), "trial {trial} from {pos:?}: still {:.1} mm away", (lp.drone.position - goal).norm());
    }
}
