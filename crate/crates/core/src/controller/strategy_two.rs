//! Strategy 2: fly to a standoff point on the gate axis, then approach the
//! gate centre under continuous correction, then fly straight once the
//! marker has been out of view for a while.

use super::{hover, p_control, ControlConfig, GateView};
use crate::geometry::Vec3;
use crate::perception::PoseEstimate;
use crate::vehicle::VelocityCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum S2Phase {
    #[default]
    Standoff = 1,
    GateApproach = 2,
    FlyThrough = 3,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StrategyTwoState {
    pub phase: S2Phase,
    /// Seconds without a pose.
    pub marker_lost: f64,
    /// Seconds spent in the fly-through phase.
    pub phase3_elapsed: f64,
}

/// Phase-1 command: 3-axis P toward the standoff point `d1` in front of the
/// gate centre, yaw keeping the marker centred.
pub fn standoff_command(view: &GateView, cfg: &ControlConfig) -> VelocityCommand {
    let g = &cfg.gains;
    let e = view.to_body(&Vec3::new(0.0, 0.0, cfg.d1));
    VelocityCommand {
        vx: p_control(e.x, g.kp_x, g.limit_x),
        vy: p_control(e.y, g.kp_y, g.limit_y),
        vz: p_control(e.z, g.kp_z, g.limit_z),
        wz: p_control(-view.bearing, g.kp_yaw, g.limit_yaw),
    }
}

fn approach_command(view: &GateView, cfg: &ControlConfig) -> VelocityCommand {
    let g = &cfg.gains;
    let e = view.to_body(&Vec3::zeros());
    VelocityCommand {
        vx: cfg.cruise_speed,
        vy: p_control(e.y, g.kp_y, g.limit_y),
        vz: p_control(e.z, g.kp_z, g.limit_z),
        wz: p_control(view.yaw_error, g.kp_yaw, g.limit_yaw),
    }
}

pub fn step_strategy_two(
    s: StrategyTwoState,
    pose: Option<&PoseEstimate>,
    cfg: &ControlConfig,
    dt: f64,
) -> (VelocityCommand, StrategyTwoState) {
    debug_assert!(dt > 0.0);
    let view = pose.map(|p| GateView::new(p, cfg.marker_offset));
    let marker_lost = if view.is_some() { 0.0 } else { s.marker_lost + dt };
    let mut phase = s.phase;
    let fly = VelocityCommand {
        vx: cfg.fly_through_speed,
        ..hover()
    };

    if phase == S2Phase::FlyThrough {
        if s.phase3_elapsed < cfg.t3 - 1e-9 {
            let next = StrategyTwoState {
                phase,
                marker_lost,
                phase3_elapsed: s.phase3_elapsed + dt,
            };
            return (fly, next);
        }
        phase = S2Phase::Standoff;
    }

    if phase == S2Phase::Standoff {
        let Some(view) = view else {
            let cmd = VelocityCommand {
                wz: cfg.search_yaw_rate,
                ..hover()
            };
            return (cmd, StrategyTwoState { phase, marker_lost, phase3_elapsed: 0.0 });
        };
        if view.drone_in_gate.x.abs() <= cfg.delta2 {
            phase = S2Phase::GateApproach;
        } else {
            let cmd = standoff_command(&view, cfg);
            return (cmd, StrategyTwoState { phase, marker_lost, phase3_elapsed: 0.0 });
        }
    }

    if phase == S2Phase::GateApproach {
        match view {
            Some(view) => {
                let cmd = approach_command(&view, cfg);
                return (cmd, StrategyTwoState { phase, marker_lost, phase3_elapsed: 0.0 });
            }
            None if marker_lost <= cfg.dt2 => {
                let cmd = VelocityCommand {
                    vx: cfg.cruise_speed,
                    ..hover()
                };
                return (cmd, StrategyTwoState { phase, marker_lost, phase3_elapsed: 0.0 });
            }
            None => phase = S2Phase::FlyThrough,
        }
    }

    debug_assert_eq!(phase, S2Phase::FlyThrough);
    (
        fly,
        StrategyTwoState {
            phase,
            marker_lost,
            phase3_elapsed: dt,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller::tests::true_pose;
    use crate::vehicle::{DroneState, GateSpec};

    const DT: f64 = 1.0 / 30.0;

    fn gate() -> GateSpec {
        GateSpec::new(0, Vec3::new(3000.0, 0.0, 1200.0), 0.0, 500.0, 1, 150.0, None).unwrap()
    }

    #[test]
    fn off_axis_drone_heads_for_standoff() {
        let cfg = ControlConfig::default();
        // 2 m before the gate plane, 800 mm to its left (world +y)
        let s = DroneState::at_rest(Vec3::new(1000.0, 800.0, 1000.0), -15.0);
        let pose = true_pose(&s, &gate());
        let (cmd, next) = step_strategy_two(StrategyTwoState::default(), Some(&pose), &cfg, DT);
        assert_eq!(next.phase, S2Phase::Standoff);
        let view = GateView::new(&pose, cfg.marker_offset);
        let e = view.to_body(&Vec3::new(0.0, 0.0, cfg.d1));
        // every unsaturated axis points along the error
        assert!(cmd.vx * e.x > 0.0 && cmd.vy * e.y > 0.0 && cmd.vz * e.z > 0.0);
        assert!(cmd.wz * -view.bearing > 0.0);
    }

    #[test]
    fn inside_lateral_band_switches_to_approach() {
        let cfg = ControlConfig::default();
        let s = DroneState::at_rest(Vec3::new(1000.0, 100.0, 1200.0), 0.0);
        let pose = true_pose(&s, &gate());
        let (cmd, next) = step_strategy_two(StrategyTwoState::default(), Some(&pose), &cfg, DT);
        assert_eq!(next.phase, S2Phase::GateApproach);
        assert_eq!(cmd.vx, cfg.cruise_speed);
    }

    #[test]
    fn lost_marker_triggers_fly_through_for_t3() {
        let cfg = ControlConfig::default();
        let mut st = StrategyTwoState {
            phase: S2Phase::GateApproach,
            marker_lost: 0.0,
            phase3_elapsed: 0.0,
        };
        let mut t = 0.0;
        while st.phase == S2Phase::GateApproach {
            let (_, next) = step_strategy_two(st, None, &cfg, DT);
            st = next;
            t += DT;
        }
        assert!(st.marker_lost > cfg.dt2 && st.marker_lost - DT <= cfg.dt2);
        assert!((t - st.marker_lost).abs() < 1e-12);
        let mut ticks = 1;
        while st.phase == S2Phase::FlyThrough {
            let (cmd, next) = step_strategy_two(st, None, &cfg, DT);
            if next.phase == S2Phase::FlyThrough {
                assert_eq!(cmd.vx, cfg.fly_through_speed);
                ticks += 1;
            }
            st = next;
        }
        assert_eq!(st.phase, S2Phase::Standoff);
        assert!((ticks as f64 * DT - cfg.t3).abs() < 1e-9);
    }

    #[test]
    fn valid_pose_resets_loss_timer() {
        let cfg = ControlConfig::default();
        let s = DroneState::at_rest(Vec3::new(1000.0, 0.0, 1200.0), 0.0);
        let pose = true_pose(&s, &gate());
        let st = StrategyTwoState {
            phase: S2Phase::GateApproach,
            marker_lost: 0.2,
            phase3_elapsed: 0.0,
        };
        let (_, next) = step_strategy_two(st, Some(&pose), &cfg, DT);
        assert_eq!(next.marker_lost, 0.0);
    }
}
