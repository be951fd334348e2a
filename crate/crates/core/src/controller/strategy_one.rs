//! Strategy 1: rotate to the marker, fly at it, face the gate plane, slide
//! onto the gate axis, then fly straight through for a fixed time.

use super::{hover, p_control, ControlConfig, GateView};
use crate::geometry::Vec3;
use crate::perception::PoseEstimate;
use crate::vehicle::VelocityCommand;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
#[repr(u8)]
pub enum S1Phase {
    #[default]
    Rotate = 1,
    Approach = 2,
    FacePlane = 3,
    AlignLateral = 4,
    FlyThrough = 5,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StrategyOneState {
    pub phase: S1Phase,
    /// Seconds spent in the fly-through phase.
    pub phase5_elapsed: f64,
}

fn altitude(view: &GateView, cfg: &ControlConfig) -> f64 {
    let g = &cfg.gains;
    p_control(view.to_body(&Vec3::zeros()).z, g.kp_z, g.limit_z)
}

pub fn step_strategy_one(
    s: StrategyOneState,
    pose: Option<&PoseEstimate>,
    cfg: &ControlConfig,
    dt: f64,
) -> (VelocityCommand, StrategyOneState) {
    debug_assert!(dt > 0.0);
    let g = &cfg.gains;
    let view = pose.map(|p| GateView::new(p, cfg.marker_offset));
    let mut phase = s.phase;

    if phase == S1Phase::FlyThrough {
        if s.phase5_elapsed < cfg.t5 - 1e-9 {
            let cmd = VelocityCommand {
                vx: cfg.fly_through_speed,
                ..hover()
            };
            return (
                cmd,
                StrategyOneState {
                    phase,
                    phase5_elapsed: s.phase5_elapsed + dt,
                },
            );
        }
        phase = S1Phase::Rotate;
    }

    let Some(view) = view else {
        let cmd = if phase == S1Phase::Rotate {
            VelocityCommand {
                wz: cfg.search_yaw_rate,
                ..hover()
            }
        } else {
            hover()
        };
        return (cmd, StrategyOneState { phase, phase5_elapsed: 0.0 });
    };

    let vz = altitude(&view, cfg);
    let hold_bearing = p_control(-view.bearing, g.kp_yaw, g.limit_yaw);

    if phase == S1Phase::Rotate {
        if view.bearing.abs() < cfg.alpha1.to_degrees() {
            phase = S1Phase::Approach;
        } else {
            let cmd = VelocityCommand { vz, wz: hold_bearing, ..hover() };
            return (cmd, StrategyOneState { phase, phase5_elapsed: 0.0 });
        }
    }

    if phase == S1Phase::Approach {
        if view.drone_in_gate.z <= cfg.d2 {
            phase = S1Phase::FacePlane;
        } else {
            let cmd = VelocityCommand {
                vx: cfg.cruise_speed,
                vz,
                wz: hold_bearing,
                ..hover()
            };
            return (cmd, StrategyOneState { phase, phase5_elapsed: 0.0 });
        }
    }

    let face = p_control(view.yaw_error, g.kp_yaw, g.limit_yaw);
    if phase == S1Phase::FacePlane {
        if view.yaw_error.abs() < cfg.facing_tol {
            phase = S1Phase::AlignLateral;
        } else {
            let cmd = VelocityCommand { vz, wz: face, ..hover() };
            return (cmd, StrategyOneState { phase, phase5_elapsed: 0.0 });
        }
    }

    if phase == S1Phase::AlignLateral {
        if view.drone_in_gate.x.abs() < cfg.lateral_tol {
            phase = S1Phase::FlyThrough;
        } else {
            let on_axis = view.to_body(&Vec3::new(0.0, 0.0, view.drone_in_gate.z));
            let cmd = VelocityCommand {
                vy: p_control(on_axis.y, g.kp_y, g.limit_y),
                vz,
                wz: face,
                ..hover()
            };
            return (cmd, StrategyOneState { phase, phase5_elapsed: 0.0 });
        }
    }

    debug_assert_eq!(phase, S1Phase::FlyThrough);
    let cmd = VelocityCommand {
        vx: cfg.fly_through_speed,
        ..hover()
    };
    (cmd, StrategyOneState { phase, phase5_elapsed: dt })
}
