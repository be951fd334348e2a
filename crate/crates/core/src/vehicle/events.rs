use serde::{Deserialize, Serialize};

use super::{Course, DroneState, GateSpec};
use crate::geometry::Vec3;

/// Collision sphere radius of the airframe, mm.
pub const DEFAULT_DRONE_RADIUS: f64 = 120.0;

/// Points closer to a gate plane than this (mm) count as lying on it.
const PLANE_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateEventKind {
    Pass,
    Collision,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GateEvent {
    pub kind: GateEventKind,
    pub gate: usize,
    /// Seconds, interpolated to the crossing instant.
    pub t: f64,
    /// Crossing point in the gate frame, mm (z = 0).
    pub point: [f64; 3],
}

/// Where the segment `prev -> next` crosses the gate plane in the
/// fly-through direction (+z to -z), in gate coordinates, with the
/// interpolation fraction along the segment.
pub fn gate_crossing(prev: &Vec3, next: &Vec3, gate: &GateSpec) -> Option<(Vec3, f64)> {
    let a = gate.to_gate_frame(prev);
    let b = gate.to_gate_frame(next);
    if !(a.z > PLANE_EPS && b.z <= PLANE_EPS) {
        return None;
    }
    let s = (a.z / (a.z - b.z)).clamp(0.0, 1.0);
    let mut p = a + (b - a) * s;
    p.z = 0.0;
    Some((p, s))
}

/// Classify a crossing point: (pass, collision).
///
/// A pass needs the drone centre strictly inside the opening. A collision is
/// any contact of the drone's cross-section disk with the frame band. A
/// crossing near the edge of the opening reports both.
pub fn classify_crossing(p: &Vec3, gate: &GateSpec, radius: f64) -> (bool, bool) {
    let half = gate.opening / 2.0;
    let outer = half + gate.frame_band;
    let (ax, ay) = (p.x.abs(), p.y.abs());
    let pass = ax < half && ay < half;
    let dx = (ax - outer).max(0.0);
    let dy = (ay - outer).max(0.0);
    let touches_outer = dx.hypot(dy) <= radius;
    let clear_of_inner_edge = ax.max(ay) < half - radius;
    (pass, touches_outer && !clear_of_inner_edge)
}

pub fn check_gate_events(
    prev: &DroneState,
    next: &DroneState,
    course: &Course,
    drone_radius: f64,
) -> Vec<GateEvent> {
    let mut events = Vec::new();
    for (i, gate) in course.gates.iter().enumerate() {
        let Some((p, s)) = gate_crossing(&prev.position, &next.position, gate) else {
            continue;
        };
        let (pass, collision) = classify_crossing(&p, gate, drone_radius);
        let t = prev.t + (next.t - prev.t) * s;
        let point = [p.x, p.y, p.z];
        if pass {
            events.push(GateEvent {
                kind: GateEventKind::Pass,
                gate: i,
                t,
                point,
            });
        }
        if collision {
            events.push(GateEvent {
                kind: GateEventKind::Collision,
                gate: i,
                t,
                point,
            });
        }
    }
    events
}
