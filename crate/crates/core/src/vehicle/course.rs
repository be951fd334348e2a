//! Gates and courses.
//!
//! Gate frame: origin at the centre of the opening, x to the right and y up
//! as seen by a drone approaching the gate, z pointing back toward that
//! drone. The marker frame has the same orientation, so a marker faces the
//! approaching drone. A drone flies through from +z to -z.
//!
//! A gate with yaw `psi` is flown through along the world heading `psi`
//! (yaw 0 = world +x).

use std::collections::HashSet;
use std::path::Path;

use nalgebra::Matrix3;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{wrap_deg, Frame, RigidTransform, RotationMatrix, Vec3};
use crate::perception::{MarkerSpec, DEFAULT_MARKER_SIDE};

pub const DEFAULT_OPENING: f64 = 500.0;
pub const DEFAULT_FRAME_BAND: f64 = 50.0;

#[derive(Debug, Error)]
pub enum CourseError {
    #[error("malformed course document: {0}")]
    Schema(#[from] serde_json::Error),
    #[error("cannot read course file: {0}")]
    Io(#[from] std::io::Error),
    #[error("course has no gates")]
    Empty,
    #[error("marker id {0} is used by more than one gate")]
    DuplicateMarkerId(u32),
    #[error("gate {gate}: {field} must be positive, got {value}")]
    NonPositive {
        gate: usize,
        field: &'static str,
        value: f64,
    },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("gate {gate}: marker does not fit inside the gate plane region")]
    MarkerOutsideGate { gate: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StartPose {
    pub pos: [f64; 3],
    pub yaw: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GateSpec {
    /// world <- gate
    pub pose_world: RigidTransform,
    /// Inner side of the square opening, mm.
    pub opening: f64,
    /// Width of the structural border around the opening, mm.
    pub frame_band: f64,
    pub marker: MarkerSpec,
    /// Marker centre in the gate plane, mm.
    pub marker_offset: [f64; 2],
}

impl GateSpec {
    /// Build a gate at `center` with fly-through heading `yaw` (degrees).
    pub fn new(
        index: u32,
        center: Vec3,
        yaw: f64,
        opening: f64,
        marker_id: u32,
        marker_side: f64,
        marker_offset: Option<[f64; 2]>,
    ) -> Result<Self, CourseError> {
        let gate = index as usize;
        for (field, value) in [("opening", opening), ("marker_side", marker_side)] {
            if !value.is_finite() || value <= 0.0 {
                return Err(CourseError::NonPositive { gate, field, value });
            }
        }
        if !center.iter().all(|v| v.is_finite()) || !yaw.is_finite() {
            return Err(CourseError::NonFinite(format!("gate {gate} pose")));
        }
        let offset = marker_offset.unwrap_or_else(|| default_marker_offset(opening, marker_side));
        if !offset.iter().all(|v| v.is_finite()) {
            return Err(CourseError::NonFinite(format!("gate {gate} marker offset")));
        }
        let reach = (opening / 2.0 + DEFAULT_FRAME_BAND) * 2.0;
        if offset[0].abs() > reach || offset[1].abs() > reach {
            return Err(CourseError::MarkerOutsideGate { gate });
        }

        let pose_world = RigidTransform::new(
            gate_rotation(yaw),
            center,
            Frame::Gate(index),
            Frame::World,
        );
        let marker_local = RigidTransform::new(
            RotationMatrix::identity(),
            Vec3::new(offset[0], offset[1], 0.0),
            Frame::Marker(marker_id),
            Frame::Gate(index),
        );
        let marker_world = pose_world
            .compose(&marker_local)
            .expect("marker is expressed in its gate frame");
        let marker = MarkerSpec::new(marker_id, marker_side, marker_world).map_err(|_| {
            CourseError::NonPositive {
                gate,
                field: "marker_side",
                value: marker_side,
            }
        })?;
        Ok(Self {
            pose_world,
            opening,
            frame_band: DEFAULT_FRAME_BAND,
            marker,
            marker_offset: offset,
        })
    }

    pub fn index(&self) -> u32 {
        match self.pose_world.from {
            Frame::Gate(i) => i,
            _ => unreachable!("gate pose always starts in a gate frame"),
        }
    }

    pub fn center(&self) -> Vec3 {
        self.pose_world.translation
    }

    /// World heading (degrees) of the fly-through direction.
    pub fn heading(&self) -> f64 {
        let d = self.pose_world.apply_vector(&-Vec3::z());
        d.y.atan2(d.x).to_degrees()
    }

    pub fn to_gate_frame(&self, p_world: &Vec3) -> Vec3 {
        self.pose_world.inverse().apply(p_world)
    }
}

/// Marker inscribed in the bottom-right corner of the opening.
pub fn default_marker_offset(opening: f64, side: f64) -> [f64; 2] {
    [opening / 2.0 - side / 2.0, -opening / 2.0 + side / 2.0]
}

/// world <- gate rotation for a gate flown through along heading `yaw`.
fn gate_rotation(yaw: f64) -> RotationMatrix {
    // columns: gate x = world -y, gate y = world +z, gate z = world -x
    let r0 = Matrix3::new(0.0, 0.0, -1.0, -1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    RotationMatrix::about_z(yaw.to_radians()) * RotationMatrix::new(r0).expect("proper rotation")
}

#[derive(Debug, Clone, PartialEq)]
pub struct Course {
    pub start: StartPose,
    pub gates: Vec<GateSpec>,
}

impl Course {
    pub fn markers(&self) -> Vec<MarkerSpec> {
        self.gates.iter().map(|g| g.marker).collect()
    }

    pub fn gate_for_marker(&self, marker_id: u32) -> Option<&GateSpec> {
        self.gates.iter().find(|g| g.marker.id == marker_id)
    }

    pub fn to_document(&self) -> CourseDocument {
        CourseDocument {
            start: self.start,
            gates: self
                .gates
                .iter()
                .map(|g| GateDocument {
                    pos: g.center().into(),
                    yaw: wrap_deg(g.heading()),
                    opening: g.opening,
                    marker_id: g.marker.id,
                    marker_side: g.marker.side,
                    marker_offset: Some(g.marker_offset),
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("course serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CourseDocument {
    pub start: StartPose,
    pub gates: Vec<GateDocument>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GateDocument {
    pub pos: [f64; 3],
    pub yaw: f64,
    #[serde(default = "default_opening")]
    pub opening: f64,
    pub marker_id: u32,
    #[serde(default = "default_side")]
    pub marker_side: f64,
    #[serde(default)]
    pub marker_offset: Option<[f64; 2]>,
}

fn default_opening() -> f64 {
    DEFAULT_OPENING
}

fn default_side() -> f64 {
    DEFAULT_MARKER_SIDE
}

impl CourseDocument {
    pub fn build(&self) -> Result<Course, CourseError> {
        if self.gates.is_empty() {
            return Err(CourseError::Empty);
        }
        if !self.start.pos.iter().all(|v| v.is_finite()) || !self.start.yaw.is_finite() {
            return Err(CourseError::NonFinite("start pose".into()));
        }
        let mut ids = HashSet::new();
        let mut gates = Vec::with_capacity(self.gates.len());
        for (i, g) in self.gates.iter().enumerate() {
            if !ids.insert(g.marker_id) {
                return Err(CourseError::DuplicateMarkerId(g.marker_id));
            }
            gates.push(GateSpec::new(
                i as u32,
                Vec3::from(g.pos),
                g.yaw,
                g.opening,
                g.marker_id,
                g.marker_side,
                g.marker_offset,
            )?);
        }
        Ok(Course {
            start: self.start,
            gates,
        })
    }
}

/// Parse and validate a course JSON document.
pub fn load_course(document: &str) -> Result<Course, CourseError> {
    serde_json::from_str::<CourseDocument>(document)?.build()
}

pub fn load_course_file(path: impl AsRef<Path>) -> Result<Course, CourseError> {
    load_course(&std::fs::read_to_string(path)?)
}

/// Distance past a gate, along its heading, from which the next gate is
/// expected to be approached.
const EXIT_LEAD: f64 = 1700.0;

/// Random counter-clockwise circuit of `n` gates. Each gate sits 3-4 m
/// (the first 2.6-3.2 m) from the previous one, 40-60 degrees left of its
/// heading, so later gates stay out of view while the drone lines up on the
/// current one. Each gate faces, within 8 degrees, the point [`EXIT_LEAD`]
/// past the previous gate (or the start).
pub fn random_course<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Course {
    assert!(n >= 1);
    let start = StartPose {
        pos: [0.0, 0.0, 1000.0],
        yaw: 0.0,
    };
    let mut from = Vec3::new(0.0, 0.0, 1000.0);
    let mut exit = from;
    let mut heading: f64 = rng.random_range(-15.0..15.0);
    let mut gates = Vec::with_capacity(n);
    for i in 0..n {
        let dist = if i == 0 {
            rng.random_range(2600.0..3200.0)
        } else {
            rng.random_range(3200.0..4000.0)
        };
        let h = heading.to_radians();
        let z = rng.random_range(1100.0..1500.0);
        let center = Vec3::new(from.x + dist * h.cos(), from.y + dist * h.sin(), z);
        let approach = (center.y - exit.y).atan2(center.x - exit.x).to_degrees();
        let yaw = wrap_deg(approach + rng.random_range(-8.0..8.0));
        gates.push(
            GateSpec::new(
                i as u32,
                center,
                yaw,
                DEFAULT_OPENING,
                i as u32 + 1,
                DEFAULT_MARKER_SIDE,
                None,
            )
            .expect("generated gate is valid"),
        );
        let y = yaw.to_radians();
        from = center;
        exit = center + Vec3::new(y.cos(), y.sin(), 0.0) * EXIT_LEAD;
        heading = wrap_deg(yaw + rng.random_range(40.0..60.0));
    }
    Course { start, gates }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    const ONE_GATE: &str = r#"{
        "start": {"pos": [-2000, 0, 1000], "yaw": 0},
        "gates": [{"pos": [0, 0, 1000], "yaw": 0, "opening": 500, "marker_id": 7, "marker_side": 150}]
    }"#;

    #[test]
    fn single_gate_marker_offset() {
        let c = load_course(ONE_GATE).unwrap();
        assert_eq!(c.gates.len(), 1);
        let g = &c.gates[0];
        assert_eq!(g.marker_offset, [175.0, -175.0]);
        let centre_in_gate = g.to_gate_frame(&g.marker.pose_world.translation);
        assert!((centre_in_gate - Vec3::new(175.0, -175.0, 0.0)).norm() < 1e-9);
        // gate x is to the right of a drone flying along world +x: world -y
        let m = g.marker.pose_world.translation;
        assert!((m - Vec3::new(0.0, -175.0, 825.0)).norm() < 1e-9, "{m}");
        // marker faces the approaching drone
        let n = g.marker.pose_world.apply_vector(&Vec3::z());
        assert!((n + Vec3::x()).norm() < 1e-12);
        assert!((g.heading()).abs() < 1e-12);
    }

    #[test]
    fn validation_errors() {
        let empty = r#"{"start": {"pos": [0,0,0], "yaw": 0}, "gates": []}"#;
        assert!(matches!(load_course(empty), Err(CourseError::Empty)));

        let dup = r#"{"start": {"pos": [0,0,0], "yaw": 0}, "gates": [
            {"pos": [1000,0,1000], "yaw": 0, "marker_id": 2},
            {"pos": [4000,0,1000], "yaw": 0, "marker_id": 2}]}"#;
        assert!(matches!(load_course(dup), Err(CourseError::DuplicateMarkerId(2))));

        let bad = r#"{"start": {"pos": [0,0,0], "yaw": 0}, "gates": [
            {"pos": [1000,0,1000], "yaw": 0, "marker_id": 2, "opening": -5}]}"#;
        assert!(matches!(load_course(bad), Err(CourseError::NonPositive { .. })));

        let schema = r#"{"start": {"pos": [0,0], "yaw": 0}, "gates": []}"#;
        assert!(matches!(load_course(schema), Err(CourseError::Schema(_))));
    }

    #[test]
    fn document_round_trip() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let c = random_course(3, &mut rng);
        let back = load_course(&c.to_json()).unwrap();
        for (a, b) in c.gates.iter().zip(&back.gates) {
            assert!((a.center() - b.center()).norm() < 1e-9);
            assert!((a.pose_world.rotation * b.pose_world.rotation.transpose()).angle() < 1e-9);
            assert_eq!(a.marker.id, b.marker.id);
        }
    }

    #[test]
    fn random_course_is_seeded() {
        let a = random_course(3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        let b = random_course(3, &mut rand_chacha::ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
        let ids: HashSet<_> = a.gates.iter().map(|g| g.marker.id).collect();
        assert_eq!(ids.len(), 3);
    }
}
