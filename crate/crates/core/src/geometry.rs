//! Shared geometric types: vehicle state, poses, gates and tracks.

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

pub type Vec3 = Vector3<f64>;

/// Standard gravity, m/s².
pub const GRAVITY: f64 = 9.81;

pub fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

/// Full kinematic state of the vehicle. `attitude` rotates body into world
/// (body frame: x forward, y left, z up).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadState {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub attitude: UnitQuaternion<f64>,
    pub body_rates: Vec3,
}

impl QuadState {
    /// Level hover at `position` facing `yaw`.
    pub fn at_rest(position: Vec3, yaw: f64) -> Self {
        Self {
            t: 0.0,
            position,
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            attitude: UnitQuaternion::from_euler_angles(0.0, 0.0, yaw),
            body_rates: Vec3::zeros(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && is_finite(&self.position)
            && is_finite(&self.velocity)
            && is_finite(&self.acceleration)
            && self.attitude.coords.iter().all(|c| c.is_finite())
            && is_finite(&self.body_rates)
    }

    pub fn yaw(&self) -> f64 {
        self.attitude.euler_angles().2
    }

    pub fn body_z(&self) -> Vec3 {
        self.attitude * Vec3::z()
    }

    pub fn pose(&self) -> Pose {
        Pose {
            position: self.position,
            attitude: self.attitude,
        }
    }

    /// Position and unit quaternion `(w, x, y, z)` packed as seven reals.
    pub fn pose_array(&self) -> [f64; 7] {
        let q = self.attitude.quaternion();
        [self.position.x, self.position.y, self.position.z, q.w, q.i, q.j, q.k]
    }
}

/// Rigid pose: `attitude` maps frame coordinates into world coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    pub attitude: UnitQuaternion<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            position: Vec3::zeros(),
            attitude: UnitQuaternion::identity(),
        }
    }

    pub fn to_world(&self, local: &Vec3) -> Vec3 {
        self.position + self.attitude * local
    }

    pub fn to_local(&self, world: &Vec3) -> Vec3 {
        self.attitude.inverse() * (world - self.position)
    }
}

fn default_opening() -> f64 {
    1.5
}

fn default_frame() -> f64 {
    0.25
}

fn default_base_size() -> f64 {
    1.3
}

/// A rectangular racing gate standing upright; `yaw` points along the
/// direction of travel through the opening.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Gate {
    pub id: u32,
    pub center: Vec3,
    pub yaw: f64,
    #[serde(default = "default_opening")]
    pub inner_width: f64,
    #[serde(default = "default_opening")]
    pub inner_height: f64,
    #[serde(default = "default_frame")]
    pub frame_thickness: f64,
    #[serde(default)]
    pub shape_id: u32,
    #[serde(default = "default_base_size")]
    pub base_size: f64,
}

impl Gate {
    pub fn new(id: u32, center: Vec3, yaw: f64) -> Self {
        Self {
            id,
            center,
            yaw,
            inner_width: default_opening(),
            inner_height: default_opening(),
            frame_thickness: default_frame(),
            shape_id: 0,
            base_size: default_base_size(),
        }
    }

    /// Unit normal of the gate plane, pointing in the direction of travel.
    pub fn normal(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    /// In-plane horizontal axis (left of the travel direction).
    pub fn lateral(&self) -> Vec3 {
        Vec3::new(-self.yaw.sin(), self.yaw.cos(), 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !is_finite(&self.center) || !self.yaw.is_finite() {
            return Err(invalid(format!("gate {} has non-finite pose", self.id)));
        }
        if !(self.inner_width > 0.0 && self.inner_height > 0.0) {
            return Err(invalid(format!("gate {} opening must be positive", self.id)));
        }
        if !(self.frame_thickness > 0.0) {
            return Err(invalid(format!("gate {} frame must be positive", self.id)));
        }
        if !(self.base_size > 0.0) {
            return Err(invalid(format!("gate {} base size must be positive", self.id)));
        }
        Ok(())
    }
}

/// An additional waypoint shaping the global trajectory between gates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtraWaypoint {
    pub insert_after_gate: usize,
    pub point: Vec3,
}

fn default_laps() -> u32 {
    5
}

fn default_bounds() -> f64 {
    70.0
}

/// An ordered, closed racing course inside a cubical flying space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Track {
    pub gates: Vec<Gate>,
    #[serde(default)]
    pub extra_waypoints: Vec<ExtraWaypoint>,
    #[serde(default = "default_laps")]
    pub laps_for_success: u32,
    #[serde(default = "default_bounds")]
    pub bounds_side: f64,
}

const CANONICAL_TRACK: &str = include_str!("../assets/canonical_8gate.json");
const SMALL_TRACK: &str = include_str!("../assets/small_4gate.json");

impl Track {
    /// The shipped 8-gate, ~116 m stand-in layout.
    pub fn canonical() -> Self {
        serde_json::from_str(CANONICAL_TRACK).expect("bundled track parses")
    }

    /// The shipped 4-gate, 43 m planar layout.
    pub fn small() -> Self {
        serde_json::from_str(SMALL_TRACK).expect("bundled track parses")
    }

    pub fn validate(&self) -> Result<()> {
        if self.gates.is_empty() {
            return Err(invalid("track needs at least one gate"));
        }
        if !(self.bounds_side > 0.0) {
            return Err(invalid("bounds_side must be positive"));
        }
        if self.laps_for_success == 0 {
            return Err(invalid("laps_for_success must be at least 1"));
        }
        for g in &self.gates {
            g.validate()?;
        }
        for w in &self.extra_waypoints {
            if w.insert_after_gate >= self.gates.len() || !is_finite(&w.point) {
                return Err(invalid("extra waypoint refers to a missing gate or is non-finite"));
            }
        }
        Ok(())
    }

    pub fn gate_count(&self) -> usize {
        self.gates.len()
    }

    /// Waypoints of the global trajectory: gate centers (displaced by
    /// `offsets` when given) interleaved with extra waypoints.
    pub fn waypoints_with_offsets(&self, offsets: Option<&[Vec3]>) -> Vec<Vec3> {
        let mut out = Vec::with_capacity(self.gates.len() + self.extra_waypoints.len());
        for (i, g) in self.gates.iter().enumerate() {
            let off = offsets.map(|o| o[i]).unwrap_or_else(Vec3::zeros);
            out.push(g.center + off);
            out.extend(
                self.extra_waypoints
                    .iter()
                    .filter(|w| w.insert_after_gate == i)
                    .map(|w| w.point),
            );
        }
        out
    }

    pub fn waypoints(&self) -> Vec<Vec3> {
        self.waypoints_with_offsets(None)
    }

    /// Length of the closed polyline through all waypoints.
    pub fn loop_length(&self) -> f64 {
        let w = self.waypoints();
        (0..w.len()).map(|i| (w[(i + 1) % w.len()] - w[i]).norm()).sum()
    }

    /// Whether `p` lies inside the flying space: a cube of side
    /// `bounds_side` centered horizontally on the origin, resting on the floor.
    pub fn in_bounds(&self, p: &Vec3) -> bool {
        let h = 0.5 * self.bounds_side;
        p.x.abs() <= h && p.y.abs() <= h && p.z > 0.0 && p.z <= self.bounds_side
    }

    /// Index of the gate before `next` in lap order.
    pub fn previous_gate(&self, next: usize) -> usize {
        (next + self.gates.len() - 1) % self.gates.len()
    }
}
