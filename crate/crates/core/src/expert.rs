//! The expert policy: ground-truth `{x_g, v_g}` labels from the vehicle
//! state and the global minimum-snap trajectory.

use serde::{Deserialize, Serialize};

use crate::camera::{project_to_image, CameraModel, ImagePoint, Projection};
use crate::error::{invalid, Result};
use crate::geometry::{QuadState, Track, Vec3};
use crate::trajectory::{
    advance_from_point, min_snap, project_onto, FeasibilityLimits, MinSnapSolver, Trajectory, TrajectoryProjection,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExpertConfig {
    /// Lower bound on the training-time prediction horizon, m.
    pub d_min_train: f64,
    pub camera: CameraModel,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            d_min_train: 1.5,
            camera: CameraModel::default(),
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.d_min_train > 0.0) {
            return Err(invalid("d_min_train must be positive"));
        }
        self.camera.validate()
    }
}

/// Ground truth for one observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Label {
    pub x_g: ImagePoint,
    pub v_g: f64,
    /// False when the goal point lies behind the camera.
    pub valid: bool,
}

/// Training-time prediction horizon: `max(d_min, min(‖s_last‖, ‖s_next‖))`.
pub fn d_train(s_last: &Vec3, s_next: &Vec3, d_min: f64) -> f64 {
    d_min.max(s_last.norm().min(s_next.norm()))
}

/// Label plus the intermediate geometry that produced it.
#[derive(Clone, Copy, Debug)]
pub struct ExpertOutput {
    pub label: Label,
    /// Closest point on the global trajectory.
    pub projection: TrajectoryProjection,
    /// Goal point on the trajectory at the prediction horizon.
    pub goal: Vec3,
    pub horizon: f64,
}

impl ExpertOutput {
    /// Distance from the vehicle to the global trajectory.
    pub fn deviation(&self, state: &QuadState) -> f64 {
        (state.position - self.projection.point).norm()
    }
}

/// Labels `state` against `traj`. `next_gate` is the index of the gate to
/// be passed next; `offsets` displaces gate centers (moving gates).
pub fn expert_label(
    state: &QuadState,
    traj: &Trajectory,
    track: &Track,
    next_gate: usize,
    offsets: Option<&[Vec3]>,
    cfg: &ExpertConfig,
) -> ExpertOutput {
    let gate_pos = |i: usize| track.gates[i].center + offsets.map(|o| o[i]).unwrap_or_else(Vec3::zeros);
    let next = next_gate % track.gate_count();
    let last = track.previous_gate(next);
    let s_next = gate_pos(next) - state.position;
    let s_last = gate_pos(last) - state.position;
    let horizon = d_train(&s_last, &s_next, cfg.d_min_train);

    let projection = project_onto(traj, &state.position);
    let (_, goal) = advance_from_point(traj, projection.time, &state.position, horizon);
    let v_g = (projection.speed / traj.v_max_achieved()).clamp(0.0, 1.0);
    let pose = cfg.camera.pose(state);
    let label = match project_to_image(&goal, &pose, &cfg.camera) {
        Projection::Image(x_g) => Label { x_g, v_g, valid: true },
        Projection::BehindCamera => Label {
            x_g: ImagePoint::zeros(),
            v_g,
            valid: false,
        },
    };
    ExpertOutput {
        label,
        projection,
        goal,
        horizon,
    }
}

/// Expert bound to one track. Keeps the factorized minimum-snap system so
/// moving-gate layouts can be re-solved every tick with the same segment
/// times; labels are invariant to uniform time scaling, so no feasibility
/// rescaling is needed for the displaced layouts.
pub struct Expert {
    track: Track,
    trajectory: Trajectory,
    solver: MinSnapSolver,
    cfg: ExpertConfig,
}

impl Expert {
    pub fn new(track: Track, limits: &FeasibilityLimits, cfg: ExpertConfig) -> Result<Self> {
        track.validate()?;
        cfg.validate()?;
        let trajectory = min_snap(&track.waypoints(), true, limits)?;
        let durations = trajectory.segments().iter().map(|s| s.duration).collect();
        let solver = MinSnapSolver::new(durations, true)?;
        Ok(Self {
            track,
            trajectory,
            solver,
            cfg,
        })
    }

    pub fn track(&self) -> &Track {
        &self.track
    }

    pub fn trajectory(&self) -> &Trajectory {
        &self.trajectory
    }

    pub fn config(&self) -> &ExpertConfig {
        &self.cfg
    }

    /// Global trajectory through the displaced layout.
    pub fn displaced_trajectory(&self, offsets: &[Vec3]) -> Result<Trajectory> {
        let wp = self.track.waypoints_with_offsets(Some(offsets));
        Trajectory::new(self.solver.solve(&wp)?, true)
    }

    pub fn label(&self, state: &QuadState, next_gate: usize, offsets: Option<&[Vec3]>) -> Result<ExpertOutput> {
        match offsets.filter(|o| o.iter().any(|v| v.norm() > 0.0)) {
            Some(o) => {
                let traj = self.displaced_trajectory(o)?;
                Ok(expert_label(state, &traj, &self.track, next_gate, Some(o), &self.cfg))
            }
            None => Ok(expert_label(
                state,
                &self.trajectory,
                &self.track,
                next_gate,
                None,
                &self.cfg,
            )),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Gate;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    #[test]
    fn d_train_examples() {
        let v = |n: f64| Vec3::new(n, 0.0, 0.0);
        assert_eq!(d_train(&v(3.0), &v(2.0), 1.5), 2.0);
        assert_eq!(d_train(&v(0.5), &v(0.8), 1.5), 1.5);
        assert_eq!(d_train(&v(10.0), &v(12.0), 1.5), 10.0);
    }

    proptest! {
        #[test]
        fn d_train_bounds(
            a in prop::array::uniform3(-20.0f64..20.0),
            b in prop::array::uniform3(-20.0f64..20.0),
            d_min in 0.1f64..5.0,
        ) {
            let (a, b) = (Vec3::from(a), Vec3::from(b));
            let d = d_train(&a, &b, d_min);
            prop_assert!(d >= d_min);
            let m = a.norm().min(b.norm());
            if m >= d_min {
                prop_assert!(d <= m);
            }
        }
    }

    /// Long straight corridor: gates spaced along +x, closed by a wide return.
    fn corridor() -> Track {
        let gates = vec![
            Gate::new(0, Vec3::new(0.0, 0.0, 3.0), 0.0),
            Gate::new(1, Vec3::new(15.0, 0.0, 3.0), 0.0),
            Gate::new(2, Vec3::new(30.0, 0.0, 3.0), 0.0),
            Gate::new(3, Vec3::new(15.0, 20.0, 3.0), std::f64::consts::PI),
        ];
        Track {
            gates,
            extra_waypoints: vec![],
            laps_for_success: 5,
            bounds_side: 70.0,
        }
    }

    #[test]
    fn on_trajectory_goal_near_image_center() {
        let expert = Expert::new(corridor(), &FeasibilityLimits::default(), ExpertConfig::default()).unwrap();
        let traj = expert.trajectory();
        // Find the time the trajectory passes x = 7.5 (between gates 0 and 1).
        let t = (0..4000)
            .map(|k| k as f64 * traj.total_duration() / 4000.0)
            .min_by(|a, b| {
                let da = (traj.position(*a) - Vec3::new(7.5, 0.0, 3.0)).norm();
                let db = (traj.position(*b) - Vec3::new(7.5, 0.0, 3.0)).norm();
                da.partial_cmp(&db).unwrap()
            })
            .unwrap();
        let mut s = QuadState::at_rest(traj.position(t), traj.heading(t).unwrap());
        s.velocity = traj.velocity(t);
        let out = expert.label(&s, 1, None).unwrap();
        assert!(out.label.valid);
        assert!(out.label.x_g.x.abs() <= 0.05, "{:?}", out.label);
        assert!((0.0..=1.0).contains(&out.label.v_g));
    }

    #[test]
    fn fastest_point_normalizes_to_one() {
        let expert = Expert::new(corridor(), &FeasibilityLimits::default(), ExpertConfig::default()).unwrap();
        let traj = expert.trajectory();
        let t = traj
            .sample_points(400)
            .into_iter()
            .map(|(i, l)| traj.start_times()[i] + l)
            .max_by(|a, b| traj.velocity(*a).norm().partial_cmp(&traj.velocity(*b).norm()).unwrap())
            .unwrap();
        let h = traj.total_duration() / 400.0;
        let (mut a, mut b) = (t - h, t + h);
        for _ in 0..100 {
            let (m1, m2) = (a + (b - a) / 3.0, b - (b - a) / 3.0);
            if traj.velocity(m1).norm() < traj.velocity(m2).norm() {
                a = m1;
            } else {
                b = m2;
            }
        }
        let t = 0.5 * (a + b);
        let s = QuadState::at_rest(traj.position(t), traj.heading(t).unwrap());
        let out = expert.label(&s, 1, None).unwrap();
        assert!((out.label.v_g - 1.0).abs() < 1e-6, "{}", out.label.v_g);
    }

    #[test]
    fn goal_behind_camera_is_invalid() {
        let expert = Expert::new(corridor(), &FeasibilityLimits::default(), ExpertConfig::default()).unwrap();
        // Far off to the side of the first straight, facing away from it.
        let s = QuadState::at_rest(Vec3::new(7.5, -12.0, 3.0), -std::f64::consts::FRAC_PI_2);
        let out = expert.label(&s, 1, None).unwrap();
        assert!(!out.label.valid);
    }

    #[test]
    fn label_is_translation_equivariant() {
        let track = corridor();
        let shift = Vec3::new(3.0, -4.0, 1.5);
        let mut moved = track.clone();
        for g in &mut moved.gates {
            g.center += shift;
        }
        let cfg = ExpertConfig::default();
        let a = Expert::new(track, &FeasibilityLimits::default(), cfg.clone()).unwrap();
        let b = Expert::new(moved, &FeasibilityLimits::default(), cfg).unwrap();
        let mut s = QuadState::at_rest(Vec3::new(5.0, 0.7, 3.4), 0.2);
        s.attitude = UnitQuaternion::from_euler_angles(0.1, -0.05, 0.2);
        let mut s2 = s.clone();
        s2.position += shift;
        let la = a.label(&s, 1, None).unwrap().label;
        let lb = b.label(&s2, 1, None).unwrap().label;
        assert!((la.x_g - lb.x_g).norm() < 1e-6);
        assert!((la.v_g - lb.v_g).abs() < 1e-6);
        assert_eq!(la.valid, lb.valid);
    }

    #[test]
    fn d_train_continuous_across_gate_plane() {
        // At the gate, the cursor flips from gate 1 to gate 2; min() over last
        // and next distance keeps the horizon continuous.
        let track = corridor();
        let eps = 1e-4;
        let before = Vec3::new(15.0 - eps, 0.0, 3.0);
        let after = Vec3::new(15.0 + eps, 0.0, 3.0);
        let g = |i: usize| track.gates[i].center;
        let d_before = d_train(&(g(0) - before), &(g(1) - before), 1.5);
        let d_after = d_train(&(g(1) - after), &(g(2) - after), 1.5);
        assert!((d_before - d_after).abs() < 1e-3);
    }

    #[test]
    fn displaced_layout_moves_labels() {
        let expert = Expert::new(corridor(), &FeasibilityLimits::default(), ExpertConfig::default()).unwrap();
        let s = QuadState::at_rest(Vec3::new(10.0, 0.0, 3.0), 0.0);
        let base = expert.label(&s, 1, None).unwrap();
        let zeros = vec![Vec3::zeros(); 4];
        let same = expert.label(&s, 1, Some(&zeros)).unwrap();
        assert_eq!(base.label, same.label);
        let mut off = zeros.clone();
        off[1] = Vec3::new(0.0, 0.0, 1.0);
        let moved = expert.label(&s, 1, Some(&off)).unwrap();
        assert!(moved.label.x_g.y < base.label.x_g.y, "goal should move up in the image");
    }
}
