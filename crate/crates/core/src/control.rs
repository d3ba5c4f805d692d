//! From predictions to motor-level commands: planning length, goal
//! back-projection, minimum-jerk replanning and a flatness-based tracker.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::camera::{back_project, CameraModel};
use crate::error::{invalid, Result};
use crate::geometry::{QuadState, Vec3, GRAVITY};
use crate::perception::Prediction;
use crate::trajectory::{min_jerk_segment, segment_duration, DurationClamp, PolySegment};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Speed corresponding to a normalized prediction of 1, m/s.
    pub v_max: f64,
    /// Planning length per unit speed, s.
    pub m_d: f64,
    pub d_min: f64,
    pub d_max: f64,
    pub replan_rate: f64,
    pub control_rate: f64,
    /// Lower bound on the commanded speed, m/s.
    #[serde(default = "default_v_floor")]
    pub v_des_floor: f64,
    #[serde(default)]
    pub duration_clamp: DurationClamp,
}

fn default_v_floor() -> f64 {
    0.3
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            v_max: 10.0,
            m_d: 0.5,
            d_min: 2.0,
            d_max: 5.0,
            replan_rate: 30.0,
            control_rate: 50.0,
            v_des_floor: default_v_floor(),
            duration_clamp: DurationClamp::default(),
        }
    }
}

impl PlannerConfig {
    pub fn with_speed(v_max: f64) -> Self {
        Self {
            v_max,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.v_max,
            self.m_d,
            self.d_min,
            self.replan_rate,
            self.control_rate,
            self.v_des_floor,
        ];
        if positive.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("planner speeds, rates and lengths must be positive"));
        }
        if !(self.d_min <= self.d_max) || !self.d_max.is_finite() {
            return Err(invalid("planner requires d_min <= d_max"));
        }
        if self.control_rate < self.replan_rate {
            return Err(invalid("control rate must not be below the replanning rate"));
        }
        let c = self.duration_clamp;
        if !(c.t_min > 0.0 && c.t_min <= c.t_max) {
            return Err(invalid("segment duration clamp must satisfy 0 < t_min <= t_max"));
        }
        Ok(())
    }

    /// Commanded speed for a normalized prediction.
    pub fn desired_speed(&self, v: f64) -> f64 {
        (self.v_max * v).max(self.v_des_floor)
    }
}

/// Planning length `min(d_max, max(d_min, m_d · v_des))`.
pub fn d_test(v_des: f64, cfg: &PlannerConfig) -> f64 {
    cfg.d_max.min(cfg.d_min.max(cfg.m_d * v_des))
}

/// Goal point and interception segment for one prediction.
pub fn plan_from_prediction(
    state: &QuadState,
    pred: &Prediction,
    cfg: &PlannerConfig,
    cam: &CameraModel,
) -> Result<PolySegment> {
    let v_des = cfg.desired_speed(pred.v);
    let d = d_test(v_des, cfg);
    let goal = back_project(&pred.x, d, &cam.pose(state), cam);
    let t = segment_duration(state, goal, v_des, cfg.duration_clamp)?;
    min_jerk_segment(state, goal, t)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerGains {
    pub kp_pos: f64,
    pub kd_pos: f64,
    pub kp_att: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            kp_pos: 10.0,
            kd_pos: 6.0,
            kp_att: 8.0,
        }
    }
}

impl ControllerGains {
    pub fn validate(&self) -> Result<()> {
        if [self.kp_pos, self.kd_pos, self.kp_att]
            .iter()
            .any(|g| !(*g > 0.0 && g.is_finite()))
        {
            return Err(invalid("controller gains must be positive"));
        }
        Ok(())
    }
}

pub const MAX_THRUST: f64 = 25.0;
pub const MAX_BODY_RATE: f64 = 6.0;

/// Mass-normalized collective thrust and body rates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControlCommand {
    pub collective_thrust: f64,
    pub body_rates: Vec3,
}

impl ControlCommand {
    pub fn clamped(thrust: f64, rates: Vec3) -> Self {
        Self {
            collective_thrust: thrust.clamp(0.0, MAX_THRUST),
            body_rates: rates.map(|r| r.clamp(-MAX_BODY_RATE, MAX_BODY_RATE)),
        }
    }
}

/// Position, velocity and acceleration reference at one instant, with an
/// optional heading direction (only its horizontal part is used).
#[derive(Clone, Copy, Debug)]
pub struct Reference {
    pub position: Vec3,
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub jerk: Vec3,
    pub heading: Option<Vec3>,
}

fn horizontal_yaw(dir: &Vec3) -> Option<f64> {
    (dir.x.hypot(dir.y) > 1e-6).then(|| dir.y.atan2(dir.x))
}

/// Attitude with body z along `z_axis` and body x in the vertical plane of
/// heading `yaw`.
fn attitude_from(z_axis: &Vec3, yaw: f64) -> UnitQuaternion<f64> {
    let x_c = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
    let y = z_axis.cross(&x_c);
    let y = if y.norm() > 1e-9 {
        y.normalize()
    } else {
        // Body z horizontal along the heading: keep the lateral axis level.
        Vec3::new(-yaw.sin(), yaw.cos(), 0.0)
    };
    let x = y.cross(z_axis);
    let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, *z_axis]));
    UnitQuaternion::from_rotation_matrix(&rot)
}

/// Flatness-based tracking: thrust along the desired acceleration, attitude
/// error feedback plus roll/pitch-rate feedforward from the reference jerk.
pub fn track_reference(state: &QuadState, r: &Reference, gains: &ControllerGains) -> ControlCommand {
    let yaw = r
        .heading
        .as_ref()
        .and_then(horizontal_yaw)
        .unwrap_or_else(|| state.yaw());
    let mut a_des =
        r.acceleration + gains.kp_pos * (r.position - state.position) + gains.kd_pos * (r.velocity - state.velocity);
    a_des.z += GRAVITY;
    // Saturate horizontally first so gravity compensation survives.
    let horizontal = a_des.x.hypot(a_des.y);
    if a_des.norm() > MAX_THRUST && horizontal > 0.0 {
        let room = (MAX_THRUST.powi(2) - a_des.z.clamp(0.0, MAX_THRUST).powi(2)).sqrt();
        let k = (room / horizontal).min(1.0);
        a_des.x *= k;
        a_des.y *= k;
    }
    let thrust = a_des.dot(&state.body_z());
    let (q_des, feedforward) = if a_des.norm() < 0.1 {
        (UnitQuaternion::from_euler_angles(0.0, 0.0, yaw), Vec3::zeros())
    } else {
        let z = a_des.normalize();
        let q = attitude_from(&z, yaw);
        // Roll and pitch rates that turn body z at the rate the reference
        // jerk turns the thrust vector.
        let h = (r.jerk - z * z.dot(&r.jerk)) / a_des.norm();
        let (x_b, y_b) = (q * Vec3::x(), q * Vec3::y());
        (q, Vec3::new(-h.dot(&y_b), h.dot(&x_b), 0.0))
    };
    let mut err = state.attitude.inverse() * q_des;
    if err.w < 0.0 {
        err = UnitQuaternion::new_unchecked(-err.into_inner());
    }
    ControlCommand::clamped(thrust, gains.kp_att * err.scaled_axis() + feedforward)
}

/// Reference drawn from a segment at `t` (clamped to its duration). Heading
/// follows the horizontal velocity, falling back to the start-to-end
/// direction.
pub fn segment_reference(segment: &PolySegment, t: f64) -> Reference {
    let t = t.clamp(0.0, segment.duration);
    let velocity = segment.velocity(t);
    let chord = segment.end_position() - segment.position(0.0);
    let heading = [velocity, chord].into_iter().find(|d| horizontal_yaw(d).is_some());
    Reference {
        position: segment.position(t),
        velocity,
        acceleration: segment.acceleration(t),
        jerk: segment.jerk(t),
        heading,
    }
}

pub fn track_segment(
    state: &QuadState,
    segment: &PolySegment,
    t_in_segment: f64,
    gains: &ControllerGains,
) -> ControlCommand {
    track_reference(state, &segment_reference(segment, t_in_segment), gains)
}

/// Hover in place at the current yaw.
pub fn hover_command(state: &QuadState, gains: &ControllerGains) -> ControlCommand {
    let r = Reference {
        position: state.position,
        velocity: Vec3::zeros(),
        acceleration: Vec3::zeros(),
        jerk: Vec3::zeros(),
        heading: None,
    };
    track_reference(state, &r, gains)
}

/// Fixed-rate tick detection on a uniform base clock: tick `k` of a
/// `rate`-Hz stream fires on the first base step with time ≥ k / rate.
#[derive(Clone, Copy, Debug)]
pub struct RateDivider {
    dt: f64,
    rate: f64,
}

impl RateDivider {
    pub fn new(dt: f64, rate: f64) -> Self {
        Self { dt, rate }
    }

    fn ticks_through(&self, step: u64) -> u64 {
        // Count of ticks with k / rate <= step * dt, guarded against
        // representation error on exact multiples.
        ((step as f64 * self.dt * self.rate) + 1e-9).floor() as u64
    }

    pub fn fires(&self, step: u64) -> bool {
        step == 0 || self.ticks_through(step) > self.ticks_through(step - 1)
    }
}

/// Planner state carried between ticks: the active segment, when it was
/// created and the latest prediction.
#[derive(Clone, Debug)]
pub struct RecedingHorizon {
    cfg: PlannerConfig,
    camera: CameraModel,
    gains: ControllerGains,
    active: Option<(PolySegment, f64)>,
    last_prediction: Option<Prediction>,
}

impl RecedingHorizon {
    pub fn new(cfg: PlannerConfig, camera: CameraModel, gains: ControllerGains) -> Result<Self> {
        cfg.validate()?;
        camera.validate()?;
        gains.validate()?;
        Ok(Self {
            cfg,
            camera,
            gains,
            active: None,
            last_prediction: None,
        })
    }

    pub fn config(&self) -> &PlannerConfig {
        &self.cfg
    }

    pub fn active_segment(&self) -> Option<&PolySegment> {
        self.active.as_ref().map(|(s, _)| s)
    }

    pub fn last_prediction(&self) -> Option<Prediction> {
        self.last_prediction
    }

    /// Replan tick: replaces the active segment from the current state.
    pub fn replan(&mut self, state: &QuadState, pred: Option<Prediction>) -> Result<()> {
        if let Some(p) = pred {
            self.last_prediction = Some(p);
        }
        if let Some(p) = self.last_prediction {
            let seg = plan_from_prediction(state, &p, &self.cfg, &self.camera)?;
            self.active = Some((seg, state.t));
        }
        Ok(())
    }

    /// Control tick: tracks the active segment at the time elapsed since it
    /// was planned, or hovers if nothing was planned yet.
    pub fn command(&self, state: &QuadState) -> ControlCommand {
        match &self.active {
            Some((seg, t0)) => track_segment(state, seg, state.t - t0, &self.gains),
            None => hover_command(state, &self.gains),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::ImagePoint;
    use proptest::prelude::*;

    fn example_cfg() -> PlannerConfig {
        PlannerConfig {
            m_d: 0.6,
            d_min: 1.0,
            d_max: 2.0,
            ..PlannerConfig::default()
        }
    }

    #[test]
    fn d_test_examples() {
        let cfg = example_cfg();
        assert_eq!(d_test(2.0, &cfg), 0.6 * 2.0);
        assert_eq!(d_test(5.0, &cfg), 2.0);
        assert_eq!(d_test(0.5, &cfg), 1.0);
    }

    proptest! {
        #[test]
        fn d_test_bounded_and_monotone(a in 0.0f64..30.0, b in 0.0f64..30.0) {
            let cfg = PlannerConfig::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(d_test(lo, &cfg) >= cfg.d_min && d_test(hi, &cfg) <= cfg.d_max);
            prop_assert!(d_test(lo, &cfg) <= d_test(hi, &cfg));
        }

        #[test]
        fn planned_goal_distance_is_planning_length(
            x in -1.0f64..1.0, y in -1.0f64..1.0, v in 0.0f64..1.0,
            yaw in -3.0f64..3.0, vx in -5.0f64..5.0, az in -3.0f64..3.0,
        ) {
            let cfg = PlannerConfig::default();
            let cam = CameraModel::default();
            let mut s = QuadState::at_rest(Vec3::new(1.0, -2.0, 3.0), yaw);
            s.velocity = Vec3::new(vx, 0.5, 0.0);
            s.acceleration = Vec3::new(0.0, 0.0, az);
            let pred = Prediction { x: ImagePoint::new(x, y), v };
            let seg = plan_from_prediction(&s, &pred, &cfg, &cam).unwrap();
            let d = (seg.end_position() - s.position).norm();
            prop_assert!((d - d_test(cfg.desired_speed(v), &cfg)).abs() < 1e-9);
            prop_assert!((seg.position(0.0) - s.position).norm() < 1e-10);
            prop_assert!((seg.velocity(0.0) - s.velocity).norm() < 1e-10);
            prop_assert!((seg.acceleration(0.0) - s.acceleration).norm() < 1e-10);
        }

        #[test]
        fn commands_respect_clamps(
            p in prop::array::uniform3(-50.0f64..50.0),
            v in prop::array::uniform3(-30.0f64..30.0),
            roll in -3.0f64..3.0, pitch in -1.5f64..1.5, yaw in -3.0f64..3.0,
            goal in prop::array::uniform3(-50.0f64..50.0),
            dur in 0.1f64..5.0, t in 0.0f64..6.0,
        ) {
            let mut s = QuadState::at_rest(Vec3::from(p), 0.0);
            s.velocity = Vec3::from(v);
            s.attitude = UnitQuaternion::from_euler_angles(roll, pitch, yaw);
            let seg = min_jerk_segment(&QuadState::at_rest(Vec3::zeros(), 0.0), Vec3::from(goal), dur).unwrap();
            let c = track_segment(&s, &seg, t, &ControllerGains::default());
            prop_assert!((0.0..=MAX_THRUST).contains(&c.collective_thrust));
            prop_assert!(c.body_rates.iter().all(|r| r.abs() <= MAX_BODY_RATE));
        }
    }

    #[test]
    fn hover_reference_gives_gravity_compensation() {
        let s = QuadState::at_rest(Vec3::new(0.0, 0.0, 3.0), 0.7);
        let seg = min_jerk_segment(&s, s.position, 1.0).unwrap();
        let c = track_segment(&s, &seg, 0.3, &ControllerGains::default());
        assert!((c.collective_thrust - GRAVITY).abs() < 1e-9);
        assert!(c.body_rates.norm() < 1e-9);
    }

    #[test]
    fn forward_error_pitches_toward_it() {
        let s = QuadState::at_rest(Vec3::new(0.0, 0.0, 3.0), 0.0);
        let r = Reference {
            position: Vec3::new(1.0, 0.0, 3.0),
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            jerk: Vec3::zeros(),
            heading: None,
        };
        let c = track_reference(&s, &r, &ControllerGains::default());
        // Positive rotation about body y tips body z toward +x.
        assert!(c.body_rates.y > 0.0);
        assert!(c.body_rates.x.abs() < 1e-12);
    }

    #[test]
    fn center_prediction_from_hover_goes_straight_ahead() {
        let cfg = PlannerConfig::with_speed(10.0);
        let s = QuadState::at_rest(Vec3::new(0.0, 0.0, 2.0), 0.0);
        let pred = Prediction {
            x: ImagePoint::zeros(),
            v: 0.5,
        };
        let seg = plan_from_prediction(&s, &pred, &cfg, &CameraModel::default()).unwrap();
        let goal = seg.end_position();
        assert!((goal - Vec3::new(d_test(5.0, &cfg), 0.0, 2.0)).norm() < 1e-12);
        assert_eq!(cfg.desired_speed(1.0), 10.0);
        assert_eq!(cfg.desired_speed(0.0), 0.3);
    }

    #[test]
    fn rate_divider_fires_on_schedule() {
        let d50 = RateDivider::new(0.002, 50.0);
        let d30 = RateDivider::new(0.002, 30.0);
        let n50 = (0..500).filter(|&i| d50.fires(i)).count();
        let n30 = (0..500).filter(|&i| d30.fires(i)).count();
        assert_eq!(n50, 50);
        assert_eq!(n30, 30);
        assert!((0..20).filter(|&i| d50.fires(i)).eq([0, 10]));
    }

    #[test]
    fn no_prediction_means_hover() {
        let mut rh = RecedingHorizon::new(
            PlannerConfig::default(),
            CameraModel::default(),
            ControllerGains::default(),
        )
        .unwrap();
        let s = QuadState::at_rest(Vec3::new(0.0, 0.0, 2.0), 0.0);
        rh.replan(&s, None).unwrap();
        assert!(rh.active_segment().is_none());
        let c = rh.command(&s);
        assert!((c.collective_thrust - GRAVITY).abs() < 1e-12);
    }
}
