//! Fixed-step quadrotor simulation with multi-rate perception and control,
//! gate events, moving gates and a drifting-odometry baseline.

use std::io::Write;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::camera::CameraModel;
use crate::control::{
    track_reference, ControlCommand, ControllerGains, PlannerConfig, RateDivider, RecedingHorizon, Reference,
};
use crate::error::{invalid, Result};
use crate::expert::{Expert, ExpertConfig, ExpertOutput};
use crate::geometry::{Gate, QuadState, Track, Vec3, GRAVITY};
use crate::perception::{Observation, Perception, Prediction};
use crate::render::{render, Raster, SceneConfig};
use crate::rng::{streams, RngStream};
use crate::trajectory::{FeasibilityLimits, Trajectory};

pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt_dynamics: f64,
    pub rate_ctrl: f64,
    pub rate_percep: f64,
    /// Time constant of the body-rate response, s.
    pub body_rate_tau: f64,
    pub drone_radius: f64,
    pub gravity: f64,
    pub timeout_factor: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt_dynamics: 0.002,
            rate_ctrl: 50.0,
            rate_percep: 30.0,
            body_rate_tau: 0.03,
            drone_radius: 0.3,
            gravity: GRAVITY,
            timeout_factor: 3.0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.dt_dynamics,
            self.rate_ctrl,
            self.rate_percep,
            self.body_rate_tau,
            self.drone_radius,
            self.gravity,
            self.timeout_factor,
        ];
        if all.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(invalid("simulation parameters must be positive"));
        }
        if self.dt_dynamics > 1.0 / self.rate_ctrl {
            return Err(invalid("dynamics step must not exceed the control period"));
        }
        Ok(())
    }
}

/// One integration step: first-order body-rate lag (exact discretization),
/// attitude by the exponential map, then semi-implicit Euler on velocity and
/// position with the thrust direction of the updated attitude.
pub fn dynamics_step(state: &QuadState, cmd: &ControlCommand, dt: f64, cfg: &SimConfig) -> QuadState {
    let decay = (-dt / cfg.body_rate_tau).exp();
    let rates = cmd.body_rates + (state.body_rates - cmd.body_rates) * decay;
    let q = state.attitude * UnitQuaternion::from_scaled_axis(rates * dt);
    let attitude = UnitQuaternion::new_normalize(q.into_inner());
    let acceleration = attitude * Vec3::z() * cmd.collective_thrust - Vec3::z() * cfg.gravity;
    let velocity = state.velocity + acceleration * dt;
    QuadState {
        t: state.t + dt,
        position: state.position + velocity * dt,
        velocity,
        acceleration,
        attitude,
        body_rates: rates,
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateEventKind {
    Pass,
    Crash,
}

/// Classifies the motion `prev → new` against a gate displaced by `offset`.
///
/// Only crossings of the gate plane are considered. A forward crossing
/// inside the opening shrunk by `radius` passes; any crossing within
/// `frame + radius` of the opening edge hits the frame.
pub fn gate_event(prev: &Vec3, new: &Vec3, gate: &Gate, offset: &Vec3, radius: f64) -> Option<GateEventKind> {
    let c = gate.center + offset;
    let n = gate.normal();
    let (s0, s1) = (n.dot(&(prev - c)), n.dot(&(new - c)));
    let forward = s0 < 0.0 && s1 >= 0.0;
    let backward = s0 >= 0.0 && s1 < 0.0;
    if !forward && !backward {
        return None;
    }
    let q = prev + (new - prev) * (s0 / (s0 - s1));
    let rel = q - c;
    let (u, w) = (gate.lateral().dot(&rel).abs(), rel.z.abs());
    let (hw, hh) = (0.5 * gate.inner_width, 0.5 * gate.inner_height);
    if u <= hw - radius && w <= hh - radius {
        return forward.then_some(GateEventKind::Pass);
    }
    let reach = gate.frame_thickness + radius;
    (u <= hw + reach && w <= hh + reach).then_some(GateEventKind::Crash)
}

/// Sinusoidal displacement of one gate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateMotion {
    pub amplitude_multiplier: f64,
    pub base_size: f64,
    /// Angular frequency per axis, rad/s.
    pub omega: Vec3,
    pub phase: Vec3,
}

impl GateMotion {
    pub fn still(base_size: f64) -> Self {
        Self {
            amplitude_multiplier: 0.0,
            base_size,
            omega: Vec3::zeros(),
            phase: Vec3::zeros(),
        }
    }

    /// Frequencies uniform in [0.4, 1.2] rad/s, phases uniform in [0, 2π).
    pub fn sample(rng: &mut RngStream, multiplier: f64, base_size: f64) -> Self {
        let omega = Vec3::from_fn(|_, _| rng.uniform(0.4, 1.2));
        let phase = Vec3::from_fn(|_, _| rng.uniform(0.0, std::f64::consts::TAU));
        Self {
            amplitude_multiplier: multiplier,
            base_size,
            omega,
            phase,
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude_multiplier * self.base_size
    }
}

/// Per-axis `amplitude · sin(ω t + φ)`.
pub fn gate_offset(motion: &GateMotion, t: f64) -> Vec3 {
    let a = motion.amplitude();
    Vec3::from_fn(|i, _| a * (motion.omega[i] * t + motion.phase[i]).sin())
}

/// Motions for every gate of a track, drawn from the episode seed.
pub fn sample_track_motion(track: &Track, multiplier: f64, seed: u64) -> Vec<GateMotion> {
    let mut rng = RngStream::new(seed, streams::GATE_MOTION);
    track
        .gates
        .iter()
        .map(|g| GateMotion::sample(&mut rng, multiplier, g.base_size))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    Crashed,
    Timeout,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GateEvent {
    pub t: f64,
    /// Gate index within the track; `None` for ground and bounds crashes.
    pub gate: Option<usize>,
    pub kind: GateEventKind,
}

/// Per control tick record.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub position: Vec3,
    pub velocity: Vec3,
    /// `(w, x, y, z)`.
    pub attitude: [f64; 4],
    pub prediction: Option<Prediction>,
    pub command: ControlCommand,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeTrace {
    pub records: Vec<TraceRecord>,
    pub gate_events: Vec<GateEvent>,
    pub outcome: Outcome,
    pub gates_passed: usize,
    pub lap_times: Vec<f64>,
    pub duration: f64,
    pub gate_count: usize,
    pub laps_for_success: u32,
}

/// Summary document written next to a JSON-lines trace.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeSummary {
    pub trace_version: u32,
    pub outcome: Outcome,
    pub gates_passed: usize,
    pub completion: f64,
    pub lap_times: Vec<f64>,
    pub best_lap_s: Option<f64>,
    pub duration: f64,
    pub gate_events: Vec<GateEvent>,
}

impl EpisodeTrace {
    /// Completion against this trace's own lap requirement.
    pub fn completion(&self) -> f64 {
        completion_for(self.gates_passed, self.gate_count, self.laps_for_success)
    }

    pub fn best_lap(&self) -> Option<f64> {
        self.lap_times.iter().copied().reduce(f64::min)
    }

    pub fn summary(&self) -> EpisodeSummary {
        EpisodeSummary {
            trace_version: TRACE_VERSION,
            outcome: self.outcome,
            gates_passed: self.gates_passed,
            completion: self.completion(),
            lap_times: self.lap_times.clone(),
            best_lap_s: self.best_lap(),
            duration: self.duration,
            gate_events: self.gate_events.clone(),
        }
    }

    /// One JSON object per control tick, each tagged with the trace version.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        #[derive(Serialize)]
        struct Line<'a> {
            trace_version: u32,
            #[serde(flatten)]
            record: &'a TraceRecord,
        }
        for record in &self.records {
            serde_json::to_writer(
                &mut w,
                &Line {
                    trace_version: TRACE_VERSION,
                    record,
                },
            )?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// `gates_passed / (laps · gate_count)`, capped at one.
pub fn completion_for(gates_passed: usize, gate_count: usize, laps: u32) -> f64 {
    (gates_passed as f64 / (laps as usize * gate_count) as f64).min(1.0)
}

pub fn completion_rate(trace: &EpisodeTrace, track: &Track) -> f64 {
    completion_for(trace.gates_passed, track.gate_count(), track.laps_for_success)
}

/// Gate cursor, events and lap bookkeeping for one flight.
#[derive(Clone, Debug, Default)]
pub struct RaceProgress {
    pub gates_passed: usize,
    pub events: Vec<GateEvent>,
    pub lap_times: Vec<f64>,
    lap_start: f64,
}

impl RaceProgress {
    pub fn next_gate(&self, track: &Track) -> usize {
        self.gates_passed % track.gate_count()
    }

    /// Applies the events of one motion step; returns a terminal outcome.
    pub fn update(
        &mut self,
        prev: &Vec3,
        new: &Vec3,
        t: f64,
        track: &Track,
        offsets: &[Vec3],
        radius: f64,
    ) -> Option<Outcome> {
        let n = track.gate_count();
        let next = self.next_gate(track);
        for (i, gate) in track.gates.iter().enumerate() {
            match gate_event(prev, new, gate, &offsets[i], radius) {
                Some(GateEventKind::Crash) => {
                    self.events.push(GateEvent {
                        t,
                        gate: Some(i),
                        kind: GateEventKind::Crash,
                    });
                    return Some(Outcome::Crashed);
                }
                Some(GateEventKind::Pass) if i == next => {
                    self.events.push(GateEvent {
                        t,
                        gate: Some(i),
                        kind: GateEventKind::Pass,
                    });
                    self.gates_passed += 1;
                    if self.gates_passed.is_multiple_of(n) {
                        self.lap_times.push(t - self.lap_start);
                        self.lap_start = t;
                    }
                    if self.gates_passed >= n * track.laps_for_success as usize {
                        return Some(Outcome::Completed);
                    }
                }
                _ => {}
            }
        }
        if !track.in_bounds(new) {
            self.events.push(GateEvent {
                t,
                gate: None,
                kind: GateEventKind::Crash,
            });
            return Some(Outcome::Crashed);
        }
        None
    }
}

/// Everything about an episode except the perception backend and the scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EpisodeConfig {
    pub planner: PlannerConfig,
    pub gains: ControllerGains,
    pub sim: SimConfig,
    pub camera: CameraModel,
    /// Thrust and roll/pitch-rate limits of the global trajectory; its speed
    /// limit is taken from the planner.
    pub limits: FeasibilityLimits,
    pub d_min_train: f64,
    pub gate_motion_multiplier: f64,
    /// Half-width of the uniform start-position jitter per axis, m.
    pub start_jitter: f64,
    /// Keep per-tick records in the trace.
    pub record_ticks: bool,
}

impl Default for EpisodeConfig {
    fn default() -> Self {
        Self {
            planner: PlannerConfig::default(),
            gains: ControllerGains::default(),
            sim: SimConfig::default(),
            camera: CameraModel::default(),
            limits: FeasibilityLimits::default(),
            d_min_train: ExpertConfig::default().d_min_train,
            gate_motion_multiplier: 0.0,
            start_jitter: 0.1,
            record_ticks: true,
        }
    }
}

impl EpisodeConfig {
    pub fn with_speed(v_max: f64) -> Self {
        Self {
            planner: PlannerConfig::with_speed(v_max),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.planner.validate()?;
        self.gains.validate()?;
        self.sim.validate()?;
        self.camera.validate()?;
        self.global_limits().validate()?;
        if self.planner.control_rate != self.sim.rate_ctrl || self.planner.replan_rate != self.sim.rate_percep {
            return Err(invalid("planner and simulator disagree on control or perception rates"));
        }
        if !(self.gate_motion_multiplier >= 0.0 && self.gate_motion_multiplier.is_finite()) {
            return Err(invalid("gate motion multiplier must be non-negative"));
        }
        if !(self.start_jitter >= 0.0 && self.start_jitter.is_finite()) {
            return Err(invalid("start jitter must be non-negative"));
        }
        Ok(())
    }

    pub fn global_limits(&self) -> FeasibilityLimits {
        FeasibilityLimits {
            v_max_target: self.planner.v_max,
            ..self.limits
        }
    }

    pub fn expert_config(&self) -> ExpertConfig {
        ExpertConfig {
            d_min_train: self.d_min_train,
            camera: self.camera.clone(),
        }
    }

    /// Time limit for completing the required laps.
    pub fn timeout(&self, track: &Track) -> f64 {
        self.sim.timeout_factor * track.laps_for_success as f64 * track.loop_length() / self.planner.v_max
    }
}

/// A track with its expert (global trajectory), shared by many episodes.
pub struct Course {
    pub expert: Expert,
}

impl Course {
    pub fn new(track: Track, cfg: &EpisodeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            expert: Expert::new(track, &cfg.global_limits(), cfg.expert_config())?,
        })
    }

    pub fn track(&self) -> &Track {
        self.expert.track()
    }
}

/// Seconds of the global trajectory flown before reaching gate 0 at the start
/// of an episode.
pub const START_LEAD_TIME: f64 = 1.0;

/// Flying start: the global trajectory's state `START_LEAD_TIME` before
/// gate 0, attitude aligned with the thrust the reference needs, position
/// jittered uniformly per axis.
pub fn start_state(traj: &Trajectory, track: &Track, gravity: f64, jitter: f64, seed: u64) -> QuadState {
    let mut rng = RngStream::new(seed, streams::START_JITTER);
    let t0 = -START_LEAD_TIME;
    let yaw = traj.heading(t0).unwrap_or(track.gates[0].yaw);
    let mut state = QuadState::at_rest(traj.position(t0), yaw);
    state.position += Vec3::from_fn(|_, _| rng.uniform(-jitter, jitter));
    state.velocity = traj.velocity(t0);
    state.acceleration = traj.acceleration(t0);
    let thrust_dir = (state.acceleration + Vec3::z() * gravity).normalize();
    let tilt = UnitQuaternion::rotation_between(&Vec3::z(), &thrust_dir).unwrap_or_else(UnitQuaternion::identity);
    state.attitude = tilt * state.attitude;
    state
}

/// One flight, stepped by the caller. Perception decisions are made outside
/// so that episodes and data collection share the same loop.
pub struct Flight<'a> {
    course: &'a Course,
    cfg: &'a EpisodeConfig,
    scene: SceneConfig,
    motion: Vec<GateMotion>,
    planner: RecedingHorizon,
    state: QuadState,
    step: u64,
    ctrl: RateDivider,
    percep: RateDivider,
    command: ControlCommand,
    progress: RaceProgress,
    records: Vec<TraceRecord>,
    timeout: f64,
    outcome: Option<Outcome>,
}

impl<'a> Flight<'a> {
    pub fn new(course: &'a Course, cfg: &'a EpisodeConfig, scene: SceneConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        scene.validate()?;
        let track = course.track();
        let motion = if cfg.gate_motion_multiplier > 0.0 {
            sample_track_motion(track, cfg.gate_motion_multiplier, seed)
        } else {
            track.gates.iter().map(|g| GateMotion::still(g.base_size)).collect()
        };
        let state = start_state(
            course.expert.trajectory(),
            track,
            cfg.sim.gravity,
            cfg.start_jitter,
            seed,
        );
        let planner = RecedingHorizon::new(cfg.planner.clone(), cfg.camera.clone(), cfg.gains)?;
        let command = crate::control::hover_command(&state, &cfg.gains);
        Ok(Self {
            course,
            cfg,
            scene,
            motion,
            planner,
            state,
            step: 0,
            ctrl: RateDivider::new(cfg.sim.dt_dynamics, cfg.sim.rate_ctrl),
            percep: RateDivider::new(cfg.sim.dt_dynamics, cfg.sim.rate_percep),
            command,
            progress: RaceProgress::default(),
            records: Vec::new(),
            timeout: cfg.timeout(track),
            outcome: None,
        })
    }

    pub fn state(&self) -> &QuadState {
        &self.state
    }

    pub fn progress(&self) -> &RaceProgress {
        &self.progress
    }

    pub fn outcome(&self) -> Option<Outcome> {
        self.outcome
    }

    pub fn scene(&self) -> &SceneConfig {
        &self.scene
    }

    pub fn offsets(&self) -> Vec<Vec3> {
        self.motion.iter().map(|m| gate_offset(m, self.state.t)).collect()
    }

    fn moving(&self) -> bool {
        self.cfg.gate_motion_multiplier > 0.0
    }

    /// True when the upcoming step starts with a perception tick.
    pub fn perception_due(&self) -> bool {
        self.percep.fires(self.step)
    }

    pub fn expert_output(&self) -> Result<ExpertOutput> {
        let next = self.progress.next_gate(self.course.track());
        if self.moving() {
            self.course.expert.label(&self.state, next, Some(&self.offsets()))
        } else {
            self.course.expert.label(&self.state, next, None)
        }
    }

    pub fn render(&self) -> Raster {
        render(
            self.course.track(),
            &self.offsets(),
            &self.cfg.camera.pose(&self.state),
            &self.cfg.camera,
            &self.scene,
        )
    }

    /// Replaces the active segment using `pred` (or the last prediction).
    pub fn replan(&mut self, pred: Option<Prediction>) -> Result<()> {
        self.planner.replan(&self.state, pred)
    }

    /// Advances one dynamics step; returns the outcome once terminal.
    pub fn advance(&mut self) -> Option<Outcome> {
        if self.outcome.is_some() {
            return self.outcome;
        }
        if self.ctrl.fires(self.step) {
            self.command = self.planner.command(&self.state);
            if self.cfg.record_ticks {
                let q = self.state.attitude.quaternion();
                self.records.push(TraceRecord {
                    t: self.state.t,
                    position: self.state.position,
                    velocity: self.state.velocity,
                    attitude: [q.w, q.i, q.j, q.k],
                    prediction: self.planner.last_prediction(),
                    command: self.command,
                });
            }
        }
        let prev = self.state.position;
        self.step += 1;
        let mut next = dynamics_step(&self.state, &self.command, self.cfg.sim.dt_dynamics, &self.cfg.sim);
        // Time from the step counter so long flights do not accumulate error.
        next.t = self.step as f64 * self.cfg.sim.dt_dynamics;
        self.state = next;
        let offsets = self.offsets();
        let radius = self.cfg.sim.drone_radius;
        self.outcome = self.progress.update(
            &prev,
            &self.state.position,
            self.state.t,
            self.course.track(),
            &offsets,
            radius,
        );
        if self.outcome.is_none() && !self.state.is_finite() {
            self.outcome = Some(Outcome::Crashed);
        }
        if self.outcome.is_none() && self.state.t >= self.timeout {
            self.outcome = Some(Outcome::Timeout);
        }
        self.outcome
    }

    pub fn into_trace(self) -> EpisodeTrace {
        let track = self.course.track();
        EpisodeTrace {
            records: self.records,
            gate_events: self.progress.events,
            outcome: self.outcome.unwrap_or(Outcome::Timeout),
            gates_passed: self.progress.gates_passed,
            lap_times: self.progress.lap_times,
            duration: self.state.t,
            gate_count: track.gate_count(),
            laps_for_success: track.laps_for_success,
        }
    }
}

/// Flies one episode with `perception` until completion, crash or timeout.
pub fn run_episode(
    course: &Course,
    scene: &SceneConfig,
    perception: &mut Perception,
    cfg: &EpisodeConfig,
    seed: u64,
) -> Result<EpisodeTrace> {
    let mut flight = Flight::new(course, cfg, scene.clone(), seed)?;
    loop {
        if flight.perception_due() {
            let label = if perception.backend().needs_label() {
                Some(flight.expert_output()?.label)
            } else {
                None
            };
            let raster = perception.backend().needs_raster().then(|| flight.render());
            let pred = perception.predict(Observation {
                label: label.as_ref(),
                raster: raster.as_ref(),
            })?;
            flight.replan(pred)?;
        }
        if flight.advance().is_some() {
            return Ok(flight.into_trace());
        }
    }
}

/// Random-walk position bias of a drifting odometry estimate. The bias takes
/// one independent step per `step_length` meters traveled, with per-axis
/// standard deviation `sigma_per_meter · step_length`.
#[derive(Clone, Debug)]
pub struct DriftModel {
    pub sigma_per_meter: f64,
    pub step_length: f64,
    rng: RngStream,
    bias: Vec3,
    pending: f64,
}

impl DriftModel {
    pub fn new(sigma_per_meter: f64, seed: u64) -> Result<Self> {
        if !(sigma_per_meter >= 0.0 && sigma_per_meter.is_finite()) {
            return Err(invalid("drift sigma must be non-negative"));
        }
        Ok(Self {
            sigma_per_meter,
            step_length: 1.0,
            rng: RngStream::new(seed, streams::DRIFT),
            bias: Vec3::zeros(),
            pending: 0.0,
        })
    }

    pub fn bias(&self) -> Vec3 {
        self.bias
    }

    /// Accounts for `distance` meters of travel and returns the bias.
    pub fn advance(&mut self, distance: f64) -> Vec3 {
        self.pending += distance;
        while self.pending >= self.step_length {
            self.pending -= self.step_length;
            let s = self.sigma_per_meter * self.step_length;
            let step = Vec3::from_fn(|_, _| s * self.rng.normal());
            self.bias += step;
        }
        self.bias
    }
}

/// Tracks the global trajectory by time against a drifting position
/// estimate. Gate events use the true state.
pub fn vio_baseline_episode(course: &Course, drift: &mut DriftModel, cfg: &EpisodeConfig) -> Result<EpisodeTrace> {
    cfg.validate()?;
    let track = course.track();
    let traj = course.expert.trajectory();
    let t0 = -START_LEAD_TIME;
    let mut state = start_state(traj, track, cfg.sim.gravity, 0.0, 0);
    let offsets = vec![Vec3::zeros(); track.gate_count()];
    let ctrl = RateDivider::new(cfg.sim.dt_dynamics, cfg.sim.rate_ctrl);
    let timeout = cfg.timeout(track);
    let mut progress = RaceProgress::default();
    let mut records = Vec::new();
    let mut command = ControlCommand::clamped(cfg.sim.gravity, Vec3::zeros());
    let mut step = 0u64;
    let outcome = loop {
        if ctrl.fires(step) {
            let mut estimate = state.clone();
            estimate.position += drift.bias();
            let tr = t0 + state.t;
            let r = Reference {
                position: traj.position(tr),
                velocity: traj.velocity(tr),
                acceleration: traj.acceleration(tr),
                jerk: traj.jerk(tr),
                heading: Some(traj.velocity(tr)),
            };
            command = track_reference(&estimate, &r, &cfg.gains);
            if cfg.record_ticks {
                let q = state.attitude.quaternion();
                records.push(TraceRecord {
                    t: state.t,
                    position: state.position,
                    velocity: state.velocity,
                    attitude: [q.w, q.i, q.j, q.k],
                    prediction: None,
                    command,
                });
            }
        }
        let prev = state.position;
        step += 1;
        state = dynamics_step(&state, &command, cfg.sim.dt_dynamics, &cfg.sim);
        state.t = step as f64 * cfg.sim.dt_dynamics;
        drift.advance((state.position - prev).norm());
        if let Some(o) = progress.update(&prev, &state.position, state.t, track, &offsets, cfg.sim.drone_radius) {
            break o;
        }
        if !state.is_finite() {
            break Outcome::Crashed;
        }
        if state.t >= timeout {
            break Outcome::Timeout;
        }
    };
    Ok(EpisodeTrace {
        records,
        gate_events: progress.events,
        outcome,
        gates_passed: progress.gates_passed,
        lap_times: progress.lap_times,
        duration: state.t,
        gate_count: track.gate_count(),
        laps_for_success: track.laps_for_success,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::perception::Backend;
    use proptest::prelude::*;

    fn level() -> QuadState {
        QuadState::at_rest(Vec3::new(0.0, 0.0, 5.0), 0.0)
    }

    #[test]
    fn free_fall_one_step() {
        let cmd = ControlCommand::clamped(0.0, Vec3::zeros());
        let s = dynamics_step(&level(), &cmd, 0.01, &SimConfig::default());
        assert!((s.velocity.z + 0.0981).abs() < 1e-15);
    }

    #[test]
    fn hover_is_an_equilibrium() {
        let cmd = ControlCommand::clamped(GRAVITY, Vec3::zeros());
        let s0 = level();
        let s = dynamics_step(&s0, &cmd, 0.002, &SimConfig::default());
        assert!((s.position - s0.position).norm() < 1e-12);
    }

    #[test]
    fn free_fall_does_not_gain_energy() {
        let cfg = SimConfig::default();
        let cmd = ControlCommand::clamped(0.0, Vec3::zeros());
        let mut s = QuadState::at_rest(Vec3::new(0.0, 0.0, 10.0), 0.0);
        s.velocity = Vec3::new(3.0, -1.0, 2.0);
        let energy = |s: &QuadState| 0.5 * s.velocity.norm_squared() + cfg.gravity * s.position.z;
        let e0 = energy(&s);
        let mut prev = e0;
        let per_step = 0.5 * (cfg.gravity * cfg.dt_dynamics).powi(2);
        for _ in 0..500 {
            s = dynamics_step(&s, &cmd, cfg.dt_dynamics, &cfg);
            let e = energy(&s);
            assert!(e <= prev + 1e-12);
            assert!((prev - e - per_step).abs() < 1e-9);
            prev = e;
        }
        assert!((e0 - prev).abs() / e0 < 1e-3);
    }

    proptest! {
        #[test]
        fn attitude_stays_unit(rates in prop::array::uniform3(-6.0f64..6.0), thrust in 0.0f64..25.0) {
            let cfg = SimConfig::default();
            let cmd = ControlCommand::clamped(thrust, Vec3::from(rates));
            let mut s = level();
            for _ in 0..200 {
                s = dynamics_step(&s, &cmd, cfg.dt_dynamics, &cfg);
                prop_assert!((s.attitude.norm() - 1.0).abs() < 1e-12);
            }
        }
    }

    fn gate() -> Gate {
        Gate::new(0, Vec3::new(0.0, 0.0, 3.0), 0.0)
    }

    #[test]
    fn gate_event_examples() {
        let g = gate();
        let z = Vec3::zeros();
        let through = |y: f64| gate_event(&Vec3::new(-0.1, y, 3.0), &Vec3::new(0.1, y, 3.0), &g, &z, 0.3);
        assert_eq!(through(0.0), Some(GateEventKind::Pass));
        assert_eq!(through(0.75 - 0.01), Some(GateEventKind::Crash));
        assert_eq!(through(5.0), None);
        let parallel = gate_event(&Vec3::new(-0.5, -1.0, 3.0), &Vec3::new(-0.5, 1.0, 3.0), &g, &z, 0.3);
        assert_eq!(parallel, None);
        let backward = gate_event(&Vec3::new(0.1, 0.0, 3.0), &Vec3::new(-0.1, 0.0, 3.0), &g, &z, 0.3);
        assert_eq!(backward, None);
        let moved = gate_event(
            &Vec3::new(-0.1, 2.0, 3.0),
            &Vec3::new(0.1, 2.0, 3.0),
            &g,
            &Vec3::new(0.0, 2.0, 0.0),
            0.3,
        );
        assert_eq!(moved, Some(GateEventKind::Pass));
    }

    #[test]
    fn gate_offset_examples() {
        let mut rng = RngStream::new(3, streams::GATE_MOTION);
        let still = GateMotion::sample(&mut rng, 0.0, 1.3);
        for k in 0..50 {
            assert_eq!(gate_offset(&still, 0.37 * k as f64), Vec3::zeros());
        }
        let m = GateMotion {
            amplitude_multiplier: 1.0,
            base_size: 1.3,
            omega: Vec3::new(0.5, 0.8, 1.1),
            phase: Vec3::zeros(),
        };
        assert_eq!(gate_offset(&m, 0.0), Vec3::zeros());
        let peak = (0..20000)
            .map(|k| gate_offset(&m, k as f64 * 0.001))
            .fold(Vec3::zeros(), |a, o| a.zip_map(&o, |x, y| x.max(y.abs())));
        assert!(peak.iter().all(|p| (p - 1.3).abs() < 1e-4));
        let m = GateMotion {
            phase: Vec3::new(0.3, 1.0, 2.0),
            ..m
        };
        for i in 0..3 {
            let period = std::f64::consts::TAU / m.omega[i];
            let (a, b) = (gate_offset(&m, 1.7), gate_offset(&m, 1.7 + period));
            assert!((a[i] - b[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn completion_examples() {
        assert_eq!(completion_for(40, 8, 5), 1.0);
        assert_eq!(completion_for(4, 8, 5), 0.1);
        assert_eq!(completion_for(0, 8, 5), 0.0);
        assert_eq!(completion_for(55, 8, 5), 1.0);
    }

    #[test]
    fn passing_every_gate_center_counts_each_once_per_lap() {
        let track = Track::small();
        let offsets = vec![Vec3::zeros(); track.gate_count()];
        let mut progress = RaceProgress::default();
        let mut t = 0.0;
        for _lap in 0..2 {
            for g in &track.gates {
                let (a, b) = (g.center - 0.5 * g.normal(), g.center + 0.5 * g.normal());
                t += 1.0;
                assert_eq!(progress.update(&a, &b, t, &track, &offsets, 0.3), None);
            }
        }
        assert_eq!(progress.gates_passed, 2 * track.gate_count());
        assert_eq!(progress.events.len(), 2 * track.gate_count());
        assert_eq!(progress.lap_times, vec![4.0, 4.0]);
    }

    #[test]
    fn out_of_order_gate_is_not_credited() {
        let track = Track::small();
        let offsets = vec![Vec3::zeros(); track.gate_count()];
        let mut progress = RaceProgress::default();
        let g = &track.gates[1];
        progress.update(
            &(g.center - g.normal()),
            &(g.center + g.normal()),
            1.0,
            &track,
            &offsets,
            0.3,
        );
        assert_eq!(progress.gates_passed, 0);
    }

    #[test]
    fn drift_bias_is_a_random_walk_in_distance() {
        let mut d = DriftModel::new(0.0, 1).unwrap();
        assert_eq!(d.advance(100.0), Vec3::zeros());
        // Variance after L meters is L · σ² per axis.
        let runs = 400;
        let mut sq = [0.0; 2];
        for seed in 0..runs {
            let mut d = DriftModel::new(0.01, seed).unwrap();
            sq[0] += d.advance(50.0).norm_squared();
            sq[1] += d.advance(150.0).norm_squared();
        }
        let (v50, v200) = (sq[0] / runs as f64, sq[1] / runs as f64);
        assert!((v50 / (3.0 * 50.0 * 1e-4) - 1.0).abs() < 0.2);
        assert!((v200 / (3.0 * 200.0 * 1e-4) - 1.0).abs() < 0.2);
    }

    #[test]
    fn short_time_limit_ends_in_timeout() {
        let track = Track::small();
        let mut cfg = EpisodeConfig::with_speed(6.0);
        cfg.sim.timeout_factor = 0.05;
        cfg.record_ticks = false;
        let course = Course::new(track, &cfg).unwrap();
        let mut p = Perception::new(Backend::Oracle, 0);
        let trace = run_episode(&course, &SceneConfig::default(), &mut p, &cfg, 1).unwrap();
        assert_eq!(trace.outcome, Outcome::Timeout);
        assert!((trace.duration - cfg.timeout(course.track())).abs() < 0.01);
        assert!(trace.gates_passed < 20);
        assert!(trace.gate_events.iter().all(|e| e.kind == GateEventKind::Pass));
    }
}
