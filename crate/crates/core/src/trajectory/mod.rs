//! Polynomial trajectories: the minimum-snap global reference through the
//! gates, minimum-jerk state-interception segments, and geometric queries
//! (closest point, forward look-ahead) on the global reference.

mod feasibility;
mod min_jerk;
mod min_snap;
mod poly;
mod query;

pub use feasibility::{check_feasibility, FeasibilityLimits, FeasibilityReport, FlatnessSample};
pub use min_jerk::{min_jerk_segment, segment_duration, DurationClamp};
pub use min_snap::{min_snap, MinSnapSolver, CONTINUITY_ORDER};
pub use poly::{differentiate, eval_poly, falling_factorial, integrate_square, PolySegment};
pub use query::{advance_along, advance_from_point, project_onto, TrajectoryProjection};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Vec3;

/// Samples per segment used when searching for the peak speed.
const SPEED_SAMPLES_PER_SEGMENT: usize = 400;

/// A chain of polynomial segments, optionally closed into a lap.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    segments: Vec<PolySegment>,
    start_times: Vec<f64>,
    cyclic: bool,
    total_duration: f64,
    v_max_achieved: f64,
}

#[derive(Serialize, Deserialize)]
struct TrajectoryFile {
    trajectory_version: u32,
    cyclic: bool,
    segments: Vec<PolySegment>,
}

impl Trajectory {
    pub fn new(segments: Vec<PolySegment>, cyclic: bool) -> Result<Self> {
        if segments.is_empty() {
            return Err(invalid("trajectory needs at least one segment"));
        }
        let mut start_times = Vec::with_capacity(segments.len());
        let mut acc = 0.0;
        for s in &segments {
            start_times.push(acc);
            acc += s.duration;
        }
        let mut traj = Self {
            segments,
            start_times,
            cyclic,
            total_duration: acc,
            v_max_achieved: 0.0,
        };
        traj.v_max_achieved = traj.peak_speed();
        if !(traj.v_max_achieved > 0.0) {
            return Err(invalid("trajectory never moves"));
        }
        Ok(traj)
    }

    pub fn segments(&self) -> &[PolySegment] {
        &self.segments
    }

    pub fn cyclic(&self) -> bool {
        self.cyclic
    }

    pub fn total_duration(&self) -> f64 {
        self.total_duration
    }

    pub fn v_max_achieved(&self) -> f64 {
        self.v_max_achieved
    }

    /// Start time of every segment.
    pub fn start_times(&self) -> &[f64] {
        &self.start_times
    }

    /// Wraps (cyclic) or clamps (open) a global time into the trajectory.
    pub fn normalize_time(&self, t: f64) -> f64 {
        if self.cyclic {
            t.rem_euclid(self.total_duration)
        } else {
            t.clamp(0.0, self.total_duration)
        }
    }

    /// Segment index and local time for a global time.
    pub fn locate(&self, t: f64) -> (usize, f64) {
        let t = self.normalize_time(t);
        let idx = self
            .start_times
            .partition_point(|&s| s <= t)
            .saturating_sub(1)
            .min(self.segments.len() - 1);
        let local = (t - self.start_times[idx]).min(self.segments[idx].duration);
        (idx, local)
    }

    pub fn derivative(&self, t: f64, order: usize) -> Vec3 {
        let (i, local) = self.locate(t);
        self.segments[i].derivative(local, order)
    }

    pub fn position(&self, t: f64) -> Vec3 {
        self.derivative(t, 0)
    }

    pub fn velocity(&self, t: f64) -> Vec3 {
        self.derivative(t, 1)
    }

    pub fn acceleration(&self, t: f64) -> Vec3 {
        self.derivative(t, 2)
    }

    pub fn jerk(&self, t: f64) -> Vec3 {
        self.derivative(t, 3)
    }

    /// Heading of the horizontal velocity, or `None` when nearly vertical/still.
    pub fn heading(&self, t: f64) -> Option<f64> {
        let v = self.velocity(t);
        (v.xy().norm() > 1e-6).then(|| v.y.atan2(v.x))
    }

    /// Total snap cost `Σ ∫‖p⁽⁴⁾‖² dt`.
    pub fn snap_cost(&self) -> f64 {
        self.segments.iter().map(|s| s.derivative_cost(4)).sum()
    }

    /// `samples_per_segment` evenly spaced `(segment, local time)` pairs per
    /// segment, including both segment ends.
    pub fn sample_points(&self, samples_per_segment: usize) -> Vec<(usize, f64)> {
        let n = samples_per_segment.max(2);
        let mut out = Vec::with_capacity(n * self.segments.len());
        for (i, s) in self.segments.iter().enumerate() {
            for k in 0..n {
                out.push((i, s.duration * k as f64 / (n - 1) as f64));
            }
        }
        out
    }

    /// The same path with every segment `factor` times longer.
    pub fn time_scaled(&self, factor: f64) -> Result<Self> {
        Self::new(
            self.segments.iter().map(|s| s.time_scaled(factor)).collect(),
            self.cyclic,
        )
    }

    fn peak_speed(&self) -> f64 {
        let mut best = 0.0f64;
        for (s, _) in self.segments.iter().zip(&self.start_times) {
            let n = SPEED_SAMPLES_PER_SEGMENT;
            let h = s.duration / n as f64;
            let speed = |t: f64| s.velocity(t.clamp(0.0, s.duration)).norm();
            let (mut k_best, mut v_best) = (0, speed(0.0));
            for k in 1..=n {
                let v = speed(k as f64 * h);
                if v > v_best {
                    k_best = k;
                    v_best = v;
                }
            }
            // Golden-section refinement around the best sample.
            let (mut a, mut b) = ((k_best as f64 - 1.0) * h, (k_best as f64 + 1.0) * h);
            a = a.max(0.0);
            b = b.min(s.duration);
            let ratio = 0.5 * (5f64.sqrt() - 1.0);
            for _ in 0..60 {
                let c = b - ratio * (b - a);
                let d = a + ratio * (b - a);
                if speed(c) > speed(d) {
                    b = d;
                } else {
                    a = c;
                }
            }
            best = best.max(v_best).max(speed(0.5 * (a + b)));
        }
        best
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&TrajectoryFile {
            trajectory_version: 1,
            cyclic: self.cyclic,
            segments: self.segments.clone(),
        })?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TrajectoryFile = serde_json::from_str(text)?;
        if file.trajectory_version != 1 {
            return Err(crate::error::Error::Format(format!(
                "unsupported trajectory_version {}",
                file.trajectory_version
            )));
        }
        let segments = file
            .segments
            .into_iter()
            .map(|s| PolySegment::new(s.duration, s.coeffs))
            .collect::<Result<Vec<_>>>()?;
        Self::new(segments, file.cyclic)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(duration: f64, speed: f64) -> PolySegment {
        PolySegment::new(duration, [vec![0.0, speed], vec![0.0], vec![1.0]]).unwrap()
    }

    #[test]
    fn locate_wraps_cyclic_and_clamps_open() {
        let segs = vec![line(1.0, 1.0), line(2.0, 1.0)];
        let open = Trajectory::new(segs.clone(), false).unwrap();
        assert_eq!(open.locate(1.5), (1, 0.5));
        assert_eq!(open.locate(10.0), (1, 2.0));
        let cyc = Trajectory::new(segs, true).unwrap();
        let (i, t) = cyc.locate(3.25);
        assert_eq!(i, 0);
        assert!((t - 0.25).abs() < 1e-12);
    }

    #[test]
    fn peak_speed_found() {
        let seg = PolySegment::new(2.0, [vec![0.0, 0.0, 1.0, -1.0 / 3.0], vec![0.0], vec![0.0]]).unwrap();
        // v = 2t - t², peak 1 at t = 1.
        let traj = Trajectory::new(vec![seg], false).unwrap();
        assert!((traj.v_max_achieved() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn json_round_trip() {
        let traj = Trajectory::new(vec![line(1.0, 2.0), line(0.5, 1.0)], true).unwrap();
        let back = Trajectory::from_json(&traj.to_json().unwrap()).unwrap();
        assert_eq!(traj, back);
    }
}
