use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::error::{invalid, Result};
use crate::geometry::{Vec3, GRAVITY};

/// Dynamic limits the global trajectory must respect.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeasibilityLimits {
    /// Mass-normalized collective thrust bound, m/s².
    pub max_normalized_thrust: f64,
    /// Bound on the roll/pitch body-rate magnitude, rad/s.
    pub max_rollpitch_rate: f64,
    /// Speed bound, m/s.
    pub v_max_target: f64,
}

impl Default for FeasibilityLimits {
    fn default() -> Self {
        Self {
            max_normalized_thrust: 18.0,
            max_rollpitch_rate: 1.5,
            v_max_target: 10.0,
        }
    }
}

impl FeasibilityLimits {
    pub fn with_speed(v_max_target: f64) -> Self {
        Self {
            v_max_target,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.max_normalized_thrust) || !ok(self.max_rollpitch_rate) || !ok(self.v_max_target) {
            return Err(invalid("feasibility limits must be positive and finite"));
        }
        if self.max_normalized_thrust <= GRAVITY {
            return Err(invalid("thrust limit must exceed gravity"));
        }
        Ok(())
    }
}

/// Flat-output derivatives at one instant.
#[derive(Clone, Copy, Debug)]
pub struct FlatnessSample {
    pub velocity: Vec3,
    pub acceleration: Vec3,
    pub jerk: Vec3,
}

impl FlatnessSample {
    /// Values after slowing the trajectory down by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            velocity: self.velocity / factor,
            acceleration: self.acceleration / (factor * factor),
            jerk: self.jerk / (factor * factor * factor),
        }
    }

    pub fn speed(&self) -> f64 {
        self.velocity.norm()
    }

    /// Mass-normalized thrust `‖a + g ẑ‖`.
    pub fn thrust(&self) -> f64 {
        (self.acceleration + GRAVITY * Vec3::z()).norm()
    }

    /// Magnitude of the roll/pitch rate pair implied by differential
    /// flatness: the jerk component orthogonal to the thrust axis divided by
    /// the thrust. Independent of the yaw choice.
    pub fn rollpitch_rate(&self) -> f64 {
        let f = self.acceleration + GRAVITY * Vec3::z();
        let thrust = f.norm();
        if thrust < 1e-9 {
            return f64::INFINITY;
        }
        let zb = f / thrust;
        let j_perp = self.jerk - self.jerk.dot(&zb) * zb;
        j_perp.norm() / thrust
    }
}

/// Sampled maxima of the constrained quantities.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityReport {
    pub max_speed: f64,
    pub max_thrust: f64,
    pub max_rollpitch_rate: f64,
}

impl FeasibilityReport {
    pub fn from_samples<'a>(samples: impl IntoIterator<Item = &'a FlatnessSample>, factor: f64) -> Self {
        let mut r = Self::default();
        for s in samples {
            let s = s.scaled(factor);
            r.max_speed = r.max_speed.max(s.speed());
            r.max_thrust = r.max_thrust.max(s.thrust());
            r.max_rollpitch_rate = r.max_rollpitch_rate.max(s.rollpitch_rate());
        }
        r
    }

    pub fn within(&self, limits: &FeasibilityLimits, slack: f64) -> bool {
        self.max_speed <= limits.v_max_target + slack
            && self.max_thrust <= limits.max_normalized_thrust + slack
            && self.max_rollpitch_rate <= limits.max_rollpitch_rate + slack
    }
}

pub(crate) fn flatness_samples(traj: &Trajectory, samples_per_segment: usize) -> Vec<FlatnessSample> {
    traj.sample_points(samples_per_segment)
        .into_iter()
        .map(|(i, local)| {
            let s = &traj.segments()[i];
            FlatnessSample {
                velocity: s.velocity(local),
                acceleration: s.acceleration(local),
                jerk: s.jerk(local),
            }
        })
        .collect()
}

/// Sampled feasibility of a trajectory.
pub fn check_feasibility(traj: &Trajectory, samples_per_segment: usize) -> FeasibilityReport {
    FeasibilityReport::from_samples(&flatness_samples(traj, samples_per_segment), 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hover_sample() {
        let s = FlatnessSample {
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            jerk: Vec3::new(1.0, 0.0, 0.0),
        };
        assert!((s.thrust() - GRAVITY).abs() < 1e-12);
        assert!((s.rollpitch_rate() - 1.0 / GRAVITY).abs() < 1e-12);
    }

    #[test]
    fn vertical_jerk_produces_no_tilt_rate() {
        let s = FlatnessSample {
            velocity: Vec3::zeros(),
            acceleration: Vec3::zeros(),
            jerk: Vec3::new(0.0, 0.0, 5.0),
        };
        assert!(s.rollpitch_rate() < 1e-12);
    }

    #[test]
    fn default_limits_are_the_published_constants() {
        let l = FeasibilityLimits::default();
        assert_eq!(l.max_normalized_thrust, 18.0);
        assert_eq!(l.max_rollpitch_rate, 1.5);
        assert!(l.validate().is_ok());
    }
}
