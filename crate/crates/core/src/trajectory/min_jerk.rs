use serde::{Deserialize, Serialize};

use super::poly::PolySegment;
use crate::error::{invalid, Result};
use crate::geometry::{is_finite, QuadState, Vec3};

/// Minimum-jerk segment from the full start state (position, velocity,
/// acceleration) to a goal position, with free terminal velocity and
/// acceleration.
///
/// Per axis the optimal jerk is `j(t) = α t²/2 + β t + γ` with the natural
/// boundary conditions `j(T) = 0` and `ĵ(T) = 0`, which gives
/// `α = 20Δp/T⁵`, `β = −20Δp/T⁴`, `γ = 10Δp/T³` for the residual
/// `Δp = p_goal − (p₀ + v₀T + a₀T²/2)`.
pub fn min_jerk_segment(start: &QuadState, goal: Vec3, duration: f64) -> Result<PolySegment> {
    if !(duration > 0.0) || !duration.is_finite() {
        return Err(invalid(format!("segment duration must be positive, got {duration}")));
    }
    if !is_finite(&start.position) || !is_finite(&start.velocity) || !is_finite(&start.acceleration) {
        return Err(invalid("start state must be finite"));
    }
    if !is_finite(&goal) {
        return Err(invalid("goal must be finite"));
    }
    let t = duration;
    let axis = |i: usize| -> Vec<f64> {
        let (p0, v0, a0) = (start.position[i], start.velocity[i], start.acceleration[i]);
        let dp = goal[i] - (p0 + v0 * t + 0.5 * a0 * t * t);
        let alpha = 20.0 * dp / t.powi(5);
        let beta = -20.0 * dp / t.powi(4);
        let gamma = 10.0 * dp / t.powi(3);
        vec![p0, v0, 0.5 * a0, gamma / 6.0, beta / 24.0, alpha / 120.0]
    };
    PolySegment::new(duration, [axis(0), axis(1), axis(2)])
}

/// Bounds on the execution time of interception segments.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DurationClamp {
    pub t_min: f64,
    pub t_max: f64,
}

impl Default for DurationClamp {
    fn default() -> Self {
        Self {
            t_min: 0.1,
            t_max: 10.0,
        }
    }
}

/// Execution time `distance / v_des`, clamped to `[t_min, t_max]`.
pub fn segment_duration(start: &QuadState, goal: Vec3, v_des: f64, clamp: DurationClamp) -> Result<f64> {
    if !(v_des > 0.0) || !v_des.is_finite() {
        return Err(invalid(format!("desired speed must be positive, got {v_des}")));
    }
    let dist = (goal - start.position).norm();
    if dist == 0.0 {
        return Ok(clamp.t_min);
    }
    Ok((dist / v_des).clamp(clamp.t_min, clamp.t_max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(p: [f64; 3], v: [f64; 3], a: [f64; 3]) -> QuadState {
        let mut s = QuadState::at_rest(Vec3::from(p), 0.0);
        s.velocity = Vec3::from(v);
        s.acceleration = Vec3::from(a);
        s
    }

    #[test]
    fn at_rest_on_goal_is_constant() {
        let s = state([1.0, 2.0, 3.0], [0.0; 3], [0.0; 3]);
        let seg = min_jerk_segment(&s, s.position, 1.5).unwrap();
        assert_eq!(seg.derivative_cost(3), 0.0);
        for k in 0..=10 {
            let t = 0.15 * k as f64;
            assert!((seg.position(t) - s.position).norm() < 1e-15);
        }
    }

    #[test]
    fn boundary_conditions() {
        let s = state([1.0, -2.0, 3.0], [2.0, 0.5, -1.0], [0.3, -0.2, 1.0]);
        let goal = Vec3::new(4.0, 1.0, 2.0);
        let seg = min_jerk_segment(&s, goal, 0.8).unwrap();
        assert!((seg.position(0.0) - s.position).norm() < 1e-10);
        assert!((seg.velocity(0.0) - s.velocity).norm() < 1e-10);
        assert!((seg.acceleration(0.0) - s.acceleration).norm() < 1e-10);
        assert!((seg.end_position() - goal).norm() < 1e-10);
        // Free terminal acceleration/velocity: jerk and snap vanish at the end.
        assert!(seg.jerk(0.8).norm() < 1e-9);
        assert!(seg.derivative(0.8, 4).norm() < 1e-9);
        assert!(seg.degree() <= 5);
    }

    #[test]
    fn duration_examples() {
        let s = state([0.0; 3], [0.0; 3], [0.0; 3]);
        let c = DurationClamp::default();
        let d = segment_duration(&s, Vec3::new(2.0, 0.0, 0.0), 2.0, c).unwrap();
        assert!((d - 1.0).abs() < 1e-15);
        assert_eq!(segment_duration(&s, Vec3::zeros(), 2.0, c).unwrap(), c.t_min);
        assert_eq!(
            segment_duration(&s, Vec3::new(100.0, 0.0, 0.0), 1.0, c).unwrap(),
            c.t_max
        );
        assert!(segment_duration(&s, Vec3::zeros(), 0.0, c).is_err());
    }

    #[test]
    fn rejects_non_finite() {
        let s = state([0.0; 3], [f64::NAN, 0.0, 0.0], [0.0; 3]);
        assert!(min_jerk_segment(&s, Vec3::zeros(), 1.0).is_err());
        let s = state([0.0; 3], [0.0; 3], [0.0; 3]);
        assert!(min_jerk_segment(&s, Vec3::new(f64::INFINITY, 0.0, 0.0), 1.0).is_err());
        assert!(min_jerk_segment(&s, Vec3::zeros(), 0.0).is_err());
    }

    proptest! {
        // The rest-to-rest quintic is a feasible competitor; the free-end
        // optimum can never cost more.
        #[test]
        fn never_worse_than_rest_to_rest(
            p in prop::array::uniform3(-5.0f64..5.0),
            v in prop::array::uniform3(-5.0f64..5.0),
            a in prop::array::uniform3(-5.0f64..5.0),
            g in prop::array::uniform3(-5.0f64..5.0),
            t in 0.1f64..3.0,
        ) {
            let s = state(p, v, a);
            let goal = Vec3::from(g);
            let seg = min_jerk_segment(&s, goal, t).unwrap();
            let rest = rest_to_rest(&s, goal, t);
            let c = seg.derivative_cost(3);
            prop_assert!(c <= rest.derivative_cost(3) * (1.0 + 1e-9) + 1e-12);
        }
    }

    /// Quintic with p, v, a at both ends; end velocity and acceleration zero.
    fn rest_to_rest(s: &QuadState, goal: Vec3, t: f64) -> PolySegment {
        let axis = |i: usize| {
            let (p0, v0, a0) = (s.position[i], s.velocity[i], s.acceleration[i]);
            let (t2, t3, t4, t5) = (t * t, t.powi(3), t.powi(4), t.powi(5));
            let dp = goal[i] - p0 - v0 * t - 0.5 * a0 * t2;
            let dv = -v0 - a0 * t;
            let da = -a0;
            // Solve for c3, c4, c5 from the terminal conditions.
            let c3 = (10.0 * dp - 4.0 * dv * t + 0.5 * da * t2) / t3;
            let c4 = (-15.0 * dp + 7.0 * dv * t - da * t2) / t4;
            let c5 = (6.0 * dp - 3.0 * dv * t + 0.5 * da * t2) / t5;
            vec![p0, v0, 0.5 * a0, c3, c4, c5]
        };
        let seg = PolySegment::new(t, [axis(0), axis(1), axis(2)]).unwrap();
        assert!((seg.end_position() - goal).norm() < 1e-6 * (1.0 + goal.norm()) + 1e-6);
        assert!(seg.velocity(t).norm() < 1e-6 * (1.0 + s.velocity.norm() / t));
        seg
    }
}
