use super::Trajectory;
use crate::geometry::Vec3;

/// Coarse samples per lap for the global closest-point search.
const PROJECTION_SAMPLES: usize = 1000;
const TIME_TOLERANCE: f64 = 1e-5;
/// Forward scan resolution for look-ahead searches, per lap.
const ADVANCE_STEPS: usize = 4000;

/// Closest point on a trajectory.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryProjection {
    /// Trajectory time of the closest point.
    pub time: f64,
    pub point: Vec3,
    /// Reference speed at the closest point.
    pub speed: f64,
}

/// Global minimizer of `‖traj(t) − p‖`: dense sampling, then ternary search
/// in the bracket around the best sample.
pub fn project_onto(traj: &Trajectory, p: &Vec3) -> TrajectoryProjection {
    let total = traj.total_duration();
    let n = PROJECTION_SAMPLES.max(20 * traj.segments().len());
    let h = total / n as f64;
    let dist2 = |t: f64| (traj.position(t) - p).norm_squared();
    let samples = if traj.cyclic() { n } else { n + 1 };
    let (mut k_best, mut d_best) = (0usize, f64::INFINITY);
    for k in 0..samples {
        let d = dist2(k as f64 * h);
        if d < d_best {
            k_best = k;
            d_best = d;
        }
    }
    let center = k_best as f64 * h;
    let (mut a, mut b) = (center - h, center + h);
    if !traj.cyclic() {
        a = a.max(0.0);
        b = b.min(total);
    }
    while b - a > TIME_TOLERANCE {
        let m1 = a + (b - a) / 3.0;
        let m2 = b - (b - a) / 3.0;
        if dist2(m1) <= dist2(m2) {
            b = m2;
        } else {
            a = m1;
        }
    }
    let mut time = 0.5 * (a + b);
    if dist2(center) < dist2(time) {
        time = center;
    }
    let time = traj.normalize_time(time);
    TrajectoryProjection {
        time,
        point: traj.position(time),
        speed: traj.velocity(time).norm(),
    }
}

/// First point forward of `from` whose Euclidean distance to `origin`
/// reaches `distance`. Returns its trajectory time and position.
///
/// If no point within one lap (cyclic) or before the end (open) gets that
/// far, the last point scanned is returned. If `traj(from)` is already at
/// least `distance` away, `traj(from)` itself is returned.
pub fn advance_from_point(traj: &Trajectory, from: f64, origin: &Vec3, distance: f64) -> (f64, Vec3) {
    let total = traj.total_duration();
    let h = total / ADVANCE_STEPS as f64;
    let horizon = if traj.cyclic() { total } else { (total - from).max(0.0) };
    let reach = |t: f64| (traj.position(t) - origin).norm() - distance;

    if reach(from) >= 0.0 {
        return (traj.normalize_time(from), traj.position(from));
    }
    let mut prev = from;
    let mut scanned = 0.0;
    while scanned < horizon {
        let step = h.min(horizon - scanned);
        scanned += step;
        let t = from + scanned;
        if reach(t) >= 0.0 {
            let (mut lo, mut hi) = (prev, t);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if reach(mid) >= 0.0 {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return (traj.normalize_time(hi), traj.position(hi));
        }
        prev = t;
    }
    (traj.normalize_time(prev), traj.position(prev))
}

/// Point forward along the trajectory at Euclidean distance `distance`
/// from `traj(from)`.
pub fn advance_along(traj: &Trajectory, from: f64, distance: f64) -> Vec3 {
    let origin = traj.position(from);
    advance_from_point(traj, from, &origin, distance).1
}
