//! Minimum-snap piecewise polynomials through waypoints.
//!
//! Each axis is an independent equality-constrained QP over degree-7
//! coefficients. Coefficients are solved in normalized segment time
//! `σ = τ / T ∈ [0, 1]` for conditioning and converted afterwards.

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::feasibility::{flatness_samples, FeasibilityLimits, FeasibilityReport};
use super::poly::{falling_factorial, PolySegment};
use super::Trajectory;
use crate::error::{invalid, Error, Result};
use crate::geometry::{is_finite, Vec3};

const COEFFS: usize = 8;
const SNAP: usize = 4;
/// Highest derivative forced continuous across interior joints.
pub const CONTINUITY_ORDER: usize = 4;
/// Derivatives pinned to zero at the ends of an open trajectory.
const REST_ORDER: usize = 3;
const FEASIBILITY_SAMPLES: usize = 200;
/// Relative margin kept below each limit so off-grid samples stay feasible.
const LIMIT_MARGIN: f64 = 1e-3;

/// One linear constraint row: coefficient entries and the waypoint whose
/// coordinate forms the right-hand side (zero otherwise).
struct Row {
    entries: Vec<(usize, f64)>,
    waypoint: Option<usize>,
}

/// Factorized KKT system for fixed segment durations; re-solving for new
/// waypoints costs one back-substitution per axis.
pub struct MinSnapSolver {
    durations: Vec<f64>,
    cyclic: bool,
    rows: Vec<Row>,
    lu: LU<f64, Dyn, Dyn>,
}

impl MinSnapSolver {
    pub fn new(durations: Vec<f64>, cyclic: bool) -> Result<Self> {
        let n = durations.len();
        if n == 0 || durations.iter().any(|&t| !(t > 0.0) || !t.is_finite()) {
            return Err(invalid("segment durations must be positive"));
        }
        if cyclic && n < 3 {
            return Err(invalid("cyclic trajectory needs at least three segments"));
        }
        let rows = constraint_rows(&durations, cyclic);
        let vars = n * COEFFS;
        let size = vars + rows.len();
        let mut kkt = DMatrix::<f64>::zeros(size, size);

        let mean_t = durations.iter().sum::<f64>() / n as f64;
        for (i, &t) in durations.iter().enumerate() {
            // ∫₀ᵀ (d⁴p/dτ⁴)² dτ = T⁻⁷ ∫₀¹ (d⁴p/dσ⁴)² dσ, normalized by the mean duration.
            let w = (mean_t / t).powi(7);
            for j in SNAP..COEFFS {
                for k in SNAP..COEFFS {
                    let q = falling_factorial(j, SNAP) * falling_factorial(k, SNAP) / (j + k - 2 * SNAP + 1) as f64;
                    kkt[(i * COEFFS + j, i * COEFFS + k)] = 2.0 * w * q;
                }
            }
        }
        for (r, row) in rows.iter().enumerate() {
            for &(col, v) in &row.entries {
                kkt[(vars + r, col)] += v;
                kkt[(col, vars + r)] += v;
            }
        }
        let lu = kkt.lu();
        if !lu.is_invertible() {
            return Err(Error::Numerical("singular minimum-snap KKT system".into()));
        }
        Ok(Self {
            durations,
            cyclic,
            rows,
            lu,
        })
    }

    pub fn durations(&self) -> &[f64] {
        &self.durations
    }

    pub fn waypoint_count(&self) -> usize {
        if self.cyclic {
            self.durations.len()
        } else {
            self.durations.len() + 1
        }
    }

    /// Minimum-snap segments through `waypoints` with the stored durations.
    pub fn solve(&self, waypoints: &[Vec3]) -> Result<Vec<PolySegment>> {
        if waypoints.len() != self.waypoint_count() {
            return Err(invalid(format!(
                "expected {} waypoints, got {}",
                self.waypoint_count(),
                waypoints.len()
            )));
        }
        let n = self.durations.len();
        let vars = n * COEFFS;
        let mut axes: [Vec<Vec<f64>>; 3] = Default::default();
        for axis in 0..3 {
            let mut rhs = DVector::<f64>::zeros(vars + self.rows.len());
            for (r, row) in self.rows.iter().enumerate() {
                if let Some(w) = row.waypoint {
                    rhs[vars + r] = waypoints[w][axis];
                }
            }
            let sol = self
                .lu
                .solve(&rhs)
                .ok_or_else(|| Error::Numerical("minimum-snap solve failed".into()))?;
            axes[axis] = (0..n)
                .map(|i| {
                    let t = self.durations[i];
                    (0..COEFFS).map(|k| sol[i * COEFFS + k] / t.powi(k as i32)).collect()
                })
                .collect();
        }
        let [xs, ys, zs] = axes;
        xs.into_iter()
            .zip(ys)
            .zip(zs)
            .zip(&self.durations)
            .map(|(((x, y), z), &t)| PolySegment::new(t, [x, y, z]))
            .collect()
    }
}

fn constraint_rows(durations: &[f64], cyclic: bool) -> Vec<Row> {
    let n = durations.len();
    let n_wp = if cyclic { n } else { n + 1 };
    let at_end = |seg: usize, order: usize| -> Vec<(usize, f64)> {
        (order..COEFFS)
            .map(|k| (seg * COEFFS + k, falling_factorial(k, order)))
            .collect()
    };
    let mut rows = Vec::new();
    for i in 0..n {
        rows.push(Row {
            entries: vec![(i * COEFFS, 1.0)],
            waypoint: Some(i),
        });
        rows.push(Row {
            entries: at_end(i, 0),
            waypoint: Some((i + 1) % n_wp),
        });
    }
    let joints = if cyclic { n } else { n - 1 };
    for i in 0..joints {
        let next = (i + 1) % n;
        let ratio = durations[i] / durations[next];
        for r in 1..=CONTINUITY_ORDER {
            // Real-time derivative match, multiplied through by Tᵢʳ.
            let mut entries = at_end(i, r);
            entries.push((next * COEFFS + r, -ratio.powi(r as i32) * falling_factorial(r, r)));
            rows.push(Row {
                entries,
                waypoint: None,
            });
        }
    }
    if !cyclic {
        for r in 1..=REST_ORDER {
            rows.push(Row {
                entries: vec![(r, falling_factorial(r, r))],
                waypoint: None,
            });
            rows.push(Row {
                entries: at_end(n - 1, r),
                waypoint: None,
            });
        }
    }
    rows
}

fn validate_waypoints(waypoints: &[Vec3], cyclic: bool) -> Result<()> {
    if waypoints.iter().any(|w| !is_finite(w)) {
        return Err(invalid("waypoints must be finite"));
    }
    let min = if cyclic { 3 } else { 2 };
    if waypoints.len() < min {
        return Err(invalid(format!("need at least {min} waypoints")));
    }
    let pairs = if cyclic { waypoints.len() } else { waypoints.len() - 1 };
    for i in 0..pairs {
        let j = (i + 1) % waypoints.len();
        if (waypoints[j] - waypoints[i]).norm() < 1e-9 {
            return Err(invalid(format!("waypoints {i} and {j} coincide")));
        }
    }
    if cyclic {
        let mut distinct: Vec<Vec3> = Vec::new();
        for w in waypoints {
            if distinct.iter().all(|d| (d - w).norm() > 1e-9) {
                distinct.push(*w);
            }
        }
        if distinct.len() < 3 {
            return Err(invalid("cyclic track needs at least three distinct waypoints"));
        }
    }
    Ok(())
}

/// Minimum-snap trajectory through `waypoints`, uniformly time-scaled to the
/// fastest version that respects `limits`.
///
/// Open trajectories start and end at rest. Initial segment times are
/// proportional to waypoint spacing over the target speed.
pub fn min_snap(waypoints: &[Vec3], cyclic: bool, limits: &FeasibilityLimits) -> Result<Trajectory> {
    validate_waypoints(waypoints, cyclic)?;
    limits.validate()?;
    let n_seg = if cyclic { waypoints.len() } else { waypoints.len() - 1 };
    let durations: Vec<f64> = (0..n_seg)
        .map(|i| (waypoints[(i + 1) % waypoints.len()] - waypoints[i]).norm() / limits.v_max_target)
        .collect();
    let solver = MinSnapSolver::new(durations, cyclic)?;
    let base = Trajectory::new(solver.solve(waypoints)?, cyclic)?;

    let samples = flatness_samples(&base, FEASIBILITY_SAMPLES);
    let tight = FeasibilityLimits {
        max_normalized_thrust: limits.max_normalized_thrust * (1.0 - LIMIT_MARGIN),
        max_rollpitch_rate: limits.max_rollpitch_rate * (1.0 - LIMIT_MARGIN),
        v_max_target: limits.v_max_target * (1.0 - LIMIT_MARGIN),
    };
    let feasible = |s: f64| FeasibilityReport::from_samples(&samples, s).within(&tight, 0.0);

    let mut hi = 1.0;
    let mut steps = 0;
    while !feasible(hi) {
        hi *= 2.0;
        steps += 1;
        if steps > 60 {
            return Err(Error::Numerical("no feasible time scaling found".into()));
        }
    }
    let mut lo = hi;
    while feasible(lo) {
        lo *= 0.5;
        steps += 1;
        if steps > 120 {
            return Err(Error::Numerical("time scaling did not bracket".into()));
        }
    }
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if feasible(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    base.time_scaled(hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square() -> Vec<Vec3> {
        vec![
            Vec3::new(0.0, 0.0, 2.0),
            Vec3::new(10.0, 0.0, 2.0),
            Vec3::new(10.0, 10.0, 3.0),
            Vec3::new(0.0, 10.0, 2.0),
        ]
    }

    #[test]
    fn two_point_rest_to_rest_stays_on_segment() {
        let wp = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
        let traj = min_snap(&wp, false, &FeasibilityLimits::with_speed(2.0)).unwrap();
        for (i, t) in traj.sample_points(100) {
            let p = traj.segments()[i].position(t);
            assert!(p.y.abs() < 1e-12 && p.z.abs() < 1e-12);
            assert!(p.x > -1e-9 && p.x < 1.0 + 1e-9);
        }
        assert!(traj.velocity(0.0).norm() < 1e-9);
        assert!(traj.velocity(traj.total_duration()).norm() < 1e-9);
    }

    #[test]
    fn passes_through_waypoints_and_is_smooth() {
        let wp = square();
        let traj = min_snap(&wp, true, &FeasibilityLimits::default()).unwrap();
        for (w, t0) in wp.iter().zip(traj.start_times()) {
            assert!((traj.position(*t0) - w).norm() < 1e-6);
        }
        let segs = traj.segments();
        for i in 0..segs.len() {
            let a = &segs[i];
            let b = &segs[(i + 1) % segs.len()];
            for r in 0..=CONTINUITY_ORDER {
                let da = a.derivative(a.duration, r);
                let db = b.derivative(0.0, r);
                assert!((da - db).norm() < 1e-6 * (1.0 + da.norm()), "order {r} joint {i}");
            }
        }
    }

    #[test]
    fn respects_limits() {
        let limits = FeasibilityLimits::default();
        let traj = min_snap(&square(), true, &limits).unwrap();
        let r = super::super::check_feasibility(&traj, 1000);
        assert!(r.within(&limits, 1e-6), "{r:?}");
        // Tight: at least one constraint is nearly active.
        assert!(
            r.max_speed > 0.99 * limits.v_max_target
                || r.max_thrust > 0.99 * limits.max_normalized_thrust
                || r.max_rollpitch_rate > 0.99 * limits.max_rollpitch_rate
        );
    }

    #[test]
    fn rejects_degenerate_input() {
        let l = FeasibilityLimits::default();
        let p = Vec3::new(1.0, 0.0, 0.0);
        assert!(min_snap(&[Vec3::zeros(), p, Vec3::zeros()], true, &l).is_err());
        assert!(min_snap(&[Vec3::zeros(), Vec3::zeros()], false, &l).is_err());
        assert!(min_snap(&[Vec3::zeros(), Vec3::new(f64::NAN, 0.0, 0.0)], false, &l).is_err());
        assert!(min_snap(&[Vec3::zeros()], false, &l).is_err());
    }

    #[test]
    fn solver_reuse_matches_fresh_solution() {
        let wp = square();
        let traj = min_snap(&wp, true, &FeasibilityLimits::default()).unwrap();
        let durations: Vec<f64> = traj.segments().iter().map(|s| s.duration).collect();
        let solver = MinSnapSolver::new(durations, true).unwrap();
        let segs = solver.solve(&wp).unwrap();
        for (a, b) in segs.iter().zip(traj.segments()) {
            for t in [0.0, 0.3 * a.duration, a.duration] {
                assert!((a.position(t) - b.position(t)).norm() < 1e-8);
            }
        }
    }
}
