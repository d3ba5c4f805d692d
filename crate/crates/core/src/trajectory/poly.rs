use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::geometry::Vec3;

/// `k! / (k - r)!`, zero when `r > k`.
pub fn falling_factorial(k: usize, r: usize) -> f64 {
    if r > k {
        return 0.0;
    }
    ((k - r + 1)..=k).map(|v| v as f64).product()
}

/// Evaluates the `deriv`-th derivative of `Σ c_k t^k`.
pub fn eval_poly(coeffs: &[f64], t: f64, deriv: usize) -> f64 {
    let mut acc = 0.0;
    for k in (deriv..coeffs.len()).rev() {
        acc = acc * t + coeffs[k] * falling_factorial(k, deriv);
    }
    acc
}

/// Coefficients of the `deriv`-th derivative.
pub fn differentiate(coeffs: &[f64], deriv: usize) -> Vec<f64> {
    (deriv..coeffs.len())
        .map(|k| coeffs[k] * falling_factorial(k, deriv))
        .collect()
}

/// Exact `∫₀ᵀ p(t)² dt` for a polynomial in monomial form.
pub fn integrate_square(coeffs: &[f64], duration: f64) -> f64 {
    let mut total = 0.0;
    for (j, a) in coeffs.iter().enumerate() {
        for (k, b) in coeffs.iter().enumerate() {
            let n = (j + k + 1) as i32;
            total += a * b * duration.powi(n) / n as f64;
        }
    }
    total
}

/// One polynomial piece per axis, time parameter in `[0, duration]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolySegment {
    pub duration: f64,
    pub coeffs: [Vec<f64>; 3],
}

impl PolySegment {
    pub fn new(duration: f64, coeffs: [Vec<f64>; 3]) -> Result<Self> {
        if !(duration > 0.0) || !duration.is_finite() {
            return Err(invalid(format!("segment duration must be positive, got {duration}")));
        }
        if coeffs.iter().flatten().any(|c| !c.is_finite()) {
            return Err(invalid("segment coefficients must be finite"));
        }
        Ok(Self { duration, coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs
            .iter()
            .map(|c| c.iter().rposition(|&v| v != 0.0).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    pub fn derivative(&self, t: f64, order: usize) -> Vec3 {
        Vec3::new(
            eval_poly(&self.coeffs[0], t, order),
            eval_poly(&self.coeffs[1], t, order),
            eval_poly(&self.coeffs[2], t, order),
        )
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

    pub fn end_position(&self) -> Vec3 {
        self.position(self.duration)
    }

    /// Exact `∫‖p⁽ʳ⁾‖² dt` over the segment.
    pub fn derivative_cost(&self, order: usize) -> f64 {
        self.coeffs
            .iter()
            .map(|c| integrate_square(&differentiate(c, order), self.duration))
            .sum()
    }

    /// The same path traversed `factor` times slower.
    pub fn time_scaled(&self, factor: f64) -> Self {
        let scale =
            |c: &Vec<f64>| -> Vec<f64> { c.iter().enumerate().map(|(k, v)| v / factor.powi(k as i32)).collect() };
        Self {
            duration: self.duration * factor,
            coeffs: [scale(&self.coeffs[0]), scale(&self.coeffs[1]), scale(&self.coeffs[2])],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn horner_matches_direct_evaluation() {
        let c = [1.0, -2.0, 0.5, 3.0];
        let t: f64 = 1.7;
        let direct = 1.0 - 2.0 * t + 0.5 * t * t + 3.0 * t.powi(3);
        assert!((eval_poly(&c, t, 0) - direct).abs() < 1e-12);
        let d1 = -2.0 + t + 9.0 * t * t;
        assert!((eval_poly(&c, t, 1) - d1).abs() < 1e-12);
        assert_eq!(eval_poly(&c, t, 4), 0.0);
    }

    #[test]
    fn square_integral_of_linear() {
        // ∫₀² (1 + t)² dt = 26/3
        assert!((integrate_square(&[1.0, 1.0], 2.0) - 26.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn time_scaling_divides_velocity() {
        let seg = PolySegment::new(2.0, [vec![0.0, 1.0, 2.0], vec![1.0; 4], vec![0.0, 0.0, 0.0, 1.0]]).unwrap();
        let slow = seg.time_scaled(2.0);
        let v = seg.velocity(0.6);
        let vs = slow.velocity(1.2);
        assert!((v / 2.0 - vs).norm() < 1e-12);
        assert!((seg.position(0.6) - slow.position(1.2)).norm() < 1e-12);
    }

    #[test]
    fn rejects_bad_duration() {
        assert!(PolySegment::new(0.0, [vec![0.0], vec![0.0], vec![0.0]]).is_err());
        assert!(PolySegment::new(1.0, [vec![f64::NAN], vec![0.0], vec![0.0]]).is_err());
    }
}
