//! Ambient flow on the flat torus for f = cos θ + cos φ, with the vector field
//! interpolated to the linear model near each critical point.

use serde::{Deserialize, Serialize};

use crate::linalg::{norm, smoothstep, wrap_angle, Vector};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TorusField {
    /// Interpolation scale r.
    pub r: f64,
    /// Radius Δ_U of the cutoff support.
    pub delta_u: f64,
    /// Critical points (ambient position, Hessian diagonal).
    pub crit: Vec<(Vector, Vector)>,
}

impl TorusField {
    pub fn cos_cos(r: f64, delta_u: f64) -> Self {
        use std::f64::consts::PI;
        let crit = vec![
            (vec![0.0, 0.0], vec![-1.0, -1.0]),
            (vec![0.0, PI], vec![-1.0, 1.0]),
            (vec![PI, 0.0], vec![1.0, -1.0]),
            (vec![PI, PI], vec![1.0, 1.0]),
        ];
        TorusField { r, delta_u, crit }
    }

    pub fn value(&self, a: &[f64]) -> f64 {
        a[0].cos() + a[1].cos()
    }

    pub fn gradient(&self, a: &[f64]) -> Vector {
        vec![-a[0].sin(), -a[1].sin()]
    }

    /// Cutoff φ(ρ/r): 1 on the inner ball of radius rΔ_U/2, 0 outside radius rΔ_U.
    pub fn cutoff(&self, rho: f64) -> f64 {
        1.0 - smoothstep(0.5 * self.delta_u, self.delta_u, rho / self.r)
    }

    /// Y_r = (1 − φ) ∇f + φ Y_lin.
    pub fn interpolated(&self, a: &[f64]) -> Vector {
        let g = self.gradient(a);
        for (c, h) in &self.crit {
            let d: Vector = a.iter().zip(c).map(|(u, v)| wrap_angle(u - v)).collect();
            let rho = norm(&d);
            if rho < self.r * self.delta_u {
                let phi = self.cutoff(rho);
                return (0..2).map(|i| (1.0 - phi) * g[i] + phi * h[i] * d[i]).collect();
            }
        }
        g
    }

    /// Negative gradient-like flow field −Y_r.
    pub fn descent(&self, a: &[f64]) -> Vector {
        self.interpolated(a).into_iter().map(|v| -v).collect()
    }

    pub fn dist(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(u, v)| wrap_angle(u - v).powi(2)).sum::<f64>().sqrt()
    }

    pub fn wrap(&self, a: &[f64]) -> Vector {
        a.iter().map(|v| wrap_angle(*v)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn field_vanishes_at_critical_points() {
        let t = TorusField::cos_cos(1.0, 1.5);
        for (c, _) in &t.crit {
            assert!(norm(&t.interpolated(c)) < 1e-15);
        }
    }

    #[test]
    fn linear_inside_gradient_outside() {
        let t = TorusField::cos_cos(1.0, 1.5);
        let a = [0.3, -0.2];
        let v = t.interpolated(&a);
        assert!((v[0] + 0.3).abs() < 1e-15 && (v[1] - 0.2).abs() < 1e-15);
        let b = [1.2, 1.3];
        let g = t.gradient(&b);
        assert_eq!(t.interpolated(&b), g);
    }
}
