//! Critical points, normal-form charts, neighbourhoods and the exact local flow.

use serde::{Deserialize, Serialize};

use crate::atlas::Atlas;
use crate::error::{Error, Result};
use crate::linalg::{norm, Vector};
use crate::torus::TorusField;

/// Point in normal coordinates of one chart: stable part `x`, unstable part `y`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pt {
    pub x: Vector,
    pub y: Vector,
}

impl Pt {
    pub fn new(x: Vector, y: Vector) -> Self {
        Pt { x, y }
    }

    pub fn xn(&self) -> f64 {
        norm(&self.x)
    }

    pub fn yn(&self) -> f64 {
        norm(&self.y)
    }

    pub fn flat(&self) -> Vector {
        crate::linalg::concat(&self.x, &self.y)
    }

    pub fn dist(&self, o: &Pt) -> f64 {
        (crate::linalg::dist(&self.x, &o.x).powi(2) + crate::linalg::dist(&self.y, &o.y).powi(2)).sqrt()
    }
}

/// Affine map from chart coordinates (x, y) to the ambient representation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EuclideanChart {
    pub stable_dim: usize,
    pub unstable_dim: usize,
    pub centre: Vector,
    /// Row-major ambient_dim x n matrix applied to (x, y).
    pub frame: Vec<Vector>,
}

impl EuclideanChart {
    pub fn standard(stable_dim: usize, unstable_dim: usize, centre: Vector) -> Self {
        let n = stable_dim + unstable_dim;
        let frame = (0..centre.len())
            .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        EuclideanChart { stable_dim, unstable_dim, centre, frame }
    }

    pub fn embed(&self, p: &Pt) -> Vector {
        let v = p.flat();
        self.centre
            .iter()
            .zip(&self.frame)
            .map(|(c, row)| c + row.iter().zip(&v).map(|(a, b)| a * b).sum::<f64>())
            .collect()
    }

    /// Inverse of `embed` for an ambient displacement from the centre (frame is orthogonal).
    pub fn coords_of_offset(&self, d: &[f64]) -> Pt {
        let n = self.stable_dim + self.unstable_dim;
        let mut v = vec![0.0; n];
        for (i, row) in self.frame.iter().enumerate() {
            for j in 0..n {
                v[j] += row[j] * d[i];
            }
        }
        Pt::new(v[..self.stable_dim].to_vec(), v[self.stable_dim..].to_vec())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub id: String,
    pub index: usize,
    pub value: f64,
    pub delta: f64,
    pub chart: EuclideanChart,
}

impl CriticalPoint {
    pub fn stable_dim(&self) -> usize {
        self.chart.stable_dim
    }

    pub fn unstable_dim(&self) -> usize {
        self.chart.unstable_dim
    }

    pub fn check(&self, n: usize) -> Result<()> {
        if self.index > n || self.delta <= 0.0 || self.chart.unstable_dim != self.index || self.chart.stable_dim + self.index != n
        {
            return Err(Error::Schema(format!("critical point {} violates index/delta constraints", self.id)));
        }
        Ok(())
    }
}

/// Regions of a chart that admit a membership test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Region {
    /// Ũ_t
    UTildeT(f64),
    /// U_t
    UT(f64),
    /// Ũ = B̃⁺ × B̃⁻ (radius 2Δ)
    UTilde,
    /// U = B⁺ × B⁻ (radius Δ)
    U,
    /// S̃⁺ = {|x| = Δ, |y| < Δ}
    EntrySet,
    /// S̃⁻ = {|y| = Δ, |x| < Δ}
    ExitSet,
    /// S⁺ = {|x| = Δ, y = 0}
    StableSphere,
    /// S⁻ = {x = 0, |y| = Δ}
    UnstableSphere,
}

pub fn normal_form_value(p: &CriticalPoint, x: &[f64], y: &[f64]) -> Result<f64> {
    let d2 = 2.0 * p.delta;
    if x.len() != p.stable_dim() || y.len() != p.unstable_dim() {
        return Err(Error::Domain { point: p.id.clone(), detail: "coordinate dimension mismatch".into() });
    }
    let (xn, yn) = (norm(x), norm(y));
    if xn >= d2 || yn >= d2 {
        return Err(Error::Domain {
            point: p.id.clone(),
            detail: format!("|x|={xn:.3e}, |y|={yn:.3e} not below 2Δ={d2:.3e}"),
        });
    }
    Ok(p.value + 0.5 * xn * xn - 0.5 * yn * yn)
}

/// Exact flow Ψ_t(x, y) = (e^{-t} x, e^{t} y).
pub fn local_flow(t: f64, x: &[f64], y: &[f64]) -> (Vector, Vector) {
    let a = (-t).exp();
    let b = t.exp();
    (x.iter().map(|v| v * a).collect(), y.iter().map(|v| v * b).collect())
}

pub fn local_flow_pt(t: f64, p: &Pt) -> Pt {
    let (x, y) = local_flow(t, &p.x, &p.y);
    Pt { x, y }
}

pub fn membership(p: &CriticalPoint, x: &[f64], y: &[f64], region: Region, eps_sphere: f64) -> bool {
    let d = p.delta;
    let (xn, yn) = (norm(x), norm(y));
    let on = |r: f64| (r - d).abs() <= eps_sphere * d;
    match region {
        Region::UTildeT(t) => xn < (1.0 + t) * d && yn < (1.0 + t) * d && xn * yn < t * d * d,
        Region::UT(t) => xn < d && yn < d && xn * yn < d * d * t,
        Region::UTilde => xn < 2.0 * d && yn < 2.0 * d,
        Region::U => xn < d && yn < d,
        Region::EntrySet => on(xn) && yn < d,
        Region::ExitSet => on(yn) && xn < d,
        Region::StableSphere => on(xn) && yn <= eps_sphere * d,
        Region::UnstableSphere => on(yn) && xn <= eps_sphere * d,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tolerances {
    pub eps_sphere: f64,
    pub eps_event: f64,
    pub eps_match: f64,
    pub eps_stable: f64,
    pub rk_tol: f64,
    pub max_time: f64,
}

impl Tolerances {
    pub fn synthetic() -> Self {
        Tolerances { eps_sphere: 1e-9, eps_event: 1e-8, eps_match: 1e-8, eps_stable: 1e-8, rk_tol: 1e-10, max_time: 200.0 }
    }

    pub fn numeric() -> Self {
        Tolerances { eps_sphere: 1e-6, eps_event: 1e-6, eps_match: 1e-5, eps_stable: 1e-8, rk_tol: 1e-10, max_time: 200.0 }
    }
}

#[derive(Clone, Debug)]
pub enum Dynamics {
    Synthetic(Atlas),
    Torus(TorusField),
}

/// A Euclidean Morse–Smale flow model.
#[derive(Clone, Debug)]
pub struct MorseModel {
    pub name: String,
    pub dim: usize,
    pub points: Vec<CriticalPoint>,
    pub dynamics: Dynamics,
    pub tol: Tolerances,
}

impl MorseModel {
    pub fn is_synthetic(&self) -> bool {
        matches!(self.dynamics, Dynamics::Synthetic(_))
    }

    pub fn cp(&self, i: usize) -> &CriticalPoint {
        &self.points[i]
    }

    pub fn find(&self, id: &str) -> Result<usize> {
        self.points.iter().position(|p| p.id == id).ok_or_else(|| Error::UnknownPoint(id.to_string()))
    }

    pub fn id(&self, i: usize) -> &str {
        &self.points[i].id
    }

    pub fn embed(&self, cp: usize, p: &Pt) -> Vector {
        self.points[cp].chart.embed(p)
    }

    pub fn ambient_dist(&self, a: &[f64], b: &[f64]) -> f64 {
        match &self.dynamics {
            Dynamics::Torus(t) => t.dist(a, b),
            Dynamics::Synthetic(_) => crate::linalg::dist(a, b),
        }
    }

    /// Displacement b - a in the ambient representation (wrapped on the torus).
    pub fn ambient_diff(&self, a: &[f64], b: &[f64]) -> Vector {
        match &self.dynamics {
            Dynamics::Torus(_) => a.iter().zip(b).map(|(u, v)| crate::linalg::wrap_angle(v - u)).collect(),
            Dynamics::Synthetic(_) => crate::linalg::sub(b, a),
        }
    }

    pub fn check(&self) -> Result<()> {
        for p in &self.points {
            p.check(self.dim)?;
        }
        if let Dynamics::Synthetic(a) = &self.dynamics {
            a.check(self)?;
        }
        Ok(())
    }

    /// Chart coordinates of an ambient point if it lies in the box of `cp`.
    pub fn box_coords(&self, cp: usize, a: &[f64]) -> Option<Pt> {
        let c = &self.points[cp];
        let d = self.ambient_diff(&c.chart.centre, a);
        let p = c.chart.coords_of_offset(&d);
        let r = 2.0 * c.delta;
        if p.xn() < r && p.yn() < r {
            Some(p)
        } else {
            None
        }
    }

    /// Largest breaking number between two critical points is bounded by the index gap.
    pub fn max_index(&self) -> usize {
        self.points.iter().map(|p| p.index).max().unwrap_or(0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cp(value: f64, s: usize, u: usize) -> CriticalPoint {
        CriticalPoint {
            id: "p".into(),
            index: u,
            value,
            delta: 1.0,
            chart: EuclideanChart::standard(s, u, vec![0.0; s + u]),
        }
    }

    #[test]
    fn normal_form_examples() {
        assert_eq!(normal_form_value(&cp(3.0, 1, 1), &[0.0], &[0.0]).unwrap(), 3.0);
        assert_eq!(normal_form_value(&cp(0.0, 2, 0), &[1.0, 0.0], &[]).unwrap(), 0.5);
        let v = normal_form_value(&cp(1.0, 1, 1), &[0.6], &[0.8]).unwrap();
        assert!((v - 0.86).abs() < 1e-15);
        assert!(normal_form_value(&cp(1.0, 1, 1), &[2.5], &[0.0]).is_err());
    }

    #[test]
    fn local_flow_examples() {
        let (x, y) = local_flow(2f64.ln(), &[1.0, 0.0], &[0.25]);
        assert!((x[0] - 0.5).abs() < 1e-15 && x[1] == 0.0 && (y[0] - 0.5).abs() < 1e-15);
        let (x, y) = local_flow(0.0, &[0.3], &[0.7]);
        assert_eq!((x[0], y[0]), (0.3, 0.7));
    }

    #[test]
    fn membership_examples() {
        let p = cp(0.0, 1, 1);
        assert!(membership(&p, &[0.0], &[0.0], Region::UTildeT(1e-6), 1e-9));
        assert!(membership(&p, &[1.0], &[0.3], Region::EntrySet, 1e-9));
        assert!(!membership(&p, &[1.05], &[1.05], Region::UTildeT(0.1), 1e-9));
    }
}
