//! Built-in example models and the JSON atlas loader.
//!
//! The synthetic atlases are flow models defined by their box-to-box maps; they are
//! not claimed to be realised by a closed manifold.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_3, FRAC_PI_4, FRAC_PI_6, PI};

use serde::Deserialize;

use crate::atlas::{Atlas, MapKind, MapSpec};
use crate::error::{Error, Result};
use crate::model::{CriticalPoint, Dynamics, EuclideanChart, MorseModel, Tolerances};
use crate::torus::TorusField;

/// Names accepted by [`by_name`].
pub const NAMES: [&str; 5] = ["sphere_height_2", "sphere_height_3", "chain3", "chain4", "torus_yr"];

fn synthetic_point(id: &str, index: usize, value: f64, delta: f64, n: usize, slot: usize) -> CriticalPoint {
    let mut centre = vec![0.0; n];
    centre[0] = 8.0 * delta * slot as f64;
    CriticalPoint { id: id.into(), index, value, delta, chart: EuclideanChart::standard(n - index, index, centre) }
}

fn build_synthetic(name: &str, n: usize, points: Vec<CriticalPoint>, specs: Vec<MapSpec>) -> Result<MorseModel> {
    let names: Vec<String> = points.iter().map(|p| p.id.clone()).collect();
    let atlas = Atlas::from_specs(&names, &specs)?;
    let m = MorseModel { name: name.into(), dim: n, points, dynamics: Dynamics::Synthetic(atlas), tol: Tolerances::synthetic() };
    m.check()?;
    Ok(m)
}

fn spec(source: &str, target: &str, kind: MapKind) -> MapSpec {
    MapSpec { source: source.into(), target: target.into(), kind, time: 1.0 }
}

fn identity_frame(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

/// Height function on Sⁿ: a maximum and a minimum joined by the identity map.
pub fn sphere_height(n: usize) -> MorseModel {
    let points = vec![synthetic_point("max", n, 5.0, 1.0, n, 0), synthetic_point("min", 0, 0.0, 1.0, n, 1)];
    build_synthetic(&format!("sphere_height_{n}"), n, points, vec![spec("max", "min", MapKind::Identity)]).unwrap()
}

/// Exit cap half-width of the maximum and entry cap half-width of the minimum in chain3.
pub const CHAIN3_W: f64 = FRAC_PI_4;
pub const CHAIN3_WM: f64 = FRAC_PI_4;

/// Dimension 2: max > s > min, two lines per adjacent pair.
pub fn chain3() -> MorseModel {
    let (w, wm) = (CHAIN3_W, CHAIN3_WM);
    let points = vec![
        synthetic_point("max", 2, 10.0, 1.0, 2, 0),
        synthetic_point("s", 1, 5.0, 1.0, 2, 1),
        synthetic_point("min", 0, 0.0, 1.0, 2, 2),
    ];
    let specs = vec![
        spec("max", "s", MapKind::CapIn { frame: vec![vec![1.0, 0.0], vec![0.0, 1.0]], width: w, sign: 1.0 }),
        spec("max", "s", MapKind::CapIn { frame: vec![vec![-1.0, 0.0], vec![0.0, -1.0]], width: w, sign: -1.0 }),
        spec("max", "min", MapKind::Arc { a0: -FRAC_PI_2 + w, a1: FRAC_PI_2 - w, b0: -FRAC_PI_2 + wm, b1: FRAC_PI_2 - wm }),
        spec(
            "max",
            "min",
            MapKind::Arc { a0: FRAC_PI_2 + w, a1: 3.0 * FRAC_PI_2 - w, b0: 3.0 * FRAC_PI_2 - wm, b1: FRAC_PI_2 + wm },
        ),
        spec("s", "min", MapKind::CapOut { frame: identity_frame(2), width: wm, sign: 1.0 }),
        spec("s", "min", MapKind::CapOut { frame: vec![vec![-1.0, 0.0], vec![0.0, -1.0]], width: wm, sign: -1.0 }),
    ];
    build_synthetic("chain3", 2, points, specs).unwrap()
}

/// Dimension 3: max > s1 > s2 > min, with breaking number 2 between max and min.
pub fn chain4() -> MorseModel {
    let w = FRAC_PI_4;
    let (ww, c) = (FRAC_PI_6, FRAC_PI_3);
    let points = vec![
        synthetic_point("max", 3, 15.0, 1.0, 3, 0),
        synthetic_point("s1", 2, 10.0, 1.0, 3, 1),
        synthetic_point("s2", 1, 5.0, 1.0, 3, 2),
        synthetic_point("min", 0, 0.0, 1.0, 3, 3),
    ];
    let flip3 = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, -1.0]];
    let specs = vec![
        spec("max", "s1", MapKind::CapIn { frame: identity_frame(3), width: w, sign: 1.0 }),
        spec("max", "s1", MapKind::CapIn { frame: flip3.clone(), width: w, sign: -1.0 }),
        spec("s1", "s2", MapKind::CircleWindow { alpha0: 0.0, width: ww, beta0: 0.0, c }),
        spec("s1", "s2", MapKind::CircleWindow { alpha0: PI, width: ww, beta0: PI, c }),
        spec("s1", "min", MapKind::Strip { alpha_a: ww, alpha_b: PI - ww, w_m: w, phi0: 0.0, c }),
        spec("s1", "min", MapKind::Strip { alpha_a: PI + ww, alpha_b: 2.0 * PI - ww, w_m: w, phi0: PI, c }),
        spec("s2", "min", MapKind::CapOut { frame: identity_frame(3), width: w, sign: 1.0 }),
        spec("s2", "min", MapKind::CapOut { frame: flip3, width: w, sign: -1.0 }),
    ];
    build_synthetic("chain4", 3, points, specs).unwrap()
}

/// f = cos θ + cos φ on the flat torus with the interpolated vector field.
pub fn torus_yr() -> MorseModel {
    torus_with(0.25, 1.0, 1.5)
}

pub fn torus_with(delta: f64, r: f64, delta_u: f64) -> MorseModel {
    let chart = |s: usize, u: usize, c: Vec<f64>, frame: Vec<Vec<f64>>| EuclideanChart {
        stable_dim: s,
        unstable_dim: u,
        centre: c,
        frame,
    };
    let id2 = identity_frame(2);
    let swap = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let points = vec![
        CriticalPoint { id: "max".into(), index: 2, value: 2.0, delta, chart: chart(0, 2, vec![0.0, 0.0], id2.clone()) },
        CriticalPoint { id: "sA".into(), index: 1, value: 0.0, delta, chart: chart(1, 1, vec![0.0, PI], swap) },
        CriticalPoint { id: "sB".into(), index: 1, value: 0.0, delta, chart: chart(1, 1, vec![PI, 0.0], id2.clone()) },
        CriticalPoint { id: "min".into(), index: 0, value: -2.0, delta, chart: chart(2, 0, vec![PI, PI], id2) },
    ];
    let m = MorseModel {
        name: "torus_yr".into(),
        dim: 2,
        points,
        dynamics: Dynamics::Torus(TorusField::cos_cos(r, delta_u)),
        tol: Tolerances::numeric(),
    };
    m.check().unwrap();
    m
}

pub fn by_name(name: &str) -> Option<MorseModel> {
    match name {
        "chain3" => Some(chain3()),
        "chain4" => Some(chain4()),
        "torus_yr" | "torus" => Some(torus_yr()),
        _ => name.strip_prefix("sphere_height_").and_then(|n| n.parse().ok()).filter(|n| *n >= 1).map(sphere_height),
    }
}

#[derive(Deserialize)]
struct PointSpec {
    id: String,
    index: usize,
    value: f64,
    #[serde(default = "one")]
    delta: f64,
    #[serde(default)]
    centre: Option<Vec<f64>>,
    #[serde(default)]
    frame: Option<Vec<Vec<f64>>>,
}

fn one() -> f64 {
    1.0
}

#[derive(Deserialize)]
struct AmbientSpec {
    #[serde(rename = "type")]
    kind: String,
    #[serde(default)]
    f: Option<String>,
    #[serde(default = "one")]
    r: f64,
    #[serde(default)]
    delta_u: Option<f64>,
}

#[derive(Deserialize)]
struct ModelSpec {
    #[serde(default)]
    name: Option<String>,
    dimension: usize,
    critical_points: Vec<PointSpec>,
    #[serde(default)]
    connecting_maps: Vec<MapSpec>,
    #[serde(default)]
    ambient: Option<AmbientSpec>,
}

/// Parse a model from the JSON atlas format.
pub fn from_json(text: &str) -> Result<MorseModel> {
    let s: ModelSpec = serde_json::from_str(text)?;
    let n = s.dimension;
    if let Some(a) = &s.ambient {
        if a.kind != "torus" {
            return Err(Error::Schema(format!("unsupported ambient type '{}'", a.kind)));
        }
        let f = a.f.as_deref().unwrap_or("cos(theta)+cos(phi)").replace(' ', "");
        if f != "cos(theta)+cos(phi)" {
            return Err(Error::Schema(format!("unsupported ambient function '{f}'")));
        }
        let delta = s.critical_points.first().map(|p| p.delta).unwrap_or(0.25);
        let mut m = torus_with(delta, a.r, a.delta_u.unwrap_or(1.5));
        if let Some(name) = s.name {
            m.name = name;
        }
        return Ok(m);
    }
    let mut points = Vec::new();
    for (slot, p) in s.critical_points.iter().enumerate() {
        if p.index > n {
            return Err(Error::Schema(format!("critical point {} has index above the dimension", p.id)));
        }
        let mut cp = synthetic_point(&p.id, p.index, p.value, p.delta, n, slot);
        if let Some(c) = &p.centre {
            if c.len() != n {
                return Err(Error::Schema(format!("centre of {} has wrong dimension", p.id)));
            }
            cp.chart.centre = c.clone();
        }
        if let Some(f) = &p.frame {
            if f.len() != n || f.iter().any(|r| r.len() != n) {
                return Err(Error::Schema(format!("frame of {} must be {n}x{n}", p.id)));
            }
            cp.chart.frame = f.clone();
        }
        points.push(cp);
    }
    build_synthetic(s.name.as_deref().unwrap_or("model"), n, points, s.connecting_maps)
}

/// Load a built-in model by name, or a JSON atlas file by path.
pub fn load(name_or_path: &str) -> Result<MorseModel> {
    if let Some(m) = by_name(name_or_path) {
        return Ok(m);
    }
    let text = std::fs::read_to_string(name_or_path)
        .map_err(|e| Error::Io(format!("'{name_or_path}' is neither a built-in model nor a readable file: {e}")))?;
    from_json(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtin_indices() {
        let m = sphere_height(2);
        assert_eq!(m.points.iter().map(|p| p.index).collect::<Vec<_>>(), vec![2, 0]);
        let t = torus_yr();
        assert_eq!(t.points.iter().map(|p| p.index).collect::<Vec<_>>(), vec![2, 1, 1, 0]);
        for name in NAMES {
            assert!(by_name(name).is_some());
        }
    }

    #[test]
    fn json_roundtrip_of_sphere() {
        let text = r#"{"dimension": 2,
            "critical_points": [{"id": "max", "index": 2, "value": 5, "delta": 1},
                                {"id": "min", "index": 0, "value": 0, "delta": 1}],
            "connecting_maps": [{"source": "max", "target": "min", "kind": "identity"}]}"#;
        let m = from_json(text).unwrap();
        assert_eq!(m.points.len(), 2);
        assert!(m.is_synthetic());
    }

    #[test]
    fn json_rejects_increasing_values() {
        let text = r#"{"dimension": 1,
            "critical_points": [{"id": "a", "index": 1, "value": 0},
                                {"id": "b", "index": 0, "value": 1}],
            "connecting_maps": [{"source": "a", "target": "b", "kind": "identity"}]}"#;
        assert!(matches!(from_json(text), Err(Error::Schema(_))));
    }

    #[test]
    fn torus_gradient_vanishes_at_charts() {
        let t = torus_yr();
        let Dynamics::Torus(f) = &t.dynamics else { panic!() };
        for p in &t.points {
            let g = f.gradient(&p.chart.centre);
            assert!(g.iter().all(|v| v.abs() < 1e-15));
        }
    }
}
