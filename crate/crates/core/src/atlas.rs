//! Synthetic flow atlases: analytic maps between box exit faces and box entry faces.
//!
//! Inside the box |x| < 2Δ, |y| < 2Δ of every critical point the flow is the exact
//! linear flow. A connecting map sends a point of the exit face {|y| = 2Δ_p} of its
//! source to a point of the entry face {|x| = 2Δ_q} of its target, after a fixed
//! transit time. Atlases may be partial; an exit point outside every window is
//! reported as leaving the modelled region.

use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::linalg::{dot, norm, scale, wrap_angle, Vector};
use crate::model::{MorseModel, Pt};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum MapKind {
    /// x̂' = ŷ, y' = (Δ_q/Δ_p) x.
    Identity,
    /// Polar cap of an exit sphere (source has no stable directions) onto the entry face
    /// x = sign·2Δ_q of a target with one stable direction. `frame` lists orthonormal
    /// columns, the last one being the cap centre.
    CapIn { frame: Vec<Vector>, width: f64, sign: f64 },
    /// Half exit face y = sign·2Δ_p of a source with one unstable direction onto a cap of
    /// angular radius `width` of the target's entry sphere (target has no unstable directions).
    CapOut { frame: Vec<Vector>, width: f64, sign: f64 },
    /// Angular window of a one-dimensional-stable, two-dimensional-unstable source onto the
    /// entry face of a two-stable, one-unstable target.
    CircleWindow { alpha0: f64, width: f64, beta0: f64, c: f64 },
    /// Arc of an exit circle onto an arc of an entry circle, affine in angle.
    Arc { a0: f64, a1: f64, b0: f64, b1: f64 },
    /// Angular strip of a (1 stable, 2 unstable) source onto a band of the entry 2-sphere.
    Strip { alpha_a: f64, alpha_b: f64, w_m: f64, phi0: f64, c: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MapSpec {
    pub source: String,
    pub target: String,
    #[serde(flatten)]
    pub kind: MapKind,
    #[serde(default = "default_time")]
    pub time: f64,
}

fn default_time() -> f64 {
    1.0
}

#[derive(Clone, Debug)]
pub struct ConnectingMap {
    pub source: usize,
    pub target: usize,
    pub kind: MapKind,
    pub time: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Atlas {
    pub maps: Vec<ConnectingMap>,
}

fn angle2(v: &[f64]) -> f64 {
    v[1].atan2(v[0])
}

fn frame_apply_t(frame: &[Vector], v: &[f64]) -> Vector {
    frame.iter().map(|c| dot(c, v)).collect()
}

fn frame_apply(frame: &[Vector], w: &[f64]) -> Vector {
    let m = frame[0].len();
    let mut out = vec![0.0; m];
    for (c, wi) in frame.iter().zip(w) {
        for k in 0..m {
            out[k] += c[k] * wi;
        }
    }
    out
}

impl ConnectingMap {
    /// Image of an exit-face point, or `None` outside the map's window.
    pub fn apply(&self, dp: f64, dq: f64, exit: &Pt) -> Option<Pt> {
        let yn = exit.yn();
        if yn <= 0.0 {
            return None;
        }
        let yh = scale(&exit.y, 1.0 / yn);
        let (dp2, dq2) = (2.0 * dp, 2.0 * dq);
        match &self.kind {
            MapKind::Identity => Some(Pt::new(scale(&yh, dq2), scale(&exit.x, dq / dp))),
            MapKind::CapIn { frame, width, sign } => {
                let c = frame.last()?;
                if dot(&yh, c) <= width.cos() {
                    return None;
                }
                let w = frame_apply_t(frame, &yh);
                let m = w.len();
                let y = scale(&w[..m - 1], dq2 / width.sin());
                Some(Pt::new(vec![sign * dq2], y))
            }
            MapKind::CapOut { frame, width, sign } => {
                if exit.y[0] * sign <= 0.0 {
                    return None;
                }
                let s = width.sin() / dp2;
                let mut v = scale(&exit.x, s);
                let r2 = dot(&v, &v);
                if r2 >= 1.0 {
                    return None;
                }
                v.push((1.0 - r2).sqrt());
                Some(Pt::new(scale(&frame_apply(frame, &v), dq2), vec![]))
            }
            MapKind::CircleWindow { alpha0, width, beta0, c } => {
                let d = wrap_angle(angle2(&yh) - alpha0);
                if d.abs() > *width {
                    return None;
                }
                let beta = beta0 + c * exit.x[0] / dp2;
                Some(Pt::new(vec![dq2 * beta.cos(), dq2 * beta.sin()], vec![dq2 * d / width]))
            }
            MapKind::Arc { a0, a1, b0, b1 } => {
                let span = a1 - a0;
                let d = (angle2(&yh) - a0).rem_euclid(TAU);
                if d <= 0.0 || d >= span {
                    return None;
                }
                let beta = b0 + d * (b1 - b0) / span;
                Some(Pt::new(vec![dq2 * beta.cos(), dq2 * beta.sin()], vec![]))
            }
            MapKind::Strip { alpha_a, alpha_b, w_m, phi0, c } => {
                let span = alpha_b - alpha_a;
                let d = (angle2(&yh) - alpha_a).rem_euclid(TAU);
                if d <= 0.0 || d >= span {
                    return None;
                }
                let lam = d / span;
                let th = w_m + lam * (PI - 2.0 * w_m);
                let ph = phi0 + c * exit.x[0] / dp2 + lam * PI;
                Some(Pt::new(
                    vec![dq2 * th.sin() * ph.cos(), dq2 * th.sin() * ph.sin(), dq2 * th.cos()],
                    vec![],
                ))
            }
        }
    }

    fn required_dims(&self) -> Option<(usize, usize, usize, usize)> {
        // (source stable, source unstable, target stable, target unstable); None = flexible
        match &self.kind {
            MapKind::Identity => None,
            MapKind::CapIn { frame, .. } => Some((0, frame.len(), 1, frame.len() - 1)),
            MapKind::CapOut { frame, .. } => Some((frame.len() - 1, 1, frame.len(), 0)),
            MapKind::CircleWindow { .. } => Some((1, 2, 2, 1)),
            MapKind::Arc { .. } => Some((0, 2, 2, 0)),
            MapKind::Strip { .. } => Some((1, 2, 3, 0)),
        }
    }
}

impl Atlas {
    pub fn from_specs(names: &[String], specs: &[MapSpec]) -> Result<Atlas> {
        let find = |s: &str| {
            names.iter().position(|n| n == s).ok_or_else(|| Error::UnknownPoint(s.to_string()))
        };
        let maps = specs
            .iter()
            .map(|s| {
                Ok(ConnectingMap { source: find(&s.source)?, target: find(&s.target)?, kind: s.kind.clone(), time: s.time })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Atlas { maps })
    }

    pub fn check(&self, model: &MorseModel) -> Result<()> {
        for m in &self.maps {
            let (p, q) = (model.cp(m.source), model.cp(m.target));
            let dims = (p.stable_dim(), p.unstable_dim(), q.stable_dim(), q.unstable_dim());
            let ok = match m.required_dims() {
                Some(r) => r == dims,
                None => dims.0 == dims.3 && dims.1 == dims.2,
            };
            if !ok {
                return Err(Error::Schema(format!("map {} -> {} has incompatible chart dimensions", p.id, q.id)));
            }
            if let MapKind::CapIn { frame, .. } | MapKind::CapOut { frame, .. } = &m.kind {
                for (i, a) in frame.iter().enumerate() {
                    if a.len() != frame.len() || (norm(a) - 1.0).abs() > 1e-9 {
                        return Err(Error::Schema("cap frame must be orthonormal".into()));
                    }
                    for b in &frame[..i] {
                        if dot(a, b).abs() > 1e-9 {
                            return Err(Error::Schema("cap frame must be orthonormal".into()));
                        }
                    }
                }
            }
            // lowest exit-face value must exceed the highest entry-face value
            let low_exit = p.value - 2.0 * p.delta * p.delta;
            let high_entry = q.value + 2.0 * q.delta * q.delta;
            if low_exit <= high_entry {
                return Err(Error::Schema(format!("values of {} and {} do not decrease across the map", p.id, q.id)));
            }
        }
        Ok(())
    }

    /// Route an exit-face point of `source`: the landing point, target and transit time.
    pub fn route(&self, model: &MorseModel, source: usize, exit: &Pt) -> Result<(usize, Pt, f64)> {
        let dp = model.cp(source).delta;
        for m in self.maps.iter().filter(|m| m.source == source) {
            let dq = model.cp(m.target).delta;
            if let Some(z) = m.apply(dp, dq, exit) {
                return Ok((m.target, z, m.time));
            }
        }
        Err(Error::LeavesModel {
            from: model.id(source).to_string(),
            detail: format!("exit point x={:?} y={:?} is outside every declared window", exit.x, exit.y),
        })
    }
}
