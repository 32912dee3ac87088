//! Generalized (broken) trajectories, their sampled images, lengths and the metric d_M̄.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{norm, Vector};
use crate::model::{membership, local_flow_pt, Dynamics, MorseModel, Pt, Region};

/// One smooth piece of a flow line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Leg {
    /// s ↦ (e^{-s} x0, e^{s} y0), s ∈ [t0, t1], in the chart of `cp`.
    /// t0 = -∞ requires x0 = 0, t1 = +∞ requires y0 = 0.
    Local {
        cp: usize,
        x0: Vector,
        y0: Vector,
        #[serde(with = "ext_real")]
        t0: f64,
        #[serde(with = "ext_real")]
        t1: f64,
    },
    /// Flow outside the chart boxes, sampled in the ambient representation (endpoints included).
    Transit { from: Option<usize>, to: Option<usize>, time: f64, path: Vec<Vector>, times: Vec<f64> },
}

/// Serialises ±∞ as the strings "inf" / "-inf" (JSON has no infinities).
mod ext_real {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str(if *v > 0.0 { "inf" } else { "-inf" })
        } else {
            s.serialize_f64(*v)
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Str(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Str(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                _ => Err(serde::de::Error::custom(format!("invalid time '{s}'"))),
            },
        }
    }
}

impl Leg {
    pub fn duration(&self) -> f64 {
        match self {
            Leg::Local { t0, t1, .. } => t1 - t0,
            Leg::Transit { time, .. } => *time,
        }
    }

    pub fn local_point(&self, s: f64) -> Option<Pt> {
        match self {
            Leg::Local { x0, y0, .. } => Some(local_point(x0, y0, s)),
            _ => None,
        }
    }
}

pub fn local_point(x0: &[f64], y0: &[f64], s: f64) -> Pt {
    let x = if norm(x0) == 0.0 { vec![0.0; x0.len()] } else { x0.iter().map(|v| v * (-s).exp()).collect() };
    let y = if norm(y0) == 0.0 { vec![0.0; y0.len()] } else { y0.iter().map(|v| v * s.exp()).collect() };
    Pt::new(x, y)
}

/// An unbroken flow line as consecutive legs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub legs: Vec<Leg>,
}

/// Endpoint of a trajectory.
#[derive(Clone, Debug, PartialEq)]
pub enum EndPoint {
    Critical(usize),
    Chart { cp: usize, pt: Pt },
    Ambient(Vector),
}

/// Ordered unbroken pieces; consecutive pieces meet at a breaking critical point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub pieces: Vec<Piece>,
}

/// Sampled image: polylines in the ambient representation.
#[derive(Clone, Debug)]
pub struct SampledImage {
    pub polylines: Vec<Vec<Vector>>,
    /// Half the largest spacing between consecutive samples.
    pub sampling_bound: f64,
}

impl Trajectory {
    pub fn unbroken(legs: Vec<Leg>) -> Self {
        Trajectory { pieces: vec![Piece { legs }] }
    }

    pub fn from_pieces(pieces: Vec<Vec<Leg>>) -> Self {
        Trajectory { pieces: pieces.into_iter().map(|legs| Piece { legs }).collect() }
    }

    /// Concatenate trajectories that meet at critical points.
    pub fn concat(parts: Vec<Trajectory>) -> Self {
        Trajectory { pieces: parts.into_iter().flat_map(|t| t.pieces).collect() }
    }

    pub fn legs(&self) -> impl Iterator<Item = &Leg> {
        self.pieces.iter().flat_map(|p| p.legs.iter())
    }

    pub fn breaking_points(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for w in self.pieces.windows(2) {
            if let Some(Leg::Local { cp, .. }) = w[0].legs.last() {
                out.push(*cp);
            }
        }
        out
    }

    pub fn num_breaks(&self) -> usize {
        self.pieces.len().saturating_sub(1)
    }

    pub fn length(&self) -> f64 {
        self.legs().map(|l| l.duration()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.pieces.len() == 1 && self.length().is_finite()
    }

    /// ℓ = L/(1+L) for a finite unbroken trajectory of length L, 1 otherwise.
    pub fn renormalized_length(&self) -> f64 {
        if self.is_finite() {
            let l = self.length();
            l / (1.0 + l)
        } else {
            1.0
        }
    }

    pub fn ev_minus(&self, model: &MorseModel) -> EndPoint {
        match self.pieces.first().and_then(|p| p.legs.first()) {
            Some(Leg::Local { cp, x0, y0, t0, .. }) => {
                if t0.is_infinite() {
                    EndPoint::Critical(*cp)
                } else {
                    EndPoint::Chart { cp: *cp, pt: local_point(x0, y0, *t0) }
                }
            }
            Some(Leg::Transit { path, .. }) => EndPoint::Ambient(path[0].clone()),
            None => {
                let _ = model;
                EndPoint::Ambient(vec![])
            }
        }
    }

    pub fn ev_plus(&self, model: &MorseModel) -> EndPoint {
        let _ = model;
        match self.pieces.last().and_then(|p| p.legs.last()) {
            Some(Leg::Local { cp, x0, y0, t1, .. }) => {
                if t1.is_infinite() {
                    EndPoint::Critical(*cp)
                } else {
                    EndPoint::Chart { cp: *cp, pt: local_point(x0, y0, *t1) }
                }
            }
            Some(Leg::Transit { path, .. }) => EndPoint::Ambient(path.last().unwrap().clone()),
            None => EndPoint::Ambient(vec![]),
        }
    }

    pub fn ambient_endpoint(&self, model: &MorseModel, plus: bool) -> Vector {
        let e = if plus { self.ev_plus(model) } else { self.ev_minus(model) };
        match e {
            EndPoint::Critical(cp) => model.cp(cp).chart.centre.clone(),
            EndPoint::Chart { cp, pt } => model.embed(cp, &pt),
            EndPoint::Ambient(a) => a,
        }
    }

    /// Local legs of the chart of `cp`, in order.
    pub fn local_legs(&self, cp: usize) -> Vec<&Leg> {
        self.legs().filter(|l| matches!(l, Leg::Local { cp: c, .. } if *c == cp)).collect()
    }

    pub fn sample(&self, model: &MorseModel, n: usize) -> SampledImage {
        let mut polylines = Vec::new();
        for leg in self.legs() {
            polylines.push(sample_leg(model, leg, n));
        }
        let mut h = 0.0f64;
        for pl in &polylines {
            for w in pl.windows(2) {
                h = h.max(model.ambient_dist(&w[0], &w[1]));
            }
        }
        SampledImage { polylines, sampling_bound: 0.5 * h }
    }

    /// Check junction matching of consecutive legs to `eps`.
    pub fn check_junctions(&self, model: &MorseModel, eps: f64) -> Result<()> {
        for piece in &self.pieces {
            for w in piece.legs.windows(2) {
                let a = leg_end_ambient(model, &w[0]);
                let b = leg_start_ambient(model, &w[1]);
                let d = model.ambient_dist(&a, &b);
                if d > eps {
                    return Err(Error::EndpointMismatch(format!("junction gap {d:.3e}")));
                }
            }
        }
        for w in self.pieces.windows(2) {
            let (a, b) = (w[0].legs.last(), w[1].legs.first());
            match (a, b) {
                (
                    Some(Leg::Local { cp: c1, t1, .. }),
                    Some(Leg::Local { cp: c2, t0, .. }),
                ) if c1 == c2 && t1.is_infinite() && t0.is_infinite() => {}
                _ => return Err(Error::EndpointMismatch("pieces do not meet at a critical point".into())),
            }
        }
        Ok(())
    }

    pub fn to_json(&self, model: &MorseModel, n: usize) -> serde_json::Value {
        let img = self.sample(model, n);
        let ends = |e: EndPoint| match e {
            EndPoint::Critical(c) => serde_json::json!({"critical": model.id(c)}),
            EndPoint::Chart { cp, pt } => serde_json::json!({"chart": model.id(cp), "x": pt.x, "y": pt.y}),
            EndPoint::Ambient(a) => serde_json::json!({"ambient": a}),
        };
        serde_json::json!({
            "model": model.name,
            "ends": [ends(self.ev_minus(model)), ends(self.ev_plus(model))],
            "breaking_points": self.breaking_points().iter().map(|c| model.id(*c)).collect::<Vec<_>>(),
            "segments": self.pieces,
            "samples": img.polylines,
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Trajectory> {
        let pieces = v.get("segments").ok_or_else(|| Error::Schema("missing segments".into()))?;
        let pieces: Vec<Piece> = serde_json::from_value(pieces.clone())?;
        Ok(Trajectory { pieces })
    }
}

fn leg_start_ambient(model: &MorseModel, l: &Leg) -> Vector {
    match l {
        Leg::Local { cp, x0, y0, t0, .. } => model.embed(*cp, &local_point(x0, y0, t0.max(-700.0))),
        Leg::Transit { path, .. } => path[0].clone(),
    }
}

fn leg_end_ambient(model: &MorseModel, l: &Leg) -> Vector {
    match l {
        Leg::Local { cp, x0, y0, t1, .. } => model.embed(*cp, &local_point(x0, y0, t1.min(700.0))),
        Leg::Transit { path, .. } => path.last().unwrap().clone(),
    }
}

fn resample_by_length(model: &MorseModel, pts: &[Vector], n: usize) -> Vec<Vector> {
    if pts.len() < 2 {
        return pts.to_vec();
    }
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        let d = model.ambient_dist(&w[0], &w[1]);
        cum.push(cum.last().unwrap() + d);
    }
    let total = *cum.last().unwrap();
    if total == 0.0 {
        return vec![pts[0].clone()];
    }
    let mut out = Vec::with_capacity(n);
    let mut j = 0;
    for i in 0..n {
        let s = total * i as f64 / (n - 1) as f64;
        while j + 2 < cum.len() && cum[j + 1] < s {
            j += 1;
        }
        let seg = cum[j + 1] - cum[j];
        let lam = if seg > 0.0 { ((s - cum[j]) / seg).clamp(0.0, 1.0) } else { 0.0 };
        let d = model.ambient_diff(&pts[j], &pts[j + 1]);
        out.push(pts[j].iter().zip(&d).map(|(a, b)| a + lam * b).collect());
    }
    out
}

fn sample_leg(model: &MorseModel, leg: &Leg, n: usize) -> Vec<Vector> {
    let n = n.max(2);
    match leg {
        Leg::Local { cp, x0, y0, t0, t1 } => {
            let (xz, yz) = (norm(x0) == 0.0, norm(y0) == 0.0);
            if xz && yz {
                return vec![model.embed(*cp, &Pt::new(x0.clone(), y0.clone()))];
            }
            if t0.is_infinite() || t1.is_infinite() {
                // straight segment to or from the critical point, including the limit point
                let far = if t0.is_infinite() { local_point(x0, y0, *t1) } else { local_point(x0, y0, *t0) };
                return (0..n)
                    .map(|i| {
                        let lam = i as f64 / (n - 1) as f64;
                        let lam = if t0.is_infinite() { lam } else { 1.0 - lam };
                        model.embed(*cp, &Pt::new(crate::linalg::scale(&far.x, lam), crate::linalg::scale(&far.y, lam)))
                    })
                    .collect();
            }
            if t1 <= t0 {
                return vec![model.embed(*cp, &local_point(x0, y0, *t0))];
            }
            let m = 8 * n;
            let fine: Vec<Vector> = (0..=m)
                .map(|i| {
                    let s = t0 + (t1 - t0) * i as f64 / m as f64;
                    model.embed(*cp, &local_point(x0, y0, s))
                })
                .collect();
            resample_by_length(model, &fine, n)
        }
        Leg::Transit { path, .. } => resample_by_length(model, path, n),
    }
}

/// Segments of a sampled image grouped in chunks with bounding boxes, for nearest-segment
/// queries. On the torus the boxes are taken in unwrapped coordinates of each chunk.
struct SegIndex {
    /// (start, displacement) of each segment.
    segs: Vec<(Vector, Vector)>,
    /// (first, end, lo, hi) of each chunk.
    chunks: Vec<(usize, usize, Vector, Vector)>,
    period: Option<f64>,
}

const CHUNK: usize = 16;

fn period_of(model: &MorseModel) -> Option<f64> {
    match &model.dynamics {
        Dynamics::Torus(_) => Some(2.0 * std::f64::consts::PI),
        Dynamics::Synthetic(_) => None,
    }
}

fn wrapped(period: Option<f64>, v: f64) -> f64 {
    match period {
        Some(_) => crate::linalg::wrap_angle(v),
        None => v,
    }
}

impl SegIndex {
    fn new(model: &MorseModel, img: &SampledImage) -> Self {
        let period = period_of(model);
        let mut segs = Vec::new();
        for pl in &img.polylines {
            if pl.len() == 1 {
                segs.push((pl[0].clone(), vec![0.0; pl[0].len()]));
            }
            for w in pl.windows(2) {
                segs.push((w[0].clone(), model.ambient_diff(&w[0], &w[1])));
            }
        }
        let mut chunks = Vec::new();
        let mut i = 0;
        while i < segs.len() {
            let j = (i + CHUNK).min(segs.len());
            let base = &segs[i].0;
            let n = base.len();
            let (mut lo, mut hi) = (base.clone(), base.clone());
            for (b0, e) in &segs[i..j] {
                for c in 0..n {
                    // start of the segment unwrapped relative to the chunk base
                    let s0 = base[c] + wrapped(period, b0[c] - base[c]);
                    for v in [s0, s0 + e[c]] {
                        lo[c] = lo[c].min(v);
                        hi[c] = hi[c].max(v);
                    }
                }
            }
            chunks.push((i, j, lo, hi));
            i = j;
        }
        SegIndex { segs, chunks, period }
    }

    fn seg_dist2(&self, p: &[f64], k: usize) -> f64 {
        let (b0, e) = &self.segs[k];
        let (mut de, mut ee) = (0.0, 0.0);
        for c in 0..p.len() {
            let d = wrapped(self.period, p[c] - b0[c]);
            de += d * e[c];
            ee += e[c] * e[c];
        }
        let lam = if ee > 0.0 { (de / ee).clamp(0.0, 1.0) } else { 0.0 };
        let mut s = 0.0;
        for c in 0..p.len() {
            let d = wrapped(self.period, p[c] - b0[c]) - lam * e[c];
            s += d * d;
        }
        s
    }

    fn box_dist2(&self, p: &[f64], lo: &[f64], hi: &[f64]) -> f64 {
        let mut s = 0.0;
        for c in 0..p.len() {
            let gap = |v: f64| if v < lo[c] { lo[c] - v } else if v > hi[c] { v - hi[c] } else { 0.0 };
            let g = match self.period {
                Some(t) => gap(p[c]).min(gap(p[c] + t)).min(gap(p[c] - t)),
                None => gap(p[c]),
            };
            s += g * g;
        }
        s
    }
}

fn directed(model: &MorseModel, a: &SampledImage, b: &SampledImage) -> f64 {
    let idx = SegIndex::new(model, b);
    let mut h2 = 0.0f64;
    let mut last = 0usize;
    for pl in &a.polylines {
        for p in pl {
            let mut best = idx.seg_dist2(p, last);
            if best <= h2 {
                continue;
            }
            for (i, j, lo, hi) in &idx.chunks {
                if idx.box_dist2(p, lo, hi) >= best {
                    continue;
                }
                for k in *i..*j {
                    let d = idx.seg_dist2(p, k);
                    if d < best {
                        best = d;
                        last = k;
                    }
                }
                if best <= h2 {
                    break;
                }
            }
            h2 = h2.max(best);
        }
    }
    h2.sqrt()
}

/// Symmetric Hausdorff distance between sampled images (point-to-polyline).
pub fn hausdorff(model: &MorseModel, a: &SampledImage, b: &SampledImage) -> f64 {
    directed(model, a, b).max(directed(model, b, a))
}

/// Components of the metric.
#[derive(Clone, Copy, Debug)]
pub struct MetricTerms {
    pub hausdorff: f64,
    pub length: f64,
    pub sampling_bound: f64,
}

impl MetricTerms {
    pub fn total(&self) -> f64 {
        self.hausdorff + self.length
    }
}

pub fn metric_terms(model: &MorseModel, a: &Trajectory, b: &Trajectory, n: usize) -> MetricTerms {
    let (ia, ib) = (a.sample(model, n), b.sample(model, n));
    MetricTerms {
        hausdorff: hausdorff(model, &ia, &ib),
        length: (a.renormalized_length() - b.renormalized_length()).abs(),
        sampling_bound: ia.sampling_bound.max(ib.sampling_bound),
    }
}

/// d_M̄ = Hausdorff distance of the closed images + |ℓ − ℓ'|.
pub fn metric(model: &MorseModel, a: &Trajectory, b: &Trajectory, n: usize) -> f64 {
    metric_terms(model, a, b, n).total()
}

/// Open sets used for restricted trajectory spaces.
#[derive(Clone, Copy, Debug)]
pub enum OpenSet {
    Whole,
    Chart { cp: usize, region: Region },
}

fn leg_meets(model: &MorseModel, leg: &Leg, cp: usize, region: Region) -> bool {
    let Leg::Local { cp: c, x0, y0, t0, t1 } = leg else { return false };
    if *c != cp {
        return false;
    }
    let p = model.cp(cp);
    let eps = model.tol.eps_sphere;
    let test = |s: f64| {
        let q = local_point(x0, y0, s);
        membership(p, &q.x, &q.y, region, eps)
    };
    let (xn, yn) = (norm(x0), norm(y0));
    // limit critical point belongs to the closure of the image
    if (t0.is_infinite() || t1.is_infinite()) && membership(p, &vec![0.0; x0.len()], &vec![0.0; y0.len()], region, eps) {
        return true;
    }
    let mut cands = vec![];
    if t0.is_finite() {
        cands.push(*t0);
    }
    if t1.is_finite() {
        cands.push(*t1);
    }
    if xn > 0.0 && yn > 0.0 {
        // balance point |x| = |y| minimises max(|x|, |y|) along the hyperbola
        let s = 0.5 * (xn / yn).ln();
        cands.push(s.clamp(t0.max(-700.0), t1.min(700.0)));
    }
    if cands.iter().any(|s| test(*s)) {
        return true;
    }
    // fine scan for sphere-type regions
    if t0.is_finite() && t1.is_finite() {
        (0..=256).any(|i| test(t0 + (t1 - t0) * i as f64 / 256.0))
    } else {
        false
    }
}

/// Whether the image meets every set in `intersect` and stays inside `within`.
pub fn restricted_membership(model: &MorseModel, g: &Trajectory, intersect: &[OpenSet], within: OpenSet) -> bool {
    let meets = intersect.iter().all(|s| match s {
        OpenSet::Whole => true,
        OpenSet::Chart { cp, region } => g.legs().any(|l| leg_meets(model, l, *cp, *region)),
    });
    if !meets {
        return false;
    }
    match within {
        OpenSet::Whole => true,
        OpenSet::Chart { cp, region } => g.legs().all(|l| match l {
            Leg::Local { cp: c, x0, y0, t0, t1 } if *c == cp => {
                let p = model.cp(cp);
                let lo = t0.max(-60.0);
                let hi = t1.min(60.0);
                (0..=256).all(|i| {
                    let s = if hi > lo { lo + (hi - lo) * i as f64 / 256.0 } else { lo };
                    let q = local_point(x0, y0, s);
                    membership(p, &q.x, &q.y, region, model.tol.eps_sphere)
                })
            }
            _ => false,
        }),
    }
}

/// Target hypersurfaces for level evaluation.
#[derive(Clone, Copy, Debug)]
pub enum Hypersurface {
    Level(f64),
    Entry(usize),
    Exit(usize),
}

/// Function value at a chart point (normal form) or ambient point.
pub fn value_at(model: &MorseModel, cp: usize, pt: &Pt) -> f64 {
    let p = model.cp(cp);
    p.value + 0.5 * pt.xn().powi(2) - 0.5 * pt.yn().powi(2)
}

fn ambient_value(model: &MorseModel, a: &[f64]) -> f64 {
    match &model.dynamics {
        Dynamics::Torus(t) => t.value(a),
        Dynamics::Synthetic(_) => f64::NAN,
    }
}

/// Unique crossing of `h`, returned in chart coordinates (cp, point) or as ambient point.
pub fn ev_level(model: &MorseModel, g: &Trajectory, h: Hypersurface) -> Result<EndPoint> {
    let legs: Vec<&Leg> = g.legs().collect();
    for (li, leg) in legs.iter().enumerate() {
        match leg {
            Leg::Local { cp, x0, y0, t0, t1 } => {
                let p = model.cp(*cp);
                let d = p.delta;
                let s = match h {
                    Hypersurface::Entry(c) if c == *cp => {
                        let xn = norm(x0);
                        if xn == 0.0 {
                            None
                        } else {
                            Some((xn / d).ln())
                        }
                    }
                    Hypersurface::Exit(c) if c == *cp => {
                        let yn = norm(y0);
                        if yn == 0.0 {
                            None
                        } else {
                            Some((d / yn).ln())
                        }
                    }
                    Hypersurface::Level(c) => {
                        let (a, b) = (norm(x0).powi(2), norm(y0).powi(2));
                        let k = c - p.value;
                        // b w^2 + 2k w - a = 0 with w = e^{2s}
                        let w = if b > 0.0 {
                            (-k + (k * k + a * b).sqrt()) / b
                        } else if k > 0.0 {
                            a / (2.0 * k)
                        } else {
                            f64::NAN
                        };
                        if w.is_finite() && w > 0.0 {
                            Some(0.5 * w.ln())
                        } else {
                            None
                        }
                    }
                    _ => None,
                };
                if let Some(s) = s {
                    let at_start = li == 0 && (s - t0).abs() <= 1e-14 * (1.0 + s.abs());
                    let at_end = li + 1 == legs.len() && (s - t1).abs() <= 1e-14 * (1.0 + s.abs());
                    if at_start || at_end {
                        return Err(Error::EndsOnSlice(format!("{h:?}")));
                    }
                    if s > *t0 && s < *t1 {
                        return Ok(EndPoint::Chart { cp: *cp, pt: local_point(x0, y0, s) });
                    }
                }
            }
            Leg::Transit { path, .. } => {
                if let Hypersurface::Level(c) = h {
                    let vals: Vec<f64> = path.iter().map(|a| ambient_value(model, a)).collect();
                    for k in 0..path.len().saturating_sub(1) {
                        let (f0, f1) = (vals[k], vals[k + 1]);
                        if f0.is_finite() && f1.is_finite() && f0 > c && f1 <= c {
                            let lam = (f0 - c) / (f0 - f1);
                            let d = model.ambient_diff(&path[k], &path[k + 1]);
                            return Ok(EndPoint::Ambient(path[k].iter().zip(&d).map(|(a, b)| a + lam * b).collect()));
                        }
                    }
                }
            }
        }
    }
    Err(Error::NotInDomain(format!("trajectory does not cross {h:?}")))
}

/// Constant trajectory at a chart point for time L (a critical point if the point is 0).
pub fn constant_at_critical(model: &MorseModel, cp: usize, length: f64) -> Trajectory {
    let p = model.cp(cp);
    Trajectory::unbroken(vec![Leg::Local {
        cp,
        x0: vec![0.0; p.stable_dim()],
        y0: vec![0.0; p.unstable_dim()],
        t0: 0.0,
        t1: length,
    }])
}

/// Constant trajectory broken at a critical point (the τ = 0 point over x = y = 0).
pub fn broken_constant(model: &MorseModel, cp: usize) -> Trajectory {
    let p = model.cp(cp);
    let (x, y) = (vec![0.0; p.stable_dim()], vec![0.0; p.unstable_dim()]);
    Trajectory::from_pieces(vec![
        vec![Leg::Local { cp, x0: x.clone(), y0: y.clone(), t0: 0.0, t1: f64::INFINITY }],
        vec![Leg::Local { cp, x0: x, y0: y, t0: f64::NEG_INFINITY, t1: 0.0 }],
    ])
}

/// Flow a chart point for time t inside one chart.
pub fn flow_in_chart(p: &Pt, t: f64) -> Pt {
    local_flow_pt(t, p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;

    fn brute_directed(m: &MorseModel, a: &SampledImage, b: &SampledImage) -> f64 {
        let mut h = 0.0f64;
        for p in a.polylines.iter().flatten() {
            let mut best = f64::INFINITY;
            for pl in &b.polylines {
                for w in pl.windows(2) {
                    for k in 0..=2000 {
                        let l = k as f64 / 2000.0;
                        let e = m.ambient_diff(&w[0], &w[1]);
                        let q: Vector = w[0].iter().zip(&e).map(|(u, v)| u + l * v).collect();
                        best = best.min(m.ambient_dist(p, &q));
                    }
                }
            }
            h = h.max(best);
        }
        h
    }

    #[test]
    fn pruned_scan_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for m in [examples::chain4(), examples::torus_yr()] {
            let dim = m.cp(0).chart.centre.len();
            for _ in 0..4 {
                let walk = |n: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                    let mut p: Vector = (0..dim).map(|_| rng.gen_range(-3.0..3.0)).collect();
                    let mut pl = vec![p.clone()];
                    for _ in 0..n {
                        for c in p.iter_mut() {
                            *c += rng.gen_range(-0.4..0.4);
                        }
                        pl.push(p.clone());
                    }
                    pl
                };
                let a = SampledImage { polylines: vec![walk(40, &mut rng)], sampling_bound: 0.0 };
                let b = SampledImage { polylines: vec![walk(70, &mut rng), walk(30, &mut rng)], sampling_bound: 0.0 };
                let fast = directed(&m, &a, &b);
                let slow = brute_directed(&m, &a, &b);
                assert!(fast <= slow + 1e-12 && slow - fast < 1e-3, "{fast} {slow}");
            }
        }
    }

    #[test]
    fn lengths() {
        let m = examples::chain3();
        assert_eq!(constant_at_critical(&m, 1, 0.0).renormalized_length(), 0.0);
        assert_eq!(constant_at_critical(&m, 1, 1.0).renormalized_length(), 0.5);
        assert_eq!(broken_constant(&m, 1).renormalized_length(), 1.0);
    }

    #[test]
    fn constant_vs_broken_constant_distance_is_one() {
        let m = examples::chain3();
        let a = constant_at_critical(&m, 1, 0.0);
        let b = broken_constant(&m, 1);
        assert_eq!(metric(&m, &a, &b, 64), 1.0);
    }

    #[test]
    fn level_crossing_in_chart() {
        let m = examples::chain3();
        let s = m.find("s").unwrap();
        let g = Trajectory::unbroken(vec![Leg::Local { cp: s, x0: vec![1.0], y0: vec![0.2], t0: 0.0, t1: (1.0f64 / 0.2).ln() }]);
        let f = m.cp(s).value;
        let EndPoint::Chart { pt, .. } = ev_level(&m, &g, Hypersurface::Level(f)).unwrap() else { panic!() };
        assert!((pt.xn() - pt.yn()).abs() < 1e-14);
        let err = ev_level(&m, &g, Hypersurface::Level(f + 10.0));
        assert!(matches!(err, Err(Error::NotInDomain(_))));
    }
}
