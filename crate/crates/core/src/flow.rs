//! Global flow: exact linear flow inside chart boxes, atlas maps or adaptive integration
//! between boxes, connecting maps and detection of connecting trajectories.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{norm, normalize, scale, sphere_retract, tangent_basis, Vector};
use crate::model::{Dynamics, MorseModel, Pt};
use crate::rk;
use crate::trajectory::{local_point, Leg, Trajectory};

/// Result of following the flow from one exit face to the next entry face.
#[derive(Clone, Debug)]
pub struct Landing {
    pub cp: usize,
    /// Point on the entry face {|x| = 2Δ} of `cp`.
    pub entry: Pt,
    pub transit: Leg,
}

fn box_events(model: &MorseModel, exclude: Option<usize>) -> impl Fn(&[f64]) -> Vec<f64> + '_ {
    move |a: &[f64]| {
        model
            .points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                if Some(i) == exclude {
                    return 1.0;
                }
                let d = model.ambient_diff(&p.chart.centre, a);
                let q = p.chart.coords_of_offset(&d);
                let r = 2.0 * p.delta;
                (q.xn() - r).max(q.yn() - r)
            })
            .collect()
    }
}

/// Outcome of an ambient integration.
pub enum AmbientEnd {
    Box { cp: usize, entry: Pt },
    Time,
    Level,
}

/// Integrate the ambient field from `a0` (torus models) until a box is entered,
/// the signed time `t_limit` elapses, or the function value reaches `level`.
pub fn integrate_ambient(
    model: &MorseModel,
    a0: &[f64],
    exclude: Option<usize>,
    t_limit: f64,
    level: Option<f64>,
) -> Result<(Vec<Vector>, Vec<f64>, AmbientEnd)> {
    let Dynamics::Torus(field) = &model.dynamics else {
        return Err(Error::LeavesModel { from: "ambient".into(), detail: "synthetic atlases have no ambient flow".into() });
    };
    let f = |a: &[f64]| field.descent(a);
    let nb = model.points.len();
    let boxes = box_events(model, exclude);
    let ev = |a: &[f64]| {
        let mut g = if t_limit > 0.0 { boxes(a) } else { vec![1.0; nb] };
        if let Some(c) = level {
            g.push(field.value(a) - c);
        }
        g
    };
    let path = rk::integrate(&f, a0, t_limit, model.tol.rk_tol, &ev, 1e-13)?;
    let states: Vec<Vector> = path.states.iter().map(|s| field.wrap(s)).collect();
    let times = path.times.clone();
    let end = match path.event {
        Some(k) if k < nb => {
            let p = model.cp(k);
            let d = model.ambient_diff(&p.chart.centre, states.last().unwrap());
            let mut q = p.chart.coords_of_offset(&d);
            let xn = q.xn();
            q.x = scale(&q.x, 2.0 * p.delta / xn);
            AmbientEnd::Box { cp: k, entry: q }
        }
        Some(_) => AmbientEnd::Level,
        None => {
            if t_limit.abs() >= model.tol.max_time {
                return Err(Error::Timeout(t_limit.abs()));
            }
            AmbientEnd::Time
        }
    };
    Ok((states, times, end))
}

/// Follow the flow from a point of the exit face {|y| = 2Δ} of `cp` to the next entry face.
pub fn route_exit(model: &MorseModel, cp: usize, exit: &Pt) -> Result<Landing> {
    match &model.dynamics {
        Dynamics::Synthetic(atlas) => {
            let (q, z, t) = atlas.route(model, cp, exit)?;
            let path = vec![model.embed(cp, exit), model.embed(q, &z)];
            Ok(Landing { cp: q, entry: z, transit: Leg::Transit { from: Some(cp), to: Some(q), time: t, path, times: vec![0.0, t] } })
        }
        Dynamics::Torus(_) => {
            let a0 = model.embed(cp, exit);
            let (path, times, end) = integrate_ambient(model, &a0, Some(cp), model.tol.max_time, None)?;
            match end {
                AmbientEnd::Box { cp: q, entry } => {
                    let time = *times.last().unwrap();
                    Ok(Landing { cp: q, entry, transit: Leg::Transit { from: Some(cp), to: Some(q), time, path, times } })
                }
                _ => Err(Error::Timeout(model.tol.max_time)),
            }
        }
    }
}

/// Passage through the box of `cp` from an entry-face point. Returns the local leg
/// (anchored at the crossing of |x| = Δ) and the exit-face point unless the flow converges.
pub fn box_passage(model: &MorseModel, cp: usize, entry: &Pt, snap: bool) -> (Leg, Option<Pt>) {
    let d = model.cp(cp).delta;
    let x0 = scale(&entry.x, 0.5);
    let yn = entry.yn();
    let thr = if snap { model.tol.eps_stable * d } else { 0.0 };
    if yn <= thr {
        let y0 = vec![0.0; entry.y.len()];
        return (Leg::Local { cp, x0, y0, t0: -LN_2, t1: f64::INFINITY }, None);
    }
    let y0 = scale(&entry.y, 2.0);
    let t1 = (2.0 * d / (2.0 * yn)).ln();
    let mut ex = local_point(&x0, &y0, t1);
    ex.y = scale(&entry.y, 2.0 * d / yn);
    (Leg::Local { cp, x0, y0, t0: -LN_2, t1 }, Some(ex))
}

#[derive(Clone, Debug)]
pub enum LineEnd {
    Converged(usize),
    Reached { cp: usize, entry: Pt },
}

#[derive(Clone, Debug)]
pub struct Line {
    pub legs: Vec<Leg>,
    pub end: LineEnd,
}

/// Follow the flow from an exit-face point of `cp` until it converges to a critical point
/// or enters the box of `target`. When converging into `snap`, entry points within
/// ε_stable of the stable manifold are snapped onto it.
pub fn follow_exit(model: &MorseModel, cp: usize, exit: &Pt, target: Option<usize>, snap: Option<usize>) -> Result<Line> {
    let mut legs = Vec::new();
    let (mut c, mut e) = (cp, exit.clone());
    for _ in 0..(4 * model.points.len() + 4) {
        let land = route_exit(model, c, &e)?;
        legs.push(land.transit);
        if Some(land.cp) == target {
            return Ok(Line { legs, end: LineEnd::Reached { cp: land.cp, entry: land.entry } });
        }
        let (leg, ex) = box_passage(model, land.cp, &land.entry, Some(land.cp) == snap);
        legs.push(leg);
        match ex {
            None => return Ok(Line { legs, end: LineEnd::Converged(land.cp) }),
            Some(x) => {
                c = land.cp;
                e = x;
            }
        }
    }
    Err(Error::Timeout(f64::INFINITY))
}

/// Exit-face point of the line leaving `cp` in unit direction `u`.
pub fn exit_point(model: &MorseModel, cp: usize, u: &[f64]) -> Pt {
    let p = model.cp(cp);
    Pt::new(vec![0.0; p.stable_dim()], scale(u, 2.0 * p.delta))
}

/// First leg of the line leaving the critical point `cp` in unit direction `u`.
pub fn departure_leg(model: &MorseModel, cp: usize, u: &[f64]) -> Leg {
    let p = model.cp(cp);
    Leg::Local { cp, x0: vec![0.0; p.stable_dim()], y0: scale(u, p.delta), t0: f64::NEG_INFINITY, t1: LN_2 }
}

/// The unbroken flow line leaving `a` in direction `u`, up to its limit point.
pub fn line_from_critical(model: &MorseModel, a: usize, u: &[f64], snap: Option<usize>) -> Result<(Trajectory, usize)> {
    let mut legs = vec![departure_leg(model, a, u)];
    let line = follow_exit(model, a, &exit_point(model, a, u), None, snap)?;
    legs.extend(line.legs);
    match line.end {
        LineEnd::Converged(c) => Ok((Trajectory::unbroken(legs), c)),
        LineEnd::Reached { .. } => unreachable!(),
    }
}

/// Unstable part of the entry point at `b` of the line leaving `a` in direction `u`,
/// together with the line up to that entry face.
pub fn entry_residual(model: &MorseModel, a: usize, u: &[f64], b: usize) -> Result<(Vector, Pt, Vec<Leg>)> {
    let line = follow_exit(model, a, &exit_point(model, a, u), Some(b), None)?;
    match line.end {
        LineEnd::Reached { entry, .. } => Ok((entry.y.clone(), entry, line.legs)),
        LineEnd::Converged(c) => Err(Error::NotInDomain(format!(
            "line from {} converges to {} before reaching {}",
            model.id(a),
            model.id(c),
            model.id(b)
        ))),
    }
}

/// Connecting map G: S̃⁻_{p₋} ⊃ dom → S̃⁺_{p₊}, z ↦ (first crossing of S̃⁺_{p₊}, flow time).
pub fn connecting_map(model: &MorseModel, pm: usize, pp: usize, z: &Pt) -> Result<(Pt, f64)> {
    let d = model.cp(pm).delta;
    if (z.yn() - d).abs() > model.tol.eps_sphere * d * 10.0 || z.xn() >= d {
        return Err(Error::NotInDomain(format!("point is not on the exit set of {}", model.id(pm))));
    }
    let exit = Pt::new(scale(&z.x, 0.5), scale(&z.y, 2.0));
    let line = follow_exit(model, pm, &exit, Some(pp), None)?;
    let LineEnd::Reached { entry, .. } = line.end else {
        return Err(Error::NotInDomain(format!("flows to a critical point before {}", model.id(pp))));
    };
    let dq = model.cp(pp).delta;
    let s = Pt::new(scale(&entry.x, 0.5), scale(&entry.y, 2.0));
    if s.yn() >= dq {
        return Err(Error::NotInDomain(format!("line passes the box of {} outside U", model.id(pp))));
    }
    let t: f64 = line.legs.iter().map(|l| l.duration()).sum::<f64>() + 2.0 * LN_2;
    Ok((s, t))
}

/// Where and when to stop `integrate`.
#[derive(Clone, Copy, Debug)]
pub enum Until {
    Time(f64),
    /// Crossing of S̃⁺ of the given critical point.
    Entry(usize),
    /// Crossing of S̃⁻ of the given critical point.
    Exit(usize),
    Level(f64),
}

#[derive(Clone, Debug)]
pub enum Start {
    Chart { cp: usize, pt: Pt },
    Ambient(Vector),
}

#[derive(Clone, Debug, Serialize)]
pub struct FlowSample {
    pub times: Vec<f64>,
    pub points: Vec<Vector>,
    pub tags: Vec<String>,
    /// Limit critical point if the flow converged before the event.
    pub converged: Option<String>,
    /// Final point in chart coordinates when it lies in a chart box.
    #[serde(skip)]
    pub end_chart: Option<(usize, Pt)>,
}

impl FlowSample {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("time,coords,region\n");
        for ((t, p), g) in self.times.iter().zip(&self.points).zip(&self.tags) {
            let c: Vec<String> = p.iter().map(|v| format!("{v:.12e}")).collect();
            s.push_str(&format!("{t:.12e},{},{g}\n", c.join(";")));
        }
        s
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap_or(&0.0)
    }
}

fn event_in_local(model: &MorseModel, cp: usize, x0: &[f64], y0: &[f64], t0: f64, t1: f64, until: Until, elapsed: f64) -> Option<f64> {
    let p = model.cp(cp);
    let d = p.delta;
    let s = match until {
        Until::Time(t) => Some(t0 + (t - elapsed)),
        Until::Entry(c) if c == cp && norm(x0) > 0.0 => Some((norm(x0) / d).ln()),
        Until::Exit(c) if c == cp && norm(y0) > 0.0 => Some((d / norm(y0)).ln()),
        Until::Level(c) => {
            let (a, b) = (norm(x0).powi(2), norm(y0).powi(2));
            let k = c - p.value;
            let w = if b > 0.0 { (-k + (k * k + a * b).sqrt()) / b } else if k > 0.0 { a / (2.0 * k) } else { f64::NAN };
            if w.is_finite() && w > 0.0 {
                Some(0.5 * w.ln())
            } else {
                None
            }
        }
        _ => None,
    }?;
    if s >= t0 - 1e-15 && s <= t1 {
        Some(s.max(t0))
    } else {
        None
    }
}

fn push_local(model: &MorseModel, out: &mut FlowSample, cp: usize, x0: &[f64], y0: &[f64], t0: f64, t1: f64, elapsed: f64) {
    let hi = if t1.is_finite() { t1 } else { t0 + 40.0 };
    let m = 64;
    for i in 0..=m {
        let s = t0 + (hi - t0) * i as f64 / m as f64;
        out.times.push(elapsed + s - t0);
        out.points.push(model.embed(cp, &local_point(x0, y0, s)));
        out.tags.push(model.id(cp).to_string());
    }
}

/// Sample the flow from `start` until the `until` event.
pub fn integrate(model: &MorseModel, start: &Start, until: Until) -> Result<FlowSample> {
    let mut out = FlowSample { times: vec![], points: vec![], tags: vec![], converged: None, end_chart: None };
    let mut elapsed = 0.0;
    // initial local leg or ambient transit
    let (mut cp, mut exit) = match start {
        Start::Chart { cp, pt } => {
            let p = model.cp(*cp);
            let (x0, y0) = (pt.x.clone(), pt.y.clone());
            let yn = norm(&y0);
            let t1 = if yn > 0.0 { (2.0 * p.delta / yn).ln() } else { f64::INFINITY };
            if let Some(s) = event_in_local(model, *cp, &x0, &y0, 0.0, t1, until, 0.0) {
                push_local(model, &mut out, *cp, &x0, &y0, 0.0, s, 0.0);
                out.end_chart = Some((*cp, local_point(&x0, &y0, s)));
                return Ok(out);
            }
            push_local(model, &mut out, *cp, &x0, &y0, 0.0, t1, 0.0);
            if t1.is_infinite() {
                out.converged = Some(model.id(*cp).to_string());
                return Ok(out);
            }
            elapsed += t1;
            let mut ex = local_point(&x0, &y0, t1);
            ex.y = scale(&y0, 2.0 * p.delta / yn);
            (*cp, ex)
        }
        Start::Ambient(a) => {
            let lim = match until {
                Until::Time(t) => t,
                _ => model.tol.max_time,
            };
            let lvl = if let Until::Level(c) = until { Some(c) } else { None };
            let (path, times, end) = integrate_ambient(model, a, None, lim, lvl)?;
            for (p, t) in path.iter().zip(&times) {
                out.points.push(p.clone());
                out.times.push(*t);
                out.tags.push("transit".into());
            }
            match end {
                AmbientEnd::Box { cp, entry } => {
                    elapsed = *times.last().unwrap();
                    let (leg, ex) = box_passage(model, cp, &entry, false);
                    let Leg::Local { x0, y0, t0, t1, .. } = leg else { unreachable!() };
                    if let Some(s) = event_in_local(model, cp, &x0, &y0, t0, t1, until, elapsed) {
                        push_local(model, &mut out, cp, &x0, &y0, t0, s, elapsed);
                        out.end_chart = Some((cp, local_point(&x0, &y0, s)));
                        return Ok(out);
                    }
                    push_local(model, &mut out, cp, &x0, &y0, t0, t1, elapsed);
                    match ex {
                        None => {
                            out.converged = Some(model.id(cp).to_string());
                            return Ok(out);
                        }
                        Some(x) => {
                            elapsed += t1 - t0;
                            (cp, x)
                        }
                    }
                }
                _ => return Ok(out),
            }
        }
    };
    loop {
        if elapsed > model.tol.max_time {
            return Err(Error::Timeout(elapsed));
        }
        // transit, possibly with an event inside it
        let land = match (&model.dynamics, until) {
            (Dynamics::Torus(_), Until::Time(_) | Until::Level(_)) => {
                let a0 = model.embed(cp, &exit);
                let lim = if let Until::Time(t) = until { t - elapsed } else { model.tol.max_time };
                let lvl = if let Until::Level(c) = until { Some(c) } else { None };
                let (path, times, end) = integrate_ambient(model, &a0, Some(cp), lim, lvl)?;
                match end {
                    AmbientEnd::Box { cp: q, entry } => {
                        let time = *times.last().unwrap();
                        Landing { cp: q, entry, transit: Leg::Transit { from: Some(cp), to: Some(q), time, path, times } }
                    }
                    _ => {
                        for (p, t) in path.iter().zip(&times) {
                            out.points.push(p.clone());
                            out.times.push(elapsed + t);
                            out.tags.push("transit".into());
                        }
                        return Ok(out);
                    }
                }
            }
            _ => route_exit(model, cp, &exit)?,
        };
        let Leg::Transit { path, times, time, .. } = &land.transit else { unreachable!() };
        if let (Dynamics::Synthetic(_), Until::Time(t)) = (&model.dynamics, until) {
            if t - elapsed <= *time {
                let lam = (t - elapsed) / time;
                let d = model.ambient_diff(&path[0], &path[1]);
                out.points.push(path[0].clone());
                out.times.push(elapsed);
                out.tags.push("transit".into());
                out.points.push(path[0].iter().zip(&d).map(|(a, b)| a + lam * b).collect());
                out.times.push(t);
                out.tags.push("transit".into());
                return Ok(out);
            }
        }
        if let (Dynamics::Synthetic(_), Until::Level(c)) = (&model.dynamics, until) {
            // function value interpolates linearly along synthetic transits
            let f0 = crate::trajectory::value_at(model, cp, &exit);
            let f1 = crate::trajectory::value_at(model, land.cp, &land.entry);
            if f0 >= c && f1 < c {
                let lam = (f0 - c) / (f0 - f1);
                let d = model.ambient_diff(&path[0], &path[1]);
                out.points.push(path[0].clone());
                out.times.push(elapsed);
                out.tags.push("transit".into());
                out.points.push(path[0].iter().zip(&d).map(|(a, b)| a + lam * b).collect());
                out.times.push(elapsed + lam * time);
                out.tags.push("transit".into());
                return Ok(out);
            }
        }
        for (p, t) in path.iter().zip(times) {
            out.points.push(p.clone());
            out.times.push(elapsed + t);
            out.tags.push("transit".into());
        }
        elapsed += time;
        let (leg, ex) = box_passage(model, land.cp, &land.entry, false);
        let Leg::Local { x0, y0, t0, t1, .. } = leg else { unreachable!() };
        if let Some(s) = event_in_local(model, land.cp, &x0, &y0, t0, t1, until, elapsed) {
            push_local(model, &mut out, land.cp, &x0, &y0, t0, s, elapsed);
            out.end_chart = Some((land.cp, local_point(&x0, &y0, s)));
            return Ok(out);
        }
        push_local(model, &mut out, land.cp, &x0, &y0, t0, t1, elapsed);
        match ex {
            None => {
                out.converged = Some(model.id(land.cp).to_string());
                return Ok(out);
            }
            Some(x) => {
                elapsed += t1 - t0;
                cp = land.cp;
                exit = x;
            }
        }
    }
}

/// Independent oracle for the time from a chart point of `cp` to the exit set: adaptive
/// integration of the vector field (the linear model in synthetic atlases, the ambient
/// field on the torus) until |y| = Δ.
pub fn oracle_exit_time(model: &MorseModel, cp: usize, pt: &Pt) -> Result<f64> {
    let p = model.cp(cp);
    let d = p.delta;
    let (s, u) = (p.stable_dim(), p.unstable_dim());
    let path = match &model.dynamics {
        Dynamics::Synthetic(_) => {
            let f = |z: &[f64]| -> Vector { (0..s + u).map(|i| if i < s { -z[i] } else { z[i] }).collect() };
            let ev = |z: &[f64]| vec![d - norm(&z[s..])];
            rk::integrate(&f, &pt.flat(), model.tol.max_time, 1e-13, &ev, 1e-14)?
        }
        Dynamics::Torus(field) => {
            let f = |a: &[f64]| field.descent(a);
            let ev = |a: &[f64]| {
                let q = p.chart.coords_of_offset(&model.ambient_diff(&p.chart.centre, a));
                vec![d - q.yn()]
            };
            rk::integrate(&f, &model.embed(cp, pt), model.tol.max_time, 1e-13, &ev, 1e-14)?
        }
    };
    match path.event {
        Some(_) => Ok(*path.times.last().unwrap()),
        None => Err(Error::Timeout(model.tol.max_time)),
    }
}

/// Representatives of M(p₋, p₊) by exit directions on the unstable sphere of p₋.
#[derive(Clone, Debug, PartialEq)]
pub enum Connections {
    Isolated(Vec<Vector>),
    Family { dim: usize, samples: Vec<Vector> },
}

impl Connections {
    pub fn is_empty(&self) -> bool {
        match self {
            Connections::Isolated(v) => v.is_empty(),
            Connections::Family { samples, .. } => samples.is_empty(),
        }
    }

    pub fn representatives(&self) -> &[Vector] {
        match self {
            Connections::Isolated(v) => v,
            Connections::Family { samples, .. } => samples,
        }
    }
}

/// Residual "entry point lies on the stable manifold of b" in units of Δ_b; None if the
/// line from `u` does not reach the box of `b`.
pub fn stable_residual(model: &MorseModel, a: usize, u: &[f64], b: usize) -> Option<Vector> {
    let (r, _, _) = entry_residual(model, a, u, b).ok()?;
    let d = model.cp(b).delta;
    Some(scale(&r, 1.0 / d))
}

fn refine_on_sphere(model: &MorseModel, a: usize, b: usize, u0: &[f64]) -> Option<Vector> {
    let mut u = u0.to_vec();
    for _ in 0..40 {
        let r = stable_residual(model, a, &u, b)?;
        if norm(&r) < 1e-13 {
            return Some(u);
        }
        let basis = tangent_basis(&u);
        let h = 1e-7;
        let mut j = nalgebra::DMatrix::zeros(r.len(), basis.len());
        for (k, _) in basis.iter().enumerate() {
            let mut c = vec![0.0; basis.len()];
            c[k] = h;
            let rp = stable_residual(model, a, &sphere_retract(&u, &basis, &c), b)?;
            c[k] = -h;
            let rm = stable_residual(model, a, &sphere_retract(&u, &basis, &c), b)?;
            for i in 0..r.len() {
                j[(i, k)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let step = crate::linalg::lstsq(&j, &scale(&r, -1.0));
        let mut lam = 1.0;
        let r0 = norm(&r);
        loop {
            let un = sphere_retract(&u, &basis, &scale(&step, lam));
            if let Some(rn) = stable_residual(model, a, &un, b) {
                if norm(&rn) < r0 {
                    u = un;
                    break;
                }
            }
            lam *= 0.5;
            if lam < 1e-6 {
                return None;
            }
        }
    }
    let r = stable_residual(model, a, &u, b)?;
    if norm(&r) < 1e-10 {
        Some(u)
    } else {
        None
    }
}

fn fibonacci_sphere(m: usize, count: usize) -> Vec<Vector> {
    if m == 1 {
        return vec![vec![1.0], vec![-1.0]];
    }
    if m == 2 {
        return (0..count)
            .map(|i| {
                let a = std::f64::consts::TAU * (i as f64 + 0.5) / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect();
    }
    // Gaussian-free deterministic spread: golden-angle spiral lifted to higher spheres
    let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
    (0..count)
        .map(|i| {
            let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
            let r = (1.0 - z * z).sqrt();
            let th = golden * i as f64;
            let mut v = vec![r * th.cos(), r * th.sin(), z];
            for k in 3..m {
                v.push(((i * (k + 1)) as f64 * golden).sin() * 0.3);
            }
            normalize(&v).unwrap()
        })
        .collect()
}

fn dedupe(mut v: Vec<Vector>, tol: f64) -> Vec<Vector> {
    let mut out: Vec<Vector> = Vec::new();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for u in v {
        if !out.iter().any(|w| crate::linalg::dist(w, &u) < tol) {
            out.push(u);
        }
    }
    out
}

/// Find representatives of M(p₋, p₊). Index difference one yields isolated points; larger
/// differences are reported as families with their dimension and sample representatives.
pub fn find_infinite_trajectories(model: &MorseModel, pm: usize, pp: usize) -> Result<Connections> {
    let (a, b) = (model.cp(pm), model.cp(pp));
    if a.index <= b.index || a.index == 0 {
        return Ok(Connections::Isolated(vec![]));
    }
    let m = a.index;
    let dim = a.index - b.index - 1;
    let eps = model.tol.eps_stable;
    let lands = |u: &[f64]| -> Option<Vector> { stable_residual(model, pm, u, pp) };
    if b.index == 0 {
        // every line reaching the box of a minimum converges to it
        let starts = fibonacci_sphere(m, if m == 2 { 720 } else { 2000 });
        let samples: Vec<Vector> = starts.into_iter().filter(|u| lands(u).is_some()).collect();
        if dim == 0 {
            return Ok(Connections::Isolated(samples));
        }
        return Ok(Connections::Family { dim, samples });
    }
    if m == 2 && b.index == 1 {
        // scan the exit circle for sign changes of the entry unstable coordinate
        let n = 4096;
        let vals: Vec<Option<f64>> = (0..n)
            .map(|i| {
                let t = std::f64::consts::TAU * i as f64 / n as f64;
                lands(&[t.cos(), t.sin()]).map(|r| r[0])
            })
            .collect();
        let mut roots = Vec::new();
        for i in 0..n {
            let j = (i + 1) % n;
            let (Some(f0), Some(f1)) = (vals[i], vals[j]) else { continue };
            if f0 == 0.0 {
                roots.push(std::f64::consts::TAU * i as f64 / n as f64);
                continue;
            }
            if f0 * f1 >= 0.0 {
                continue;
            }
            let (mut lo, mut hi) = (std::f64::consts::TAU * i as f64 / n as f64, std::f64::consts::TAU * (i + 1) as f64 / n as f64);
            let mut flo = f0;
            let mut ok = true;
            while hi - lo > 1e-14 {
                let mid = 0.5 * (lo + hi);
                match lands(&[mid.cos(), mid.sin()]) {
                    Some(r) => {
                        if r[0] * flo > 0.0 {
                            lo = mid;
                            flo = r[0];
                        } else {
                            hi = mid;
                        }
                    }
                    None => {
                        ok = false;
                        break;
                    }
                }
            }
            let mid = 0.5 * (lo + hi);
            if ok {
                if let Some(r) = lands(&[mid.cos(), mid.sin()]) {
                    if r[0].abs() <= eps * 10.0 {
                        roots.push(mid);
                        continue;
                    }
                }
                // sign change across a discontinuity of the routing
                if !(f0.abs() > 0.5 && f1.abs() > 0.5) {
                    return Err(Error::UndetectedConnection {
                        from: a.id.clone(),
                        to: b.id.clone(),
                        detail: format!("bracket [{lo:.6}, {hi:.6}] did not converge"),
                    });
                }
            }
        }
        let reps: Vec<Vector> = roots.into_iter().map(|t| vec![t.cos(), t.sin()]).collect();
        let reps = dedupe(reps, 1e-9);
        return Ok(if dim == 0 { Connections::Isolated(reps) } else { Connections::Family { dim, samples: reps } });
    }
    // multistart Gauss–Newton on the exit sphere
    let starts = fibonacci_sphere(m, if m <= 2 { 64 } else { 600 });
    let found: Vec<Vector> = starts
        .iter()
        .filter(|u| lands(u).is_some())
        .filter_map(|u| refine_on_sphere(model, pm, pp, u))
        .collect();
    let found = dedupe(found, 1e-6);
    if dim == 0 {
        Ok(Connections::Isolated(found))
    } else {
        Ok(Connections::Family { dim, samples: found })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;

    #[test]
    fn in_chart_crossing_time() {
        let m = examples::chain3();
        let s = m.find("s").unwrap();
        let start = Start::Chart { cp: s, pt: Pt::new(vec![0.5], vec![0.1]) };
        let fs = integrate(&m, &start, Until::Exit(s)).unwrap();
        assert!((fs.end_time() - 10f64.ln()).abs() < 1e-14);
        let (_, pt) = fs.end_chart.unwrap();
        assert!((pt.x[0] - 0.05).abs() < 1e-15);
    }

    #[test]
    fn stable_point_converges() {
        let m = examples::chain3();
        let s = m.find("s").unwrap();
        let start = Start::Chart { cp: s, pt: Pt::new(vec![(-1.0f64).exp()], vec![0.0]) };
        let fs = integrate(&m, &start, Until::Level(m.cp(s).value)).unwrap();
        assert_eq!(fs.converged.as_deref(), Some("s"));
    }

    #[test]
    fn sphere_identity_map() {
        let m = examples::sphere_height(2);
        let z = Pt::new(vec![], vec![0.6, 0.8]);
        let (w, t) = connecting_map(&m, 0, 1, &z).unwrap();
        assert!((w.x[0] - 0.6).abs() < 1e-15 && (w.x[1] - 0.8).abs() < 1e-15);
        assert!((t - (1.0 + 2.0 * LN_2)).abs() < 1e-14);
    }

    #[test]
    fn chain3_connection_counts() {
        let m = examples::chain3();
        let (mx, s, mn) = (m.find("max").unwrap(), m.find("s").unwrap(), m.find("min").unwrap());
        assert_eq!(find_infinite_trajectories(&m, mx, s).unwrap().representatives().len(), 2);
        assert_eq!(find_infinite_trajectories(&m, s, mn).unwrap().representatives().len(), 2);
        assert!(matches!(find_infinite_trajectories(&m, mx, mn).unwrap(), Connections::Family { dim: 1, .. }));
    }

    #[test]
    fn torus_connection_counts() {
        let m = examples::torus_yr();
        let (mx, sa, sb, mn) = (0, 1, 2, 3);
        for (a, b) in [(mx, sa), (mx, sb), (sa, mn), (sb, mn)] {
            let c = find_infinite_trajectories(&m, a, b).unwrap();
            assert_eq!(c.representatives().len(), 2, "{a}->{b}: {c:?}");
        }
    }
}
