//! Local trajectory spaces near one critical point: chart maps, extended evaluations,
//! transition times and restrictions, all in closed form.

use crate::error::{Error, Result};
use crate::linalg::{norm, scale, Vector};
use crate::model::{membership, MorseModel, Pt, Region};
use crate::trajectory::{ev_level, local_point, EndPoint, Hypersurface, Leg, Trajectory};

/// Points of the local trajectory spaces near a critical point.
#[derive(Clone, Debug, PartialEq)]
pub enum LocalChartPoint {
    /// Trajectory from (x, τy) ∈ S̃⁺ to (τx, y) ∈ S̃⁻ with |x| = |y| = Δ.
    Through { tau: f64, x: Vector, y: Vector },
    /// Trajectory from (x, E·y) until the exit set, x ∈ B̃⁺, |y| = Δ, E ∈ [0, 2).
    FromInside { e: f64, x: Vector, y: Vector },
    /// Trajectory from the entry set to (E·x, y), |x| = Δ, y ∈ B̃⁻, E ∈ [0, 2).
    ToInside { e: f64, x: Vector, y: Vector },
    /// γ_{τ,x,y}: s ↦ (e^{-s}x, e^{s-T}y) on [0, T], T = −ln τ.
    BothInside { tau: f64, x: Vector, y: Vector },
    /// A through trajectory extended backwards to start at Ψ_{T₋}(x, τy), T₋ ≤ 0.
    FromOutside { t_minus: f64, tau: f64, x: Vector, y: Vector },
    /// A through trajectory extended forwards to end at Ψ_{T₊}(τx, y), T₊ ≥ 0.
    ToOutside { t_plus: f64, tau: f64, x: Vector, y: Vector },
}

fn zeros(n: usize) -> Vector {
    vec![0.0; n]
}

fn check_sphere(v: &[f64], d: f64, what: &str) -> Result<()> {
    if (norm(v) - d).abs() > 1e-9 * d {
        return Err(Error::Constraint(format!("{what} must have norm Δ, got {:.3e}", norm(v))));
    }
    Ok(())
}

/// s ↦ (e^{-s}x, e^{s}τy) on [t0, −ln τ + extra]; broken at the critical point when τ = 0.
fn hyperbola(cp: usize, x: &[f64], y: &[f64], tau: f64, t0: f64, extra: f64) -> Trajectory {
    if tau == 0.0 {
        return Trajectory::from_pieces(vec![
            vec![Leg::Local { cp, x0: x.to_vec(), y0: zeros(y.len()), t0, t1: f64::INFINITY }],
            vec![Leg::Local { cp, x0: zeros(x.len()), y0: y.to_vec(), t0: f64::NEG_INFINITY, t1: extra }],
        ]);
    }
    Trajectory::unbroken(vec![Leg::Local { cp, x0: x.to_vec(), y0: scale(y, tau), t0, t1: -tau.ln() + extra }])
}

impl LocalChartPoint {
    /// The local trajectory described by this chart point.
    pub fn inverse(&self, model: &MorseModel, cp: usize) -> Result<Trajectory> {
        let p = model.cp(cp);
        let d = p.delta;
        match self {
            LocalChartPoint::BothInside { tau, x, y } => {
                if !(0.0..=1.0).contains(tau) {
                    return Err(Error::Constraint(format!("τ = {tau} outside [0, 1]")));
                }
                if norm(x) >= 2.0 * d || norm(y) >= 2.0 * d {
                    return Err(Error::NotInDomain("endpoints outside Ũ(p)".into()));
                }
                Ok(hyperbola(cp, x, y, *tau, 0.0, 0.0))
            }
            LocalChartPoint::Through { tau, x, y } => {
                check_sphere(x, d, "x")?;
                check_sphere(y, d, "y")?;
                if !(0.0..1.0).contains(tau) {
                    return Err(Error::Constraint(format!("τ = {tau} outside [0, 1)")));
                }
                Ok(hyperbola(cp, x, y, *tau, 0.0, 0.0))
            }
            LocalChartPoint::FromInside { e, x, y } => {
                check_sphere(y, d, "y")?;
                if !(0.0..2.0).contains(e) || norm(x) >= 2.0 * d {
                    return Err(Error::Constraint(format!("E = {e} or |x| outside the chart")));
                }
                if *e >= 1.0 {
                    // the start lies at or beyond the exit set: zero-length remainder
                    let q = Pt::new(x.clone(), scale(y, *e));
                    return Ok(Trajectory::unbroken(vec![Leg::Local { cp, x0: q.x, y0: q.y, t0: 0.0, t1: 0.0 }]));
                }
                Ok(hyperbola(cp, x, y, *e, 0.0, 0.0))
            }
            LocalChartPoint::ToInside { e, x, y } => {
                check_sphere(x, d, "x")?;
                if !(0.0..2.0).contains(e) || norm(y) >= 2.0 * d {
                    return Err(Error::Constraint(format!("E = {e} or |y| outside the chart")));
                }
                if *e >= 1.0 {
                    let q = Pt::new(scale(x, *e), y.clone());
                    return Ok(Trajectory::unbroken(vec![Leg::Local { cp, x0: q.x, y0: q.y, t0: 0.0, t1: 0.0 }]));
                }
                Ok(hyperbola(cp, x, y, *e, 0.0, 0.0))
            }
            LocalChartPoint::FromOutside { t_minus, tau, x, y } => {
                check_sphere(x, d, "x")?;
                check_sphere(y, d, "y")?;
                if *t_minus > 0.0 {
                    return Err(Error::Constraint("T₋ must be non-positive".into()));
                }
                Ok(hyperbola(cp, x, y, *tau, *t_minus, 0.0))
            }
            LocalChartPoint::ToOutside { t_plus, tau, x, y } => {
                check_sphere(x, d, "x")?;
                check_sphere(y, d, "y")?;
                if *t_plus < 0.0 {
                    return Err(Error::Constraint("T₊ must be non-negative".into()));
                }
                Ok(hyperbola(cp, x, y, *tau, 0.0, *t_plus))
            }
        }
    }
}

/// Chart-frame endpoints of a trajectory lying in the chart of `cp`.
fn chart_ends(g: &Trajectory, model: &MorseModel, cp: usize) -> Result<(Pt, Pt)> {
    let get = |e: EndPoint, which: &str| match e {
        EndPoint::Chart { cp: c, pt } if c == cp => Ok(pt),
        _ => Err(Error::NotInDomain(format!("{which} is not a point of the chart of {}", model.id(cp)))),
    };
    Ok((get(g.ev_minus(model), "ev₋")?, get(g.ev_plus(model), "ev₊")?))
}

/// Whether the trajectory breaks exactly once, at `cp`.
fn broken_at(g: &Trajectory, cp: usize) -> bool {
    g.pieces.len() == 2 && g.breaking_points() == vec![cp]
}

/// (τ̃, pr_x ev₋, pr_y ev₊) for trajectories with both ends in Ũ(p).
pub fn chart_both_inside(model: &MorseModel, cp: usize, g: &Trajectory) -> Result<LocalChartPoint> {
    let d = model.cp(cp).delta;
    let (a, b) = chart_ends(g, model, cp)?;
    if a.xn() >= 2.0 * d || a.yn() >= 2.0 * d || b.xn() >= 2.0 * d || b.yn() >= 2.0 * d {
        return Err(Error::NotInDomain("endpoints outside Ũ(p)".into()));
    }
    let tau = if broken_at(g, cp) {
        0.0
    } else if g.pieces.len() == 1 {
        (-g.length()).exp()
    } else {
        return Err(Error::NotInDomain("trajectory breaks outside the chart".into()));
    };
    Ok(LocalChartPoint::BothInside { tau, x: a.x, y: b.y })
}

/// (τ, x, y) of a trajectory from S̃⁺ to S̃⁻ with τ = (|x′| + |y′|)/2Δ.
pub fn chart_through(model: &MorseModel, cp: usize, g: &Trajectory) -> Result<LocalChartPoint> {
    let p = model.cp(cp);
    let eps = model.tol.eps_sphere;
    let (a, b) = chart_ends(g, model, cp)?;
    if !membership(p, &a.x, &a.y, Region::EntrySet, eps) || !membership(p, &b.x, &b.y, Region::ExitSet, eps) {
        return Err(Error::NotInDomain("endpoints are not on the entry and exit sets".into()));
    }
    let tau = if broken_at(g, cp) { 0.0 } else { (b.xn() + a.yn()) / (2.0 * p.delta) };
    Ok(LocalChartPoint::Through { tau, x: a.x, y: b.y })
}

/// ρ₋(x, y) = ((|y|/Δ)x, (Δ/|y|)y): the exit-set point of the extended flow line.
pub fn rho_minus(model: &MorseModel, cp: usize, pt: &Pt) -> Result<Pt> {
    let d = model.cp(cp).delta;
    let yn = pt.yn();
    if yn == 0.0 {
        return Err(Error::BlowupPoint("point on the stable manifold has no exit".into()));
    }
    Ok(Pt::new(scale(&pt.x, yn / d), scale(&pt.y, d / yn)))
}

/// ρ₊(x, y) = ((Δ/|x|)x, (|x|/Δ)y): the entry-set point of the extended flow line.
pub fn rho_plus(model: &MorseModel, cp: usize, pt: &Pt) -> Result<Pt> {
    let d = model.cp(cp).delta;
    let xn = pt.xn();
    if xn == 0.0 {
        return Err(Error::BlowupPoint("point on the unstable manifold has no entry".into()));
    }
    Ok(Pt::new(scale(&pt.x, d / xn), scale(&pt.y, xn / d)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    Minus,
    Plus,
}

/// Extended evaluation: exit-set point on the line through ev₋ (side −) or entry-set point
/// on the line through ev₊ (side +).
pub fn extended_eval(model: &MorseModel, cp: usize, g: &Trajectory, side: Side) -> Result<Pt> {
    let e = match side {
        Side::Minus => g.ev_minus(model),
        Side::Plus => g.ev_plus(model),
    };
    let EndPoint::Chart { cp: c, pt } = e else {
        return Err(Error::NotInDomain("endpoint is not in the chart".into()));
    };
    if c != cp {
        return Err(Error::NotInDomain("endpoint is in another chart".into()));
    }
    match side {
        Side::Minus => rho_minus(model, cp, &pt),
        Side::Plus => rho_plus(model, cp, &pt),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TimeKind {
    Through,
    Minus,
    Plus,
    Tilde,
}

fn is_broken_at(g: &Trajectory, cp: usize) -> bool {
    g.breaking_points().contains(&cp)
}

/// Transition times near `cp`.
pub fn transition_time(model: &MorseModel, g: &Trajectory, cp: usize, kind: TimeKind) -> Result<f64> {
    let d = model.cp(cp).delta;
    if is_broken_at(g, cp) {
        return Ok(0.0);
    }
    match kind {
        TimeKind::Through => {
            let a = ev_level(model, g, Hypersurface::Entry(cp))?;
            let b = ev_level(model, g, Hypersurface::Exit(cp))?;
            match (a, b) {
                (EndPoint::Chart { pt: a, .. }, EndPoint::Chart { pt: b, .. }) => Ok((a.yn() + b.xn()) / (2.0 * d)),
                _ => Err(Error::NotInDomain("crossings not in the chart".into())),
            }
        }
        TimeKind::Minus => match g.ev_minus(model) {
            EndPoint::Chart { cp: c, pt } if c == cp => Ok(pt.yn() / d),
            _ => Err(Error::NotInDomain("ev₋ is not in the chart".into())),
        },
        TimeKind::Plus => match g.ev_plus(model) {
            EndPoint::Chart { cp: c, pt } if c == cp => Ok(pt.xn() / d),
            _ => Err(Error::NotInDomain("ev₊ is not in the chart".into())),
        },
        TimeKind::Tilde => {
            if g.pieces.len() != 1 {
                return Ok(0.0);
            }
            Ok((-g.length()).exp())
        }
    }
}

/// Flow time T ≤ 0 with start = Ψ_T(entry-set point), for a start with |x| ≥ Δ.
pub fn time_from_entry(model: &MorseModel, cp: usize, start: &Pt) -> Result<(f64, Pt)> {
    let d = model.cp(cp).delta;
    let xn = start.xn();
    if xn < d {
        return Err(Error::NotInDomain("start lies inside the entry set".into()));
    }
    let t = -(xn / d).ln();
    Ok((t, rho_plus(model, cp, start)?))
}

/// Flow time T ≥ 0 with end = Ψ_T(exit-set point), for an end with |y| ≥ Δ.
pub fn time_to_end(model: &MorseModel, cp: usize, end: &Pt) -> Result<(f64, Pt)> {
    let d = model.cp(cp).delta;
    let yn = end.yn();
    if yn < d {
        return Err(Error::NotInDomain("end lies inside the exit set".into()));
    }
    let t = (yn / d).ln();
    Ok((t, rho_minus(model, cp, end)?))
}

/// Targets of the restriction maps.
#[derive(Clone, Copy, Debug)]
pub enum RestrictTo {
    /// Part through U(p) between S̃⁺ and S̃⁻.
    Through(usize),
    /// From ev₋ ∈ Ũ(p) to the exit set.
    FromInside(usize),
    /// From the entry set to ev₊ ∈ Ũ(p).
    ToInside(usize),
    /// From ev₋ outside Ū(p) through U(p).
    FromOutside(usize),
    /// Through U(p) to ev₊ outside Ū(p).
    ToOutside(usize),
    /// Pair (ev_{S̃⁻_{p₋}}, ev_{S̃⁺_{p₊}}) on the graph of the connecting map.
    Connecting(usize, usize),
    /// Free start and entry point into p₊: (ev₋, ev_{S̃⁺_{p₊}}).
    GraphFromX(usize),
    /// Exit point of p₋ and free end: (ev_{S̃⁻_{p₋}}, ev₊).
    GraphToX(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Restricted {
    Local(LocalChartPoint),
    Graph(EndPoint, EndPoint),
}

fn crossing(model: &MorseModel, g: &Trajectory, h: Hypersurface) -> Result<Pt> {
    match ev_level(model, g, h)? {
        EndPoint::Chart { pt, .. } => Ok(pt),
        _ => Err(Error::NotInDomain("crossing outside the chart".into())),
    }
}

fn start_in(model: &MorseModel, g: &Trajectory, cp: usize) -> Result<Pt> {
    match g.ev_minus(model) {
        EndPoint::Chart { cp: c, pt } if c == cp => Ok(pt),
        _ => Err(Error::NotInDomain("ev₋ not in the chart".into())),
    }
}

fn end_in(model: &MorseModel, g: &Trajectory, cp: usize) -> Result<Pt> {
    match g.ev_plus(model) {
        EndPoint::Chart { cp: c, pt } if c == cp => Ok(pt),
        _ => Err(Error::NotInDomain("ev₊ not in the chart".into())),
    }
}

/// Unbroken pieces on either side of a break at `cp`: the stable and unstable directions.
fn break_sides(model: &MorseModel, g: &Trajectory, cp: usize) -> Option<(Vector, Vector)> {
    let d = model.cp(cp).delta;
    for w in g.pieces.windows(2) {
        if let (Some(Leg::Local { cp: c1, x0, .. }), Some(Leg::Local { cp: c2, y0, .. })) = (w[0].legs.last(), w[1].legs.first()) {
            if *c1 == cp && *c2 == cp {
                let x = crate::linalg::normalize(x0).map(|v| scale(&v, d)).unwrap_or_else(|| x0.clone());
                let y = crate::linalg::normalize(y0).map(|v| scale(&v, d)).unwrap_or_else(|| y0.clone());
                return Some((x, y));
            }
        }
    }
    None
}

/// Restriction maps to local trajectory spaces and graphs.
pub fn restriction(model: &MorseModel, g: &Trajectory, target: RestrictTo) -> Result<Restricted> {
    match target {
        RestrictTo::Through(cp) => {
            if let Some((x, y)) = break_sides(model, g, cp) {
                return Ok(Restricted::Local(LocalChartPoint::Through { tau: 0.0, x, y }));
            }
            let a = crossing(model, g, Hypersurface::Entry(cp))?;
            let b = crossing(model, g, Hypersurface::Exit(cp))?;
            let d = model.cp(cp).delta;
            Ok(Restricted::Local(LocalChartPoint::Through { tau: (a.yn() + b.xn()) / (2.0 * d), x: a.x, y: b.y }))
        }
        RestrictTo::FromInside(cp) => {
            let s = start_in(model, g, cp)?;
            let d = model.cp(cp).delta;
            if let Some((_, y)) = break_sides(model, g, cp) {
                return Ok(Restricted::Local(LocalChartPoint::FromInside { e: 0.0, x: s.x, y }));
            }
            let e = s.yn() / d;
            let y = rho_minus(model, cp, &s)?.y;
            Ok(Restricted::Local(LocalChartPoint::FromInside { e, x: s.x, y }))
        }
        RestrictTo::ToInside(cp) => {
            let s = end_in(model, g, cp)?;
            let d = model.cp(cp).delta;
            if let Some((x, _)) = break_sides(model, g, cp) {
                return Ok(Restricted::Local(LocalChartPoint::ToInside { e: 0.0, x, y: s.y }));
            }
            let e = s.xn() / d;
            let x = rho_plus(model, cp, &s)?.x;
            Ok(Restricted::Local(LocalChartPoint::ToInside { e, x, y: s.y }))
        }
        RestrictTo::FromOutside(cp) => {
            let s = start_in(model, g, cp)?;
            let (t, entry) = time_from_entry(model, cp, &s)?;
            let Restricted::Local(LocalChartPoint::Through { tau, y, .. }) = restriction(model, g, RestrictTo::Through(cp))? else {
                unreachable!()
            };
            Ok(Restricted::Local(LocalChartPoint::FromOutside { t_minus: t, tau, x: entry.x, y }))
        }
        RestrictTo::ToOutside(cp) => {
            let s = end_in(model, g, cp)?;
            let (t, exit) = time_to_end(model, cp, &s)?;
            let Restricted::Local(LocalChartPoint::Through { tau, x, .. }) = restriction(model, g, RestrictTo::Through(cp))? else {
                unreachable!()
            };
            Ok(Restricted::Local(LocalChartPoint::ToOutside { t_plus: t, tau, x, y: exit.y }))
        }
        RestrictTo::Connecting(a, b) => {
            let za = crossing(model, g, Hypersurface::Exit(a))?;
            let zb = crossing(model, g, Hypersurface::Entry(b))?;
            Ok(Restricted::Graph(EndPoint::Chart { cp: a, pt: za }, EndPoint::Chart { cp: b, pt: zb }))
        }
        RestrictTo::GraphFromX(b) => {
            let zb = crossing(model, g, Hypersurface::Entry(b))?;
            Ok(Restricted::Graph(g.ev_minus(model), EndPoint::Chart { cp: b, pt: zb }))
        }
        RestrictTo::GraphToX(a) => {
            let za = crossing(model, g, Hypersurface::Exit(a))?;
            Ok(Restricted::Graph(EndPoint::Chart { cp: a, pt: za }, g.ev_plus(model)))
        }
    }
}

/// Point of the hyperbola through a chart point at parameter `s` (convenience for tests).
pub fn along(pt: &Pt, s: f64) -> Pt {
    local_point(&pt.x, &pt.y, s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::examples;

    #[test]
    fn both_inside_examples() {
        let m = examples::chain3();
        let s = m.find("s").unwrap();
        let (x, y) = (vec![0.7], vec![-1.2]);
        let b = LocalChartPoint::BothInside { tau: 0.0, x: x.clone(), y: y.clone() }.inverse(&m, s).unwrap();
        assert_eq!(b.num_breaks(), 1);
        assert_eq!(chart_both_inside(&m, s, &b).unwrap(), LocalChartPoint::BothInside { tau: 0.0, x: x.clone(), y: y.clone() });
        let z = LocalChartPoint::BothInside { tau: 1.0, x: x.clone(), y: y.clone() }.inverse(&m, s).unwrap();
        assert_eq!(z.length(), 0.0);
        let g = LocalChartPoint::BothInside { tau: 0.3, x: x.clone(), y: y.clone() }.inverse(&m, s).unwrap();
        let LocalChartPoint::BothInside { tau, x: x2, y: y2 } = chart_both_inside(&m, s, &g).unwrap() else { panic!() };
        assert!((tau - 0.3).abs() < 1e-12 && (x2[0] - 0.7).abs() < 1e-12 && (y2[0] + 1.2).abs() < 1e-12);
    }

    #[test]
    fn through_tau_from_transit_time() {
        let m = examples::chain3();
        let s = m.find("s").unwrap();
        let tau = 0.25;
        let g = LocalChartPoint::Through { tau, x: vec![1.0], y: vec![-1.0] }.inverse(&m, s).unwrap();
        assert!((g.length() - 4f64.ln()).abs() < 1e-15);
        let LocalChartPoint::Through { tau: t2, .. } = chart_through(&m, s, &g).unwrap() else { panic!() };
        assert!((t2 - 0.25).abs() < 1e-15);
    }

    #[test]
    fn rho_minus_examples() {
        let m = examples::chain3();
        let s = m.find("s").unwrap();
        let p = Pt::new(vec![0.4], vec![1.0]);
        assert_eq!(rho_minus(&m, s, &p).unwrap(), p);
        let q = rho_minus(&m, s, &Pt::new(vec![0.4], vec![0.5])).unwrap();
        assert!((q.x[0] - 0.2).abs() < 1e-15 && (q.y[0] - 1.0).abs() < 1e-15);
        assert!(matches!(rho_minus(&m, s, &Pt::new(vec![0.4], vec![0.0])), Err(Error::BlowupPoint(_))));
    }

    #[test]
    fn minus_time_past_exit_set() {
        let m = examples::chain3();
        let s = m.find("s").unwrap();
        let e = 0.4f64.exp();
        let g = LocalChartPoint::FromInside { e, x: vec![0.1], y: vec![1.0] }.inverse(&m, s).unwrap();
        let t = transition_time(&m, &g, s, TimeKind::Minus).unwrap();
        assert!((t - e).abs() < 1e-15);
    }
}
