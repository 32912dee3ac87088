//! Tubular projections from neighbourhoods of M(a, b) onto M(a, b).
//!
//! Elements of M(a, b) are exit directions u ∈ S⁻_a. A segment start is either such a
//! direction or a point of the exit set S̃⁻_a. The base projection π₀ minimises a matching
//! objective over M(a, b); for pairs with intermediate connections it is blended with the
//! glued projection π̂ near broken configurations.

use nalgebra::DMatrix;

use super::chart::{solve_block, Block, BlockEnd};
use super::Charts;
use crate::error::{Error, Result};
use crate::flow::{follow_exit, LineEnd};
use crate::linalg::{concat, lstsq, norm, normalize, null_space, scale, smoothstep, sphere_retract, sub, tangent_basis, Vector};
use crate::model::{MorseModel, Pt};
use crate::trajectory::{local_point, Leg};

/// Which end data of a segment the projection must preserve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Kind {
    /// Preserve the crossing of S̃⁺ at the far end.
    Minus,
    /// Preserve the exit direction at the near end.
    Plus,
    /// Preserve both.
    Middle,
    /// The segment already is an element of M(a, b).
    Both,
}

impl Kind {
    fn near(self) -> bool {
        matches!(self, Kind::Plus | Kind::Middle)
    }

    fn far(self) -> bool {
        matches!(self, Kind::Minus | Kind::Middle)
    }
}

/// Start of a segment leaving a.
#[derive(Clone, Debug, PartialEq)]
pub enum SegStart {
    /// The line leaving the critical point in this unit direction.
    Crit(Vector),
    /// A point of the exit set S̃⁻_a.
    Exit(Pt),
}

/// A passage through the box of a critical point.
#[derive(Clone, Debug)]
pub struct Crossing {
    pub cp: usize,
    pub tau: f64,
    /// Crossing of S̃⁺ (virtual if the passage stays outside U).
    pub entry: Pt,
    /// Crossing of S̃⁻, unless the passage converges.
    pub exit: Option<Pt>,
}

/// Box passages among `legs`.
pub fn crossing_data(model: &MorseModel, legs: &[Leg]) -> Vec<Crossing> {
    let mut out = Vec::new();
    for leg in legs {
        if let Leg::Local { cp, x0, y0, t0, .. } = leg {
            if t0.is_infinite() {
                continue;
            }
            let d = model.cp(*cp).delta;
            let (xn, yn) = (norm(x0), norm(y0));
            if xn == 0.0 {
                continue;
            }
            let tau = xn * yn / (d * d);
            let entry = local_point(x0, y0, (xn / d).ln());
            let exit = if yn > 0.0 { Some(local_point(x0, y0, (d / yn).ln())) } else { None };
            out.push(Crossing { cp: *cp, tau, entry, exit });
        }
    }
    out
}

pub(crate) fn exit_face(model: &MorseModel, a: usize, start: &SegStart) -> Pt {
    match start {
        SegStart::Crit(u) => Pt::new(vec![0.0; model.cp(a).stable_dim()], scale(u, 2.0 * model.cp(a).delta)),
        SegStart::Exit(z) => Pt::new(scale(&z.x, 0.5), scale(&z.y, 2.0)),
    }
}

/// Follow a segment from `a` to the entry face of `b`: (entry-face point, legs).
pub(crate) fn route_segment(model: &MorseModel, a: usize, start: &SegStart, b: usize) -> Result<(Pt, Vec<Leg>)> {
    let line = follow_exit(model, a, &exit_face(model, a, start), Some(b), None)?;
    match line.end {
        LineEnd::Reached { entry, .. } => Ok((entry, line.legs)),
        LineEnd::Converged(c) => Err(Error::NotInDomain(format!(
            "segment from {} converges to {} before reaching {}",
            model.id(a),
            model.id(c),
            model.id(b)
        ))),
    }
}

/// Matching data of a segment start.
fn target(model: &MorseModel, a: usize, b: usize, kind: Kind, start: &SegStart) -> Result<Vector> {
    let mut out = Vec::new();
    if kind.near() {
        out = match start {
            SegStart::Crit(u) => scale(u, model.cp(a).delta),
            SegStart::Exit(z) => z.y.clone(),
        };
    }
    if kind.far() {
        let (face, _) = route_segment(model, a, start, b)?;
        out = concat(&out, &scale(&face.x, 0.5));
    }
    Ok(out)
}

/// (constraint F(u), matching data) of the line leaving `a` in direction `u`.
fn evaluate(model: &MorseModel, a: usize, b: usize, kind: Kind, u: &[f64]) -> Result<(Vector, Vector)> {
    let (face, _) = route_segment(model, a, &SegStart::Crit(u.to_vec()), b)?;
    let db = model.cp(b).delta;
    let f = scale(&face.y, 2.0 / db);
    let mut m = Vec::new();
    if kind.near() {
        m = scale(u, model.cp(a).delta);
    }
    if kind.far() {
        m = concat(&m, &scale(&face.x, 0.5));
    }
    Ok((f, m))
}

fn fd_jacobian<F>(f: &F, u: &[f64], basis: &[Vector], h: f64, rows: usize) -> Result<DMatrix<f64>>
where
    F: Fn(&[f64]) -> Result<Vector>,
{
    let mut j = DMatrix::zeros(rows, basis.len());
    for k in 0..basis.len() {
        let mut c = vec![0.0; basis.len()];
        c[k] = h;
        let fp = f(&sphere_retract(u, basis, &c))?;
        c[k] = -h;
        let fm = f(&sphere_retract(u, basis, &c))?;
        for i in 0..rows {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Newton restoration of F(u) = 0 with minimum-norm steps.
pub(crate) fn restore(ctx: &Charts, a: usize, b: usize, u0: &[f64]) -> Result<Vector> {
    let model = ctx.model;
    if model.cp(b).index == 0 {
        route_segment(model, a, &SegStart::Crit(u0.to_vec()), b)?;
        return Ok(u0.to_vec());
    }
    let h = ctx.params.fd_step;
    let fcon = |u: &[f64]| evaluate(model, a, b, Kind::Plus, u).map(|(f, _)| f);
    let mut u = u0.to_vec();
    for _ in 0..40 {
        let f = fcon(&u)?;
        if norm(&f) < 1e-14 {
            return Ok(u);
        }
        let basis = tangent_basis(&u);
        let j = fd_jacobian(&fcon, &u, &basis, h, f.len())?;
        let step = lstsq(&j, &scale(&f, -1.0));
        let mut lam = 1.0;
        let f0 = norm(&f);
        loop {
            let un = sphere_retract(&u, &basis, &scale(&step, lam));
            if let Ok(fnew) = fcon(&un) {
                if norm(&fnew) < f0 {
                    u = un;
                    break;
                }
            }
            lam *= 0.5;
            if lam < 1e-8 {
                if f0 < ctx.params.solve_tol {
                    return Ok(u);
                }
                return Err(Error::ProjectionFailure(format!("restoration onto M({}, {}) stalled at {f0:.2e}", model.id(a), model.id(b))));
            }
        }
    }
    let f = norm(&fcon(&u)?);
    if f < ctx.params.solve_tol {
        Ok(u)
    } else {
        Err(Error::ProjectionFailure(format!("restoration onto M({}, {}) left residual {f:.2e}", model.id(a), model.id(b))))
    }
}

/// Nearest point of M(a, b) in the matching objective.
fn pi0(ctx: &Charts, a: usize, b: usize, kind: Kind, start: &SegStart) -> Result<Vector> {
    let model = ctx.model;
    let tgt = target(model, a, b, kind, start)?;
    let dim = model.cp(a).index as isize - model.cp(b).index as isize - 1;
    if dim < 0 {
        return Err(Error::ProjectionFailure(format!("M({}, {}) is empty", model.id(a), model.id(b))));
    }
    if dim == 0 {
        let reps = ctx.conn.isolated(a, b);
        let mut best: Option<(f64, &Vector)> = None;
        for r in reps {
            let Ok((_, m)) = evaluate(model, a, b, kind, r) else { continue };
            let e = norm(&sub(&m, &tgt));
            if best.is_none_or(|(be, _)| e < be) {
                best = Some((e, r));
            }
        }
        return best
            .map(|(_, r)| r.clone())
            .ok_or_else(|| Error::ProjectionFailure(format!("no element of M({}, {})", model.id(a), model.id(b))));
    }
    let u_init = match start {
        SegStart::Crit(u) => u.clone(),
        SegStart::Exit(z) => normalize(&z.y).ok_or_else(|| Error::ProjectionFailure("exit point on the stable sphere".into()))?,
    };
    let mut u = restore(ctx, a, b, &u_init)?;
    let h = ctx.params.fd_step;
    let fcon = |v: &[f64]| evaluate(model, a, b, kind, v).map(|(f, _)| f);
    let fobj = |v: &[f64]| evaluate(model, a, b, kind, v).map(|(_, m)| sub(&m, &tgt));
    for _ in 0..ctx.params.max_iter {
        let basis = tangent_basis(&u);
        let r = fobj(&u)?;
        let f = fcon(&u)?;
        let jf = fd_jacobian(&fcon, &u, &basis, h, f.len())?;
        let jr = fd_jacobian(&fobj, &u, &basis, h, r.len())?;
        let nsp = null_space(&jf, 1e-8 * (1.0 + jf.norm()));
        let df = lstsq(&jf, &scale(&f, -1.0));
        let dfv = nalgebra::DVector::from_column_slice(&df);
        let jn = &jr * &nsp;
        let rhs: Vector = (&jr * &dfv).iter().zip(&r).map(|(a, b)| -(a + b)).collect();
        let z = lstsq(&jn, &rhs);
        let step: Vector = (&dfv + &nsp * nalgebra::DVector::from_column_slice(&z)).iter().cloned().collect();
        let r0 = norm(&r);
        let mut lam = 1.0;
        let mut moved = false;
        while lam > 1e-6 {
            let trial = sphere_retract(&u, &basis, &scale(&step, lam));
            if let Ok(tr) = restore(ctx, a, b, &trial) {
                if let Ok(rn) = fobj(&tr) {
                    if norm(&rn) <= r0 * (1.0 - 1e-4 * lam) || norm(&rn) < 1e-15 {
                        u = tr;
                        moved = true;
                        break;
                    }
                }
            }
            lam *= 0.5;
        }
        if !moved || norm(&step) * lam < 1e-13 {
            break;
        }
    }
    Ok(u)
}

/// The tubular projection of a segment from `a` (given by `start`) onto M(a, b).
pub fn project(ctx: &Charts, a: usize, b: usize, kind: Kind, start: &SegStart) -> Result<Vector> {
    let model = ctx.model;
    if kind == Kind::Both {
        return match start {
            SegStart::Crit(u) => Ok(u.clone()),
            SegStart::Exit(_) => Err(Error::ProjectionFailure("identity projection needs a line from a critical point".into())),
        };
    }
    let bn = ctx.conn.breaking_number(a, b);
    if bn == 0 {
        return pi0(ctx, a, b, kind, start);
    }
    let theta = ctx.params.theta(bn);
    let (_, legs) = route_segment(model, a, start, b)?;
    let close: Vec<_> = crossing_data(model, &legs)
        .into_iter()
        .filter(|c| c.cp != a && c.cp != b && c.tau > 0.0 && c.tau < theta && c.exit.is_some())
        .collect();
    if close.is_empty() {
        return pi0(ctx, a, b, kind, start);
    }
    let m = close.len();
    let mut ends: Vec<usize> = close.iter().map(|c| c.cp).collect();
    ends.push(b);
    let mut begins = vec![a];
    begins.extend(close.iter().map(|c| c.cp));
    let mut starts = vec![start.clone()];
    starts.extend(close.iter().map(|c| SegStart::Exit(c.exit.clone().unwrap())));
    let mut reps = Vec::with_capacity(m + 1);
    let mut kinds = Vec::with_capacity(m + 1);
    for j in 0..=m {
        let kj = if j == 0 && kind == Kind::Minus {
            Kind::Minus
        } else if j == m && kind == Kind::Plus {
            Kind::Plus
        } else {
            Kind::Middle
        };
        if !ctx.conn.connected(begins[j], ends[j]) {
            return pi0(ctx, a, b, kind, start);
        }
        reps.push(project(ctx, begins[j], ends[j], kj, &starts[j])?);
        kinds.push(kj);
    }
    let block = Block {
        minus: BlockEnd::Crit { cp: a, rep: reps[0].clone(), kind: kinds[0] },
        points: close.iter().map(|c| c.cp).collect(),
        taus: close.iter().map(|c| c.tau).collect(),
        middle: reps[1..m].to_vec(),
        plus: BlockEnd::Crit { cp: b, rep: reps[m].clone(), kind: kinds[m] },
    };
    let glued = solve_block(ctx, &block)?;
    let u_hat = glued.u_line.expect("crit block has a line direction");
    let smin = close.iter().map(|c| c.tau).fold(f64::INFINITY, f64::min);
    let psi = 1.0 - smoothstep(0.5 * theta, theta, smin);
    if psi >= 1.0 {
        return Ok(u_hat);
    }
    let u0 = pi0(ctx, a, b, kind, start)?;
    if psi <= 0.0 {
        return Ok(u0);
    }
    let mix: Vector = u0.iter().zip(&u_hat).map(|(p, q)| (1.0 - psi) * p + psi * q).collect();
    let mix = normalize(&mix).ok_or_else(|| Error::ProjectionFailure("antipodal blend".into()))?;
    restore(ctx, a, b, &mix)
}
