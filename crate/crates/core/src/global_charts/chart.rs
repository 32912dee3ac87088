//! Chart maps of the compactified trajectory spaces and their inverses (gluing).

use std::f64::consts::LN_2;

use nalgebra::DMatrix;
use serde::Serialize;

use super::critseq::{CritSeq, EndCond};
use super::projection::{exit_face, project, route_segment, Kind, SegStart};
use super::Charts;
use crate::error::{Error, Result};
use crate::flow::{departure_leg, follow_exit, line_from_critical, LineEnd};
use crate::linalg::{dist, lstsq, norm, normalize, scale, sphere_retract, sub, tangent_basis, Vector};
use crate::local_charts::{rho_minus, rho_plus};
use crate::model::{MorseModel, Pt};
use crate::trajectory::{local_point, EndPoint, Leg, Trajectory};

/// End factor of a chart point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum EndFactor {
    /// Element of M(p, q) adjacent to a critical end, as an exit direction at the upper point.
    Crit(Vector),
    /// Finite end outside Ū: flow time T (T₋ ≤ 0 or T₊ ≥ 0) and the sphere point.
    Outside { t: f64, v: Vector },
    /// Finite end inside Ũ: x ∈ B̃⁺ (minus end) or y ∈ B̃⁻ (plus end).
    Inside(Vector),
}

/// Coordinates of a trajectory in the chart of a critical sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ChartPoint {
    /// One gluing parameter per point of the sequence.
    pub taus: Vec<f64>,
    pub minus: EndFactor,
    /// Elements of M(q_j, q_{j+1}) as exit directions at q_j.
    pub middle: Vec<Vector>,
    pub plus: EndFactor,
}

/// Meaning of a gluing parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum SlotKind {
    /// Passage through U: τ = (|x′| + |y′|)/2Δ.
    Through,
    /// Finite start (x, E·y) inside Ũ.
    MinusE,
    /// Finite end (E·x, y) inside Ũ.
    PlusE,
    /// Both ends inside Ũ: τ̃ = e^{-L}.
    Tilde,
}

fn slot_kind(minus_inside: bool, plus_inside: bool, k: usize, i: usize) -> SlotKind {
    if k == 1 && minus_inside && plus_inside {
        SlotKind::Tilde
    } else if i == 0 && minus_inside {
        SlotKind::MinusE
    } else if i + 1 == k && plus_inside {
        SlotKind::PlusE
    } else {
        SlotKind::Through
    }
}

/// End of a block between consecutive zero gluing parameters.
#[derive(Clone, Debug)]
pub enum BlockEnd {
    /// The block ends at a critical point; `rep` is the element of the adjacent segment.
    Crit { cp: usize, rep: Vector, kind: Kind },
    Outside { t: f64, v: Vector },
    Inside(Vector),
}

/// A chart point with all gluing parameters positive.
#[derive(Clone, Debug)]
pub struct Block {
    pub minus: BlockEnd,
    pub points: Vec<usize>,
    pub taus: Vec<f64>,
    pub middle: Vec<Vector>,
    pub plus: BlockEnd,
}

pub struct BlockSolution {
    pub u_line: Option<Vector>,
    pub traj: Trajectory,
}

/// Unknown unit vectors of the inverse solve.
#[derive(Clone, Debug)]
struct Vars {
    u: Option<Vector>,
    xs: Vec<Vector>,
    ys: Vec<Vector>,
}

#[derive(Clone, Copy, Debug)]
enum Slot {
    U,
    X(usize),
    Y(usize),
}

impl Vars {
    fn get(&self, s: Slot) -> &Vector {
        match s {
            Slot::U => self.u.as_ref().unwrap(),
            Slot::X(i) => &self.xs[i],
            Slot::Y(i) => &self.ys[i],
        }
    }

    fn set(&mut self, s: Slot, v: Vector) {
        match s {
            Slot::U => self.u = Some(v),
            Slot::X(i) => self.xs[i] = v,
            Slot::Y(i) => self.ys[i] = v,
        }
    }
}

const PENALTY: f64 = 1e3;

fn push_or_penalty(out: &mut Vector, r: Result<Vector>, len: usize) {
    match r {
        Ok(v) if v.len() == len => out.extend(v),
        _ => out.extend(std::iter::repeat_n(PENALTY, len)),
    }
}

fn seg_dim(model: &MorseModel, a: usize, b: usize) -> isize {
    model.cp(a).index as isize - model.cp(b).index as isize - 1
}

impl Block {
    fn k(&self) -> usize {
        self.points.len()
    }

    fn minus_inside(&self) -> bool {
        matches!(self.minus, BlockEnd::Inside(_))
    }

    fn plus_inside(&self) -> bool {
        matches!(self.plus, BlockEnd::Inside(_))
    }

    fn slot(&self, i: usize) -> SlotKind {
        slot_kind(self.minus_inside(), self.plus_inside(), self.k(), i)
    }

    fn x_fixed(&self, i: usize) -> bool {
        i == 0 && !matches!(self.minus, BlockEnd::Crit { .. })
    }

    fn y_fixed(&self, i: usize) -> bool {
        i + 1 == self.k() && !matches!(self.plus, BlockEnd::Crit { .. })
    }

    fn free(&self) -> Vec<Slot> {
        let mut s = Vec::new();
        if matches!(self.minus, BlockEnd::Crit { .. }) {
            s.push(Slot::U);
        }
        for i in 0..self.k() {
            if !self.x_fixed(i) {
                s.push(Slot::X(i));
            }
            if !self.y_fixed(i) {
                s.push(Slot::Y(i));
            }
        }
        s
    }

    /// (X_i, Y_i): the x-part of the S̃⁺ crossing and y-part of the S̃⁻ crossing up to τ.
    fn xy(&self, model: &MorseModel, v: &Vars, i: usize) -> (Vector, Vector) {
        let d = model.cp(self.points[i]).delta;
        let x = match (&self.minus, i) {
            (BlockEnd::Inside(xf), 0) => xf.clone(),
            _ => scale(&v.xs[i], d),
        };
        let y = match &self.plus {
            BlockEnd::Inside(yf) if i + 1 == self.k() => yf.clone(),
            _ => scale(&v.ys[i], d),
        };
        (x, y)
    }

    fn box_points(&self, model: &MorseModel, v: &Vars, i: usize) -> (Pt, Pt) {
        let (x, y) = self.xy(model, v, i);
        let t = self.taus[i];
        (Pt::new(x.clone(), scale(&y, t)), Pt::new(scale(&x, t), y))
    }

    fn check_domain(&self, model: &MorseModel) -> Result<()> {
        if self.points.is_empty() {
            return Ok(());
        }
        if self.taus.len() != self.k() || self.middle.len() + 1 != self.k() {
            return Err(Error::Schema("block parameter counts do not match the sequence".into()));
        }
        for (i, &t) in self.taus.iter().enumerate() {
            let lim = match self.slot(i) {
                SlotKind::Through => 1.0,
                SlotKind::Tilde => 1.0 + 1e-15,
                _ => 2.0,
            };
            if !(t > 0.0 && t < lim) {
                return Err(Error::Constraint(format!("gluing parameter {t} outside (0, {lim})")));
            }
        }
        let q0 = model.cp(self.points[0]);
        let ql = model.cp(*self.points.last().unwrap());
        match &self.minus {
            BlockEnd::Outside { t, v } => {
                if !(*t <= 0.0 && *t > -LN_2) {
                    return Err(Error::Constraint(format!("T₋ = {t} outside (−ln 2, 0]")));
                }
                if (norm(v) - q0.delta).abs() > 1e-9 * q0.delta {
                    return Err(Error::Constraint("outside factor must lie on S⁺".into()));
                }
            }
            BlockEnd::Inside(x) if norm(x) >= 2.0 * q0.delta => {
                return Err(Error::Constraint("inside factor outside B̃⁺".into()));
            }
            _ => {}
        }
        match &self.plus {
            BlockEnd::Outside { t, v } => {
                if !(*t >= 0.0 && *t < LN_2) {
                    return Err(Error::Constraint(format!("T₊ = {t} outside [0, ln 2)")));
                }
                if (norm(v) - ql.delta).abs() > 1e-9 * ql.delta {
                    return Err(Error::Constraint("outside factor must lie on S⁻".into()));
                }
            }
            BlockEnd::Inside(y) if norm(y) >= 2.0 * ql.delta => {
                return Err(Error::Constraint("inside factor outside B̃⁻".into()));
            }
            _ => {}
        }
        Ok(())
    }

    fn scaled(&self, s: f64) -> Block {
        let mut b = self.clone();
        b.taus.iter_mut().for_each(|t| *t *= s);
        b
    }
}

/// Matching residuals of the inverse solve.
fn residual(ctx: &Charts, blk: &Block, v: &Vars) -> Vector {
    let model = ctx.model;
    let n = model.dim;
    let k = blk.k();
    let boxes: Vec<(Pt, Pt)> = (0..k).map(|i| blk.box_points(model, v, i)).collect();
    let face_of = |i: usize| {
        let e = &boxes[i].0;
        Pt::new(scale(&e.x, 2.0), scale(&e.y, 0.5))
    };
    let mut out = Vec::new();
    if let BlockEnd::Crit { cp: a, rep, kind } = &blk.minus {
        let q0 = blk.points[0];
        let d = model.cp(q0).delta;
        let u = v.u.as_ref().unwrap();
        let start = SegStart::Crit(u.clone());
        let r = route_segment(model, *a, &start, q0).map(|(face, _)| scale(&sub(&face.flat(), &face_of(0).flat()), 1.0 / d));
        push_or_penalty(&mut out, r, n);
        if seg_dim(model, *a, q0) >= 1 {
            let r = project(ctx, *a, q0, *kind, &start).map(|p| sub(&p, rep));
            push_or_penalty(&mut out, r, model.cp(*a).index);
        }
    }
    for i in 0..k.saturating_sub(1) {
        let (qa, qb) = (blk.points[i], blk.points[i + 1]);
        let d = model.cp(qb).delta;
        let start = SegStart::Exit(boxes[i].1.clone());
        let r = route_segment(model, qa, &start, qb).map(|(face, _)| scale(&sub(&face.flat(), &face_of(i + 1).flat()), 1.0 / d));
        push_or_penalty(&mut out, r, n);
        if seg_dim(model, qa, qb) >= 1 {
            let r = project(ctx, qa, qb, Kind::Middle, &start).map(|p| sub(&p, &blk.middle[i]));
            push_or_penalty(&mut out, r, model.cp(qa).index);
        }
    }
    if let BlockEnd::Crit { cp: b, rep, kind } = &blk.plus {
        let ql = blk.points[k - 1];
        let db = model.cp(*b).delta;
        let start = SegStart::Exit(boxes[k - 1].1.clone());
        let r = route_segment(model, ql, &start, *b).map(|(face, _)| scale(&face.y, 2.0 / db));
        push_or_penalty(&mut out, r, model.cp(*b).index);
        if seg_dim(model, ql, *b) >= 1 {
            let r = project(ctx, ql, *b, *kind, &start).map(|p| sub(&p, rep));
            push_or_penalty(&mut out, r, model.cp(ql).index);
        }
    }
    out
}

fn direction_at_entry(model: &MorseModel, a: usize, start: &SegStart, b: usize) -> Result<Vector> {
    let (face, _) = route_segment(model, a, start, b)?;
    normalize(&face.x).ok_or_else(|| Error::ChartInversion("degenerate entry point".into()))
}

/// Initial guess from the broken configuration.
fn initial(ctx: &Charts, blk: &Block) -> Result<Vars> {
    let model = ctx.model;
    let k = blk.k();
    let mut v = Vars { u: None, xs: Vec::with_capacity(k), ys: Vec::with_capacity(k) };
    if let BlockEnd::Crit { rep, .. } = &blk.minus {
        v.u = Some(rep.clone());
    }
    for i in 0..k {
        let q = blk.points[i];
        let d = model.cp(q).delta;
        let x = if blk.x_fixed(i) {
            match &blk.minus {
                BlockEnd::Outside { v, .. } => scale(v, 1.0 / d),
                BlockEnd::Inside(x) => normalize(x).unwrap_or_else(|| x.clone()),
                _ => unreachable!(),
            }
        } else if i == 0 {
            let BlockEnd::Crit { cp: a, rep, .. } = &blk.minus else { unreachable!() };
            direction_at_entry(model, *a, &SegStart::Crit(rep.clone()), q)?
        } else {
            direction_at_entry(model, blk.points[i - 1], &SegStart::Crit(blk.middle[i - 1].clone()), q)?
        };
        let y = if blk.y_fixed(i) {
            match &blk.plus {
                BlockEnd::Outside { v, .. } => scale(v, 1.0 / d),
                BlockEnd::Inside(y) => normalize(y).unwrap_or_else(|| y.clone()),
                _ => unreachable!(),
            }
        } else if i + 1 < k {
            blk.middle[i].clone()
        } else {
            let BlockEnd::Crit { rep, .. } = &blk.plus else { unreachable!() };
            rep.clone()
        };
        v.xs.push(x);
        v.ys.push(y);
    }
    Ok(v)
}

fn apply(v: &Vars, free: &[Slot], bases: &[Vec<Vector>], p: &[f64]) -> Vars {
    let mut out = v.clone();
    let mut off = 0;
    for (s, b) in free.iter().zip(bases) {
        let c = &p[off..off + b.len()];
        out.set(*s, sphere_retract(v.get(*s), b, c));
        off += b.len();
    }
    out
}

/// Damped Gauss–Newton on the product of spheres.
fn gauss_newton(ctx: &Charts, blk: &Block, init: Vars) -> (Vars, f64) {
    let free = blk.free();
    let mut v = init;
    let mut r = residual(ctx, blk, &v);
    let mut nr = norm(&r);
    let h = ctx.params.fd_step;
    let tol = ctx.params.solve_tol * 1e-2;
    for _ in 0..ctx.params.max_iter {
        if nr < tol {
            break;
        }
        let bases: Vec<Vec<Vector>> = free.iter().map(|s| tangent_basis(v.get(*s))).collect();
        let np: usize = bases.iter().map(|b| b.len()).sum();
        if np == 0 {
            break;
        }
        let mut j = DMatrix::zeros(r.len(), np);
        for c in 0..np {
            let mut p = vec![0.0; np];
            p[c] = h;
            let rp = residual(ctx, blk, &apply(&v, &free, &bases, &p));
            p[c] = -h;
            let rm = residual(ctx, blk, &apply(&v, &free, &bases, &p));
            for i in 0..r.len() {
                j[(i, c)] = (rp[i] - rm[i]) / (2.0 * h);
            }
        }
        let step = lstsq(&j, &scale(&r, -1.0));
        let mut lam = 1.0;
        let mut accepted = false;
        while lam > 1e-8 {
            let trial = apply(&v, &free, &bases, &scale(&step, lam));
            let rt = residual(ctx, blk, &trial);
            let nt = norm(&rt);
            if nt < nr * (1.0 - 1e-4 * lam) {
                v = trial;
                r = rt;
                nr = nt;
                accepted = true;
                break;
            }
            lam *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    (v, nr)
}

/// The glued trajectory of a block, solving the matching equations.
pub(crate) fn solve_block(ctx: &Charts, blk: &Block) -> Result<BlockSolution> {
    let model = ctx.model;
    if blk.points.is_empty() {
        return Ok(BlockSolution { u_line: block_line_dir(blk), traj: trivial_block(ctx, blk)? });
    }
    blk.check_domain(model)?;
    let init = initial(ctx, blk)?;
    let (v, nr) = solve_from(ctx, blk, init);
    if !(nr < ctx.params.solve_tol) {
        return Err(Error::ChartInversion(format!("matching residual {nr:.3e} after continuation")));
    }
    check_discrete(ctx, blk, &v)?;
    let traj = assemble(ctx, blk, &v)?;
    Ok(BlockSolution { u_line: v.u.clone(), traj })
}

/// Gauss–Newton from `init`, falling back to continuation in the gluing parameters.
fn solve_from(ctx: &Charts, blk: &Block, init: Vars) -> (Vars, f64) {
    let tol = ctx.params.solve_tol;
    let (v, nr) = gauss_newton(ctx, blk, init.clone());
    if nr < tol {
        return (v, nr);
    }
    let mut w = init;
    let mut nr = f64::INFINITY;
    for j in (0..=12).rev() {
        let (wn, rn) = gauss_newton(ctx, &blk.scaled(0.5f64.powi(j)), w);
        w = wn;
        if j > 0 && !(rn < 1e3 * tol) {
            return (w, f64::INFINITY);
        }
        nr = rn;
    }
    (w, nr)
}

/// Multistart statistics of the inverse solve of one block.
#[derive(Clone, Debug, Serialize)]
pub struct Multistart {
    pub points: Vec<usize>,
    pub starts: usize,
    pub converged: usize,
    pub distinct: usize,
    /// Largest distance between converged solutions.
    pub spread: f64,
}

fn flatten(v: &Vars) -> Vector {
    let mut out = v.u.clone().unwrap_or_default();
    v.xs.iter().chain(&v.ys).for_each(|w| out.extend(w));
    out
}

/// Solve every block of a chart point from `starts` perturbed initial guesses and count the
/// distinct solutions (distance above 1e-6).
pub fn multistart_inverse(ctx: &Charts, seq: &CritSeq, cp: &ChartPoint, starts: usize, seed: u64) -> Result<Vec<Multistart>> {
    use rand::{Rng, SeedableRng};
    seq.check(ctx.model, &ctx.conn)?;
    check_factor_constraints(ctx, seq, cp)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for blk in blocks_of(seq, cp)? {
        if blk.points.is_empty() {
            continue;
        }
        blk.check_domain(ctx.model)?;
        let init = initial(ctx, &blk)?;
        let free = blk.free();
        let mut sols: Vec<Vector> = Vec::new();
        for s in 0..starts {
            let amp = 0.3 * (s + 1) as f64 / starts as f64;
            let bases: Vec<Vec<Vector>> = free.iter().map(|sl| tangent_basis(init.get(*sl))).collect();
            let np: usize = bases.iter().map(|b| b.len()).sum();
            let p: Vector = (0..np).map(|_| rng.gen_range(-amp..=amp)).collect();
            let (v, nr) = solve_from(ctx, &blk, apply(&init, &free, &bases, &p));
            if nr < ctx.params.solve_tol {
                sols.push(flatten(&v));
            }
        }
        let mut classes: Vec<&Vector> = Vec::new();
        let mut spread = 0.0f64;
        for (i, a) in sols.iter().enumerate() {
            for b in &sols[..i] {
                spread = spread.max(dist(a, b));
            }
            if !classes.iter().any(|c| dist(c, a) <= 1e-6) {
                classes.push(a);
            }
        }
        out.push(Multistart { points: blk.points.clone(), starts, converged: sols.len(), distinct: classes.len(), spread });
    }
    Ok(out)
}

fn block_line_dir(blk: &Block) -> Option<Vector> {
    match &blk.minus {
        BlockEnd::Crit { rep, .. } => Some(rep.clone()),
        _ => None,
    }
}

/// Segments of zero-dimensional spaces carry no equation; check the component.
fn check_discrete(ctx: &Charts, blk: &Block, v: &Vars) -> Result<()> {
    let model = ctx.model;
    let k = blk.k();
    let boxes: Vec<(Pt, Pt)> = (0..k).map(|i| blk.box_points(model, v, i)).collect();
    let mut checks: Vec<(usize, usize, Kind, SegStart, Vector)> = Vec::new();
    if let BlockEnd::Crit { cp, rep, kind } = &blk.minus {
        checks.push((*cp, blk.points[0], *kind, SegStart::Crit(v.u.clone().unwrap()), rep.clone()));
    }
    for i in 0..k.saturating_sub(1) {
        checks.push((blk.points[i], blk.points[i + 1], Kind::Middle, SegStart::Exit(boxes[i].1.clone()), blk.middle[i].clone()));
    }
    if let BlockEnd::Crit { cp, rep, kind } = &blk.plus {
        checks.push((blk.points[k - 1], *cp, *kind, SegStart::Exit(boxes[k - 1].1.clone()), rep.clone()));
    }
    for (a, b, kind, start, rep) in checks {
        if seg_dim(model, a, b) != 0 {
            continue;
        }
        let p = project(ctx, a, b, kind, &start)?;
        if dist(&p, &rep) > 1e-8 {
            return Err(Error::ChartInversion(format!(
                "glued segment {} → {} projects onto a different element",
                model.id(a),
                model.id(b)
            )));
        }
    }
    Ok(())
}

/// Blocks without interior points: a single line between critical points or a local
/// leg between a finite end and a critical point.
fn trivial_block(ctx: &Charts, blk: &Block) -> Result<Trajectory> {
    let model = ctx.model;
    match (&blk.minus, &blk.plus) {
        (BlockEnd::Crit { cp: a, rep, .. }, BlockEnd::Crit { cp: b, .. }) => {
            let (t, c) = line_from_critical(model, *a, rep, Some(*b))?;
            if c != *b {
                return Err(Error::ChartInversion(format!(
                    "line from {} converges to {} instead of {}",
                    model.id(*a),
                    model.id(c),
                    model.id(*b)
                )));
            }
            Ok(t)
        }
        (BlockEnd::Inside(x), BlockEnd::Crit { cp, .. }) => {
            let u = model.cp(*cp).unstable_dim();
            Ok(Trajectory::unbroken(vec![Leg::Local { cp: *cp, x0: x.clone(), y0: vec![0.0; u], t0: 0.0, t1: f64::INFINITY }]))
        }
        (BlockEnd::Outside { t, v }, BlockEnd::Crit { cp, .. }) => {
            let u = model.cp(*cp).unstable_dim();
            Ok(Trajectory::unbroken(vec![Leg::Local { cp: *cp, x0: v.clone(), y0: vec![0.0; u], t0: *t, t1: f64::INFINITY }]))
        }
        (BlockEnd::Crit { cp, .. }, BlockEnd::Inside(y)) => {
            let s = model.cp(*cp).stable_dim();
            Ok(Trajectory::unbroken(vec![Leg::Local { cp: *cp, x0: vec![0.0; s], y0: y.clone(), t0: f64::NEG_INFINITY, t1: 0.0 }]))
        }
        (BlockEnd::Crit { cp, .. }, BlockEnd::Outside { t, v }) => {
            let s = model.cp(*cp).stable_dim();
            Ok(Trajectory::unbroken(vec![Leg::Local { cp: *cp, x0: vec![0.0; s], y0: v.clone(), t0: f64::NEG_INFINITY, t1: *t }]))
        }
        _ => Err(Error::Schema("a block with two finite ends needs a point".into())),
    }
}

/// Legs of the solved block.
fn assemble(ctx: &Charts, blk: &Block, v: &Vars) -> Result<Trajectory> {
    let model = ctx.model;
    let k = blk.k();
    let mut legs = Vec::new();
    if let BlockEnd::Crit { cp: a, .. } = &blk.minus {
        let u = v.u.as_ref().unwrap();
        legs.push(departure_leg(model, *a, u));
        let (_, route) = route_segment(model, *a, &SegStart::Crit(u.clone()), blk.points[0])?;
        legs.extend(route);
    }
    for i in 0..k {
        let q = blk.points[i];
        let d = model.cp(q).delta;
        let (entry, exit) = blk.box_points(model, v, i);
        let tau = blk.taus[i];
        let t0 = match (&blk.minus, i) {
            (BlockEnd::Inside(_), 0) => 0.0,
            (BlockEnd::Outside { t, .. }, 0) => *t,
            _ => -LN_2,
        };
        let last = i + 1 == k;
        let t1 = match &blk.plus {
            BlockEnd::Inside(_) if last => -tau.ln(),
            BlockEnd::Outside { t, .. } if last => -tau.ln() + t,
            _ => (2.0 * d / entry.yn()).ln(),
        };
        legs.push(Leg::Local { cp: q, x0: entry.x.clone(), y0: entry.y.clone(), t0, t1 });
        if !last {
            let (_, route) = route_segment(model, q, &SegStart::Exit(exit), blk.points[i + 1])?;
            legs.extend(route);
        }
    }
    if let BlockEnd::Crit { cp: b, .. } = &blk.plus {
        let q = blk.points[k - 1];
        let (_, exit) = blk.box_points(model, v, k - 1);
        let line = follow_exit(model, q, &exit_face(model, q, &SegStart::Exit(exit)), None, Some(*b))?;
        match line.end {
            LineEnd::Converged(c) if c == *b => legs.extend(line.legs),
            _ => {
                return Err(Error::ChartInversion(format!("glued line does not converge to {}", model.id(*b))));
            }
        }
    }
    Ok(Trajectory::unbroken(legs))
}

fn seg_rep(seq: &CritSeq, cp: &ChartPoint, j: usize) -> Vector {
    let k = seq.k();
    if j == 0 {
        if let EndFactor::Crit(u) = &cp.minus {
            return u.clone();
        }
        return Vec::new();
    }
    if j == k {
        if let EndFactor::Crit(u) = &cp.plus {
            return u.clone();
        }
        return Vec::new();
    }
    cp.middle[j - 1].clone()
}

/// Split a chart point at its zero gluing parameters.
pub(crate) fn blocks_of(seq: &CritSeq, cp: &ChartPoint) -> Result<Vec<Block>> {
    let k = seq.k();
    if cp.taus.len() != k || (k > 0 && cp.middle.len() + 1 != k) {
        return Err(Error::Schema(format!("chart point has {} parameters for a sequence of length {k}", cp.taus.len())));
    }
    let mut minus = match (seq.minus, &cp.minus) {
        (EndCond::Crit(a), EndFactor::Crit(u)) => BlockEnd::Crit { cp: a, rep: u.clone(), kind: Kind::Minus },
        (EndCond::Outside, EndFactor::Outside { t, v }) => BlockEnd::Outside { t: *t, v: v.clone() },
        (EndCond::Inside, EndFactor::Inside(x)) => BlockEnd::Inside(x.clone()),
        _ => return Err(Error::Schema("minus factor does not match the end condition".into())),
    };
    let plus = match (seq.plus, &cp.plus) {
        (EndCond::Crit(b), EndFactor::Crit(u)) => BlockEnd::Crit { cp: b, rep: u.clone(), kind: Kind::Plus },
        (EndCond::Outside, EndFactor::Outside { t, v }) => BlockEnd::Outside { t: *t, v: v.clone() },
        (EndCond::Inside, EndFactor::Inside(y)) => BlockEnd::Inside(y.clone()),
        _ => return Err(Error::Schema("plus factor does not match the end condition".into())),
    };
    let mut out = Vec::new();
    let (mut pts, mut taus, mut mids) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..k {
        let q = seq.points[i];
        if cp.taus[i] == 0.0 {
            let end = BlockEnd::Crit { cp: q, rep: seg_rep(seq, cp, i), kind: Kind::Plus };
            out.push(Block { minus, points: std::mem::take(&mut pts), taus: std::mem::take(&mut taus), middle: std::mem::take(&mut mids), plus: end });
            minus = BlockEnd::Crit { cp: q, rep: seg_rep(seq, cp, i + 1), kind: Kind::Minus };
        } else {
            if !pts.is_empty() {
                mids.push(seg_rep(seq, cp, i));
            }
            pts.push(q);
            taus.push(cp.taus[i]);
        }
    }
    out.push(Block { minus, points: pts, taus, middle: mids, plus });
    for b in out.iter_mut() {
        if b.points.is_empty() {
            if let (BlockEnd::Crit { kind: km, .. }, BlockEnd::Crit { kind: kp, .. }) = (&mut b.minus, &mut b.plus) {
                *km = Kind::Both;
                *kp = Kind::Both;
            }
        }
    }
    Ok(out)
}

/// Inverse of the chart of `seq`: the glued trajectory.
pub fn chart_inverse(ctx: &Charts, seq: &CritSeq, cp: &ChartPoint) -> Result<Trajectory> {
    seq.check(ctx.model, &ctx.conn)?;
    if seq.k() == 0 {
        let (EndCond::Crit(a), EndCond::Crit(b), EndFactor::Crit(u)) = (seq.minus, seq.plus, &cp.minus) else {
            return Err(Error::Schema("the chart of an empty sequence with finite ends is the identity".into()));
        };
        return trivial_block(
            ctx,
            &Block {
                minus: BlockEnd::Crit { cp: a, rep: u.clone(), kind: Kind::Both },
                points: vec![],
                taus: vec![],
                middle: vec![],
                plus: BlockEnd::Crit { cp: b, rep: u.clone(), kind: Kind::Both },
            },
        );
    }
    check_factor_constraints(ctx, seq, cp)?;
    let parts = blocks_of(seq, cp)?
        .iter()
        .map(|b| solve_block(ctx, b).map(|s| s.traj))
        .collect::<Result<Vec<_>>>()?;
    Ok(Trajectory::concat(parts))
}

fn check_factor_constraints(ctx: &Charts, seq: &CritSeq, cp: &ChartPoint) -> Result<()> {
    let model = ctx.model;
    let t = ctx.params.t;
    let k = seq.k();
    let mi = seq.minus == EndCond::Inside;
    let pi = seq.plus == EndCond::Inside;
    for i in 0..k {
        let d = model.cp(seq.points[i]).delta;
        match slot_kind(mi, pi, k, i) {
            SlotKind::MinusE => {
                if let EndFactor::Inside(x) = &cp.minus {
                    if !(cp.taus[i] * norm(x) < t * d) {
                        return Err(Error::Constraint(format!("E|x| = {:.3e} not below tΔ", cp.taus[i] * norm(x))));
                    }
                }
            }
            SlotKind::PlusE => {
                if let EndFactor::Inside(y) = &cp.plus {
                    if !(cp.taus[i] * norm(y) < t * d) {
                        return Err(Error::Constraint(format!("E|y| = {:.3e} not below tΔ", cp.taus[i] * norm(y))));
                    }
                }
            }
            SlotKind::Through => {
                if !(0.0..1.0).contains(&cp.taus[i]) {
                    return Err(Error::Constraint(format!("τ = {} outside [0, 1)", cp.taus[i])));
                }
            }
            SlotKind::Tilde => {
                if !(0.0..=1.0).contains(&cp.taus[i]) {
                    return Err(Error::Constraint(format!("τ̃ = {} outside [0, 1]", cp.taus[i])));
                }
            }
        }
    }
    Ok(())
}

/// Point of the chart of `cp` at a trajectory end, converting ambient points.
fn end_in_chart(model: &MorseModel, e: EndPoint, cp: usize) -> Result<Pt> {
    match e {
        EndPoint::Chart { cp: c, pt } if c == cp => Ok(pt),
        EndPoint::Chart { cp: c, pt } => model
            .box_coords(cp, &model.embed(c, &pt))
            .ok_or_else(|| Error::NotInDomain(format!("end point is not in the chart of {}", model.id(cp)))),
        EndPoint::Ambient(a) => model
            .box_coords(cp, &a)
            .ok_or_else(|| Error::NotInDomain(format!("end point is not in the chart of {}", model.id(cp)))),
        EndPoint::Critical(_) => Err(Error::NotInDomain("trajectory has a critical end".into())),
    }
}

/// Crossing of S̃⁺ (entry) or S̃⁻ (exit) of `cp` among the local legs, ends included.
fn local_crossing(model: &MorseModel, g: &Trajectory, cp: usize, entry: bool) -> Option<Pt> {
    let d = model.cp(cp).delta;
    for leg in g.local_legs(cp) {
        let Leg::Local { x0, y0, t0, t1, .. } = leg else { continue };
        let s = if entry {
            let xn = norm(x0);
            if xn == 0.0 {
                continue;
            }
            (xn / d).ln()
        } else {
            let yn = norm(y0);
            if yn == 0.0 {
                continue;
            }
            (d / yn).ln()
        };
        let slack = 1e-12 * (1.0 + s.abs());
        if s >= t0 - slack && s <= t1 + slack {
            return Some(local_point(x0, y0, s));
        }
    }
    None
}

/// Directions (x before, y after) of a break at `cp`, scaled to Δ.
fn break_dirs(model: &MorseModel, g: &Trajectory, cp: usize) -> Result<(Vector, Vector)> {
    let d = model.cp(cp).delta;
    for w in g.pieces.windows(2) {
        if let (Some(Leg::Local { cp: c1, x0, .. }), Some(Leg::Local { cp: c2, y0, .. })) = (w[0].legs.last(), w[1].legs.first()) {
            if *c1 == cp && *c2 == cp {
                let x = normalize(x0).map(|x| scale(&x, d));
                let y = normalize(y0).map(|y| scale(&y, d));
                if let (Some(x), Some(y)) = (x, y) {
                    return Ok((x, y));
                }
            }
        }
    }
    Err(Error::NotInDomain(format!("no break at {}", model.id(cp))))
}

fn first_dir(g: &Trajectory, model: &MorseModel, a: usize) -> Result<Vector> {
    match g.pieces.first().and_then(|p| p.legs.first()) {
        Some(Leg::Local { cp, y0, t0, .. }) if *cp == a && t0.is_infinite() => {
            normalize(y0).ok_or_else(|| Error::NotInDomain("constant trajectory".into()))
        }
        _ => Err(Error::NotInDomain(format!("trajectory does not start at {}", model.id(a)))),
    }
}

/// Transition times and sphere evaluations of a trajectory along a sequence.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Evaluations {
    pub taus: Vec<f64>,
    /// Flow time from the start to S̃⁺ of q₁ (Outside minus end), else 0.
    pub t_minus: f64,
    /// Flow time from S̃⁻ of q_k to the end (Outside plus end), else 0.
    pub t_plus: f64,
    /// x-parts of the entry points (Δ-sphere, or B̃⁺ at an Inside start).
    pub xs: Vec<Vector>,
    /// y-parts of the exit points (Δ-sphere, or B̃⁻ at an Inside end).
    pub ys: Vec<Vector>,
}

/// τ(q̲) × Ev(q̲) of a trajectory with at least one point in the sequence.
pub fn ev_and_tau(ctx: &Charts, seq: &CritSeq, g: &Trajectory) -> Result<Evaluations> {
    let model = ctx.model;
    seq.check(model, &ctx.conn)?;
    let k = seq.k();
    if k == 0 {
        return Err(Error::Schema("the empty sequence has no evaluations".into()));
    }
    let breaks = g.breaking_points();
    if breaks.iter().any(|b| !seq.points.contains(b)) {
        return Err(Error::NotInDomain("trajectory breaks at a point outside the sequence".into()));
    }
    match (seq.minus, g.ev_minus(model)) {
        (EndCond::Crit(a), EndPoint::Critical(c)) if a == c => {}
        (EndCond::Crit(_), _) => return Err(Error::NotInDomain("minus end does not match".into())),
        (_, EndPoint::Critical(_)) => return Err(Error::NotInDomain("minus end is critical".into())),
        _ => {}
    }
    match (seq.plus, g.ev_plus(model)) {
        (EndCond::Crit(b), EndPoint::Critical(c)) if b == c => {}
        (EndCond::Crit(_), _) => return Err(Error::NotInDomain("plus end does not match".into())),
        (_, EndPoint::Critical(_)) => return Err(Error::NotInDomain("plus end is critical".into())),
        _ => {}
    }
    let mi = seq.minus == EndCond::Inside;
    let pi = seq.plus == EndCond::Inside;
    let q0 = seq.points[0];
    let ql = seq.points[k - 1];
    let start = if matches!(seq.minus, EndCond::Crit(_)) { None } else { Some(end_in_chart(model, g.ev_minus(model), q0)?) };
    let end = if matches!(seq.plus, EndCond::Crit(_)) { None } else { Some(end_in_chart(model, g.ev_plus(model), ql)?) };
    let mut t_minus = 0.0;
    let mut t_plus = 0.0;
    let mut taus = Vec::with_capacity(k);
    let mut xs = Vec::with_capacity(k);
    let mut ys = Vec::with_capacity(k);
    for i in 0..k {
        let q = seq.points[i];
        let d = model.cp(q).delta;
        let broken = breaks.contains(&q);
        let bd = if broken { Some(break_dirs(model, g, q)?) } else { None };
        let (tau, x, y) = match slot_kind(mi, pi, k, i) {
            SlotKind::Tilde => {
                let (s, e) = (start.clone().unwrap(), end.clone().unwrap());
                let tau = if broken { 0.0 } else { (-g.length()).exp() };
                (tau, s.x, e.y)
            }
            SlotKind::MinusE => {
                let s = start.clone().unwrap();
                match &bd {
                    Some((_, y)) => (0.0, s.x, y.clone()),
                    None => {
                        let yn = s.yn();
                        let y = normalize(&s.y).map(|v| scale(&v, d)).ok_or_else(|| Error::NotInDomain("start on the stable sphere of an unbroken trajectory".into()))?;
                        (yn / d, s.x, y)
                    }
                }
            }
            SlotKind::PlusE => {
                let e = end.clone().unwrap();
                match &bd {
                    Some((x, _)) => (0.0, x.clone(), e.y),
                    None => {
                        let xn = e.xn();
                        let x = normalize(&e.x).map(|v| scale(&v, d)).ok_or_else(|| Error::NotInDomain("end on the unstable sphere of an unbroken trajectory".into()))?;
                        (xn / d, x, e.y)
                    }
                }
            }
            SlotKind::Through => {
                let entry = if i == 0 && seq.minus == EndCond::Outside {
                    let s = start.clone().unwrap();
                    let xn = s.xn();
                    if xn < d * (1.0 - 1e-12) {
                        return Err(Error::NotInDomain("start lies inside Ū".into()));
                    }
                    t_minus = -(xn / d).ln();
                    Some(rho_plus(model, q, &s)?)
                } else if broken {
                    None
                } else {
                    Some(local_crossing(model, g, q, true).ok_or_else(|| Error::NotInDomain(format!("no entry crossing at {}", model.id(q))))?)
                };
                let exit = if i + 1 == k && seq.plus == EndCond::Outside {
                    let e = end.clone().unwrap();
                    let yn = e.yn();
                    if yn < d * (1.0 - 1e-12) {
                        return Err(Error::NotInDomain("end lies inside Ū".into()));
                    }
                    t_plus = (yn / d).ln();
                    Some(rho_minus(model, q, &e)?)
                } else if broken {
                    None
                } else {
                    Some(local_crossing(model, g, q, false).ok_or_else(|| Error::NotInDomain(format!("no exit crossing at {}", model.id(q))))?)
                };
                if let Some((bx, by)) = &bd {
                    let x = entry.map(|e| e.x).unwrap_or_else(|| bx.clone());
                    let y = exit.map(|e| e.y).unwrap_or_else(|| by.clone());
                    (0.0, x, y)
                } else {
                    let (en, ex) = (entry.unwrap(), exit.unwrap());
                    ((en.yn() + ex.xn()) / (2.0 * d), en.x, ex.y)
                }
            }
        };
        taus.push(tau);
        xs.push(x);
        ys.push(y);
    }
    Ok(Evaluations { taus, t_minus, t_plus, xs, ys })
}

/// Entry and exit points (x_i, τ_i y_i), (τ_i x_i, y_i) of each point of the sequence, with
/// the flow Ψ_{T₋} applied to the first entry and Ψ_{T₊} to the last exit.
pub fn iota(ev: &Evaluations) -> Result<Vec<(Pt, Pt)>> {
    let k = ev.taus.len();
    if ev.xs.len() != k || ev.ys.len() != k {
        return Err(Error::Schema("evaluation counts do not match".into()));
    }
    Ok((0..k)
        .map(|i| {
            let t = ev.taus[i];
            let mut entry = Pt::new(ev.xs[i].clone(), scale(&ev.ys[i], t));
            let mut exit = Pt::new(scale(&ev.xs[i], t), ev.ys[i].clone());
            if i == 0 {
                entry = local_point(&entry.x, &entry.y, ev.t_minus);
            }
            if i + 1 == k {
                exit = local_point(&exit.x, &exit.y, ev.t_plus);
            }
            (entry, exit)
        })
        .collect())
}

/// The chart of the critical sequence `seq` at the trajectory `g`.
pub fn chart_forward(ctx: &Charts, seq: &CritSeq, g: &Trajectory) -> Result<ChartPoint> {
    let model = ctx.model;
    seq.check(model, &ctx.conn)?;
    let k = seq.k();
    if k == 0 {
        let (EndCond::Crit(a), EndCond::Crit(b)) = (seq.minus, seq.plus) else {
            return Err(Error::Schema("the chart of an empty sequence with finite ends is the identity".into()));
        };
        if g.num_breaks() > 0 || g.ev_plus(model) != EndPoint::Critical(b) {
            return Err(Error::NotInDomain("not an unbroken trajectory between the ends".into()));
        }
        let u = first_dir(g, model, a)?;
        return Ok(ChartPoint { taus: vec![], minus: EndFactor::Crit(u.clone()), middle: vec![], plus: EndFactor::Crit(u) });
    }
    let Evaluations { taus, t_minus, t_plus, xs, ys } = ev_and_tau(ctx, seq, g)?;
    let q0 = seq.points[0];
    let ql = seq.points[k - 1];
    let exits: Vec<Pt> = (0..k).map(|i| Pt::new(scale(&xs[i], taus[i]), ys[i].clone())).collect();
    let d_of = |i: usize| model.cp(seq.points[i]).delta;
    // segment j runs from q_{j-1} (or the minus end) to q_j (or the plus end)
    let seg_kind = |j: usize| {
        let near = if j == 0 { matches!(seq.minus, EndCond::Crit(_)) } else { taus[j - 1] == 0.0 };
        let far = if j == k { matches!(seq.plus, EndCond::Crit(_)) } else { taus[j] == 0.0 };
        match (near, far) {
            (true, true) => Kind::Both,
            (true, false) => Kind::Minus,
            (false, true) => Kind::Plus,
            (false, false) => Kind::Middle,
        }
    };
    let seg_start = |j: usize| -> Result<SegStart> {
        if j == 0 {
            let EndCond::Crit(a) = seq.minus else { unreachable!() };
            return Ok(SegStart::Crit(first_dir(g, model, a)?));
        }
        if taus[j - 1] == 0.0 {
            Ok(SegStart::Crit(scale(&ys[j - 1], 1.0 / d_of(j - 1))))
        } else {
            Ok(SegStart::Exit(exits[j - 1].clone()))
        }
    };
    let minus = match seq.minus {
        EndCond::Crit(a) => EndFactor::Crit(project(ctx, a, q0, seg_kind(0), &seg_start(0)?)?),
        EndCond::Outside => EndFactor::Outside { t: t_minus, v: xs[0].clone() },
        EndCond::Inside => EndFactor::Inside(xs[0].clone()),
        EndCond::Free => unreachable!(),
    };
    let mut middle = Vec::with_capacity(k - 1);
    for j in 1..k {
        middle.push(project(ctx, seq.points[j - 1], seq.points[j], seg_kind(j), &seg_start(j)?)?);
    }
    let plus = match seq.plus {
        EndCond::Crit(b) => EndFactor::Crit(project(ctx, ql, b, seg_kind(k), &seg_start(k)?)?),
        EndCond::Outside => EndFactor::Outside { t: t_plus, v: ys[k - 1].clone() },
        EndCond::Inside => EndFactor::Inside(ys[k - 1].clone()),
        EndCond::Free => unreachable!(),
    };
    let cp = ChartPoint { taus, minus, middle, plus };
    check_factor_constraints(ctx, seq, &cp)?;
    Ok(cp)
}

/// Change of end condition at the minus end: the Inside chart point (E, x) corresponds
/// to the Outside chart point with τ = E|x|/Δ, T₋ = −ln(|x|/Δ) and sphere point Δx/|x|.
pub fn end_condition_transition(model: &MorseModel, seq: &CritSeq, cp: &ChartPoint) -> Result<(CritSeq, ChartPoint)> {
    if seq.minus != EndCond::Inside || seq.k() == 0 {
        return Err(Error::Schema("transition needs an Inside minus end".into()));
    }
    if seq.k() == 1 && seq.plus == EndCond::Inside {
        return Err(Error::Schema("transition from a both-inside chart is not supported".into()));
    }
    let EndFactor::Inside(x) = &cp.minus else {
        return Err(Error::Schema("minus factor is not an Inside factor".into()));
    };
    let d = model.cp(seq.points[0]).delta;
    let xn = norm(x);
    if xn < d {
        return Err(Error::NotInDomain("start lies inside Ū: not in the overlap".into()));
    }
    let mut out = cp.clone();
    out.taus[0] = cp.taus[0] * xn / d;
    out.minus = EndFactor::Outside { t: -(xn / d).ln(), v: scale(x, d / xn) };
    let mut s = seq.clone();
    s.minus = EndCond::Outside;
    Ok((s, out))
}

/// Membership in V_t(seq): the chart applies, the image meets Ũ_t of every point of the
/// sequence and stays away from all other critical points.
pub fn in_v_t(ctx: &Charts, seq: &CritSeq, g: &Trajectory) -> bool {
    let model = ctx.model;
    let Ok(cp) = chart_forward(ctx, seq, g) else { return false };
    let t = ctx.params.t;
    let k = seq.k();
    let mi = seq.minus == EndCond::Inside;
    let pi = seq.plus == EndCond::Inside;
    for i in 0..k {
        if slot_kind(mi, pi, k, i) == SlotKind::Through && !(cp.taus[i] < t) {
            return false;
        }
    }
    let mut ends = Vec::new();
    if let EndCond::Crit(a) = seq.minus {
        ends.push(a);
    }
    if let EndCond::Crit(b) = seq.plus {
        ends.push(b);
    }
    for c in 0..model.points.len() {
        if seq.points.contains(&c) || ends.contains(&c) {
            continue;
        }
        let d = model.cp(c).delta;
        for leg in g.local_legs(c) {
            if let Leg::Local { x0, y0, t0, t1, .. } = leg {
                if t0.is_infinite() || t1.is_infinite() {
                    return false;
                }
                // closest approach of |x|² + |y|² along the hyperbola
                let (a, b) = (norm(x0), norm(y0));
                let s = if a > 0.0 && b > 0.0 { (0.5 * (a / b).ln()).clamp(*t0, *t1) } else { *t0 };
                let p = local_point(x0, y0, s);
                if norm(&p.flat()) < 1e-6 * d {
                    return false;
                }
            }
        }
    }
    true
}
