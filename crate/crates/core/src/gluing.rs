//! Gluing of broken trajectories and the associativity check.

use rand::Rng;
use rayon::prelude::*;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::global_charts::{chart_inverse, solve_block, Block, BlockEnd, ChartPoint, Charts, CritSeq, EndFactor, Kind};
use crate::linalg::Vector;
use crate::trajectory::{metric, Trajectory};

/// A point of M̄(p, q): broken at `breaks`, with one element per unbroken segment.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Factor {
    pub breaks: Vec<usize>,
    pub reps: Vec<Vector>,
}

impl Factor {
    pub fn unbroken(u: Vector) -> Self {
        Factor { breaks: vec![], reps: vec![u] }
    }
}

/// The sequence and chart point of a gluing datum, with zero parameters at the breaks
/// of the factors.
pub fn expand(a: usize, points: &[usize], b: usize, taus: &[f64], factors: &[Factor]) -> Result<(CritSeq, ChartPoint)> {
    if taus.len() != points.len() || factors.len() != points.len() + 1 {
        return Err(Error::Schema(format!(
            "gluing needs {} parameters and {} factors, got {} and {}",
            points.len(),
            points.len() + 1,
            taus.len(),
            factors.len()
        )));
    }
    let mut pts = Vec::new();
    let mut ts = Vec::new();
    let mut reps = Vec::new();
    for (j, f) in factors.iter().enumerate() {
        if f.reps.len() != f.breaks.len() + 1 {
            return Err(Error::Schema("a factor needs one element per segment".into()));
        }
        for (c, r) in f.breaks.iter().zip(&f.reps) {
            reps.push(r.clone());
            pts.push(*c);
            ts.push(0.0);
        }
        reps.push(f.reps.last().unwrap().clone());
        if j < points.len() {
            pts.push(points[j]);
            ts.push(taus[j]);
        }
    }
    let k = pts.len();
    let seq = CritSeq::crit(a, pts, b);
    let cp = ChartPoint {
        taus: ts,
        minus: EndFactor::Crit(reps[0].clone()),
        middle: reps[1..k.max(1)].to_vec(),
        plus: EndFactor::Crit(reps[k].clone()),
    };
    let cp = if k == 0 { ChartPoint { middle: vec![], ..cp } } else { cp };
    Ok((seq, cp))
}

/// Glue broken trajectories from a to b through `points` with parameters `taus`.
pub fn glue(ctx: &Charts, a: usize, points: &[usize], b: usize, taus: &[f64], factors: &[Factor]) -> Result<Trajectory> {
    let (seq, cp) = expand(a, points, b, taus, factors)?;
    chart_inverse(ctx, &seq, &cp)
}

/// Glue a chart point of a sequence with finite ends.
pub fn glue_finite_end(ctx: &Charts, seq: &CritSeq, cp: &ChartPoint) -> Result<Trajectory> {
    chart_inverse(ctx, seq, cp)
}

/// Direction of an element of M(a, b) glued from a chain of isolated elements, with the
/// segment kinds given by its position in an outer gluing.
fn glue_inner(ctx: &Charts, a: usize, pts: &[usize], b: usize, taus: &[f64], reps: &[Vector], outer: Kind) -> Result<Vector> {
    let first = if matches!(outer, Kind::Minus | Kind::Both) { Kind::Minus } else { Kind::Middle };
    let last = if matches!(outer, Kind::Plus | Kind::Both) { Kind::Plus } else { Kind::Middle };
    let blk = Block {
        minus: BlockEnd::Crit { cp: a, rep: reps[0].clone(), kind: first },
        points: pts.to_vec(),
        taus: taus.to_vec(),
        middle: reps[1..pts.len()].to_vec(),
        plus: BlockEnd::Crit { cp: b, rep: reps[pts.len()].clone(), kind: last },
    };
    Ok(solve_block(ctx, &blk)?.u_line.unwrap())
}

#[derive(Clone, Debug, Serialize)]
pub struct AssocReport {
    pub pair: String,
    pub samples: usize,
    pub failures: usize,
    pub max_residual: f64,
    pub errors: Vec<String>,
}

#[allow(clippy::too_many_arguments)]
/// Compare gluing all of `big` at once with gluing `small` first and then the rest.
/// Segments between consecutive points of `big` use isolated elements chosen at random.
pub fn check_associativity(
    ctx: &Charts,
    a: usize,
    b: usize,
    big: &[usize],
    small: &[usize],
    samples: usize,
    seed: u64,
    tau_range: (f64, f64),
    n_sample: usize,
) -> AssocReport {
    let model = ctx.model;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chain = vec![a];
    chain.extend(big);
    chain.push(b);
    let label = format!(
        "{} -> {} via ({}) then ({})",
        model.id(a),
        model.id(b),
        small.iter().map(|q| model.id(*q)).collect::<Vec<_>>().join(","),
        big.iter().filter(|q| !small.contains(q)).map(|q| model.id(*q)).collect::<Vec<_>>().join(",")
    );
    let mut rep = AssocReport { pair: label, samples, failures: 0, max_residual: 0.0, errors: vec![] };
    let (lo, hi) = (tau_range.0.ln(), tau_range.1.ln());
    let mut inputs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let mut reps = Vec::new();
        for w in chain.windows(2) {
            let iso = ctx.conn.isolated(w[0], w[1]);
            if iso.is_empty() {
                rep.failures = samples;
                rep.errors.push("segments of the chain must be isolated".into());
                return rep;
            }
            reps.push(iso[rng.gen_range(0..iso.len())].clone());
        }
        let taus: Vec<f64> = big.iter().map(|_| rng.gen_range(lo..hi).exp()).collect();
        inputs.push((taus, reps));
    }
    let results: Vec<std::result::Result<f64, String>> = inputs
        .par_iter()
        .map(|(taus, reps)| {
            let factors: Vec<Factor> = reps.iter().cloned().map(Factor::unbroken).collect();
            let lhs = glue(ctx, a, big, b, taus, &factors).map_err(|e| format!("direct: {e}"))?;
            let rhs = glue_staged(ctx, a, b, big, small, taus, reps).map_err(|e| format!("staged: {e}"))?;
            Ok(metric(model, &lhs, &rhs, n_sample))
        })
        .collect();
    for r in results {
        match r {
            Ok(d) => rep.max_residual = rep.max_residual.max(d),
            Err(e) => {
                rep.failures += 1;
                rep.errors.push(e);
            }
        }
    }
    rep
}

/// Glue the points of `big` missing from `small` into the outer segments first.
pub fn glue_staged(ctx: &Charts, a: usize, b: usize, big: &[usize], small: &[usize], taus: &[f64], reps: &[Vector]) -> Result<Trajectory> {
    let mut outer_pts = Vec::new();
    let mut outer_taus = Vec::new();
    let mut factors = Vec::new();
    let mut seg_start = a;
    let mut inner_pts = Vec::new();
    let mut inner_taus = Vec::new();
    let mut inner_reps = vec![reps[0].clone()];
    let n_outer = small.len();
    for (i, &q) in big.iter().enumerate() {
        if small.contains(&q) {
            let kind = if factors.is_empty() { Kind::Minus } else { Kind::Middle };
            let kind = if n_outer == 0 { Kind::Both } else { kind };
            factors.push(finish_inner(ctx, seg_start, &inner_pts, q, &inner_taus, &inner_reps, kind)?);
            outer_pts.push(q);
            outer_taus.push(taus[i]);
            seg_start = q;
            inner_pts.clear();
            inner_taus.clear();
            inner_reps = vec![reps[i + 1].clone()];
        } else {
            inner_pts.push(q);
            inner_taus.push(taus[i]);
            inner_reps.push(reps[i + 1].clone());
        }
    }
    let kind = if factors.is_empty() { Kind::Both } else { Kind::Plus };
    factors.push(finish_inner(ctx, seg_start, &inner_pts, b, &inner_taus, &inner_reps, kind)?);
    glue(ctx, a, &outer_pts, b, &outer_taus, &factors)
}

fn finish_inner(ctx: &Charts, a: usize, pts: &[usize], b: usize, taus: &[f64], reps: &[Vector], outer: Kind) -> Result<Factor> {
    if pts.is_empty() {
        return Ok(Factor::unbroken(reps[0].clone()));
    }
    Ok(Factor::unbroken(glue_inner(ctx, a, pts, b, taus, reps, outer)?))
}

/// Fit d ≈ C τ^α by least squares in log–log coordinates: (α, C).
pub fn fit_power_law(taus: &[f64], ds: &[f64]) -> (f64, f64) {
    let n = taus.len() as f64;
    let xs: Vec<f64> = taus.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = ds.iter().map(|d| d.max(1e-300).ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let alpha = sxy / sxx;
    (alpha, (my - alpha * mx).exp())
}
