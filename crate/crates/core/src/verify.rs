//! Verification suites: one parametrised check per property, each returning a residual table.

use std::f64::consts::LN_2;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::flow::{line_from_critical, oracle_exit_time};
use crate::global_charts::{
    chart_forward, chart_inverse, end_condition_transition, enumerate_critseqs, in_v_t, multistart_inverse, ChartPoint,
    Charts, CritSeq, EndCond, EndFactor, Terminal,
};
use crate::gluing::{check_associativity, fit_power_law, glue, AssocReport, Factor};
use crate::linalg::{dist, norm, normalize, scale, Vector};
use crate::local_charts::{chart_both_inside, chart_through, rho_minus, rho_plus, transition_time, LocalChartPoint, TimeKind};
use crate::model::{membership, MorseModel, Pt, Region};
use crate::trajectory::{
    broken_constant, constant_at_critical, hausdorff, local_point, metric, metric_terms, EndPoint, Leg, Trajectory,
};

/// One line of a residual table.
#[derive(Clone, Debug, Serialize)]
pub struct Row {
    pub label: String,
    pub value: f64,
    pub tol: f64,
    /// "<", "<=", ">=" or "==".
    pub relation: &'static str,
    pub pass: bool,
}

impl Row {
    pub fn lt(label: impl Into<String>, value: f64, tol: f64) -> Self {
        Row { label: label.into(), value, tol, relation: "<", pass: value < tol }
    }

    pub fn le(label: impl Into<String>, value: f64, tol: f64) -> Self {
        Row { label: label.into(), value, tol, relation: "<=", pass: value <= tol }
    }

    pub fn ge(label: impl Into<String>, value: f64, min: f64) -> Self {
        Row { label: label.into(), value, tol: min, relation: ">=", pass: value >= min }
    }

    pub fn eq(label: impl Into<String>, value: f64, target: f64) -> Self {
        Row { label: label.into(), value, tol: target, relation: "==", pass: value == target }
    }
}

/// Result of one check.
#[derive(Clone, Debug, Serialize)]
pub struct Check {
    pub criterion: Option<usize>,
    pub name: String,
    pub rows: Vec<Row>,
    pub notes: Vec<String>,
    pub elapsed: f64,
    /// Per-pair reports of the associativity check.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub assoc: Vec<AssocReport>,
}

impl Check {
    pub fn new(criterion: Option<usize>, name: &str) -> Self {
        Check { criterion, name: name.into(), rows: vec![], notes: vec![], elapsed: 0.0, assoc: vec![] }
    }

    pub fn passed(&self) -> bool {
        self.rows.iter().all(|r| r.pass)
    }

    pub fn finish(mut self, t0: Instant) -> Self {
        self.elapsed = t0.elapsed().as_secs_f64();
        self
    }

    /// Append a runtime row against a limit in seconds.
    fn runtime(&mut self, t0: Instant, limit: f64) {
        self.rows.push(Row::lt("runtime [s]", t0.elapsed().as_secs_f64(), limit));
    }

    pub fn render(&self) -> String {
        let head = match self.criterion {
            Some(c) => format!("criterion {c:>2}  {}", self.name),
            None => format!("check         {}", self.name),
        };
        let mut s = format!("{head:<60} {}  ({:.2} s)\n", if self.passed() { "PASS" } else { "FAIL" }, self.elapsed);
        for r in &self.rows {
            s += &format!(
                "    {:<52} {:>12.4e} {:>2} {:<10.3e} {}\n",
                r.label,
                r.value,
                r.relation,
                r.tol,
                if r.pass { "ok" } else { "FAILED" }
            );
        }
        for n in &self.notes {
            s += &format!("    note: {n}\n");
        }
        s
    }
}

/// A verification run over one model.
#[derive(Clone, Debug, Serialize)]
pub struct Report {
    pub model: String,
    pub suite: String,
    pub seed: u64,
    pub checks: Vec<Check>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed())
    }

    pub fn render(&self) -> String {
        let mut s = format!("verify {} --suite {} (seed {})\n", self.model, self.suite, self.seed);
        for c in &self.checks {
            s += &c.render();
        }
        s += &format!("result: {}\n", if self.passed() { "PASS" } else { "FAIL" });
        s
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Charts,
    Gluing,
    Metric,
    All,
}

impl std::str::FromStr for Suite {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "charts" => Ok(Suite::Charts),
            "gluing" => Ok(Suite::Gluing),
            "metric" => Ok(Suite::Metric),
            "all" => Ok(Suite::All),
            _ => Err(Error::Schema(format!("unknown suite '{s}' (charts, gluing, metric, all)"))),
        }
    }
}

impl Suite {
    pub fn name(&self) -> &'static str {
        match self {
            Suite::Charts => "charts",
            Suite::Gluing => "gluing",
            Suite::Metric => "metric",
            Suite::All => "all",
        }
    }
}

/// Run a suite on a model.
pub fn run_suite(model: &MorseModel, suite: Suite, cfg: &Config) -> Result<Report> {
    let ctx = Charts::with_params(model, cfg.chart_params(model))?;
    let mut checks = Vec::new();
    let charts = matches!(suite, Suite::Charts | Suite::All);
    let gluing = matches!(suite, Suite::Gluing | Suite::All);
    let metric_s = matches!(suite, Suite::Metric | Suite::All);
    if charts {
        checks.push(local_exactness(model, cfg));
        checks.push(transition_relations(model, cfg));
        checks.push(corner_times(&ctx, cfg));
        checks.push(inversion(&ctx, cfg));
        checks.push(finite_ends(&ctx, cfg));
        checks.push(multistart(&ctx, cfg));
        checks.push(compatibility(&ctx, cfg));
    }
    if gluing {
        checks.push(associativity(&ctx, cfg));
        checks.push(convergence(&ctx, cfg));
    }
    if metric_s {
        checks.push(hausdorff_bound(model, cfg));
        checks.push(metric_properties(&ctx, cfg));
    }
    if charts || gluing {
        checks.push(stratification(&ctx, cfg));
    }
    checks.sort_by_key(|c| c.criterion.unwrap_or(usize::MAX));
    Ok(Report { model: model.name.clone(), suite: suite.name().into(), seed: cfg.seed, checks })
}

fn rng_for(cfg: &Config, salt: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(cfg.seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Uniform random unit vector of dimension n (n ≥ 1).
pub fn random_unit(rng: &mut impl Rng, n: usize) -> Vector {
    loop {
        let v: Vector = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            return scale(&v, 1.0 / r);
        }
    }
}

fn log_uniform(rng: &mut impl Rng, lo: f64, hi: f64) -> f64 {
    rng.gen_range(lo.ln()..hi.ln()).exp()
}

fn saddles(model: &MorseModel) -> Vec<usize> {
    (0..model.points.len()).filter(|&c| model.cp(c).stable_dim() > 0 && model.cp(c).unstable_dim() > 0).collect()
}

fn vdiff(a: &[f64], b: &[f64]) -> f64 {
    if a.len() != b.len() {
        return f64::INFINITY;
    }
    dist(a, b)
}

fn end_diff(a: &EndFactor, b: &EndFactor) -> f64 {
    match (a, b) {
        (EndFactor::Crit(u), EndFactor::Crit(v)) | (EndFactor::Inside(u), EndFactor::Inside(v)) => vdiff(u, v),
        (EndFactor::Outside { t: s, v: u }, EndFactor::Outside { t, v }) => (s - t).abs().max(vdiff(u, v)),
        _ => f64::INFINITY,
    }
}

/// Largest componentwise difference of two chart points.
pub fn chart_point_diff(a: &ChartPoint, b: &ChartPoint) -> f64 {
    if a.taus.len() != b.taus.len() || a.middle.len() != b.middle.len() {
        return f64::INFINITY;
    }
    let mut d = end_diff(&a.minus, &b.minus).max(end_diff(&a.plus, &b.plus));
    for (s, t) in a.taus.iter().zip(&b.taus) {
        d = d.max((s - t).abs());
    }
    for (u, v) in a.middle.iter().zip(&b.middle) {
        d = d.max(vdiff(u, v));
    }
    d
}

/// Sequences with critical ends whose segments all carry isolated trajectories.
pub fn isolated_sequences(ctx: &Charts, kmin: usize, kmax: usize) -> Vec<CritSeq> {
    let model = ctx.model;
    let n = model.points.len();
    let mut out = Vec::new();
    for a in 0..n {
        for b in 0..n {
            if !ctx.conn.connected(a, b) {
                continue;
            }
            for s in enumerate_critseqs(model, &ctx.conn, Terminal::Crit(a), Terminal::Crit(b)) {
                if s.k() < kmin || s.k() > kmax {
                    continue;
                }
                let mut chain = vec![a];
                chain.extend(&s.points);
                chain.push(b);
                if chain.windows(2).all(|w| !ctx.conn.isolated(w[0], w[1]).is_empty()) {
                    out.push(s);
                }
            }
        }
    }
    out
}

fn ends(seq: &CritSeq) -> (usize, usize) {
    match (seq.minus, seq.plus) {
        (EndCond::Crit(a), EndCond::Crit(b)) => (a, b),
        _ => unreachable!("critical ends expected"),
    }
}

fn random_reps(ctx: &Charts, seq: &CritSeq, rng: &mut impl Rng) -> Vec<Vector> {
    let (a, b) = ends(seq);
    let mut chain = vec![a];
    chain.extend(&seq.points);
    chain.push(b);
    chain
        .windows(2)
        .map(|w| {
            let iso = ctx.conn.isolated(w[0], w[1]);
            iso[rng.gen_range(0..iso.len())].clone()
        })
        .collect()
}

fn chart_point_of(reps: &[Vector], taus: &[f64]) -> ChartPoint {
    let k = taus.len();
    ChartPoint {
        taus: taus.to_vec(),
        minus: EndFactor::Crit(reps[0].clone()),
        middle: reps[1..k.max(1)].to_vec(),
        plus: EndFactor::Crit(reps[k].clone()),
    }
}

fn glue_seq(ctx: &Charts, seq: &CritSeq, taus: &[f64], reps: &[Vector]) -> Result<Trajectory> {
    let (a, b) = ends(seq);
    let factors: Vec<Factor> = reps.iter().cloned().map(Factor::unbroken).collect();
    glue(ctx, a, &seq.points, b, taus, &factors)
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn not_applicable(mut c: Check, t0: Instant, why: &str) -> Check {
    c.notes.push(format!("not applicable: {why}"));
    c.finish(t0)
}

/// Local chart exactness: both-inside roundtrips and through transit times against an
/// adaptive integration of the flow.
pub fn local_exactness(model: &MorseModel, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(1), "local chart exactness");
    let mut rng = rng_for(cfg, 1);
    let n = cfg.samples_local;
    let npts = model.points.len();
    let mut inputs = Vec::with_capacity(n);
    for i in 0..n {
        let cp = i % npts;
        let p = model.cp(cp);
        let d = p.delta;
        let tau = if rng.gen_bool(0.05) { 0.0 } else { log_uniform(&mut rng, 1e-8, 1.0) };
        let ball = |rng: &mut ChaCha8Rng, k: usize| {
            if k == 0 {
                vec![]
            } else {
                scale(&random_unit(rng, k), 2.0 * d * rng.gen_range(0.01..0.999))
            }
        };
        let x = ball(&mut rng, p.stable_dim());
        let y = ball(&mut rng, p.unstable_dim());
        inputs.push((cp, LocalChartPoint::BothInside { tau, x, y }));
    }
    let round: Vec<std::result::Result<f64, String>> = inputs
        .par_iter()
        .map(|(cp, lp)| {
            let g = lp.inverse(model, *cp).map_err(|e| e.to_string())?;
            let back = chart_both_inside(model, *cp, &g).map_err(|e| e.to_string())?;
            match (lp, back) {
                (LocalChartPoint::BothInside { tau, x, y }, LocalChartPoint::BothInside { tau: t2, x: x2, y: y2 }) => {
                    Ok((tau - t2).abs().max(vdiff(x, &x2)).max(vdiff(y, &y2)))
                }
                _ => Err("unexpected chart variant".into()),
            }
        })
        .collect();
    let errs = round.iter().filter(|r| r.is_err()).count();
    c.rows.push(Row::lt("both-inside roundtrip error (max)", max_of(round.iter().filter_map(|r| r.as_ref().ok().copied())), cfg.tol_roundtrip));
    c.rows.push(Row::eq("both-inside roundtrip failures", errs as f64, 0.0));
    let sad = saddles(model);
    if sad.is_empty() {
        c.notes.push("no point with stable and unstable directions: through charts skipped".into());
    } else {
        let mut inputs = Vec::with_capacity(n);
        for i in 0..n {
            let cp = sad[i % sad.len()];
            let p = model.cp(cp);
            let tau = log_uniform(&mut rng, 1e-6, 0.99);
            let x = scale(&random_unit(&mut rng, p.stable_dim()), p.delta);
            let y = scale(&random_unit(&mut rng, p.unstable_dim()), p.delta);
            inputs.push((cp, tau, x, y));
        }
        let res: Vec<std::result::Result<(f64, f64), String>> = inputs
            .par_iter()
            .map(|(cp, tau, x, y)| {
                let lp = LocalChartPoint::Through { tau: *tau, x: x.clone(), y: y.clone() };
                let g = lp.inverse(model, *cp).map_err(|e| e.to_string())?;
                let back = chart_through(model, *cp, &g).map_err(|e| e.to_string())?;
                let LocalChartPoint::Through { tau: tc, x: x2, y: y2 } = back else {
                    return Err("unexpected chart variant".into());
                };
                let t_rk = oracle_exit_time(model, *cp, &Pt::new(x.clone(), scale(y, *tau))).map_err(|e| e.to_string())?;
                Ok(((tc - (-t_rk).exp()).abs(), (tc - tau).abs().max(vdiff(x, &x2)).max(vdiff(y, &y2))))
            })
            .collect();
        let errs = res.iter().filter(|r| r.is_err()).count();
        let ok: Vec<(f64, f64)> = res.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
        c.rows.push(Row::lt("through τ vs e^{-T} of the integrated transit (max)", max_of(ok.iter().map(|r| r.0)), cfg.tol_event(model)));
        c.rows.push(Row::lt("through roundtrip error (max)", max_of(ok.iter().map(|r| r.1)), cfg.tol_roundtrip));
        c.rows.push(Row::eq("through failures", errs as f64, 0.0));
    }
    c.notes.push(format!("{n} both-inside samples over {npts} points, {} through samples", if sad.is_empty() { 0 } else { n }));
    c.runtime(t0, 10.0);
    c.finish(t0)
}

/// Hausdorff continuity at the broken stratum of a local trajectory space.
pub fn hausdorff_bound(model: &MorseModel, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(2), "Hausdorff continuity bound at the broken stratum");
    let sad = saddles(model);
    if sad.is_empty() {
        return not_applicable(c, t0, "no point with stable and unstable directions");
    }
    let mut rng = rng_for(cfg, 2);
    let mut inputs = Vec::new();
    for i in 0..cfg.samples_hausdorff {
        let cp = sad[i % sad.len()];
        let p = model.cp(cp);
        let d = p.delta;
        let x = scale(&random_unit(&mut rng, p.stable_dim()), d);
        let y = scale(&random_unit(&mut rng, p.unstable_dim()), d);
        let px = log_uniform(&mut rng, 1e-4, 0.5);
        let py = log_uniform(&mut rng, 1e-4, 0.5);
        let x2 = scale(&normalize(&crate::linalg::axpy(&x, px * d, &random_unit(&mut rng, x.len()))).unwrap(), d);
        let y2 = scale(&normalize(&crate::linalg::axpy(&y, py * d, &random_unit(&mut rng, y.len()))).unwrap(), d);
        let tau = log_uniform(&mut rng, 1e-8, 0.5);
        inputs.push((cp, x, y, x2, y2, tau));
    }
    let n = cfg.samples_metric;
    let res: Vec<std::result::Result<(f64, f64, f64), String>> = inputs
        .par_iter()
        .map(|(cp, x, y, x2, y2, tau)| {
            let d = model.cp(*cp).delta;
            let g0 = LocalChartPoint::Through { tau: 0.0, x: x.clone(), y: y.clone() }.inverse(model, *cp).map_err(|e| e.to_string())?;
            let g1 = LocalChartPoint::Through { tau: *tau, x: x2.clone(), y: y2.clone() }.inverse(model, *cp).map_err(|e| e.to_string())?;
            let m = metric_terms(model, &g0, &g1, n);
            let bound = dist(x, x2) + dist(y, y2) + 4.0 * d * tau.sqrt();
            Ok(((m.hausdorff - bound).max(0.0) / d, m.sampling_bound / d, m.length))
        })
        .collect();
    let errs = res.iter().filter(|r| r.is_err()).count();
    let ok: Vec<(f64, f64, f64)> = res.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    c.rows.push(Row::lt(format!("slack above the bound / Δ (max, N={n})"), max_of(ok.iter().map(|r| r.0)), cfg.tol_slack));
    c.rows.push(Row::eq("failures", errs as f64, 0.0));
    c.notes.push(format!("sampling bound / Δ (max) {:.3e}", max_of(ok.iter().map(|r| r.1))));
    c.notes.push(format!(
        "the bound applies to the Hausdorff term; the length term |ℓ−ℓ′| is reported separately (max {:.3e})",
        max_of(ok.iter().map(|r| r.2))
    ));
    c.runtime(t0, 30.0);
    c.finish(t0)
}

/// Relations between the transition times on the overlaps of their domains.
pub fn transition_relations(model: &MorseModel, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(3), "transition-time relations on overlaps");
    let sad = saddles(model);
    if sad.is_empty() {
        return not_applicable(c, t0, "no point with stable and unstable directions");
    }
    let mut rng = rng_for(cfg, 3);
    let mut r1 = Vec::new();
    let mut r2 = Vec::new();
    let mut errs = 0usize;
    for i in 0..cfg.samples_relations {
        let cp = sad[i % sad.len()];
        let p = model.cp(cp);
        let d = p.delta;
        let x = scale(&random_unit(&mut rng, p.stable_dim()), d);
        let y = scale(&random_unit(&mut rng, p.unstable_dim()), d);
        let tau = log_uniform(&mut rng, 1e-6, 0.9);
        let tm = -rng.gen_range(0.0..LN_2 * 0.999);
        let tp = rng.gen_range(0.0..LN_2 * 0.999);
        // start Ψ_{T₋}(x, τy) inside Ũ, end on S̃⁻
        let g = Trajectory::unbroken(vec![Leg::Local { cp, x0: x.clone(), y0: scale(&y, tau), t0: tm, t1: -tau.ln() }]);
        let rel1 = (|| -> Result<f64> {
            let EndPoint::Chart { pt: ev, .. } = g.ev_minus(model) else { return Err(Error::NotInDomain("ev₋".into())) };
            let tau_p = (rho_plus(model, cp, &ev)?.yn() + rho_minus(model, cp, &ev)?.xn()) / (2.0 * d);
            let minus = transition_time(model, &g, cp, TimeKind::Minus)?;
            Ok((minus * ev.xn() - d * tau_p).abs())
        })();
        // both ends inside Ũ
        let h = Trajectory::unbroken(vec![Leg::Local { cp, x0: x, y0: scale(&y, tau), t0: tm, t1: -tau.ln() + tp }]);
        let rel2 = (|| -> Result<f64> {
            let EndPoint::Chart { pt: ev, .. } = h.ev_plus(model) else { return Err(Error::NotInDomain("ev₊".into())) };
            let tilde = transition_time(model, &h, cp, TimeKind::Tilde)?;
            let minus = transition_time(model, &h, cp, TimeKind::Minus)?;
            Ok((tilde * ev.yn() - d * minus).abs())
        })();
        match (rel1, rel2) {
            (Ok(a), Ok(b)) => {
                r1.push(a);
                r2.push(b);
            }
            _ => errs += 1,
        }
    }
    c.rows.push(Row::lt("⁻τ·|pr_x ev₋| − Δ·τ (max)", max_of(r1), cfg.tol_relation));
    c.rows.push(Row::lt("τ̃·|pr_y ev₊| − Δ·⁻τ (max)", max_of(r2), cfg.tol_relation));
    c.rows.push(Row::eq("failures", errs as f64, 0.0));
    c.finish(t0)
}

/// Time spent in U(q) along a local leg, located by bisection on membership.
pub fn measured_u_time(model: &MorseModel, cp: usize, leg: &Leg) -> Option<f64> {
    let Leg::Local { x0, y0, t0, t1, .. } = leg else { return None };
    if !t0.is_finite() || !t1.is_finite() {
        return None;
    }
    let p = model.cp(cp);
    let inside = |s: f64| {
        let q = local_point(x0, y0, s);
        membership(p, &q.x, &q.y, Region::U, 0.0)
    };
    let m = 4000;
    let grid: Vec<f64> = (0..=m).map(|i| t0 + (t1 - t0) * i as f64 / m as f64).collect();
    let first = grid.iter().position(|s| inside(*s))?;
    let last = grid.iter().rposition(|s| inside(*s))?;
    if first == 0 || last == m {
        return None;
    }
    let bisect = |mut out: f64, mut inn: f64| {
        for _ in 0..200 {
            if (out - inn).abs() < 1e-13 {
                break;
            }
            let mid = 0.5 * (out + inn);
            if inside(mid) {
                inn = mid;
            } else {
                out = mid;
            }
        }
        0.5 * (out + inn)
    };
    let s_in = bisect(grid[first - 1], grid[first]);
    let s_out = bisect(grid[last + 1], grid[last]);
    Some(s_out - s_in)
}

/// Corner semantics: −ln τ_i is the time the glued trajectory spends in U(q_i).
pub fn corner_times(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(4), "corner semantics (time in U(q) = −ln τ)");
    let seqs = isolated_sequences(ctx, 1, usize::MAX);
    if seqs.is_empty() {
        return not_applicable(c, t0, "no sequence with isolated segments");
    }
    let mut rng = rng_for(cfg, 4);
    let inputs: Vec<(CritSeq, Vec<f64>, Vec<Vector>)> = (0..cfg.samples_corner)
        .map(|i| {
            let s = seqs[i % seqs.len()].clone();
            let taus = (0..s.k()).map(|_| 0.5f64.powi(rng.gen_range(3..=10))).collect();
            let reps = random_reps(ctx, &s, &mut rng);
            (s, taus, reps)
        })
        .collect();
    let model = ctx.model;
    let res: Vec<std::result::Result<f64, String>> = inputs
        .par_iter()
        .map(|(s, taus, reps)| {
            let g = glue_seq(ctx, s, taus, reps).map_err(|e| e.to_string())?;
            let mut worst = 0.0f64;
            for (i, &q) in s.points.iter().enumerate() {
                let times: Vec<f64> = g.local_legs(q).iter().filter_map(|l| measured_u_time(model, q, l)).collect();
                if times.is_empty() {
                    return Err(format!("no passage through U({})", model.id(q)));
                }
                let total: f64 = times.iter().sum();
                worst = worst.max((total + taus[i].ln()).abs());
            }
            Ok(worst)
        })
        .collect();
    let errs = res.iter().filter(|r| r.is_err()).count();
    c.rows.push(Row::lt("|measured U-time − (−ln τ)| (max)", max_of(res.iter().filter_map(|r| r.as_ref().ok().copied())), cfg.tol_corner));
    c.rows.push(Row::eq("failures", errs as f64, 0.0));
    c.notes.push(format!(
        "{} glued trajectories over {} sequences: {}",
        inputs.len(),
        seqs.len(),
        seqs.iter().map(|s| s.label(model)).collect::<Vec<_>>().join(", ")
    ));
    c.finish(t0)
}

/// Zero gluing parameters of a chart point against the breaks of the trajectory.
fn strata_mismatch(seq: &CritSeq, cp: &ChartPoint, g: &Trajectory) -> bool {
    let br = g.breaking_points();
    seq.points.iter().zip(&cp.taus).any(|(q, t)| (*t == 0.0) != br.contains(q))
}

/// glue∘chart and chart∘glue on interior trajectories.
pub fn inversion(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(5), "chart/gluing inversion");
    let model = ctx.model;
    let mut rng = rng_for(cfg, 5);
    let n = cfg.samples_inversion;
    let tops: Vec<usize> = (0..model.points.len()).filter(|&a| model.cp(a).unstable_dim() > 0).collect();
    // every sequence between the ends of an unbroken γ whose domain contains it charts γ
    let chart_all = |a: usize, b: usize, g: &Trajectory| {
        let mut out = Vec::new();
        for s in enumerate_critseqs(model, &ctx.conn, Terminal::Crit(a), Terminal::Crit(b)) {
            if s.k() == 0 || !in_v_t(ctx, &s, g) {
                continue;
            }
            let r = chart_forward(ctx, &s, g).and_then(|cp| {
                let back = chart_inverse(ctx, &s, &cp)?;
                Ok((s.label(model), metric(model, g, &back, cfg.samples_metric), strata_mismatch(&s, &cp, g)))
            });
            out.push(r.map_err(|e| format!("{}: {e}", s.label(model))));
        }
        out
    };
    // random flow lines out of the critical points
    let cand: Vec<(usize, Vector)> = (0..20 * n)
        .map(|i| {
            let a = tops[i % tops.len().max(1)];
            (a, random_unit(&mut rng, model.cp(a).unstable_dim()))
        })
        .collect();
    let mut found: Vec<Vec<std::result::Result<(String, f64, bool), String>>> = cand
        .par_iter()
        .map(|(a, u)| match line_from_critical(model, *a, u, None) {
            Ok((g, b)) => chart_all(*a, b, &g),
            Err(_) => vec![],
        })
        .collect();
    // topped up with glued interior trajectories, charted afresh
    let seqs = isolated_sequences(ctx, 1, usize::MAX);
    let have: usize = found.iter().map(|v| v.len()).sum();
    if have < n && !seqs.is_empty() {
        let inputs: Vec<(CritSeq, Vec<f64>, Vec<Vector>)> = (0..n - have)
            .map(|i| {
                let s = seqs[i % seqs.len()].clone();
                let taus = (0..s.k()).map(|_| log_uniform(&mut rng, cfg.tau_min, cfg.tau_max)).collect();
                let reps = random_reps(ctx, &s, &mut rng);
                (s, taus, reps)
            })
            .collect();
        let glued: Vec<_> = inputs
            .par_iter()
            .map(|(s, taus, reps)| match glue_seq(ctx, s, taus, reps) {
                Ok(g) => {
                    let (a, b) = ends(s);
                    chart_all(a, b, &g)
                }
                Err(e) => vec![Err(format!("{}: {e}", s.label(model)))],
            })
            .collect();
        found.extend(glued);
    }
    let flat: Vec<_> = found.into_iter().flatten().take(n).collect();
    let errs: Vec<&String> = flat.iter().filter_map(|r| r.as_ref().err()).collect();
    let ok: Vec<&(String, f64, bool)> = flat.iter().filter_map(|r| r.as_ref().ok()).collect();
    if model.points.len() > 2 && !tops.is_empty() {
        c.rows.push(Row::ge("interior trajectories charted", flat.len() as f64, n as f64));
    }
    c.rows.push(Row::lt("glue∘chart: d(γ, glue(chart(γ))) (max)", max_of(ok.iter().map(|r| r.1)), cfg.tol_inversion));
    c.rows.push(Row::eq("glue∘chart failures", errs.len() as f64, 0.0));
    c.rows.push(Row::eq("zero parameters on unbroken inputs", ok.iter().filter(|r| r.2).count() as f64, 0.0));
    let mut labels: Vec<&str> = ok.iter().map(|r| r.0.as_str()).collect();
    labels.sort();
    labels.dedup();
    c.notes.push(format!("charting sequences: {}", labels.join(", ")));
    if let Some(e) = errs.first() {
        c.notes.push(format!("first failure: {e}"));
    }
    // chart∘glue on random gluing data
    if !seqs.is_empty() {
        let inputs: Vec<(CritSeq, Vec<f64>, Vec<Vector>)> = (0..n)
            .map(|i| {
                let s = seqs[i % seqs.len()].clone();
                let taus = (0..s.k()).map(|_| log_uniform(&mut rng, cfg.tau_min, cfg.tau_max)).collect();
                let reps = random_reps(ctx, &s, &mut rng);
                (s, taus, reps)
            })
            .collect();
        let res: Vec<std::result::Result<f64, String>> = inputs
            .par_iter()
            .map(|(s, taus, reps)| {
                let g = glue_seq(ctx, s, taus, reps).map_err(|e| e.to_string())?;
                let cp = chart_forward(ctx, s, &g).map_err(|e| e.to_string())?;
                Ok(chart_point_diff(&cp, &chart_point_of(reps, taus)))
            })
            .collect();
        let errs = res.iter().filter(|r| r.is_err()).count();
        c.rows.push(Row::lt("chart∘glue: componentwise (max)", max_of(res.iter().filter_map(|r| r.as_ref().ok().copied())), cfg.tol_inversion));
        c.rows.push(Row::eq("chart∘glue failures", errs as f64, 0.0));
    }
    c.finish(t0)
}

/// Sequences (Ũ(q); q; b) with an isolated segment from q to b.
fn inside_sequences(ctx: &Charts) -> Vec<CritSeq> {
    let model = ctx.model;
    let n = model.points.len();
    let mut out = Vec::new();
    for q in saddles(model) {
        for b in 0..n {
            if !ctx.conn.isolated(q, b).is_empty() {
                out.push(CritSeq { minus: EndCond::Inside, points: vec![q], plus: EndCond::Crit(b) });
            }
        }
    }
    out
}

/// Finite-end charts: constraint set of the images and the end-condition transition.
pub fn finite_ends(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(8), "finite-end charts and end-condition transition");
    let model = ctx.model;
    let seqs = inside_sequences(ctx);
    if seqs.is_empty() {
        return not_applicable(c, t0, "no saddle with an isolated connection below it");
    }
    let t = ctx.params.t;
    let mut rng = rng_for(cfg, 8);
    let inputs: Vec<(CritSeq, ChartPoint)> = (0..cfg.samples_finite)
        .map(|i| {
            let s = seqs[i % seqs.len()].clone();
            let q = s.points[0];
            let EndCond::Crit(b) = s.plus else { unreachable!() };
            let d = model.cp(q).delta;
            let xn = rng.gen_range(1.0..1.9) * d;
            let x = scale(&random_unit(&mut rng, model.cp(q).stable_dim()), xn);
            let e = log_uniform(&mut rng, 1e-3, 0.99 * t * d / xn);
            let iso = ctx.conn.isolated(q, b);
            let rep = iso[rng.gen_range(0..iso.len())].clone();
            (s, ChartPoint { taus: vec![e], minus: EndFactor::Inside(x), middle: vec![], plus: EndFactor::Crit(rep) })
        })
        .collect();
    let res: Vec<std::result::Result<(f64, f64, bool), String>> = inputs
        .par_iter()
        .map(|(s, cp)| {
            let g = chart_inverse(ctx, s, cp).map_err(|e| format!("inverse: {e}"))?;
            let f = chart_forward(ctx, s, &g).map_err(|e| format!("forward: {e}"))?;
            let d = model.cp(s.points[0]).delta;
            let EndFactor::Inside(xf) = &f.minus else { return Err("forward factor is not an Inside factor".into()) };
            let violates = !(f.taus[0] * norm(xf) < t * d);
            let (s2, c2) = end_condition_transition(model, s, &f).map_err(|e| format!("transition: {e}"))?;
            let f2 = chart_forward(ctx, &s2, &g).map_err(|e| format!("outside chart: {e}"))?;
            Ok((chart_point_diff(&c2, &f2), chart_point_diff(&f, cp), violates))
        })
        .collect();
    let errs: Vec<&String> = res.iter().filter_map(|r| r.as_ref().err()).collect();
    let ok: Vec<(f64, f64, bool)> = res.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    c.rows.push(Row::eq("images violating E|x| < tΔ", ok.iter().filter(|r| r.2).count() as f64, 0.0));
    c.rows.push(Row::lt("end_condition_transition vs composed charts (max)", max_of(ok.iter().map(|r| r.0)), cfg.tol_transition));
    c.rows.push(Row::lt("Ũ-end chart roundtrip (max)", max_of(ok.iter().map(|r| r.1)), cfg.tol_inversion));
    c.rows.push(Row::eq("failures", errs.len() as f64, 0.0));
    if let Some(e) = errs.first() {
        c.notes.push(format!("first failure: {e}"));
    }
    c.notes.push(format!("sequences: {}", seqs.iter().map(|s| s.label(model)).collect::<Vec<_>>().join(", ")));
    c.finish(t0)
}

/// Multistart inverse solves: every fiber has one solution.
pub fn multistart(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(None, "multistart uniqueness of the inverse solve");
    let seqs = isolated_sequences(ctx, 1, usize::MAX);
    if seqs.is_empty() {
        return not_applicable(c, t0, "no sequence with isolated segments");
    }
    let mut rng = rng_for(cfg, 11);
    let inputs: Vec<(CritSeq, ChartPoint, u64)> = (0..20)
        .map(|i| {
            let s = seqs[i % seqs.len()].clone();
            let taus: Vec<f64> = (0..s.k()).map(|_| log_uniform(&mut rng, cfg.tau_min, cfg.tau_max)).collect();
            let reps = random_reps(ctx, &s, &mut rng);
            (s, chart_point_of(&reps, &taus), rng.gen())
        })
        .collect();
    let res: Vec<_> = inputs.par_iter().map(|(s, cp, seed)| multistart_inverse(ctx, s, cp, cfg.multistart, *seed)).collect();
    let mut distinct = 0usize;
    let mut min_conv = usize::MAX;
    let mut spread = 0.0f64;
    let mut errs = 0usize;
    let (mut conv, mut total) = (0usize, 0usize);
    for r in &res {
        match r {
            Ok(blocks) => {
                for b in blocks {
                    distinct = distinct.max(b.distinct);
                    min_conv = min_conv.min(b.converged);
                    conv += b.converged;
                    total += b.starts;
                    spread = spread.max(b.spread);
                }
            }
            Err(_) => errs += 1,
        }
    }
    c.rows.push(Row::eq("distinct solutions per fiber (max)", distinct as f64, 1.0));
    c.rows.push(Row::ge("converged starts per fiber (min)", min_conv as f64, 1.0));
    c.rows.push(Row::eq("failures", errs as f64, 0.0));
    c.notes.push(format!("{} starts per fiber, {conv} of {total} converged, spread of converged solutions {spread:.3e}", cfg.multistart));
    c.finish(t0)
}

/// Compatibility of the charts of a sequence and of a sequence with one point removed.
pub fn compatibility(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(None, "chart compatibility under insertion");
    let model = ctx.model;
    let seqs = isolated_sequences(ctx, 2, 2);
    if seqs.is_empty() {
        return not_applicable(c, t0, "no sequence of length 2 with isolated segments");
    }
    let t = ctx.params.t;
    let mut rng = rng_for(cfg, 12);
    let inputs: Vec<(CritSeq, Vec<f64>, Vec<Vector>, usize)> = (0..40)
        .map(|i| {
            let s = seqs[i % seqs.len()].clone();
            let taus = (0..2).map(|_| log_uniform(&mut rng, cfg.tau_min, 0.9 * t)).collect();
            let reps = random_reps(ctx, &s, &mut rng);
            (s, taus, reps, i % 2)
        })
        .collect();
    let res: Vec<std::result::Result<f64, String>> = inputs
        .par_iter()
        .map(|(s, taus, reps, r)| {
            let r = *r;
            let (a, b) = ends(s);
            let g = glue_seq(ctx, s, taus, reps).map_err(|e| e.to_string())?;
            let full = chart_forward(ctx, s, &g).map_err(|e| e.to_string())?;
            let kept = s.points[1 - r];
            let sub = CritSeq::crit(a, vec![kept], b);
            let part = chart_forward(ctx, &sub, &g).map_err(|e| e.to_string())?;
            // chart the segment containing the removed point
            let (lo, hi, u) = if r == 0 {
                let EndFactor::Crit(u) = &part.minus else { unreachable!() };
                (a, kept, u.clone())
            } else {
                let EndFactor::Crit(u) = &part.plus else { unreachable!() };
                (kept, b, u.clone())
            };
            let (line, end) = line_from_critical(model, lo, &u, Some(hi)).map_err(|e| e.to_string())?;
            if end != hi {
                return Err("segment factor does not converge".into());
            }
            let inner_seq = CritSeq::crit(lo, vec![s.points[r]], hi);
            let inner = chart_forward(ctx, &inner_seq, &line).map_err(|e| e.to_string())?;
            let EndFactor::Crit(m) = (if r == 0 { &inner.plus } else { &inner.minus }) else { unreachable!() };
            let composed = if r == 0 {
                ChartPoint { taus: vec![inner.taus[0], part.taus[0]], minus: inner.minus.clone(), middle: vec![m.clone()], plus: part.plus.clone() }
            } else {
                ChartPoint { taus: vec![part.taus[0], inner.taus[0]], minus: part.minus.clone(), middle: vec![m.clone()], plus: inner.plus.clone() }
            };
            Ok(chart_point_diff(&full, &composed))
        })
        .collect();
    let errs: Vec<&String> = res.iter().filter_map(|r| r.as_ref().err()).collect();
    c.rows.push(Row::lt("φ(Q) vs (Id×φ(q′)×Id)∘φ(q) (max)", max_of(res.iter().filter_map(|r| r.as_ref().ok().copied())), cfg.tol_compat));
    c.rows.push(Row::eq("failures", errs.len() as f64, 0.0));
    if let Some(e) = errs.first() {
        c.notes.push(format!("first failure: {e}"));
    }
    c.finish(t0)
}

/// Associativity of gluing over all insertion pairs with at most two intermediate points.
pub fn associativity(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(6), "associativity of gluing");
    let model = ctx.model;
    let seqs = isolated_sequences(ctx, 1, 2);
    if seqs.is_empty() {
        return not_applicable(c, t0, "no sequence with isolated segments");
    }
    let mut jobs = Vec::new();
    for s in &seqs {
        let k = s.k();
        for mask in 0..(1usize << k) {
            let small: Vec<usize> = (0..k).filter(|i| mask & (1 << i) != 0).map(|i| s.points[i]).collect();
            jobs.push((s.clone(), small));
        }
    }
    let reports: Vec<AssocReport> = jobs
        .par_iter()
        .enumerate()
        .map(|(j, (s, small))| {
            let (a, b) = ends(s);
            check_associativity(
                ctx,
                a,
                b,
                &s.points,
                small,
                cfg.samples_assoc,
                cfg.seed.wrapping_add(j as u64),
                (cfg.tau_min, cfg.tau_max),
                cfg.samples_metric,
            )
        })
        .collect();
    for r in &reports {
        c.rows.push(Row::lt(format!("{} (max d)", r.pair), r.max_residual, cfg.tol_assoc));
        if r.failures > 0 {
            c.rows.push(Row::eq(format!("{} failures", r.pair), r.failures as f64, 0.0));
            if let Some(e) = r.errors.first() {
                c.notes.push(format!("{}: {e}", r.pair));
            }
        }
    }
    c.notes.push(format!("{} insertion pairs, {} inputs each, in {}", reports.len(), cfg.samples_assoc, model.name));
    c.assoc = reports;
    c.runtime(t0, 300.0);
    c.finish(t0)
}

/// Gluing–breaking convergence: fit of d(glue(τ), broken) ≈ C τ^α.
pub fn convergence(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(7), "gluing-breaking convergence");
    let model = ctx.model;
    let seqs = isolated_sequences(ctx, 1, 1);
    if seqs.is_empty() {
        return not_applicable(c, t0, "no sequence of length 1 with isolated segments");
    }
    let mut rng = rng_for(cfg, 7);
    let taus: Vec<f64> = (3..=12).map(|j| 0.5f64.powi(j)).collect();
    for s in seqs.iter().take(4) {
        let reps = random_reps(ctx, s, &mut rng);
        let label = s.label(model);
        let res = (|| -> Result<(f64, f64, bool)> {
            let broken = glue_seq(ctx, s, &[0.0], &reps)?;
            let ds: Vec<f64> = taus
                .par_iter()
                .map(|t| glue_seq(ctx, s, &[*t], &reps).map(|g| metric(model, &g, &broken, cfg.samples_metric)))
                .collect::<Result<_>>()?;
            let mono = ds.windows(2).all(|w| w[1] < w[0]);
            let (alpha, cc) = fit_power_law(&taus, &ds);
            Ok((alpha, cc, mono))
        })();
        match res {
            Ok((alpha, cc, mono)) => {
                c.rows.push(Row::ge(format!("{label}: fitted α"), alpha, cfg.min_alpha));
                c.notes.push(format!("{label}: C = {cc:.4}, monotone decrease: {mono}"));
            }
            Err(e) => {
                c.rows.push(Row::eq(format!("{label}: failures"), 1.0, 0.0));
                c.notes.push(format!("{label}: {e}"));
            }
        }
    }
    c.finish(t0)
}

/// Symmetry, triangle inequality and the separation of constants.
pub fn metric_properties(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(9), "metric-space properties");
    let model = ctx.model;
    let mut rng = rng_for(cfg, 9);
    let mut pool: Vec<Trajectory> = Vec::new();
    let sad = saddles(model);
    for i in 0..40 {
        let Some(&cp) = sad.get(i % sad.len().max(1)) else { break };
        let p = model.cp(cp);
        let x = scale(&random_unit(&mut rng, p.stable_dim()), p.delta);
        let y = scale(&random_unit(&mut rng, p.unstable_dim()), p.delta);
        let tau = if i % 5 == 0 { 0.0 } else { log_uniform(&mut rng, 1e-6, 0.9) };
        if let Ok(g) = (LocalChartPoint::Through { tau, x, y }).inverse(model, cp) {
            pool.push(g);
        }
    }
    for cp in 0..model.points.len() {
        pool.push(constant_at_critical(model, cp, 0.0));
        pool.push(constant_at_critical(model, cp, 1.5));
        pool.push(broken_constant(model, cp));
    }
    let seqs = isolated_sequences(ctx, 1, usize::MAX);
    for i in 0..(if seqs.is_empty() { 0 } else { 12 }) {
        let s = &seqs[i % seqs.len()];
        let taus: Vec<f64> = (0..s.k()).map(|_| if rng.gen_bool(0.25) { 0.0 } else { log_uniform(&mut rng, 1e-4, 0.19) }).collect();
        let reps = random_reps(ctx, s, &mut rng);
        if let Ok(g) = glue_seq(ctx, s, &taus, &reps) {
            pool.push(g);
        }
    }
    let n = pool.len();
    let imgs: Vec<_> = pool.par_iter().map(|g| g.sample(model, cfg.samples_metric)).collect();
    let lens: Vec<f64> = pool.iter().map(|g| g.renormalized_length()).collect();
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|(i, j)| i != j).collect();
    let dvals: Vec<f64> = pairs.par_iter().map(|&(i, j)| hausdorff(model, &imgs[i], &imgs[j]) + (lens[i] - lens[j]).abs()).collect();
    let mut dm = vec![vec![0.0; n]; n];
    for (&(i, j), v) in pairs.iter().zip(&dvals) {
        dm[i][j] = *v;
    }
    let asym = (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).filter(|&(i, j)| dm[i][j] != dm[j][i]).count();
    c.rows.push(Row::eq("asymmetric pairs", asym as f64, 0.0));
    let mut worst = 0.0f64;
    for _ in 0..cfg.samples_triples {
        let (i, j, k) = (rng.gen_range(0..n), rng.gen_range(0..n), rng.gen_range(0..n));
        let sb = imgs[i].sampling_bound.max(imgs[j].sampling_bound).max(imgs[k].sampling_bound);
        // rounding of the summed terms is allowed on top of the sampling bound
        let allowed = 2.0 * sb + 1e-12 * (1.0 + dm[i][k]);
        let excess = dm[i][k] - dm[i][j] - dm[j][k];
        worst = worst.max(excess / allowed);
    }
    c.rows.push(Row::le("triangle excess / (2 × sampling bound + rounding) (max)", worst, 1.0));
    let mut sep = 0.0f64;
    for cp in 0..model.points.len() {
        let d = metric(model, &constant_at_critical(model, cp, 0.0), &broken_constant(model, cp), cfg.samples_metric);
        sep = sep.max((d - 1.0).abs());
    }
    c.rows.push(Row::eq("|d(L=0 constant, broken constant) − 1| (max)", sep, 0.0));
    c.notes.push(format!("{n} trajectories, {} triples", cfg.samples_triples));
    c.finish(t0)
}

/// Zero gluing parameters occur exactly at the breaking points of the input.
pub fn stratification(ctx: &Charts, cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(10), "stratification (τ_i = 0 iff broken at q_i)");
    let seqs = isolated_sequences(ctx, 1, usize::MAX);
    if seqs.is_empty() {
        return not_applicable(c, t0, "no sequence with isolated segments");
    }
    let mut rng = rng_for(cfg, 10);
    let inputs: Vec<(CritSeq, Vec<f64>, Vec<Vector>)> = (0..cfg.samples_strata)
        .map(|i| {
            let s = seqs[i % seqs.len()].clone();
            let taus = (0..s.k()).map(|_| if rng.gen_bool(0.5) { 0.0 } else { log_uniform(&mut rng, cfg.tau_min, cfg.tau_max) }).collect();
            let reps = random_reps(ctx, &s, &mut rng);
            (s, taus, reps)
        })
        .collect();
    let res: Vec<std::result::Result<(bool, bool), String>> = inputs
        .par_iter()
        .map(|(s, taus, reps)| {
            let g = glue_seq(ctx, s, taus, reps).map_err(|e| e.to_string())?;
            let cp = chart_forward(ctx, s, &g).map_err(|e| e.to_string())?;
            let input_zeros: Vec<bool> = taus.iter().map(|t| *t == 0.0).collect();
            let out_zeros: Vec<bool> = cp.taus.iter().map(|t| *t == 0.0).collect();
            Ok((strata_mismatch(s, &cp, &g), input_zeros != out_zeros))
        })
        .collect();
    let errs = res.iter().filter(|r| r.is_err()).count();
    let ok: Vec<(bool, bool)> = res.iter().filter_map(|r| r.as_ref().ok().copied()).collect();
    c.rows.push(Row::eq("outputs with τ_i = 0 not matching the breaks", ok.iter().filter(|r| r.0).count() as f64, 0.0));
    c.rows.push(Row::eq("outputs with zero pattern differing from the input", ok.iter().filter(|r| r.1).count() as f64, 0.0));
    c.rows.push(Row::eq("failures", errs as f64, 0.0));
    c.finish(t0)
}

/// Chart dump of the sequences between two terminals: stratum representatives (one per
/// zero pattern) with their chart points and roundtrip residuals.
pub fn chart_dump(ctx: &Charts, from: Terminal, to: Terminal, cfg: &Config) -> serde_json::Value {
    let model = ctx.model;
    let t = ctx.params.t;
    let mut rng = rng_for(cfg, 13);
    let mut out = Vec::new();
    for s in enumerate_critseqs(model, &ctx.conn, from, to) {
        let k = s.k();
        let iso = matches!((s.minus, s.plus), (EndCond::Crit(_), EndCond::Crit(_))) && {
            let (a, b) = ends(&s);
            let mut ch = vec![a];
            ch.extend(&s.points);
            ch.push(b);
            ch.windows(2).all(|w| !ctx.conn.isolated(w[0], w[1]).is_empty())
        };
        let mut strata = Vec::new();
        if iso && k > 0 {
            let reps = random_reps(ctx, &s, &mut rng);
            for mask in 0..(1usize << k) {
                let taus: Vec<f64> = (0..k).map(|i| if mask & (1 << i) != 0 { 0.0 } else { 0.5 * t }).collect();
                let input = chart_point_of(&reps, &taus);
                let entry = match glue_seq(ctx, &s, &taus, &reps).and_then(|g| chart_forward(ctx, &s, &g).map(|f| (g, f))) {
                    Ok((g, f)) => serde_json::json!({
                        "taus": taus,
                        "breaking_points": g.breaking_points().iter().map(|c| model.id(*c)).collect::<Vec<_>>(),
                        "chart_point": f,
                        "residual": chart_point_diff(&f, &input),
                    }),
                    Err(e) => serde_json::json!({ "taus": taus, "error": e.to_string() }),
                };
                strata.push(entry);
            }
        }
        out.push(serde_json::json!({
            "critseq": s.label(model),
            "t": t,
            "tau": if k > 0 { vec![0.5 * t; k] } else { vec![] },
            "strata": strata,
        }));
    }
    serde_json::json!({ "model": model.name, "charts": out })
}
