//! Acceptance criteria, one PASS/FAIL line each.

use std::time::Instant;

use morsechart::config::Config;
use morsechart::examples;
use morsechart::global_charts::Charts;
use morsechart::local_charts::{chart_through, LocalChartPoint};
use morsechart::model::MorseModel;
use morsechart::trajectory::{broken_constant, constant_at_critical, metric};
use morsechart::verify::{self, Check};

const ALL: [&str; 5] = ["chain3", "chain4", "torus_yr", "sphere_height_2", "sphere_height_3"];
const GLUED: [&str; 3] = ["chain3", "chain4", "torus_yr"];

fn model(name: &str) -> MorseModel {
    examples::load(name).unwrap()
}

fn with_charts(name: &str, cfg: &Config, f: fn(&Charts, &Config) -> Check) -> Check {
    let m = model(name);
    let ctx = Charts::with_params(&m, cfg.chart_params(&m)).unwrap();
    f(&ctx, cfg)
}

/// Closed-form transit through a linear saddle: entering at |x| = Δ with |y| = τΔ, the
/// exit |y| = Δ is reached after time −ln τ.
fn closed_form_transit(cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(1), "closed-form transit");
    let m = model("chain4");
    let mut worst = 0.0f64;
    for cp in 0..m.points.len() {
        let p = m.cp(cp);
        if p.stable_dim() == 0 || p.unstable_dim() == 0 {
            continue;
        }
        for k in 0..50 {
            let tau = 0.9f64.powi(k * 3 + 1);
            let mut x = vec![0.0; p.stable_dim()];
            let mut y = vec![0.0; p.unstable_dim()];
            let (i, j) = (k as usize % x.len(), (k as usize + 1) % y.len());
            x[i] = p.delta;
            y[j] = -p.delta;
            let g = LocalChartPoint::Through { tau, x, y }.inverse(&m, cp).unwrap();
            let LocalChartPoint::Through { tau: back, .. } = chart_through(&m, cp, &g).unwrap() else { panic!() };
            let t = g.length();
            worst = worst.max((back - (-t).exp()).abs()).max((t + tau.ln()).abs());
        }
    }
    c.rows.push(verify::Row::lt("|τ − e^{-T}|, |T + ln τ| (max)", worst, cfg.tol_event_exact));
    c.finish(t0)
}

/// The constant trajectory of zero length and the broken constant trajectory are at distance 1.
fn separation(cfg: &Config) -> Check {
    let t0 = Instant::now();
    let mut c = Check::new(Some(9), "unit separation");
    let mut worst = 0.0f64;
    for name in ALL {
        let m = model(name);
        for cp in 0..m.points.len() {
            let d = metric(&m, &constant_at_critical(&m, cp, 0.0), &broken_constant(&m, cp), cfg.samples_metric);
            worst = worst.max((d - 1.0).abs());
        }
    }
    c.rows.push(verify::Row::eq("|d − 1| (max)", worst, 0.0));
    c.finish(t0)
}

struct Outcome {
    criterion: usize,
    title: &'static str,
    checks: Vec<(String, Check)>,
}

impl Outcome {
    fn passed(&self) -> bool {
        self.checks.iter().any(|(_, c)| !c.rows.is_empty()) && self.checks.iter().all(|(_, c)| c.passed())
    }
}

fn main() {
    let cfg = Config::default();
    let t0 = Instant::now();
    let per_model = |names: &[&str], f: fn(&MorseModel, &Config) -> Check| {
        names.iter().map(|n| (n.to_string(), f(&model(n), &cfg))).collect::<Vec<_>>()
    };
    let per_ctx = |names: &[&str], f: fn(&Charts, &Config) -> Check| {
        names.iter().map(|n| (n.to_string(), with_charts(n, &cfg, f))).collect::<Vec<_>>()
    };
    let mut outcomes = Vec::new();
    let mut c1 = per_model(&ALL, verify::local_exactness);
    c1.push(("chain4 closed form".into(), closed_form_transit(&cfg)));
    outcomes.push(Outcome { criterion: 1, title: "local chart exactness", checks: c1 });
    outcomes.push(Outcome { criterion: 2, title: "Hausdorff bound at the broken stratum", checks: per_model(&ALL, verify::hausdorff_bound) });
    outcomes.push(Outcome { criterion: 3, title: "transition-time relations", checks: per_model(&ALL, verify::transition_relations) });
    outcomes.push(Outcome { criterion: 4, title: "corner semantics", checks: per_ctx(&GLUED, verify::corner_times) });
    outcomes.push(Outcome { criterion: 5, title: "chart/gluing inversion", checks: per_ctx(&GLUED, verify::inversion) });
    outcomes.push(Outcome { criterion: 6, title: "associativity of gluing", checks: per_ctx(&["chain4", "chain3"], verify::associativity) });
    outcomes.push(Outcome { criterion: 7, title: "gluing-breaking convergence", checks: per_ctx(&GLUED, verify::convergence) });
    outcomes.push(Outcome { criterion: 8, title: "finite ends", checks: per_ctx(&GLUED, verify::finite_ends) });
    let mut c9 = per_ctx(&ALL, verify::metric_properties);
    c9.push(("unit separation".into(), separation(&cfg)));
    outcomes.push(Outcome { criterion: 9, title: "metric-space properties", checks: c9 });
    outcomes.push(Outcome { criterion: 10, title: "stratification", checks: per_ctx(&GLUED, verify::stratification) });

    let mut failed = 0;
    for o in &outcomes {
        let models: Vec<&str> = o.checks.iter().map(|(n, _)| n.as_str()).collect();
        let secs: f64 = o.checks.iter().map(|(_, c)| c.elapsed).sum();
        let verdict = if o.passed() { "PASS" } else { "FAIL" };
        println!("{verdict} criterion {:>2}: {} [{}] ({secs:.2} s)", o.criterion, o.title, models.join(", "));
        if !o.passed() {
            failed += 1;
            for (n, c) in &o.checks {
                if !c.passed() {
                    print!("  model {n}\n{}", c.render());
                }
            }
        }
    }
    println!("acceptance: {} of {} criteria pass ({:.1} s)", outcomes.len() - failed, outcomes.len(), t0.elapsed().as_secs_f64());
    if failed > 0 {
        std::process::exit(1);
    }
}
