//! Property tests of chart, gluing and metric invariants.

use morsechart::config::Config;
use morsechart::examples;
use morsechart::global_charts::{chart_forward, ev_and_tau, iota, Charts, EndCond, Evaluations, Terminal};
use morsechart::gluing::{glue, Factor};
use morsechart::linalg::{norm, normalize, scale, Vector};
use morsechart::local_charts::{chart_both_inside, chart_through, LocalChartPoint};
use morsechart::model::{MorseModel, Pt};
use morsechart::trajectory::{metric, Trajectory};
use proptest::prelude::*;

fn direction(n: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-1.0f64..1.0, n).prop_filter_map("zero direction", |v| normalize(&v))
}

fn saddle(m: &MorseModel, i: usize) -> usize {
    let s: Vec<usize> = (0..m.points.len()).filter(|&c| m.cp(c).stable_dim() > 0 && m.cp(c).unstable_dim() > 0).collect();
    s[i % s.len()]
}

fn vdiff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

fn through(m: &MorseModel, cp: usize, tau: f64, u: &[f64], w: &[f64]) -> Trajectory {
    let p = m.cp(cp);
    let x = scale(&u[..p.stable_dim()], p.delta / norm(&u[..p.stable_dim()]));
    let y = scale(&w[..p.unstable_dim()], p.delta / norm(&w[..p.unstable_dim()]));
    LocalChartPoint::Through { tau, x, y }.inverse(m, cp).unwrap()
}

fn glued_chain4(ctx: &Charts, taus: &[f64]) -> Trajectory {
    let m = ctx.model;
    let ids: Vec<usize> = ["max", "s1", "s2", "min"].iter().map(|s| m.find(s).unwrap()).collect();
    let fac: Vec<Factor> = ids.windows(2).map(|w| Factor::unbroken(ctx.conn.isolated(w[0], w[1])[0].clone())).collect();
    glue(ctx, ids[0], &ids[1..3], ids[3], taus, &fac).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn through_chart_roundtrip(model in 0usize..3, pick in 0usize..4, tau in 1e-6f64..0.99, u in direction(2), w in direction(2)) {
        let m = examples::load(["chain3", "chain4", "torus_yr"][model]).unwrap();
        let cp = saddle(&m, pick);
        let g = through(&m, cp, tau, &u, &w);
        let LocalChartPoint::Through { tau: t2, x, y } = chart_through(&m, cp, &g).unwrap() else { panic!() };
        let p = m.cp(cp);
        prop_assert!((t2 - tau).abs() < 1e-10);
        prop_assert!((norm(&x) - p.delta).abs() < 1e-10 && (norm(&y) - p.delta).abs() < 1e-10);
    }

    #[test]
    fn both_inside_roundtrip(pick in 0usize..4, tau in 0.0f64..1.0, r in 0.02f64..1.9, s in 0.02f64..1.9, u in direction(3), w in direction(3)) {
        let m = examples::chain4();
        let p = m.cp(pick);
        let x = if p.stable_dim() == 0 { vec![] } else { scale(&normalize(&u[..p.stable_dim()]).unwrap_or(vec![1.0; p.stable_dim()]), r * p.delta) };
        let y = if p.unstable_dim() == 0 { vec![] } else { scale(&normalize(&w[..p.unstable_dim()]).unwrap_or(vec![1.0; p.unstable_dim()]), s * p.delta) };
        prop_assume!(!x.is_empty() || !y.is_empty());
        let g = LocalChartPoint::BothInside { tau, x: x.clone(), y: y.clone() }.inverse(&m, pick).unwrap();
        let LocalChartPoint::BothInside { tau: t2, x: x2, y: y2 } = chart_both_inside(&m, pick, &g).unwrap() else { panic!() };
        prop_assert!((t2 - tau).abs() < 1e-10 && vdiff(&x, &x2) < 1e-10 && vdiff(&y, &y2) < 1e-10);
    }

    #[test]
    fn metric_symmetric_and_reflexive(model in 0usize..2, t1 in 1e-4f64..0.9, t2 in 0.0f64..0.9, u in direction(2), w in direction(2)) {
        let m = examples::load(["chain4", "torus_yr"][model]).unwrap();
        let cp = saddle(&m, 0);
        let a = through(&m, cp, t1, &u, &w);
        let b = through(&m, cp, t2, &w, &u);
        let dab = metric(&m, &a, &b, 128);
        prop_assert_eq!(dab, metric(&m, &b, &a, 128));
        prop_assert_eq!(metric(&m, &a, &a, 128), 0.0);
        prop_assert!(dab >= 0.0);
    }

    #[test]
    fn chart_of_glued_recovers_parameters(t1 in 1e-3f64..0.19, t2 in 1e-3f64..0.19) {
        let m = examples::chain4();
        let ctx = Charts::new(&m).unwrap();
        let g = glued_chain4(&ctx, &[t1, t2]);
        let ids: Vec<usize> = ["s1", "s2"].iter().map(|s| m.find(s).unwrap()).collect();
        let seq = morsechart::global_charts::CritSeq { minus: EndCond::Crit(m.find("max").unwrap()), points: ids, plus: EndCond::Crit(m.find("min").unwrap()) };
        let cp = chart_forward(&ctx, &seq, &g).unwrap();
        prop_assert!((cp.taus[0] - t1).abs() < 1e-9 && (cp.taus[1] - t2).abs() < 1e-9);
    }

    /// Each entry/exit pair of ι lies on one orbit of the linear local flow.
    #[test]
    fn iota_pairs_lie_on_local_orbits(t1 in 1e-3f64..0.19, t2 in 1e-3f64..0.19) {
        let m = examples::chain4();
        let ctx = Charts::new(&m).unwrap();
        let g = glued_chain4(&ctx, &[t1, t2]);
        let seq = morsechart::global_charts::enumerate_critseqs(&m, &ctx.conn, Terminal::Crit(m.find("max").unwrap()), Terminal::Crit(m.find("min").unwrap()))
            .into_iter()
            .find(|s| s.k() == 2)
            .unwrap();
        let ev = ev_and_tau(&ctx, &seq, &g).unwrap();
        for (a, b) in iota(&ev).unwrap() {
            prop_assert!((a.xn() * a.yn() - b.xn() * b.yn()).abs() < 1e-10);
            prop_assert!(vdiff(&scale(&a.x, 1.0 / a.xn()), &scale(&b.x, 1.0 / b.xn())) < 1e-10);
            prop_assert!(vdiff(&scale(&a.y, 1.0 / a.yn()), &scale(&b.y, 1.0 / b.yn())) < 1e-10);
        }
    }

    #[test]
    fn iota_single_point(tau in 0.0f64..1.0, x in direction(2), y in direction(1)) {
        let ev = Evaluations { taus: vec![tau], t_minus: 0.0, t_plus: 0.0, xs: vec![x.clone()], ys: vec![y.clone()] };
        let v = iota(&ev).unwrap();
        prop_assert_eq!(v.len(), 1);
        prop_assert_eq!(&v[0].0, &Pt::new(x.clone(), scale(&y, tau)));
        prop_assert_eq!(&v[0].1, &Pt::new(scale(&x, tau), y));
    }

    #[test]
    fn json_roundtrip(t in 1e-4f64..0.9, u in direction(2), w in direction(2)) {
        let m = examples::chain4();
        let g = through(&m, saddle(&m, 1), t, &u, &w);
        let back = Trajectory::from_json(&g.to_json(&m, 32)).unwrap();
        prop_assert!(metric(&m, &g, &back, 128) < 1e-12);
    }

    #[test]
    fn config_set_roundtrip(n in 1usize..100000, tol in 1e-12f64..1.0) {
        let mut c = Config::default();
        c.set(&format!("samples_local={n}")).unwrap();
        c.set(&format!("tol_assoc={tol:e}")).unwrap();
        prop_assert_eq!(c.samples_local, n);
        prop_assert_eq!(c.tol_assoc, tol);
    }
}
