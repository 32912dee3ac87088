//! Adaptive Dormand–Prince 4(5) integration with event localisation by bisection.

use crate::error::{Error, Result};
use crate::linalg::Vector;

const C2: f64 = 1.0 / 5.0;
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
const B4: [f64; 7] =
    [5179.0 / 57600.0, 0.0, 7571.0 / 16695.0, 393.0 / 640.0, -92097.0 / 339200.0, 187.0 / 2100.0, 1.0 / 40.0];

/// One Dormand–Prince step; returns (5th order solution, error estimate norm).
pub fn dopri_step<F: Fn(&[f64]) -> Vector>(f: &F, y: &[f64], h: f64) -> (Vector, f64) {
    let n = y.len();
    let _ = C2;
    let mut k: Vec<Vector> = Vec::with_capacity(7);
    k.push(f(y));
    for (i, row) in A.iter().enumerate() {
        let yi: Vector = (0..n).map(|d| y[d] + h * (0..=i).map(|j| row[j] * k[j][d]).sum::<f64>()).collect();
        k.push(f(&yi));
    }
    let y5: Vector = (0..n).map(|d| y[d] + h * (0..7).map(|j| B5[j] * k[j][d]).sum::<f64>()).collect();
    let err = (0..n)
        .map(|d| {
            let e = h * (0..7).map(|j| (B5[j] - B4[j]) * k[j][d]).sum::<f64>();
            let sc = 1.0 + y[d].abs().max(y5[d].abs());
            (e / sc).powi(2)
        })
        .sum::<f64>()
        .sqrt();
    (y5, err)
}

#[derive(Clone, Debug)]
pub struct RkPath {
    pub times: Vec<f64>,
    pub states: Vec<Vector>,
    /// Index of the event that stopped the integration, if any.
    pub event: Option<usize>,
}

/// Integrate the autonomous field `f` from `y0` for signed duration up to `t_max`
/// (negative for backward flow). Stops at the first event whose function changes from
/// positive to non-positive, localised by bisection to time tolerance `eps_t`.
pub fn integrate<F, G>(f: &F, y0: &[f64], t_max: f64, tol: f64, events: &G, eps_t: f64) -> Result<RkPath>
where
    F: Fn(&[f64]) -> Vector,
    G: Fn(&[f64]) -> Vec<f64>,
{
    let dir = if t_max < 0.0 { -1.0 } else { 1.0 };
    let total = t_max.abs();
    let mut t = 0.0;
    let mut y = y0.to_vec();
    let mut h = 1e-2f64.min(total.max(1e-12));
    let mut times = vec![0.0];
    let mut states = vec![y.clone()];
    let mut g_prev = events(&y);
    let mut steps = 0usize;
    while t < total {
        steps += 1;
        if steps > 2_000_000 {
            return Err(Error::Timeout(t));
        }
        let hh = h.min(total - t);
        let (yn, err) = dopri_step(f, &y, dir * hh);
        if err > tol && hh > 1e-14 {
            h = hh * (0.9 * (tol / err).powf(0.2)).clamp(0.1, 0.9);
            continue;
        }
        let g_new = events(&yn);
        let hit = g_prev.iter().zip(&g_new).position(|(a, b)| *a > 0.0 && *b <= 0.0);
        if let Some(k) = hit {
            // bisection on the step length
            let (mut lo, mut hi) = (0.0, hh);
            let mut y_hi = yn.clone();
            while hi - lo > eps_t {
                let mid = 0.5 * (lo + hi);
                let (ym, _) = dopri_step(f, &y, dir * mid);
                if events(&ym)[k] <= 0.0 {
                    hi = mid;
                    y_hi = ym;
                } else {
                    lo = mid;
                }
            }
            times.push(dir * (t + hi));
            states.push(y_hi);
            return Ok(RkPath { times, states, event: Some(k) });
        }
        t += hh;
        y = yn;
        g_prev = g_new;
        times.push(dir * t);
        states.push(y.clone());
        let fac = if err > 0.0 { (0.9 * (tol / err).powf(0.2)).clamp(0.2, 5.0) } else { 5.0 };
        h = (hh * fac).min(0.25);
    }
    Ok(RkPath { times, states, event: None })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exponential_decay() {
        let f = |y: &[f64]| vec![-y[0]];
        let p = integrate(&f, &[1.0], 2.0, 1e-12, &|_: &[f64]| vec![], 1e-13).unwrap();
        let y = p.states.last().unwrap()[0];
        assert!((y - (-2.0f64).exp()).abs() < 1e-10);
    }

    #[test]
    fn event_time_localised() {
        let f = |y: &[f64]| vec![y[0]];
        let ev = |y: &[f64]| vec![2.0 - y[0]];
        let p = integrate(&f, &[1.0], 10.0, 1e-12, &ev, 1e-13).unwrap();
        assert_eq!(p.event, Some(0));
        assert!((p.times.last().unwrap() - 2f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn backward_integration() {
        let f = |y: &[f64]| vec![-y[0]];
        let p = integrate(&f, &[1.0], -1.0, 1e-12, &|_: &[f64]| vec![], 1e-13).unwrap();
        assert!((p.states.last().unwrap()[0] - 1f64.exp()).abs() < 1e-9);
        assert!((p.times.last().unwrap() + 1.0).abs() < 1e-15);
    }
}
