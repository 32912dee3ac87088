//! Global charts on compactified trajectory spaces: critical sequences, the tubular
//! projections onto spaces of infinite trajectories, and the chart maps with their inverses.

mod chart;
mod critseq;
mod projection;

pub use chart::{
    chart_forward, chart_inverse, end_condition_transition, ev_and_tau, in_v_t, iota, multistart_inverse, BlockEnd, ChartPoint,
    EndFactor, Evaluations, Multistart, SlotKind,
};
pub(crate) use chart::{solve_block, Block};
pub use critseq::{enumerate_critseqs, Connectivity, CritSeq, EndCond, Terminal};
pub use projection::{crossing_data, project, Crossing, Kind, SegStart};

use serde::{Deserialize, Serialize};

use crate::model::MorseModel;

/// Numerical parameters of the chart construction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ChartParams {
    /// Chart constraint t: end factors satisfy E|x| < tΔ.
    pub t: f64,
    /// Blend thresholds θ_b for pairs of breaking number b = 1, 2, ...
    pub thetas: Vec<f64>,
    pub max_iter: usize,
    /// Accepted residual of the inverse solve, in units of Δ.
    pub solve_tol: f64,
    /// Step of the finite-difference Jacobians.
    pub fd_step: f64,
}

impl ChartParams {
    pub fn for_model(model: &MorseModel) -> Self {
        if model.is_synthetic() {
            ChartParams { t: 0.2, thetas: vec![0.8, 0.4], max_iter: 50, solve_tol: 1e-11, fd_step: 1e-7 }
        } else {
            ChartParams { t: 0.2, thetas: vec![0.8, 0.4], max_iter: 50, solve_tol: 1e-7, fd_step: 1e-5 }
        }
    }

    pub fn theta(&self, b: usize) -> f64 {
        let i = b.max(1) - 1;
        match self.thetas.get(i) {
            Some(t) => *t,
            None => self.thetas.last().copied().unwrap_or(0.8) * 0.5f64.powi((i + 1 - self.thetas.len()) as i32),
        }
    }
}

/// A model together with its connectivity data and chart parameters.
pub struct Charts<'m> {
    pub model: &'m MorseModel,
    pub conn: Connectivity,
    pub params: ChartParams,
}

impl<'m> Charts<'m> {
    pub fn new(model: &'m MorseModel) -> crate::Result<Self> {
        let conn = Connectivity::compute(model)?;
        Ok(Charts { model, conn, params: ChartParams::for_model(model) })
    }

    pub fn with_params(model: &'m MorseModel, params: ChartParams) -> crate::Result<Self> {
        let conn = Connectivity::compute(model)?;
        Ok(Charts { model, conn, params })
    }
}
