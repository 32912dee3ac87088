//! Flat key = value configuration of the verification runs.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::global_charts::ChartParams;
use crate::model::MorseModel;

/// Every numeric knob of the verification suites. Chart parameters left unset fall back to
/// the per-model defaults.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub seed: u64,
    /// Chart constraint t.
    pub t: Option<f64>,
    /// Blend thresholds of the tubular projections, one per breaking number.
    pub t_ladder: Option<Vec<f64>>,
    pub max_iter: Option<usize>,
    pub solve_tol: Option<f64>,
    pub fd_step: Option<f64>,

    /// Samples per leg in metric evaluations.
    pub samples_metric: usize,
    pub samples_local: usize,
    pub samples_hausdorff: usize,
    pub samples_relations: usize,
    pub samples_corner: usize,
    pub samples_inversion: usize,
    pub samples_assoc: usize,
    pub samples_finite: usize,
    pub samples_triples: usize,
    pub samples_strata: usize,
    pub multistart: usize,

    pub tol_roundtrip: f64,
    pub tol_event_exact: f64,
    pub tol_event_numeric: f64,
    /// Allowed sampling slack of the Hausdorff bound, as a fraction of Δ.
    pub tol_slack: f64,
    pub tol_relation: f64,
    pub tol_corner: f64,
    pub tol_inversion: f64,
    pub tol_assoc: f64,
    pub min_alpha: f64,
    pub tol_transition: f64,
    pub tol_compat: f64,
    /// Range of random gluing parameters.
    pub tau_min: f64,
    pub tau_max: f64,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 20260301,
            t: None,
            t_ladder: None,
            max_iter: None,
            solve_tol: None,
            fd_step: None,
            samples_metric: 512,
            samples_local: 1000,
            samples_hausdorff: 500,
            samples_relations: 500,
            samples_corner: 100,
            samples_inversion: 200,
            samples_assoc: 50,
            samples_finite: 200,
            samples_triples: 1000,
            samples_strata: 100,
            multistart: 8,
            tol_roundtrip: 1e-10,
            tol_event_exact: 1e-8,
            tol_event_numeric: 1e-6,
            tol_slack: 0.02,
            tol_relation: 1e-10,
            tol_corner: 1e-6,
            tol_inversion: 1e-6,
            tol_assoc: 1e-5,
            min_alpha: 0.45,
            tol_transition: 1e-8,
            tol_compat: 1e-6,
            tau_min: 1e-3,
            tau_max: 0.19,
        }
    }
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(format!("config: {e}")))
    }

    pub fn load(path: &str) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Override one key from a `key=value` string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Schema(format!("expected key=value, got '{assignment}'")))?;
        let mut table = toml::Table::try_from(&*self).map_err(|e| Error::Schema(e.to_string()))?;
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", v.trim()))
            .map_err(|e| Error::Schema(format!("config value '{v}': {e}")))?
            .remove("v")
            .unwrap();
        table.insert(k.trim().to_string(), value);
        *self = table.try_into().map_err(|e: toml::de::Error| Error::Schema(format!("config: {e}")))?;
        Ok(())
    }

    pub fn chart_params(&self, model: &MorseModel) -> ChartParams {
        let mut p = ChartParams::for_model(model);
        if let Some(t) = self.t {
            p.t = t;
        }
        if let Some(l) = &self.t_ladder {
            p.thetas = l.clone();
        }
        if let Some(m) = self.max_iter {
            p.max_iter = m;
        }
        if let Some(s) = self.solve_tol {
            p.solve_tol = s;
        }
        if let Some(h) = self.fd_step {
            p.fd_step = h;
        }
        p
    }

    /// Transit-time tolerance for the model kind.
    pub fn tol_event(&self, model: &MorseModel) -> f64 {
        if model.is_synthetic() {
            self.tol_event_exact
        } else {
            self.tol_event_numeric
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_partial_file() {
        let c = Config::from_toml("seed = 3\nt = 0.1\nt_ladder = [0.6, 0.3]\nsamples_metric = 256\n").unwrap();
        assert_eq!(c.seed, 3);
        assert_eq!(c.t, Some(0.1));
        assert_eq!(c.t_ladder, Some(vec![0.6, 0.3]));
        assert_eq!(c.samples_metric, 256);
        assert_eq!(c.tol_assoc, Config::default().tol_assoc);
    }

    #[test]
    fn rejects_unknown_keys() {
        assert!(Config::from_toml("nonsense = 1").is_err());
    }

    #[test]
    fn set_overrides() {
        let mut c = Config::default();
        c.set("tol_corner=1e-5").unwrap();
        c.set("t=0.15").unwrap();
        c.set("tol_assoc = 1").unwrap();
        c.set("samples_local=10").unwrap();
        assert_eq!(c.tol_corner, 1e-5);
        assert_eq!(c.t, Some(0.15));
        assert_eq!(c.tol_assoc, 1.0);
        assert_eq!(c.samples_local, 10);
        assert!(c.set("bogus=1").is_err());
    }
}
