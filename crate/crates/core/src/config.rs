//! JSON configuration: declarative description of the hypotheses and the
//! test parameters, with two bundled scenarios (`ht1`, `ht2`).
//!
//! Parse errors report the JSON path along with the reason. Defaults follow
//! the library conventions: uniform-ish schedules (`u(c) = 1/|log c|`),
//! posterior-cost stopping, block size 64, and a midrange first-stage
//! detector for Gaussian sensors.

use serde::{Deserialize, Serialize};

use crate::engine::{
    default_u, CentralizedConfig, StoppingRule, TwoStageConfig, DEFAULT_BLOCK_SIZE,
    DEFAULT_STEP_CAP,
};
use crate::error::{Error, Result};
use crate::maximin::{solve_all_states, SearchOptions};
use crate::models::{uniform_priors, zero_one_loss, DensitySpec, HypothesisSet};
use crate::quantizers::{
    CompetitorScope, DeterministicQuantizer, QuantizerVector, RandomizedQuantizer,
};

const HT1_JSON: &str = include_str!("../configs/ht1.json");
const HT2_JSON: &str = include_str!("../configs/ht2.json");

/// Bundled scenario by name.
pub fn builtin_config(name: &str) -> Option<&'static str> {
    match name {
        "ht1" => Some(HT1_JSON),
        "ht2" => Some(HT2_JSON),
        _ => None,
    }
}

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProjectConfig {
    pub hypotheses: HypothesesConfig,
    #[serde(default)]
    pub test: TestSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesesConfig {
    /// `densities[state][sensor]`.
    pub densities: Vec<Vec<DensitySpec>>,
    pub priors: PriorsConfig,
    #[serde(default)]
    pub loss: LossConfig,
    /// Composite grouping; omitted means simple hypotheses.
    #[serde(default)]
    pub groups: Option<Vec<Vec<usize>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PriorsConfig {
    Named(String),
    Explicit(Vec<f64>),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LossConfig {
    Named(String),
    Explicit(Vec<Vec<f64>>),
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig::Named("zero_one".to_string())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum UConfig {
    Constant(f64),
    Named(String),
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TestSection {
    pub cost: Option<f64>,
    pub u: Option<UConfig>,
    pub stopping_rule: Option<StoppingRule>,
    pub block_size: Option<usize>,
    pub step_cap: Option<u64>,
    /// Threshold of the first-stage detector, shared by all continuous
    /// sensors. Defaults to the midrange of each sensor's hypothesis means.
    pub first_stage_threshold: Option<f64>,
    /// Explicit first-stage cell maps, one per sensor; required for
    /// discrete sensors.
    pub first_stage_cells: Option<Vec<Vec<usize>>>,
    /// Per-state acceptance thresholds for the centralized reference test.
    pub centralized_thresholds: Option<Vec<f64>>,
    /// Per-sensor message alphabet sizes (default: binary).
    pub alphabets: Option<Vec<usize>>,
}

/// Parse a configuration, reporting the failing JSON path on error.
pub fn parse_config(text: &str) -> Result<ProjectConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de)
        .map_err(|e| Error::Config(format!("{} (at {})", e.inner(), e.path())))
}

pub const DEFAULT_COST: f64 = 3.6e-3;

impl ProjectConfig {
    /// Build and validate the hypothesis set.
    pub fn hypothesis_set(&self) -> Result<HypothesisSet> {
        let h = &self.hypotheses;
        let m_states = h.densities.len();
        let priors = match &h.priors {
            PriorsConfig::Named(name) if name == "uniform" => uniform_priors(m_states),
            PriorsConfig::Named(other) => {
                return Err(Error::Config(format!("unknown priors `{other}`")));
            }
            PriorsConfig::Explicit(p) => p.clone(),
        };
        let groups: Vec<Vec<usize>> = match &h.groups {
            Some(g) => g.clone(),
            None => (0..m_states).map(|m| vec![m]).collect(),
        };
        let loss = match &h.loss {
            LossConfig::Named(name) if name == "zero_one" => zero_one_loss(m_states, &groups),
            LossConfig::Named(other) => {
                return Err(Error::Config(format!("unknown loss `{other}`")));
            }
            LossConfig::Explicit(w) => w.clone(),
        };
        HypothesisSet::new(h.densities.clone(), priors, loss, groups)
    }

    pub fn cost(&self) -> f64 {
        self.test.cost.unwrap_or(DEFAULT_COST)
    }

    pub fn resolved_u(&self) -> Result<f64> {
        match &self.test.u {
            None => Ok(default_u(self.cost())),
            Some(UConfig::Constant(v)) => Ok(*v),
            Some(UConfig::Named(name)) if name == "inverse_log_cost" => {
                Ok(default_u(self.cost()))
            }
            Some(UConfig::Named(other)) => {
                Err(Error::Config(format!("unknown u schedule `{other}`")))
            }
        }
    }

    pub fn stopping_rule(&self) -> StoppingRule {
        self.test.stopping_rule.unwrap_or(StoppingRule::PosteriorCost)
    }

    /// Replicate a homogeneous configuration across `k` sensors.
    pub fn replicate_sensors(&self, k: usize) -> Result<ProjectConfig> {
        if k == 0 {
            return Err(Error::InvalidArgument("need at least one sensor".into()));
        }
        let mut out = self.clone();
        for row in out.hypotheses.densities.iter_mut() {
            if row.iter().any(|d| *d != row[0]) {
                return Err(Error::InvalidArgument(
                    "sensor replication requires identical densities across sensors".into(),
                ));
            }
            *row = vec![row[0].clone(); k];
        }
        if let Some(cells) = &mut out.test.first_stage_cells {
            if cells.len() == 1 {
                *cells = vec![cells[0].clone(); k];
            }
        }
        if let Some(alpha) = &mut out.test.alphabets {
            if alpha.len() == 1 {
                *alpha = vec![alpha[0]; k];
            }
        }
        Ok(out)
    }

    /// First-stage quantizer vector: configured cells or thresholds, or the
    /// midrange detector for Gaussian sensors.
    pub fn first_stage_quantizer(&self, hs: &HypothesisSet) -> Result<QuantizerVector> {
        let mut per_sensor = Vec::with_capacity(hs.num_sensors());
        for k in 0..hs.num_sensors() {
            let column = hs.sensor_column(k);
            if column[0].is_discrete() {
                let cells = self
                    .test
                    .first_stage_cells
                    .as_ref()
                    .and_then(|c| c.get(k))
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "sensor {k} is discrete: `test.first_stage_cells` is required"
                        ))
                    })?;
                per_sensor.push(DeterministicQuantizer::cell_map(2, cells.clone())?);
            } else {
                let lambda = match self.test.first_stage_threshold {
                    Some(t) => t,
                    None => {
                        let mut lo = f64::INFINITY;
                        let mut hi = f64::NEG_INFINITY;
                        for d in &column {
                            if let DensitySpec::Gaussian { mean, .. } = d {
                                lo = lo.min(*mean);
                                hi = hi.max(*mean);
                            }
                        }
                        0.5 * (lo + hi)
                    }
                };
                per_sensor.push(DeterministicQuantizer::threshold(lambda));
            }
        }
        QuantizerVector::new(per_sensor)
    }

    /// Maximin search options honoring the configured alphabets.
    pub fn search_options(&self) -> SearchOptions {
        SearchOptions { alphabets: self.test.alphabets.clone(), ..SearchOptions::default() }
    }

    /// Competitor scope implied by the grouping.
    pub fn scope(&self, hs: &HypothesisSet) -> CompetitorScope {
        if hs.has_trivial_groups() {
            CompetitorScope::All
        } else {
            CompetitorScope::OutsideGroup
        }
    }

    /// Assemble the full two-stage test: design the per-state second-stage
    /// quantizers by the maximin pipeline and bind all thresholds.
    pub fn assemble_two_stage(&self, hs: &HypothesisSet) -> Result<TwoStageConfig> {
        let scope = self.scope(hs);
        let designs = solve_all_states(hs, &self.search_options(), scope)?;
        self.two_stage_with(hs, designs.into_iter().map(|d| d.quantizer).collect())
    }

    /// Bind explicit second-stage quantizers into a validated test.
    pub fn two_stage_with(
        &self,
        hs: &HypothesisSet,
        second_stage: Vec<RandomizedQuantizer>,
    ) -> Result<TwoStageConfig> {
        let cfg = TwoStageConfig {
            cost: self.cost(),
            u: self.resolved_u()?,
            first_stage: self.first_stage_quantizer(hs)?,
            second_stage,
            stopping_rule: self.stopping_rule(),
            block_size: self.test.block_size.unwrap_or(DEFAULT_BLOCK_SIZE),
            step_cap: self.test.step_cap.unwrap_or(DEFAULT_STEP_CAP),
        };
        cfg.validate(hs)?;
        Ok(cfg)
    }

    /// Centralized reference test from the configured thresholds.
    pub fn centralized(&self, hs: &HypothesisSet) -> Result<CentralizedConfig> {
        let thresholds = self.test.centralized_thresholds.clone().ok_or_else(|| {
            Error::Config("`test.centralized_thresholds` is required for this variant".into())
        })?;
        let cfg = CentralizedConfig {
            thresholds,
            step_cap: self.test.step_cap.unwrap_or(DEFAULT_STEP_CAP),
        };
        cfg.validate(hs)?;
        Ok(cfg)
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn bundled_configs_parse_and_validate() {
        for name in ["ht1", "ht2"] {
            let cfg = parse_config(builtin_config(name).unwrap()).unwrap();
            let hs = cfg.hypothesis_set().unwrap();
            assert_eq!(hs.num_states(), 3);
            assert_eq!(hs.num_sensors(), 1);
            assert_abs_diff_eq!(cfg.cost(), 3.6e-3, epsilon = 1e-15);
            assert_abs_diff_eq!(cfg.resolved_u().unwrap(), 0.1, epsilon = 1e-15);
            let q0 = cfg.first_stage_quantizer(&hs).unwrap();
            assert_eq!(q0.sensor(0).as_threshold(), Some(0.0));
            let centralized = cfg.centralized(&hs).unwrap();
            assert_eq!(centralized.thresholds.len(), 3);
        }
    }

    #[test]
    fn parse_errors_carry_the_json_path() {
        let bad = r#"{ "hypotheses": { "densities": [[{ "gaussian": { "mean": 0.0, "stddev": "wide" } }]], "priors": "uniform" } }"#;
        let err = parse_config(bad).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("stddev"), "missing path in: {msg}");
    }

    #[test]
    fn unknown_names_are_rejected() {
        let cfg = parse_config(builtin_config("ht1").unwrap()).unwrap();
        let mut bad = cfg.clone();
        bad.hypotheses.priors = PriorsConfig::Named("jeffreys".into());
        assert!(bad.hypothesis_set().is_err());
        let mut bad = cfg;
        bad.test.u = Some(UConfig::Named("sqrt".into()));
        assert!(bad.resolved_u().is_err());
    }

    #[test]
    fn default_u_schedule_is_inverse_log_cost() {
        let mut cfg = parse_config(builtin_config("ht1").unwrap()).unwrap();
        cfg.test.u = None;
        cfg.test.cost = Some(1e-3);
        assert_abs_diff_eq!(
            cfg.resolved_u().unwrap(),
            1.0 / (1e-3f64).ln().abs(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn midrange_default_when_threshold_omitted() {
        let mut cfg = parse_config(builtin_config("ht1").unwrap()).unwrap();
        cfg.test.first_stage_threshold = None;
        let hs = cfg.hypothesis_set().unwrap();
        let q0 = cfg.first_stage_quantizer(&hs).unwrap();
        // Means -0.5 and 1.0: midrange 0.25.
        assert_abs_diff_eq!(q0.sensor(0).as_threshold().unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn sensor_replication_expands_rows() {
        let cfg = parse_config(builtin_config("ht2").unwrap()).unwrap();
        let two = cfg.replicate_sensors(2).unwrap();
        let hs = two.hypothesis_set().unwrap();
        assert_eq!(hs.num_sensors(), 2);
        assert!(hs.is_homogeneous());
    }
}
