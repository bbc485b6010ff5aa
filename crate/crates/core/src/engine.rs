//! Fusion-center decision process.
//!
//! A trial runs in two stages. In the first the sensors use a fixed
//! quantizer vector and the fusion center updates the posterior over states
//! until it clears a loose threshold `1 - u`, yielding a preliminary
//! decision. The sensors then switch to the (possibly randomized) quantizer
//! designed for that preliminary state; randomization is realized by a
//! deterministic block schedule so the fusion center always knows which
//! component produced each message and can use that component's exact
//! likelihoods. The posterior carries over — it is never reset — and the
//! trial stops once the tight second-stage rule fires.
//!
//! The engine never sees the true state: observations arrive through an
//! [`ObservationSource`], and only the sampling layer on the other side of
//! that trait knows what it is drawing from.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{HypothesisSet, Observation, Sampler};
use crate::quantizers::{
    kl_det_vector, min_kl, CompetitorScope, InducedPmf, QuantizerVector, RandomizedQuantizer,
};

pub const DEFAULT_STEP_CAP: u64 = 10_000_000;
pub const DEFAULT_BLOCK_SIZE: usize = 64;

/// The default first-stage threshold schedule `u(c) = 1 / |log c|`.
pub fn default_u(cost: f64) -> f64 {
    1.0 / cost.ln().abs()
}

// ---------------------------------------------------------------------------
// Observation sources
// ---------------------------------------------------------------------------

/// Anything that can produce one raw observation per sensor per time step.
///
/// The decision engine is generic over this trait precisely so the true
/// state stays confined to the sampling layer.
pub trait ObservationSource {
    fn observe(&mut self) -> Vec<Observation>;
}

/// Samples i.i.d. observations from the densities of one (hidden) state.
pub struct TruthSampler<R: Rng> {
    samplers: Vec<Sampler>,
    rng: R,
}

impl<R: Rng> TruthSampler<R> {
    pub fn new(hs: &HypothesisSet, truth: usize, rng: R) -> Result<Self> {
        if truth >= hs.num_states() {
            return Err(Error::InvalidArgument(format!("state {truth} out of range")));
        }
        let samplers = (0..hs.num_sensors())
            .map(|k| hs.density(truth, k).sampler())
            .collect::<Result<_>>()?;
        Ok(TruthSampler { samplers, rng })
    }
}

impl<R: Rng> ObservationSource for TruthSampler<R> {
    fn observe(&mut self) -> Vec<Observation> {
        self.samplers.iter().map(|s| s.draw(&mut self.rng)).collect()
    }
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

/// Second-stage stopping rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StoppingRule {
    /// Stop once the leading posterior mass reaches `1 - c`.
    PosteriorThreshold,
    /// Stop once some alternative's posterior expected loss drops to `c`.
    PosteriorCost,
}

/// Full description of a two-stage decentralized test.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TwoStageConfig {
    /// Cost per time step; also sets the second-stage threshold `1 - c`.
    pub cost: f64,
    /// First-stage threshold parameter, in (0, 1/2).
    pub u: f64,
    /// Stationary quantizer vector used throughout the first stage.
    pub first_stage: QuantizerVector,
    /// Per-state second-stage quantizers, indexed by the preliminary decision.
    pub second_stage: Vec<RandomizedQuantizer>,
    pub stopping_rule: StoppingRule,
    /// Block length used to realize randomization weights.
    pub block_size: usize,
    /// Hard bound on steps per trial; exceeding it is an error.
    pub step_cap: u64,
}

impl TwoStageConfig {
    pub fn validate(&self, hs: &HypothesisSet) -> Result<()> {
        if !(self.cost > 0.0 && self.cost < 1.0) {
            return Err(Error::validation("cost", "must lie in (0, 1)"));
        }
        if !(self.u > 0.0 && self.u < 0.5) {
            return Err(Error::validation("u", "must lie in (0, 1/2)"));
        }
        self.first_stage.check_compatible(hs)?;
        let m_states = hs.num_states();
        for m in 0..m_states {
            for mp in 0..m_states {
                if m == mp {
                    continue;
                }
                if kl_det_vector(&self.first_stage, hs, m, mp)? <= 0.0 {
                    return Err(Error::validation(
                        "first_stage",
                        format!("zero divergence between states {m} and {mp}"),
                    ));
                }
            }
        }
        if self.second_stage.len() != m_states {
            return Err(Error::validation(
                "second_stage",
                "one quantizer per state required",
            ));
        }
        for (d0, rq) in self.second_stage.iter().enumerate() {
            for qv in rq.components() {
                qv.check_compatible(hs)?;
            }
            if self.block_size < rq.num_components() {
                return Err(Error::validation(
                    "block_size",
                    format!("smaller than component count of quantizer {d0}"),
                ));
            }
            // Every state must keep separating information under every
            // second-stage quantizer, or a wrong preliminary decision could
            // stall the test.
            for m in 0..m_states {
                if min_kl(rq, hs, m, CompetitorScope::All)? <= 0.0 {
                    return Err(Error::validation(
                        "second_stage",
                        format!("quantizer {d0} carries no information about state {m}"),
                    ));
                }
            }
        }
        if self.step_cap == 0 {
            return Err(Error::validation("step_cap", "must be positive"));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Block schedule
// ---------------------------------------------------------------------------

/// Deterministic realization of randomization weights over a block of
/// `b` steps: component `j` appears `round(w_j * b)` times (largest
/// remainder), interleaved by repeatedly taking the component with the most
/// uses remaining.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSchedule {
    order: Vec<usize>,
    counts: Vec<usize>,
}

impl BlockSchedule {
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Component active at step `cursor` (wrapping across blocks).
    pub fn component_at(&self, cursor: usize) -> usize {
        self.order[cursor % self.order.len()]
    }
}

pub fn build_block_schedule(weights: &[f64], block_size: usize) -> Result<BlockSchedule> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no components to schedule".into()));
    }
    if block_size < weights.len() {
        return Err(Error::InvalidArgument(format!(
            "block size {block_size} is smaller than the component count {}",
            weights.len()
        )));
    }
    let scaled: Vec<f64> = weights.iter().map(|w| w * block_size as f64).collect();
    let mut counts: Vec<usize> = scaled.iter().map(|s| s.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut remainders: Vec<(usize, f64)> = scaled
        .iter()
        .enumerate()
        .map(|(j, s)| (j, s - s.floor()))
        .collect();
    remainders.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    for (j, _) in remainders.into_iter().take(block_size - assigned) {
        counts[j] += 1;
    }

    let mut remaining = counts.clone();
    let mut order = Vec::with_capacity(block_size);
    for _ in 0..block_size {
        let mut pick = 0;
        for j in 1..remaining.len() {
            if remaining[j] > remaining[pick] {
                pick = j;
            }
        }
        remaining[pick] -= 1;
        order.push(pick);
    }
    Ok(BlockSchedule { order, counts })
}

// ---------------------------------------------------------------------------
// Fusion state and traces
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    First,
    Second { preliminary: usize },
}

/// Posterior, stage marker, and time counter carried through a trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionState {
    pub posterior: Vec<f64>,
    pub stage: Stage,
    pub time: u64,
    pub schedule_cursor: usize,
}

impl FusionState {
    pub fn initial(priors: &[f64]) -> Self {
        FusionState {
            posterior: priors.to_vec(),
            stage: Stage::First,
            time: 0,
            schedule_cursor: 0,
        }
    }
}

/// One per-step trace record, written after the posterior update.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub n: u64,
    pub stage: Stage,
    /// Index of the realized deterministic component within its stage.
    pub component: usize,
    pub messages: Vec<usize>,
    pub posterior: Vec<f64>,
}

/// Everything a single trial produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub n0: u64,
    pub preliminary: usize,
    pub n: u64,
    /// Decided alternative (a group index; equals the state index for
    /// simple hypotheses).
    pub decision: usize,
    pub final_posterior: Vec<f64>,
    pub trace: Option<Vec<StepRecord>>,
}

// ---------------------------------------------------------------------------
// Posterior recursion
// ---------------------------------------------------------------------------

/// One Bayes update: `posterior[m] *= likelihoods[m]`, renormalized.
/// A zero denominator (the message is impossible under every state) is an
/// error the caller should wrap with message context.
pub fn posterior_update(posterior: &mut [f64], likelihoods: &[f64]) -> Result<()> {
    debug_assert_eq!(posterior.len(), likelihoods.len());
    let mut denom = 0.0;
    for (p, l) in posterior.iter().zip(likelihoods) {
        denom += p * l;
    }
    if !(denom > 0.0) || !denom.is_finite() {
        return Err(Error::Numerical(format!(
            "posterior update denominator {denom}"
        )));
    }
    for (p, l) in posterior.iter_mut().zip(likelihoods) {
        *p = *p * l / denom;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Prepared two-stage test
// ---------------------------------------------------------------------------

struct PreparedComponent {
    quantizers: QuantizerVector,
    pmfs: Vec<InducedPmf>,
}

struct PreparedSecondStage {
    components: Vec<PreparedComponent>,
    schedule: BlockSchedule,
}

/// A validated two-stage test with all induced pmfs and block schedules
/// precomputed, ready to run trials.
pub struct PreparedTwoStage<'a> {
    hs: &'a HypothesisSet,
    cfg: &'a TwoStageConfig,
    first: PreparedComponent,
    second: Vec<PreparedSecondStage>,
}

impl<'a> PreparedTwoStage<'a> {
    pub fn new(cfg: &'a TwoStageConfig, hs: &'a HypothesisSet) -> Result<Self> {
        cfg.validate(hs)?;
        let first = prepare_component(&cfg.first_stage, hs)?;
        let second = cfg
            .second_stage
            .iter()
            .map(|rq| {
                let components = rq
                    .components()
                    .iter()
                    .map(|qv| prepare_component(qv, hs))
                    .collect::<Result<Vec<_>>>()?;
                let schedule = build_block_schedule(rq.weights(), cfg.block_size)?;
                Ok(PreparedSecondStage { components, schedule })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(PreparedTwoStage { hs, cfg, first, second })
    }

    pub fn config(&self) -> &TwoStageConfig {
        self.cfg
    }

    /// Run the first stage: update with the stationary quantizer until the
    /// leading posterior reaches `1 - u`, then report the preliminary
    /// decision. The threshold is checked before any data is drawn.
    pub fn run_first_stage(
        &self,
        src: &mut dyn ObservationSource,
        mut trace: Option<&mut Vec<StepRecord>>,
    ) -> Result<(FusionState, usize)> {
        let mut state = FusionState::initial(self.hs.priors());
        loop {
            let (leader, mass) = leader(&state.posterior);
            if mass >= 1.0 - self.cfg.u {
                return Ok((state, leader));
            }
            if state.time >= self.cfg.step_cap {
                return Err(Error::RunawayTrial {
                    cap: self.cfg.step_cap,
                    stage: "first",
                    posterior: state.posterior,
                });
            }
            let messages = self.quantize(&self.first, src)?;
            self.update(&mut state.posterior, &self.first, &messages, "first-stage")?;
            state.time += 1;
            if let Some(out) = trace.as_deref_mut() {
                out.push(StepRecord {
                    n: state.time,
                    stage: Stage::First,
                    component: 0,
                    messages,
                    posterior: state.posterior.clone(),
                });
            }
        }
    }

    /// Run the second stage from a completed first stage: switch to the
    /// quantizer designed for the preliminary decision, drive its block
    /// schedule, and keep updating the carried-over posterior until the
    /// stopping rule fires.
    pub fn run_second_stage(
        &self,
        mut state: FusionState,
        preliminary: usize,
        src: &mut dyn ObservationSource,
        mut trace: Option<&mut Vec<StepRecord>>,
    ) -> Result<(FusionState, usize)> {
        let prepared = &self.second[preliminary];
        state.stage = Stage::Second { preliminary };
        state.schedule_cursor = 0;
        loop {
            if let Some(decision) = self.second_stage_decision(&state.posterior) {
                return Ok((state, decision));
            }
            if state.time >= self.cfg.step_cap {
                return Err(Error::RunawayTrial {
                    cap: self.cfg.step_cap,
                    stage: "second",
                    posterior: state.posterior,
                });
            }
            let j = prepared.schedule.component_at(state.schedule_cursor);
            state.schedule_cursor += 1;
            let component = &prepared.components[j];
            let messages = self.quantize(component, src)?;
            self.update(&mut state.posterior, component, &messages, "second-stage")?;
            state.time += 1;
            if let Some(out) = trace.as_deref_mut() {
                out.push(StepRecord {
                    n: state.time,
                    stage: Stage::Second { preliminary },
                    component: j,
                    messages,
                    posterior: state.posterior.clone(),
                });
            }
        }
    }

    /// Run a complete trial.
    pub fn run_trial(
        &self,
        src: &mut dyn ObservationSource,
        want_trace: bool,
    ) -> Result<TrialOutcome> {
        let mut trace = if want_trace { Some(Vec::new()) } else { None };
        let (state, preliminary) = self.run_first_stage(src, trace.as_mut())?;
        let n0 = state.time;
        let (state, decision) =
            self.run_second_stage(state, preliminary, src, trace.as_mut())?;
        Ok(TrialOutcome {
            n0,
            preliminary,
            n: state.time,
            decision,
            final_posterior: state.posterior,
            trace,
        })
    }

    fn quantize(
        &self,
        component: &PreparedComponent,
        src: &mut dyn ObservationSource,
    ) -> Result<Vec<usize>> {
        let obs = src.observe();
        obs.iter()
            .enumerate()
            .map(|(k, x)| component.quantizers.sensor(k).quantize(x, self.hs, k))
            .collect()
    }

    fn update(
        &self,
        posterior: &mut [f64],
        component: &PreparedComponent,
        messages: &[usize],
        what: &str,
    ) -> Result<()> {
        let likes = message_likelihoods(&component.pmfs, messages, self.hs.num_states());
        posterior_update(posterior, &likes).map_err(|_| Error::ImpossibleMessage {
            quantizer: what.to_string(),
            message: messages.to_vec(),
        })
    }

    /// Stopping decision on the current posterior, as a group index.
    fn second_stage_decision(&self, posterior: &[f64]) -> Option<usize> {
        match self.cfg.stopping_rule {
            StoppingRule::PosteriorThreshold => {
                let (state, mass) = leader(posterior);
                (mass >= 1.0 - self.cfg.cost).then(|| self.hs.group_of(state))
            }
            StoppingRule::PosteriorCost => {
                let (group, cost) = self.cheapest_decision(posterior);
                (cost <= self.cfg.cost).then_some(group)
            }
        }
    }

    /// Posterior expected loss of each alternative; returns the argmin.
    fn cheapest_decision(&self, posterior: &[f64]) -> (usize, f64) {
        let mut best = (0usize, f64::INFINITY);
        for b in 0..self.hs.num_groups() {
            let mut r = 0.0;
            for (m, p) in posterior.iter().enumerate() {
                if self.hs.group_of(m) != b {
                    r += p * self.hs.loss(m, b);
                }
            }
            if r < best.1 {
                best = (b, r);
            }
        }
        best
    }
}

fn prepare_component(qv: &QuantizerVector, hs: &HypothesisSet) -> Result<PreparedComponent> {
    let concrete = QuantizerVector::new(
        (0..hs.num_sensors())
            .map(|k| qv.sensor(k).concretize(hs, k))
            .collect::<Result<_>>()?,
    )?;
    let pmfs = concrete.induced_pmfs(hs)?;
    Ok(PreparedComponent { quantizers: concrete, pmfs })
}

fn message_likelihoods(pmfs: &[InducedPmf], messages: &[usize], m_states: usize) -> Vec<f64> {
    let mut likes = vec![1.0; m_states];
    for (pmf, &u) in pmfs.iter().zip(messages) {
        for (m, like) in likes.iter_mut().enumerate() {
            *like *= pmf.cell_prob(u, m);
        }
    }
    likes
}

fn leader(posterior: &[f64]) -> (usize, f64) {
    let mut idx = 0;
    for (i, p) in posterior.iter().enumerate() {
        if *p > posterior[idx] {
            idx = i;
        }
    }
    (idx, posterior[idx])
}

// ---------------------------------------------------------------------------
// Centralized reference test
// ---------------------------------------------------------------------------

/// Reference test that sees raw observations: the posterior is updated with
/// the densities themselves and the trial stops as soon as some state's
/// posterior reaches its threshold.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CentralizedConfig {
    /// Per-state acceptance thresholds, each in (1/2, 1).
    pub thresholds: Vec<f64>,
    pub step_cap: u64,
}

impl CentralizedConfig {
    pub fn validate(&self, hs: &HypothesisSet) -> Result<()> {
        if self.thresholds.len() != hs.num_states() {
            return Err(Error::validation("thresholds", "one threshold per state"));
        }
        if self.thresholds.iter().any(|a| !(*a > 0.5 && *a < 1.0)) {
            return Err(Error::validation("thresholds", "must lie in (1/2, 1)"));
        }
        if self.step_cap == 0 {
            return Err(Error::validation("step_cap", "must be positive"));
        }
        Ok(())
    }
}

/// Run one centralized trial; returns `(N, decision)`. At least one
/// observation is always taken.
pub fn run_centralized(
    cfg: &CentralizedConfig,
    hs: &HypothesisSet,
    src: &mut dyn ObservationSource,
) -> Result<(u64, usize)> {
    cfg.validate(hs)?;
    let mut posterior = hs.priors().to_vec();
    let mut n: u64 = 0;
    loop {
        if n >= cfg.step_cap {
            return Err(Error::RunawayTrial {
                cap: cfg.step_cap,
                stage: "centralized",
                posterior,
            });
        }
        let obs = src.observe();
        let mut likes = vec![1.0; hs.num_states()];
        for (k, x) in obs.iter().enumerate() {
            for (m, like) in likes.iter_mut().enumerate() {
                *like *= hs.density(m, k).pdf(x)?;
            }
        }
        posterior_update(&mut posterior, &likes).map_err(|_| Error::ImpossibleMessage {
            quantizer: "centralized".to_string(),
            message: Vec::new(),
        })?;
        n += 1;
        let (state, mass) = leader(&posterior);
        if mass >= cfg.thresholds[state] {
            return Ok((n, state));
        }
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
