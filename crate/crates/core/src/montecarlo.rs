//! Trial orchestration and statistics.
//!
//! Experiments run `R` independent trials per true state, each on its own
//! deterministically derived generator stream, so results are bit-for-bit
//! reproducible regardless of thread count. Aggregation is a fold over
//! records sorted by (truth, seed), which also makes it order-independent.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::engine::{
    run_centralized, CentralizedConfig, PreparedTwoStage, TruthSampler, TwoStageConfig,
};
use crate::error::{Error, Result};
use crate::models::HypothesisSet;

// ---------------------------------------------------------------------------
// Seeding
// ---------------------------------------------------------------------------

/// 64-bit finalizer (splitmix64): bijective, avalanching.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trial seed: the master seed mixed with the variant, the true state,
/// and the trial index, in that order.
pub fn trial_seed(master: u64, variant: u64, truth: u64, trial: u64) -> u64 {
    let mut s = mix64(master);
    s = mix64(s ^ variant);
    s = mix64(s ^ truth);
    mix64(s ^ trial)
}

// ---------------------------------------------------------------------------
// Records and summaries
// ---------------------------------------------------------------------------

/// Which test a summary came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    TwoStage,
    Centralized,
    Composite,
}

impl Variant {
    pub fn label(&self) -> &'static str {
        match self {
            Variant::TwoStage => "two_stage",
            Variant::Centralized => "centralized",
            Variant::Composite => "composite",
        }
    }

    fn id(&self) -> u64 {
        match self {
            Variant::TwoStage => 1,
            Variant::Centralized => 2,
            Variant::Composite => 3,
        }
    }
}

/// One trial's realized quantities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub truth: usize,
    pub n0: u64,
    pub n: u64,
    /// Preliminary decision (a state); for the centralized test this simply
    /// repeats the final decision.
    pub d0: usize,
    /// Final decision as a group index.
    pub d: usize,
    pub seed: u64,
}

/// Per-true-state aggregates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSummary {
    pub truth: usize,
    pub trials: u64,
    pub mean_n: f64,
    pub stderr_n: f64,
    pub mean_n0: f64,
    pub err_rate: f64,
    pub err_stderr: f64,
    /// Trials deciding each group, indexed by group.
    pub decision_counts: Vec<u64>,
}

/// Aggregated experiment results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub variant: Variant,
    pub cost: f64,
    pub trials_per_state: u64,
    pub master_seed: u64,
    /// Fingerprint of the hypothesis set; comparisons refuse to mix
    /// incompatible experiments.
    pub fingerprint: u64,
    pub priors: Vec<f64>,
    pub per_state: Vec<StateSummary>,
    pub bayes_risk: f64,
    pub bayes_risk_stderr: f64,
    pub version: String,
    /// Full configuration snapshot for the JSON sidecar.
    pub config: serde_json::Value,
}

/// Summary plus the raw per-trial records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experiment {
    pub summary: SimSummary,
    pub records: Vec<TrialRecord>,
}

// ---------------------------------------------------------------------------
// Experiment runner
// ---------------------------------------------------------------------------

/// The test to simulate.
pub enum TestSpec<'a> {
    TwoStage { cfg: &'a TwoStageConfig, variant: Variant },
    Centralized { cfg: &'a CentralizedConfig, cost: f64 },
}

impl TestSpec<'_> {
    fn variant(&self) -> Variant {
        match self {
            TestSpec::TwoStage { variant, .. } => *variant,
            TestSpec::Centralized { .. } => Variant::Centralized,
        }
    }

    fn cost(&self) -> f64 {
        match self {
            TestSpec::TwoStage { cfg, .. } => cfg.cost,
            TestSpec::Centralized { cost, .. } => *cost,
        }
    }

    fn config_snapshot(&self, hs: &HypothesisSet) -> serde_json::Value {
        let test = match self {
            TestSpec::TwoStage { cfg, .. } => json!({ "two_stage": cfg }),
            TestSpec::Centralized { cfg, cost } => {
                json!({ "centralized": cfg, "cost": cost })
            }
        };
        json!({ "variant": self.variant().label(), "test": test, "hypotheses": hs })
    }
}

/// Run `trials_per_state` independent trials under every true state and
/// aggregate. Any trial error aborts the experiment and names the seed that
/// triggered it so the trial can be replayed in isolation.
pub fn run_experiment(
    spec: &TestSpec,
    hs: &HypothesisSet,
    trials_per_state: u64,
    master_seed: u64,
) -> Result<Experiment> {
    if trials_per_state < 100 {
        return Err(Error::InvalidArgument(
            "need at least 100 trials per state for meaningful estimates".into(),
        ));
    }
    let variant = spec.variant();
    let m_states = hs.num_states();

    let prepared = match spec {
        TestSpec::TwoStage { cfg, .. } => Some(PreparedTwoStage::new(cfg, hs)?),
        TestSpec::Centralized { cfg, .. } => {
            cfg.validate(hs)?;
            None
        }
    };

    let jobs: Vec<(usize, u64)> = (0..m_states)
        .flat_map(|m| (0..trials_per_state).map(move |i| (m, i)))
        .collect();
    let records: Vec<TrialRecord> = jobs
        .into_par_iter()
        .map(|(truth, index)| {
            let seed = trial_seed(master_seed, variant.id(), truth as u64, index);
            let rng = ChaCha8Rng::seed_from_u64(seed);
            let mut src = TruthSampler::new(hs, truth, rng)?;
            match (&prepared, spec) {
                (Some(two_stage), _) => {
                    let out = two_stage.run_trial(&mut src, false).map_err(|e| {
                        Error::Numerical(format!("trial failed (seed {seed}): {e}"))
                    })?;
                    Ok(TrialRecord {
                        truth,
                        n0: out.n0,
                        n: out.n,
                        d0: out.preliminary,
                        d: out.decision,
                        seed,
                    })
                }
                (None, TestSpec::Centralized { cfg, .. }) => {
                    let (n, state) = run_centralized(cfg, hs, &mut src).map_err(|e| {
                        Error::Numerical(format!("trial failed (seed {seed}): {e}"))
                    })?;
                    let d = hs.group_of(state);
                    Ok(TrialRecord { truth, n0: 0, n, d0: state, d, seed })
                }
                _ => unreachable!("prepared state matches the spec"),
            }
        })
        .collect::<Result<_>>()?;

    let summary = summarize(
        variant,
        spec.cost(),
        hs,
        trials_per_state,
        master_seed,
        spec.config_snapshot(hs),
        &records,
    );
    Ok(Experiment { summary, records })
}

/// Aggregate records into a summary. The fold runs over records sorted by
/// (truth, seed), so the result is independent of arrival order.
pub fn summarize(
    variant: Variant,
    cost: f64,
    hs: &HypothesisSet,
    trials_per_state: u64,
    master_seed: u64,
    config: serde_json::Value,
    records: &[TrialRecord],
) -> SimSummary {
    let mut sorted: Vec<&TrialRecord> = records.iter().collect();
    sorted.sort_by_key(|r| (r.truth, r.seed));

    let m_states = hs.num_states();
    let b_groups = hs.num_groups();
    let mut per_state = Vec::with_capacity(m_states);
    let mut bayes_risk = 0.0;
    let mut bayes_var = 0.0;

    for truth in 0..m_states {
        let rows: Vec<&&TrialRecord> = sorted.iter().filter(|r| r.truth == truth).collect();
        let r = rows.len() as f64;
        let mean_n = rows.iter().map(|t| t.n as f64).sum::<f64>() / r;
        let var_n =
            rows.iter().map(|t| (t.n as f64 - mean_n).powi(2)).sum::<f64>() / (r - 1.0);
        let mean_n0 = rows.iter().map(|t| t.n0 as f64).sum::<f64>() / r;
        let correct = hs.group_of(truth);
        let errors = rows.iter().filter(|t| t.d != correct).count() as f64;
        let err_rate = errors / r;
        let mut decision_counts = vec![0u64; b_groups];
        for t in &rows {
            decision_counts[t.d] += 1;
        }

        // Per-trial realized risk: step cost plus decision loss.
        let risk = |t: &TrialRecord| cost * t.n as f64 + hs.loss(truth, t.d);
        let mean_risk = rows.iter().map(|t| risk(t)).sum::<f64>() / r;
        let var_risk =
            rows.iter().map(|t| (risk(t) - mean_risk).powi(2)).sum::<f64>() / (r - 1.0);
        let prior = hs.priors()[truth];
        bayes_risk += prior * mean_risk;
        bayes_var += prior * prior * var_risk / r;

        per_state.push(StateSummary {
            truth,
            trials: rows.len() as u64,
            mean_n,
            stderr_n: (var_n / r).sqrt(),
            mean_n0,
            err_rate,
            err_stderr: (err_rate * (1.0 - err_rate) / r).sqrt(),
            decision_counts,
        });
    }

    SimSummary {
        variant,
        cost,
        trials_per_state,
        master_seed,
        fingerprint: hs.fingerprint(),
        priors: hs.priors().to_vec(),
        per_state,
        bayes_risk,
        bayes_risk_stderr: bayes_var.sqrt(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
    }
}

// ---------------------------------------------------------------------------
// Derived statistics
// ---------------------------------------------------------------------------

/// Prior-weighted probability of an incorrect final decision.
pub fn overall_error(summary: &SimSummary) -> f64 {
    summary
        .per_state
        .iter()
        .zip(&summary.priors)
        .map(|(s, p)| p * s.err_rate)
        .sum()
}

/// Joint probability of wrongly accepting each alternative:
/// `gamma_b = sum_{m not in b} prior_m P_m(D = b)`. These are the
/// quantities a threshold per alternative tunes.
pub fn false_acceptance_rates(summary: &SimSummary, hs: &HypothesisSet) -> Vec<f64> {
    let b_groups = hs.num_groups();
    let mut gamma = vec![0.0; b_groups];
    for s in &summary.per_state {
        let prior = summary.priors[s.truth];
        let correct = hs.group_of(s.truth);
        for (b, &count) in s.decision_counts.iter().enumerate() {
            if b != correct {
                gamma[b] += prior * count as f64 / s.trials as f64;
            }
        }
    }
    gamma
}

/// Verdict of an error-calibration check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorRateReport {
    pub measured: f64,
    pub stderr: f64,
    pub target: f64,
    pub slack: f64,
    pub pass: bool,
    /// Set when the experiment is too small to resolve the target.
    pub insufficient_resolution: bool,
}

/// Compare the prior-weighted error probability against `target` with an
/// explicit slack for Monte Carlo noise.
pub fn error_rate_check(summary: &SimSummary, target: f64, slack: f64) -> Result<ErrorRateReport> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument("target must lie in (0, 1]".into()));
    }
    let measured = overall_error(summary);
    let stderr = summary
        .per_state
        .iter()
        .zip(&summary.priors)
        .map(|(s, p)| (p * s.err_stderr).powi(2))
        .sum::<f64>()
        .sqrt();
    Ok(ErrorRateReport {
        measured,
        stderr,
        target,
        slack,
        pass: measured <= target + slack,
        insufficient_resolution: stderr >= target,
    })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonEntry {
    pub mean_n: f64,
    pub stderr_n: f64,
    pub err_rate: f64,
    /// True when this entry's 3-sigma interval does not overlap the first
    /// summary's.
    pub separated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub variants: Vec<String>,
    /// `rows[truth][summary]`.
    pub rows: Vec<Vec<ComparisonEntry>>,
}

/// Side-by-side expected sample sizes and error rates for experiments over
/// the same hypothesis set.
pub fn compare(summaries: &[&SimSummary]) -> Result<ComparisonTable> {
    if summaries.is_empty() {
        return Err(Error::InvalidArgument("nothing to compare".into()));
    }
    let fp = summaries[0].fingerprint;
    if summaries.iter().any(|s| s.fingerprint != fp) {
        return Err(Error::InvalidArgument(
            "summaries were produced from different hypothesis sets".into(),
        ));
    }
    let states = summaries[0].per_state.len();
    if summaries.iter().any(|s| s.per_state.len() != states) {
        return Err(Error::InvalidArgument("state counts differ".into()));
    }
    let mut rows = Vec::with_capacity(states);
    for m in 0..states {
        let base = &summaries[0].per_state[m];
        let row = summaries
            .iter()
            .map(|s| {
                let e = &s.per_state[m];
                let gap = (e.mean_n - base.mean_n).abs();
                let reach = 3.0 * (e.stderr_n + base.stderr_n);
                ComparisonEntry {
                    mean_n: e.mean_n,
                    stderr_n: e.stderr_n,
                    err_rate: e.err_rate,
                    separated: gap > reach && !std::ptr::eq(*s, summaries[0]),
                }
            })
            .collect();
        rows.push(row);
    }
    Ok(ComparisonTable {
        variants: summaries.iter().map(|s| s.variant.label().to_string()).collect(),
        rows,
    })
}

impl std::fmt::Display for ComparisonTable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{:>6}", "m")?;
        for v in &self.variants {
            write!(f, " | {v:>24}")?;
        }
        writeln!(f)?;
        for (m, row) in self.rows.iter().enumerate() {
            write!(f, "{m:>6}")?;
            for e in row {
                let mark = if e.separated { "*" } else { " " };
                write!(
                    f,
                    " | {:>10.2} ±{:>6.2} {:>4.0e}{}",
                    e.mean_n,
                    e.stderr_n,
                    e.err_rate,
                    mark
                )?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

/// CSV rendering, one row per true state.
pub fn summary_csv(summary: &SimSummary) -> String {
    let mut out = String::from(
        "variant,m,R,mean_N,stderr_N,mean_N0,err_rate,err_stderr,bayes_risk\n",
    );
    for s in &summary.per_state {
        out.push_str(&format!(
            "{},{},{},{:.6},{:.6},{:.6},{:.6e},{:.6e},{:.6e}\n",
            summary.variant.label(),
            s.truth,
            s.trials,
            s.mean_n,
            s.stderr_n,
            s.mean_n0,
            s.err_rate,
            s.err_stderr,
            summary.bayes_risk,
        ));
    }
    out
}

/// JSON sidecar with the full configuration snapshot.
pub fn summary_json(summary: &SimSummary) -> Result<String> {
    serde_json::to_string_pretty(summary)
        .map_err(|e| Error::Numerical(format!("serialize summary: {e}")))
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
