//! Statistical ground truth: hypothesis densities, priors, loss structure,
//! composite grouping, and seeded sampling.
//!
//! A [`HypothesisSet`] fixes M candidate states and K sensors. Under state
//! `m`, sensor `k` observes i.i.d. draws from `densities[m][k]`. Every
//! construction validates the full set of invariants (positive priors,
//! admissible loss matrix, pairwise distinguishability) so downstream code
//! can assume a well-posed problem.

use rand::Rng;
use rand_distr::Distribution;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for "sums to one" checks on priors and pmf vectors.
pub const SUM_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Observations and densities
// ---------------------------------------------------------------------------

/// A single raw observation at one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    /// Real-valued observation (continuous families).
    Continuous(f64),
    /// Index into a finite support (discrete families).
    Discrete(usize),
}

/// Marginal distribution of one sensor's raw data under one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensitySpec {
    Gaussian { mean: f64, stddev: f64 },
    FiniteSupport { probs: Vec<f64> },
}

impl DensitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DensitySpec::Gaussian { stddev, mean } => {
                if !stddev.is_finite() || *stddev <= 0.0 {
                    return Err(Error::validation("stddev", format!("must be > 0, got {stddev}")));
                }
                if !mean.is_finite() {
                    return Err(Error::validation("mean", "must be finite"));
                }
            }
            DensitySpec::FiniteSupport { probs } => {
                if probs.is_empty() {
                    return Err(Error::validation("probs", "support must be nonempty"));
                }
                if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                    return Err(Error::validation("probs", "entries must be nonnegative"));
                }
                let sum: f64 = probs.iter().sum();
                if (sum - 1.0).abs() > SUM_TOL {
                    return Err(Error::validation("probs", format!("must sum to 1, got {sum}")));
                }
            }
        }
        Ok(())
    }

    /// Density (or mass) at `x`.
    pub fn pdf(&self, x: &Observation) -> Result<f64> {
        match (self, x) {
            (DensitySpec::Gaussian { mean, stddev }, Observation::Continuous(v)) => {
                let z = (v - mean) / stddev;
                Ok((-0.5 * z * z).exp() / (stddev * (2.0 * std::f64::consts::PI).sqrt()))
            }
            (DensitySpec::FiniteSupport { probs }, Observation::Discrete(i)) => probs
                .get(*i)
                .copied()
                .ok_or_else(|| {
                    Error::DomainMismatch(format!(
                        "support index {i} out of range (size {})",
                        probs.len()
                    ))
                }),
            (DensitySpec::Gaussian { .. }, Observation::Discrete(_)) => Err(Error::DomainMismatch(
                "discrete observation supplied to a Gaussian density".into(),
            )),
            (DensitySpec::FiniteSupport { .. }, Observation::Continuous(_)) => {
                Err(Error::DomainMismatch(
                    "continuous observation supplied to a finite-support density".into(),
                ))
            }
        }
    }

    /// `P(X <= x)` for continuous families.
    pub fn cdf(&self, x: f64) -> Result<f64> {
        match self {
            DensitySpec::Gaussian { mean, stddev } => {
                let n = statrs::distribution::Normal::new(*mean, *stddev)
                    .map_err(|e| Error::Numerical(format!("normal cdf: {e}")))?;
                Ok(statrs::distribution::ContinuousCDF::cdf(&n, x))
            }
            DensitySpec::FiniteSupport { .. } => Err(Error::DomainMismatch(
                "cdf on a finite-support density; use pmf sums instead".into(),
            )),
        }
    }

    /// `P(lo < X <= hi)` for continuous families; `lo`/`hi` may be infinite.
    /// Upper-tail intervals go through the survival function so probabilities
    /// far in the tail keep full relative precision instead of cancelling.
    pub fn interval_mass(&self, lo: f64, hi: f64) -> Result<f64> {
        match self {
            DensitySpec::Gaussian { mean, stddev } => {
                if lo > hi {
                    return Err(Error::InvalidArgument(format!(
                        "interval bounds out of order: {lo} > {hi}"
                    )));
                }
                let n = statrs::distribution::Normal::new(*mean, *stddev)
                    .map_err(|e| Error::Numerical(format!("normal cdf: {e}")))?;
                use statrs::distribution::ContinuousCDF;
                let mass = match (lo.is_infinite(), hi.is_infinite()) {
                    (true, true) => 1.0,
                    (true, false) => n.cdf(hi),
                    (false, true) => n.sf(lo),
                    (false, false) => {
                        if lo - mean + (hi - mean) > 0.0 {
                            n.sf(lo) - n.sf(hi)
                        } else {
                            n.cdf(hi) - n.cdf(lo)
                        }
                    }
                };
                Ok(mass.max(0.0))
            }
            DensitySpec::FiniteSupport { .. } => Err(Error::DomainMismatch(
                "interval mass on a finite-support density".into(),
            )),
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, DensitySpec::FiniteSupport { .. })
    }

    /// Size of the discrete support, if any.
    pub fn support_size(&self) -> Option<usize> {
        match self {
            DensitySpec::FiniteSupport { probs } => Some(probs.len()),
            DensitySpec::Gaussian { .. } => None,
        }
    }

    /// Reusable sampler for this density.
    pub fn sampler(&self) -> Result<Sampler> {
        self.validate()?;
        match self {
            DensitySpec::Gaussian { mean, stddev } => {
                let normal = rand_distr::Normal::new(*mean, *stddev)
                    .map_err(|e| Error::Numerical(format!("normal sampler: {e}")))?;
                Ok(Sampler::Gaussian(normal))
            }
            DensitySpec::FiniteSupport { probs } => {
                // WeightedIndex rejects all-zero weight vectors; validate() already
                // guarantees a strictly positive total.
                let idx = rand::distr::weighted::WeightedIndex::new(probs.iter().copied())
                    .map_err(|e| Error::Numerical(format!("weighted sampler: {e}")))?;
                Ok(Sampler::Finite(idx))
            }
        }
    }

    /// `n` i.i.d. draws. Identical generator state yields identical output.
    pub fn sample<R: Rng>(&self, rng: &mut R, n: usize) -> Result<Vec<Observation>> {
        let sampler = self.sampler()?;
        Ok((0..n).map(|_| sampler.draw(rng)).collect())
    }
}

/// Prepared sampling handle; build once per (state, sensor) and reuse.
#[derive(Debug, Clone)]
pub enum Sampler {
    Gaussian(rand_distr::Normal<f64>),
    Finite(rand::distr::weighted::WeightedIndex<f64>),
}

impl Sampler {
    pub fn draw<R: Rng>(&self, rng: &mut R) -> Observation {
        match self {
            Sampler::Gaussian(d) => Observation::Continuous(d.sample(rng)),
            Sampler::Finite(d) => Observation::Discrete(d.sample(rng)),
        }
    }
}

// ---------------------------------------------------------------------------
// Hypothesis set
// ---------------------------------------------------------------------------

/// The full testing problem: M states, K sensors, priors, loss, grouping.
///
/// `groups` partitions `0..M` into B decision alternatives; the identity
/// partition recovers simple hypotheses. `loss[m][b]` is the cost of
/// deciding alternative `b` when the true state is `m`; it is zero exactly
/// when `m` belongs to group `b`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisSet {
    densities: Vec<Vec<DensitySpec>>,
    priors: Vec<f64>,
    loss: Vec<Vec<f64>>,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
}

impl HypothesisSet {
    /// Build and validate a complete hypothesis set.
    pub fn new(
        densities: Vec<Vec<DensitySpec>>,
        priors: Vec<f64>,
        loss: Vec<Vec<f64>>,
        groups: Vec<Vec<usize>>,
    ) -> Result<Self> {
        let m_states = densities.len();
        if m_states < 2 {
            return Err(Error::validation("densities", "need at least 2 states"));
        }
        let sensors = densities[0].len();
        if sensors == 0 {
            return Err(Error::validation("densities", "need at least 1 sensor"));
        }
        if densities.iter().any(|row| row.len() != sensors) {
            return Err(Error::validation("densities", "ragged state x sensor grid"));
        }
        for (m, row) in densities.iter().enumerate() {
            for (k, d) in row.iter().enumerate() {
                d.validate().map_err(|e| {
                    Error::validation(format!("densities[{m}][{k}]"), e.to_string())
                })?;
            }
        }
        // Each sensor observes one space: all states must agree on the family
        // kind and, for discrete families, on the support size.
        for k in 0..sensors {
            let disc = densities[0][k].is_discrete();
            let size = densities[0][k].support_size();
            for (m, row) in densities.iter().enumerate() {
                if row[k].is_discrete() != disc || row[k].support_size() != size {
                    return Err(Error::validation(
                        format!("densities[{m}][{k}]"),
                        "observation space differs across states at this sensor",
                    ));
                }
            }
        }

        if priors.len() != m_states {
            return Err(Error::validation("priors", "length must equal state count"));
        }
        if priors.iter().any(|p| !(*p > 0.0)) {
            return Err(Error::validation("priors", "all prior masses must be > 0"));
        }
        let sum: f64 = priors.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::validation("priors", format!("must sum to 1, got {sum}")));
        }

        let group_of = validate_groups(m_states, &groups)?;

        let b_groups = groups.len();
        if loss.len() != m_states || loss.iter().any(|row| row.len() != b_groups) {
            return Err(Error::validation("loss", "shape must be states x groups"));
        }
        for (m, row) in loss.iter().enumerate() {
            for (b, w) in row.iter().enumerate() {
                if !w.is_finite() || *w < 0.0 {
                    return Err(Error::validation(
                        format!("loss[{m}][{b}]"),
                        "entries must be finite and nonnegative",
                    ));
                }
                let correct = group_of[m] == b;
                if correct && *w != 0.0 {
                    return Err(Error::validation(
                        format!("loss[{m}][{b}]"),
                        "correct decisions must incur zero loss",
                    ));
                }
                if !correct && *w == 0.0 {
                    return Err(Error::validation(
                        format!("loss[{m}][{b}]"),
                        "incorrect decisions must incur positive loss",
                    ));
                }
            }
        }

        let hs = HypothesisSet {
            densities,
            priors,
            loss,
            groups,
            group_of,
        };
        hs.check_distinguishability()?;
        Ok(hs)
    }

    /// Simple hypotheses: identity grouping and 0-1 loss.
    pub fn simple(densities: Vec<Vec<DensitySpec>>, priors: Vec<f64>) -> Result<Self> {
        let m = densities.len();
        let groups: Vec<Vec<usize>> = (0..m).map(|i| vec![i]).collect();
        let loss = zero_one_loss(m, &groups);
        HypothesisSet::new(densities, priors, loss, groups)
    }

    /// Pairwise distinguishability: the raw K-L divergence must be finite at
    /// every sensor and strictly positive at some sensor, for every pair.
    fn check_distinguishability(&self) -> Result<()> {
        let m_states = self.num_states();
        for m in 0..m_states {
            for mp in 0..m_states {
                if m == mp {
                    continue;
                }
                let mut any_positive = false;
                for k in 0..self.num_sensors() {
                    let kl = self.raw_kl(m, mp, k)?;
                    if kl.is_infinite() {
                        return Err(Error::validation(
                            format!("densities[{m}]/[{mp}] sensor {k}"),
                            "infinite raw divergence (support mismatch)",
                        ));
                    }
                    if kl > 0.0 {
                        any_positive = true;
                    }
                }
                if !any_positive {
                    return Err(Error::validation(
                        format!("densities[{m}]/[{mp}]"),
                        "states are indistinguishable at every sensor",
                    ));
                }
            }
        }
        Ok(())
    }

    pub fn num_states(&self) -> usize {
        self.densities.len()
    }

    pub fn num_sensors(&self) -> usize {
        self.densities[0].len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn density(&self, m: usize, k: usize) -> &DensitySpec {
        &self.densities[m][k]
    }

    /// All state densities at sensor `k`, indexed by state.
    pub fn sensor_column(&self, k: usize) -> Vec<&DensitySpec> {
        self.densities.iter().map(|row| &row[k]).collect()
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }

    pub fn loss(&self, m: usize, group: usize) -> f64 {
        self.loss[m][group]
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    pub fn group_of(&self, m: usize) -> usize {
        self.group_of[m]
    }

    pub fn has_trivial_groups(&self) -> bool {
        self.groups.len() == self.num_states()
    }

    /// True when every sensor sees the same density under each state.
    pub fn is_homogeneous(&self) -> bool {
        self.densities
            .iter()
            .all(|row| row.iter().all(|d| *d == row[0]))
    }

    /// Single-sensor restriction (sensor `k` only), preserving priors,
    /// loss, and grouping.
    pub fn restrict_to_sensor(&self, k: usize) -> Result<HypothesisSet> {
        if k >= self.num_sensors() {
            return Err(Error::InvalidArgument(format!("sensor {k} out of range")));
        }
        HypothesisSet::new(
            self.densities.iter().map(|row| vec![row[k].clone()]).collect(),
            self.priors.clone(),
            self.loss.clone(),
            self.groups.clone(),
        )
    }

    /// Replicate a homogeneous single-sensor problem across `k` sensors.
    pub fn replicate_sensors(&self, k: usize) -> Result<HypothesisSet> {
        if k == 0 {
            return Err(Error::InvalidArgument("need at least 1 sensor".into()));
        }
        if !self.is_homogeneous() {
            return Err(Error::InvalidArgument(
                "sensor replication requires identical densities across sensors".into(),
            ));
        }
        HypothesisSet::new(
            self.densities
                .iter()
                .map(|row| vec![row[0].clone(); k])
                .collect(),
            self.priors.clone(),
            self.loss.clone(),
            self.groups.clone(),
        )
    }

    /// K-L divergence of the raw observation distributions at sensor `k`,
    /// from state `m` to state `mp`. Infinite divergence (support mismatch)
    /// is reported as `f64::INFINITY`.
    pub fn raw_kl(&self, m: usize, mp: usize, k: usize) -> Result<f64> {
        if m == mp {
            return Err(Error::InvalidArgument("raw_kl requires m != m'".into()));
        }
        let (p, q) = (&self.densities[m][k], &self.densities[mp][k]);
        match (p, q) {
            (
                DensitySpec::Gaussian { mean: m1, stddev: s1 },
                DensitySpec::Gaussian { mean: m2, stddev: s2 },
            ) => Ok((s2 / s1).ln() + (s1 * s1 + (m1 - m2) * (m1 - m2)) / (2.0 * s2 * s2) - 0.5),
            (
                DensitySpec::FiniteSupport { probs: p1 },
                DensitySpec::FiniteSupport { probs: p2 },
            ) => Ok(discrete_kl(p1, p2)),
            _ => Err(Error::DomainMismatch(
                "raw_kl across different density families".into(),
            )),
        }
    }

    /// Stable fingerprint of the statistical configuration, used to refuse
    /// comparisons between incompatible experiments.
    pub fn fingerprint(&self) -> u64 {
        let json = serde_json::to_string(self).expect("hypothesis set serializes");
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for b in json.as_bytes() {
            h ^= u64::from(*b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}

/// K-L divergence between two finite pmfs with the conventions
/// `0 log(0/0) = 0` and `p > 0, q = 0 => +inf`. Rounding can push the sum
/// of an (almost) identical pair a few ulps below zero; true divergences
/// are never negative, so such results clamp to zero.
pub fn discrete_kl(p: &[f64], q: &[f64]) -> f64 {
    debug_assert_eq!(p.len(), q.len());
    let mut acc = 0.0;
    for (pi, qi) in p.iter().zip(q) {
        if *pi == 0.0 {
            continue;
        }
        if *qi == 0.0 {
            return f64::INFINITY;
        }
        acc += pi * (pi / qi).ln();
    }
    debug_assert!(acc > -1e-9, "divergence {acc} is negative beyond rounding");
    acc.max(0.0)
}

/// 0-1 loss over the given grouping.
pub fn zero_one_loss(m_states: usize, groups: &[Vec<usize>]) -> Vec<Vec<f64>> {
    let mut group_of = vec![0usize; m_states];
    for (b, g) in groups.iter().enumerate() {
        for &m in g {
            group_of[m] = b;
        }
    }
    (0..m_states)
        .map(|m| {
            (0..groups.len())
                .map(|b| if group_of[m] == b { 0.0 } else { 1.0 })
                .collect()
        })
        .collect()
}

pub fn uniform_priors(m_states: usize) -> Vec<f64> {
    vec![1.0 / m_states as f64; m_states]
}

fn validate_groups(m_states: usize, groups: &[Vec<usize>]) -> Result<Vec<usize>> {
    if groups.is_empty() {
        return Err(Error::validation("groups", "need at least one group"));
    }
    let mut group_of = vec![usize::MAX; m_states];
    for (b, g) in groups.iter().enumerate() {
        if g.is_empty() {
            return Err(Error::validation("groups", format!("group {b} is empty")));
        }
        for &m in g {
            if m >= m_states {
                return Err(Error::validation("groups", format!("state {m} out of range")));
            }
            if group_of[m] != usize::MAX {
                return Err(Error::validation(
                    "groups",
                    format!("state {m} assigned to more than one group"),
                ));
            }
            group_of[m] = b;
        }
    }
    if group_of.iter().any(|g| *g == usize::MAX) {
        return Err(Error::validation("groups", "groups must cover every state"));
    }
    Ok(group_of)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
