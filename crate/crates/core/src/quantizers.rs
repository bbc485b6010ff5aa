//! Deterministic and randomized quantizers, their induced message
//! distributions, and both K-L divergence notions.
//!
//! Three interchangeable representations are supported:
//!
//! - `IntervalUnion`: a partition of the real line into labeled segments
//!   (thresholds and interval detectors live here);
//! - `UlqCoefficients`: cells defined by `argmin_i sum_m a[i][m] f_m(x)`,
//!   the parametric family the maximin search optimizes over;
//! - `CellMap`: an explicit cell index per discrete support point.
//!
//! Coefficient quantizers over continuous observations are evaluated by
//! converting them to an `IntervalUnion` via a scan-and-bisect root
//! isolation; the conversion refuses to return silently inconsistent
//! regions.
//!
//! Two divergences coexist for a randomized quantizer: the weighted average
//! of its components' divergences (the quantity the fusion center realizes
//! when it always knows the active component) and the divergence of the
//! weight-averaged message pmf (what an observer who never learns the
//! component would see). The former dominates the latter by Jensen's
//! inequality.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{discrete_kl, DensitySpec, HypothesisSet, Observation, SUM_TOL};

/// Column-sum tolerance for induced pmfs.
pub const PMF_TOL: f64 = 1e-9;

const SCAN_POINTS: usize = 4096;
const SCAN_SIGMAS: f64 = 10.0;
const BISECT_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Deterministic quantizers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantizerRepr {
    /// Sorted breakpoints and a cell label per segment
    /// (`cells.len() == breakpoints.len() + 1`). Segment `i` is
    /// `[breakpoints[i-1], breakpoints[i])`.
    IntervalUnion {
        breakpoints: Vec<f64>,
        cells: Vec<usize>,
    },
    /// `coeffs[i][m]` weighting density `m` in the score of cell `i`;
    /// the quantizer outputs the cell of minimal score, ties resolved
    /// toward the lower index. Stored with unit Frobenius norm.
    UlqCoefficients { coeffs: Vec<Vec<f64>> },
    /// Explicit cell per discrete support point.
    CellMap { cells: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeterministicQuantizer {
    alphabet_size: usize,
    repr: QuantizerRepr,
}

impl DeterministicQuantizer {
    pub fn new(alphabet_size: usize, repr: QuantizerRepr) -> Result<Self> {
        if alphabet_size < 2 {
            return Err(Error::validation("alphabet_size", "must be at least 2"));
        }
        match &repr {
            QuantizerRepr::IntervalUnion { breakpoints, cells } => {
                if cells.len() != breakpoints.len() + 1 {
                    return Err(Error::validation(
                        "cells",
                        "need exactly one label per segment",
                    ));
                }
                if breakpoints.iter().any(|b| !b.is_finite()) {
                    return Err(Error::validation("breakpoints", "must be finite"));
                }
                if breakpoints.windows(2).any(|w| w[0] >= w[1]) {
                    return Err(Error::validation(
                        "breakpoints",
                        "must be strictly increasing",
                    ));
                }
                if cells.iter().any(|c| *c >= alphabet_size) {
                    return Err(Error::validation("cells", "label out of alphabet"));
                }
            }
            QuantizerRepr::UlqCoefficients { coeffs } => {
                if coeffs.len() != alphabet_size {
                    return Err(Error::validation("coeffs", "need one row per cell"));
                }
                let m = coeffs[0].len();
                if m == 0 || coeffs.iter().any(|row| row.len() != m) {
                    return Err(Error::validation("coeffs", "ragged or empty matrix"));
                }
                if coeffs.iter().flatten().any(|a| !a.is_finite()) {
                    return Err(Error::validation("coeffs", "entries must be finite"));
                }
                let norm: f64 = coeffs.iter().flatten().map(|a| a * a).sum::<f64>().sqrt();
                if norm == 0.0 {
                    return Err(Error::validation("coeffs", "matrix must be nonzero"));
                }
            }
            QuantizerRepr::CellMap { cells } => {
                if cells.is_empty() {
                    return Err(Error::validation("cells", "must be nonempty"));
                }
                if cells.iter().any(|c| *c >= alphabet_size) {
                    return Err(Error::validation("cells", "label out of alphabet"));
                }
            }
        }
        let repr = match repr {
            QuantizerRepr::UlqCoefficients { coeffs } => {
                QuantizerRepr::UlqCoefficients { coeffs: normalize_frobenius(coeffs) }
            }
            other => other,
        };
        Ok(DeterministicQuantizer { alphabet_size, repr })
    }

    /// Binary threshold detector: cell 1 on `[lambda, inf)`.
    pub fn threshold(lambda: f64) -> Self {
        DeterministicQuantizer::new(
            2,
            QuantizerRepr::IntervalUnion { breakpoints: vec![lambda], cells: vec![0, 1] },
        )
        .expect("threshold quantizer is well-formed")
    }

    /// Binary interval detector: cell 1 on `[lo, hi]`. Degenerate intervals
    /// (`lo == hi`) carry no mass under continuous laws.
    pub fn interval(lo: f64, hi: f64) -> Result<Self> {
        if !(lo <= hi) {
            return Err(Error::InvalidArgument(format!(
                "interval bounds out of order: {lo} > {hi}"
            )));
        }
        if lo == hi {
            // Zero-width detector: keep a representable two-segment form.
            return DeterministicQuantizer::new(
                2,
                QuantizerRepr::IntervalUnion { breakpoints: vec![lo], cells: vec![0, 0] },
            );
        }
        DeterministicQuantizer::new(
            2,
            QuantizerRepr::IntervalUnion { breakpoints: vec![lo, hi], cells: vec![0, 1, 0] },
        )
    }

    /// Binary quantizer `I(sum_m a[m] f_m(X) > 0)`.
    pub fn binary_ulq(a: &[f64]) -> Result<Self> {
        let pos: Vec<f64> = a.to_vec();
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        // Cell 1 wins exactly when its score -a.f is below cell 0's score +a.f,
        // i.e. when a.f > 0; ties fall to cell 0 as in the indicator form.
        DeterministicQuantizer::new(2, QuantizerRepr::UlqCoefficients { coeffs: vec![pos, neg] })
    }

    /// General coefficient quantizer with one row per cell.
    pub fn ulq_matrix(coeffs: Vec<Vec<f64>>) -> Result<Self> {
        let l = coeffs.len();
        DeterministicQuantizer::new(l, QuantizerRepr::UlqCoefficients { coeffs })
    }

    pub fn cell_map(alphabet_size: usize, cells: Vec<usize>) -> Result<Self> {
        DeterministicQuantizer::new(alphabet_size, QuantizerRepr::CellMap { cells })
    }

    pub fn alphabet_size(&self) -> usize {
        self.alphabet_size
    }

    pub fn repr(&self) -> &QuantizerRepr {
        &self.repr
    }

    /// Canonical defining vector of a binary coefficient quantizer,
    /// normalized to unit Euclidean norm.
    pub fn binary_coefficients(&self) -> Option<Vec<f64>> {
        match &self.repr {
            QuantizerRepr::UlqCoefficients { coeffs } if self.alphabet_size == 2 => {
                let a: Vec<f64> =
                    coeffs[0].iter().zip(&coeffs[1]).map(|(r0, r1)| r0 - r1).collect();
                let norm: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt();
                Some(a.into_iter().map(|v| v / norm).collect())
            }
            _ => None,
        }
    }

    /// The single threshold of a two-segment `[0 | 1]` partition, when this
    /// quantizer has that shape.
    pub fn as_threshold(&self) -> Option<f64> {
        match &self.repr {
            QuantizerRepr::IntervalUnion { breakpoints, cells }
                if breakpoints.len() == 1 && cells == &vec![0, 1] =>
            {
                Some(breakpoints[0])
            }
            _ => None,
        }
    }

    /// Map one observation to a message cell.
    pub fn quantize(&self, x: &Observation, hs: &HypothesisSet, sensor: usize) -> Result<usize> {
        match (&self.repr, x) {
            (QuantizerRepr::IntervalUnion { breakpoints, cells }, Observation::Continuous(v)) => {
                let seg = breakpoints.partition_point(|b| b <= v);
                Ok(cells[seg])
            }
            (QuantizerRepr::CellMap { cells }, Observation::Discrete(i)) => {
                cells.get(*i).copied().ok_or_else(|| {
                    Error::DomainMismatch(format!("support index {i} outside cell map"))
                })
            }
            (QuantizerRepr::UlqCoefficients { coeffs }, _) => {
                let column = hs.sensor_column(sensor);
                let scores: Vec<f64> = (0..self.alphabet_size)
                    .map(|i| ulq_score(&coeffs[i], &column, x))
                    .collect::<Result<_>>()?;
                Ok(argmin(&scores))
            }
            (QuantizerRepr::IntervalUnion { .. }, Observation::Discrete(_)) => {
                Err(Error::DomainMismatch(
                    "interval quantizer applied to a discrete observation".into(),
                ))
            }
            (QuantizerRepr::CellMap { .. }, Observation::Continuous(_)) => {
                Err(Error::DomainMismatch(
                    "cell-map quantizer applied to a continuous observation".into(),
                ))
            }
        }
    }

    /// Resolve a coefficient representation into the concrete form matching
    /// sensor `sensor`'s observation space (intervals for continuous, a cell
    /// map for discrete). Other representations pass through unchanged.
    pub fn concretize(&self, hs: &HypothesisSet, sensor: usize) -> Result<DeterministicQuantizer> {
        match &self.repr {
            QuantizerRepr::UlqCoefficients { coeffs } => {
                let column = hs.sensor_column(sensor);
                if column[0].is_discrete() {
                    let support = column[0].support_size().expect("discrete support");
                    let cells: Vec<usize> = (0..support)
                        .map(|v| {
                            let scores: Vec<f64> = (0..self.alphabet_size)
                                .map(|i| ulq_score(&coeffs[i], &column, &Observation::Discrete(v)))
                                .collect::<Result<_>>()?;
                            Ok(argmin(&scores))
                        })
                        .collect::<Result<_>>()?;
                    DeterministicQuantizer::cell_map(self.alphabet_size, cells)
                } else {
                    let (breakpoints, cells) =
                        ulq_to_intervals(coeffs, &column, self.alphabet_size)?;
                    DeterministicQuantizer::new(
                        self.alphabet_size,
                        QuantizerRepr::IntervalUnion { breakpoints, cells },
                    )
                }
            }
            _ => Ok(self.clone()),
        }
    }

    /// Exact cell probabilities under every state at sensor `sensor`.
    pub fn induced_pmf(&self, hs: &HypothesisSet, sensor: usize) -> Result<InducedPmf> {
        let column = hs.sensor_column(sensor);
        let m_states = hs.num_states();
        let mut q = vec![vec![0.0; m_states]; self.alphabet_size];
        match &self.repr {
            QuantizerRepr::IntervalUnion { breakpoints, cells } => {
                if column[0].is_discrete() {
                    return Err(Error::DomainMismatch(
                        "interval quantizer over a discrete observation space".into(),
                    ));
                }
                for (m, density) in column.iter().enumerate() {
                    for (seg, cell) in cells.iter().enumerate() {
                        let lo = if seg == 0 { f64::NEG_INFINITY } else { breakpoints[seg - 1] };
                        let hi = if seg == breakpoints.len() {
                            f64::INFINITY
                        } else {
                            breakpoints[seg]
                        };
                        q[*cell][m] += density.interval_mass(lo, hi)?;
                    }
                }
            }
            QuantizerRepr::CellMap { cells } => {
                if !column[0].is_discrete() {
                    return Err(Error::DomainMismatch(
                        "cell-map quantizer over a continuous observation space".into(),
                    ));
                }
                let support = column[0].support_size().expect("discrete support");
                if cells.len() != support {
                    return Err(Error::validation(
                        "cells",
                        format!("cell map covers {} points, support has {support}", cells.len()),
                    ));
                }
                for (m, density) in column.iter().enumerate() {
                    for (v, cell) in cells.iter().enumerate() {
                        q[*cell][m] += density.pdf(&Observation::Discrete(v))?;
                    }
                }
            }
            QuantizerRepr::UlqCoefficients { .. } => {
                return self.concretize(hs, sensor)?.induced_pmf(hs, sensor);
            }
        }
        InducedPmf::new(q)
    }
}

fn normalize_frobenius(coeffs: Vec<Vec<f64>>) -> Vec<Vec<f64>> {
    let norm: f64 = coeffs.iter().flatten().map(|a| a * a).sum::<f64>().sqrt();
    coeffs
        .into_iter()
        .map(|row| row.into_iter().map(|a| a / norm).collect())
        .collect()
}

fn ulq_score(row: &[f64], column: &[&DensitySpec], x: &Observation) -> Result<f64> {
    let mut acc = 0.0;
    for (a, density) in row.iter().zip(column) {
        acc += a * density.pdf(x)?;
    }
    Ok(acc)
}

fn argmin(scores: &[f64]) -> usize {
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s < scores[best] {
            best = i;
        }
    }
    best
}

// ---------------------------------------------------------------------------
// Coefficient quantizer -> interval partition
// ---------------------------------------------------------------------------

/// Locate the argmin-switch points of the cell scores over a scan window
/// covering all hypothesis means plus `SCAN_SIGMAS` standard deviations.
///
/// Switch points between differing grid winners are refined by recursive
/// bisection to `BISECT_TOL`; a midpoint whose winner matches neither
/// endpoint splits the segment so interior cells are recovered. The
/// resulting partition is verified by re-evaluating the winner inside
/// every segment; any inconsistency is an explicit numerical error.
fn ulq_to_intervals(
    coeffs: &[Vec<f64>],
    column: &[&DensitySpec],
    alphabet: usize,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut mu_min = f64::INFINITY;
    let mut mu_max = f64::NEG_INFINITY;
    let mut sigma_max: f64 = 0.0;
    for d in column {
        match d {
            DensitySpec::Gaussian { mean, stddev } => {
                mu_min = mu_min.min(*mean);
                mu_max = mu_max.max(*mean);
                sigma_max = sigma_max.max(*stddev);
            }
            DensitySpec::FiniteSupport { .. } => {
                return Err(Error::DomainMismatch(
                    "interval conversion over a discrete observation space".into(),
                ));
            }
        }
    }
    let lo = mu_min - SCAN_SIGMAS * sigma_max;
    let hi = mu_max + SCAN_SIGMAS * sigma_max;

    let winner = |x: f64| -> Result<usize> {
        let obs = Observation::Continuous(x);
        let scores: Vec<f64> =
            (0..alphabet).map(|i| ulq_score(&coeffs[i], column, &obs)).collect::<Result<_>>()?;
        Ok(argmin(&scores))
    };

    let step = (hi - lo) / (SCAN_POINTS - 1) as f64;
    let mut breakpoints = Vec::new();
    let mut cells = Vec::new();
    let mut current = winner(lo)?;
    cells.push(current);
    for i in 1..SCAN_POINTS {
        let x = lo + step * i as f64;
        let w = winner(x)?;
        if w != current {
            refine_switches(lo + step * (i - 1) as f64, current, x, w, &winner, &mut |b, c| {
                breakpoints.push(b);
                cells.push(c);
            })?;
            current = w;
        }
    }

    // Segment-interior verification: a silent misassignment is worse than a
    // loud failure.
    for seg in 0..cells.len() {
        let (a, b) = segment_bounds(seg, &breakpoints, lo, hi);
        let mid = 0.5 * (a + b);
        let w = winner(mid)?;
        if w != cells[seg] {
            return Err(Error::Numerical(format!(
                "unresolved argmin pattern near x={mid}: segment labeled {} but cell {w} wins",
                cells[seg]
            )));
        }
    }

    // Merge consecutive segments that ended up with one label.
    let mut merged_b = Vec::with_capacity(breakpoints.len());
    let mut merged_c = vec![cells[0]];
    for (i, b) in breakpoints.iter().enumerate() {
        if cells[i + 1] != *merged_c.last().unwrap() {
            merged_b.push(*b);
            merged_c.push(cells[i + 1]);
        }
    }
    Ok((merged_b, merged_c))
}

fn segment_bounds(seg: usize, breakpoints: &[f64], lo: f64, hi: f64) -> (f64, f64) {
    let a = if seg == 0 { lo } else { breakpoints[seg - 1] };
    let b = if seg == breakpoints.len() { hi } else { breakpoints[seg] };
    (a, b)
}

fn refine_switches(
    xl: f64,
    wl: usize,
    xr: f64,
    wr: usize,
    winner: &impl Fn(f64) -> Result<usize>,
    emit: &mut impl FnMut(f64, usize),
) -> Result<()> {
    if xr - xl <= BISECT_TOL {
        emit(0.5 * (xl + xr), wr);
        return Ok(());
    }
    let mid = 0.5 * (xl + xr);
    let wm = winner(mid)?;
    if wm == wl {
        refine_switches(mid, wl, xr, wr, winner, emit)
    } else if wm == wr {
        refine_switches(xl, wl, mid, wr, winner, emit)
    } else {
        refine_switches(xl, wl, mid, wm, winner, emit)?;
        refine_switches(mid, wm, xr, wr, winner, emit)
    }
}

// ---------------------------------------------------------------------------
// Induced pmf
// ---------------------------------------------------------------------------

/// Message distribution matrix: `q[cell][state] = P_state(message = cell)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InducedPmf {
    q: Vec<Vec<f64>>,
}

impl InducedPmf {
    pub fn new(q: Vec<Vec<f64>>) -> Result<Self> {
        let states = q.first().map(|r| r.len()).unwrap_or(0);
        if states == 0 {
            return Err(Error::validation("q", "empty pmf matrix"));
        }
        for m in 0..states {
            let col: f64 = q.iter().map(|row| row[m]).sum();
            if (col - 1.0).abs() > PMF_TOL {
                return Err(Error::Numerical(format!(
                    "induced pmf column {m} sums to {col}, expected 1"
                )));
            }
            if q.iter().any(|row| row[m] < -PMF_TOL) {
                return Err(Error::Numerical(format!("induced pmf column {m} has negative mass")));
            }
        }
        Ok(InducedPmf { q })
    }

    pub fn alphabet_size(&self) -> usize {
        self.q.len()
    }

    pub fn num_states(&self) -> usize {
        self.q[0].len()
    }

    pub fn cell_prob(&self, cell: usize, state: usize) -> f64 {
        self.q[cell][state]
    }

    pub fn column(&self, state: usize) -> Vec<f64> {
        self.q.iter().map(|row| row[state]).collect()
    }

    pub fn matrix(&self) -> &[Vec<f64>] {
        &self.q
    }

    /// K-L divergence between two state columns.
    pub fn kl(&self, m: usize, mp: usize) -> f64 {
        let p: Vec<f64> = self.column(m).iter().map(|v| v.max(0.0)).collect();
        let q: Vec<f64> = self.column(mp).iter().map(|v| v.max(0.0)).collect();
        discrete_kl(&p, &q)
    }
}

// ---------------------------------------------------------------------------
// Quantizer vectors and randomization
// ---------------------------------------------------------------------------

/// One deterministic quantizer per sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantizerVector {
    per_sensor: Vec<DeterministicQuantizer>,
}

impl QuantizerVector {
    pub fn new(per_sensor: Vec<DeterministicQuantizer>) -> Result<Self> {
        if per_sensor.is_empty() {
            return Err(Error::validation("per_sensor", "need at least one sensor"));
        }
        Ok(QuantizerVector { per_sensor })
    }

    pub fn single(q: DeterministicQuantizer) -> Self {
        QuantizerVector { per_sensor: vec![q] }
    }

    /// The same quantizer replicated across `k` sensors.
    pub fn replicated(q: DeterministicQuantizer, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::validation("k", "need at least one sensor"));
        }
        Ok(QuantizerVector { per_sensor: vec![q; k] })
    }

    pub fn num_sensors(&self) -> usize {
        self.per_sensor.len()
    }

    pub fn sensor(&self, k: usize) -> &DeterministicQuantizer {
        &self.per_sensor[k]
    }

    pub fn sensors(&self) -> &[DeterministicQuantizer] {
        &self.per_sensor
    }

    pub fn check_compatible(&self, hs: &HypothesisSet) -> Result<()> {
        if self.per_sensor.len() != hs.num_sensors() {
            return Err(Error::validation(
                "per_sensor",
                format!(
                    "quantizer vector has {} sensors, hypothesis set has {}",
                    self.per_sensor.len(),
                    hs.num_sensors()
                ),
            ));
        }
        Ok(())
    }

    pub fn induced_pmfs(&self, hs: &HypothesisSet) -> Result<Vec<InducedPmf>> {
        self.check_compatible(hs)?;
        (0..hs.num_sensors()).map(|k| self.per_sensor[k].induced_pmf(hs, k)).collect()
    }
}

/// Finite probability mixture over deterministic quantizer vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizedQuantizer {
    components: Vec<QuantizerVector>,
    weights: Vec<f64>,
}

impl RandomizedQuantizer {
    pub fn new(components: Vec<QuantizerVector>, weights: Vec<f64>) -> Result<Self> {
        if components.is_empty() {
            return Err(Error::validation("components", "need at least one component"));
        }
        if components.len() != weights.len() {
            return Err(Error::validation("weights", "one weight per component"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::validation("weights", "must be nonnegative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SUM_TOL {
            return Err(Error::validation("weights", format!("must sum to 1, got {sum}")));
        }
        let sensors = components[0].num_sensors();
        if components.iter().any(|c| c.num_sensors() != sensors) {
            return Err(Error::validation("components", "sensor counts differ"));
        }
        Ok(RandomizedQuantizer { components, weights })
    }

    /// A deterministic quantizer as the single-component mixture.
    pub fn deterministic(qv: QuantizerVector) -> Self {
        RandomizedQuantizer { components: vec![qv], weights: vec![1.0] }
    }

    pub fn components(&self) -> &[QuantizerVector] {
        &self.components
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn num_components(&self) -> usize {
        self.components.len()
    }

    pub fn num_sensors(&self) -> usize {
        self.components[0].num_sensors()
    }

    pub fn is_deterministic(&self) -> bool {
        self.components.len() == 1
    }
}

// ---------------------------------------------------------------------------
// Divergences
// ---------------------------------------------------------------------------

/// Competitor set used when taking the minimum divergence from a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CompetitorScope {
    /// Every other state.
    All,
    /// Only states outside the reference state's composite group.
    OutsideGroup,
}

impl CompetitorScope {
    pub fn competitors(&self, hs: &HypothesisSet, m: usize) -> Vec<usize> {
        match self {
            CompetitorScope::All => (0..hs.num_states()).filter(|mp| *mp != m).collect(),
            CompetitorScope::OutsideGroup => (0..hs.num_states())
                .filter(|mp| hs.group_of(*mp) != hs.group_of(m))
                .collect(),
        }
    }
}

/// Divergence of the induced message distributions of one deterministic
/// quantizer at one sensor.
pub fn kl_det(
    q: &DeterministicQuantizer,
    hs: &HypothesisSet,
    m: usize,
    mp: usize,
    sensor: usize,
) -> Result<f64> {
    if m == mp {
        return Err(Error::InvalidArgument("kl_det requires m != m'".into()));
    }
    Ok(q.induced_pmf(hs, sensor)?.kl(m, mp))
}

/// Divergence of a quantizer vector: the sum of per-sensor divergences.
pub fn kl_det_vector(qv: &QuantizerVector, hs: &HypothesisSet, m: usize, mp: usize) -> Result<f64> {
    if m == mp {
        return Err(Error::InvalidArgument("kl_det_vector requires m != m'".into()));
    }
    qv.check_compatible(hs)?;
    let mut acc = 0.0;
    for k in 0..hs.num_sensors() {
        acc += qv.sensor(k).induced_pmf(hs, k)?.kl(m, mp);
    }
    Ok(acc)
}

/// Divergence of a randomized quantizer: the weighted average of its
/// components' divergences.
pub fn kl_randomized(
    rq: &RandomizedQuantizer,
    hs: &HypothesisSet,
    m: usize,
    mp: usize,
) -> Result<f64> {
    if m == mp {
        return Err(Error::InvalidArgument("kl_randomized requires m != m'".into()));
    }
    let mut acc = 0.0;
    for (qv, w) in rq.components().iter().zip(rq.weights()) {
        if *w == 0.0 {
            continue;
        }
        acc += w * kl_det_vector(qv, hs, m, mp)?;
    }
    Ok(acc)
}

/// Divergence of the weight-averaged message pmf (mixture first, divergence
/// second). For multiple sensors the mixture lives on the product alphabet.
pub fn kl_mixture_pmf(
    rq: &RandomizedQuantizer,
    hs: &HypothesisSet,
    m: usize,
    mp: usize,
) -> Result<f64> {
    if m == mp {
        return Err(Error::InvalidArgument("kl_mixture_pmf requires m != m'".into()));
    }
    let per_component: Vec<Vec<InducedPmf>> = rq
        .components()
        .iter()
        .map(|qv| qv.induced_pmfs(hs))
        .collect::<Result<_>>()?;
    let sizes: Vec<usize> =
        per_component[0].iter().map(|pmf| pmf.alphabet_size()).collect();
    let total: usize = sizes.iter().product();

    let joint = |state: usize| -> Vec<f64> {
        let mut out = vec![0.0; total];
        for (pmfs, w) in per_component.iter().zip(rq.weights()) {
            if *w == 0.0 {
                continue;
            }
            for (t, slot) in out.iter_mut().enumerate() {
                let mut idx = t;
                let mut p = *w;
                for (k, size) in sizes.iter().enumerate() {
                    p *= pmfs[k].cell_prob(idx % size, state);
                    idx /= size;
                }
                *slot += p;
            }
        }
        out
    };

    Ok(discrete_kl(&joint(m), &joint(mp)))
}

/// Least divergence from state `m` to its scoped competitors.
pub fn min_kl(
    rq: &RandomizedQuantizer,
    hs: &HypothesisSet,
    m: usize,
    scope: CompetitorScope,
) -> Result<f64> {
    let competitors = scope.competitors(hs, m);
    if competitors.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "state {m} has no competitors under the requested scope"
        )));
    }
    let mut best = f64::INFINITY;
    for mp in competitors {
        best = best.min(kl_randomized(rq, hs, m, mp)?);
    }
    Ok(best)
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
