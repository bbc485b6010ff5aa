//! Maximin quantizer design.
//!
//! For each state `m`, the goal is the (possibly randomized) quantizer
//! maximizing the least divergence from `m` to its competitors. The optimum
//! is a randomization of at most M-1 coefficient quantizers, which confines
//! the search to a parameter space of dimension O(M^2):
//!
//! 1. a certified shortcut: when the pairwise-optimal detector against one
//!    competitor already dominates every other pairwise divergence, it is
//!    the exact maximin quantizer and no search is needed;
//! 2. otherwise a two-phase search: a candidate pool (quasi-random
//!    coefficient directions, all pairwise detectors, and — on small
//!    discrete spaces — a complete enumeration of coefficient-arrangement
//!    regions) scored by an exact maximin weight assignment over every
//!    small support set, followed by a derivative-free polish of the
//!    surviving coefficients with the weight subproblem re-solved exactly
//!    at each trial point.
//!
//! The weight subproblem — maximize the minimum of linear functions over
//! the probability simplex — is solved by vertex enumeration, so all
//! nonconvexity is confined to the coefficient directions where multistart
//! is effective.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{DensitySpec, HypothesisSet, Observation};
use crate::quantizers::{
    kl_det_vector, min_kl, CompetitorScope, DeterministicQuantizer, InducedPmf, QuantizerVector,
    RandomizedQuantizer,
};

/// Stand-in for an infinite divergence inside the weight assignment.
const DIV_CLAMP: f64 = 1e12;

/// Index offset into the quasi-random sequence; the leading entries of a
/// Halton sequence are too regular to make useful directions.
const HALTON_SKIP: u64 = 31;

// ---------------------------------------------------------------------------
// Results
// ---------------------------------------------------------------------------

/// How a maximin result was certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Certificate {
    /// The dominance condition held for this competitor, so the pairwise
    /// detector is exactly maximin.
    DominanceShortcut { dominating_competitor: usize },
    /// Best value found by the pool-and-polish search; the trace records
    /// the objective after each improvement milestone.
    SearchOptimum { objective_trace: Vec<f64> },
    /// Produced by an exhaustive or restricted-family computation.
    Oracle,
}

/// A designed quantizer for one state together with its information number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaximinResult {
    pub state: usize,
    pub quantizer: RandomizedQuantizer,
    pub info_number: f64,
    pub certificate: Certificate,
}

impl MaximinResult {
    fn checked(
        state: usize,
        quantizer: RandomizedQuantizer,
        certificate: Certificate,
        hs: &HypothesisSet,
        scope: CompetitorScope,
    ) -> Result<Self> {
        let cap = (hs.num_states() - 1).max(1);
        if quantizer.num_components() > cap {
            return Err(Error::Numerical(format!(
                "maximin result uses {} components, cap is {cap}",
                quantizer.num_components()
            )));
        }
        let info_number = min_kl(&quantizer, hs, state, scope)?;
        Ok(MaximinResult { state, quantizer, info_number, certificate })
    }

    /// Threshold of the weight-dominant component, when it is a
    /// single-sensor two-segment detector.
    pub fn dominant_threshold(&self) -> Option<f64> {
        let weights = self.quantizer.weights();
        let mut best = 0;
        for (i, w) in weights.iter().enumerate() {
            if *w > weights[best] {
                best = i;
            }
        }
        self.quantizer.components()[best].sensor(0).as_threshold()
    }
}

/// Search parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SearchOptions {
    /// Quasi-random coefficient directions generated for the pool.
    pub pool_size: usize,
    /// Distinct support sets polished independently.
    pub restarts: usize,
    /// Stop polishing once a sweep improves the objective by less than this.
    pub tolerance: f64,
    /// Per-sensor message alphabet sizes; `None` means binary everywhere.
    pub alphabets: Option<Vec<usize>>,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions { pool_size: 512, restarts: 8, tolerance: 1e-7, alphabets: None }
    }
}

// ---------------------------------------------------------------------------
// Pairwise detectors
// ---------------------------------------------------------------------------

/// Pairwise-optimal binary quantizer and the divergence it attains.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseMlrq {
    pub quantizer: DeterministicQuantizer,
    pub divergence: f64,
    /// Set when the threshold objective showed more than one distinct local
    /// maximum; the returned quantizer is still the global best found.
    pub multistart_disagreement: bool,
}

/// Maximize the divergence of the induced binary message distributions of
/// state `mp` from state `m` at one sensor.
///
/// Continuous (Gaussian) sensors search the threshold family `I(X >= l)` by
/// a grid scan plus golden-section refinement of every local maximum;
/// discrete sensors evaluate every cut of the likelihood-ratio order.
pub fn pairwise_mlrq(
    hs: &HypothesisSet,
    m: usize,
    mp: usize,
    sensor: usize,
) -> Result<PairwiseMlrq> {
    if m == mp {
        return Err(Error::InvalidArgument("pairwise_mlrq requires m != m'".into()));
    }
    if hs.density(m, sensor).is_discrete() {
        return discrete_mlrq(hs, m, mp, sensor);
    }

    let (lo, hi) = scan_window(&hs.sensor_column(sensor))?;
    let objective = |lambda: f64| threshold_divergence(hs, m, mp, sensor, lambda);

    const GRID: usize = 512;
    let step = (hi - lo) / (GRID - 1) as f64;
    let values: Vec<f64> = (0..GRID).map(|i| objective(lo + step * i as f64)).collect();

    let mut maxima: Vec<(f64, f64)> = Vec::new();
    for i in 0..GRID {
        let left = if i == 0 { f64::NEG_INFINITY } else { values[i - 1] };
        let right = if i == GRID - 1 { f64::NEG_INFINITY } else { values[i + 1] };
        if values[i] >= left && values[i] >= right {
            let a = lo + step * i.saturating_sub(1) as f64;
            let b = (lo + step * (i + 1) as f64).min(hi);
            maxima.push(golden_section_max(&objective, a, b, 1e-8));
        }
    }
    maxima.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    let (best_lambda, best_value) = maxima[0];
    // Distinct significant peaks mean the family is genuinely multimodal;
    // flat tail plateaus and re-refinements of the same peak do not count.
    let mut peaks: Vec<(f64, f64)> = Vec::new();
    for &(lam, val) in &maxima {
        if val <= 1e-9 || val < best_value * 1e-3 {
            continue;
        }
        if peaks.iter().all(|(pl, _)| (pl - lam).abs() > 1e-4) {
            peaks.push((lam, val));
        }
    }
    let disagreement = peaks.len() > 1;

    Ok(PairwiseMlrq {
        quantizer: DeterministicQuantizer::threshold(best_lambda),
        divergence: best_value,
        multistart_disagreement: disagreement,
    })
}

/// Divergence of the binary detector `I(X >= lambda)` between two states.
/// Each cell's mass is computed in its own tail so neither probability ever
/// cancels to zero spuriously.
fn threshold_divergence(hs: &HypothesisSet, m: usize, mp: usize, sensor: usize, lambda: f64) -> f64 {
    let cell = |state: usize, lo: f64, hi: f64| {
        hs.density(state, sensor).interval_mass(lo, hi).unwrap_or(f64::NAN)
    };
    let term = |a: f64, b: f64| {
        if a == 0.0 {
            0.0
        } else if b == 0.0 {
            f64::INFINITY
        } else {
            a * (a / b).ln()
        }
    };
    term(
        cell(m, f64::NEG_INFINITY, lambda),
        cell(mp, f64::NEG_INFINITY, lambda),
    ) + term(
        cell(m, lambda, f64::INFINITY),
        cell(mp, lambda, f64::INFINITY),
    )
}

fn discrete_mlrq(hs: &HypothesisSet, m: usize, mp: usize, sensor: usize) -> Result<PairwiseMlrq> {
    let column = hs.sensor_column(sensor);
    let support = column[0]
        .support_size()
        .ok_or_else(|| Error::DomainMismatch("discrete sensor expected".into()))?;
    let ratio = |v: usize| -> Result<f64> {
        let pm = column[m].pdf(&Observation::Discrete(v))?;
        let pq = column[mp].pdf(&Observation::Discrete(v))?;
        if pm == 0.0 && pq == 0.0 {
            return Ok(1.0);
        }
        Ok(pq / pm.max(f64::MIN_POSITIVE))
    };
    let mut order: Vec<usize> = (0..support).collect();
    let ratios: Vec<f64> = (0..support).map(ratio).collect::<Result<_>>()?;
    order.sort_by(|a, b| ratios[*a].total_cmp(&ratios[*b]).then(a.cmp(b)));

    let mut best: Option<(DeterministicQuantizer, f64)> = None;
    for cut in 0..=support {
        let mut cells = vec![0usize; support];
        for &v in &order[cut..] {
            cells[v] = 1;
        }
        let q = DeterministicQuantizer::cell_map(2, cells)?;
        let d = q.induced_pmf(hs, sensor)?.kl(m, mp);
        if best.as_ref().map_or(true, |(_, bd)| d > *bd) {
            best = Some((q, d));
        }
    }
    let (quantizer, divergence) = best.expect("at least one cut");
    Ok(PairwiseMlrq { quantizer, divergence, multistart_disagreement: false })
}

fn scan_window(column: &[&DensitySpec]) -> Result<(f64, f64)> {
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
                return Err(Error::DomainMismatch("continuous sensor expected".into()));
            }
        }
    }
    Ok((mu_min - 10.0 * sigma_max, mu_max + 10.0 * sigma_max))
}

/// Golden-section maximization on `[a, b]`; returns `(x, f(x))`.
fn golden_section_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64, xtol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = b - INV_PHI * (b - a);
    let mut x2 = a + INV_PHI * (b - a);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while b - a > xtol {
        if f1 > f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - INV_PHI * (b - a);
            f1 = f(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + INV_PHI * (b - a);
            f2 = f(x2);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

// ---------------------------------------------------------------------------
// Dominance shortcut
// ---------------------------------------------------------------------------

/// Try the dominance shortcut: build the pairwise detector vector against
/// each competitor in turn and return it as the certified maximin quantizer
/// when its divergence toward every other competitor is at least as large.
/// Absence is a value, not an error.
pub fn dominance_shortcut(
    hs: &HypothesisSet,
    m: usize,
    scope: CompetitorScope,
) -> Result<Option<MaximinResult>> {
    let competitors = scope.competitors(hs, m);
    if competitors.is_empty() {
        return Err(Error::InvalidArgument(format!("state {m} has no competitors")));
    }
    for &mp in &competitors {
        let per_sensor: Vec<DeterministicQuantizer> = (0..hs.num_sensors())
            .map(|k| Ok(pairwise_mlrq(hs, m, mp, k)?.quantizer))
            .collect::<Result<_>>()?;
        let qv = QuantizerVector::new(per_sensor)?;
        let base = kl_det_vector(&qv, hs, m, mp)?;
        let dominated = competitors.iter().all(|&other| {
            other == mp
                || kl_det_vector(&qv, hs, m, other).map_or(false, |d| d >= base - 1e-12)
        });
        if dominated {
            let rq = RandomizedQuantizer::deterministic(qv);
            return Ok(Some(MaximinResult::checked(
                m,
                rq,
                Certificate::DominanceShortcut { dominating_competitor: mp },
                hs,
                scope,
            )?));
        }
    }
    Ok(None)
}

// ---------------------------------------------------------------------------
// Candidate parameterization
// ---------------------------------------------------------------------------

/// Coefficients for one sensor's quantizer: binary quantizers carry the
/// defining vector, larger alphabets the full cell-score matrix.
#[derive(Debug, Clone)]
enum UlqParam {
    Binary(Vec<f64>),
    Matrix { rows: usize, flat: Vec<f64> },
}

impl UlqParam {
    fn len(&self) -> usize {
        match self {
            UlqParam::Binary(a) => a.len(),
            UlqParam::Matrix { flat, .. } => flat.len(),
        }
    }

    fn coord(&self, i: usize) -> f64 {
        match self {
            UlqParam::Binary(a) => a[i],
            UlqParam::Matrix { flat, .. } => flat[i],
        }
    }

    fn set_coord(&mut self, i: usize, v: f64) {
        match self {
            UlqParam::Binary(a) => a[i] = v,
            UlqParam::Matrix { flat, .. } => flat[i] = v,
        }
    }

    fn renormalize(&mut self) {
        let coords: &mut Vec<f64> = match self {
            UlqParam::Binary(a) => a,
            UlqParam::Matrix { flat, .. } => flat,
        };
        let norm: f64 = coords.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            for v in coords.iter_mut() {
                *v /= norm;
            }
        }
    }

    fn build(&self) -> Result<DeterministicQuantizer> {
        match self {
            UlqParam::Binary(a) => DeterministicQuantizer::binary_ulq(a),
            UlqParam::Matrix { rows, flat } => {
                let m = flat.len() / rows;
                let coeffs: Vec<Vec<f64>> =
                    flat.chunks(m).map(|chunk| chunk.to_vec()).collect();
                DeterministicQuantizer::ulq_matrix(coeffs)
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Candidate {
    sensors: Vec<UlqParam>,
}

impl Candidate {
    fn build(&self) -> Result<QuantizerVector> {
        QuantizerVector::new(self.sensors.iter().map(|p| p.build()).collect::<Result<_>>()?)
    }

    fn param_len(&self) -> usize {
        self.sensors.iter().map(|p| p.len()).sum()
    }

    fn perturb(&self, i: usize, delta: f64) -> Candidate {
        let mut out = self.clone();
        let mut idx = i;
        for p in out.sensors.iter_mut() {
            if idx < p.len() {
                p.set_coord(idx, p.coord(idx) + delta);
                p.renormalize();
                return out;
            }
            idx -= p.len();
        }
        unreachable!("coordinate out of range")
    }
}

/// Divergence vector of a quantizer vector toward each competitor, with one
/// pmf conversion per sensor.
fn divergence_vector(
    qv: &QuantizerVector,
    hs: &HypothesisSet,
    m: usize,
    competitors: &[usize],
) -> Result<Vec<f64>> {
    let pmfs: Vec<InducedPmf> = qv.induced_pmfs(hs)?;
    Ok(competitors
        .iter()
        .map(|&mp| pmfs.iter().map(|p| p.kl(m, mp)).sum::<f64>().min(DIV_CLAMP))
        .collect())
}

// ---------------------------------------------------------------------------
// Exact maximin weight assignment (small LP)
// ---------------------------------------------------------------------------

/// Maximize `min_c sum_j p_j vectors[j][c]` over the probability simplex,
/// by enumerating basic feasible points. Exact for the small supports the
/// search uses (|support| <= 3).
fn maximin_weights(vectors: &[Vec<f64>]) -> (Vec<f64>, f64) {
    let s = vectors.len();
    let c = vectors[0].len();
    if s == 1 {
        let val = vectors[0].iter().copied().fold(f64::INFINITY, f64::min);
        return (vec![1.0], val);
    }

    // Variables z = (p_0..p_{s-1}, t); the simplex equality is always
    // active, and s further active constraints pin a vertex.
    let nvars = s + 1;
    let mut constraints: Vec<Vec<f64>> = Vec::with_capacity(c + s);
    for cc in 0..c {
        // sum_j p_j d_jc - t >= 0
        let mut row: Vec<f64> = (0..s).map(|j| vectors[j][cc]).collect();
        row.push(-1.0);
        constraints.push(row);
    }
    for j in 0..s {
        let mut row = vec![0.0; nvars];
        row[j] = 1.0;
        constraints.push(row); // p_j >= 0
    }
    let mut eq = vec![1.0; s];
    eq.push(0.0);

    let mut best: Option<(Vec<f64>, f64)> = None;
    let n_con = constraints.len();
    let mut scratch = vec![0usize; s];
    enumerate_combinations(n_con, s, &mut scratch, 0, 0, &mut |chosen| {
        let mut a = Vec::with_capacity(nvars);
        let mut b = Vec::with_capacity(nvars);
        a.push(eq.clone());
        b.push(1.0);
        for &ci in chosen {
            a.push(constraints[ci].clone());
            b.push(0.0);
        }
        if let Some(z) = solve_linear(a, b) {
            let t = z[s];
            if z[..s].iter().any(|v| *v < -1e-9) {
                return;
            }
            let feasible = constraints.iter().all(|row| {
                let lhs: f64 = row.iter().zip(&z).map(|(r, zv)| r * zv).sum();
                lhs >= -1e-9
            });
            if feasible && best.as_ref().map_or(true, |(_, bt)| t > *bt + 1e-15) {
                let mut p: Vec<f64> = z[..s].iter().map(|v| v.max(0.0)).collect();
                let sum: f64 = p.iter().sum();
                for v in p.iter_mut() {
                    *v /= sum;
                }
                best = Some((p, t));
            }
        }
    });

    best.unwrap_or_else(|| {
        // The uniform mixture is always feasible; fall back to it if every
        // candidate basis was numerically singular.
        let p = vec![1.0 / s as f64; s];
        let val = (0..c)
            .map(|cc| (0..s).map(|j| p[j] * vectors[j][cc]).sum::<f64>())
            .fold(f64::INFINITY, f64::min);
        (p, val)
    })
}

fn enumerate_combinations(
    n: usize,
    k: usize,
    scratch: &mut Vec<usize>,
    start: usize,
    depth: usize,
    visit: &mut impl FnMut(&[usize]),
) {
    if depth == k {
        visit(scratch);
        return;
    }
    for i in start..n {
        scratch[depth] = i;
        enumerate_combinations(n, k, scratch, i + 1, depth + 1, visit);
    }
}

/// Gaussian elimination with partial pivoting; `None` for singular systems.
fn solve_linear(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..n {
            if row == col {
                continue;
            }
            let factor = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= factor * a[col][k];
            }
            b[row] -= factor * b[col];
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

// ---------------------------------------------------------------------------
// Pool construction
// ---------------------------------------------------------------------------

fn sensor_param_shape(hs: &HypothesisSet, alphabets: &[usize], k: usize) -> (usize, usize) {
    let l = alphabets[k];
    if l == 2 {
        (1, hs.num_states())
    } else {
        (l, l * hs.num_states())
    }
}

fn build_pool(
    hs: &HypothesisSet,
    opts: &SearchOptions,
    alphabets: &[usize],
) -> Result<Vec<Candidate>> {
    let sensors = hs.num_sensors();
    let m_states = hs.num_states();
    let mut pool: Vec<Candidate> = Vec::new();

    // Quasi-random coefficient directions mapped through Box-Muller so the
    // normalized results cover the spheres uniformly. A fixed sequence keeps
    // results bit-for-bit reproducible.
    let dims: Vec<(usize, usize)> =
        (0..sensors).map(|k| sensor_param_shape(hs, alphabets, k)).collect();
    let total_dim: usize = dims.iter().map(|(_, len)| len).sum();
    let bases = prime_bases(total_dim + 1);
    for i in 0..opts.pool_size as u64 {
        let gauss = halton_gaussians(i + HALTON_SKIP, total_dim, &bases);
        let mut offset = 0;
        let mut sensor_params = Vec::with_capacity(sensors);
        for (rows, len) in &dims {
            let slice = gauss[offset..offset + len].to_vec();
            offset += len;
            let mut p = if *rows == 1 {
                UlqParam::Binary(slice)
            } else {
                UlqParam::Matrix { rows: *rows, flat: slice }
            };
            p.renormalize();
            sensor_params.push(p);
        }
        pool.push(Candidate { sensors: sensor_params });
    }

    // Pairwise detector seeds (binary alphabets only).
    if alphabets.iter().all(|l| *l == 2) {
        for i in 0..m_states {
            for j in 0..m_states {
                if i == j {
                    continue;
                }
                let seeds: Result<Vec<UlqParam>> = (0..sensors)
                    .map(|k| {
                        let mut p = UlqParam::Binary(mlrq_coefficients(hs, i, j, k, m_states)?);
                        p.renormalize();
                        Ok(p)
                    })
                    .collect();
                if let Ok(sensor_params) = seeds {
                    pool.push(Candidate { sensors: sensor_params });
                }
            }
        }
    }

    // On a small discrete single-sensor problem with three states, the
    // coefficient space splits into finitely many sign regions; seeding a
    // direction inside every region adjacent to each pair of support-point
    // normals makes the pool complete.
    if sensors == 1 && m_states == 3 && alphabets[0] == 2 {
        if let Some(support) = hs.density(0, 0).support_size() {
            let column = hs.sensor_column(0);
            let normals: Vec<[f64; 3]> = (0..support)
                .map(|v| {
                    let obs = Observation::Discrete(v);
                    Ok([column[0].pdf(&obs)?, column[1].pdf(&obs)?, column[2].pdf(&obs)?])
                })
                .collect::<Result<_>>()?;
            for v in 0..support {
                for w in (v + 1)..support {
                    let d0 = cross3(&normals[v], &normals[w]);
                    if norm3(&d0) < 1e-14 {
                        continue;
                    }
                    let nv = unit3(&normals[v]);
                    let nw = unit3(&normals[w]);
                    let du = unit3(&d0);
                    for s0 in [1.0f64, -1.0] {
                        for s1 in [1e-4f64, -1e-4] {
                            for s2 in [1e-4f64, -1e-4] {
                                let a = vec![
                                    s0 * du[0] + s1 * nv[0] + s2 * nw[0],
                                    s0 * du[1] + s1 * nv[1] + s2 * nw[1],
                                    s0 * du[2] + s1 * nv[2] + s2 * nw[2],
                                ];
                                let mut p = UlqParam::Binary(a);
                                p.renormalize();
                                pool.push(Candidate { sensors: vec![p] });
                            }
                        }
                    }
                }
            }
        }
    }

    Ok(pool)
}

/// Coefficients of the binary quantizer reproducing the (i, j) pairwise
/// detector's partition: cell 1 where `f_j > t f_i`.
fn mlrq_coefficients(
    hs: &HypothesisSet,
    i: usize,
    j: usize,
    sensor: usize,
    m_states: usize,
) -> Result<Vec<f64>> {
    let mlrq = pairwise_mlrq(hs, i, j, sensor)?;
    let mut a = vec![0.0; m_states];
    match mlrq.quantizer.as_threshold() {
        Some(lambda) => {
            let obs = Observation::Continuous(lambda);
            let fi = hs.density(i, sensor).pdf(&obs)?;
            let fj = hs.density(j, sensor).pdf(&obs)?;
            if fi <= 0.0 {
                return Err(Error::Numerical("vanishing density at detector threshold".into()));
            }
            a[j] = 1.0;
            a[i] = -fj / fi;
        }
        None => {
            // Discrete cut: separate the likelihood-ratio order at the cut.
            let column = hs.sensor_column(sensor);
            let support = column[0].support_size().unwrap_or(0);
            let mut lo: f64 = 0.0;
            let mut hi = f64::INFINITY;
            for v in 0..support {
                let obs = Observation::Discrete(v);
                let fi = column[i].pdf(&obs)?;
                let fj = column[j].pdf(&obs)?;
                if fi == 0.0 && fj == 0.0 {
                    continue;
                }
                let r = fj / fi.max(f64::MIN_POSITIVE);
                if mlrq.quantizer.quantize(&obs, hs, sensor)? == 1 {
                    hi = hi.min(r);
                } else {
                    lo = lo.max(r);
                }
            }
            let t = if hi.is_infinite() { lo + 1.0 } else { 0.5 * (lo + hi) };
            a[j] = 1.0;
            a[i] = -t;
        }
    }
    Ok(a)
}

fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: &[f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

fn unit3(a: &[f64; 3]) -> [f64; 3] {
    let n = norm3(a).max(f64::MIN_POSITIVE);
    [a[0] / n, a[1] / n, a[2] / n]
}

fn prime_bases(n: usize) -> Vec<u64> {
    let mut primes: Vec<u64> = Vec::with_capacity(n);
    let mut candidate = 2u64;
    while primes.len() < n {
        if primes.iter().all(|p| candidate % p != 0) {
            primes.push(candidate);
        }
        candidate += 1;
    }
    primes
}

fn halton(mut index: u64, base: u64) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Standard normals from a low-discrepancy point via Box-Muller.
fn halton_gaussians(index: u64, dim: usize, bases: &[u64]) -> Vec<f64> {
    let padded = dim + dim % 2;
    let u: Vec<f64> = (0..padded).map(|d| halton(index + 1, bases[d]).max(1e-12)).collect();
    let mut out = Vec::with_capacity(padded);
    for pair in u.chunks(2) {
        let r = (-2.0 * pair[0].ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * pair[1];
        out.push(r * theta.cos());
        out.push(r * theta.sin());
    }
    out.truncate(dim);
    out
}

// ---------------------------------------------------------------------------
// Search
// ---------------------------------------------------------------------------

/// Maximize the least divergence from state `m` over randomizations of at
/// most M-1 coefficient quantizers.
pub fn maximin_search(
    hs: &HypothesisSet,
    m: usize,
    opts: &SearchOptions,
    scope: CompetitorScope,
) -> Result<MaximinResult> {
    let competitors = scope.competitors(hs, m);
    if competitors.is_empty() {
        return Err(Error::InvalidArgument(format!("state {m} has no competitors")));
    }
    let alphabets = match &opts.alphabets {
        Some(a) => {
            if a.len() != hs.num_sensors() {
                return Err(Error::InvalidArgument(
                    "one alphabet size per sensor required".into(),
                ));
            }
            if a.iter().any(|l| *l < 2) {
                return Err(Error::InvalidArgument("alphabet sizes must be >= 2".into()));
            }
            a.clone()
        }
        None => vec![2; hs.num_sensors()],
    };

    let pool = build_pool(hs, opts, &alphabets)?;
    let evaluated: Vec<(Candidate, Vec<f64>)> = pool
        .into_par_iter()
        .filter_map(|cand| {
            let qv = cand.build().ok()?;
            let d = divergence_vector(&qv, hs, m, &competitors).ok()?;
            Some((cand, d))
        })
        .collect();
    if evaluated.is_empty() {
        return Err(Error::DegeneratePool("no evaluable candidates".into()));
    }

    let frontier = pareto_frontier(&evaluated);
    let support_cap = (hs.num_states() - 1).min(competitors.len()).max(1);
    let ranked = rank_support_sets(&evaluated, &frontier, support_cap, competitors.len());
    let best_value = ranked.first().map(|(_, v)| *v).unwrap_or(0.0);
    if best_value <= 1e-12 {
        return Err(Error::DegeneratePool(
            "every candidate leaves some competitor indistinguishable".into(),
        ));
    }

    let mut trace = Vec::new();
    let mut best: Option<(Vec<Candidate>, Vec<f64>, f64)> = None;
    for (subset, _) in ranked.into_iter().take(opts.restarts.max(1)) {
        let support: Vec<Candidate> =
            subset.iter().map(|&j| evaluated[j].0.clone()).collect();
        let polished = polish(support, hs, m, &competitors, opts.tolerance, &mut trace)?;
        if best.as_ref().map_or(true, |(_, _, bv)| polished.2 > *bv) {
            best = Some(polished);
        }
    }
    let (support, weights, value) = best.expect("at least one restart ran");
    trace.push(value);

    let rq = assemble(support, weights, hs)?;
    MaximinResult::checked(m, rq, Certificate::SearchOptimum { objective_trace: trace }, hs, scope)
}

fn pareto_frontier(evaluated: &[(Candidate, Vec<f64>)]) -> Vec<usize> {
    let n = evaluated.len();
    let mut keep = Vec::new();
    'outer: for j in 0..n {
        let dj = &evaluated[j].1;
        for k in 0..n {
            if k == j {
                continue;
            }
            let dk = &evaluated[k].1;
            let ge = dk.iter().zip(dj).all(|(a, b)| a >= b);
            let gt = dk.iter().zip(dj).any(|(a, b)| a > b);
            // Strictly dominated candidates never help a maximin mixture;
            // among exact duplicates keep the earliest.
            if (ge && gt) || (ge && !gt && k < j) {
                continue 'outer;
            }
        }
        keep.push(j);
    }
    keep
}

/// Rank support sets of size <= `cap` from the frontier by their exact
/// maximin weight-assignment value, best first. Near-duplicate supersets of
/// an already-ranked set are dropped so restarts explore distinct basins.
fn rank_support_sets(
    evaluated: &[(Candidate, Vec<f64>)],
    frontier: &[usize],
    cap: usize,
    n_competitors: usize,
) -> Vec<(Vec<usize>, f64)> {
    // Keep subset enumeration tractable: points with the best worst
    // coordinate are the ones a maximin mixture can actually use, plus the
    // per-coordinate champions so straddling mixtures stay available.
    const FRONTIER_CAP: usize = 96;
    let mut frontier: Vec<usize> = frontier.to_vec();
    if frontier.len() > FRONTIER_CAP {
        frontier.sort_by(|a, b| {
            let fa = evaluated[*a].1.iter().copied().fold(f64::INFINITY, f64::min);
            let fb = evaluated[*b].1.iter().copied().fold(f64::INFINITY, f64::min);
            fb.total_cmp(&fa).then(a.cmp(b))
        });
        let mut kept: Vec<usize> = frontier[..FRONTIER_CAP].to_vec();
        for c in 0..n_competitors {
            if let Some(&champ) = frontier.iter().max_by(|a, b| {
                evaluated[**a].1[c].total_cmp(&evaluated[**b].1[c]).then(b.cmp(a))
            }) {
                if !kept.contains(&champ) {
                    kept.push(champ);
                }
            }
        }
        frontier = kept;
        frontier.sort_unstable();
    }

    let mut ranked: Vec<(Vec<usize>, f64)> = Vec::new();
    let f = frontier.len();
    for size in 1..=cap.min(f) {
        let mut scratch = vec![0usize; size];
        enumerate_combinations(f, size, &mut scratch, 0, 0, &mut |chosen| {
            let subset: Vec<usize> = chosen.iter().map(|&i| frontier[i]).collect();
            let vectors: Vec<Vec<f64>> =
                subset.iter().map(|&j| evaluated[j].1.clone()).collect();
            let (_, value) = maximin_weights(&vectors);
            ranked.push((subset, value));
        });
    }
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut seen: Vec<Vec<usize>> = Vec::new();
    ranked.retain(|(subset, _)| {
        let redundant = seen.iter().any(|s| s.iter().all(|j| subset.contains(j)));
        if !redundant {
            seen.push(subset.clone());
        }
        !redundant
    });
    ranked
}

/// Coordinate-perturbation polish with shrinking steps; the weight
/// subproblem is re-solved exactly at every trial point.
fn polish(
    mut support: Vec<Candidate>,
    hs: &HypothesisSet,
    m: usize,
    competitors: &[usize],
    tolerance: f64,
    trace: &mut Vec<f64>,
) -> Result<(Vec<Candidate>, Vec<f64>, f64)> {
    let mut vectors: Vec<Vec<f64>> = support
        .iter()
        .map(|c| divergence_vector(&c.build()?, hs, m, competitors))
        .collect::<Result<_>>()?;
    let (mut weights, mut value) = maximin_weights(&vectors);
    trace.push(value);

    let steps = [0.3, 0.1, 0.03, 0.01, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5];
    for &step in &steps {
        for _sweep in 0..6 {
            let start = value;
            for ci in 0..support.len() {
                for coord in 0..support[ci].param_len() {
                    for sign in [1.0, -1.0] {
                        let trial = support[ci].perturb(coord, sign * step);
                        let Ok(qv) = trial.build() else { continue };
                        let Ok(d) = divergence_vector(&qv, hs, m, competitors) else {
                            continue;
                        };
                        let mut trial_vectors = vectors.clone();
                        trial_vectors[ci] = d;
                        let (w, v) = maximin_weights(&trial_vectors);
                        if v > value + 1e-15 {
                            support[ci] = trial;
                            vectors = trial_vectors;
                            weights = w;
                            value = v;
                        }
                    }
                }
            }
            if value - start < tolerance {
                break;
            }
            trace.push(value);
        }
    }
    Ok((support, weights, value))
}

/// Concretize the support, drop negligible weights, merge duplicate
/// components, and renormalize.
fn assemble(
    support: Vec<Candidate>,
    weights: Vec<f64>,
    hs: &HypothesisSet,
) -> Result<RandomizedQuantizer> {
    let mut comps: Vec<(QuantizerVector, Vec<InducedPmf>, f64)> = Vec::new();
    for (cand, w) in support.into_iter().zip(weights) {
        if w < 1e-9 {
            continue;
        }
        let qv = cand.build()?;
        let concrete = QuantizerVector::new(
            (0..hs.num_sensors())
                .map(|k| Ok(canonical_binary_labels(qv.sensor(k).concretize(hs, k)?)))
                .collect::<Result<_>>()?,
        )?;
        let pmfs = concrete.induced_pmfs(hs)?;
        if let Some(existing) = comps.iter_mut().find(|(_, ps, _)| pmfs_close(ps, &pmfs)) {
            existing.2 += w;
        } else {
            comps.push((concrete, pmfs, w));
        }
    }
    if comps.is_empty() {
        return Err(Error::Numerical("maximin mixture lost all components".into()));
    }
    let total: f64 = comps.iter().map(|(_, _, w)| *w).sum();
    let (components, weights): (Vec<QuantizerVector>, Vec<f64>) =
        comps.into_iter().map(|(qv, _, w)| (qv, w / total)).unzip();
    RandomizedQuantizer::new(components, weights)
}

/// Binary cell labels are arbitrary up to complement; fix the first segment
/// (or support point) to cell 0 so serialized designs read uniformly and
/// one-sided detectors expose their threshold.
fn canonical_binary_labels(q: DeterministicQuantizer) -> DeterministicQuantizer {
    use crate::quantizers::QuantizerRepr;
    if q.alphabet_size() != 2 {
        return q;
    }
    let flipped = match q.repr() {
        QuantizerRepr::IntervalUnion { breakpoints, cells } if cells[0] == 1 => {
            DeterministicQuantizer::new(
                2,
                QuantizerRepr::IntervalUnion {
                    breakpoints: breakpoints.clone(),
                    cells: cells.iter().map(|c| 1 - c).collect(),
                },
            )
        }
        QuantizerRepr::CellMap { cells } if cells[0] == 1 => {
            DeterministicQuantizer::cell_map(2, cells.iter().map(|c| 1 - c).collect())
        }
        _ => return q,
    };
    flipped.unwrap_or(q)
}

fn pmfs_close(a: &[InducedPmf], b: &[InducedPmf]) -> bool {
    a.len() == b.len()
        && a.iter().zip(b).all(|(x, y)| {
            x.alphabet_size() == y.alphabet_size()
                && x.matrix().iter().zip(y.matrix()).all(|(rx, ry)| {
                    rx.iter().zip(ry).all(|(px, py)| (px - py).abs() <= 1e-12)
                })
        })
}

// ---------------------------------------------------------------------------
// Pipeline and sensor replication
// ---------------------------------------------------------------------------

/// Design the maximin quantizer for one state: certified shortcut first,
/// full search otherwise; homogeneous multi-sensor problems are solved once
/// and replicated.
pub fn solve_state(
    hs: &HypothesisSet,
    m: usize,
    opts: &SearchOptions,
    scope: CompetitorScope,
) -> Result<MaximinResult> {
    if hs.num_sensors() > 1 && hs.is_homogeneous() {
        let single = hs.restrict_to_sensor(0)?;
        let mut single_opts = opts.clone();
        single_opts.alphabets = opts.alphabets.as_ref().map(|a| vec![a[0]]);
        let result = solve_state(&single, m, &single_opts, scope)?;
        return replicate_for_sensors(hs, &result, scope);
    }
    let binary = opts.alphabets.as_ref().map_or(true, |a| a.iter().all(|l| *l == 2));
    if binary {
        if let Some(result) = dominance_shortcut(hs, m, scope)? {
            return Ok(result);
        }
    }
    maximin_search(hs, m, opts, scope)
}

/// Design the maximin quantizer for every state.
pub fn solve_all_states(
    hs: &HypothesisSet,
    opts: &SearchOptions,
    scope: CompetitorScope,
) -> Result<Vec<MaximinResult>> {
    (0..hs.num_states()).map(|m| solve_state(hs, m, opts, scope)).collect()
}

/// Replicate a single-sensor design across the sensors of a homogeneous
/// multi-sensor problem; the information number scales by the sensor count.
pub fn replicate_for_sensors(
    hs: &HypothesisSet,
    single: &MaximinResult,
    scope: CompetitorScope,
) -> Result<MaximinResult> {
    let k = hs.num_sensors();
    if k == 1 {
        return MaximinResult::checked(
            single.state,
            single.quantizer.clone(),
            single.certificate.clone(),
            hs,
            scope,
        );
    }
    if !hs.is_homogeneous() {
        return Err(Error::InvalidArgument(
            "sensor replication requires identical densities across sensors; \
             run the joint search instead"
                .into(),
        ));
    }
    if single.quantizer.num_sensors() != 1 {
        return Err(Error::InvalidArgument(
            "replication expects a single-sensor design".into(),
        ));
    }
    let components: Vec<QuantizerVector> = single
        .quantizer
        .components()
        .iter()
        .map(|qv| QuantizerVector::replicated(qv.sensor(0).clone(), k))
        .collect::<Result<_>>()?;
    let rq = RandomizedQuantizer::new(components, single.quantizer.weights().to_vec())?;
    MaximinResult::checked(single.state, rq, single.certificate.clone(), hs, scope)
}

// ---------------------------------------------------------------------------
// Symmetric restricted family
// ---------------------------------------------------------------------------

/// The two binary quantizer shapes available in a symmetric, equally spaced
/// three-state Gaussian problem: one-sided detectors and interval detectors.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SymmetricUlqForm {
    Threshold(f64),
    Interval(f64, f64),
}

/// Construct the quantizer for a restricted-family shape.
pub fn symmetric_form_quantizer(form: SymmetricUlqForm) -> Result<DeterministicQuantizer> {
    match form {
        SymmetricUlqForm::Threshold(lambda) => Ok(DeterministicQuantizer::threshold(lambda)),
        SymmetricUlqForm::Interval(lo, hi) => DeterministicQuantizer::interval(lo, hi),
    }
}

/// Exact search over the restricted family (single sensor): a dense grid of
/// thresholds and intervals, local refinement of the best deterministic
/// shapes, and the exact mixture assignment over the pool.
pub fn restricted_symmetric_search(
    hs: &HypothesisSet,
    m: usize,
    scope: CompetitorScope,
) -> Result<MaximinResult> {
    if hs.num_sensors() != 1 {
        return Err(Error::InvalidArgument("restricted search is single-sensor".into()));
    }
    let competitors = scope.competitors(hs, m);
    if competitors.is_empty() {
        return Err(Error::InvalidArgument(format!("state {m} has no competitors")));
    }
    let (lo, hi) = scan_window(&hs.sensor_column(0))?;

    let eval = |q: &DeterministicQuantizer| -> Result<Vec<f64>> {
        let pmf = q.induced_pmf(hs, 0)?;
        Ok(competitors.iter().map(|&mp| pmf.kl(m, mp).min(DIV_CLAMP)).collect())
    };
    let min_of = |d: &[f64]| d.iter().copied().fold(f64::INFINITY, f64::min);

    let mut candidates: Vec<(DeterministicQuantizer, Vec<f64>)> = Vec::new();

    const TGRID: usize = 1201;
    let tstep = (hi - lo) / (TGRID - 1) as f64;
    for i in 0..TGRID {
        let q = DeterministicQuantizer::threshold(lo + tstep * i as f64);
        let d = eval(&q)?;
        candidates.push((q, d));
    }
    // Refine the best threshold neighborhoods on the min-divergence itself.
    let mut peaks: Vec<(usize, f64)> =
        candidates.iter().enumerate().map(|(i, (_, d))| (i, min_of(d))).collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1));
    for (idx, _) in peaks.into_iter().take(5) {
        let a = lo + tstep * idx.saturating_sub(1) as f64;
        let b = (lo + tstep * (idx + 1) as f64).min(hi);
        let f = |lam: f64| -> f64 {
            eval(&DeterministicQuantizer::threshold(lam))
                .map(|d| min_of(&d))
                .unwrap_or(f64::NEG_INFINITY)
        };
        let (lam, _) = golden_section_max(&f, a, b, 1e-10);
        let q = DeterministicQuantizer::threshold(lam);
        let d = eval(&q)?;
        candidates.push((q, d));
    }

    const IGRID: usize = 81;
    let istep = (hi - lo) / (IGRID - 1) as f64;
    let mut best_interval: Option<(f64, f64, f64)> = None;
    for i in 0..IGRID {
        for j in i..IGRID {
            let (a, b) = (lo + istep * i as f64, lo + istep * j as f64);
            let q = DeterministicQuantizer::interval(a, b)?;
            let d = eval(&q)?;
            let v = min_of(&d);
            if best_interval.map_or(true, |(_, _, bv)| v > bv) {
                best_interval = Some((a, b, v));
            }
            candidates.push((q, d));
        }
    }
    if let Some((mut a, mut b, mut v)) = best_interval {
        let mut step = istep;
        while step > 1e-9 {
            let mut improved = false;
            for (da, db) in [(step, 0.0), (-step, 0.0), (0.0, step), (0.0, -step)] {
                let (na, nb) = (a + da, b + db);
                if na > nb {
                    continue;
                }
                let q = DeterministicQuantizer::interval(na, nb)?;
                let d = eval(&q)?;
                let nv = min_of(&d);
                if nv > v {
                    a = na;
                    b = nb;
                    v = nv;
                    improved = true;
                }
            }
            if !improved {
                step *= 0.5;
            }
        }
        let q = DeterministicQuantizer::interval(a, b)?;
        let d = eval(&q)?;
        candidates.push((q, d));
    }

    let frontier = pareto_frontier_pairs(&candidates);
    let support_cap = (hs.num_states() - 1).min(competitors.len()).max(1);
    let mut best: Option<(Vec<usize>, Vec<f64>, f64)> = None;
    for size in 1..=support_cap.min(frontier.len()) {
        let mut scratch = vec![0usize; size];
        enumerate_combinations(frontier.len(), size, &mut scratch, 0, 0, &mut |chosen| {
            let subset: Vec<usize> = chosen.iter().map(|&i| frontier[i]).collect();
            let vectors: Vec<Vec<f64>> =
                subset.iter().map(|&j| candidates[j].1.clone()).collect();
            let (w, value) = maximin_weights(&vectors);
            if best.as_ref().map_or(true, |(_, _, bv)| value > *bv + 1e-15) {
                best = Some((subset, w, value));
            }
        });
    }
    let (subset, weights, _) = best
        .ok_or_else(|| Error::DegeneratePool("restricted family produced no candidates".into()))?;

    let mut components = Vec::new();
    let mut kept = Vec::new();
    for (&j, &w) in subset.iter().zip(&weights) {
        if w < 1e-9 {
            continue;
        }
        components.push(QuantizerVector::single(candidates[j].0.clone()));
        kept.push(w);
    }
    let total: f64 = kept.iter().sum();
    for w in kept.iter_mut() {
        *w /= total;
    }
    let rq = RandomizedQuantizer::new(components, kept)?;
    MaximinResult::checked(m, rq, Certificate::Oracle, hs, scope)
}

fn pareto_frontier_pairs(candidates: &[(DeterministicQuantizer, Vec<f64>)]) -> Vec<usize> {
    let n = candidates.len();
    let mut keep = Vec::new();
    'outer: for j in 0..n {
        let dj = &candidates[j].1;
        for k in 0..n {
            if k == j {
                continue;
            }
            let dk = &candidates[k].1;
            let ge = dk.iter().zip(dj).all(|(a, b)| a >= b);
            let gt = dk.iter().zip(dj).any(|(a, b)| a > b);
            if (ge && gt) || (ge && !gt && k < j) {
                continue 'outer;
            }
        }
        keep.push(j);
    }
    keep
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
