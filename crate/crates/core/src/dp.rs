//! Grid value iteration for the Bayes-optimal stopping rule on small networks.
//!
//! The posterior is tracked as `q = (q^0, …, q^L)`, where `q^n` is the
//! probability that exactly `n` sensors have changed. One slot moves `n`
//! sensors ahead to `n' ≥ n` with probability `e_n^{n'} (1 - ρ_{n'})`, and the
//! slot's messages are scored by the pattern-averaged likelihood of `n'`
//! changed sensors. The value function `J` is approximated on a rational
//! lattice over the simplex. Off-lattice arguments are read either by
//! piecewise-linear interpolation over the Freudenthal triangulation of the
//! lattice (the default) or from the nearest lattice point.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::model::{DensityPair, ModelParams};
use crate::quantizer::{induced_pmfs, MessagePmfPair, QuantizerSpec};
use crate::stats::{binomial_row, chain_coeffs, elementary_symmetric, mixed_symmetric, ChainCoeffs, SuffStats};
use crate::{Error, Result};

/// Largest network the decentralized solver accepts.
pub const MAX_DP_SENSORS: usize = 3;

/// How a grid function is read between lattice points.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Lookup {
    #[default]
    Linear,
    Nearest,
}

/// Points `q = i / m` with nonnegative integer `i` summing to `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimplexGrid {
    sensors: usize,
    resolution: usize,
    lookup: Lookup,
    points: Vec<Vec<u32>>,
    /// Dense map from `(i_0, …, i_{L-1})` to position in `points`.
    index: Vec<u32>,
}

impl SimplexGrid {
    pub fn new(sensors: usize, resolution: usize) -> Result<Self> {
        if sensors == 0 {
            return Err(Error::invalid("sensors", "need at least one sensor"));
        }
        if resolution < 2 {
            return Err(Error::invalid("resolution", "must be at least 2"));
        }
        let dims = sensors + 1;
        let stride = resolution + 1;
        let cells = stride
            .checked_pow(sensors as u32)
            .filter(|&c| c <= 1 << 26)
            .ok_or_else(|| Error::invalid("resolution", "grid too large"))?;
        let mut points = Vec::new();
        let mut index = alloc::vec![u32::MAX; cells];
        let mut current = alloc::vec![0u32; dims];
        enumerate(&mut current, 0, resolution as u32, &mut points);
        for (pos, p) in points.iter().enumerate() {
            index[Self::key_of(p, stride)] = pos as u32;
        }
        Ok(Self {
            sensors,
            resolution,
            lookup: Lookup::default(),
            points,
            index,
        })
    }

    fn key_of(point: &[u32], stride: usize) -> usize {
        point[..point.len() - 1]
            .iter()
            .fold(0, |acc, &i| acc * stride + i as usize)
    }

    pub fn with_lookup(mut self, lookup: Lookup) -> Self {
        self.lookup = lookup;
        self
    }

    pub fn lookup(&self) -> Lookup {
        self.lookup
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integer coordinates of point `pos`.
    pub fn indices(&self, pos: usize) -> &[u32] {
        &self.points[pos]
    }

    pub fn point(&self, pos: usize) -> Vec<f64> {
        let m = self.resolution as f64;
        self.points[pos].iter().map(|&i| i as f64 / m).collect()
    }

    pub fn q0(&self, pos: usize) -> f64 {
        self.points[pos][0] as f64 / self.resolution as f64
    }

    /// Position of a point given its integer coordinates.
    pub fn position(&self, indices: &[u32]) -> Option<usize> {
        if indices.len() != self.sensors + 1 || indices.iter().map(|&i| i as usize).sum::<usize>() != self.resolution {
            return None;
        }
        let p = self.index[Self::key_of(indices, self.resolution + 1)];
        (p != u32::MAX).then_some(p as usize)
    }

    /// Nearest lattice point in Euclidean distance: floor every coordinate,
    /// then hand the missing units to the largest remainders.
    pub fn nearest(&self, q: &[f64]) -> usize {
        let m = self.resolution as f64;
        let mut floors = [0u32; MAX_LOOKUP_DIMS];
        let mut rems = [0f64; MAX_LOOKUP_DIMS];
        let dims = self.sensors + 1;
        let mut total = 0u32;
        for n in 0..dims {
            let x = (q[n] * m).clamp(0.0, m);
            let f = libm::floor(x);
            floors[n] = f as u32;
            rems[n] = x - f;
            total += floors[n];
        }
        let mut deficit = (self.resolution as u32).saturating_sub(total);
        while deficit > 0 {
            let mut best = 0;
            for n in 1..dims {
                if rems[n] > rems[best] {
                    best = n;
                }
            }
            floors[best] += 1;
            rems[best] = -1.0;
            deficit -= 1;
        }
        // Rounding noise can leave the floors summing above m; trim the
        // coordinates that were closest to rounding down.
        let mut excess = floors[..dims]
            .iter()
            .sum::<u32>()
            .saturating_sub(self.resolution as u32);
        while excess > 0 {
            let n = (0..dims).rev().find(|&n| floors[n] > 0).expect("positive sum");
            floors[n] -= 1;
            excess -= 1;
        }
        let key = Self::key_of(&floors[..dims], self.resolution + 1);
        self.index[key] as usize
    }

    /// Lattice points and barycentric weights of the cell containing `q`.
    /// In the coordinates `y_j = m Σ_{n≥j} q^n`, `j = 1..L`, the simplex is
    /// `m ≥ y_1 ≥ … ≥ y_L ≥ 0` and the Freudenthal cells of the unit cube
    /// lattice tile it exactly. Zero weights are dropped.
    pub fn interpolate(&self, q: &[f64]) -> Vec<(usize, f64)> {
        let (cell, len) = self.cell(q);
        cell[..len].to_vec()
    }

    fn cell(&self, q: &[f64]) -> ([(usize, f64); MAX_LOOKUP_DIMS], usize) {
        let mut out = [(0usize, 0f64); MAX_LOOKUP_DIMS];
        let mut len = 0;
        let l = self.sensors;
        let m = self.resolution as f64;
        let total: f64 = q[..=l].iter().map(|v| v.max(0.0)).sum();
        let mut y = [0f64; MAX_LOOKUP_DIMS];
        let mut acc = 0.0;
        for j in (1..=l).rev() {
            acc += q[j].max(0.0) / total * m;
            y[j] = acc;
        }
        let mut upper = m;
        let mut base = [0u32; MAX_LOOKUP_DIMS];
        let mut frac = [0f64; MAX_LOOKUP_DIMS];
        let mut order = [0usize; MAX_LOOKUP_DIMS];
        for j in 1..=l {
            let mut v = y[j].clamp(0.0, upper);
            // Lattice points should come back as themselves.
            let r = libm::round(v);
            if (v - r).abs() < 1e-9 {
                v = r;
            }
            upper = v;
            let f = libm::floor(v);
            base[j] = f as u32;
            frac[j] = v - f;
            order[j - 1] = j;
        }
        order[..l].sort_by(|&a, &b| frac[b].total_cmp(&frac[a]));
        let mut vertex = base;
        let mut coords = [0u32; MAX_LOOKUP_DIMS];
        for k in 0..=l {
            if k > 0 {
                vertex[order[k - 1]] += 1;
            }
            let hi = if k == 0 { 1.0 } else { frac[order[k - 1]] };
            let lo = if k == l { 0.0 } else { frac[order[k]] };
            let w = hi - lo;
            if !(w > 0.0) {
                continue;
            }
            coords[0] = self.resolution as u32 - vertex[1];
            for n in 1..=l {
                coords[n] = vertex[n] - if n < l { vertex[n + 1] } else { 0 };
            }
            let key = Self::key_of(&coords[..=l], self.resolution + 1);
            out[len] = (self.index[key] as usize, w);
            len += 1;
        }
        (out, len)
    }

    /// Reads `values` (one per lattice point) at `q` using this grid's lookup.
    pub fn evaluate(&self, values: &[f64], q: &[f64]) -> f64 {
        match self.lookup {
            Lookup::Nearest => values[self.nearest(q)],
            Lookup::Linear => {
                let (cell, len) = self.cell(q);
                cell[..len].iter().map(|&(pos, w)| values[pos] * w).sum()
            }
        }
    }
}

const MAX_LOOKUP_DIMS: usize = 16;

fn enumerate(current: &mut Vec<u32>, pos: usize, remaining: u32, out: &mut Vec<Vec<u32>>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(current.clone());
        return;
    }
    for i in 0..=remaining {
        current[pos] = i;
        enumerate(current, pos + 1, remaining - i, out);
    }
}

/// `q^n = ρ p^n / (1 + ρ Σ_{m≥1} p^m)`, `q^0 = 1 / (1 + ρ Σ_{m≥1} p^m)`.
pub fn q_from_p(p: &SuffStats, rho: f64) -> Vec<f64> {
    let tail = p.tail_sum();
    let norm = 1.0 + rho * tail;
    if !norm.is_finite() {
        // All mass on the changed states; split it as the tail does.
        let log_tail = p.stopping_stat();
        let mut q: Vec<f64> = p.logp().iter().map(|&l| libm::exp(l - log_tail)).collect();
        q[0] = 0.0;
        return q;
    }
    let mut q: Vec<f64> = (0..p.logp().len()).map(|n| rho * p.p(n) / norm).collect();
    q[0] = 1.0 / norm;
    q
}

/// `p^n = q^n / (ρ q^0)`; undefined on the `q^0 = 0` face.
pub fn p_from_q(q: &[f64], rho: f64) -> Result<SuffStats> {
    if !(q[0] > 0.0) {
        return Err(Error::invalid("q", "q^0 = 0 has no finite sufficient statistic"));
    }
    let scale = libm::log(rho * q[0]);
    let mut logp: Vec<f64> = q.iter().map(|&v| libm::log(v) - scale).collect();
    logp[0] = -libm::log(rho);
    Ok(SuffStats::from_log(logp))
}

/// Probability of moving from `m` to `n` changed sensors in one slot.
fn transitions(coeffs: &ChainCoeffs) -> Vec<Vec<f64>> {
    let size = coeffs.sensors() + 1;
    let rc = coeffs.rho_chain();
    (0..size)
        .map(|m| {
            (0..size)
                .map(|n| if n < m { 0.0 } else { coeffs.e(m, n) * (1.0 - rc[n]) })
                .collect()
        })
        .collect()
}

/// `w^n = Σ_m q^m T(m, n)`: the prior of `n` changed sensors after one slot.
fn predict(q: &[f64], trans: &[Vec<f64>]) -> Vec<f64> {
    let size = q.len();
    (0..size).map(|n| (0..=n).map(|m| q[m] * trans[m][n]).sum()).collect()
}

/// Pattern-averaged likelihood of one message tuple for every `n` changed
/// sensors: the `t^n` coefficient of `Π_ℓ (P0(u_ℓ) + t P1(u_ℓ))` over `C(L, n)`.
fn tuple_likelihoods(pmfs: &MessagePmfPair, sensors: usize) -> Vec<Vec<f64>> {
    let alphabet = pmfs.alphabet_size();
    let count = alphabet.pow(sensors as u32);
    let binom = binomial_row(sensors);
    (0..count)
        .map(|mut code| {
            let (mut a, mut b) = (Vec::with_capacity(sensors), Vec::with_capacity(sensors));
            for _ in 0..sensors {
                let u = code % alphabet;
                code /= alphabet;
                a.push(pmfs.p0[u]);
                b.push(pmfs.p1[u]);
            }
            mixed_symmetric(&a, &b).iter().zip(&binom).map(|(c, n)| c / n).collect()
        })
        .collect()
}

/// Evaluates `B` at the posterior after one slot, for every outcome, and
/// integrates against the outcome probabilities.
fn integrate(
    b: &[f64],
    grid: &SimplexGrid,
    w: &[f64],
    outcomes: &[Vec<f64>],
    weight: impl Fn(usize, f64) -> f64,
) -> Result<f64> {
    let mut total = 0.0;
    let mut next = alloc::vec![0.0; w.len()];
    for (i, lik) in outcomes.iter().enumerate() {
        let mut h = 0.0;
        for n in 0..w.len() {
            next[n] = w[n] * lik[n];
            h += next[n];
        }
        if !(h > 0.0) {
            return Err(Error::DegenerateQuantizer);
        }
        next.iter_mut().for_each(|g| *g /= h);
        total += grid.evaluate(b, &next) * weight(i, h);
    }
    Ok(total)
}

/// `K_B(φ, q) = Σ_u B(g/h) h` for a quantizer `φ` applied at every sensor;
/// `b` holds `B` on the grid.
pub fn k_b(b: &[f64], grid: &SimplexGrid, spec: &QuantizerSpec, q: &[f64], params: &ModelParams) -> Result<f64> {
    let pmfs = induced_pmfs(spec, &params.densities())?;
    let coeffs = chain_coeffs(params.sensors(), params.rho(), params.lambda());
    let w = predict(q, &transitions(&coeffs));
    integrate(b, grid, &w, &tuple_likelihoods(&pmfs, params.sensors()), |_, h| h)
}

/// How the fusion center sees each slot in the DP.
#[derive(Debug, Clone, PartialEq)]
pub enum DpInformation {
    /// Binary quantizers chosen per grid point among these observation-domain
    /// thresholds, identical at all sensors.
    Decentralized { candidates: Vec<f64> },
    /// Raw measurements; the one-slot expectation is a stratified Monte Carlo
    /// average over `samples` standard normal vectors drawn from `seed`.
    Centralized { samples: usize, seed: u64 },
}

/// 17 thresholds spaced evenly over `μ/2 ± 2.5`, i.e. `[-2, 3]` for `μ = 1`.
pub fn default_threshold_candidates(densities: &DensityPair) -> Vec<f64> {
    let centre = densities.mu() / 2.0;
    (0..17).map(|i| centre - 2.5 + 5.0 * i as f64 / 16.0).collect()
}

/// Precomputed one-slot outcomes. For the decentralized case every entry is
/// a candidate with its message-tuple likelihoods; for the centralized case a
/// single entry holds, per stratum of changed-sensor count, the likelihood
/// vectors of the shifted common samples.
#[derive(Debug, Clone)]
struct Outcomes {
    trans: Vec<Vec<f64>>,
    kind: OutcomeKind,
}

#[derive(Debug, Clone)]
enum OutcomeKind {
    Decentralized {
        thresholds: Vec<f64>,
        tuples: Vec<Vec<Vec<f64>>>,
    },
    Centralized {
        strata: Vec<Vec<Vec<f64>>>,
    },
}

impl Outcomes {
    fn new(params: &ModelParams, info: &DpInformation) -> Result<Self> {
        let l = params.sensors();
        let densities = params.densities();
        let coeffs = chain_coeffs(l, params.rho(), params.lambda());
        let trans = transitions(&coeffs);
        let kind = match info {
            DpInformation::Decentralized { candidates } => {
                if l > MAX_DP_SENSORS {
                    return Err(Error::TooManySensors {
                        sensors: l,
                        limit: MAX_DP_SENSORS,
                    });
                }
                if candidates.is_empty() {
                    return Err(Error::invalid("candidates", "need at least one threshold"));
                }
                let mut pmfs = Vec::new();
                for &t in candidates {
                    let spec = QuantizerSpec::from_observation_thresholds(&[t], &densities)?;
                    pmfs.push(induced_pmfs(&spec, &densities)?);
                }
                let tuples = pmfs.iter().map(|p| tuple_likelihoods(p, l)).collect();
                OutcomeKind::Decentralized {
                    thresholds: candidates.clone(),
                    tuples,
                }
            }
            DpInformation::Centralized { samples, seed } => {
                if *samples == 0 {
                    return Err(Error::invalid("samples", "need at least one sample"));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                let base: Vec<Vec<f64>> = (0..*samples)
                    .map(|_| (0..l).map(|_| StandardNormal.sample(&mut rng)).collect())
                    .collect();
                let binom = binomial_row(l);
                let mu = densities.mu();
                // By symmetry of the pattern-averaged likelihood, the changed
                // sensors can be taken to be the first `s`.
                let strata = (0..=l)
                    .map(|s| {
                        base.iter()
                            .map(|z| {
                                let r: Vec<f64> = z
                                    .iter()
                                    .enumerate()
                                    .map(|(i, &x)| densities.likelihood_ratio(if i < s { x + mu } else { x }))
                                    .collect();
                                elementary_symmetric(&r)
                                    .iter()
                                    .zip(&binom)
                                    .map(|(e, c)| e / c)
                                    .collect()
                            })
                            .collect()
                    })
                    .collect();
                OutcomeKind::Centralized { strata }
            }
        };
        Ok(Self { trans, kind })
    }

    /// `min_φ K_B(φ, q)` and the minimizing candidate.
    fn best_continuation(&self, b: &[f64], grid: &SimplexGrid, q: &[f64]) -> Result<(f64, Option<usize>)> {
        let w = predict(q, &self.trans);
        match &self.kind {
            OutcomeKind::Decentralized { tuples, .. } => {
                let mut best = (f64::INFINITY, None);
                for (j, outcomes) in tuples.iter().enumerate() {
                    let v = integrate(b, grid, &w, outcomes, |_, h| h)?;
                    if v < best.0 {
                        best = (v, Some(j));
                    }
                }
                Ok(best)
            }
            OutcomeKind::Centralized { strata } => {
                let mut total = 0.0;
                for (s, outcomes) in strata.iter().enumerate() {
                    if w[s] == 0.0 {
                        continue;
                    }
                    let per = w[s] / outcomes.len() as f64;
                    total += integrate(b, grid, &w, outcomes, |_, _| per)?;
                }
                Ok((total, None))
            }
        }
    }
}

/// Result of one application of the Bellman operator.
#[derive(Debug, Clone, PartialEq)]
pub struct OmegaResult {
    pub values: Vec<f64>,
    /// `min_φ K_B(φ, q)`.
    pub continuation: Vec<f64>,
    /// Minimizing threshold per grid point; `None` for centralized.
    pub argmin: Vec<Option<f64>>,
}

fn omega_with(b: &[f64], grid: &SimplexGrid, outcomes: &Outcomes, c: f64) -> Result<OmegaResult> {
    let mut values = Vec::with_capacity(grid.len());
    let mut continuation = Vec::with_capacity(grid.len());
    let mut argmin = Vec::with_capacity(grid.len());
    for pos in 0..grid.len() {
        let q = grid.point(pos);
        let (k, j) = if q[0] == 0.0 {
            // J vanishes on this face, so the continuation does too.
            (0.0, None)
        } else {
            outcomes.best_continuation(b, grid, &q)?
        };
        values.push(q[0].min(c * (1.0 - q[0]) + k));
        continuation.push(k);
        argmin.push(match (&outcomes.kind, j) {
            (OutcomeKind::Decentralized { thresholds, .. }, Some(j)) => Some(thresholds[j]),
            (OutcomeKind::Decentralized { thresholds, .. }, None) => Some(thresholds[0]),
            _ => None,
        });
    }
    Ok(OmegaResult {
        values,
        continuation,
        argmin,
    })
}

/// `(ωB)(q) = min{q^0, c(1 - q^0) + min_φ K_B(φ, q)}` at every grid point.
pub fn omega_map(
    b: &[f64],
    grid: &SimplexGrid,
    info: &DpInformation,
    params: &ModelParams,
    c: f64,
) -> Result<OmegaResult> {
    check_grid(grid, params, b)?;
    omega_with(b, grid, &Outcomes::new(params, info)?, c)
}

fn check_grid(grid: &SimplexGrid, params: &ModelParams, b: &[f64]) -> Result<()> {
    if grid.sensors() != params.sensors() {
        return Err(Error::invalid("grid", "grid dimension differs from the sensor count"));
    }
    if b.len() != grid.len() {
        return Err(Error::MalformedInput {
            expected: grid.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Converged value function.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub grid: SimplexGrid,
    pub j: Vec<f64>,
    pub a: Vec<f64>,
    /// Observation-domain threshold per grid point; `None` when centralized.
    pub phi_opt: Vec<Option<f64>>,
    pub iterations: usize,
    /// Sup-norm change of the last iteration.
    pub gap: f64,
    /// Largest pointwise increase between consecutive iterates (never
    /// positive for a monotone sequence).
    pub max_increase: f64,
}

impl ValueTable {
    /// `A` read at `q` with the grid's lookup.
    pub fn a_at(&self, q: &[f64]) -> f64 {
        self.grid.evaluate(&self.a, q)
    }

    /// Threshold of the nearest grid point.
    pub fn phi_at(&self, q: &[f64]) -> Option<f64> {
        self.phi_opt[self.grid.nearest(q)]
    }

    pub fn j_at(&self, q: &[f64]) -> f64 {
        self.grid.evaluate(&self.j, q)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueIterationOptions {
    pub cost: f64,
    pub epsilon: f64,
    pub max_iterations: usize,
}

impl ValueIterationOptions {
    pub fn new(cost: f64, epsilon: f64) -> Self {
        Self {
            cost,
            epsilon,
            max_iterations: 100_000,
        }
    }
}

/// Iterates `ω` from `f(q) = q^0` until the sup-norm change is at most
/// `epsilon`.
pub fn value_iterate(
    params: &ModelParams,
    grid: &SimplexGrid,
    info: &DpInformation,
    options: &ValueIterationOptions,
) -> Result<ValueTable> {
    if !(options.epsilon > 0.0) {
        return Err(Error::invalid("epsilon", "must be positive"));
    }
    if !(options.cost > 0.0) {
        return Err(Error::invalid("c", "delay cost must be positive"));
    }
    let outcomes = Outcomes::new(params, info)?;
    let mut j: Vec<f64> = (0..grid.len()).map(|pos| grid.q0(pos)).collect();
    check_grid(grid, params, &j)?;
    let mut max_increase = f64::NEG_INFINITY;
    for iteration in 1..=options.max_iterations {
        let next = omega_with(&j, grid, &outcomes, options.cost)?;
        let mut gap: f64 = 0.0;
        for (new, old) in next.values.iter().zip(&j) {
            gap = gap.max((new - old).abs());
            max_increase = max_increase.max(new - old);
        }
        j = next.values;
        if gap <= options.epsilon {
            // `A` and `φ` belong to the returned `J`.
            let last = omega_with(&j, grid, &outcomes, options.cost)?;
            return Ok(ValueTable {
                grid: grid.clone(),
                j,
                a: last.continuation,
                phi_opt: last.argmin,
                iterations: iteration,
                gap,
                max_increase,
            });
        }
        if iteration == options.max_iterations {
            return Err(Error::NotConverged {
                iterations: iteration,
                gap,
            });
        }
    }
    unreachable!("loop returns on the last iteration")
}

/// Whether `Σ_{m≥1} p^m ≥ (1 - Â)/(ρ(c + Â))`, with `Â` read at the
/// posterior of `p`.
pub fn dp_stop_check(p: &SuffStats, table: &ValueTable, c: f64, rho: f64) -> bool {
    let a = table.a_at(&q_from_p(p, rho));
    p.tail_sum() >= (1.0 - a) / (rho * (c + a))
}

/// Online stage of the DP rule: posterior tracking, per-slot quantizer
/// choice and the stopping test.
#[derive(Debug, Clone)]
pub struct DpPolicy {
    table: ValueTable,
    cost: f64,
    sensors: usize,
    trans: Vec<Vec<f64>>,
    densities: DensityPair,
    binom: Vec<f64>,
}

impl DpPolicy {
    pub fn new(table: ValueTable, params: &ModelParams, cost: f64) -> Result<Self> {
        if table.grid.sensors() != params.sensors() {
            return Err(Error::invalid("table", "grid dimension differs from the sensor count"));
        }
        let coeffs = chain_coeffs(params.sensors(), params.rho(), params.lambda());
        Ok(Self {
            table,
            cost,
            sensors: params.sensors(),
            trans: transitions(&coeffs),
            densities: params.densities(),
            binom: binomial_row(params.sensors()),
        })
    }

    pub fn table(&self) -> &ValueTable {
        &self.table
    }

    /// Posterior before any observation.
    pub fn initial(&self) -> Vec<f64> {
        let mut q = alloc::vec![0.0; self.sensors + 1];
        q[0] = 1.0;
        q
    }

    /// Quantizer to apply in the next slot, or `None` for raw measurements.
    pub fn quantizer(&self, q: &[f64]) -> Result<Option<QuantizerSpec>> {
        self.table
            .phi_at(q)
            .map(|t| QuantizerSpec::from_observation_thresholds(&[t], &self.densities))
            .transpose()
    }

    fn update_with(&self, q: &[f64], lik: &[f64]) -> Result<Vec<f64>> {
        let w = predict(q, &self.trans);
        let mut g: Vec<f64> = w.iter().zip(lik).map(|(w, l)| w * l).collect();
        let h: f64 = g.iter().sum();
        if !(h > 0.0) {
            return Err(Error::DegenerateQuantizer);
        }
        g.iter_mut().for_each(|v| *v /= h);
        Ok(g)
    }

    /// Posterior after receiving messages `u` produced by `spec`.
    pub fn update_symbols(&self, q: &[f64], spec: &QuantizerSpec, u: &[usize]) -> Result<Vec<f64>> {
        let pmfs = induced_pmfs(spec, &self.densities)?;
        let a: Vec<f64> = u.iter().map(|&s| pmfs.p0[s]).collect();
        let b: Vec<f64> = u.iter().map(|&s| pmfs.p1[s]).collect();
        let lik: Vec<f64> = mixed_symmetric(&a, &b)
            .iter()
            .zip(&self.binom)
            .map(|(c, n)| c / n)
            .collect();
        self.update_with(q, &lik)
    }

    /// Posterior after receiving raw measurements.
    pub fn update_measurements(&self, q: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let r: Vec<f64> = z.iter().map(|&x| self.densities.likelihood_ratio(x)).collect();
        let lik: Vec<f64> = elementary_symmetric(&r)
            .iter()
            .zip(&self.binom)
            .map(|(e, n)| e / n)
            .collect();
        self.update_with(q, &lik)
    }

    /// `q^0 ≤ c(1 - q^0) + Â(q)`.
    pub fn should_stop(&self, q: &[f64]) -> bool {
        q[0] <= self.cost * (1.0 - q[0]) + self.table.a_at(q)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::{delta_uniform, RatioVector};
    use rand::Rng;
    use std::vec::Vec;

    fn gauss() -> DensityPair {
        DensityPair::gaussian_shift(1.0).unwrap()
    }

    fn small() -> ModelParams {
        ModelParams::new(2, 0.3, 0.5, gauss()).unwrap()
    }

    fn binary(t: f64) -> QuantizerSpec {
        QuantizerSpec::from_observation_thresholds(&[t], &gauss()).unwrap()
    }

    fn decentralized() -> DpInformation {
        DpInformation::Decentralized {
            candidates: default_threshold_candidates(&gauss()),
        }
    }

    #[test]
    fn grid_enumeration_and_lookup() {
        let g = SimplexGrid::new(2, 20).unwrap();
        assert_eq!(g.len(), 231);
        for pos in 0..g.len() {
            let q = g.point(pos);
            assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(q.iter().all(|&v| v >= 0.0));
            assert_eq!(g.nearest(&q), pos);
            assert_eq!(g.position(g.indices(pos)), Some(pos));
        }
        assert_eq!(SimplexGrid::new(3, 10).unwrap().len(), 286);
        assert!(SimplexGrid::new(2, 1).is_err());
    }

    #[test]
    fn nearest_is_euclidean_nearest() {
        let g = SimplexGrid::new(3, 7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mut q: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            let dist = |pos: usize| g.point(pos).iter().zip(&q).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
            let brute = (0..g.len()).map(dist).fold(f64::INFINITY, f64::min);
            assert!((dist(g.nearest(&q)) - brute).abs() < 1e-12);
        }
        // The q^0 = 0 face maps onto itself.
        assert_eq!(g.indices(g.nearest(&[0.0, 0.3, 0.3, 0.4]))[0], 0);
    }

    #[test]
    fn linear_lookup_reproduces_affine_functions() {
        for (l, m) in [(1, 5), (2, 7), (3, 4)] {
            let g = SimplexGrid::new(l, m).unwrap();
            let coef: Vec<f64> = (0..=l).map(|n| 0.3 + 1.7 * n as f64 - 0.2 * (n * n) as f64).collect();
            let f = |q: &[f64]| q.iter().zip(&coef).map(|(a, b)| a * b).sum::<f64>();
            let values: Vec<f64> = (0..g.len()).map(|pos| f(&g.point(pos))).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(l as u64);
            for _ in 0..300 {
                let mut q: Vec<f64> = (0..=l).map(|_| rng.random_range(0.0..1.0)).collect();
                let s: f64 = q.iter().sum();
                q.iter_mut().for_each(|v| *v /= s);
                let cell = g.interpolate(&q);
                assert!(cell.len() <= l + 1);
                assert!((cell.iter().map(|c| c.1).sum::<f64>() - 1.0).abs() < 1e-12);
                // The weights recover the point itself.
                for n in 0..=l {
                    let back: f64 = cell.iter().map(|&(pos, w)| g.point(pos)[n] * w).sum();
                    assert!((back - q[n]).abs() < 1e-12);
                }
                assert!((g.evaluate(&values, &q) - f(&q)).abs() < 1e-12);
            }
            for pos in 0..g.len() {
                assert_eq!(g.interpolate(&g.point(pos)), vec![(pos, 1.0)]);
            }
        }
    }

    #[test]
    fn p_q_transform() {
        let rho = 0.01;
        let q = q_from_p(&SuffStats::initial(2, rho), rho);
        assert_eq!(q, std::vec![1.0, 0.0, 0.0]);
        let p = SuffStats::from_log(std::vec![100f64.ln(), (0.9f64 / 0.99).ln(), (0.1f64 / 0.99).ln()]);
        let q = q_from_p(&p, rho);
        assert!((q[0] - 1.0 / (1.0 + 0.01 * (1.0 / 0.99))).abs() < 1e-12);
        assert!((q[0] - 0.990_00).abs() < 1e-5);
        assert!((q[1] - 0.009_000_1).abs() < 1e-6);
        assert!((q[2] - 0.001_000_1).abs() < 1e-6);
        let back = p_from_q(&q, rho).unwrap();
        for n in 0..3 {
            assert!((back.p(n) - p.p(n)).abs() < 1e-12 * p.p(n).max(1.0));
        }
        assert!(p_from_q(&[0.0, 0.5, 0.5], rho).is_err());
    }

    #[test]
    fn k_b_constants_and_face() {
        let params = small();
        let grid = SimplexGrid::new(2, 20).unwrap();
        let spec = binary(0.5);
        let q = [0.6, 0.3, 0.1];
        let zero = std::vec![0.0; grid.len()];
        let one = std::vec![1.0; grid.len()];
        assert_eq!(k_b(&zero, &grid, &spec, &q, &params).unwrap(), 0.0);
        assert!((k_b(&one, &grid, &spec, &q, &params).unwrap() - 1.0).abs() < 1e-12);
        let j: Vec<f64> = (0..grid.len()).map(|p| grid.q0(p)).collect();
        assert_eq!(k_b(&j, &grid, &spec, &[0.0, 0.4, 0.6], &params).unwrap(), 0.0);
    }

    #[test]
    fn posterior_update_matches_p_recursion() {
        // The q-update is the normalized form of the p recursion.
        let params = ModelParams::new(3, 0.1, 0.4, gauss()).unwrap();
        let grid = SimplexGrid::new(3, 4).unwrap();
        let table = ValueTable {
            grid: grid.clone(),
            j: std::vec![0.0; grid.len()],
            a: std::vec![0.0; grid.len()],
            phi_opt: std::vec![None; grid.len()],
            iterations: 0,
            gap: 0.0,
            max_increase: 0.0,
        };
        let policy = DpPolicy::new(table, &params, 0.1).unwrap();
        let coeffs = chain_coeffs(3, 0.1, 0.4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut q = policy.initial();
        let mut p = SuffStats::initial(3, 0.1);
        for _ in 0..30 {
            let z: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..2.5)).collect();
            q = policy.update_measurements(&q, &z).unwrap();
            let r = RatioVector::new(z.iter().map(|&x| params.densities().likelihood_ratio(x)).collect()).unwrap();
            p.advance(&delta_uniform(&r), &coeffs).unwrap();
            let from_p = q_from_p(&p, 0.1);
            for n in 0..4 {
                assert!((from_p[n] - q[n]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn omega_properties() {
        let params = small();
        let grid = SimplexGrid::new(2, 20).unwrap();
        let f: Vec<f64> = (0..grid.len()).map(|p| grid.q0(p)).collect();
        let once = omega_map(&f, &grid, &decentralized(), &params, 0.05).unwrap();
        let twice = omega_map(&once.values, &grid, &decentralized(), &params, 0.05).unwrap();
        for pos in 0..grid.len() {
            assert!(once.values[pos] <= f[pos]);
            assert!(twice.values[pos] <= once.values[pos]);
            if grid.q0(pos) == 0.0 {
                assert_eq!(once.values[pos], 0.0);
            }
        }
    }

    #[test]
    fn value_iteration_decentralized() {
        let params = small();
        let grid = SimplexGrid::new(2, 20).unwrap();
        let eps = 1e-4;
        let table = value_iterate(&params, &grid, &decentralized(), &ValueIterationOptions::new(0.05, eps)).unwrap();
        assert!(table.gap <= eps);
        assert!(table.max_increase <= 0.0);
        for pos in 0..grid.len() {
            let q0 = grid.q0(pos);
            assert!(table.j[pos] >= 0.0 && table.j[pos] <= q0);
            if q0 == 0.0 {
                assert_eq!(table.j[pos], 0.0);
                assert_eq!(table.a[pos], 0.0);
            }
        }
        let again = omega_map(&table.j, &grid, &decentralized(), &params, 0.05).unwrap();
        let moved = again
            .values
            .iter()
            .zip(&table.j)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(moved <= 2.0 * eps);
        // Starting vertex: continue, since stopping there is a sure false alarm.
        let policy = DpPolicy::new(table, &params, 0.05).unwrap();
        assert!(!policy.should_stop(&policy.initial()));
        assert!(policy.should_stop(&[0.0, 0.0, 1.0]));
    }

    #[test]
    fn value_iteration_centralized_is_below_decentralized() {
        let params = small();
        // Coarser grids are too crude for the ordering to show.
        let grid = SimplexGrid::new(2, 20).unwrap();
        let opts = ValueIterationOptions::new(0.05, 1e-4);
        let central = value_iterate(
            &params,
            &grid,
            &DpInformation::Centralized { samples: 1000, seed: 3 },
            &opts,
        )
        .unwrap();
        let dec = value_iterate(&params, &grid, &decentralized(), &opts).unwrap();
        let vertex = grid.position(&[20, 0, 0]).unwrap();
        assert!(central.phi_opt.iter().all(Option::is_none));
        assert!(
            central.j[vertex] < dec.j[vertex],
            "{} vs {}",
            central.j[vertex],
            dec.j[vertex]
        );
    }

    #[test]
    fn stop_check_forms_agree() {
        let params = small();
        let grid = SimplexGrid::new(2, 20).unwrap();
        let table = value_iterate(
            &params,
            &grid,
            &decentralized(),
            &ValueIterationOptions::new(0.05, 1e-4),
        )
        .unwrap();
        let rho = params.rho();
        assert!(!dp_stop_check(&SuffStats::initial(2, rho), &table, 0.05, rho));
        let policy = DpPolicy::new(table.clone(), &params, 0.05).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..300 {
            let mut q: Vec<f64> = (0..3).map(|_| rng.random_range(0.01..1.0)).collect();
            let s: f64 = q.iter().sum();
            q.iter_mut().for_each(|v| *v /= s);
            let p = p_from_q(&q, rho).unwrap();
            let a = table.a_at(&q);
            let margin = q[0] - (0.05 * (1.0 - q[0]) + a);
            if margin.abs() > 1e-9 {
                assert_eq!(dp_stop_check(&p, &table, 0.05, rho), policy.should_stop(&q));
            }
        }
    }

    #[test]
    fn stop_threshold_without_continuation_value() {
        // With A = 0 the threshold on Σ p is 1/(ρc).
        let grid = SimplexGrid::new(1, 4).unwrap();
        let table = ValueTable {
            grid: grid.clone(),
            j: std::vec![0.0; grid.len()],
            a: std::vec![0.0; grid.len()],
            phi_opt: std::vec![None; grid.len()],
            iterations: 0,
            gap: 0.0,
            max_increase: 0.0,
        };
        let (rho, c) = (0.2, 0.5);
        let at = |tail: f64| SuffStats::from_log(std::vec![-f64::ln(rho), tail.ln()]);
        assert!(dp_stop_check(&at(1.0 / (rho * c) + 1e-9), &table, c, rho));
        assert!(!dp_stop_check(&at(1.0 / (rho * c) - 1e-6), &table, c, rho));
    }
}
