//! The sensing problem: how the change propagates through the network, what
//! each sensor measures, and likelihood ratios of single measurements.
//!
//! Sensors are indexed from 0 internally; [`ChangePattern`]'s `Display`
//! renders them 1-based, matching the usual mathematical notation.

use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};

use crate::{Error, Result};

/// Change time of a sensor that never witnesses the change (λ = 0).
pub const NEVER: u64 = u64::MAX;

/// Pre/post-change density pair shared by every sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DensityPair {
    /// `f0 = N(0, 1)`, `f1 = N(mu, 1)`.
    GaussianShift { mu: f64 },
}

impl DensityPair {
    pub fn gaussian_shift(mu: f64) -> Result<Self> {
        if !mu.is_finite() {
            return Err(Error::invalid("mu", "mean shift must be finite"));
        }
        Ok(DensityPair::GaussianShift { mu })
    }

    pub fn mu(&self) -> f64 {
        match *self {
            DensityPair::GaussianShift { mu } => mu,
        }
    }

    /// `D(f1, f0)`.
    pub fn kl(&self) -> f64 {
        match *self {
            DensityPair::GaussianShift { mu } => 0.5 * mu * mu,
        }
    }

    pub fn log_likelihood_ratio(&self, z: f64) -> f64 {
        match *self {
            DensityPair::GaussianShift { mu } => z * mu - 0.5 * mu * mu,
        }
    }

    pub fn likelihood_ratio(&self, z: f64) -> f64 {
        libm::exp(self.log_likelihood_ratio(z))
    }

    /// Draws one measurement from `f1` when `post_change`, else from `f0`.
    pub fn sample<R: Rng + ?Sized>(&self, post_change: bool, rng: &mut R) -> f64 {
        let noise: f64 = StandardNormal.sample(rng);
        match *self {
            DensityPair::GaussianShift { mu } if post_change => noise + mu,
            DensityPair::GaussianShift { .. } => noise,
        }
    }
}

pub fn kl_continuous(densities: &DensityPair) -> f64 {
    densities.kl()
}

pub fn likelihood_ratio(z: f64, densities: &DensityPair) -> f64 {
    densities.likelihood_ratio(z)
}

/// Network size, geometric change-process parameters and densities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    sensors: usize,
    rho: f64,
    lambda: f64,
    densities: DensityPair,
}

impl ModelParams {
    pub fn new(sensors: usize, rho: f64, lambda: f64, densities: DensityPair) -> Result<Self> {
        if sensors == 0 {
            return Err(Error::invalid("sensors", "need at least one sensor"));
        }
        if !(rho > 0.0 && rho <= 1.0) {
            return Err(Error::invalid("rho", "must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::invalid("lambda", "must lie in [0, 1]"));
        }
        Ok(Self {
            sensors,
            rho,
            lambda,
            densities,
        })
    }

    pub fn sensors(&self) -> usize {
        self.sensors
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn densities(&self) -> DensityPair {
        self.densities
    }

    /// Same model with a different propagation parameter.
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        Self::new(self.sensors, self.rho, lambda, self.densities)
    }

    /// Same model restricted to a single sensor.
    pub fn single_sensor(&self) -> Self {
        Self { sensors: 1, ..*self }
    }
}

/// Order in which sensors witness the change: `order()[0]` changes first.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ChangePattern(Vec<usize>);

impl ChangePattern {
    pub fn new(order: Vec<usize>) -> Result<Self> {
        let mut seen = alloc::vec![false; order.len()];
        for &s in &order {
            if s >= order.len() || seen[s] {
                return Err(Error::invalid("pattern", "must be a permutation of the sensor indices"));
            }
            seen[s] = true;
        }
        if order.is_empty() {
            return Err(Error::invalid("pattern", "empty"));
        }
        Ok(Self(order))
    }

    /// Builds a pattern from 1-based sensor labels.
    pub fn from_one_based(labels: &[usize]) -> Result<Self> {
        if labels.contains(&0) {
            return Err(Error::invalid("pattern", "labels are 1-based"));
        }
        Self::new(labels.iter().map(|&l| l - 1).collect())
    }

    pub fn identity(sensors: usize) -> Self {
        Self((0..sensors).collect())
    }

    /// All `L!` patterns in lexicographic order.
    pub fn enumerate(sensors: usize) -> Vec<ChangePattern> {
        let mut current: Vec<usize> = (0..sensors).collect();
        let mut out = alloc::vec![Self(current.clone())];
        // Next-permutation walk.
        while let Some(i) = (1..current.len()).rev().find(|&i| current[i - 1] < current[i]) {
            let pivot = i - 1;
            let j = (i..current.len())
                .rev()
                .find(|&j| current[j] > current[pivot])
                .expect("a successor exists to the right of the pivot");
            current.swap(pivot, j);
            current[i..].reverse();
            out.push(Self(current.clone()));
        }
        out
    }

    pub fn order(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn first(&self) -> usize {
        self.0[0]
    }
}

impl fmt::Display for ChangePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("[")?;
        for (i, s) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            write!(f, "{}", s + 1)?;
        }
        f.write_str("]")
    }
}

/// Uniformly random pattern; each of the `L!` orders has probability `1/L!`.
pub fn sample_pattern<R: Rng + ?Sized>(sensors: usize, rng: &mut R) -> Result<ChangePattern> {
    if sensors == 0 {
        return Err(Error::invalid("sensors", "need at least one sensor"));
    }
    let mut order: Vec<usize> = (0..sensors).collect();
    order.shuffle(rng);
    Ok(ChangePattern(order))
}

/// Change time of every sensor, indexed by sensor (not by position in the
/// pattern). Sensors that never change hold [`NEVER`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangeTimes(Vec<u64>);

impl ChangeTimes {
    pub fn new(times: Vec<u64>) -> Self {
        Self(times)
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn of(&self, sensor: usize) -> u64 {
        self.0[sensor]
    }

    /// Time of the first change anywhere in the network.
    pub fn first(&self) -> u64 {
        self.0.iter().copied().min().unwrap_or(NEVER)
    }

    pub fn is_post_change(&self, k: u64, sensor: usize) -> bool {
        k >= self.0[sensor]
    }
}

/// Joint-geometric change times: the first sensor of `pattern` changes after
/// a Geometric(ρ) wait on `{1, 2, ...}`; each later sensor lags its
/// predecessor by a Geometric(λ) count on `{0, 1, ...}`.
pub fn sample_change_times<R: Rng + ?Sized>(
    params: &ModelParams,
    pattern: &ChangePattern,
    rng: &mut R,
) -> Result<ChangeTimes> {
    if pattern.len() != params.sensors() {
        return Err(Error::invalid("pattern", "length differs from the sensor count"));
    }
    let first = 1 + geometric_failures(params.rho(), rng);
    let mut times = alloc::vec![NEVER; params.sensors()];
    times[pattern.first()] = first;
    let mut previous = first;
    for &sensor in &pattern.order()[1..] {
        let lag = if params.lambda() == 0.0 {
            NEVER
        } else {
            geometric_failures(params.lambda(), rng)
        };
        previous = previous.saturating_add(lag);
        times[sensor] = previous;
    }
    Ok(ChangeTimes(times))
}

fn geometric_failures<R: Rng + ?Sized>(p: f64, rng: &mut R) -> u64 {
    if p >= 1.0 {
        return 0;
    }
    Geometric::new(p)
        .expect("success probability already validated")
        .sample(rng)
}

/// Lazily generated measurement rows `z_k` for `k = 1, 2, ...`.
#[derive(Debug, Clone)]
pub struct MeasurementStream {
    densities: DensityPair,
    times: ChangeTimes,
    next_k: u64,
}

impl MeasurementStream {
    pub fn new(densities: DensityPair, times: ChangeTimes) -> Self {
        Self {
            densities,
            times,
            next_k: 1,
        }
    }

    /// Time index of the row the next call to [`Self::next_row`] generates.
    pub fn next_time(&self) -> u64 {
        self.next_k
    }

    /// Fills `row` with the measurements of the next time slot and returns
    /// that slot's time index.
    pub fn next_row<R: Rng + ?Sized>(&mut self, row: &mut [f64], rng: &mut R) -> u64 {
        let k = self.next_k;
        for (sensor, z) in row.iter_mut().enumerate() {
            *z = self.densities.sample(self.times.is_post_change(k, sensor), rng);
        }
        self.next_k += 1;
        k
    }
}

/// One fully materialized trial.
#[derive(Debug, Clone, PartialEq)]
pub struct ChangeScenario {
    pub pattern: ChangePattern,
    pub times: ChangeTimes,
    pub horizon: usize,
    /// Row-major `horizon x L`; row `k - 1` holds time `k`.
    pub measurements: Vec<f64>,
}

impl ChangeScenario {
    pub fn sensors(&self) -> usize {
        self.pattern.len()
    }

    /// Measurements at time `k` (1-based).
    pub fn row(&self, k: usize) -> &[f64] {
        let l = self.sensors();
        &self.measurements[(k - 1) * l..k * l]
    }
}

pub fn generate_trajectory<R: Rng + ?Sized>(
    params: &ModelParams,
    times: ChangeTimes,
    pattern: ChangePattern,
    horizon: usize,
    rng: &mut R,
) -> Result<ChangeScenario> {
    if horizon == 0 {
        return Err(Error::invalid("horizon", "must be at least 1"));
    }
    let l = params.sensors();
    let mut measurements = alloc::vec![0.0; horizon * l];
    let mut stream = MeasurementStream::new(params.densities(), times.clone());
    for row in measurements.chunks_exact_mut(l) {
        stream.next_row(row, rng);
    }
    Ok(ChangeScenario {
        pattern,
        times,
        horizon,
        measurements,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;
    use std::string::ToString;
    use std::vec::Vec;

    fn gauss(mu: f64) -> DensityPair {
        DensityPair::gaussian_shift(mu).unwrap()
    }

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn kl_closed_form() {
        assert_eq!(kl_continuous(&gauss(1.0)), 0.5);
        assert_eq!(kl_continuous(&gauss(0.0)), 0.0);
        assert_eq!(kl_continuous(&gauss(2.0)), 2.0);
    }

    #[test]
    fn likelihood_ratio_examples() {
        let d = gauss(1.0);
        assert!((likelihood_ratio(0.5, &d) - 1.0).abs() < 1e-15);
        assert!((likelihood_ratio(0.0, &d) - 0.606_530_659_712_633_4).abs() < 1e-12);
        // Direct ratio of the two normal densities.
        let z: f64 = 0.7942;
        let ratio = (-(z - 1.0) * (z - 1.0) / 2.0).exp() / (-z * z / 2.0).exp();
        assert!((likelihood_ratio(z, &d) - ratio).abs() < 1e-12);
        assert!((likelihood_ratio(z, &d) - 1.342_052_287_285_172).abs() < 1e-12);
    }

    #[test]
    fn params_validation() {
        let d = gauss(1.0);
        assert!(ModelParams::new(0, 0.1, 0.5, d).is_err());
        assert!(ModelParams::new(2, 0.0, 0.5, d).is_err());
        assert!(ModelParams::new(2, 1.1, 0.5, d).is_err());
        assert!(ModelParams::new(2, 0.1, -0.1, d).is_err());
        assert!(ModelParams::new(2, 1.0, 0.0, d).is_ok());
    }

    #[test]
    fn single_sensor_pattern() {
        let p = sample_pattern(1, &mut rng(0)).unwrap();
        assert_eq!(p.order(), &[0]);
        assert!(sample_pattern(0, &mut rng(0)).is_err());
    }

    #[test]
    fn pattern_frequencies_are_uniform() {
        let mut r = rng(7);
        let draws = 60_000;
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for _ in 0..draws {
            let p = sample_pattern(3, &mut r).unwrap();
            let mut sorted = p.order().to_vec();
            sorted.sort();
            assert_eq!(sorted, vec![0, 1, 2]);
            *counts.entry(p.order().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let se = (p * (1.0 - p) / draws as f64).sqrt();
        for (pat, c) in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - p).abs() < 3.0 * se, "{pat:?}: {freq}");
        }
    }

    #[test]
    fn enumerate_is_lexicographic_and_complete() {
        let all = ChangePattern::enumerate(3);
        let orders: Vec<Vec<usize>> = all.iter().map(|p| p.order().to_vec()).collect();
        assert_eq!(
            orders,
            vec![
                vec![0, 1, 2],
                vec![0, 2, 1],
                vec![1, 0, 2],
                vec![1, 2, 0],
                vec![2, 0, 1],
                vec![2, 1, 0]
            ]
        );
        assert_eq!(ChangePattern::enumerate(5).len(), 120);
        assert_eq!(ChangePattern::enumerate(1).len(), 1);
    }

    #[test]
    fn pattern_rejects_non_permutations() {
        assert!(ChangePattern::new(vec![0, 0]).is_err());
        assert!(ChangePattern::new(vec![0, 2]).is_err());
        assert_eq!(
            ChangePattern::from_one_based(&[1, 3, 2]).unwrap().to_string(),
            "[1 3 2]"
        );
    }

    #[test]
    fn instantaneous_propagation_gives_equal_times() {
        let params = ModelParams::new(4, 0.05, 1.0, gauss(1.0)).unwrap();
        let mut r = rng(1);
        for _ in 0..100 {
            let pat = sample_pattern(4, &mut r).unwrap();
            let t = sample_change_times(&params, &pat, &mut r).unwrap();
            assert!(t.as_slice().iter().all(|&x| x == t.as_slice()[0]));
        }
    }

    #[test]
    fn rho_one_changes_at_first_slot() {
        let params = ModelParams::new(3, 1.0, 0.4, gauss(1.0)).unwrap();
        let mut r = rng(2);
        let pat = ChangePattern::identity(3);
        for _ in 0..50 {
            assert_eq!(sample_change_times(&params, &pat, &mut r).unwrap().of(0), 1);
        }
    }

    #[test]
    fn lambda_zero_never_propagates() {
        let params = ModelParams::new(3, 0.2, 0.0, gauss(1.0)).unwrap();
        let pat = ChangePattern::from_one_based(&[2, 3, 1]).unwrap();
        let t = sample_change_times(&params, &pat, &mut rng(3)).unwrap();
        assert_eq!(t.of(2), NEVER);
        assert_eq!(t.of(0), NEVER);
        assert!(t.of(1) >= 1 && t.of(1) < NEVER);
    }

    #[test]
    fn first_change_mean_is_inverse_rho() {
        let params = ModelParams::new(2, 0.01, 0.3, gauss(1.0)).unwrap();
        let pat = ChangePattern::identity(2);
        let mut r = rng(4);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let g = sample_change_times(&params, &pat, &mut r).unwrap().first() as f64;
            sum += g;
            sum_sq += g * g;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se = (var / n as f64).sqrt();
        assert!((mean - 100.0).abs() < 3.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn first_change_passes_chi_square_against_geometric() {
        let rho = 0.2;
        let params = ModelParams::new(2, rho, 0.5, gauss(1.0)).unwrap();
        let pat = ChangePattern::identity(2);
        let mut r = rng(5);
        let n = 100_000usize;
        // Cells k = 1..=20 and a tail cell k > 20.
        let cells = 20usize;
        let mut observed = vec![0usize; cells + 1];
        for _ in 0..n {
            let g = sample_change_times(&params, &pat, &mut r).unwrap().first() as usize;
            observed[(g - 1).min(cells)] += 1;
        }
        let mut chi2 = 0.0;
        for (i, &obs) in observed.iter().enumerate() {
            let prob = if i < cells {
                rho * (1.0 - rho).powi(i as i32)
            } else {
                (1.0 - rho).powi(cells as i32)
            };
            let expected = prob * n as f64;
            chi2 += (obs as f64 - expected).powi(2) / expected;
        }
        // 99th percentile of chi-square with 20 degrees of freedom.
        assert!(chi2 < 37.566, "chi2 = {chi2}");
    }

    #[test]
    fn times_are_ordered_along_the_pattern() {
        let params = ModelParams::new(5, 0.1, 0.3, gauss(1.0)).unwrap();
        let mut r = rng(6);
        for _ in 0..1000 {
            let pat = sample_pattern(5, &mut r).unwrap();
            let t = sample_change_times(&params, &pat, &mut r).unwrap();
            let along: Vec<u64> = pat.order().iter().map(|&s| t.of(s)).collect();
            assert!(along.windows(2).all(|w| w[0] <= w[1]));
            assert!(along[0] >= 1);
            assert_eq!(t.first(), along[0]);
        }
    }

    #[test]
    fn trajectory_respects_change_times() {
        let params = ModelParams::new(2, 0.1, 0.5, gauss(1.0)).unwrap();
        let pat = ChangePattern::identity(2);
        // Horizon shorter than every change: all pre-change.
        let times = ChangeTimes::new(vec![50, 60]);
        let sc = generate_trajectory(&params, times, pat.clone(), 10, &mut rng(8)).unwrap();
        assert_eq!(sc.measurements.len(), 20);
        assert!(sc.times.first() > sc.horizon as u64);

        // Sensor 0 post-change from k = 1; its mean is mu.
        let times = ChangeTimes::new(vec![1, NEVER]);
        let horizon = 100_000;
        let sc = generate_trajectory(&params, times, pat, horizon, &mut rng(9)).unwrap();
        let (mut s0, mut s1) = (0.0, 0.0);
        for k in 1..=horizon {
            s0 += sc.row(k)[0];
            s1 += sc.row(k)[1];
        }
        let se = 1.0 / (horizon as f64).sqrt();
        assert!((s0 / horizon as f64 - 1.0).abs() < 3.0 * se);
        assert!((s1 / horizon as f64).abs() < 3.0 * se);
        assert!(generate_trajectory(
            &params,
            ChangeTimes::new(vec![1, 1]),
            ChangePattern::identity(2),
            0,
            &mut rng(0)
        )
        .is_err());
    }

    #[test]
    fn stream_matches_materialized_trajectory() {
        let params = ModelParams::new(3, 0.1, 0.5, gauss(1.0)).unwrap();
        let times = ChangeTimes::new(vec![3, 5, 4]);
        let sc = generate_trajectory(&params, times.clone(), ChangePattern::identity(3), 8, &mut rng(10)).unwrap();
        let mut stream = MeasurementStream::new(params.densities(), times);
        let mut r = rng(10);
        let mut row = [0.0; 3];
        for k in 1..=8 {
            assert_eq!(stream.next_row(&mut row, &mut r), k as u64);
            assert_eq!(&row, sc.row(k));
        }
    }

    proptest::proptest! {
        #[test]
        fn lr_is_positive_and_increasing(mu in 0.01f64..4.0, a in -10.0f64..10.0, b in -10.0f64..10.0) {
            let d = gauss(mu);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            proptest::prop_assert!(d.likelihood_ratio(lo) >= 0.0);
            if hi - lo > 1e-9 {
                proptest::prop_assert!(d.likelihood_ratio(lo) < d.likelihood_ratio(hi));
            }
        }
    }
}
