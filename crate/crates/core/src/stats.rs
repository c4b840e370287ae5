//! Sufficient statistics shared by every detector.
//!
//! The statistic `p_k` has `L + 1` entries; `p_k^0 = 1/ρ` is constant and the
//! tail entries evolve by
//!
//! ```text
//! p_k^n = δ_k^n · (1 - ρ_n)/(1 - ρ) · Σ_{m ≤ n} p_{k-1}^m e_m^n
//! ```
//!
//! where `ρ_n` is the chain coefficient (`ρ`, then `λ` repeated, then 0) and
//! `e_m^n` the product of chain coefficients `m..n-1`. Everything is stored as
//! logarithms so that long post-change runs neither overflow nor underflow.

use alloc::vec::Vec;

use crate::model::{ChangePattern, DensityPair};
use crate::quantizer::MessagePmfPair;
use crate::special::normal_interval;
use crate::{Error, Result};

/// `log Σ exp(x_i)`; `-∞` for an empty or all `-∞` input.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    let sum: f64 = values.into_iter().map(|v| libm::exp(v - max)).sum();
    max + libm::log(sum)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainCoeffs {
    rho: f64,
    rho_chain: Vec<f64>,
    /// `e[m][n]`, zero above the diagonal (`m > n`).
    e: Vec<Vec<f64>>,
    log_e: Vec<Vec<f64>>,
    /// `log((1 - ρ_n)/(1 - ρ))`; `NaN` when `ρ = 1`.
    log_gain: Vec<f64>,
}

pub fn chain_coeffs(sensors: usize, rho: f64, lambda: f64) -> ChainCoeffs {
    let mut rho_chain = alloc::vec![lambda; sensors + 1];
    rho_chain[0] = rho;
    rho_chain[sensors] = 0.0;
    let size = sensors + 1;
    let mut e = alloc::vec![alloc::vec![0.0; size]; size];
    for m in 0..size {
        e[m][m] = 1.0;
        for n in m + 1..size {
            e[m][n] = e[m][n - 1] * rho_chain[n - 1];
        }
    }
    let log_e = e
        .iter()
        .map(|row| row.iter().map(|&v| libm::log(v)).collect())
        .collect();
    let log_gain = rho_chain
        .iter()
        .map(|&rc| {
            if rho < 1.0 {
                libm::log(1.0 - rc) - libm::log(1.0 - rho)
            } else {
                f64::NAN
            }
        })
        .collect();
    ChainCoeffs {
        rho,
        rho_chain,
        e,
        log_e,
        log_gain,
    }
}

impl ChainCoeffs {
    pub fn sensors(&self) -> usize {
        self.rho_chain.len() - 1
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn rho_chain(&self) -> &[f64] {
        &self.rho_chain
    }

    pub fn e(&self, m: usize, n: usize) -> f64 {
        self.e[m][n]
    }

    pub fn log_e(&self, m: usize, n: usize) -> f64 {
        self.log_e[m][n]
    }
}

/// Per-sensor likelihood ratios of one slot's fusion-center information.
#[derive(Debug, Clone, PartialEq)]
pub struct RatioVector(Vec<f64>);

impl RatioVector {
    pub fn new(r: Vec<f64>) -> Result<Self> {
        if r.iter().any(|v| !(*v >= 0.0)) {
            return Err(Error::invalid("ratio", "entries must be nonnegative"));
        }
        Ok(Self(r))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn ratio_vector_centralized(z_row: &[f64], densities: &DensityPair) -> RatioVector {
    RatioVector(z_row.iter().map(|&z| densities.likelihood_ratio(z)).collect())
}

pub fn ratio_vector_us(u_row: &[usize], pmfs: &MessagePmfPair) -> Result<RatioVector> {
    u_row
        .iter()
        .map(|&u| {
            if u >= pmfs.alphabet_size() {
                return Err(Error::invalid("symbol", "outside the quantizer alphabet"));
            }
            pmfs.ratio(u)
        })
        .collect::<Result<Vec<_>>>()
        .map(RatioVector)
}

/// How a reported LCSH level is turned into a likelihood ratio.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum LcshRatioMode {
    /// The LR statistic's own density ratio at value `x` is `x`, so the
    /// reported level `ηΔ` is used directly (clamped below at `eps`).
    #[default]
    LrIdentity,
    /// Ratio of the probabilities that the LR lies in `((η-1)Δ, (η+1)Δ)`.
    BandProbability,
}

pub fn ratio_vector_lcsh(
    etas: &[u64],
    delta: f64,
    eps: f64,
    mode: LcshRatioMode,
    densities: &DensityPair,
) -> RatioVector {
    let r = etas.iter().map(|&eta| match mode {
        LcshRatioMode::LrIdentity => (eta as f64 * delta).max(eps),
        LcshRatioMode::BandProbability => band_ratio(eta, delta, densities).max(eps),
    });
    RatioVector(r.collect())
}

fn band_ratio(eta: u64, delta: f64, densities: &DensityPair) -> f64 {
    let mu = densities.mu();
    let to_z = |lr: f64| {
        if lr <= 0.0 {
            f64::NEG_INFINITY
        } else {
            libm::log(lr) / mu + mu / 2.0
        }
    };
    let (lo, hi) = (to_z((eta as f64 - 1.0) * delta), to_z((eta as f64 + 1.0) * delta));
    let (p0, p1) = (normal_interval(lo, hi, 0.0), normal_interval(lo, hi, mu));
    if p0 > 0.0 {
        p1 / p0
    } else if p1 > 0.0 {
        f64::INFINITY
    } else {
        1.0
    }
}

/// Coefficients of `t^0..t^L` in `Π_ℓ (a_ℓ + t·b_ℓ)`. With nonnegative inputs
/// every update is a sum of nonnegative terms, so there is no cancellation.
pub fn mixed_symmetric(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    let mut coeffs = alloc::vec![0.0; a.len() + 1];
    coeffs[0] = 1.0;
    for (i, (&ai, &bi)) in a.iter().zip(b).enumerate() {
        for n in (1..=i + 1).rev() {
            coeffs[n] = coeffs[n] * ai + coeffs[n - 1] * bi;
        }
        coeffs[0] *= ai;
    }
    coeffs
}

/// Elementary symmetric polynomials `e_0..e_L` of `r`.
pub fn elementary_symmetric(r: &[f64]) -> Vec<f64> {
    mixed_symmetric(&alloc::vec![1.0; r.len()], r)
}

/// Binomial coefficients `C(L, 0..=L)`.
pub fn binomial_row(sensors: usize) -> Vec<f64> {
    let mut row = alloc::vec![1.0; sensors + 1];
    for n in 1..=sensors {
        row[n] = row[n - 1] * (sensors + 1 - n) as f64 / n as f64;
    }
    row
}

/// `δ^n` averaged over all patterns: `e_n(r) / C(L, n)`.
pub fn delta_uniform(r: &RatioVector) -> Vec<f64> {
    let e = elementary_symmetric(r.as_slice());
    let binom = binomial_row(r.len());
    e.iter().zip(&binom).map(|(e, c)| e / c).collect()
}

/// Reference evaluation of [`delta_uniform`] by averaging over all `L!`
/// patterns. Exponential cost; meant for validation.
pub fn delta_uniform_enumerated(r: &RatioVector) -> Vec<f64> {
    let patterns = ChangePattern::enumerate(r.len());
    let mut acc = alloc::vec![0.0; r.len() + 1];
    for pattern in &patterns {
        for (a, d) in acc.iter_mut().zip(delta_pattern(r, pattern)) {
            *a += d;
        }
    }
    let count = patterns.len() as f64;
    acc.iter().map(|a| a / count).collect()
}

/// `δ^n = Π_{i ≤ n} r[π_i]`.
pub fn delta_pattern(r: &RatioVector, pattern: &ChangePattern) -> Vec<f64> {
    let mut delta = Vec::with_capacity(r.len() + 1);
    let mut prod = 1.0;
    delta.push(prod);
    for &sensor in pattern.order() {
        prod *= r.as_slice()[sensor];
        delta.push(prod);
    }
    delta
}

/// The transformed posterior `p_k`, stored as `log p_k^n`.
#[derive(Debug, Clone, PartialEq)]
pub struct SuffStats {
    logp: Vec<f64>,
}

impl SuffStats {
    /// `p_0 = (1/ρ, 0, …, 0)`.
    pub fn initial(sensors: usize, rho: f64) -> Self {
        let mut logp = alloc::vec![f64::NEG_INFINITY; sensors + 1];
        logp[0] = -libm::log(rho);
        Self { logp }
    }

    pub fn from_log(logp: Vec<f64>) -> Self {
        Self { logp }
    }

    pub fn logp(&self) -> &[f64] {
        &self.logp
    }

    pub fn p(&self, n: usize) -> f64 {
        libm::exp(self.logp[n])
    }

    pub fn sensors(&self) -> usize {
        self.logp.len() - 1
    }

    /// Advances the statistic in place by one slot.
    pub fn advance(&mut self, delta: &[f64], coeffs: &ChainCoeffs) -> Result<()> {
        let l = self.sensors();
        if delta.len() != l + 1 || coeffs.sensors() != l {
            return Err(Error::MalformedInput {
                expected: l + 1,
                got: delta.len(),
            });
        }
        if coeffs.rho >= 1.0 {
            return Err(Error::invalid("rho", "the recursion divides by 1 - rho"));
        }
        // Descending n so that entries m < n still hold the previous slot.
        for n in (1..=l).rev() {
            let gain = coeffs.log_gain[n];
            let weighted = log_sum_exp((0..=n).map(|m| self.logp[m] + coeffs.log_e[m][n]));
            let value = libm::log(delta[n]) + gain + weighted;
            self.logp[n] = if value.is_nan() { f64::NEG_INFINITY } else { value };
        }
        Ok(())
    }

    /// `log Σ_{m ≥ 1} p^m`.
    pub fn stopping_stat(&self) -> f64 {
        log_sum_exp(self.logp[1..].iter().copied())
    }

    /// `Σ_{m ≥ 1} p^m`.
    pub fn tail_sum(&self) -> f64 {
        libm::exp(self.stopping_stat())
    }
}

pub fn recursion_step(p: &SuffStats, delta: &[f64], coeffs: &ChainCoeffs) -> Result<SuffStats> {
    let mut next = p.clone();
    next.advance(delta, coeffs)?;
    Ok(next)
}

pub fn stopping_stat(p: &SuffStats) -> f64 {
    p.stopping_stat()
}

/// `log(1/(ρα))`, the threshold that bounds the false-alarm probability by α.
pub fn beta_for_alpha(rho: f64, alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", "must lie in (0, 1)"));
    }
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::invalid("rho", "must lie in (0, 1]"));
    }
    Ok(-libm::log(rho * alpha))
}
