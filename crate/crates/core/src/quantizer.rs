//! Monotone likelihood-ratio quantizers for the decentralized setting.
//!
//! A quantizer with alphabet size `U` maps a measurement to symbol `i` when
//! its LR falls in `(φ_i, φ_{i+1}]`, with `φ_0 = 0` and `φ_U = +∞`. Symbol 0
//! also covers `LR = 0`.

use alloc::vec::Vec;

use crate::model::DensityPair;
use crate::special::{normal_interval, normal_quantile};
use crate::{Error, Result};

/// Interior LR thresholds `φ_1 ≤ … ≤ φ_{U-1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantizerSpec {
    lr_thresholds: Vec<f64>,
}

impl QuantizerSpec {
    pub fn from_lr_thresholds(lr_thresholds: Vec<f64>) -> Result<Self> {
        if lr_thresholds.is_empty() {
            return Err(Error::invalid("thresholds", "alphabet needs at least two symbols"));
        }
        if lr_thresholds.iter().any(|t| t.is_nan() || *t < 0.0) {
            return Err(Error::invalid("thresholds", "LR thresholds must be nonnegative"));
        }
        if lr_thresholds.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::invalid("thresholds", "must be nondecreasing"));
        }
        Ok(Self { lr_thresholds })
    }

    /// Builds the quantizer from observation-domain thresholds `ϱ_i`, using
    /// `φ_i = LR(ϱ_i)`. Requires `mu > 0` so that LR is increasing in `z`.
    pub fn from_observation_thresholds(thresholds: &[f64], densities: &DensityPair) -> Result<Self> {
        require_positive_shift(densities)?;
        Self::from_lr_thresholds(thresholds.iter().map(|&t| densities.likelihood_ratio(t)).collect())
    }

    pub fn alphabet_size(&self) -> usize {
        self.lr_thresholds.len() + 1
    }

    pub fn lr_thresholds(&self) -> &[f64] {
        &self.lr_thresholds
    }

    /// `ϱ_i = log(φ_i)/μ + μ/2`; a zero LR threshold maps to `-∞`.
    pub fn observation_thresholds(&self, densities: &DensityPair) -> Vec<f64> {
        let mu = densities.mu();
        self.lr_thresholds
            .iter()
            .map(|&phi| libm::log(phi) / mu + mu / 2.0)
            .collect()
    }
}

fn require_positive_shift(densities: &DensityPair) -> Result<()> {
    if densities.mu() > 0.0 {
        Ok(())
    } else {
        Err(Error::invalid("mu", "quantizer design needs a positive mean shift"))
    }
}

pub fn quantize(z: f64, spec: &QuantizerSpec, densities: &DensityPair) -> usize {
    let lr = densities.likelihood_ratio(z);
    spec.lr_thresholds.iter().take_while(|&&phi| phi < lr).count()
}

/// Message pmfs under the pre- and post-change densities.
#[derive(Debug, Clone, PartialEq)]
pub struct MessagePmfPair {
    pub p0: Vec<f64>,
    pub p1: Vec<f64>,
}

impl MessagePmfPair {
    pub fn new(p0: Vec<f64>, p1: Vec<f64>) -> Result<Self> {
        if p0.len() != p1.len() || p0.len() < 2 {
            return Err(Error::invalid("pmf", "both pmfs need the same alphabet of size >= 2"));
        }
        for pmf in [&p0, &p1] {
            if pmf.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::invalid("pmf", "entries must lie in [0, 1]"));
            }
            if (pmf.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(Error::invalid("pmf", "entries must sum to 1"));
            }
        }
        Ok(Self { p0, p1 })
    }

    pub fn alphabet_size(&self) -> usize {
        self.p0.len()
    }

    /// `P1(u) / P0(u)`.
    pub fn ratio(&self, symbol: usize) -> Result<f64> {
        let (p0, p1) = (self.p0[symbol], self.p1[symbol]);
        if p0 == 0.0 {
            if p1 > 0.0 {
                return Err(Error::InfiniteDivergence { symbol });
            }
            // Neither hypothesis produces this symbol; it carries no evidence.
            return Ok(1.0);
        }
        Ok(p1 / p0)
    }
}

pub fn induced_pmfs(spec: &QuantizerSpec, densities: &DensityPair) -> Result<MessagePmfPair> {
    require_positive_shift(densities)?;
    let mu = densities.mu();
    let mut cuts = Vec::with_capacity(spec.alphabet_size() + 1);
    cuts.push(f64::NEG_INFINITY);
    cuts.extend(spec.observation_thresholds(densities));
    cuts.push(f64::INFINITY);
    let p0 = cuts.windows(2).map(|w| normal_interval(w[0], w[1], 0.0)).collect();
    let p1 = cuts.windows(2).map(|w| normal_interval(w[0], w[1], mu)).collect();
    Ok(MessagePmfPair { p0, p1 })
}

/// `Σ P1(i) log(P1(i)/P0(i))`.
pub fn kl_pmf(pair: &MessagePmfPair) -> Result<f64> {
    let mut kl = 0.0;
    for (symbol, (&p0, &p1)) in pair.p0.iter().zip(&pair.p1).enumerate() {
        if p1 == 0.0 {
            continue;
        }
        if p0 == 0.0 {
            return Err(Error::InfiniteDivergence { symbol });
        }
        kl += p1 * libm::log(p1 / p0);
    }
    Ok(kl)
}

fn kl_at(thresholds: &[f64], mu: f64) -> f64 {
    let mut kl = 0.0;
    let mut lo = f64::NEG_INFINITY;
    for i in 0..=thresholds.len() {
        let hi = thresholds.get(i).copied().unwrap_or(f64::INFINITY);
        let p0 = normal_interval(lo, hi, 0.0);
        let p1 = normal_interval(lo, hi, mu);
        if p1 > 0.0 && p0 > 0.0 {
            kl += p1 * libm::log(p1 / p0);
        }
        lo = hi;
    }
    kl
}

const INV_PHI: f64 = 0.618_033_988_749_894_9;

/// Maximizes a unimodal `f` on `[a, b]`.
fn golden_max(mut f: impl FnMut(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > tol {
        if fc >= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

/// Observation-domain search interval; beyond it every bin probability is
/// below double precision resolution.
const SEARCH_HALF_WIDTH: f64 = 12.0;

/// K-L maximizing thresholds for an alphabet of size `alphabet`.
///
/// Binary alphabets use a golden-section search on the single threshold.
/// Larger alphabets run cyclic coordinate descent with a golden-section inner
/// search, starting from equal-probability bins under `f0`.
pub fn optimize_thresholds(alphabet: usize, densities: &DensityPair) -> Result<QuantizerSpec> {
    if alphabet < 2 {
        return Err(Error::invalid("alphabet", "need at least two symbols"));
    }
    if densities.mu() == 0.0 {
        return Err(Error::invalid(
            "mu",
            "identical densities make every quantizer equally useless",
        ));
    }
    require_positive_shift(densities)?;
    let mu = densities.mu();
    let (lo, hi) = (mu / 2.0 - SEARCH_HALF_WIDTH, mu / 2.0 + SEARCH_HALF_WIDTH);
    let tol = 1e-10;

    let mut t: Vec<f64> = (1..alphabet)
        .map(|i| normal_quantile(i as f64 / alphabet as f64))
        .collect();
    if alphabet == 2 {
        t[0] = golden_max(|x| kl_at(&[x], mu), lo, hi, tol);
    } else {
        let mut best = kl_at(&t, mu);
        for _ in 0..1000 {
            for i in 0..t.len() {
                let a = if i == 0 { lo } else { t[i - 1] };
                let b = if i + 1 == t.len() { hi } else { t[i + 1] };
                let mut trial = t.clone();
                t[i] = golden_max(
                    |x| {
                        trial[i] = x;
                        kl_at(&trial, mu)
                    },
                    a,
                    b,
                    tol,
                );
            }
            let value = kl_at(&t, mu);
            let gain = value - best;
            best = value;
            if gain < 1e-13 {
                break;
            }
        }
    }
    QuantizerSpec::from_observation_thresholds(&t, densities)
}

/// `1 / (L·D + |log(1-ρ)|)`.
pub fn asymptotic_slope(sensors: usize, kl: f64, rho: f64) -> Result<f64> {
    if !(kl > 0.0) {
        return Err(Error::invalid("D", "must be positive"));
    }
    if !(0.0..1.0).contains(&rho) {
        return Err(Error::invalid("rho", "must lie in [0, 1) for a finite slope"));
    }
    Ok(1.0 / (sensors as f64 * kl + libm::log(1.0 - rho).abs()))
}

/// Whether `log(1 - ρ + (L-1)(1-λ)) < D < ∞`.
pub fn check_order1_condition(rho: f64, lambda: f64, sensors: usize, kl: f64) -> bool {
    kl.is_finite() && libm::log(1.0 - rho + (sensors as f64 - 1.0) * (1.0 - lambda)) < kl
}

/// Smallest `λ` satisfying the order-1 condition with equality, or `None`
/// for a single sensor, where the condition does not depend on `λ`.
pub fn order1_boundary_lambda(rho: f64, sensors: usize, kl: f64) -> Option<f64> {
    if sensors < 2 {
        return None;
    }
    Some(1.0 - (libm::exp(kl) - 1.0 + rho) / (sensors as f64 - 1.0))
}
