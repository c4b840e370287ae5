//! Stopping rules run at the fusion center.
//!
//! A [`Detector`] consumes one slot of fusion-center information at a time,
//! turns it into per-sensor likelihood ratios for its information setting,
//! advances its chart(s) and reports whether its threshold has been reached.

use alloc::string::ToString;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::lcsh::{LcshBurst, LcshChannelState};
use crate::model::{ChangePattern, ModelParams};
use crate::quantizer::{induced_pmfs, MessagePmfPair, QuantizerSpec};
use crate::stats::{
    chain_coeffs, delta_pattern, delta_uniform, ratio_vector_centralized, ratio_vector_lcsh, ratio_vector_us,
    ChainCoeffs, LcshRatioMode, RatioVector, SuffStats,
};
use crate::{Error, Result};

/// Largest network for the detectors whose cost or meaning involves all `L!`
/// patterns.
pub const MAX_ENUMERATED_SENSORS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Scheme {
    UniformPrior,
    Multichart,
    EstimationBased,
    KnownPattern,
    Mismatched,
    SingleSensor,
}

impl Scheme {
    pub const ALL: [Scheme; 6] = [
        Scheme::UniformPrior,
        Scheme::Multichart,
        Scheme::EstimationBased,
        Scheme::KnownPattern,
        Scheme::Mismatched,
        Scheme::SingleSensor,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Scheme::UniformPrior => "uniform-prior",
            Scheme::Multichart => "multichart",
            Scheme::EstimationBased => "estimation-based",
            Scheme::KnownPattern => "known-pattern",
            Scheme::Mismatched => "mismatched",
            Scheme::SingleSensor => "single-sensor",
        }
    }

    /// Whether the detector needs the trial's true pattern.
    pub fn needs_true_pattern(&self) -> bool {
        matches!(self, Scheme::KnownPattern | Scheme::SingleSensor)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Setting {
    Centralized,
    Us,
    Lcsh,
}

impl Setting {
    pub const ALL: [Setting; 3] = [Setting::Centralized, Setting::Us, Setting::Lcsh];

    pub fn name(&self) -> &'static str {
        match self {
            Setting::Centralized => "centralized",
            Setting::Us => "us",
            Setting::Lcsh => "lcsh",
        }
    }
}

macro_rules! name_parsing {
    ($ty:ty, $what:literal) => {
        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $ty {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                Self::ALL
                    .iter()
                    .copied()
                    .find(|v| v.name() == s)
                    .ok_or_else(|| Error::invalid($what, alloc::format!("unknown value `{s}`")))
            }
        }
    };
}

name_parsing!(Scheme, "scheme");
name_parsing!(Setting, "setting");

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LcshConfig {
    pub delta: f64,
    /// Lower clamp on reported levels inside the `δ` recursion.
    pub eps: f64,
    /// Lower clamp on reported levels inside the CUSUM log term.
    pub eps_cusum: f64,
    pub mode: LcshRatioMode,
}

impl LcshConfig {
    /// `eps = 0` and `eps_cusum = Δ/2`.
    pub fn new(delta: f64) -> Self {
        Self {
            delta,
            eps: 0.0,
            eps_cusum: delta / 2.0,
            mode: LcshRatioMode::LrIdentity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub scheme: Scheme,
    pub setting: Setting,
    pub beta: f64,
    /// CUSUM grouping threshold of the estimation-based detector.
    pub xi: f64,
    /// Required for the `us` setting.
    pub quantizer: Option<QuantizerSpec>,
    /// Required for the `lcsh` setting.
    pub lcsh: Option<LcshConfig>,
}

impl DetectorConfig {
    pub fn new(scheme: Scheme, setting: Setting, beta: f64) -> Self {
        Self {
            scheme,
            setting,
            beta,
            xi: 3.0,
            quantizer: None,
            lcsh: None,
        }
    }

    pub fn with_beta(&self, beta: f64) -> Self {
        Self { beta, ..self.clone() }
    }

    pub fn validate(&self, sensors: usize) -> Result<()> {
        if self.beta.is_nan() || self.beta == f64::INFINITY {
            return Err(Error::invalid("beta", "must be finite or -inf"));
        }
        if !(self.xi > 0.0) {
            return Err(Error::invalid("xi", "must be positive"));
        }
        match self.setting {
            Setting::Us if self.quantizer.is_none() => {
                return Err(Error::Unsupported("the us setting needs a quantizer".to_string()))
            }
            Setting::Lcsh => match self.lcsh {
                None => return Err(Error::Unsupported("the lcsh setting needs a level spacing".to_string())),
                Some(c) if !(c.delta > 0.0 && c.delta.is_finite()) => {
                    return Err(Error::invalid("delta", "must be positive and finite"))
                }
                Some(c) if !(c.eps >= 0.0 && c.eps_cusum > 0.0) => {
                    return Err(Error::invalid(
                        "eps",
                        "clamps must be nonnegative (CUSUM clamp positive)",
                    ))
                }
                _ => {}
            },
            _ => {}
        }
        if matches!(self.scheme, Scheme::UniformPrior | Scheme::Multichart) && sensors > MAX_ENUMERATED_SENSORS {
            return Err(Error::TooManySensors {
                sensors,
                limit: MAX_ENUMERATED_SENSORS,
            });
        }
        Ok(())
    }
}

/// One slot of fusion-center information.
#[derive(Debug, Clone, Copy)]
pub enum FusionInput<'a> {
    /// Raw measurements, centralized setting.
    Measurements(&'a [f64]),
    /// Quantized messages, `us` setting.
    Symbols(&'a [usize]),
    /// Bursts received this slot (`None` for silent sensors), `lcsh` setting.
    Bursts(&'a [Option<LcshBurst>]),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Continue,
    Stop { k: u64 },
}

pub fn cusum_update(c: f64, llr: f64) -> f64 {
    (c + llr).max(0.0)
}

/// Orders sensors for the estimation-based detector: sensors whose CUSUM
/// reaches `xi` come first in descending CUSUM order (ties in random order),
/// followed by the rest in uniformly random order.
pub fn estimate_pattern<R: Rng + ?Sized>(cusum: &[f64], xi: f64, rng: &mut R) -> ChangePattern {
    let mut order: Vec<usize> = (0..cusum.len()).collect();
    // A uniform shuffle followed by a stable sort gives random tiebreaks in
    // the leading group and a uniform order of the trailing group.
    order.shuffle(rng);
    order.sort_by(|&a, &b| {
        let key = |s: usize| if cusum[s] >= xi { cusum[s] } else { f64::NEG_INFINITY };
        key(b).total_cmp(&key(a))
    });
    ChangePattern::new(order).expect("a reordering of 0..L is a permutation")
}

#[derive(Debug, Clone)]
enum Information {
    Centralized,
    Us(MessagePmfPair),
    Lcsh {
        config: LcshConfig,
        mirrors: Vec<LcshChannelState>,
    },
}

#[derive(Debug, Clone)]
enum Charts {
    /// One chart driven by `δ` averaged over patterns.
    Uniform(SuffStats),
    /// One chart per pattern, in lexicographic order.
    Multi(Vec<(ChangePattern, SuffStats)>),
    /// One chart driven by the current pattern estimate.
    Estimated {
        chart: SuffStats,
        cusum: Vec<f64>,
        estimate: Option<ChangePattern>,
    },
    Known(ChangePattern, SuffStats),
    /// L = 1 chart fed by a single sensor.
    Single(usize, SuffStats),
}

#[derive(Debug, Clone)]
pub struct Detector {
    scheme: Scheme,
    setting: Setting,
    beta: f64,
    xi: f64,
    params: ModelParams,
    coeffs: ChainCoeffs,
    info: Information,
    charts: Charts,
    k: u64,
    stat: f64,
    winner: usize,
}

impl Detector {
    /// `true_pattern` must be supplied for the known-pattern and
    /// single-sensor baselines and is ignored otherwise.
    pub fn new(config: &DetectorConfig, params: &ModelParams, true_pattern: Option<&ChangePattern>) -> Result<Self> {
        let l = params.sensors();
        config.validate(l)?;
        let densities = params.densities();
        let info = match config.setting {
            Setting::Centralized => Information::Centralized,
            Setting::Us => Information::Us(induced_pmfs(config.quantizer.as_ref().expect("validated"), &densities)?),
            Setting::Lcsh => {
                let lc = config.lcsh.expect("validated");
                Information::Lcsh {
                    config: lc,
                    mirrors: alloc::vec![LcshChannelState::new(lc.delta)?; l],
                }
            }
        };
        let pattern = || -> Result<ChangePattern> {
            let p = true_pattern
                .cloned()
                .ok_or_else(|| Error::Unsupported(alloc::format!("{} needs the true pattern", config.scheme)))?;
            if p.len() != l {
                return Err(Error::invalid("pattern", "length differs from the sensor count"));
            }
            Ok(p)
        };
        let rho = params.rho();
        let (coeffs, charts) = match config.scheme {
            Scheme::UniformPrior => (
                chain_coeffs(l, rho, params.lambda()),
                Charts::Uniform(SuffStats::initial(l, rho)),
            ),
            Scheme::Mismatched => (chain_coeffs(l, rho, 1.0), Charts::Uniform(SuffStats::initial(l, rho))),
            Scheme::Multichart => (
                chain_coeffs(l, rho, params.lambda()),
                Charts::Multi(
                    ChangePattern::enumerate(l)
                        .into_iter()
                        .map(|p| (p, SuffStats::initial(l, rho)))
                        .collect(),
                ),
            ),
            Scheme::EstimationBased => (
                chain_coeffs(l, rho, params.lambda()),
                Charts::Estimated {
                    chart: SuffStats::initial(l, rho),
                    cusum: alloc::vec![0.0; l],
                    estimate: None,
                },
            ),
            Scheme::KnownPattern => (
                chain_coeffs(l, rho, params.lambda()),
                Charts::Known(pattern()?, SuffStats::initial(l, rho)),
            ),
            Scheme::SingleSensor => (
                chain_coeffs(1, rho, params.lambda()),
                Charts::Single(pattern()?.first(), SuffStats::initial(1, rho)),
            ),
        };
        Ok(Self {
            scheme: config.scheme,
            setting: config.setting,
            beta: config.beta,
            xi: config.xi,
            params: *params,
            coeffs,
            info,
            charts,
            k: 0,
            stat: f64::NEG_INFINITY,
            winner: 0,
        })
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn setting(&self) -> Setting {
        self.setting
    }

    /// Slots processed so far.
    pub fn k(&self) -> u64 {
        self.k
    }

    /// Stopping statistic after the last slot (the maximum over charts for
    /// the multichart detector).
    pub fn stat(&self) -> f64 {
        self.stat
    }

    /// Lexicographic index of the chart holding the maximum statistic; 0 for
    /// single-chart detectors.
    pub fn winning_chart(&self) -> usize {
        self.winner
    }

    pub fn cusum(&self) -> Option<&[f64]> {
        match &self.charts {
            Charts::Estimated { cusum, .. } => Some(cusum),
            _ => None,
        }
    }

    pub fn estimate(&self) -> Option<&ChangePattern> {
        match &self.charts {
            Charts::Estimated { estimate, .. } => estimate.as_ref(),
            _ => None,
        }
    }

    /// The fusion center's mirrored LCSH levels.
    pub fn levels(&self) -> Option<Vec<u64>> {
        match &self.info {
            Information::Lcsh { mirrors, .. } => Some(mirrors.iter().map(|m| m.eta()).collect()),
            _ => None,
        }
    }

    /// Chart statistics (one per pattern for the multichart detector).
    pub fn chart_stats(&self) -> Vec<f64> {
        match &self.charts {
            Charts::Multi(charts) => charts.iter().map(|(_, c)| c.stopping_stat()).collect(),
            Charts::Uniform(c) | Charts::Known(_, c) | Charts::Single(_, c) => alloc::vec![c.stopping_stat()],
            Charts::Estimated { chart, .. } => alloc::vec![chart.stopping_stat()],
        }
    }

    /// Ratios and CUSUM increments of this slot.
    fn ratios(&mut self, input: FusionInput<'_>) -> Result<(RatioVector, Vec<f64>)> {
        let l = self.params.sensors();
        let check = |got: usize| {
            if got == l {
                Ok(())
            } else {
                Err(Error::MalformedInput { expected: l, got })
            }
        };
        let densities = self.params.densities();
        match (&mut self.info, input) {
            (Information::Centralized, FusionInput::Measurements(z)) => {
                check(z.len())?;
                let llr = z.iter().map(|&z| densities.log_likelihood_ratio(z)).collect();
                Ok((ratio_vector_centralized(z, &densities), llr))
            }
            (Information::Us(pmfs), FusionInput::Symbols(u)) => {
                check(u.len())?;
                let r = ratio_vector_us(u, pmfs)?;
                let llr = r.as_slice().iter().map(|&v| libm::log(v)).collect();
                Ok((r, llr))
            }
            (Information::Lcsh { config, mirrors }, FusionInput::Bursts(bursts)) => {
                check(bursts.len())?;
                for (mirror, burst) in mirrors.iter_mut().zip(bursts) {
                    if let Some(b) = burst {
                        mirror.apply(b);
                    }
                }
                let etas: Vec<u64> = mirrors.iter().map(|m| m.eta()).collect();
                let r = ratio_vector_lcsh(&etas, config.delta, config.eps, config.mode, &densities);
                let llr = etas
                    .iter()
                    .map(|&eta| libm::log((eta as f64 * config.delta).max(config.eps_cusum)))
                    .collect();
                Ok((r, llr))
            }
            _ => Err(Error::Unsupported(alloc::format!(
                "fusion input does not match the {} setting",
                self.setting
            ))),
        }
    }

    /// Processes one slot and reports whether to stop.
    pub fn step<R: Rng + ?Sized>(&mut self, input: FusionInput<'_>, rng: &mut R) -> Result<Decision> {
        let (r, llr) = self.ratios(input)?;
        self.k += 1;
        let coeffs = &self.coeffs;
        match &mut self.charts {
            Charts::Uniform(chart) => {
                chart.advance(&delta_uniform(&r), coeffs)?;
                self.stat = chart.stopping_stat();
            }
            Charts::Multi(charts) => {
                let (mut best, mut winner) = (f64::NEG_INFINITY, 0);
                for (j, (pattern, chart)) in charts.iter_mut().enumerate() {
                    chart.advance(&delta_pattern(&r, pattern), coeffs)?;
                    let s = chart.stopping_stat();
                    if s > best {
                        best = s;
                        winner = j;
                    }
                }
                self.stat = best;
                self.winner = winner;
            }
            Charts::Estimated { chart, cusum, estimate } => {
                for (c, l) in cusum.iter_mut().zip(&llr) {
                    *c = cusum_update(*c, *l);
                }
                let pattern = estimate_pattern(cusum, self.xi, rng);
                chart.advance(&delta_pattern(&r, &pattern), coeffs)?;
                *estimate = Some(pattern);
                self.stat = chart.stopping_stat();
            }
            Charts::Known(pattern, chart) => {
                chart.advance(&delta_pattern(&r, pattern), coeffs)?;
                self.stat = chart.stopping_stat();
            }
            Charts::Single(sensor, chart) => {
                chart.advance(&[1.0, r.as_slice()[*sensor]], coeffs)?;
                self.stat = chart.stopping_stat();
            }
        }
        Ok(if self.stat >= self.beta {
            Decision::Stop { k: self.k }
        } else {
            Decision::Continue
        })
    }
}

/// Per-sensor CUSUM increment for one slot of fusion-center information.
pub fn step_llr(setting: Setting, value: StepValue, params: &ModelParams, config: &DetectorConfig) -> Result<f64> {
    match (setting, value) {
        (Setting::Centralized, StepValue::Measurement(z)) => Ok(params.densities().log_likelihood_ratio(z)),
        (Setting::Us, StepValue::Symbol(u)) => {
            let q = config
                .quantizer
                .as_ref()
                .ok_or_else(|| Error::Unsupported("the us setting needs a quantizer".to_string()))?;
            let pmfs = induced_pmfs(q, &params.densities())?;
            if u >= pmfs.alphabet_size() {
                return Err(Error::invalid("symbol", "outside the quantizer alphabet"));
            }
            Ok(libm::log(pmfs.ratio(u)?))
        }
        (Setting::Lcsh, StepValue::Level(eta)) => {
            let lc = config
                .lcsh
                .ok_or_else(|| Error::Unsupported("the lcsh setting needs a level spacing".to_string()))?;
            Ok(libm::log((eta as f64 * lc.delta).max(lc.eps_cusum)))
        }
        _ => Err(Error::Unsupported("value does not match the setting".to_string())),
    }
}

/// A single sensor's slot information, for [`step_llr`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepValue {
    Measurement(f64),
    Symbol(usize),
    Level(u64),
}
