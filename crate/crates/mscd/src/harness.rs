//! Monte Carlo engine: seeded trials, operating-point estimation, α sweeps,
//! slope fits, LCSH spacing calibration and DP-policy risk estimation.
//!
//! Every trial owns two ChaCha8 streams derived from the master seed: stream
//! `2i` drives the scenario (pattern, change times, measurements) and stream
//! `2i + 1` drives the detector's internal randomness. Trial `i` therefore
//! sees the same measurements under every scheme, setting and threshold, and
//! results do not depend on how trials are spread over workers.

use mscd_core::detectors::{Decision, Detector, DetectorConfig, FusionInput, LcshConfig, Setting};
use mscd_core::dp::DpPolicy;
use mscd_core::lcsh::{encode_burst, LcshBurst, LcshChannelState};
use mscd_core::model::{sample_change_times, sample_pattern, ChangePattern, MeasurementStream, ModelParams};
use mscd_core::quantizer::quantize;
use mscd_core::stats::beta_for_alpha;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

/// Bits charged per raw measurement in the centralized setting.
pub const CENTRALIZED_BITS_PER_SAMPLE: u64 = 64;

/// Two-sided 95% normal quantile.
const Z95: f64 = 1.959_963_984_540_054;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Core(#[from] mscd_core::Error),
    #[error("every one of the {0} trials was censored")]
    AllCensored(usize),
    #[error("need at least {needed} trials, got {got}")]
    TooFewTrials { needed: usize, got: usize },
    #[error("slope fit needs at least 3 points with distinct alpha")]
    DegenerateFit,
    #[error("communication rate does not straddle {target} over the bracket: {rate_lo} at delta={lo}, {rate_hi} at delta={hi}")]
    Bracket {
        target: f64,
        lo: f64,
        hi: f64,
        rate_lo: f64,
        rate_hi: f64,
    },
    #[error("thread pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;

/// Model, detector and horizon cap of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialSpec {
    pub params: ModelParams,
    pub detector: DetectorConfig,
    pub horizon: u64,
}

impl TrialSpec {
    /// Uses the default horizon cap of `50/ρ` slots.
    pub fn new(params: ModelParams, detector: DetectorConfig) -> Self {
        let horizon = default_horizon(params.rho());
        Self {
            params,
            detector,
            horizon,
        }
    }
}

pub fn default_horizon(rho: f64) -> u64 {
    (50.0 / rho).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub trials: usize,
    pub seed: u64,
    /// Worker threads; `None` lets rayon decide.
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrialResult {
    /// Stop time, or the horizon cap when censored.
    pub tau: u64,
    pub censored: bool,
    pub gamma1: u64,
    pub false_alarm: bool,
    pub delay: u64,
    pub bits_sent: u64,
    pub slots: u64,
}

/// One slot of a traced trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub k: u64,
    pub stat: f64,
    pub winning_chart: usize,
    pub cusum: Option<Vec<f64>>,
    pub estimate: Option<ChangePattern>,
    /// Burst bits per sensor (LCSH only; `None` for silent sensors).
    pub bursts: Option<Vec<Option<String>>>,
    pub levels: Option<Vec<u64>>,
}

fn streams(seed: u64, trial_index: u64) -> (ChaCha8Rng, ChaCha8Rng) {
    let mut scenario = ChaCha8Rng::seed_from_u64(seed);
    scenario.set_stream(2 * trial_index);
    let mut detector = ChaCha8Rng::seed_from_u64(seed);
    detector.set_stream(2 * trial_index + 1);
    (scenario, detector)
}

fn bits_per_slot(setting: Setting, sensors: usize, alphabet: usize) -> u64 {
    match setting {
        Setting::Centralized => CENTRALIZED_BITS_PER_SAMPLE * sensors as u64,
        Setting::Us => (alphabet as f64).log2().ceil() as u64 * sensors as u64,
        Setting::Lcsh => 0,
    }
}

/// Runs one trial against several thresholds at once. Stop times are
/// nondecreasing in the threshold, so a single pass up to the largest one
/// serves them all; entry `j` of the result belongs to `betas[j]`.
pub fn run_trial_multi(
    spec: &TrialSpec,
    betas: &[f64],
    seed: u64,
    trial_index: u64,
    mut trace: Option<&mut dyn FnMut(&TraceStep)>,
) -> Result<Vec<TrialResult>> {
    let params = &spec.params;
    let l = params.sensors();
    let (mut srng, mut drng) = streams(seed, trial_index);
    let pattern = sample_pattern(l, &mut srng)?;
    let times = sample_change_times(params, &pattern, &mut srng)?;
    let gamma1 = times.first();
    let mut stream = MeasurementStream::new(params.densities(), times);

    // The detector's own threshold is unused; stops are decided here.
    let config = spec.detector.with_beta(f64::MAX);
    let mut detector = Detector::new(&config, params, Some(&pattern))?;
    let densities = params.densities();
    let quantizer = config.quantizer.clone();
    let alphabet = quantizer.as_ref().map_or(2, |q| q.alphabet_size());
    let fixed_bits = bits_per_slot(config.setting, l, alphabet);
    let mut encoders = match config.lcsh {
        Some(LcshConfig { delta, .. }) if config.setting == Setting::Lcsh => {
            vec![LcshChannelState::new(delta)?; l]
        }
        _ => Vec::new(),
    };

    let mut row = vec![0.0; l];
    let mut symbols = vec![0usize; l];
    let mut bursts: Vec<Option<LcshBurst>> = vec![None; l];
    let mut results: Vec<Option<TrialResult>> = vec![None; betas.len()];
    let mut open = betas.len();
    let mut bits = 0u64;
    let record = |k: u64, bits: u64, censored: bool| TrialResult {
        tau: k,
        censored,
        gamma1,
        false_alarm: !censored && k < gamma1,
        delay: if censored { 0 } else { k.saturating_sub(gamma1) },
        bits_sent: bits,
        slots: k,
    };

    let mut k = 0;
    while open > 0 && k < spec.horizon {
        k = stream.next_row(&mut row, &mut srng);
        bits += fixed_bits;
        let input = match config.setting {
            Setting::Centralized => FusionInput::Measurements(&row),
            Setting::Us => {
                let q = quantizer.as_ref().expect("validated by the detector");
                for (u, &z) in symbols.iter_mut().zip(&row) {
                    *u = quantize(z, q, &densities);
                }
                FusionInput::Symbols(&symbols)
            }
            Setting::Lcsh => {
                for ((b, enc), &z) in bursts.iter_mut().zip(encoders.iter_mut()).zip(&row) {
                    *b = enc.step(densities.likelihood_ratio(z))?;
                    bits += b.map_or(0, |b| b.bit_count());
                }
                FusionInput::Bursts(&bursts)
            }
        };
        let decision = detector.step(input, &mut drng)?;
        debug_assert_eq!(decision, Decision::Continue);
        if let Some(cb) = trace.as_mut() {
            cb(&TraceStep {
                k,
                stat: detector.stat(),
                winning_chart: detector.winning_chart(),
                cusum: detector.cusum().map(<[f64]>::to_vec),
                estimate: detector.estimate().cloned(),
                bursts: (config.setting == Setting::Lcsh)
                    .then(|| bursts.iter().map(|b| b.as_ref().map(encode_burst)).collect()),
                levels: detector.levels(),
            });
        }
        let stat = detector.stat();
        for (slot, &beta) in results.iter_mut().zip(betas) {
            if slot.is_none() && stat >= beta {
                *slot = Some(record(k, bits, false));
                open -= 1;
            }
        }
    }
    Ok(results
        .into_iter()
        .map(|r| r.unwrap_or_else(|| record(k, bits, true)))
        .collect())
}

pub fn run_trial(spec: &TrialSpec, seed: u64, trial_index: u64) -> Result<TrialResult> {
    Ok(run_trial_multi(spec, &[spec.detector.beta], seed, trial_index, None)?[0])
}

fn with_pool<T: Send>(workers: Option<usize>, job: impl FnOnce() -> T + Send) -> Result<T> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = workers {
        builder = builder.num_threads(w.max(1));
    }
    Ok(builder.build()?.install(job))
}

/// All trials of a run, `result[i][j]` being trial `i` at `betas[j]`.
pub fn run_trials(spec: &TrialSpec, betas: &[f64], opts: &RunOptions) -> Result<Vec<Vec<TrialResult>>> {
    // Fail fast on configuration errors before fanning out.
    Detector::new(
        &spec.detector.with_beta(f64::MAX),
        &spec.params,
        Some(&ChangePattern::identity(spec.params.sensors())),
    )?;
    with_pool(opts.workers, || {
        (0..opts.trials as u64)
            .into_par_iter()
            .map(|i| run_trial_multi(spec, betas, opts.seed, i, None))
            .collect::<Result<Vec<_>>>()
    })?
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TradeoffPoint {
    pub alpha: f64,
    pub beta: f64,
    pub trials: usize,
    pub censored: usize,
    pub pfa: f64,
    pub pfa_ci: f64,
    /// `E[(τ - Γ)^+]` over uncensored trials.
    pub add: f64,
    pub add_ci: f64,
    /// Mean delay over trials that stopped at or after the change.
    pub cond_delay: f64,
    pub cond_delay_ci: f64,
    /// Bits per sensor per slot.
    pub comm_rate: f64,
}

fn mean_ci(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut n, mut sum, mut sum_sq) = (0usize, 0.0, 0.0);
    for v in values {
        n += 1;
        sum += v;
        sum_sq += v * v;
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = sum / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = ((sum_sq - n as f64 * mean * mean) / (n as f64 - 1.0)).max(0.0);
    (mean, Z95 * (var / n as f64).sqrt())
}

/// Aggregates trials that ran at one threshold. `alpha` is carried along for
/// reporting only.
pub fn aggregate(alpha: f64, beta: f64, sensors: usize, results: &[TrialResult]) -> Result<TradeoffPoint> {
    let trials = results.len();
    let censored = results.iter().filter(|r| r.censored).count();
    if censored == trials {
        return Err(HarnessError::AllCensored(trials));
    }
    let fa = results.iter().filter(|r| r.false_alarm).count();
    let pfa = fa as f64 / trials as f64;
    let pfa_ci = Z95 * (pfa * (1.0 - pfa) / trials as f64).sqrt();
    let uncensored = || results.iter().filter(|r| !r.censored);
    let (add, add_ci) = mean_ci(uncensored().map(|r| r.delay as f64));
    let (cond_delay, cond_delay_ci) = mean_ci(uncensored().filter(|r| r.tau >= r.gamma1).map(|r| r.delay as f64));
    let bits: u64 = results.iter().map(|r| r.bits_sent).sum();
    let slots: u64 = results.iter().map(|r| r.slots).sum();
    Ok(TradeoffPoint {
        alpha,
        beta,
        trials,
        censored,
        pfa,
        pfa_ci,
        add,
        add_ci,
        cond_delay,
        cond_delay_ci,
        comm_rate: bits as f64 / (sensors as f64 * slots as f64),
    })
}

const MIN_TRIALS: usize = 100;

fn check_trials(trials: usize) -> Result<()> {
    if trials < MIN_TRIALS {
        return Err(HarnessError::TooFewTrials {
            needed: MIN_TRIALS,
            got: trials,
        });
    }
    Ok(())
}

/// Operating point at threshold `beta`; `alpha` is reported as
/// `exp(-beta)/ρ`, the level the threshold guarantees.
pub fn estimate_operating_point(spec: &TrialSpec, beta: f64, opts: &RunOptions) -> Result<TradeoffPoint> {
    check_trials(opts.trials)?;
    let runs = run_trials(spec, &[beta], opts)?;
    let results: Vec<TrialResult> = runs.iter().map(|r| r[0]).collect();
    let alpha = (-beta).exp() / spec.params.rho();
    aggregate(alpha, beta, spec.params.sensors(), &results)
}

/// One operating point per α with `β = log(1/(ρα))`, all on the same trials.
pub fn sweep_alpha(spec: &TrialSpec, alphas: &[f64], opts: &RunOptions) -> Result<Vec<TradeoffPoint>> {
    check_trials(opts.trials)?;
    let rho = spec.params.rho();
    let betas = alphas
        .iter()
        .map(|&a| beta_for_alpha(rho, a))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let runs = run_trials(spec, &betas, opts)?;
    alphas
        .iter()
        .zip(&betas)
        .enumerate()
        .map(|(j, (&alpha, &beta))| {
            let results: Vec<TrialResult> = runs.iter().map(|r| r[j]).collect();
            aggregate(alpha, beta, spec.params.sensors(), &results)
        })
        .collect()
}

/// Least-squares slope of ADD against `|log α|`.
pub fn fit_slope(points: &[TradeoffPoint]) -> Result<f64> {
    if points.len() < 3 {
        return Err(HarnessError::DegenerateFit);
    }
    let xs: Vec<f64> = points.iter().map(|p| p.alpha.ln().abs()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = points.iter().map(|p| p.add).sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx <= f64::EPSILON * mx.abs().max(1.0) {
        return Err(HarnessError::DegenerateFit);
    }
    let sxy: f64 = xs.iter().zip(points).map(|(x, p)| (x - mx) * (p.add - my)).sum();
    Ok(sxy / sxx)
}

/// ADD and its CI half-width at empirical false-alarm probability `target`,
/// read off a tradeoff curve by interpolating linearly in `log PFA` between
/// the first pair of neighbouring points (ordered by threshold) that
/// brackets it.
pub fn add_at_pfa(points: &[TradeoffPoint], target: f64) -> Option<(f64, f64)> {
    let mut sorted: Vec<&TradeoffPoint> = points.iter().collect();
    sorted.sort_by(|a, b| a.beta.total_cmp(&b.beta));
    sorted.windows(2).find_map(|w| {
        let (a, b) = (w[0], w[1]);
        if !(a.pfa >= target && target >= b.pfa && b.pfa > 0.0) {
            return None;
        }
        if a.pfa == b.pfa {
            return Some((a.add, a.add_ci));
        }
        let t = (a.pfa.ln() - target.ln()) / (a.pfa.ln() - b.pfa.ln());
        Some((a.add + t * (b.add - a.add), a.add_ci + t * (b.add_ci - a.add_ci)))
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub delta: f64,
    pub rate: f64,
    pub evaluations: usize,
}

/// Bracket for the LCSH level spacing.
pub const DELTA_BRACKET: (f64, f64) = (1e-3, 1e2);

/// Communication rate of an LCSH run at level spacing `delta`.
pub fn lcsh_rate(spec: &TrialSpec, delta: f64, opts: &RunOptions) -> Result<f64> {
    let mut s = spec.clone();
    let mut lc = s.detector.lcsh.unwrap_or_else(|| LcshConfig::new(delta));
    // Keep the CUSUM clamp at the same fraction of the spacing.
    lc.eps_cusum *= delta / lc.delta;
    lc.delta = delta;
    s.detector.lcsh = Some(lc);
    s.detector.setting = Setting::Lcsh;
    let beta = s.detector.beta;
    Ok(estimate_operating_point(&s, beta, opts)?.comm_rate)
}

/// Bisection in `log Δ` for the spacing whose measured rate (full trials at
/// the detector's threshold) is within `tol` of `target`.
pub fn calibrate_delta(spec: &TrialSpec, target: f64, tol: f64, opts: &RunOptions) -> Result<Calibration> {
    // Grow a bracket outward from the configured spacing by factors of two;
    // far-off spacings make every trial run to the horizon.
    let start = spec
        .detector
        .lcsh
        .map_or(1.0, |c| c.delta)
        .clamp(DELTA_BRACKET.0, DELTA_BRACKET.1);
    let mut evaluations = 1;
    let rate0 = lcsh_rate(spec, start, opts)?;
    let (mut lo, mut hi, mut rate_lo, mut rate_hi) = (start, start, rate0, rate0);
    while rate_lo < target && lo > DELTA_BRACKET.0 {
        (hi, rate_hi) = (lo, rate_lo);
        lo = (lo / 2.0).max(DELTA_BRACKET.0);
        rate_lo = lcsh_rate(spec, lo, opts)?;
        evaluations += 1;
    }
    while rate_hi > target && hi < DELTA_BRACKET.1 {
        (lo, rate_lo) = (hi, rate_hi);
        hi = (hi * 2.0).min(DELTA_BRACKET.1);
        rate_hi = lcsh_rate(spec, hi, opts)?;
        evaluations += 1;
    }
    if !(rate_lo >= target && rate_hi <= target) {
        return Err(HarnessError::Bracket {
            target,
            lo,
            hi,
            rate_lo,
            rate_hi,
        });
    }
    let mut best = if (rate_lo - target).abs() < (rate_hi - target).abs() {
        (lo, rate_lo)
    } else {
        (hi, rate_hi)
    };
    for _ in 0..60 {
        if (best.1 - target).abs() <= tol {
            break;
        }
        let mid = (lo * hi).sqrt();
        let rate = lcsh_rate(spec, mid, opts)?;
        evaluations += 1;
        if (rate - target).abs() < (best.1 - target).abs() {
            best = (mid, rate);
        }
        if rate > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration {
        delta: best.0,
        rate: best.1,
        evaluations,
    })
}

/// Which measurements feed the DP rule in risk simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DpChannel {
    Centralized,
    Quantized,
}

/// Change process used when simulating the DP rule. `Exchangeable` redraws
/// which sensors are post-change at every slot, keeping only the count; that
/// is the process the count-state value function describes exactly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DpProcess {
    FixedPattern,
    #[default]
    Exchangeable,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RiskEstimate {
    pub risk: f64,
    pub ci: f64,
    pub pfa: f64,
    pub add: f64,
    pub trials: usize,
    pub censored: usize,
}

/// Outcome of one trial under the DP rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpTrial {
    pub tau: u64,
    pub gamma1: u64,
    pub censored: bool,
}

pub fn run_dp_trial(
    policy: &DpPolicy,
    params: &ModelParams,
    channel: DpChannel,
    process: DpProcess,
    horizon: u64,
    seed: u64,
    trial_index: u64,
) -> Result<DpTrial> {
    let l = params.sensors();
    let densities = params.densities();
    let (mut srng, _) = streams(seed, trial_index);
    let pattern = sample_pattern(l, &mut srng)?;
    let times = sample_change_times(params, &pattern, &mut srng)?;
    let gamma1 = times.first();
    let mut stream = MeasurementStream::new(densities, times);
    let mut q = policy.initial();
    let mut row = vec![0.0; l];
    let mut symbols = vec![0usize; l];
    if policy.should_stop(&q) {
        return Ok(DpTrial {
            tau: 0,
            gamma1,
            censored: false,
        });
    }
    while stream.next_time() <= horizon {
        let spec = policy.quantizer(&q)?;
        let k = stream.next_row(&mut row, &mut srng);
        if process == DpProcess::Exchangeable {
            row.shuffle(&mut srng);
        }
        q = match (channel, spec) {
            (DpChannel::Quantized, Some(spec)) => {
                for (u, &z) in symbols.iter_mut().zip(&row) {
                    *u = quantize(z, &spec, &densities);
                }
                policy.update_symbols(&q, &spec, &symbols)?
            }
            _ => policy.update_measurements(&q, &row)?,
        };
        if policy.should_stop(&q) {
            return Ok(DpTrial {
                tau: k,
                gamma1,
                censored: false,
            });
        }
    }
    Ok(DpTrial {
        tau: horizon,
        gamma1,
        censored: true,
    })
}

/// Monte Carlo Bayes risk `P(τ < Γ) + c E[(τ - Γ)^+]` of the DP rule started
/// from the no-change vertex.
pub fn simulate_dp_risk(
    policy: &DpPolicy,
    params: &ModelParams,
    cost: f64,
    channel: DpChannel,
    process: DpProcess,
    opts: &RunOptions,
) -> Result<RiskEstimate> {
    let horizon = default_horizon(params.rho()).max(1000);
    let trials = with_pool(opts.workers, || {
        (0..opts.trials as u64)
            .into_par_iter()
            .map(|i| run_dp_trial(policy, params, channel, process, horizon, opts.seed, i))
            .collect::<Result<Vec<_>>>()
    })??;
    let censored = trials.iter().filter(|t| t.censored).count();
    if censored == trials.len() {
        return Err(HarnessError::AllCensored(censored));
    }
    let done = || trials.iter().filter(|t| !t.censored);
    let loss = |t: &DpTrial| {
        if t.tau < t.gamma1 {
            1.0
        } else {
            cost * (t.tau - t.gamma1) as f64
        }
    };
    let (risk, ci) = mean_ci(done().map(loss));
    let n = (trials.len() - censored) as f64;
    Ok(RiskEstimate {
        risk,
        ci,
        pfa: done().filter(|t| t.tau < t.gamma1).count() as f64 / n,
        add: done().map(|t| t.tau.saturating_sub(t.gamma1) as f64).sum::<f64>() / n,
        trials: trials.len(),
        censored,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use mscd_core::detectors::Scheme;
    use mscd_core::model::DensityPair;

    fn params(l: usize, lambda: f64) -> ModelParams {
        ModelParams::new(l, 0.01, lambda, DensityPair::gaussian_shift(1.0).unwrap()).unwrap()
    }

    fn point(alpha: f64, add: f64) -> TradeoffPoint {
        TradeoffPoint {
            alpha,
            beta: 0.0,
            trials: 1,
            censored: 0,
            pfa: 0.1,
            pfa_ci: 0.0,
            add,
            add_ci: 0.0,
            cond_delay: add,
            cond_delay_ci: 0.0,
            comm_rate: 0.0,
        }
    }

    #[test]
    fn exact_line_slope() {
        let pts: Vec<_> = [1e-2, 1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&a: &f64| point(a, 1.0354 * a.ln().abs()))
            .collect();
        assert!((fit_slope(&pts).unwrap() - 1.0354).abs() < 1e-9);
        assert!(fit_slope(&pts[..2]).is_err());
        assert!(fit_slope(&[point(0.1, 1.0), point(0.1, 2.0), point(0.1, 3.0)]).is_err());
    }

    #[test]
    fn interpolates_add_in_log_pfa() {
        let mut a = point(0.0, 4.0);
        let mut b = point(0.0, 6.0);
        let mut c = point(0.0, 9.0);
        (a.beta, a.pfa) = (1.0, 0.1);
        (b.beta, b.pfa) = (2.0, 0.01);
        (c.beta, c.pfa) = (3.0, 0.001);
        let curve = [c, a, b];
        assert!((add_at_pfa(&curve, 0.01).unwrap().0 - 6.0).abs() < 1e-12);
        assert!((add_at_pfa(&curve, 10f64.powf(-1.5)).unwrap().0 - 5.0).abs() < 1e-12);
        assert!(add_at_pfa(&curve, 0.5).is_none());
        assert!(add_at_pfa(&curve, 1e-4).is_none());
    }

    #[test]
    fn trials_are_reproducible() {
        let spec = TrialSpec::new(
            params(3, 0.3),
            DetectorConfig::new(Scheme::EstimationBased, Setting::Centralized, 6.0),
        );
        for i in 0..20 {
            assert_eq!(run_trial(&spec, 7, i).unwrap(), run_trial(&spec, 7, i).unwrap());
        }
        assert_ne!(run_trial(&spec, 7, 0).unwrap(), run_trial(&spec, 8, 0).unwrap());
    }

    #[test]
    fn immediate_stop() {
        let spec = TrialSpec::new(
            params(2, 0.3),
            DetectorConfig::new(Scheme::UniformPrior, Setting::Centralized, f64::NEG_INFINITY),
        );
        let opts = RunOptions {
            trials: 4000,
            seed: 1,
            workers: Some(2),
        };
        let runs = run_trials(&spec, &[f64::NEG_INFINITY], &opts).unwrap();
        for r in &runs {
            assert_eq!(r[0].tau, 1);
            assert_eq!(r[0].false_alarm, r[0].gamma1 > 1);
        }
        let p = aggregate(
            0.5,
            f64::NEG_INFINITY,
            2,
            &runs.iter().map(|r| r[0]).collect::<Vec<_>>(),
        )
        .unwrap();
        let se = (0.99f64 * 0.01 / 4000.0).sqrt();
        assert!((p.pfa - 0.99).abs() < 4.0 * se);
    }

    #[test]
    fn us_rate_is_one_bit() {
        let d = DensityPair::gaussian_shift(1.0).unwrap();
        let mut cfg = DetectorConfig::new(Scheme::Multichart, Setting::Us, 5.0);
        cfg.quantizer = Some(mscd_core::quantizer::optimize_thresholds(2, &d).unwrap());
        let spec = TrialSpec::new(params(3, 0.3), cfg);
        let p = estimate_operating_point(
            &spec,
            5.0,
            &RunOptions {
                trials: 200,
                seed: 3,
                workers: None,
            },
        )
        .unwrap();
        assert_eq!(p.comm_rate, 1.0);
    }

    #[test]
    fn multi_threshold_pass_matches_single_runs() {
        let mut cfg = DetectorConfig::new(Scheme::EstimationBased, Setting::Lcsh, 0.0);
        cfg.lcsh = Some(LcshConfig::new(0.4));
        let spec = TrialSpec::new(params(3, 0.3), cfg);
        let betas = [4.0, 6.0, 9.0];
        for i in 0..30 {
            let multi = run_trial_multi(&spec, &betas, 5, i, None).unwrap();
            for (j, &b) in betas.iter().enumerate() {
                let mut s = spec.clone();
                s.detector.beta = b;
                assert_eq!(run_trial(&s, 5, i).unwrap(), multi[j]);
            }
            assert!(multi.windows(2).all(|w| w[0].tau <= w[1].tau));
        }
    }

    #[test]
    fn too_few_trials_rejected() {
        let spec = TrialSpec::new(
            params(2, 0.3),
            DetectorConfig::new(Scheme::UniformPrior, Setting::Centralized, 5.0),
        );
        let opts = RunOptions {
            trials: 10,
            seed: 0,
            workers: None,
        };
        assert!(matches!(
            estimate_operating_point(&spec, 5.0, &opts),
            Err(HarnessError::TooFewTrials { .. })
        ));
    }
}
