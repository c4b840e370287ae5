//! Experiment configuration: a TOML file, `key=value` overrides and
//! validation that names the offending key.

use std::fmt::Write as _;
use std::path::Path;

use mscd_core::detectors::{Scheme, Setting, MAX_ENUMERATED_SENSORS};
use mscd_core::dp::{Lookup, MAX_DP_SENSORS};
use mscd_core::stats::LcshRatioMode;
use serde::{Deserialize, Serialize};

use crate::harness::DpProcess;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("{}{message}", key.as_ref().map(|k| format!("key `{k}`: ")).unwrap_or_default())]
    Parse { key: Option<String>, message: String },
    #[error("key `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    fn invalid(key: &str, reason: impl Into<String>) -> Self {
        Self::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }

    /// Key the error is about, when known.
    pub fn key(&self) -> Option<&str> {
        match self {
            Self::Read { .. } => None,
            Self::Parse { key, .. } => key.as_deref(),
            Self::Invalid { key, .. } => Some(key),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub sensors: usize,
    pub rho: f64,
    #[serde(with = "one_or_many")]
    pub lambda: Vec<f64>,
    pub mu: f64,
    #[serde(with = "names")]
    pub scheme: Vec<Scheme>,
    #[serde(with = "names")]
    pub setting: Vec<Setting>,
    #[serde(with = "one_or_many")]
    pub alpha: Vec<f64>,
    pub xi: f64,
    pub trials: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub horizon: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
    pub alphabet: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threshold: Option<Vec<f64>>,
    pub trial: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    pub lcsh: LcshSection,
    pub dp: DpSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sensors: 3,
            rho: 0.01,
            lambda: vec![0.3],
            mu: 1.0,
            scheme: vec![Scheme::Multichart],
            setting: vec![Setting::Centralized],
            alpha: vec![0.1, 0.01, 0.001],
            xi: 3.0,
            trials: 1000,
            seed: 1,
            horizon: None,
            workers: None,
            alphabet: 2,
            threshold: None,
            trial: 0,
            out: None,
            lcsh: LcshSection::default(),
            dp: DpSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LcshSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    pub eps: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps_cusum: Option<f64>,
    pub mode: String,
    pub target_rate: f64,
    pub rate_tol: f64,
    pub calibration_alpha: f64,
}

impl Default for LcshSection {
    fn default() -> Self {
        Self {
            delta: None,
            eps: 0.0,
            eps_cusum: None,
            mode: "lr-identity".into(),
            target_rate: 1.0,
            rate_tol: 0.05,
            calibration_alpha: 0.01,
        }
    }
}

impl LcshSection {
    pub fn ratio_mode(&self) -> Result<LcshRatioMode, ConfigError> {
        match self.mode.as_str() {
            "lr-identity" => Ok(LcshRatioMode::LrIdentity),
            "band-probability" => Ok(LcshRatioMode::BandProbability),
            other => Err(ConfigError::invalid(
                "lcsh.mode",
                format!("unknown mode `{other}`, expected lr-identity or band-probability"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpSection {
    pub sensors: usize,
    pub rho: f64,
    pub lambda: f64,
    pub cost: f64,
    pub resolution: usize,
    pub epsilon: f64,
    pub info: String,
    pub samples: usize,
    pub max_iterations: usize,
    pub lookup: String,
    pub process: String,
    pub risk_trials: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub table: Option<String>,
}

impl Default for DpSection {
    fn default() -> Self {
        Self {
            sensors: 2,
            rho: 0.3,
            lambda: 0.5,
            cost: 0.05,
            resolution: 20,
            epsilon: 1e-4,
            info: "us".into(),
            samples: 2000,
            max_iterations: 100_000,
            lookup: "linear".into(),
            process: "exchangeable".into(),
            risk_trials: 0,
            table: None,
        }
    }
}

impl DpSection {
    pub fn centralized(&self) -> Result<bool, ConfigError> {
        match self.info.as_str() {
            "us" => Ok(false),
            "centralized" => Ok(true),
            other => Err(ConfigError::invalid(
                "dp.info",
                format!("unknown information `{other}`, expected us or centralized"),
            )),
        }
    }

    pub fn lookup_mode(&self) -> Result<Lookup, ConfigError> {
        match self.lookup.as_str() {
            "linear" => Ok(Lookup::Linear),
            "nearest" => Ok(Lookup::Nearest),
            other => Err(ConfigError::invalid(
                "dp.lookup",
                format!("unknown lookup `{other}`, expected linear or nearest"),
            )),
        }
    }

    pub fn process_kind(&self) -> Result<DpProcess, ConfigError> {
        match self.process.as_str() {
            "exchangeable" => Ok(DpProcess::Exchangeable),
            "fixed-pattern" => Ok(DpProcess::FixedPattern),
            other => Err(ConfigError::invalid(
                "dp.process",
                format!("unknown process `{other}`, expected exchangeable or fixed-pattern"),
            )),
        }
    }
}

/// Every configuration key with a one-line description, in help order.
pub const KEYS: &[(&str, &str)] = &[
    ("sensors", "number of sensors L"),
    ("rho", "geometric parameter of the first change time"),
    ("lambda", "propagation parameter; a list runs one curve per value"),
    ("mu", "post-change mean shift"),
    (
        "scheme",
        "uniform-prior, multichart, estimation-based, known-pattern, mismatched, single-sensor (one or a list)",
    ),
    ("setting", "centralized, us or lcsh (one or a list)"),
    ("alpha", "target false-alarm levels; beta = log(1/(rho alpha))"),
    ("xi", "CUSUM grouping threshold of the estimation-based scheme"),
    ("trials", "Monte Carlo trials per curve (at least 100)"),
    ("seed", "master seed"),
    ("horizon", "slot cap per trial; unset means ceil(50/rho)"),
    ("workers", "worker threads; unset lets the pool decide"),
    ("alphabet", "message alphabet size U of the us setting"),
    (
        "threshold",
        "observation-domain quantizer thresholds; unset means K-L optimized",
    ),
    ("trial", "trial index traced by simulate-one"),
    ("out", "output path; unset writes CSV to stdout"),
    ("lcsh.delta", "level spacing; unset means calibrate to lcsh.target_rate"),
    ("lcsh.eps", "lower clamp on reported levels in the statistic"),
    (
        "lcsh.eps_cusum",
        "lower clamp on reported levels in the CUSUM; unset means delta/2",
    ),
    ("lcsh.mode", "lr-identity or band-probability"),
    ("lcsh.target_rate", "calibration target in bits per sensor per slot"),
    ("lcsh.rate_tol", "calibration tolerance on the rate"),
    (
        "lcsh.calibration_alpha",
        "false-alarm level whose threshold is used while calibrating",
    ),
    ("dp.sensors", "sensors of the value-iteration model (at most 3)"),
    ("dp.rho", "rho of the value-iteration model (below 1)"),
    ("dp.lambda", "lambda of the value-iteration model"),
    ("dp.cost", "delay cost c per slot"),
    ("dp.resolution", "simplex grid resolution m"),
    ("dp.epsilon", "sup-norm stopping gap"),
    ("dp.info", "us (binary quantizers) or centralized"),
    (
        "dp.samples",
        "Monte Carlo samples of the centralized one-slot expectation",
    ),
    ("dp.max_iterations", "iteration cap"),
    ("dp.lookup", "linear or nearest reading of the grid between points"),
    (
        "dp.process",
        "exchangeable or fixed-pattern change process for risk simulation",
    ),
    (
        "dp.risk_trials",
        "trials of the risk simulation after solving; 0 skips it",
    ),
    ("dp.table", "value table CSV to load instead of solving"),
];

fn flatten(prefix: &str, table: &toml::Table, out: &mut Vec<(String, String)>) {
    for (k, v) in table {
        let key = if prefix.is_empty() {
            k.clone()
        } else {
            format!("{prefix}.{k}")
        };
        match v {
            toml::Value::Table(t) => flatten(&key, t, out),
            v => out.push((key, v.to_string())),
        }
    }
}

/// Dotted keys of the default configuration with their values as TOML.
pub fn default_values() -> Vec<(String, String)> {
    let table = toml::Table::try_from(ExperimentConfig::default()).expect("defaults serialize");
    let mut out = Vec::new();
    flatten("", &table, &mut out);
    out
}

/// Key listing for `--help`.
pub fn keys_help() -> String {
    let defaults = default_values();
    let mut s = String::from("Configuration keys (file or --set key=value):\n");
    for (key, what) in KEYS {
        let default = defaults
            .iter()
            .find(|(k, _)| k == key)
            .map_or("unset", |(_, v)| v.as_str());
        let _ = writeln!(s, "  {key:<24} [default: {default}]  {what}");
    }
    s
}

fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies `key=value`; `key` may be dotted and `value` is read as TOML,
/// falling back to a bare string.
pub fn apply_set(table: &mut toml::Table, assignment: &str) -> Result<(), ConfigError> {
    let Some((key, raw)) = assignment.split_once('=') else {
        return Err(ConfigError::Parse {
            key: None,
            message: format!("override `{assignment}` is not key=value"),
        });
    };
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::invalid(key, "empty key segment"));
    }
    let mut node = table;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::invalid(key, format!("`{part}` is not a section")))?;
    }
    node.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Recovers the dotted key at a byte offset of a TOML document.
fn key_at(text: &str, offset: usize) -> Option<String> {
    let mut section = String::new();
    let mut key = None;
    let mut pos = 0;
    for line in text.split_inclusive('\n') {
        let t = line.trim();
        if t.starts_with('[') {
            section = t.trim_matches(|c| c == '[' || c == ']').trim().to_string();
            key = None;
        } else if let Some((k, _)) = t.split_once('=') {
            let k = k.trim().trim_matches('"');
            key = Some(if section.is_empty() {
                k.to_string()
            } else {
                format!("{section}.{k}")
            });
        }
        pos += line.len();
        if pos > offset {
            break;
        }
    }
    key.or((!section.is_empty()).then_some(section))
}

impl ExperimentConfig {
    /// Parses a document, reporting the key an error belongs to.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            key: e.span().and_then(|s| key_at(text, s.start)),
            message: e.message().to_string(),
        })
    }

    /// Reads `path` (or starts from defaults), applies the overrides in
    /// order, then validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|source| ConfigError::Read {
                path: p.display().to_string(),
                source,
            })?,
            None => String::new(),
        };
        if overrides.is_empty() {
            let cfg = Self::parse(&text)?;
            cfg.validate()?;
            return Ok(cfg);
        }
        // Surface syntax and key errors against the file before merging.
        Self::parse(&text)?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| ConfigError::Parse {
            key: None,
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_set(&mut table, o)?;
        }
        let merged = toml::to_string(&table).map_err(|e| ConfigError::Parse {
            key: None,
            message: e.to_string(),
        })?;
        let cfg = Self::parse(&merged)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
            ConfigError::invalid(key, reason)
        }
        if self.sensors == 0 {
            return Err(bad("sensors", "need at least one sensor"));
        }
        if !(self.rho > 0.0 && self.rho <= 1.0) {
            return Err(bad("rho", "must lie in (0, 1]"));
        }
        if self.lambda.is_empty() || self.lambda.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(bad("lambda", "need one or more values in [0, 1]"));
        }
        if !(self.mu.is_finite() && self.mu > 0.0) {
            return Err(bad("mu", "must be positive and finite"));
        }
        if self.scheme.is_empty() {
            return Err(bad("scheme", "need at least one scheme"));
        }
        if self.setting.is_empty() {
            return Err(bad("setting", "need at least one setting"));
        }
        let enumerated = self
            .scheme
            .iter()
            .any(|s| matches!(s, Scheme::UniformPrior | Scheme::Multichart));
        if enumerated && self.sensors > MAX_ENUMERATED_SENSORS {
            return Err(bad(
                "sensors",
                format!("the chosen schemes support at most {MAX_ENUMERATED_SENSORS} sensors"),
            ));
        }
        if self.alpha.is_empty() || self.alpha.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(bad("alpha", "need one or more values in (0, 1)"));
        }
        if !(self.xi.is_finite() && self.xi > 0.0) {
            return Err(bad("xi", "must be positive"));
        }
        if self.trials < 100 {
            return Err(bad("trials", "need at least 100"));
        }
        if self.horizon == Some(0) {
            return Err(bad("horizon", "must be at least 1"));
        }
        if self.workers == Some(0) {
            return Err(bad("workers", "must be at least 1"));
        }
        if self.alphabet < 2 {
            return Err(bad("alphabet", "need at least 2 symbols"));
        }
        if let Some(t) = &self.threshold {
            if t.len() + 1 != self.alphabet {
                return Err(bad(
                    "threshold",
                    format!("need alphabet - 1 = {} values", self.alphabet - 1),
                ));
            }
            if t.iter().any(|v| !v.is_finite()) || t.windows(2).any(|w| w[0] >= w[1]) {
                return Err(bad("threshold", "values must be finite and increasing"));
            }
        }
        let l = &self.lcsh;
        if let Some(d) = l.delta {
            if !(d.is_finite() && d > 0.0) {
                return Err(bad("lcsh.delta", "must be positive"));
            }
        }
        if !(l.eps >= 0.0 && l.eps.is_finite()) {
            return Err(bad("lcsh.eps", "must be nonnegative"));
        }
        if let Some(e) = l.eps_cusum {
            if !(e.is_finite() && e > 0.0) {
                return Err(bad("lcsh.eps_cusum", "must be positive"));
            }
        }
        l.ratio_mode()?;
        if !(l.target_rate.is_finite() && l.target_rate > 0.0) {
            return Err(bad("lcsh.target_rate", "must be positive"));
        }
        if !(l.rate_tol.is_finite() && l.rate_tol > 0.0) {
            return Err(bad("lcsh.rate_tol", "must be positive"));
        }
        if !(l.calibration_alpha > 0.0 && l.calibration_alpha < 1.0) {
            return Err(bad("lcsh.calibration_alpha", "must lie in (0, 1)"));
        }
        let d = &self.dp;
        if d.sensors == 0 || d.sensors > MAX_DP_SENSORS {
            return Err(bad("dp.sensors", format!("must lie in 1..={MAX_DP_SENSORS}")));
        }
        if !(d.rho > 0.0 && d.rho < 1.0) {
            return Err(bad("dp.rho", "must lie in (0, 1)"));
        }
        if !(0.0..=1.0).contains(&d.lambda) {
            return Err(bad("dp.lambda", "must lie in [0, 1]"));
        }
        if !(d.cost.is_finite() && d.cost > 0.0) {
            return Err(bad("dp.cost", "must be positive"));
        }
        if d.resolution < 2 {
            return Err(bad("dp.resolution", "must be at least 2"));
        }
        if !(d.epsilon.is_finite() && d.epsilon > 0.0) {
            return Err(bad("dp.epsilon", "must be positive"));
        }
        d.centralized()?;
        if d.samples == 0 {
            return Err(bad("dp.samples", "must be at least 1"));
        }
        if d.max_iterations == 0 {
            return Err(bad("dp.max_iterations", "must be at least 1"));
        }
        d.lookup_mode()?;
        d.process_kind()?;
        if d.risk_trials > 0 && d.risk_trials < 100 {
            return Err(bad("dp.risk_trials", "need 0 or at least 100"));
        }
        Ok(())
    }
}

mod one_or_many {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        One(f64),
        Many(Vec<f64>),
    }

    pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
        v.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
        Ok(match Either::deserialize(d)? {
            Either::One(x) => vec![x],
            Either::Many(v) => v,
        })
    }
}

mod names {
    use std::fmt::Display;
    use std::str::FromStr;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serializer};

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Either {
        One(String),
        Many(Vec<String>),
    }

    pub fn serialize<T: Display, S: Serializer>(v: &[T], s: S) -> Result<S::Ok, S::Error> {
        s.collect_seq(v.iter().map(ToString::to_string))
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Vec<T>, D::Error>
    where
        T: FromStr,
        T::Err: Display,
        D: Deserializer<'de>,
    {
        let raw = match Either::deserialize(d)? {
            Either::One(x) => vec![x],
            Either::Many(v) => v,
        };
        raw.iter().map(|s| s.parse().map_err(D::Error::custom)).collect()
    }
}
