//! CSV formats: tradeoff curves, value tables and per-slot traces.

use std::io::{Read, Write};

use mscd_core::detectors::{Scheme, Setting};
use mscd_core::dp::{SimplexGrid, ValueTable};
use serde::{Deserialize, Serialize};

use crate::harness::{TraceStep, TradeoffPoint};

#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Core(#[from] mscd_core::Error),
    #[error("value table: {0}")]
    Table(String),
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

/// One line of a tradeoff CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub scheme: String,
    pub setting: String,
    #[serde(rename = "L")]
    pub sensors: usize,
    pub rho: f64,
    pub lambda: f64,
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub trials: usize,
    pub censored: usize,
    pub pfa: f64,
    pub pfa_ci: f64,
    pub add: f64,
    pub add_ci: f64,
    pub cond_delay: f64,
    pub cond_delay_ci: f64,
    pub comm_rate: f64,
    /// Level spacing; empty unless the setting is LCSH.
    pub delta: Option<f64>,
    pub seed: u64,
}

/// Experiment coordinates shared by every point of one curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveKey {
    pub scheme: Scheme,
    pub setting: Setting,
    pub sensors: usize,
    pub rho: f64,
    pub lambda: f64,
    pub mu: f64,
    pub delta: Option<f64>,
    pub seed: u64,
}

impl TradeoffRow {
    pub fn new(key: &CurveKey, p: &TradeoffPoint) -> Self {
        Self {
            scheme: key.scheme.to_string(),
            setting: key.setting.to_string(),
            sensors: key.sensors,
            rho: key.rho,
            lambda: key.lambda,
            mu: key.mu,
            alpha: p.alpha,
            beta: p.beta,
            trials: p.trials,
            censored: p.censored,
            pfa: p.pfa,
            pfa_ci: p.pfa_ci,
            add: p.add,
            add_ci: p.add_ci,
            cond_delay: p.cond_delay,
            cond_delay_ci: p.cond_delay_ci,
            comm_rate: p.comm_rate,
            delta: key.delta,
            seed: key.seed,
        }
    }
}

pub fn write_tradeoff_csv<W: Write>(out: W, rows: &[TradeoffRow]) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(TRADEOFF_HEADER)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_tradeoff_csv<R: Read>(input: R) -> Result<Vec<TradeoffRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub const TRADEOFF_HEADER: [&str; 19] = [
    "scheme",
    "setting",
    "L",
    "rho",
    "lambda",
    "mu",
    "alpha",
    "beta",
    "trials",
    "censored",
    "pfa",
    "pfa_ci",
    "add",
    "add_ci",
    "cond_delay",
    "cond_delay_ci",
    "comm_rate",
    "delta",
    "seed",
];

/// Writes `i0..iL, J, A, phi_opt`, one row per grid point.
pub fn write_value_table<W: Write>(out: W, table: &ValueTable) -> Result<()> {
    let l = table.grid.sensors();
    let mut w = csv::Writer::from_writer(out);
    let mut header: Vec<String> = (0..=l).map(|n| format!("i{n}")).collect();
    header.extend(["J", "A", "phi_opt"].map(String::from));
    w.write_record(&header)?;
    for pos in 0..table.grid.len() {
        let mut rec: Vec<String> = table.grid.indices(pos).iter().map(u32::to_string).collect();
        rec.push(table.j[pos].to_string());
        rec.push(table.a[pos].to_string());
        rec.push(table.phi_opt[pos].map_or_else(String::new, |t| t.to_string()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a table written by [`write_value_table`]. The sensor count comes
/// from the header and the resolution from the first row. Iteration
/// diagnostics are not stored, so they come back as `0` and NaN.
pub fn read_value_table<R: Read>(input: R) -> Result<ValueTable> {
    let mut r = csv::Reader::from_reader(input);
    let header = r.headers()?.clone();
    let cols = header.len();
    if cols < 5 || &header[cols - 3] != "J" || &header[cols - 2] != "A" || &header[cols - 1] != "phi_opt" {
        return Err(IoError::Table("header must be i0..iL,J,A,phi_opt".into()));
    }
    let l = cols - 4;
    for n in 0..=l {
        if header[n] != *format!("i{n}") {
            return Err(IoError::Table(format!("column {n} should be i{n}")));
        }
    }
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let field = |i: usize| &rec[i];
        let idx = (0..=l)
            .map(|n| field(n).parse::<u32>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| IoError::Table(format!("grid index: {e}")))?;
        let num = |i: usize| {
            field(i)
                .parse::<f64>()
                .map_err(|e| IoError::Table(format!("{}: {e}", &header[i])))
        };
        let phi = match field(cols - 1) {
            "" => None,
            s => Some(s.parse::<f64>().map_err(|e| IoError::Table(format!("phi_opt: {e}")))?),
        };
        rows.push((idx, num(cols - 3)?, num(cols - 2)?, phi));
    }
    let Some(first) = rows.first() else {
        return Err(IoError::Table("no rows".into()));
    };
    let m: u32 = first.0.iter().sum();
    let grid = SimplexGrid::new(l, m as usize)?;
    if rows.len() != grid.len() {
        return Err(IoError::Table(format!(
            "expected {} rows for L={l}, m={m}, got {}",
            grid.len(),
            rows.len()
        )));
    }
    let (mut j, mut a, mut phi) = (
        vec![f64::NAN; grid.len()],
        vec![f64::NAN; grid.len()],
        vec![None; grid.len()],
    );
    let mut seen = vec![false; grid.len()];
    for (idx, jv, av, pv) in rows {
        let pos = grid
            .position(&idx)
            .ok_or_else(|| IoError::Table(format!("{idx:?} is not a point of the L={l}, m={m} grid")))?;
        if std::mem::replace(&mut seen[pos], true) {
            return Err(IoError::Table(format!("duplicate grid point {idx:?}")));
        }
        (j[pos], a[pos], phi[pos]) = (jv, av, pv);
    }
    Ok(ValueTable {
        grid,
        j,
        a,
        phi_opt: phi,
        iterations: 0,
        gap: f64::NAN,
        max_increase: f64::NAN,
    })
}

/// Streams per-slot traces of one trial.
pub struct TraceWriter<W: Write> {
    inner: csv::Writer<W>,
    scheme: String,
    setting: String,
}

fn join<T: ToString>(items: impl IntoIterator<Item = T>) -> String {
    items.into_iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")
}

impl<W: Write> TraceWriter<W> {
    pub fn new(out: W, scheme: Scheme, setting: Setting) -> Result<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record([
            "k",
            "scheme",
            "setting",
            "stat",
            "winning_chart",
            "cusum",
            "estimate",
            "burst_bits",
            "levels",
        ])?;
        Ok(Self {
            inner,
            scheme: scheme.to_string(),
            setting: setting.to_string(),
        })
    }

    pub fn write(&mut self, step: &TraceStep) -> Result<()> {
        let estimate = step
            .estimate
            .as_ref()
            .map(|p| join(p.order().iter().map(|i| i + 1)))
            .unwrap_or_default();
        let bursts = step
            .bursts
            .as_ref()
            .map(|b| join(b.iter().map(|s| s.as_deref().unwrap_or("-"))))
            .unwrap_or_default();
        self.inner.write_record([
            step.k.to_string(),
            self.scheme.clone(),
            self.setting.clone(),
            step.stat.to_string(),
            (step.winning_chart + 1).to_string(),
            step.cusum.as_ref().map(|c| join(c.iter())).unwrap_or_default(),
            estimate,
            bursts,
            step.levels.as_ref().map(|l| join(l.iter())).unwrap_or_default(),
        ])?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}
