//! JSON and CSV encodings of solver and simulation outputs.

use std::io::Write;
use std::path::Path;

use rs_cavity_core::harness::CompareReport;
use rs_cavity_core::kernels::Family;
use rs_cavity_core::rs::{asymptotic_moments, InitState, NuisanceState, PenaltyConfig, RSSolution, ZeroBiasMode};
use serde::{Deserialize, Serialize};

use crate::{Error, ReplicationSummary};

/// Parses a zeta list: `0.3`, `0.1,0.2,0.4` or an inclusive range `start:stop:step`.
pub fn parse_zeta(spec: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::Config(format!("cannot parse zeta specification {spec:?}"));
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
    let parts: Vec<&str> = spec.split(':').collect();
    let values = match parts.as_slice() {
        [single] => single.split(',').map(num).collect::<Result<Vec<_>, _>>()?,
        [a, b, c] => {
            let (start, stop, step) = (num(a)?, num(b)?, num(c)?);
            if !(step > 0.0) || stop < start {
                return Err(bad());
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            (0..count)
                .map(|k| start + k as f64 * step)
                .map(|z| (z * 1e12).round() / 1e12)
                .collect()
        }
        _ => return Err(bad()),
    };
    if values.is_empty() || values.iter().any(|z| !(*z > 0.0 && z.is_finite())) {
        return Err(Error::Config(format!("zeta values must be positive: {spec:?}")));
    }
    Ok(values)
}

/// Writes to `out`, or to stdout when `None`.
pub fn emit(out: Option<&Path>, bytes: &[u8]) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, bytes)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, Error> {
    let mut v = serde_json::to_vec_pretty(value)?;
    v.push(b'\n');
    Ok(v)
}

fn to_csv<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Vec<u8>, Error> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveInputs {
    pub model: Family,
    #[serde(rename = "S")]
    pub s: f64,
    pub zeta: f64,
    pub eta_prime: f64,
    pub tau_prime: f64,
    pub zero_bias: Option<ZeroBiasMode>,
    pub order: usize,
    pub tolerance: f64,
    pub init: InitState,
    #[serde(rename = "S0")]
    pub s0: f64,
    pub alpha2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveOutputs {
    pub zeta: f64,
    pub u2: f64,
    pub v: f64,
    pub w: f64,
    pub w_over_s: f64,
    pub mu2: f64,
    pub nu: f64,
    pub omega: f64,
    pub nuisance: Option<NuisanceState>,
    /// `(h, g)` de-biasing factors for Weibull nuisance estimates.
    pub debias_factors: Option<(f64, f64)>,
    pub penalty: PenaltyConfig,
    pub bias2: f64,
    pub variance: f64,
    pub mse: f64,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveRecord {
    pub inputs: SolveInputs,
    pub outputs: SolveOutputs,
}

impl SolveOutputs {
    pub fn new(sol: &RSSolution, s0: f64, alpha2: f64) -> Self {
        let m = asymptotic_moments(sol, s0, alpha2);
        let st = &sol.state;
        SolveOutputs {
            zeta: st.zeta,
            u2: st.u2,
            v: st.v,
            w: st.w,
            w_over_s: st.w / sol.s,
            mu2: st.mu2,
            nu: st.nu,
            omega: st.omega,
            nuisance: st.nuisance,
            debias_factors: sol.nuisance_factors(),
            penalty: sol.penalty,
            bias2: m.bias2,
            variance: m.variance,
            mse: m.mse,
            iterations: sol.iterations,
            outer_iterations: sol.outer_iterations,
            residual: sol.residual,
            converged: sol.converged,
            warnings: sol.warnings.clone(),
        }
    }
}

#[derive(Serialize)]
struct SummaryCsvRow<'a> {
    zeta: f64,
    zeta_effective: f64,
    stat: &'a str,
    mean: f64,
    q1: f64,
    q3: f64,
    rs_prediction: Option<f64>,
    deviation: Option<f64>,
    n_fail: usize,
}

/// One row per zeta per statistic.
pub fn summary_csv(summary: &ReplicationSummary) -> Result<Vec<u8>, Error> {
    to_csv(summary.rows.iter().flat_map(|z| {
        z.stats.iter().map(move |s| SummaryCsvRow {
            zeta: z.zeta,
            zeta_effective: z.zeta_effective,
            stat: &s.stat,
            mean: s.mean,
            q1: s.q1,
            q3: s.q3,
            rs_prediction: s.rs_prediction,
            deviation: s.deviation,
            n_fail: z.n_fail,
        })
    }))
}

#[derive(Serialize)]
struct CompareCsvRow<'a> {
    zeta: f64,
    zeta_effective: f64,
    stat: &'a str,
    mean: f64,
    q1: f64,
    q3: f64,
    rs_prediction: Option<f64>,
    deviation: Option<f64>,
    n_fail: usize,
    iqr_width: f64,
    prediction_in_iqr: Option<bool>,
    tolerance: f64,
    pass: Option<bool>,
}

pub fn compare_csv(report: &CompareReport) -> Result<Vec<u8>, Error> {
    to_csv(report.rows.iter().map(|r| CompareCsvRow {
        zeta: r.zeta,
        zeta_effective: r.zeta_effective,
        stat: &r.stat,
        mean: r.mean,
        q1: r.q1,
        q3: r.q3,
        rs_prediction: r.rs_prediction,
        deviation: r.deviation,
        n_fail: r.n_fail,
        iqr_width: r.iqr_width,
        prediction_in_iqr: r.prediction_in_iqr,
        tolerance: r.tolerance,
        pass: r.pass,
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroBiasRow {
    pub zeta: f64,
    pub eta_star: Option<f64>,
    pub tau_star: Option<f64>,
    pub eta_error: Option<String>,
    pub tau_error: Option<String>,
}

pub fn zero_bias_csv(rows: &[ZeroBiasRow]) -> Result<Vec<u8>, Error> {
    to_csv(rows)
}

/// Theory curve point at one zeta.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub zeta: f64,
    pub eta_prime: Option<f64>,
    pub tau_prime: Option<f64>,
    pub u2: Option<f64>,
    pub v: Option<f64>,
    pub w_over_s: Option<f64>,
    pub mu2: Option<f64>,
    pub h: Option<f64>,
    pub g: Option<f64>,
    pub mse: Option<f64>,
    pub converged: bool,
    pub error: Option<String>,
}

pub fn curves_csv(rows: &[CurveRow]) -> Result<Vec<u8>, Error> {
    to_csv(rows)
}
