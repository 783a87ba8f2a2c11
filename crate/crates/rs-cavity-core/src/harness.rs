//! Replicated simulation protocol: configuration, one replicate, aggregation
//! against RS predictions. Scheduling and file formats live in the std crate.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use num_traits::Float;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{compute_overlaps, corrected_nuisance, fit_pml, FitControls};
use crate::kernels::{sample_logit, sample_weibull, Family, NuisanceParams};
use crate::population::{build_population, sample_covariates, PopulationSpec};
use crate::quadrature::Rules;
use crate::rs::{asymptotic_moments, rs_solve, Controls, Penalty, PenaltyConfig, RSSolution, Target, ZeroBiasMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyMode {
    None,
    Oracle,
    Empirical,
    ZeroBiasOracle,
    ZeroBiasEmpirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: Family,
    #[serde(default = "defaults::n")]
    pub n: usize,
    #[serde(default = "defaults::zeta_grid")]
    pub zeta_grid: Vec<f64>,
    #[serde(rename = "S_target", default = "defaults::one")]
    pub s_target: f64,
    pub penalty_mode: PenaltyMode,
    #[serde(default)]
    pub penalty_value: Option<f64>,
    #[serde(default = "defaults::replicates")]
    pub replicates: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "defaults::order")]
    pub quadrature_order: usize,
    #[serde(default = "defaults::tolerance")]
    pub tolerance: f64,
    /// Draw one population per zeta and reuse it across replicates.
    #[serde(default)]
    pub freeze_population: bool,
    #[serde(default = "defaults::eig_support")]
    pub eig_support: (f64, f64),
    /// True Weibull nuisance parameters.
    #[serde(default = "defaults::phi0")]
    pub phi0: f64,
    #[serde(default = "defaults::one")]
    pub sigma0: f64,
}

mod defaults {
    use alloc::vec::Vec;
    pub fn n() -> usize {
        200
    }
    pub fn zeta_grid() -> Vec<f64> {
        (1..=12).map(|k| k as f64 * 0.05).collect()
    }
    pub fn one() -> f64 {
        1.0
    }
    pub fn phi0() -> f64 {
        0.0
    }
    pub fn replicates() -> usize {
        500
    }
    pub fn order() -> usize {
        40
    }
    pub fn tolerance() -> f64 {
        1e-10
    }
    pub fn eig_support() -> (f64, f64) {
        (0.1, 10.0)
    }
}

impl ExperimentConfig {
    pub fn new(family: Family, penalty_mode: PenaltyMode) -> Self {
        ExperimentConfig {
            family,
            n: defaults::n(),
            zeta_grid: defaults::zeta_grid(),
            s_target: 1.0,
            penalty_mode,
            penalty_value: None,
            replicates: defaults::replicates(),
            seed: 0,
            quadrature_order: defaults::order(),
            tolerance: defaults::tolerance(),
            freeze_population: false,
            eig_support: defaults::eig_support(),
            phi0: 0.0,
            sigma0: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.n == 0 || self.replicates == 0 || self.quadrature_order == 0 {
            return bad("n, replicates and quadrature_order must be at least 1".into());
        }
        if self.zeta_grid.is_empty() {
            return bad("zeta_grid is empty".into());
        }
        for &z in &self.zeta_grid {
            if !(z > 0.0) || self.p_for(z) == 0 {
                return bad(alloc::format!("zeta = {z} gives no covariates at n = {}", self.n));
            }
        }
        if !(self.s_target > 0.0) || !(self.tolerance > 0.0) || !(self.sigma0 > 0.0) {
            return bad("S_target, tolerance and sigma0 must be positive".into());
        }
        match (self.penalty_mode, self.penalty_value) {
            (PenaltyMode::Oracle | PenaltyMode::Empirical, None) => bad("penalty_value is required for oracle and empirical modes".into()),
            (_, Some(v)) if !(v >= 0.0) => bad("penalty_value must be non-negative".into()),
            _ => Ok(()),
        }
    }

    /// `p = round(n zeta)`.
    pub fn p_for(&self, zeta: f64) -> usize {
        Float::round(self.n as f64 * zeta) as usize
    }

    pub fn controls(&self) -> Controls {
        Controls {
            tolerance: self.tolerance,
            ..Controls::default()
        }
    }

    fn penalty(&self) -> Penalty {
        let v = self.penalty_value.unwrap_or(0.0);
        match self.penalty_mode {
            PenaltyMode::None => Penalty::Fixed(PenaltyConfig::none()),
            PenaltyMode::Oracle => Penalty::Fixed(PenaltyConfig::oracle(v)),
            PenaltyMode::Empirical => Penalty::Fixed(PenaltyConfig::empirical(v)),
            PenaltyMode::ZeroBiasOracle => Penalty::ZeroBias(ZeroBiasMode::Oracle),
            PenaltyMode::ZeroBiasEmpirical => Penalty::ZeroBias(ZeroBiasMode::Empirical),
        }
    }
}

/// Everything fixed for one grid point before replicates run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaPlan {
    pub zeta_index: usize,
    pub zeta: f64,
    pub zeta_effective: f64,
    pub p: usize,
    /// Penalty used by the fits; `None` when a zero-bias solve failed.
    pub penalty: Option<PenaltyConfig>,
    pub rs: Option<RSSolution>,
    pub rs_error: Option<String>,
}

/// Solves the RS system at `p/n` and fixes the penalty for one grid point.
pub fn plan_zeta(cfg: &ExperimentConfig, zeta_index: usize, rules: &Rules) -> ZetaPlan {
    let zeta = cfg.zeta_grid[zeta_index];
    let p = cfg.p_for(zeta);
    let zeta_effective = p as f64 / cfg.n as f64;
    let penalty = cfg.penalty();
    let solved = rs_solve(
        cfg.family,
        Target::Zeta(zeta_effective),
        cfg.s_target,
        penalty,
        &cfg.controls(),
        rules,
    );
    let (rs, rs_error) = match solved {
        Ok(sol) if sol.converged => (Some(sol), None),
        Ok(sol) => (
            None,
            Some(alloc::format!("RS solve did not converge (residual {:e})", sol.residual)),
        ),
        Err(e) => (None, Some(e.to_string())),
    };
    let fit_penalty = match penalty {
        Penalty::Fixed(pc) => Some(pc),
        Penalty::ZeroBias(_) => rs.as_ref().map(|s| s.penalty),
    };
    ZetaPlan {
        zeta_index,
        zeta,
        zeta_effective,
        p,
        penalty: fit_penalty,
        rs,
        rs_error,
    }
}

/// The RNG stream of one replicate: `(seed, zeta index, replicate index)`.
pub fn replicate_rng(seed: u64, zeta_index: usize, replicate: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((zeta_index as u64) << 32) | replicate as u64);
    rng
}

/// Population shared by all replicates of a grid point when frozen.
pub fn frozen_population(cfg: &ExperimentConfig, plan: &ZetaPlan) -> Result<PopulationSpec> {
    let mut rng = replicate_rng(cfg.seed, plan.zeta_index, u32::MAX);
    build_population(plan.p, cfg.eig_support, cfg.s_target, &mut rng)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub replicate_id: u32,
    pub error: Option<String>,
    #[serde(rename = "K_n")]
    pub k_n: f64,
    #[serde(rename = "V_n")]
    pub v_n: f64,
    /// `|beta_hat - beta0|^2`.
    pub sq_error: f64,
    pub alpha2: f64,
    pub iterations: usize,
    pub nuisance_hat: Option<NuisanceParams>,
    pub nuisance_corrected: Option<NuisanceParams>,
}

impl ReplicateRecord {
    fn failed(replicate_id: u32, reason: String) -> Self {
        ReplicateRecord {
            replicate_id,
            error: Some(reason),
            k_n: f64::NAN,
            v_n: f64::NAN,
            sq_error: f64::NAN,
            alpha2: f64::NAN,
            iterations: 0,
            nuisance_hat: None,
            nuisance_corrected: None,
        }
    }

    pub fn ok(&self) -> bool {
        self.error.is_none()
    }
}

/// Draws data for one replicate, fits it and computes its overlaps.
pub fn run_replicate(cfg: &ExperimentConfig, plan: &ZetaPlan, frozen: Option<&PopulationSpec>, replicate: u32) -> ReplicateRecord {
    match replicate_inner(cfg, plan, frozen, replicate) {
        Ok(r) => r,
        Err(e) => ReplicateRecord::failed(replicate, e.to_string()),
    }
}

fn replicate_inner(cfg: &ExperimentConfig, plan: &ZetaPlan, frozen: Option<&PopulationSpec>, replicate: u32) -> Result<ReplicateRecord> {
    let penalty = match plan.penalty {
        Some(p) => p,
        None => {
            return Err(Error::InvalidArgument(alloc::format!(
                "no penalty: {}",
                plan.rs_error.as_deref().unwrap_or("RS solve failed")
            )))
        }
    };
    let mut rng = replicate_rng(cfg.seed, plan.zeta_index, replicate);
    let owned;
    let spec = match frozen {
        Some(s) => s,
        None => {
            owned = build_population(plan.p, cfg.eig_support, cfg.s_target, &mut rng)?;
            &owned
        }
    };
    let x = sample_covariates(cfg.n, spec, &mut rng)?;
    let lin = &x * &spec.beta0;
    let nuis0 = NuisanceParams {
        phi: cfg.phi0,
        sigma: cfg.sigma0,
    };
    let t: Vec<f64> = lin
        .iter()
        .map(|&y| match cfg.family {
            Family::Logit => sample_logit(y, &mut rng),
            Family::Weibull => sample_weibull(y, nuis0, &mut rng),
        })
        .collect();
    let fit = fit_pml(&x, &t, cfg.family, spec, penalty, &FitControls::default())?;
    if !fit.converged {
        return Err(Error::NonConvergence {
            iterations: fit.iterations,
            residual: fit.gradient_norm,
        });
    }
    let ov = compute_overlaps(&fit.beta_hat, spec)?;
    let sq_error = (&fit.beta_hat - &spec.beta0).norm_squared();
    let nuisance_corrected = match (fit.nuisance_hat, plan.rs.as_ref().and_then(|s| s.nuisance_factors())) {
        (Some(nh), Some((h, g))) => Some(corrected_nuisance(nh, h, g)?),
        _ => None,
    };
    Ok(ReplicateRecord {
        replicate_id: replicate,
        error: None,
        k_n: ov.k_n,
        v_n: ov.v_n,
        sq_error,
        alpha2: spec.alpha2,
        iterations: fit.iterations,
        nuisance_hat: fit.nuisance_hat,
        nuisance_corrected,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatRow {
    pub stat: String,
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub rs_prediction: Option<f64>,
    /// `mean - rs_prediction`.
    pub deviation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZetaSummary {
    pub seed: u64,
    pub config_hash: String,
    pub zeta: f64,
    pub zeta_effective: f64,
    pub p: usize,
    pub penalty: Option<PenaltyConfig>,
    pub rs: Option<RSSolution>,
    pub rs_error: Option<String>,
    pub n_ok: usize,
    pub n_fail: usize,
    pub failures: Vec<(u32, String)>,
    pub stats: Vec<StatRow>,
    pub records: Vec<ReplicateRecord>,
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let h = (sorted.len() - 1) as f64 * q;
    let lo = Float::floor(h) as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn stat_row(name: &str, values: &[f64], prediction: Option<f64>) -> StatRow {
    let mut v: Vec<f64> = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mean = if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    };
    StatRow {
        stat: name.into(),
        mean,
        median: quantile(&v, 0.5),
        q1: quantile(&v, 0.25),
        q3: quantile(&v, 0.75),
        rs_prediction: prediction,
        deviation: prediction.map(|p| mean - p),
    }
}

/// Aggregates replicate records (in any order) for one grid point.
pub fn summarize(cfg: &ExperimentConfig, config_hash: &str, plan: &ZetaPlan, mut records: Vec<ReplicateRecord>) -> ZetaSummary {
    records.sort_by_key(|r| r.replicate_id);
    let ok: Vec<&ReplicateRecord> = records.iter().filter(|r| r.ok()).collect();
    let failures: Vec<(u32, String)> = records
        .iter()
        .filter_map(|r| r.error.clone().map(|e| (r.replicate_id, e)))
        .collect();
    let col = |f: &dyn Fn(&ReplicateRecord) -> Option<f64>| -> Vec<f64> { ok.iter().filter_map(|r| f(r)).collect() };
    let rs = plan.rs.as_ref();
    let alphas = col(&|r| Some(r.alpha2));
    let mean_alpha2 = if alphas.is_empty() {
        f64::NAN
    } else {
        alphas.iter().sum::<f64>() / alphas.len() as f64
    };
    let mut stats = alloc::vec![
        stat_row("K_n", &col(&|r| Some(r.k_n)), rs.map(|s| s.state.w / s.s)),
        stat_row("V_n", &col(&|r| Some(r.v_n)), rs.map(|s| s.state.v)),
        stat_row(
            "mse",
            &col(&|r| Some(r.sq_error)),
            rs.map(|s| asymptotic_moments(s, 1.0, mean_alpha2).mse)
        ),
    ];
    if cfg.family == Family::Weibull {
        let factors = rs.and_then(|s| s.nuisance_factors());
        let (phi0, sigma0) = (cfg.phi0, cfg.sigma0);
        stats.push(stat_row(
            "sigma_ratio",
            &col(&|r| r.nuisance_hat.map(|n| n.sigma / sigma0)),
            factors.map(|f| f.1),
        ));
        stats.push(stat_row(
            "phi_shift",
            &col(&|r| r.nuisance_hat.map(|n| (n.phi - phi0) / sigma0)),
            factors.map(|f| f.0),
        ));
        stats.push(stat_row(
            "sigma_ratio_corrected",
            &col(&|r| r.nuisance_corrected.map(|n| n.sigma / sigma0)),
            factors.map(|_| 1.0),
        ));
        stats.push(stat_row(
            "phi_shift_corrected",
            &col(&|r| r.nuisance_corrected.map(|n| (n.phi - phi0) / sigma0)),
            factors.map(|_| 0.0),
        ));
    }
    ZetaSummary {
        seed: cfg.seed,
        config_hash: config_hash.into(),
        zeta: plan.zeta,
        zeta_effective: plan.zeta_effective,
        p: plan.p,
        penalty: plan.penalty,
        rs: plan.rs.clone(),
        rs_error: plan.rs_error.clone(),
        n_ok: ok.len(),
        n_fail: failures.len(),
        failures,
        stats,
        records,
    }
}

/// Tolerances for [`compare_rows`]: `|mean - prediction| <= tolerance` passes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareTolerances {
    pub default: f64,
    /// Per-statistic overrides.
    #[serde(default)]
    pub per_stat: Vec<(String, f64)>,
}

impl Default for CompareTolerances {
    fn default() -> Self {
        CompareTolerances {
            default: 0.03,
            per_stat: Vec::new(),
        }
    }
}

impl CompareTolerances {
    pub fn for_stat(&self, stat: &str) -> f64 {
        self.per_stat
            .iter()
            .find(|(s, _)| s == stat)
            .map(|(_, t)| *t)
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub zeta: f64,
    pub zeta_effective: f64,
    pub stat: String,
    pub mean: f64,
    pub q1: f64,
    pub q3: f64,
    pub rs_prediction: Option<f64>,
    pub deviation: Option<f64>,
    pub iqr_width: f64,
    pub prediction_in_iqr: Option<bool>,
    pub tolerance: f64,
    /// `None` when there is no prediction to compare with.
    pub pass: Option<bool>,
    pub n_fail: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub total: usize,
    pub passed: usize,
    pub failed: usize,
    pub not_compared: usize,
}

pub fn compare_rows(rows: &[ZetaSummary], tol: &CompareTolerances) -> CompareReport {
    let mut out = Vec::new();
    for z in rows {
        for s in &z.stats {
            let tolerance = tol.for_stat(&s.stat);
            out.push(CompareRow {
                zeta: z.zeta,
                zeta_effective: z.zeta_effective,
                stat: s.stat.clone(),
                mean: s.mean,
                q1: s.q1,
                q3: s.q3,
                rs_prediction: s.rs_prediction,
                deviation: s.deviation,
                iqr_width: s.q3 - s.q1,
                prediction_in_iqr: s.rs_prediction.map(|p| p >= s.q1 && p <= s.q3),
                tolerance,
                pass: s.deviation.map(|d| Float::abs(d) <= tolerance),
                n_fail: z.n_fail,
            });
        }
    }
    let passed = out.iter().filter(|r| r.pass == Some(true)).count();
    let failed = out.iter().filter(|r| r.pass == Some(false)).count();
    CompareReport {
        total: out.len(),
        passed,
        failed,
        not_compared: out.len() - passed - failed,
        rows: out,
    }
}
