//! Replica-symmetric order parameters for penalized GLM estimators.
//!
//! Both families are iterated with the cavity variance held fixed and `zeta`
//! as an output. A fixed-`zeta` solve wraps that in a bracketed root-find
//! over `log u2`; `u2` rather than `mu2 = u2 / (1 + tau' zeta u2)` is used
//! because `zeta(mu2)` folds back once `mu2` approaches `1 / (tau' zeta)`.

mod logit;
mod weibull;

use alloc::string::String;
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::Family;
use crate::quadrature::Rules;

pub use logit::rs_map_logit;
pub use weibull::rs_map_weibull;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PenaltyConfig {
    /// Oracle strength: penalty `(p/2) eta' beta.A0 beta`.
    pub eta_prime: f64,
    /// Empirical strength: penalty `(p/2) tau' beta.C_n beta`, `C_n` the sample Gram matrix.
    pub tau_prime: f64,
}

impl PenaltyConfig {
    pub fn none() -> Self {
        Self::default()
    }
    pub fn oracle(eta_prime: f64) -> Self {
        PenaltyConfig { eta_prime, tau_prime: 0.0 }
    }
    pub fn empirical(tau_prime: f64) -> Self {
        PenaltyConfig { eta_prime: 0.0, tau_prime }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ZeroBiasMode {
    Oracle,
    Empirical,
}

/// How the penalty strength is determined in a solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    Fixed(PenaltyConfig),
    /// Strength chosen so that `w / S = 1`.
    ZeroBias(ZeroBiasMode),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Mu2(f64),
    Zeta(f64),
}

/// Weibull nuisance order parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceState {
    /// `(phi - phi0) / sigma`.
    pub phi_shift: f64,
    /// `sigma / sigma0`.
    pub sigma_ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RSState {
    pub zeta: f64,
    pub u2: f64,
    pub v: f64,
    pub w: f64,
    pub mu2: f64,
    pub nu: f64,
    pub omega: f64,
    pub nuisance: Option<NuisanceState>,
}

impl RSState {
    /// Builds the state from the rescaled parameters, `c = 1 - tau' zeta mu2`.
    pub fn from_rescaled(zeta: f64, mu2: f64, nu: f64, omega: f64, tau_prime: f64, nuisance: Option<NuisanceState>) -> Result<Self> {
        let c = 1.0 - tau_prime * zeta * mu2;
        if !(c > 0.0) {
            return Err(Error::Degenerate(alloc::format!("1 - tau' zeta mu2 = {c} is not positive")));
        }
        Ok(RSState {
            zeta,
            u2: mu2 / c,
            v: nu / c,
            w: omega / c,
            mu2,
            nu,
            omega,
            nuisance,
        })
    }

    /// Inverse map: `mu2 = u2 / (1 + tau' zeta u2)` and likewise for `nu`, `omega`.
    pub fn from_unscaled(zeta: f64, u2: f64, v: f64, w: f64, tau_prime: f64, nuisance: Option<NuisanceState>) -> Self {
        let d = 1.0 + tau_prime * zeta * u2;
        RSState {
            zeta,
            u2,
            v,
            w,
            mu2: u2 / d,
            nu: v / d,
            omega: w / d,
            nuisance,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitState {
    pub zeta: f64,
    pub nu: f64,
    pub omega: f64,
    pub phi_shift: f64,
    pub sigma_ratio: f64,
}

impl InitState {
    pub fn default_for(s: f64) -> Self {
        InitState {
            zeta: 0.5,
            nu: 0.5,
            omega: 0.5 * s,
            phi_shift: 0.0,
            sigma_ratio: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Controls {
    pub tolerance: f64,
    pub max_iter: usize,
    /// Weight on the previous state once the raw map stops contracting; 0 disables.
    pub damping: f64,
    /// Tolerance on `|zeta(u2) - zeta_target|` for fixed-zeta solves.
    pub zeta_tolerance: f64,
    pub init: Option<InitState>,
}

impl Default for Controls {
    fn default() -> Self {
        Controls {
            tolerance: 1e-10,
            max_iter: 10_000,
            damping: 0.5,
            zeta_tolerance: 1e-9,
            init: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSSolution {
    pub family: Family,
    #[serde(rename = "S")]
    pub s: f64,
    /// Penalty in force at the solution (computed for zero-bias solves).
    pub penalty: PenaltyConfig,
    pub zero_bias: Option<ZeroBiasMode>,
    pub state: RSState,
    pub iterations: usize,
    pub outer_iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub warnings: Vec<String>,
}

impl RSSolution {
    /// `(h, g)`: limits of `(phi_hat - phi0) / sigma0` and `sigma_hat / sigma0`.
    pub fn nuisance_factors(&self) -> Option<(f64, f64)> {
        self.state.nuisance.map(|n| (n.phi_shift * n.sigma_ratio, n.sigma_ratio))
    }

    /// The zero-bias strength (eta* or tau*) when this is a zero-bias solve.
    pub fn zero_bias_value(&self) -> Option<f64> {
        self.zero_bias.map(|m| match m {
            ZeroBiasMode::Oracle => self.penalty.eta_prime,
            ZeroBiasMode::Empirical => self.penalty.tau_prime,
        })
    }
}

/// Raw iteration state shared by both maps:
/// `[zeta, nu, omega, phi_shift, sigma_ratio, penalty]`, the last three
/// unused by the Logit map except the penalty slot in zero-bias mode.
pub(crate) type Raw = [f64; 6];
const RESIDUAL_DIM: [usize; 2] = [3, 5];

/// Which cavity variance is held fixed during an iteration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Scale {
    Mu2(f64),
    U2(f64),
}

pub(crate) struct MapInput<'a> {
    pub scale: Scale,
    pub s: f64,
    pub penalty: Penalty,
    pub rules: &'a Rules,
}

impl MapInput<'_> {
    pub fn mu2_at(&self, x: &Raw) -> f64 {
        match self.scale {
            Scale::Mu2(m) => m,
            Scale::U2(u2) => {
                let (_, tau) = self.strengths(x);
                u2 / (1.0 + tau * x[0] * u2)
            }
        }
    }

    /// `(eta', tau')` in force for a given raw state.
    pub fn strengths(&self, x: &Raw) -> (f64, f64) {
        match self.penalty {
            Penalty::Fixed(p) => (p.eta_prime, p.tau_prime),
            Penalty::ZeroBias(ZeroBiasMode::Oracle) => (x[5], 0.0),
            Penalty::ZeroBias(ZeroBiasMode::Empirical) => (0.0, x[5]),
        }
    }
}

/// Solves the quadratic in `zeta` obtained by eliminating `v` between the
/// variance-type equations, given `a = E[d xi*/d x]`.
pub(crate) fn zeta_from_slope(a: f64, mu2: f64, eta: f64, tau: f64) -> f64 {
    let t = tau * mu2;
    let e = mu2 * eta;
    let qa = t * (1.0 - a * t);
    let qb = -1.0 - t + e + 2.0 * a * t;
    let qc = 1.0 - a;
    if Float::abs(qa) < 1e-300 {
        return -qc / qb;
    }
    let disc = (qb * qb - 4.0 * qa * qc).max(0.0);
    let q = -0.5 * (qb + Float::signum(qb) * Float::sqrt(disc));
    qc / q
}

fn map(family: Family, x: &Raw, input: &MapInput) -> Result<Raw> {
    match family {
        Family::Logit => logit::map_raw(x, input),
        Family::Weibull => weibull::map_raw(x, input),
    }
}

fn norm_diff(a: &Raw, b: &Raw, dim: usize) -> f64 {
    let mut s = 0.0;
    for k in 0..dim {
        let d = a[k] - b[k];
        s += d * d;
    }
    Float::sqrt(s)
}

pub(crate) struct InnerResult {
    pub x: Raw,
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
}

fn iterate(family: Family, x0: Raw, input: &MapInput, controls: &Controls) -> Result<InnerResult> {
    let dim = RESIDUAL_DIM[family.nuisance_dim().min(1)];
    let mut x = x0;
    let mut prev = f64::INFINITY;
    let mut damped = false;
    let mut released = false;
    let mut sticky = false;
    let mut residual = f64::INFINITY;
    for it in 1..=controls.max_iter {
        let mut xn = map(family, &x, input)?;
        if xn.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonConvergence { iterations: it, residual });
        }
        residual = norm_diff(&xn, &x, dim);
        if residual <= controls.tolerance {
            return Ok(InnerResult {
                x: xn,
                iterations: it,
                residual,
                converged: true,
            });
        }
        // Damping is switched on when the raw map stops contracting and off
        // again near the fixed point; if the raw map still fails to contract
        // there, it stays on. The residual is always that of the raw map.
        if residual > prev && controls.damping > 0.0 {
            if released {
                sticky = true;
            }
            damped = true;
        }
        if damped && !sticky && residual < 1e-6 {
            damped = false;
            released = true;
        }
        if damped {
            let d = controls.damping;
            for k in 0..6 {
                xn[k] = (1.0 - d) * xn[k] + d * x[k];
            }
        }
        prev = residual;
        x = xn;
    }
    Ok(InnerResult {
        x,
        iterations: controls.max_iter,
        residual,
        converged: false,
    })
}

fn init_raw(family: Family, s: f64, controls: &Controls) -> Raw {
    let i = controls.init.unwrap_or_else(|| InitState::default_for(s));
    let (ps, sr) = match family {
        Family::Logit => (0.0, 1.0),
        Family::Weibull => (i.phi_shift, i.sigma_ratio),
    };
    [i.zeta, i.nu, i.omega, ps, sr, 0.0]
}

fn finish(family: Family, s: f64, penalty: Penalty, scale: Scale, inner: &InnerResult, outer: usize, rules: &Rules) -> Result<RSSolution> {
    let input = MapInput { scale, s, penalty, rules };
    let (eta, tau) = input.strengths(&inner.x);
    let mu2 = input.mu2_at(&inner.x);
    let x = &inner.x;
    let nuisance = match family {
        Family::Logit => None,
        Family::Weibull => Some(NuisanceState {
            phi_shift: x[3],
            sigma_ratio: x[4],
        }),
    };
    let state = RSState::from_rescaled(x[0], mu2, x[1], x[2], tau, nuisance)?;
    let mut warnings = Vec::new();
    if tau > 0.0 && x[0] >= 0.9 {
        warnings.push(alloc::format!(
            "zeta = {:.3} >= 0.9 with an empirical penalty: the sample covariance is near singular",
            x[0]
        ));
    }
    if eta < 0.0 || tau < 0.0 {
        warnings.push(alloc::format!("negative penalty strength (eta' = {eta}, tau' = {tau})"));
    }
    let zero_bias = match penalty {
        Penalty::ZeroBias(m) => Some(m),
        Penalty::Fixed(_) => None,
    };
    Ok(RSSolution {
        family,
        s,
        penalty: PenaltyConfig {
            eta_prime: eta,
            tau_prime: tau,
        },
        zero_bias,
        state,
        iterations: inner.iterations,
        outer_iterations: outer,
        residual: inner.residual,
        converged: inner.converged,
        warnings,
    })
}

/// Solves the RS system of `family` either at fixed `mu2` or at fixed `zeta`.
pub fn rs_solve(family: Family, target: Target, s: f64, penalty: Penalty, controls: &Controls, rules: &Rules) -> Result<RSSolution> {
    if !(s > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("S must be positive, got {s}")));
    }
    if let Penalty::Fixed(p) = penalty {
        if !(p.eta_prime >= 0.0 && p.tau_prime >= 0.0) {
            return Err(Error::InvalidArgument("penalty strengths must be non-negative".into()));
        }
    }
    let x0 = init_raw(family, s, controls);
    match target {
        Target::Mu2(mu2) => {
            if !(mu2 > 0.0) {
                return Err(Error::InvalidArgument(alloc::format!("mu2 must be positive, got {mu2}")));
            }
            let input = MapInput {
                scale: Scale::Mu2(mu2),
                s,
                penalty,
                rules,
            };
            let inner = iterate(family, x0, &input, controls)?;
            finish(family, s, penalty, Scale::Mu2(mu2), &inner, 0, rules)
        }
        Target::Zeta(zeta) => {
            if !(zeta > 0.0 && zeta < 1.0) {
                return Err(Error::InvalidArgument(alloc::format!("zeta must lie in (0, 1), got {zeta}")));
            }
            solve_fixed_zeta(family, zeta, s, penalty, controls, rules, x0)
        }
    }
}

struct Probe {
    log_u2: f64,
    f: f64,
    inner: InnerResult,
}

fn solve_fixed_zeta(
    family: Family,
    target: f64,
    s: f64,
    penalty: Penalty,
    controls: &Controls,
    rules: &Rules,
    x0: Raw,
) -> Result<RSSolution> {
    let mut evals = 0usize;
    let mut eval = |log_u2: f64, start: Raw| -> Result<Probe> {
        evals += 1;
        let input = MapInput {
            scale: Scale::U2(Float::exp(log_u2)),
            s,
            penalty,
            rules,
        };
        let inner = iterate(family, start, &input, controls)?;
        if !inner.converged {
            return Err(Error::NonConvergence {
                iterations: inner.iterations,
                residual: inner.residual,
            });
        }
        Ok(Probe {
            log_u2,
            f: inner.x[0] - target,
            inner,
        })
    };
    let range_err = |reason: &str| Error::Range {
        target,
        reason: reason.into(),
    };

    // zeta(u2) is increasing; zeta ~ u2 as both vanish.
    let mut a = eval(Float::ln(target), x0)?;
    let step = core::f64::consts::LN_2;
    let mut b;
    let mut grow = 0;
    loop {
        if a.f == 0.0 {
            return finish(family, s, penalty, Scale::U2(Float::exp(a.log_u2)), &a.inner, evals, rules);
        }
        let dir = if a.f < 0.0 { 1.0 } else { -1.0 };
        let next = a.log_u2 + dir * step * (1u64 << grow.min(4)) as f64;
        if next > Float::ln(1e6) || next < Float::ln(1e-12) {
            return Err(range_err("zeta(u2) does not reach the target; no solution in this regime"));
        }
        b = match eval(next, a.inner.x) {
            Ok(pb) => pb,
            Err(Error::NonConvergence { .. }) if dir > 0.0 => {
                return Err(range_err("the fixed point ceases to exist before the target is reached"))
            }
            Err(e) => return Err(e),
        };
        if Float::signum(b.f) != Float::signum(a.f) {
            break;
        }
        if dir > 0.0 && b.f <= a.f {
            return Err(range_err("zeta(u2) is not increasing; the target lies beyond the attainable range"));
        }
        a = b;
        grow += 1;
    }
    // Illinois regula falsi on (log mu2, zeta - target).
    let (mut lo, mut hi) = if a.f < 0.0 { (a, b) } else { (b, a) };
    let (mut fl, mut fh) = (lo.f, hi.f);
    let mut last = 0i32;
    for _ in 0..200 {
        let best = if Float::abs(lo.f) < Float::abs(hi.f) { &lo } else { &hi };
        if Float::abs(best.f) <= controls.zeta_tolerance || hi.log_u2 - lo.log_u2 < 1e-15 {
            break;
        }
        let mut m = lo.log_u2 - fl * (hi.log_u2 - lo.log_u2) / (fh - fl);
        if !(m > lo.log_u2 && m < hi.log_u2) {
            m = 0.5 * (lo.log_u2 + hi.log_u2);
        }
        let start = best.inner.x;
        let pm = eval(m, start)?;
        if pm.f < 0.0 {
            fl = pm.f;
            lo = pm;
            if last == -1 {
                fh *= 0.5;
            }
            last = -1;
        } else {
            fh = pm.f;
            hi = pm;
            if last == 1 {
                fl *= 0.5;
            }
            last = 1;
        }
    }
    let best = if Float::abs(lo.f) < Float::abs(hi.f) { lo } else { hi };
    if Float::abs(best.f) > controls.zeta_tolerance.max(1e-8) {
        return Err(range_err("root-find over u2 stalled"));
    }
    finish(family, s, penalty, Scale::U2(Float::exp(best.log_u2)), &best.inner, evals, rules)
}

pub fn rs_solve_logit(target: Target, s: f64, penalty: PenaltyConfig, controls: &Controls, rules: &Rules) -> Result<RSSolution> {
    rs_solve(Family::Logit, target, s, Penalty::Fixed(penalty), controls, rules)
}

pub fn rs_solve_weibull(target: Target, s: f64, penalty: PenaltyConfig, controls: &Controls, rules: &Rules) -> Result<RSSolution> {
    rs_solve(Family::Weibull, target, s, Penalty::Fixed(penalty), controls, rules)
}

/// Zero-bias strength (eta* for oracle, tau* for empirical) at `(S, zeta)`.
pub fn zero_bias(family: Family, s: f64, zeta: f64, mode: ZeroBiasMode, controls: &Controls, rules: &Rules) -> Result<(f64, RSSolution)> {
    let sol = rs_solve(family, Target::Zeta(zeta), s, Penalty::ZeroBias(mode), controls, rules)?;
    let value = sol.zero_bias_value().unwrap_or(0.0);
    Ok((value, sol))
}

pub fn zero_bias_logit(s: f64, zeta: f64, mode: ZeroBiasMode, controls: &Controls, rules: &Rules) -> Result<(f64, RSSolution)> {
    zero_bias(Family::Logit, s, zeta, mode, controls, rules)
}

pub fn zero_bias_weibull(s: f64, zeta: f64, mode: ZeroBiasMode, controls: &Controls, rules: &Rules) -> Result<(f64, RSSolution)> {
    zero_bias(Family::Weibull, s, zeta, mode, controls, rules)
}

/// `(h, g)` for a Weibull solve at `(S, zeta)` with a fixed penalty.
pub fn nuisance_debias_factors(s: f64, zeta: f64, penalty: PenaltyConfig, controls: &Controls, rules: &Rules) -> Result<(f64, f64)> {
    let sol = rs_solve_weibull(Target::Zeta(zeta), s, penalty, controls, rules)?;
    if !sol.converged {
        return Err(Error::NonConvergence {
            iterations: sol.iterations,
            residual: sol.residual,
        });
    }
    Ok(sol.nuisance_factors().unwrap_or((0.0, 1.0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticMoments {
    pub bias2: f64,
    pub variance: f64,
    pub mse: f64,
}

/// Squared bias `S0^2 (w/S - 1)^2`, variance `v^2 alpha2`, and their sum.
pub fn asymptotic_moments(sol: &RSSolution, s0: f64, alpha2: f64) -> AsymptoticMoments {
    let r = sol.state.w / sol.s - 1.0;
    let bias2 = s0 * s0 * r * r;
    let variance = sol.state.v * sol.state.v * alpha2;
    AsymptoticMoments {
        bias2,
        variance,
        mse: bias2 + variance,
    }
}
