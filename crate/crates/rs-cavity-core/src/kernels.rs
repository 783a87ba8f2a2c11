//! Model families: log-densities, samplers, derivatives and proximal maps.

use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::special::{lambert_w0_log, solve_tanh_fixed_point};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    Logit,
    Weibull,
}

impl Family {
    pub fn nuisance_dim(self) -> usize {
        match self {
            Family::Logit => 0,
            Family::Weibull => 2,
        }
    }
}

/// Weibull nuisance parameters in the `H = e^{phi/sigma} T^{1/sigma}` form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuisanceParams {
    pub phi: f64,
    pub sigma: f64,
}

fn check_label(t: f64) -> Result<()> {
    if t == 1.0 || t == -1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(alloc::format!("logit label must be -1 or +1, got {t}")))
    }
}

/// `log p(t | y) = t y - log(2 cosh y)`.
pub fn logit_logdensity(t: f64, y: f64) -> Result<f64> {
    check_label(t)?;
    let ay = Float::abs(y);
    Ok(t * y - ay - Float::ln_1p(Float::exp(-2.0 * ay)))
}

pub fn sample_logit<R: Rng + ?Sized>(y: f64, rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    if u < crate::quadrature::logit_prob(1.0, y) {
        1.0
    } else {
        -1.0
    }
}

/// `xi*` for the Logit model: the minimizer of `(xi - x)^2 / (2 mu2) - log p(t | xi)`.
pub fn logit_proximal(x: f64, mu2: f64, t: f64) -> Result<f64> {
    if !(mu2 > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("mu2 must be positive, got {mu2}")));
    }
    check_label(t)?;
    // xi* = a - b tanh(x*) with x* = a - b tanh(x*), so xi* = x*.
    solve_tanh_fixed_point(x + mu2 * t, mu2)
}

pub fn weibull_h(t: f64, nuis: NuisanceParams) -> Result<f64> {
    if !(t > 0.0) || !(nuis.sigma > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "weibull_H needs t > 0 and sigma > 0, got t={t}, sigma={}",
            nuis.sigma
        )));
    }
    Ok(Float::exp((nuis.phi + Float::ln(t)) / nuis.sigma))
}

/// `log p(t | y) = log H - log sigma - log t + y - H e^y`.
pub fn weibull_logdensity(t: f64, y: f64, nuis: NuisanceParams) -> Result<f64> {
    let lh = Float::ln(weibull_h(t, nuis)?);
    Ok(lh - Float::ln(nuis.sigma) - Float::ln(t) + y - Float::exp(lh + y))
}

/// Draws `T` with `H(T | phi0, sigma0) e^y ~ Exp(1)`.
pub fn sample_weibull<R: Rng + ?Sized>(y: f64, nuis0: NuisanceParams, rng: &mut R) -> f64 {
    let z: f64 = Exp1.sample(rng);
    Float::exp(nuis0.sigma * (Float::ln(z) - y) - nuis0.phi)
}

/// `xi* = x + mu2 - W(H mu2 e^{mu2 + x})`.
pub fn weibull_proximal(x: f64, mu2: f64, h_val: f64) -> Result<f64> {
    if !(mu2 > 0.0) || !(h_val >= 0.0) {
        return Err(Error::InvalidArgument(alloc::format!(
            "weibull prox needs mu2 > 0 and H >= 0, got mu2={mu2}, H={h_val}"
        )));
    }
    if h_val == 0.0 {
        return Ok(x + mu2);
    }
    let la = Float::ln(h_val) + Float::ln(mu2) + mu2 + x;
    Ok(x + mu2 - lambert_w0_log(la))
}

/// Minimizer of `(xi - x)^2 / (2 mu2) - rho(xi)` for concave `rho`, given its
/// derivative, by bracketing and bisecting the stationarity condition.
/// Used as a model-agnostic reference for the closed-form maps.
pub fn numeric_proximal<F: Fn(f64) -> f64>(x: f64, mu2: f64, drho: F) -> f64 {
    let grad = |xi: f64| (xi - x) / mu2 - drho(xi);
    let mut step = mu2.max(1.0);
    let (mut lo, mut hi) = (x - step, x + step);
    while grad(lo) > 0.0 {
        step *= 2.0;
        lo = x - step;
    }
    while grad(hi) < 0.0 {
        step *= 2.0;
        hi = x + step;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if grad(mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// First and second derivatives of the per-observation log-density in the
/// linear predictor, plus the nuisance gradient `(d/dphi, d/dsigma)` (Weibull).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreHessian {
    pub dy: f64,
    pub dyy: f64,
    pub dnuisance: Option<[f64; 2]>,
}

pub fn glm_score_hessian(family: Family, t: f64, y: f64, nuis: Option<NuisanceParams>) -> Result<ScoreHessian> {
    match family {
        Family::Logit => {
            check_label(t)?;
            let th = Float::tanh(y);
            Ok(ScoreHessian {
                dy: t - th,
                dyy: -(1.0 - th * th),
                dnuisance: None,
            })
        }
        Family::Weibull => {
            let nuis = nuis.ok_or_else(|| Error::InvalidArgument("weibull derivatives need nuisance parameters".into()))?;
            let d = weibull_derivs(t, y, nuis.phi, Float::ln(nuis.sigma))?;
            Ok(ScoreHessian {
                dy: d.d_y,
                dyy: d.d_yy,
                dnuisance: Some([d.d_phi, d.d_s / nuis.sigma]),
            })
        }
    }
}

/// Weibull log-density derivatives in `(y, phi, s = log sigma)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WeibullDerivs {
    pub logp: f64,
    pub d_y: f64,
    pub d_phi: f64,
    pub d_s: f64,
    pub d_yy: f64,
    pub d_yphi: f64,
    pub d_ys: f64,
    pub d_phiphi: f64,
    pub d_phis: f64,
    pub d_ss: f64,
}

pub fn weibull_derivs(t: f64, y: f64, phi: f64, s: f64) -> Result<WeibullDerivs> {
    if !(t > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("survival time must be positive, got {t}")));
    }
    let lt = Float::ln(t);
    let sigma = Float::exp(s);
    let l = (phi + lt) / sigma;
    let e = Float::exp(l + y);
    Ok(WeibullDerivs {
        logp: l - s - lt + y - e,
        d_y: 1.0 - e,
        d_phi: (1.0 - e) / sigma,
        d_s: -1.0 - l * (1.0 - e),
        d_yy: -e,
        d_yphi: -e / sigma,
        d_ys: l * e,
        d_phiphi: -e / (sigma * sigma),
        d_phis: -(1.0 - e) / sigma + l * e / sigma,
        d_ss: l * (1.0 - e) - l * l * e,
    })
}
