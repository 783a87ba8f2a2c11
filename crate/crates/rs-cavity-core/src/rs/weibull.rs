use num_traits::Float;

use super::{zeta_from_slope, MapInput, Penalty, PenaltyConfig, Raw, Scale, ZeroBiasMode};
use crate::error::{Error, Result};
use crate::quadrature::Rules;
use crate::special::lambert_w0_log;

/// One evaluation of the Weibull RS system at fixed `mu2`, mapping
/// `(zeta, nu, omega, phi_shift, sigma_ratio)` to its update.
///
/// `phi_shift = (phi - phi0)/sigma` and `sigma_ratio = sigma/sigma0` are
/// advanced by one Newton step on the two nuisance equations
/// `E[W] = mu2` and `E[(log Z - S Z0)(W/mu2 - 1)] = sigma/sigma0`,
/// and `omega` follows algebraically from the overlap equation.
pub fn rs_map_weibull(
    x: (f64, f64, f64, f64, f64),
    mu2: f64,
    s: f64,
    penalty: PenaltyConfig,
    rules: &Rules,
) -> Result<(f64, f64, f64, f64, f64)> {
    let input = MapInput {
        scale: Scale::Mu2(mu2),
        s,
        penalty: Penalty::Fixed(penalty),
        rules,
    };
    let o = map_raw(&[x.0, x.1, x.2, x.3, x.4, 0.0], &input)?;
    Ok((o[0], o[1], o[2], o[3], o[4]))
}

/// `omega / S` from the overlap equation at sigma ratio `sr`.
fn omega_factor(sr: f64, zeta: f64, mu2: f64, eta: f64, tau: f64) -> f64 {
    (1.0 - tau * mu2 - eta * mu2 / (1.0 - tau * mu2 * zeta)) / sr
}

#[derive(Default)]
struct Sums {
    w: f64,
    inv: f64,
    d: f64,
    d_dl: f64,
    g: f64,
    g_w: f64,
    g_d: f64,
    g_d_dl: f64,
    m1: f64,
}

pub(crate) fn map_raw(x: &Raw, input: &MapInput) -> Result<Raw> {
    let (zeta, nu, _, delta, sr) = (x[0], x[1], x[2], x[3], x[4]);
    let (mu2, s, rules) = (input.mu2_at(x), input.s, input.rules);
    let (eta, tau) = input.strengths(x);
    if !(sr > 0.0) {
        return Err(Error::Degenerate(alloc::format!("sigma ratio left (0, inf): {sr}")));
    }
    let r = 1.0 / sr;
    let (omega, d_omega_dr) = match input.penalty {
        Penalty::Fixed(_) => {
            let k = omega_factor(1.0, zeta, mu2, eta, tau);
            (s * r * k, s * k)
        }
        Penalty::ZeroBias(_) => (s * (1.0 - tau * zeta * mu2), 0.0),
    };
    let kappa = omega - s * r;
    let c1 = tau * zeta * mu2 / (1.0 - tau * zeta * mu2);
    let sm = sums(rules, mu2, nu, omega, kappa, r, delta, d_omega_dr - s, s, c1);

    // Newton step on (delta, sr).
    let f1 = sm.w - mu2;
    let f2 = sm.g_w / mu2 - sm.g - sr;
    let j11 = sm.d;
    let j12 = -r * r * sm.d_dl;
    let j21 = sm.g_d / mu2;
    let j22 = -r * r * sm.g_d_dl / mu2 - 1.0;
    let det = j11 * j22 - j12 * j21;
    if !(Float::abs(det) > 0.0) {
        return Err(Error::Degenerate("singular nuisance Jacobian".into()));
    }
    let dd = (-f1 * j22 + f2 * j12) / det;
    let ds = (-f2 * j11 + f1 * j21) / det;
    let delta_n = delta + dd;
    let sr_n = sr + ds;

    let zn = zeta_from_slope(sm.inv, mu2, eta, tau);
    let mut out = *x;
    out[0] = zn;
    out[3] = delta_n;
    out[4] = sr_n;
    match input.penalty {
        Penalty::Fixed(_) => {
            out[1] = (1.0 - tau * zn * mu2) * Float::sqrt(sm.m1 / zn);
            out[2] = s * omega_factor(sr_n, zn, mu2, eta, tau);
        }
        Penalty::ZeroBias(mode) => {
            let (pen, tau_n) = match mode {
                ZeroBiasMode::Oracle => ((1.0 - sr_n) / mu2, 0.0),
                ZeroBiasMode::Empirical => {
                    let den = 1.0 - zn * sr_n;
                    if !(den > 1e-12) {
                        return Err(Error::Degenerate(alloc::format!("1 - zeta sigma/sigma0 = {den}")));
                    }
                    let t = (1.0 - sr_n) / (mu2 * den);
                    (t, t)
                }
            };
            let c = 1.0 - tau_n * zn * mu2;
            out[1] = c * Float::sqrt(sm.m1 / zn);
            out[2] = s * c;
            out[5] = pen;
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
fn sums(rules: &Rules, mu2: f64, nu: f64, omega: f64, kappa: f64, r: f64, delta: f64, dk_dr: f64, s: f64, c1: f64) -> Sums {
    let h = &rules.hermite;
    let l = &rules.log_exp;
    let mut acc = Sums::default();
    let lmu = Float::ln(mu2) + mu2 + delta;
    for (&lz, &wz) in l.nodes.iter().zip(&l.weights) {
        let base = lmu + r * lz;
        for (&q, &wq) in h.nodes.iter().zip(&h.weights) {
            let wzq = wz * wq;
            let bq = base + nu * q;
            for (&z0, &w0) in h.nodes.iter().zip(&h.weights) {
                let wt = wzq * w0;
                let la = bq + kappa * z0;
                let w = lambert_w0_log(la);
                let inv = 1.0 / (1.0 + w);
                let d = w * inv;
                let dl = lz + dk_dr * z0;
                let g = lz - s * z0;
                let e = mu2 - w - c1 * (nu * q + omega * z0);
                acc.w += wt * w;
                acc.inv += wt * inv;
                acc.d += wt * d;
                acc.d_dl += wt * d * dl;
                acc.g += wt * g;
                acc.g_w += wt * g * w;
                acc.g_d += wt * g * d;
                acc.g_d_dl += wt * g * d * dl;
                acc.m1 += wt * e * e;
            }
        }
    }
    acc
}
