use num_traits::Float;

use super::{zeta_from_slope, MapInput, Penalty, PenaltyConfig, Raw, Scale, ZeroBiasMode};
use crate::error::{Error, Result};
use crate::quadrature::{logit_prob, Rules};
use crate::special::solve_tanh_fixed_point;

/// One evaluation of the Logit RS right-hand sides at fixed `mu2`, mapping
/// `(zeta, nu, omega)` to its update.
pub fn rs_map_logit(x: (f64, f64, f64), mu2: f64, s: f64, penalty: PenaltyConfig, rules: &Rules) -> Result<(f64, f64, f64)> {
    let input = MapInput {
        scale: Scale::Mu2(mu2),
        s,
        penalty: Penalty::Fixed(penalty),
        rules,
    };
    let out = map_raw(&[x.0, x.1, x.2, 0.0, 1.0, 0.0], &input)?;
    Ok((out[0], out[1], out[2]))
}

pub(crate) struct LogitSums {
    /// `E[cosh^2 x* / (mu2 + cosh^2 x*)]`, the slope of the prox.
    pub slope: f64,
    pub m1: f64,
    pub m3: f64,
}

pub(crate) fn sums(zeta: f64, nu: f64, omega: f64, mu2: f64, s: f64, tau: f64, rules: &Rules) -> Result<LogitSums> {
    let h = &rules.hermite;
    let c1 = tau * zeta / (1.0 - tau * zeta * mu2);
    let (mut slope, mut m1, mut m3) = (0.0, 0.0, 0.0);
    for (&z0, &wz) in h.nodes.iter().zip(&h.weights) {
        let tsz = Float::tanh(s * z0);
        for t in [-1.0, 1.0] {
            let pt = wz * logit_prob(t, s * z0);
            for (&q, &wq) in h.nodes.iter().zip(&h.weights) {
                let field = nu * q + omega * z0;
                let xs = solve_tanh_fixed_point(field + mu2 * t, mu2)?;
                let th = Float::tanh(xs);
                let sech2 = 1.0 - th * th;
                let w = pt * wq;
                slope += w / (1.0 + mu2 * sech2);
                let r = t - th - c1 * field;
                m1 += w * r * r;
                m3 += w * xs * (t - tsz);
            }
        }
    }
    Ok(LogitSums { slope, m1, m3 })
}

pub(crate) fn map_raw(x: &Raw, input: &MapInput) -> Result<Raw> {
    let (zeta, nu, omega) = (x[0], x[1], x[2]);
    let (mu2, s) = (input.mu2_at(x), input.s);
    let (eta, tau) = input.strengths(x);
    let sm = sums(zeta, nu, omega, mu2, s, tau, input.rules)?;
    let mut out = *x;
    match input.penalty {
        Penalty::Fixed(_) => {
            let zn = zeta_from_slope(sm.slope, mu2, eta, tau);
            let c = 1.0 - tau * zn * mu2;
            out[0] = zn;
            out[1] = mu2 * c * Float::sqrt(sm.m1 / zn);
            out[2] = s * c * sm.m3 / zn;
        }
        Penalty::ZeroBias(mode) => {
            // w = S turns the overlap equation into zeta = E[x*(T - tanh S Z0)].
            let zn = sm.m3;
            let chi = 1.0 - sm.slope;
            let (pen, tau_n) = match mode {
                ZeroBiasMode::Oracle => ((zn - chi) / (mu2 * zn), 0.0),
                ZeroBiasMode::Empirical => {
                    if !(1.0 - chi > 0.0) {
                        return Err(Error::Degenerate(alloc::format!("1 - chi = {}", 1.0 - chi)));
                    }
                    let tn = (zn - chi) / ((1.0 - chi) * mu2 * zn);
                    (tn, tn)
                }
            };
            let c = 1.0 - tau_n * zn * mu2;
            out[0] = zn;
            out[1] = mu2 * c * Float::sqrt(sm.m1 / zn);
            out[2] = s * c;
            out[5] = pen;
        }
    }
    Ok(out)
}
