//! Gauss–Hermite and Gauss–Laguerre rules normalized to probability measures,
//! and the expectation operators over the RS measure.

use alloc::vec::Vec;
use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RuleKind {
    /// Standard normal measure on the real line.
    GaussHermiteNormal,
    /// Unit exponential measure on `[0, inf)`.
    GaussLaguerreExp1,
    /// Law of `log Z` for `Z ~ Exp(1)`, density `exp(u - e^u)`; nodes are `u = log z`.
    GaussLogExp1,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadratureRule {
    pub kind: RuleKind,
    pub order: usize,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Golub–Welsch: nodes are eigenvalues of the Jacobi matrix, weights are
/// `mu0 * v_0^2` of the normalized eigenvectors. Both measures used here
/// have total mass one, so `mu0 = 1`.
pub fn make_rule(kind: RuleKind, order: usize) -> Result<QuadratureRule> {
    if order == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let n = order;
    let mut jac = if kind == RuleKind::GaussLogExp1 {
        log_exp1_jacobi(n)
    } else {
        DMatrix::<f64>::zeros(n, n)
    };
    for i in 0..n {
        let k = i as f64;
        match kind {
            // Probabilists' Hermite: monic recurrence x p_k = p_{k+1} + k p_{k-1}.
            RuleKind::GaussHermiteNormal => {
                if i + 1 < n {
                    let b = Float::sqrt(k + 1.0);
                    jac[(i, i + 1)] = b;
                    jac[(i + 1, i)] = b;
                }
            }
            RuleKind::GaussLaguerreExp1 => {
                jac[(i, i)] = 2.0 * k + 1.0;
                if i + 1 < n {
                    jac[(i, i + 1)] = k + 1.0;
                    jac[(i + 1, i)] = k + 1.0;
                }
            }
            RuleKind::GaussLogExp1 => {}
        }
    }
    let diag: Vec<f64> = (0..n).map(|i| jac[(i, i)]).collect();
    let off: Vec<f64> = (0..n).map(|i| if i + 1 < n { jac[(i, i + 1)] } else { 0.0 }).collect();
    let eig = SymmetricEigen::new(jac);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    // Polish each eigenvalue and take the weight from the Christoffel
    // function; this equals v_0^2 but keeps full relative accuracy for the
    // tiny weights at the outer nodes.
    let mut weights = Vec::with_capacity(n);
    for x in nodes.iter_mut() {
        let (pn, dpn, _) = orthonormal_at(&diag, &off, *x);
        if dpn != 0.0 && pn.is_finite() && dpn.is_finite() {
            let step = pn / dpn;
            if Float::abs(step) < 1e-6 * (1.0 + Float::abs(*x)) {
                *x -= step;
            }
        }
        let (_, _, sumsq) = orthonormal_at(&diag, &off, *x);
        weights.push(1.0 / sumsq);
    }

    if kind == RuleKind::GaussHermiteNormal {
        // Enforce exact symmetry so odd moments vanish to rounding.
        for i in 0..n / 2 {
            let j = n - 1 - i;
            let x = 0.5 * (nodes[j] - nodes[i]);
            let w = 0.5 * (weights[i] + weights[j]);
            nodes[i] = -x;
            nodes[j] = x;
            weights[i] = w;
            weights[j] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
    }
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(QuadratureRule {
        kind,
        order,
        nodes,
        weights,
    })
}

/// Orthonormal recurrence at `x`: returns `(p_n(x), p_n'(x), sum_{k<n} p_k(x)^2)`
/// for the unit-mass measure with Jacobi entries `diag`, `off`.
fn orthonormal_at(diag: &[f64], off: &[f64], x: f64) -> (f64, f64, f64) {
    let n = diag.len();
    let (mut p_prev, mut p) = (0.0, 1.0);
    let (mut d_prev, mut d) = (0.0, 0.0);
    let mut sumsq = 0.0;
    let mut b_prev = 0.0;
    for k in 0..n {
        sumsq += p * p;
        // b_k p_{k+1} = (x - a_k) p_k - b_{k-1} p_{k-1}, with b_{n-1} := 1 for the monic-scaled last step.
        let b = if k + 1 < n { off[k] } else { 1.0 };
        let pn = ((x - diag[k]) * p - b_prev * p_prev) / b;
        let dn = (p + (x - diag[k]) * d - b_prev * d_prev) / b;
        p_prev = p;
        p = pn;
        d_prev = d;
        d = dn;
        b_prev = b;
    }
    (p, d, sumsq)
}

/// Jacobi matrix of the `log Z` measure by the discretized Stieltjes
/// procedure on a fine trapezoidal grid. The density is entire and decays
/// like `e^u` to the left and doubly exponentially to the right, so the
/// discretization error is far below rounding once the grid reaches beyond
/// the leftmost Gauss node (about `-3.7 n`).
fn log_exp1_jacobi(n: usize) -> DMatrix<f64> {
    let h = 0.05;
    let left = -(60.0 + 8.0 * n as f64);
    let m = ((5.0 - left) / h) as usize + 1;
    let u: Vec<f64> = (0..m).map(|i| left + h * i as f64).collect();
    let w: Vec<f64> = u.iter().map(|&x| h * Float::exp(x - Float::exp(x))).collect();
    let mass: f64 = w.iter().sum();
    let mut prev = alloc::vec![0.0; m];
    let mut cur = alloc::vec![1.0 / Float::sqrt(mass); m];
    let mut jac = DMatrix::<f64>::zeros(n, n);
    let mut b = 0.0;
    for k in 0..n {
        let a: f64 = (0..m).map(|i| w[i] * u[i] * cur[i] * cur[i]).sum();
        jac[(k, k)] = a;
        if k + 1 == n {
            break;
        }
        let next: Vec<f64> = (0..m).map(|i| (u[i] - a) * cur[i] - b * prev[i]).collect();
        b = Float::sqrt((0..m).map(|i| w[i] * next[i] * next[i]).sum::<f64>());
        jac[(k, k + 1)] = b;
        jac[(k + 1, k)] = b;
        prev = cur;
        cur = next.into_iter().map(|v| v / b).collect();
    }
    jac
}

impl QuadratureRule {
    pub fn expect<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

/// The rules used by the RS solvers, all of one order.
///
/// Expectations over `Z ~ Exp(1)` use `log_exp` (a Gauss rule in `log Z`):
/// the Weibull integrands contain `log Z` and `Z^r`, for which
/// Gauss–Laguerre converges only like `1/order`.
#[derive(Debug, Clone)]
pub struct Rules {
    pub hermite: QuadratureRule,
    pub laguerre: QuadratureRule,
    pub log_exp: QuadratureRule,
}

impl Rules {
    pub fn new(order: usize) -> Result<Self> {
        Ok(Rules {
            hermite: make_rule(RuleKind::GaussHermiteNormal, order)?,
            laguerre: make_rule(RuleKind::GaussLaguerreExp1, order)?,
            log_exp: make_rule(RuleKind::GaussLogExp1, order)?,
        })
    }

    pub fn order(&self) -> usize {
        self.hermite.order
    }
}

/// `p(t | y) = e^{t y} / (2 cosh y)` for `t` in {-1, +1}.
pub fn logit_prob(t: f64, y: f64) -> f64 {
    1.0 / (1.0 + Float::exp(-2.0 * t * y))
}

/// `E[f(T, Q, Z0)]` with `Q, Z0` standard normal and `T | Z0 ~ Logit(S Z0)`.
pub fn expect_logit<F: Fn(f64, f64, f64) -> f64>(f: F, s: f64, rules: &Rules) -> Result<f64> {
    let h = &rules.hermite;
    let mut acc = 0.0;
    for (&z0, &wz) in h.nodes.iter().zip(&h.weights) {
        for t in [-1.0, 1.0] {
            let pt = logit_prob(t, s * z0);
            for (&q, &wq) in h.nodes.iter().zip(&h.weights) {
                let v = f(t, q, z0);
                if !v.is_finite() {
                    return Err(Error::NonFiniteIntegrand { t, q, z0 });
                }
                acc += wz * wq * pt * v;
            }
        }
    }
    Ok(acc)
}

/// `E[f(Z, Q, Z0)]` with `Z ~ Exp(1)` and `Q, Z0` standard normal.
pub fn expect_weibull<F: Fn(f64, f64, f64) -> f64>(f: F, rules: &Rules) -> Result<f64> {
    let h = &rules.hermite;
    let l = &rules.log_exp;
    let mut acc = 0.0;
    for (&u, &wl) in l.nodes.iter().zip(&l.weights) {
        let z = Float::exp(u);
        for (&q, &wq) in h.nodes.iter().zip(&h.weights) {
            for (&z0, &wz) in h.nodes.iter().zip(&h.weights) {
                let v = f(z, q, z0);
                if !v.is_finite() {
                    return Err(Error::NonFiniteIntegrand { t: z, q, z0 });
                }
                acc += wl * wq * wz * v;
            }
        }
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn moment(rule: &QuadratureRule, k: i32) -> f64 {
        rule.expect(|x| Float::powi(x, k))
    }

    #[test]
    fn hermite_moments() {
        let r = make_rule(RuleKind::GaussHermiteNormal, 40).unwrap();
        assert!((r.weights.iter().sum::<f64>() - 1.0).abs() < 1e-13);
        let mut dfact = 1.0;
        for k in 1..40 {
            let m = moment(&r, k);
            if k % 2 == 1 {
                let scale = moment(&r, k + 1);
                assert!(m.abs() < 1e-14 * scale.max(1.0), "odd moment {k}: {m}");
            } else {
                dfact *= (k - 1) as f64;
                assert!((m / dfact - 1.0).abs() < 1e-10, "moment {k}: {m} vs {dfact}");
            }
        }
    }

    #[test]
    fn laguerre_moments() {
        let r = make_rule(RuleKind::GaussLaguerreExp1, 40).unwrap();
        let mut fact = 1.0;
        for k in 1..=20 {
            fact *= k as f64;
            let m = moment(&r, k);
            assert!((m / fact - 1.0).abs() < 1e-10, "moment {k}: {m} vs {fact}");
        }
        assert!(r.nodes.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn log_exp_cumulants() {
        let euler = 0.577_215_664_901_532_9;
        let zeta3 = 1.202_056_903_159_594_3;
        for &n in &[8usize, 40, 80] {
            let r = make_rule(RuleKind::GaussLogExp1, n).unwrap();
            let mean = r.expect(|u| u);
            let var = r.expect(|u| (u - mean) * (u - mean));
            let k3 = r.expect(|u| Float::powi(u - mean, 3));
            assert!((mean + euler).abs() < 1e-12, "order {n}: {mean}");
            assert!((var - core::f64::consts::PI.powi(2) / 6.0).abs() < 1e-11);
            assert!((k3 + 2.0 * zeta3).abs() < 1e-11);
        }
        let r = make_rule(RuleKind::GaussLogExp1, 40).unwrap();
        let mut fact = 1.0;
        for k in 1..=3 {
            fact *= k as f64;
            let m = r.expect(|u| Float::exp(k as f64 * u));
            assert!((m / fact - 1.0).abs() < 1e-10, "E[Z^{k}] = {m}");
        }
    }

    #[test]
    fn log_moment_against_high_order() {
        let rules = Rules::new(40).unwrap();
        let oracle = Rules::new(200).unwrap();
        let a = expect_weibull(|z, _, _| Float::ln(z), &rules).unwrap();
        let b = expect_weibull(|z, _, _| Float::ln(z), &oracle).unwrap();
        assert!((a - b).abs() < 1e-3);
        assert!((a + 0.577_215_664_9).abs() < 1e-3);
    }

    #[test]
    fn low_orders() {
        let r = make_rule(RuleKind::GaussHermiteNormal, 1).unwrap();
        assert_eq!(r.nodes, [0.0]);
        let r = make_rule(RuleKind::GaussLaguerreExp1, 1).unwrap();
        assert!((r.nodes[0] - 1.0).abs() < 1e-15);
        assert!(make_rule(RuleKind::GaussLaguerreExp1, 0).is_err());
    }

    #[test]
    fn logit_total_probability_and_odd() {
        let rules = Rules::new(40).unwrap();
        let one = expect_logit(|_, _, _| 1.0, 1.0, &rules).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let et = expect_logit(|t, _, _| t, 1.0, &rules).unwrap();
        assert!(et.abs() < 1e-14);
    }

    #[test]
    fn weibull_total_and_independence() {
        let rules = Rules::new(20).unwrap();
        let one = expect_weibull(|_, _, _| 1.0, &rules).unwrap();
        assert!((one - 1.0).abs() < 1e-12);
        let zq = expect_weibull(|z, q, _| z * q, &rules).unwrap();
        assert!(zq.abs() < 1e-12);
    }

    #[test]
    fn separable_product() {
        let rules = Rules::new(30).unwrap();
        let f = |q: f64| Float::cos(q) + q * q;
        let g = |z0: f64| Float::exp(0.3 * z0);
        let joint = expect_weibull(|_, q, z0| f(q) * g(z0), &rules).unwrap();
        let prod = rules.hermite.expect(f) * rules.hermite.expect(g);
        assert!((joint - prod).abs() < 1e-12);
    }

    #[test]
    fn non_finite_reports_node() {
        let rules = Rules::new(4).unwrap();
        let e = expect_logit(|_, q, _| if q > 0.0 { f64::NAN } else { 0.0 }, 1.0, &rules);
        assert!(matches!(e, Err(Error::NonFiniteIntegrand { .. })));
    }
}
