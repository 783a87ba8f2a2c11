//! Finite-sample penalized maximum likelihood and overlap statistics.

use alloc::string::String;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{logit_logdensity, weibull_derivs, Family, NuisanceParams};
use crate::population::PopulationSpec;
use crate::rs::PenaltyConfig;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitControls {
    pub max_iter: usize,
    /// Converged once `||grad|| <= grad_tol * max(1, |objective|)`.
    pub grad_tol: f64,
    pub armijo_slope: f64,
    pub backtrack: f64,
}

impl Default for FitControls {
    fn default() -> Self {
        FitControls {
            max_iter: 200,
            grad_tol: 1e-8,
            armijo_slope: 1e-4,
            backtrack: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub nuisance_hat: Option<NuisanceParams>,
    /// Minimized objective: negative log-likelihood plus penalty.
    pub objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Objective after each accepted step, starting from the initial point.
    pub objective_trace: Vec<f64>,
    pub warnings: Vec<String>,
}

/// The objective `-sum_i log p(T_i | X_i.beta, nuisance) + (p/2) beta.(tau' C_n + eta' A0) beta`
/// over `theta = (beta, phi, log sigma)` (the last two for Weibull only).
pub struct PmlProblem<'a> {
    x: &'a DMatrix<f64>,
    t: &'a [f64],
    family: Family,
    /// `p (tau' C_n + eta' A0)`.
    pen: DMatrix<f64>,
    log_t: Option<DVector<f64>>,
}

impl<'a> PmlProblem<'a> {
    pub fn new(x: &'a DMatrix<f64>, t: &'a [f64], family: Family, a0: &DMatrix<f64>, penalty: PenaltyConfig) -> Result<Self> {
        let (n, p) = x.shape();
        if n == 0 || p == 0 || t.len() != n || a0.shape() != (p, p) {
            return Err(Error::InvalidDimension(p));
        }
        let mut pen = DMatrix::<f64>::zeros(p, p);
        if penalty.tau_prime != 0.0 {
            pen += x.tr_mul(x) * (penalty.tau_prime / n as f64);
        }
        if penalty.eta_prime != 0.0 {
            pen += a0 * penalty.eta_prime;
        }
        pen *= p as f64;
        let log_t = match family {
            Family::Logit => {
                if t.iter().any(|&v| v != 1.0 && v != -1.0) {
                    return Err(Error::InvalidArgument("logit responses must be -1 or +1".into()));
                }
                None
            }
            Family::Weibull => {
                if t.iter().any(|&v| !(v > 0.0)) {
                    return Err(Error::InvalidArgument("survival times must be positive".into()));
                }
                Some(DVector::from_iterator(n, t.iter().map(|&v| Float::ln(v))))
            }
        };
        Ok(PmlProblem { x, t, family, pen, log_t })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols() + self.family.nuisance_dim()
    }

    fn split<'b>(&self, theta: &'b DVector<f64>) -> (nalgebra::DVectorView<'b, f64>, f64, f64) {
        let p = self.x.ncols();
        let beta = theta.rows(0, p);
        match self.family {
            Family::Logit => (beta, 0.0, 0.0),
            Family::Weibull => (beta, theta[p], theta[p + 1]),
        }
    }

    pub fn value(&self, theta: &DVector<f64>) -> f64 {
        let (beta, phi, s) = self.split(theta);
        let lin = self.x * beta;
        let mut nll = 0.0;
        match self.family {
            Family::Logit => {
                for (i, &y) in lin.iter().enumerate() {
                    nll -= logit_logdensity(self.t[i], y).unwrap_or(f64::NAN);
                }
            }
            Family::Weibull => {
                let lt = self.log_t.as_ref().expect("weibull log times");
                let sigma = Float::exp(s);
                for (i, &y) in lin.iter().enumerate() {
                    let l = (phi + lt[i]) / sigma;
                    nll -= l - s - lt[i] + y - Float::exp(l + y);
                }
            }
        }
        let pb = &self.pen * beta;
        nll + 0.5 * beta.dot(&pb)
    }

    /// Objective, gradient and Hessian at `theta`.
    pub fn evaluate(&self, theta: &DVector<f64>) -> (f64, DVector<f64>, DMatrix<f64>) {
        let (n, p) = self.x.shape();
        let d = self.dim();
        let (beta, phi, s) = self.split(theta);
        let lin = self.x * beta;
        let mut nll = 0.0;
        let mut gy = DVector::<f64>::zeros(n);
        let mut hy = DVector::<f64>::zeros(n);
        let mut gnu = [0.0; 2];
        let mut hnu = [0.0; 3];
        let mut cross = DMatrix::<f64>::zeros(n, 2);
        match self.family {
            Family::Logit => {
                for i in 0..n {
                    let y = lin[i];
                    let th = Float::tanh(y);
                    nll -= logit_logdensity(self.t[i], y).unwrap_or(f64::NAN);
                    gy[i] = -(self.t[i] - th);
                    hy[i] = 1.0 - th * th;
                }
            }
            Family::Weibull => {
                for i in 0..n {
                    let dv = weibull_derivs(self.t[i], lin[i], phi, s).unwrap_or_else(|_| nan_derivs());
                    nll -= dv.logp;
                    gy[i] = -dv.d_y;
                    hy[i] = -dv.d_yy;
                    gnu[0] -= dv.d_phi;
                    gnu[1] -= dv.d_s;
                    hnu[0] -= dv.d_phiphi;
                    hnu[1] -= dv.d_phis;
                    hnu[2] -= dv.d_ss;
                    cross[(i, 0)] = -dv.d_yphi;
                    cross[(i, 1)] = -dv.d_ys;
                }
            }
        }
        let pb = &self.pen * beta;
        let obj = nll + 0.5 * beta.dot(&pb);

        let mut grad = DVector::<f64>::zeros(d);
        grad.rows_mut(0, p).copy_from(&(self.x.tr_mul(&gy) + &pb));
        let mut scaled = self.x.clone();
        for i in 0..n {
            let w = Float::sqrt(hy[i].max(0.0));
            scaled.row_mut(i).scale_mut(w);
        }
        let mut hess = DMatrix::<f64>::zeros(d, d);
        hess.view_mut((0, 0), (p, p)).copy_from(&(scaled.tr_mul(&scaled) + &self.pen));
        if self.family == Family::Weibull {
            grad[p] = gnu[0];
            grad[p + 1] = gnu[1];
            let xc = self.x.tr_mul(&cross);
            hess.view_mut((0, p), (p, 2)).copy_from(&xc);
            hess.view_mut((p, 0), (2, p)).copy_from(&xc.transpose());
            hess[(p, p)] = hnu[0];
            hess[(p, p + 1)] = hnu[1];
            hess[(p + 1, p)] = hnu[1];
            hess[(p + 1, p + 1)] = hnu[2];
        }
        (obj, grad, hess)
    }

    /// Starting point: `beta = 0`; for Weibull, `(phi, sigma)` matched to the
    /// mean and variance of `log T` under `beta = 0`.
    pub fn initial(&self) -> DVector<f64> {
        let p = self.x.ncols();
        let mut theta = DVector::<f64>::zeros(self.dim());
        if let Some(lt) = &self.log_t {
            let n = lt.len() as f64;
            let mean = lt.sum() / n;
            let var = lt.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            // log T = sigma log Z - phi with Var(log Z) = pi^2/6, E log Z = -gamma.
            let sigma = (Float::sqrt(var) * Float::sqrt(6.0) / core::f64::consts::PI).max(1e-3);
            theta[p] = -mean - EULER_GAMMA * sigma;
            theta[p + 1] = Float::ln(sigma);
        }
        theta
    }
}

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

fn nan_derivs() -> crate::kernels::WeibullDerivs {
    let n = f64::NAN;
    crate::kernels::WeibullDerivs {
        logp: n,
        d_y: n,
        d_phi: n,
        d_s: n,
        d_yy: n,
        d_yphi: n,
        d_ys: n,
        d_phiphi: n,
        d_phis: n,
        d_ss: n,
    }
}

/// Maximizes the penalized log-likelihood by Newton's method with Levenberg
/// damping and Armijo backtracking.
pub fn fit_pml(
    x: &DMatrix<f64>,
    t: &[f64],
    family: Family,
    spec: &PopulationSpec,
    penalty: PenaltyConfig,
    controls: &FitControls,
) -> Result<FitResult> {
    let problem = PmlProblem::new(x, t, family, &spec.a0, penalty)?;
    let theta0 = problem.initial();
    let mut fit = minimize(&problem, theta0, controls);
    let zeta = x.ncols() as f64 / x.nrows() as f64;
    if penalty.tau_prime > 0.0 && penalty.eta_prime == 0.0 && zeta >= 0.9 {
        fit.warnings.push(alloc::format!(
            "empirical-only penalty at p/n = {zeta:.3}: sample covariance is near-singular"
        ));
    }
    Ok(fit)
}

pub fn minimize(problem: &PmlProblem, mut theta: DVector<f64>, controls: &FitControls) -> FitResult {
    let d = problem.dim();
    let (mut obj, mut grad, mut hess) = problem.evaluate(&theta);
    let mut lambda = 0.0;
    let mut iterations = 0;
    let mut converged = false;
    let mut trace = alloc::vec![obj];
    while iterations < controls.max_iter {
        let gnorm = grad.norm();
        if !obj.is_finite() || !gnorm.is_finite() {
            break;
        }
        if gnorm <= controls.grad_tol * obj.abs().max(1.0) {
            converged = true;
            break;
        }
        iterations += 1;
        let scale = (0..d).map(|i| hess[(i, i)].abs()).fold(0.0, f64::max).max(1.0);
        let mut accepted = false;
        for _ in 0..30 {
            let mut h = hess.clone();
            for i in 0..d {
                h[(i, i)] += lambda;
            }
            let Some(chol) = h.cholesky() else {
                lambda = (lambda * 10.0).max(1e-10 * scale);
                continue;
            };
            let dir = -chol.solve(&grad);
            let slope = grad.dot(&dir);
            if !(slope < 0.0) {
                lambda = (lambda * 10.0).max(1e-10 * scale);
                continue;
            }
            // At the rounding floor the objective can no longer resolve the
            // decrease; accept the Newton step unless it increases the
            // objective beyond summation noise.
            let noise = 1e-12 * obj.abs().max(1.0);
            let floor = -slope <= 1e-13 * obj.abs().max(1.0);
            let mut step = 1.0;
            for _ in 0..60 {
                let trial = &theta + &dir * step;
                let v = problem.value(&trial);
                let ok = if floor {
                    v <= obj + noise
                } else {
                    v <= obj + controls.armijo_slope * step * slope
                };
                if v.is_finite() && ok {
                    theta = trial;
                    accepted = true;
                    break;
                }
                step *= controls.backtrack;
            }
            if accepted {
                lambda *= 0.1;
                if lambda < 1e-14 * scale {
                    lambda = 0.0;
                }
                break;
            }
            lambda = (lambda * 10.0).max(1e-6 * scale);
        }
        if !accepted {
            break;
        }
        let e = problem.evaluate(&theta);
        obj = e.0;
        grad = e.1;
        hess = e.2;
        trace.push(obj);
    }
    let p = d - problem.family.nuisance_dim();
    let nuisance_hat = match problem.family {
        Family::Logit => None,
        Family::Weibull => Some(NuisanceParams {
            phi: theta[p],
            sigma: Float::exp(theta[p + 1]),
        }),
    };
    FitResult {
        beta_hat: theta.rows(0, p).into_owned(),
        nuisance_hat,
        objective: obj,
        gradient_norm: grad.norm(),
        converged,
        iterations,
        objective_trace: trace,
        warnings: Vec::new(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OverlapSample {
    #[serde(rename = "K_n")]
    pub k_n: f64,
    #[serde(rename = "V_n")]
    pub v_n: f64,
}

/// `K_n = beta_hat.beta0 / |beta0|^2` and `V_n = |(I - beta0 beta0^T/|beta0|^2) beta_hat| / alpha`.
pub fn compute_overlaps(beta_hat: &DVector<f64>, spec: &PopulationSpec) -> Result<OverlapSample> {
    let b0 = &spec.beta0;
    let nb2 = b0.norm_squared();
    if !(nb2 > 0.0) {
        return Err(Error::InvalidArgument("beta0 must be nonzero".into()));
    }
    if !(spec.alpha2 > 0.0) {
        return Err(Error::InvalidArgument("alpha2 must be positive".into()));
    }
    let k = beta_hat.dot(b0) / nb2;
    let perp = beta_hat - b0 * k;
    Ok(OverlapSample {
        k_n: k,
        v_n: perp.norm() / Float::sqrt(spec.alpha2),
    })
}

/// Replicate-level split of the mean squared error into spread and squared bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MseDecomposition {
    /// Mean of `|beta_hat - beta0|^2`.
    pub mse: f64,
    /// Mean of `|beta_hat - mean(beta_hat)|^2`.
    pub variance: f64,
    /// `|mean(beta_hat) - beta0|^2`.
    pub bias2: f64,
}

pub fn mse_decomposition(beta_hats: &[DVector<f64>], beta0: &DVector<f64>) -> Result<MseDecomposition> {
    let Some(first) = beta_hats.first() else {
        return Err(Error::InvalidArgument("no estimates".into()));
    };
    if beta_hats.iter().any(|b| b.len() != beta0.len()) {
        return Err(Error::InvalidDimension(first.len()));
    }
    let m = beta_hats.len() as f64;
    let mean = beta_hats.iter().fold(DVector::zeros(beta0.len()), |acc, b| acc + b) / m;
    let mse = beta_hats.iter().map(|b| (b - beta0).norm_squared()).sum::<f64>() / m;
    let variance = beta_hats.iter().map(|b| (b - &mean).norm_squared()).sum::<f64>() / m;
    Ok(MseDecomposition {
        mse,
        variance,
        bias2: (&mean - beta0).norm_squared(),
    })
}

/// Inverts `(phi_hat - phi0)/sigma0 = h` and `sigma_hat/sigma0 = g`.
pub fn corrected_nuisance(fit: NuisanceParams, h: f64, g: f64) -> Result<NuisanceParams> {
    if !(g > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("g must be positive, got {g}")));
    }
    let sigma = fit.sigma / g;
    Ok(NuisanceParams {
        phi: fit.phi - sigma * h,
        sigma,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{sample_logit, sample_weibull};
    use crate::population::{build_population, sample_covariates};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::vec::Vec;

    fn data(family: Family, n: usize, p: usize, seed: u64) -> (DMatrix<f64>, Vec<f64>, PopulationSpec) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = build_population(p, (0.1, 10.0), 1.0, &mut rng).unwrap();
        let x = sample_covariates(n, &spec, &mut rng).unwrap();
        let lin = &x * &spec.beta0;
        let nuis0 = NuisanceParams { phi: 0.0, sigma: 1.0 };
        let t = lin
            .iter()
            .map(|&y| match family {
                Family::Logit => sample_logit(y, &mut rng),
                Family::Weibull => sample_weibull(y, nuis0, &mut rng),
            })
            .collect();
        (x, t, spec)
    }

    #[test]
    fn low_dimensional_logit_consistency() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a0 = DMatrix::<f64>::identity(1, 1);
        let spec = PopulationSpec::from_parts(a0, DVector::from_element(1, 2.0)).unwrap();
        let x = sample_covariates(1000, &spec, &mut rng).unwrap();
        let t: Vec<f64> = x.column(0).iter().map(|&xi| sample_logit(2.0 * xi, &mut rng)).collect();
        let fit = fit_pml(&x, &t, Family::Logit, &spec, PenaltyConfig::none(), &FitControls::default()).unwrap();
        assert!(fit.converged);
        // Fisher information per observation: E[X^2 sech^2(2X)] for X ~ N(0, 1).
        let info: f64 = crate::quadrature::make_rule(crate::quadrature::RuleKind::GaussHermiteNormal, 80)
            .unwrap()
            .expect(|z| z * z * (1.0 - (2.0 * z).tanh().powi(2)));
        let se = 1.0 / (1000.0 * info).sqrt();
        assert!((fit.beta_hat[0] - 2.0).abs() < 3.0 * se, "{} se {se}", fit.beta_hat[0]);
    }

    #[test]
    fn gradient_and_hessian_match_finite_differences() {
        for family in [Family::Logit, Family::Weibull] {
            let (x, t, spec) = data(family, 60, 6, 2);
            let pen = PenaltyConfig {
                eta_prime: 0.2,
                tau_prime: 0.3,
            };
            let prob = PmlProblem::new(&x, &t, family, &spec.a0, pen).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let theta = DVector::from_fn(prob.dim(), |_, _| rand::Rng::random_range(&mut rng, -0.3..0.3));
            let (v, g, h) = prob.evaluate(&theta);
            assert!((v - prob.value(&theta)).abs() <= 1e-12 * v.abs());
            let eps = 1e-5;
            for k in 0..prob.dim() {
                let mut a = theta.clone();
                let mut b = theta.clone();
                a[k] += eps;
                b[k] -= eps;
                let fd = (prob.value(&a) - prob.value(&b)) / (2.0 * eps);
                assert!(
                    (fd - g[k]).abs() <= 1e-6 * g[k].abs().max(1.0),
                    "{family:?} grad {k}: {fd} vs {}",
                    g[k]
                );
                let gd = (prob.evaluate(&a).1 - prob.evaluate(&b).1) / (2.0 * eps);
                for j in 0..prob.dim() {
                    assert!(
                        (gd[j] - h[(j, k)]).abs() <= 1e-6 * h[(j, k)].abs().max(1.0),
                        "{family:?} hess {j},{k}"
                    );
                }
            }
        }
    }

    #[test]
    fn fits_converge_with_monotone_objective() {
        for family in [Family::Logit, Family::Weibull] {
            let (x, t, spec) = data(family, 200, 40, 3);
            let fit = fit_pml(&x, &t, family, &spec, PenaltyConfig::oracle(0.2), &FitControls::default()).unwrap();
            assert!(fit.converged, "{family:?}");
            assert!(fit.gradient_norm <= 1e-8 * fit.objective.abs().max(1.0));
            assert!(fit.objective_trace.windows(2).all(|w| w[1] <= w[0] + 1e-12 * w[0].abs().max(1.0)));
        }
    }

    #[test]
    fn ml_covariance_property() {
        for (family, pen) in [
            (Family::Logit, PenaltyConfig::none()),
            (Family::Weibull, PenaltyConfig::none()),
            (Family::Logit, PenaltyConfig::oracle(0.3)),
        ] {
            let (x, t, spec) = data(family, 300, 5, 4);
            let c = FitControls::default();
            let fit = fit_pml(&x, &t, family, &spec, pen, &c).unwrap();
            let m = DMatrix::from_fn(5, 5, |i, j| {
                if i == j {
                    1.5 + i as f64 * 0.1
                } else {
                    0.2 / (1.0 + (i + 2 * j) as f64)
                }
            });
            // Rows x_i -> M^T x_i, so the estimate maps to M^{-1} beta_hat.
            let xm = &x * &m;
            let minv = m.clone().try_inverse().unwrap();
            let a0m = m.transpose() * &spec.a0 * &m;
            let spec_m = PopulationSpec::from_parts(a0m, &minv * &spec.beta0).unwrap();
            let fit_m = fit_pml(&xm, &t, family, &spec_m, pen, &c).unwrap();
            let mapped = &minv * &fit.beta_hat;
            assert!((fit_m.beta_hat - mapped).amax() <= 1e-6, "{family:?}");
        }
    }

    #[test]
    fn overlap_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let spec = build_population(20, (0.1, 10.0), 1.0, &mut rng).unwrap();
        let o = compute_overlaps(&spec.beta0, &spec).unwrap();
        assert_eq!((o.k_n, o.v_n), (1.0, 0.0));
        let mut orth = DVector::zeros(20);
        orth[3] = 1.0;
        assert_eq!(compute_overlaps(&orth, &spec).unwrap().k_n, 0.0);
        // beta_hat = 0.8 beta0 + 0.3 A0^{-1/2} u
        let u = DVector::from_fn(20, |i, _| ((i * 7 % 5) as f64 - 2.0) / 10.0);
        let inv_sqrt = spec.a0_sqrt.clone().try_inverse().unwrap();
        let e = &inv_sqrt * &u * 0.3;
        let b = &spec.beta0 * 0.8 + &e;
        let o = compute_overlaps(&b, &spec).unwrap();
        assert!((o.k_n - (0.8 + e[0])).abs() < 1e-14);
        let mut perp = e.clone();
        perp[0] = 0.0;
        assert!((o.v_n - perp.norm() / spec.alpha2.sqrt()).abs() < 1e-14);
        let zero = PopulationSpec {
            beta0: DVector::zeros(20),
            ..spec
        };
        assert!(compute_overlaps(&b, &zero).is_err());
    }

    #[test]
    fn nuisance_correction_inverts_theory() {
        let id = corrected_nuisance(NuisanceParams { phi: 0.3, sigma: 1.2 }, 0.0, 1.0).unwrap();
        assert_eq!(id, NuisanceParams { phi: 0.3, sigma: 1.2 });
        let (phi0, sigma0, h, g) = (0.4, 1.3, 0.12, 0.85);
        let fit = NuisanceParams {
            phi: phi0 + h * sigma0,
            sigma: g * sigma0,
        };
        let c = corrected_nuisance(fit, h, g).unwrap();
        assert!((c.phi - phi0).abs() < 1e-15 && (c.sigma - sigma0).abs() < 1e-15);
        assert!(corrected_nuisance(fit, h, 0.0).is_err());
    }
}
