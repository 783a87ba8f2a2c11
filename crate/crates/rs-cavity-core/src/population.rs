//! Synthetic populations: random covariance, true parameter vector, covariates.

use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PopulationSpec {
    pub p: usize,
    /// Population covariance of the covariates.
    pub a0: DMatrix<f64>,
    /// Symmetric square root of `a0`.
    pub a0_sqrt: DMatrix<f64>,
    pub beta0: DVector<f64>,
    /// Eigenvalues of `a0` after rescaling.
    pub eigenvalues: Vec<f64>,
    /// Common factor applied to the raw spectrum.
    pub scale: f64,
    pub s: f64,
    pub s0: f64,
    pub alpha2: f64,
}

/// Flat, serializable form of a [`PopulationSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationRecord {
    pub p: usize,
    pub eigenvalues: Vec<f64>,
    /// Row-major `p x p` covariance.
    pub a0: Vec<f64>,
    pub beta0: Vec<f64>,
    #[serde(rename = "S")]
    pub s: f64,
    #[serde(rename = "S0")]
    pub s0: f64,
    pub alpha2: f64,
}

impl PopulationSpec {
    pub fn record(&self) -> PopulationRecord {
        let p = self.p;
        let mut a0 = Vec::with_capacity(p * p);
        for i in 0..p {
            for j in 0..p {
                a0.push(self.a0[(i, j)]);
            }
        }
        PopulationRecord {
            p,
            eigenvalues: self.eigenvalues.clone(),
            a0,
            beta0: self.beta0.iter().copied().collect(),
            s: self.s,
            s0: self.s0,
            alpha2: self.alpha2,
        }
    }

    /// Builds a spec from an explicit covariance and true vector.
    pub fn from_parts(a0: DMatrix<f64>, beta0: DVector<f64>) -> Result<Self> {
        let p = a0.nrows();
        if p == 0 || a0.ncols() != p || beta0.len() != p {
            return Err(Error::InvalidDimension(p));
        }
        let eig = a0.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| !(l > 0.0)) {
            return Err(Error::SingularMatrix);
        }
        let half = DMatrix::from_diagonal(&eig.eigenvalues.map(Float::sqrt));
        let a0_sqrt = &eig.eigenvectors * half * eig.eigenvectors.transpose();
        let s = Float::sqrt(beta0.dot(&(&a0 * &beta0)));
        let alpha2 = alpha_squared(&a0)?;
        let mut eigenvalues: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        eigenvalues.sort_by(f64::total_cmp);
        Ok(PopulationSpec {
            p,
            s0: beta0.norm(),
            a0,
            a0_sqrt,
            beta0,
            eigenvalues,
            scale: 1.0,
            s,
            alpha2,
        })
    }
}

/// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the signs
/// of `diag(R)` moved into `Q`.
pub fn sample_haar_orthogonal<R: Rng + ?Sized>(p: usize, rng: &mut R) -> Result<DMatrix<f64>> {
    if p == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let g = DMatrix::<f64>::from_fn(p, p, |_, _| StandardNormal.sample(rng));
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..p {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `A0 = c O diag(lambda) O^T` with `lambda ~ U[eig_support]`, `beta0 = e1`
/// and `c` chosen so that `beta0 . A0 beta0 = s_target^2`.
pub fn build_population<R: Rng + ?Sized>(p: usize, eig_support: (f64, f64), s_target: f64, rng: &mut R) -> Result<PopulationSpec> {
    if !(s_target > 0.0) {
        return Err(Error::InvalidArgument(alloc::format!("S_target must be positive, got {s_target}")));
    }
    let (lo, hi) = eig_support;
    if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
        return Err(Error::InvalidArgument(alloc::format!(
            "empty or non-positive eigenvalue support [{lo}, {hi}]"
        )));
    }
    let o = sample_haar_orthogonal(p, rng)?;
    let dist = Uniform::new_inclusive(lo, hi).map_err(|e| Error::InvalidArgument(alloc::format!("{e}")))?;
    let lambda: Vec<f64> = (0..p).map(|_| dist.sample(rng)).collect();

    // beta0 . A0 beta0 = sum_k O_{1k}^2 lambda_k for beta0 = e1.
    let quad: f64 = (0..p).map(|k| o[(0, k)] * o[(0, k)] * lambda[k]).sum();
    let c = s_target * s_target / quad;

    let scaled = DVector::from_iterator(p, lambda.iter().map(|&l| c * l));
    let root = scaled.map(Float::sqrt);
    let mut a0 = &o * DMatrix::from_diagonal(&scaled) * o.transpose();
    let mut a0_sqrt = &o * DMatrix::from_diagonal(&root) * o.transpose();
    symmetrize(&mut a0);
    symmetrize(&mut a0_sqrt);

    let mut beta0 = DVector::zeros(p);
    beta0[0] = 1.0;
    let alpha2 = alpha_squared(&a0)?;
    let mut eigenvalues: Vec<f64> = scaled.iter().copied().collect();
    eigenvalues.sort_by(f64::total_cmp);
    let s = Float::sqrt(a0[(0, 0)]);
    Ok(PopulationSpec {
        p,
        a0,
        a0_sqrt,
        beta0,
        eigenvalues,
        scale: c,
        s,
        s0: 1.0,
        alpha2,
    })
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

/// `Tr(A0^{-1}) / p` via the Cholesky factor: `Tr(A^{-1}) = ||L^{-1}||_F^2`.
pub fn alpha_squared(a0: &DMatrix<f64>) -> Result<f64> {
    let p = a0.nrows();
    if p == 0 || a0.ncols() != p {
        return Err(Error::InvalidDimension(p));
    }
    let chol = a0.clone().cholesky().ok_or(Error::SingularMatrix)?;
    let mut linv = DMatrix::<f64>::identity(p, p);
    if !chol.l_dirty().solve_lower_triangular_mut(&mut linv) {
        return Err(Error::SingularMatrix);
    }
    let mut tr = 0.0;
    for j in 0..p {
        for i in j..p {
            tr += linv[(i, j)] * linv[(i, j)];
        }
    }
    if !tr.is_finite() {
        return Err(Error::SingularMatrix);
    }
    Ok(tr / p as f64)
}

/// `n x p` design with i.i.d. rows `N(0, A0)`, as `G A0^{1/2}` with `G`
/// filled row by row from the stream.
pub fn sample_covariates<R: Rng + ?Sized>(n: usize, spec: &PopulationSpec, rng: &mut R) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let p = spec.p;
    let mut g = DMatrix::<f64>::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            g[(i, j)] = StandardNormal.sample(rng);
        }
    }
    Ok(g * &spec.a0_sqrt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::vec;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |a, &b| a.max(b.abs()))
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for &p in &[1usize, 2, 5, 40] {
            let o = sample_haar_orthogonal(p, &mut rng).unwrap();
            let e = o.transpose() * &o - DMatrix::identity(p, p);
            assert!(max_abs(&e) <= 1e-12);
        }
        assert!(sample_haar_orthogonal(0, &mut rng).is_err());
    }

    #[test]
    fn haar_p1_signs_balanced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pos = (0..2000)
            .filter(|_| sample_haar_orthogonal(1, &mut rng).unwrap()[(0, 0)] > 0.0)
            .count();
        assert!((pos as f64 - 1000.0).abs() < 100.0);
    }

    #[test]
    fn population_invariants() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = build_population(100, (0.1, 10.0), 1.0, &mut rng).unwrap();
        assert!((spec.s - 1.0).abs() <= 1e-12);
        let quad = spec.beta0.dot(&(&spec.a0 * &spec.beta0));
        assert!((quad - 1.0).abs() <= 1e-12);
        assert!(max_abs(&(&spec.a0 - spec.a0.transpose())) <= 1e-12 * max_abs(&spec.a0));
        for &l in &spec.eigenvalues {
            assert!(l >= spec.scale * 0.1 * (1.0 - 1e-12) && l <= spec.scale * 10.0 * (1.0 + 1e-12));
        }
        let sq = &spec.a0_sqrt * &spec.a0_sqrt;
        assert!(max_abs(&(sq - &spec.a0)) <= 1e-12 * max_abs(&spec.a0));
    }

    #[test]
    fn degenerate_support_is_isotropic() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let spec = build_population(2, (1.0, 1.0), 2.0, &mut rng).unwrap();
        let expect = DMatrix::<f64>::identity(2, 2) * 4.0;
        assert!(max_abs(&(&spec.a0 - expect)) <= 1e-12);
        assert!((spec.s - 2.0).abs() <= 1e-12);
        assert!(build_population(2, (1.0, 0.5), 1.0, &mut rng).is_err());
        assert!(build_population(2, (0.1, 10.0), 0.0, &mut rng).is_err());
    }

    #[test]
    fn alpha2_matches_eigen_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let spec = build_population(50, (0.1, 10.0), 1.0, &mut rng).unwrap();
        let oracle: f64 = spec.a0.clone().symmetric_eigen().eigenvalues.iter().map(|l| 1.0 / l).sum::<f64>() / 50.0;
        assert!((spec.alpha2 - oracle).abs() <= 1e-12 * oracle);
        let from_spectrum: f64 = spec.eigenvalues.iter().map(|l| 1.0 / l).sum::<f64>() / 50.0;
        assert!((spec.alpha2 - from_spectrum).abs() <= 1e-10 * oracle);
    }

    #[test]
    fn alpha2_closed_forms() {
        assert_eq!(alpha_squared(&DMatrix::identity(7, 7)).unwrap(), 1.0);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 0.5]));
        assert!((alpha_squared(&d).unwrap() - 1.25).abs() < 1e-15);
        let sing = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(alpha_squared(&sing), Err(Error::SingularMatrix));
    }

    #[test]
    fn covariates_deterministic_and_correlated() {
        let a0 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let spec = PopulationSpec::from_parts(a0, DVector::from_vec(vec![1.0, 0.0])).unwrap();
        let x1 = sample_covariates(1000, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x2 = sample_covariates(1000, &spec, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        assert_eq!(x1, x2);
        let n = 100_000;
        let x = sample_covariates(n, &spec, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
        let c = x.transpose() * &x / n as f64;
        let corr = c[(0, 1)] / (c[(0, 0)] * c[(1, 1)]).sqrt();
        assert!((corr - 0.5).abs() < 0.03);
    }
}
