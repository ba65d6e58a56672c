//! Analytic check of the minimiser-distance bound on quadratic task pairs.
//!
//! For `L_i(p) = 1/2 (p - m_i)^T A_i (p - m_i)` the Fisher is the constant
//! `A_i`, so every constant in the bound has a closed form.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTaskPair {
    pub a1: DMatrix<f64>,
    pub a2: DMatrix<f64>,
    pub m1: DVector<f64>,
    pub m2: DVector<f64>,
    pub phi0: DVector<f64>,
}

fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigen().eigenvalues.min()
}

/// Spectral norm of a symmetric matrix: its largest absolute eigenvalue.
fn sym_norm(a: &DMatrix<f64>) -> f64 {
    a.clone().symmetric_eigen().eigenvalues.amax()
}

fn check_spd(name: &str, a: &DMatrix<f64>, n: usize) -> Result<()> {
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::Layout(format!("{name} is {}x{}, expected {n}x{n}", a.nrows(), a.ncols())));
    }
    let asym = (a - a.transpose()).amax();
    if asym > SYMMETRY_TOL {
        return Err(Error::Config(format!("{name} is not symmetric (max asymmetry {asym:e})")));
    }
    let lo = min_eigenvalue(a);
    if lo.is_nan() || lo <= 0.0 {
        return Err(Error::Singular(format!("{name} is not positive definite (min eigenvalue {lo:e})")));
    }
    Ok(())
}

impl QuadraticTaskPair {
    pub fn new(
        a1: DMatrix<f64>,
        a2: DMatrix<f64>,
        m1: DVector<f64>,
        m2: DVector<f64>,
        phi0: DVector<f64>,
    ) -> Result<Self> {
        let pair = Self { a1, a2, m1, m2, phi0 };
        pair.validate()?;
        Ok(pair)
    }

    pub fn dim(&self) -> usize {
        self.m1.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if n == 0 || self.m2.len() != n || self.phi0.len() != n {
            return Err(Error::Layout("minimisers and start point must share one nonzero dimension".into()));
        }
        check_spd("A1", &self.a1, n)?;
        check_spd("A2", &self.a2, n)
    }

    pub fn grad1(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.a1 * (p - &self.m1)
    }

    pub fn grad2(&self, p: &DVector<f64>) -> DVector<f64> {
        &self.a2 * (p - &self.m2)
    }

    /// Residual of `A2 (m2 - m1) = g1(p0) - g2(p0) + (A1 - A2)(m1 - p0)`.
    pub fn identity_residual(&self) -> f64 {
        let lhs = &self.a2 * (&self.m2 - &self.m1);
        let rhs = self.grad1(&self.phi0) - self.grad2(&self.phi0) + (&self.a1 - &self.a2) * (&self.m1 - &self.phi0);
        (lhs - rhs).amax()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub c: f64,
    pub r0: f64,
    pub rhs: f64,
    pub holds: bool,
}

pub fn quad_bound_check(pair: &QuadraticTaskPair, c3: f64) -> Result<BoundReport> {
    if !(c3 > 0.0 && c3 < 1.0) {
        return Err(Error::Config(format!("C3 must lie in (0, 1), got {c3}")));
    }
    pair.validate()?;
    let inv = pair.a2.clone().try_inverse().ok_or_else(|| Error::Singular("A2 is not invertible".into()))?;
    let lhs = (&pair.m1 - &pair.m2).norm();
    let c1 = (pair.grad1(&pair.phi0) - pair.grad2(&pair.phi0)).norm();
    let c2 = sym_norm(&(&pair.a1 - &pair.a2));
    let c = sym_norm(&inv);
    let r0 = (&pair.m1 - &pair.phi0).norm();
    let rhs = c / c3 * (c1 + c2 * r0);
    for (name, v) in [("lhs", lhs), ("C1", c1), ("C2", c2), ("c", c), ("R0", r0), ("rhs", rhs)] {
        if !v.is_finite() {
            return Err(Error::Numerical { step: 0, detail: format!("{name} is not finite") });
        }
    }
    Ok(BoundReport { lhs, c1, c2, c3, c, r0, rhs, holds: lhs <= rhs })
}

/// Random SPD matrix `Q diag(lambda) Q^T` with eigenvalues in `[1, cond]`.
pub fn random_spd<R: Rng + ?Sized>(rng: &mut R, n: usize, cond: f64) -> DMatrix<f64> {
    let g: DMatrix<f64> = DMatrix::from_fn(n, n, |_, _| StandardNormal.sample(rng));
    let q = g.qr().q();
    let mut lambda: Vec<f64> = (0..n).map(|_| 1.0 + (cond - 1.0) * rng.random::<f64>()).collect();
    if n >= 2 {
        lambda[0] = 1.0;
        lambda[1] = cond;
    }
    let a: DMatrix<f64> = &q * DMatrix::from_diagonal(&DVector::from_vec(lambda)) * q.transpose();
    (&a + a.transpose()) * 0.5
}

/// Random pair of dimension `n` with both Hessians of condition number at most `cond`.
pub fn random_pair<R: Rng + ?Sized>(rng: &mut R, n: usize, cond: f64) -> QuadraticTaskPair {
    let vec = |rng: &mut R| DVector::<f64>::from_fn(n, |_, _| StandardNormal.sample(rng));
    let a1 = random_spd(rng, n, cond);
    let a2 = random_spd(rng, n, cond);
    let (m1, m2, phi0) = (vec(rng), vec(rng), vec(rng));
    QuadraticTaskPair { a1, a2, m1, m2, phi0 }
}

pub fn condition_number(a: &DMatrix<f64>) -> f64 {
    let e = a.clone().symmetric_eigen().eigenvalues;
    e.max() / e.min()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::labelled_rng;

    #[test]
    fn worked_example() {
        let pair = QuadraticTaskPair::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 2.0,
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let r = quad_bound_check(&pair, 1.0 - 1e-6).unwrap();
        assert!((r.c - 0.5).abs() < 1e-12);
        assert!((r.c1 - 5f64.sqrt()).abs() < 1e-12);
        assert!((r.c2 - 1.0).abs() < 1e-12 && (r.r0 - 1.0).abs() < 1e-12);
        let exact = 0.5 * (5f64.sqrt() + 1.0) / (1.0 - 1e-6);
        assert!((r.rhs - exact).abs() < 1e-12);
        assert!((r.rhs - 1.6180358).abs() < 1e-6);
        assert!((r.lhs - std::f64::consts::SQRT_2).abs() < 1e-6);
        assert!(r.holds);
        assert!(pair.identity_residual() < 1e-12);
    }

    #[test]
    fn equal_minimisers_give_zero_lhs() {
        let m = DVector::from_vec(vec![0.3, -1.0]);
        let pair = QuadraticTaskPair::new(
            DMatrix::identity(2, 2),
            DMatrix::identity(2, 2) * 3.0,
            m.clone(),
            m,
            DVector::zeros(2),
        )
        .unwrap();
        let r = quad_bound_check(&pair, 0.5).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.holds);
    }

    #[test]
    fn singular_and_invalid_inputs() {
        let mut a2 = DMatrix::identity(2, 2);
        a2[(1, 1)] = 0.0;
        let v = DVector::zeros(2);
        assert!(matches!(
            QuadraticTaskPair::new(DMatrix::identity(2, 2), a2, v.clone(), v.clone(), v.clone()),
            Err(Error::Singular(_))
        ));
        let pair =
            QuadraticTaskPair::new(DMatrix::identity(2, 2), DMatrix::identity(2, 2), v.clone(), v.clone(), v).unwrap();
        assert!(quad_bound_check(&pair, 1.0).is_err());
        assert!(quad_bound_check(&pair, 0.0).is_err());
    }

    #[test]
    fn random_spd_respects_condition_bound() {
        let mut rng = labelled_rng(1, "spd");
        for n in [1, 2, 7, 20] {
            let a = random_spd(&mut rng, n, 100.0);
            assert!((&a - a.transpose()).amax() <= SYMMETRY_TOL);
            assert!(condition_number(&a) <= 100.0 + 1e-6);
            assert!(min_eigenvalue(&a) > 0.0);
        }
    }
}
