//! Eigenstructure of the mean-matrix generator: irreducibility, the growth
//! rate `s`, Perron vectors, left eigenpairs and regime tags.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, cvec, opt_dvec};

/// Imaginary parts below this are treated as exactly zero.
pub const IMAG_SNAP_TOL: f64 = 1e-12;
/// A target counts as an eigenvalue when it lies this close to one.
pub const EIGEN_MATCH_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Criticality {
    Subcritical,
    Critical,
    Supercritical,
}

/// Position of `Re λ` relative to `s/2`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `Re λ ∈ (s/2, s]`
    I,
    /// `Re λ = s/2`
    II,
    /// `Re λ < s/2`
    III,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenPair {
    pub lambda: Complex64,
    /// Left eigenvector: `vᵀ B̃ = λ vᵀ`.
    #[serde(with = "cvec")]
    pub v: DVector<Complex64>,
}

impl EigenPair {
    /// Wraps a caller-supplied eigenvector without normalizing it, after
    /// checking the residual.
    pub fn from_vector(btilde: &DMatrix<f64>, lambda: Complex64, v: DVector<Complex64>) -> Result<Self> {
        if v.len() != btilde.nrows() {
            return Err(Error::DimensionMismatch {
                what: "eigenvector",
                expected: btilde.nrows(),
                found: v.len(),
            });
        }
        let pair = EigenPair { lambda: snap(lambda), v };
        let scale = linalg::operator_norm(btilde).max(1.0) * linalg::complex_norm(&pair.v);
        if pair.residual(btilde) > 1e-10 * scale {
            return Err(Error::NotAnEigenvalue {
                target: lambda,
                distance: pair.residual(btilde),
            });
        }
        Ok(pair)
    }

    /// `‖vᵀB̃ − λvᵀ‖`.
    pub fn residual(&self, btilde: &DMatrix<f64>) -> f64 {
        let r = btilde.transpose().map(|x| Complex64::new(x, 0.0)) * &self.v - &self.v * self.lambda;
        linalg::complex_norm(&r)
    }

    pub fn is_real(&self) -> bool {
        self.lambda.im == 0.0
    }

    pub fn scaled(&self, factor: Complex64) -> EigenPair {
        EigenPair { lambda: self.lambda, v: &self.v * factor }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSummary {
    pub eigenvalues: Vec<Complex64>,
    pub s: f64,
    /// Left Perron vector, normalized by `ũᵀu = 1`.
    #[serde(with = "opt_dvec")]
    pub u: Option<DVector<f64>>,
    /// Right Perron vector with coordinates summing to 1.
    #[serde(with = "opt_dvec")]
    pub utilde: Option<DVector<f64>>,
    pub irreducible: bool,
    pub class: Criticality,
}

impl SpectralSummary {
    pub fn perron(&self) -> Result<(&DVector<f64>, &DVector<f64>)> {
        match (&self.u, &self.utilde) {
            (Some(u), Some(ut)) => Ok((u, ut)),
            _ => Err(Error::Reducible),
        }
    }

    pub fn require_supercritical(&self) -> Result<()> {
        if self.s > 0.0 {
            Ok(())
        } else {
            Err(Error::NotSupercritical { s: self.s })
        }
    }

    pub fn regime_of(&self, lambda: Complex64) -> Result<Regime> {
        regime(lambda, self.s)
    }
}

fn snap(z: Complex64) -> Complex64 {
    if z.im.abs() < IMAG_SNAP_TOL {
        Complex64::new(z.re, 0.0)
    } else {
        z
    }
}

/// Strong connectivity of the graph with an edge `i → j` whenever `M_ji > 0`.
pub fn is_irreducible(m: &DMatrix<f64>) -> bool {
    let d = m.nrows();
    if d <= 1 {
        return true;
    }
    let reach = |forward: bool| {
        let mut seen = vec![false; d];
        let mut stack = vec![0usize];
        seen[0] = true;
        while let Some(i) = stack.pop() {
            for j in 0..d {
                let w = if forward { m[(j, i)] } else { m[(i, j)] };
                if j != i && w > 0.0 && !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        seen.into_iter().all(|x| x)
    };
    reach(true) && reach(false)
}

/// Eigenvalues sorted by decreasing real part, then decreasing imaginary part.
pub fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex64>> {
    let schur = m
        .clone()
        .try_schur(f64::EPSILON, 10_000)
        .ok_or(Error::EigenSolver)?;
    let mut vals: Vec<Complex64> = schur.complex_eigenvalues().iter().map(|z| snap(*z)).collect();
    if vals.iter().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
        return Err(Error::EigenSolver);
    }
    vals.sort_by(|a, b| b.re.total_cmp(&a.re).then(b.im.total_cmp(&a.im)));
    Ok(vals)
}

fn real_null_vector(m: &DMatrix<f64>) -> DVector<f64> {
    let svd = m.clone().svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let k = argmin(svd.singular_values.as_slice());
    vt.row(k).transpose()
}

fn argmin(xs: &[f64]) -> usize {
    xs.iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

pub fn spectral_summary(btilde: &DMatrix<f64>) -> Result<SpectralSummary> {
    let eigenvalues = eigenvalues(btilde)?;
    let s = eigenvalues.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
    let irreducible = is_irreducible(btilde);
    let class = if s < 0.0 {
        Criticality::Subcritical
    } else if s == 0.0 {
        Criticality::Critical
    } else {
        Criticality::Supercritical
    };
    let (u, utilde) = if irreducible {
        let d = btilde.nrows();
        let shift = DMatrix::identity(d, d) * s;
        let mut right = real_null_vector(&(btilde - &shift));
        right /= right.sum();
        let mut left = real_null_vector(&(btilde.transpose() - &shift));
        left /= right.dot(&left);
        (Some(left), Some(right))
    } else {
        (None, None)
    };
    Ok(SpectralSummary {
        eigenvalues,
        s,
        u,
        utilde,
        irreducible,
        class,
    })
}

/// Unit-norm left eigenvector for the eigenvalue nearest `target`, phased so
/// the first component of largest modulus is real and positive.
pub fn left_eigenpair(btilde: &DMatrix<f64>, target: Complex64) -> Result<EigenPair> {
    let d = btilde.nrows();
    let vals = eigenvalues(btilde)?;
    let (idx, distance) = vals
        .iter()
        .enumerate()
        .map(|(i, z)| (i, (z - target).norm()))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(Error::EigenSolver)?;
    if distance > EIGEN_MATCH_TOL {
        return Err(Error::NotAnEigenvalue { target, distance });
    }
    let lambda = vals[idx];
    let scale = linalg::operator_norm(btilde).max(1.0);

    // Defective eigenvalues split by roughly sqrt(eps) under perturbation.
    let algebraic = vals
        .iter()
        .filter(|z| (*z - lambda).norm() <= 1e-6 * scale)
        .count();
    let shifted = btilde.transpose().map(|x| Complex64::new(x, 0.0))
        - DMatrix::<Complex64>::identity(d, d) * lambda;
    let svd = shifted.svd(false, true);
    let sv = svd.singular_values.as_slice();
    if algebraic > 1 {
        let geometric = sv.iter().filter(|x| **x <= 1e-8 * scale).count().max(1);
        return Err(Error::MultipleEigenvalue {
            lambda,
            algebraic,
            geometric,
        });
    }
    let k = argmin(sv);
    let vt = svd.v_t.expect("requested V^H");
    let mut v = DVector::from_iterator(d, vt.row(k).iter().map(|z| z.conj()));
    let norm = linalg::complex_norm(&v);
    v /= Complex64::new(norm, 0.0);
    let max_mod = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    let pivot = v
        .iter()
        .find(|z| z.norm() >= max_mod * (1.0 - 1e-9))
        .copied()
        .unwrap_or(Complex64::new(1.0, 0.0));
    v *= pivot.conj() / pivot.norm();
    for z in v.iter_mut() {
        if z.im.abs() < 1e-15 {
            z.im = 0.0;
        }
    }
    Ok(EigenPair { lambda, v })
}

/// Eigenpair by index into the sorted eigenvalue list.
pub fn left_eigenpair_by_index(btilde: &DMatrix<f64>, index: usize) -> Result<EigenPair> {
    let vals = eigenvalues(btilde)?;
    let target = *vals.get(index).ok_or_else(|| {
        Error::InvalidConfig(format!("eigenvalue index {index} out of range (d = {})", vals.len()))
    })?;
    left_eigenpair(btilde, target)
}

pub fn regime(lambda: Complex64, s: f64) -> Result<Regime> {
    if !(s > 0.0) {
        return Err(Error::NotSupercritical { s });
    }
    let half = s / 2.0;
    let tol = 1e-10 * s.max(1.0);
    Ok(if (lambda.re - half).abs() <= tol {
        Regime::II
    } else if lambda.re > half {
        Regime::I
    } else {
        Regime::III
    })
}
