//! Closed-form first and second moments, their large-time limits, and the
//! asymptotic covariance `Σ_v` of scaled projections.

use nalgebra::{DMatrix, DVector, Matrix2};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, mat2};
use crate::model::{CbiParams, EffectiveParams, InitialState};
use crate::spectral::{EigenPair, Regime, SpectralSummary};

/// Absolute floor of the adaptive Simpson tolerance.
pub const SIMPSON_TOL: f64 = 1e-9;
const SIMPSON_REL_FLOOR: f64 = 1e-14;
const SIMPSON_MAX_DEPTH: u32 = 48;

/// `E X_t = e^{tB̃} E X₀ + ∫₀ᵗ e^{uB̃} β̃ du`.
pub fn mean_at(eff: &EffectiveParams, ex0: &DVector<f64>, t: f64) -> DVector<f64> {
    let (flow, integral) = linalg::affine_flow(&eff.btilde, &eff.betatilde, t);
    flow * ex0 + integral
}

/// `E w_{u,X₀} = <u, E X₀> + <u, β̃>/s`.
pub fn w_mean(spec: &SpectralSummary, eff: &EffectiveParams, ex0: &DVector<f64>) -> Result<f64> {
    spec.require_supercritical()?;
    let (u, _) = spec.perron()?;
    Ok(u.dot(ex0) + u.dot(&eff.betatilde) / spec.s)
}

/// `∫₀ᵗ e^{λu} du`.
pub fn exp_integral(lambda: Complex64, t: f64) -> Complex64 {
    let z = lambda * t;
    if z.norm() < 1e-8 {
        t * (1.0 + z / 2.0 + z * z / 6.0)
    } else {
        (z.exp() - 1.0) / lambda
    }
}

fn real_exp_integral(rate: f64, t: f64) -> f64 {
    exp_integral(Complex64::new(rate, 0.0), t).re
}

/// Vector-valued adaptive Simpson quadrature, accuracy judged on the
/// largest component.
pub fn adaptive_simpson(
    f: &dyn Fn(f64) -> DVector<f64>,
    a: f64,
    b: f64,
) -> DVector<f64> {
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = (&fa + &fm * 4.0 + &fb) * ((b - a) / 6.0);
    let tol = SIMPSON_TOL.max(SIMPSON_REL_FLOOR * whole.amax());
    simpson_step(f, a, b, &fa, &fm, &fb, whole, tol, SIMPSON_MAX_DEPTH)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &dyn Fn(f64) -> DVector<f64>,
    a: f64,
    b: f64,
    fa: &DVector<f64>,
    fm: &DVector<f64>,
    fb: &DVector<f64>,
    whole: DVector<f64>,
    tol: f64,
    depth: u32,
) -> DVector<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (fa + &flm * 4.0 + fm) * ((m - a) / 6.0);
    let right = (fm + &frm * 4.0 + fb) * ((b - m) / 6.0);
    let sum = &left + &right;
    let err = (&sum - &whole).amax();
    if depth == 0 || err <= 15.0 * tol {
        return &sum + (&sum - whole) / 15.0;
    }
    simpson_step(f, a, m, fa, &flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, &frm, fb, right, tol / 2.0, depth - 1)
}

/// `C_{v,ℓ}` and `C̃_{v,ℓ}` for every type.
pub fn projection_constants(params: &CbiParams, v: &DVector<Complex64>) -> Result<(Vec<f64>, Vec<Complex64>)> {
    let mut c = Vec::with_capacity(params.d);
    let mut ct = Vec::with_capacity(params.d);
    for l in 0..params.d {
        let q = params.mu[l].projection_quadratics(v)?;
        c.push(2.0 * v[l].norm_sqr() * params.c[l] + q.abs_square);
        ct.push(2.0 * v[l] * v[l] * params.c[l] + q.square);
    }
    Ok((c, ct))
}

/// Terms of the finite-time second moment `E|<v, X_t>|²`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondMomentParts {
    /// `E_{v,λ}(t)`
    pub deterministic: f64,
    /// `I_{λ,ℓ}(t)` per type
    pub branching_integrals: Vec<f64>,
    /// `I_λ(t)`
    pub immigration_integral: f64,
    pub value: f64,
}

pub fn second_moment_parts(
    params: &CbiParams,
    eff: &EffectiveParams,
    pair: &EigenPair,
    x0: &InitialState,
    t: f64,
) -> Result<SecondMomentParts> {
    let lambda = pair.lambda;
    let v = &pair.v;
    let (c, _) = projection_constants(params, v)?;
    let growth = (lambda * t).exp();
    let drift = linalg::project_real(v, &eff.betatilde);
    // |e^{λt}<v,x> + <v,β̃>∫e^{λu}|² = |e^{λt}|² E|<v,x> + <v,β̃>∫e^{-λu}du|²
    let shift = drift * exp_integral(-lambda, t);
    let deterministic = growth.norm_sqr() * x0.projected_second_moment(v, shift);

    let ex0 = x0.mean();
    let rate = 2.0 * lambda.re;
    let integrand = |u: f64| mean_at(eff, &ex0, u) * (rate * (t - u)).exp();
    let branching_integrals: Vec<f64> = if t > 0.0 {
        adaptive_simpson(&integrand, 0.0, t).iter().copied().collect()
    } else {
        vec![0.0; params.d]
    };
    let immigration_integral = real_exp_integral(rate, t);
    let nu_term = params.nu.projection_quadratics(v)?.abs_square;
    let value = deterministic
        + c.iter().zip(&branching_integrals).map(|(a, b)| a * b).sum::<f64>()
        + immigration_integral * nu_term;
    Ok(SecondMomentParts {
        deterministic,
        branching_integrals,
        immigration_integral,
        value,
    })
}

/// `E|<v, X_t>|²`.
pub fn second_moment(
    params: &CbiParams,
    eff: &EffectiveParams,
    pair: &EigenPair,
    x0: &InitialState,
    t: f64,
) -> Result<f64> {
    Ok(second_moment_parts(params, eff, pair, x0, t)?.value)
}

/// Scaling `h(t)` that stabilizes the second moment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Scaling {
    /// `e^{−st}`
    ExpNegS { s: f64 },
    /// `t^{−1} e^{−st}`
    InvTimeExpNegS { s: f64 },
    /// `e^{−2 Re λ t}`
    ExpNegTwoReLambda { re_lambda: f64 },
}

impl Scaling {
    pub fn at(&self, t: f64) -> f64 {
        match *self {
            Scaling::ExpNegS { s } => (-s * t).exp(),
            Scaling::InvTimeExpNegS { s } => (-s * t).exp() / t,
            Scaling::ExpNegTwoReLambda { re_lambda } => (-2.0 * re_lambda * t).exp(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SecondMomentLimit {
    pub regime: Regime,
    pub scaling: Scaling,
    pub m2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentReport {
    pub t: f64,
    pub value: f64,
    pub h_of_t: f64,
    #[serde(rename = "M2")]
    pub m2: f64,
}

/// `(h, M_v^{(2)})` with `h(t) E|<v, X_t>|² → M_v^{(2)}`.
pub fn m2_limit(
    params: &CbiParams,
    eff: &EffectiveParams,
    spec: &SpectralSummary,
    pair: &EigenPair,
    x0: &InitialState,
) -> Result<SecondMomentLimit> {
    let s = spec.s;
    let regime = spec.regime_of(pair.lambda)?;
    let (_, utilde) = spec.perron()?;
    let (c, _) = projection_constants(params, &pair.v)?;
    let ex0 = x0.mean();
    let weighted: f64 = c.iter().zip(utilde.iter()).map(|(a, b)| a * b).sum();
    let re = pair.lambda.re;
    let (scaling, m2) = match regime {
        Regime::III => (
            Scaling::ExpNegS { s },
            w_mean(spec, eff, &ex0)? * weighted / (s - 2.0 * re),
        ),
        Regime::II => (Scaling::InvTimeExpNegS { s }, w_mean(spec, eff, &ex0)? * weighted),
        Regime::I => {
            let drift = linalg::project_real(&pair.v, &eff.betatilde);
            let initial = x0.projected_second_moment(&pair.v, drift / pair.lambda);
            let nu_term = params.nu.projection_quadratics(&pair.v)?.abs_square / (2.0 * re);
            let d = params.d;
            let shifted = DMatrix::identity(d, d) * (2.0 * re) - &eff.btilde;
            let rhs = &ex0 + &eff.betatilde / (2.0 * re);
            let solved = shifted
                .lu()
                .solve(&rhs)
                .ok_or(Error::Singular("2 Re(λ) I − B̃"))?;
            let branching: f64 = c.iter().zip(solved.iter()).map(|(a, b)| a * b).sum();
            (
                Scaling::ExpNegTwoReLambda { re_lambda: re },
                initial + nu_term + branching,
            )
        }
    };
    Ok(SecondMomentLimit { regime, scaling, m2 })
}

pub fn moment_report(
    params: &CbiParams,
    eff: &EffectiveParams,
    spec: &SpectralSummary,
    pair: &EigenPair,
    x0: &InitialState,
    t: f64,
) -> Result<MomentReport> {
    let limit = m2_limit(params, eff, spec, pair, x0)?;
    Ok(MomentReport {
        t,
        value: second_moment(params, eff, pair, x0, t)?,
        h_of_t: limit.scaling.at(t),
        m2: limit.m2,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaClass {
    Zero,
    SingularNonzero,
    Invertible,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassificationReport {
    pub class: SigmaClass,
    /// Types at which the vanishing condition fails, with the reason.
    pub reasons: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaReport {
    pub regime: Regime,
    #[serde(rename = "C")]
    pub c: Vec<f64>,
    #[serde(rename = "Ctilde")]
    pub ctilde: Vec<Complex64>,
    #[serde(rename = "Sigma", with = "mat2")]
    pub sigma: Matrix2<f64>,
    pub classification: SigmaClass,
    /// Class read off the 2×2 matrix itself.
    pub matrix_classification: SigmaClass,
}

/// `[[Re z, Im z], [Im z, −Re z]]`
fn reflection(z: Complex64) -> Matrix2<f64> {
    Matrix2::new(z.re, z.im, z.im, -z.re)
}

pub fn sigma_v(params: &CbiParams, spec: &SpectralSummary, pair: &EigenPair) -> Result<SigmaReport> {
    let s = spec.s;
    let regime = spec.regime_of(pair.lambda)?;
    let (_, utilde) = spec.perron()?;
    let (c, ctilde) = projection_constants(params, &pair.v)?;
    let mut sigma = Matrix2::zeros();
    match regime {
        Regime::I => {
            return Err(Error::RegimeMismatch {
                expected: "II or III",
                found: regime,
            })
        }
        Regime::II => {
            let real = pair.is_real();
            for l in 0..params.d {
                let mut term = Matrix2::identity() * c[l];
                if real {
                    term += reflection(ctilde[l]);
                }
                sigma += term * utilde[l];
            }
        }
        Regime::III => {
            let gap = s - 2.0 * pair.lambda.re;
            let denom = Complex64::new(s, 0.0) - 2.0 * pair.lambda;
            for l in 0..params.d {
                let term = Matrix2::identity() * (c[l] / gap) + reflection(ctilde[l] / denom);
                sigma += term * utilde[l];
            }
        }
    }
    sigma *= 0.5;
    sigma = 0.5 * (sigma + sigma.transpose());
    let classification = sigma_classification(params, pair)?.class;
    Ok(SigmaReport {
        regime,
        c,
        ctilde,
        sigma,
        classification,
        matrix_classification: classify_matrix(&sigma),
    })
}

/// Zero / singular / invertible by direct inspection of a 2×2 matrix.
pub fn classify_matrix(sigma: &Matrix2<f64>) -> SigmaClass {
    let trace = sigma.trace();
    if sigma.amax() <= 1e-12 {
        SigmaClass::Zero
    } else if sigma.determinant() > 1e-12 * trace * trace {
        SigmaClass::Invertible
    } else {
        SigmaClass::SingularNonzero
    }
}

/// Whether `c_ℓ v_ℓ = 0` and `μ_ℓ` charges no `z` with `<v, z> ≠ 0`.
fn type_vanishes(params: &CbiParams, v: &DVector<Complex64>, l: usize) -> Result<Option<String>> {
    let vnorm = linalg::complex_norm(v);
    if params.c[l] > 0.0 && v[l].norm() > 1e-12 * vnorm {
        return Ok(Some(format!("type {l}: diffusion c = {} with v component {}", params.c[l], v[l])));
    }
    let hits = params.mu[l].projection_quadratics(v)?.support_hits;
    if hits > 0.0 {
        return Ok(Some(format!("type {l}: branching jumps with <v,z> != 0 carry mass {hits}")));
    }
    Ok(None)
}

pub fn sigma_classification(params: &CbiParams, pair: &EigenPair) -> Result<ClassificationReport> {
    let mut reasons = Vec::new();
    for l in 0..params.d {
        if let Some(r) = type_vanishes(params, &pair.v, l)? {
            reasons.push(r);
        }
    }
    let class = if reasons.is_empty() {
        SigmaClass::Zero
    } else if !pair.is_real() {
        SigmaClass::Invertible
    } else {
        SigmaClass::SingularNonzero
    };
    Ok(ClassificationReport { class, reasons })
}

/// `E w_{u,X₀} · Σ_v`.
pub fn variance_limit(
    params: &CbiParams,
    spec: &SpectralSummary,
    eff: &EffectiveParams,
    pair: &EigenPair,
    ex0: &DVector<f64>,
) -> Result<Matrix2<f64>> {
    let sigma = sigma_v(params, spec, pair)?.sigma;
    Ok(sigma * w_mean(spec, eff, ex0)?)
}

/// `t ↦ e^{λt}<v, E X₀> + <v, β̃> ∫₀ᵗ e^{λu} du`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProjectionTrajectory {
    pub lambda: Complex64,
    pub start: Complex64,
    pub drift: Complex64,
}

impl ProjectionTrajectory {
    pub fn at(&self, t: f64) -> Complex64 {
        (self.lambda * t).exp() * self.start + self.drift * exp_integral(self.lambda, t)
    }
}

/// The trajectory of `<v, X_t>` when it is deterministic, `None` otherwise.
pub fn deterministic_projection(
    params: &CbiParams,
    eff: &EffectiveParams,
    pair: &EigenPair,
    x0: &InitialState,
) -> Result<Option<ProjectionTrajectory>> {
    let trajectory = ProjectionTrajectory {
        lambda: pair.lambda,
        start: linalg::project_real(&pair.v, &x0.mean()),
        drift: linalg::project_real(&pair.v, &eff.betatilde),
    };
    if params.is_trivial(x0.is_zero_as()) {
        return Ok(Some(trajectory));
    }
    if !x0.projection_is_deterministic(&pair.v) || !params.nu.kills_projection(&pair.v)? {
        return Ok(None);
    }
    for l in 0..params.d {
        if type_vanishes(params, &pair.v, l)?.is_some() {
            return Ok(None);
        }
    }
    Ok(Some(trajectory))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measures::{Atom, DiscreteMeasure};
    use crate::spectral::{left_eigenpair, spectral_summary};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dv(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    fn cv(x: &[(f64, f64)]) -> DVector<Complex64> {
        DVector::from_iterator(x.len(), x.iter().map(|(a, b)| Complex64::new(*a, *b)))
    }

    fn model(d: usize, b: &[f64], c: &[f64], beta: &[f64]) -> CbiParams {
        CbiParams {
            d,
            c: c.to_vec(),
            beta: beta.to_vec(),
            b: DMatrix::from_row_slice(d, d, b),
            nu: DiscreteMeasure::zero(),
            mu: vec![DiscreteMeasure::zero(); d],
        }
    }

    fn scalar_jump_model() -> CbiParams {
        let mut p = model(1, &[1.0], &[0.0], &[0.0]);
        p.mu[0] = DiscreteMeasure::new(vec![Atom::new([1.0], 1.0)]);
        p
    }

    fn circulant() -> CbiParams {
        model(
            3,
            &[0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0],
            &[1.0, 1.0, 1.0],
            &[1.0, 1.0, 1.0],
        )
    }

    fn omega() -> Complex64 {
        Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI / 3.0)
    }

    #[test]
    fn mean_examples() {
        let p = model(1, &[1.0], &[0.0], &[1.0]);
        let eff = p.effective();
        let e = std::f64::consts::E;
        assert_abs_diff_eq!(mean_at(&eff, &dv(&[1.0]), 1.0)[0], 2.0 * e - 1.0, epsilon = 1e-12);
        assert_eq!(mean_at(&eff, &dv(&[1.0]), 0.0)[0], 1.0);
        let trivial = model(1, &[1.0], &[1.0], &[0.0]);
        assert_eq!(mean_at(&trivial.effective(), &dv(&[0.0]), 3.0)[0], 0.0);
    }

    #[test]
    fn w_mean_examples() {
        let p = model(2, &[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &[1.0, 1.0]);
        let eff = p.effective();
        let spec = spectral_summary(&eff.btilde).unwrap();
        assert_abs_diff_eq!(w_mean(&spec, &eff, &dv(&[1.0, 0.0])).unwrap(), 2.0, epsilon = 1e-12);
        let q = model(2, &[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        let eff = q.effective();
        assert_eq!(w_mean(&spec, &eff, &dv(&[0.0, 0.0])).unwrap(), 0.0);
        let ut = spec.utilde.clone().unwrap();
        assert_abs_diff_eq!(w_mean(&spec, &eff, &ut).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn scalar_second_moment() {
        let p = scalar_jump_model();
        let eff = p.effective();
        assert_eq!(eff.btilde[(0, 0)], 1.0);
        let pair = EigenPair::from_vector(&eff.btilde, Complex64::new(1.0, 0.0), cv(&[(1.0, 0.0)])).unwrap();
        let x0 = InitialState::fixed([1.0]);
        let e = std::f64::consts::E;
        let got = second_moment(&p, &eff, &pair, &x0, 1.0).unwrap();
        assert!((got - (2.0 * e * e - e)).abs() < 1e-6);
        assert_eq!(second_moment(&p, &eff, &pair, &x0, 0.0).unwrap(), 1.0);

        let spec = spectral_summary(&eff.btilde).unwrap();
        let lim = m2_limit(&p, &eff, &spec, &pair, &x0).unwrap();
        assert_eq!(lim.regime, Regime::I);
        assert_abs_diff_eq!(lim.m2, 2.0, epsilon = 1e-12);
        for t in [1.0, 5.0, 10.0] {
            let v = second_moment(&p, &eff, &pair, &x0, t).unwrap();
            assert!((lim.scaling.at(t) * v - (2.0 - (-t).exp())).abs() < 1e-8);
        }
    }

    #[test]
    fn deterministic_term_only_when_noise_vanishes() {
        let mut p = model(2, &[2.0, 0.0, 0.0, 2.0], &[0.0, 0.0], &[0.0, 0.0]);
        let jump = DiscreteMeasure::new(vec![Atom::new([1.0, 1.0], 1.0)]);
        p.mu = vec![jump.clone(), jump.clone()];
        p.nu = jump;
        let eff = p.effective();
        let pair = EigenPair::from_vector(&eff.btilde, Complex64::new(1.0, 0.0), cv(&[(1.0, 0.0), (-1.0, 0.0)])).unwrap();
        let x0 = InitialState::fixed([2.0, 1.0]);
        for t in [0.5, 1.0, 2.0] {
            let parts = second_moment_parts(&p, &eff, &pair, &x0, t).unwrap();
            assert_eq!(parts.value, parts.deterministic);
            assert_abs_diff_eq!(parts.value, (2.0 * t).exp(), epsilon = 1e-9 * (2.0 * t).exp());
        }
        let traj = deterministic_projection(&p, &eff, &pair, &x0).unwrap().unwrap();
        assert_abs_diff_eq!(traj.at(1.0).re, std::f64::consts::E, epsilon = 1e-14);
        assert_eq!(traj.at(1.0).im, 0.0);

        let mut noisy = p.clone();
        noisy.c[0] = 0.1;
        assert!(deterministic_projection(&noisy, &eff, &pair, &x0).unwrap().is_none());
        let trivial = model(2, &[1.0, 0.0, 0.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]);
        let traj = deterministic_projection(&trivial, &trivial.effective(), &pair, &InitialState::fixed([0.0, 0.0]))
            .unwrap()
            .unwrap();
        assert_eq!(traj.at(2.0), Complex64::new(0.0, 0.0));
    }

    #[test]
    fn sigma_hand_values() {
        let p = model(2, &[3.0, 1.0, 1.0, 3.0], &[1.0, 1.0], &[0.0, 0.0]);
        let eff = p.effective();
        let spec = spectral_summary(&eff.btilde).unwrap();
        let pair = EigenPair::from_vector(&eff.btilde, Complex64::new(2.0, 0.0), cv(&[(1.0, 0.0), (-1.0, 0.0)])).unwrap();
        let r = sigma_v(&p, &spec, &pair).unwrap();
        assert_eq!(r.regime, Regime::II);
        assert_eq!(r.c, vec![2.0, 2.0]);
        assert!((r.sigma - Matrix2::new(2.0, 0.0, 0.0, 0.0)).amax() < 1e-12);
        assert_eq!(r.classification, SigmaClass::SingularNonzero);
        assert_eq!(r.matrix_classification, SigmaClass::SingularNonzero);

        let p = model(2, &[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0], &[0.0, 0.0]);
        let eff = p.effective();
        let spec = spectral_summary(&eff.btilde).unwrap();
        let pair = EigenPair::from_vector(&eff.btilde, Complex64::new(0.0, 0.0), cv(&[(1.0, 0.0), (-1.0, 0.0)])).unwrap();
        let r = sigma_v(&p, &spec, &pair).unwrap();
        assert_eq!(r.regime, Regime::III);
        assert!((r.sigma - Matrix2::new(1.0, 0.0, 0.0, 0.0)).amax() < 1e-12);

        let p = circulant();
        let eff = p.effective();
        let spec = spectral_summary(&eff.btilde).unwrap();
        let w = omega();
        let v = DVector::from_vec(vec![Complex64::new(1.0, 0.0), w * w, w]);
        let pair = EigenPair::from_vector(&eff.btilde, w, v).unwrap();
        let r = sigma_v(&p, &spec, &pair).unwrap();
        assert!((r.sigma - Matrix2::identity() * 0.5).amax() < 1e-12);
        assert_eq!(r.classification, SigmaClass::Invertible);
        let var = variance_limit(&p, &spec, &eff, &pair, &dv(&[1.0, 1.0, 1.0])).unwrap();
        assert!((var - Matrix2::identity() * 3.0).amax() < 1e-11);
    }

    #[test]
    fn sigma_rejects_regime_one_and_zero_class() {
        let p = model(2, &[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        let eff = p.effective();
        let spec = spectral_summary(&eff.btilde).unwrap();
        let top = left_eigenpair(&eff.btilde, Complex64::new(2.0, 0.0)).unwrap();
        assert!(matches!(sigma_v(&p, &spec, &top), Err(Error::RegimeMismatch { .. })));
        let low = left_eigenpair(&eff.btilde, Complex64::new(0.0, 0.0)).unwrap();
        let r = sigma_v(&p, &spec, &low).unwrap();
        assert_eq!(r.classification, SigmaClass::Zero);
        assert_eq!(r.sigma, Matrix2::zeros());
        assert_eq!(variance_limit(&p, &spec, &eff, &low, &dv(&[1.0, 1.0])).unwrap(), Matrix2::zeros());
    }

    #[test]
    fn m2_trivial_and_killed() {
        let p = model(2, &[1.0, 1.0, 1.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]);
        let eff = p.effective();
        let spec = spectral_summary(&eff.btilde).unwrap();
        let zero = InitialState::fixed([0.0, 0.0]);
        for target in [0.0, 2.0] {
            let pair = left_eigenpair(&eff.btilde, Complex64::new(target, 0.0)).unwrap();
            assert_eq!(m2_limit(&p, &eff, &spec, &pair, &zero).unwrap().m2, 0.0);
        }
        let pair = left_eigenpair(&eff.btilde, Complex64::new(0.0, 0.0)).unwrap();
        let x0 = InitialState::fixed([1.0, 3.0]);
        assert_eq!(m2_limit(&p, &eff, &spec, &pair, &x0).unwrap().m2, 0.0);
    }

    #[test]
    fn finite_time_approaches_limit() {
        let mut jumpy = model(2, &[1.0, 1.0, 1.0, 1.0], &[1.0, 0.5], &[0.0, 0.0]);
        jumpy.mu[0] = DiscreteMeasure::new(vec![Atom::new([0.5, 0.2], 0.7)]);
        let cases = vec![
            (scalar_jump_model(), InitialState::fixed([1.0])),
            (model(2, &[1.0, 1.0, 1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]), InitialState::fixed([1.0, 1.0])),
            (model(2, &[3.0, 1.0, 1.0, 3.0], &[1.0, 1.0], &[1.0, 1.0]), InitialState::fixed([1.0, 1.0])),
            (circulant(), InitialState::fixed([1.0, 1.0, 1.0])),
            (jumpy, InitialState::fixed([1.0, 2.0])),
        ];
        for (p, x0) in cases {
            let eff = p.effective();
            let spec = spectral_summary(&eff.btilde).unwrap();
            for &lambda in &spec.eigenvalues {
                let pair = left_eigenpair(&eff.btilde, lambda).unwrap();
                let lim = m2_limit(&p, &eff, &spec, &pair, &x0).unwrap();
                let gap = match lim.regime {
                    Regime::I => 2.0 * pair.lambda.re - spec.s,
                    Regime::II => spec.s,
                    Regime::III => spec.s - 2.0 * pair.lambda.re,
                };
                let errs: Vec<f64> = [4.0, 6.0, 8.0]
                    .iter()
                    .map(|k| {
                        let t = k / gap;
                        (lim.scaling.at(t) * second_moment(&p, &eff, &pair, &x0, t).unwrap() - lim.m2).abs()
                    })
                    .collect();
                assert!(errs[1] <= errs[0] && errs[2] <= errs[1], "{errs:?} {lim:?}");
                // the critical case converges only like 1/t
                if lim.regime != Regime::II {
                    assert!(errs[2] < 0.02 * lim.m2.abs(), "{errs:?} vs {lim:?}");
                }
            }
        }
    }

    fn arb_params(d: usize) -> impl Strategy<Value = CbiParams> {
        let atoms = proptest::collection::vec(
            (proptest::collection::vec(0.0f64..2.0, d), 0.1f64..1.5),
            0..3,
        );
        (
            proptest::collection::vec(0.0f64..1.0, d),
            proptest::collection::vec(0.05f64..1.0, d * d),
            proptest::collection::vec(-1.0f64..1.0, d),
            proptest::collection::vec(atoms, d),
            proptest::collection::vec(proptest::bool::ANY, d),
        )
            .prop_map(move |(c, off, diag, mus, zero_c)| {
                let c = c.iter().zip(&zero_c).map(|(x, z)| if *z { 0.0 } else { *x }).collect();
                let b = DMatrix::from_fn(d, d, |i, j| if i == j { diag[i] + 1.5 } else { off[i * d + j] });
                let mu = mus
                    .into_iter()
                    .map(|atoms| {
                        DiscreteMeasure::new(
                            atoms
                                .into_iter()
                                .filter(|(p, _)| p.iter().any(|x| *x > 0.0))
                                .map(|(p, m)| Atom::new(p, m))
                                .collect(),
                        )
                    })
                    .collect();
                CbiParams { d, c, beta: vec![0.0; d], b, nu: DiscreteMeasure::zero(), mu }
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]
        #[test]
        fn classification_matches_matrix(p in (2usize..5).prop_flat_map(arb_params), k in 0usize..5) {
            let eff = p.effective();
            let spec = spectral_summary(&eff.btilde).unwrap();
            prop_assume!(spec.s > 0.0 && spec.irreducible);
            let target = spec.eigenvalues[k % p.d];
            let Ok(pair) = left_eigenpair(&eff.btilde, target) else { return Ok(()) };
            prop_assume!(spec.regime_of(pair.lambda).unwrap() != Regime::I);
            let r = sigma_v(&p, &spec, &pair).unwrap();
            prop_assert_eq!(r.classification, r.matrix_classification);
            let (vals, _) = linalg::sym2_eigen(&r.sigma);
            prop_assert!(vals[1] >= -1e-12 * vals[0].abs().max(1.0));
            for (cl, ct) in r.c.iter().zip(&r.ctilde) {
                prop_assert!(*cl >= ct.norm() - 1e-12);
            }
            let rotated = pair.scaled(Complex64::from_polar(1.7, 0.9));
            let r2 = sigma_v(&p, &spec, &rotated).unwrap();
            prop_assert_eq!(r2.classification, r.classification);
            prop_assert!((r2.sigma.trace() - 1.7 * 1.7 * r.sigma.trace()).abs() <= 1e-10 * r2.sigma.trace().abs().max(1.0));
        }

        #[test]
        fn mean_semigroup(p in (1usize..4).prop_flat_map(arb_params), s in 0.0f64..1.5, t in 0.0f64..1.5) {
            let mut p = p;
            p.beta = vec![0.3; p.d];
            let eff = p.effective();
            let x = DVector::from_element(p.d, 1.0);
            let once = mean_at(&eff, &x, s + t);
            let twice = mean_at(&eff, &mean_at(&eff, &x, s), t);
            prop_assert!((&once - &twice).amax() <= 1e-9 * once.amax().max(1.0));
        }
    }
}
