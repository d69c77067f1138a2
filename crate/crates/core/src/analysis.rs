//! Scaled statistics of simulated ensembles and the statistical checks run
//! against the analytic limits.

use std::collections::BTreeMap;

use nalgebra::{DVector, Matrix2, Vector2};
use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::CbiParams;
use crate::moments::{classify_matrix, SigmaClass};
use crate::simulate::Ensemble;
use crate::spectral::{EigenPair, Regime, SpectralSummary};
use crate::stats;

/// Normalization applied to `(Re<v,X_T>, Im<v,X_T>)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProjectionScaling {
    /// `T^{−1/2} e^{−sT/2}`, for `Re λ = s/2`
    FixedCritical,
    /// `e^{−sT/2}`, for `Re λ < s/2`
    Fixed,
    /// `1{<u,X>>1} / sqrt(<u,X> log<u,X>)`, for `Re λ = s/2`
    RandomCritical,
    /// `1{X≠0} / sqrt(<u,X>)`, for `Re λ < s/2`
    Random,
    /// `1{X≠0} <u,X>^{−Re λ/s}` times rotation by `−Im λ · T`, for `Re λ > s/2`
    Rotation,
}

impl ProjectionScaling {
    pub fn regime(&self) -> Regime {
        match self {
            ProjectionScaling::FixedCritical | ProjectionScaling::RandomCritical => Regime::II,
            ProjectionScaling::Fixed | ProjectionScaling::Random => Regime::III,
            ProjectionScaling::Rotation => Regime::I,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScaledSample {
    pub rows: Vec<[f64; 2]>,
    /// `<u, X_T> > threshold`, a finite-time stand-in for `{w_u > 0}`.
    pub survivor_mask: Vec<bool>,
    pub scaling: ProjectionScaling,
}

impl ScaledSample {
    pub fn survivors(&self) -> Vec<[f64; 2]> {
        self.rows
            .iter()
            .zip(&self.survivor_mask)
            .filter(|(_, m)| **m)
            .map(|(r, _)| *r)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Default)]
pub struct TestReport {
    pub test: String,
    pub sample_size: usize,
    pub statistics: BTreeMap<String, f64>,
    pub p_values: BTreeMap<String, f64>,
    /// Checks that decide `passed`.
    pub checks: BTreeMap<String, bool>,
    /// Reported only.
    pub diagnostics: BTreeMap<String, bool>,
    pub tolerances: BTreeMap<String, f64>,
    pub passed: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl TestReport {
    fn new(test: &str, sample_size: usize) -> Self {
        TestReport {
            test: test.to_string(),
            sample_size,
            ..Default::default()
        }
    }

    fn insufficient(test: &str, sample_size: usize) -> Self {
        TestReport {
            note: Some("insufficient data".into()),
            ..TestReport::new(test, sample_size)
        }
    }

    fn stat(&mut self, k: &str, v: f64) {
        self.statistics.insert(k.into(), v);
    }

    fn check(&mut self, k: &str, ok: bool) {
        self.checks.insert(k.into(), ok);
    }

    fn tol(&mut self, k: &str, v: f64) {
        self.tolerances.insert(k.into(), v);
    }

    fn finish(mut self) -> Self {
        self.passed = Some(self.checks.values().all(|x| *x));
        self
    }
}

/// `e^{−sT} <u, X_T>` per path.
pub fn w_samples(terminal: &[DVector<f64>], spec: &SpectralSummary, horizon: f64) -> Result<Vec<f64>> {
    spec.require_supercritical()?;
    let (u, _) = spec.perron()?;
    let scale = (-spec.s * horizon).exp();
    Ok(terminal.iter().map(|x| scale * u.dot(x)).collect())
}

/// Survivor threshold used when none is configured.
pub const DEFAULT_SURVIVOR_THRESHOLD: f64 = 1.0;

pub fn projection_statistic(
    terminal: &[DVector<f64>],
    pair: &EigenPair,
    spec: &SpectralSummary,
    horizon: f64,
    scaling: ProjectionScaling,
    threshold: f64,
) -> Result<ScaledSample> {
    let found = spec.regime_of(pair.lambda)?;
    if found != scaling.regime() {
        return Err(Error::RegimeMismatch {
            expected: match scaling.regime() {
                Regime::I => "I",
                Regime::II => "II",
                Regime::III => "III",
            },
            found,
        });
    }
    let (u, _) = spec.perron()?;
    let s = spec.s;
    let mut rows = Vec::with_capacity(terminal.len());
    let mut survivor_mask = Vec::with_capacity(terminal.len());
    for x in terminal {
        let ux = u.dot(x);
        let proj = linalg::project_real(&pair.v, x);
        let nonzero = x.iter().any(|v| *v != 0.0);
        let factor: Complex64 = match scaling {
            ProjectionScaling::FixedCritical => {
                Complex64::new((-s * horizon / 2.0).exp() / horizon.sqrt(), 0.0)
            }
            ProjectionScaling::Fixed => Complex64::new((-s * horizon / 2.0).exp(), 0.0),
            ProjectionScaling::RandomCritical => {
                if ux > 1.0 {
                    Complex64::new(1.0 / (ux * ux.ln()).sqrt(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            ProjectionScaling::Random => {
                if nonzero && ux > 0.0 {
                    Complex64::new(1.0 / ux.sqrt(), 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
            ProjectionScaling::Rotation => {
                if nonzero && ux > 0.0 {
                    Complex64::from_polar(ux.powf(-pair.lambda.re / s), -pair.lambda.im * horizon)
                } else {
                    Complex64::new(0.0, 0.0)
                }
            }
        };
        let z = factor * proj;
        rows.push([z.re, z.im]);
        survivor_mask.push(ux > threshold);
    }
    Ok(ScaledSample {
        rows,
        survivor_mask,
        scaling,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativeFrequencies {
    pub rows: Vec<Vec<f64>>,
    pub survivors: usize,
    pub mean: Option<Vec<f64>>,
    pub max_deviation: Option<f64>,
}

/// `X_i / Σ_k X_k` on paths with `X ≠ 0`, summarized against `ũ` if given.
pub fn relative_frequencies(terminal: &[DVector<f64>], utilde: Option<&DVector<f64>>) -> RelativeFrequencies {
    let rows: Vec<Vec<f64>> = terminal
        .iter()
        .filter_map(|x| {
            let total = x.sum();
            (total > 0.0).then(|| x.iter().map(|v| v / total).collect())
        })
        .collect();
    let survivors = rows.len();
    let mean = (survivors > 0).then(|| {
        let d = rows[0].len();
        (0..d)
            .map(|i| rows.iter().map(|r| r[i]).sum::<f64>() / survivors as f64)
            .collect::<Vec<f64>>()
    });
    let max_deviation = match (&mean, utilde) {
        (Some(m), Some(ut)) => Some(
            m.iter()
                .zip(ut.iter())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max),
        ),
        _ => None,
    };
    RelativeFrequencies {
        rows,
        survivors,
        mean,
        max_deviation,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GaussianTestOptions {
    pub alpha: f64,
    /// Null-direction variance allowed, relative to the largest eigenvalue of `Σ`.
    pub null_variance_ratio: f64,
    /// Variance allowed in every direction when `Σ = 0`.
    pub collapse_tolerance: f64,
}

impl Default for GaussianTestOptions {
    fn default() -> Self {
        GaussianTestOptions {
            alpha: 0.01,
            null_variance_ratio: 1e-3,
            collapse_tolerance: 1e-2,
        }
    }
}

fn covariance(rows: &[Vector2<f64>]) -> Matrix2<f64> {
    let n = rows.len() as f64;
    let mean = rows.iter().fold(Vector2::zeros(), |a, r| a + r) / n;
    rows.iter()
        .fold(Matrix2::zeros(), |a, r| a + (r - mean) * (r - mean).transpose())
        / (n - 1.0).max(1.0)
}

/// Survivor rows against `N₂(0, Σ)`.
pub fn gaussian_test(sample: &ScaledSample, sigma: &Matrix2<f64>, opts: &GaussianTestOptions) -> Result<TestReport> {
    let (vals, vecs) = linalg::sym2_eigen(sigma);
    if vals[1] < -1e-12 * vals[0].abs().max(1.0) {
        return Err(Error::NotPositiveSemidefinite(vals[1]));
    }
    let rows: Vec<Vector2<f64>> = sample
        .survivors()
        .iter()
        .map(|r| Vector2::new(r[0], r[1]))
        .collect();
    let n = rows.len();
    if n < 2 {
        return Ok(TestReport::insufficient("gaussian", n));
    }
    let mut rep = TestReport::new("gaussian", n);
    rep.tol("alpha", opts.alpha);
    let class = classify_matrix(sigma);
    let ks_check = |rep: &mut TestReport, name: &str, xs: &[f64]| {
        let r = stats::ks_one_sample(xs, stats::standard_normal_cdf);
        rep.stat(&format!("ks_{name}"), r.statistic);
        rep.p_values.insert(format!("ks_{name}"), r.p_value);
        rep.check(&format!("ks_{name}"), r.p_value > opts.alpha);
    };
    match class {
        SigmaClass::Invertible => {
            let inv_sqrt = vecs
                * Matrix2::from_diagonal(&vals.map(|x| 1.0 / x.sqrt()))
                * vecs.transpose();
            let white: Vec<Vector2<f64>> = rows.iter().map(|r| inv_sqrt * r).collect();
            for k in 0..2 {
                let xs: Vec<f64> = white.iter().map(|r| r[k]).collect();
                ks_check(&mut rep, &format!("coordinate_{k}"), &xs);
            }
            let cov = covariance(&white);
            let dev = (cov - Matrix2::identity()).amax();
            let bound = 4.0 / (n as f64).sqrt();
            rep.stat("whitened_covariance_max_deviation", dev);
            rep.tol("whitened_covariance_bound", bound);
            rep.diagnostics.insert("whitened_covariance".into(), dev <= bound);
        }
        SigmaClass::SingularNonzero => {
            let range = vecs.column(0).into_owned();
            let null = vecs.column(1).into_owned();
            let xs: Vec<f64> = rows.iter().map(|r| range.dot(r) / vals[0].sqrt()).collect();
            ks_check(&mut rep, "range_direction", &xs);
            let ys: Vec<f64> = rows.iter().map(|r| null.dot(r)).collect();
            let var = stats::variance(&ys);
            let tol = opts.null_variance_ratio * vals[0];
            rep.stat("null_direction_variance", var);
            rep.tol("null_direction_variance", tol);
            rep.check("null_direction_collapse", var <= tol);
        }
        SigmaClass::Zero => {
            for k in 0..2 {
                let xs: Vec<f64> = rows.iter().map(|r| r[k]).collect();
                let var = stats::variance(&xs);
                rep.stat(&format!("variance_{k}"), var);
                rep.check(&format!("collapse_{k}"), var <= opts.collapse_tolerance);
            }
            rep.tol("collapse", opts.collapse_tolerance);
        }
    }
    Ok(rep.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AtomScanOptions {
    /// Largest tolerated count of identical values.
    pub max_duplicates: usize,
    /// Largest bin mass allowed, as a multiple of `1 / number of bins`.
    pub bin_mass_factor: f64,
    pub min_sample: usize,
}

impl Default for AtomScanOptions {
    fn default() -> Self {
        AtomScanOptions {
            max_duplicates: 3,
            bin_mass_factor: 10.0,
            min_sample: 1000,
        }
    }
}

/// Duplicate and concentration scan of real or vector samples.
pub fn atom_scan(samples: &[Vec<f64>], opts: &AtomScanOptions) -> TestReport {
    let n = samples.len();
    if n < opts.min_sample.max(1) {
        return TestReport::insufficient("atom_scan", n);
    }
    let mut rep = TestReport::new("atom_scan", n);
    let mut sorted: Vec<&Vec<f64>> = samples.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut max_dup = 1usize;
    let mut run = 1usize;
    for w in sorted.windows(2) {
        let same = w[0].iter().zip(w[1].iter()).all(|(a, b)| a.to_bits() == b.to_bits());
        run = if same { run + 1 } else { 1 };
        max_dup = max_dup.max(run);
    }
    rep.stat("max_duplicate_frequency", max_dup as f64 / n as f64);
    rep.tol("max_duplicate_count", opts.max_duplicates as f64);
    rep.check("duplicates", max_dup <= opts.max_duplicates);

    let bins = (n as f64).sqrt().ceil() as usize;
    let allowed = opts.bin_mass_factor / bins as f64;
    let dim = samples[0].len();
    let mut worst = 0.0f64;
    for k in 0..dim {
        let xs: Vec<f64> = samples.iter().map(|r| r[k]).collect();
        let lo = xs.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mass = if hi > lo {
            let width = (hi - lo) / bins as f64;
            let mut counts = vec![0usize; bins];
            for x in &xs {
                let i = (((x - lo) / width) as usize).min(bins - 1);
                counts[i] += 1;
            }
            *counts.iter().max().unwrap_or(&0) as f64 / n as f64
        } else {
            1.0
        };
        worst = worst.max(mass);
    }
    rep.stat("max_bin_mass", worst);
    rep.tol("max_bin_mass", allowed);
    rep.check("bin_mass", worst <= allowed);
    rep.finish()
}

/// States of every path at the recorded times closest to `checkpoints`.
pub fn checkpoint_states(ens: &Ensemble, checkpoints: &[f64]) -> Vec<Vec<DVector<f64>>> {
    ens.paths
        .iter()
        .map(|p| {
            checkpoints
                .iter()
                .map(|t| {
                    let k = p
                        .times
                        .iter()
                        .enumerate()
                        .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
                        .map(|(k, _)| k)
                        .unwrap_or(0);
                    DVector::from_vec(p.states[k].clone())
                })
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConvergenceOptions {
    /// Largest tolerated decay factor of the mean increment per unit time.
    pub max_ratio: f64,
    /// Leading ratios ignored as transient.
    pub transient: usize,
}

impl Default for ConvergenceOptions {
    fn default() -> Self {
        ConvergenceOptions {
            max_ratio: 0.7,
            transient: 1,
        }
    }
}

/// Decay of `|e^{−λT_{k+1}}<v,X_{T_{k+1}}> − e^{−λT_k}<v,X_{T_k}>|` along checkpoints.
pub fn convergence_diagnostic(
    checkpoints: &[f64],
    states: &[Vec<DVector<f64>>],
    pair: &EigenPair,
    spec: &SpectralSummary,
    opts: &ConvergenceOptions,
) -> Result<TestReport> {
    let found = spec.regime_of(pair.lambda)?;
    if found != Regime::I {
        return Err(Error::RegimeMismatch { expected: "I", found });
    }
    let (u, _) = spec.perron()?;
    let n = states.len();
    if n == 0 || checkpoints.len() < 2 {
        return Ok(TestReport::insufficient("convergence", n));
    }
    let mut rep = TestReport::new("convergence", n);
    let scaled = |x: &DVector<f64>, t: f64| (-pair.lambda * t).exp() * linalg::project_real(&pair.v, x);
    let rotation = |x: &DVector<f64>, t: f64| {
        let ux = u.dot(x);
        if ux > 0.0 {
            Complex64::from_polar(ux.powf(-pair.lambda.re / spec.s), -pair.lambda.im * t)
                * linalg::project_real(&pair.v, x)
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let mut means = Vec::new();
    for k in 0..checkpoints.len() - 1 {
        let (t0, t1) = (checkpoints[k], checkpoints[k + 1]);
        let inc = states
            .iter()
            .map(|p| (scaled(&p[k + 1], t1) - scaled(&p[k], t0)).norm())
            .sum::<f64>()
            / n as f64;
        let rot = states
            .iter()
            .map(|p| (rotation(&p[k + 1], t1) - rotation(&p[k], t0)).norm())
            .sum::<f64>()
            / n as f64;
        rep.stat(&format!("mean_increment_{k}"), inc);
        rep.stat(&format!("mean_rotation_change_{k}"), rot);
        means.push(inc);
    }
    rep.tol("max_ratio", opts.max_ratio);
    let scale = means.iter().cloned().fold(0.0, f64::max);
    if scale <= 1e-12 {
        rep.note = Some("all increments vanish".into());
        rep.check("decay", true);
        return Ok(rep.finish());
    }
    for k in 0..means.len() - 1 {
        let spacing = checkpoints[k + 2] - checkpoints[k + 1];
        let ratio = (means[k + 1] / means[k]).powf(1.0 / spacing);
        rep.stat(&format!("decay_ratio_{k}"), ratio);
        if k >= opts.transient {
            rep.check(&format!("decay_{k}"), ratio <= opts.max_ratio);
        }
    }
    if rep.checks.is_empty() {
        rep.note = Some("too few checkpoints beyond the transient".into());
        return Ok(TestReport { passed: None, ..rep });
    }
    Ok(rep.finish())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QvOptions {
    pub relative_tolerance: f64,
    /// Absolute tolerance used when the target matrix vanishes.
    pub collapse_tolerance: f64,
}

impl Default for QvOptions {
    fn default() -> Self {
        QvOptions {
            relative_tolerance: 0.15,
            collapse_tolerance: 1e-2,
        }
    }
}

/// Scaled quadratic variation of the projection martingale per path.
pub fn scaled_quadratic_variation(
    ens: &Ensemble,
    params: &CbiParams,
    pair: &EigenPair,
    spec: &SpectralSummary,
) -> Result<Vec<Matrix2<f64>>> {
    let horizon = ens.config.horizon;
    let (steps, h) = ens.config.grid();
    let front = (-spec.s * horizon / 2.0).exp();
    let factor = |t: f64| front * (pair.lambda * (horizon - t)).exp();
    ens.paths
        .iter()
        .map(|path| {
            let log = path.jump_log.as_ref().ok_or(Error::MissingJumpLog)?;
            if path.states.len() != steps + 1 {
                return Err(Error::MissingGrid);
            }
            let mut q = Matrix2::zeros();
            for k in 0..steps {
                let f = factor(k as f64 * h);
                for l in 0..params.d {
                    let x = path.states[k][l].max(0.0);
                    if params.c[l] > 0.0 && x > 0.0 {
                        q += linalg::re_im_outer(f * pair.v[l]) * (2.0 * params.c[l] * x * h);
                    }
                }
            }
            for ev in log {
                let z = DVector::from_vec(ev.jump.clone());
                let f = factor(ev.step as f64 * h);
                q += linalg::re_im_outer(f * linalg::project_real(&pair.v, &z)) * ev.count as f64;
            }
            Ok(q)
        })
        .collect()
}

/// Mean scaled quadratic variation against `mean(w) · Σ_v`.
pub fn qv_limit_check(
    ens: &Ensemble,
    params: &CbiParams,
    pair: &EigenPair,
    spec: &SpectralSummary,
    sigma: &Matrix2<f64>,
    opts: &QvOptions,
) -> Result<TestReport> {
    let found = spec.regime_of(pair.lambda)?;
    if found != Regime::III {
        return Err(Error::RegimeMismatch { expected: "III", found });
    }
    let n = ens.len();
    let qs = scaled_quadratic_variation(ens, params, pair, spec)?;
    if n == 0 {
        return Ok(TestReport::insufficient("quadratic_variation", 0));
    }
    let mut rep = TestReport::new("quadratic_variation", n);
    let mean_q = qs.iter().fold(Matrix2::zeros(), |a, q| a + q) / n as f64;
    let w = w_samples(&ens.terminal(), spec, ens.config.horizon)?;
    let w_mean = stats::mean(&w);
    let target = sigma * w_mean;
    let scale = target.amax();
    let tol = if scale > 1e-12 {
        opts.relative_tolerance * scale
    } else {
        opts.collapse_tolerance
    };
    let dev = (mean_q - target).amax();
    for (i, j) in [(0, 0), (0, 1), (1, 1)] {
        rep.stat(&format!("mean_qv_{i}{j}"), mean_q[(i, j)]);
        rep.stat(&format!("target_{i}{j}"), target[(i, j)]);
    }
    rep.stat("w_sample_mean", w_mean);
    rep.stat("max_abs_deviation", dev);
    rep.tol("max_abs_deviation", tol);
    rep.check("entrywise", dev <= tol);
    Ok(rep.finish())
}
