//! Admissible parameter sets, their effective mean parameters, the branching
//! and immigration mechanisms, and the Laplace transform of the transition
//! semigroup via the Riccati flow.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::{self, rows};
use crate::measures::{AtomViolation, DiscreteMeasure, TailKind};

/// The tuple `(d, c, β, B, ν, μ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CbiParams {
    pub d: usize,
    pub c: Vec<f64>,
    pub beta: Vec<f64>,
    #[serde(rename = "B", with = "rows")]
    pub b: DMatrix<f64>,
    #[serde(default)]
    pub nu: DiscreteMeasure,
    pub mu: Vec<DiscreteMeasure>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParamViolation {
    ZeroDimension,
    WrongLength { field: &'static str, found: usize },
    NegativeDiffusion { index: usize, value: f64 },
    NegativeImmigration { index: usize, value: f64 },
    NonFiniteDrift { row: usize, col: usize },
    NegativeOffDiagonal { row: usize, col: usize, value: f64 },
    Immigration(AtomViolation),
    Branching { measure: usize, violation: AtomViolation },
}

impl std::fmt::Display for ParamViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        use ParamViolation::*;
        match self {
            ZeroDimension => write!(f, "dimension d must be at least 1"),
            WrongLength { field, found } => write!(f, "{field} has wrong length {found}"),
            NegativeDiffusion { index, value } => write!(f, "c[{index}] = {value} is negative"),
            NegativeImmigration { index, value } => {
                write!(f, "beta[{index}] = {value} is negative")
            }
            NonFiniteDrift { row, col } => write!(f, "B[{row}][{col}] is not finite"),
            NegativeOffDiagonal { row, col, value } => {
                write!(f, "off-diagonal negative: B[{row}][{col}] = {value}")
            }
            Immigration(v) => write!(f, "nu: {v}"),
            Branching { measure, violation } => write!(f, "mu[{measure}]: {violation}"),
        }
    }
}

/// `B̃` and `β̃`: the mean-matrix generator and the immigration mean vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectiveParams {
    #[serde(with = "rows")]
    pub btilde: DMatrix<f64>,
    #[serde(with = "linalg::dvec")]
    pub betatilde: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MomentFlags {
    /// `∫ ‖r‖ 1{‖r‖≥1} ν(dr) < ∞`
    pub immigration_first: bool,
    /// `Σ_ℓ ∫ g(‖z‖) 1{‖z‖≥1} μ_ℓ(dz) < ∞` with the `g` selected by `λ`
    pub branching_xlogx_or_power: bool,
    pub branching_xlogx_or_power_value: f64,
    /// fourth branching moment and second immigration moment
    pub branching_fourth_immigration_second: bool,
    /// second moments of both kinds of jumps
    pub second_moments: bool,
}

/// Law of the initial state: a fixed vector or a finite mixture of vectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitialState {
    Deterministic(Vec<f64>),
    Discrete { discrete: Vec<WeightedPoint> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedPoint {
    pub point: Vec<f64>,
    pub prob: f64,
}

impl InitialState {
    pub fn fixed(x: impl Into<Vec<f64>>) -> Self {
        InitialState::Deterministic(x.into())
    }

    pub fn support(&self) -> Vec<(DVector<f64>, f64)> {
        match self {
            InitialState::Deterministic(x) => vec![(DVector::from_vec(x.clone()), 1.0)],
            InitialState::Discrete { discrete } => discrete
                .iter()
                .map(|w| (DVector::from_vec(w.point.clone()), w.prob))
                .collect(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            InitialState::Deterministic(x) => x.len(),
            InitialState::Discrete { discrete } => discrete.first().map_or(0, |w| w.point.len()),
        }
    }

    pub fn mean(&self) -> DVector<f64> {
        self.support()
            .into_iter()
            .fold(DVector::zeros(self.dim()), |acc, (x, p)| acc + x * p)
    }

    pub fn is_zero_as(&self) -> bool {
        self.support()
            .iter()
            .all(|(x, p)| *p == 0.0 || x.iter().all(|v| *v == 0.0))
    }

    /// `E|<v, X₀> + a|²`, exact over the finite support.
    pub fn projected_second_moment(&self, v: &DVector<Complex64>, shift: Complex64) -> f64 {
        self.support()
            .iter()
            .map(|(x, p)| p * (linalg::project_real(v, x) + shift).norm_sqr())
            .sum()
    }

    /// Whether `<v, X₀>` takes a single value.
    pub fn projection_is_deterministic(&self, v: &DVector<Complex64>) -> bool {
        let support: Vec<_> = self.support().into_iter().filter(|(_, p)| *p > 0.0).collect();
        let Some((first, _)) = support.first() else {
            return true;
        };
        let p0 = linalg::project_real(v, first);
        let scale = linalg::complex_norm(v) * first.norm().max(1.0);
        support
            .iter()
            .all(|(x, _)| (linalg::project_real(v, x) - p0).norm() <= 1e-12 * scale)
    }

    pub fn violations(&self, d: usize) -> Vec<String> {
        let mut out = Vec::new();
        let support = self.support();
        if support.is_empty() {
            out.push("initial state has empty support".to_string());
        }
        for (k, (x, p)) in support.iter().enumerate() {
            if x.len() != d {
                out.push(format!("initial point {k} has dimension {}", x.len()));
            }
            if x.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                out.push(format!("initial point {k} is outside R+^d"));
            }
            if !(p.is_finite() && *p >= 0.0) {
                out.push(format!("initial probability {k} is invalid"));
            }
        }
        if let InitialState::Discrete { .. } = self {
            let total: f64 = support.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 {
                out.push(format!("initial probabilities sum to {total}"));
            }
        }
        out
    }
}

/// Result of the Riccati-flow evaluation of `E exp(−<λ, X_t>)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaplaceValue {
    pub value: f64,
    /// grid points at which a slightly negative flow component was clamped to 0
    pub clamped: usize,
}

impl CbiParams {
    pub fn c_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.c.clone())
    }

    pub fn beta_vec(&self) -> DVector<f64> {
        DVector::from_vec(self.beta.clone())
    }

    pub fn validate(&self) -> Vec<ParamViolation> {
        use ParamViolation::*;
        let d = self.d;
        let mut out = Vec::new();
        if d == 0 {
            out.push(ZeroDimension);
        }
        if self.c.len() != d {
            out.push(WrongLength { field: "c", found: self.c.len() });
        }
        if self.beta.len() != d {
            out.push(WrongLength { field: "beta", found: self.beta.len() });
        }
        if self.b.nrows() != d || self.b.ncols() != d {
            out.push(WrongLength { field: "B", found: self.b.nrows() });
        }
        if self.mu.len() != d {
            out.push(WrongLength { field: "mu", found: self.mu.len() });
        }
        for (index, &value) in self.c.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                out.push(NegativeDiffusion { index, value });
            }
        }
        for (index, &value) in self.beta.iter().enumerate() {
            if !(value.is_finite() && value >= 0.0) {
                out.push(NegativeImmigration { index, value });
            }
        }
        for row in 0..self.b.nrows() {
            for col in 0..self.b.ncols() {
                let value = self.b[(row, col)];
                if !value.is_finite() {
                    out.push(NonFiniteDrift { row, col });
                } else if row != col && value < 0.0 {
                    out.push(NegativeOffDiagonal { row, col, value });
                }
            }
        }
        out.extend(self.nu.violations(d).into_iter().map(Immigration));
        for (measure, m) in self.mu.iter().enumerate() {
            out.extend(
                m.violations(d)
                    .into_iter()
                    .map(|violation| Branching { measure, violation }),
            );
        }
        out
    }

    pub fn ensure_valid(&self) -> Result<()> {
        let v = self.validate();
        if v.is_empty() {
            Ok(())
        } else {
            let msgs: Vec<String> = v.iter().map(|x| x.to_string()).collect();
            Err(Error::InvalidParams(msgs.join("; ")))
        }
    }

    pub fn effective(&self) -> EffectiveParams {
        let d = self.d;
        let btilde = DMatrix::from_fn(d, d, |i, j| {
            self.b[(i, j)] + self.mu[j].positive_part_integral(i, i == j)
        });
        let betatilde = self.beta_vec() + self.nu.mean_vector(d);
        EffectiveParams { btilde, betatilde }
    }

    /// `K` with column `ℓ` equal to `∫ z μ_ℓ(dz)`.
    pub fn jump_mean_matrix(&self) -> DMatrix<f64> {
        let d = self.d;
        let mut k = DMatrix::zeros(d, d);
        for (l, m) in self.mu.iter().enumerate() {
            k.set_column(l, &m.mean_vector(d));
        }
        k
    }

    /// Drift matrix left after the branching-jump compensator is folded in:
    /// `B − diag(∫ (z_ℓ ∧ 1) μ_ℓ(dz))`, so that drift plus jump mean equals `B̃`.
    pub fn compensated_drift(&self) -> DMatrix<f64> {
        let mut a = self.b.clone();
        for (l, m) in self.mu.iter().enumerate() {
            a[(l, l)] -= m.truncated_mean(l);
        }
        a
    }

    /// Same branching mechanism, immigration removed (a CB process).
    pub fn without_immigration(&self) -> CbiParams {
        CbiParams {
            beta: vec![0.0; self.d],
            nu: DiscreteMeasure::zero(),
            ..self.clone()
        }
    }

    pub fn check_moments(&self, lambda: Complex64, s: f64) -> MomentFlags {
        let kind = if (lambda.re - s).abs() <= 1e-10 * s.abs().max(1.0) {
            TailKind::XLogX
        } else {
            TailKind::PowerRatio(s / lambda.re)
        };
        let sum_mu = |k: TailKind| self.mu.iter().map(|m| m.tail_moment(k)).sum::<f64>();
        let xlogx = sum_mu(kind);
        let nu1 = self.nu.tail_moment(TailKind::Power(1));
        let nu2 = self.nu.tail_moment(TailKind::Power(2));
        let mu2 = sum_mu(TailKind::Power(2));
        let mu4 = sum_mu(TailKind::Power(4));
        MomentFlags {
            immigration_first: nu1.is_finite(),
            branching_xlogx_or_power: xlogx.is_finite(),
            branching_xlogx_or_power_value: xlogx,
            branching_fourth_immigration_second: mu4.is_finite() && nu2.is_finite(),
            second_moments: mu2.is_finite() && nu2.is_finite(),
        }
    }

    fn check_arg(&self, lam: &DVector<f64>) -> Result<()> {
        if lam.len() != self.d {
            return Err(Error::DimensionMismatch {
                what: "mechanism argument",
                expected: self.d,
                found: lam.len(),
            });
        }
        match lam.iter().position(|x| *x < 0.0) {
            Some(index) => Err(Error::NegativeArgument { index, value: lam[index] }),
            None => Ok(()),
        }
    }

    /// Branching mechanism `φ(λ)`.
    pub fn phi(&self, lam: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_arg(lam)?;
        Ok(self.phi_unchecked(lam))
    }

    fn phi_unchecked(&self, lam: &DVector<f64>) -> DVector<f64> {
        let bt_lam = self.b.tr_mul(lam);
        DVector::from_fn(self.d, |i, _| {
            let jumps: f64 = self.mu[i]
                .atoms()
                .iter()
                .map(|a| {
                    let inner: f64 = a.point.iter().zip(lam.iter()).map(|(z, l)| z * l).sum();
                    a.mass * ((-inner).exp_m1() + lam[i] * a.point[i].min(1.0))
                })
                .sum();
            self.c[i] * lam[i] * lam[i] - bt_lam[i] + jumps
        })
    }

    /// Immigration mechanism `ψ(λ)`.
    pub fn psi(&self, lam: &DVector<f64>) -> Result<f64> {
        self.check_arg(lam)?;
        Ok(self.psi_unchecked(lam))
    }

    fn psi_unchecked(&self, lam: &DVector<f64>) -> f64 {
        let drift: f64 = self.beta.iter().zip(lam.iter()).map(|(b, l)| b * l).sum();
        let jumps: f64 = self
            .nu
            .atoms()
            .iter()
            .map(|a| {
                let inner: f64 = a.point.iter().zip(lam.iter()).map(|(z, l)| z * l).sum();
                -a.mass * (-inner).exp_m1()
            })
            .sum();
        drift + jumps
    }

    /// `E[exp(−<λ, X_t>) | X₀ = x0]` from the Riccati flow, RK4 with step
    /// `ode_step` and Simpson's rule for the immigration integral.
    pub fn laplace(
        &self,
        x0: &DVector<f64>,
        lam: &DVector<f64>,
        t: f64,
        ode_step: f64,
    ) -> Result<LaplaceValue> {
        self.check_arg(lam)?;
        self.check_arg(x0)?;
        if !(t >= 0.0 && ode_step > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "laplace needs t >= 0 and a positive step (t={t}, step={ode_step})"
            )));
        }
        if t == 0.0 {
            return Ok(LaplaceValue {
                value: (-x0.dot(lam)).exp().min(1.0),
                clamped: 0,
            });
        }
        let mut n = (t / ode_step).ceil() as usize;
        n += n % 2;
        let h = t / n as f64;
        let neg_tol = 1e-9 * lam.amax().max(1.0);

        let rhs = |v: &DVector<f64>| -self.phi_unchecked(v);
        let mut v = lam.clone();
        let mut clamped = 0;
        let mut simpson = self.psi_unchecked(&v);
        for k in 1..=n {
            let k1 = rhs(&v);
            let k2 = rhs(&(&v + &k1 * (h / 2.0)));
            let k3 = rhs(&(&v + &k2 * (h / 2.0)));
            let k4 = rhs(&(&v + &k3 * h));
            v += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite { what: "Riccati flow" });
            }
            if let Some(component) = v.iter().position(|x| *x < -neg_tol) {
                return Err(Error::OdeLeftOrthant {
                    time: k as f64 * h,
                    component,
                    value: v[component],
                });
            }
            if v.iter().any(|x| *x < 0.0) {
                clamped += 1;
                v.iter_mut().for_each(|x| *x = x.max(0.0));
            }
            let weight = if k == n {
                1.0
            } else if k % 2 == 1 {
                4.0
            } else {
                2.0
            };
            simpson += weight * self.psi_unchecked(&v);
        }
        let psi_integral = simpson * h / 3.0;
        let exponent = -x0.dot(&v) - psi_integral;
        Ok(LaplaceValue {
            value: exponent.exp().clamp(f64::MIN_POSITIVE, 1.0),
            clamped,
        })
    }

    /// Trivial process: `X₀ = 0` a.s., `β = 0` and `ν = 0`.
    pub fn is_trivial(&self, x0_is_zero_as: bool) -> bool {
        x0_is_zero_as && self.beta.iter().all(|b| *b == 0.0) && self.nu.is_zero()
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("params serialize");
        hex::encode(Sha256::digest(&json))
    }
}
