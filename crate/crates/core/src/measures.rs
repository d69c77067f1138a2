//! Finite discrete jump measures on the punctured orthant `R₊^d \ {0}`.
//!
//! Every integral the moment formulas need reduces to a finite sum over
//! atoms, so all evaluations here are exact up to floating-point rounding.

use nalgebra::DVector;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative threshold below which `<v, z>` is treated as zero.
pub const SUPPORT_ZERO_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub point: Vec<f64>,
    pub mass: f64,
}

impl Atom {
    pub fn new(point: impl Into<Vec<f64>>, mass: f64) -> Self {
        Self {
            point: point.into(),
            mass,
        }
    }

    pub fn norm(&self) -> f64 {
        self.point.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// `<v, z>` with the conjugate-linear second slot; `z` is real so this is `Σ v_j z_j`.
    pub fn project(&self, v: &DVector<Complex64>) -> Complex64 {
        v.iter()
            .zip(&self.point)
            .map(|(vj, zj)| vj * zj)
            .sum()
    }
}

/// Why an atom is not admissible.
#[derive(Debug, Clone, PartialEq)]
pub enum AtomViolation {
    WrongDimension { index: usize, found: usize },
    OutsideOrthant { index: usize },
    NonPositiveMass { index: usize, mass: f64 },
}

impl std::fmt::Display for AtomViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AtomViolation::WrongDimension { index, found } => {
                write!(f, "atom {index} has dimension {found}")
            }
            AtomViolation::OutsideOrthant { index } => {
                write!(f, "atom {index} lies outside U_d (negative or all-zero coordinates)")
            }
            AtomViolation::NonPositiveMass { index, mass } => {
                write!(f, "atom {index} has non-positive or non-finite mass {mass}")
            }
        }
    }
}

/// Tail functional `∫ g(‖z‖) 1{‖z‖ ≥ 1} m(dz)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TailKind {
    /// `g(x) = x^p`
    Power(u32),
    /// `g(x) = x log x`
    XLogX,
    /// `g(x) = x^q` for a real exponent `q ≥ 1`
    PowerRatio(f64),
}

/// The four projection integrals of a measure against a complex direction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionIntegrals {
    /// `∫ |<v,z>|² m(dz)`
    pub abs_square: f64,
    /// `∫ <v,z>² m(dz)`
    pub square: Complex64,
    /// `∫ <v,z> m(dz)`
    pub linear: Complex64,
    /// `m{z : <v,z> ≠ 0}`
    pub support_hits: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct DiscreteMeasure {
    atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    pub fn new(atoms: Vec<Atom>) -> Self {
        Self { atoms }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn is_zero(&self) -> bool {
        self.atoms.is_empty()
    }

    /// Atom-list concatenation; every integral below is additive under it.
    pub fn concat(&self, other: &DiscreteMeasure) -> DiscreteMeasure {
        let mut atoms = self.atoms.clone();
        atoms.extend(other.atoms.iter().cloned());
        DiscreteMeasure { atoms }
    }

    pub fn violations(&self, d: usize) -> Vec<AtomViolation> {
        let mut out = Vec::new();
        for (index, atom) in self.atoms.iter().enumerate() {
            if atom.point.len() != d {
                out.push(AtomViolation::WrongDimension {
                    index,
                    found: atom.point.len(),
                });
                continue;
            }
            let nonneg = atom.point.iter().all(|x| x.is_finite() && *x >= 0.0);
            let nonzero = atom.point.iter().any(|x| *x > 0.0);
            if !(nonneg && nonzero) {
                out.push(AtomViolation::OutsideOrthant { index });
            }
            if !(atom.mass.is_finite() && atom.mass > 0.0) {
                out.push(AtomViolation::NonPositiveMass {
                    index,
                    mass: atom.mass,
                });
            }
        }
        out
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.mass).sum()
    }

    /// `∫ z m(dz)`.
    pub fn mean_vector(&self, d: usize) -> DVector<f64> {
        let mut out = DVector::zeros(d);
        for atom in &self.atoms {
            for (o, z) in out.iter_mut().zip(&atom.point) {
                *o += atom.mass * z;
            }
        }
        out
    }

    /// `∫ (z_i − δ)⁺ m(dz)` with `delta` either 0 or 1 (0-based coordinate `i`).
    pub fn positive_part_integral(&self, i: usize, delta: bool) -> f64 {
        let shift = if delta { 1.0 } else { 0.0 };
        self.atoms
            .iter()
            .map(|a| a.mass * (a.point[i] - shift).max(0.0))
            .sum()
    }

    /// `∫ (z_i ∧ 1) m(dz)`, the part of the jump mean compensated in the drift.
    pub fn truncated_mean(&self, i: usize) -> f64 {
        self.atoms.iter().map(|a| a.mass * a.point[i].min(1.0)).sum()
    }

    pub fn tail_moment(&self, kind: TailKind) -> f64 {
        self.atoms
            .iter()
            .filter_map(|a| {
                let x = a.norm();
                (x >= 1.0).then(|| {
                    let g = match kind {
                        TailKind::Power(p) => x.powi(p as i32),
                        TailKind::XLogX => x * x.ln(),
                        TailKind::PowerRatio(q) => x.powf(q),
                    };
                    a.mass * g
                })
            })
            .sum()
    }

    pub fn projection_quadratics(&self, v: &DVector<Complex64>) -> Result<ProjectionIntegrals> {
        let v_norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let mut out = ProjectionIntegrals {
            abs_square: 0.0,
            square: Complex64::new(0.0, 0.0),
            linear: Complex64::new(0.0, 0.0),
            support_hits: 0.0,
        };
        for atom in &self.atoms {
            if atom.point.len() != v.len() {
                return Err(Error::DimensionMismatch {
                    what: "projection direction",
                    expected: atom.point.len(),
                    found: v.len(),
                });
            }
            let p = atom.project(v);
            out.abs_square += atom.mass * p.norm_sqr();
            out.square += atom.mass * p * p;
            out.linear += atom.mass * p;
            if p.norm() > SUPPORT_ZERO_TOL * v_norm * atom.norm() {
                out.support_hits += atom.mass;
            }
        }
        Ok(out)
    }

    /// Whether `<v, z> = 0` on the whole support (zero-test as in `projection_quadratics`).
    pub fn kills_projection(&self, v: &DVector<Complex64>) -> Result<bool> {
        Ok(self.projection_quadratics(v)?.support_hits == 0.0)
    }
}
