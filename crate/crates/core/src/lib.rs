//! Moments, spectra and Monte Carlo checks for multi-type CBI processes
//! whose jump measures are finite atom lists.

pub mod analysis;
pub mod error;
pub mod linalg;
pub mod measures;
pub mod model;
pub mod moments;
pub mod rng;
pub mod simulate;
pub mod spectral;
pub mod stats;

pub use error::{Error, Result};
pub use measures::{Atom, DiscreteMeasure, TailKind};
pub use model::{CbiParams, EffectiveParams, InitialState};
pub use spectral::{EigenPair, Regime, SpectralSummary};

pub use nalgebra::{DMatrix, DVector, Matrix2};
pub use num_complex::Complex64;
