//! Small dense linear-algebra helpers shared by the analytic and Monte Carlo code.

use nalgebra::{DMatrix, DVector, Matrix2, SymmetricEigen, Vector2};
use num_complex::Complex64;

/// `(e^{tA} x, ∫₀ᵗ e^{uA} b du)` via the exponential of the augmented block
/// matrix `[[A, b], [0, 0]]`.
pub fn affine_flow(a: &DMatrix<f64>, b: &DVector<f64>, t: f64) -> (DMatrix<f64>, DVector<f64>) {
    let d = a.nrows();
    let mut aug = DMatrix::zeros(d + 1, d + 1);
    aug.view_mut((0, 0), (d, d)).copy_from(&(a * t));
    aug.view_mut((0, d), (d, 1)).copy_from(&(b * t));
    let e = aug.exp();
    let flow = e.view((0, 0), (d, d)).into_owned();
    let integral = e.view((0, d), (d, 1)).column(0).into_owned();
    (flow, integral)
}

pub fn to_complex(v: &DVector<f64>) -> DVector<Complex64> {
    v.map(|x| Complex64::new(x, 0.0))
}

/// `<v, x> = Σ v_j conj(x_j)` for real `x`.
pub fn project_real(v: &DVector<Complex64>, x: &DVector<f64>) -> Complex64 {
    v.iter().zip(x.iter()).map(|(a, b)| a * b).sum()
}

pub fn complex_norm(v: &DVector<Complex64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Spectral radius from the Schur form.
pub fn spectral_radius(a: &DMatrix<f64>) -> Option<f64> {
    let schur = a.clone().try_schur(f64::EPSILON, 10_000)?;
    Some(
        schur
            .complex_eigenvalues()
            .iter()
            .map(|z| z.norm())
            .fold(0.0, f64::max),
    )
}

/// Induced 2-norm (largest singular value).
pub fn operator_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values().iter().cloned().fold(0.0, f64::max)
}

/// `(Re z, Im z)` as a real 2-vector.
pub fn re_im(z: Complex64) -> Vector2<f64> {
    Vector2::new(z.re, z.im)
}

/// Outer product of `(Re z, Im z)` with itself.
pub fn re_im_outer(z: Complex64) -> Matrix2<f64> {
    let r = re_im(z);
    r * r.transpose()
}

/// Eigen-decomposition of a symmetric 2×2 matrix, eigenvalues descending.
pub fn sym2_eigen(m: &Matrix2<f64>) -> (Vector2<f64>, Matrix2<f64>) {
    let sym = 0.5 * (m + m.transpose());
    let eig = SymmetricEigen::new(sym);
    let (l0, l1) = (eig.eigenvalues[0], eig.eigenvalues[1]);
    if l0 >= l1 {
        (eig.eigenvalues, eig.eigenvectors)
    } else {
        let vecs = Matrix2::from_columns(&[eig.eigenvectors.column(1), eig.eigenvectors.column(0)]);
        (Vector2::new(l1, l0), vecs)
    }
}

/// Row-major JSON encoding for matrices: `[[a11, a12], [a21, a22]]`.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{de::Error as _, Deserialize, Deserializer, Serialize, Serializer};

    pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
        m.row_iter().map(|r| r.iter().cloned().collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, String> {
        let n = rows.len();
        let m = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != m) {
            return Err("matrix rows have unequal lengths".into());
        }
        Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
    }

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        from_rows(&rows).map_err(D::Error::custom)
    }
}

/// Plain JSON list encoding for real vectors.
pub mod dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<f64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<f64>, D::Error> {
        Ok(DVector::from_vec(Vec::<f64>::deserialize(d)?))
    }
}

/// Complex vectors as a JSON list of `[re, im]` pairs.
pub mod cvec {
    use nalgebra::DVector;
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &DVector<Complex64>, s: S) -> Result<S::Ok, S::Error> {
        v.as_slice().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DVector<Complex64>, D::Error> {
        Ok(DVector::from_vec(Vec::<Complex64>::deserialize(d)?))
    }
}

/// `Option` of a real vector, as a JSON list or `null`.
pub mod opt_dvec {
    use nalgebra::DVector;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Option<DVector<f64>>, s: S) -> Result<S::Ok, S::Error> {
        v.as_ref().map(|x| x.as_slice().to_vec()).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<DVector<f64>>, D::Error> {
        Ok(Option::<Vec<f64>>::deserialize(d)?.map(DVector::from_vec))
    }
}

/// 2×2 matrices as row-major nested lists.
pub mod mat2 {
    use nalgebra::Matrix2;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &Matrix2<f64>, s: S) -> Result<S::Ok, S::Error> {
        [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Matrix2<f64>, D::Error> {
        let r = <[[f64; 2]; 2]>::deserialize(d)?;
        Ok(Matrix2::new(r[0][0], r[0][1], r[1][0], r[1][1]))
    }
}
