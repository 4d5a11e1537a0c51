//! Small dense linear-algebra helpers on top of `nalgebra`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Orthonormal basis of a column space together with conditioning information.
#[derive(Debug, Clone)]
pub struct ColumnBasis {
    /// `rows × rank` matrix with orthonormal columns.
    pub q: DMatrix<f64>,
    pub rank: usize,
    /// Reciprocal condition number of `Z'Z` after column equilibration.
    pub rcond: f64,
    /// Right singular vector belonging to the smallest singular value (equilibrated scale).
    pub weakest_direction: DVector<f64>,
}

/// Computes an orthonormal basis for the span of the columns of `z` by SVD.
///
/// Columns are rescaled to unit Euclidean norm first, so the reported conditioning
/// reflects collinearity rather than units. A zero column makes the matrix singular.
pub fn column_basis(z: &DMatrix<f64>) -> ColumnBasis {
    let (rows, cols) = z.shape();
    if cols == 0 || rows == 0 {
        return ColumnBasis {
            q: DMatrix::zeros(rows, 0),
            rank: 0,
            rcond: 1.0,
            weakest_direction: DVector::zeros(cols),
        };
    }
    let mut scaled = z.clone();
    for mut col in scaled.column_iter_mut() {
        let norm = col.norm();
        if norm > 0.0 {
            col /= norm;
        }
    }
    let svd = scaled.clone().svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let sv = &svd.singular_values;
    let smax = sv.iter().cloned().fold(0.0_f64, f64::max);
    let tol = (rows.max(cols) as f64) * f64::EPSILON * smax;

    // nalgebra does not guarantee ordering of singular values.
    let mut order: Vec<usize> = (0..sv.len()).collect();
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    let rank = order.iter().filter(|&&i| sv[i] > tol).count();

    let smin = if cols > rows {
        0.0
    } else {
        sv.iter().cloned().fold(f64::INFINITY, f64::min)
    };
    let rcond = if smax > 0.0 { (smin / smax).powi(2) } else { 0.0 };

    let mut q = DMatrix::zeros(rows, rank);
    for (dst, &src) in order.iter().take(rank).enumerate() {
        q.set_column(dst, &u.column(src));
    }
    let weakest_direction = if cols > rows {
        // Null direction: any vector orthogonal to the row space of the scaled matrix.
        let full = scaled.transpose() * &scaled;
        let eig = SymmetricEigen::new(full);
        let idx = argmin(eig.eigenvalues.as_slice());
        eig.eigenvectors.column(idx).into_owned()
    } else {
        let idx = *order.last().expect("non-empty");
        v_t.row(idx).transpose().into_owned()
    };

    ColumnBasis {
        q,
        rank,
        rcond,
        weakest_direction,
    }
}

fn argmin(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap_or(0)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    let eig = SymmetricEigen::new(symmetrize(a));
    eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of `D^{-1/2} A D^{-1/2}` with `D = diag(scale)`; zero if a scale is not positive.
///
/// With `scale` taken from the matrix before projection, this measures how much of each
/// regressor's variation survives defactoring.
pub fn scaled_min_eigenvalue(a: &DMatrix<f64>, scale: &[f64]) -> f64 {
    if scale.iter().any(|&v| !(v > 0.0)) {
        return 0.0;
    }
    let scaled = DMatrix::from_fn(a.nrows(), a.ncols(), |i, j| a[(i, j)] / (scale[i] * scale[j]).sqrt());
    min_eigenvalue(&scaled)
}

pub fn ensure_well_posed(a: &DMatrix<f64>, scale: &[f64], tol: f64, what: &str) -> Result<()> {
    let min_eigen = scaled_min_eigenvalue(a, scale);
    if min_eigen > tol {
        Ok(())
    } else {
        Err(Error::Collinear {
            what: what.to_string(),
            min_eigen,
        })
    }
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Solves `a x = b` for symmetric positive definite `a`.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok(chol.solve(b))
}

pub fn solve_spd_vec(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok(chol.solve(b))
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(a: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let chol = symmetrize(a)
        .cholesky()
        .ok_or_else(|| Error::Singular(what.to_string()))?;
    Ok(symmetrize(&chol.inverse()))
}

/// Vertical block-diagonal expansion: row `t` of `w` is placed in column block `regime[t]`.
pub fn expand_by_regime(w: &DMatrix<f64>, regime_of: &[usize], n_regimes: usize) -> DMatrix<f64> {
    let (t_len, p) = w.shape();
    let mut out = DMatrix::zeros(t_len, p * n_regimes);
    for t in 0..t_len {
        let j = regime_of[t];
        for c in 0..p {
            out[(t, j * p + c)] = w[(t, c)];
        }
    }
    out
}
