//! Dense linear-algebra helpers shared by the fitting and analysis modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Error, Result};

/// Inner product with four independent accumulators.
///
/// The summation order is fixed, so repeated calls on the same slices are
/// bit-identical; kernel evaluation and Gram construction both rely on that.
#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = 4 * c;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut tail = 0.0;
    for i in 4 * chunks..a.len() {
        tail += a[i] * b[i];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Symmetric eigendecomposition with eigenvalues sorted non-increasing and
/// eigenvectors permuted to match.
pub fn sorted_symmetric_eigen(m: DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    if m.nrows() != m.ncols() {
        return Err(Error::contract("eigendecomposition needs a square matrix"));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::numeric("non-finite entry passed to the eigensolver"));
    }
    let n = m.nrows();
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 0)
        .ok_or_else(|| Error::numeric("symmetric eigensolver did not converge"))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    Ok((values, vectors))
}

/// Cholesky factor of a symmetric positive-definite matrix; on failure a
/// jitter of `1e-12 * trace` (growing tenfold per retry) is added to the
/// diagonal.
pub fn spd_factor(m: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    if let Some(c) = Cholesky::new(m.clone()) {
        return Ok(c);
    }
    let trace = m.trace().abs().max(f64::MIN_POSITIVE);
    let mut jitter = 1e-12 * trace;
    for _ in 0..6 {
        let mut shifted = m.clone();
        for i in 0..m.nrows() {
            shifted[(i, i)] += jitter;
        }
        if let Some(c) = Cholesky::new(shifted) {
            return Ok(c);
        }
        jitter *= 10.0;
    }
    Err(Error::numeric("Cholesky factorization failed after jitter"))
}

pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(spd_factor(m)?.solve(rhs))
}

/// Leading `k` singular triplets of `x`, computed from the eigendecomposition
/// of the smaller of `x xᵀ` and `xᵀ x`.
///
/// Singular values are recomputed as norms of the projected vectors rather
/// than square roots of Gram eigenvalues, which keeps them accurate near zero.
/// Each right singular vector has its largest-magnitude entry made positive.
pub struct TopSvd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

pub fn top_svd(x: &DMatrix<f64>, k: usize) -> Result<TopSvd> {
    let (n, p) = x.shape();
    if k == 0 || k > n.min(p) {
        return Err(Error::contract(format!(
            "requested {k} singular triplets from a {n}x{p} matrix"
        )));
    }
    let mut u = DMatrix::zeros(n, k);
    let mut v = DMatrix::zeros(p, k);
    let mut s = vec![0.0; k];
    if n <= p {
        let gram = x * x.transpose();
        let (_, vecs) = sorted_symmetric_eigen(gram)?;
        for i in 0..k {
            let ui = vecs.column(i).into_owned();
            let w = x.tr_mul(&ui);
            let norm = w.norm();
            s[i] = norm;
            u.set_column(i, &ui);
            if norm > 0.0 {
                v.set_column(i, &(w / norm));
            }
        }
    } else {
        let gram = x.tr_mul(x);
        let (_, vecs) = sorted_symmetric_eigen(gram)?;
        for i in 0..k {
            let vi = vecs.column(i).into_owned();
            let w = x * &vi;
            let norm = w.norm();
            s[i] = norm;
            v.set_column(i, &vi);
            if norm > 0.0 {
                u.set_column(i, &(w / norm));
            }
        }
    }
    for i in 0..k {
        let col = v.column(i);
        let lead = col
            .iter()
            .copied()
            .max_by(|a, b| a.abs().total_cmp(&b.abs()))
            .unwrap_or(0.0);
        if lead < 0.0 {
            v.column_mut(i).neg_mut();
            u.column_mut(i).neg_mut();
        }
    }
    Ok(TopSvd {
        u,
        singular_values: s,
        v,
    })
}

/// Symmetric square root of a PSD matrix (negative eigenvalues clamped).
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (vals, vecs) = sorted_symmetric_eigen(m.clone())?;
    let root = DMatrix::from_diagonal(&DVector::from_iterator(
        vals.len(),
        vals.iter().map(|v| v.max(0.0).sqrt()),
    ));
    Ok(&vecs * root * vecs.transpose())
}

/// Row-major nested vectors, the JSON layout used for matrices on disk.
pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, Vec::len);
    if let Some(bad) = rows.iter().find(|r| r.len() != ncols) {
        return Err(Error::DimensionMismatch {
            context: "matrix rows",
            expected: ncols,
            found: bad.len(),
        });
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

/// Serde adapter storing a `DMatrix` as an array of rows.
pub mod serde_rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        super::to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        super::from_rows(&rows).map_err(serde::de::Error::custom)
    }
}
