//! Kernel families, Gram matrices and kernel-space displacement.

use std::io::Write;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::linalg::{self, dot};

/// A positive semi-definite kernel on Euclidean inputs.
///
/// Serialized as a tagged JSON object, e.g. `{"family": "gaussian", "bandwidth": 1.5}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum KernelSpec {
    /// `⟨z, z'⟩`
    Linear,
    /// `(⟨z, z'⟩ + offset)^degree`
    Polynomial { degree: u32, offset: f64 },
    /// `exp(-‖z - z'‖² / bandwidth²)`
    Gaussian { bandwidth: f64 },
    /// `exp(-‖z - z'‖ / bandwidth)` with the Euclidean norm.
    Laplacian { bandwidth: f64 },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let k = KernelSpec::Gaussian { bandwidth };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Polynomial { degree, offset } => {
                if degree == 0 {
                    Err(Error::contract("polynomial degree must be positive"))
                } else if !(offset.is_finite() && offset >= 0.0) {
                    Err(Error::contract("polynomial offset must be a nonnegative real"))
                } else {
                    Ok(())
                }
            }
            KernelSpec::Gaussian { bandwidth } | KernelSpec::Laplacian { bandwidth } => {
                if bandwidth.is_finite() && bandwidth > 0.0 {
                    Ok(())
                } else {
                    Err(Error::contract(format!(
                        "bandwidth must be positive and finite, got {bandwidth}"
                    )))
                }
            }
        }
    }

    /// Uniform bound κ² on `K(z, z)`; `None` for kernels that are unbounded
    /// on all of ℝᵈ.
    pub fn kappa_sq(&self) -> Option<f64> {
        match self {
            KernelSpec::Gaussian { .. } | KernelSpec::Laplacian { .. } => Some(1.0),
            KernelSpec::Linear | KernelSpec::Polynomial { .. } => None,
        }
    }

    pub fn is_radial(&self) -> bool {
        matches!(self, KernelSpec::Gaussian { .. } | KernelSpec::Laplacian { .. })
    }

    /// Evaluate `K(z, z')`.
    pub fn eval(&self, z: &[f64], zp: &[f64]) -> Result<f64> {
        check_dim("kernel evaluation", z.len(), zp.len())?;
        Ok(self.eval_unchecked(z, zp))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, z: &[f64], zp: &[f64]) -> f64 {
        match *self {
            KernelSpec::Linear | KernelSpec::Polynomial { .. } => self.from_parts(dot(z, zp), 0.0, 0.0),
            _ => self.from_parts(dot(z, zp), dot(z, z), dot(zp, zp)),
        }
    }

    /// Kernel value from the inner product and the two squared norms. Gram
    /// construction passes cached norms here so its entries are bit-identical
    /// to pointwise evaluation.
    #[inline]
    fn from_parts(&self, inner: f64, sq_a: f64, sq_b: f64) -> f64 {
        match *self {
            KernelSpec::Linear => inner,
            KernelSpec::Polynomial { degree, offset } => (inner + offset).powi(degree as i32),
            KernelSpec::Gaussian { bandwidth } => {
                let d2 = sq_dist_from_parts(inner, sq_a, sq_b);
                (-d2 / (bandwidth * bandwidth)).exp()
            }
            KernelSpec::Laplacian { bandwidth } => {
                let d2 = sq_dist_from_parts(inner, sq_a, sq_b);
                (-d2.sqrt() / bandwidth).exp()
            }
        }
    }
}

#[inline]
fn sq_dist_from_parts(inner: f64, sq_a: f64, sq_b: f64) -> f64 {
    // norms are added first so the result does not depend on argument order
    ((sq_a + sq_b) - 2.0 * inner).max(0.0)
}

/// Squared Euclidean distance via the norm expansion, floored at zero.
#[inline]
pub fn sq_dist(z: &[f64], zp: &[f64]) -> f64 {
    sq_dist_from_parts(dot(z, zp), dot(z, z), dot(zp, zp))
}

pub fn eval_kernel(spec: &KernelSpec, z: &[f64], zp: &[f64]) -> Result<f64> {
    spec.eval(z, zp)
}

/// `m` points in `ℝᵈ`, stored row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct PointSet {
    data: Vec<f64>,
    len: usize,
    dim: usize,
}

impl PointSet {
    pub fn new(len: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if len == 0 || dim == 0 {
            return Err(Error::contract("a point set needs at least one point and one coordinate"));
        }
        check_dim("point set storage", len * dim, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract("point coordinates must be finite"));
        }
        Ok(PointSet { data, len, dim })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            check_dim("point set rows", dim, r.len())?;
            data.extend_from_slice(r);
        }
        PointSet::new(rows.len(), dim, data)
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let (len, dim) = m.shape();
        let mut data = Vec::with_capacity(len * dim);
        for i in 0..len {
            data.extend(m.row(i).iter());
        }
        PointSet::new(len, dim, data)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len, self.dim, &self.data)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    /// The sub-collection at the given row indices.
    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(rows.len() * self.dim);
        for &i in rows {
            data.extend_from_slice(self.point(i));
        }
        PointSet::new(rows.len(), self.dim, data)
    }

    fn sq_norms(&self) -> Vec<f64> {
        self.iter().map(|p| dot(p, p)).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for PointSet {
    type Error = Error;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        PointSet::from_rows(&rows)
    }
}

impl From<PointSet> for Vec<Vec<f64>> {
    fn from(p: PointSet) -> Self {
        p.iter().map(<[f64]>::to_vec).collect()
    }
}

/// Kernel matrix over one point set. When `normalized`, entries are
/// `K(pᵢ, pⱼ) / m`.
#[derive(Clone, Debug, PartialEq)]
pub struct GramMatrix {
    values: DMatrix<f64>,
    normalized: bool,
}

impl GramMatrix {
    /// Wrap an existing matrix; it must be square and exactly symmetric.
    pub fn from_values(values: DMatrix<f64>, normalized: bool) -> Result<Self> {
        if values.nrows() != values.ncols() || values.nrows() == 0 {
            return Err(Error::contract("Gram matrix must be square and non-empty"));
        }
        let n = values.nrows();
        for i in 0..n {
            for j in (i + 1)..n {
                if values[(i, j)] != values[(j, i)] {
                    return Err(Error::contract("Gram matrix must be exactly symmetric"));
                }
            }
        }
        Ok(GramMatrix { values, normalized })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn into_values(self) -> DMatrix<f64> {
        self.values
    }

    pub fn size(&self) -> usize {
        self.values.nrows()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    /// The `1/m`-scaled copy of a raw Gram matrix (identity on normalized input).
    pub fn to_normalized(&self) -> GramMatrix {
        if self.normalized {
            return self.clone();
        }
        let m = self.size() as f64;
        GramMatrix {
            values: self.values.map(|v| v / m),
            normalized: true,
        }
    }

    /// Headerless row-major CSV.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        crate::io::write_matrix_csv(out, &self.values)
    }
}

/// Gram matrix of `spec` over `pts`. The upper triangle is computed and
/// mirrored, so the result is exactly symmetric.
pub fn gram(spec: &KernelSpec, pts: &PointSet, normalize: bool) -> GramMatrix {
    let m = pts.len();
    let norms = pts.sq_norms();
    let scale = if normalize { m as f64 } else { 1.0 };
    let upper: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let a = pts.point(i);
            (i..m)
                .map(|j| spec.from_parts(dot(a, pts.point(j)), norms[i], norms[j]) / scale)
                .collect()
        })
        .collect();
    let mut values = DMatrix::zeros(m, m);
    for (i, row) in upper.iter().enumerate() {
        for (off, &v) in row.iter().enumerate() {
            let j = i + off;
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    GramMatrix {
        values,
        normalized: normalize,
    }
}

/// Raw cross-kernel matrix with entry `(i, j) = K(aᵢ, bⱼ)`.
pub fn cross_gram(spec: &KernelSpec, a: &PointSet, b: &PointSet) -> Result<DMatrix<f64>> {
    check_dim("cross Gram", a.dim(), b.dim())?;
    let na = a.sq_norms();
    let nb = b.sq_norms();
    let rows: Vec<Vec<f64>> = (0..a.len())
        .into_par_iter()
        .map(|i| {
            let ai = a.point(i);
            (0..b.len())
                .map(|j| spec.from_parts(dot(ai, b.point(j)), na[i], nb[j]))
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(a.len(), b.len(), |i, j| rows[i][j]))
}

/// Median of the `m(m-1)/2` pairwise Euclidean distances; for an even count
/// the midpoint of the two central order statistics.
pub fn median_bandwidth(pts: &PointSet) -> Result<f64> {
    let m = pts.len();
    if m < 2 {
        return Err(Error::contract("median bandwidth needs at least two points"));
    }
    let norms = pts.sq_norms();
    let mut dists: Vec<f64> = (0..m)
        .into_par_iter()
        .flat_map_iter(|i| {
            let a = pts.point(i);
            let norms = &norms;
            ((i + 1)..m).map(move |j| sq_dist_from_parts(dot(a, pts.point(j)), norms[i], norms[j]).sqrt())
        })
        .collect();
    dists.sort_unstable_by(f64::total_cmp);
    if dists.last().copied().unwrap_or(0.0) <= 0.0 {
        return Err(Error::degenerate("all pairwise distances are zero"));
    }
    let c = dists.len();
    let median = if c % 2 == 1 {
        dists[c / 2]
    } else {
        0.5 * (dists[c / 2 - 1] + dists[c / 2])
    };
    if median > 0.0 {
        Ok(median)
    } else {
        Err(Error::degenerate("median pairwise distance is zero"))
    }
}

/// `‖K_z − K_ẑ‖²_K = K(z,z) − 2K(z,ẑ) + K(ẑ,ẑ)`, clamped at zero.
pub fn kernel_displacement(spec: &KernelSpec, z: &[f64], zhat: &[f64]) -> Result<f64> {
    check_dim("kernel displacement", z.len(), zhat.len())?;
    Ok(displacement_unchecked(spec, z, zhat))
}

#[inline]
pub(crate) fn displacement_unchecked(spec: &KernelSpec, z: &[f64], zhat: &[f64]) -> f64 {
    let v = spec.eval_unchecked(z, z) - 2.0 * spec.eval_unchecked(z, zhat)
        + spec.eval_unchecked(zhat, zhat);
    v.max(0.0)
}

/// Smallest and largest eigenvalue; used to check numerical PSD.
pub fn extreme_eigenvalues(g: &GramMatrix) -> Result<(f64, f64)> {
    let (vals, _) = linalg::sorted_symmetric_eigen(g.values.clone())?;
    Ok((*vals.last().unwrap(), vals[0]))
}
