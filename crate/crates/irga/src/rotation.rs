//! Orthonormal split of the design matrix and rotated data quantities.
//!
//! `compute_rotation` factors the n x p design `X` with a Householder QR and
//! returns the orthogonal factor partitioned as `Q = (R, S)`: the columns of
//! `R` span the column space of `X`, the columns of `S` its orthogonal
//! complement, so `S^T X = 0`. Rotating the data by `Q^T` splits the
//! regression into a p-dimensional part that carries the parameter of
//! interest and an (n-p)-dimensional part that carries only the nuisance.
//!
//! `S` is materialized as a full n x (n-p) matrix. At desk scale (n up to a
//! few thousand) this is cheap and makes the `S^T Z` products explicit; the
//! cost of those products is O(n^2 q).

use nalgebra::{DMatrix, DVector};

use crate::linalg;
use crate::{Error, Result};

/// Relative rank tolerance: sigma_min < RANK_RTOL * sigma_max * max(n, p)
/// flags the matrix as rank deficient.
pub const RANK_RTOL: f64 = 1e-10;

/// A regression dataset: response, design of interest, optional nuisance
/// features, optional known error variance.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub y: DVector<f64>,
    pub x: DMatrix<f64>,
    pub z: Option<DMatrix<f64>>,
    pub sigma2: Option<f64>,
}

impl Dataset {
    pub fn new(
        y: DVector<f64>,
        x: DMatrix<f64>,
        z: Option<DMatrix<f64>>,
        sigma2: Option<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("empty response".into()));
        }
        if x.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "X has {} rows but y has length {}",
                x.nrows(),
                n
            )));
        }
        if x.ncols() == 0 || x.ncols() > n {
            return Err(Error::DimensionMismatch(format!(
                "need 1 <= p <= n, got p = {}, n = {}",
                x.ncols(),
                n
            )));
        }
        if let Some(z) = &z {
            if z.nrows() != n {
                return Err(Error::DimensionMismatch(format!(
                    "Z has {} rows but y has length {}",
                    z.nrows(),
                    n
                )));
            }
            if z.ncols() == 0 {
                return Err(Error::DimensionMismatch("Z present but has no columns".into()));
            }
        }
        if let Some(s2) = sigma2 {
            if !(s2 > 0.0) || !s2.is_finite() {
                return Err(Error::InvalidVariance(format!("sigma2 = {s2}")));
            }
        }
        Ok(Dataset { y, x, z, sigma2 })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.as_ref().map_or(0, |z| z.ncols())
    }
}

/// The orthonormal pair (R, S): columns of R span the column space of X,
/// columns of S its orthogonal complement.
#[derive(Clone, Debug)]
pub struct RotationSplit {
    /// n x p, orthonormal columns, spans col(X).
    pub r: DMatrix<f64>,
    /// n x (n-p), orthonormal columns, spans the complement.
    pub s: DMatrix<f64>,
}

impl RotationSplit {
    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    pub fn p(&self) -> usize {
        self.r.ncols()
    }
}

/// Rotated data quantities consumed by downstream modules.
#[derive(Clone, Debug)]
pub struct RotatedData {
    /// R^T y, length p.
    pub ry: DVector<f64>,
    /// R^T X, p x p upper triangular.
    pub rx: DMatrix<f64>,
    /// S^T y, length n-p.
    pub sy: DVector<f64>,
    /// R^T Z when Z is present.
    pub rz: Option<DMatrix<f64>>,
    /// S^T Z when Z is present.
    pub sz: Option<DMatrix<f64>>,
}

/// Householder QR of `x` with full accumulation of the orthogonal factor.
///
/// The sign convention is fixed so the diagonal of the triangular factor is
/// nonnegative, making the output reproducible across runs and platforms.
/// Rank-deficient inputs are rejected: the theory extends to them but no
/// construction is specified, so guessing is worse than failing loudly.
pub fn compute_rotation(x: &DMatrix<f64>) -> Result<RotationSplit> {
    let (n, p) = x.shape();
    if p == 0 || p > n {
        return Err(Error::DimensionMismatch(format!(
            "need 1 <= p <= n, got p = {p}, n = {n}"
        )));
    }

    let sv = linalg::singular_values(x);
    let largest = sv.max();
    let smallest = sv.min();
    let tol = RANK_RTOL * largest * n.max(p) as f64;
    if !(smallest > tol) {
        return Err(Error::RankDeficient { smallest, tol });
    }

    // Householder reduction; reflectors are accumulated into q on the fly.
    let mut a = x.clone();
    let mut q = DMatrix::<f64>::identity(n, n);
    for k in 0..p {
        let len = n - k;
        let mut v = DVector::<f64>::zeros(len);
        for i in 0..len {
            v[i] = a[(k + i, k)];
        }
        let norm = v.norm();
        if norm == 0.0 {
            continue; // cannot happen for full-rank input
        }
        // Pick the numerically stable reflection (away from v[0]).
        let alpha = if v[0] >= 0.0 { -norm } else { norm };
        v[0] -= alpha;
        let vnorm2 = v.norm_squared();
        if vnorm2 == 0.0 {
            continue;
        }
        let scale = 2.0 / vnorm2;

        // A[k.., k..] := H A[k.., k..]
        for j in k..p {
            let mut dot = 0.0;
            for i in 0..len {
                dot += v[i] * a[(k + i, j)];
            }
            let c = scale * dot;
            for i in 0..len {
                a[(k + i, j)] -= c * v[i];
            }
        }
        // Q[:, k..] := Q[:, k..] H  (H symmetric)
        for i in 0..n {
            let mut dot = 0.0;
            for j in 0..len {
                dot += q[(i, k + j)] * v[j];
            }
            let c = scale * dot;
            for j in 0..len {
                q[(i, k + j)] -= c * v[j];
            }
        }
    }

    // Nonnegative-diagonal convention for the triangular factor.
    for k in 0..p {
        if a[(k, k)] < 0.0 {
            for i in 0..n {
                q[(i, k)] = -q[(i, k)];
            }
        }
    }

    Ok(RotationSplit {
        r: q.columns(0, p).into_owned(),
        s: q.columns(p, n - p).into_owned(),
    })
}

/// Apply the rotation to a dataset.
pub fn rotate(data: &Dataset, split: &RotationSplit) -> Result<RotatedData> {
    let n = data.n();
    if split.n() != n || split.p() != data.p() {
        return Err(Error::DimensionMismatch(format!(
            "rotation is {}x{} but data has n = {}, p = {}",
            split.n(),
            split.p(),
            n,
            data.p()
        )));
    }
    let rt = split.r.transpose();
    let st = split.s.transpose();
    Ok(RotatedData {
        ry: &rt * &data.y,
        rx: &rt * &data.x,
        sy: &st * &data.y,
        rz: data.z.as_ref().map(|z| &rt * z),
        sz: data.z.as_ref().map(|z| &st * z),
    })
}
