//! Dense SVD machinery for feature-map matrices: Gram-matrix construction,
//! a cyclic-by-rows Jacobi eigensolver, singular-vector recovery, rank-r
//! truncation, sign canonicalization, and Pearson correlation.
//!
//! The decomposition runs on the m×m Gram matrix XᵀX rather than on X
//! itself: columns are flattened feature maps with n up to 70756 while m is
//! a channel count of at most a few hundred, and only the leading left
//! singular vectors are consumed downstream. Left vectors are recovered as
//! u_i = X v_i / σ_i.

use crate::error::{Error, Result};

/// Maximum Jacobi sweeps before reporting non-convergence.
pub const JACOBI_MAX_SWEEPS: usize = 50;
/// Default relative off-diagonal threshold.
pub const JACOBI_TOL: f64 = 1e-12;
/// σ_i at or below this fraction of σ₁ are flagged unreliable. The
/// Gram-side route computes eigenvalues with absolute error around
/// ε·σ₁², so singular values below √ε·σ₁ ≈ 1.5e-8·σ₁ are numerical
/// noise; the threshold sits above that floor.
pub const RANK_TOL: f64 = 1e-7;

/// n×m matrix whose columns are flattened feature maps, stored
/// column-major so each map is contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl FeatureMatrix {
    pub fn from_vec(n: usize, m: usize, data: Vec<f64>) -> Result<Self> {
        if m == 0 || n < m {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix needs n >= m >= 1, got {n}x{m}"
            )));
        }
        if data.len() != n * m {
            return Err(Error::ShapeMismatch(format!(
                "feature matrix data length {} does not match {n}x{m}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::ShapeMismatch(format!("non-finite matrix entry {v}")));
        }
        Ok(Self { n, m, data })
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let m = columns.len();
        let n = columns.first().map(|c| c.len()).unwrap_or(0);
        if columns.iter().any(|c| c.len() != n) {
            return Err(Error::ShapeMismatch("columns differ in length".into()));
        }
        let mut data = Vec::with_capacity(n * m);
        for c in columns {
            data.extend_from_slice(c);
        }
        Self::from_vec(n, m, data)
    }

    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.n..(j + 1) * self.n]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[j * self.n + i]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Correlation matrix XᵀX: entry (i, j) is the inner product of columns
/// i and j. Exactly symmetric by construction.
pub fn gram(x: &FeatureMatrix) -> Vec<f64> {
    let m = x.m;
    let mut g = vec![0.0; m * m];
    for i in 0..m {
        let ci = x.column(i);
        for j in i..m {
            let dot: f64 = ci.iter().zip(x.column(j)).map(|(a, b)| a * b).sum();
            g[i * m + j] = dot;
            g[j * m + i] = dot;
        }
    }
    g
}

fn off_diagonal_norm(a: &[f64], n: usize) -> f64 {
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[i * n + j] * a[i * n + j];
            }
        }
    }
    acc.sqrt()
}

fn frobenius(a: &[f64]) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Eigendecomposition of a symmetric matrix by cyclic-by-rows Jacobi
/// rotations. Returns eigenvalues in descending order and the matching
/// orthonormal eigenvectors as columns of a row-major n×n matrix.
///
/// Sweeps run until the off-diagonal Frobenius norm drops below
/// `tol`·‖S‖_F, up to [`JACOBI_MAX_SWEEPS`].
pub fn jacobi_eigh(matrix: &[f64], n: usize, tol: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if matrix.len() != n * n {
        return Err(Error::ShapeMismatch(format!(
            "matrix length {} is not {n}x{n}",
            matrix.len()
        )));
    }
    for i in 0..n {
        for j in i + 1..n {
            let delta = (matrix[i * n + j] - matrix[j * n + i]).abs();
            if delta > 1e-12 * (1.0 + matrix[i * n + j].abs() + matrix[j * n + i].abs()) {
                return Err(Error::NotSymmetric { i, j, delta });
            }
        }
    }
    let mut a = matrix.to_vec();
    let mut q = vec![0.0; n * n];
    for i in 0..n {
        q[i * n + i] = 1.0;
    }
    let scale = frobenius(&a);
    let threshold = tol * scale;

    let mut converged = scale == 0.0 || off_diagonal_norm(&a, n) <= threshold;
    let mut sweeps = 0;
    while !converged {
        if sweeps == JACOBI_MAX_SWEEPS {
            return Err(Error::JacobiNoConvergence {
                sweeps,
                offdiag: off_diagonal_norm(&a, n),
            });
        }
        for p in 0..n - 1 {
            for r in p + 1..n {
                let apq = a[p * n + r];
                if apq == 0.0 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[r * n + r];
                let tau = (aqq - app) / (2.0 * apq);
                // smaller-magnitude root of t² + 2τt − 1 = 0; odd in τ so
                // column sign flips of the source matrix conjugate exactly
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;

                a[p * n + p] = app - t * apq;
                a[r * n + r] = aqq + t * apq;
                a[p * n + r] = 0.0;
                a[r * n + p] = 0.0;
                for i in 0..n {
                    if i != p && i != r {
                        let aip = a[i * n + p];
                        let aiq = a[i * n + r];
                        let new_p = c * aip - s * aiq;
                        let new_q = s * aip + c * aiq;
                        a[i * n + p] = new_p;
                        a[p * n + i] = new_p;
                        a[i * n + r] = new_q;
                        a[r * n + i] = new_q;
                    }
                }
                for i in 0..n {
                    let qip = q[i * n + p];
                    let qiq = q[i * n + r];
                    q[i * n + p] = c * qip - s * qiq;
                    q[i * n + r] = s * qip + c * qiq;
                }
            }
        }
        sweeps += 1;
        converged = off_diagonal_norm(&a, n) <= threshold;
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j * n + j].partial_cmp(&a[i * n + i]).unwrap());
    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[i * n + i]).collect();
    let mut vectors = vec![0.0; n * n];
    for (new_col, &old_col) in order.iter().enumerate() {
        for i in 0..n {
            vectors[i * n + new_col] = q[i * n + old_col];
        }
    }
    Ok((eigenvalues, vectors))
}

/// Singular value decomposition of a feature matrix.
#[derive(Debug, Clone)]
pub struct SvdResult {
    n: usize,
    m: usize,
    /// n×m, column-major; columns at or beyond `rank` are zero-filled and
    /// unreliable.
    u: Vec<f64>,
    /// Descending, length m.
    sigma: Vec<f64>,
    /// m×m, column-major.
    v: Vec<f64>,
    /// Columns with σ_i > RANK_TOL·σ₁.
    rank: usize,
}

impl SvdResult {
    pub fn rows(&self) -> usize {
        self.n
    }

    pub fn cols(&self) -> usize {
        self.m
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn u_column(&self, i: usize) -> &[f64] {
        &self.u[i * self.n..(i + 1) * self.n]
    }

    pub fn v_column(&self, i: usize) -> &[f64] {
        &self.v[i * self.m..(i + 1) * self.m]
    }

    /// (σ₁ − σ₂)/σ₁; 1 for single-column matrices, 0 when σ₁ = 0.
    pub fn spectral_gap(&self) -> f64 {
        if self.sigma.is_empty() || self.sigma[0] == 0.0 {
            return 0.0;
        }
        if self.sigma.len() == 1 {
            return 1.0;
        }
        (self.sigma[0] - self.sigma[1]) / self.sigma[0]
    }
}

/// SVD through the m×m Gram eigenproblem: σ_i = √λ_i, u_i = X v_i / σ_i.
pub fn svd_via_gram(x: &FeatureMatrix) -> Result<SvdResult> {
    let m = x.m;
    let g = gram(x);
    let (lambdas, vectors) = jacobi_eigh(&g, m, JACOBI_TOL)?;
    let sigma: Vec<f64> = lambdas.iter().map(|&l| l.max(0.0).sqrt()).collect();
    let rank = if sigma[0] == 0.0 {
        0
    } else {
        sigma.iter().filter(|&&s| s > RANK_TOL * sigma[0]).count()
    };
    let mut v = vec![0.0; m * m];
    for col in 0..m {
        for row in 0..m {
            v[col * m + row] = vectors[row * m + col];
        }
    }
    let mut u = vec![0.0; x.n * m];
    for col in 0..rank {
        let vc = &v[col * m..(col + 1) * m];
        let uc = &mut u[col * x.n..(col + 1) * x.n];
        for (j, &w) in vc.iter().enumerate() {
            let xc = x.column(j);
            for (ui, &xi) in uc.iter_mut().zip(xc) {
                *ui += w * xi;
            }
        }
        let inv = 1.0 / sigma[col];
        for ui in uc.iter_mut() {
            *ui *= inv;
        }
    }
    Ok(SvdResult { n: x.n, m, u, sigma, v, rank })
}

/// Rank-r reconstruction X̃ = Σ_{i≤r} σ_i u_i v_iᵀ.
pub fn truncate(svd: &SvdResult, r: usize) -> Result<FeatureMatrix> {
    if r == 0 || r > svd.rank {
        return Err(Error::IndexOutOfRange { index: r, limit: svd.rank });
    }
    let (n, m) = (svd.n, svd.m);
    let mut data = vec![0.0; n * m];
    for i in 0..r {
        let s = svd.sigma[i];
        let ui = svd.u_column(i);
        let vi = svd.v_column(i);
        for col in 0..m {
            let w = s * vi[col];
            let out = &mut data[col * n..(col + 1) * n];
            for (o, &u) in out.iter_mut().zip(ui) {
                *o += w * u;
            }
        }
    }
    FeatureMatrix::from_vec(n, m, data)
}

/// Column k of the rank-1 reconstruction: σ₁·v₁[k]·u₁.
pub fn rank1_column(svd: &SvdResult, k: usize) -> Result<Vec<f64>> {
    if k >= svd.m {
        return Err(Error::IndexOutOfRange { index: k, limit: svd.m });
    }
    if svd.rank == 0 {
        return Ok(vec![0.0; svd.n]);
    }
    let w = svd.sigma[0] * svd.v_column(0)[k];
    Ok(svd.u_column(0).iter().map(|&u| w * u).collect())
}

/// Deterministic sign convention: flip the vector so its component sum is
/// positive; ties (|Σ| ≤ 1e-12) fall back to the sign of the first nonzero
/// entry. Makes fingerprint comparison well-defined since u and -u span the
/// same direction.
pub fn canonical_sign(u: &[f64]) -> Result<Vec<f64>> {
    let first_nonzero = u.iter().find(|&&v| v != 0.0);
    let Some(&first) = first_nonzero else {
        return Err(Error::ZeroVector);
    };
    let sum: f64 = u.iter().sum();
    let flip = if sum > 1e-12 {
        false
    } else if sum < -1e-12 {
        true
    } else {
        first < 0.0
    };
    Ok(if flip { u.iter().map(|&v| -v).collect() } else { u.to_vec() })
}

/// Product-moment correlation of two equal-length, non-constant vectors.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "pearson needs two equal-length vectors of at least 2, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(Error::ConstantInput);
    }
    // sqrt(var_a*var_b) keeps r = ±1 exact for (anti-)identical inputs
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}
