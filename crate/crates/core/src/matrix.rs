//! Dense matrix utilities shared by the estimation and design stages.
//!
//! Time series are stored as `T × dim` matrices, one sample per row. Stacked
//! data matrices (Hankel, Toeplitz, observability) follow the usual block
//! layout where block row `i` holds time or power index `i`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Default relative singular-value cutoff for [`pinv`].
pub const DEFAULT_PINV_TOL: f64 = 1e-12;

/// Relative singular-value threshold used when deciding numerical rank.
pub const RANK_TOL: f64 = 1e-8;

/// Block-Hankel matrix of a `T × dim` series.
///
/// Block `(i, j)` is the column vector `signal(start + i + j)`, for
/// `0 <= i < depth` and `0 <= j < width`.
pub fn block_hankel(signal: &Matrix, start: usize, depth: usize, width: usize) -> Result<Matrix> {
    if depth == 0 || width == 0 {
        return Err(Error::InvalidParameter(format!(
            "Hankel depth and width must be positive (got depth {depth}, width {width})"
        )));
    }
    let required = start + depth + width - 1;
    if signal.nrows() < required {
        return Err(Error::InsufficientData {
            required,
            available: signal.nrows(),
            rule: String::new(),
        });
    }
    let dim = signal.ncols();
    Ok(Matrix::from_fn(depth * dim, width, |r, j| {
        signal[(start + r / dim + j, r % dim)]
    }))
}

/// Singular values of `m`, largest first.
pub fn singular_values(m: &Matrix) -> Vector {
    if m.is_empty() {
        return Vector::zeros(0);
    }
    thin_svd(m).singular_values
}

/// Number of singular values at or above `rel_tol · σ_max`.
pub fn numerical_rank(m: &Matrix, rel_tol: f64) -> usize {
    rank_of(&singular_values(m), rel_tol)
}

fn rank_of(s: &Vector, rel_tol: f64) -> usize {
    let smax = s.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    s.iter().filter(|&&v| v > 0.0 && v >= rel_tol * smax).count()
}

/// Ratio of the largest to the smallest singular value (infinite when singular).
pub fn condition_number(m: &Matrix) -> f64 {
    let s = singular_values(m);
    match (s.iter().next(), s.iter().next_back()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        _ => f64::INFINITY,
    }
}

/// Pseudo-inverse together with the rank it was computed at.
#[derive(Debug, Clone)]
pub struct PseudoInverse {
    pub matrix: Matrix,
    pub rank: usize,
    pub singular_values: Vector,
}

struct Svd {
    /// `rows × k`, orthonormal columns.
    u: Matrix,
    /// Length `k = min(rows, cols)`, nonincreasing.
    singular_values: Vector,
    /// `cols × k`, orthonormal columns.
    v: Matrix,
}

// nalgebra's bidiagonal SVD returns wrong factors for some rank-deficient
// inputs with zero rows, so the decomposition is delegated to faer.
fn thin_svd(m: &Matrix) -> Svd {
    let (r, c) = m.shape();
    let k = r.min(c);
    let svd = faer::MatRef::from_column_major_slice(m.as_slice(), r, c)
        .thin_svd()
        .expect("SVD of a finite matrix");
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    Svd {
        u: Matrix::from_fn(r, k, |i, j| u[(i, j)]),
        singular_values: Vector::from_fn(k, |i, _| s[i]),
        v: Matrix::from_fn(c, k, |i, j| v[(i, j)]),
    }
}

/// Moore-Penrose pseudo-inverse with rank decided by `σ >= tol · σ_max`.
pub fn pseudo_inverse(m: &Matrix, tol: f64) -> PseudoInverse {
    let (r, c) = m.shape();
    if m.is_empty() {
        return PseudoInverse {
            matrix: Matrix::zeros(c, r),
            rank: 0,
            singular_values: Vector::zeros(0),
        };
    }
    let svd = thin_svd(m);
    let rank = rank_of(&svd.singular_values, tol);
    let rank = if svd.singular_values[0] > 0.0 { rank } else { 0 };
    let mut v_scaled = svd.v.columns(0, rank).into_owned();
    for (j, mut col) in v_scaled.column_iter_mut().enumerate() {
        col /= svd.singular_values[j];
    }
    PseudoInverse {
        matrix: v_scaled * svd.u.columns(0, rank).transpose(),
        rank,
        singular_values: svd.singular_values,
    }
}

/// Moore-Penrose pseudo-inverse (see [`pseudo_inverse`]).
pub fn pinv(m: &Matrix, tol: f64) -> Matrix {
    pseudo_inverse(m, tol).matrix
}

/// Description of a strictly-lower block-Toeplitz matrix.
///
/// `blocks[k]` sits on block sub-diagonal `k + 1`; an order-`N` matrix needs
/// exactly `N - 1` blocks, all of shape `block_shape`.
#[derive(Debug, Clone)]
pub struct BlockToeplitzSpec {
    pub blocks: Vec<Matrix>,
    pub order: usize,
    pub block_shape: (usize, usize),
}

impl BlockToeplitzSpec {
    pub fn new(blocks: Vec<Matrix>, order: usize, block_shape: (usize, usize)) -> Self {
        Self {
            blocks,
            order,
            block_shape,
        }
    }

    /// Infers the block shape from the first block (requires `order >= 2`).
    pub fn from_blocks(blocks: Vec<Matrix>, order: usize) -> Result<Self> {
        let shape = blocks
            .first()
            .map(|b| b.shape())
            .ok_or_else(|| Error::InvalidParameter("cannot infer block shape without blocks".into()))?;
        Ok(Self::new(blocks, order, shape))
    }
}

/// Assembles the `qN × pN` strictly-lower block-Toeplitz matrix with block
/// `(i, j) = blocks[i - j - 1]` for `i > j` and zero otherwise.
pub fn block_toeplitz_strict_lower(spec: &BlockToeplitzSpec) -> Result<Matrix> {
    let n = spec.order;
    if n == 0 {
        return Err(Error::InvalidParameter("Toeplitz order must be at least 1".into()));
    }
    if spec.blocks.len() != n - 1 {
        return Err(Error::dim(
            "Toeplitz block count",
            n - 1,
            spec.blocks.len(),
        ));
    }
    let (q, p) = spec.block_shape;
    for (i, b) in spec.blocks.iter().enumerate() {
        if b.shape() != (q, p) {
            return Err(Error::dim(
                format!("Toeplitz block {}", i + 1),
                format!("{q}x{p}"),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
    }
    let mut out = Matrix::zeros(q * n, p * n);
    for i in 1..n {
        for j in 0..i {
            out.view_mut((i * q, j * p), (q, p))
                .copy_from(&spec.blocks[i - j - 1]);
        }
    }
    Ok(out)
}

/// Block-diagonal matrix with `count` copies of the square matrix `w`.
pub fn block_diag_repeat(w: &Matrix, count: usize) -> Result<Matrix> {
    if !w.is_square() {
        return Err(Error::dim(
            "block_diag_repeat argument",
            "square matrix",
            format!("{}x{}", w.nrows(), w.ncols()),
        ));
    }
    if count == 0 {
        return Err(Error::InvalidParameter("repeat count must be at least 1".into()));
    }
    let k = w.nrows();
    let mut out = Matrix::zeros(k * count, k * count);
    for i in 0..count {
        out.view_mut((i * k, i * k), (k, k)).copy_from(w);
    }
    Ok(out)
}

/// Rows `q..` of a stacked matrix (drops the first block row).
pub fn drop_leading_rows(m: &Matrix, q: usize) -> Matrix {
    m.rows(q, m.nrows() - q).into_owned()
}

/// Largest eigenvalue modulus.
pub fn spectral_radius(a: &Matrix) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Vec<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let mut ev: Vec<f64> = SymmetricEigen::new(sym).eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| a.total_cmp(b));
    ev
}

pub fn max_asymmetry(m: &Matrix) -> f64 {
    (m - m.transpose()).amax()
}

/// Induced ∞-norm (largest absolute row sum).
pub fn inf_norm(m: &Matrix) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn ensure_finite(m: &Matrix, what: &str) -> Result<()> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

/// Solves `a · x = b` for symmetric positive definite `a`.
///
/// Falls back to LU when the Cholesky factorisation breaks down; fails with
/// the condition number when `a` is numerically singular.
pub(crate) fn spd_solve(a: &Matrix, b: &Matrix, what: &str) -> Result<Matrix> {
    if let Some(chol) = a.clone().cholesky() {
        let x = chol.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Ok(x);
        }
    }
    let singular = || Error::Singular {
        what: what.to_string(),
        condition: condition_number(a),
    };
    let x = a.clone().lu().solve(b).ok_or_else(singular)?;
    if x.iter().all(|v| v.is_finite()) {
        Ok(x)
    } else {
        Err(singular())
    }
}

/// `a^k` by repeated squaring.
pub fn matrix_power(a: &Matrix, k: usize) -> Matrix {
    let mut result = Matrix::identity(a.nrows(), a.ncols());
    let mut base = a.clone();
    let mut e = k;
    while e > 0 {
        if e & 1 == 1 {
            result = &result * &base;
        }
        e >>= 1;
        if e > 0 {
            base = &base * &base;
        }
    }
    result
}

/// Vertical concatenation of equally wide matrices.
pub fn vstack(parts: &[&Matrix]) -> Matrix {
    let cols = parts.first().map_or(0, |m| m.ncols());
    let rows = parts.iter().map(|m| m.nrows()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut r0 = 0;
    for m in parts {
        assert_eq!(m.ncols(), cols, "vstack: column mismatch");
        out.view_mut((r0, 0), m.shape()).copy_from(*m);
        r0 += m.nrows();
    }
    out
}

/// Horizontal concatenation of equally tall matrices.
pub fn hstack(parts: &[&Matrix]) -> Matrix {
    let rows = parts.first().map_or(0, |m| m.nrows());
    let cols = parts.iter().map(|m| m.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let mut c0 = 0;
    for m in parts {
        assert_eq!(m.nrows(), rows, "hstack: row mismatch");
        out.view_mut((0, c0), m.shape()).copy_from(*m);
        c0 += m.ncols();
    }
    out
}
