//! Extended observability matrix in measured-state coordinates.
//!
//! Both estimators start from `Y_p = O X + S U_p`. The first subtracts the
//! estimated Toeplitz term and regresses on the state snapshot `X`. The
//! second removes `U_p` from the row space with an orthogonal projector and
//! needs no Toeplitz estimate.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::matrix::{drop_leading_rows, pseudo_inverse, Matrix, DEFAULT_PINV_TOL, RANK_TOL};
use crate::sim::{shape, Dataset, StateSpaceModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ObservabilityMethod {
    /// `Ô = (Y_p - Ŝ U_p) X†`
    #[default]
    ToeplitzCorrected,
    /// `Ô = (Y_p U_po)(X U_po)†`
    Projection,
}

impl ObservabilityMethod {
    pub fn label(self) -> &'static str {
        match self {
            Self::ToeplitzCorrected => "alg1",
            Self::Projection => "alg2",
        }
    }
}

impl fmt::Display for ObservabilityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ObservabilityMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "alg1" | "toeplitz" => Ok(Self::ToeplitzCorrected),
            "alg2" | "projection" => Ok(Self::Projection),
            other => Err(Error::InvalidParameter(format!(
                "unknown observability algorithm '{other}' (expected alg1 or alg2)"
            ))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ObservabilityEstimate {
    /// Blocks `C, CA, …, CA^(d-1)`, `qd × n`.
    pub o: Matrix,
    /// `o` without its first block row, `q(d-1) × n`.
    pub o_plus: Matrix,
    pub method: ObservabilityMethod,
    pub depth: usize,
    pub outputs: usize,
    /// Numerical rank of the regressor that was pseudo-inverted.
    pub regressor_rank: usize,
    /// Whether `U_p U_pᵀ` had to be pseudo-inverted.
    pub projector_fallback: bool,
}

impl ObservabilityEstimate {
    /// First `n` blocks of `O⁺` (`CA … CA^n`), `qn × states`.
    pub fn o_plus_blocks(&self, n: usize) -> Result<Matrix> {
        let q = self.outputs;
        if n == 0 || n * q > self.o_plus.nrows() {
            return Err(Error::InvalidParameter(format!(
                "requested {n} blocks of O+, estimate holds {}",
                self.o_plus.nrows() / q.max(1)
            )));
        }
        Ok(self.o_plus.rows(0, n * q).into_owned())
    }

    /// First `n` blocks of `O` (`C … CA^(n-1)`).
    pub fn o_blocks(&self, n: usize) -> Result<Matrix> {
        let q = self.outputs;
        if n == 0 || n * q > self.o.nrows() {
            return Err(Error::InvalidParameter(format!(
                "requested {n} blocks of O, estimate holds {}",
                self.o.nrows() / q.max(1)
            )));
        }
        Ok(self.o.rows(0, n * q).into_owned())
    }
}

/// `X = [x(0) … x(L-1)]`, `n × L`.
pub fn state_snapshot(data: &Dataset, width: usize) -> Result<Matrix> {
    if data.len() < width {
        return Err(Error::InsufficientData {
            required: width,
            available: data.len(),
            rule: String::new(),
        });
    }
    Ok(data.x.rows(0, width).transpose())
}

/// Rows `q..` of `o`.
pub fn drop_first_block_row(o: &Matrix, q: usize) -> Result<Matrix> {
    if q == 0 || o.nrows() < 2 * q {
        return Err(Error::dim(
            "observability matrix",
            format!("at least {} rows", 2 * q),
            o.nrows(),
        ));
    }
    Ok(drop_leading_rows(o, q))
}

fn check_shapes(yp: &Matrix, x: &Matrix, q: usize) -> Result<usize> {
    if q == 0 || !yp.nrows().is_multiple_of(q) {
        return Err(Error::dim("Y_p rows", format!("multiple of q={q}"), yp.nrows()));
    }
    if x.ncols() != yp.ncols() {
        return Err(Error::dim("state snapshot X", format!("{} columns", yp.ncols()), shape(x)));
    }
    Ok(yp.nrows() / q)
}

fn regress(lhs: &Matrix, regressor: &Matrix, what: &str) -> Result<(Matrix, usize)> {
    let n = regressor.nrows();
    let pinv = pseudo_inverse(regressor, DEFAULT_PINV_TOL);
    let s = &pinv.singular_values;
    let smax = s.iter().copied().fold(0.0, f64::max);
    let rank = s.iter().filter(|&&v| smax > 0.0 && v >= RANK_TOL * smax).count();
    if rank < n {
        return Err(Error::RankDeficient {
            what: what.into(),
            rank,
            required: n,
        });
    }
    Ok((lhs * pinv.matrix, rank))
}

/// Toeplitz-corrected estimator `Ô = (Y_p - Ŝ U_p) X†`.
pub fn estimate_obs_alg1(
    yp: &Matrix,
    up: &Matrix,
    s_hat: &Matrix,
    x: &Matrix,
    outputs: usize,
) -> Result<ObservabilityEstimate> {
    let depth = check_shapes(yp, x, outputs)?;
    if s_hat.nrows() != yp.nrows() || s_hat.ncols() != up.nrows() {
        return Err(Error::dim(
            "Toeplitz estimate S",
            format!("{}x{}", yp.nrows(), up.nrows()),
            shape(s_hat),
        ));
    }
    if up.ncols() != yp.ncols() {
        return Err(Error::dim("U_p", format!("{} columns", yp.ncols()), shape(up)));
    }
    let lhs = yp - s_hat * up;
    let (o, rank) = regress(&lhs, x, "state snapshot X")?;
    let o_plus = drop_first_block_row(&o, outputs)?;
    Ok(ObservabilityEstimate {
        o,
        o_plus,
        method: ObservabilityMethod::ToeplitzCorrected,
        depth,
        outputs,
        regressor_rank: rank,
        projector_fallback: false,
    })
}

/// Projector onto the orthogonal complement of the row space of `U_p`.
#[derive(Debug, Clone)]
pub struct Projector {
    pub matrix: Matrix,
    /// `U_p U_pᵀ` was singular and its pseudo-inverse was used.
    pub fallback: bool,
}

// (U_p U_pᵀ)⁻¹ U_p, or the pseudo-inverse form when the Gram matrix is singular.
fn gram_solve(up: &Matrix) -> (Matrix, bool) {
    let gram = up * up.transpose();
    if let Some(chol) = gram.clone().cholesky() {
        let sol = chol.solve(up);
        let rank = crate::matrix::numerical_rank(up, RANK_TOL);
        if rank == up.nrows() && sol.iter().all(|v| v.is_finite()) {
            return (sol, false);
        }
    }
    (pseudo_inverse(&gram, DEFAULT_PINV_TOL).matrix * up, true)
}

/// `U_po = I_L - U_pᵀ (U_p U_pᵀ)⁻¹ U_p`.
pub fn orthogonal_projector(up: &Matrix) -> Projector {
    let l = up.ncols();
    let (sol, fallback) = gram_solve(up);
    Projector {
        matrix: Matrix::identity(l, l) - up.transpose() * sol,
        fallback,
    }
}

/// `m · U_po` without forming the `L × L` projector.
pub fn project_out(m: &Matrix, up: &Matrix) -> (Matrix, bool) {
    let (sol, fallback) = gram_solve(up);
    (m - (m * up.transpose()) * sol, fallback)
}

/// Projection estimator `Ô = (Y_p U_po)(X U_po)†`.
pub fn estimate_obs_alg2(yp: &Matrix, up: &Matrix, x: &Matrix, outputs: usize) -> Result<ObservabilityEstimate> {
    let depth = check_shapes(yp, x, outputs)?;
    if up.ncols() != yp.ncols() {
        return Err(Error::dim("U_p", format!("{} columns", yp.ncols()), shape(up)));
    }
    let (sol, fallback) = gram_solve(up);
    let ypo = yp - (yp * up.transpose()) * &sol;
    let xpo = x - (x * up.transpose()) * &sol;
    let (o, rank) = regress(&ypo, &xpo, "projected state snapshot X·U_po")?;
    let o_plus = drop_first_block_row(&o, outputs)?;
    Ok(ObservabilityEstimate {
        o,
        o_plus,
        method: ObservabilityMethod::Projection,
        depth,
        outputs,
        regressor_rank: rank,
        projector_fallback: fallback,
    })
}

/// `[C; CA; …; CA^(depth-1)]`.
pub fn model_observability(model: &StateSpaceModel, depth: usize) -> Matrix {
    let (q, n) = (model.outputs(), model.states());
    let mut out = Matrix::zeros(q * depth, n);
    let mut ca = model.c.clone();
    for i in 0..depth {
        out.view_mut((i * q, 0), (q, n)).copy_from(&ca);
        ca = &ca * &model.a;
    }
    out
}

/// `‖Y_p - Ô X - Ŝ U_p‖_F`.
pub fn equation_residual(yp: &Matrix, up: &Matrix, x: &Matrix, o: &Matrix, s: &Matrix) -> f64 {
    (yp - o * x - s * up).norm()
}
