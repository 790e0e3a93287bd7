//! LQR gains from Markov parameters and the shifted observability matrix,
//! plus a model-based Riccati oracle.
//!
//! The batch solution involves `Γ = (Q_N⁻¹ + S R_N⁻¹ Sᵀ)⁻¹`. It is evaluated
//! with the matrix-inversion lemma,
//! `Γ = Q_N - Q_N S (R_N + Sᵀ Q_N S)⁻¹ Sᵀ Q_N`,
//! which never inverts `Q_N` or `R_N`. The direct form is kept for
//! cross-checking.

use crate::error::{Error, Result};
use crate::matrix::{
    block_diag_repeat, condition_number, max_asymmetry, spd_solve, symmetric_eigenvalues, Matrix,
};
use crate::sim::{shape, StateSpaceModel};

/// Ridge used in place of `R = 0` for deadbeat-style designs.
pub const DEADBEAT_RIDGE: f64 = 1e-9;

const SYMMETRY_TOL: f64 = 1e-12;

/// Output weight `Q` (`q × q`) and input weight `R` (`p × p`), both
/// symmetric positive definite.
#[derive(Debug, Clone, PartialEq)]
pub struct LqrWeights {
    q: Matrix,
    r: Matrix,
}

impl LqrWeights {
    pub fn new(q: Matrix, r: Matrix) -> Result<Self> {
        check_spd(&q, "output weight Q", "")?;
        check_spd(
            &r,
            "input weight R",
            &format!("; for a deadbeat design use a small ridge such as R = {DEADBEAT_RIDGE:e}·I"),
        )?;
        Ok(Self { q, r })
    }

    /// `Q = q·I_outputs`, `R = r·I_inputs`.
    pub fn scaled_identity(outputs: usize, q: f64, inputs: usize, r: f64) -> Result<Self> {
        Self::new(Matrix::identity(outputs, outputs) * q, Matrix::identity(inputs, inputs) * r)
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn outputs(&self) -> usize {
        self.q.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.r.nrows()
    }
}

fn check_spd(m: &Matrix, what: &str, hint: &str) -> Result<()> {
    if !m.is_square() || m.is_empty() {
        return Err(Error::dim(what, "nonempty square", shape(m)));
    }
    crate::matrix::ensure_finite(m, what)?;
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > SYMMETRY_TOL * scale {
        return Err(Error::NotSymmetric {
            what: what.into(),
            asymmetry: asym,
        });
    }
    let min_eig = symmetric_eigenvalues(m).first().copied().unwrap_or(0.0);
    if min_eig <= 0.0 {
        return Err(Error::NotPositiveDefinite {
            what: what.into(),
            hint: hint.into(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GammaForm {
    #[default]
    InversionLemma,
    /// `(Q_N⁻¹ + S R_N⁻¹ Sᵀ)⁻¹` evaluated literally.
    Direct,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDiagnostics {
    /// Condition number of the matrix inverted inside `Γ`
    /// (`R_N + Sᵀ Q_N S`, or `Q_N⁻¹ + S R_N⁻¹ Sᵀ` for the direct form).
    pub gamma_condition: f64,
    /// Condition number of `R + Mᵀ Γ M`.
    pub bracket_condition: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LqrDesign {
    /// `p × n` state-feedback gain for `u = -K x`.
    pub k: Matrix,
    /// Number of Markov parameters in the batch formula.
    pub horizon: usize,
    pub weights: LqrWeights,
    pub diagnostics: GainDiagnostics,
}

/// `Γ` for an order-`blocks` Toeplitz matrix `s`, with the condition number
/// of the matrix that had to be inverted.
pub fn gamma(s: &Matrix, weights: &LqrWeights, blocks: usize, form: GammaForm) -> Result<(Matrix, f64)> {
    let qn = block_diag_repeat(weights.q(), blocks)?;
    let rn = block_diag_repeat(weights.r(), blocks)?;
    if s.shape() != (qn.nrows(), rn.nrows()) {
        return Err(Error::dim(
            "Toeplitz matrix S",
            format!("{}x{}", qn.nrows(), rn.nrows()),
            shape(s),
        ));
    }
    let g = match form {
        GammaForm::InversionLemma => {
            let qs = &qn * s;
            let inner = &rn + s.transpose() * &qs;
            let cond = condition_number(&inner);
            let sol = spd_solve(&inner, &qs.transpose(), "R_N + Sᵀ Q_N S")?;
            (&qn - &qs * sol, cond)
        }
        GammaForm::Direct => {
            let qinv = spd_solve(&qn, &Matrix::identity(qn.nrows(), qn.nrows()), "Q_N")?;
            let rinv = spd_solve(&rn, &Matrix::identity(rn.nrows(), rn.nrows()), "R_N")?;
            let inner = qinv + s * rinv * s.transpose();
            let cond = condition_number(&inner);
            let inv = spd_solve(&inner, &Matrix::identity(inner.nrows(), inner.nrows()), "Q_N⁻¹ + S R_N⁻¹ Sᵀ")?;
            (inv, cond)
        }
    };
    let sym = (&g.0 + g.0.transpose()) * 0.5;
    Ok((sym, g.1))
}

/// Batch LQR gain `K = [R + MᵀΓM]⁻¹ MᵀΓ O⁺` from `N` Markov parameters.
///
/// Shapes: `markov` is `qN × p`, `toeplitz` is `qN × pN`, `o_plus` is `qN × n`.
pub fn dd_lqr_gain(
    markov: &Matrix,
    toeplitz: &Matrix,
    o_plus: &Matrix,
    weights: &LqrWeights,
    horizon: usize,
) -> Result<LqrDesign> {
    dd_lqr_gain_with(markov, toeplitz, o_plus, weights, horizon, GammaForm::InversionLemma)
}

pub fn dd_lqr_gain_with(
    markov: &Matrix,
    toeplitz: &Matrix,
    o_plus: &Matrix,
    weights: &LqrWeights,
    horizon: usize,
    form: GammaForm,
) -> Result<LqrDesign> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("gain horizon N must be at least 1".into()));
    }
    let (q, p) = (weights.outputs(), weights.inputs());
    let rows = q * horizon;
    if markov.shape() != (rows, p) {
        return Err(Error::dim("stacked Markov parameters M", format!("{rows}x{p}"), shape(markov)));
    }
    if toeplitz.shape() != (rows, p * horizon) {
        return Err(Error::dim(
            "Toeplitz matrix S",
            format!("{rows}x{}", p * horizon),
            shape(toeplitz),
        ));
    }
    if o_plus.nrows() != rows {
        return Err(Error::dim("shifted observability O+", format!("{rows} rows"), shape(o_plus)));
    }
    let (g, gamma_condition) = gamma(toeplitz, weights, horizon, form)?;
    let mt_g = markov.transpose() * &g;
    let bracket = weights.r() + &mt_g * markov;
    let bracket_condition = condition_number(&bracket);
    let k = spd_solve(&bracket, &(&mt_g * o_plus), "R + MᵀΓM")?;
    crate::matrix::ensure_finite(&k, "gain K")?;
    Ok(LqrDesign {
        k,
        horizon,
        weights: weights.clone(),
        diagnostics: GainDiagnostics {
            gamma_condition,
            bracket_condition,
        },
    })
}

/// Batch Riccati solution `P = Oᵀ (Q_{N+1}⁻¹ + S R_{N+1}⁻¹ Sᵀ)⁻¹ O`.
///
/// `o` has `N + 1` block rows and `s` is the order-`(N+1)` Toeplitz matrix.
pub fn dd_lqr_p(o: &Matrix, s: &Matrix, weights: &LqrWeights, horizon: usize) -> Result<Matrix> {
    let blocks = horizon + 1;
    let q = weights.outputs();
    if o.nrows() != q * blocks {
        return Err(Error::dim("observability matrix O", format!("{} rows", q * blocks), shape(o)));
    }
    let (g, _) = gamma(s, weights, blocks, GammaForm::InversionLemma)?;
    let p = o.transpose() * g * o;
    Ok((&p + p.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy)]
pub struct DareOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for DareOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            max_iter: 100_000,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DareSolution {
    pub p: Matrix,
    pub iterations: usize,
    /// Relative residual of the Riccati equation at `p`.
    pub residual: f64,
}

fn riccati_map(model: &StateSpaceModel, weights: &LqrWeights, p: &Matrix, cqc: &Matrix) -> Result<Matrix> {
    let (a, b) = (&model.a, &model.b);
    let at_p = a.transpose() * p;
    let bt_p = b.transpose() * p;
    let bracket = weights.r() + &bt_p * b;
    let gain = spd_solve(&bracket, &(&bt_p * a), "R + BᵀPB")?;
    let next = &at_p * a - (&at_p * b) * gain + cqc;
    Ok((&next + next.transpose()) * 0.5)
}

/// Relative residual `‖AᵀPA - AᵀPB(R+BᵀPB)⁻¹BᵀPA + CᵀQC - P‖ / max(‖P‖, 1)`.
pub fn dare_residual(model: &StateSpaceModel, weights: &LqrWeights, p: &Matrix) -> Result<f64> {
    let cqc = model.c.transpose() * weights.q() * &model.c;
    let rhs = riccati_map(model, weights, p, &cqc)?;
    Ok((rhs - p).norm() / p.norm().max(1.0))
}

fn check_model_weights(model: &StateSpaceModel, weights: &LqrWeights) -> Result<()> {
    model.validate()?;
    if weights.outputs() != model.outputs() {
        return Err(Error::dim("output weight Q", model.outputs(), shape(weights.q())));
    }
    if weights.inputs() != model.inputs() {
        return Err(Error::dim("input weight R", model.inputs(), shape(weights.r())));
    }
    Ok(())
}

/// Riccati fixed-point iteration from `P₀ = CᵀQC`.
pub fn dare_solve(model: &StateSpaceModel, weights: &LqrWeights, opts: &DareOptions) -> Result<DareSolution> {
    check_model_weights(model, weights)?;
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::InvalidParameter("DARE tolerance must be positive".into()));
    }
    let cqc = model.c.transpose() * weights.q() * &model.c;
    let mut p = cqc.clone();
    let mut change = f64::INFINITY;
    for it in 1..=opts.max_iter {
        let next = riccati_map(model, weights, &p, &cqc)?;
        crate::matrix::ensure_finite(&next, "Riccati iterate")?;
        let diff = (&next - &p).norm();
        let scale = p.norm();
        change = if scale > 0.0 { diff / scale } else if diff == 0.0 { 0.0 } else { f64::INFINITY };
        p = next;
        if change < opts.tol {
            let residual = dare_residual(model, weights, &p)?;
            return Ok(DareSolution {
                p,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iter,
        residual: change,
    })
}

/// `K = (R + BᵀPB)⁻¹ BᵀPA`.
pub fn model_lqr_gain(model: &StateSpaceModel, p: &Matrix, r: &Matrix) -> Result<Matrix> {
    let n = model.states();
    if p.shape() != (n, n) {
        return Err(Error::dim("Riccati solution P", format!("{n}x{n}"), shape(p)));
    }
    if r.shape() != (model.inputs(), model.inputs()) {
        return Err(Error::dim("input weight R", model.inputs(), shape(r)));
    }
    let bt_p = model.b.transpose() * p;
    let bracket = r + &bt_p * &model.b;
    spd_solve(&bracket, &(bt_p * &model.a), "R + BᵀPB")
}

/// Model-based optimal gain via [`dare_solve`] and [`model_lqr_gain`].
pub fn oracle_gain(model: &StateSpaceModel, weights: &LqrWeights) -> Result<(Matrix, DareSolution)> {
    let sol = dare_solve(model, weights, &DareOptions::default())?;
    let k = model_lqr_gain(model, &sol.p, weights.r())?;
    Ok((k, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{model_toeplitz, stack_blocks, true_markov};
    use crate::matrix::spectral_radius;
    use crate::observability::model_observability;

    fn example_a() -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.15, -0.2, 0.6]),
            Matrix::from_row_slice(2, 2, &[0.04, 0.01, 0.02, -0.01]),
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
        )
        .unwrap()
    }

    fn scalar(a: f64) -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_element(1, 1, a),
            Matrix::from_element(1, 1, 1.72),
            Matrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn weights_a() -> LqrWeights {
        LqrWeights::scaled_identity(2, 20.0, 2, 0.2).unwrap()
    }

    fn model_gain(model: &StateSpaceModel, w: &LqrWeights, n: usize) -> LqrDesign {
        let m = stack_blocks(&true_markov(model, n));
        let s = model_toeplitz(model, n).unwrap();
        let op = model_observability(model, n + 1).rows(model.outputs(), model.outputs() * n).into_owned();
        dd_lqr_gain(&m, &s, &op, w, n).unwrap()
    }

    // Positive root of the scalar DARE written as a quadratic in p.
    fn scalar_dare_root(a: f64, b: f64, q: f64, r: f64) -> f64 {
        // p (r + b² p) = a² p r + q (r + b² p)
        let qa = b * b;
        let qb = r - a * a * r - q * b * b;
        let qc = -q * r;
        (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa)
    }

    #[test]
    fn weights_validation() {
        assert!(LqrWeights::scaled_identity(1, 1.0, 1, 0.0).unwrap_err().to_string().contains("ridge"));
        assert!(matches!(
            LqrWeights::new(Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]), Matrix::identity(1, 1)),
            Err(Error::NotSymmetric { .. })
        ));
        assert!(LqrWeights::new(Matrix::from_element(1, 1, -1.0), Matrix::identity(1, 1)).is_err());
    }

    #[test]
    fn model_based_gain_matches_printed_values() {
        let (k, sol) = oracle_gain(&example_a(), &weights_a()).unwrap();
        let expect = Matrix::from_row_slice(2, 2, &[4.6491, 7.5226, 1.4461, -1.9886]);
        assert!((&k - &expect).amax() < 1e-4, "{k}");
        assert!(sol.residual < 1e-11);
        assert!(spectral_radius(&(&example_a().a - &example_a().b * &k)) < 1.0);
    }

    #[test]
    fn batch_gain_with_exact_markov_converges() {
        let (k_star, _) = oracle_gain(&example_a(), &weights_a()).unwrap();
        let k50 = model_gain(&example_a(), &weights_a(), 50).k;
        let expect = Matrix::from_row_slice(2, 2, &[4.6491, 7.5226, 1.4461, -1.9886]);
        assert!((&k50 - &expect).amax() < 1e-3);
        assert!((&k50 - &k_star).amax() / k_star.amax() < 1e-4);
        // nine Markov parameters reproduce the printed short-horizon gain
        let k9 = model_gain(&example_a(), &weights_a(), 9).k;
        let expect9 = Matrix::from_row_slice(2, 2, &[4.2314, 7.644, 1.127, -1.8959]);
        assert!((&k9 - &expect9).amax() < 1e-3, "{k9}");
    }

    #[test]
    fn zero_dynamics_gives_zero_gain() {
        let m = scalar(0.0);
        let w = LqrWeights::scaled_identity(1, 1.0, 1, 0.2).unwrap();
        let d = model_gain(&m, &w, 5);
        assert!(d.k.amax() < 1e-14);
    }

    #[test]
    fn gamma_forms_agree() {
        let m = example_a();
        let s = model_toeplitz(&m, 6).unwrap();
        let (g1, _) = gamma(&s, &weights_a(), 6, GammaForm::InversionLemma).unwrap();
        let (g2, _) = gamma(&s, &weights_a(), 6, GammaForm::Direct).unwrap();
        assert!((&g1 - &g2).amax() / g2.amax() < 1e-8);
    }

    #[test]
    fn gain_rejects_bad_shapes() {
        let w = weights_a();
        let err = dd_lqr_gain(&Matrix::zeros(4, 2), &Matrix::zeros(4, 3), &Matrix::zeros(4, 2), &w, 2);
        assert!(matches!(err, Err(Error::Dimension { .. })));
    }

    #[test]
    fn batch_p_matches_dare() {
        let m = example_a();
        let w = weights_a();
        let n = 50;
        let p = dd_lqr_p(&model_observability(&m, n + 1), &model_toeplitz(&m, n + 1).unwrap(), &w, n).unwrap();
        let sol = dare_solve(&m, &w, &DareOptions::default()).unwrap();
        assert!((&p - &sol.p).norm() / sol.p.norm() < 1e-4);
    }

    #[test]
    fn batch_p_zero_dynamics() {
        let m = scalar(0.0);
        let w = LqrWeights::scaled_identity(1, 3.0, 1, 0.7).unwrap();
        for n in [1, 4, 9] {
            let p = dd_lqr_p(&model_observability(&m, n + 1), &model_toeplitz(&m, n + 1).unwrap(), &w, n).unwrap();
            assert!((p[(0, 0)] - 3.0).abs() < 1e-12);
        }
    }

    #[test]
    fn scalar_dare_quadratic_root() {
        let m = scalar(0.14);
        let w = LqrWeights::scaled_identity(1, 1.0, 1, 0.2).unwrap();
        let sol = dare_solve(&m, &w, &DareOptions::default()).unwrap();
        let root = scalar_dare_root(0.14, 1.72, 1.0, 0.2);
        assert!((sol.p[(0, 0)] - root).abs() < 1e-10);
        let n = 50;
        let p = dd_lqr_p(&model_observability(&m, n + 1), &model_toeplitz(&m, n + 1).unwrap(), &w, n).unwrap();
        assert!((p[(0, 0)] - root).abs() / root < 1e-6);
    }

    #[test]
    fn dare_zero_dynamics_one_step() {
        let m = scalar(0.0);
        let w = LqrWeights::scaled_identity(1, 2.0, 1, 1.0).unwrap();
        let sol = dare_solve(&m, &w, &DareOptions::default()).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.p[(0, 0)], 2.0);
    }

    #[test]
    fn dare_reports_non_convergence() {
        let w = weights_a();
        let opts = DareOptions { tol: 1e-12, max_iter: 3 };
        assert!(matches!(dare_solve(&example_a(), &w, &opts), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn deadbeat_limit() {
        let m = scalar(0.14);
        let w = LqrWeights::scaled_identity(1, 1.0, 1, DEADBEAT_RIDGE).unwrap();
        let (k, _) = oracle_gain(&m, &w).unwrap();
        assert!((k[(0, 0)] - 0.14 / 1.72).abs() < 1e-7);
        assert!((k[(0, 0)] - 0.0813953).abs() < 1e-6);
    }

    #[test]
    fn zero_p_gives_zero_gain() {
        let k = model_lqr_gain(&example_a(), &Matrix::zeros(2, 2), &(Matrix::identity(2, 2) * 0.2)).unwrap();
        assert_eq!(k.amax(), 0.0);
    }
}
