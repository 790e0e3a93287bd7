//! Markov-parameter estimation from input/output data.
//!
//! With Hankel depth `d`, the future outputs satisfy the linear predictor
//! `Y_f = W Φ`, `Φ = [U_p; Y_p; U_f]`, whose rightmost `p·d` columns are the
//! strictly-lower block-Toeplitz matrix of Markov parameters
//! `M⁽¹⁾ … M⁽ᵈ⁻¹⁾`. `W` is recovered by least squares.
//!
//! Noise-free, `Y_p = O X + S U_p`, so `Φ` has rank `2pd + n` rather than
//! full row rank whenever `qd > n`. The `U_f` block of `W` is still unique
//! as long as the rows of `U_f` are independent of `[U_p; Y_p]`; that is
//! the excitation condition checked here.

use crate::error::{Error, Result};
use crate::matrix::{
    block_hankel, block_toeplitz_strict_lower, numerical_rank, pseudo_inverse, vstack, BlockToeplitzSpec,
    Matrix, DEFAULT_PINV_TOL, RANK_TOL,
};
use crate::sim::{Dataset, StateSpaceModel};

#[derive(Debug, Clone)]
pub struct DataMatrices {
    pub up: Matrix,
    pub yp: Matrix,
    pub uf: Matrix,
    pub yf: Matrix,
    pub phi: Matrix,
    pub depth: usize,
    pub width: usize,
    pub inputs: usize,
    pub outputs: usize,
    /// Number of samples in the source dataset.
    pub samples: usize,
    pub warnings: Vec<String>,
}

/// Past/future Hankel matrices split at sample `depth`.
///
/// `width` defaults to the largest admissible value `T - 2d + 1`.
pub fn build_data_matrices(data: &Dataset, depth: usize, width: Option<usize>) -> Result<DataMatrices> {
    if depth == 0 {
        return Err(Error::InvalidParameter("Hankel depth must be at least 1".into()));
    }
    let t = data.len();
    let width = match width {
        Some(l) => l,
        None if t >= 2 * depth => t - 2 * depth + 1,
        None => {
            return Err(Error::InsufficientData {
                required: 2 * depth,
                available: t,
                rule: format!(" (T >= 2d with d={depth})"),
            })
        }
    };
    if width == 0 {
        return Err(Error::InvalidParameter("Hankel width must be at least 1".into()));
    }
    let required = 2 * depth + width - 1;
    if t < required {
        return Err(Error::InsufficientData {
            required,
            available: t,
            rule: format!(" (T >= 2d+L-1 with d={depth}, L={width})"),
        });
    }
    let (p, q) = (data.inputs(), data.outputs());
    let mut warnings = Vec::new();
    let guidance = 3 * q * depth;
    if width < guidance {
        warnings.push(format!(
            "Hankel width L={width} is below the recommended 3·q·d = {guidance}"
        ));
    }
    let up = block_hankel(&data.u, 0, depth, width)?;
    let yp = block_hankel(&data.y, 0, depth, width)?;
    let uf = block_hankel(&data.u, depth, depth, width)?;
    let yf = block_hankel(&data.y, depth, depth, width)?;
    let phi = vstack(&[&up, &yp, &uf]);
    Ok(DataMatrices {
        up,
        yp,
        uf,
        yf,
        phi,
        depth,
        width,
        inputs: p,
        outputs: q,
        samples: t,
        warnings,
    })
}

/// How the Toeplitz structure is imposed on the least-squares estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Extraction {
    /// Average each block sub-diagonal.
    #[default]
    Average,
    /// Read the Markov parameters off the first block column only.
    FirstColumn,
}

#[derive(Debug, Clone, Copy)]
pub struct PredictorOptions {
    pub extraction: Extraction,
    pub pinv_tol: f64,
    pub rank_tol: f64,
}

impl Default for PredictorOptions {
    fn default() -> Self {
        Self {
            extraction: Extraction::Average,
            pinv_tol: DEFAULT_PINV_TOL,
            rank_tol: RANK_TOL,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarkovEstimate {
    /// Least-squares predictor, `qd × (2p+q)d`.
    pub w: Matrix,
    /// Rightmost `pd` columns of `w`, before structure is imposed.
    pub raw_s: Matrix,
    /// Strictly-lower block-Toeplitz `qd × pd`.
    pub s: Matrix,
    /// `M⁽¹⁾ … M⁽ᵈ⁻¹⁾`, each `q × p`.
    pub blocks: Vec<Matrix>,
    pub depth: usize,
    pub inputs: usize,
    pub outputs: usize,
    pub phi_rank: usize,
    pub past_rank: usize,
}

impl MarkovEstimate {
    /// Stacked `[M⁽¹⁾; …; M⁽ᴺ⁾]`, `qN × p`. Needs `N <= d - 1`.
    pub fn stacked(&self, n: usize) -> Result<Matrix> {
        if n == 0 || n > self.blocks.len() {
            return Err(Error::InvalidParameter(format!(
                "requested {n} Markov parameters, estimate holds {}",
                self.blocks.len()
            )));
        }
        Ok(stack_blocks(&self.blocks[..n]))
    }

    /// Order-`N` strictly-lower Toeplitz matrix, `qN × pN`. Needs `N <= d`.
    pub fn toeplitz(&self, n: usize) -> Result<Matrix> {
        if n == 0 || n > self.depth {
            return Err(Error::InvalidParameter(format!(
                "requested Toeplitz order {n}, estimate depth is {}",
                self.depth
            )));
        }
        block_toeplitz_strict_lower(&BlockToeplitzSpec::new(
            self.blocks[..n - 1].to_vec(),
            n,
            (self.outputs, self.inputs),
        ))
    }

    /// Largest deviation of the raw estimate from block-Toeplitz shift
    /// structure, `max |S(i,j) - S(i+1,j+1)|` over blocks below the diagonal.
    pub fn shift_defect(&self) -> f64 {
        let (q, p, d) = (self.outputs, self.inputs, self.depth);
        let mut worst: f64 = 0.0;
        for i in 1..d.saturating_sub(1) {
            for j in 0..i {
                let a = self.raw_s.view((i * q, j * p), (q, p));
                let b = self.raw_s.view(((i + 1) * q, (j + 1) * p), (q, p));
                worst = worst.max((a - b).amax());
            }
        }
        worst
    }
}

/// Least-squares predictor `W = Y_f Φ†` and the Toeplitz matrix it contains.
pub fn estimate_predictor(dm: &DataMatrices, opts: &PredictorOptions) -> Result<MarkovEstimate> {
    let (p, q, d) = (dm.inputs, dm.outputs, dm.depth);
    let rows = dm.phi.nrows();
    if dm.width < rows {
        return Err(Error::InsufficientData {
            required: rows + 2 * d - 1,
            available: dm.samples,
            rule: format!(" (width L={} must be at least (2p+q)d = {rows}, so T >= {rows} + 2d - 1)", dm.width),
        });
    }
    let pinv = pseudo_inverse(&dm.phi, opts.pinv_tol);
    let phi_rank = {
        let s = &pinv.singular_values;
        let smax = s.iter().copied().fold(0.0, f64::max);
        s.iter().filter(|&&v| smax > 0.0 && v >= opts.rank_tol * smax).count()
    };
    let past = vstack(&[&dm.up, &dm.yp]);
    let past_rank = numerical_rank(&past, opts.rank_tol);
    let future_rank = phi_rank.saturating_sub(past_rank);
    if future_rank != p * d {
        return Err(Error::InsufficientExcitation {
            what: "future input block U_f (rank of Φ beyond [U_p; Y_p])".into(),
            rank: future_rank,
            required: p * d,
        });
    }
    let w = &dm.yf * &pinv.matrix;
    let raw_s = w.columns((p + q) * d, p * d).into_owned();
    let blocks = extract_blocks(&raw_s, d, q, p, opts.extraction);
    let s = block_toeplitz_strict_lower(&BlockToeplitzSpec::new(blocks.clone(), d, (q, p)))?;
    Ok(MarkovEstimate {
        w,
        raw_s,
        s,
        blocks,
        depth: d,
        inputs: p,
        outputs: q,
        phi_rank,
        past_rank,
    })
}

fn extract_blocks(raw: &Matrix, d: usize, q: usize, p: usize, how: Extraction) -> Vec<Matrix> {
    (1..d)
        .map(|k| match how {
            Extraction::FirstColumn => raw.view((k * q, 0), (q, p)).into_owned(),
            Extraction::Average => {
                let mut acc = Matrix::zeros(q, p);
                for j in 0..d - k {
                    acc += raw.view(((j + k) * q, j * p), (q, p));
                }
                acc / (d - k) as f64
            }
        })
        .collect()
}

/// `M⁽ⁱ⁾ = C A^(i-1) B` for `i = 1..=count`.
pub fn true_markov(model: &StateSpaceModel, count: usize) -> Vec<Matrix> {
    let mut out = Vec::with_capacity(count);
    let mut ab = model.b.clone();
    for _ in 0..count {
        out.push(&model.c * &ab);
        ab = &model.a * ab;
    }
    out
}

/// Vertical stack of equally shaped blocks.
pub fn stack_blocks(blocks: &[Matrix]) -> Matrix {
    let refs: Vec<&Matrix> = blocks.iter().collect();
    vstack(&refs)
}

/// Order-`n` Toeplitz matrix built from the model's Markov parameters.
pub fn model_toeplitz(model: &StateSpaceModel, n: usize) -> Result<Matrix> {
    block_toeplitz_strict_lower(&BlockToeplitzSpec::new(
        true_markov(model, n.saturating_sub(1)),
        n,
        (model.outputs(), model.inputs()),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Vector;
    use crate::sim::{generate_signal, simulate, Noise, SignalSpec};

    fn scalar() -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_element(1, 1, 0.14),
            Matrix::from_element(1, 1, 1.72),
            Matrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    fn example_a() -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.15, -0.2, 0.6]),
            Matrix::from_row_slice(2, 2, &[0.04, 0.01, 0.02, -0.01]),
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
        )
        .unwrap()
    }

    fn prbs_data(model: &StateSpaceModel, len: usize, seed: u64) -> Dataset {
        let u = generate_signal(&SignalSpec::prbs(len, model.inputs(), 1.0, seed)).unwrap();
        simulate(model, &u, &Vector::zeros(model.states()), Noise::none()).unwrap()
    }

    #[test]
    fn data_matrices_readoff() {
        let d = Dataset::new(
            Matrix::from_column_slice(3, 1, &[1., 2., 3.]),
            Matrix::from_column_slice(3, 1, &[4., 5., 6.]),
            Matrix::zeros(3, 1),
            None,
        )
        .unwrap();
        let dm = build_data_matrices(&d, 1, Some(2)).unwrap();
        assert_eq!(dm.up, Matrix::from_row_slice(1, 2, &[1., 2.]));
        assert_eq!(dm.yp, Matrix::from_row_slice(1, 2, &[4., 5.]));
        assert_eq!(dm.uf, Matrix::from_row_slice(1, 2, &[2., 3.]));
        assert_eq!(dm.yf, Matrix::from_row_slice(1, 2, &[5., 6.]));
        assert_eq!(dm.phi.shape(), (3, 2));
    }

    #[test]
    fn data_matrices_shape_and_length_check() {
        let data = prbs_data(&example_a(), 1022, 1);
        let dm = build_data_matrices(&data, 51, Some(870)).unwrap();
        assert_eq!(dm.phi.shape(), (306, 870));
        let dm = build_data_matrices(&data, 51, None).unwrap();
        assert_eq!(dm.width, 1022 - 102 + 1);
        match build_data_matrices(&data, 51, Some(950)) {
            Err(Error::InsufficientData { required, available, .. }) => {
                assert_eq!((required, available), (1051, 1022))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_dataset_gives_zero_matrices() {
        let d = Dataset::new(Matrix::zeros(20, 1), Matrix::zeros(20, 1), Matrix::zeros(20, 1), None).unwrap();
        let dm = build_data_matrices(&d, 3, None).unwrap();
        assert_eq!(dm.phi.amax() + dm.yf.amax(), 0.0);
        assert!(matches!(
            estimate_predictor(&dm, &PredictorOptions::default()),
            Err(Error::InsufficientExcitation { .. })
        ));
    }

    #[test]
    fn true_markov_values() {
        let m = true_markov(&scalar(), 3);
        let expect = [1.72, 0.2408, 0.033712];
        for (a, b) in m.iter().zip(expect) {
            assert!((a[(0, 0)] - b).abs() < 1e-15);
        }
        let m = true_markov(&example_a(), 2);
        let cab = Matrix::from_row_slice(2, 2, &[0.051, -0.0075, 0.004, -0.008]);
        assert!((&m[1] - cab).amax() < 1e-15);
    }

    #[test]
    fn scalar_markov_recovered_noise_free() {
        let data = prbs_data(&scalar(), 1022, 5);
        let dm = build_data_matrices(&data, 3, None).unwrap();
        let est = estimate_predictor(&dm, &PredictorOptions::default()).unwrap();
        assert!((est.blocks[0][(0, 0)] - 1.72).abs() < 1e-8);
        assert!((est.blocks[1][(0, 0)] - 0.2408).abs() < 1e-8);
    }

    #[test]
    fn mimo_markov_recovered_noise_free() {
        let model = example_a();
        let data = prbs_data(&model, 1022, 2);
        let dm = build_data_matrices(&data, 11, None).unwrap();
        let est = estimate_predictor(&dm, &PredictorOptions::default()).unwrap();
        let truth = true_markov(&model, 10);
        for (e, t) in est.blocks.iter().zip(&truth) {
            assert!((e - t).amax() < 1e-8);
        }
        assert_eq!(est.phi_rank, 4 * 11 + 2);
        assert!(est.shift_defect() < 1e-8);
    }

    #[test]
    fn pure_delay_truncates() {
        let model = StateSpaceModel::new(
            Matrix::zeros(2, 2),
            Matrix::from_row_slice(2, 1, &[1.0, 0.5]),
            Matrix::from_row_slice(1, 2, &[2.0, -1.0]),
        )
        .unwrap();
        let data = prbs_data(&model, 400, 3);
        let dm = build_data_matrices(&data, 4, None).unwrap();
        let est = estimate_predictor(&dm, &PredictorOptions::default()).unwrap();
        assert!((est.blocks[0][(0, 0)] - 1.5).abs() < 1e-10);
        for b in &est.blocks[1..] {
            assert!(b.amax() < 1e-10);
        }
    }

    #[test]
    fn stacked_and_toeplitz_views() {
        let model = example_a();
        let data = prbs_data(&model, 600, 8);
        let est = estimate_predictor(&build_data_matrices(&data, 6, None).unwrap(), &PredictorOptions::default())
            .unwrap();
        let m = est.stacked(5).unwrap();
        let s = est.toeplitz(5).unwrap();
        assert_eq!(m.shape(), (10, 2));
        assert_eq!(s.shape(), (10, 10));
        // first block column of S is M shifted down by one block
        assert!((s.view((2, 0), (8, 2)) - m.view((0, 0), (8, 2))).amax() < 1e-15);
        assert!((s.clone() - model_toeplitz(&model, 5).unwrap()).amax() < 1e-8);
        assert!(est.stacked(6).is_err());
        assert_eq!(est.toeplitz(6).unwrap(), est.s);
    }

    #[test]
    fn first_column_extraction_matches_noise_free() {
        let model = example_a();
        let data = prbs_data(&model, 800, 4);
        let dm = build_data_matrices(&data, 8, None).unwrap();
        let opts = PredictorOptions {
            extraction: Extraction::FirstColumn,
            ..Default::default()
        };
        let a = estimate_predictor(&dm, &opts).unwrap();
        let b = estimate_predictor(&dm, &PredictorOptions::default()).unwrap();
        assert!((a.s - b.s).amax() < 1e-9);
    }

    #[test]
    fn narrow_width_is_rejected() {
        let data = prbs_data(&example_a(), 200, 4);
        let dm = build_data_matrices(&data, 10, Some(50)).unwrap();
        assert!(!dm.warnings.is_empty());
        assert!(matches!(
            estimate_predictor(&dm, &PredictorOptions::default()),
            Err(Error::InsufficientData { .. })
        ));
    }
}
