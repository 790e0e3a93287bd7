//! Internal-model controllers and state augmentation for reference tracking.
//!
//! One copy of the controller runs per plant output. Open-loop IMC states
//! are obtained by filtering the measured outputs through `-C`, which lets
//! the same data-driven design compute a tracking gain from open-loop data.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::matrix::{hstack, Matrix, Vector};
use crate::sim::{shape, Dataset, StateSpaceModel};

/// Discrete realization `x_c(k+1) = A_c x_c(k) + B_c e(k)` with scalar input.
#[derive(Debug, Clone, PartialEq)]
pub struct ImcRealization {
    pub a_c: Matrix,
    pub b_c: Matrix,
}

impl ImcRealization {
    pub fn new(a_c: Matrix, b_c: Matrix) -> Result<Self> {
        if !a_c.is_square() || a_c.nrows() == 0 {
            return Err(Error::dim("IMC A_c", "nonempty square", shape(&a_c)));
        }
        if b_c.shape() != (a_c.nrows(), 1) {
            return Err(Error::dim("IMC B_c", format!("{}x1", a_c.nrows()), shape(&b_c)));
        }
        Ok(Self { a_c, b_c })
    }

    /// States per output channel.
    pub fn order(&self) -> usize {
        self.a_c.nrows()
    }

    /// One step of the per-channel bank: `err` holds one entry per channel.
    pub fn step(&self, state: &Vector, err: &Vector) -> Vector {
        let nc = self.order();
        let mut next = Vector::zeros(state.len());
        for (j, e) in err.iter().enumerate() {
            let xc = state.rows(j * nc, nc);
            let upd = &self.a_c * xc + &self.b_c * *e;
            next.rows_mut(j * nc, nc).copy_from(&upd);
        }
        next
    }
}

/// Integrator `1/(z-1)`.
pub fn integrator_imc() -> ImcRealization {
    ImcRealization {
        a_c: Matrix::from_element(1, 1, 1.0),
        b_c: Matrix::from_element(1, 1, 1.0),
    }
}

/// Resonator with poles at `exp(±j ω_n Ts)`.
pub fn resonant_imc(omega_n: f64, ts: f64) -> Result<ImcRealization> {
    let theta = omega_n * ts;
    if !(theta > 0.0 && theta < PI) {
        return Err(Error::InvalidParameter(format!(
            "resonant frequency must satisfy 0 < omega_n*Ts < pi (got {theta})"
        )));
    }
    Ok(ImcRealization {
        a_c: Matrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 2.0 * theta.cos()]),
        b_c: Matrix::from_row_slice(2, 1, &[0.0, 1.0]),
    })
}

/// Open-loop IMC states from a `T × q` output series, zero initial state.
///
/// Channel `j` occupies columns `j·n_c .. (j+1)·n_c` and is driven by `-y_j`.
pub fn filter_imc_states(y: &Matrix, imc: &ImcRealization) -> Matrix {
    let (t, q) = y.shape();
    let nc = imc.order();
    let mut out = Matrix::zeros(t, nc * q);
    let mut state = Vector::zeros(nc * q);
    for k in 0..t {
        out.set_row(k, &state.transpose());
        let err = -y.row(k).transpose();
        state = imc.step(&state, &err);
    }
    out
}

/// `y_a = [y, x_imc]`, `x_a = [x, x_imc]`, `u` unchanged.
pub fn augment_dataset(data: &Dataset, imc: &ImcRealization) -> Result<Dataset> {
    let xi = filter_imc_states(&data.y, imc);
    Dataset::new(
        data.u.clone(),
        hstack(&[&data.y, &xi]),
        hstack(&[&data.x, &xi]),
        data.sample_time,
    )
}

fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    a.kronecker(b)
}

/// Augmented open-loop model
/// `A_a = [[A, 0], [-C⊗B_c, I_q⊗A_c]]`, `B_a = [B; 0]`, `C_a = diag(C, I)`.
///
/// Measurement noise also reaches the IMC bank, so when `F` is present the
/// augmented process noise is `[v; w]` with `E_a = [[E, 0], [0, -(I⊗B_c) F]]`.
pub fn augment_model(model: &StateSpaceModel, imc: &ImcRealization) -> Result<StateSpaceModel> {
    model.validate()?;
    let (n, p, q) = (model.states(), model.inputs(), model.outputs());
    let nc = imc.order();
    let ni = nc * q;
    let iq = Matrix::identity(q, q);

    let mut a = Matrix::zeros(n + ni, n + ni);
    a.view_mut((0, 0), (n, n)).copy_from(&model.a);
    a.view_mut((n, 0), (ni, n)).copy_from(&(-kron(&model.c, &imc.b_c)));
    a.view_mut((n, n), (ni, ni)).copy_from(&kron(&iq, &imc.a_c));

    let mut b = Matrix::zeros(n + ni, p);
    b.view_mut((0, 0), (n, p)).copy_from(&model.b);

    let mut c = Matrix::zeros(q + ni, n + ni);
    c.view_mut((0, 0), (q, n)).copy_from(&model.c);
    c.view_mut((q, n), (ni, ni)).fill_with_identity();

    let bank_in = kron(&iq, &imc.b_c);
    let (e, f) = match (&model.e, &model.f) {
        (None, None) => (None, None),
        (Some(e), None) => {
            let mut ea = Matrix::zeros(n + ni, e.ncols());
            ea.view_mut((0, 0), e.shape()).copy_from(e);
            (Some(ea), None)
        }
        (e, Some(f)) => {
            let nv = e.as_ref().map_or(0, |e| e.ncols());
            let nw = f.ncols();
            let mut ea = Matrix::zeros(n + ni, nv + nw);
            if let Some(e) = e {
                ea.view_mut((0, 0), e.shape()).copy_from(e);
            }
            ea.view_mut((n, nv), (ni, nw)).copy_from(&(-(&bank_in * f)));
            let mut fa = Matrix::zeros(q + ni, nv + nw);
            fa.view_mut((0, nv), (q, nw)).copy_from(f);
            (Some(ea), Some(fa))
        }
    };

    let mut out = StateSpaceModel::new(a, b, c)?.with_noise(e, f)?;
    out.sample_time = model.sample_time;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_signal, simulate, Noise, SignalSpec};

    fn example_a() -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.15, -0.2, 0.6]),
            Matrix::from_row_slice(2, 2, &[0.04, 0.01, 0.02, -0.01]),
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
        )
        .unwrap()
    }

    #[test]
    fn integrator_realization() {
        let imc = integrator_imc();
        assert_eq!(imc.a_c[(0, 0)], 1.0);
        assert_eq!(imc.b_c[(0, 0)], 1.0);
    }

    #[test]
    fn integrator_filters_to_ramp() {
        let y = Matrix::from_element(6, 1, 1.0);
        let xi = filter_imc_states(&y, &integrator_imc());
        for k in 0..6 {
            assert_eq!(xi[(k, 0)], -(k as f64));
        }
        assert_eq!(filter_imc_states(&Matrix::zeros(6, 2), &integrator_imc()).amax(), 0.0);
    }

    #[test]
    fn resonant_coefficients() {
        let imc = resonant_imc(120.0 * PI, 1.0 / 15000.0).unwrap();
        assert!((imc.a_c[(1, 1)] - 2.0 * (0.008 * PI).cos()).abs() < 1e-15);
        assert!((imc.a_c[(1, 1)] - 1.999368).abs() < 1e-6);
        let quarter = resonant_imc(PI / 2.0, 1.0).unwrap();
        assert!(quarter.a_c[(1, 1)].abs() < 1e-15);
        assert!(resonant_imc(PI, 1.0).is_err());
        assert!(resonant_imc(0.0, 1.0).is_err());
    }

    #[test]
    fn resonant_poles_on_unit_circle() {
        let theta: f64 = 0.7;
        let imc = resonant_imc(theta, 1.0).unwrap();
        for z in imc.a_c.complex_eigenvalues().iter() {
            assert!((z.norm() - 1.0).abs() < 1e-12);
            assert!((z.im.abs() - theta.sin()).abs() < 1e-12);
            assert!((z.re - theta.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn augmented_model_structure() {
        let m = example_a();
        let a = augment_model(&m, &integrator_imc()).unwrap();
        assert_eq!(a.a.shape(), (4, 4));
        assert_eq!(a.a.view((2, 0), (2, 2)).into_owned(), -&m.c);
        assert_eq!(a.a.view((2, 2), (2, 2)).into_owned(), Matrix::identity(2, 2));
        assert_eq!(a.a.view((0, 2), (2, 2)).amax(), 0.0);
        assert_eq!(a.c.shape(), (4, 4));

        let s = StateSpaceModel::new(
            Matrix::from_element(1, 1, 0.5),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 3.0),
        )
        .unwrap();
        let sa = augment_model(&s, &integrator_imc()).unwrap();
        assert_eq!(sa.a, Matrix::from_row_slice(2, 2, &[0.5, 0.0, -3.0, 1.0]));
    }

    #[test]
    fn augmented_spectrum_is_union() {
        let m = example_a();
        let imc = resonant_imc(0.4, 1.0).unwrap();
        let a = augment_model(&m, &imc).unwrap();
        let mut got: Vec<f64> = a.a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        let mut want: Vec<f64> = m.a.complex_eigenvalues().iter().map(|z| z.norm()).collect();
        want.extend([1.0; 4]);
        got.sort_by(f64::total_cmp);
        want.sort_by(f64::total_cmp);
        for (g, w) in got.iter().zip(&want) {
            assert!((g - w).abs() < 1e-6, "{got:?} vs {want:?}");
        }
    }

    #[test]
    fn dataset_and_model_augmentation_agree() {
        let m = example_a();
        let imc = resonant_imc(0.3, 1.0).unwrap();
        let u = generate_signal(&SignalSpec::prbs(200, 2, 1.0, 4)).unwrap();
        let d = simulate(&m, &u, &Vector::zeros(2), Noise::none()).unwrap();
        let da = augment_dataset(&d, &imc).unwrap();
        let ma = augment_model(&m, &imc).unwrap();
        let sim = simulate(&ma, &u, &Vector::zeros(6), Noise::none()).unwrap();
        assert_eq!(da.y.shape(), (200, 6));
        assert_eq!(da.x.shape(), (200, 6));
        let scale = sim.x.amax().max(1.0);
        assert!((&da.x - &sim.x).amax() / scale < 1e-10);
        assert!((&da.y - &sim.y).amax() / scale < 1e-10);
    }

    #[test]
    fn augmentation_with_measurement_noise_agrees() {
        let m = example_a()
            .with_noise(Some(Matrix::identity(2, 2)), Some(Matrix::identity(2, 2) * 0.5))
            .unwrap();
        let imc = integrator_imc();
        let u = generate_signal(&SignalSpec::prbs(100, 2, 1.0, 5)).unwrap();
        let v = generate_signal(&SignalSpec::white_noise(100, 2, 0.01, 6)).unwrap();
        let w = generate_signal(&SignalSpec::white_noise(100, 2, 0.01, 7)).unwrap();
        let d = simulate(&m, &u, &Vector::zeros(2), Noise { process: Some(&v), measurement: Some(&w) }).unwrap();
        let da = augment_dataset(&d, &imc).unwrap();
        let ma = augment_model(&m, &imc).unwrap();
        let vw = hstack(&[&v, &w]);
        let sim = simulate(&ma, &u, &Vector::zeros(4), Noise { process: Some(&vw), measurement: Some(&vw) }).unwrap();
        assert!((&da.x - &sim.x).amax() < 1e-10);
        assert!((&da.y - &sim.y).amax() < 1e-10);
    }

    #[test]
    fn augmented_dataset_dimensions() {
        let m = example_a();
        let d = simulate(&m, &Matrix::zeros(10, 2), &Vector::zeros(2), Noise::none()).unwrap();
        let da = augment_dataset(&d, &integrator_imc()).unwrap();
        assert_eq!((da.outputs(), da.states()), (4, 4));
        assert_eq!(da.x.amax() + da.y.amax(), 0.0);
    }
}
