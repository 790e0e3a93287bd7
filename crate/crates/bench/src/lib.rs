//! Shared fixtures for the criterion benchmarks.

use ddlqr::{run_simulation, Dataset, LqrWeights, Matrix, SignalSpec, SimulationSpec, StateSpaceModel};

/// Two-state, two-input, two-output plant used throughout the benches.
pub fn two_state_plant() -> StateSpaceModel {
    StateSpaceModel::new(
        Matrix::from_row_slice(2, 2, &[1.0, 0.15, -0.2, 0.6]),
        Matrix::from_row_slice(2, 2, &[0.04, 0.01, 0.02, -0.01]),
        Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
    )
    .expect("valid plant")
}

/// Noise-free PRBS response of [`two_state_plant`].
pub fn two_state_data(length: usize) -> Dataset {
    run_simulation(
        &two_state_plant(),
        &SimulationSpec::noise_free(SignalSpec::prbs(length, 2, 1.0, 2024)),
    )
    .expect("simulation succeeds")
}

pub fn two_state_weights() -> LqrWeights {
    LqrWeights::scaled_identity(2, 20.0, 2, 0.2).expect("valid weights")
}

/// Scalar plant with unit process-noise input.
pub fn scalar_noisy_plant() -> StateSpaceModel {
    StateSpaceModel::new(
        Matrix::from_element(1, 1, 0.14),
        Matrix::from_element(1, 1, 1.72),
        Matrix::from_element(1, 1, 1.0),
    )
    .and_then(|m| m.with_noise(Some(Matrix::from_element(1, 1, 1.0)), None))
    .expect("valid plant")
}
