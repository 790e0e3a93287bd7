//! Data-driven linear quadratic regulator design.
//!
//! The optimal state-feedback gain of an unknown linear time-invariant plant
//! is computed from a single open-loop experiment. Markov parameters are
//! estimated from block-Hankel data matrices, the shifted extended
//! observability matrix is estimated from recorded states, and both are fed
//! to a closed-form batch LQR formula. Internal-model augmentation extends
//! the same design to reference tracking.
//!
//! ```
//! use ddlqr::{design_gain, run_simulation, LqrWeights, Matrix, PipelineConfig, SignalSpec,
//!             SimulationSpec, StateSpaceModel};
//!
//! let model = StateSpaceModel::new(
//!     Matrix::from_row_slice(2, 2, &[1.0, 0.15, -0.2, 0.6]),
//!     Matrix::from_row_slice(2, 2, &[0.04, 0.01, 0.02, -0.01]),
//!     Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
//! )?;
//! let data = run_simulation(&model, &SimulationSpec::noise_free(SignalSpec::prbs(1022, 2, 1.0, 1)))?;
//! let weights = LqrWeights::scaled_identity(2, 20.0, 2, 0.2)?;
//! let report = design_gain(&data, &PipelineConfig::new(51, weights))?;
//! assert!((report.design.k[(0, 0)] - 4.6491).abs() < 1e-3);
//! # Ok::<(), ddlqr::Error>(())
//! ```

pub mod error;
pub mod experiments;
pub mod imc;
pub mod lqr;
pub mod markov;
pub mod matrix;
pub mod observability;
pub mod sim;

pub use error::{Error, Result};
pub use experiments::{
    convergence_sweep, design_gain, evaluate_closed_loop, harmonic_magnitude, monte_carlo_obs, run_simulation, thd,
    ClosedLoopMetrics, DesignReport, MonteCarloConfig, MonteCarloPair, MonteCarloReport, PipelineConfig, Scenario,
    SimulationSpec, SweepPoint, SweepReport,
};
pub use imc::{augment_dataset, augment_model, filter_imc_states, integrator_imc, resonant_imc, ImcRealization};
pub use lqr::{
    dare_residual, dare_solve, dd_lqr_gain, dd_lqr_gain_with, dd_lqr_p, model_lqr_gain, oracle_gain, DareOptions,
    DareSolution, GammaForm, LqrDesign, LqrWeights, DEADBEAT_RIDGE,
};
pub use markov::{
    build_data_matrices, estimate_predictor, model_toeplitz, true_markov, DataMatrices, Extraction, MarkovEstimate,
    PredictorOptions,
};
pub use matrix::{Matrix, Vector};
pub use observability::{
    estimate_obs_alg1, estimate_obs_alg2, model_observability, ObservabilityEstimate, ObservabilityMethod,
};
pub use sim::{
    closed_loop_simulate, cost_j, generate_signal, simulate, tracking_loop_simulate, zoh_discretize, Dataset, Noise,
    SignalKind, SignalSpec, StateSpaceModel, UpsSurrogate,
};
