//! End-to-end studies: the data-driven design pipeline, gain convergence
//! sweeps, Monte Carlo statistics of the observability estimators, and
//! closed-loop metrics.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::error::{Error, Result, StageExt};
use crate::imc::{augment_dataset, augment_model, ImcRealization};
use crate::lqr::{dd_lqr_gain_with, oracle_gain, GammaForm, LqrDesign, LqrWeights};
use crate::markov::{build_data_matrices, estimate_predictor, Extraction, MarkovEstimate, PredictorOptions};
use crate::matrix::{inf_norm, spectral_radius, symmetric_eigenvalues, Matrix, Vector};
use crate::observability::{
    estimate_obs_alg1, estimate_obs_alg2, model_observability, state_snapshot, ObservabilityEstimate,
    ObservabilityMethod,
};
use crate::sim::{
    closed_loop_simulate, cost_j, generate_signal, mix_seed, shape, simulate, tracking_loop_simulate, Dataset,
    Noise, SignalKind, SignalSpec, StateSpaceModel,
};

// ---------------------------------------------------------------------------
// Data generation
// ---------------------------------------------------------------------------

/// Open-loop experiment on a known model.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub input: SignalSpec,
    /// Defaults to the zero state.
    pub x0: Option<Vector>,
    /// Variance of each process-noise channel (requires `E` when nonzero).
    pub process_noise_variance: f64,
    /// Variance of each measurement-noise channel (requires `F` when nonzero).
    pub measurement_noise_variance: f64,
    /// Seed for both noise series; the input has its own seed.
    pub noise_seed: u64,
}

impl SimulationSpec {
    pub fn noise_free(input: SignalSpec) -> Self {
        Self {
            input,
            x0: None,
            process_noise_variance: 0.0,
            measurement_noise_variance: 0.0,
            noise_seed: 0,
        }
    }
}

pub fn run_simulation(model: &StateSpaceModel, spec: &SimulationSpec) -> Result<Dataset> {
    if spec.input.channels != model.inputs() {
        return Err(Error::dim("input signal channels", model.inputs(), spec.input.channels));
    }
    let u = generate_signal(&spec.input)?;
    let t = u.nrows();
    let x0 = spec.x0.clone().unwrap_or_else(|| Vector::zeros(model.states()));
    let process = noise_series(model.e.as_ref(), "E", spec.process_noise_variance, t, spec.noise_seed)?;
    let measurement = noise_series(
        model.f.as_ref(),
        "F",
        spec.measurement_noise_variance,
        t,
        mix_seed(spec.noise_seed, 2),
    )?;
    simulate(
        model,
        &u,
        &x0,
        Noise {
            process: process.as_ref(),
            measurement: measurement.as_ref(),
        },
    )
}

fn noise_series(gain: Option<&Matrix>, name: &str, variance: f64, len: usize, seed: u64) -> Result<Option<Matrix>> {
    if variance == 0.0 {
        return Ok(None);
    }
    let channels = gain
        .ok_or_else(|| Error::InvalidParameter(format!("noise variance {variance} given but the model has no {name} matrix")))?
        .ncols();
    generate_signal(&SignalSpec::white_noise(len, channels, variance, seed)).map(Some)
}

// ---------------------------------------------------------------------------
// Design pipeline
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    /// Hankel depth `d`.
    pub depth: usize,
    /// Hankel width `L`; defaults to `T - 2d + 1`.
    pub width: Option<usize>,
    pub weights: LqrWeights,
    /// Number of Markov parameters `N` in the gain formula; defaults to `d - 1`.
    pub gain_depth: Option<usize>,
    pub method: ObservabilityMethod,
    /// When set, the dataset is augmented with open-loop IMC states first.
    pub imc: Option<ImcRealization>,
    pub extraction: Extraction,
    pub gamma_form: GammaForm,
}

impl PipelineConfig {
    pub fn new(depth: usize, weights: LqrWeights) -> Self {
        Self {
            depth,
            width: None,
            weights,
            gain_depth: None,
            method: ObservabilityMethod::ToeplitzCorrected,
            imc: None,
            extraction: Extraction::Average,
            gamma_form: GammaForm::InversionLemma,
        }
    }

    pub fn resolved_gain_depth(&self) -> usize {
        self.gain_depth.unwrap_or(self.depth.saturating_sub(1))
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth < 2 {
            return Err(Error::InvalidParameter(format!(
                "Hankel depth d must be at least 2, got {}",
                self.depth
            )));
        }
        let n = self.resolved_gain_depth();
        if n == 0 || self.depth < n + 1 {
            return Err(Error::InvalidParameter(format!(
                "gain depth N={n} needs 1 <= N <= d-1 (d={})",
                self.depth
            )));
        }
        Ok(())
    }
}

/// Gain plus every intermediate estimate of the pipeline.
#[derive(Debug, Clone)]
pub struct DesignReport {
    pub design: LqrDesign,
    pub markov: MarkovEstimate,
    pub observability: ObservabilityEstimate,
    pub depth: usize,
    pub width: usize,
    pub gain_depth: usize,
    pub warnings: Vec<String>,
}

/// Data-driven LQR design from one open-loop dataset with recorded states.
pub fn design_gain(data: &Dataset, config: &PipelineConfig) -> Result<DesignReport> {
    config.validate().stage("configuration")?;
    let augmented;
    let data = match &config.imc {
        Some(imc) => {
            augmented = augment_dataset(data, imc).stage("imc augmentation")?;
            &augmented
        }
        None => data,
    };
    let w = &config.weights;
    if w.outputs() != data.outputs() {
        return Err(Error::dim("output weight Q", data.outputs(), shape(w.q()))).stage("configuration");
    }
    if w.inputs() != data.inputs() {
        return Err(Error::dim("input weight R", data.inputs(), shape(w.r()))).stage("configuration");
    }
    let n = config.resolved_gain_depth();
    let q = data.outputs();

    let dm = build_data_matrices(data, config.depth, config.width).stage("data matrices")?;
    let opts = PredictorOptions {
        extraction: config.extraction,
        ..PredictorOptions::default()
    };
    let markov = estimate_predictor(&dm, &opts).stage("markov estimation")?;
    let x = state_snapshot(data, dm.width).stage("observability estimation")?;
    let observability = match config.method {
        ObservabilityMethod::ToeplitzCorrected => estimate_obs_alg1(&dm.yp, &dm.up, &markov.s, &x, q),
        ObservabilityMethod::Projection => estimate_obs_alg2(&dm.yp, &dm.up, &x, q),
    }
    .stage("observability estimation")?;

    let design = (|| {
        let m = markov.stacked(n)?;
        let s = markov.toeplitz(n)?;
        let o_plus = observability.o_plus_blocks(n)?;
        dd_lqr_gain_with(&m, &s, &o_plus, w, n, config.gamma_form)
    })()
    .stage("gain synthesis")?;

    Ok(DesignReport {
        design,
        markov,
        observability,
        depth: dm.depth,
        width: dm.width,
        gain_depth: n,
        warnings: dm.warnings,
    })
}

// ---------------------------------------------------------------------------
// Convergence sweep
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub gain_depth: usize,
    pub depth: usize,
    pub gain: Matrix,
    /// `‖K_N - K*‖∞`.
    pub error: f64,
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub oracle: Matrix,
    pub points: Vec<SweepPoint>,
}

/// One design per gain depth `N` (with `d = N + 1`), compared against the
/// Riccati oracle of the true (possibly augmented) model.
pub fn convergence_sweep(
    model: &StateSpaceModel,
    data: &Dataset,
    base: &PipelineConfig,
    gain_depths: &[usize],
) -> Result<SweepReport> {
    let oracle_model = match &base.imc {
        Some(imc) => augment_model(model, imc).stage("imc augmentation")?,
        None => model.clone(),
    };
    let (oracle, _) = oracle_gain(&oracle_model, &base.weights).stage("riccati oracle")?;
    let mut points = Vec::with_capacity(gain_depths.len());
    for &n in gain_depths {
        let config = PipelineConfig {
            depth: n + 1,
            width: None,
            gain_depth: Some(n),
            ..base.clone()
        };
        let report = design_gain(data, &config)?;
        let error = inf_norm(&(&report.design.k - &oracle));
        points.push(SweepPoint {
            gain_depth: n,
            depth: n + 1,
            gain: report.design.k,
            error,
        });
    }
    Ok(SweepReport { oracle, points })
}

// ---------------------------------------------------------------------------
// Monte Carlo study of the observability estimators
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloConfig {
    /// Plant with process-noise matrix `E` and optionally `F`.
    pub model: StateSpaceModel,
    pub length: usize,
    pub depth: usize,
    pub width: Option<usize>,
    pub prbs_amplitude: f64,
    pub prbs_order: u32,
    pub noise_variance: f64,
    /// Variance of measurement noise, used only when the model has `F`.
    pub measurement_noise_variance: f64,
    pub runs: usize,
    pub base_seed: u64,
    /// Reuse the input realisation of `base_seed` in every run.
    pub fixed_input: bool,
    pub extraction: Extraction,
}

#[derive(Debug, Clone)]
pub struct MonteCarloReport {
    pub method: ObservabilityMethod,
    /// Runs that contributed to the statistics.
    pub runs: usize,
    pub failures: usize,
    /// First failure message, if any.
    pub first_failure: Option<String>,
    /// Mean estimate of `O⁺`, same shape as `O⁺`.
    pub mean: Matrix,
    /// Population covariance of the column-major vectorised estimate.
    pub covariance: Matrix,
    pub covariance_eigenvalues: Vec<f64>,
    /// Mean estimate minus the true `O⁺`, vectorised.
    pub bias: Vector,
    /// `E[(Ô - O)(Ô - O)ᵀ]` against the true `O⁺`.
    pub mse: Matrix,
    pub mse_eigenvalues: Vec<f64>,
    /// Eigenvalues of the raw second moment `E[Ô Ôᵀ]`.
    pub second_moment_eigenvalues: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MonteCarloPair {
    pub truth: Matrix,
    pub alg1: MonteCarloReport,
    pub alg2: MonteCarloReport,
}

type RunOutcome = (std::result::Result<Matrix, String>, std::result::Result<Matrix, String>);

fn monte_carlo_run(cfg: &MonteCarloConfig, run: u64) -> RunOutcome {
    let seed = cfg.base_seed.wrapping_add(run);
    let input_seed = if cfg.fixed_input { cfg.base_seed } else { seed };
    let sim = SimulationSpec {
        input: SignalSpec {
            kind: SignalKind::Prbs {
                amplitude: cfg.prbs_amplitude,
                order: cfg.prbs_order,
            },
            length: cfg.length,
            channels: cfg.model.inputs(),
            seed: input_seed,
        },
        x0: None,
        process_noise_variance: if cfg.model.e.is_some() { cfg.noise_variance } else { 0.0 },
        measurement_noise_variance: if cfg.model.f.is_some() {
            cfg.measurement_noise_variance
        } else {
            0.0
        },
        noise_seed: seed,
    };
    let q = cfg.model.outputs();
    let prepared = (|| {
        let data = run_simulation(&cfg.model, &sim)?;
        let dm = build_data_matrices(&data, cfg.depth, cfg.width)?;
        let x = state_snapshot(&data, dm.width)?;
        Ok::<_, Error>((dm, x))
    })();
    let (dm, x) = match prepared {
        Ok(v) => v,
        Err(e) => return (Err(e.to_string()), Err(e.to_string())),
    };
    let opts = PredictorOptions {
        extraction: cfg.extraction,
        ..PredictorOptions::default()
    };
    let alg1 = estimate_predictor(&dm, &opts)
        .and_then(|m| estimate_obs_alg1(&dm.yp, &dm.up, &m.s, &x, q))
        .map(|o| o.o_plus)
        .map_err(|e| e.to_string());
    let alg2 = estimate_obs_alg2(&dm.yp, &dm.up, &x, q)
        .map(|o| o.o_plus)
        .map_err(|e| e.to_string());
    (alg1, alg2)
}

/// Sample statistics of estimates of `truth`, reduced in the given order.
fn summarize(
    method: ObservabilityMethod,
    truth: &Matrix,
    outcomes: &[&std::result::Result<Matrix, String>],
) -> Result<MonteCarloReport> {
    let dim = truth.len();
    let samples: Vec<Vector> = outcomes
        .iter()
        .filter_map(|r| r.as_ref().ok())
        .map(|m| Vector::from_column_slice(m.as_slice()))
        .collect();
    let failures = outcomes.len() - samples.len();
    let first_failure = outcomes.iter().find_map(|r| r.as_ref().err().cloned());
    if samples.len() < 2 {
        return Err(Error::InsufficientData {
            required: 2,
            available: samples.len(),
            rule: String::new(),
        })
        .stage(method.label());
    }
    let count = samples.len() as f64;
    let mut mean = Vector::zeros(dim);
    for s in &samples {
        mean += s;
    }
    mean /= count;
    let t = Vector::from_column_slice(truth.as_slice());
    let mut covariance = Matrix::zeros(dim, dim);
    let mut mse = Matrix::zeros(dim, dim);
    let mut second = Matrix::zeros(dim, dim);
    for s in &samples {
        let c = s - &mean;
        covariance += &c * c.transpose();
        let e = s - &t;
        mse += &e * e.transpose();
        second += s * s.transpose();
    }
    covariance /= count;
    mse /= count;
    second /= count;
    Ok(MonteCarloReport {
        method,
        runs: samples.len(),
        failures,
        first_failure,
        mean: Matrix::from_column_slice(truth.nrows(), truth.ncols(), mean.as_slice()),
        covariance_eigenvalues: symmetric_eigenvalues(&covariance),
        covariance,
        bias: mean - t,
        mse_eigenvalues: symmetric_eigenvalues(&mse),
        mse,
        second_moment_eigenvalues: symmetric_eigenvalues(&second),
    })
}

/// Repeated noisy experiments, estimating `O⁺` with both algorithms.
///
/// Run `r` uses seed `base_seed + r`. Runs execute in parallel and are
/// reduced in run order, so the report does not depend on scheduling.
pub fn monte_carlo_obs(cfg: &MonteCarloConfig) -> Result<MonteCarloPair> {
    if cfg.runs < 2 {
        return Err(Error::InvalidParameter(format!(
            "Monte Carlo needs at least 2 runs to form a covariance, got {}",
            cfg.runs
        )));
    }
    cfg.model.validate()?;
    if cfg.depth < 2 {
        return Err(Error::InvalidParameter("Hankel depth must be at least 2".into()));
    }
    if !(0.0..).contains(&cfg.noise_variance) || !(0.0..).contains(&cfg.measurement_noise_variance) {
        return Err(Error::InvalidParameter("noise variances must be >= 0".into()));
    }
    let truth = model_observability(&cfg.model, cfg.depth)
        .rows(cfg.model.outputs(), cfg.model.outputs() * (cfg.depth - 1))
        .into_owned();
    let outcomes: Vec<RunOutcome> = (0..cfg.runs as u64)
        .into_par_iter()
        .map(|r| monte_carlo_run(cfg, r))
        .collect();
    let alg1: Vec<_> = outcomes.iter().map(|o| &o.0).collect();
    let alg2: Vec<_> = outcomes.iter().map(|o| &o.1).collect();
    Ok(MonteCarloPair {
        alg1: summarize(ObservabilityMethod::ToeplitzCorrected, &truth, &alg1)?,
        alg2: summarize(ObservabilityMethod::Projection, &truth, &alg2)?,
        truth,
    })
}

// ---------------------------------------------------------------------------
// Closed-loop evaluation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum Scenario {
    /// `u = -K x` from `x0`, target zero output.
    Regulation { x0: Vector },
    /// Tracking loop around an IMC bank; `fundamental` is the reference
    /// frequency in rad/s, used for the harmonic metrics.
    Tracking {
        imc: ImcRealization,
        reference: Matrix,
        fundamental: Option<f64>,
        x0: Vector,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClosedLoopMetrics {
    /// Quadratic cost over the horizon, infinite if the loop diverged.
    pub j: f64,
    pub spectral_radius: f64,
    /// Regulation: largest `|y|` over the final tenth of the horizon.
    /// Tracking: RMS of `r - y` over the evaluation window relative to the
    /// RMS of `r`.
    pub steady_state_error: f64,
    /// Relative error of the output amplitude at the fundamental.
    pub amplitude_error: Option<f64>,
    /// Total harmonic distortion of the output (worst channel).
    pub thd: Option<f64>,
    pub horizon: usize,
}

fn diverged(e: &Error) -> bool {
    matches!(e.root(), Error::NonFinite(_))
}

/// Simulates the loop and reports cost, stability and tracking metrics.
/// An unstable loop is reported through the metrics, not as an error.
pub fn evaluate_closed_loop(
    model: &StateSpaceModel,
    gain: &Matrix,
    weights: &LqrWeights,
    scenario: &Scenario,
    horizon: usize,
) -> Result<ClosedLoopMetrics> {
    if horizon == 0 {
        return Err(Error::InvalidParameter("evaluation horizon must be at least 1".into()));
    }
    match scenario {
        Scenario::Regulation { x0 } => {
            if gain.shape() != (model.inputs(), model.states()) {
                return Err(Error::dim(
                    "feedback gain K",
                    format!("{}x{}", model.inputs(), model.states()),
                    shape(gain),
                ));
            }
            let rho = spectral_radius(&(&model.a - &model.b * gain));
            let (j, steady) = match closed_loop_simulate(model, gain, x0, horizon, Noise::none()) {
                Ok(data) => {
                    let j = cost_j(&data, weights.q(), weights.r(), horizon)?;
                    let tail = (horizon / 10).max(1);
                    let steady = data.y.rows(horizon - tail, tail).amax();
                    (j, steady)
                }
                Err(e) if diverged(&e) => (f64::INFINITY, f64::INFINITY),
                Err(e) => return Err(e),
            };
            Ok(ClosedLoopMetrics {
                j: if j.is_finite() { j } else { f64::INFINITY },
                spectral_radius: rho,
                steady_state_error: steady,
                amplitude_error: None,
                thd: None,
                horizon,
            })
        }
        Scenario::Tracking {
            imc,
            reference,
            fundamental,
            x0,
        } => {
            if reference.nrows() < horizon {
                return Err(Error::InsufficientData {
                    required: horizon,
                    available: reference.nrows(),
                    rule: String::new(),
                });
            }
            let aug = augment_model(model, imc)?;
            if gain.shape() != (aug.inputs(), aug.states()) {
                return Err(Error::dim(
                    "augmented gain K_a",
                    format!("{}x{}", aug.inputs(), aug.states()),
                    shape(gain),
                ));
            }
            let fundamental = *fundamental;
            let rho = spectral_radius(&(&aug.a - &aug.b * gain));
            let reference = reference.rows(0, horizon).into_owned();
            let data = match tracking_loop_simulate(model, imc, gain, &reference, x0, None, Noise::none()) {
                Ok(d) => d,
                Err(e) if diverged(&e) => {
                    return Ok(ClosedLoopMetrics {
                        j: f64::INFINITY,
                        spectral_radius: rho,
                        steady_state_error: f64::INFINITY,
                        amplitude_error: fundamental.map(|_| f64::INFINITY),
                        thd: fundamental.map(|_| f64::INFINITY),
                        horizon,
                    })
                }
                Err(e) => return Err(e),
            };
            let j = cost_j(&data, weights.q(), weights.r(), horizon)?;
            let q = model.outputs();
            let ts = model.sample_time;
            let window = match (fundamental, ts) {
                (Some(w), Some(ts)) => {
                    let period = 2.0 * PI / (w * ts);
                    ((10.0 * period).round() as usize).clamp(1, horizon)
                }
                _ => (horizon / 10).max(1),
            };
            let start = horizon - window;
            let mut err_sq = 0.0;
            let mut ref_sq = 0.0;
            for k in start..horizon {
                for c in 0..q {
                    let r = reference[(k, c)];
                    err_sq += (r - data.y[(k, c)]).powi(2);
                    ref_sq += r * r;
                }
            }
            let steady = if ref_sq > 0.0 {
                (err_sq / ref_sq).sqrt()
            } else {
                (err_sq / (window * q) as f64).sqrt()
            };
            let (amplitude_error, thd_value) = match (fundamental, ts) {
                (Some(w), Some(ts)) => {
                    let mut amp_err: f64 = 0.0;
                    let mut worst_thd: f64 = 0.0;
                    for c in 0..q {
                        let y: Vec<f64> = (start..horizon).map(|k| data.y[(k, c)]).collect();
                        let r: Vec<f64> = (start..horizon).map(|k| reference[(k, c)]).collect();
                        let ya = harmonic_magnitude(&y, w, ts, 1);
                        let ra = harmonic_magnitude(&r, w, ts, 1);
                        if ra > 0.0 {
                            amp_err = amp_err.max((ya - ra).abs() / ra);
                        }
                        worst_thd = worst_thd.max(thd(&y, w, ts));
                    }
                    (Some(amp_err), Some(worst_thd))
                }
                (Some(_), None) => {
                    return Err(Error::InvalidParameter(
                        "harmonic metrics need the model sample time".into(),
                    ))
                }
                _ => (None, None),
            };
            Ok(ClosedLoopMetrics {
                j,
                spectral_radius: rho,
                steady_state_error: steady,
                amplitude_error,
                thd: thd_value,
                horizon,
            })
        }
    }
}

/// `|Y_h|` for `Y_h = Σ_k s(k) e^{-j h ω Ts k}`.
pub fn harmonic_magnitude(signal: &[f64], omega: f64, ts: f64, h: usize) -> f64 {
    let theta = h as f64 * omega * ts;
    let (mut re, mut im) = (0.0, 0.0);
    for (k, v) in signal.iter().enumerate() {
        let a = theta * k as f64;
        re += v * a.cos();
        im -= v * a.sin();
    }
    re.hypot(im)
}

/// `√(Σ_{h≥2} |Y_h|²) / |Y_1|`, harmonics up to Nyquist. The signal should
/// span an integer number of fundamental periods.
pub fn thd(signal: &[f64], omega: f64, ts: f64) -> f64 {
    let fundamental = harmonic_magnitude(signal, omega, ts, 1);
    let mut sum = 0.0;
    let mut h = 2;
    while (h as f64) * omega * ts < PI {
        sum += harmonic_magnitude(signal, omega, ts, h).powi(2);
        h += 1;
    }
    sum.sqrt() / fundamental
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lqr::DEADBEAT_RIDGE;
    use crate::sim::SignalSpec;

    fn example_a() -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_row_slice(2, 2, &[1.0, 0.15, -0.2, 0.6]),
            Matrix::from_row_slice(2, 2, &[0.04, 0.01, 0.02, -0.01]),
            Matrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
        )
        .unwrap()
    }

    fn data_a() -> Dataset {
        run_simulation(&example_a(), &SimulationSpec::noise_free(SignalSpec::prbs(1022, 2, 1.0, 7))).unwrap()
    }

    fn weights_a() -> LqrWeights {
        LqrWeights::scaled_identity(2, 20.0, 2, 0.2).unwrap()
    }

    fn scalar_model() -> StateSpaceModel {
        StateSpaceModel::new(
            Matrix::from_element(1, 1, 0.14),
            Matrix::from_element(1, 1, 1.72),
            Matrix::from_element(1, 1, 1.0),
        )
        .unwrap()
        .with_noise(Some(Matrix::from_element(1, 1, 1.0)), None)
        .unwrap()
    }

    #[test]
    fn pipeline_short_horizon_gain() {
        let cfg = PipelineConfig::new(10, weights_a());
        let report = design_gain(&data_a(), &cfg).unwrap();
        assert_eq!(report.gain_depth, 9);
        let expect = Matrix::from_row_slice(2, 2, &[4.2314, 7.644, 1.127, -1.8959]);
        assert!((&report.design.k - &expect).amax() < 1e-3, "{}", report.design.k);
    }

    #[test]
    fn pipeline_methods_agree_noise_free() {
        let mut cfg = PipelineConfig::new(12, weights_a());
        let k1 = design_gain(&data_a(), &cfg).unwrap().design.k;
        cfg.method = ObservabilityMethod::Projection;
        let k2 = design_gain(&data_a(), &cfg).unwrap().design.k;
        assert!((&k1 - &k2).amax() < 1e-6);
    }

    #[test]
    fn pipeline_zero_dynamics() {
        let model = StateSpaceModel::new(
            Matrix::zeros(2, 2),
            Matrix::identity(2, 2),
            Matrix::from_row_slice(2, 2, &[1.0, -1.0, 0.0, 1.0]),
        )
        .unwrap();
        let data = run_simulation(&model, &SimulationSpec::noise_free(SignalSpec::prbs(400, 2, 1.0, 3))).unwrap();
        let w = LqrWeights::scaled_identity(2, 1.0, 2, 0.5).unwrap();
        let k = design_gain(&data, &PipelineConfig::new(4, w)).unwrap().design.k;
        assert!(k.amax() < 1e-8, "{k}");
    }

    #[test]
    fn pipeline_errors_name_stage() {
        let short = run_simulation(&example_a(), &SimulationSpec::noise_free(SignalSpec::prbs(60, 2, 1.0, 1))).unwrap();
        let err = design_gain(&short, &PipelineConfig::new(51, weights_a())).unwrap_err();
        assert_eq!(err.stage(), Some("data matrices"));
        assert!(matches!(err.root(), Error::InsufficientData { .. }));

        let mut cfg = PipelineConfig::new(5, weights_a());
        cfg.gain_depth = Some(5);
        assert_eq!(design_gain(&data_a(), &cfg).unwrap_err().stage(), Some("configuration"));
    }

    #[test]
    fn sweep_error_shrinks_with_horizon() {
        let rep = convergence_sweep(&example_a(), &data_a(), &PipelineConfig::new(2, weights_a()), &[9, 50]).unwrap();
        assert!(rep.points[1].error < rep.points[0].error);
        assert!(rep.points[1].error < 1e-3);
    }

    #[test]
    fn sweep_scalar_deadbeat() {
        let model = scalar_model();
        let data = run_simulation(&model, &SimulationSpec::noise_free(SignalSpec::prbs(1022, 1, 1.0, 5))).unwrap();
        let w = LqrWeights::scaled_identity(1, 1.0, 1, DEADBEAT_RIDGE).unwrap();
        let rep = convergence_sweep(&model, &data, &PipelineConfig::new(2, w), &[2, 3]).unwrap();
        assert!(rep.points.iter().all(|p| p.error < 1e-6));
    }

    fn mc_config(runs: usize) -> MonteCarloConfig {
        MonteCarloConfig {
            model: scalar_model(),
            length: 1022,
            depth: 3,
            width: None,
            prbs_amplitude: 1.0,
            prbs_order: 10,
            noise_variance: 0.1,
            measurement_noise_variance: 0.0,
            runs,
            base_seed: 11,
            fixed_input: false,
            extraction: Extraction::Average,
        }
    }

    #[test]
    fn monte_carlo_deterministic_and_consistent() {
        let a = monte_carlo_obs(&mc_config(40)).unwrap();
        let b = monte_carlo_obs(&mc_config(40)).unwrap();
        assert_eq!(a.alg1.mean, b.alg1.mean);
        assert_eq!(a.alg2.covariance, b.alg2.covariance);
        for rep in [&a.alg1, &a.alg2] {
            assert_eq!(rep.runs, 40);
            assert_eq!(rep.mean.shape(), (2, 1));
            assert!(rep.covariance_eigenvalues.iter().all(|&v| v >= -1e-12));
            let recomposed = &rep.covariance + &rep.bias * rep.bias.transpose();
            assert!((&rep.mse - recomposed).amax() < 1e-10);
        }
        assert!((a.truth[(0, 0)] - 0.14).abs() < 1e-15);
        assert!((a.truth[(1, 0)] - 0.0196).abs() < 1e-15);
    }

    #[test]
    fn monte_carlo_rejects_single_run() {
        assert!(monte_carlo_obs(&mc_config(1)).is_err());
    }

    #[test]
    fn thd_pure_and_third_harmonic() {
        let (w, ts) = (2.0 * PI * 60.0, 1.0 / 15000.0);
        let pure: Vec<f64> = (0..2500).map(|k| (w * ts * k as f64).sin()).collect();
        assert!(thd(&pure, w, ts) < 1e-9);
        let mixed: Vec<f64> = (0..2500)
            .map(|k| (w * ts * k as f64).sin() + (3.0 * w * ts * k as f64).sin())
            .collect();
        assert!((thd(&mixed, w, ts) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn regulation_metrics() {
        let (k, _) = oracle_gain(&example_a(), &weights_a()).unwrap();
        let x0 = Vector::from_vec(vec![1.0, -1.0]);
        let m = evaluate_closed_loop(&example_a(), &k, &weights_a(), &Scenario::Regulation { x0: x0.clone() }, 200)
            .unwrap();
        assert!(m.spectral_radius < 1.0);
        assert!(m.steady_state_error < 1e-6);
        assert!(m.j.is_finite() && m.j > 0.0);
    }

    #[test]
    fn unstable_loop_is_a_metric() {
        let model = StateSpaceModel::new(
            Matrix::from_element(1, 1, 3.0),
            Matrix::from_element(1, 1, 1.0),
            Matrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let w = LqrWeights::scaled_identity(1, 1.0, 1, 1.0).unwrap();
        let m = evaluate_closed_loop(
            &model,
            &Matrix::zeros(1, 1),
            &w,
            &Scenario::Regulation {
                x0: Vector::from_element(1, 1.0),
            },
            2000,
        )
        .unwrap();
        assert!(m.spectral_radius >= 1.0);
        assert!(m.j.is_infinite());
    }
}
