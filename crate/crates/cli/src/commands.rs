//! Subcommand drivers. Each writes its outputs plus a `<command>.config.toml`
//! echo of the resolved configuration into the output directory.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ddlqr::{
    augment_model, convergence_sweep, design_gain, evaluate_closed_loop, monte_carlo_obs, run_simulation,
    ClosedLoopMetrics, Dataset, DesignReport, Matrix, MonteCarloConfig, MonteCarloReport, PipelineConfig, Scenario,
    SignalKind, StateSpaceModel, Vector,
};

use crate::config::{echo_config, load_config, LoadedConfig, ReferenceKind, ScenarioKind};
use crate::io::{fmt_f64, write_atomic, write_dataset, write_matrix};
use crate::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "DDLQR_OUT_DIR";
const DEFAULT_OUT_DIR: &str = "ddlqr-out";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Simulate,
    Design,
    Sweep,
    MonteCarlo,
    Eval,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Design => "design",
            Self::Sweep => "sweep",
            Self::MonteCarlo => "montecarlo",
            Self::Eval => "eval",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Invocation {
    pub command: Command,
    pub config: PathBuf,
    /// `key.path=value` overrides applied before parsing.
    pub overrides: Vec<String>,
    /// Takes precedence over the config and the environment.
    pub out_dir: Option<PathBuf>,
}

/// Result of a successful run: the files written and any warnings.
#[derive(Debug, Clone, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

pub fn run(inv: &Invocation) -> Result<RunOutput, CliError> {
    let text = std::fs::read_to_string(&inv.config).map_err(|e| CliError::io(&inv.config, e))?;
    let mut loaded = load_config(&text, &inv.overrides)?;
    let base = inv
        .config
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    resolve_paths(&mut loaded, base, inv.out_dir.as_deref())?;
    let out_dir = loaded.config.io.output_dir.clone().expect("resolved output directory");
    let mut ctx = Context {
        cfg: loaded,
        out_dir,
        out: RunOutput::default(),
    };
    match inv.command {
        Command::Simulate => simulate(&mut ctx)?,
        Command::Design => design(&mut ctx)?,
        Command::Sweep => sweep(&mut ctx)?,
        Command::MonteCarlo => montecarlo(&mut ctx)?,
        Command::Eval => eval(&mut ctx)?,
    }
    let echo = echo_config(&ctx.cfg.config);
    ctx.write(&format!("{}.config.toml", inv.command.name()), echo.as_bytes())?;
    Ok(ctx.out)
}

/// Makes input paths absolute (relative to the config file) and fixes the
/// output directory, so the echoed config reproduces the run from anywhere.
fn resolve_paths(cfg: &mut LoadedConfig, base: &Path, cli_out: Option<&Path>) -> Result<(), CliError> {
    let base = std::path::absolute(base).map_err(|e| CliError::io(base, e))?;
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { base.join(p) };
    let io = &mut cfg.config.io;
    io.dataset = io.dataset.as_deref().map(resolve);
    if let Some(eval) = &mut cfg.config.eval {
        eval.gain_file = eval.gain_file.as_deref().map(resolve);
    }
    let out = match (cli_out, &cfg.config.io.output_dir, std::env::var_os(OUT_DIR_ENV)) {
        (Some(p), _, _) => std::path::absolute(p).map_err(|e| CliError::io(p, e))?,
        (None, Some(p), _) => resolve(p),
        (None, None, Some(env)) => {
            let p = PathBuf::from(env);
            std::path::absolute(&p).map_err(|e| CliError::io(&p, e))?
        }
        (None, None, None) => {
            let p = PathBuf::from(DEFAULT_OUT_DIR);
            std::path::absolute(&p).map_err(|e| CliError::io(&p, e))?
        }
    };
    cfg.config.io.output_dir = Some(out);
    Ok(())
}

struct Context {
    cfg: LoadedConfig,
    out_dir: PathBuf,
    out: RunOutput,
}

impl Context {
    fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.path(name);
        write_atomic(&path, bytes)?;
        self.out.files.push(path);
        Ok(())
    }

    fn write_matrix(&mut self, name: &str, m: &Matrix) -> Result<(), CliError> {
        let path = self.path(name);
        write_matrix(&path, m)?;
        self.out.files.push(path);
        Ok(())
    }

    /// Text summary followed by the resolved config.
    fn write_summary(&mut self, name: &str, body: &str) -> Result<(), CliError> {
        let text = format!("{body}\n# resolved config\n{}", echo_config(&self.cfg.config));
        self.write(name, text.as_bytes())
    }

    fn dataset(&self) -> Result<Dataset, CliError> {
        match &self.cfg.config.io.dataset {
            Some(path) => crate::io::read_dataset(path, self.cfg.sample_time()),
            None => {
                let model = self.cfg.model()?;
                let spec = self.cfg.simulation(&model)?;
                Ok(run_simulation(&model, &spec)?)
            }
        }
    }

    fn pipeline(&self, data: &Dataset) -> Result<PipelineConfig, CliError> {
        let est = self.cfg.estimation()?;
        let imc = self.cfg.imc(self.cfg.sample_time().or(data.sample_time))?;
        let nc = imc.as_ref().map_or(0, |c| c.order());
        let q = data.outputs();
        let weights = self.cfg.weights(q + nc * q, data.inputs())?;
        let mut config = PipelineConfig::new(est.depth, weights);
        config.width = est.width;
        config.gain_depth = self.cfg.config.lqr.as_ref().and_then(|l| l.gain_depth);
        config.method = self.cfg.method()?;
        config.imc = imc;
        config.extraction = self.cfg.extraction()?;
        config.gamma_form = self.cfg.gamma_form();
        Ok(config)
    }

    fn warn(&mut self, warnings: impl IntoIterator<Item = String>) {
        self.out.warnings.extend(warnings);
    }
}

fn simulate(ctx: &mut Context) -> Result<(), CliError> {
    let model = ctx.cfg.model()?;
    let spec = ctx.cfg.simulation(&model)?;
    let data = run_simulation(&model, &spec)?;
    let path = ctx.path("dataset.csv");
    write_dataset(&path, &data)?;
    ctx.out.files.push(path);
    Ok(())
}

fn matrix_text(m: &Matrix) -> String {
    let mut s = String::new();
    for row in m.row_iter() {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:>14.6e}")).collect();
        let _ = writeln!(s, "  [{}]", cells.join(", "));
    }
    s
}

fn design_summary(report: &DesignReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "data-driven LQR design");
    let _ = writeln!(s, "hankel depth d = {}", report.depth);
    let _ = writeln!(s, "hankel width L = {}", report.width);
    let _ = writeln!(s, "gain depth N = {}", report.gain_depth);
    let _ = writeln!(s, "observability algorithm = {}", report.observability.method);
    let _ = writeln!(s, "regressor rank = {}", report.markov.phi_rank);
    let _ = writeln!(s, "past-data rank = {}", report.markov.past_rank);
    let _ = writeln!(s, "state regressor rank = {}", report.observability.regressor_rank);
    let _ = writeln!(s, "toeplitz shift defect = {:.6e}", report.markov.shift_defect());
    let _ = writeln!(s, "gamma condition = {:.6e}", report.design.diagnostics.gamma_condition);
    let _ = writeln!(s, "bracket condition = {:.6e}", report.design.diagnostics.bracket_condition);
    let _ = writeln!(s, "K =");
    s.push_str(&matrix_text(&report.design.k));
    for w in &report.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    s
}

fn design(ctx: &mut Context) -> Result<(), CliError> {
    let data = ctx.dataset()?;
    let config = ctx.pipeline(&data)?;
    let report = design_gain(&data, &config)?;
    ctx.write_matrix("gain.csv", &report.design.k)?;
    ctx.write_matrix("markov.csv", &ddlqr::markov::stack_blocks(&report.markov.blocks))?;
    ctx.write_matrix("toeplitz.csv", &report.markov.s)?;
    ctx.write_matrix("observability.csv", &report.observability.o_plus)?;
    ctx.write_summary("design.txt", &design_summary(&report))?;
    ctx.warn(report.warnings);
    Ok(())
}

fn sweep(ctx: &mut Context) -> Result<(), CliError> {
    let model = ctx.cfg.model()?;
    let depths = ctx
        .cfg
        .config
        .sweep
        .as_ref()
        .ok_or_else(|| CliError::Input("missing [sweep] section".into()))?
        .gain_depths
        .clone();
    if depths.is_empty() {
        return Err(CliError::Input("field `sweep.gain_depths` is empty".into()));
    }
    let data = ctx.dataset()?;
    let base = ctx.pipeline(&data)?;
    let report = convergence_sweep(&model, &data, &base, &depths)?;
    let (rows, cols) = report.oracle.shape();
    let mut csv = String::from("gain_depth,depth,error");
    for i in 1..=rows {
        for j in 1..=cols {
            let _ = write!(csv, ",k{i}_{j}");
        }
    }
    csv.push('\n');
    let mut txt = String::from("convergence of the data-driven gain to the Riccati gain\noracle K* =\n");
    txt.push_str(&matrix_text(&report.oracle));
    let _ = writeln!(txt, "{:>6} {:>6} {:>16}", "N", "d", "|K_N - K*|_inf");
    for p in &report.points {
        let _ = write!(csv, "{},{},{}", p.gain_depth, p.depth, fmt_f64(p.error));
        for i in 0..rows {
            for j in 0..cols {
                let _ = write!(csv, ",{}", fmt_f64(p.gain[(i, j)]));
            }
        }
        csv.push('\n');
        let _ = writeln!(txt, "{:>6} {:>6} {:>16.6e}", p.gain_depth, p.depth, p.error);
    }
    ctx.write("sweep.csv", csv.as_bytes())?;
    ctx.write_matrix("oracle_gain.csv", &report.oracle)?;
    ctx.write_summary("sweep.txt", &txt)?;
    Ok(())
}

fn report_rows(csv: &mut String, r: &MonteCarloReport) {
    let label = r.method.label();
    let mut matrix = |name: &str, m: &Matrix| {
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                let _ = writeln!(csv, "{label},{name},{},{},{}", i + 1, j + 1, fmt_f64(m[(i, j)]));
            }
        }
    };
    matrix("mean", &r.mean);
    matrix("covariance", &r.covariance);
    matrix("mse", &r.mse);
    let mut list = |name: &str, v: &[f64]| {
        for (i, x) in v.iter().enumerate() {
            let _ = writeln!(csv, "{label},{name},{},1,{}", i + 1, fmt_f64(*x));
        }
    };
    list("bias", r.bias.as_slice());
    list("covariance_eigenvalues", &r.covariance_eigenvalues);
    list("mse_eigenvalues", &r.mse_eigenvalues);
    list("second_moment_eigenvalues", &r.second_moment_eigenvalues);
}

fn eig_text(v: &[f64]) -> String {
    let cells: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", cells.join(", "))
}

fn montecarlo(ctx: &mut Context) -> Result<(), CliError> {
    let model = ctx.cfg.model()?;
    let mc = ctx
        .cfg
        .config
        .montecarlo
        .clone()
        .ok_or_else(|| CliError::Input("missing [montecarlo] section".into()))?;
    if mc.runs < 2 {
        return Err(CliError::Input(format!(
            "field `montecarlo.runs` is {}, at least 2 runs are needed for a covariance",
            mc.runs
        )));
    }
    if model.e.is_none() && mc.noise_variance > 0.0 {
        return Err(CliError::Input(
            "Monte Carlo with process noise needs the noise input matrix `model.e`".into(),
        ));
    }
    let signal = ctx.cfg.signal(model.inputs())?;
    let SignalKind::Prbs { amplitude, order } = signal.kind else {
        return Err(CliError::Input("Monte Carlo needs `signal.kind = \"prbs\"`".into()));
    };
    let est = ctx.cfg.estimation()?;
    let cfg = MonteCarloConfig {
        model,
        length: signal.length,
        depth: est.depth,
        width: est.width,
        prbs_amplitude: amplitude,
        prbs_order: order,
        noise_variance: mc.noise_variance,
        measurement_noise_variance: mc.measurement_noise_variance,
        runs: mc.runs,
        base_seed: mc.base_seed,
        fixed_input: mc.fixed_input,
        extraction: ctx.cfg.extraction()?,
    };
    let pair = monte_carlo_obs(&cfg)?;
    let mut csv = String::from("algorithm,quantity,i,j,value\n");
    let truth: Vec<String> = pair.truth.iter().map(|v| fmt_f64(*v)).collect();
    for (i, v) in truth.iter().enumerate() {
        let _ = writeln!(csv, "truth,o_plus,{},1,{v}", i + 1);
    }
    report_rows(&mut csv, &pair.alg1);
    report_rows(&mut csv, &pair.alg2);
    let mut txt = format!("Monte Carlo study of the observability estimators\nruns = {}\ntrue O+ =\n", cfg.runs);
    txt.push_str(&matrix_text(&pair.truth));
    for r in [&pair.alg1, &pair.alg2] {
        let _ = writeln!(txt, "\n{} ({} successful runs, {} failures)", r.method, r.runs, r.failures);
        if let Some(f) = &r.first_failure {
            let _ = writeln!(txt, "first failure: {f}");
        }
        let _ = writeln!(txt, "mean O+ =");
        txt.push_str(&matrix_text(&r.mean));
        let _ = writeln!(txt, "covariance eigenvalues = {}", eig_text(&r.covariance_eigenvalues));
        let _ = writeln!(txt, "mse eigenvalues = {}", eig_text(&r.mse_eigenvalues));
        let _ = writeln!(txt, "second moment eigenvalues = {}", eig_text(&r.second_moment_eigenvalues));
        if r.failures > 0 {
            ctx.out
                .warnings
                .push(format!("{}: {} of {} runs failed", r.method, r.failures, cfg.runs));
        }
    }
    ctx.write("montecarlo.csv", csv.as_bytes())?;
    ctx.write_summary("montecarlo.txt", &txt)?;
    Ok(())
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

fn eval(ctx: &mut Context) -> Result<(), CliError> {
    let model = ctx.cfg.model()?;
    let sec = ctx
        .cfg
        .config
        .eval
        .clone()
        .ok_or_else(|| CliError::Input("missing [eval] section".into()))?;
    let imc = ctx.cfg.imc(model.sample_time)?;
    let q = model.outputs();
    let nc = imc.as_ref().map_or(0, |c| c.order());
    let gain = match ctx.cfg.eval_gain()? {
        Some(k) => k,
        None => {
            let data = ctx.dataset()?;
            let config = ctx.pipeline(&data)?;
            let report = design_gain(&data, &config)?;
            ctx.write_matrix("gain.csv", &report.design.k)?;
            ctx.warn(report.warnings);
            report.design.k
        }
    };
    let x0 = |default: f64| -> Result<Vector, CliError> {
        match &sec.x0 {
            Some(v) if v.len() != model.states() => Err(CliError::Input(format!(
                "field `eval.x0` has {} entries, model has {} states",
                v.len(),
                model.states()
            ))),
            Some(v) => Ok(Vector::from_column_slice(v)),
            None => Ok(Vector::from_element(model.states(), default)),
        }
    };
    let (scenario, weights) = match sec.scenario {
        ScenarioKind::Regulation => (
            Scenario::Regulation { x0: x0(1.0)? },
            ctx.cfg.weights(q, model.inputs())?,
        ),
        ScenarioKind::Tracking => {
            let imc = imc.ok_or_else(|| CliError::Input("tracking evaluation needs an [imc] section".into()))?;
            let weights = ctx.cfg.weights(q + nc * q, model.inputs())?;
            let (reference, fundamental) = match sec.reference {
                ReferenceKind::Step => (Matrix::from_element(sec.horizon, q, sec.reference_amplitude), None),
                ReferenceKind::Sine => {
                    let w = sec
                        .reference_frequency
                        .or_else(|| ctx.cfg.config.imc.as_ref().and_then(|i| i.frequency))
                        .ok_or_else(|| CliError::Input("sine reference needs `eval.reference_frequency`".into()))?;
                    let ts = model
                        .sample_time
                        .ok_or_else(|| CliError::Input("sine reference needs `model.sample_time`".into()))?;
                    let r = Matrix::from_fn(sec.horizon, q, |k, _| {
                        sec.reference_amplitude * (w * k as f64 * ts).sin()
                    });
                    (r, Some(w))
                }
            };
            (
                Scenario::Tracking {
                    imc,
                    reference,
                    fundamental,
                    x0: x0(0.0)?,
                },
                weights,
            )
        }
    };
    let expected = match &scenario {
        Scenario::Regulation { .. } => (model.inputs(), model.states()),
        Scenario::Tracking { imc, .. } => {
            let aug: StateSpaceModel = augment_model(&model, imc)?;
            (aug.inputs(), aug.states())
        }
    };
    if gain.shape() != expected {
        return Err(CliError::Input(format!(
            "gain is {}x{}, the {} scenario needs {}x{}",
            gain.nrows(),
            gain.ncols(),
            match sec.scenario {
                ScenarioKind::Regulation => "regulation",
                ScenarioKind::Tracking => "tracking",
            },
            expected.0,
            expected.1
        )));
    }
    let m = evaluate_closed_loop(&model, &gain, &weights, &scenario, sec.horizon)?;
    ctx.write("metrics.csv", metrics_csv(&m).as_bytes())?;
    ctx.write_summary("eval.txt", &metrics_text(&m, &gain))?;
    Ok(())
}

fn metrics_csv(m: &ClosedLoopMetrics) -> String {
    format!(
        "j,spectral_radius,steady_state_error,amplitude_error,thd,horizon\n{},{},{},{},{},{}\n",
        fmt_f64(m.j),
        fmt_f64(m.spectral_radius),
        fmt_f64(m.steady_state_error),
        opt_cell(m.amplitude_error),
        opt_cell(m.thd),
        m.horizon
    )
}

fn metrics_text(m: &ClosedLoopMetrics, gain: &Matrix) -> String {
    let mut s = String::from("closed-loop evaluation\nK =\n");
    s.push_str(&matrix_text(gain));
    let _ = writeln!(s, "horizon = {}", m.horizon);
    let _ = writeln!(s, "J = {:.6e}", m.j);
    let _ = writeln!(s, "spectral radius = {:.6}", m.spectral_radius);
    let _ = writeln!(
        s,
        "stable = {}",
        if m.spectral_radius < 1.0 { "yes" } else { "no" }
    );
    let _ = writeln!(s, "steady-state error = {:.6e}", m.steady_state_error);
    if let Some(a) = m.amplitude_error {
        let _ = writeln!(s, "amplitude error = {a:.6e}");
    }
    if let Some(t) = m.thd {
        let _ = writeln!(s, "THD = {t:.6e}");
    }
    s
}
