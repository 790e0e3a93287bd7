//! Run configuration: TOML sections, scalar overrides, and resolution into
//! library types.

use std::path::PathBuf;

use ddlqr::{
    integrator_imc, resonant_imc, Extraction, GammaForm, ImcRealization, LqrWeights, Matrix, ObservabilityMethod,
    SignalKind, SignalSpec, SimulationSpec, StateSpaceModel, UpsSurrogate, Vector,
};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::CliError;

/// Matrix literal: a list of rows, or an explicit `{ rows, cols, data }`
/// table with row-major data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Rows(Vec<Vec<f64>>),
    Flat { rows: usize, cols: usize, data: Vec<f64> },
}

/// Weight given as a scalar multiple of the identity or as a full matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Scalar(f64),
    Matrix(MatrixSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Discrete,
    /// Continuous-time matrices, discretised by zero-order hold.
    Continuous,
    /// LC output stage of an inverter with a resistive load.
    Ups,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    #[serde(default)]
    pub kind: ModelKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a: Option<Spanned<MatrixSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<Spanned<MatrixSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<Spanned<MatrixSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e: Option<Spanned<MatrixSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub f: Option<Spanned<MatrixSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sample_time: Option<f64>,
    /// Declared dimensions, checked against the matrices when present.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inputs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outputs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inductance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inductor_resistance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub capacitance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pwm_gain: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub load_admittance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalType {
    #[default]
    Prbs,
    WhiteNoise,
    Sinusoid,
    Zero,
}

fn one() -> f64 {
    1.0
}

fn default_order() -> u32 {
    ddlqr::sim::DEFAULT_PRBS_ORDER
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalSection {
    #[serde(default)]
    pub kind: SignalType,
    pub length: usize,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "default_order")]
    pub order: u32,
    #[serde(default = "one")]
    pub variance: f64,
    /// Sinusoid frequency in rad/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    #[serde(default)]
    pub process_noise_variance: f64,
    #[serde(default)]
    pub measurement_noise_variance: f64,
    #[serde(default)]
    pub noise_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtractionKind {
    #[default]
    Average,
    FirstColumn,
}

fn default_algorithm() -> String {
    "alg1".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimationSection {
    pub depth: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub width: Option<usize>,
    #[serde(default = "default_algorithm")]
    pub algorithm: String,
    #[serde(default)]
    pub extraction: ExtractionKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaKind {
    #[default]
    InversionLemma,
    Direct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LqrSection {
    pub q: Spanned<WeightSpec>,
    pub r: Spanned<WeightSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_depth: Option<usize>,
    #[serde(default)]
    pub gamma_form: GammaKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ImcKind {
    Integrator,
    Resonant,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImcSection {
    pub kind: ImcKind,
    /// Resonant frequency in rad/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonteCarloSection {
    pub runs: usize,
    pub noise_variance: f64,
    #[serde(default)]
    pub measurement_noise_variance: f64,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub fixed_input: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub gain_depths: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    #[default]
    Regulation,
    Tracking,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    #[default]
    Sine,
    Step,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub horizon: usize,
    #[serde(default)]
    pub scenario: ScenarioKind,
    /// Initial plant state; regulation defaults to all ones, tracking to zero.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
    /// Gain to evaluate. When neither this nor `gain_file` is set, the gain
    /// is designed from data first.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain: Option<Spanned<MatrixSpec>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gain_file: Option<PathBuf>,
    #[serde(default)]
    pub reference: ReferenceKind,
    #[serde(default = "one")]
    pub reference_amplitude: f64,
    /// Reference frequency in rad/s; defaults to the IMC frequency.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference_frequency: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IoSection {
    /// Dataset CSV used as the data source instead of a simulation.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub signal: Option<SignalSection>,
    #[serde(default)]
    pub experiment: ExperimentSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimation: Option<EstimationSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lqr: Option<LqrSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub imc: Option<ImcSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub montecarlo: Option<MonteCarloSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval: Option<EvalSection>,
    #[serde(default)]
    pub io: IoSection,
}

/// Applies `key.path=value` overrides. Values are parsed as TOML and fall
/// back to plain strings.
pub fn apply_overrides(text: &str, overrides: &[String]) -> Result<String, CliError> {
    if overrides.is_empty() {
        return Ok(text.to_string());
    }
    let mut doc: toml_edit::DocumentMut = text
        .parse()
        .map_err(|e| CliError::Input(format!("config parse error: {e}")))?;
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| CliError::Input(format!("override `{item}` is not of the form key=value")))?;
        let path: Vec<&str> = key.trim().split('.').collect();
        if path.iter().any(|p| p.is_empty()) {
            return Err(CliError::Input(format!("override key `{key}` is malformed")));
        }
        let value = parse_value(raw.trim());
        let (last, parents) = path.split_last().expect("nonempty path");
        let mut table = doc.as_table_mut();
        for part in parents {
            let entry = table.entry(part).or_insert_with(toml_edit::table);
            table = entry
                .as_table_mut()
                .ok_or_else(|| CliError::Input(format!("override `{key}`: `{part}` is not a table")))?;
        }
        table.insert(last, toml_edit::Item::Value(value));
    }
    Ok(doc.to_string())
}

fn parse_value(raw: &str) -> toml_edit::Value {
    let snippet = format!("v = {raw}");
    snippet
        .parse::<toml_edit::DocumentMut>()
        .ok()
        .and_then(|d| d.get("v").and_then(|i| i.as_value().cloned()))
        .unwrap_or_else(|| toml_edit::Value::from(raw))
}

/// Parsed config together with the text it came from (for line numbers).
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub text: String,
}

pub fn load_config(text: &str, overrides: &[String]) -> Result<LoadedConfig, CliError> {
    let text = apply_overrides(text, overrides)?;
    let config: RunConfig =
        toml::from_str(&text).map_err(|e| CliError::Input(format!("config parse error: {e}")))?;
    Ok(LoadedConfig { config, text })
}

/// Resolved config as TOML, for embedding in outputs.
pub fn echo_config(config: &RunConfig) -> String {
    toml::to_string(config).expect("config serialises")
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

impl LoadedConfig {
    fn matrix(&self, field: &str, spec: &Spanned<MatrixSpec>) -> Result<Matrix, CliError> {
        let line = line_of(&self.text, spec.span().start);
        let fail = |msg: String| CliError::Input(format!("line {line}, field `{field}`: {msg}"));
        match spec.get_ref() {
            MatrixSpec::Rows(rows) => {
                if rows.is_empty() {
                    return Err(fail("matrix has no rows".into()));
                }
                let cols = rows[0].len();
                if cols == 0 {
                    return Err(fail("matrix row 1 is empty".into()));
                }
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != cols {
                        return Err(fail(format!(
                            "row {} has {} entries, expected {cols} (from row 1)",
                            i + 1,
                            row.len()
                        )));
                    }
                }
                Ok(Matrix::from_fn(rows.len(), cols, |i, j| rows[i][j]))
            }
            MatrixSpec::Flat { rows, cols, data } => {
                if data.len() != rows * cols {
                    return Err(fail(format!(
                        "declared {rows}x{cols} needs {} entries, found {}",
                        rows * cols,
                        data.len()
                    )));
                }
                Ok(Matrix::from_row_slice(*rows, *cols, data))
            }
        }
    }

    fn required_matrix(&self, field: &str, spec: &Option<Spanned<MatrixSpec>>) -> Result<Matrix, CliError> {
        match spec {
            Some(s) => self.matrix(field, s),
            None => Err(CliError::Input(format!("missing field `{field}`"))),
        }
    }

    pub fn model(&self) -> Result<StateSpaceModel, CliError> {
        let sec = self
            .config
            .model
            .as_ref()
            .ok_or_else(|| CliError::Input("missing [model] section".into()))?;
        let model = match sec.kind {
            ModelKind::Discrete => {
                let model = StateSpaceModel::new(
                    self.required_matrix("model.a", &sec.a)?,
                    self.required_matrix("model.b", &sec.b)?,
                    self.required_matrix("model.c", &sec.c)?,
                )
                .map_err(input)?;
                match sec.sample_time {
                    Some(ts) => model.with_sample_time(ts),
                    None => model,
                }
            }
            ModelKind::Continuous => {
                let ts = sec
                    .sample_time
                    .ok_or_else(|| CliError::Input("continuous model needs `model.sample_time`".into()))?;
                ddlqr::zoh_discretize(
                    &self.required_matrix("model.a", &sec.a)?,
                    &self.required_matrix("model.b", &sec.b)?,
                    &self.required_matrix("model.c", &sec.c)?,
                    ts,
                )
                .map_err(input)?
            }
            ModelKind::Ups => {
                let ts = sec
                    .sample_time
                    .ok_or_else(|| CliError::Input("ups model needs `model.sample_time`".into()))?;
                let d = UpsSurrogate::default();
                UpsSurrogate {
                    inductance: sec.inductance.unwrap_or(d.inductance),
                    inductor_resistance: sec.inductor_resistance.unwrap_or(d.inductor_resistance),
                    capacitance: sec.capacitance.unwrap_or(d.capacitance),
                    pwm_gain: sec.pwm_gain.unwrap_or(d.pwm_gain),
                    load_admittance: sec.load_admittance.unwrap_or(d.load_admittance),
                }
                .discretize(ts)
                .map_err(input)?
            }
        };
        let e = sec.e.as_ref().map(|m| self.matrix("model.e", m)).transpose()?;
        let f = sec.f.as_ref().map(|m| self.matrix("model.f", m)).transpose()?;
        let model = model.with_noise(e, f).map_err(input)?;
        for (name, declared, actual) in [
            ("states", sec.states, model.states()),
            ("inputs", sec.inputs, model.inputs()),
            ("outputs", sec.outputs, model.outputs()),
        ] {
            if let Some(n) = declared {
                if n != actual {
                    return Err(CliError::Input(format!(
                        "field `model.{name}` declares {n}, matrices give {actual}"
                    )));
                }
            }
        }
        Ok(model)
    }

    pub fn signal(&self, channels: usize) -> Result<SignalSpec, CliError> {
        let sec = self
            .config
            .signal
            .as_ref()
            .ok_or_else(|| CliError::Input("missing [signal] section".into()))?;
        let kind = match sec.kind {
            SignalType::Prbs => SignalKind::Prbs {
                amplitude: sec.amplitude,
                order: sec.order,
            },
            SignalType::WhiteNoise => SignalKind::WhiteNoise { variance: sec.variance },
            SignalType::Sinusoid => {
                let ts = self.config.model.as_ref().and_then(|m| m.sample_time).ok_or_else(|| {
                    CliError::Input("sinusoid signal needs `model.sample_time`".into())
                })?;
                SignalKind::Sinusoid {
                    amplitude: sec.amplitude,
                    frequency: sec
                        .frequency
                        .ok_or_else(|| CliError::Input("sinusoid signal needs `signal.frequency`".into()))?,
                    sample_time: ts,
                }
            }
            SignalType::Zero => SignalKind::Zero,
        };
        Ok(SignalSpec {
            kind,
            length: sec.length,
            channels,
            seed: sec.seed,
        })
    }

    pub fn simulation(&self, model: &StateSpaceModel) -> Result<SimulationSpec, CliError> {
        let exp = &self.config.experiment;
        let x0 = match &exp.x0 {
            Some(v) if v.len() != model.states() => {
                return Err(CliError::Input(format!(
                    "field `experiment.x0` has {} entries, model has {} states",
                    v.len(),
                    model.states()
                )))
            }
            Some(v) => Some(Vector::from_column_slice(v)),
            None => None,
        };
        Ok(SimulationSpec {
            input: self.signal(model.inputs())?,
            x0,
            process_noise_variance: exp.process_noise_variance,
            measurement_noise_variance: exp.measurement_noise_variance,
            noise_seed: exp.noise_seed,
        })
    }

    pub fn estimation(&self) -> Result<&EstimationSection, CliError> {
        self.config
            .estimation
            .as_ref()
            .ok_or_else(|| CliError::Input("missing [estimation] section".into()))
    }

    pub fn method(&self) -> Result<ObservabilityMethod, CliError> {
        self.estimation()?
            .algorithm
            .parse()
            .map_err(|e: ddlqr::Error| CliError::Input(format!("field `estimation.algorithm`: {e}")))
    }

    pub fn extraction(&self) -> Result<Extraction, CliError> {
        Ok(match self.estimation()?.extraction {
            ExtractionKind::Average => Extraction::Average,
            ExtractionKind::FirstColumn => Extraction::FirstColumn,
        })
    }

    fn weight(&self, field: &str, spec: &Spanned<WeightSpec>, dim: usize) -> Result<Matrix, CliError> {
        match spec.get_ref() {
            WeightSpec::Scalar(s) => Ok(Matrix::identity(dim, dim) * *s),
            WeightSpec::Matrix(m) => {
                let spanned = Spanned::new(spec.span(), m.clone());
                self.matrix(field, &spanned)
            }
        }
    }

    /// Weights sized for `outputs` and `inputs` (augmented sizes when an IMC
    /// is configured).
    pub fn weights(&self, outputs: usize, inputs: usize) -> Result<LqrWeights, CliError> {
        let sec = self
            .config
            .lqr
            .as_ref()
            .ok_or_else(|| CliError::Input("missing [lqr] section".into()))?;
        let q = self.weight("lqr.q", &sec.q, outputs)?;
        let r = self.weight("lqr.r", &sec.r, inputs)?;
        if q.shape() != (outputs, outputs) {
            return Err(CliError::Input(format!(
                "field `lqr.q` is {}x{}, expected {outputs}x{outputs}",
                q.nrows(),
                q.ncols()
            )));
        }
        if r.shape() != (inputs, inputs) {
            return Err(CliError::Input(format!(
                "field `lqr.r` is {}x{}, expected {inputs}x{inputs}",
                r.nrows(),
                r.ncols()
            )));
        }
        LqrWeights::new(q, r).map_err(input)
    }

    pub fn gamma_form(&self) -> GammaForm {
        match self.config.lqr.as_ref().map(|l| l.gamma_form).unwrap_or_default() {
            GammaKind::InversionLemma => GammaForm::InversionLemma,
            GammaKind::Direct => GammaForm::Direct,
        }
    }

    /// Sample time from the model section, if declared.
    pub fn sample_time(&self) -> Option<f64> {
        self.config.model.as_ref().and_then(|m| m.sample_time)
    }

    pub fn imc(&self, sample_time: Option<f64>) -> Result<Option<ImcRealization>, CliError> {
        let Some(sec) = &self.config.imc else {
            return Ok(None);
        };
        match sec.kind {
            ImcKind::Integrator => Ok(Some(integrator_imc())),
            ImcKind::Resonant => {
                let w = sec
                    .frequency
                    .ok_or_else(|| CliError::Input("resonant IMC needs `imc.frequency`".into()))?;
                let ts = sample_time.ok_or_else(|| CliError::Input("resonant IMC needs `model.sample_time`".into()))?;
                resonant_imc(w, ts).map(Some).map_err(input)
            }
        }
    }

    pub fn eval_gain(&self) -> Result<Option<Matrix>, CliError> {
        let Some(sec) = &self.config.eval else {
            return Ok(None);
        };
        match (&sec.gain, &sec.gain_file) {
            (Some(_), Some(_)) => Err(CliError::Input("set only one of `eval.gain` and `eval.gain_file`".into())),
            (Some(g), None) => self.matrix("eval.gain", g).map(Some),
            (None, Some(path)) => crate::io::read_matrix_csv(path).map(Some),
            (None, None) => Ok(None),
        }
    }
}

fn input(e: ddlqr::Error) -> CliError {
    CliError::Input(e.to_string())
}
