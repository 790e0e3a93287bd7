//! Discrete-time LTI simulation and excitation signals.
//!
//! Everything here exists to produce data sets `(u, y, x)` for the
//! estimators, or to evaluate a designed gain in closed loop. The
//! estimators themselves never see a [`StateSpaceModel`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::imc::ImcRealization;
use crate::matrix::{Matrix, Vector};

/// `x(k+1) = A x(k) + B u(k) + E v(k)`, `y(k) = C x(k) + F w(k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct StateSpaceModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub e: Option<Matrix>,
    pub f: Option<Matrix>,
    pub sample_time: Option<f64>,
}

impl StateSpaceModel {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        let model = Self {
            a,
            b,
            c,
            e: None,
            f: None,
            sample_time: None,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn with_noise(mut self, e: Option<Matrix>, f: Option<Matrix>) -> Result<Self> {
        self.e = e;
        self.f = f;
        self.validate()?;
        Ok(self)
    }

    pub fn with_sample_time(mut self, ts: f64) -> Self {
        self.sample_time = Some(ts);
        self
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        if !self.a.is_square() {
            return Err(Error::dim("A", "square", shape(&self.a)));
        }
        if self.b.nrows() != n {
            return Err(Error::dim("B", format!("{n} rows"), shape(&self.b)));
        }
        if self.c.ncols() != n {
            return Err(Error::dim("C", format!("{n} columns"), shape(&self.c)));
        }
        if let Some(e) = &self.e {
            if e.nrows() != n {
                return Err(Error::dim("E", format!("{n} rows"), shape(e)));
            }
        }
        if let Some(f) = &self.f {
            if f.nrows() != self.c.nrows() {
                return Err(Error::dim("F", format!("{} rows", self.c.nrows()), shape(f)));
            }
        }
        for (name, m) in [("A", &self.a), ("B", &self.b), ("C", &self.c)] {
            crate::matrix::ensure_finite(m, name)?;
        }
        Ok(())
    }
}

pub(crate) fn shape(m: &Matrix) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// Synchronised input, output and state series, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub u: Matrix,
    pub y: Matrix,
    pub x: Matrix,
    pub sample_time: Option<f64>,
}

impl Dataset {
    pub fn new(u: Matrix, y: Matrix, x: Matrix, sample_time: Option<f64>) -> Result<Self> {
        let t = u.nrows();
        if t == 0 {
            return Err(Error::InsufficientData {
                required: 1,
                available: 0,
                rule: String::new(),
            });
        }
        if y.nrows() != t {
            return Err(Error::dim("dataset output series", format!("{t} samples"), y.nrows()));
        }
        if x.nrows() != t {
            return Err(Error::dim("dataset state series", format!("{t} samples"), x.nrows()));
        }
        for (name, m) in [("input series", &u), ("output series", &y), ("state series", &x)] {
            crate::matrix::ensure_finite(m, name)?;
        }
        Ok(Self { u, y, x, sample_time })
    }

    pub fn len(&self) -> usize {
        self.u.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.u.nrows() == 0
    }

    pub fn inputs(&self) -> usize {
        self.u.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.y.ncols()
    }

    pub fn states(&self) -> usize {
        self.x.ncols()
    }
}

/// Optional noise series for [`simulate`] and friends. Process noise needs
/// the model's `E`, measurement noise its `F`.
#[derive(Debug, Clone, Copy, Default)]
pub struct Noise<'a> {
    pub process: Option<&'a Matrix>,
    pub measurement: Option<&'a Matrix>,
}

impl<'a> Noise<'a> {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn process(v: &'a Matrix) -> Self {
        Self {
            process: Some(v),
            measurement: None,
        }
    }
}

// Resolves (E v) and (F w) series against the model, checking dimensions.
struct NoiseTerms {
    state: Option<Matrix>,
    output: Option<Matrix>,
}

fn noise_terms(model: &StateSpaceModel, noise: Noise<'_>, len: usize) -> Result<NoiseTerms> {
    let state = match (noise.process, &model.e) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::InvalidParameter(
                "process noise given but model has no E matrix".into(),
            ))
        }
        (Some(v), Some(e)) => {
            if v.nrows() != len || v.ncols() != e.ncols() {
                return Err(Error::dim(
                    "process noise series (E)",
                    format!("{len}x{}", e.ncols()),
                    shape(v),
                ));
            }
            Some(v * e.transpose())
        }
    };
    let output = match (noise.measurement, &model.f) {
        (None, _) => None,
        (Some(_), None) => {
            return Err(Error::InvalidParameter(
                "measurement noise given but model has no F matrix".into(),
            ))
        }
        (Some(w), Some(f)) => {
            if w.nrows() != len || w.ncols() != f.ncols() {
                return Err(Error::dim(
                    "measurement noise series (F)",
                    format!("{len}x{}", f.ncols()),
                    shape(w),
                ));
            }
            Some(w * f.transpose())
        }
    };
    Ok(NoiseTerms { state, output })
}

fn check_x0(model: &StateSpaceModel, x0: &Vector) -> Result<()> {
    if x0.len() != model.states() {
        return Err(Error::dim("initial state x0", model.states(), x0.len()));
    }
    Ok(())
}

/// Open-loop simulation. The recorded state includes the process-noise
/// contribution; the recorded output includes measurement noise.
pub fn simulate(model: &StateSpaceModel, u: &Matrix, x0: &Vector, noise: Noise<'_>) -> Result<Dataset> {
    model.validate()?;
    check_x0(model, x0)?;
    if u.ncols() != model.inputs() {
        return Err(Error::dim("input series (B)", format!("{} channels", model.inputs()), u.ncols()));
    }
    let t = u.nrows();
    let terms = noise_terms(model, noise, t)?;
    let (n, q) = (model.states(), model.outputs());
    let mut xs = Matrix::zeros(t, n);
    let mut ys = Matrix::zeros(t, q);
    let mut x = x0.clone();
    for k in 0..t {
        let mut y = &model.c * &x;
        if let Some(fw) = &terms.output {
            y += fw.row(k).transpose();
        }
        xs.set_row(k, &x.transpose());
        ys.set_row(k, &y.transpose());
        let mut next = &model.a * &x + &model.b * u.row(k).transpose();
        if let Some(ev) = &terms.state {
            next += ev.row(k).transpose();
        }
        x = next;
    }
    Dataset::new(u.clone(), ys, xs, model.sample_time)
}

/// Regulation loop `u(k) = -K x(k)`.
pub fn closed_loop_simulate(
    model: &StateSpaceModel,
    gain: &Matrix,
    x0: &Vector,
    horizon: usize,
    noise: Noise<'_>,
) -> Result<Dataset> {
    model.validate()?;
    check_x0(model, x0)?;
    if gain.shape() != (model.inputs(), model.states()) {
        return Err(Error::dim(
            "feedback gain K",
            format!("{}x{}", model.inputs(), model.states()),
            shape(gain),
        ));
    }
    let terms = noise_terms(model, noise, horizon)?;
    let (n, p, q) = (model.states(), model.inputs(), model.outputs());
    let mut xs = Matrix::zeros(horizon, n);
    let mut ys = Matrix::zeros(horizon, q);
    let mut us = Matrix::zeros(horizon, p);
    let mut x = x0.clone();
    for k in 0..horizon {
        let u = -(gain * &x);
        let mut y = &model.c * &x;
        if let Some(fw) = &terms.output {
            y += fw.row(k).transpose();
        }
        xs.set_row(k, &x.transpose());
        ys.set_row(k, &y.transpose());
        us.set_row(k, &u.transpose());
        let mut next = &model.a * &x + &model.b * &u;
        if let Some(ev) = &terms.state {
            next += ev.row(k).transpose();
        }
        x = next;
    }
    Dataset::new(us, ys, xs, model.sample_time)
}

/// Reference-tracking loop around an internal-model controller.
///
/// Each output channel drives its own copy of the IMC,
/// `x_c(k+1) = A_c x_c(k) + B_c (r(k) - y(k))`, and the control is
/// `u(k) = -K_a [x(k); x_imc(k)]`. The returned dataset is augmented:
/// `y = [y, x_imc]`, `x = [x, x_imc]`.
pub fn tracking_loop_simulate(
    model: &StateSpaceModel,
    imc: &ImcRealization,
    gain: &Matrix,
    reference: &Matrix,
    x0: &Vector,
    imc_x0: Option<&Vector>,
    noise: Noise<'_>,
) -> Result<Dataset> {
    model.validate()?;
    check_x0(model, x0)?;
    let (n, p, q) = (model.states(), model.inputs(), model.outputs());
    let nc = imc.order();
    let ni = nc * q;
    if gain.shape() != (p, n + ni) {
        return Err(Error::dim("augmented gain K_a", format!("{p}x{}", n + ni), shape(gain)));
    }
    if reference.ncols() != q {
        return Err(Error::dim("reference series", format!("{q} channels"), reference.ncols()));
    }
    let horizon = reference.nrows();
    let terms = noise_terms(model, noise, horizon)?;
    let mut xc = match imc_x0 {
        Some(v) if v.len() != ni => return Err(Error::dim("IMC initial state", ni, v.len())),
        Some(v) => v.clone(),
        None => Vector::zeros(ni),
    };
    let mut xs = Matrix::zeros(horizon, n + ni);
    let mut ys = Matrix::zeros(horizon, q + ni);
    let mut us = Matrix::zeros(horizon, p);
    let mut x = x0.clone();
    for k in 0..horizon {
        let xa = Vector::from_iterator(n + ni, x.iter().chain(xc.iter()).copied());
        let u = -(gain * &xa);
        let mut y = &model.c * &x;
        if let Some(fw) = &terms.output {
            y += fw.row(k).transpose();
        }
        xs.set_row(k, &xa.transpose());
        let ya = Vector::from_iterator(q + ni, y.iter().chain(xc.iter()).copied());
        ys.set_row(k, &ya.transpose());
        us.set_row(k, &u.transpose());

        let err = reference.row(k).transpose() - &y;
        xc = imc.step(&xc, &err);
        let mut next = &model.a * &x + &model.b * &u;
        if let Some(ev) = &terms.state {
            next += ev.row(k).transpose();
        }
        x = next;
    }
    Dataset::new(us, ys, xs, model.sample_time)
}

/// Zero-order-hold discretisation.
///
/// `A = exp(Ac Ts)` and `B = ∫₀^Ts exp(Ac τ) dτ · Bc`, both read off the
/// exponential of the augmented matrix `[[Ac, Bc], [0, 0]] · Ts`.
pub fn zoh_discretize(ac: &Matrix, bc: &Matrix, c: &Matrix, ts: f64) -> Result<StateSpaceModel> {
    if !(ts > 0.0 && ts.is_finite()) {
        return Err(Error::InvalidParameter(format!("sample time must be positive, got {ts}")));
    }
    let n = ac.nrows();
    if !ac.is_square() {
        return Err(Error::dim("continuous A", "square", shape(ac)));
    }
    if bc.nrows() != n {
        return Err(Error::dim("continuous B", format!("{n} rows"), shape(bc)));
    }
    let p = bc.ncols();
    let mut aug = Matrix::zeros(n + p, n + p);
    aug.view_mut((0, 0), (n, n)).copy_from(&(ac * ts));
    aug.view_mut((0, n), (n, p)).copy_from(&(bc * ts));
    let phi = aug.exp();
    let a = phi.view((0, 0), (n, n)).into_owned();
    let b = phi.view((0, n), (n, p)).into_owned();
    Ok(StateSpaceModel::new(a, b, c.clone())?.with_sample_time(ts))
}

/// Quadratic cost `Σ_{k<horizon} y(k)ᵀ Q y(k) + u(k)ᵀ R u(k)`.
pub fn cost_j(data: &Dataset, q: &Matrix, r: &Matrix, horizon: usize) -> Result<f64> {
    if horizon > data.len() {
        return Err(Error::InsufficientData {
            required: horizon,
            available: data.len(),
            rule: String::new(),
        });
    }
    if q.shape() != (data.outputs(), data.outputs()) {
        return Err(Error::dim("output weight Q", data.outputs(), shape(q)));
    }
    if r.shape() != (data.inputs(), data.inputs()) {
        return Err(Error::dim("input weight R", data.inputs(), shape(r)));
    }
    let mut j = 0.0;
    for k in 0..horizon {
        let y = data.y.row(k);
        let u = data.u.row(k);
        j += (y * q * y.transpose())[(0, 0)] + (u * r * u.transpose())[(0, 0)];
    }
    Ok(j)
}

// ---------------------------------------------------------------------------
// Signals
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub enum SignalKind {
    /// Two-level maximal-length LFSR sequence with values `±amplitude`.
    Prbs { amplitude: f64, order: u32 },
    /// Zero-mean Gaussian samples.
    WhiteNoise { variance: f64 },
    /// `amplitude · sin(frequency · k · sample_time)`, identical on every channel.
    Sinusoid {
        amplitude: f64,
        frequency: f64,
        sample_time: f64,
    },
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub kind: SignalKind,
    pub length: usize,
    pub channels: usize,
    pub seed: u64,
}

impl SignalSpec {
    pub fn prbs(length: usize, channels: usize, amplitude: f64, seed: u64) -> Self {
        Self {
            kind: SignalKind::Prbs {
                amplitude,
                order: DEFAULT_PRBS_ORDER,
            },
            length,
            channels,
            seed,
        }
    }

    pub fn white_noise(length: usize, channels: usize, variance: f64, seed: u64) -> Self {
        Self {
            kind: SignalKind::WhiteNoise { variance },
            length,
            channels,
            seed,
        }
    }
}

pub const DEFAULT_PRBS_ORDER: u32 = 10;

/// Feedback taps (1-based stage numbers) of maximal-length Fibonacci LFSRs.
fn lfsr_taps(order: u32) -> Option<&'static [u32]> {
    Some(match order {
        2 => &[2, 1],
        3 => &[3, 2],
        4 => &[4, 3],
        5 => &[5, 3],
        6 => &[6, 5],
        7 => &[7, 6],
        8 => &[8, 6, 5, 4],
        9 => &[9, 5],
        10 => &[10, 7],
        11 => &[11, 9],
        12 => &[12, 6, 4, 1],
        13 => &[13, 4, 3, 1],
        14 => &[14, 5, 3, 1],
        15 => &[15, 14],
        16 => &[16, 15, 13, 4],
        17 => &[17, 14],
        18 => &[18, 11],
        19 => &[19, 6, 2, 1],
        20 => &[20, 17],
        _ => return None,
    })
}

/// Fibonacci linear-feedback shift register.
#[derive(Debug, Clone)]
pub struct Lfsr {
    state: u32,
    order: u32,
    taps: &'static [u32],
}

impl Lfsr {
    pub fn new(order: u32, state: u32) -> Result<Self> {
        let taps = lfsr_taps(order).ok_or_else(|| {
            Error::InvalidParameter(format!("unsupported PRBS register order {order} (supported 2..=20)"))
        })?;
        let mask = (1u32 << order) - 1;
        let state = state & mask;
        if state == 0 {
            return Err(Error::InvalidParameter("LFSR state must be nonzero".into()));
        }
        Ok(Self { state, order, taps })
    }

    pub fn period(&self) -> u64 {
        (1u64 << self.order) - 1
    }

    pub fn state(&self) -> u32 {
        self.state
    }

    /// Emits the output stage and shifts once.
    pub fn next_bit(&mut self) -> bool {
        let out = (self.state >> (self.order - 1)) & 1 == 1;
        let fb = self
            .taps
            .iter()
            .fold(0, |acc, &t| acc ^ ((self.state >> (t - 1)) & 1));
        let mask = (1u32 << self.order) - 1;
        self.state = ((self.state << 1) | fb) & mask;
        out
    }
}

/// SplitMix64 finaliser; used to turn user seeds into LFSR states and
/// independent RNG streams.
pub fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        .wrapping_add(stream.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generates a `length × channels` series.
///
/// PRBS channels share one m-sequence; channel `c` starts `c · period/channels`
/// steps after channel 0, whose phase is picked by the seed.
pub fn generate_signal(spec: &SignalSpec) -> Result<Matrix> {
    if spec.length == 0 {
        return Err(Error::InvalidParameter("signal length must be at least 1".into()));
    }
    if spec.channels == 0 {
        return Err(Error::InvalidParameter("signal needs at least one channel".into()));
    }
    let (t, ch) = (spec.length, spec.channels);
    match spec.kind {
        SignalKind::Zero => Ok(Matrix::zeros(t, ch)),
        SignalKind::Prbs { amplitude, order } => {
            let taps_ok = lfsr_taps(order).is_some();
            if !taps_ok {
                return Err(Error::InvalidParameter(format!(
                    "unsupported PRBS register order {order} (supported 2..=20)"
                )));
            }
            let period = (1u64 << order) - 1;
            let start = 1 + (mix_seed(spec.seed, 0) % period) as u32;
            let mut base = Lfsr::new(order, start)?;
            let spacing = period / ch as u64;
            let mut out = Matrix::zeros(t, ch);
            for c in 0..ch {
                let mut reg = base.clone();
                for k in 0..t {
                    out[(k, c)] = if reg.next_bit() { amplitude } else { -amplitude };
                }
                for _ in 0..spacing {
                    base.next_bit();
                }
            }
            Ok(out)
        }
        SignalKind::WhiteNoise { variance } => {
            if !(variance >= 0.0 && variance.is_finite()) {
                return Err(Error::InvalidParameter(format!("variance must be >= 0, got {variance}")));
            }
            if variance == 0.0 {
                return Ok(Matrix::zeros(t, ch));
            }
            let normal = Normal::new(0.0, variance.sqrt())
                .map_err(|e| Error::InvalidParameter(e.to_string()))?;
            let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(spec.seed, 1));
            let mut out = Matrix::zeros(t, ch);
            for k in 0..t {
                for c in 0..ch {
                    out[(k, c)] = normal.sample(&mut rng);
                }
            }
            Ok(out)
        }
        SignalKind::Sinusoid {
            amplitude,
            frequency,
            sample_time,
        } => Ok(Matrix::from_fn(t, ch, |k, _| {
            amplitude * (frequency * k as f64 * sample_time).sin()
        })),
    }
}

// ---------------------------------------------------------------------------
// UPS output-stage surrogate
// ---------------------------------------------------------------------------

/// LC output filter of a single-phase inverter with a linear resistive load.
///
/// State `[i_L, v_C]`, input the PWM command, output the capacitor voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsSurrogate {
    /// Filter inductance (H).
    pub inductance: f64,
    /// Inductor series resistance (Ω).
    pub inductor_resistance: f64,
    /// Filter capacitance (F).
    pub capacitance: f64,
    pub pwm_gain: f64,
    /// Load admittance (S).
    pub load_admittance: f64,
}

impl Default for UpsSurrogate {
    fn default() -> Self {
        Self {
            inductance: 1e-3,
            inductor_resistance: 0.05,
            capacitance: 300e-6,
            pwm_gain: 1.0,
            load_admittance: 1.0 / 6.0,
        }
    }
}

impl UpsSurrogate {
    /// Continuous-time `(A, B, C)`.
    pub fn continuous(&self) -> (Matrix, Matrix, Matrix) {
        let (l, r, c) = (self.inductance, self.inductor_resistance, self.capacitance);
        let a = Matrix::from_row_slice(2, 2, &[-r / l, -1.0 / l, 1.0 / c, -self.load_admittance / c]);
        let b = Matrix::from_row_slice(2, 1, &[self.pwm_gain / l, 0.0]);
        let cm = Matrix::from_row_slice(1, 2, &[0.0, 1.0]);
        (a, b, cm)
    }

    pub fn discretize(&self, ts: f64) -> Result<StateSpaceModel> {
        let (a, b, c) = self.continuous();
        zoh_discretize(&a, &b, &c, ts)
    }
}
