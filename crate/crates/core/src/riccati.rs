//! Backward Riccati system for the quadratic value function
//! `Φ(t,x) = A(t)x² + B(t)x + C(t)`.
//!
//! With running reward `g = a x² + b x + c`, jumps entering as `Φ(x+z)` and
//! jump moments `M`, `M₂`, the coefficients satisfy
//!
//! ```text
//! A' = −a − 2A²
//! B' = −b − 2AB − 2λM·A
//! C' = −c − B²/2 − δ²A − λ(A·M₂ + B·M)
//! ```
//!
//! backward from `(A_T, B_T, C_T)`. The `A` equation can blow up in finite
//! backward time; solutions record where.
//!
//! For constant `a`, `b` the system linearises through `A = w'/(2w)` with
//! `w'' + 2a w = 0`, `w(T) = 1`, `w'(T) = 2A_T`, giving
//! `B = [B_T + b∫_t^T w + λM(1 − w)] / w`. Poles of `A` and `B` are the zeros
//! of `w`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jump::JumpDistribution;
use crate::quadrature::cumulative_simpson_from_end;

/// `|A|` beyond this counts as blow-up.
pub const BLOWUP_CAP: f64 = 1e8;
pub const DEFAULT_STEPS: usize = 4096;
pub const MIN_STEPS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum RiccatiError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("at least {MIN_STEPS} steps are required, got {0}")]
    TooFewSteps(usize),
    #[error("closed form requires constant coefficients ({0} is time-varying)")]
    NotConstant(&'static str),
    #[error("undefined input: {0}")]
    UndefinedInput(String),
    #[error("time {t} outside the valid range of the solution ({reason})")]
    Domain { t: f64, reason: &'static str },
}

/// A running-reward coefficient on `[0, T]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coefficient {
    Constant(f64),
    /// Linear interpolation between samples; the grid must span `[0, T]`.
    Sampled { times: Vec<f64>, values: Vec<f64> },
}

impl Coefficient {
    pub fn at(&self, t: f64) -> f64 {
        match self {
            Coefficient::Constant(v) => *v,
            Coefficient::Sampled { times, values } => interpolate(times, values, t),
        }
    }

    /// The value if the coefficient does not vary in time.
    pub fn constant_value(&self) -> Option<f64> {
        match self {
            Coefficient::Constant(v) => Some(*v),
            Coefficient::Sampled { values, .. } => {
                let first = values[0];
                values.iter().all(|v| *v == first).then_some(first)
            }
        }
    }

    fn validate(&self, name: &str, horizon: f64) -> Result<(), RiccatiError> {
        match self {
            Coefficient::Constant(v) if v.is_finite() => Ok(()),
            Coefficient::Constant(v) => Err(RiccatiError::InvalidSchedule(format!("{name} = {v} is not finite"))),
            Coefficient::Sampled { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(RiccatiError::InvalidSchedule(format!(
                        "{name}: need at least two samples and equal-length times/values"
                    )));
                }
                if times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(RiccatiError::InvalidSchedule(format!("{name}: times must be strictly increasing")));
                }
                let tol = 1e-12 * horizon.max(1.0);
                if times[0].abs() > tol || (times[times.len() - 1] - horizon).abs() > tol {
                    return Err(RiccatiError::InvalidSchedule(format!("{name}: times must span [0, {horizon}]")));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(RiccatiError::InvalidSchedule(format!("{name}: values must be finite")));
                }
                Ok(())
            }
        }
    }
}

fn interpolate(times: &[f64], values: &[f64], t: f64) -> f64 {
    if t <= times[0] {
        return values[0];
    }
    let last = times.len() - 1;
    if t >= times[last] {
        return values[last];
    }
    let i = times.partition_point(|s| *s <= t).clamp(1, last);
    let f = (t - times[i - 1]) / (times[i] - times[i - 1]);
    (1.0 - f) * values[i - 1] + f * values[i]
}

/// Coefficients `a(t)`, `b(t)`, `c(t)` of the running reward over `[0, T]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientSchedule {
    horizon: f64,
    pub a: Coefficient,
    pub b: Coefficient,
    pub c: Coefficient,
}

impl CoefficientSchedule {
    pub fn new(horizon: f64, a: Coefficient, b: Coefficient, c: Coefficient) -> Result<Self, RiccatiError> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(RiccatiError::InvalidSchedule(format!("horizon must be > 0, got {horizon}")));
        }
        a.validate("a", horizon)?;
        b.validate("b", horizon)?;
        c.validate("c", horizon)?;
        Ok(Self { horizon, a, b, c })
    }

    pub fn constant(horizon: f64, a: f64, b: f64, c: f64) -> Result<Self, RiccatiError> {
        Self::new(horizon, Coefficient::Constant(a), Coefficient::Constant(b), Coefficient::Constant(c))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }
}

/// Terminal reward `K(x) = A_T x² + B_T x + C_T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TerminalData {
    #[serde(rename = "A")]
    pub a: f64,
    #[serde(rename = "B")]
    pub b: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

impl TerminalData {
    pub fn new(a: f64, b: f64, c: f64) -> Self {
        Self { a, b, c }
    }

    pub fn eval(&self, x: f64) -> f64 {
        self.a * x * x + self.b * x + self.c
    }
}

/// Everything the backward system needs.
#[derive(Debug, Clone, PartialEq)]
pub struct MfgProblem {
    pub schedule: CoefficientSchedule,
    pub terminal: TerminalData,
    /// Brownian volatility `δ`.
    pub diffusion: f64,
    /// Poisson intensity `λ`.
    pub intensity: f64,
    pub jump: JumpDistribution,
}

impl MfgProblem {
    pub fn new(
        schedule: CoefficientSchedule,
        terminal: TerminalData,
        diffusion: f64,
        intensity: f64,
        jump: JumpDistribution,
    ) -> Result<Self, RiccatiError> {
        if !(diffusion.is_finite() && diffusion >= 0.0) {
            return Err(RiccatiError::UndefinedInput(format!("diffusion must be >= 0, got {diffusion}")));
        }
        if !(intensity.is_finite() && intensity >= 0.0) {
            return Err(RiccatiError::UndefinedInput(format!("intensity must be >= 0, got {intensity}")));
        }
        if ![terminal.a, terminal.b, terminal.c].iter().all(|v| v.is_finite()) {
            return Err(RiccatiError::UndefinedInput("terminal data must be finite".into()));
        }
        Ok(Self { schedule, terminal, diffusion, intensity, jump })
    }

    pub fn horizon(&self) -> f64 {
        self.schedule.horizon
    }

    /// `λM`, the mean jump drift.
    pub fn jump_drift(&self) -> f64 {
        self.intensity * self.jump.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SolutionStatus {
    Complete,
    /// First blow-up time met going backward from `T`.
    BlowUp { time: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolutionMethod {
    Numeric,
    ClosedForm,
    Prescribed,
}

/// `A`, `B`, `C` on a uniform grid over `[0, T]`.
///
/// For blown-up numeric solutions nodes at or before the blow-up time hold
/// NaN. Closed-form solutions keep the analytically continued `A`, `B` on
/// every node (NaN only for `C` there), which lets the second-order
/// expectation route pass through the pole.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    horizon: f64,
    dt: f64,
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    integral_a: Vec<f64>,
    status: SolutionStatus,
    method: SolutionMethod,
}

impl RiccatiSolution {
    /// Solution from prescribed node values (for instance `A ≡ 0`).
    pub fn from_arrays(horizon: f64, a: Vec<f64>, b: Vec<f64>, c: Vec<f64>) -> Result<Self, RiccatiError> {
        if a.len() != b.len() || a.len() != c.len() || a.len() < 3 {
            return Err(RiccatiError::UndefinedInput("arrays must have equal length >= 3".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(RiccatiError::UndefinedInput(format!("horizon must be > 0, got {horizon}")));
        }
        let dt = horizon / (a.len() - 1) as f64;
        let from_end = cumulative_simpson_from_end(&a, dt);
        let integral_a = from_end.iter().map(|k| from_end[0] - k).collect();
        Ok(Self {
            horizon,
            dt,
            a,
            b,
            c,
            integral_a,
            status: SolutionStatus::Complete,
            method: SolutionMethod::Prescribed,
        })
    }

    /// Constant coefficients on `steps` intervals.
    pub fn constant(horizon: f64, a: f64, b: f64, c: f64, steps: usize) -> Result<Self, RiccatiError> {
        let n = steps + 1;
        Self::from_arrays(horizon, vec![a; n], vec![b; n], vec![c; n])
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.a.len() - 1
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.a.len() - 1 {
            self.horizon
        } else {
            i as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.a.len()).map(|i| self.time(i)).collect()
    }

    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn b(&self) -> &[f64] {
        &self.b
    }

    pub fn c(&self) -> &[f64] {
        &self.c
    }

    /// `I(t) = ∫_0^t A dτ` on the grid (NaN unless complete).
    pub fn integral_a(&self) -> &[f64] {
        &self.integral_a
    }

    pub fn status(&self) -> SolutionStatus {
        self.status
    }

    pub fn method(&self) -> SolutionMethod {
        self.method
    }

    pub fn is_complete(&self) -> bool {
        self.status == SolutionStatus::Complete
    }

    /// Node index of `t` if `t` lies on the grid.
    pub fn node_index(&self, t: f64) -> Option<usize> {
        let x = t / self.dt;
        let i = x.round();
        ((x - i).abs() < 1e-9 && i >= 0.0 && i as usize <= self.steps()).then_some(i as usize)
    }

    /// Linearly interpolated `(A, B, C)` at `t`.
    pub fn coefficients_at(&self, t: f64) -> Result<(f64, f64, f64), RiccatiError> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(RiccatiError::Domain { t, reason: "outside [0, T]" });
        }
        if let SolutionStatus::BlowUp { time } = self.status {
            if t <= time {
                return Err(RiccatiError::Domain { t, reason: "inside the blown-up region" });
            }
        }
        let (i, f) = self.locate(t);
        let lerp = |v: &[f64]| if f == 0.0 { v[i] } else { (1.0 - f) * v[i] + f * v[i + 1] };
        let out = (lerp(&self.a), lerp(&self.b), lerp(&self.c));
        if !(out.0.is_finite() && out.1.is_finite() && out.2.is_finite()) {
            return Err(RiccatiError::Domain { t, reason: "interpolation touches a blown-up node" });
        }
        Ok(out)
    }

    fn locate(&self, t: f64) -> (usize, f64) {
        let n = self.steps();
        let x = t / self.dt;
        let i = (x.floor() as usize).min(n - 1);
        let f = (x - i as f64).clamp(0.0, 1.0);
        (i, f)
    }

    /// `Φ(t,x) = A x² + B x + C`.
    pub fn value_function(&self, t: f64, x: f64) -> Result<f64, RiccatiError> {
        let (a, b, c) = self.coefficients_at(t)?;
        Ok(a * x * x + b * x + c)
    }

    /// The optimal feedback drift `∂ₓΦ = 2A x + B`.
    pub fn optimal_control(&self, t: f64, x: f64) -> Result<f64, RiccatiError> {
        let (a, b, _) = self.coefficients_at(t)?;
        Ok(2.0 * a * x + b)
    }
}

type State = [f64; 4];

struct Rhs<'a> {
    problem: &'a MfgProblem,
    mean: f64,
    second: f64,
}

impl Rhs<'_> {
    fn eval(&self, t: f64, y: &State) -> State {
        let s = &self.problem.schedule;
        let (a, b, c) = (s.a.at(t), s.b.at(t), s.c.at(t));
        let lam = self.problem.intensity;
        let delta2 = self.problem.diffusion * self.problem.diffusion;
        let [big_a, big_b, _, _] = *y;
        [
            -a - 2.0 * big_a * big_a,
            -b - 2.0 * big_a * big_b - 2.0 * lam * self.mean * big_a,
            -c - 0.5 * big_b * big_b - delta2 * big_a - lam * (big_a * self.second + big_b * self.mean),
            -big_a,
        ]
    }

    fn rk4(&self, t: f64, y: &State, h: f64) -> State {
        let add = |y: &State, k: &State, s: f64| -> State { std::array::from_fn(|i| y[i] + s * k[i]) };
        let k1 = self.eval(t, y);
        let k2 = self.eval(t + 0.5 * h, &add(y, &k1, 0.5 * h));
        let k3 = self.eval(t + 0.5 * h, &add(y, &k2, 0.5 * h));
        let k4 = self.eval(t + h, &add(y, &k3, h));
        std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
    }
}

fn blown(y: &State) -> bool {
    y.iter().any(|v| !v.is_finite()) || y[0].abs() > BLOWUP_CAP
}

/// Fixed-step classical RK4 backward from `T`.
pub fn solve_numeric(problem: &MfgProblem, steps: usize) -> Result<RiccatiSolution, RiccatiError> {
    if steps < MIN_STEPS {
        return Err(RiccatiError::TooFewSteps(steps));
    }
    let horizon = problem.horizon();
    let dt = horizon / steps as f64;
    let rhs = Rhs { problem, mean: problem.jump.mean(), second: problem.jump.second_moment() };
    let n = steps + 1;
    let mut a = vec![f64::NAN; n];
    let mut b = vec![f64::NAN; n];
    let mut c = vec![f64::NAN; n];
    let mut k = vec![f64::NAN; n];
    let term = problem.terminal;
    let mut y: State = [term.a, term.b, term.c, 0.0];
    (a[steps], b[steps], c[steps], k[steps]) = (y[0], y[1], y[2], y[3]);
    let mut status = SolutionStatus::Complete;
    for i in (0..steps).rev() {
        let t = (i + 1) as f64 * dt;
        let t = if i + 1 == steps { horizon } else { t };
        let next = rhs.rk4(t, &y, -dt);
        if blown(&next) {
            status = SolutionStatus::BlowUp { time: locate_blowup(&rhs, t, y, -dt) };
            break;
        }
        y = next;
        (a[i], b[i], c[i], k[i]) = (y[0], y[1], y[2], y[3]);
    }
    let integral_a = match status {
        SolutionStatus::Complete => k.iter().map(|v| k[0] - v).collect(),
        SolutionStatus::BlowUp { .. } => vec![f64::NAN; n],
    };
    Ok(RiccatiSolution { horizon, dt, a, b, c, integral_a, status, method: SolutionMethod::Numeric })
}

/// Refine the crossing of the cap inside a step that blew up by marching
/// with successively halved sub-steps.
fn locate_blowup(rhs: &Rhs, t_start: f64, y_start: State, h_full: f64) -> f64 {
    let (mut t, mut y, mut h) = (t_start, y_start, h_full);
    for _ in 0..48 {
        h *= 0.5;
        let mut advanced = 0;
        loop {
            let next = rhs.rk4(t, &y, h);
            if blown(&next) || advanced >= 64 {
                break;
            }
            t += h;
            y = next;
            advanced += 1;
        }
        if h.abs() < 1e-14 * rhs.problem.horizon() {
            break;
        }
    }
    (t + 0.5 * h).max(0.0)
}

/// Distance `T − t*` from the terminal time to the first backward pole of
/// `A` for constant `a`, or `None` if `A` stays finite for all horizons.
pub fn blowup_distance(a: f64, terminal_a: f64) -> Option<f64> {
    if a > 0.0 {
        let om = (2.0 * a).sqrt();
        Some((std::f64::consts::FRAC_PI_2 - (2.0 * terminal_a / om).atan()) / om)
    } else if a < 0.0 {
        let kappa = (-2.0 * a).sqrt();
        (2.0 * terminal_a > kappa).then(|| (kappa / (2.0 * terminal_a)).atanh() / kappa)
    } else {
        (terminal_a > 0.0).then(|| 0.5 / terminal_a)
    }
}

/// Supremum horizon before the backward blow-up of `A`, for `a > 0`.
pub fn max_horizon(a: f64, terminal_a: f64) -> Result<f64, RiccatiError> {
    if !(a > 0.0) {
        return Err(RiccatiError::UndefinedInput(format!(
            "max_horizon needs a > 0 (got {a}); use blowup_distance for a <= 0"
        )));
    }
    Ok(blowup_distance(a, terminal_a).expect("a > 0 always blows up"))
}

/// `w`, `dw/dt` and `∫_t^T w` at backward distance `s = T − t`.
#[derive(Debug, Clone, Copy)]
pub struct Linearised {
    pub w: f64,
    pub dw: f64,
    pub w_integral: f64,
}

pub fn linearised(a: f64, terminal_a: f64, s: f64) -> Linearised {
    if a > 0.0 {
        let om = (2.0 * a).sqrt();
        let (sn, cs) = (om * s).sin_cos();
        Linearised {
            w: cs - 2.0 * terminal_a / om * sn,
            dw: om * sn + 2.0 * terminal_a * cs,
            w_integral: sn / om - 2.0 * terminal_a / (om * om) * (1.0 - cs),
        }
    } else if a < 0.0 {
        let k = (-2.0 * a).sqrt();
        let (sh, ch) = ((k * s).sinh(), (k * s).cosh());
        Linearised {
            w: ch - 2.0 * terminal_a / k * sh,
            dw: -k * sh + 2.0 * terminal_a * ch,
            w_integral: sh / k - 2.0 * terminal_a / (k * k) * (ch - 1.0),
        }
    } else {
        Linearised { w: 1.0 - 2.0 * terminal_a * s, dw: 2.0 * terminal_a, w_integral: s - terminal_a * s * s }
    }
}

/// Closed-form `A`, `B` for constant `a`, `b`; `C` by Simpson quadrature of
/// its equation.
pub fn solve_closed_form_const(problem: &MfgProblem, steps: usize) -> Result<RiccatiSolution, RiccatiError> {
    if steps < MIN_STEPS {
        return Err(RiccatiError::TooFewSteps(steps));
    }
    let s = &problem.schedule;
    let a_const = s.a.constant_value().ok_or(RiccatiError::NotConstant("a"))?;
    let b_const = s.b.constant_value().ok_or(RiccatiError::NotConstant("b"))?;
    let c_const = s.c.constant_value().ok_or(RiccatiError::NotConstant("c"))?;
    let horizon = problem.horizon();
    let dt = horizon / steps as f64;
    let term = problem.terminal;
    let lam = problem.intensity;
    let (mean, second) = (problem.jump.mean(), problem.jump.second_moment());
    let lam_m = lam * mean;
    let delta2 = problem.diffusion * problem.diffusion;
    let n = steps + 1;

    let time = |i: usize| if i == steps { horizon } else { i as f64 * dt };
    let lin: Vec<Linearised> = (0..n).map(|i| linearised(a_const, term.a, horizon - time(i))).collect();
    let mut a: Vec<f64> = lin.iter().map(|l| l.dw / (2.0 * l.w)).collect();
    let mut b: Vec<f64> =
        lin.iter().map(|l| (term.b + b_const * l.w_integral + lam_m * (1.0 - l.w)) / l.w).collect();
    a[steps] = term.a;
    b[steps] = term.b;

    let status = match blowup_distance(a_const, term.a) {
        Some(d) if d <= horizon => SolutionStatus::BlowUp { time: horizon - d },
        _ => SolutionStatus::Complete,
    };
    // nodes strictly after the blow-up time carry a valid C
    let first_valid = match status {
        SolutionStatus::Complete => 0,
        SolutionStatus::BlowUp { time } => ((time / dt).floor() as usize + 1).min(steps),
    };
    let integrand: Vec<f64> = (first_valid..n)
        .map(|i| {
            c_const + 0.5 * b[i] * b[i] + delta2 * a[i] + lam * (a[i] * second + b[i] * mean)
        })
        .collect();
    let tail = cumulative_simpson_from_end(&integrand, dt);
    let mut c = vec![f64::NAN; n];
    for (j, v) in tail.iter().enumerate() {
        c[first_valid + j] = term.c + v;
    }
    let integral_a = match status {
        SolutionStatus::Complete => lin.iter().map(|l| 0.5 * (l.w / lin[0].w).ln()).collect(),
        SolutionStatus::BlowUp { .. } => vec![f64::NAN; n],
    };
    Ok(RiccatiSolution { horizon, dt, a, b, c, integral_a, status, method: SolutionMethod::ClosedForm })
}
