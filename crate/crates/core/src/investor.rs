//! Investors forming an opinion `μ` about the drift of a risky asset.
//!
//! A HARA investor with exponent `q < 1` facing risk-free rate `r` and
//! volatility `σ` holds the fraction `h* = (μ − r)/(σ²(1 − q))` and grows
//! capital at `r + R(μ − r)²`, `R = (1 − 2q)/(2σ²(q − 1)²)`. Opinions are
//! steered by the reward `β·growth − γ(μ − μ̄)²`, which maps onto the
//! quadratic game with
//!
//! ```text
//! a = βR − γ,  b = 2(γμ̄ − βRr),  c = βr + βRr² − γμ̄²,
//! A_T = R,     B_T = −2Rr,       C_T = r + Rr².
//! ```
//!
//! With [`Reference::PopulationMean`] the penalty is `γ(μ − E(t))²` instead.

use thiserror::Error;

use crate::density::InitialLaw;
use crate::expectation::{
    classify_regime, expectation_ivp, expectation_quadrature, CoupledProblem, ExpectationError, ExpectationPath,
    MeanCoupling,
};
use crate::jump::JumpDistribution;
use crate::riccati::{
    blowup_distance, solve_closed_form_const, solve_numeric, CoefficientSchedule, MfgProblem, RiccatiError,
    TerminalData,
};

#[derive(Debug, Error, PartialEq)]
pub enum InvestorError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("βR = γ: the consensus point is undefined")]
    DegenerateCoupling,
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
    #[error(transparent)]
    Expectation(#[from] ExpectationError),
}

fn check_q(q: f64) -> Result<(), InvestorError> {
    if q < 1.0 {
        Ok(())
    } else {
        Err(InvestorError::Domain(format!("risk exponent q = {q} must be < 1")))
    }
}

pub fn hara_risk_coefficient(q: f64, sigma: f64) -> Result<f64, InvestorError> {
    check_q(q)?;
    if !(sigma > 0.0) {
        return Err(InvestorError::Domain(format!("volatility σ = {sigma} must be > 0")));
    }
    Ok((1.0 - 2.0 * q) / (2.0 * sigma * sigma * (q - 1.0) * (q - 1.0)))
}

pub fn optimal_fraction(mu: f64, r: f64, sigma: f64, q: f64) -> Result<f64, InvestorError> {
    check_q(q)?;
    Ok((mu - r) / (sigma * sigma * (1.0 - q)))
}

pub fn growth_rate(mu: f64, r: f64, sigma: f64, q: f64) -> Result<f64, InvestorError> {
    Ok(r + hara_risk_coefficient(q, sigma)? * (mu - r) * (mu - r))
}

/// What opinions are pulled towards.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Deserialize, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Reference {
    /// The fixed drift `μ̄`.
    #[default]
    Fixed,
    /// The current population mean `E(t)`.
    PopulationMean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InvestorScenario {
    pub r: f64,
    pub sigma: f64,
    pub q: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu_bar: f64,
    pub diffusion: f64,
    pub intensity: f64,
    pub jump: JumpDistribution,
    pub horizon: f64,
    pub initial: InitialLaw,
    pub reference: Reference,
}

impl InvestorScenario {
    pub fn validate(&self) -> Result<(), InvestorError> {
        hara_risk_coefficient(self.q, self.sigma)?;
        if !(self.beta >= 0.0 && self.gamma >= 0.0) {
            return Err(InvestorError::Domain("β and γ must be >= 0".into()));
        }
        if !(self.diffusion >= 0.0 && self.intensity >= 0.0) {
            return Err(InvestorError::Domain("δ and λ must be >= 0".into()));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(InvestorError::Domain("horizon must be finite and > 0".into()));
        }
        if !(self.r.is_finite() && self.mu_bar.is_finite()) {
            return Err(InvestorError::Domain("r and μ̄ must be finite".into()));
        }
        Ok(())
    }

    pub fn risk_coefficient(&self) -> f64 {
        hara_risk_coefficient(self.q, self.sigma).expect("validated")
    }

    /// `a = βR − γ`.
    pub fn a(&self) -> f64 {
        self.beta * self.risk_coefficient() - self.gamma
    }

    pub fn x0(&self) -> f64 {
        self.initial.mean()
    }
}

/// Constant-coefficient problem of a fixed-reference scenario.
pub fn to_mfg_problem(s: &InvestorScenario) -> Result<(CoefficientSchedule, TerminalData), InvestorError> {
    s.validate()?;
    let rr = s.risk_coefficient();
    let (br, g, r, m) = (s.beta * rr, s.gamma, s.r, s.mu_bar);
    let schedule =
        CoefficientSchedule::constant(s.horizon, br - g, 2.0 * (g * m - br * r), s.beta * r + br * r * r - g * m * m)?;
    Ok((schedule, TerminalData::new(rr, -2.0 * rr * r, r + rr * r * r)))
}

pub fn mfg_problem(s: &InvestorScenario) -> Result<MfgProblem, InvestorError> {
    let (schedule, terminal) = to_mfg_problem(s)?;
    Ok(MfgProblem::new(schedule, terminal, s.diffusion, s.intensity, s.jump.clone())?)
}

/// `Q* = (rβR − γμ̄)/(βR − γ)`.
pub fn consensus_point(s: &InvestorScenario) -> Result<f64, InvestorError> {
    s.validate()?;
    let br = s.beta * s.risk_coefficient();
    if (br - s.gamma).abs() <= 1e-12 * br.abs().max(s.gamma) {
        return Err(InvestorError::DegenerateCoupling);
    }
    Ok((s.r * br - s.gamma * s.mu_bar) / (br - s.gamma))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Solvability {
    /// `βR − γ < 0` and `R < √((γ − βR)/2)`.
    pub full_horizon: bool,
    /// Largest horizon before `A` blows up, when finite.
    pub max_t: Option<f64>,
    /// Whether `A` stays finite for every horizon, from the exact blow-up distance.
    pub exact_full_horizon: bool,
    /// Whether the numeric Riccati solve completes on `[0, T]`.
    pub complete_on_horizon: bool,
}

impl Solvability {
    pub fn verdicts_agree(&self) -> bool {
        self.full_horizon == self.exact_full_horizon
    }
}

pub fn solvability(s: &InvestorScenario, horizon: f64) -> Result<Solvability, InvestorError> {
    s.validate()?;
    let (a, rr) = (s.a(), s.risk_coefficient());
    let full_horizon = a < 0.0 && rr < (-a / 2.0).sqrt();
    let max_t = blowup_distance(a, rr);
    let scenario = InvestorScenario { horizon, ..s.clone() };
    let complete_on_horizon = solve_numeric(&mfg_problem(&scenario)?, crate::riccati::DEFAULT_STEPS)?.is_complete();
    Ok(Solvability {
        full_horizon,
        max_t: if full_horizon { None } else { max_t },
        exact_full_horizon: max_t.is_none(),
        complete_on_horizon,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpinionRegime {
    /// `a < 0`: opinions settle near the consensus point.
    Consensus,
    /// `a > 0`: the mean opinion oscillates about the consensus point.
    Disagreement,
    /// `a = 0`: no restoring force.
    Drifting,
}

#[derive(Debug, Clone)]
pub struct OpinionDynamics {
    pub path: ExpectationPath,
    pub regime: OpinionRegime,
    pub target: Option<f64>,
}

/// Mean opinion path.
///
/// Complete Riccati solutions go through the quadrature route. When `A`
/// blows up inside the horizon the closed-form `A(0)`, `B(0)` seed the
/// second-order equation, which stays regular through the pole.
pub fn opinion_dynamics(s: &InvestorScenario, steps: usize) -> Result<OpinionDynamics, InvestorError> {
    s.validate()?;
    let a = s.a();
    let regime = if a < 0.0 {
        OpinionRegime::Consensus
    } else if a > 0.0 {
        OpinionRegime::Disagreement
    } else {
        OpinionRegime::Drifting
    };
    let path = match s.reference {
        Reference::Fixed => {
            let problem = mfg_problem(s)?;
            let sol = solve_numeric(&problem, steps)?;
            if sol.is_complete() {
                expectation_quadrature(&sol, s.intensity, s.jump.mean(), s.x0())?
            } else {
                let closed = solve_closed_form_const(&problem, steps)?;
                expectation_ivp(&problem.schedule, &closed, s.intensity, s.jump.mean(), s.x0())?
            }
        }
        Reference::PopulationMean => {
            let rr = s.risk_coefficient();
            let br = s.beta * rr;
            let (_, terminal) = to_mfg_problem(s)?;
            let coupling = MeanCoupling {
                b0: -2.0 * br * s.r,
                b1: 2.0 * s.gamma,
                c0: s.beta * s.r + br * s.r * s.r,
                c2: -s.gamma,
                ..Default::default()
            };
            CoupledProblem {
                a,
                coupling,
                terminal,
                diffusion: s.diffusion,
                intensity: s.intensity,
                jump: &s.jump,
                x0: s.x0(),
                horizon: s.horizon,
                steps,
            }
            .solve()?
            .path
        }
    };
    let target = match (s.reference, regime) {
        (Reference::Fixed, OpinionRegime::Consensus | OpinionRegime::Disagreement) => {
            let (schedule, _) = to_mfg_problem(s)?;
            classify_regime(a, schedule.b.constant_value().expect("constant")).equilibrium
        }
        _ => None,
    };
    Ok(OpinionDynamics { path, regime, target })
}
