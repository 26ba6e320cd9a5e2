//! Scenario runner behind the `jumpmfg` binary: JSON config, subcommands,
//! CSV artifacts and the cross-check table.
//!
//! Exit codes: 0 success, 1 config or I/O error, 2 numerical failure,
//! 3 cross-check failure in `validate`.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::density::{
    char_fn_grid, density_invert, kffp_fd_solve, mean_from_charfn, DensityError, DensityGrid, FourierSpec, InitialLaw,
    XGrid,
};
use crate::exec::Execution;
use crate::expectation::{corollary_closed_form, expectation_ivp, expectation_quadrature, ConstantCase, CoupledProblem, CoupledSolution, MeanCoupling};
use crate::investor::{
    consensus_point, growth_rate, mfg_problem, opinion_dynamics, optimal_fraction, solvability, to_mfg_problem,
    InvestorScenario, Reference,
};
use crate::jump::JumpSpec;
use crate::montecarlo::{simulate_controlled, MonteCarloError, SimulationSpec, DEFAULT_CAP};
use crate::riccati::{
    blowup_distance, solve_closed_form_const, solve_numeric, Coefficient, CoefficientSchedule, MfgProblem,
    RiccatiSolution, SolutionStatus, TerminalData, DEFAULT_STEPS,
};

/// Size of the `--perturb-engine` offset.
pub const PERTURBATION: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("cross-check failed: {0}")]
    CrossCheck(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 1,
            CliError::Numerical(_) => 2,
            CliError::CrossCheck(_) => 3,
        }
    }
}

fn numerical<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Numerical(e.to_string())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub problem: ProblemConfig,
    #[serde(default)]
    pub numerics: NumericsConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub horizon: f64,
    #[serde(default)]
    pub diffusion: f64,
    #[serde(default)]
    pub intensity: f64,
    #[serde(default = "no_jump")]
    pub jump: JumpSpec,
    #[serde(default)]
    pub initial: InitialConfig,
    pub raw: Option<RawConfig>,
    pub investor: Option<InvestorConfig>,
}

fn no_jump() -> JumpSpec {
    JumpSpec::Degenerate { size: 0.0 }
}

/// `std = 0` is a point mass at `mean`.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub mean: f64,
    #[serde(default)]
    pub std: f64,
}

impl InitialConfig {
    pub fn law(&self) -> InitialLaw {
        if self.std > 0.0 {
            InitialLaw::Gaussian { mean: self.mean, std: self.std }
        } else {
            InitialLaw::Delta(self.mean)
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawConfig {
    pub a: Coefficient,
    pub b: Coefficient,
    #[serde(default = "zero_coefficient")]
    pub c: Coefficient,
    pub terminal: TerminalData,
}

fn zero_coefficient() -> Coefficient {
    Coefficient::Constant(0.0)
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InvestorConfig {
    pub r: f64,
    pub sigma: f64,
    pub q: f64,
    pub beta: f64,
    pub gamma: f64,
    pub mu_bar: f64,
    #[serde(default)]
    pub reference: Reference,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NumericsConfig {
    pub riccati_steps: usize,
    pub montecarlo: MonteCarloConfig,
    pub density: DensityConfig,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self { riccati_steps: DEFAULT_STEPS, montecarlo: MonteCarloConfig::default(), density: DensityConfig::default() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MonteCarloConfig {
    pub paths: usize,
    pub steps: usize,
    pub seed: u64,
    pub cap: f64,
}

impl Default for MonteCarloConfig {
    fn default() -> Self {
        Self { paths: 20_000, steps: 1000, seed: 0, cap: DEFAULT_CAP }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DensityConfig {
    /// Grid points, shared by the transform and finite-difference grids.
    pub n: usize,
    pub dx: f64,
    /// Grid centre; the initial mean when absent.
    pub center: Option<f64>,
    pub fd_steps: usize,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { n: 1024, dx: 0.02, center: None, fd_steps: 2000 }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    /// Report times; `[T/2, T]` when empty.
    pub times: Vec<f64>,
    /// Also write the characteristic-function grids.
    pub charfn: bool,
}

pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: ScenarioConfig =
        serde_path_to_error::deserialize(de).map_err(|e| CliError::Config(format!("{}: {}", e.path(), e.inner())))?;
    validate_config(&cfg)?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_config(&text)
}

fn field(path: &str, msg: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("{path}: {msg}"))
}

fn validate_config(cfg: &ScenarioConfig) -> Result<(), CliError> {
    let p = &cfg.problem;
    if !(p.horizon > 0.0 && p.horizon.is_finite()) {
        return Err(field("problem.horizon", "must be finite and > 0"));
    }
    if !(p.diffusion >= 0.0 && p.diffusion.is_finite()) {
        return Err(field("problem.diffusion", "must be finite and >= 0"));
    }
    if !(p.intensity >= 0.0 && p.intensity.is_finite()) {
        return Err(field("problem.intensity", "must be finite and >= 0"));
    }
    p.jump.build().map_err(|e| field("problem.jump", e))?;
    if !(p.initial.std >= 0.0 && p.initial.mean.is_finite() && p.initial.std.is_finite()) {
        return Err(field("problem.initial", "need finite mean and std >= 0"));
    }
    match (&p.raw, &p.investor) {
        (Some(raw), None) => {
            for (name, c) in [("a", &raw.a), ("b", &raw.b), ("c", &raw.c)] {
                CoefficientSchedule::new(p.horizon, c.clone(), zero_coefficient(), zero_coefficient())
                    .map_err(|e| field(&format!("problem.raw.{name}"), e))?;
            }
            let t = raw.terminal;
            if !(t.a.is_finite() && t.b.is_finite() && t.c.is_finite()) {
                return Err(field("problem.raw.terminal", "values must be finite"));
            }
        }
        (None, Some(_)) => {
            investor_scenario(cfg)?.validate().map_err(|e| field("problem.investor", e))?;
        }
        _ => return Err(field("problem", "exactly one of `raw` or `investor` must be given")),
    }
    let n = &cfg.numerics;
    if n.riccati_steps < crate::riccati::MIN_STEPS {
        return Err(field("numerics.riccati_steps", format!("must be >= {}", crate::riccati::MIN_STEPS)));
    }
    if n.montecarlo.paths < 100 {
        return Err(field("numerics.montecarlo.paths", "must be >= 100"));
    }
    if n.montecarlo.steps < 100 {
        return Err(field("numerics.montecarlo.steps", "must be >= 100"));
    }
    if !(n.montecarlo.cap > 0.0) {
        return Err(field("numerics.montecarlo.cap", "must be > 0"));
    }
    if !n.density.n.is_power_of_two() || n.density.n < 4 {
        return Err(field("numerics.density.n", "must be a power of two >= 4"));
    }
    if !(n.density.dx > 0.0 && n.density.dx.is_finite()) {
        return Err(field("numerics.density.dx", "must be finite and > 0"));
    }
    if n.density.fd_steps == 0 {
        return Err(field("numerics.density.fd_steps", "must be >= 1"));
    }
    for (i, t) in cfg.output.times.iter().enumerate() {
        if !(*t >= 0.0 && *t <= p.horizon) {
            return Err(field(&format!("output.times[{i}]"), format!("{t} outside [0, {}]", p.horizon)));
        }
    }
    Ok(())
}

fn investor_scenario(cfg: &ScenarioConfig) -> Result<InvestorScenario, CliError> {
    let p = &cfg.problem;
    let inv = p.investor.as_ref().ok_or_else(|| field("problem.investor", "missing"))?;
    Ok(InvestorScenario {
        r: inv.r,
        sigma: inv.sigma,
        q: inv.q,
        beta: inv.beta,
        gamma: inv.gamma,
        mu_bar: inv.mu_bar,
        diffusion: p.diffusion,
        intensity: p.intensity,
        jump: p.jump.build().map_err(|e| field("problem.jump", e))?,
        horizon: p.horizon,
        initial: p.initial.law(),
        reference: inv.reference,
    })
}

/// Everything the engines need, resolved from a config.
pub struct Scenario {
    pub problem: MfgProblem,
    pub initial: InitialLaw,
    pub investor: Option<InvestorScenario>,
    pub coupled: Option<CoupledSolution>,
    pub steps: usize,
}

impl Scenario {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self, CliError> {
        let p = &cfg.problem;
        let steps = cfg.numerics.riccati_steps;
        let initial = p.initial.law();
        if let Some(raw) = &p.raw {
            let schedule = CoefficientSchedule::new(p.horizon, raw.a.clone(), raw.b.clone(), raw.c.clone())
                .map_err(|e| field("problem.raw", e))?;
            let jump = p.jump.build().map_err(|e| field("problem.jump", e))?;
            let problem = MfgProblem::new(schedule, raw.terminal, p.diffusion, p.intensity, jump)
                .map_err(|e| field("problem", e))?;
            return Ok(Self { problem, initial, investor: None, coupled: None, steps });
        }
        let s = investor_scenario(cfg)?;
        let (problem, coupled) = match s.reference {
            Reference::Fixed => (mfg_problem(&s).map_err(|e| field("problem.investor", e))?, None),
            Reference::PopulationMean => {
                let (_, terminal) = to_mfg_problem(&s).map_err(|e| field("problem.investor", e))?;
                let br = s.beta * s.risk_coefficient();
                let coupling = MeanCoupling {
                    b0: -2.0 * br * s.r,
                    b1: 2.0 * s.gamma,
                    c0: s.beta * s.r + br * s.r * s.r,
                    c2: -s.gamma,
                    ..Default::default()
                };
                let sol = CoupledProblem {
                    a: s.a(),
                    coupling,
                    terminal,
                    diffusion: s.diffusion,
                    intensity: s.intensity,
                    jump: &s.jump,
                    x0: s.x0(),
                    horizon: s.horizon,
                    steps,
                }
                .solve()
                .map_err(numerical)?;
                (sol.problem.clone(), Some(sol))
            }
        };
        Ok(Self { problem, initial, investor: Some(s), coupled, steps })
    }

    pub fn x0(&self) -> f64 {
        self.initial.mean()
    }

    pub fn riccati(&self) -> Result<RiccatiSolution, CliError> {
        match &self.coupled {
            Some(c) => Ok(c.riccati.clone()),
            None => solve_numeric(&self.problem, self.steps).map_err(numerical),
        }
    }

    fn constants(&self) -> Option<(f64, f64, f64)> {
        let s = &self.problem.schedule;
        Some((s.a.constant_value()?, s.b.constant_value()?, s.c.constant_value()?))
    }

    fn jump_mean(&self) -> f64 {
        self.problem.jump.mean()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Engine {
    Riccati,
    Quadrature,
    Ode,
    Closed,
    Charfn,
    Transform,
    Fd,
    Montecarlo,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub quiet: bool,
    /// Offsets one engine's output by [`PERTURBATION`] inside `validate`.
    pub perturb: Option<Engine>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Riccati,
    Expect,
    Density,
    Simulate,
    Investor,
    Validate,
}

struct Context<'a> {
    cfg: &'a ScenarioConfig,
    opts: &'a RunOptions,
    out: PathBuf,
}

impl Context<'_> {
    fn times(&self) -> Vec<f64> {
        if self.cfg.output.times.is_empty() {
            let t = self.cfg.problem.horizon;
            vec![0.5 * t, t]
        } else {
            self.cfg.output.times.clone()
        }
    }

    fn seed(&self) -> u64 {
        self.opts.seed.unwrap_or(self.cfg.numerics.montecarlo.seed)
    }

    fn write(&self, name: &str, body: &str) -> Result<(), CliError> {
        let path = self.out.join(name);
        fs::write(&path, body).map_err(io_err(&path))
    }

    fn write_with<F>(&self, name: &str, f: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>,
    {
        let path = self.out.join(name);
        let file = fs::File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(file);
        f(&mut w).and_then(|_| w.flush()).map_err(io_err(&path))
    }

    fn say(&self, text: &str) {
        if !self.opts.quiet {
            print!("{text}");
        }
    }

    fn perturbation(&self, engine: Engine) -> f64 {
        if self.opts.perturb == Some(engine) {
            PERTURBATION
        } else {
            0.0
        }
    }
}

pub fn run(cmd: Command, cfg: &ScenarioConfig, opts: &RunOptions) -> Result<(), CliError> {
    let out = opts.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let ctx = Context { cfg, opts, out };
    match cmd {
        Command::Riccati => cmd_riccati(&ctx),
        Command::Expect => cmd_expect(&ctx),
        Command::Density => cmd_density(&ctx),
        Command::Simulate => cmd_simulate(&ctx),
        Command::Investor => cmd_investor(&ctx),
        Command::Validate => cmd_validate(&ctx),
    }
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn cmd_riccati(ctx: &Context) -> Result<(), CliError> {
    let scn = Scenario::from_config(ctx.cfg)?;
    let sol = scn.riccati()?;
    let mut csv = String::from("t,A,B,C\n");
    for i in 0..=sol.steps() {
        let _ = writeln!(csv, "{},{},{},{}", num(sol.time(i)), num(sol.a()[i]), num(sol.b()[i]), num(sol.c()[i]));
    }
    ctx.write("riccati.csv", &csv)?;
    let mut report = String::new();
    let horizon = sol.horizon();
    let exact = scn.problem.schedule.a.constant_value().and_then(|a| blowup_distance(a, scn.problem.terminal.a));
    match sol.status() {
        SolutionStatus::Complete => {
            let _ = writeln!(report, "status: complete on [0, {horizon}]");
        }
        SolutionStatus::BlowUp { time } => {
            let _ = writeln!(report, "status: blow-up");
            let _ = writeln!(report, "blow_up_time: {}", num(time));
            let _ = writeln!(report, "distance_from_T: {}", num(horizon - time));
        }
    }
    match exact {
        Some(d) if d <= horizon => {
            let _ = writeln!(report, "closed_form_blow_up_time: {}", num(horizon - d));
        }
        Some(d) => {
            let _ = writeln!(report, "closed_form_blow_up_distance: {} (beyond t = 0)", num(d));
        }
        None => {
            let _ = writeln!(report, "closed_form_blow_up: none");
        }
    }
    ctx.write("riccati_report.txt", &report)?;
    ctx.say(&report);
    match sol.status() {
        SolutionStatus::Complete => Ok(()),
        SolutionStatus::BlowUp { time } => {
            Err(CliError::Numerical(format!("Riccati solution blows up at t = {time} inside [0, {horizon}]")))
        }
    }
}

struct ExpectTable {
    times: Vec<f64>,
    quadrature: Option<Vec<f64>>,
    ode: Option<Vec<f64>>,
    closed: Option<Vec<f64>>,
}

impl ExpectTable {
    /// Most direct available path.
    fn reference(&self) -> &[f64] {
        self.quadrature.as_deref().or(self.ode.as_deref()).or(self.closed.as_deref()).expect("at least one route")
    }
}

fn expect_table(scn: &Scenario, sol: &RiccatiSolution) -> Result<ExpectTable, CliError> {
    let (lam, m, x0) = (scn.problem.intensity, scn.jump_mean(), scn.x0());
    let quadrature = match &scn.coupled {
        Some(c) => Some(c.path.values().to_vec()),
        None if sol.is_complete() => Some(expectation_quadrature(sol, lam, m, x0).map_err(numerical)?.values().to_vec()),
        None => None,
    };
    let ode_sol = if sol.is_complete() {
        Some(sol.clone())
    } else if scn.constants().is_some() {
        Some(solve_closed_form_const(&scn.problem, sol.steps()).map_err(numerical)?)
    } else {
        None
    };
    let ode = ode_sol
        .and_then(|s| expectation_ivp(&scn.problem.schedule, &s, lam, m, x0).ok())
        .map(|p| p.values().to_vec());
    let closed = match &scn.coupled {
        Some(c) => Some(c.closed_form.values().to_vec()),
        None => {
            let s = &scn.problem.schedule;
            match (s.a.constant_value(), s.b.constant_value()) {
                (Some(a), Some(b)) => {
                    let case = ConstantCase {
                        a,
                        b,
                        terminal: scn.problem.terminal,
                        jump_drift: lam * m,
                        horizon: sol.horizon(),
                        x0,
                    };
                    case.terminal_mean()
                        .and_then(|et| corollary_closed_form(a, b, 0.0, 0.0, x0, et, sol.horizon(), sol.steps()))
                        .ok()
                        .map(|p| p.values().to_vec())
                }
                _ => None,
            }
        }
    };
    if quadrature.is_none() && ode.is_none() && closed.is_none() {
        return Err(CliError::Numerical("no expectation route applies: the Riccati solution blows up and a(t) is not constant".into()));
    }
    Ok(ExpectTable { times: sol.times(), quadrature, ode, closed })
}

fn cmd_expect(ctx: &Context) -> Result<(), CliError> {
    let scn = Scenario::from_config(ctx.cfg)?;
    let sol = scn.riccati()?;
    let table = expect_table(&scn, &sol)?;
    ctx.write_with("expect.csv", |w| {
        writeln!(w, "t,E_quadrature,E_ode,E_closed")?;
        for (i, t) in table.times.iter().enumerate() {
            let pick = |v: &Option<Vec<f64>>| opt_num(v.as_ref().map(|v| v[i]));
            writeln!(w, "{},{},{},{}", num(*t), pick(&table.quadrature), pick(&table.ode), pick(&table.closed))?;
        }
        Ok(())
    })?;
    let last = table.times.len() - 1;
    ctx.say(&format!("E(T) = {}\n", num(table.reference()[last])));
    Ok(())
}

/// Requested times moved to the nearest Riccati node.
fn node_times(sol: &RiccatiSolution, times: &[f64]) -> Vec<f64> {
    times.iter().map(|t| sol.time(((t / sol.dt()).round() as usize).min(sol.steps()))).collect()
}

fn time_tag(t: f64) -> String {
    format!("t{t:.6}")
}

fn density_center(ctx: &Context, scn: &Scenario) -> f64 {
    ctx.cfg.numerics.density.center.unwrap_or(scn.x0())
}

fn transform_density(
    ctx: &Context,
    scn: &Scenario,
    sol: &RiccatiSolution,
    times: &[f64],
) -> Result<(crate::density::CharFnGrid, Result<DensityGrid, DensityError>), CliError> {
    let d = &ctx.cfg.numerics.density;
    let spec = FourierSpec::from_spacing(d.n, d.dx, density_center(ctx, scn));
    let law = scn.initial;
    let p = &scn.problem;
    let cf = char_fn_grid(sol, &p.jump, p.diffusion, p.intensity, |w| law.char_fn(w), times, spec, Execution::Parallel)
        .map_err(numerical)?;
    let inverted = density_invert(&cf);
    Ok((cf, inverted))
}

fn fd_density(ctx: &Context, scn: &Scenario, sol: &RiccatiSolution, times: &[f64]) -> Option<Result<DensityGrid, CliError>> {
    let d = &ctx.cfg.numerics.density;
    scn.initial.density(0.0)?;
    let grid = XGrid::centred(d.n, d.dx, density_center(ctx, scn));
    let m0: Vec<f64> = grid.xs().iter().map(|x| scn.initial.density(*x).unwrap()).collect();
    let p = &scn.problem;
    Some(kffp_fd_solve(sol, grid, &m0, p.diffusion, p.intensity, &p.jump, d.fd_steps, times).map_err(numerical))
}

fn cmd_density(ctx: &Context) -> Result<(), CliError> {
    let scn = Scenario::from_config(ctx.cfg)?;
    let sol = scn.riccati()?;
    if !sol.is_complete() {
        return Err(CliError::Numerical("densities need a Riccati solution that is complete on [0, T]".into()));
    }
    let times = node_times(&sol, &ctx.times());
    let (cf, inverted) = transform_density(ctx, &scn, &sol, &times)?;
    if ctx.cfg.output.charfn {
        for (s, t) in times.iter().enumerate() {
            ctx.write_with(&format!("charfn_{}.csv", time_tag(*t)), |w| cf.write_csv(s, w))?;
        }
    }
    let inverted = inverted.map_err(numerical)?;
    for (s, t) in times.iter().enumerate() {
        ctx.write_with(&format!("density_transform_{}.csv", time_tag(*t)), |w| inverted.write_csv(s, w))?;
    }
    match fd_density(ctx, &scn, &sol, &times) {
        Some(fd) => {
            let fd = fd?;
            for (s, t) in fd.times.iter().enumerate() {
                ctx.write_with(&format!("density_fd_{}.csv", time_tag(*t)), |w| fd.write_csv(s, w))?;
            }
        }
        None => ctx.say("finite-difference density skipped: the initial law is a point mass\n"),
    }
    Ok(())
}

fn simulation_spec(ctx: &Context, times: &[f64]) -> SimulationSpec {
    let mc = &ctx.cfg.numerics.montecarlo;
    SimulationSpec { paths: mc.paths, steps: mc.steps, seed: ctx.seed(), cap: mc.cap, checkpoints: times.to_vec() }
}

fn mc_error(e: MonteCarloError) -> CliError {
    match e {
        MonteCarloError::InvalidSpec(_) | MonteCarloError::CheckpointOffGrid(_) => {
            field("output.times / numerics.montecarlo", e)
        }
        other => numerical(other),
    }
}

fn cmd_simulate(ctx: &Context) -> Result<(), CliError> {
    let scn = Scenario::from_config(ctx.cfg)?;
    let sol = scn.riccati()?;
    let spec = simulation_spec(ctx, &ctx.times());
    let law = scn.initial;
    let p = &scn.problem;
    let stats = simulate_controlled(&sol, |r| law.sample(r), p.diffusion, p.intensity, &p.jump, &spec, Execution::Parallel)
        .map_err(mc_error)?;
    ctx.write_with("simulate.csv", |w| stats.write_csv(w))?;
    if let Some(s) = stats.times.len().checked_sub(1) {
        ctx.say(&format!("mean at t = {}: {} ± {}\n", num(stats.times[s]), num(stats.mean[s]), num(stats.stderr[s])));
    }
    Ok(())
}

fn cmd_investor(ctx: &Context) -> Result<(), CliError> {
    if ctx.cfg.problem.investor.is_none() {
        return Err(field("problem.investor", "the investor subcommand needs an investor block"));
    }
    let s = investor_scenario(ctx.cfg)?;
    let steps = ctx.cfg.numerics.riccati_steps;
    let dyn_ = opinion_dynamics(&s, steps).map_err(numerical)?;
    let verdict = solvability(&s, s.horizon).map_err(numerical)?;
    let (sched, term) = to_mfg_problem(&s).map_err(numerical)?;
    let mut r = String::new();
    let _ = writeln!(r, "regime: {:?}", dyn_.regime);
    let _ = writeln!(r, "target: {}", opt_num(dyn_.target));
    let _ = writeln!(r, "consensus_point: {}", consensus_point(&s).map(num).unwrap_or_else(|e| e.to_string()));
    let _ = writeln!(r, "risk_coefficient_R: {}", num(s.risk_coefficient()));
    let _ = writeln!(
        r,
        "coefficients: a = {}, b = {}, c = {}",
        num(sched.a.constant_value().unwrap()),
        num(sched.b.constant_value().unwrap()),
        num(sched.c.constant_value().unwrap())
    );
    let _ = writeln!(r, "terminal: A_T = {}, B_T = {}, C_T = {}", num(term.a), num(term.b), num(term.c));
    let _ = writeln!(r, "optimal_fraction_at_mu_bar: {}", num(optimal_fraction(s.mu_bar, s.r, s.sigma, s.q).map_err(numerical)?));
    let _ = writeln!(r, "growth_rate_at_mu_bar: {}", num(growth_rate(s.mu_bar, s.r, s.sigma, s.q).map_err(numerical)?));
    let _ = writeln!(
        r,
        "solvability: full_horizon = {}, exact_full_horizon = {}, complete_on_horizon = {}, max_T = {}",
        verdict.full_horizon,
        verdict.exact_full_horizon,
        verdict.complete_on_horizon,
        verdict.max_t.map(num).unwrap_or_else(|| "unbounded".into())
    );
    if !verdict.verdicts_agree() {
        let _ = writeln!(r, "note: the closed-form condition and the exact blow-up analysis disagree");
    }
    let _ = writeln!(r, "initial_mean: {}", num(dyn_.path.initial()));
    let _ = writeln!(r, "midpoint_mean: {}", num(dyn_.path.at(0.5 * s.horizon)));
    let _ = writeln!(r, "terminal_mean: {}", num(dyn_.path.terminal()));
    ctx.write("investor_report.txt", &r)?;
    ctx.write_with("investor_expectation.csv", |w| {
        writeln!(w, "t,E")?;
        for (t, e) in dyn_.path.times().iter().zip(dyn_.path.values()) {
            writeln!(w, "{},{}", num(*t), num(*e))?;
        }
        Ok(())
    })?;
    ctx.say(&r);
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: Option<f64>,
    pub tolerance: f64,
    pub note: String,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value: Some(value), tolerance, note: String::new() }
    }

    fn skip(name: impl Into<String>, note: impl Into<String>) -> Self {
        Self { name: name.into(), value: None, tolerance: f64::NAN, note: note.into() }
    }

    pub fn status(&self) -> &'static str {
        match self.value {
            None => "SKIP",
            Some(v) if v <= self.tolerance => "PASS",
            Some(_) => "FAIL",
        }
    }
}

fn sup_diff(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn shifted(v: &[f64], by: f64) -> Vec<f64> {
    v.iter().map(|x| x + by).collect()
}

/// Mean of the Euler scheme used by the simulator, without sampling noise.
fn euler_mean(sol: &RiccatiSolution, lam_m: f64, x0: f64, steps: usize, at: &[f64]) -> Result<Vec<f64>, CliError> {
    let dt = sol.horizon() / steps as f64;
    let mut e = x0;
    let mut path = vec![e];
    for n in 0..steps {
        let (a, b, _) = sol.coefficients_at(n as f64 * dt).map_err(numerical)?;
        e += (2.0 * a * e + b + lam_m) * dt;
        path.push(e);
    }
    Ok(at.iter().map(|t| path[((t / dt).round() as usize).min(steps)]).collect())
}

pub fn validation_checks(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<Vec<Check>, CliError> {
    let ctx = Context { cfg, opts, out: PathBuf::new() };
    let scn = Scenario::from_config(cfg)?;
    let sol = scn.riccati()?;
    let p = &scn.problem;
    let (lam, m, x0) = (p.intensity, scn.jump_mean(), scn.x0());
    let mut checks = Vec::new();

    let dr = ctx.perturbation(Engine::Riccati);
    let (ra, rb, rc) = (shifted(sol.a(), dr), shifted(sol.b(), dr), shifted(sol.c(), dr));
    let n = sol.steps();
    let term = p.terminal;
    checks.push(Check::new(
        "riccati_terminal",
        (ra[n] - term.a).abs().max((rb[n] - term.b).abs()).max((rc[n] - term.c).abs()),
        1e-12,
    ));
    if scn.constants().is_some() && sol.is_complete() {
        let cf = solve_closed_form_const(p, n).map_err(numerical)?;
        let d = sup_diff(&ra, cf.a()).max(sup_diff(&rb, cf.b())).max(sup_diff(&rc, cf.c()));
        checks.push(Check::new("riccati_closed_vs_numeric", d, 1e-6));
    } else {
        checks.push(Check::skip("riccati_closed_vs_numeric", "needs constant coefficients and no blow-up"));
    }

    let table = expect_table(&scn, &sol)?;
    let quad = table.quadrature.as_ref().map(|v| shifted(v, ctx.perturbation(Engine::Quadrature)));
    let ode = table.ode.as_ref().map(|v| shifted(v, ctx.perturbation(Engine::Ode)));
    let closed = table.closed.as_ref().map(|v| shifted(v, ctx.perturbation(Engine::Closed)));
    let reference = quad.clone().or(ode.clone()).or(closed.clone()).expect("at least one route");
    checks.push(Check::new("expect_initial_mean", (reference[0] - x0).abs(), 1e-12));
    let pairs = [("expect_quadrature_vs_ode", &quad, &ode), ("expect_quadrature_vs_closed", &quad, &closed), ("expect_ode_vs_closed", &ode, &closed)];
    for (name, x, y) in pairs {
        match (x, y) {
            (Some(x), Some(y)) => checks.push(Check::new(name, sup_diff(x, y), 1e-6)),
            _ => checks.push(Check::skip(name, "route not applicable")),
        }
    }

    let times = node_times(&sol, &ctx.times());
    let e_at = |t: f64| reference[((t / sol.dt()).round() as usize).min(n)];
    if !sol.is_complete() {
        checks.push(Check::skip("density_and_montecarlo", "Riccati solution blows up inside [0, T]"));
        return Ok(checks);
    }
    let law = scn.initial;
    for t in &times {
        let mean = mean_from_charfn(&sol, &p.jump, p.diffusion, lam, |w| law.char_fn(w), *t).map_err(numerical)?
            + ctx.perturbation(Engine::Charfn);
        checks.push(Check::new(format!("charfn_mean_{}", time_tag(*t)), (mean - e_at(*t)).abs(), 1e-5));
    }

    let (_, inverted) = transform_density(&ctx, &scn, &sol, &times)?;
    let inverted = match inverted {
        Ok(mut g) => {
            let d = ctx.perturbation(Engine::Transform);
            g.values.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x += d));
            Some(g)
        }
        Err(DensityError::Aliasing { time, edge }) => {
            checks.push(Check::skip(
                "transform_density",
                format!("characteristic function not decayed at t = {time} (|φ| = {edge:.3e}); not grid-representable"),
            ));
            None
        }
        Err(e) => return Err(numerical(e)),
    };
    if let Some(g) = &inverted {
        for (s, t) in times.iter().enumerate() {
            checks.push(Check::new(format!("transform_mass_{}", time_tag(*t)), (g.mass(s) - 1.0).abs(), 1e-6));
            checks.push(Check::new(format!("transform_mean_{}", time_tag(*t)), (g.first_moment(s) - e_at(*t)).abs(), 1e-4));
        }
    }
    match fd_density(&ctx, &scn, &sol, &times) {
        Some(fd) => {
            let mut fd = fd?;
            let d = ctx.perturbation(Engine::Fd);
            fd.values.iter_mut().for_each(|v| v.iter_mut().for_each(|x| *x += d));
            for (s, t) in fd.times.iter().enumerate() {
                let tag = time_tag(times[s]);
                checks.push(Check::new(format!("fd_mass_{tag}"), (fd.mass(s) - 1.0).abs(), 1e-4));
                checks.push(Check::new(format!("fd_mean_{tag}"), (fd.first_moment(s) - e_at(*t)).abs(), 1e-3));
                if let Some(g) = &inverted {
                    checks.push(Check::new(format!("fd_vs_transform_l1_{tag}"), fd.l1_distance(s, g, s), 1e-2));
                }
            }
        }
        None => checks.push(Check::skip("fd_density", "initial law is a point mass")),
    }

    let spec = simulation_spec(&ctx, &times);
    let stats = simulate_controlled(&sol, |r| law.sample(r), p.diffusion, lam, &p.jump, &spec, Execution::Parallel)
        .map_err(mc_error)?;
    let bias = euler_mean(&sol, lam * m, x0, spec.steps, &stats.times)?;
    for (s, t) in stats.times.iter().enumerate() {
        let target = e_at(*t);
        let mean = stats.mean[s] + ctx.perturbation(Engine::Montecarlo);
        let tol = 4.0 * stats.stderr[s] + (bias[s] - target).abs() + 1e-12;
        let mut c = Check::new(format!("montecarlo_mean_{}", time_tag(*t)), (mean - target).abs(), tol);
        c.note = "4 stderr + Euler bias".into();
        checks.push(c);
    }
    Ok(checks)
}

fn cmd_validate(ctx: &Context) -> Result<(), CliError> {
    let checks = validation_checks(ctx.cfg, ctx.opts)?;
    let mut csv = String::from("check,value,tolerance,status,note\n");
    let mut table = String::new();
    for c in &checks {
        let _ = writeln!(csv, "{},{},{},{},{}", c.name, opt_num(c.value), if c.value.is_some() { num(c.tolerance) } else { String::new() }, c.status(), c.note);
        let value = c.value.map(|v| format!("{v:.3e}")).unwrap_or_else(|| "-".into());
        let tol = if c.value.is_some() { format!("{:.3e}", c.tolerance) } else { "-".into() };
        let _ = writeln!(table, "{:<4}  {:<34} {:>10} <= {:>10}  {}", c.status(), c.name, value, tol, c.note);
    }
    ctx.write("validate.csv", &csv)?;
    ctx.say(&table);
    let failed: Vec<&str> = checks.iter().filter(|c| c.status() == "FAIL").map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::CrossCheck(failed.join(", ")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const RAW: &str = r#"{
        "problem": {
            "horizon": 1.0,
            "raw": { "a": 0.0, "b": 0.0, "terminal": { "A": 0.0, "B": 0.0, "C": 0.0 } }
        }
    }"#;

    #[test]
    fn minimal_config_defaults() {
        let cfg = parse_config(RAW).unwrap();
        assert_eq!(cfg.numerics.riccati_steps, DEFAULT_STEPS);
        assert_eq!(cfg.numerics.montecarlo.paths, 20_000);
        assert!(matches!(cfg.problem.jump, JumpSpec::Degenerate { size } if size == 0.0));
        assert_eq!(cfg.problem.initial.law(), InitialLaw::Delta(0.0));
    }

    #[test]
    fn errors_carry_field_paths() {
        let bad = RAW.replace("\"horizon\": 1.0", "\"horizon\": \"x\"");
        let e = parse_config(&bad).unwrap_err().to_string();
        assert!(e.contains("problem.horizon"), "{e}");
        let bad = RAW.replace("\"horizon\": 1.0", "\"horizon\": -1.0");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("problem.horizon"));
        let bad = RAW.replace("\"a\": 0.0", "\"a\": 0.0, \"extra\": 1");
        assert!(parse_config(&bad).unwrap_err().to_string().contains("problem.raw"));
        let both = RAW.replace(
            "\"raw\"",
            "\"investor\": {\"r\":0,\"sigma\":1,\"q\":0,\"beta\":0,\"gamma\":1,\"mu_bar\":0}, \"raw\"",
        );
        let e = parse_config(&both).unwrap_err();
        assert_eq!(e.exit_code(), 1);
        assert!(e.to_string().contains("exactly one"));
        let inv = r#"{"problem":{"horizon":1,"investor":{"r":0,"sigma":1,"q":1.5,"beta":0,"gamma":1,"mu_bar":0}}}"#;
        assert!(parse_config(inv).unwrap_err().to_string().contains("problem.investor"));
        let grid = r#"{"problem":{"horizon":1,"raw":{"a":0,"b":0,"terminal":{"A":0,"B":0,"C":0}}},
                       "numerics":{"density":{"n":1000}}}"#;
        assert!(parse_config(grid).unwrap_err().to_string().contains("numerics.density.n"));
    }

    #[test]
    fn trivial_scenario_checks_pass() {
        let cfg = parse_config(
            r#"{"problem":{"horizon":1,"initial":{"mean":0.3,"std":0.05},
                "raw":{"a":0,"b":0,"terminal":{"A":0,"B":0,"C":0}}},
               "numerics":{"riccati_steps":256,"montecarlo":{"paths":2000,"steps":100},
                           "density":{"n":512,"dx":0.005,"fd_steps":100}}}"#,
        )
        .unwrap();
        let checks = validation_checks(&cfg, &RunOptions::default()).unwrap();
        for c in &checks {
            assert_ne!(c.status(), "FAIL", "{c:?}");
        }
        assert!(checks.iter().filter(|c| c.status() == "PASS").count() > 10);
    }
}
