//! Monte Carlo simulation of the controlled jump-diffusion under the optimal
//! feedback drift, as an independent oracle for the expectation path.
//!
//! Euler step: `X ← X + (2A(tₙ)X + B(tₙ))Δt + δ√Δt ξ + Σ_{j≤K} Z_j` with
//! `K ~ Poisson(λΔt)`.
//!
//! Path `i` draws from its own ChaCha8 stream seeded with
//! `splitmix64(seed ^ splitmix64(i))`. Paths are reduced in chunks of
//! [`CHUNK`] in index order, so sequential and parallel runs agree bit for bit.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::jump::JumpDistribution;
use crate::riccati::{RiccatiError, RiccatiSolution};

pub const CHUNK: usize = 1024;
pub const DEFAULT_CAP: f64 = 1e6;
/// Largest tolerated fraction of escaped paths.
pub const MAX_ESCAPE_FRACTION: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum MonteCarloError {
    #[error("invalid simulation spec: {0}")]
    InvalidSpec(String),
    #[error("Riccati solution is not complete on [0, T]")]
    BlownUp,
    #[error("checkpoint t = {0} is not a multiple of the time step")]
    CheckpointOffGrid(f64),
    #[error("{escaped} of {paths} paths escaped the cap (limit 0.1%)")]
    TooManyEscapes { escaped: usize, paths: usize },
    #[error("t = {0} is not a checkpoint")]
    UnknownCheckpoint(f64),
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub paths: usize,
    /// Steps over the Riccati horizon; `Δt = T/steps`.
    pub steps: usize,
    pub seed: u64,
    pub cap: f64,
    pub checkpoints: Vec<f64>,
}

impl SimulationSpec {
    pub fn new(paths: usize, steps: usize, seed: u64, checkpoints: Vec<f64>) -> Self {
        Self { paths, steps, seed, cap: DEFAULT_CAP, checkpoints }
    }

    fn validate(&self) -> Result<(), MonteCarloError> {
        if self.paths < 100 {
            return Err(MonteCarloError::InvalidSpec(format!("need at least 100 paths, got {}", self.paths)));
        }
        if self.steps < 100 {
            return Err(MonteCarloError::InvalidSpec(format!("need at least 100 steps, got {}", self.steps)));
        }
        if !(self.cap > 0.0) {
            return Err(MonteCarloError::InvalidSpec("cap must be positive".into()));
        }
        if self.checkpoints.is_empty() {
            return Err(MonteCarloError::InvalidSpec("no checkpoints".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsembleStats {
    pub times: Vec<f64>,
    pub mean: Vec<f64>,
    /// Sample standard deviation over `√N`.
    pub stderr: Vec<f64>,
    /// Sample mean of `X²`.
    pub m2: Vec<f64>,
    pub n_escaped: Vec<usize>,
    pub paths: usize,
}

impl PathEnsembleStats {
    pub fn variance(&self, s: usize) -> f64 {
        let n = (self.paths - self.n_escaped[s]) as f64;
        self.stderr[s] * self.stderr[s] * n
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "t,mean,stderr,m2,n_escaped")?;
        for s in 0..self.times.len() {
            writeln!(
                out,
                "{:.16e},{:.16e},{:.16e},{:.16e},{}",
                self.times[s], self.mean[s], self.stderr[s], self.m2[s], self.n_escaped[s]
            )?;
        }
        Ok(())
    }
}

/// `(mean, stderr)` stored for checkpoint `t`.
pub fn estimate_expectation(stats: &PathEnsembleStats, t: f64) -> Result<(f64, f64), MonteCarloError> {
    let s = stats
        .times
        .iter()
        .position(|c| (c - t).abs() <= 1e-12 * (1.0 + t.abs()))
        .ok_or(MonteCarloError::UnknownCheckpoint(t))?;
    Ok((stats.mean[s], stats.stderr[s]))
}

pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn path_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(index)))
}

/// Count, mean and centred sum of squares per checkpoint.
#[derive(Debug, Clone, Copy, Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    fn merge(&mut self, o: &Moments) {
        if o.n == 0.0 {
            return;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        self.mean += d * o.n / n;
        self.m2 += o.m2 + d * d * self.n * o.n / n;
        self.n = n;
    }
}

pub fn simulate_controlled<F>(
    sol: &RiccatiSolution,
    initial: F,
    diffusion: f64,
    intensity: f64,
    jump: &JumpDistribution,
    spec: &SimulationSpec,
    exec: Execution,
) -> Result<PathEnsembleStats, MonteCarloError>
where
    F: Fn(&mut ChaCha8Rng) -> f64 + Sync + Send,
{
    spec.validate()?;
    if !sol.is_complete() {
        return Err(MonteCarloError::BlownUp);
    }
    let dt = sol.horizon() / spec.steps as f64;
    let mut check_steps = Vec::with_capacity(spec.checkpoints.len());
    for &t in &spec.checkpoints {
        let u = t / dt;
        let k = u.round();
        if !(t >= 0.0 && t <= sol.horizon() * (1.0 + 1e-12)) || (u - k).abs() > 1e-6 {
            return Err(MonteCarloError::CheckpointOffGrid(t));
        }
        check_steps.push(k as usize);
    }
    let last = *check_steps.iter().max().unwrap();
    let mut drift = Vec::with_capacity(last);
    for n in 0..last {
        let (a, b, _) = sol.coefficients_at(n as f64 * dt)?;
        drift.push((2.0 * a, b));
    }
    let poisson = if intensity > 0.0 {
        Some(Poisson::new(intensity * dt).map_err(|e| MonteCarloError::InvalidSpec(e.to_string()))?)
    } else {
        None
    };
    let noise = diffusion * dt.sqrt();
    let n_check = check_steps.len();

    let run_chunk = |c: usize| {
        let mut acc = vec![Moments::default(); n_check];
        let mut escaped = vec![0usize; n_check];
        let lo = c * CHUNK;
        let hi = (lo + CHUNK).min(spec.paths);
        for i in lo..hi {
            let mut rng = path_rng(spec.seed, i as u64);
            let mut x = initial(&mut rng);
            let mut alive = true;
            let record = |n: usize, x: f64, alive: bool, acc: &mut [Moments], escaped: &mut [usize]| {
                for (s, k) in check_steps.iter().enumerate() {
                    if *k == n {
                        if alive {
                            acc[s].push(x);
                        } else {
                            escaped[s] += 1;
                        }
                    }
                }
            };
            record(0, x, alive, &mut acc, &mut escaped);
            for (n, (a2, b)) in drift.iter().enumerate() {
                if alive {
                    let xi: f64 = StandardNormal.sample(&mut rng);
                    x += (a2 * x + b) * dt + noise * xi;
                    if let Some(p) = &poisson {
                        let k: f64 = p.sample(&mut rng);
                        for _ in 0..k as u64 {
                            x += jump.sample(&mut rng);
                        }
                    }
                    if !(x.abs() <= spec.cap) {
                        alive = false;
                    }
                }
                record(n + 1, x, alive, &mut acc, &mut escaped);
            }
        }
        (acc, escaped)
    };
    let chunks = spec.paths.div_ceil(CHUNK);
    let results = map_indexed(chunks, exec, run_chunk);

    let mut total = vec![Moments::default(); n_check];
    let mut n_escaped = vec![0usize; n_check];
    for (acc, esc) in &results {
        for s in 0..n_check {
            total[s].merge(&acc[s]);
            n_escaped[s] += esc[s];
        }
    }
    let worst = n_escaped.iter().copied().max().unwrap_or(0);
    if worst as f64 > MAX_ESCAPE_FRACTION * spec.paths as f64 {
        return Err(MonteCarloError::TooManyEscapes { escaped: worst, paths: spec.paths });
    }
    let times = check_steps.iter().map(|k| *k as f64 * dt).collect();
    let mean = total.iter().map(|m| m.mean).collect();
    let stderr = total
        .iter()
        .map(|m| if m.n > 1.0 { (m.m2 / (m.n - 1.0)).sqrt() / m.n.sqrt() } else { 0.0 })
        .collect();
    let m2 = total.iter().map(|m| m.m2 / m.n + m.mean * m.mean).collect();
    Ok(PathEnsembleStats { times, mean, stderr, m2, n_escaped, paths: spec.paths })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::InitialLaw;

    fn zero_sol() -> RiccatiSolution {
        RiccatiSolution::constant(1.0, 0.0, 0.0, 0.0, 256).unwrap()
    }

    fn point(size: f64) -> JumpDistribution {
        JumpDistribution::degenerate(size).unwrap()
    }

    #[test]
    fn deterministic_run_matches_ode() {
        // A = −0.5, B = 1: x' = −x + 1 from 0 gives 1 − e^{−t}
        let sol = RiccatiSolution::constant(1.0, -0.5, 1.0, 0.0, 256).unwrap();
        let spec = SimulationSpec::new(100, 1000, 1, vec![0.5, 1.0]);
        let st = simulate_controlled(&sol, |_| 0.0, 0.0, 0.0, &point(0.0), &spec, Execution::Sequential).unwrap();
        for s in 0..2 {
            assert_eq!(st.stderr[s], 0.0);
            assert!((st.mean[s] - (1.0 - (-st.times[s]).exp())).abs() < 1e-3);
        }
        assert_eq!(estimate_expectation(&st, 1.0).unwrap(), (st.mean[1], 0.0));
        assert!(estimate_expectation(&st, 0.7).is_err());
    }

    #[test]
    fn poisson_and_brownian_means() {
        let spec = SimulationSpec::new(20_000, 200, 7, vec![0.5, 1.0]);
        let st = simulate_controlled(&zero_sol(), |_| 0.0, 0.0, 2.0, &point(1.0), &spec, Execution::Parallel).unwrap();
        for s in 0..2 {
            assert!((st.mean[s] - 2.0 * st.times[s]).abs() < 4.0 * st.stderr[s]);
        }
        let spec = SimulationSpec::new(100_000, 100, 9, vec![1.0]);
        let st = simulate_controlled(&zero_sol(), |_| 0.0, 1.0, 0.0, &point(0.0), &spec, Execution::Parallel).unwrap();
        assert!(st.mean[0].abs() < 4.0 * st.stderr[0]);
        assert!((st.variance(0) - 1.0).abs() < 0.05);
    }

    #[test]
    fn modes_bit_identical_and_seed_sensitive() {
        let sol = RiccatiSolution::constant(1.0, -0.3, 0.2, 0.0, 256).unwrap();
        let jump = JumpDistribution::exponential(2.0).unwrap();
        let law = InitialLaw::Gaussian { mean: 0.1, std: 0.4 };
        let spec = SimulationSpec::new(3000, 100, 42, vec![0.5, 1.0]);
        let run = |exec, spec: &SimulationSpec| {
            simulate_controlled(&sol, |r| law.sample(r), 0.8, 1.0, &jump, spec, exec).unwrap()
        };
        let a = run(Execution::Sequential, &spec);
        assert_eq!(a, run(Execution::Parallel, &spec));
        assert_eq!(a, run(Execution::Sequential, &spec));
        let other = SimulationSpec { seed: 43, ..spec.clone() };
        assert_ne!(a.mean, run(Execution::Sequential, &other).mean);
    }

    #[test]
    fn escapes_are_reported() {
        let sol = RiccatiSolution::constant(1.0, 0.0, 0.0, 0.0, 256).unwrap();
        let spec = SimulationSpec { cap: 0.5, ..SimulationSpec::new(1000, 100, 3, vec![1.0]) };
        let err = simulate_controlled(&sol, |_| 0.0, 1.0, 0.0, &point(0.0), &spec, Execution::Sequential);
        assert!(matches!(err, Err(MonteCarloError::TooManyEscapes { .. })));
    }

    #[test]
    fn spec_validation() {
        let sol = zero_sol();
        let run = |spec: SimulationSpec| simulate_controlled(&sol, |_| 0.0, 0.0, 0.0, &point(0.0), &spec, Execution::Sequential);
        assert!(matches!(run(SimulationSpec::new(99, 100, 0, vec![1.0])), Err(MonteCarloError::InvalidSpec(_))));
        assert!(matches!(run(SimulationSpec::new(100, 99, 0, vec![1.0])), Err(MonteCarloError::InvalidSpec(_))));
        assert!(matches!(run(SimulationSpec::new(100, 100, 0, vec![0.123456])), Err(MonteCarloError::CheckpointOffGrid(_))));
    }

    #[test]
    fn moments_merge_like_one_pass() {
        let xs: Vec<f64> = (0..100).map(|i| ((i * 37) % 11) as f64 * 0.3 - 1.0).collect();
        let mut whole = Moments::default();
        xs.iter().for_each(|x| whole.push(*x));
        let (mut a, mut b) = (Moments::default(), Moments::default());
        xs[..37].iter().for_each(|x| a.push(*x));
        xs[37..].iter().for_each(|x| b.push(*x));
        a.merge(&b);
        assert!((a.mean - whole.mean).abs() < 1e-14 && (a.m2 - whole.m2).abs() < 1e-12);
    }
}
