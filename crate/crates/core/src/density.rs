//! Population density: explicit characteristic function, FFT inversion and
//! a finite-difference forward solver.
//!
//! Convention: `φ(t,ω) = E[e^{iωX_t}]`, `p̂(ω) = E[e^{iωZ}]`. Along the
//! characteristics of the transformed forward equation,
//!
//! ```text
//! φ(t,ω) = φ₀(ω e^{2I(t)}) · exp[−∫_0^t (δ²ℛ²/2 − iB(η)ℛ − λ(p̂(ℛ) − 1)) dη],
//! ℛ = ω e^{2(I(t) − I(η))}.
//! ```

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::FftPlanner;
use thiserror::Error;

use crate::exec::{map_indexed, Execution};
use crate::jump::JumpDistribution;
use crate::quadrature::simpson;
use crate::riccati::{RiccatiError, RiccatiSolution};

/// `|φ|` at the ω-grid edges must stay below this for inversion.
pub const ALIASING_TOL: f64 = 1e-10;
/// Runs abort once this much mass has left the truncated domain.
pub const MAX_MASS_LEAK: f64 = 1e-3;

#[derive(Debug, Error, PartialEq)]
pub enum DensityError {
    #[error("Riccati solution is not complete on [0, T]")]
    BlownUp,
    #[error("t = {0} is not a node of the Riccati grid")]
    TimeOffGrid(f64),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("characteristic function has not decayed at the ω edges at t = {time}: |φ| = {edge:e} (need < {ALIASING_TOL:e})")]
    Aliasing { time: f64, edge: f64 },
    #[error("time step {dt:e} violates the stability limit; admissible Δt ≤ {admissible:e}")]
    Cfl { dt: f64, admissible: f64 },
    #[error("mass leak {leak:e} at t = {time} exceeds {MAX_MASS_LEAK:e}; enlarge the domain")]
    MassLeak { time: f64, leak: f64 },
    #[error(transparent)]
    Riccati(#[from] RiccatiError),
}

/// Law of the initial state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialLaw {
    Delta(f64),
    Gaussian { mean: f64, std: f64 },
}

impl InitialLaw {
    pub fn mean(&self) -> f64 {
        match *self {
            Self::Delta(x) => x,
            Self::Gaussian { mean, .. } => mean,
        }
    }

    pub fn char_fn(&self, omega: f64) -> Complex64 {
        match *self {
            Self::Delta(x) => Complex64::new(0.0, omega * x).exp(),
            Self::Gaussian { mean, std } => Complex64::new(-0.5 * std * std * omega * omega, omega * mean).exp(),
        }
    }

    /// Density at `x`; `None` for the point mass.
    pub fn density(&self, x: f64) -> Option<f64> {
        match *self {
            Self::Delta(_) => None,
            Self::Gaussian { mean, std } => {
                let u = (x - mean) / std;
                Some((-0.5 * u * u).exp() / (std * (2.0 * PI).sqrt()))
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Delta(x) => x,
            Self::Gaussian { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }
}

/// Uniform spatial grid `x_j = start + j·dx`, `j = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XGrid {
    pub start: f64,
    pub dx: f64,
    pub n: usize,
}

impl XGrid {
    /// Grid with `x_{n/2} = center`.
    pub fn centred(n: usize, dx: f64, center: f64) -> Self {
        Self { start: center - (n / 2) as f64 * dx, dx, n }
    }

    pub fn x(&self, j: usize) -> f64 {
        self.start + j as f64 * self.dx
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    pub fn end(&self) -> f64 {
        self.x(self.n - 1)
    }
}

/// Frequency grid `ω_k = (k − n/2)Δω`, paired with the spatial grid of
/// spacing `2π/(nΔω)` centred at `center`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourierSpec {
    pub n: usize,
    pub omega_max: f64,
    pub center: f64,
}

impl FourierSpec {
    /// Spec whose paired spatial grid has spacing `dx`.
    pub fn from_spacing(n: usize, dx: f64, center: f64) -> Self {
        Self { n, omega_max: PI / dx, center }
    }

    pub fn d_omega(&self) -> f64 {
        2.0 * self.omega_max / self.n as f64
    }

    pub fn omega(&self, k: usize) -> f64 {
        (k as f64 - (self.n / 2) as f64) * self.d_omega()
    }

    pub fn x_grid(&self) -> XGrid {
        XGrid::centred(self.n, 2.0 * PI / (self.n as f64 * self.d_omega()), self.center)
    }

    fn validate(&self) -> Result<(), DensityError> {
        if !self.n.is_power_of_two() || self.n < 4 {
            return Err(DensityError::InvalidGrid(format!("N = {} must be a power of two >= 4", self.n)));
        }
        if !(self.omega_max > 0.0 && self.omega_max.is_finite() && self.center.is_finite()) {
            return Err(DensityError::InvalidGrid("need finite omega_max > 0 and finite center".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharFnGrid {
    pub spec: FourierSpec,
    pub times: Vec<f64>,
    /// `values[s][k] = φ(times[s], ω_k)`.
    pub values: Vec<Vec<Complex64>>,
}

impl CharFnGrid {
    pub fn omegas(&self) -> Vec<f64> {
        (0..self.spec.n).map(|k| self.spec.omega(k)).collect()
    }

    /// `max(|φ(ω_0)|, |φ(ω_{n−1})|)` for slice `s`.
    pub fn edge_magnitude(&self, s: usize) -> f64 {
        let v = &self.values[s];
        v[0].norm().max(v[v.len() - 1].norm())
    }

    pub fn write_csv<W: Write>(&self, slice: usize, mut out: W) -> std::io::Result<()> {
        writeln!(out, "omega,re,im")?;
        for (k, v) in self.values[slice].iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e},{:.16e}", self.spec.omega(k), v.re, v.im)?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    pub grid: XGrid,
    pub times: Vec<f64>,
    /// `values[s][j] = m(times[s], x_j)`.
    pub values: Vec<Vec<f64>>,
}

impl DensityGrid {
    pub fn mass(&self, s: usize) -> f64 {
        trapezoid(&self.values[s], self.grid.dx)
    }

    pub fn first_moment(&self, s: usize) -> f64 {
        let xm: Vec<f64> = self.values[s].iter().enumerate().map(|(j, m)| self.grid.x(j) * m).collect();
        trapezoid(&xm, self.grid.dx)
    }

    pub fn variance(&self, s: usize) -> f64 {
        let mean = self.first_moment(s) / self.mass(s);
        let v: Vec<f64> =
            self.values[s].iter().enumerate().map(|(j, m)| (self.grid.x(j) - mean).powi(2) * m).collect();
        trapezoid(&v, self.grid.dx) / self.mass(s)
    }

    /// Linear interpolation of slice `s`, zero outside the grid.
    pub fn interpolate(&self, s: usize, x: f64) -> f64 {
        let u = (x - self.grid.start) / self.grid.dx;
        if u < 0.0 || u > (self.grid.n - 1) as f64 {
            return 0.0;
        }
        let j = (u.floor() as usize).min(self.grid.n - 2);
        let f = u - j as f64;
        (1.0 - f) * self.values[s][j] + f * self.values[s][j + 1]
    }

    /// `∫|m_self − m_other|` on this grid, interpolating `other`.
    pub fn l1_distance(&self, s: usize, other: &DensityGrid, so: usize) -> f64 {
        let d: Vec<f64> = self.values[s]
            .iter()
            .enumerate()
            .map(|(j, m)| (m - other.interpolate(so, self.grid.x(j))).abs())
            .collect();
        trapezoid(&d, self.grid.dx)
    }

    pub fn write_csv<W: Write>(&self, slice: usize, mut out: W) -> std::io::Result<()> {
        writeln!(out, "x,m")?;
        for (j, m) in self.values[slice].iter().enumerate() {
            writeln!(out, "{:.16e},{:.16e}", self.grid.x(j), m)?;
        }
        Ok(())
    }
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    h * (v.iter().sum::<f64>() - 0.5 * (v[0] + v[v.len() - 1]))
}

/// Node-wise data shared by every ω at one time slice.
struct Slice {
    /// `e^{2(I(t) − I(η))}` for nodes `η ≤ t`.
    growth: Vec<f64>,
    b: Vec<f64>,
    dt: f64,
}

impl Slice {
    fn new(sol: &RiccatiSolution, t: f64) -> Result<Self, DensityError> {
        if !sol.is_complete() {
            return Err(DensityError::BlownUp);
        }
        let k = sol.node_index(t).ok_or(DensityError::TimeOffGrid(t))?;
        let integral = sol.integral_a();
        let growth = integral[..=k].iter().map(|i| (2.0 * (integral[k] - i)).exp()).collect();
        Ok(Self { growth, b: sol.b()[..=k].to_vec(), dt: sol.dt() })
    }

    fn eval<F: Fn(f64) -> Complex64>(
        &self,
        jump: &JumpDistribution,
        diffusion: f64,
        intensity: f64,
        initial: &F,
        omega: f64,
    ) -> Complex64 {
        if omega == 0.0 {
            return Complex64::new(1.0, 0.0);
        }
        let half_d2 = 0.5 * diffusion * diffusion;
        let mut re = Vec::with_capacity(self.growth.len());
        let mut im = Vec::with_capacity(self.growth.len());
        for (g, b) in self.growth.iter().zip(&self.b) {
            let r = omega * g;
            let mut v = Complex64::new(half_d2 * r * r, -b * r);
            if intensity != 0.0 {
                v -= intensity * (jump.char_fn(r) - 1.0);
            }
            re.push(v.re);
            im.push(v.im);
        }
        let exponent = Complex64::new(simpson(&re, self.dt), simpson(&im, self.dt));
        initial(omega * self.growth[0]) * (-exponent).exp()
    }
}

/// `φ(t,ω)` for a node time `t` of the Riccati grid.
pub fn char_fn<F: Fn(f64) -> Complex64>(
    sol: &RiccatiSolution,
    jump: &JumpDistribution,
    diffusion: f64,
    intensity: f64,
    initial: F,
    t: f64,
    omega: f64,
) -> Result<Complex64, DensityError> {
    Ok(Slice::new(sol, t)?.eval(jump, diffusion, intensity, &initial, omega))
}

/// `φ` on a frequency grid at several node times, parallel over `ω`.
#[allow(clippy::too_many_arguments)]
pub fn char_fn_grid<F: Fn(f64) -> Complex64 + Sync + Send>(
    sol: &RiccatiSolution,
    jump: &JumpDistribution,
    diffusion: f64,
    intensity: f64,
    initial: F,
    times: &[f64],
    spec: FourierSpec,
    exec: Execution,
) -> Result<CharFnGrid, DensityError> {
    spec.validate()?;
    let mut values = Vec::with_capacity(times.len());
    for &t in times {
        let slice = Slice::new(sol, t)?;
        values.push(map_indexed(spec.n, exec, |k| slice.eval(jump, diffusion, intensity, &initial, spec.omega(k))));
    }
    Ok(CharFnGrid { spec, times: times.to_vec(), values })
}

/// `E[X_t] = −i ∂_ω φ(t,0)` by a fourth-order central difference.
pub fn mean_from_charfn<F: Fn(f64) -> Complex64>(
    sol: &RiccatiSolution,
    jump: &JumpDistribution,
    diffusion: f64,
    intensity: f64,
    initial: F,
    t: f64,
) -> Result<f64, DensityError> {
    let slice = Slice::new(sol, t)?;
    let h = 1e-5;
    let phi = |w: f64| slice.eval(jump, diffusion, intensity, &initial, w);
    let d = (8.0 * (phi(h) - phi(-h)) - (phi(2.0 * h) - phi(-2.0 * h))) / (12.0 * h);
    Ok(d.im)
}

/// Discrete inverse Fourier transform of each slice onto the paired grid.
pub fn density_invert(cf: &CharFnGrid) -> Result<DensityGrid, DensityError> {
    cf.spec.validate()?;
    let n = cf.spec.n;
    let grid = cf.spec.x_grid();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let scale = cf.spec.d_omega() / (2.0 * PI);
    let mut values = Vec::with_capacity(cf.times.len());
    for (s, phi) in cf.values.iter().enumerate() {
        if phi.len() != n {
            return Err(DensityError::InvalidGrid(format!("slice {s} has {} values, expected {n}", phi.len())));
        }
        let edge = cf.edge_magnitude(s);
        if !(edge < ALIASING_TOL) {
            return Err(DensityError::Aliasing { time: cf.times[s], edge });
        }
        // m_j = Δω/2π (−1)^j Σ_k φ_k e^{−iω_k c} (−1)^k e^{−2πi jk/n}
        let mut buf: Vec<Complex64> = phi
            .iter()
            .enumerate()
            .map(|(k, p)| {
                let shift = Complex64::new(0.0, -cf.spec.omega(k) * cf.spec.center).exp();
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                p * shift * sign
            })
            .collect();
        fft.process(&mut buf);
        values.push(
            buf.iter()
                .enumerate()
                .map(|(j, v)| if j % 2 == 0 { scale * v.re } else { -scale * v.re })
                .collect(),
        );
    }
    Ok(DensityGrid { grid, times: cf.times.clone(), values })
}

/// Finite-difference run of the forward equation
/// `∂_t m + ∂_x((2Ax + B)m) = δ²/2 ∂_xx m + λ(∫m(x − z)p(z)dz − m)`.
///
/// One Lie-split step per `Δt`: donor-cell advection, implicit centred
/// diffusion with zero Dirichlet data, explicit jump exchange through the
/// lattice projection of the jump law. Slices are stored at the step
/// nearest to each requested time.
#[allow(clippy::too_many_arguments)]
pub fn kffp_fd_solve(
    sol: &RiccatiSolution,
    grid: XGrid,
    initial: &[f64],
    diffusion: f64,
    intensity: f64,
    jump: &JumpDistribution,
    steps: usize,
    record: &[f64],
) -> Result<DensityGrid, DensityError> {
    if !sol.is_complete() {
        return Err(DensityError::BlownUp);
    }
    if initial.len() != grid.n || grid.n < 3 || !(grid.dx > 0.0) {
        return Err(DensityError::InvalidGrid("initial density must match a grid of n >= 3 points".into()));
    }
    if steps == 0 {
        return Err(DensityError::InvalidGrid("need at least one time step".into()));
    }
    let t_end = record.iter().copied().fold(0.0, f64::max);
    if !(t_end <= sol.horizon()) || record.iter().any(|t| !(*t >= 0.0)) {
        return Err(DensityError::InvalidGrid("record times must lie in [0, T]".into()));
    }
    let dt = t_end / steps as f64;
    let xs = grid.xs();
    let (x_lo, x_hi) = (xs[0], xs[grid.n - 1]);
    let mut vmax = 0.0f64;
    for n in 0..steps {
        let (a, b, _) = sol.coefficients_at(n as f64 * dt)?;
        vmax = vmax.max((2.0 * a * x_lo + b).abs()).max((2.0 * a * x_hi + b).abs());
    }
    let mut admissible = if vmax > 0.0 { grid.dx / vmax } else { f64::INFINITY };
    if intensity > 0.0 {
        admissible = admissible.min(1.0 / intensity);
    }
    if dt > admissible {
        return Err(DensityError::Cfl { dt, admissible });
    }

    let record_steps: Vec<usize> =
        record.iter().map(|t| if t_end > 0.0 { (t / dt).round() as usize } else { 0 }).collect();
    let weights = if intensity > 0.0 { jump.lattice_weights(grid.dx) } else { Vec::new() };
    let mass0 = trapezoid(initial, grid.dx);
    let mut m = initial.to_vec();
    let mut slices: Vec<Option<Vec<f64>>> = vec![None; record.len()];
    let store = |step: usize, m: &[f64], slices: &mut Vec<Option<Vec<f64>>>| {
        for (s, r) in record_steps.iter().enumerate() {
            if *r == step {
                slices[s] = Some(m.to_vec());
            }
        }
    };
    store(0, &m, &mut slices);

    let mut flux = vec![0.0; grid.n + 1];
    let mut vel = vec![0.0; grid.n];
    let diff = 0.5 * diffusion * diffusion * dt / (grid.dx * grid.dx);
    let mut conv = vec![0.0; grid.n];
    for step in 0..steps {
        let t = step as f64 * dt;
        let (a, b, _) = sol.coefficients_at(t)?;
        for (v, x) in vel.iter_mut().zip(&xs) {
            *v = 2.0 * a * x + b;
        }
        // donor cell: the upwind node carries its own velocity
        for i in 0..grid.n - 1 {
            let face = 0.5 * (vel[i] + vel[i + 1]);
            flux[i + 1] = if face >= 0.0 { vel[i] * m[i] } else { vel[i + 1] * m[i + 1] };
        }
        flux[0] = vel[0].min(0.0) * m[0];
        flux[grid.n] = vel[grid.n - 1].max(0.0) * m[grid.n - 1];
        for i in 0..grid.n {
            m[i] -= dt / grid.dx * (flux[i + 1] - flux[i]);
        }
        if diff > 0.0 {
            implicit_diffusion(&mut m, diff);
        }
        if intensity > 0.0 {
            conv.iter_mut().for_each(|c| *c = 0.0);
            for &(off, w) in &weights {
                for (i, c) in conv.iter_mut().enumerate() {
                    let src = i as i64 - off;
                    if (0..grid.n as i64).contains(&src) {
                        *c += w * m[src as usize];
                    }
                }
            }
            let r = intensity * dt;
            for (mi, c) in m.iter_mut().zip(&conv) {
                *mi += r * (c - *mi);
            }
        }
        let leak = (trapezoid(&m, grid.dx) - mass0).abs();
        if leak > MAX_MASS_LEAK {
            return Err(DensityError::MassLeak { time: t + dt, leak });
        }
        store(step + 1, &m, &mut slices);
    }
    let times = record_steps.iter().map(|s| *s as f64 * dt).collect();
    Ok(DensityGrid { grid, times, values: slices.into_iter().map(|s| s.expect("every record step is visited")).collect() })
}

/// Solves `(1 + 2r)u_i − r(u_{i−1} + u_{i+1}) = m_i` with zero ghosts.
fn implicit_diffusion(m: &mut [f64], r: f64) {
    let n = m.len();
    let diag = 1.0 + 2.0 * r;
    let mut c = vec![0.0; n];
    c[0] = -r / diag;
    m[0] /= diag;
    for i in 1..n {
        let denom = diag + r * c[i - 1];
        c[i] = -r / denom;
        m[i] = (m[i] + r * m[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        m[i] -= c[i] * m[i + 1];
    }
}
