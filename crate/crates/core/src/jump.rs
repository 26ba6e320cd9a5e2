//! Jump-size laws of the compound-Poisson component.
//!
//! Characteristic functions follow the convention `p̂(ω) = E[exp(iωZ)]`.

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::gauss_legendre;

#[derive(Debug, Error, PartialEq)]
pub enum JumpError {
    #[error("invalid jump parameter: {0}")]
    InvalidParameter(String),
    #[error("tabulated density does not decay at the table edge (p = {edge:e}, peak = {peak:e}); moments of the underlying law may diverge")]
    NonDecayingTail { edge: f64, peak: f64 },
    #[error("symmetrisation needs a one-sided base law with support in z >= 0")]
    NotOneSided,
}

/// A jump-size density `p(z)`.
#[derive(Debug, Clone, PartialEq)]
pub enum JumpDistribution {
    /// Point mass at `size`.
    Degenerate { size: f64 },
    /// `k exp(-k z)` on `z >= 0`.
    OneSidedExponential { rate: f64 },
    /// `½ p₊(z)` for `z >= 0` and `½ p₊(−z)` for `z < 0`.
    SymmetrizedOneSided { base: Box<JumpDistribution> },
    Tabulated(TabulatedDensity),
}

impl JumpDistribution {
    pub fn degenerate(size: f64) -> Result<Self, JumpError> {
        if !size.is_finite() {
            return Err(JumpError::InvalidParameter(format!("degenerate size {size}")));
        }
        Ok(Self::Degenerate { size })
    }

    pub fn exponential(rate: f64) -> Result<Self, JumpError> {
        if !(rate.is_finite() && rate > 0.0) {
            return Err(JumpError::InvalidParameter(format!("exponential rate must be > 0, got {rate}")));
        }
        Ok(Self::OneSidedExponential { rate })
    }

    pub fn symmetrized(base: JumpDistribution) -> Result<Self, JumpError> {
        if !base.is_one_sided() {
            return Err(JumpError::NotOneSided);
        }
        Ok(Self::SymmetrizedOneSided { base: Box::new(base) })
    }

    pub fn tabulated(z: Vec<f64>, density: Vec<f64>) -> Result<Self, JumpError> {
        TabulatedDensity::new(z, density).map(Self::Tabulated)
    }

    fn is_one_sided(&self) -> bool {
        match self {
            Self::Degenerate { size } => *size >= 0.0,
            Self::OneSidedExponential { .. } => true,
            Self::SymmetrizedOneSided { .. } => false,
            Self::Tabulated(t) => t.z[0] >= 0.0,
        }
    }

    /// `M = ∫ z p(z) dz`.
    pub fn mean(&self) -> f64 {
        match self {
            Self::Degenerate { size } => *size,
            Self::OneSidedExponential { rate } => 1.0 / rate,
            Self::SymmetrizedOneSided { .. } => 0.0,
            Self::Tabulated(t) => t.mean,
        }
    }

    /// `M₂ = ∫ z² p(z) dz`.
    pub fn second_moment(&self) -> f64 {
        match self {
            Self::Degenerate { size } => size * size,
            Self::OneSidedExponential { rate } => 2.0 / (rate * rate),
            Self::SymmetrizedOneSided { base } => base.second_moment(),
            Self::Tabulated(t) => t.second_moment,
        }
    }

    pub fn char_fn(&self, omega: f64) -> Complex64 {
        match self {
            Self::Degenerate { size } => Complex64::from_polar(1.0, omega * size),
            Self::OneSidedExponential { rate } => Complex64::new(*rate, 0.0) / Complex64::new(*rate, -omega),
            Self::SymmetrizedOneSided { base } => Complex64::new(base.char_fn(omega).re, 0.0),
            Self::Tabulated(t) => t.char_fn(omega),
        }
    }

    /// Density value; `None` for the point mass.
    pub fn density(&self, z: f64) -> Option<f64> {
        match self {
            Self::Degenerate { .. } => None,
            Self::OneSidedExponential { rate } => Some(if z < 0.0 { 0.0 } else { rate * (-rate * z).exp() }),
            Self::SymmetrizedOneSided { base } => base.density(z.abs()).map(|p| 0.5 * p),
            Self::Tabulated(t) => Some(t.eval(z)),
        }
    }

    /// Inverse-CDF draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Self::Degenerate { size } => *size,
            Self::OneSidedExponential { rate } => {
                let u: f64 = rng.random();
                -(1.0 - u).ln() / rate
            }
            Self::SymmetrizedOneSided { base } => {
                let z = base.sample(rng);
                if rng.random::<bool>() {
                    z
                } else {
                    -z
                }
            }
            Self::Tabulated(t) => t.sample(rng.random()),
        }
    }

    /// Weights of the law projected onto the lattice `j·dx` with hat
    /// functions: `w_j = E[Λ(Z/dx − j)]`. The projection keeps both total
    /// mass and mean exact.
    pub fn lattice_weights(&self, dx: f64) -> Vec<(i64, f64)> {
        let mut weights = match self {
            Self::Degenerate { size } => {
                let u = size / dx;
                let j = u.floor();
                let frac = u - j;
                let mut w = vec![(j as i64, 1.0 - frac)];
                if frac > 0.0 {
                    w.push((j as i64 + 1, frac));
                }
                w
            }
            Self::SymmetrizedOneSided { base } => {
                let mut w: Vec<(i64, f64)> = Vec::new();
                for (j, v) in base.lattice_weights(dx) {
                    w.push((j, 0.5 * v));
                    w.push((-j, 0.5 * v));
                }
                w.sort_by_key(|(j, _)| *j);
                w.dedup_by(|next, kept| {
                    if next.0 == kept.0 {
                        kept.1 += next.1;
                        true
                    } else {
                        false
                    }
                });
                w
            }
            _ => {
                let (lo, hi) = self.effective_support();
                let j_lo = (lo / dx).floor() as i64 - 1;
                let j_hi = (hi / dx).ceil() as i64 + 1;
                (j_lo..=j_hi)
                    .map(|j| {
                        let node = j as f64 * dx;
                        let p = |z: f64| self.density(z).unwrap_or(0.0);
                        let left = gauss_legendre(|z| p(z) * (1.0 - (node - z) / dx), node - dx, node);
                        let right = gauss_legendre(|z| p(z) * (1.0 - (z - node) / dx), node, node + dx);
                        (j, left + right)
                    })
                    .filter(|(_, w)| *w > 0.0)
                    .collect()
            }
        };
        let total: f64 = weights.iter().map(|(_, w)| w).sum();
        for (_, w) in weights.iter_mut() {
            *w /= total;
        }
        weights
    }

    fn effective_support(&self) -> (f64, f64) {
        match self {
            Self::Degenerate { size } => (*size, *size),
            Self::OneSidedExponential { rate } => (0.0, 40.0 / rate),
            Self::SymmetrizedOneSided { base } => {
                let (_, hi) = base.effective_support();
                (-hi, hi)
            }
            Self::Tabulated(t) => (t.z[0], *t.z.last().unwrap()),
        }
    }
}

/// Piecewise-linear density on a strictly increasing grid, renormalised to
/// unit mass at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedDensity {
    z: Vec<f64>,
    p: Vec<f64>,
    cdf: Vec<f64>,
    mean: f64,
    second_moment: f64,
}

impl TabulatedDensity {
    pub fn new(z: Vec<f64>, p: Vec<f64>) -> Result<Self, JumpError> {
        if z.len() < 2 || z.len() != p.len() {
            return Err(JumpError::InvalidParameter(
                "tabulated law needs at least two nodes and equal-length z/density arrays".into(),
            ));
        }
        if z.iter().any(|v| !v.is_finite()) || z.windows(2).any(|w| w[1] <= w[0]) {
            return Err(JumpError::InvalidParameter("z grid must be finite and strictly increasing".into()));
        }
        if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(JumpError::InvalidParameter("density values must be finite and nonnegative".into()));
        }
        let peak = p.iter().cloned().fold(0.0, f64::max);
        if peak <= 0.0 {
            return Err(JumpError::InvalidParameter("density is identically zero".into()));
        }
        for edge in [p[0], *p.last().unwrap()] {
            if edge > 1e-8 * peak {
                return Err(JumpError::NonDecayingTail { edge, peak });
            }
        }
        let mut cdf = vec![0.0; z.len()];
        for i in 1..z.len() {
            cdf[i] = cdf[i - 1] + 0.5 * (z[i] - z[i - 1]) * (p[i] + p[i - 1]);
        }
        let mass = *cdf.last().unwrap();
        let p: Vec<f64> = p.iter().map(|v| v / mass).collect();
        cdf.iter_mut().for_each(|c| *c /= mass);
        // Simpson is exact for z·p and z²·p on each linear piece.
        let (mut mean, mut second_moment) = (0.0, 0.0);
        for i in 1..z.len() {
            let (z0, z1) = (z[i - 1], z[i]);
            let zm = 0.5 * (z0 + z1);
            let pm = 0.5 * (p[i - 1] + p[i]);
            let h = z1 - z0;
            mean += h / 6.0 * (z0 * p[i - 1] + 4.0 * zm * pm + z1 * p[i]);
            second_moment += h / 6.0 * (z0 * z0 * p[i - 1] + 4.0 * zm * zm * pm + z1 * z1 * p[i]);
        }
        Ok(Self { z, p, cdf, mean, second_moment })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.z
    }

    pub fn values(&self) -> &[f64] {
        &self.p
    }

    fn eval(&self, x: f64) -> f64 {
        let z = &self.z;
        if x < z[0] || x > *z.last().unwrap() {
            return 0.0;
        }
        let i = z.partition_point(|v| *v <= x).clamp(1, z.len() - 1);
        let t = (x - z[i - 1]) / (z[i] - z[i - 1]);
        self.p[i - 1] + t * (self.p[i] - self.p[i - 1])
    }

    fn sample(&self, u: f64) -> f64 {
        let i = self.cdf.partition_point(|c| *c <= u).clamp(1, self.z.len() - 1);
        let (z0, h) = (self.z[i - 1], self.z[i] - self.z[i - 1]);
        let p0 = self.p[i - 1];
        let slope = (self.p[i] - p0) / h;
        let remaining = (u - self.cdf[i - 1]).max(0.0);
        // root of slope/2·s² + p0·s = remaining, written without cancellation
        let disc = (p0 * p0 + 2.0 * slope * remaining).max(0.0);
        let denom = p0 + disc.sqrt();
        let s = if denom > 0.0 { 2.0 * remaining / denom } else { 0.0 };
        z0 + s.clamp(0.0, h)
    }

    fn char_fn(&self, omega: f64) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for i in 1..self.z.len() {
            let (z0, h) = (self.z[i - 1], self.z[i] - self.z[i - 1]);
            let p0 = self.p[i - 1];
            let slope = (self.p[i] - p0) / h;
            let (i0, i1) = cell_moments(omega, h);
            acc += Complex64::from_polar(1.0, omega * z0) * (i0 * p0 + i1 * slope);
        }
        acc
    }
}

/// `(∫_0^h e^{iωu} du, ∫_0^h u e^{iωu} du)`.
fn cell_moments(omega: f64, h: f64) -> (Complex64, Complex64) {
    let x = omega * h;
    if x.abs() < 0.5 {
        let ix = Complex64::new(0.0, x);
        let mut term = Complex64::new(1.0, 0.0); // (ix)^n / n!
        let (mut s0, mut s1) = (Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
        for n in 0..20 {
            s0 += term / (n as f64 + 1.0);
            s1 += term / (n as f64 + 2.0);
            term = term * ix / (n as f64 + 1.0);
        }
        (s0 * h, s1 * h * h)
    } else {
        let e = Complex64::from_polar(1.0, x);
        let iw = Complex64::new(0.0, omega);
        let i0 = (e - 1.0) / iw;
        let i1 = e * h / iw + (e - 1.0) / (omega * omega);
        (i0, i1)
    }
}

/// Configuration-file form of a jump law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum JumpSpec {
    Degenerate { size: f64 },
    ExpPositive { rate: f64 },
    SymmetrizedExp { rate: f64 },
    Tabulated { z: Vec<f64>, density: Vec<f64> },
}

impl JumpSpec {
    pub fn build(&self) -> Result<JumpDistribution, JumpError> {
        match self {
            JumpSpec::Degenerate { size } => JumpDistribution::degenerate(*size),
            JumpSpec::ExpPositive { rate } => JumpDistribution::exponential(*rate),
            JumpSpec::SymmetrizedExp { rate } => JumpDistribution::symmetrized(JumpDistribution::exponential(*rate)?),
            JumpSpec::Tabulated { z, density } => JumpDistribution::tabulated(z.clone(), density.clone()),
        }
    }
}
