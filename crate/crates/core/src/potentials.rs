//! Even pair-interaction potentials with bounded, Lipschitz forces.
//!
//! Every builtin family carries its force constants in closed form:
//! `lip_grad` bounds the Lipschitz constant of `∇V` and `sup_grad` bounds
//! `|∇V|`. The stability estimates downstream are exponential in these
//! constants, so they are never estimated from samples.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Builtin potential families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PotentialName {
    Zero,
    Gaussian,
    Cosine,
    MollifiedScreened,
}

impl PotentialName {
    pub fn as_str(self) -> &'static str {
        match self {
            PotentialName::Zero => "zero",
            PotentialName::Gaussian => "gaussian",
            PotentialName::Cosine => "cosine",
            PotentialName::MollifiedScreened => "mollified_screened",
        }
    }
}

impl fmt::Display for PotentialName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PotentialName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "zero" => Ok(PotentialName::Zero),
            "gaussian" => Ok(PotentialName::Gaussian),
            "cosine" => Ok(PotentialName::Cosine),
            "mollified_screened" => Ok(PotentialName::MollifiedScreened),
            other => Err(Error::Potential(format!("unknown potential family '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Family {
    Zero,
    /// `a exp(-|z|²/2σ²)`
    Gaussian { amplitude: f64, width: f64 },
    /// `a Σ_i cos(2π z_i / L)`
    Cosine { amplitude: f64, wavenumber: f64 },
    /// `a exp(-κ ρ)/ρ` with `ρ = sqrt(|z|² + δ²)`
    MollifiedScreened { amplitude: f64, kappa: f64, delta: f64 },
}

/// One term `V̂_ω e^{iω·z}` of the Fourier series of a periodic potential.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMode {
    pub frequency: Vec<f64>,
    pub coefficient: f64,
}

/// An even interaction potential `V: R^d → R` together with its force
/// constants and, for periodic families, its Fourier series.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionPotential {
    dim: usize,
    name: PotentialName,
    family: Family,
    lip_grad: f64,
    sup_grad: f64,
    fourier: Vec<FourierMode>,
    period: Option<f64>,
}

impl InteractionPotential {
    /// Builds a named family from its parameter list.
    ///
    /// | family               | params            |
    /// |----------------------|-------------------|
    /// | `zero`               | none              |
    /// | `gaussian`           | `[a, σ]`          |
    /// | `cosine`             | `[a, L]`          |
    /// | `mollified_screened` | `[a, κ, δ]`       |
    pub fn builtin(name: PotentialName, dim: usize, params: &[f64]) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Potential("dimension must be positive".into()));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Potential("non-finite parameter".into()));
        }
        let take = |n: usize| -> Result<()> {
            if params.len() > n {
                Err(Error::Potential(format!(
                    "{name} takes at most {n} parameters, got {}",
                    params.len()
                )))
            } else {
                Ok(())
            }
        };
        match name {
            PotentialName::Zero => {
                take(0)?;
                Ok(Self::zero(dim))
            }
            PotentialName::Gaussian => {
                take(2)?;
                let amplitude = params.first().copied().unwrap_or(1.0);
                let width = params.get(1).copied().unwrap_or(1.0);
                Self::gaussian(dim, amplitude, width)
            }
            PotentialName::Cosine => {
                take(2)?;
                let amplitude = params.first().copied().unwrap_or(1.0);
                let period = params.get(1).copied().ok_or_else(|| {
                    Error::Potential("cosine family requires a period L".into())
                })?;
                Self::cosine(dim, amplitude, period)
            }
            PotentialName::MollifiedScreened => {
                take(3)?;
                let amplitude = params.first().copied().unwrap_or(1.0);
                let kappa = params.get(1).copied().unwrap_or(1.0);
                let delta = params.get(2).copied().unwrap_or(1.0);
                Self::mollified_screened(dim, amplitude, kappa, delta)
            }
        }
    }

    pub fn zero(dim: usize) -> Self {
        Self {
            dim,
            name: PotentialName::Zero,
            family: Family::Zero,
            lip_grad: 0.0,
            sup_grad: 0.0,
            fourier: Vec::new(),
            period: None,
        }
    }

    /// `V(z) = a exp(-|z|²/2σ²)`.
    ///
    /// The Hessian is largest at the origin, giving `Lip(∇V) = |a|/σ²`; the
    /// force magnitude `|a| r/σ² exp(-r²/2σ²)` peaks at `r = σ`.
    pub fn gaussian(dim: usize, amplitude: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) {
            return Err(Error::Potential(format!("gaussian width must be positive, got {width}")));
        }
        let a = amplitude.abs();
        Ok(Self {
            dim,
            name: PotentialName::Gaussian,
            family: Family::Gaussian { amplitude, width },
            lip_grad: a / (width * width),
            sup_grad: a / width * (-0.5f64).exp(),
            fourier: Vec::new(),
            period: None,
        })
    }

    /// `V(z) = a Σ_i cos(2π z_i / L)`, periodic with period `L` along every axis.
    pub fn cosine(dim: usize, amplitude: f64, period: f64) -> Result<Self> {
        if !(period > 0.0) {
            return Err(Error::Potential(format!("cosine period must be positive, got {period}")));
        }
        let k = 2.0 * PI / period;
        let a = amplitude.abs();
        let mut fourier = Vec::with_capacity(2 * dim);
        if amplitude != 0.0 {
            for axis in 0..dim {
                for sign in [1.0, -1.0] {
                    let mut frequency = vec![0.0; dim];
                    frequency[axis] = sign * k;
                    fourier.push(FourierMode {
                        frequency,
                        coefficient: amplitude / 2.0,
                    });
                }
            }
        }
        Ok(Self {
            dim,
            name: PotentialName::Cosine,
            family: Family::Cosine {
                amplitude,
                wavenumber: k,
            },
            // diagonal Hessian with entries -a k² cos(k z_i)
            lip_grad: a * k * k,
            sup_grad: a * k * (dim as f64).sqrt(),
            fourier,
            period: Some(period),
        })
    }

    /// `V(z) = a exp(-κρ)/ρ` with `ρ = sqrt(|z|² + δ²)`.
    ///
    /// Both the Coulomb singularity and the screening factor are smoothed by
    /// `δ`, which keeps `∇V` Lipschitz at the origin. With `e^{-x}(1+x) ≤ 1`
    /// and `e^{-x}(x²+2x+2) ≤ 2` the constants reduce to those of the
    /// unscreened kernel, `sup |∇V| ≤ 2|a|/(3√3 δ²)` and `Lip(∇V) ≤ |a|/δ³`,
    /// both attained when `κ = 0`.
    pub fn mollified_screened(dim: usize, amplitude: f64, kappa: f64, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::Potential(format!(
                "mollification radius must be positive, got {delta}"
            )));
        }
        if kappa < 0.0 {
            return Err(Error::Potential(format!("screening rate must be nonnegative, got {kappa}")));
        }
        let a = amplitude.abs();
        Ok(Self {
            dim,
            name: PotentialName::MollifiedScreened,
            family: Family::MollifiedScreened {
                amplitude,
                kappa,
                delta,
            },
            lip_grad: a / delta.powi(3),
            sup_grad: 2.0 * a / (3.0 * 3f64.sqrt() * delta * delta),
            fourier: Vec::new(),
            period: None,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn name(&self) -> PotentialName {
        self.name
    }

    /// Lipschitz constant of `∇V`.
    pub fn lip_grad(&self) -> f64 {
        self.lip_grad
    }

    /// `‖∇V‖_∞`.
    pub fn sup_grad(&self) -> f64 {
        self.sup_grad
    }

    /// Fourier-series coefficients, empty for non-periodic families.
    pub fn fourier(&self) -> &[FourierMode] {
        &self.fourier
    }

    pub fn period(&self) -> Option<f64> {
        self.period
    }

    pub fn is_periodic(&self) -> bool {
        self.period.is_some()
    }

    /// `Σ_ω |V̂_ω|`, the torus counterpart of `‖V̂‖_{L¹}/(2π)^d`.
    pub fn fourier_l1(&self) -> f64 {
        self.fourier.iter().map(|m| m.coefficient.abs()).sum()
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        debug_assert_eq!(z.len(), self.dim);
        match self.family {
            Family::Zero => 0.0,
            Family::Gaussian { amplitude, width } => {
                amplitude * (-norm_sq(z) / (2.0 * width * width)).exp()
            }
            Family::Cosine {
                amplitude,
                wavenumber,
            } => amplitude * z.iter().map(|&zi| (wavenumber * zi).cos()).sum::<f64>(),
            Family::MollifiedScreened {
                amplitude,
                kappa,
                delta,
            } => {
                let rho = (norm_sq(z) + delta * delta).sqrt();
                amplitude * (-kappa * rho).exp() / rho
            }
        }
    }

    /// Writes `∇V(z)` into `out`.
    pub fn gradient_into(&self, z: &[f64], out: &mut [f64]) {
        debug_assert_eq!(z.len(), self.dim);
        debug_assert_eq!(out.len(), self.dim);
        match self.family {
            Family::Zero => out.fill(0.0),
            Family::Gaussian { amplitude, width } => {
                let s2 = width * width;
                let c = -amplitude / s2 * (-norm_sq(z) / (2.0 * s2)).exp();
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = c * zi;
                }
            }
            Family::Cosine {
                amplitude,
                wavenumber,
            } => {
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = -amplitude * wavenumber * (wavenumber * zi).sin();
                }
            }
            Family::MollifiedScreened {
                amplitude,
                kappa,
                delta,
            } => {
                let rho2 = norm_sq(z) + delta * delta;
                let rho = rho2.sqrt();
                // G'(ρ)/ρ with G(ρ) = e^{-κρ}/ρ
                let c = -amplitude * (-kappa * rho).exp() * (kappa * rho + 1.0) / (rho2 * rho);
                for (o, &zi) in out.iter_mut().zip(z) {
                    *o = c * zi;
                }
            }
        }
    }

    pub fn gradient(&self, z: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.gradient_into(z, &mut out);
        out
    }

    /// Evaluates the Fourier series `Σ_ω V̂_ω e^{iω·z}` (real part).
    pub fn fourier_series(&self, z: &[f64]) -> f64 {
        self.fourier
            .iter()
            .map(|m| {
                let phase: f64 = m.frequency.iter().zip(z).map(|(w, zi)| w * zi).sum();
                m.coefficient * phase.cos()
            })
            .sum()
    }

    /// The Fourier data restricted to one-dimensional use, as `(ω, V̂_ω)` pairs.
    pub(crate) fn fourier_1d(&self) -> Result<Vec<(f64, f64)>> {
        if self.dim != 1 {
            return Err(Error::Unsupported(format!(
                "quantum grids are one-dimensional, potential has d = {}",
                self.dim
            )));
        }
        if self.name == PotentialName::Zero {
            return Ok(Vec::new());
        }
        if !self.is_periodic() {
            return Err(Error::Potential(format!(
                "{} potential has no Fourier data; periodic grids need a periodic potential",
                self.name
            )));
        }
        Ok(self
            .fourier
            .iter()
            .map(|m| (m.frequency[0], m.coefficient))
            .collect())
    }
}

fn norm_sq(z: &[f64]) -> f64 {
    z.iter().map(|v| v * v).sum()
}
