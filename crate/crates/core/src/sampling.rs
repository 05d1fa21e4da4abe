//! Seeded i.i.d. sampling of phase-space densities and the empirical
//! convergence rate `E dist_MK,1(μ_N, f) ≲ N^{-1/q} + N^{-(1-1/q)}`.
//!
//! Random numbers come from counter-addressed ChaCha substreams: stream
//! `s` of seed `σ` and atom `k` always yield the same coordinates, whatever
//! order the atoms or trials are generated in.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::transport::{mk_distance, EmpiricalMeasure, MkOptions};

/// Builtin reference densities on phase space `R^d × R^d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityName {
    GaussianPhase,
    UniformBox,
    TwoBump,
}

impl DensityName {
    pub fn as_str(self) -> &'static str {
        match self {
            DensityName::GaussianPhase => "gaussian_phase",
            DensityName::UniformBox => "uniform_box",
            DensityName::TwoBump => "two_bump",
        }
    }
}

impl fmt::Display for DensityName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DensityName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian_phase" => Ok(DensityName::GaussianPhase),
            "uniform_box" => Ok(DensityName::UniformBox),
            "two_bump" => Ok(DensityName::TwoBump),
            other => Err(invalid(format!("unknown density '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Law {
    /// `N(0, σ² I)` on `R^{2d}`.
    Gaussian { sigma: f64 },
    /// Uniform on `[-a, a]^{2d}`.
    Box { half_width: f64 },
    /// Equal mixture of `N(±c e_1, s² I)`.
    TwoBump { offset: f64, width: f64 },
}

/// A probability density on phase space `R^d × R^d` with a declared moment
/// order `q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDensity {
    name: DensityName,
    dim: usize,
    law: Law,
    q: f64,
}

impl ReferenceDensity {
    /// Builds a named family on `R^d × R^d`.
    ///
    /// | family           | params         | default   |
    /// |------------------|----------------|-----------|
    /// | `gaussian_phase` | `[σ]`          | `[1]`     |
    /// | `uniform_box`    | `[a]`          | `[1]`     |
    /// | `two_bump`       | `[c, s]`       | `[1, 0.5]`|
    ///
    /// The moment order defaults to `q = 2d`.
    pub fn builtin(name: DensityName, d: usize, params: &[f64]) -> Result<Self> {
        if d == 0 {
            return Err(invalid("dimension must be positive"));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(invalid("non-finite density parameter"));
        }
        let at = |k: usize, default: f64| params.get(k).copied().unwrap_or(default);
        let (law, max) = match name {
            DensityName::GaussianPhase => (Law::Gaussian { sigma: at(0, 1.0) }, 1),
            DensityName::UniformBox => (Law::Box { half_width: at(0, 1.0) }, 1),
            DensityName::TwoBump => (
                Law::TwoBump {
                    offset: at(0, 1.0),
                    width: at(1, 0.5),
                },
                2,
            ),
        };
        if params.len() > max {
            return Err(invalid(format!("{name} takes at most {max} parameters")));
        }
        let ok = match law {
            Law::Gaussian { sigma } => sigma > 0.0,
            Law::Box { half_width } => half_width > 0.0,
            Law::TwoBump { width, .. } => width >= 0.0,
        };
        if !ok {
            return Err(invalid(format!("{name}: width parameters must be positive")));
        }
        Ok(Self {
            name,
            dim: d,
            law,
            q: 2.0 * d as f64,
        })
    }

    pub fn gaussian_phase(d: usize, sigma: f64) -> Result<Self> {
        Self::builtin(DensityName::GaussianPhase, d, &[sigma])
    }

    pub fn uniform_box(d: usize, half_width: f64) -> Result<Self> {
        Self::builtin(DensityName::UniformBox, d, &[half_width])
    }

    pub fn two_bump(d: usize, offset: f64, width: f64) -> Result<Self> {
        Self::builtin(DensityName::TwoBump, d, &[offset, width])
    }

    /// Declares the moment order used in rate envelopes. `q ≤ 1` and the
    /// critical value [`Self::excluded_q`] are rejected.
    pub fn with_q(mut self, q: f64) -> Result<Self> {
        if !(q > 1.0 && q.is_finite()) {
            return Err(invalid(format!("moment order must exceed 1, got {q}")));
        }
        if (q - self.excluded_q()).abs() < 1e-12 {
            return Err(invalid(format!("moment order q = {q} is the excluded critical value")));
        }
        self.q = q;
        Ok(self)
    }

    /// The critical moment order `2d/(2d − 1)`.
    pub fn excluded_q(&self) -> f64 {
        let n = 2.0 * self.dim as f64;
        n / (n - 1.0)
    }

    pub fn name(&self) -> DensityName {
        self.name
    }

    /// Position dimension `d`; samples live in `R^{2d}`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn phase_dim(&self) -> usize {
        2 * self.dim
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn mean(&self) -> Vec<f64> {
        vec![0.0; 2 * self.dim]
    }

    /// Per-coordinate standard deviation.
    pub fn coordinate_std(&self) -> Vec<f64> {
        let n = 2 * self.dim;
        match self.law {
            Law::Gaussian { sigma } => vec![sigma; n],
            Law::Box { half_width } => vec![half_width / 3f64.sqrt(); n],
            Law::TwoBump { offset, width } => {
                let mut s = vec![width; n];
                s[0] = (width * width + offset * offset).sqrt();
                s
            }
        }
    }

    /// The law itself when it is finitely supported (zero-width bumps).
    pub fn atomic_law(&self) -> Option<EmpiricalMeasure> {
        match self.law {
            Law::TwoBump { offset, width } if width == 0.0 => {
                let n = 2 * self.dim;
                if offset == 0.0 {
                    return EmpiricalMeasure::uniform(n, vec![0.0; n]).ok();
                }
                let mut atoms = vec![0.0; 2 * n];
                atoms[0] = offset;
                atoms[n] = -offset;
                EmpiricalMeasure::uniform(n, atoms).ok()
            }
            _ => None,
        }
    }

    /// `M_q = ∫ (|x| + |ξ|)^q f` in closed form, for Gaussian phase densities
    /// with integer `q` and for atomic laws.
    pub fn moment_q(&self) -> Option<f64> {
        let q = self.q;
        match self.law {
            Law::Gaussian { sigma } if q.fract() == 0.0 => {
                let q = q as u32;
                let d = self.dim as u32;
                let mut total = 0.0;
                for k in 0..=q {
                    total += binomial(q, k) * chi_moment(d, k) * chi_moment(d, q - k);
                }
                Some(total * sigma.powi(q as i32))
            }
            Law::TwoBump { offset, width } if width == 0.0 => Some(offset.abs().powf(q)),
            _ => None,
        }
    }

    fn draw_atom(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self.law {
            Law::Gaussian { sigma } => {
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = sigma * z;
                }
            }
            Law::Box { half_width } => {
                for v in out.iter_mut() {
                    *v = rng.random_range(-half_width..=half_width);
                }
            }
            Law::TwoBump { offset, width } => {
                let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                for v in out.iter_mut() {
                    let z: f64 = StandardNormal.sample(rng);
                    *v = width * z;
                }
                out[0] += sign * offset;
            }
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E|Z|^k` for a standard normal vector `Z` in `R^d`:
/// `2^{k/2} Γ((d+k)/2) / Γ(d/2)`.
fn chi_moment(d: u32, k: u32) -> f64 {
    // Γ(x + 1) = x Γ(x), stepping the argument in halves
    let mut ratio = 1.0;
    let mut m = k;
    while m >= 2 {
        m -= 2;
        ratio *= (d + m) as f64 / 2.0;
    }
    if m == 1 {
        ratio *= half_gamma_ratio(d);
    }
    2f64.powf(k as f64 / 2.0) * ratio
}

/// `Γ((d+1)/2) / Γ(d/2)`.
fn half_gamma_ratio(d: u32) -> f64 {
    let (mut r, start) = if d.is_multiple_of(2) {
        // Γ(3/2)/Γ(1)
        (std::f64::consts::PI.sqrt() / 2.0, 2)
    } else {
        // Γ(1)/Γ(1/2)
        (1.0 / std::f64::consts::PI.sqrt(), 1)
    };
    let mut n = start;
    while n < d {
        // Γ((n+3)/2)/Γ((n+2)/2) = ((n+1)/2)/(n/2) · Γ((n+1)/2)/Γ(n/2)
        r *= (n + 1) as f64 / n as f64;
        n += 2;
    }
    r
}

/// Atom `k` of substream `stream` under `seed`.
fn substream_rng(seed: u64, stream: u64, atom: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.set_word_pos((atom as u128) << 16);
    rng
}

/// `n` atoms of substream `stream`; atom `k` does not depend on `n`.
pub fn sample_stream(f: &ReferenceDensity, n: usize, seed: u64, stream: u64) -> Result<EmpiricalMeasure> {
    if n == 0 {
        return Err(invalid("sample size must be positive"));
    }
    let dim = f.phase_dim();
    let mut atoms = vec![0.0; n * dim];
    atoms.par_chunks_mut(dim).enumerate().for_each(|(k, out)| {
        let mut rng = substream_rng(seed, stream, k as u64);
        f.draw_atom(&mut rng, out);
    });
    EmpiricalMeasure::uniform(dim, atoms)
}

/// `N` i.i.d. atoms drawn from `f`.
pub fn sample_iid(f: &ReferenceDensity, n: usize, seed: u64) -> Result<EmpiricalMeasure> {
    sample_stream(f, n, seed, 0)
}

/// How the distance to the continuous law is estimated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum FgEstimator {
    /// `MK1(μ_N, μ'_N)` for an independent sample `μ'_N` of the same size.
    /// By the triangle inequality and Jensen,
    /// `E MK1(μ_N, f) ≤ E MK1(μ_N, μ'_N) ≤ 2 E MK1(μ_N, f)`, so the rate
    /// shape is preserved.
    TwoSample,
    /// `MK1(μ_N, μ_ref)` for one fixed sample of `factor · max N` atoms.
    Reference { factor: usize },
}

/// Options of [`fg_rate_experiment`].
#[derive(Debug, Clone, Copy)]
pub struct FgOptions {
    pub estimator: FgEstimator,
    pub mk: MkOptions,
}

impl Default for FgOptions {
    fn default() -> Self {
        Self {
            estimator: FgEstimator::TwoSample,
            mk: MkOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FgRow {
    pub n: usize,
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Per-`N` Monte Carlo means with the fitted rate and the moment envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FgResult {
    pub density: DensityName,
    pub phase_dim: usize,
    pub q: f64,
    pub moment_q: Option<f64>,
    pub estimator: FgEstimator,
    pub rows: Vec<FgRow>,
    /// Least-squares slope of `log mean` against `log N`.
    pub slope: f64,
    /// `c` with `mean(N_0) = c (N_0^{-1/q} + N_0^{-(1-1/q)})` at the smallest `N_0`.
    pub envelope_constant: f64,
    pub envelope: Vec<f64>,
}

impl FgResult {
    /// `q`-envelope `N^{-1/q} + N^{-(1-1/q)}`.
    pub fn envelope_shape(q: f64, n: usize) -> f64 {
        let n = n as f64;
        n.powf(-1.0 / q) + n.powf(-(1.0 - 1.0 / q))
    }

    /// No mean exceeds its predecessor by more than two combined standard
    /// errors.
    pub fn decreasing_within_2se(&self) -> bool {
        self.rows.windows(2).all(|w| {
            let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
            w[1].mean < w[0].mean + 2.0 * se
        })
    }

    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].mean < w[0].mean)
    }

    /// Every mean lies on or below the envelope anchored at the smallest `N`.
    pub fn below_envelope(&self) -> bool {
        self.rows
            .iter()
            .zip(&self.envelope)
            .all(|(r, e)| r.mean <= *e * (1.0 + 1e-12))
    }

    /// CSV with header `N,mean,stderr,trials`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "N,mean,stderr,trials")?;
        for r in &self.rows {
            writeln!(out, "{},{:.17e},{:.17e},{}", r.n, r.mean, r.stderr, r.trials)?;
        }
        Ok(())
    }

    pub fn summary_json(&self) -> serde_json::Value {
        serde_json::json!({
            "density": self.density,
            "phase_dim": self.phase_dim,
            "q": self.q,
            "moment_q": self.moment_q,
            "estimator": self.estimator,
            "slope": self.slope,
            "envelope_constant": self.envelope_constant,
            "strictly_decreasing": self.strictly_decreasing(),
            "decreasing_within_2se": self.decreasing_within_2se(),
            "below_envelope": self.below_envelope(),
        })
    }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Monte Carlo estimate of `E dist_MK,1(μ_N, f)` for each `N` in `n_list`.
///
/// Trial `t` draws its samples from substreams `2t` and `2t + 1`, shared by
/// all `N`, so rows use common random numbers.
pub fn fg_rate_experiment(
    f: &ReferenceDensity,
    n_list: &[usize],
    trials: usize,
    seed: u64,
    opts: &FgOptions,
) -> Result<FgResult> {
    if trials < 5 {
        return Err(invalid(format!("at least 5 trials are needed, got {trials}")));
    }
    if f.dim() < 3 {
        return Err(invalid("the rate theorem needs d ≥ 3 (phase-space dimension ≥ 6)"));
    }
    if n_list.is_empty() || n_list[0] == 0 || n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(invalid("sample sizes must be positive and strictly increasing"));
    }
    let max_n = *n_list.last().unwrap();
    let reference = match opts.estimator {
        FgEstimator::TwoSample => None,
        FgEstimator::Reference { factor } => {
            let size = factor.max(1) * max_n;
            if size > opts.mk.atom_cap {
                return Err(Error::CapExceeded {
                    what: "reference sample atoms",
                    size,
                    cap: opts.mk.atom_cap,
                });
            }
            Some(sample_stream(f, size, seed, u64::MAX)?)
        }
    };
    let jobs: Vec<(usize, usize)> = n_list.iter().flat_map(|&n| (0..trials).map(move |t| (n, t))).collect();
    let dists = jobs
        .par_iter()
        .map(|&(n, t)| {
            let a = sample_stream(f, n, seed, 2 * t as u64)?;
            let d = match &reference {
                None => {
                    let b = sample_stream(f, n, seed, 2 * t as u64 + 1)?;
                    mk_distance(&a, &b, 1.0, &opts.mk)?.distance
                }
                Some(r) => mk_distance(&a, r, 1.0, &opts.mk)?.distance,
            };
            log::debug!("fg N={n} trial={t} distance={d:.6}");
            Ok(d)
        })
        .collect::<Result<Vec<f64>>>()?;

    let rows: Vec<FgRow> = n_list
        .iter()
        .zip(dists.chunks_exact(trials))
        .map(|(&n, ds)| {
            let k = ds.len() as f64;
            let mean = ds.iter().sum::<f64>() / k;
            let var = ds.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / (k - 1.0);
            FgRow {
                n,
                mean,
                stderr: (var / k).sqrt(),
                trials,
            }
        })
        .collect();
    let q = f.q();
    let xs: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.mean.max(f64::MIN_POSITIVE).ln()).collect();
    let slope = if rows.len() > 1 && rows.iter().all(|r| r.mean > 0.0) {
        fit_slope(&xs, &ys)
    } else {
        0.0
    };
    let c = rows[0].mean / FgResult::envelope_shape(q, rows[0].n);
    let envelope = rows.iter().map(|r| c * FgResult::envelope_shape(q, r.n)).collect();
    Ok(FgResult {
        density: f.name(),
        phase_dim: f.phase_dim(),
        q,
        moment_q: f.moment_q(),
        estimator: opts.estimator,
        rows,
        slope,
        envelope_constant: c,
        envelope,
    })
}
