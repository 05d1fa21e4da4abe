//! Phase-space pictures of density operators on the periodic grid and the
//! computable bounds on the quantum-to-classical transport cost
//! `E_ε(f, R)`, built on the cost `c_ε(x, ξ) = |x − y|² + |ξ + iε∇_y|²`.
//!
//! All grids here carry one space dimension, so phase space is the plane
//! `(x, ξ)` and `d = 1` in every bound.

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{invalid, Error, Result};
use crate::quantum::{DensityOperator, Operator, SpatialGrid, WaveFunction};
use crate::transport::{mk_distance, EmpiricalMeasure, MkOptions};

/// Largest atom count used when a grid density enters a transport problem.
pub const GRID_ATOM_CAP: usize = 2500;

/// Cells lighter than this fraction of the total are left out of transport
/// problems.
const CELL_FLOOR: f64 = 1e-14;

/// Real values `W(x_a, ξ_b)` on the product of the position grid and the dual
/// momentum grid `ξ_b = (b − M/2) · 2π·scale/L`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpaceGrid {
    grid: SpatialGrid,
    scale: f64,
    /// Row-major: position index first.
    values: Vec<f64>,
}

/// A grid density turned into atoms, with the mean squared displacement
/// `Σ w |z − z'|²` caused by merging cells and dropping negligible ones.
#[derive(Debug, Clone)]
pub struct GridMeasure {
    pub measure: EmpiricalMeasure,
    pub displacement_sq: f64,
}

impl PhaseSpaceGrid {
    pub fn new(grid: SpatialGrid, scale: f64, values: Vec<f64>) -> Result<Self> {
        let m = grid.len();
        if values.len() != m * m {
            return Err(Error::DimensionMismatch {
                expected: m * m,
                found: values.len(),
            });
        }
        if !(scale > 0.0) {
            return Err(invalid("phase-space scale must be positive"));
        }
        if values.iter().any(|w| !w.is_finite()) {
            return Err(Error::NonFinite { time: 0.0 });
        }
        Ok(Self { grid, scale, values })
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn position(&self, a: usize) -> f64 {
        self.grid.point(a)
    }

    pub fn momentum_spacing(&self) -> f64 {
        2.0 * PI * self.scale / self.grid.box_length()
    }

    pub fn momentum(&self, b: usize) -> f64 {
        (b as f64 - (self.len() / 2) as f64) * self.momentum_spacing()
    }

    pub fn cell_area(&self) -> f64 {
        self.grid.spacing() * self.momentum_spacing()
    }

    pub fn value(&self, a: usize, b: usize) -> f64 {
        self.values[a * self.len() + b]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `Σ W · cell area`.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Mean and variance of each coordinate under the normalized grid density.
    pub fn moments(&self) -> ([f64; 2], [f64; 2]) {
        let m = self.len();
        let total: f64 = self.values.iter().sum();
        let mut mean = [0.0; 2];
        let mut second = [0.0; 2];
        for a in 0..m {
            let x = self.position(a);
            for b in 0..m {
                let w = self.value(a, b) / total;
                let xi = self.momentum(b);
                mean[0] += w * x;
                mean[1] += w * xi;
                second[0] += w * x * x;
                second[1] += w * xi * xi;
            }
        }
        (mean, [second[0] - mean[0] * mean[0], second[1] - mean[1] * mean[1]])
    }

    /// Periodic convolution with the heat kernel at time `tau`, i.e. a centred
    /// Gaussian of variance `2 tau` in each coordinate.
    pub fn heat_smoothed(&self, tau: f64) -> Result<Self> {
        if !(tau >= 0.0) {
            return Err(invalid("smoothing time must be nonnegative"));
        }
        let m = self.len();
        let mut data: Vec<Complex64> = self.values.iter().map(|w| Complex64::new(*w, 0.0)).collect();
        fft2(&mut data, m, false);
        let kx = 2.0 * PI / self.grid.box_length();
        let kxi = 2.0 * PI / (m as f64 * self.momentum_spacing());
        let signed = |n: usize| self.grid.signed_index(n) as f64;
        for a in 0..m {
            let ka = (kx * signed(a)).powi(2);
            for b in 0..m {
                let kb = (kxi * signed(b)).powi(2);
                data[a * m + b] *= (-tau * (ka + kb)).exp();
            }
        }
        fft2(&mut data, m, true);
        let norm = (m * m) as f64;
        Self::new(self.grid, self.scale, data.iter().map(|z| z.re / norm).collect())
    }

    /// Cell-centre atoms weighted by cell mass. Negative cells count as empty.
    /// Cells are merged in `2 × 2` blocks into their centroids until at most
    /// `cap` non-negligible atoms remain.
    pub fn to_measure(&self, cap: usize) -> Result<GridMeasure> {
        let m = self.len();
        let area = self.cell_area();
        let mass: Vec<f64> = self.values.iter().map(|w| w.max(0.0) * area).collect();
        let total: f64 = mass.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("grid density has no positive mass"));
        }
        let floor = CELL_FLOOR * total;
        let diam_sq = self.grid.box_length().powi(2) + (m as f64 * self.momentum_spacing()).powi(2);
        let mut block = 1;
        loop {
            let nb = m.div_ceil(block);
            let mut w = vec![0.0; nb * nb];
            let mut cx = vec![0.0; nb * nb];
            let mut cxi = vec![0.0; nb * nb];
            for a in 0..m {
                for b in 0..m {
                    let k = (a / block) * nb + b / block;
                    let c = mass[a * m + b];
                    w[k] += c;
                    cx[k] += c * self.position(a);
                    cxi[k] += c * self.momentum(b);
                }
            }
            let kept: Vec<usize> = (0..nb * nb).filter(|&k| w[k] > floor).collect();
            if kept.len() <= cap || nb == 1 {
                for k in 0..nb * nb {
                    if w[k] > 0.0 {
                        cx[k] /= w[k];
                        cxi[k] /= w[k];
                    }
                }
                let mut displacement = 0.0;
                let mut dropped = 0.0;
                for a in 0..m {
                    for b in 0..m {
                        let k = (a / block) * nb + b / block;
                        let c = mass[a * m + b];
                        if w[k] > floor {
                            displacement += c * ((self.position(a) - cx[k]).powi(2) + (self.momentum(b) - cxi[k]).powi(2));
                        } else {
                            dropped += c;
                        }
                    }
                }
                let atoms = kept.iter().flat_map(|&k| [cx[k], cxi[k]]).collect();
                let weights = kept.iter().map(|&k| w[k]).collect();
                return Ok(GridMeasure {
                    measure: EmpiricalMeasure::normalized(2, atoms, weights)?,
                    displacement_sq: (displacement + dropped * diam_sq) / total,
                });
            }
            block *= 2;
        }
    }

    /// CSV with header `x,xi,W`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "x,xi,W")?;
        for a in 0..self.len() {
            for b in 0..self.len() {
                writeln!(out, "{},{},{}", self.position(a), self.momentum(b), self.value(a, b))?;
            }
        }
        Ok(())
    }

    /// Whitespace-separated `x xi W` lines, one block per position separated
    /// by blank lines, as read by gnuplot's `splot` with `pm3d`.
    pub fn write_gnuplot(&self, mut out: impl Write) -> std::io::Result<()> {
        writeln!(out, "# x xi W")?;
        for a in 0..self.len() {
            for b in 0..self.len() {
                writeln!(out, "{} {} {}", self.position(a), self.momentum(b), self.value(a, b))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn fft2(data: &mut [Complex64], m: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(m)
    } else {
        planner.plan_fft_forward(m)
    };
    for row in data.chunks_exact_mut(m) {
        fft.process(row);
    }
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    for b in 0..m {
        for a in 0..m {
            col[a] = data[a * m + b];
        }
        fft.process(&mut col);
        for a in 0..m {
            data[a * m + b] = col[a];
        }
    }
}

fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(invalid(format!("semiclassical parameter must lie in (0, 1], got {eps}")));
    }
    Ok(())
}

fn check_single(r: &DensityOperator) -> Result<()> {
    if r.particles() != 1 {
        return Err(Error::Unsupported(format!(
            "phase-space transforms of {}-particle operators",
            r.particles()
        )));
    }
    Ok(())
}

/// Wave packet `(πε)^{−1/4} e^{−(x−q)²/2ε} e^{ipx/ε}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoherentState {
    pub q: f64,
    pub p: f64,
    pub eps: f64,
}

impl CoherentState {
    pub fn new(q: f64, p: f64, eps: f64) -> Result<Self> {
        check_eps(eps)?;
        if !(q.is_finite() && p.is_finite()) {
            return Err(invalid("coherent state centre must be finite"));
        }
        Ok(Self { q, p, eps })
    }

    /// The packet wrapped onto the periodic grid, normalized there.
    pub fn wave(&self, grid: SpatialGrid) -> Result<WaveFunction> {
        WaveFunction::gaussian_packet(grid, self.eps, self.q, self.p, self.eps)
    }

    pub fn projector(&self, grid: SpatialGrid) -> Result<DensityOperator> {
        DensityOperator::pure(&self.wave(grid)?)
    }
}

/// Real trigonometric interpolation from the grid to its midpoint refinement,
/// `2M × M`, with the Nyquist mode split evenly.
fn midpoint_interpolation(m: usize) -> DMatrix<Complex64> {
    DMatrix::from_fn(2 * m, m, |fine, a| {
        let theta = PI * (fine as f64 - 2.0 * a as f64) / m as f64;
        let mut s = 1.0 + (0.5 * m as f64 * theta).cos();
        for k in 1..m / 2 {
            s += 2.0 * (k as f64 * theta).cos();
        }
        Complex64::new(s / m as f64, 0.0)
    })
}

/// `W_ε[R](x, ξ) = (2π)^{−1} ∫ e^{−iξy} r(x + εy/2, x − εy/2) dy`, with the
/// separation `εy` restricted to `[−L/2, L/2]` and the kernel interpolated to
/// half-grid points.
pub fn wigner_transform(r: &DensityOperator, eps: f64) -> Result<PhaseSpaceGrid> {
    check_eps(eps)?;
    check_single(r)?;
    let grid = r.grid();
    let m = grid.len();
    let h = grid.spacing();
    let herm = (r.matrix() + r.matrix().adjoint()) * Complex64::new(0.5 / h, 0.0);
    let p = midpoint_interpolation(m);
    let fine = &p * herm * p.transpose();
    let m2 = 2 * m;
    let at = |i: i64, j: i64| fine[(i.rem_euclid(m2 as i64) as usize, j.rem_euclid(m2 as i64) as usize)];
    let fft = FftPlanner::new().plan_fft_forward(m);
    let half = (m / 2) as i64;
    let pref = h / (2.0 * PI * eps);
    let mut values = vec![0.0; m * m];
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    let mut residue: f64 = 0.0;
    for a in 0..m {
        let c = 2 * a as i64;
        for n in -half + 1..half {
            line[n.rem_euclid(m as i64) as usize] = at(c + n, c - n);
        }
        line[m / 2] = (at(c + half, c - half) + at(c - half, c + half)) * 0.5;
        fft.process(&mut line);
        for b in 0..m {
            let j = (b + m / 2) % m;
            let w = line[j] * pref;
            residue = residue.max(w.im.abs());
            values[a * m + b] = w.re;
        }
    }
    if residue > 1e-10 {
        log::warn!("discarded imaginary Wigner residue {residue:.3e}");
    }
    PhaseSpaceGrid::new(grid, eps, values)
}

/// `W̃_ε[R] = e^{εΔ/4} W_ε[R]`.
pub fn husimi_transform(r: &DensityOperator, eps: f64) -> Result<PhaseSpaceGrid> {
    wigner_transform(r, eps)?.heat_smoothed(eps / 4.0)
}

/// `OP_T^ε(μ) = Σ_k w_k |z_k, ε⟩⟨z_k, ε|` for a probability measure `μ` on
/// the plane.
pub fn toeplitz_quantize(mu: &EmpiricalMeasure, eps: f64, grid: SpatialGrid) -> Result<DensityOperator> {
    check_eps(eps)?;
    if mu.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: mu.dim(),
        });
    }
    let l = grid.box_length();
    let m = grid.len();
    let mut matrix = Operator::zeros(m, m);
    for (z, &w) in mu.atoms().zip(mu.weights()) {
        if z[0].abs() > 0.75 * l {
            return Err(invalid(format!(
                "atom at x = {} lies more than a quarter box outside [−{}, {}]",
                z[0],
                l / 2.0,
                l / 2.0
            )));
        }
        if w == 0.0 {
            continue;
        }
        let c = CoherentState::new(z[0], z[1], eps)?.wave(grid)?.coefficients()?;
        matrix += (&c * c.adjoint()) * Complex64::new(w, 0.0);
    }
    DensityOperator::new(grid, 1, matrix)
}

/// `∫ f(x, ξ) trace(R c_ε(x, ξ)) dx dξ`: the cost of the product coupling
/// `f ⊗ R`. Distances in position use the nearest periodic image.
pub fn trivial_coupling_cost(f: &EmpiricalMeasure, r: &DensityOperator, eps: f64) -> Result<f64> {
    check_eps(eps)?;
    check_single(r)?;
    check_phase_dim(f)?;
    let grid = r.grid();
    let m = grid.len();
    let l = grid.box_length();
    let xs = grid.points();
    let density: Vec<f64> = r.matrix().diagonal().iter().map(|z| z.re).collect();
    // momentum distribution: diagonal of R in the discrete Fourier basis
    let mut mom = vec![0.0; m];
    let fft = FftPlanner::new().plan_fft_forward(m);
    let mut col = vec![Complex64::new(0.0, 0.0); m];
    let mut fr = Operator::zeros(m, m);
    for b in 0..m {
        col.copy_from_slice(r.matrix().column(b).as_slice());
        fft.process(&mut col);
        for (n, v) in col.iter().enumerate() {
            fr[(n, b)] = *v;
        }
    }
    for (n, slot) in mom.iter_mut().enumerate() {
        let mut row: Vec<Complex64> = fr.row(n).iter().map(|z| z.conj()).collect();
        fft.process(&mut row);
        *slot = row[n].re / m as f64;
    }
    let k: Vec<f64> = (0..m).map(|n| eps * grid.wavenumber(n)).collect();
    Ok(f.integrate(|z| {
        let pos: f64 = xs
            .iter()
            .zip(&density)
            .map(|(x, w)| {
                let d = (z[0] - x + 0.5 * l).rem_euclid(l) - 0.5 * l;
                w * d * d
            })
            .sum();
        let kin: f64 = k.iter().zip(&mom).map(|(p, w)| w * (z[1] - p).powi(2)).sum();
        pos + kin
    }))
}

fn check_phase_dim(f: &EmpiricalMeasure) -> Result<()> {
    if f.dim() != 2 {
        return Err(Error::DimensionMismatch {
            expected: 2,
            found: f.dim(),
        });
    }
    Ok(())
}

/// Bounds on `E_ε(f, R)²`, all in squared-cost units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoDistanceBounds {
    /// `max(dε, MK2(f, W̃_ε[R])² − dε)`.
    pub lower: f64,
    /// Cost of the product coupling.
    pub upper_trivial: f64,
    /// `MK2(f, μ)² + dε` when `R = OP_T^ε(μ)`.
    pub upper_toeplitz: Option<f64>,
    /// `MK2(f, W̃_ε[R])²` against the atomized Husimi grid.
    pub husimi_mk2_sq: f64,
    /// Bound on the error of `husimi_mk2_sq` from atomizing the grid.
    pub tolerance: f64,
}

impl PseudoDistanceBounds {
    /// `lower ≤ min(uppers) + slack`.
    pub fn is_consistent(&self, slack: f64) -> bool {
        let upper = self.upper_toeplitz.map_or(self.upper_trivial, |u| u.min(self.upper_trivial));
        self.lower <= upper + self.tolerance + slack
    }
}

/// Lower and upper bounds on `E_ε(f, R)²`. When `mu_opt` is given, `R` must
/// be its Töplitz quantization.
pub fn pseudo_distance_bounds(
    f: &EmpiricalMeasure,
    r: &DensityOperator,
    eps: f64,
    mu_opt: Option<&EmpiricalMeasure>,
) -> Result<PseudoDistanceBounds> {
    check_phase_dim(f)?;
    let d = 1.0;
    let husimi = husimi_transform(r, eps)?;
    let cap = if f.len() == 1 { usize::MAX } else { GRID_ATOM_CAP };
    let atomized = husimi.to_measure(cap)?;
    let opts = MkOptions {
        atom_cap: GRID_ATOM_CAP.max(f.len()),
        ..MkOptions::default()
    };
    let mk = mk_distance(f, &atomized.measure, 2.0, &opts)?.distance;
    let delta = atomized.displacement_sq.sqrt();
    let upper_toeplitz = match mu_opt {
        Some(mu) => {
            let rebuilt = toeplitz_quantize(mu, eps, r.grid())?;
            let gap = (rebuilt.matrix() - r.matrix()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            if gap > 1e-10 {
                return Err(invalid("density operator is not the Töplitz quantization of the given measure"));
            }
            Some(mk_distance(f, mu, 2.0, &MkOptions::default())?.cost + d * eps)
        }
        None => None,
    };
    Ok(PseudoDistanceBounds {
        lower: (d * eps).max(mk * mk - d * eps),
        upper_trivial: trivial_coupling_cost(f, r, eps)?,
        upper_toeplitz,
        husimi_mk2_sq: mk * mk,
        tolerance: 2.0 * mk * delta + delta * delta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid() -> SpatialGrid {
        SpatialGrid::new(128, 16.0).unwrap()
    }

    fn excited(grid: SpatialGrid, eps: f64) -> DensityOperator {
        let psi = WaveFunction::from_fn(grid, eps, |x| {
            let y = x / eps.sqrt();
            Complex64::new(y * (-0.5 * y * y).exp(), 0.0)
        })
        .unwrap();
        DensityOperator::pure(&psi).unwrap()
    }

    /// Mixtures of superpositions of a few packets near the centre, resolved
    /// on a box of side 24 with 128 points for `eps` in `[0.2, 1]`.
    fn random_operator(rng: &mut ChaCha8Rng, grid: SpatialGrid, eps: f64) -> DensityOperator {
        let mut states = Vec::new();
        for _ in 0..rng.random_range(1..4) {
            let mut amps = vec![Complex64::new(0.0, 0.0); grid.len()];
            for _ in 0..rng.random_range(1..4) {
                let c = CoherentState::new(rng.random_range(-2.0..2.0), rng.random_range(-0.5..0.5), eps).unwrap();
                let z = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                for (a, v) in amps.iter_mut().zip(c.wave(grid).unwrap().amplitudes()) {
                    *a += z * v;
                }
            }
            states.push(WaveFunction::normalized(grid, 1, amps, eps).unwrap());
        }
        let w = 1.0 / states.len() as f64;
        let terms: Vec<(f64, &WaveFunction)> = states.iter().map(|s| (w, s)).collect();
        DensityOperator::mixture(&terms).unwrap()
    }

    #[test]
    fn coherent_wigner_is_the_gaussian() {
        for &(eps, q, p) in &[(0.1, 0.3, 0.5), (0.5, -1.0, 1.0), (1.0, 0.0, -2.0)] {
            let r = CoherentState::new(q, p, eps).unwrap().projector(grid()).unwrap();
            let w = wigner_transform(&r, eps).unwrap();
            let mut err: f64 = 0.0;
            for a in 0..w.len() {
                for b in 0..w.len() {
                    let (x, xi) = (w.position(a), w.momentum(b));
                    let exact = (-((x - q).powi(2) + (xi - p).powi(2)) / eps).exp() / (PI * eps);
                    err = err.max((w.value(a, b) - exact).abs());
                }
            }
            assert!(err < 1e-6, "eps {eps}: sup error {err:e}");
            assert!((w.mass() - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn excited_state_is_negative_at_the_origin() {
        for &eps in &[0.1, 0.5, 1.0] {
            let r = excited(grid(), eps);
            let w = wigner_transform(&r, eps).unwrap();
            let m = w.len();
            assert_eq!((w.position(m / 2), w.momentum(m / 2)), (0.0, 0.0));
            let target = -1.0 / (PI * eps);
            assert!(((w.value(m / 2, m / 2) - target) / target).abs() < 1e-3);
            assert!((w.mass() - 1.0).abs() < 1e-6);
            let hu = husimi_transform(&r, eps).unwrap();
            assert!(hu.value(m / 2, m / 2) >= -1e-10);
            assert!(hu.min() >= -1e-10);
            assert!((hu.mass() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn husimi_matches_coherent_state_averages() {
        let g = SpatialGrid::new(128, 24.0).unwrap();
        let eps = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let r = random_operator(&mut rng, g, eps);
        let hu = husimi_transform(&r, eps).unwrap();
        let mut err: f64 = 0.0;
        for a in (0..128).step_by(5) {
            for b in (0..128).step_by(3) {
                let z = CoherentState::new(hu.position(a), hu.momentum(b), eps).unwrap().wave(g).unwrap();
                let direct = r.sandwich(&z).unwrap() / (2.0 * PI * eps);
                err = err.max((direct - hu.value(a, b)).abs());
            }
        }
        assert!(err < 1e-8, "{err:e}");
    }

    #[test]
    fn coherent_husimi_has_variance_eps() {
        let eps = 0.3;
        let r = CoherentState::new(0.5, -0.4, eps).unwrap().projector(grid()).unwrap();
        let (mean, var) = husimi_transform(&r, eps).unwrap().moments();
        assert!((mean[0] - 0.5).abs() < 1e-8 && (mean[1] + 0.4).abs() < 1e-8);
        assert!((var[0] - eps).abs() < 1e-8 && (var[1] - eps).abs() < 1e-8);
    }

    #[test]
    fn random_suite_is_real_positive_and_normalized() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = SpatialGrid::new(128, 24.0).unwrap();
        for k in 0..50 {
            let eps = [0.2, 0.5, 1.0][k % 3];
            let r = random_operator(&mut rng, g, eps);
            let w = wigner_transform(&r, eps).unwrap();
            assert!((w.mass() - 1.0).abs() < 1e-6);
            let hu = w.heat_smoothed(eps / 4.0).unwrap();
            assert!(hu.min() >= -1e-10, "case {k}: {}", hu.min());
            assert!((hu.mass() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        let r = excited(grid(), 0.5);
        assert!(wigner_transform(&r, 0.0).is_err());
        assert!(wigner_transform(&r, 1.5).is_err());
        let far = EmpiricalMeasure::uniform(2, vec![13.0, 0.0]).unwrap();
        assert!(toeplitz_quantize(&far, 0.5, grid()).is_err());
        let ok = EmpiricalMeasure::uniform(2, vec![11.0, 0.0]).unwrap();
        assert!(toeplitz_quantize(&ok, 0.5, grid()).is_ok());
    }

    #[test]
    fn toeplitz_operators() {
        let g = grid();
        let eps = 0.4;
        let one = EmpiricalMeasure::uniform(2, vec![0.5, 1.0]).unwrap();
        let t = toeplitz_quantize(&one, eps, g).unwrap();
        let direct = CoherentState::new(0.5, 1.0, eps).unwrap().projector(g).unwrap();
        assert!((t.matrix() - direct.matrix()).iter().all(|z| z.norm() < 1e-14));

        let two = EmpiricalMeasure::uniform(2, vec![-1.0, 0.0, 2.0, 0.5]).unwrap();
        let t = toeplitz_quantize(&two, eps, g).unwrap();
        assert!((t.trace() - 1.0).abs() < 1e-10);
        let ev = t.eigenvalues();
        assert!(ev[ev.len() - 3].abs() < 1e-10 && ev[0] > -1e-12);

        // a lattice covering the box and a momentum band: nearly flat density
        let mut atoms = Vec::new();
        for i in 0..64 {
            for j in 0..9 {
                atoms.extend([-8.0 + i as f64 * 0.25, -1.0 + j as f64 * 0.25]);
            }
        }
        let lat = EmpiricalMeasure::uniform(2, atoms).unwrap();
        let t = toeplitz_quantize(&lat, eps, g).unwrap();
        let diag: Vec<f64> = t.matrix().diagonal().iter().map(|z| z.re).collect();
        let mean = diag.iter().sum::<f64>() / diag.len() as f64;
        assert!(diag.iter().all(|d| (d / mean - 1.0).abs() < 0.05));
    }

    #[test]
    fn pinned_case_is_exact() {
        for &eps in &[0.1, 0.5] {
            let (q, p) = (0.7, -0.3);
            let f = EmpiricalMeasure::uniform(2, vec![q, p]).unwrap();
            let r = CoherentState::new(q, p, eps).unwrap().projector(grid()).unwrap();
            let b = pseudo_distance_bounds(&f, &r, eps, Some(&f)).unwrap();
            assert!((b.upper_trivial - eps).abs() < 1e-4, "{b:?}");
            assert!((b.lower - eps).abs() < 1e-4, "{b:?}");
            assert!((b.husimi_mk2_sq - 2.0 * eps).abs() < 1e-4);
            assert!((b.upper_toeplitz.unwrap() - eps).abs() < 1e-12);
        }
    }

    #[test]
    fn sandwich_and_triangle() {
        let g = SpatialGrid::new(64, 12.0).unwrap();
        let eps = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let draw = |rng: &mut ChaCha8Rng| {
            let atoms = (0..24).flat_map(|_| [rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0)]).collect();
            EmpiricalMeasure::uniform(2, atoms).unwrap()
        };
        for _ in 0..3 {
            let f = draw(&mut rng);
            let g2 = draw(&mut rng);
            let r = random_operator(&mut rng, g, eps);
            let bf = pseudo_distance_bounds(&f, &r, eps, None).unwrap();
            let bg = pseudo_distance_bounds(&g2, &r, eps, None).unwrap();
            assert!(bf.lower >= eps);
            assert!(bf.is_consistent(1e-9), "{bf:?}");
            let fg = mk_distance(&f, &g2, 2.0, &MkOptions::default()).unwrap().distance;
            assert!(bf.lower.sqrt() <= fg + bg.upper_trivial.sqrt() + bf.tolerance.sqrt() + 1e-9);

            let t = toeplitz_quantize(&f, eps, g).unwrap();
            let bt = pseudo_distance_bounds(&f, &t, eps, Some(&f)).unwrap();
            assert!((bt.upper_toeplitz.unwrap() - eps).abs() < 1e-12);
            assert!(bt.husimi_mk2_sq <= 2.0 * eps + bt.tolerance, "{bt:?}");
            assert!(bt.is_consistent(1e-9));
        }
        let f = draw(&mut rng);
        let other = draw(&mut rng);
        let t = toeplitz_quantize(&f, eps, g).unwrap();
        assert!(pseudo_distance_bounds(&f, &t, eps, Some(&other)).is_err());
    }

    #[test]
    fn aggregation_respects_the_cap() {
        let r = CoherentState::new(0.0, 0.0, 1.0).unwrap().projector(grid()).unwrap();
        let hu = husimi_transform(&r, 1.0).unwrap();
        let full = hu.to_measure(usize::MAX).unwrap();
        let coarse = hu.to_measure(200).unwrap();
        assert!(coarse.measure.len() <= 200);
        assert!(coarse.displacement_sq > full.displacement_sq);
        let m0 = full.measure.mean();
        let m1 = coarse.measure.mean();
        assert!((m0[0] - m1[0]).abs() < 1e-10 && (m0[1] - m1[1]).abs() < 1e-10);
    }

    #[test]
    fn exports() {
        let r = CoherentState::new(0.0, 0.0, 0.5).unwrap().projector(SpatialGrid::new(8, 8.0).unwrap()).unwrap();
        let w = wigner_transform(&r, 0.5).unwrap();
        let mut csv = Vec::new();
        w.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 65);
        assert!(text.starts_with("x,xi,W\n"));
        let mut gp = Vec::new();
        w.write_gnuplot(&mut gp).unwrap();
        let text = String::from_utf8(gp).unwrap();
        assert_eq!(text.lines().filter(|l| l.is_empty()).count(), 8);
    }
}
