//! Strang-split propagators: half potential step, exact kinetic step in
//! Fourier space, half potential step.
//!
//! Hartree: `i ħ ∂_t ψ = −½ħ² ∂_x² ψ + (V ⋆ |ψ|²) ψ`. The mean-field potential
//! is frozen over each half step, which is exact because a multiplication by
//! a phase leaves `|ψ|²` unchanged.
//!
//! N-body: `i ħ ∂_t Ψ = Σ_j −½ħ² ∂_{x_j}² Ψ + (1/N) Σ_{k<l} V(x_k − x_l) Ψ`.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::{for_each_line, Operator, SpatialGrid, WaveFunction, DEFAULT_AMPLITUDE_CAP};
use crate::classical::{output_steps, time_grid};
use crate::error::{invalid, Error, Result};
use crate::potentials::InteractionPotential;

/// Time stepping options shared by both propagators.
#[derive(Debug, Clone, Copy)]
pub struct EvolveOptions {
    pub t_end: f64,
    pub dt: f64,
    /// Number of stored snapshots after the initial state.
    pub outputs: usize,
    pub amplitude_cap: usize,
    /// Require exchange-symmetric input (checked to `1e-12`).
    pub bosonic: bool,
}

impl EvolveOptions {
    pub fn new(t_end: f64, dt: f64) -> Self {
        Self {
            t_end,
            dt,
            outputs: 1,
            amplitude_cap: DEFAULT_AMPLITUDE_CAP,
            bosonic: false,
        }
    }

    pub fn outputs(mut self, outputs: usize) -> Self {
        self.outputs = outputs;
        self
    }

    pub fn bosonic(mut self, bosonic: bool) -> Self {
        self.bosonic = bosonic;
        self
    }
}

/// Exact free propagation over one step, applied line by line.
struct KineticStep {
    m: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    phase: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl KineticStep {
    fn new(grid: SpatialGrid, scale: f64, dt: f64) -> Self {
        let m = grid.len();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(m);
        let inv = planner.plan_fft_inverse(m);
        let phase = (0..m)
            .map(|n| {
                let k = grid.wavenumber(n);
                Complex64::from_polar(1.0 / m as f64, -0.5 * scale * k * k * dt)
            })
            .collect();
        let scratch = vec![Complex64::new(0.0, 0.0); fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())];
        Self {
            m,
            fwd,
            inv,
            phase,
            scratch,
        }
    }

    fn apply(&mut self, data: &mut [Complex64], particles: usize) {
        for axis in 0..particles {
            let (fwd, inv, phase, scratch) = (&self.fwd, &self.inv, &self.phase, &mut self.scratch);
            for_each_line(data, self.m, particles, axis, |line| {
                fwd.process_with_scratch(line, scratch);
                for (v, p) in line.iter_mut().zip(phase) {
                    *v *= p;
                }
                inv.process_with_scratch(line, scratch);
            });
        }
    }
}

/// `(ω, V̂_ω)` for a potential compatible with the box: every frequency must
/// be a multiple of `2π/L`.
pub(crate) fn lattice_modes(grid: SpatialGrid, v: &InteractionPotential) -> Result<Vec<(f64, f64)>> {
    let modes = v.fourier_1d()?;
    let base = 2.0 * std::f64::consts::PI / grid.box_length();
    for &(w, _) in &modes {
        let n = w / base;
        if (n - n.round()).abs() > 1e-9 {
            return Err(invalid(format!(
                "potential frequency {w} is not on the lattice of the box of side {}",
                grid.box_length()
            )));
        }
    }
    Ok(modes)
}

/// `(V ⋆ |ψ|²)(x_a)` from the Fourier data.
fn mean_field(grid: SpatialGrid, modes: &[(f64, f64)], amps: &[Complex64]) -> Vec<f64> {
    let h = grid.spacing();
    let xs = grid.points();
    let mut u = vec![0.0; amps.len()];
    for &(w, c) in modes {
        let rho: Complex64 = xs
            .iter()
            .zip(amps)
            .map(|(x, a)| Complex64::from_polar(a.norm_sqr(), -w * x))
            .sum::<Complex64>()
            * h;
        for (ua, x) in u.iter_mut().zip(&xs) {
            *ua += c * (Complex64::from_polar(1.0, w * x) * rho).re;
        }
    }
    u
}

fn check_norm(psi: &WaveFunction) -> Result<()> {
    let n = psi.norm_sq();
    if !n.is_finite() {
        return Err(Error::NonFinite { time: psi.t });
    }
    if (n - 1.0).abs() > 1e-6 {
        return Err(Error::Normalization(format!("squared norm {n} at t = {}", psi.t)));
    }
    Ok(())
}

/// Evolves a single-particle state under the Hartree equation with
/// `ħ = psi0.scale()`. Returns `psi0` followed by `opts.outputs` snapshots.
pub fn hartree_evolve(psi0: &WaveFunction, v: &InteractionPotential, opts: &EvolveOptions) -> Result<Vec<WaveFunction>> {
    if psi0.particles() != 1 {
        return Err(invalid("the Hartree equation evolves single-particle states"));
    }
    check_norm(psi0)?;
    let grid = psi0.grid();
    let modes = lattice_modes(grid, v)?;
    let hbar = psi0.scale();
    let (steps, h) = time_grid(opts.t_end, opts.dt)?;
    let marks = output_steps(steps, opts.outputs);
    let mut kin = KineticStep::new(grid, hbar, h);
    let mut psi = psi0.clone();
    let t0 = psi.t;
    let mut out = vec![psi.clone()];
    let half_kick = |amps: &mut [Complex64]| {
        let u = mean_field(grid, &modes, amps);
        for (a, ua) in amps.iter_mut().zip(&u) {
            *a *= Complex64::from_polar(1.0, -0.5 * h * ua / hbar);
        }
    };
    let mut next = 0;
    for step in 1..=steps {
        half_kick(psi.amplitudes_mut());
        kin.apply(psi.amplitudes_mut(), 1);
        half_kick(psi.amplitudes_mut());
        psi.t = t0 + step as f64 * h;
        if next < marks.len() && marks[next] == step {
            check_norm(&psi)?;
            out.push(psi.clone());
            next += 1;
        }
    }
    Ok(out)
}

fn kinetic_energy(psi: &WaveFunction) -> f64 {
    let grid = psi.grid();
    let m = grid.len();
    let mut planner = FftPlanner::new();
    let fwd = planner.plan_fft_forward(m);
    let k2: Vec<f64> = (0..m).map(|n| grid.wavenumber(n).powi(2)).collect();
    let mut total = 0.0;
    for axis in 0..psi.particles() {
        let mut data = psi.amplitudes().to_vec();
        for_each_line(&mut data, m, psi.particles(), axis, |line| {
            fwd.process(line);
            total += line.iter().zip(&k2).map(|(z, k)| k * z.norm_sqr()).sum::<f64>();
        });
    }
    0.5 * psi.scale() * psi.scale() * total * psi.cell() / m as f64
}

/// `½ħ² ‖∂_x ψ‖² + ½ ∬ V(x − y) |ψ(x)|² |ψ(y)|²`.
pub fn hartree_energy(psi: &WaveFunction, v: &InteractionPotential) -> Result<f64> {
    if psi.particles() != 1 {
        return Err(invalid("the Hartree energy is defined for single-particle states"));
    }
    let modes = lattice_modes(psi.grid(), v)?;
    let u = mean_field(psi.grid(), &modes, psi.amplitudes());
    let pot: f64 = u.iter().zip(psi.amplitudes()).map(|(ua, a)| ua * a.norm_sqr()).sum::<f64>() * psi.grid().spacing();
    Ok(kinetic_energy(psi) + 0.5 * pot)
}

/// `(1/N) Σ_{k<l} V(x_k − x_l)` on the tensor grid.
fn pair_table(grid: SpatialGrid, particles: usize, v: &InteractionPotential) -> Result<Vec<f64>> {
    lattice_modes(grid, v)?;
    let m = grid.len();
    let h = grid.spacing();
    // symmetric in the separation so that particle exchange is exact
    let vtab: Vec<f64> = (0..m).map(|r| v.value(&[r.min(m - r) as f64 * h])).collect();
    let size = grid.tensor_len(particles).expect("checked by caller");
    let mut table = vec![0.0; size];
    let mut idx = vec![0usize; particles];
    let scale = 1.0 / particles as f64;
    for (flat, slot) in table.iter_mut().enumerate() {
        super::unravel(flat, m, &mut idx);
        let mut s = 0.0;
        for k in 0..particles {
            for l in k + 1..particles {
                s += vtab[(idx[k] + m - idx[l]) % m];
            }
        }
        *slot = scale * s;
    }
    Ok(table)
}

/// Evolves an N-particle state with `ħ = psi0.scale()`.
pub fn nbody_schrodinger_evolve(
    psi0: &WaveFunction,
    v: &InteractionPotential,
    opts: &EvolveOptions,
) -> Result<Vec<WaveFunction>> {
    let grid = psi0.grid();
    let n = psi0.particles();
    grid.check_cap(n, opts.amplitude_cap)?;
    check_norm(psi0)?;
    if opts.bosonic {
        let defect = psi0.symmetry_defect();
        if defect > 1e-12 {
            return Err(invalid(format!("initial state is not exchange symmetric (defect {defect:.3e})")));
        }
    }
    let hbar = psi0.scale();
    let (steps, h) = time_grid(opts.t_end, opts.dt)?;
    let marks = output_steps(steps, opts.outputs);
    let table = pair_table(grid, n, v)?;
    let half: Vec<Complex64> = table.iter().map(|u| Complex64::from_polar(1.0, -0.5 * h * u / hbar)).collect();
    let mut kin = KineticStep::new(grid, hbar, h);
    let mut psi = psi0.clone();
    let t0 = psi.t;
    let mut out = vec![psi.clone()];
    let mut next = 0;
    for step in 1..=steps {
        let amps = psi.amplitudes_mut();
        amps.iter_mut().zip(&half).for_each(|(a, p)| *a *= p);
        kin.apply(amps, n);
        amps.iter_mut().zip(&half).for_each(|(a, p)| *a *= p);
        psi.t = t0 + step as f64 * h;
        if next < marks.len() && marks[next] == step {
            check_norm(&psi)?;
            out.push(psi.clone());
            next += 1;
        }
    }
    Ok(out)
}

/// `⟨Ψ| Σ_j −½ħ² ∂_{x_j}² + (1/N) Σ_{k<l} V(x_k − x_l) |Ψ⟩`.
pub fn nbody_energy(psi: &WaveFunction, v: &InteractionPotential) -> Result<f64> {
    let table = pair_table(psi.grid(), psi.particles(), v)?;
    let pot: f64 = table.iter().zip(psi.amplitudes()).map(|(u, a)| u * a.norm_sqr()).sum::<f64>() * psi.cell();
    Ok(kinetic_energy(psi) + pot)
}

/// Dense matrix of `−½ħ² ∂_x²` in the orthonormal grid basis.
pub fn kinetic_operator(grid: SpatialGrid, scale: f64) -> Operator {
    let m = grid.len();
    let h = grid.spacing();
    let k2: Vec<f64> = (0..m).map(|n| 0.5 * scale * scale * grid.wavenumber(n).powi(2)).collect();
    Operator::from_fn(m, m, |a, b| {
        let d = (a as f64 - b as f64) * h;
        k2.iter()
            .enumerate()
            .map(|(n, e)| Complex64::from_polar(*e, grid.wavenumber(n) * d))
            .sum::<Complex64>()
            / m as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::InteractionPotential;
    use std::f64::consts::PI;

    fn grid(m: usize) -> SpatialGrid {
        SpatialGrid::new(m, 2.0 * PI).unwrap()
    }

    fn cosine() -> InteractionPotential {
        InteractionPotential::cosine(1, 1.0, 2.0 * PI).unwrap()
    }

    fn sup_diff(a: &WaveFunction, b: &WaveFunction) -> f64 {
        a.amplitudes().iter().zip(b.amplitudes()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
    }

    #[test]
    fn plane_wave_only_rotates() {
        let g = grid(32);
        let psi = WaveFunction::plane_wave(g, 1.0, 3).unwrap();
        let out = hartree_evolve(&psi, &InteractionPotential::zero(1), &EvolveOptions::new(1.0, 1e-2)).unwrap();
        let end = out.last().unwrap();
        let m0 = 1.0 / g.box_length().sqrt();
        assert!(end.amplitudes().iter().all(|a| (a.norm() - m0).abs() < 1e-12));
        // e^{-i k² t/2} with k = 3
        let want = psi.amplitudes()[5] * Complex64::from_polar(1.0, -4.5);
        assert!((end.amplitudes()[5] - want).norm() < 1e-12);
    }

    #[test]
    fn uniform_density_is_stationary() {
        let g = grid(32);
        let psi = WaveFunction::plane_wave(g, 1.0, 0).unwrap();
        let out = hartree_evolve(&psi, &cosine(), &EvolveOptions::new(1.0, 1e-2)).unwrap();
        let m0 = 1.0 / g.box_length().sqrt();
        assert!(out[1].amplitudes().iter().all(|a| (a.norm() - m0).abs() < 1e-12));
    }

    #[test]
    fn hartree_self_convergence_and_conservation() {
        let g = grid(64);
        let psi = WaveFunction::gaussian_packet(g, 1.0, 0.3, 1.0, 0.5).unwrap();
        let v = cosine();
        let coarse = hartree_evolve(&psi, &v, &EvolveOptions::new(1.0, 1e-3).outputs(10)).unwrap();
        let fine = hartree_evolve(&psi, &v, &EvolveOptions::new(1.0, 1e-4)).unwrap();
        assert!(sup_diff(coarse.last().unwrap(), fine.last().unwrap()) < 1e-6);
        let e0 = hartree_energy(&psi, &v).unwrap();
        for s in &coarse {
            assert!((s.norm_sq() - 1.0).abs() < 1e-10);
            assert!((hartree_energy(s, &v).unwrap() - e0).abs() < 1e-6 * e0.abs().max(1.0));
        }
    }

    #[test]
    fn kinetic_energy_of_a_plane_wave() {
        let psi = WaveFunction::plane_wave(grid(16), 0.5, 2).unwrap();
        let e = hartree_energy(&psi, &InteractionPotential::zero(1)).unwrap();
        assert!((e - 0.5 * 0.25 * 4.0).abs() < 1e-12);
        let k = kinetic_operator(grid(16), 0.5);
        let c = psi.coefficients().unwrap();
        let ek = (c.adjoint() * &k * &c)[(0, 0)];
        assert!((ek.re - e).abs() < 1e-12 && ek.im.abs() < 1e-12);
    }

    #[test]
    fn free_product_states() {
        let g = grid(16);
        let a = WaveFunction::plane_wave(g, 1.0, 1).unwrap();
        let b = WaveFunction::plane_wave(g, 1.0, -2).unwrap();
        let psi = WaveFunction::product(&[&a, &b], 1 << 24).unwrap();
        let out = nbody_schrodinger_evolve(&psi, &InteractionPotential::zero(1), &EvolveOptions::new(0.7, 1e-2)).unwrap();
        let end = out.last().unwrap();
        // e^{-i (1 + 4) t / 2}
        let ph = Complex64::from_polar(1.0, -2.5 * 0.7);
        for (x, y) in end.amplitudes().iter().zip(psi.amplitudes()) {
            assert!((x - y * ph).norm() < 1e-12);
        }
    }

    #[test]
    fn exchange_equivariance_and_energy() {
        let g = grid(32);
        let a = WaveFunction::gaussian_packet(g, 1.0, -0.5, 1.0, 0.4).unwrap();
        let b = WaveFunction::gaussian_packet(g, 1.0, 0.8, -0.5, 0.6).unwrap();
        let psi = WaveFunction::product(&[&a, &b], 1 << 24).unwrap();
        let v = cosine();
        let opts = EvolveOptions::new(0.5, 1e-3).outputs(5);
        let direct = nbody_schrodinger_evolve(&psi, &v, &opts).unwrap();
        let swapped = nbody_schrodinger_evolve(&psi.swap_axes(0, 1), &v, &opts).unwrap();
        assert!(sup_diff(&swapped.last().unwrap().swap_axes(0, 1), direct.last().unwrap()) < 1e-12);
        let e0 = nbody_energy(&psi, &v).unwrap();
        for s in &direct {
            assert!((s.norm_sq() - 1.0).abs() < 1e-10);
            assert!((nbody_energy(s, &v).unwrap() - e0).abs() < 1e-6);
        }
        assert!(nbody_schrodinger_evolve(&psi, &v, &opts.bosonic(true)).is_err());
        let sym = psi.symmetrized().unwrap();
        let out = nbody_schrodinger_evolve(&sym, &v, &opts.bosonic(true)).unwrap();
        assert!(out.last().unwrap().symmetry_defect() < 1e-12);
    }

    #[test]
    fn one_particle_has_no_pair_term() {
        // with one particle there is no pair term and both solvers are free flow
        let g = grid(32);
        let psi = WaveFunction::gaussian_packet(g, 0.5, 0.0, 1.0, 0.3).unwrap();
        let a = hartree_evolve(&psi, &InteractionPotential::zero(1), &EvolveOptions::new(0.3, 1e-2)).unwrap();
        let b = nbody_schrodinger_evolve(&psi, &cosine(), &EvolveOptions::new(0.3, 1e-2)).unwrap();
        assert!(sup_diff(a.last().unwrap(), b.last().unwrap()) < 1e-12);
    }

    #[test]
    fn rejects_incompatible_potentials() {
        let g = grid(16);
        let psi = WaveFunction::plane_wave(g, 1.0, 0).unwrap();
        let gauss = InteractionPotential::gaussian(1, 1.0, 1.0).unwrap();
        assert!(hartree_evolve(&psi, &gauss, &EvolveOptions::new(0.1, 1e-2)).is_err());
        let off = InteractionPotential::cosine(1, 1.0, 3.0).unwrap();
        assert!(hartree_evolve(&psi, &off, &EvolveOptions::new(0.1, 1e-2)).is_err());
        let big = WaveFunction::plane_wave(SpatialGrid::new(64, 1.0).unwrap(), 1.0, 0).unwrap();
        let p5 = WaveFunction::tensor_power(&big, 4, 1 << 24).unwrap();
        let opts = EvolveOptions {
            amplitude_cap: 1 << 20,
            ..EvolveOptions::new(0.1, 1e-2)
        };
        assert!(matches!(
            nbody_schrodinger_evolve(&p5, &InteractionPotential::zero(1), &opts),
            Err(Error::CapExceeded { .. })
        ));
    }
}
