//! Expectations of the quantum Klimontovich map `𝓜_N(A) = (1/N) Σ_j A^{(j)}`
//! (with `A^{(j)}` acting on particle `j`), of the interaction bracket, and
//! mean-field error functionals.

use num_complex::Complex64;

use super::evolve::{kinetic_operator, lattice_modes};
use super::{for_each_line, inner_raw, reduce_density, DensityOperator, Operator, SpatialGrid, WaveFunction};
use super::{nbody_schrodinger_evolve, EvolveOptions};
use crate::error::{invalid, Error, Result};
use crate::potentials::InteractionPotential;

/// `|φ⟩⟨φ|` as a matrix.
pub fn rank_one(phi: &WaveFunction) -> Result<Operator> {
    let c = phi.coefficients()?;
    Ok(&c * c.adjoint())
}

/// Multiplication by `f(x)`.
pub fn multiplication_operator(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Operator {
    Operator::from_diagonal(&nalgebra::DVector::from_iterator(grid.len(), grid.points().into_iter().map(f)))
}

fn check_operator(psi: &WaveFunction, a: &Operator) -> Result<()> {
    let m = psi.grid().len();
    if a.nrows() != m || a.ncols() != m {
        return Err(Error::DimensionMismatch {
            expected: m,
            found: a.nrows(),
        });
    }
    Ok(())
}

/// Amplitudes of `A^{(axis)} Ψ`.
pub fn apply_one_body(psi: &WaveFunction, a: &Operator, axis: usize) -> Result<Vec<Complex64>> {
    check_operator(psi, a)?;
    if axis >= psi.particles() {
        return Err(invalid(format!("particle axis {axis} out of range")));
    }
    let m = psi.grid().len();
    let mut data = psi.amplitudes().to_vec();
    let mut tmp = vec![Complex64::new(0.0, 0.0); m];
    for_each_line(&mut data, m, psi.particles(), axis, |line| {
        for (i, t) in tmp.iter_mut().enumerate() {
            *t = (0..m).map(|j| a[(i, j)] * line[j]).sum();
        }
        line.copy_from_slice(&tmp);
    });
    Ok(data)
}

/// Amplitudes of `𝓜_N(A) Ψ = (1/N) Σ_j A^{(j)} Ψ`.
pub fn apply_one_body_avg(psi: &WaveFunction, a: &Operator) -> Result<Vec<Complex64>> {
    let n = psi.particles();
    let mut acc = vec![Complex64::new(0.0, 0.0); psi.amplitudes().len()];
    for axis in 0..n {
        for (s, v) in acc.iter_mut().zip(apply_one_body(psi, a, axis)?) {
            *s += v;
        }
    }
    let w = 1.0 / n as f64;
    acc.iter_mut().for_each(|s| *s *= w);
    Ok(acc)
}

/// `⟨Ψ|𝓜_N(A)|Ψ⟩`. Evaluated on `Ψ(t)` this is the Heisenberg-picture
/// expectation `⟨Ψ^in|𝓜_N(t)(A)|Ψ^in⟩`.
pub fn klimontovich_expectation(psi: &WaveFunction, a: &Operator) -> Result<Complex64> {
    let m_psi = apply_one_body_avg(psi, a)?;
    Ok(inner_raw(psi.amplitudes(), &m_psi) * psi.cell())
}

/// `⟨Ψ| C[V, 𝓜_N, 𝓜_N](A) |Ψ⟩` with
///
/// ```text
/// C(A) = Σ_ω V̂_ω [ 𝓜_N(E_{−ω}) 𝓜_N(E_ω A) − 𝓜_N(A E_ω) 𝓜_N(E_{−ω}) ]
/// ```
///
/// and `E_ω` the multiplication by `e^{iωx}`. Each product is evaluated as an
/// inner product of the two factors applied to `Ψ`.
pub fn interaction_bracket_expectation(psi: &WaveFunction, a: &Operator, v: &InteractionPotential) -> Result<Complex64> {
    check_operator(psi, a)?;
    let grid = psi.grid();
    let modes = lattice_modes(grid, v)?;
    let mut total = Complex64::new(0.0, 0.0);
    for (w, c) in modes {
        let e_plus = multiplication_operator(grid, |x| Complex64::from_polar(1.0, w * x));
        let e_minus = e_plus.adjoint();
        // ⟨𝓜(E_{−ω})† Ψ | 𝓜(E_ω A) Ψ⟩ with 𝓜(E_{−ω})† = 𝓜(E_ω)
        let left1 = apply_one_body_avg(psi, &e_plus)?;
        let right1 = apply_one_body_avg(psi, &(&e_plus * a))?;
        // ⟨𝓜(A E_ω)† Ψ | 𝓜(E_{−ω}) Ψ⟩ with (A E_ω)† = E_{−ω} A†
        let left2 = apply_one_body_avg(psi, &(&e_minus * a.adjoint()))?;
        let right2 = apply_one_body_avg(psi, &e_minus)?;
        total += (inner_raw(&left1, &right1) - inner_raw(&left2, &right2)) * c;
    }
    Ok(total * psi.cell())
}

/// Mean-field error of an N-particle state against a single-particle state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MfError {
    /// `‖R_{N:1} − |ψ⟩⟨ψ|‖` in operator norm.
    pub op_norm: f64,
    /// `1 − ⟨ψ|R_{N:1}|ψ⟩`.
    pub pickl: f64,
}

/// Compares the one-particle marginal of `big` with `|ψ⟩⟨ψ|`.
pub fn mf_error(big: &WaveFunction, psi: &WaveFunction) -> Result<MfError> {
    if big.grid() != psi.grid() || (big.scale() - psi.scale()).abs() > 1e-15 {
        return Err(invalid("states live on different grids or scales"));
    }
    let r = reduce_density(big, 1)?;
    let p = DensityOperator::pure(psi)?;
    let diff = DensityOperator::unchecked(psi.grid(), 1, r.matrix() - p.matrix())?;
    let op_norm = diff.eigenvalues().iter().map(|e| e.abs()).fold(0.0, f64::max);
    let pickl = (1.0 - r.sandwich(psi)?).clamp(0.0, 1.0);
    Ok(MfError { op_norm, pickl })
}

/// Both sides of the Klimontovich evolution equation at time `t`.
#[derive(Debug, Clone, Copy)]
pub struct QklimResidual {
    /// `iħ (F(t + dt) − F(t − dt)) / 2dt` for `F(s) = ⟨Ψ(s)|𝓜_N(A)|Ψ(s)⟩`.
    pub lhs: Complex64,
    /// `−⟨Ψ(t)|𝓜_N([K, A])|Ψ(t)⟩ − ⟨Ψ(t)|C[V,𝓜_N,𝓜_N](A)|Ψ(t)⟩`.
    pub rhs: Complex64,
    pub residual: f64,
}

/// Evolves `psi0` with step `dt` to `t ± dt` and compares a central
/// difference of the Klimontovich expectation with the right-hand side of
///
/// ```text
/// iħ ∂_t 𝓜_N(t) A = −𝓜_N(t)[K, A] − C[V, 𝓜_N(t), 𝓜_N(t)](A),   K = −½ħ² ∂_x².
/// ```
pub fn qklim_residual(
    psi0: &WaveFunction,
    v: &InteractionPotential,
    a: &Operator,
    t: f64,
    dt: f64,
) -> Result<QklimResidual> {
    if !(t >= dt && dt > 0.0) {
        return Err(invalid("need t ≥ dt > 0"));
    }
    let steps = (t / dt).round();
    if (steps * dt - t).abs() > 1e-9 * t {
        return Err(invalid("t must be a multiple of dt"));
    }
    let opts = EvolveOptions::new(t + dt, dt).outputs(steps as usize + 1);
    let path = nbody_schrodinger_evolve(psi0, v, &opts)?;
    let n = path.len();
    let (before, now, after) = (&path[n - 3], &path[n - 2], &path[n - 1]);
    let hbar = psi0.scale();
    let f_minus = klimontovich_expectation(before, a)?;
    let f_plus = klimontovich_expectation(after, a)?;
    let lhs = Complex64::new(0.0, hbar) * (f_plus - f_minus) / (2.0 * dt);
    let k = kinetic_operator(psi0.grid(), hbar);
    let comm = &k * a - a * &k;
    let rhs = -klimontovich_expectation(now, &comm)? - interaction_bracket_expectation(now, a, v)?;
    Ok(QklimResidual {
        lhs,
        rhs,
        residual: (lhs - rhs).norm(),
    })
}
