//! One-dimensional periodic grids for single-particle (Hartree) and small
//! N-particle Schrödinger dynamics.
//!
//! A wave function stores its grid values `ψ(x_a)`, `x_a = −L/2 + a h`,
//! normalized by `h^N Σ |ψ|² = 1`. Operators on the single-particle space
//! are `M × M` matrices in the orthonormal basis `δ_a / √h`, so traces and
//! eigenvalues are those of the operator, and grid values transform by the
//! same matrix.

mod checkpoint;
mod evolve;
mod klimontovich;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{invalid, Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC};
pub use evolve::{
    hartree_energy, hartree_evolve, kinetic_operator, nbody_energy, nbody_schrodinger_evolve, EvolveOptions,
};
pub use klimontovich::{
    apply_one_body, apply_one_body_avg, interaction_bracket_expectation, klimontovich_expectation, mf_error,
    multiplication_operator, qklim_residual, rank_one, MfError, QklimResidual,
};

pub type Operator = DMatrix<Complex64>;

/// Largest number of complex amplitudes an N-particle state may hold.
pub const DEFAULT_AMPLITUDE_CAP: usize = 1 << 24;

/// Uniform periodic grid of `M` points on a box of side `L`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpatialGrid {
    m: usize,
    l: f64,
}

impl SpatialGrid {
    /// `M` must be a power of two, at least 2.
    pub fn new(m: usize, l: f64) -> Result<Self> {
        if m < 2 || !m.is_power_of_two() {
            return Err(invalid(format!("grid size must be a power of two ≥ 2, got {m}")));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(invalid(format!("box length must be positive, got {l}")));
        }
        Ok(Self { m, l })
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn box_length(&self) -> f64 {
        self.l
    }

    pub fn spacing(&self) -> f64 {
        self.l / self.m as f64
    }

    pub fn point(&self, a: usize) -> f64 {
        -0.5 * self.l + a as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.m).map(|a| self.point(a)).collect()
    }

    /// Signed frequency index of FFT bin `n`, in `[−M/2, M/2)`.
    pub fn signed_index(&self, n: usize) -> i64 {
        if n < self.m / 2 {
            n as i64
        } else {
            n as i64 - self.m as i64
        }
    }

    /// Wavenumber `2π n / L` of FFT bin `n`.
    pub fn wavenumber(&self, n: usize) -> f64 {
        2.0 * std::f64::consts::PI * self.signed_index(n) as f64 / self.l
    }

    /// Amplitude count of an `n`-particle state, or `None` on overflow.
    pub fn tensor_len(&self, n: usize) -> Option<usize> {
        self.m.checked_pow(n as u32)
    }

    pub(crate) fn check_cap(&self, n: usize, cap: usize) -> Result<usize> {
        match self.tensor_len(n) {
            Some(size) if size <= cap => Ok(size),
            Some(size) => Err(Error::CapExceeded {
                what: "N-particle amplitudes",
                size,
                cap,
            }),
            None => Err(Error::CapExceeded {
                what: "N-particle amplitudes",
                size: usize::MAX,
                cap,
            }),
        }
    }
}

/// Grid values of an `N`-particle wave function, particle axes in row-major
/// order (the last particle varies fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    grid: SpatialGrid,
    particles: usize,
    amps: Vec<Complex64>,
    scale: f64,
    pub t: f64,
}

impl WaveFunction {
    /// Validates shape, finiteness and normalization within `1e-10`.
    pub fn new(grid: SpatialGrid, particles: usize, amps: Vec<Complex64>, scale: f64) -> Result<Self> {
        let psi = Self::unchecked(grid, particles, amps, scale)?;
        let n = psi.norm_sq();
        if (n - 1.0).abs() > 1e-10 {
            return Err(Error::Normalization(format!("squared norm is {n}")));
        }
        Ok(psi)
    }

    /// Rescales `amps` to unit norm.
    pub fn normalized(grid: SpatialGrid, particles: usize, amps: Vec<Complex64>, scale: f64) -> Result<Self> {
        let mut psi = Self::unchecked(grid, particles, amps, scale)?;
        let n = psi.norm_sq();
        if !(n > 0.0) {
            return Err(Error::Normalization("zero wave function".into()));
        }
        let f = 1.0 / n.sqrt();
        psi.amps.iter_mut().for_each(|a| *a *= f);
        Ok(psi)
    }

    fn unchecked(grid: SpatialGrid, particles: usize, amps: Vec<Complex64>, scale: f64) -> Result<Self> {
        if particles == 0 {
            return Err(invalid("a wave function needs at least one particle"));
        }
        let expected = grid.tensor_len(particles).ok_or_else(|| invalid("grid too large"))?;
        if amps.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                found: amps.len(),
            });
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(invalid(format!("scale must be positive, got {scale}")));
        }
        if amps.iter().any(|a| !(a.re.is_finite() && a.im.is_finite())) {
            return Err(Error::NonFinite { time: 0.0 });
        }
        Ok(Self {
            grid,
            particles,
            amps,
            scale,
            t: 0.0,
        })
    }

    /// Single-particle state sampled from `f` and normalized.
    pub fn from_fn(grid: SpatialGrid, scale: f64, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        let amps = grid.points().into_iter().map(f).collect();
        Self::normalized(grid, 1, amps, scale)
    }

    /// `e^{i 2π n x / L} / √L`.
    pub fn plane_wave(grid: SpatialGrid, scale: f64, n: i64) -> Result<Self> {
        let k = 2.0 * std::f64::consts::PI * n as f64 / grid.box_length();
        Self::from_fn(grid, scale, |x| Complex64::from_polar(1.0, k * x))
    }

    /// Periodized packet `Σ_j g(x + jL)` with
    /// `g(x) = exp(−(x − q)²/(2s) + i p x / scale)`, normalized.
    pub fn gaussian_packet(grid: SpatialGrid, scale: f64, q: f64, p: f64, variance: f64) -> Result<Self> {
        if !(variance > 0.0) {
            return Err(invalid("packet variance must be positive"));
        }
        let l = grid.box_length();
        let images = (4.0 * (variance.sqrt() * 10.0 / l).ceil()) as i64 + 2;
        Self::from_fn(grid, scale, |x| {
            (-images..=images)
                .map(|j| {
                    let y = x + j as f64 * l;
                    Complex64::from_polar((-(y - q) * (y - q) / (2.0 * variance)).exp(), p * y / scale)
                })
                .sum()
        })
    }

    /// `ψ ⊗ ⋯ ⊗ ψ` (`n` factors).
    pub fn tensor_power(psi: &WaveFunction, n: usize, cap: usize) -> Result<Self> {
        Self::product(&vec![psi; n], cap)
    }

    /// `ψ_1 ⊗ ⋯ ⊗ ψ_N` of single-particle states on a common grid.
    pub fn product(factors: &[&WaveFunction], cap: usize) -> Result<Self> {
        let first = factors.first().ok_or_else(|| invalid("empty product"))?;
        if factors.iter().any(|f| f.particles != 1 || f.grid != first.grid || f.scale != first.scale) {
            return Err(invalid("factors must be single-particle states on one grid and scale"));
        }
        first.grid.check_cap(factors.len(), cap)?;
        let mut amps = first.amps.clone();
        for f in &factors[1..] {
            let mut next = Vec::with_capacity(amps.len() * f.amps.len());
            for a in &amps {
                next.extend(f.amps.iter().map(|b| a * b));
            }
            amps = next;
        }
        Ok(Self {
            grid: first.grid,
            particles: factors.len(),
            amps,
            scale: first.scale,
            t: first.t,
        })
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn amplitudes(&self) -> &[Complex64] {
        &self.amps
    }

    pub(crate) fn amplitudes_mut(&mut self) -> &mut [Complex64] {
        &mut self.amps
    }

    pub(crate) fn with_amplitudes(&self, amps: Vec<Complex64>) -> Self {
        Self { amps, ..self.clone() }
    }

    /// Weight `h^N` of one grid cell of the configuration space.
    pub fn cell(&self) -> f64 {
        self.grid.spacing().powi(self.particles as i32)
    }

    pub fn norm_sq(&self) -> f64 {
        self.cell() * self.amps.iter().map(|a| a.norm_sqr()).sum::<f64>()
    }

    /// `⟨self|other⟩`, antilinear in `self`.
    pub fn inner(&self, other: &WaveFunction) -> Result<Complex64> {
        self.check_same_space(other)?;
        Ok(inner_raw(&self.amps, &other.amps) * self.cell())
    }

    pub(crate) fn check_same_space(&self, other: &WaveFunction) -> Result<()> {
        if self.grid != other.grid || self.particles != other.particles {
            return Err(invalid("states live on different grids"));
        }
        Ok(())
    }

    /// Coefficients `√h ψ` in the orthonormal basis (single-particle only).
    pub fn coefficients(&self) -> Result<DVector<Complex64>> {
        if self.particles != 1 {
            return Err(invalid("coefficients are defined for single-particle states"));
        }
        let s = self.grid.spacing().sqrt();
        Ok(DVector::from_iterator(self.amps.len(), self.amps.iter().map(|a| a * s)))
    }

    /// Exchanges particles `i` and `j`.
    pub fn swap_axes(&self, i: usize, j: usize) -> Self {
        let m = self.grid.m;
        let n = self.particles;
        let mut out = self.amps.clone();
        let mut idx = vec![0usize; n];
        for (flat, a) in self.amps.iter().enumerate() {
            unravel(flat, m, &mut idx);
            idx.swap(i, j);
            out[ravel(&idx, m)] = *a;
        }
        self.with_amplitudes(out)
    }

    /// Bosonic projection `(1/N!) Σ_σ U_σ Ψ`, renormalized.
    pub fn symmetrized(&self) -> Result<Self> {
        let m = self.grid.m;
        let n = self.particles;
        let perms = permutations(n);
        let mut out = vec![Complex64::new(0.0, 0.0); self.amps.len()];
        let mut idx = vec![0usize; n];
        let mut pidx = vec![0usize; n];
        for (flat, o) in out.iter_mut().enumerate() {
            unravel(flat, m, &mut idx);
            for p in &perms {
                for (k, &src) in p.iter().enumerate() {
                    pidx[k] = idx[src];
                }
                *o += self.amps[ravel(&pidx, m)];
            }
        }
        Self::normalized(self.grid, n, out, self.scale).map(|mut s| {
            s.t = self.t;
            s
        })
    }

    /// Largest change under a transposition of particle axes.
    pub fn symmetry_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.particles {
            for j in i + 1..self.particles {
                let s = self.swap_axes(i, j);
                for (a, b) in s.amps.iter().zip(&self.amps) {
                    worst = worst.max((a - b).norm());
                }
            }
        }
        worst
    }
}

pub(crate) fn inner_raw(a: &[Complex64], b: &[Complex64]) -> Complex64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

fn unravel(mut flat: usize, m: usize, idx: &mut [usize]) {
    for slot in idx.iter_mut().rev() {
        *slot = flat % m;
        flat /= m;
    }
}

fn ravel(idx: &[usize], m: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * m + i)
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..n {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

/// Runs `f` on every line of `data` along particle axis `axis`.
pub(crate) fn for_each_line(
    data: &mut [Complex64],
    m: usize,
    particles: usize,
    axis: usize,
    mut f: impl FnMut(&mut [Complex64]),
) {
    let stride = m.pow((particles - 1 - axis) as u32);
    if stride == 1 {
        data.chunks_exact_mut(m).for_each(f);
        return;
    }
    let block = stride * m;
    let mut line = vec![Complex64::new(0.0, 0.0); m];
    for base in (0..data.len()).step_by(block) {
        for off in 0..stride {
            for (i, slot) in line.iter_mut().enumerate() {
                *slot = data[base + off + i * stride];
            }
            f(&mut line);
            for (i, v) in line.iter().enumerate() {
                data[base + off + i * stride] = *v;
            }
        }
    }
}

/// A density operator on the `k`-particle grid space, as its matrix in the
/// orthonormal basis. The integral kernel is `matrix / h^k`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityOperator {
    grid: SpatialGrid,
    particles: usize,
    matrix: Operator,
}

impl DensityOperator {
    /// Checks Hermiticity (`1e-10`), positivity (eigenvalues `≥ −1e-10`) and
    /// unit trace (`1e-8`).
    pub fn new(grid: SpatialGrid, particles: usize, matrix: Operator) -> Result<Self> {
        let r = Self::unchecked(grid, particles, matrix)?;
        r.validate()?;
        Ok(r)
    }

    pub(crate) fn unchecked(grid: SpatialGrid, particles: usize, matrix: Operator) -> Result<Self> {
        let n = grid.tensor_len(particles).ok_or_else(|| invalid("grid too large"))?;
        if matrix.nrows() != n || matrix.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: matrix.nrows(),
            });
        }
        Ok(Self {
            grid,
            particles,
            matrix,
        })
    }

    /// `|ψ⟩⟨ψ|`.
    pub fn pure(psi: &WaveFunction) -> Result<Self> {
        let c = psi.coefficients()?;
        Ok(Self {
            grid: psi.grid,
            particles: 1,
            matrix: &c * c.adjoint(),
        })
    }

    /// `Σ_k w_k |ψ_k⟩⟨ψ_k|` with nonnegative weights summing to one.
    pub fn mixture(terms: &[(f64, &WaveFunction)]) -> Result<Self> {
        let (_, first) = terms.first().ok_or_else(|| invalid("empty mixture"))?;
        let m = first.grid.len();
        let mut matrix = Operator::zeros(m, m);
        for (w, psi) in terms {
            if *w < 0.0 {
                return Err(invalid("mixture weights must be nonnegative"));
            }
            let c = psi.coefficients()?;
            matrix += (&c * c.adjoint()) * Complex64::new(*w, 0.0);
        }
        Self::new(first.grid, 1, matrix)
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn particles(&self) -> usize {
        self.particles
    }

    pub fn matrix(&self) -> &Operator {
        &self.matrix
    }

    /// Integral kernel `r(x_a, x_b)`.
    pub fn kernel(&self, a: usize, b: usize) -> Complex64 {
        self.matrix[(a, b)] / self.grid.spacing().powi(self.particles as i32)
    }

    pub fn trace(&self) -> f64 {
        self.matrix.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Eigenvalues of the Hermitian part, ascending.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let h = (&self.matrix + self.matrix.adjoint()) * Complex64::new(0.5, 0.0);
        let mut ev: Vec<f64> = SymmetricEigen::new(h).eigenvalues.iter().copied().collect();
        ev.sort_by(f64::total_cmp);
        ev
    }

    pub fn validate(&self) -> Result<()> {
        let herm = self.hermiticity_defect();
        if herm > 1e-10 {
            return Err(invalid(format!("density operator is not Hermitian (defect {herm:.3e})")));
        }
        let tr = self.trace();
        if (tr - 1.0).abs() > 1e-8 {
            return Err(Error::Normalization(format!("trace is {tr}")));
        }
        let lo = self.eigenvalues()[0];
        if lo < -1e-10 {
            return Err(invalid(format!("density operator has eigenvalue {lo:.3e}")));
        }
        Ok(())
    }

    /// `trace(R A)`.
    pub fn expectation(&self, a: &Operator) -> Result<Complex64> {
        if a.shape() != self.matrix.shape() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                found: a.nrows(),
            });
        }
        Ok((&self.matrix * a).trace())
    }

    /// `⟨φ|R|φ⟩` for a single-particle state.
    pub fn sandwich(&self, phi: &WaveFunction) -> Result<f64> {
        let c = phi.coefficients()?;
        if c.len() != self.matrix.nrows() {
            return Err(Error::DimensionMismatch {
                expected: self.matrix.nrows(),
                found: c.len(),
            });
        }
        Ok((c.adjoint() * &self.matrix * &c)[(0, 0)].re)
    }
}

/// `R_{N:k}`: partial trace over the last `N − k` particles.
pub fn reduce_density(psi: &WaveFunction, k: usize) -> Result<DensityOperator> {
    reduce_density_capped(psi, k, DEFAULT_AMPLITUDE_CAP)
}

/// As [`reduce_density`] with an explicit cap on the matrix entries.
pub fn reduce_density_capped(psi: &WaveFunction, k: usize, cap: usize) -> Result<DensityOperator> {
    let n = psi.particles;
    if k == 0 || k >= n {
        return Err(invalid(format!("marginal order must be in 1..{n}, got {k}")));
    }
    let rows = psi.grid.check_cap(2 * k, cap)?.isqrt();
    let cols = psi.amps.len() / rows;
    let mat = DMatrix::from_row_slice(rows, cols, &psi.amps);
    let r = (&mat * mat.adjoint()) * Complex64::new(psi.cell(), 0.0);
    DensityOperator::unchecked(psi.grid, k, r)
}

/// One-particle marginal along particle `axis`, for states without exchange
/// symmetry.
pub fn reduce_density_axis(psi: &WaveFunction, axis: usize) -> Result<DensityOperator> {
    if axis >= psi.particles {
        return Err(invalid(format!("particle axis {axis} out of range")));
    }
    if psi.particles == 1 {
        return DensityOperator::pure(psi);
    }
    reduce_density(&psi.swap_axes(0, axis), 1)
}
