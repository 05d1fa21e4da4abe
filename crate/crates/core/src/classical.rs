//! The scaled classical N-body system
//!
//! ```text
//! ẋ_j = ξ_j,    ξ̇_j = −(1/N) Σ_{k≠j} ∇V(x_j − x_k)
//! ```
//!
//! integrated with velocity Verlet.

use std::io::Write;

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::potentials::InteractionPotential;
use crate::transport::EmpiricalMeasure;

/// Below this many particles forces are summed on the calling thread.
const PAR_THRESHOLD: usize = 128;

/// Positions and momenta of `N` particles in `R^d` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    dim: usize,
    /// `N × d`, row-major.
    pub x: Vec<f64>,
    /// `N × d`, row-major.
    pub xi: Vec<f64>,
    pub t: f64,
}

impl ParticleState {
    pub fn new(dim: usize, x: Vec<f64>, xi: Vec<f64>, t: f64) -> Result<Self> {
        if dim == 0 || x.is_empty() || !x.len().is_multiple_of(dim) {
            return Err(invalid("positions must be a nonempty N × d array"));
        }
        if xi.len() != x.len() {
            return Err(Error::DimensionMismatch {
                expected: x.len(),
                found: xi.len(),
            });
        }
        if x.iter().chain(&xi).any(|v| !v.is_finite()) || !t.is_finite() {
            return Err(Error::NonFinite { time: t });
        }
        Ok(Self { dim, x, xi, t })
    }

    /// Reads `(x, ξ)` atoms of a `2d`-dimensional phase-space measure.
    pub fn from_measure(f: &EmpiricalMeasure, t: f64) -> Result<Self> {
        if !f.dim().is_multiple_of(2) {
            return Err(invalid("phase-space measures have even dimension"));
        }
        let d = f.dim() / 2;
        let mut x = Vec::with_capacity(f.len() * d);
        let mut xi = Vec::with_capacity(f.len() * d);
        for z in f.atoms() {
            x.extend_from_slice(&z[..d]);
            xi.extend_from_slice(&z[d..]);
        }
        Self::new(d, x, xi, t)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.x.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn position(&self, j: usize) -> &[f64] {
        &self.x[j * self.dim..(j + 1) * self.dim]
    }

    pub fn momentum(&self, j: usize) -> &[f64] {
        &self.xi[j * self.dim..(j + 1) * self.dim]
    }

    /// The phase-space empirical measure `(1/N) Σ δ_{(x_j, ξ_j)}`.
    pub fn empirical_measure(&self) -> EmpiricalMeasure {
        let d = self.dim;
        let mut atoms = Vec::with_capacity(2 * self.x.len());
        for j in 0..self.len() {
            atoms.extend_from_slice(self.position(j));
            atoms.extend_from_slice(self.momentum(j));
        }
        EmpiricalMeasure::uniform(2 * d, atoms).expect("finite state")
    }

    /// Relabels particles so that new particle `j` is old particle `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let d = self.dim;
        let mut out = self.clone();
        for (j, &k) in perm.iter().enumerate() {
            out.x[j * d..(j + 1) * d].copy_from_slice(self.position(k));
            out.xi[j * d..(j + 1) * d].copy_from_slice(self.momentum(k));
        }
        out
    }

    pub fn total_momentum(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.dim];
        for c in self.xi.chunks_exact(self.dim) {
            for (a, b) in p.iter_mut().zip(c) {
                *a += b;
            }
        }
        p
    }

    fn check_finite(&self) -> Result<()> {
        if self.x.iter().chain(&self.xi).all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite { time: self.t })
        }
    }
}

/// Snapshots at uniform output times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub snapshots: Vec<ParticleState>,
    /// Step actually used, `t_end / steps`.
    pub dt: f64,
    pub scheme: &'static str,
}

impl Trajectory {
    pub fn last(&self) -> &ParticleState {
        self.snapshots.last().expect("trajectories are nonempty")
    }

    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }

    /// CSV with one row per particle and snapshot: `t, j, x, ξ`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let d = self.snapshots[0].dim;
        write!(out, "t,j")?;
        write_coord_header(&mut out, d)?;
        writeln!(out)?;
        for s in &self.snapshots {
            for j in 0..s.len() {
                write!(out, "{},{}", s.t, j)?;
                for v in s.position(j).iter().chain(s.momentum(j)) {
                    write!(out, ",{v:.17e}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

pub(crate) fn write_coord_header(out: &mut impl Write, d: usize) -> std::io::Result<()> {
    if d == 1 {
        write!(out, ",x,xi")
    } else {
        for k in 0..d {
            write!(out, ",x{k}")?;
        }
        for k in 0..d {
            write!(out, ",xi{k}")?;
        }
        Ok(())
    }
}

/// Writes `−(1/N) Σ_{k≠j} ∇V(x_j − x_k)` into `out` for each `j`.
pub(crate) fn pair_forces(dim: usize, x: &[f64], v: &InteractionPotential, out: &mut [f64]) {
    let n = x.len() / dim;
    let scale = 1.0 / n as f64;
    let row = |j: usize, f: &mut [f64]| {
        let mut z = vec![0.0; dim];
        let mut g = vec![0.0; dim];
        f.fill(0.0);
        let xj = &x[j * dim..(j + 1) * dim];
        for k in 0..n {
            if k == j {
                continue;
            }
            for (zi, (a, b)) in z.iter_mut().zip(xj.iter().zip(&x[k * dim..(k + 1) * dim])) {
                *zi = a - b;
            }
            v.gradient_into(&z, &mut g);
            for (fi, gi) in f.iter_mut().zip(&g) {
                *fi -= scale * gi;
            }
        }
    };
    if n >= PAR_THRESHOLD {
        out.par_chunks_mut(dim).enumerate().for_each(|(j, f)| row(j, f));
    } else {
        out.chunks_mut(dim).enumerate().for_each(|(j, f)| row(j, f));
    }
}

/// Right-hand side `(Ξ_N, F(X_N))` of the N-body system.
pub fn nbody_rhs(state: &ParticleState, v: &InteractionPotential) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(state.dim, v)?;
    let mut f = vec![0.0; state.x.len()];
    pair_forces(state.dim, &state.x, v, &mut f);
    Ok((state.xi.clone(), f))
}

fn check_dim(dim: usize, v: &InteractionPotential) -> Result<()> {
    if v.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: v.dim(),
        });
    }
    Ok(())
}

/// `Σ_j |ξ_j|²/2 + (1/N) Σ_{j<k} V(x_j − x_k)`.
pub fn total_energy(state: &ParticleState, v: &InteractionPotential) -> Result<f64> {
    check_dim(state.dim, v)?;
    let d = state.dim;
    let n = state.len();
    let kinetic = 0.5 * state.xi.iter().map(|p| p * p).sum::<f64>();
    let mut pair = 0.0;
    let mut z = vec![0.0; d];
    for j in 0..n {
        for k in j + 1..n {
            for (zi, (a, b)) in z.iter_mut().zip(state.position(j).iter().zip(state.position(k))) {
                *zi = a - b;
            }
            pair += v.value(&z);
        }
    }
    Ok(kinetic + pair / n as f64)
}

/// Step count and step size landing exactly on `t_end`.
pub(crate) fn time_grid(t_end: f64, dt: f64) -> Result<(usize, f64)> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid(format!("time step must be positive, got {dt}")));
    }
    if !(t_end >= 0.0 && t_end.is_finite()) {
        return Err(invalid(format!("final time must be nonnegative, got {t_end}")));
    }
    let steps = (t_end / dt - 1e-9).ceil().max(0.0) as usize;
    Ok(if steps == 0 { (0, dt) } else { (steps, t_end / steps as f64) })
}

/// Indices of the steps after which a snapshot is stored, for `outputs`
/// uniformly spaced output times (the initial time included).
pub(crate) fn output_steps(steps: usize, outputs: usize) -> Vec<usize> {
    if outputs == 0 || steps == 0 {
        return vec![steps];
    }
    let outputs = outputs.min(steps);
    (1..=outputs).map(|k| (k * steps) / outputs).collect()
}

/// Kick-drift-kick with a caller-supplied force. `force` must be current on
/// entry and is current on exit.
pub(crate) fn verlet_step(x: &mut [f64], xi: &mut [f64], force: &mut [f64], dt: f64, mut eval: impl FnMut(&[f64], &mut [f64])) {
    for (p, f) in xi.iter_mut().zip(force.iter()) {
        *p += 0.5 * dt * f;
    }
    for (q, p) in x.iter_mut().zip(xi.iter()) {
        *q += dt * p;
    }
    eval(x, force);
    for (p, f) in xi.iter_mut().zip(force.iter()) {
        *p += 0.5 * dt * f;
    }
}

/// Integrates to `t_end` storing every step.
pub fn integrate_flow(state0: &ParticleState, v: &InteractionPotential, t_end: f64, dt: f64) -> Result<Trajectory> {
    integrate_flow_sampled(state0, v, t_end, dt, usize::MAX)
}

/// Integrates to `t_end` storing the initial state and `outputs` further
/// snapshots at uniform times, the last one at `t_end`.
pub fn integrate_flow_sampled(
    state0: &ParticleState,
    v: &InteractionPotential,
    t_end: f64,
    dt: f64,
    outputs: usize,
) -> Result<Trajectory> {
    check_dim(state0.dim, v)?;
    state0.check_finite()?;
    let (steps, h) = time_grid(t_end, dt)?;
    let marks = output_steps(steps, outputs);
    let mut snapshots = Vec::with_capacity(marks.len() + 1);
    snapshots.push(state0.clone());
    let mut s = state0.clone();
    let t0 = s.t;
    let mut force = vec![0.0; s.x.len()];
    pair_forces(s.dim, &s.x, v, &mut force);
    let mut next = 0;
    for step in 1..=steps {
        let d = s.dim;
        verlet_step(&mut s.x, &mut s.xi, &mut force, h, |x, f| pair_forces(d, x, v, f));
        s.t = t0 + step as f64 * h;
        if next < marks.len() && marks[next] == step {
            s.check_finite()?;
            snapshots.push(s.clone());
            next += 1;
        }
    }
    Ok(Trajectory {
        snapshots,
        dt: h,
        scheme: "velocity-verlet",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potentials::PotentialName;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_state(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ParticleState {
        let x = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xi = (0..n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        ParticleState::new(d, x, xi, 0.0).unwrap()
    }

    fn gaussian(d: usize) -> InteractionPotential {
        InteractionPotential::builtin(PotentialName::Gaussian, d, &[1.0, 1.0]).unwrap()
    }

    fn cosine() -> InteractionPotential {
        InteractionPotential::builtin(PotentialName::Cosine, 1, &[1.0, 2.0 * std::f64::consts::PI]).unwrap()
    }

    fn sup_diff(a: &ParticleState, b: &ParticleState) -> f64 {
        a.x.iter()
            .chain(&a.xi)
            .zip(b.x.iter().chain(&b.xi))
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn free_motion() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_state(&mut rng, 5, 2);
        let zero = InteractionPotential::zero(2);
        let (dx, dxi) = nbody_rhs(&s, &zero).unwrap();
        assert_eq!(dx, s.xi);
        assert!(dxi.iter().all(|f| *f == 0.0));
        let tr = integrate_flow(&s, &zero, 1.0, 0.1).unwrap();
        let end = tr.last();
        assert_eq!(end.t, 1.0);
        for (k, v) in end.x.iter().enumerate() {
            assert!((v - (s.x[k] + s.xi[k])).abs() < 1e-14);
        }
        assert_eq!(total_energy(&ParticleState::new(2, vec![1.0, 2.0], vec![0.0, 0.0], 0.0).unwrap(), &zero).unwrap(), 0.0);
    }

    #[test]
    fn action_reaction() {
        let a = 0.7;
        let s = ParticleState::new(1, vec![a, -a], vec![0.0, 0.0], 0.0).unwrap();
        let (_, f) = nbody_rhs(&s, &cosine()).unwrap();
        assert_eq!(f[0], -f[1]);
        // −(1/2) ∇V(2a) with ∇V = −sin
        assert!((f[0] - 0.5 * (2.0 * a).sin()).abs() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_state(&mut rng, 3, 3);
        let (_, f) = nbody_rhs(&s, &gaussian(3)).unwrap();
        for c in 0..3 {
            let total: f64 = (0..3).map(|j| f[3 * j + c]).sum();
            assert!(total.abs() < 1e-12);
        }
    }

    #[test]
    fn single_particle_energy() {
        let s = ParticleState::new(2, vec![0.3, 0.1], vec![3.0, 4.0], 0.0).unwrap();
        assert_eq!(total_energy(&s, &gaussian(2)).unwrap(), 12.5);
    }

    #[test]
    fn self_convergence() {
        let s = ParticleState::new(1, vec![0.4, -0.9], vec![0.2, -0.5], 0.0).unwrap();
        let coarse = integrate_flow_sampled(&s, &cosine(), 1.0, 1e-3, 1).unwrap();
        let fine = integrate_flow_sampled(&s, &cosine(), 1.0, 1e-5, 1).unwrap();
        assert!(sup_diff(coarse.last(), fine.last()) < 1e-5);
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_state(&mut rng, 6, 2);
        let perm = [3, 0, 5, 1, 4, 2];
        let a = integrate_flow_sampled(&s, &gaussian(2), 1.0, 1e-2, 1).unwrap();
        let b = integrate_flow_sampled(&s.permuted(&perm), &gaussian(2), 1.0, 1e-2, 1).unwrap();
        assert!(sup_diff(&a.last().permuted(&perm), b.last()) < 1e-12);
    }

    #[test]
    fn energy_momentum_and_reversibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_state(&mut rng, 4, 2);
        let v = gaussian(2);
        let e0 = total_energy(&s, &v).unwrap();
        let tr = integrate_flow(&s, &v, 1.0, 1e-3).unwrap();
        let end = tr.last();
        let drift = (total_energy(end, &v).unwrap() - e0).abs();
        assert!(drift <= 1e-6 * e0.abs().max(1.0), "drift {drift}");
        let p0 = s.total_momentum();
        for (a, b) in end.total_momentum().iter().zip(&p0) {
            assert!((a - b).abs() < 1e-10);
        }
        let mut back = end.clone();
        back.xi.iter_mut().for_each(|p| *p = -*p);
        back.t = 0.0;
        let ret = integrate_flow_sampled(&back, &v, 1.0, 1e-3, 1).unwrap();
        for (a, b) in ret.last().x.iter().zip(&s.x) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn flow_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = random_state(&mut rng, 5, 1);
        let v = cosine();
        let whole = integrate_flow_sampled(&s, &v, 1.0, 1e-3, 2).unwrap();
        let mid = &whole.snapshots[1];
        assert!((mid.t - 0.5).abs() < 1e-12);
        let rest = integrate_flow_sampled(mid, &v, 0.5, 1e-3, 1).unwrap();
        assert!(sup_diff(rest.last(), whole.last()) < 1e-12);
    }

    #[test]
    fn sampled_outputs_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let s = random_state(&mut rng, 3, 1);
        let tr = integrate_flow_sampled(&s, &cosine(), 1.0, 1e-3, 10).unwrap();
        assert_eq!(tr.snapshots.len(), 11);
        let times = tr.times();
        assert!(times.windows(2).all(|w| w[1] > w[0]));
        assert!((times[10] - 1.0).abs() < 1e-12);
        assert!(integrate_flow(&s, &cosine(), 1.0, 0.0).is_err());
        assert!(integrate_flow(&s, &gaussian(2), 1.0, 0.1).is_err());
        assert!(ParticleState::new(1, vec![f64::NAN], vec![0.0], 0.0).is_err());
    }

    #[test]
    fn trajectory_csv() {
        let s = ParticleState::new(1, vec![0.0, 1.0], vec![1.0, 0.0], 0.0).unwrap();
        let tr = integrate_flow_sampled(&s, &cosine(), 0.1, 0.05, 1).unwrap();
        let mut buf = Vec::new();
        tr.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,j,x,xi\n0,0,"));
        assert_eq!(text.lines().count(), 5);
    }
}
