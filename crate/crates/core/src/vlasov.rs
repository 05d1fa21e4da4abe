//! Particle (Klimontovich) solutions of the Vlasov equation
//!
//! ```text
//! ∂_t f + ξ·∇_x f − ∇V_f·∇_ξ f = 0,    V_f(x) = ∫ V(x − y) f(dy dη)
//! ```
//!
//! A weighted empirical measure is pushed along the characteristics
//! `ẋ = ξ, ξ̇ = −∇V_f(x)` with the mean-field force recomputed at every kick.

use std::io::Write;

use rayon::prelude::*;

use crate::classical::{output_steps, time_grid, verlet_step, write_coord_header};
use crate::error::{invalid, Error, Result};
use crate::potentials::InteractionPotential;
use crate::transport::{EmpiricalMeasure, GroundMetric, TransportPlan};

const PAR_THRESHOLD: usize = 128;

/// Snapshots of an evolved phase-space measure; weights are fixed in time.
#[derive(Debug, Clone)]
pub struct VlasovParticleSolution {
    pub times: Vec<f64>,
    pub snapshots: Vec<EmpiricalMeasure>,
    pub dt: f64,
}

impl VlasovParticleSolution {
    pub fn last(&self) -> &EmpiricalMeasure {
        self.snapshots.last().expect("solutions are nonempty")
    }

    /// CSV with one row per atom and snapshot: `t, k, x, ξ, w`.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        let d = self.snapshots[0].dim() / 2;
        write!(out, "t,k")?;
        write_coord_header(&mut out, d)?;
        writeln!(out, ",w")?;
        for (t, f) in self.times.iter().zip(&self.snapshots) {
            for (k, (z, w)) in f.atoms().zip(f.weights()).enumerate() {
                write!(out, "{t},{k}")?;
                for v in z {
                    write!(out, ",{v:.17e}")?;
                }
                writeln!(out, ",{w:.17e}")?;
            }
        }
        Ok(())
    }
}

fn phase_dim(f: &EmpiricalMeasure, v: &InteractionPotential) -> Result<usize> {
    if f.dim() != 2 * v.dim() {
        return Err(Error::DimensionMismatch {
            expected: 2 * v.dim(),
            found: f.dim(),
        });
    }
    Ok(v.dim())
}

fn force_at(x: &[f64], positions: &[f64], weights: &[f64], v: &InteractionPotential, out: &mut [f64]) {
    let d = x.len();
    let mut z = vec![0.0; d];
    let mut g = vec![0.0; d];
    out.fill(0.0);
    for (y, w) in positions.chunks_exact(d).zip(weights) {
        for (zi, (a, b)) in z.iter_mut().zip(x.iter().zip(y)) {
            *zi = a - b;
        }
        v.gradient_into(&z, &mut g);
        for (o, gi) in out.iter_mut().zip(&g) {
            *o -= w * gi;
        }
    }
}

/// `−∇V_f(x) = −Σ_k w_k ∇V(x − y_k)` for a phase-space measure `f`.
pub fn mean_field_force(x: &[f64], f: &EmpiricalMeasure, v: &InteractionPotential) -> Result<Vec<f64>> {
    let d = phase_dim(f, v)?;
    if x.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x.len() });
    }
    let positions: Vec<f64> = f.atoms().flat_map(|z| z[..d].iter().copied()).collect();
    let mut out = vec![0.0; d];
    force_at(x, &positions, f.weights(), v, &mut out);
    Ok(out)
}

fn all_forces(d: usize, x: &[f64], weights: &[f64], v: &InteractionPotential, out: &mut [f64]) {
    if weights.len() >= PAR_THRESHOLD {
        out.par_chunks_mut(d)
            .zip(x.par_chunks(d))
            .for_each(|(o, xj)| force_at(xj, x, weights, v, o));
    } else {
        for (o, xj) in out.chunks_mut(d).zip(x.chunks(d)) {
            force_at(xj, x, weights, v, o);
        }
    }
}

fn assemble(d: usize, x: &[f64], xi: &[f64], weights: &[f64]) -> Result<EmpiricalMeasure> {
    let mut atoms = Vec::with_capacity(2 * x.len());
    for (q, p) in x.chunks_exact(d).zip(xi.chunks_exact(d)) {
        atoms.extend_from_slice(q);
        atoms.extend_from_slice(p);
    }
    EmpiricalMeasure::weighted(2 * d, atoms, weights.to_vec())
}

/// Evolves `f0` to `t_end`, storing every step.
pub fn evolve_vlasov(f0: &EmpiricalMeasure, v: &InteractionPotential, t_end: f64, dt: f64) -> Result<VlasovParticleSolution> {
    evolve_vlasov_sampled(f0, v, t_end, dt, usize::MAX)
}

/// Evolves `f0` to `t_end`, storing `f0` and `outputs` further snapshots at
/// uniform times.
pub fn evolve_vlasov_sampled(
    f0: &EmpiricalMeasure,
    v: &InteractionPotential,
    t_end: f64,
    dt: f64,
    outputs: usize,
) -> Result<VlasovParticleSolution> {
    let d = phase_dim(f0, v)?;
    let (steps, h) = time_grid(t_end, dt)?;
    let marks = output_steps(steps, outputs);
    let weights = f0.weights().to_vec();
    let mut x = Vec::with_capacity(f0.len() * d);
    let mut xi = Vec::with_capacity(f0.len() * d);
    for z in f0.atoms() {
        x.extend_from_slice(&z[..d]);
        xi.extend_from_slice(&z[d..]);
    }
    let mut times = vec![0.0];
    let mut snapshots = vec![f0.clone()];
    let mut force = vec![0.0; x.len()];
    all_forces(d, &x, &weights, v, &mut force);
    let mut next = 0;
    for step in 1..=steps {
        verlet_step(&mut x, &mut xi, &mut force, h, |x, f| all_forces(d, x, &weights, v, f));
        if next < marks.len() && marks[next] == step {
            let t = step as f64 * h;
            if x.iter().chain(&xi).any(|c| !c.is_finite()) {
                return Err(Error::NonFinite { time: t });
            }
            times.push(t);
            snapshots.push(assemble(d, &x, &xi, &weights)?);
            next += 1;
        }
    }
    Ok(VlasovParticleSolution { times, snapshots, dt: h })
}

/// `M₁(f) = ∫ (|x| + |ξ|) f(dx dξ)` for a measure on `R^d × R^d`.
pub fn first_moment(f: &EmpiricalMeasure) -> f64 {
    let d = f.dim() / 2;
    f.integrate(|z| norm(&z[..d]) + norm(&z[d..]))
}

fn norm(z: &[f64]) -> f64 {
    z.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Cost of a coupling carried along the two flows.
#[derive(Debug, Clone)]
pub struct CoupledGrowth {
    pub times: Vec<f64>,
    /// `D(t) = Σ π_kl (|x_k − y_l| + |ξ_k − η_l|)`.
    pub sum_form: Vec<f64>,
    /// The same coupling priced with the Euclidean phase-space metric.
    pub euclidean: Vec<f64>,
    pub f: VlasovParticleSolution,
    pub g: VlasovParticleSolution,
}

/// Transports both measures by their own self-consistent flows and prices
/// the initial coupling, attached to the moving atoms, at every snapshot.
/// Each value bounds the exponent-one distance between `f(t)` and `g(t)`.
pub fn coupled_growth(
    f0: &EmpiricalMeasure,
    g0: &EmpiricalMeasure,
    plan0: &TransportPlan,
    v: &InteractionPotential,
    t_end: f64,
    dt: f64,
    outputs: usize,
) -> Result<CoupledGrowth> {
    let d = phase_dim(f0, v)?;
    phase_dim(g0, v)?;
    plan0.check_marginals(f0, g0)?;
    let f = evolve_vlasov_sampled(f0, v, t_end, dt, outputs)?;
    let g = evolve_vlasov_sampled(g0, v, t_end, dt, outputs)?;
    if f.times.len() != g.times.len() {
        return Err(invalid("snapshot grids differ"));
    }
    let sum = GroundMetric::SplitSum { split: d };
    let mut sum_form = Vec::with_capacity(f.times.len());
    let mut euclidean = Vec::with_capacity(f.times.len());
    for (ft, gt) in f.snapshots.iter().zip(&g.snapshots) {
        let mut s = 0.0;
        let mut e = 0.0;
        for &(i, j, m) in plan0.entries() {
            s += m * sum.distance(ft.atom(i), gt.atom(j));
            e += m * GroundMetric::Euclidean.distance(ft.atom(i), gt.atom(j));
        }
        sum_form.push(s);
        euclidean.push(e);
    }
    Ok(CoupledGrowth {
        times: f.times.clone(),
        sum_form,
        euclidean,
        f,
        g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classical::{integrate_flow_sampled, ParticleState};
    use crate::transport::{mk_distance, MkOptions};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_measure(rng: &mut ChaCha8Rng, n: usize, d: usize) -> EmpiricalMeasure {
        let atoms = (0..2 * n * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        EmpiricalMeasure::uniform(2 * d, atoms).unwrap()
    }

    fn gaussian(d: usize) -> InteractionPotential {
        InteractionPotential::gaussian(d, 1.0, 1.0).unwrap()
    }

    #[test]
    fn force_examples() {
        let v = gaussian(1);
        let f = EmpiricalMeasure::uniform(2, vec![0.5, 0.0, -0.5, 1.0]).unwrap();
        assert_eq!(mean_field_force(&[0.0], &f, &v).unwrap(), vec![0.0]);
        let zero = InteractionPotential::zero(1);
        assert_eq!(mean_field_force(&[0.3], &f, &zero).unwrap(), vec![0.0]);
        let one = EmpiricalMeasure::uniform(2, vec![0.5, 2.0]).unwrap();
        let got = mean_field_force(&[1.3], &one, &v).unwrap();
        assert!((got[0] + v.gradient(&[0.8])[0]).abs() < 1e-16);
    }

    #[test]
    fn force_is_bounded_by_sup_grad() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = gaussian(2);
        let f = random_measure(&mut rng, 50, 2);
        for _ in 0..200 {
            let x = [rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)];
            assert!(norm(&mean_field_force(&x, &f, &v).unwrap()) <= v.sup_grad() + 1e-15);
        }
    }

    #[test]
    fn free_transport() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f0 = random_measure(&mut rng, 10, 2);
        let sol = evolve_vlasov_sampled(&f0, &InteractionPotential::zero(2), 2.0, 0.1, 1).unwrap();
        for (a, b) in f0.atoms().zip(sol.last().atoms()) {
            for c in 0..2 {
                assert!((b[c] - a[c] - 2.0 * a[c + 2]).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn klimontovich_equivalence() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f0 = random_measure(&mut rng, 16, 3);
        let v = gaussian(3);
        let vl = evolve_vlasov_sampled(&f0, &v, 1.0, 1e-2, 10).unwrap();
        let nb = integrate_flow_sampled(&ParticleState::from_measure(&f0, 0.0).unwrap(), &v, 1.0, 1e-2, 10).unwrap();
        for (a, b) in vl.snapshots.iter().zip(&nb.snapshots) {
            let dev = a
                .atoms_flat()
                .iter()
                .zip(b.empirical_measure().atoms_flat())
                .map(|(p, q)| (p - q).abs())
                .fold(0.0, f64::max);
            assert!(dev < 1e-12);
        }
    }

    #[test]
    fn mirror_symmetry_is_preserved() {
        let f0 = EmpiricalMeasure::uniform(2, vec![0.7, 0.0, -0.7, 0.0]).unwrap();
        let sol = evolve_vlasov_sampled(&f0, &gaussian(1), 3.0, 1e-3, 30).unwrap();
        for f in &sol.snapshots {
            assert!((f.atom(0)[0] + f.atom(1)[0]).abs() < 1e-10);
            assert!((f.atom(0)[1] + f.atom(1)[1]).abs() < 1e-10);
        }
    }

    #[test]
    fn first_moment_examples_and_bound() {
        let f = EmpiricalMeasure::uniform(2, vec![3.0, 4.0]).unwrap();
        assert_eq!(first_moment(&f), 7.0);
        assert_eq!(first_moment(&EmpiricalMeasure::uniform(2, vec![0.0; 6]).unwrap()), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = InteractionPotential::gaussian(2, 3.0, 0.5).unwrap();
        let l = v.lip_grad();
        let f0 = random_measure(&mut rng, 40, 2);
        let m0 = first_moment(&f0);
        let sol = evolve_vlasov_sampled(&f0, &v, 1.0, 1e-3, 10).unwrap();
        for (t, f) in sol.times.iter().zip(&sol.snapshots) {
            assert!(first_moment(f) <= m0 * (t * (l.max(1.0) + l)).exp());
        }
    }

    #[test]
    fn coupled_growth_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = gaussian(1);
        let f0 = random_measure(&mut rng, 50, 1);
        let ident = TransportPlan::from_permutation(&(0..50).collect::<Vec<_>>()).unwrap();
        let same = coupled_growth(&f0, &f0, &ident, &v, 1.0, 1e-2, 5).unwrap();
        assert!(same.sum_form.iter().all(|x| *x == 0.0));

        let g0 = random_measure(&mut rng, 50, 1);
        let sum = MkOptions::with_metric(GroundMetric::SplitSum { split: 1 });
        let plan = mk_distance(&f0, &g0, 1.0, &sum).unwrap().plan;
        let free = coupled_growth(&f0, &g0, &plan, &InteractionPotential::zero(1), 1.0, 1e-2, 5).unwrap();
        for (t, dt) in free.times.iter().zip(&free.sum_form) {
            assert!(*dt <= free.sum_form[0] * (1.0 + t) + 1e-12);
        }

        let l = v.lip_grad();
        let run = coupled_growth(&f0, &g0, &plan, &v, 1.0, 1e-3, 10).unwrap();
        for (k, t) in run.times.iter().enumerate() {
            let bound = run.sum_form[0] * (t * (l.max(1.0) + l)).exp();
            assert!(run.sum_form[k] <= bound + 1e-6);
            let opt = mk_distance(&run.f.snapshots[k], &run.g.snapshots[k], 1.0, &sum).unwrap().distance;
            assert!(opt <= run.sum_form[k] + 1e-12);
        }
    }

    #[test]
    fn snapshot_csv() {
        let f0 = EmpiricalMeasure::uniform(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let sol = evolve_vlasov_sampled(&f0, &gaussian(1), 0.1, 0.05, 1).unwrap();
        let mut buf = Vec::new();
        sol.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,k,x,xi,w\n"));
        assert_eq!(text.lines().count(), 5);
    }
}
