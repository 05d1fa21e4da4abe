//! Kantorovich-Rubinstein lower bounds for the exponent-one distance.

use rand::Rng;

use super::{euclid, EmpiricalMeasure, GroundMetric, MkResult};
use crate::error::{invalid, Error, Result};

/// A real function on `R^n` with a certified Lipschitz constant with respect
/// to the Euclidean norm.
pub trait LipschitzFn {
    fn eval(&self, z: &[f64]) -> f64;
    fn lipschitz(&self) -> f64;
}

/// `z ↦ z_k`.
#[derive(Debug, Clone, Copy)]
pub struct Projection(pub usize);

impl LipschitzFn for Projection {
    fn eval(&self, z: &[f64]) -> f64 {
        z[self.0]
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }
}

/// `z ↦ |z − c|`.
#[derive(Debug, Clone)]
pub struct DistanceToPoint(pub Vec<f64>);

impl LipschitzFn for DistanceToPoint {
    fn eval(&self, z: &[f64]) -> f64 {
        euclid(z, &self.0)
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }
}

/// `z ↦ max_k (a_k · z + b_k)`; its Lipschitz constant is `max_k |a_k|`.
#[derive(Debug, Clone)]
pub struct MaxOfAffine {
    dim: usize,
    slopes: Vec<f64>,
    offsets: Vec<f64>,
}

impl MaxOfAffine {
    pub fn new(dim: usize, slopes: Vec<f64>, offsets: Vec<f64>) -> Result<Self> {
        if dim == 0 || offsets.is_empty() || slopes.len() != dim * offsets.len() {
            return Err(invalid("max-of-affine needs one slope vector per offset"));
        }
        Ok(Self { dim, slopes, offsets })
    }

    /// `pieces` affine functions with slopes uniform in the unit ball and
    /// offsets chosen so each piece vanishes at a uniform point of the box
    /// `[lo, hi]^n`.
    pub fn random(rng: &mut impl Rng, dim: usize, pieces: usize, lo: f64, hi: f64) -> Self {
        let mut slopes = Vec::with_capacity(dim * pieces);
        let mut offsets = Vec::with_capacity(pieces);
        for _ in 0..pieces.max(1) {
            let a = loop {
                let a: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect();
                if a.iter().map(|x| x * x).sum::<f64>() <= 1.0 {
                    break a;
                }
            };
            let c: Vec<f64> = (0..dim).map(|_| rng.random_range(lo..=hi)).collect();
            offsets.push(-a.iter().zip(&c).map(|(x, y)| x * y).sum::<f64>());
            slopes.extend(a);
        }
        Self { dim, slopes, offsets }
    }
}

impl LipschitzFn for MaxOfAffine {
    fn eval(&self, z: &[f64]) -> f64 {
        self.slopes
            .chunks_exact(self.dim)
            .zip(&self.offsets)
            .map(|(a, b)| a.iter().zip(z).map(|(x, y)| x * y).sum::<f64>() + b)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    fn lipschitz(&self) -> f64 {
        self.slopes
            .chunks_exact(self.dim)
            .map(|a| a.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }
}

/// `z ↦ min_j (|z − y_j| − ψ_j)` built from the column duals of an optimal
/// exponent-one plan. It attains the primal value.
#[derive(Debug, Clone)]
pub struct KantorovichPotential {
    dim: usize,
    anchors: Vec<f64>,
    shifts: Vec<f64>,
}

impl KantorovichPotential {
    pub fn from_result(nu: &EmpiricalMeasure, result: &MkResult, metric: GroundMetric) -> Result<Self> {
        if metric != GroundMetric::Euclidean {
            return Err(Error::Unsupported("potentials are built for the Euclidean metric".into()));
        }
        if result.col_dual.len() != nu.len() {
            return Err(Error::DimensionMismatch {
                expected: nu.len(),
                found: result.col_dual.len(),
            });
        }
        Ok(Self {
            dim: nu.dim(),
            anchors: nu.atoms_flat().to_vec(),
            shifts: result.col_dual.clone(),
        })
    }
}

impl LipschitzFn for KantorovichPotential {
    fn eval(&self, z: &[f64]) -> f64 {
        self.anchors
            .chunks_exact(self.dim)
            .zip(&self.shifts)
            .map(|(y, s)| euclid(z, y) - s)
            .fold(f64::INFINITY, f64::min)
    }

    fn lipschitz(&self) -> f64 {
        1.0
    }
}

/// `|∫ φ dμ − ∫ φ dν|` for a test function with Lipschitz constant at most
/// one, which bounds the exponent-one distance from below.
pub fn kr_dual_certificate(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, phi: &dyn LipschitzFn) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch {
            expected: mu.dim(),
            found: nu.dim(),
        });
    }
    let lip = phi.lipschitz();
    if !(lip <= 1.0 + 1e-12) {
        return Err(invalid(format!("test function has Lipschitz constant {lip}")));
    }
    let a = mu.integrate(|z| phi.eval(z));
    let b = nu.integrate(|z| phi.eval(z));
    if !(a.is_finite() && b.is_finite()) {
        return Err(invalid("test function is not finite on the atoms"));
    }
    Ok((a - b).abs())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::{mk_distance, MkOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identical_measures() {
        let mu = EmpiricalMeasure::uniform(2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..10 {
            let phi = MaxOfAffine::random(&mut rng, 2, 5, -1.0, 1.0);
            assert_eq!(kr_dual_certificate(&mu, &mu, &phi).unwrap(), 0.0);
        }
    }

    #[test]
    fn distance_function_is_optimal_between_diracs() {
        let mu = EmpiricalMeasure::uniform(2, vec![0.0, 0.0]).unwrap();
        let nu = EmpiricalMeasure::uniform(2, vec![3.0, 4.0]).unwrap();
        let phi = DistanceToPoint(vec![3.0, 4.0]);
        let c = kr_dual_certificate(&mu, &nu, &phi).unwrap();
        assert_eq!(c, mk_distance(&mu, &nu, 1.0, &MkOptions::default()).unwrap().distance);
    }

    #[test]
    fn rejects_steep_functions() {
        let mu = EmpiricalMeasure::uniform(1, vec![0.0]).unwrap();
        let phi = MaxOfAffine::new(1, vec![2.0], vec![0.0]).unwrap();
        assert!(kr_dual_certificate(&mu, &mu, &phi).is_err());
    }

    #[test]
    fn certificates_never_exceed_the_primal_and_the_lp_potential_attains_it() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let a: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0)).collect();
            let b: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..1.0) + 0.3).collect();
            let mu = EmpiricalMeasure::uniform(2, a).unwrap();
            let nu = EmpiricalMeasure::uniform(2, b).unwrap();
            let r = mk_distance(&mu, &nu, 1.0, &MkOptions::default()).unwrap();
            for _ in 0..50 {
                let phi = MaxOfAffine::random(&mut rng, 2, 4, 0.0, 1.3);
                assert!(kr_dual_certificate(&mu, &nu, &phi).unwrap() <= r.distance + 1e-9);
            }
            for k in 0..2 {
                assert!(kr_dual_certificate(&mu, &nu, &Projection(k)).unwrap() <= r.distance + 1e-9);
            }
            let pot = KantorovichPotential::from_result(&nu, &r, GroundMetric::Euclidean).unwrap();
            let c = kr_dual_certificate(&mu, &nu, &pot).unwrap();
            assert!(c <= r.distance + 1e-9);
            assert!(c >= 0.98 * r.distance, "{c} vs {}", r.distance);
        }
    }
}
