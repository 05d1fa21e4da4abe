//! The experiment bodies. Each resolves its parameters from the config
//! (`plan`), then records one metrics row per checked inequality instance.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::cache::{cached, CheckpointCache};
use super::config::{DensitySpec, ExperimentConfig, ExperimentName, GridSpec, PotentialSpec};
use super::report::{Recorder, Series};
use crate::classical::{integrate_flow_sampled, total_energy, ParticleState};
use crate::error::{Error, Result};
use crate::potentials::{InteractionPotential, PotentialName};
use crate::quantum::{
    hartree_energy, hartree_evolve, klimontovich_expectation, mf_error, nbody_energy, nbody_schrodinger_evolve,
    qklim_residual, rank_one, reduce_density, reduce_density_axis, DensityOperator, EvolveOptions, Operator,
    SpatialGrid, WaveFunction, DEFAULT_AMPLITUDE_CAP,
};
use crate::sampling::{fg_rate_experiment, sample_stream, DensityName, FgEstimator, FgOptions, ReferenceDensity};
use crate::semiclassical::{
    husimi_transform, pseudo_distance_bounds, toeplitz_quantize, trivial_coupling_cost, wigner_transform,
    CoherentState, PhaseSpaceGrid, PseudoDistanceBounds, GRID_ATOM_CAP,
};
use crate::transport::{mk_distance, EmpiricalMeasure, GroundMetric, MkOptions};
use crate::vlasov::{coupled_growth, evolve_vlasov_sampled, first_moment};

pub const DEFAULT_SEED: u64 = 2024;

/// Atoms of the classical initial datum in the joint-limit experiment.
const JOINT_ATOMS: usize = 256;
/// Rank-one observables probed by the evolution-equation residual.
const QKLIM_OBSERVABLES: usize = 5;

fn cfg_err(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::CapExceeded { .. } => e,
        other => Error::Config(other.to_string()),
    }
}

fn rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    r.set_stream(stream);
    r
}

fn positive(name: &str, v: f64) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}

fn potential(cfg: &ExperimentConfig, dim: usize, name: PotentialName, params: &[f64]) -> Result<InteractionPotential> {
    let spec = cfg.potential.clone().unwrap_or(PotentialSpec {
        name,
        params: params.to_vec(),
    });
    InteractionPotential::builtin(spec.name, dim, &spec.params).map_err(cfg_err)
}

fn density(cfg: &ExperimentConfig, d: usize, name: DensityName, params: &[f64]) -> Result<ReferenceDensity> {
    let spec = cfg.density.clone().unwrap_or(DensitySpec {
        name,
        params: params.to_vec(),
        dim: None,
        q: None,
    });
    let f = ReferenceDensity::builtin(spec.name, spec.dim.unwrap_or(d), &spec.params).map_err(cfg_err)?;
    match spec.q {
        Some(q) => f.with_q(q).map_err(cfg_err),
        None => Ok(f),
    }
}

fn grid(cfg: &ExperimentConfig, m: usize, l: f64) -> Result<SpatialGrid> {
    let g = cfg.grid.unwrap_or(GridSpec { m, l });
    SpatialGrid::new(g.m, g.l).map_err(cfg_err)
}

fn n_list(cfg: &ExperimentConfig, default: &[usize]) -> Result<Vec<usize>> {
    let n = cfg.n_list.clone().unwrap_or_else(|| default.to_vec());
    if n.is_empty() || n.contains(&0) {
        return Err(Error::Config("n_list must be a nonempty list of positive sizes".into()));
    }
    Ok(n)
}

fn scale_list(cfg: &ExperimentConfig, default: &[f64]) -> Result<Vec<f64>> {
    let s = cfg.scale_list.clone().unwrap_or_else(|| default.to_vec());
    if s.is_empty() || s.iter().any(|e| !(*e > 0.0 && *e <= 1.0)) {
        return Err(Error::Config("scale_list entries must lie in (0, 1]".into()));
    }
    Ok(s)
}

/// Common time-stepping fields.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Timing {
    pub t_end: f64,
    pub dt: f64,
    pub outputs: usize,
}

fn timing(cfg: &ExperimentConfig, t_end: f64, dt: f64, outputs: usize) -> Result<Timing> {
    let t = Timing {
        t_end: positive("t_end", cfg.t_end.unwrap_or(t_end))?,
        dt: positive("dt", cfg.dt.unwrap_or(dt))?,
        outputs: cfg.outputs.unwrap_or(outputs),
    };
    if t.outputs == 0 {
        return Err(Error::Config("outputs must be at least 1".into()));
    }
    if t.dt > t.t_end {
        return Err(Error::Config(format!("dt = {} exceeds t_end = {}", t.dt, t.t_end)));
    }
    Ok(t)
}

fn phase_dim_of(cfg: &ExperimentConfig, default: usize) -> usize {
    cfg.density.as_ref().and_then(|d| d.dim).unwrap_or(default)
}

/// Resolved parameters of one job.
pub(crate) enum Plan {
    KlimontovichEquivalence {
        v: InteractionPotential,
        f: ReferenceDensity,
        n: Vec<usize>,
        time: Timing,
    },
    Dobrushin {
        v: InteractionPotential,
        f: ReferenceDensity,
        n: usize,
        pairs: usize,
        time: Timing,
    },
    FournierGuillin {
        f: ReferenceDensity,
        n: Vec<usize>,
        trials: usize,
        estimator: FgEstimator,
    },
    QuantumMeanfield {
        v: InteractionPotential,
        grid: SpatialGrid,
        hbar: f64,
        n: Vec<usize>,
        time: Timing,
    },
    KlimontovichQuantum {
        v: InteractionPotential,
        grid: SpatialGrid,
        hbar: f64,
        n: Vec<usize>,
        trials: usize,
        time: Timing,
    },
    WignerHusimiSuite {
        grid: SpatialGrid,
        eps: Vec<f64>,
        trials: usize,
    },
    PseudoDistanceSuite {
        grid: SpatialGrid,
        pinned: Vec<f64>,
        eps: f64,
        atoms: usize,
        trials: usize,
    },
    JointLimit {
        v: InteractionPotential,
        f: ReferenceDensity,
        grid: SpatialGrid,
        eps: f64,
        n: usize,
        draws: usize,
        time: Timing,
    },
}

pub(crate) fn plan(cfg: &ExperimentConfig) -> Result<Plan> {
    let two_pi = 2.0 * PI;
    Ok(match cfg.experiment {
        ExperimentName::KlimontovichEquivalence => {
            let d = phase_dim_of(cfg, 3);
            Plan::KlimontovichEquivalence {
                v: potential(cfg, d, PotentialName::Gaussian, &[1.0, 1.0])?,
                f: density(cfg, d, DensityName::GaussianPhase, &[1.0])?,
                n: n_list(cfg, &[64])?,
                time: timing(cfg, 1.0, 1e-3, 10)?,
            }
        }
        ExperimentName::Dobrushin => {
            let d = phase_dim_of(cfg, 3);
            let n = n_list(cfg, &[128])?;
            if n.len() != 1 || n[0] < 2 {
                return Err(Error::Config("dobrushin takes a single atom count ≥ 2".into()));
            }
            Plan::Dobrushin {
                v: potential(cfg, d, PotentialName::Gaussian, &[1.0, 1.0])?,
                f: density(cfg, d, DensityName::GaussianPhase, &[1.0])?,
                n: n[0],
                pairs: cfg.trials.unwrap_or(100).max(1),
                time: timing(cfg, 1.0, 1e-2, 10)?,
            }
        }
        ExperimentName::FournierGuillin => {
            let d = phase_dim_of(cfg, 3);
            let n = n_list(cfg, &[64, 128, 256, 512, 1024, 2048, 4096])?;
            if n.len() < 2 || n.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Config("n_list must be strictly increasing with at least two sizes".into()));
            }
            let trials = cfg.trials.unwrap_or(20);
            if trials < 5 {
                return Err(Error::Config("at least 5 trials are needed".into()));
            }
            let f = density(cfg, d, DensityName::GaussianPhase, &[1.0])?;
            if f.dim() < 3 {
                return Err(Error::Config("the rate experiment needs d ≥ 3".into()));
            }
            Plan::FournierGuillin {
                f,
                n,
                trials,
                estimator: cfg.estimator.unwrap_or(FgEstimator::TwoSample),
            }
        }
        ExperimentName::QuantumMeanfield => {
            let g = grid(cfg, 32, two_pi)?;
            let n = n_list(cfg, &[2, 3, 4])?;
            for &k in &n {
                if k < 2 {
                    return Err(Error::Config("particle numbers must be at least 2".into()));
                }
                g.check_cap(k, DEFAULT_AMPLITUDE_CAP)?;
            }
            Plan::QuantumMeanfield {
                v: potential(cfg, 1, PotentialName::Cosine, &[1.0, g.box_length()])?,
                grid: g,
                hbar: positive("scale", cfg.scale.unwrap_or(1.0))?,
                n,
                time: timing(cfg, 0.5, 1e-3, 10)?,
            }
        }
        ExperimentName::KlimontovichQuantum => {
            let g = grid(cfg, 32, two_pi)?;
            let n = n_list(cfg, &[2, 3])?;
            for &k in &n {
                if k < 2 {
                    return Err(Error::Config("particle numbers must be at least 2".into()));
                }
                g.check_cap(k, DEFAULT_AMPLITUDE_CAP)?;
            }
            Plan::KlimontovichQuantum {
                v: potential(cfg, 1, PotentialName::Cosine, &[1.0, g.box_length()])?,
                grid: g,
                hbar: positive("scale", cfg.scale.unwrap_or(1.0))?,
                n,
                trials: cfg.trials.unwrap_or(20).max(1),
                time: timing(cfg, 0.5, 1e-3, 1)?,
            }
        }
        ExperimentName::WignerHusimiSuite => Plan::WignerHusimiSuite {
            grid: grid(cfg, 256, 24.0)?,
            eps: scale_list(cfg, &[0.1, 0.5, 1.0])?,
            trials: cfg.trials.unwrap_or(50),
        },
        ExperimentName::PseudoDistanceSuite => {
            let eps = cfg.scale.unwrap_or(0.5);
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::Config("scale must lie in (0, 1]".into()));
            }
            let atoms = n_list(cfg, &[48])?;
            Plan::PseudoDistanceSuite {
                grid: grid(cfg, 128, 16.0)?,
                pinned: scale_list(cfg, &[0.1, 0.5])?,
                eps,
                atoms: atoms[0],
                trials: cfg.trials.unwrap_or(10).max(2),
            }
        }
        ExperimentName::JointLimit => {
            let g = grid(cfg, 64, 2.0 * two_pi)?;
            let n = n_list(cfg, &[3])?;
            if n.len() != 1 || n[0] < 2 {
                return Err(Error::Config("joint_limit takes a single particle number ≥ 2".into()));
            }
            g.check_cap(n[0], DEFAULT_AMPLITUDE_CAP)?;
            let eps = cfg.scale.unwrap_or(0.5);
            if !(eps > 0.0 && eps <= 1.0) {
                return Err(Error::Config("scale must lie in (0, 1]".into()));
            }
            let f = density(cfg, 1, DensityName::GaussianPhase, &[0.5])?;
            if f.dim() != 1 {
                return Err(Error::Config("joint_limit runs in one space dimension".into()));
            }
            let draws = cfg.trials.unwrap_or(32);
            if draws < 4 {
                return Err(Error::Config("joint_limit needs at least 4 purification draws".into()));
            }
            Plan::JointLimit {
                v: potential(cfg, 1, PotentialName::Cosine, &[1.0, g.box_length()])?,
                f,
                grid: g,
                eps,
                n: n[0],
                draws,
                time: timing(cfg, 0.5, 1e-2, 2)?,
            }
        }
    })
}

/// Shared context of a running job.
pub(crate) struct Ctx<'a> {
    pub cfg: &'a ExperimentConfig,
    pub seed: u64,
    pub cache: Option<&'a CheckpointCache>,
}

pub(crate) fn run(plan: &Plan, ctx: &Ctx, rec: &mut Recorder) -> Result<()> {
    match plan {
        Plan::KlimontovichEquivalence { v, f, n, time } => klimontovich_equivalence(ctx, rec, v, f, n, *time),
        Plan::Dobrushin { v, f, n, pairs, time } => dobrushin(ctx, rec, v, f, *n, *pairs, *time),
        Plan::FournierGuillin {
            f,
            n,
            trials,
            estimator,
        } => fournier_guillin(ctx, rec, f, n, *trials, *estimator),
        Plan::QuantumMeanfield {
            v,
            grid,
            hbar,
            n,
            time,
        } => quantum_meanfield(ctx, rec, v, *grid, *hbar, n, *time),
        Plan::KlimontovichQuantum {
            v,
            grid,
            hbar,
            n,
            trials,
            time,
        } => klimontovich_quantum(ctx, rec, v, *grid, *hbar, n, *trials, *time),
        Plan::WignerHusimiSuite { grid, eps, trials } => wigner_husimi_suite(ctx, rec, *grid, eps, *trials),
        Plan::PseudoDistanceSuite {
            grid,
            pinned,
            eps,
            atoms,
            trials,
        } => pseudo_distance_suite(ctx, rec, *grid, pinned, *eps, *atoms, *trials),
        Plan::JointLimit {
            v,
            f,
            grid,
            eps,
            n,
            draws,
            time,
        } => joint_limit(ctx, rec, v, f, *grid, *eps, *n, *draws, *time),
    }
}

fn klimontovich_equivalence(
    ctx: &Ctx,
    rec: &mut Recorder,
    v: &InteractionPotential,
    f: &ReferenceDensity,
    n_list: &[usize],
    time: Timing,
) -> Result<()> {
    rec.check(
        "klimontovich_equivalence",
        "Klimontovich solutions of the Vlasov equation",
        "max |N-body phase point − Vlasov characteristic| ≤ 1e-8 on identical atoms",
    );
    rec.check(
        "classical_energy_drift",
        "energy conservation of the N-body flow",
        "max_t |E(t) − E(0)| ≤ 1e-6 max(1, |E(0)|)",
    );
    let d = f.dim();
    for (case, &n) in n_list.iter().enumerate() {
        let f0 = sample_stream(f, n, ctx.seed, case as u64)?;
        let traj = integrate_flow_sampled(&ParticleState::from_measure(&f0, 0.0)?, v, time.t_end, time.dt, time.outputs)?;
        let vl = evolve_vlasov_sampled(&f0, v, time.t_end, time.dt, time.outputs)?;
        let mut curve = Vec::new();
        for (s, snap) in traj.snapshots.iter().enumerate() {
            let mu = &vl.snapshots[s];
            let mut dev: f64 = 0.0;
            for j in 0..n {
                let z = mu.atom(j);
                for i in 0..d {
                    dev = dev.max((snap.position(j)[i] - z[i]).abs());
                    dev = dev.max((snap.momentum(j)[i] - z[d + i]).abs());
                }
            }
            rec.row("klimontovich_equivalence", case, snap.t, dev, 1e-8, 0.0);
            curve.push((snap.t, dev, 0.0));
        }
        let e0 = total_energy(&traj.snapshots[0], v)?;
        let mut drift: f64 = 0.0;
        for snap in &traj.snapshots {
            drift = drift.max((total_energy(snap, v)? - e0).abs());
        }
        rec.row("classical_energy_drift", case, n as f64, drift, 1e-6 * e0.abs().max(1.0), 0.0);
        rec.file(&format!("trajectory_N{n}.csv"), |b| traj.write_csv(b))?;
        rec.file(&format!("vlasov_N{n}.csv"), |b| vl.write_csv(b))?;
        rec.series.push(Series::new(&format!("deviation_N{n}"), "t", "max deviation", curve));
    }
    Ok(())
}

fn dobrushin(
    ctx: &Ctx,
    rec: &mut Recorder,
    v: &InteractionPotential,
    f: &ReferenceDensity,
    n: usize,
    pairs: usize,
    time: Timing,
) -> Result<()> {
    let l = v.lip_grad();
    let rate = 1.0 + 2.0 * l;
    let proof_rate = l.max(1.0) + l;
    rec.check(
        "dobrushin",
        "Dobrushin stability inequality",
        "MK1(f(t), g(t)) ≤ MK1(f0, g0) e^{t + 2 Lip(∇V) t}, cost |Δx| + |Δξ|, slack 1e-6",
    );
    rec.check(
        "dobrushin_euclidean",
        "Dobrushin stability inequality",
        "Euclidean MK1(f(t), g(t)) ≤ √2 Euclidean MK1(f0, g0) e^{t + 2 Lip(∇V) t}, slack 1e-6",
    );
    rec.check(
        "coupling_growth",
        "propagation of couplings",
        "D(t) ≤ D(0) e^{t (max(1, L) + L)} for the optimal initial coupling, slack 1e-6",
    );
    rec.check(
        "coupling_dominates",
        "propagation of couplings",
        "MK1(f(t), g(t)) ≤ D(t)",
    );
    rec.check(
        "moment_bound",
        "propagation of the first moment",
        "M1(t) ≤ M1(0) e^{t (max(1, L) + L)}, slack 1e-6",
    );
    let d = f.dim();
    let sum = MkOptions::with_metric(GroundMetric::SplitSum { split: d });
    let euclid = MkOptions::default();
    let mut worst: Vec<f64> = Vec::new();
    let mut times = Vec::new();
    for p in 0..pairs {
        let f0 = sample_stream(f, n, ctx.seed, 2 * p as u64)?;
        let mut r = rng(ctx.seed, (1 << 40) + p as u64);
        let shift: Vec<f64> = (0..2 * d).map(|_| r.random_range(-0.5..0.5)).collect();
        let g0 = sample_stream(f, n, ctx.seed, 2 * p as u64 + 1)?.map_atoms(|z, out| {
            for ((o, a), s) in out.iter_mut().zip(z).zip(&shift) {
                *o = a + s;
            }
        })?;
        let opt = mk_distance(&f0, &g0, 1.0, &sum)?;
        let e0 = mk_distance(&f0, &g0, 1.0, &euclid)?.distance;
        let cg = coupled_growth(&f0, &g0, &opt.plan, v, time.t_end, time.dt, time.outputs)?;
        let (m_f0, m_g0) = (first_moment(&f0), first_moment(&g0));
        if times.is_empty() {
            times = cg.times.clone();
            worst = vec![0.0; times.len()];
        }
        for (s, &t) in cg.times.iter().enumerate() {
            let (ft, gt) = (&cg.f.snapshots[s], &cg.g.snapshots[s]);
            let mk = mk_distance(ft, gt, 1.0, &sum)?.distance;
            let mke = mk_distance(ft, gt, 1.0, &euclid)?.distance;
            rec.row("dobrushin", p, t, mk, opt.distance * (rate * t).exp(), 1e-6);
            rec.row("dobrushin_euclidean", p, t, mke, 2f64.sqrt() * e0 * (rate * t).exp(), 1e-6);
            rec.row("coupling_growth", p, t, cg.sum_form[s], cg.sum_form[0] * (proof_rate * t).exp(), 1e-6);
            rec.row("coupling_dominates", p, t, mk, cg.sum_form[s], 1e-9);
            let grow = (proof_rate * t).exp();
            rec.row("moment_bound", 2 * p, t, first_moment(ft), m_f0 * grow, 1e-6);
            rec.row("moment_bound", 2 * p + 1, t, first_moment(gt), m_g0 * grow, 1e-6);
            worst[s] = worst[s].max(mk / opt.distance);
        }
    }
    rec.note("lip_grad", l);
    rec.note("pairs", pairs);
    rec.note("atoms", n);
    let bound: Vec<f64> = times.iter().map(|t| (rate * t).exp()).collect();
    rec.series.push(
        Series::new(
            "dobrushin",
            "t",
            "max over pairs of MK1(f(t), g(t)) / MK1(f0, g0)",
            times.iter().zip(&worst).map(|(t, w)| (*t, *w, 0.0)).collect(),
        )
        .with_reference("theorem bound e^{t + 2Lt}", bound),
    );
    Ok(())
}

fn fournier_guillin(
    ctx: &Ctx,
    rec: &mut Recorder,
    f: &ReferenceDensity,
    n_list: &[usize],
    trials: usize,
    estimator: FgEstimator,
) -> Result<()> {
    rec.check(
        "fg_decreasing",
        "empirical measure convergence rate",
        "mean MK1 at each N lies 2 standard errors below the mean at the previous N",
    );
    rec.check("fg_slope", "empirical measure convergence rate", "log-log slope ≤ −0.10");
    rec.check(
        "fg_envelope",
        "empirical measure convergence rate",
        "mean MK1 ≤ c (N^{-1/q} + N^{-(1-1/q)}) with c anchored at the smallest N",
    );
    let opts = FgOptions {
        estimator,
        mk: MkOptions::default(),
    };
    let res = fg_rate_experiment(f, n_list, trials, ctx.seed, &opts)?;
    for (i, w) in res.rows.windows(2).enumerate() {
        let se = (w[0].stderr.powi(2) + w[1].stderr.powi(2)).sqrt();
        rec.row("fg_decreasing", i + 1, w[1].n as f64, w[1].mean + 2.0 * se, w[0].mean, 0.0);
    }
    rec.row("fg_slope", 0, 0.0, res.slope, -0.10, 0.0);
    for (i, (r, e)) in res.rows.iter().zip(&res.envelope).enumerate() {
        rec.row("fg_envelope", i, r.n as f64, r.mean, *e, 1e-12 * e);
    }
    rec.file("fg.csv", |b| res.write_csv(b))?;
    let summary = res.summary_json();
    rec.file("fg_summary.json", |b| {
        serde_json::to_writer_pretty(&mut *b, &summary).map_err(std::io::Error::other)
    })?;
    rec.note("slope", res.slope);
    rec.note("q", res.q);
    rec.note("envelope_constant", res.envelope_constant);
    rec.series.push(Series {
        log_scale: true,
        annotation: Some(format!("fitted slope {:.4}", res.slope)),
        ..Series::new(
            "fournier_guillin",
            "N",
            "mean MK1",
            res.rows.iter().map(|r| (r.n as f64, r.mean, r.stderr)).collect(),
        )
        .with_reference("moment envelope", res.envelope.clone())
    });
    Ok(())
}

fn meanfield_initial(grid: SpatialGrid, hbar: f64) -> Result<WaveFunction> {
    WaveFunction::gaussian_packet(grid, hbar, 0.3, 0.5 * hbar, 0.5)
}

fn density_defect(r: &DensityOperator) -> f64 {
    let ev = r.eigenvalues();
    (r.trace() - 1.0).abs().max(r.hermiticity_defect()).max(-ev[0])
}

#[allow(clippy::too_many_arguments)]
fn quantum_meanfield(
    ctx: &Ctx,
    rec: &mut Recorder,
    v: &InteractionPotential,
    grid: SpatialGrid,
    hbar: f64,
    n_list: &[usize],
    time: Timing,
) -> Result<()> {
    rec.check(
        "meanfield_bound",
        "quantum mean-field limit in operator norm",
        "‖R_{N:1}(t) − |ψ(t)⟩⟨ψ(t)|‖ ≤ (2/√N) exp(2t Σ|V̂_ω| / ħ)",
    );
    rec.check(
        "meanfield_monotone",
        "quantum mean-field limit in operator norm",
        "the operator-norm error does not increase with N, within 1e-3",
    );
    rec.check("hartree_norm_drift", "unitarity of the Hartree flow", "max_t |‖ψ(t)‖² − 1| / t_end ≤ 1e-10");
    rec.check("hartree_energy_drift", "energy conservation of the Hartree flow", "max_t |E(t) − E(0)| / t_end ≤ 1e-6");
    rec.check(
        "quantum_nbody_energy_drift",
        "energy conservation of the N-body flow",
        "max_t |E(t) − E(0)| / t_end ≤ 1e-6",
    );
    rec.check(
        "density_operator_valid",
        "reduced density operators",
        "max(|trace − 1|, Hermiticity defect, −λ_min) ≤ 1e-8",
    );
    let opts = EvolveOptions::new(time.t_end, time.dt).outputs(time.outputs);
    let psi0 = meanfield_initial(grid, hbar)?;
    let hartree = hartree_evolve(&psi0, v, &opts)?;
    let e0 = hartree_energy(&psi0, v)?;
    let (mut norm_drift, mut energy_drift): (f64, f64) = (0.0, 0.0);
    for psi in &hartree {
        norm_drift = norm_drift.max((psi.norm_sq() - 1.0).abs());
        energy_drift = energy_drift.max((hartree_energy(psi, v)? - e0).abs());
    }
    rec.row("hartree_norm_drift", 0, time.t_end, norm_drift / time.t_end, 1e-10, 0.0);
    rec.row("hartree_energy_drift", 0, time.t_end, energy_drift / time.t_end, 1e-6, 0.0);
    let l1 = v.fourier_l1();
    let hash = ctx.cfg.hash();
    let mut errors: Vec<Vec<f64>> = Vec::new();
    let times: Vec<f64> = hartree.iter().map(|p| p.t).collect();
    for (case, &n) in n_list.iter().enumerate() {
        let big0 = WaveFunction::tensor_power(&psi0, n, DEFAULT_AMPLITUDE_CAP)?;
        let key = format!("{}-N{n}", ctx.cfg.job_name());
        let path = cached(ctx.cache, &key, &hash, &mut rec.warnings, || {
            nbody_schrodinger_evolve(&big0, v, &opts.bosonic(true))
        })?;
        if path.len() != hartree.len() {
            return Err(Error::Artifact(format!("checkpoint '{key}' has {} states", path.len())));
        }
        let en0 = nbody_energy(&path[0], v)?;
        let mut drift: f64 = 0.0;
        let mut errs = Vec::new();
        let mut pickl = Vec::new();
        for (big, psi) in path.iter().zip(&hartree) {
            drift = drift.max((nbody_energy(big, v)? - en0).abs());
            let e = mf_error(big, psi)?;
            let bound = 2.0 / (n as f64).sqrt() * (2.0 * big.t * l1 / hbar).exp();
            rec.row("meanfield_bound", case, big.t, e.op_norm, bound, 0.0);
            rec.row("density_operator_valid", case, big.t, density_defect(&reduce_density(big, 1)?), 1e-8, 0.0);
            errs.push(e.op_norm);
            pickl.push(e.pickl);
        }
        rec.row("quantum_nbody_energy_drift", case, n as f64, drift / time.t_end, 1e-6, 0.0);
        rec.note(&format!("op_norm_N{n}"), &errs);
        rec.note(&format!("pickl_N{n}"), &pickl);
        let bound: Vec<f64> = times
            .iter()
            .map(|t| 2.0 / (n as f64).sqrt() * (2.0 * t * l1 / hbar).exp())
            .collect();
        rec.series.push(
            Series::new(
                &format!("meanfield_N{n}"),
                "t",
                "operator-norm error",
                times.iter().zip(&errs).map(|(t, e)| (*t, *e, 0.0)).collect(),
            )
            .with_reference("bound", bound),
        );
        errors.push(errs);
    }
    for i in 1..errors.len() {
        for (s, t) in times.iter().enumerate() {
            rec.row("meanfield_monotone", i, *t, errors[i][s], errors[i - 1][s], 1e-3);
        }
    }
    rec.note("fourier_l1", l1);
    Ok(())
}

fn random_packet(r: &mut ChaCha8Rng, grid: SpatialGrid, hbar: f64) -> Result<WaveFunction> {
    let q = r.random_range(-1.0..1.0);
    let p = r.random_range(-1.0..1.0) * hbar;
    let var = r.random_range(0.3..0.8);
    WaveFunction::gaussian_packet(grid, hbar, q, p, var)
}

fn random_symmetric(r: &mut ChaCha8Rng, grid: SpatialGrid, hbar: f64, n: usize) -> Result<WaveFunction> {
    let factors = (0..n).map(|_| random_packet(r, grid, hbar)).collect::<Result<Vec<_>>>()?;
    let refs: Vec<&WaveFunction> = factors.iter().collect();
    WaveFunction::product(&refs, DEFAULT_AMPLITUDE_CAP)?.symmetrized()
}

#[allow(clippy::too_many_arguments)]
fn klimontovich_quantum(
    ctx: &Ctx,
    rec: &mut Recorder,
    v: &InteractionPotential,
    grid: SpatialGrid,
    hbar: f64,
    n_list: &[usize],
    trials: usize,
    time: Timing,
) -> Result<()> {
    rec.check(
        "klimontovich_duality",
        "duality between the Klimontovich map and marginals",
        "|⟨Ψ|𝓜_N(t)(|φ⟩⟨φ|)|Ψ⟩ − ⟨φ|R_{N:1}(t)|φ⟩| ≤ 1e-10",
    );
    rec.check(
        "qklim_residual",
        "quantum Klimontovich evolution equation",
        "|iħ ∂_t⟨𝓜_N(t)A⟩ + ⟨𝓜_N(t)[K, A]⟩ + ⟨C[V, 𝓜_N(t), 𝓜_N(t)](A)⟩| ≤ 10 dt² + 1e-8",
    );
    for i in 0..trials {
        let mut r = rng(ctx.seed, i as u64);
        let n = n_list[i % n_list.len()];
        let psi = random_symmetric(&mut r, grid, hbar, n)?;
        let phi = random_packet(&mut r, grid, hbar)?;
        let t = r.random_range(0.0..time.t_end);
        let psi_t = if t > 0.0 {
            let step = (0.01f64).min(t);
            nbody_schrodinger_evolve(&psi, v, &EvolveOptions::new(t, step))?.pop().expect("final state")
        } else {
            psi
        };
        let a = rank_one(&phi)?;
        let klim = klimontovich_expectation(&psi_t, &a)?;
        let marginal = reduce_density(&psi_t, 1)?.sandwich(&phi)?;
        rec.row("klimontovich_duality", i, t, (klim - Complex64::new(marginal, 0.0)).norm(), 1e-10, 0.0);
    }
    let n = n_list[0];
    let t_probe = (0.2f64).min(time.t_end);
    let steps = (t_probe / time.dt).round().max(1.0);
    for j in 0..QKLIM_OBSERVABLES {
        let mut r = rng(ctx.seed, (1 << 32) + j as u64);
        let psi = random_symmetric(&mut r, grid, hbar, n)?;
        let a: Operator = rank_one(&random_packet(&mut r, grid, hbar)?)?;
        let res = qklim_residual(&psi, v, &a, steps * time.dt, time.dt)?;
        rec.row("qklim_residual", j, steps * time.dt, res.residual, 10.0 * time.dt * time.dt, 1e-8);
    }
    Ok(())
}

fn excited_state(grid: SpatialGrid, eps: f64) -> Result<DensityOperator> {
    let psi = WaveFunction::from_fn(grid, eps, |x| {
        let y = x / eps.sqrt();
        Complex64::new(y * (-0.5 * y * y).exp(), 0.0)
    })?;
    DensityOperator::pure(&psi)
}

/// Mixture of up to three superpositions of up to three packets with centres
/// in `[−2, 2] × [−0.5, 0.5]`.
fn random_operator(r: &mut ChaCha8Rng, grid: SpatialGrid, eps: f64) -> Result<DensityOperator> {
    let mut states = Vec::new();
    for _ in 0..r.random_range(1..4) {
        let mut amps = vec![Complex64::new(0.0, 0.0); grid.len()];
        for _ in 0..r.random_range(1..4) {
            let c = CoherentState::new(r.random_range(-2.0..2.0), r.random_range(-0.5..0.5), eps)?;
            let z = Complex64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0));
            for (a, v) in amps.iter_mut().zip(c.wave(grid)?.amplitudes()) {
                *a += z * v;
            }
        }
        states.push(WaveFunction::normalized(grid, 1, amps, eps)?);
    }
    let w = 1.0 / states.len() as f64;
    let terms: Vec<(f64, &WaveFunction)> = states.iter().map(|s| (w, s)).collect();
    DensityOperator::mixture(&terms)
}

fn origin_value(w: &PhaseSpaceGrid) -> Result<f64> {
    let m = w.len();
    if w.position(m / 2).abs() > 1e-12 {
        return Err(Error::Config("the position grid must contain x = 0 (box centred at the origin)".into()));
    }
    Ok(w.value(m / 2, m / 2))
}

fn wigner_husimi_suite(ctx: &Ctx, rec: &mut Recorder, grid: SpatialGrid, eps_list: &[f64], trials: usize) -> Result<()> {
    rec.check(
        "wigner_origin",
        "Wigner transform of an odd state",
        "|W_ε(0,0) + 1/(πε)| ≤ 1e-3 / (πε)",
    );
    rec.check("wigner_mass", "normalization of the Wigner transform", "|∬W − 1| ≤ 1e-6");
    rec.check("husimi_nonnegative", "positivity of the Husimi transform", "−min W̃ ≤ 1e-10");
    rec.check("husimi_mass", "normalization of the Husimi transform", "|∬W̃ − 1| ≤ 1e-8");
    rec.check(
        "coherent_wigner",
        "Wigner transform of a coherent state",
        "sup |W − (πε)^{-1} e^{−((x−q)² + (ξ−p)²)/ε}| ≤ 1e-6",
    );
    rec.check(
        "coherent_husimi_variance",
        "Husimi transform of a coherent state",
        "per-coordinate variance of W̃ equals ε within 1e-6",
    );
    let mut origin_curve = Vec::new();
    let mut case = 0;
    for (k, &eps) in eps_list.iter().enumerate() {
        let r = excited_state(grid, eps)?;
        let w = wigner_transform(&r, eps)?;
        let target = -1.0 / (PI * eps);
        let w00 = origin_value(&w)?;
        rec.row("wigner_origin", k, eps, (w00 - target).abs() / target.abs(), 1e-3, 0.0);
        rec.row("wigner_mass", case, eps, (w.mass() - 1.0).abs(), 1e-6, 0.0);
        let h = w.heat_smoothed(eps / 4.0)?;
        rec.row("husimi_nonnegative", case, eps, -h.min(), 1e-10, 0.0);
        rec.row("husimi_mass", case, eps, (h.mass() - 1.0).abs(), 1e-8, 0.0);
        case += 1;
        origin_curve.push((eps, w00, 0.0));
        rec.file(&format!("wigner_excited_eps{eps}.csv"), |b| w.write_csv(b))?;
        rec.file(&format!("husimi_excited_eps{eps}.dat"), |b| h.write_gnuplot(b))?;

        let (q, p) = (0.5, 0.25);
        let c = CoherentState::new(q, p, eps)?.projector(grid)?;
        let wc = wigner_transform(&c, eps)?;
        let mut err: f64 = 0.0;
        for a in 0..wc.len() {
            for b in 0..wc.len() {
                let (x, xi) = (wc.position(a), wc.momentum(b));
                let exact = (-((x - q).powi(2) + (xi - p).powi(2)) / eps).exp() / (PI * eps);
                err = err.max((wc.value(a, b) - exact).abs());
            }
        }
        rec.row("coherent_wigner", k, eps, err, 1e-6, 0.0);
        let (_, var) = wc.heat_smoothed(eps / 4.0)?.moments();
        rec.row(
            "coherent_husimi_variance",
            k,
            eps,
            (var[0] - eps).abs().max((var[1] - eps).abs()),
            1e-6,
            0.0,
        );
    }
    for i in 0..trials {
        let mut r = rng(ctx.seed, i as u64);
        let eps = eps_list[i % eps_list.len()];
        let op = random_operator(&mut r, grid, eps)?;
        let w = wigner_transform(&op, eps)?;
        rec.row("wigner_mass", case, eps, (w.mass() - 1.0).abs(), 1e-6, 0.0);
        let h = w.heat_smoothed(eps / 4.0)?;
        rec.row("husimi_nonnegative", case, eps, -h.min(), 1e-10, 0.0);
        rec.row("husimi_mass", case, eps, (h.mass() - 1.0).abs(), 1e-8, 0.0);
        case += 1;
    }
    let reference = eps_list.iter().map(|e| -1.0 / (PI * e)).collect();
    rec.series
        .push(Series::new("wigner_origin", "eps", "W_eps(0,0)", origin_curve).with_reference("−1/(πε)", reference));
    Ok(())
}

/// `atoms` points from an equal mixture of two Gaussians with random centres
/// and widths.
fn gaussian_mixture(r: &mut ChaCha8Rng, atoms: usize) -> Result<EmpiricalMeasure> {
    let comps: Vec<([f64; 2], f64)> = (0..2)
        .map(|_| ([r.random_range(-2.0..2.0), r.random_range(-1.0..1.0)], r.random_range(0.3..0.8)))
        .collect();
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    let mut pts = Vec::with_capacity(2 * atoms);
    for k in 0..atoms {
        let (c, s) = comps[k % 2];
        pts.push(c[0] + s * unit.sample(r));
        pts.push(c[1] + s * unit.sample(r));
    }
    EmpiricalMeasure::uniform(2, pts)
}

#[allow(clippy::too_many_arguments)]
fn pseudo_distance_suite(
    ctx: &Ctx,
    rec: &mut Recorder,
    grid: SpatialGrid,
    pinned: &[f64],
    eps: f64,
    atoms: usize,
    trials: usize,
) -> Result<()> {
    rec.check("pinned_lower", "lower bound for E_ε", "|lower − dε| ≤ 1e-4 for a Dirac mass and its coherent state");
    rec.check("pinned_upper", "product coupling cost", "|upper_trivial − dε| ≤ 1e-4 for a Dirac mass and its coherent state");
    rec.check(
        "sandwich_toeplitz",
        "lower and upper bounds for E_ε",
        "lower ≤ upper_toeplitz + atomization tolerance",
    );
    rec.check(
        "sandwich_trivial",
        "lower and upper bounds for E_ε",
        "lower ≤ upper_trivial + atomization tolerance",
    );
    rec.check(
        "toeplitz_husimi",
        "upper bound for E_ε for Töplitz operators",
        "MK2(f, W̃_ε[OP_T(f)])² ≤ 2dε + atomization tolerance",
    );
    rec.check(
        "triangle",
        "triangle inequality for E_ε",
        "√lower(f, R) ≤ MK2(f, g) + √upper_trivial(g, R) + √tolerance",
    );
    let d = 1.0;
    for (k, &e) in pinned.iter().enumerate() {
        let (q, p) = (0.7, -0.3);
        let f = EmpiricalMeasure::uniform(2, vec![q, p])?;
        let r = CoherentState::new(q, p, e)?.projector(grid)?;
        let b = pseudo_distance_bounds(&f, &r, e, Some(&f))?;
        rec.row("pinned_lower", k, e, (b.lower - d * e).abs(), 1e-4, 0.0);
        rec.row("pinned_upper", k, e, (b.upper_trivial - d * e).abs(), 1e-4, 0.0);
        sandwich(rec, k, e, &b)?;
    }
    let base = pinned.len();
    let mut r = rng(ctx.seed, 0);
    let fs: Vec<EmpiricalMeasure> = (0..trials).map(|_| gaussian_mixture(&mut r, atoms)).collect::<Result<_>>()?;
    let mut table = Vec::new();
    for (i, f) in fs.iter().enumerate() {
        let op = toeplitz_quantize(f, eps, grid)?;
        let b = pseudo_distance_bounds(f, &op, eps, Some(f))?;
        let case = base + i;
        sandwich(rec, case, eps, &b)?;
        rec.row("toeplitz_husimi", i, eps, b.husimi_mk2_sq, 2.0 * d * eps, b.tolerance);
        let g = &fs[(i + 1) % fs.len()];
        let fg = mk_distance(f, g, 2.0, &MkOptions::default())?.distance;
        let up_g = trivial_coupling_cost(g, &op, eps)?;
        rec.row("triangle", i, eps, b.lower.sqrt(), fg + up_g.sqrt(), b.tolerance.sqrt());
        table.push(serde_json::json!({
            "lower": b.lower,
            "upper_trivial": b.upper_trivial,
            "upper_toeplitz": b.upper_toeplitz,
            "husimi_mk2_sq": b.husimi_mk2_sq,
            "tolerance": b.tolerance,
        }));
    }
    rec.note("toeplitz_instances", table);
    rec.note("eps", eps);
    Ok(())
}

fn sandwich(rec: &mut Recorder, case: usize, eps: f64, b: &PseudoDistanceBounds) -> Result<()> {
    let toeplitz = b
        .upper_toeplitz
        .ok_or_else(|| Error::Artifact("Töplitz upper bound missing".into()))?;
    rec.row("sandwich_toeplitz", case, eps, b.lower, toeplitz, b.tolerance);
    rec.row("sandwich_trivial", case, eps, b.lower, b.upper_trivial, b.tolerance);
    Ok(())
}

/// `(1/N) Σ_j R_{N:1}` over particle axes.
fn axis_average_marginal(psi: &WaveFunction) -> Result<Operator> {
    let n = psi.particles();
    let mut acc = reduce_density_axis(psi, 0)?.matrix().clone();
    for j in 1..n {
        acc += reduce_density_axis(psi, j)?.matrix();
    }
    Ok(acc / Complex64::new(n as f64, 0.0))
}

fn mk2_sq_to_husimi(f: &EmpiricalMeasure, r: &DensityOperator, eps: f64) -> Result<(f64, f64, PhaseSpaceGrid)> {
    let h = husimi_transform(r, eps)?;
    let atomized = h.to_measure(GRID_ATOM_CAP)?;
    let opts = MkOptions {
        atom_cap: GRID_ATOM_CAP.max(f.len()),
        ..MkOptions::default()
    };
    let mk = mk_distance(f, &atomized.measure, 2.0, &opts)?.distance;
    let delta = atomized.displacement_sq.sqrt();
    Ok((mk * mk, 2.0 * mk * delta + delta * delta, h))
}

#[allow(clippy::too_many_arguments)]
fn joint_limit(
    ctx: &Ctx,
    rec: &mut Recorder,
    v: &InteractionPotential,
    f: &ReferenceDensity,
    grid: SpatialGrid,
    eps: f64,
    n: usize,
    draws: usize,
    time: Timing,
) -> Result<()> {
    let d = 1.0;
    let lip = v.lip_grad();
    let gamma = 1.0 + 2.0 * (1.0f64).max(2.0 * lip * lip);
    let sup = v.sup_grad();
    let bound = |t: f64| {
        d * eps * (1.0 + (gamma * t).exp()) + (2.0 * sup).powi(2) / (n as f64 - 1.0) * ((gamma * t).exp() - 1.0) / gamma
    };
    rec.check(
        "joint_limit",
        "joint mean-field and classical limit",
        "MK2(f(t), W̃_ε[R_{ε,N:1}(t)])² ≤ dε(1 + e^{Γt}) + (2‖∇V‖_∞)²/(N−1) (e^{Γt} − 1)/Γ + Monte Carlo and atomization tolerance",
    );
    rec.check(
        "box_boundary_mass",
        "periodic box realization",
        "Husimi mass within L/8 of the box edge ≤ 1e-2",
    );
    let f_in = sample_stream(f, JOINT_ATOMS, ctx.seed, 0)?;
    let vl = evolve_vlasov_sampled(&f_in, v, time.t_end, time.dt, time.outputs)?;
    let opts = EvolveOptions::new(time.t_end, time.dt).outputs(time.outputs);
    let hash = ctx.cfg.hash();
    let m = grid.len();
    let outputs = vl.times.len();
    // per snapshot: running sum of marginals and per-batch sums
    let batches = 4;
    let zero = Operator::zeros(m, m);
    let mut total = vec![zero.clone(); outputs];
    let mut batch = vec![vec![zero; outputs]; batches];
    for r in 0..draws {
        let mut gen = rng(ctx.seed, 1 + r as u64);
        let centres: Vec<usize> = (0..n).map(|_| gen.random_range(0..JOINT_ATOMS)).collect();
        let packets = centres
            .iter()
            .map(|&k| {
                let z = f_in.atom(k);
                CoherentState::new(z[0], z[1], eps)?.wave(grid)
            })
            .collect::<Result<Vec<_>>>()?;
        let refs: Vec<&WaveFunction> = packets.iter().collect();
        let psi0 = WaveFunction::product(&refs, DEFAULT_AMPLITUDE_CAP)?;
        let key = format!("{}-draw{r}", ctx.cfg.job_name());
        let path = cached(ctx.cache, &key, &hash, &mut rec.warnings, || nbody_schrodinger_evolve(&psi0, v, &opts))?;
        if path.len() != outputs {
            return Err(Error::Artifact(format!("checkpoint '{key}' has {} states", path.len())));
        }
        for (s, psi) in path.iter().enumerate() {
            let marg = axis_average_marginal(psi)?;
            total[s] += &marg;
            batch[r % batches][s] += &marg;
        }
    }
    let mut curve = Vec::new();
    let mut bounds = Vec::new();
    for s in 1..outputs {
        let t = vl.times[s];
        let ft = &vl.snapshots[s];
        let avg = DensityOperator::new(grid, 1, &total[s] / Complex64::new(draws as f64, 0.0))?;
        let (mk_sq, atom_tol, h) = mk2_sq_to_husimi(ft, &avg, eps)?;
        let mut per_batch = Vec::with_capacity(batches);
        for b in &batch {
            let count = (0..draws).filter(|r| r % batches == per_batch.len()).count();
            let op = DensityOperator::new(grid, 1, &b[s] / Complex64::new(count as f64, 0.0))?;
            per_batch.push(mk2_sq_to_husimi(ft, &op, eps)?.0);
        }
        let mean = per_batch.iter().sum::<f64>() / batches as f64;
        let sd = (per_batch.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (batches as f64 - 1.0)).sqrt();
        let mc_tol = 2.0 * sd / (batches as f64).sqrt();
        rec.row("joint_limit", s, t, mk_sq, bound(t), mc_tol + atom_tol);
        let l = grid.box_length();
        let edge: f64 = (0..m)
            .filter(|&a| h.position(a).abs() > 0.375 * l)
            .map(|a| (0..m).map(|b| h.value(a, b).max(0.0)).sum::<f64>())
            .sum::<f64>()
            * h.cell_area();
        rec.row("box_boundary_mass", s, t, edge, 1e-2, 0.0);
        rec.note(&format!("mc_batches_t{s}"), &per_batch);
        curve.push((t, mk_sq, mc_tol + atom_tol));
        bounds.push(bound(t));
        rec.file(&format!("husimi_t{s}.dat"), |b| h.write_gnuplot(b))?;
    }
    rec.file("vlasov.csv", |b| vl.write_csv(b))?;
    rec.note("gamma", gamma);
    rec.note("draws", draws);
    rec.note("atoms", JOINT_ATOMS);
    rec.series.push(
        Series::new("joint_limit", "t", "MK2(f(t), Husimi(R_N:1(t)))²", curve).with_reference("theorem bound", bounds),
    );
    Ok(())
}
