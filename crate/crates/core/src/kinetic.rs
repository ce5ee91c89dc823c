//! Binary-interaction Monte Carlo for the crowd at fixed controlled
//! fraction: pairwise collisions whose control branches are chosen by
//! Bernoulli coin flips, the averaged interaction kernel the collisions
//! converge to when interactions become weak and frequent, a particle solver
//! for the resulting transport equation, and the sweep that measures the
//! distance between the two as the interaction strength shrinks.

use crate::error::{Error, Result};
use crate::geom;
use crate::meanfield::{InitialCloud, MeanFieldTrajectory};
use crate::measures::{empirical_from_followers, support_radius, wasserstein1};
use crate::microdynamics::{grid_index, uniform_h_sum, weighted_g_sum, ControlSignal, KernelSet};
use crate::rng::{stream, Purpose};
use rand::Rng;
use rayon::prelude::*;
use std::time::Instant;

/// A sampled crowd state for the collision process. Randomness is drawn
/// from counter-based streams keyed by `(seed, step, pair)`, so `seed` plus
/// the collision counter `step` fully determine the generator state and
/// parallel execution is bitwise independent of thread count.
#[derive(Debug, Clone)]
pub struct KineticEnsemble {
    pub samples: Vec<Vec<f64>>,
    /// Probability that an agent acts as controlled in a collision.
    pub p: f64,
    pub seed: u64,
    /// Number of collision rounds taken so far.
    pub step: u64,
    pub time: f64,
}

impl KineticEnsemble {
    pub fn new(samples: Vec<Vec<f64>>, p: f64, seed: u64) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::input("ensemble needs at least two samples"));
        }
        let d = samples[0].len();
        if d == 0 || samples.iter().any(|s| s.len() != d) {
            return Err(Error::input("samples disagree on dimension"));
        }
        if samples.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite sample position"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::input("control probability must lie in [0, 1]"));
        }
        Ok(Self {
            samples,
            p,
            seed,
            step: 0,
            time: 0.0,
        })
    }

    pub fn from_cloud(mu0: &InitialCloud, m: usize, p: f64, seed: u64) -> Result<Self> {
        Self::new(mu0.resolve(m)?, p, seed)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.samples[0].len()
    }

    pub fn measure(&self) -> Result<crate::measures::WeightedMeasure> {
        empirical_from_followers(&self.samples)
    }
}

/// Constant-in-time control pair for the collision process: the drift of a
/// controlled agent and the interaction control its partner applies. Being
/// piecewise constant, the signals are their own small-strength limits.
#[derive(Debug, Clone)]
pub struct KineticControls {
    pub u_alpha: Vec<f64>,
    pub u_star_alpha: Vec<f64>,
    /// Radius of the admissible ball both values are clamped into.
    pub u_max: f64,
}

impl KineticControls {
    pub fn new(mut u_alpha: Vec<f64>, mut u_star_alpha: Vec<f64>, u_max: f64) -> Result<Self> {
        if u_alpha.is_empty() || u_alpha.len() != u_star_alpha.len() {
            return Err(Error::input("control vectors must share a positive dimension"));
        }
        if u_alpha
            .iter()
            .chain(u_star_alpha.iter())
            .any(|v| !v.is_finite())
        {
            return Err(Error::input("non-finite control value"));
        }
        if !(u_max.is_finite() && u_max >= 0.0) {
            return Err(Error::input("control bound must be finite and nonnegative"));
        }
        crate::microdynamics::project_ball(&mut u_alpha, u_max);
        crate::microdynamics::project_ball(&mut u_star_alpha, u_max);
        Ok(Self {
            u_alpha,
            u_star_alpha,
            u_max,
        })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            u_alpha: geom::zeros(d),
            u_star_alpha: geom::zeros(d),
            u_max: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.u_alpha.len()
    }
}

/// `w_h·H(x−y) + w_g·Σ_ℓ G^ℓ(x−y)·(u*)_ℓ + w_u·u`. Zero-weight terms are
/// skipped entirely, so degenerate weights reproduce the surviving term
/// exactly.
pub(crate) fn weighted_displacement(
    w_h: f64,
    w_g: f64,
    w_u: f64,
    x: &[f64],
    y: &[f64],
    u: &[f64],
    u_star: &[f64],
    kernels: &KernelSet,
) -> Result<Vec<f64>> {
    let mut out = geom::zeros(x.len());
    if w_h != 0.0 {
        let h = kernels.h.eval_h(&geom::sub(x, y))?;
        geom::axpy(&mut out, w_h, &h);
    }
    if w_g != 0.0 {
        let pull = weighted_g_sum(&kernels.g, &geom::sub(x, y), u_star)?;
        geom::axpy(&mut out, w_g, &pull);
    }
    if w_u != 0.0 {
        geom::axpy(&mut out, w_u, u);
    }
    Ok(out)
}

/// Post-collision position of `x` after meeting `y`:
///
/// ```text
/// x̂ = x + α[ H(x−y)(1−Θ)(1−Θ*) + Σ_ℓ G^ℓ(x−y)(u*)_ℓ(1−Θ)Θ* + u·Θ ]
/// ```
///
/// The indicator bits are supplied, so the map is deterministic; the drift
/// of a controlled agent (`Θ = 1`) ignores the kernels entirely.
pub fn binary_interaction(
    x: &[f64],
    y: &[f64],
    theta: bool,
    theta_star: bool,
    u_alpha: &[f64],
    u_star_alpha: &[f64],
    alpha: f64,
    kernels: &KernelSet,
) -> Result<Vec<f64>> {
    let d = x.len();
    if y.len() != d || u_alpha.len() != d || u_star_alpha.len() != d || kernels.dim() != d {
        return Err(Error::input("collision dimension mismatch"));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::input("interaction strength must be nonnegative"));
    }
    let mut out = x.to_vec();
    if alpha == 0.0 {
        return Ok(out);
    }
    let (w_h, w_g, w_u) = match (theta, theta_star) {
        (true, _) => (0.0, 0.0, 1.0),
        (false, true) => (0.0, 1.0, 0.0),
        (false, false) => (1.0, 0.0, 0.0),
    };
    let disp = weighted_displacement(w_h, w_g, w_u, x, y, u_alpha, u_star_alpha, kernels)?;
    geom::axpy(&mut out, alpha, &disp);
    Ok(out)
}

/// Collision average of `binary_interaction` displacements over the two
/// Bernoulli bits:
///
/// ```text
/// ⟨K⟩(x,y) = (1−p)²·H(x−y) + p(1−p)·Σ_ℓ G^ℓ(x−y)·ū*_ℓ + p·ū
/// ```
///
/// `p = 0` reproduces `H(x−y)` and `p = 1` reproduces `ū` exactly.
pub fn limit_kernel(
    x: &[f64],
    y: &[f64],
    u_bar: &[f64],
    u_star_bar: &[f64],
    p: f64,
    kernels: &KernelSet,
) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::input("control probability must lie in [0, 1]"));
    }
    let d = x.len();
    if y.len() != d || u_bar.len() != d || u_star_bar.len() != d || kernels.dim() != d {
        return Err(Error::input("kernel dimension mismatch"));
    }
    weighted_displacement(
        (1.0 - p) * (1.0 - p),
        p * (1.0 - p),
        p,
        x,
        y,
        u_bar,
        u_star_bar,
        kernels,
    )
}

pub(crate) fn shuffled_indices(m: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut rng = stream(seed, Purpose::Shuffle, step, 0);
    let mut idx: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// One collision round: the crowd is split into disjoint random pairs, each
/// pair collides with probability `eta·dt`, and both partners are updated
/// from their pre-collision states with the same two Bernoulli bits in
/// swapped roles. With an odd crowd one agent sits the round out. Every
/// draw comes from a stream keyed by `(seed, step, pair)`, so the result is
/// reproducible and thread-count independent.
pub fn boltzmann_step(
    ens: &KineticEnsemble,
    eta: f64,
    alpha: f64,
    dt: f64,
    controls: &KineticControls,
    kernels: &KernelSet,
) -> Result<KineticEnsemble> {
    let d = ens.dim();
    if kernels.dim() != d || controls.dim() != d {
        return Err(Error::input("collision dimension mismatch"));
    }
    if !(eta.is_finite() && eta >= 0.0 && dt.is_finite() && dt > 0.0) {
        return Err(Error::input("collision rate and step must be nonnegative"));
    }
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::input("interaction strength must be nonnegative"));
    }
    let rate = eta * dt;
    if rate > 1.0 {
        return Err(Error::config(format!(
            "collision probability eta*dt = {rate} exceeds 1"
        )));
    }

    let m = ens.len();
    let order = shuffled_indices(m, ens.seed, ens.step);
    let pairs: Vec<(usize, usize)> = (0..m / 2)
        .map(|k| (order[2 * k], order[2 * k + 1]))
        .collect();

    let updates = pairs
        .par_iter()
        .enumerate()
        .map(|(pair_idx, &(i, j))| {
            let mut rng = stream(ens.seed, Purpose::Collide, ens.step, pair_idx as u64);
            if rng.gen::<f64>() >= rate {
                return Ok(None);
            }
            let theta = rng.gen::<f64>() < ens.p;
            let theta_star = rng.gen::<f64>() < ens.p;
            let xi = binary_interaction(
                &ens.samples[i],
                &ens.samples[j],
                theta,
                theta_star,
                &controls.u_alpha,
                &controls.u_star_alpha,
                alpha,
                kernels,
            )?;
            let xj = binary_interaction(
                &ens.samples[j],
                &ens.samples[i],
                theta_star,
                theta,
                &controls.u_alpha,
                &controls.u_star_alpha,
                alpha,
                kernels,
            )?;
            Ok(Some((i, xi, j, xj)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut samples = ens.samples.clone();
    for up in updates.into_iter().flatten() {
        let (i, xi, j, xj) = up;
        samples[i] = xi;
        samples[j] = xj;
    }
    Ok(KineticEnsemble {
        samples,
        p: ens.p,
        seed: ens.seed,
        step: ens.step + 1,
        time: ens.time + dt,
    })
}

/// Velocity of the averaged-kernel transport field at `x_i` against the
/// uniform cloud: `(1−p)²·(H-mean) + p(1−p)·(G-mean weighted by ū*) + p·ū`.
/// Zero coefficients skip their term, so `p = 0` reproduces the plain
/// pairwise drift bit for bit.
fn limit_velocity(
    x_i: &[f64],
    cloud: &[Vec<f64>],
    p: f64,
    controls: &KineticControls,
    kernels: &KernelSet,
) -> Result<Vec<f64>> {
    let c_h = (1.0 - p) * (1.0 - p);
    let c_g = p * (1.0 - p);
    let mut v = if c_h != 0.0 {
        geom::scale(&uniform_h_sum(&kernels.h, x_i, cloud)?, c_h)
    } else {
        geom::zeros(x_i.len())
    };
    if c_g != 0.0 && !kernels.g_all_zero() {
        let inv = 1.0 / cloud.len() as f64;
        let mut acc = geom::zeros(x_i.len());
        for y in cloud {
            let pull = weighted_g_sum(&kernels.g, &geom::sub(x_i, y), &controls.u_star_alpha)?;
            geom::axpy(&mut acc, inv, &pull);
        }
        geom::axpy(&mut v, c_g, &acc);
    }
    if p != 0.0 {
        geom::axpy(&mut v, p, &controls.u_alpha);
    }
    Ok(v)
}

/// Particle solver for the transport equation driven by the averaged
/// collision kernel. At `p = 0` the run is bitwise identical to the
/// leaderless pairwise dynamics; at `p = 1` the cloud translates rigidly
/// with ū. The returned trajectory has no leaders.
pub fn solve_limit_pde(
    mu0: &InitialCloud,
    p: f64,
    controls: &KineticControls,
    kernels: &KernelSet,
    t_end: f64,
    dt: f64,
    n_mf: usize,
) -> Result<MeanFieldTrajectory> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::input("control probability must lie in [0, 1]"));
    }
    if !(dt.is_finite() && dt > 0.0 && t_end.is_finite() && t_end > 0.0) {
        return Err(Error::input("horizon and step must be positive"));
    }
    let atoms = mu0.resolve(n_mf)?;
    let d = atoms[0].len();
    if kernels.dim() != d || controls.dim() != d {
        return Err(Error::input("kernel dimension mismatch"));
    }
    let steps = grid_index(t_end, dt, "horizon")?;
    if steps == 0 {
        return Err(Error::input("horizon shorter than one step"));
    }

    let mut clouds = Vec::with_capacity(steps + 1);
    clouds.push(atoms);
    for _ in 0..steps {
        let cur = clouds.last().unwrap();
        let vels = cur
            .par_iter()
            .map(|x| limit_velocity(x, cur, p, controls, kernels))
            .collect::<Result<Vec<_>>>()?;
        let next: Vec<Vec<f64>> = cur
            .iter()
            .zip(&vels)
            .map(|(x, v)| {
                let mut x = x.clone();
                geom::axpy(&mut x, dt, v);
                x
            })
            .collect();
        clouds.push(next);
    }

    let mut times = Vec::with_capacity(steps + 1);
    let mut measures_t = Vec::with_capacity(steps + 1);
    let mut support_bound = 0.0f64;
    for (n, cloud) in clouds.iter().enumerate() {
        times.push(n as f64 * dt);
        let mu = empirical_from_followers(cloud)?;
        support_bound = support_bound.max(support_radius(&mu));
        measures_t.push(mu);
    }
    Ok(MeanFieldTrajectory {
        times,
        leader_paths: vec![Vec::new(); steps + 1],
        measures: measures_t,
        n_particles: n_mf,
        support_bound,
        control: ControlSignal::new(vec![0.0, t_end], vec![Vec::new()], 0.0)?,
        kernels: kernels.clone(),
        dt,
    })
}

#[derive(Debug, Clone)]
pub struct KineticSweepRow {
    pub eps: f64,
    pub seed: u64,
    /// Largest distance over grid times between the collision ensemble and
    /// the averaged-kernel particle run started from the same atoms.
    pub max_w1: f64,
    pub runtime_s: f64,
}

/// For each interaction strength `ε` (strength `α = ε`, rate `η = 1/ε`,
/// step `dt = ε`, so every pair collides each round) and each seed, run the
/// collision process to `t_end` and measure `max_t W1` against the
/// averaged-kernel run with matched size and common initial atoms. Rows are
/// ordered by decreasing `ε`, seeds in the order given.
pub fn quasi_invariant_sweep(
    mu0: &InitialCloud,
    eps_list: &[f64],
    m_samples: usize,
    p: f64,
    controls: &KineticControls,
    kernels: &KernelSet,
    t_end: f64,
    seeds: &[u64],
) -> Result<Vec<KineticSweepRow>> {
    if eps_list.is_empty() || seeds.is_empty() {
        return Err(Error::input("need at least one strength and one seed"));
    }
    if eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(Error::input("interaction strengths must be positive"));
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::input("interaction strengths must strictly decrease"));
    }

    let limits: Vec<MeanFieldTrajectory> = eps_list
        .par_iter()
        .map(|&eps| solve_limit_pde(mu0, p, controls, kernels, t_end, eps, m_samples))
        .collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, u64)> = eps_list
        .iter()
        .enumerate()
        .flat_map(|(ei, _)| seeds.iter().map(move |&s| (ei, s)))
        .collect();

    jobs.par_iter()
        .map(|&(ei, seed)| {
            let clock = Instant::now();
            let eps = eps_list[ei];
            let limit = &limits[ei];
            let steps = limit.measures.len() - 1;
            let mut ens = KineticEnsemble::from_cloud(mu0, m_samples, p, seed)?;
            let mut max_w1 = 0.0f64;
            for n in 0..=steps {
                if n > 0 {
                    ens = boltzmann_step(&ens, 1.0 / eps, eps, eps, controls, kernels)?;
                }
                let w1 = wasserstein1(&ens.measure()?, &limit.measures[n])?;
                max_w1 = max_w1.max(w1);
            }
            Ok(KineticSweepRow {
                eps,
                seed,
                max_w1,
                runtime_s: clock.elapsed().as_secs_f64(),
            })
        })
        .collect()
}
