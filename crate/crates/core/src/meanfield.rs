//! Particle-method solution of the follower-density transport equation
//! coupled to finitely many leader ODEs, plus the stability and convergence
//! experiments built on top of it.
//!
//! The density is always represented by a particle cloud and advanced with
//! the same integrator as the finite system; measures at later times are
//! pushforwards of the initial atoms along the particle flow. This makes the
//! solver bit-identical to [`crate::microdynamics::integrate`] at equal
//! particle counts, which a test pins.

use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom;
use crate::measures::{
    self, empirical_from_followers, leader_control_measure, support_radius, MeasureKind,
    WeightedMeasure,
};
use crate::microdynamics::{
    grid_index, gronwall_constant, integrate, ControlSignal, KernelSet, Method, SwarmState,
};
use crate::rng::{self, Purpose};

/// Initial follower density: explicit atoms (uniform weights) or a seeded
/// uniform-ball sampler. Sampling is per-atom seeded, so the first `n` atoms
/// of a cloud do not depend on how many are drawn in total; prefixes of one
/// cloud are valid subsamples.
#[derive(Debug, Clone)]
pub enum InitialCloud {
    Atoms(WeightedMeasure),
    Sampled { seed: u64, center: Vec<f64>, radius: f64 },
}

impl InitialCloud {
    /// Concrete atom positions for an `n`-particle run.
    pub fn resolve(&self, n: usize) -> Result<Vec<Vec<f64>>> {
        if n == 0 {
            return Err(Error::input("particle count must be at least 1"));
        }
        match self {
            InitialCloud::Atoms(mu) => {
                if mu.kind != MeasureKind::Probability {
                    return Err(Error::input("initial cloud must be a probability measure"));
                }
                let w0 = 1.0 / mu.len() as f64;
                if mu.weights.iter().any(|w| (*w - w0).abs() > 1e-15) {
                    return Err(Error::input(
                        "initial cloud must carry uniform weights (particles are unweighted)",
                    ));
                }
                if mu.len() < n {
                    return Err(Error::input(format!(
                        "initial cloud has {} atoms, fewer than the requested {n}",
                        mu.len()
                    )));
                }
                Ok(mu.atoms[..n].to_vec())
            }
            InitialCloud::Sampled { seed, center, radius } => {
                if center.is_empty() || !center.iter().all(|v| v.is_finite()) {
                    return Err(Error::input("sampler center must be a finite point"));
                }
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(Error::input("sampler radius must be positive"));
                }
                let d = center.len();
                Ok((0..n)
                    .map(|i| {
                        let mut rng = rng::stream(*seed, Purpose::InitCloud, 0, i as u64);
                        let mut x = rng::uniform_in_ball(&mut rng, d, *radius);
                        for (xc, cc) in x.iter_mut().zip(center) {
                            *xc += cc;
                        }
                        x
                    })
                    .collect())
            }
        }
    }
}

/// Leader paths and follower measures on a uniform time grid.
#[derive(Debug, Clone)]
pub struct MeanFieldTrajectory {
    pub times: Vec<f64>,
    /// Per-time leader positions, `m` points each.
    pub leader_paths: Vec<Vec<Vec<f64>>>,
    /// Per-time probability measures; atom j at time t is atom j of time 0
    /// moved along the particle flow.
    pub measures: Vec<WeightedMeasure>,
    pub n_particles: usize,
    /// Largest support radius observed over the run.
    pub support_bound: f64,
    pub control: ControlSignal,
    pub kernels: KernelSet,
    pub dt: f64,
}

impl MeanFieldTrajectory {
    pub fn num_leaders(&self) -> usize {
        self.leader_paths[0].len()
    }

    pub fn dim(&self) -> usize {
        self.measures[0].dim()
    }
}

/// Advances the follower density and leaders to `t_end` as an `n_mf`-particle
/// system; deterministic for a fixed cloud seed.
pub fn solve_meanfield(
    mu0: &InitialCloud,
    y0: &[Vec<f64>],
    control: &ControlSignal,
    kernels: &KernelSet,
    t_end: f64,
    dt: f64,
    n_mf: usize,
) -> Result<MeanFieldTrajectory> {
    let atoms = mu0.resolve(n_mf)?;
    let initial = SwarmState::new(y0.to_vec(), atoms, 0.0)?;
    let traj = integrate(&initial, control, kernels, t_end, dt, Method::Euler)?;
    let mut times = Vec::with_capacity(traj.states.len());
    let mut leader_paths = Vec::with_capacity(traj.states.len());
    let mut measures_t = Vec::with_capacity(traj.states.len());
    let mut support_bound = 0.0f64;
    for s in &traj.states {
        times.push(s.time);
        leader_paths.push(s.leaders.clone());
        let mu = empirical_from_followers(&s.followers)?;
        support_bound = support_bound.max(support_radius(&mu));
        measures_t.push(mu);
    }
    Ok(MeanFieldTrajectory {
        times,
        leader_paths,
        measures: measures_t,
        n_particles: n_mf,
        support_bound,
        control: control.clone(),
        kernels: kernels.clone(),
        dt,
    })
}

/// Smooth compactly supported radial bump: inside the ball `B(center, radius)`
/// the value is `exp(1 / (s - 1))` with `s = (|x - center| / radius)^2`, and
/// zero outside. The gradient is analytic and vanishes outside the ball.
#[derive(Debug, Clone)]
pub struct BumpFunction {
    pub center: Vec<f64>,
    pub radius: f64,
}

impl BumpFunction {
    pub fn new(center: Vec<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || !center.iter().all(|v| v.is_finite()) {
            return Err(Error::input("bump center must be a finite point"));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::input("bump radius must be positive"));
        }
        Ok(Self { center, radius })
    }

    fn s(&self, x: &[f64]) -> f64 {
        let dr = geom::dist(x, &self.center) / self.radius;
        dr * dr
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let s = self.s(x);
        if s >= 1.0 {
            0.0
        } else {
            (1.0 / (s - 1.0)).exp()
        }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.s(x);
        if s >= 1.0 {
            return geom::zeros(x.len());
        }
        let phi = (1.0 / (s - 1.0)).exp();
        let denom = self.radius * self.radius * (s - 1.0) * (s - 1.0);
        let mut g = geom::sub(x, &self.center);
        for v in g.iter_mut() {
            *v *= -2.0 * phi / denom;
        }
        g
    }
}

/// Velocity field of the transported density at point `x` and time index
/// `idx`: follower-kernel convolution plus the control-weighted leader terms.
fn density_velocity(
    traj: &MeanFieldTrajectory,
    idx: usize,
    x: &[f64],
) -> Result<Vec<f64>> {
    let mu = &traj.measures[idx];
    let mut v = measures::convolve(&traj.kernels.h, mu, x)?;
    let leaders = &traj.leader_paths[idx];
    if !leaders.is_empty() && !traj.kernels.g_all_zero() {
        let u_now = traj.control.sample(traj.times[idx]);
        for (ell, g) in traj.kernels.g.iter().enumerate() {
            let mu_ml = leader_control_measure(leaders, u_now, ell + 1)?;
            let term = measures::convolve_g(g, ell + 1, &mu_ml, x)?;
            geom::axpy(&mut v, 1.0, &term);
        }
    }
    Ok(v)
}

/// Magnitude of the weak-form defect of the transported density over
/// `[t0, t1]`: change of the test-function average minus the trapezoid
/// integral of the transport term. First-order small in the step size.
pub fn weak_residual(
    traj: &MeanFieldTrajectory,
    phi: &BumpFunction,
    t0: f64,
    t1: f64,
) -> Result<f64> {
    if phi.center.len() != traj.dim() {
        return Err(Error::input("test function dimension mismatch"));
    }
    let i0 = grid_index(t0, traj.dt, "window start")?;
    let i1 = grid_index(t1, traj.dt, "window end")?;
    if i0 >= i1 || i1 >= traj.times.len() {
        return Err(Error::input("weak-form window must be nonempty and inside the run"));
    }
    let avg = |idx: usize| -> f64 {
        let mu = &traj.measures[idx];
        mu.atoms
            .iter()
            .zip(&mu.weights)
            .map(|(a, w)| w * phi.value(a))
            .sum()
    };
    let rhs = |idx: usize| -> Result<f64> {
        let mu = &traj.measures[idx];
        let mut acc = 0.0;
        for (a, w) in mu.atoms.iter().zip(&mu.weights) {
            let v = density_velocity(traj, idx, a)?;
            acc += w * geom::dot(&phi.gradient(a), &v);
        }
        Ok(acc)
    };
    let mut integral = 0.0;
    for idx in i0..=i1 {
        let weight = if idx == i0 || idx == i1 { 0.5 } else { 1.0 };
        integral += weight * rhs(idx)?;
    }
    integral *= traj.dt;
    Ok((avg(i1) - avg(i0) - integral).abs())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `max_t chi(t) / chi(0)` between the base and perturbed runs.
    pub ratio: f64,
    /// Exponential bound `exp(C T)` from the kernel certificates and the
    /// control bound; the ratio must stay below it.
    pub bound: f64,
}

/// Runs the base system and a perturbed copy under the same control and
/// reports the worst-case amplification of the initial distance.
///
/// Leader k moves by `delta_leaders` times a seeded unit-ball direction;
/// atom i moves by `delta_atoms` times its own seeded direction. Directions
/// depend only on `seed`, so shrinking the scales probes linear response.
#[allow(clippy::too_many_arguments)]
pub fn stability_experiment(
    mu0: &InitialCloud,
    y0: &[Vec<f64>],
    control: &ControlSignal,
    kernels: &KernelSet,
    t_end: f64,
    dt: f64,
    n_mf: usize,
    delta_leaders: f64,
    delta_atoms: f64,
    seed: u64,
) -> Result<StabilityReport> {
    if !(delta_leaders.is_finite() && delta_leaders >= 0.0)
        || !(delta_atoms.is_finite() && delta_atoms >= 0.0)
    {
        return Err(Error::input("perturbation scales must be nonnegative"));
    }
    if y0.is_empty() {
        return Err(Error::input("stability run needs at least one leader"));
    }
    let d = y0[0].len();
    let base_atoms = mu0.resolve(n_mf)?;
    let pert_atoms: Vec<Vec<f64>> = base_atoms
        .iter()
        .enumerate()
        .map(|(i, a)| {
            let mut rng = rng::stream(seed, Purpose::Perturb, 0, i as u64);
            let dir = rng::uniform_in_ball(&mut rng, d, 1.0);
            let mut a = a.clone();
            geom::axpy(&mut a, delta_atoms, &dir);
            a
        })
        .collect();
    let pert_y0: Vec<Vec<f64>> = y0
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let mut rng = rng::stream(seed, Purpose::Perturb, 1, k as u64);
            let dir = rng::uniform_in_ball(&mut rng, d, 1.0);
            let mut y = y.clone();
            geom::axpy(&mut y, delta_leaders, &dir);
            y
        })
        .collect();

    let base = solve_meanfield(
        &InitialCloud::Atoms(empirical_from_followers(&base_atoms)?),
        y0,
        control,
        kernels,
        t_end,
        dt,
        n_mf,
    )?;
    let pert = solve_meanfield(
        &InitialCloud::Atoms(empirical_from_followers(&pert_atoms)?),
        &pert_y0,
        control,
        kernels,
        t_end,
        dt,
        n_mf,
    )?;

    let chi_at = |idx: usize| -> Result<f64> {
        measures::chi_distance(
            &base.leader_paths[idx],
            &base.measures[idx],
            &pert.leader_paths[idx],
            &pert.measures[idx],
        )
    };
    let chi0 = chi_at(0)?;
    if chi0 == 0.0 {
        return Err(Error::input("perturbation left the initial data unchanged"));
    }
    let mut ratio = 0.0f64;
    for idx in 0..base.times.len() {
        ratio = ratio.max(chi_at(idx)? / chi0);
    }
    let bound = (gronwall_constant(kernels, control.u_max) * t_end).exp();
    Ok(StabilityReport { ratio, bound })
}

/// Controls used by [`convergence_study`]: one shared signal, or one per
/// entry of the particle-count list plus a reference signal.
#[derive(Debug, Clone)]
pub enum StudyControls {
    Fixed(ControlSignal),
    PerN {
        per_n: Vec<ControlSignal>,
        reference: ControlSignal,
    },
}

impl StudyControls {
    fn for_index(&self, idx: usize) -> &ControlSignal {
        match self {
            StudyControls::Fixed(u) => u,
            StudyControls::PerN { per_n, .. } => &per_n[idx],
        }
    }

    fn reference(&self) -> &ControlSignal {
        match self {
            StudyControls::Fixed(u) => u,
            StudyControls::PerN { reference, .. } => reference,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StudyRow {
    pub n: usize,
    /// Largest transport distance to the reference density over the grid.
    pub max_w1: f64,
    /// Largest mean leader displacement from the reference run.
    pub max_leader_err: f64,
    pub runtime_s: f64,
}

/// Compares runs at increasing particle counts against one high-count
/// reference run. Each run reuses the first `n` atoms of the reference cloud,
/// so the initial densities converge to the reference by construction; rows
/// come back ordered by `n` regardless of scheduling.
#[allow(clippy::too_many_arguments)]
pub fn convergence_study(
    mu0: &InitialCloud,
    y0: &[Vec<f64>],
    controls: &StudyControls,
    kernels: &KernelSet,
    t_end: f64,
    dt: f64,
    n_list: &[usize],
    reference_n: usize,
) -> Result<Vec<StudyRow>> {
    if n_list.is_empty() {
        return Err(Error::input("particle-count list is empty"));
    }
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::input("particle counts must be strictly increasing"));
    }
    if reference_n <= *n_list.last().unwrap() {
        return Err(Error::input(
            "reference particle count must exceed every study count",
        ));
    }
    if let StudyControls::PerN { per_n, .. } = controls {
        if per_n.len() != n_list.len() {
            return Err(Error::input(
                "need exactly one control per particle count",
            ));
        }
    }

    let ref_atoms = mu0.resolve(reference_n)?;
    let ref_cloud = InitialCloud::Atoms(empirical_from_followers(&ref_atoms)?);
    let reference = solve_meanfield(
        &ref_cloud,
        y0,
        controls.reference(),
        kernels,
        t_end,
        dt,
        reference_n,
    )?;

    let rows: Vec<StudyRow> = n_list
        .par_iter()
        .enumerate()
        .map(|(idx, &n)| -> Result<StudyRow> {
            let start = Instant::now();
            let cloud = InitialCloud::Atoms(empirical_from_followers(&ref_atoms[..n].to_vec())?);
            let run = solve_meanfield(
                &cloud,
                y0,
                controls.for_index(idx),
                kernels,
                t_end,
                dt,
                n,
            )?;
            let mut max_w1 = 0.0f64;
            let mut max_leader_err = 0.0f64;
            for t in 0..run.times.len() {
                max_w1 = max_w1
                    .max(measures::wasserstein1(&run.measures[t], &reference.measures[t])?);
                let m = y0.len();
                if m > 0 {
                    let gap: f64 = run.leader_paths[t]
                        .iter()
                        .zip(&reference.leader_paths[t])
                        .map(|(p, q)| geom::dist(p, q))
                        .sum();
                    max_leader_err = max_leader_err.max(gap / m as f64);
                }
            }
            Ok(StudyRow {
                n,
                max_w1,
                max_leader_err,
                runtime_s: start.elapsed().as_secs_f64(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(rows)
}
