//! Cost convergence of the finite-crowd tracking problems toward their
//! mean-field counterpart. The limit functional is never meshed: it is
//! represented by particle quadrature on a reference cloud, and the limit
//! behaviour is exercised through its computable consequences, namely cost
//! and control convergence along optimal and constant control sequences.
//! The quadratic tracking integrand converges uniformly under narrow
//! convergence only on equi-compact supports, which is the regime every
//! fixture stays in.

use crate::error::{Error, Result};
use crate::geom;
use crate::meanfield::InitialCloud;
use crate::microdynamics::{ControlSignal, KernelSet, SwarmState};
use crate::optctrl::{optimality_residual, optimize, CostSpec, OptimizeOpts, OptimizeResult, Target};
use rayon::prelude::*;

/// One tracking problem shared by every crowd size of a sweep: initial
/// cloud, leader starts, kernels, target data, and optimizer settings.
#[derive(Debug, Clone)]
pub struct GammaProblem {
    pub mu0: InitialCloud,
    pub y0: Vec<Vec<f64>>,
    pub kernels: KernelSet,
    pub target: Target,
    pub control_weight: f64,
    /// Weight of the tracking term in the per-crowd mean; each `N`-particle
    /// problem uses `state_weight / N` per particle.
    pub state_weight: f64,
    pub t_end: f64,
    pub dt: f64,
    pub opts: OptimizeOpts,
}

impl GammaProblem {
    fn cost_for(&self, n: usize) -> CostSpec {
        CostSpec {
            target: self.target.clone(),
            control_weight: self.control_weight,
            state_weight: self.state_weight / n as f64,
        }
    }

    fn state_for(&self, n: usize) -> Result<SwarmState> {
        let atoms = self.mu0.resolve(n)?;
        SwarmState::new(self.y0.clone(), atoms, 0.0)
    }
}

#[derive(Debug, Clone)]
pub struct GammaRow {
    pub n: usize,
    /// Optimal value of the `n`-particle problem.
    pub optimal_cost: f64,
    /// `L²(0,T)` distance from this row's control to the largest crowd's.
    pub control_distance_to_largest: f64,
    /// This row's control re-priced by particle quadrature on the reference
    /// cloud.
    pub limit_cost_estimate: f64,
    pub converged: bool,
    pub control: ControlSignal,
}

/// Rows ordered by increasing crowd size; the last row is the reference.
#[derive(Debug, Clone)]
pub struct GammaSweepReport {
    pub rows: Vec<GammaRow>,
}

/// Mean-per-particle tracking cost of `control` on an `n_ref`-particle
/// realization of `mu0`: particle quadrature of the limit functional, plus
/// the control energy. Deterministic for a fixed cloud seed.
pub fn limit_cost(
    control: &ControlSignal,
    mu0: &InitialCloud,
    y0: &[Vec<f64>],
    kernels: &KernelSet,
    cost: &CostSpec,
    n_ref: usize,
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    let atoms = mu0.resolve(n_ref)?;
    let st = SwarmState::new(y0.to_vec(), atoms, 0.0)?;
    let mut per_particle = cost.clone();
    per_particle.state_weight = cost.state_weight / n_ref as f64;
    crate::optctrl::evaluate_cost(&st, control, &per_particle, kernels, t_end, dt)
}

/// `L²(0,T)` distance between two piecewise-constant controls on the same
/// piece layout.
pub fn control_l2_gap(a: &ControlSignal, b: &ControlSignal) -> Result<f64> {
    if a.breakpoints != b.breakpoints
        || a.num_leaders() != b.num_leaders()
        || a.dim() != b.dim()
    {
        return Err(Error::input("controls live on different piece layouts"));
    }
    let mut acc = 0.0;
    for (p, (ua, ub)) in a.values.iter().zip(&b.values).enumerate() {
        let len = a.breakpoints[p + 1] - a.breakpoints[p];
        let mut s = 0.0;
        for (ka, kb) in ua.iter().zip(ub) {
            let d = geom::sub(ka, kb);
            s += geom::dot(&d, &d);
        }
        acc += len * s;
    }
    Ok(acc.sqrt())
}

/// Solve the tracking problem for every crowd size in `n_list` (nested
/// clouds, shared optimizer tolerance) and report, per size, the optimal
/// cost, the control gap to the largest size, and the control re-priced on
/// the reference cloud. Rows that failed to converge are flagged so trend
/// checks can skip them; hard errors propagate.
pub fn gamma_sweep(problem: &GammaProblem, n_list: &[usize]) -> Result<GammaSweepReport> {
    if n_list.is_empty() {
        return Err(Error::input("need at least one crowd size"));
    }
    if n_list.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::input("crowd sizes must be strictly increasing"));
    }
    let n_ref = *n_list.last().unwrap();

    let solved: Vec<OptimizeResult> = n_list
        .par_iter()
        .map(|&n| {
            let st = problem.state_for(n)?;
            optimize(
                &st,
                &problem.cost_for(n),
                &problem.kernels,
                problem.t_end,
                problem.dt,
                &problem.opts,
            )
        })
        .collect::<Result<Vec<_>>>()?;

    let ref_control = &solved.last().unwrap().control;
    let mean_cost = CostSpec {
        target: problem.target.clone(),
        control_weight: problem.control_weight,
        state_weight: problem.state_weight,
    };
    let mut rows = Vec::with_capacity(n_list.len());
    for (&n, res) in n_list.iter().zip(&solved) {
        let gap = control_l2_gap(&res.control, ref_control)?;
        let est = limit_cost(
            &res.control,
            &problem.mu0,
            &problem.y0,
            &problem.kernels,
            &mean_cost,
            n_ref,
            problem.t_end,
            problem.dt,
        )?;
        rows.push(GammaRow {
            n,
            optimal_cost: res.cost,
            control_distance_to_largest: gap,
            limit_cost_estimate: est,
            converged: res.converged,
            control: res.control.clone(),
        });
    }
    Ok(GammaSweepReport { rows })
}

/// Stationarity of `control` for the limit problem, realized as the
/// finite-crowd residual on an `n_ref`-particle quadrature of the cloud.
/// The per-particle costates stand in for the adjoint density (scaled by
/// the crowd size), which makes this formula identical to the finite-crowd
/// one by construction.
pub fn infinite_optimality_residual(
    control: &ControlSignal,
    mu0: &InitialCloud,
    y0: &[Vec<f64>],
    kernels: &KernelSet,
    cost: &CostSpec,
    n_ref: usize,
    t_end: f64,
    dt: f64,
    step: f64,
) -> Result<f64> {
    let atoms = mu0.resolve(n_ref)?;
    let st = SwarmState::new(y0.to_vec(), atoms, 0.0)?;
    let mut per_particle = cost.clone();
    per_particle.state_weight = cost.state_weight / n_ref as f64;
    optimality_residual(&st, control, &per_particle, kernels, t_end, dt, step)
}
