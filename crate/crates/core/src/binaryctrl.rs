//! Per-step optimal control of a colliding pair. Each collision minimizes a
//! one-step quadratic tracking objective in the two agents' controls; the
//! minimizer solves a small linear system and is projected into the
//! admissible ball, giving a feedback law that only reads the current pair
//! state. Driving every collision of a sampled crowd with that law yields a
//! cheap suboptimal controller for the whole population.

use crate::error::{Error, Result};
use crate::geom;
use crate::kinetic::{shuffled_indices, weighted_displacement, KineticEnsemble};
use crate::measures::{empirical_from_followers, WeightedMeasure};
use crate::microdynamics::{grid_index, project_ball, KernelSet};
use crate::rng::{stream, Purpose};
use rand::Rng;
use rayon::prelude::*;

/// Control indicator of one agent: either a resolved Bernoulli bit or the
/// Bernoulli mean itself, in which case indicator products are replaced by
/// their expectations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Theta {
    Bit(bool),
    Mean(f64),
}

impl Theta {
    fn validate(self) -> Result<()> {
        match self {
            Theta::Bit(_) => Ok(()),
            Theta::Mean(p) if (0.0..=1.0).contains(&p) && p.is_finite() => Ok(()),
            Theta::Mean(_) => Err(Error::input("indicator mean must lie in [0, 1]")),
        }
    }

    /// Probability weight the indicator contributes to branch products.
    fn weight(self) -> f64 {
        match self {
            Theta::Bit(b) => b as u8 as f64,
            Theta::Mean(p) => p,
        }
    }
}

/// Two interacting agents together with their control indicators.
#[derive(Debug, Clone)]
pub struct BinaryPair {
    pub xi: Vec<f64>,
    pub xj: Vec<f64>,
    pub theta_i: Theta,
    pub theta_j: Theta,
}

impl BinaryPair {
    pub fn new(xi: Vec<f64>, xj: Vec<f64>, theta_i: Theta, theta_j: Theta) -> Result<Self> {
        if xi.is_empty() || xi.len() != xj.len() {
            return Err(Error::input("pair states must share a positive dimension"));
        }
        if xi.iter().chain(xj.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("non-finite pair state"));
        }
        theta_i.validate()?;
        theta_j.validate()?;
        Ok(Self {
            xi,
            xj,
            theta_i,
            theta_j,
        })
    }

    pub fn dim(&self) -> usize {
        self.xi.len()
    }
}

/// Parameters of the one-step tracking objective
/// `(β/2)·‖X̄₂ − X¹‖² + γ·‖u‖²` and of the crowd runs built on it: `beta`
/// is the per-step discount (`β = e^{−λ·dt}`), `p` the probability an agent
/// is controlled, `u_max` the admissible ball radius.
#[derive(Debug, Clone)]
pub struct InstantaneousProblem {
    pub target: Vec<f64>,
    pub gamma: f64,
    pub beta: f64,
    pub dt: f64,
    pub p: f64,
    pub u_max: f64,
}

impl InstantaneousProblem {
    pub fn new(
        target: Vec<f64>,
        gamma: f64,
        beta: f64,
        dt: f64,
        p: f64,
        u_max: f64,
    ) -> Result<Self> {
        if target.is_empty() || target.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("target must be a finite point"));
        }
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(Error::input("control penalty must be positive"));
        }
        if !(beta.is_finite() && beta > 0.0 && beta <= 1.0) {
            return Err(Error::input("discount factor must lie in (0, 1]"));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::input("time step must be positive"));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::input("control probability must lie in [0, 1]"));
        }
        if !(u_max.is_finite() && u_max >= 0.0) {
            return Err(Error::input("control bound must be finite and nonnegative"));
        }
        Ok(Self {
            target,
            gamma,
            beta,
            dt,
            p,
            u_max,
        })
    }

    /// Same problem specified through a continuous discount rate λ ≥ 0.
    pub fn with_rate(
        target: Vec<f64>,
        gamma: f64,
        lambda: f64,
        dt: f64,
        p: f64,
        u_max: f64,
    ) -> Result<Self> {
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(Error::input("discount rate must be nonnegative"));
        }
        Self::new(target, gamma, (-lambda * dt).exp(), dt, p, u_max)
    }

    /// Continuous discount rate recovered from the per-step factor.
    pub fn rate(&self) -> f64 {
        -self.beta.ln() / self.dt
    }

    pub fn dim(&self) -> usize {
        self.target.len()
    }
}

/// One first-order step of the pair dynamics with step `dt` and interaction
/// strength `dt/2`:
///
/// ```text
/// x_i¹ = x_i + (dt/2)[ H(x_i−x_j)(1−Θi)(1−Θj)
///                      + Σ_ℓ G^ℓ(x_i−x_j)·u_{j,ℓ}·(1−Θi)Θj + u_i·Θi ]
/// ```
///
/// and symmetrically for `x_j`. Mean-mode indicators replace the products
/// by their Bernoulli expectations; bit-mode reproduces the sampled
/// collision map exactly.
pub fn discrete_binary_step(
    pair: &BinaryPair,
    u_i: &[f64],
    u_j: &[f64],
    dt: f64,
    kernels: &KernelSet,
) -> Result<BinaryPair> {
    let d = pair.dim();
    if u_i.len() != d || u_j.len() != d || kernels.dim() != d {
        return Err(Error::input("pair step dimension mismatch"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::input("time step must be positive"));
    }
    let a = dt / 2.0;
    let (qi, qj) = (pair.theta_i.weight(), pair.theta_j.weight());

    let disp_i = weighted_displacement(
        (1.0 - qi) * (1.0 - qj),
        (1.0 - qi) * qj,
        qi,
        &pair.xi,
        &pair.xj,
        u_i,
        u_j,
        kernels,
    )?;
    let disp_j = weighted_displacement(
        (1.0 - qj) * (1.0 - qi),
        (1.0 - qj) * qi,
        qj,
        &pair.xj,
        &pair.xi,
        u_j,
        u_i,
        kernels,
    )?;
    let mut xi = pair.xi.clone();
    geom::axpy(&mut xi, a, &disp_i);
    let mut xj = pair.xj.clone();
    geom::axpy(&mut xj, a, &disp_j);
    Ok(BinaryPair {
        xi,
        xj,
        theta_i: pair.theta_i,
        theta_j: pair.theta_j,
    })
}

/// Jacobian of the stacked post-step state `[x_i¹; x_j¹]` with respect to
/// the stacked control `[u_i; u_j]`, without the `dt/2` factor:
///
/// ```text
/// B = [ qi·I            (1−qi)qj·𝔾_i ]      𝔾 columns: G^ℓ at the
///     [ (1−qj)qi·𝔾_j    qj·I         ]      respective displacement
/// ```
fn control_matrix(
    xi: &[f64],
    xj: &[f64],
    qi: f64,
    qj: f64,
    kernels: &KernelSet,
) -> Result<Vec<Vec<f64>>> {
    let d = xi.len();
    let mut b = geom::mat_zeros(2 * d, 2 * d);
    for r in 0..d {
        b[r][r] = qi;
        b[d + r][d + r] = qj;
    }
    let (w_ij, w_ji) = ((1.0 - qi) * qj, (1.0 - qj) * qi);
    if w_ij != 0.0 || w_ji != 0.0 {
        let xi_ij = geom::sub(xi, xj);
        let xi_ji = geom::sub(xj, xi);
        for (ell, spec) in kernels.g.iter().enumerate() {
            let g_ij = spec.eval_g(ell + 1, &xi_ij)?;
            let g_ji = spec.eval_g(ell + 1, &xi_ji)?;
            for r in 0..d {
                b[r][d + ell] = w_ij * g_ij[r];
                b[d + r][ell] = w_ji * g_ji[r];
            }
        }
    }
    Ok(b)
}

/// Stationarity system `D u = C` of the one-step objective after
/// substituting the affine control-to-state map of `discrete_binary_step`:
/// with `A = (dt/2)·B` and `r` the zero-control tracking residual,
/// `D = β·AᵀA + 2γ·I` and `C = β·Aᵀr`. `D` is symmetric with every
/// eigenvalue at least `2γ`.
pub fn assemble_instantaneous_system(
    pair: &BinaryPair,
    prob: &InstantaneousProblem,
    kernels: &KernelSet,
) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let d = pair.dim();
    if prob.dim() != d || kernels.dim() != d {
        return Err(Error::input("pair system dimension mismatch"));
    }
    let a = prob.dt / 2.0;
    let (qi, qj) = (pair.theta_i.weight(), pair.theta_j.weight());

    // residual X̄₂ − X⁰ − a·(uncontrolled branch)
    let w_h = (1.0 - qi) * (1.0 - qj);
    let mut r = vec![0.0; 2 * d];
    for c in 0..d {
        r[c] = prob.target[c] - pair.xi[c];
        r[d + c] = prob.target[c] - pair.xj[c];
    }
    if w_h != 0.0 {
        let h_ij = kernels.h.eval_h(&geom::sub(&pair.xi, &pair.xj))?;
        let h_ji = kernels.h.eval_h(&geom::sub(&pair.xj, &pair.xi))?;
        for c in 0..d {
            r[c] -= a * w_h * h_ij[c];
            r[d + c] -= a * w_h * h_ji[c];
        }
    }

    let b = control_matrix(&pair.xi, &pair.xj, qi, qj, kernels)?;
    let n = 2 * d;
    let mut d_mat = geom::mat_zeros(n, n);
    let scale = prob.beta * a * a;
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += b[k][row] * b[k][col];
            }
            d_mat[row][col] = scale * acc;
        }
        d_mat[row][row] += 2.0 * prob.gamma;
    }
    let mut c_vec = vec![0.0; n];
    geom::add_mat_t_vec(&mut c_vec, prob.beta * a, &b, &r);
    Ok((d_mat, c_vec))
}

fn split_and_project(u: Vec<f64>, d: usize, u_max: f64) -> (Vec<f64>, Vec<f64>) {
    let mut u_i = u[..d].to_vec();
    let mut u_j = u[d..].to_vec();
    project_ball(&mut u_i, u_max);
    project_ball(&mut u_j, u_max);
    (u_i, u_j)
}

/// Feedback law of the pair: solve `D u = C` by Cholesky factorization and
/// project each agent's block onto the admissible ball. A conditioning
/// estimate above 1e12 is reported as a numerical error rather than solved
/// through.
pub fn solve_feedback(
    pair: &BinaryPair,
    prob: &InstantaneousProblem,
    kernels: &KernelSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (d_mat, c_vec) = assemble_instantaneous_system(pair, prob, kernels)?;
    // rows bound the top eigenvalue, 2γ bounds the bottom one exactly
    let row_max = d_mat
        .iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0f64, f64::max);
    if row_max / (2.0 * prob.gamma) > 1e12 {
        return Err(Error::numerical(
            "instantaneous control system too ill-conditioned to solve",
        ));
    }
    let l = geom::cholesky(&d_mat)
        .ok_or_else(|| Error::numerical("instantaneous control system lost definiteness"))?;
    let u = geom::cholesky_solve(&l, &c_vec);
    Ok(split_and_project(u, pair.dim(), prob.u_max))
}

/// Strength-free limit of the feedback law: as the step shrinks, the
/// per-unit-strength solution of `D u = C` tends to `(β/(2γ))·Bᵀ(X̄₂−X⁰)`.
/// The returned pair is that limit projected onto the admissible ball; it
/// depends only on the current states, so it can drive collision runs whose
/// strength is swept independently.
pub fn frozen_feedback(
    xi: &[f64],
    xj: &[f64],
    prob: &InstantaneousProblem,
    kernels: &KernelSet,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let d = xi.len();
    if xj.len() != d || prob.dim() != d || kernels.dim() != d {
        return Err(Error::input("pair system dimension mismatch"));
    }
    let b = control_matrix(xi, xj, prob.p, prob.p, kernels)?;
    let mut r = vec![0.0; 2 * d];
    for c in 0..d {
        r[c] = prob.target[c] - xi[c];
        r[d + c] = prob.target[c] - xj[c];
    }
    let mut u = vec![0.0; 2 * d];
    geom::add_mat_t_vec(&mut u, prob.beta / (2.0 * prob.gamma), &b, &r);
    Ok(split_and_project(u, d, prob.u_max))
}

/// Crowd run under the per-collision feedback law, sampled per node of the
/// step grid.
#[derive(Debug, Clone)]
pub struct FeedbackRun {
    pub times: Vec<f64>,
    pub measures: Vec<WeightedMeasure>,
    /// Mean squared distance to the target at each node.
    pub state_costs: Vec<f64>,
    /// γ-weighted mean control energy applied on the step starting at each
    /// node (zero at the final node).
    pub control_costs: Vec<f64>,
    /// Running discounted cost including the step that starts at the node.
    pub cumulative_discounted: Vec<f64>,
    /// Discounted, γ-free control energy of the whole run.
    pub control_energy: f64,
    pub realized_cost: f64,
}

/// Run the crowd to `t_end` with every agent colliding once per step
/// (disjoint random pairs, rate one): each pair solves its mean-mode
/// feedback, draws its two control bits, and takes the sampled pair step.
/// The realized cost discounts the per-node mean tracking error plus
/// γ-weighted control energy by `β^k` and integrates with weight `dt`.
pub fn feedback_boltzmann_run(
    ens0: &KineticEnsemble,
    prob: &InstantaneousProblem,
    kernels: &KernelSet,
    t_end: f64,
    seed: u64,
) -> Result<FeedbackRun> {
    let d = ens0.dim();
    if prob.dim() != d || kernels.dim() != d {
        return Err(Error::input("feedback run dimension mismatch"));
    }
    if ens0.p != prob.p {
        return Err(Error::input(
            "ensemble and problem disagree on the control probability",
        ));
    }
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::input("horizon must be positive"));
    }
    let dt = prob.dt;
    let steps = grid_index(t_end, dt, "horizon")?;
    if steps == 0 {
        return Err(Error::input("horizon shorter than one step"));
    }

    let m = ens0.len();
    let mut samples = ens0.samples.clone();
    let mut times = Vec::with_capacity(steps + 1);
    let mut measures = Vec::with_capacity(steps + 1);
    let mut state_costs = Vec::with_capacity(steps + 1);
    let mut control_costs = Vec::with_capacity(steps + 1);
    let mut cumulative = Vec::with_capacity(steps + 1);
    let mut running = 0.0f64;
    let mut energy = 0.0f64;

    let state_cost = |cloud: &[Vec<f64>]| -> f64 {
        cloud
            .iter()
            .map(|x| {
                let diff = geom::sub(&prob.target, x);
                geom::dot(&diff, &diff)
            })
            .sum::<f64>()
            / m as f64
    };

    for n in 0..=steps {
        times.push(n as f64 * dt);
        measures.push(empirical_from_followers(&samples)?);
        state_costs.push(state_cost(&samples));
        if n == steps {
            control_costs.push(0.0);
            cumulative.push(running);
            break;
        }

        let order = shuffled_indices(m, seed, n as u64);
        let pairs: Vec<(usize, usize)> = (0..m / 2)
            .map(|k| (order[2 * k], order[2 * k + 1]))
            .collect();
        let moves = pairs
            .par_iter()
            .enumerate()
            .map(|(pair_idx, &(i, j))| {
                let pair = BinaryPair::new(
                    samples[i].clone(),
                    samples[j].clone(),
                    Theta::Mean(prob.p),
                    Theta::Mean(prob.p),
                )?;
                let (u_i, u_j) = solve_feedback(&pair, prob, kernels)?;
                let mut rng = stream(seed, Purpose::Collide, n as u64, pair_idx as u64);
                let theta_i = rng.gen::<f64>() < prob.p;
                let theta_j = rng.gen::<f64>() < prob.p;
                let sampled = BinaryPair {
                    xi: pair.xi,
                    xj: pair.xj,
                    theta_i: Theta::Bit(theta_i),
                    theta_j: Theta::Bit(theta_j),
                };
                let next = discrete_binary_step(&sampled, &u_i, &u_j, dt, kernels)?;
                let used = geom::dot(&u_i, &u_i) + geom::dot(&u_j, &u_j);
                Ok((i, next.xi, j, next.xj, used))
            })
            .collect::<Result<Vec<_>>>()?;

        let mut used_energy = 0.0f64;
        for (i, xi, j, xj, used) in moves {
            samples[i] = xi;
            samples[j] = xj;
            used_energy += used;
        }
        used_energy /= m as f64;

        let discount = prob.beta.powi(n as i32);
        let node_cost = state_costs[n] + prob.gamma * used_energy;
        running += discount * node_cost * dt;
        energy += discount * used_energy * dt;
        control_costs.push(prob.gamma * used_energy);
        cumulative.push(running);
    }

    Ok(FeedbackRun {
        times,
        measures,
        state_costs,
        control_costs,
        cumulative_discounted: cumulative,
        control_energy: energy,
        realized_cost: running,
    })
}
