//! Python bindings: thin wrappers over the core crate that accept plain
//! lists and strings and return plain lists and dicts. Invalid input
//! surfaces as ValueError with the library's own message.

use leadfield::binaryctrl::{
    feedback_boltzmann_run, solve_feedback as pair_feedback, BinaryPair, InstantaneousProblem,
    Theta,
};
use leadfield::gamma_limit::{gamma_sweep as core_gamma_sweep, GammaProblem};
use leadfield::kernels::{certify_growth as core_certify, KernelSpec, RadialTable};
use leadfield::kinetic::{
    binary_interaction as core_binary, limit_kernel as core_limit,
    quasi_invariant_sweep as core_quasi, KineticControls, KineticEnsemble,
};
use leadfield::meanfield::{
    convergence_study as core_study, solve_meanfield as core_meanfield, InitialCloud,
    StudyControls,
};
use leadfield::measures::{wasserstein1 as core_w1, MeasureKind, WeightedMeasure};
use leadfield::microdynamics::{integrate, ControlSignal, KernelSet, Method, SwarmState};
use leadfield::optctrl::{optimize as core_optimize, CostSpec, OptimizeOpts, Target};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: leadfield::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Kernel grammar shared with the command line: `zero`, `constant[:c]`,
/// `attraction_repulsion[:a]`, `stokes_like[:c]`, or an inline table
/// `table:r0,v0;r1,v1;...` (must start at `0,0`).
fn parse_kernel(d: usize, spec: &str) -> PyResult<KernelSpec> {
    let (name, arg) = match spec.split_once(':') {
        Some((n, a)) => (n.trim(), Some(a.trim())),
        None => (spec.trim(), None),
    };
    let amount = || -> PyResult<f64> {
        match arg {
            None => Ok(1.0),
            Some(a) => a
                .parse()
                .map_err(|_| PyValueError::new_err(format!("bad kernel amount in {spec:?}"))),
        }
    };
    match name {
        "zero" => Ok(KernelSpec::zero(d)),
        "constant" => Ok(KernelSpec::constant(d, amount()?)),
        "attraction_repulsion" => Ok(KernelSpec::attraction_repulsion(d, amount()?)),
        "stokes_like" => Ok(KernelSpec::stokes_like(d, amount()?)),
        "table" => {
            let body = arg.ok_or_else(|| PyValueError::new_err("table kernel needs rows"))?;
            let mut radii = Vec::new();
            let mut values = Vec::new();
            for row in body.split(';') {
                let (r, v) = row
                    .split_once(',')
                    .ok_or_else(|| PyValueError::new_err(format!("bad table row {row:?}")))?;
                radii.push(r.trim().parse().map_err(|_| {
                    PyValueError::new_err(format!("bad table radius {r:?}"))
                })?);
                values.push(v.trim().parse().map_err(|_| {
                    PyValueError::new_err(format!("bad table value {v:?}"))
                })?);
            }
            Ok(KernelSpec::custom_table(d, RadialTable::new(radii, values).map_err(err)?))
        }
        _ => Err(PyValueError::new_err(format!("unknown kernel {name:?}"))),
    }
}

fn build_kernels(d: usize, kernel_h: &str, kernel_g: Vec<String>) -> PyResult<KernelSet> {
    let h = parse_kernel(d, kernel_h)?;
    let g = if kernel_g.len() == 1 {
        vec![parse_kernel(d, &kernel_g[0])?; d]
    } else {
        kernel_g
            .iter()
            .map(|s| parse_kernel(d, s))
            .collect::<PyResult<Vec<_>>>()?
    };
    KernelSet::new(h, g).map_err(err)
}

fn build_control(
    values: Vec<Vec<Vec<f64>>>,
    breakpoints: Option<Vec<f64>>,
    t_end: f64,
    u_max: f64,
) -> PyResult<ControlSignal> {
    let breakpoints = breakpoints.unwrap_or_else(|| {
        let pieces = values.len();
        (0..=pieces).map(|k| t_end * k as f64 / pieces as f64).collect()
    });
    ControlSignal::new(breakpoints, values, u_max).map_err(err)
}

/// Uniform draw of `n` points from the ball `center + radius·B`; the same
/// cloud the native solvers resolve for a `(seed, center, radius)` triple.
#[pyfunction]
fn sample_cloud(seed: u64, center: Vec<f64>, radius: f64, n: usize) -> PyResult<Vec<Vec<f64>>> {
    InitialCloud::Sampled { seed, center, radius }.resolve(n).map_err(err)
}

/// Exact 1-Wasserstein distance between two weighted point clouds.
#[pyfunction]
#[pyo3(signature = (xs, ys, x_weights = None, y_weights = None))]
fn wasserstein1(
    xs: Vec<Vec<f64>>,
    ys: Vec<Vec<f64>>,
    x_weights: Option<Vec<f64>>,
    y_weights: Option<Vec<f64>>,
) -> PyResult<f64> {
    let uniform = |n: usize| vec![1.0 / n as f64; n];
    let mu = WeightedMeasure::new(
        xs.clone(),
        x_weights.unwrap_or_else(|| uniform(xs.len())),
        MeasureKind::Probability,
    )
    .map_err(err)?;
    let nu = WeightedMeasure::new(
        ys.clone(),
        y_weights.unwrap_or_else(|| uniform(ys.len())),
        MeasureKind::Probability,
    )
    .map_err(err)?;
    core_w1(&mu, &nu).map_err(err)
}

/// Forward-Euler run of the leader-follower system. Returns a dict with
/// `times`, `leaders` ([t][k][coord]) and `followers` ([t][i][coord]).
#[pyfunction]
#[pyo3(signature = (leaders, followers, control, kernel_h, kernel_g, t_end, dt, breakpoints = None, u_max = 1e12))]
#[allow(clippy::too_many_arguments)]
fn simulate(
    py: Python<'_>,
    leaders: Vec<Vec<f64>>,
    followers: Vec<Vec<f64>>,
    control: Vec<Vec<Vec<f64>>>,
    kernel_h: &str,
    kernel_g: Vec<String>,
    t_end: f64,
    dt: f64,
    breakpoints: Option<Vec<f64>>,
    u_max: f64,
) -> PyResult<PyObject> {
    let d = followers.first().map_or(0, Vec::len);
    let kernels = build_kernels(d, kernel_h, kernel_g)?;
    let signal = build_control(control, breakpoints, t_end, u_max)?;
    let state = SwarmState::new(leaders, followers, 0.0).map_err(err)?;
    let traj = integrate(&state, &signal, &kernels, t_end, dt, Method::Euler).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("times", traj.states.iter().map(|s| s.time).collect::<Vec<_>>())?;
    out.set_item(
        "leaders",
        traj.states.iter().map(|s| s.leaders.clone()).collect::<Vec<_>>(),
    )?;
    out.set_item(
        "followers",
        traj.states.iter().map(|s| s.followers.clone()).collect::<Vec<_>>(),
    )?;
    Ok(out.into())
}

/// Crowd-limit run from explicit atoms. Returns `times`, `leaders`
/// ([t][k][coord]), `atoms` ([t][i][coord]) and the constant `weights`.
#[pyfunction]
#[pyo3(signature = (atoms, leaders, control, kernel_h, kernel_g, t_end, dt, breakpoints = None, u_max = 1e12))]
#[allow(clippy::too_many_arguments)]
fn solve_meanfield(
    py: Python<'_>,
    atoms: Vec<Vec<f64>>,
    leaders: Vec<Vec<f64>>,
    control: Vec<Vec<Vec<f64>>>,
    kernel_h: &str,
    kernel_g: Vec<String>,
    t_end: f64,
    dt: f64,
    breakpoints: Option<Vec<f64>>,
    u_max: f64,
) -> PyResult<PyObject> {
    let d = atoms.first().map_or(0, Vec::len);
    let n = atoms.len();
    let kernels = build_kernels(d, kernel_h, kernel_g)?;
    let signal = build_control(control, breakpoints, t_end, u_max)?;
    let mu0 = WeightedMeasure::new(atoms, vec![1.0 / n as f64; n], MeasureKind::Probability)
        .map_err(err)?;
    let mf = core_meanfield(
        &InitialCloud::Atoms(mu0),
        &leaders,
        &signal,
        &kernels,
        t_end,
        dt,
        n,
    )
    .map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("times", mf.times)?;
    out.set_item("leaders", mf.leader_paths)?;
    out.set_item(
        "atoms",
        mf.measures.iter().map(|mu| mu.atoms.clone()).collect::<Vec<_>>(),
    )?;
    out.set_item("weights", mf.measures[0].weights.clone())?;
    Ok(out.into())
}

/// Crowd-refinement study against a nested reference run. Returns one dict
/// per crowd size with `n`, `max_w1` and `max_leader_err`.
#[pyfunction]
#[pyo3(signature = (seed, center, radius, leaders, control, kernel_h, kernel_g, t_end, dt, n_list, reference_n, u_max = 1e12))]
#[allow(clippy::too_many_arguments)]
fn convergence_study(
    py: Python<'_>,
    seed: u64,
    center: Vec<f64>,
    radius: f64,
    leaders: Vec<Vec<f64>>,
    control: Vec<Vec<Vec<f64>>>,
    kernel_h: &str,
    kernel_g: Vec<String>,
    t_end: f64,
    dt: f64,
    n_list: Vec<usize>,
    reference_n: usize,
    u_max: f64,
) -> PyResult<PyObject> {
    let d = center.len();
    let kernels = build_kernels(d, kernel_h, kernel_g)?;
    let signal = build_control(control, None, t_end, u_max)?;
    let rows = core_study(
        &InitialCloud::Sampled { seed, center, radius },
        &leaders,
        &StudyControls::Fixed(signal),
        &kernels,
        t_end,
        dt,
        &n_list,
        reference_n,
    )
    .map_err(err)?;
    let out: Vec<PyObject> = rows
        .iter()
        .map(|r| {
            let row = PyDict::new_bound(py);
            row.set_item("n", r.n)?;
            row.set_item("max_w1", r.max_w1)?;
            row.set_item("max_leader_err", r.max_leader_err)?;
            Ok(row.into())
        })
        .collect::<PyResult<_>>()?;
    Ok(out.into_py(py))
}

/// Projected-gradient solve of the piecewise-constant tracking problem.
/// Returns `control`, `breakpoints`, `cost`, `iterations`,
/// `optimality_residual` and `converged`.
#[pyfunction]
#[pyo3(signature = (leaders, followers, target, kernel_h, kernel_g, t_end, dt, control_weight = 1.0, state_weight = 1.0, pieces = 1, u_max = 1.0, step = 0.5, tol = 1e-6, max_iter = 500))]
#[allow(clippy::too_many_arguments)]
fn optimize_control(
    py: Python<'_>,
    leaders: Vec<Vec<f64>>,
    followers: Vec<Vec<f64>>,
    target: Vec<f64>,
    kernel_h: &str,
    kernel_g: Vec<String>,
    t_end: f64,
    dt: f64,
    control_weight: f64,
    state_weight: f64,
    pieces: usize,
    u_max: f64,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyObject> {
    let d = followers.first().map_or(0, Vec::len);
    let kernels = build_kernels(d, kernel_h, kernel_g)?;
    let state = SwarmState::new(leaders, followers, 0.0).map_err(err)?;
    let cost = CostSpec {
        target: Target::Shared(target),
        control_weight,
        state_weight,
    };
    let opts = OptimizeOpts { step, max_iter, tol, u_max, pieces, init: None };
    let res = core_optimize(&state, &cost, &kernels, t_end, dt, &opts).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("control", res.control.values.clone())?;
    out.set_item("breakpoints", res.control.breakpoints.clone())?;
    out.set_item("cost", res.cost)?;
    out.set_item("iterations", res.iterations)?;
    out.set_item("optimality_residual", res.optimality_residual)?;
    out.set_item("converged", res.converged)?;
    Ok(out.into())
}

/// Crowd-size sweep of optimal tracking problems against the largest run.
/// Returns one dict per size with the cost and control-gap columns.
#[pyfunction]
#[pyo3(signature = (seed, center, radius, leaders, target, kernel_h, kernel_g, t_end, dt, n_list, control_weight = 1.0, state_weight = 1.0, pieces = 2, u_max = 2.0, step = 0.4, tol = 1e-6, max_iter = 2000))]
#[allow(clippy::too_many_arguments)]
fn gamma_sweep(
    py: Python<'_>,
    seed: u64,
    center: Vec<f64>,
    radius: f64,
    leaders: Vec<Vec<f64>>,
    target: Vec<f64>,
    kernel_h: &str,
    kernel_g: Vec<String>,
    t_end: f64,
    dt: f64,
    n_list: Vec<usize>,
    control_weight: f64,
    state_weight: f64,
    pieces: usize,
    u_max: f64,
    step: f64,
    tol: f64,
    max_iter: usize,
) -> PyResult<PyObject> {
    let d = center.len();
    let problem = GammaProblem {
        mu0: InitialCloud::Sampled { seed, center, radius },
        y0: leaders,
        kernels: build_kernels(d, kernel_h, kernel_g)?,
        target: Target::Shared(target),
        control_weight,
        state_weight,
        t_end,
        dt,
        opts: OptimizeOpts { step, max_iter, tol, u_max, pieces, init: None },
    };
    let report = core_gamma_sweep(&problem, &n_list).map_err(err)?;
    let out: Vec<PyObject> = report
        .rows
        .iter()
        .map(|r| {
            let row = PyDict::new_bound(py);
            row.set_item("n", r.n)?;
            row.set_item("optimal_cost", r.optimal_cost)?;
            row.set_item("control_distance_to_largest", r.control_distance_to_largest)?;
            row.set_item("limit_cost_estimate", r.limit_cost_estimate)?;
            row.set_item("converged", r.converged)?;
            row.set_item("control", r.control.values.clone())?;
            Ok(row.into())
        })
        .collect::<PyResult<_>>()?;
    Ok(out.into_py(py))
}

/// Post-collision position of the first agent of a pair.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
fn binary_interaction(
    x: Vec<f64>,
    y: Vec<f64>,
    theta: bool,
    theta_star: bool,
    u: Vec<f64>,
    u_star: Vec<f64>,
    alpha: f64,
    kernel_h: &str,
    kernel_g: Vec<String>,
) -> PyResult<Vec<f64>> {
    let kernels = build_kernels(x.len(), kernel_h, kernel_g)?;
    core_binary(&x, &y, theta, theta_star, &u, &u_star, alpha, &kernels).map_err(err)
}

/// Expected per-collision drift once the control bits are averaged out.
#[pyfunction]
fn limit_kernel(
    x: Vec<f64>,
    y: Vec<f64>,
    u: Vec<f64>,
    u_star: Vec<f64>,
    p: f64,
    kernel_h: &str,
    kernel_g: Vec<String>,
) -> PyResult<Vec<f64>> {
    let kernels = build_kernels(x.len(), kernel_h, kernel_g)?;
    core_limit(&x, &y, &u, &u_star, p, &kernels).map_err(err)
}

/// Collision-strength sweep against the averaged-kernel run. Returns one
/// dict per (eps, seed) pair with the worst transport distance.
#[pyfunction]
#[pyo3(signature = (seed, center, radius, eps_list, m_samples, p, u_alpha, u_star_alpha, kernel_h, kernel_g, t_end, seeds, u_max = 1e12))]
#[allow(clippy::too_many_arguments)]
fn quasi_invariant_sweep(
    py: Python<'_>,
    seed: u64,
    center: Vec<f64>,
    radius: f64,
    eps_list: Vec<f64>,
    m_samples: usize,
    p: f64,
    u_alpha: Vec<f64>,
    u_star_alpha: Vec<f64>,
    kernel_h: &str,
    kernel_g: Vec<String>,
    t_end: f64,
    seeds: Vec<u64>,
    u_max: f64,
) -> PyResult<PyObject> {
    let d = center.len();
    let kernels = build_kernels(d, kernel_h, kernel_g)?;
    let controls = KineticControls::new(u_alpha, u_star_alpha, u_max).map_err(err)?;
    let rows = core_quasi(
        &InitialCloud::Sampled { seed, center, radius },
        &eps_list,
        m_samples,
        p,
        &controls,
        &kernels,
        t_end,
        &seeds,
    )
    .map_err(err)?;
    let out: Vec<PyObject> = rows
        .iter()
        .map(|r| {
            let row = PyDict::new_bound(py);
            row.set_item("eps", r.eps)?;
            row.set_item("seed", r.seed)?;
            row.set_item("max_w1", r.max_w1)?;
            Ok(row.into())
        })
        .collect::<PyResult<_>>()?;
    Ok(out.into_py(py))
}

/// One-step feedback law of a pair in mean mode: both controls, given the
/// positions and the tracking parameters.
#[pyfunction]
#[pyo3(signature = (xi, xj, target, gamma, beta, dt, p, u_max, kernel_h, kernel_g))]
#[allow(clippy::too_many_arguments)]
fn solve_feedback(
    xi: Vec<f64>,
    xj: Vec<f64>,
    target: Vec<f64>,
    gamma: f64,
    beta: f64,
    dt: f64,
    p: f64,
    u_max: f64,
    kernel_h: &str,
    kernel_g: Vec<String>,
) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let kernels = build_kernels(xi.len(), kernel_h, kernel_g)?;
    let prob = InstantaneousProblem::new(target, gamma, beta, dt, p, u_max).map_err(err)?;
    let pair = BinaryPair::new(xi, xj, Theta::Mean(p), Theta::Mean(p)).map_err(err)?;
    pair_feedback(&pair, &prob, &kernels).map_err(err)
}

/// Closed-loop collision run under the pair feedback law. Returns `times`,
/// `state_costs`, `control_costs`, `realized_cost` and `control_energy`.
#[pyfunction]
#[pyo3(signature = (samples, target, gamma, beta, dt, p, u_max, kernel_h, kernel_g, t_end, seed))]
#[allow(clippy::too_many_arguments)]
fn feedback_run(
    py: Python<'_>,
    samples: Vec<Vec<f64>>,
    target: Vec<f64>,
    gamma: f64,
    beta: f64,
    dt: f64,
    p: f64,
    u_max: f64,
    kernel_h: &str,
    kernel_g: Vec<String>,
    t_end: f64,
    seed: u64,
) -> PyResult<PyObject> {
    let d = samples.first().map_or(0, Vec::len);
    let kernels = build_kernels(d, kernel_h, kernel_g)?;
    let prob = InstantaneousProblem::new(target, gamma, beta, dt, p, u_max).map_err(err)?;
    let ens = KineticEnsemble::new(samples, p, seed).map_err(err)?;
    let run = feedback_boltzmann_run(&ens, &prob, &kernels, t_end, seed).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("times", run.times)?;
    out.set_item("state_costs", run.state_costs)?;
    out.set_item("control_costs", run.control_costs)?;
    out.set_item("realized_cost", run.realized_cost)?;
    out.set_item("control_energy", run.control_energy)?;
    Ok(out.into())
}

/// Monte Carlo growth certificate for a kernel: `constant`, `max_ratio`,
/// `lipschitz_estimate` and the boolean `pass`.
#[pyfunction]
#[pyo3(signature = (kernel, d, radius = 10.0, n_samples = 256, seed = 0))]
fn certify_kernel(
    py: Python<'_>,
    kernel: &str,
    d: usize,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> PyResult<PyObject> {
    let spec = parse_kernel(d, kernel)?;
    let cert = core_certify(&spec, radius, n_samples, seed).map_err(err)?;
    let out = PyDict::new_bound(py);
    out.set_item("constant", cert.constant)?;
    out.set_item("max_ratio", cert.max_ratio)?;
    out.set_item("lipschitz_estimate", cert.lipschitz_estimate)?;
    out.set_item("pass", cert.pass())?;
    Ok(out.into())
}

#[pymodule]
fn leadfield_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sample_cloud, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein1, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(solve_meanfield, m)?)?;
    m.add_function(wrap_pyfunction!(convergence_study, m)?)?;
    m.add_function(wrap_pyfunction!(optimize_control, m)?)?;
    m.add_function(wrap_pyfunction!(gamma_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(binary_interaction, m)?)?;
    m.add_function(wrap_pyfunction!(limit_kernel, m)?)?;
    m.add_function(wrap_pyfunction!(quasi_invariant_sweep, m)?)?;
    m.add_function(wrap_pyfunction!(solve_feedback, m)?)?;
    m.add_function(wrap_pyfunction!(feedback_run, m)?)?;
    m.add_function(wrap_pyfunction!(certify_kernel, m)?)?;
    Ok(())
}
