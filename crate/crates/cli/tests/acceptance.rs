//! Acceptance gate: ten independent checks over the public API and the
//! binary, one test per criterion, each printing its own pass line. The
//! numerical oracles here are deliberately reimplemented (finite
//! differences, dense grid search, explicit expectations) rather than
//! borrowed from the library internals.

use leadfield::binaryctrl::{
    assemble_instantaneous_system, discrete_binary_step, feedback_boltzmann_run, solve_feedback,
    BinaryPair, InstantaneousProblem, Theta,
};
use leadfield::gamma_limit::{gamma_sweep, GammaProblem};
use leadfield::kernels::{KernelSpec, RadialTable};
use leadfield::kinetic::{
    binary_interaction, boltzmann_step, limit_kernel, quasi_invariant_sweep, KineticControls,
    KineticEnsemble,
};
use leadfield::meanfield::{
    convergence_study, solve_meanfield, stability_experiment, InitialCloud, StudyControls,
};
use leadfield::measures::wasserstein1;
use leadfield::microdynamics::{integrate, ControlSignal, KernelSet, Method, SwarmState};
use leadfield::optctrl::{
    control_gradient, evaluate_cost, optimality_residual, solve_adjoint, CostSpec, OptimizeOpts,
    Target,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

// The runtime budgets below time each criterion in isolation; without the
// gate the harness interleaves them on one rayon pool and every clock
// measures the whole suite.
static GATE: Mutex<()> = Mutex::new(());

fn gate() -> MutexGuard<'static, ()> {
    GATE.lock().unwrap_or_else(|e| e.into_inner())
}

fn report(n: usize, label: &str, start: Instant) {
    println!(
        "criterion {n:02} ({label}): PASS [{:.1}s]",
        start.elapsed().as_secs_f64()
    );
}

fn median(mut vals: Vec<f64>) -> f64 {
    vals.sort_by(|a, b| a.total_cmp(b));
    vals[vals.len() / 2]
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// K(xi) = -xi on the working ball, tabulated.
fn linear_pull(d: usize, reach: f64) -> KernelSpec {
    KernelSpec::custom_table(d, RadialTable::new(vec![0.0, reach], vec![0.0, -reach]).unwrap())
}

// --------------------------------------------------------- criterion 1 --

fn gradient_instance(seed: u64) -> (SwarmState, ControlSignal, CostSpec, KernelSet) {
    let mut rng = ChaCha8Rng::seed_from_u64(900 + seed);
    let s = seed as usize;
    let d = 1 + s % 2;
    let m = 1 + (s / 2) % 2;
    let n = 2 + s % 4;
    let h = if s % 2 == 0 {
        KernelSpec::attraction_repulsion(d, 0.8)
    } else {
        KernelSpec::stokes_like(d, 0.6)
    };
    let g = (0..d)
        .map(|ell| {
            if ell % 2 == 0 {
                KernelSpec::constant(d, 0.7)
            } else {
                KernelSpec::stokes_like(d, 0.5)
            }
        })
        .collect();
    let kernels = KernelSet::new(h, g).unwrap();
    let mut pt = |scale: f64| -> Vec<f64> {
        (0..d).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
    };
    let leaders: Vec<Vec<f64>> = (0..m).map(|_| pt(1.0)).collect();
    let followers: Vec<Vec<f64>> = (0..n).map(|_| pt(1.0)).collect();
    let values: Vec<Vec<Vec<f64>>> = (0..2).map(|_| (0..m).map(|_| pt(0.8)).collect()).collect();
    let control = ControlSignal::new(vec![0.0, 0.5, 1.0], values, 2.0).unwrap();
    let state = SwarmState::new(leaders, followers, 0.0).unwrap();
    let cost = CostSpec {
        target: Target::Shared(pt(0.5)),
        control_weight: 0.3,
        state_weight: 1.0,
    };
    (state, control, cost, kernels)
}

#[test]
fn criterion_01_adjoint_gradient_matches_central_differences() {
    let _serial = gate();
    let start = Instant::now();
    let (t_end, dt) = (1.0, 1e-2);
    for seed in 0..10u64 {
        let (state, control, cost, kernels) = gradient_instance(seed);
        let traj = integrate(&state, &control, &kernels, t_end, dt, Method::Euler).unwrap();
        let adjoint = solve_adjoint(&traj, &control, &cost, &kernels).unwrap();
        let grad = control_gradient(&traj, &adjoint, &control, &cost, &kernels).unwrap();

        let mut num = 0.0f64;
        let mut den = 0.0f64;
        for p in 0..control.values.len() {
            for k in 0..control.num_leaders() {
                for ell in 0..control.dim() {
                    let h = 1e-6 * (1.0 + control.values[p][k][ell].abs());
                    let bump = |delta: f64| -> f64 {
                        let mut vals = control.values.clone();
                        vals[p][k][ell] += delta;
                        let sig = ControlSignal::new(
                            control.breakpoints.clone(),
                            vals,
                            control.u_max,
                        )
                        .unwrap();
                        evaluate_cost(&state, &sig, &cost, &kernels, t_end, dt).unwrap()
                    };
                    let fd = (bump(h) - bump(-h)) / (2.0 * h);
                    num += (grad[p][k][ell] - fd) * (grad[p][k][ell] - fd);
                    den += fd * fd;
                }
            }
        }
        let rel = num.sqrt() / den.sqrt().max(1e-12);
        assert!(rel <= 1e-5, "seed {seed}: relative gradient error {rel:e}");
    }
    assert!(start.elapsed().as_secs() < 60, "budget exceeded");
    report(1, "adjoint gradient vs finite differences", start);
}

// --------------------------------------------------- criteria 2 and 3 --

fn refinement_fixture() -> (InitialCloud, Vec<Vec<f64>>, ControlSignal, KernelSet) {
    let cloud = InitialCloud::Sampled {
        seed: 11,
        center: vec![0.0],
        radius: 1.0,
    };
    let y0 = vec![vec![1.5]];
    let control = ControlSignal::new(vec![0.0, 1.0], vec![vec![vec![0.3]]], 1.0).unwrap();
    let kernels = KernelSet::new(
        KernelSpec::attraction_repulsion(1, 1.0),
        vec![KernelSpec::constant(1, 1.0)],
    )
    .unwrap();
    (cloud, y0, control, kernels)
}

#[test]
fn criterion_02_crowd_refinement_converges_to_the_reference() {
    let _serial = gate();
    let start = Instant::now();
    let (cloud, y0, control, kernels) = refinement_fixture();
    let rows = convergence_study(
        &cloud,
        &y0,
        &StudyControls::Fixed(control),
        &kernels,
        1.0,
        0.02,
        &[50, 100, 200, 400],
        1600,
    )
    .unwrap();
    let errs: Vec<f64> = rows.iter().map(|r| r.max_w1).collect();
    assert!(
        errs.windows(2).all(|w| w[1] < w[0]),
        "transport error must strictly decrease: {errs:?}"
    );
    let ratio = errs.last().unwrap() / errs[0];
    assert!(ratio <= 0.5, "final/first = {ratio}, errors {errs:?}");
    assert!(start.elapsed().as_secs() < 120, "budget exceeded");
    report(2, "crowd refinement error decreases", start);
}

#[test]
fn criterion_03_perturbations_stay_under_the_certified_bound() {
    let _serial = gate();
    let start = Instant::now();
    let (cloud, y0, control, kernels) = refinement_fixture();
    let mut ratios = Vec::new();
    for &delta in &[1e-2, 1e-3] {
        let rep = stability_experiment(
            &cloud, &y0, &control, &kernels, 1.0, 0.02, 400, delta, delta, 7,
        )
        .unwrap();
        assert!(
            rep.ratio <= rep.bound,
            "delta {delta}: amplification {} exceeds bound {}",
            rep.ratio,
            rep.bound
        );
        ratios.push(rep.ratio);
    }
    let spread = (ratios[0] - ratios[1]).abs() / ratios[0].max(ratios[1]);
    assert!(
        spread <= 0.10,
        "amplification should be scale-independent: {ratios:?}"
    );
    report(3, "perturbation growth within certified bound", start);
}

// --------------------------------------------------------- criterion 4 --

#[test]
fn criterion_04_optimal_costs_and_controls_track_the_largest_crowd() {
    let _serial = gate();
    let start = Instant::now();
    let tol = 1e-6;
    let problem = GammaProblem {
        mu0: InitialCloud::Sampled {
            seed: 48,
            center: vec![0.8],
            radius: 0.5,
        },
        y0: vec![vec![0.0]],
        kernels: KernelSet::new(KernelSpec::zero(1), vec![KernelSpec::constant(1, 1.0)]).unwrap(),
        target: Target::Shared(vec![0.0]),
        control_weight: 1.0,
        state_weight: 1.0,
        t_end: 1.0,
        dt: 0.02,
        opts: OptimizeOpts {
            step: 0.4,
            max_iter: 4000,
            tol,
            u_max: 2.0,
            pieces: 2,
            init: None,
        },
    };
    let n_list = [25usize, 50, 100];
    let report_rows = gamma_sweep(&problem, &n_list).unwrap().rows;

    for row in &report_rows {
        assert!(row.converged, "N = {} did not converge", row.n);
        let atoms = problem.mu0.resolve(row.n).unwrap();
        let state = SwarmState::new(problem.y0.clone(), atoms, 0.0).unwrap();
        let cost = CostSpec {
            target: problem.target.clone(),
            control_weight: problem.control_weight,
            state_weight: problem.state_weight / row.n as f64,
        };
        let residual = optimality_residual(
            &state,
            &row.control,
            &cost,
            &problem.kernels,
            problem.t_end,
            problem.dt,
            problem.opts.step,
        )
        .unwrap();
        assert!(
            residual <= tol,
            "N = {}: optimality residual {residual:e} above {tol:e}",
            row.n
        );
    }

    let j_ref = report_rows.last().unwrap().optimal_cost;
    let cost_gaps: Vec<f64> = report_rows[..2]
        .iter()
        .map(|r| (r.optimal_cost - j_ref).abs())
        .collect();
    assert!(
        cost_gaps[1] < cost_gaps[0],
        "cost gaps must shrink: {cost_gaps:?}"
    );
    let ctrl_gaps: Vec<f64> = report_rows
        .iter()
        .map(|r| r.control_distance_to_largest)
        .collect();
    assert!(
        ctrl_gaps[1] < ctrl_gaps[0] && ctrl_gaps[2] == 0.0,
        "control gaps must shrink: {ctrl_gaps:?}"
    );
    assert!(start.elapsed().as_secs() < 300, "budget exceeded");
    report(4, "optimal controls track the largest crowd", start);
}

// --------------------------------------------------------- criterion 5 --

#[test]
fn criterion_05_collision_expectation_equals_the_averaged_kernel() {
    let _serial = gate();
    let start = Instant::now();
    let ps = [0.0, 0.3, 0.5, 1.0];
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..100usize {
        let p = ps[trial % 4];
        let d = 1 + trial % 2;
        let kernels = KernelSet::new(
            KernelSpec::attraction_repulsion(d, 0.9),
            (0..d).map(|_| KernelSpec::constant(d, 0.8)).collect(),
        )
        .unwrap();
        let mut pt = |scale: f64| -> Vec<f64> {
            (0..d).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
        };
        let x = pt(2.0);
        let y = pt(2.0);
        let u = pt(1.5);
        let u_star = pt(1.5);
        let alpha = 0.01 + 0.49 * rng.gen::<f64>();

        let mut expected = vec![0.0; d];
        for (theta, theta_star) in [(false, false), (false, true), (true, false), (true, true)] {
            let w = (if theta { p } else { 1.0 - p }) * (if theta_star { p } else { 1.0 - p });
            if w == 0.0 {
                continue;
            }
            let post =
                binary_interaction(&x, &y, theta, theta_star, &u, &u_star, alpha, &kernels)
                    .unwrap();
            for (acc, v) in expected.iter_mut().zip(&post) {
                *acc += w * v;
            }
        }
        let avg = limit_kernel(&x, &y, &u, &u_star, p, &kernels).unwrap();
        for c in 0..d {
            let want = x[c] + alpha * avg[c];
            assert!(
                (expected[c] - want).abs() <= 1e-14,
                "trial {trial}: coordinate {c} differs by {:e}",
                (expected[c] - want).abs()
            );
        }
    }
    report(5, "collision expectation identity", start);
}

// --------------------------------------------------------- criterion 6 --

fn collision_fixture(d: usize) -> (InitialCloud, KineticControls, KernelSet) {
    let cloud = InitialCloud::Sampled {
        seed: 21,
        center: vec![0.0; d],
        radius: 1.0,
    };
    let controls = KineticControls::new(vec![1.0; d], vec![0.5; d], 4.0).unwrap();
    let kernels = KernelSet::new(
        linear_pull(d, 8.0),
        (0..d).map(|_| KernelSpec::constant(d, 1.0)).collect(),
    )
    .unwrap();
    (cloud, controls, kernels)
}

#[test]
fn criterion_06_weak_interactions_approach_the_averaged_kernel_run() {
    let _serial = gate();
    let start = Instant::now();
    let m_samples = 2000;
    let seeds = [1u64, 2, 3, 4, 5];
    let eps_list = [0.2, 0.1, 0.05];
    let (cloud, controls, kernels) = collision_fixture(1);

    let rows = quasi_invariant_sweep(
        &cloud, &eps_list, m_samples, 0.3, &controls, &kernels, 1.0, &seeds,
    )
    .unwrap();
    let medians: Vec<f64> = eps_list
        .iter()
        .map(|&eps| {
            median(
                rows.iter()
                    .filter(|r| r.eps == eps)
                    .map(|r| r.max_w1)
                    .collect(),
            )
        })
        .collect();
    assert!(
        medians.windows(2).all(|w| w[1] < w[0]),
        "median error must shrink with the interaction strength: {medians:?}"
    );

    // With no controlled agents the collision run must sit on the plain
    // leaderless crowd limit, up to Monte Carlo noise.
    let eps = 0.05;
    let steps = 20usize;
    let zero_leaders: Vec<Vec<f64>> = Vec::new();
    let idle = ControlSignal::new(vec![0.0, 1.0], vec![Vec::new()], 0.0).unwrap();
    let free_kernels = KernelSet::new(linear_pull(1, 8.0), vec![KernelSpec::zero(1)]).unwrap();
    let reference =
        solve_meanfield(&cloud, &zero_leaders, &idle, &free_kernels, 1.0, eps, m_samples)
            .unwrap();
    let mut free_errs = Vec::new();
    for &seed in &seeds {
        let mut ens = KineticEnsemble::from_cloud(&cloud, m_samples, 0.0, seed).unwrap();
        let mut worst = 0.0f64;
        for step in 0..steps {
            ens = boltzmann_step(&ens, 1.0 / eps, eps, eps, &KineticControls::zero(1), &kernels)
                .unwrap();
            let w1 = wasserstein1(&ens.measure().unwrap(), &reference.measures[step + 1]).unwrap();
            worst = worst.max(w1);
        }
        free_errs.push(worst);
    }
    let free = median(free_errs.clone());
    assert!(
        free <= 2.0 * medians[2],
        "free-run error {free} vs controlled-run error {} ({free_errs:?})",
        medians[2]
    );
    assert!(start.elapsed().as_secs() < 300, "budget exceeded");
    report(6, "weak-interaction limit", start);
}

// --------------------------------------------------------- criterion 7 --

#[test]
fn criterion_07_degenerate_probabilities_collapse_the_averaged_kernel() {
    let _serial = gate();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    for trial in 0..50usize {
        let d = 1 + trial % 2;
        let h_spec = if trial % 2 == 0 {
            KernelSpec::attraction_repulsion(d, 1.1)
        } else {
            linear_pull(d, 8.0)
        };
        let kernels = KernelSet::new(
            h_spec.clone(),
            (0..d).map(|_| KernelSpec::stokes_like(d, 0.9)).collect(),
        )
        .unwrap();
        let mut pt = |scale: f64| -> Vec<f64> {
            (0..d).map(|_| (rng.gen::<f64>() * 2.0 - 1.0) * scale).collect()
        };
        let x = pt(2.0);
        let y = pt(2.0);
        let u = pt(1.5);
        let u_star = pt(1.5);

        let at_zero = limit_kernel(&x, &y, &u, &u_star, 0.0, &kernels).unwrap();
        let xi: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a - b).collect();
        let h = h_spec.eval_h(&xi).unwrap();
        assert_eq!(
            at_zero.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            h.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "p = 0 must reduce to the crowd kernel"
        );

        let at_one = limit_kernel(&x, &y, &u, &u_star, 1.0, &kernels).unwrap();
        assert_eq!(
            at_one.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            u.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            "p = 1 must reduce to the direct control"
        );
    }
    report(7, "averaged kernel degeneracies", start);
}

// --------------------------------------------------------- criterion 8 --

fn pair_cost(
    pair: &BinaryPair,
    prob: &InstantaneousProblem,
    kernels: &KernelSet,
    u_i: &[f64],
    u_j: &[f64],
) -> f64 {
    let next = discrete_binary_step(pair, u_i, u_j, prob.dt, kernels).unwrap();
    let di = dist(&prob.target, &next.xi);
    let dj = dist(&prob.target, &next.xj);
    prob.beta / 2.0 * (di * di + dj * dj) + prob.gamma * (dot(u_i, u_i) + dot(u_j, u_j))
}

/// Cyclic dense coordinate scans at fixed resolution; exact for the strictly
/// convex one-step objective up to the grid width.
fn grid_minimizer(
    pair: &BinaryPair,
    prob: &InstantaneousProblem,
    kernels: &KernelSet,
    res: f64,
    radius: f64,
) -> Vec<f64> {
    let d = pair.xi.len();
    let mut u = vec![0.0; 2 * d];
    let cells = (2.0 * radius / res).round() as usize;
    loop {
        let mut moved = false;
        for c in 0..2 * d {
            let before = u[c];
            let mut best_v = before;
            let mut best = f64::INFINITY;
            for k in 0..=cells {
                let v = -radius + k as f64 * res;
                u[c] = v;
                let f = pair_cost(pair, prob, kernels, &u[..d], &u[d..]);
                if f < best {
                    best = f;
                    best_v = v;
                }
            }
            u[c] = best_v;
            if best_v != before {
                moved = true;
            }
        }
        if !moved {
            return u;
        }
    }
}

/// Cholesky in place; succeeds exactly for positive definite input.
fn positive_definite(mut a: Vec<Vec<f64>>) -> bool {
    let n = a.len();
    for k in 0..n {
        for j in 0..k {
            a[k][k] -= a[k][j] * a[k][j];
        }
        if a[k][k] <= 0.0 {
            return false;
        }
        a[k][k] = a[k][k].sqrt();
        for i in k + 1..n {
            for j in 0..k {
                a[i][k] -= a[i][j] * a[k][j];
            }
            a[i][k] /= a[k][k];
        }
    }
    true
}

#[test]
fn criterion_08_pair_feedback_matches_dense_grid_search() {
    let _serial = gate();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(424);
    for inst in 0..25usize {
        // Every fifth instance pins the bound so the projection bites; the
        // decoupling kernels (no crowd pull, unit leader gain, certain
        // control bits) make per-agent clamping the exact constrained
        // minimizer, so the constrained grid search is a fair oracle.
        let constrained = inst % 5 == 0;
        let d = if constrained { 1 } else { 1 + inst % 2 };
        let kernels = if constrained {
            KernelSet::new(KernelSpec::zero(1), vec![KernelSpec::constant(1, 1.0)]).unwrap()
        } else {
            KernelSet::new(
                KernelSpec::attraction_repulsion(d, 0.6),
                (0..d)
                    .map(|ell| {
                        if ell % 2 == 0 {
                            KernelSpec::stokes_like(d, 0.8)
                        } else {
                            KernelSpec::constant(d, 0.7)
                        }
                    })
                    .collect(),
            )
            .unwrap()
        };
        let p = if constrained { 1.0 } else { [0.3, 0.5, 0.7, 1.0][inst % 4] };
        let gamma = [0.3, 0.6, 1.0][inst % 3];
        let mut pt = || -> Vec<f64> { (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect() };
        let target = pt();
        let u_max = if constrained { 0.05 } else { 1e6 };
        let prob = InstantaneousProblem::new(target, gamma, 0.9, 0.2, p, u_max).unwrap();
        let pair = BinaryPair::new(pt(), pt(), Theta::Mean(p), Theta::Mean(p)).unwrap();

        let (d_mat, _) = assemble_instantaneous_system(&pair, &prob, &kernels).unwrap();
        for i in 0..d_mat.len() {
            for j in 0..i {
                assert_eq!(
                    d_mat[i][j].to_bits(),
                    d_mat[j][i].to_bits(),
                    "instance {inst}: system matrix must be symmetric"
                );
            }
        }
        let mut shifted = d_mat.clone();
        for (i, row) in shifted.iter_mut().enumerate() {
            row[i] -= gamma;
        }
        assert!(
            positive_definite(shifted),
            "instance {inst}: smallest eigenvalue under the control penalty"
        );

        let (u_i, u_j) = solve_feedback(&pair, &prob, &kernels).unwrap();
        let radius = if constrained { prob.u_max } else { 2.0 };
        let grid = grid_minimizer(&pair, &prob, &kernels, 1e-3, radius);
        for (c, (got, want)) in u_i.iter().chain(u_j.iter()).zip(&grid).enumerate() {
            assert!(
                (got - want).abs() <= 2e-3,
                "instance {inst} coordinate {c}: {got} vs grid {want}"
            );
            if !constrained {
                assert!(got.abs() < 1.9, "instance {inst}: grid radius too small");
            }
        }
    }
    report(8, "pair feedback matches grid search", start);
}

// --------------------------------------------------------- criterion 9 --

fn discounted_state_cost(run: &leadfield::binaryctrl::FeedbackRun, beta: f64, dt: f64) -> f64 {
    run.state_costs
        .iter()
        .take(run.state_costs.len() - 1)
        .enumerate()
        .map(|(k, s)| beta.powi(k as i32) * s * dt)
        .sum()
}

#[test]
fn criterion_09_feedback_beats_idle_and_obeys_the_penalty() {
    let _serial = gate();
    let start = Instant::now();
    let kernels =
        KernelSet::new(KernelSpec::zero(1), vec![KernelSpec::constant(1, 1.0)]).unwrap();
    let cloud = InitialCloud::Sampled {
        seed: 5,
        center: vec![-0.5],
        radius: 0.4,
    };
    // Horizon and penalty sized so one-step-lookahead feedback has real
    // authority; the idle crowd is frozen since nothing but control acts.
    let t_end = 2.0;
    let prob = InstantaneousProblem::new(vec![0.6], 0.05, 0.95, 0.2, 0.5, 5.0).unwrap();
    let ens = KineticEnsemble::from_cloud(&cloud, 500, prob.p, 1).unwrap();
    let run = feedback_boltzmann_run(&ens, &prob, &kernels, t_end, 77).unwrap();

    let mut idle_prob = prob.clone();
    idle_prob.u_max = 0.0;
    let idle = feedback_boltzmann_run(&ens, &idle_prob, &kernels, t_end, 77).unwrap();
    assert_eq!(idle.control_energy, 0.0);

    let steered = discounted_state_cost(&run, prob.beta, prob.dt);
    let unsteered = discounted_state_cost(&idle, prob.beta, prob.dt);
    assert!(
        steered <= 0.8 * unsteered,
        "feedback must cut the state cost: {steered} vs idle {unsteered}"
    );

    let mut energies = Vec::new();
    for gamma in [0.1, 1.0, 10.0] {
        let mut pr = prob.clone();
        pr.gamma = gamma;
        let r = feedback_boltzmann_run(&ens, &pr, &kernels, t_end, 77).unwrap();
        energies.push(r.control_energy);
    }
    assert!(
        energies.windows(2).all(|w| w[1] <= w[0]),
        "control energy must not grow with the penalty: {energies:?}"
    );
    report(9, "feedback efficacy and penalty response", start);
}

// -------------------------------------------------------- criterion 10 --

#[test]
fn criterion_10_structural_identities_and_reproducibility() {
    let _serial = gate();
    let start = Instant::now();

    // Pair step vs two collision maps at half strength, bitwise.
    let mut rng = ChaCha8Rng::seed_from_u64(3100);
    for trial in 0..40usize {
        let d = 1 + trial % 2;
        let kernels = KernelSet::new(
            KernelSpec::attraction_repulsion(d, 0.7),
            (0..d).map(|_| KernelSpec::constant(d, 0.9)).collect(),
        )
        .unwrap();
        let mut pt = || -> Vec<f64> { (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect() };
        let (xi, xj, u_i, u_j) = (pt(), pt(), pt(), pt());
        let bits = (trial % 4 / 2 == 1, trial % 2 == 1);
        let pair = BinaryPair::new(
            xi.clone(),
            xj.clone(),
            Theta::Bit(bits.0),
            Theta::Bit(bits.1),
        )
        .unwrap();
        let dt = 0.3;
        let next = discrete_binary_step(&pair, &u_i, &u_j, dt, &kernels).unwrap();
        let xi1 =
            binary_interaction(&xi, &xj, bits.0, bits.1, &u_i, &u_j, dt / 2.0, &kernels).unwrap();
        let xj1 =
            binary_interaction(&xj, &xi, bits.1, bits.0, &u_j, &u_i, dt / 2.0, &kernels).unwrap();
        let as_bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(as_bits(&next.xi), as_bits(&xi1));
        assert_eq!(as_bits(&next.xj), as_bits(&xj1));
    }

    // Crowd solver vs particle integrator on the same atoms, bitwise.
    let (cloud, y0, control, kernels) = refinement_fixture();
    let n = 64usize;
    let mf = solve_meanfield(&cloud, &y0, &control, &kernels, 1.0, 0.02, n).unwrap();
    let state = SwarmState::new(y0.clone(), cloud.resolve(n).unwrap(), 0.0).unwrap();
    let traj = integrate(&state, &control, &kernels, 1.0, 0.02, Method::Euler).unwrap();
    assert_eq!(mf.times.len(), traj.states.len());
    for (k, st) in traj.states.iter().enumerate() {
        for (a, b) in mf.leader_paths[k].iter().zip(&st.leaders) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
        for (a, b) in mf.measures[k].atoms.iter().zip(&st.followers) {
            assert_eq!(
                a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
            );
        }
    }

    // Mass conservation along both solvers.
    for mu in &mf.measures {
        let total: f64 = mu.weights.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }
    let (kcloud, kcontrols, kkernels) = collision_fixture(1);
    let mut ens = KineticEnsemble::from_cloud(&kcloud, 300, 0.3, 9).unwrap();
    for _ in 0..10 {
        ens = boltzmann_step(&ens, 2.0, 0.1, 0.1, &kcontrols, &kkernels).unwrap();
        let mu = ens.measure().unwrap();
        let total: f64 = mu.weights.iter().sum();
        assert!((total - 1.0).abs() <= 1e-12);
    }

    // Byte-identical CSV artifacts for fixed seeds, independent of the
    // worker pool size.
    use std::path::Path;
    use std::process::Command;
    let bin = env!("CARGO_BIN_EXE_leadfield");
    let configs = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for (cmd, fixture) in [
        ("kinetic-sweep", "kinetic.ini"),
        ("meanfield-converge", "meanfield.ini"),
    ] {
        let mut outputs = Vec::new();
        for threads in ["1", "4"] {
            let dir = tempfile::tempdir().unwrap();
            let status = Command::new(bin)
                .args([
                    cmd,
                    "--config",
                    configs.join(fixture).to_str().unwrap(),
                    "--out",
                    dir.path().to_str().unwrap(),
                    "--seed",
                    "5",
                ])
                .env("RAYON_NUM_THREADS", threads)
                .status()
                .unwrap();
            assert!(status.success(), "{cmd} failed");
            let mut csvs: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir.path())
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .map(|p| {
                    (
                        p.file_name().unwrap().to_string_lossy().into_owned(),
                        std::fs::read(&p).unwrap(),
                    )
                })
                .collect();
            csvs.sort_by(|a, b| a.0.cmp(&b.0));
            outputs.push(csvs);
        }
        assert!(!outputs[0].is_empty(), "{cmd} wrote no tables");
        assert_eq!(outputs[0], outputs[1], "{cmd}: thread count changed the bytes");
    }

    report(10, "structural identities and reproducibility", start);
}
