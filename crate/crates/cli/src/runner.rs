//! Turns a validated config into a concrete experiment plan, executes it,
//! and writes the artifact set: CSV tables, optional SVG plots, a
//! `summary.txt` of flat `key = value` facts, and a `manifest` listing every
//! artifact with its content hash.
//!
//! Determinism contract: CSV artifacts depend only on the config and the
//! seeds, never on wall-clock or thread count. Measured timings therefore go
//! to `summary.txt` only, and timing columns inside CSV schemas are written
//! as zero.

use crate::config::{Config, Diagnostic, Reader, EXPERIMENTS};
use crate::plots::{line_plot, Series};
use leadfield::binaryctrl::{feedback_boltzmann_run, InstantaneousProblem};
use leadfield::gamma_limit::{gamma_sweep, GammaProblem};
use leadfield::io;
use leadfield::kernels::{certify_growth, KernelSpec};
use leadfield::kinetic::{quasi_invariant_sweep, KineticControls, KineticEnsemble};
use leadfield::meanfield::{
    convergence_study, stability_experiment, InitialCloud, StudyControls, StudyRow,
};
use leadfield::measures::{empirical_from_followers, support_radius};
use leadfield::microdynamics::{integrate, ControlSignal, KernelSet, Method, SwarmState};
use leadfield::optctrl::{optimize, CostSpec, OptimizeOpts, Target};
use leadfield::Error;
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Debug, Clone)]
pub struct RunArgs {
    pub config: PathBuf,
    pub sets: Vec<String>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub plots: Option<bool>,
    pub check: bool,
}

#[derive(Debug)]
pub enum RunError {
    /// Malformed config; every collected diagnostic.
    Config(Vec<Diagnostic>),
    /// The experiment itself failed.
    Core(Error),
    /// `--check` found artifacts that drifted from their frozen hashes.
    Check(Vec<String>),
}

impl From<Error> for RunError {
    fn from(e: Error) -> Self {
        RunError::Core(e)
    }
}

pub fn exit_code(err: &RunError) -> i32 {
    match err {
        RunError::Config(_) => 2,
        RunError::Core(Error::Numerical(_)) => 3,
        RunError::Core(_) => 2,
        RunError::Check(_) => 4,
    }
}

fn one(d: Diagnostic) -> RunError {
    RunError::Config(vec![d])
}

/// Load the config and fold in CLI overrides: `--set section.key=value`
/// entries verbatim, then `--seed`, which rewrites the cloud seed and, when
/// the study section names no seeds, stands in as the single study seed.
fn load_config(args: &RunArgs) -> Result<Config, RunError> {
    let mut cfg = Config::load(&args.config).map_err(RunError::Config)?;
    for spec in &args.sets {
        cfg.apply_set(spec).map_err(one)?;
    }
    if let Some(seed) = args.seed {
        cfg.apply_set(&format!("problem.cloud_seed={seed}"))
            .map_err(one)?;
        if !cfg.has("study", "seeds") {
            cfg.apply_set(&format!("study.seeds={seed}")).map_err(one)?;
        }
    }
    Ok(cfg)
}

pub fn run(cmd: &str, args: &RunArgs) -> Result<(), RunError> {
    let cfg = load_config(args)?;
    let plan = build_plan(cmd, &cfg).map_err(RunError::Config)?;

    let out_dir = match (&args.out, Reader::new(&cfg).raw("output", "directory")) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => cfg.dir.join(dir),
        (None, None) => PathBuf::from("out"),
    };
    fs::create_dir_all(&out_dir).map_err(|e| RunError::Core(Error::Io(e)))?;
    let plots = match (args.plots, Reader::new(&cfg).raw("output", "plots")) {
        (Some(flag), _) => flag,
        (None, Some("off")) => false,
        (None, _) => true,
    };

    let mut art = Artifacts::new(out_dir, plots);
    art.note("experiment", cmd.to_string());
    let t0 = Instant::now();
    exec_plan(plan, &mut art)?;
    art.note("wall_time_s", format!("{:.3}", t0.elapsed().as_secs_f64()));
    art.write_summary()?;
    art.write_manifest(&cfg, args.seed)?;
    if args.check {
        check_expected(&args.config, &art)?;
    }
    Ok(())
}

/// `validate` builds the plan named by `[problem] experiment` without
/// executing it; a config that parses but names no experiment only gets the
/// structural checks.
pub fn validate(args: &RunArgs) -> Result<(), RunError> {
    let cfg = load_config(args)?;
    let experiment = Reader::new(&cfg).raw("problem", "experiment").map(str::to_string);
    match experiment {
        None => Ok(()),
        Some(e) if EXPERIMENTS.contains(&e.as_str()) => {
            build_plan(&e, &cfg).map(|_| ()).map_err(RunError::Config)
        }
        Some(e) => Err(one(Diagnostic {
            line: 0,
            field: "[problem].experiment".to_string(),
            message: format!("`{e}` is not an experiment"),
        })),
    }
}

// ---------------------------------------------------------------- plans --

enum Plan {
    Simulate(SimulatePlan),
    Converge(ConvergePlan),
    Stability(StabilityPlan),
    Optimize(OptimizePlan),
    Gamma(GammaPlan),
    Kinetic(KineticPlan),
    Feedback(FeedbackPlan),
    Certify(CertifyPlan),
}

struct CommonDyn {
    d: usize,
    m: usize,
    t_end: f64,
    dt: f64,
    kernels: KernelSet,
    y0: Vec<Vec<f64>>,
    cloud: InitialCloud,
    control: ControlSignal,
    u_max: f64,
}

struct SimulatePlan {
    common: CommonDyn,
    n: usize,
}

struct ConvergePlan {
    common: CommonDyn,
    n_list: Vec<usize>,
    reference_n: usize,
}

struct StabilityPlan {
    common: CommonDyn,
    n: usize,
    deltas: Vec<f64>,
    seed: u64,
}

struct OptimizePlan {
    common: CommonDyn,
    n: usize,
    cost: CostSpec,
    opts: OptimizeOpts,
}

struct GammaPlan {
    problem: GammaProblem,
    n_list: Vec<usize>,
}

struct KineticPlan {
    m_samples: usize,
    p: f64,
    controls: KineticControls,
    kernels: KernelSet,
    cloud: InitialCloud,
    t_end: f64,
    eps_list: Vec<f64>,
    seeds: Vec<u64>,
}

struct FeedbackPlan {
    m_samples: usize,
    target: Vec<f64>,
    gamma: f64,
    beta: f64,
    dt: f64,
    p: f64,
    u_max: f64,
    kernels: KernelSet,
    cloud: InitialCloud,
    t_end: f64,
    seed: u64,
    gamma_list: Vec<f64>,
}

struct CertifyPlan {
    entries: Vec<(String, KernelSpec)>,
    radius: f64,
    n_samples: usize,
    seed: u64,
}

fn build_plan(cmd: &str, cfg: &Config) -> Result<Plan, Vec<Diagnostic>> {
    let mut r = Reader::new(cfg);
    if let Some(exp) = r.raw("problem", "experiment") {
        if exp != cmd {
            if EXPERIMENTS.contains(&exp) {
                r.push(
                    "problem",
                    "experiment",
                    format!("config is for `{exp}`, not `{cmd}`"),
                );
            } else {
                r.push("problem", "experiment", format!("`{exp}` is not an experiment"));
            }
        }
    }
    if let Some(p) = r.raw("output", "plots") {
        if p != "on" && p != "off" {
            r.push("output", "plots", "must be `on` or `off`");
        }
    }
    let plan = match cmd {
        "simulate" => build_simulate(&mut r).map(Plan::Simulate),
        "meanfield-converge" => build_converge(&mut r).map(Plan::Converge),
        "stability" => build_stability(&mut r).map(Plan::Stability),
        "optimize" => build_optimize(&mut r).map(Plan::Optimize),
        "gamma-sweep" => build_gamma(&mut r).map(Plan::Gamma),
        "kinetic-sweep" => build_kinetic(&mut r).map(Plan::Kinetic),
        "feedback-control" => build_feedback(&mut r).map(Plan::Feedback),
        "certify-kernels" => build_certify(&mut r).map(Plan::Certify),
        other => {
            r.push("problem", "experiment", format!("`{other}` is not an experiment"));
            None
        }
    };
    match plan {
        Some(p) if r.diags.is_empty() => Ok(p),
        _ => Err(r.diags),
    }
}

/// Geometry, kernels, initial condition, and leader control shared by the
/// trajectory-based experiments. Leaf fields are read unconditionally so one
/// pass reports every missing or malformed value.
fn common_dynamics(r: &mut Reader) -> Option<CommonDyn> {
    let d = r.usize("problem", "d");
    let m = r.usize("problem", "m");
    let t_end = r.f64("problem", "t_end");
    let dt = r.f64("problem", "dt");
    let u_max = r.f64_or("problem", "u_max", 1.0);
    let (Some(d), Some(m), Some(t_end), Some(dt), Some(u_max)) = (d, m, t_end, dt, u_max) else {
        return None;
    };
    if d == 0 {
        r.push("problem", "d", "dimension must be at least 1");
        return None;
    }
    if !(t_end > 0.0) {
        r.push("problem", "t_end", "must be positive");
    }
    if !(dt > 0.0) {
        r.push("problem", "dt", "must be positive");
        return None;
    }
    if !(u_max >= 0.0) {
        r.push("problem", "u_max", "must be nonnegative");
    }
    r.check_on_grid("problem", "t_end", "horizon", t_end, dt);

    let h = r.kernel_h(d);
    let g = r.kernel_g(d);
    let kernels = match (h, g) {
        (Some(h), Some(g)) => match KernelSet::new(h, g) {
            Ok(k) => Some(k),
            Err(e) => {
                r.push("problem", "kernel_h", e.to_string());
                None
            }
        },
        _ => None,
    };
    let y0 = if m == 0 {
        Some(Vec::new())
    } else {
        r.mat("problem", "y0").and_then(|rows| {
            if rows.len() != m {
                r.push("problem", "y0", format!("expected {m} leaders, found {}", rows.len()));
                None
            } else if rows[0].len() != d {
                r.push("problem", "y0", format!("leaders must live in R^{d}"));
                None
            } else {
                Some(rows)
            }
        })
    };
    let cloud = r.cloud(d);
    let control = control_signal(r, m, d, t_end, dt, u_max);
    Some(CommonDyn {
        d,
        m,
        t_end,
        dt,
        kernels: kernels?,
        y0: y0?,
        cloud: cloud?,
        control: control?,
        u_max,
    })
}

/// Piecewise-constant leader control from `u` (pieces split by `;`, leaders
/// by `|`) and optional explicit `breakpoints`; no `u` means zero control on
/// one piece.
fn control_signal(
    r: &mut Reader,
    m: usize,
    d: usize,
    t_end: f64,
    dt: f64,
    u_max: f64,
) -> Option<ControlSignal> {
    if !r.cfg.has("problem", "u") {
        if r.cfg.has("problem", "breakpoints") {
            r.push("problem", "breakpoints", "breakpoints given without `u`");
        }
        let values = vec![vec![vec![0.0; d]; m]];
        return match ControlSignal::new(vec![0.0, t_end], values, u_max) {
            Ok(sig) => Some(sig),
            Err(e) => {
                r.push("problem", "u_max", e.to_string());
                None
            }
        };
    }
    let pieces = r.pieces("problem", "u")?;
    if m == 0 {
        r.push("problem", "u", "control given but the problem has no leaders");
        return None;
    }
    for (i, piece) in pieces.iter().enumerate() {
        if piece.len() != m {
            r.push(
                "problem",
                "u",
                format!("piece {} has {} leader rows, expected {m}", i + 1, piece.len()),
            );
            return None;
        }
        if piece[0].len() != d {
            r.push("problem", "u", format!("piece {} must live in R^{d}", i + 1));
            return None;
        }
    }
    let breakpoints = if r.cfg.has("problem", "breakpoints") {
        let bp = r.vec_f64("problem", "breakpoints")?;
        if bp.len() != pieces.len() + 1 {
            r.push(
                "problem",
                "breakpoints",
                format!("{} pieces need {} breakpoints, found {}", pieces.len(), pieces.len() + 1, bp.len()),
            );
            return None;
        }
        if bp[0] != 0.0 || (bp[bp.len() - 1] - t_end).abs() > 1e-12 * t_end.abs().max(1.0) {
            r.push("problem", "breakpoints", format!("must run from 0 to t_end = {t_end}"));
            return None;
        }
        bp
    } else {
        let w = t_end / pieces.len() as f64;
        let mut bp: Vec<f64> = (0..pieces.len()).map(|j| j as f64 * w).collect();
        bp.push(t_end);
        bp
    };
    for &b in &breakpoints[1..breakpoints.len() - 1] {
        r.check_on_grid("problem", "breakpoints", "control breakpoint", b, dt);
    }
    if !r.diags.is_empty() {
        return None;
    }
    match ControlSignal::new(breakpoints, pieces, u_max) {
        Ok(sig) => Some(sig),
        Err(e) => {
            r.push("problem", "u", e.to_string());
            None
        }
    }
}

fn crowd_size(r: &mut Reader) -> Option<usize> {
    let n = r.usize("problem", "n")?;
    if n == 0 {
        r.push("problem", "n", "crowd must contain at least one particle");
        return None;
    }
    Some(n)
}

fn study_seeds(r: &mut Reader) -> Vec<u64> {
    if r.cfg.has("study", "seeds") {
        r.u64_list("study", "seeds").unwrap_or_default()
    } else {
        vec![0]
    }
}

fn build_simulate(r: &mut Reader) -> Option<SimulatePlan> {
    let common = common_dynamics(r);
    let n = crowd_size(r);
    Some(SimulatePlan {
        common: common?,
        n: n?,
    })
}

fn build_converge(r: &mut Reader) -> Option<ConvergePlan> {
    let common = common_dynamics(r);
    let n_list = r.usize_list("study", "n_list");
    let reference_n = r.usize("study", "reference_n");
    let (Some(n_list), Some(reference_n)) = (n_list, reference_n) else {
        return None;
    };
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        r.push("study", "n_list", "crowd sizes must be strictly increasing");
        return None;
    }
    if reference_n <= *n_list.last().unwrap() {
        r.push("study", "reference_n", "reference crowd must exceed every listed size");
        return None;
    }
    Some(ConvergePlan {
        common: common?,
        n_list,
        reference_n,
    })
}

fn build_stability(r: &mut Reader) -> Option<StabilityPlan> {
    let common = common_dynamics(r);
    let n = crowd_size(r);
    let deltas = if r.cfg.has("study", "deltas") {
        let ds = r.vec_f64("study", "deltas")?;
        if ds.iter().any(|x| !(*x > 0.0)) {
            r.push("study", "deltas", "perturbation scales must be positive");
            return None;
        }
        ds
    } else {
        vec![1e-2, 1e-3]
    };
    let seed = study_seeds(r).first().copied().unwrap_or(0);
    let common = common?;
    if common.m == 0 {
        r.push("problem", "m", "stability run needs at least one leader");
        return None;
    }
    Some(StabilityPlan {
        common,
        n: n?,
        deltas,
        seed,
    })
}

/// Quadratic tracking cost plus optimizer options shared by `optimize` and
/// `gamma-sweep`. Piece boundaries must land on the integration grid.
fn tracking_cost(r: &mut Reader, d: usize, t_end: f64, dt: f64, u_max: f64) -> Option<(CostSpec, OptimizeOpts)> {
    let target = r.vec_f64("cost", "target");
    let control_weight = r.positive("cost", "control_weight");
    let state_weight = r.f64_or("cost", "state_weight", 1.0);
    let pieces = r.usize_or("cost", "pieces", 1);
    let step = r.f64_or("study", "step", 0.5);
    let tol = r.f64_or("study", "tol", 1e-6);
    let max_iter = r.usize_or("study", "max_iter", 500);
    let (Some(target), Some(control_weight), Some(state_weight), Some(pieces)) =
        (target, control_weight, state_weight, pieces)
    else {
        return None;
    };
    if target.len() != d {
        r.push("cost", "target", format!("target must live in R^{d}"));
        return None;
    }
    if !(state_weight >= 0.0) {
        r.push("cost", "state_weight", "must be nonnegative");
        return None;
    }
    if pieces == 0 {
        r.push("cost", "pieces", "need at least one control piece");
        return None;
    }
    r.check_on_grid("cost", "pieces", "control piece width", t_end / pieces as f64, dt);
    let (Some(step), Some(tol), Some(max_iter)) = (step, tol, max_iter) else {
        return None;
    };
    if !(step > 0.0) {
        r.push("study", "step", "must be positive");
    }
    if !(tol > 0.0) {
        r.push("study", "tol", "must be positive");
    }
    if max_iter == 0 {
        r.push("study", "max_iter", "need at least one iteration");
    }
    let cost = CostSpec {
        target: Target::Shared(target),
        control_weight,
        state_weight,
    };
    let opts = OptimizeOpts {
        step,
        max_iter,
        tol,
        u_max,
        pieces,
        init: None,
    };
    Some((cost, opts))
}

fn build_optimize(r: &mut Reader) -> Option<OptimizePlan> {
    let common = common_dynamics(r)?;
    let n = crowd_size(r);
    let cost = tracking_cost(r, common.d, common.t_end, common.dt, common.u_max);
    if common.m == 0 {
        r.push("problem", "m", "nothing to optimize without leaders");
        return None;
    }
    let (cost, opts) = cost?;
    Some(OptimizePlan {
        common,
        n: n?,
        cost,
        opts,
    })
}

fn build_gamma(r: &mut Reader) -> Option<GammaPlan> {
    let common = common_dynamics(r)?;
    let cost = tracking_cost(r, common.d, common.t_end, common.dt, common.u_max);
    let n_list = r.usize_list("study", "n_list");
    let (Some((cost, opts)), Some(n_list)) = (cost, n_list) else {
        return None;
    };
    if n_list.windows(2).any(|w| w[0] >= w[1]) {
        r.push("study", "n_list", "crowd sizes must be strictly increasing");
        return None;
    }
    if common.m == 0 {
        r.push("problem", "m", "nothing to optimize without leaders");
        return None;
    }
    Some(GammaPlan {
        problem: GammaProblem {
            mu0: common.cloud,
            y0: common.y0,
            kernels: common.kernels,
            target: cost.target,
            control_weight: cost.control_weight,
            state_weight: cost.state_weight,
            t_end: common.t_end,
            dt: common.dt,
            opts,
        },
        n_list,
    })
}

fn build_kinetic(r: &mut Reader) -> Option<KineticPlan> {
    let d = r.usize("problem", "d");
    let m_samples = r.usize("problem", "m_samples");
    let t_end = r.positive("problem", "t_end");
    let p = r.unit_interval("problem", "p");
    let u_max = r.f64_or("problem", "u_max", 1.0);
    let eps_list = r.vec_f64("study", "eps_list");
    let (Some(d), Some(m_samples), Some(t_end), Some(p), Some(u_max), Some(eps_list)) =
        (d, m_samples, t_end, p, u_max, eps_list)
    else {
        return None;
    };
    if d == 0 {
        r.push("problem", "d", "dimension must be at least 1");
        return None;
    }
    if m_samples < 2 {
        r.push("problem", "m_samples", "collision process needs at least two samples");
    }
    if eps_list.iter().any(|e| !(*e > 0.0)) {
        r.push("study", "eps_list", "interaction strengths must be positive");
        return None;
    }
    if eps_list.windows(2).any(|w| w[1] >= w[0]) {
        r.push("study", "eps_list", "interaction strengths must strictly decrease");
        return None;
    }
    let u_alpha = if r.cfg.has("problem", "u_alpha") {
        r.vec_f64("problem", "u_alpha")?
    } else {
        vec![0.0; d]
    };
    let u_star_alpha = if r.cfg.has("problem", "u_star_alpha") {
        r.vec_f64("problem", "u_star_alpha")?
    } else {
        vec![0.0; d]
    };
    if u_alpha.len() != d || u_star_alpha.len() != d {
        r.push("problem", "u_alpha", format!("controls must live in R^{d}"));
        return None;
    }
    let controls = match KineticControls::new(u_alpha, u_star_alpha, u_max) {
        Ok(c) => c,
        Err(e) => {
            r.push("problem", "u_alpha", e.to_string());
            return None;
        }
    };
    let h = r.kernel_h(d);
    let g = r.kernel_g(d);
    let kernels = match (h, g) {
        (Some(h), Some(g)) => match KernelSet::new(h, g) {
            Ok(k) => k,
            Err(e) => {
                r.push("problem", "kernel_h", e.to_string());
                return None;
            }
        },
        _ => return None,
    };
    let cloud = r.cloud(d);
    let seeds = study_seeds(r);
    if seeds.is_empty() {
        return None;
    }
    Some(KineticPlan {
        m_samples,
        p,
        controls,
        kernels,
        cloud: cloud?,
        t_end,
        eps_list,
        seeds,
    })
}

fn build_feedback(r: &mut Reader) -> Option<FeedbackPlan> {
    let d = r.usize("problem", "d");
    let m_samples = r.usize("problem", "m_samples");
    let t_end = r.positive("problem", "t_end");
    let dt = r.positive("problem", "dt");
    let p = r.unit_interval("problem", "p");
    let u_max = r.f64_or("problem", "u_max", 1.0);
    let target = r.vec_f64("cost", "target");
    let gamma = r.positive("cost", "gamma");
    let (Some(d), Some(m_samples), Some(t_end), Some(dt), Some(p), Some(u_max), Some(target), Some(gamma)) =
        (d, m_samples, t_end, dt, p, u_max, target, gamma)
    else {
        return None;
    };
    if d == 0 {
        r.push("problem", "d", "dimension must be at least 1");
        return None;
    }
    if m_samples < 2 {
        r.push("problem", "m_samples", "collision process needs at least two samples");
    }
    if target.len() != d {
        r.push("cost", "target", format!("target must live in R^{d}"));
        return None;
    }
    r.check_on_grid("problem", "t_end", "horizon", t_end, dt);
    let beta = match (r.cfg.has("cost", "beta"), r.cfg.has("cost", "lambda")) {
        (true, true) => {
            r.push("cost", "beta", "give either `beta` or `lambda`, not both");
            return None;
        }
        (true, false) => r.f64("cost", "beta")?,
        (false, true) => {
            let lambda = r.f64("cost", "lambda")?;
            if !(lambda >= 0.0) {
                r.push("cost", "lambda", "discount rate must be nonnegative");
                return None;
            }
            (-lambda * dt).exp()
        }
        (false, false) => 1.0,
    };
    if !(beta > 0.0 && beta <= 1.0) {
        r.push("cost", "beta", "discount factor must lie in (0, 1]");
        return None;
    }
    let gamma_list = if r.cfg.has("study", "gamma_list") {
        let gs = r.vec_f64("study", "gamma_list")?;
        if gs.iter().any(|g| !(*g > 0.0)) {
            r.push("study", "gamma_list", "control penalties must be positive");
            return None;
        }
        gs
    } else {
        Vec::new()
    };
    let h = r.kernel_h(d);
    let g = r.kernel_g(d);
    let kernels = match (h, g) {
        (Some(h), Some(g)) => match KernelSet::new(h, g) {
            Ok(k) => k,
            Err(e) => {
                r.push("problem", "kernel_h", e.to_string());
                return None;
            }
        },
        _ => return None,
    };
    let cloud = r.cloud(d);
    let seed = study_seeds(r).first().copied().unwrap_or(0);
    Some(FeedbackPlan {
        m_samples,
        target,
        gamma,
        beta,
        dt,
        p,
        u_max,
        kernels,
        cloud: cloud?,
        t_end,
        seed,
        gamma_list,
    })
}

fn build_certify(r: &mut Reader) -> Option<CertifyPlan> {
    let d = r.usize("problem", "d")?;
    if d == 0 {
        r.push("problem", "d", "dimension must be at least 1");
        return None;
    }
    let mut entries = Vec::new();
    let h = r.kernel_h(d)?;
    entries.push(("h".to_string(), h));
    for (ell, g) in r.kernel_g(d)?.into_iter().enumerate() {
        entries.push((format!("g_{}", ell + 1), g));
    }
    for (name, spec) in [
        ("catalog_zero", KernelSpec::zero(d)),
        ("catalog_constant", KernelSpec::constant(d, 1.0)),
        ("catalog_attraction_repulsion", KernelSpec::attraction_repulsion(d, 1.0)),
        ("catalog_stokes_like", KernelSpec::stokes_like(d, 1.0)),
    ] {
        entries.push((name.to_string(), spec));
    }
    let seed = study_seeds(r).first().copied().unwrap_or(0);
    Some(CertifyPlan {
        entries,
        radius: 10.0,
        n_samples: 256,
        seed,
    })
}

// ------------------------------------------------------------ execution --

fn exec_plan(plan: Plan, art: &mut Artifacts) -> Result<(), Error> {
    match plan {
        Plan::Simulate(p) => exec_simulate(p, art),
        Plan::Converge(p) => exec_converge(p, art),
        Plan::Stability(p) => exec_stability(p, art),
        Plan::Optimize(p) => exec_optimize(p, art),
        Plan::Gamma(p) => exec_gamma(p, art),
        Plan::Kinetic(p) => exec_kinetic(p, art),
        Plan::Feedback(p) => exec_feedback(p, art),
        Plan::Certify(p) => exec_certify(p, art),
    }
}

fn exec_simulate(p: SimulatePlan, art: &mut Artifacts) -> Result<(), Error> {
    let c = p.common;
    let atoms = c.cloud.resolve(p.n)?;
    let initial = SwarmState::new(c.y0, atoms, 0.0)?;
    let t0 = Instant::now();
    let traj = integrate(&initial, &c.control, &c.kernels, c.t_end, c.dt, Method::Euler)?;
    art.note("integration_s", format!("{:.3}", t0.elapsed().as_secs_f64()));
    art.write("trajectory.csv", io::trajectory_csv(&traj))?;
    let last = traj.states.last().expect("trajectory has states");
    let mu = empirical_from_followers(&last.followers)?;
    art.write("final_measure.csv", io::measure_csv(&mu))?;
    art.note("steps", (traj.states.len() - 1).to_string());
    art.note("crowd", p.n.to_string());
    art.note("final_support_radius", format!("{:.6e}", support_radius(&mu)));

    let times: Vec<f64> = traj.states.iter().map(|s| s.time).collect();
    let mut series = Vec::new();
    for k in 0..c.m.min(3) {
        for coord in 0..c.d {
            series.push(Series {
                label: format!("Y_{}_{}", k + 1, coord + 1),
                points: times
                    .iter()
                    .zip(&traj.states)
                    .map(|(&t, s)| (t, s.leaders[k][coord]))
                    .collect(),
            });
        }
    }
    for coord in 0..c.d {
        series.push(Series {
            label: format!("mean_X_{}", coord + 1),
            points: times
                .iter()
                .zip(&traj.states)
                .map(|(&t, s)| {
                    let mean = s.followers.iter().map(|x| x[coord]).sum::<f64>()
                        / s.followers.len() as f64;
                    (t, mean)
                })
                .collect(),
        });
    }
    art.plot("trajectory.svg", line_plot("trajectory", "t", "position", &series))?;
    Ok(())
}

fn exec_converge(p: ConvergePlan, art: &mut Artifacts) -> Result<(), Error> {
    let c = p.common;
    let rows = convergence_study(
        &c.cloud,
        &c.y0,
        &StudyControls::Fixed(c.control),
        &c.kernels,
        c.t_end,
        c.dt,
        &p.n_list,
        p.reference_n,
    )?;
    for row in &rows {
        art.note(format!("runtime_s_n{}", row.n), format!("{:.3}", row.runtime_s));
    }
    let frozen: Vec<StudyRow> = rows.iter().map(|r| StudyRow { runtime_s: 0.0, ..*r }).collect();
    art.write("study.csv", io::study_csv(&frozen))?;
    art.note("reference_n", p.reference_n.to_string());

    let w1 = Series {
        label: "max_W1".to_string(),
        points: rows.iter().map(|r| (r.n as f64, r.max_w1)).collect(),
    };
    let leader = Series {
        label: "max_leader_err".to_string(),
        points: rows.iter().map(|r| (r.n as f64, r.max_leader_err)).collect(),
    };
    art.plot(
        "convergence.svg",
        line_plot("error vs N", "N", "error", &[w1, leader]),
    )?;
    Ok(())
}

fn exec_stability(p: StabilityPlan, art: &mut Artifacts) -> Result<(), Error> {
    let c = p.common;
    let mut csv = String::from("delta,ratio,bound\n");
    let mut points = Vec::new();
    for (i, &delta) in p.deltas.iter().enumerate() {
        let rep = stability_experiment(
            &c.cloud, &c.y0, &c.control, &c.kernels, c.t_end, c.dt, p.n, delta, delta, p.seed,
        )?;
        csv.push_str(&format!(
            "{},{},{}\n",
            io::fmt_f64(delta),
            io::fmt_f64(rep.ratio),
            io::fmt_f64(rep.bound)
        ));
        art.note(format!("ratio_{}", i + 1), format!("{:.6e}", rep.ratio));
        art.note(format!("bound_{}", i + 1), format!("{:.6e}", rep.bound));
        points.push((delta, rep.ratio));
    }
    art.write("stability.csv", csv)?;
    art.note("seed", p.seed.to_string());
    let series = Series {
        label: "ratio".to_string(),
        points,
    };
    art.plot(
        "stability.svg",
        line_plot("amplification vs delta", "delta", "max ratio", &[series]),
    )?;
    Ok(())
}

fn exec_optimize(p: OptimizePlan, art: &mut Artifacts) -> Result<(), Error> {
    let c = p.common;
    let atoms = c.cloud.resolve(p.n)?;
    let initial = SwarmState::new(c.y0, atoms, 0.0)?;
    let t0 = Instant::now();
    let res = optimize(&initial, &p.cost, &c.kernels, c.t_end, c.dt, &p.opts)?;
    art.note("solve_s", format!("{:.3}", t0.elapsed().as_secs_f64()));
    art.write("control.csv", io::control_csv(&res.control))?;
    let mut history = String::from("iter,cost\n");
    for (i, cost) in res.cost_history.iter().enumerate() {
        history.push_str(&format!("{i},{}\n", io::fmt_f64(*cost)));
    }
    art.write("history.csv", history)?;
    art.note("cost", io::fmt_f64(res.cost));
    art.note("iterations", res.iterations.to_string());
    art.note("optimality_residual", format!("{:.6e}", res.optimality_residual));
    art.note("converged", res.converged.to_string());
    let series = Series {
        label: "cost".to_string(),
        points: res
            .cost_history
            .iter()
            .enumerate()
            .map(|(i, &c)| (i as f64, c))
            .collect(),
    };
    art.plot(
        "cost.svg",
        line_plot("cost vs iteration", "iteration", "cost", &[series]),
    )?;
    Ok(())
}

fn exec_gamma(p: GammaPlan, art: &mut Artifacts) -> Result<(), Error> {
    let t0 = Instant::now();
    let report = gamma_sweep(&p.problem, &p.n_list)?;
    art.note("sweep_s", format!("{:.3}", t0.elapsed().as_secs_f64()));
    art.write("gamma.csv", io::gamma_csv(&report.rows))?;
    let reference = &report.rows.last().expect("sweep has rows").control;
    art.write("control_ref.csv", io::control_csv(reference))?;
    for row in &report.rows {
        art.note(format!("j_opt_n{}", row.n), io::fmt_f64(row.optimal_cost));
        art.note(
            format!("ctrl_gap_n{}", row.n),
            format!("{:.6e}", row.control_distance_to_largest),
        );
        art.note(format!("converged_n{}", row.n), row.converged.to_string());
    }
    let j = Series {
        label: "J_opt".to_string(),
        points: report.rows.iter().map(|r| (r.n as f64, r.optimal_cost)).collect(),
    };
    let j_limit = Series {
        label: "J_limit_est".to_string(),
        points: report
            .rows
            .iter()
            .map(|r| (r.n as f64, r.limit_cost_estimate))
            .collect(),
    };
    let gap = Series {
        label: "ctrl_gap".to_string(),
        points: report
            .rows
            .iter()
            .map(|r| (r.n as f64, r.control_distance_to_largest))
            .collect(),
    };
    art.plot(
        "gamma.svg",
        line_plot("tracking cost vs N", "N", "value", &[j, j_limit, gap]),
    )?;
    Ok(())
}

fn exec_kinetic(p: KineticPlan, art: &mut Artifacts) -> Result<(), Error> {
    let rows = quasi_invariant_sweep(
        &p.cloud,
        &p.eps_list,
        p.m_samples,
        p.p,
        &p.controls,
        &p.kernels,
        p.t_end,
        &p.seeds,
    )?;
    for row in &rows {
        art.note(
            format!("runtime_s_eps{}_seed{}", row.eps, row.seed),
            format!("{:.3}", row.runtime_s),
        );
    }
    let frozen: Vec<_> = rows
        .iter()
        .map(|r| leadfield::kinetic::KineticSweepRow { runtime_s: 0.0, ..r.clone() })
        .collect();
    art.write("kinetic.csv", io::kinetic_csv(&frozen))?;

    let mut medians = Vec::new();
    for &eps in &p.eps_list {
        let mut vals: Vec<f64> = rows
            .iter()
            .filter(|r| r.eps == eps)
            .map(|r| r.max_w1)
            .collect();
        vals.sort_by(|a, b| a.total_cmp(b));
        if !vals.is_empty() {
            medians.push((eps, vals[vals.len() / 2]));
        }
    }
    medians.reverse();
    let series = Series {
        label: "median max_W1".to_string(),
        points: medians,
    };
    art.plot(
        "sweep.svg",
        line_plot("error vs eps", "eps", "max_W1", &[series]),
    )?;
    Ok(())
}

fn exec_feedback(p: FeedbackPlan, art: &mut Artifacts) -> Result<(), Error> {
    let run_for = |gamma: f64| -> Result<_, Error> {
        let prob = InstantaneousProblem::new(p.target.clone(), gamma, p.beta, p.dt, p.p, p.u_max)?;
        let ens = KineticEnsemble::from_cloud(&p.cloud, p.m_samples, p.p, p.seed)?;
        feedback_boltzmann_run(&ens, &prob, &p.kernels, p.t_end, p.seed)
    };
    let t0 = Instant::now();
    let main = run_for(p.gamma)?;
    art.note("run_s", format!("{:.3}", t0.elapsed().as_secs_f64()));
    art.write("feedback.csv", io::feedback_csv(&main))?;
    let mu = main.measures.last().expect("run has nodes");
    art.write("final_measure.csv", io::measure_csv(mu))?;
    art.note("gamma", io::fmt_f64(p.gamma));
    art.note("beta", io::fmt_f64(p.beta));
    art.note("seed", p.seed.to_string());
    art.note("realized_cost", io::fmt_f64(main.realized_cost));
    art.note("control_energy", io::fmt_f64(main.control_energy));
    for (k, &gamma) in p.gamma_list.iter().enumerate() {
        let run = run_for(gamma)?;
        art.write(&format!("feedback_gamma_{}.csv", k + 1), io::feedback_csv(&run))?;
        art.note(format!("gamma_{}", k + 1), io::fmt_f64(gamma));
        art.note(format!("realized_cost_{}", k + 1), io::fmt_f64(run.realized_cost));
        art.note(format!("control_energy_{}", k + 1), io::fmt_f64(run.control_energy));
    }
    let state = Series {
        label: "state_cost".to_string(),
        points: main.times.iter().zip(&main.state_costs).map(|(&t, &v)| (t, v)).collect(),
    };
    let cumulative = Series {
        label: "cumulative".to_string(),
        points: main
            .times
            .iter()
            .zip(&main.cumulative_discounted)
            .map(|(&t, &v)| (t, v))
            .collect(),
    };
    art.plot(
        "feedback.svg",
        line_plot("feedback run", "t", "cost", &[state, cumulative]),
    )?;
    Ok(())
}

fn exec_certify(p: CertifyPlan, art: &mut Artifacts) -> Result<(), Error> {
    let mut csv = String::from("kernel,constant,max_ratio,lipschitz_estimate,pass\n");
    let mut failed = Vec::new();
    for (name, spec) in &p.entries {
        let cert = certify_growth(spec, p.radius, p.n_samples, p.seed)?;
        csv.push_str(&format!(
            "{name},{},{},{},{}\n",
            io::fmt_f64(cert.constant),
            io::fmt_f64(cert.max_ratio),
            io::fmt_f64(cert.lipschitz_estimate),
            cert.pass()
        ));
        art.note(format!("pass_{name}"), cert.pass().to_string());
        if !cert.pass() {
            failed.push(name.clone());
        }
    }
    art.write("certificates.csv", csv)?;
    if !failed.is_empty() {
        return Err(Error::Numerical(format!(
            "kernel growth certification failed for: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

// ------------------------------------------------------------ artifacts --

pub struct Artifacts {
    dir: PathBuf,
    plots: bool,
    written: Vec<(String, String)>,
    notes: Vec<(String, String)>,
}

impl Artifacts {
    fn new(dir: PathBuf, plots: bool) -> Self {
        Artifacts {
            dir,
            plots,
            written: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn write(&mut self, name: &str, content: String) -> Result<(), Error> {
        fs::write(self.dir.join(name), content.as_bytes())?;
        self.written
            .push((name.to_string(), format!("{:x}", Sha256::digest(content.as_bytes()))));
        Ok(())
    }

    fn plot(&mut self, name: &str, svg: String) -> Result<(), Error> {
        if self.plots {
            self.write(name, svg)
        } else {
            Ok(())
        }
    }

    fn note(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.notes.push((key.into(), value.into()));
    }

    fn write_summary(&mut self) -> Result<(), Error> {
        let pairs: Vec<(&str, String)> = self
            .notes
            .iter()
            .map(|(k, v)| (k.as_str(), v.clone()))
            .collect();
        let text = io::summary_text(&pairs);
        self.write("summary.txt", text)
    }

    /// The manifest lists every artifact with its content hash, after the
    /// config hash and seed, so a run can be audited file by file. It is
    /// written last and not listed in itself.
    fn write_manifest(&mut self, cfg: &Config, seed: Option<u64>) -> Result<(), Error> {
        let mut text = String::new();
        text.push_str(&format!("tool = leadfield {}\n", env!("CARGO_PKG_VERSION")));
        text.push_str(&format!(
            "config_sha256 = {:x}\n",
            Sha256::digest(cfg.text.as_bytes())
        ));
        match seed {
            Some(s) => text.push_str(&format!("seed = {s}\n")),
            None => text.push_str("seed = none\n"),
        }
        let mut files = self.written.clone();
        files.sort();
        text.push_str(&format!("files = {}\n", files.len()));
        for (name, hash) in &files {
            text.push_str(&format!("file {name} sha256={hash}\n"));
        }
        fs::write(self.dir.join("manifest"), text)?;
        Ok(())
    }

    fn hash_of(&self, name: &str) -> Option<&str> {
        self.written
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, h)| h.as_str())
    }
}

/// Compare the run's artifacts against the frozen `NAME.expected` file next
/// to the config: one `<artifact> <sha256>` pair per line.
fn check_expected(config_path: &Path, art: &Artifacts) -> Result<(), RunError> {
    let path = config_path.with_extension("expected");
    let text = fs::read_to_string(&path).map_err(|e| {
        one(Diagnostic {
            line: 0,
            field: path.display().to_string(),
            message: format!("expected-hash file unreadable: {e}"),
        })
    })?;
    let mut drifted = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (Some(name), Some(expected)) = (parts.next(), parts.next()) else {
            return Err(one(Diagnostic {
                line: idx + 1,
                field: path.display().to_string(),
                message: "expected `<artifact> <sha256>`".to_string(),
            }));
        };
        match art.hash_of(name) {
            Some(actual) if actual == expected => {}
            Some(actual) => drifted.push(format!(
                "{name}: sha256 {actual} does not match frozen {expected}"
            )),
            None => drifted.push(format!("{name}: not produced by this run")),
        }
    }
    if drifted.is_empty() {
        Ok(())
    } else {
        Err(RunError::Check(drifted))
    }
}
