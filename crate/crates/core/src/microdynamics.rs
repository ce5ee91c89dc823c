//! Time integration of the coupled leader/follower system.
//!
//! Leaders move with velocity equal to the control; each follower feels the
//! follower ensemble through `H` and every leader through the control-weighted
//! kernels `G^l`. The follower drift loop is data-parallel and summation
//! orders are canonicalized, so results are byte-identical across thread
//! counts and follower relabelings.

use crate::error::{Error, Result};
use crate::geom;
use crate::kernels::KernelSpec;
use rayon::prelude::*;

/// Positions of all agents at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    /// Leader positions, `m` vectors in R^d.
    pub leaders: Vec<Vec<f64>>,
    /// Follower positions, `N >= 1` vectors in R^d.
    pub followers: Vec<Vec<f64>>,
    /// Time stamp in [0, T].
    pub time: f64,
}

impl SwarmState {
    pub fn new(leaders: Vec<Vec<f64>>, followers: Vec<Vec<f64>>, time: f64) -> Result<Self> {
        if followers.is_empty() {
            return Err(Error::input("swarm needs at least one follower"));
        }
        let d = followers[0].len();
        if d == 0 {
            return Err(Error::input("swarm dimension must be positive"));
        }
        for x in leaders.iter().chain(followers.iter()) {
            if x.len() != d {
                return Err(Error::input(format!(
                    "mixed agent dimensions: expected {d}, found {}",
                    x.len()
                )));
            }
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::input("non-finite agent coordinate"));
            }
        }
        if !time.is_finite() {
            return Err(Error::input("non-finite state time"));
        }
        Ok(Self { leaders, followers, time })
    }

    pub fn num_leaders(&self) -> usize {
        self.leaders.len()
    }

    pub fn num_followers(&self) -> usize {
        self.followers.len()
    }

    pub fn dim(&self) -> usize {
        self.followers[0].len()
    }
}

/// Piecewise-constant control on a breakpoint grid covering [0, T].
///
/// Values are per-leader velocity vectors; construction radially clamps each
/// leader's value into the admissible ball of radius `u_max`, so a signal
/// always satisfies its own bound.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSignal {
    /// Strictly increasing, `breakpoints[0] = 0`, last entry = T.
    pub breakpoints: Vec<f64>,
    /// `values[piece][k]` is leader k's velocity on `[breakpoints[piece], breakpoints[piece+1])`.
    pub values: Vec<Vec<Vec<f64>>>,
    /// Radius of the per-leader admissible ball.
    pub u_max: f64,
}

impl ControlSignal {
    pub fn new(breakpoints: Vec<f64>, values: Vec<Vec<Vec<f64>>>, u_max: f64) -> Result<Self> {
        if !(u_max.is_finite() && u_max >= 0.0) {
            return Err(Error::input("control bound must be finite and nonnegative"));
        }
        if breakpoints.len() < 2 {
            return Err(Error::input("control grid needs at least two breakpoints"));
        }
        if breakpoints[0] != 0.0 {
            return Err(Error::input("control grid must start at t = 0"));
        }
        for w in breakpoints.windows(2) {
            if !(w[1].is_finite() && w[1] > w[0]) {
                return Err(Error::input("control breakpoints must be strictly increasing"));
            }
        }
        if values.len() != breakpoints.len() - 1 {
            return Err(Error::input(format!(
                "control has {} pieces but {} breakpoint intervals",
                values.len(),
                breakpoints.len() - 1
            )));
        }
        let m = values[0].len();
        let d = values[0].first().map_or(0, Vec::len);
        let mut values = values;
        for piece in &mut values {
            if piece.len() != m {
                return Err(Error::input("control pieces disagree on leader count"));
            }
            for u_k in piece.iter_mut() {
                if u_k.len() != d || d == 0 {
                    return Err(Error::input("control rows disagree on dimension"));
                }
                if !u_k.iter().all(|v| v.is_finite()) {
                    return Err(Error::input("non-finite control value"));
                }
                project_ball(u_k, u_max);
            }
        }
        Ok(Self { breakpoints, values, u_max })
    }

    /// Single-piece signal holding `u` on all of [0, t_end].
    pub fn constant(u: Vec<Vec<f64>>, t_end: f64, u_max: f64) -> Result<Self> {
        Self::new(vec![0.0, t_end], vec![u], u_max)
    }

    pub fn zero(m: usize, d: usize, t_end: f64, u_max: f64) -> Result<Self> {
        Self::constant(vec![vec![0.0; d]; m], t_end, u_max)
    }

    pub fn num_leaders(&self) -> usize {
        self.values[0].len()
    }

    pub fn dim(&self) -> usize {
        self.values[0].first().map_or(0, Vec::len)
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().unwrap()
    }

    /// Left-continuous sample: the piece whose half-open interval contains `t`
    /// (the final piece for `t >= T`).
    pub fn sample(&self, t: f64) -> &[Vec<f64>] {
        let idx = self.breakpoints.partition_point(|b| *b <= t);
        &self.values[idx.saturating_sub(1).min(self.values.len() - 1)]
    }
}

/// Radial clamp of one leader value into the ball of radius `u_max`.
///
/// The output always satisfies `norm(u) <= u_max` under recomputation, so
/// projecting twice is exactly the identity on the second pass: the floating
/// rescale can land a hair outside the ball, and the trailing loop shaves
/// ulps until it is inside (each pass shrinks every entry by at least one
/// ulp, so it terminates).
pub(crate) fn project_ball(u: &mut [f64], u_max: f64) {
    if u_max == 0.0 {
        for v in u.iter_mut() {
            *v = 0.0;
        }
        return;
    }
    let r = geom::norm(u);
    if r <= u_max {
        return;
    }
    let s = u_max / r;
    for v in u.iter_mut() {
        *v *= s;
    }
    while geom::norm(u) > u_max {
        for v in u.iter_mut() {
            *v *= 1.0 - 2e-16;
        }
    }
}

/// Interaction kernels for one system: `h` couples followers to followers,
/// `g[l]` couples followers to leaders through the l-th control component.
#[derive(Debug, Clone)]
pub struct KernelSet {
    pub h: KernelSpec,
    pub g: Vec<KernelSpec>,
}

impl KernelSet {
    pub fn new(h: KernelSpec, g: Vec<KernelSpec>) -> Result<Self> {
        let d = h.dim;
        if d == 0 {
            return Err(Error::input("kernel dimension must be positive"));
        }
        if g.len() != d {
            return Err(Error::input(format!(
                "need one leader kernel per dimension: got {} for d = {d}",
                g.len()
            )));
        }
        if g.iter().any(|k| k.dim != d) {
            return Err(Error::input("leader kernels disagree on dimension"));
        }
        Ok(Self { h, g })
    }

    pub fn zero(d: usize) -> Self {
        Self {
            h: KernelSpec::zero(d),
            g: vec![KernelSpec::zero(d); d],
        }
    }

    pub fn dim(&self) -> usize {
        self.h.dim
    }

    pub fn g_all_zero(&self) -> bool {
        self.g.iter().all(KernelSpec::is_zero)
    }
}

/// Linear-growth constant for the full drift: with `C_H`, `C_Gl` the kernel
/// growth certificates, every admissible control keeps the state-norm
/// derivative below `C (1 + ||state||)` for
/// `C = u_max + 2 C_H + u_max * sum_l C_Gl`.
pub fn gronwall_constant(kernels: &KernelSet, u_max: f64) -> f64 {
    let g_sum: f64 = kernels.g.iter().map(KernelSpec::growth_constant).sum();
    u_max + 2.0 * kernels.h.growth_constant() + u_max * g_sum
}

/// Mean of `h` evaluated against displacement to every point: `(1/n) sum_j h(x - p_j)`.
///
/// Per-component sums run in canonical (sorted) order, so the result is
/// invariant under any relabeling of `points`.
pub(crate) fn uniform_h_sum(h: &KernelSpec, x: &[f64], points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let d = x.len();
    if h.is_zero() || points.is_empty() {
        return Ok(geom::zeros(d));
    }
    let mut vals = Vec::with_capacity(points.len());
    for p in points {
        vals.push(h.eval_h(&geom::sub(x, p))?);
    }
    let scale = 1.0 / points.len() as f64;
    let mut out = geom::zeros(d);
    let mut scratch = vec![0.0; points.len()];
    for c in 0..d {
        for (s, v) in scratch.iter_mut().zip(vals.iter()) {
            *s = v[c];
        }
        out[c] = geom::sorted_sum(&mut scratch) * scale;
    }
    Ok(out)
}

/// Control-weighted leader kernel sum at displacement `xi`: `sum_l w_l g^l(xi)`.
pub(crate) fn weighted_g_sum(g: &[KernelSpec], xi: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    let mut out = geom::zeros(xi.len());
    for (ell, spec) in g.iter().enumerate() {
        let v = spec.eval_g(ell + 1, xi)?;
        geom::axpy(&mut out, w[ell], &v);
    }
    Ok(out)
}

fn follower_drift(
    x_i: &[f64],
    leaders: &[Vec<f64>],
    followers: &[Vec<f64>],
    u_now: &[Vec<f64>],
    kernels: &KernelSet,
) -> Result<Vec<f64>> {
    let mut dx = uniform_h_sum(&kernels.h, x_i, followers)?;
    if !kernels.g_all_zero() {
        let inv_m = 1.0 / leaders.len() as f64;
        for (y_k, u_k) in leaders.iter().zip(u_now.iter()) {
            let pull = weighted_g_sum(&kernels.g, &geom::sub(x_i, y_k), u_k)?;
            geom::axpy(&mut dx, inv_m, &pull);
        }
    }
    Ok(dx)
}

pub(crate) fn drift_raw(
    leaders: &[Vec<f64>],
    followers: &[Vec<f64>],
    u_now: &[Vec<f64>],
    kernels: &KernelSet,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let dy: Vec<Vec<f64>> = u_now.to_vec();
    let dx = followers
        .par_iter()
        .map(|x_i| follower_drift(x_i, leaders, followers, u_now, kernels))
        .collect::<Result<Vec<_>>>()?;
    Ok((dy, dx))
}

/// Instantaneous velocities of all agents.
///
/// Leaders move with their control. Follower i feels the mean of
/// `h(X_i - X_j)` over all followers j (the j = i term included) plus the
/// leader-averaged, control-weighted `g` kernels.
pub fn drift(
    state: &SwarmState,
    u_now: &[Vec<f64>],
    kernels: &KernelSet,
) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>)> {
    let d = state.dim();
    if kernels.dim() != d {
        return Err(Error::input(format!(
            "kernel dimension {} does not match state dimension {d}",
            kernels.dim()
        )));
    }
    if u_now.len() != state.num_leaders() {
        return Err(Error::input(format!(
            "control has {} rows for {} leaders",
            u_now.len(),
            state.num_leaders()
        )));
    }
    if u_now.iter().any(|u_k| u_k.len() != d) {
        return Err(Error::input("control row dimension mismatch"));
    }
    if state.num_leaders() == 0 && !kernels.g_all_zero() {
        return Err(Error::config(
            "leader kernels are active but the swarm has no leaders",
        ));
    }
    drift_raw(&state.leaders, &state.followers, u_now, kernels)
}

/// Time-stepping scheme for `integrate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Euler,
    Rk4,
}

/// States on the uniform grid `0, dt, 2 dt, ..., T` together with the control
/// that produced them. Consecutive states satisfy the one-step update of the
/// integrator exactly, so runs are replayable.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<SwarmState>,
    pub control: ControlSignal,
    pub dt: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &SwarmState {
        self.states.last().unwrap()
    }

    pub fn duration(&self) -> f64 {
        (self.states.len() - 1) as f64 * self.dt
    }
}

/// Index of the uniform grid point equal to `t`, or an input error when `t`
/// does not align with the grid (no silent resampling).
pub(crate) fn grid_index(t: f64, dt: f64, what: &str) -> Result<usize> {
    let k = (t / dt).round();
    if k < 0.0 || (k * dt - t).abs() > 1e-9 * t.abs().max(1.0) {
        return Err(Error::input(format!(
            "{what} {t} is not aligned with the step size {dt}"
        )));
    }
    Ok(k as usize)
}

/// Integrates the coupled system from `initial` to time `t_end`.
///
/// The control is sampled left-continuously; every breakpoint must sit on the
/// uniform `dt` grid so each step lies inside a single constant piece. For
/// `Method::Rk4` all four stages see the same control value.
pub fn integrate(
    initial: &SwarmState,
    control: &ControlSignal,
    kernels: &KernelSet,
    t_end: f64,
    dt: f64,
    method: Method,
) -> Result<Trajectory> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(Error::input("final time must be positive"));
    }
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::input("step size must be positive"));
    }
    let d = initial.dim();
    if control.num_leaders() != initial.num_leaders() {
        return Err(Error::input(format!(
            "control drives {} leaders but the state has {}",
            control.num_leaders(),
            initial.num_leaders()
        )));
    }
    if control.num_leaders() > 0 && control.dim() != d {
        return Err(Error::input("control dimension does not match the state"));
    }
    if (control.horizon() - t_end).abs() > 1e-9 * t_end.max(1.0) {
        return Err(Error::input(format!(
            "control grid ends at {} but integration runs to {t_end}",
            control.horizon()
        )));
    }
    let n_steps = grid_index(t_end, dt, "final time")?;
    if n_steps == 0 {
        return Err(Error::input("final time must be at least one step"));
    }
    // Breakpoints map onto step indices; piece boundaries are crossed only
    // between steps, never inside one.
    let mut piece_starts = Vec::with_capacity(control.breakpoints.len());
    for b in &control.breakpoints {
        piece_starts.push(grid_index(*b, dt, "control breakpoint")?);
    }

    let mut states = Vec::with_capacity(n_steps + 1);
    states.push(SwarmState { time: 0.0, ..initial.clone() });
    let mut piece = 0usize;
    for n in 0..n_steps {
        while piece + 1 < control.values.len() && piece_starts[piece + 1] <= n {
            piece += 1;
        }
        let u_now = &control.values[piece];
        let prev = states.last().unwrap();
        let (leaders, followers) = step(prev, u_now, kernels, dt, method)?;
        states.push(SwarmState {
            leaders,
            followers,
            time: (n + 1) as f64 * dt,
        });
    }
    Ok(Trajectory { states, control: control.clone(), dt })
}

type Positions = (Vec<Vec<f64>>, Vec<Vec<f64>>);

fn advanced(state: &SwarmState, dy: &[Vec<f64>], dx: &[Vec<f64>], h: f64) -> Positions {
    let leaders = state
        .leaders
        .iter()
        .zip(dy)
        .map(|(y, v)| {
            let mut y = y.clone();
            geom::axpy(&mut y, h, v);
            y
        })
        .collect();
    let followers = state
        .followers
        .iter()
        .zip(dx)
        .map(|(x, v)| {
            let mut x = x.clone();
            geom::axpy(&mut x, h, v);
            x
        })
        .collect();
    (leaders, followers)
}

fn step(
    state: &SwarmState,
    u_now: &[Vec<f64>],
    kernels: &KernelSet,
    dt: f64,
    method: Method,
) -> Result<Positions> {
    if state.num_leaders() == 0 && !kernels.g_all_zero() {
        return Err(Error::config(
            "leader kernels are active but the swarm has no leaders",
        ));
    }
    match method {
        Method::Euler => {
            let (dy, dx) = drift_raw(&state.leaders, &state.followers, u_now, kernels)?;
            Ok(advanced(state, &dy, &dx, dt))
        }
        Method::Rk4 => {
            let (ky1, kx1) = drift_raw(&state.leaders, &state.followers, u_now, kernels)?;
            let (ly, lx) = advanced(state, &ky1, &kx1, dt / 2.0);
            let (ky2, kx2) = drift_raw(&ly, &lx, u_now, kernels)?;
            let (ly, lx) = advanced(state, &ky2, &kx2, dt / 2.0);
            let (ky3, kx3) = drift_raw(&ly, &lx, u_now, kernels)?;
            let (ly, lx) = advanced(state, &ky3, &kx3, dt);
            let (ky4, kx4) = drift_raw(&ly, &lx, u_now, kernels)?;
            let combine = |k1: &[Vec<f64>], k2: &[Vec<f64>], k3: &[Vec<f64>], k4: &[Vec<f64>]| {
                (0..k1.len())
                    .map(|i| {
                        (0..k1[i].len())
                            .map(|c| {
                                (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]) / 6.0
                            })
                            .collect::<Vec<f64>>()
                    })
                    .collect::<Vec<Vec<f64>>>()
            };
            let dy = combine(&ky1, &ky2, &ky3, &ky4);
            let dx = combine(&kx1, &kx2, &kx3, &kx4);
            Ok(advanced(state, &dy, &dx, dt))
        }
    }
}

/// Leader-averaged plus follower-averaged magnitude:
/// `(1/m) sum_k |Y_k| + (1/N) sum_i |X_i|`. Needs at least one leader.
pub fn state_norm(state: &SwarmState) -> Result<f64> {
    if state.num_leaders() == 0 {
        return Err(Error::input("state norm is undefined without leaders"));
    }
    let m = state.num_leaders() as f64;
    let n = state.num_followers() as f64;
    let y: f64 = state.leaders.iter().map(|y| geom::norm(y)).sum();
    let x: f64 = state.followers.iter().map(|x| geom::norm(x)).sum();
    Ok(y / m + x / n)
}

fn norm_of_difference(a: &SwarmState, b: &SwarmState) -> f64 {
    let m = a.num_leaders() as f64;
    let n = a.num_followers() as f64;
    let y: f64 = a
        .leaders
        .iter()
        .zip(&b.leaders)
        .map(|(p, q)| geom::dist(p, q))
        .sum();
    let x: f64 = a
        .followers
        .iter()
        .zip(&b.followers)
        .map(|(p, q)| geom::dist(p, q))
        .sum();
    y / m + x / n
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundsReport {
    /// Whether `max_t ||state(t)|| <= (||state(0)|| + C T) e^{C T}` held.
    pub growth_ok: bool,
    /// Largest difference quotient `||state(t1) - state(t2)|| / |t1 - t2|`
    /// over grid pairs. By the triangle inequality the maximum over all pairs
    /// is attained on adjacent ones, so only those are scanned.
    pub lipschitz_constant: f64,
}

/// Checks a trajectory against the linear-growth bound with constant `c_tilde`
/// and measures its time-Lipschitz constant.
pub fn check_apriori_bounds(traj: &Trajectory, c_tilde: f64) -> Result<BoundsReport> {
    if !(c_tilde.is_finite() && c_tilde > 0.0) {
        return Err(Error::input("growth constant must be positive"));
    }
    let t_total = traj.duration();
    let norm0 = state_norm(&traj.states[0])?;
    let mut max_norm = norm0;
    for s in &traj.states[1..] {
        max_norm = max_norm.max(state_norm(s)?);
    }
    let bound = (norm0 + c_tilde * t_total) * (c_tilde * t_total).exp();
    let mut lipschitz_constant = 0.0f64;
    for w in traj.states.windows(2) {
        lipschitz_constant = lipschitz_constant.max(norm_of_difference(&w[0], &w[1]) / traj.dt);
    }
    Ok(BoundsReport {
        growth_ok: max_norm <= bound,
        lipschitz_constant,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state1d(leaders: &[f64], followers: &[f64]) -> SwarmState {
        SwarmState::new(
            leaders.iter().map(|v| vec![*v]).collect(),
            followers.iter().map(|v| vec![*v]).collect(),
            0.0,
        )
        .unwrap()
    }

    fn linear_attraction(d: usize) -> KernelSpec {
        crate::kernels::linear_attraction(d, 10.0)
    }

    #[test]
    fn drift_zero_everything() {
        let st = state1d(&[1.0], &[2.0, -3.0]);
        let (dy, dx) = drift(&st, &[vec![0.0]], &KernelSet::zero(1)).unwrap();
        assert_eq!(dy, vec![vec![0.0]]);
        assert_eq!(dx, vec![vec![0.0], vec![0.0]]);
    }

    #[test]
    fn drift_follower_copies_leader_velocity_through_unit_kernel() {
        let st = state1d(&[0.0], &[10.0]);
        let kernels = KernelSet::new(KernelSpec::zero(1), vec![KernelSpec::constant(1, 1.0)]).unwrap();
        let (dy, dx) = drift(&st, &[vec![5.0]], &kernels).unwrap();
        assert_eq!(dy, vec![vec![5.0]]);
        assert_eq!(dx, vec![vec![5.0]]);
    }

    #[test]
    fn drift_attraction_hand_sum() {
        // (1/2)[h(0) + h(-2)] = 1 and (1/2)[h(2) + h(0)] = -1 for h(xi) = -xi.
        let st = state1d(&[0.0], &[0.0, 2.0]);
        let kernels = KernelSet::new(linear_attraction(1), vec![KernelSpec::zero(1)]).unwrap();
        let (_, dx) = drift(&st, &[vec![0.0]], &kernels).unwrap();
        assert!((dx[0][0] - 1.0).abs() < 1e-15);
        assert!((dx[1][0] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn drift_rejects_leaderless_state_with_active_g() {
        let st = SwarmState::new(vec![], vec![vec![0.0]], 0.0).unwrap();
        let kernels = KernelSet::new(KernelSpec::zero(1), vec![KernelSpec::constant(1, 1.0)]).unwrap();
        let err = drift(&st, &[], &kernels).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn drift_permutation_equivariant_bitwise() {
        let st = state1d(&[0.3], &[0.0, 2.0, -1.5, 0.7]);
        let kernels = KernelSet::new(
            KernelSpec::attraction_repulsion(1, 1.3),
            vec![KernelSpec::stokes_like(1, 0.8)],
        )
        .unwrap();
        let u = vec![vec![0.9]];
        let (_, dx) = drift(&st, &u, &kernels).unwrap();
        // follower i of the original sits at position perm[i] below
        let perm = [1usize, 3, 0, 2];
        let permuted = state1d(&[0.3], &[-1.5, 0.0, 0.7, 2.0]);
        let (_, dx_p) = drift(&permuted, &u, &kernels).unwrap();
        for (i, &pi) in perm.iter().enumerate() {
            assert_eq!(dx[i][0].to_bits(), dx_p[pi][0].to_bits());
        }
    }

    #[test]
    fn drift_affine_in_control() {
        let st = SwarmState::new(
            vec![vec![0.2, -0.1], vec![1.0, 0.5]],
            vec![vec![0.0, 0.0], vec![1.5, -2.0], vec![-0.3, 0.4]],
            0.0,
        )
        .unwrap();
        let kernels = KernelSet::new(
            KernelSpec::attraction_repulsion(2, 0.7),
            vec![KernelSpec::stokes_like(2, 1.1), KernelSpec::constant(2, 0.4)],
        )
        .unwrap();
        let u1 = vec![vec![1.0, -0.5], vec![0.25, 2.0]];
        let u2 = vec![vec![-0.75, 0.5], vec![1.5, -1.0]];
        let alpha = 0.375;
        let mix: Vec<Vec<f64>> = u1
            .iter()
            .zip(&u2)
            .map(|(a, b)| {
                a.iter()
                    .zip(b)
                    .map(|(p, q)| alpha * p + (1.0 - alpha) * q)
                    .collect()
            })
            .collect();
        let (_, dx1) = drift(&st, &u1, &kernels).unwrap();
        let (_, dx2) = drift(&st, &u2, &kernels).unwrap();
        let (_, dxm) = drift(&st, &mix, &kernels).unwrap();
        for i in 0..3 {
            for c in 0..2 {
                let expect = alpha * dx1[i][c] + (1.0 - alpha) * dx2[i][c];
                assert!(
                    (dxm[i][c] - expect).abs() <= 1e-12 * (expect.abs().max(1.0)),
                    "affine mismatch at ({i},{c})"
                );
            }
        }
    }

    #[test]
    fn delete_leaders_does_not_change_followers_without_g() {
        let kernels =
            KernelSet::new(KernelSpec::attraction_repulsion(1, 1.0), vec![KernelSpec::zero(1)])
                .unwrap();
        let with = state1d(&[5.0, -7.0], &[0.0, 1.0, 2.5]);
        let without = SwarmState::new(vec![], with.followers.clone(), 0.0).unwrap();
        let u = ControlSignal::zero(2, 1, 1.0, 3.0).unwrap();
        let u_none = ControlSignal::new(vec![0.0, 1.0], vec![vec![]], 3.0).unwrap();
        let a = integrate(&with, &u, &kernels, 1.0, 0.1, Method::Euler).unwrap();
        let b = integrate(&without, &u_none, &kernels, 1.0, 0.1, Method::Euler).unwrap();
        for (sa, sb) in a.states.iter().zip(&b.states) {
            assert_eq!(sa.followers, sb.followers);
        }
    }

    #[test]
    fn integrate_zero_dynamics_is_constant() {
        let st = state1d(&[1.0], &[2.0, -3.0]);
        let u = ControlSignal::zero(1, 1, 2.0, 1.0).unwrap();
        let traj = integrate(&st, &u, &KernelSet::zero(1), 2.0, 0.25, Method::Rk4).unwrap();
        assert_eq!(traj.states.len(), 9);
        for s in &traj.states {
            assert_eq!(s.leaders, st.leaders);
            assert_eq!(s.followers, st.followers);
        }
    }

    #[test]
    fn integrate_linear_leader_motion_exact_under_euler() {
        let st = state1d(&[1.0], &[0.0]);
        let c = -0.5;
        let u = ControlSignal::constant(vec![vec![c]], 1.0, 1.0).unwrap();
        let traj = integrate(&st, &u, &KernelSet::zero(1), 1.0, 0.125, Method::Euler).unwrap();
        for (n, s) in traj.states.iter().enumerate() {
            let t = n as f64 * 0.125;
            assert!((s.leaders[0][0] - (1.0 + c * t)).abs() < 1e-14);
        }
    }

    #[test]
    fn integrate_one_euler_step_matches_hand_value() {
        let st = state1d(&[0.0], &[0.0, 2.0]);
        let kernels = KernelSet::new(linear_attraction(1), vec![KernelSpec::zero(1)]).unwrap();
        let u = ControlSignal::zero(1, 1, 0.1, 1.0).unwrap();
        let traj = integrate(&st, &u, &kernels, 0.1, 0.1, Method::Euler).unwrap();
        let x = &traj.states[1].followers;
        assert!((x[0][0] - 0.1).abs() < 1e-15);
        assert!((x[1][0] - 1.9).abs() < 1e-15);
    }

    #[test]
    fn integrate_rejects_unaligned_breakpoints() {
        let st = state1d(&[0.0], &[1.0]);
        let u = ControlSignal::new(
            vec![0.0, 0.35, 1.0],
            vec![vec![vec![1.0]], vec![vec![-1.0]]],
            2.0,
        )
        .unwrap();
        let err = integrate(&st, &u, &KernelSet::zero(1), 1.0, 0.1, Method::Euler).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn integrate_switches_pieces_left_continuously() {
        let st = state1d(&[0.0], &[0.0]);
        let u = ControlSignal::new(
            vec![0.0, 0.5, 1.0],
            vec![vec![vec![1.0]], vec![vec![-1.0]]],
            2.0,
        )
        .unwrap();
        let traj = integrate(&st, &u, &KernelSet::zero(1), 1.0, 0.25, Method::Euler).unwrap();
        let y: Vec<f64> = traj.states.iter().map(|s| s.leaders[0][0]).collect();
        assert_eq!(y, vec![0.0, 0.25, 0.5, 0.25, 0.0]);
    }

    #[test]
    fn control_constructor_projects_into_ball() {
        let u = ControlSignal::constant(vec![vec![3.0, 4.0]], 1.0, 1.0).unwrap();
        let v = &u.values[0][0];
        assert!((geom::norm(v) - 1.0).abs() < 1e-15);
        assert!((v[0] - 0.6).abs() < 1e-15 && (v[1] - 0.8).abs() < 1e-15);
    }

    proptest! {
        // Projecting an already-projected value changes nothing, bit for bit.
        #[test]
        fn projection_is_exactly_idempotent(
            v in proptest::collection::vec(-50.0f64..50.0, 1..5),
            u_max in 0.0f64..3.0,
        ) {
            let mut once = v.clone();
            project_ball(&mut once, u_max);
            prop_assert!(geom::norm(&once) <= u_max);
            let mut twice = once.clone();
            project_ball(&mut twice, u_max);
            let a: Vec<u64> = once.iter().map(|x| x.to_bits()).collect();
            let b: Vec<u64> = twice.iter().map(|x| x.to_bits()).collect();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn control_sample_is_left_continuous() {
        let u = ControlSignal::new(
            vec![0.0, 0.5, 1.0],
            vec![vec![vec![1.0]], vec![vec![-1.0]]],
            2.0,
        )
        .unwrap();
        assert_eq!(u.sample(0.0)[0][0], 1.0);
        assert_eq!(u.sample(0.49)[0][0], 1.0);
        assert_eq!(u.sample(0.5)[0][0], -1.0);
        assert_eq!(u.sample(1.0)[0][0], -1.0);
    }

    #[test]
    fn state_norm_examples() {
        let origin = state1d(&[0.0], &[0.0]);
        assert_eq!(state_norm(&origin).unwrap(), 0.0);
        let st = SwarmState::new(vec![vec![3.0, 4.0]], vec![vec![0.0, 0.0]], 0.0).unwrap();
        assert!((state_norm(&st).unwrap() - 5.0).abs() < 1e-15);
        let st = state1d(&[1.0, -1.0], &[2.0, -2.0]);
        assert!((state_norm(&st).unwrap() - 3.0).abs() < 1e-15);
        let no_leaders = SwarmState::new(vec![], vec![vec![1.0]], 0.0).unwrap();
        assert!(matches!(state_norm(&no_leaders), Err(Error::Input(_))));
    }

    #[test]
    fn bounds_constant_trajectory() {
        let st = state1d(&[1.0], &[2.0]);
        let u = ControlSignal::zero(1, 1, 1.0, 1.0).unwrap();
        let traj = integrate(&st, &u, &KernelSet::zero(1), 1.0, 0.1, Method::Euler).unwrap();
        let rep = check_apriori_bounds(&traj, 0.5).unwrap();
        assert!(rep.growth_ok);
        assert_eq!(rep.lipschitz_constant, 0.0);
    }

    #[test]
    fn bounds_linear_leader_motion_has_lipschitz_u_max() {
        let u_max = 0.75;
        let st = SwarmState::new(
            vec![vec![0.0], vec![0.0]],
            vec![vec![1.0]],
            0.0,
        )
        .unwrap();
        let u = ControlSignal::constant(vec![vec![u_max], vec![u_max]], 1.0, u_max).unwrap();
        let traj = integrate(&st, &u, &KernelSet::zero(1), 1.0, 0.1, Method::Euler).unwrap();
        let rep = check_apriori_bounds(&traj, u_max).unwrap();
        assert!((rep.lipschitz_constant - u_max).abs() < 1e-12);
        assert!(rep.growth_ok);
    }

    #[test]
    fn bounds_hold_on_catalog_runs_with_certified_constant() {
        for seed in 0..5u64 {
            let mut rng = crate::rng::stream(seed, crate::rng::Purpose::InitCloud, 0, 0);
            let d = 2;
            let leaders: Vec<Vec<f64>> =
                (0..2).map(|_| crate::rng::uniform_in_ball(&mut rng, d, 2.0)).collect();
            let followers: Vec<Vec<f64>> =
                (0..12).map(|_| crate::rng::uniform_in_ball(&mut rng, d, 2.0)).collect();
            let st = SwarmState::new(leaders, followers, 0.0).unwrap();
            let kernels = KernelSet::new(
                KernelSpec::attraction_repulsion(d, 1.5),
                vec![KernelSpec::stokes_like(d, 1.0), KernelSpec::constant(d, 0.5)],
            )
            .unwrap();
            let u_max = 1.2;
            let u = ControlSignal::constant(vec![vec![0.9, -0.4], vec![-0.2, 0.7]], 1.0, u_max)
                .unwrap();
            let c = gronwall_constant(&kernels, u_max);
            for method in [Method::Euler, Method::Rk4] {
                let traj = integrate(&st, &u, &kernels, 1.0, 0.05, method).unwrap();
                let rep = check_apriori_bounds(&traj, c).unwrap();
                assert!(rep.growth_ok, "seed {seed} violated the growth bound");
                assert!(rep.lipschitz_constant <= c * (1.0 + state_norm(&st).unwrap() + c) * (c).exp());
            }
        }
    }

    #[test]
    fn rk4_euler_gap_halves_with_dt() {
        let st = state1d(&[0.5], &[0.0, 2.0, -1.0]);
        let kernels = KernelSet::new(
            KernelSpec::attraction_repulsion(1, 1.0),
            vec![KernelSpec::stokes_like(1, 0.6)],
        )
        .unwrap();
        let u = ControlSignal::constant(vec![vec![0.8]], 1.0, 1.0).unwrap();
        let gap = |dt: f64| {
            let a = integrate(&st, &u, &kernels, 1.0, dt, Method::Euler).unwrap();
            let b = integrate(&st, &u, &kernels, 1.0, dt, Method::Rk4).unwrap();
            norm_of_difference(a.final_state(), b.final_state())
        };
        let g1 = gap(0.05);
        let g2 = gap(0.025);
        let factor = g1 / g2;
        assert!(
            (1.5..=2.5).contains(&factor),
            "euler-vs-rk4 gap ratio {factor} outside [1.5, 2.5]"
        );
    }

    #[test]
    fn trajectory_replayable_step_by_step() {
        let st = state1d(&[0.1], &[0.0, 1.0]);
        let kernels = KernelSet::new(
            KernelSpec::attraction_repulsion(1, 0.9),
            vec![KernelSpec::constant(1, 0.3)],
        )
        .unwrap();
        let u = ControlSignal::constant(vec![vec![0.5]], 0.5, 1.0).unwrap();
        let traj = integrate(&st, &u, &kernels, 0.5, 0.1, Method::Euler).unwrap();
        for n in 0..traj.states.len() - 1 {
            let (leaders, followers) =
                step(&traj.states[n], u.sample(n as f64 * 0.1), &kernels, 0.1, Method::Euler)
                    .unwrap();
            assert_eq!(leaders, traj.states[n + 1].leaders);
            assert_eq!(followers, traj.states[n + 1].followers);
        }
    }
}
