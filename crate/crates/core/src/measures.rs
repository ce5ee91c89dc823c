//! Atomic measures on R^d: empirical follower clouds, signed control-weighted
//! leader measures, kernel convolution, exact Wasserstein-1, and the combined
//! leader-plus-measure metric used to compare coupled solutions.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geom;
use crate::kernels::KernelSpec;
use crate::transport;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasureKind {
    /// Nonnegative weights summing to 1 (within 1e-12).
    Probability,
    /// Arbitrary finite weights; negative mass allowed.
    Signed,
}

/// Finitely supported measure `sum_j weights[j] * delta_{atoms[j]}`.
/// Coincident atoms are kept as-is, never merged or renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedMeasure {
    pub atoms: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
    pub kind: MeasureKind,
}

impl WeightedMeasure {
    pub fn new(atoms: Vec<Vec<f64>>, weights: Vec<f64>, kind: MeasureKind) -> Result<Self> {
        if atoms.is_empty() || atoms.len() != weights.len() {
            return Err(Error::input(
                "measure needs equally many atoms and weights, at least one each",
            ));
        }
        let d = atoms[0].len();
        if d == 0 {
            return Err(Error::input("measure atoms must have positive dimension"));
        }
        for a in &atoms {
            if a.len() != d || !a.iter().all(|v| v.is_finite()) {
                return Err(Error::input("measure atoms must be finite, equal-dimension points"));
            }
        }
        if !weights.iter().all(|w| w.is_finite()) {
            return Err(Error::input("measure weights must be finite"));
        }
        if kind == MeasureKind::Probability {
            if weights.iter().any(|w| *w < 0.0) {
                return Err(Error::input("probability measure has a negative weight"));
            }
            let total: f64 = weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::input(format!(
                    "probability weights sum to {total}, not 1"
                )));
            }
        }
        Ok(Self { atoms, weights, kind })
    }

    pub fn len(&self) -> usize {
        self.atoms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.atoms[0].len()
    }

    pub fn total_mass(&self) -> f64 {
        self.weights.iter().sum()
    }

    fn is_uniform(&self) -> bool {
        let w0 = 1.0 / self.len() as f64;
        self.weights.iter().all(|w| (*w - w0).abs() <= 1e-15)
    }
}

/// Uniform probability measure on the follower positions; duplicates are kept.
pub fn empirical_from_followers(followers: &[Vec<f64>]) -> Result<WeightedMeasure> {
    let n = followers.len();
    WeightedMeasure::new(
        followers.to_vec(),
        vec![1.0 / n as f64; n.max(1)],
        MeasureKind::Probability,
    )
}

/// Signed measure placing weight `u[k][ell-1] / m` on leader k (`ell` is
/// 1-based, one measure per control direction).
pub fn leader_control_measure(
    leaders: &[Vec<f64>],
    u: &[Vec<f64>],
    ell: usize,
) -> Result<WeightedMeasure> {
    let m = leaders.len();
    if m == 0 {
        return Err(Error::input("control measure needs at least one leader"));
    }
    if u.len() != m {
        return Err(Error::input("control rows must match the leader count"));
    }
    let d = leaders[0].len();
    if ell == 0 || ell > d {
        return Err(Error::input(format!(
            "control direction {ell} out of range 1..={d}"
        )));
    }
    let weights = u.iter().map(|u_k| u_k[ell - 1] / m as f64).collect();
    WeightedMeasure::new(leaders.to_vec(), weights, MeasureKind::Signed)
}

/// Convolution of the follower kernel with a measure at `x`:
/// `sum_j w_j k(x - atom_j)`.
pub fn convolve(kernel: &KernelSpec, mu: &WeightedMeasure, x: &[f64]) -> Result<Vec<f64>> {
    if mu.dim() != x.len() {
        return Err(Error::input("convolution point dimension mismatch"));
    }
    let mut out = geom::zeros(x.len());
    for (a, w) in mu.atoms.iter().zip(&mu.weights) {
        let v = kernel.eval_h(&geom::sub(x, a))?;
        geom::axpy(&mut out, *w, &v);
    }
    Ok(out)
}

/// Convolution using the leader-kernel slot for direction `ell` (1-based).
pub fn convolve_g(
    kernel: &KernelSpec,
    ell: usize,
    mu: &WeightedMeasure,
    x: &[f64],
) -> Result<Vec<f64>> {
    if mu.dim() != x.len() {
        return Err(Error::input("convolution point dimension mismatch"));
    }
    let mut out = geom::zeros(x.len());
    for (a, w) in mu.atoms.iter().zip(&mu.weights) {
        let v = kernel.eval_g(ell, &geom::sub(x, a))?;
        geom::axpy(&mut out, *w, &v);
    }
    Ok(out)
}

fn lex_cmp(a: &WeightedMeasure, b: &WeightedMeasure) -> Ordering {
    a.len()
        .cmp(&b.len())
        .then_with(|| {
            for (p, q) in a.atoms.iter().zip(&b.atoms) {
                for (x, y) in p.iter().zip(q) {
                    let ord = x.total_cmp(y);
                    if ord != Ordering::Equal {
                        return ord;
                    }
                }
            }
            Ordering::Equal
        })
        .then_with(|| {
            for (x, y) in a.weights.iter().zip(&b.weights) {
                let ord = x.total_cmp(y);
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            Ordering::Equal
        })
}

/// Exact Wasserstein-1 distance between equal-mass probability measures.
///
/// Solver tiers: d = 1 uses the quantile (CDF-difference) integral for any
/// weights; d >= 2 with equal counts and uniform weights uses minimum-cost
/// matching; everything else uses the transportation solver. Arguments are
/// ordered canonically first, so the distance is bitwise symmetric.
pub fn wasserstein1(mu: &WeightedMeasure, nu: &WeightedMeasure) -> Result<f64> {
    if mu.kind != MeasureKind::Probability || nu.kind != MeasureKind::Probability {
        return Err(Error::input(
            "transport distance is only defined for probability measures here",
        ));
    }
    if mu.dim() != nu.dim() {
        return Err(Error::input("measure dimensions differ"));
    }
    if (mu.total_mass() - nu.total_mass()).abs() > 1e-12 {
        return Err(Error::input("measures carry different total mass"));
    }
    let (a, b) = if lex_cmp(mu, nu) == Ordering::Greater {
        (nu, mu)
    } else {
        (mu, nu)
    };
    if a.dim() == 1 {
        return Ok(w1_line(a, b));
    }
    if a.len() == b.len() && a.is_uniform() && b.is_uniform() {
        let n = a.len();
        let cost: Vec<Vec<f64>> = a
            .atoms
            .iter()
            .map(|p| b.atoms.iter().map(|q| geom::dist(p, q)).collect())
            .collect();
        let (total, _) = transport::assignment_min_cost(&cost);
        return Ok(total / n as f64);
    }
    let cost: Vec<Vec<f64>> = a
        .atoms
        .iter()
        .map(|p| b.atoms.iter().map(|q| geom::dist(p, q)).collect())
        .collect();
    transport::transport_min_cost(&a.weights, &b.weights, &cost)
}

/// One-dimensional W1 as the integral of |F_mu - F_nu|: sweep the merged atom
/// positions, tracking the CDF difference between consecutive positions.
fn w1_line(mu: &WeightedMeasure, nu: &WeightedMeasure) -> f64 {
    let mut events: Vec<(f64, f64)> = Vec::with_capacity(mu.len() + nu.len());
    events.extend(mu.atoms.iter().zip(&mu.weights).map(|(a, w)| (a[0], *w)));
    events.extend(nu.atoms.iter().zip(&nu.weights).map(|(a, w)| (a[0], -*w)));
    events.sort_by(|p, q| p.0.total_cmp(&q.0));
    let mut total = 0.0;
    let mut cdf_gap = 0.0;
    for k in 0..events.len() - 1 {
        cdf_gap += events[k].1;
        total += cdf_gap.abs() * (events[k + 1].0 - events[k].0);
    }
    total
}

/// Distance between two leader/measure pairs: mean leader displacement plus
/// the Wasserstein-1 distance of the measures.
pub fn chi_distance(
    leaders_a: &[Vec<f64>],
    mu_a: &WeightedMeasure,
    leaders_b: &[Vec<f64>],
    mu_b: &WeightedMeasure,
) -> Result<f64> {
    let m = leaders_a.len();
    if m == 0 {
        return Err(Error::input("leader metric needs at least one leader"));
    }
    if leaders_b.len() != m {
        return Err(Error::input("leader counts differ"));
    }
    let mut leader_part = 0.0;
    for (p, q) in leaders_a.iter().zip(leaders_b) {
        leader_part += geom::dist(p, q);
    }
    Ok(leader_part / m as f64 + wasserstein1(mu_a, mu_b)?)
}

/// Radius of the smallest origin-centered ball containing all atoms.
pub fn support_radius(mu: &WeightedMeasure) -> f64 {
    mu.atoms.iter().map(|a| geom::norm(a)).fold(0.0, f64::max)
}
