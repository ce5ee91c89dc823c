//! Interaction kernel catalog.
//!
//! A kernel maps a displacement `ξ = x − y` to a velocity contribution in
//! `R^d`. Two shapes occur:
//!
//! * radial kernels act along the displacement itself
//!   (`attraction_repulsion`, `custom_table`);
//! * directional kernels act along a fixed coordinate axis and come as a
//!   family indexed by `ℓ = 1..d` (`constant`, `stokes_like`).
//!
//! Either shape can be evaluated in either slot of the dynamics. A radial
//! kernel used in a direction-indexed slot ignores `ℓ`; a directional kernel
//! used in the pairwise slot stands in with its first-direction member. Both
//! conventions are exercised by tests.
//!
//! Every catalog entry is bounded, locally Lipschitz and of sub-linear growth;
//! [`certify_growth`] checks the growth ratio `|K(ξ)|/(1+|ξ|)` by seeded
//! sampling and reports a sampled Lipschitz estimate next to the analytic
//! bound.

use crate::error::{Error, Result};
use crate::geom;
use crate::rng::{self, Purpose};
use std::fmt;
use std::path::Path;

/// Catalog tag. `custom_table` is a piecewise-linear radial profile loaded
/// from a two-column text file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelId {
    Zero,
    Constant,
    AttractionRepulsion,
    StokesLike,
    CustomTable,
}

impl fmt::Display for KernelId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            KernelId::Zero => "zero",
            KernelId::Constant => "constant",
            KernelId::AttractionRepulsion => "attraction_repulsion",
            KernelId::StokesLike => "stokes_like",
            KernelId::CustomTable => "custom_table",
        };
        f.write_str(s)
    }
}

/// Radial profile sampled at increasing radii; linear interpolation between
/// nodes, clamped to the last value beyond the table (keeps the kernel
/// bounded). The profile must start at `r = 0` with value 0 so that the
/// resulting kernel `g(|ξ|)·ξ/|ξ|` stays Lipschitz through the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct RadialTable {
    radii: Vec<f64>,
    values: Vec<f64>,
}

impl RadialTable {
    pub fn new(radii: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if radii.len() != values.len() || radii.len() < 2 {
            return Err(Error::input("radial table needs at least two (radius, value) rows"));
        }
        if radii[0] != 0.0 || values[0] != 0.0 {
            return Err(Error::input("radial table must start with the row `0 0`"));
        }
        for w in radii.windows(2) {
            if !(w[1] > w[0]) {
                return Err(Error::input(format!(
                    "radial table radii must increase strictly (saw {} after {})",
                    w[1], w[0]
                )));
            }
        }
        if radii.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::input("radial table entries must be finite"));
        }
        Ok(RadialTable { radii, values })
    }

    /// Interpolated profile value; clamps to the last value past the table.
    pub fn value(&self, r: f64) -> f64 {
        let n = self.radii.len();
        if r >= self.radii[n - 1] {
            return self.values[n - 1];
        }
        // first node strictly above r; r < last radius, so i < n
        let i = self.radii.partition_point(|&x| x <= r);
        let (r0, r1) = (self.radii[i - 1], self.radii[i]);
        let (v0, v1) = (self.values[i - 1], self.values[i]);
        v0 + (v1 - v0) * (r - r0) / (r1 - r0)
    }

    fn max_abs_value(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn max_abs_slope(&self) -> f64 {
        self.radii
            .windows(2)
            .zip(self.values.windows(2))
            .map(|(r, v)| ((v[1] - v[0]) / (r[1] - r[0])).abs())
            .fold(0.0, f64::max)
    }
}

/// One catalog kernel, fixed to an ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSpec {
    pub id: KernelId,
    /// Amplitude parameters; empty for `zero` and `custom_table`.
    pub params: Vec<f64>,
    pub dim: usize,
    table: Option<RadialTable>,
}

impl KernelSpec {
    pub fn zero(dim: usize) -> Self {
        KernelSpec { id: KernelId::Zero, params: vec![], dim, table: None }
    }

    /// `K_ℓ(ξ) = c·e_ℓ`
    pub fn constant(dim: usize, c: f64) -> Self {
        KernelSpec { id: KernelId::Constant, params: vec![c], dim, table: None }
    }

    /// `K(ξ) = −a·ξ/(1+|ξ|)`
    pub fn attraction_repulsion(dim: usize, a: f64) -> Self {
        KernelSpec { id: KernelId::AttractionRepulsion, params: vec![a], dim, table: None }
    }

    /// `K_ℓ(ξ) = c·e_ℓ/(1+|ξ|²)`
    pub fn stokes_like(dim: usize, c: f64) -> Self {
        KernelSpec { id: KernelId::StokesLike, params: vec![c], dim, table: None }
    }

    /// `K(ξ) = g(|ξ|)·ξ/|ξ|` with `g` tabulated; `K(0) = 0`.
    pub fn custom_table(dim: usize, table: RadialTable) -> Self {
        KernelSpec { id: KernelId::CustomTable, params: vec![], dim, table: Some(table) }
    }

    /// Load a custom table from two-column text: one `radius value` pair per
    /// line, `#` starts a comment, blank lines ignored.
    pub fn custom_table_from_path(dim: usize, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut radii = Vec::new();
        let mut values = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split_whitespace().collect();
            if cols.len() != 2 {
                return Err(Error::input(format!(
                    "{}:{}: expected `radius value`, got {:?}",
                    path.display(),
                    lineno + 1,
                    raw
                )));
            }
            let parse = |s: &str| {
                s.parse::<f64>().map_err(|_| {
                    Error::input(format!(
                        "{}:{}: `{}` is not a number",
                        path.display(),
                        lineno + 1,
                        s
                    ))
                })
            };
            radii.push(parse(cols[0])?);
            values.push(parse(cols[1])?);
        }
        Ok(KernelSpec::custom_table(dim, RadialTable::new(radii, values)?))
    }

    pub fn is_zero(&self) -> bool {
        self.id == KernelId::Zero
    }

    fn amplitude(&self) -> f64 {
        self.params.first().copied().unwrap_or(0.0)
    }

    fn check_dim(&self, xi: &[f64]) -> Result<()> {
        if xi.len() != self.dim {
            return Err(Error::input(format!(
                "kernel expects dimension {}, displacement has {}",
                self.dim,
                xi.len()
            )));
        }
        if xi.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("displacement must be finite"));
        }
        Ok(())
    }

    /// Evaluate in the pairwise slot. Directional entries use their
    /// first-direction member here.
    pub fn eval_h(&self, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(xi)?;
        Ok(match self.id {
            KernelId::Zero => geom::zeros(self.dim),
            KernelId::Constant | KernelId::StokesLike => self.directional(1, xi),
            KernelId::AttractionRepulsion => self.attraction(xi),
            KernelId::CustomTable => self.tabled(xi),
        })
    }

    /// Evaluate the `ℓ`-th member of the direction-indexed family
    /// (`1 ≤ ℓ ≤ d`). Radial entries ignore `ℓ`.
    pub fn eval_g(&self, ell: usize, xi: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(xi)?;
        if ell < 1 || ell > self.dim {
            return Err(Error::input(format!(
                "direction index {} outside 1..={}",
                ell, self.dim
            )));
        }
        Ok(match self.id {
            KernelId::Zero => geom::zeros(self.dim),
            KernelId::Constant | KernelId::StokesLike => self.directional(ell, xi),
            KernelId::AttractionRepulsion => self.attraction(xi),
            KernelId::CustomTable => self.tabled(xi),
        })
    }

    fn directional(&self, ell: usize, xi: &[f64]) -> Vec<f64> {
        let mut out = geom::zeros(self.dim);
        out[ell - 1] = match self.id {
            KernelId::Constant => self.amplitude(),
            KernelId::StokesLike => self.amplitude() / (1.0 + geom::dot(xi, xi)),
            _ => unreachable!(),
        };
        out
    }

    fn attraction(&self, xi: &[f64]) -> Vec<f64> {
        let s = -self.amplitude() / (1.0 + geom::norm(xi));
        geom::scale(xi, s)
    }

    fn tabled(&self, xi: &[f64]) -> Vec<f64> {
        let r = geom::norm(xi);
        if r == 0.0 {
            return geom::zeros(self.dim);
        }
        let g = self.table.as_ref().expect("custom kernel carries a table").value(r);
        geom::scale(xi, g / r)
    }

    /// Jacobian in the pairwise slot (row-major `d×d`). Catalog entries are
    /// differentiated analytically; tables fall back to central differences
    /// with `h = 1e-5·(1+|ξ|)` per component.
    pub fn jacobian_h(&self, xi: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(xi)?;
        Ok(match self.id {
            KernelId::Zero | KernelId::Constant => geom::mat_zeros(self.dim, self.dim),
            KernelId::StokesLike => self.stokes_jacobian(1, xi),
            KernelId::AttractionRepulsion => self.attraction_jacobian(xi),
            KernelId::CustomTable => self.fd_jacobian(xi, |k, z| k.tabled(z)),
        })
    }

    /// Jacobian of the `ℓ`-th direction-indexed member.
    pub fn jacobian_g(&self, ell: usize, xi: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_dim(xi)?;
        if ell < 1 || ell > self.dim {
            return Err(Error::input(format!(
                "direction index {} outside 1..={}",
                ell, self.dim
            )));
        }
        Ok(match self.id {
            KernelId::Zero | KernelId::Constant => geom::mat_zeros(self.dim, self.dim),
            KernelId::StokesLike => self.stokes_jacobian(ell, xi),
            KernelId::AttractionRepulsion => self.attraction_jacobian(xi),
            KernelId::CustomTable => self.fd_jacobian(xi, |k, z| k.tabled(z)),
        })
    }

    fn attraction_jacobian(&self, xi: &[f64]) -> Vec<Vec<f64>> {
        // D[−a ξ/(1+r)] = −a [ I/(1+r) − ξξᵀ/(r(1+r)²) ], smooth at 0 with value −aI
        let a = self.amplitude();
        let r = geom::norm(xi);
        let mut j = geom::mat_zeros(self.dim, self.dim);
        for i in 0..self.dim {
            j[i][i] = -a / (1.0 + r);
        }
        if r > 0.0 {
            let c = a / (r * (1.0 + r) * (1.0 + r));
            for i in 0..self.dim {
                for k in 0..self.dim {
                    j[i][k] += c * xi[i] * xi[k];
                }
            }
        }
        j
    }

    fn stokes_jacobian(&self, ell: usize, xi: &[f64]) -> Vec<Vec<f64>> {
        // D[c e_ℓ/(1+r²)] has a single nonzero row: −2c ξᵀ/(1+r²)²
        let c = self.amplitude();
        let denom = 1.0 + geom::dot(xi, xi);
        let mut j = geom::mat_zeros(self.dim, self.dim);
        for k in 0..self.dim {
            j[ell - 1][k] = -2.0 * c * xi[k] / (denom * denom);
        }
        j
    }

    fn fd_jacobian(&self, xi: &[f64], eval: impl Fn(&Self, &[f64]) -> Vec<f64>) -> Vec<Vec<f64>> {
        let h = 1e-5 * (1.0 + geom::norm(xi));
        let mut j = geom::mat_zeros(self.dim, self.dim);
        for k in 0..self.dim {
            let mut hi = xi.to_vec();
            let mut lo = xi.to_vec();
            hi[k] += h;
            lo[k] -= h;
            let (fhi, flo) = (eval(self, &hi), eval(self, &lo));
            for i in 0..self.dim {
                j[i][k] = (fhi[i] - flo[i]) / (2.0 * h);
            }
        }
        j
    }

    /// Analytic bound `C` with `|K(ξ)| ≤ C` (all catalog entries are bounded,
    /// so this is also a valid sub-linear growth constant).
    pub fn growth_constant(&self) -> f64 {
        match self.id {
            KernelId::Zero => 0.0,
            KernelId::Constant | KernelId::StokesLike => self.amplitude().abs(),
            KernelId::AttractionRepulsion => self.amplitude().abs(),
            KernelId::CustomTable => self.table.as_ref().unwrap().max_abs_value(),
        }
    }

    /// Analytic Lipschitz bound, valid globally.
    pub fn lipschitz_bound(&self) -> f64 {
        match self.id {
            KernelId::Zero | KernelId::Constant => 0.0,
            // sup |d/dr 1/(1+r²)| = 3√3/8 ≈ 0.6495 < 0.65
            KernelId::StokesLike => 0.65 * self.amplitude().abs(),
            KernelId::AttractionRepulsion => self.amplitude().abs(),
            KernelId::CustomTable => self.table.as_ref().unwrap().max_abs_slope(),
        }
    }
}

/// Result of sampling-based kernel certification.
///
/// `constant` is the analytic bound, `max_ratio` the largest observed
/// `|K(ξ)|/(1+|ξ|)` over every slot (pairwise plus all `d` directions), and
/// `lipschitz_estimate` the largest observed difference quotient. The
/// certificate passes when the samples never contradict the bound.
#[derive(Debug, Clone)]
pub struct GrowthCertificate {
    pub constant: f64,
    pub n_samples: usize,
    pub max_ratio: f64,
    pub lipschitz_estimate: f64,
}

impl GrowthCertificate {
    pub fn pass(&self) -> bool {
        self.max_ratio <= self.constant
    }
}

/// Sample `n_samples` displacements uniformly in the ball of radius `radius`
/// and certify the growth ratio of every evaluation slot of `spec`.
pub fn certify_growth(
    spec: &KernelSpec,
    radius: f64,
    n_samples: usize,
    seed: u64,
) -> Result<GrowthCertificate> {
    if !(radius > 0.0) {
        return Err(Error::input("certification radius must be positive"));
    }
    if n_samples < 10 {
        return Err(Error::input("certification needs at least 10 samples"));
    }
    let mut rng = rng::stream(seed, Purpose::Certify, 0, 0);
    let mut max_ratio = 0.0f64;
    let mut lipschitz = 0.0f64;
    let mut prev: Option<Vec<(Vec<f64>, Vec<f64>)>> = None;
    for _ in 0..n_samples {
        let xi = rng::uniform_in_ball(&mut rng, spec.dim, radius);
        let denom = 1.0 + geom::norm(&xi);
        let mut evals = Vec::with_capacity(spec.dim + 1);
        let h = spec.eval_h(&xi)?;
        max_ratio = max_ratio.max(geom::norm(&h) / denom);
        evals.push((xi.clone(), h));
        for ell in 1..=spec.dim {
            let g = spec.eval_g(ell, &xi)?;
            max_ratio = max_ratio.max(geom::norm(&g) / denom);
            evals.push((xi.clone(), g));
        }
        if let Some(prev_evals) = &prev {
            for (a, b) in prev_evals.iter().zip(&evals) {
                let dx = geom::dist(&a.0, &b.0);
                if dx > 1e-12 {
                    lipschitz = lipschitz.max(geom::dist(&a.1, &b.1) / dx);
                }
            }
        }
        prev = Some(evals);
    }
    Ok(GrowthCertificate {
        constant: spec.growth_constant(),
        n_samples,
        max_ratio,
        lipschitz_estimate: lipschitz,
    })
}

/// Table kernel realizing K(ξ) = −ξ for |ξ| ≤ reach; shared test fixture.
#[cfg(test)]
pub(crate) fn linear_attraction(dim: usize, reach: f64) -> KernelSpec {
    KernelSpec::custom_table(dim, RadialTable::new(vec![0.0, reach], vec![0.0, -reach]).unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn attraction_repulsion_matches_hand_value() {
        let k = KernelSpec::attraction_repulsion(2, 1.0);
        let v = k.eval_h(&[3.0, 4.0]).unwrap();
        assert_eq!(v[0], -0.5);
        assert!((v[1] - (-2.0 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn stokes_like_first_direction() {
        let k = KernelSpec::stokes_like(2, 1.0);
        let v = k.eval_g(1, &[1.0, 0.0]).unwrap();
        assert_eq!(v, vec![0.5, 0.0]);
    }

    #[test]
    fn constant_points_along_requested_axis() {
        let k = KernelSpec::constant(2, 1.0);
        assert_eq!(k.eval_g(2, &[7.0, -1.0]).unwrap(), vec![0.0, 1.0]);
        assert!(k.eval_g(3, &[7.0, -1.0]).is_err());
    }

    #[test]
    fn zero_kernel_is_zero_everywhere() {
        let k = KernelSpec::zero(3);
        assert_eq!(k.eval_h(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0; 3]);
        let cert = certify_growth(&k, 5.0, 50, 1).unwrap();
        assert_eq!(cert.max_ratio, 0.0);
        assert!(cert.pass());
    }

    #[test]
    fn custom_table_reproduces_linear_attraction() {
        let k = linear_attraction(2, 10.0);
        let v = k.eval_h(&[3.0, 4.0]).unwrap();
        assert!((v[0] + 3.0).abs() < 1e-12);
        assert!((v[1] + 4.0).abs() < 1e-12);
        assert_eq!(k.eval_h(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        // clamped beyond the table: |K| stays at g(10) = 10
        let far = k.eval_h(&[30.0, 0.0]).unwrap();
        assert!((far[0] + 10.0).abs() < 1e-12);
    }

    #[test]
    fn table_loader_rejects_malformed_input() {
        assert!(RadialTable::new(vec![0.0], vec![0.0]).is_err());
        assert!(RadialTable::new(vec![0.0, 1.0, 0.5], vec![0.0, 1.0, 2.0]).is_err());
        assert!(RadialTable::new(vec![0.5, 1.0], vec![0.0, 1.0]).is_err());
        assert!(RadialTable::new(vec![0.0, 1.0], vec![0.2, 1.0]).is_err());
    }

    #[test]
    fn table_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("profile.txt");
        std::fs::write(&path, "# radius value\n0 0\n1.0 -1.0   # linear part\n\n2 -1.5\n").unwrap();
        let k = KernelSpec::custom_table_from_path(1, &path).unwrap();
        let v = k.eval_h(&[0.5]).unwrap();
        assert!((v[0] + 0.5).abs() < 1e-14);
        let v = k.eval_h(&[1.5]).unwrap();
        assert!((v[0] + 1.25).abs() < 1e-14);

        std::fs::write(&path, "0 0\n1 oops\n").unwrap();
        assert!(KernelSpec::custom_table_from_path(1, &path).is_err());
    }

    #[test]
    fn catalog_certificates_pass() {
        for (k, name) in [
            (KernelSpec::constant(2, 1.0), "constant"),
            (KernelSpec::attraction_repulsion(2, 1.0), "attraction_repulsion"),
            (KernelSpec::stokes_like(2, 0.8), "stokes_like"),
            (linear_attraction(2, 10.0), "custom_table"),
        ] {
            let cert = certify_growth(&k, 8.0, 4000, 42).unwrap();
            assert!(cert.pass(), "{name}: ratio {} vs bound {}", cert.max_ratio, cert.constant);
            assert!(cert.max_ratio <= 1.0 + 1e-12, "{name}");
            assert!(
                cert.lipschitz_estimate <= k.lipschitz_bound() * (1.0 + 1e-9),
                "{name}: sampled Lipschitz {} exceeds analytic bound {}",
                cert.lipschitz_estimate,
                k.lipschitz_bound()
            );
        }
    }

    #[test]
    fn analytic_jacobians_match_central_differences() {
        // independent finite-difference oracle for the hand-derived Jacobians
        let specs = [
            KernelSpec::attraction_repulsion(2, 0.7),
            KernelSpec::stokes_like(2, 1.3),
        ];
        let points = [[0.3, -1.2], [2.0, 0.1], [0.0, 0.0], [-0.4, 0.9]];
        for spec in &specs {
            for p in &points {
                for ell in 1..=2 {
                    let jac = spec.jacobian_g(ell, p).unwrap();
                    let h = 1e-6;
                    for k in 0..2 {
                        let mut hi = *p;
                        let mut lo = *p;
                        hi[k] += h;
                        lo[k] -= h;
                        let fhi = spec.eval_g(ell, &hi).unwrap();
                        let flo = spec.eval_g(ell, &lo).unwrap();
                        for i in 0..2 {
                            let fd = (fhi[i] - flo[i]) / (2.0 * h);
                            assert!(
                                (jac[i][k] - fd).abs() < 1e-6,
                                "{:?} d{}/d{} at {:?}: {} vs {}",
                                spec.id, i, k, p, jac[i][k], fd
                            );
                        }
                    }
                }
            }
        }
    }

    proptest! {
        #[test]
        fn evaluation_is_pure(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            let k = KernelSpec::attraction_repulsion(2, 1.0);
            let a = k.eval_h(&[x, y]).unwrap();
            let b = k.eval_h(&[x, y]).unwrap();
            prop_assert_eq!(a[0].to_bits(), b[0].to_bits());
            prop_assert_eq!(a[1].to_bits(), b[1].to_bits());
        }

        #[test]
        fn radial_entries_are_odd(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            for k in [KernelSpec::attraction_repulsion(2, 0.9), linear_attraction(2, 20.0)] {
                let pos = k.eval_h(&[x, y]).unwrap();
                let neg = k.eval_h(&[-x, -y]).unwrap();
                for i in 0..2 {
                    prop_assert_eq!(pos[i].to_bits(), (-neg[i]).to_bits());
                }
            }
        }

        #[test]
        fn directional_entries_are_even(x in -5.0f64..5.0, y in -5.0f64..5.0) {
            for k in [KernelSpec::constant(2, 1.4), KernelSpec::stokes_like(2, 0.6)] {
                let pos = k.eval_g(2, &[x, y]).unwrap();
                let neg = k.eval_g(2, &[-x, -y]).unwrap();
                for i in 0..2 {
                    prop_assert_eq!(pos[i].to_bits(), neg[i].to_bits());
                }
            }
        }

        #[test]
        fn growth_bound_holds_pointwise(x in -50.0f64..50.0, y in -50.0f64..50.0) {
            for k in [
                KernelSpec::zero(2),
                KernelSpec::constant(2, 1.0),
                KernelSpec::attraction_repulsion(2, 1.0),
                KernelSpec::stokes_like(2, 1.0),
                linear_attraction(2, 10.0),
            ] {
                let c = k.growth_constant();
                let norm = |v: &[f64]| (v[0] * v[0] + v[1] * v[1]).sqrt();
                let bound = c * (1.0 + (x * x + y * y).sqrt()) + 1e-12;
                prop_assert!(norm(&k.eval_h(&[x, y]).unwrap()) <= bound);
                prop_assert!(norm(&k.eval_g(1, &[x, y]).unwrap()) <= bound);
            }
        }
    }
}
