//! Linearized-operator data: block profile fields, indicial-root spectra,
//! the decoupled operator on a polar grid, the energy identity, the Higgs
//! multiplier bound, and growth diagnostics for the connection family.
//!
//! Fixing a threshold cluster size `J`, every block of a partition falls
//! into one of three classes, and the limiting block field is
//!
//! ```text
//! K > J:  f_i(r) = -alpha_{K,i}/2                    (constant),
//! K = J:  f_i(r) = -alpha_{K,i}/2 + w_{K,i}(c r)/4   (profile, c = |f'(0)|),
//! K < J:  f_i(r) = 0,
//! ```
//!
//! where `w_{K,i} = du_{K,i}/dlog r` is the logarithmic derivative of the
//! unit-scale Toda profile. On the off-diagonal `(i,j)` component the
//! linearized operator decouples into the scalar conic operator
//!
//! ```text
//! r^{-2} ( (r d/dr)^2 + (d/dtheta + 2i b(r))^2 ),   b = f_i - f_j,
//! ```
//!
//! whose indicial roots at the two ends are `{±(l + 2b)}` over integer
//! frequencies `l`; the non-integer roots collected over all pairs form the
//! spectra `S0` (at the puncture, from `f(0)`) and `Sinf` (at the outer
//! cone, from `f(infinity)`). Both are exact rationals here.
//!
//! [`energy_identity`] checks the quadratic form of the full linearized
//! operator against its Dirichlet-plus-commutator expansion on compactly
//! supported test sections; the commutator part cancels exactly, so the
//! reported gap measures only the finite-difference Laplacian error.

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assembly::cutoff_value;
use crate::higgs::{char_poly, polynomial_roots, CompanionBlock};
use crate::metrics::{push_f64, MetricsError, ModelField, TodaFamily};
use crate::partition::{alpha, rational_to_f64, ClusterPartition};
use crate::toda::TodaError;

/// Smallest grid resolution the finite-difference stencils accept, per
/// direction.
pub const MIN_GRID_NODES: usize = 64;

/// Cells next to each radial boundary that test sections must vanish on.
pub const SUPPORT_MARGIN: usize = 3;

/// Errors from linearization evaluations.
#[derive(Debug, Error)]
pub enum LinearizeError {
    /// Underlying profile or field evaluation failed.
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    /// Underlying profile evaluation failed.
    #[error(transparent)]
    Toda(#[from] TodaError),
    /// The stencil needs at least [`MIN_GRID_NODES`] nodes each way.
    #[error("grid {radial}x{angular} is below the {MIN_GRID_NODES}x{MIN_GRID_NODES} minimum")]
    GridTooCoarse { radial: usize, angular: usize },
    /// A test section is supported too close to the radial boundary.
    #[error("section is nonzero within {margin} cells of the radial boundary")]
    BoundarySupport { margin: usize },
}

/// Class of one block under the size-`J` trichotomy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockKind {
    /// `K > J`: constant diagonal `-alpha_{K,i}/2`.
    AInf,
    /// `K = J`: the interpolating Toda profile.
    AMod,
    /// `K < J`: zero block.
    AZero,
}

/// A partition together with the threshold size `J` and the induced block
/// classification. The `|f'(0)|` moduli ride along on the partition blocks.
#[derive(Debug, Clone)]
pub struct AtildeSpec {
    partition: ClusterPartition,
    j: usize,
    kinds: Vec<BlockKind>,
}

/// Classifies each block of `p` by comparing its size with `J`.
///
/// A size-1 block at `J = 1` would be an interpolating block with no
/// content (there is no rank-1 profile), so it is classified as zero.
///
/// # Panics
///
/// Panics unless `j >= 1`.
pub fn build_atilde(p: &ClusterPartition, j: usize) -> AtildeSpec {
    assert!(j >= 1, "threshold cluster size must be at least 1, got {j}");
    let kinds = p
        .blocks()
        .iter()
        .map(|b| {
            if b.k > j {
                BlockKind::AInf
            } else if b.k == j && j > 1 {
                BlockKind::AMod
            } else {
                BlockKind::AZero
            }
        })
        .collect();
    AtildeSpec {
        partition: p.clone(),
        j,
        kinds,
    }
}

impl AtildeSpec {
    /// The underlying partition.
    pub fn partition(&self) -> &ClusterPartition {
        &self.partition
    }

    /// Threshold cluster size.
    pub fn j(&self) -> usize {
        self.j
    }

    /// Block classes, in block order.
    pub fn kinds(&self) -> &[BlockKind] {
        &self.kinds
    }

    /// Exact values `f_i(0)` per global index: `-alpha_{K,i}/2` on constant
    /// blocks, `0` on interpolating and zero blocks (the profile term
    /// cancels the constant at the puncture).
    pub fn f_zero(&self) -> Vec<Rational64> {
        self.boundary_values(true)
    }

    /// Exact values `f_i(infinity)` per global index: `-alpha_{K,i}/2` on
    /// constant and interpolating blocks, `0` on zero blocks.
    pub fn f_infinity(&self) -> Vec<Rational64> {
        self.boundary_values(false)
    }

    fn boundary_values(&self, at_zero: bool) -> Vec<Rational64> {
        let half = Rational64::from_integer(2);
        let mut out = Vec::with_capacity(self.partition.n());
        for (b, &kind) in self.partition.blocks().iter().zip(&self.kinds) {
            for i in 1..=b.k {
                let constant = -alpha(b.k, i) / half;
                out.push(match kind {
                    BlockKind::AInf => constant,
                    BlockKind::AMod => {
                        if at_zero {
                            Rational64::from_integer(0)
                        } else {
                            constant
                        }
                    }
                    BlockKind::AZero => Rational64::from_integer(0),
                });
            }
        }
        out
    }

    /// Profile values `f_i(r)` per global index. Interpolating blocks read
    /// the unit-scale rank-`K` profile at `c r` with `c = |f'(0)|`.
    pub fn profile_at(
        &self,
        family: &TodaFamily,
        r: f64,
    ) -> Result<Vec<f64>, LinearizeError> {
        assert!(r > 0.0, "profile sampled at r = {r}");
        let mut out = Vec::with_capacity(self.partition.n());
        for (b, &kind) in self.partition.blocks().iter().zip(&self.kinds) {
            match kind {
                BlockKind::AInf => {
                    for i in 1..=b.k {
                        out.push(rational_to_f64(-alpha(b.k, i)) / 2.0);
                    }
                }
                BlockKind::AMod => {
                    let w = family
                        .require(b.k)?
                        .rescaled_log_deriv(1.0, b.f_prime0 * r)?;
                    for (i, wi) in (1..=b.k).zip(w) {
                        out.push(rational_to_f64(-alpha(b.k, i)) / 2.0 + wi / 4.0);
                    }
                }
                BlockKind::AZero => out.extend(std::iter::repeat(0.0).take(b.k)),
            }
        }
        Ok(out)
    }
}

/// Indicial data of the decoupled operator: the pairwise constants at the
/// two ends and the sorted non-integer root sets, all exact.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicialSpectrum {
    /// `b_ij = f_i(0) - f_j(0)`.
    pub b: Vec<Vec<Rational64>>,
    /// `c_ij = f_i(infinity) - f_j(infinity)`.
    pub c: Vec<Vec<Rational64>>,
    /// Sorted non-integer roots `±2 b_ij` at the puncture.
    pub s0: Vec<Rational64>,
    /// Sorted non-integer roots `±2 c_ij` at the outer cone.
    pub sinf: Vec<Rational64>,
}

/// Indicial constants and non-integer root sets of a block spec.
///
/// Pairs with `2 b_ij` integral contribute only integer roots and are left
/// implicit; each remaining pair contributes the symmetric pair
/// `±2 b_ij`, necessarily inside `(-1, 1)` because every exponent lies in
/// `(-1/2, 1/2)`.
pub fn indicial_spectrum(spec: &AtildeSpec) -> IndicialSpectrum {
    let f0 = spec.f_zero();
    let finf = spec.f_infinity();
    let n = f0.len();
    let diff_matrix = |f: &[Rational64]| -> Vec<Vec<Rational64>> {
        (0..n)
            .map(|i| (0..n).map(|j| f[i] - f[j]).collect())
            .collect()
    };
    let b = diff_matrix(&f0);
    let c = diff_matrix(&finf);
    let roots = |m: &[Vec<Rational64>]| -> Vec<Rational64> {
        let mut set = Vec::new();
        for row in m {
            for &q in row {
                let two = q * 2;
                if !two.is_integer() {
                    set.push(two);
                    set.push(-two);
                }
            }
        }
        set.sort();
        set.dedup();
        set
    };
    let s0 = roots(&b);
    let sinf = roots(&c);
    IndicialSpectrum { b, c, s0, sinf }
}

/// CSV of the pairwise indicial data: one row per pair `i < j` (1-based),
/// with the non-integer roots the pair contributes at each end as
/// space-separated rationals (empty when the roots are integers).
pub fn indicial_csv(spectrum: &IndicialSpectrum) -> String {
    let n = spectrum.b.len();
    let mut out = String::from("i,j,b_ij,c_ij,roots_zero,roots_infinity\n");
    let pair_roots = |q: Rational64| -> String {
        let two = q * 2;
        if two.is_integer() {
            String::new()
        } else {
            let (lo, hi) = if two < Rational64::from_integer(0) {
                (two, -two)
            } else {
                (-two, two)
            };
            format!("{lo} {hi}")
        }
    };
    for i in 0..n {
        for j in (i + 1)..n {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                i + 1,
                j + 1,
                spectrum.b[i][j],
                spectrum.c[i][j],
                pair_roots(spectrum.b[i][j]),
                pair_roots(spectrum.c[i][j]),
            ));
        }
    }
    out
}

/// Annulus grid, uniform in `log r` and `theta`. Radial nodes run from
/// `r_inner` to `r_outer` inclusive; angular nodes cover `[0, 2pi)` and
/// wrap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarGrid {
    /// Inner radius, positive.
    pub r_inner: f64,
    /// Outer radius, greater than `r_inner`.
    pub r_outer: f64,
    /// Number of radial nodes.
    pub radial: usize,
    /// Number of angular nodes.
    pub angular: usize,
}

impl PolarGrid {
    /// Builds a grid.
    ///
    /// # Panics
    ///
    /// Panics unless `0 < r_inner < r_outer` and both node counts are at
    /// least 2.
    pub fn new(r_inner: f64, r_outer: f64, radial: usize, angular: usize) -> Self {
        assert!(
            r_inner > 0.0 && r_inner < r_outer,
            "need 0 < r_inner < r_outer, got [{r_inner}, {r_outer}]"
        );
        assert!(radial >= 2 && angular >= 2, "degenerate grid");
        PolarGrid {
            r_inner,
            r_outer,
            radial,
            angular,
        }
    }

    /// Log-radial step.
    pub fn hx(&self) -> f64 {
        (self.r_outer / self.r_inner).ln() / (self.radial - 1) as f64
    }

    /// Angular step.
    pub fn htheta(&self) -> f64 {
        std::f64::consts::TAU / self.angular as f64
    }

    /// Radius of radial node `m`.
    pub fn radius(&self, m: usize) -> f64 {
        debug_assert!(m < self.radial);
        (self.r_inner.ln() + self.hx() * m as f64).exp()
    }

    /// Angle of angular node `q`.
    pub fn theta(&self, q: usize) -> f64 {
        debug_assert!(q < self.angular);
        self.htheta() * q as f64
    }

    /// Same annulus with both node counts doubled.
    pub fn refined(&self) -> PolarGrid {
        PolarGrid {
            radial: self.radial * 2,
            angular: self.angular * 2,
            ..*self
        }
    }

    fn check(&self) -> Result<(), LinearizeError> {
        if self.radial < MIN_GRID_NODES || self.angular < MIN_GRID_NODES {
            return Err(LinearizeError::GridTooCoarse {
                radial: self.radial,
                angular: self.angular,
            });
        }
        Ok(())
    }
}

/// Samples `f(r, theta)` on every grid node; rows index radius, columns
/// angle.
pub fn grid_function<F>(grid: &PolarGrid, f: F) -> DMatrix<Complex64>
where
    F: Fn(f64, f64) -> Complex64,
{
    DMatrix::from_fn(grid.radial, grid.angular, |m, q| {
        f(grid.radius(m), grid.theta(q))
    })
}

/// Applies the decoupled `(i, j)` scalar operator
/// `r^{-2}((r d/dr)^2 + (d/dtheta + 2i b(r))^2)` with `b = f_i - f_j` by
/// second-order central differences. Angular indices wrap; the two boundary
/// radial rows of the output are zero.
///
/// # Panics
///
/// Panics if the field shape disagrees with the grid or the component
/// indices (0-based) are out of range.
pub fn decoupled_apply(
    spec: &AtildeSpec,
    family: &TodaFamily,
    i: usize,
    j: usize,
    grid: &PolarGrid,
    field: &DMatrix<Complex64>,
) -> Result<DMatrix<Complex64>, LinearizeError> {
    grid.check()?;
    let n = spec.partition().n();
    assert!(i < n && j < n, "component ({i}, {j}) outside rank {n}");
    assert_eq!(
        (field.nrows(), field.ncols()),
        (grid.radial, grid.angular),
        "field shape disagrees with the grid"
    );
    let mut b = Vec::with_capacity(grid.radial);
    for m in 0..grid.radial {
        let f = spec.profile_at(family, grid.radius(m))?;
        b.push(f[i] - f[j]);
    }
    let hx = grid.hx();
    let ht = grid.htheta();
    let mut out = DMatrix::from_element(grid.radial, grid.angular, Complex64::ZERO);
    for m in 1..grid.radial - 1 {
        let r = grid.radius(m);
        let inv_r2 = 1.0 / (r * r);
        let bm = b[m];
        for q in 0..grid.angular {
            let qp = (q + 1) % grid.angular;
            let qm = (q + grid.angular - 1) % grid.angular;
            let g = field[(m, q)];
            let dxx = (field[(m + 1, q)] - 2.0 * g + field[(m - 1, q)]) / (hx * hx);
            let dtt = (field[(m, qp)] - 2.0 * g + field[(m, qm)]) / (ht * ht);
            let dt = (field[(m, qp)] - field[(m, qm)]) / (2.0 * ht);
            let angular =
                dtt + Complex64::new(0.0, 4.0 * bm) * dt - 4.0 * bm * bm * g;
            out[(m, q)] = (dxx + angular) * inv_r2;
        }
    }
    Ok(out)
}

/// Value of the compactly supported radial bump `(1 - s^2)^3`,
/// `s = (r - 0.6)/0.3`; identically zero outside `[0.3, 0.9]` and twice
/// continuously differentiable everywhere.
pub fn radial_bump(r: f64) -> f64 {
    let s = (r - 0.6) / 0.3;
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - s * s).powi(3)
    }
}

/// Deterministic hermitian trace-free test section on a grid: random
/// low-frequency angular data per entry times [`radial_bump`]. Returned as
/// `n^2` component fields indexed `i*n + j`; entry `(j, i)` is the complex
/// conjugate of `(i, j)` and the pointwise trace is zero.
pub fn bump_section(n: usize, grid: &PolarGrid, seed: u64) -> Vec<DMatrix<Complex64>> {
    assert!(n >= 1, "empty section");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Draw all coefficients before sampling so the section is a fixed
    // function of the seed, independent of the grid.
    let mut diag: Vec<[Complex64; 3]> = Vec::with_capacity(n);
    for _ in 0..n {
        let c0 = Complex64::new(rng.random_range(-1.0..1.0), 0.0);
        let c1 = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let c2 = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        diag.push([c0, c1, c2]);
    }
    let mut upper: Vec<[Complex64; 5]> = Vec::new();
    for _ in 0..n * (n.saturating_sub(1)) / 2 {
        let mut cs = [Complex64::ZERO; 5];
        for c in &mut cs {
            *c = Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        }
        upper.push(cs);
    }

    let mut out = vec![
        DMatrix::from_element(grid.radial, grid.angular, Complex64::ZERO);
        n * n
    ];
    for m in 0..grid.radial {
        let rho = radial_bump(grid.radius(m));
        if rho == 0.0 {
            continue;
        }
        for q in 0..grid.angular {
            let th = grid.theta(q);
            // Real diagonal values, recentering to kill the trace.
            let vals: Vec<f64> = diag
                .iter()
                .map(|c| {
                    let mut v = c[0].re;
                    for (l, cl) in c[1..].iter().enumerate() {
                        let phase = Complex64::from_polar(1.0, (l + 1) as f64 * th);
                        v += 2.0 * (cl * phase).re;
                    }
                    v
                })
                .collect();
            let mean = vals.iter().sum::<f64>() / n as f64;
            for (idx, v) in vals.iter().enumerate() {
                out[idx * n + idx][(m, q)] = Complex64::new(rho * (v - mean), 0.0);
            }
            let mut pair = 0;
            for i in 0..n {
                for j in (i + 1)..n {
                    let mut g = Complex64::ZERO;
                    for (off, cl) in upper[pair].iter().enumerate() {
                        let l = off as f64 - 2.0;
                        g += cl * Complex64::from_polar(1.0, l * th);
                    }
                    out[i * n + j][(m, q)] = rho * g;
                    out[j * n + i][(m, q)] = rho * g.conj();
                    pair += 1;
                }
            }
        }
    }
    out
}

fn commutator(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    a * b - b * a
}

fn frobenius_sq(a: &DMatrix<Complex64>) -> f64 {
    a.iter().map(|x| x.norm_sqr()).sum()
}

/// Real inner product `Re tr(a b*)` of two matrices.
fn real_inner(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x * y.conj()).re).sum()
}

/// Per-node data shared by the energy identity and the Rayleigh probe.
struct OperatorData {
    radii: Vec<f64>,
    /// Connection diagonal per radial node.
    a_rows: Vec<Vec<f64>>,
    /// Scale-free Higgs coefficient and its adjoint per node, row-major.
    phi: Vec<DMatrix<Complex64>>,
    phi_adj: Vec<DMatrix<Complex64>>,
}

fn operator_data(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    grid: &PolarGrid,
) -> Result<OperatorData, LinearizeError> {
    let mf = ModelField::new(p, family, t)?;
    let mut radii = Vec::with_capacity(grid.radial);
    let mut a_rows = Vec::with_capacity(grid.radial);
    for m in 0..grid.radial {
        let r = grid.radius(m);
        radii.push(r);
        a_rows.push(mf.connection_coefficients(r)?);
    }
    let mut phi = Vec::with_capacity(grid.radial * grid.angular);
    let mut phi_adj = Vec::with_capacity(grid.radial * grid.angular);
    for m in 0..grid.radial {
        for q in 0..grid.angular {
            let z = Complex64::from_polar(radii[m], grid.theta(q));
            let sample = mf.sample(z)?;
            phi_adj.push(sample.phi.adjoint());
            phi.push(sample.phi);
        }
    }
    Ok(OperatorData {
        radii,
        a_rows,
        phi,
        phi_adj,
    })
}

/// Discretized quadratic form of the linearized operator against its
/// first-order expansion, on one test section.
///
/// Returns `(lhs, rhs)` where `lhs` is the quadrature of
/// `<(Lap_A + t^2 H) gamma, gamma>` with
/// `H(gamma) = 2([phi*, [phi, gamma]] + [phi, [phi*, gamma]])`, and `rhs` is
/// the Dirichlet energy of `d_A gamma` plus
/// `2 t^2 (|[phi, gamma]|^2 + |[phi*, gamma]|^2)`, both over the measure
/// `r dr dtheta`. The commutator terms agree pointwise by adjointness of
/// `X -> [phi, X]`, so the gap between the sides is the second-order
/// finite-difference error of the Laplacian alone.
///
/// `gamma` holds `n^2` component fields indexed `i*n + j` on the grid
/// nodes.
///
/// # Panics
///
/// Panics unless `t > 0` and the component count and shapes match the
/// partition and grid.
pub fn energy_identity(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    grid: &PolarGrid,
    gamma: &[DMatrix<Complex64>],
) -> Result<(f64, f64), LinearizeError> {
    grid.check()?;
    assert!(t > 0.0, "energy identity needs t > 0, got {t}");
    let n = p.n();
    assert_eq!(gamma.len(), n * n, "expected {} component fields", n * n);
    for comp in gamma {
        assert_eq!(
            (comp.nrows(), comp.ncols()),
            (grid.radial, grid.angular),
            "component shape disagrees with the grid"
        );
    }
    for comp in gamma {
        for m in (0..SUPPORT_MARGIN).chain(grid.radial - SUPPORT_MARGIN..grid.radial) {
            for q in 0..grid.angular {
                if comp[(m, q)] != Complex64::ZERO {
                    return Err(LinearizeError::BoundarySupport {
                        margin: SUPPORT_MARGIN,
                    });
                }
            }
        }
    }
    let data = operator_data(p, family, t, grid)?;
    let hx = grid.hx();
    let ht = grid.htheta();
    let mut lhs = 0.0;
    let mut rhs = 0.0;

    for i in 0..n {
        for j in 0..n {
            let comp = &gamma[i * n + j];
            for m in 1..grid.radial - 1 {
                let r = data.radii[m];
                let weight = r * r * hx * ht;
                let inv_r2 = 1.0 / (r * r);
                let b = data.a_rows[m][i] - data.a_rows[m][j];
                for q in 0..grid.angular {
                    let qp = (q + 1) % grid.angular;
                    let qm = (q + grid.angular - 1) % grid.angular;
                    let g = comp[(m, q)];
                    let dxx =
                        (comp[(m + 1, q)] - 2.0 * g + comp[(m - 1, q)]) / (hx * hx);
                    let dtt = (comp[(m, qp)] - 2.0 * g + comp[(m, qm)]) / (ht * ht);
                    let dt = (comp[(m, qp)] - comp[(m, qm)]) / (2.0 * ht);
                    let lap = -(dxx
                        + dtt
                        + Complex64::new(0.0, 4.0 * b) * dt
                        - 4.0 * b * b * g)
                        * inv_r2;
                    lhs += (lap * g.conj()).re * weight;

                    let dr = (comp[(m + 1, q)] - comp[(m - 1, q)]) / (2.0 * hx * r);
                    let ang = dt + Complex64::new(0.0, 2.0 * b) * g;
                    rhs += (dr.norm_sqr() + ang.norm_sqr() * inv_r2) * weight;
                }
            }
        }
    }

    let t2 = t * t;
    let mut gmat = DMatrix::from_element(n, n, Complex64::ZERO);
    for m in 1..grid.radial - 1 {
        let r = data.radii[m];
        let weight = r * r * hx * ht;
        for q in 0..grid.angular {
            for i in 0..n {
                for j in 0..n {
                    gmat[(i, j)] = gamma[i * n + j][(m, q)];
                }
            }
            let node = m * grid.angular + q;
            let c_phi = commutator(&data.phi[node], &gmat);
            let c_adj = commutator(&data.phi_adj[node], &gmat);
            let h = (commutator(&data.phi_adj[node], &c_phi)
                + commutator(&data.phi[node], &c_adj))
                * Complex64::new(2.0, 0.0);
            lhs += t2 * real_inner(&h, &gmat) * weight;
            rhs += 2.0 * t2 * (frobenius_sq(&c_phi) + frobenius_sq(&c_adj)) * weight;
        }
    }
    Ok((lhs, rhs))
}

/// Crude lowest-eigenvalue probe of the discretized linearized operator,
/// for diagnostics only: a plain power iteration estimates the top of the
/// spectrum, a second one on the shifted operator walks to the bottom, and
/// the Rayleigh quotient of the final iterate is returned. No convergence
/// guarantee is attached.
///
/// # Panics
///
/// Panics unless `t > 0` and `iterations >= 1`.
pub fn rayleigh_probe(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    grid: &PolarGrid,
    iterations: usize,
    seed: u64,
) -> Result<f64, LinearizeError> {
    grid.check()?;
    assert!(t > 0.0, "probe needs t > 0, got {t}");
    assert!(iterations >= 1, "probe needs at least one iteration");
    let n = p.n();
    let data = operator_data(p, family, t, grid)?;
    let hx = grid.hx();
    let ht = grid.htheta();
    let t2 = t * t;

    let weight = |m: usize| data.radii[m] * data.radii[m] * hx * ht;
    let inner = |a: &[DMatrix<Complex64>], b: &[DMatrix<Complex64>]| -> f64 {
        let mut acc = 0.0;
        for i in 0..n * n {
            for m in 0..grid.radial {
                for q in 0..grid.angular {
                    acc += (a[i][(m, q)] * b[i][(m, q)].conj()).re * weight(m);
                }
            }
        }
        acc
    };
    let apply = |gamma: &[DMatrix<Complex64>]| -> Vec<DMatrix<Complex64>> {
        let mut out = vec![
            DMatrix::from_element(grid.radial, grid.angular, Complex64::ZERO);
            n * n
        ];
        for i in 0..n {
            for j in 0..n {
                let comp = &gamma[i * n + j];
                let dst = &mut out[i * n + j];
                for m in 1..grid.radial - 1 {
                    let inv_r2 = 1.0 / (data.radii[m] * data.radii[m]);
                    let b = data.a_rows[m][i] - data.a_rows[m][j];
                    for q in 0..grid.angular {
                        let qp = (q + 1) % grid.angular;
                        let qm = (q + grid.angular - 1) % grid.angular;
                        let g = comp[(m, q)];
                        let dxx = (comp[(m + 1, q)] - 2.0 * g + comp[(m - 1, q)])
                            / (hx * hx);
                        let dtt =
                            (comp[(m, qp)] - 2.0 * g + comp[(m, qm)]) / (ht * ht);
                        let dt = (comp[(m, qp)] - comp[(m, qm)]) / (2.0 * ht);
                        dst[(m, q)] = -(dxx
                            + dtt
                            + Complex64::new(0.0, 4.0 * b) * dt
                            - 4.0 * b * b * g)
                            * inv_r2;
                    }
                }
            }
        }
        let mut gmat = DMatrix::from_element(n, n, Complex64::ZERO);
        for m in 1..grid.radial - 1 {
            for q in 0..grid.angular {
                for i in 0..n {
                    for j in 0..n {
                        gmat[(i, j)] = gamma[i * n + j][(m, q)];
                    }
                }
                let node = m * grid.angular + q;
                let c_phi = commutator(&data.phi[node], &gmat);
                let c_adj = commutator(&data.phi_adj[node], &gmat);
                let h = (commutator(&data.phi_adj[node], &c_phi)
                    + commutator(&data.phi[node], &c_adj))
                    * Complex64::new(2.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        out[i * n + j][(m, q)] += t2 * h[(i, j)];
                    }
                }
            }
        }
        out
    };
    let normalize = |v: &mut [DMatrix<Complex64>], norm_sq: f64| {
        let scale = Complex64::new(1.0 / norm_sq.sqrt(), 0.0);
        for comp in v.iter_mut() {
            for x in comp.iter_mut() {
                *x *= scale;
            }
        }
    };

    // Top of the spectrum first.
    let mut v = bump_section(n, grid, seed);
    let v_sq = inner(&v, &v);
    normalize(&mut v, v_sq);
    let mut top = 0.0;
    for _ in 0..iterations {
        let w = apply(&v);
        top = inner(&w, &v);
        let norm_sq = inner(&w, &w);
        if !(norm_sq > 0.0) {
            return Ok(0.0);
        }
        v = w;
        normalize(&mut v, norm_sq);
    }
    // Then the bottom, through the shifted operator sigma - L.
    let sigma = 1.25 * top.abs() + 1.0;
    let mut u = bump_section(n, grid, seed.wrapping_add(1));
    let u_sq = inner(&u, &u);
    normalize(&mut u, u_sq);
    for _ in 0..iterations {
        let lu = apply(&u);
        let mut w = u.clone();
        for (wc, lc) in w.iter_mut().zip(&lu) {
            for (x, y) in wc.iter_mut().zip(lc.iter()) {
                *x = Complex64::new(sigma, 0.0) * *x - *y;
            }
        }
        let norm_sq = inner(&w, &w);
        if !(norm_sq > 0.0) {
            return Ok(0.0);
        }
        u = w;
        normalize(&mut u, norm_sq);
    }
    let lu = apply(&u);
    Ok(inner(&lu, &u) / inner(&u, &u))
}

/// Multiplier of the limiting Higgs commutator map on the `(i, j)`
/// eigenline component: `2 |lambda_i - lambda_j|^2`.
pub fn m_phi_entry(lambda_i: Complex64, lambda_j: Complex64) -> f64 {
    2.0 * (lambda_i - lambda_j).norm_sqr()
}

/// Largest eigenline multiplier over the sample points: for each `z` the
/// limiting Higgs eigenvalues are the block companion roots, and the bound
/// is the maximum of [`m_phi_entry`] over all pairs.
///
/// # Panics
///
/// Panics on an empty sample list.
pub fn m_phi_bound(p: &ClusterPartition, samples: &[Complex64]) -> f64 {
    assert!(!samples.is_empty(), "no sample points");
    let mut bound = 0.0f64;
    for &z in samples {
        let mut eigenvalues = Vec::with_capacity(p.n());
        for b in p.blocks() {
            let block = CompanionBlock::with_shift(b.k, z, b.lambda);
            eigenvalues.extend(polynomial_roots(&char_poly(&block)));
        }
        for i in 0..eigenvalues.len() {
            for j in (i + 1)..eigenvalues.len() {
                bound = bound.max(m_phi_entry(eigenvalues[i], eigenvalues[j]));
            }
        }
    }
    bound
}

/// Per-scale deviation of the pulled-back connection from the block
/// targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitTable {
    /// Scales the pullback was evaluated at.
    pub t_values: Vec<f64>,
    /// `per_block[m][j]`: deviation of block `j` at scale `t_values[m]`.
    pub per_block: Vec<Vec<f64>>,
    /// Max over blocks per scale.
    pub max_per_t: Vec<f64>,
}

/// Deviation of the rescaled connection family from the size-`J` block
/// targets.
///
/// For each scale `t` and sample radius `|w|`, the model connection
/// diagonal is read at the pulled-back radius `c t^{-J/(J+1)} |w|` (with
/// `c = |f'(0)|` of the block, matching the profile normalization) and
/// compared against the classified target: the constant diagonal for
/// oversized blocks, the unit-scale profile for critical ones, zero for
/// undersized ones. Critical blocks agree to rounding at every scale;
/// the others converge as `t` grows.
///
/// # Panics
///
/// Panics unless `t_values` is nonempty, positive, and strictly
/// increasing, and every sample radius lies in `[0.1, 2]`.
pub fn rescaled_laplacian_limit(
    p: &ClusterPartition,
    family: &TodaFamily,
    j: usize,
    t_values: &[f64],
    samples: &[f64],
) -> Result<LimitTable, LinearizeError> {
    assert!(!t_values.is_empty(), "no scales");
    assert!(
        t_values.windows(2).all(|w| w[0] < w[1]) && t_values[0] > 0.0,
        "scales must be positive and strictly increasing"
    );
    assert!(
        !samples.is_empty() && samples.iter().all(|&w| (0.1..=2.0).contains(&w)),
        "sample radii must lie in [0.1, 2]"
    );
    let spec = build_atilde(p, j);
    let pull_exp = -(j as f64) / (j as f64 + 1.0);
    let mut per_block = Vec::with_capacity(t_values.len());
    let mut max_per_t = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let scale = t.powf(pull_exp);
        let mut devs = Vec::with_capacity(p.blocks().len());
        for (b, &kind) in p.blocks().iter().zip(spec.kinds()) {
            let mut dev = 0.0f64;
            if b.k >= 2 {
                let sol = family.require(b.k)?;
                for &wr in samples {
                    let pulled = sol.rescaled_log_deriv(t, b.f_prime0 * scale * wr)?;
                    let target: Vec<f64> = match kind {
                        BlockKind::AInf => (1..=b.k)
                            .map(|i| rational_to_f64(-alpha(b.k, i)) / 2.0)
                            .collect(),
                        BlockKind::AMod => sol
                            .rescaled_log_deriv(1.0, b.f_prime0 * wr)?
                            .iter()
                            .zip(1..=b.k)
                            .map(|(wi, i)| {
                                rational_to_f64(-alpha(b.k, i)) / 2.0 + wi / 4.0
                            })
                            .collect(),
                        BlockKind::AZero => vec![0.0; b.k],
                    };
                    for (i, (wi, tg)) in pulled.iter().zip(&target).enumerate() {
                        let a = rational_to_f64(-alpha(b.k, i + 1)) / 2.0 + wi / 4.0;
                        dev = dev.max((a - tg).abs());
                    }
                }
            }
            devs.push(dev);
        }
        max_per_t.push(devs.iter().cloned().fold(0.0, f64::max));
        per_block.push(devs);
    }
    Ok(LimitTable {
        t_values: t_values.to_vec(),
        per_block,
        max_per_t,
    })
}

/// CSV of a [`LimitTable`]: one row per scale and block (1-based).
pub fn limit_csv(table: &LimitTable) -> String {
    let mut out = String::from("t,block,deviation\n");
    for (t, devs) in table.t_values.iter().zip(&table.per_block) {
        for (j, dev) in devs.iter().enumerate() {
            let mut line = String::new();
            push_f64(&mut line, *t);
            line.push_str(&format!(",{}", j + 1));
            push_f64(&mut line, *dev);
            line.push('\n');
            out.push_str(&line);
        }
    }
    out
}

/// Sup norms of the connection family and its radial derivative per scale,
/// with the fitted growth exponent of the derivative norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthTable {
    /// Scales, each at least 1.
    pub t_values: Vec<f64>,
    /// Sup of the glued connection diagonal over the window.
    pub sup_a: Vec<f64>,
    /// Sup of the model-profile radial derivative over the window.
    pub sup_da: Vec<f64>,
    /// Least-squares slope of `log sup_da` against `log t`; 0 when the
    /// derivative norms vanish.
    pub exponent: f64,
}

/// Radial window `[GROWTH_R_MIN, 1]` the growth sups are taken over.
pub const GROWTH_R_MIN: f64 = 1e-4;

const GROWTH_NODES: usize = 4001;

/// Growth of the connection family over the window `[GROWTH_R_MIN, 1]`.
///
/// Two readings are reported, following the two halves of the uniform
/// bound. `sup_a` takes the glued diagonal (cutoff applied to the Toda
/// correction), whose sup is pinned at the window's outer edge where the
/// cutoff has already returned the limiting constants; it is exactly
/// `max_i |alpha_{K,i}|/2` at every scale. `sup_da` takes the radial
/// derivative of the smooth model profile, which the glued family matches
/// once the cutoff transient has decayed; its sup grows like
/// `t^{K/(K+1)}` and the log-log fit reports that exponent. Partitions of
/// size-1 blocks only have a flat connection and return zeros.
///
/// # Panics
///
/// Panics unless `t_values` has at least two entries, all at least 1 and
/// strictly increasing.
pub fn connection_growth(
    p: &ClusterPartition,
    family: &TodaFamily,
    t_values: &[f64],
) -> Result<GrowthTable, LinearizeError> {
    assert!(t_values.len() >= 2, "need at least two scales to fit");
    assert!(
        t_values.windows(2).all(|w| w[0] < w[1]) && t_values[0] >= 1.0,
        "scales must be >= 1 and strictly increasing"
    );
    let lr0 = GROWTH_R_MIN.ln();
    let step = -lr0 / (GROWTH_NODES - 1) as f64;
    let mut sup_a = Vec::with_capacity(t_values.len());
    let mut sup_da = Vec::with_capacity(t_values.len());
    for &t in t_values {
        let mut ma = 0.0f64;
        let mut mda = 0.0f64;
        for b in p.blocks() {
            if b.k == 1 {
                continue;
            }
            let sol = family.require(b.k)?;
            let alphas: Vec<f64> =
                (1..=b.k).map(|i| rational_to_f64(alpha(b.k, i))).collect();
            for node in 0..GROWTH_NODES {
                let r = (lr0 + step * node as f64).exp();
                let (chi, dchi, _) = cutoff_value(r);
                let u = sol.evaluate_rescaled(t, r)?;
                let w = sol.rescaled_log_deriv(t, r)?;
                let v = sol.rescaled_log_second(t, r)?;
                for i in 0..b.k {
                    let glued =
                        -alphas[i] / 2.0 + (dchi * u[i] * r + chi * w[i]) / 4.0;
                    ma = ma.max(glued.abs());
                    mda = mda.max((v[i] / (4.0 * r)).abs());
                }
            }
        }
        sup_a.push(ma);
        sup_da.push(mda);
    }
    let exponent = if sup_da.iter().all(|&x| x > 0.0) {
        log_slope(t_values, &sup_da)
    } else {
        0.0
    };
    Ok(GrowthTable {
        t_values: t_values.to_vec(),
        sup_a,
        sup_da,
        exponent,
    })
}

/// CSV of a [`GrowthTable`]: columns `t`, `sup_a`, `sup_da`.
pub fn growth_csv(table: &GrowthTable) -> String {
    let mut out = String::from("t,sup_a,sup_da\n");
    for ((t, a), da) in table
        .t_values
        .iter()
        .zip(&table.sup_a)
        .zip(&table.sup_da)
    {
        let mut line = String::new();
        push_f64(&mut line, *t);
        push_f64(&mut line, *a);
        push_f64(&mut line, *da);
        line.push('\n');
        out.push_str(&line);
    }
    out
}

/// Least-squares slope of `ln y` against `ln x`.
fn log_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxx: f64 = lx.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    sxy / sxx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toda::{solve_toda, SolverConfig};
    use once_cell::sync::Lazy;
    use proptest::prelude::*;

    static FAMILY: Lazy<TodaFamily> = Lazy::new(|| {
        let mut family = TodaFamily::new();
        for k in 2..=5 {
            family.insert(solve_toda(k, &SolverConfig::default()).expect("solver"));
        }
        family
    });

    fn rat(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn trichotomy_classifies_blocks() {
        let p = ClusterPartition::from_sizes(&[2, 1, 1]).unwrap();
        let spec = build_atilde(&p, 2);
        assert_eq!(
            spec.kinds(),
            &[BlockKind::AMod, BlockKind::AZero, BlockKind::AZero]
        );

        let p = ClusterPartition::from_sizes(&[3, 2, 1]).unwrap();
        let spec = build_atilde(&p, 2);
        assert_eq!(
            spec.kinds(),
            &[BlockKind::AInf, BlockKind::AMod, BlockKind::AZero]
        );

        // Threshold above every block size leaves no interpolating block.
        let spec = build_atilde(&p, 7);
        assert!(spec.kinds().iter().all(|&k| k == BlockKind::AZero));

        // Size-1 blocks at threshold 1 are contentless and classified zero.
        let p = ClusterPartition::from_sizes(&[2, 1]).unwrap();
        let spec = build_atilde(&p, 1);
        assert_eq!(spec.kinds(), &[BlockKind::AInf, BlockKind::AZero]);
    }

    #[test]
    fn profile_interpolates_between_boundary_tables() {
        let p = ClusterPartition::from_sizes(&[3, 2, 1]).unwrap();
        let spec = build_atilde(&p, 2);
        let f0: Vec<f64> = spec.f_zero().iter().map(|&q| rational_to_f64(q)).collect();
        let finf: Vec<f64> = spec
            .f_infinity()
            .iter()
            .map(|&q| rational_to_f64(q))
            .collect();

        // Constant rows hold their value at both ends; the zero block is 0.
        let near = spec.profile_at(&FAMILY, 1e-3).unwrap();
        let far = spec.profile_at(&FAMILY, 5.0).unwrap();
        for i in 0..3 {
            assert_eq!(near[i], finf[i], "constant row {i}");
            assert_eq!(far[i], finf[i]);
        }
        assert_eq!(near[5], 0.0);
        assert_eq!(far[5], 0.0);

        // Interpolating rows run from 0 to the constant.
        for i in 3..5 {
            assert!(near[i].abs() < 1e-6, "row {i} near 0: {}", near[i]);
            assert!(
                (far[i] - finf[i]).abs() < 1e-9,
                "row {i} far: {} vs {}",
                far[i],
                finf[i]
            );
            assert_eq!(f0[i], 0.0);
        }
    }

    #[test]
    fn indicial_spectrum_matches_worked_examples() {
        // One interpolating 2-block, two zero blocks: nothing at the
        // puncture, the profile constants at the outer cone.
        let p = ClusterPartition::from_sizes(&[2, 1, 1]).unwrap();
        let spec = build_atilde(&p, 2);
        let ind = indicial_spectrum(&spec);
        assert_eq!(ind.b[0][1], rat(0, 1));
        assert!(ind.s0.is_empty());
        assert_eq!(ind.c[0][1], rat(1, 4));
        assert_eq!(
            ind.sinf,
            vec![rat(-1, 2), rat(-1, 4), rat(1, 4), rat(1, 2)]
        );

        // Two constant 2-blocks: within-block differences of 1/4 at both
        // ends, nothing from the aligned cross pairs.
        let p = ClusterPartition::from_sizes(&[2, 2]).unwrap();
        let spec = build_atilde(&p, 1);
        assert_eq!(spec.kinds(), &[BlockKind::AInf, BlockKind::AInf]);
        let ind = indicial_spectrum(&spec);
        assert_eq!(ind.b[0][1], rat(1, 4));
        assert_eq!(ind.b[0][2], rat(0, 1));
        assert_eq!(ind.s0, vec![rat(-1, 2), rat(1, 2)]);
        assert_eq!(ind.sinf, ind.s0);
    }

    #[test]
    fn indicial_matrices_are_antisymmetric_and_roots_bounded() {
        let cases: [(&[usize], usize); 5] = [
            (&[2, 1, 1], 2),
            (&[3, 2], 2),
            (&[4, 2, 1], 2),
            (&[2, 2], 1),
            (&[5, 1], 3),
        ];
        for (sizes, j) in cases {
            let p = ClusterPartition::from_sizes(sizes).unwrap();
            let spec = build_atilde(&p, j);
            let ind = indicial_spectrum(&spec);
            let n = p.n();
            for i in 0..n {
                for l in 0..n {
                    assert_eq!(ind.b[i][l], -ind.b[l][i]);
                    assert_eq!(ind.c[i][l], -ind.c[l][i]);
                }
            }
            for set in [&ind.s0, &ind.sinf] {
                for &root in set.iter() {
                    assert!(root > rat(-1, 1) && root < rat(1, 1));
                    assert!(!root.is_integer());
                    assert!(set.contains(&-root), "not symmetric about 0");
                }
                assert!(set.windows(2).all(|w| w[0] < w[1]), "not sorted");
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn indicial_invariants_hold_for_random_specs(
            sizes in proptest::collection::vec(1usize..5, 1..4),
            j in 1usize..6,
        ) {
            prop_assume!(sizes.iter().sum::<usize>() >= 2);
            let p = ClusterPartition::from_sizes(&sizes).unwrap();
            let ind = indicial_spectrum(&build_atilde(&p, j));
            let n = p.n();
            for i in 0..n {
                prop_assert_eq!(ind.b[i][i], rat(0, 1));
                for l in 0..n {
                    prop_assert_eq!(ind.b[i][l], -ind.b[l][i]);
                    prop_assert_eq!(ind.c[i][l], -ind.c[l][i]);
                }
            }
            for set in [&ind.s0, &ind.sinf] {
                for &root in set.iter() {
                    prop_assert!(root > rat(-1, 1) && root < rat(1, 1));
                    prop_assert!(set.contains(&-root));
                }
            }
        }
    }

    #[test]
    fn indicial_csv_lists_pairs_once() {
        let p = ClusterPartition::from_sizes(&[2, 2]).unwrap();
        let ind = indicial_spectrum(&build_atilde(&p, 1));
        let csv = indicial_csv(&ind);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "i,j,b_ij,c_ij,roots_zero,roots_infinity");
        assert_eq!(lines.len(), 1 + 6);
        assert_eq!(lines[1], "1,2,1/4,1/4,-1/2 1/2,-1/2 1/2");
        assert_eq!(lines[2], "1,3,0,0,,");
    }

    #[test]
    fn polar_grid_nodes_hit_both_radii() {
        let grid = PolarGrid::new(0.1, 1.5, 128, 96);
        assert!((grid.radius(0) - 0.1).abs() < 1e-15);
        assert!((grid.radius(127) - 1.5).abs() < 1e-12);
        assert!((grid.theta(0)).abs() == 0.0);
        let refined = grid.refined();
        assert_eq!((refined.radial, refined.angular), (256, 192));
        assert_eq!(refined.r_inner, grid.r_inner);
    }

    #[test]
    fn decoupled_rejects_coarse_grids() {
        let p = ClusterPartition::from_sizes(&[2, 2]).unwrap();
        let spec = build_atilde(&p, 1);
        let grid = PolarGrid::new(0.2, 1.8, 32, 128);
        let field = grid_function(&grid, |_, _| Complex64::ZERO);
        let err = decoupled_apply(&spec, &FAMILY, 0, 1, &grid, &field).unwrap_err();
        assert!(matches!(
            err,
            LinearizeError::GridTooCoarse {
                radial: 32,
                angular: 128
            }
        ));
    }

    #[test]
    fn decoupled_kills_constants_at_zero_coupling() {
        let p = ClusterPartition::from_sizes(&[2, 2]).unwrap();
        let spec = build_atilde(&p, 1);
        let grid = PolarGrid::new(0.2, 1.8, 64, 64);
        // Rows 0 and 2 carry the same exponent, so b_02 = 0 and constants
        // are annihilated exactly.
        let ones = grid_function(&grid, |_, _| Complex64::ONE);
        let out = decoupled_apply(&spec, &FAMILY, 0, 2, &grid, &ones).unwrap();
        assert!(out.iter().all(|&x| x == Complex64::ZERO));
    }

    fn interior_max(grid: &PolarGrid, field: &DMatrix<Complex64>) -> f64 {
        let mut m = 0.0f64;
        for row in 1..grid.radial - 1 {
            for q in 0..grid.angular {
                m = m.max(field[(row, q)].norm());
            }
        }
        m
    }

    #[test]
    fn decoupled_annihilates_enumerated_roots() {
        // Constant coupling b = 1/4 between the two rows of a 2-block pair.
        let p = ClusterPartition::from_sizes(&[2, 2]).unwrap();
        let spec = build_atilde(&p, 1);
        let ind = indicial_spectrum(&spec);
        assert_eq!(ind.b[0][1], rat(1, 4));
        let grid = PolarGrid::new(0.2, 1.8, 128, 128);
        for ell in [0i32, 1, -2] {
            for sign in [1.0, -1.0] {
                let nu = sign * (ell as f64 + 0.5);
                let field = grid_function(&grid, |r, th| {
                    Complex64::from_polar(r.powf(nu), ell as f64 * th)
                });
                let out = decoupled_apply(&spec, &FAMILY, 0, 1, &grid, &field).unwrap();
                // The mode is exact up to stencil error, so the output is
                // small pointwise against the natural scale |field| / r^2.
                for m in 1..grid.radial - 1 {
                    let r = grid.radius(m);
                    for q in 0..grid.angular {
                        let bound = 0.02 * field[(m, q)].norm() / (r * r);
                        assert!(
                            out[(m, q)].norm() <= bound,
                            "root nu = {nu}, l = {ell} at ({m}, {q}): \
                             {} vs {bound}",
                            out[(m, q)].norm()
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn decoupled_matches_closed_form_off_roots() {
        let p = ClusterPartition::from_sizes(&[2, 2]).unwrap();
        let spec = build_atilde(&p, 1);
        let grid = PolarGrid::new(0.2, 1.8, 128, 128);
        let (nu, ell) = (1.0f64, 0.0f64);
        let field = grid_function(&grid, |r, th| {
            Complex64::from_polar(r.powf(nu), ell * th)
        });
        let out = decoupled_apply(&spec, &FAMILY, 0, 1, &grid, &field).unwrap();
        // nu^2 - (l + 2b)^2 = 1 - 1/4.
        let coeff = nu * nu - (ell + 0.5) * (ell + 0.5);
        for m in 1..grid.radial - 1 {
            let r = grid.radius(m);
            for q in 0..grid.angular {
                let expect = Complex64::from_polar(coeff * r.powf(nu - 2.0), 0.0);
                let got = out[(m, q)];
                assert!(
                    (got - expect).norm() <= 0.01 * expect.norm(),
                    "node ({m}, {q}): {got} vs {expect}"
                );
            }
        }
    }

    #[test]
    fn decoupled_error_shrinks_quadratically() {
        let p = ClusterPartition::from_sizes(&[2, 2]).unwrap();
        let spec = build_atilde(&p, 1);
        let errs: Vec<f64> = [64usize, 128]
            .iter()
            .map(|&nodes| {
                let grid = PolarGrid::new(0.2, 1.8, nodes, nodes);
                let field = grid_function(&grid, |r, th| {
                    Complex64::from_polar(r.powf(1.5), th)
                });
                let out =
                    decoupled_apply(&spec, &FAMILY, 0, 1, &grid, &field).unwrap();
                interior_max(&grid, &out)
            })
            .collect();
        let ratio = errs[0] / errs[1];
        assert!(
            (3.0..6.0).contains(&ratio),
            "expected quartering, got {errs:?}"
        );
    }

    #[test]
    fn bump_section_is_hermitian_trace_free_and_seeded() {
        let grid = PolarGrid::new(0.1, 1.5, 64, 64);
        let n = 3;
        let gamma = bump_section(n, &grid, 11);
        for m in 0..grid.radial {
            let r = grid.radius(m);
            for q in 0..grid.angular {
                let mut trace = Complex64::ZERO;
                for i in 0..n {
                    trace += gamma[i * n + i][(m, q)];
                    for j in 0..n {
                        assert_eq!(
                            gamma[i * n + j][(m, q)],
                            gamma[j * n + i][(m, q)].conj()
                        );
                    }
                }
                assert!(trace.norm() <= 1e-13);
                if !(0.3..0.9).contains(&r) {
                    for i in 0..n * n {
                        assert_eq!(gamma[i][(m, q)], Complex64::ZERO);
                    }
                }
            }
        }
        let again = bump_section(n, &grid, 11);
        assert_eq!(gamma, again);
        let other = bump_section(n, &grid, 12);
        assert_ne!(gamma, other);
    }

    #[test]
    fn energy_identity_vanishes_on_zero_sections() {
        let p = ClusterPartition::single(2);
        let grid = PolarGrid::new(0.1, 1.5, 64, 64);
        let zero =
            vec![
                DMatrix::from_element(grid.radial, grid.angular, Complex64::ZERO);
                4
            ];
        let (lhs, rhs) = energy_identity(&p, &FAMILY, 2.0, &grid, &zero).unwrap();
        assert_eq!((lhs, rhs), (0.0, 0.0));
    }

    #[test]
    fn energy_identity_rejects_boundary_support() {
        let p = ClusterPartition::single(2);
        let grid = PolarGrid::new(0.1, 1.5, 64, 64);
        let mut gamma = bump_section(2, &grid, 3);
        gamma[1][(1, 0)] = Complex64::ONE;
        gamma[2][(1, 0)] = Complex64::ONE;
        let err = energy_identity(&p, &FAMILY, 2.0, &grid, &gamma).unwrap_err();
        assert!(matches!(err, LinearizeError::BoundarySupport { margin: 3 }));
    }

    #[test]
    fn energy_identity_matches_dirichlet_form() {
        let p = ClusterPartition::single(2);
        let grid = PolarGrid::new(0.1, 1.5, 128, 128);
        for (seed, t) in [(1u64, 2.0f64), (2, 1.0), (3, 4.0)] {
            let gamma = bump_section(2, &grid, seed);
            let (lhs, rhs) = energy_identity(&p, &FAMILY, t, &grid, &gamma).unwrap();
            assert!(rhs > 0.0);
            let rel = (lhs - rhs).abs() / rhs;
            assert!(rel <= 0.02, "seed {seed}, t {t}: gap {rel:.4}");
        }
    }

    #[test]
    fn energy_identity_gap_halves_under_refinement() {
        let p = ClusterPartition::single(2);
        let coarse = PolarGrid::new(0.1, 1.5, 128, 128);
        let fine = coarse.refined();
        let gap = |grid: &PolarGrid| {
            let gamma = bump_section(2, grid, 5);
            let (lhs, rhs) = energy_identity(&p, &FAMILY, 2.0, grid, &gamma).unwrap();
            (lhs - rhs).abs() / rhs
        };
        let (gc, gf) = (gap(&coarse), gap(&fine));
        assert!(gf <= 0.5 * gc, "gap {gc:.2e} -> {gf:.2e}");
    }

    #[test]
    fn energy_identity_sides_are_nonnegative() {
        let p = ClusterPartition::single(2);
        let grid = PolarGrid::new(0.1, 1.5, 64, 64);
        for seed in 0..20 {
            let gamma = bump_section(2, &grid, seed);
            let (lhs, rhs) = energy_identity(&p, &FAMILY, 1.5, &grid, &gamma).unwrap();
            assert!(rhs >= 0.0);
            assert!(lhs >= -1e-9 * (1.0 + rhs), "seed {seed}: lhs {lhs}");
        }
    }

    #[test]
    fn rayleigh_probe_reports_positive_bottom() {
        let p = ClusterPartition::single(2);
        let grid = PolarGrid::new(0.1, 1.5, 64, 64);
        let low = rayleigh_probe(&p, &FAMILY, 1.0, &grid, 12, 9).unwrap();
        assert!(low > 0.0, "bottom estimate {low}");
    }

    #[test]
    fn m_phi_entry_matches_worked_values() {
        let one = Complex64::ONE;
        assert_eq!(m_phi_entry(one, one), 0.0);
        assert_eq!(m_phi_entry(one, -one), 8.0);

        // Unit-circle samples of a single 2-block: eigenvalues are the two
        // square roots, always 2 apart in modulus-squared terms.
        let p = ClusterPartition::single(2);
        let samples: Vec<Complex64> = (0..8)
            .map(|m| Complex64::from_polar(1.0, std::f64::consts::TAU * m as f64 / 8.0))
            .collect();
        let bound = m_phi_bound(&p, &samples);
        assert!((bound - 8.0).abs() < 1e-9, "bound {bound}");

        // Cube roots of z on the unit circle: widest pair is |1 - w|^2 = 3.
        let p3 = ClusterPartition::single(3);
        let bound3 = m_phi_bound(&p3, &samples);
        assert!((bound3 - 6.0).abs() < 1e-9, "bound {bound3}");
    }

    #[test]
    fn rescaled_limit_tracks_block_targets() {
        let p = ClusterPartition::from_sizes(&[3, 2, 1]).unwrap();
        let t_values = [4.0, 16.0, 64.0];
        let samples = [0.1, 0.5, 1.0, 2.0];
        let table =
            rescaled_laplacian_limit(&p, &FAMILY, 2, &t_values, &samples).unwrap();
        // Critical block matches its own profile to rounding; the size-1
        // block is exactly flat.
        for devs in &table.per_block {
            assert!(devs[1] <= 1e-12, "critical block deviates: {}", devs[1]);
            assert_eq!(devs[2], 0.0);
        }
        // The oversized block converges to the constant diagonal, and the
        // overall deviation decreases.
        assert!(table.per_block[0][0] > table.per_block[1][0]);
        assert!(table.per_block[1][0] > table.per_block[2][0]);
        assert!(table.max_per_t[0] > table.max_per_t[1]);
        assert!(table.max_per_t[1] > table.max_per_t[2]);
    }

    #[test]
    fn limit_csv_is_row_per_scale_and_block() {
        let table = LimitTable {
            t_values: vec![4.0, 16.0],
            per_block: vec![vec![0.25, 0.0], vec![0.125, 0.0]],
            max_per_t: vec![0.25, 0.125],
        };
        let csv = limit_csv(&table);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,block,deviation");
        assert_eq!(lines.len(), 5);
        assert_eq!(lines[1], "4.0000000000000000e0,1,2.5000000000000000e-1");
        assert_eq!(lines[4], "1.6000000000000000e1,2,0.0000000000000000e0");
    }

    #[test]
    fn growth_exponent_and_uniform_bound() {
        let p = ClusterPartition::single(5);
        let table = connection_growth(&p, &FAMILY, &[1.0, 2.0, 4.0, 8.0]).unwrap();
        assert!(
            (0.8..=1.2).contains(&table.exponent),
            "exponent {}",
            table.exponent
        );
        let max = table.sup_a.iter().cloned().fold(f64::MIN, f64::max);
        let min = table.sup_a.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            (max - min) / min <= 0.05,
            "sup variation {:.4}",
            (max - min) / min
        );
        // The glued diagonal is pinned at the limiting constant 0.2 = 2/5/2.
        assert!((max - 0.2).abs() < 1e-12);
    }

    #[test]
    fn growth_is_zero_for_flat_partitions() {
        let p = ClusterPartition::from_sizes(&[1, 1]).unwrap();
        let table = connection_growth(&p, &FAMILY, &[1.0, 2.0, 4.0]).unwrap();
        assert!(table.sup_a.iter().all(|&x| x == 0.0));
        assert!(table.sup_da.iter().all(|&x| x == 0.0));
        assert_eq!(table.exponent, 0.0);
    }

    #[test]
    fn growth_csv_round_trips_scales() {
        let p = ClusterPartition::single(2);
        let table = connection_growth(&p, &FAMILY, &[1.0, 2.0]).unwrap();
        let csv = growth_csv(&table);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,sup_a,sup_da");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("1.0000000000000000e0,1.2500000000000"));
    }

    #[test]
    fn limit_table_round_trips_json() {
        let table = LimitTable {
            t_values: vec![4.0],
            per_block: vec![vec![0.5]],
            max_per_t: vec![0.5],
        };
        let json = serde_json::to_string(&table).unwrap();
        let back: LimitTable = serde_json::from_str(&json).unwrap();
        assert_eq!(back, table);
    }
}
