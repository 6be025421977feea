//! Algebraic side of regular Higgs data: companion blocks, characteristic
//! polynomials, discriminant orders, stratification counts, and
//! parabolic-degree bookkeeping.
//!
//! Eigenvalue computations work with scalar coefficient functions; the
//! `(dz)^K` form factor of the spectral data is a constant multiplier in a
//! fixed coordinate chart and is left to the caller's bookkeeping.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::partition::ClusterPartition;

/// Default absolute tolerance for [`eigenvalue_clusters`]; callers working
/// at another shift separation scale should pass their own.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-6;

/// Errors from the clustering of eigenvalue samples.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum HiggsError {
    /// Two clusters sit close enough that the grouping could flip under a
    /// small perturbation.
    #[error("clusters separated by {gap:.3e} are within twice the tolerance {tol:.3e}")]
    AmbiguousClustering { gap: f64, tol: f64 },
}

/// One local holomorphic block: size, coordinate value, and eigenvalue
/// shift. Realized by [`companion_matrix`] as `shift * Id + (superdiagonal
/// ones, corner z)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CompanionBlock {
    /// Block size `K >= 1`.
    pub k: usize,
    /// Local coordinate value (the corner entry).
    pub z: Complex64,
    /// Eigenvalue shift on the diagonal.
    pub lambda_shift: Complex64,
}

impl CompanionBlock {
    /// Shiftless block.
    pub fn new(k: usize, z: Complex64) -> Self {
        CompanionBlock {
            k,
            z,
            lambda_shift: Complex64::ZERO,
        }
    }

    /// Block with an eigenvalue shift.
    pub fn with_shift(k: usize, z: Complex64, lambda_shift: Complex64) -> Self {
        CompanionBlock { k, z, lambda_shift }
    }
}

/// Matrix realization `shift * Id + (superdiagonal ones, corner z)`.
///
/// # Panics
///
/// Panics if `k == 0`.
pub fn companion_matrix(b: &CompanionBlock) -> DMatrix<Complex64> {
    assert!(b.k >= 1, "companion block needs K >= 1");
    let mut m = DMatrix::<Complex64>::zeros(b.k, b.k);
    for d in 0..b.k {
        m[(d, d)] = b.lambda_shift;
    }
    if b.k == 1 {
        // the corner and the diagonal coincide; the coordinate value adds on
        m[(0, 0)] += b.z;
        return m;
    }
    for i in 0..b.k - 1 {
        m[(i, i + 1)] = Complex64::new(1.0, 0.0);
    }
    m[(b.k - 1, 0)] = b.z;
    m
}

/// Coefficients of `det(lambda I - M)` for the block, ascending in degree
/// (constant term first, monic leading 1 last): `(lambda - shift)^K - z`.
///
/// # Panics
///
/// Panics if `k == 0`.
pub fn char_poly(b: &CompanionBlock) -> Vec<Complex64> {
    assert!(b.k >= 1, "companion block needs K >= 1");
    let k = b.k;
    let mut coeffs = vec![Complex64::ZERO; k + 1];
    // binomial expansion of (lambda - c)^K
    let mut binom = 1.0f64;
    for j in (0..=k).rev() {
        coeffs[j] = Complex64::new(binom, 0.0) * (-b.lambda_shift).powu((k - j) as u32);
        if j > 0 {
            binom = binom * j as f64 / (k - j + 1) as f64;
        }
    }
    coeffs[0] -= b.z;
    coeffs
}

/// All roots of a polynomial given by ascending coefficients, by the
/// simultaneous Weierstrass (Durand-Kerner) iteration. Deterministic; the
/// returned order is the iteration's, not sorted.
///
/// # Panics
///
/// Panics if the leading coefficient vanishes or the degree is 0.
pub fn polynomial_roots(coeffs: &[Complex64]) -> Vec<Complex64> {
    let d = coeffs.len().saturating_sub(1);
    assert!(d >= 1, "root finding needs degree >= 1");
    let lead = coeffs[d];
    assert!(lead.norm() > 0.0, "leading coefficient must be nonzero");
    let monic: Vec<Complex64> = coeffs.iter().map(|c| c / lead).collect();

    // Cauchy bound keeps the start circle around every root
    let bound = 1.0 + monic.iter().take(d).map(|c| c.norm()).fold(0.0, f64::max);
    let seed = Complex64::new(0.4, 0.9);
    let mut roots: Vec<Complex64> = (0..d)
        .map(|i| seed.powu(i as u32 + 1) * bound)
        .collect();

    let eval = |x: Complex64| {
        monic
            .iter()
            .rev()
            .fold(Complex64::ZERO, |acc, c| acc * x + c)
    };
    for _ in 0..500 {
        let mut max_step = 0.0f64;
        for i in 0..d {
            let mut denom = Complex64::new(1.0, 0.0);
            for j in 0..d {
                if j != i {
                    denom *= roots[i] - roots[j];
                }
            }
            let step = eval(roots[i]) / denom;
            roots[i] -= step;
            max_step = max_step.max(step.norm());
        }
        if max_step <= 1e-14 * bound {
            break;
        }
    }
    roots
}

/// Vanishing order `sum_j (K_j - 1)` of the discriminant at the clustered
/// point.
pub fn discriminant_order(p: &ClusterPartition) -> usize {
    p.blocks().iter().map(|b| b.k - 1).sum()
}

/// Counts of rank-K ramification points over a genus-g curve, rank n.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrataCount {
    /// Total rank.
    pub n: usize,
    /// Curve genus.
    pub g: usize,
    /// `N_K` for `K` in `2..=n`; absent keys count as zero.
    pub counts: BTreeMap<usize, u64>,
}

/// True iff `sum_K (K-1) N_K = 2 (n^2 - n)(g - 1)`, the total discriminant
/// degree of a complete stratification.
pub fn validate_strata(s: &StrataCount) -> bool {
    let lhs: i128 = s
        .counts
        .iter()
        .map(|(&k, &nk)| (k as i128 - 1) * nk as i128)
        .sum();
    let n = s.n as i128;
    let g = s.g as i128;
    lhs == 2 * (n * n - n) * (g - 1)
}

/// Parabolic degree `deg E + (n^2 - n)(g - 1) + sum(weights)`.
pub fn parabolic_degree(
    n: usize,
    g: usize,
    deg_e: i64,
    weights: &[Rational64],
) -> Rational64 {
    let n = n as i64;
    let g = g as i64;
    let base = Rational64::from_integer(deg_e + (n * n - n) * (g - 1));
    weights.iter().fold(base, |acc, w| acc + w)
}

/// One eigenvalue cluster: member indices into the sample list and the
/// cluster mean.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenvalueCluster {
    /// Indices of the samples in this cluster, ascending.
    pub members: Vec<usize>,
    /// Arithmetic mean of the member samples.
    pub mean: Complex64,
}

impl EigenvalueCluster {
    /// Cluster size `K_j`.
    pub fn size(&self) -> usize {
        self.members.len()
    }
}

/// Groups eigenvalue samples lying within `tol` of each other (single
/// linkage), returning clusters ordered by first occurrence.
///
/// Rejects groupings where two distinct clusters approach within `2 tol`,
/// since a perturbation of size `tol` could then merge them.
///
/// # Panics
///
/// Panics on an empty sample list or non-positive tolerance.
pub fn eigenvalue_clusters(
    samples: &[Complex64],
    tol: f64,
) -> Result<Vec<EigenvalueCluster>, HiggsError> {
    assert!(!samples.is_empty(), "clustering needs at least one sample");
    assert!(tol > 0.0, "clustering tolerance must be positive");
    let n = samples.len();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut Vec<usize>, mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    for i in 0..n {
        for j in i + 1..n {
            if (samples[i] - samples[j]).norm() <= tol {
                let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                if ri != rj {
                    parent[ri.max(rj)] = ri.min(rj);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..n {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    let clusters: Vec<EigenvalueCluster> = groups
        .into_values()
        .map(|members| {
            let sum: Complex64 = members.iter().map(|&i| samples[i]).sum();
            let mean = sum / members.len() as f64;
            EigenvalueCluster { members, mean }
        })
        .collect();

    for a in 0..clusters.len() {
        for b in a + 1..clusters.len() {
            let gap = clusters[a]
                .members
                .iter()
                .flat_map(|&i| clusters[b].members.iter().map(move |&j| (i, j)))
                .map(|(i, j)| (samples[i] - samples[j]).norm())
                .fold(f64::INFINITY, f64::min);
            if gap < 2.0 * tol {
                return Err(HiggsError::AmbiguousClustering { gap, tol });
            }
        }
    }
    Ok(clusters)
}
