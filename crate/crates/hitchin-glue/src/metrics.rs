//! Limiting and model hermitian metrics and the unitary-gauge model pair.
//!
//! In the adapted holomorphic gauge near a cluster point, the limiting
//! metric is diagonal with pure power entries `|z|^(-2 alpha_{K,i})`; the
//! model metric corrects each entry by the Toda profile,
//!
//! ```text
//! h_i = |z|^(-2 alpha_{K,i}) exp(u_{K,i,t}(|z|)),
//! ```
//!
//! and solves the rank-K self-duality system exactly. Changing to a unitary
//! frame turns the pair into
//!
//! ```text
//! A = diag(a_i) (dz/z - dzbar/zbar),   a_i = -alpha_{K,i}/2 + (1/4) du_i/dlog r,
//! Phi = (superdiag |z|^(1/K) e^((u_i - u_{i+1})/2),
//!        corner z |z|^(-(K-1)/K) e^((u_K - u_1)/2)) dz + lambda Id dz,
//! ```
//!
//! block by block, with rank-1 blocks contributing a zero connection and the
//! constant eigenvalue shift. The curvature of `A` cancels `t^2 [Phi, Phi*]`
//! entrywise through the Toda equation, which is what
//! [`hitchin_residual_model`] verifies by finite differences.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::DMatrix;
use num_complex::Complex64;
use num_rational::Rational64;
use thiserror::Error;

use crate::partition::{alpha, alpha_row, ClusterPartition};
use crate::toda::{solve_toda, SolverConfig, TodaError, TodaSolution};

/// Central-difference step used by [`hitchin_residual_model`].
pub const CURVATURE_STENCIL: f64 = 1e-4;

/// Errors from metric and field evaluation.
#[derive(Debug, Error)]
pub enum MetricsError {
    /// The limiting metric is singular at the puncture.
    #[error("block {block} sampled at radius {r}; entries diverge at 0")]
    ZeroRadius { block: usize, r: f64 },
    /// The family holds no converged unit-scale profile of this rank.
    #[error("no converged rank-{0} Toda profile in the family")]
    MissingTodaSolution(usize),
    /// Unitary-gauge fields are undefined at the puncture itself.
    #[error("field sample at the puncture z = 0")]
    OriginSingularity,
    /// A finite-difference stencil stepped out of the resolvable radii.
    #[error("curvature stencil around r = {r:.6e} leaves the resolvable radii")]
    StencilOutOfDomain { r: f64 },
    /// Underlying profile evaluation failed.
    #[error(transparent)]
    Toda(#[from] TodaError),
}

/// Unit-scale Toda profiles keyed by rank; every block of size `K >= 2`
/// in a partition reads the same rank-K profile.
#[derive(Debug, Clone, Default)]
pub struct TodaFamily {
    by_rank: BTreeMap<usize, TodaSolution>,
}

impl TodaFamily {
    /// Empty family.
    pub fn new() -> Self {
        TodaFamily::default()
    }

    /// Stores a profile under its rank, replacing any previous one.
    ///
    /// # Panics
    ///
    /// Panics if the solution is not at unit scale; rescaling to other `t`
    /// happens at evaluation time.
    pub fn insert(&mut self, sol: TodaSolution) {
        assert!(
            sol.t() == 1.0,
            "family stores unit-scale profiles, got t = {}",
            sol.t()
        );
        self.by_rank.insert(sol.k(), sol);
    }

    /// Profile of the given rank, if present.
    pub fn get(&self, k: usize) -> Option<&TodaSolution> {
        self.by_rank.get(&k)
    }

    /// Ranks present, ascending.
    pub fn ranks(&self) -> Vec<usize> {
        self.by_rank.keys().copied().collect()
    }

    /// Solves every distinct rank `K_j >= 2` of the partition with the same
    /// configuration.
    pub fn for_partition(
        p: &ClusterPartition,
        config: &SolverConfig,
    ) -> Result<Self, TodaError> {
        let mut family = TodaFamily::new();
        for k in p.toda_ranks() {
            family.insert(solve_toda(k, config)?);
        }
        Ok(family)
    }

    /// Profile of the given rank, requiring convergence at its own
    /// tolerance; anything else counts as missing.
    pub fn require(&self, k: usize) -> Result<&TodaSolution, MetricsError> {
        match self.by_rank.get(&k) {
            Some(sol) if sol.residual_norm() <= sol.config().tolerance => Ok(sol),
            _ => Err(MetricsError::MissingTodaSolution(k)),
        }
    }
}

/// Scale parameter of a diagonal metric: finite `t` or the `t -> infinity`
/// limit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MetricScale {
    /// Limiting configuration; all Toda corrections dropped.
    Limit,
    /// Finite scale `t > 0`.
    Finite(f64),
}

/// One diagonal entry of a metric descriptor: the exponent it carries and,
/// when a Toda correction applies, the `(K, i)` profile row it reads.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    /// Block index within the partition.
    pub block: usize,
    /// Exponent `alpha_{K,i}` of the power-law factor.
    pub alpha: Rational64,
    /// `(K, i)` of the Toda row correcting this entry; `None` for limiting
    /// metrics and rank-1 blocks.
    pub toda_index: Option<(usize, usize)>,
}

/// Descriptor of a diagonal metric in the adapted gauge: which exponent and
/// which Toda row each entry carries, at which scale, and whether the gluing
/// cutoff damps the corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricDiag {
    entries: Vec<MetricEntry>,
    t: MetricScale,
    cutoff_applied: bool,
}

impl MetricDiag {
    /// Descriptor of the limiting metric: pure powers, no corrections.
    pub fn limiting(p: &ClusterPartition) -> Self {
        MetricDiag {
            entries: entry_table(p, false),
            t: MetricScale::Limit,
            cutoff_applied: false,
        }
    }

    /// Descriptor of the model metric at scale `t`.
    ///
    /// # Panics
    ///
    /// Panics unless `t > 0`.
    pub fn model(p: &ClusterPartition, t: f64) -> Self {
        assert!(t > 0.0, "model metric needs t > 0, got {t}");
        MetricDiag {
            entries: entry_table(p, true),
            t: MetricScale::Finite(t),
            cutoff_applied: false,
        }
    }

    /// Descriptor of the glued approximate metric at scale `t`: model
    /// entries with the transition cutoff damping the corrections.
    ///
    /// # Panics
    ///
    /// Panics unless `t > 0`.
    pub fn approx(p: &ClusterPartition, t: f64) -> Self {
        let mut d = MetricDiag::model(p, t);
        d.cutoff_applied = true;
        d
    }

    /// The `n` entry descriptors in block order.
    pub fn entries(&self) -> &[MetricEntry] {
        &self.entries
    }

    /// Scale parameter.
    pub fn scale(&self) -> MetricScale {
        self.t
    }

    /// Whether the gluing cutoff damps the Toda corrections.
    pub fn cutoff_applied(&self) -> bool {
        self.cutoff_applied
    }

    /// Exact per-block exponent sums; all zero for any partition.
    pub fn block_alpha_sums(&self) -> Vec<Rational64> {
        let blocks = 1 + self.entries.iter().map(|e| e.block).max().unwrap_or(0);
        let mut sums = vec![Rational64::new(0, 1); blocks];
        for e in &self.entries {
            sums[e.block] += e.alpha;
        }
        sums
    }
}

fn entry_table(p: &ClusterPartition, with_toda: bool) -> Vec<MetricEntry> {
    let mut entries = Vec::with_capacity(p.n());
    for (j, b) in p.blocks().iter().enumerate() {
        for i in 1..=b.k {
            let toda_index = (with_toda && b.k >= 2).then_some((b.k, i));
            entries.push(MetricEntry {
                block: j,
                alpha: alpha(b.k, i),
                toda_index,
            });
        }
    }
    entries
}

pub(crate) fn check_radii(p: &ClusterPartition, z_abs: &[f64]) -> Result<(), MetricsError> {
    assert_eq!(
        z_abs.len(),
        p.blocks().len(),
        "one radius per block expected"
    );
    for (j, &r) in z_abs.iter().enumerate() {
        if !(r > 0.0) || !r.is_finite() {
            return Err(MetricsError::ZeroRadius { block: j, r });
        }
    }
    Ok(())
}

/// Diagonal of the limiting metric at per-block radii: entry `(j, i)` is
/// `|z_j|^(-2 alpha_{K_j,i})`.
///
/// # Panics
///
/// Panics unless `z_abs` has one radius per block.
pub fn limiting_metric(
    p: &ClusterPartition,
    z_abs: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    check_radii(p, z_abs)?;
    let mut out = Vec::with_capacity(p.n());
    for (b, &r) in p.blocks().iter().zip(z_abs) {
        for a in alpha_row(b.k) {
            out.push(r.powf(-2.0 * a));
        }
    }
    Ok(out)
}

/// Diagonal of the model metric at scale `t` and per-block radii: entry
/// `(j, i)` is `|z_j|^(-2 alpha_{K_j,i}) exp(u_{K_j,i,t}(|z_j|))`; rank-1
/// blocks contribute 1.
///
/// # Panics
///
/// Panics unless `t > 0` and `z_abs` has one radius per block.
pub fn model_metric(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    z_abs: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    assert!(t > 0.0, "model metric needs t > 0, got {t}");
    check_radii(p, z_abs)?;
    let mut out = Vec::with_capacity(p.n());
    for (b, &r) in p.blocks().iter().zip(z_abs) {
        if b.k == 1 {
            out.push(1.0);
            continue;
        }
        let u = family.require(b.k)?.evaluate_rescaled(t, r)?;
        for (a, ui) in alpha_row(b.k).into_iter().zip(u) {
            out.push(r.powf(-2.0 * a) * ui.exp());
        }
    }
    Ok(out)
}

/// One sample of the unitary-gauge model pair.
///
/// The connection is `A = diag(a) (dz/z - dzbar/zbar)` with the real
/// diagonal `a`; `phi` is the coefficient of `dz` in the Higgs field at
/// unit scale, so the vanishing curvature combination is
/// `F_A + t^2 [phi, phi*]`.
#[derive(Debug, Clone)]
pub struct FieldSample {
    /// Sample point.
    pub z: Complex64,
    /// Scale parameter the Toda corrections were evaluated at.
    pub t: f64,
    /// Real diagonal of the connection coefficient.
    pub a: Vec<f64>,
    /// Higgs coefficient of `dz`.
    pub phi: DMatrix<Complex64>,
}

/// Sampler for the unitary-gauge model pair of a partition at scale `t`.
#[derive(Debug, Clone, Copy)]
pub struct ModelField<'a> {
    partition: &'a ClusterPartition,
    family: &'a TodaFamily,
    t: f64,
}

impl<'a> ModelField<'a> {
    /// Binds a partition to its profile family, checking every needed rank
    /// up front.
    ///
    /// # Panics
    ///
    /// Panics unless `t > 0`.
    pub fn new(
        partition: &'a ClusterPartition,
        family: &'a TodaFamily,
        t: f64,
    ) -> Result<Self, MetricsError> {
        assert!(t > 0.0, "model fields need t > 0, got {t}");
        for k in partition.toda_ranks() {
            family.require(k)?;
        }
        Ok(ModelField {
            partition,
            family,
            t,
        })
    }

    /// The partition being sampled.
    pub fn partition(&self) -> &ClusterPartition {
        self.partition
    }

    /// Scale parameter.
    pub fn t(&self) -> f64 {
        self.t
    }

    /// Real diagonal `a(r)` of the connection coefficient,
    /// `a_i = -alpha_{K,i}/2 + (1/4) du_{K,i,t}/dlog r`; rank-1 blocks give 0.
    pub fn connection_coefficients(&self, r: f64) -> Result<Vec<f64>, MetricsError> {
        if !(r > 0.0) {
            return Err(MetricsError::OriginSingularity);
        }
        let mut a = Vec::with_capacity(self.partition.n());
        for b in self.partition.blocks() {
            if b.k == 1 {
                a.push(0.0);
                continue;
            }
            let w = self.family.require(b.k)?.rescaled_log_deriv(self.t, r)?;
            for (al, wi) in alpha_row(b.k).into_iter().zip(w) {
                a.push(-al / 2.0 + wi / 4.0);
            }
        }
        Ok(a)
    }

    /// Radial derivative `da/dr`, from the second log-derivative of the
    /// profile (no finite differencing).
    pub fn connection_radial_derivative(&self, r: f64) -> Result<Vec<f64>, MetricsError> {
        if !(r > 0.0) {
            return Err(MetricsError::OriginSingularity);
        }
        let mut da = Vec::with_capacity(self.partition.n());
        for b in self.partition.blocks() {
            if b.k == 1 {
                da.push(0.0);
                continue;
            }
            let v = self.family.require(b.k)?.rescaled_log_second(self.t, r)?;
            // a = -alpha/2 + w/4 and dw/dr = v/r, so da/dr = v/(4r)
            da.extend(v.into_iter().map(|vi| vi / (4.0 * r)));
        }
        Ok(da)
    }

    /// The pair `(A, Phi)` at `z`.
    pub fn sample(&self, z: Complex64) -> Result<FieldSample, MetricsError> {
        let n = self.partition.n();
        let r = z.norm();
        let needs_toda = !self.partition.toda_ranks().is_empty();
        if needs_toda && !(r > 0.0) {
            return Err(MetricsError::OriginSingularity);
        }
        let a = if needs_toda {
            self.connection_coefficients(r)?
        } else {
            vec![0.0; n]
        };
        let mut phi = DMatrix::<Complex64>::zeros(n, n);
        let mut offset = 0;
        for b in self.partition.blocks() {
            let k = b.k;
            for d in 0..k {
                phi[(offset + d, offset + d)] += b.lambda;
            }
            if k >= 2 {
                let u = self.family.require(k)?.evaluate_rescaled(self.t, r)?;
                let kf = k as f64;
                for i in 0..k - 1 {
                    let m = r.powf(1.0 / kf) * (0.5 * (u[i] - u[i + 1])).exp();
                    phi[(offset + i, offset + i + 1)] += Complex64::new(m, 0.0);
                }
                let corner =
                    z * r.powf(-(kf - 1.0) / kf) * (0.5 * (u[k - 1] - u[0])).exp();
                phi[(offset + k - 1, offset)] += corner;
            }
            offset += k;
        }
        Ok(FieldSample {
            z,
            t: self.t,
            a,
            phi,
        })
    }

    /// Coefficient of `dz wedge dzbar` in `F_A + t^2 [Phi, Phi*]` at `z`,
    /// with the curvature taken by central differences of the connection
    /// coefficient over `r +- stencil, r +- 2 stencil`.
    ///
    /// Vanishes to stencil accuracy because the Toda equation equates
    /// `da_i/dr / r` with the commutator entry. The result is real diagonal
    /// and trace-free; the associated real 2-form component is
    /// anti-hermitian.
    pub fn curvature_residual(
        &self,
        z: Complex64,
        stencil: f64,
    ) -> Result<DMatrix<Complex64>, MetricsError> {
        assert!(stencil > 0.0, "stencil step must be positive");
        let n = self.partition.n();
        if self.partition.toda_ranks().is_empty() {
            // flat abelian data: A = 0 and Phi commutes with Phi*
            return Ok(DMatrix::zeros(n, n));
        }
        let r = z.norm();
        if !(r > 0.0) {
            return Err(MetricsError::OriginSingularity);
        }
        if r - 2.0 * stencil <= 0.0 {
            return Err(MetricsError::StencilOutOfDomain { r });
        }
        let a_at = |rr: f64| {
            self.connection_coefficients(rr).map_err(|e| match e {
                MetricsError::Toda(TodaError::BelowGrid { .. }) => {
                    MetricsError::StencilOutOfDomain { r }
                }
                other => other,
            })
        };
        let am2 = a_at(r - 2.0 * stencil)?;
        let am1 = a_at(r - stencil)?;
        let ap1 = a_at(r + stencil)?;
        let ap2 = a_at(r + 2.0 * stencil)?;
        let sample = self.sample(z)?;

        let mut res = DMatrix::<Complex64>::zeros(n, n);
        let mut offset = 0;
        for b in self.partition.blocks() {
            let k = b.k;
            if k >= 2 {
                // squared moduli of the cyclic Higgs entries (all off-diagonal
                // for k >= 2, so the shift never mixes in)
                let q: Vec<f64> = (0..k)
                    .map(|i| {
                        let (row, col) = if i + 1 < k {
                            (offset + i, offset + i + 1)
                        } else {
                            (offset + k - 1, offset)
                        };
                        sample.phi[(row, col)].norm_sqr()
                    })
                    .collect();
                for i in 0..k {
                    let e = offset + i;
                    let da = (am2[e] - 8.0 * am1[e] + 8.0 * ap1[e] - ap2[e])
                        / (12.0 * stencil);
                    let comm = q[i] - q[(i + k - 1) % k];
                    res[(e, e)] =
                        Complex64::new(-da / r + self.t * self.t * comm, 0.0);
                }
            }
            offset += k;
        }
        Ok(res)
    }
}

/// The unitary-gauge model pair at `z`; see [`ModelField::sample`].
pub fn model_unitary_pair(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    z: Complex64,
) -> Result<FieldSample, MetricsError> {
    ModelField::new(p, family, t)?.sample(z)
}

/// `F_A + t^2 [Phi, Phi*]` of the model pair at `z` with the default
/// stencil [`CURVATURE_STENCIL`]; see [`ModelField::curvature_residual`].
pub fn hitchin_residual_model(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    z: Complex64,
) -> Result<DMatrix<Complex64>, MetricsError> {
    ModelField::new(p, family, t)?.curvature_residual(z, CURVATURE_STENCIL)
}

pub(crate) fn push_f64(line: &mut String, v: f64) {
    if !line.is_empty() {
        line.push(',');
    }
    let _ = write!(line, "{v:.16e}");
}

/// CSV body for diagonal metric profiles: header `|z|,entry_1..entry_n`,
/// one row per radius, all floats in `{:.16e}` form.
///
/// # Panics
///
/// Panics if row lengths disagree with each other or with `radii`.
pub fn metric_profile_csv(radii: &[f64], rows: &[Vec<f64>]) -> String {
    assert_eq!(radii.len(), rows.len(), "one row per radius expected");
    let n = rows.first().map_or(0, Vec::len);
    let mut out = String::from("|z|");
    for i in 1..=n {
        let _ = write!(out, ",entry_{i}");
    }
    out.push('\n');
    for (r, row) in radii.iter().zip(rows) {
        assert_eq!(row.len(), n, "ragged metric rows");
        let mut line = String::new();
        push_f64(&mut line, *r);
        for v in row {
            push_f64(&mut line, *v);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}

/// CSV body for field samples. Columns, in order: `re_z`, `im_z`, the
/// connection diagonal `a_1..a_n`, then the Higgs coefficient row-major as
/// `re_phi_R_C,im_phi_R_C` for `R, C` in `1..=n`. Floats in `{:.16e}` form.
///
/// # Panics
///
/// Panics if the samples have inconsistent sizes.
pub fn field_samples_csv(samples: &[FieldSample]) -> String {
    let n = samples.first().map_or(0, |s| s.a.len());
    let mut out = String::from("re_z,im_z");
    for i in 1..=n {
        let _ = write!(out, ",a_{i}");
    }
    for row in 1..=n {
        for col in 1..=n {
            let _ = write!(out, ",re_phi_{row}_{col},im_phi_{row}_{col}");
        }
    }
    out.push('\n');
    for s in samples {
        assert_eq!(s.a.len(), n, "ragged field samples");
        assert_eq!(s.phi.nrows(), n, "ragged field samples");
        let mut line = String::new();
        push_f64(&mut line, s.z.re);
        push_f64(&mut line, s.z.im);
        for v in &s.a {
            push_f64(&mut line, *v);
        }
        for row in 0..n {
            for col in 0..n {
                let c = s.phi[(row, col)];
                push_f64(&mut line, c.re);
                push_f64(&mut line, c.im);
            }
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}
