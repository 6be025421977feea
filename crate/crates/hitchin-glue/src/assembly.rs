//! Glued approximate solutions: a cutoff interpolates between the model
//! metric near each cluster point and the limiting metric outside, and the
//! resulting failure of the coupled equations is measured pointwise, in
//! L2 over the unit disk, and as a fitted exponential decay rate in `t`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{check_radii, push_f64, MetricsError, TodaFamily};
use crate::partition::{alpha_row, ClusterPartition};

/// Inner edge of the cutoff transition; the glued metric equals the model
/// metric at and below this radius.
pub const CUTOFF_INNER: f64 = 0.5;

/// Outer edge of the cutoff transition; the glued metric equals the
/// limiting metric at and beyond this radius.
pub const CUTOFF_OUTER: f64 = 1.0;

/// Errors from the norm and fit layers; pointwise evaluation failures pass
/// through from the metric layer.
#[derive(Debug, Error)]
pub enum AssemblyError {
    /// Underlying profile or metric evaluation failed.
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    /// Doubling the quadrature moved the norm by more than 1%.
    #[error("quadrature refinement moved the norm by {shift:.3e} (over 1% of {value:.3e}); raise the panel counts")]
    QuadratureTooCoarse { shift: f64, value: f64 },
    /// The decay fit has no usable least-squares solution.
    #[error("decay fit is degenerate: {reason}")]
    DegenerateFit { reason: &'static str },
}

/// Cutoff value and first two derivatives at radius `r`: identically 1 up
/// to [`CUTOFF_INNER`], identically 0 from [`CUTOFF_OUTER`] on, and the
/// quintic smoothstep `1 - S(2r - 1)` with `S(x) = 6x^5 - 15x^4 + 10x^3`
/// between. `S` has vanishing first and second derivatives at both ends,
/// so the spline is C^2 across the seams.
///
/// # Panics
///
/// Panics if `r < 0`.
pub fn cutoff_value(r: f64) -> (f64, f64, f64) {
    assert!(r >= 0.0, "cutoff argument must be nonnegative, got {r}");
    if r <= CUTOFF_INNER {
        return (1.0, 0.0, 0.0);
    }
    if r >= CUTOFF_OUTER {
        return (0.0, 0.0, 0.0);
    }
    let x = 2.0 * r - 1.0;
    let s = x * x * x * (10.0 + x * (-15.0 + 6.0 * x));
    let ds = 30.0 * x * x * (x - 1.0) * (x - 1.0);
    let dds = 60.0 * x * (2.0 * x - 1.0) * (x - 1.0);
    // chain rule for x = 2r - 1
    (1.0 - s, -2.0 * ds, -4.0 * dds)
}

/// Diagonal of the glued approximate metric at scale `t` and per-block
/// radii: entry `(j, i)` is `|z_j|^(-2 alpha) exp(chi(|z_j|) u_{K_j,i,t})`;
/// rank-1 blocks contribute 1. Equals the model metric up to the cutoff
/// transition and the limiting metric beyond it.
///
/// # Panics
///
/// Panics unless `t > 0` and `z_abs` has one radius per block.
pub fn approx_metric(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    z_abs: &[f64],
) -> Result<Vec<f64>, MetricsError> {
    assert!(t > 0.0, "approximate metric needs t > 0, got {t}");
    check_radii(p, z_abs)?;
    let mut out = Vec::with_capacity(p.n());
    for (b, &r) in p.blocks().iter().zip(z_abs) {
        if b.k == 1 {
            out.push(1.0);
            continue;
        }
        let (chi, _, _) = cutoff_value(r);
        let u = family.require(b.k)?.evaluate_rescaled(t, r)?;
        for (a, ui) in alpha_row(b.k).into_iter().zip(u) {
            out.push(r.powf(-2.0 * a) * (chi * ui).exp());
        }
    }
    Ok(out)
}

/// All diagonal entries of the error functional for one rank-`k` block at
/// scale `t` and radius `r`: with `g_i = chi(r) u_{k,i,t}(r)`,
///
/// `-(1/4)(g_i'' + g_i'/r) + t^2 r^(2/k) (exp(g_i - g_{i+1}) - exp(g_{i-1} - g_i))`
///
/// with cyclic indices. This is the `(i,i)` coefficient of the curvature
/// defect of the glued pair against `dz wedge dzbar`. Derivatives of the
/// product use the closed-form cutoff derivatives and the interpolant's
/// log-derivatives of `u`, so no numerical differencing enters.
///
/// Rank-1 blocks carry no correction; the row is `[0.0]`.
///
/// # Panics
///
/// Panics unless `k >= 1`, `t > 0`, and `r > 0`.
pub fn error_row(
    family: &TodaFamily,
    k: usize,
    t: f64,
    r: f64,
) -> Result<Vec<f64>, MetricsError> {
    assert!(k >= 1, "block rank must be at least 1");
    assert!(t > 0.0, "error row needs t > 0, got {t}");
    assert!(r > 0.0, "error row needs r > 0, got {r}");
    if k == 1 {
        return Ok(vec![0.0]);
    }
    let sol = family.require(k)?;
    let u = sol.evaluate_rescaled(t, r)?;
    let w = sol.rescaled_log_deriv(t, r)?;
    let v = sol.rescaled_log_second(t, r)?;
    let (chi, dchi, ddchi) = cutoff_value(r);
    let amp = t * t * r.powf(2.0 / k as f64);
    let mut out = Vec::with_capacity(k);
    for i in 0..k {
        let ip = (i + 1) % k;
        let im = (i + k - 1) % k;
        // (chi u)'' + (chi u)'/r in log-derivative form
        let lap = ddchi * u[i] + dchi * (u[i] + 2.0 * w[i]) / r + chi * v[i] / (r * r);
        let forward = (chi * (u[i] - u[ip])).exp();
        let backward = (chi * (u[im] - u[i])).exp();
        out.push(-0.25 * lap + amp * (forward - backward));
    }
    Ok(out)
}

/// Single entry `i` (1-based, `1..=k`) of [`error_row`].
///
/// # Panics
///
/// Panics if `i` is outside `1..=k`, plus the [`error_row`] conditions.
pub fn error_entry(
    family: &TodaFamily,
    k: usize,
    i: usize,
    t: f64,
    r: f64,
) -> Result<f64, MetricsError> {
    assert!(
        (1..=k).contains(&i),
        "entry index {i} outside 1..={k}"
    );
    Ok(error_row(family, k, t, r)?[i - 1])
}

/// Radial quadrature layout for the disk norms: composite Gauss-Legendre
/// on geometrically graded panels covering `[r_min, 1]`, with the cutoff
/// seams at panel boundaries so every panel integrand is smooth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Inner edge of the radial integration (the integrand vanishes
    /// identically below the cutoff transition, so this only needs to sit
    /// below 1/2). Scaled radii `t^(k/(k+1)) r_min` must stay on or above
    /// the profile grid.
    pub r_min_exp: i32,
    /// Panels on `[r_min, 1/2]`.
    pub panels_inner: usize,
    /// Panels on `[1/2, 1]`.
    pub panels_transition: usize,
    /// Gauss-Legendre points per panel.
    pub points_per_panel: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            r_min_exp: -3,
            panels_inner: 8,
            panels_transition: 16,
            points_per_panel: 8,
        }
    }
}

impl QuadratureSpec {
    /// Inner radius `10^r_min_exp`.
    pub fn r_min(&self) -> f64 {
        10f64.powi(self.r_min_exp)
    }

    /// Radial node count on the cutoff transition `[1/2, 1]`.
    pub fn transition_nodes(&self) -> usize {
        self.panels_transition * self.points_per_panel
    }

    /// Same layout with both panel counts doubled.
    pub fn doubled(&self) -> Self {
        QuadratureSpec {
            panels_inner: 2 * self.panels_inner,
            panels_transition: 2 * self.panels_transition,
            ..*self
        }
    }

    fn assert_valid(&self) {
        assert!(
            self.r_min_exp < 0,
            "quadrature inner radius must sit below the transition"
        );
        assert!(self.panels_inner >= 1, "need at least one inner panel");
        assert!(
            (2..=24).contains(&self.points_per_panel),
            "points per panel outside 2..=24"
        );
        assert!(
            self.transition_nodes() >= 64,
            "need at least 64 radial nodes on the cutoff transition, got {}",
            self.transition_nodes()
        );
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1] by Newton iteration on the
/// Legendre recurrence.
fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    fn legendre_with_deriv(n: usize, x: f64) -> (f64, f64) {
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        (p1, dp)
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..60 {
            let (p, dp) = legendre_with_deriv(n, x);
            let step = p / dp;
            x -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre_with_deriv(n, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Panel edges `[a, b]` of the composite rule, geometric within each of
/// `[r_min, 1/2]` and `[1/2, 1]`.
fn panel_edges(spec: &QuadratureSpec) -> Vec<(f64, f64)> {
    let mut edges = Vec::with_capacity(spec.panels_inner + spec.panels_transition);
    let mut graded = |a: f64, b: f64, m: usize| {
        let ratio = (b / a).powf(1.0 / m as f64);
        let mut lo = a;
        for j in 1..=m {
            let hi = if j == m { b } else { a * ratio.powi(j as i32) };
            edges.push((lo, hi));
            lo = hi;
        }
    };
    graded(spec.r_min(), CUTOFF_INNER, spec.panels_inner);
    graded(CUTOFF_INNER, CUTOFF_OUTER, spec.panels_transition);
    edges
}

/// Composite Gauss-Legendre integral of `f` over `[r_min, 1]`.
fn integrate_radial<F>(mut f: F, spec: &QuadratureSpec) -> Result<f64, MetricsError>
where
    F: FnMut(f64) -> Result<f64, MetricsError>,
{
    let (nodes, weights) = gauss_legendre(spec.points_per_panel);
    let mut total = 0.0;
    for (a, b) in panel_edges(spec) {
        let mid = 0.5 * (a + b);
        let half = 0.5 * (b - a);
        for (x, w) in nodes.iter().zip(&weights) {
            total += w * half * f(mid + half * x)?;
        }
    }
    Ok(total)
}

/// Accepts the refined value when doubling the panels moved it by at most
/// 1%, otherwise reports the shift.
fn refinement_gate(coarse: f64, fine: f64) -> Result<f64, AssemblyError> {
    let shift = (fine - coarse).abs();
    if shift > 0.01 * fine {
        return Err(AssemblyError::QuadratureTooCoarse { shift, value: fine });
    }
    Ok(fine)
}

fn root_sum_square(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per-block L2 norms over the unit disk of the error functional of the
/// glued pair at scale `t`. The integrand is radial, so the angular factor
/// is `2 pi` exactly; block `j` contributes
/// `2 sqrt(2 pi integral of sum_i entry_i(r)^2 r dr)`,
/// where the fixed leading 2 is the flat-chart density
/// `|dz wedge dzbar| = 2 dA`, identical across `t`, so fitted decay rates
/// do not see it. Values come from the doubled layout; the base layout
/// serves as the refinement check.
///
/// # Panics
///
/// Panics unless `t > 0` and the layout satisfies the node floor (at
/// least 64 radial nodes on the transition).
pub fn error_l2_blocks(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<Vec<f64>, AssemblyError> {
    assert!(t > 0.0, "disk norm needs t > 0, got {t}");
    spec.assert_valid();
    let run = |layout: &QuadratureSpec| -> Result<Vec<f64>, MetricsError> {
        p.blocks()
            .iter()
            .map(|b| {
                if b.k == 1 {
                    return Ok(0.0);
                }
                let integral = integrate_radial(
                    |r| {
                        let row = error_row(family, b.k, t, r)?;
                        Ok(row.iter().map(|e| e * e).sum::<f64>() * r)
                    },
                    layout,
                )?;
                Ok(2.0 * (std::f64::consts::TAU * integral).sqrt())
            })
            .collect()
    };
    let coarse = run(spec)?;
    let fine = run(&spec.doubled())?;
    refinement_gate(root_sum_square(&coarse), root_sum_square(&fine))?;
    Ok(fine)
}

/// Total L2 norm over the unit disk of the block-diagonal error matrix:
/// the root-sum-square of [`error_l2_blocks`] (blocks decouple).
pub fn error_l2(
    p: &ClusterPartition,
    family: &TodaFamily,
    t: f64,
    spec: &QuadratureSpec,
) -> Result<f64, AssemblyError> {
    Ok(root_sum_square(&error_l2_blocks(p, family, t, spec)?))
}

/// Exponential decay fit of a norm sweep, in log coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    /// Scale samples, strictly increasing and positive.
    pub t_values: Vec<f64>,
    /// Norm samples, positive.
    #[serde(rename = "norms")]
    pub l2_norms: Vec<f64>,
    /// Fitted prefactor of `c exp(-delta t)`.
    pub c: f64,
    /// Fitted decay rate.
    pub delta: f64,
    /// Root-mean-square misfit of `log(norm)` against the fitted line.
    pub residual: f64,
    /// True iff `delta > 0` and the misfit is under the caller's threshold.
    pub pass: bool,
    /// Hash of the producing configuration; filled by the pipeline driver.
    #[serde(default)]
    pub config_hash: Option<String>,
}

/// Least-squares fit of `log(norm) = log c - delta t`. Passing requires a
/// positive rate and a log-space RMS misfit under `residual_threshold`.
///
/// # Panics
///
/// Panics unless `residual_threshold > 0`.
pub fn fit_decay(
    t_values: &[f64],
    norms: &[f64],
    residual_threshold: f64,
) -> Result<DecayReport, AssemblyError> {
    assert!(
        residual_threshold > 0.0,
        "residual threshold must be positive"
    );
    if t_values.len() != norms.len() {
        return Err(AssemblyError::DegenerateFit {
            reason: "sample lengths differ",
        });
    }
    if t_values.len() < 3 {
        return Err(AssemblyError::DegenerateFit {
            reason: "fewer than 3 samples",
        });
    }
    if t_values[0] <= 0.0
        || t_values.iter().any(|t| !t.is_finite())
        || t_values.windows(2).any(|w| w[1] <= w[0])
    {
        return Err(AssemblyError::DegenerateFit {
            reason: "t values not positive and strictly increasing",
        });
    }
    if norms.iter().any(|&n| !(n > 0.0) || !n.is_finite()) {
        return Err(AssemblyError::DegenerateFit {
            reason: "norms not positive and finite",
        });
    }
    let m = t_values.len() as f64;
    let ys: Vec<f64> = norms.iter().map(|n| n.ln()).collect();
    let t_bar = t_values.iter().sum::<f64>() / m;
    let y_bar = ys.iter().sum::<f64>() / m;
    let s_tt: f64 = t_values.iter().map(|t| (t - t_bar) * (t - t_bar)).sum();
    let s_ty: f64 = t_values
        .iter()
        .zip(&ys)
        .map(|(t, y)| (t - t_bar) * (y - y_bar))
        .sum();
    // strictly increasing t makes s_tt positive
    let slope = s_ty / s_tt;
    let delta = -slope;
    let c = (y_bar - slope * t_bar).exp();
    let residual = (t_values
        .iter()
        .zip(&ys)
        .map(|(t, y)| {
            let fit = y_bar + slope * (t - t_bar);
            (y - fit) * (y - fit)
        })
        .sum::<f64>()
        / m)
        .sqrt();
    let pass = delta > 0.0 && residual < residual_threshold;
    Ok(DecayReport {
        t_values: t_values.to_vec(),
        l2_norms: norms.to_vec(),
        c,
        delta,
        residual,
        pass,
        config_hash: None,
    })
}

/// CSV body for a norm sweep: header `t,l2_norm,block_1,...`, one row per
/// scale sample, floats in full-precision scientific form.
///
/// # Panics
///
/// Panics unless the three slices agree in length and every per-block row
/// has the same width.
pub fn decay_csv(t_values: &[f64], totals: &[f64], per_block: &[Vec<f64>]) -> String {
    assert_eq!(t_values.len(), totals.len(), "row counts differ");
    assert_eq!(t_values.len(), per_block.len(), "row counts differ");
    let blocks = per_block.first().map_or(0, Vec::len);
    assert!(
        per_block.iter().all(|row| row.len() == blocks),
        "ragged per-block rows"
    );
    let mut out = String::from("t,l2_norm");
    for j in 1..=blocks {
        out.push_str(&format!(",block_{j}"));
    }
    out.push('\n');
    for ((t, total), row) in t_values.iter().zip(totals).zip(per_block) {
        let mut line = String::new();
        push_f64(&mut line, *t);
        push_f64(&mut line, *total);
        for v in row {
            push_f64(&mut line, *v);
        }
        out.push_str(&line);
        out.push('\n');
    }
    out
}
