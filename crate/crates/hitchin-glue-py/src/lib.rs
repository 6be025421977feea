//! Python bindings for the gluing toolkit, importable as `hitchin_glue`.
//!
//! Two classes carry the state: [`TodaProfile`] wraps one solved radial
//! profile, [`Gluing`] owns a cluster partition together with the profile
//! family its diagnostics need. Exact bookkeeping is exposed as plain
//! functions returning integer fractions.

use num_complex::Complex64;
use num_rational::Rational64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use std::collections::BTreeMap;

use hitchin_glue::{
    alpha_checked, build_atilde, connection_growth, error_l2, fit_decay, hitchin_residual_model,
    indicial_csv, indicial_spectrum, model_metric, painleve_residual, parabolic_degree,
    rescaled_laplacian_limit, solution_csv, solve_toda, validate_strata, ClusterPartition,
    QuadratureSpec, SolverConfig, StrataCount, TodaError, TodaFamily, TodaSolution,
};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn run_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn toda_err(e: TodaError) -> PyErr {
    match e {
        TodaError::InvalidConfig(_) => value_err(e),
        other => run_err(other),
    }
}

fn fraction(q: Rational64) -> (i64, i64) {
    (*q.numer(), *q.denom())
}

/// One solved radial profile of rank `K`.
#[pyclass]
struct TodaProfile {
    inner: TodaSolution,
}

#[pymethods]
impl TodaProfile {
    /// Rank of the profile.
    #[getter]
    fn k(&self) -> usize {
        self.inner.k()
    }

    /// Sup norm of the collocation residual at the solved grid.
    #[getter]
    fn residual_norm(&self) -> f64 {
        self.inner.residual_norm()
    }

    /// Profile values `u_i` at scale `t` and radius `r`.
    fn evaluate(&self, t: f64, r: f64) -> PyResult<Vec<f64>> {
        self.inner.evaluate_rescaled(t, r).map_err(toda_err)
    }

    /// Logarithmic derivatives `r du_i/dr` at scale `t` and radius `r`.
    fn log_deriv(&self, t: f64, r: f64) -> PyResult<Vec<f64>> {
        self.inner.rescaled_log_deriv(t, r).map_err(toda_err)
    }

    /// Residual of the rank-2 algebraic reduction; errors for other ranks.
    fn painleve_residual(&self) -> PyResult<f64> {
        painleve_residual(&self.inner).map_err(toda_err)
    }

    /// CSV body of the solved grid, one row per radius.
    fn csv(&self) -> String {
        solution_csv(&self.inner)
    }

    /// JSON record of the solution, round-trippable via `from_json`.
    fn to_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.inner.to_record()).map_err(run_err)
    }

    /// Rebuilds a profile from a `to_json` record, revalidating it.
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<TodaProfile> {
        let record = serde_json::from_str(text).map_err(value_err)?;
        let inner = TodaSolution::from_record(record).map_err(toda_err)?;
        Ok(TodaProfile { inner })
    }

    fn __repr__(&self) -> String {
        format!(
            "TodaProfile(k={}, residual_norm={:.3e})",
            self.inner.k(),
            self.inner.residual_norm()
        )
    }
}

/// Solves the rank-`k` radial profile.
#[pyfunction]
#[pyo3(name = "solve_toda")]
#[pyo3(signature = (k, tolerance=1e-10, grid_points=2000, r_min=1e-4, r_max=6.0, max_iterations=50))]
fn py_solve_toda(
    k: usize,
    tolerance: f64,
    grid_points: usize,
    r_min: f64,
    r_max: f64,
    max_iterations: usize,
) -> PyResult<TodaProfile> {
    let config = SolverConfig {
        tolerance,
        grid_points,
        r_min,
        r_max,
        max_iterations,
        ..SolverConfig::default()
    };
    let inner = solve_toda(k, &config).map_err(toda_err)?;
    Ok(TodaProfile { inner })
}

/// A cluster partition together with the solved profile family its
/// gluing diagnostics need.
#[pyclass]
struct Gluing {
    partition: ClusterPartition,
    family: TodaFamily,
}

impl Gluing {
    fn checked_scales(t_values: &[f64]) -> PyResult<()> {
        if t_values.is_empty()
            || t_values[0] <= 0.0
            || t_values.windows(2).any(|w| w[1] <= w[0])
        {
            return Err(value_err("scales must be positive and strictly increasing"));
        }
        Ok(())
    }
}

#[pymethods]
impl Gluing {
    /// Builds the partition from cluster sizes and solves the needed
    /// profiles at the given solver settings.
    #[new]
    #[pyo3(signature = (sizes, tolerance=1e-10, grid_points=2000))]
    fn new(sizes: Vec<usize>, tolerance: f64, grid_points: usize) -> PyResult<Self> {
        let partition = ClusterPartition::from_sizes(&sizes).map_err(value_err)?;
        let config = SolverConfig {
            tolerance,
            grid_points,
            ..SolverConfig::default()
        };
        let family = TodaFamily::for_partition(&partition, &config).map_err(toda_err)?;
        Ok(Gluing { partition, family })
    }

    /// Total rank `n`.
    #[getter]
    fn n(&self) -> usize {
        self.partition.n()
    }

    /// Cluster sizes, in block order.
    #[getter]
    fn block_sizes(&self) -> Vec<usize> {
        self.partition.blocks().iter().map(|b| b.k).collect()
    }

    /// Diagonal entries of the corrected model metric at scale `t`,
    /// sampling every block at radius `r`.
    fn model_metric(&self, t: f64, r: f64) -> PyResult<Vec<f64>> {
        if t <= 0.0 {
            return Err(value_err("scale t must be positive"));
        }
        let radii = vec![r; self.partition.blocks().len()];
        model_metric(&self.partition, &self.family, t, &radii).map_err(run_err)
    }

    /// Max absolute entry of the model pair's curvature residual at `z`.
    fn hitchin_residual(&self, t: f64, z: Complex64) -> PyResult<f64> {
        if t <= 0.0 {
            return Err(value_err("scale t must be positive"));
        }
        let res = hitchin_residual_model(&self.partition, &self.family, t, z).map_err(run_err)?;
        Ok(res.iter().map(|c| c.norm()).fold(0.0, f64::max))
    }

    /// Disk L2 norm of the glued-metric error at scale `t`.
    fn error_l2(&self, t: f64) -> PyResult<f64> {
        if t <= 0.0 {
            return Err(value_err("scale t must be positive"));
        }
        error_l2(&self.partition, &self.family, t, &QuadratureSpec::default()).map_err(run_err)
    }

    /// Sweeps `error_l2` over the scales and fits `c exp(-delta t)`;
    /// returns the fit as a dict with the sampled norms.
    #[pyo3(signature = (t_values, residual_threshold=0.2))]
    fn fit_decay<'py>(
        &self,
        py: Python<'py>,
        t_values: Vec<f64>,
        residual_threshold: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        Self::checked_scales(&t_values)?;
        if residual_threshold <= 0.0 {
            return Err(value_err("residual threshold must be positive"));
        }
        let spec = QuadratureSpec::default();
        let norms = t_values
            .iter()
            .map(|&t| error_l2(&self.partition, &self.family, t, &spec))
            .collect::<Result<Vec<f64>, _>>()
            .map_err(run_err)?;
        let rep = fit_decay(&t_values, &norms, residual_threshold).map_err(run_err)?;
        let out = PyDict::new(py);
        out.set_item("delta", rep.delta)?;
        out.set_item("c", rep.c)?;
        out.set_item("residual", rep.residual)?;
        out.set_item("pass", rep.pass)?;
        out.set_item("norms", rep.l2_norms)?;
        Ok(out)
    }

    /// Non-integer indicial roots of the decoupled operator at level `j`,
    /// as exact fraction strings: `(roots_at_zero, roots_at_infinity)`.
    fn indicial_roots(&self, j: usize) -> PyResult<(Vec<String>, Vec<String>)> {
        if j == 0 {
            return Err(value_err("level j must be at least 1"));
        }
        let spectrum = indicial_spectrum(&build_atilde(&self.partition, j));
        let fmt = |set: &[Rational64]| set.iter().map(Rational64::to_string).collect();
        Ok((fmt(&spectrum.s0), fmt(&spectrum.sinf)))
    }

    /// CSV of the pairwise indicial data at level `j`.
    fn indicial_csv(&self, j: usize) -> PyResult<String> {
        if j == 0 {
            return Err(value_err("level j must be at least 1"));
        }
        Ok(indicial_csv(&indicial_spectrum(&build_atilde(
            &self.partition,
            j,
        ))))
    }

    /// Sup norms of the glued connection coefficient and its radial
    /// derivative across the scales, with the fitted derivative exponent.
    fn growth<'py>(&self, py: Python<'py>, t_values: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        Self::checked_scales(&t_values)?;
        if t_values.len() < 2 || t_values[0] < 1.0 {
            return Err(value_err("need at least two scales, starting at t >= 1"));
        }
        let table = connection_growth(&self.partition, &self.family, &t_values).map_err(run_err)?;
        let out = PyDict::new(py);
        out.set_item("exponent", table.exponent)?;
        out.set_item("sup_a", table.sup_a)?;
        out.set_item("sup_da", table.sup_da)?;
        Ok(out)
    }

    /// Max deviation per scale of the pulled-back profiles from their
    /// level-`j` block targets, sampled at the given radii in `[0.1, 2]`.
    #[pyo3(signature = (j, t_values, samples=vec![0.1, 0.5, 1.0, 2.0]))]
    fn limit_deviations(
        &self,
        j: usize,
        t_values: Vec<f64>,
        samples: Vec<f64>,
    ) -> PyResult<Vec<f64>> {
        if j == 0 {
            return Err(value_err("level j must be at least 1"));
        }
        Self::checked_scales(&t_values)?;
        if samples.is_empty() || samples.iter().any(|&w| !(0.1..=2.0).contains(&w)) {
            return Err(value_err("sample radii must lie in [0.1, 2]"));
        }
        let table =
            rescaled_laplacian_limit(&self.partition, &self.family, j, &t_values, &samples)
                .map_err(run_err)?;
        Ok(table.max_per_t)
    }

    fn __repr__(&self) -> String {
        let sizes: Vec<String> = self
            .partition
            .blocks()
            .iter()
            .map(|b| b.k.to_string())
            .collect();
        format!("Gluing(sizes=[{}])", sizes.join(", "))
    }
}

/// Diagonal exponent `alpha_{K,i}` as an exact fraction `(numer, denom)`.
#[pyfunction]
#[pyo3(name = "alpha")]
fn py_alpha(k: usize, i: usize) -> PyResult<(i64, i64)> {
    alpha_checked(k, i).map(fraction).map_err(value_err)
}

/// Whether the counts `{K: N_K}` fill the discriminant budget
/// `sum (K-1) N_K = 2 (n^2 - n)(g - 1)`.
#[pyfunction]
#[pyo3(name = "validate_strata")]
fn py_validate_strata(n: usize, g: usize, counts: BTreeMap<usize, u64>) -> bool {
    validate_strata(&StrataCount { n, g, counts })
}

/// Parabolic degree `deg_e + (n^2 - n)(g - 1) + sum(weights)` with the
/// weights given as exact fractions; returns `(numer, denom)`.
#[pyfunction]
#[pyo3(name = "parabolic_degree")]
fn py_parabolic_degree(
    n: usize,
    g: usize,
    deg_e: i64,
    weights: Vec<(i64, i64)>,
) -> PyResult<(i64, i64)> {
    let weights = weights
        .into_iter()
        .map(|(num, den)| {
            if den == 0 {
                Err(value_err("weight denominator must be nonzero"))
            } else {
                Ok(Rational64::new(num, den))
            }
        })
        .collect::<PyResult<Vec<Rational64>>>()?;
    Ok(fraction(parabolic_degree(n, g, deg_e, &weights)))
}

#[pymodule]
#[pyo3(name = "hitchin_glue")]
fn bindings(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<TodaProfile>()?;
    m.add_class::<Gluing>()?;
    m.add_function(wrap_pyfunction!(py_solve_toda, m)?)?;
    m.add_function(wrap_pyfunction!(py_alpha, m)?)?;
    m.add_function(wrap_pyfunction!(py_validate_strata, m)?)?;
    m.add_function(wrap_pyfunction!(py_parabolic_degree, m)?)?;
    Ok(())
}
