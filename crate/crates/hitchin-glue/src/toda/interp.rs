//! Cubic Hermite interpolation on a uniform grid.
//!
//! Solutions of the radial Toda system are stored on a log-uniform grid; all
//! downstream consumers (metric assembly, curvature stencils, growth
//! estimates) sample them at arbitrary radii. A cubic Hermite interpolant
//! with externally supplied nodal slopes keeps full control over the
//! derivative data: the solver feeds slopes from a fourth-order stencil, so
//! values interpolate at `O(h^4)` and first derivatives at `O(h^3)`.
//!
//! An optional Fritsch-Carlson limiter clamps the slopes so the interpolant
//! is monotone wherever the data is; for our profiles it activates only in
//! the rounding-noise tail, where it suppresses spurious oscillation.

/// Cubic Hermite interpolant on a uniform abscissa grid.
#[derive(Debug, Clone)]
pub struct CubicHermite {
    x0: f64,
    h: f64,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl CubicHermite {
    /// Builds the interpolant from nodal values and nodal slopes.
    ///
    /// # Panics
    ///
    /// Panics if fewer than 2 nodes, mismatched lengths, or `h <= 0`.
    pub fn new(x0: f64, h: f64, y: Vec<f64>, d: Vec<f64>) -> Self {
        assert!(y.len() >= 2, "need at least two nodes");
        assert_eq!(y.len(), d.len(), "values and slopes must align");
        assert!(h > 0.0, "spacing must be positive");
        CubicHermite { x0, h, y, d }
    }

    fn cell(&self, x: f64) -> (usize, f64) {
        let n = self.y.len();
        let s = (x - self.x0) / self.h;
        let mut k = s.floor() as isize;
        if k < 0 {
            k = 0;
        }
        if k as usize > n - 2 {
            k = (n - 2) as isize;
        }
        let k = k as usize;
        (k, s - k as f64)
    }

    /// Stored value at node `j`, bypassing cell arithmetic.
    pub fn nodal_value(&self, j: usize) -> f64 {
        self.y[j]
    }

    /// Interpolated value at `x` (clamped to the grid span).
    pub fn eval(&self, x: f64) -> f64 {
        let (k, t) = self.cell(x);
        let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], self.d[k], self.d[k + 1]);
        let h = self.h;
        let t2 = t * t;
        let t3 = t2 * t;
        (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * h * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * h * d1
    }

    /// Derivative of the interpolant at `x`; accuracy oracle for the tests
    /// (production derivative reads come from dedicated slope tables).
    #[cfg(test)]
    pub fn deriv(&self, x: f64) -> f64 {
        let (k, t) = self.cell(x);
        let (y0, y1, d0, d1) = (self.y[k], self.y[k + 1], self.d[k], self.d[k + 1]);
        let h = self.h;
        let t2 = t * t;
        ((6.0 * t2 - 6.0 * t) * y0
            + (3.0 * t2 - 4.0 * t + 1.0) * h * d0
            + (-6.0 * t2 + 6.0 * t) * y1
            + (3.0 * t2 - 2.0 * t) * h * d1)
            / h
    }

    /// Applies the Fritsch-Carlson monotonicity limiter to the slopes.
    pub fn limit_monotone(&mut self) {
        let n = self.y.len();
        for k in 0..n - 1 {
            let delta = (self.y[k + 1] - self.y[k]) / self.h;
            if delta == 0.0 {
                self.d[k] = 0.0;
                self.d[k + 1] = 0.0;
                continue;
            }
            let a = self.d[k] / delta;
            let b = self.d[k + 1] / delta;
            if a < 0.0 {
                self.d[k] = 0.0;
            }
            if b < 0.0 {
                self.d[k + 1] = 0.0;
            }
            let a = self.d[k] / delta;
            let b = self.d[k + 1] / delta;
            let s = a * a + b * b;
            if s > 9.0 {
                let tau = 3.0 / s.sqrt();
                self.d[k] = tau * a * delta;
                self.d[k + 1] = tau * b * delta;
            }
        }
    }
}

/// Nodal slopes from fourth-order finite differences on uniform data.
///
/// Interior nodes use the 5-point central stencil; the two nodes at each end
/// use one-sided 5-point stencils of the same order.
pub fn slopes_fourth_order(h: f64, y: &[f64]) -> Vec<f64> {
    let n = y.len();
    assert!(n >= 5, "fourth-order slopes need at least 5 nodes");
    let mut d = vec![0.0; n];
    let c = 1.0 / (12.0 * h);
    d[0] = c * (-25.0 * y[0] + 48.0 * y[1] - 36.0 * y[2] + 16.0 * y[3] - 3.0 * y[4]);
    d[1] = c * (-3.0 * y[0] - 10.0 * y[1] + 18.0 * y[2] - 6.0 * y[3] + y[4]);
    for k in 2..n - 2 {
        d[k] = c * (y[k - 2] - 8.0 * y[k - 1] + 8.0 * y[k + 1] - y[k + 2]);
    }
    d[n - 2] = -c * (-3.0 * y[n - 1] - 10.0 * y[n - 2] + 18.0 * y[n - 3] - 6.0 * y[n - 4] + y[n - 5]);
    d[n - 1] = -c * (-25.0 * y[n - 1] + 48.0 * y[n - 2] - 36.0 * y[n - 3] + 16.0 * y[n - 4] - 3.0 * y[n - 5]);
    d
}
