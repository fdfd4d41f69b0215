//! Piecewise cubic Hermite interpolation with a monotonicity limiter.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CurveError {
    #[error("need at least two nodes, got {0}")]
    TooFewNodes(usize),
    #[error("node abscissae must be strictly increasing (index {0})")]
    NotIncreasing(usize),
    #[error("nodes, values and slopes differ in length")]
    LengthMismatch,
    #[error("non-finite node data at index {0}")]
    NonFinite(usize),
}

/// Cubic Hermite interpolant through `(x_i, v_i)` with prescribed slopes.
///
/// On intervals where the data are monotone the slopes are limited with the
/// Fritsch-Carlson condition so the interpolant stays monotone there.
#[derive(Debug, Clone, PartialEq)]
pub struct HermiteCurve {
    xs: Vec<f64>,
    vs: Vec<f64>,
    /// Slope at the left and right end of each interval.
    ds: Vec<(f64, f64)>,
}

impl HermiteCurve {
    pub fn new(xs: Vec<f64>, vs: Vec<f64>, slopes: Vec<f64>) -> Result<Self, CurveError> {
        if xs.len() != vs.len() || xs.len() != slopes.len() {
            return Err(CurveError::LengthMismatch);
        }
        if xs.len() < 2 {
            return Err(CurveError::TooFewNodes(xs.len()));
        }
        for i in 0..xs.len() {
            if !(xs[i].is_finite() && vs[i].is_finite() && slopes[i].is_finite()) {
                return Err(CurveError::NonFinite(i));
            }
            if i > 0 && xs[i] <= xs[i - 1] {
                return Err(CurveError::NotIncreasing(i));
            }
        }
        let ds = (0..xs.len() - 1)
            .map(|i| {
                let secant = (vs[i + 1] - vs[i]) / (xs[i + 1] - xs[i]);
                limit(secant, slopes[i], slopes[i + 1])
            })
            .collect();
        Ok(Self { xs, vs, ds })
    }

    pub fn nodes(&self) -> &[f64] {
        &self.xs
    }

    pub fn values(&self) -> &[f64] {
        &self.vs
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.xs[0], self.xs[self.xs.len() - 1])
    }

    fn interval(&self, x: f64) -> usize {
        let i = self.xs.partition_point(|&v| v <= x);
        i.clamp(1, self.xs.len() - 1) - 1
    }

    /// Value at `x`; the end cubics extend beyond the domain.
    pub fn eval(&self, x: f64) -> f64 {
        self.eval_in(self.interval(x), x)
    }

    /// Derivative at `x`.
    pub fn derivative(&self, x: f64) -> f64 {
        let i = self.interval(x);
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (d0, d1) = self.ds[i];
        let (v0, v1) = (self.vs[i], self.vs[i + 1]);
        let dh00 = 6.0 * t * t - 6.0 * t;
        let dh10 = 3.0 * t * t - 4.0 * t + 1.0;
        let dh01 = -dh00;
        let dh11 = 3.0 * t * t - 2.0 * t;
        (dh00 * v0 + dh01 * v1) / h + dh10 * d0 + dh11 * d1
    }

    fn eval_in(&self, i: usize, x: f64) -> f64 {
        let (x0, x1) = (self.xs[i], self.xs[i + 1]);
        let h = x1 - x0;
        let t = (x - x0) / h;
        let (d0, d1) = self.ds[i];
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.vs[i] + h10 * h * d0 + h01 * self.vs[i + 1] + h11 * h * d1
    }

    /// First root of `eval(x) - target(x)` scanning left to right, refined by
    /// bisection on the interpolant to absolute width `tol`.
    pub fn first_crossing<F: Fn(f64) -> f64>(&self, target: F, tol: f64) -> Option<f64> {
        let g = |x: f64| self.eval(x) - target(x);
        (0..self.ds.len()).find_map(|i| self.root_in(i, &g, tol))
    }

    /// Last root of `eval(x) - target(x)` scanning right to left.
    pub fn last_crossing<F: Fn(f64) -> f64>(&self, target: F, tol: f64) -> Option<f64> {
        let g = |x: f64| self.eval(x) - target(x);
        (0..self.ds.len()).rev().find_map(|i| self.root_in(i, &g, tol))
    }

    fn root_in<G: Fn(f64) -> f64>(&self, i: usize, g: &G, tol: f64) -> Option<f64> {
        let (mut a, mut b) = (self.xs[i], self.xs[i + 1]);
        let (mut ga, gb) = (g(a), g(b));
        if ga == 0.0 {
            return Some(a);
        }
        if gb == 0.0 {
            return Some(b);
        }
        if ga.signum() == gb.signum() {
            return None;
        }
        while b - a > tol {
            let mid = 0.5 * (a + b);
            if mid <= a || mid >= b {
                break;
            }
            let gm = g(mid);
            if gm == 0.0 {
                return Some(mid);
            }
            if gm.signum() == ga.signum() {
                a = mid;
                ga = gm;
            } else {
                b = mid;
            }
        }
        Some(0.5 * (a + b))
    }
}

fn limit(secant: f64, d0: f64, d1: f64) -> (f64, f64) {
    if secant == 0.0 {
        return (d0, d1);
    }
    let alpha = d0 / secant;
    let beta = d1 / secant;
    if alpha < 0.0 || beta < 0.0 {
        return (d0, d1);
    }
    let r2 = alpha * alpha + beta * beta;
    if r2 > 9.0 {
        let tau = 3.0 / r2.sqrt();
        (tau * d0, tau * d1)
    } else {
        (d0, d1)
    }
}
