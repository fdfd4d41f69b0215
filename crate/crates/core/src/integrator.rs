//! Adaptive implicit integrator for stiff scalar ODEs.
//!
//! Three-stage Radau IIA (order 5, L-stable, stiffly accurate) with full
//! Newton iterations on the stage system and step-doubling error control.

use std::fmt;

use thiserror::Error;

/// Right-hand side `x' = f(t, x)` and its derivative in `x`.
pub trait ScalarOde {
    type Error: fmt::Debug + Clone;
    fn rhs(&self, t: f64, x: f64) -> Result<f64, Self::Error>;
    fn jacobian(&self, t: f64, x: f64) -> Result<f64, Self::Error>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    /// Initial step magnitude.
    pub h_init: f64,
    /// Steps below this magnitude abort the integration.
    pub h_min: f64,
    /// Upper bound on the step magnitude.
    pub h_max: f64,
}

impl Default for StepControl {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            h_init: 1e-8,
            h_min: 1e-15,
            h_max: 0.05,
        }
    }
}

/// Returned by the observer after every accepted step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntegrateError<E: fmt::Debug> {
    #[error("step size underflow at t = {t} (h = {h:e}, last right-hand-side error: {last_error:?})")]
    StepUnderflow {
        t: f64,
        x: f64,
        h: f64,
        last_error: Option<E>,
    },
    #[error("initial value is not finite")]
    NonFiniteStart,
}

/// Final state of a finished integration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Integration {
    pub t: f64,
    pub x: f64,
    pub accepted: usize,
    pub rejected: usize,
    /// True when the observer requested the stop.
    pub stopped: bool,
    /// Largest accepted error estimate relative to the local tolerance.
    pub max_error_ratio: f64,
}

const SQRT6: f64 = 2.449_489_742_783_178;

struct Tableau {
    c: [f64; 3],
    a: [[f64; 3]; 3],
}

fn tableau() -> Tableau {
    Tableau {
        c: [(4.0 - SQRT6) / 10.0, (4.0 + SQRT6) / 10.0, 1.0],
        a: [
            [
                (88.0 - 7.0 * SQRT6) / 360.0,
                (296.0 - 169.0 * SQRT6) / 1800.0,
                (-2.0 + 3.0 * SQRT6) / 225.0,
            ],
            [
                (296.0 + 169.0 * SQRT6) / 1800.0,
                (88.0 + 7.0 * SQRT6) / 360.0,
                (-2.0 - 3.0 * SQRT6) / 225.0,
            ],
            [(16.0 - SQRT6) / 36.0, (16.0 + SQRT6) / 36.0, 1.0 / 9.0],
        ],
    }
}

fn solve3(mut m: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..3 {
            let f = m[row][col] / m[col][col];
            let pivot = m[col];
            for (v, p) in m[row].iter_mut().zip(pivot).skip(col) {
                *v -= f * p;
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = b[row];
        for k in row + 1..3 {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    x.iter().all(|v| v.is_finite()).then_some(x)
}

enum StepFailure<E> {
    Rhs(E),
    Newton,
}

fn radau_step<O: ScalarOde>(
    ode: &O,
    tab: &Tableau,
    t: f64,
    x: f64,
    h: f64,
    tol: f64,
) -> Result<f64, StepFailure<O::Error>> {
    let mut z = [0.0_f64; 3];
    let mut prev_norm = f64::INFINITY;
    for _ in 0..12 {
        let mut f = [0.0; 3];
        let mut jac = [0.0; 3];
        for j in 0..3 {
            let tj = t + tab.c[j] * h;
            f[j] = ode.rhs(tj, x + z[j]).map_err(StepFailure::Rhs)?;
            jac[j] = ode.jacobian(tj, x + z[j]).map_err(StepFailure::Rhs)?;
        }
        let mut m = [[0.0; 3]; 3];
        let mut g = [0.0; 3];
        for i in 0..3 {
            let mut s = 0.0;
            for j in 0..3 {
                s += tab.a[i][j] * f[j];
                m[i][j] = -h * tab.a[i][j] * jac[j];
            }
            m[i][i] += 1.0;
            g[i] = -(z[i] - h * s);
        }
        let dz = solve3(m, g).ok_or(StepFailure::Newton)?;
        let norm = dz.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
        for i in 0..3 {
            z[i] += dz[i];
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(StepFailure::Newton);
        }
        if norm <= 1e-3 * tol || norm <= 4.0 * f64::EPSILON * (x + z[2]).abs() {
            return Ok(x + z[2]);
        }
        if prev_norm.is_finite() {
            let theta = norm / prev_norm;
            if theta < 1.0 {
                // remaining error of a contraction with rate theta
                if theta / (1.0 - theta) * norm <= 0.03 * tol {
                    return Ok(x + z[2]);
                }
            } else if norm > 0.03 * tol {
                return Err(StepFailure::Newton);
            } else {
                // stagnating at the rounding level
                return Ok(x + z[2]);
            }
        }
        prev_norm = norm;
    }
    Err(StepFailure::Newton)
}

/// Integrates from `(t0, x0)` towards `t_end` (either direction).
///
/// `observer` sees every accepted point, starting with the initial one, and
/// may stop the integration early.
pub fn integrate<O, F>(
    ode: &O,
    t0: f64,
    x0: f64,
    t_end: f64,
    ctrl: &StepControl,
    mut observer: F,
) -> Result<Integration, IntegrateError<O::Error>>
where
    O: ScalarOde,
    F: FnMut(f64, f64) -> Control,
{
    if !x0.is_finite() || !t0.is_finite() {
        return Err(IntegrateError::NonFiniteStart);
    }
    let tab = tableau();
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut out = Integration {
        t: t0,
        x: x0,
        accepted: 0,
        rejected: 0,
        stopped: false,
        max_error_ratio: 0.0,
    };
    if observer(t0, x0) == Control::Stop {
        out.stopped = true;
        return Ok(out);
    }
    let mut h = ctrl.h_init.min(ctrl.h_max);
    let mut last_error = None;
    let (mut t, mut x) = (t0, x0);
    while (t_end - t) * dir > 0.0 {
        let remaining = (t_end - t).abs();
        let last = h >= remaining;
        let hs = if last { remaining } else { h };
        let tol_base = |v: f64| ctrl.atol + ctrl.rtol * v.abs();
        let attempt = (|| {
            let full = radau_step(ode, &tab, t, x, dir * hs, tol_base(x))?;
            let mid = radau_step(ode, &tab, t, x, dir * hs / 2.0, tol_base(x))?;
            let half = radau_step(ode, &tab, t + dir * hs / 2.0, mid, dir * hs / 2.0, tol_base(mid))?;
            Ok((full, half))
        })();
        match attempt {
            Ok((full, half)) => {
                let err = (half - full).abs() / 15.0;
                let tol = ctrl.atol + ctrl.rtol * x.abs().max(half.abs());
                let ratio = err / tol;
                if ratio <= 1.0 {
                    t = if last { t_end } else { t + dir * hs };
                    x = half;
                    out.accepted += 1;
                    out.max_error_ratio = out.max_error_ratio.max(ratio);
                    if observer(t, x) == Control::Stop {
                        out.stopped = true;
                        break;
                    }
                } else {
                    out.rejected += 1;
                }
                let factor = if ratio == 0.0 {
                    4.0
                } else {
                    (0.9 * ratio.powf(-1.0 / 6.0)).clamp(0.2, 4.0)
                };
                h = (hs * factor).min(ctrl.h_max);
            }
            Err(fail) => {
                if let StepFailure::Rhs(e) = fail {
                    last_error = Some(e);
                }
                out.rejected += 1;
                h = hs * 0.25;
            }
        }
        if h < ctrl.h_min && (t_end - t) * dir > 0.0 {
            return Err(IntegrateError::StepUnderflow {
                t,
                x,
                h,
                last_error,
            });
        }
    }
    out.t = t;
    out.x = x;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    struct Linear(f64);
    impl ScalarOde for Linear {
        type Error = ();
        fn rhs(&self, _t: f64, x: f64) -> Result<f64, ()> {
            Ok(self.0 * x)
        }
        fn jacobian(&self, _t: f64, _x: f64) -> Result<f64, ()> {
            Ok(self.0)
        }
    }

    struct Stiff;
    impl ScalarOde for Stiff {
        type Error = ();
        // x' = -1e6 (x - cos t), solution hugs cos t
        fn rhs(&self, t: f64, x: f64) -> Result<f64, ()> {
            Ok(-1e6 * (x - t.cos()))
        }
        fn jacobian(&self, _t: f64, _x: f64) -> Result<f64, ()> {
            Ok(-1e6)
        }
    }

    struct Riccati;
    impl ScalarOde for Riccati {
        type Error = &'static str;
        // x' = x^2 blows up at t = 1 for x(0) = 1
        fn rhs(&self, _t: f64, x: f64) -> Result<f64, &'static str> {
            if x > 1e8 {
                Err("domain")
            } else {
                Ok(x * x)
            }
        }
        fn jacobian(&self, _t: f64, x: f64) -> Result<f64, &'static str> {
            Ok(2.0 * x)
        }
    }

    #[test]
    fn exponential_growth_and_decay() {
        let ctrl = StepControl::default();
        let r = integrate(&Linear(1.0), 0.0, 1.0, 2.0, &ctrl, |_, _| Control::Continue).unwrap();
        assert_eq!(r.t, 2.0);
        assert_relative_eq!(r.x, 2f64.exp(), max_relative = 1e-9);
        let r = integrate(&Linear(1.0), 2.0, 2f64.exp(), 0.0, &ctrl, |_, _| Control::Continue).unwrap();
        assert_eq!(r.t, 0.0);
        assert_relative_eq!(r.x, 1.0, max_relative = 1e-9);
    }

    #[test]
    fn stiff_problem_takes_large_steps() {
        let ctrl = StepControl {
            h_max: 0.5,
            ..StepControl::default()
        };
        let r = integrate(&Stiff, 0.0, 1.0, 3.0, &ctrl, |_, _| Control::Continue).unwrap();
        // x ~ cos t + sin t / 1e6
        assert!((r.x - 3f64.cos()).abs() < 2e-6);
        assert!(r.accepted < 2000, "accepted {}", r.accepted);
    }

    #[test]
    fn observer_can_stop() {
        let ctrl = StepControl::default();
        let r = integrate(&Riccati, 0.0, 1.0, 2.0, &ctrl, |_, x| {
            if x > 100.0 {
                Control::Stop
            } else {
                Control::Continue
            }
        })
        .unwrap();
        assert!(r.stopped);
        assert!(r.t < 1.0 && r.t > 0.98);
    }

    #[test]
    fn underflow_reported() {
        let ctrl = StepControl::default();
        let e = integrate(&Riccati, 0.0, 1.0, 2.0, &ctrl, |_, _| Control::Continue).unwrap_err();
        assert!(matches!(e, IntegrateError::StepUnderflow { .. }));
    }

    #[test]
    fn linear_solve() {
        let x = solve3([[0.0, 1.0, 0.0], [2.0, 0.0, 0.0], [0.0, 0.0, 4.0]], [1.0, 2.0, 8.0]).unwrap();
        assert_eq!(x, [1.0, 1.0, 2.0]);
    }
}
