//! Deterministic transport flow `dθ/ds = (F1, F2)(s, θ)` solved with an
//! adaptive Dormand–Prince 5(4) pair and stored for cubic Hermite
//! interpolation.

use crate::coefficients::CoefficientSet;
use crate::error::{LabError, Result};

/// Default cap on the step size, as a fraction of the flow horizon.
pub const DEFAULT_MAX_STEP_FRACTION: f64 = 1.0 / 256.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransportOptions {
    /// Absolute and relative local error tolerance.
    pub tol: f64,
    /// Largest step as a fraction of `T - τ`.
    pub max_step_fraction: f64,
}

impl TransportOptions {
    pub fn new(tol: f64) -> Self {
        Self {
            tol,
            max_step_fraction: DEFAULT_MAX_STEP_FRACTION,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransportFlow {
    tau: f64,
    xi: Vec<f64>,
    tol: f64,
    times: Vec<f64>,
    /// Flattened states, `dim` per node.
    values: Vec<f64>,
    /// Vector field at each node, for the Hermite interpolant.
    slopes: Vec<f64>,
    dim: usize,
}

// Dormand–Prince tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

struct Stepper<'a> {
    cs: &'a CoefficientSet,
    k: [Vec<f64>; 7],
    tmp: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(cs: &'a CoefficientSet) -> Self {
        let n = cs.state_dim();
        Self {
            cs,
            k: std::array::from_fn(|_| vec![0.0; n]),
            tmp: vec![0.0; n],
        }
    }

    fn rhs(cs: &CoefficientSet, t: f64, y: &[f64], out: &mut [f64]) {
        let d = cs.d();
        let (o1, o2) = out.split_at_mut(d);
        cs.f1_into(t, y, o1);
        cs.f2_into(t, y, o2);
    }

    /// One step from `(t, y)` with `k[0] = f(t, y)` already set. Writes the
    /// fifth-order solution to `y_new` (and `k[6] = f(t+h, y_new)`), returns
    /// the scaled error norm.
    fn step(&mut self, t: f64, y: &[f64], h: f64, y_new: &mut [f64], tol: f64) -> f64 {
        let n = y.len();
        for s in 1..7 {
            for i in 0..n {
                let mut acc = 0.0;
                for j in 0..s {
                    acc += A[s][j] * self.k[j][i];
                }
                self.tmp[i] = y[i] + h * acc;
            }
            Self::rhs(self.cs, t + C[s] * h, &self.tmp, &mut self.k[s]);
        }
        // Stage 7 is evaluated at the fifth-order solution (FSAL).
        y_new.copy_from_slice(&self.tmp);
        let mut err: f64 = 0.0;
        for i in 0..n {
            let mut e = 0.0;
            for s in 0..7 {
                e += E[s] * self.k[s][i];
            }
            let scale = tol * (1.0 + y[i].abs().max(y_new[i].abs()));
            err = err.max((h * e).abs() / scale);
        }
        err
    }
}

fn non_finite(t: f64, y: &[f64]) -> LabError {
    LabError::Evaluation {
        what: "transport vector field",
        probe: 0,
        t,
        x: y.to_vec(),
    }
}

/// Solves the transport ODE from `(tau, xi)` up to `t_end` with local error
/// at most `tol` per step.
pub fn solve_transport(
    cs: &CoefficientSet,
    tau: f64,
    xi: &[f64],
    t_end: f64,
    tol: f64,
) -> Result<TransportFlow> {
    solve_transport_with(cs, tau, xi, t_end, TransportOptions::new(tol))
}

pub fn solve_transport_with(
    cs: &CoefficientSet,
    tau: f64,
    xi: &[f64],
    t_end: f64,
    opts: TransportOptions,
) -> Result<TransportFlow> {
    let dim = cs.state_dim();
    if xi.len() != dim {
        return Err(LabError::Domain(format!(
            "initial state has dimension {} (expected {dim})",
            xi.len()
        )));
    }
    if !(tau <= t_end) || !tau.is_finite() || !t_end.is_finite() {
        return Err(LabError::Domain(format!(
            "transport needs tau <= T (tau={tau}, T={t_end})"
        )));
    }
    if !(opts.tol > 0.0) {
        return Err(LabError::Domain(format!("tolerance must be positive, got {}", opts.tol)));
    }
    let mut stepper = Stepper::new(cs);
    let mut times = vec![tau];
    let mut values = xi.to_vec();
    let mut slopes = vec![0.0; dim];
    Stepper::rhs(cs, tau, xi, &mut slopes);
    if slopes.iter().any(|v| !v.is_finite()) {
        return Err(non_finite(tau, xi));
    }

    let span = t_end - tau;
    let max_step = (span * opts.max_step_fraction).max(f64::MIN_POSITIVE);
    let mut t = tau;
    let mut y = xi.to_vec();
    let mut y_new = vec![0.0; dim];
    let mut h = max_step;
    stepper.k[0].copy_from_slice(&slopes);
    let end_slack = 64.0 * f64::EPSILON * t_end.abs().max(1.0);

    while t_end - t > end_slack {
        h = h.min(max_step).min(t_end - t);
        let h_min = 16.0 * f64::EPSILON * t.abs().max(1.0);
        if h < h_min {
            return Err(LabError::Stiffness { t, h });
        }
        let err = stepper.step(t, &y, h, &mut y_new, opts.tol);
        if !err.is_finite() {
            h *= 0.2;
            if h < h_min {
                return Err(non_finite(t, &y));
            }
            continue;
        }
        if err <= 1.0 {
            t = if t_end - (t + h) <= end_slack { t_end } else { t + h };
            y.copy_from_slice(&y_new);
            let (head, tail) = stepper.k.split_at_mut(6);
            head[0].copy_from_slice(&tail[0]);
            times.push(t);
            values.extend_from_slice(&y);
            slopes.extend_from_slice(&stepper.k[0]);
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    if *times.last().unwrap() != t_end {
        // Absorb the last sub-epsilon remainder into the final node.
        *times.last_mut().unwrap() = t_end;
    }

    Ok(TransportFlow {
        tau,
        xi: xi.to_vec(),
        tol: opts.tol,
        times,
        values,
        slopes,
        dim,
    })
}

impl TransportFlow {
    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    pub fn grid(&self) -> &[f64] {
        &self.times
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn node(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn covers(&self, a: f64, b: f64) -> bool {
        self.tau <= a && b <= self.t_end()
    }

    /// Cubic Hermite interpolant at `s`, clamped to `[tau, T]`.
    pub fn eval_into(&self, s: f64, out: &mut [f64]) {
        let n = self.times.len();
        if n == 1 || s <= self.tau {
            out.copy_from_slice(self.node(0));
            return;
        }
        if s >= self.t_end() {
            out.copy_from_slice(self.node(n - 1));
            return;
        }
        let k = self.times.partition_point(|&t| t <= s) - 1;
        let (t0, t1) = (self.times[k], self.times[k + 1]);
        let h = t1 - t0;
        let u = (s - t0) / h;
        let h00 = (1.0 + 2.0 * u) * (1.0 - u) * (1.0 - u);
        let h10 = u * (1.0 - u) * (1.0 - u);
        let h01 = u * u * (3.0 - 2.0 * u);
        let h11 = u * u * (u - 1.0);
        let d = self.dim;
        for i in 0..d {
            out[i] = h00 * self.values[k * d + i]
                + h10 * h * self.slopes[k * d + i]
                + h01 * self.values[(k + 1) * d + i]
                + h11 * h * self.slopes[(k + 1) * d + i];
        }
    }

    pub fn eval(&self, s: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.eval_into(s, &mut out);
        out
    }

    /// Largest scaled discrepancy `|θ_interp - θ_rk| / (1 + |θ|)` at the
    /// interval midpoints, where `θ_rk` is a fresh Runge–Kutta half-step from
    /// the left node.
    pub fn midpoint_residual(&self, cs: &CoefficientSet) -> f64 {
        let mut stepper = Stepper::new(cs);
        let mut y_rk = vec![0.0; self.dim];
        let mut y_int = vec![0.0; self.dim];
        let mut worst: f64 = 0.0;
        for k in 0..self.times.len().saturating_sub(1) {
            let t0 = self.times[k];
            let half = 0.5 * (self.times[k + 1] - t0);
            stepper.k[0].copy_from_slice(&self.slopes[k * self.dim..(k + 1) * self.dim]);
            stepper.step(t0, self.node(k), half, &mut y_rk, 1.0);
            self.eval_into(t0 + half, &mut y_int);
            for i in 0..self.dim {
                worst = worst.max((y_rk[i] - y_int[i]).abs() / (1.0 + y_int[i].abs()));
            }
        }
        worst
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Field, HolderConstants, HolderExponents};
    use std::sync::Arc;

    #[test]
    fn kolmogorov_flow_is_linear() {
        let cs = CoefficientSet::kolmogorov(1);
        let flow = solve_transport(&cs, 0.0, &[1.0, 0.0], 1.0, 1e-10).unwrap();
        assert_eq!(flow.eval(0.0), vec![1.0, 0.0]);
        for s in [0.1, 0.37, 0.5, 0.999, 1.0] {
            let th = flow.eval(s);
            assert!((th[0] - 1.0).abs() < 1e-14);
            assert!((th[1] - s).abs() < 1e-13);
        }
    }

    #[test]
    fn quadratic_coupling_integrates_constant() {
        let zero: Field = Arc::new(|_, _, out| out[0] = 0.0);
        let f2: Field = Arc::new(|_, x, out| out[0] = x[0] * x[0]);
        let one: Field = Arc::new(|_, _, out| out[0] = 1.0);
        let j: Field = Arc::new(|_, x, out| out[0] = 2.0 * x[0]);
        let cs = CoefficientSet::new(
            "square",
            1,
            zero,
            f2,
            one,
            j,
            HolderExponents::lipschitz(),
            HolderConstants {
                c1: 1.0,
                c2: 1.0,
                c_sigma: 1.0,
                c2_bar: 2.0,
            },
            1.5,
            20.0,
        )
        .unwrap();
        let flow = solve_transport(&cs, 0.0, &[2.0, 0.0], 1.0, 1e-10).unwrap();
        for s in [0.25, 0.6, 1.0] {
            assert!((flow.eval(s)[1] - 4.0 * s).abs() < 1e-12);
        }
    }

    #[test]
    fn starts_exactly_at_xi() {
        let cs = CoefficientSet::heterogeneous_demo();
        let xi = [0.3, -1.7];
        let flow = solve_transport(&cs, 0.25, &xi, 2.0, 1e-8).unwrap();
        assert_eq!(flow.eval(0.25), xi.to_vec());
        assert_eq!(flow.node(0), &xi);
        assert_eq!(flow.t_end(), 2.0);
    }

    #[test]
    fn heterogeneous_residual_and_refinement() {
        let cs = CoefficientSet::heterogeneous_demo();
        let xi = [0.8, -0.4];
        let tol = 1e-10;
        let flow = solve_transport(&cs, 0.0, &xi, 1.0, tol).unwrap();
        assert!(flow.midpoint_residual(&cs) < tol);
        let fine = solve_transport(&cs, 0.0, &xi, 1.0, tol / 100.0).unwrap();
        for k in 0..=50 {
            let s = k as f64 / 50.0;
            let (a, b) = (flow.eval(s), fine.eval(s));
            for i in 0..2 {
                assert!((a[i] - b[i]).abs() < 10.0 * tol, "s={s}: {a:?} vs {b:?}");
            }
        }
    }

    #[test]
    fn degenerate_horizon_gives_single_node() {
        let cs = CoefficientSet::kolmogorov(1);
        let flow = solve_transport(&cs, 0.5, &[1.0, 2.0], 0.5, 1e-10).unwrap();
        assert_eq!(flow.grid().len(), 1);
        assert_eq!(flow.eval(0.5), vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_reversed_horizon() {
        let cs = CoefficientSet::kolmogorov(1);
        assert!(matches!(
            solve_transport(&cs, 1.0, &[0.0, 0.0], 0.5, 1e-10),
            Err(LabError::Domain(_))
        ));
    }

    #[test]
    fn explosive_field_is_reported() {
        let f1: Field = Arc::new(|_, x, out| out[0] = x[0] * x[0]);
        let f2: Field = Arc::new(|_, x, out| out[0] = x[0]);
        let one: Field = Arc::new(|_, _, out| out[0] = 1.0);
        let cs = CoefficientSet::new(
            "riccati",
            1,
            f1,
            f2,
            one.clone(),
            one,
            HolderExponents::lipschitz(),
            HolderConstants {
                c1: 1.0,
                c2: 1.0,
                c_sigma: 1.0,
                c2_bar: 1.0,
            },
            1.5,
            1.5,
        )
        .unwrap();
        // y' = y^2 from y(0)=1 blows up at t = 1.
        let res = solve_transport(&cs, 0.0, &[1.0, 0.0], 2.0, 1e-8);
        assert!(
            matches!(res, Err(LabError::Stiffness { .. }) | Err(LabError::Evaluation { .. })),
            "{res:?}"
        );
    }
}
