//! Parametrix approximation of the backward problem `(∂_t + L)u = f`,
//! `u(T, ·) = 0`, built on the frozen Gaussian kernel.
//!
//! `u0(t, x) = -∫_t^T E_{q̃(t,x;s,·)}[f(s, Y)] ds` with the kernel frozen at
//! `(τ, ξ) = (t, x)`. One correction pass adds
//! `∫_t^T E_{q̃}[(L_s - L̃_s) u0(s, Y)] ds`, where
//!
//! ```text
//! (L - L̃)u = (F1(y) - F1(θ_s))·D1u
//!          + (F2(y) - F2(θ_s) - J(θ_s)(y1 - θ¹_s))·D2u
//!          + ½ Tr[(a(y) - a(θ_s)) D1²u]
//! ```
//!
//! Derivatives in `x` are taken under the integral with the freezing point
//! held fixed, so they reduce to score weights of the Gaussian kernel.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::coefficients::{CoefficientSet, Probe};
use crate::error::{LabError, Result};
use crate::gaussian_kernel::{
    fit_dominating_kernel, kernel_params, kernel_params_with, solve_transport_with,
    GaussianKernelParams, KernelQuadrature, TransportFlow, TransportOptions,
};
use crate::quadrature::{gauss_legendre, gaussian_expectation, standard_normal_rule};
use crate::sde_sim::{par_paths, simulate_system_with, McEstimate};
use crate::stats::loglog_slope;

pub type SourceFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;

/// Source term `f(t, x)`, Lipschitz in space with the declared constant.
#[derive(Clone)]
pub struct SourceTerm {
    pub name: String,
    pub lipschitz_constant: f64,
    f: SourceFn,
}

impl std::fmt::Debug for SourceTerm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SourceTerm")
            .field("name", &self.name)
            .field("lipschitz_constant", &self.lipschitz_constant)
            .finish_non_exhaustive()
    }
}

impl SourceTerm {
    pub fn new(name: impl Into<String>, lipschitz_constant: f64, f: SourceFn) -> Result<Self> {
        if !(lipschitz_constant >= 0.0) {
            return Err(LabError::Domain(format!(
                "Lipschitz constant must be >= 0, got {lipschitz_constant}"
            )));
        }
        Ok(Self {
            name: name.into(),
            lipschitz_constant,
            f,
        })
    }

    pub fn zero() -> Self {
        Self::new("zero", 0.0, Arc::new(|_, _| 0.0)).unwrap()
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("const:{c}"), 0.0, Arc::new(move |_, _| c)).unwrap()
    }

    /// `f(t, x) = x[k]`.
    pub fn coordinate(k: usize) -> Self {
        Self::new(format!("coord:{k}"), 1.0, Arc::new(move |_, x| x[k])).unwrap()
    }

    /// Built-in sources for `d = 1`: `zero`, `one`, `x1`, `x2`, `sin-mix`
    /// (`0.5 sin x1 + 0.5 cos x2`).
    pub fn from_id(id: &str) -> Result<Self> {
        let src = match id {
            "zero" => Self::zero(),
            "one" => Self::constant(1.0),
            "x1" => Self::coordinate(0),
            "x2" => Self::coordinate(1),
            "sin-mix" => Self::new(
                "sin-mix",
                0.5_f64.sqrt(),
                Arc::new(|_, x| 0.5 * x[0].sin() + 0.5 * x[1].cos()),
            )?,
            _ => return Err(LabError::Config(format!("unknown source term '{id}'"))),
        };
        Ok(Self {
            name: id.to_string(),
            ..src
        })
    }

    #[inline]
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        (self.f)(t, x)
    }

    /// Largest sampled ratio `|f(t,x) - f(t,y)| / |x - y|` over all probe
    /// pairs (evaluated at the first probe's time) and whether it stays within
    /// `1.01 ×` the declared constant.
    pub fn check_lipschitz(&self, probes: &[Probe]) -> (f64, bool) {
        let mut worst: f64 = 0.0;
        for (i, (t, x)) in probes.iter().enumerate() {
            for (_, y) in &probes[i + 1..] {
                let dist = x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if dist > 0.0 {
                    worst = worst.max((self.eval(*t, x) - self.eval(*t, y)).abs() / dist);
                }
            }
        }
        (worst, worst <= self.lipschitz_constant * 1.01)
    }
}

/// Quadrature orders of one parametrix level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Gauss–Legendre nodes for the outer time integral.
    pub time_nodes: usize,
    /// Gauss–Legendre nodes for the kernel's own time integrals.
    pub kernel_nodes: usize,
    /// Gauss–Hermite nodes per dimension for kernel expectations.
    pub hermite_nodes: usize,
    pub transport: TransportOptions,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            time_nodes: 32,
            kernel_nodes: 32,
            hermite_nodes: 20,
            transport: TransportOptions::new(1e-11),
        }
    }
}

impl QuadratureConfig {
    /// Low orders that are still exact for linear-Gaussian sets with
    /// polynomial sources of degree ≤ 3.
    pub fn coarse() -> Self {
        Self {
            time_nodes: 8,
            kernel_nodes: 8,
            hermite_nodes: 4,
            transport: TransportOptions {
                tol: 1e-9,
                max_step_fraction: 1.0 / 16.0,
            },
        }
    }
}

/// Orders for the correction pass: `outer` for the pass itself, `inner` for
/// the zeroth-order fields evaluated inside it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParametrixConfig {
    pub outer: QuadratureConfig,
    pub inner: QuadratureConfig,
}

impl Default for ParametrixConfig {
    fn default() -> Self {
        Self {
            outer: QuadratureConfig {
                time_nodes: 16,
                kernel_nodes: 16,
                hermite_nodes: 8,
                transport: TransportOptions::new(1e-10),
            },
            inner: QuadratureConfig {
                time_nodes: 8,
                kernel_nodes: 8,
                hermite_nodes: 6,
                transport: TransportOptions {
                    tol: 1e-8,
                    max_step_fraction: 1.0 / 32.0,
                },
            },
        }
    }
}

/// `u` and its derivative fields at one point; `d1u`, `d2u` have `d` entries,
/// `d11u` is row-major `d×d`.
#[derive(Debug, Clone, PartialEq)]
pub struct UFields {
    pub u: f64,
    pub d1u: Vec<f64>,
    pub d2u: Vec<f64>,
    pub d11u: Vec<f64>,
}

impl UFields {
    fn zeros(d: usize) -> Self {
        Self {
            u: 0.0,
            d1u: vec![0.0; d],
            d2u: vec![0.0; d],
            d11u: vec![0.0; d * d],
        }
    }

    /// Maps `-0.0` to `+0.0` so exact zeros serialise identically.
    fn normalized(mut self) -> Self {
        self.u += 0.0;
        for v in self
            .d1u
            .iter_mut()
            .chain(self.d2u.iter_mut())
            .chain(self.d11u.iter_mut())
        {
            *v += 0.0;
        }
        self
    }
}

/// Score weights `D_x q̃ / q̃` as linear maps of the standard-normal node.
struct ScoreMaps {
    d: usize,
    /// `d × 2d`: score in `x1` at `y = m + Lζ` is `s1 · ζ`.
    s1: DMatrix<f64>,
    s2: DMatrix<f64>,
    /// `Uᵀ Σ⁻¹ U`, `U = ∂m/∂x1`.
    curvature: DMatrix<f64>,
}

impl ScoreMaps {
    fn new(p: &GaussianKernelParams) -> Self {
        let d = p.d();
        let mut u = DMatrix::zeros(2 * d, d);
        for j in 0..d {
            u[(j, j)] = 1.0;
            for i in 0..d {
                u[(d + i, j)] = p.resolvent_ts[(i, j)];
            }
        }
        let prec = p.precision();
        let a = u.transpose() * prec;
        let b = prec.rows(d, d).into_owned();
        Self {
            d,
            s1: &a * p.chol(),
            s2: &b * p.chol(),
            curvature: &a * &u,
        }
    }

    /// Writes `(score_x1, score_x2, score_x1x1)` for node `zeta`.
    fn eval(&self, zeta: &[f64], s1: &mut [f64], s2: &mut [f64], s11: &mut [f64]) {
        let d = self.d;
        for j in 0..d {
            let (mut a, mut b) = (0.0, 0.0);
            for k in 0..2 * d {
                a += self.s1[(j, k)] * zeta[k];
                b += self.s2[(j, k)] * zeta[k];
            }
            s1[j] = a;
            s2[j] = b;
        }
        for j in 0..d {
            for k in 0..d {
                s11[j * d + k] = s1[j] * s1[k] - self.curvature[(j, k)];
            }
        }
    }
}

/// Accumulates `w · g · (1, s1, s2, s11)` over kernel nodes.
struct Accumulator {
    fields: UFields,
    s1: Vec<f64>,
    s2: Vec<f64>,
    s11: Vec<f64>,
}

impl Accumulator {
    fn new(d: usize) -> Self {
        Self {
            fields: UFields::zeros(d),
            s1: vec![0.0; d],
            s2: vec![0.0; d],
            s11: vec![0.0; d * d],
        }
    }

    fn add(&mut self, w: f64, g: f64, maps: &ScoreMaps, zeta: &[f64]) {
        if g == 0.0 {
            return;
        }
        maps.eval(zeta, &mut self.s1, &mut self.s2, &mut self.s11);
        let wg = w * g;
        self.fields.u += wg;
        for (acc, s) in self.fields.d1u.iter_mut().zip(&self.s1) {
            *acc += wg * s;
        }
        for (acc, s) in self.fields.d2u.iter_mut().zip(&self.s2) {
            *acc += wg * s;
        }
        for (acc, s) in self.fields.d11u.iter_mut().zip(&self.s11) {
            *acc += wg * s;
        }
    }
}

fn check_times(t: f64, t_end: f64) -> Result<()> {
    if !(t <= t_end) || !t.is_finite() || !t_end.is_finite() {
        return Err(LabError::Domain(format!("need t <= T (t={t}, T={t_end})")));
    }
    Ok(())
}

fn flow_from(cs: &CoefficientSet, t: f64, x: &[f64], t_end: f64, q: &QuadratureConfig) -> Result<TransportFlow> {
    solve_transport_with(cs, t, x, t_end, q.transport)
}

/// `u0` and its derivative fields at `(t, x)`.
pub fn u0_fields(
    cs: &CoefficientSet,
    f: &SourceTerm,
    t_end: f64,
    t: f64,
    x: &[f64],
    q: &QuadratureConfig,
) -> Result<UFields> {
    check_times(t, t_end)?;
    let d = cs.d();
    if t == t_end {
        return Ok(UFields::zeros(d));
    }
    let flow = flow_from(cs, t, x, t_end, q)?;
    let rule = standard_normal_rule(2 * d, q.hermite_nodes);
    let mut acc = Accumulator::new(d);
    let mut y = vec![0.0; 2 * d];
    for (s, ws) in gauss_legendre(q.time_nodes).mapped(t, t_end) {
        let p = kernel_params_with(cs, &flow, t, s, x, KernelQuadrature::unchecked(q.kernel_nodes))?;
        let maps = ScoreMaps::new(&p);
        let mean = p.mean();
        for k in 0..rule.len() {
            let zeta = rule.point(k);
            for i in 0..2 * d {
                let mut v = mean[i];
                for j in 0..=i {
                    v += p.chol()[(i, j)] * zeta[j];
                }
                y[i] = v;
            }
            acc.add(-ws * rule.weights[k], f.eval(s, &y), &maps, zeta);
        }
    }
    Ok(acc.fields.normalized())
}

pub fn u0(cs: &CoefficientSet, f: &SourceTerm, t_end: f64, t: f64, x: &[f64]) -> Result<f64> {
    Ok(u0_fields(cs, f, t_end, t, x, &QuadratureConfig::default())?.u)
}

/// Zeroth-order fields plus one correction pass (state dimension 2 only).
pub fn u1_fields(
    cs: &CoefficientSet,
    f: &SourceTerm,
    t_end: f64,
    t: f64,
    x: &[f64],
    cfg: &ParametrixConfig,
) -> Result<UFields> {
    if cs.d() != 1 {
        return Err(LabError::UnsupportedDimension(cs.d()));
    }
    check_times(t, t_end)?;
    let base = u0_fields(cs, f, t_end, t, x, &cfg.outer)?;
    if t == t_end {
        return Ok(base);
    }
    let q = &cfg.outer;
    let flow = flow_from(cs, t, x, t_end, q)?;
    let rule = standard_normal_rule(2, q.hermite_nodes);
    let mut acc = Accumulator::new(1);
    let mut y = [0.0; 2];
    let mut scratch = [0.0; 1];
    let (mut f1y, mut f2y, mut ay) = ([0.0], [0.0], [0.0]);
    let (mut f1t, mut f2t, mut jt, mut at) = ([0.0], [0.0], [0.0], [0.0]);
    for (s, ws) in gauss_legendre(q.time_nodes).mapped(t, t_end) {
        let p = kernel_params_with(cs, &flow, t, s, x, KernelQuadrature::unchecked(q.kernel_nodes))?;
        let maps = ScoreMaps::new(&p);
        let theta = flow.eval(s);
        cs.f1_into(s, &theta, &mut f1t);
        cs.f2_into(s, &theta, &mut f2t);
        cs.d1f2_into(s, &theta, &mut jt);
        cs.a_into(s, &theta, &mut at, &mut scratch);
        let l = p.chol();
        for k in 0..rule.len() {
            let zeta = rule.point(k);
            y[0] = p.mean1[0] + l[(0, 0)] * zeta[0];
            y[1] = p.mean2[0] + l[(1, 0)] * zeta[0] + l[(1, 1)] * zeta[1];
            cs.f1_into(s, &y, &mut f1y);
            cs.f2_into(s, &y, &mut f2y);
            cs.a_into(s, &y, &mut ay, &mut scratch);
            let c1 = f1y[0] - f1t[0];
            let c2 = f2y[0] - f2t[0] - jt[0] * (y[0] - theta[0]);
            let c3 = 0.5 * (ay[0] - at[0]);
            if c1 == 0.0 && c2 == 0.0 && c3 == 0.0 {
                continue;
            }
            let inner = u0_fields(cs, f, t_end, s, &y, &cfg.inner)?;
            let g = c1 * inner.d1u[0] + c2 * inner.d2u[0] + c3 * inner.d11u[0];
            acc.add(ws * rule.weights[k], g, &maps, zeta);
        }
    }
    let corr = acc.fields;
    Ok(UFields {
        u: base.u + corr.u,
        d1u: vec![base.d1u[0] + corr.d1u[0]],
        d2u: vec![base.d2u[0] + corr.d2u[0]],
        d11u: vec![base.d11u[0] + corr.d11u[0]],
    }
    .normalized())
}

/// `u0` plus one correction pass.
pub fn u1_correction(cs: &CoefficientSet, f: &SourceTerm, t_end: f64, t: f64, x: &[f64]) -> Result<f64> {
    Ok(u1_fields(cs, f, t_end, t, x, &ParametrixConfig::default())?.u)
}

/// `u` used for checks on a given set: `u0` when the frozen operator is
/// exact, otherwise the corrected `u1`.
pub fn best_fields(
    cs: &CoefficientSet,
    f: &SourceTerm,
    t_end: f64,
    t: f64,
    x: &[f64],
    cfg: &ParametrixConfig,
) -> Result<UFields> {
    if cs.frozen_exact() {
        u0_fields(cs, f, t_end, t, x, &cfg.outer)
    } else {
        u1_fields(cs, f, t_end, t, x, cfg)
    }
}

/// `[P̃_{t,s} φ](x)` (or the same under the normalised dominating kernel
/// when `hat` is set), by tensor Gauss–Hermite.
pub fn apply_p<F>(cs: &CoefficientSet, t: f64, s: f64, x: &[f64], phi: F, hat: bool) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    apply_p_with(cs, t, s, x, phi, hat, 20)
}

pub fn apply_p_with<F>(
    cs: &CoefficientSet,
    t: f64,
    s: f64,
    x: &[f64],
    phi: F,
    hat: bool,
    hermite_nodes: usize,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(t < s) {
        return Err(LabError::Domain(format!("need t < s (t={t}, s={s})")));
    }
    let flow = solve_transport_with(cs, t, x, s, TransportOptions::new(1e-11))?;
    let p = kernel_params(cs, &flow, t, s, x)?;
    let mean = p.mean();
    if !hat {
        return Ok(gaussian_expectation(&mean, p.chol(), hermite_nodes, phi).value);
    }
    let grid = kernel_nodes_grid(&p, hermite_nodes);
    let k = fit_dominating_kernel(&p, &grid)?;
    Ok(gaussian_expectation(&mean, &k.chol(), hermite_nodes, phi).value)
}

fn kernel_nodes_grid(p: &GaussianKernelParams, n: usize) -> Vec<Vec<f64>> {
    let dim = 2 * p.d();
    let rule = standard_normal_rule(dim, if dim > 4 { 2 } else { n });
    let mean = p.mean();
    let mut grid = vec![mean.as_slice().to_vec()];
    for k in 0..rule.len() {
        let y = &mean + p.chol() * DVector::from_column_slice(rule.point(k));
        grid.push(y.as_slice().to_vec());
    }
    grid
}

/// Axis-aligned evaluation grid: one `(lo, hi, n)` triple per coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GridBox {
    pub axes: Vec<(f64, f64, usize)>,
}

impl GridBox {
    pub fn new(axes: Vec<(f64, f64, usize)>) -> Result<Self> {
        if axes.is_empty() || axes.iter().any(|&(lo, hi, n)| n == 0 || !(lo <= hi) || (n > 1 && lo == hi)) {
            return Err(LabError::Domain(format!("invalid grid axes {axes:?}")));
        }
        Ok(Self { axes })
    }

    /// Same `(lo, hi, n)` on every coordinate of a `dim`-dimensional state.
    pub fn cube(dim: usize, lo: f64, hi: f64, n: usize) -> Result<Self> {
        Self::new(vec![(lo, hi, n); dim])
    }

    fn axis_values(&self, k: usize) -> Vec<f64> {
        let (lo, hi, n) = self.axes[k];
        if n == 1 {
            return vec![0.5 * (lo + hi)];
        }
        (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
    }

    /// All grid points, last coordinate varying fastest.
    pub fn points(&self) -> Vec<Vec<f64>> {
        let values: Vec<Vec<f64>> = (0..self.axes.len()).map(|k| self.axis_values(k)).collect();
        let mut out = vec![vec![]];
        for axis in &values {
            out = out
                .into_iter()
                .flat_map(|p| {
                    axis.iter().map(move |v| {
                        let mut q = p.clone();
                        q.push(*v);
                        q
                    })
                })
                .collect();
        }
        out
    }
}

/// Solution fields on `times × box`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParametrixSolution {
    pub order: usize,
    pub t_end: f64,
    pub times: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    /// `fields[i * points.len() + j]` belongs to `(times[i], points[j])`.
    pub fields: Vec<UFields>,
    pub config: ParametrixConfig,
}

impl ParametrixSolution {
    pub fn at(&self, i: usize, j: usize) -> &UFields {
        &self.fields[i * self.points.len() + j]
    }
}

/// Evaluates the order-0 or order-1 solution on a grid, in parallel.
pub fn solve_on_grid(
    cs: &CoefficientSet,
    f: &SourceTerm,
    t_end: f64,
    order: usize,
    times: &[f64],
    grid: &GridBox,
    cfg: &ParametrixConfig,
) -> Result<ParametrixSolution> {
    if order > 1 {
        return Err(LabError::Domain(format!("order {order} not available (0 or 1)")));
    }
    if grid.axes.len() != cs.state_dim() {
        return Err(LabError::Domain("grid dimension does not match the state".into()));
    }
    let points = grid.points();
    let jobs: Vec<(f64, &Vec<f64>)> = times
        .iter()
        .flat_map(|&t| points.iter().map(move |x| (t, x)))
        .collect();
    let fields = jobs
        .par_iter()
        .map(|&(t, x)| match order {
            0 => u0_fields(cs, f, t_end, t, x, &cfg.outer),
            _ => u1_fields(cs, f, t_end, t, x, cfg),
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParametrixSolution {
        order,
        t_end,
        times: times.to_vec(),
        points,
        fields,
        config: *cfg,
    })
}

/// One probe time of [`martingale_check`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleRow {
    pub t: f64,
    /// `E[u(t, X_t) - ∫_0^t f(s, X_s) ds] - u(0, x0)`.
    pub deviation: f64,
    pub stderr: f64,
    pub n_paths: usize,
}

impl MartingaleRow {
    pub fn within(&self, k: f64) -> bool {
        self.deviation.abs() <= k * self.stderr
    }
}

/// Monte Carlo check that `u(t, X_t) - ∫_0^t f(s, X_s) ds` has constant mean
/// along Euler paths; the running integral uses the trapezoid rule on the
/// simulation grid. Probe times must be grid times.
#[allow(clippy::too_many_arguments)]
pub fn martingale_check(
    cs: &CoefficientSet,
    f: &SourceTerm,
    t_end: f64,
    x0: &[f64],
    n_paths: usize,
    steps: usize,
    times: &[f64],
    seed: u64,
    cfg: &ParametrixConfig,
) -> Result<Vec<MartingaleRow>> {
    if steps == 0 || !(t_end > 0.0) {
        return Err(LabError::Domain("need steps >= 1 and T > 0".into()));
    }
    let h = t_end / steps as f64;
    let mut indices = Vec::with_capacity(times.len());
    for &t in times {
        if !(t > 0.0 && t <= t_end) {
            return Err(LabError::Domain(format!("probe time {t} outside (0, T]")));
        }
        let k = (t / h).round() as usize;
        if (k as f64 * h - t).abs() > 1e-9 * t_end.max(1.0) {
            return Err(LabError::Domain(format!("probe time {t} is not a grid time")));
        }
        indices.push(k);
    }
    let u_start = best_fields(cs, f, t_end, 0.0, x0, cfg)?.u;
    let samples: Vec<Vec<f64>> = par_paths(seed, 0, n_paths, |mut rng| {
        let mut out = vec![0.0; indices.len()];
        let mut integral = 0.0;
        let mut prev = f64::NAN;
        let mut pending: Vec<(usize, Vec<f64>)> = Vec::new();
        simulate_system_with(cs, x0, t_end, steps, &mut rng, |k, t, x| {
            let fx = f.eval(t, x);
            if k > 0 {
                integral += 0.5 * h * (prev + fx);
            }
            prev = fx;
            for (slot, &idx) in indices.iter().enumerate() {
                if idx == k {
                    out[slot] = -integral;
                    pending.push((slot, x.to_vec()));
                }
            }
        })?;
        for (slot, x) in pending {
            let t = indices[slot] as f64 * h;
            let t = if indices[slot] == steps { t_end } else { t };
            out[slot] += best_fields(cs, f, t_end, t, &x, cfg)?.u;
        }
        Ok(out)
    })?;
    times
        .iter()
        .enumerate()
        .map(|(slot, &t)| {
            let column: Vec<f64> = samples.iter().map(|row| row[slot]).collect();
            let est = McEstimate::from_samples(&column, seed)?;
            Ok(MartingaleRow {
                t,
                deviation: est.estimate - u_start + 0.0,
                stderr: est.stderr,
                n_paths,
            })
        })
        .collect()
}

/// Norms of the derivative fields at one horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecayRow {
    pub t_end: f64,
    pub sup_d1u: f64,
    pub sup_d2u: f64,
    pub sup_d11u: f64,
    /// Hölder seminorm of `D1u` in `x2`.
    pub holder_d1u: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecayTable {
    pub rows: Vec<DecayRow>,
    /// Log-log slopes vs `T` of the four norms, `None` when a norm vanishes.
    pub slopes: [Option<f64>; 4],
    pub nu: f64,
}

/// `ν = 0.9 · min(β¹₂, β²₂)`.
pub fn holder_nu(cs: &CoefficientSet) -> f64 {
    0.9 * cs.exponents.beta12.min(cs.exponents.beta22)
}

/// Grid suprema at `t = 0` of the order-1 derivative fields (order 0 for
/// sets whose frozen operator is exact) for each horizon in `t_list`.
pub fn smalltime_decay_probe(
    cs: &CoefficientSet,
    f: &SourceTerm,
    t_list: &[f64],
    grid: &GridBox,
    cfg: &ParametrixConfig,
) -> Result<DecayTable> {
    if t_list.is_empty() || t_list.iter().any(|t| !(*t > 0.0)) || t_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(LabError::Domain("T list must be positive and decreasing".into()));
    }
    let d = cs.d();
    let nu = holder_nu(cs);
    let (b12, b22) = (cs.exponents.beta12, cs.exponents.beta22);
    let mut rows = Vec::with_capacity(t_list.len());
    for &t_end in t_list {
        let sol = solve_on_grid(cs, f, t_end, if cs.frozen_exact() { 0 } else { 1 }, &[0.0], grid, cfg)?;
        let sup = |pick: &dyn Fn(&UFields) -> &[f64]| {
            sol.fields
                .iter()
                .flat_map(|fl| pick(fl).iter().map(|v| v.abs()))
                .fold(0.0, f64::max)
        };
        let sup_d1u = sup(&|fl| &fl.d1u);
        let sup_d2u = sup(&|fl| &fl.d2u);
        let sup_d11u = sup(&|fl| &fl.d11u);
        let mut holder: f64 = 0.0;
        for (i, x) in sol.points.iter().enumerate() {
            for (j, z) in sol.points.iter().enumerate().skip(i + 1) {
                if x[..d] != z[..d] {
                    continue;
                }
                let dist = x[d..].iter().zip(&z[d..]).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                if dist == 0.0 {
                    continue;
                }
                let num = sol.fields[i]
                    .d1u
                    .iter()
                    .zip(&sol.fields[j].d1u)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
                    .sqrt();
                let den = dist + dist.powf(b12) + dist.powf(b22) + dist.powf(nu);
                holder = holder.max(num / den);
            }
        }
        rows.push(DecayRow {
            t_end,
            sup_d1u,
            sup_d2u,
            sup_d11u,
            holder_d1u: holder,
        });
    }
    let slope_of = |pick: fn(&DecayRow) -> f64| {
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.t_end, pick(r))).collect();
        if pts.len() < 2 || pts.iter().any(|(_, v)| !(*v > 1e-300)) {
            None
        } else {
            loglog_slope(&pts).ok()
        }
    };
    let slopes = [
        slope_of(|r| r.sup_d1u),
        slope_of(|r| r.sup_d2u),
        slope_of(|r| r.sup_d11u),
        slope_of(|r| r.holder_d1u),
    ];
    Ok(DecayTable { rows, slopes, nu })
}
