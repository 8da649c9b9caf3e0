//! Gaussian kernel of the system linearised along the transport flow.
//!
//! For a freezing pair `(τ, ξ)` with flow `θ_r = θ_{τ,r}(ξ)`, the frozen
//! system is the linear SDE
//!
//! ```text
//! dX¹ = F1(r, θ_r) dr + σ(r, θ_r) dB
//! dX² = [F2(r, θ_r) + J_r (X¹ - θ¹_r)] dr,     J_r = D1F2(r, θ_r)
//! ```
//!
//! whose law at time `s` from `(t, x)` is Gaussian with a mean affine in `x`
//! and a covariance that does not depend on `x`.

mod transport;

pub use transport::{
    solve_transport, solve_transport_with, TransportFlow, TransportOptions,
    DEFAULT_MAX_STEP_FRACTION,
};

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::coefficients::CoefficientSet;
use crate::error::{LabError, Result};
use crate::quadrature::{abs_power_moment, gauss_legendre, gaussian_expectation};

/// Transport tolerance used when a routine solves its own flow.
pub const TRANSPORT_TOL: f64 = 1e-11;

/// Gauss–Legendre orders for the time integrals of the mean and covariance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KernelQuadrature {
    pub nodes: usize,
    /// Order of the refinement pass; its relative deviation is recorded in
    /// [`GaussianKernelParams::quadrature_rel_diff`].
    pub check_nodes: Option<usize>,
}

impl Default for KernelQuadrature {
    fn default() -> Self {
        Self {
            nodes: 32,
            check_nodes: Some(64),
        }
    }
}

impl KernelQuadrature {
    pub fn unchecked(nodes: usize) -> Self {
        Self {
            nodes,
            check_nodes: None,
        }
    }
}

#[derive(Debug, Clone)]
struct Blocks {
    b1: DVector<f64>,
    b2: DVector<f64>,
    r_ts: DMatrix<f64>,
    s11: DMatrix<f64>,
    s12: DMatrix<f64>,
    s22: DMatrix<f64>,
}

impl Blocks {
    fn max_rel_diff(&self, other: &Blocks) -> f64 {
        let pairs: [(&[f64], &[f64]); 6] = [
            (self.b1.as_slice(), other.b1.as_slice()),
            (self.b2.as_slice(), other.b2.as_slice()),
            (self.r_ts.as_slice(), other.r_ts.as_slice()),
            (self.s11.as_slice(), other.s11.as_slice()),
            (self.s12.as_slice(), other.s12.as_slice()),
            (self.s22.as_slice(), other.s22.as_slice()),
        ];
        let mut worst: f64 = 0.0;
        for (a, b) in pairs {
            let scale = b.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            if scale == 0.0 {
                continue;
            }
            for (u, v) in a.iter().zip(b) {
                worst = worst.max((u - v).abs() / scale);
            }
        }
        worst
    }
}

/// Mean and covariance of the frozen Gaussian kernel `q̃(t, x; s, ·)`.
#[derive(Debug, Clone)]
pub struct GaussianKernelParams {
    pub t: f64,
    pub s: f64,
    d: usize,
    x: Vec<f64>,
    pub mean1: DVector<f64>,
    pub mean2: DVector<f64>,
    offset1: DVector<f64>,
    offset2: DVector<f64>,
    /// `R_{t,s} = ∫_t^s J_r dr`; the mean satisfies `∂m²/∂x1 = R_{t,s}`.
    pub resolvent_ts: DMatrix<f64>,
    pub sigma11: DMatrix<f64>,
    pub sigma12: DMatrix<f64>,
    pub sigma22: DMatrix<f64>,
    cov: DMatrix<f64>,
    chol: DMatrix<f64>,
    precision: DMatrix<f64>,
    log_norm: f64,
    /// Largest relative deviation from the refinement pass, if requested.
    pub quadrature_rel_diff: Option<f64>,
}

fn integrate_blocks(
    cs: &CoefficientSet,
    flow: &TransportFlow,
    t: f64,
    s: f64,
    nodes: usize,
) -> Blocks {
    let d = cs.d();
    let rule = gauss_legendre(nodes);
    let mut theta = vec![0.0; 2 * d];
    let mut f1 = vec![0.0; d];
    let mut f2 = vec![0.0; d];
    let mut jbuf = vec![0.0; d * d];
    let mut abuf = vec![0.0; d * d];
    let mut scratch = vec![0.0; d * d];

    let outer: Vec<(f64, f64)> = rule.mapped(t, s).collect();
    let mut r_nodes = Vec::with_capacity(nodes);
    let mut a_nodes = Vec::with_capacity(nodes);
    let mut b1 = DVector::zeros(d);
    let mut b2 = DVector::zeros(d);
    let mut r_ts = DMatrix::zeros(d, d);

    for &(r, w) in &outer {
        // Inner integrals over [t, r]: R_{t,r} and ∫ F1(θ_v) dv.
        let mut r_tr = DMatrix::zeros(d, d);
        let mut i1 = DVector::zeros(d);
        for (v, wv) in rule.mapped(t, r) {
            flow.eval_into(v, &mut theta);
            cs.d1f2_into(v, &theta, &mut jbuf);
            cs.f1_into(v, &theta, &mut f1);
            for i in 0..d {
                i1[i] += wv * f1[i];
                for j in 0..d {
                    r_tr[(i, j)] += wv * jbuf[i * d + j];
                }
            }
        }
        flow.eval_into(r, &mut theta);
        cs.f1_into(r, &theta, &mut f1);
        cs.f2_into(r, &theta, &mut f2);
        cs.d1f2_into(r, &theta, &mut jbuf);
        cs.a_into(r, &theta, &mut abuf, &mut scratch);
        let j = DMatrix::from_row_slice(d, d, &jbuf);
        let th1 = DVector::from_column_slice(&theta[..d]);
        let drift2 = DVector::from_column_slice(&f2) + &j * (i1 - th1);
        for i in 0..d {
            b1[i] += w * f1[i];
            b2[i] += w * drift2[i];
        }
        r_ts += w * &j;
        r_nodes.push(r_tr);
        a_nodes.push(DMatrix::from_row_slice(d, d, &abuf));
    }

    let mut s11 = DMatrix::zeros(d, d);
    let mut s12 = DMatrix::zeros(d, d);
    let mut s22 = DMatrix::zeros(d, d);
    for (k, &(_, w)) in outer.iter().enumerate() {
        let a = &a_nodes[k];
        let m = &r_ts - &r_nodes[k];
        s11 += w * a;
        let am = a * m.transpose();
        s22 += w * (&m * &am);
        s12 += w * am;
    }
    Blocks {
        b1,
        b2,
        r_ts,
        s11,
        s12,
        s22,
    }
}

/// Mean and covariance of the frozen kernel from `(t, x)` to time `s`, using
/// the default quadrature (32 nodes, checked against 64).
pub fn kernel_params(
    cs: &CoefficientSet,
    flow: &TransportFlow,
    t: f64,
    s: f64,
    x: &[f64],
) -> Result<GaussianKernelParams> {
    kernel_params_with(cs, flow, t, s, x, KernelQuadrature::default())
}

pub fn kernel_params_with(
    cs: &CoefficientSet,
    flow: &TransportFlow,
    t: f64,
    s: f64,
    x: &[f64],
    quad: KernelQuadrature,
) -> Result<GaussianKernelParams> {
    let d = cs.d();
    if !(t < s) {
        return Err(LabError::Domain(format!("kernel needs t < s (t={t}, s={s})")));
    }
    if x.len() != 2 * d {
        return Err(LabError::Domain(format!(
            "state has dimension {} (expected {})",
            x.len(),
            2 * d
        )));
    }
    if !flow.covers(t, s) {
        return Err(LabError::Domain(format!(
            "flow on [{}, {}] does not cover [{t}, {s}]",
            flow.tau(),
            flow.t_end()
        )));
    }
    let blocks = integrate_blocks(cs, flow, t, s, quad.nodes);
    let rel = quad
        .check_nodes
        .map(|n| blocks.max_rel_diff(&integrate_blocks(cs, flow, t, s, n)));
    GaussianKernelParams::from_blocks(t, s, d, x, blocks, rel)
}

impl GaussianKernelParams {
    fn from_blocks(
        t: f64,
        s: f64,
        d: usize,
        x: &[f64],
        b: Blocks,
        rel: Option<f64>,
    ) -> Result<Self> {
        let s11 = 0.5 * (&b.s11 + b.s11.transpose());
        let s22 = 0.5 * (&b.s22 + b.s22.transpose());
        let mut cov = DMatrix::zeros(2 * d, 2 * d);
        cov.view_mut((0, 0), (d, d)).copy_from(&s11);
        cov.view_mut((0, d), (d, d)).copy_from(&b.s12);
        cov.view_mut((d, 0), (d, d)).copy_from(&b.s12.transpose());
        cov.view_mut((d, d), (d, d)).copy_from(&s22);
        if cov.iter().any(|v| !v.is_finite()) {
            return Err(LabError::Degenerate(format!(
                "non-finite covariance on [{t}, {s}]"
            )));
        }
        let chol = Cholesky::new(cov.clone()).ok_or_else(|| {
            LabError::Degenerate(format!("Cholesky failed on [{t}, {s}]: {cov}"))
        })?;
        let l = chol.l();
        let log_det: f64 = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let precision = chol.inverse();
        let log_norm = -(d as f64) * (2.0 * PI).ln() - 0.5 * log_det;
        let mut p = Self {
            t,
            s,
            d,
            x: x.to_vec(),
            mean1: DVector::zeros(d),
            mean2: DVector::zeros(d),
            offset1: b.b1,
            offset2: b.b2,
            resolvent_ts: b.r_ts,
            sigma11: s11,
            sigma12: b.s12,
            sigma22: s22,
            cov,
            chol: l,
            precision,
            log_norm,
            quadrature_rel_diff: rel,
        };
        let (m1, m2) = p.mean_at(x);
        p.mean1 = m1;
        p.mean2 = m2;
        Ok(p)
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn h(&self) -> f64 {
        self.s - self.t
    }

    /// Mean of the kernel started from `x` (same frozen flow).
    pub fn mean_at(&self, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let d = self.d;
        let x1 = DVector::from_column_slice(&x[..d]);
        let x2 = DVector::from_column_slice(&x[d..]);
        let m1 = &x1 + &self.offset1;
        let m2 = x2 + &self.resolvent_ts * x1 + &self.offset2;
        (m1, m2)
    }

    /// Full mean `(m¹, m²)` as one vector.
    pub fn mean(&self) -> DVector<f64> {
        let mut m = DVector::zeros(2 * self.d);
        m.rows_mut(0, self.d).copy_from(&self.mean1);
        m.rows_mut(self.d, self.d).copy_from(&self.mean2);
        m
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower Cholesky factor of the covariance.
    pub fn chol(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn precision(&self) -> &DMatrix<f64> {
        &self.precision
    }

    pub fn determinant(&self) -> f64 {
        self.chol.diagonal().iter().map(|v| v * v).product()
    }

    /// Value of the density at its mean, `(2π)^{-d} det(Σ)^{-1/2}`.
    pub fn peak(&self) -> f64 {
        self.log_norm.exp()
    }

    fn centred(&self, y: &[f64]) -> DVector<f64> {
        let d = self.d;
        let mut z = DVector::zeros(2 * d);
        for i in 0..d {
            z[i] = y[i] - self.mean1[i];
            z[d + i] = y[d + i] - self.mean2[i];
        }
        z
    }

    /// Same kernel (same freezing, same covariance) started from `x`.
    pub fn shifted(&self, x: &[f64]) -> Self {
        let mut p = self.clone();
        let (m1, m2) = self.mean_at(x);
        p.x = x.to_vec();
        p.mean1 = m1;
        p.mean2 = m2;
        p
    }

    /// `q̃(t, x; s, y)`.
    pub fn density(&self, y: &[f64]) -> f64 {
        let z = self.centred(y);
        let u = self
            .chol
            .solve_lower_triangular(&z)
            .expect("Cholesky factor has a positive diagonal");
        (self.log_norm - 0.5 * u.norm_squared()).exp()
    }
}

/// `∫ q̃(y) dy` evaluated by tensor Gauss–Hermite against the reference law
/// `N(m, 1.5 Σ)`; equals one up to quadrature error for a correctly
/// normalised density.
pub fn normalization_integral(p: &GaussianKernelParams, gh_nodes: usize) -> f64 {
    let lambda: f64 = 1.5;
    let dim = 2 * p.d;
    let chol = &p.chol * lambda.sqrt();
    let ref_log_norm = p.log_norm - 0.5 * dim as f64 * lambda.ln();
    let mean = p.mean();
    let mut z = DVector::zeros(dim);
    gaussian_expectation(&mean, &chol, gh_nodes, |y| {
        for i in 0..dim {
            z[i] = y[i] - mean[i];
        }
        let u = chol.solve_lower_triangular(&z).unwrap();
        let reference = (ref_log_norm - 0.5 * u.norm_squared()).exp();
        p.density(y) / reference
    })
    .value
}

/// Numbers of derivatives taken in each variable block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DerivativeOrders {
    pub x1: usize,
    pub x2: usize,
    pub y1: usize,
}

impl DerivativeOrders {
    pub const fn new(x1: usize, x2: usize, y1: usize) -> Self {
        Self { x1, x2, y1 }
    }

    pub fn total(&self) -> usize {
        self.x1 + self.x2 + self.y1
    }

    fn check(&self) -> Result<()> {
        for n in [self.x1, self.x2, self.y1] {
            if n > 2 {
                return Err(LabError::UnsupportedOrder(n));
            }
        }
        Ok(())
    }
}

/// Derivative values indexed by one coordinate index (in `0..d`) per
/// differentiation slot, slots ordered `x1…, x2…, y1…`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DerivativeTensor {
    pub orders: DerivativeOrders,
    pub d: usize,
    pub data: Vec<f64>,
}

impl DerivativeTensor {
    pub fn get(&self, idx: &[usize]) -> f64 {
        assert_eq!(idx.len(), self.orders.total());
        let flat = idx.iter().fold(0, |acc, &i| acc * self.d + i);
        self.data[flat]
    }

    /// The single entry when `d = 1` or all orders are zero.
    pub fn scalar(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "tensor has more than one entry");
        self.data[0]
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Sum over partial matchings of `slots`: matched pairs contribute `pair`,
/// unmatched slots contribute `single`.
fn matching_sum(slots: &mut Vec<usize>, single: &[f64], pair: &DMatrix<f64>) -> f64 {
    let Some(first) = slots.pop() else {
        return 1.0;
    };
    let mut acc = single[first] * matching_sum(slots, single, pair);
    for k in 0..slots.len() {
        let other = slots.remove(k);
        acc += pair[(first, other)] * matching_sum(slots, single, pair);
        slots.insert(k, other);
    }
    slots.push(first);
    acc
}

impl GaussianKernelParams {
    /// Constant direction in `y`-space along which a slot differentiates:
    /// derivatives in `x` act through `-∂m/∂x`.
    fn direction(&self, block: usize, j: usize) -> DVector<f64> {
        let d = self.d;
        let mut v = DVector::zeros(2 * d);
        match block {
            0 => {
                v[j] = -1.0;
                for i in 0..d {
                    v[d + i] = -self.resolvent_ts[(i, j)];
                }
            }
            1 => v[d + j] = -1.0,
            _ => v[j] = 1.0,
        }
        v
    }

    /// Derivative of `q̃` divided by `q̃` (the Hermite polynomial factor).
    pub fn score(&self, y: &[f64], orders: DerivativeOrders) -> Result<DerivativeTensor> {
        orders.check()?;
        let d = self.d;
        let blocks: Vec<usize> = std::iter::repeat_n(0, orders.x1)
            .chain(std::iter::repeat_n(1, orders.x2))
            .chain(std::iter::repeat_n(2, orders.y1))
            .collect();
        let k = blocks.len();
        let w = &self.precision * self.centred(y);
        let count = d.pow(k as u32);
        let mut data = Vec::with_capacity(count);
        let mut idx = vec![0usize; k];
        for _ in 0..count {
            let dirs: Vec<DVector<f64>> = blocks
                .iter()
                .zip(&idx)
                .map(|(&b, &j)| self.direction(b, j))
                .collect();
            let single: Vec<f64> = dirs.iter().map(|v| -v.dot(&w)).collect();
            let mut pair = DMatrix::zeros(k, k);
            for a in 0..k {
                let pv = &self.precision * &dirs[a];
                for b in 0..k {
                    pair[(a, b)] = -dirs[b].dot(&pv);
                }
            }
            let mut slots: Vec<usize> = (0..k).collect();
            data.push(matching_sum(&mut slots, &single, &pair));
            for slot in idx.iter_mut().rev() {
                *slot += 1;
                if *slot < d {
                    break;
                }
                *slot = 0;
            }
        }
        Ok(DerivativeTensor { orders, d, data })
    }
}

/// Analytic derivatives of `q̃(t, x; s, y)` in the backward variables
/// `x1, x2` (through the mean, with the freezing point held fixed) and the
/// forward variable `y1`; each order at most 2.
pub fn density_derivative(
    p: &GaussianKernelParams,
    y: &[f64],
    orders: DerivativeOrders,
) -> Result<DerivativeTensor> {
    let mut t = p.score(y, orders)?;
    let q = p.density(y);
    t.data.iter_mut().for_each(|v| *v *= q);
    Ok(t)
}

/// Reference kernel `q̂_c` scaled by `C`, centred on the same mean as `q̃`:
///
/// `q̂_c(y) = (c/(π h²))^d exp(-c(|y1-m1|²/h + |y2-m2|²/h³))`, `h = s - t`,
///
/// normalised to a probability density.
#[derive(Debug, Clone)]
pub struct DominatingKernel {
    pub big_c: f64,
    pub c: f64,
    kernel: GaussianKernelParams,
}

/// Candidate values `c = 2^{-k/2}`, `k = 0..=40`.
pub fn dominating_ladder() -> impl Iterator<Item = f64> {
    (0..=40).map(|k| 2.0_f64.powf(-0.5 * k as f64))
}

impl DominatingKernel {
    pub fn h(&self) -> f64 {
        self.kernel.h()
    }

    pub fn mean(&self) -> DVector<f64> {
        self.kernel.mean()
    }

    pub fn mean_at(&self, x: &[f64]) -> (DVector<f64>, DVector<f64>) {
        self.kernel.mean_at(x)
    }

    /// Normalised `q̂_c(y)`.
    pub fn q_hat(&self, y: &[f64]) -> f64 {
        q_hat(&self.kernel, self.c, y)
    }

    /// `C q̂_c(y)`.
    pub fn bound(&self, y: &[f64]) -> f64 {
        self.big_c * self.q_hat(y)
    }

    /// Cholesky factor of the (diagonal) covariance of `q̂_c`.
    pub fn chol(&self) -> DMatrix<f64> {
        let d = self.kernel.d;
        let h = self.h();
        let mut l = DMatrix::zeros(2 * d, 2 * d);
        for i in 0..d {
            l[(i, i)] = (h / (2.0 * self.c)).sqrt();
            l[(d + i, d + i)] = (h.powi(3) / (2.0 * self.c)).sqrt();
        }
        l
    }
}

fn q_hat(p: &GaussianKernelParams, c: f64, y: &[f64]) -> f64 {
    let d = p.d;
    let h = p.h();
    let z = p.centred(y);
    let q1: f64 = (0..d).map(|i| z[i] * z[i]).sum();
    let q2: f64 = (0..d).map(|i| z[d + i] * z[d + i]).sum();
    let log = d as f64 * (c / (PI * h * h)).ln() - c * (q1 / h + q2 / (h * h * h));
    log.exp()
}

/// Largest `c` for which `q̃ / q̂_c` stays bounded with a decaying tail:
/// half the smallest eigenvalue of `D^{-1/2} Σ^{-1} D^{-1/2}`,
/// `D = diag(1/h, 1/h³)`.
pub fn critical_c(p: &GaussianKernelParams) -> f64 {
    let d = p.d;
    let h = p.h();
    let mut scaled = p.cov.clone();
    for i in 0..2 * d {
        let si = if i < d { h.powf(-0.5) } else { h.powf(-1.5) };
        for j in 0..2 * d {
            let sj = if j < d { h.powf(-0.5) } else { h.powf(-1.5) };
            scaled[(i, j)] *= si * sj;
        }
    }
    let lmax = SymmetricEigen::new(scaled)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    0.5 / lmax
}

/// Fits `(C, c)` with `q̃ ≤ C q̂_c` on every grid point: `c` is the largest
/// ladder value strictly below [`critical_c`], `C` the largest ratio seen on
/// the grid.
pub fn fit_dominating_kernel(p: &GaussianKernelParams, grid: &[Vec<f64>]) -> Result<DominatingKernel> {
    if grid.is_empty() {
        return Err(LabError::Precondition("dominating fit needs a nonempty grid".into()));
    }
    let limit = critical_c(p) * (1.0 - 1e-3);
    let c = dominating_ladder()
        .find(|&c| c <= limit)
        .ok_or_else(|| LabError::FitFailure(format!("critical c = {limit:e} below the ladder")))?;
    let mut big_c: f64 = 0.0;
    for y in grid {
        let ratio = p.density(y) / q_hat(p, c, y);
        if !ratio.is_finite() {
            return Err(LabError::FitFailure(format!("non-finite ratio at y={y:?}")));
        }
        big_c = big_c.max(ratio);
    }
    if !(big_c > 0.0) {
        return Err(LabError::FitFailure("density vanishes on the whole grid".into()));
    }
    Ok(DominatingKernel {
        big_c,
        c,
        kernel: p.clone(),
    })
}

/// Solves the kernel for freezing `(t, x)` and fits the dominating bound on
/// `grid`.
pub fn dominating_bound_fit(
    cs: &CoefficientSet,
    flow: &TransportFlow,
    t: f64,
    s: f64,
    x: &[f64],
    grid: &[Vec<f64>],
) -> Result<DominatingKernel> {
    let p = kernel_params(cs, flow, t, s, x)?;
    fit_dominating_kernel(&p, grid)
}

/// `E|X̃ⁱ_s - θⁱ_{t,s}(x)|^γ` under the kernel frozen at `(t, x) = (0, x)`,
/// one entry per `s - t` in `times`.
pub fn smoothing_probe(
    cs: &CoefficientSet,
    x: &[f64],
    gamma: f64,
    i: usize,
    times: &[f64],
) -> Result<Vec<(f64, f64)>> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(LabError::Domain(format!("gamma={gamma} must lie in (0, 1]")));
    }
    if i != 1 && i != 2 {
        return Err(LabError::Domain(format!("component index {i} must be 1 or 2")));
    }
    if times.iter().any(|h| !(*h > 0.0)) || times.is_empty() {
        return Err(LabError::Domain("probe times must be positive".into()));
    }
    let d = cs.d();
    if d > 2 {
        return Err(LabError::UnsupportedDimension(d));
    }
    let horizon = times.iter().cloned().fold(0.0, f64::max);
    let flow = solve_transport(cs, 0.0, x, horizon, TRANSPORT_TOL)?;
    let off = (i - 1) * d;
    times
        .iter()
        .map(|&h| {
            let p = kernel_params_with(cs, &flow, 0.0, h, x, KernelQuadrature::unchecked(32))?;
            let theta = flow.eval(h);
            let mean = p.mean();
            let mu = DVector::from_fn(d, |k, _| mean[off + k] - theta[off + k]);
            let block = p.cov.view((off, off), (d, d)).into_owned();
            let l = Cholesky::new(block)
                .ok_or_else(|| LabError::Degenerate(format!("block {i} at h={h}")))?
                .l();
            let value = abs_power_moment(&mu, &l, gamma)
                .ok_or(LabError::UnsupportedDimension(d))?;
            Ok((h, value))
        })
        .collect()
}
