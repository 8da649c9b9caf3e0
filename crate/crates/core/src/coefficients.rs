//! Coefficient triples `(F1, F2, σ)` of the degenerate system together with the
//! regularity metadata of assumptions (H), sampled validation, and
//! mollification.
//!
//! States are `2d`-vectors `(x1, x2)` laid out as a flat slice. Matrix-valued
//! fields (`σ`, `D1F2`) write a row-major `d×d` block.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{LabError, Result};
use crate::quadrature::gauss_legendre;

/// `(t, x, out)`: evaluates a field at time `t` and state `x` into `out`.
pub type Field = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// Hölder exponents of (H1) and (H3-a). `β²₁` is fixed to 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderExponents {
    pub beta11: f64,
    pub beta12: f64,
    pub beta22: f64,
    pub eta: f64,
}

impl HolderExponents {
    pub fn new(beta11: f64, beta12: f64, beta22: f64, eta: f64) -> Result<Self> {
        for (name, v) in [
            ("beta11", beta11),
            ("beta12", beta12),
            ("beta22", beta22),
            ("eta", eta),
        ] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(LabError::Domain(format!("{name}={v} must lie in (0, 1]")));
            }
        }
        Ok(Self {
            beta11,
            beta12,
            beta22,
            eta,
        })
    }

    pub const fn lipschitz() -> Self {
        Self {
            beta11: 1.0,
            beta12: 1.0,
            beta22: 1.0,
            eta: 1.0,
        }
    }

    pub fn beta21(&self) -> f64 {
        1.0
    }

    /// Both exponents in the degenerate direction exceed 1/3.
    pub fn satisfies_threshold(&self) -> bool {
        self.beta12 > 1.0 / 3.0 && self.beta22 > 1.0 / 3.0
    }
}

/// Declared constants `C1, C2, Cσ, C̄2` of (H1) and (H3-a).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HolderConstants {
    pub c1: f64,
    pub c2: f64,
    pub c_sigma: f64,
    pub c2_bar: f64,
}

/// The drift `x ↦ sign(x)|x|^α` of the Peano example.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeanoDrift {
    alpha: f64,
}

impl PeanoDrift {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha > -1.0 && alpha < 1.0) {
            return Err(LabError::Domain(format!("alpha={alpha} must lie in (-1, 1)")));
        }
        Ok(Self { alpha })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        if x > 0.0 {
            x.powf(self.alpha)
        } else if x < 0.0 {
            -(-x).powf(self.alpha)
        } else {
            0.0
        }
    }

    /// Best Hölder constant for `α ∈ (0, 1)`: `2^{1-α}`.
    pub fn holder_constant(&self) -> f64 {
        2.0_f64.powf(1.0 - self.alpha)
    }
}

#[derive(Clone)]
pub struct CoefficientSet {
    pub name: String,
    d: usize,
    f1: Field,
    f2: Field,
    sigma: Field,
    d1f2: Field,
    pub exponents: HolderExponents,
    pub constants: HolderConstants,
    /// Λ of (H2).
    pub ellipticity: f64,
    /// Λ̄ of (H3-b).
    pub hypo_ellipticity: f64,
    frozen_exact: bool,
}

impl fmt::Debug for CoefficientSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSet")
            .field("name", &self.name)
            .field("d", &self.d)
            .field("exponents", &self.exponents)
            .field("constants", &self.constants)
            .field("ellipticity", &self.ellipticity)
            .field("hypo_ellipticity", &self.hypo_ellipticity)
            .finish_non_exhaustive()
    }
}

#[allow(clippy::too_many_arguments)]
impl CoefficientSet {
    pub fn new(
        name: impl Into<String>,
        d: usize,
        f1: Field,
        f2: Field,
        sigma: Field,
        d1f2: Field,
        exponents: HolderExponents,
        constants: HolderConstants,
        ellipticity: f64,
        hypo_ellipticity: f64,
    ) -> Result<Self> {
        if d == 0 {
            return Err(LabError::Domain("block dimension must be positive".into()));
        }
        if !(ellipticity > 1.0) || !(hypo_ellipticity > 1.0) {
            return Err(LabError::Domain(format!(
                "ellipticity constants must exceed 1 (got {ellipticity}, {hypo_ellipticity})"
            )));
        }
        Ok(Self {
            name: name.into(),
            d,
            f1,
            f2,
            sigma,
            d1f2,
            exponents,
            constants,
            ellipticity,
            hypo_ellipticity,
            frozen_exact: false,
        })
    }

    /// Marks the set as linear-Gaussian: the frozen operator coincides with the
    /// true generator, so the zeroth-order parametrix is already exact.
    pub fn with_frozen_exact(mut self, exact: bool) -> Self {
        self.frozen_exact = exact;
        self
    }

    pub fn frozen_exact(&self) -> bool {
        self.frozen_exact
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn state_dim(&self) -> usize {
        2 * self.d
    }

    #[inline]
    pub fn f1_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f1)(t, x, out)
    }

    #[inline]
    pub fn f2_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.f2)(t, x, out)
    }

    #[inline]
    pub fn sigma_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.sigma)(t, x, out)
    }

    #[inline]
    pub fn d1f2_into(&self, t: f64, x: &[f64], out: &mut [f64]) {
        (self.d1f2)(t, x, out)
    }

    /// `a = σσ*` into `out` (row-major `d×d`); `scratch` holds `σ`.
    pub fn a_into(&self, t: f64, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let d = self.d;
        (self.sigma)(t, x, scratch);
        for i in 0..d {
            for j in 0..d {
                let mut acc = 0.0;
                for k in 0..d {
                    acc += scratch[i * d + k] * scratch[j * d + k];
                }
                out[i * d + j] = acc;
            }
        }
    }

    pub fn f1(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.f1_into(t, x, &mut out);
        out
    }

    pub fn f2(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.d];
        self.f2_into(t, x, &mut out);
        out
    }

    pub fn sigma(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; self.d * self.d];
        self.sigma_into(t, x, &mut out);
        DMatrix::from_row_slice(self.d, self.d, &out)
    }

    pub fn d1f2(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let mut out = vec![0.0; self.d * self.d];
        self.d1f2_into(t, x, &mut out);
        DMatrix::from_row_slice(self.d, self.d, &out)
    }

    pub fn diffusion(&self, t: f64, x: &[f64]) -> DMatrix<f64> {
        let s = self.sigma(t, x);
        &s * s.transpose()
    }

    /// Kolmogorov's example in block dimension `d`: `F1 = 0`, `F2 = x1`, `σ = Id`.
    pub fn kolmogorov(d: usize) -> Self {
        let f1: Field = Arc::new(|_, _, out| out.fill(0.0));
        let f2: Field = Arc::new(move |_, x, out| out.copy_from_slice(&x[..out.len()]));
        let ident: Field = Arc::new(move |_, _, out| {
            let d = (out.len() as f64).sqrt() as usize;
            out.fill(0.0);
            for i in 0..d {
                out[i * d + i] = 1.0;
            }
        });
        Self::new(
            "kolmogorov",
            d,
            f1,
            f2,
            ident.clone(),
            ident,
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
        .expect("static parameters")
        .with_frozen_exact(true)
    }

    /// Archetypal integrated-noise system with Peano drift in the degenerate
    /// component: `F1 = 0`, `σ = 1`, `F2 = x1 + sign(x2)|x2|^α`, `d = 1`.
    pub fn peano(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LabError::Domain(format!(
                "peano set needs alpha in (0, 1) to be Hölder, got {alpha}"
            )));
        }
        let drift = PeanoDrift::new(alpha)?;
        let f1: Field = Arc::new(|_, _, out| out[0] = 0.0);
        let f2: Field = Arc::new(move |_, x, out| out[0] = x[0] + drift.eval(x[1]));
        let one: Field = Arc::new(|_, _, out| out[0] = 1.0);
        Self::new(
            format!("peano:{alpha}"),
            1,
            f1,
            f2,
            one.clone(),
            one,
            HolderExponents::new(1.0, 1.0, alpha, 1.0)?,
            HolderConstants {
                c1: 1.0,
                c2: drift.holder_constant().max(1.0),
                c_sigma: 1.0,
                c2_bar: 1.0,
            },
            1.5,
            1.5,
        )
    }

    /// A smooth, genuinely nonlinear `d = 1` set with state-dependent `σ`:
    ///
    /// `F1 = -0.5 sin x1 + 0.3 cos x2`, `F2 = x1 + 0.3 sin x1 + 0.5 sin x2`,
    /// `σ = 1 + 0.3 sin x1 cos x2`.
    pub fn heterogeneous_demo() -> Self {
        let f1: Field = Arc::new(|_, x, out| out[0] = -0.5 * x[0].sin() + 0.3 * x[1].cos());
        let f2: Field = Arc::new(|_, x, out| out[0] = x[0] + 0.3 * x[0].sin() + 0.5 * x[1].sin());
        let sigma: Field = Arc::new(|_, x, out| out[0] = 1.0 + 0.3 * x[0].sin() * x[1].cos());
        let d1f2: Field = Arc::new(|_, x, out| out[0] = 1.0 + 0.3 * x[0].cos());
        // |sin a - sin b| ≤ min(2, |a-b|) ≤ 2^{1-β}|a-b|^β
        let exps = HolderExponents::new(0.8, 0.7, 0.6, 0.9).expect("static exponents");
        let c1 = (0.5 * 2.0_f64.powf(0.2)).max(0.3 * 2.0_f64.powf(0.3));
        let c2 = 1.3_f64.max(0.5 * 2.0_f64.powf(0.4));
        Self::new(
            "heterogeneous-demo",
            1,
            f1,
            f2,
            sigma,
            d1f2,
            exps,
            HolderConstants {
                c1,
                c2,
                c_sigma: 0.3,
                c2_bar: 0.3 * 2.0_f64.powf(0.1),
            },
            2.1,
            2.1,
        )
        .expect("static parameters")
    }

    /// Built-in sets by id: `kolmogorov`, `kolmogorov-d2`, `peano:<alpha>`,
    /// `heterogeneous-demo`.
    pub fn from_id(id: &str) -> Result<Self> {
        match id {
            "kolmogorov" => Ok(Self::kolmogorov(1)),
            "kolmogorov-d2" => Ok(Self::kolmogorov(2)),
            "heterogeneous-demo" => Ok(Self::heterogeneous_demo()),
            _ => {
                if let Some(rest) = id.strip_prefix("peano:") {
                    let alpha: f64 = rest
                        .parse()
                        .map_err(|_| LabError::Config(format!("bad peano exponent in '{id}'")))?;
                    Self::peano(alpha).map_err(|e| LabError::Config(e.to_string()))
                } else {
                    Err(LabError::Config(format!("unknown coefficient set '{id}'")))
                }
            }
        }
    }
}

/// One line of a [`ValidationReport`].
#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    /// Largest normalised violation measure seen (≤ 1 means the bound held).
    pub worst_ratio: f64,
    pub worst_probe: usize,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub checks: Vec<CheckResult>,
}

impl ValidationReport {
    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn passed(&self, name: &str) -> bool {
        self.get(name).is_some_and(|c| c.passed)
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

/// Probe point: `(time, state)`.
pub type Probe = (f64, Vec<f64>);

/// Halton-sequence probes over `[t0, t1] × box`.
pub fn halton_probes(n: usize, t_range: (f64, f64), lo: &[f64], hi: &[f64]) -> Vec<Probe> {
    const PRIMES: [u64; 9] = [2, 3, 5, 7, 11, 13, 17, 19, 23];
    assert!(lo.len() == hi.len() && lo.len() < PRIMES.len());
    let radical_inverse = |mut i: u64, base: u64| {
        let mut f = 1.0;
        let mut r = 0.0;
        while i > 0 {
            f /= base as f64;
            r += f * (i % base) as f64;
            i /= base;
        }
        r
    };
    (1..=n as u64)
        .map(|i| {
            let t = t_range.0 + (t_range.1 - t_range.0) * radical_inverse(i, PRIMES[0]);
            let x = lo
                .iter()
                .zip(hi)
                .enumerate()
                .map(|(k, (a, b))| a + (b - a) * radical_inverse(i, PRIMES[k + 1]))
                .collect();
            (t, x)
        })
        .collect()
}

struct Tracker {
    name: &'static str,
    worst: f64,
    probe: usize,
    detail: String,
}

impl Tracker {
    fn new(name: &'static str) -> Self {
        Self {
            name,
            worst: 0.0,
            probe: 0,
            detail: String::new(),
        }
    }

    fn observe(&mut self, ratio: f64, probe: usize, detail: impl FnOnce() -> String) {
        if ratio > self.worst {
            self.worst = ratio;
            self.probe = probe;
            self.detail = detail();
        }
    }

    fn finish(self, extra_ok: bool, extra: &str) -> CheckResult {
        let passed = extra_ok && self.worst <= 1.0 + 1e-9;
        let mut detail = self.detail;
        if !extra.is_empty() {
            if !detail.is_empty() {
                detail.push_str("; ");
            }
            detail.push_str(extra);
        }
        CheckResult {
            name: self.name,
            passed,
            worst_ratio: self.worst,
            worst_probe: self.probe,
            detail,
        }
    }
}

fn finite_or(
    what: &'static str,
    probe: usize,
    t: f64,
    x: &[f64],
    values: &[f64],
) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(LabError::Evaluation {
            what,
            probe,
            t,
            x: x.to_vec(),
        })
    }
}

fn block_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Violation measure of `lo ≤ eig ≤ hi`: `max(eig_max/hi, lo/eig_min)`.
fn spectral_ratio(m: &DMatrix<f64>, bound: f64) -> (f64, f64, f64) {
    let eig = SymmetricEigen::new(m.clone()).eigenvalues;
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lower = if min > 0.0 {
        (1.0 / bound) / min
    } else {
        f64::INFINITY
    };
    (lower.max(max / bound), min, max)
}

/// Pairs used for the sampled Hölder checks: all pairs among the first 48
/// probes plus every consecutive pair.
fn probe_pairs(n: usize) -> Vec<(usize, usize)> {
    let head = n.min(48);
    let mut pairs: Vec<(usize, usize)> = (0..head)
        .flat_map(|i| (i + 1..head).map(move |j| (i, j)))
        .collect();
    pairs.extend((head.saturating_sub(1)..n.saturating_sub(1)).map(|i| (i, i + 1)));
    pairs
}

/// Checks assumptions (H) on the given probes.
///
/// Hölder bounds are checked as sampled ratios against the declared constants,
/// spectral bounds pointwise; an extra `D1F2-consistency` line compares the
/// analytic `D1F2` with central differences of `F2` in `x1`.
pub fn validate(cs: &CoefficientSet, probes: &[Probe]) -> Result<ValidationReport> {
    if probes.is_empty() {
        return Err(LabError::Precondition("validate needs at least one probe".into()));
    }
    let d = cs.d();
    let n = probes.len();
    for (k, (_, x)) in probes.iter().enumerate() {
        if x.len() != 2 * d {
            return Err(LabError::Domain(format!(
                "probe {k} has dimension {} (expected {})",
                x.len(),
                2 * d
            )));
        }
    }

    let mut f1v = vec![vec![0.0; d]; n];
    let mut f2v = vec![vec![0.0; d]; n];
    let mut sigv = vec![vec![0.0; d * d]; n];
    let mut jv = vec![vec![0.0; d * d]; n];
    for (k, (t, x)) in probes.iter().enumerate() {
        cs.f1_into(*t, x, &mut f1v[k]);
        finite_or("F1", k, *t, x, &f1v[k])?;
        cs.f2_into(*t, x, &mut f2v[k]);
        finite_or("F2", k, *t, x, &f2v[k])?;
        cs.sigma_into(*t, x, &mut sigv[k]);
        finite_or("sigma", k, *t, x, &sigv[k])?;
        cs.d1f2_into(*t, x, &mut jv[k]);
        finite_or("D1F2", k, *t, x, &jv[k])?;
    }

    let e = cs.exponents;
    let c = cs.constants;
    let mut h1 = Tracker::new("H1");
    let mut h3a = Tracker::new("H3-a");
    let mut buf = vec![0.0; d];
    let mut mbuf = vec![0.0; d * d];
    for (i, j) in probe_pairs(n) {
        let (t, x) = &probes[i];
        let y = &probes[j].1;
        let dx1 = block_norm(&x[..d], &y[..d]);
        let dx2 = block_norm(&x[d..], &y[d..]);
        if dx1 + dx2 == 0.0 {
            continue;
        }
        cs.f1_into(*t, y, &mut buf);
        finite_or("F1", j, *t, y, &buf)?;
        let num = block_norm(&f1v[i], &buf);
        let den = c.c1 * (dx1.powf(e.beta11) + dx2.powf(e.beta12));
        h1.observe(num / den, i, || format!("F1 ratio at pair ({i},{j})"));

        cs.f2_into(*t, y, &mut buf);
        finite_or("F2", j, *t, y, &buf)?;
        let num = block_norm(&f2v[i], &buf);
        let den = c.c2 * (dx1 + dx2.powf(e.beta22));
        h1.observe(num / den, i, || format!("F2 ratio at pair ({i},{j})"));

        cs.sigma_into(*t, y, &mut mbuf);
        finite_or("sigma", j, *t, y, &mbuf)?;
        let num = block_norm(&sigv[i], &mbuf);
        let den = c.c_sigma * (dx1 + dx2);
        h1.observe(num / den, i, || format!("sigma ratio at pair ({i},{j})"));

        // H3-a: move x1 only.
        if dx1 > 0.0 {
            let mut z = x.clone();
            z[..d].copy_from_slice(&y[..d]);
            cs.d1f2_into(*t, &z, &mut mbuf);
            finite_or("D1F2", j, *t, &z, &mbuf)?;
            let num = block_norm(&jv[i], &mbuf);
            let den = c.c2_bar * dx1.powf(e.eta);
            h3a.observe(num / den, i, || format!("D1F2 ratio at pair ({i},{j})"));
        }
    }
    let h1_ok = e.satisfies_threshold();
    let h1 = h1.finish(
        h1_ok,
        if h1_ok {
            ""
        } else {
            "degenerate-direction exponents not > 1/3"
        },
    );
    let h3a = h3a.finish(true, "");

    let mut h2 = Tracker::new("H2");
    let mut h3b = Tracker::new("H3-b");
    for k in 0..n {
        let s = DMatrix::from_row_slice(d, d, &sigv[k]);
        let (r, lo, hi) = spectral_ratio(&(&s * s.transpose()), cs.ellipticity);
        h2.observe(r, k, || format!("eig(a) in [{lo:.4e}, {hi:.4e}]"));
        let j = DMatrix::from_row_slice(d, d, &jv[k]);
        let (r, lo, hi) = spectral_ratio(&(&j * j.transpose()), cs.hypo_ellipticity);
        h3b.observe(r, k, || format!("eig(JJ*) in [{lo:.4e}, {hi:.4e}]"));
    }

    let mut fd = Tracker::new("D1F2-consistency");
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    for (k, (t, x)) in probes.iter().enumerate() {
        for col in 0..d {
            let h = 1e-5 * x[col].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[col] += h;
            xm[col] -= h;
            cs.f2_into(*t, &xp, &mut plus);
            cs.f2_into(*t, &xm, &mut minus);
            for row in 0..d {
                let fdv = (plus[row] - minus[row]) / (2.0 * h);
                let an = jv[k][row * d + col];
                let ratio = (fdv - an).abs() / (1e-6 * an.abs().max(1.0));
                fd.observe(ratio, k, || format!("entry ({row},{col}): fd={fdv:.10e} analytic={an:.10e}"));
            }
        }
    }

    Ok(ValidationReport {
        checks: vec![
            h1,
            h2.finish(true, ""),
            h3a,
            h3b.finish(true, ""),
            fd.finish(true, ""),
        ],
    })
}

/// Number of quadrature nodes per dimension used by [`mollify`].
pub const MOLLIFIER_NODES: usize = 64;

/// Largest tensor mollifier stencil accepted.
const MAX_MOLLIFIER_STENCIL: usize = 1 << 22;

/// Convolves every coefficient in space with a product bump
/// `ψ(z) ∝ exp(-1/(1-z²))` of half-width `1/n`, discretised with
/// [`MOLLIFIER_NODES`] Gauss–Legendre nodes per coordinate.
///
/// The discrete weights are normalised to sum to one and are symmetric, so
/// affine fields are reproduced and odd fields stay odd.
pub fn mollify(cs: &CoefficientSet, n: usize) -> Result<CoefficientSet> {
    mollify_with_nodes(cs, n, MOLLIFIER_NODES)
}

pub fn mollify_with_nodes(cs: &CoefficientSet, n: usize, nodes: usize) -> Result<CoefficientSet> {
    if n == 0 {
        return Err(LabError::Domain("mollification index must be >= 1".into()));
    }
    let dim = cs.state_dim();
    let stencil_size = nodes
        .checked_pow(dim as u32)
        .filter(|&s| s <= MAX_MOLLIFIER_STENCIL)
        .ok_or(LabError::UnsupportedDimension(cs.d()))?;

    let rule = gauss_legendre(nodes);
    let width = 1.0 / n as f64;
    let mut w1: Vec<f64> = rule
        .nodes
        .iter()
        .zip(&rule.weights)
        .map(|(z, w)| w * (-1.0 / (1.0 - z * z)).exp())
        .collect();
    let total: f64 = w1.iter().sum();
    w1.iter_mut().for_each(|w| *w /= total);
    let off1: Vec<f64> = rule.nodes.iter().map(|z| z * width).collect();

    let mut offsets = Vec::with_capacity(stencil_size * dim);
    let mut weights = Vec::with_capacity(stencil_size);
    let mut idx = vec![0usize; dim];
    for _ in 0..stencil_size {
        let mut w = 1.0;
        for &i in &idx {
            offsets.push(off1[i]);
            w *= w1[i];
        }
        weights.push(w);
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < nodes {
                break;
            }
            *slot = 0;
        }
    }
    let stencil = Arc::new((offsets, weights));

    let smooth = |field: Field| -> Field {
        let stencil = stencil.clone();
        Arc::new(move |t, x, out| {
            let (offsets, weights) = &*stencil;
            let dim = x.len();
            let mut shifted = vec![0.0; dim];
            let mut val = vec![0.0; out.len()];
            out.fill(0.0);
            for (k, w) in weights.iter().enumerate() {
                let off = &offsets[k * dim..(k + 1) * dim];
                for i in 0..dim {
                    shifted[i] = x[i] - off[i];
                }
                field(t, &shifted, &mut val);
                for (o, v) in out.iter_mut().zip(&val) {
                    *o += w * v;
                }
            }
        })
    };

    Ok(CoefficientSet {
        name: format!("{}~n{}", cs.name, n),
        d: cs.d,
        f1: smooth(cs.f1.clone()),
        f2: smooth(cs.f2.clone()),
        sigma: smooth(cs.sigma.clone()),
        d1f2: smooth(cs.d1f2.clone()),
        exponents: cs.exponents,
        constants: cs.constants,
        ellipticity: cs.ellipticity,
        hypo_ellipticity: cs.hypo_ellipticity,
        frozen_exact: cs.frozen_exact,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn box_probes(d: usize, n: usize) -> Vec<Probe> {
        halton_probes(n, (0.0, 1.0), &vec![-2.0; 2 * d], &vec![2.0; 2 * d])
    }

    #[test]
    fn kolmogorov_passes_everything() {
        for d in [1, 2] {
            let report = validate(&CoefficientSet::kolmogorov(d), &box_probes(d, 64)).unwrap();
            assert!(report.all_passed(), "{report:?}");
        }
    }

    #[test]
    fn zero_sigma_fails_ellipticity() {
        let base = CoefficientSet::kolmogorov(1);
        let zero: Field = Arc::new(|_, _, out| out.fill(0.0));
        let cs = CoefficientSet::new(
            "no-noise",
            1,
            base.f1.clone(),
            base.f2.clone(),
            zero,
            base.d1f2.clone(),
            base.exponents,
            base.constants,
            1.5,
            1.5,
        )
        .unwrap();
        let report = validate(&cs, &box_probes(1, 32)).unwrap();
        assert!(!report.passed("H2"));
        assert!(report.passed("H3-b"));
    }

    #[test]
    fn f2_without_x1_dependence_fails_hypoellipticity() {
        let base = CoefficientSet::kolmogorov(1);
        let f2: Field = Arc::new(|_, x, out| out[0] = x[1].sin());
        let j: Field = Arc::new(|_, _, out| out[0] = 0.0);
        let cs = CoefficientSet::new(
            "flat",
            1,
            base.f1.clone(),
            f2,
            base.sigma.clone(),
            j,
            base.exponents,
            base.constants,
            1.5,
            1.5,
        )
        .unwrap();
        let report = validate(&cs, &box_probes(1, 32)).unwrap();
        assert!(!report.passed("H3-b"));
        assert!(report.passed("H2"));
        assert!(report.passed("D1F2-consistency"));
    }

    #[test]
    fn non_finite_evaluation_names_the_probe() {
        let base = CoefficientSet::kolmogorov(1);
        let f1: Field = Arc::new(|_, x, out| out[0] = if x[0] > 1.0 { f64::NAN } else { 0.0 });
        let cs = CoefficientSet::new(
            "nan",
            1,
            f1,
            base.f2.clone(),
            base.sigma.clone(),
            base.d1f2.clone(),
            base.exponents,
            base.constants,
            1.5,
            1.5,
        )
        .unwrap();
        let probes = vec![(0.0, vec![0.0, 0.0]), (0.0, vec![2.0, 0.0])];
        match validate(&cs, &probes) {
            Err(LabError::Evaluation { what, probe, .. }) => {
                assert_eq!(what, "F1");
                assert_eq!(probe, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn empty_probe_list_is_rejected() {
        assert!(matches!(
            validate(&CoefficientSet::kolmogorov(1), &[]),
            Err(LabError::Precondition(_))
        ));
    }

    #[test]
    fn shipped_sets_pass_validation() {
        let probes = box_probes(1, 96);
        let hetero = validate(&CoefficientSet::heterogeneous_demo(), &probes).unwrap();
        assert!(hetero.all_passed(), "{hetero:?}");
        let peano = validate(&CoefficientSet::peano(0.5).unwrap(), &probes).unwrap();
        assert!(peano.all_passed(), "{peano:?}");
    }

    #[test]
    fn peano_set_below_threshold_fails_h1_claim() {
        let report = validate(&CoefficientSet::peano(0.25).unwrap(), &box_probes(1, 32)).unwrap();
        assert!(!report.passed("H1"));
    }

    #[test]
    fn peano_drift_basics() {
        let p = PeanoDrift::new(0.5).unwrap();
        assert_eq!(p.eval(0.0), 0.0);
        assert_eq!(p.eval(4.0), 2.0);
        assert_eq!(p.eval(-4.0), -2.0);
        assert!(PeanoDrift::new(1.0).is_err());
        assert!(PeanoDrift::new(-1.0).is_err());
        let q = PeanoDrift::new(-0.5).unwrap();
        assert_eq!(q.eval(0.0), 0.0);
        assert_eq!(q.eval(0.25), 2.0);
    }

    #[test]
    fn from_id_resolves_builtins() {
        assert_eq!(CoefficientSet::from_id("kolmogorov").unwrap().d(), 1);
        assert_eq!(
            CoefficientSet::from_id("peano:0.4").unwrap().exponents.beta22,
            0.4
        );
        assert!(CoefficientSet::from_id("heterogeneous-demo").is_ok());
        assert!(matches!(
            CoefficientSet::from_id("nope"),
            Err(LabError::Config(_))
        ));
        assert!(CoefficientSet::from_id("peano:x").is_err());
    }

    #[test]
    fn mollify_keeps_affine_fields() {
        let cs = CoefficientSet::kolmogorov(1);
        let m = mollify(&cs, 3).unwrap();
        for x in [[0.3, -1.2], [2.5, 0.0], [-7.0, 4.0]] {
            assert!((m.f2(0.1, &x)[0] - x[0]).abs() < 1e-8);
            assert!(m.f1(0.1, &x)[0].abs() < 1e-12);
            assert!((m.sigma(0.1, &x)[(0, 0)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn mollify_is_deterministic_and_keeps_validity() {
        let cs = CoefficientSet::peano(0.5).unwrap();
        let a = mollify(&cs, 10).unwrap();
        let b = mollify(&cs, 10).unwrap();
        for x in [[0.0, 0.013], [1.0, -0.4]] {
            assert_eq!(a.f2(0.0, &x)[0].to_bits(), b.f2(0.0, &x)[0].to_bits());
        }
        let report = validate(&a, &box_probes(1, 24)).unwrap();
        assert!(report.all_passed(), "{report:?}");
    }

    #[test]
    fn mollified_peano_stays_odd() {
        let m = mollify(&CoefficientSet::peano(0.5).unwrap(), 10).unwrap();
        for x2 in [0.0, 0.01, 0.05, 0.3, 0.9] {
            let p = m.f2(0.0, &[0.0, x2])[0];
            let q = m.f2(0.0, &[0.0, -x2])[0];
            assert!((p + q).abs() < 1e-12, "x2={x2}: {p} vs {q}");
        }
    }

    #[test]
    fn mollified_peano_converges() {
        // Dense-grid sup distance of the degenerate-direction drift on [-1, 1].
        let cs = CoefficientSet::peano(0.5).unwrap();
        let sup_dist = |n: usize| {
            let m = mollify(&cs, n).unwrap();
            (0..=400)
                .map(|k| {
                    let x2 = -1.0 + 2.0 * k as f64 / 400.0;
                    (m.f2(0.0, &[0.0, x2])[0] - cs.f2(0.0, &[0.0, x2])[0]).abs()
                })
                .fold(0.0, f64::max)
        };
        let (d10, d100) = (sup_dist(10), sup_dist(100));
        assert!(d100 < d10, "{d100} !< {d10}");
        assert!(d100 < 0.5 * d10);
    }

    #[test]
    fn huge_stencil_is_rejected() {
        assert!(matches!(
            mollify(&CoefficientSet::kolmogorov(3), 2),
            Err(LabError::UnsupportedDimension(3))
        ));
    }
}
