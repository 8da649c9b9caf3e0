//! Gauss–Legendre and Gauss–Hermite rules, tensor Gaussian expectations and a
//! kink-aware radial rule for `|y|^γ`-type integrands.
//!
//! Rules are computed once per order with Newton iteration on the three-term
//! recurrences and cached process-wide.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// A one-dimensional quadrature rule.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum RuleKind {
    Legendre,
    Hermite,
}

fn rule_cache() -> &'static RwLock<HashMap<(RuleKind, usize), Arc<GaussRule>>> {
    static CACHE: OnceLock<RwLock<HashMap<(RuleKind, usize), Arc<GaussRule>>>> = OnceLock::new();
    CACHE.get_or_init(|| RwLock::new(HashMap::new()))
}

fn cached(kind: RuleKind, n: usize, build: fn(usize) -> GaussRule) -> Arc<GaussRule> {
    if let Some(rule) = rule_cache().read().unwrap().get(&(kind, n)) {
        return rule.clone();
    }
    let rule = Arc::new(build(n));
    rule_cache()
        .write()
        .unwrap()
        .entry((kind, n))
        .or_insert(rule)
        .clone()
}

/// Gauss–Legendre rule with `n` nodes on [-1, 1].
pub fn gauss_legendre(n: usize) -> Arc<GaussRule> {
    assert!(n >= 1, "Gauss-Legendre needs at least one node");
    cached(RuleKind::Legendre, n, build_legendre)
}

/// Gauss–Hermite rule with `n` nodes for the weight `exp(-x^2)`.
pub fn gauss_hermite(n: usize) -> Arc<GaussRule> {
    assert!(n >= 1, "Gauss-Hermite needs at least one node");
    cached(RuleKind::Hermite, n, build_hermite)
}

fn build_legendre(n: usize) -> GaussRule {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (1.0, 0.0);
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                p1 = ((2.0 * j as f64 - 1.0) * z * p2 - (j as f64 - 1.0) * p3) / j as f64;
            }
            pp = n as f64 * (z * p1 - p2) / (z * z - 1.0);
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 1e-15 {
                break;
            }
        }
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        let w = 2.0 / ((1.0 - z * z) * pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    GaussRule { nodes, weights }
}

fn build_hermite(n: usize) -> GaussRule {
    let pim4 = PI.powf(-0.25);
    let nf = n as f64;
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * nodes[0],
            3 => 1.91 * z - 0.91 * nodes[1],
            _ => 2.0 * z - nodes[i - 2],
        };
        let mut pp = 1.0;
        for _ in 0..100 {
            let (mut p1, mut p2) = (pim4, 0.0);
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() < 3e-14 {
                break;
            }
        }
        nodes[i] = z;
        nodes[n - 1 - i] = -z;
        let w = 2.0 / (pp * pp);
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    nodes.reverse();
    weights.reverse();
    GaussRule { nodes, weights }
}

impl GaussRule {
    /// Integrates `f` over `[a, b]` (Legendre rules only).
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        let mut acc = 0.0;
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            acc += w * f(mid + half * x);
        }
        acc * half
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(x, w)| (mid + half * x, w * half))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Tensor Gauss–Hermite rule for the standard normal law in `dim` dimensions:
/// `E f(Z) ≈ Σ_k weights[k] f(points[k])`.
#[derive(Debug, Clone)]
pub struct StandardNormalRule {
    pub dim: usize,
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl StandardNormalRule {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn point(&self, k: usize) -> &[f64] {
        &self.points[k * self.dim..(k + 1) * self.dim]
    }
}

/// Cached tensor rule with `n` Gauss–Hermite nodes per dimension.
pub fn standard_normal_rule(dim: usize, n: usize) -> Arc<StandardNormalRule> {
    static CACHE: OnceLock<RwLock<HashMap<(usize, usize), Arc<StandardNormalRule>>>> =
        OnceLock::new();
    let cache = CACHE.get_or_init(|| RwLock::new(HashMap::new()));
    if let Some(rule) = cache.read().unwrap().get(&(dim, n)) {
        return rule.clone();
    }
    let gh = gauss_hermite(n);
    let total = n.pow(dim as u32);
    let mut points = Vec::with_capacity(total * dim);
    let mut weights = Vec::with_capacity(total);
    let norm = PI.powf(-0.5 * dim as f64);
    let sqrt2 = 2.0_f64.sqrt();
    let mut idx = vec![0usize; dim];
    for _ in 0..total {
        let mut w = norm;
        for &i in &idx {
            points.push(sqrt2 * gh.nodes[i]);
            w *= gh.weights[i];
        }
        weights.push(w);
        for slot in idx.iter_mut().rev() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    let rule = Arc::new(StandardNormalRule {
        dim,
        points,
        weights,
    });
    cache
        .write()
        .unwrap()
        .entry((dim, n))
        .or_insert(rule)
        .clone()
}

/// Largest Gaussian dimension handled by the tensor rule; above it the
/// expectation falls back to Monte Carlo.
pub const MAX_TENSOR_DIM: usize = 4;

/// Samples used by the Monte Carlo fallback.
pub const MC_FALLBACK_SAMPLES: usize = 1 << 16;

/// Result of a Gaussian expectation. `stderr` is `Some` only for the Monte
/// Carlo fallback.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Expectation {
    pub value: f64,
    pub stderr: Option<f64>,
}

/// `E φ(m + L Z)` with `Z` standard normal, `L` lower triangular.
///
/// Uses the tensor Gauss–Hermite rule with `n` nodes per dimension when
/// `dim ≤ MAX_TENSOR_DIM`, and a fixed-seed Monte Carlo estimate otherwise.
pub fn gaussian_expectation<F>(
    mean: &DVector<f64>,
    chol: &DMatrix<f64>,
    n: usize,
    mut phi: F,
) -> Expectation
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = mean.len();
    let mut y = vec![0.0; dim];
    let map = |z: &[f64], y: &mut [f64]| {
        for i in 0..dim {
            let mut acc = mean[i];
            for j in 0..=i {
                acc += chol[(i, j)] * z[j];
            }
            y[i] = acc;
        }
    };
    if dim <= MAX_TENSOR_DIM {
        let rule = standard_normal_rule(dim, n);
        let mut acc = 0.0;
        for k in 0..rule.len() {
            map(rule.point(k), &mut y);
            acc += rule.weights[k] * phi(&y);
        }
        Expectation {
            value: acc,
            stderr: None,
        }
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(0x6761_7573_735f_6d63);
        let mut z = vec![0.0; dim];
        let (mut sum, mut sumsq) = (0.0, 0.0);
        for _ in 0..MC_FALLBACK_SAMPLES {
            for zi in z.iter_mut() {
                *zi = StandardNormal.sample(&mut rng);
            }
            map(&z, &mut y);
            let v = phi(&y);
            sum += v;
            sumsq += v * v;
        }
        let n = MC_FALLBACK_SAMPLES as f64;
        let mean = sum / n;
        let var = ((sumsq - n * mean * mean) / (n - 1.0)).max(0.0);
        Expectation {
            value: mean,
            stderr: Some((var / n).sqrt()),
        }
    }
}

/// `E |μ + L Z|^γ` for a `k`-dimensional block (`k ∈ {1, 2}`), integrated in
/// polar coordinates centred on the kink `Z* = -L⁻¹ μ` so that the
/// non-smoothness sits at the radial endpoint.
pub fn abs_power_moment(mu: &DVector<f64>, chol: &DMatrix<f64>, gamma: f64) -> Option<f64> {
    let k = mu.len();
    if k == 0 || k > 2 {
        return None;
    }
    let kink = chol.solve_lower_triangular(&(-mu))?;
    let radial = gauss_legendre(96);
    let reach = kink.norm() + 12.0;
    // r = ρ², so dr = 2ρ dρ; lifts the endpoint power r^{γ+k-1}.
    let rho_max = reach.sqrt();
    let dens_norm = (2.0 * PI).powf(-0.5 * k as f64);
    let directions: Vec<(DVector<f64>, f64)> = if k == 1 {
        vec![
            (DVector::from_element(1, 1.0), 1.0),
            (DVector::from_element(1, -1.0), 1.0),
        ]
    } else {
        let m = 128;
        (0..m)
            .map(|j| {
                let phi = 2.0 * PI * j as f64 / m as f64;
                (DVector::from_vec(vec![phi.cos(), phi.sin()]), 2.0 * PI / m as f64)
            })
            .collect()
    };
    let mut total = 0.0;
    for (u, dw) in &directions {
        let lu = chol * u;
        let scale = lu.norm().powf(gamma);
        let along = kink.dot(u);
        let kink_sq = kink.norm_squared();
        let mut acc = 0.0;
        for (rho, w) in radial.mapped(0.0, rho_max) {
            let r = rho * rho;
            let zsq = kink_sq + 2.0 * r * along + r * r;
            acc += w * 2.0 * rho * r.powf(gamma + k as f64 - 1.0) * (-0.5 * zsq).exp();
        }
        total += dw * scale * acc;
    }
    Some(total * dens_norm)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let rule = gauss_legendre(32);
        let v = rule.integrate(0.0, 2.0, |x| x.powi(63));
        let exact = 2.0_f64.powi(64) / 64.0;
        assert!((v / exact - 1.0).abs() < 1e-13);
        assert!((rule.weights.iter().sum::<f64>() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn hermite_moments_match_standard_normal() {
        for n in [4, 20, 21, 64] {
            let rule = standard_normal_rule(1, n);
            let m0: f64 = rule.weights.iter().sum();
            let m2: f64 = (0..rule.len())
                .map(|k| rule.weights[k] * rule.point(k)[0].powi(2))
                .sum();
            let m4: f64 = (0..rule.len())
                .map(|k| rule.weights[k] * rule.point(k)[0].powi(4))
                .sum();
            assert!((m0 - 1.0).abs() < 1e-13, "n={n} m0={m0}");
            assert!((m2 - 1.0).abs() < 1e-12, "n={n} m2={m2}");
            if n >= 3 {
                assert!((m4 - 3.0).abs() < 1e-11, "n={n} m4={m4}");
            }
        }
    }

    #[test]
    fn tensor_rule_recovers_covariance() {
        let mean = DVector::from_vec(vec![1.0, -2.0]);
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 0.5]);
        let chol = cov.clone().cholesky().unwrap().l();
        let e = gaussian_expectation(&mean, &chol, 8, |y| (y[0] - 1.0) * (y[1] + 2.0));
        assert!((e.value - 0.3).abs() < 1e-13);
        assert!(e.stderr.is_none());
    }

    #[test]
    fn monte_carlo_fallback_reports_error() {
        let dim = 6;
        let mean = DVector::zeros(dim);
        let chol = DMatrix::identity(dim, dim);
        let e = gaussian_expectation(&mean, &chol, 4, |y| y[0] * y[0]);
        let se = e.stderr.unwrap();
        assert!((e.value - 1.0).abs() < 4.0 * se);
    }

    #[test]
    fn abs_power_moment_matches_folded_normal() {
        // E|σZ| = σ √(2/π)
        let sigma = 0.7;
        let chol = DMatrix::from_element(1, 1, sigma);
        let v = abs_power_moment(&DVector::zeros(1), &chol, 1.0).unwrap();
        assert!((v - sigma * (2.0 / PI).sqrt()).abs() < 1e-12);
        // shifted: E|μ + Z| = √(2/π) e^{-μ²/2} + μ (1 - 2Φ(-μ)); with μ = 1:
        // 2φ(1) + erf(1/√2) = 0.48394144903828673 + 0.68268949213708585
        let v = abs_power_moment(&DVector::from_element(1, 1.0), &DMatrix::identity(1, 1), 1.0)
            .unwrap();
        assert!((v - 1.1666309411753726).abs() < 1e-10, "{v}");
    }

    #[test]
    fn abs_power_moment_two_dimensional_rayleigh() {
        // |Z| for standard bivariate normal is Rayleigh: E|Z| = √(π/2).
        let v = abs_power_moment(&DVector::zeros(2), &DMatrix::identity(2, 2), 1.0).unwrap();
        assert!((v - (PI / 2.0).sqrt()).abs() < 1e-10, "{v}");
    }
}
