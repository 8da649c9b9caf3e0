//! Path simulation: Euler–Maruyama for the degenerate system, and explicit
//! Euler for the perturbed Peano equation `X = x + ∫ sign(X)|X|^α ds + 𝓦`
//! driven by a self-similar noise sampled exactly on the grid.

use std::f64::consts::PI;

use rayon::prelude::*;

use crate::coefficients::{CoefficientSet, PeanoDrift};
use crate::error::{LabError, Result};
use crate::rng::{stream_id, GaussianStream};

pub use crate::stats::McEstimate;

/// Peano paths are frozen once `|X|` exceeds this level.
pub const PEANO_BOX: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NoiseKind {
    Brownian,
    IntegratedBrownian,
    /// `ε B`.
    ScaledBrownian(f64),
}

/// A driving noise `𝓦` with `𝓦_t ~ t^γ 𝓦_1` and `𝓦 ~ -𝓦`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    pub kind: NoiseKind,
}

impl NoiseModel {
    pub const fn brownian() -> Self {
        Self {
            kind: NoiseKind::Brownian,
        }
    }

    pub const fn integrated_brownian() -> Self {
        Self {
            kind: NoiseKind::IntegratedBrownian,
        }
    }

    pub fn scaled_brownian(eps: f64) -> Result<Self> {
        if !(eps >= 0.0) || !eps.is_finite() {
            return Err(LabError::Domain(format!("noise scale must be >= 0, got {eps}")));
        }
        Ok(Self {
            kind: NoiseKind::ScaledBrownian(eps),
        })
    }

    /// Self-similarity exponent.
    pub fn gamma(&self) -> f64 {
        match self.kind {
            NoiseKind::IntegratedBrownian => 1.5,
            _ => 0.5,
        }
    }

    /// `E|𝓦_1|`.
    pub fn abs_moment(&self) -> f64 {
        let folded = (2.0 / PI).sqrt();
        match self.kind {
            NoiseKind::Brownian => folded,
            NoiseKind::IntegratedBrownian => (2.0 / (3.0 * PI)).sqrt(),
            NoiseKind::ScaledBrownian(eps) => eps * folded,
        }
    }

    /// `Var(𝓦_1)`.
    pub fn unit_variance(&self) -> f64 {
        match self.kind {
            NoiseKind::Brownian => 1.0,
            NoiseKind::IntegratedBrownian => 1.0 / 3.0,
            NoiseKind::ScaledBrownian(eps) => eps * eps,
        }
    }

    pub fn name(&self) -> String {
        match self.kind {
            NoiseKind::Brownian => "brownian".into(),
            NoiseKind::IntegratedBrownian => "integrated-brownian".into(),
            NoiseKind::ScaledBrownian(eps) => format!("scaled-brownian:{eps}"),
        }
    }
}

/// Exact one-step sampler of the noise increments.
#[derive(Debug, Clone)]
pub struct NoiseStepper {
    model: NoiseModel,
    /// Current Brownian value for the integrated model.
    b: f64,
}

impl NoiseStepper {
    pub fn new(model: NoiseModel) -> Self {
        Self { model, b: 0.0 }
    }

    /// `𝓦_{t+h} - 𝓦_t`.
    #[inline]
    pub fn increment(&mut self, h: f64, rng: &mut GaussianStream) -> f64 {
        match self.model.kind {
            NoiseKind::Brownian => h.sqrt() * rng.normal(),
            NoiseKind::ScaledBrownian(eps) => eps * h.sqrt() * rng.normal(),
            NoiseKind::IntegratedBrownian => {
                // (ΔB, ∫(B_u - B_t)du) is bivariate normal with variances h, h³/3
                // and covariance h²/2.
                let z1 = rng.normal();
                let z2 = rng.normal();
                let sh = h.sqrt();
                let local = h * sh * (0.5 * z1 + z2 / (2.0 * 3.0_f64.sqrt()));
                let dw = self.b * h + local;
                self.b += sh * z1;
                dw
            }
        }
    }
}

/// How a [`Path`] was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Scheme {
    pub method: &'static str,
    pub step: f64,
}

/// Simulated trajectory on a time grid; `values` holds `dim` entries per node.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub dim: usize,
    pub seed: u64,
    pub stream: u64,
    pub scheme: Scheme,
}

impl Path {
    pub fn len(&self) -> usize {
        self.grid.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grid.is_empty()
    }

    pub fn value(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn last(&self) -> &[f64] {
        self.value(self.len() - 1)
    }

    /// Component `i` of every node.
    pub fn component(&self, i: usize) -> Vec<f64> {
        self.values.iter().skip(i).step_by(self.dim).copied().collect()
    }
}

/// `steps + 1` equally spaced times on `[0, t_end]`.
pub fn uniform_grid(t_end: f64, steps: usize) -> Vec<f64> {
    let h = t_end / steps as f64;
    (0..=steps)
        .map(|k| if k == steps { t_end } else { k as f64 * h })
        .collect()
}

fn check_grid(grid: &[f64]) -> Result<()> {
    if grid.first() != Some(&0.0) {
        return Err(LabError::Grid(0));
    }
    for k in 1..grid.len() {
        if !(grid[k] > grid[k - 1]) || !grid[k].is_finite() {
            return Err(LabError::Grid(k));
        }
    }
    Ok(())
}

fn check_steps(t_end: f64, steps: usize) -> Result<()> {
    if steps == 0 {
        return Err(LabError::Domain("steps must be >= 1".into()));
    }
    if !(t_end > 0.0) || !t_end.is_finite() {
        return Err(LabError::Domain(format!("horizon must be positive, got {t_end}")));
    }
    Ok(())
}

/// Noise path `𝓦` on `grid` (which must start at 0 and increase).
pub fn sample_noise(model: NoiseModel, grid: &[f64], rng: &mut GaussianStream) -> Result<Path> {
    check_grid(grid)?;
    let mut stepper = NoiseStepper::new(model);
    let mut values = Vec::with_capacity(grid.len());
    let mut w = 0.0;
    values.push(w);
    for k in 1..grid.len() {
        w += stepper.increment(grid[k] - grid[k - 1], rng);
        values.push(w);
    }
    let step = if grid.len() > 1 {
        grid[grid.len() - 1] / (grid.len() - 1) as f64
    } else {
        0.0
    };
    Ok(Path {
        grid: grid.to_vec(),
        values,
        dim: 1,
        seed: rng.seed(),
        stream: rng.stream(),
        scheme: Scheme {
            method: "exact-gaussian",
            step,
        },
    })
}

/// Euler–Maruyama for the degenerate system on `[0, t_end]`, calling
/// `observe(k, t_k, X_k)` at every node. Returns the final state.
pub fn simulate_system_with<F>(
    cs: &CoefficientSet,
    x0: &[f64],
    t_end: f64,
    steps: usize,
    rng: &mut GaussianStream,
    mut observe: F,
) -> Result<Vec<f64>>
where
    F: FnMut(usize, f64, &[f64]),
{
    check_steps(t_end, steps)?;
    let d = cs.d();
    if x0.len() != 2 * d {
        return Err(LabError::Domain(format!(
            "initial state has dimension {} (expected {})",
            x0.len(),
            2 * d
        )));
    }
    let h = t_end / steps as f64;
    let sh = h.sqrt();
    let mut x = x0.to_vec();
    let mut f1 = vec![0.0; d];
    let mut f2 = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut db = vec![0.0; d];
    observe(0, 0.0, &x);
    for k in 0..steps {
        let t = k as f64 * h;
        cs.f1_into(t, &x, &mut f1);
        cs.f2_into(t, &x, &mut f2);
        cs.sigma_into(t, &x, &mut sig);
        for v in db.iter_mut() {
            *v = sh * rng.normal();
        }
        for i in 0..d {
            let mut noise = 0.0;
            for j in 0..d {
                noise += sig[i * d + j] * db[j];
            }
            x[i] += f1[i] * h + noise;
            x[d + i] += f2[i] * h;
        }
        let t_next = if k + 1 == steps { t_end } else { (k + 1) as f64 * h };
        if x.iter().any(|v| !v.is_finite()) {
            return Err(LabError::BlowUp {
                index: k + 1,
                t: t_next,
            });
        }
        observe(k + 1, t_next, &x);
    }
    Ok(x)
}

pub fn simulate_system(
    cs: &CoefficientSet,
    x0: &[f64],
    t_end: f64,
    steps: usize,
    rng: &mut GaussianStream,
) -> Result<Path> {
    let mut grid = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity((steps + 1) * x0.len());
    simulate_system_with(cs, x0, t_end, steps, rng, |_, t, x| {
        grid.push(t);
        values.extend_from_slice(x);
    })?;
    Ok(Path {
        grid,
        values,
        dim: x0.len(),
        seed: rng.seed(),
        stream: rng.stream(),
        scheme: Scheme {
            method: "euler-maruyama",
            step: t_end / steps as f64,
        },
    })
}

/// Explicit Euler for the perturbed Peano equation on `[0, t_end]`;
/// `observe(k, t_k, X_k)` may return `false` to stop early. Paths leaving
/// `|x| ≤ PEANO_BOX` are held at their last value. Returns the last state
/// reached.
pub fn simulate_peano_with<F>(
    alpha: f64,
    x0: f64,
    model: NoiseModel,
    t_end: f64,
    steps: usize,
    rng: &mut GaussianStream,
    mut observe: F,
) -> Result<f64>
where
    F: FnMut(usize, f64, f64) -> bool,
{
    check_steps(t_end, steps)?;
    let drift = PeanoDrift::new(alpha)?;
    if !x0.is_finite() {
        return Err(LabError::Domain(format!("initial value {x0} is not finite")));
    }
    let h = t_end / steps as f64;
    let mut noise = NoiseStepper::new(model);
    let mut x = x0;
    let mut frozen = false;
    if !observe(0, 0.0, x) {
        return Ok(x);
    }
    for k in 0..steps {
        let dw = noise.increment(h, rng);
        if !frozen {
            let next = x + h * drift.eval(x) + dw;
            if !next.is_finite() {
                return Err(LabError::BlowUp {
                    index: k + 1,
                    t: (k + 1) as f64 * h,
                });
            }
            x = next;
            frozen = x.abs() > PEANO_BOX;
        }
        let t_next = if k + 1 == steps { t_end } else { (k + 1) as f64 * h };
        if !observe(k + 1, t_next, x) {
            break;
        }
    }
    Ok(x)
}

pub fn simulate_peano(
    alpha: f64,
    x0: f64,
    model: NoiseModel,
    t_end: f64,
    steps: usize,
    rng: &mut GaussianStream,
) -> Result<Path> {
    let mut grid = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    simulate_peano_with(alpha, x0, model, t_end, steps, rng, |_, t, x| {
        grid.push(t);
        values.push(x);
        true
    })?;
    Ok(Path {
        grid,
        values,
        dim: 1,
        seed: rng.seed(),
        stream: rng.stream(),
        scheme: Scheme {
            method: "euler",
            step: t_end / steps as f64,
        },
    })
}

/// Runs `sample(stream)` for every path of `task` in parallel and returns the
/// results in path order, so the outcome does not depend on the worker
/// count.
pub fn par_paths<T, F>(seed: u64, task: u64, n_paths: usize, sample: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(GaussianStream) -> Result<T> + Sync,
{
    (0..n_paths as u64)
        .into_par_iter()
        .map(|p| sample(GaussianStream::new(seed, stream_id(task, p))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coefficients::{Field, HolderConstants, HolderExponents};
    use crate::counterexample::extremal;
    use std::sync::Arc;

    #[test]
    fn integrated_noise_variance_and_abs_moment() {
        let model = NoiseModel::integrated_brownian();
        let grid = uniform_grid(1.0, 8);
        let w1 = par_paths(5, 0, 100_000, |mut rng| {
            Ok(*sample_noise(model, &grid, &mut rng)?.values.last().unwrap())
        })
        .unwrap();
        // Oracle: Var ∫₀¹ B = ∫∫ min(u, v) du dv, by midpoint double sum.
        let m = 400;
        let mut oracle = 0.0;
        for i in 0..m {
            for j in 0..m {
                let (u, v) = ((i as f64 + 0.5) / m as f64, (j as f64 + 0.5) / m as f64);
                oracle += u.min(v);
            }
        }
        oracle /= (m * m) as f64;
        assert!((oracle - 1.0 / 3.0).abs() < 1e-5);
        let sq: Vec<f64> = w1.iter().map(|w| w * w).collect();
        let var = McEstimate::from_samples(&sq, 5).unwrap();
        assert!(var.within(1.0 / 3.0, 3.0), "{var:?}");
        let abs: Vec<f64> = w1.iter().map(|w| w.abs()).collect();
        let am = McEstimate::from_samples(&abs, 5).unwrap();
        assert!(am.within(model.abs_moment(), 3.0), "{am:?}");
        assert!((model.abs_moment() - 0.4607).abs() < 1e-4);
    }

    #[test]
    fn noise_scaling_exponents() {
        for model in [NoiseModel::brownian(), NoiseModel::integrated_brownian()] {
            let grid = uniform_grid(1.0, 256);
            let paths = par_paths(17, 1, 20_000, |mut rng| sample_noise(model, &grid, &mut rng)).unwrap();
            let mut pts = vec![];
            for e in 0..=8 {
                let k = 256 >> e;
                let t = grid[k];
                let var = paths.iter().map(|p| p.values[k].powi(2)).sum::<f64>() / paths.len() as f64;
                pts.push((t, var));
                let ratio = var / t.powf(2.0 * model.gamma());
                assert!((ratio - model.unit_variance()).abs() < 0.05 * model.unit_variance());
            }
            let slope = crate::stats::loglog_slope(&pts).unwrap();
            assert!((slope - 2.0 * model.gamma()).abs() < 0.05, "{slope}");
        }
    }

    #[test]
    fn flipped_stream_negates_noise() {
        for model in [
            NoiseModel::brownian(),
            NoiseModel::integrated_brownian(),
            NoiseModel::scaled_brownian(0.3).unwrap(),
        ] {
            let grid = uniform_grid(2.0, 50);
            let a = sample_noise(model, &grid, &mut GaussianStream::new(3, 7)).unwrap();
            let b = sample_noise(model, &grid, &mut GaussianStream::flipped(3, 7)).unwrap();
            for (u, v) in a.values.iter().zip(&b.values) {
                assert_eq!(*u, -*v);
            }
        }
    }

    #[test]
    fn bad_grids_are_rejected() {
        let model = NoiseModel::brownian();
        let mut rng = GaussianStream::new(0, 0);
        assert!(matches!(
            sample_noise(model, &[0.0, 0.5, 0.5], &mut rng),
            Err(LabError::Grid(2))
        ));
        assert!(matches!(sample_noise(model, &[0.1, 0.5], &mut rng), Err(LabError::Grid(0))));
    }

    #[test]
    fn system_paths_are_deterministic() {
        let cs = CoefficientSet::heterogeneous_demo();
        let a = simulate_system(&cs, &[0.1, 0.2], 1.0, 100, &mut GaussianStream::new(1, 2)).unwrap();
        let b = simulate_system(&cs, &[0.1, 0.2], 1.0, 100, &mut GaussianStream::new(1, 2)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.value(0), &[0.1, 0.2]);
        assert_eq!(a.grid.len(), 101);
        assert_eq!(*a.grid.last().unwrap(), 1.0);
    }

    #[test]
    fn kolmogorov_second_component_is_left_riemann_sum() {
        let cs = CoefficientSet::kolmogorov(1);
        let path = simulate_system(&cs, &[0.0, 0.0], 1.0, 64, &mut GaussianStream::new(4, 0)).unwrap();
        let x1 = path.component(0);
        let x2 = path.component(1);
        let h = 1.0 / 64.0;
        let mut acc = 0.0;
        for k in 0..64 {
            acc += x1[k] * h;
            assert!((x2[k + 1] - acc).abs() < 1e-14);
        }
    }

    #[test]
    fn kolmogorov_endpoint_moments() {
        let cs = CoefficientSet::kolmogorov(1);
        let ends = par_paths(8, 0, 20_000, |mut rng| {
            simulate_system_with(&cs, &[0.0, 0.0], 1.0, 200, &mut rng, |_, _, _| {})
        })
        .unwrap();
        let x2: Vec<f64> = ends.iter().map(|x| x[1]).collect();
        let x1sq: Vec<f64> = ends.iter().map(|x| x[0] * x[0]).collect();
        assert!(McEstimate::from_samples(&x2, 8).unwrap().within(0.0, 3.0));
        assert!(McEstimate::from_samples(&x1sq, 8).unwrap().within(1.0, 3.0));
    }

    #[test]
    fn noiseless_linear_system() {
        let zero: Field = Arc::new(|_, _, out| out.fill(0.0));
        let f2: Field = Arc::new(|_, x, out| out[0] = x[0]);
        let one: Field = Arc::new(|_, _, out| out[0] = 1.0);
        let cs = CoefficientSet::new(
            "still",
            1,
            zero.clone(),
            f2,
            zero,
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
        let p = simulate_system(&cs, &[1.0, 0.0], 2.0, 10, &mut GaussianStream::new(0, 0)).unwrap();
        assert!((p.last()[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn blow_up_reports_first_bad_index() {
        let f1: Field = Arc::new(|_, x, out| out[0] = x[0].powi(8));
        let f2: Field = Arc::new(|_, x, out| out[0] = x[0]);
        let one: Field = Arc::new(|_, _, out| out[0] = 1.0);
        let cs = CoefficientSet::new(
            "wild",
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
        let res = simulate_system(&cs, &[10.0, 0.0], 1.0, 100, &mut GaussianStream::new(0, 0));
        match res {
            Err(LabError::BlowUp { index, .. }) => assert!((1..=5).contains(&index)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn peano_zero_noise_stays_at_zero() {
        let quiet = NoiseModel::scaled_brownian(0.0).unwrap();
        let p = simulate_peano(0.5, 0.0, quiet, 1.0, 1000, &mut GaussianStream::new(0, 0)).unwrap();
        assert!(p.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn peano_zero_noise_follows_extremal_branch() {
        let quiet = NoiseModel::scaled_brownian(0.0).unwrap();
        let alpha = 0.5;
        let t_star = 0.5;
        let h = 1e-4;
        let steps = 5000;
        let x0 = extremal(alpha, t_star).unwrap();
        let p = simulate_peano(alpha, x0, quiet, h * steps as f64, steps, &mut GaussianStream::new(0, 0)).unwrap();
        for (t, v) in p.grid.iter().zip(&p.values) {
            let exact = extremal(alpha, t_star + t).unwrap();
            assert!((v - exact).abs() < 1e-3, "t={t}: {v} vs {exact}");
        }
    }

    #[test]
    fn peano_odd_symmetry_is_exact() {
        for model in [NoiseModel::brownian(), NoiseModel::integrated_brownian()] {
            for alpha in [0.2, 0.45, -0.3] {
                let a = simulate_peano(alpha, 0.01, model, 1.0, 500, &mut GaussianStream::new(2, 9)).unwrap();
                let b = simulate_peano(alpha, -0.01, model, 1.0, 500, &mut GaussianStream::flipped(2, 9)).unwrap();
                for (u, v) in a.values.iter().zip(&b.values) {
                    assert_eq!(*u, -*v);
                }
            }
        }
    }

    #[test]
    fn peano_rejects_alpha_one() {
        let r = simulate_peano(1.0, 0.1, NoiseModel::brownian(), 1.0, 10, &mut GaussianStream::new(0, 0));
        assert!(matches!(r, Err(LabError::Domain(_))));
    }

    #[test]
    fn halving_the_step_keeps_quadratic_moment() {
        let cs = CoefficientSet::kolmogorov(1);
        let phi = |x: &[f64]| x[0] * x[0] + x[0] * x[1] + x[1] * x[1];
        let run = |steps: usize| {
            let v = par_paths(21, steps as u64, 100_000, |mut rng| {
                Ok(phi(&simulate_system_with(&cs, &[0.2, -0.1], 1.0, steps, &mut rng, |_, _, _| {})?))
            })
            .unwrap();
            McEstimate::from_samples(&v, 21).unwrap()
        };
        let (a, b) = (run(50), run(100));
        let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
        assert!((a.estimate - b.estimate).abs() < 3.0 * se, "{a:?} {b:?}");
    }
}
