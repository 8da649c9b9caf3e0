//! Peano counterexample: extremal solutions, the envelope stopping time, the
//! explicit persistence radius `ρ` and the Monte Carlo experiments on both
//! sides of the threshold `α* = 1 - 1/γ`.

use crate::error::{LabError, Result};
use crate::rng::GaussianStream;
use crate::sde_sim::{par_paths, simulate_peano_with, McEstimate, NoiseModel, Path};

/// `c_α = (1-α)^{1/(1-α)}`.
pub fn c_alpha(alpha: f64) -> Result<f64> {
    if !(alpha < 1.0) {
        return Err(LabError::Domain(format!("alpha={alpha} must be < 1")));
    }
    Ok((1.0 - alpha).powf(1.0 / (1.0 - alpha)))
}

/// Maximal solution `c_α t^{1/(1-α)}` of `ẋ = sign(x)|x|^α` from 0.
pub fn extremal(alpha: f64, t: f64) -> Result<f64> {
    let c = c_alpha(alpha)?;
    if !(t >= 0.0) {
        return Err(LabError::Domain(format!("extremal needs t >= 0, got {t}")));
    }
    Ok(c * t.powf(1.0 / (1.0 - alpha)))
}

/// Envelope constants for a fraction `β` of the extremal solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeParams {
    pub alpha: f64,
    pub beta: f64,
    pub c_alpha: f64,
    /// `1 - η = ((1-β)^α + (1-β)) / 2`.
    pub eta: f64,
    /// `c̃ = (β - η) c_α`.
    pub c_tilde: f64,
}

pub const DEFAULT_BETA: f64 = 0.5;

impl EnvelopeParams {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(LabError::Domain(format!("alpha={alpha} must lie in (0, 1)")));
        }
        if !(beta > 0.0 && beta < 1.0) {
            return Err(LabError::Domain(format!("beta={beta} must lie in (0, 1)")));
        }
        let c = c_alpha(alpha)?;
        let eta = 1.0 - 0.5 * ((1.0 - beta).powf(alpha) + (1.0 - beta));
        Ok(Self {
            alpha,
            beta,
            c_alpha: c,
            eta,
            c_tilde: (beta - eta) * c,
        })
    }

    /// `(1-β) c_α t^{1/(1-α)}`.
    pub fn envelope(&self, t: f64) -> f64 {
        (1.0 - self.beta) * self.c_alpha * t.powf(1.0 / (1.0 - self.alpha))
    }
}

/// `α* = 1 - 1/γ`.
pub fn alpha_star(gamma: f64) -> f64 {
    // One rounding instead of two: exact for γ = 3/2 and γ = 1/2.
    (gamma - 1.0) / gamma
}

/// `δ(α) = γ - 1/(1-α)`, positive exactly below the threshold.
pub fn delta(gamma: f64, alpha: f64) -> f64 {
    gamma - 1.0 / (1.0 - alpha)
}

/// Time at which the noise scale `ε t^γ` equals the extremal scale
/// `t^{1/(1-α)}`: `t_ε = ε^{(1-α)/(1-γ(1-α))}`.
pub fn crossover_time(alpha: f64, gamma: f64, eps: f64) -> Result<f64> {
    let denom = 1.0 - gamma * (1.0 - alpha);
    if !(alpha < 1.0) || denom == 0.0 || !(eps > 0.0) {
        return Err(LabError::Domain(format!(
            "no crossover for alpha={alpha}, gamma={gamma}, eps={eps}"
        )));
    }
    Ok(eps.powf((1.0 - alpha) / denom))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// `α < α*`: the extremal branches survive the noise.
    BelowThreshold,
    AboveThreshold,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdReport {
    pub gamma: f64,
    pub alpha_star: f64,
    /// `(α, δ(α), verdict)`.
    pub entries: Vec<(f64, f64, Verdict)>,
}

pub fn threshold_report(gamma: f64, alphas: &[f64]) -> Result<ThresholdReport> {
    if !(gamma > 0.0) {
        return Err(LabError::Domain(format!("gamma={gamma} must be positive")));
    }
    let entries = alphas
        .iter()
        .map(|&a| {
            if !(a < 1.0) {
                return Err(LabError::Domain(format!("alpha={a} must be < 1")));
            }
            let dl = delta(gamma, a);
            let verdict = if dl > 0.0 {
                Verdict::BelowThreshold
            } else {
                Verdict::AboveThreshold
            };
            Ok((a, dl, verdict))
        })
        .collect::<Result<_>>()?;
    Ok(ThresholdReport {
        gamma,
        alpha_star: alpha_star(gamma),
        entries,
    })
}

/// First grid hitting time of the envelope, with the grid step as caveat.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TauHit {
    /// `f64::INFINITY` if the envelope is never reached on the grid.
    pub time: f64,
    pub grid_step: f64,
}

impl TauHit {
    pub fn is_finite(&self) -> bool {
        self.time.is_finite()
    }
}

/// Streaming detector for `inf{t > 0 : Y_t ≤ fraction · c_α t^{1/(1-α)}}`.
#[derive(Debug, Clone)]
pub struct TauDetector {
    scale: f64,
    power: f64,
    hit: Option<f64>,
}

impl TauDetector {
    pub fn new(alpha: f64, fraction: f64) -> Result<Self> {
        Ok(Self {
            scale: fraction * c_alpha(alpha)?,
            power: 1.0 / (1.0 - alpha),
            hit: None,
        })
    }

    pub fn for_envelope(env: &EnvelopeParams) -> Self {
        Self {
            scale: (1.0 - env.beta) * env.c_alpha,
            power: 1.0 / (1.0 - env.alpha),
            hit: None,
        }
    }

    /// Feeds one grid point (`t > 0`); returns `true` once the envelope is hit.
    #[inline]
    pub fn observe(&mut self, t: f64, y: f64) -> bool {
        if self.hit.is_none() && t > 0.0 && y <= self.scale * t.powf(self.power) {
            self.hit = Some(t);
        }
        self.hit.is_some()
    }

    pub fn hit(&self) -> Option<f64> {
        self.hit
    }
}

fn scan(path: &Path, mut det: TauDetector) -> Result<TauHit> {
    if path.dim != 1 || path.is_empty() {
        return Err(LabError::Precondition("tau needs a nonempty scalar path".into()));
    }
    if !(path.values[0] > 0.0) {
        return Err(LabError::Precondition(format!(
            "tau needs a positive start, got {}",
            path.values[0]
        )));
    }
    for k in 1..path.len() {
        if det.observe(path.grid[k], path.values[k]) {
            break;
        }
    }
    Ok(TauHit {
        time: det.hit().unwrap_or(f64::INFINITY),
        grid_step: path.scheme.step,
    })
}

/// `τ(Y) = inf{t > 0 : Y_t ≤ (1-β) c_α t^{1/(1-α)}}` on the path grid.
pub fn tau_hit(path: &Path, env: &EnvelopeParams) -> Result<TauHit> {
    scan(path, TauDetector::for_envelope(env))
}

/// As [`tau_hit`] with an arbitrary fraction of the extremal solution
/// (`fraction = 1` is the extremal solution itself).
pub fn tau_hit_level(path: &Path, alpha: f64, fraction: f64) -> Result<TauHit> {
    scan(path, TauDetector::new(alpha, fraction)?)
}

/// Largest `ρ` for which the Markov bound `E|𝓦_1| c̃^{-1} ρ^δ ≤ 1 - p`
/// certifies `P(τ ≥ ρ) ≥ p`.
pub fn lemma_rho(env: &EnvelopeParams, gamma: f64, abs_moment: f64, target_prob: f64) -> Result<f64> {
    let dl = delta(gamma, env.alpha);
    if !(dl > 0.0) {
        return Err(LabError::AboveThreshold {
            alpha: env.alpha,
            gamma,
            delta: dl,
        });
    }
    if !(target_prob > 0.0 && target_prob < 1.0) {
        return Err(LabError::Domain(format!("target probability {target_prob} must lie in (0, 1)")));
    }
    if !(abs_moment > 0.0) {
        return Err(LabError::Domain(format!("E|W_1| must be positive, got {abs_moment}")));
    }
    Ok((env.c_tilde * (1.0 - target_prob) / abs_moment).powf(1.0 / dl))
}

/// Monte Carlo estimate of `P(τ(X) ≥ ρ)` for Peano paths from `x0 > 0`,
/// simulated on `[0, ρ]` with `steps` steps.
pub fn selection_probability(
    env: &EnvelopeParams,
    model: NoiseModel,
    x0: f64,
    rho: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    selection_probability_task(env, model, x0, rho, n_paths, steps, seed, 0)
}

/// Outcome of one path: `true` when the envelope is not hit before `ρ`.
pub fn survives(
    env: &EnvelopeParams,
    model: NoiseModel,
    x0: f64,
    rho: f64,
    steps: usize,
    rng: &mut GaussianStream,
) -> Result<bool> {
    let mut det = TauDetector::for_envelope(env);
    let mut hit_before = false;
    simulate_peano_with(env.alpha, x0, model, rho, steps, rng, |k, t, y| {
        if k == 0 {
            return true;
        }
        if det.observe(t, y) && k < steps {
            hit_before = true;
            return false;
        }
        true
    })?;
    Ok(!hit_before)
}

#[allow(clippy::too_many_arguments)]
pub fn selection_probability_task(
    env: &EnvelopeParams,
    model: NoiseModel,
    x0: f64,
    rho: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
    task: u64,
) -> Result<McEstimate> {
    if !(x0 > 0.0) {
        return Err(LabError::Precondition(format!("x0 must be positive, got {x0}")));
    }
    if !(rho > 0.0) {
        return Err(LabError::Domain(format!("rho must be positive, got {rho}")));
    }
    let outcomes = par_paths(seed, task, n_paths, |mut rng| {
        survives(env, model, x0, rho, steps, &mut rng)
    })?;
    McEstimate::from_successes(outcomes.iter().filter(|s| **s).count(), n_paths, seed)
}

/// Estimate of `P(X_T > 0)` for Peano paths started at `x0`.
pub fn positive_probability(
    alpha: f64,
    x0: f64,
    model: NoiseModel,
    t_end: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
    task: u64,
) -> Result<McEstimate> {
    let outcomes = par_paths(seed, task, n_paths, |mut rng| {
        simulate_peano_with(alpha, x0, model, t_end, steps, &mut rng, |_, _, _| true)
    })?;
    McEstimate::from_successes(outcomes.iter().filter(|x| **x > 0.0).count(), n_paths, seed)
}

/// One cell of the dichotomy table; `n = None` marks the `x0 = 0` control.
#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyRow {
    pub alpha: f64,
    pub n: Option<u64>,
    pub x0: f64,
    pub estimate: McEstimate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DichotomyTable {
    pub gamma: f64,
    pub t_end: f64,
    pub steps: usize,
    pub rows: Vec<DichotomyRow>,
}

impl DichotomyTable {
    /// `s(α, n)` in the order of the requested `n` values.
    pub fn trend(&self, alpha: f64) -> Vec<f64> {
        self.rows
            .iter()
            .filter(|r| r.alpha == alpha && r.n.is_some())
            .map(|r| r.estimate.estimate)
            .collect()
    }

    pub fn control(&self, alpha: f64) -> Option<&McEstimate> {
        self.rows
            .iter()
            .find(|r| r.alpha == alpha && r.n.is_none())
            .map(|r| &r.estimate)
    }
}

/// For each `α` estimates `s(α, n) = P(X_T > 0)` from `x0 = 1/n`, plus the
/// symmetric control `x0 = 0`. Each cell uses its own block of RNG streams.
pub fn dichotomy_experiment(
    alphas: &[f64],
    model: NoiseModel,
    ns: &[u64],
    t_end: f64,
    n_paths: usize,
    steps: usize,
    seed: u64,
) -> Result<DichotomyTable> {
    if ns.contains(&0) {
        return Err(LabError::Domain("n must be positive".into()));
    }
    let mut rows = Vec::new();
    let mut task = 0u64;
    for &alpha in alphas {
        let cells = ns.iter().map(|&n| Some(n)).chain(std::iter::once(None));
        for n in cells {
            let x0 = n.map_or(0.0, |n| 1.0 / n as f64);
            let estimate = positive_probability(alpha, x0, model, t_end, n_paths, steps, seed, task)?;
            task += 1;
            rows.push(DichotomyRow {
                alpha,
                n,
                x0,
                estimate,
            });
        }
    }
    Ok(DichotomyTable {
        gamma: model.gamma(),
        t_end,
        steps,
        rows,
    })
}
