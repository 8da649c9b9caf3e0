//! Small statistics helpers: Monte Carlo summaries, the two-sample
//! Kolmogorov–Smirnov distance and log-log slope regression.

use crate::error::{LabError, Result};

/// Monte Carlo mean with its standard error (sample standard deviation over
/// `√n`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub estimate: f64,
    pub stderr: f64,
    pub n_paths: usize,
    pub seed: u64,
}

impl McEstimate {
    pub fn from_samples(samples: &[f64], seed: u64) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(LabError::Precondition(format!(
                "Monte Carlo estimate needs at least 2 samples, got {n}"
            )));
        }
        let nf = n as f64;
        let mean = samples.iter().sum::<f64>() / nf;
        let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        Ok(Self {
            estimate: mean,
            stderr: (var / nf).sqrt(),
            n_paths: n,
            seed,
        })
    }

    /// Same formula for 0/1 outcomes given only the count of successes.
    pub fn from_successes(successes: usize, n: usize, seed: u64) -> Result<Self> {
        if n < 2 || successes > n {
            return Err(LabError::Precondition(format!(
                "invalid binomial sample: {successes} successes out of {n}"
            )));
        }
        let nf = n as f64;
        let p = successes as f64 / nf;
        let var = p * (1.0 - p) * nf / (nf - 1.0);
        Ok(Self {
            estimate: p,
            stderr: (var / nf).sqrt(),
            n_paths: n,
            seed,
        })
    }

    /// `|estimate - value| ≤ k·stderr`.
    pub fn within(&self, value: f64, k: f64) -> bool {
        (self.estimate - value).abs() <= k * self.stderr
    }
}

/// Two-sample Kolmogorov–Smirnov result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsResult {
    pub statistic: f64,
    pub n: usize,
    pub m: usize,
    /// Asymptotic 99% critical value `c(0.01)·√((n+m)/(nm))`.
    pub critical: f64,
    pub exceeds_critical: bool,
}

/// `c(α) = √(-ln(α/2)/2)` for α = 0.01.
pub fn ks_critical_coefficient() -> f64 {
    (-0.5 * (0.005_f64).ln()).sqrt()
}

/// Sup distance between the two empirical CDFs, by a sorted merge.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<KsResult> {
    if a.is_empty() || b.is_empty() {
        return Err(LabError::Domain("KS test needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(LabError::Domain("KS test samples contain NaN".into()));
    }
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_by(f64::total_cmp);
    ys.sort_by(f64::total_cmp);
    let (n, m) = (xs.len(), ys.len());
    let (mut i, mut j) = (0, 0);
    let mut stat: f64 = 0.0;
    while i < n && j < m {
        let v = if xs[i] <= ys[j] { xs[i] } else { ys[j] };
        while i < n && xs[i] <= v {
            i += 1;
        }
        while j < m && ys[j] <= v {
            j += 1;
        }
        stat = stat.max((i as f64 / n as f64 - j as f64 / m as f64).abs());
    }
    let critical = ks_critical_coefficient() * ((n + m) as f64 / (n * m) as f64).sqrt();
    Ok(KsResult {
        statistic: stat,
        n,
        m,
        critical,
        exceeds_critical: stat > critical,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    if points.len() < 2 {
        return Err(LabError::Precondition("slope needs at least two points".into()));
    }
    if points.iter().any(|(x, y)| !(*x > 0.0 && *y > 0.0)) {
        return Err(LabError::Domain(
            "log-log regression needs positive coordinates".into(),
        ));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|(x, _)| x.ln()).sum::<f64>() / n;
    let my = points.iter().map(|(_, y)| y.ln()).sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in points {
        sxy += (x.ln() - mx) * (y.ln() - my);
        sxx += (x.ln() - mx).powi(2);
    }
    if sxx == 0.0 {
        return Err(LabError::Domain("all abscissae coincide".into()));
    }
    Ok(sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ks_quadratic(a: &[f64], b: &[f64]) -> f64 {
        let ecdf = |s: &[f64], v: f64| s.iter().filter(|x| **x <= v).count() as f64 / s.len() as f64;
        a.iter()
            .chain(b)
            .map(|&v| (ecdf(a, v) - ecdf(b, v)).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn identical_samples_have_zero_distance() {
        let a = [0.3, -1.0, 2.0, 0.3];
        assert_eq!(ks_two_sample(&a, &a).unwrap().statistic, 0.0);
    }

    #[test]
    fn disjoint_point_masses() {
        let r = ks_two_sample(&[0.0], &[1.0]).unwrap();
        assert_eq!(r.statistic, 1.0);
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(matches!(ks_two_sample(&[], &[1.0]), Err(LabError::Domain(_))));
    }

    #[test]
    fn critical_coefficient_value() {
        assert!((ks_critical_coefficient() - 1.627_624).abs() < 1e-6);
    }

    #[test]
    fn mc_estimate_formulas() {
        let e = McEstimate::from_samples(&[1.0, 0.0, 1.0, 0.0], 9).unwrap();
        assert_eq!(e.estimate, 0.5);
        let sd = (1.0_f64 / 3.0).sqrt();
        assert!((e.stderr - sd / 2.0).abs() < 1e-15);
        let b = McEstimate::from_successes(2, 4, 9).unwrap();
        assert!((b.stderr - e.stderr).abs() < 1e-15);
        assert!(McEstimate::from_samples(&[1.0], 0).is_err());
    }

    #[test]
    fn slope_of_power_law() {
        let pts: Vec<(f64, f64)> = (1..10).map(|k| (k as f64, 3.0 * (k as f64).powf(-1.5))).collect();
        assert!((loglog_slope(&pts).unwrap() + 1.5).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn ks_matches_quadratic_reference(
            a in prop::collection::vec(-5i32..5, 1..200),
            b in prop::collection::vec(-5i32..5, 1..200),
            scale in 0.1f64..3.0,
        ) {
            // Small integer support forces plenty of ties.
            let a: Vec<f64> = a.into_iter().map(|v| v as f64 * scale).collect();
            let b: Vec<f64> = b.into_iter().map(|v| v as f64 * scale).collect();
            let fast = ks_two_sample(&a, &b).unwrap().statistic;
            prop_assert!((fast - ks_quadratic(&a, &b)).abs() < 1e-12);
        }

        #[test]
        fn ks_matches_reference_on_continuous_data(
            a in prop::collection::vec(-1e3f64..1e3, 1..200),
            b in prop::collection::vec(-1e3f64..1e3, 1..200),
        ) {
            let fast = ks_two_sample(&a, &b).unwrap().statistic;
            prop_assert!((fast - ks_quadratic(&a, &b)).abs() < 1e-12);
        }
    }
}
