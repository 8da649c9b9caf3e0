//! Two independent 10⁴-sample draws from the same Kolmogorov marginal should
//! trip the 99% KS flag in about 1% of seeds.

use hypolab::rng::{stream_id, GaussianStream};
use hypolab::stats::ks_two_sample;

#[test]
fn same_marginal_rarely_flags() {
    // X²_1 from (x1, x2) = (0.3, -0.2): N(0.1, 1/3).
    let draw = |seed: u64, task: u64| -> Vec<f64> {
        let mut g = GaussianStream::new(seed, stream_id(task, 0));
        (0..10_000).map(|_| 0.1 + g.normal() / 3.0_f64.sqrt()).collect()
    };
    let seeds = 400;
    let flagged = (0..seeds)
        .filter(|&s| ks_two_sample(&draw(s, 0), &draw(s, 1)).unwrap().exceeds_critical)
        .count();
    assert!(flagged * 100 <= seeds as usize, "{flagged} of {seeds} seeds flagged");
}
