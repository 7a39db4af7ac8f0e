//! Displacement-error metrics over predicted trajectory mixtures.
//!
//! `wade6` is the probability-weighted average displacement error over the
//! six most likely modes; `min_ade6` is the best-mode average displacement
//! error over the same set. By default the top-6 probabilities are
//! renormalized to sum to one; [`TopWeighting::Raw`] keeps the literal
//! mixture weights instead.

use crate::error::{CbpError, Result};
use crate::gmm::TrajectoryGmm;
use crate::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

/// Number of modes the displacement metrics consider.
pub const TOP_MODES: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TopWeighting {
    /// Renormalize the selected probabilities to sum to one (default).
    Renormalized,
    /// Use the literal mixture probabilities of the selected modes.
    Raw,
}

fn top_modes(dist: &TrajectoryGmm) -> Result<Vec<(f64, usize)>> {
    dist.most_likely_modes(TOP_MODES.min(dist.mode_count()))
}

fn mode_ade(dist: &TrajectoryGmm, k: usize, gt: &Trajectory) -> f64 {
    let mode = &dist.modes()[k];
    let t = gt.horizon() as f64;
    mode.waypoints
        .iter()
        .zip(gt.states())
        .map(|(w, s)| ((w.mean[0] - s[0]).powi(2) + (w.mean[1] - s[1]).powi(2)).sqrt())
        .sum::<f64>()
        / t
}

fn check_horizon(dist: &TrajectoryGmm, gt: &Trajectory) -> Result<()> {
    if dist.horizon() != gt.horizon() {
        return Err(CbpError::Dimension(format!(
            "mixture horizon {} vs ground-truth horizon {}",
            dist.horizon(),
            gt.horizon()
        )));
    }
    Ok(())
}

/// Weighted average displacement error over the top-6 modes.
pub fn wade6(dist: &TrajectoryGmm, gt: &Trajectory) -> Result<f64> {
    wade6_with(dist, gt, TopWeighting::Renormalized)
}

pub fn wade6_with(dist: &TrajectoryGmm, gt: &Trajectory, weighting: TopWeighting) -> Result<f64> {
    check_horizon(dist, gt)?;
    let top = top_modes(dist)?;
    let total: f64 = top.iter().map(|(p, _)| p).sum();
    let mut acc = 0.0;
    for &(prob, k) in &top {
        let w = match weighting {
            TopWeighting::Renormalized => prob / total,
            TopWeighting::Raw => prob,
        };
        acc += w * mode_ade(dist, k, gt);
    }
    Ok(acc)
}

/// Minimum average displacement error over the top-6 modes.
pub fn min_ade6(dist: &TrajectoryGmm, gt: &Trajectory) -> Result<f64> {
    check_horizon(dist, gt)?;
    let top = top_modes(dist)?;
    Ok(top
        .iter()
        .map(|&(_, k)| mode_ade(dist, k, gt))
        .fold(f64::INFINITY, f64::min))
}

/// Error reduction from conditioning: `wade6(marg) - wade6(cond)`.
/// Positive when the conditional prediction is more accurate.
pub fn delta_wade(marg: &TrajectoryGmm, cond: &TrajectoryGmm, gt: &Trajectory) -> Result<f64> {
    Ok(wade6(marg, gt)? - wade6(cond, gt)?)
}

/// Mean, standard error and decile boundaries of a metric sample.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric_name: String,
    pub mean: f64,
    /// Sample standard deviation / sqrt(count); 0 for a single value.
    pub stderr: f64,
    pub count: usize,
    /// (percentile, value) at {10, 20, 30, 40, 60, 70, 80, 90}.
    pub deciles: Vec<(u8, f64)>,
}

/// Percentile by linear interpolation between order statistics:
/// position `(n - 1) * q` in the sorted sample, fractional part
/// interpolated between neighbours.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let frac = pos - lo as f64;
    if lo + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

pub fn aggregate(values: &[f64], name: &str) -> Result<MetricSummary> {
    if values.is_empty() {
        return Err(CbpError::Argument(format!("aggregate({name}): empty input")));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let stderr = if values.len() > 1 {
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("metric values are finite"));
    let deciles = [10u8, 20, 30, 40, 60, 70, 80, 90]
        .iter()
        .map(|&p| (p, percentile(&sorted, p as f64 / 100.0)))
        .collect();
    Ok(MetricSummary {
        metric_name: name.to_string(),
        mean,
        stderr,
        count: values.len(),
        deciles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{GmmMode, WaypointGaussian};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn constant_mode(offset: [f64; 2], prob: f64, t: usize) -> GmmMode {
        GmmMode {
            prob,
            waypoints: (0..t)
                .map(|_| WaypointGaussian::isotropic(offset, 1.0).unwrap())
                .collect(),
        }
    }

    fn gt(t: usize) -> Trajectory {
        Trajectory::new(vec![[0.0, 0.0]; t], 0.2).unwrap()
    }

    #[test]
    fn constant_offset_wade() {
        let d = TrajectoryGmm::new(vec![constant_mode([3.0, 4.0], 1.0, 5)], 0.2).unwrap();
        assert_relative_eq!(wade6(&d, &gt(5)).unwrap(), 5.0, epsilon = 1e-12);
        assert_relative_eq!(min_ade6(&d, &gt(5)).unwrap(), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn probability_weighted_average() {
        let d = TrajectoryGmm::new(
            vec![constant_mode([0.0, 0.0], 0.5, 4), constant_mode([10.0, 0.0], 0.5, 4)],
            0.2,
        )
        .unwrap();
        assert_relative_eq!(wade6(&d, &gt(4)).unwrap(), 5.0, epsilon = 1e-12);
        assert_relative_eq!(min_ade6(&d, &gt(4)).unwrap(), 0.0, epsilon = 1e-12);
    }

    // Independent brute-force recomputation, no top-6 shortcuts shared with
    // the implementation.
    fn brute_force_wade(dist: &TrajectoryGmm, gt: &Trajectory, renorm: bool) -> f64 {
        let mut idx: Vec<usize> = (0..dist.mode_count()).collect();
        idx.sort_by(|&a, &b| {
            dist.modes()[b]
                .prob
                .partial_cmp(&dist.modes()[a].prob)
                .unwrap()
                .then(a.cmp(&b))
        });
        idx.truncate(6);
        let total: f64 = if renorm {
            idx.iter().map(|&k| dist.modes()[k].prob).sum()
        } else {
            1.0
        };
        let t = gt.horizon() as f64;
        let mut acc = 0.0;
        for &k in &idx {
            let mut ade = 0.0;
            for (w, s) in dist.modes()[k].waypoints.iter().zip(gt.states()) {
                ade += ((w.mean[0] - s[0]).powi(2) + (w.mean[1] - s[1]).powi(2)).sqrt();
            }
            acc += dist.modes()[k].prob / total * ade / t;
        }
        acc
    }

    fn random_case(seed: u64, k: usize, t: usize) -> (TrajectoryGmm, Trajectory) {
        let mut rng = crate::rng::rng_from(seed);
        let logits: Vec<f64> = (0..k).map(|_| rng.random_range(-1.5..1.5)).collect();
        let wps: Vec<Vec<WaypointGaussian>> = (0..k)
            .map(|_| {
                (0..t)
                    .map(|_| {
                        WaypointGaussian::new(
                            [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)],
                            [rng.random_range(0.1..2.0), rng.random_range(0.1..2.0)],
                        )
                        .unwrap()
                    })
                    .collect()
            })
            .collect();
        let d = TrajectoryGmm::from_logits(&logits, wps, 0.2).unwrap();
        let gt = Trajectory::new(
            (0..t)
                .map(|_| [rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0)])
                .collect(),
            0.2,
        )
        .unwrap();
        (d, gt)
    }

    #[test]
    fn matches_brute_force_on_random_eight_mode_case() {
        for seed in 0..5 {
            let (d, gt) = random_case(seed, 8, 6);
            assert_relative_eq!(
                wade6(&d, &gt).unwrap(),
                brute_force_wade(&d, &gt, true),
                epsilon = 1e-10
            );
            assert_relative_eq!(
                wade6_with(&d, &gt, TopWeighting::Raw).unwrap(),
                brute_force_wade(&d, &gt, false),
                epsilon = 1e-10
            );
            let brute_min = (0..d.mode_count())
                .map(|k| {
                    d.modes()[k]
                        .waypoints
                        .iter()
                        .zip(gt.states())
                        .map(|(w, s)| {
                            ((w.mean[0] - s[0]).powi(2) + (w.mean[1] - s[1]).powi(2)).sqrt()
                        })
                        .sum::<f64>()
                        / gt.horizon() as f64
                })
                .collect::<Vec<_>>();
            let mut order: Vec<usize> = (0..d.mode_count()).collect();
            order.sort_by(|&a, &b| {
                d.modes()[b].prob.partial_cmp(&d.modes()[a].prob).unwrap().then(a.cmp(&b))
            });
            let expect = order[..6].iter().map(|&k| brute_min[k]).fold(f64::INFINITY, f64::min);
            assert_relative_eq!(min_ade6(&d, &gt).unwrap(), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn min_ade_never_exceeds_wade() {
        for seed in 10..30 {
            let (d, gt) = random_case(seed, 7, 5);
            assert!(min_ade6(&d, &gt).unwrap() <= wade6(&d, &gt).unwrap() + 1e-12);
        }
    }

    #[test]
    fn raw_weighting_with_few_modes_equals_full_weighted_ade() {
        let (d, gt) = random_case(99, 5, 4);
        let full: f64 = d
            .modes()
            .iter()
            .enumerate()
            .map(|(k, m)| m.prob * super::mode_ade(&d, k, &gt))
            .sum();
        assert_relative_eq!(
            wade6_with(&d, &gt, TopWeighting::Raw).unwrap(),
            full,
            epsilon = 1e-12
        );
    }

    #[test]
    fn delta_wade_basics() {
        let marg = TrajectoryGmm::new(vec![constant_mode([5.0, 0.0], 1.0, 3)], 0.2).unwrap();
        let cond = TrajectoryGmm::new(vec![constant_mode([1.0, 0.0], 1.0, 3)], 0.2).unwrap();
        let g = gt(3);
        assert_relative_eq!(delta_wade(&marg, &cond, &g).unwrap(), 4.0, epsilon = 1e-12);
        assert_relative_eq!(delta_wade(&marg, &marg, &g).unwrap(), 0.0, epsilon = 1e-12);
        assert_relative_eq!(
            delta_wade(&cond, &marg, &g).unwrap(),
            -delta_wade(&marg, &cond, &g).unwrap(),
            epsilon = 1e-12
        );
    }

    #[test]
    fn translation_invariance() {
        let (d, gt) = random_case(3, 6, 5);
        let off = [13.5, -4.25];
        let d2 = d.translated(off);
        let gt2 = gt.translated(off);
        assert_relative_eq!(wade6(&d, &gt).unwrap(), wade6(&d2, &gt2).unwrap(), epsilon = 1e-9);
        assert_relative_eq!(
            min_ade6(&d, &gt).unwrap(),
            min_ade6(&d2, &gt2).unwrap(),
            epsilon = 1e-9
        );
    }

    #[test]
    fn aggregate_mean_and_stderr() {
        let s = aggregate(&[1.0, 1.0, 1.0, 1.0], "const").unwrap();
        assert_relative_eq!(s.mean, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.stderr, 0.0, epsilon = 1e-12);
        assert_eq!(s.count, 4);

        // Sample stddev of (0, 2) is sqrt(2); stderr = sqrt(2)/sqrt(2) = 1.
        let s = aggregate(&[0.0, 2.0], "pair").unwrap();
        assert_relative_eq!(s.mean, 1.0, epsilon = 1e-12);
        assert_relative_eq!(s.stderr, 1.0, epsilon = 1e-12);

        assert!(aggregate(&[], "empty").is_err());
    }

    #[test]
    fn decile_boundaries_use_linear_interpolation() {
        // Hand-applied rule on 1..=100: position 99 * 0.1 = 9.9 between the
        // 10th and 11th order statistics -> 10.9.
        let values: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let s = aggregate(&values, "range").unwrap();
        let p10 = s.deciles.iter().find(|(p, _)| *p == 10).unwrap().1;
        assert_relative_eq!(p10, 10.9, epsilon = 1e-12);
        let p90 = s.deciles.iter().find(|(p, _)| *p == 90).unwrap().1;
        assert_relative_eq!(p90, 90.1, epsilon = 1e-12);
    }
}
