//! Negative log-likelihood and overlap losses with analytic gradients.

use crate::error::{CbpError, Result};
use crate::gmm::TrajectoryGmm;
use crate::model::predictor::{backward, forward, ForwardCache, HeadGrads, PredictorParams};
use crate::model::ConditionalQuery;
use crate::sim::Scene;
use crate::trajectory::Trajectory;

const LN_2PI: f64 = 1.837877066409345_f64;

/// Hard mode assignment: the mode whose mean trajectory has the smallest
/// summed per-step L2 distance to the ground truth; ties go to the lower
/// index.
pub fn closest_mode(cache: &ForwardCache, t_future: usize, gt: &Trajectory) -> usize {
    let k_modes = cache.probs.len();
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for k in 0..k_modes {
        let mut dist = 0.0;
        for (t, s) in gt.states().iter().enumerate() {
            let m = cache.means[k * t_future + t];
            dist += ((m[0] - s[0]).powi(2) + (m[1] - s[1]).powi(2)).sqrt();
        }
        if dist < best_dist {
            best_dist = dist;
            best = k;
        }
    }
    best
}

/// NLL of the ground truth under the selected mode, plus head gradients:
/// `-(log pi_k* + sum_t log N(gt_t | mu_t^k*, Sigma_t^k*))`.
pub fn nll_terms(cache: &ForwardCache, t_future: usize, gt: &Trajectory, head: &mut HeadGrads, scale: f64) -> f64 {
    let k_star = closest_mode(cache, t_future, gt);
    let mut loss = -cache.probs[k_star].ln();
    // d(-log pi_k*)/d logits = probs - onehot(k*)
    for (i, p) in cache.probs.iter().enumerate() {
        head.d_logits[i] += scale * (p - if i == k_star { 1.0 } else { 0.0 });
    }
    for (t, s) in gt.states().iter().enumerate() {
        let idx = k_star * t_future + t;
        let mean = cache.means[idx];
        let ls = &cache.log_sigma[idx * 2..idx * 2 + 2];
        for axis in 0..2 {
            let inv_var = (-2.0 * ls[axis]).exp();
            let d = mean[axis] - s[axis];
            loss += 0.5 * LN_2PI + ls[axis] + 0.5 * d * d * inv_var;
            head.d_means[idx][axis] += scale * d * inv_var;
            head.d_log_sigma[idx * 2 + axis] += scale * (1.0 - d * d * inv_var);
        }
    }
    loss
}

/// Loss and gradients of the pairwise overlap penalty
/// `sum_i sum_j pi_a_i pi_b_j max_t exp(-||mu_a_it - mu_b_jt||^2 / alpha)`.
#[derive(Clone, Debug)]
pub struct OverlapGrads {
    pub loss: f64,
    /// Gradients with respect to the two mean sets, indexed `k * T + t`.
    pub d_means_a: Vec<[f64; 2]>,
    pub d_means_b: Vec<[f64; 2]>,
    /// Gradients with respect to the mode probabilities.
    pub d_prob_a: Vec<f64>,
    pub d_prob_b: Vec<f64>,
}

pub fn overlap_loss(dist_a: &TrajectoryGmm, dist_b: &TrajectoryGmm, alpha: f64) -> Result<OverlapGrads> {
    if dist_a.horizon() != dist_b.horizon() {
        return Err(CbpError::Dimension(format!(
            "overlap horizons {} vs {}",
            dist_a.horizon(),
            dist_b.horizon()
        )));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(CbpError::Argument(format!("overlap alpha must be positive, got {alpha}")));
    }
    let t_len = dist_a.horizon();
    let mut out = OverlapGrads {
        loss: 0.0,
        d_means_a: vec![[0.0; 2]; dist_a.mode_count() * t_len],
        d_means_b: vec![[0.0; 2]; dist_b.mode_count() * t_len],
        d_prob_a: vec![0.0; dist_a.mode_count()],
        d_prob_b: vec![0.0; dist_b.mode_count()],
    };
    for (i, mode_a) in dist_a.modes().iter().enumerate() {
        for (j, mode_b) in dist_b.modes().iter().enumerate() {
            // Hard max over t: the step with the smallest squared distance;
            // ties go to the lowest t.
            let mut best_t = 0usize;
            let mut best_d2 = f64::INFINITY;
            for t in 0..t_len {
                let ma = mode_a.waypoints[t].mean;
                let mb = mode_b.waypoints[t].mean;
                let d2 = (ma[0] - mb[0]).powi(2) + (ma[1] - mb[1]).powi(2);
                if d2 < best_d2 {
                    best_d2 = d2;
                    best_t = t;
                }
            }
            let v = (-best_d2 / alpha).exp();
            let w = mode_a.prob * mode_b.prob;
            out.loss += w * v;
            out.d_prob_a[i] += mode_b.prob * v;
            out.d_prob_b[j] += mode_a.prob * v;
            let ma = mode_a.waypoints[best_t].mean;
            let mb = mode_b.waypoints[best_t].mean;
            let coeff = w * v * (-2.0 / alpha);
            for axis in 0..2 {
                let diff = ma[axis] - mb[axis];
                out.d_means_a[i * t_len + best_t][axis] += coeff * diff;
                out.d_means_b[j * t_len + best_t][axis] -= coeff * diff;
            }
        }
    }
    Ok(out)
}

/// Spec-level NLL operation: forward, loss, and parameter-shaped gradients
/// in one call.
pub fn nll_loss(
    params: &PredictorParams,
    scene: &Scene,
    target_id: u32,
    query: &ConditionalQuery,
    gt: &Trajectory,
) -> Result<(f64, PredictorParams)> {
    if gt.horizon() != params.config.t_future {
        return Err(CbpError::Dimension(format!(
            "ground truth horizon {} vs model t_future {}",
            gt.horizon(),
            params.config.t_future
        )));
    }
    let (_, cache) = forward(params, scene, target_id, query)?;
    let mut head = HeadGrads::zeros(&params.config);
    let loss = nll_terms(&cache, params.config.t_future, gt, &mut head, 1.0);
    let mut grads = params.zeros_like();
    backward(params, &cache, &head, &mut grads);
    Ok((loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gmm::{GmmMode, WaypointGaussian};
    use crate::model::predictor::ModelConfig;
    use crate::sim::{self, SimConfig};
    use approx::assert_relative_eq;

    fn constant_gmm(offsets: &[[f64; 2]], probs: &[f64], t: usize) -> TrajectoryGmm {
        let modes = offsets
            .iter()
            .zip(probs)
            .map(|(&o, &p)| GmmMode {
                prob: p,
                waypoints: (0..t).map(|_| WaypointGaussian::isotropic(o, 1.0).unwrap()).collect(),
            })
            .collect();
        TrajectoryGmm::new(modes, 0.2).unwrap()
    }

    #[test]
    fn overlap_of_identical_single_modes_is_one() {
        let a = constant_gmm(&[[1.0, 2.0]], &[1.0], 4);
        let out = overlap_loss(&a, &a.clone(), 1.0).unwrap();
        assert_relative_eq!(out.loss, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn overlap_decays_exponentially_with_gap() {
        let a = constant_gmm(&[[0.0, 0.0]], &[1.0], 3);
        let b = constant_gmm(&[[10.0, 0.0]], &[1.0], 3);
        let out = overlap_loss(&a, &b, 1.0).unwrap();
        assert_relative_eq!(out.loss, (-100.0f64).exp(), epsilon = 1e-40);
    }

    #[test]
    fn overlap_matches_brute_force_double_sum() {
        // Independent recomputation over (i, j, t), K=2 vs K=1.
        let a = constant_gmm(&[[0.0, 0.0], [3.0, 1.0]], &[0.4, 0.6], 3);
        let b = constant_gmm(&[[1.0, 0.5]], &[1.0], 3);
        let alpha = 2.0;
        let mut expect = 0.0;
        for (i, ma) in a.modes().iter().enumerate() {
            for mb in b.modes() {
                let mut best = f64::NEG_INFINITY;
                for t in 0..3 {
                    let d2 = (ma.waypoints[t].mean[0] - mb.waypoints[t].mean[0]).powi(2)
                        + (ma.waypoints[t].mean[1] - mb.waypoints[t].mean[1]).powi(2);
                    best = best.max((-d2 / alpha).exp());
                }
                expect += ma.prob * mb.prob * best;
                let _ = i;
            }
        }
        let out = overlap_loss(&a, &b, alpha).unwrap();
        assert_relative_eq!(out.loss, expect, epsilon = 1e-12);
        assert!(out.loss > 0.0 && out.loss <= 1.0);
    }

    #[test]
    fn overlap_horizon_mismatch_is_dimension_error() {
        let a = constant_gmm(&[[0.0, 0.0]], &[1.0], 3);
        let b = constant_gmm(&[[0.0, 0.0]], &[1.0], 4);
        assert!(matches!(overlap_loss(&a, &b, 1.0), Err(CbpError::Dimension(_))));
    }

    #[test]
    fn nll_at_the_mean_with_unit_sigma() {
        // One mode, prediction mean equals ground truth, sigma = 1:
        // loss = T log(2 pi).
        let sim_cfg = SimConfig { n_scenes: 1, ..SimConfig::default() };
        let scene = sim::generate_dataset(&sim_cfg, 5).unwrap().remove(0);
        let model_cfg = ModelConfig {
            k_modes: 1,
            h_past: sim_cfg.h_past,
            t_future: sim_cfg.t_future,
            dt: sim_cfg.dt,
            ..ModelConfig::default()
        };
        let params = PredictorParams::init(model_cfg, 2).unwrap();
        let target = scene.agents[1].agent_id;
        let (gmm, _) = forward(&params, &scene, target, &ConditionalQuery::marginal()).unwrap();
        // Use the model's own mean trajectory as ground truth and force
        // sigma = 1 by construction of a synthetic cache path: instead,
        // evaluate through nll_loss with a params copy whose sigma biases
        // give exactly sigma = 1 and whose prediction we read back.
        let mut p1 = params.clone();
        // Pin the sigma head so the clamped log-sigma output is exactly 0.
        use crate::model::predictor::{SIGMA_HEAD_SCALE, SIGMA_SHIFT};
        for b in p1.head_log_sigma.b.iter_mut() {
            *b = -SIGMA_SHIFT / SIGMA_HEAD_SCALE;
        }
        for w in p1.head_log_sigma.w.data.iter_mut() {
            *w = 0.0;
        }
        let (gmm1, _) = forward(&p1, &scene, target, &ConditionalQuery::marginal()).unwrap();
        let gt = gmm1.mode_mean_trajectory(0).unwrap();
        let (loss, _) = nll_loss(&p1, &scene, target, &ConditionalQuery::marginal(), &gt).unwrap();
        let t = sim_cfg.t_future as f64;
        assert_relative_eq!(loss, t * LN_2PI, epsilon = 1e-9);
        drop(gmm);
    }

    #[test]
    fn mode_selection_uses_summed_distance() {
        // Two constant-mean modes; ground truth nearer mode 0's endpoint.
        let sim_cfg = SimConfig { n_scenes: 1, ..SimConfig::default() };
        let scene = sim::generate_dataset(&sim_cfg, 5).unwrap().remove(0);
        let model_cfg = ModelConfig {
            k_modes: 2,
            h_past: sim_cfg.h_past,
            t_future: sim_cfg.t_future,
            dt: sim_cfg.dt,
            ..ModelConfig::default()
        };
        let params = PredictorParams::init(model_cfg, 4).unwrap();
        let target = scene.agents[1].agent_id;
        let (_, cache) = forward(&params, &scene, target, &ConditionalQuery::marginal()).unwrap();
        // Ground truth exactly on mode 1's means: mode 1 must be selected.
        let t_future = params.config.t_future;
        let gt = Trajectory::new(
            (0..t_future).map(|t| cache.means[t_future + t]).collect(),
            params.config.dt,
        )
        .unwrap();
        assert_eq!(closest_mode(&cache, t_future, &gt), 1);
    }
}
