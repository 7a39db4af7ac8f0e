//! Shared helpers for integration tests: finite-difference gradient
//! oracles, tiny randomized configurations, and rank statistics. Nothing
//! here reuses the analytic gradient path it is checking.

#![allow(dead_code)]

use cbp_core::model::predictor::{forward, ModelConfig, PredictorParams};
use cbp_core::model::{scene_training_loss, ConditionalQuery};
use cbp_core::sim::{self, Scene, SimConfig};
use rand::Rng;

pub struct GradCase {
    pub scene: Scene,
    pub params: PredictorParams,
    pub query_id: u32,
    pub provide_query: bool,
    pub overlap_weight: f64,
    pub overlap_alpha: f64,
}

/// A small randomized scene + model for gradient checks.
pub fn grad_case(seed: u64) -> GradCase {
    let mut rng = cbp_core::rng::rng_from(seed.wrapping_mul(0x9e37) ^ 0x51);
    let sim_cfg = SimConfig {
        n_scenes: 1,
        h_past: 3,
        t_future: 5,
        dt: 0.2,
        max_distractors: 1,
        ..SimConfig::default()
    };
    let scene = sim::generate_dataset(&sim_cfg, seed).unwrap().remove(0);
    let model_cfg = ModelConfig {
        k_modes: rng.random_range(2..=3),
        poly_degree: rng.random_range(1..=2),
        h_past: sim_cfg.h_past,
        t_future: sim_cfg.t_future,
        dt: sim_cfg.dt,
        enc_width: 6,
        trunk_width: 10,
        ..ModelConfig::default()
    };
    let params = PredictorParams::init(model_cfg, seed ^ 0xabcd).unwrap();
    let qi = rng.random_range(0..scene.agents.len());
    let query_id = scene.agents[qi].agent_id;
    let provide_query = rng.random::<f64>() < 0.7;
    GradCase {
        scene,
        params,
        query_id,
        provide_query,
        overlap_weight: 0.1,
        overlap_alpha: 2.0,
    }
}

pub fn case_loss(case: &GradCase, params: &PredictorParams) -> f64 {
    scene_training_loss(
        params,
        &case.scene,
        case.query_id,
        case.provide_query,
        case.overlap_weight,
        case.overlap_alpha,
        false,
    )
    .unwrap()
    .0
}

pub fn case_grads(case: &GradCase) -> Vec<f64> {
    scene_training_loss(
        &case.params,
        &case.scene,
        case.query_id,
        case.provide_query,
        case.overlap_weight,
        case.overlap_alpha,
        true,
    )
    .unwrap()
    .1
    .unwrap()
    .flatten()
}

/// Central finite differences over every parameter coordinate.
pub fn finite_diff_grads(case: &GradCase, eps: f64) -> Vec<f64> {
    let theta = case.params.flatten();
    let mut probe = case.params.clone();
    let mut out = Vec::with_capacity(theta.len());
    let mut work = theta.clone();
    for i in 0..theta.len() {
        work[i] = theta[i] + eps;
        probe.load_flat(&work).unwrap();
        let up = case_loss(case, &probe);
        work[i] = theta[i] - eps;
        probe.load_flat(&work).unwrap();
        let down = case_loss(case, &probe);
        work[i] = theta[i];
        out.push((up - down) / (2.0 * eps));
    }
    out
}

/// Relative error with a floor, the standard gradient-check metric.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

/// Reject configurations where a hard choice (closest mode, overlap
/// argmax-t, neighbor max-pool) sits within flipping distance of a
/// perturbation, which would poison finite differences at a kink.
pub fn margins_ok(case: &GradCase) -> bool {
    let params = &case.params;
    let scene = &case.scene;
    let query_agent = scene.agent(case.query_id).unwrap();
    let query = if case.provide_query {
        ConditionalQuery::ground_truth(query_agent)
    } else {
        ConditionalQuery::marginal()
    };
    let t_future = params.config.t_future;
    let targets: Vec<u32> = scene
        .agents
        .iter()
        .map(|a| a.agent_id)
        .filter(|id| *id != case.query_id)
        .collect();

    let mut outputs = Vec::new();
    for &id in &targets {
        let (gmm, cache) = forward(params, scene, id, &query).unwrap();

        // Closest-mode margin.
        let gt = &scene.agent(id).unwrap().future;
        let mut dists: Vec<f64> = (0..params.config.k_modes)
            .map(|k| {
                gt.states()
                    .iter()
                    .enumerate()
                    .map(|(t, s)| {
                        let m = cache.means[k * t_future + t];
                        ((m[0] - s[0]).powi(2) + (m[1] - s[1]).powi(2)).sqrt()
                    })
                    .sum()
            })
            .collect();
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if dists.len() >= 2 && (dists[1] - dists[0]).abs() < 1e-3 {
            return false;
        }

        // Max-pool winner margins.
        if cache.neigh_caches.len() >= 2 {
            let embs: Vec<Vec<f64>> = cache
                .neigh_caches
                .iter()
                .map(|c| c.outputs.last().unwrap().clone())
                .collect();
            for dim in 0..embs[0].len() {
                let mut vals: Vec<f64> = embs.iter().map(|e| e[dim]).collect();
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if vals.len() >= 2 && (vals[0] - vals[1]).abs() < 1e-6 {
                    return false;
                }
            }
        }

        // Sigma must sit strictly inside the clamp range: at an active
        // clamp the analytic subgradient and finite differences disagree.
        for &raw in &cache.log_sigma_raw {
            if raw <= params.config.min_log_sigma + 1e-4
                || raw >= params.config.max_log_sigma - 1e-4
            {
                return false;
            }
        }
        outputs.push(gmm);
    }

    // Overlap argmax-t margins.
    for i in 0..outputs.len() {
        for j in (i + 1)..outputs.len() {
            for mode_a in outputs[i].modes() {
                for mode_b in outputs[j].modes() {
                    let mut d2: Vec<f64> = (0..t_future)
                        .map(|t| {
                            let a = mode_a.waypoints[t].mean;
                            let b = mode_b.waypoints[t].mean;
                            (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
                        })
                        .collect();
                    d2.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    if d2.len() >= 2 && (d2[1] - d2[0]).abs() < 1e-6 {
                        return false;
                    }
                }
            }
        }
    }
    true
}

// ---- rank statistics -------------------------------------------------------

/// Ranks with average ties.
fn ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap());
    let mut out = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            out[idx] = avg;
        }
        i = j + 1;
    }
    out
}

pub fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    sxy / (sxx.sqrt() * syy.sqrt())
}

pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

pub fn mean_and_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
