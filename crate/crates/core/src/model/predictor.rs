//! The conditional behavior prediction model.
//!
//! Encoders (past track, max-pooled neighbors, conditional query) feed a
//! shared trunk; three linear heads emit mode logits, polynomial
//! coefficients for the mode mean trajectories, and per-step log sigmas.
//! Mean trajectories are degree-D polynomials in time, evaluated on a
//! horizon-normalized time axis for conditioning; sigmas are clamped in
//! log space.

use crate::error::{CbpError, Result};
use crate::gmm::{GmmMode, TrajectoryGmm, WaypointGaussian, softmax, STD_FLOOR};
use crate::model::features::{build_features, ConditionalQuery, Features};
use crate::model::mlp::{Dense, Mlp, MlpCache};
use crate::rng;
use crate::sim::Scene;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub k_modes: usize,
    pub poly_degree: usize,
    pub h_past: usize,
    pub t_future: usize,
    pub dt: f64,
    pub enc_width: usize,
    pub trunk_width: usize,
    pub min_log_sigma: f64,
    pub max_log_sigma: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            k_modes: 6,
            poly_degree: 3,
            h_past: 10,
            t_future: 30,
            dt: 0.2,
            enc_width: 64,
            trunk_width: 128,
            min_log_sigma: (1e-3f64).ln(),
            max_log_sigma: 50f64.ln(),
        }
    }
}

/// Fixed output gain of the log-sigma head. The sigma head feeds T*K*2
/// summed log-density terms, so its loss curvature is far stiffer than the
/// other heads'; the gain equalizes conditioning for plain SGD.
pub const SIGMA_HEAD_SCALE: f64 = 0.25;

/// Constant shift of the log-sigma head: predictions start at sigma = 8 m.
pub const SIGMA_SHIFT: f64 = 2.0794415416798357; // ln 8

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_modes == 0 {
            return Err(CbpError::config("model.k_modes", "must be >= 1"));
        }
        if self.poly_degree > 10 {
            return Err(CbpError::config("model.poly_degree", "must be <= 10"));
        }
        if self.h_past == 0 || self.t_future == 0 {
            return Err(CbpError::config("model.horizons", "must be >= 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CbpError::config("model.dt", "must be positive"));
        }
        if self.enc_width == 0 || self.trunk_width == 0 {
            return Err(CbpError::config("model.widths", "must be >= 1"));
        }
        if self.min_log_sigma >= self.max_log_sigma {
            return Err(CbpError::config("model.log_sigma", "min must be below max"));
        }
        if self.min_log_sigma < STD_FLOOR.ln() - 1e-12 {
            return Err(CbpError::config(
                "model.min_log_sigma",
                "below the mixture std floor",
            ));
        }
        Ok(())
    }

    pub fn past_dim(&self) -> usize {
        4 * self.h_past
    }

    pub fn neighbor_dim(&self) -> usize {
        4 * self.h_past + 1
    }

    pub fn query_dim(&self) -> usize {
        2 * self.t_future + 2
    }

    pub fn coef_dim(&self) -> usize {
        self.k_modes * 2 * (self.poly_degree + 1)
    }

    pub fn sigma_dim(&self) -> usize {
        self.k_modes * self.t_future * 2
    }

    /// Normalized time basis `u_t^d` with `u_t = (t+1)/T`, one row per
    /// future step. A polynomial on this axis is the same function family
    /// as one in seconds, with better-conditioned coefficients.
    pub fn time_basis(&self) -> Vec<Vec<f64>> {
        (0..self.t_future)
            .map(|t| {
                let u = (t + 1) as f64 / self.t_future as f64;
                (0..=self.poly_degree).map(|d| u.powi(d as i32)).collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorParams {
    pub config: ModelConfig,
    pub past_enc: Mlp,
    pub neigh_enc: Mlp,
    pub query_enc: Mlp,
    pub trunk: Mlp,
    pub head_logits: Dense,
    pub head_coefs: Dense,
    pub head_log_sigma: Dense,
}

impl PredictorParams {
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::derive_rng(seed, rng::tag::PARAM_INIT, 0);
        let w = config.enc_width;
        let past_enc = Mlp::xavier(&[config.past_dim(), w, w], &mut rng);
        let neigh_enc = Mlp::xavier(&[config.neighbor_dim(), w, w], &mut rng);
        let query_enc = Mlp::xavier(&[config.query_dim(), w, w], &mut rng);
        let trunk = Mlp::xavier(&[3 * w, config.trunk_width, config.trunk_width], &mut rng);
        let head_logits = Dense::xavier(config.k_modes, config.trunk_width, &mut rng);
        let mut head_coefs = Dense::xavier(config.coef_dim(), config.trunk_width, &mut rng);
        let head_log_sigma = Dense::xavier(config.sigma_dim(), config.trunk_width, &mut rng);

        // Break mode symmetry: give each mode a distinct straight-line
        // bias spanning the plausible displacement range, so some mode
        // starts near any realistic future and modes specialize early.
        use rand::Rng;
        let deg = config.poly_degree + 1;
        for k in 0..config.k_modes {
            if config.poly_degree >= 1 {
                head_coefs.b[(k * 2) * deg + 1] = rng.random_range(-55.0..55.0);
                head_coefs.b[(k * 2 + 1) * deg + 1] = rng.random_range(-12.0..12.0);
            }
        }

        Ok(PredictorParams {
            config,
            past_enc,
            neigh_enc,
            query_enc,
            trunk,
            head_logits,
            head_coefs,
            head_log_sigma,
        })
    }

    /// Same shapes, all parameters zero; used as a gradient container.
    pub fn zeros_like(&self) -> Self {
        PredictorParams {
            config: self.config.clone(),
            past_enc: self.past_enc.zeros_like(),
            neigh_enc: self.neigh_enc.zeros_like(),
            query_enc: self.query_enc.zeros_like(),
            trunk: self.trunk.zeros_like(),
            head_logits: Dense::zeros(self.head_logits.out_dim(), self.head_logits.in_dim()),
            head_coefs: Dense::zeros(self.head_coefs.out_dim(), self.head_coefs.in_dim()),
            head_log_sigma: Dense::zeros(self.head_log_sigma.out_dim(), self.head_log_sigma.in_dim()),
        }
    }

    pub fn param_count(&self) -> usize {
        self.past_enc.param_count()
            + self.neigh_enc.param_count()
            + self.query_enc.param_count()
            + self.trunk.param_count()
            + self.head_logits.param_count()
            + self.head_coefs.param_count()
            + self.head_log_sigma.param_count()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.past_enc.flatten_into(&mut out);
        self.neigh_enc.flatten_into(&mut out);
        self.query_enc.flatten_into(&mut out);
        self.trunk.flatten_into(&mut out);
        self.head_logits.flatten_into(&mut out);
        self.head_coefs.flatten_into(&mut out);
        self.head_log_sigma.flatten_into(&mut out);
        out
    }

    pub fn load_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(CbpError::Dimension(format!(
                "flat parameter vector has {} entries, expected {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut offset = 0;
        self.past_enc.read_from(flat, &mut offset);
        self.neigh_enc.read_from(flat, &mut offset);
        self.query_enc.read_from(flat, &mut offset);
        self.trunk.read_from(flat, &mut offset);
        self.head_logits.read_from(flat, &mut offset);
        self.head_coefs.read_from(flat, &mut offset);
        self.head_log_sigma.read_from(flat, &mut offset);
        Ok(())
    }

    pub fn all_finite(&self) -> bool {
        self.flatten().iter().all(|v| v.is_finite())
    }
}

/// Everything the backward pass needs from one forward evaluation.
pub struct ForwardCache {
    pub features: Features,
    pub past_cache: MlpCache,
    pub neigh_caches: Vec<MlpCache>,
    /// Winning neighbor per pooled dimension (empty when no neighbors).
    pub pool_argmax: Vec<usize>,
    pub query_cache: MlpCache,
    pub trunk_cache: MlpCache,
    pub trunk_out: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub coefs: Vec<f64>,
    pub log_sigma_raw: Vec<f64>,
    pub log_sigma: Vec<f64>,
    /// World-frame mode means, indexed `k * T + t`.
    pub means: Vec<[f64; 2]>,
    pub basis: Vec<Vec<f64>>,
}

pub fn forward(
    params: &PredictorParams,
    scene: &Scene,
    target_id: u32,
    query: &ConditionalQuery,
) -> Result<(TrajectoryGmm, ForwardCache)> {
    let cfg = &params.config;
    let features = build_features(cfg, scene, target_id, query)?;

    let mut past_cache = MlpCache::default();
    let past_emb = params.past_enc.forward(&features.past, &mut past_cache);

    let width = params.neigh_enc.out_dim();
    let mut neigh_caches = Vec::with_capacity(features.neighbors.len());
    let mut pooled = vec![0.0; width];
    let mut pool_argmax = vec![0usize; width];
    for (n, feat) in features.neighbors.iter().enumerate() {
        let mut cache = MlpCache::default();
        let emb = params.neigh_enc.forward(feat, &mut cache);
        if n == 0 {
            pooled.copy_from_slice(&emb);
        } else {
            for (d, &v) in emb.iter().enumerate() {
                if v > pooled[d] {
                    pooled[d] = v;
                    pool_argmax[d] = n;
                }
            }
        }
        neigh_caches.push(cache);
    }
    if features.neighbors.is_empty() {
        pool_argmax.clear();
    }

    let mut query_cache = MlpCache::default();
    let query_emb = params.query_enc.forward(&features.query, &mut query_cache);

    let mut trunk_in = Vec::with_capacity(3 * width);
    trunk_in.extend_from_slice(&past_emb);
    trunk_in.extend_from_slice(&pooled);
    trunk_in.extend_from_slice(&query_emb);
    let mut trunk_cache = MlpCache::default();
    let trunk_out = params.trunk.forward(&trunk_in, &mut trunk_cache);

    let logits = params.head_logits.forward(&trunk_out);
    let probs = softmax(&logits);
    let coefs = params.head_coefs.forward(&trunk_out);
    let log_sigma_raw: Vec<f64> = params
        .head_log_sigma
        .forward(&trunk_out)
        .into_iter()
        .map(|v| SIGMA_HEAD_SCALE * v + SIGMA_SHIFT)
        .collect();
    let log_sigma: Vec<f64> = log_sigma_raw
        .iter()
        .map(|&v| v.clamp(cfg.min_log_sigma, cfg.max_log_sigma))
        .collect();

    let basis = cfg.time_basis();
    let deg = cfg.poly_degree + 1;
    let mut means = Vec::with_capacity(cfg.k_modes * cfg.t_future);
    for k in 0..cfg.k_modes {
        let cx = &coefs[(k * 2) * deg..(k * 2) * deg + deg];
        let cy = &coefs[(k * 2 + 1) * deg..(k * 2 + 1) * deg + deg];
        for row in &basis {
            let mut x = 0.0;
            let mut y = 0.0;
            for d in 0..deg {
                x += cx[d] * row[d];
                y += cy[d] * row[d];
            }
            means.push([features.origin[0] + x, features.origin[1] + y]);
        }
    }

    let mut modes = Vec::with_capacity(cfg.k_modes);
    for k in 0..cfg.k_modes {
        let mut waypoints = Vec::with_capacity(cfg.t_future);
        for t in 0..cfg.t_future {
            let ls = &log_sigma[(k * cfg.t_future + t) * 2..(k * cfg.t_future + t) * 2 + 2];
            waypoints.push(WaypointGaussian {
                mean: means[k * cfg.t_future + t],
                std: [ls[0].exp().max(STD_FLOOR), ls[1].exp().max(STD_FLOOR)],
            });
        }
        modes.push(GmmMode { prob: probs[k], waypoints });
    }
    let gmm = TrajectoryGmm::new(modes, cfg.dt)?;

    let cache = ForwardCache {
        features,
        past_cache,
        neigh_caches,
        pool_argmax,
        query_cache,
        trunk_cache,
        trunk_out,
        logits,
        probs,
        coefs,
        log_sigma_raw,
        log_sigma,
        means,
        basis,
    };
    Ok((gmm, cache))
}

/// Predict the target agent's future trajectory mixture, optionally
/// conditioned on another agent's future plan.
pub fn predict(
    params: &PredictorParams,
    scene: &Scene,
    target_id: u32,
    query: &ConditionalQuery,
) -> Result<TrajectoryGmm> {
    forward(params, scene, target_id, query).map(|(gmm, _)| gmm)
}

/// Gradients of some scalar loss with respect to the head outputs.
#[derive(Clone, Debug)]
pub struct HeadGrads {
    pub d_logits: Vec<f64>,
    /// d loss / d world-frame means, indexed `k * T + t`.
    pub d_means: Vec<[f64; 2]>,
    /// d loss / d clamped log sigma, layout `[k][t][axis]`.
    pub d_log_sigma: Vec<f64>,
}

impl HeadGrads {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        HeadGrads {
            d_logits: vec![0.0; cfg.k_modes],
            d_means: vec![[0.0; 2]; cfg.k_modes * cfg.t_future],
            d_log_sigma: vec![0.0; cfg.sigma_dim()],
        }
    }

    /// Fold a gradient with respect to mode probabilities into the logit
    /// gradient through the softmax Jacobian.
    pub fn add_prob_grad(&mut self, probs: &[f64], d_probs: &[f64]) {
        let dot: f64 = probs.iter().zip(d_probs).map(|(p, d)| p * d).sum();
        for i in 0..probs.len() {
            self.d_logits[i] += probs[i] * (d_probs[i] - dot);
        }
    }
}

/// Backpropagate head-output gradients through heads, trunk and encoders,
/// accumulating into `grads`.
pub fn backward(
    params: &PredictorParams,
    cache: &ForwardCache,
    head: &HeadGrads,
    grads: &mut PredictorParams,
) {
    let cfg = &params.config;
    let deg = cfg.poly_degree + 1;

    // Means -> polynomial coefficients.
    let mut d_coefs = vec![0.0; cfg.coef_dim()];
    for k in 0..cfg.k_modes {
        for t in 0..cfg.t_future {
            let dm = head.d_means[k * cfg.t_future + t];
            if dm[0] == 0.0 && dm[1] == 0.0 {
                continue;
            }
            let row = &cache.basis[t];
            for d in 0..deg {
                d_coefs[(k * 2) * deg + d] += dm[0] * row[d];
                d_coefs[(k * 2 + 1) * deg + d] += dm[1] * row[d];
            }
        }
    }

    // Clamp gate plus the fixed head gain for the sigma head. At an active
    // clamp the gradient still passes when it points back into the valid
    // range, so saturated sigmas can recover.
    let mut d_sigma_raw = head.d_log_sigma.clone();
    for (d, &raw) in d_sigma_raw.iter_mut().zip(&cache.log_sigma_raw) {
        let blocked = (raw <= cfg.min_log_sigma && *d >= 0.0)
            || (raw >= cfg.max_log_sigma && *d <= 0.0);
        *d = if blocked { 0.0 } else { *d * SIGMA_HEAD_SCALE };
    }

    // Heads.
    let mut d_trunk_out = vec![0.0; params.trunk.out_dim()];
    params.head_logits.backward(&cache.trunk_out, &head.d_logits, &mut grads.head_logits, &mut d_trunk_out);
    params.head_coefs.backward(&cache.trunk_out, &d_coefs, &mut grads.head_coefs, &mut d_trunk_out);
    params.head_log_sigma.backward(&cache.trunk_out, &d_sigma_raw, &mut grads.head_log_sigma, &mut d_trunk_out);

    // Trunk.
    let d_trunk_in = params.trunk.backward(&cache.trunk_cache, &d_trunk_out, &mut grads.trunk);
    let w = params.past_enc.out_dim();
    let d_past = &d_trunk_in[0..w];
    let d_pool = &d_trunk_in[w..2 * w];
    let d_query = &d_trunk_in[2 * w..3 * w];

    params.past_enc.backward(&cache.past_cache, d_past, &mut grads.past_enc);
    params.query_enc.backward(&cache.query_cache, d_query, &mut grads.query_enc);

    // Max-pool routes each pooled dimension's gradient to its winner.
    if !cache.neigh_caches.is_empty() {
        let mut per_neighbor: Vec<Vec<f64>> = vec![vec![0.0; w]; cache.neigh_caches.len()];
        for (dim, &winner) in cache.pool_argmax.iter().enumerate() {
            per_neighbor[winner][dim] = d_pool[dim];
        }
        for (n, d_emb) in per_neighbor.iter().enumerate() {
            if d_emb.iter().any(|v| *v != 0.0) {
                params.neigh_enc.backward(&cache.neigh_caches[n], d_emb, &mut grads.neigh_enc);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{self, SimConfig};
    use approx::assert_relative_eq;

    fn scene() -> (Scene, SimConfig) {
        let cfg = SimConfig { n_scenes: 1, ..SimConfig::default() };
        let scenes = sim::generate_dataset(&cfg, 5).unwrap();
        (scenes.into_iter().next().unwrap(), cfg)
    }

    fn model_cfg(sim: &SimConfig) -> ModelConfig {
        ModelConfig {
            h_past: sim.h_past,
            t_future: sim.t_future,
            dt: sim.dt,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn zero_coefficients_put_means_at_frame_origin() {
        let (scene, sim_cfg) = scene();
        let mut params = PredictorParams::init(model_cfg(&sim_cfg), 3).unwrap();
        params.head_coefs = Dense::zeros(params.config.coef_dim(), params.config.trunk_width);
        let target = scene.agents[1].agent_id;
        let origin = scene.agent(target).unwrap().present_pos();
        let gmm = predict(&params, &scene, target, &ConditionalQuery::marginal()).unwrap();
        for mode in gmm.modes() {
            for w in &mode.waypoints {
                assert_relative_eq!(w.mean[0], origin[0], epsilon = 1e-12);
                assert_relative_eq!(w.mean[1], origin[1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn equal_logits_give_uniform_modes() {
        let (scene, sim_cfg) = scene();
        let mut params = PredictorParams::init(model_cfg(&sim_cfg), 3).unwrap();
        params.head_logits = Dense::zeros(params.config.k_modes, params.config.trunk_width);
        let target = scene.agents[1].agent_id;
        let gmm = predict(&params, &scene, target, &ConditionalQuery::marginal()).unwrap();
        for mode in gmm.modes() {
            assert_relative_eq!(mode.prob, 1.0 / params.config.k_modes as f64, epsilon = 1e-12);
        }
    }

    #[test]
    fn query_input_reaches_the_trunk() {
        let (scene, sim_cfg) = scene();
        let params = PredictorParams::init(model_cfg(&sim_cfg), 11).unwrap();
        let leader = scene.agent_with_role(sim::RoleTag::Leader).unwrap();
        let target = scene.agent_with_role(sim::RoleTag::Follower).unwrap().agent_id;
        let marg = predict(&params, &scene, target, &ConditionalQuery::marginal()).unwrap();
        let cond = predict(
            &params,
            &scene,
            target,
            &ConditionalQuery::ground_truth(leader),
        )
        .unwrap();
        let differs = marg
            .modes()
            .iter()
            .zip(cond.modes())
            .any(|(a, b)| {
                a.waypoints
                    .iter()
                    .zip(&b.waypoints)
                    .any(|(wa, wb)| (wa.mean[0] - wb.mean[0]).abs() > 1e-12 || (wa.mean[1] - wb.mean[1]).abs() > 1e-12)
            });
        assert!(differs, "conditioning must change at least one mean coordinate");
    }

    #[test]
    fn marginal_equals_zero_query_feature_vector() {
        let (scene, sim_cfg) = scene();
        let params = PredictorParams::init(model_cfg(&sim_cfg), 11).unwrap();
        let target = scene.agents[1].agent_id;
        let (marg, cache) = forward(&params, &scene, target, &ConditionalQuery::marginal()).unwrap();
        assert!(cache.features.query.iter().all(|v| *v == 0.0));
        let again = predict(&params, &scene, target, &ConditionalQuery::marginal()).unwrap();
        assert_eq!(marg, again);
    }

    #[test]
    fn errors_on_bad_agents() {
        let (scene, sim_cfg) = scene();
        let params = PredictorParams::init(model_cfg(&sim_cfg), 11).unwrap();
        assert!(matches!(
            predict(&params, &scene, 999, &ConditionalQuery::marginal()),
            Err(CbpError::UnknownAgent(999))
        ));
        let target = scene.agents[0].agent_id;
        let self_query = ConditionalQuery::ground_truth(&scene.agents[0]);
        assert!(matches!(
            predict(&params, &scene, target, &self_query),
            Err(CbpError::Argument(_))
        ));
    }

    #[test]
    fn checkpoint_flatten_roundtrip() {
        let (_, sim_cfg) = scene();
        let params = PredictorParams::init(model_cfg(&sim_cfg), 17).unwrap();
        let flat = params.flatten();
        assert_eq!(flat.len(), params.param_count());
        let mut other = PredictorParams::init(model_cfg(&sim_cfg), 18).unwrap();
        other.load_flat(&flat).unwrap();
        assert_eq!(other.flatten(), flat);
        assert!(other.load_flat(&flat[1..]).is_err());
    }
}
