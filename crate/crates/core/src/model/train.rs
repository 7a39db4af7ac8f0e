//! Mini-batch training loop: SGD with momentum and a cosine-decayed step
//! size over the mean NLL plus a weighted overlap penalty.

use crate::error::{CbpError, Result};
use crate::metrics;
use crate::model::loss::{nll_terms, overlap_loss};
use crate::model::predictor::{backward, forward, HeadGrads, PredictorParams};
use crate::model::ConditionalQuery;
use crate::rng::{self, tag};
use crate::sim::Scene;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Probability that a training sample receives the query agent's
    /// ground-truth future; the rest train the marginal path.
    pub query_provide_rate: f64,
    /// Weight of the overlap penalty.
    pub overlap_weight: f64,
    /// Length scale (m^2) of the overlap penalty.
    pub overlap_alpha: f64,
    /// Global gradient-norm clip. NLL with learnable per-waypoint sigma
    /// produces unbounded spikes as sigma approaches its floor; plain SGD
    /// needs this guard.
    pub clip_grad_norm: f64,
    pub seed: u64,
    /// Cap on scenes used for per-epoch validation metrics.
    pub log_val_scenes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 60,
            batch_size: 16,
            learning_rate: 0.005,
            momentum: 0.9,
            query_provide_rate: 0.95,
            overlap_weight: 0.1,
            overlap_alpha: 9.0,
            clip_grad_norm: 100.0,
            seed: 0,
            log_val_scenes: 64,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(CbpError::config("train.batch_size", "must be >= 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(CbpError::config("train.learning_rate", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(CbpError::config("train.momentum", "must be in [0, 1)"));
        }
        if !(0.0..=1.0).contains(&self.query_provide_rate) {
            return Err(CbpError::config("train.query_provide_rate", "must be in [0, 1]"));
        }
        if self.overlap_weight < 0.0 {
            return Err(CbpError::config("train.overlap_weight", "must be >= 0"));
        }
        if self.overlap_alpha <= 0.0 {
            return Err(CbpError::config("train.overlap_alpha", "must be positive"));
        }
        if !(self.clip_grad_norm > 0.0) {
            return Err(CbpError::config("train.clip_grad_norm", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean training loss; for the pre-training row this is evaluated
    /// forward-only on a capped subset.
    pub train_loss: f64,
    pub val_nll: f64,
    pub val_wade6_marginal: f64,
    pub val_wade6_conditional: f64,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
}

/// Loss and gradients for one scene under the joint multi-agent protocol:
/// every non-query agent is predicted (conditioned on the query plan when
/// provided), NLL is averaged over targets, and the overlap penalty is
/// averaged over unordered target pairs.
pub fn scene_training_loss(
    params: &PredictorParams,
    scene: &Scene,
    query_id: u32,
    provide_query: bool,
    overlap_weight: f64,
    overlap_alpha: f64,
    want_grads: bool,
) -> Result<(f64, Option<PredictorParams>)> {
    let query_agent = scene.agent(query_id)?;
    let query = if provide_query {
        ConditionalQuery::ground_truth(query_agent)
    } else {
        ConditionalQuery::marginal()
    };
    let targets: Vec<u32> = scene
        .agents
        .iter()
        .map(|a| a.agent_id)
        .filter(|id| *id != query_id)
        .collect();
    if targets.is_empty() {
        return Err(CbpError::Argument(format!(
            "scene {} has no target agents besides the query",
            scene.scene_id
        )));
    }

    let t_future = params.config.t_future;
    let n_targets = targets.len() as f64;
    let mut forwards = Vec::with_capacity(targets.len());
    for &id in &targets {
        forwards.push(forward(params, scene, id, &query)?);
    }

    let mut heads: Vec<HeadGrads> = targets.iter().map(|_| HeadGrads::zeros(&params.config)).collect();
    let mut loss = 0.0;
    for ((id, (_, cache)), head) in targets.iter().zip(&forwards).zip(&mut heads) {
        let gt = &scene.agent(*id)?.future;
        loss += nll_terms(cache, t_future, gt, head, 1.0 / n_targets) / n_targets;
    }

    if overlap_weight > 0.0 && targets.len() >= 2 {
        let n_pairs = (targets.len() * (targets.len() - 1) / 2) as f64;
        let scale = overlap_weight / n_pairs;
        for i in 0..targets.len() {
            for j in (i + 1)..targets.len() {
                let out = overlap_loss(&forwards[i].0, &forwards[j].0, overlap_alpha)?;
                loss += scale * out.loss;
                let (left, right) = heads.split_at_mut(j);
                let head_i = &mut left[i];
                let head_j = &mut right[0];
                for (t, dm) in out.d_means_a.iter().enumerate() {
                    head_i.d_means[t][0] += scale * dm[0];
                    head_i.d_means[t][1] += scale * dm[1];
                }
                for (t, dm) in out.d_means_b.iter().enumerate() {
                    head_j.d_means[t][0] += scale * dm[0];
                    head_j.d_means[t][1] += scale * dm[1];
                }
                let scaled_a: Vec<f64> = out.d_prob_a.iter().map(|d| scale * d).collect();
                let scaled_b: Vec<f64> = out.d_prob_b.iter().map(|d| scale * d).collect();
                head_i.add_prob_grad(&forwards[i].1.probs, &scaled_a);
                head_j.add_prob_grad(&forwards[j].1.probs, &scaled_b);
            }
        }
    }

    let grads = if want_grads {
        let mut grads = params.zeros_like();
        for ((_, cache), head) in forwards.iter().zip(&heads) {
            backward(params, cache, head, &mut grads);
        }
        Some(grads)
    } else {
        None
    };
    Ok((loss, grads))
}

/// Deterministic per-scene query choice for validation metrics.
fn val_query_choice(scene_idx: usize, scene: &Scene, seed: u64) -> u32 {
    let mut rng = rng::derive_rng(seed, tag::VAL_QUERY, scene_idx as u64);
    let i = rng.random_range(0..scene.agents.len());
    scene.agents[i].agent_id
}

/// Validation metrics: conditional NLL plus marginal/conditional wADE6
/// over all non-query agents of each scene.
fn eval_metrics(params: &PredictorParams, scenes: &[Scene], cap: usize, seed: u64) -> Result<(f64, f64, f64)> {
    let mut nll_sum = 0.0;
    let mut nll_count = 0usize;
    let mut wade_marg = Vec::new();
    let mut wade_cond = Vec::new();
    for (idx, scene) in scenes.iter().take(cap.max(1)).enumerate() {
        let query_id = val_query_choice(idx, scene, seed);
        let query_agent = scene.agent(query_id)?;
        let query = ConditionalQuery::ground_truth(query_agent);
        for agent in &scene.agents {
            if agent.agent_id == query_id {
                continue;
            }
            let (cond_gmm, cond_cache) = forward(params, scene, agent.agent_id, &query)?;
            let mut scratch = HeadGrads::zeros(&params.config);
            nll_sum += nll_terms(&cond_cache, params.config.t_future, &agent.future, &mut scratch, 0.0);
            nll_count += 1;
            let marg_gmm = forward(params, scene, agent.agent_id, &ConditionalQuery::marginal())?.0;
            wade_cond.push(metrics::wade6(&cond_gmm, &agent.future)?);
            wade_marg.push(metrics::wade6(&marg_gmm, &agent.future)?);
        }
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
    Ok((nll_sum / nll_count.max(1) as f64, mean(&wade_marg), mean(&wade_cond)))
}

/// Train the predictor. Deterministic given the config seed; zero epochs
/// returns the initial parameters unchanged (with a baseline log row).
pub fn train(
    params_init: PredictorParams,
    train_scenes: &[Scene],
    val_scenes: &[Scene],
    cfg: &TrainConfig,
) -> Result<(PredictorParams, TrainLog)> {
    cfg.validate()?;
    if train_scenes.is_empty() {
        return Err(CbpError::Argument("empty training set".into()));
    }
    let mut params = params_init;
    let mut log = TrainLog::default();

    // Pre-training baseline row (forward-only).
    {
        let mut base_loss = 0.0;
        let cap = cfg.log_val_scenes.min(train_scenes.len()).max(1);
        for (i, scene) in train_scenes.iter().take(cap).enumerate() {
            let q = val_query_choice(i, scene, cfg.seed ^ 0x5a5a);
            base_loss += scene_training_loss(&params, scene, q, true, cfg.overlap_weight, cfg.overlap_alpha, false)?.0;
        }
        let (val_nll, wm, wc) = eval_metrics(&params, val_scenes, cfg.log_val_scenes, cfg.seed)?;
        log.epochs.push(EpochLog {
            epoch: 0,
            train_loss: base_loss / cap as f64,
            val_nll,
            val_wade6_marginal: wm,
            val_wade6_conditional: wc,
        });
    }
    if cfg.epochs == 0 {
        return Ok((params, log));
    }

    let mut theta = params.flatten();
    let mut velocity = vec![0.0; theta.len()];
    let batches_per_epoch = train_scenes.len().div_ceil(cfg.batch_size);
    let total_steps = (cfg.epochs * batches_per_epoch) as f64;
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_scenes.len()).collect();
        let mut epoch_rng = rng::derive_rng(cfg.seed, tag::TRAIN_EPOCH, epoch as u64);
        use rand::seq::SliceRandom;
        order.shuffle(&mut epoch_rng);

        let mut epoch_loss = 0.0;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let mut grad_acc = vec![0.0; theta.len()];
            let mut batch_loss = 0.0;
            for &scene_idx in chunk {
                let scene = &train_scenes[scene_idx];
                let qi = epoch_rng.random_range(0..scene.agents.len());
                let query_id = scene.agents[qi].agent_id;
                let provide = epoch_rng.random::<f64>() < cfg.query_provide_rate;
                let (loss, grads) = scene_training_loss(
                    &params,
                    scene,
                    query_id,
                    provide,
                    cfg.overlap_weight,
                    cfg.overlap_alpha,
                    true,
                )?;
                if !loss.is_finite() {
                    return Err(CbpError::Training {
                        batch: epoch * batches_per_epoch + batch_idx,
                        message: format!("non-finite loss on scene {}", scene.scene_id),
                    });
                }
                batch_loss += loss;
                let gflat = grads.expect("grads requested").flatten();
                for (acc, g) in grad_acc.iter_mut().zip(&gflat) {
                    *acc += g;
                }
            }
            let mut inv = 1.0 / chunk.len() as f64;
            let norm = grad_acc.iter().map(|g| (g * inv) * (g * inv)).sum::<f64>().sqrt();
            if norm > cfg.clip_grad_norm {
                inv *= cfg.clip_grad_norm / norm;
            }
            let lr = cfg.learning_rate * 0.5 * (1.0 + (std::f64::consts::PI * step as f64 / total_steps).cos());
            step += 1;
            for ((th, v), g) in theta.iter_mut().zip(&mut velocity).zip(&grad_acc) {
                *v = cfg.momentum * *v - lr * g * inv;
                *th += *v;
            }
            params.load_flat(&theta)?;
            if !params.all_finite() {
                return Err(CbpError::Training {
                    batch: epoch * batches_per_epoch + batch_idx,
                    message: "non-finite parameter after update".into(),
                });
            }
            epoch_loss += batch_loss;
        }

        let (val_nll, wm, wc) = eval_metrics(&params, val_scenes, cfg.log_val_scenes, cfg.seed)?;
        log.epochs.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_scenes.len() as f64,
            val_nll,
            val_wade6_marginal: wm,
            val_wade6_conditional: wc,
        });
    }
    Ok((params, log))
}
