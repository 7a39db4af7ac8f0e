//! Degree of influence and interactivity score between agent pairs.
//!
//! The degree of influence of a query plan on a target agent is the KL
//! divergence from the target's marginal prediction to its conditional
//! prediction, estimated by Monte-Carlo sampling from the conditional. The
//! interactivity score is the expected degree of influence over query
//! futures, estimated by importance-weighting the top modes of the query
//! agent's marginal mixture (mode mean trajectories as plans, weighted by
//! their renormalized mode probabilities).
//!
//! Estimates carry standard errors and sampling diagnostics. The score is
//! symmetric in theory but the estimates need not be; asymmetry is
//! reported, never corrected.

use crate::error::{CbpError, Result};
use crate::gmm::TrajectoryGmm;
use crate::metrics;
use crate::model::{predict, ConditionalQuery, PredictorParams};
use crate::rng::{self, tag};
use crate::sim::Scene;
use crate::trajectory::Trajectory;
use serde::{Deserialize, Serialize};

/// How many marginal modes stand in for the outer expectation.
pub const QUERY_MODES: usize = 6;

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EstimatorConfig {
    /// Monte-Carlo samples per query mode.
    pub m_samples: usize,
    /// Renormalize the selected query-mode probabilities to sum to one
    /// (default). When false, the literal mixture probabilities are used.
    pub renormalize_weights: bool,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig { m_samples: 1000, renormalize_weights: true }
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct KlEstimate {
    pub kl: f64,
    pub stderr: f64,
    pub min_log_ratio: f64,
    pub max_log_ratio: f64,
}

/// One query mode's contribution to the interactivity score.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ModeTerm {
    /// Weight of this query mode in the outer sum.
    pub weight: f64,
    /// Inner Monte-Carlo KL estimate for this query plan.
    pub kl: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct EstimatorDiagnostics {
    pub min_log_ratio: f64,
    pub max_log_ratio: f64,
    /// Effective number of Monte-Carlo samples across the weighted modes.
    pub effective_samples: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct InteractivityReport {
    pub scene_id: String,
    pub query_id: u32,
    pub target_id: u32,
    /// Mutual-information estimate (nats).
    pub mi_estimate: f64,
    pub mi_stderr: f64,
    pub per_mode_terms: Vec<ModeTerm>,
    /// Ground-truth log-likelihood gain of the target's future when
    /// conditioning on the query's future (nats).
    pub delta_ll: Option<f64>,
    /// wADE6 reduction from conditioning on the query's ground truth.
    pub delta_wade: Option<f64>,
    /// Log marginal likelihood of the query's ground-truth future under
    /// the query agent's own marginal prediction; low values warn that the
    /// model is extrapolating.
    pub query_log_marginal: Option<f64>,
    /// Monte-Carlo samples per query mode.
    pub mc_samples: usize,
    pub diagnostics: EstimatorDiagnostics,
}

/// Ground-truth surprise: `log p(gt | query) - log p(gt)`.
pub fn delta_ll(cond: &TrajectoryGmm, marg: &TrajectoryGmm, gt_target: &Trajectory) -> Result<f64> {
    Ok(cond.log_likelihood(gt_target)? - marg.log_likelihood(gt_target)?)
}

/// Monte-Carlo KL divergence `KL(cond || marg)`: mean and standard error
/// of the log ratio over `m` samples drawn from `cond`.
pub fn kl_mc(cond: &TrajectoryGmm, marg: &TrajectoryGmm, m: usize, rng_seed: u64) -> Result<KlEstimate> {
    if m < 2 {
        return Err(CbpError::Argument(format!("kl_mc needs m >= 2, got {m}")));
    }
    if cond.horizon() != marg.horizon() {
        return Err(CbpError::Dimension(format!(
            "kl_mc horizons {} vs {}",
            cond.horizon(),
            marg.horizon()
        )));
    }
    let mut rng = rng::rng_from(rng_seed);
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    for _ in 0..m {
        let sample = cond.sample_one(&mut rng);
        let lc = cond.log_likelihood(&sample)?;
        let lm = marg.log_likelihood(&sample)?;
        let ratio = lc - lm;
        if !ratio.is_finite() {
            return Err(CbpError::Numeric(format!("non-finite log ratio {ratio}")));
        }
        sum += ratio;
        sum_sq += ratio * ratio;
        min_ratio = min_ratio.min(ratio);
        max_ratio = max_ratio.max(ratio);
    }
    let n = m as f64;
    let mean = sum / n;
    let var = ((sum_sq - n * mean * mean) / (n - 1.0)).max(0.0);
    Ok(KlEstimate { kl: mean, stderr: (var / n).sqrt(), min_log_ratio: min_ratio, max_log_ratio: max_ratio })
}

/// Estimator core, independent of any model: the outer expectation over
/// query futures is replaced by the top modes of `marg_query`, each
/// realized as its mean trajectory and weighted by its (optionally
/// renormalized) probability; the inner KL uses `m` samples from the
/// conditional returned by `cond_for`.
pub fn mi_importance<F>(
    marg_query: &TrajectoryGmm,
    marg_target: &TrajectoryGmm,
    mut cond_for: F,
    est: &EstimatorConfig,
    rng_seed: u64,
) -> Result<(f64, f64, Vec<ModeTerm>, EstimatorDiagnostics)>
where
    F: FnMut(&Trajectory) -> Result<TrajectoryGmm>,
{
    let top = marg_query.most_likely_modes(QUERY_MODES.min(marg_query.mode_count()))?;
    let total: f64 = top.iter().map(|(p, _)| p).sum();
    let mut terms = Vec::with_capacity(top.len());
    let mut mi = 0.0;
    let mut var = 0.0;
    let mut min_ratio = f64::INFINITY;
    let mut max_ratio = f64::NEG_INFINITY;
    let mut weight_sq = 0.0;
    for (slot, &(prob, k)) in top.iter().enumerate() {
        let weight = if est.renormalize_weights { prob / total } else { prob };
        let plan = marg_query.mode_mean_trajectory(k)?;
        let cond = cond_for(&plan)?;
        let kl = kl_mc(&cond, marg_target, est.m_samples, rng::derive_seed(rng_seed, tag::KL_MODE, slot as u64))?;
        mi += weight * kl.kl;
        var += weight * weight * kl.stderr * kl.stderr;
        min_ratio = min_ratio.min(kl.min_log_ratio);
        max_ratio = max_ratio.max(kl.max_log_ratio);
        weight_sq += weight * weight;
        terms.push(ModeTerm { weight, kl: kl.kl, stderr: kl.stderr });
    }
    let weight_sum: f64 = terms.iter().map(|t| t.weight).sum();
    let effective = est.m_samples as f64 * weight_sum * weight_sum / weight_sq.max(f64::MIN_POSITIVE);
    let diag = EstimatorDiagnostics {
        min_log_ratio: min_ratio,
        max_log_ratio: max_ratio,
        effective_samples: effective,
    };
    Ok((mi, var.sqrt(), terms, diag))
}

/// Interactivity score of `query -> target` in a scene, plus ground-truth
/// surprise diagnostics.
pub fn mutual_information(
    params: &PredictorParams,
    scene: &Scene,
    query_id: u32,
    target_id: u32,
    est: &EstimatorConfig,
    rng_seed: u64,
) -> Result<InteractivityReport> {
    if query_id == target_id {
        return Err(CbpError::Argument(format!("query agent {query_id} equals target agent")));
    }
    let query_agent = scene.agent(query_id)?;
    let target_agent = scene.agent(target_id)?;

    let marg_query = predict(params, scene, query_id, &ConditionalQuery::marginal())?;
    let marg_target = predict(params, scene, target_id, &ConditionalQuery::marginal())?;
    let (mi, stderr, terms, diag) = mi_importance(
        &marg_query,
        &marg_target,
        |plan| predict(params, scene, target_id, &ConditionalQuery::plan(query_id, plan.clone())),
        est,
        rng_seed,
    )?;

    // Ground-truth diagnostics.
    let cond_gt = predict(
        params,
        scene,
        target_id,
        &ConditionalQuery::ground_truth(query_agent),
    )?;
    let d_ll = delta_ll(&cond_gt, &marg_target, &target_agent.future)?;
    let d_wade = metrics::delta_wade(&marg_target, &cond_gt, &target_agent.future)?;
    let query_ll = marg_query.log_likelihood(&query_agent.future)?;

    Ok(InteractivityReport {
        scene_id: scene.scene_id.clone(),
        query_id,
        target_id,
        mi_estimate: mi,
        mi_stderr: stderr,
        per_mode_terms: terms,
        delta_ll: Some(d_ll),
        delta_wade: Some(d_wade),
        query_log_marginal: Some(query_ll),
        mc_samples: est.m_samples,
        diagnostics: diag,
    })
}

/// Reports for every ordered agent pair of a scene. Each pair derives its
/// own RNG stream, so pairs could be evaluated concurrently.
pub fn pairwise_scores(
    params: &PredictorParams,
    scene: &Scene,
    est: &EstimatorConfig,
    rng_seed: u64,
) -> Result<Vec<InteractivityReport>> {
    if scene.agents.len() < 2 {
        return Err(CbpError::Argument(format!(
            "scene {} needs >= 2 agents for pairwise scores",
            scene.scene_id
        )));
    }
    let mut reports = Vec::with_capacity(scene.agents.len() * (scene.agents.len() - 1));
    let mut pair_idx = 0u64;
    for query in &scene.agents {
        for target in &scene.agents {
            if query.agent_id == target.agent_id {
                continue;
            }
            let seed = rng::derive_seed(rng_seed, tag::PAIR, pair_idx);
            pair_idx += 1;
            reports.push(mutual_information(
                params,
                scene,
                query.agent_id,
                target.agent_id,
                est,
                seed,
            )?);
        }
    }
    Ok(reports)
}
