//! Feature construction in the target agent's frame.
//!
//! All positions are expressed relative to the target's last observed
//! position, so the model is translation invariant by construction. A
//! marginal prediction uses an all-zero query feature vector ("turning off"
//! the query encoder input).

use crate::error::{CbpError, Result};
use crate::model::ModelConfig;
use crate::sim::{AgentTrack, Scene};
use crate::trajectory::Trajectory;

pub const POS_SCALE: f64 = 0.02;
pub const VEL_SCALE: f64 = 0.1;
pub const LANE_SCALE: f64 = 0.3;

/// Conditional query input: absent (marginal prediction) or a full future
/// plan for one query agent.
#[derive(Clone, Debug, PartialEq)]
pub enum ConditionalQuery {
    Marginal,
    Plan { agent_id: u32, plan: Trajectory },
}

impl ConditionalQuery {
    pub fn marginal() -> Self {
        ConditionalQuery::Marginal
    }

    pub fn plan(agent_id: u32, plan: Trajectory) -> Self {
        ConditionalQuery::Plan { agent_id, plan }
    }

    /// The query agent's ground-truth future as the plan.
    pub fn ground_truth(agent: &AgentTrack) -> Self {
        ConditionalQuery::Plan { agent_id: agent.agent_id, plan: agent.future.clone() }
    }

    pub fn is_marginal(&self) -> bool {
        matches!(self, ConditionalQuery::Marginal)
    }
}

#[derive(Clone, Debug)]
pub struct Features {
    /// Target frame origin: the target's last observed position (world).
    pub origin: [f64; 2],
    pub past: Vec<f64>,
    pub neighbors: Vec<Vec<f64>>,
    pub query: Vec<f64>,
}

fn past_features(track: &AgentTrack, origin: [f64; 2], out: &mut Vec<f64>) {
    for s in &track.past {
        out.push((s[0] - origin[0]) * POS_SCALE);
        out.push((s[1] - origin[1]) * POS_SCALE);
        out.push(s[2] * VEL_SCALE);
        out.push(s[3] * VEL_SCALE);
    }
}

pub fn build_features(
    cfg: &ModelConfig,
    scene: &Scene,
    target_id: u32,
    query: &ConditionalQuery,
) -> Result<Features> {
    let target = scene.agent(target_id)?;
    if target.past.len() != cfg.h_past {
        return Err(CbpError::Dimension(format!(
            "agent past length {} vs model h_past {}",
            target.past.len(),
            cfg.h_past
        )));
    }
    let origin = target.present_pos();

    let mut past = Vec::with_capacity(4 * cfg.h_past);
    past_features(target, origin, &mut past);

    let mut neighbors = Vec::new();
    for other in &scene.agents {
        if other.agent_id == target_id {
            continue;
        }
        let mut feat = Vec::with_capacity(4 * cfg.h_past + 1);
        past_features(other, origin, &mut feat);
        feat.push((other.lane_index - target.lane_index) as f64 * LANE_SCALE);
        neighbors.push(feat);
    }

    let query_dim = 2 * cfg.t_future + 2;
    let query_feat = match query {
        ConditionalQuery::Marginal => vec![0.0; query_dim],
        ConditionalQuery::Plan { agent_id, plan } => {
            if *agent_id == target_id {
                return Err(CbpError::Argument(format!(
                    "query agent {agent_id} equals target agent"
                )));
            }
            let query_agent = scene.agent(*agent_id)?;
            if plan.horizon() != cfg.t_future {
                return Err(CbpError::Dimension(format!(
                    "query plan horizon {} vs model t_future {}",
                    plan.horizon(),
                    cfg.t_future
                )));
            }
            let mut feat = Vec::with_capacity(query_dim);
            for s in plan.states() {
                feat.push((s[0] - origin[0]) * POS_SCALE);
                feat.push((s[1] - origin[1]) * POS_SCALE);
            }
            feat.push((query_agent.lane_index - target.lane_index) as f64 * LANE_SCALE);
            feat.push(1.0);
            feat
        }
    };

    Ok(Features { origin, past, neighbors, query: query_feat })
}
