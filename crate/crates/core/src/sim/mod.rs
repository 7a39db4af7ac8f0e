//! Synthetic multi-agent driving scenes with known causal structure.
//!
//! Five scenario kinds are generated:
//! - `car_follow`: a follower reacts to an exogenous leader through a
//!   delayed IDM law with leader-acceleration feedforward;
//! - `cut_in`: an adjacent agent cuts into the target's lane (or not,
//!   a latent intent), forcing the target to brake;
//! - `yield_turn`: a turning agent waits for an oncoming agent before
//!   committing to a scripted left-turn path;
//! - `independent`: agents evolve from disjoint random processes;
//! - `confounded_stop`: two uncoupled agents brake at a shared scripted
//!   stop time, producing correlation without interaction.
//!
//! Scenes are deterministic given `(master seed, scene index)`, so
//! generation is order-independent and could run scene-parallel.

pub mod idm;

use crate::error::{CbpError, Result};
use crate::rng::{self, tag};
use crate::trajectory::Trajectory;
use idm::IdmParams;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Bumper-to-bumper length subtracted from center distances to get gaps.
pub const CAR_LENGTH: f64 = 4.5;

/// Hard physical acceleration limits applied after every control law.
const ACCEL_MIN: f64 = -6.0;
const ACCEL_MAX: f64 = 4.0;

/// Margin between the longitudinal speed cap and `v_max`, reserving room
/// for lateral motion so the no-teleport bound holds for total displacement.
const LATERAL_MARGIN: f64 = 4.0;

pub type PastState = [f64; 4]; // x, y, vx, vy

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Leader,
    Follower,
    Independent,
    Av,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CarFollow,
    CutIn,
    YieldTurn,
    Independent,
    ConfoundedStop,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::CarFollow,
        ScenarioKind::CutIn,
        ScenarioKind::YieldTurn,
        ScenarioKind::Independent,
        ScenarioKind::ConfoundedStop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::CarFollow => "car_follow",
            ScenarioKind::CutIn => "cut_in",
            ScenarioKind::YieldTurn => "yield_turn",
            ScenarioKind::Independent => "independent",
            ScenarioKind::ConfoundedStop => "confounded_stop",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub agent_id: u32,
    pub lane_index: i32,
    pub role_tag: RoleTag,
    /// Past observed states at `dt` spacing, length H.
    pub past: Vec<PastState>,
    /// Ground-truth future positions, length T.
    pub future: Trajectory,
}

impl AgentTrack {
    /// Position at the last observed (present) step.
    pub fn present_pos(&self) -> [f64; 2] {
        let s = self.past.last().expect("past length >= 1");
        [s[0], s[1]]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub scene_id: String,
    pub scenario_kind: ScenarioKind,
    pub rng_seed: u64,
    pub agents: Vec<AgentTrack>,
}

impl Scene {
    pub fn agent(&self, id: u32) -> Result<&AgentTrack> {
        self.agents
            .iter()
            .find(|a| a.agent_id == id)
            .ok_or(CbpError::UnknownAgent(id))
    }

    pub fn agent_with_role(&self, role: RoleTag) -> Option<&AgentTrack> {
        self.agents.iter().find(|a| a.role_tag == role)
    }

    pub fn validate(&self, h_past: usize, t_future: usize) -> Result<()> {
        if self.agents.len() < 2 {
            return Err(CbpError::Schema(format!(
                "scene {} has {} agents, expected >= 2",
                self.scene_id,
                self.agents.len()
            )));
        }
        let mut ids: Vec<u32> = self.agents.iter().map(|a| a.agent_id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.agents.len() {
            return Err(CbpError::Schema(format!("scene {} has duplicate agent ids", self.scene_id)));
        }
        for a in &self.agents {
            if a.past.len() != h_past {
                return Err(CbpError::Schema(format!(
                    "scene {} agent {} past length {} != {h_past}",
                    self.scene_id,
                    a.agent_id,
                    a.past.len()
                )));
            }
            if a.future.horizon() != t_future {
                return Err(CbpError::Schema(format!(
                    "scene {} agent {} future length {} != {t_future}",
                    self.scene_id,
                    a.agent_id,
                    a.future.horizon()
                )));
            }
            a.future.validate()?;
            if a.past.iter().any(|s| s.iter().any(|v| !v.is_finite())) {
                return Err(CbpError::Schema(format!(
                    "scene {} agent {} has non-finite past state",
                    self.scene_id, a.agent_id
                )));
            }
        }
        Ok(())
    }

    /// Largest single-step displacement over past + future of any agent.
    pub fn max_step_displacement(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for a in &self.agents {
            let mut points: Vec<[f64; 2]> = a.past.iter().map(|s| [s[0], s[1]]).collect();
            points.extend(a.future.states().iter().copied());
            for w in points.windows(2) {
                let d = ((w[1][0] - w[0][0]).powi(2) + (w[1][1] - w[0][1]).powi(2)).sqrt();
                worst = worst.max(d);
            }
        }
        worst
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ScenarioMix {
    pub car_follow: f64,
    pub cut_in: f64,
    pub yield_turn: f64,
    pub independent: f64,
    pub confounded_stop: f64,
}

impl ScenarioMix {
    pub fn as_array(&self) -> [(ScenarioKind, f64); 5] {
        [
            (ScenarioKind::CarFollow, self.car_follow),
            (ScenarioKind::CutIn, self.cut_in),
            (ScenarioKind::YieldTurn, self.yield_turn),
            (ScenarioKind::Independent, self.independent),
            (ScenarioKind::ConfoundedStop, self.confounded_stop),
        ]
    }

    pub fn sum(&self) -> f64 {
        self.car_follow + self.cut_in + self.yield_turn + self.independent + self.confounded_stop
    }
}

impl Default for ScenarioMix {
    fn default() -> Self {
        ScenarioMix {
            car_follow: 0.30,
            cut_in: 0.20,
            yield_turn: 0.10,
            independent: 0.30,
            confounded_stop: 0.10,
        }
    }
}

/// Uniform draw ranges for per-scene IDM parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IdmRanges {
    pub time_headway: (f64, f64),
    pub max_accel: (f64, f64),
    pub comfort_decel: (f64, f64),
    pub jam_distance: (f64, f64),
}

impl Default for IdmRanges {
    fn default() -> Self {
        IdmRanges {
            time_headway: (1.1, 1.9),
            max_accel: (1.5, 2.5),
            comfort_decel: (2.0, 3.5),
            jam_distance: (2.0, 4.0),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimConfig {
    pub n_scenes: usize,
    pub h_past: usize,
    pub t_future: usize,
    pub dt: f64,
    pub n_max: usize,
    pub mix: ScenarioMix,
    /// Hard bound used by the no-teleport contract.
    pub v_max: f64,
    /// Std of the follower's per-step acceleration noise (m/s^2).
    pub accel_noise_sigma: f64,
    pub reaction_delay_steps: usize,
    pub lane_width: f64,
    /// Max extra open-loop agents added to interactive scenes.
    pub max_distractors: usize,
    /// Amplitude range of the leader's future speed-change pulse; (0, 0)
    /// disables pulses.
    pub leader_pulse_amp: (f64, f64),
    /// Pulse duration range in seconds. Kept shorter than twice the
    /// reaction delay so reverse-direction acceleration correlation decays.
    pub leader_pulse_dur: (f64, f64),
    /// Stationary std of the leader's OU acceleration wiggle (m/s^2).
    pub leader_wiggle_sigma: f64,
    /// OU correlation time of the wiggle (s).
    pub leader_wiggle_theta: f64,
    pub idm: IdmRanges,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_scenes: 100,
            h_past: 10,
            t_future: 30,
            dt: 0.2,
            n_max: 8,
            mix: ScenarioMix::default(),
            v_max: 30.0,
            accel_noise_sigma: 0.25,
            reaction_delay_steps: 3,
            lane_width: 3.5,
            max_distractors: 2,
            leader_pulse_amp: (1.5, 3.2),
            leader_pulse_dur: (0.8, 1.1),
            leader_wiggle_sigma: 0.55,
            leader_wiggle_theta: 0.4,
            idm: IdmRanges::default(),
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_scenes == 0 {
            return Err(CbpError::config("sim.n_scenes", "must be >= 1"));
        }
        if self.h_past == 0 {
            return Err(CbpError::config("sim.h_past", "must be >= 1"));
        }
        if self.t_future == 0 {
            return Err(CbpError::config("sim.t_future", "must be >= 1"));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CbpError::config("sim.dt", "must be positive"));
        }
        if self.n_max < 2 {
            return Err(CbpError::config("sim.n_max", "must be >= 2"));
        }
        let mix = self.mix.as_array();
        if mix.iter().any(|(_, f)| *f < 0.0 || !f.is_finite()) {
            return Err(CbpError::config("sim.mix", "proportions must be non-negative"));
        }
        if (self.mix.sum() - 1.0).abs() > 1e-9 {
            return Err(CbpError::config(
                "sim.mix",
                format!("proportions sum to {}, expected 1", self.mix.sum()),
            ));
        }
        if self.v_max <= LATERAL_MARGIN + 1.0 {
            return Err(CbpError::config("sim.v_max", "too small for lateral maneuvers"));
        }
        if self.accel_noise_sigma < 0.0 {
            return Err(CbpError::config("sim.accel_noise_sigma", "must be >= 0"));
        }
        if self.lane_width <= 0.0 {
            return Err(CbpError::config("sim.lane_width", "must be positive"));
        }
        Ok(())
    }

    fn warm_steps(&self) -> usize {
        self.reaction_delay_steps
    }

    /// Number of simulated states per scene.
    fn total_states(&self) -> usize {
        self.warm_steps() + self.h_past + self.t_future
    }

    /// Index of the first future state.
    fn future_start(&self) -> usize {
        self.warm_steps() + self.h_past
    }

    fn v_long_cap(&self) -> f64 {
        self.v_max - LATERAL_MARGIN
    }
}

// ---------------------------------------------------------------------------
// Rollout machinery
// ---------------------------------------------------------------------------

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn uniform(rng: &mut ChaCha8Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Stationary Ornstein-Uhlenbeck series with std `sigma` and correlation
/// time `theta`.
fn ou_series(rng: &mut ChaCha8Rng, n: usize, sigma: f64, theta: f64, dt: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    let rho = (-dt / theta).exp();
    let innov = sigma * (1.0 - rho * rho).sqrt();
    let mut w = sigma * normal(rng);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        out.push(w);
        w = rho * w + innov * normal(rng);
    }
    out
}

/// Add one rectangular acceleration pulse inside the future window.
/// Returns the signed amplitude (0 when pulses are disabled).
fn add_future_pulse(cfg: &SimConfig, rng: &mut ChaCha8Rng, accels: &mut [f64], brake_bias: f64) -> f64 {
    if cfg.leader_pulse_amp.1 <= 0.0 {
        return 0.0;
    }
    let amp = uniform(rng, cfg.leader_pulse_amp);
    let sign = if rng.random::<f64>() < brake_bias { -1.0 } else { 1.0 };
    let dur_steps = (uniform(rng, cfg.leader_pulse_dur) / cfg.dt).round().max(1.0) as usize;
    let start_lo = cfg.future_start() + 2;
    let start_hi = cfg
        .total_states()
        .saturating_sub(dur_steps + cfg.reaction_delay_steps + 3)
        .max(start_lo + 1);
    let onset = rng.random_range(start_lo..start_hi);
    for a in accels.iter_mut().skip(onset).take(dur_steps) {
        *a += sign * amp;
    }
    sign * amp
}

/// Longitudinal open-loop rollout. `dir` is +1 or -1 along x.
/// Returns per-state positions and speeds plus per-transition effective
/// accelerations (after speed clamping).
struct LongTrack {
    x: Vec<f64>,
    v: Vec<f64>,
    a_eff: Vec<f64>,
    dir: f64,
}

fn integrate_open_loop(
    cfg: &SimConfig,
    x0: f64,
    v0: f64,
    dir: f64,
    accels: &[f64],
) -> LongTrack {
    let n = accels.len();
    let mut x = Vec::with_capacity(n + 1);
    let mut v = Vec::with_capacity(n + 1);
    let mut a_eff = Vec::with_capacity(n);
    x.push(x0);
    v.push(v0);
    for (i, &a) in accels.iter().enumerate() {
        let a = a.clamp(ACCEL_MIN, ACCEL_MAX);
        let nv = (v[i] + a * cfg.dt).clamp(0.0, cfg.v_long_cap());
        a_eff.push((nv - v[i]) / cfg.dt);
        v.push(nv);
        x.push(x[i] + dir * nv * cfg.dt);
    }
    LongTrack { x, v, a_eff, dir }
}

/// Closed-loop follower: delayed IDM on the gap to a possibly-conditional
/// leader, plus leader-acceleration feedforward and process noise.
///
/// `leader_gap(j)` returns `(gap, v_lead, a_lead)` as perceived at state
/// `j`, or `None` for free road.
fn integrate_follower<F>(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    x0: f64,
    v0: f64,
    params: &IdmParams,
    beta: f64,
    leader_gap: F,
) -> LongTrack
where
    F: Fn(usize, &[f64], &[f64]) -> Option<(f64, f64, f64)>,
{
    let n = cfg.total_states() - 1;
    let delay = cfg.reaction_delay_steps;
    let mut x = vec![x0];
    let mut v = vec![v0];
    let mut a_eff = Vec::with_capacity(n);
    for i in 0..n {
        let j = i.saturating_sub(delay);
        let mut a = match leader_gap(j, &x, &v) {
            Some((gap, v_lead, a_lead)) => params.accel(gap, v[j], v_lead) + beta * a_lead,
            None => params.accel(f64::INFINITY, v[j], 0.0),
        };
        a += cfg.accel_noise_sigma * normal(rng);
        let a = a.clamp(ACCEL_MIN, ACCEL_MAX);
        let nv = (v[i] + a * cfg.dt).clamp(0.0, cfg.v_long_cap());
        a_eff.push((nv - v[i]) / cfg.dt);
        v.push(nv);
        x.push(x[i] + nv * cfg.dt);
    }
    LongTrack { x, v, a_eff, dir: 1.0 }
}

fn draw_idm(cfg: &SimConfig, rng: &mut ChaCha8Rng, desired_speed: f64) -> IdmParams {
    IdmParams {
        desired_speed,
        time_headway: uniform(rng, cfg.idm.time_headway),
        max_accel: uniform(rng, cfg.idm.max_accel),
        comfort_decel: uniform(rng, cfg.idm.comfort_decel),
        jam_distance: uniform(rng, cfg.idm.jam_distance),
    }
}

/// Assemble an agent track from per-state planar positions and velocities.
fn track_from_states(
    cfg: &SimConfig,
    agent_id: u32,
    lane_index: i32,
    role_tag: RoleTag,
    pos: &[[f64; 2]],
    vel: &[[f64; 2]],
    offset: [f64; 2],
) -> AgentTrack {
    let fs = cfg.future_start();
    let past = (fs - cfg.h_past..fs)
        .map(|i| [pos[i][0] + offset[0], pos[i][1] + offset[1], vel[i][0], vel[i][1]])
        .collect();
    let future = Trajectory::new(
        (fs..fs + cfg.t_future)
            .map(|i| [pos[i][0] + offset[0], pos[i][1] + offset[1]])
            .collect(),
        cfg.dt,
    )
    .expect("simulated states are finite");
    AgentTrack { agent_id, lane_index, role_tag, past, future }
}

fn longitudinal_track(
    cfg: &SimConfig,
    agent_id: u32,
    lane_index: i32,
    role_tag: RoleTag,
    long: &LongTrack,
    lane_y: f64,
    offset: [f64; 2],
) -> AgentTrack {
    let pos: Vec<[f64; 2]> = long.x.iter().map(|&x| [x, lane_y]).collect();
    let vel: Vec<[f64; 2]> = long.v.iter().map(|&v| [long.dir * v, 0.0]).collect();
    track_from_states(cfg, agent_id, lane_index, role_tag, &pos, &vel, offset)
}

/// Open-loop agent placed in a spare lane; never interacts with anyone.
fn distractor_track(
    cfg: &SimConfig,
    rng: &mut ChaCha8Rng,
    agent_id: u32,
    lane_index: i32,
    x0: f64,
    offset: [f64; 2],
) -> AgentTrack {
    let n = cfg.total_states() - 1;
    let mut accels = ou_series(rng, n, cfg.leader_wiggle_sigma, cfg.leader_wiggle_theta, cfg.dt);
    if rng.random::<f64>() < 0.4 {
        add_future_pulse(cfg, rng, &mut accels, 0.5);
    }
    let v0 = uniform(rng, (4.0, 12.0));
    let long = integrate_open_loop(cfg, x0, v0, 1.0, &accels);
    longitudinal_track(
        cfg,
        agent_id,
        lane_index,
        RoleTag::Independent,
        &long,
        lane_index as f64 * cfg.lane_width,
        offset,
    )
}

fn scene_offset(rng: &mut ChaCha8Rng) -> [f64; 2] {
    [uniform(rng, (-80.0, 80.0)), uniform(rng, (-40.0, 40.0))]
}

fn spare_lanes(used: &[i32], count: usize, rng: &mut ChaCha8Rng) -> Vec<i32> {
    let mut lanes = Vec::new();
    let mut candidates: Vec<i32> = (-3..=5).filter(|l| !used.contains(l)).collect();
    for _ in 0..count {
        if candidates.is_empty() {
            break;
        }
        let idx = rng.random_range(0..candidates.len());
        lanes.push(candidates.remove(idx));
    }
    lanes
}

// ---------------------------------------------------------------------------
// Scenario builders
// ---------------------------------------------------------------------------

/// Explicit knobs for a car-following scene; randomized by the dataset
/// generator, pinned by tests and by the pruning-scene builder.
#[derive(Clone, Copy, Debug)]
pub struct CarFollowSetup {
    pub leader_speed: f64,
    /// Follower speed minus leader speed at the start of the rollout.
    pub approach_dv: f64,
    /// Initial gap as a multiple of the steady-state reference gap.
    pub gap_factor: f64,
    /// Leader-acceleration feedforward weight.
    pub beta: f64,
    pub n_distractors: usize,
    /// Tag the follower as the AV (pruning experiments).
    pub tag_follower_av: bool,
    /// Disable the leader pulse/wiggle regardless of config.
    pub quiet_leader: bool,
}

impl CarFollowSetup {
    fn random(cfg: &SimConfig, rng: &mut ChaCha8Rng) -> Self {
        let approach = rng.random::<f64>() < 0.5;
        CarFollowSetup {
            leader_speed: uniform(rng, (4.0, 11.0)),
            approach_dv: if approach { uniform(rng, (2.0, 8.5)) } else { uniform(rng, (-0.5, 0.5)) },
            gap_factor: if approach { uniform(rng, (1.0, 1.6)) } else { uniform(rng, (0.75, 1.6)) },
            beta: uniform(rng, (0.75, 1.0)),
            n_distractors: rng.random_range(0..=cfg.max_distractors),
            tag_follower_av: false,
            quiet_leader: false,
        }
    }
}

pub fn build_car_follow(cfg: &SimConfig, setup: &CarFollowSetup, seed: u64, scene_id: &str) -> Scene {
    let mut rng = rng::rng_from(seed);
    let offset = scene_offset(&mut rng);
    let lane = rng.random_range(0..3);
    let lane_y = lane as f64 * cfg.lane_width;
    let n = cfg.total_states() - 1;

    let mut leader_accels = if setup.quiet_leader {
        vec![0.0; n]
    } else {
        ou_series(&mut rng, n, cfg.leader_wiggle_sigma, cfg.leader_wiggle_theta, cfg.dt)
    };
    if !setup.quiet_leader {
        add_future_pulse(cfg, &mut rng, &mut leader_accels, 0.6);
    }
    let leader = integrate_open_loop(cfg, 0.0, setup.leader_speed, 1.0, &leader_accels);

    let v_follower = (setup.leader_speed + setup.approach_dv).max(0.5);
    let desired = uniform(&mut rng, (v_follower.max(setup.leader_speed) + 2.0, v_follower.max(setup.leader_speed) + 6.0));
    let params = draw_idm(cfg, &mut rng, desired);
    // Reference gap: the equilibrium gap at matched speeds, or the dynamic
    // desired gap when approaching faster.
    let ref_gap = if setup.approach_dv.abs() < 1.0 {
        params.equilibrium_gap(setup.leader_speed)
    } else {
        params.desired_gap(v_follower, setup.approach_dv)
    };
    let gap0 = ref_gap * setup.gap_factor;
    let x_f0 = leader.x[0] - gap0 - CAR_LENGTH;

    let follower = integrate_follower(cfg, &mut rng, x_f0, v_follower, &params, setup.beta, |j, _x, _v| {
        Some((leader.x[j] - _x[j] - CAR_LENGTH, leader.v[j], leader.a_eff[j.min(leader.a_eff.len() - 1)]))
    });

    let follower_role = if setup.tag_follower_av { RoleTag::Av } else { RoleTag::Follower };
    let mut agents = vec![
        longitudinal_track(cfg, 0, lane, RoleTag::Leader, &leader, lane_y, offset),
        longitudinal_track(cfg, 1, lane, follower_role, &follower, lane_y, offset),
    ];

    let lanes = spare_lanes(&[lane], setup.n_distractors, &mut rng);
    for (i, l) in lanes.iter().enumerate() {
        let x0 = follower.x[0] + uniform(&mut rng, (-45.0, 45.0));
        agents.push(distractor_track(cfg, &mut rng, 2 + i as u32, *l, x0, offset));
    }

    Scene { scene_id: scene_id.to_string(), scenario_kind: ScenarioKind::CarFollow, rng_seed: seed, agents }
}

fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

fn smoothstep_deriv(u: f64) -> f64 {
    if !(0.0..=1.0).contains(&u) {
        0.0
    } else {
        6.0 * u * (1.0 - u)
    }
}

fn build_cut_in(cfg: &SimConfig, seed: u64, scene_id: &str) -> Scene {
    let mut rng = rng::rng_from(seed);
    let offset = scene_offset(&mut rng);
    let target_lane = 1i32;
    let cutter_lane = 2i32;
    let y_target = target_lane as f64 * cfg.lane_width;
    let y_cutter = cutter_lane as f64 * cfg.lane_width;
    let n = cfg.total_states() - 1;

    let v_target = uniform(&mut rng, (8.0, 13.0));
    let v_cutter = v_target * uniform(&mut rng, (0.6, 0.85));
    let cuts = rng.random::<f64>() < 0.55;

    // Cutter: constant-ish speed, scripted lateral shift when it cuts.
    let cutter_accels = ou_series(&mut rng, n, 0.2, cfg.leader_wiggle_theta, cfg.dt);
    let cutter_long = integrate_open_loop(cfg, uniform(&mut rng, (6.0, 18.0)) + CAR_LENGTH, v_cutter, 1.0, &cutter_accels);

    let dur_steps = (2.0 / cfg.dt).round() as usize;
    let onset_lo = cfg.future_start() + 1;
    let onset_hi = (cfg.total_states() - dur_steps - cfg.reaction_delay_steps - 4).max(onset_lo + 1);
    let onset = rng.random_range(onset_lo..onset_hi);

    let total = cfg.total_states();
    let mut cutter_y = Vec::with_capacity(total);
    let mut cutter_vy = Vec::with_capacity(total);
    for i in 0..total {
        if cuts {
            let u = (i as f64 - onset as f64) / dur_steps as f64;
            cutter_y.push(y_cutter + (y_target - y_cutter) * smoothstep(u));
            cutter_vy.push((y_target - y_cutter) * smoothstep_deriv(u) / (dur_steps as f64 * cfg.dt));
        } else {
            cutter_y.push(y_cutter);
            cutter_vy.push(0.0);
        }
    }

    // Target: free IDM until the cutter is laterally inside its lane.
    let desired = uniform(&mut rng, (v_target + 1.0, v_target + 4.0));
    let params = draw_idm(cfg, &mut rng, desired);
    let beta = uniform(&mut rng, (0.75, 1.0));
    let half_lane = 0.5 * cfg.lane_width;
    let target = integrate_follower(cfg, &mut rng, 0.0, v_target, &params, beta, |j, x, _v| {
        let in_lane = (cutter_y[j] - y_target).abs() < half_lane;
        let ahead = cutter_long.x[j] > x[j];
        if in_lane && ahead {
            Some((
                cutter_long.x[j] - x[j] - CAR_LENGTH,
                cutter_long.v[j],
                cutter_long.a_eff[j.min(cutter_long.a_eff.len() - 1)],
            ))
        } else {
            None
        }
    });

    let cutter_pos: Vec<[f64; 2]> = cutter_long.x.iter().zip(&cutter_y).map(|(&x, &y)| [x, y]).collect();
    let cutter_vel: Vec<[f64; 2]> = cutter_long.v.iter().zip(&cutter_vy).map(|(&v, &vy)| [v, vy]).collect();

    let mut agents = vec![
        track_from_states(cfg, 0, cutter_lane, RoleTag::Leader, &cutter_pos, &cutter_vel, offset),
        longitudinal_track(cfg, 1, target_lane, RoleTag::Follower, &target, y_target, offset),
    ];
    let n_extra = rng.random_range(0..=cfg.max_distractors);
    let lanes = spare_lanes(&[target_lane, cutter_lane], n_extra, &mut rng);
    for (i, l) in lanes.iter().enumerate() {
        let x0 = target.x[0] + uniform(&mut rng, (-45.0, 45.0));
        agents.push(distractor_track(cfg, &mut rng, 2 + i as u32, *l, x0, offset));
    }

    Scene { scene_id: scene_id.to_string(), scenario_kind: ScenarioKind::CutIn, rng_seed: seed, agents }
}

fn build_yield_turn(cfg: &SimConfig, seed: u64, scene_id: &str) -> Scene {
    let mut rng = rng::rng_from(seed);
    let offset = scene_offset(&mut rng);
    let n = cfg.total_states() - 1;
    let half_lane = 0.5 * cfg.lane_width;

    // Oncoming traffic heads -x in the opposing lane.
    let mut on_accels = ou_series(&mut rng, n, 0.3, cfg.leader_wiggle_theta, cfg.dt);
    add_future_pulse(cfg, &mut rng, &mut on_accels, 0.65);
    let oncoming = integrate_open_loop(
        cfg,
        uniform(&mut rng, (28.0, 65.0)),
        uniform(&mut rng, (6.0, 11.0)),
        -1.0,
        &on_accels,
    );

    // Turner: stopped at a stop bar, then follows a quarter-circle left
    // turn once the oncoming agent has passed or is far enough away.
    let radius = 8.0;
    let center = [-5.0, radius - half_lane];
    let s_end = radius * std::f64::consts::FRAC_PI_2;
    let path = |s: f64| -> ([f64; 2], [f64; 2]) {
        if s <= s_end {
            let phi = s / radius;
            (
                [center[0] + radius * phi.sin(), center[1] - radius * phi.cos()],
                [phi.cos(), phi.sin()],
            )
        } else {
            ([center[0] + radius, center[1] + (s - s_end)], [0.0, 1.0])
        }
    };

    let delay = cfg.reaction_delay_steps;
    let conflict_x = 1.6;
    let a_go = 2.2;
    let v_turn = 7.5;
    let total = cfg.total_states();
    let mut s = 0.0;
    let mut v = 0.0;
    let mut going = false;
    let mut turner_pos = Vec::with_capacity(total);
    let mut turner_vel = Vec::with_capacity(total);
    {
        let (p, tangent) = path(0.0);
        turner_pos.push(p);
        turner_vel.push([tangent[0] * v, tangent[1] * v]);
    }
    for i in 0..n {
        let j = i.saturating_sub(delay);
        if !going {
            let x_on = oncoming.x[j];
            let v_on = oncoming.v[j];
            let passed = x_on < -2.0;
            let eta = if v_on > 0.3 { (x_on - conflict_x) / v_on } else { f64::INFINITY };
            let far = eta > 4.5 && x_on > conflict_x;
            let stalled = v_on <= 0.3 && x_on > 8.0;
            if passed || far || stalled {
                going = true;
            }
        }
        if going {
            let a = a_go + cfg.accel_noise_sigma * normal(&mut rng);
            v = (v + a * cfg.dt).clamp(0.0, v_turn);
        }
        s += v * cfg.dt;
        let (p, tangent) = path(s);
        turner_pos.push(p);
        turner_vel.push([tangent[0] * v, tangent[1] * v]);
    }

    let agents = vec![
        longitudinal_track(cfg, 0, 1, RoleTag::Leader, &oncoming, half_lane, offset),
        track_from_states(cfg, 1, 0, RoleTag::Follower, &turner_pos, &turner_vel, offset),
    ];
    Scene { scene_id: scene_id.to_string(), scenario_kind: ScenarioKind::YieldTurn, rng_seed: seed, agents }
}

fn build_independent(cfg: &SimConfig, seed: u64, scene_id: &str) -> Scene {
    let mut rng = rng::rng_from(seed);
    let offset = scene_offset(&mut rng);
    let n_agents = rng.random_range(2..=4usize.min(cfg.n_max));
    let n = cfg.total_states() - 1;
    let mut agents = Vec::with_capacity(n_agents);
    for (i, lane) in spare_lanes(&[], n_agents, &mut rng).into_iter().enumerate() {
        let mut accels = ou_series(&mut rng, n, cfg.leader_wiggle_sigma, cfg.leader_wiggle_theta, cfg.dt);
        if rng.random::<f64>() < 0.5 {
            add_future_pulse(cfg, &mut rng, &mut accels, 0.5);
        }
        let long = integrate_open_loop(
            cfg,
            uniform(&mut rng, (-40.0, 40.0)),
            uniform(&mut rng, (5.0, 13.0)),
            1.0,
            &accels,
        );
        agents.push(longitudinal_track(
            cfg,
            i as u32,
            lane,
            RoleTag::Independent,
            &long,
            lane as f64 * cfg.lane_width,
            offset,
        ));
    }
    Scene { scene_id: scene_id.to_string(), scenario_kind: ScenarioKind::Independent, rng_seed: seed, agents }
}

fn build_confounded_stop(cfg: &SimConfig, seed: u64, scene_id: &str) -> Scene {
    let mut rng = rng::rng_from(seed);
    let offset = scene_offset(&mut rng);
    let n = cfg.total_states() - 1;

    // Shared scripted stop time; everything else is drawn independently
    // per agent, so any cross-agent correlation flows only through it.
    let stop_lo = cfg.future_start() + 2;
    let stop_hi = cfg.total_states() - 8;
    let stop_step = rng.random_range(stop_lo..stop_hi);

    let mut agents = Vec::with_capacity(2);
    for (i, lane) in [0i32, 1].iter().enumerate() {
        let mut accels = ou_series(&mut rng, n, 0.15, cfg.leader_wiggle_theta, cfg.dt);
        let decel = uniform(&mut rng, (3.5, 5.5));
        for (k, a) in accels.iter_mut().enumerate() {
            if k >= stop_step {
                *a = -decel;
            }
        }
        let long = integrate_open_loop(
            cfg,
            uniform(&mut rng, (-20.0, 20.0)),
            uniform(&mut rng, (7.0, 13.0)),
            1.0,
            &accels,
        );
        agents.push(longitudinal_track(
            cfg,
            i as u32,
            *lane,
            RoleTag::Independent,
            &long,
            *lane as f64 * cfg.lane_width,
            offset,
        ));
    }
    Scene {
        scene_id: scene_id.to_string(),
        scenario_kind: ScenarioKind::ConfoundedStop,
        rng_seed: seed,
        agents,
    }
}

fn build_scene(cfg: &SimConfig, kind: ScenarioKind, seed: u64, scene_id: &str) -> Scene {
    match kind {
        ScenarioKind::CarFollow => {
            let mut rng = rng::rng_from(rng::derive_seed(seed, 0xCF, 0));
            let setup = CarFollowSetup::random(cfg, &mut rng);
            build_car_follow(cfg, &setup, seed, scene_id)
        }
        ScenarioKind::CutIn => build_cut_in(cfg, seed, scene_id),
        ScenarioKind::YieldTurn => build_yield_turn(cfg, seed, scene_id),
        ScenarioKind::Independent => build_independent(cfg, seed, scene_id),
        ScenarioKind::ConfoundedStop => build_confounded_stop(cfg, seed, scene_id),
    }
}

/// Purpose-built pruning scenes: the causally linked leader is farther from
/// the AV than three independent distractors, and the AV must brake for it
/// within the future window.
pub fn generate_pruning_scenes(cfg: &SimConfig, n: usize, master_seed: u64) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let mut scenes = Vec::with_capacity(n);
    for i in 0..n {
        let seed = rng::derive_seed(master_seed, tag::SCENE, 1_000_000 + i as u64);
        let mut rng = rng::rng_from(rng::derive_seed(seed, 0xAE, 0));
        let leader_speed = uniform(&mut rng, (3.5, 6.0));
        let setup = CarFollowSetup {
            leader_speed,
            approach_dv: uniform(&mut rng, (5.5, 8.5)),
            gap_factor: uniform(&mut rng, (1.05, 1.35)),
            beta: 0.9,
            n_distractors: 0,
            tag_follower_av: true,
            quiet_leader: true,
        };
        let mut scene = build_car_follow(cfg, &setup, seed, &format!("p{i:05}"));

        // Three distractors placed nearer to the AV than the leader, in
        // adjacent lanes, at constant speed. Positions are anchored to the
        // AV's present pose so the scene's global offset carries over.
        let av = scene.agent_with_role(RoleTag::Av).expect("av tagged");
        let av_present = av.present_pos();
        let av_lane = av.lane_index;
        let leader_present = scene.agent_with_role(RoleTag::Leader).expect("leader").present_pos();
        let leader_dist = (leader_present[0] - av_present[0]).abs();
        let mut rd = rng::rng_from(rng::derive_seed(seed, 0xD1, 0));
        let slots = [(1i32, 0.35), (-1i32, -0.3), (2i32, 0.5)];
        for (k, (lane_off, frac)) in slots.iter().enumerate() {
            let lane = av_lane + lane_off;
            let lane_y = av_present[1] + *lane_off as f64 * cfg.lane_width;
            let v = uniform(&mut rd, (4.0, 9.0));
            let present_x = av_present[0] + frac * leader_dist.min(35.0) + uniform(&mut rd, (-2.0, 2.0));
            let travelled = v * (cfg.future_start() - 1) as f64 * cfg.dt;
            let accels = vec![0.0; cfg.total_states() - 1];
            let long = integrate_open_loop(cfg, present_x - travelled, v, 1.0, &accels);
            scene.agents.push(longitudinal_track(
                cfg,
                2 + k as u32,
                lane,
                RoleTag::Independent,
                &long,
                lane_y,
                [0.0, 0.0],
            ));
        }
        scenes.push(scene);
    }
    Ok(scenes)
}

// ---------------------------------------------------------------------------
// Dataset-level operations
// ---------------------------------------------------------------------------

fn largest_remainder(total: usize, fractions: &[f64]) -> Vec<usize> {
    let quotas: Vec<f64> = fractions.iter().map(|f| f * total as f64).collect();
    let mut counts: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &idx in order.iter().take(total - assigned) {
        counts[idx] += 1;
    }
    counts
}

/// Generate the configured number of scenes. Deterministic given the seed;
/// per-kind counts follow the mix by largest remainder.
pub fn generate_dataset(cfg: &SimConfig, master_seed: u64) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let mix = cfg.mix.as_array();
    let fractions: Vec<f64> = mix.iter().map(|(_, f)| *f).collect();
    let counts = largest_remainder(cfg.n_scenes, &fractions);
    let mut kinds = Vec::with_capacity(cfg.n_scenes);
    for ((kind, _), count) in mix.iter().zip(&counts) {
        kinds.extend(std::iter::repeat(*kind).take(*count));
    }
    use rand::seq::SliceRandom;
    kinds.shuffle(&mut rng::derive_rng(master_seed, tag::SCENE_ORDER, 0));

    let mut scenes = Vec::with_capacity(cfg.n_scenes);
    for (i, kind) in kinds.iter().enumerate() {
        let seed = rng::derive_seed(master_seed, tag::SCENE, i as u64);
        let scene = build_scene(cfg, *kind, seed, &format!("s{i:06}"));
        debug_assert!(scene.agents.len() <= cfg.n_max);
        scenes.push(scene);
    }
    Ok(scenes)
}

/// Stratified three-way split. Within each scenario kind, scenes are
/// shuffled and dealt to the split with the largest running fair-share
/// deficit, which keeps both global and per-kind proportions within one
/// scene of the requested fractions.
pub fn split_dataset(
    scenes: Vec<Scene>,
    fractions: (f64, f64, f64),
    rng_seed: u64,
) -> Result<(Vec<Scene>, Vec<Scene>, Vec<Scene>)> {
    let f = [fractions.0, fractions.1, fractions.2];
    if f.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(CbpError::config("split.fractions", "all fractions must be positive"));
    }
    if (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CbpError::config("split.fractions", "fractions must sum to 1"));
    }
    let mut strata: BTreeMap<ScenarioKind, Vec<Scene>> = BTreeMap::new();
    for scene in scenes {
        strata.entry(scene.scenario_kind).or_default().push(scene);
    }
    let total: usize = strata.values().map(|v| v.len()).sum();
    if total < 3 || total < strata.len() {
        return Err(CbpError::config(
            "split",
            format!("{total} scenes are too few to populate three stratified splits"),
        ));
    }

    use rand::seq::SliceRandom;
    let mut out: [Vec<Scene>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut processed = 0usize;
    for (kind, mut bucket) in strata {
        bucket.shuffle(&mut rng::derive_rng(rng_seed, tag::SPLIT, kind as u64));
        for scene in bucket {
            processed += 1;
            let mut best = 0;
            let mut best_deficit = f64::NEG_INFINITY;
            for i in 0..3 {
                let deficit = f[i] * processed as f64 - out[i].len() as f64;
                if deficit > best_deficit + 1e-12 {
                    best = i;
                    best_deficit = deficit;
                }
            }
            out[best].push(scene);
        }
    }
    let [train, val, test] = out;
    Ok((train, val, test))
}
