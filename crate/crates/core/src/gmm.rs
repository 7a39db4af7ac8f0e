//! Gaussian-mixture distributions over fixed-horizon trajectories.
//!
//! A [`TrajectoryGmm`] has K modes; each mode carries a probability and one
//! axis-aligned Gaussian per waypoint. The density of a trajectory is the
//! mixture over modes of the product of per-waypoint densities. All mass
//! computations are done in log space with log-sum-exp.

use crate::error::{CbpError, Result};
use crate::rng;
use crate::trajectory::Trajectory;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Lower bound on per-axis standard deviation (meters). Keeps every
/// covariance positive definite and densities finite.
pub const STD_FLOOR: f64 = 1e-3;

const LN_2PI: f64 = 1.837877066409345_f64;

/// Axis-aligned bivariate Gaussian over one waypoint position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointGaussian {
    pub mean: [f64; 2],
    /// Per-axis standard deviation; the covariance is `diag(std^2)`.
    pub std: [f64; 2],
}

impl WaypointGaussian {
    pub fn new(mean: [f64; 2], std: [f64; 2]) -> Result<Self> {
        let g = WaypointGaussian { mean, std };
        g.validate()?;
        Ok(g)
    }

    /// Isotropic Gaussian with the given sigma.
    pub fn isotropic(mean: [f64; 2], sigma: f64) -> Result<Self> {
        Self::new(mean, [sigma, sigma])
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mean[0].is_finite() && self.mean[1].is_finite()) {
            return Err(CbpError::Numeric("non-finite waypoint mean".into()));
        }
        for s in self.std {
            if !s.is_finite() || s < STD_FLOOR {
                return Err(CbpError::Numeric(format!(
                    "waypoint std {s} below floor {STD_FLOOR} or non-finite"
                )));
            }
        }
        Ok(())
    }

    /// Covariance as a full 2x2 matrix (row major).
    pub fn covariance(&self) -> [[f64; 2]; 2] {
        [[self.std[0] * self.std[0], 0.0], [0.0, self.std[1] * self.std[1]]]
    }

    pub fn log_density(&self, p: [f64; 2]) -> f64 {
        let zx = (p[0] - self.mean[0]) / self.std[0];
        let zy = (p[1] - self.mean[1]) / self.std[1];
        -LN_2PI - self.std[0].ln() - self.std[1].ln() - 0.5 * (zx * zx + zy * zy)
    }

    fn draw<R: Rng>(&self, rng: &mut R) -> [f64; 2] {
        let ex: f64 = StandardNormal.sample(rng);
        let ey: f64 = StandardNormal.sample(rng);
        [self.mean[0] + self.std[0] * ex, self.mean[1] + self.std[1] * ey]
    }
}

/// One mixture mode: an intent with probability `prob` and per-step
/// positional uncertainty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GmmMode {
    pub prob: f64,
    pub waypoints: Vec<WaypointGaussian>,
}

/// K-mode Gaussian mixture over trajectories of a fixed horizon.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryGmm {
    modes: Vec<GmmMode>,
    dt: f64,
}

impl TrajectoryGmm {
    pub fn new(modes: Vec<GmmMode>, dt: f64) -> Result<Self> {
        if modes.is_empty() {
            return Err(CbpError::Argument("mixture needs at least one mode".into()));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(CbpError::Argument(format!("dt must be positive, got {dt}")));
        }
        let horizon = modes[0].waypoints.len();
        if horizon == 0 {
            return Err(CbpError::Argument("mixture horizon must be >= 1".into()));
        }
        let mut total = 0.0;
        for (k, mode) in modes.iter().enumerate() {
            if mode.waypoints.len() != horizon {
                return Err(CbpError::Dimension(format!(
                    "mode {k} has {} waypoints, expected {horizon}",
                    mode.waypoints.len()
                )));
            }
            if !mode.prob.is_finite() || mode.prob <= 0.0 || mode.prob > 1.0 {
                return Err(CbpError::Argument(format!(
                    "mode {k} probability {} outside (0, 1]",
                    mode.prob
                )));
            }
            for w in &mode.waypoints {
                w.validate()?;
            }
            total += mode.prob;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(CbpError::Argument(format!(
                "mode probabilities sum to {total}, expected 1 within 1e-9"
            )));
        }
        Ok(TrajectoryGmm { modes, dt })
    }

    /// Build from unnormalized logits (softmax) and per-mode waypoints.
    pub fn from_logits(logits: &[f64], waypoints: Vec<Vec<WaypointGaussian>>, dt: f64) -> Result<Self> {
        if logits.len() != waypoints.len() {
            return Err(CbpError::Dimension(format!(
                "{} logits for {} modes",
                logits.len(),
                waypoints.len()
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(CbpError::Numeric("non-finite mode logit".into()));
        }
        let probs = softmax(logits);
        let modes = probs
            .into_iter()
            .zip(waypoints)
            .map(|(prob, wps)| GmmMode { prob, waypoints: wps })
            .collect();
        TrajectoryGmm::new(modes, dt)
    }

    pub fn modes(&self) -> &[GmmMode] {
        &self.modes
    }

    pub fn mode_count(&self) -> usize {
        self.modes.len()
    }

    pub fn horizon(&self) -> usize {
        self.modes[0].waypoints.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// The mean trajectory of mode `k`.
    pub fn mode_mean_trajectory(&self, k: usize) -> Result<Trajectory> {
        let mode = self
            .modes
            .get(k)
            .ok_or_else(|| CbpError::Argument(format!("mode index {k} out of range")))?;
        Trajectory::new(mode.waypoints.iter().map(|w| w.mean).collect(), self.dt)
    }

    /// Mixture log density of a trajectory:
    /// `log sum_k pi_k prod_t N(s_t | mu_t^k, Sigma_t^k)`.
    pub fn log_likelihood(&self, traj: &Trajectory) -> Result<f64> {
        if traj.horizon() != self.horizon() {
            return Err(CbpError::Dimension(format!(
                "trajectory horizon {} vs mixture horizon {}",
                traj.horizon(),
                self.horizon()
            )));
        }
        let mut per_mode = Vec::with_capacity(self.modes.len());
        for mode in &self.modes {
            let mut acc = mode.prob.ln();
            for (w, s) in mode.waypoints.iter().zip(traj.states()) {
                acc += w.log_density(*s);
            }
            per_mode.push(acc);
        }
        let ll = log_sum_exp(&per_mode);
        if !ll.is_finite() {
            return Err(CbpError::Numeric(format!("log-likelihood {ll} not finite")));
        }
        Ok(ll)
    }

    /// Draw `n` trajectories: categorical mode choice, then independent
    /// per-waypoint Gaussian draws. Deterministic given the seed.
    pub fn sample(&self, rng_seed: u64, n: usize) -> Result<Vec<Trajectory>> {
        if n == 0 {
            return Err(CbpError::Argument("sample count must be >= 1".into()));
        }
        let mut rng = rng::derive_rng(rng_seed, rng::tag::GMM_SAMPLE, 0);
        Ok((0..n).map(|_| self.sample_one(&mut rng)).collect())
    }

    pub fn sample_one<R: Rng>(&self, rng: &mut R) -> Trajectory {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut chosen = self.modes.len() - 1;
        for (k, mode) in self.modes.iter().enumerate() {
            acc += mode.prob;
            if u < acc {
                chosen = k;
                break;
            }
        }
        let states = self.modes[chosen].waypoints.iter().map(|w| w.draw(rng)).collect();
        Trajectory::new(states, self.dt).expect("sampled states are finite")
    }

    /// The `m` highest-probability modes in descending probability,
    /// ties broken by lower index. Returns `(prob, mode_index)` pairs.
    pub fn most_likely_modes(&self, m: usize) -> Result<Vec<(f64, usize)>> {
        if m == 0 || m > self.modes.len() {
            return Err(CbpError::Argument(format!(
                "requested {m} modes from a {}-mode mixture",
                self.modes.len()
            )));
        }
        let mut order: Vec<usize> = (0..self.modes.len()).collect();
        order.sort_by(|&a, &b| {
            self.modes[b]
                .prob
                .partial_cmp(&self.modes[a].prob)
                .expect("probabilities are finite")
                .then(a.cmp(&b))
        });
        Ok(order.into_iter().take(m).map(|k| (self.modes[k].prob, k)).collect())
    }

    /// Same mixture with every mean shifted by a constant offset.
    pub fn translated(&self, offset: [f64; 2]) -> TrajectoryGmm {
        let modes = self
            .modes
            .iter()
            .map(|m| GmmMode {
                prob: m.prob,
                waypoints: m
                    .waypoints
                    .iter()
                    .map(|w| WaypointGaussian {
                        mean: [w.mean[0] + offset[0], w.mean[1] + offset[1]],
                        std: w.std,
                    })
                    .collect(),
            })
            .collect();
        TrajectoryGmm { modes, dt: self.dt }
    }
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}
