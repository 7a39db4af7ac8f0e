//! Fixed-horizon, time-discretized 2-D trajectories.

use crate::error::{CbpError, Result};
use serde::{Deserialize, Serialize};

/// A fixed-length sequence of planar positions sampled every `dt` seconds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Vec<[f64; 2]>,
    dt: f64,
}

impl Trajectory {
    pub fn new(states: Vec<[f64; 2]>, dt: f64) -> Result<Self> {
        let traj = Trajectory { states, dt };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(CbpError::Argument("trajectory horizon must be >= 1".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(CbpError::Argument(format!("dt must be positive, got {}", self.dt)));
        }
        for (t, s) in self.states.iter().enumerate() {
            if !(s[0].is_finite() && s[1].is_finite()) {
                return Err(CbpError::Numeric(format!("non-finite coordinate at step {t}")));
            }
        }
        Ok(())
    }

    pub fn horizon(&self) -> usize {
        self.states.len()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn states(&self) -> &[[f64; 2]] {
        &self.states
    }

    pub fn state(&self, t: usize) -> [f64; 2] {
        self.states[t]
    }

    pub fn endpoint(&self) -> [f64; 2] {
        *self.states.last().expect("horizon >= 1")
    }

    /// Same trajectory shifted by a constant offset.
    pub fn translated(&self, offset: [f64; 2]) -> Trajectory {
        Trajectory {
            states: self
                .states
                .iter()
                .map(|s| [s[0] + offset[0], s[1] + offset[1]])
                .collect(),
            dt: self.dt,
        }
    }
}
