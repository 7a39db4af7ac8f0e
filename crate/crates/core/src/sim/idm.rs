//! Intelligent-driver-model car-following law.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired free-road speed (m/s).
    pub desired_speed: f64,
    /// Desired time headway (s).
    pub time_headway: f64,
    /// Maximum comfortable acceleration (m/s^2).
    pub max_accel: f64,
    /// Comfortable deceleration (m/s^2).
    pub comfort_decel: f64,
    /// Jam distance: minimum standstill gap (m).
    pub jam_distance: f64,
}

impl IdmParams {
    /// Desired dynamic gap `s*(v, dv) = s0 + v T + v dv / (2 sqrt(a b))`,
    /// floored at the jam distance.
    pub fn desired_gap(&self, v: f64, approach_rate: f64) -> f64 {
        let dynamic = self.jam_distance
            + v * self.time_headway
            + v * approach_rate / (2.0 * (self.max_accel * self.comfort_decel).sqrt());
        dynamic.max(self.jam_distance)
    }

    /// IDM acceleration for gap `s` to the leader, own speed `v` and leader
    /// speed `v_lead`. With no leader pass `s = +inf`.
    pub fn accel(&self, gap: f64, v: f64, v_lead: f64) -> f64 {
        let free = 1.0 - (v / self.desired_speed).powi(4);
        if !gap.is_finite() {
            return self.max_accel * free;
        }
        let s_star = self.desired_gap(v, v - v_lead);
        let gap = gap.max(0.1);
        self.max_accel * (free - (s_star / gap).powi(2))
    }

    /// Gap at which a follower moving at the leader's constant speed `v`
    /// holds zero acceleration: `s*(v, 0) / sqrt(1 - (v/v0)^4)`.
    pub fn equilibrium_gap(&self, v: f64) -> f64 {
        let free = 1.0 - (v / self.desired_speed).powi(4);
        assert!(free > 0.0, "no equilibrium at or above the desired speed");
        self.desired_gap(v, 0.0) / free.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> IdmParams {
        IdmParams {
            desired_speed: 14.0,
            time_headway: 1.5,
            max_accel: 2.0,
            comfort_decel: 3.0,
            jam_distance: 2.5,
        }
    }

    #[test]
    fn zero_accel_at_equilibrium_gap() {
        let p = params();
        for v in [3.0, 8.0, 12.0] {
            let gap = p.equilibrium_gap(v);
            assert!(p.accel(gap, v, v).abs() < 1e-12, "v={v}");
        }
    }

    #[test]
    fn free_road_accelerates_below_desired_speed() {
        let p = params();
        assert!(p.accel(f64::INFINITY, 5.0, 0.0) > 0.0);
        assert!(p.accel(f64::INFINITY, 14.0, 0.0).abs() < 1e-12);
    }

    #[test]
    fn closing_fast_brakes() {
        let p = params();
        assert!(p.accel(10.0, 12.0, 2.0) < -1.0);
    }
}
