//! Intelligent driver model: desired-gap and acceleration laws used both to
//! drive simulated traffic and as the traffic feature of the planner cost.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Jam distance (m).
    pub s0: f64,
    /// Time headway (s).
    pub t_headway: f64,
    /// Maximum acceleration (m/s^2).
    pub a_max: f64,
    /// Comfortable braking deceleration (m/s^2).
    pub b_comf: f64,
    /// Desired speed (m/s).
    pub v0: f64,
}

impl IdmParams {
    pub fn with_desired_speed(v0: f64) -> Self {
        IdmParams {
            s0: 2.0,
            t_headway: 1.5,
            a_max: 1.0,
            b_comf: 1.5,
            v0,
        }
    }
}

/// Desired spatial headway s* = s0 + max(0, v*T + v*dv / (2 sqrt(a_max b_comf))).
/// `dv` is own speed minus leader speed.
pub fn idm_desired_gap(v: f64, dv: f64, p: &IdmParams) -> f64 {
    let dynamic = v * p.t_headway + v * dv / (2.0 * (p.a_max * p.b_comf).sqrt());
    p.s0 + dynamic.max(0.0)
}

/// IDM acceleration a = a_max (1 - (v/v0)^4 - (s*/gap)^2).
/// A non-positive gap means an imminent collision: apply hard braking.
pub fn idm_acceleration(v: f64, gap: f64, dv: f64, p: &IdmParams) -> f64 {
    if gap <= 0.0 {
        return -p.b_comf * 4.0;
    }
    let s_star = idm_desired_gap(v, dv, p);
    p.a_max * (1.0 - (v / p.v0).powi(4) - (s_star / gap).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> IdmParams {
        IdmParams {
            s0: 2.0,
            t_headway: 1.5,
            a_max: 1.0,
            b_comf: 1.5,
            v0: 10.0,
        }
    }

    #[test]
    fn stationary_gap_is_jam_distance() {
        assert_eq!(idm_desired_gap(0.0, 0.0, &params()), 2.0);
    }

    #[test]
    fn cruise_gap() {
        // 2 + 10 * 1.5 = 17
        assert!((idm_desired_gap(10.0, 0.0, &params()) - 17.0).abs() < 1e-12);
    }

    #[test]
    fn much_faster_leader_clamps_to_jam_distance() {
        assert_eq!(idm_desired_gap(10.0, -100.0, &params()), 2.0);
    }

    #[test]
    fn free_flow_equilibrium() {
        // At v = v0 with a huge gap, acceleration tends to 0 from below.
        let a = idm_acceleration(10.0, 1e9, 0.0, &params());
        assert!(a <= 0.0 && a.abs() < 1e-6);
    }

    #[test]
    fn standing_start_accelerates_at_a_max() {
        let a = idm_acceleration(0.0, 1e9, 0.0, &params());
        assert!((a - 1.0).abs() < 1e-6);
    }

    #[test]
    fn hand_evaluated_case() {
        let p = IdmParams {
            s0: 2.0,
            t_headway: 1.5,
            a_max: 1.0,
            b_comf: 1.5,
            v0: 10.0,
        };
        // s* = 2 + 5*1.5 = 9.5; a = 1 - (5/10)^4 - (9.5/20)^2 = 0.711875
        let a = idm_acceleration(5.0, 20.0, 0.0, &p);
        assert!((a - 0.711875).abs() < 1e-9);
    }

    #[test]
    fn zero_gap_brakes_hard() {
        let a = idm_acceleration(5.0, 0.0, 0.0, &params());
        assert_eq!(a, -6.0);
    }
}
