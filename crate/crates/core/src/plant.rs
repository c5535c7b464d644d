//! LIPFM plant used as ground truth in closed-loop runs.
//!
//! The CoM obeys `c̈ = ω²(c - p) + F/m` with `p` the CMP of the applied ZMP
//! and moment. For inputs held constant over `dt` the update is exact:
//! with `u = p - F/(m ω²)`,
//! `c(dt) = u + (c - u) cosh(ω dt) + ċ/ω sinh(ω dt)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::{Phase, Side, Stance, SupportBands};
use crate::model::{capture_point, CamState, CentroidalMoment, PlanarPoint, RobotParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantLimits {
    pub tau_max_nm: f64,
    pub cam_max_nms: f64,
    pub bands: SupportBands,
}

impl Default for PlantLimits {
    fn default() -> Self {
        Self {
            tau_max_nm: 15.0,
            cam_max_nms: 30.0,
            bands: SupportBands::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlantState {
    pub com: PlanarPoint,
    pub com_vel: PlanarPoint,
    pub cam: CamState,
    /// Foot carrying the robot in SSP; the foot being loaded in DSP.
    pub support: Stance,
    /// Foot being unloaded during DSP (equal to `support` otherwise).
    pub trailing: Stance,
    pub phase: Phase,
    /// Time since the current step began (its DSP start).
    pub step_clock_s: f64,
    pub step_index: usize,
    pub time_s: f64,
}

impl PlantState {
    /// Standing at the start of a step: DSP from `trailing` onto `support`.
    pub fn at_rest(com: PlanarPoint, trailing: Stance, support: Stance) -> Self {
        Self {
            com,
            com_vel: PlanarPoint::ZERO,
            cam: CamState::default(),
            support,
            trailing,
            phase: Phase::Dsp,
            step_clock_s: 0.0,
            step_index: 0,
            time_s: 0.0,
        }
    }

    pub fn cp(&self, omega: f64) -> PlanarPoint {
        capture_point(self.com, self.com_vel, omega)
    }

    /// Physical ZMP region for the current contact.
    pub fn support_region(&self, bands: &SupportBands) -> (PlanarPoint, PlanarPoint) {
        if self.phase.is_dsp() {
            bands.hull(self.trailing.position, self.support.position)
        } else {
            bands.around(self.support.position)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Disturbance {
    Push {
        force_n: PlanarPoint,
        t_start_s: f64,
        duration_s: f64,
    },
    /// Instant CP shift applied when step `step_index` lands.
    TouchdownCpShift { offset_m: PlanarPoint, step_index: usize },
}

impl Disturbance {
    /// Push of `impulse` N·s over `duration` toward `direction_deg`, where
    /// 0° is +x and 90° is -y.
    pub fn push_from_direction(direction_deg: f64, impulse_ns: f64, t_start_s: f64, duration_s: f64) -> Self {
        let th = direction_deg.to_radians();
        let mag = impulse_ns / duration_s;
        Disturbance::Push {
            force_n: PlanarPoint::new(mag * th.cos(), -mag * th.sin()),
            t_start_s,
            duration_s,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Disturbance::Push {
                force_n,
                t_start_s,
                duration_s,
            } => {
                if !(duration_s > 0.0) || !force_n.is_finite() || !t_start_s.is_finite() {
                    return Err(Error::domain("push needs a finite force and positive duration"));
                }
            }
            Disturbance::TouchdownCpShift { offset_m, .. } => {
                if !offset_m.is_finite() {
                    return Err(Error::domain("touchdown shift must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Force active on `[t, t + dt)`, sampled at the interval midpoint.
    pub fn force_at(&self, t: f64, dt: f64) -> PlanarPoint {
        match *self {
            Disturbance::Push {
                force_n,
                t_start_s,
                duration_s,
            } => {
                let mid = t + 0.5 * dt;
                if mid >= t_start_s && mid < t_start_s + duration_s {
                    force_n
                } else {
                    PlanarPoint::ZERO
                }
            }
            Disturbance::TouchdownCpShift { .. } => PlanarPoint::ZERO,
        }
    }
}

/// Inputs actually applied by the plant after saturation.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AppliedInput {
    pub zmp: PlanarPoint,
    pub moment: CentroidalMoment,
}

/// Clamps the commanded ZMP to the contact region and the moment to its limit
/// and to what the momentum saturation band admits over `dt`.
pub fn saturate(
    state: &PlantState,
    zmp: PlanarPoint,
    moment: CentroidalMoment,
    limits: &PlantLimits,
    dt: f64,
) -> AppliedInput {
    let (lo, hi) = state.support_region(&limits.bands);
    let zmp = PlanarPoint::new(zmp.x.clamp(lo.x, hi.x), zmp.y.clamp(lo.y, hi.y));
    let clamp_tau = |tau: f64, h: f64| {
        let t = tau.clamp(-limits.tau_max_nm, limits.tau_max_nm);
        let lo = (-limits.cam_max_nms - h) / dt;
        let hi = (limits.cam_max_nms - h) / dt;
        t.clamp(lo.min(0.0), hi.max(0.0))
    };
    AppliedInput {
        zmp,
        moment: CentroidalMoment {
            tau_x: clamp_tau(moment.tau_x, state.cam.h_x),
            tau_y: clamp_tau(moment.tau_y, state.cam.h_y),
        },
    }
}

/// Advances the plant by `dt` under saturated inputs and the given external force.
pub fn plant_step(
    state: &PlantState,
    zmp: PlanarPoint,
    moment: CentroidalMoment,
    force: PlanarPoint,
    limits: &PlantLimits,
    params: &RobotParams,
    dt: f64,
) -> Result<(PlantState, AppliedInput)> {
    if !(dt > 0.0 && dt <= 0.005) {
        return Err(Error::domain(format!("plant step {dt} s outside (0, 0.005]")));
    }
    let applied = saturate(state, zmp, moment, limits, dt);
    let w = params.omega_per_s;
    let mg = params.weight_n();
    let pivot = applied.moment.pivot();
    let (ch, sh) = ((w * dt).cosh(), (w * dt).sinh());
    let mut next = *state;
    let advance = |c: f64, v: f64, z: f64, piv: f64, f: f64| {
        let u = z + piv / mg - f / (params.mass_kg * w * w);
        let d = c - u;
        (u + d * ch + v / w * sh, d * w * sh + v * ch)
    };
    let (cx, vx) = advance(state.com.x, state.com_vel.x, applied.zmp.x, pivot.x, force.x);
    let (cy, vy) = advance(state.com.y, state.com_vel.y, applied.zmp.y, pivot.y, force.y);
    next.com = PlanarPoint::new(cx, cy);
    next.com_vel = PlanarPoint::new(vx, vy);
    next.cam = CamState {
        h_x: (state.cam.h_x + applied.moment.tau_x * dt).clamp(-limits.cam_max_nms, limits.cam_max_nms),
        h_y: (state.cam.h_y + applied.moment.tau_y * dt).clamp(-limits.cam_max_nms, limits.cam_max_nms),
    };
    next.step_clock_s += dt;
    next.time_s += dt;
    Ok((next, applied))
}

/// Footstep and step time the controller has committed to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Commitment {
    pub footstep: PlanarPoint,
    pub side: Side,
    pub step_time_s: f64,
    pub dsp_s: f64,
}

/// Phase transitions, evaluated on the control grid with half-period slack.
/// Returns true when a new foot landed.
pub fn advance_phase(state: &mut PlantState, committed: &Commitment, half_period_s: f64) -> bool {
    if state.phase.is_dsp() && state.step_clock_s >= committed.dsp_s - half_period_s {
        state.phase = Phase::ssp(state.support.side);
        state.trailing = state.support;
    }
    if !state.phase.is_dsp() && state.step_clock_s >= committed.step_time_s - half_period_s {
        state.trailing = state.support;
        state.support = Stance {
            position: committed.footstep,
            side: committed.side,
        };
        state.phase = Phase::Dsp;
        state.step_clock_s = 0.0;
        state.step_index += 1;
        return true;
    }
    false
}

/// Shifts the CP by `offset` keeping the CoM in place.
pub fn apply_cp_shift(state: &mut PlantState, offset: PlanarPoint, omega: f64) {
    state.com_vel += offset * omega;
}

/// Thresholds of the fall detector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FallCriteria {
    pub cp_foot_distance_m: f64,
    pub cp_error_m: f64,
    pub sustain_s: f64,
}

impl Default for FallCriteria {
    fn default() -> Self {
        Self {
            cp_foot_distance_m: 0.7,
            cp_error_m: 0.5,
            sustain_s: 1.0,
        }
    }
}

/// Tracks how long the CP error has been above threshold.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FallDetector {
    pub criteria: FallCriteria,
    over_since: Option<f64>,
}

impl FallDetector {
    pub fn new(criteria: FallCriteria) -> Self {
        Self {
            criteria,
            over_since: None,
        }
    }

    pub fn update(&mut self, state: &PlantState, xi_ref: PlanarPoint, omega: f64) -> bool {
        let c = self.criteria;
        let xi = state.cp(omega);
        let near = (xi - state.support.position)
            .norm()
            .min((xi - state.trailing.position).norm());
        if near > c.cp_foot_distance_m {
            return true;
        }
        if (xi - xi_ref).norm() > c.cp_error_m {
            let since = *self.over_since.get_or_insert(state.time_s);
            state.time_s - since >= c.sustain_s
        } else {
            self.over_since = None;
            false
        }
    }
}

/// Stateless check of the geometric part of the fall criterion.
pub fn detect_fall(state: &PlantState, omega: f64, criteria: &FallCriteria) -> bool {
    let xi = state.cp(omega);
    let near = (xi - state.support.position)
        .norm()
        .min((xi - state.trailing.position).norm());
    near > criteria.cp_foot_distance_m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stand() -> PlantState {
        let foot = Stance {
            position: PlanarPoint::new(0.0, 0.1),
            side: Side::Left,
        };
        let mut s = PlantState::at_rest(PlanarPoint::new(0.0, 0.1), foot, foot);
        s.phase = Phase::SspLeft;
        s
    }

    #[test]
    fn equilibrium_holds() {
        let p = RobotParams::default();
        let lim = PlantLimits::default();
        let mut s = stand();
        for _ in 0..10_000 {
            s = plant_step(
                &s,
                s.com,
                CentroidalMoment::default(),
                PlanarPoint::ZERO,
                &lim,
                &p,
                0.001,
            )
            .unwrap()
            .0;
        }
        assert!((s.com - PlanarPoint::new(0.0, 0.1)).norm() <= 1e-9);
        assert!((s.time_s - 10.0).abs() < 1e-9);
    }

    #[test]
    fn push_changes_velocity_by_impulse_over_mass() {
        let p = RobotParams::default();
        let lim = PlantLimits::default();
        let mut s = stand();
        let f = PlanarPoint::new(240.0, 0.0);
        for _ in 0..200 {
            // keep the CMP on the CoM so only the push accelerates it
            s = plant_step(&s, s.com, CentroidalMoment::default(), f, &lim, &p, 0.001)
                .unwrap()
                .0;
        }
        assert!((s.com_vel.x - 0.48).abs() < 0.02, "{}", s.com_vel.x);
    }

    #[test]
    fn rejects_large_step() {
        let p = RobotParams::default();
        assert!(plant_step(
            &stand(),
            PlanarPoint::ZERO,
            CentroidalMoment::default(),
            PlanarPoint::ZERO,
            &PlantLimits::default(),
            &p,
            0.01
        )
        .is_err());
    }

    #[test]
    fn zmp_is_clamped_to_the_foot() {
        let lim = PlantLimits::default();
        let a = saturate(
            &stand(),
            PlanarPoint::new(1.0, -1.0),
            CentroidalMoment::default(),
            &lim,
            0.001,
        );
        assert!((a.zmp.x - 0.12).abs() < 1e-15);
        assert!((a.zmp.y - 0.03).abs() < 1e-15);
    }

    #[test]
    fn momentum_band_limits_moment() {
        let lim = PlantLimits {
            cam_max_nms: 1.5,
            ..PlantLimits::default()
        };
        let mut s = stand();
        s.cam.h_y = 1.495;
        let a = saturate(
            &s,
            s.com,
            CentroidalMoment {
                tau_x: 0.0,
                tau_y: 15.0,
            },
            &lim,
            0.001,
        );
        assert!((a.moment.tau_y - 5.0).abs() < 1e-9);
        let a = saturate(
            &s,
            s.com,
            CentroidalMoment {
                tau_x: 0.0,
                tau_y: -15.0,
            },
            &lim,
            0.001,
        );
        assert_eq!(a.moment.tau_y, -15.0);
    }

    #[test]
    fn phase_cadence_follows_commitment() {
        let left = Stance {
            position: PlanarPoint::new(0.0, 0.1),
            side: Side::Left,
        };
        let right = Stance {
            position: PlanarPoint::new(0.0, -0.1),
            side: Side::Right,
        };
        let mut s = PlantState::at_rest(PlanarPoint::ZERO, right, left);
        let c = Commitment {
            footstep: right.position,
            side: Side::Right,
            step_time_s: 0.74,
            dsp_s: 0.3,
        };
        let mut landed_at = None;
        for k in 1..=50 {
            s.step_clock_s = 0.02 * k as f64;
            if advance_phase(&mut s, &c, 0.01) {
                landed_at = Some(0.02 * k as f64);
                break;
            }
            if (0.02 * k as f64) >= 0.3 - 1e-9 {
                assert_eq!(s.phase, Phase::SspLeft);
            }
        }
        assert!((landed_at.unwrap() - 0.74).abs() < 1e-9);
        assert_eq!(s.support.side, Side::Right);
        assert_eq!(s.trailing.side, Side::Left);
        assert_eq!(s.phase, Phase::Dsp);
    }

    #[test]
    fn push_direction_convention() {
        let Disturbance::Push { force_n, .. } = Disturbance::push_from_direction(90.0, 48.0, 0.0, 0.2) else {
            unreachable!()
        };
        assert!(force_n.x.abs() < 1e-12);
        assert!((force_n.y + 240.0).abs() < 1e-9);
    }
}
