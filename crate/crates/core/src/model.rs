//! Linear inverted pendulum plus flywheel (LIPFM) and capture-point dynamics.
//!
//! The two horizontal axes are decoupled. Each axis is driven by a ZMP and a
//! "pivot moment": for the x axis that is the flywheel torque `tau_y`, for the
//! y axis it is `-tau_x`. With that convention the CMP of either axis is
//! `p = z + u / (m g)`.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Horizontal axis selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
}

impl Axis {
    pub const BOTH: [Axis; 2] = [Axis::X, Axis::Y];
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct PlanarPoint {
    pub x: f64,
    pub y: f64,
}

impl PlanarPoint {
    pub const ZERO: PlanarPoint = PlanarPoint { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn map(self, f: impl Fn(f64) -> f64) -> Self {
        Self::new(f(self.x), f(self.y))
    }

    pub fn zip_with(self, other: Self, f: impl Fn(f64, f64) -> f64) -> Self {
        Self::new(f(self.x, other.x), f(self.y, other.y))
    }

    pub fn get(self, axis: Axis) -> f64 {
        self[axis]
    }
}

impl Index<Axis> for PlanarPoint {
    type Output = f64;
    fn index(&self, axis: Axis) -> &f64 {
        match axis {
            Axis::X => &self.x,
            Axis::Y => &self.y,
        }
    }
}

impl IndexMut<Axis> for PlanarPoint {
    fn index_mut(&mut self, axis: Axis) -> &mut f64 {
        match axis {
            Axis::X => &mut self.x,
            Axis::Y => &mut self.y,
        }
    }
}

impl Add for PlanarPoint {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for PlanarPoint {
    fn add_assign(&mut self, o: Self) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for PlanarPoint {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self::new(self.x - o.x, self.y - o.y)
    }
}

impl SubAssign for PlanarPoint {
    fn sub_assign(&mut self, o: Self) {
        self.x -= o.x;
        self.y -= o.y;
    }
}

impl Mul<f64> for PlanarPoint {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self::new(self.x * s, self.y * s)
    }
}

impl Neg for PlanarPoint {
    type Output = Self;
    fn neg(self) -> Self {
        Self::new(-self.x, -self.y)
    }
}

/// Centroidal angular momentum about the CoM [N·m·s].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CamState {
    pub h_x: f64,
    pub h_y: f64,
}

impl CamState {
    /// Momentum seen by the given axis' pivot-moment channel (`h_y` for x, `-h_x` for y).
    pub fn axis_momentum(self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.h_y,
            Axis::Y => -self.h_x,
        }
    }
}

/// Centroidal moment produced by the flywheel [N·m].
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CentroidalMoment {
    pub tau_x: f64,
    pub tau_y: f64,
}

impl CentroidalMoment {
    /// Builds the moment from per-axis pivot moments `(tau_y, -tau_x)`.
    pub fn from_pivot(pivot: PlanarPoint) -> Self {
        Self {
            tau_x: -pivot.y,
            tau_y: pivot.x,
        }
    }

    /// Per-axis pivot moments `(tau_y, -tau_x)`.
    pub fn pivot(self) -> PlanarPoint {
        PlanarPoint::new(self.tau_y, -self.tau_x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobotParams {
    pub mass_kg: f64,
    pub com_height_m: f64,
    pub gravity_mps2: f64,
    pub omega_per_s: f64,
    pub control_period_s: f64,
    pub horizon_ticks: usize,
}

impl RobotParams {
    pub fn new(
        mass_kg: f64,
        com_height_m: f64,
        gravity_mps2: f64,
        control_period_s: f64,
        horizon_ticks: usize,
    ) -> Result<Self> {
        if !(mass_kg > 0.0 && mass_kg.is_finite()) {
            return Err(Error::domain("mass must be positive"));
        }
        if !(control_period_s > 0.0 && control_period_s.is_finite()) {
            return Err(Error::domain("control period must be positive"));
        }
        if horizon_ticks == 0 {
            return Err(Error::domain("horizon must contain at least one tick"));
        }
        let omega_per_s = natural_frequency(gravity_mps2, com_height_m)?;
        Ok(Self {
            mass_kg,
            com_height_m,
            gravity_mps2,
            omega_per_s,
            control_period_s,
            horizon_ticks,
        })
    }

    /// m·g, the divisor turning a pivot moment into a CMP offset.
    pub fn weight_n(&self) -> f64 {
        self.mass_kg * self.gravity_mps2
    }

    pub fn horizon_s(&self) -> f64 {
        self.horizon_ticks as f64 * self.control_period_s
    }

    /// Discrete CP transition `A = e^{ω Ts}`.
    pub fn cp_transition(&self) -> f64 {
        (self.omega_per_s * self.control_period_s).exp()
    }

    /// Discrete CP input row `B = [1 - A, (1 - A)/(m g)]`.
    pub fn cp_input_row(&self) -> [f64; 2] {
        let one_minus_a = 1.0 - self.cp_transition();
        [one_minus_a, one_minus_a / self.weight_n()]
    }
}

impl Default for RobotParams {
    fn default() -> Self {
        Self::new(100.0, 0.81, 9.81, 0.02, 75).expect("default robot parameters are valid")
    }
}

/// `ω = sqrt(g / c_z)`.
pub fn natural_frequency(gravity: f64, com_height: f64) -> Result<f64> {
    if !(gravity > 0.0 && gravity.is_finite()) || !(com_height > 0.0 && com_height.is_finite()) {
        return Err(Error::domain(format!(
            "natural frequency needs positive gravity and CoM height (got g={gravity}, c_z={com_height})"
        )));
    }
    Ok((gravity / com_height).sqrt())
}

/// `ξ = c + ċ/ω` per axis.
pub fn capture_point(com: PlanarPoint, com_vel: PlanarPoint, omega: f64) -> PlanarPoint {
    debug_assert!(omega > 0.0);
    com + com_vel * (1.0 / omega)
}

/// CMP from ZMP and the pivot-moment pair `(tau_y, -tau_x)`.
pub fn cmp_from_zmp_moment(zmp: PlanarPoint, pivot: PlanarPoint, params: &RobotParams) -> PlanarPoint {
    zmp + pivot * (1.0 / params.weight_n())
}

/// One control period of the discretized CP dynamics with piecewise-constant inputs.
pub fn cp_discrete_step(xi: f64, zmp: f64, moment: f64, params: &RobotParams) -> f64 {
    let a = params.cp_transition();
    let [b_z, b_tau] = params.cp_input_row();
    a * xi + b_z * zmp + b_tau * moment
}

/// CP at the end of the step for a constant CMP: `ξ_T = (ξ - p) e^{ω(T - t)} + p`.
pub fn cp_end_of_step(
    xi: PlanarPoint,
    cmp: PlanarPoint,
    t_elapsed: f64,
    t_step: f64,
    omega: f64,
) -> Result<PlanarPoint> {
    if t_elapsed < 0.0 || t_elapsed > t_step {
        return Err(Error::domain(format!("elapsed time {t_elapsed} outside [0, {t_step}]")));
    }
    let growth_m1 = (omega * (t_step - t_elapsed)).exp_m1();
    Ok(xi + (xi - cmp) * growth_m1)
}

/// Explicit-Euler CAM integration of the flywheel moment.
pub fn integrate_cam(cam: CamState, moment: CentroidalMoment, dt: f64) -> CamState {
    CamState {
        h_x: cam.h_x + moment.tau_x * dt,
        h_y: cam.h_y + moment.tau_y * dt,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn natural_frequency_values() {
        assert_eq!(natural_frequency(9.81, 9.81).unwrap(), 1.0);
        assert_relative_eq!(natural_frequency(9.81, 0.81).unwrap(), 3.480102, epsilon = 1e-6);
        assert!(natural_frequency(9.81, 0.0).is_err());
        assert!(natural_frequency(-1.0, 0.8).is_err());
    }

    #[test]
    fn default_params_match_horizon() {
        let p = params();
        assert!((p.omega_per_s - (9.81f64 / 0.81).sqrt()).abs() < 1e-12);
        assert!((p.horizon_s() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn capture_point_examples() {
        let c = PlanarPoint::new(0.1, -0.05);
        assert_eq!(capture_point(c, PlanarPoint::ZERO, 3.0), c);
        let w = 3.4801;
        assert_eq!(
            capture_point(PlanarPoint::ZERO, PlanarPoint::new(w, 0.0), w),
            PlanarPoint::new(1.0, 0.0)
        );
        let xi = capture_point(PlanarPoint::new(0.02, 0.01), PlanarPoint::new(0.3, -0.2), w);
        assert_relative_eq!(xi.x, 0.02 + 0.3 / w, epsilon = 1e-15);
        assert_relative_eq!(xi.y, 0.01 - 0.2 / w, epsilon = 1e-15);
    }

    #[test]
    fn cmp_offsets() {
        let p = params();
        let z = PlanarPoint::new(0.03, -0.02);
        assert_eq!(cmp_from_zmp_moment(z, PlanarPoint::ZERO, &p), z);
        let pos = cmp_from_zmp_moment(PlanarPoint::ZERO, PlanarPoint::new(15.0, 0.0), &p);
        assert_relative_eq!(pos.x, 15.0 / 981.0, epsilon = 1e-15);
        assert_relative_eq!(pos.x, 0.015291, epsilon = 1e-6);
        let neg = cmp_from_zmp_moment(PlanarPoint::ZERO, PlanarPoint::new(-15.0, 0.0), &p);
        assert_relative_eq!(neg.x, -0.015291, epsilon = 1e-6);
        // y axis uses -tau_x
        let m = CentroidalMoment {
            tau_x: 9.81,
            tau_y: 0.0,
        };
        let py = cmp_from_zmp_moment(PlanarPoint::ZERO, m.pivot(), &p);
        assert_relative_eq!(py.y, -0.01, epsilon = 1e-15);
        assert_eq!(CentroidalMoment::from_pivot(m.pivot()), m);
    }

    #[test]
    fn discrete_step_examples() {
        let p = params();
        let xi = 0.04 + 3.0 / p.weight_n();
        assert_relative_eq!(cp_discrete_step(xi, 0.04, 3.0, &p), xi, epsilon = 1e-15);
        let a = p.cp_transition();
        assert_eq!(cp_discrete_step(0.07, 0.01, 0.0, &p), a * 0.07 + (1.0 - a) * 0.01);
        let p2 = RobotParams {
            omega_per_s: 3.4801,
            ..p
        };
        assert_relative_eq!(
            cp_discrete_step(0.05, 0.0, 0.0, &p2),
            0.05 * 0.069602f64.exp(),
            epsilon = 1e-15
        );
    }

    #[test]
    fn end_of_step_examples() {
        let w = 3.4801;
        let p = PlanarPoint::new(0.1, 0.2);
        assert_eq!(cp_end_of_step(p, p, 0.1, 0.9, w).unwrap(), p);
        let xi = PlanarPoint::new(0.3, -0.1);
        assert_eq!(cp_end_of_step(xi, p, 0.9, 0.9, w).unwrap(), xi);
        let r = cp_end_of_step(PlanarPoint::new(0.1, 0.0), PlanarPoint::ZERO, 0.6, 0.9, w).unwrap();
        assert_relative_eq!(r.x, 0.1 * 1.04403f64.exp(), epsilon = 1e-12);
        assert_eq!(r.y, 0.0);
        assert!(cp_end_of_step(xi, p, 1.0, 0.9, w).is_err());
    }

    #[test]
    fn cam_integration() {
        let m0 = CentroidalMoment::default();
        let c = CamState { h_x: 0.2, h_y: -0.1 };
        assert_eq!(integrate_cam(c, m0, 0.02), c);
        let m = CentroidalMoment {
            tau_x: 0.0,
            tau_y: 15.0,
        };
        let one = integrate_cam(CamState::default(), m, 0.02);
        assert_relative_eq!(one.h_y, 0.3, epsilon = 1e-15);
        let mut h = CamState::default();
        for _ in 0..50 {
            h = integrate_cam(h, m, 0.02);
        }
        assert_relative_eq!(h.h_y, 15.0, epsilon = 1e-12);
    }

    #[test]
    fn semigroup_and_consistency() {
        let p = params();
        let double = RobotParams {
            control_period_s: 2.0 * p.control_period_s,
            ..p
        };
        let (xi, z, u) = (0.13, 0.02, 4.0);
        let twice = cp_discrete_step(cp_discrete_step(xi, z, u, &p), z, u, &p);
        assert!((twice - cp_discrete_step(xi, z, u, &double)).abs() < 1e-12);

        let k = 17;
        let mut it = xi;
        for _ in 0..k {
            it = cp_discrete_step(it, z, u, &p);
        }
        let cmp = z + u / p.weight_n();
        let closed = cp_end_of_step(
            PlanarPoint::new(xi, 0.0),
            PlanarPoint::new(cmp, 0.0),
            0.0,
            k as f64 * p.control_period_s,
            p.omega_per_s,
        )
        .unwrap();
        assert!((closed.x - it).abs() < 1e-9);
    }

    #[test]
    fn monotone_divergence() {
        let p = params();
        let mut xi = 0.051;
        for _ in 0..100 {
            let next = cp_discrete_step(xi, 0.05, 0.0, &p);
            assert!(next > xi);
            xi = next;
        }
    }
}
