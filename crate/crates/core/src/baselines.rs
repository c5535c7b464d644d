//! Comparison controllers and strategy ablations.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gait::Side;
use crate::model::{Axis, PlanarPoint, RobotParams};
use crate::qp::{solve_qp, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};
use crate::stepping::{SteppingBounds, SteppingSolution};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", content = "w", rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Variable,
    /// Damping weight held at the given value over the whole horizon.
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CpOffsetMode {
    /// Reference end-of-step CP minus the reference footstep.
    #[default]
    FromPlan,
    /// Closed form for a periodic gait with constant step length and width.
    ConstantVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CmpMode {
    /// Mean CMP of the MPC plan over the rest of single support.
    #[default]
    MpcAverage,
    /// CMP fixed at the support foot centre.
    PointFoot,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AblationConfig {
    pub use_moment: bool,
    pub use_footstep_adjust: bool,
    pub use_step_time: bool,
    pub weighting: Weighting,
    pub cp_offset_mode: CpOffsetMode,
    pub cmp_mode: CmpMode,
}

/// Strategy subsets compared in the disturbance sweeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum StrategyMode {
    /// ZMP, moment, footstep position and step time.
    Full,
    /// ZMP, footstep position and step time.
    M2,
    /// ZMP and footstep position.
    M3,
    /// ZMP and moment.
    M4,
    /// ZMP only.
    M5,
}

impl StrategyMode {
    pub const ALL: [StrategyMode; 5] = [
        StrategyMode::Full,
        StrategyMode::M2,
        StrategyMode::M3,
        StrategyMode::M4,
        StrategyMode::M5,
    ];

    pub fn label(self) -> &'static str {
        match self {
            StrategyMode::Full => "full",
            StrategyMode::M2 => "m2",
            StrategyMode::M3 => "m3",
            StrategyMode::M4 => "m4",
            StrategyMode::M5 => "m5",
        }
    }

    pub fn parse(s: &str) -> Option<StrategyMode> {
        StrategyMode::ALL.into_iter().find(|m| m.label() == s)
    }

    pub fn flags(self) -> (bool, bool, bool) {
        match self {
            StrategyMode::Full => (true, true, true),
            StrategyMode::M2 => (false, true, true),
            StrategyMode::M3 => (false, true, false),
            StrategyMode::M4 => (true, false, false),
            StrategyMode::M5 => (false, false, false),
        }
    }
}

impl AblationConfig {
    pub fn for_mode(mode: StrategyMode) -> Self {
        let (use_moment, use_footstep_adjust, use_step_time) = mode.flags();
        Self {
            use_moment,
            use_footstep_adjust,
            use_step_time,
            weighting: Weighting::Variable,
            cp_offset_mode: CpOffsetMode::FromPlan,
            cmp_mode: CmpMode::MpcAverage,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.use_step_time && !self.use_footstep_adjust {
            return Err(Error::domain("step time adaptation requires footstep adjustment"));
        }
        if let Weighting::Constant(w) = self.weighting {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(Error::domain("constant damping weight must be finite and nonnegative"));
            }
        }
        Ok(())
    }
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::for_mode(StrategyMode::Full)
    }
}

/// Instantaneous CP control law. Returns `previous` when the gain is singular
/// (remaining time too close to zero).
pub fn instantaneous_cp_zmp(
    xi_err: PlanarPoint,
    z_ref: PlanarPoint,
    t_elapsed: f64,
    t_step: f64,
    omega: f64,
    previous: PlanarPoint,
) -> PlanarPoint {
    let growth = (omega * (t_step - t_elapsed)).exp();
    let denom = 1.0 - growth;
    if denom.abs() < 1e-6 {
        return previous;
    }
    z_ref - xi_err * (growth / denom)
}

/// CP offset of a periodic gait with step length `L`, width `D`, lateral
/// drift `W` (toward -y) and step time `T`, for a step landing on `next_side`.
pub fn constant_velocity_cp_offset(l: f64, d: f64, w: f64, t_nom: f64, omega: f64, next_side: Side) -> PlanarPoint {
    let e = (omega * t_nom).exp();
    PlanarPoint::new(l / (e - 1.0), -next_side.sign() * d / (e + 1.0) - w / (e - 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineWeights {
    pub w_f: f64,
    pub w_gamma: f64,
    pub w_tau: f64,
    pub w_b: f64,
    pub k_d: f64,
}

impl Default for BaselineWeights {
    fn default() -> Self {
        Self {
            w_f: 1000.0,
            w_gamma: 1.0,
            w_tau: 1e-6,
            w_b: 3000.0,
            k_d: 50.0,
        }
    }
}

/// Inputs of one baseline solve. Moments are per-axis pivots (`τ_y`, `-τ_x`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineInputs {
    pub xi_ref: PlanarPoint,
    pub xi_err: PlanarPoint,
    /// Reference CMP of the remaining single support.
    pub p_ref: PlanarPoint,
    /// Desired ZMP offset from the instantaneous law, held constant.
    pub dz: PlanarPoint,
    pub f_nom: PlanarPoint,
    pub b_nom: PlanarPoint,
    pub gamma_nom: f64,
    /// `γ` of the previous cycle, used to linearize the moment term.
    pub gamma_prev: f64,
    pub t_elapsed: f64,
    pub t_nom: f64,
    pub axis_momentum: PlanarPoint,
    pub next_side: Side,
    /// Footstep and `γ` errors held fixed, e.g. while stepping is frozen.
    pub pinned: Option<(PlanarPoint, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineLimits {
    pub stepping: SteppingBounds,
    pub tau_max_nm: f64,
    /// Footstep error box per axis.
    pub f_err_x: (f64, f64),
    pub f_err_y_left: (f64, f64),
    pub f_err_y_right: (f64, f64),
}

impl Default for BaselineLimits {
    fn default() -> Self {
        Self {
            stepping: SteppingBounds::default(),
            tau_max_nm: 15.0,
            f_err_x: (-0.2, 0.2),
            f_err_y_left: (-0.03, 0.1),
            f_err_y_right: (-0.1, 0.03),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineSolution {
    pub stepping: SteppingSolution,
    /// Pivot moment per axis.
    pub pivot: PlanarPoint,
    /// Largest per-axis residual of the linearized end-of-step equality.
    pub residual: f64,
}

/// QP over `[f_err (2), γ_err, u (2), b_err (2)]` with the linearized
/// end-of-step error dynamics as equality.
pub fn qp_baseline_solve(
    inp: &BaselineInputs,
    weights: &BaselineWeights,
    limits: &BaselineLimits,
    params: &RobotParams,
) -> Result<BaselineSolution> {
    let omega = params.omega_per_s;
    let mg = params.weight_n();
    let decay = (-omega * inp.t_elapsed).exp();
    let moment_gain = (1.0 - decay * inp.gamma_prev) / mg;

    let mut hdiag = vec![0.0; 7];
    let mut g = DVector::zeros(7);
    hdiag[0] = 2.0 * weights.w_f;
    hdiag[1] = 2.0 * weights.w_f;
    hdiag[2] = 2.0 * weights.w_gamma;
    for a in 0..2 {
        hdiag[3 + a] = 2.0 * weights.w_tau;
        g[3 + a] = 2.0 * weights.w_tau * weights.k_d * inp.axis_momentum.get(Axis::BOTH[a]);
    }
    hdiag[5] = 2.0 * weights.w_b;
    hdiag[6] = 2.0 * weights.w_b;

    let mut eq = DMatrix::zeros(2, 7);
    let mut rhs = DVector::zeros(2);
    for (r, axis) in Axis::BOTH.into_iter().enumerate() {
        let xi_err = inp.xi_err.get(axis);
        let dz = inp.dz.get(axis);
        eq[(r, r)] = 1.0;
        eq[(r, 5 + r)] = 1.0;
        eq[(r, 2)] = -((inp.xi_ref.get(axis) - inp.p_ref.get(axis)) + (xi_err - dz)) * decay;
        eq[(r, 3 + r)] = -moment_gain;
        rhs[r] = (xi_err - dz) * decay * inp.gamma_nom + dz;
    }

    let (g_lo, g_hi) = limits.stepping.gamma_range(inp.t_nom, inp.t_elapsed, omega);
    let fy = match inp.next_side {
        Side::Left => limits.f_err_y_left,
        Side::Right => limits.f_err_y_right,
    };
    let b = limits.stepping.b_half_m;
    let mut lower = [
        limits.f_err_x.0,
        fy.0,
        g_lo - inp.gamma_nom,
        -limits.tau_max_nm,
        -limits.tau_max_nm,
        -b,
        -b,
    ];
    let mut upper = [
        limits.f_err_x.1,
        fy.1,
        g_hi - inp.gamma_nom,
        limits.tau_max_nm,
        limits.tau_max_nm,
        b,
        b,
    ];
    if let Some((f_err, g_err)) = inp.pinned {
        for (k, v) in [(0, f_err.x), (1, f_err.y), (2, g_err)] {
            lower[k] = v;
            upper[k] = v;
        }
    }
    let qp = crate::qp::QpProblem {
        eq_matrix: eq.clone(),
        eq_rhs: rhs.clone(),
        ..crate::qp::QpProblem::unconstrained(DMatrix::from_diagonal(&DVector::from_vec(hdiag)), g)
    }
    .with_bounds(&lower, &upper);
    let sol = solve_qp(&qp, None, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let x = &sol.primal;
    let residual = (&eq * x - &rhs).amax();
    let gamma = inp.gamma_nom + x[2];
    let stepping = SteppingSolution {
        f: inp.f_nom + PlanarPoint::new(x[0], x[1]),
        gamma,
        b: inp.b_nom + PlanarPoint::new(x[5], x[6]),
        step_time_s: if gamma > 0.0 { gamma.ln() / omega } else { f64::NAN },
        status: sol.status,
    };
    Ok(BaselineSolution {
        stepping,
        pivot: PlanarPoint::new(x[3], x[4]),
        residual: if sol.status == QpStatus::Optimal {
            residual
        } else {
            f64::NAN
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const W: f64 = 3.4801;

    #[test]
    fn mode_flags() {
        let c = AblationConfig::for_mode(StrategyMode::M3);
        assert!(!c.use_moment && c.use_footstep_adjust && !c.use_step_time);
        let c = AblationConfig::for_mode(StrategyMode::M4);
        assert!(c.use_moment && !c.use_footstep_adjust && !c.use_step_time);
        assert_eq!(StrategyMode::parse("m2"), Some(StrategyMode::M2));
        assert_eq!(StrategyMode::parse("m9"), None);
    }

    #[test]
    fn instantaneous_law_examples() {
        let z = PlanarPoint::new(0.1, 0.2);
        assert_eq!(instantaneous_cp_zmp(PlanarPoint::ZERO, z, 0.2, 0.9, W, z), z);
        let e = PlanarPoint::new(0.05, 0.0);
        let out = instantaneous_cp_zmp(e, PlanarPoint::ZERO, 0.6, 0.9, W, PlanarPoint::ZERO);
        let g = (W * 0.3f64).exp() / (1.0 - (W * 0.3f64).exp());
        assert!((out.x + g * 0.05).abs() < 1e-15);
        // singular gain holds the previous output
        let prev = PlanarPoint::new(0.3, 0.3);
        assert_eq!(instantaneous_cp_zmp(e, z, 0.9, 0.9, W, prev), prev);
    }

    #[test]
    fn instantaneous_gain_decreases_with_remaining_time() {
        let e = PlanarPoint::new(1.0, 0.0);
        let mut last = f64::INFINITY;
        for k in 1..90 {
            let rem = 0.01 * k as f64;
            let g = (instantaneous_cp_zmp(e, PlanarPoint::ZERO, 0.9 - rem, 0.9, W, PlanarPoint::ZERO).x).abs();
            assert!(g < last);
            last = g;
        }
    }

    #[test]
    fn constant_velocity_offsets() {
        let b = constant_velocity_cp_offset(0.0, 0.205, 0.0, 0.9, W, Side::Left);
        assert_eq!(b.x, 0.0);
        let e = (W * 0.9f64).exp();
        let b = constant_velocity_cp_offset(0.1, 0.205, 0.0, 0.9, W, Side::Left);
        assert!((b.x - 0.1 / (e - 1.0)).abs() < 1e-15);
        let l = constant_velocity_cp_offset(0.1, 0.205, 0.02, 0.9, W, Side::Left);
        let r = constant_velocity_cp_offset(0.1, 0.205, 0.02, 0.9, W, Side::Right);
        // side flips only the width term
        assert!(((l.y + r.y) * 0.5 + 0.02 / (e - 1.0)).abs() < 1e-15);
        assert!((l.y - r.y + 2.0 * 0.205 / (e + 1.0)).abs() < 1e-15);
    }

    #[test]
    fn zero_errors_give_zero_solution() {
        let p = RobotParams::default();
        let inp = BaselineInputs {
            xi_ref: PlanarPoint::new(0.01, 0.08),
            xi_err: PlanarPoint::ZERO,
            p_ref: PlanarPoint::new(0.0, 0.1),
            dz: PlanarPoint::ZERO,
            f_nom: PlanarPoint::new(0.0, -0.1),
            b_nom: PlanarPoint::new(0.0, 0.03),
            gamma_nom: (p.omega_per_s * 0.9).exp(),
            gamma_prev: (p.omega_per_s * 0.9).exp(),
            t_elapsed: 0.5,
            t_nom: 0.9,
            axis_momentum: PlanarPoint::ZERO,
            next_side: Side::Right,
            pinned: None,
        };
        let s = qp_baseline_solve(&inp, &BaselineWeights::default(), &BaselineLimits::default(), &p).unwrap();
        assert_eq!(s.stepping.status, QpStatus::Optimal);
        assert!((s.stepping.f - inp.f_nom).norm() < 1e-9);
        assert!((s.stepping.gamma - inp.gamma_nom).abs() < 1e-9);
        assert!(s.pivot.norm() < 1e-6);
        assert!(s.residual <= 1e-8);
    }
}
