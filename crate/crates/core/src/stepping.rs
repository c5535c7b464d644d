//! Stepping controller: next footstep position, CP offset and step time.
//!
//! With `γ = e^{ωT}` the end-of-step CP under a constant CMP `P` is linear in
//! the decision vector `[f_x, f_y, γ, b_x, b_y]`:
//!
//! ```text
//! f + b = (ξ - P) e^{-ωt} γ + P        per axis
//! ```
//!
//! where `t` is the time elapsed since the start of the current step.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Axis, PlanarPoint, RobotParams};
use crate::qp::{solve_qp, QpProblem, QpStatus, DEFAULT_MAX_ITER, DEFAULT_TOL};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteppingNominals {
    pub f_nom: PlanarPoint,
    pub b_nom: PlanarPoint,
    pub gamma_nom: f64,
    pub p_ssp: PlanarPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteppingWeights {
    pub w_f: [f64; 2],
    pub w_gamma: f64,
    pub w_b: [f64; 2],
}

impl Default for SteppingWeights {
    fn default() -> Self {
        Self {
            w_f: [1000.0; 2],
            w_gamma: 1.0,
            w_b: [3000.0; 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteppingBounds {
    /// Half width of the footstep box around `f_nom`.
    pub f_half_m: f64,
    /// Half width of the CP offset box around `b_nom`.
    pub b_half_m: f64,
    /// Allowed deviation of the step time from its nominal value.
    pub t_band_s: f64,
    /// Landing may not be scheduled sooner than this from now.
    pub min_remaining_s: f64,
}

impl Default for SteppingBounds {
    fn default() -> Self {
        Self {
            f_half_m: 0.05,
            b_half_m: 0.10,
            t_band_s: 0.2,
            min_remaining_s: 0.1,
        }
    }
}

impl SteppingBounds {
    /// `γ` interval for nominal step time `t_nom` at elapsed time `t_elapsed`.
    pub fn gamma_range(&self, t_nom: f64, t_elapsed: f64, omega: f64) -> (f64, f64) {
        let lo = (omega * (t_nom - self.t_band_s)).exp();
        let soonest = (omega * (t_elapsed + self.min_remaining_s)).exp();
        (lo.max(soonest), (omega * (t_nom + self.t_band_s)).exp())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SteppingSolution {
    pub f: PlanarPoint,
    pub gamma: f64,
    pub b: PlanarPoint,
    pub step_time_s: f64,
    pub status: QpStatus,
}

/// Reference next footstep shifted by the MPC's first footstep adjustment.
pub fn nominal_footstep(f1_ref: PlanarPoint, df1: PlanarPoint) -> PlanarPoint {
    f1_ref + df1
}

/// Reference end-of-step CP relative to the reference next footstep.
pub fn nominal_cp_offset(xi_t_ref: PlanarPoint, f1_ref: PlanarPoint) -> PlanarPoint {
    xi_t_ref - f1_ref
}

/// Mean CMP of the MPC plan over the first `ticks_remaining_ssp` ticks.
///
/// `zmp_seq` and `pivot_seq` are indexed by axis; the pivot of the x axis is
/// `τ_y` and of the y axis `-τ_x`.
pub fn cmp_parameter(
    zmp_seq: [&[f64]; 2],
    pivot_seq: [&[f64]; 2],
    ticks_remaining_ssp: usize,
    params: &RobotParams,
) -> Result<PlanarPoint> {
    if ticks_remaining_ssp == 0 {
        return Err(Error::domain("CMP average needs at least one remaining tick"));
    }
    let mg = params.weight_n();
    let mut out = [0.0; 2];
    for a in 0..2 {
        let k = ticks_remaining_ssp.min(zmp_seq[a].len()).min(pivot_seq[a].len());
        if k == 0 {
            return Err(Error::domain("empty MPC sequence"));
        }
        let sum: f64 = (0..k).map(|i| zmp_seq[a][i] + pivot_seq[a][i] / mg).sum();
        out[a] = sum / k as f64;
    }
    Ok(PlanarPoint::new(out[0], out[1]))
}

/// Builds the five-variable stepping QP. `gamma_fixed` pins the step time.
#[allow(clippy::too_many_arguments)]
pub fn stepping_problem(
    nominals: &SteppingNominals,
    xi: PlanarPoint,
    t_elapsed: f64,
    t_nom: f64,
    omega: f64,
    bounds: &SteppingBounds,
    weights: &SteppingWeights,
    gamma_fixed: Option<f64>,
) -> QpProblem {
    let n = nominals;
    let h = DMatrix::from_diagonal(&DVector::from_vec(vec![
        2.0 * weights.w_f[0],
        2.0 * weights.w_f[1],
        2.0 * weights.w_gamma,
        2.0 * weights.w_b[0],
        2.0 * weights.w_b[1],
    ]));
    let g = DVector::from_vec(vec![
        -2.0 * weights.w_f[0] * n.f_nom.x,
        -2.0 * weights.w_f[1] * n.f_nom.y,
        -2.0 * weights.w_gamma * n.gamma_nom,
        -2.0 * weights.w_b[0] * n.b_nom.x,
        -2.0 * weights.w_b[1] * n.b_nom.y,
    ]);
    let decay = (-omega * t_elapsed).exp();
    let mut eq = DMatrix::zeros(2, 5);
    let mut rhs = DVector::zeros(2);
    for (r, axis) in Axis::BOTH.into_iter().enumerate() {
        eq[(r, r)] = 1.0;
        eq[(r, 3 + r)] = 1.0;
        eq[(r, 2)] = -(xi.get(axis) - n.p_ssp.get(axis)) * decay;
        rhs[r] = n.p_ssp.get(axis);
    }
    let (g_lo, g_hi) = match gamma_fixed {
        Some(g) => (g, g),
        None => bounds.gamma_range(t_nom, t_elapsed, omega),
    };
    let lower = [
        n.f_nom.x - bounds.f_half_m,
        n.f_nom.y - bounds.f_half_m,
        g_lo,
        n.b_nom.x - bounds.b_half_m,
        n.b_nom.y - bounds.b_half_m,
    ];
    let upper = [
        n.f_nom.x + bounds.f_half_m,
        n.f_nom.y + bounds.f_half_m,
        g_hi,
        n.b_nom.x + bounds.b_half_m,
        n.b_nom.y + bounds.b_half_m,
    ];
    QpProblem {
        eq_matrix: eq,
        eq_rhs: rhs,
        ..QpProblem::unconstrained(h, g)
    }
    .with_bounds(&lower, &upper)
}

#[allow(clippy::too_many_arguments)]
pub fn solve_stepping(
    nominals: &SteppingNominals,
    xi: PlanarPoint,
    t_elapsed: f64,
    t_nom: f64,
    omega: f64,
    bounds: &SteppingBounds,
    weights: &SteppingWeights,
    gamma_fixed: Option<f64>,
) -> Result<SteppingSolution> {
    let qp = stepping_problem(nominals, xi, t_elapsed, t_nom, omega, bounds, weights, gamma_fixed);
    let sol = solve_qp(&qp, None, DEFAULT_TOL, DEFAULT_MAX_ITER)?;
    let x = &sol.primal;
    Ok(SteppingSolution {
        f: PlanarPoint::new(x[0], x[1]),
        gamma: x[2],
        b: PlanarPoint::new(x[3], x[4]),
        step_time_s: x[2].ln() / omega,
        status: sol.status,
    })
}

/// Per-axis residual of the end-of-step equality at a candidate solution.
pub fn equality_residual(
    sol: &SteppingSolution,
    p_ssp: PlanarPoint,
    xi: PlanarPoint,
    t_elapsed: f64,
    omega: f64,
) -> f64 {
    let decay = (-omega * t_elapsed).exp();
    Axis::BOTH
        .into_iter()
        .map(|a| {
            let lhs = sol.f.get(a) + sol.b.get(a);
            let rhs = (xi.get(a) - p_ssp.get(a)) * decay * sol.gamma + p_ssp.get(a);
            (lhs - rhs).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> RobotParams {
        RobotParams::default()
    }

    #[test]
    fn footstep_nominal_adds_adjustment() {
        let f = nominal_footstep(PlanarPoint::new(0.1, 0.205), PlanarPoint::new(-0.144, 0.0));
        assert!((f.x + 0.044).abs() < 1e-15);
        assert_eq!(f.y, 0.205);
        assert_eq!(
            nominal_footstep(PlanarPoint::new(0.3, -0.1), PlanarPoint::ZERO),
            PlanarPoint::new(0.3, -0.1)
        );
    }

    #[test]
    fn cp_offset_vanishes_on_the_footstep() {
        let f = PlanarPoint::new(0.4, -0.1);
        assert_eq!(nominal_cp_offset(f, f), PlanarPoint::ZERO);
    }

    #[test]
    fn cmp_average_examples() {
        let p = params();
        let z = [0.0, 0.1, 7.0];
        let zero = [0.0; 3];
        let c = cmp_parameter([&z, &z], [&zero, &zero], 2, &p).unwrap();
        assert!((c.x - 0.05).abs() < 1e-15);
        let konst = [0.2; 4];
        let c = cmp_parameter([&konst, &konst], [&zero, &zero], 3, &p).unwrap();
        assert!((c.y - 0.2).abs() < 1e-15);
        assert!(cmp_parameter([&z, &z], [&zero, &zero], 0, &p).is_err());
    }

    #[test]
    fn gamma_range_matches_band() {
        let b = SteppingBounds::default();
        let w = 3.4801;
        let (lo, hi) = b.gamma_range(0.9, 0.3, w);
        assert!((lo - (w * 0.7).exp()).abs() < 1e-12);
        assert!((hi - (w * 1.1).exp()).abs() < 1e-12);
        // late in the step the lower bound follows the clock
        let (lo, _) = b.gamma_range(0.9, 0.65, w);
        assert!((lo - (w * 0.75).exp()).abs() < 1e-12);
    }

    #[test]
    fn consistent_nominals_are_returned_unchanged() {
        let w = params().omega_per_s;
        let t = 0.5;
        let t_nom = 0.9;
        let gamma_nom = (w * t_nom).exp();
        let p_ssp = PlanarPoint::new(0.02, 0.1);
        let f_nom = PlanarPoint::new(0.1, -0.1);
        let b_nom = PlanarPoint::new(0.01, 0.02);
        // ξ chosen so that the equality holds at the nominals
        let xi = (f_nom + b_nom - p_ssp) * ((w * t).exp() / gamma_nom) + p_ssp;
        let nominals = SteppingNominals {
            f_nom,
            b_nom,
            gamma_nom,
            p_ssp,
        };
        let sol = solve_stepping(
            &nominals,
            xi,
            t,
            t_nom,
            w,
            &SteppingBounds::default(),
            &SteppingWeights::default(),
            None,
        )
        .unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert!((sol.f - f_nom).norm() < 1e-8);
        assert!((sol.b - b_nom).norm() < 1e-8);
        assert!((sol.gamma - gamma_nom).abs() < 1e-6);
        assert!((sol.step_time_s - t_nom).abs() < 1e-8);
        assert!(equality_residual(&sol, p_ssp, xi, t, w) <= 1e-8);
    }

    #[test]
    fn pinned_step_time_is_respected() {
        let w = params().omega_per_s;
        let nominals = SteppingNominals {
            f_nom: PlanarPoint::new(0.0, -0.1),
            b_nom: PlanarPoint::new(0.0, 0.03),
            gamma_nom: (w * 0.9).exp(),
            p_ssp: PlanarPoint::new(0.0, 0.1),
        };
        let g = (w * 0.85).exp();
        let sol = solve_stepping(
            &nominals,
            PlanarPoint::new(0.01, 0.09),
            0.4,
            0.9,
            w,
            &SteppingBounds::default(),
            &SteppingWeights::default(),
            Some(g),
        )
        .unwrap();
        assert_eq!(sol.status, QpStatus::Optimal);
        assert_eq!(sol.gamma, g);
    }
}
