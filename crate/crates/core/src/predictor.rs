//! Condensed prediction of the capture point over the horizon.
//!
//! Inputs are interleaved per tick as `P = [z_0, τ_0, z_1, τ_1, …]` and the
//! prediction is `Ξ = Φ_ξ ξ_0 + Φ_p P`, where `Ξ[k]` is the CP after tick `k`.
//! Every index computation elsewhere in the crate follows this layout through
//! [`zmp_index`] and [`moment_index`].

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::RobotParams;

/// Column of tick `k`'s ZMP in the interleaved input vector.
pub const fn zmp_index(k: usize) -> usize {
    2 * k
}

/// Column of tick `k`'s pivot moment in the interleaved input vector.
pub const fn moment_index(k: usize) -> usize {
    2 * k + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct HorizonModel {
    /// `A^{k+1}` for `k = 0..N`.
    pub phi_xi: DVector<f64>,
    /// `N x 2N` lower block triangular, block `(i, j) = A^{i-j} B`.
    pub phi_p: DMatrix<f64>,
    pub a_scalar: f64,
    pub b_row: [f64; 2],
    pub period_s: f64,
}

impl HorizonModel {
    pub fn horizon(&self) -> usize {
        self.phi_xi.len()
    }
}

pub fn build_horizon_model(params: &RobotParams) -> HorizonModel {
    let n = params.horizon_ticks;
    let a = params.cp_transition();
    let b = params.cp_input_row();
    let mut powers = Vec::with_capacity(n + 1);
    let mut acc = 1.0;
    for _ in 0..=n {
        powers.push(acc);
        acc *= a;
    }
    let phi_xi = DVector::from_fn(n, |k, _| powers[k + 1]);
    let mut phi_p = DMatrix::zeros(n, 2 * n);
    for i in 0..n {
        for j in 0..=i {
            phi_p[(i, zmp_index(j))] = powers[i - j] * b[0];
            phi_p[(i, moment_index(j))] = powers[i - j] * b[1];
        }
    }
    HorizonModel {
        phi_xi,
        phi_p,
        a_scalar: a,
        b_row: b,
        period_s: params.control_period_s,
    }
}

pub fn predict(model: &HorizonModel, xi0: f64, inputs: &DVector<f64>) -> Result<DVector<f64>> {
    let n = model.horizon();
    if inputs.len() != 2 * n {
        return Err(Error::Dimension {
            what: "interleaved horizon inputs",
            expected: 2 * n,
            got: inputs.len(),
        });
    }
    Ok(&model.phi_xi * xi0 + &model.phi_p * inputs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(n: usize) -> RobotParams {
        RobotParams::new(100.0, 0.81, 9.81, 0.02, n).unwrap()
    }

    #[test]
    fn single_tick_horizon() {
        let p = params(1);
        let m = build_horizon_model(&p);
        assert_eq!(m.phi_xi[0], p.cp_transition());
        assert_eq!(m.phi_p[(0, 0)], p.cp_input_row()[0]);
        assert_eq!(m.phi_p[(0, 1)], p.cp_input_row()[1]);
    }

    #[test]
    fn block_entries_are_powers_of_a() {
        let p = params(3);
        let m = build_horizon_model(&p);
        let a = p.cp_transition();
        let b = p.cp_input_row();
        assert_eq!(m.phi_p[(2, 0)], a * a * b[0]);
        assert_eq!(m.phi_p[(2, 1)], a * a * b[1]);
        assert_eq!(m.phi_p[(0, 2)], 0.0);
        assert_eq!(m.phi_xi[2], a * a * a);
    }

    #[test]
    fn fixed_point_and_zero_inputs() {
        let m = build_horizon_model(&params(75));
        let xi0 = 0.037;
        let mut inputs = DVector::zeros(150);
        for k in 0..75 {
            inputs[zmp_index(k)] = xi0;
        }
        let traj = predict(&m, xi0, &inputs).unwrap();
        assert!(traj.iter().all(|v| (v - xi0).abs() < 1e-12));
        let zero = predict(&m, 0.0, &DVector::zeros(150)).unwrap();
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn wrong_length_is_rejected() {
        let m = build_horizon_model(&params(4));
        assert!(matches!(
            predict(&m, 0.0, &DVector::zeros(7)),
            Err(Error::Dimension {
                expected: 8,
                got: 7,
                ..
            })
        ));
    }
}
