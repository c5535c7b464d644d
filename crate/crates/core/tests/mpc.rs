mod common;

use common::qp_oracle::dual_gradient_oracle;
use cpmpc::model::RobotParams;
use cpmpc::mpc::{
    build_mpc_qp, solution_violation, AxisMpc, AxisState, MpcBounds, MpcStatus, MpcStructure, MpcWeightConfig,
    MpcWeights, SelectionMatrix,
};
use cpmpc::predictor::{build_horizon_model, HorizonModel};
use cpmpc::qp::{solve_qp, DEFAULT_MAX_ITER, DEFAULT_TOL};
use proptest::prelude::*;

fn setup(n: usize) -> (RobotParams, HorizonModel) {
    let params = RobotParams::new(100.0, 0.81, 9.81, 0.02, n).unwrap();
    let model = build_horizon_model(&params);
    (params, model)
}

fn weights(params: &RobotParams, n: usize, m: usize, w_f: f64) -> MpcWeights {
    let cfg = MpcWeightConfig {
        w_f,
        ..MpcWeightConfig::default()
    };
    cfg.build(n, m, vec![1e-3; n], params.weight_n())
}

fn bounds(n: usize, m: usize, zmp_half: f64) -> MpcBounds {
    MpcBounds {
        zmp_lower: vec![-zmp_half; n],
        zmp_upper: vec![zmp_half; n],
        tau_lower: vec![-15.0; n],
        tau_upper: vec![15.0; n],
        df_lower: vec![-0.2; m],
        df_upper: vec![0.2; m],
    }
}

const NO_FOOTSTEPS: MpcStructure = MpcStructure {
    use_moment: true,
    use_footsteps: false,
};
const ZMP_ONLY: MpcStructure = MpcStructure {
    use_moment: false,
    use_footsteps: false,
};

#[test]
fn resting_on_the_reference_costs_nothing() {
    let n = 30;
    let (params, model) = setup(n);
    let sel = SelectionMatrix::new(n, vec![10, 25]);
    let state = AxisState {
        xi0: 0.04,
        h0: 0.0,
        prev_zmp: 0.04,
        prev_tau: 0.0,
    };
    let xi_ref = vec![0.04; n];
    let problem = build_mpc_qp(
        &state,
        &xi_ref,
        &model,
        &weights(&params, n, 2, 0.001),
        &bounds(n, 2, 0.1),
        &sel,
        MpcStructure::FULL,
    )
    .unwrap();
    let sol = AxisMpc::new().solve_axis(&problem, &xi_ref).unwrap();
    assert_eq!(sol.status, MpcStatus::Optimal);
    assert!(sol.cost.abs() < 1e-10, "cost {}", sol.cost);
    assert!(sol.zmp_seq.iter().all(|z| (z - 0.04).abs() < 1e-8));
    assert!(sol.tau_seq.iter().all(|t| t.abs() < 1e-6));
    assert!(sol.df.iter().all(|d| d.abs() < 1e-8));
}

#[test]
fn prohibitive_footstep_weight_matches_fixed_footsteps() {
    let n = 40;
    let (params, model) = setup(n);
    let sel = SelectionMatrix::new(n, vec![12, 32]);
    let state = AxisState {
        xi0: 0.18,
        h0: 0.0,
        prev_zmp: 0.05,
        prev_tau: 0.0,
    };
    let xi_ref = vec![0.0; n];
    let b = bounds(n, 2, 0.1);
    let stiff = build_mpc_qp(
        &state,
        &xi_ref,
        &model,
        &weights(&params, n, 2, 1e9),
        &b,
        &sel,
        MpcStructure::FULL,
    )
    .unwrap();
    let fixed = build_mpc_qp(
        &state,
        &xi_ref,
        &model,
        &weights(&params, n, 2, 1e9),
        &b,
        &sel,
        NO_FOOTSTEPS,
    )
    .unwrap();
    let a = AxisMpc::new().solve_axis(&stiff, &xi_ref).unwrap();
    let c = AxisMpc::new().solve_axis(&fixed, &xi_ref).unwrap();
    assert!(a.df.iter().all(|d| d.abs() < 1e-5), "{:?}", a.df);
    for (x, y) in a.zmp_seq.iter().zip(&c.zmp_seq) {
        assert!((x - y).abs() < 1e-5, "{x} {y}");
    }
    let cheap = build_mpc_qp(
        &state,
        &xi_ref,
        &model,
        &weights(&params, n, 2, 0.001),
        &b,
        &sel,
        MpcStructure::FULL,
    )
    .unwrap();
    let s = AxisMpc::new().solve_axis(&cheap, &xi_ref).unwrap();
    assert!(
        s.df[0] > 0.01,
        "a large CP error should move the next footstep: {:?}",
        s.df
    );
}

#[test]
fn small_instance_matches_oracle() {
    let n = 6;
    let (params, model) = setup(n);
    let sel = SelectionMatrix::new(n, vec![3]);
    let state = AxisState {
        xi0: 0.09,
        h0: 0.5,
        prev_zmp: 0.02,
        prev_tau: 1.0,
    };
    let xi_ref = vec![0.0; n];
    let problem = build_mpc_qp(
        &state,
        &xi_ref,
        &model,
        &weights(&params, n, 1, 0.001),
        &bounds(n, 1, 0.05),
        &sel,
        MpcStructure::FULL,
    )
    .unwrap();
    let sol = AxisMpc::new().solve_axis(&problem, &xi_ref).unwrap();
    let oracle = dual_gradient_oracle(&problem.qp);
    let direct = solve_qp(&problem.qp, None, DEFAULT_TOL, DEFAULT_MAX_ITER).unwrap();
    for (x, y) in direct.primal.iter().zip(oracle.iter()) {
        assert!((x - y).abs() <= 1e-6 * (1.0 + y.abs()), "{x} vs {y}");
    }
    assert!((sol.cost - problem.cost(&oracle)).abs() < 1e-8);
    assert!(
        sol.tau_seq.iter().any(|t| t.abs() > 1e-3),
        "the moment should help here"
    );
}

#[test]
fn infeasible_cycle_falls_back_to_shifted_plan() {
    let n = 20;
    let (params, model) = setup(n);
    let sel = SelectionMatrix::new(n, vec![8]);
    let state = AxisState {
        xi0: 0.05,
        h0: 0.0,
        prev_zmp: 0.0,
        prev_tau: 0.0,
    };
    let xi_ref = vec![0.0; n];
    let w = weights(&params, n, 1, 0.001);
    let good = build_mpc_qp(
        &state,
        &xi_ref,
        &model,
        &w,
        &bounds(n, 1, 0.1),
        &sel,
        MpcStructure::FULL,
    )
    .unwrap();
    let mut mpc = AxisMpc::new();
    let first = mpc.solve_axis(&good, &xi_ref).unwrap();
    assert!(!first.degraded);

    let mut broken = bounds(n, 1, 0.1);
    broken.tau_lower[4] = 5.0;
    broken.tau_upper[4] = -5.0;
    let bad = build_mpc_qp(&state, &xi_ref, &model, &w, &broken, &sel, MpcStructure::FULL).unwrap();
    let second = mpc.solve_axis(&bad, &xi_ref).unwrap();
    assert!(second.degraded);
    assert_eq!(second.status, MpcStatus::Infeasible);
    assert_eq!(&second.zmp_seq[..n - 1], &first.zmp_seq[1..]);
    assert_eq!(second.zmp_seq[n - 1], first.zmp_seq[n - 1]);
    assert_eq!(second.df, first.df);

    // without a previous plan the reference ZMP is used
    let cold = AxisMpc::new().solve_axis(&bad, &vec![0.01; n]).unwrap();
    assert!(cold.degraded);
    assert_eq!(cold.zmp_seq, vec![0.01; n]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn removing_strategies_never_lowers_the_optimal_cost(
        xi0 in -0.25f64..0.25,
        prev_zmp in -0.05f64..0.05,
        start in 1usize..20,
    ) {
        let n = 25;
        let (params, model) = setup(n);
        let sel = SelectionMatrix::new(n, vec![start]);
        let state = AxisState { xi0, h0: 0.0, prev_zmp, prev_tau: 0.0 };
        let xi_ref = vec![0.0; n];
        let w = weights(&params, n, 1, 0.001);
        let b = bounds(n, 1, 0.08);
        let mut cost = Vec::new();
        for structure in [MpcStructure::FULL, NO_FOOTSTEPS, ZMP_ONLY] {
            let p = build_mpc_qp(&state, &xi_ref, &model, &w, &b, &sel, structure).unwrap();
            let s = AxisMpc::new().solve_axis(&p, &xi_ref).unwrap();
            prop_assert_eq!(s.status, MpcStatus::Optimal);
            prop_assert!(solution_violation(&s, &b, &sel) <= 1e-8);
            cost.push(s.cost);
        }
        prop_assert!(cost[0] <= cost[1] + 1e-9 * (1.0 + cost[1].abs()));
        prop_assert!(cost[1] <= cost[2] + 1e-9 * (1.0 + cost[2].abs()));
    }
}
