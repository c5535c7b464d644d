use cpmpc::gait::{Side, Stance};
use cpmpc::model::{cp_discrete_step, CentroidalMoment, PlanarPoint, RobotParams};
use cpmpc::plant::{detect_fall, plant_step, FallCriteria, FallDetector, PlantLimits, PlantState};
use proptest::prelude::*;

fn standing(com: PlanarPoint) -> PlantState {
    let left = Stance {
        position: PlanarPoint::new(0.0, 0.1025),
        side: Side::Left,
    };
    let right = Stance {
        position: PlanarPoint::new(0.0, -0.1025),
        side: Side::Right,
    };
    PlantState::at_rest(com, right, left)
}

/// Classic RK4 on c'' = ω² (c - u) for one axis.
fn rk4(c0: f64, v0: f64, u: f64, omega: f64, t: f64, steps: usize) -> (f64, f64) {
    let h = t / steps as f64;
    let f = |c: f64, v: f64| (v, omega * omega * (c - u));
    let (mut c, mut v) = (c0, v0);
    for _ in 0..steps {
        let k1 = f(c, v);
        let k2 = f(c + 0.5 * h * k1.0, v + 0.5 * h * k1.1);
        let k3 = f(c + 0.5 * h * k2.0, v + 0.5 * h * k2.1);
        let k4 = f(c + h * k3.0, v + h * k3.1);
        c += h / 6.0 * (k1.0 + 2.0 * k2.0 + 2.0 * k3.0 + k4.0);
        v += h / 6.0 * (k1.1 + 2.0 * k2.1 + 2.0 * k3.1 + k4.1);
    }
    (c, v)
}

#[test]
fn free_pendulum_matches_rk4_reference() {
    let params = RobotParams::default();
    let limits = PlantLimits::default();
    let mut s = standing(PlanarPoint::new(0.01, 0.02));
    s.com_vel = PlanarPoint::new(0.05, -0.03);
    let zmp = PlanarPoint::new(0.03, 0.0);
    let (x0, vx0) = (s.com.x, s.com_vel.x);
    for _ in 0..300 {
        s = plant_step(
            &s,
            zmp,
            CentroidalMoment::default(),
            PlanarPoint::ZERO,
            &limits,
            &params,
            0.001,
        )
        .unwrap()
        .0;
    }
    let (x, vx) = rk4(x0, vx0, zmp.x, params.omega_per_s, 0.3, 30_000);
    assert!((s.com.x - x).abs() < 1e-10, "{} vs {x}", s.com.x);
    assert!((s.com_vel.x - vx).abs() < 1e-9);
}

#[test]
fn capture_point_follows_discrete_recursion_with_moment() {
    let params = RobotParams::default();
    let limits = PlantLimits::default();
    let mut s = standing(PlanarPoint::new(0.0, 0.0));
    s.com_vel = PlanarPoint::new(0.1, 0.0);
    let omega = params.omega_per_s;
    let mut xi = s.cp(omega).x;
    let zmp = PlanarPoint::new(0.04, 0.0);
    let moment = CentroidalMoment { tau_x: 0.0, tau_y: 6.0 };
    for _ in 0..25 {
        for _ in 0..20 {
            s = plant_step(&s, zmp, moment, PlanarPoint::ZERO, &limits, &params, 0.001)
                .unwrap()
                .0;
        }
        xi = cp_discrete_step(xi, zmp.x, moment.tau_y, &params);
        assert!((s.cp(omega).x - xi).abs() < 1e-12);
    }
    assert!((s.cam.h_y - 6.0 * 0.5).abs() < 1e-12);
}

#[test]
fn capture_point_outside_the_feet_is_a_fall() {
    let params = RobotParams::default();
    let omega = params.omega_per_s;
    let criteria = FallCriteria::default();
    let mut s = standing(PlanarPoint::ZERO);
    assert!(!detect_fall(&s, omega, &criteria));
    s.com_vel = PlanarPoint::new(0.75 * omega, 0.0);
    assert!(detect_fall(&s, omega, &criteria));
    let mut detector = FallDetector::new(criteria);
    assert!(detector.update(&s, PlanarPoint::ZERO, omega));
}

#[test]
fn tracking_error_must_persist_before_a_fall_is_declared() {
    let params = RobotParams::default();
    let omega = params.omega_per_s;
    let mut detector = FallDetector::new(FallCriteria::default());
    let s = standing(PlanarPoint::ZERO);
    let far_ref = PlanarPoint::new(0.6, 0.0);
    let mut at = |t: f64, xi_ref: PlanarPoint| {
        let mut state = s;
        state.time_s = t;
        detector.update(&state, xi_ref, omega)
    };
    assert!(!at(0.0, far_ref));
    assert!(!at(0.5, far_ref));
    // error clears and the timer restarts
    assert!(!at(0.6, PlanarPoint::ZERO));
    assert!(!at(0.7, far_ref));
    assert!(!at(1.6, far_ref));
    assert!(at(1.75, far_ref));
}

proptest! {
    #[test]
    fn splitting_a_step_is_exact(
        cx in -0.1f64..0.1, vx in -0.5f64..0.5, zx in -0.05f64..0.05,
        tau in -15.0f64..15.0, fx in -300.0f64..300.0,
    ) {
        let params = RobotParams::default();
        let limits = PlantLimits::default();
        let mut s = standing(PlanarPoint::new(cx, 0.0));
        s.com_vel = PlanarPoint::new(vx, 0.0);
        let zmp = PlanarPoint::new(zx, 0.0);
        let moment = CentroidalMoment { tau_x: 0.0, tau_y: tau };
        let force = PlanarPoint::new(fx, 0.0);
        let whole = plant_step(&s, zmp, moment, force, &limits, &params, 0.004).unwrap().0;
        let mut half = s;
        for _ in 0..2 {
            half = plant_step(&half, zmp, moment, force, &limits, &params, 0.002).unwrap().0;
        }
        prop_assert!((whole.com.x - half.com.x).abs() < 1e-12);
        prop_assert!((whole.com_vel.x - half.com_vel.x).abs() < 1e-11);
        prop_assert!((whole.cam.h_y - half.cam.h_y).abs() < 1e-12);
    }

    #[test]
    fn applied_inputs_respect_limits(
        zx in -1.0f64..1.0, zy in -1.0f64..1.0, tau in -100.0f64..100.0,
    ) {
        let params = RobotParams::default();
        let limits = PlantLimits::default();
        let s = standing(PlanarPoint::ZERO);
        let (_, applied) = plant_step(
            &s, PlanarPoint::new(zx, zy), CentroidalMoment { tau_x: tau, tau_y: -tau },
            PlanarPoint::ZERO, &limits, &params, 0.001,
        ).unwrap();
        let (lo, hi) = s.support_region(&limits.bands);
        prop_assert!(applied.zmp.x >= lo.x && applied.zmp.x <= hi.x);
        prop_assert!(applied.zmp.y >= lo.y && applied.zmp.y <= hi.y);
        prop_assert!(applied.moment.tau_x.abs() <= limits.tau_max_nm);
        prop_assert!(applied.moment.tau_y.abs() <= limits.tau_max_nm);
    }
}
