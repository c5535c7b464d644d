use cpmpc::model::{cp_discrete_step, RobotParams};
use cpmpc::predictor::{build_horizon_model, moment_index, predict, zmp_index};
use nalgebra::DVector;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn iterate(xi0: f64, inputs: &DVector<f64>, params: &RobotParams) -> Vec<f64> {
    let mut xi = xi0;
    (0..params.horizon_ticks)
        .map(|k| {
            xi = cp_discrete_step(xi, inputs[zmp_index(k)], inputs[moment_index(k)], params);
            xi
        })
        .collect()
}

#[test]
fn condensed_matches_recursion_on_random_inputs() {
    let params = RobotParams::default();
    let model = build_horizon_model(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..100 {
        let xi0 = rng.gen_range(-0.2..0.2);
        let inputs = DVector::from_fn(2 * params.horizon_ticks, |i, _| {
            if i % 2 == 0 {
                rng.gen_range(-0.1..0.1)
            } else {
                rng.gen_range(-15.0..15.0)
            }
        });
        let condensed = predict(&model, xi0, &inputs).unwrap();
        for (a, b) in condensed.iter().zip(iterate(xi0, &inputs, &params)) {
            assert!((a - b).abs() <= 1e-9);
        }
    }
}

proptest! {
    #[test]
    fn prediction_is_linear(
        xi0 in -0.3f64..0.3,
        p1 in prop::collection::vec(-1.0f64..1.0, 40),
        p2 in prop::collection::vec(-1.0f64..1.0, 40),
    ) {
        let params = RobotParams::new(100.0, 0.81, 9.81, 0.02, 20).unwrap();
        let model = build_horizon_model(&params);
        let p1 = DVector::from_vec(p1);
        let p2 = DVector::from_vec(p2);
        let lhs = predict(&model, xi0, &(&p1 + &p2)).unwrap();
        let rhs = predict(&model, xi0, &p1).unwrap() + predict(&model, 0.0, &p2).unwrap();
        prop_assert!((lhs - rhs).amax() <= 1e-12);
    }
}
