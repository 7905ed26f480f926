mod common;

use dsse_core::powerflow::{jacobian_vm, power_mismatch, solve_power_flow, solve_power_flow_from};
use dsse_core::{FeederTemplate, InjectionVector, JacobianMethod, PowerFlowOptions};
use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn solutions_satisfy_the_power_balance() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for template in FeederTemplate::ALL {
        let model = template.load();
        for _ in 0..10 {
            let s = common::random_loads(&model, common::light_load(&model), &mut rng);
            let sol = solve_power_flow(&model, &s, &PowerFlowOptions::default()).unwrap();
            assert!(power_mismatch(&model, &sol.v_complex, &s) < 1e-9, "{}", template.name());
            assert_eq!(sol.v_mag, sol.v_complex.map(|v| v.norm()));
        }
    }
}

#[test]
fn warm_start_does_not_change_the_solution() {
    let model = FeederTemplate::ThirteenNode.load();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let opts = PowerFlowOptions::default();
    let a = common::random_loads(&model, 0.08, &mut rng);
    let b = common::random_loads(&model, 0.08, &mut rng);
    let start = solve_power_flow(&model, &a, &opts).unwrap();
    let warm = solve_power_flow_from(&model, &b, &opts, &start.v_complex).unwrap();
    let cold = solve_power_flow(&model, &b, &opts).unwrap();
    assert!((warm.v_mag - cold.v_mag).amax() < 1e-10);
}

/// The linearization error of `v(s + δ)` is second order: halving `δ` cuts it
/// by about four.
#[test]
fn linearization_error_is_second_order() {
    let model = FeederTemplate::FourBus.load();
    let opts = PowerFlowOptions::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let s = common::random_loads(&model, 0.3, &mut rng);
    let base = solve_power_flow(&model, &s, &opts).unwrap();
    let sens = jacobian_vm(&model, &s, JacobianMethod::FixedPointLinearization, &opts).unwrap();
    let dir = common::random_loads(&model, 1.0, &mut rng).to_state();
    let err = |h: f64| {
        let z = s.to_state() + &dir * h;
        let v = solve_power_flow(&model, &InjectionVector::from_state(&z), &opts)
            .unwrap()
            .v_mag;
        let predicted: DVector<f64> = &base.v_mag + &sens.h * (&dir * h);
        (v - predicted).amax()
    };
    let ratio = err(0.02) / err(0.01);
    assert!((3.5..4.5).contains(&ratio), "ratio {ratio}");
}

#[test]
fn heavier_load_lowers_every_load_voltage_on_a_single_phase_line() {
    let model = FeederTemplate::TwoBus.load();
    let opts = PowerFlowOptions::default();
    let mut last = 1.0;
    for k in 1..=5 {
        let mut s = InjectionVector::zeros(1);
        s.p[0] = 0.1 * k as f64;
        s.q[0] = 0.03 * k as f64;
        let v = solve_power_flow(&model, &s, &opts).unwrap().v_mag[0];
        assert!(v < last);
        last = v;
    }
}
