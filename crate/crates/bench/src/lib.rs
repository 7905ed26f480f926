//! Fixtures shared by the benchmarks: a metered 13-node feeder with one
//! noisy measurement batch and an estimator state ready to step.

use dsse_core::measurement::{arrival_subset, build_meter_set, synthesize_batch, PlacementConfig};
use dsse_core::powerflow::solve_power_flow;
use dsse_core::{
    ArrivalPolicy, EstimatorState, FeederModel, FeederTemplate, InjectionVector, MeasurementBatch, MeterSet,
    OnlineSettings, PowerFlowOptions,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct Fixture {
    pub model: FeederModel,
    pub meters: MeterSet,
    pub truth: InjectionVector,
    /// Every meter's reading.
    pub full_batch: MeasurementBatch,
    /// One voltage meter and three pseudo pairs, plus the virtual meters.
    pub sparse_batch: MeasurementBatch,
    pub state: EstimatorState,
}

impl Fixture {
    pub fn ieee13() -> Self {
        let model = FeederTemplate::ThirteenNode.load();
        let mut truth = InjectionVector::zeros(model.n_nodes());
        for (k, &i) in model.load_nodes().iter().enumerate() {
            truth.p[i] = 0.04 + 0.005 * (k % 5) as f64;
            truth.q[i] = 0.3 * truth.p[i];
        }
        let meters = build_meter_set(&model, &PlacementConfig::new(truth.clone(), 1)).expect("placement");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let sol = solve_power_flow(&model, &truth, &PowerFlowOptions::default()).expect("power flow");
        let full_batch = synthesize_batch(1, &truth, &sol.v_mag, &meters, &mut rng).expect("batch");
        let policy = ArrivalPolicy::Mixed { k_v: 1, k_pq: 3 };
        let ids = arrival_subset(&meters, &policy, 1, &mut rng).expect("arrival");
        let sparse_batch = full_batch.restrict(&ids).expect("subset");
        let z0 = truth.to_state() * 0.9;
        let state = EstimatorState::new(&model, &z0, 1e-6, OnlineSettings::default()).expect("state");
        Fixture {
            model,
            meters,
            truth,
            full_batch,
            sparse_batch,
            state,
        }
    }
}
