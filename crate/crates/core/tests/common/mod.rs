#![allow(dead_code)]

use dsse_core::{FeederModel, InjectionVector};
use rand::Rng;

/// Random consuming loads on the load nodes: `p ∈ [0, p_max]`, `q ∈ [0, p_max / 2]`.
pub fn random_loads<R: Rng>(model: &FeederModel, p_max: f64, rng: &mut R) -> InjectionVector {
    let mut s = InjectionVector::zeros(model.n_nodes());
    for &i in model.load_nodes() {
        s.p[i] = rng.random_range(0.0..p_max);
        s.q[i] = rng.random_range(0.0..p_max / 2.0);
    }
    s
}

/// Largest load that keeps every embedded feeder well inside its feasible region.
pub fn light_load(model: &FeederModel) -> f64 {
    if model.n_nodes() > 10 {
        0.08
    } else {
        0.3
    }
}
