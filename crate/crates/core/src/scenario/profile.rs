//! Synthetic load and PV injection profiles.
//!
//! Per load node `i` at time `t`:
//! `p_i = base_i · d(t) · (1 + a_i(t)) − pv_i · r(t) · max(0, 1 + c_i(t))` and
//! `q_i = base_i · d(t) · (1 + a_i(t)) · tan φ_i`,
//! where `d` is a smooth daily load shape, `r` a clear-sky irradiance bell
//! between sunrise (06:00) and sunset (18:00), and `a_i`, `c_i` are
//! stationary AR(1) processes for load volatility and cloud transients.

use std::f64::consts::PI;

use nalgebra::DVector;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feeder::{FeederModel, Phase};
use crate::powerflow::InjectionVector;

/// Base load, PV capacity and power factor of one load node (per unit).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProfile {
    pub bus: u32,
    pub phase: String,
    pub base_p: f64,
    #[serde(default)]
    pub pv: Option<f64>,
    #[serde(default)]
    pub power_factor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProfileSpec {
    /// Clock time of `t = 1`, in hours.
    pub start_hour: f64,
    pub step_seconds: f64,
    /// Relative swing of the daily load shape (peak at 18:00).
    pub diurnal_amplitude: f64,
    /// Replace the daily load shape by 1.
    pub flat: bool,
    /// AR(1) coefficient of the per-node load fluctuation.
    pub ar_coefficient: f64,
    /// Stationary standard deviation of the load fluctuation (relative).
    pub volatility: f64,
    pub cloud_coefficient: f64,
    pub cloud_volatility: f64,
    /// Default lagging power factor.
    pub power_factor: f64,
    /// Base active load of load nodes not listed in `loads`.
    pub base_p: f64,
    /// PV capacity of load nodes not listed in `loads`.
    pub pv: f64,
    pub loads: Vec<LoadProfile>,
}

impl Default for ProfileSpec {
    fn default() -> Self {
        ProfileSpec {
            start_hour: 12.0,
            step_seconds: 1.0,
            diurnal_amplitude: 0.2,
            flat: false,
            ar_coefficient: 0.99,
            volatility: 0.05,
            cloud_coefficient: 0.95,
            cloud_volatility: 0.2,
            power_factor: 0.95,
            base_p: 0.1,
            pv: 0.0,
            loads: Vec::new(),
        }
    }
}

impl ProfileSpec {
    fn validate(&self) -> Result<()> {
        let loc = "profile";
        let finite = [
            self.start_hour,
            self.step_seconds,
            self.diurnal_amplitude,
            self.volatility,
            self.cloud_volatility,
        ];
        if finite.iter().any(|x| !x.is_finite()) {
            return Err(Error::validation(loc, "non-finite parameter"));
        }
        if !(self.step_seconds > 0.0) {
            return Err(Error::validation(loc, "step_seconds must be positive"));
        }
        if self.volatility < 0.0 || self.cloud_volatility < 0.0 {
            return Err(Error::validation(loc, "volatilities must be nonnegative"));
        }
        for (name, rho) in [
            ("ar_coefficient", self.ar_coefficient),
            ("cloud_coefficient", self.cloud_coefficient),
        ] {
            if !(rho > -1.0 && rho < 1.0) {
                return Err(Error::validation(loc, format!("{name} {rho} must lie in (-1, 1)")));
            }
        }
        Ok(())
    }
}

fn check_power_factor(pf: f64, where_: &str) -> Result<f64> {
    if !(pf > 0.0 && pf <= 1.0) {
        return Err(Error::validation(
            where_,
            format!("power factor {pf} must lie in (0, 1] (|φ| < 90°)"),
        ));
    }
    Ok((1.0 - pf * pf).sqrt() / pf)
}

#[derive(Clone, Debug)]
struct NodeProfile {
    node: usize,
    base: f64,
    pv: f64,
    tan_phi: f64,
}

/// Stateful generator; successive [`next`](Self::next) calls produce `t = 1, 2, …`.
#[derive(Clone, Debug)]
pub struct ProfileGenerator {
    spec: ProfileSpec,
    n_nodes: usize,
    nodes: Vec<NodeProfile>,
    load_ar: Vec<f64>,
    cloud_ar: Vec<f64>,
    rng: ChaCha8Rng,
    t: u64,
}

impl ProfileGenerator {
    pub fn new(spec: &ProfileSpec, model: &FeederModel, mut rng: ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let default_tan = check_power_factor(spec.power_factor, "profile")?;
        if spec.base_p < 0.0 || spec.pv < 0.0 {
            return Err(Error::validation(
                "profile",
                "default base_p and pv must be nonnegative",
            ));
        }
        let mut nodes: Vec<NodeProfile> = model
            .load_nodes()
            .iter()
            .map(|&node| NodeProfile {
                node,
                base: spec.base_p,
                pv: spec.pv,
                tan_phi: default_tan,
            })
            .collect();
        for lp in &spec.loads {
            let loc = format!("profile load {}.{}", lp.bus, lp.phase);
            let mut chars = lp.phase.chars();
            let phase = match (chars.next().and_then(Phase::from_char), chars.next()) {
                (Some(p), None) => p,
                _ => return Err(Error::validation(&loc, "phase must be one of a, b, c")),
            };
            let idx = model.node_index(lp.bus, phase)?;
            let entry = nodes
                .iter_mut()
                .find(|np| np.node == idx)
                .ok_or_else(|| Error::validation(&loc, "not a load node"))?;
            if !(lp.base_p >= 0.0 && lp.base_p.is_finite()) {
                return Err(Error::validation(
                    &loc,
                    format!("negative or non-finite base load {}", lp.base_p),
                ));
            }
            entry.base = lp.base_p;
            if let Some(pv) = lp.pv {
                if !(pv >= 0.0 && pv.is_finite()) {
                    return Err(Error::validation(
                        &loc,
                        format!("negative or non-finite PV capacity {pv}"),
                    ));
                }
                entry.pv = pv;
            }
            if let Some(pf) = lp.power_factor {
                entry.tan_phi = check_power_factor(pf, &loc)?;
            }
        }
        let k = nodes.len();
        let mut draw = |sd: f64| -> Vec<f64> {
            (0..k)
                .map(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    sd * e
                })
                .collect()
        };
        let load_ar = draw(spec.volatility);
        let cloud_ar = draw(spec.cloud_volatility);
        Ok(ProfileGenerator {
            spec: spec.clone(),
            n_nodes: model.n_nodes(),
            nodes,
            load_ar,
            cloud_ar,
            rng,
            t: 0,
        })
    }

    fn hour(&self, t: u64) -> f64 {
        self.spec.start_hour + (t as f64 - 1.0) * self.spec.step_seconds / 3600.0
    }

    /// Smooth daily load shape, peaking at 18:00.
    pub fn diurnal(&self, t: u64) -> f64 {
        if self.spec.flat {
            1.0
        } else {
            1.0 + self.spec.diurnal_amplitude * (2.0 * PI * (self.hour(t) - 18.0) / 24.0).cos()
        }
    }

    /// Clear-sky irradiance in [0, 1]: a half sine between 06:00 and 18:00.
    pub fn irradiance(&self, t: u64) -> f64 {
        let h = self.hour(t).rem_euclid(24.0);
        if (6.0..=18.0).contains(&h) {
            (PI * (h - 6.0) / 12.0).sin().max(0.0)
        } else {
            0.0
        }
    }

    fn injection(&self, t: u64, load_ar: &[f64], cloud_ar: &[f64]) -> InjectionVector {
        let mut p = DVector::zeros(self.n_nodes);
        let mut q = DVector::zeros(self.n_nodes);
        let d = self.diurnal(t);
        let r = self.irradiance(t);
        for (k, np) in self.nodes.iter().enumerate() {
            let load = np.base * d * (1.0 + load_ar[k]);
            p[np.node] = load - np.pv * r * (1.0 + cloud_ar[k]).max(0.0);
            q[np.node] = load * np.tan_phi;
        }
        InjectionVector::new(p, q)
    }

    /// The deterministic part of the profile (no fluctuations) at time `t`.
    pub fn nominal(&self, t: u64) -> InjectionVector {
        let zeros = vec![0.0; self.nodes.len()];
        self.injection(t, &zeros, &zeros)
    }

    /// Time index of the most recent injection.
    pub fn t(&self) -> u64 {
        self.t
    }

    /// Advances the fluctuation processes and returns `(t, injections)`.
    pub fn next_injection(&mut self) -> (u64, InjectionVector) {
        self.t += 1;
        if self.t > 1 {
            let (rho, sd) = (self.spec.ar_coefficient, self.spec.volatility);
            let (crho, csd) = (self.spec.cloud_coefficient, self.spec.cloud_volatility);
            for k in 0..self.nodes.len() {
                let e: f64 = self.rng.sample(StandardNormal);
                self.load_ar[k] = rho * self.load_ar[k] + (1.0 - rho * rho).sqrt() * sd * e;
                let c: f64 = self.rng.sample(StandardNormal);
                self.cloud_ar[k] = crho * self.cloud_ar[k] + (1.0 - crho * crho).sqrt() * csd * c;
            }
        }
        (self.t, self.injection(self.t, &self.load_ar, &self.cloud_ar))
    }
}
