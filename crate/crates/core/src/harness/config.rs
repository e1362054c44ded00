use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cbf::{BarrierGains, A_MAX, A_MIN};
use crate::controllers::{ControllerGains, FifoGains};
use crate::geometry::RoadNetwork;
use crate::sim::SimConfig;
use crate::units::{lb_to_kg, DEFAULT_ALPHA, M_BASE_KG};

use super::HarnessError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub merge_angle_deg: f64,
    pub cz_upstream_m: f64,
    pub cz_downstream_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficSection {
    pub vehicles_per_lane: usize,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub rate_min_vph: f64,
    pub rate_max_vph: f64,
    pub mass_min_kg: f64,
    pub mass_max_kg: f64,
    pub radius_min_m: f64,
    pub radius_max_m: f64,
    /// Uniform headway perturbation as a fraction of the nominal headway.
    pub headway_jitter: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub ts_s: f64,
    pub max_time_s: f64,
    pub seed: u64,
    pub runs: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CbfSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub tau_f_s: f64,
    pub tau_w_s: f64,
    pub alpha_per_kg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FifoSection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub slack_weight: f64,
    pub speed_gain_per_s: f64,
    /// Rows use the leader's broadcast acceleration rather than zero.
    pub leader_accel: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSection {
    /// The victim loses power when it reaches this arc position.
    pub trigger_s_m: f64,
}

/// Full experiment description, serialized as TOML with SI units.
///
/// The vehicle mass bounds may instead be given as `mass_base_lbs` and
/// `mass_max_factor`; they are converted to kilograms on load.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub network: NetworkSection,
    pub traffic: TrafficSection,
    pub run: RunSection,
    pub dpc_cbf: CbfSection,
    pub c_cbf: CbfSection,
    pub fifo: FifoSection,
    pub fault: FaultSection,
}

impl Default for CbfSection {
    fn default() -> Self {
        let b = BarrierGains::default();
        Self {
            lambda1: b.lambda1,
            lambda2: b.lambda2,
            beta: b.beta,
            tau_f_s: b.tau_f,
            tau_w_s: 0.4,
            alpha_per_kg: DEFAULT_ALPHA,
        }
    }
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        let net = RoadNetwork::default();
        let fifo = FifoGains::default();
        Self {
            network: NetworkSection {
                merge_angle_deg: net.merge_angle_rad.to_degrees(),
                cz_upstream_m: net.cz_upstream_m,
                cz_downstream_m: net.cz_downstream_m,
            },
            traffic: TrafficSection {
                vehicles_per_lane: 10,
                speed_min_mps: 20.0,
                speed_max_mps: 25.0,
                rate_min_vph: 1100.0,
                rate_max_vph: 1200.0,
                mass_min_kg: M_BASE_KG,
                mass_max_kg: 4.0 * M_BASE_KG,
                radius_min_m: 2.0,
                radius_max_m: 4.0,
                headway_jitter: 0.25,
            },
            run: RunSection {
                ts_s: 0.1,
                max_time_s: 300.0,
                seed: 20_250_101,
                runs: 500,
            },
            dpc_cbf: CbfSection::default(),
            c_cbf: CbfSection::default(),
            fifo: FifoSection {
                lambda1: fifo.lambda1,
                lambda2: fifo.lambda2,
                beta: fifo.beta,
                slack_weight: fifo.slack_weight,
                speed_gain_per_s: fifo.k_v,
                leader_accel: fifo.leader_accel,
            },
            fault: FaultSection { trigger_s_m: -150.0 },
        }
    }
}

fn ordered(name: &str, lo: f64, hi: f64) -> Result<(), HarnessError> {
    if lo.is_finite() && hi.is_finite() && lo <= hi {
        Ok(())
    } else {
        Err(HarnessError::Config(format!("{name}: bounds must be finite with lo <= hi")))
    }
}

impl CbfSection {
    pub fn gains(&self, ts: f64) -> ControllerGains {
        ControllerGains {
            barrier: BarrierGains {
                lambda1: self.lambda1,
                lambda2: self.lambda2,
                beta: self.beta,
                tau_f: self.tau_f_s,
            },
            tau_w: self.tau_w_s,
            alpha: self.alpha_per_kg,
            ts,
            a_min: A_MIN,
            a_max: A_MAX,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let t = &self.traffic;
        ordered("speed", t.speed_min_mps, t.speed_max_mps)?;
        ordered("rate", t.rate_min_vph, t.rate_max_vph)?;
        ordered("mass", t.mass_min_kg, t.mass_max_kg)?;
        ordered("radius", t.radius_min_m, t.radius_max_m)?;
        if !(t.speed_min_mps > 0.0 && t.rate_min_vph > 0.0 && t.mass_min_kg > 0.0 && t.radius_min_m > 0.0) {
            return Err(HarnessError::Config("traffic lower bounds must be positive".into()));
        }
        if !(0.0..0.5).contains(&t.headway_jitter) {
            return Err(HarnessError::Config("headway_jitter must lie in [0, 0.5)".into()));
        }
        if self.run.seed > i64::MAX as u64 {
            return Err(HarnessError::Config("seed must not exceed 2^63 - 1".into()));
        }
        if self.run.runs == 0 {
            return Err(HarnessError::Config("run count must be at least 1".into()));
        }
        if !(self.run.ts_s > 0.0 && self.run.max_time_s > 0.0) {
            return Err(HarnessError::Config("ts_s and max_time_s must be positive".into()));
        }
        self.network().validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        for (name, s) in [("dpc_cbf", &self.dpc_cbf), ("c_cbf", &self.c_cbf)] {
            s.gains(self.run.ts_s)
                .barrier
                .validate()
                .map_err(|e| HarnessError::Config(format!("{name}: {e}")))?;
            if !(s.tau_w_s > 0.0 && s.alpha_per_kg >= 0.0) {
                return Err(HarnessError::Config(format!("{name}: tau_w_s > 0 and alpha_per_kg >= 0 required")));
            }
        }
        let f = &self.fifo;
        if !(f.lambda1 > 0.0 && f.lambda2 > 0.0 && f.beta >= 0.0 && f.slack_weight > 0.0 && f.speed_gain_per_s > 0.0) {
            return Err(HarnessError::Config("fifo gains must be positive".into()));
        }
        Ok(())
    }

    pub fn network(&self) -> RoadNetwork {
        RoadNetwork {
            merge_angle_rad: self.network.merge_angle_deg.to_radians(),
            cz_upstream_m: self.network.cz_upstream_m,
            cz_downstream_m: self.network.cz_downstream_m,
        }
    }

    /// Simulation settings for DPC-CBF or FIFO (`central == false`) or C-CBF.
    pub fn sim_config(&self, central: bool) -> SimConfig {
        let cbf = if central { &self.c_cbf } else { &self.dpc_cbf };
        SimConfig {
            gains: cbf.gains(self.run.ts_s),
            fifo: FifoGains {
                lambda1: self.fifo.lambda1,
                lambda2: self.fifo.lambda2,
                beta: self.fifo.beta,
                slack_weight: self.fifo.slack_weight,
                k_v: self.fifo.speed_gain_per_s,
                a_min: A_MIN,
                a_max: A_MAX,
                leader_accel: self.fifo.leader_accel,
            },
            max_time: self.run.max_time_s,
            host_order: Default::default(),
        }
    }

    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut value: toml::Table = text.parse().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        if let Some(toml::Value::Table(traffic)) = value.get_mut("traffic") {
            if let Some(lbs) = traffic.remove("mass_base_lbs") {
                let lbs = lbs
                    .as_float()
                    .or_else(|| lbs.as_integer().map(|i| i as f64))
                    .ok_or_else(|| HarnessError::Config("mass_base_lbs must be a number".into()))?;
                let factor = match traffic.remove("mass_max_factor") {
                    Some(v) => v
                        .as_float()
                        .or_else(|| v.as_integer().map(|i| i as f64))
                        .ok_or_else(|| HarnessError::Config("mass_max_factor must be a number".into()))?,
                    None => 4.0,
                };
                let kg = lb_to_kg(lbs);
                traffic.insert("mass_min_kg".into(), toml::Value::Float(kg));
                traffic.insert("mass_max_kg".into(), toml::Value::Float(kg * factor));
            }
        }
        let cfg: Self = value.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        self.validate()?;
        toml::to_string(self).map_err(|e| HarnessError::Config(e.to_string()))
    }
}
