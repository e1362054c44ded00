//! Safety, flow, and powertrain-agnostic energy metrics.
//!
//! Energy bookkeeping per vehicle and step `k` (time step `Ts`):
//!
//! * PaKE: `max(0, ½ m (v_{k+1}² - v_k²))` when `a_k > 0`
//! * braking: `E_b = max(0, -(m a_k + F_rl(v_k))) v_k Ts`
//! * road load: `E_rl = F_rl(v_k) v_k Ts`
//! * BE accumulates `E_b`, TEL accumulates `max(E_b, E_rl)`
//!
//! Totals are divided by distance travelled and reported in Wh/km; fleet
//! values are plain means over vehicles.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::barrier_value;
use crate::controllers::VehicleId;
use crate::geometry::{self, LanePosition, RoadNetwork};
use crate::sim::{SimLog, StepLog, VehicleParams};
use crate::units::WH_PER_KM_PER_J_PER_M;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("negative speed {0}")]
    NegativeSpeed(f64),
    #[error("no parameters for vehicle {0}")]
    MissingParams(VehicleId),
    #[error("empty log")]
    EmptyLog,
    #[error("coast-down table: {0}")]
    Table(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Quadratic road-load coefficients `F = c0 + c1 v + c2 v²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoastDown {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

pub fn road_load_force(v: f64, cd: &CoastDown) -> Result<f64, MetricsError> {
    if v < 0.0 {
        return Err(MetricsError::NegativeSpeed(v));
    }
    Ok(cd.c0 + cd.c1 * v + cd.c2 * v * v)
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
struct TableRow {
    mass_kg: f64,
    c0_n: f64,
    c1_nspm: f64,
    c2_ns2pm2: f64,
}

/// Coast-down coefficients by vehicle mass.
#[derive(Debug, Clone, PartialEq)]
pub struct CoastDownTable {
    rows: Vec<(f64, CoastDown)>,
}

const BUNDLED_TABLE: &str = include_str!("../data/coast_down.csv");

impl Default for CoastDownTable {
    fn default() -> Self {
        Self::from_reader(BUNDLED_TABLE.as_bytes()).expect("bundled table parses")
    }
}

impl CoastDownTable {
    /// Reads `mass_kg,c0_n,c1_nspm,c2_ns2pm2` rows.
    pub fn from_reader<R: std::io::Read>(r: R) -> Result<Self, MetricsError> {
        let mut reader = csv::Reader::from_reader(r);
        let headers = reader.headers()?.clone();
        let expected = ["mass_kg", "c0_n", "c1_nspm", "c2_ns2pm2"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(MetricsError::Table(format!("unexpected header {headers:?}")));
        }
        let mut rows = Vec::new();
        for rec in reader.deserialize() {
            let r: TableRow = rec?;
            if !(r.mass_kg > 0.0) || r.c0_n < 0.0 || r.c1_nspm < 0.0 || r.c2_ns2pm2 < 0.0 {
                return Err(MetricsError::Table(format!("invalid row {r:?}")));
            }
            rows.push((
                r.mass_kg,
                CoastDown {
                    c0: r.c0_n,
                    c1: r.c1_nspm,
                    c2: r.c2_ns2pm2,
                },
            ));
        }
        if rows.is_empty() {
            return Err(MetricsError::Table("no rows".into()));
        }
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        Ok(Self { rows })
    }

    pub fn from_path(path: &Path) -> Result<Self, MetricsError> {
        Self::from_reader(std::fs::File::open(path)?)
    }

    pub fn rows(&self) -> impl Iterator<Item = (f64, CoastDown)> + '_ {
        self.rows.iter().copied()
    }

    /// Linear interpolation in mass, clamped to the table's end rows.
    pub fn interpolate(&self, mass: f64) -> CoastDown {
        let first = self.rows[0];
        let last = self.rows[self.rows.len() - 1];
        if mass <= first.0 {
            return first.1;
        }
        if mass >= last.0 {
            return last.1;
        }
        let k = self.rows.partition_point(|r| r.0 <= mass);
        let (m0, a) = self.rows[k - 1];
        let (m1, b) = self.rows[k];
        let w = (mass - m0) / (m1 - m0);
        CoastDown {
            c0: a.c0 + w * (b.c0 - a.c0),
            c1: a.c1 + w * (b.c1 - a.c1),
            c2: a.c2 + w * (b.c2 - a.c2),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleEnergy {
    pub id: VehicleId,
    pub distance_m: f64,
    pub pake_whpkm: f64,
    pub be_whpkm: f64,
    pub tel_whpkm: f64,
    /// Road-load-only loss over the same trajectory.
    pub road_load_whpkm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub per_vehicle: Vec<VehicleEnergy>,
    pub pake_whpkm: f64,
    pub be_whpkm: f64,
    pub tel_whpkm: f64,
}

/// Per-vehicle sequences `(time, s, speed, accel)` in log order.
fn trajectories(steps: &[StepLog]) -> BTreeMap<VehicleId, Vec<(f64, LanePosition, f64, f64)>> {
    let mut out: BTreeMap<VehicleId, Vec<_>> = BTreeMap::new();
    for step in steps {
        for r in &step.records {
            out.entry(r.id).or_default().push((
                step.time,
                LanePosition::new(r.lane, r.s),
                r.speed,
                r.accel,
            ));
        }
    }
    out
}

pub fn energy_metrics(
    steps: &[StepLog],
    params: &BTreeMap<VehicleId, VehicleParams>,
    ts: f64,
) -> Result<EnergyReport, MetricsError> {
    if steps.is_empty() {
        return Err(MetricsError::EmptyLog);
    }
    let mut per_vehicle = Vec::new();
    for (id, traj) in trajectories(steps) {
        let p = params.get(&id).ok_or(MetricsError::MissingParams(id))?;
        let m = p.mass;
        let (mut pake, mut be, mut tel, mut rl, mut dist) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (k, &(_, pos, v, a)) in traj.iter().enumerate() {
            let (v_next, ds) = match traj.get(k + 1) {
                Some(&(_, next, vn, _)) => (vn, next.s - pos.s),
                None => {
                    let vn = (v + a * ts).max(0.0);
                    (vn, (v * ts + 0.5 * a * ts * ts).max(0.0))
                }
            };
            dist += ds;
            if a > 0.0 {
                pake += (0.5 * m * (v_next * v_next - v * v)).max(0.0);
            }
            let f_rl = road_load_force(v, &p.coast_down)?;
            let e_b = (-(m * a + f_rl)).max(0.0) * v * ts;
            let e_rl = f_rl * v * ts;
            be += e_b;
            tel += e_b.max(e_rl);
            rl += e_rl;
        }
        let norm = if dist > 0.0 { WH_PER_KM_PER_J_PER_M / dist } else { 0.0 };
        per_vehicle.push(VehicleEnergy {
            id,
            distance_m: dist,
            pake_whpkm: pake * norm,
            be_whpkm: be * norm,
            tel_whpkm: tel * norm,
            road_load_whpkm: rl * norm,
        });
    }
    let n = per_vehicle.len() as f64;
    let mean = |f: fn(&VehicleEnergy) -> f64| per_vehicle.iter().map(f).sum::<f64>() / n;
    Ok(EnergyReport {
        pake_whpkm: mean(|e| e.pake_whpkm),
        be_whpkm: mean(|e| e.be_whpkm),
        tel_whpkm: mean(|e| e.tel_whpkm),
        per_vehicle,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowReport {
    /// Last merge-point crossing; infinite when a vehicle never crossed.
    pub travel_time_s: f64,
    pub avg_speed_mps: f64,
    pub gridlock: bool,
    pub crossings: Vec<(VehicleId, f64)>,
}

/// Merge-point crossing time of one trajectory, linearly interpolated.
fn crossing_time(traj: &[(f64, LanePosition, f64, f64)]) -> Option<f64> {
    let first = traj.first()?;
    if first.1.s >= 0.0 {
        return Some(first.0);
    }
    traj.windows(2).find_map(|w| {
        let (t0, p0, ..) = w[0];
        let (t1, p1, ..) = w[1];
        (p0.s < 0.0 && p1.s >= 0.0).then(|| t0 + (t1 - t0) * (-p0.s) / (p1.s - p0.s))
    })
}

pub fn flow_metrics(steps: &[StepLog]) -> FlowReport {
    let mut crossings = Vec::new();
    let mut gridlock = false;
    let mut speed_sum = 0.0;
    let mut count = 0usize;
    for (id, traj) in trajectories(steps) {
        match crossing_time(&traj) {
            Some(t) => crossings.push((id, t)),
            None => gridlock = true,
        }
        speed_sum += traj.iter().map(|x| x.2).sum::<f64>() / traj.len() as f64;
        count += 1;
    }
    let travel_time_s = if gridlock {
        f64::INFINITY
    } else {
        crossings.iter().map(|c| c.1).fold(0.0, f64::max)
    };
    FlowReport {
        travel_time_s,
        avg_speed_mps: if count > 0 { speed_sum / count as f64 } else { 0.0 },
        gridlock,
        crossings,
    }
}

/// Minimum over steps and pairs of the zero-margin barrier value.
pub fn h0_min(steps: &[StepLog], radii: &BTreeMap<VehicleId, f64>, net: &RoadNetwork) -> Option<f64> {
    let mut min: Option<f64> = None;
    for step in steps {
        let pts: Vec<_> = step
            .records
            .iter()
            .map(|r| {
                let (x, _) = geometry::to_plane_unchecked(LanePosition::new(r.lane, r.s), 0.0, net);
                (x, radii.get(&r.id).copied().unwrap_or(0.0))
            })
            .collect();
        for (k, &(xa, ra)) in pts.iter().enumerate() {
            for &(xb, rb) in &pts[k + 1..] {
                let h = barrier_value(geometry::sub(xa, xb), ra, rb, 0.0);
                min = Some(min.map_or(h, |m: f64| m.min(h)));
            }
        }
    }
    min
}

/// Per-run summary, serialized as the run's metrics JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub pake_whpkm: f64,
    pub be_whpkm: f64,
    pub tel_whpkm: f64,
    pub travel_time_s: f64,
    pub avg_speed_mps: f64,
    pub h0_min_m2: f64,
    pub collisions: usize,
    pub infeasible_flags: usize,
    pub gridlock: bool,
    #[serde(skip)]
    pub per_vehicle: Vec<VehicleEnergy>,
}

impl MetricsReport {
    pub fn from_log(log: &SimLog) -> Result<Self, MetricsError> {
        let energy = energy_metrics(&log.steps, &log.params, log.ts)?;
        let flow = flow_metrics(&log.steps);
        let radii: BTreeMap<_, _> = log.params.iter().map(|(&id, p)| (id, p.radius)).collect();
        Ok(Self {
            pake_whpkm: energy.pake_whpkm,
            be_whpkm: energy.be_whpkm,
            tel_whpkm: energy.tel_whpkm,
            travel_time_s: flow.travel_time_s,
            avg_speed_mps: flow.avg_speed_mps,
            h0_min_m2: h0_min(&log.steps, &radii, &log.net).unwrap_or(f64::INFINITY),
            collisions: log.collisions(),
            infeasible_flags: log.infeasible_flags,
            gridlock: flow.gridlock || log.timed_out,
            per_vehicle: energy.per_vehicle,
        })
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "pake_whpkm": self.pake_whpkm,
            "be_whpkm": self.be_whpkm,
            "tel_whpkm": self.tel_whpkm,
            "travel_time_s": self.travel_time_s,
            "avg_speed_mps": self.avg_speed_mps,
            "h0_min_m2": self.h0_min_m2,
            "collisions": self.collisions,
        })
    }
}
