use std::collections::BTreeMap;
use std::io::Write;

use crate::controllers::{ControllerKind, VehicleId};
use crate::geometry::{Lane, RoadNetwork};

use super::VehicleParams;

/// One vehicle at the start of a step, with the command applied over it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleRecord {
    pub id: VehicleId,
    pub origin: Lane,
    pub lane: Lane,
    pub s: f64,
    pub speed: f64,
    pub u: f64,
    pub accel: f64,
    pub faulted: bool,
    /// The vehicle's own disturbance estimate `ŵ_{i|i}` (DPC-CBF only).
    pub w_self: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub time: f64,
    pub records: Vec<VehicleRecord>,
    /// Minimum zero-margin barrier value over all pairs, if there are any.
    pub h0_min: Option<f64>,
    pub infeasible: usize,
}

/// Everything a run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct SimLog {
    pub controller: ControllerKind,
    pub ts: f64,
    pub net: RoadNetwork,
    pub params: BTreeMap<VehicleId, VehicleParams>,
    pub steps: Vec<StepLog>,
    /// Distinct vehicle pairs whose zero-margin barrier went negative.
    pub collision_pairs: Vec<(VehicleId, VehicleId)>,
    pub infeasible_flags: usize,
    /// The run hit the time cap with vehicles still in the zone.
    pub timed_out: bool,
}

pub const CSV_HEADER: [&str; 9] = [
    "time_s",
    "id",
    "lane",
    "s_m",
    "speed_mps",
    "u_mps",
    "accel_mps2",
    "faulted",
    "h0_min_m2",
];

impl SimLog {
    pub fn collisions(&self) -> usize {
        self.collision_pairs.len()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(CSV_HEADER)?;
        for step in &self.steps {
            let h0 = step.h0_min.map(|h| h.to_string()).unwrap_or_default();
            for r in &step.records {
                w.write_record([
                    step.time.to_string(),
                    r.id.to_string(),
                    r.lane.as_str().to_string(),
                    r.s.to_string(),
                    r.speed.to_string(),
                    r.u.to_string(),
                    r.accel.to_string(),
                    u8::from(r.faulted).to_string(),
                    h0.clone(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_columns_in_fixed_order() {
        let log = SimLog {
            controller: ControllerKind::Fifo,
            ts: 0.1,
            net: RoadNetwork::default(),
            params: BTreeMap::new(),
            steps: vec![StepLog {
                time: 0.5,
                records: vec![VehicleRecord {
                    id: 3,
                    origin: Lane::Merge,
                    lane: Lane::Merge,
                    s: -12.5,
                    speed: 20.0,
                    u: 20.4,
                    accel: 1.0,
                    faulted: false,
                    w_self: 0.0,
                }],
                h0_min: None,
                infeasible: 0,
            }],
            collision_pairs: vec![],
            infeasible_flags: 0,
            timed_out: false,
        };
        let mut buf = Vec::new();
        log.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "time_s,id,lane,s_m,speed_mps,u_mps,accel_mps2,faulted,h0_min_m2"
        );
        assert_eq!(lines.next().unwrap(), "0.5,3,merge,-12.5,20,20.4,1,0,");
    }
}
