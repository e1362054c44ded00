//! Discrete-time merge simulation.
//!
//! Each step takes one immutable snapshot of the control zone, evaluates the
//! controller(s) against it, then advances every plant. Vehicles are injected
//! at the zone entrance on a pre-drawn schedule and evicted past the exit.

mod log;
mod plant;

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::barrier_value;
use crate::controllers::{
    self, AgentView, ControlError, ControllerGains, ControllerKind, DisturbanceLedger, FifoGains,
    Observation, Snapshot, VehicleId,
};
use crate::geometry::{self, dot, Lane, LanePosition, RoadNetwork};
use crate::qp::ActiveSetSolver;

pub use log::{SimLog, StepLog, VehicleRecord, CSV_HEADER};
pub use plant::{
    coast_down_accel, faulted_step, plant_step, plant_step_accel, VehicleParams, VehicleState,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("duplicate vehicle id {0}")]
    DuplicateId(VehicleId),
    #[error("fault victim {0} is not part of the scenario")]
    UnknownVictim(VehicleId),
    #[error("vehicle {id}: initial position {s} m is outside the control zone or lane")]
    BadPlacement { id: VehicleId, s: f64 },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Control(#[from] ControlError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum FaultTrigger {
    /// Simulation time in seconds.
    Time(f64),
    /// Arc position the victim must reach.
    Position(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultSpec {
    pub victim: VehicleId,
    pub trigger: FaultTrigger,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleSpec {
    pub id: VehicleId,
    pub lane: Lane,
    pub params: VehicleParams,
    pub initial_speed: f64,
    /// Scheduled arrival at the zone entrance.
    pub arrival_time: f64,
    /// Explicit placement at `t = 0`, bypassing the entrance schedule.
    pub initial_s: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub net: RoadNetwork,
    pub vehicles: Vec<VehicleSpec>,
    pub fault: Option<FaultSpec>,
}

/// Order in which per-host controllers are evaluated inside a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum HostOrder {
    #[default]
    Ascending,
    Descending,
    Shuffled(u64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub gains: ControllerGains,
    pub fifo: FifoGains,
    /// Hard stop; a run still populated at this time is flagged.
    pub max_time: f64,
    pub host_order: HostOrder,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            gains: ControllerGains::default(),
            fifo: FifoGains::default(),
            max_time: 300.0,
            host_order: HostOrder::Ascending,
        }
    }
}

impl SimConfig {
    fn entry_gate(&self, kind: ControllerKind) -> (f64, f64) {
        match kind {
            ControllerKind::Fifo => (self.fifo.beta, self.fifo.lambda1),
            _ => (self.gains.barrier.beta, self.gains.barrier.lambda1),
        }
    }
}

fn validate(scenario: &Scenario, cfg: &SimConfig) -> Result<(), SimError> {
    scenario
        .net
        .validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    cfg.gains
        .barrier
        .validate()
        .map_err(|e| SimError::Config(e.to_string()))?;
    if !(cfg.gains.ts > 0.0 && cfg.gains.tau_w > 0.0 && cfg.gains.alpha >= 0.0) {
        return Err(SimError::Config("ts and tau_w must be positive, alpha nonnegative".into()));
    }
    let mut seen = BTreeSet::new();
    for v in &scenario.vehicles {
        if !seen.insert(v.id) {
            return Err(SimError::DuplicateId(v.id));
        }
        if let Some(s) = v.initial_s {
            let lane_ok = v.lane == Lane::Highway || s < 0.0;
            if !scenario.net.in_zone(s) || !lane_ok {
                return Err(SimError::BadPlacement { id: v.id, s });
            }
        }
    }
    if let Some(f) = scenario.fault {
        if !seen.contains(&f.victim) {
            return Err(SimError::UnknownVictim(f.victim));
        }
    }
    Ok(())
}

struct Active {
    state: VehicleState,
    params: VehicleParams,
}

fn view(a: &Active) -> AgentView {
    AgentView {
        id: a.state.id,
        pos: a.state.pos,
        speed: a.state.speed,
        accel: a.state.last_accel,
        mass: a.params.mass,
        radius: a.params.radius,
        desired_speed: a.params.desired_speed,
        cz_entry_time: a.state.cz_entry_time,
    }
}

/// Entrance admission: positive barrier and inside the first-order
/// admissible set `ḣ + λ1 h ≥ 0` against every vehicle already present.
fn admissible(
    cand: LanePosition,
    speed: f64,
    radius: f64,
    active: &[Active],
    net: &RoadNetwork,
    beta: f64,
    lambda1: f64,
) -> bool {
    let (x, v) = geometry::to_plane_unchecked(cand, speed, net);
    active.iter().all(|o| {
        let (xo, vo) = geometry::to_plane_unchecked(o.state.pos, o.state.speed, net);
        let xi = geometry::sub(x, xo);
        let vr = geometry::sub(v, vo);
        let h = barrier_value(xi, radius, o.params.radius, beta);
        h > 0.0 && 2.0 * dot(xi, vr) + lambda1 * h >= 0.0
    })
}

fn pairwise_h0(active: &[Active], net: &RoadNetwork, hits: &mut BTreeSet<(VehicleId, VehicleId)>) -> Option<f64> {
    let mut min: Option<f64> = None;
    for (k, a) in active.iter().enumerate() {
        let (xa, _) = geometry::to_plane_unchecked(a.state.pos, 0.0, net);
        for b in &active[k + 1..] {
            let (xb, _) = geometry::to_plane_unchecked(b.state.pos, 0.0, net);
            let h = barrier_value(geometry::sub(xa, xb), a.params.radius, b.params.radius, 0.0);
            if h < 0.0 {
                let pair = (a.state.id.min(b.state.id), a.state.id.max(b.state.id));
                hits.insert(pair);
            }
            min = Some(min.map_or(h, |m: f64| m.min(h)));
        }
    }
    min
}

enum Command {
    Velocity(f64),
    Acceleration(f64),
    Coast,
}

/// Runs one scenario to completion under `kind`.
pub fn run_scenario(
    scenario: &Scenario,
    kind: ControllerKind,
    cfg: &SimConfig,
) -> Result<SimLog, SimError> {
    validate(scenario, cfg)?;
    let net = scenario.net;
    let gains = cfg.gains;
    let ts = gains.ts;
    let tau_f = gains.barrier.tau_f;
    let (gate_beta, gate_lambda1) = cfg.entry_gate(kind);

    let params: BTreeMap<VehicleId, VehicleParams> =
        scenario.vehicles.iter().map(|v| (v.id, v.params)).collect();

    let mut active: Vec<Active> = Vec::new();
    let mut queues: [VecDeque<VehicleSpec>; 2] = [VecDeque::new(), VecDeque::new()];
    let mut scheduled: Vec<VehicleSpec> = Vec::new();
    for v in &scenario.vehicles {
        match v.initial_s {
            Some(s) => {
                let entry = if v.initial_speed > 0.0 {
                    -(s + net.cz_upstream_m) / v.initial_speed
                } else {
                    0.0
                };
                active.push(Active {
                    state: VehicleState::new(v.id, v.lane, s, v.initial_speed, entry),
                    params: v.params,
                });
            }
            None => scheduled.push(*v),
        }
    }
    scheduled.sort_by(|a, b| a.arrival_time.total_cmp(&b.arrival_time).then(a.id.cmp(&b.id)));
    for v in scheduled {
        let lane = usize::from(v.lane == Lane::Merge);
        queues[lane].push_back(v);
    }

    let mut ledgers: BTreeMap<VehicleId, DisturbanceLedger> = BTreeMap::new();
    let mut solver = ActiveSetSolver::default();
    let mut hits = BTreeSet::new();
    let mut steps = Vec::new();
    let mut infeasible_flags = 0;
    let mut timed_out = false;
    let mut shuffle_rng = match cfg.host_order {
        HostOrder::Shuffled(seed) => Some(ChaCha8Rng::seed_from_u64(seed)),
        _ => None,
    };

    for k in 0usize.. {
        let t = k as f64 * ts;

        for queue in &mut queues {
            while let Some(next) = queue.front() {
                if next.arrival_time > t + 1e-9 {
                    break;
                }
                let pos = LanePosition::new(next.lane, -net.cz_upstream_m);
                if !admissible(
                    pos,
                    next.initial_speed,
                    next.params.radius,
                    &active,
                    &net,
                    gate_beta,
                    gate_lambda1,
                ) {
                    break;
                }
                let v = queue.pop_front().expect("front exists");
                active.push(Active {
                    state: VehicleState::new(v.id, v.lane, -net.cz_upstream_m, v.initial_speed, t),
                    params: v.params,
                });
            }
        }
        active.retain(|a| a.state.pos.s <= net.cz_downstream_m);
        active.sort_by_key(|a| a.state.id);

        if active.is_empty() && queues.iter().all(|q| q.is_empty()) {
            break;
        }
        if t > cfg.max_time {
            timed_out = true;
            break;
        }

        let snap = Snapshot::new(t, active.iter().map(view).collect());
        let mut commands: Vec<Command> = Vec::with_capacity(active.len());
        let mut w_self = vec![0.0; active.len()];
        let mut step_infeasible = 0;
        let mut dpc_plans: Vec<(usize, controllers::DpcOutput)> = Vec::new();

        match kind {
            ControllerKind::DpcCbf => {
                commands.extend(active.iter().map(|_| Command::Coast));
                let mut hosts: Vec<usize> = (0..active.len()).collect();
                match cfg.host_order {
                    HostOrder::Ascending => {}
                    HostOrder::Descending => hosts.reverse(),
                    HostOrder::Shuffled(_) => {
                        hosts.shuffle(shuffle_rng.as_mut().expect("seeded for shuffled order"))
                    }
                }
                ledgers.retain(|id, _| snap.index_of(*id).is_some());
                for hi in hosts {
                    let a = &active[hi];
                    if a.state.faulted {
                        continue;
                    }
                    let ledger = ledgers
                        .entry(a.state.id)
                        .or_insert_with(|| DisturbanceLedger::new(a.state.id, gains.ledger_mode()));
                    ledger.sync(&snap);
                    w_self[hi] = ledger.w_hat(a.state.id);
                    let out = controllers::dpc_cbf_step(
                        a.state.id,
                        &snap,
                        a.params.desired_speed,
                        ledger,
                        &gains,
                        &net,
                        &mut solver,
                    )?;
                    if out.infeasible {
                        step_infeasible += 1;
                    }
                    commands[hi] = Command::Velocity(out.u_host);
                    dpc_plans.push((hi, out));
                }
            }
            ControllerKind::CCbf => {
                let out = controllers::c_cbf_step(&snap, &gains, &net, &mut solver)?;
                if out.infeasible {
                    step_infeasible += 1;
                }
                commands.extend(out.commands.iter().map(|&(_, u)| Command::Velocity(u)));
            }
            ControllerKind::Fifo => {
                let out = controllers::fifo_step(&snap, &cfg.fifo, &net, &mut solver)?;
                commands.extend(out.iter().map(|&(_, a)| Command::Acceleration(a)));
            }
        }
        infeasible_flags += step_infeasible;

        let h0_min = pairwise_h0(&active, &net, &mut hits);
        let before: Vec<VehicleState> = active.iter().map(|a| a.state).collect();
        for (a, cmd) in active.iter_mut().zip(&commands) {
            a.state = if a.state.faulted {
                faulted_step(&a.state, &a.params, ts, tau_f)
            } else {
                match *cmd {
                    Command::Velocity(u) => plant_step(&a.state, u, ts, tau_f),
                    Command::Acceleration(acc) => plant_step_accel(&a.state, acc, ts, tau_f),
                    Command::Coast => faulted_step(&a.state, &a.params, ts, tau_f),
                }
            };
        }

        steps.push(StepLog {
            time: t,
            records: before
                .iter()
                .zip(&active)
                .zip(&w_self)
                .map(|((b, a), &w)| VehicleRecord {
                    id: b.id,
                    origin: b.origin,
                    lane: b.pos.lane,
                    s: b.pos.s,
                    speed: b.speed,
                    u: a.state.last_command_u,
                    accel: a.state.last_accel,
                    faulted: b.faulted,
                    w_self: w,
                })
                .collect(),
            h0_min,
            infeasible: step_infeasible,
        });

        if !dpc_plans.is_empty() {
            let observations: Vec<Observation> = before
                .iter()
                .zip(&active)
                .map(|(b, a)| Observation {
                    id: b.id,
                    speed_before: b.speed,
                    speed_after: a.state.speed,
                    accel: a.state.last_accel,
                })
                .collect();
            for (hi, plan) in &dpc_plans {
                if plan.estimates.is_empty() {
                    continue;
                }
                if let Some(ledger) = ledgers.get_mut(&active[*hi].state.id) {
                    ledger.update(
                        &plan.estimates,
                        &observations,
                        plan.u_host,
                        ts,
                        gains.tau_w,
                        tau_f,
                    );
                }
            }
        }

        if let Some(fault) = scenario.fault {
            if let Some(a) = active.iter_mut().find(|a| a.state.id == fault.victim) {
                let fire = match fault.trigger {
                    FaultTrigger::Time(tt) => t + ts >= tt,
                    FaultTrigger::Position(s) => a.state.pos.s >= s,
                };
                if fire {
                    a.state.faulted = true;
                }
            }
        }
    }

    Ok(SimLog {
        controller: kind,
        ts,
        net,
        params,
        steps,
        collision_pairs: hits.into_iter().collect(),
        infeasible_flags,
        timed_out,
    })
}
