use crate::geometry::RoadNetwork;
use crate::qp::ActiveSetSolver;

use super::{
    braking_command, build_joint_qp, ControlError, ControllerGains, DisturbanceLedger, Snapshot,
    VehicleId,
};

#[derive(Debug, Clone, PartialEq)]
pub struct DpcOutput {
    /// Command the host implements.
    pub u_host: f64,
    /// Host's plan `u*_{j|i}` for every agent, host included. Empty when
    /// the QP had no solution.
    pub estimates: Vec<(VehicleId, f64)>,
    pub infeasible: bool,
    pub iterations: usize,
}

/// One decentralized predictor-corrector step for `host`.
///
/// The host plans for every agent in the snapshot: its own cost term tracks
/// `host_desired_speed`, every other agent is assumed to want its current
/// speed, and the disturbance estimates from `ledger` shift the other agents'
/// controls inside each pair row (the host's own estimate is zero). Only the
/// host's command carries actuator bounds.
pub fn dpc_cbf_step(
    host: VehicleId,
    snap: &Snapshot,
    host_desired_speed: f64,
    ledger: &DisturbanceLedger,
    gains: &ControllerGains,
    net: &RoadNetwork,
    solver: &mut ActiveSetSolver,
) -> Result<DpcOutput, ControlError> {
    let hi = snap.index_of(host).ok_or(ControlError::HostMissing(host))?;
    let desired: Vec<f64> = snap
        .agents
        .iter()
        .enumerate()
        .map(|(k, a)| if k == hi { host_desired_speed } else { a.speed })
        .collect();
    let w_hat: Vec<f64> = snap
        .agents
        .iter()
        .map(|a| if a.id == host { 0.0 } else { ledger.w_hat(a.id) })
        .collect();
    let (mut qp, _) = build_joint_qp(snap, &desired, &w_hat, gains, net);
    // Actuator limits bind the host only; the other agents' plans are unconstrained.
    for k in (0..snap.len()).filter(|&k| k != hi) {
        qp.set_bounds(k, f64::NEG_INFINITY, f64::INFINITY);
    }
    let sol = solver.solve(&qp, None)?;
    if !sol.is_optimal() {
        return Ok(DpcOutput {
            u_host: braking_command(snap.agents[hi].speed, gains),
            estimates: Vec::new(),
            infeasible: true,
            iterations: sol.iterations,
        });
    }
    Ok(DpcOutput {
        u_host: sol.u_star[hi],
        estimates: snap
            .agents
            .iter()
            .zip(&sol.u_star)
            .map(|(a, &u)| (a.id, u))
            .collect(),
        infeasible: false,
        iterations: sol.iterations,
    })
}
