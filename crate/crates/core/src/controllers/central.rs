use crate::geometry::RoadNetwork;
use crate::qp::ActiveSetSolver;

use super::{braking_command, build_joint_qp, ControlError, ControllerGains, Snapshot, VehicleId};

#[derive(Debug, Clone, PartialEq)]
pub struct CentralOutput {
    pub commands: Vec<(VehicleId, f64)>,
    pub infeasible: bool,
    pub iterations: usize,
}

/// Global QP over every agent with exact desired speeds and no disturbance terms.
pub fn c_cbf_step(
    snap: &Snapshot,
    gains: &ControllerGains,
    net: &RoadNetwork,
    solver: &mut ActiveSetSolver,
) -> Result<CentralOutput, ControlError> {
    let desired: Vec<f64> = snap.agents.iter().map(|a| a.desired_speed).collect();
    let zeros = vec![0.0; snap.len()];
    let (qp, _) = build_joint_qp(snap, &desired, &zeros, gains, net);
    let sol = solver.solve(&qp, None)?;
    if !sol.is_optimal() {
        return Ok(CentralOutput {
            commands: snap
                .agents
                .iter()
                .map(|a| (a.id, braking_command(a.speed, gains)))
                .collect(),
            infeasible: true,
            iterations: sol.iterations,
        });
    }
    Ok(CentralOutput {
        commands: snap.agents.iter().map(|a| a.id).zip(sol.u_star).collect(),
        infeasible: false,
        iterations: sol.iterations,
    })
}
