use serde::{Deserialize, Serialize};

use crate::cbf::{self, A_MAX, A_MIN};
use crate::geometry::{self, dot, RoadNetwork};
use crate::qp::{ActiveSetSolver, QpProblem};

use super::{ControlError, Snapshot, VehicleId};

/// FIFO benchmark gains. The vehicle is a double integrator driven by acceleration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FifoGains {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    /// Slack penalty weight.
    pub slack_weight: f64,
    /// Proportional gain of the baseline speed tracker, 1/s.
    pub k_v: f64,
    pub a_min: f64,
    pub a_max: f64,
    /// Use the leader's broadcast acceleration in each row instead of zero.
    pub leader_accel: bool,
}

impl Default for FifoGains {
    fn default() -> Self {
        Self {
            lambda1: 0.3,
            lambda2: 2.0,
            beta: 0.1,
            slack_weight: 1e4,
            k_v: 0.5,
            a_min: A_MIN,
            a_max: A_MAX,
            leader_accel: true,
        }
    }
}

impl FifoGains {
    pub fn baseline_accel(&self, v: f64, v0: f64) -> f64 {
        (self.k_v * (v0 - v)).clamp(self.a_min, self.a_max)
    }
}

/// Agents ordered by control-zone entry time, ties broken by id.
pub fn fifo_priority(snap: &Snapshot) -> Vec<usize> {
    let mut order: Vec<usize> = (0..snap.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&snap.agents[a], &snap.agents[b]);
        x.cz_entry_time
            .total_cmp(&y.cz_entry_time)
            .then(x.id.cmp(&y.id))
    });
    order
}

/// Acceleration command for every agent, in snapshot order.
///
/// Each vehicle solves a one-variable QP, `min (a - a0)² + M Σσ²`, with a
/// relaxed barrier row against every higher-priority vehicle. The other
/// vehicle's acceleration is taken as zero, so each row only involves the
/// host's own acceleration projected on its heading.
pub fn fifo_step(
    snap: &Snapshot,
    gains: &FifoGains,
    net: &RoadNetwork,
    solver: &mut ActiveSetSolver,
) -> Result<Vec<(VehicleId, f64)>, ControlError> {
    let order = fifo_priority(snap);
    let l0 = gains.lambda1 * gains.lambda2;
    let l1 = gains.lambda1 + gains.lambda2;
    let planar: Vec<_> = snap
        .agents
        .iter()
        .map(|a| {
            let (x, v) = geometry::to_plane_unchecked(a.pos, a.speed, net);
            (x, v, geometry::heading(a.pos, net))
        })
        .collect();

    let mut out = vec![(0, 0.0); snap.len()];
    for (rank, &i) in order.iter().enumerate() {
        let me = &snap.agents[i];
        let a0 = gains.baseline_accel(me.speed, me.desired_speed);
        let mut qp = QpProblem::new(vec![2.0], vec![-2.0 * a0]).with_slack(gains.slack_weight);
        qp.set_bounds(0, gains.a_min, gains.a_max);
        let (xi_i, vi, ei) = planar[i];
        for &j in &order[..rank] {
            let (xj, vj, ej) = planar[j];
            let xi = geometry::sub(xi_i, xj);
            let v_rel = geometry::sub(vi, vj);
            let h = cbf::barrier_value(xi, me.radius, snap.agents[j].radius, gains.beta);
            let row = cbf::double_integrator_row(xi, v_rel, h, l0, l1);
            let lead_accel = if gains.leader_accel { snap.agents[j].accel } else { 0.0 };
            qp.push_row(&[dot(row.b, ei)], -row.a + dot(row.b, ej) * lead_accel);
        }
        let sol = solver.solve(&qp, None)?;
        // The relaxed problem is always feasible; anything else is a solver fault.
        let a = if sol.is_optimal() { sol.u_star[0] } else { gains.a_min };
        out[i] = (me.id, a.clamp(gains.a_min, gains.a_max));
    }
    Ok(out)
}
