//! Merging controllers: decentralized predictor-corrector CBF (DPC-CBF),
//! centralized CBF (C-CBF), and first-in-first-out (FIFO).

mod central;
mod dpc;
mod fifo;
mod ledger;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cbf::{self, BarrierGains, ConstraintRow, PairInput, A_MAX, A_MIN};
use crate::geometry::{LanePosition, RoadNetwork};
use crate::qp::{QpError, QpProblem};
use crate::units::DEFAULT_ALPHA;

pub use central::c_cbf_step;
pub use dpc::{dpc_cbf_step, DpcOutput};
pub use fifo::{fifo_priority, fifo_step, FifoGains};
pub use ledger::{DisturbanceLedger, LedgerMode, Observation};

pub type VehicleId = u32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("host vehicle {0} is not in the snapshot")]
    HostMissing(VehicleId),
    #[error(transparent)]
    Qp(#[from] QpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "dpc-cbf")]
    DpcCbf,
    #[serde(rename = "c-cbf")]
    CCbf,
    #[serde(rename = "fifo")]
    Fifo,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 3] = [ControllerKind::DpcCbf, ControllerKind::CCbf, ControllerKind::Fifo];

    pub fn as_str(self) -> &'static str {
        match self {
            ControllerKind::DpcCbf => "dpc-cbf",
            ControllerKind::CCbf => "c-cbf",
            ControllerKind::Fifo => "fifo",
        }
    }
}

impl std::fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "dpc-cbf" | "dpc" => Ok(ControllerKind::DpcCbf),
            "c-cbf" | "ccbf" | "central" => Ok(ControllerKind::CCbf),
            "fifo" => Ok(ControllerKind::Fifo),
            other => Err(format!("unknown controller `{other}`")),
        }
    }
}

/// Gains shared by the two CBF controllers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerGains {
    pub barrier: BarrierGains,
    /// Disturbance filter time constant.
    pub tau_w: f64,
    /// Mass-penalty scale, 1/kg.
    pub alpha: f64,
    pub ts: f64,
    pub a_min: f64,
    pub a_max: f64,
}

impl Default for ControllerGains {
    fn default() -> Self {
        Self {
            barrier: BarrierGains::default(),
            tau_w: 0.4,
            alpha: DEFAULT_ALPHA,
            ts: 0.1,
            a_min: A_MIN,
            a_max: A_MAX,
        }
    }
}

impl ControllerGains {
    pub fn ledger_mode(&self) -> LedgerMode {
        if self.tau_w == self.barrier.tau_f {
            LedgerMode::FilteredVelocity
        } else {
            LedgerMode::AccelerationBased
        }
    }
}

/// One vehicle as broadcast to the others at the start of a step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentView {
    pub id: VehicleId,
    pub pos: LanePosition,
    pub speed: f64,
    /// Acceleration applied during the previous step.
    pub accel: f64,
    pub mass: f64,
    pub radius: f64,
    /// True desired speed. DPC-CBF reads it only for the host.
    pub desired_speed: f64,
    pub cz_entry_time: f64,
}

/// Immutable view of every control-zone member, sorted by id.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Snapshot {
    pub time: f64,
    pub agents: Vec<AgentView>,
}

impl Snapshot {
    pub fn new(time: f64, mut agents: Vec<AgentView>) -> Self {
        agents.sort_by_key(|a| a.id);
        Self { time, agents }
    }

    pub fn index_of(&self, id: VehicleId) -> Option<usize> {
        self.agents.binary_search_by_key(&id, |a| a.id).ok()
    }

    pub fn len(&self) -> usize {
        self.agents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.agents.is_empty()
    }
}

/// Maximum-braking command used when a hard-constrained QP has no solution.
pub fn braking_command(v: f64, gains: &ControllerGains) -> f64 {
    v + gains.barrier.tau_f * gains.a_min
}

/// Builds the joint CBF QP over all agents' velocity commands.
///
/// Per agent `k` the cost is `(u_k - vd_k)² + ᾱ m_k (u_k - v_k)²` with
/// `ᾱ m_k = α m_k` (the scaled-mass acceleration penalty written in terms of
/// `u`). Pair rows read `A + coef_a (u_a + ŵ_a) + coef_b (u_b + ŵ_b) ≥ 0`.
pub(crate) fn build_joint_qp(
    snap: &Snapshot,
    desired: &[f64],
    w_hat: &[f64],
    gains: &ControllerGains,
    net: &RoadNetwork,
) -> (QpProblem, Vec<ConstraintRow>) {
    let n = snap.len();
    let mut hess = Vec::with_capacity(n);
    let mut lin = Vec::with_capacity(n);
    for (a, &vd) in snap.agents.iter().zip(desired) {
        let rho = gains.alpha * a.mass;
        hess.push(2.0 * (1.0 + rho));
        lin.push(-2.0 * (vd + rho * a.speed));
    }
    let mut qp = QpProblem::new(hess, lin);
    for (k, a) in snap.agents.iter().enumerate() {
        let (lo, hi) = cbf::box_rows(a.speed, gains.barrier.tau_f, gains.a_min, gains.a_max);
        qp.set_bounds(k, lo, hi);
    }
    let inputs: Vec<PairInput> = snap
        .agents
        .iter()
        .map(|a| PairInput {
            pos: a.pos,
            speed: a.speed,
            radius: a.radius,
        })
        .collect();
    let rows = cbf::pair_rows(&inputs, &gains.barrier, net);
    let mut coeffs = vec![0.0; n];
    for r in &rows {
        coeffs[r.i] = r.coef_i;
        coeffs[r.j] = r.coef_j;
        let rhs = -r.a - r.coef_i * w_hat[r.i] - r.coef_j * w_hat[r.j];
        qp.push_row(&coeffs, rhs);
        coeffs[r.i] = 0.0;
        coeffs[r.j] = 0.0;
    }
    (qp, rows)
}
