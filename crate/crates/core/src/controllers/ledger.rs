use std::collections::BTreeMap;

use super::{Snapshot, VehicleId};

/// How the implemented action of another agent is recovered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LedgerMode {
    /// `u_j = v_j + τ_f a_j` from broadcast speed and acceleration.
    AccelerationBased,
    /// With `τ_w = τ_f`: `ŵ = v_j - filt(u*_j|i)`, no acceleration needed.
    FilteredVelocity,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Entry {
    w_hat: f64,
    /// First-order filtered copy of the host's estimate for this agent.
    u_filt: f64,
}

/// What the host sees of one agent after the plant has advanced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub id: VehicleId,
    pub speed_before: f64,
    pub speed_after: f64,
    pub accel: f64,
}

/// A host's disturbance estimates `ŵ_{j|i}` for every agent it can see.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceLedger {
    host: VehicleId,
    mode: LedgerMode,
    entries: BTreeMap<VehicleId, Entry>,
}

impl DisturbanceLedger {
    pub fn new(host: VehicleId, mode: LedgerMode) -> Self {
        Self {
            host,
            mode,
            entries: BTreeMap::new(),
        }
    }

    pub fn host(&self) -> VehicleId {
        self.host
    }

    pub fn mode(&self) -> LedgerMode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn w_hat(&self, id: VehicleId) -> f64 {
        self.entries.get(&id).map_or(0.0, |e| e.w_hat)
    }

    pub fn ids(&self) -> impl Iterator<Item = VehicleId> + '_ {
        self.entries.keys().copied()
    }

    /// Drops agents that left the view and starts new ones at zero.
    pub fn sync(&mut self, snap: &Snapshot) {
        self.entries
            .retain(|id, _| snap.index_of(*id).is_some());
        for a in &snap.agents {
            self.entries.entry(a.id).or_insert(Entry {
                w_hat: 0.0,
                u_filt: a.speed,
            });
        }
    }

    /// Low-pass update of every entry after one step of length `ts`.
    ///
    /// `estimates` holds the host's `u*_{j|i}` for the step; `host_command`
    /// is what the host itself implemented.
    pub fn update(
        &mut self,
        estimates: &[(VehicleId, f64)],
        observations: &[Observation],
        host_command: f64,
        ts: f64,
        tau_w: f64,
        tau_f: f64,
    ) {
        let k = ts / tau_w;
        for &(id, u_est) in estimates {
            let Some(e) = self.entries.get_mut(&id) else {
                continue;
            };
            if id == self.host {
                e.w_hat += k * (-e.w_hat + host_command - u_est);
                e.u_filt += k * (u_est - e.u_filt);
                continue;
            }
            let Some(obs) = observations.iter().find(|o| o.id == id) else {
                continue;
            };
            e.u_filt += k * (u_est - e.u_filt);
            match self.mode {
                LedgerMode::AccelerationBased => {
                    let implemented = obs.speed_before + tau_f * obs.accel;
                    e.w_hat += k * (-e.w_hat + implemented - u_est);
                }
                LedgerMode::FilteredVelocity => e.w_hat = obs.speed_after - e.u_filt,
            }
        }
    }
}
