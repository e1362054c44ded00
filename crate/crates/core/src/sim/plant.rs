use serde::{Deserialize, Serialize};

use crate::cbf::{A_MAX, A_MIN};
use crate::controllers::VehicleId;
use crate::geometry::{Lane, LanePosition};
use crate::metrics::{road_load_force, CoastDown};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VehicleParams {
    pub mass: f64,
    pub radius: f64,
    pub coast_down: CoastDown,
    pub desired_speed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    /// Lane the vehicle was injected on; `pos.lane` flips at the merge point.
    pub origin: Lane,
    pub pos: LanePosition,
    pub speed: f64,
    pub last_command_u: f64,
    /// Acceleration applied over the last step.
    pub last_accel: f64,
    pub faulted: bool,
    pub cz_entry_time: f64,
}

impl VehicleState {
    pub fn new(id: VehicleId, lane: Lane, s: f64, speed: f64, cz_entry_time: f64) -> Self {
        Self {
            id,
            origin: lane,
            pos: LanePosition::new(lane, s),
            speed,
            last_command_u: speed,
            last_accel: 0.0,
            faulted: false,
            cz_entry_time,
        }
    }
}

/// Advances position and speed under a constant acceleration for `ts`.
///
/// Speed is held at zero once reached; the position then advances only by
/// the stopping distance. Returns the effective acceleration.
fn integrate(state: &mut VehicleState, a: f64, ts: f64) -> f64 {
    let v = state.speed;
    let v_next = v + a * ts;
    let (ds, v_next, a_eff) = if v_next < 0.0 {
        (v * v / (-2.0 * a), 0.0, -v / ts)
    } else {
        (v * ts + 0.5 * a * ts * ts, v_next, a)
    };
    state.pos = LanePosition::new(state.pos.lane, state.pos.s + ds);
    state.speed = v_next;
    state.last_accel = a_eff;
    a_eff
}

/// Plant response to a velocity command through the first-order actuator.
pub fn plant_step(state: &VehicleState, u: f64, ts: f64, tau_f: f64) -> VehicleState {
    let a = ((u - state.speed) / tau_f).clamp(A_MIN, A_MAX);
    let mut next = *state;
    next.last_command_u = u;
    integrate(&mut next, a, ts);
    next
}

/// Plant response to a direct acceleration command (double integrator).
pub fn plant_step_accel(state: &VehicleState, a: f64, ts: f64, tau_f: f64) -> VehicleState {
    let a = a.clamp(A_MIN, A_MAX);
    let mut next = *state;
    next.last_command_u = state.speed + tau_f * a;
    integrate(&mut next, a, ts);
    next
}

/// Road-load deceleration of a vehicle that lost power.
pub fn coast_down_accel(v: f64, params: &VehicleParams) -> f64 {
    if v > 0.0 {
        -road_load_force(v, &params.coast_down).unwrap_or(0.0) / params.mass
    } else {
        0.0
    }
}

/// Power-loss dynamics: controller commands are ignored.
pub fn faulted_step(state: &VehicleState, params: &VehicleParams, ts: f64, tau_f: f64) -> VehicleState {
    let a = coast_down_accel(state.speed, params);
    let mut next = *state;
    next.last_command_u = state.speed + tau_f * a;
    integrate(&mut next, a, ts);
    next
}
