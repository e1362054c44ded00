//! Pairwise second-order barrier constraints.
//!
//! For two disks with separation `ξ` the barrier is
//! `h = ξᵀξ - ((1+β)(r_i + r_j))²`. Under the filtered-velocity model
//! `v̇ = (u - v)/τ_f` the condition `ḧ + l1 ḣ + l0 h ≥ 0` is affine in the
//! planar control difference and becomes `A + B·(U_i - U_j) ≥ 0`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{self, dot, LanePosition, RoadNetwork, Vec2};

pub const A_MIN: f64 = -6.0;
pub const A_MAX: f64 = 5.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GainsError {
    #[error("barrier roots must be positive, got lambda1 = {0}, lambda2 = {1}")]
    NonPositiveRoots(f64, f64),
    #[error("safety margin beta must be nonnegative, got {0}")]
    NegativeMargin(f64),
    #[error("filter time constant must be positive, got {0}")]
    NonPositiveTimeConstant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarrierGains {
    pub lambda1: f64,
    pub lambda2: f64,
    pub beta: f64,
    pub tau_f: f64,
}

impl Default for BarrierGains {
    fn default() -> Self {
        Self {
            lambda1: 0.6,
            lambda2: 2.0,
            beta: 0.1,
            tau_f: 0.4,
        }
    }
}

impl BarrierGains {
    pub fn validate(&self) -> Result<(), GainsError> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(GainsError::NonPositiveRoots(self.lambda1, self.lambda2));
        }
        if !(self.beta >= 0.0) {
            return Err(GainsError::NegativeMargin(self.beta));
        }
        if !(self.tau_f > 0.0) {
            return Err(GainsError::NonPositiveTimeConstant(self.tau_f));
        }
        Ok(())
    }

    /// `λ1 λ2`
    pub fn l0(&self) -> f64 {
        self.lambda1 * self.lambda2
    }

    /// `λ1 + λ2`
    pub fn l1(&self) -> f64 {
        self.lambda1 + self.lambda2
    }
}

pub fn barrier_value(xi: Vec2, r_i: f64, r_j: f64, beta: f64) -> f64 {
    let d = (1.0 + beta) * (r_i + r_j);
    dot(xi, xi) - d * d
}

/// Constant term `A` and planar coefficient `B` of the pairwise row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RowCoeffs {
    pub a: f64,
    pub b: Vec2,
}

pub fn constraint_row(xi: Vec2, v_rel: Vec2, h: f64, gains: &BarrierGains) -> RowCoeffs {
    let k = 2.0 / gains.tau_f;
    RowCoeffs {
        a: 2.0 * dot(v_rel, v_rel)
            + 2.0 * dot(xi, v_rel) * (gains.l1() - 1.0 / gains.tau_f)
            + gains.l0() * h,
        b: [k * xi[0], k * xi[1]],
    }
}

/// Row for a pure double integrator (acceleration as the control):
/// `A = 2|v|² + 2ξᵀv l1 + l0 h`, `B = 2ξ`.
pub fn double_integrator_row(xi: Vec2, v_rel: Vec2, h: f64, l0: f64, l1: f64) -> RowCoeffs {
    RowCoeffs {
        a: 2.0 * dot(v_rel, v_rel) + 2.0 * dot(xi, v_rel) * l1 + l0 * h,
        b: [2.0 * xi[0], 2.0 * xi[1]],
    }
}

/// Bounds on the velocity command implied by `(u - v)/τ_f ∈ [a_min, a_max]`.
pub fn box_rows(v: f64, tau_f: f64, a_min: f64, a_max: f64) -> (f64, f64) {
    debug_assert!(a_min <= a_max);
    (v + tau_f * a_min, v + tau_f * a_max)
}

/// What the constraint builder needs to know about one vehicle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairInput {
    pub pos: LanePosition,
    pub speed: f64,
    pub radius: f64,
}

/// One pairwise row assembled on the scalar controls of agents `i` and `j`:
/// `a + coef_i u_i + coef_j u_j ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConstraintRow {
    pub i: usize,
    pub j: usize,
    pub a: f64,
    pub b: Vec2,
    pub h: f64,
    pub coef_i: f64,
    pub coef_j: f64,
}

/// Rows for every unordered pair, `i < j`, in lexicographic order.
pub fn pair_rows(agents: &[PairInput], gains: &BarrierGains, net: &RoadNetwork) -> Vec<ConstraintRow> {
    let planar: Vec<(Vec2, Vec2, Vec2)> = agents
        .iter()
        .map(|a| {
            let (x, v) = geometry::to_plane_unchecked(a.pos, a.speed, net);
            (x, v, geometry::heading(a.pos, net))
        })
        .collect();
    let n = agents.len();
    let mut rows = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            let (xi_pos, vi, ei) = planar[i];
            let (xj_pos, vj, ej) = planar[j];
            let xi = geometry::sub(xi_pos, xj_pos);
            let v_rel = geometry::sub(vi, vj);
            let h = barrier_value(xi, agents[i].radius, agents[j].radius, gains.beta);
            let c = constraint_row(xi, v_rel, h, gains);
            rows.push(ConstraintRow {
                i,
                j,
                a: c.a,
                b: c.b,
                h,
                coef_i: dot(c.b, ei),
                coef_j: -dot(c.b, ej),
            });
        }
    }
    rows
}
