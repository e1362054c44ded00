//! Two-lane merge geometry.
//!
//! The merge point is the origin. The highway runs along +x and the merge
//! road approaches from y < 0 at the merge angle, so a merge-lane vehicle at
//! signed arc position `s < 0` sits at `s * (cos γ, sin γ)`. Downstream of the
//! merge point (`s >= 0`) every vehicle is on the highway line.

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec2 = [f64; 2];

#[inline]
pub fn dot(a: Vec2, b: Vec2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn norm(a: Vec2) -> f64 {
    dot(a, a).sqrt()
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("position s = {s} m is outside the control zone [{lo}, {hi}]")]
    OutOfZone { s: f64, lo: f64, hi: f64 },
    #[error("invalid road network: {0}")]
    InvalidNetwork(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Lane {
    Highway,
    Merge,
}

impl Lane {
    pub fn as_str(self) -> &'static str {
        match self {
            Lane::Highway => "highway",
            Lane::Merge => "merge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoadNetwork {
    pub merge_angle_rad: f64,
    pub cz_upstream_m: f64,
    pub cz_downstream_m: f64,
}

impl Default for RoadNetwork {
    fn default() -> Self {
        Self {
            merge_angle_rad: 30f64.to_radians(),
            cz_upstream_m: 200.0,
            cz_downstream_m: 350.0,
        }
    }
}

impl RoadNetwork {
    pub fn new(
        merge_angle_rad: f64,
        cz_upstream_m: f64,
        cz_downstream_m: f64,
    ) -> Result<Self, GeometryError> {
        let net = Self {
            merge_angle_rad,
            cz_upstream_m,
            cz_downstream_m,
        };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<(), GeometryError> {
        if !(self.merge_angle_rad > 0.0 && self.merge_angle_rad < std::f64::consts::FRAC_PI_2) {
            return Err(GeometryError::InvalidNetwork("merge angle must lie in (0, pi/2)"));
        }
        if !(self.cz_upstream_m > 0.0 && self.cz_downstream_m > 0.0) {
            return Err(GeometryError::InvalidNetwork("control zone lengths must be positive"));
        }
        Ok(())
    }

    /// True when `s` lies in `[-cz_upstream, +cz_downstream]`.
    pub fn in_zone(&self, s: f64) -> bool {
        s >= -self.cz_upstream_m && s <= self.cz_downstream_m
    }

    fn check_zone(&self, s: f64) -> Result<(), GeometryError> {
        if self.in_zone(s) {
            Ok(())
        } else {
            Err(GeometryError::OutOfZone {
                s,
                lo: -self.cz_upstream_m,
                hi: self.cz_downstream_m,
            })
        }
    }
}

/// Signed arc position: negative upstream of the merge point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LanePosition {
    pub lane: Lane,
    pub s: f64,
}

impl LanePosition {
    /// Builds a position and applies the lane-tag rule (Merge becomes Highway at s >= 0).
    pub fn new(lane: Lane, s: f64) -> Self {
        let lane = if s >= 0.0 { Lane::Highway } else { lane };
        Self { lane, s }
    }
}

/// Unit direction of travel at `p`.
pub fn heading(p: LanePosition, net: &RoadNetwork) -> Vec2 {
    match p.lane {
        Lane::Merge if p.s < 0.0 => [net.merge_angle_rad.cos(), net.merge_angle_rad.sin()],
        _ => [1.0, 0.0],
    }
}

/// Planar position and velocity of a vehicle.
pub fn to_plane(
    p: LanePosition,
    speed: f64,
    net: &RoadNetwork,
) -> Result<(Vec2, Vec2), GeometryError> {
    net.check_zone(p.s)?;
    Ok(to_plane_unchecked(p, speed, net))
}

pub(crate) fn to_plane_unchecked(p: LanePosition, speed: f64, net: &RoadNetwork) -> (Vec2, Vec2) {
    let e = heading(p, net);
    ([p.s * e[0], p.s * e[1]], [speed * e[0], speed * e[1]])
}

/// Center-to-center separation `ξ = p_i - p_j` and relative velocity `v_i - v_j`.
pub fn pair_separation(
    pi: LanePosition,
    pj: LanePosition,
    vi: f64,
    vj: f64,
    net: &RoadNetwork,
) -> Result<(Vec2, Vec2), GeometryError> {
    let (xi, ui) = to_plane(pi, vi, net)?;
    let (xj, uj) = to_plane(pj, vj, net)?;
    Ok((sub(xi, xj), sub(ui, uj)))
}
