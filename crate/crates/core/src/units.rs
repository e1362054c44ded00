//! Unit conversions and fleet constants.

pub const KG_PER_LB: f64 = 0.453_592_37;

/// Smallest vehicle mass of the Monte Carlo fleet (a Mirage-class car).
pub const M_BASE_LB: f64 = 2375.0;
pub const M_BASE_KG: f64 = M_BASE_LB * KG_PER_LB;

/// Midpoint of the uniform mass range `[m_base, 4 m_base]`.
pub const FLEET_MEAN_MASS_KG: f64 = 2.5 * M_BASE_KG;

/// Mass-penalty scale giving `α m = 1.7` at the fleet-mean mass.
pub const DEFAULT_ALPHA: f64 = 1.7 / FLEET_MEAN_MASS_KG;

/// 1 J/m expressed in Wh/km.
pub const WH_PER_KM_PER_J_PER_M: f64 = 1.0 / 3.6;

pub fn lb_to_kg(lb: f64) -> f64 {
    lb * KG_PER_LB
}
