use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::controllers::VehicleId;
use crate::geometry::Lane;
use crate::metrics::CoastDownTable;
use crate::sim::{FaultSpec, FaultTrigger, Scenario, VehicleParams, VehicleSpec};
use crate::units::lb_to_kg;

use super::config::ScenarioConfig;

/// Linear map of `[mass_min, mass_max]` onto `[radius_min, radius_max]`.
pub fn radius_for_mass(cfg: &ScenarioConfig, mass: f64) -> f64 {
    let t = &cfg.traffic;
    if t.mass_max_kg == t.mass_min_kg {
        return t.radius_min_m;
    }
    let w = ((mass - t.mass_min_kg) / (t.mass_max_kg - t.mass_min_kg)).clamp(0.0, 1.0);
    t.radius_min_m + w * (t.radius_max_m - t.radius_min_m)
}

/// Independent generator for run `run`: substream `run` of the batch seed.
pub fn run_rng(seed: u64, run: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(run);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Highway vehicles get ids `1..=n`, merge vehicles `n+1..=2n`, each in
/// arrival order.
fn lane_ids(lane: Lane, n: usize) -> impl Iterator<Item = VehicleId> {
    let base = if lane == Lane::Highway { 1 } else { n + 1 };
    (base..base + n).map(|k| k as VehicleId)
}

fn draw(cfg: &ScenarioConfig, table: &CoastDownTable, rng: &mut ChaCha8Rng) -> Scenario {
    let t = &cfg.traffic;
    let mut vehicles = Vec::with_capacity(2 * t.vehicles_per_lane);
    for lane in [Lane::Highway, Lane::Merge] {
        let rate = uniform(rng, t.rate_min_vph, t.rate_max_vph);
        let headway = 3600.0 / rate;
        let offset = uniform(rng, 0.0, headway);
        for (k, id) in lane_ids(lane, t.vehicles_per_lane).enumerate() {
            let jitter = uniform(rng, -t.headway_jitter, t.headway_jitter) * headway;
            let speed = uniform(rng, t.speed_min_mps, t.speed_max_mps);
            let mass = uniform(rng, t.mass_min_kg, t.mass_max_kg);
            vehicles.push(VehicleSpec {
                id,
                lane,
                params: VehicleParams {
                    mass,
                    radius: radius_for_mass(cfg, mass),
                    coast_down: table.interpolate(mass),
                    desired_speed: speed,
                },
                initial_speed: speed,
                arrival_time: (offset + k as f64 * headway + jitter).max(0.0),
                initial_s: None,
            });
        }
    }
    Scenario {
        net: cfg.network(),
        vehicles,
        fault: None,
    }
}

/// Nominal scenario for run index `run`, deterministic in `(seed, run)`.
pub fn sample_scenario(cfg: &ScenarioConfig, table: &CoastDownTable, run: u64) -> Scenario {
    draw(cfg, table, &mut run_rng(cfg.run.seed, run))
}

/// Nominal scenario plus a power-loss victim.
///
/// The first half of a campaign picks victims on the highway, the second
/// half on the merge lane. The victim is drawn uniformly from the middle
/// third of its lane's arrival order.
pub fn sample_fault_scenario(
    cfg: &ScenarioConfig,
    table: &CoastDownTable,
    run: u64,
    campaign_runs: usize,
) -> Scenario {
    let mut rng = run_rng(cfg.run.seed, run);
    let mut sc = draw(cfg, table, &mut rng);
    let n = cfg.traffic.vehicles_per_lane;
    if n == 0 {
        return sc;
    }
    let lane = if (run as usize) < campaign_runs.div_ceil(2) {
        Lane::Highway
    } else {
        Lane::Merge
    };
    let lo = n / 3;
    let hi = (2 * n).div_ceil(3).max(lo + 1);
    let k = rng.random_range(lo..hi);
    let victim = lane_ids(lane, n).nth(k).expect("index inside lane");
    sc.fault = Some(FaultSpec {
        victim,
        trigger: FaultTrigger::Position(cfg.fault.trigger_s_m),
    });
    sc
}

/// Two vehicles per lane at 20 m/s, 4500 lb each, in a near-symmetric tie.
///
/// H1 leads H2 by a 2 s gap; M1 is 0.1 m ahead of H1 and M2 0.1 m behind H2.
/// Ids: H1 = 1, H2 = 2, M1 = 3, M2 = 4.
pub fn four_vehicle_scenario(cfg: &ScenarioConfig, table: &CoastDownTable, h1_s: f64) -> Scenario {
    let v = 20.0;
    let mass = lb_to_kg(4500.0);
    let params = VehicleParams {
        mass,
        radius: radius_for_mass(cfg, mass),
        coast_down: table.interpolate(mass),
        desired_speed: v,
    };
    let h2_s = h1_s - 2.0 * v;
    let place = |id, lane, s| VehicleSpec {
        id,
        lane,
        params,
        initial_speed: v,
        arrival_time: 0.0,
        initial_s: Some(s),
    };
    Scenario {
        net: cfg.network(),
        vehicles: vec![
            place(1, Lane::Highway, h1_s),
            place(2, Lane::Highway, h2_s),
            place(3, Lane::Merge, h1_s + 0.1),
            place(4, Lane::Merge, h2_s - 0.1),
        ],
        fault: None,
    }
}

/// Default starting position of H1.
pub const FOUR_VEHICLE_H1_S: f64 = -150.0;

pub fn four_vehicle_labels(id: VehicleId) -> &'static str {
    match id {
        1 => "H1",
        2 => "H2",
        3 => "M1",
        4 => "M2",
        _ => "?",
    }
}

/// SHA-256 of the scenario's canonical JSON encoding.
pub fn scenario_hash(sc: &Scenario) -> String {
    let bytes = serde_json::to_vec(sc).expect("scenario serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ScenarioConfig {
        ScenarioConfig::default()
    }

    #[test]
    fn deterministic_and_distinct() {
        let table = CoastDownTable::default();
        let a = sample_scenario(&cfg(), &table, 3);
        let b = sample_scenario(&cfg(), &table, 3);
        let c = sample_scenario(&cfg(), &table, 4);
        assert_eq!(a, b);
        assert_eq!(scenario_hash(&a), scenario_hash(&b));
        assert_ne!(scenario_hash(&a), scenario_hash(&c));
        assert_eq!(a.vehicles.len(), 20);
    }

    #[test]
    fn radius_endpoints() {
        let c = cfg();
        assert!((radius_for_mass(&c, c.traffic.mass_min_kg) - 2.0).abs() < 1e-12);
        assert!((radius_for_mass(&c, c.traffic.mass_max_kg) - 4.0).abs() < 1e-12);
    }

    #[test]
    fn speed_mean_converges() {
        let mut c = cfg();
        c.traffic.vehicles_per_lane = 50;
        let table = CoastDownTable::default();
        let speeds: Vec<f64> = (0..100)
            .flat_map(|run| sample_scenario(&c, &table, run).vehicles)
            .map(|v| v.initial_speed)
            .collect();
        assert_eq!(speeds.len(), 10_000);
        let mean = speeds.iter().sum::<f64>() / speeds.len() as f64;
        assert!((mean - 22.5).abs() < 0.1, "{mean}");
        assert!(speeds.iter().all(|&s| (20.0..25.0).contains(&s)));
    }

    #[test]
    fn arrivals_ordered_within_lane() {
        let table = CoastDownTable::default();
        for run in 0..20 {
            let sc = sample_scenario(&cfg(), &table, run);
            for lane in sc.vehicles.chunks(10) {
                assert!(lane.windows(2).all(|w| w[0].arrival_time < w[1].arrival_time));
            }
        }
    }

    #[test]
    fn fault_victims_split_by_lane() {
        let table = CoastDownTable::default();
        for run in 0..100 {
            let sc = sample_fault_scenario(&cfg(), &table, run, 100);
            let victim = sc.fault.unwrap().victim;
            let nominal = sample_scenario(&cfg(), &table, run);
            assert_eq!(sc.vehicles, nominal.vehicles);
            if run < 50 {
                assert!((4..=7).contains(&victim), "{victim}");
            } else {
                assert!((14..=17).contains(&victim), "{victim}");
            }
        }
    }

    #[test]
    fn four_vehicle_layout() {
        let sc = four_vehicle_scenario(&cfg(), &CoastDownTable::default(), FOUR_VEHICLE_H1_S);
        let s: Vec<_> = sc.vehicles.iter().map(|v| v.initial_s.unwrap()).collect();
        assert_eq!(s, vec![-150.0, -190.0, -149.9, -190.1]);
        assert!((sc.vehicles[0].params.mass - 2041.16566).abs() < 1e-4);
    }
}
