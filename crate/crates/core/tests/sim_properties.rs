//! Closed-loop properties of sampled scenarios.

use std::collections::BTreeMap;

use merge_cbf::controllers::{ControllerKind, VehicleId};
use merge_cbf::harness::{sample_fault_scenario, sample_scenario, ScenarioConfig};
use merge_cbf::metrics::{flow_metrics, CoastDownTable, MetricsReport};
use merge_cbf::sim::{run_scenario, HostOrder, SimLog};
use proptest::prelude::*;

fn setup() -> (ScenarioConfig, CoastDownTable) {
    (ScenarioConfig::default(), CoastDownTable::default())
}

fn run(cfg: &ScenarioConfig, table: &CoastDownTable, k: u64, kind: ControllerKind) -> SimLog {
    let sc = sample_scenario(cfg, table, k);
    run_scenario(&sc, kind, &cfg.sim_config(kind == ControllerKind::CCbf)).unwrap()
}

/// First step at which each vehicle appears in the zone.
fn entry_steps(log: &SimLog) -> BTreeMap<VehicleId, usize> {
    let mut out = BTreeMap::new();
    for (k, step) in log.steps.iter().enumerate() {
        for r in &step.records {
            out.entry(r.id).or_insert(k);
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn replay_is_bit_identical(k in 0u64..1000, c in 0usize..3) {
        let (cfg, table) = setup();
        let kind = ControllerKind::ALL[c];
        prop_assert_eq!(run(&cfg, &table, k, kind), run(&cfg, &table, k, kind));
    }

    #[test]
    fn host_order_does_not_change_the_log(k in 0u64..1000, shuffle in any::<u64>()) {
        let (cfg, table) = setup();
        let sc = sample_scenario(&cfg, &table, k);
        let base = run_scenario(&sc, ControllerKind::DpcCbf, &cfg.sim_config(false)).unwrap();
        for order in [HostOrder::Descending, HostOrder::Shuffled(shuffle)] {
            let mut sim = cfg.sim_config(false);
            sim.host_order = order;
            prop_assert_eq!(&run_scenario(&sc, ControllerKind::DpcCbf, &sim).unwrap(), &base);
        }
    }

    #[test]
    fn own_estimate_is_identically_zero(k in 0u64..1000) {
        let (cfg, table) = setup();
        let log = run(&cfg, &table, k, ControllerKind::DpcCbf);
        prop_assert!(log.steps.iter().flat_map(|s| &s.records).all(|r| r.w_self == 0.0));
        let sc = sample_fault_scenario(&cfg, &table, k, 100);
        let log = run_scenario(&sc, ControllerKind::DpcCbf, &cfg.sim_config(false)).unwrap();
        prop_assert!(log.steps.iter().flat_map(|s| &s.records).all(|r| r.w_self == 0.0));
    }

    #[test]
    fn positions_never_decrease_and_speeds_stay_nonnegative(k in 0u64..1000, c in 0usize..3) {
        let (cfg, table) = setup();
        let log = run(&cfg, &table, k, ControllerKind::ALL[c]);
        let mut last: BTreeMap<VehicleId, f64> = BTreeMap::new();
        for step in &log.steps {
            for r in &step.records {
                prop_assert!(r.speed >= 0.0);
                if let Some(prev) = last.insert(r.id, r.s) {
                    prop_assert!(r.s >= prev);
                }
            }
        }
    }

    #[test]
    fn nominal_barrier_loop_stays_safe(k in 0u64..1000, c in 0usize..3) {
        let (cfg, table) = setup();
        let log = run(&cfg, &table, k, ControllerKind::ALL[c]);
        prop_assert!(log.collision_pairs.is_empty());
        prop_assert!(!log.timed_out);
        prop_assert!(log.steps.iter().filter_map(|s| s.h0_min).all(|h| h > 0.0));
    }

    #[test]
    fn tel_dominates_be_for_every_vehicle(k in 0u64..1000, c in 0usize..3) {
        let (cfg, table) = setup();
        let report = MetricsReport::from_log(&run(&cfg, &table, k, ControllerKind::ALL[c])).unwrap();
        prop_assert!(report.per_vehicle.iter().all(|v| v.tel_whpkm >= v.be_whpkm));
    }
}

#[test]
fn fifo_crosses_in_entry_order() {
    let (cfg, table) = setup();
    for k in 0..10 {
        let log = run(&cfg, &table, k, ControllerKind::Fifo);
        let entry = entry_steps(&log);
        let mut crossings = flow_metrics(&log.steps).crossings;
        crossings.sort_by(|a, b| a.1.total_cmp(&b.1));
        let got: Vec<VehicleId> = crossings.iter().map(|c| c.0).collect();
        let mut expected = got.clone();
        expected.sort_by_key(|id| (entry[id], *id));
        assert_eq!(got, expected, "run {k}");
    }
}

#[test]
fn every_vehicle_is_injected_and_leaves() {
    let (cfg, table) = setup();
    let sc = sample_scenario(&cfg, &table, 3);
    for kind in ControllerKind::ALL {
        let log = run_scenario(&sc, kind, &cfg.sim_config(kind == ControllerKind::CCbf)).unwrap();
        assert_eq!(entry_steps(&log).len(), sc.vehicles.len());
        let flow = flow_metrics(&log.steps);
        assert!(!flow.gridlock);
        assert_eq!(flow.crossings.len(), sc.vehicles.len());
    }
}
