//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use merge_cbf::cbf::BarrierGains;
use merge_cbf::controllers::{
    dpc_cbf_step, AgentView, ControllerKind, DisturbanceLedger, LedgerMode, Snapshot,
};
use merge_cbf::geometry::{Lane, LanePosition};
use merge_cbf::harness::{
    four_vehicle_labels, four_vehicle_scenario, run_batch, run_one, run_rng, sample_scenario,
    BatchMode, BatchSummary, ScenarioConfig, FOUR_VEHICLE_H1_S,
};
use merge_cbf::metrics::{flow_metrics, CoastDownTable, MetricsReport};
use merge_cbf::qp::ActiveSetSolver;
use merge_cbf::sim::{run_scenario, HostOrder, SimLog, StepLog, VehicleParams, VehicleRecord};
use merge_cbf::tuning::{mu_eigenvalues, unstable_range, ContestedPair, TwoVehicleTuning};
use merge_cbf::verify::{closed_form_gap, qp_suite};
use rand::Rng;

struct Outcome {
    pass: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Self { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "MISS" }));
    }
}

const ENERGY_AND_FLOW: [&str; 5] = ["pake_whpkm", "be_whpkm", "tel_whpkm", "travel_time_s", "avg_speed_mps"];

fn within(x: f64, target: f64, tol: f64) -> bool {
    (x - target).abs() <= tol
}

fn merge_order(log: &SimLog) -> String {
    let mut crossings = flow_metrics(&log.steps).crossings;
    crossings.sort_by(|a, b| a.1.total_cmp(&b.1));
    crossings.iter().map(|c| four_vehicle_labels(c.0)).collect::<Vec<_>>().join("-")
}

fn criterion_1(cfg: &ScenarioConfig, table: &CoastDownTable) -> Outcome {
    let mut out = Outcome::new();
    let start = Instant::now();
    let sc = four_vehicle_scenario(cfg, table, FOUR_VEHICLE_H1_S);
    let (dpc, dpc_report) = run_one(cfg, &sc, ControllerKind::DpcCbf).unwrap();
    let (fifo, _) = run_one(cfg, &sc, ControllerKind::Fifo).unwrap();
    let elapsed = start.elapsed();
    let order = merge_order(&dpc);
    out.check(order == "M1-H1-M2-H2", format!("DPC-CBF merge order {order} (want M1-H1-M2-H2)"));
    let order = merge_order(&fifo);
    out.check(order == "M1-H1-H2-M2", format!("FIFO merge order {order} (want M1-H1-H2-M2)"));
    let records = || dpc.steps.iter().flat_map(|s| &s.records);
    let v_min = records().map(|r| r.speed).fold(f64::INFINITY, f64::min);
    out.check(v_min >= 5.0, format!("DPC-CBF minimum speed {v_min:.3} m/s (want >= 5)"));
    let a_min = records().map(|r| r.accel).fold(f64::INFINITY, f64::min);
    let a_max = records().map(|r| r.accel).fold(f64::NEG_INFINITY, f64::max);
    out.check(
        a_min >= -6.0 && a_max <= 5.0,
        format!("DPC-CBF accelerations in [{a_min:.3}, {a_max:.3}] (want within [-6, 5])"),
    );
    out.check(dpc_report.h0_min_m2 > 0.0, format!("DPC-CBF h0_min {:.3} m^2 (want > 0)", dpc_report.h0_min_m2));
    out.check(elapsed < Duration::from_secs(5), format!("runtime {elapsed:.2?} (want < 5 s)"));
    out
}

fn criterion_2(nominal: &BatchSummary) -> Outcome {
    let mut out = Outcome::new();
    out.check(nominal.runs.len() == 500, format!("{} runs", nominal.runs.len()));
    for kind in [ControllerKind::DpcCbf, ControllerKind::Fifo] {
        let agg = &nominal.aggregates[&kind];
        let h0_ok = nominal.series(kind, "h0_min_m2").iter().all(|&h| h > 0.0);
        out.check(
            agg.collision_events == 0 && h0_ok,
            format!("{kind}: {} collision events, h0_min > 0 in every run: {h0_ok}", agg.collision_events),
        );
    }
    let flags = nominal.aggregates[&ControllerKind::DpcCbf].infeasible_flags;
    out.check(flags == 0, format!("DPC-CBF infeasibility flags {flags} (want 0)"));
    out
}

fn criterion_3(nominal: &BatchSummary, elapsed: Duration) -> Outcome {
    let mut out = Outcome::new();
    let pct = &nominal.percent_vs_fifo[&ControllerKind::DpcCbf];
    for (metric, target, tol) in [
        ("pake_whpkm", -38.0, 8.0),
        ("be_whpkm", -46.6, 8.0),
        ("tel_whpkm", -23.2, 6.0),
        ("travel_time_s", -3.5, 2.0),
        ("avg_speed_mps", 5.5, 2.0),
    ] {
        let got = pct[metric];
        out.check(
            within(got, target, tol),
            format!("{metric} change {got:+.2}% (want {target:+.1}% +/- {tol} pp)"),
        );
    }
    let mean = |kind, m: &str| nominal.aggregates[&kind].metrics[m].mean;
    let saving = mean(ControllerKind::Fifo, "travel_time_s") - mean(ControllerKind::DpcCbf, "travel_time_s");
    out.check(within(saving, 1.4, 1.0), format!("travel-time saving {saving:.3} s (want 1.4 +/- 1)"));
    let fifo_tel = mean(ControllerKind::Fifo, "tel_whpkm");
    out.check(
        within(fifo_tel, 251.0, 0.4 * 251.0),
        format!("FIFO mean TEL {fifo_tel:.2} Wh/km (want 251 +/- 40%)"),
    );
    out.check(elapsed < Duration::from_secs(30 * 60), format!("batch runtime {elapsed:.2?} (want < 30 min)"));
    out
}

/// Positive when C-CBF improves on FIFO by more than DPC-CBF does.
fn ccbf_advantage(metric: &str, dpc: f64, ccbf: f64) -> f64 {
    if metric == "avg_speed_mps" {
        ccbf - dpc
    } else {
        dpc - ccbf
    }
}

fn criterion_4(nominal: &BatchSummary) -> Outcome {
    let mut out = Outcome::new();
    let dpc = &nominal.percent_vs_fifo[&ControllerKind::DpcCbf];
    let ccbf = &nominal.percent_vs_fifo[&ControllerKind::CCbf];
    for m in ENERGY_AND_FLOW {
        let gap = (ccbf[m] - dpc[m]).abs();
        let adv = ccbf_advantage(m, dpc[m], ccbf[m]);
        out.check(
            gap <= 3.0 && adv >= 0.0,
            format!(
                "{m}: C-CBF {:+.2}% vs DPC-CBF {:+.2}%, gap {gap:.2} pp, C-CBF advantage {adv:+.2} pp (want gap <= 3, advantage >= 0)",
                ccbf[m], dpc[m]
            ),
        );
    }
    out
}

fn criterion_5(cfg: &ScenarioConfig, table: &CoastDownTable) -> Outcome {
    let mut out = Outcome::new();
    let mut fc = *cfg;
    fc.run.runs = 100;
    let kinds = [ControllerKind::DpcCbf, ControllerKind::CCbf];
    let fault = run_batch(&fc, table, &kinds, BatchMode::Fault, None).unwrap();
    let dpc = fault.aggregates[&ControllerKind::DpcCbf].collision_runs;
    let ccbf = fault.aggregates[&ControllerKind::CCbf].collision_runs;
    out.check(ccbf > dpc, format!("collision runs: C-CBF {ccbf}, DPC-CBF {dpc} (want C-CBF > DPC-CBF)"));
    let frac = dpc as f64 / fault.runs.len() as f64;
    out.check(frac <= 0.20, format!("DPC-CBF collision-run fraction {frac:.2} (want <= 0.20)"));
    out
}

fn criterion_6(cfg: &ScenarioConfig) -> Outcome {
    let mut out = Outcome::new();
    let rep = qp_suite(&mut run_rng(cfg.run.seed, 0), 1000);
    out.check(
        rep.status_mismatches == 0,
        format!(
            "{} problems: {} optimal, {} infeasible, {} status mismatches",
            rep.problems, rep.optimal, rep.infeasible, rep.status_mismatches
        ),
    );
    out.check(rep.max_error <= 1e-7, format!("max deviation from oracle {:.2e} (want <= 1e-7)", rep.max_error));
    out.check(rep.max_kkt <= 1e-8, format!("max KKT residual {:.2e} (want <= 1e-8)", rep.max_kkt));
    let (gap, contested) = closed_form_gap();
    out.check(
        gap <= 1e-9 && contested > 0,
        format!("two-vehicle closed form: max gap {gap:.2e} over {contested} contested states (want <= 1e-9)"),
    );
    out
}

/// Fleet-average pair: midpoint radius and speeds, default barrier gains.
fn fleet_pair(cfg: &ScenarioConfig, gamma: f64, kappa: f64) -> ContestedPair {
    let t = &cfg.traffic;
    let speed = 0.5 * (t.speed_min_mps + t.speed_max_mps);
    let barrier = BarrierGains::default();
    ContestedPair {
        gamma,
        v0: [speed, speed],
        radius: 0.5 * (t.radius_min_m + t.radius_max_m),
        barrier,
        rho: 1.0 / (barrier.tau_f * kappa) - 1.0,
    }
}

fn criterion_7(cfg: &ScenarioConfig) -> Outcome {
    let mut out = Outcome::new();
    let kappa = 0.926;
    let sim_angle = cfg.network().merge_angle_rad;
    for gamma in [sim_angle, std::f64::consts::FRAC_PI_2] {
        let pair = fleet_pair(cfg, gamma, kappa);
        let numeric = pair.linearized_spectrum(1e-5).unwrap();
        let predicted = pair.predicted_spectrum().unwrap();
        let err = numeric
            .iter()
            .zip(&predicted)
            .map(|(z, p)| (z.re - p).abs().max(z.im.abs()))
            .fold(0.0, f64::max);
        let fmt = |xs: Vec<f64>| xs.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", ");
        out.check(
            err <= 1e-4,
            format!(
                "merge angle {:.0} deg: linearized [{}] vs formula [{}], max error {err:.2e} (want <= 1e-4)",
                gamma.to_degrees(),
                fmt(numeric.iter().map(|z| z.re).collect()),
                fmt(predicted)
            ),
        );
    }
    let pair = fleet_pair(cfg, sim_angle, kappa);
    let (lo, hi) = unstable_range(pair.tuning().unwrap().v0_norm(), pair.d()).unwrap();
    let sweep_ok = [0.01, 0.1, 0.5, 1.0, 10.0, 100.0].iter().all(|&k| {
        let (_, mu) = mu_eigenvalues(&TwoVehicleTuning::new(sim_angle, pair.v0, pair.d(), k).unwrap());
        mu > lo && mu < hi
    });
    out.check(sweep_ok, format!("unstable root inside ({lo}, {hi:.4}) for kappa in [0.01, 100]"));
    let (_, mu) = mu_eigenvalues(&pair.tuning().unwrap());
    out.check(within(mu, 1.70, 0.01), format!("unstable root at kappa = {kappa}: {mu:.4} 1/s (want 1.70 +/- 0.01)"));
    out
}

fn dense_snapshot(rng: &mut impl Rng, cfg: &ScenarioConfig) -> Snapshot {
    let mass = cfg.traffic.mass_min_kg;
    let agents = (0..20u32)
        .map(|k| {
            let lane = if k % 2 == 0 { Lane::Highway } else { Lane::Merge };
            let s = -15.0 - 9.0 * (k / 2) as f64 + rng.random_range(-2.0..2.0);
            let speed = rng.random_range(20.0..25.0);
            AgentView {
                id: k + 1,
                pos: LanePosition::new(lane, s),
                speed,
                accel: rng.random_range(-1.0..1.0),
                mass: mass * rng.random_range(1.0..4.0),
                radius: rng.random_range(2.0..4.0),
                desired_speed: speed,
                cz_entry_time: -(200.0 + s) / speed,
            }
        })
        .collect();
    Snapshot::new(0.0, agents)
}

fn criterion_8(cfg: &ScenarioConfig) -> Outcome {
    let mut out = Outcome::new();
    let gains = cfg.dpc_cbf.gains(cfg.run.ts_s);
    let net = cfg.network();
    let mut rng = run_rng(cfg.run.seed, 8);
    let mut solver = ActiveSetSolver::default();
    let mut worst_solve = Duration::ZERO;
    let mut worst_fanout = Duration::ZERO;
    let mut iterations = 0;
    for _ in 0..20 {
        let snap = dense_snapshot(&mut rng, cfg);
        let fan = Instant::now();
        for a in &snap.agents {
            let mut ledger = DisturbanceLedger::new(a.id, LedgerMode::FilteredVelocity);
            ledger.sync(&snap);
            let t = Instant::now();
            let res = dpc_cbf_step(a.id, &snap, a.desired_speed, &ledger, &gains, &net, &mut solver).unwrap();
            worst_solve = worst_solve.max(t.elapsed());
            iterations = iterations.max(res.iterations);
        }
        worst_fanout = worst_fanout.max(fan.elapsed());
    }
    out.check(
        worst_solve <= Duration::from_millis(12),
        format!("worst single-host 20-agent solve {worst_solve:.2?} ({iterations} iterations max) (want <= 12 ms)"),
    );
    out.check(
        worst_fanout <= Duration::from_millis(50),
        format!("worst 20-host fan-out {worst_fanout:.2?} (want <= 50 ms)"),
    );
    out
}

fn synthetic_log(speeds: &[f64], cfg: &ScenarioConfig, table: &CoastDownTable) -> SimLog {
    let ts = cfg.run.ts_s;
    let mass = cfg.traffic.mass_min_kg;
    let mut s = -100.0;
    let steps = speeds
        .windows(2)
        .enumerate()
        .map(|(k, w)| {
            let rec = VehicleRecord {
                id: 1,
                origin: Lane::Highway,
                lane: Lane::Highway,
                s,
                speed: w[0],
                u: w[1],
                accel: (w[1] - w[0]) / ts,
                faulted: false,
                w_self: 0.0,
            };
            s += 0.5 * (w[0] + w[1]) * ts;
            StepLog { time: k as f64 * ts, records: vec![rec], h0_min: None, infeasible: 0 }
        })
        .collect();
    SimLog {
        controller: ControllerKind::DpcCbf,
        ts,
        net: cfg.network(),
        params: BTreeMap::from([(
            1,
            VehicleParams { mass, radius: 2.0, coast_down: table.interpolate(mass), desired_speed: speeds[0] },
        )]),
        steps,
        collision_pairs: Vec::new(),
        infeasible_flags: 0,
        timed_out: false,
    }
}

fn criterion_9(cfg: &ScenarioConfig, table: &CoastDownTable, nominal: &BatchSummary) -> Outcome {
    let mut out = Outcome::new();
    let mut w_self_max: f64 = 0.0;
    let mut replay_ok = true;
    let mut order_ok = true;
    for k in 0..25 {
        let sc = sample_scenario(cfg, table, k);
        let sim = cfg.sim_config(false);
        let log = run_scenario(&sc, ControllerKind::DpcCbf, &sim).unwrap();
        w_self_max = log.steps.iter().flat_map(|s| &s.records).fold(w_self_max, |m, r| m.max(r.w_self.abs()));
        for kind in ControllerKind::ALL {
            let a = run_scenario(&sc, kind, &cfg.sim_config(kind == ControllerKind::CCbf)).unwrap();
            let b = run_scenario(&sc, kind, &cfg.sim_config(kind == ControllerKind::CCbf)).unwrap();
            replay_ok &= a == b;
        }
        for order in [HostOrder::Descending, HostOrder::Shuffled(k)] {
            let mut shuffled = sim;
            shuffled.host_order = order;
            order_ok &= run_scenario(&sc, ControllerKind::DpcCbf, &shuffled).unwrap() == log;
        }
    }
    out.check(w_self_max == 0.0, format!("max |w_self| over 25 DPC-CBF runs: {w_self_max:e} (want 0)"));
    let tel_ok = nominal
        .runs
        .iter()
        .flat_map(|r| r.results.values())
        .flat_map(|m| &m.per_vehicle)
        .all(|v| v.tel_whpkm >= v.be_whpkm);
    out.check(tel_ok, "TEL >= BE for every vehicle of every nominal run".into());
    let flat = MetricsReport::from_log(&synthetic_log(&[22.0; 200], cfg, table)).unwrap();
    let slowing: Vec<f64> = (0..200).map(|k| 25.0 - 0.05 * k as f64).collect();
    let down = MetricsReport::from_log(&synthetic_log(&slowing, cfg, table)).unwrap();
    out.check(
        flat.pake_whpkm == 0.0 && down.pake_whpkm == 0.0,
        format!("PaKE on constant and decelerating logs: {}, {} (want 0)", flat.pake_whpkm, down.pake_whpkm),
    );
    out.check(replay_ok, "identical scenarios replay bit-identically under every controller".into());
    out.check(order_ok, "DPC-CBF logs independent of host evaluation order".into());
    out
}

fn main() -> ExitCode {
    let cfg = ScenarioConfig::default();
    let table = CoastDownTable::default();
    let start = Instant::now();
    let nominal = run_batch(&cfg, &table, &ControllerKind::ALL, BatchMode::Nominal, None).unwrap();
    let batch_time = start.elapsed();

    let results = [
        (1, "four-vehicle scenario", criterion_1(&cfg, &table)),
        (2, "nominal batch safety", criterion_2(&nominal)),
        (3, "DPC-CBF vs FIFO percent changes", criterion_3(&nominal, batch_time)),
        (4, "C-CBF close to DPC-CBF", criterion_4(&nominal)),
        (5, "power-loss campaign", criterion_5(&cfg, &table)),
        (6, "QP oracle suite", criterion_6(&cfg)),
        (7, "tuning analysis", criterion_7(&cfg)),
        (8, "QP timing", criterion_8(&cfg)),
        (9, "property suites", criterion_9(&cfg, &table, &nominal)),
    ];
    let mut failed = 0;
    for (id, name, outcome) in &results {
        println!("criterion {id} [{}] {name}", if outcome.pass { "PASS" } else { "FAIL" });
        for line in &outcome.lines {
            println!("    {line}");
        }
        failed += usize::from(!outcome.pass);
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
