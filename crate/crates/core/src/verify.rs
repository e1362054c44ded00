//! Self-checks behind the `verify` subcommand: the QP solver against a
//! brute-force oracle, and closed-loop invariants on sampled scenarios.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::cbf::BarrierGains;
use crate::controllers::ControllerKind;
use crate::harness::{run_one, sample_scenario, HarnessError, ScenarioConfig};
use crate::metrics::CoastDownTable;
use crate::qp::{kkt_residuals, solve, QpProblem, QpStatus};
use crate::sim::{run_scenario, HostOrder};
use crate::tuning::ContestedPair;

/// Random strictly convex problem with `n ≤ 4` and at most six constraints
/// (rows plus finite bounds). One in five is relaxed with slacks.
pub fn random_problem<R: Rng>(rng: &mut R) -> QpProblem {
    let n = rng.random_range(1..=4);
    let h: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..5.0)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
    let mut p = QpProblem::new(h, c);
    let mut budget: usize = rng.random_range(0..=6);
    for i in 0..n {
        if budget >= 2 && rng.random_bool(0.3) {
            let lo = rng.random_range(-3.0..0.5);
            p.set_bounds(i, lo, lo + rng.random_range(0.0..4.0));
            budget -= 2;
        }
    }
    for _ in 0..budget {
        let row: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        p.push_row(&row, rng.random_range(-3.0..3.0));
    }
    if rng.random_bool(0.2) {
        p = p.with_slack(rng.random_range(1.0..100.0));
    }
    p
}

/// Exact minimiser by enumerating candidate active sets, or `None` when the
/// problem is infeasible. Slack variables, when present, are appended.
pub fn enumeration_oracle(p: &QpProblem) -> Option<Vec<f64>> {
    let n = p.n();
    let m = p.num_rows();
    let relaxed = p.slack_weight.is_some();
    let dim = n + if relaxed { m } else { 0 };
    let mut hess = p.hessian_diag.clone();
    let mut lin = p.linear_cost.clone();
    if let Some(w) = p.slack_weight {
        hess.extend(std::iter::repeat_n(2.0 * w, m));
        lin.extend(std::iter::repeat_n(0.0, m));
    }
    let mut cons: Vec<(Vec<f64>, f64)> = Vec::new();
    for k in 0..m {
        let mut g = p.row(k).to_vec();
        g.resize(dim, 0.0);
        if relaxed {
            g[n + k] = 1.0;
        }
        cons.push((g, p.rhs[k]));
    }
    for i in 0..n {
        let mut e = vec![0.0; dim];
        if p.lower[i].is_finite() {
            e[i] = 1.0;
            cons.push((e.clone(), p.lower[i]));
        }
        if p.upper[i].is_finite() {
            e[i] = -1.0;
            cons.push((e, -p.upper[i]));
        }
    }
    if relaxed {
        for k in 0..m {
            let mut e = vec![0.0; dim];
            e[n + k] = 1.0;
            cons.push((e, 0.0));
        }
    }
    let q = cons.len();
    let feasible = |x: &[f64]| {
        cons.iter()
            .all(|(g, r)| g.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() >= r - 1e-9)
    };
    for mask in 0u32..(1u32 << q) {
        let set: Vec<usize> = (0..q).filter(|&k| mask >> k & 1 == 1).collect();
        if set.len() > dim {
            continue;
        }
        // H x + c = Gᵀλ, G x = r  ⇒  (G H⁻¹ Gᵀ) λ = r + G H⁻¹ c
        let s = set.len();
        let g = DMatrix::from_fn(s, dim, |r, col| cons[set[r]].0[col]);
        let hinv = DVector::from_iterator(dim, hess.iter().map(|h| 1.0 / h));
        let gh = DMatrix::from_fn(s, dim, |r, col| g[(r, col)] * hinv[col]);
        let lhs = &gh * g.transpose();
        let rhs = DVector::from_fn(s, |r, _| {
            cons[set[r]].1 + (0..dim).map(|col| gh[(r, col)] * lin[col]).sum::<f64>()
        });
        let lambda = if s == 0 {
            DVector::zeros(0)
        } else {
            if lhs.determinant().abs() < 1e-12 {
                continue;
            }
            match lhs.lu().solve(&rhs) {
                Some(l) => l,
                None => continue,
            }
        };
        if lambda.iter().any(|&l| l < -1e-10) {
            continue;
        }
        let gt_l = g.transpose() * &lambda;
        let x: Vec<f64> = (0..dim).map(|k| hinv[k] * (gt_l[k] - lin[k])).collect();
        if feasible(&x) {
            return Some(x);
        }
    }
    None
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct QpSuiteReport {
    pub problems: usize,
    pub optimal: usize,
    pub infeasible: usize,
    /// Status disagreements with the oracle.
    pub status_mismatches: usize,
    pub max_error: f64,
    pub max_kkt: f64,
}

impl QpSuiteReport {
    pub fn passed(&self, tol: f64, kkt_tol: f64) -> bool {
        self.status_mismatches == 0 && self.max_error <= tol && self.max_kkt <= kkt_tol
    }
}

/// Solves `count` random problems and compares each with the oracle.
pub fn qp_suite<R: Rng>(rng: &mut R, count: usize) -> QpSuiteReport {
    let mut rep = QpSuiteReport { problems: count, ..Default::default() };
    for _ in 0..count {
        let p = random_problem(rng);
        let sol = solve(&p, None).expect("generated problems are well formed");
        let oracle = enumeration_oracle(&p);
        match (sol.status, oracle) {
            (QpStatus::Optimal, Some(x)) => {
                rep.optimal += 1;
                let err = sol
                    .u_star
                    .iter()
                    .chain(&sol.slack_values)
                    .zip(&x)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                rep.max_error = rep.max_error.max(err);
                let kkt = kkt_residuals(&p, &sol).expect("dimensions match").max();
                rep.max_kkt = rep.max_kkt.max(kkt);
            }
            (QpStatus::Infeasible, None) => rep.infeasible += 1,
            _ => rep.status_mismatches += 1,
        }
    }
    rep
}

/// Largest gap between the solver and the two-vehicle projection formula
/// over a sweep of states, with the number of states where the barrier binds.
pub fn closed_form_gap() -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut contested = 0;
    for (deg, rho) in [(30.0f64, 1.7), (45.0, 0.5), (90.0, 3.0)] {
        let pair = ContestedPair {
            gamma: deg.to_radians(),
            v0: [22.0, 24.0],
            radius: 2.8,
            barrier: BarrierGains::default(),
            rho,
        };
        for k in 0..20 {
            let s1 = -20.0 - 2.0 * k as f64;
            let x = [s1, s1 + 1.0, 18.0 + 0.2 * k as f64, 21.0];
            let sol = solve(&pair.qp(x), None).expect("well formed");
            let (a, b) = pair.row(x);
            let vb = pair.v_bar(x);
            if a + b[0] * vb[0] + b[1] * vb[1] >= 0.0 {
                // constraint inactive; the formula does not apply
                continue;
            }
            contested += 1;
            let u = pair.control(x);
            worst = worst.max((sol.u_star[0] - u[0]).abs()).max((sol.u_star[1] - u[1]).abs());
        }
    }
    (worst, contested)
}

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Closed-loop invariants over the first `runs` sampled scenarios.
pub fn invariant_suite(
    cfg: &ScenarioConfig,
    table: &CoastDownTable,
    runs: u64,
) -> Result<Vec<Check>, HarnessError> {
    let mut w_self_max: f64 = 0.0;
    let mut tel_ok = true;
    let mut replay_ok = true;
    let mut order_ok = true;
    let mut monotone_ok = true;
    for k in 0..runs {
        let sc = sample_scenario(cfg, table, k);
        for kind in ControllerKind::ALL {
            let (log, report) = run_one(cfg, &sc, kind)?;
            let (again, _) = run_one(cfg, &sc, kind)?;
            replay_ok &= log == again;
            tel_ok &= report.per_vehicle.iter().all(|v| v.tel_whpkm >= v.be_whpkm);
            for w in log.steps.windows(2) {
                for r in &w[1].records {
                    if let Some(prev) = w[0].records.iter().find(|p| p.id == r.id) {
                        monotone_ok &= r.s >= prev.s;
                    }
                }
            }
            if kind == ControllerKind::DpcCbf {
                for step in &log.steps {
                    for r in &step.records {
                        w_self_max = w_self_max.max(r.w_self.abs());
                    }
                }
                for order in [HostOrder::Descending, HostOrder::Shuffled(k)] {
                    let mut sim = cfg.sim_config(false);
                    sim.host_order = order;
                    order_ok &= run_scenario(&sc, kind, &sim)? == log;
                }
            }
        }
    }
    Ok(vec![
        Check {
            name: "own disturbance estimate is zero",
            passed: w_self_max == 0.0,
            detail: format!("max |w_self| = {w_self_max:e}"),
        },
        Check {
            name: "TEL >= BE per vehicle",
            passed: tel_ok,
            detail: String::new(),
        },
        Check {
            name: "replay determinism",
            passed: replay_ok,
            detail: String::new(),
        },
        Check {
            name: "host evaluation order irrelevant",
            passed: order_ok,
            detail: String::new(),
        },
        Check {
            name: "arc positions non-decreasing",
            passed: monotone_ok,
            detail: String::new(),
        },
    ])
}
