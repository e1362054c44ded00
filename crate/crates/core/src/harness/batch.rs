use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::controllers::{ControllerKind, VehicleId};
use crate::metrics::{CoastDownTable, MetricsReport};
use crate::sim::{run_scenario, Scenario, SimLog};

use super::config::ScenarioConfig;
use super::sample::{sample_fault_scenario, sample_scenario, scenario_hash};
use super::HarnessError;

/// Metric names as used in summaries and histogram file names.
pub const METRICS: [&str; 6] = [
    "pake_whpkm",
    "be_whpkm",
    "tel_whpkm",
    "travel_time_s",
    "avg_speed_mps",
    "h0_min_m2",
];

pub fn metric_value(r: &MetricsReport, name: &str) -> Option<f64> {
    Some(match name {
        "pake_whpkm" => r.pake_whpkm,
        "be_whpkm" => r.be_whpkm,
        "tel_whpkm" => r.tel_whpkm,
        "travel_time_s" => r.travel_time_s,
        "avg_speed_mps" => r.avg_speed_mps,
        "h0_min_m2" => r.h0_min_m2,
        _ => return None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BatchMode {
    Nominal,
    Fault,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: u64,
    pub scenario_hash: String,
    pub victim: Option<VehicleId>,
    pub results: BTreeMap<ControllerKind, MetricsReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; zero for a single run.
    pub std: f64,
}

impl Stat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let std = if xs.len() > 1 {
            (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerAggregate {
    pub metrics: BTreeMap<String, Stat>,
    /// Runs with at least one collision.
    pub collision_runs: usize,
    pub collision_events: usize,
    pub infeasible_flags: usize,
    pub gridlock_runs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub mode: BatchMode,
    pub seed: u64,
    pub runs: Vec<RunRecord>,
    pub aggregates: BTreeMap<ControllerKind, ControllerAggregate>,
    /// `100 (mean_c - mean_fifo) / mean_fifo` per metric; empty without FIFO.
    pub percent_vs_fifo: BTreeMap<ControllerKind, BTreeMap<String, f64>>,
}

impl BatchSummary {
    pub fn series(&self, kind: ControllerKind, metric: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter_map(|r| r.results.get(&kind))
            .filter_map(|m| metric_value(m, metric))
            .collect()
    }

    pub fn gridlock_runs(&self) -> usize {
        self.aggregates.values().map(|a| a.gridlock_runs).sum()
    }

    fn aggregate(&mut self, controllers: &[ControllerKind]) {
        for &kind in controllers {
            let reports: Vec<&MetricsReport> = self.runs.iter().filter_map(|r| r.results.get(&kind)).collect();
            let metrics = METRICS
                .iter()
                .map(|&m| (m.to_string(), Stat::of(&self.series(kind, m))))
                .collect();
            self.aggregates.insert(
                kind,
                ControllerAggregate {
                    metrics,
                    collision_runs: reports.iter().filter(|r| r.collisions > 0).count(),
                    collision_events: reports.iter().map(|r| r.collisions).sum(),
                    infeasible_flags: reports.iter().map(|r| r.infeasible_flags).sum(),
                    gridlock_runs: reports.iter().filter(|r| r.gridlock).count(),
                },
            );
        }
        let Some(fifo) = self.aggregates.get(&ControllerKind::Fifo).cloned() else {
            return;
        };
        for (&kind, agg) in &self.aggregates {
            if kind == ControllerKind::Fifo {
                continue;
            }
            let pct = METRICS
                .iter()
                .map(|&m| {
                    let base = fifo.metrics[m].mean;
                    (m.to_string(), 100.0 * (agg.metrics[m].mean - base) / base)
                })
                .collect();
            self.percent_vs_fifo.insert(kind, pct);
        }
    }
}

/// Runs one scenario under one controller and scores it.
pub fn run_one(
    cfg: &ScenarioConfig,
    scenario: &Scenario,
    kind: ControllerKind,
) -> Result<(SimLog, MetricsReport), HarnessError> {
    let sim_cfg = cfg.sim_config(kind == ControllerKind::CCbf);
    let log = run_scenario(scenario, kind, &sim_cfg)?;
    let report = MetricsReport::from_log(&log)?;
    Ok((log, report))
}

fn run_csv_path(dir: &Path, kind: ControllerKind, run: u64) -> PathBuf {
    dir.join("runs").join(kind.as_str()).join(format!("{run}.csv"))
}

/// Executes `cfg.run.runs` paired runs under every requested controller.
///
/// Run `k` of every controller consumes the same sampled scenario. With
/// `out_dir`, per-run logs go to `runs/<controller>/<k>.csv`.
pub fn run_batch(
    cfg: &ScenarioConfig,
    table: &CoastDownTable,
    controllers: &[ControllerKind],
    mode: BatchMode,
    out_dir: Option<&Path>,
) -> Result<BatchSummary, HarnessError> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        for kind in controllers {
            fs::create_dir_all(dir.join("runs").join(kind.as_str()))?;
        }
    }
    let n = cfg.run.runs;
    let runs = (0..n as u64)
        .into_par_iter()
        .map(|k| {
            let scenario = match mode {
                BatchMode::Nominal => sample_scenario(cfg, table, k),
                BatchMode::Fault => sample_fault_scenario(cfg, table, k, n),
            };
            let mut results = BTreeMap::new();
            for &kind in controllers {
                let (log, report) = run_one(cfg, &scenario, kind)?;
                if let Some(dir) = out_dir {
                    let file = fs::File::create(run_csv_path(dir, kind, k))?;
                    log.write_csv(BufWriter::new(file))?;
                }
                results.insert(kind, report);
            }
            Ok(RunRecord {
                run: k,
                scenario_hash: scenario_hash(&scenario),
                victim: scenario.fault.map(|f| f.victim),
                results,
            })
        })
        .collect::<Result<Vec<_>, HarnessError>>()?;
    let mut summary = BatchSummary {
        mode,
        seed: cfg.run.seed,
        runs,
        aggregates: BTreeMap::new(),
        percent_vs_fifo: BTreeMap::new(),
    };
    summary.aggregate(controllers);
    if let Some(dir) = out_dir {
        let file = fs::File::create(dir.join("summary.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(file), &summary)?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
    /// Exact sum of the values in the bin.
    pub sum: f64,
}

/// Equal-width bins over the finite values of `xs`.
///
/// Identical values collapse into a single degenerate bin.
pub fn histogram(xs: &[f64], bins: usize) -> Option<Vec<Bin>> {
    let finite: Vec<f64> = xs.iter().copied().filter(|x| x.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return None;
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return Some(vec![Bin { lo, hi, count: finite.len(), sum: finite.iter().sum() }]);
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<Bin> = (0..bins)
        .map(|k| Bin {
            lo: lo + k as f64 * width,
            hi: if k + 1 == bins { hi } else { lo + (k + 1) as f64 * width },
            count: 0,
            sum: 0.0,
        })
        .collect();
    for x in finite {
        let k = (((x - lo) / width) as usize).min(bins - 1);
        out[k].count += 1;
        out[k].sum += x;
    }
    Some(out)
}

/// Writes `hist_<metric>_<controller>.csv` for every metric and controller.
pub fn emit_histograms(summary: &BatchSummary, dir: &Path, bins: usize) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for &kind in summary.aggregates.keys() {
        for metric in METRICS {
            let series = summary.series(kind, metric);
            let hist = histogram(&series, bins)
                .ok_or_else(|| HarnessError::EmptySeries(format!("{metric} for {kind}")))?;
            let path = dir.join(format!("hist_{metric}_{kind}.csv"));
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["bin_lo", "bin_hi", "count", "sum"])?;
            for b in hist {
                w.write_record([b.lo.to_string(), b.hi.to_string(), b.count.to_string(), b.sum.to_string()])?;
            }
            w.flush()?;
            written.push(path);
        }
    }
    Ok(written)
}
