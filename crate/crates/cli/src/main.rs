use std::error::Error;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use merge_cbf::controllers::ControllerKind;
use merge_cbf::harness::{
    emit_histograms, four_vehicle_labels, four_vehicle_scenario, run_batch, run_one, run_rng,
    BatchMode, BatchSummary, ScenarioConfig, FOUR_VEHICLE_H1_S, METRICS,
};
use merge_cbf::metrics::{flow_metrics, CoastDownTable};
use merge_cbf::tuning::{kappa_table, write_kappa_csv};
use merge_cbf::verify::{closed_form_gap, invariant_suite, qp_suite};

type CliResult = Result<ExitCode, Box<dyn Error>>;

/// Merge-zone coordination simulator with barrier-function controllers.
#[derive(Debug, Parser)]
#[command(name = "merge-cbf", version)]
struct Cli {
    /// Output directory.
    #[arg(long, global = true, env = "MERGE_CBF_OUT_DIR", default_value = "out")]
    out_dir: PathBuf,
    /// Experiment configuration (TOML). Defaults are used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Coast-down table (CSV). The bundled table is used when absent.
    #[arg(long, global = true)]
    coast_down: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct BatchArgs {
    /// Number of runs; overrides the configuration.
    #[arg(long)]
    runs: Option<usize>,
    /// Base seed; overrides the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated subset of dpc-cbf, c-cbf, fifo.
    #[arg(long, value_delimiter = ',', default_value = "dpc-cbf,c-cbf,fifo")]
    controllers: Vec<ControllerKind>,
    /// Histogram bins per metric.
    #[arg(long, default_value_t = 20)]
    bins: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Four-vehicle tie at the merge point under every controller.
    Demo4 {
        /// Starting arc position of the leading highway vehicle (m).
        #[arg(long, default_value_t = FOUR_VEHICLE_H1_S, allow_hyphen_values = true)]
        h1_s: f64,
    },
    /// Nominal Monte Carlo batch.
    Mc(BatchArgs),
    /// Power-loss campaign; 100 runs unless `--runs` is given.
    FaultMc(BatchArgs),
    /// Eigenvalue table of the two-vehicle contested merge over a κ grid.
    Tuning {
        #[arg(long, default_value_t = 0.01)]
        kappa_min: f64,
        #[arg(long, default_value_t = 100.0)]
        kappa_max: f64,
        /// Log-spaced grid points.
        #[arg(long, default_value_t = 41)]
        points: usize,
    },
    /// QP oracle comparison and closed-loop invariant checks.
    Verify {
        /// Random QP problems.
        #[arg(long, default_value_t = 1000)]
        problems: usize,
        /// Sampled scenarios for the invariant suite.
        #[arg(long, default_value_t = 5)]
        runs: u64,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> CliResult {
    let cfg = match &cli.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => ScenarioConfig::default(),
    };
    let table = match &cli.coast_down {
        Some(path) => CoastDownTable::from_path(path)?,
        None => CoastDownTable::default(),
    };
    fs::create_dir_all(&cli.out_dir)?;
    match cli.command {
        Command::Demo4 { h1_s } => demo4(&cfg, &table, h1_s, &cli.out_dir),
        Command::Mc(args) => batch(cfg, &table, args, BatchMode::Nominal, &cli.out_dir),
        Command::FaultMc(mut args) => {
            args.runs.get_or_insert(100);
            batch(cfg, &table, args, BatchMode::Fault, &cli.out_dir)
        }
        Command::Tuning { kappa_min, kappa_max, points } => {
            tuning(&cfg, kappa_min, kappa_max, points, &cli.out_dir)
        }
        Command::Verify { problems, runs, seed } => {
            verify(&cfg, &table, problems, runs, seed.unwrap_or(cfg.run.seed))
        }
    }
}

fn demo4(cfg: &ScenarioConfig, table: &CoastDownTable, h1_s: f64, out: &Path) -> CliResult {
    let scenario = four_vehicle_scenario(cfg, table, h1_s);
    let dir = out.join("demo4");
    fs::create_dir_all(&dir)?;
    let mut gridlock = false;
    println!("controller  order        min_speed  min_accel  max_accel  h0_min");
    for kind in ControllerKind::ALL {
        let (log, report) = run_one(cfg, &scenario, kind)?;
        log.write_csv(BufWriter::new(fs::File::create(dir.join(format!("{kind}.csv")))?))?;
        let mut crossings = flow_metrics(&log.steps).crossings;
        crossings.sort_by(|a, b| a.1.total_cmp(&b.1));
        let order: Vec<&str> = crossings.iter().map(|c| four_vehicle_labels(c.0)).collect();
        let records = || log.steps.iter().flat_map(|s| &s.records);
        let v_min = records().map(|r| r.speed).fold(f64::INFINITY, f64::min);
        let a_min = records().map(|r| r.accel).fold(f64::INFINITY, f64::min);
        let a_max = records().map(|r| r.accel).fold(f64::NEG_INFINITY, f64::max);
        println!(
            "{:<10}  {:<11}  {v_min:>9.3}  {a_min:>9.3}  {a_max:>9.3}  {:.3}",
            kind.as_str(),
            order.join("-"),
            report.h0_min_m2
        );
        gridlock |= report.gridlock;
    }
    Ok(exit_for_gridlock(gridlock))
}

fn batch(
    mut cfg: ScenarioConfig,
    table: &CoastDownTable,
    args: BatchArgs,
    mode: BatchMode,
    out: &Path,
) -> CliResult {
    if let Some(runs) = args.runs {
        cfg.run.runs = runs;
    }
    if let Some(seed) = args.seed {
        cfg.run.seed = seed;
    }
    let mut controllers = args.controllers;
    controllers.sort();
    controllers.dedup();
    let summary = run_batch(&cfg, table, &controllers, mode, Some(out))?;
    emit_histograms(&summary, out, args.bins)?;
    print_summary(&summary);
    Ok(exit_for_gridlock(summary.gridlock_runs() > 0))
}

fn print_summary(summary: &BatchSummary) {
    println!("{} runs, seed {}", summary.runs.len(), summary.seed);
    for (kind, agg) in &summary.aggregates {
        println!(
            "{kind}: collision runs {}, infeasible flags {}, gridlock runs {}",
            agg.collision_runs, agg.infeasible_flags, agg.gridlock_runs
        );
        for m in METRICS {
            let s = agg.metrics[m];
            let pct = summary
                .percent_vs_fifo
                .get(kind)
                .map(|p| format!("  ({:+.1}% vs fifo)", p[m]))
                .unwrap_or_default();
            println!("  {m:<14} {:>10.3} ± {:<8.3}{pct}", s.mean, s.std);
        }
    }
}

fn exit_for_gridlock(gridlock: bool) -> ExitCode {
    if gridlock {
        eprintln!("gridlock detected");
        ExitCode::from(2)
    } else {
        ExitCode::SUCCESS
    }
}

fn tuning(cfg: &ScenarioConfig, kappa_min: f64, kappa_max: f64, points: usize, out: &Path) -> CliResult {
    if !(kappa_min > 0.0 && kappa_max >= kappa_min && points >= 2) {
        return Err("need 0 < kappa_min <= kappa_max and at least two points".into());
    }
    let t = &cfg.traffic;
    let speed = 0.5 * (t.speed_min_mps + t.speed_max_mps);
    let radius = 0.5 * (t.radius_min_m + t.radius_max_m);
    let d = 2.0 * (1.0 + cfg.dpc_cbf.beta) * radius;
    let ratio = (kappa_max / kappa_min).ln() / (points - 1) as f64;
    let kappas: Vec<f64> = (0..points).map(|k| kappa_min * (ratio * k as f64).exp()).collect();
    let rows = kappa_table(cfg.network().merge_angle_rad, [speed, speed], d, &kappas)?;
    let path = out.join("tuning.csv");
    write_kappa_csv(&rows, BufWriter::new(fs::File::create(&path)?))?;
    println!("|v0| = {:.3} m/s, D = {d:.3} m, bound |v0|/D = {:.3} 1/s", speed * 2f64.sqrt(), speed * 2f64.sqrt() / d);
    println!("wrote {} rows to {}", rows.len(), path.display());
    Ok(ExitCode::SUCCESS)
}

fn verify(cfg: &ScenarioConfig, table: &CoastDownTable, problems: usize, runs: u64, seed: u64) -> CliResult {
    let mut ok = true;
    let rep = qp_suite(&mut run_rng(seed, 0), problems);
    let pass = rep.passed(1e-7, 1e-8);
    ok &= pass;
    println!(
        "[{}] qp oracle: {} problems, {} optimal, {} infeasible, {} mismatches, max error {:e}, max kkt {:e}",
        mark(pass),
        rep.problems,
        rep.optimal,
        rep.infeasible,
        rep.status_mismatches,
        rep.max_error,
        rep.max_kkt
    );
    let (gap, contested) = closed_form_gap();
    let pass = gap <= 1e-9 && contested > 0;
    ok &= pass;
    println!("[{}] two-vehicle closed form: {contested} contested states, max gap {gap:e}", mark(pass));
    for check in invariant_suite(cfg, table, runs)? {
        ok &= check.passed;
        println!("[{}] {} {}", mark(check.passed), check.name, check.detail);
    }
    Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

fn mark(pass: bool) -> &'static str {
    if pass {
        "PASS"
    } else {
        "FAIL"
    }
}
