//! Command-line entry points: dataset ingestion and synthesis, training,
//! evaluation, and the solver/theory check suites. All heavy lifting lives
//! in the library; this binary parses arguments, wires files, and reports.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hexfleet::agent::{
    evaluate, pdrsac_train, train_log_row, AblationFlags, EvalPolicy, TRAIN_LOG_HEADER,
};
use hexfleet::config::{ConfigError, RunConfig};
use hexfleet::env::{build_candidates, initial_state};
use hexfleet::neural::{load_checkpoint, save_checkpoint};
use hexfleet::projection::{build_instance, checks, dump_lp_format, Intention};
use hexfleet::scenario::{
    ingest_trips, load_dataset_file, parse_trip_csv, sample_orders, save_dataset_file,
    subsample_trips, synth_scenario, ScenarioDataset,
};
use hexfleet::theory;

#[derive(Parser)]
#[command(
    name = "hexfleet",
    version,
    about = "Hex-grid EV fleet control: simulate, project, train, evaluate"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 7)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Rollout/update worker threads.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the projection wall-clock budget in seconds.
    #[arg(long, global = true)]
    milp_time_limit: Option<f64>,
    /// Write the first projection instance of the run in CPLEX-LP format.
    #[arg(long, global = true)]
    dump_lp: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate a trip CSV (`pickup_step,origin_hex,dest_hex,duration_min`)
    /// into a dataset binary.
    Ingest {
        #[arg(long)]
        csv: PathBuf,
        /// Keep each trip independently with this probability.
        #[arg(long)]
        subsample: Option<f64>,
    },
    /// Generate a synthetic dataset from the config's scenario section.
    Synth,
    /// Train the robust agent (or an ablation) on a dataset.
    Train {
        /// Dataset binary; synthesized from the config when omitted.
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// Comma-separated: no_milp, no_wdro, identity_metric.
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
    },
    /// Evaluate a policy on a dataset: metrics, traces, feeder series.
    Evaluate {
        #[arg(long)]
        dataset: Option<PathBuf>,
        /// `greedy` or a checkpoint directory.
        #[arg(long, default_value = "greedy")]
        policy: String,
        #[arg(long, value_delimiter = ',')]
        ablate: Vec<String>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Branch-and-bound vs exhaustive-enumeration agreement on random micro
    /// instances.
    OracleCheck {
        #[arg(long, default_value_t = 200)]
        trials: usize,
    },
    /// Numerical suites for the contraction, Lipschitz-bound, and no-regret
    /// guarantees.
    TheoryCheck,
}

fn parse_flags(ablate: &[String]) -> Result<AblationFlags, String> {
    let mut flags = AblationFlags::default();
    for a in ablate {
        match a.trim() {
            "" => {}
            "no_milp" => flags.no_milp = true,
            "no_wdro" => flags.no_wdro = true,
            "identity_metric" => flags.identity_metric = true,
            other => return Err(format!("unknown ablation `{}`", other)),
        }
    }
    Ok(flags)
}

fn load_config(path: &Option<PathBuf>) -> Result<RunConfig, ConfigError> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn load_or_synth_dataset(
    config: &RunConfig,
    dataset: &Option<PathBuf>,
    seed: u64,
) -> Result<ScenarioDataset, String> {
    match dataset {
        Some(path) => load_dataset_file(path).map_err(|e| e.to_string()),
        None => {
            let grid = config.build_grid().map_err(|e| e.to_string())?;
            let mut ds = synth_scenario(&grid, &config.synth_config(seed));
            ds.fare_params = config.env_params().fare;
            Ok(ds)
        }
    }
}

fn write_lp_dump(
    config: &RunConfig,
    dataset: &ScenarioDataset,
    seed: u64,
    path: &Path,
) -> Result<(), String> {
    let grid = config.build_grid().map_err(|e| e.to_string())?;
    let env_params = config.env_params();
    let fleet = config.fleet_config();
    let mut state = initial_state(&grid, &fleet, &env_params, &dataset.fields[0], seed);
    state.open_orders = sample_orders(&dataset.fields[0], 0, seed);
    let candidates = build_candidates(&state, &grid, &dataset.fields[0], &env_params);
    let intention = Intention::uniform(&candidates, 0.5 * fleet.station_p_max_kw);
    let instance = build_instance(&state, &intention, &candidates, config.projection.mu, &env_params);
    std::fs::write(path, dump_lp_format(&instance)).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> Result<(), (u8, String)> {
    let mut config = load_config(&cli.config).map_err(|e| (2u8, e.to_string()))?;
    if let Some(tau) = cli.milp_time_limit {
        config.projection.milp_time_limit_s = tau;
    }
    if let Some(n) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| (3u8, e.to_string()))?;
    }
    std::fs::create_dir_all(&cli.out).map_err(|e| (3u8, e.to_string()))?;

    match cli.command {
        Command::Ingest { csv, subsample } => {
            let grid = config.build_grid().map_err(|e| (2, e.to_string()))?;
            let file = std::fs::File::open(&csv).map_err(|e| (3, e.to_string()))?;
            let mut rows =
                parse_trip_csv(file, config.scenario.dt_min).map_err(|e| (3, e.to_string()))?;
            if let Some(rate) = subsample {
                rows = subsample_trips(&rows, rate, cli.seed);
            }
            let (mut dataset, report) = ingest_trips(rows, &grid, config.scenario.dt_min);
            dataset.fare_params = config.env_params().fare;
            let path = cli.out.join("dataset.bin");
            save_dataset_file(&dataset, &path).map_err(|e| (3, e.to_string()))?;
            println!(
                "ingested {} rows ({} skipped, {} kept) into horizon {} -> {}",
                report.rows_read,
                report.rows_skipped,
                report.trips_kept,
                dataset.horizon(),
                path.display()
            );
            Ok(())
        }
        Command::Synth => {
            let grid = config.build_grid().map_err(|e| (2, e.to_string()))?;
            let mut dataset = synth_scenario(&grid, &config.synth_config(cli.seed));
            dataset.fare_params = config.env_params().fare;
            let path = cli.out.join("dataset.bin");
            save_dataset_file(&dataset, &path).map_err(|e| (3, e.to_string()))?;
            println!(
                "synthesized horizon {} on {} hexes -> {}",
                dataset.horizon(),
                dataset.m(),
                path.display()
            );
            Ok(())
        }
        Command::Train { dataset, ablate } => {
            let flags = parse_flags(&ablate).map_err(|e| (2, e))?;
            let dataset = load_or_synth_dataset(&config, &dataset, cli.seed).map_err(|e| (3, e))?;
            if let Some(lp_path) = &cli.dump_lp {
                write_lp_dump(&config, &dataset, cli.seed, lp_path).map_err(|e| (3, e))?;
            }
            let grid = config.build_grid().map_err(|e| (2, e.to_string()))?;
            let artifacts = pdrsac_train(
                &grid,
                &dataset,
                &config.fleet_config(),
                &config.env_params(),
                &config.train_config(),
                flags,
                cli.seed,
            );
            let mut log = String::from(TRAIN_LOG_HEADER);
            log.push('\n');
            for row in &artifacts.log {
                log.push_str(&train_log_row(row));
                log.push('\n');
            }
            std::fs::write(cli.out.join("train_log.csv"), log).map_err(|e| (3, e.to_string()))?;
            let ckpt = cli.out.join("checkpoint");
            save_checkpoint(&artifacts.params, &ckpt, artifacts.log.len() as u64)
                .map_err(|e| (3, e.to_string()))?;
            let mut returns = String::from("episode,return\n");
            for (i, r) in artifacts.episode_returns.iter().enumerate() {
                returns.push_str(&format!("{},{:.6}\n", i, r));
            }
            std::fs::write(cli.out.join("episode_returns.csv"), returns)
                .map_err(|e| (3, e.to_string()))?;
            println!(
                "trained {} steps over {} episodes; checkpoint -> {}",
                artifacts.log.len(),
                artifacts.episode_returns.len(),
                ckpt.display()
            );
            if let Some(reason) = artifacts.aborted {
                return Err((3, format!("training aborted: {}", reason)));
            }
            Ok(())
        }
        Command::Evaluate { dataset, policy, ablate, episodes } => {
            let flags = parse_flags(&ablate).map_err(|e| (2, e))?;
            let dataset = load_or_synth_dataset(&config, &dataset, cli.seed).map_err(|e| (3, e))?;
            if let Some(lp_path) = &cli.dump_lp {
                write_lp_dump(&config, &dataset, cli.seed, lp_path).map_err(|e| (3, e))?;
            }
            let grid = config.build_grid().map_err(|e| (2, e.to_string()))?;
            let episodes = episodes.unwrap_or(config.agent.eval_episodes);
            let loaded;
            let eval_policy = if policy == "greedy" {
                EvalPolicy::Greedy { max_pickup_hops: config.agent.greedy_pickup_hops }
            } else {
                loaded = load_checkpoint(Path::new(&policy)).map_err(|e| (3, e.to_string()))?;
                EvalPolicy::Trained {
                    params: &loaded.0,
                    no_milp: flags.no_milp,
                    mu: config.projection.mu,
                    tau_max_s: config.projection.milp_time_limit_s,
                }
            };
            let output = evaluate(
                &eval_policy,
                &grid,
                &dataset,
                &config.fleet_config(),
                &config.env_params(),
                episodes,
                config.agent.steps_per_episode,
                cli.seed,
            );
            std::fs::write(cli.out.join("trace.csv"), &output.trace_csv)
                .map_err(|e| (3, e.to_string()))?;
            std::fs::write(cli.out.join("breakdown.csv"), &output.breakdown_csv)
                .map_err(|e| (3, e.to_string()))?;
            let mut feeder = String::from("step,total_kw\n");
            for (i, kw) in output.feeder_series.iter().enumerate() {
                feeder.push_str(&format!("{},{:.6}\n", i, kw));
            }
            std::fs::write(cli.out.join("feeder.csv"), feeder).map_err(|e| (3, e.to_string()))?;
            let m = &output.metrics;
            let metrics_csv = format!(
                "net_profit,revenue,driving_cost,charging_cost,penalties,served,dropped,mean_wait,violation_steps,peak_kw\n{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{:.6},{},{:.6}\n",
                m.net_profit,
                m.revenue,
                m.driving_cost,
                m.charging_cost,
                m.penalties,
                m.served,
                m.dropped,
                m.mean_wait_steps,
                m.violation_steps,
                m.peak_power_kw
            );
            std::fs::write(cli.out.join("metrics.csv"), metrics_csv)
                .map_err(|e| (3, e.to_string()))?;
            println!(
                "net profit {:.2} (revenue {:.2}, driving {:.2}, charging {:.2}) served {} dropped {} violations {} peak {:.1} kW",
                m.net_profit,
                m.revenue,
                m.driving_cost,
                m.charging_cost,
                m.served,
                m.dropped,
                m.violation_steps,
                m.peak_power_kw
            );
            Ok(())
        }
        Command::OracleCheck { trials } => {
            let result = checks::oracle_equivalence_trials(trials, cli.seed, false);
            println!(
                "oracle-check: {} trials, worst gap {:.2e}, proofs {}: {}",
                result.trials,
                result.worst_gap,
                if result.all_optimal { "all closed" } else { "INCOMPLETE" },
                if result.pass { "PASS" } else { "FAIL" }
            );
            if result.pass {
                Ok(())
            } else {
                Err((3, "oracle equivalence failed".into()))
            }
        }
        Command::TheoryCheck => {
            let c1 = theory::theorem1_contraction(100, cli.seed);
            println!(
                "contraction: {} trials, worst excess {:.2e}: {}",
                c1.trials,
                c1.worst_excess,
                if c1.pass { "PASS" } else { "FAIL" }
            );
            let c2 = theory::theorem2_kr_bound(50, cli.seed);
            println!(
                "kr-bound: {} trials, worst slack {:.2e}: {}",
                c2.trials,
                c2.worst_slack,
                if c2.pass { "PASS" } else { "FAIL" }
            );
            let c3 = theory::theorem3_no_regret(cli.seed);
            println!(
                "no-regret: averages {:?}, bound {:.3}: {}",
                c3.window_averages,
                0.1 * c3.g_bound,
                if c3.pass { "PASS" } else { "FAIL" }
            );
            if c1.pass && c2.pass && c3.pass {
                Ok(())
            } else {
                Err((3, "theory checks failed".into()))
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, message)) => {
            eprintln!("error: {}", message);
            ExitCode::from(code)
        }
    }
}
